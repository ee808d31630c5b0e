//! Hermitian metrics, (1,1) tensors and (p,q) forms sampled on the grid.
//!
//! A (1,1) tensor stores `t_{k lbar}` in component `k * n + l`. Raised
//! tensors store `t^{a bbar}` the same way, so `g^{a bbar} g_{c bbar} =
//! delta^a_c`; as a matrix this is the transpose of the inverse of `g`.

use std::ops::Deref;

use num_complex::Complex64 as C64;

use crate::error::{PcfError, Result};
use crate::grid::{ComplexTorusGrid, ScalarField};
use crate::par;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Small n x n complex matrix (n <= 2) at one site.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SiteMat {
    pub n: usize,
    pub a: [[C64; 2]; 2],
}

impl SiteMat {
    pub fn zeros(n: usize) -> Self {
        SiteMat { n, a: [[ZERO; 2]; 2] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for k in 0..n {
            m.a[k][k] = C64::new(1.0, 0.0);
        }
        m
    }

    pub fn det(&self) -> C64 {
        if self.n == 1 {
            self.a[0][0]
        } else {
            self.a[0][0] * self.a[1][1] - self.a[0][1] * self.a[1][0]
        }
    }

    /// Plain matrix inverse.
    pub fn inverse(&self) -> SiteMat {
        let d = self.det();
        let mut m = Self::zeros(self.n);
        if self.n == 1 {
            m.a[0][0] = 1.0 / d;
        } else {
            m.a[0][0] = self.a[1][1] / d;
            m.a[1][1] = self.a[0][0] / d;
            m.a[0][1] = -self.a[0][1] / d;
            m.a[1][0] = -self.a[1][0] / d;
        }
        m
    }

    pub fn transpose(&self) -> SiteMat {
        let mut m = *self;
        for i in 0..self.n {
            for j in 0..self.n {
                m.a[i][j] = self.a[j][i];
            }
        }
        m
    }

    /// `g^{a bbar}` for `g_{a bbar}` stored in `a[a][b]`.
    pub fn raised(&self) -> SiteMat {
        self.inverse().transpose()
    }

    pub fn mul(&self, o: &SiteMat) -> SiteMat {
        let mut m = Self::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                for k in 0..self.n {
                    m.a[i][j] += self.a[i][k] * o.a[k][j];
                }
            }
        }
        m
    }

    pub fn trace(&self) -> C64 {
        (0..self.n).map(|k| self.a[k][k]).sum()
    }

    /// Eigenvalues (ascending) of the Hermitian part.
    pub fn herm_eigs(&self) -> (f64, f64) {
        if self.n == 1 {
            let v = self.a[0][0].re;
            return (v, v);
        }
        let p = self.a[0][0].re;
        let q = self.a[1][1].re;
        let off = 0.5 * (self.a[0][1] + self.a[1][0].conj());
        let m = 0.5 * (p + q);
        let r = (0.25 * (p - q) * (p - q) + off.norm_sqr()).sqrt();
        (m - r, m + r)
    }

    pub fn max_abs(&self) -> f64 {
        let mut r = 0.0_f64;
        for i in 0..self.n {
            for j in 0..self.n {
                r = r.max(self.a[i][j].norm());
            }
        }
        r
    }
}

/// Complex (1,1) tensor field `t_{k lbar}` (Hermitian when real).
#[derive(Debug, Clone)]
pub struct Tensor11 {
    pub grid: ComplexTorusGrid,
    pub n: usize,
    pub comps: Vec<Vec<C64>>,
}

impl Tensor11 {
    pub fn zeros(grid: &ComplexTorusGrid) -> Self {
        let n = grid.n_complex();
        Tensor11 {
            grid: grid.clone(),
            n,
            comps: vec![vec![ZERO; grid.sites()]; n * n],
        }
    }

    pub fn identity(grid: &ComplexTorusGrid) -> Self {
        Self::constant(grid, &SiteMat::identity(grid.n_complex()))
    }

    pub fn constant(grid: &ComplexTorusGrid, m: &SiteMat) -> Self {
        let n = grid.n_complex();
        let mut t = Self::zeros(grid);
        for k in 0..n {
            for l in 0..n {
                t.comps[k * n + l] = vec![m.a[k][l]; grid.sites()];
            }
        }
        t
    }

    pub fn from_site_fn<F>(grid: &ComplexTorusGrid, f: F) -> Self
    where
        F: Fn(usize) -> SiteMat + Sync + Send,
    {
        let n = grid.n_complex();
        let mats = par::map(grid.sites(), f);
        let mut comps = vec![Vec::with_capacity(grid.sites()); n * n];
        for m in &mats {
            for k in 0..n {
                for l in 0..n {
                    comps[k * n + l].push(m.a[k][l]);
                }
            }
        }
        Tensor11 {
            grid: grid.clone(),
            n,
            comps,
        }
    }

    #[inline]
    pub fn at(&self, s: usize) -> SiteMat {
        let mut m = SiteMat::zeros(self.n);
        for k in 0..self.n {
            for l in 0..self.n {
                m.a[k][l] = self.comps[k * self.n + l][s];
            }
        }
        m
    }

    #[inline]
    pub fn get(&self, k: usize, l: usize, s: usize) -> C64 {
        self.comps[k * self.n + l][s]
    }

    pub fn comp(&self, k: usize, l: usize) -> &[C64] {
        &self.comps[k * self.n + l]
    }

    pub fn max_abs(&self) -> f64 {
        self.comps
            .iter()
            .map(|c| par::max(c.len(), |s| c[s].norm()))
            .fold(0.0, f64::max)
    }

    /// sup |t - u| over sites and components.
    pub fn max_diff(&self, o: &Tensor11) -> f64 {
        self.comps
            .iter()
            .zip(&o.comps)
            .map(|(a, b)| par::max(a.len(), |s| (a[s] - b[s]).norm()))
            .fold(0.0, f64::max)
    }

    /// sup |t_{k lbar} - conj(t_{l kbar})|.
    pub fn hermitian_defect(&self) -> f64 {
        let n = self.n;
        let mut r = 0.0_f64;
        for k in 0..n {
            for l in k..n {
                let a = &self.comps[k * n + l];
                let b = &self.comps[l * n + k];
                r = r.max(par::max(a.len(), |s| (a[s] - b[s].conj()).norm()));
            }
        }
        r
    }

    /// Replace by the Hermitian part (t + t^*)/2.
    pub fn hermitize(&mut self) {
        let n = self.n;
        for k in 0..n {
            for l in k..n {
                if k == l {
                    for v in self.comps[k * n + k].iter_mut() {
                        v.im = 0.0;
                    }
                } else {
                    let (a, b) = (k * n + l, l * n + k);
                    // exact pairs are left alone so reloading a field keeps its bits
                    let (lo, hi) = self.comps.split_at_mut(b);
                    for (x, y) in lo[a].iter_mut().zip(hi[0].iter_mut()) {
                        if *x != y.conj() {
                            *x = 0.5 * (*x + y.conj());
                            *y = x.conj();
                        }
                    }
                }
            }
        }
    }

    pub fn scale(&self, c: f64) -> Tensor11 {
        self.map_comps(|v| v * c)
    }

    pub fn map_comps<F: Fn(C64) -> C64 + Sync + Send>(&self, f: F) -> Tensor11 {
        Tensor11 {
            grid: self.grid.clone(),
            n: self.n,
            comps: self
                .comps
                .iter()
                .map(|c| par::map(c.len(), |s| f(c[s])))
                .collect(),
        }
    }

    /// self + c * o
    pub fn axpy(&self, c: f64, o: &Tensor11) -> Tensor11 {
        Tensor11 {
            grid: self.grid.clone(),
            n: self.n,
            comps: self
                .comps
                .iter()
                .zip(&o.comps)
                .map(|(a, b)| par::map(a.len(), |s| a[s] + c * b[s]))
                .collect(),
        }
    }

    /// Multiply pointwise by a real scalar field.
    pub fn mul_scalar(&self, f: &[f64]) -> Tensor11 {
        Tensor11 {
            grid: self.grid.clone(),
            n: self.n,
            comps: self
                .comps
                .iter()
                .map(|a| par::map(a.len(), |s| a[s] * f[s]))
                .collect(),
        }
    }
}

/// Hermitian positive definite metric `g_{k lbar}`.
#[derive(Debug, Clone)]
pub struct MetricField(Tensor11);

impl Deref for MetricField {
    type Target = Tensor11;
    fn deref(&self) -> &Tensor11 {
        &self.0
    }
}

/// Relative Hermitian defect tolerated before a metric is rejected.
const HERMITIAN_TOL: f64 = 1e-9;

impl MetricField {
    /// Validate and take ownership. Round-off asymmetry is projected away;
    /// anything larger is an error, as is a non-positive site.
    pub fn new(mut t: Tensor11) -> Result<Self> {
        let scale = t.max_abs().max(1.0);
        let defect = t.hermitian_defect();
        if !(defect <= HERMITIAN_TOL * scale) {
            return Err(PcfError::Invalid(format!(
                "metric is not Hermitian (defect {defect:e})"
            )));
        }
        t.hermitize();
        let (site, eig) = min_eigenvalue(&t);
        if !(eig > 0.0) {
            return Err(PcfError::NotPositive { site, eig });
        }
        Ok(MetricField(t))
    }

    pub fn identity(grid: &ComplexTorusGrid) -> Self {
        MetricField(Tensor11::identity(grid))
    }

    pub fn tensor(&self) -> &Tensor11 {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor11 {
        self.0
    }

    /// Global (min, max) eigenvalue over all sites.
    pub fn eig_range(&self) -> (f64, f64) {
        let lo = par::min(self.grid.sites(), |s| self.at(s).herm_eigs().0);
        let hi = par::max(self.grid.sites(), |s| self.at(s).herm_eigs().1);
        (lo, hi)
    }
}

/// Site and value of the smallest Hermitian eigenvalue.
pub fn min_eigenvalue(t: &Tensor11) -> (usize, f64) {
    let eigs = par::map(t.grid.sites(), |s| t.at(s).herm_eigs().0);
    let mut best = (0, f64::INFINITY);
    for (s, &e) in eigs.iter().enumerate() {
        if e < best.1 || e.is_nan() {
            best = (s, e);
            if e.is_nan() {
                break;
            }
        }
    }
    best
}

/// Complex tensor field with p holomorphic and q antiholomorphic lower
/// indices. Components are flattened base-n with holomorphic indices first.
#[derive(Debug, Clone)]
pub struct FormField {
    pub grid: ComplexTorusGrid,
    pub n: usize,
    pub p: usize,
    pub q: usize,
    /// antisymmetric within each index group
    pub antisymmetric: bool,
    pub comps: Vec<Vec<C64>>,
}

impl FormField {
    pub fn zeros(grid: &ComplexTorusGrid, p: usize, q: usize, antisymmetric: bool) -> Self {
        let n = grid.n_complex();
        FormField {
            grid: grid.clone(),
            n,
            p,
            q,
            antisymmetric,
            comps: vec![vec![ZERO; grid.sites()]; n.pow((p + q) as u32)],
        }
    }

    pub fn index(&self, holo: &[usize], anti: &[usize]) -> usize {
        holo.iter()
            .chain(anti)
            .fold(0, |acc, &i| acc * self.n + i)
    }

    pub fn comp(&self, holo: &[usize], anti: &[usize]) -> &[C64] {
        &self.comps[self.index(holo, anti)]
    }

    pub fn rank(&self) -> usize {
        self.p + self.q
    }

    /// Multi-index of a flat component number.
    pub fn multi_index(&self, mut c: usize) -> Vec<usize> {
        let r = self.rank();
        let mut idx = vec![0; r];
        for slot in (0..r).rev() {
            idx[slot] = c % self.n;
            c /= self.n;
        }
        idx
    }

    pub fn max_abs(&self) -> f64 {
        self.comps
            .iter()
            .map(|c| par::max(c.len(), |s| c[s].norm()))
            .fold(0.0, f64::max)
    }

    /// sup of the antisymmetry defect within each index group.
    pub fn antisymmetry_defect(&self) -> f64 {
        let mut r = 0.0_f64;
        for c in 0..self.comps.len() {
            let idx = self.multi_index(c);
            for (lo, len) in [(0, self.p), (self.p, self.q)] {
                for a in lo..lo + len {
                    for b in a + 1..lo + len {
                        let mut sw = idx.clone();
                        sw.swap(a, b);
                        let o = sw.iter().fold(0, |acc, &i| acc * self.n + i);
                        let (x, y) = (&self.comps[c], &self.comps[o]);
                        r = r.max(par::max(x.len(), |s| (x[s] + y[s]).norm()));
                    }
                }
            }
        }
        r
    }
}

/// Real tensor field over the 2n real axes, components flattened base 2n.
#[derive(Debug, Clone)]
pub struct RealTensorField {
    pub grid: ComplexTorusGrid,
    pub dim: usize,
    pub rank: usize,
    pub comps: Vec<Vec<f64>>,
}

impl RealTensorField {
    pub fn zeros(grid: &ComplexTorusGrid, rank: usize) -> Self {
        let dim = grid.real_dim();
        RealTensorField {
            grid: grid.clone(),
            dim,
            rank,
            comps: vec![vec![0.0; grid.sites()]; dim.pow(rank as u32)],
        }
    }

    pub fn index(&self, idx: &[usize]) -> usize {
        idx.iter().fold(0, |acc, &i| acc * self.dim + i)
    }

    pub fn comp(&self, idx: &[usize]) -> &[f64] {
        &self.comps[self.index(idx)]
    }

    pub fn max_abs(&self) -> f64 {
        self.comps
            .iter()
            .map(|c| par::max(c.len(), |s| c[s].abs()))
            .fold(0.0, f64::max)
    }

    pub fn max_diff(&self, o: &RealTensorField) -> f64 {
        self.comps
            .iter()
            .zip(&o.comps)
            .map(|(a, b)| par::max(a.len(), |s| (a[s] - b[s]).abs()))
            .fold(0.0, f64::max)
    }

    /// self + c * o
    pub fn axpy(&self, c: f64, o: &RealTensorField) -> RealTensorField {
        RealTensorField {
            grid: self.grid.clone(),
            dim: self.dim,
            rank: self.rank,
            comps: self
                .comps
                .iter()
                .zip(&o.comps)
                .map(|(a, b)| par::map(a.len(), |s| a[s] + c * b[s]))
                .collect(),
        }
    }

    /// sup |t_ab - t_ba| for rank 2.
    pub fn symmetry_defect(&self) -> f64 {
        let mut r = 0.0_f64;
        for a in 0..self.dim {
            for b in a + 1..self.dim {
                let (x, y) = (self.comp(&[a, b]), self.comp(&[b, a]));
                r = r.max(par::max(x.len(), |s| (x[s] - y[s]).abs()));
            }
        }
        r
    }
}

/// Real metric at a site: g_real(x_i, x_j) = g_real(y_i, y_j) = 2 Re g_{i jbar},
/// g_real(x_i, y_j) = 2 Im g_{i jbar}, g_real(y_i, x_j) = -2 Im g_{i jbar}.
pub fn real_metric_site(m: &SiteMat) -> [[f64; 4]; 4] {
    let mut r = [[0.0; 4]; 4];
    for i in 0..m.n {
        for j in 0..m.n {
            let v = m.a[i][j];
            r[2 * i][2 * j] = 2.0 * v.re;
            r[2 * i + 1][2 * j + 1] = 2.0 * v.re;
            r[2 * i][2 * j + 1] = 2.0 * v.im;
            r[2 * i + 1][2 * j] = -2.0 * v.im;
        }
    }
    r
}

/// Complex structure: J e_{x_i} = e_{y_i}, J e_{y_i} = -e_{x_i}.
/// Returns (b, sign) with J e_a = sign * e_b.
#[inline]
pub fn j_image(a: usize) -> (usize, f64) {
    if a % 2 == 0 {
        (a + 1, 1.0)
    } else {
        (a - 1, -1.0)
    }
}

pub fn metric_inverse(g: &MetricField) -> Tensor11 {
    Tensor11::from_site_fn(&g.grid, |s| g.at(s).raised())
}

pub fn log_det(g: &MetricField) -> ScalarField {
    ScalarField {
        grid: g.grid.clone(),
        values: par::map(g.grid.sites(), |s| C64::new(g.at(s).det().re.ln(), 0.0)),
    }
}

/// `tr_a b = a^{k lbar} b_{k lbar}`.
pub fn trace_pair(a: &MetricField, b: &Tensor11) -> Result<ScalarField> {
    if a.grid != b.grid {
        return Err(PcfError::GridMismatch);
    }
    let n = a.n;
    let values = par::map(a.grid.sites(), |s| {
        let ai = a.at(s).raised();
        let bs = b.at(s);
        let mut t = ZERO;
        for k in 0..n {
            for l in 0..n {
                t += ai.a[k][l] * bs.a[k][l];
            }
        }
        C64::new(t.re, 0.0)
    });
    Ok(ScalarField {
        grid: a.grid.clone(),
        values,
    })
}

/// Volume density `det(g_real)^{1/2} = 2^n det g` at each site.
pub fn volume_density(g: &MetricField) -> Vec<f64> {
    let f = (1u32 << g.n) as f64;
    par::map(g.grid.sites(), |s| f * g.at(s).det().re)
}

/// `int s dV_g` as a Riemann sum (spectrally accurate for periodic data).
pub fn volume_form_integral(g: &MetricField, s: &[f64]) -> f64 {
    let f = (1u32 << g.n) as f64;
    let cell = g.grid.cell_volume();
    cell * par::sum(g.grid.sites(), |i| s[i] * f * g.at(i).det().re)
}

/// Raw contraction `|t|^2` with every index contracted through `g^{a bbar}`.
pub fn tensor_norm_sq(t: &FormField, g: &MetricField) -> Result<ScalarField> {
    if t.grid != g.grid {
        return Err(PcfError::GridMismatch);
    }
    if t.n != g.n {
        return Err(PcfError::Signature(format!(
            "form over n = {}, metric over n = {}",
            t.n, g.n
        )));
    }
    let r = t.rank();
    let p = t.p;
    let ncomp = t.comps.len();
    let idx: Vec<Vec<usize>> = (0..ncomp).map(|c| t.multi_index(c)).collect();
    let values = par::map(g.grid.sites(), |s| {
        let gi = g.at(s).raised();
        let mut acc = ZERO;
        for (c1, i1) in idx.iter().enumerate() {
            let v1 = t.comps[c1][s];
            if v1 == ZERO {
                continue;
            }
            for (c2, i2) in idx.iter().enumerate() {
                let v2 = t.comps[c2][s];
                if v2 == ZERO {
                    continue;
                }
                let mut w = C64::new(1.0, 0.0);
                for slot in 0..r {
                    w *= if slot < p {
                        gi.a[i1[slot]][i2[slot]]
                    } else {
                        gi.a[i2[slot]][i1[slot]]
                    };
                }
                acc += w * v1 * v2.conj();
            }
        }
        C64::new(acc.re, 0.0)
    });
    Ok(ScalarField {
        grid: g.grid.clone(),
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{make_grid, DerivativeMode};
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn herm(a: f64, b: f64, re: f64, im: f64) -> SiteMat {
        SiteMat {
            n: 2,
            a: [[c(a, 0.0), c(re, im)], [c(re, -im), c(b, 0.0)]],
        }
    }

    #[test]
    fn inverse_examples() {
        let g = make_grid(2, 8, DerivativeMode::Spectral).unwrap();
        let id = MetricField::identity(&g);
        let inv = metric_inverse(&id);
        assert!(inv.max_diff(&Tensor11::identity(&g)) < 1e-15);
        let d = MetricField::new(Tensor11::constant(&g, &herm(2.0, 1.0, 0.0, 0.0))).unwrap();
        let inv = metric_inverse(&d).at(0);
        assert!((inv.a[0][0] - 0.5).norm() < 1e-15 && (inv.a[1][1] - 1.0).norm() < 1e-15);
    }

    #[test]
    fn raised_contracts_to_identity() {
        // one-site oracle: g^{i kbar} g_{j kbar} = delta
        let m = herm(1.3, 0.7, 0.2, -0.35);
        let r = m.raised();
        for i in 0..2 {
            for j in 0..2 {
                let s: C64 = (0..2).map(|k| r.a[i][k] * m.a[j][k]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((s - want).norm() < 1e-13);
            }
        }
    }

    #[test]
    fn rejects_non_positive() {
        let g = make_grid(2, 8, DerivativeMode::Spectral).unwrap();
        let bad = Tensor11::constant(&g, &herm(1.0, 1.0, 2.0, 0.0));
        match MetricField::new(bad) {
            Err(PcfError::NotPositive { eig, .. }) => assert!((eig + 1.0).abs() < 1e-12),
            other => panic!("{other:?}"),
        }
        let nonherm = Tensor11::constant(
            &g,
            &SiteMat {
                n: 2,
                a: [[c(1.0, 0.0), c(0.1, 0.0)], [c(0.0, 0.0), c(1.0, 0.0)]],
            },
        );
        assert!(MetricField::new(nonherm).is_err());
    }

    #[test]
    fn log_det_examples() {
        let g = make_grid(2, 8, DerivativeMode::Spectral).unwrap();
        assert!(log_det(&MetricField::identity(&g)).max_abs() < 1e-15);
        let s: Vec<f64> = g.sample(|x| c(0.3 * x[0].sin() * x[3].cos(), 0.0)).iter().map(|v| v.re).collect();
        let t = Tensor11::from_site_fn(&g, |i| herm(s[i].exp(), 1.0, 0.0, 0.0));
        let ld = log_det(&MetricField::new(t).unwrap());
        assert!(ld.values.iter().zip(&s).all(|(a, b)| (a.re - b).abs() < 1e-14));
        let t = Tensor11::from_site_fn(&g, |i| herm(s[i].exp(), s[i].exp(), 0.0, 0.0));
        let ld = log_det(&MetricField::new(t).unwrap());
        assert!(ld.values.iter().zip(&s).all(|(a, b)| (a.re - 2.0 * b).abs() < 1e-14));
    }

    #[test]
    fn trace_examples() {
        let g = make_grid(2, 8, DerivativeMode::Spectral).unwrap();
        let m = MetricField::new(Tensor11::constant(&g, &herm(2.0, 1.0, 0.0, 0.0))).unwrap();
        let tr = trace_pair(&m, &m).unwrap();
        assert!((tr.values[5].re - 2.0).abs() < 1e-15);
        let id = MetricField::identity(&g);
        assert!((trace_pair(&id, &m).unwrap().values[0].re - 3.0).abs() < 1e-15);
        assert!((trace_pair(&m, &id).unwrap().values[0].re - 1.5).abs() < 1e-15);
        let other = make_grid(2, 10, DerivativeMode::Spectral).unwrap();
        assert!(trace_pair(&m, &Tensor11::identity(&other)).is_err());
    }

    #[test]
    fn flat_volume_and_quadrature() {
        let g = make_grid(2, 8, DerivativeMode::Spectral).unwrap();
        let id = MetricField::identity(&g);
        let one = vec![1.0; g.sites()];
        let two_pi = 2.0 * std::f64::consts::PI;
        // g_real = 2 delta, so the flat volume carries 2^n
        assert!((volume_form_integral(&id, &one) - 4.0 * two_pi.powi(4)).abs() < 1e-10);
        let s: Vec<f64> = (0..g.sites()).map(|i| g.coords(i)[0].sin()).collect();
        assert!(volume_form_integral(&id, &s).abs() < 1e-10);

        // conformal e^u delta with u = eps sin x1: density 4 e^{2u}
        let eps = 0.2;
        let t = Tensor11::from_site_fn(&g, |i| {
            let u = (eps * g.coords(i)[0].sin()).exp();
            herm(u, u, 0.0, 0.0)
        });
        let v = volume_form_integral(&MetricField::new(t).unwrap(), &one);
        // 1-D oracle: fine trapezoid of e^{2 eps sin x}
        let m = 4096;
        let q: f64 = (0..m)
            .map(|j| (2.0 * eps * (two_pi * j as f64 / m as f64).sin()).exp())
            .sum::<f64>()
            * two_pi
            / m as f64;
        assert!((v - 4.0 * q * two_pi.powi(3)).abs() < 1e-9 * v);
    }

    #[test]
    fn norm_scaling() {
        let g = make_grid(2, 8, DerivativeMode::Spectral).unwrap();
        let mut t = FormField::zeros(&g, 2, 1, true);
        let a = g.sample(|x| c(x[0].sin(), x[2].cos()));
        let i01 = t.index(&[0, 1], &[1]);
        let i10 = t.index(&[1, 0], &[1]);
        t.comps[i01] = a.clone();
        t.comps[i10] = a.iter().map(|v| -v).collect();
        assert!(t.antisymmetry_defect() < 1e-15);
        let id = MetricField::identity(&g);
        let four = MetricField::new(Tensor11::identity(&g).scale(4.0)).unwrap();
        let n1 = tensor_norm_sq(&t, &id).unwrap();
        let n4 = tensor_norm_sq(&t, &four).unwrap();
        for s in 0..g.sites() {
            assert!((n4.values[s].re * 64.0 - n1.values[s].re).abs() < 1e-13);
            assert!((n1.values[s].re - 2.0 * a[s].norm_sqr()).abs() < 1e-13);
        }
        let z = FormField::zeros(&g, 1, 0, true);
        assert!(tensor_norm_sq(&z, &id).unwrap().max_abs() == 0.0);
    }

    proptest! {
        #[test]
        fn hermitize_is_projection(vals in proptest::collection::vec(-2.0f64..2.0, 8)) {
            let g = make_grid(2, 8, DerivativeMode::Spectral).unwrap();
            // one non-Hermitian site, exact zeros elsewhere
            let mut t = Tensor11::zeros(&g);
            for (k, comp) in t.comps.iter_mut().enumerate() {
                comp[3] = C64::new(vals[2 * k], vals[2 * k + 1]);
            }
            t.hermitize();
            prop_assert!(t.hermitian_defect() == 0.0);
            let once = t.clone();
            t.hermitize();
            // exact pairs keep their bits, signed zeros included
            for (a, b) in t.comps.iter().flatten().zip(once.comps.iter().flatten()) {
                prop_assert_eq!(a.re.to_bits(), b.re.to_bits());
                prop_assert_eq!(a.im.to_bits(), b.im.to_bits());
            }
        }

        #[test]
        fn inverse_is_inverse(a in 0.1f64..5.0, b in 0.1f64..5.0, re in -1.0f64..1.0, im in -1.0f64..1.0) {
            let m = herm(a, b, re, im);
            prop_assume!(m.herm_eigs().0 > 1e-3);
            let r = m.inverse();
            let p = m.mul(&r);
            prop_assert!((p.a[0][0] - 1.0).norm() < 1e-10 && p.a[0][1].norm() < 1e-10);
            prop_assert!((p.a[1][1] - 1.0).norm() < 1e-10 && p.a[1][0].norm() < 1e-10);
        }

        #[test]
        fn eigs_bracket_diagonal(a in -3.0f64..3.0, b in -3.0f64..3.0, re in -2.0f64..2.0, im in -2.0f64..2.0) {
            let (lo, hi) = herm(a, b, re, im).herm_eigs();
            prop_assert!(lo <= a.min(b) + 1e-12 && hi >= a.max(b) - 1e-12);
            prop_assert!(((lo * hi) - (a * b - re * re - im * im)).abs() < 1e-9);
        }

        #[test]
        fn trace_is_real(a in 0.5f64..3.0, b in 0.5f64..3.0, re in -0.3f64..0.3, im in -0.3f64..0.3) {
            let m = herm(a, b, re, im);
            let r = m.raised();
            let mut t = C64::new(0.0, 0.0);
            let o = herm(b, a, im, re);
            for k in 0..2 { for l in 0..2 { t += r.a[k][l] * o.a[k][l]; } }
            prop_assert!(t.im.abs() < 1e-12);
        }
    }
}
