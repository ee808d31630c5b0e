//! Periodic grid on the torus C^n / (2 pi Z)^{2n} and derivative operators.
//!
//! Real axes are ordered x_1, y_1, x_2, y_2 so that real axis `2i` is x_i and
//! `2i + 1` is y_i. Sites are stored row-major with axis 0 slowest.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64 as C64;
use rustfft::{Fft, FftPlanner};

use crate::error::{PcfError, Result};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DerivativeMode {
    Spectral,
    Central4,
}

impl DerivativeMode {
    pub fn code(self) -> u32 {
        match self {
            DerivativeMode::Spectral => 0,
            DerivativeMode::Central4 => 1,
        }
    }

    pub fn from_code(c: u32) -> Option<Self> {
        match c {
            0 => Some(DerivativeMode::Spectral),
            1 => Some(DerivativeMode::Central4),
            _ => None,
        }
    }
}

/// First-order derivative factors. Products of factors are applied by
/// composition, which in spectral mode is a product of symbols.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Deriv {
    /// d/dx_a on real axis a.
    Real(usize),
    /// d_i = (d/dx_i - sqrt(-1) d/dy_i) / 2
    Holo(usize),
    /// d_ibar = (d/dx_i + sqrt(-1) d/dy_i) / 2
    Anti(usize),
}

struct GridInner {
    n_complex: usize,
    n: usize,
    mode: DerivativeMode,
    sites: usize,
    strides: Vec<usize>,
    /// first-derivative wavenumber per index, Nyquist zeroed
    wave: Vec<f64>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

#[derive(Clone)]
pub struct ComplexTorusGrid {
    inner: Arc<GridInner>,
}

impl std::fmt::Debug for ComplexTorusGrid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ComplexTorusGrid")
            .field("n_complex", &self.inner.n_complex)
            .field("N", &self.inner.n)
            .field("mode", &self.inner.mode)
            .finish()
    }
}

impl PartialEq for ComplexTorusGrid {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner)
            || (self.inner.n_complex == other.inner.n_complex
                && self.inner.n == other.inner.n
                && self.inner.mode == other.inner.mode)
    }
}

pub fn make_grid(n_complex: usize, n: usize, mode: DerivativeMode) -> Result<ComplexTorusGrid> {
    if !(1..=2).contains(&n_complex) {
        return Err(PcfError::Grid(format!(
            "n_complex must be 1 or 2, got {n_complex}"
        )));
    }
    if n < 8 || n % 2 != 0 {
        return Err(PcfError::Grid(format!("N must be even >= 8, got {n}")));
    }
    let dims = 2 * n_complex;
    let sites = n.pow(dims as u32);
    let strides = (0..dims).map(|a| n.pow((dims - 1 - a) as u32)).collect();
    let wave = (0..n)
        .map(|j| {
            if 2 * j == n {
                0.0
            } else if 2 * j < n {
                j as f64
            } else {
                j as f64 - n as f64
            }
        })
        .collect();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    Ok(ComplexTorusGrid {
        inner: Arc::new(GridInner {
            n_complex,
            n,
            mode,
            sites,
            strides,
            wave,
            fwd,
            inv,
        }),
    })
}

impl ComplexTorusGrid {
    pub fn n_complex(&self) -> usize {
        self.inner.n_complex
    }

    pub fn points_per_axis(&self) -> usize {
        self.inner.n
    }

    pub fn mode(&self) -> DerivativeMode {
        self.inner.mode
    }

    pub fn period(&self) -> f64 {
        2.0 * PI
    }

    pub fn spacing(&self) -> f64 {
        2.0 * PI / self.inner.n as f64
    }

    pub fn real_dim(&self) -> usize {
        2 * self.inner.n_complex
    }

    pub fn sites(&self) -> usize {
        self.inner.sites
    }

    /// Volume of one grid cell in coordinate measure.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.real_dim() as i32)
    }

    /// Integer coordinate of `site` along real axis `a`.
    pub fn index(&self, site: usize, a: usize) -> usize {
        (site / self.inner.strides[a]) % self.inner.n
    }

    /// Real coordinates of a site.
    pub fn coords(&self, site: usize) -> Vec<f64> {
        let h = self.spacing();
        (0..self.real_dim())
            .map(|a| self.index(site, a) as f64 * h)
            .collect()
    }

    /// Sample a function of the real coordinates on every site.
    pub fn sample<F>(&self, f: F) -> Vec<C64>
    where
        F: Fn(&[f64]) -> C64 + Sync + Send,
    {
        par::map(self.sites(), |s| f(&self.coords(s)))
    }

    fn check_axis(&self, i: usize) -> Result<()> {
        if i >= self.inner.n_complex {
            return Err(PcfError::Axis {
                axis: i,
                n: self.inner.n_complex,
            });
        }
        Ok(())
    }

    fn check_ops(&self, ops: &[Deriv]) -> Result<()> {
        for op in ops {
            match *op {
                Deriv::Real(a) if a >= self.real_dim() => {
                    return Err(PcfError::Axis {
                        axis: a,
                        n: self.real_dim(),
                    })
                }
                Deriv::Holo(i) | Deriv::Anti(i) => self.check_axis(i)?,
                _ => {}
            }
        }
        Ok(())
    }

    /// Apply a 1-D transform along axis `a` of the full array.
    fn transform_axis(&self, data: &mut [C64], a: usize, inverse: bool) {
        let n = self.inner.n;
        let fft = if inverse {
            &self.inner.inv
        } else {
            &self.inner.fwd
        };
        let stride = self.inner.strides[a];
        if stride == 1 {
            par::chunks_mut(data, n * 64.min(self.sites() / n).max(1), |_, c| {
                let mut scratch = vec![C64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
                fft.process_with_scratch(c, &mut scratch);
            });
            return;
        }
        // Each block of n * stride values holds `stride` interleaved lines.
        let block = n * stride;
        par::chunks_mut(data, block, |_, b| {
            let mut scratch = vec![C64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
            let mut line = vec![C64::new(0.0, 0.0); n];
            for off in 0..stride {
                for (j, v) in line.iter_mut().enumerate() {
                    *v = b[j * stride + off];
                }
                fft.process_with_scratch(&mut line, &mut scratch);
                for (j, v) in line.iter().enumerate() {
                    b[j * stride + off] = *v;
                }
            }
        });
    }

    pub fn forward(&self, f: &[C64]) -> Vec<C64> {
        let mut d = f.to_vec();
        for a in 0..self.real_dim() {
            self.transform_axis(&mut d, a, false);
        }
        d
    }

    pub fn inverse(&self, spec: &[C64]) -> Vec<C64> {
        let mut d = spec.to_vec();
        for a in 0..self.real_dim() {
            self.transform_axis(&mut d, a, true);
        }
        let scale = 1.0 / self.sites() as f64;
        par::fill(&mut d, |_, v| *v *= scale);
        d
    }

    /// Signed wavenumber of `site` along axis `a` (Nyquist reported as 0).
    pub fn wavenumber(&self, site: usize, a: usize) -> f64 {
        self.inner.wave[self.index(site, a)]
    }

    /// Full signed wavenumber including Nyquist (+N/2), for smoothing operators.
    pub fn wavenumber_full(&self, site: usize, a: usize) -> f64 {
        let j = self.index(site, a);
        let n = self.inner.n;
        if 2 * j <= n {
            j as f64
        } else {
            j as f64 - n as f64
        }
    }

    fn symbol(&self, site: usize, op: Deriv) -> C64 {
        let i = C64::new(0.0, 1.0);
        match op {
            Deriv::Real(a) => i * self.wavenumber(site, a),
            Deriv::Holo(k) => {
                let kx = self.wavenumber(site, 2 * k);
                let ky = self.wavenumber(site, 2 * k + 1);
                0.5 * (i * kx + ky)
            }
            Deriv::Anti(k) => {
                let kx = self.wavenumber(site, 2 * k);
                let ky = self.wavenumber(site, 2 * k + 1);
                0.5 * (i * kx - ky)
            }
        }
    }

    /// Product of derivative symbols at a site.
    pub fn symbol_of(&self, site: usize, ops: &[Deriv]) -> C64 {
        ops.iter()
            .fold(C64::new(1.0, 0.0), |acc, &op| acc * self.symbol(site, op))
    }

    /// Fourth-order central difference along real axis a.
    fn central_real(&self, f: &[C64], a: usize) -> Vec<C64> {
        let n = self.inner.n;
        let stride = self.inner.strides[a];
        let inv12h = 1.0 / (12.0 * self.spacing());
        par::map(self.sites(), |s| {
            let j = self.index(s, a);
            let base = s - j * stride;
            let at = |d: isize| f[base + ((j as isize + d).rem_euclid(n as isize) as usize) * stride];
            (-at(2) + 8.0 * at(1) - 8.0 * at(-1) + at(-2)) * inv12h
        })
    }

    fn central_op(&self, f: &[C64], op: Deriv) -> Vec<C64> {
        let i = C64::new(0.0, 1.0);
        match op {
            Deriv::Real(a) => self.central_real(f, a),
            Deriv::Holo(k) | Deriv::Anti(k) => {
                let dx = self.central_real(f, 2 * k);
                let dy = self.central_real(f, 2 * k + 1);
                let sgn = if matches!(op, Deriv::Holo(_)) { -1.0 } else { 1.0 };
                dx.iter()
                    .zip(&dy)
                    .map(|(x, y)| 0.5 * (x + sgn * i * y))
                    .collect()
            }
        }
    }

    /// Prepare a field for repeated differentiation.
    pub fn prepare(&self, f: &[C64]) -> Prepared {
        match self.inner.mode {
            DerivativeMode::Spectral => Prepared {
                grid: self.clone(),
                spectral: true,
                data: self.forward(f),
            },
            DerivativeMode::Central4 => Prepared {
                grid: self.clone(),
                spectral: false,
                data: f.to_vec(),
            },
        }
    }

    /// Composite derivative `ops` applied to f.
    pub fn derivative(&self, f: &[C64], ops: &[Deriv]) -> Result<Vec<C64>> {
        self.check_ops(ops)?;
        Ok(self.prepare(f).apply(ops))
    }

    /// Sum over terms of coefficient * (composite derivative of field).
    pub fn combine(&self, terms: &[(C64, &Prepared, &[Deriv])]) -> Vec<C64> {
        if terms.is_empty() {
            return vec![C64::new(0.0, 0.0); self.sites()];
        }
        if terms[0].1.spectral {
            let mut acc = vec![C64::new(0.0, 0.0); self.sites()];
            par::fill(&mut acc, |s, v| {
                for (c, p, ops) in terms {
                    *v += c * self.symbol_of(s, ops) * p.data[s];
                }
            });
            self.inverse(&acc)
        } else {
            let mut acc = vec![C64::new(0.0, 0.0); self.sites()];
            for (c, p, ops) in terms {
                let d = p.apply(ops);
                for (a, x) in acc.iter_mut().zip(d) {
                    *a += c * x;
                }
            }
            acc
        }
    }

    /// Spectral multiplier: inverse transform of `m(site) * fhat`.
    pub fn fourier_multiply<F>(&self, f: &[C64], m: F) -> Vec<C64>
    where
        F: Fn(usize) -> C64 + Sync + Send,
    {
        let mut spec = self.forward(f);
        par::fill(&mut spec, |s, v| *v *= m(s));
        self.inverse(&spec)
    }
}

/// A field held in the representation its grid differentiates in.
pub struct Prepared {
    grid: ComplexTorusGrid,
    spectral: bool,
    data: Vec<C64>,
}

impl Prepared {
    pub fn apply(&self, ops: &[Deriv]) -> Vec<C64> {
        let g = &self.grid;
        if self.spectral {
            let mut spec = vec![C64::new(0.0, 0.0); g.sites()];
            par::fill(&mut spec, |s, v| *v = g.symbol_of(s, ops) * self.data[s]);
            g.inverse(&spec)
        } else {
            let mut cur = self.data.clone();
            for &op in ops.iter().rev() {
                cur = g.central_op(&cur, op);
            }
            cur
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScalarField {
    pub grid: ComplexTorusGrid,
    pub values: Vec<C64>,
}

impl ScalarField {
    pub fn new(grid: &ComplexTorusGrid, values: Vec<C64>) -> Result<Self> {
        if values.len() != grid.sites() {
            return Err(PcfError::Invalid(format!(
                "{} values for {} sites",
                values.len(),
                grid.sites()
            )));
        }
        Ok(ScalarField {
            grid: grid.clone(),
            values,
        })
    }

    pub fn constant(grid: &ComplexTorusGrid, c: f64) -> Self {
        ScalarField {
            grid: grid.clone(),
            values: vec![C64::new(c, 0.0); grid.sites()],
        }
    }

    pub fn from_fn<F>(grid: &ComplexTorusGrid, f: F) -> Self
    where
        F: Fn(&[f64]) -> C64 + Sync + Send,
    {
        ScalarField {
            grid: grid.clone(),
            values: grid.sample(f),
        }
    }

    pub fn from_real<F>(grid: &ComplexTorusGrid, f: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Sync + Send,
    {
        Self::from_fn(grid, |x| C64::new(f(x), 0.0))
    }

    pub fn max_abs(&self) -> f64 {
        par::max(self.values.len(), |s| self.values[s].norm())
    }

    pub fn max_imag(&self) -> f64 {
        par::max(self.values.len(), |s| self.values[s].im.abs())
    }

    pub fn re(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.re).collect()
    }
}

pub fn d_holo(f: &ScalarField, i: usize) -> Result<ScalarField> {
    let v = f.grid.derivative(&f.values, &[Deriv::Holo(i)])?;
    ScalarField::new(&f.grid, v)
}

pub fn d_antiholo(f: &ScalarField, i: usize) -> Result<ScalarField> {
    let v = f.grid.derivative(&f.values, &[Deriv::Anti(i)])?;
    ScalarField::new(&f.grid, v)
}

pub fn d_real(f: &ScalarField, a: usize) -> Result<ScalarField> {
    let v = f.grid.derivative(&f.values, &[Deriv::Real(a)])?;
    ScalarField::new(&f.grid, v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn i() -> C64 {
        C64::new(0.0, 1.0)
    }

    fn max_diff(a: &[C64], b: &[C64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
    }

    #[test]
    fn construction() {
        let g = make_grid(2, 16, DerivativeMode::Spectral).unwrap();
        assert_eq!(g.sites(), 16usize.pow(4));
        assert!((g.spacing() - PI / 8.0).abs() < 1e-15);
        let g = make_grid(1, 8, DerivativeMode::Central4).unwrap();
        assert_eq!(g.sites(), 64);
        assert!(make_grid(2, 7, DerivativeMode::Spectral).is_err());
        assert!(make_grid(2, 6, DerivativeMode::Spectral).is_err());
        assert!(make_grid(3, 8, DerivativeMode::Spectral).is_err());
    }

    #[test]
    fn holo_of_plane_waves() {
        let g = make_grid(2, 8, DerivativeMode::Spectral).unwrap();
        let f = ScalarField::from_fn(&g, |x| (i() * x[0]).exp());
        let d = d_holo(&f, 0).unwrap();
        let want: Vec<C64> = f.values.iter().map(|v| 0.5 * i() * v).collect();
        assert!(max_diff(&d.values, &want) < 1e-13);
        let da = d_antiholo(&f, 0).unwrap();
        assert!(max_diff(&da.values, &want) < 1e-13);

        let f = ScalarField::from_fn(&g, |x| (i() * x[1]).exp());
        let d = d_holo(&f, 0).unwrap();
        let want: Vec<C64> = f.values.iter().map(|v| 0.5 * v).collect();
        assert!(max_diff(&d.values, &want) < 1e-13);

        let c = ScalarField::constant(&g, 3.0);
        assert!(d_holo(&c, 1).unwrap().max_abs() < 1e-13);
        assert!(d_antiholo(&c, 1).unwrap().max_abs() < 1e-13);
        assert!(d_holo(&c, 2).is_err());
    }

    #[test]
    fn conjugation_symmetry() {
        let g = make_grid(2, 8, DerivativeMode::Spectral).unwrap();
        let f = ScalarField::from_real(&g, |x| (x[0] + 2.0 * x[3]).sin() + x[1].cos() * x[2].sin());
        let d = d_holo(&f, 1).unwrap();
        let db = d_antiholo(&f, 1).unwrap();
        let cd: Vec<C64> = d.values.iter().map(|v| v.conj()).collect();
        assert!(max_diff(&cd, &db.values) < 1e-13);
    }

    #[test]
    fn mixed_commute_exactly() {
        let g = make_grid(2, 8, DerivativeMode::Spectral).unwrap();
        let f = ScalarField::from_real(&g, |x| (x[0].sin() * x[3].cos()).exp());
        let a = g.derivative(&f.values, &[Deriv::Holo(0), Deriv::Anti(1)]).unwrap();
        let b = g.derivative(&d_antiholo(&f, 1).unwrap().values, &[Deriv::Holo(0)]).unwrap();
        let c = g.derivative(&d_holo(&f, 0).unwrap().values, &[Deriv::Anti(1)]).unwrap();
        assert!(max_diff(&a, &b) < 1e-12);
        assert!(max_diff(&b, &c) < 1e-12);
    }

    #[test]
    fn central4_order() {
        let mut errs = Vec::new();
        for n in [16, 32] {
            let g = make_grid(1, n, DerivativeMode::Central4).unwrap();
            let f = ScalarField::from_real(&g, |x| (0.5 * x[0].sin() + 0.3 * x[1].cos()).exp());
            let d = d_real(&f, 0).unwrap();
            let want = g.sample(|x| {
                let e = (0.5 * x[0].sin() + 0.3 * x[1].cos()).exp();
                C64::new(0.5 * x[0].cos() * e, 0.0)
            });
            errs.push(max_diff(&d.values, &want));
        }
        let slope = (errs[0] / errs[1]).log2();
        assert!((slope - 4.0).abs() < 0.5, "slope {slope}");
    }

    #[test]
    fn combine_matches_sum() {
        let g = make_grid(1, 8, DerivativeMode::Spectral).unwrap();
        let f = g.sample(|x| C64::new(x[0].sin() * x[1].cos(), 0.0));
        let h = g.sample(|x| C64::new((2.0 * x[1]).sin(), x[0].cos()));
        let pf = g.prepare(&f);
        let ph = g.prepare(&h);
        let two = C64::new(2.0, 0.0);
        let sum = g.combine(&[(two, &pf, &[Deriv::Real(0)]), (i(), &ph, &[Deriv::Real(1), Deriv::Real(1)])]);
        let a = pf.apply(&[Deriv::Real(0)]);
        let b = ph.apply(&[Deriv::Real(1), Deriv::Real(1)]);
        let want: Vec<C64> = a.iter().zip(&b).map(|(x, y)| two * x + i() * y).collect();
        assert!(max_diff(&sum, &want) < 1e-13);
    }
}
