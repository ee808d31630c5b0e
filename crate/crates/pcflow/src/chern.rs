//! Chern and Bismut quantities of a Hermitian metric in coordinates.
//!
//! Index conventions: `omega = sqrt(-1) g_{k lbar} dz^k ^ dz^lbar`,
//! `T_{k m qbar} = d_k g_{m qbar} - d_m g_{k qbar}`,
//! `S_{k lbar} = g^{i jbar} (-g_{k lbar, i jbar} + g^{m nbar} g_{k nbar, i} g_{m lbar, jbar})`,
//! `Q1_{k lbar} = g^{m nbar} g^{p qbar} T_{k m qbar} conj(T_{l n pbar})`,
//! `P11 = S - Q1` and the flow is `d/dt g = -P11`.
//! The (0,1) form `gamma = dstar_omega` has
//! `gamma_jbar = sqrt(-1) g^{p qbar} (d_qbar g_{p jbar} - d_jbar g_{p qbar})`.

use num_complex::Complex64 as C64;

use crate::error::Result;
use crate::fields::{
    j_image, metric_inverse, real_metric_site, FormField, MetricField, RealTensorField, SiteMat,
    Tensor11,
};
use crate::grid::{ComplexTorusGrid, Deriv, Prepared};
use crate::par;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const I: C64 = C64 { re: 0.0, im: 1.0 };

/// A metric together with its inverse and first and mixed second derivatives.
pub struct MetricJet {
    pub g: MetricField,
    pub ginv: Tensor11,
    n: usize,
    /// `d_i g_{k lbar}` at `(i * n + k) * n + l`
    pub dg: Vec<Vec<C64>>,
    /// `d_ibar g_{k lbar}` at `(i * n + k) * n + l`
    pub dgb: Vec<Vec<C64>>,
    /// `d_i d_jbar g_{k lbar}` at `((i * n + j) * n + k) * n + l`
    pub ddg: Vec<Vec<C64>>,
}

impl MetricJet {
    pub fn new(g: &MetricField) -> Self {
        let n = g.n;
        let grid = g.grid.clone();
        let prepared: Vec<Prepared> = g.comps.iter().map(|c| grid.prepare(c)).collect();
        let mut dg = Vec::with_capacity(n * n * n);
        for i in 0..n {
            for k in 0..n {
                for l in 0..n {
                    dg.push(prepared[k * n + l].apply(&[Deriv::Holo(i)]));
                }
            }
        }
        // d_ibar g_{k lbar} = conj(d_i g_{l kbar})
        let mut dgb = Vec::with_capacity(n * n * n);
        for i in 0..n {
            for k in 0..n {
                for l in 0..n {
                    let src = &dg[(i * n + l) * n + k];
                    dgb.push(par::map(src.len(), |s| src[s].conj()));
                }
            }
        }
        let mut ddg = Vec::with_capacity(n.pow(4));
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        ddg.push(prepared[k * n + l].apply(&[Deriv::Holo(i), Deriv::Anti(j)]));
                    }
                }
            }
        }
        MetricJet {
            g: g.clone(),
            ginv: metric_inverse(g),
            n,
            dg,
            dgb,
            ddg,
        }
    }

    pub fn grid(&self) -> &ComplexTorusGrid {
        &self.g.grid
    }

    #[inline]
    pub fn d(&self, i: usize, k: usize, l: usize, s: usize) -> C64 {
        self.dg[(i * self.n + k) * self.n + l][s]
    }

    #[inline]
    pub fn db(&self, i: usize, k: usize, l: usize, s: usize) -> C64 {
        self.dgb[(i * self.n + k) * self.n + l][s]
    }

    #[inline]
    pub fn dd(&self, i: usize, j: usize, k: usize, l: usize, s: usize) -> C64 {
        let n = self.n;
        self.ddg[((i * n + j) * n + k) * n + l][s]
    }

    /// Chern torsion `T_{k m qbar}` at a site, flattened `(k * n + m) * n + q`.
    fn torsion_site(&self, s: usize) -> [C64; 8] {
        let n = self.n;
        let mut t = [ZERO; 8];
        for k in 0..n {
            for m in 0..n {
                for q in 0..n {
                    t[(k * n + m) * n + q] = self.d(k, m, q, s) - self.d(m, k, q, s);
                }
            }
        }
        t
    }

    fn s_site(&self, s: usize) -> SiteMat {
        let n = self.n;
        let gi = self.ginv.at(s);
        let mut out = SiteMat::zeros(n);
        for k in 0..n {
            for l in 0..n {
                let mut acc = ZERO;
                for i in 0..n {
                    for j in 0..n {
                        let mut term = -self.dd(i, j, k, l, s);
                        for m in 0..n {
                            for nn in 0..n {
                                term += gi.a[m][nn] * self.d(i, k, nn, s) * self.db(j, m, l, s);
                            }
                        }
                        acc += gi.a[i][j] * term;
                    }
                }
                out.a[k][l] = acc;
            }
        }
        out
    }

    fn q1_site(&self, s: usize) -> SiteMat {
        let n = self.n;
        let gi = self.ginv.at(s);
        let t = self.torsion_site(s);
        let mut out = SiteMat::zeros(n);
        for k in 0..n {
            for l in 0..n {
                let mut acc = ZERO;
                for m in 0..n {
                    for nn in 0..n {
                        for p in 0..n {
                            for q in 0..n {
                                acc += gi.a[m][nn]
                                    * gi.a[p][q]
                                    * t[(k * n + m) * n + q]
                                    * t[(l * n + nn) * n + p].conj();
                            }
                        }
                    }
                }
                out.a[k][l] = acc;
            }
        }
        out
    }

    /// `X_lbar = g^{p qbar} (d_qbar g_{p lbar} - d_lbar g_{p qbar})`.
    fn x_site(&self, s: usize) -> [C64; 2] {
        let n = self.n;
        let gi = self.ginv.at(s);
        let mut x = [ZERO; 2];
        for (l, xl) in x.iter_mut().enumerate().take(n) {
            for p in 0..n {
                for q in 0..n {
                    *xl += gi.a[p][q] * (self.db(q, p, l, s) - self.db(l, p, q, s));
                }
            }
        }
        x
    }

    pub fn s(&self) -> Tensor11 {
        Tensor11::from_site_fn(self.grid(), |s| self.s_site(s))
    }

    pub fn q1(&self) -> Tensor11 {
        Tensor11::from_site_fn(self.grid(), |s| self.q1_site(s))
    }

    /// `P11 = S - Q1`.
    pub fn p11(&self) -> Tensor11 {
        let n = self.n;
        let mut p = Tensor11::from_site_fn(self.grid(), |s| {
            let a = self.s_site(s);
            let b = self.q1_site(s);
            let mut m = SiteMat::zeros(n);
            for k in 0..n {
                for l in 0..n {
                    m.a[k][l] = a.a[k][l] - b.a[k][l];
                }
            }
            m
        });
        p.hermitize();
        p
    }

    pub fn torsion(&self) -> FormField {
        let n = self.n;
        let mut t = FormField::zeros(self.grid(), 2, 1, true);
        let sites = self.grid().sites();
        for k in 0..n {
            for m in 0..n {
                for q in 0..n {
                    let c = t.index(&[k, m], &[q]);
                    t.comps[c] = par::map(sites, |s| self.d(k, m, q, s) - self.d(m, k, q, s));
                }
            }
        }
        t
    }

    /// `gamma = dstar_omega` as a (0,1) form.
    pub fn gamma(&self) -> FormField {
        let n = self.n;
        let mut f = FormField::zeros(self.grid(), 0, 1, true);
        let xs = par::map(self.grid().sites(), |s| self.x_site(s));
        for l in 0..n {
            f.comps[l] = xs.iter().map(|x| I * x[l]).collect();
        }
        f
    }

    /// sup over index quadruples of the coefficients of `d dbar omega`.
    pub fn pluriclosed_residual(&self) -> f64 {
        let n = self.n;
        let sites = self.grid().sites();
        let mut r = 0.0_f64;
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    for d in 0..n {
                        r = r.max(par::max(sites, |s| {
                            (self.dd(d, c, a, b, s) - self.dd(a, c, d, b, s)
                                - self.dd(d, b, a, c, s)
                                + self.dd(a, b, d, c, s))
                                .norm()
                        }));
                    }
                }
            }
        }
        r
    }
}

/// Coefficients `-d_k d_lbar f` of `-sqrt(-1) d dbar f`.
pub fn minus_ddbar(grid: &ComplexTorusGrid, f: &[C64]) -> Tensor11 {
    let n = grid.n_complex();
    let p = grid.prepare(f);
    let mut t = Tensor11::zeros(grid);
    for k in 0..n {
        for l in 0..n {
            let d = p.apply(&[Deriv::Holo(k), Deriv::Anti(l)]);
            t.comps[k * n + l] = d.into_iter().map(|v| -v).collect();
        }
    }
    t.hermitize();
    t
}

/// (1,1) coefficients of `d beta + dbar conj(beta)` for a (0,1) form beta:
/// `-sqrt(-1) (d_k beta_lbar - d_lbar conj(beta_kbar))`.
pub fn ddbar_of_01(beta: &FormField) -> Tensor11 {
    let grid = &beta.grid;
    let n = beta.n;
    let prep: Vec<Prepared> = beta.comps.iter().map(|c| grid.prepare(c)).collect();
    let conj_prep: Vec<Prepared> = beta
        .comps
        .iter()
        .map(|c| grid.prepare(&c.iter().map(|v| v.conj()).collect::<Vec<_>>()))
        .collect();
    let mut t = Tensor11::zeros(grid);
    for k in 0..n {
        for l in 0..n {
            let a = prep[l].apply(&[Deriv::Holo(k)]);
            let b = conj_prep[k].apply(&[Deriv::Anti(l)]);
            t.comps[k * n + l] = a.iter().zip(&b).map(|(x, y)| -I * (x - y)).collect();
        }
    }
    t
}

pub fn chern_torsion(g: &MetricField) -> FormField {
    MetricJet::new(g).torsion()
}

pub fn q1(g: &MetricField) -> Tensor11 {
    MetricJet::new(g).q1()
}

pub fn bismut_ricci_11(g: &MetricField) -> Tensor11 {
    MetricJet::new(g).p11()
}

/// Chern-Ricci coefficients `-d_k d_lbar log det g`.
pub fn chern_ricci(g: &MetricField) -> Tensor11 {
    let ld = crate::fields::log_det(g);
    minus_ddbar(&g.grid, &ld.values)
}

/// `(dstar_omega as (0,1) form, dbarstar_omega as (1,0) form, real d*omega)`.
pub fn dstar_omega(g: &MetricField) -> (FormField, FormField, RealTensorField) {
    let gamma = MetricJet::new(g).gamma();
    let mut conj = FormField::zeros(&g.grid, 1, 0, true);
    for (c, src) in conj.comps.iter_mut().zip(&gamma.comps) {
        *c = src.iter().map(|v| v.conj()).collect();
    }
    let real = real_dstar(&gamma);
    (gamma, conj, real)
}

/// Real 1-form `gamma + conj(gamma)`: components `2 Re gamma_ibar` on x_i
/// and `2 Im gamma_ibar` on y_i.
pub fn real_dstar(gamma: &FormField) -> RealTensorField {
    let mut r = RealTensorField::zeros(&gamma.grid, 1);
    for i in 0..gamma.n {
        r.comps[2 * i] = gamma.comps[i].iter().map(|v| 2.0 * v.re).collect();
        r.comps[2 * i + 1] = gamma.comps[i].iter().map(|v| 2.0 * v.im).collect();
    }
    r
}

/// `theta(X) = -d*omega(J X)`.
pub fn lee_from_dstar(dso: &RealTensorField) -> RealTensorField {
    let mut th = RealTensorField::zeros(&dso.grid, 1);
    for a in 0..dso.dim {
        let (b, sign) = j_image(a);
        th.comps[a] = dso.comps[b].iter().map(|v| -sign * v).collect();
    }
    th
}

pub fn lee_form(g: &MetricField) -> RealTensorField {
    lee_from_dstar(&dstar_omega(g).2)
}

/// Real Kaehler form `omega_ab = g_real(J e_a, e_b)`.
pub fn kahler_form(g: &MetricField) -> RealTensorField {
    let grid = &g.grid;
    let dim = grid.real_dim();
    let mut w = RealTensorField::zeros(grid, 2);
    let mats = par::map(grid.sites(), |s| real_metric_site(&g.at(s)));
    for a in 0..dim {
        let (ja, sign) = j_image(a);
        for b in 0..dim {
            let c = w.index(&[a, b]);
            w.comps[c] = mats.iter().map(|m| sign * m[ja][b]).collect();
        }
    }
    w
}

/// Exterior derivative of a real 2-form: `(dw)_{abc} = d_a w_bc + d_b w_ca + d_c w_ab`.
pub fn exterior_d2(w: &RealTensorField) -> RealTensorField {
    let grid = &w.grid;
    let dim = w.dim;
    let prep: Vec<Prepared> = w
        .comps
        .iter()
        .map(|c| grid.prepare(&c.iter().map(|&v| C64::new(v, 0.0)).collect::<Vec<_>>()))
        .collect();
    let mut dw = RealTensorField::zeros(grid, 3);
    for a in 0..dim {
        for b in 0..dim {
            for c in 0..dim {
                if a == b || b == c || a == c {
                    continue;
                }
                let sum = grid.combine(&[
                    (C64::new(1.0, 0.0), &prep[b * dim + c], &[Deriv::Real(a)]),
                    (C64::new(1.0, 0.0), &prep[c * dim + a], &[Deriv::Real(b)]),
                    (C64::new(1.0, 0.0), &prep[a * dim + b], &[Deriv::Real(c)]),
                ]);
                let i = dw.index(&[a, b, c]);
                dw.comps[i] = sum.iter().map(|v| v.re).collect();
            }
        }
    }
    dw
}

/// Exterior derivative of a real 3-form (4-form output).
pub fn exterior_d3(t: &RealTensorField) -> RealTensorField {
    let grid = &t.grid;
    let dim = t.dim;
    let prep: Vec<Prepared> = t
        .comps
        .iter()
        .map(|c| grid.prepare(&c.iter().map(|&v| C64::new(v, 0.0)).collect::<Vec<_>>()))
        .collect();
    let mut out = RealTensorField::zeros(grid, 4);
    let one = C64::new(1.0, 0.0);
    for a in 0..dim {
        for b in 0..dim {
            for c in 0..dim {
                for d in 0..dim {
                    let idx = [a, b, c, d];
                    let distinct = (0..4).all(|x| (x + 1..4).all(|y| idx[x] != idx[y]));
                    if !distinct {
                        continue;
                    }
                    // d_a T_bcd - d_b T_acd + d_c T_abd - d_d T_abc
                    let sum = grid.combine(&[
                        (one, &prep[t.index(&[b, c, d])], &[Deriv::Real(a)]),
                        (-one, &prep[t.index(&[a, c, d])], &[Deriv::Real(b)]),
                        (one, &prep[t.index(&[a, b, d])], &[Deriv::Real(c)]),
                        (-one, &prep[t.index(&[a, b, c])], &[Deriv::Real(d)]),
                    ]);
                    let i = out.index(&idx);
                    out.comps[i] = sum.iter().map(|v| v.re).collect();
                }
            }
        }
    }
    out
}

/// Torsion 3-form `T(X, Y, Z) = d omega(JX, JY, JZ)`.
pub fn torsion_3form(g: &MetricField) -> RealTensorField {
    let dw = exterior_d2(&kahler_form(g));
    let dim = dw.dim;
    let mut t = RealTensorField::zeros(&g.grid, 3);
    for a in 0..dim {
        let (ja, sa) = j_image(a);
        for b in 0..dim {
            let (jb, sb) = j_image(b);
            for c in 0..dim {
                let (jc, sc) = j_image(c);
                let sign = sa * sb * sc;
                let src = dw.index(&[ja, jb, jc]);
                let dst = t.index(&[a, b, c]);
                t.comps[dst] = dw.comps[src].iter().map(|v| sign * v).collect();
            }
        }
    }
    t
}

pub fn pluriclosed_residual(g: &MetricField) -> f64 {
    if g.n < 2 {
        return 0.0;
    }
    MetricJet::new(g).pluriclosed_residual()
}

/// sup | rho_C - (d gamma + dbar conj gamma)^{1,1} - P11 |.
pub fn bismut_identity_residual(g: &MetricField) -> f64 {
    let jet = MetricJet::new(g);
    bismut_side(&jet).max_diff(&jet.p11())
}

/// `[P^C - d d^* omega]^{1,1}` assembled from the Chern-Ricci form and gamma.
pub fn bismut_side(jet: &MetricJet) -> Tensor11 {
    let rho = chern_ricci(&jet.g);
    let dd = ddbar_of_01(&jet.gamma());
    rho.axpy(-1.0, &dd)
}

/// Every Chern/Bismut quantity of one metric.
pub struct CurvatureBundle {
    pub s: Tensor11,
    pub q1: Tensor11,
    pub p11: Tensor11,
    pub pc: Tensor11,
    pub torsion: FormField,
    pub torsion3: RealTensorField,
    pub lee: RealTensorField,
}

impl CurvatureBundle {
    pub fn new(g: &MetricField) -> Result<Self> {
        let jet = MetricJet::new(g);
        let s = jet.s();
        let q1 = jet.q1();
        let p11 = jet.p11();
        let gamma = jet.gamma();
        Ok(CurvatureBundle {
            s,
            q1,
            p11,
            pc: chern_ricci(g),
            torsion: jet.torsion(),
            torsion3: torsion_3form(g),
            lee: lee_from_dstar(&real_dstar(&gamma)),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{tensor_norm_sq, volume_density};
    use crate::grid::{make_grid, DerivativeMode, ScalarField};
    use crate::oracles::chern_curvature_s;
    use crate::scenarios::{generate, metric_from_alpha, ScenarioKind, ScenarioSpec};
    use proptest::prelude::*;

    fn grid16() -> ComplexTorusGrid {
        make_grid(2, 16, DerivativeMode::Spectral).unwrap()
    }

    /// alpha = eps e^{i x2} dz1bar
    fn single_mode_alpha(grid: &ComplexTorusGrid, eps: f64) -> FormField {
        let mut a = FormField::zeros(grid, 0, 1, true);
        a.comps[0] = grid.sample(|x| eps * C64::from_polar(1.0, x[2]));
        a
    }

    #[test]
    fn flat_vanishes() {
        let g = MetricField::identity(&grid16());
        let b = CurvatureBundle::new(&g).unwrap();
        assert!(b.s.max_abs() < 1e-12 && b.q1.max_abs() < 1e-12 && b.p11.max_abs() < 1e-12);
        assert!(b.pc.max_abs() < 1e-12 && b.torsion.max_abs() < 1e-12);
        assert!(b.torsion3.max_abs() < 1e-12 && b.lee.max_abs() < 1e-12);
        assert!(pluriclosed_residual(&g) < 1e-12);
        assert!(bismut_identity_residual(&g) < 1e-12);
    }

    #[test]
    fn kahler_reduction() {
        let grid = grid16();
        let g = generate(&ScenarioSpec::new(ScenarioKind::KahlerPotential), &grid).unwrap();
        let b = CurvatureBundle::new(&g).unwrap();
        assert!(b.torsion.max_abs() < 1e-10);
        assert!(b.lee.max_abs() < 1e-10);
        assert!(b.torsion3.max_abs() < 1e-10);
        assert!(b.p11.max_diff(&b.pc) < 1e-8, "{}", b.p11.max_diff(&b.pc));
        assert!(dstar_omega(&g).0.max_abs() < 1e-10);
        assert!(bismut_identity_residual(&g) < 1e-10);
        assert!(chern_curvature_s(&g).max_diff(&b.pc) < 1e-8);
    }

    #[test]
    fn torsion_matches_closed_form() {
        let grid = grid16();
        let eps = 0.1;
        let g = metric_from_alpha(&single_mode_alpha(&grid, eps)).unwrap();
        // g_{0 1bar} = eps/2 e^{-i x2}, g_{1 0bar} = eps/2 e^{i x2}
        let s = 12345;
        let x2 = grid.coords(s)[2];
        assert!((g.get(0, 1, s) - 0.5 * eps * C64::from_polar(1.0, -x2)).norm() < 1e-14);
        let t = chern_torsion(&g);
        let want = -I * eps / 4.0 * C64::from_polar(1.0, -x2);
        assert!((t.comp(&[1, 0], &[1])[s] - want).norm() < 1e-14);
        assert!((t.comp(&[0, 1], &[1])[s] + want).norm() < 1e-14);
        assert!(t.comp(&[1, 0], &[0])[s].norm() < 1e-14);
        assert!(t.antisymmetry_defect() < 1e-15);
        assert!(t.max_abs() > 1e-3);
    }

    #[test]
    fn dstar_matches_site_formula() {
        let grid = grid16();
        let eps = 0.1;
        let g = metric_from_alpha(&single_mode_alpha(&grid, eps)).unwrap();
        let (gamma, conj, _) = dstar_omega(&g);
        let s = 777;
        let x2 = grid.coords(s)[2];
        let e = C64::from_polar(1.0, x2);
        // closed-form d_qbar g_{p lbar}: only z2bar derivatives of the off-diagonal entries
        let mut db = [[[ZERO; 2]; 2]; 2];
        db[1][0][1] = 0.5 * eps * (-0.5 * I) * e.conj();
        db[1][1][0] = 0.5 * eps * (0.5 * I) * e;
        let gm = g.at(s);
        let r = gm.raised();
        for j in 0..2 {
            let mut acc = ZERO;
            for p in 0..2 {
                for q in 0..2 {
                    acc += r.a[p][q] * (db[q][p][j] - db[j][p][q]);
                }
            }
            let want = I * acc;
            assert!((gamma.comps[j][s] - want).norm() < 1e-13);
            assert!((conj.comps[j][s] - want.conj()).norm() < 1e-13);
        }
    }

    #[test]
    fn q1_site_oracle_and_positivity() {
        let grid = grid16();
        let g = generate(&ScenarioSpec::new(ScenarioKind::PluriclosedAlpha).with_eps(0.1), &grid).unwrap();
        let jet = MetricJet::new(&g);
        let q = jet.q1();
        let t = jet.torsion();
        let s = 4321;
        let r = g.at(s).raised();
        for k in 0..2 {
            for l in 0..2 {
                let mut acc = ZERO;
                for m in 0..2 {
                    for nn in 0..2 {
                        for p in 0..2 {
                            for qq in 0..2 {
                                acc += r.a[m][nn] * r.a[p][qq] * t.comp(&[k, m], &[qq])[s] * t.comp(&[l, nn], &[p])[s].conj();
                            }
                        }
                    }
                }
                assert!((q.get(k, l, s) - acc).norm() < 1e-15);
            }
        }
        let lo = par::min(grid.sites(), |s| q.at(s).herm_eigs().0);
        assert!(lo >= -1e-12);
        assert!(q.hermitian_defect() < 1e-14);
        assert!(jet.s().hermitian_defect() < 1e-12);
    }

    #[test]
    fn p11_is_s_minus_q1_with_oracle_s() {
        let grid = grid16();
        let g = generate(&ScenarioSpec::new(ScenarioKind::PluriclosedAlpha).with_eps(0.1), &grid).unwrap();
        let p = bismut_ricci_11(&g);
        let s = chern_curvature_s(&g);
        let q = q1(&g);
        let r = p.axpy(-1.0, &s).axpy(1.0, &q);
        // the oracle differentiates Gamma, a product, so aliasing sets the floor
        assert!(r.max_abs() < 1e-8, "{}", r.max_abs());
        let fine = make_grid(2, 24, DerivativeMode::Spectral).unwrap();
        let gf = generate(&ScenarioSpec::new(ScenarioKind::PluriclosedAlpha).with_eps(0.1), &fine).unwrap();
        let rf = bismut_ricci_11(&gf).axpy(-1.0, &chern_curvature_s(&gf)).axpy(1.0, &q1(&gf));
        assert!(rf.max_abs() < 0.1 * r.max_abs(), "{} vs {}", rf.max_abs(), r.max_abs());
    }

    #[test]
    fn bismut_identity_on_alpha_data() {
        let grid = grid16();
        let g = generate(&ScenarioSpec::new(ScenarioKind::PluriclosedAlpha), &grid).unwrap();
        assert!(bismut_identity_residual(&g) < 1e-8);
        assert!(pluriclosed_residual(&g) < 1e-10);
    }

    #[test]
    fn conformal_ricci() {
        let grid = grid16();
        let u: Vec<f64> = (0..grid.sites())
            .map(|s| {
                let x = grid.coords(s);
                0.1 * (x[0] + x[3]).sin() * x[1].cos()
            })
            .collect();
        let g = MetricField::new(Tensor11::from_site_fn(&grid, |s| {
            let mut m = SiteMat::identity(2);
            m.a[0][0] *= u[s].exp();
            m.a[1][1] *= u[s].exp();
            m
        }))
        .unwrap();
        let rho = chern_ricci(&g);
        let uc: Vec<C64> = u.iter().map(|&v| C64::new(2.0 * v, 0.0)).collect();
        let want = minus_ddbar(&grid, &uc);
        assert!(rho.max_diff(&want) < 1e-12);
        assert!(pluriclosed_residual(&g) > 1e-4);
    }

    #[test]
    fn non_pluriclosed_sample_detected() {
        let grid = grid16();
        let eps = 0.05;
        let g = MetricField::new(Tensor11::from_site_fn(&grid, |s| {
            let x = grid.coords(s);
            let mut m = SiteMat::identity(2);
            m.a[1][1] = C64::new((eps * x[0].sin() * x[1].sin()).exp(), 0.0);
            m
        }))
        .unwrap();
        assert!(pluriclosed_residual(&g) > 1e-3 * eps);
    }

    #[test]
    fn lee_is_minus_j_dstar() {
        let grid = grid16();
        let g = generate(&ScenarioSpec::new(ScenarioKind::PluriclosedAlpha), &grid).unwrap();
        let (_, _, dso) = dstar_omega(&g);
        let th = lee_form(&g);
        for a in 0..4 {
            let (b, sign) = j_image(a);
            for s in (0..grid.sites()).step_by(997) {
                assert!((th.comps[a][s] + sign * dso.comps[b][s]).abs() < 1e-15);
            }
        }
        assert!(th.max_abs() > 1e-4);
    }

    #[test]
    fn torsion3_closed_and_norm_constant() {
        let grid = grid16();
        let g = generate(&ScenarioSpec::new(ScenarioKind::PluriclosedAlpha).with_eps(0.1), &grid).unwrap();
        let t3 = torsion_3form(&g);
        assert!(exterior_d3(&t3).max_abs() < 1e-9);
        // |T3|^2 with the real metric equals 6 tr Q1 (the raw (2,1) contraction)
        let b = CurvatureBundle::new(&g).unwrap();
        let raw = tensor_norm_sq(&b.torsion, &g).unwrap();
        let real = crate::riemannian::form_norm_sq(&t3, &crate::riemannian::real_metric(&g));
        for s in (0..grid.sites()).step_by(1013) {
            let r = real[s];
            assert!((r - crate::conventions::T3_OVER_RAW * raw.values[s].re).abs() < 1e-12 * (1.0 + r));
        }
        let _ = volume_density(&g);
        let _ = ScalarField::constant(&grid, 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(6))]
        #[test]
        fn pluriclosed_data_invariants(seed in 0u64..1000, eps in 0.01f64..0.1) {
            let grid = make_grid(2, 8, DerivativeMode::Spectral).unwrap();
            let modes = vec![vec![1, 0, 0, 1], vec![0, 1, 1, 0], vec![1, 1, 0, 0]];
            let g = generate(&ScenarioSpec::new(ScenarioKind::PluriclosedAlpha).with_eps(eps).with_seed(seed).with_modes(modes), &grid).unwrap();
            let jet = MetricJet::new(&g);
            prop_assert!(jet.pluriclosed_residual() < 1e-12);
            let q = jet.q1();
            prop_assert!(par::min(grid.sites(), |s| q.at(s).herm_eigs().0) >= -1e-12);
            prop_assert!(jet.p11().hermitian_defect() < 1e-14);
            prop_assert!(jet.torsion().antisymmetry_defect() < 1e-15);
        }
    }
}
