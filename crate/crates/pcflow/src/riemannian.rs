//! Riemannian quantities of the real metric underlying a Hermitian metric.

use nalgebra::{Matrix2, Matrix4};
use num_complex::Complex64 as C64;

use crate::chern::{exterior_d2, exterior_d3, lee_form, torsion_3form, MetricJet};
use crate::fields::{real_metric_site, MetricField, RealTensorField, Tensor11};
use crate::grid::{ComplexTorusGrid, Deriv, Prepared, ScalarField};
use crate::par;

type M4 = [[f64; 4]; 4];

fn to_c(f: &[f64]) -> Vec<C64> {
    f.iter().map(|&v| C64::new(v, 0.0)).collect()
}

fn inv_small(m: &M4, dim: usize) -> (M4, f64) {
    let mut r = [[0.0; 4]; 4];
    if dim == 2 {
        let a = Matrix2::new(m[0][0], m[0][1], m[1][0], m[1][1]);
        let d = a.determinant();
        let i = a.try_inverse().unwrap_or_else(|| Matrix2::from_element(f64::NAN));
        for x in 0..2 {
            for y in 0..2 {
                r[x][y] = i[(x, y)];
            }
        }
        (r, d)
    } else {
        let a = Matrix4::from_fn(|x, y| m[x][y]);
        let d = a.determinant();
        let i = a.try_inverse().unwrap_or_else(|| Matrix4::from_element(f64::NAN));
        for x in 0..4 {
            for y in 0..4 {
                r[x][y] = i[(x, y)];
            }
        }
        (r, d)
    }
}

/// Real metric, its inverse and volume density at every site.
pub struct RealGeometry {
    pub grid: ComplexTorusGrid,
    pub dim: usize,
    pub g: Vec<M4>,
    pub ginv: Vec<M4>,
    pub sqrt_det: Vec<f64>,
}

impl RealGeometry {
    pub fn new(metric: &RealTensorField) -> Self {
        let dim = metric.dim;
        let sites = metric.grid.sites();
        let g: Vec<M4> = par::map(sites, |s| {
            let mut m = [[0.0; 4]; 4];
            for a in 0..dim {
                for b in 0..dim {
                    m[a][b] = metric.comps[a * dim + b][s];
                }
            }
            m
        });
        let inv: Vec<(M4, f64)> = par::map(sites, |s| inv_small(&g[s], dim));
        RealGeometry {
            grid: metric.grid.clone(),
            dim,
            g,
            ginv: inv.iter().map(|x| x.0).collect(),
            sqrt_det: inv.iter().map(|x| x.1.sqrt()).collect(),
        }
    }

    pub fn from_hermitian(g: &MetricField) -> Self {
        Self::new(&real_metric(g))
    }

    pub fn metric_tensor(&self) -> RealTensorField {
        let mut t = RealTensorField::zeros(&self.grid, 2);
        for a in 0..self.dim {
            for b in 0..self.dim {
                t.comps[a * self.dim + b] = self.g.iter().map(|m| m[a][b]).collect();
            }
        }
        t
    }

    /// `Gamma^a_{bc}` at `(a * dim + b) * dim + c`.
    pub fn christoffel(&self) -> Vec<Vec<f64>> {
        let dim = self.dim;
        let sites = self.grid.sites();
        // d_c G_{ab} at (a * dim + b) * dim + c
        let mut dgm = vec![Vec::new(); dim * dim * dim];
        for a in 0..dim {
            for b in a..dim {
                let comp: Vec<f64> = self.g.iter().map(|m| m[a][b]).collect();
                let p = self.grid.prepare(&to_c(&comp));
                for c in 0..dim {
                    let d: Vec<f64> = p.apply(&[Deriv::Real(c)]).iter().map(|v| v.re).collect();
                    dgm[(b * dim + a) * dim + c] = d.clone();
                    dgm[(a * dim + b) * dim + c] = d;
                }
            }
        }
        let mut gam = vec![Vec::new(); dim * dim * dim];
        for a in 0..dim {
            for b in 0..dim {
                for c in b..dim {
                    let v = par::map(sites, |s| {
                        let gi = &self.ginv[s];
                        (0..dim)
                            .map(|d| {
                                0.5 * gi[a][d]
                                    * (dgm[(d * dim + c) * dim + b][s] + dgm[(d * dim + b) * dim + c][s]
                                        - dgm[(b * dim + c) * dim + d][s])
                            })
                            .sum()
                    });
                    gam[(a * dim + c) * dim + b] = v.clone();
                    gam[(a * dim + b) * dim + c] = v;
                }
            }
        }
        gam
    }

    /// Levi-Civita Ricci tensor and scalar curvature.
    pub fn ricci(&self) -> (RealTensorField, Vec<f64>) {
        let gam = self.christoffel();
        self.ricci_from(&gam)
    }

    pub fn ricci_from(&self, gam: &[Vec<f64>]) -> (RealTensorField, Vec<f64>) {
        let dim = self.dim;
        let sites = self.grid.sites();
        let one = C64::new(1.0, 0.0);
        let prep: Vec<Prepared> = gam.iter().map(|c| self.grid.prepare(&to_c(c))).collect();
        // V_b = Gamma^a_{ab}
        let v: Vec<Vec<f64>> = (0..dim)
            .map(|b| par::map(sites, |s| (0..dim).map(|a| gam[(a * dim + a) * dim + b][s]).sum()))
            .collect();
        let vp: Vec<Prepared> = v.iter().map(|c| self.grid.prepare(&to_c(c))).collect();
        let mut ric = RealTensorField::zeros(&self.grid, 2);
        let g = |a: usize, b: usize, c: usize, s: usize| gam[(a * dim + b) * dim + c][s];
        for b in 0..dim {
            for c in b..dim {
                let ops: Vec<[Deriv; 1]> = (0..dim).map(|a| [Deriv::Real(a)]).collect();
                let mut terms: Vec<(C64, &Prepared, &[Deriv])> = (0..dim)
                    .map(|a| (one, &prep[(a * dim + b) * dim + c], &ops[a][..]))
                    .collect();
                let dc = [Deriv::Real(c)];
                terms.push((-one, &vp[b], &dc[..]));
                let lin = self.grid.combine(&terms);
                let r = par::map(sites, |s| {
                    let mut q = lin[s].re;
                    for a in 0..dim {
                        for d in 0..dim {
                            q += g(a, a, d, s) * g(d, b, c, s) - g(a, c, d, s) * g(d, a, b, s);
                        }
                    }
                    q
                });
                ric.comps[c * dim + b] = r.clone();
                ric.comps[b * dim + c] = r;
            }
        }
        let scal = par::map(sites, |s| {
            let gi = &self.ginv[s];
            let mut acc = 0.0;
            for a in 0..dim {
                for b in 0..dim {
                    acc += gi[a][b] * ric.comps[a * dim + b][s];
                }
            }
            acc
        });
        (ric, scal)
    }

    /// Raise every index of a real tensor.
    pub fn raise_all(&self, t: &RealTensorField) -> RealTensorField {
        let dim = self.dim;
        let mut cur = t.clone();
        for slot in 0..t.rank {
            let mut next = RealTensorField::zeros(&t.grid, t.rank);
            let stride = dim.pow((t.rank - 1 - slot) as u32);
            for c in 0..cur.comps.len() {
                let a = (c / stride) % dim;
                let base = c - a * stride;
                next.comps[c] = par::map(t.grid.sites(), |s| {
                    let gi = &self.ginv[s];
                    (0..dim).map(|b| gi[a][b] * cur.comps[base + b * stride][s]).sum()
                });
            }
            cur = next;
        }
        cur
    }

    fn lower_all(&self, t: &RealTensorField) -> RealTensorField {
        let dim = self.dim;
        let mut cur = t.clone();
        for slot in 0..t.rank {
            let mut next = RealTensorField::zeros(&t.grid, t.rank);
            let stride = dim.pow((t.rank - 1 - slot) as u32);
            for c in 0..cur.comps.len() {
                let a = (c / stride) % dim;
                let base = c - a * stride;
                next.comps[c] = par::map(t.grid.sites(), |s| {
                    let gm = &self.g[s];
                    (0..dim).map(|b| gm[a][b] * cur.comps[base + b * stride][s]).sum()
                });
            }
            cur = next;
        }
        cur
    }

    /// Full contraction `t_{a..} t^{a..}`.
    pub fn norm_sq(&self, t: &RealTensorField) -> Vec<f64> {
        let up = self.raise_all(t);
        par::map(t.grid.sites(), |s| {
            t.comps.iter().zip(&up.comps).map(|(a, b)| a[s] * b[s]).sum()
        })
    }

    /// Codifferential of a p-form: `(d* b)_{c..} = -(1/sqrtG) d_a (sqrtG b^{a c..})`, lowered.
    pub fn codifferential(&self, form: &RealTensorField) -> RealTensorField {
        let dim = self.dim;
        let p = form.rank;
        let sites = self.grid.sites();
        let up = self.raise_all(form);
        let weighted: Vec<Prepared> = up
            .comps
            .iter()
            .map(|c| self.grid.prepare(&to_c(&par::map(sites, |s| c[s] * self.sqrt_det[s]))))
            .collect();
        let mut div = RealTensorField::zeros(&self.grid, p - 1);
        let tail = dim.pow((p - 1) as u32);
        let ops: Vec<[Deriv; 1]> = (0..dim).map(|a| [Deriv::Real(a)]).collect();
        for rest in 0..tail {
            let terms: Vec<(C64, &Prepared, &[Deriv])> = (0..dim)
                .map(|a| (C64::new(-1.0, 0.0), &weighted[a * tail + rest], &ops[a][..]))
                .collect();
            let d = self.grid.combine(&terms);
            div.comps[rest] = par::map(sites, |s| d[s].re / self.sqrt_det[s]);
        }
        if p == 1 {
            return div;
        }
        self.lower_all(&div)
    }

    /// `Delta u = (1/sqrtG) d_a (sqrtG G^{ab} d_b u)`.
    pub fn laplacian(&self, u: &[f64]) -> Vec<f64> {
        let dim = self.dim;
        let sites = self.grid.sites();
        let p = self.grid.prepare(&to_c(u));
        let du: Vec<Vec<f64>> = (0..dim)
            .map(|b| p.apply(&[Deriv::Real(b)]).iter().map(|v| v.re).collect())
            .collect();
        let flux: Vec<Prepared> = (0..dim)
            .map(|a| {
                self.grid.prepare(&to_c(&par::map(sites, |s| {
                    let gi = &self.ginv[s];
                    self.sqrt_det[s] * (0..dim).map(|b| gi[a][b] * du[b][s]).sum::<f64>()
                })))
            })
            .collect();
        let ops: Vec<[Deriv; 1]> = (0..dim).map(|a| [Deriv::Real(a)]).collect();
        let terms: Vec<(C64, &Prepared, &[Deriv])> = (0..dim)
            .map(|a| (C64::new(1.0, 0.0), &flux[a], &ops[a][..]))
            .collect();
        let d = self.grid.combine(&terms);
        par::map(sites, |s| d[s].re / self.sqrt_det[s])
    }

    /// Real gradient covector of a scalar.
    pub fn gradient(&self, u: &[f64]) -> Vec<Vec<f64>> {
        let p = self.grid.prepare(&to_c(u));
        (0..self.dim)
            .map(|b| p.apply(&[Deriv::Real(b)]).iter().map(|v| v.re).collect())
            .collect()
    }

    /// `|du|^2 = G^{ab} d_a u d_b u`.
    pub fn grad_norm_sq(&self, u: &[f64]) -> Vec<f64> {
        let du = self.gradient(u);
        par::map(self.grid.sites(), |s| {
            let gi = &self.ginv[s];
            let mut acc = 0.0;
            for a in 0..self.dim {
                for b in 0..self.dim {
                    acc += gi[a][b] * du[a][s] * du[b][s];
                }
            }
            acc
        })
    }

    /// Hessian `d_a d_b f - Gamma^c_{ab} d_c f`.
    pub fn hessian(&self, f: &[f64], gam: &[Vec<f64>]) -> RealTensorField {
        let dim = self.dim;
        let p = self.grid.prepare(&to_c(f));
        let df = self.gradient(f);
        let mut h = RealTensorField::zeros(&self.grid, 2);
        for a in 0..dim {
            for b in a..dim {
                let dd = p.apply(&[Deriv::Real(a), Deriv::Real(b)]);
                let v = par::map(self.grid.sites(), |s| {
                    dd[s].re - (0..dim).map(|c| gam[(c * dim + a) * dim + b][s] * df[c][s]).sum::<f64>()
                });
                h.comps[b * dim + a] = v.clone();
                h.comps[a * dim + b] = v;
            }
        }
        h
    }
}

/// Realification of a Hermitian (1,1) tensor with the metric convention.
pub fn realify(t: &Tensor11) -> RealTensorField {
    let dim = 2 * t.n;
    let mats = par::map(t.grid.sites(), |s| real_metric_site(&t.at(s)));
    let mut r = RealTensorField::zeros(&t.grid, 2);
    for a in 0..dim {
        for b in 0..dim {
            r.comps[a * dim + b] = mats.iter().map(|m| m[a][b]).collect();
        }
    }
    r
}

pub fn real_metric(g: &MetricField) -> RealTensorField {
    realify(g.tensor())
}

/// Levi-Civita Ricci tensor and scalar curvature of a real metric.
pub fn levi_civita(metric: &RealTensorField) -> (RealTensorField, ScalarField) {
    let geo = RealGeometry::new(metric);
    let (ric, r) = geo.ricci();
    (ric, ScalarField::new(&metric.grid, to_c(&r)).expect("site count"))
}

/// Full contraction of a real tensor with the given metric.
pub fn form_norm_sq(t: &RealTensorField, metric: &RealTensorField) -> Vec<f64> {
    RealGeometry::new(metric).norm_sq(t)
}

/// `H_ij = g^{kl} g^{mn} T_{ikm} T_{jln}`.
pub fn h_contraction(t3: &RealTensorField, metric: &RealTensorField) -> RealTensorField {
    let geo = RealGeometry::new(metric);
    h_contraction_geo(t3, &geo)
}

pub fn h_contraction_geo(t3: &RealTensorField, geo: &RealGeometry) -> RealTensorField {
    let dim = geo.dim;
    let mut h = RealTensorField::zeros(&geo.grid, 2);
    let t = |a: usize, b: usize, c: usize, s: usize| t3.comps[(a * dim + b) * dim + c][s];
    for i in 0..dim {
        for j in i..dim {
            let v = par::map(geo.grid.sites(), |s| {
                let gi = &geo.ginv[s];
                let mut acc = 0.0;
                for k in 0..dim {
                    for l in 0..dim {
                        for m in 0..dim {
                            for n in 0..dim {
                                acc += gi[k][l] * gi[m][n] * t(i, k, m, s) * t(j, l, n, s);
                            }
                        }
                    }
                }
                acc
            });
            h.comps[j * dim + i] = v.clone();
            h.comps[i * dim + j] = v;
        }
    }
    h
}

/// `(L_X g)_ab = D_a X_b + D_b X_a` for a vector field X.
pub fn lie_derivative_metric(x: &RealTensorField, metric: &RealTensorField) -> RealTensorField {
    let geo = RealGeometry::new(metric);
    let dim = geo.dim;
    let mut low = RealTensorField::zeros(&x.grid, 1);
    for a in 0..dim {
        low.comps[a] = par::map(x.grid.sites(), |s| {
            (0..dim).map(|b| geo.g[s][a][b] * x.comps[b][s]).sum()
        });
    }
    lie_derivative_covector(&low, &geo, &geo.christoffel())
}

/// `D_a w_b + D_b w_a` for a covector w.
pub fn lie_derivative_covector(w: &RealTensorField, geo: &RealGeometry, gam: &[Vec<f64>]) -> RealTensorField {
    let dim = geo.dim;
    let dw: Vec<Vec<Vec<f64>>> = w.comps.iter().map(|c| geo.gradient(c)).collect();
    let mut out = RealTensorField::zeros(&geo.grid, 2);
    for a in 0..dim {
        for b in a..dim {
            let v = par::map(geo.grid.sites(), |s| {
                dw[b][a][s] + dw[a][b][s]
                    - 2.0 * (0..dim).map(|c| gam[(c * dim + a) * dim + b][s] * w.comps[c][s]).sum::<f64>()
            });
            out.comps[b * dim + a] = v.clone();
            out.comps[a * dim + b] = v;
        }
    }
    out
}

/// sup | -H + Rc - H_T/4 + L_theta g / 2 | where H is the realified P11.
pub fn gauge_identity_residual(g: &MetricField) -> f64 {
    let geo = RealGeometry::from_hermitian(g);
    let gam = geo.christoffel();
    let (ric, _) = geo.ricci_from(&gam);
    let p = MetricJet::new(g).p11();
    let hp = realify(&p);
    let t3 = torsion_3form(g);
    let hh = h_contraction_geo(&t3, &geo);
    let lie = lie_derivative_covector(&lee_form(g), &geo, &gam);
    let rhs = ric.axpy(-0.25, &hh).axpy(0.5, &lie);
    rhs.max_diff(&hp)
}

/// Hodge Laplacian with the analyst's sign, `-(d d* + d* d)`, on 3-forms.
pub fn hodge_laplacian_3(t: &RealTensorField, geo: &RealGeometry) -> RealTensorField {
    let a = exterior_d2(&geo.codifferential(t));
    let b = geo.codifferential(&exterior_d3(t));
    let mut out = a.axpy(1.0, &b);
    for c in out.comps.iter_mut() {
        for v in c.iter_mut() {
            *v = -*v;
        }
    }
    out
}

/// Interior product `(grad f) _| T` of a 3-form.
fn interior_grad(t: &RealTensorField, f: &[f64], geo: &RealGeometry) -> RealTensorField {
    let dim = geo.dim;
    let df = geo.gradient(f);
    let mut out = RealTensorField::zeros(&geo.grid, 2);
    for b in 0..dim {
        for c in 0..dim {
            out.comps[b * dim + c] = par::map(geo.grid.sites(), |s| {
                let gi = &geo.ginv[s];
                let mut acc = 0.0;
                for a in 0..dim {
                    let va: f64 = (0..dim).map(|e| gi[a][e] * df[e][s]).sum();
                    acc += va * t.comps[(a * dim + b) * dim + c][s];
                }
                acc
            });
        }
    }
    out
}

/// `(sup |Rc - H/4 + Hess f - lam g|, sup |Delta T - d(grad f _| T)|)`.
pub fn soliton_residual(g: &MetricField, t3: &RealTensorField, f: &[f64], lam: f64) -> (f64, f64) {
    let geo = RealGeometry::from_hermitian(g);
    let gam = geo.christoffel();
    let (ric, _) = geo.ricci_from(&gam);
    let hh = h_contraction_geo(t3, &geo);
    let hess = geo.hessian(f, &gam);
    let first = ric
        .axpy(-0.25, &hh)
        .axpy(1.0, &hess)
        .axpy(-lam, &geo.metric_tensor())
        .max_abs();
    let second = if geo.dim == 4 {
        let lap = hodge_laplacian_3(t3, &geo);
        lap.axpy(-1.0, &exterior_d2(&interior_grad(t3, f, &geo))).max_abs()
    } else {
        0.0
    };
    (first, second)
}
