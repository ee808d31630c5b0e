//! Slow reference implementations that the main path is checked against.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;

use crate::chern::MetricJet;
use crate::error::{PcfError, Result};
use crate::fields::{log_det, metric_inverse, trace_pair, MetricField, RealTensorField, SiteMat, Tensor11};
use crate::flow::Trajectory;
use crate::functionals::{calabi_contract, RiemannData};
use crate::grid::{Deriv, DerivativeMode};
use crate::par;
use crate::riemannian::RealGeometry;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// `S_{k lbar} = g^{i jbar} Omega_{i jbar k lbar}` from the connection:
/// `Gamma^l_{ik} = g^{l mbar} d_i g_{k mbar}`, `Omega_{i jbar k}^l = -d_jbar Gamma^l_{ik}`.
pub fn chern_curvature_s(g: &MetricField) -> Tensor11 {
    let grid = &g.grid;
    let n = g.n;
    let sites = grid.sites();
    let ginv = metric_inverse(g);
    // d_i g_{k mbar}, computed independently of the jet
    let mut dg = vec![Vec::new(); n * n * n];
    for k in 0..n {
        for m in 0..n {
            for i in 0..n {
                dg[(i * n + k) * n + m] = grid.derivative(g.comp(k, m), &[Deriv::Holo(i)]).unwrap();
            }
        }
    }
    // Gamma^l_{ik} at (l * n + i) * n + k
    let mut gamma = vec![Vec::new(); n * n * n];
    for l in 0..n {
        for i in 0..n {
            for k in 0..n {
                gamma[(l * n + i) * n + k] = par::map(sites, |s| {
                    (0..n)
                        .map(|m| ginv.get(l, m, s) * dg[(i * n + k) * n + m][s])
                        .sum()
                });
            }
        }
    }
    // d_jbar Gamma^p_{ik} at ((j * n + p) * n + i) * n + k
    let mut dgam = vec![Vec::new(); n.pow(4)];
    for j in 0..n {
        for p in 0..n {
            for i in 0..n {
                for k in 0..n {
                    dgam[((j * n + p) * n + i) * n + k] = grid
                        .derivative(&gamma[(p * n + i) * n + k], &[Deriv::Anti(j)])
                        .unwrap();
                }
            }
        }
    }
    Tensor11::from_site_fn(grid, |s| {
        let gi = ginv.at(s);
        let gs = g.at(s);
        let mut out = SiteMat::zeros(n);
        for k in 0..n {
            for l in 0..n {
                let mut acc = ZERO;
                for i in 0..n {
                    for j in 0..n {
                        for p in 0..n {
                            // Omega_{i jbar k lbar} = -d_jbar Gamma^p_{ik} g_{p lbar}
                            acc -= gi.a[i][j] * dgam[((j * n + p) * n + i) * n + k][s] * gs.a[p][l];
                        }
                    }
                }
                out.a[k][l] = acc;
            }
        }
        out
    })
}

/// Guard for dense oracles.
pub fn check_dense_size(sites: usize, limit: usize) -> Result<()> {
    if sites > limit {
        return Err(PcfError::Invalid(format!(
            "dense oracle limited to {limit} sites, grid has {sites}"
        )));
    }
    Ok(())
}

/// Largest grid the dense eigensolver accepts.
pub const DENSE_LIMIT: usize = 4096;

/// First-derivative matrix along one periodic axis of `m` points.
fn diff_matrix_1d(m: usize, period: f64, mode: DerivativeMode) -> Vec<Vec<f64>> {
    let h = period / m as f64;
    let mut d = vec![vec![0.0; m]; m];
    for j in 0..m {
        for k in 0..m {
            if j == k {
                continue;
            }
            let diff = j as i64 - k as i64;
            d[j][k] = match mode {
                DerivativeMode::Spectral => {
                    // periodic sinc differentiation, Nyquist mode dropped
                    let x = diff as f64 * h;
                    let sign = if diff.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
                    0.5 * sign / (0.5 * x * 2.0 * std::f64::consts::PI / period).tan()
                        * (2.0 * std::f64::consts::PI / period)
                }
                DerivativeMode::Central4 => {
                    let r = diff.rem_euclid(m as i64) as usize;
                    let w = if r == m - 1 {
                        8.0
                    } else if r == 1 {
                        -8.0
                    } else if r == m - 2 {
                        -1.0
                    } else if r == 2 {
                        1.0
                    } else {
                        0.0
                    };
                    w / (12.0 * h)
                }
            };
        }
    }
    d
}

/// Orthonormal real Fourier basis of one axis, columns
/// `[1, cos x, sin x, ..., cos (m/2-1)x, sin (m/2-1)x, nyquist]`.
fn real_fourier_1d(m: usize) -> Vec<Vec<f64>> {
    let mut f = vec![vec![0.0; m]; m];
    let tw = 2.0 * std::f64::consts::PI / m as f64;
    let a = (1.0 / m as f64).sqrt();
    let b = (2.0 / m as f64).sqrt();
    for j in 0..m {
        f[j][0] = a;
        for k in 1..m / 2 {
            f[j][2 * k - 1] = b * (tw * (k * j) as f64).cos();
            f[j][2 * k] = b * (tw * (k * j) as f64).sin();
        }
        f[j][m - 1] = if j % 2 == 0 { a } else { -a };
    }
    f
}

/// Replace every row index of `x` by its coefficients in the Kronecker basis.
fn transform_rows(x: &mut DMatrix<f64>, f1: &[Vec<f64>], stride: &[usize], m: usize) {
    let sites = x.nrows();
    let mut line = vec![0.0; m];
    for &st in stride {
        for col in 0..x.ncols() {
            for base in 0..sites {
                if (base / st) % m != 0 {
                    continue;
                }
                for (j, l) in line.iter_mut().enumerate() {
                    *l = x[(base + j * st, col)];
                }
                for c in 0..m {
                    let mut acc = 0.0;
                    for j in 0..m {
                        acc += f1[j][c] * line[j];
                    }
                    x[(base + c * st, col)] = acc;
                }
            }
        }
    }
}

/// Smallest eigenvalue of `-4 Delta_g + V` from the assembled dense matrix.
pub fn dense_ground_state(g: &MetricField, t3: &RealTensorField) -> Result<f64> {
    let rd = RiemannData::with_torsion(g, t3);
    dense_ground_state_for(&rd.geo, &rd.potential())
}

/// Assembles `K = 4 sum_ab D_a^T diag(sqrtG G^ab) D_b + diag(sqrtG V)` and
/// the mass `diag(sqrtG)`, moves both to a real Fourier basis, drops the
/// Nyquist directions and solves the generalized problem by Cholesky-based
/// inverse iteration.
pub fn dense_ground_state_for(geo: &RealGeometry, v: &[f64]) -> Result<f64> {
    let grid = &geo.grid;
    let sites = grid.sites();
    check_dense_size(sites, DENSE_LIMIT)?;
    let m = grid.points_per_axis();
    let dim = geo.dim;
    let d1 = diff_matrix_1d(m, grid.period(), grid.mode());
    let stride: Vec<usize> = (0..dim)
        .map(|a| {
            (1..sites)
                .find(|&s| (0..dim).all(|b| grid.index(s, b) == usize::from(a == b)))
                .expect("axis stride")
        })
        .collect();
    let mut k = DMatrix::<f64>::zeros(sites, sites);
    let mut mass = DMatrix::<f64>::zeros(sites, sites);
    for s in 0..sites {
        for a in 0..dim {
            for b in 0..dim {
                let w = 4.0 * geo.sqrt_det[s] * geo.ginv[s][a][b];
                if w == 0.0 {
                    continue;
                }
                let ia = grid.index(s, a);
                let ib = grid.index(s, b);
                for pa in 0..m {
                    let da = d1[ia][pa];
                    if da == 0.0 {
                        continue;
                    }
                    let i = s - ia * stride[a] + pa * stride[a];
                    for pb in 0..m {
                        let db = d1[ib][pb];
                        if db != 0.0 {
                            let j = s - ib * stride[b] + pb * stride[b];
                            k[(i, j)] += da * w * db;
                        }
                    }
                }
            }
        }
        k[(s, s)] += geo.sqrt_det[s] * v[s];
        mass[(s, s)] = geo.sqrt_det[s];
    }
    let f1 = real_fourier_1d(m);
    for mat in [&mut k, &mut mass] {
        transform_rows(mat, &f1, &stride, m);
        mat.transpose_mut();
        transform_rows(mat, &f1, &stride, m);
    }
    let keep: Vec<usize> = (0..sites)
        .filter(|&s| (0..dim).all(|a| (s / stride[a]) % m != m - 1))
        .collect();
    let r = keep.len();
    let kr = DMatrix::<f64>::from_fn(r, r, |i, j| 0.5 * (k[(keep[i], keep[j])] + k[(keep[j], keep[i])]));
    let mr = DMatrix::<f64>::from_fn(r, r, |i, j| 0.5 * (mass[(keep[i], keep[j])] + mass[(keep[j], keep[i])]));
    drop(k);
    drop(mass);
    let shift = v.iter().cloned().fold(f64::INFINITY, f64::min) - 1.0;
    let chol = (&kr - &mr * shift)
        .cholesky()
        .ok_or_else(|| PcfError::Invalid("shifted dense operator not positive definite".into()))?;
    // the constant function is the first basis vector
    let mut x = DVector::<f64>::zeros(r);
    x[0] = 1.0;
    let mut lam = f64::NAN;
    for _ in 0..500 {
        let y = chol.solve(&(&mr * &x));
        let nrm = y.dot(&(&mr * &y)).sqrt();
        x = y / nrm;
        let kx = &kr * &x;
        let mx = &mr * &x;
        lam = x.dot(&kx);
        let res = (&kx - &mx * lam).norm();
        if res < 1e-12 * (1.0 + lam.abs()) {
            return Ok(lam);
        }
    }
    Err(PcfError::NoConvergence(lam))
}

/// Direct minimization of `F(f) / int e^{-f} dV` over f by preconditioned
/// nonlinear conjugate gradients. Returns the minimum and the normalized f.
pub fn f_min(g: &MetricField, t3: &RealTensorField, tol: f64, max_it: usize) -> Result<(f64, Vec<f64>)> {
    let rd = RiemannData::with_torsion(g, t3);
    let geo = &rd.geo;
    let grid = &geo.grid;
    let sites = grid.sites();
    let dim = geo.dim;
    let v = rd.potential();
    let cell = grid.cell_volume();
    let real = |x: &[f64]| -> Vec<C64> { x.iter().map(|&r| C64::new(r, 0.0)).collect() };
    let deriv = |x: &[f64], a: usize| -> Vec<f64> {
        grid.derivative(&real(x), &[Deriv::Real(a)]).unwrap().iter().map(|c| c.re).collect()
    };
    // (J, dJ/df) with the exact discrete gradient
    let eval = |f: &[f64]| -> (f64, Vec<f64>) {
        let df: Vec<Vec<f64>> = (0..dim).map(|a| deriv(f, a)).collect();
        let ef: Vec<f64> = f.iter().map(|x| (-x).exp()).collect();
        let gn: Vec<f64> = (0..sites)
            .map(|s| {
                let mut q = 0.0;
                for a in 0..dim {
                    for b in 0..dim {
                        q += geo.ginv[s][a][b] * df[a][s] * df[b][s];
                    }
                }
                q
            })
            .collect();
        let fe = cell * (0..sites).map(|s| geo.sqrt_det[s] * (v[s] + gn[s]) * ef[s]).sum::<f64>();
        let z = cell * (0..sites).map(|s| geo.sqrt_det[s] * ef[s]).sum::<f64>();
        let j = fe / z;
        let mut grad: Vec<f64> = (0..sites)
            .map(|s| -cell * geo.sqrt_det[s] * (v[s] + gn[s] - j) * ef[s])
            .collect();
        for a in 0..dim {
            let q: Vec<f64> = (0..sites)
                .map(|s| {
                    (0..dim).map(|b| geo.sqrt_det[s] * geo.ginv[s][a][b] * df[b][s]).sum::<f64>() * ef[s]
                })
                .collect();
            let dq = deriv(&q, a);
            for s in 0..sites {
                grad[s] -= 2.0 * cell * dq[s];
            }
        }
        for x in grad.iter_mut() {
            *x /= z;
        }
        (j, grad)
    };
    let wbar = (0..sites).map(|s| geo.sqrt_det[s] * geo.ginv[s][0][0]).sum::<f64>() / sites as f64;
    let precond = |r: &[f64]| -> Vec<f64> {
        grid.fourier_multiply(&real(r), |s| {
            let k2: f64 = (0..dim).map(|a| grid.wavenumber(s, a).powi(2)).sum();
            C64::new(1.0 / (1.0 + 4.0 * wbar * k2), 0.0)
        })
        .iter()
        .map(|c| c.re)
        .collect()
    };
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut f = vec![crate::conventions::flat_volume(g.n).ln(); sites];
    let (mut j, mut gr) = eval(&f);
    let mut z = precond(&gr);
    let mut d: Vec<f64> = z.iter().map(|x| -x).collect();
    let mut rz = dot(&gr, &z);
    let mut step = 1.0 / (cell * sites as f64);
    for _ in 0..max_it {
        let slope = dot(&gr, &d);
        if slope >= 0.0 {
            d = z.iter().map(|x| -x).collect();
            continue;
        }
        // Armijo backtracking with a quadratic first guess
        let mut a = step;
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = f.iter().zip(&d).map(|(x, y)| x + a * y).collect();
            let (jt, gt) = eval(&trial);
            if jt <= j + 1e-4 * a * slope {
                accepted = Some((trial, jt, gt));
                break;
            }
            let aq = -slope * a * a / (2.0 * (jt - j - slope * a));
            a = if aq.is_finite() && aq > 0.1 * a && aq < 0.5 * a { aq } else { 0.5 * a };
        }
        let Some((nf, nj, ng)) = accepted else { break };
        let dj = j - nj;
        step = 2.0 * a;
        f = nf;
        j = nj;
        let nz = precond(&ng);
        let nrz = dot(&ng, &nz);
        let beta = ((nrz - dot(&ng, &z)) / rz).max(0.0);
        d = nz.iter().zip(&d).map(|(x, y)| -x + beta * y).collect();
        gr = ng;
        z = nz;
        rz = nrz;
        if dj.abs() < tol * (1.0 + j.abs()) && rz.abs().sqrt() < tol.sqrt() {
            break;
        }
    }
    // renormalize to int e^{-f} dV = 1
    let zf = cell * (0..sites).map(|s| geo.sqrt_det[s] * (-f[s]).exp()).sum::<f64>();
    let lz = zf.ln();
    Ok((j, f.iter().map(|x| x + lz).collect()))
}

/// Quantities with an evolution formula along the flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvolvedQuantity {
    /// `tr_gt g`
    TraceBackground,
    /// `log(det g / det gt)`
    LogVolumeRatio,
    /// `tr_g gt`
    TraceInverse,
}

impl EvolvedQuantity {
    pub fn evaluate(self, g: &MetricField, gt: &MetricField) -> Result<Vec<f64>> {
        Ok(match self {
            EvolvedQuantity::TraceBackground => trace_pair(gt, g)?.re(),
            EvolvedQuantity::TraceInverse => trace_pair(g, gt)?.re(),
            EvolvedQuantity::LogVolumeRatio => {
                let a = log_det(g);
                let b = log_det(gt);
                a.values.iter().zip(&b.values).map(|(x, y)| x.re - y.re).collect()
            }
        })
    }

    /// Coordinate right-hand side written out in metric derivatives.
    pub fn rhs(self, g: &MetricField, gt: &MetricField, psi: Option<&Tensor11>) -> Result<Vec<f64>> {
        let n = g.n;
        let jet = MetricJet::new(g);
        let zero = Tensor11::zeros(&g.grid);
        let psi = psi.unwrap_or(&zero);
        // T_{k m qbar} and conj(T_{l n pbar}) in raw derivatives
        let t = |k: usize, m: usize, q: usize, s: usize| jet.d(k, m, q, s) - jet.d(m, k, q, s);
        let tb = |l: usize, p: usize, nn: usize, s: usize| jet.db(l, p, nn, s) - jet.db(nn, p, l, s);
        let extra = match self {
            EvolvedQuantity::LogVolumeRatio => {
                let l = self.evaluate(g, gt)?;
                let ldt = log_det(gt).re();
                let a = crate::flow::chern_laplacian(g, &l);
                let b = crate::flow::chern_laplacian(g, &ldt);
                a.iter().zip(&b).map(|(x, y)| x + y).collect()
            }
            _ => vec![0.0; g.grid.sites()],
        };
        Ok(par::map(g.grid.sites(), |s| {
            let gi = g.at(s).raised();
            let gs = g.at(s);
            let ti = gt.at(s).raised();
            let ts = gt.at(s);
            let ps = psi.at(s);
            let mut acc = ZERO;
            match self {
                EvolvedQuantity::TraceBackground => {
                    for k in 0..n {
                        for l in 0..n {
                            for i in 0..n {
                                for j in 0..n {
                                    acc += ti.a[k][l] * gi.a[i][j] * jet.dd(i, j, k, l, s);
                                    for m in 0..n {
                                        for nn in 0..n {
                                            acc -= ti.a[k][l] * gi.a[i][j] * gi.a[m][nn]
                                                * jet.d(i, k, nn, s)
                                                * jet.db(j, m, l, s);
                                        }
                                    }
                                }
                            }
                            for m in 0..n {
                                for nn in 0..n {
                                    for p in 0..n {
                                        for q in 0..n {
                                            acc += ti.a[k][l] * gi.a[m][nn] * gi.a[p][q]
                                                * t(k, m, q, s)
                                                * tb(l, p, nn, s);
                                        }
                                    }
                                }
                            }
                            // <psi, omega>_gt
                            for p in 0..n {
                                for q in 0..n {
                                    acc -= ti.a[k][q] * ti.a[p][l] * ps.a[p][q] * gs.a[k][l];
                                }
                            }
                        }
                    }
                }
                EvolvedQuantity::LogVolumeRatio => {
                    for k in 0..n {
                        for l in 0..n {
                            for m in 0..n {
                                for nn in 0..n {
                                    for p in 0..n {
                                        for q in 0..n {
                                            acc += gi.a[k][l] * gi.a[m][nn] * gi.a[p][q]
                                                * t(k, m, q, s)
                                                * tb(l, p, nn, s);
                                        }
                                    }
                                }
                            }
                            acc -= ti.a[k][l] * ps.a[k][l];
                        }
                    }
                }
                EvolvedQuantity::TraceInverse => {
                    for i in 0..n {
                        for j in 0..n {
                            for p in 0..n {
                                for q in 0..n {
                                    let w = gi.a[i][q] * gi.a[p][j] * ts.a[i][j];
                                    for r in 0..n {
                                        for ss in 0..n {
                                            let mut inner = -jet.dd(r, ss, p, q, s);
                                            for u in 0..n {
                                                for v in 0..n {
                                                    inner += gi.a[u][v] * jet.d(r, p, v, s) * jet.db(ss, u, q, s);
                                                    inner -= gi.a[u][v]
                                                        * (jet.d(p, r, v, s) - jet.d(r, p, v, s))
                                                        * (jet.db(q, u, ss, s) - jet.db(ss, u, q, s));
                                                }
                                            }
                                            acc += w * gi.a[r][ss] * inner;
                                        }
                                    }
                                }
                            }
                            acc += gi.a[i][j] * ps.a[i][j];
                        }
                    }
                }
            }
            acc.re + extra[s]
        }))
    }
}

/// Centered time difference of a quantity minus its evolution formula,
/// sup over sites, at every interior sample `(k, t_k, residual)`.
pub fn fd_time_derivative(traj: &Trajectory, q: EvolvedQuantity) -> Result<Vec<(usize, f64, f64)>> {
    let dt = traj.uniform_dt()?;
    if traj.len() < 3 {
        return Err(PcfError::Invalid("need at least three samples".into()));
    }
    let vals: Vec<Vec<f64>> = traj
        .states
        .iter()
        .map(|st| q.evaluate(&st.g, &st.background()?))
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    for k in 1..traj.len() - 1 {
        let st = &traj.states[k];
        let rhs = q.rhs(&st.g, &st.background()?, st.ctx.psi.as_ref())?;
        let r = par::max(rhs.len(), |s| ((vals[k + 1][s] - vals[k - 1][s]) / (2.0 * dt) - rhs[s]).abs());
        out.push((k, st.t, r));
    }
    Ok(out)
}

/// Calabi density at one site from `h = G Gt^{-1}`:
/// `U_i = (d_i h - Ct_i h + h Ct_i) h^{-1}` with `Ct_i = d_i Gt Gt^{-1}`.
pub fn calabi_site(g: &MetricField, gt: &MetricField, site: usize) -> f64 {
    let n = g.n;
    let grid = &g.grid;
    let h = Tensor11::from_site_fn(grid, |s| g.at(s).mul(&gt.at(s).inverse()));
    let dmat = |t: &Tensor11, i: usize| -> SiteMat {
        let mut m = SiteMat::zeros(n);
        for k in 0..n {
            for l in 0..n {
                m.a[k][l] = grid.derivative(t.comp(k, l), &[Deriv::Holo(i)]).unwrap()[site];
            }
        }
        m
    };
    let hs = h.at(site);
    let hinv = hs.inverse();
    let gti = gt.at(site).inverse();
    let ups: Vec<SiteMat> = (0..n)
        .map(|i| {
            let ct = dmat(gt.tensor(), i).mul(&gti);
            let dh = dmat(&h, i);
            let a = ct.mul(&hs);
            let b = hs.mul(&ct);
            let mut m = SiteMat::zeros(n);
            for k in 0..n {
                for l in 0..n {
                    m.a[k][l] = dh.a[k][l] - a.a[k][l] + b.a[k][l];
                }
            }
            m.mul(&hinv)
        })
        .collect();
    calabi_contract(&g.at(site), &ups)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{run_trajectory, FlowContext, FlowState, FlowVariant, Scheme, StepControl};
    use crate::functionals::{calabi_w, lambda_for_potential, lambda_with, LambdaOptions};
    use crate::grid::make_grid;
    use crate::scenarios::{generate, ScenarioKind, ScenarioSpec};
    use std::sync::Arc;

    #[test]
    fn dense_trivial_cases() {
        let g = make_grid(1, 12, DerivativeMode::Spectral).unwrap();
        let geo = RealGeometry::from_hermitian(&MetricField::identity(&g));
        let z = dense_ground_state_for(&geo, &vec![0.0; g.sites()]).unwrap();
        assert!(z.abs() < 1e-10, "{z}");
        let m = dense_ground_state_for(&geo, &vec![-1.0; g.sites()]).unwrap();
        assert!((m + 1.0).abs() < 1e-10);
        let big = make_grid(2, 10, DerivativeMode::Spectral).unwrap();
        let geo = RealGeometry::from_hermitian(&MetricField::identity(&big));
        assert!(dense_ground_state_for(&geo, &vec![0.0; big.sites()]).is_err());
    }

    #[test]
    fn dense_matches_matrix_free_on_curved_data() {
        for mode in [DerivativeMode::Spectral, DerivativeMode::Central4] {
            let g = make_grid(1, 16, mode).unwrap();
            let c = generate(&ScenarioSpec::new(ScenarioKind::Conformal).with_eps(0.2), &g).unwrap();
            let rd = RiemannData::new(&c);
            let v = rd.potential();
            let dense = dense_ground_state_for(&rd.geo, &v).unwrap();
            let lam = lambda_for_potential(&rd.geo, v, None, &LambdaOptions::default()).unwrap();
            assert!((dense - lam.lambda).abs() < 1e-8, "{mode:?} {dense} {}", lam.lambda);
        }
    }

    #[test]
    fn f_min_matches_eigenvalue() {
        let g = make_grid(2, 16, DerivativeMode::Spectral).unwrap();
        let a = generate(&ScenarioSpec::new(ScenarioKind::PluriclosedAlpha).with_eps(0.1), &g).unwrap();
        let t3 = crate::chern::torsion_3form(&a);
        let rd = RiemannData::with_torsion(&a, &t3);
        let lam = lambda_with(&rd, None, &LambdaOptions::default()).unwrap();
        let (fm, f) = f_min(&a, &t3, 1e-13, 400).unwrap();
        assert!((fm - lam.lambda).abs() < 1e-6, "{fm} {}", lam.lambda);
        let df = f.iter().zip(&lam.f).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(df < 1e-3, "{df}");
    }

    #[test]
    fn calabi_site_matches_main_path() {
        let g = make_grid(2, 16, DerivativeMode::Spectral).unwrap();
        let a = generate(&ScenarioSpec::new(ScenarioKind::PluriclosedAlpha), &g).unwrap();
        let id = MetricField::identity(&g);
        let w = calabi_w(&a, &id);
        for s in [0, 777, 40000] {
            assert!((calabi_site(&a, &id, s) - w.values[s].re).abs() < 1e-12);
        }
        let k = generate(&ScenarioSpec::new(ScenarioKind::KahlerPotential).with_eps(0.05), &g).unwrap();
        let w = calabi_w(&a, &k);
        for s in [5, 1234] {
            let o = calabi_site(&a, &k, s);
            assert!((o - w.values[s].re).abs() < 1e-8 * (1.0 + o.abs()), "{o} {}", w.values[s].re);
        }
    }

    fn traj(kind: ScenarioKind, eps: f64, dt: f64, steps: usize) -> Trajectory {
        let g = make_grid(2, 16, DerivativeMode::Spectral).unwrap();
        let m = generate(&ScenarioSpec::new(kind).with_eps(eps), &g).unwrap();
        let ctx = Arc::new(FlowContext::flat(FlowVariant::Pcf, &m));
        run_trajectory(FlowState::initial(m, ctx, false), steps, dt, Scheme::Rk4, &StepControl::default()).unwrap()
    }

    #[test]
    fn evolution_formulas_flat() {
        let g = make_grid(2, 8, DerivativeMode::Spectral).unwrap();
        let m = MetricField::identity(&g);
        let ctx = Arc::new(FlowContext::flat(FlowVariant::Pcf, &m));
        let tr = run_trajectory(FlowState::initial(m, ctx, false), 2, 0.01, Scheme::Rk4, &StepControl::default()).unwrap();
        for q in [EvolvedQuantity::TraceBackground, EvolvedQuantity::LogVolumeRatio, EvolvedQuantity::TraceInverse] {
            for (_, _, r) in fd_time_derivative(&tr, q).unwrap() {
                assert!(r < 1e-14);
            }
        }
    }

    #[test]
    fn evolution_formulas_converge() {
        let dt = 0.25 * 0.0154;
        for (kind, q, tol) in [
            (ScenarioKind::KahlerPotential, EvolvedQuantity::LogVolumeRatio, 1e-5),
            (ScenarioKind::PluriclosedAlpha, EvolvedQuantity::TraceBackground, 1e-4),
            (ScenarioKind::PluriclosedAlpha, EvolvedQuantity::TraceInverse, 1e-4),
        ] {
            let r1 = fd_time_derivative(&traj(kind, 0.1, dt, 2), q).unwrap()[0].2;
            let r2 = fd_time_derivative(&traj(kind, 0.1, dt / 2.0, 2), q).unwrap()[0].2;
            assert!(r1 < tol, "{q:?} {r1}");
            assert!(r1 / r2 > 3.0, "{q:?} {r1} {r2}");
        }
    }

    #[test]
    fn evolution_formulas_with_moving_background() {
        let g = make_grid(2, 16, DerivativeMode::Spectral).unwrap();
        let m = generate(&ScenarioSpec::new(ScenarioKind::PluriclosedAlpha).with_eps(0.1), &g).unwrap();
        let bg = generate(&ScenarioSpec::new(ScenarioKind::KahlerPotential).with_eps(0.05), &g).unwrap();
        let psi = generate(&ScenarioSpec::new(ScenarioKind::KahlerPotential).with_eps(0.02), &g)
            .unwrap()
            .axpy(-1.0, &MetricField::identity(&g));
        let id = MetricField::identity(&g);
        let ctx = Arc::new(FlowContext::new(FlowVariant::Pcf, bg, Some(psi), id, m.clone()));
        let dt = 0.25 * 0.0154;
        let tr = run_trajectory(FlowState::initial(m, ctx, false), 2, dt, Scheme::Rk4, &StepControl::default()).unwrap();
        for q in [EvolvedQuantity::TraceBackground, EvolvedQuantity::LogVolumeRatio, EvolvedQuantity::TraceInverse] {
            let r = fd_time_derivative(&tr, q).unwrap()[0].2;
            assert!(r < 1e-4, "{q:?} {r}");
        }
    }
}
