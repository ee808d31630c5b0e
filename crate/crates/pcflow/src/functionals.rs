//! Scalar functionals and monitors evaluated on a single metric or along a
//! trajectory.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::chern::{chern_ricci, torsion_3form, MetricJet};
use crate::error::{PcfError, Result};
use crate::fields::{log_det, trace_pair, volume_density, FormField, MetricField, SiteMat};
use crate::flow::{psi_norm, FlowState, Trajectory};
use crate::grid::{Deriv, ScalarField};
use crate::par;
use crate::riemannian::RealGeometry;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Real geometry plus scalar curvature and |T|^2 of one metric.
pub struct RiemannData {
    pub geo: RealGeometry,
    pub scalar: Vec<f64>,
    pub t3_sq: Vec<f64>,
}

impl RiemannData {
    pub fn new(g: &MetricField) -> Self {
        let t3 = (g.n == 2).then(|| torsion_3form(g));
        Self::build(g, t3.as_ref())
    }

    pub fn with_torsion(g: &MetricField, t3: &crate::fields::RealTensorField) -> Self {
        Self::build(g, Some(t3))
    }

    fn build(g: &MetricField, t3: Option<&crate::fields::RealTensorField>) -> Self {
        let geo = RealGeometry::from_hermitian(g);
        let (_, scalar) = geo.ricci();
        let t3_sq = match t3 {
            Some(t) => geo.norm_sq(t),
            None => vec![0.0; g.grid.sites()],
        };
        RiemannData { geo, scalar, t3_sq }
    }

    /// Schrodinger potential `R - |T|^2 / 12`.
    pub fn potential(&self) -> Vec<f64> {
        par::map(self.scalar.len(), |s| self.scalar[s] - self.t3_sq[s] / 12.0)
    }

    pub fn integrate(&self, f: &[f64]) -> f64 {
        self.geo.grid.cell_volume() * par::sum(f.len(), |s| f[s] * self.geo.sqrt_det[s])
    }
}

/// `F = int [R - |T|^2/12 + |grad f|^2] e^{-f} dV`.
pub fn f_energy(g: &MetricField, t3: &crate::fields::RealTensorField, f: &[f64]) -> f64 {
    f_energy_with(&RiemannData::with_torsion(g, t3), f)
}

pub fn f_energy_with(rd: &RiemannData, f: &[f64]) -> f64 {
    let v = rd.potential();
    let gf = rd.geo.grad_norm_sq(f);
    let dens = par::map(f.len(), |s| (v[s] + gf[s]) * (-f[s]).exp());
    rd.integrate(&dens)
}

/// Ground state of `-4 Delta + V`.
#[derive(Debug, Clone)]
pub struct LambdaResult {
    pub lambda: f64,
    /// positive ground state with `int u^2 dV = 1`
    pub u: Vec<f64>,
    /// `f = -2 log u`
    pub f: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct LambdaOptions {
    pub tol: f64,
    pub max_outer: usize,
    pub max_inner: usize,
}

impl Default for LambdaOptions {
    fn default() -> Self {
        LambdaOptions {
            tol: 1e-9,
            max_outer: 200,
            max_inner: 400,
        }
    }
}

/// The first-derivative symbols drop the Nyquist frequency, so checkerboard
/// modes carry no kinetic energy and would sit spuriously close to the ground
/// state. The eigenproblem is posed on the Nyquist-free subspace.
pub fn nyquist_free(grid: &crate::grid::ComplexTorusGrid, s: usize) -> bool {
    let half = grid.points_per_axis() / 2;
    (0..grid.real_dim()).all(|a| grid.index(s, a) != half)
}

struct Schrodinger<'a> {
    geo: &'a RealGeometry,
    v: Vec<f64>,
    shift: f64,
    precond: Vec<f64>,
}

impl<'a> Schrodinger<'a> {
    fn new(geo: &'a RealGeometry, v: Vec<f64>) -> Self {
        let sites = geo.grid.sites();
        let dim = geo.dim;
        let shift = v.iter().cloned().fold(f64::INFINITY, f64::min) - 1.0;
        let mean = |f: &(dyn Fn(usize) -> f64 + Sync)| par::sum(sites, f) / sites as f64;
        let mut wbar = [[0.0; 4]; 4];
        for a in 0..dim {
            for b in 0..dim {
                wbar[a][b] = mean(&|s| geo.sqrt_det[s] * geo.ginv[s][a][b]);
            }
        }
        let cbar = mean(&|s| geo.sqrt_det[s] * (v[s] - shift));
        let grid = &geo.grid;
        let precond = par::map(sites, |s| {
            let mut q = cbar;
            for a in 0..dim {
                for b in 0..dim {
                    q += 4.0 * wbar[a][b] * grid.wavenumber(s, a) * grid.wavenumber(s, b);
                }
            }
            if nyquist_free(grid, s) {
                1.0 / q
            } else {
                0.0
            }
        });
        Schrodinger {
            geo,
            v,
            shift,
            precond,
        }
    }

    /// `H u = -4 Delta u + V u`.
    fn h(&self, u: &[f64]) -> Vec<f64> {
        let lap = self.geo.laplacian(u);
        par::map(u.len(), |s| -4.0 * lap[s] + self.v[s] * u[s])
    }

    /// Orthogonal projection onto the Nyquist-free subspace.
    fn proj(&self, x: &[f64]) -> Vec<f64> {
        let grid = &self.geo.grid;
        let c: Vec<C64> = x.iter().map(|&v| C64::new(v, 0.0)).collect();
        grid.fourier_multiply(&c, |s| C64::new(if nyquist_free(grid, s) { 1.0 } else { 0.0 }, 0.0))
            .iter()
            .map(|v| v.re)
            .collect()
    }

    /// `P sqrtG (H - shift) P`, symmetric positive definite on the subspace.
    fn a(&self, u: &[f64]) -> Vec<f64> {
        let hu = self.h(u);
        self.proj(&par::map(u.len(), |s| self.geo.sqrt_det[s] * (hu[s] - self.shift * u[s])))
    }

    fn m_inv(&self, r: &[f64]) -> Vec<f64> {
        let c: Vec<C64> = r.iter().map(|&v| C64::new(v, 0.0)).collect();
        self.geo
            .grid
            .fourier_multiply(&c, |s| C64::new(self.precond[s], 0.0))
            .iter()
            .map(|v| v.re)
            .collect()
    }

    fn wdot(&self, a: &[f64], b: &[f64]) -> f64 {
        par::sum(a.len(), |s| a[s] * b[s] * self.geo.sqrt_det[s])
    }

    /// Preconditioned CG on `A x = b` from the initial guess `x`.
    fn solve(&self, b: &[f64], mut x: Vec<f64>, tol: f64, max_it: usize) -> Vec<f64> {
        let dot = |p: &[f64], q: &[f64]| par::sum(p.len(), |s| p[s] * q[s]);
        let ax = self.a(&x);
        let mut r: Vec<f64> = par::map(b.len(), |s| b[s] - ax[s]);
        let bn = dot(b, b).sqrt().max(f64::MIN_POSITIVE);
        let mut z = self.m_inv(&r);
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        for _ in 0..max_it {
            if dot(&r, &r).sqrt() <= tol * bn {
                break;
            }
            let ap = self.a(&p);
            let alpha = rz / dot(&p, &ap);
            par::fill(&mut x, |s, v| *v += alpha * p[s]);
            par::fill(&mut r, |s, v| *v -= alpha * ap[s]);
            z = self.m_inv(&r);
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            par::fill(&mut p, |s, v| *v = z[s] + beta * *v);
        }
        x
    }
}

/// `lambda = inf F` as the smallest eigenvalue of `-4 Delta + R - |T|^2/12`,
/// by shifted inverse iteration with a preconditioned CG inner solve.
pub fn lambda_eig(g: &MetricField, t3: &crate::fields::RealTensorField) -> Result<(f64, ScalarField)> {
    let rd = RiemannData::with_torsion(g, t3);
    let r = lambda_with(&rd, None, &LambdaOptions::default())?;
    Ok((r.lambda, ScalarField::new(&g.grid, r.f.iter().map(|&v| C64::new(v, 0.0)).collect())?))
}

pub fn lambda_with(rd: &RiemannData, warm: Option<&[f64]>, opts: &LambdaOptions) -> Result<LambdaResult> {
    lambda_for_potential(&rd.geo, rd.potential(), warm, opts)
}

pub fn lambda_for_potential(
    geo: &RealGeometry,
    v: Vec<f64>,
    warm: Option<&[f64]>,
    opts: &LambdaOptions,
) -> Result<LambdaResult> {
    let sites = geo.grid.sites();
    let op = Schrodinger::new(geo, v);
    let mut u: Vec<f64> = match warm {
        Some(w) if w.len() == sites => op.proj(w),
        _ => vec![1.0; sites],
    };
    let normalize = |u: &mut Vec<f64>| {
        let n = (op.wdot(u, u) * geo.grid.cell_volume()).sqrt();
        let sign = if u.iter().sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
        par::fill(u, |_, v| *v *= sign / n);
    };
    normalize(&mut u);
    let rayleigh = |u: &[f64]| {
        let hu = op.h(u);
        let lam = op.wdot(u, &hu) / op.wdot(u, u);
        // residual of the projected problem, measured in the dual W-norm
        let res = op.proj(&par::map(sites, |s| geo.sqrt_det[s] * (hu[s] - lam * u[s])));
        let rn = (par::sum(sites, |s| res[s] * res[s] / geo.sqrt_det[s]) / op.wdot(u, u)).sqrt();
        (lam, rn)
    };
    let (mut lam, mut res) = rayleigh(&u);
    let mut it = 0;
    while res > opts.tol * (1.0 + lam.abs()) && it < opts.max_outer {
        let b = op.proj(&par::map(sites, |s| geo.sqrt_det[s] * u[s]));
        let guess: Vec<f64> = u.iter().map(|v| v / (lam - op.shift)).collect();
        u = op.solve(&b, guess, 1e-3 * opts.tol, opts.max_inner);
        normalize(&mut u);
        (lam, res) = rayleigh(&u);
        it += 1;
    }
    if res > opts.tol * (1.0 + lam.abs()) {
        return Err(PcfError::NoConvergence(res));
    }
    if u.iter().any(|&x| !(x > 0.0)) {
        return Err(PcfError::Invalid("ground state changed sign".into()));
    }
    let f = u.iter().map(|x| -2.0 * x.ln()).collect();
    Ok(LambdaResult {
        lambda: lam,
        u,
        f,
        residual: res,
        iterations: it,
    })
}

fn check_density(u: &[f64], sigma: f64) -> Result<()> {
    if !(sigma > 0.0) {
        return Err(PcfError::Invalid(format!("sigma = {sigma} must be positive")));
    }
    if let Some(s) = u.iter().position(|&v| !(v > 0.0)) {
        return Err(PcfError::Invalid(format!("u not positive at site {s}")));
    }
    Ok(())
}

/// `int [sigma (|grad u|^2/u + R u - |T|^2 u/12) + u log u] dV`.
pub fn w_plus(g: &MetricField, t3: &crate::fields::RealTensorField, u: &[f64], sigma: f64) -> Result<f64> {
    w_plus_with(&RiemannData::with_torsion(g, t3), u, sigma)
}

pub fn w_plus_with(rd: &RiemannData, u: &[f64], sigma: f64) -> Result<f64> {
    check_density(u, sigma)?;
    let gu = rd.geo.grad_norm_sq(u);
    let v = rd.potential();
    let dens = par::map(u.len(), |s| sigma * (gu[s] / u[s] + v[s] * u[s]) + u[s] * u[s].ln());
    Ok(rd.integrate(&dens))
}

/// `int [sigma (|grad f|^2 + R - |T|^2/12) - f + m] u dV` with
/// `u = e^{-f} / (4 pi sigma)^{m/2}` and m the real dimension.
pub fn w_plus_entropy(rd: &RiemannData, u: &[f64], sigma: f64) -> Result<f64> {
    check_density(u, sigma)?;
    let m = rd.geo.dim as f64;
    let c = 0.5 * m * (4.0 * std::f64::consts::PI * sigma).ln();
    let f: Vec<f64> = u.iter().map(|&x| -x.ln() - c).collect();
    let gf = rd.geo.grad_norm_sq(&f);
    let v = rd.potential();
    let dens = par::map(u.len(), |s| (sigma * (gf[s] + v[s]) - f[s] + m) * u[s]);
    Ok(rd.integrate(&dens))
}

/// `int dV`.
pub fn volume(g: &MetricField) -> f64 {
    let dv = volume_density(g);
    g.grid.cell_volume() * par::sum(dv.len(), |s| dv[s])
}

/// Degree `int tr_g rho_C dV`, n = 2 only.
pub fn degree(g: &MetricField) -> Result<f64> {
    if g.n != 2 {
        return Err(PcfError::Unsupported(format!("degree needs n = 2, got {}", g.n)));
    }
    let tr = trace_pair(g, &chern_ricci(g))?;
    let dv = volume_density(g);
    Ok(g.grid.cell_volume() * par::sum(dv.len(), |s| tr.values[s].re * dv[s]))
}

/// `2 int |dstar omega|^2 dV - d`.
pub fn volume_rate_formula(g: &MetricField) -> Result<f64> {
    let jet = MetricJet::new(g);
    let gamma = jet.gamma();
    let n = g.n;
    let dv = volume_density(g);
    let dens = par::map(g.grid.sites(), |s| {
        let gi = g.at(s).raised();
        let mut acc = ZERO;
        for k in 0..n {
            for l in 0..n {
                acc += gi.a[k][l] * gamma.comps[l][s] * gamma.comps[k][s].conj();
            }
        }
        acc.re * dv[s]
    });
    let i = g.grid.cell_volume() * par::sum(dens.len(), |s| dens[s]);
    Ok(2.0 * i - degree(g)?)
}

/// `(Vol, finite-difference dVol/dt, 2 int |dstar omega|^2 - d)` at sample k.
/// The difference is fourth order when two neighbours exist on each side.
pub fn volume_and_rate(traj: &Trajectory, k: usize) -> Result<(f64, f64, f64)> {
    let dt = traj.uniform_dt()?;
    let len = traj.len();
    if k == 0 || k + 1 >= len {
        return Err(PcfError::Invalid(format!(
            "sample {k} is an endpoint; one-sided differences are not used"
        )));
    }
    let vol = |j: usize| volume(&traj.states[j].g);
    let fd = if k >= 2 && k + 2 < len {
        (-vol(k + 2) + 8.0 * vol(k + 1) - 8.0 * vol(k - 1) + vol(k - 2)) / (12.0 * dt)
    } else {
        (vol(k + 1) - vol(k - 1)) / (2.0 * dt)
    };
    Ok((vol(k), fd, volume_rate_formula(&traj.states[k].g)?))
}

/// `(sup (log tr_gt g - A phi), sup (log tr_gt g - log(det g/det gt) - A phi))`.
pub fn trace_monitors(g: &MetricField, gt: &MetricField, phi: &[f64], a: f64) -> Result<(f64, f64)> {
    let tr = trace_pair(gt, g)?;
    let ld = log_det(g);
    let ldt = log_det(gt);
    let m24 = par::sup(phi.len(), |s| tr.values[s].re.ln() - a * phi[s]);
    let m25 = par::sup(phi.len(), |s| {
        tr.values[s].re.ln() - (ld.values[s].re - ldt.values[s].re) - a * phi[s]
    });
    Ok((m24, m25))
}

/// `C_est = sup (|S(gt)|_gt + tr_gt Q1(gt))` and `A_auto = C_est + 1`.
pub fn a_auto(gt: &MetricField) -> (f64, f64) {
    let jet = MetricJet::new(gt);
    let s = jet.s();
    let q = jet.q1();
    let qt = trace_pair(gt, &q).expect("same grid");
    let c = par::max(gt.grid.sites(), |i| {
        let gi = gt.at(i).inverse();
        let m = gi.mul(&s.at(i));
        let sn = m.mul(&m).trace().re.max(0.0).sqrt();
        sn + qt.values[i].re
    });
    (c, c + 1.0)
}

/// `d_i G G^{-1}`: entry `[k][m]` is `Gamma^m_{ik}`.
fn connection_site(jet: &MetricJet, i: usize, s: usize) -> SiteMat {
    let n = jet.g.n;
    let mut d = SiteMat::zeros(n);
    for k in 0..n {
        for l in 0..n {
            d.a[k][l] = jet.d(i, k, l, s);
        }
    }
    d.mul(&jet.g.at(s).inverse())
}

/// `W = g^{i jbar} g^{k lbar} g_{m nbar} U^m_{ik} conj(U^n_{jl})` with
/// `U = Gamma(g) - Gamma(gt)` the difference of the Chern connections.
pub fn calabi_w(g: &MetricField, gt: &MetricField) -> ScalarField {
    let jg = MetricJet::new(g);
    let jt = MetricJet::new(gt);
    let n = g.n;
    let values = par::map(g.grid.sites(), |s| {
        let ups: Vec<SiteMat> = (0..n)
            .map(|i| {
                let a = connection_site(&jg, i, s);
                let b = connection_site(&jt, i, s);
                let mut d = SiteMat::zeros(n);
                for k in 0..n {
                    for m in 0..n {
                        d.a[k][m] = a.a[k][m] - b.a[k][m];
                    }
                }
                d
            })
            .collect();
        C64::new(calabi_contract(&g.at(s), &ups), 0.0)
    });
    ScalarField {
        grid: g.grid.clone(),
        values,
    }
}

/// Contraction of one site's `U_i[k][m] = U^m_{ik}`.
pub fn calabi_contract(gs: &SiteMat, ups: &[SiteMat]) -> f64 {
    let n = gs.n;
    let gi = gs.raised();
    let mut acc = ZERO;
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                for l in 0..n {
                    for m in 0..n {
                        for nn in 0..n {
                            acc += gi.a[i][j] * gi.a[k][l] * gs.a[m][nn]
                                * ups[i].a[k][m]
                                * ups[j].a[l][nn].conj();
                        }
                    }
                }
            }
        }
    }
    acc.re
}

fn factorial(p: usize) -> f64 {
    (1..=p).map(|v| v as f64).product()
}

/// `(1/p!)` times the full contraction of two (p,0) tensors at a site.
fn pair_p0(gi: &SiteMat, idx: &[Vec<usize>], a: &[C64], b: &[C64], p: usize) -> C64 {
    let mut acc = ZERO;
    for (c1, i1) in idx.iter().enumerate() {
        if a[c1] == ZERO {
            continue;
        }
        for (c2, i2) in idx.iter().enumerate() {
            if b[c2] == ZERO {
                continue;
            }
            let mut w = C64::new(1.0, 0.0);
            for slot in 0..p {
                w *= gi.a[i1[slot]][i2[slot]];
            }
            acc += w * a[c1] * b[c2].conj();
        }
    }
    acc / factorial(p)
}

/// The three Bochner terms at every site for a holomorphic (p,0) form:
/// `(Delta |eta|^2, |nabla eta|^2 + |nablabar eta|^2, <S o eta, eta>)`.
pub fn bochner_terms(g: &MetricField, eta: &FormField) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    if eta.q != 0 || eta.p == 0 || eta.p > g.n {
        return Err(PcfError::Signature(format!("need a (p,0) form, got ({},{})", eta.p, eta.q)));
    }
    if eta.grid != g.grid {
        return Err(PcfError::GridMismatch);
    }
    let n = g.n;
    let p = eta.p;
    let grid = &g.grid;
    let scale = 1.0 + eta.max_abs();
    // dbar eta and d eta, spectrally
    let mut dbar = Vec::new();
    let mut dhol = Vec::new();
    for c in &eta.comps {
        let pr = grid.prepare(c);
        dbar.push((0..n).map(|j| pr.apply(&[Deriv::Anti(j)])).collect::<Vec<_>>());
        dhol.push((0..n).map(|j| pr.apply(&[Deriv::Holo(j)])).collect::<Vec<_>>());
    }
    let dbar_sup = dbar
        .iter()
        .flatten()
        .map(|v| v.iter().map(|x| x.norm()).fold(0.0, f64::max))
        .fold(0.0, f64::max);
    if dbar_sup > 1e-10 * scale {
        return Err(PcfError::Invalid(format!(
            "form is not holomorphic: sup |dbar eta| = {dbar_sup:e}"
        )));
    }
    let jet = MetricJet::new(g);
    let s_t = jet.s();
    let ncomp = eta.comps.len();
    let idx: Vec<Vec<usize>> = (0..ncomp).map(|c| eta.multi_index(c)).collect();
    let flat = |ix: &[usize]| ix.iter().fold(0, |acc, &i| acc * n + i);
    let sites = grid.sites();
    let norm: Vec<f64> = par::map(sites, |s| {
        let gi = g.at(s).raised();
        let e: Vec<C64> = eta.comps.iter().map(|c| c[s]).collect();
        pair_p0(&gi, &idx, &e, &e, p).re
    });
    let rest = par::map(sites, |s| {
        let gs = g.at(s);
        let gi = gs.raised();
        let ginv = gs.inverse();
        let e: Vec<C64> = eta.comps.iter().map(|c| c[s]).collect();
        // Gamma^c_{ia} = (d_i G G^{-1})[a][c]
        let gam: Vec<SiteMat> = (0..n)
            .map(|i| {
                let mut d = SiteMat::zeros(n);
                for k in 0..n {
                    for l in 0..n {
                        d.a[k][l] = jet.d(i, k, l, s);
                    }
                }
                d.mul(&ginv)
            })
            .collect();
        let nabla: Vec<Vec<C64>> = (0..n)
            .map(|i| {
                (0..ncomp)
                    .map(|c| {
                        let mut v = dhol[c][i][s];
                        for slot in 0..p {
                            let mut ix = idx[c].clone();
                            for cc in 0..n {
                                ix[slot] = cc;
                                v -= gam[i].a[idx[c][slot]][cc] * e[flat(&ix)];
                            }
                        }
                        v
                    })
                    .collect()
            })
            .collect();
        let nablabar: Vec<Vec<C64>> = (0..n)
            .map(|j| (0..ncomp).map(|c| dbar[c][j][s]).collect())
            .collect();
        let mut grad = ZERO;
        for i in 0..n {
            for j in 0..n {
                grad += gi.a[i][j] * pair_p0(&gi, &idx, &nabla[i], &nabla[j], p);
                // barred slot contracts with the conjugate placement
                grad += gi.a[j][i] * pair_p0(&gi, &idx, &nablabar[i], &nablabar[j], p);
            }
        }
        // (S o eta)_{a..} = sum over slots of S_a^c eta_{..c..}, S_a^c = g^{c dbar} S_{a dbar}
        let ss = s_t.at(s);
        let s_up = |a: usize, c: usize| (0..n).map(|d| gi.a[c][d] * ss.a[a][d]).sum::<C64>();
        let seta: Vec<C64> = (0..ncomp)
            .map(|c| {
                let mut v = ZERO;
                for slot in 0..p {
                    let mut ix = idx[c].clone();
                    for cc in 0..n {
                        ix[slot] = cc;
                        v += s_up(idx[c][slot], cc) * e[flat(&ix)];
                    }
                }
                v
            })
            .collect();
        let curv = pair_p0(&gi, &idx, &seta, &e, p);
        (grad.re, curv.re)
    });
    let lap = crate::flow::chern_laplacian(g, &norm);
    Ok((
        lap,
        rest.iter().map(|x| x.0).collect(),
        rest.iter().map(|x| x.1).collect(),
    ))
}

/// sup | Delta |eta|^2 - |nabla eta|^2 - |nablabar eta|^2 - <S o eta, eta> |.
pub fn bochner_residual(g: &MetricField, eta: &FormField) -> Result<f64> {
    let (lhs, grad, curv) = bochner_terms(g, eta)?;
    Ok(par::max(lhs.len(), |s| (lhs[s] - grad[s] - curv[s]).abs()))
}

/// Constant-coefficient holomorphic form `dz^1`, or `dz^1 ^ dz^2` for p = 2.
pub fn standard_form(grid: &crate::grid::ComplexTorusGrid, p: usize) -> FormField {
    let mut f = FormField::zeros(grid, p, 0, true);
    let one = C64::new(1.0, 0.0);
    if p == 1 {
        f.comps[0] = vec![one; grid.sites()];
    } else {
        let a = f.index(&[0, 1], &[]);
        let b = f.index(&[1, 0], &[]);
        f.comps[a] = vec![one; grid.sites()];
        f.comps[b] = vec![-one; grid.sites()];
    }
    f
}

/// sup | P11 - lam g |.
pub fn static_residual(g: &MetricField, lam: f64) -> f64 {
    MetricJet::new(g).p11().axpy(-lam, g).max_abs()
}

/// One row of diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub volume: f64,
    pub degree: f64,
    pub lambda: f64,
    #[serde(rename = "F")]
    pub f_at_minimizer: f64,
    #[serde(rename = "W_plus")]
    pub w_plus: f64,
    pub monitor24: f64,
    pub monitor25: f64,
    #[serde(rename = "calabiW")]
    pub calabi_w_sup: f64,
    pub plres: f64,
    pub torsion2: f64,
    pub bident: f64,
    pub gident: f64,
    pub static_res: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct DiagOptions {
    pub lambda: bool,
    /// monitor constant A
    pub a: f64,
}

impl Default for DiagOptions {
    fn default() -> Self {
        DiagOptions { lambda: true, a: 1.0 }
    }
}

/// Evaluate every diagnostic of a state. `warm` seeds the eigensolver; the
/// ground state is returned for the next call.
pub fn diagnostics(state: &FlowState, opts: &DiagOptions, warm: Option<&[f64]>) -> Result<(DiagnosticsRecord, Option<Vec<f64>>)> {
    let g = &state.g;
    let gt = state.background()?;
    let jet = MetricJet::new(g);
    let p = jet.p11();
    let q = jet.q1();
    let n2 = g.n == 2;
    let (lambda, f_min, u) = if opts.lambda {
        let rd = RiemannData::new(g);
        let r = lambda_with(&rd, warm, &LambdaOptions::default())?;
        let fe = f_energy_with(&rd, &r.f);
        (r.lambda, fe, Some(r.u))
    } else {
        (f64::NAN, f64::NAN, None)
    };
    let zero = vec![0.0; g.grid.sites()];
    let phi = state.phi.as_deref().unwrap_or(&zero);
    let (m24, m25) = trace_monitors(g, &gt, phi, opts.a)?;
    let tq = trace_pair(g, &q)?;
    let lam_static = psi_norm(g, &p) / g.n as f64;
    let rec = DiagnosticsRecord {
        t: state.t,
        volume: volume(g),
        degree: if n2 { degree(g)? } else { f64::NAN },
        lambda,
        f_at_minimizer: f_min,
        w_plus: f64::NAN,
        monitor24: m24,
        monitor25: m25,
        calabi_w_sup: calabi_w(g, &gt).max_abs(),
        plres: jet.pluriclosed_residual(),
        torsion2: par::max(g.grid.sites(), |s| tq.values[s].re),
        bident: crate::chern::bismut_side(&jet).max_diff(&p),
        gident: if n2 { crate::riemannian::gauge_identity_residual(g) } else { f64::NAN },
        static_res: p.axpy(-lam_static, g).max_abs(),
    };
    Ok((rec, u))
}
