//! Time integration: the flow itself, its volume-normalized variant, the
//! potential equation, the (0,1)-form reduction and the backward conjugate
//! heat equation.

use std::sync::Arc;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::chern::{chern_ricci, ddbar_of_01, MetricJet};
use crate::error::{PcfError, Result};
use crate::fields::{log_det, trace_pair, volume_density, FormField, MetricField, Tensor11};
use crate::grid::Deriv;
use crate::par;
use crate::riemannian::RealGeometry;

const I: C64 = C64 { re: 0.0, im: 1.0 };

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowVariant {
    Pcf,
    Normalized,
    AlphaReduced,
}

impl FlowVariant {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "pcf" => FlowVariant::Pcf,
            "normalized" => FlowVariant::Normalized,
            "alpha_reduced" => FlowVariant::AlphaReduced,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            FlowVariant::Pcf => "pcf",
            FlowVariant::Normalized => "normalized",
            FlowVariant::AlphaReduced => "alpha_reduced",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Rk4,
    Euler,
}

impl Scheme {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "rk4" => Some(Scheme::Rk4),
            "euler" => Some(Scheme::Euler),
            _ => None,
        }
    }
}

/// Fixed data shared by every state of one run.
#[derive(Debug, Clone)]
pub struct FlowContext {
    pub variant: FlowVariant,
    /// background metric at t = 0
    pub background: MetricField,
    /// d/dt of the background, constant in time
    pub psi: Option<Tensor11>,
    /// reference metric for c1 in the reduced flow
    pub rho_bg: MetricField,
    /// base metric of the reduced flow
    pub omega0: MetricField,
    rho_c_bg: Tensor11,
    log_det_rho: Vec<f64>,
}

impl FlowContext {
    pub fn new(
        variant: FlowVariant,
        background: MetricField,
        psi: Option<Tensor11>,
        rho_bg: MetricField,
        omega0: MetricField,
    ) -> Self {
        let rho_c_bg = chern_ricci(&rho_bg);
        let log_det_rho = log_det(&rho_bg).re();
        FlowContext {
            variant,
            background,
            psi,
            rho_bg,
            omega0,
            rho_c_bg,
            log_det_rho,
        }
    }

    /// Context with a flat background and flat reference metric.
    pub fn flat(variant: FlowVariant, g0: &MetricField) -> Self {
        let id = MetricField::identity(&g0.grid);
        Self::new(variant, id.clone(), None, id, g0.clone())
    }

    pub fn background_at(&self, t: f64) -> Result<MetricField> {
        match &self.psi {
            None => Ok(self.background.clone()),
            Some(p) => MetricField::new(self.background.axpy(t, p)),
        }
    }

    /// `omega0 + d alpha + dbar conj(alpha) - t rho_C(rho_bg)`.
    pub fn reconstruct(&self, alpha: &FormField, t: f64) -> Result<MetricField> {
        let m = self
            .omega0
            .axpy(1.0, &ddbar_of_01(alpha))
            .axpy(-t, &self.rho_c_bg);
        MetricField::new(m)
    }
}

/// Time plus every evolving field.
#[derive(Debug, Clone)]
pub struct FlowState {
    pub t: f64,
    pub g: MetricField,
    pub phi: Option<Vec<f64>>,
    pub alpha: Option<FormField>,
    pub ctx: Arc<FlowContext>,
}

impl FlowState {
    /// Start at t = 0 with phi = 0, and alpha = 0 for the reduced variant.
    pub fn initial(g: MetricField, ctx: Arc<FlowContext>, with_potential: bool) -> Self {
        let sites = g.grid.sites();
        let alpha = (ctx.variant == FlowVariant::AlphaReduced)
            .then(|| FormField::zeros(&g.grid, 0, 1, true));
        FlowState {
            t: 0.0,
            phi: with_potential.then(|| vec![0.0; sites]),
            alpha,
            g,
            ctx,
        }
    }

    pub fn background(&self) -> Result<MetricField> {
        self.ctx.background_at(self.t)
    }
}

/// `-P11`.
pub fn pcf_rhs(g: &MetricField) -> Tensor11 {
    MetricJet::new(g).p11().scale(-1.0)
}

/// `int tr_g P11 dV / int dV`.
pub fn psi_norm(g: &MetricField, p: &Tensor11) -> f64 {
    let tr = trace_pair(g, p).expect("same grid");
    let dv = volume_density(g);
    let n = g.grid.sites();
    par::sum(n, |s| tr.values[s].re * dv[s]) / par::sum(n, |s| dv[s])
}

/// `-P11 + (1/n) psi_norm g`.
pub fn normalized_rhs(g: &MetricField) -> Tensor11 {
    let p = MetricJet::new(g).p11();
    let c = psi_norm(g, &p) / g.n as f64;
    p.scale(-1.0).axpy(c, g)
}

/// `g^{i jbar} d_i d_jbar f` for real f.
pub fn chern_laplacian(g: &MetricField, f: &[f64]) -> Vec<f64> {
    let n = g.n;
    let grid = &g.grid;
    let p = grid.prepare(&f.iter().map(|&v| C64::new(v, 0.0)).collect::<Vec<_>>());
    let mut dd = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            dd.push(p.apply(&[Deriv::Holo(i), Deriv::Anti(j)]));
        }
    }
    par::map(grid.sites(), |s| {
        let gi = g.at(s).raised();
        let mut acc = C64::new(0.0, 0.0);
        for i in 0..n {
            for j in 0..n {
                acc += gi.a[i][j] * dd[i * n + j][s];
            }
        }
        acc.re
    })
}

/// `Delta phi + tr_g gt - n`.
pub fn potential_rhs(g: &MetricField, phi: &[f64], gt: &MetricField) -> Vec<f64> {
    let lap = chern_laplacian(g, phi);
    let tr = trace_pair(g, gt).expect("same grid");
    let n = g.n as f64;
    par::map(g.grid.sites(), |s| lap[s] + tr.values[s].re - n)
}

/// `gamma + (sqrt(-1)/2) dbar log(det g / det rho_bg)`.
pub fn alpha_rhs(g: &MetricField, log_det_rho: &[f64]) -> FormField {
    let gamma = MetricJet::new(g).gamma();
    let ld = log_det(g);
    let l: Vec<C64> = (0..g.grid.sites())
        .map(|s| C64::new(ld.values[s].re - log_det_rho[s], 0.0))
        .collect();
    let p = g.grid.prepare(&l);
    let mut out = gamma;
    for j in 0..g.n {
        let d = p.apply(&[Deriv::Anti(j)]);
        for (o, v) in out.comps[j].iter_mut().zip(&d) {
            *o += 0.5 * I * v;
        }
    }
    out
}

/// `c_cfl h^2 lam_min / lam_max`.
pub fn stability_bound(g: &MetricField, c_cfl: f64) -> f64 {
    let h = g.grid.spacing();
    let (lo, hi) = g.eig_range();
    c_cfl * h * h * lo / hi
}

#[derive(Clone)]
struct Vars {
    g: Option<Tensor11>,
    phi: Option<Vec<f64>>,
    alpha: Option<FormField>,
}

fn form_axpy(a: &FormField, c: f64, b: &FormField) -> FormField {
    let mut out = a.clone();
    for (o, x) in out.comps.iter_mut().zip(&b.comps) {
        for (v, w) in o.iter_mut().zip(x) {
            *v += c * w;
        }
    }
    out
}

fn vec_axpy(a: &[f64], c: f64, b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + c * y).collect()
}

impl Vars {
    fn of(state: &FlowState) -> Self {
        Vars {
            g: (state.ctx.variant != FlowVariant::AlphaReduced).then(|| state.g.tensor().clone()),
            phi: state.phi.clone(),
            alpha: state.alpha.clone(),
        }
    }

    fn axpy(&self, c: f64, d: &Vars) -> Vars {
        Vars {
            g: self.g.as_ref().map(|g| g.axpy(c, d.g.as_ref().unwrap())),
            phi: self.phi.as_ref().map(|p| vec_axpy(p, c, d.phi.as_ref().unwrap())),
            alpha: self
                .alpha
                .as_ref()
                .map(|a| form_axpy(a, c, d.alpha.as_ref().unwrap())),
        }
    }

    fn finite(&self) -> bool {
        let g_ok = self
            .g
            .as_ref()
            .is_none_or(|g| g.comps.iter().all(|c| c.iter().all(|v| v.re.is_finite() && v.im.is_finite())));
        let p_ok = self.phi.as_ref().is_none_or(|p| p.iter().all(|v| v.is_finite()));
        let a_ok = self
            .alpha
            .as_ref()
            .is_none_or(|a| a.comps.iter().all(|c| c.iter().all(|v| v.re.is_finite() && v.im.is_finite())));
        g_ok && p_ok && a_ok
    }
}

fn metric_of(ctx: &FlowContext, v: &Vars, t: f64) -> Result<MetricField> {
    match (&v.g, &v.alpha) {
        (Some(g), _) => MetricField::new(g.clone()),
        (None, Some(a)) => ctx.reconstruct(a, t),
        _ => Err(PcfError::Invalid("state without metric".into())),
    }
}

fn rhs(ctx: &FlowContext, t: f64, v: &Vars) -> Result<Vars> {
    let g = metric_of(ctx, v, t)?;
    let dg = match ctx.variant {
        FlowVariant::Pcf => Some(pcf_rhs(&g)),
        FlowVariant::Normalized => Some(normalized_rhs(&g)),
        FlowVariant::AlphaReduced => None,
    };
    let dphi = match &v.phi {
        Some(p) => Some(potential_rhs(&g, p, &ctx.background_at(t)?)),
        None => None,
    };
    let dalpha = v.alpha.as_ref().map(|_| alpha_rhs(&g, &ctx.log_det_rho));
    Ok(Vars {
        g: dg,
        phi: dphi,
        alpha: dalpha,
    })
}

fn advance(state: &FlowState, dt: f64, scheme: Scheme) -> Result<FlowState> {
    let ctx = &state.ctx;
    let t = state.t;
    let y = Vars::of(state);
    let next = match scheme {
        Scheme::Euler => y.axpy(dt, &rhs(ctx, t, &y)?),
        Scheme::Rk4 => {
            let k1 = rhs(ctx, t, &y)?;
            let k2 = rhs(ctx, t + 0.5 * dt, &y.axpy(0.5 * dt, &k1))?;
            let k3 = rhs(ctx, t + 0.5 * dt, &y.axpy(0.5 * dt, &k2))?;
            let k4 = rhs(ctx, t + dt, &y.axpy(dt, &k3))?;
            y.axpy(dt / 6.0, &k1)
                .axpy(dt / 3.0, &k2)
                .axpy(dt / 3.0, &k3)
                .axpy(dt / 6.0, &k4)
        }
    };
    if !next.finite() {
        return Err(PcfError::Invalid("non-finite values".into()));
    }
    let g = metric_of(ctx, &next, t + dt)?;
    Ok(FlowState {
        t: t + dt,
        g,
        phi: next.phi,
        alpha: next.alpha,
        ctx: ctx.clone(),
    })
}

#[derive(Debug, Clone, Copy)]
pub struct StepControl {
    pub c_cfl: f64,
    pub max_retries: u32,
    /// reject steps whose pluriclosed residual exceeds this
    pub pluriclosed_tol: Option<f64>,
}

impl Default for StepControl {
    fn default() -> Self {
        StepControl {
            c_cfl: crate::conventions::C_CFL,
            max_retries: 6,
            pluriclosed_tol: None,
        }
    }
}

/// One accepted step. Returns the new state and the dt actually taken,
/// which is `dt` halved once per rejection.
pub fn step(state: &FlowState, dt: f64, scheme: Scheme, ctl: &StepControl) -> Result<(FlowState, f64)> {
    let bound = stability_bound(&state.g, ctl.c_cfl);
    if !(dt > 0.0) || dt > bound * (1.0 + 1e-12) {
        return Err(PcfError::Invalid(format!(
            "dt = {dt:e} outside (0, {bound:e}]"
        )));
    }
    let mut h = dt;
    let mut last = String::new();
    for _ in 0..=ctl.max_retries {
        match advance(state, h, scheme) {
            Ok(next) => {
                let bad_pc = ctl.pluriclosed_tol.and_then(|tol| {
                    let r = crate::chern::pluriclosed_residual(&next.g);
                    (r > tol).then_some(r)
                });
                match bad_pc {
                    None => return Ok((next, h)),
                    Some(r) => last = format!("pluriclosed residual {r:e}"),
                }
            }
            Err(e @ (PcfError::NotPositive { .. } | PcfError::Invalid(_))) => last = e.to_string(),
            Err(e) => return Err(e),
        }
        h *= 0.5;
    }
    Err(PcfError::Halt {
        t: state.t,
        reason: format!("{last} after {} retries", ctl.max_retries),
    })
}

/// Stored states with strictly increasing times.
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub states: Vec<FlowState>,
}

impl Trajectory {
    pub fn push(&mut self, s: FlowState) -> Result<()> {
        if let Some(last) = self.states.last() {
            if s.t <= last.t {
                return Err(PcfError::Invalid(format!(
                    "times must increase: {} after {}",
                    s.t, last.t
                )));
            }
        }
        self.states.push(s);
        Ok(())
    }

    pub fn times(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.t).collect()
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Uniform spacing, or an error.
    pub fn uniform_dt(&self) -> Result<f64> {
        if self.states.len() < 2 {
            return Err(PcfError::Invalid("need at least two samples".into()));
        }
        let t = self.times();
        let dt = t[1] - t[0];
        for w in t.windows(2) {
            if ((w[1] - w[0]) - dt).abs() > 1e-9 * dt {
                return Err(PcfError::Invalid("non-uniform sample spacing".into()));
            }
        }
        Ok(dt)
    }
}

/// Integrate to `t_end` with a fixed step (clamped to the stability bound
/// when `dt` is None), calling `observe` on the start and every accepted state.
pub fn integrate<F>(
    start: FlowState,
    t_end: f64,
    dt: Option<f64>,
    scheme: Scheme,
    ctl: &StepControl,
    mut observe: F,
) -> Result<FlowState>
where
    F: FnMut(&FlowState) -> Result<()>,
{
    let mut s = start;
    observe(&s)?;
    while s.t < t_end - 1e-12 * t_end.max(1.0) {
        let bound = stability_bound(&s.g, ctl.c_cfl);
        let h = dt.unwrap_or(bound).min(bound).min(t_end - s.t);
        let (next, _) = step(&s, h, scheme, ctl)?;
        s = next;
        observe(&s)?;
    }
    Ok(s)
}

/// Run with a fixed dt and keep every state.
pub fn run_trajectory(
    start: FlowState,
    steps: usize,
    dt: f64,
    scheme: Scheme,
    ctl: &StepControl,
) -> Result<Trajectory> {
    let mut tr = Trajectory::default();
    tr.push(start.clone())?;
    let mut s = start;
    for _ in 0..steps {
        let (next, h) = step(&s, dt, scheme, ctl)?;
        if h != dt {
            return Err(PcfError::Halt {
                t: s.t,
                reason: "step rejected in a fixed-dt trajectory".into(),
            });
        }
        s = next;
        tr.push(s.clone())?;
    }
    Ok(tr)
}

/// Coefficients of the conjugate heat operator at one state:
/// `u_t = -(1/2) Delta u + (1/2)(R - |T|^2/4) u`.
pub struct HeatOperator {
    pub geo: RealGeometry,
    pub potential: Vec<f64>,
}

impl HeatOperator {
    pub fn new(g: &MetricField) -> Self {
        let geo = RealGeometry::from_hermitian(g);
        let (_, r) = geo.ricci();
        let t2 = if g.n == 2 {
            geo.norm_sq(&crate::chern::torsion_3form(g))
        } else {
            vec![0.0; g.grid.sites()]
        };
        let potential = par::map(g.grid.sites(), |s| 0.5 * (r[s] - 0.25 * t2[s]));
        HeatOperator { geo, potential }
    }

    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let lap = self.geo.laplacian(u);
        par::map(u.len(), |s| -0.5 * lap[s] + self.potential[s] * u[s])
    }

    pub fn mass(&self, u: &[f64]) -> f64 {
        let cell = self.geo.grid.cell_volume();
        cell * par::sum(u.len(), |s| u[s] * self.geo.sqrt_det[s])
    }
}

/// Solve the conjugate heat equation backward from the last state of `traj`.
/// Uses RK4 with step 2 dt and the middle sample as the half-step, so the
/// result lives on every other sample counting back from the end (index
/// list returned alongside). Non-Kahler trajectories are refused unless
/// `allow_torsion`.
pub fn conjugate_heat_backward(
    traj: &Trajectory,
    u_final: &[f64],
    allow_torsion: bool,
) -> Result<Vec<(usize, Vec<f64>)>> {
    let dt = traj.uniform_dt()?;
    let k_end = traj.len() - 1;
    if k_end % 2 != 0 {
        return Err(PcfError::Invalid("need an even number of intervals".into()));
    }
    if !allow_torsion {
        for s in &traj.states {
            let t = MetricJet::new(&s.g).torsion().max_abs();
            if t > 1e-8 {
                return Err(PcfError::Unsupported(format!(
                    "trajectory has torsion {t:e} at t = {}; the conjugate heat transport needs the gauge-fixed system",
                    s.t
                )));
            }
        }
    }
    if u_final.iter().any(|&v| !(v > 0.0)) {
        return Err(PcfError::Invalid("u must be positive".into()));
    }
    let mut out = vec![(k_end, u_final.to_vec())];
    let mut u = u_final.to_vec();
    let mut hi = HeatOperator::new(&traj.states[k_end].g);
    let mut k = k_end;
    while k >= 2 {
        let mid = HeatOperator::new(&traj.states[k - 1].g);
        let lo = HeatOperator::new(&traj.states[k - 2].g);
        let h = -2.0 * dt;
        let k1 = hi.apply(&u);
        let k2 = mid.apply(&vec_axpy(&u, 0.5 * h, &k1));
        let k3 = mid.apply(&vec_axpy(&u, 0.5 * h, &k2));
        let k4 = lo.apply(&vec_axpy(&u, h, &k3));
        u = par::map(u.len(), |s| u[s] + h / 6.0 * (k1[s] + 2.0 * k2[s] + 2.0 * k3[s] + k4[s]));
        if u.iter().any(|&v| !(v > 0.0)) {
            return Err(PcfError::Halt {
                t: traj.states[k - 2].t,
                reason: "conjugate heat density lost positivity".into(),
            });
        }
        k -= 2;
        out.push((k, u.clone()));
        hi = lo;
    }
    out.reverse();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chern::{chern_torsion, pluriclosed_residual};
    use crate::fields::SiteMat;
    use crate::grid::{make_grid, ComplexTorusGrid, DerivativeMode};
    use crate::scenarios::{generate, ScenarioKind, ScenarioSpec};

    fn grid16() -> ComplexTorusGrid {
        make_grid(2, 16, DerivativeMode::Spectral).unwrap()
    }

    fn start(g: MetricField, variant: FlowVariant) -> FlowState {
        let ctx = Arc::new(FlowContext::flat(variant, &g));
        FlowState::initial(g, ctx, true)
    }

    #[test]
    fn flat_rhs_vanish() {
        let g = make_grid(2, 8, DerivativeMode::Spectral).unwrap();
        let id = MetricField::identity(&g);
        assert!(pcf_rhs(&id).max_abs() < 1e-14);
        assert!(normalized_rhs(&id).max_abs() < 1e-14);
        assert!(alpha_rhs(&id, &vec![0.0; g.sites()]).max_abs() < 1e-14);
    }

    #[test]
    fn kahler_rhs_is_ricci_form() {
        let g = grid16();
        let k = generate(&ScenarioSpec::new(ScenarioKind::KahlerPotential), &g).unwrap();
        let r = pcf_rhs(&k).axpy(1.0, &chern_ricci(&k));
        assert!(r.max_abs() < 1e-9, "{}", r.max_abs());
    }

    #[test]
    fn rhs_scale_invariant() {
        let g = grid16();
        let a = generate(&ScenarioSpec::new(ScenarioKind::PluriclosedAlpha), &g).unwrap();
        let a4 = MetricField::new(a.scale(4.0)).unwrap();
        assert!(pcf_rhs(&a).max_diff(&pcf_rhs(&a4)) < 1e-13);
    }

    #[test]
    fn normalized_trace_mean_zero() {
        let g = grid16();
        let a = generate(&ScenarioSpec::new(ScenarioKind::PluriclosedAlpha).with_eps(0.1), &g).unwrap();
        let r = normalized_rhs(&a);
        let tr = trace_pair(&a, &r).unwrap();
        let dv = volume_density(&a);
        let i = par::sum(g.sites(), |s| tr.values[s].re * dv[s]) * g.cell_volume();
        assert!(i.abs() < 1e-9, "{i}");
    }

    #[test]
    fn flat_is_fixed_point_and_step_rejects_large_dt() {
        let g = make_grid(2, 8, DerivativeMode::Spectral).unwrap();
        let s = start(MetricField::identity(&g), FlowVariant::Pcf);
        let ctl = StepControl::default();
        let b = stability_bound(&s.g, ctl.c_cfl);
        let (n, h) = step(&s, b, Scheme::Rk4, &ctl).unwrap();
        assert_eq!(h, b);
        assert!(n.g.max_diff(&s.g) < 1e-15);
        assert!(n.phi.unwrap().iter().all(|v| v.abs() < 1e-15));
        assert!(step(&s, 2.0 * b, Scheme::Rk4, &ctl).is_err());
    }

    #[test]
    fn potential_for_scaled_flat_background() {
        // g = 2 gt flat: phi(t) = -n t / 2
        let g = make_grid(2, 8, DerivativeMode::Spectral).unwrap();
        let two = MetricField::new(Tensor11::constant(&g, &{
            let mut m = SiteMat::identity(2);
            m.a[0][0] *= 2.0;
            m.a[1][1] *= 2.0;
            m
        }))
        .unwrap();
        let ctx = Arc::new(FlowContext::flat(FlowVariant::Pcf, &two));
        let s = FlowState::initial(two, ctx, true);
        let ctl = StepControl::default();
        let end = integrate(s, 0.1, None, Scheme::Rk4, &ctl, |_| Ok(())).unwrap();
        assert!((end.t - 0.1).abs() < 1e-15);
        for v in end.phi.unwrap() {
            assert!((v + 0.1).abs() < 1e-13);
        }
    }

    #[test]
    fn euler_rk4_single_step_difference_is_second_order() {
        let g = grid16();
        let a = generate(&ScenarioSpec::new(ScenarioKind::PluriclosedAlpha).with_eps(0.1), &g).unwrap();
        let s = start(a, FlowVariant::Pcf);
        let ctl = StepControl::default();
        let b = stability_bound(&s.g, ctl.c_cfl);
        let diff = |dt: f64| {
            let e = step(&s, dt, Scheme::Euler, &ctl).unwrap().0;
            let r = step(&s, dt, Scheme::Rk4, &ctl).unwrap().0;
            e.g.max_diff(&r.g)
        };
        let d1 = diff(b);
        let d2 = diff(0.5 * b);
        let ratio = d1 / d2;
        assert!(ratio > 3.5 && ratio < 4.5, "{ratio}");
    }

    #[test]
    fn kahler_stays_kahler_and_pluriclosed_preserved() {
        let g = grid16();
        let k = generate(&ScenarioSpec::new(ScenarioKind::KahlerPotential), &g).unwrap();
        let s = start(k, FlowVariant::Pcf);
        let ctl = StepControl::default();
        let mut worst = 0.0_f64;
        let mut n = 0;
        integrate(s, 0.3, None, Scheme::Rk4, &ctl, |st| {
            n += 1;
            worst = worst.max(chern_torsion(&st.g).max_abs());
            Ok(())
        })
        .unwrap();
        assert!(n > 10);
        assert!(worst < 1e-9, "{worst}");

        let a = generate(&ScenarioSpec::new(ScenarioKind::PluriclosedAlpha), &g).unwrap();
        let s = start(a, FlowVariant::Pcf);
        let end = integrate(s, 0.05, None, Scheme::Rk4, &ctl, |_| Ok(())).unwrap();
        assert!(pluriclosed_residual(&end.g) < 1e-10);
    }

    #[test]
    fn alpha_flow_tracks_direct_flow() {
        let g = grid16();
        let a = generate(&ScenarioSpec::new(ScenarioKind::PluriclosedAlpha), &g).unwrap();
        let ctl = StepControl::default();
        let dt = 0.5 * stability_bound(&a, ctl.c_cfl);
        let direct = integrate(start(a.clone(), FlowVariant::Pcf), 0.02, Some(dt), Scheme::Rk4, &ctl, |_| Ok(())).unwrap();
        let red = integrate(start(a, FlowVariant::AlphaReduced), 0.02, Some(dt), Scheme::Rk4, &ctl, |_| Ok(())).unwrap();
        let d = direct.g.max_diff(&red.g);
        assert!(d < 1e-8, "{d}");
    }

    #[test]
    fn normalized_keeps_volume() {
        let g = grid16();
        let a = generate(&ScenarioSpec::new(ScenarioKind::PluriclosedAlpha).with_eps(0.1), &g).unwrap();
        let v0: f64 = volume_density(&a).iter().sum();
        let ctl = StepControl::default();
        let dt = stability_bound(&a, ctl.c_cfl);
        let tr = run_trajectory(start(a, FlowVariant::Normalized), 50, dt, Scheme::Rk4, &ctl).unwrap();
        let v1: f64 = volume_density(&tr.states[50].g).iter().sum();
        assert!(((v1 - v0) / v0).abs() < 1e-6);
    }

    #[test]
    fn conjugate_heat_flat_cases() {
        let g = make_grid(2, 8, DerivativeMode::Spectral).unwrap();
        let id = MetricField::identity(&g);
        let ctl = StepControl::default();
        let dt = stability_bound(&id, ctl.c_cfl);
        let tr = run_trajectory(start(id.clone(), FlowVariant::Pcf), 4, dt, Scheme::Rk4, &ctl).unwrap();
        let vol = crate::conventions::flat_volume(2);
        let u0 = vec![1.0 / vol; g.sites()];
        let us = conjugate_heat_backward(&tr, &u0, false).unwrap();
        assert_eq!(us.len(), 3);
        for (_, u) in &us {
            assert!(u.iter().all(|v| (v - 1.0 / vol).abs() < 1e-15 / vol));
        }
        let bump: Vec<f64> = (0..g.sites())
            .map(|s| (1.0 + 0.5 * g.coords(s)[0].sin()) / vol)
            .collect();
        let us = conjugate_heat_backward(&tr, &bump, false).unwrap();
        let op = HeatOperator::new(&id);
        for (_, u) in &us {
            assert!((op.mass(u) - 1.0).abs() < 1e-9);
        }
        // the profile sharpens forward in t: the sin x1 mode has Delta = -1/2,
        // so its amplitude is a(T) e^{(t - T)/4}
        let t_end = tr.states[4].t;
        for (k, u) in &us {
            let decay = ((tr.states[*k].t - t_end) / 4.0).exp();
            for s in 0..g.sites() {
                let want = (1.0 + 0.5 * decay * g.coords(s)[0].sin()) / vol;
                assert!((u[s] - want).abs() < 1e-9 / vol);
            }
        }
    }

    #[test]
    fn conjugate_heat_refuses_torsion() {
        let g = grid16();
        let a = generate(&ScenarioSpec::new(ScenarioKind::PluriclosedAlpha), &g).unwrap();
        let ctl = StepControl::default();
        let dt = stability_bound(&a, ctl.c_cfl);
        let tr = run_trajectory(start(a, FlowVariant::Pcf), 2, dt, Scheme::Rk4, &ctl).unwrap();
        let u = vec![1.0; g.sites()];
        assert!(matches!(conjugate_heat_backward(&tr, &u, false), Err(PcfError::Unsupported(_))));
    }
}
