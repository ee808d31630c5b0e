//! Reproducible initial data.

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chern::{ddbar_of_01, minus_ddbar};
use crate::error::{PcfError, Result};
use crate::fields::{FormField, MetricField, SiteMat, Tensor11};
use crate::grid::ComplexTorusGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Flat,
    KahlerPotential,
    PluriclosedAlpha,
    Conformal,
    CustomModes,
}

impl ScenarioKind {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "flat" => ScenarioKind::Flat,
            "kahler_potential" => ScenarioKind::KahlerPotential,
            "pluriclosed_alpha" => ScenarioKind::PluriclosedAlpha,
            "conformal" => ScenarioKind::Conformal,
            "custom_modes" => ScenarioKind::CustomModes,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Flat => "flat",
            ScenarioKind::KahlerPotential => "kahler_potential",
            ScenarioKind::PluriclosedAlpha => "pluriclosed_alpha",
            ScenarioKind::Conformal => "conformal",
            ScenarioKind::CustomModes => "custom_modes",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    pub eps: f64,
    /// integer frequency vectors over (x1, y1, x2, y2); empty means defaults
    pub modes: Vec<Vec<i32>>,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn new(kind: ScenarioKind) -> Self {
        ScenarioSpec {
            kind,
            eps: 0.05,
            modes: Vec::new(),
            seed: 1,
        }
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps = eps;
        self
    }

    pub fn with_modes(mut self, modes: Vec<Vec<i32>>) -> Self {
        self.modes = modes;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Modes in use on a grid with `n` complex dimensions.
    pub fn resolved_modes(&self, n: usize) -> Vec<Vec<i32>> {
        if !self.modes.is_empty() {
            return self.modes.clone();
        }
        if n == 1 {
            vec![vec![1, 0], vec![0, 1], vec![1, 1]]
        } else {
            vec![vec![1, 0, 1, 0], vec![0, 1, 1, 0], vec![1, 0, 0, -1], vec![0, 1, 1, 1]]
        }
    }

    fn validate(&self, grid: &ComplexTorusGrid) -> Result<Vec<Vec<i32>>> {
        if !self.eps.is_finite() || self.eps < 0.0 {
            return Err(PcfError::Invalid(format!("amplitude {} must be >= 0", self.eps)));
        }
        let modes = self.resolved_modes(grid.n_complex());
        let limit = (grid.points_per_axis() / 4) as i32;
        for m in &modes {
            if m.len() != grid.real_dim() {
                return Err(PcfError::Invalid(format!(
                    "mode {m:?} needs {} entries",
                    grid.real_dim()
                )));
            }
            if m.iter().all(|&v| v == 0) {
                return Err(PcfError::Invalid("zero mode".into()));
            }
            if m.iter().any(|v| v.abs() >= limit) {
                return Err(PcfError::Invalid(format!(
                    "mode {m:?} not below N/4 = {limit}"
                )));
            }
        }
        Ok(modes)
    }
}

fn phase(m: &[i32], x: &[f64]) -> f64 {
    m.iter().zip(x).map(|(&k, &xi)| k as f64 * xi).sum()
}

fn norm_sq(m: &[i32]) -> f64 {
    m.iter().map(|&k| (k * k) as f64).sum()
}

fn unit_complex(rng: &mut ChaCha8Rng) -> C64 {
    C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
}

/// The (0,1) form `alpha_jbar = sum_m eps/|m|^2 c_{m,j} e^{i m.x}`.
pub fn alpha_field(spec: &ScenarioSpec, grid: &ComplexTorusGrid) -> Result<FormField> {
    let modes = spec.validate(grid)?;
    let n = grid.n_complex();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let coeffs: Vec<Vec<C64>> = modes
        .iter()
        .map(|_| (0..n).map(|_| unit_complex(&mut rng)).collect())
        .collect();
    let mut a = FormField::zeros(grid, 0, 1, true);
    for (j, comp) in a.comps.iter_mut().enumerate() {
        *comp = grid.sample(|x| {
            modes
                .iter()
                .zip(&coeffs)
                .map(|(m, c)| {
                    spec.eps / norm_sq(m) * c[j] * C64::from_polar(1.0, phase(m, x))
                })
                .sum()
        });
    }
    Ok(a)
}

/// Real potential `sum_m eps/|m|^2 (c e^{i m.x} + c.c.)`.
fn potential(spec: &ScenarioSpec, modes: &[Vec<i32>], grid: &ComplexTorusGrid) -> Vec<C64> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let coeffs: Vec<C64> = modes.iter().map(|_| unit_complex(&mut rng)).collect();
    grid.sample(|x| {
        let v: f64 = modes
            .iter()
            .zip(&coeffs)
            .map(|(m, c)| 2.0 * spec.eps / norm_sq(m) * (c * C64::from_polar(1.0, phase(m, x))).re)
            .sum();
        C64::new(v, 0.0)
    })
}

/// `omega_0 + d alpha + dbar conj(alpha)` with a flat base.
pub fn metric_from_alpha(alpha: &FormField) -> Result<MetricField> {
    let t = Tensor11::identity(&alpha.grid).axpy(1.0, &ddbar_of_01(alpha));
    MetricField::new(t)
}

fn build(spec: &ScenarioSpec, grid: &ComplexTorusGrid) -> Result<Tensor11> {
    let modes = spec.validate(grid)?;
    let n = grid.n_complex();
    Ok(match spec.kind {
        ScenarioKind::Flat => Tensor11::identity(grid),
        ScenarioKind::KahlerPotential => {
            let phi = potential(spec, &modes, grid);
            // g = delta + d dbar phi
            Tensor11::identity(grid).axpy(-1.0, &minus_ddbar(grid, &phi))
        }
        ScenarioKind::PluriclosedAlpha => {
            let a = alpha_field(spec, grid)?;
            Tensor11::identity(grid).axpy(1.0, &ddbar_of_01(&a))
        }
        ScenarioKind::Conformal => {
            let u = potential(spec, &modes, grid);
            Tensor11::from_site_fn(grid, |s| {
                let mut m = SiteMat::identity(n);
                for k in 0..n {
                    m.a[k][k] *= u[s].re.exp();
                }
                m
            })
        }
        ScenarioKind::CustomModes => {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            let hs: Vec<SiteMat> = modes
                .iter()
                .map(|_| {
                    let mut h = SiteMat::zeros(n);
                    for k in 0..n {
                        for l in 0..n {
                            h.a[k][l] = unit_complex(&mut rng);
                        }
                    }
                    h
                })
                .collect();
            Tensor11::from_site_fn(grid, |s| {
                let x = grid.coords(s);
                let mut m = SiteMat::identity(n);
                for (mode, h) in modes.iter().zip(&hs) {
                    let e = C64::from_polar(1.0, phase(mode, &x));
                    let w = spec.eps / norm_sq(mode);
                    for k in 0..n {
                        for l in 0..n {
                            m.a[k][l] += w * (h.a[k][l] * e + h.a[l][k].conj() * e.conj());
                        }
                    }
                }
                m
            })
        }
    })
}

/// Generate the scenario metric. A positivity failure reports the largest
/// admissible amplitude.
pub fn generate(spec: &ScenarioSpec, grid: &ComplexTorusGrid) -> Result<MetricField> {
    let t = build(spec, grid)?;
    match MetricField::new(t) {
        Ok(g) => Ok(g),
        Err(PcfError::NotPositive { site, eig }) => {
            let eps_max = max_admissible_eps(spec, grid)?;
            Err(PcfError::NotAdmissible(format!(
                "scenario {} with eps = {} is not positive definite (site {site}, eigenvalue {eig:e}); largest admissible eps ~ {eps_max:.6}",
                spec.kind.name(),
                spec.eps
            )))
        }
        Err(e) => Err(e),
    }
}

fn is_pd(spec: &ScenarioSpec, grid: &ComplexTorusGrid, eps: f64) -> Result<bool> {
    let s = ScenarioSpec {
        eps,
        ..spec.clone()
    };
    let t = build(&s, grid)?;
    Ok(crate::fields::min_eigenvalue(&t).1 > 0.0)
}

/// Bisection for the largest amplitude keeping the metric positive definite.
pub fn max_admissible_eps(spec: &ScenarioSpec, grid: &ComplexTorusGrid) -> Result<f64> {
    let mut lo = 0.0;
    let mut hi = spec.eps.max(1e-3);
    while is_pd(spec, grid, hi)? {
        lo = hi;
        hi *= 2.0;
        if hi > 1e6 {
            return Ok(f64::INFINITY);
        }
    }
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if is_pd(spec, grid, mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}
