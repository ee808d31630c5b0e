//! `diag`, `oracle` and `check`.

use std::path::Path;

use pcflow::chern::{torsion_3form, MetricJet};
use pcflow::fields::{MetricField, RealTensorField};
use pcflow::flow::{run_trajectory, stability_bound, Scheme, StepControl};
use pcflow::functionals::{calabi_w, diagnostics, lambda_with, DiagOptions, LambdaOptions, RiemannData};
use pcflow::oracles::{calabi_site, chern_curvature_s, dense_ground_state, f_min, fd_time_derivative, EvolvedQuantity, DENSE_LIMIT};
use pcflow::suite::{run_criterion, Bound, CheckLine, Criterion, Suite, SuiteOptions};

use crate::checkpoint;
use crate::error::CliError;
use crate::runner::{csv_row, monitor_constant, CSV_HEADER};
use crate::config::MonitorA;

/// Header plus one diagnostics row for a checkpoint.
pub fn diag(path: &Path) -> Result<String, CliError> {
    let s = checkpoint::load(path)?;
    let (a, _) = monitor_constant(MonitorA::Auto, &s.background()?);
    let (rec, _) = diagnostics(&s, &DiagOptions { lambda: true, a }, None)?;
    Ok(format!("{CSV_HEADER}\n{}\n", csv_row(&rec)))
}

pub const ORACLES: [&str; 5] = ["chern_s", "dense_lambda", "f_min", "calabi", "evolution"];

fn torsion(g: &MetricField) -> RealTensorField {
    if g.n == 2 {
        torsion_3form(g)
    } else {
        RealTensorField::zeros(&g.grid, 3)
    }
}

/// Compare an independent slow implementation with the production path on
/// the state stored in a checkpoint.
pub fn oracle(name: &str, path: &Path, tol_scale: f64) -> Result<Vec<CheckLine>, CliError> {
    if !ORACLES.contains(&name) {
        return Err(CliError::Usage(format!(
            "unknown oracle '{name}' (one of {})",
            ORACLES.join(", ")
        )));
    }
    let s = checkpoint::load(path)?;
    let g = &s.g;
    let below = |label: &str, v: f64, tol: f64| CheckLine::new(label, v, Bound::Below(tol * tol_scale));
    let lines = match name {
        "chern_s" => {
            // the oracle differentiates a product, so aliasing sets the floor
            let d = chern_curvature_s(g).max_diff(&MetricJet::new(g).s());
            vec![below("chern_s.max_diff", d, 1e-8)]
        }
        "dense_lambda" => {
            if g.grid.sites() > DENSE_LIMIT {
                return Err(CliError::Usage(format!(
                    "dense oracle needs at most {DENSE_LIMIT} sites, checkpoint has {}",
                    g.grid.sites()
                )));
            }
            let t3 = torsion(g);
            let main = lambda_with(&RiemannData::with_torsion(g, &t3), None, &LambdaOptions::default())?;
            let dense = dense_ground_state(g, &t3)?;
            vec![below("dense_lambda.abs_diff", (dense - main.lambda).abs(), 1e-8)]
        }
        "f_min" => {
            let t3 = torsion(g);
            let main = lambda_with(&RiemannData::with_torsion(g, &t3), None, &LambdaOptions::default())?;
            let (j, _) = f_min(g, &t3, 1e-13, 400)?;
            vec![below("f_min.abs_diff", (j - main.lambda).abs(), 1e-6)]
        }
        "calabi" => {
            let gt = s.background()?;
            let w = calabi_w(g, &gt);
            let n = g.grid.sites();
            let worst = [0, n / 3, (2 * n) / 3, n - 1]
                .iter()
                .map(|&i| {
                    let o = calabi_site(g, &gt, i);
                    (o - w.values[i].re).abs() / (1.0 + o.abs())
                })
                .fold(0.0, f64::max);
            vec![below("calabi.site_rel_diff", worst, 1e-8)]
        }
        _ => {
            // two short steps and a halved pair for the centered difference
            let dt = 0.95 * stability_bound(g, StepControl::default().c_cfl) / 4.0;
            let ctl = StepControl::default();
            let t1 = run_trajectory(s.clone(), 2, dt, Scheme::Rk4, &ctl)?;
            let mut out = Vec::new();
            for (q, label) in [
                (EvolvedQuantity::TraceBackground, "tr_bg_g"),
                (EvolvedQuantity::LogVolumeRatio, "log_vol_ratio"),
                (EvolvedQuantity::TraceInverse, "tr_g_bg"),
            ] {
                let r = fd_time_derivative(&t1, q)?[0].2;
                out.push(below(&format!("evolution.{label}"), r, 1e-4));
            }
            out
        }
    };
    Ok(lines)
}

pub fn check(suite: &str, opts: &SuiteOptions, mut each: impl FnMut(&Criterion)) -> Result<Vec<Criterion>, CliError> {
    let ids = match (Suite::parse(suite), suite.parse::<u8>()) {
        (Some(s), _) => s.criteria(),
        (None, Ok(id)) if (1..=13).contains(&id) => vec![id],
        _ => {
            return Err(CliError::Usage(format!(
                "unknown suite '{suite}' (identities, evolution, monotonicity, convergence, all, or 1..13)"
            )))
        }
    };
    Ok(ids
        .into_iter()
        .map(|id| {
            let c = run_criterion(id, opts);
            each(&c);
            c
        })
        .collect())
}

pub fn render(c: &Criterion) -> String {
    let mut s = format!(
        "criterion {} {} {}\n",
        c.id,
        c.title,
        if c.passed() { "PASS" } else { "FAIL" }
    );
    for l in &c.lines {
        s += &format!("  {l}\n");
    }
    if let Some(e) = &c.error {
        s += &format!("  error: {e}\n");
    }
    s
}
