//! `pcflow run`: integrate a configured flow, stream diagnostics, write
//! checkpoints and a manifest.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use pcflow::fields::MetricField;
use pcflow::flow::{stability_bound, step, FlowContext, FlowState, StepControl, Trajectory};
use pcflow::functionals::{a_auto, diagnostics, DiagOptions, DiagnosticsRecord};
use pcflow::grid::make_grid;
use pcflow::scenarios::{generate, ScenarioSpec};
use pcflow::suite::entropy_along;
use pcflow::PcfError;
use serde_json::json;

use crate::checkpoint;
use crate::config::{MonitorA, RunConfig};
use crate::error::CliError;

pub const CSV_HEADER: &str =
    "t,volume,degree,lambda,F,W_plus,monitor24,monitor25,calabiW,plres,torsion2,bident,gident,static_res";

pub const OUT_ENV: &str = "PCFLOW_OUT";
pub const DEFAULT_OUT: &str = "pcflow_out";

/// `PCFLOW_OUT`, then `--out`, then `output.dir`, then the default.
pub fn resolve_out_dir(cli: Option<&Path>, cfg: Option<&RunConfig>) -> PathBuf {
    if let Some(v) = std::env::var_os(OUT_ENV).filter(|v| !v.is_empty()) {
        return PathBuf::from(v);
    }
    cli.map(Path::to_path_buf)
        .or_else(|| cfg.and_then(|c| c.out_dir.clone()))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

pub fn csv_row(r: &DiagnosticsRecord) -> String {
    let v = [
        r.t,
        r.volume,
        r.degree,
        r.lambda,
        r.f_at_minimizer,
        r.w_plus,
        r.monitor24,
        r.monitor25,
        r.calabi_w_sup,
        r.plres,
        r.torsion2,
        r.bident,
        r.gident,
        r.static_res,
    ];
    // shortest round-trip digits, so equal bits give equal text
    v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(",")
}

#[derive(Debug, Clone, PartialEq)]
pub enum Status {
    Completed,
    Halted(String),
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub steps: usize,
    pub t: f64,
    pub status: Status,
}

/// Monitor constant and the curvature bound it came from.
pub fn monitor_constant(a: MonitorA, bg: &MetricField) -> (f64, f64) {
    let (c_est, auto) = a_auto(bg);
    match a {
        MonitorA::Auto => (auto, c_est),
        MonitorA::Fixed(v) => (v, c_est),
    }
}

fn side(spec: Option<&ScenarioSpec>, grid: &pcflow::grid::ComplexTorusGrid) -> Result<MetricField, PcfError> {
    match spec {
        Some(s) => generate(s, grid),
        None => Ok(MetricField::identity(grid)),
    }
}

struct Csv {
    w: BufWriter<File>,
    path: PathBuf,
}

impl Csv {
    fn create(path: PathBuf, header: &str) -> Result<Self, CliError> {
        let f = File::create(&path).map_err(|e| CliError::io(&path, e))?;
        let mut c = Csv { w: BufWriter::new(f), path };
        c.line(header)?;
        Ok(c)
    }

    fn line(&mut self, s: &str) -> Result<(), CliError> {
        writeln!(self.w, "{s}")
            .and_then(|_| self.w.flush())
            .map_err(|e| CliError::io(&self.path, e))
    }
}

fn write_text(path: &Path, s: &str) -> Result<(), CliError> {
    std::fs::write(path, s).map_err(|e| CliError::io(path, e))
}

/// Execute a run. Halts still write the manifest and a HALT marker before
/// returning `CliError::Halt`.
pub fn run(cfg: &RunConfig, out: &Path, threads: usize) -> Result<RunOutcome, CliError> {
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let halt_path = out.join("HALT");
    if halt_path.exists() {
        std::fs::remove_file(&halt_path).map_err(|e| CliError::io(&halt_path, e))?;
    }
    let grid = make_grid(cfg.n, cfg.points, cfg.mode)?;
    let mut manifest = json!({
        "program": "pcflow",
        "version": env!("CARGO_PKG_VERSION"),
        "config": cfg.echo,
        "resolved": {
            "n": cfg.n,
            "N": cfg.points,
            "mode": cfg.mode,
            "scenario": cfg.scenario,
            "background": cfg.background,
            "rho_bg": cfg.rho_bg,
            "variant": cfg.variant,
            "scheme": cfg.scheme,
            "c_cfl": cfg.c_cfl,
            "max_retries": cfg.max_retries,
            "dt": cfg.dt,
            "t_end": cfg.t_end,
            "pluriclosed_tol": cfg.pluriclosed_tol,
            "checkpoint_interval": cfg.checkpoint_interval,
            "diagnostics_interval": cfg.diagnostics_interval,
            "lambda": cfg.lambda,
            "entropy": cfg.entropy,
            "tau1": cfg.tau1,
        },
        "conventions": {
            "t3_over_raw": pcflow::conventions::T3_OVER_RAW,
            "flat_volume": pcflow::conventions::flat_volume(cfg.n),
            "real_metric": "G = 2 Re g",
            "volume_density": "2^n det g",
        },
        "threads": threads,
        "parallel": cfg!(feature = "parallel"),
        "csv_header": CSV_HEADER,
    });
    let finish = |manifest: &mut serde_json::Value, status: &Status, steps: usize, t: f64| -> Result<(), CliError> {
        let (label, reason) = match status {
            Status::Completed => ("completed", None),
            Status::Halted(r) => ("halted", Some(r.clone())),
        };
        manifest["status"] = json!(label);
        manifest["halt_reason"] = json!(reason);
        manifest["steps"] = json!(steps);
        manifest["t_final"] = json!(t);
        let p = out.join("manifest.json");
        write_text(&p, &(serde_json::to_string_pretty(manifest)? + "\n"))?;
        if let Some(r) = reason {
            write_text(&halt_path, &format!("t = {t}\nsteps = {steps}\nreason = {r}\n"))?;
        }
        Ok(())
    };

    let built = (|| -> Result<_, PcfError> {
        Ok((
            generate(&cfg.scenario, &grid)?,
            side(cfg.background.as_ref(), &grid)?,
            side(cfg.rho_bg.as_ref(), &grid)?,
        ))
    })();
    let (g0, bg, rho) = match built {
        Ok(v) => v,
        Err(e @ PcfError::NotAdmissible(_)) => {
            let st = Status::Halted(e.to_string());
            finish(&mut manifest, &st, 0, 0.0)?;
            return Err(CliError::Halt(e.to_string()));
        }
        Err(e) => return Err(e.into()),
    };
    let (a, c_est) = monitor_constant(cfg.monitor_a, &bg);
    manifest["monitor"] = json!({ "A": a, "C_est": c_est, "auto": cfg.monitor_a == MonitorA::Auto });
    let ctx = Arc::new(FlowContext::new(cfg.variant, bg, None, rho, g0.clone()));
    let mut s = FlowState::initial(g0, ctx, true);
    let opts = DiagOptions { lambda: cfg.lambda, a };
    let ctl = StepControl {
        c_cfl: cfg.c_cfl,
        max_retries: cfg.max_retries,
        pluriclosed_tol: cfg.pluriclosed_tol,
    };
    let mut csv = Csv::create(out.join("diagnostics.csv"), CSV_HEADER)?;
    let mut warm: Option<Vec<f64>> = None;
    let record = |s: &FlowState, warm: &mut Option<Vec<f64>>, csv: &mut Csv| -> Result<(), CliError> {
        let (rec, u) = diagnostics(s, &opts, warm.as_deref())?;
        *warm = u;
        csv.line(&csv_row(&rec))
    };
    let mut kept = Vec::new();
    let mut steps = 0usize;
    let mut last_row = 0usize;
    record(&s, &mut warm, &mut csv)?;
    if cfg.entropy {
        kept.push(s.clone());
    }
    let tiny = 1e-12 * cfg.t_end.max(1.0);
    let status = loop {
        if s.t >= cfg.t_end - tiny {
            break Status::Completed;
        }
        let bound = stability_bound(&s.g, ctl.c_cfl);
        let h = cfg.dt.unwrap_or(bound).min(bound).min(cfg.t_end - s.t);
        match step(&s, h, cfg.scheme, &ctl) {
            Ok((next, _)) => s = next,
            Err(PcfError::Halt { t, reason }) => break Status::Halted(format!("t = {t}: {reason}")),
            Err(e) => return Err(e.into()),
        }
        steps += 1;
        if cfg.entropy {
            kept.push(s.clone());
        }
        if steps % cfg.diagnostics_interval == 0 {
            record(&s, &mut warm, &mut csv)?;
            last_row = steps;
        }
        if steps % cfg.checkpoint_interval == 0 {
            checkpoint::save(&s, &out.join(format!("checkpoint_{steps:06}.bin")))?;
        }
    };
    if last_row != steps {
        record(&s, &mut warm, &mut csv)?;
    }
    let final_name = match status {
        Status::Completed => "checkpoint_final.bin",
        Status::Halted(_) => "checkpoint_halt.bin",
    };
    checkpoint::save(&s, &out.join(final_name))?;
    if cfg.entropy {
        manifest["entropy"] = entropy_file(&kept, cfg, out)?;
    }
    finish(&mut manifest, &status, steps, s.t)?;
    match status {
        Status::Halted(r) => Err(CliError::Halt(r)),
        Status::Completed => Ok(RunOutcome {
            out_dir: out.to_path_buf(),
            steps,
            t: s.t,
            status,
        }),
    }
}

/// Backward conjugate heat over the uniformly spaced part of the run and
/// W_plus along it, written to `entropy.csv`. Returns a manifest note.
fn entropy_file(states: &[FlowState], cfg: &RunConfig, out: &Path) -> Result<serde_json::Value, CliError> {
    let dt = cfg.dt.expect("validated with entropy");
    // the final step may have been clamped to hit t_end
    let mut end = states.len();
    while end >= 2 && ((states[end - 1].t - states[end - 2].t) - dt).abs() > 1e-9 * dt {
        end -= 1;
    }
    let mut begin = 0;
    if (end - begin) % 2 == 0 {
        begin = 1;
    }
    if end - begin < 3 {
        return Ok(json!({ "written": false, "reason": "fewer than two uniform intervals" }));
    }
    let traj = Trajectory {
        states: states[begin..end].to_vec(),
    };
    match entropy_along(&traj, cfg.tau1, false) {
        Ok(rows) => {
            let mut csv = Csv::create(out.join("entropy.csv"), "t,W_plus,mass")?;
            for (t, w, m) in &rows {
                csv.line(&format!("{t:e},{w:e},{m:e}"))?;
            }
            Ok(json!({ "written": true, "rows": rows.len(), "tau1": cfg.tau1 }))
        }
        Err(e @ PcfError::Unsupported(_)) => Ok(json!({ "written": false, "reason": e.to_string() })),
        Err(e) => Err(e.into()),
    }
}
