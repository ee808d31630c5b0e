//! End-to-end runs of the `pcflow` binary on small grids.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_pcflow");
const HEADER: &str =
    "t,volume,degree,lambda,F,W_plus,monitor24,monitor25,calabiW,plres,torsion2,bident,gident,static_res";

fn write_cfg(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn pcflow(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env_remove("PCFLOW_OUT").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Rows as (name -> column) lookups.
fn read_csv(p: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = std::fs::read_to_string(p).unwrap();
    let mut lines = text.lines();
    let head: Vec<String> = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines
        .map(|l| l.split(',').map(|v| v.parse::<f64>().unwrap()).collect())
        .collect();
    (head, rows)
}

fn col(head: &[String], name: &str) -> usize {
    head.iter().position(|h| h == name).unwrap()
}

const FLAT: &str = "grid.n = 2\ngrid.N = 8\nscenario.kind = flat\nflow = pcf\nt_end = 0.1\n";

const KAHLER: &str = "[grid]\nn = 2\nN = 8\n[scenario]\nkind = kahler_potential\neps = 0.05\n[flow]\nvariant = pcf\nt_end = 0.1\n";

// at N = 8 the aliased right-hand side leaves torsion at truncation level,
// so the exact-zero check runs where the data is resolved
const KAHLER16: &str = "[grid]\nn = 2\nN = 16\n[scenario]\nkind = kahler_potential\neps = 0.05\n[flow]\nvariant = pcf\nt_end = 0.04\n[diagnostics]\nlambda = false\n";

#[test]
fn flat_run_residuals_vanish() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), "flat.cfg", FLAT);
    let out = tmp.path().join("out");
    let o = pcflow(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = std::fs::read_to_string(out.join("diagnostics.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), HEADER);
    let (head, rows) = read_csv(&out.join("diagnostics.csv"));
    assert!(rows.len() >= 2);
    for r in &rows {
        for name in ["degree", "calabiW", "plres", "torsion2", "bident", "gident", "static_res"] {
            assert!(r[col(&head, name)].abs() < 1e-10, "{name} = {}", r[col(&head, name)]);
        }
    }
    let t: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    assert!(t.windows(2).all(|w| w[1] > w[0]));
    assert_eq!(*t.last().unwrap(), 0.1);
    assert!(out.join("checkpoint_final.bin").exists());
    assert!(!out.join("HALT").exists());
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["status"], "completed");
    assert_eq!(m["config"]["grid.N"], "8");
    assert_eq!(m["conventions"]["t3_over_raw"], 6.0);
    assert_eq!(m["monitor"]["A"], 1.0);
}

#[test]
fn rerun_is_bit_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), "k.cfg", KAHLER);
    let mut files = Vec::new();
    for (i, threads) in ["1", "0"].iter().enumerate() {
        let out = tmp.path().join(format!("out{i}"));
        let o = pcflow(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--threads", threads]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        files.push((
            std::fs::read(out.join("diagnostics.csv")).unwrap(),
            std::fs::read(out.join("checkpoint_final.bin")).unwrap(),
        ));
    }
    assert!(files[0].0 == files[1].0, "diagnostics differ between runs");
    assert!(files[0].1 == files[1].1, "checkpoints differ between runs");
}

#[test]
fn kahler_run_keeps_zero_torsion() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), "k.cfg", KAHLER16);
    let out = tmp.path().join("out");
    let o = pcflow(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (head, rows) = read_csv(&out.join("diagnostics.csv"));
    let c = col(&head, "torsion2");
    for r in &rows {
        assert!(r[c] < 1e-16, "torsion2 = {}", r[c]);
    }
    assert!(rows.len() >= 3);
}

#[test]
fn kahler_lambda_nondecreasing() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), "k.cfg", KAHLER);
    let out = tmp.path().join("out");
    let o = pcflow(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (head, rows) = read_csv(&out.join("diagnostics.csv"));
    let l = col(&head, "lambda");
    assert!(rows.windows(2).all(|w| w[1][l] >= w[0][l] - 1e-9));
}

#[test]
fn oversized_amplitude_halts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), "big.cfg", &FLAT.replace("flat", "kahler_potential").replace("t_end", "scenario.eps = 5\nt_end"));
    let out = tmp.path().join("out");
    let o = pcflow(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    let halt = std::fs::read_to_string(out.join("HALT")).unwrap();
    assert!(halt.contains("largest admissible eps"), "{halt}");
    let m = std::fs::read_to_string(out.join("manifest.json")).unwrap();
    assert!(m.contains("\"halted\""));
}

#[test]
fn integrator_halt_writes_marker() {
    // a pluriclosed tolerance no step can meet forces every retry to fail
    let tmp = tempfile::tempdir().unwrap();
    let body = "grid.n = 2\ngrid.N = 8\nscenario.kind = pluriclosed_alpha\nflow = pcf\nt_end = 0.1\nflow.pluriclosed_tol = 1e-300\nflow.max_retries = 1\n";
    let cfg = write_cfg(tmp.path(), "h.cfg", body);
    let out = tmp.path().join("out");
    let o = pcflow(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(out.join("HALT").exists());
    assert!(out.join("checkpoint_halt.bin").exists());
    // the initial row survives
    let (_, rows) = read_csv(&out.join("diagnostics.csv"));
    assert!(!rows.is_empty());
}

#[test]
fn config_errors_exit_2_with_lines() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), "bad.cfg", "grid.n = 2\ngrid.N = 7\nscenario.kind = flat\nflow = pcf\nt_end = 0.1\nt_end = 0.2\nwhat = 1\n");
    let o = pcflow(&["run", cfg.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    let e = stderr(&o);
    assert!(e.contains("line 2: N must be even >= 8"), "{e}");
    assert!(e.contains("lines 5 and 6"), "{e}");
    assert!(e.contains("line 7: unknown key 'what'"), "{e}");
    assert!(!tmp.path().join("o").exists());
    let o = pcflow(&["run", tmp.path().join("missing.cfg").to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

#[test]
fn env_out_overrides_flag() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), "flat.cfg", &format!("{FLAT}diagnostics.lambda = false\n"));
    let env_dir = tmp.path().join("from_env");
    let flag_dir = tmp.path().join("from_flag");
    let o = Command::new(BIN)
        .args(["run", cfg.to_str().unwrap(), "--out", flag_dir.to_str().unwrap()])
        .env("PCFLOW_OUT", &env_dir)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(env_dir.join("diagnostics.csv").exists());
    assert!(!flag_dir.exists());
}

#[test]
fn diag_and_oracles_on_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let body = "grid.n = 2\ngrid.N = 8\nscenario.kind = pluriclosed_alpha\nflow = pcf\nt_end = 0.05\n";
    let cfg = write_cfg(tmp.path(), "a.cfg", body);
    let out = tmp.path().join("out");
    let o = pcflow(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let ck = out.join("checkpoint_final.bin");
    let ck = ck.to_str().unwrap();

    let o = pcflow(&["diag", ck]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), HEADER);
    let row: Vec<f64> = lines.next().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    let (_, rows) = read_csv(&out.join("diagnostics.csv"));
    let last = rows.last().unwrap();
    for (i, (a, b)) in row.iter().zip(last).enumerate() {
        if a.is_nan() {
            assert!(b.is_nan());
        } else {
            assert!((a - b).abs() <= 1e-8 * (1.0 + b.abs()), "column {i}: {a} vs {b}");
        }
    }

    let oracle_ok = |name: &str, ck: &str| {
        let o = pcflow(&["oracle", name, ck]);
        let s = String::from_utf8_lossy(&o.stdout).into_owned();
        assert_eq!(code(&o), 0, "{name}: {s} {}", stderr(&o));
        assert!(!s.is_empty() && s.lines().all(|l| l.ends_with("PASS")), "{s}");
    };
    // the dense eigensolver only takes the coarse grid
    oracle_ok("dense_lambda", ck);
    let o = pcflow(&["oracle", "nope", ck]);
    assert_eq!(code(&o), 2);

    let cfg16 = write_cfg(tmp.path(), "a16.cfg", &body.replace("N = 8", "N = 16").replace("0.05", "0.02\ndiagnostics.lambda = false"));
    let out16 = tmp.path().join("out16");
    let o = pcflow(&["run", cfg16.to_str().unwrap(), "--out", out16.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let ck16 = out16.join("checkpoint_final.bin");
    let ck16 = ck16.to_str().unwrap();
    for name in ["chern_s", "calabi", "evolution"] {
        oracle_ok(name, ck16);
    }
    // an impossible tolerance turns the same comparison into a check failure
    let o = pcflow(&["oracle", "chern_s", ck16, "--tol-scale", "1e-30"]);
    assert_eq!(code(&o), 4);
    // and the dense oracle refuses the fine grid
    let o = pcflow(&["oracle", "dense_lambda", ck16]);
    assert_eq!(code(&o), 2);
}

#[test]
fn corrupt_checkpoint_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join("x.bin");
    std::fs::write(&p, b"PCFLOWCK garbage").unwrap();
    let o = pcflow(&["diag", p.to_str().unwrap()]);
    assert_ne!(code(&o), 0);
    assert!(stderr(&o).contains("checkpoint"));
}

#[test]
fn check_suite_names() {
    let o = pcflow(&["check", "bogus"]);
    assert_eq!(code(&o), 2);
    let o = pcflow(&["check", "1", "--tol-scale", "1"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let s = String::from_utf8_lossy(&o.stdout).into_owned();
    assert!(s.starts_with("criterion 1 flat fixed point PASS"), "{s}");
}
