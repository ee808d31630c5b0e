//! Acceptance criteria 1 to 13: one PASS/FAIL line per criterion, followed by
//! the individual measurements. Set PCFLOW_CRITERIA=3,7 to run a subset.

use pcflow::suite::{run_criterion, SuiteOptions};

fn main() {
    let ids: Vec<u8> = match std::env::var("PCFLOW_CRITERIA") {
        Ok(s) if !s.trim().is_empty() => s.split(',').filter_map(|x| x.trim().parse().ok()).collect(),
        _ => (1..=13).collect(),
    };
    let opts = SuiteOptions::default();
    let mut failed = Vec::new();
    for id in ids {
        let t0 = std::time::Instant::now();
        let c = run_criterion(id, &opts);
        let verdict = if c.passed() { "PASS" } else { "FAIL" };
        println!("criterion {:2} {:<28} {} ({:.1}s)", c.id, c.title, verdict, t0.elapsed().as_secs_f64());
        for l in &c.lines {
            println!("    {l}");
        }
        if let Some(e) = &c.error {
            println!("    error: {e}");
        }
        if !c.passed() {
            failed.push(id);
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
