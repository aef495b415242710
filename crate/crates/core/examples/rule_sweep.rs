//! Runs a sweep from a config file and compares StROL against Gradient with
//! a paired bootstrap interval per condition.
//!
//! Run: `cargo run --release --example rule_sweep -- configs/highway.toml`
//! Rules whose weight files are missing are skipped.

use strol::bench::{compare_cells, run_sweep, DEFAULT_RESAMPLES};
use strol::config::Config;
use strol::rules::RuleName;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/highway.toml").into());
    let cfg = Config::load(&path)?;
    let env = cfg.env_handle()?;
    let mut spec = cfg.sweep_spec()?;
    spec.episodes = spec.episodes.min(50);
    let result = run_sweep(&env, &spec)?;
    print!("{}", result.summary_csv(&format!("sweep of {path}")));

    for cond in spec.conditions() {
        let find = |rule| result.find(rule, &cond.prior, cond.sigma, cond.bias).and_then(|c| c.evaluation());
        let (Some(g), Some(s)) = (find(RuleName::Gradient), find(RuleName::Strol)) else {
            continue;
        };
        let errors = |e: &strol::trainer::Evaluation| e.episodes.iter().map(|x| x.final_error).collect::<Vec<_>>();
        let cmp = compare_cells(&errors(g), &errors(s), DEFAULT_RESAMPLES, spec.seed)?;
        println!(
            "{} sigma={}: strol - gradient error {:+.4} [{:+.4}, {:+.4}]{}",
            cond.prior,
            cond.sigma,
            cmp.mean_difference,
            cmp.lo,
            cmp.hi,
            if cmp.significant { " *" } else { "" }
        );
    }
    Ok(())
}
