//! Trains a StROL correction on the laptop scene and compares basin maps
//! with and without it.
//!
//! Run: `cargo run --release --example demo2d_basins -- [out_dir]`

use std::fs::File;
use std::path::PathBuf;

use strol::config::Config;
use strol::lyapunov::basin_map;
use strol::rules::RuleKind;
use strol::trainer::train;

const CONFIG: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/demo2d.toml");

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "out".into()));
    std::fs::create_dir_all(&out)?;
    let cfg = Config::load(CONFIG)?;
    let env = cfg.env_handle()?;
    let (net, report) = train(&env, &cfg.train_config())?;
    println!(
        "trained {} epochs in {:.1} s: loss {:.4} -> {:.4}",
        report.losses.len(),
        report.wall_time,
        report.losses[0],
        report.losses[report.losses.len() - 1]
    );

    let spec = cfg.basin_spec()?;
    for (label, rule) in [("gradient", RuleKind::Gradient), ("strol", RuleKind::strol(net))] {
        let map = basin_map(&env, &rule, &spec)?;
        let path = out.join(format!("basin_demo2d_{label}.csv"));
        map.write_csv(File::create(&path)?, label)?;
        println!(
            "{label:>8}: converged {:5.1}%  (avoid {:5.1}%, approach {:5.1}%)  -> {}",
            100.0 * map.converged_fraction(),
            100.0 * map.mode_fraction(0),
            100.0 * map.mode_fraction(1),
            path.display()
        );
    }
    Ok(())
}
