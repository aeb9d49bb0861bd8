//! Writes the built-in grids as JSON, plus the scripted stress-ramp scenario:
//! `cargo run --example export_grids -- <dir>`.

use std::path::PathBuf;

use gridguard::{fixtures, synth};

fn main() -> std::io::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "data".into()));
    std::fs::create_dir_all(&dir)?;
    for (name, grid) in [
        ("triangle", fixtures::triangle()),
        ("stress_triangle", fixtures::stress_triangle()),
        ("grid36", synth::grid36()),
    ] {
        std::fs::write(dir.join(format!("{name}.json")), grid.to_json())?;
    }
    let scenarios = dir.join("scenarios").join("stress_triangle");
    std::fs::create_dir_all(&scenarios)?;
    let s = fixtures::stress_ramp_scenario(30);
    std::fs::write(scenarios.join(format!("{}.csv", s.id)), s.to_csv(&fixtures::stress_triangle()))?;
    Ok(())
}
