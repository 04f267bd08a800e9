//! End-to-end file pipeline: write a JSON configuration, simulate
//! correlation data, and run a source reconstruction from the files.
//!
//! Run with `cargo run --release --example experiment_pipeline`.

use passive_scatter::cli::{cmd_invert, cmd_simulate, Experiment};
use passive_scatter::inversion::InversionMode;
use passive_scatter::scenarios::source_experiment;

fn main() -> passive_scatter::Result<()> {
    let dir = std::env::temp_dir().join("passive-scatter-pipeline");
    std::fs::create_dir_all(&dir)?;
    let config_path = dir.join("config.json");
    std::fs::write(&config_path, serde_json::to_string_pretty(&source_experiment(42))?)?;
    let exp = Experiment::load(&config_path)?;
    let data = dir.join("data");
    let sim = cmd_simulate(&exp, &data)?;
    println!("simulated: {}", sim.cobs.display());
    let out = cmd_invert(&exp, InversionMode::Source, &data, &dir.join("source"))?;
    println!("relative q error: {:.4}", out.comparison.q_relative_error.unwrap_or(f64::NAN));
    for f in out.files {
        println!("wrote {}", f.display());
    }
    Ok(())
}
