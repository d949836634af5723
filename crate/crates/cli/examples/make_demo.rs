//! Regenerates `demo/demo.csv`.

use std::path::PathBuf;

use ivbart::simlab::{generate_dataset, SimScenario, Truth};
use ivbart_cli::data::write_dataset;

pub fn demo_scenario() -> SimScenario {
    SimScenario { truth: Truth::NonlinearH, rho: 0.7, c: 1.0, n: 300, n_snps: 10, n_x: 3, replications: 1, seed: 2024, genotypes: None }
}

fn main() -> anyhow::Result<()> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../demo/demo.csv");
    let data = generate_dataset(&demo_scenario(), 0)?;
    write_dataset(&path, &data)?;
    println!("wrote {}", path.display());
    Ok(())
}
