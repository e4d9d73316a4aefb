//! Regenerates the bundled synthetic dataset: 92 rows from the five-category
//! hybrid preset, observed through multinomial counts with m = 2000.
//!
//! cargo run -p simplexsm --example make_synthetic -- crates/core/data

use std::fs::File;
use std::path::PathBuf;

use simplexsm::sampler::{sample_hybrid, sample_multinomial_compound, RngConfig, DEFAULT_WARMUP};
use simplexsm::simulation::preset;

fn main() -> simplexsm::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "crates/core/data".into()));
    let model = preset(1)?.model;
    let mut rng = RngConfig::new(20080101, 0).rng();
    let (latent, _) = sample_hybrid(&model, 92, &mut rng, 1.0, DEFAULT_WARMUP)?;
    let named = simplexsm::ContinuousDataset::with_names(
        ["cat1", "cat2", "cat3", "cat4", "pooled"].map(String::from).to_vec(),
        latent.values().to_vec(),
    )?;
    let counts = sample_multinomial_compound(&named, &[2000], &mut rng)?;
    counts.write_csv(File::create(dir.join("synthetic_counts.csv"))?)?;
    counts.to_proportions()?.write_csv(File::create(dir.join("synthetic_proportions.csv"))?)?;
    Ok(())
}
