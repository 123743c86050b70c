pub mod data;
pub mod eval;
pub mod gradcheck;
pub mod project;
pub mod report;
pub mod train;

use gif_fusion::degradation::Sample;
use gif_fusion::experiment::desk_datasets;
use gif_fusion::synth::{load_dataset, split};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};

/// Train and test sets for one seed.
pub fn datasets(cfg: &ExperimentConfig, seed: u64) -> CliResult<(Vec<Sample>, Vec<Sample>)> {
    match &cfg.dataset_dir {
        None => Ok(desk_datasets(seed, cfg.train_samples, cfg.test_samples, &cfg.scene)),
        Some(dir) => {
            let (_, samples) = load_dataset(dir).map_err(|e| CliError::from(e).context(dir.display().to_string()))?;
            let frac = cfg.train_samples as f64 / (cfg.train_samples + cfg.test_samples) as f64;
            let (train, test) = split(&samples, frac, seed);
            if train.is_empty() || test.is_empty() {
                return Err(CliError::config(format!("{} has too few samples to split", dir.display())));
            }
            Ok((train, test))
        }
    }
}
