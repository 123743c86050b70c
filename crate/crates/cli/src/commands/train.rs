use std::path::Path;
use std::time::Instant;

use gif_fusion::detector::{FusionMode, Model, TrainConfig, Trainer};
use serde_json::json;

use super::datasets;
use crate::config::{checkpoint_name, ExperimentConfig};
use crate::error::{to_json, write_file, CliError, CliResult};
use crate::TrainArgs;

fn save(trainer: &Trainer, path: &Path, cfg: &ExperimentConfig, mode: FusionMode, seed: u64) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| CliError::new(crate::error::Class::Io, e).context(parent.display().to_string()))?;
    }
    let mut extra = serde_json::Map::new();
    extra.insert("config_hash".into(), json!(cfg.hash()));
    extra.insert("seed".into(), json!(seed));
    extra.insert("mode".into(), json!(mode));
    trainer.save_with_metadata(path, extra).map_err(|e| CliError::from(e).context(path.display().to_string()))
}

fn resume(path: &Path, cfg: &ExperimentConfig, mode: FusionMode, seed: u64) -> CliResult<Trainer> {
    let mut t = Trainer::load(path).map_err(|e| CliError::from(e).context(path.display().to_string()))?;
    let want = cfg.train_for(seed);
    if t.model.config != cfg.model_for(mode) || (TrainConfig { epochs: want.epochs, ..t.config.clone() }) != want {
        return Err(CliError::config(format!("{} was trained with a different configuration", path.display())));
    }
    if t.epoch > want.epochs {
        return Err(CliError::config(format!("{} is already past epoch {}", path.display(), want.epochs)));
    }
    t.config.epochs = want.epochs;
    Ok(t)
}

pub fn log_csv(trainer: &Trainer) -> String {
    let mut out = String::from("epoch,loss,learning_rate,accuracy\n");
    for m in &trainer.log {
        out.push_str(&format!("{},{:.9},{},{:.6}\n", m.epoch, m.loss, m.learning_rate, m.accuracy));
    }
    out
}

pub fn run(args: &TrainArgs) -> CliResult<()> {
    let cfg = args.experiment.resolve()?;
    let ck_dir = cfg.checkpoint_dir();
    let log_dir = cfg.output_dir.join("logs");
    for &seed in &cfg.seeds {
        let (train, _) = datasets(&cfg, seed)?;
        for &mode in &cfg.modes {
            let start = Instant::now();
            let path = ck_dir.join(checkpoint_name(mode, seed));
            let mut trainer = if args.resume && path.exists() {
                resume(&path, &cfg, mode, seed)?
            } else {
                Trainer::new(Model::init(cfg.model_for(mode), seed)?, cfg.train_for(seed))?
            };
            let first = trainer.epoch;
            while trainer.epoch < trainer.config.epochs {
                let m = trainer.run_epoch(&train)?;
                eprintln!("{mode} seed {seed} epoch {:>3} loss {:.5} acc {:.4}", m.epoch, m.loss, m.accuracy);
                if args.checkpoint_every > 0 && trainer.epoch % args.checkpoint_every == 0 {
                    save(&trainer, &path, &cfg, mode, seed)?;
                }
            }
            save(&trainer, &path, &cfg, mode, seed)?;
            let stem = format!("{mode}_seed{seed}");
            write_file(&log_dir.join(format!("{stem}.csv")), log_csv(&trainer))?;
            let timing = json!({ "mode": mode, "seed": seed, "epochs_run": trainer.epoch - first, "seconds": start.elapsed().as_secs_f64() });
            write_file(&log_dir.join(format!("{stem}.timing.json")), to_json(&timing))?;
            println!("{}: {} epochs, final loss {:.5}", path.display(), trainer.epoch, trainer.log.last().map_or(f64::NAN, |m| m.loss));
        }
    }
    write_file(&cfg.output_dir.join("config.toml"), cfg.to_toml())?;
    Ok(())
}
