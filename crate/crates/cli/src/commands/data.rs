use gif_fusion::degradation::{apply, sample_spec, InapplicablePolicy, Sample};
use gif_fusion::rng::rng_for;
use gif_fusion::synth::{generate_dataset, load_dataset, save_dataset};

use crate::config::{hash_json, ExperimentConfig};
use crate::error::{to_json, write_file, CliError, CliResult};
use crate::{AugmentArgs, GenerateArgs};

pub fn generate(args: &GenerateArgs) -> CliResult<()> {
    let cfg = ExperimentConfig::load(args.config.as_deref())?;
    cfg.scene.validate()?;
    if args.samples == 0 {
        return Err(CliError::config("samples must be positive"));
    }
    let data = generate_dataset(args.samples, args.seed, &cfg.scene);
    save_dataset(&args.out, &data, args.seed, &cfg.scene).map_err(|e| CliError::from(e).context(args.out.display().to_string()))?;
    let positives: usize = data.iter().map(|s| s.labels.positives()).sum();
    println!("{}: {} samples, {} positive cells", args.out.display(), data.len(), positives);
    Ok(())
}

/// Stream tag separating augmentation previews from training draws.
const PREVIEW: u64 = 0x5052_4556;

pub fn augment(args: &AugmentArgs) -> CliResult<()> {
    let cfg = ExperimentConfig::load(args.config.as_deref())?;
    let mut train = cfg.train.clone();
    if let Some(p) = &args.policy {
        train.constraints.policy = match p.as_str() {
            "retarget" => InapplicablePolicy::RetargetModality,
            "resample" => InapplicablePolicy::ResampleKind,
            other => return Err(CliError::config(format!("unknown policy {other:?} (retarget, resample)"))),
        };
    }
    let (index, clean) = load_dataset(&args.input).map_err(|e| CliError::from(e).context(args.input.display().to_string()))?;
    let hash = hash_json(&(&train.constraints, &train.ranges, args.seed));
    let mut out: Vec<Sample> = Vec::with_capacity(clean.len());
    for (i, s) in clean.iter().enumerate() {
        let mut rng = rng_for(args.seed, &[PREVIEW, i as u64]);
        let spec = sample_spec(&mut rng, &train.constraints, s.modality1.height, s.modality1.width, &train.ranges);
        let record = serde_json::json!({ "sample": i, "seed": args.seed, "config_hash": hash, "spec": spec });
        write_file(&args.out.join(format!("{i:05}_spec.json")), to_json(&record))?;
        out.push(apply(s, &spec));
    }
    save_dataset(&args.out, &out, index.seed, &index.params).map_err(|e| CliError::from(e).context(args.out.display().to_string()))?;
    println!("{}: {} augmented samples", args.out.display(), out.len());
    Ok(())
}
