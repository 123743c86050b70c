use gif_fusion::gradcheck::{run_suite, Scope, DEFAULT_TOLERANCE};
use gif_fusion::tensor::{Fault, OpKind};

use crate::error::{write_file, CliError, CliResult};
use crate::GradcheckArgs;

pub fn run(args: &GradcheckArgs) -> CliResult<()> {
    let scope = Scope::parse(&args.scope).ok_or_else(|| CliError::config(format!("unknown scope {:?} (ops, gif, all)", args.scope)))?;
    if args.instances == 0 {
        return Err(CliError::config("instances must be positive"));
    }
    let faults: Vec<Fault> = match args.inject_fault.as_deref() {
        None => Vec::new(),
        Some("sigmoid-sign") => vec![Fault::FlipSign(OpKind::Sigmoid)],
        Some(other) => return Err(CliError::config(format!("unknown fault {other:?}"))),
    };
    let results = run_suite(scope, args.instances, args.seed, &faults)?;
    for r in &results {
        println!(
            "{} {:<18} instances {:>3} elements {:>6} max rel err {:.3e}",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.instances,
            r.elements,
            r.max_rel_error
        );
    }
    if let Some(path) = &args.json {
        write_file(path, crate::error::to_json(&results))?;
    }
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
    if failed.is_empty() {
        println!("all {} checks passed (tolerance {DEFAULT_TOLERANCE:e})", results.len());
        Ok(())
    } else {
        Err(CliError::numeric(format!("gradient check failed for {}", failed.join(", "))))
    }
}
