use gif_fusion::lidar::{build_dhi_image, read_kitti_bin, CalibMatrix, DhiConfig, PixelRounding};
use serde_json::json;

use crate::config::hash_json;
use crate::error::{to_json, write_file, CliError, CliResult};
use crate::ProjectArgs;

pub fn run(args: &ProjectArgs) -> CliResult<()> {
    let d = DhiConfig::default();
    let rounding = match args.rounding.as_str() {
        "nearest" => PixelRounding::Nearest,
        "floor" => PixelRounding::Floor,
        other => return Err(CliError::config(format!("unknown rounding {other:?} (nearest, floor)"))),
    };
    let cfg = DhiConfig {
        max_x: args.max_x.unwrap_or(d.max_x),
        max_z: args.max_z.unwrap_or(d.max_z),
        max_r: args.max_r.unwrap_or(d.max_r),
        width: args.width.unwrap_or(d.width),
        height: args.height.unwrap_or(d.height),
        rounding,
    };
    cfg.validate()?;
    let calib = CalibMatrix::read(&args.calib).map_err(|e| CliError::from(e).context(args.calib.display().to_string()))?;
    let cloud = read_kitti_bin(&args.input).map_err(|e| CliError::from(e).context(args.input.display().to_string()))?;
    let img = build_dhi_image(&cloud, &calib, &cfg);
    write_file(&args.out, img.to_pnm().encode())?;
    let sidecar = json!({
        "config": cfg,
        "config_hash": hash_json(&(&cfg, calib.to_text())),
        "stats": img.stats,
        "occupied_pixels": img.occupied(),
    });
    write_file(&args.out.with_extension("json"), to_json(&sidecar))?;
    let s = img.stats;
    println!(
        "{}: {} points, {} projected, {} clipped, {} collided, {} pixels occupied",
        args.out.display(),
        s.total,
        s.projected,
        s.clipped,
        s.collided,
        img.occupied()
    );
    Ok(())
}
