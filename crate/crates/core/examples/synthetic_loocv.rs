//! Leave-one-out evaluation of all three arms on a generated cohort.
//!
//! `cargo run --release --example synthetic_loocv -- [seed] [noise_std]`

use patchevo::config::{PipelineConfig, RoiConfig};
use patchevo::pipeline::run_loocv;
use patchevo::synth::{generate_cohort, CohortSpec};
use patchevo::trajectory::Transfer;

fn main() -> patchevo::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let seed = args.first().and_then(|s| s.parse().ok()).unwrap_or(0);
    let mut spec = CohortSpec { seed, ..Default::default() };
    if let Some(noise) = args.get(1).and_then(|s| s.parse().ok()) {
        spec.noise_std = noise;
    }
    let cohort = generate_cohort(&spec)?;

    let mut roi = RoiConfig::new("ellipsoid", spec.roi_label);
    roi.patch_side = 5;
    roi.max_landmarks = 4;
    roi.sas.k = 3;
    roi.sas.transfer = Transfer::PlainAverage;
    roi.mkml.k = 3;
    let mut cfg = PipelineConfig::new("unused", vec![roi]);
    cfg.seed = seed;
    cfg.svr.max_epochs = 300;

    let (report, timings) = run_loocv(&cohort, &cfg)?;
    for r in &report.rois {
        for a in &r.arms {
            let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
            println!(
                "{:<9} accuracy {:.3}  mae {}  pearson {}",
                a.strategy.name(),
                a.accuracy,
                fmt(a.mae),
                fmt(a.pearson)
            );
        }
    }
    println!("{:.1} s", timings.total_seconds);
    Ok(())
}
