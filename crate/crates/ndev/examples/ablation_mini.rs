//! A two-family ablation grid in miniature: identical data, seeds and
//! optimizer for each family, one comparison row per family at the end.

use ndev::ablation::{ablation_run, spec_for_token, write_report_csv, REPORT_HEADER};
use ndev::data::{DatasetKind, SyntheticSpec};
use ndev::temporal::{Family, TemporalSpec};
use ndev::videogan::{GanConfig, GanSeeds, Phi, TrainOptions};

fn main() -> ndev::error::Result<()> {
    let out_dir = std::env::temp_dir().join("ndev_ablation_mini");
    let _ = std::fs::remove_dir_all(&out_dir);
    std::fs::create_dir_all(&out_dir).unwrap();

    let dataset = SyntheticSpec {
        kind: DatasetKind::BouncingBall,
        num_classes: 2,
        seq_len: 8,
        height: 16,
        width: 16,
        samples_per_class: 64,
        seed: 3,
    };
    let gan = GanConfig {
        phi: Phi::Bce,
        batch_size: 2,
        total_steps: 6,
        metric_interval: 3,
        seeds: GanSeeds { params: 11, data: 12, noise: 13 },
    };
    // Every family inherits the same base spec; the token fills in family,
    // order and a compatible solver.
    let base = TemporalSpec::new(Family::Ode, 8, dataset.seq_len, 31);
    let specs = ["conv1d", "ode2"]
        .iter()
        .map(|t| spec_for_token(&base, t))
        .collect::<ndev::error::Result<Vec<_>>>()?;

    let opts = TrainOptions { eval_splits: 2, eval_videos_per_split: 3, ..Default::default() };
    let reports = ablation_run(&specs, &gan, &dataset, &out_dir, &opts)?;

    write_report_csv(&out_dir.join("ablation.csv"), &reports)?;
    println!("{REPORT_HEADER}");
    for row in &reports {
        println!("{}", row.to_csv());
    }
    println!("per-family runs and the report live under {}", out_dir.display());
    Ok(())
}
