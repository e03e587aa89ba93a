//! A miniature adversarial run end to end: synthesize data, train the frozen
//! probe metric, then alternate discriminator/generator steps and log scores.

use ndev::ablation::probe_seed;
use ndev::data::{synth_dataset, DatasetKind, SyntheticSpec};
use ndev::error::Result;
use ndev::metrics::train_probe;
use ndev::temporal::{Family, TemporalSpec};
use ndev::videogan::{train_gan, GanConfig, GanModel, GanSeeds, Phi, TrainOptions};

fn main() -> Result<()> {
    let dataset = SyntheticSpec {
        kind: DatasetKind::MovingBar,
        num_classes: 2,
        seq_len: 4,
        height: 16,
        width: 16,
        samples_per_class: 50,
        seed: 8,
    };
    let gan = GanConfig {
        phi: Phi::Bce,
        batch_size: 4,
        total_steps: 30,
        metric_interval: 10,
        seeds: GanSeeds { params: 1, data: 2, noise: 3 },
    };
    let spec = TemporalSpec::new(Family::Ode, 8, dataset.seq_len, 17);
    let out_dir = std::env::temp_dir().join("ndev_train_smoke");
    let _ = std::fs::remove_dir_all(&out_dir);
    std::fs::create_dir_all(&out_dir).unwrap();

    let data = synth_dataset(&dataset)?;
    let probe = train_probe(&data, probe_seed(&gan))?;
    println!("probe heldout accuracy: {:.3}", probe.accuracy(&data)?);

    let mut model = GanModel::build(&spec, gan.seeds.params)?;
    let opts = TrainOptions { eval_splits: 4, eval_videos_per_split: 4, ..Default::default() };
    let outcome = train_gan(&mut model, &gan, &data, &probe, &out_dir, &opts)?;

    if let Some(initial) = &outcome.initial {
        println!("untrained: is {:.4}, fid {:.3}", initial.is_mean, initial.fid);
    }
    for row in &outcome.rows {
        println!(
            "step {:>3}: loss_d {:.4}  loss_g {:.4}  is {:.4}  fid {:.3}",
            row.step, row.loss_d, row.loss_g, row.is_mean, row.fid
        );
    }
    println!(
        "best step {} (is {:.4}); {:.4} s/step; checkpoints in {}",
        outcome.best_step,
        outcome.best_is,
        outcome.seconds_per_step,
        out_dir.display()
    );
    Ok(())
}
