//! Checkpoint round trip and export: save a model, reload it, sample videos
//! with the CLI's seed streams, and write them as .ndev and .pgm files.

use ndev::error::Result;
use ndev::io::{read_ndev, write_ndev, write_pgm};
use ndev::metrics::SHARED_ADAM;
use ndev::nn::{derive_seed, seeded_rng};
use ndev::optim::Adam;
use ndev::temporal::{sample_latent, Family, TemporalSpec};
use ndev::videogan::{
    load_model, save_checkpoint, CheckpointMeta, GanConfig, GanModel, GanSeeds, Phi,
};

fn main() -> Result<()> {
    let out = std::env::temp_dir().join("ndev_sample_and_export");
    let _ = std::fs::remove_dir_all(&out);
    std::fs::create_dir_all(&out).unwrap();

    // An untrained model is enough to exercise the full persistence loop.
    let spec = TemporalSpec::new(Family::Sde, 8, 6, 41);
    let model = GanModel::build(&spec, 5)?;
    let meta = CheckpointMeta {
        temporal: spec,
        gan: GanConfig {
            phi: Phi::Bce,
            batch_size: 4,
            total_steps: 10,
            metric_interval: 5,
            seeds: GanSeeds { params: 5, data: 6, noise: 7 },
        },
        eval_splits: 2,
        eval_videos_per_split: 2,
        step: 0,
        best_step: 0,
        best_is: f64::NEG_INFINITY,
    };
    let ckpt = out.join("model.ndck");
    save_checkpoint(
        &ckpt,
        &model,
        (
            &Adam::new(SHARED_ADAM, model.temporal().store())?,
            &Adam::new(SHARED_ADAM, model.image_store())?,
            &Adam::new(SHARED_ADAM, model.disc_store())?,
        ),
        &meta,
    )?;
    let (loaded, loaded_meta) = load_model(&ckpt)?;
    println!(
        "checkpoint {} reloaded: step {}, {} temporal params",
        ckpt.display(),
        loaded_meta.step,
        loaded.temporal().param_count()
    );

    // Video j draws its latent from stream (seed, 0, j) and its noise path
    // from (seed, 1, j) — the same derivation the CLI sample command uses.
    let seed = 33;
    let d = loaded.temporal().latent_dim();
    for j in 0..2u64 {
        let z_c = sample_latent(d, &mut seeded_rng(seed, 0, j));
        let video = loaded.sample_video_values(&z_c, derive_seed(seed, 1, j))?;

        // Pixels are f32-quantized on the first write; after that the
        // write -> read -> write loop is byte-stable.
        let ndev_path = out.join(format!("video_{j:03}.ndev"));
        write_ndev(&ndev_path, &video)?;
        let back = read_ndev(&ndev_path)?;
        let rewrite = out.join(format!("video_{j:03}.rewrite.ndev"));
        write_ndev(&rewrite, &back)?;
        let stable = std::fs::read(&ndev_path).unwrap() == std::fs::read(&rewrite).unwrap();
        println!(
            "video {j}: {} frames of {}x{}, round trip byte-stable: {stable}",
            video.frames(),
            video.height(),
            video.width()
        );

        let frame_dir = out.join(format!("video_{j:03}"));
        std::fs::create_dir_all(&frame_dir).unwrap();
        for t in 0..video.frames() {
            let pgm = frame_dir.join(format!("frame_{t:03}.pgm"));
            write_pgm(&pgm, video.frame(t), video.height(), video.width())?;
        }
        println!("video {j}: P5 frames under {}", frame_dir.display());
    }
    Ok(())
}
