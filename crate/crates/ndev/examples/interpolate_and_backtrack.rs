//! Continuous-time bonuses: read the latent trajectory between frames
//! (frame-rate interpolation) and extrapolate it backward before time zero.
//! Both reuse the trained dynamics; neither needs retraining.

use ndev::error::{Error, Result};
use ndev::nn::seeded_rng;
use ndev::temporal::{sample_latent, Family, TemporalSpec};
use ndev::videogan::GanModel;

fn main() -> Result<()> {
    let spec = TemporalSpec::new(Family::Ode, 8, 5, 23);
    let model = GanModel::build(&spec, 9)?;
    let z_c = sample_latent(spec.latent_dim, &mut seeded_rng(1, 0, 0));

    // Oversampling reads intermediate solver nodes, so the plain sample's
    // frames reappear bit for bit at every integer time.
    let base = model.sample_video_values(&z_c, 0)?;
    let fine = model.sample_video_values_at_rate(&z_c, 0, 2)?;
    println!("base sample: {} frames; 2x interpolation: {} frames", base.frames(), fine.frames());
    for t in 0..base.frames() {
        assert_eq!(base.frame(t), fine.frame(2 * t), "integer frame {t} must match");
    }
    println!("every integer-time frame of the interpolated video matches the base sample");

    // Backward extrapolation runs the same vector field with time reversed:
    // pre-roll frames at times -3..-1, then the ordinary forward frames.
    let extended = model.backtrack_video_values(&z_c, 3)?;
    println!("3-frame backtrack: {} frames (times -3..{})", extended.frames(), base.frames() - 1);
    for t in 0..base.frames() {
        assert_eq!(base.frame(t), extended.frame(t + 3), "forward frame {t} must match");
    }
    println!("forward frames are unchanged; only the pre-roll is new");

    // Discrete families have no trajectory between or before their frames.
    let conv = GanModel::build(&TemporalSpec::new(Family::Conv1d, 8, 8, 23), 9)?;
    let z8 = sample_latent(8, &mut seeded_rng(1, 0, 0));
    match conv.backtrack_video_values(&z8, 2) {
        Err(Error::Unsupported(msg)) => println!("conv1d backtrack refused: {msg}"),
        other => panic!("expected Unsupported, got {other:?}"),
    }
    Ok(())
}
