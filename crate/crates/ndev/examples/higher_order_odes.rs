//! Second- and third-order latent dynamics via state augmentation: the same
//! learned field drives [z, ż, z̈] with zero-initialized derivative blocks.

use ndev::error::Result;
use ndev::nn::seeded_rng;
use ndev::tape::Tape;
use ndev::temporal::{sample_latent, Family, TemporalGenerator, TemporalSpec};

fn main() -> Result<()> {
    let d = 3;
    let t = 8;
    let z_c = sample_latent(d, &mut seeded_rng(4, 0, 0));

    for order in 1..=3usize {
        let mut spec = TemporalSpec::new(Family::Ode, d, t, 11);
        spec.order = order;
        let gen = TemporalGenerator::build(spec)?;

        let mut tape = Tape::new();
        let params = gen.register(&mut tape, false)?;
        let z_var = tape.constant(z_c.clone())?;
        let frames = gen.unroll(&mut tape, &params, z_var, 1, None)?;

        println!("order {order} ({} params):", gen.param_count());
        for (i, &f) in frames.iter().enumerate() {
            let v = tape.value(f);
            let line: Vec<String> = v.data().iter().map(|x| format!("{x:+.3}")).collect();
            println!("  z_{i} = [{}]", line.join(", "));
        }
        // Higher orders start with zero velocity, so early frames move less:
        // frame 1 distance from z_0 shrinks as the order grows.
        let d01: f64 = tape
            .value(frames[1])
            .data()
            .iter()
            .zip(tape.value(frames[0]).data())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        println!("  |z_1 - z_0| = {d01:.4}\n");
    }
    Ok(())
}
