//! Every temporal generator family side by side: parameter counts, frame
//! ranges, and the parameter-budget matcher that sizes f(x) to a target.

use ndev::ablation::{spec_for_token, FAMILY_TOKENS};
use ndev::error::Result;
use ndev::nn::seeded_rng;
use ndev::tape::Tape;
use ndev::temporal::{sample_latent, Family, FxShape, TemporalGenerator, TemporalSpec};
use ndev::videogan::family_label;

fn main() -> Result<()> {
    let d = 16;
    let t = 16;
    let base = TemporalSpec::new(Family::Ode, d, t, 3);
    let z_c = sample_latent(d, &mut seeded_rng(5, 0, 0));

    println!("{:<8} {:>8}  first/last frame range", "family", "params");
    for token in FAMILY_TOKENS {
        let spec = spec_for_token(&base, token)?;
        let gen = TemporalGenerator::build(spec.clone())?;

        let mut tape = Tape::new();
        let params = gen.register(&mut tape, false)?;
        let z_var = tape.constant(z_c.clone())?;
        let wiener = gen.sample_wiener(77)?;
        let frames = gen.unroll(&mut tape, &params, z_var, 1, wiener.as_ref())?;

        let span = |v: &ndev::tensor::Tensor| {
            let lo = v.data().iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = v.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            format!("[{lo:+.2}, {hi:+.2}]")
        };
        println!(
            "{:<8} {:>8}  z_0 {}  z_{} {}",
            family_label(&spec),
            gen.param_count(),
            span(tape.value(frames[0])),
            t - 1,
            span(tape.value(frames[t - 1])),
        );
    }

    // equal_params sizes the field's hidden width to hit a parameter budget.
    let conv_count = TemporalGenerator::build(spec_for_token(&base, "conv1d")?)?.param_count();
    let mut matched = spec_for_token(&base, "ode1")?;
    matched.fx_shape = FxShape::EqualParams;
    matched.param_budget = Some(conv_count);
    let gen = TemporalGenerator::build(matched)?;
    let rel = (gen.param_count() as f64 - conv_count as f64).abs() / conv_count as f64;
    println!(
        "\node1 equal_params vs conv1d budget {conv_count}: {} params ({:.2}% off)",
        gen.param_count(),
        rel * 100.0
    );
    Ok(())
}
