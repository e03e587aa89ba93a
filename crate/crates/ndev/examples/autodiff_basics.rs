//! Tape-based reverse-mode differentiation on a few small functions, plus a
//! finite-difference audit of an MLP.

use ndev::error::Result;
use ndev::gradcheck::{grad_check, GRADCHECK_EPS, GRADCHECK_TOL};
use ndev::nn::{collect_grads, seeded_rng, Mlp, ParamStore};
use ndev::tape::{Activation, Tape};
use ndev::tensor::Tensor;

fn main() -> Result<()> {
    // d/dx of sum(tanh(x)^2) at x = [0.5, -1.0, 2.0]: 2 tanh(x) (1 - tanh(x)^2).
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::vector(&[0.5, -1.0, 2.0]), true)?;
    let t = tape.tanh(x)?;
    let sq = tape.mul(t, t)?;
    let loss = tape.sum(sq)?;
    let grads = tape.backward(loss)?;
    let got = grads.get(x).unwrap();
    println!("loss = {:.6}", tape.scalar_value(loss)?);
    for (i, &xi) in [0.5f64, -1.0, 2.0].iter().enumerate() {
        let th = xi.tanh();
        let want = 2.0 * th * (1.0 - th * th);
        println!(
            "d/dx[{i}] = {:+.9}  (closed form {want:+.9}, diff {:.1e})",
            got.data()[i],
            (got.data()[i] - want).abs()
        );
    }

    // The same machinery through a 2-layer MLP, audited entry by entry
    // against central finite differences.
    let mut store = ParamStore::new();
    // Tanh hidden layers keep the whole map smooth, so the finite-difference
    // comparison resolves cleanly at the strict tolerance.
    let mlp =
        Mlp::new(&mut store, &mut seeded_rng(9, 0, 0), "f", &[6, 10, 6], Activation::Tanh, None)?;
    let input = Tensor::vector(&[0.3, -0.7, 0.1, 0.9, -0.2, 0.4]);

    let mut tape = Tape::new();
    let params = store.register(&mut tape, true)?;
    let x = tape.constant(input.clone())?;
    let y = mlp.forward(&mut tape, &params, x)?;
    let sq = tape.mul(y, y)?;
    let loss = tape.sum(sq)?;
    let grads = tape.backward(loss)?;
    let analytic = collect_grads(&grads, &params)?;

    let report = grad_check(
        &store,
        &analytic,
        |s: &ParamStore| {
            let mut tape = Tape::new();
            let params = s.register(&mut tape, false)?;
            let x = tape.constant(input.clone())?;
            let y = mlp.forward(&mut tape, &params, x)?;
            let sq = tape.mul(y, y)?;
            let loss = tape.sum(sq)?;
            tape.scalar_value(loss)
        },
        GRADCHECK_EPS,
        GRADCHECK_TOL,
    )?;
    println!(
        "\nmlp gradcheck: {} entries, max rel err {:.3e} (worst {} entry {}) -> {}",
        report.entries_checked,
        report.max_rel_err,
        report.worst_block,
        report.worst_entry,
        if report.passed { "pass" } else { "FAIL" }
    );
    Ok(())
}
