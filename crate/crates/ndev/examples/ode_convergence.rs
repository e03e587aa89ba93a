//! Empirical convergence order of the fixed-step solvers on ż = z over
//! [0, 1], where the exact answer is e.

use ndev::error::Result;
use ndev::solvers::{integrate_ode, Method, TimeGrid};
use ndev::tape::Tape;
use ndev::tensor::Tensor;

fn endpoint_error(method: Method, steps: usize) -> Result<f64> {
    let mut tape = Tape::new();
    let z0 = tape.constant(Tensor::vector(&[1.0]))?;
    let grid = TimeGrid::with_steps(0.0, 1.0, steps)?;
    let states = integrate_ode(&mut tape, z0, &grid, method, &mut |_tape: &mut Tape, z, _t| {
        Ok(z)
    })?;
    let last = *states.last().unwrap();
    Ok((tape.value(last).data()[0] - std::f64::consts::E).abs())
}

fn main() -> Result<()> {
    for method in [Method::Euler, Method::Rk4] {
        println!("{}:", method.as_str());
        let mut prev: Option<f64> = None;
        for steps in [4usize, 8, 16, 32, 64] {
            let err = endpoint_error(method, steps)?;
            match prev {
                Some(p) => println!(
                    "  h = 1/{steps:<3} |error| = {err:.3e}  ratio vs 2h = {:.2}",
                    p / err
                ),
                None => println!("  h = 1/{steps:<3} |error| = {err:.3e}"),
            }
            prev = Some(err);
        }
    }
    // Halving h divides the error by ~2 for euler (order 1) and ~16 for rk4
    // (order 4); rk4 at h = 1/4 is already within 1e-4 of e.
    println!("\nrk4 at h = 1/4: error {:.3e}", endpoint_error(Method::Rk4, 4)?);
    Ok(())
}
