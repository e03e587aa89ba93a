//! Euler–Maruyama paths: seed-reproducible trajectories, the σ=0 degeneration
//! to the deterministic solver, and the variance of pure Brownian motion.

use ndev::error::Result;
use ndev::solvers::{integrate_ode, integrate_sde, Method, TimeGrid, WienerPath};
use ndev::tape::Tape;
use ndev::tensor::Tensor;

/// z_1 of dz = μ(z) dt + σ dW from z_0 = 0 with μ = 0, σ = 1: z_1 ~ N(0, 1).
fn brownian_endpoint(seed: u64, grid: &TimeGrid) -> Result<f64> {
    let mut tape = Tape::new();
    let z0 = tape.constant(Tensor::vector(&[0.0]))?;
    let path = WienerPath::sample(1, grid.n_steps(), grid.h(), seed)?;
    let states = integrate_sde(
        &mut tape,
        z0,
        grid,
        &path,
        &mut |tape: &mut Tape, z, _t| tape.scale(z, 0.0),
        &mut |tape: &mut Tape, z, _t| {
            let zero = tape.scale(z, 0.0)?;
            tape.add_scalar(zero, 1.0)
        },
    )?;
    Ok(tape.value(*states.last().unwrap()).data()[0])
}

fn main() -> Result<()> {
    let grid = TimeGrid::per_unit(0.0, 1.0, 8)?;

    // Identical seeds give identical paths; different seeds do not.
    let a = brownian_endpoint(42, &grid)?;
    let b = brownian_endpoint(42, &grid)?;
    let c = brownian_endpoint(43, &grid)?;
    println!("seed 42: z_1 = {a:+.6}  (rerun {b:+.6}, bitwise equal: {})", a == b);
    println!("seed 43: z_1 = {c:+.6}");

    // Sample variance of z_1 over many paths approaches t = 1.
    let n = 10_000;
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    for seed in 0..n {
        let z = brownian_endpoint(seed as u64, &grid)?;
        sum += z;
        sumsq += z * z;
    }
    let mean = sum / n as f64;
    let var = sumsq / n as f64 - mean * mean;
    println!("{n} paths: mean {mean:+.4}, variance {var:.4} (expected ~1)");

    // With σ = 0 the stochastic solver IS the euler solver, bit for bit.
    let mut tape = Tape::new();
    let z0 = tape.constant(Tensor::vector(&[1.0, -0.5]))?;
    let path = WienerPath::sample(2, grid.n_steps(), grid.h(), 7)?;
    let drift = |tape: &mut Tape, z: ndev::tape::Var, _t: f64| tape.tanh(z);
    let sde = integrate_sde(
        &mut tape,
        z0,
        &grid,
        &path,
        &mut { drift },
        &mut |tape: &mut Tape, z, _t| tape.scale(z, 0.0),
    )?;
    let ode = integrate_ode(&mut tape, z0, &grid, Method::Euler, &mut { drift })?;
    let same = sde
        .iter()
        .zip(&ode)
        .all(|(&s, &o)| tape.value(s).data() == tape.value(o).data());
    println!("sigma = 0 trajectory bit-matches euler: {same}");
    Ok(())
}
