//! Fixed-step ODE and SDE integration recorded onto an autodiff tape.
//!
//! Solvers unroll their step loop as tape operations, so a backward pass
//! through the final state differentiates the whole trajectory
//! (discretize-then-optimize). Supported schemes: explicit Euler and
//! classical RK4 for ODEs, Euler–Maruyama with diagonal diffusion for SDEs.
//!
//! Stochastic integration consumes one presampled Wiener increment per step
//! from a [`WienerPath`]; paths are fully determined by `(dim, n_steps, h,
//! seed)`, which makes stochastic trajectories reproducible and resumable.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// A state whose magnitude passes this bound is reported as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// Integration scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Euler,
    Rk4,
    EulerMaruyama,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Euler => "euler",
            Method::Rk4 => "rk4",
            Method::EulerMaruyama => "euler_maruyama",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(Method::Euler),
            "rk4" => Ok(Method::Rk4),
            "euler_maruyama" => Ok(Method::EulerMaruyama),
            other => Err(Error::config(format!(
                "unknown solver method {other:?} (expected euler, rk4, or euler_maruyama)"
            ))),
        }
    }

    /// Stable numeric code used inside checkpoint metadata.
    pub fn code(&self) -> u64 {
        match self {
            Method::Euler => 0,
            Method::Rk4 => 1,
            Method::EulerMaruyama => 2,
        }
    }

    pub fn from_code(code: u64) -> Result<Self> {
        match code {
            0 => Ok(Method::Euler),
            1 => Ok(Method::Rk4),
            2 => Ok(Method::EulerMaruyama),
            other => Err(Error::contract(format!("unknown solver method code {other}"))),
        }
    }
}

/// Scheme plus temporal resolution, as configured per generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SolverSpec {
    pub method: Method,
    pub steps_per_unit: usize,
}

// ── Time grid ───────────────────────────────────────────────────────────────

/// Uniform time grid with `n_steps + 1` nodes from `t_start` to `t_end`.
///
/// The span may be negative (integration backward in time); `h` carries the
/// sign.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    t_start: f64,
    t_end: f64,
    n_steps: usize,
}

impl TimeGrid {
    /// Grid with a fixed number of steps per unit of time. The total span
    /// times `steps_per_unit` must be an integer.
    pub fn per_unit(t_start: f64, t_end: f64, steps_per_unit: usize) -> Result<Self> {
        if steps_per_unit == 0 {
            return Err(Error::config("steps_per_unit must be at least 1"));
        }
        let span = t_end - t_start;
        if !(span.is_finite() && span != 0.0) {
            return Err(Error::config(format!(
                "time grid span must be finite and nonzero, got [{t_start}, {t_end}]"
            )));
        }
        let raw = span.abs() * steps_per_unit as f64;
        let n = raw.round();
        if (raw - n).abs() > 1e-9 || n < 1.0 {
            return Err(Error::config(format!(
                "span {span} times steps_per_unit {steps_per_unit} must be a positive integer, got {raw}"
            )));
        }
        Ok(TimeGrid { t_start, t_end, n_steps: n as usize })
    }

    /// Grid with an explicit step count over an arbitrary real span.
    pub fn with_steps(t_start: f64, t_end: f64, n_steps: usize) -> Result<Self> {
        if n_steps == 0 {
            return Err(Error::config("a time grid needs at least one step"));
        }
        let span = t_end - t_start;
        if !(span.is_finite() && span != 0.0) {
            return Err(Error::config(format!(
                "time grid span must be finite and nonzero, got [{t_start}, {t_end}]"
            )));
        }
        Ok(TimeGrid { t_start, t_end, n_steps })
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    /// Signed step size.
    pub fn h(&self) -> f64 {
        (self.t_end - self.t_start) / self.n_steps as f64
    }

    /// Time at node `k` (0 ..= n_steps), computed positionally so the final
    /// node is exactly `t_end`.
    pub fn node(&self, k: usize) -> f64 {
        debug_assert!(k <= self.n_steps);
        if k == self.n_steps {
            return self.t_end;
        }
        self.t_start + (self.t_end - self.t_start) * (k as f64 / self.n_steps as f64)
    }
}

// ── Wiener paths ────────────────────────────────────────────────────────────

/// Presampled Brownian increments: one `dim`-vector of `N(0, h)` draws per
/// step, generated by a seeded ChaCha8 stream through the ziggurat normal
/// sampler. Equal `(dim, n_steps, h, seed)` always reproduce the same path.
#[derive(Debug, Clone)]
pub struct WienerPath {
    dim: usize,
    h: f64,
    seed: u64,
    increments: Vec<f64>,
}

impl WienerPath {
    pub fn sample(dim: usize, n_steps: usize, h: f64, seed: u64) -> Result<Self> {
        if dim == 0 || n_steps == 0 {
            return Err(Error::config("a wiener path needs dim >= 1 and at least one step"));
        }
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::config(format!(
                "wiener increments need a positive step size, got {h}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = h.sqrt();
        let increments = (0..n_steps * dim)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * scale
            })
            .collect();
        Ok(WienerPath { dim, h, seed, increments })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_steps(&self) -> usize {
        self.increments.len() / self.dim
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Increment consumed by step `k`.
    pub fn increment(&self, k: usize) -> &[f64] {
        &self.increments[k * self.dim..(k + 1) * self.dim]
    }
}

// ── Integrators ─────────────────────────────────────────────────────────────

fn check_drift_shape(tape: &Tape, state: Var, dz: Var, what: &'static str) -> Result<()> {
    if tape.shape(state) != tape.shape(dz) {
        return Err(Error::Shape {
            op: what,
            lhs: tape.shape(state).to_vec(),
            rhs: tape.shape(dz).to_vec(),
        });
    }
    Ok(())
}

/// Converts a mid-step numeric failure into a divergence report carrying the
/// step index; other errors pass through.
fn map_step_error(e: Error, step: usize) -> Error {
    match e {
        Error::Numeric(_) => Error::Divergence {
            step,
            magnitude: f64::INFINITY,
        },
        other => other,
    }
}

fn check_divergence(tape: &Tape, state: Var, step: usize) -> Result<()> {
    let magnitude = tape.value(state).max_abs();
    if magnitude > DIVERGENCE_LIMIT {
        return Err(Error::Divergence { step, magnitude });
    }
    Ok(())
}

/// Unrolls a deterministic initial-value problem on the tape and returns the
/// state at every grid node (`n_steps + 1` entries, starting with `z0`).
///
/// `f(tape, z, t)` must return a tensor with the state's shape. A state whose
/// max-magnitude passes [`DIVERGENCE_LIMIT`], or a non-finite intermediate,
/// aborts with [`Error::Divergence`] naming the offending step.
pub fn integrate_ode<F>(
    tape: &mut Tape,
    z0: Var,
    grid: &TimeGrid,
    method: Method,
    f: &mut F,
) -> Result<Vec<Var>>
where
    F: FnMut(&mut Tape, Var, f64) -> Result<Var>,
{
    if method == Method::EulerMaruyama {
        return Err(Error::config(
            "euler_maruyama is stochastic; use integrate_sde with a wiener path",
        ));
    }
    let h = grid.h();
    let mut states = Vec::with_capacity(grid.n_steps() + 1);
    states.push(z0);
    let mut z = z0;
    for k in 0..grid.n_steps() {
        let t = grid.node(k);
        z = (|| -> Result<Var> {
            match method {
                Method::Euler => {
                    let dz = f(tape, z, t)?;
                    check_drift_shape(tape, z, dz, "ode drift")?;
                    let inc = tape.scale(dz, h)?;
                    tape.add(z, inc)
                }
                Method::Rk4 => {
                    let k1 = f(tape, z, t)?;
                    check_drift_shape(tape, z, k1, "ode drift")?;
                    let half = tape.scale(k1, h / 2.0)?;
                    let z2 = tape.add(z, half)?;
                    let k2 = f(tape, z2, t + h / 2.0)?;
                    check_drift_shape(tape, z, k2, "ode drift")?;
                    let half = tape.scale(k2, h / 2.0)?;
                    let z3 = tape.add(z, half)?;
                    let k3 = f(tape, z3, t + h / 2.0)?;
                    check_drift_shape(tape, z, k3, "ode drift")?;
                    let full = tape.scale(k3, h)?;
                    let z4 = tape.add(z, full)?;
                    let k4 = f(tape, z4, t + h)?;
                    check_drift_shape(tape, z, k4, "ode drift")?;
                    let k2x2 = tape.scale(k2, 2.0)?;
                    let k3x2 = tape.scale(k3, 2.0)?;
                    let sum = tape.add(k1, k2x2)?;
                    let sum = tape.add(sum, k3x2)?;
                    let sum = tape.add(sum, k4)?;
                    let inc = tape.scale(sum, h / 6.0)?;
                    tape.add(z, inc)
                }
                Method::EulerMaruyama => unreachable!("rejected above"),
            }
        })()
        .map_err(|e| map_step_error(e, k))?;
        check_divergence(tape, z, k)?;
        states.push(z);
    }
    Ok(states)
}

/// Euler–Maruyama for `dz = f(z,t) dt + sigma(z,t) ∘ dW` with diagonal
/// diffusion, consuming `path` increments positionally (one per step).
///
/// The grid must run forward in time and match the path's step size; when
/// `sigma` is identically zero the trajectory is the explicit-Euler one.
pub fn integrate_sde<F, G>(
    tape: &mut Tape,
    z0: Var,
    grid: &TimeGrid,
    path: &WienerPath,
    drift: &mut F,
    diffusion: &mut G,
) -> Result<Vec<Var>>
where
    F: FnMut(&mut Tape, Var, f64) -> Result<Var>,
    G: FnMut(&mut Tape, Var, f64) -> Result<Var>,
{
    let h = grid.h();
    if h <= 0.0 {
        return Err(Error::config(
            "stochastic integration runs forward in time (t_end must exceed t_start)",
        ));
    }
    let dim = tape.value(z0).numel();
    if path.dim() != dim {
        return Err(Error::contract(format!(
            "wiener path dimension {} does not match state dimension {dim}",
            path.dim()
        )));
    }
    if path.n_steps() < grid.n_steps() {
        return Err(Error::contract(format!(
            "wiener path has {} steps, grid needs {}",
            path.n_steps(),
            grid.n_steps()
        )));
    }
    if (path.h() - h).abs() > 1e-12 * h.max(1.0) {
        return Err(Error::contract(format!(
            "wiener path step size {} does not match grid step size {h}",
            path.h()
        )));
    }
    let mut states = Vec::with_capacity(grid.n_steps() + 1);
    states.push(z0);
    let mut z = z0;
    for k in 0..grid.n_steps() {
        let t = grid.node(k);
        z = (|| -> Result<Var> {
            let dz = drift(tape, z, t)?;
            check_drift_shape(tape, z, dz, "sde drift")?;
            let sigma = diffusion(tape, z, t)?;
            check_drift_shape(tape, z, sigma, "sde diffusion")?;
            let det = tape.scale(dz, h)?;
            let z_det = tape.add(z, det)?;
            let dw = tape.constant(Tensor::new(
                tape.shape(z).to_vec(),
                path.increment(k).to_vec(),
            )?)?;
            let noise = tape.mul(sigma, dw)?;
            tape.add(z_det, noise)
        })()
        .map_err(|e| map_step_error(e, k))?;
        check_divergence(tape, z, k)?;
        states.push(z);
    }
    Ok(states)
}

// ── Higher-order state augmentation ─────────────────────────────────────────

/// Initial augmented state `[z0, 0, ..., 0]` for an order-`order` problem:
/// derivative blocks start at rest.
pub fn augmented_initial_state(z0: &Tensor, order: usize) -> Result<Tensor> {
    if order == 0 {
        return Err(Error::config("derivative order must be at least 1"));
    }
    if z0.shape().len() != 1 {
        return Err(Error::contract(format!(
            "augmentation expects a rank-1 state, got {:?}",
            z0.shape()
        )));
    }
    let d = z0.numel();
    let mut data = vec![0.0; order * d];
    data[..d].copy_from_slice(z0.data());
    Tensor::new(vec![order * d], data)
}

/// Rewrites an order-`order` problem in `d` dimensions as a first-order
/// system on the stacked state `[z, z', ..., z^(order-1)]`.
///
/// The returned field shifts each derivative block down one slot and fills
/// the top block from `top(tape, full_state, t)`, which sees the whole
/// augmented state and must return a `[d]` tensor.
pub fn augment_to_first_order<F>(
    order: usize,
    d: usize,
    mut top: F,
) -> impl FnMut(&mut Tape, Var, f64) -> Result<Var>
where
    F: FnMut(&mut Tape, Var, f64) -> Result<Var>,
{
    move |tape: &mut Tape, z: Var, t: f64| -> Result<Var> {
        let shape = tape.shape(z).to_vec();
        if shape != [order * d] {
            return Err(Error::Shape {
                op: "augmented state",
                lhs: vec![order * d],
                rhs: shape,
            });
        }
        let dz_top = top(tape, z, t)?;
        if tape.shape(dz_top) != [d] {
            return Err(Error::Shape {
                op: "augmented top derivative",
                lhs: vec![d],
                rhs: tape.shape(dz_top).to_vec(),
            });
        }
        if order == 1 {
            return Ok(dz_top);
        }
        let shifted = tape.slice_last(z, d, (order - 1) * d)?;
        tape.concat_features(shifted, dz_top)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Terminal scalar value of `z' = z, z(0) = 1` on `[0, 1]`.
    fn exp_terminal(method: Method, steps_per_unit: usize) -> f64 {
        let mut tape = Tape::new();
        let z0 = tape.leaf(Tensor::scalar(1.0), false).unwrap();
        let grid = TimeGrid::per_unit(0.0, 1.0, steps_per_unit).unwrap();
        let states = integrate_ode(&mut tape, z0, &grid, method, &mut |_t: &mut Tape,
                                                                       z,
                                                                       _| {
            Ok(z)
        })
        .unwrap();
        tape.scalar_value(*states.last().unwrap()).unwrap()
    }

    #[test]
    fn euler_on_the_exponential_is_exact_compounding() {
        // (1 + 1/4)^4 in dyadic arithmetic: bit-exact.
        assert_eq!(exp_terminal(Method::Euler, 4), 2.44140625);
    }

    #[test]
    fn euler_error_halves_when_steps_double() {
        let e = std::f64::consts::E;
        let err8 = (exp_terminal(Method::Euler, 8) - e).abs();
        let err16 = (exp_terminal(Method::Euler, 16) - e).abs();
        let ratio = err8 / err16;
        assert!((1.8..=2.2).contains(&ratio), "ratio {ratio}");
        assert!((ratio - 1.8978343826623894).abs() < 1e-9, "ratio {ratio}");
    }

    #[test]
    fn rk4_on_the_exponential_is_fourth_order() {
        let e = std::f64::consts::E;
        let z4 = exp_terminal(Method::Rk4, 4);
        assert!((z4 - 2.7182099392013246).abs() < 1e-12, "{z4}");
        assert!((z4 - e).abs() < 1e-4);
        let err4 = (z4 - e).abs();
        let err8 = (exp_terminal(Method::Rk4, 8) - e).abs();
        let ratio = err4 / err8;
        assert!((14.0..=18.0).contains(&ratio), "ratio {ratio}");
        assert!((ratio - 14.423885921638554).abs() < 1e-9, "ratio {ratio}");
    }

    #[test]
    fn time_dependent_drift_sees_the_right_nodes() {
        // z' = t on [0, 2] with h = 1/4. RK4 integrates the quadratic exactly;
        // Euler leaves the left-Riemann sum.
        let run = |method: Method| {
            let mut tape = Tape::new();
            let z0 = tape.leaf(Tensor::scalar(0.0), false).unwrap();
            let grid = TimeGrid::per_unit(0.0, 2.0, 4).unwrap();
            let states = integrate_ode(&mut tape, z0, &grid, method, &mut |tape: &mut Tape,
                                                                           _z,
                                                                           t| {
                tape.constant(Tensor::scalar(t))
            })
            .unwrap();
            tape.scalar_value(*states.last().unwrap()).unwrap()
        };
        assert!((run(Method::Rk4) - 2.0).abs() < 1e-13);
        assert_eq!(run(Method::Euler), 1.75);
    }

    #[test]
    fn order_two_harmonic_oscillator_returns_to_minus_one_at_pi() {
        // z'' = -z with z(0) = 1, z'(0) = 0, so z(pi) = -1. The top block
        // reads the position slice of the augmented state.
        let mut tape = Tape::new();
        let z0 = augmented_initial_state(&Tensor::scalar(1.0), 2).unwrap();
        assert_eq!(z0.data(), &[1.0, 0.0]);
        let z0 = tape.leaf(z0, false).unwrap();
        let grid = TimeGrid::with_steps(0.0, std::f64::consts::PI, 64).unwrap();
        let mut field = augment_to_first_order(2, 1, |tape: &mut Tape, z: Var, _t| {
            let pos = tape.slice_last(z, 0, 1)?;
            tape.neg(pos)
        });
        let states = integrate_ode(&mut tape, z0, &grid, Method::Rk4, &mut field).unwrap();
        let last = tape.value(*states.last().unwrap());
        let pos = last.data()[0];
        let err = (pos + 1.0).abs();
        assert!(err < 1e-3, "position {pos}");
        assert!((err - 6.215940318021751e-9).abs() < 1e-10, "err {err}");
    }

    #[test]
    fn order_three_with_zero_jerk_is_the_exact_taylor_polynomial() {
        // z''' = 0 from [z, z', z''] = [1, 0.5, 0.25]: z(t) = 1 + t/2 + t^2/8,
        // a quadratic RK4 reproduces to rounding on a dyadic grid.
        let mut tape = Tape::new();
        let z0 = tape
            .leaf(Tensor::vector(&[1.0, 0.5, 0.25]), false)
            .unwrap();
        let grid = TimeGrid::per_unit(0.0, 2.0, 4).unwrap();
        let mut field = augment_to_first_order(3, 1, |tape: &mut Tape, _z, _t| {
            tape.constant(Tensor::scalar(0.0))
        });
        let states = integrate_ode(&mut tape, z0, &grid, Method::Rk4, &mut field).unwrap();
        let pos = tape.value(*states.last().unwrap()).data()[0];
        assert!((pos - 2.5).abs() < 1e-13, "{pos}");
    }

    #[test]
    fn backward_integration_recovers_the_past_state() {
        // z' = 0.7 z integrated from t=0 to t=-1: z(-1) = e^{-0.7}.
        let mut tape = Tape::new();
        let z0 = tape.leaf(Tensor::scalar(1.0), false).unwrap();
        let grid = TimeGrid::per_unit(0.0, -1.0, 4).unwrap();
        assert!(grid.h() < 0.0);
        let states = integrate_ode(&mut tape, z0, &grid, Method::Rk4, &mut |tape: &mut Tape,
                                                                            z,
                                                                            _t| {
            tape.scale(z, 0.7)
        })
        .unwrap();
        let z = tape.scalar_value(*states.last().unwrap()).unwrap();
        assert!((z - 0.4965884481289939).abs() < 1e-12, "{z}");
        let exact = (-0.7f64).exp();
        assert!((z - exact).abs() / exact < 1e-5);
    }

    #[test]
    fn divergence_is_reported_with_the_step_index() {
        let mut tape = Tape::new();
        let z0 = tape.leaf(Tensor::scalar(1.0), false).unwrap();
        let grid = TimeGrid::per_unit(0.0, 20.0, 2).unwrap();
        let res = integrate_ode(&mut tape, z0, &grid, Method::Euler, &mut |tape: &mut Tape,
                                                                           z,
                                                                           _t| {
            tape.scale(z, 3.0)
        });
        match res {
            Err(Error::Divergence { step, magnitude }) => {
                assert!(magnitude > DIVERGENCE_LIMIT);
                assert!(step < grid.n_steps());
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn grid_constructors_validate_their_inputs() {
        assert!(TimeGrid::per_unit(0.0, 1.5, 4).is_ok()); // 6 steps
        assert!(matches!(
            TimeGrid::per_unit(0.0, 1.3, 4),
            Err(Error::Config(_))
        ));
        assert!(matches!(TimeGrid::per_unit(0.0, 0.0, 4), Err(Error::Config(_))));
        assert!(matches!(TimeGrid::per_unit(0.0, 1.0, 0), Err(Error::Config(_))));
        assert!(matches!(TimeGrid::with_steps(0.0, 1.0, 0), Err(Error::Config(_))));
        let back = TimeGrid::per_unit(0.0, -2.0, 4).unwrap();
        assert_eq!(back.n_steps(), 8);
        assert!((back.h() + 0.25).abs() < 1e-15);
        let grid = TimeGrid::per_unit(0.0, 15.0, 16).unwrap();
        assert_eq!(grid.n_steps(), 240);
        assert_eq!(grid.node(grid.n_steps()), 15.0);
    }

    #[test]
    fn wiener_paths_are_reproducible_and_have_the_right_scale() {
        let a = WienerPath::sample(2, 2000, 0.25, 42).unwrap();
        let b = WienerPath::sample(2, 2000, 0.25, 42).unwrap();
        assert_eq!(a.increment(1999), b.increment(1999));
        let c = WienerPath::sample(2, 2000, 0.25, 43).unwrap();
        assert!(a.increment(0) != c.increment(0));

        let n = a.n_steps() * a.dim();
        let all: Vec<f64> = (0..a.n_steps()).flat_map(|k| a.increment(k).to_vec()).collect();
        let mean = all.iter().sum::<f64>() / n as f64;
        let var = all.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.03, "mean {mean}");
        assert!((var - 0.25).abs() < 0.025, "var {var}");
    }

    #[test]
    fn zero_diffusion_reproduces_the_euler_trajectory_bitwise() {
        let drift_w = Tensor::new(
            vec![3, 3],
            vec![-0.4, 0.2, 0.0, 0.1, -0.3, 0.2, 0.0, 0.1, -0.5],
        )
        .unwrap();
        let z_init = Tensor::vector(&[0.8, -0.3, 0.5]);
        let grid = TimeGrid::per_unit(0.0, 2.0, 8).unwrap();

        let euler: Vec<f64> = {
            let mut tape = Tape::new();
            let w = tape.leaf(drift_w.clone(), false).unwrap();
            let z0 = tape.leaf(z_init.clone(), false).unwrap();
            let mut f = |tape: &mut Tape, z: Var, _t: f64| {
                let zc = tape.reshape(z, vec![3, 1])?;
                let wz = tape.matmul(w, zc)?;
                let wz = tape.reshape(wz, vec![3])?;
                tape.tanh(wz)
            };
            let states = integrate_ode(&mut tape, z0, &grid, Method::Euler, &mut f).unwrap();
            tape.value(*states.last().unwrap()).data().to_vec()
        };

        let em: Vec<f64> = {
            let mut tape = Tape::new();
            let w = tape.leaf(drift_w, false).unwrap();
            let z0 = tape.leaf(z_init, false).unwrap();
            let path = WienerPath::sample(3, grid.n_steps(), grid.h(), 7).unwrap();
            let mut f = |tape: &mut Tape, z: Var, _t: f64| {
                let zc = tape.reshape(z, vec![3, 1])?;
                let wz = tape.matmul(w, zc)?;
                let wz = tape.reshape(wz, vec![3])?;
                tape.tanh(wz)
            };
            let mut sigma =
                |tape: &mut Tape, _z: Var, _t: f64| tape.constant(Tensor::zeros(vec![3]));
            let states =
                integrate_sde(&mut tape, z0, &grid, &path, &mut f, &mut sigma).unwrap();
            tape.value(*states.last().unwrap()).data().to_vec()
        };

        for (a, b) in euler.iter().zip(&em) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn euler_maruyama_matches_ornstein_uhlenbeck_moments() {
        // dz = -z dt + 0.5 dW from z(0) = 0. The discrete-time variance obeys
        // v_{k+1} = (1-h)^2 v_k + 0.25 h exactly, which is what the sampled
        // ensemble must match (up to Monte Carlo error with a pinned seed).
        let grid = TimeGrid::per_unit(0.0, 1.0, 8).unwrap();
        let h = grid.h();
        let mut expected_var = 0.0;
        for _ in 0..grid.n_steps() {
            expected_var = (1.0 - h) * (1.0 - h) * expected_var + 0.25 * h;
        }
        let n_paths = 400;
        let mut finals = Vec::with_capacity(n_paths);
        for i in 0..n_paths {
            let mut tape = Tape::new();
            let z0 = tape.leaf(Tensor::scalar(0.0), false).unwrap();
            let path = WienerPath::sample(1, grid.n_steps(), h, 1000 + i as u64).unwrap();
            let mut drift = |tape: &mut Tape, z: Var, _t: f64| tape.scale(z, -1.0);
            let mut sigma =
                |tape: &mut Tape, _z: Var, _t: f64| tape.constant(Tensor::scalar(0.5));
            let states =
                integrate_sde(&mut tape, z0, &grid, &path, &mut drift, &mut sigma).unwrap();
            finals.push(tape.scalar_value(*states.last().unwrap()).unwrap());
        }
        let mean = finals.iter().sum::<f64>() / n_paths as f64;
        let var = finals.iter().map(|z| (z - mean) * (z - mean)).sum::<f64>() / n_paths as f64;
        assert!(mean.abs() < 0.05, "mean {mean}");
        assert!((var - expected_var).abs() < 0.02, "var {var} vs {expected_var}");
    }

    #[test]
    fn sde_contracts_are_enforced() {
        let grid = TimeGrid::per_unit(0.0, 1.0, 4).unwrap();
        let mut tape = Tape::new();
        let z0 = tape.leaf(Tensor::vector(&[0.0, 0.0]), false).unwrap();
        let mut drift = |tape: &mut Tape, z: Var, _t: f64| tape.scale(z, -1.0);
        let mut sigma = |tape: &mut Tape, z: Var, _t: f64| tape.scale(z, 0.0);

        let wrong_dim = WienerPath::sample(3, 4, grid.h(), 0).unwrap();
        assert!(matches!(
            integrate_sde(&mut tape, z0, &grid, &wrong_dim, &mut drift, &mut sigma),
            Err(Error::Contract(_))
        ));
        let wrong_h = WienerPath::sample(2, 4, 0.5, 0).unwrap();
        assert!(matches!(
            integrate_sde(&mut tape, z0, &grid, &wrong_h, &mut drift, &mut sigma),
            Err(Error::Contract(_))
        ));
        let short = WienerPath::sample(2, 3, grid.h(), 0).unwrap();
        assert!(matches!(
            integrate_sde(&mut tape, z0, &grid, &short, &mut drift, &mut sigma),
            Err(Error::Contract(_))
        ));
        let backward = TimeGrid::per_unit(0.0, -1.0, 4).unwrap();
        let ok_path = WienerPath::sample(2, 4, 0.25, 0).unwrap();
        assert!(matches!(
            integrate_sde(&mut tape, z0, &backward, &ok_path, &mut drift, &mut sigma),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn solver_method_codes_round_trip() {
        for m in [Method::Euler, Method::Rk4, Method::EulerMaruyama] {
            assert_eq!(Method::from_code(m.code()).unwrap(), m);
            assert_eq!(Method::parse(m.as_str()).unwrap(), m);
        }
        assert!(matches!(Method::parse("heun"), Err(Error::Config(_))));
    }

    #[test]
    fn gradients_flow_through_the_unrolled_solver() {
        // d/dalpha of the euler solution of z' = alpha z equals T * z_T for
        // one step (h = T): z_T = (1 + h*alpha) z0.
        let mut tape = Tape::new();
        let alpha = tape.leaf(Tensor::scalar(0.3), true).unwrap();
        let z0 = tape.leaf(Tensor::scalar(2.0), false).unwrap();
        let grid = TimeGrid::per_unit(0.0, 1.0, 1).unwrap();
        let mut f = |tape: &mut Tape, z: Var, _t: f64| tape.mul(alpha, z);
        let states = integrate_ode(&mut tape, z0, &grid, Method::Euler, &mut f).unwrap();
        let z_t = *states.last().unwrap();
        let grads = tape.backward(z_t).unwrap();
        // z_T = (1 + alpha) * 2, d z_T / d alpha = 2.
        let g = grads.get(alpha).unwrap().data()[0];
        assert!((g - 2.0).abs() < 1e-12, "{g}");
    }
}
