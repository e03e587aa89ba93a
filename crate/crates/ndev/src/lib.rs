//! Continuous-time latent video generation, self-contained on the CPU.
//!
//! The pipeline is a GAN whose generator splits in two: a temporal stage
//! evolves a latent state across frames (discrete conv/lstm baselines, or a
//! learned ODE/SDE integrated by fixed-step solvers), and an image stage
//! renders each latent into a 16x16 frame. A small 3D-conv discriminator
//! scores whole videos. Everything runs on an f64 reverse-mode tape, so
//! every gradient in the system can be audited against finite differences.
//!
//! Module map:
//! - [`tensor`], [`tape`] — dense f64 tensors and the autodiff tape.
//! - [`nn`], [`optim`] — layers, seeded init, Adam.
//! - [`solvers`] — fixed-step ODE/SDE integrators and Wiener paths.
//! - [`temporal`] — the six latent-dynamics families.
//! - [`videogan`] — image generator, discriminator, losses, training loop,
//!   checkpoints, and the pipeline-wide gradient checks.
//! - [`data`], [`metrics`] — synthetic video datasets and probe-based scores.
//! - [`ablation`], [`config`], [`cli`], [`io`], [`gradcheck`] — the family
//!   comparison grid, strict JSON configs, the CLI, file formats, and the
//!   finite-difference harness.
//!
//! The `examples/` directory walks the stack bottom-up: `autodiff_basics`,
//! `ode_convergence`, `sde_paths`, `higher_order_odes`, `temporal_families`,
//! `synthetic_videos`, `train_smoke`, `sample_and_export`,
//! `interpolate_and_backtrack`, `ablation_mini`, `gradcheck_report`.

pub mod data;
pub mod error;
pub mod gradcheck;
pub mod io;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod solvers;
pub mod temporal;
pub mod tape;
pub mod tensor;
pub mod videogan;
pub mod ablation;
pub mod config;
pub mod cli;

pub use error::{Error, Result};
