//! Central-difference verification of analytic gradients.
//!
//! The checker re-evaluates a caller-supplied loss under `±eps` perturbations
//! of every scalar parameter and compares the central difference against the
//! analytic gradient, entry by entry. A fault-injection hook deliberately
//! corrupts one analytic entry so the checker itself can be shown to catch a
//! wrong gradient.

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

/// Perturbation used for central differences.
pub const GRADCHECK_EPS: f64 = 1e-5;
/// Maximum allowed relative error `|analytic - central| / (|central| + 1e-12)`.
pub const GRADCHECK_TOL: f64 = 1e-6;

/// Deliberate corruption of one analytic gradient entry.
#[derive(Debug, Clone, PartialEq)]
pub struct FaultSpec {
    pub block: String,
    pub entry: usize,
    pub delta: f64,
}

impl FaultSpec {
    /// Parses `"block:entry:delta"`, e.g. `"gen.f.0.w:3:0.5"`.
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.rsplitn(3, ':').collect();
        if parts.len() != 3 {
            return Err(Error::config(format!(
                "fault spec must look like block:entry:delta, got {s:?}"
            )));
        }
        let delta: f64 = parts[0]
            .parse()
            .map_err(|_| Error::config(format!("fault delta {:?} is not a number", parts[0])))?;
        let entry: usize = parts[1]
            .parse()
            .map_err(|_| Error::config(format!("fault entry {:?} is not an index", parts[1])))?;
        Ok(FaultSpec {
            block: parts[2].to_string(),
            entry,
            delta,
        })
    }
}

/// Outcome of one gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Largest relative error over all entries.
    pub max_rel_err: f64,
    /// Block name and flat entry index where it occurred.
    pub worst_block: String,
    pub worst_entry: usize,
    /// Total scalar entries compared.
    pub entries_checked: usize,
    /// Per-block maximum relative error, in store order.
    pub per_block: Vec<(String, f64)>,
    /// Whether `max_rel_err` stayed below the tolerance.
    pub passed: bool,
}

/// Checks `analytic` (one tensor per store block, in store order) against
/// central differences of `loss` at every parameter entry.
///
/// `loss` must be a pure function of the store contents: it is called twice
/// per entry with a perturbed copy.
pub fn grad_check<L>(
    store: &ParamStore,
    analytic: &[Tensor],
    loss: L,
    eps: f64,
    tol: f64,
) -> Result<GradCheckReport>
where
    L: Fn(&ParamStore) -> Result<f64>,
{
    grad_check_with_fault(store, analytic, loss, eps, tol, None)
}

/// [`grad_check`] with an optional planted fault in the analytic gradients.
pub fn grad_check_with_fault<L>(
    store: &ParamStore,
    analytic: &[Tensor],
    loss: L,
    eps: f64,
    tol: f64,
    fault: Option<&FaultSpec>,
) -> Result<GradCheckReport>
where
    L: Fn(&ParamStore) -> Result<f64>,
{
    if !(eps > 0.0 && tol > 0.0) {
        return Err(Error::config("gradcheck eps and tol must be positive"));
    }
    if analytic.len() != store.len() {
        return Err(Error::contract(format!(
            "gradcheck got {} gradient blocks for {} parameter blocks",
            analytic.len(),
            store.len()
        )));
    }
    if let Some(f) = fault {
        let idx = store
            .index_of(&f.block)
            .ok_or_else(|| Error::config(format!("fault names unknown block {:?}", f.block)))?;
        if f.entry >= store.get(idx).numel() {
            return Err(Error::config(format!(
                "fault entry {} out of range for block {:?} ({} entries)",
                f.entry,
                f.block,
                store.get(idx).numel()
            )));
        }
    }

    let mut max_rel_err = 0.0f64;
    let mut worst_block = String::new();
    let mut worst_entry = 0usize;
    let mut entries_checked = 0usize;
    let mut per_block = Vec::with_capacity(store.len());

    for i in 0..store.len() {
        let name = store.name(i).to_string();
        if analytic[i].shape() != store.get(i).shape() {
            return Err(Error::Shape {
                op: "gradcheck",
                lhs: store.get(i).shape().to_vec(),
                rhs: analytic[i].shape().to_vec(),
            });
        }
        let mut block_max = 0.0f64;
        for j in 0..store.get(i).numel() {
            let mut analytic_entry = analytic[i].data()[j];
            if let Some(f) = fault {
                if f.block == name && f.entry == j {
                    analytic_entry += f.delta;
                }
            }
            let perturbed = |delta: f64| -> Result<f64> {
                let mut s = store.clone();
                let mut block = s.get(i).clone();
                block.data_mut()[j] += delta;
                s.set(i, block)?;
                loss(&s)
            };
            let central = (perturbed(eps)? - perturbed(-eps)?) / (2.0 * eps);
            let rel = (analytic_entry - central).abs() / (central.abs() + 1e-12);
            entries_checked += 1;
            if rel > block_max {
                block_max = rel;
            }
            if rel > max_rel_err {
                max_rel_err = rel;
                worst_block = name.clone();
                worst_entry = j;
            }
        }
        per_block.push((name, block_max));
    }

    Ok(GradCheckReport {
        max_rel_err,
        worst_block,
        worst_entry,
        entries_checked,
        per_block,
        passed: max_rel_err < tol,
    })
}
