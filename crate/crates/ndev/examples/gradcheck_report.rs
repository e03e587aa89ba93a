//! Full-pipeline gradient audit: every temporal family through its unroll,
//! then the image generator and discriminator, each stage's analytic
//! gradients compared entry-by-entry against central finite differences.
//! Finishes by planting a fault and watching the sweep catch it.

use ndev::ablation::{spec_for_token, FAMILY_TOKENS};
use ndev::error::Result;
use ndev::gradcheck::FaultSpec;
use ndev::temporal::{Family, TemporalSpec};
use ndev::videogan::{run_pipeline_checks, StageReport};

fn print_stage(report: &StageReport) {
    let r = &report.report;
    println!(
        "{:<14} max rel err {:.3e} over {:>4} entries (tol {:.0e}) .. {}",
        report.stage,
        r.max_rel_err,
        r.entries_checked,
        report.tol,
        if r.passed { "pass" } else { "FAIL" }
    );
}

fn main() -> Result<()> {
    // 8-dim latent state unrolled over 16 frames; the full eight-stage sweep
    // takes on the order of ten seconds.
    let base = TemporalSpec::new(Family::Ode, 8, 16, 20);
    let params_seed = 20;
    let specs = FAMILY_TOKENS
        .iter()
        .map(|t| spec_for_token(&base, t))
        .collect::<Result<Vec<_>>>()?;

    let reports = run_pipeline_checks(&specs, params_seed, None)?;
    for report in &reports {
        print_stage(report);
    }
    assert!(reports.iter().all(|r| r.report.passed));

    // Corrupt one analytic gradient entry of the lstm's gate weights by 50%;
    // only the stage owning that block should fail, and loudly.
    let fault = FaultSpec::parse("lstm.w:0:0.5")?;
    println!("\nreplaying with a planted fault on block lstm.w, entry 0:");
    let reports = run_pipeline_checks(&specs, params_seed, Some(&fault))?;
    for report in &reports {
        print_stage(report);
        if !report.report.passed {
            println!(
                "  caught: worst offender is block {} entry {}",
                report.report.worst_block, report.report.worst_entry
            );
        }
    }
    let failed: Vec<&str> =
        reports.iter().filter(|r| !r.report.passed).map(|r| r.stage.as_str()).collect();
    assert_eq!(failed, ["g_t[lstm]"], "exactly the faulted stage fails");
    Ok(())
}
