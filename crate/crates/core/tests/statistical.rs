//! Statistical behavior of the corrected estimator across repeated runs.

use gausspin::kernels::KernelSpec;
use gausspin::montecarlo::{derive_seed, estimate_crossing, Barrier, McRun, Method};

/// Nominal 95% intervals from small corrected runs should cover the true
/// Brownian crossing probability 0.31732 at close to the nominal rate;
/// 42 of 50 is the lower edge of the exact binomial 95% band for p = 0.95.
#[test]
fn confidence_interval_coverage_brownian() {
    let mut covered = 0;
    for rep in 0..50 {
        let run = McRun {
            spec: KernelSpec::fbm(0.5).unwrap(),
            step: 0.01,
            horizon: 1.0,
            upper: Some(Barrier::Constant(1.0)),
            lower: None,
            start: 0.0,
            n_paths: 1000,
            seed: derive_seed(0xc0ffee, rep),
            method: Method::Corrected,
        };
        let r = estimate_crossing(&run).unwrap();
        if r.ci_low <= 0.31732 && 0.31732 <= r.ci_high {
            covered += 1;
        }
    }
    assert!(
        covered >= 42,
        "CI covered the true value in only {covered}/50 runs"
    );
}
