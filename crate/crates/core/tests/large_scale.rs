//! Reference values for the logistic design at N = 500 000, k = floor(N^(3/4)).
//!
//! Each study runs 1000 replications and takes minutes even on many cores:
//! `cargo test --release --test large_scale -- --ignored --nocapture`.

use subbag_core::sim::{run_replications, variance_inflation_ratios, SimConfig, SimReport};
use subbag_core::Family;

const N: usize = 500_000;

fn study(alpha: f64, with_baseline: bool) -> SimReport {
    let mut cfg = SimConfig::paper_scale(Family::Logistic, N, 0.25, alpha);
    cfg.with_baseline = with_baseline;
    let r = run_replications(&cfg).unwrap();
    let s = &r.subbagging;
    println!(
        "alpha = {alpha} (k = {}, m = {}): x100 BIAS {:.2?} SD {:.2?} RMSE {:.2?} ASE {:.2?} CP {:.3?}",
        r.k,
        r.m,
        s.bias.iter().map(|v| 100.0 * v).collect::<Vec<_>>(),
        s.sd.iter().map(|v| 100.0 * v).collect::<Vec<_>>(),
        s.rmse.iter().map(|v| 100.0 * v).collect::<Vec<_>>(),
        s.ase.as_ref().map(|a| a.iter().map(|v| 100.0 * v).collect::<Vec<_>>()),
        s.cp,
    );
    if let Some(b) = &r.baseline {
        println!(
            "full sample: x100 SD {:.2?}",
            b.sd.iter().map(|v| 100.0 * v).collect::<Vec<_>>()
        );
    }
    r
}

fn within(value: f64, target: f64, rel: f64) -> bool {
    (value - target).abs() <= rel * target.abs()
}

#[test]
#[ignore = "paper-scale Monte Carlo"]
fn alpha_tenth_reference_values() {
    let r = study(0.1, true);
    let sel = &r.subbagging_selection;
    assert_eq!(
        (sel.cf, sel.tp, sel.fp, sel.ms, sel.sd_ms),
        (1.0, 1.0, 0.0, 3.0, 0.0)
    );

    let s = &r.subbagging;
    let bias_se = s.bias_mc_se()[0];
    assert!(
        (100.0 * s.bias[0] - 0.47).abs() <= 3.0 * 100.0 * bias_se,
        "BIAS {}",
        100.0 * s.bias[0]
    );
    assert!(within(100.0 * s.sd[0], 2.78, 0.1), "SD {}", 100.0 * s.sd[0]);
    assert!(
        within(100.0 * s.rmse[0], 2.78, 0.1),
        "RMSE {}",
        100.0 * s.rmse[0]
    );
    let ase = s.ase.as_ref().expect("m >= 2")[0];
    assert!(within(100.0 * ase, 2.83, 0.1), "ASE {}", 100.0 * ase);
    let cp = s.cp.as_ref().unwrap()[0];
    assert!((cp - 0.943).abs() <= 0.022, "CP {cp}");

    let base = r.baseline.as_ref().unwrap();
    assert!(
        within(100.0 * base.sd[0], 0.83, 0.1),
        "full-sample SD {}",
        100.0 * base.sd[0]
    );
}

#[test]
#[ignore = "paper-scale Monte Carlo"]
fn variance_inflation_follows_alpha() {
    let with_base = |alpha| {
        let r = study(alpha, true);
        variance_inflation_ratios(&r).unwrap()[0]
    };
    let half = with_base(0.5);
    let one = with_base(1.0);
    println!("SD^2 ratios for beta_1: alpha = 0.5 {half:.3}, alpha = 1 {one:.3}");
    assert!(within(half, 3.0, 0.15), "alpha = 0.5: {half}");
    assert!(within(one, 2.0, 0.15), "alpha = 1: {one}");
}
