//! Weighted Cox marginal structural models on the 36-month survival design:
//! hazard ratios for each weight type over a grid of windows, and the window
//! chosen by closed testing.
//!
//! ```text
//! cargo run --release --example survival_cox -- [n] [seed]
//! ```

use pmsm::dgp::{generate_survival, SurvivalDgpConfig};
use pmsm::estimate::{Analysis, ModelForm};
use pmsm::infer::confidence_interval;
use pmsm::ipw::{WeightKind, WeightModelSpec};
use pmsm::select::{closed_test_select, selection_report, Variant};

fn main() -> pmsm::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map_or(Ok(5000), |s| s.parse()).expect("n is an integer");
    let seed: u64 = args.next().map_or(Ok(1), |s| s.parse()).expect("seed is an integer");
    let (panel, truth) = generate_survival(&SurvivalDgpConfig::new(n, seed));
    let events = (0..panel.n()).filter(|&i| panel.event_at(i, panel.follow_up(i)) == Some(true)).count();
    println!(
        "n = {n}, K = {}, person-months = {}, events = {events}, true log HR = {}",
        panel.horizon(),
        panel.expand_person_periods()?.len(),
        truth.estimand
    );

    let analysis = Analysis::new(&panel, &WeightModelSpec::for_horizon(panel.horizon()), ModelForm::Main)?;
    println!("{:>4} {:>5} {:>8} {:>7} {:>7} {:>7}", "m", "kind", "log HR", "HR", "LCL", "UCL");
    for m in [1, 2, 3, 6] {
        for kind in [WeightKind::Sw, WeightKind::Rsw, WeightKind::Psw] {
            let e = analysis.estimate(kind, m)?;
            let (hr, lo, hi) = confidence_interval(&e, 0.95).exponentiated();
            println!("{m:>4} {:>5} {:>8.3} {hr:>7.3} {lo:>7.3} {hi:>7.3}", kind.label(), e.estimate);
        }
    }

    let r = closed_test_select(&analysis, 0.20, Variant::Pztest, 1, 10)?;
    print!("\n{}", selection_report(&r));
    let e = analysis.estimate(WeightKind::Psw, r.selected_m)?;
    let (hr, lo, hi) = confidence_interval(&e, 0.95).exponentiated();
    println!("PSW at m = {}: HR {hr:.3} [{lo:.3}, {hi:.3}]", r.selected_m);
    Ok(())
}
