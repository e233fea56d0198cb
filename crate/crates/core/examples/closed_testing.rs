//! Select the window length by closed testing on one dataset per scenario,
//! then report the combined estimators at the selected window.
//!
//! ```text
//! cargo run --release --example closed_testing -- [seed]
//! ```

use pmsm::dgp::{generate_normal, NormalDgpConfig};
use pmsm::estimate::{Analysis, EstimatorKind, ModelForm};
use pmsm::ipw::WeightModelSpec;
use pmsm::select::{closed_test_select, selection_report, Variant};

fn main() -> pmsm::Result<()> {
    let seed: u64 = std::env::args().nth(1).map_or(Ok(3), |s| s.parse()).expect("seed is an integer");
    for (name, cfg, form) in [
        ("scenario 1", NormalDgpConfig::scenario1(5000, seed), ModelForm::Saturated),
        ("scenario 2", NormalDgpConfig::scenario2(5000, seed), ModelForm::Main),
        ("scenario 3", NormalDgpConfig::scenario3(5000, seed), ModelForm::Main),
    ] {
        let (panel, truth) = generate_normal(&cfg);
        let analysis = Analysis::new(&panel, &WeightModelSpec::for_horizon(panel.horizon()), form)?;
        println!("== {name} (theta = {}, m* = {})", truth.estimand, truth.m_star);
        for (variant, alpha) in [(Variant::Ztest, 0.05), (Variant::Pztest, 0.20)] {
            let r = closed_test_select(&analysis, alpha, variant, 1, panel.horizon())?;
            print!("{}", selection_report(&r));
            for kind in variant_estimators(variant) {
                let e = analysis.estimate_kind(kind, r.selected_m, alpha)?;
                let branch = e.branch.map(|b| format!(" (used {})", b.label())).unwrap_or_default();
                println!("   {:>8}: {:.3} (SE {:.3}){branch}", kind.label(), e.estimate, e.se());
            }
        }
        println!();
    }
    Ok(())
}

fn variant_estimators(variant: Variant) -> Vec<EstimatorKind> {
    match variant {
        Variant::Ztest => vec![EstimatorKind::Sw, EstimatorKind::Rsw, EstimatorKind::SwPsw, EstimatorKind::RswPsw],
        Variant::Pztest => vec![EstimatorKind::Psw],
    }
}
