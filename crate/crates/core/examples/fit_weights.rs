//! Fit the treatment models once and compare SW, RSW and PSW weights and
//! estimates for every window length, with estimated and with true
//! denominators.
//!
//! ```text
//! cargo run --release --example fit_weights -- [n] [seed]
//! ```

use pmsm::dgp::{generate_normal, NormalDgpConfig};
use pmsm::estimate::{Analysis, ModelForm};
use pmsm::infer::confidence_interval;
use pmsm::ipw::{weight_summary, Truncation, WeightKind, WeightModelSpec};

fn main() -> pmsm::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map_or(Ok(5000), |s| s.parse()).expect("n is an integer");
    let seed: u64 = args.next().map_or(Ok(1), |s| s.parse()).expect("seed is an integer");
    let (panel, truth) = generate_normal(&NormalDgpConfig::scenario1(n, seed));
    let spec = WeightModelSpec::for_horizon(panel.horizon());
    println!("scenario 1, n = {n}, target theta = {}\n", truth.estimand);

    for (label, analysis) in [
        ("estimated", Analysis::new(&panel, &spec, ModelForm::Saturated)?),
        ("true", Analysis::with_truth(&panel, &spec, ModelForm::Saturated, &truth)?),
    ] {
        println!("{label} denominators");
        println!("{:>4} {:>5} {:>9} {:>8} {:>8} {:>8} {:>18}", "m", "kind", "estimate", "SE", "w mean", "w max", "95% CI");
        for m in 1..=panel.horizon() {
            for kind in [WeightKind::Sw, WeightKind::Rsw, WeightKind::Psw] {
                let e = analysis.estimate(kind, m)?;
                let w = weight_summary(&analysis.weights(kind, m)?);
                let ci = confidence_interval(&e, 0.95);
                println!(
                    "{m:>4} {:>5} {:>9.3} {:>8.3} {:>8.3} {:>8.2}   [{:.3}, {:.3}]",
                    kind.label(),
                    e.estimate,
                    e.se(),
                    w.mean,
                    w.max,
                    ci.lower,
                    ci.upper
                );
            }
        }
        println!();
    }

    // Truncating the weights trades bias for variance.
    let truncated = WeightModelSpec { truncation: Some(Truncation::Percentiles { lo: 0.01, hi: 0.99 }), ..spec };
    let analysis = Analysis::new(&panel, &truncated, ModelForm::Saturated)?;
    let e = analysis.estimate(WeightKind::Sw, 2)?;
    let w = analysis.weights(WeightKind::Sw, 2)?;
    println!("SW at m = 2 with 1%/99% truncation: {:.3} (SE {:.3}), {}", e.estimate, e.se(), weight_summary(&w));
    Ok(())
}
