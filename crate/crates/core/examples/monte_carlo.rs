//! A small Monte-Carlo study: selection probabilities, bias, SE, RMSE and
//! coverage for each selection method, written as CSV and JSON.
//!
//! ```text
//! cargo run --release --example monte_carlo -- [scenario] [reps] [n] [out-dir]
//! ```

use pmsm::dgp::Scenario;
use pmsm::estimate::ModelForm;
use pmsm::mc::{run_mc, McConfig, SelectionMethod};
use pmsm::select::Variant;

fn main() -> pmsm::Result<()> {
    let mut args = std::env::args().skip(1);
    let name = args.next().unwrap_or_else(|| "s1".into());
    let reps: usize = args.next().map_or(Ok(100), |s| s.parse()).expect("reps is an integer");
    let n: usize = args.next().map_or(Ok(5000), |s| s.parse()).expect("n is an integer");
    let out = args.next().map(std::path::PathBuf::from);

    let scenario = Scenario::preset(&name, n, 2024)?;
    let model = if name == "s1" { ModelForm::Saturated } else { ModelForm::Main };
    let methods = vec![
        SelectionMethod::new(Variant::Ztest, 0.05),
        SelectionMethod::new(Variant::Ztest, 0.20),
        SelectionMethod::new(Variant::Pztest, 0.05),
        SelectionMethod::new(Variant::Pztest, 0.20),
    ];
    let cfg = McConfig::new(scenario, reps, methods, model);
    println!("{}", serde_json::to_string(&cfg)?);
    let report = run_mc(&cfg)?;
    print!("{}", report.to_table());

    if let Some(dir) = out {
        std::fs::create_dir_all(&dir)?;
        report.write_csv(&dir)?;
        report.write_json(&dir.join("report.json"))?;
        println!("written to {}", dir.display());
    }
    Ok(())
}
