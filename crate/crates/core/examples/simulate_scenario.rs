//! Draw one dataset from each normal-outcome scenario, save it as a long CSV,
//! and read it back.
//!
//! ```text
//! cargo run --example simulate_scenario -- [n] [seed]
//! ```

use pmsm::dgp::{generate_normal, NormalDgpConfig};
use pmsm::panel::LongPanel;

fn main() -> pmsm::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map_or(Ok(2000), |s| s.parse()).expect("n is an integer");
    let seed: u64 = args.next().map_or(Ok(1), |s| s.parse()).expect("seed is an integer");
    let dir = tempfile_dir();

    for (name, cfg) in [
        ("s1", NormalDgpConfig::scenario1(n, seed)),
        ("s2", NormalDgpConfig::scenario2(n, seed)),
        ("s3", NormalDgpConfig::scenario3(n, seed)),
    ] {
        let (panel, truth) = generate_normal(&cfg);
        let path = dir.join(format!("{name}.csv"));
        panel.write_csv(&path)?;
        let back = LongPanel::read_csv(&path)?;
        assert_eq!(panel, back);

        let treated_always = (0..panel.n()).filter(|&i| panel.treatment_history(i).iter().all(|a| *a == 1.0)).count();
        let mean_y = (0..panel.n()).filter_map(|i| panel.outcome_value(i)).sum::<f64>() / panel.n() as f64;
        println!(
            "{name}: n = {}, K = {}, theta = {}, m* = {}, always treated = {}, mean Y = {mean_y:.3}, rows = {}",
            panel.n(),
            panel.horizon(),
            truth.estimand,
            truth.m_star,
            treated_always,
            panel.expand_person_periods()?.len()
        );
    }
    println!("CSV files in {}", dir.display());
    Ok(())
}

fn tempfile_dir() -> std::path::PathBuf {
    let dir = std::env::temp_dir().join("pmsm-simulate-example");
    std::fs::create_dir_all(&dir).expect("temp dir is writable");
    dir
}
