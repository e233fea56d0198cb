//! Command-line front end for the `pmsm` binary.
//!
//! ```text
//! pmsm simulate --scenario s1 --n 5000 --seed 7 --out data/
//! pmsm fit data/panel.csv --weights psw --m 2 --model saturated
//! pmsm select data/panel.csv --variant ztest --alpha 0.05 --alpha 0.2
//! pmsm mc --scenario s1 --reps 1000 --alpha 0.05 --alpha 0.2 --out results/
//! ```

use crate::dgp::{Scenario, TruthRecord};
use crate::error::{Error, Result};
use crate::estimate::{Analysis, EstimateResult, EstimatorKind, ModelForm};
use crate::infer::{chi2_sf_1df, confidence_interval};
use crate::ipw::{weight_summary, write_weights_csv, Truncation, WeightKind, WeightModelSpec, WeightSummary};
use crate::mc::{run_mc, McConfig, SelectionMethod, SURVIVAL_MAX_M};
use crate::panel::{LongPanel, OutcomeMode};
use crate::select::{closed_test_select, selection_report, SelectionResult, Variant};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Debug, Parser)]
#[command(name = "pmsm", version, about = "Marginal structural model selection by closed testing with IP-weights")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw one dataset from a scenario preset and write panel.csv and truth.json.
    Simulate(SimulateArgs),
    /// Fit weight models on a panel and estimate at a fixed window.
    Fit(FitArgs),
    /// Select the window by closed testing.
    Select(SelectArgs),
    /// Run a Monte-Carlo study.
    Mc(McArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum WeightsArg {
    Sw,
    Rsw,
    Psw,
    #[value(name = "sw_psw")]
    SwPsw,
    #[value(name = "rsw_psw")]
    RswPsw,
}

impl From<WeightsArg> for EstimatorKind {
    fn from(w: WeightsArg) -> Self {
        match w {
            WeightsArg::Sw => EstimatorKind::Sw,
            WeightsArg::Rsw => EstimatorKind::Rsw,
            WeightsArg::Psw => EstimatorKind::Psw,
            WeightsArg::SwPsw => EstimatorKind::SwPsw,
            WeightsArg::RswPsw => EstimatorKind::RswPsw,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Saturated,
    Main,
    /// Main-effect model adjusted for `L(0)`.
    #[value(name = "main_adjusted")]
    MainAdjusted,
}

impl From<ModelArg> for ModelForm {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Saturated => ModelForm::Saturated,
            ModelArg::Main => ModelForm::Main,
            ModelArg::MainAdjusted => ModelForm::MainAdjusted,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Mean,
    Censor,
    Survival,
}

impl From<ModeArg> for OutcomeMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Mean => OutcomeMode::Mean,
            ModeArg::Censor => OutcomeMode::Censor,
            ModeArg::Survival => OutcomeMode::Survival,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    Ztest,
    Pztest,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Ztest => Variant::Ztest,
            VariantArg::Pztest => Variant::Pztest,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario preset: s1, s2, s3 or surv.
    #[arg(long)]
    pub scenario: String,
    #[arg(long, default_value_t = 5000)]
    pub n: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

/// Options shared by `fit` and `select`.
#[derive(Debug, Args)]
pub struct PanelArgs {
    /// Long-format panel CSV.
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub model: Option<ModelArg>,
    /// Expected outcome mode; an error is raised if the panel differs.
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Use the generating probabilities (from --truth) as weight denominators.
    #[arg(long)]
    pub true_weights: bool,
    /// Truth JSON written by `simulate` (defaults to truth.json next to the input).
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Clamp weights into [LO, HI].
    #[arg(long, num_args = 2, value_names = ["LO", "HI"])]
    pub truncate: Option<Vec<f64>>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub panel: PanelArgs,
    #[arg(long, value_enum, default_value = "psw")]
    pub weights: WeightsArg,
    /// Window length (number of most recent treatments in the model).
    #[arg(long)]
    pub m: usize,
    /// Level of the pretest used by combined estimators.
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Confidence level of the reported interval.
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    /// Also write the weights to this CSV file.
    #[arg(long)]
    pub weights_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[command(flatten)]
    pub panel: PanelArgs,
    /// Significance level; repeat for a sensitivity comparison.
    #[arg(long = "alpha", default_values_t = [0.05])]
    pub alphas: Vec<f64>,
    #[arg(long, value_enum, default_value = "ztest")]
    pub variant: VariantArg,
    #[arg(long, default_value_t = 1)]
    pub start_m: usize,
    /// Largest window (defaults to K, or 10 for survival panels).
    #[arg(long)]
    pub max_m: Option<usize>,
}

#[derive(Debug, Args)]
pub struct McArgs {
    /// Scenario preset: s1, s2, s3 or surv.
    #[arg(long, required_unless_present = "config")]
    pub scenario: Option<String>,
    /// JSON file with a full study configuration; replaces the other flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 5000)]
    pub n: usize,
    #[arg(long, default_value_t = 1000)]
    pub reps: usize,
    /// Significance level; repeatable.
    #[arg(long = "alpha", default_values_t = [0.05, 0.2])]
    pub alphas: Vec<f64>,
    /// Selection variant; repeatable (default: both).
    #[arg(long = "variant", value_enum)]
    pub variants: Vec<VariantArg>,
    #[arg(long, value_enum)]
    pub model: Option<ModelArg>,
    #[arg(long)]
    pub true_weights: bool,
    #[arg(long, num_args = 2, value_names = ["LO", "HI"])]
    pub truncate: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1)]
    pub start_m: usize,
    #[arg(long)]
    pub max_m: Option<usize>,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Output directory for the report files.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Report file format (default: both).
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let stdout = std::io::stdout();
    match run(cli, &mut stdout.lock()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => cmd_simulate(&a, out),
        Command::Fit(a) => cmd_fit(&a, out),
        Command::Select(a) => cmd_select(&a, out),
        Command::Mc(a) => cmd_mc(&a, out),
    }
}

fn truncation(v: &Option<Vec<f64>>) -> Result<Option<Truncation>> {
    match v.as_deref() {
        None => Ok(None),
        Some([lo, hi]) if lo.is_finite() && hi.is_finite() && 0.0 < *lo && lo <= hi => {
            Ok(Some(Truncation::Bounds { lo: *lo, hi: *hi }))
        }
        Some(other) => Err(Error::InvalidArgument(format!("--truncate needs 0 < LO <= HI, got {other:?}"))),
    }
}

pub fn cmd_simulate(a: &SimulateArgs, out: &mut dyn Write) -> Result<()> {
    let scenario = Scenario::preset(&a.scenario, a.n, a.seed)?;
    let (panel, truth) = scenario.generate_replication(0);
    std::fs::create_dir_all(&a.out)?;
    let panel_path = a.out.join("panel.csv");
    let truth_path = a.out.join("truth.json");
    panel.write_csv(&panel_path)?;
    std::fs::write(&truth_path, serde_json::to_string(&truth)?)?;
    writeln!(
        out,
        "wrote {} ({} subjects, K = {}) and {}",
        panel_path.display(),
        panel.n(),
        panel.horizon(),
        truth_path.display()
    )?;
    Ok(())
}

/// Loaded panel plus fitted weight models.
struct Prepared {
    panel: LongPanel,
    spec: WeightModelSpec,
    form: ModelForm,
    truth: Option<TruthRecord>,
}

impl Prepared {
    fn load(a: &PanelArgs) -> Result<Self> {
        let panel = LongPanel::read_csv(&a.input)?;
        if let Some(mode) = a.mode {
            let expected = OutcomeMode::from(mode);
            if panel.mode() != expected {
                return Err(Error::InvalidArgument(format!(
                    "--mode {expected:?} does not match the panel, which is in {:?} mode",
                    panel.mode()
                )));
            }
        }
        let form = match a.model {
            Some(m) => m.into(),
            None if panel.is_survival() => ModelForm::Main,
            None => ModelForm::Saturated,
        };
        let mut spec = WeightModelSpec::for_horizon(panel.horizon());
        spec.truncation = truncation(&a.truncate)?;
        let truth = if a.true_weights {
            let path = a.truth.clone().unwrap_or_else(|| sibling(&a.input, "truth.json"));
            let truth: TruthRecord = serde_json::from_str(&std::fs::read_to_string(&path)?)?;
            if truth.treatment_prob.len() != panel.n() * panel.horizon() {
                return Err(Error::InvalidArgument(format!("{} does not match the panel's shape", path.display())));
            }
            Some(truth)
        } else {
            None
        };
        Ok(Self { panel, spec, form, truth })
    }

    fn analysis(&self) -> Result<Analysis<'_>> {
        match &self.truth {
            Some(t) => Analysis::with_truth(&self.panel, &self.spec, self.form, t),
            None => Analysis::new(&self.panel, &self.spec, self.form),
        }
    }
}

fn sibling(path: &Path, name: &str) -> PathBuf {
    path.parent().map_or_else(|| PathBuf::from(name), |p| p.join(name))
}

/// Result of `pmsm fit`.
#[derive(Clone, Debug, Serialize)]
pub struct FitReport {
    pub weights: EstimatorKind,
    pub m: usize,
    pub model: ModelForm,
    pub mode: OutcomeMode,
    pub n: usize,
    pub estimate: f64,
    pub se: f64,
    pub level: f64,
    pub lower: f64,
    pub upper: f64,
    pub p_value: f64,
    /// `(HR, lower, upper)` for survival panels.
    pub hazard_ratio: Option<[f64; 3]>,
    /// For combined estimators: the weights actually used.
    pub branch: Option<WeightKind>,
    pub weight_summary: WeightSummary,
}

impl FitReport {
    pub fn new(panel: &LongPanel, e: &EstimateResult, level: f64, summary: WeightSummary) -> Self {
        let ci = confidence_interval(e, level);
        let z2 = if e.variance > 0.0 { e.estimate * e.estimate / e.variance } else { f64::INFINITY };
        Self {
            weights: e.kind,
            m: e.m,
            model: e.model_form,
            mode: panel.mode(),
            n: panel.n(),
            estimate: e.estimate,
            se: e.se(),
            level,
            lower: ci.lower,
            upper: ci.upper,
            p_value: if z2.is_finite() { chi2_sf_1df(z2) } else { 0.0 },
            hazard_ratio: panel.is_survival().then(|| {
                let (hr, lo, hi) = ci.exponentiated();
                [hr, lo, hi]
            }),
            branch: e.branch,
            weight_summary: summary,
        }
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let head = if self.hazard_ratio.is_some() { "log HR" } else { "estimate" };
        s += &format!(
            "{} weights, m = {}, {} model, {:?} mode, n = {}\n",
            self.weights, self.m, self.model, self.mode, self.n
        );
        if let Some(b) = self.branch {
            s += &format!("combined estimator used {} weights\n", b.label());
        }
        match self.hazard_ratio {
            Some([hr, lo, hi]) => {
                s += &format!("{:>10} {:>8} {:>8} {:>8} {:>8} {:>10}\n", head, "SE", "HR", "LCL", "UCL", "p");
                s += &format!(
                    "{:>10.3} {:>8.3} {:>8.3} {:>8.3} {:>8.3} {:>10}\n",
                    self.estimate,
                    self.se,
                    hr,
                    lo,
                    hi,
                    format_p(self.p_value)
                );
            }
            None => {
                s += &format!("{:>10} {:>8} {:>8} {:>8} {:>10}\n", head, "SE", "LCL", "UCL", "p");
                s += &format!(
                    "{:>10.3} {:>8.3} {:>8.3} {:>8.3} {:>10}\n",
                    self.estimate,
                    self.se,
                    self.lower,
                    self.upper,
                    format_p(self.p_value)
                );
            }
        }
        let w = &self.weight_summary;
        s += &format!(
            "weights: count {} mean {:.3} sd {:.3} min {:.3} max {:.3}\n",
            w.count, w.mean, w.sd, w.min, w.max
        );
        s
    }
}

fn format_p(p: f64) -> String {
    if p < 0.001 {
        "<0.001".into()
    } else {
        format!("{p:.3}")
    }
}

pub fn cmd_fit(a: &FitArgs, out: &mut dyn Write) -> Result<()> {
    let prepared = Prepared::load(&a.panel)?;
    let k = prepared.panel.horizon();
    if a.m == 0 || a.m > k {
        return Err(Error::InvalidArgument(format!("--m {} outside 1..={k}", a.m)));
    }
    let analysis = prepared.analysis()?;
    let e = analysis.estimate_kind(a.weights.into(), a.m, a.alpha)?;
    let used = e.branch.unwrap_or(match a.weights {
        WeightsArg::Sw => WeightKind::Sw,
        WeightsArg::Rsw => WeightKind::Rsw,
        _ => WeightKind::Psw,
    });
    let ws = analysis.weights(used, a.m)?;
    if let Some(path) = &a.weights_out {
        write_weights_csv(&prepared.panel, &ws, std::io::BufWriter::new(std::fs::File::create(path)?))?;
    }
    let report = FitReport::new(&prepared.panel, &e, a.level, weight_summary(&ws));
    match a.panel.format {
        Some(Format::Json) => writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?,
        Some(Format::Csv) => {
            let mut w = csv::Writer::from_writer(&mut *out);
            w.write_record(["weights", "m", "estimate", "se", "lower", "upper", "p"])?;
            w.write_record([
                report.weights.label().to_string(),
                report.m.to_string(),
                report.estimate.to_string(),
                report.se.to_string(),
                report.lower.to_string(),
                report.upper.to_string(),
                report.p_value.to_string(),
            ])?;
            w.flush()?;
        }
        None => write!(out, "{}", report.to_table())?,
    }
    Ok(())
}

pub fn cmd_select(a: &SelectArgs, out: &mut dyn Write) -> Result<()> {
    let prepared = Prepared::load(&a.panel)?;
    let k = prepared.panel.horizon();
    let max_m = a.max_m.unwrap_or(if prepared.panel.is_survival() { SURVIVAL_MAX_M.min(k) } else { k });
    let analysis = prepared.analysis()?;
    let results: Vec<SelectionResult> = a
        .alphas
        .iter()
        .map(|&alpha| closed_test_select(&analysis, alpha, a.variant.into(), a.start_m, max_m))
        .collect::<Result<_>>()?;
    match a.panel.format {
        Some(Format::Json) => {
            let json: Vec<_> = results.iter().map(SelectionResult::to_json).collect();
            if json.len() == 1 {
                writeln!(out, "{}", serde_json::to_string_pretty(&json[0])?)?;
            } else {
                writeln!(out, "{}", serde_json::to_string_pretty(&json)?)?;
            }
        }
        Some(Format::Csv) => {
            let mut w = csv::Writer::from_writer(&mut *out);
            w.write_record(["variant", "alpha", "m", "d", "p", "rejected", "selected_m"])?;
            for r in &results {
                for t in &r.path {
                    w.write_record([
                        r.variant.to_string(),
                        r.alpha.to_string(),
                        t.m.to_string(),
                        t.statistic.to_string(),
                        t.p_value.to_string(),
                        t.rejected.to_string(),
                        r.selected_m.to_string(),
                    ])?;
                }
            }
            w.flush()?;
        }
        None => {
            for r in &results {
                write!(out, "{}", selection_report(r))?;
            }
            if results.len() > 1 {
                writeln!(out, "\n{:>8} {:>10}", "alpha", "selected")?;
                for r in &results {
                    writeln!(out, "{:>8} {:>10}", r.alpha, r.selected_m)?;
                }
            }
        }
    }
    Ok(())
}

fn mc_config(a: &McArgs) -> Result<McConfig> {
    if let Some(path) = &a.config {
        return Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?);
    }
    let name = a.scenario.as_deref().expect("clap requires --scenario without --config");
    let scenario = Scenario::preset(name, a.n, a.seed)?;
    let variants: Vec<Variant> = if a.variants.is_empty() {
        vec![Variant::Ztest, Variant::Pztest]
    } else {
        a.variants.iter().map(|v| (*v).into()).collect()
    };
    let methods = variants
        .iter()
        .flat_map(|v| a.alphas.iter().map(move |alpha| SelectionMethod::new(*v, *alpha)))
        .collect();
    let model = match a.model {
        Some(m) => m.into(),
        None if scenario.is_survival() => ModelForm::Main,
        None if name == "s1" => ModelForm::Saturated,
        None => ModelForm::Main,
    };
    let mut cfg = McConfig::new(scenario, a.reps, methods, model);
    cfg.true_weights = a.true_weights;
    cfg.start_m = a.start_m;
    cfg.max_m = a.max_m;
    cfg.truncation = truncation(&a.truncate)?;
    cfg.threads = a.threads;
    Ok(cfg)
}

pub fn cmd_mc(a: &McArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = mc_config(a)?;
    let report = run_mc(&cfg)?;
    write!(out, "{}", report.to_table())?;
    if let Some(dir) = &a.out {
        std::fs::create_dir_all(dir)?;
        if a.format != Some(Format::Json) {
            report.write_csv(dir)?;
        }
        if a.format != Some(Format::Csv) {
            report.write_json(&dir.join("report.json"))?;
        }
        writeln!(out, "report written to {}", dir.display())?;
    }
    Ok(())
}
