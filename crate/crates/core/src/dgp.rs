//! Simulation data-generating processes with seeded, stream-keyed RNGs.
//!
//! * [`NormalDgpConfig`]: four time points, normal covariates and outcome.
//! * [`SurvivalDgpConfig`]: 36 time points, binary covariate, censoring and
//!   discrete-time events.
//!
//! Every replication draws from its own ChaCha stream keyed by
//! `(seed, replication)`, so parallel Monte-Carlo runs are independent of
//! scheduling order.

use crate::error::{Error, Result};
use crate::glm::expit;
use crate::panel::{LongPanel, SubjectOutcome, SubjectRecord, MISSING};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// RNG for replication `stream` under master seed `seed`.
pub fn replication_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn bernoulli<R: Rng + ?Sized>(rng: &mut R, p: f64) -> bool {
    rng.random::<f64>() < p
}

/// Optional censoring process for the normal family:
/// `C(k+1) ~ Bin(expit(intercept + l_coef * L(k) + a_coef * A(k)))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CensoringModel {
    pub intercept: f64,
    pub l_coef: f64,
    pub a_coef: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalDgpConfig {
    pub alpha0: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub pi1: f64,
    pub delta0: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub n: usize,
    pub seed: u64,
    #[serde(default)]
    pub censoring: Option<CensoringModel>,
}

pub const NORMAL_HORIZON: usize = 4;

impl NormalDgpConfig {
    /// Parameters in the order `(α0, α1, α2, π1, δ0, δ1, δ2, δ3)`.
    pub fn from_params(params: [f64; 8], n: usize, seed: u64) -> Self {
        let [alpha0, alpha1, alpha2, pi1, delta0, delta1, delta2, delta3] = params;
        Self { alpha0, alpha1, alpha2, pi1, delta0, delta1, delta2, delta3, n, seed, censoring: None }
    }

    /// Interaction effect of the last two treatments, no baseline effect.
    pub fn scenario1(n: usize, seed: u64) -> Self {
        Self::from_params([0.0, 0.0, 1.0, 4.0, 0.0, 1.0, 2.0, 1.0], n, seed)
    }

    /// Main effects only.
    pub fn scenario2(n: usize, seed: u64) -> Self {
        Self::from_params([0.0, 0.0, 1.0, 4.0, 0.0, 1.0, 2.0, 0.0], n, seed)
    }

    /// `L(0)` drives later covariates and the outcome directly.
    pub fn scenario3(n: usize, seed: u64) -> Self {
        Self::from_params([0.5, 0.0, 1.0, 4.0, 0.5, 1.0, 2.0, 0.0], n, seed)
    }

    /// Always-treated versus never-treated mean difference.
    pub fn theta(&self) -> f64 {
        self.delta2 + self.delta1 * self.alpha2 + self.delta3 * self.alpha2
    }

    /// Smallest window on which the true marginal model depends.
    pub fn m_star(&self) -> usize {
        if self.delta1 * self.alpha2 != 0.0 || self.delta3 * self.alpha2 != 0.0 {
            2
        } else {
            1
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurvivalDgpConfig {
    pub n: usize,
    pub horizon: usize,
    pub seed: u64,
}

pub const SURVIVAL_HORIZON: usize = 36;
/// Log hazard ratio of always versus never treated in the survival design.
pub const SURVIVAL_ETA: f64 = -0.87;

impl SurvivalDgpConfig {
    pub fn new(n: usize, seed: u64) -> Self {
        Self { n, horizon: SURVIVAL_HORIZON, seed }
    }
}

/// Ground truth attached to a simulated panel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    /// `θ^(K)` (mean outcome) or `η^(K)` (log hazard ratio).
    pub estimand: f64,
    pub m_star: usize,
    pub horizon: usize,
    /// `P[A(k) = 1 | history]` per subject and time (`n * K`, `NaN` when unobserved).
    pub treatment_prob: Vec<f64>,
    /// `P[C(k+1) = 1 | history]` per subject and time, when censoring is simulated.
    pub censoring_prob: Option<Vec<f64>>,
}

impl TruthRecord {
    pub fn treatment(&self, i: usize, k: usize) -> f64 {
        self.treatment_prob[i * self.horizon + k]
    }

    pub fn censoring(&self, i: usize, k: usize) -> Option<f64> {
        self.censoring_prob.as_ref().map(|c| c[i * self.horizon + k])
    }
}

/// Named scenario presets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum Scenario {
    Normal(NormalDgpConfig),
    Survival(SurvivalDgpConfig),
}

impl Scenario {
    /// `"s1"`, `"s2"`, `"s3"` or `"surv"`.
    pub fn preset(name: &str, n: usize, seed: u64) -> Result<Self> {
        Ok(match name {
            "s1" => Scenario::Normal(NormalDgpConfig::scenario1(n, seed)),
            "s2" => Scenario::Normal(NormalDgpConfig::scenario2(n, seed)),
            "s3" => Scenario::Normal(NormalDgpConfig::scenario3(n, seed)),
            "surv" => Scenario::Survival(SurvivalDgpConfig::new(n, seed)),
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown scenario \"{other}\" (expected s1, s2, s3 or surv)"
                )))
            }
        })
    }

    pub fn seed(&self) -> u64 {
        match self {
            Scenario::Normal(c) => c.seed,
            Scenario::Survival(c) => c.seed,
        }
    }

    pub fn horizon(&self) -> usize {
        match self {
            Scenario::Normal(_) => NORMAL_HORIZON,
            Scenario::Survival(c) => c.horizon,
        }
    }

    pub fn is_survival(&self) -> bool {
        matches!(self, Scenario::Survival(_))
    }

    /// Draws replication `rep` of this scenario.
    pub fn generate_replication(&self, rep: u64) -> (LongPanel, TruthRecord) {
        let mut rng = replication_rng(self.seed(), rep);
        match self {
            Scenario::Normal(c) => generate_normal_with(c, &mut rng),
            Scenario::Survival(c) => generate_survival_with(c, &mut rng),
        }
    }
}

pub fn generate_normal(cfg: &NormalDgpConfig) -> (LongPanel, TruthRecord) {
    generate_normal_with(cfg, &mut replication_rng(cfg.seed, 0))
}

pub fn generate_normal_with<R: Rng + ?Sized>(cfg: &NormalDgpConfig, rng: &mut R) -> (LongPanel, TruthRecord) {
    let k_max = NORMAL_HORIZON;
    let mut records = Vec::with_capacity(cfg.n);
    let mut treatment_prob = vec![f64::NAN; cfg.n * k_max];
    let mut censoring_prob = cfg.censoring.map(|_| vec![f64::NAN; cfg.n * k_max]);
    for i in 0..cfg.n {
        let mut covariates = vec![vec![f64::NAN]; k_max];
        let mut treatments = vec![f64::NAN; k_max];
        let mut censoring = cfg.censoring.map(|_| vec![MISSING; k_max]);
        let mut censored = false;
        let mut l0 = 0.0;
        let mut l_prev = 0.0;
        let mut a_prev = 0.0;
        for k in 0..k_max {
            let noise: f64 = rng.sample(StandardNormal);
            let l = if k == 0 {
                cfg.alpha0 + cfg.alpha1 + noise
            } else {
                cfg.alpha0 * l0 + cfg.alpha1 * l_prev + cfg.alpha2 * a_prev + noise
            };
            if k == 0 {
                l0 = l;
            }
            let p = if k == 0 { expit(-3.0 + l) } else { expit(-3.0 + l + cfg.pi1 * a_prev) };
            let a = if bernoulli(rng, p) { 1.0 } else { 0.0 };
            covariates[k] = vec![l];
            treatments[k] = a;
            treatment_prob[i * k_max + k] = p;
            if let (Some(model), Some(c)) = (cfg.censoring, censoring.as_mut()) {
                let pc = expit(model.intercept + model.l_coef * l + model.a_coef * a);
                censoring_prob.as_mut().expect("allocated with the model")[i * k_max + k] = pc;
                if bernoulli(rng, pc) {
                    c[k..].iter_mut().for_each(|v| *v = 1);
                    censored = true;
                    break;
                }
                c[k] = 0;
            }
            l_prev = l;
            a_prev = a;
        }
        let y = if censored {
            f64::NAN
        } else {
            let l3 = l_prev;
            let a3 = a_prev;
            let noise: f64 = rng.sample(StandardNormal);
            cfg.delta0 * l0 + cfg.delta1 * l3 + cfg.delta2 * a3 + cfg.delta3 * a3 * l3 + noise
        };
        records.push(SubjectRecord {
            id: i as u64 + 1,
            baseline: Vec::new(),
            covariates,
            treatments,
            censoring,
            outcome: SubjectOutcome::Continuous(y),
        });
    }
    let panel = LongPanel::from_records(k_max, &records).expect("generator emits well-shaped records");
    debug_assert!(panel.validate().is_empty());
    let truth = TruthRecord {
        estimand: cfg.theta(),
        m_star: cfg.m_star(),
        horizon: k_max,
        treatment_prob,
        censoring_prob,
    };
    (panel, truth)
}

pub fn generate_survival(cfg: &SurvivalDgpConfig) -> (LongPanel, TruthRecord) {
    generate_survival_with(cfg, &mut replication_rng(cfg.seed, 0))
}

pub fn generate_survival_with<R: Rng + ?Sized>(cfg: &SurvivalDgpConfig, rng: &mut R) -> (LongPanel, TruthRecord) {
    let k_max = cfg.horizon;
    let mut records = Vec::with_capacity(cfg.n);
    let mut treatment_prob = vec![f64::NAN; cfg.n * k_max];
    let mut censoring_prob = vec![f64::NAN; cfg.n * k_max];
    for i in 0..cfg.n {
        let mut covariates = vec![vec![f64::NAN]; k_max];
        let mut treatments = vec![f64::NAN; k_max];
        let mut censoring = vec![MISSING; k_max];
        let mut events = vec![MISSING; k_max];
        let mut a_prev = 0.0;
        for k in 0..k_max {
            let l = if bernoulli(rng, expit(-0.5 * a_prev)) { 1.0 } else { 0.0 };
            let p = expit(-4.0 + 2.0 * l + 5.0 * a_prev);
            let a = if bernoulli(rng, p) { 1.0 } else { 0.0 };
            covariates[k] = vec![l];
            treatments[k] = a;
            treatment_prob[i * k_max + k] = p;
            let pc = expit(-6.5 + 4.0 * l - 4.0 * a);
            censoring_prob[i * k_max + k] = pc;
            if bernoulli(rng, pc) {
                censoring[k..].iter_mut().for_each(|v| *v = 1);
                break;
            }
            censoring[k] = 0;
            let py = expit(-6.5 + l - 0.5 * a - 0.25 * a_prev);
            if bernoulli(rng, py) {
                events[k..].iter_mut().for_each(|v| *v = 1);
                break;
            }
            events[k] = 0;
            a_prev = a;
        }
        records.push(SubjectRecord {
            id: i as u64 + 1,
            baseline: Vec::new(),
            covariates,
            treatments,
            censoring: Some(censoring),
            outcome: SubjectOutcome::Events(events),
        });
    }
    let panel = LongPanel::from_records(k_max, &records).expect("generator emits well-shaped records");
    debug_assert!(panel.validate().is_empty());
    let truth = TruthRecord {
        estimand: SURVIVAL_ETA,
        m_star: 2,
        horizon: k_max,
        treatment_prob,
        censoring_prob: Some(censoring_prob),
    };
    (panel, truth)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario_estimands() {
        assert_eq!(NormalDgpConfig::scenario1(1, 0).theta(), 4.0);
        assert_eq!(NormalDgpConfig::scenario2(1, 0).theta(), 3.0);
        assert_eq!(NormalDgpConfig::scenario3(1, 0).theta(), 3.0);
        let mut c = NormalDgpConfig::scenario1(1, 0);
        c.alpha2 = 0.0;
        c.delta3 = 0.0;
        assert_eq!(c.theta(), c.delta2);
        assert_eq!(c.m_star(), 1);
    }

    #[test]
    fn normal_panels_validate() {
        for seed in 0..100 {
            let (p, _) = generate_normal(&NormalDgpConfig::scenario1(50, seed));
            assert!(p.validate().is_empty());
        }
    }

    #[test]
    fn censored_normal_panels_validate() {
        let mut cfg = NormalDgpConfig::scenario1(500, 3);
        cfg.censoring = Some(CensoringModel { intercept: -3.0, l_coef: 0.5, a_coef: -0.5 });
        let (p, truth) = generate_normal(&cfg);
        assert!(p.validate().is_empty());
        assert!((0..p.n()).any(|i| !p.uncensored_at_end(i)));
        assert!(truth.censoring_prob.is_some());
    }

    #[test]
    fn survival_is_deterministic_per_seed() {
        let cfg = SurvivalDgpConfig::new(200, 11);
        let (a, _) = generate_survival(&cfg);
        let (b, _) = generate_survival(&cfg);
        assert_eq!(a, b);
        let (c, _) = generate_survival(&SurvivalDgpConfig::new(200, 12));
        assert_ne!(a, c);
    }

    #[test]
    fn unknown_preset_is_rejected() {
        assert!(Scenario::preset("s9", 10, 0).is_err());
        assert!(Scenario::preset("surv", 10, 0).unwrap().is_survival());
    }
}
