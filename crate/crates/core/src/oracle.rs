//! Ground truth for validation.
//!
//! [`EnumerableSpec`] describes a small discrete process (binary covariate and
//! treatment, `K ≤ 3`) whose full joint distribution can be listed row by
//! row. [`exact_limits`] evaluates the population versions of the weighted
//! contrasts on such a table by direct summation, and the causal contrasts by
//! the g-formula, so that every identity between them can be checked to
//! rounding error. [`mc_truth`] covers the case where enumeration is not
//! feasible by evaluating an estimator once on a very large draw.

use crate::dgp::{generate_normal, NormalDgpConfig};
use crate::error::{Error, Result};
use crate::estimate::{Analysis, ModelForm};
use crate::ipw::{WeightKind, WeightModelSpec};
use serde::Serialize;
use std::collections::HashMap;

/// Largest horizon whose joint distribution is enumerated (`2^(2K)` rows).
pub const MAX_ENUMERABLE_HORIZON: usize = 3;

/// Smallest draw accepted by [`mc_truth`].
pub const MC_TRUTH_MIN_N: usize = 1_000_000;

/// Conditional probabilities indexed `[k][previous covariate][previous treatment]`.
pub type TransitionTable = Vec<[[f64; 2]; 2]>;

/// Discrete process over `(L(0), A(0), ..., L(K−1), A(K−1))` with
///
/// * `P[L(k)=1 | L(k−1)=l, A(k−1)=a] = covariate_prob[k][l][a]`,
/// * `P[A(k)=1 | L(k)=l, A(k−1)=a] = treatment_prob[k][l][a]`,
/// * `E[Y | L̄, Ā] = ψ0 + Σ_j ψ_j A(K−j) + Σ_k γ_k (L(k) − P[L(k)=1 | L(k−1), A(k−1)])`,
///
/// where `L(−1) = A(−1) = 0`. Centring each covariate term on its conditional
/// mean makes `E[Y^ā] = ψ0 + Σ_j ψ_j a(K−j)` hold exactly for every regime.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnumerableSpec {
    pub horizon: usize,
    pub covariate_prob: TransitionTable,
    pub treatment_prob: TransitionTable,
    /// `ψ_0, ψ_1, ..., ψ_K`.
    pub psi: Vec<f64>,
    /// `γ_0, ..., γ_{K−1}`.
    pub gamma: Vec<f64>,
}

/// Logistic parameterisation `expit(intercept + first·x + second·z)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Logit {
    pub intercept: f64,
    pub first: f64,
    pub second: f64,
}

impl Logit {
    pub fn new(intercept: f64, first: f64, second: f64) -> Self {
        Self { intercept, first, second }
    }

    fn table(&self, horizon: usize) -> TransitionTable {
        let p = |x: usize, z: usize| crate::glm::expit(self.intercept + self.first * x as f64 + self.second * z as f64);
        (0..horizon).map(|_| [[p(0, 0), p(0, 1)], [p(1, 0), p(1, 1)]]).collect()
    }
}

impl EnumerableSpec {
    /// Builds the transition tables from logistic models:
    /// covariate `(L(k−1), A(k−1))` and treatment `(L(k), A(k−1))`.
    pub fn from_logits(horizon: usize, covariate: Logit, treatment: Logit, psi: Vec<f64>, gamma: Vec<f64>) -> Self {
        Self {
            horizon,
            covariate_prob: covariate.table(horizon),
            treatment_prob: treatment.table(horizon),
            psi,
            gamma,
        }
    }

    /// Marginal-model coefficients: `θ^(K) = Σ_j ψ_j`.
    pub fn theta(&self) -> f64 {
        self.psi.iter().skip(1).sum()
    }

    fn check(&self) -> Result<()> {
        let k = self.horizon;
        if k == 0 || k > MAX_ENUMERABLE_HORIZON {
            return Err(Error::StateSpace(format!(
                "K = {k} gives 2^{} paths; enumeration supports 1 <= K <= {MAX_ENUMERABLE_HORIZON}",
                2 * k
            )));
        }
        if self.covariate_prob.len() != k || self.treatment_prob.len() != k {
            return Err(Error::InvalidArgument(format!("transition tables need {k} time points")));
        }
        if self.psi.len() != k + 1 || self.gamma.len() != k {
            return Err(Error::InvalidArgument(format!("need {} ψ and {k} γ coefficients", k + 1)));
        }
        let all = self.covariate_prob.iter().chain(&self.treatment_prob).flatten().flatten();
        if all.clone().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidArgument("transition probabilities must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// One path of the joint distribution.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TableRow {
    pub covariates: Vec<u8>,
    pub treatments: Vec<u8>,
    pub mass: f64,
    /// `E[Y | L̄, Ā]` on this path.
    pub mean_outcome: f64,
}

/// Exact joint distribution of `(L̄, Ā)` with the conditional outcome mean attached.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProbabilityTable {
    pub horizon: usize,
    pub rows: Vec<TableRow>,
}

impl ProbabilityTable {
    pub fn total_mass(&self) -> f64 {
        self.rows.iter().map(|r| r.mass).sum()
    }
}

/// Lists every path of `spec` with its probability.
///
/// Fails when a reachable history assigns treatment deterministically.
pub fn enumerable_dgp(spec: &EnumerableSpec) -> Result<ProbabilityTable> {
    spec.check()?;
    let k_total = spec.horizon;
    let mut rows = Vec::with_capacity(1 << (2 * k_total));
    for code in 0..(1usize << (2 * k_total)) {
        let bit = |pos: usize| ((code >> pos) & 1) as u8;
        let covariates: Vec<u8> = (0..k_total).map(|k| bit(2 * k)).collect();
        let treatments: Vec<u8> = (0..k_total).map(|k| bit(2 * k + 1)).collect();
        let mut mass = 1.0;
        let mut mean_outcome = spec.psi[0];
        for k in 0..k_total {
            let (l_prev, a_prev) = if k == 0 { (0, 0) } else { (covariates[k - 1] as usize, treatments[k - 1] as usize) };
            let pl = spec.covariate_prob[k][l_prev][a_prev];
            let l = covariates[k];
            mean_outcome += spec.gamma[k] * (l as f64 - pl);
            mass *= if l == 1 { pl } else { 1.0 - pl };
            let pa = spec.treatment_prob[k][l as usize][a_prev];
            if mass > 0.0 && !(pa > 0.0 && pa < 1.0) {
                return Err(Error::Positivity(format!(
                    "P[A({k}) = 1 | L({k}) = {l}, A({}) = {a_prev}] = {pa} on a reachable history",
                    k as i64 - 1
                )));
            }
            mass *= if treatments[k] == 1 { pa } else { 1.0 - pa };
        }
        for j in 1..=k_total {
            mean_outcome += spec.psi[j] * treatments[k_total - j] as f64;
        }
        rows.push(TableRow { covariates, treatments, mass, mean_outcome });
    }
    Ok(ProbabilityTable { horizon: k_total, rows })
}

/// Population limits of the estimators at window `m`, plus the causal targets.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExactLimits {
    pub m: usize,
    /// `E[Y^{1_K}] − E[Y^{0_K}]` by the g-formula.
    pub theta_k: f64,
    /// `E[Y^{Ā(K−m−1), 1_m}] − E[Y^{Ā(K−m−1), 0_m}]` by the g-formula.
    pub theta_m: f64,
    pub sw: f64,
    pub rsw: f64,
    pub psw: f64,
    /// `q_j` for `j = m+1, ..., K` (index `j − m − 1`).
    pub q: Vec<f64>,
}

/// Marginal probabilities of prefixes of the path `L(0), A(0), L(1), ...`.
struct PrefixMass {
    mass: HashMap<Vec<u8>, f64>,
}

impl PrefixMass {
    fn new(table: &ProbabilityTable) -> Self {
        let mut mass = HashMap::new();
        for row in &table.rows {
            let path = interleave(row);
            for len in 0..=path.len() {
                *mass.entry(path[..len].to_vec()).or_insert(0.0) += row.mass;
            }
        }
        Self { mass }
    }

    fn get(&self, prefix: &[u8]) -> f64 {
        self.mass.get(prefix).copied().unwrap_or(0.0)
    }

    /// `P[next element = path[len−1] | path[..len−1]]`, or `None` when the
    /// conditioning prefix has no mass.
    fn conditional(&self, path: &[u8], len: usize) -> Option<f64> {
        let below = self.get(&path[..len - 1]);
        (below > 0.0).then(|| self.get(&path[..len]) / below)
    }
}

fn interleave(row: &TableRow) -> Vec<u8> {
    row.covariates.iter().zip(&row.treatments).flat_map(|(l, a)| [*l, *a]).collect()
}

/// `P[A(k) = a_k | A(s..k−1) = a_{s..k−1}]` by summation over the table.
fn window_conditional(table: &ProbabilityTable, treatments: &[u8], s: usize, k: usize) -> f64 {
    let matches = |r: &TableRow, upto: usize| r.treatments[s..upto] == treatments[s..upto];
    let num: f64 = table.rows.iter().filter(|r| matches(r, k + 1)).map(|r| r.mass).sum();
    let den: f64 = table.rows.iter().filter(|r| matches(r, k)).map(|r| r.mass).sum();
    num / den
}

fn check_positivity(table: &ProbabilityTable, prefixes: &PrefixMass) -> Result<()> {
    for row in table.rows.iter().filter(|r| r.mass > 0.0) {
        let path = interleave(row);
        for k in 0..table.horizon {
            let mut flipped = path[..2 * k + 2].to_vec();
            flipped[2 * k + 1] ^= 1;
            if prefixes.get(&flipped) <= 0.0 {
                return Err(Error::Positivity(format!(
                    "A({k}) = {} has zero probability given a reachable history",
                    flipped[2 * k + 1]
                )));
            }
        }
    }
    Ok(())
}

/// `E[Y^{Ā(s−1), a_{K−s}}]` with the first `s` treatments left at their natural
/// values: `Σ Π f(l_k | past) Π_{k<s} f(a_k | past) E[Y | l̄, ā]`.
fn g_formula(table: &ProbabilityTable, prefixes: &PrefixMass, s: usize, a: u8) -> Result<f64> {
    let mut total = 0.0;
    for row in table.rows.iter().filter(|r| r.treatments[s..].iter().all(|x| *x == a)) {
        let path = interleave(row);
        let mut product = 1.0;
        for k in 0..table.horizon {
            let factors: &[usize] = if k < s { &[2 * k + 1, 2 * k + 2] } else { &[2 * k + 1] };
            for &len in factors {
                if product == 0.0 {
                    break;
                }
                product *= prefixes
                    .conditional(&path, len)
                    .ok_or_else(|| Error::Positivity(format!("intervened history through time {k} has zero probability")))?;
            }
        }
        total += product * row.mean_outcome;
    }
    Ok(total)
}

/// `E[I(window = 1)WY]/E[I(window = 1)W] − E[I(window = 0)WY]/E[I(window = 0)W]`.
fn weighted_contrast(table: &ProbabilityTable, m: usize, weight: impl Fn(&TableRow) -> f64) -> f64 {
    let k_total = table.horizon;
    let arm = |a: u8| {
        let (num, den) = table
            .rows
            .iter()
            .filter(|r| r.mass > 0.0 && r.treatments[k_total - m..].iter().all(|x| *x == a))
            .fold((0.0, 0.0), |(n, d), r| {
                let w = r.mass * weight(r);
                (n + w * r.mean_outcome, d + w)
            });
        num / den
    };
    arm(1) - arm(0)
}

/// `q_j = P[A(K−j)=1 | last m treated] − P[A(K−j)=1 | last m untreated]`, `j = m+1..K`.
pub fn q_values(table: &ProbabilityTable, m: usize) -> Vec<f64> {
    let k_total = table.horizon;
    let conditional = |j: usize, a: u8| {
        let window = |r: &&TableRow| r.treatments[k_total - m..].iter().all(|x| *x == a);
        let den: f64 = table.rows.iter().filter(window).map(|r| r.mass).sum();
        let num: f64 = table.rows.iter().filter(window).filter(|r| r.treatments[k_total - j] == 1).map(|r| r.mass).sum();
        num / den
    };
    (m + 1..=k_total).map(|j| conditional(j, 1) - conditional(j, 0)).collect()
}

/// Population limits of the SW, RSW and PSW contrasts at window `m` on an
/// enumerated distribution, with `θ^(K)` and `θ^(m)` from the g-formula.
pub fn exact_limits(table: &ProbabilityTable, m: usize) -> Result<ExactLimits> {
    let k_total = table.horizon;
    if m == 0 || m > k_total {
        return Err(Error::InvalidArgument(format!("window m = {m} outside 1..={k_total}")));
    }
    let prefixes = PrefixMass::new(table);
    check_positivity(table, &prefixes)?;
    let start = k_total - m;

    // Ratio f[A(k) | numerator history] / f[A(k) | L̄(k), Ā(k−1)] at time k.
    let factor = |row: &TableRow, k: usize, numerator_start: usize| {
        let path = interleave(row);
        let denominator = prefixes.conditional(&path, 2 * k + 2).expect("row has positive mass");
        window_conditional(table, &row.treatments, numerator_start, k) / denominator
    };
    let sw = weighted_contrast(table, m, |r| (0..k_total).map(|k| factor(r, k, 0)).product());
    let rsw = weighted_contrast(table, m, |r| (start..k_total).map(|k| factor(r, k, start)).product());
    let psw = weighted_contrast(table, m, |r| (start..k_total).map(|k| factor(r, k, 0)).product());

    let theta_k = g_formula(table, &prefixes, 0, 1)? - g_formula(table, &prefixes, 0, 0)?;
    let theta_m = g_formula(table, &prefixes, start, 1)? - g_formula(table, &prefixes, start, 0)?;
    Ok(ExactLimits { m, theta_k, theta_m, sw, rsw, psw, q: q_values(table, m) })
}

/// Large-sample limit of an estimator with its Monte-Carlo standard error.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct McTruth {
    pub value: f64,
    pub se: f64,
    pub n: usize,
}

/// Evaluates the contrast estimator of `kind` at window `m` once on a single
/// draw of `n_huge` subjects from `cfg`, using the generating treatment
/// probabilities as denominators.
pub fn mc_truth(cfg: &NormalDgpConfig, m: usize, kind: WeightKind, form: ModelForm, n_huge: usize) -> Result<McTruth> {
    if n_huge < MC_TRUTH_MIN_N {
        return Err(Error::InvalidArgument(format!("n_huge = {n_huge} is below {MC_TRUTH_MIN_N}")));
    }
    let cfg = NormalDgpConfig { n: n_huge, ..cfg.clone() };
    let (panel, truth) = generate_normal(&cfg);
    let spec = WeightModelSpec::for_horizon(panel.horizon());
    let analysis = Analysis::with_truth(&panel, &spec, form, &truth)?;
    let e = analysis.estimate(kind, m)?;
    Ok(McTruth { value: e.estimate, se: e.se(), n: n_huge })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn confounded(horizon: usize) -> EnumerableSpec {
        let mut psi = vec![1.0];
        psi.extend((1..=horizon).map(|j| 1.0 / j as f64));
        EnumerableSpec::from_logits(
            horizon,
            Logit::new(-0.2, 0.8, 0.0),
            Logit::new(-0.5, 1.2, 1.5),
            psi,
            vec![0.7; horizon],
        )
    }

    #[test]
    fn table_is_normalised() {
        let t = enumerable_dgp(&confounded(2)).unwrap();
        assert_eq!(t.rows.len(), 16);
        assert_relative_eq!(t.total_mass(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn large_horizon_is_rejected() {
        assert!(matches!(enumerable_dgp(&confounded(4)), Err(Error::StateSpace(_))));
    }

    #[test]
    fn deterministic_treatment_is_a_positivity_error() {
        let mut spec = confounded(2);
        spec.treatment_prob[1][1][0] = 1.0;
        let err = enumerable_dgp(&spec).unwrap_err();
        assert!(matches!(err, Error::Positivity(_)));
        assert!(err.to_string().contains("positivity"));
    }

    #[test]
    fn zero_mass_treatment_in_a_table_is_a_positivity_error() {
        let mut t = enumerable_dgp(&confounded(2)).unwrap();
        for r in t.rows.iter_mut().filter(|r| r.treatments[0] == 1 && r.covariates[0] == 0) {
            r.mass = 0.0;
        }
        assert!(matches!(exact_limits(&t, 1), Err(Error::Positivity(_))));
    }

    #[test]
    fn g_formula_recovers_the_marginal_model() {
        for k in 1..=3 {
            let spec = confounded(k);
            let lim = exact_limits(&enumerable_dgp(&spec).unwrap(), k).unwrap();
            assert_relative_eq!(lim.theta_k, spec.theta(), epsilon = 1e-12);
        }
    }

    #[test]
    fn unconfounded_limits_coincide() {
        // Covariates do not affect treatment, so every weight is one.
        let mut spec = confounded(3);
        spec.treatment_prob = Logit::new(-0.3, 0.0, 1.0).table(3);
        let t = enumerable_dgp(&spec).unwrap();
        for m in 1..=3 {
            let lim = exact_limits(&t, m).unwrap();
            let sum: f64 = spec.psi[1..=m].iter().sum();
            assert_relative_eq!(lim.rsw, lim.theta_m, epsilon = 1e-12);
            assert_relative_eq!(lim.rsw, sum, epsilon = 1e-12);
            assert_relative_eq!(lim.sw, lim.psw, epsilon = 1e-12);
        }
    }

    #[test]
    fn mc_truth_needs_a_huge_draw() {
        assert!(mc_truth(&NormalDgpConfig::scenario1(10, 0), 2, WeightKind::Sw, ModelForm::Saturated, 10).is_err());
    }

    #[test]
    fn sw_rsw_difference_identity() {
        let spec = confounded(3);
        let t = enumerable_dgp(&spec).unwrap();
        for m in 1..=3 {
            let lim = exact_limits(&t, m).unwrap();
            let rhs: f64 = lim.q.iter().enumerate().map(|(i, q)| spec.psi[m + 1 + i] * q).sum();
            assert_relative_eq!(lim.sw - lim.rsw, rhs, epsilon = 1e-10);
            assert!(lim.rsw <= lim.sw + 1e-12 && lim.sw <= lim.theta_k + 1e-12);
        }
    }
}
