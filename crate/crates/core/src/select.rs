//! Closed testing procedures for the history window `m`.
//!
//! Tests run in ascending `m`, comparing SW with RSW (`ztest`) or PSW with
//! RSW (`pztest`), and stop at the first non-rejection. When every tested
//! window rejects, the maximum window is returned without testing it.

use crate::error::{Error, Result};
use crate::estimate::Analysis;
use crate::infer::{pair_test, PairTest};
use crate::ipw::WeightKind;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::fmt::Write as _;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// SW versus RSW.
    Ztest,
    /// PSW versus RSW.
    Pztest,
}

impl Variant {
    /// Weight kind compared against RSW.
    pub fn lead(self) -> WeightKind {
        match self {
            Variant::Ztest => WeightKind::Sw,
            Variant::Pztest => WeightKind::Psw,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Ztest => "ztest",
            Variant::Pztest => "pztest",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub variant: Variant,
    pub alpha: f64,
    pub selected_m: usize,
    pub start_m: usize,
    pub max_m: usize,
    /// Tests in ascending `m`; all but the last are rejections.
    pub path: Vec<PairTest>,
}

/// Machine-readable path entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathEntry {
    pub m: usize,
    pub d: f64,
    pub p: f64,
    pub rejected: bool,
}

/// JSON schema `{variant, alpha, selected_m, path: [{m, d, p, rejected}]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionJson {
    pub variant: Variant,
    pub alpha: f64,
    pub selected_m: usize,
    pub path: Vec<PathEntry>,
}

impl SelectionResult {
    pub fn to_json(&self) -> SelectionJson {
        SelectionJson {
            variant: self.variant,
            alpha: self.alpha,
            selected_m: self.selected_m,
            path: self
                .path
                .iter()
                .map(|t| PathEntry { m: t.m, d: t.statistic, p: t.p_value, rejected: t.rejected })
                .collect(),
        }
    }

    /// Checks the path invariant: consecutive windows from `start_m`, every
    /// entry but the last rejected, and the last accepted unless the maximum
    /// window was returned.
    pub fn is_consistent(&self) -> bool {
        let ascending = self.path.iter().enumerate().all(|(j, t)| t.m == self.start_m + j);
        let prefix_rejected = self.path.iter().rev().skip(1).all(|t| t.rejected);
        let tail_ok = match self.path.last() {
            Some(last) if !last.rejected => last.m == self.selected_m,
            Some(last) => self.selected_m == self.max_m && last.m + 1 == self.max_m,
            None => self.selected_m == self.max_m && self.start_m >= self.max_m,
        };
        ascending && prefix_rejected && tail_ok
    }
}

/// Runs the closed testing procedure for windows `start_m..max_m`.
pub fn closed_test_select(
    analysis: &Analysis<'_>,
    alpha: f64,
    variant: Variant,
    start_m: usize,
    max_m: usize,
) -> Result<SelectionResult> {
    if start_m == 0 || start_m > max_m || max_m > analysis.horizon() {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= start_m ({start_m}) <= max_m ({max_m}) <= K ({})",
            analysis.horizon()
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha = {alpha} outside (0, 1)")));
    }
    let mut path = Vec::new();
    for m in start_m..max_m {
        let test = (|| {
            let lead = analysis.estimate(variant.lead(), m)?;
            let rsw = analysis.estimate(WeightKind::Rsw, m)?;
            pair_test(&lead, &rsw, alpha)
        })()
        .map_err(|e| Error::Selection { m, source: Box::new(e) })?;
        let rejected = test.rejected;
        path.push(test);
        if !rejected {
            return Ok(SelectionResult { variant, alpha, selected_m: m, start_m, max_m, path });
        }
    }
    Ok(SelectionResult { variant, alpha, selected_m: max_m, start_m, max_m, path })
}

/// Human-readable table of the selection path.
pub fn selection_report(r: &SelectionResult) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{} (alpha = {}): selected m = {}", r.variant, r.alpha, r.selected_m);
    let _ = writeln!(out, "{:>4} {:>12} {:>12} {:>10} {:>10}", "m", "difference", "D", "p", "decision");
    for t in &r.path {
        let _ = writeln!(
            out,
            "{:>4} {:>12.5} {:>12.4} {:>10.4} {:>10}",
            t.m,
            t.difference,
            t.statistic,
            t.p_value,
            if t.rejected { "reject" } else { "accept" }
        );
    }
    if r.path.last().is_none_or(|t| t.rejected) {
        let _ = writeln!(out, "{:>4} {:>12} {:>12} {:>10} {:>10}", r.max_m, "-", "-", "-", "maximum");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimate::EstimatorKind;

    fn test_at(m: usize, rejected: bool) -> PairTest {
        PairTest {
            m,
            first: EstimatorKind::Sw,
            second: EstimatorKind::Rsw,
            difference: 0.1,
            variance: 0.01,
            statistic: if rejected { 9.0 } else { 1.0 },
            p_value: if rejected { 0.003 } else { 0.32 },
            alpha: 0.05,
            rejected,
        }
    }

    #[test]
    fn single_step_report_has_one_row() {
        let r = SelectionResult {
            variant: Variant::Ztest,
            alpha: 0.05,
            selected_m: 1,
            start_m: 1,
            max_m: 4,
            path: vec![test_at(1, false)],
        };
        assert!(r.is_consistent());
        let table = selection_report(&r);
        assert_eq!(table.lines().count(), 3);
    }

    #[test]
    fn all_rejections_return_the_maximum() {
        let r = SelectionResult {
            variant: Variant::Pztest,
            alpha: 0.2,
            selected_m: 4,
            start_m: 1,
            max_m: 4,
            path: (1..4).map(|m| test_at(m, true)).collect(),
        };
        assert!(r.is_consistent());
        let back: SelectionJson = serde_json::from_str(&serde_json::to_string(&r.to_json()).unwrap()).unwrap();
        assert_eq!(back, r.to_json());
        assert!(selection_report(&r).lines().count() <= 2 + 4);
    }
}
