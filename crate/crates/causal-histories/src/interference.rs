//! Interference measures I₁–I₄ and causal classification of histories.
//!
//! All four measures compare the other histories arriving in the target's
//! final cell Σ_{α_n} against the target's own chain vector χ_α. Writing
//! S_α = Σ_{α̃: α̃_n = α_n} χ_α̃ for the final-cell slice (which equals the
//! Schrödinger-picture image of P_{α_n}(t_n)ψ₀ on a full enumeration):
//!
//! - I₁ = Σ_{α̃≠α, α̃_n=α_n} ‖χ_α̃‖ / ‖χ_α‖   — total competitor magnitude;
//! - I₂ = ‖S_α − χ_α‖ / ‖χ_α‖               — net competitor vector;
//! - I₃ = Σ_{α̃≠α, α̃_n=α_n} ∣⟨χ_α̃, χ_α⟩∣ / ‖χ_α‖² — overlap with target only;
//! - I₄ = ∣⟨S_α − χ_α, χ_α⟩∣ / ‖χ_α‖²        — net overlap with target.
//!
//! The chain I₄ ≤ I₃ ≤ I₁ and I₄ ≤ I₂ ≤ I₁ holds by the triangle and
//! Cauchy–Schwarz inequalities; [`inequality_audit`] re-verifies it on any
//! report. I₁/I₃ can overcount competitors that cancel among themselves;
//! I₂/I₄ are ambiguous under exact cancellation (two competitors ±χ_α leave
//! I₂ = I₄ = 0 while I₁ = I₃ = 2). No measure is endorsed here: all four are
//! always computed, and the classifying measure and threshold are explicit,
//! caller-visible choices.
//!
//! Histories with ‖χ_α‖ below [`ZERO_NORM_TOL`] have no defined measures
//! (the denominators vanish); they are routed to an `undefined` set and are
//! neither causal nor non-causal.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::histories::{EnumerationTree, HistoryRecord};
use crate::hilbert::{inner, StateVector};

/// Chain-vector norm below which a history's measures are undefined.
pub const ZERO_NORM_TOL: f64 = 1e-14;

/// Which interference measure classifies histories.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Measure {
    I1,
    I2,
    I3,
    I4,
}

impl std::fmt::Display for Measure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Measure::I1 => write!(f, "i1"),
            Measure::I2 => write!(f, "i2"),
            Measure::I3 => write!(f, "i3"),
            Measure::I4 => write!(f, "i4"),
        }
    }
}

impl std::str::FromStr for Measure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "i1" => Ok(Measure::I1),
            "i2" => Ok(Measure::I2),
            "i3" => Ok(Measure::I3),
            "i4" => Ok(Measure::I4),
            other => Err(Error::Usage(format!("unknown measure {other}, expected i1..i4"))),
        }
    }
}

/// The four measure values for one history.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct MeasureSet {
    pub i1: f64,
    pub i2: f64,
    pub i3: f64,
    pub i4: f64,
}

impl MeasureSet {
    pub fn get(&self, measure: Measure) -> f64 {
        match measure {
            Measure::I1 => self.i1,
            Measure::I2 => self.i2,
            Measure::I3 => self.i3,
            Measure::I4 => self.i4,
        }
    }
}

/// Computes I₁–I₄ for `records[target]` against the complete record set.
///
/// Returns `None` when the target chain vector is numerically zero.
/// `records` must be a complete (unpruned) enumeration for the final-cell
/// slice identity to hold; zero-weight branches contribute nothing, so a
/// set pruned only at exactly-zero norm gives identical values.
pub fn interference_measures(
    records: &[HistoryRecord],
    target: usize,
) -> Result<Option<MeasureSet>> {
    if target >= records.len() {
        return Err(Error::Usage(format!(
            "target {target} out of range for {} records",
            records.len()
        )));
    }
    let n = records[target].len();
    if records.iter().any(|r| r.len() != n) {
        return Err(Error::Usage("records have mixed history lengths".into()));
    }
    let target_record = &records[target];
    let norm = target_record.chain_vector().norm();
    if norm <= ZERO_NORM_TOL {
        return Ok(None);
    }
    let norm_sq = target_record.chain_vector().norm_squared();
    let final_index = target_record.final_index();

    let mut competitor_norm_sum = 0.0f64;
    let mut competitor_overlap_sum = 0.0f64;
    let mut slice = StateVector::zero(target_record.chain_vector().dim())?;
    for (i, r) in records.iter().enumerate() {
        if r.final_index() != final_index {
            continue;
        }
        slice = slice.add(r.chain_vector())?;
        if i != target {
            competitor_norm_sum += r.chain_vector().norm();
            competitor_overlap_sum += inner(r.chain_vector(), target_record.chain_vector())?.norm();
        }
    }
    let net = slice.sub(target_record.chain_vector())?;
    Ok(Some(MeasureSet {
        i1: competitor_norm_sum / norm,
        i2: net.norm() / norm,
        i3: competitor_overlap_sum / norm_sq,
        i4: inner(&net, target_record.chain_vector())?.norm() / norm_sq,
    }))
}

/// Per-history entry of an [`InterferenceReport`].
#[derive(Clone, Debug)]
pub struct HistoryInterference {
    pub indices: Vec<usize>,
    pub weight: f64,
    /// `None` for zero-norm (undefined) histories.
    pub measures: Option<MeasureSet>,
}

/// Classification of every history in an enumeration.
///
/// The three sets hold positions into `entries` and partition them.
#[derive(Clone, Debug)]
pub struct InterferenceReport {
    pub entries: Vec<HistoryInterference>,
    pub measure_used: Measure,
    pub threshold: f64,
    pub causal_set: Vec<usize>,
    pub noncausal_set: Vec<usize>,
    pub undefined_set: Vec<usize>,
}

/// Computes all four measures for every history and classifies each as
/// causal iff the chosen measure is ≤ `threshold`.
pub fn classify_causal(
    records: &[HistoryRecord],
    measure: Measure,
    threshold: f64,
) -> Result<InterferenceReport> {
    if threshold < 0.0 {
        return Err(Error::Usage("threshold must be >= 0".into()));
    }
    let mut entries = Vec::with_capacity(records.len());
    let mut causal_set = Vec::new();
    let mut noncausal_set = Vec::new();
    let mut undefined_set = Vec::new();
    for (i, r) in records.iter().enumerate() {
        let measures = interference_measures(records, i)?;
        match &measures {
            None => undefined_set.push(i),
            Some(m) => {
                if m.get(measure) <= threshold {
                    causal_set.push(i);
                } else {
                    noncausal_set.push(i);
                }
            }
        }
        entries.push(HistoryInterference {
            indices: r.indices().to_vec(),
            weight: r.weight(),
            measures,
        });
    }
    Ok(InterferenceReport {
        entries,
        measure_used: measure,
        threshold,
        causal_set,
        noncausal_set,
        undefined_set,
    })
}

/// Stepwise classification of one full history.
#[derive(Clone, Debug)]
pub struct StepwiseEntry {
    pub indices: Vec<usize>,
    /// The chosen measure evaluated on each prefix (α₁…α_k), k = 1…n;
    /// `None` where the prefix is zero-norm.
    pub prefix_values: Vec<Option<f64>>,
    /// True iff every prefix is defined and passes the threshold.
    pub step_causal: bool,
    /// First prefix length that failed (or was undefined), if any.
    pub first_failing_len: Option<usize>,
}

/// Result of [`stepwise_causality`].
#[derive(Clone, Debug)]
pub struct StepwiseReport {
    pub entries: Vec<StepwiseEntry>,
    pub measure_used: Measure,
    pub threshold: f64,
}

/// Evaluates the chosen measure on every prefix of every full history,
/// using the length-k level of the enumeration tree as the competitor set
/// at step k. A history is step-causal iff all its prefixes pass.
pub fn stepwise_causality(
    tree: &EnumerationTree,
    measure: Measure,
    threshold: f64,
) -> Result<StepwiseReport> {
    if threshold < 0.0 {
        return Err(Error::Usage("threshold must be >= 0".into()));
    }
    // classify each level once, then look prefixes up per full history
    let mut level_values: Vec<Vec<Option<f64>>> = Vec::with_capacity(tree.levels.len());
    for level in &tree.levels {
        let mut values = Vec::with_capacity(level.len());
        for i in 0..level.len() {
            values.push(interference_measures(level, i)?.map(|m| m.get(measure)));
        }
        level_values.push(values);
    }
    let mut entries = Vec::new();
    for full in tree.full_records() {
        let mut prefix_values = Vec::with_capacity(full.len());
        let mut first_failing_len = None;
        for k in 1..=full.len() {
            let prefix = &full.indices()[..k];
            let level = &tree.levels[k - 1];
            let pos = level
                .binary_search_by(|r| r.indices().cmp(prefix))
                .map_err(|_| Error::Usage(format!("prefix {prefix:?} missing from level {k}")))?;
            let value = level_values[k - 1][pos];
            let pass = matches!(value, Some(v) if v <= threshold);
            if !pass && first_failing_len.is_none() {
                first_failing_len = Some(k);
            }
            prefix_values.push(value);
        }
        entries.push(StepwiseEntry {
            indices: full.indices().to_vec(),
            prefix_values,
            step_causal: first_failing_len.is_none(),
            first_failing_len,
        });
    }
    Ok(StepwiseReport { entries, measure_used: measure, threshold })
}

/// Result of an inequality audit.
#[derive(Clone, Debug)]
pub struct InequalityAudit {
    pub pass: bool,
    /// Largest violation of any of i3 ≤ i1, i4 ≤ i2, i2 ≤ i1, i4 ≤ i3
    /// (negative when all inequalities hold with room to spare).
    pub worst_slack: f64,
    pub worst_history: Option<Vec<usize>>,
}

/// Audits the measure inequality chain on every defined history of a
/// report, allowing 1e−9 slack.
pub fn inequality_audit(report: &InterferenceReport) -> InequalityAudit {
    const SLACK: f64 = 1e-9;
    let mut worst_slack = f64::NEG_INFINITY;
    let mut worst_history = None;
    for entry in &report.entries {
        let Some(m) = &entry.measures else { continue };
        let violation = [m.i3 - m.i1, m.i4 - m.i2, m.i2 - m.i1, m.i4 - m.i3]
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max);
        if violation > worst_slack {
            worst_slack = violation;
            worst_history = Some(entry.indices.clone());
        }
    }
    if worst_slack == f64::NEG_INFINITY {
        // no defined histories: nothing to violate
        return InequalityAudit { pass: true, worst_slack: 0.0, worst_history: None };
    }
    InequalityAudit { pass: worst_slack <= SLACK, worst_slack, worst_history }
}
