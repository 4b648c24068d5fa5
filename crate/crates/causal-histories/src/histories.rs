//! History spaces, branch-tree enumeration, chain vectors, Born weights,
//! the decoherence functional, and structural checks.
//!
//! A [`HistorySpace`] is a time grid t₀ < t₁ < … < t_n, one Hermitian
//! generator per interval (a single time-independent Hamiltonian in the
//! common case), one [`SampleSpace`] per time t₁…t_n, and a normalized
//! initial state ψ₀ at t₀.
//!
//! Chain vectors are computed in the Schrödinger picture,
//!
//! χ_α = P_{α_n} U(t_n, t_{n−1}) ⋯ P_{α_1} U(t_1, t₀) ψ₀,
//!
//! which differs from the Heisenberg-picture branch vector
//! ψ_α = P_{α_n}(t_n) ⋯ P_{α_1}(t_1) ψ₀ only by the common final unitary:
//! ψ_α = U(t_n, t₀)† χ_α. Every inner product, norm, weight, and derived
//! measure therefore agrees between the two pictures; the Schrödinger chain
//! needs one propagator per interval instead of one per (interval,
//! projector) pair.
//!
//! Enumeration is depth-first in projector-index order, so the output is
//! lexicographic in index sequences and bit-reproducible across runs and
//! thread counts: the parallel path splits the tree at the first slot only
//! and concatenates subtree results in order, and every sum over histories
//! anywhere in this crate runs left-to-right over that order.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::event_algebra::{coarsen, CoarseningMap, SampleSpace};
use crate::hilbert::{inner, propagator, LinearOperator, Propagator, StateVector, NORM_TOL};

/// Zero-weight tolerance used by the branching-structure check. Distinct
/// from the consistency ε, which is a physical, user-set scale: branching
/// concerns weights that vanish up to rounding.
pub const DEFAULT_ZERO_TOL: f64 = 1e-12;

/// Limits on how large an enumeration is allowed to get.
#[derive(Clone, Copy, Debug)]
pub struct ResourceCaps {
    /// Maximum number of history records materialized by one enumeration.
    pub max_records: u64,
    /// Maximum total amplitude count (records × dimension) held at once.
    pub max_amplitudes: u64,
}

impl Default for ResourceCaps {
    fn default() -> Self {
        Self { max_records: 1 << 20, max_amplitudes: 1 << 26 }
    }
}

/// A time grid, per-interval dynamics, per-time sample spaces, and an
/// initial state.
#[derive(Clone, Debug)]
pub struct HistorySpace {
    generators: Vec<LinearOperator>,
    times: Vec<f64>,
    spaces: Vec<SampleSpace>,
    initial_state: StateVector,
    propagators: Vec<Propagator>,
}

impl HistorySpace {
    /// Standard constructor: one time-independent Hamiltonian drives every
    /// interval.
    pub fn new(
        hamiltonian: LinearOperator,
        times: Vec<f64>,
        spaces: Vec<SampleSpace>,
        initial_state: StateVector,
    ) -> Result<Self> {
        let n = times.len().saturating_sub(1);
        Self::with_interval_generators(vec![hamiltonian; n.max(1)], times, spaces, initial_state)
    }

    /// Piecewise dynamics: one Hermitian generator per interval
    /// [t_{k−1}, t_k]. Needed by models whose stages are distinct
    /// interactions (e.g. a measurement followed by an observation).
    pub fn with_interval_generators(
        generators: Vec<LinearOperator>,
        times: Vec<f64>,
        spaces: Vec<SampleSpace>,
        initial_state: StateVector,
    ) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::Validation("need at least two times (t0 and t1)".into()));
        }
        if times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Validation("times must be strictly increasing".into()));
        }
        let n = times.len() - 1;
        if spaces.len() != n {
            return Err(Error::Validation(format!(
                "need one sample space per time slice: got {} for {n} slices",
                spaces.len()
            )));
        }
        if generators.len() != n {
            return Err(Error::Validation(format!(
                "need one generator per interval: got {} for {n} intervals",
                generators.len()
            )));
        }
        let dim = initial_state.dim();
        if generators.iter().any(|g| g.dim() != dim) || spaces.iter().any(|s| s.dim() != dim) {
            return Err(Error::Validation(
                "generator, sample space, and state dimensions must all agree".into(),
            ));
        }
        if !initial_state.is_normalized(NORM_TOL) {
            return Err(Error::Validation(format!(
                "initial state is not normalized: |norm - 1| = {:.3e}",
                (initial_state.norm() - 1.0).abs()
            )));
        }
        let mut propagators = Vec::with_capacity(n);
        for (k, g) in generators.iter().enumerate() {
            propagators.push(propagator(g, times[k], times[k + 1])?);
        }
        Ok(Self { generators, times, spaces, initial_state, propagators })
    }

    /// Number of time slices n (histories have one event per slice).
    pub fn steps(&self) -> usize {
        self.spaces.len()
    }

    pub fn dim(&self) -> usize {
        self.initial_state.dim()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn spaces(&self) -> &[SampleSpace] {
        &self.spaces
    }

    pub fn space(&self, slice: usize) -> &SampleSpace {
        &self.spaces[slice]
    }

    pub fn generators(&self) -> &[LinearOperator] {
        &self.generators
    }

    pub fn initial_state(&self) -> &StateVector {
        &self.initial_state
    }

    /// The cached propagator for interval `k` (from t_k to t_{k+1}).
    pub fn interval_propagator(&self, k: usize) -> &Propagator {
        &self.propagators[k]
    }

    /// U(t_n, t₀) as the ordered product of the interval propagators.
    pub fn full_propagator(&self) -> LinearOperator {
        let mut u = self.propagators[0].unitary().clone();
        for p in &self.propagators[1..] {
            u = p.unitary().compose(&u).expect("dimensions agree by construction");
        }
        u
    }

    /// Total number of branches K₁·K₂⋯K_n of the full tree.
    pub fn branch_count(&self) -> u128 {
        self.spaces.iter().map(|s| s.len() as u128).product()
    }

    /// Renders an index sequence as its label path, e.g. `0>1>0`.
    pub fn label_string(&self, indices: &[usize]) -> String {
        indices
            .iter()
            .enumerate()
            .map(|(k, &i)| self.spaces[k].label(i))
            .collect::<Vec<_>>()
            .join(">")
    }

    /// Chain vector for a label sequence (one label per time slice).
    pub fn chain_vector(&self, labels: &[&str]) -> Result<StateVector> {
        if labels.len() != self.steps() {
            return Err(Error::Usage(format!(
                "expected {} labels, got {}",
                self.steps(),
                labels.len()
            )));
        }
        let indices = labels
            .iter()
            .enumerate()
            .map(|(k, l)| {
                self.spaces[k]
                    .index_of(l)
                    .ok_or_else(|| Error::Usage(format!("unknown label {l} at slice {k}")))
            })
            .collect::<Result<Vec<_>>>()?;
        self.chain_vector_by_indices(&indices)
    }

    /// Chain vector for a projector-index sequence.
    pub fn chain_vector_by_indices(&self, indices: &[usize]) -> Result<StateVector> {
        if indices.len() != self.steps() {
            return Err(Error::Usage(format!(
                "expected {} indices, got {}",
                self.steps(),
                indices.len()
            )));
        }
        let mut v = self.initial_state.clone();
        for (k, &idx) in indices.iter().enumerate() {
            if idx >= self.spaces[k].len() {
                return Err(Error::Usage(format!("index {idx} out of range at slice {k}")));
            }
            v = self.propagators[k].unitary().apply(&v)?;
            v = self.spaces[k].projector(idx).apply(&v)?;
        }
        Ok(v)
    }

    /// Full or pruned enumeration with default caps, sequential.
    pub fn enumerate(&self, prune_below: f64) -> Result<Vec<HistoryRecord>> {
        Ok(self
            .enumerate_audited(prune_below, &ResourceCaps::default(), 1)?
            .records)
    }

    /// Enumeration with an explicit audit of what pruning discarded.
    ///
    /// A branch is pruned as soon as its partial chain-vector norm² drops
    /// strictly below `prune_below`; with `prune_below = 0` the full
    /// K₁⋯K_n tree is returned. `threads > 1` splits the first slot across
    /// a local thread pool; results are identical to the sequential order.
    pub fn enumerate_audited(
        &self,
        prune_below: f64,
        caps: &ResourceCaps,
        threads: usize,
    ) -> Result<EnumerationOutcome> {
        if prune_below < 0.0 {
            return Err(Error::Usage("prune_below must be >= 0".into()));
        }
        self.check_upfront_caps(prune_below, caps)?;
        let collected = self.collect(prune_below, caps, threads, false)?;
        let records = collected.levels.into_iter().last().unwrap_or_default();
        Ok(EnumerationOutcome {
            records,
            pruned_subtrees: collected.pruned_subtrees,
            pruned_norm_sum: collected.pruned_norm_sum,
            prune_bound: self.branch_count() as f64 * prune_below,
        })
    }

    /// Enumeration keeping every depth level of the tree (depth k holds the
    /// partial histories (α₁…α_k)); used for stepwise causality.
    pub fn enumerate_tree(&self, prune_below: f64, caps: &ResourceCaps) -> Result<EnumerationTree> {
        if prune_below < 0.0 {
            return Err(Error::Usage("prune_below must be >= 0".into()));
        }
        self.check_upfront_caps(prune_below, caps)?;
        let collected = self.collect(prune_below, caps, 1, true)?;
        Ok(EnumerationTree { levels: collected.levels })
    }

    fn check_upfront_caps(&self, prune_below: f64, caps: &ResourceCaps) -> Result<()> {
        if prune_below == 0.0 {
            let count = self.branch_count();
            if count > caps.max_records as u128 {
                return Err(Error::ResourceCap {
                    what: format!("full enumeration of {count} histories"),
                    cap: caps.max_records,
                });
            }
            let amplitudes = count * self.dim() as u128;
            if amplitudes > caps.max_amplitudes as u128 {
                return Err(Error::ResourceCap {
                    what: format!("{amplitudes} amplitudes ({count} histories × dim {})", self.dim()),
                    cap: caps.max_amplitudes,
                });
            }
        }
        Ok(())
    }

    fn collect(
        &self,
        prune_below: f64,
        caps: &ResourceCaps,
        threads: usize,
        keep_levels: bool,
    ) -> Result<Collected> {
        let n = self.steps();
        let first = self.propagators[0].unitary().apply(&self.initial_state)?;
        let k0 = self.spaces[0].len();

        let run_subtree = |root_idx: usize| -> Result<Collected> {
            let mut acc = Collected::new(n);
            let child = self.spaces[0].projector(root_idx).apply(&first)?;
            let mut prefix = vec![root_idx];
            self.dfs(1, child, &mut prefix, prune_below, caps, keep_levels, &mut acc)?;
            Ok(acc)
        };

        let subtree_results: Vec<Result<Collected>> = if threads > 1 {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| Error::Usage(format!("could not build thread pool: {e}")))?;
            pool.install(|| (0..k0).into_par_iter().map(run_subtree).collect())
        } else {
            (0..k0).map(run_subtree).collect()
        };

        let mut merged = Collected::new(n);
        for sub in subtree_results {
            let sub = sub?;
            for (level, records) in sub.levels.into_iter().enumerate() {
                merged.levels[level].extend(records);
            }
            merged.pruned_subtrees += sub.pruned_subtrees;
            merged.pruned_norm_sum += sub.pruned_norm_sum;
        }
        let total: u64 = merged.levels.last().map(|l| l.len() as u64).unwrap_or(0);
        if total > caps.max_records {
            return Err(Error::ResourceCap {
                what: format!("enumeration materialized more than {} records", caps.max_records),
                cap: caps.max_records,
            });
        }
        Ok(merged)
    }

    fn dfs(
        &self,
        depth: usize,
        partial: StateVector,
        prefix: &mut Vec<usize>,
        prune_below: f64,
        caps: &ResourceCaps,
        keep_levels: bool,
        acc: &mut Collected,
    ) -> Result<()> {
        // strict comparison: prune_below = 0 prunes nothing
        if partial.norm_squared() < prune_below {
            acc.pruned_subtrees += 1;
            acc.pruned_norm_sum += partial.norm_squared();
            return Ok(());
        }
        let n = self.steps();
        let at_leaf = depth == n;
        if keep_levels || at_leaf {
            let level = &mut acc.levels[depth - 1];
            if at_leaf && level.len() as u64 >= caps.max_records {
                return Err(Error::ResourceCap {
                    what: "pruned enumeration still exceeded the record cap".into(),
                    cap: caps.max_records,
                });
            }
            level.push(HistoryRecord::new(prefix.clone(), partial.clone()));
        }
        if at_leaf {
            return Ok(());
        }
        let evolved = self.propagators[depth].unitary().apply(&partial)?;
        for idx in 0..self.spaces[depth].len() {
            let child = self.spaces[depth].projector(idx).apply(&evolved)?;
            prefix.push(idx);
            self.dfs(depth + 1, child, prefix, prune_below, caps, keep_levels, acc)?;
            prefix.pop();
        }
        Ok(())
    }
}

struct Collected {
    levels: Vec<Vec<HistoryRecord>>,
    pruned_subtrees: usize,
    pruned_norm_sum: f64,
}

impl Collected {
    fn new(n: usize) -> Self {
        Self { levels: vec![Vec::new(); n], pruned_subtrees: 0, pruned_norm_sum: 0.0 }
    }
}

/// One enumerated history: its index sequence, Schrödinger-picture chain
/// vector, and Born weight w_α = ‖χ_α‖².
#[derive(Clone, Debug)]
pub struct HistoryRecord {
    indices: Vec<usize>,
    chain_vector: StateVector,
    weight: f64,
}

impl HistoryRecord {
    pub fn new(indices: Vec<usize>, chain_vector: StateVector) -> Self {
        let weight = chain_vector.norm_squared();
        Self { indices, chain_vector, weight }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn chain_vector(&self) -> &StateVector {
        &self.chain_vector
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    /// The final-slice index α_n.
    pub fn final_index(&self) -> usize {
        *self.indices.last().expect("records have at least one slice")
    }
}

/// Born weight of a history record.
pub fn born_weight(record: &HistoryRecord) -> f64 {
    record.weight()
}

/// Result of an audited enumeration.
#[derive(Clone, Debug)]
pub struct EnumerationOutcome {
    pub records: Vec<HistoryRecord>,
    /// Number of subtrees cut by the prune threshold.
    pub pruned_subtrees: usize,
    /// Sum of partial norm² over the cut points; an upper bound on the
    /// total chain weight the discarded subtrees could have carried.
    pub pruned_norm_sum: f64,
    /// The a-priori bound K₁⋯K_n · prune_below on discarded weight.
    pub prune_bound: f64,
}

/// All depth levels of an enumeration; `levels[k-1]` holds the length-k
/// partial histories in lexicographic order.
#[derive(Clone, Debug)]
pub struct EnumerationTree {
    pub levels: Vec<Vec<HistoryRecord>>,
}

impl EnumerationTree {
    /// The full-length records (last level).
    pub fn full_records(&self) -> &[HistoryRecord] {
        self.levels.last().map(|l| l.as_slice()).unwrap_or(&[])
    }
}

/// The decoherence functional D(α, β) = ⟨χ_α∣χ_β⟩ over a set of histories.
/// Hermitian by construction; its diagonal is the Born weights.
#[derive(Clone, Debug)]
pub struct DecoherenceMatrix {
    entries: DMatrix<C64>,
    labels: Vec<Vec<usize>>,
}

/// Builds the decoherence matrix of a record set. All records must have the
/// same length (come from one enumeration).
pub fn decoherence_matrix(records: &[HistoryRecord]) -> Result<DecoherenceMatrix> {
    if records.is_empty() {
        return Err(Error::Usage("cannot build a decoherence matrix of zero histories".into()));
    }
    let n = records[0].len();
    if records.iter().any(|r| r.len() != n) {
        return Err(Error::Usage("records have mixed history lengths".into()));
    }
    let m = records.len();
    let mut entries = DMatrix::<C64>::zeros(m, m);
    for a in 0..m {
        for b in a..m {
            let d = inner(records[a].chain_vector(), records[b].chain_vector())?;
            entries[(a, b)] = d;
            if a != b {
                entries[(b, a)] = d.conj();
            }
        }
    }
    Ok(DecoherenceMatrix {
        entries,
        labels: records.iter().map(|r| r.indices().to_vec()).collect(),
    })
}

impl DecoherenceMatrix {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn entry(&self, a: usize, b: usize) -> C64 {
        self.entries[(a, b)]
    }

    pub fn labels(&self) -> &[Vec<usize>] {
        &self.labels
    }

    /// Diagonal (the Born weights).
    pub fn weights(&self) -> Vec<f64> {
        (0..self.len()).map(|a| self.entries[(a, a)].re).collect()
    }

    /// Smallest eigenvalue; a Gram matrix must have it ≥ 0 up to rounding.
    pub fn min_eigenvalue(&self) -> f64 {
        let eig = nalgebra::linalg::SymmetricEigen::new(self.entries.clone());
        eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Result of a consistency check.
#[derive(Clone, Debug)]
pub struct ConsistencyReport {
    pub consistent: bool,
    pub max_offdiag: f64,
    /// Index sequences of the pair attaining the maximum.
    pub worst_pair: Option<(Vec<usize>, Vec<usize>)>,
}

/// Checks ∣D(α, β)∣ ≤ ε for all α ≠ β (the full consistency condition).
pub fn consistency_check(d: &DecoherenceMatrix, epsilon: f64) -> ConsistencyReport {
    consistency_scan(d, epsilon, |z| z.norm())
}

/// The weaker real-part-only variant Re D(α, β) = 0, which suffices for
/// weight additivity but is known to misbehave for composite systems; off
/// by default everywhere, provided for comparison.
pub fn consistency_check_real_part(d: &DecoherenceMatrix, epsilon: f64) -> ConsistencyReport {
    consistency_scan(d, epsilon, |z| z.re.abs())
}

fn consistency_scan(
    d: &DecoherenceMatrix,
    epsilon: f64,
    magnitude: impl Fn(C64) -> f64,
) -> ConsistencyReport {
    let mut max_offdiag = 0.0f64;
    let mut worst_pair = None;
    for a in 0..d.len() {
        for b in (a + 1)..d.len() {
            let m = magnitude(d.entry(a, b));
            if m > max_offdiag {
                max_offdiag = m;
                worst_pair = Some((d.labels()[a].clone(), d.labels()[b].clone()));
            }
        }
    }
    ConsistencyReport { consistent: max_offdiag <= epsilon, max_offdiag, worst_pair }
}

/// Residuals of coarse-graining additivity.
#[derive(Clone, Debug)]
pub struct AdditivityReport {
    /// max over coarse histories of ∣w_ᾱ − Σ_{α∈ᾱ} w_α∣; vanishes only
    /// under consistency.
    pub max_weight_residual: f64,
    /// max over coarse histories of ‖χ_ᾱ − Σ_{α∈ᾱ} χ_α‖; an algebraic
    /// identity, so this should sit at rounding level regardless of
    /// consistency.
    pub max_vector_residual: f64,
    /// Per-coarse-history (indices, weight residual, vector residual).
    pub per_history: Vec<(Vec<usize>, f64, f64)>,
}

/// Verifies χ_ᾱ = Σ_{α∈ᾱ} χ_α and measures the weight additivity defect
/// for the coarse space obtained by applying `maps[k]` at slice k.
///
/// `records_fine` must be the full enumeration of `space`.
pub fn additivity_check(
    space: &HistorySpace,
    maps: &[CoarseningMap],
    records_fine: &[HistoryRecord],
) -> Result<AdditivityReport> {
    if maps.len() != space.steps() {
        return Err(Error::Usage(format!(
            "need one coarsening map per slice: got {} for {}",
            maps.len(),
            space.steps()
        )));
    }
    let coarse_spaces = space
        .spaces()
        .iter()
        .zip(maps)
        .map(|(s, m)| coarsen(s, m))
        .collect::<Result<Vec<_>>>()?;
    let coarse = HistorySpace::with_interval_generators(
        space.generators().to_vec(),
        space.times().to_vec(),
        coarse_spaces,
        space.initial_state().clone(),
    )?;
    // fine index -> coarse group position, per slice
    let mut group_of: Vec<Vec<usize>> = Vec::with_capacity(space.steps());
    for (k, m) in maps.iter().enumerate() {
        let fine_space = space.space(k);
        let mut slot = vec![usize::MAX; fine_space.len()];
        for (fi, label) in fine_space.labels().iter().enumerate() {
            slot[fi] = m
                .group_of(label)
                .ok_or_else(|| Error::Usage(format!("label {label} missing from map {k}")))?;
        }
        group_of.push(slot);
    }

    let coarse_records = coarse.enumerate(0.0)?;
    let mut per_history = Vec::with_capacity(coarse_records.len());
    let mut max_weight = 0.0f64;
    let mut max_vector = 0.0f64;
    for cr in &coarse_records {
        let mut sum_vec = StateVector::zero(space.dim())?;
        let mut sum_weight = 0.0f64;
        for fr in records_fine {
            let belongs = fr
                .indices()
                .iter()
                .enumerate()
                .all(|(k, &fi)| group_of[k][fi] == cr.indices()[k]);
            if belongs {
                sum_vec = sum_vec.add(fr.chain_vector())?;
                sum_weight += fr.weight();
            }
        }
        let vector_residual = cr.chain_vector().sub(&sum_vec)?.norm();
        let weight_residual = (cr.weight() - sum_weight).abs();
        max_weight = max_weight.max(weight_residual);
        max_vector = max_vector.max(vector_residual);
        per_history.push((cr.indices().to_vec(), weight_residual, vector_residual));
    }
    Ok(AdditivityReport {
        max_weight_residual: max_weight,
        max_vector_residual: max_vector,
        per_history,
    })
}

/// A pair of histories that diverge and later re-merge with both weights
/// above the zero tolerance. Slots are 1-based (slot k is time t_k).
#[derive(Clone, Debug)]
pub struct BranchingViolation {
    pub first: Vec<usize>,
    pub second: Vec<usize>,
    pub diverge_slot: usize,
    pub merge_slot: usize,
}

/// Result of the branching-structure check.
#[derive(Clone, Debug)]
pub struct BranchingReport {
    pub branching: bool,
    pub violations: Vec<BranchingViolation>,
}

/// Checks that histories never re-merge after diverging unless one of them
/// has (numerically) zero weight. Expects the full enumeration; a pruned
/// set can produce false positives by hiding the zero-weight partner.
pub fn branching_structure_check(records: &[HistoryRecord], zero_tol: f64) -> BranchingReport {
    let mut violations = Vec::new();
    for a in 0..records.len() {
        if records[a].weight() <= zero_tol {
            continue;
        }
        for b in (a + 1)..records.len() {
            if records[b].weight() <= zero_tol {
                continue;
            }
            let (ia, ib) = (records[a].indices(), records[b].indices());
            if ia.len() != ib.len() {
                continue;
            }
            let diverge = ia.iter().zip(ib).position(|(x, y)| x != y);
            if let Some(i) = diverge {
                let merge = (i + 1..ia.len()).find(|&j| ia[j] == ib[j]);
                if let Some(j) = merge {
                    violations.push(BranchingViolation {
                        first: ia.to_vec(),
                        second: ib.to_vec(),
                        diverge_slot: i + 1,
                        merge_slot: j + 1,
                    });
                }
            }
        }
    }
    BranchingReport { branching: violations.is_empty(), violations }
}

/// Both sides of the global interference identity
/// 1 − Σ_α w_α = Σ_{α≠β} D(α, β), which holds exactly (it is the Gram
/// expansion of ‖U(t_n, t₀)ψ₀‖² = 1) on any full enumeration.
#[derive(Clone, Copy, Debug)]
pub struct WeightSumIdentity {
    pub weight_sum: f64,
    pub offdiag_sum: C64,
}

impl WeightSumIdentity {
    /// ∣(1 − Σw) − Σ_{α≠β}D∣.
    pub fn residual(&self) -> f64 {
        (C64::new(1.0 - self.weight_sum, 0.0) - self.offdiag_sum).norm()
    }
}

/// Evaluates both sides of the weight-sum identity from a full enumeration
/// and its decoherence matrix.
pub fn weight_sum_identity(
    records: &[HistoryRecord],
    d: &DecoherenceMatrix,
) -> Result<WeightSumIdentity> {
    if records.len() != d.len() {
        return Err(Error::Usage("record set and decoherence matrix differ in size".into()));
    }
    let mut weight_sum = 0.0f64;
    for r in records {
        weight_sum += r.weight();
    }
    let mut offdiag_sum = C64::ZERO;
    for a in 0..d.len() {
        for b in 0..d.len() {
            if a != b {
                offdiag_sum += d.entry(a, b);
            }
        }
    }
    Ok(WeightSumIdentity { weight_sum, offdiag_sum })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event_algebra::{cell_projectors, CellPartition};
    use crate::hilbert::LinearOperator;

    fn qubit_cells() -> SampleSpace {
        cell_projectors(&CellPartition::new(2, vec![vec![0], vec![1]]).unwrap()).unwrap()
    }

    fn sigma_x() -> LinearOperator {
        LinearOperator::from_rows(&[
            vec![C64::ZERO, C64::ONE],
            vec![C64::ONE, C64::ZERO],
        ])
        .unwrap()
    }

    /// The two-step σ_x model: H = σ_x, t = (0, π/4, π/2), ψ₀ = ∣0⟩,
    /// sharp cells {0},{1} at both times.
    fn sigma_x_space() -> HistorySpace {
        HistorySpace::new(
            sigma_x(),
            vec![0.0, std::f64::consts::FRAC_PI_4, std::f64::consts::FRAC_PI_2],
            vec![qubit_cells(), qubit_cells()],
            StateVector::basis_state(2, 0).unwrap(),
        )
        .unwrap()
    }

    /// Closed-form oracle for the σ_x model: U(Δt) is a 2×2 rotation
    /// cos Δt · 1 − i sin Δt · σ_x, applied and projected by hand.
    fn sigma_x_oracle() -> Vec<(Vec<usize>, [C64; 2])> {
        let c = std::f64::consts::FRAC_PI_4.cos();
        let s = std::f64::consts::FRAC_PI_4.sin();
        let u = |v: [C64; 2]| {
            [
                C64::new(c, 0.0) * v[0] + C64::new(0.0, -s) * v[1],
                C64::new(0.0, -s) * v[0] + C64::new(c, 0.0) * v[1],
            ]
        };
        let project = |v: [C64; 2], idx: usize| {
            let mut w = [C64::ZERO; 2];
            w[idx] = v[idx];
            w
        };
        let psi0 = [C64::ONE, C64::ZERO];
        let mut out = Vec::new();
        for a in 0..2usize {
            for b in 0..2usize {
                let chain = project(u(project(u(psi0), a)), b);
                out.push((vec![a, b], chain));
            }
        }
        out
    }

    #[test]
    fn chain_vector_single_step_projection() {
        let psi0 = StateVector::from_real(&[0.96f64.sqrt(), 0.2]).unwrap();
        let space = HistorySpace::new(
            LinearOperator::zeros(2),
            vec![0.0, 1.0],
            vec![qubit_cells()],
            psi0,
        )
        .unwrap();
        let chain0 = space.chain_vector(&["0"]).unwrap();
        assert!((chain0.amplitude(0).re - 0.96f64.sqrt()).abs() < 1e-15);
        assert_eq!(chain0.amplitude(1), C64::ZERO);
        let chain1 = space.chain_vector(&["1"]).unwrap();
        assert_eq!(chain1.amplitude(0), C64::ZERO);
        assert!((chain1.amplitude(1).re - 0.2).abs() < 1e-15);
        // Born weights: |c_i|²
        assert!((chain0.norm_squared() - 0.96).abs() < 1e-12);
        assert!((chain1.norm_squared() - 0.04).abs() < 1e-12);
        assert!(space.chain_vector(&["x"]).is_err());
    }

    #[test]
    fn static_orthogonal_branches_never_cross() {
        let psi0 = StateVector::from_real(&[0.6, 0.8]).unwrap();
        let space = HistorySpace::new(
            LinearOperator::zeros(2),
            vec![0.0, 1.0, 2.0],
            vec![qubit_cells(), qubit_cells()],
            psi0,
        )
        .unwrap();
        for a in 0..2 {
            for b in 0..2 {
                let chain = space.chain_vector_by_indices(&[a, b]).unwrap();
                if a != b {
                    assert_eq!(chain.norm(), 0.0);
                }
            }
        }
    }

    #[test]
    fn sigma_x_chain_vectors_match_closed_form() {
        let space = sigma_x_space();
        for (indices, expected) in sigma_x_oracle() {
            let chain = space.chain_vector_by_indices(&indices).unwrap();
            for i in 0..2 {
                assert!(
                    (chain.amplitude(i) - expected[i]).norm() < 1e-12,
                    "indices {indices:?} amplitude {i}: {} vs {}",
                    chain.amplitude(i),
                    expected[i]
                );
            }
        }
        // the frozen value from the closed form: w_(0,0) = cos²(π/4)·cos²(π/4)
        let w00 = space.chain_vector_by_indices(&[0, 0]).unwrap().norm_squared();
        assert!((w00 - 0.25).abs() < 1e-12);
    }

    #[test]
    fn full_coarse_history_has_weight_one() {
        let all = SampleSpace::exact(
            vec![LinearOperator::identity(2)],
            vec!["all".into()],
        )
        .unwrap();
        let space = HistorySpace::new(
            sigma_x(),
            vec![0.0, 0.3, 0.9],
            vec![all.clone(), all],
            StateVector::basis_state(2, 0).unwrap(),
        )
        .unwrap();
        let records = space.enumerate(0.0).unwrap();
        assert_eq!(records.len(), 1);
        assert!((records[0].weight() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn enumerate_full_tree_size_and_telescoping() {
        let space = HistorySpace::new(
            sigma_x(),
            vec![0.0, 0.4, 0.9, 1.7],
            vec![qubit_cells(), qubit_cells(), qubit_cells()],
            StateVector::basis_state(2, 0).unwrap(),
        )
        .unwrap();
        let records = space.enumerate(0.0).unwrap();
        assert_eq!(records.len(), 8);
        // ΣP = 1 telescopes: Σ_α χ_α = U(t_n, t0) ψ0
        let mut sum = StateVector::zero(2).unwrap();
        for r in &records {
            sum = sum.add(r.chain_vector()).unwrap();
        }
        let evolved = space.full_propagator().apply(space.initial_state()).unwrap();
        assert!(sum.sub(&evolved).unwrap().norm() <= 1e-9);
    }

    #[test]
    fn pruned_enumeration_agrees_with_full_above_threshold() {
        let space = sigma_x_space();
        let full = space.enumerate(0.0).unwrap();
        let outcome = space
            .enumerate_audited(1e-12, &ResourceCaps::default(), 1)
            .unwrap();
        let surviving: Vec<_> = full.iter().filter(|r| r.weight() >= 1e-12).collect();
        assert_eq!(outcome.records.len(), surviving.len());
        for (p, f) in outcome.records.iter().zip(surviving) {
            assert_eq!(p.indices(), f.indices());
            // bitwise identical chain vectors: same operation order
            for i in 0..2 {
                assert_eq!(p.chain_vector().amplitude(i), f.chain_vector().amplitude(i));
            }
        }
        let discarded: f64 = full
            .iter()
            .filter(|r| r.weight() < 1e-12)
            .map(|r| r.weight())
            .sum();
        assert!(discarded <= outcome.prune_bound);
    }

    #[test]
    fn enumeration_is_identical_across_thread_counts() {
        let space = HistorySpace::new(
            sigma_x(),
            vec![0.0, 0.4, 0.9, 1.7],
            vec![qubit_cells(), qubit_cells(), qubit_cells()],
            StateVector::basis_state(2, 0).unwrap(),
        )
        .unwrap();
        let seq = space.enumerate_audited(0.0, &ResourceCaps::default(), 1).unwrap();
        for threads in [2, 4] {
            let par = space.enumerate_audited(0.0, &ResourceCaps::default(), threads).unwrap();
            assert_eq!(seq.records.len(), par.records.len());
            for (a, b) in seq.records.iter().zip(&par.records) {
                assert_eq!(a.indices(), b.indices());
                for i in 0..2 {
                    assert_eq!(a.chain_vector().amplitude(i), b.chain_vector().amplitude(i));
                }
            }
        }
    }

    #[test]
    fn resource_cap_refusal_names_the_cap() {
        let space = HistorySpace::new(
            sigma_x(),
            vec![0.0, 0.4, 0.9, 1.7],
            vec![qubit_cells(), qubit_cells(), qubit_cells()],
            StateVector::basis_state(2, 0).unwrap(),
        )
        .unwrap();
        let caps = ResourceCaps { max_records: 4, max_amplitudes: 1 << 20 };
        match space.enumerate_audited(0.0, &caps, 1) {
            Err(Error::ResourceCap { cap, .. }) => assert_eq!(cap, 4),
            other => panic!("expected resource cap refusal, got {other:?}"),
        }
    }

    #[test]
    fn decoherence_matrix_examples() {
        // H = 0, exact cells: diagonal matrix
        let psi0 = StateVector::from_real(&[0.6, 0.8]).unwrap();
        let space = HistorySpace::new(
            LinearOperator::zeros(2),
            vec![0.0, 1.0, 2.0],
            vec![qubit_cells(), qubit_cells()],
            psi0,
        )
        .unwrap();
        let records = space.enumerate(0.0).unwrap();
        let d = decoherence_matrix(&records).unwrap();
        for a in 0..d.len() {
            for b in 0..d.len() {
                if a != b {
                    assert_eq!(d.entry(a, b), C64::ZERO);
                }
            }
        }

        // single record: 1×1 matrix [w]
        let single = decoherence_matrix(&records[..1]).unwrap();
        assert_eq!(single.len(), 1);
        assert!((single.entry(0, 0).re - records[0].weight()).abs() < 1e-15);

        // σ_x model off-diagonals from the closed form: D((0,0),(1,0)) = −1/4
        let space = sigma_x_space();
        let records = space.enumerate(0.0).unwrap();
        let d = decoherence_matrix(&records).unwrap();
        let idx =
            |seq: &[usize]| records.iter().position(|r| r.indices() == seq).unwrap();
        let d_00_10 = d.entry(idx(&[0, 0]), idx(&[1, 0]));
        assert!((d_00_10 - C64::new(-0.25, 0.0)).norm() < 1e-12);
        let d_01_11 = d.entry(idx(&[0, 1]), idx(&[1, 1]));
        assert!((d_01_11 - C64::new(0.25, 0.0)).norm() < 1e-12);
        // diagonal equals weights
        for (i, r) in records.iter().enumerate() {
            assert!((d.entry(i, i).re - r.weight()).abs() <= 1e-12 * r.weight().max(1.0));
            assert!(d.entry(i, i).im.abs() < 1e-15);
        }
        assert!(d.min_eigenvalue() >= -1e-9);
    }

    #[test]
    fn consistency_check_examples() {
        let psi0 = StateVector::from_real(&[0.6, 0.8]).unwrap();
        let static_space = HistorySpace::new(
            LinearOperator::zeros(2),
            vec![0.0, 1.0, 2.0],
            vec![qubit_cells(), qubit_cells()],
            psi0,
        )
        .unwrap();
        let d = decoherence_matrix(&static_space.enumerate(0.0).unwrap()).unwrap();
        let report = consistency_check(&d, 1e-12);
        assert!(report.consistent);
        assert_eq!(report.max_offdiag, 0.0);

        let space = sigma_x_space();
        let d = decoherence_matrix(&space.enumerate(0.0).unwrap()).unwrap();
        let report = consistency_check(&d, 1e-3);
        assert!(!report.consistent);
        assert!((report.max_offdiag - 0.25).abs() < 1e-12);
        let (a, b) = report.worst_pair.unwrap();
        assert_eq!((a, b), (vec![0, 0], vec![1, 0]));
    }

    #[test]
    fn additivity_identity_and_residuals() {
        let space = sigma_x_space();
        let records = space.enumerate(0.0).unwrap();

        // identity maps: both residuals vanish
        let id_maps = vec![
            CoarseningMap::identity(space.space(0).labels()),
            CoarseningMap::identity(space.space(1).labels()),
        ];
        let report = additivity_check(&space, &id_maps, &records).unwrap();
        assert!(report.max_weight_residual <= 1e-12);
        assert!(report.max_vector_residual <= 1e-12);

        // merge both cells at t1: weight residual equals 2·Re D(α, β) within
        // each final cell, while the vector identity still holds
        let maps = vec![
            CoarseningMap::merge_all(space.space(0).labels(), "01"),
            CoarseningMap::identity(space.space(1).labels()),
        ];
        let report = additivity_check(&space, &maps, &records).unwrap();
        assert!(report.max_vector_residual <= 1e-9);
        let d = decoherence_matrix(&records).unwrap();
        let idx = |seq: &[usize]| records.iter().position(|r| r.indices() == seq).unwrap();
        for (coarse_indices, weight_res, _) in &report.per_history {
            let beta = coarse_indices[1];
            let cross = d.entry(idx(&[0, beta]), idx(&[1, beta]));
            assert!(
                (weight_res - (2.0 * cross.re).abs()).abs() < 1e-12,
                "residual {weight_res} vs 2ReD {}",
                2.0 * cross.re
            );
        }
        assert!((report.max_weight_residual - 0.5).abs() < 1e-12);
    }

    #[test]
    fn branching_structure_examples() {
        // H = 0: all re-merging histories have zero weight
        let psi0 = StateVector::from_real(&[0.6, 0.8]).unwrap();
        let static_space = HistorySpace::new(
            LinearOperator::zeros(2),
            vec![0.0, 1.0, 2.0],
            vec![qubit_cells(), qubit_cells()],
            psi0,
        )
        .unwrap();
        let report =
            branching_structure_check(&static_space.enumerate(0.0).unwrap(), DEFAULT_ZERO_TOL);
        assert!(report.branching);

        // σ_x: weights are all 1/4, merging pairs exist
        let space = sigma_x_space();
        let report = branching_structure_check(&space.enumerate(0.0).unwrap(), DEFAULT_ZERO_TOL);
        assert!(!report.branching);
        assert!(report.violations.iter().any(|v| {
            v.first == vec![0, 0] && v.second == vec![1, 0] && v.diverge_slot == 1 && v.merge_slot == 2
        }));

        // single-time spaces are vacuously branching
        let single = HistorySpace::new(
            sigma_x(),
            vec![0.0, 0.9],
            vec![qubit_cells()],
            StateVector::basis_state(2, 0).unwrap(),
        )
        .unwrap();
        let report = branching_structure_check(&single.enumerate(0.0).unwrap(), DEFAULT_ZERO_TOL);
        assert!(report.branching);
    }

    #[test]
    fn weight_sum_identity_examples() {
        // consistent space: weight sum 1, off-diagonal sum 0
        let psi0 = StateVector::from_real(&[0.6, 0.8]).unwrap();
        let static_space = HistorySpace::new(
            LinearOperator::zeros(2),
            vec![0.0, 1.0],
            vec![qubit_cells()],
            psi0,
        )
        .unwrap();
        let records = static_space.enumerate(0.0).unwrap();
        let d = decoherence_matrix(&records).unwrap();
        let id = weight_sum_identity(&records, &d).unwrap();
        assert!((id.weight_sum - 1.0).abs() < 1e-12);
        assert!(id.offdiag_sum.norm() < 1e-12);
        assert!(id.residual() <= 1e-12);

        // σ_x model: both sides agree to rounding
        let space = sigma_x_space();
        let records = space.enumerate(0.0).unwrap();
        let d = decoherence_matrix(&records).unwrap();
        let id = weight_sum_identity(&records, &d).unwrap();
        assert!(id.residual() <= 1e-12);
    }

    #[test]
    fn mixed_length_records_are_rejected() {
        let space = sigma_x_space();
        let mut records = space.enumerate(0.0).unwrap();
        let single = HistorySpace::new(
            sigma_x(),
            vec![0.0, 0.9],
            vec![qubit_cells()],
            StateVector::basis_state(2, 0).unwrap(),
        )
        .unwrap();
        records.extend(single.enumerate(0.0).unwrap());
        assert!(matches!(decoherence_matrix(&records), Err(Error::Usage(_))));
    }
}
