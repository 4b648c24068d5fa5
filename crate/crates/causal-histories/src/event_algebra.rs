//! Quantum sample spaces and the Boolean algebra of events.
//!
//! A sample space is an ordered family {P_α} of projectors decomposing the
//! identity: ΣP_α = 1 with P_αP_β = δ_αβ P_α. The `Exact` kind enforces both
//! conditions to tolerance; the `Almost` kind admits families built from
//! non-orthogonal pointer states (wrapped Gaussians on a ring lattice), whose
//! completeness and cross-overlap defects are measured and carried along in a
//! [`DeviationRecord`] instead of being rejected — downstream code decides
//! what deviation is tolerable.

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::hilbert::{LinearOperator, StateVector, DEFAULT_TOL};

/// Whether a sample space satisfies the orthogonal-decomposition conditions
/// exactly (to tolerance) or only approximately.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpaceKind {
    Exact,
    Almost,
}

/// Measured defects of a projector family.
#[derive(Clone, Copy, Debug)]
pub struct DeviationRecord {
    /// ‖ΣP_α − 1‖_max.
    pub completeness: f64,
    /// max_{α≠β} ‖P_αP_β‖_max (0 when the family has a single member).
    pub max_cross_overlap: f64,
}

/// An ordered, labeled family of (near-)projectors decomposing the identity.
#[derive(Clone, Debug)]
pub struct SampleSpace {
    projectors: Vec<LinearOperator>,
    labels: Vec<String>,
    dim: usize,
    kind: SpaceKind,
    deviation: DeviationRecord,
}

fn measure_deviation(projectors: &[LinearOperator]) -> Result<DeviationRecord> {
    // diagonal families (cell projectors) admit exact entrywise checks,
    // skipping the cubic matrix products
    if let Some(diagonals) = all_diagonals(projectors) {
        let dim = projectors[0].dim();
        let mut completeness = 0.0f64;
        for i in 0..dim {
            let sum: C64 = diagonals.iter().map(|d| d[i]).sum();
            completeness = completeness.max((sum - C64::ONE).norm());
        }
        let mut max_cross = 0.0f64;
        for (a, da) in diagonals.iter().enumerate() {
            for db in diagonals.iter().skip(a + 1) {
                for i in 0..dim {
                    max_cross = max_cross.max((da[i] * db[i]).norm());
                }
            }
        }
        return Ok(DeviationRecord { completeness, max_cross_overlap: max_cross });
    }
    let dim = projectors[0].dim();
    let mut sum = LinearOperator::zeros(dim);
    for p in projectors {
        sum = sum.add(p)?;
    }
    let completeness = sum.sub(&LinearOperator::identity(dim))?.max_abs();
    let mut max_cross = 0.0f64;
    for (a, pa) in projectors.iter().enumerate() {
        for pb in projectors.iter().skip(a + 1) {
            max_cross = max_cross.max(pa.compose(pb)?.max_abs());
        }
    }
    Ok(DeviationRecord { completeness, max_cross_overlap: max_cross })
}

fn all_diagonals(projectors: &[LinearOperator]) -> Option<Vec<Vec<C64>>> {
    projectors.iter().map(|p| p.diagonal()).collect()
}

impl SampleSpace {
    /// Builds an exact sample space, validating hermiticity, idempotence,
    /// completeness and pairwise orthogonality at [`DEFAULT_TOL`].
    pub fn exact(projectors: Vec<LinearOperator>, labels: Vec<String>) -> Result<Self> {
        let (dim, labels) = Self::common_checks(&projectors, labels)?;
        for (p, label) in projectors.iter().zip(&labels) {
            let (hermitian_dev, idem) = match p.diagonal() {
                Some(d) => (
                    d.iter().map(|z| (z - z.conj()).norm()).fold(0.0, f64::max),
                    d.iter().map(|z| (z * z - z).norm()).fold(0.0, f64::max),
                ),
                None => (p.hermitian_deviation(), p.idempotency_deviation()),
            };
            if hermitian_dev > DEFAULT_TOL {
                return Err(Error::Validation(format!("projector {label} is not Hermitian")));
            }
            if idem > DEFAULT_TOL {
                return Err(Error::Validation(format!(
                    "projector {label} is not idempotent: deviation {idem:.3e}"
                )));
            }
        }
        let deviation = measure_deviation(&projectors)?;
        if deviation.completeness > DEFAULT_TOL {
            return Err(Error::Validation(format!(
                "projectors do not sum to identity: deviation {:.3e}",
                deviation.completeness
            )));
        }
        if deviation.max_cross_overlap > DEFAULT_TOL {
            return Err(Error::Validation(format!(
                "projectors are not pairwise orthogonal: max overlap {:.3e}",
                deviation.max_cross_overlap
            )));
        }
        Ok(Self { projectors, labels, dim, kind: SpaceKind::Exact, deviation })
    }

    /// Builds an almost-orthogonal sample space. Each member must still be
    /// Hermitian and positive semidefinite to [`DEFAULT_TOL`]; completeness
    /// and cross-overlap defects are recorded, not rejected.
    pub fn almost(projectors: Vec<LinearOperator>, labels: Vec<String>) -> Result<Self> {
        let (dim, labels) = Self::common_checks(&projectors, labels)?;
        for (p, label) in projectors.iter().zip(&labels) {
            if !p.is_hermitian(DEFAULT_TOL) {
                return Err(Error::Validation(format!("member {label} is not Hermitian")));
            }
            let min_eig = p
                .hermitian_eigenvalues(DEFAULT_TOL)?
                .first()
                .copied()
                .unwrap_or(0.0);
            if min_eig < -DEFAULT_TOL {
                return Err(Error::Validation(format!(
                    "member {label} is not positive semidefinite: min eigenvalue {min_eig:.3e}"
                )));
            }
        }
        let deviation = measure_deviation(&projectors)?;
        Ok(Self { projectors, labels, dim, kind: SpaceKind::Almost, deviation })
    }

    fn common_checks(
        projectors: &[LinearOperator],
        labels: Vec<String>,
    ) -> Result<(usize, Vec<String>)> {
        if projectors.is_empty() {
            return Err(Error::Usage("sample space needs at least one projector".into()));
        }
        let dim = projectors[0].dim();
        if projectors.iter().any(|p| p.dim() != dim) {
            return Err(Error::Usage("all projectors must share one dimension".into()));
        }
        let labels = if labels.is_empty() {
            (0..projectors.len()).map(|i| i.to_string()).collect()
        } else {
            labels
        };
        if labels.len() != projectors.len() {
            return Err(Error::Usage("label count must match projector count".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for l in &labels {
            if !seen.insert(l.clone()) {
                return Err(Error::Usage(format!("duplicate label {l}")));
            }
        }
        Ok((dim, labels))
    }

    pub fn len(&self) -> usize {
        self.projectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.projectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> SpaceKind {
        self.kind
    }

    pub fn deviation(&self) -> DeviationRecord {
        self.deviation
    }

    pub fn projectors(&self) -> &[LinearOperator] {
        &self.projectors
    }

    pub fn projector(&self, idx: usize) -> &LinearOperator {
        &self.projectors[idx]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, idx: usize) -> &str {
        &self.labels[idx]
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

/// A partition of the basis indices 0..dim into labeled, disjoint,
/// covering, nonempty cells.
#[derive(Clone, Debug)]
pub struct CellPartition {
    dim: usize,
    cells: Vec<Vec<usize>>,
    labels: Vec<String>,
}

impl CellPartition {
    pub fn new(dim: usize, cells: Vec<Vec<usize>>) -> Result<Self> {
        let labels = (0..cells.len()).map(|i| i.to_string()).collect();
        Self::with_labels(dim, cells, labels)
    }

    pub fn with_labels(dim: usize, cells: Vec<Vec<usize>>, labels: Vec<String>) -> Result<Self> {
        if cells.is_empty() {
            return Err(Error::Validation("partition needs at least one cell".into()));
        }
        if labels.len() != cells.len() {
            return Err(Error::Usage("label count must match cell count".into()));
        }
        let mut seen = vec![false; dim];
        let mut cells_sorted = Vec::with_capacity(cells.len());
        for (cell, label) in cells.iter().zip(&labels) {
            if cell.is_empty() {
                return Err(Error::Validation(format!("cell {label} is empty")));
            }
            let mut c = cell.clone();
            c.sort_unstable();
            for &i in &c {
                if i >= dim {
                    return Err(Error::Validation(format!(
                        "cell {label} contains index {i} outside 0..{dim}"
                    )));
                }
                if seen[i] {
                    return Err(Error::Validation(format!(
                        "index {i} appears in more than one cell"
                    )));
                }
                seen[i] = true;
            }
            cells_sorted.push(c);
        }
        if let Some(missing) = seen.iter().position(|&s| !s) {
            return Err(Error::Validation(format!(
                "cells do not cover the basis: index {missing} is unassigned"
            )));
        }
        Ok(Self { dim, cells: cells_sorted, labels })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cells(&self) -> &[Vec<usize>] {
        &self.cells
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

/// Sharp cell projectors: P_α is the 0/1 diagonal matrix selecting the
/// basis indices of cell Σ_α. Always yields an exact space.
pub fn cell_projectors(partition: &CellPartition) -> Result<SampleSpace> {
    let dim = partition.dim();
    let mut projectors = Vec::with_capacity(partition.len());
    for cell in partition.cells() {
        let mut diag = vec![C64::ZERO; dim];
        for &i in cell {
            diag[i] = C64::ONE;
        }
        projectors.push(LinearOperator::from_diagonal(&diag));
    }
    SampleSpace::exact(projectors, partition.labels().to_vec())
}

/// A normalized pointer state ∣π_x⟩: a wrapped Gaussian of width `sigma`
/// (in lattice units) on a ring of `lattice_size` sites, centered at
/// `center` (fractional centers allowed).
pub fn pointer_state(lattice_size: usize, sigma: f64, center: f64) -> Result<StateVector> {
    if lattice_size < 1 {
        return Err(Error::Usage("lattice must have at least one site".into()));
    }
    if sigma <= 0.0 {
        return Err(Error::Usage("pointer width must be positive".into()));
    }
    let l = lattice_size as f64;
    // enough wrap images that the neglected tail underflows f64
    let wraps = ((53.0 * sigma / l).ceil() as i64).max(1);
    let mut amplitudes = Vec::with_capacity(lattice_size);
    for y in 0..lattice_size {
        let mut a = 0.0f64;
        for m in -wraps..=wraps {
            let d = y as f64 - center + m as f64 * l;
            a += (-d * d / (4.0 * sigma * sigma)).exp();
        }
        amplitudes.push(C64::new(a, 0.0));
    }
    StateVector::new(amplitudes)?.normalize()
}

/// Pointer projectors P_α = Σ_{x∈Σ_α} ∣π_x⟩⟨π_x∣ over a cell partition of
/// the ring. The pointer states are not orthogonal, so the result is an
/// `Almost` space whose deviation record is computed here.
pub fn pointer_projectors(
    lattice_size: usize,
    width_sigma: f64,
    partition: &CellPartition,
) -> Result<SampleSpace> {
    if lattice_size < 4 {
        return Err(Error::Usage("pointer projectors need a lattice of at least 4 sites".into()));
    }
    if width_sigma <= 0.0 {
        return Err(Error::Usage("pointer width must be positive".into()));
    }
    if partition.dim() != lattice_size {
        return Err(Error::Usage(format!(
            "partition is over {} indices but the lattice has {} sites",
            partition.dim(),
            lattice_size
        )));
    }
    let states: Vec<StateVector> = (0..lattice_size)
        .map(|x| pointer_state(lattice_size, width_sigma, x as f64))
        .collect::<Result<_>>()?;
    let mut projectors = Vec::with_capacity(partition.len());
    for cell in partition.cells() {
        let mut p = LinearOperator::zeros(lattice_size);
        for &x in cell {
            p = p.add(&LinearOperator::outer(&states[x], &states[x])?)?;
        }
        projectors.push(p);
    }
    SampleSpace::almost(projectors, partition.labels().to_vec())
}

/// A grouping of fine labels into coarse labels; every fine label belongs
/// to exactly one group.
#[derive(Clone, Debug)]
pub struct CoarseningMap {
    groups: Vec<(String, Vec<String>)>,
}

impl CoarseningMap {
    pub fn new(groups: Vec<(String, Vec<String>)>) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::Usage("coarsening map needs at least one group".into()));
        }
        let mut seen_coarse = std::collections::HashSet::new();
        let mut seen_fine = std::collections::HashSet::new();
        for (coarse, fines) in &groups {
            if !seen_coarse.insert(coarse.clone()) {
                return Err(Error::Usage(format!("duplicate coarse label {coarse}")));
            }
            if fines.is_empty() {
                return Err(Error::Usage(format!("group {coarse} is empty")));
            }
            for f in fines {
                if !seen_fine.insert(f.clone()) {
                    return Err(Error::Usage(format!(
                        "fine label {f} appears in more than one group"
                    )));
                }
            }
        }
        Ok(Self { groups })
    }

    /// The map sending each label to itself.
    pub fn identity(labels: &[String]) -> Self {
        Self {
            groups: labels.iter().map(|l| (l.clone(), vec![l.clone()])).collect(),
        }
    }

    /// The map merging every label into a single coarse event.
    pub fn merge_all(labels: &[String], coarse_label: &str) -> Self {
        Self { groups: vec![(coarse_label.to_string(), labels.to_vec())] }
    }

    pub fn groups(&self) -> &[(String, Vec<String>)] {
        &self.groups
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// Position of the group containing `fine`, if any.
    pub fn group_of(&self, fine: &str) -> Option<usize> {
        self.groups.iter().position(|(_, fs)| fs.iter().any(|f| f == fine))
    }

    fn check_matches(&self, space: &SampleSpace) -> Result<()> {
        let mut count = 0usize;
        for (coarse, fines) in &self.groups {
            for f in fines {
                if space.index_of(f).is_none() {
                    return Err(Error::Usage(format!(
                        "group {coarse} references label {f} not present in the space"
                    )));
                }
                count += 1;
            }
        }
        if count != space.len() {
            return Err(Error::Usage(format!(
                "map covers {count} labels but the space has {}",
                space.len()
            )));
        }
        Ok(())
    }
}

/// Coarse-grains a sample space: P̄_ᾱ = Σ_{α∈ᾱ} P_α. Exact spaces coarsen
/// to exact spaces; almost spaces get a freshly measured deviation record.
pub fn coarsen(space: &SampleSpace, map: &CoarseningMap) -> Result<SampleSpace> {
    map.check_matches(space)?;
    let mut projectors = Vec::with_capacity(map.len());
    let mut labels = Vec::with_capacity(map.len());
    for (coarse, fines) in map.groups() {
        let mut p = LinearOperator::zeros(space.dim());
        for f in fines {
            let idx = space.index_of(f).expect("checked above");
            p = p.add(space.projector(idx))?;
        }
        projectors.push(p);
        labels.push(coarse.clone());
    }
    match space.kind() {
        SpaceKind::Exact => SampleSpace::exact(projectors, labels),
        SpaceKind::Almost => SampleSpace::almost(projectors, labels),
    }
}

fn require_commuting_projectors(p: &LinearOperator, q: &LinearOperator) -> Result<()> {
    require_projector(p)?;
    require_projector(q)?;
    let comm = p.commutator_norm(q)?;
    if comm > DEFAULT_TOL {
        return Err(Error::Validation(format!(
            "event operands do not commute: ‖PQ − QP‖_max = {comm:.3e}"
        )));
    }
    Ok(())
}

fn require_projector(p: &LinearOperator) -> Result<()> {
    if !p.is_hermitian(DEFAULT_TOL) {
        return Err(Error::Validation("event operand is not Hermitian".into()));
    }
    let idem = p.idempotency_deviation();
    if idem > DEFAULT_TOL {
        return Err(Error::Validation(format!(
            "event operand is not a projector: ‖P² − P‖_max = {idem:.3e}"
        )));
    }
    Ok(())
}

/// Event conjunction P∧Q = PQ for commuting projectors.
pub fn event_and(p: &LinearOperator, q: &LinearOperator) -> Result<LinearOperator> {
    require_commuting_projectors(p, q)?;
    p.compose(q)
}

/// Event disjunction P∨Q = P + Q − PQ for commuting projectors.
pub fn event_or(p: &LinearOperator, q: &LinearOperator) -> Result<LinearOperator> {
    require_commuting_projectors(p, q)?;
    p.add(q)?.sub(&p.compose(q)?)
}

/// Event negation ¬P = 1 − P.
pub fn event_not(p: &LinearOperator) -> Result<LinearOperator> {
    require_projector(p)?;
    LinearOperator::identity(p.dim()).sub(p)
}

/// Outcome of [`is_coarsening_of`]: either a witnessing map or the first
/// coarse label that is not a sum of fine projectors.
#[derive(Clone, Debug)]
pub struct CoarseningCheck {
    pub is_coarsening: bool,
    pub map: Option<CoarseningMap>,
    pub counterexample: Option<String>,
}

/// Tests whether every projector of `coarse` is a sum of projectors of
/// `fine` (max-entry tolerance 1e−9), returning the witnessing map when so.
pub fn is_coarsening_of(coarse: &SampleSpace, fine: &SampleSpace) -> Result<CoarseningCheck> {
    const TOL: f64 = 1e-9;
    if coarse.dim() != fine.dim() {
        return Err(Error::Usage("spaces have different dimensions".into()));
    }
    let mut used = vec![false; fine.len()];
    let mut groups = Vec::with_capacity(coarse.len());
    for (ci, cp) in coarse.projectors().iter().enumerate() {
        // a fine projector belongs to this coarse event iff its range is
        // contained in the coarse range: P̄P_α = P_α
        let mut members = Vec::new();
        let mut sum = LinearOperator::zeros(fine.dim());
        for (fi, fp) in fine.projectors().iter().enumerate() {
            if cp.compose(fp)?.sub(fp)?.max_abs() <= TOL {
                if used[fi] {
                    return Ok(CoarseningCheck {
                        is_coarsening: false,
                        map: None,
                        counterexample: Some(coarse.label(ci).to_string()),
                    });
                }
                used[fi] = true;
                members.push(fine.label(fi).to_string());
                sum = sum.add(fp)?;
            }
        }
        if sum.sub(cp)?.max_abs() > TOL {
            return Ok(CoarseningCheck {
                is_coarsening: false,
                map: None,
                counterexample: Some(coarse.label(ci).to_string()),
            });
        }
        groups.push((coarse.label(ci).to_string(), members));
    }
    if used.iter().any(|&u| !u) {
        let leftover = used.iter().position(|&u| !u).unwrap();
        return Ok(CoarseningCheck {
            is_coarsening: false,
            map: None,
            counterexample: Some(fine.label(leftover).to_string()),
        });
    }
    Ok(CoarseningCheck {
        is_coarsening: true,
        map: Some(CoarseningMap::new(groups)?),
        counterexample: None,
    })
}
