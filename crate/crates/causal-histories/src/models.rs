//! Concrete desk-scale systems to feed the histories machinery.
//!
//! - [`SpinEnvModel`]: a system qubit dephased by a bath of environment
//!   qubits, H = Σ_k g_k σ_z ⊗ σ_z^{(k)}. The environment keeps records of
//!   the system's z-basis state, and the surviving coherence between the two
//!   system branches is Π_k cos(2 g_k t).
//! - [`LatticeModel`]: a particle hopping on a ring, with sharp or
//!   Gaussian-pointer cell decompositions. Any nonzero hopping spreads an
//!   initially cell-confined packet into every cell after any finite step.
//! - [`MeasurementChainModel`]: a von Neumann chain ∣i⟩⊗∣D⟩ ↦ ∣i⟩⊗∣D_i⟩,
//!   optionally followed by an observer copying the device outcome.
//! - [`nonorthogonal_probe`]: feasibility arithmetic for a device measuring
//!   an almost-orthogonal basis while perturbing it.

use num_complex::Complex64 as C64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::event_algebra::{
    cell_projectors, pointer_projectors, pointer_state, CellPartition, SampleSpace,
};
use crate::hilbert::{LinearOperator, StateVector};
use crate::histories::HistorySpace;

/// Hard ceiling on composite dimensions built by models.
pub const MAX_MODEL_DIM: usize = 1 << 12;

/* Spin-environment dephasing ************************************************/

/// A system qubit coupled to `n_env` environment qubits by pure dephasing.
///
/// Basis ordering: the system bit is the most significant bit, environment
/// qubit k is bit k. Everything starts in ∣+⟩, so the initial state is the
/// uniform superposition.
#[derive(Clone, Debug)]
pub struct SpinEnvModel {
    n_env: usize,
    couplings: Vec<f64>,
}

impl SpinEnvModel {
    pub fn new(n_env: usize, couplings: Vec<f64>) -> Result<Self> {
        if n_env < 1 {
            return Err(Error::Usage("need at least one environment qubit".into()));
        }
        if couplings.len() != n_env {
            return Err(Error::Usage(format!(
                "need one coupling per environment qubit: got {} for {n_env}",
                couplings.len()
            )));
        }
        let dim = 1usize << (n_env + 1);
        if dim > MAX_MODEL_DIM {
            return Err(Error::ResourceCap {
                what: format!("spin-environment dimension 2^{}", n_env + 1),
                cap: MAX_MODEL_DIM as u64,
            });
        }
        Ok(Self { n_env, couplings })
    }

    /// Draws couplings uniformly from `[lo, hi)` with a seeded generator.
    /// The draw is sequential, so a larger environment at the same seed
    /// extends the smaller one's couplings rather than resampling them.
    pub fn from_seed(n_env: usize, lo: f64, hi: f64, seed: u64) -> Result<Self> {
        if !(hi > lo) {
            return Err(Error::Usage("coupling range must satisfy lo < hi".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let couplings = (0..n_env).map(|_| rng.gen_range(lo..hi)).collect();
        Self::new(n_env, couplings)
    }

    pub fn n_env(&self) -> usize {
        self.n_env
    }

    pub fn couplings(&self) -> &[f64] {
        &self.couplings
    }

    pub fn dim(&self) -> usize {
        1 << (self.n_env + 1)
    }

    fn z(bit: usize) -> f64 {
        if bit == 0 { 1.0 } else { -1.0 }
    }

    /// Diagonal eigenvalue of H at a product-basis index.
    fn level(&self, basis_index: usize) -> f64 {
        let system = Self::z(basis_index >> self.n_env);
        let mut sum = 0.0;
        for (k, &g) in self.couplings.iter().enumerate() {
            sum += g * Self::z((basis_index >> k) & 1);
        }
        system * sum
    }

    /// H = Σ_k g_k σ_z ⊗ σ_z^{(k)}, diagonal in the product basis.
    pub fn hamiltonian(&self) -> LinearOperator {
        let levels: Vec<f64> = (0..self.dim()).map(|b| self.level(b)).collect();
        LinearOperator::from_real_diagonal(&levels)
    }

    /// ∣+⟩^{⊗(n_env+1)}: the uniform superposition.
    pub fn initial_state(&self) -> StateVector {
        let dim = self.dim();
        let a = C64::new(1.0 / (dim as f64).sqrt(), 0.0);
        StateVector::new(vec![a; dim]).expect("dim >= 4")
    }

    /// The normalized overlap ⟨E₀(t)∣E₁(t)⟩ of the environment states
    /// entangled with the two system branches, computed by brute-force
    /// evolution of the full state (H is diagonal, so the evolution applies
    /// one phase per basis amplitude).
    pub fn env_overlap(&self, t: f64) -> Result<C64> {
        let half = self.dim() / 2;
        let psi0 = self.initial_state();
        let evolved: Vec<C64> = (0..self.dim())
            .map(|b| psi0.amplitude(b) * C64::from_polar(1.0, -self.level(b) * t))
            .collect();
        let mut dot = C64::ZERO;
        let mut norm0 = 0.0f64;
        let mut norm1 = 0.0f64;
        for e in 0..half {
            let a0 = evolved[e];
            let a1 = evolved[half + e];
            dot += a0.conj() * a1;
            norm0 += a0.norm_sqr();
            norm1 += a1.norm_sqr();
        }
        let denom = (norm0 * norm1).sqrt();
        if denom == 0.0 {
            return Err(Error::Numerical("environment branch has zero norm".into()));
        }
        Ok(dot / denom)
    }

    /// Sample space projecting onto the system z-basis, `P_s ⊗ 1_env`.
    pub fn system_sample_space(&self) -> Result<SampleSpace> {
        let half = self.dim() / 2;
        let partition = CellPartition::with_labels(
            self.dim(),
            vec![(0..half).collect(), (half..self.dim()).collect()],
            vec!["0".into(), "1".into()],
        )?;
        cell_projectors(&partition)
    }

    /// Fully refined sample space: one cell per product-basis state,
    /// labeled by its bit pattern (system bit first).
    pub fn refined_sample_space(&self) -> Result<SampleSpace> {
        let width = self.n_env + 1;
        let partition = CellPartition::with_labels(
            self.dim(),
            (0..self.dim()).map(|b| vec![b]).collect(),
            (0..self.dim()).map(|b| format!("{b:0width$b}")).collect(),
        )?;
        cell_projectors(&partition)
    }

    /// History space over `times`. With `with_env_coarse` the sample spaces
    /// are the system projectors tensored with the environment identity;
    /// otherwise each product-basis state is its own cell (which makes the
    /// tree K = 2^{n_env+1} wide — keep the environment small).
    pub fn history_space(&self, times: &[f64], with_env_coarse: bool) -> Result<HistorySpace> {
        let space = if with_env_coarse {
            self.system_sample_space()?
        } else {
            self.refined_sample_space()?
        };
        let n = times.len().saturating_sub(1);
        HistorySpace::new(
            self.hamiltonian(),
            times.to_vec(),
            vec![space; n],
            self.initial_state(),
        )
    }
}

/* Ring lattice ***************************************************************/

/// A particle hopping on a periodic chain of `sites` sites, partitioned
/// into cells, with an optional Gaussian-pointer decomposition.
#[derive(Clone, Debug)]
pub struct LatticeModel {
    sites: usize,
    hopping: f64,
    partition: CellPartition,
    pointer_sigma: Option<f64>,
    packet_width: f64,
}

impl LatticeModel {
    pub fn new(
        sites: usize,
        hopping: f64,
        partition: CellPartition,
        pointer_sigma: Option<f64>,
    ) -> Result<Self> {
        if sites < 4 {
            return Err(Error::Usage("lattice needs at least 4 sites".into()));
        }
        if sites > MAX_MODEL_DIM {
            return Err(Error::ResourceCap {
                what: format!("lattice of {sites} sites"),
                cap: MAX_MODEL_DIM as u64,
            });
        }
        if partition.dim() != sites {
            return Err(Error::Usage(format!(
                "partition is over {} indices but the lattice has {sites} sites",
                partition.dim()
            )));
        }
        if let Some(sigma) = pointer_sigma {
            if sigma <= 0.0 {
                return Err(Error::Usage("pointer width must be positive".into()));
            }
        }
        Ok(Self { sites, hopping, partition, pointer_sigma, packet_width: 1.0 })
    }

    /// Width (in lattice units) of the initial wavepacket; default 1.
    pub fn with_packet_width(mut self, width: f64) -> Result<Self> {
        if width <= 0.0 {
            return Err(Error::Usage("packet width must be positive".into()));
        }
        self.packet_width = width;
        Ok(self)
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    pub fn hopping(&self) -> f64 {
        self.hopping
    }

    pub fn partition(&self) -> &CellPartition {
        &self.partition
    }

    /// Nearest-neighbor hopping Hamiltonian with periodic boundary:
    /// H[i, i±1] = −J.
    pub fn hamiltonian(&self) -> LinearOperator {
        let l = self.sites;
        let j = C64::new(-self.hopping, 0.0);
        LinearOperator::from_fn(l, |r, c| {
            if (r + 1) % l == c || (c + 1) % l == r {
                j
            } else {
                C64::ZERO
            }
        })
    }

    /// A Gaussian wavepacket centered mid-cell in the first cell, truncated
    /// to that cell and renormalized, so that at J = 0 its weight provably
    /// never leaves the cell.
    pub fn initial_state(&self) -> Result<StateVector> {
        let cell = &self.partition.cells()[0];
        let center = (cell[0] + cell[cell.len() - 1]) as f64 / 2.0;
        let packet = pointer_state(self.sites, self.packet_width, center)?;
        let mut amplitudes = vec![C64::ZERO; self.sites];
        for &i in cell {
            amplitudes[i] = packet.amplitude(i);
        }
        StateVector::new(amplitudes)?.normalize()
    }

    /// Sharp cells, or pointer projectors when a pointer width is set.
    pub fn sample_space(&self) -> Result<SampleSpace> {
        match self.pointer_sigma {
            None => cell_projectors(&self.partition),
            Some(sigma) => pointer_projectors(self.sites, sigma, &self.partition),
        }
    }

    pub fn history_space(&self, times: &[f64]) -> Result<HistorySpace> {
        self.history_space_with_initial(self.initial_state()?, times)
    }

    /// Same dynamics and cells, caller-supplied initial state (e.g. an
    /// exact eigenvector of H).
    pub fn history_space_with_initial(
        &self,
        initial: StateVector,
        times: &[f64],
    ) -> Result<HistorySpace> {
        let n = times.len().saturating_sub(1);
        HistorySpace::new(
            self.hamiltonian(),
            times.to_vec(),
            vec![self.sample_space()?; n],
            initial,
        )
    }
}

/* Von Neumann measurement chain **********************************************/

/// Which stages of the chain to include.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChainStages {
    /// System–device interaction only; one time slice over device outcomes.
    Device,
    /// Device stage followed by an observer copying the device outcome; two
    /// time slices (device outcomes at t₁, observer outcomes at t₂).
    DeviceObserver,
}

/// A measured system, a device with a ready state ∣D⟩ and outcome states
/// ∣D_i⟩, and optionally an observer with the same structure.
///
/// Device (and observer) basis: index 0 is the ready state, index 1+i
/// registers outcome i. The interaction is the permutation unitary swapping
/// ready with the outcome matching the system state; it is an involution,
/// so the Hermitian generator H = (π/2)(1 − U) reproduces it exactly after
/// a unit time step.
#[derive(Clone, Debug)]
pub struct MeasurementChainModel {
    system_dim: usize,
    device_dim: usize,
    observer_dim: Option<usize>,
}

impl MeasurementChainModel {
    pub fn new(system_dim: usize, device_dim: usize, observer_dim: Option<usize>) -> Result<Self> {
        if system_dim < 1 {
            return Err(Error::Usage("system dimension must be at least 1".into()));
        }
        if device_dim < system_dim + 1 {
            return Err(Error::Usage(format!(
                "device needs a ready state plus {system_dim} outcome states"
            )));
        }
        if let Some(od) = observer_dim {
            if od < system_dim + 1 {
                return Err(Error::Usage(format!(
                    "observer needs a ready state plus {system_dim} outcome states"
                )));
            }
        }
        let dim = system_dim * device_dim * observer_dim.unwrap_or(1);
        if dim > MAX_MODEL_DIM {
            return Err(Error::ResourceCap {
                what: format!("measurement chain dimension {dim}"),
                cap: MAX_MODEL_DIM as u64,
            });
        }
        Ok(Self { system_dim, device_dim, observer_dim })
    }

    /// Convenience: minimal device (and observer) dimensions for `d`
    /// outcomes.
    pub fn minimal(system_dim: usize, with_observer: bool) -> Result<Self> {
        Self::new(
            system_dim,
            system_dim + 1,
            if with_observer { Some(system_dim + 1) } else { None },
        )
    }

    pub fn system_dim(&self) -> usize {
        self.system_dim
    }

    pub fn device_dim(&self) -> usize {
        self.device_dim
    }

    pub fn observer_dim(&self) -> Option<usize> {
        self.observer_dim
    }

    pub fn dim(&self) -> usize {
        self.system_dim * self.device_dim * self.observer_dim.unwrap_or(1)
    }

    fn split(&self, idx: usize) -> (usize, usize, usize) {
        let od = self.observer_dim.unwrap_or(1);
        let ob = idx % od;
        let rest = idx / od;
        let dv = rest % self.device_dim;
        let sys = rest / self.device_dim;
        (sys, dv, ob)
    }

    fn join(&self, sys: usize, dv: usize, ob: usize) -> usize {
        let od = self.observer_dim.unwrap_or(1);
        (sys * self.device_dim + dv) * od + ob
    }

    fn permutation_matrix(&self, perm: impl Fn(usize) -> usize) -> LinearOperator {
        let dim = self.dim();
        let mut m = nalgebra::DMatrix::<C64>::zeros(dim, dim);
        for from in 0..dim {
            m[(perm(from), from)] = C64::ONE;
        }
        LinearOperator::new(m).expect("square by construction")
    }

    /// ∣i⟩⊗∣D⟩ ↦ ∣i⟩⊗∣D_i⟩ (a transposition of device ready and outcome i
    /// in each system block; identity elsewhere and on the observer).
    pub fn device_unitary(&self) -> LinearOperator {
        self.permutation_matrix(|idx| {
            let (sys, dv, ob) = self.split(idx);
            let swapped = if dv == 0 {
                1 + sys
            } else if dv == 1 + sys {
                0
            } else {
                dv
            };
            self.join(sys, swapped, ob)
        })
    }

    /// ∣D_i⟩⊗∣O⟩ ↦ ∣D_i⟩⊗∣O_i⟩; identity when the device is ready.
    pub fn observer_unitary(&self) -> Result<LinearOperator> {
        if self.observer_dim.is_none() {
            return Err(Error::Usage("model has no observer stage".into()));
        }
        Ok(self.permutation_matrix(|idx| {
            let (sys, dv, ob) = self.split(idx);
            if dv >= 1 && dv <= self.system_dim {
                let outcome = dv - 1;
                let swapped = if ob == 0 {
                    1 + outcome
                } else if ob == 1 + outcome {
                    0
                } else {
                    ob
                };
                self.join(sys, dv, swapped)
            } else {
                idx
            }
        }))
    }

    /// Hermitian generator reproducing an involution U after Δt = 1:
    /// H = (π/2)(1 − U).
    fn involution_generator(u: &LinearOperator) -> Result<LinearOperator> {
        let dim = u.dim();
        let uu = u.compose(u)?;
        if uu.sub(&LinearOperator::identity(dim))?.max_abs() > 1e-12 {
            return Err(Error::Numerical("interaction unitary is not an involution".into()));
        }
        Ok(LinearOperator::identity(dim)
            .sub(u)?
            .scale(C64::new(std::f64::consts::FRAC_PI_2, 0.0)))
    }

    /// Sample space over device outcomes (plus a `none` cell covering the
    /// ready state and any unused device levels, so the family decomposes
    /// the identity).
    pub fn device_sample_space(&self) -> Result<SampleSpace> {
        self.component_sample_space(|idx| {
            let (_, dv, _) = self.split(idx);
            dv
        })
    }

    /// Sample space over observer outcomes, same layout as the device's.
    pub fn observer_sample_space(&self) -> Result<SampleSpace> {
        if self.observer_dim.is_none() {
            return Err(Error::Usage("model has no observer stage".into()));
        }
        self.component_sample_space(|idx| {
            let (_, _, ob) = self.split(idx);
            ob
        })
    }

    fn component_sample_space(&self, value_of: impl Fn(usize) -> usize) -> Result<SampleSpace> {
        let mut cells: Vec<Vec<usize>> = vec![Vec::new(); self.system_dim + 1];
        for idx in 0..self.dim() {
            let v = value_of(idx);
            if v >= 1 && v <= self.system_dim {
                cells[v - 1].push(idx);
            } else {
                cells[self.system_dim].push(idx);
            }
        }
        let mut labels: Vec<String> = (0..self.system_dim).map(|i| i.to_string()).collect();
        labels.push("none".into());
        let partition = CellPartition::with_labels(self.dim(), cells, labels)?;
        cell_projectors(&partition)
    }

    /// Builds the history space for a system prepared in Σ c_i ∣i⟩ with the
    /// device (and observer) ready.
    pub fn history_space(&self, amplitudes: &[C64], stages: ChainStages) -> Result<HistorySpace> {
        if amplitudes.len() != self.system_dim {
            return Err(Error::Usage(format!(
                "need {} system amplitudes, got {}",
                self.system_dim,
                amplitudes.len()
            )));
        }
        let system = StateVector::normalized(amplitudes.to_vec()).map_err(|_| {
            Error::Validation("system amplitudes must be normalized: Σ|c_i|² = 1".into())
        })?;
        let mut psi0 = system.kron(&StateVector::basis_state(self.device_dim, 0)?);
        if let Some(od) = self.observer_dim {
            psi0 = psi0.kron(&StateVector::basis_state(od, 0)?);
        }
        let h_dev = Self::involution_generator(&self.device_unitary())?;
        match stages {
            ChainStages::Device => HistorySpace::with_interval_generators(
                vec![h_dev],
                vec![0.0, 1.0],
                vec![self.device_sample_space()?],
                psi0,
            ),
            ChainStages::DeviceObserver => {
                let h_obs = Self::involution_generator(&self.observer_unitary()?)?;
                HistorySpace::with_interval_generators(
                    vec![h_dev, h_obs],
                    vec![0.0, 1.0, 2.0],
                    vec![self.device_sample_space()?, self.observer_sample_space()?],
                    psi0,
                )
            }
        }
    }
}

/* Non-orthogonal measurement probe *******************************************/

/// Feasibility report for measuring the almost-orthogonal basis
/// {∣ε⟩, ∣1⟩}, ∣ε⟩ = √(1−ε)∣0⟩ + √ε∣1⟩, with a device whose outcome states
/// overlap by `device_overlap`, allowing the measurement to perturb the
/// basis states. Unitarity forces ⟨ã∣b̃⟩⟨D_a∣D_b⟩ = ⟨a∣b⟩, so perturbed
/// states exist iff ∣⟨a∣b⟩∣ ≤ ∣⟨D_a∣D_b⟩∣.
#[derive(Clone, Copy, Debug)]
pub struct ProbeReport {
    /// ⟨a∣b⟩ = ⟨ε∣1⟩ = √ε.
    pub target_overlap: f64,
    /// ∣⟨D_a∣D_b⟩∣.
    pub device_overlap_mag: f64,
    /// ∣⟨ã∣b̃⟩∣ required by the constraint (∞ when the device states are
    /// orthogonal but the targets are not).
    pub required_perturbed_overlap: f64,
    pub feasible: bool,
    /// Smallest achievable ∣ ∣⟨ã∣b̃⟩⟨D_a∣D_b⟩∣ − ∣⟨a∣b⟩∣ ∣ with
    /// ∣⟨ã∣b̃⟩∣ ≤ 1; zero exactly when feasible.
    pub constraint_residual: f64,
    /// Magnitudes of the components of ∣0⟩ expanded in {∣ε⟩, ∣1⟩}; at
    /// ε = 1/2 this is the (√2, 1) expansion of ∣0⟩ over {∣+⟩, ∣1⟩}.
    pub expansion_magnitudes: (f64, f64),
}

/// Runs the probe arithmetic. `epsilon` may be 0 (an exactly orthogonal
/// target basis); an orthogonal device with a non-orthogonal target is
/// reported infeasible, not an error.
pub fn nonorthogonal_probe(epsilon: f64, device_overlap: C64) -> Result<ProbeReport> {
    if !(0.0..1.0).contains(&epsilon) {
        return Err(Error::Usage("epsilon must lie in [0, 1)".into()));
    }
    let dev = device_overlap.norm();
    if dev > 1.0 + 1e-12 {
        return Err(Error::Usage("device overlap magnitude cannot exceed 1".into()));
    }
    let target = epsilon.sqrt();
    let required = if target == 0.0 {
        0.0
    } else if dev == 0.0 {
        f64::INFINITY
    } else {
        target / dev
    };
    let feasible = target <= dev || target == 0.0;
    let constraint_residual = (target - dev).max(0.0);
    // ∣0⟩ = x∣ε⟩ + y∣1⟩ with x√(1−ε) = 1 and x√ε + y = 0
    let x = 1.0 / (1.0 - epsilon).sqrt();
    let y = (epsilon / (1.0 - epsilon)).sqrt();
    Ok(ProbeReport {
        target_overlap: target,
        device_overlap_mag: dev,
        required_perturbed_overlap: required,
        feasible,
        constraint_residual,
        expansion_magnitudes: (x, y),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::histories::{
        branching_structure_check, consistency_check, decoherence_matrix, DEFAULT_ZERO_TOL,
    };
    use crate::hilbert::propagator;

    /// Closed-form dephasing oracle: Π_k cos(2 g_k t).
    fn cos_product(couplings: &[f64], t: f64) -> f64 {
        couplings.iter().map(|&g| (2.0 * g * t).cos()).product()
    }

    #[test]
    fn env_overlap_at_zero_time_is_one() {
        let model = SpinEnvModel::new(1, vec![0.3]).unwrap();
        let ov = model.env_overlap(0.0).unwrap();
        assert!((ov - C64::ONE).norm() < 1e-14);
    }

    #[test]
    fn env_overlap_single_qubit_closed_form() {
        let model = SpinEnvModel::new(1, vec![0.3]).unwrap();
        let ov = model.env_overlap(1.0).unwrap();
        assert!((ov.norm() - 0.6f64.cos().abs()).abs() < 1e-12);
        assert!(ov.im.abs() < 1e-14);
    }

    #[test]
    fn env_overlap_matches_cos_product_for_larger_baths() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let couplings: Vec<f64> = (0..8).map(|_| rng.gen_range(0.2..1.0)).collect();
        let model = SpinEnvModel::new(8, couplings.clone()).unwrap();
        let ov = model.env_overlap(2.0).unwrap();
        assert!((ov.norm() - cos_product(&couplings, 2.0).abs()).abs() <= 1e-10);
    }

    #[test]
    fn env_overlap_agrees_with_generic_propagator_route() {
        let model = SpinEnvModel::new(2, vec![0.4, 0.9]).unwrap();
        let t = 1.3;
        let u = propagator(&model.hamiltonian(), 0.0, t).unwrap();
        let evolved = u.unitary().apply(&model.initial_state()).unwrap();
        let half = model.dim() / 2;
        let mut dot = C64::ZERO;
        let mut n0 = 0.0;
        let mut n1 = 0.0;
        for e in 0..half {
            dot += evolved.amplitude(e).conj() * evolved.amplitude(half + e);
            n0 += evolved.amplitude(e).norm_sqr();
            n1 += evolved.amplitude(half + e).norm_sqr();
        }
        let generic = dot / (n0 * n1).sqrt();
        let fast = model.env_overlap(t).unwrap();
        assert!((generic - fast).norm() < 1e-10);
    }

    #[test]
    fn spin_env_hamiltonian_is_diagonal_hermitian() {
        let model = SpinEnvModel::new(3, vec![0.2, 0.5, 0.8]).unwrap();
        let h = model.hamiltonian();
        assert!(h.is_hermitian(1e-15));
        for r in 0..h.dim() {
            for c in 0..h.dim() {
                if r != c {
                    assert_eq!(h.entry(r, c), C64::ZERO);
                }
            }
        }
    }

    #[test]
    fn spin_env_history_space_is_consistent() {
        let model = SpinEnvModel::from_seed(8, 0.2, 1.0, 3).unwrap();
        let space = model.history_space(&[0.0, 1.0, 2.0], true).unwrap();
        let records = space.enumerate(0.0).unwrap();
        let d = decoherence_matrix(&records).unwrap();
        assert!(consistency_check(&d, 1e-2).consistent);
        assert!(branching_structure_check(&records, DEFAULT_ZERO_TOL).branching);
    }

    #[test]
    fn seeded_couplings_extend_by_prefix() {
        let small = SpinEnvModel::from_seed(2, 0.2, 1.0, 9).unwrap();
        let large = SpinEnvModel::from_seed(4, 0.2, 1.0, 9).unwrap();
        assert_eq!(small.couplings(), &large.couplings()[..2]);
    }

    fn two_cell_lattice(hopping: f64, pointer_sigma: Option<f64>) -> LatticeModel {
        let partition = CellPartition::new(8, vec![(0..4).collect(), (4..8).collect()]).unwrap();
        LatticeModel::new(8, hopping, partition, pointer_sigma).unwrap()
    }

    #[test]
    fn frozen_lattice_keeps_weight_in_the_initial_cell() {
        let model = two_cell_lattice(0.0, None);
        let space = model.history_space(&[0.0, 0.5, 1.0]).unwrap();
        for r in space.enumerate(0.0).unwrap() {
            if r.indices().iter().any(|&i| i != 0) {
                assert_eq!(r.weight(), 0.0, "history {:?} escaped a frozen lattice", r.indices());
            }
        }
    }

    #[test]
    fn hopping_spreads_weight_into_every_cell() {
        let partition = CellPartition::new(8, vec![(0..4).collect(), (4..8).collect()]).unwrap();
        let model = LatticeModel::new(8, 1.0, partition, None).unwrap();
        let space = model.history_space(&[0.0, 0.1]).unwrap();
        for r in space.enumerate(0.0).unwrap() {
            assert!(r.weight() > 1e-12, "cell {:?} stayed empty", r.indices());
        }
    }

    #[test]
    fn eigenvector_initial_state_has_stationary_weights() {
        let model = two_cell_lattice(1.0, None);
        let h = model.hamiltonian();
        let eig = nalgebra::linalg::SymmetricEigen::new(h.matrix().clone());
        let column = eig.eigenvectors.column(0);
        let ground = StateVector::new(column.iter().copied().collect())
            .unwrap()
            .normalize()
            .unwrap();
        let mut weights_by_time = Vec::new();
        for &t in &[0.3, 0.9, 2.2] {
            let space = model
                .history_space_with_initial(ground.clone(), &[0.0, t])
                .unwrap();
            let weights: Vec<f64> = space
                .enumerate(0.0)
                .unwrap()
                .iter()
                .map(|r| r.weight())
                .collect();
            weights_by_time.push(weights);
        }
        for w in &weights_by_time[1..] {
            for (a, b) in w.iter().zip(&weights_by_time[0]) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn chain_single_branch() {
        let model = MeasurementChainModel::minimal(2, false).unwrap();
        let space = model
            .history_space(&[C64::ONE, C64::ZERO], ChainStages::Device)
            .unwrap();
        let records = space.enumerate(0.0).unwrap();
        let w0 = records
            .iter()
            .find(|r| space.space(0).label(r.final_index()) == "0")
            .unwrap()
            .weight();
        assert!((w0 - 1.0).abs() < 1e-12);
        let rest: f64 = records
            .iter()
            .filter(|r| space.space(0).label(r.final_index()) != "0")
            .map(|r| r.weight())
            .sum();
        assert!(rest < 1e-12);
    }

    #[test]
    fn chain_reproduces_born_weights() {
        let inv_sqrt2 = 1.0 / 2f64.sqrt();
        let model = MeasurementChainModel::minimal(2, false).unwrap();
        let space = model
            .history_space(
                &[C64::new(inv_sqrt2, 0.0), C64::new(inv_sqrt2, 0.0)],
                ChainStages::Device,
            )
            .unwrap();
        let records = space.enumerate(0.0).unwrap();
        for r in &records {
            match space.space(0).label(r.final_index()) {
                "none" => assert!(r.weight() < 1e-12),
                _ => assert!((r.weight() - 0.5).abs() < 1e-12),
            }
        }

        let c2 = (1.0 - 0.36 - 0.4096f64).sqrt();
        let model = MeasurementChainModel::minimal(3, false).unwrap();
        let space = model
            .history_space(
                &[C64::new(0.6, 0.0), C64::new(0.64, 0.0), C64::new(c2, 0.0)],
                ChainStages::Device,
            )
            .unwrap();
        let expected = [0.36, 0.4096, 0.2304];
        for r in space.enumerate(0.0).unwrap() {
            let label = space.space(0).label(r.final_index());
            if label == "none" {
                assert!(r.weight() < 1e-12);
            } else {
                let i: usize = label.parse().unwrap();
                assert!((r.weight() - expected[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn chain_with_observer_is_branching_and_consistent() {
        let model = MeasurementChainModel::minimal(3, true).unwrap();
        let c2 = (1.0 - 0.36 - 0.4096f64).sqrt();
        let space = model
            .history_space(
                &[C64::new(0.6, 0.0), C64::new(0.64, 0.0), C64::new(c2, 0.0)],
                ChainStages::DeviceObserver,
            )
            .unwrap();
        let records = space.enumerate(0.0).unwrap();
        assert_eq!(records.len(), 16);
        assert!(branching_structure_check(&records, DEFAULT_ZERO_TOL).branching);
        let d = decoherence_matrix(&records).unwrap();
        assert!(consistency_check(&d, 1e-9).consistent);
        // the device and observer agree in every surviving branch
        for r in &records {
            if r.weight() > 1e-12 {
                assert_eq!(r.indices()[0], r.indices()[1]);
            }
        }
    }

    #[test]
    fn chain_rejects_unnormalized_input() {
        let model = MeasurementChainModel::minimal(2, false).unwrap();
        let err = model.history_space(&[C64::new(0.9, 0.0), C64::new(0.9, 0.0)], ChainStages::Device);
        assert!(matches!(err, Err(Error::Validation(_))));
    }

    #[test]
    fn device_unitary_maps_ready_states_exactly() {
        let model = MeasurementChainModel::new(3, 5, None).unwrap();
        let u = model.device_unitary();
        for i in 0..3 {
            let sys = StateVector::basis_state(3, i).unwrap();
            let ready = StateVector::basis_state(5, 0).unwrap();
            let mapped = u.apply(&sys.kron(&ready)).unwrap();
            let expected = sys.kron(&StateVector::basis_state(5, 1 + i).unwrap());
            assert_eq!(mapped.sub(&expected).unwrap().norm(), 0.0);
        }
    }

    #[test]
    fn probe_examples() {
        // √ε = 0.01 against device overlap 0.1: feasible, needs |⟨ã|b̃⟩| = 0.1
        let report = nonorthogonal_probe(1e-4, C64::new(0.1, 0.0)).unwrap();
        assert!(report.feasible);
        assert!((report.required_perturbed_overlap - 0.1).abs() < 1e-12);
        assert_eq!(report.constraint_residual, 0.0);

        // exactly orthogonal targets are always feasible
        let report = nonorthogonal_probe(0.0, C64::ZERO).unwrap();
        assert!(report.feasible);
        assert_eq!(report.required_perturbed_overlap, 0.0);
        assert_eq!(report.constraint_residual, 0.0);

        // √ε = 0.5 against device overlap 0.1: would need |⟨ã|b̃⟩| = 5
        let report = nonorthogonal_probe(0.25, C64::new(0.1, 0.0)).unwrap();
        assert!(!report.feasible);
        assert!((report.required_perturbed_overlap - 5.0).abs() < 1e-12);
        assert!((report.constraint_residual - 0.4).abs() < 1e-12);

        // orthogonal device, non-orthogonal target: infeasible, not an error
        let report = nonorthogonal_probe(0.25, C64::ZERO).unwrap();
        assert!(!report.feasible);
        assert!(report.required_perturbed_overlap.is_infinite());

        // ε = 1/2 reproduces the (√2, 1) expansion of ∣0⟩ over {∣+⟩, ∣1⟩}
        let report = nonorthogonal_probe(0.5, C64::new(0.3, 0.0)).unwrap();
        let (x, y) = report.expansion_magnitudes;
        assert!((x - 2f64.sqrt()).abs() < 1e-12);
        assert!((y - 1.0).abs() < 1e-12);
    }
}
