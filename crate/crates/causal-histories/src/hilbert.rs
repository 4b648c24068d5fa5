//! Exact dense complex linear algebra for small Hilbert spaces.
//!
//! Everything here is double precision over an explicit finite basis:
//! state vectors ∣ψ⟩, square operators, and unitary propagators
//! U(t, t₀) = exp(−iH(t − t₀)) generated by Hermitian Hamiltonians
//! (natural units, ħ = 1). The matrix exponential goes through an
//! eigendecomposition of the generator, which is exact (to rounding) at the
//! dimensions this crate targets. All types are immutable after construction
//! and all operations are pure.

use nalgebra::{DMatrix, DVector};
use nalgebra::linalg::SymmetricEigen;
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

/// Default absolute tolerance for max-entry norms.
pub const DEFAULT_TOL: f64 = 1e-10;
/// Tolerance on ∣‖ψ‖ − 1∣ for states that claim to be normalized.
pub const NORM_TOL: f64 = 1e-12;

/// A vector of complex amplitudes over a finite basis.
///
/// Not every `StateVector` is normalized: projected branch vectors carry
/// their (sub-unit) norm as physical information. Use
/// [`StateVector::normalized`] when the unit-norm invariant must hold.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    amplitudes: DVector<C64>,
}

impl StateVector {
    /// Builds a state from raw amplitudes. Errors on an empty list.
    pub fn new(amplitudes: Vec<C64>) -> Result<Self> {
        if amplitudes.is_empty() {
            return Err(Error::Usage("state vector must have dimension >= 1".into()));
        }
        Ok(Self { amplitudes: DVector::from_vec(amplitudes) })
    }

    /// Builds a state and checks ∣‖ψ‖ − 1∣ ≤ 1e−12.
    pub fn normalized(amplitudes: Vec<C64>) -> Result<Self> {
        let v = Self::new(amplitudes)?;
        if !v.is_normalized(NORM_TOL) {
            return Err(Error::Validation(format!(
                "state is not normalized: |norm - 1| = {:.3e}",
                (v.norm() - 1.0).abs()
            )));
        }
        Ok(v)
    }

    /// Real amplitudes convenience constructor.
    pub fn from_real(amplitudes: &[f64]) -> Result<Self> {
        Self::new(amplitudes.iter().map(|&x| C64::new(x, 0.0)).collect())
    }

    /// The basis vector ∣k⟩ in dimension `dim`.
    pub fn basis_state(dim: usize, k: usize) -> Result<Self> {
        if k >= dim {
            return Err(Error::Usage(format!("basis index {k} out of range for dim {dim}")));
        }
        let mut amplitudes = vec![C64::ZERO; dim];
        amplitudes[k] = C64::ONE;
        Self::new(amplitudes)
    }

    /// The zero vector (a legitimate chain vector for a dead branch).
    pub fn zero(dim: usize) -> Result<Self> {
        Self::new(vec![C64::ZERO; dim])
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &DVector<C64> {
        &self.amplitudes
    }

    pub fn amplitude(&self, i: usize) -> C64 {
        self.amplitudes[i]
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.norm()
    }

    pub fn norm_squared(&self) -> f64 {
        self.amplitudes.norm_squared()
    }

    pub fn is_normalized(&self, tol: f64) -> bool {
        (self.norm() - 1.0).abs() <= tol
    }

    /// Returns ψ/‖ψ‖; errors on (numerically) zero norm.
    pub fn normalize(&self) -> Result<Self> {
        let n = self.norm();
        if n == 0.0 {
            return Err(Error::Usage("cannot normalize the zero vector".into()));
        }
        Ok(Self { amplitudes: self.amplitudes.scale(1.0 / n) })
    }

    pub fn scale(&self, c: C64) -> Self {
        Self { amplitudes: &self.amplitudes * c }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_dim(other)?;
        Ok(Self { amplitudes: &self.amplitudes + &other.amplitudes })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_dim(other)?;
        Ok(Self { amplitudes: &self.amplitudes - &other.amplitudes })
    }

    /// Tensor product self ⊗ other (self is the slower-varying factor).
    pub fn kron(&self, other: &Self) -> Self {
        Self { amplitudes: self.amplitudes.kronecker(&other.amplitudes) }
    }

    fn check_dim(&self, other: &Self) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::Usage(format!(
                "dimension mismatch: {} vs {}",
                self.dim(),
                other.dim()
            )));
        }
        Ok(())
    }
}

/// Inner product ⟨u∣v⟩, conjugate-linear in the first argument.
pub fn inner(u: &StateVector, v: &StateVector) -> Result<C64> {
    if u.dim() != v.dim() {
        return Err(Error::Usage(format!(
            "inner product dimension mismatch: {} vs {}",
            u.dim(),
            v.dim()
        )));
    }
    Ok(u.amplitudes.dotc(&v.amplitudes))
}

/// A square complex matrix acting on a fixed-dimension space.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearOperator {
    matrix: DMatrix<C64>,
}

impl LinearOperator {
    pub fn new(matrix: DMatrix<C64>) -> Result<Self> {
        if matrix.nrows() == 0 || matrix.nrows() != matrix.ncols() {
            return Err(Error::Usage(format!(
                "operator must be square and nonempty, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        Ok(Self { matrix })
    }

    /// Row-major construction from nested lists.
    pub fn from_rows(rows: &[Vec<C64>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 || rows.iter().any(|r| r.len() != n) {
            return Err(Error::Usage("operator rows must form a nonempty square matrix".into()));
        }
        Ok(Self { matrix: DMatrix::from_fn(n, n, |i, j| rows[i][j]) })
    }

    pub fn identity(dim: usize) -> Self {
        Self { matrix: DMatrix::identity(dim, dim) }
    }

    pub fn zeros(dim: usize) -> Self {
        Self { matrix: DMatrix::zeros(dim, dim) }
    }

    pub fn from_diagonal(diagonal: &[C64]) -> Self {
        Self { matrix: DMatrix::from_diagonal(&DVector::from_vec(diagonal.to_vec())) }
    }

    pub fn from_real_diagonal(diagonal: &[f64]) -> Self {
        Self::from_diagonal(&diagonal.iter().map(|&x| C64::new(x, 0.0)).collect::<Vec<_>>())
    }

    pub fn from_fn(dim: usize, f: impl Fn(usize, usize) -> C64) -> Self {
        Self { matrix: DMatrix::from_fn(dim, dim, f) }
    }

    /// Outer product ∣u⟩⟨v∣.
    pub fn outer(u: &StateVector, v: &StateVector) -> Result<Self> {
        if u.dim() != v.dim() {
            return Err(Error::Usage("outer product dimension mismatch".into()));
        }
        let m = u.amplitudes() * v.amplitudes().adjoint();
        Ok(Self { matrix: m })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    pub fn entry(&self, i: usize, j: usize) -> C64 {
        self.matrix[(i, j)]
    }

    /// Matrix-vector product; the result is not renormalized.
    pub fn apply(&self, v: &StateVector) -> Result<StateVector> {
        if self.dim() != v.dim() {
            return Err(Error::Usage(format!(
                "operator dim {} does not match vector dim {}",
                self.dim(),
                v.dim()
            )));
        }
        Ok(StateVector { amplitudes: &self.matrix * v.amplitudes() })
    }

    /// Matrix product self · other.
    pub fn compose(&self, other: &Self) -> Result<Self> {
        if self.dim() != other.dim() {
            return Err(Error::Usage(format!(
                "operator dimension mismatch: {} vs {}",
                self.dim(),
                other.dim()
            )));
        }
        Ok(Self { matrix: &self.matrix * &other.matrix })
    }

    pub fn adjoint(&self) -> Self {
        Self { matrix: self.matrix.adjoint() }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.dim() != other.dim() {
            return Err(Error::Usage("operator dimension mismatch".into()));
        }
        Ok(Self { matrix: &self.matrix + &other.matrix })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        if self.dim() != other.dim() {
            return Err(Error::Usage("operator dimension mismatch".into()));
        }
        Ok(Self { matrix: &self.matrix - &other.matrix })
    }

    pub fn scale(&self, c: C64) -> Self {
        Self { matrix: &self.matrix * c }
    }

    /// Tensor product self ⊗ other.
    pub fn kron(&self, other: &Self) -> Self {
        Self { matrix: self.matrix.kronecker(&other.matrix) }
    }

    /// Max-entry norm: max ∣a_ij∣.
    pub fn max_abs(&self) -> f64 {
        self.matrix.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    /// True iff every off-diagonal entry is exactly zero.
    pub fn is_diagonal(&self) -> bool {
        let n = self.dim();
        (0..n).all(|i| (0..n).all(|j| i == j || self.matrix[(i, j)] == C64::ZERO))
    }

    /// The diagonal when the operator is strictly diagonal.
    pub fn diagonal(&self) -> Option<Vec<C64>> {
        if self.is_diagonal() {
            Some((0..self.dim()).map(|i| self.matrix[(i, i)]).collect())
        } else {
            None
        }
    }

    /// ‖A − A†‖_max.
    pub fn hermitian_deviation(&self) -> f64 {
        (&self.matrix - self.matrix.adjoint())
            .iter()
            .map(|c| c.norm())
            .fold(0.0, f64::max)
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermitian_deviation() <= tol
    }

    /// ‖A² − A‖_max, zero for projectors.
    pub fn idempotency_deviation(&self) -> f64 {
        (&self.matrix * &self.matrix - &self.matrix)
            .iter()
            .map(|c| c.norm())
            .fold(0.0, f64::max)
    }

    /// ‖AB − BA‖_max.
    pub fn commutator_norm(&self, other: &Self) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(Error::Usage("operator dimension mismatch".into()));
        }
        let c = &self.matrix * &other.matrix - &other.matrix * &self.matrix;
        Ok(c.iter().map(|z| z.norm()).fold(0.0, f64::max))
    }

    /// Real eigenvalues of a Hermitian operator, ascending.
    pub fn hermitian_eigenvalues(&self, tol: f64) -> Result<Vec<f64>> {
        if !self.is_hermitian(tol) {
            return Err(Error::Validation(format!(
                "operator is not Hermitian: max deviation {:.3e}",
                self.hermitian_deviation()
            )));
        }
        let eig = SymmetricEigen::new(self.matrix.clone());
        let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Ok(vals)
    }
}

/// Result of [`hermitian_check`].
#[derive(Clone, Copy, Debug)]
pub struct HermitianCheck {
    pub hermitian: bool,
    /// Max-entry deviation ‖A − A†‖_max.
    pub max_deviation: f64,
}

/// Checks whether `a` is Hermitian within `tol` (max-entry norm).
pub fn hermitian_check(a: &LinearOperator, tol: f64) -> HermitianCheck {
    let dev = a.hermitian_deviation();
    HermitianCheck { hermitian: dev <= tol, max_deviation: dev }
}

/// A unitary time-evolution operator between two times.
#[derive(Clone, Debug)]
pub struct Propagator {
    unitary: LinearOperator,
    t_from: f64,
    t_to: f64,
}

impl Propagator {
    pub fn unitary(&self) -> &LinearOperator {
        &self.unitary
    }

    pub fn t_from(&self) -> f64 {
        self.t_from
    }

    pub fn t_to(&self) -> f64 {
        self.t_to
    }

    /// ‖U†U − 1‖_max.
    pub fn unitarity_deviation(&self) -> f64 {
        unitarity_deviation(&self.unitary)
    }
}

fn unitarity_deviation(u: &LinearOperator) -> f64 {
    let dim = u.dim();
    (u.matrix().adjoint() * u.matrix() - DMatrix::<C64>::identity(dim, dim))
        .iter()
        .map(|c| c.norm())
        .fold(0.0, f64::max)
}

/// Builds U(t_to, t_from) = exp(−iH(t_to − t_from)) for a Hermitian `h`.
///
/// The exponential is computed from the eigendecomposition H = VΛV†, so
/// U = V exp(−iΛΔt) V†. Errors if `h` fails the Hermitian check at
/// [`DEFAULT_TOL`], or if the result fails the unitarity check.
pub fn propagator(h: &LinearOperator, t_from: f64, t_to: f64) -> Result<Propagator> {
    let check = hermitian_check(h, DEFAULT_TOL);
    if !check.hermitian {
        return Err(Error::Validation(format!(
            "Hamiltonian is not Hermitian: max deviation {:.3e} > {:.0e}",
            check.max_deviation, DEFAULT_TOL
        )));
    }
    let dt = t_to - t_from;
    let dim = h.dim();
    let (u, dev) = if h.is_diagonal() {
        // diagonal generators exponentiate entrywise (and exactly), and
        // U†U − 1 stays diagonal with entries ∣u_ii∣² − 1
        let phases: Vec<C64> =
            (0..dim).map(|i| C64::from_polar(1.0, -h.entry(i, i).re * dt)).collect();
        let dev = phases.iter().map(|p| (p.norm_sqr() - 1.0).abs()).fold(0.0, f64::max);
        (DMatrix::from_diagonal(&DVector::from_vec(phases)), dev)
    } else {
        let eig = SymmetricEigen::new(h.matrix().clone());
        let phases = DVector::from_iterator(
            dim,
            eig.eigenvalues.iter().map(|&lambda| C64::from_polar(1.0, -lambda * dt)),
        );
        let u = &eig.eigenvectors * DMatrix::from_diagonal(&phases) * eig.eigenvectors.adjoint();
        let dev = unitarity_deviation(&LinearOperator { matrix: u.clone() });
        (u, dev)
    };
    if dev > DEFAULT_TOL {
        return Err(Error::Numerical(format!(
            "propagator failed unitarity check: deviation {dev:.3e}"
        )));
    }
    Ok(Propagator { unitary: LinearOperator { matrix: u }, t_from, t_to })
}

/// Standard matrix-vector application; alias for [`LinearOperator::apply`].
pub fn apply(a: &LinearOperator, v: &StateVector) -> Result<StateVector> {
    a.apply(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn sigma_x() -> LinearOperator {
        LinearOperator::from_rows(&[
            vec![C64::ZERO, C64::ONE],
            vec![C64::ONE, C64::ZERO],
        ])
        .unwrap()
    }

    fn random_hermitian(rng: &mut ChaCha8Rng, dim: usize) -> LinearOperator {
        let mut m = DMatrix::<C64>::zeros(dim, dim);
        for i in 0..dim {
            m[(i, i)] = C64::new(rng.gen_range(-1.0..1.0), 0.0);
            for j in (i + 1)..dim {
                let z = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                m[(i, j)] = z;
                m[(j, i)] = z.conj();
            }
        }
        LinearOperator::new(m).unwrap()
    }

    /// Truncated-series oracle: Σ_{k≤30} (−iHΔt)^k / k!.
    fn taylor_expm(h: &LinearOperator, dt: f64) -> LinearOperator {
        let dim = h.dim();
        let a = h.scale(C64::new(0.0, -dt));
        let mut term = DMatrix::<C64>::identity(dim, dim);
        let mut sum = term.clone();
        for k in 1..=30 {
            term = &term * a.matrix() / C64::new(k as f64, 0.0);
            sum += &term;
        }
        LinearOperator::new(sum).unwrap()
    }

    #[test]
    fn inner_product_examples() {
        let e0 = StateVector::basis_state(2, 0).unwrap();
        let e1 = StateVector::basis_state(2, 1).unwrap();
        let plus = StateVector::from_real(&[1.0 / 2f64.sqrt(), 1.0 / 2f64.sqrt()]).unwrap();
        assert_eq!(inner(&e0, &e1).unwrap(), C64::ZERO);
        assert_eq!(inner(&e0, &e0).unwrap(), C64::ONE);
        let ov = inner(&plus, &e0).unwrap();
        assert!((ov.re - 1.0 / 2f64.sqrt()).abs() < 1e-15 && ov.im == 0.0);
    }

    #[test]
    fn inner_product_is_conjugate_linear_in_first_argument() {
        let u = StateVector::new(vec![C64::new(0.3, 0.2), C64::new(-0.1, 0.7)]).unwrap();
        let v = StateVector::new(vec![C64::new(0.5, -0.4), C64::new(0.2, 0.1)]).unwrap();
        let c = C64::new(0.6, -1.3);
        let lhs = inner(&u.scale(c), &v).unwrap();
        let rhs = c.conj() * inner(&u, &v).unwrap();
        assert!((lhs - rhs).norm() < 1e-14);
        let self_inner = inner(&v, &v).unwrap();
        assert!(self_inner.im.abs() < 1e-15 && self_inner.re >= 0.0);
    }

    #[test]
    fn inner_dimension_mismatch_is_usage_error() {
        let u = StateVector::basis_state(2, 0).unwrap();
        let v = StateVector::basis_state(3, 0).unwrap();
        assert!(matches!(inner(&u, &v), Err(Error::Usage(_))));
    }

    #[test]
    fn propagator_zero_generator_is_identity() {
        let h = LinearOperator::zeros(3);
        let p = propagator(&h, 0.0, 2.7).unwrap();
        let dev = p.unitary().sub(&LinearOperator::identity(3)).unwrap().max_abs();
        assert!(dev < 1e-14);
    }

    #[test]
    fn propagator_sigma_x_quarter_turn() {
        // exp(−iσ_x π/2) = cos(π/2)·1 − i sin(π/2)·σ_x = −iσ_x
        let p = propagator(&sigma_x(), 0.0, std::f64::consts::FRAC_PI_2).unwrap();
        let expected = LinearOperator::from_rows(&[
            vec![C64::ZERO, C64::new(0.0, -1.0)],
            vec![C64::new(0.0, -1.0), C64::ZERO],
        ])
        .unwrap();
        assert!(p.unitary().sub(&expected).unwrap().max_abs() < 1e-12);
        let oracle = taylor_expm(&sigma_x(), std::f64::consts::FRAC_PI_2);
        assert!(p.unitary().sub(&oracle).unwrap().max_abs() < 1e-10);
    }

    #[test]
    fn propagator_diagonal_full_period() {
        let h = LinearOperator::from_real_diagonal(&[0.0, 1.0]);
        let p = propagator(&h, 0.0, 2.0 * std::f64::consts::PI).unwrap();
        assert!(p.unitary().sub(&LinearOperator::identity(2)).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn propagator_rejects_non_hermitian() {
        let a = LinearOperator::from_rows(&[
            vec![C64::ZERO, C64::ONE],
            vec![C64::ZERO, C64::ZERO],
        ])
        .unwrap();
        assert!(matches!(propagator(&a, 0.0, 1.0), Err(Error::Validation(_))));
    }

    #[test]
    fn apply_examples() {
        let v = StateVector::from_real(&[1.0 / 2f64.sqrt(), 1.0 / 2f64.sqrt()]).unwrap();
        let id = LinearOperator::identity(2);
        assert_eq!(id.apply(&v).unwrap(), v);

        let p0 = LinearOperator::from_real_diagonal(&[1.0, 0.0]);
        let projected = p0.apply(&v).unwrap();
        assert!((projected.amplitude(0).re - 1.0 / 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(projected.amplitude(1), C64::ZERO);

        let z = LinearOperator::zeros(2);
        assert_eq!(z.apply(&v).unwrap().norm(), 0.0);

        assert!(matches!(id.apply(&StateVector::basis_state(3, 0).unwrap()), Err(Error::Usage(_))));
    }

    #[test]
    fn hermitian_check_examples() {
        let c = hermitian_check(&sigma_x(), DEFAULT_TOL);
        assert!(c.hermitian && c.max_deviation == 0.0);

        let a = LinearOperator::from_rows(&[
            vec![C64::ZERO, C64::ONE],
            vec![C64::ZERO, C64::ZERO],
        ])
        .unwrap();
        let c = hermitian_check(&a, DEFAULT_TOL);
        assert!(!c.hermitian);
        assert!((c.max_deviation - 1.0).abs() < 1e-15);

        let d = LinearOperator::from_real_diagonal(&[1.0, 2.0, 3.0]);
        let c = hermitian_check(&d, DEFAULT_TOL);
        assert!(c.hermitian && c.max_deviation == 0.0);
    }

    #[test]
    fn unitarity_for_random_hermitian_generators() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let dim = rng.gen_range(1..=16);
            let h = random_hermitian(&mut rng, dim);
            let t = rng.gen_range(-3.0..3.0);
            let p = propagator(&h, 0.0, t).unwrap();
            assert!(p.unitarity_deviation() <= 1e-10);
        }
    }

    #[test]
    fn norm_conservation_thousand_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let dim = rng.gen_range(1..=8);
            let h = random_hermitian(&mut rng, dim);
            let p = propagator(&h, 0.0, rng.gen_range(0.0..2.0)).unwrap();
            let v = StateVector::new(
                (0..dim)
                    .map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                    .collect(),
            )
            .unwrap();
            let w = p.unitary().apply(&v).unwrap();
            if v.norm() > 0.0 {
                assert!((w.norm() - v.norm()).abs() / v.norm() <= 1e-10);
            }
        }
    }

    #[test]
    fn propagator_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..20 {
            let dim = rng.gen_range(2..=8);
            let h = random_hermitian(&mut rng, dim);
            let (t0, t1, t2) = (0.0, rng.gen_range(0.1..1.0), rng.gen_range(1.1..2.5));
            let direct = propagator(&h, t0, t2).unwrap();
            let stepped = propagator(&h, t1, t2)
                .unwrap()
                .unitary()
                .compose(propagator(&h, t0, t1).unwrap().unitary())
                .unwrap();
            assert!(direct.unitary().sub(&stepped).unwrap().max_abs() <= 1e-9);
        }
    }

    #[test]
    fn taylor_oracle_equivalence() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..50 {
            let dim = rng.gen_range(1..=4);
            let h = random_hermitian(&mut rng, dim);
            // keep ‖H‖Δt ≤ 1 so 30 series terms dominate rounding
            let scale = h.max_abs().max(1e-6) * dim as f64;
            let dt = rng.gen_range(0.0..1.0) / scale;
            let p = propagator(&h, 0.0, dt).unwrap();
            let oracle = taylor_expm(&h, dt);
            assert!(p.unitary().sub(&oracle).unwrap().max_abs() <= 1e-10);
        }
    }
}
