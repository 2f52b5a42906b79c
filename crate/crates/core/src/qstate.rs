//! Finite-dimensional quantum objects and their real (Bloch) coordinates.
//!
//! A state is written `ρ = 𝟙/d + Σᵢ rᵢ Γᵢ` and a measurement element
//! `Π = b 𝟙 + Σₖ aₖ Γₖ` in a traceless orthonormal Hermitian basis `{Γᵢ}`,
//! which turns the Born rule into the affine map `p = b + A r`.

use nalgebra::linalg::SymmetricEigen;
use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::matlib::{gaussian_matrix, hs_norm, Scalar};
use crate::{ComplexMatrix, ComplexVector, RealMatrix, RealVector};

const HERMITIAN_TOL: f64 = 1e-12;
const TRACE_TOL: f64 = 1e-10;
const PSD_TOL: f64 = 1e-10;
const COMPLETENESS_TOL: f64 = 1e-9;
/// Relative eigenvalue floor for `G^{-1/2}` in the square-root measurement.
pub const GRAM_EIGEN_FLOOR: f64 = 1e-12;

/// `tr(a b)` without forming the product.
pub fn trace_product(a: &ComplexMatrix, b: &ComplexMatrix) -> Complex64 {
    let n = a.nrows();
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..n {
        for j in 0..a.ncols() {
            acc += a[(i, j)] * b[(j, i)];
        }
    }
    acc
}

fn hermiticity_defect(m: &ComplexMatrix) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..m.nrows() {
        for j in i..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

fn min_eigenvalue(m: &ComplexMatrix) -> f64 {
    let herm = (m + m.adjoint()).unscale(2.0);
    SymmetricEigen::new(herm)
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

fn check_square(op: &'static str, m: &ComplexMatrix, dim: usize) -> Result<()> {
    if m.nrows() != dim || m.ncols() != dim {
        return Err(Error::DimensionMismatch {
            op,
            expected: dim,
            got: m.nrows().max(m.ncols()),
        });
    }
    Ok(())
}

/// Traceless Hermitian basis with `tr(Γᵢ Γⱼ) = δᵢⱼ`.
#[derive(Debug, Clone)]
pub struct OperatorBasis {
    dim: usize,
    gammas: Vec<ComplexMatrix>,
}

impl OperatorBasis {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of real parameters, `d² − 1`.
    pub fn len(&self) -> usize {
        self.gammas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gammas.is_empty()
    }

    pub fn gammas(&self) -> &[ComplexMatrix] {
        &self.gammas
    }

    /// Largest deviation from `tr(Γᵢ)=0`, `Γᵢ=Γᵢ*` and `tr(ΓᵢΓⱼ)=δᵢⱼ`.
    pub fn orthonormality_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, gi) in self.gammas.iter().enumerate() {
            worst = worst.max(gi.trace().norm()).max(hermiticity_defect(gi));
            for (j, gj) in self.gammas.iter().enumerate() {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((trace_product(gi, gj) - target).norm());
            }
        }
        worst
    }
}

/// Generalized Gell-Mann basis, normalized to `tr(Γ²) = 1`: the symmetric
/// off-diagonal family, then the antisymmetric one, then the diagonal
/// matrices `diag(1,…,1,−l,0,…)/√(l(l+1))`.
pub fn gellmann_basis(d: usize) -> Result<OperatorBasis> {
    if d < 2 {
        return Err(Error::InvalidArgument(format!(
            "operator basis needs d >= 2, got {d}"
        )));
    }
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let zero = ComplexMatrix::zeros(d, d);
    let mut gammas = Vec::with_capacity(d * d - 1);
    for j in 0..d {
        for k in (j + 1)..d {
            let mut g = zero.clone();
            g[(j, k)] = Complex64::new(s, 0.0);
            g[(k, j)] = Complex64::new(s, 0.0);
            gammas.push(g);
        }
    }
    for j in 0..d {
        for k in (j + 1)..d {
            let mut g = zero.clone();
            g[(j, k)] = Complex64::new(0.0, -s);
            g[(k, j)] = Complex64::new(0.0, s);
            gammas.push(g);
        }
    }
    for l in 1..d {
        let norm = 1.0 / ((l * (l + 1)) as f64).sqrt();
        let mut g = zero.clone();
        for i in 0..l {
            g[(i, i)] = Complex64::new(norm, 0.0);
        }
        g[(l, l)] = Complex64::new(-(l as f64) * norm, 0.0);
        gammas.push(g);
    }
    Ok(OperatorBasis { dim: d, gammas })
}

/// Hermitian, unit-trace, positive semidefinite `d × d` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    mat: ComplexMatrix,
}

impl DensityMatrix {
    pub fn new(mat: ComplexMatrix) -> Result<Self> {
        if mat.nrows() != mat.ncols() || mat.nrows() == 0 {
            return Err(Error::InvalidState(format!(
                "shape {:?} is not square",
                mat.shape()
            )));
        }
        let herm = hermiticity_defect(&mat);
        if herm > HERMITIAN_TOL {
            return Err(Error::InvalidState(format!(
                "Hermiticity defect {herm:.3e}"
            )));
        }
        let tr = mat.trace();
        if (tr - 1.0).norm() > TRACE_TOL {
            return Err(Error::InvalidState(format!("trace {tr}")));
        }
        let min = min_eigenvalue(&mat);
        if min < -PSD_TOL {
            return Err(Error::InvalidState(format!(
                "smallest eigenvalue {min:.3e}"
            )));
        }
        Ok(Self { mat })
    }

    pub fn from_pure(psi: &ComplexVector) -> Result<Self> {
        let norm = psi.norm();
        if !(norm > 0.0) {
            return Err(Error::InvalidState("zero state vector".into()));
        }
        let psi = psi.unscale(norm);
        Self::new(&psi * psi.adjoint())
    }

    pub fn maximally_mixed(d: usize) -> Self {
        Self {
            mat: ComplexMatrix::identity(d, d).unscale(d as f64),
        }
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.mat
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.mat
    }

    pub fn purity(&self) -> f64 {
        trace_product(&self.mat, &self.mat).re
    }
}

/// Real coordinates `rᵢ = tr(ρ Γᵢ)` of a state or of an unconstrained
/// estimate of one.
#[derive(Debug, Clone, PartialEq)]
pub struct BlochVector {
    dim: usize,
    r: RealVector,
}

impl BlochVector {
    pub fn new(dim: usize, r: RealVector) -> Result<Self> {
        if r.len() + 1 != dim * dim {
            return Err(Error::DimensionMismatch {
                op: "BlochVector::new",
                expected: dim * dim - 1,
                got: r.len(),
            });
        }
        Ok(Self { dim, r })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn coords(&self) -> &RealVector {
        &self.r
    }

    /// `(1, r)`, the coordinates used by the protocols.
    pub fn augmented(&self) -> RealVector {
        let mut v = RealVector::zeros(self.r.len() + 1);
        v[0] = 1.0;
        v.rows_mut(1, self.r.len()).copy_from(&self.r);
        v
    }

    /// `√((d−1)/d)`, the radius of pure states in an orthonormal basis.
    pub fn pure_state_radius(dim: usize) -> f64 {
        ((dim as f64 - 1.0) / dim as f64).sqrt()
    }

    /// Whether `‖r‖` respects the pure-state radius (plus `1e-9` slack).
    /// Linear estimates are allowed to fail this.
    pub fn within_pure_state_radius(&self) -> bool {
        self.r.norm() <= Self::pure_state_radius(self.dim) + 1e-9
    }
}

fn check_basis(op: &'static str, basis: &OperatorBasis, dim: usize) -> Result<()> {
    if basis.dim() != dim {
        return Err(Error::DimensionMismatch {
            op,
            expected: basis.dim(),
            got: dim,
        });
    }
    Ok(())
}

pub fn state_to_bloch(rho: &DensityMatrix, basis: &OperatorBasis) -> Result<BlochVector> {
    check_basis("state_to_bloch", basis, rho.dim())?;
    let r = RealVector::from_iterator(
        basis.len(),
        basis
            .gammas()
            .iter()
            .map(|g| trace_product(rho.matrix(), g).re),
    );
    BlochVector::new(rho.dim(), r)
}

/// `𝟙/d + Σ rᵢ Γᵢ` with no physicality check.
pub fn bloch_to_operator(r: &BlochVector, basis: &OperatorBasis) -> Result<ComplexMatrix> {
    check_basis("bloch_to_operator", basis, r.dim())?;
    let d = basis.dim();
    let mut m = ComplexMatrix::identity(d, d).unscale(d as f64);
    for (ri, g) in r.coords().iter().zip(basis.gammas()) {
        m += g.scale(*ri);
    }
    Ok(m)
}

pub fn bloch_to_state(r: &BlochVector, basis: &OperatorBasis) -> Result<DensityMatrix> {
    DensityMatrix::new(bloch_to_operator(r, basis)?)
}

/// Positive operators summing to the identity.
#[derive(Debug, Clone)]
pub struct Povm {
    dim: usize,
    elements: Vec<ComplexMatrix>,
}

impl Povm {
    pub fn new(elements: Vec<ComplexMatrix>) -> Result<Self> {
        let first = elements
            .first()
            .ok_or_else(|| Error::InvalidPovm("no elements".into()))?;
        let dim = first.nrows();
        let mut total = ComplexMatrix::zeros(dim, dim);
        for (j, e) in elements.iter().enumerate() {
            check_square("Povm::new", e, dim)?;
            let herm = hermiticity_defect(e);
            if herm > PSD_TOL {
                return Err(Error::InvalidPovm(format!(
                    "element {j} Hermiticity defect {herm:.3e}"
                )));
            }
            let min = min_eigenvalue(e);
            if min < -PSD_TOL {
                return Err(Error::InvalidPovm(format!(
                    "element {j} has eigenvalue {min:.3e}"
                )));
            }
            total += e;
        }
        let defect = hs_norm(&(total - ComplexMatrix::identity(dim, dim)));
        if defect > COMPLETENESS_TOL {
            return Err(Error::InvalidPovm(format!(
                "completeness defect {defect:.3e}"
            )));
        }
        Ok(Self { dim, elements })
    }

    /// Projective measurement in the computational basis.
    pub fn computational(d: usize) -> Self {
        let elements = (0..d)
            .map(|k| {
                let mut e = ComplexMatrix::zeros(d, d);
                e[(k, k)] = Complex64::new(1.0, 0.0);
                e
            })
            .collect();
        Self { dim: d, elements }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn elements(&self) -> &[ComplexMatrix] {
        &self.elements
    }
}

/// Affine detector response `p = b + A r` in Bloch coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorModel {
    pub offset: RealVector,
    pub amatrix: RealMatrix,
}

impl DetectorModel {
    pub fn outcomes(&self) -> usize {
        self.offset.len()
    }

    pub fn params(&self) -> usize {
        self.amatrix.ncols()
    }

    /// `[b | A]`, acting on augmented coordinates `(1, r)`.
    pub fn augmented(&self) -> RealMatrix {
        let (m, n) = self.amatrix.shape();
        let mut out = RealMatrix::zeros(m, n + 1);
        out.set_column(0, &self.offset);
        out.columns_mut(1, n).copy_from(&self.amatrix);
        out
    }

    pub fn probabilities(&self, r: &BlochVector) -> Result<RealVector> {
        if r.coords().len() != self.params() {
            return Err(Error::DimensionMismatch {
                op: "DetectorModel::probabilities",
                expected: self.params(),
                got: r.coords().len(),
            });
        }
        Ok(&self.offset + &self.amatrix * r.coords())
    }
}

/// Affine coefficients `b_j = tr(O_j)/d`, `a_jk = tr(O_j Γ_k)` of arbitrary
/// Hermitian operators (POVM elements or any linear measurement functionals).
pub fn operators_to_affine(ops: &[ComplexMatrix], basis: &OperatorBasis) -> Result<DetectorModel> {
    let d = basis.dim();
    let n = basis.len();
    let mut offset = RealVector::zeros(ops.len());
    let mut amatrix = RealMatrix::zeros(ops.len(), n);
    for (j, op) in ops.iter().enumerate() {
        check_square("operators_to_affine", op, d)?;
        offset[j] = op.trace().re / d as f64;
        for (k, g) in basis.gammas().iter().enumerate() {
            amatrix[(j, k)] = trace_product(op, g).re;
        }
    }
    Ok(DetectorModel { offset, amatrix })
}

pub fn povm_to_affine(povm: &Povm, basis: &OperatorBasis) -> Result<DetectorModel> {
    check_basis("povm_to_affine", basis, povm.dim())?;
    operators_to_affine(povm.elements(), basis)
}

/// Born rule `p_j = tr(ρ Π_j)`.
pub fn born_probabilities(rho: &DensityMatrix, povm: &Povm) -> Result<RealVector> {
    if rho.dim() != povm.dim() {
        return Err(Error::DimensionMismatch {
            op: "born_probabilities",
            expected: povm.dim(),
            got: rho.dim(),
        });
    }
    Ok(RealVector::from_iterator(
        povm.len(),
        povm.elements()
            .iter()
            .map(|e| trace_product(rho.matrix(), e).re),
    ))
}

/// Haar-random pure state: normalized vector of i.i.d. complex Gaussians.
pub fn haar_random_pure<R: Rng + ?Sized>(d: usize, rng: &mut R) -> ComplexVector {
    loop {
        let v = ComplexVector::from_fn(d, |_, _| Complex64::standard_normal(rng));
        let n = v.norm();
        if n > 0.0 {
            return v.unscale(n);
        }
    }
}

/// Hilbert–Schmidt random mixed state `GG*/tr(GG*)` for a Ginibre `G`.
pub fn random_density_hs<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DensityMatrix {
    let g: ComplexMatrix = gaussian_matrix(d, d, rng);
    let w = &g * g.adjoint();
    let tr = w.trace().re;
    // GG* is Hermitian up to rounding in the products; symmetrize exactly
    let w = (&w + w.adjoint()).unscale(2.0 * tr);
    DensityMatrix { mat: w }
}

/// Square-root ("pretty good") measurement `Π_j = G^{-1/2}|φ_j⟩⟨φ_j|G^{-1/2}`
/// with `G = Σ_j |φ_j⟩⟨φ_j|`.
pub fn square_root_measurement(states: &[ComplexVector]) -> Result<Povm> {
    let d = states
        .first()
        .map(|s| s.len())
        .ok_or_else(|| Error::InvalidPovm("no states".into()))?;
    if states.len() < d {
        return Err(Error::InvalidArgument(format!(
            "square-root measurement needs at least d = {d} states, got {}",
            states.len()
        )));
    }
    let mut gram = ComplexMatrix::zeros(d, d);
    for s in states {
        if s.len() != d {
            return Err(Error::DimensionMismatch {
                op: "square_root_measurement",
                expected: d,
                got: s.len(),
            });
        }
        gram += s * s.adjoint();
    }
    let eig = SymmetricEigen::new(gram);
    let max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let min = eig
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let floor = GRAM_EIGEN_FLOOR * max;
    if !(min > floor) {
        return Err(Error::RankDeficientGram {
            min_eigenvalue: min,
            floor,
        });
    }
    let mut scaled = eig.eigenvectors.clone();
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        scaled.column_mut(k).unscale_mut(lam.sqrt());
    }
    let inv_sqrt = scaled * eig.eigenvectors.adjoint();
    let elements = states
        .iter()
        .map(|s| {
            let w = &inv_sqrt * s;
            &w * w.adjoint()
        })
        .collect();
    Povm::new(elements)
}
