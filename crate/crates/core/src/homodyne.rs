//! Single-mode optics in a truncated Fock basis: coherent probes, photon
//! loss, binned homodyne quadrature functionals and Wigner functions.
//!
//! Quadratures follow `[x, p] = i` (vacuum variance 1/2), with
//! `x_θ = x cos θ + p sin θ` and `⟨n|x_θ⟩ = e^{inθ} ψ_n(x)`.

use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::qstate::{operators_to_affine, DensityMatrix, DetectorModel, OperatorBasis};
use crate::{ComplexMatrix, ComplexVector, RealMatrix};

/// Largest coherent amplitude accepted before truncation errors dominate.
pub const MAX_COHERENT_AMPLITUDE: f64 = 2.0;
/// Squared amplitudes of `|0⟩, |1⟩, |2⟩` in the reference signal, before normalization.
pub const TRUE_SIGNAL_WEIGHTS: [f64; 3] = [0.1, 0.2, 0.3];

/// Unit-norm state vector in the Fock basis `|0⟩ … |d_F − 1⟩`.
#[derive(Debug, Clone, PartialEq)]
pub struct FockVector {
    amps: ComplexVector,
}

impl FockVector {
    /// Normalizes `amps`.
    pub fn new(amps: ComplexVector) -> Result<Self> {
        let norm = amps.norm();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::InvalidState(format!(
                "Fock amplitudes have norm {norm}"
            )));
        }
        Ok(Self {
            amps: amps.unscale(norm),
        })
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amps(&self) -> &ComplexVector {
        &self.amps
    }

    pub fn density_matrix(&self) -> DensityMatrix {
        DensityMatrix::from_pure(&self.amps).expect("unit vector is a valid state")
    }
}

/// Weight `e^{−|α|²} Σ_{n<d_F} |α|^{2n}/n!` of a coherent state inside the truncation.
pub fn coherent_captured_weight(alpha: Complex64, d_f: usize) -> f64 {
    let mean = alpha.norm_sqr();
    let mut term = (-mean).exp();
    let mut total = 0.0;
    for n in 0..d_f {
        if n > 0 {
            term *= mean / n as f64;
        }
        total += term;
    }
    total
}

/// `|α⟩` truncated to `d_F` levels and renormalized.
pub fn coherent_state_fock(alpha: Complex64, d_f: usize) -> Result<FockVector> {
    if alpha.norm() > MAX_COHERENT_AMPLITUDE {
        return Err(Error::InvalidArgument(format!(
            "|alpha| = {} exceeds the truncation guard {MAX_COHERENT_AMPLITUDE}",
            alpha.norm()
        )));
    }
    if d_f == 0 {
        return Err(Error::InvalidArgument("d_F must be >= 1".into()));
    }
    let mut amps = ComplexVector::zeros(d_f);
    let mut c = Complex64::new(1.0, 0.0);
    for n in 0..d_f {
        if n > 0 {
            c *= alpha / (n as f64).sqrt();
        }
        amps[n] = c;
    }
    FockVector::new(amps)
}

/// `(√0.1 |0⟩ + √0.2 |1⟩ + √0.3 |2⟩)`, renormalized, padded to `d_F` levels.
pub fn true_signal(d_f: usize) -> Result<FockVector> {
    if d_f < 3 {
        return Err(Error::InvalidArgument(format!(
            "true signal needs d_F >= 3, got {d_f}"
        )));
    }
    let mut amps = ComplexVector::zeros(d_f);
    for (n, w) in TRUE_SIGNAL_WEIGHTS.iter().enumerate() {
        amps[n] = Complex64::new(w.sqrt(), 0.0);
    }
    FockVector::new(amps)
}

fn check_eta(eta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::InvalidArgument(format!(
            "efficiency must lie in [0, 1], got {eta}"
        )));
    }
    Ok(())
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Kraus operators `A_k = Σ_n √C(n,k) √(η^{n−k}(1−η)^k) |n−k⟩⟨n|` of photon loss.
pub fn loss_kraus(eta: f64, d_f: usize) -> Result<Vec<ComplexMatrix>> {
    check_eta(eta)?;
    Ok((0..d_f)
        .map(|k| {
            let mut a = ComplexMatrix::zeros(d_f, d_f);
            for n in k..d_f {
                let w = binomial(n, k) * eta.powi((n - k) as i32) * (1.0 - eta).powi(k as i32);
                a[(n - k, n)] = Complex64::new(w.sqrt(), 0.0);
            }
            a
        })
        .collect())
}

/// `Σ_k A_k ρ A_k*`, applied to any operator.
pub fn loss_map(op: &ComplexMatrix, eta: f64) -> Result<ComplexMatrix> {
    let kraus = loss_kraus(eta, op.nrows())?;
    Ok(kraus
        .iter()
        .fold(ComplexMatrix::zeros(op.nrows(), op.ncols()), |acc, a| {
            acc + a * op * a.adjoint()
        }))
}

pub fn loss_channel(rho: &DensityMatrix, eta: f64) -> Result<DensityMatrix> {
    let out = loss_map(rho.matrix(), eta)?;
    DensityMatrix::new((&out + out.adjoint()).unscale(2.0))
}

/// Heisenberg-picture loss `Σ_k A_k* O A_k`, so `tr(L(ρ) O) = tr(ρ L*(O))`.
pub fn loss_channel_adjoint(op: &ComplexMatrix, eta: f64) -> Result<ComplexMatrix> {
    let kraus = loss_kraus(eta, op.nrows())?;
    Ok(kraus
        .iter()
        .fold(ComplexMatrix::zeros(op.nrows(), op.ncols()), |acc, a| {
            acc + a.adjoint() * op * a
        }))
}

/// `ψ_0(x) … ψ_{count−1}(x)` with `ψ_n = π^{−1/4}(2ⁿn!)^{−1/2} H_n(x) e^{−x²/2}`,
/// by the three-term recursion on the normalized functions.
pub fn hermite_functions(x: f64, count: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(count);
    if count == 0 {
        return out;
    }
    out.push(std::f64::consts::PI.powf(-0.25) * (-x * x / 2.0).exp());
    if count > 1 {
        out.push(std::f64::consts::SQRT_2 * x * out[0]);
    }
    for n in 1..count.saturating_sub(1) {
        let next = (2.0 / (n + 1) as f64).sqrt() * x * out[n]
            - (n as f64 / (n + 1) as f64).sqrt() * out[n - 1];
        out.push(next);
    }
    out
}

/// A quadrature reading `x` at phase `θ ∈ [0, π)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureOutcome {
    theta: f64,
    x: f64,
}

impl QuadratureOutcome {
    pub fn new(theta: f64, x: f64, x_max: f64) -> Result<Self> {
        if !(0.0..std::f64::consts::PI).contains(&theta) {
            return Err(Error::InvalidArgument(format!(
                "theta = {theta} outside [0, pi)"
            )));
        }
        if !(x.abs() <= x_max) {
            return Err(Error::InvalidArgument(format!(
                "|x| = {} exceeds x_max = {x_max}",
                x.abs()
            )));
        }
        Ok(Self { theta, x })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn x(&self) -> f64 {
        self.x
    }
}

/// `⟨n|x_θ⟩ = e^{inθ} ψ_n(x)` for `n < d_F`, at any phase.
pub fn quadrature_ket(theta: f64, x: f64, d_f: usize) -> ComplexVector {
    let psi = hermite_functions(x, d_f);
    ComplexVector::from_fn(d_f, |n, _| Complex64::from_polar(psi[n], n as f64 * theta))
}

/// `|x_θ⟩⟨x_θ|` restricted to the truncated space.
pub fn quadrature_functional(outcome: &QuadratureOutcome, d_f: usize) -> ComplexMatrix {
    let k = quadrature_ket(outcome.theta, outcome.x, d_f);
    &k * k.adjoint()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomodyneConfig {
    pub eta: f64,
    pub bin_width: f64,
    pub x_max: f64,
}

impl Default for HomodyneConfig {
    fn default() -> Self {
        Self {
            eta: 0.8,
            bin_width: 0.1,
            x_max: 5.0,
        }
    }
}

impl HomodyneConfig {
    pub fn validate(&self) -> Result<()> {
        check_eta(self.eta)?;
        if !(self.bin_width > 0.0) || !(self.x_max > 0.0) {
            return Err(Error::InvalidArgument(
                "bin_width and x_max must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// `m` binned quadrature readings and the operators `O_j` with
/// `p_j = tr(ρ O_j) = Δx · tr(L_η(ρ) |x_θ⟩⟨x_θ|)`.
#[derive(Debug, Clone)]
pub struct HomodyneMeasurement {
    pub outcomes: Vec<QuadratureOutcome>,
    pub functionals: Vec<ComplexMatrix>,
}

impl HomodyneMeasurement {
    pub fn from_outcomes(
        outcomes: Vec<QuadratureOutcome>,
        config: &HomodyneConfig,
        d_f: usize,
    ) -> Result<Self> {
        config.validate()?;
        let functionals = outcomes
            .iter()
            .map(|o| {
                loss_channel_adjoint(&quadrature_functional(o, d_f), config.eta)
                    .map(|op| op.scale(config.bin_width))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            outcomes,
            functionals,
        })
    }

    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    /// The first `m` readings.
    pub fn prefix(&self, m: usize) -> Self {
        Self {
            outcomes: self.outcomes[..m].to_vec(),
            functionals: self.functionals[..m].to_vec(),
        }
    }

    pub fn probabilities(&self, rho: &ComplexMatrix) -> crate::RealVector {
        crate::RealVector::from_iterator(
            self.functionals.len(),
            self.functionals
                .iter()
                .map(|o| crate::qstate::trace_product(rho, o).re),
        )
    }

    pub fn detector(&self, basis: &OperatorBasis) -> Result<DetectorModel> {
        operators_to_affine(&self.functionals, basis)
    }
}

/// Draws `θ ~ U[0, π)` and `x ~ U[−x_max, x_max]` for each of `m` readings.
pub fn homodyne_measurement<R: Rng + ?Sized>(
    m: usize,
    config: &HomodyneConfig,
    d_f: usize,
    rng: &mut R,
) -> Result<HomodyneMeasurement> {
    if m == 0 {
        return Err(Error::InvalidArgument("m must be >= 1".into()));
    }
    config.validate()?;
    let outcomes = (0..m)
        .map(|_| {
            let theta = rng.random_range(0.0..std::f64::consts::PI);
            let x = rng.random_range(-config.x_max..=config.x_max);
            QuadratureOutcome::new(theta, x, config.x_max)
        })
        .collect::<Result<Vec<_>>>()?;
    HomodyneMeasurement::from_outcomes(outcomes, config, d_f)
}

/// Uniform phase-space grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub x_points: usize,
    pub p_min: f64,
    pub p_max: f64,
    pub p_points: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            x_min: -5.0,
            x_max: 5.0,
            x_points: 201,
            p_min: -5.0,
            p_max: 5.0,
            p_points: 201,
        }
    }
}

fn axis(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points == 1 {
        return vec![lo];
    }
    let step = (hi - lo) / (points - 1) as f64;
    (0..points).map(|i| lo + step * i as f64).collect()
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.x_points < 2
            || self.p_points < 2
            || !(self.x_max > self.x_min)
            || !(self.p_max > self.p_min)
        {
            return Err(Error::InvalidArgument(format!(
                "degenerate Wigner grid {self:?}"
            )));
        }
        Ok(())
    }
}

/// `W(x_i, p_j)` stored with rows along `x` and columns along `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct WignerGrid {
    pub x_axis: Vec<f64>,
    pub p_axis: Vec<f64>,
    pub values: RealMatrix,
}

impl WignerGrid {
    /// `Σ W Δx Δp`
    pub fn normalization(&self) -> f64 {
        let dx = self.x_axis[1] - self.x_axis[0];
        let dp = self.p_axis[1] - self.p_axis[0];
        self.values.sum() * dx * dp
    }

    pub fn min(&self) -> f64 {
        self.values.min()
    }

    pub fn max(&self) -> f64 {
        self.values.max()
    }
}

/// Kernel `⟨m|D(2α)P|n⟩` of the displaced parity for all `m, n < dim`,
/// with `α = (x + ip)/√2`.
fn parity_kernel(x: f64, p: f64, dim: usize) -> ComplexMatrix {
    let beta = Complex64::new(x, p) * std::f64::consts::SQRT_2;
    let b2 = beta.norm_sqr();
    let gauss = (-b2 / 2.0).exp();
    let mut k = ComplexMatrix::zeros(dim, dim);
    for diff in 0..dim {
        // L_n^{(diff)}(|β|²) for n = 0 .. dim − diff − 1
        let a = diff as f64;
        let count = dim - diff;
        let mut lag = Vec::with_capacity(count);
        lag.push(1.0);
        if count > 1 {
            lag.push(1.0 + a - b2);
        }
        for n in 1..count.saturating_sub(1) {
            let nf = n as f64;
            lag.push(((2.0 * nf + 1.0 + a - b2) * lag[n] - (nf + a) * lag[n - 1]) / (nf + 1.0));
        }
        let beta_pow = beta.powu(diff as u32);
        let conj_pow = (-beta.conj()).powu(diff as u32);
        let mut ratio = 1.0;
        for n in 0..count {
            let m = n + diff;
            // √(n!/m!)
            if n > 0 {
                ratio *= (n as f64 / m as f64).sqrt();
            } else {
                ratio = (1..=diff).fold(1.0, |acc, j| acc / (j as f64).sqrt());
            }
            let common = ratio * gauss * lag[n];
            let sign_n = if n % 2 == 0 { 1.0 } else { -1.0 };
            let sign_m = if m % 2 == 0 { 1.0 } else { -1.0 };
            // ⟨m|D(β)|n⟩ (−1)ⁿ and its partner ⟨n|D(β)|m⟩ (−1)^m
            k[(m, n)] = beta_pow * common * sign_n;
            if diff > 0 {
                k[(n, m)] = conj_pow * common * sign_m;
            }
        }
    }
    k
}

/// `W(x, p) = (1/π) Σ ρ_nm ⟨m|D(2α)P|n⟩` for any Hermitian operator in the Fock basis.
pub fn wigner_point(rho: &ComplexMatrix, x: f64, p: f64) -> f64 {
    let k = parity_kernel(x, p, rho.nrows());
    crate::qstate::trace_product(rho, &k).re / std::f64::consts::PI
}

/// Wigner function on a grid; `rho` may be an unphysical reconstruction.
pub fn wigner(rho: &ComplexMatrix, grid: &GridSpec) -> Result<WignerGrid> {
    grid.validate()?;
    if rho.nrows() != rho.ncols() {
        return Err(Error::InvalidArgument(format!(
            "operator shape {:?} is not square",
            rho.shape()
        )));
    }
    let x_axis = axis(grid.x_min, grid.x_max, grid.x_points);
    let p_axis = axis(grid.p_min, grid.p_max, grid.p_points);
    let values = RealMatrix::from_fn(x_axis.len(), p_axis.len(), |i, j| {
        wigner_point(rho, x_axis[i], p_axis[j])
    });
    Ok(WignerGrid {
        x_axis,
        p_axis,
        values,
    })
}
