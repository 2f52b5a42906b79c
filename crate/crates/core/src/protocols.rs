//! Standard and data-pattern linear-inversion tomography.
//!
//! Probe states are stored columnwise in augmented form `R = [(1, r_α)]`
//! and their measured patterns columnwise in `F`. The standard protocol
//! calibrates the detector first and inverts it, `A_s = (F R⁺)⁺`; the
//! data-pattern protocol fits data by patterns and mixes the probes with
//! the same weights, `A_p = R F⁺`.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matlib::{gw_decompose, hs_norm, pinv, svd};
use crate::qstate::{
    haar_random_pure, random_density_hs, state_to_bloch, BlochVector, DensityMatrix, DetectorModel,
    OperatorBasis,
};
use crate::rngstream::{stream, Role};
use crate::{RealMatrix, RealVector};

/// Leading-coordinate magnitude below which an estimate cannot be renormalized.
pub const NORMALIZATION_FLOOR: f64 = 1e-6;
/// Fraction of failed trials that may be dropped from an MSE average.
pub const MAX_FAILURE_FRACTION: f64 = 0.01;

fn exact_sqrt(k: usize) -> Option<usize> {
    let r = (k as f64).sqrt().round() as usize;
    (r * r == k).then_some(r)
}

/// Probe states, column `α` holding `(1, r_α)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSet {
    r_matrix: RealMatrix,
}

impl ProbeSet {
    /// Checks the unit first row and, when `n + 1` is a perfect square `d²`,
    /// the Bloch-ball bound of each column.
    pub fn new(r_matrix: RealMatrix) -> Result<Self> {
        let (rows, cols) = r_matrix.shape();
        if rows < 2 || cols == 0 {
            return Err(Error::InvalidArgument(format!(
                "probe matrix has shape {rows}x{cols}"
            )));
        }
        if r_matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { rows, cols });
        }
        if r_matrix.row(0).iter().any(|&v| v != 1.0) {
            return Err(Error::InvalidArgument(
                "probe matrix first row must be all ones".into(),
            ));
        }
        if let Some(d) = exact_sqrt(rows) {
            let radius = BlochVector::pure_state_radius(d) + 1e-9;
            for (a, col) in r_matrix.column_iter().enumerate() {
                let norm = col.rows(1, rows - 1).norm();
                if norm > radius {
                    return Err(Error::InvalidState(format!(
                        "probe {a} has Bloch norm {norm:.6} > {radius:.6}"
                    )));
                }
            }
        }
        Ok(Self { r_matrix })
    }

    pub fn from_bloch(probes: &[BlochVector]) -> Result<Self> {
        let first = probes
            .first()
            .ok_or_else(|| Error::InvalidArgument("no probes".into()))?;
        let rows = first.coords().len() + 1;
        let mut r = RealMatrix::zeros(rows, probes.len());
        for (a, p) in probes.iter().enumerate() {
            if p.coords().len() + 1 != rows {
                return Err(Error::DimensionMismatch {
                    op: "ProbeSet::from_bloch",
                    expected: rows - 1,
                    got: p.coords().len(),
                });
            }
            r.set_column(a, &p.augmented());
        }
        Self::new(r)
    }

    pub fn matrix(&self) -> &RealMatrix {
        &self.r_matrix
    }

    /// Number of probes `M`.
    pub fn len(&self) -> usize {
        self.r_matrix.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.r_matrix.ncols() == 0
    }

    /// Physical parameter count `n`.
    pub fn params(&self) -> usize {
        self.r_matrix.nrows() - 1
    }

    /// The first `count` probes.
    pub fn prefix(&self, count: usize) -> Result<Self> {
        if count == 0 || count > self.len() {
            return Err(Error::InvalidArgument(format!(
                "prefix {count} of {} probes",
                self.len()
            )));
        }
        Ok(Self {
            r_matrix: self.r_matrix.columns(0, count).into_owned(),
        })
    }
}

/// Measured patterns, column `α` answering probe `α`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternSet {
    f_matrix: RealMatrix,
}

impl PatternSet {
    pub fn new(f_matrix: RealMatrix) -> Result<Self> {
        let (rows, cols) = f_matrix.shape();
        if rows == 0 || cols == 0 {
            return Err(Error::Empty { rows, cols });
        }
        if f_matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { rows, cols });
        }
        Ok(Self { f_matrix })
    }

    pub fn matrix(&self) -> &RealMatrix {
        &self.f_matrix
    }

    /// Number of outcomes `m`.
    pub fn outcomes(&self) -> usize {
        self.f_matrix.nrows()
    }

    /// Number of patterns `M`.
    pub fn len(&self) -> usize {
        self.f_matrix.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.f_matrix.ncols() == 0
    }

    pub fn prefix(&self, count: usize) -> Result<Self> {
        if count == 0 || count > self.len() {
            return Err(Error::InvalidArgument(format!(
                "prefix {count} of {} patterns",
                self.len()
            )));
        }
        Ok(Self {
            f_matrix: self.f_matrix.columns(0, count).into_owned(),
        })
    }
}

/// Additive noise model for measured frequency vectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseSpec {
    /// `Δp` uniform on the sphere `‖Δp‖ = ε`.
    FixedStrength(f64),
    /// i.i.d. Gaussian entries with `σ = ratio · rms(p)`.
    Ratio(f64),
}

impl NoiseSpec {
    pub fn fixed_strength(epsilon: f64) -> Result<Self> {
        Self::FixedStrength(epsilon).validated()
    }

    pub fn ratio(ratio: f64) -> Result<Self> {
        Self::Ratio(ratio).validated()
    }

    pub fn none() -> Self {
        Self::Ratio(0.0)
    }

    pub fn value(&self) -> f64 {
        match *self {
            Self::FixedStrength(v) | Self::Ratio(v) => v,
        }
    }

    fn validated(self) -> Result<Self> {
        let v = self.value();
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "noise level must be finite and >= 0, got {v}"
            )));
        }
        Ok(self)
    }
}

/// Point uniformly distributed on the sphere of radius `radius` in `ℝ^len`.
pub fn sphere_uniform<R: Rng + ?Sized>(len: usize, radius: f64, rng: &mut R) -> RealVector {
    loop {
        let v = RealVector::from_fn(len, |_, _| rng.sample::<f64, _>(StandardNormal));
        let n = v.norm();
        if n > 0.0 {
            return v * (radius / n);
        }
    }
}

fn rms(p: &RealVector) -> f64 {
    (p.norm_squared() / p.len().max(1) as f64).sqrt()
}

pub fn add_noise<R: Rng + ?Sized>(p: &RealVector, spec: NoiseSpec, rng: &mut R) -> RealVector {
    if spec.value() == 0.0 || p.is_empty() {
        return p.clone();
    }
    match spec {
        NoiseSpec::FixedStrength(eps) => p + sphere_uniform(p.len(), eps, rng),
        NoiseSpec::Ratio(ratio) => {
            let sigma = ratio * rms(p);
            p.map(|v| v + sigma * rng.sample::<f64, _>(StandardNormal))
        }
    }
}

/// Column `α` is `add_noise([b | A]·(1, r_α))`, drawn in column order so a
/// longer probe list extends a shorter one with the same rng.
pub fn collect_patterns<R: Rng + ?Sized>(
    detector: &DetectorModel,
    probes: &ProbeSet,
    spec: NoiseSpec,
    rng: &mut R,
) -> Result<PatternSet> {
    let forward = detector.augmented();
    if forward.ncols() != probes.matrix().nrows() {
        return Err(Error::DimensionMismatch {
            op: "collect_patterns",
            expected: forward.ncols(),
            got: probes.matrix().nrows(),
        });
    }
    let mut f = RealMatrix::zeros(forward.nrows(), probes.len());
    for (a, col) in probes.matrix().column_iter().enumerate() {
        let p = &forward * col;
        f.set_column(a, &add_noise(&p, spec, rng));
    }
    PatternSet::new(f)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InversionKind {
    Standard,
    DataPattern,
    Oracle,
}

impl InversionKind {
    pub fn label(&self) -> &'static str {
        match self {
            Self::Standard => "standard",
            Self::DataPattern => "data-pattern",
            Self::Oracle => "oracle",
        }
    }
}

/// `(n+1) × m` matrix mapping data to augmented state coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct InversionMatrix {
    kind: InversionKind,
    matrix: RealMatrix,
    hs_norm_value: f64,
}

impl InversionMatrix {
    pub fn new(kind: InversionKind, matrix: RealMatrix) -> Self {
        let hs_norm_value = hs_norm(&matrix);
        Self {
            kind,
            matrix,
            hs_norm_value,
        }
    }

    pub fn kind(&self) -> InversionKind {
        self.kind
    }

    pub fn matrix(&self) -> &RealMatrix {
        &self.matrix
    }

    pub fn hs_norm(&self) -> f64 {
        self.hs_norm_value
    }

    /// Trailing `n` rows, acting on data to give unnormalized Bloch coordinates.
    pub fn deaugmented(&self) -> RealMatrix {
        self.matrix.rows(1, self.matrix.nrows() - 1).into_owned()
    }
}

fn check_probe_count(op: &'static str, f: &PatternSet, r: &ProbeSet) -> Result<()> {
    if f.len() != r.len() {
        return Err(Error::ShapeMismatch {
            op,
            left: f.matrix().shape(),
            right: r.matrix().shape(),
        });
    }
    Ok(())
}

/// `A_s = (F R⁺)⁺`.
pub fn standard_inversion_matrix(
    f: &PatternSet,
    r: &ProbeSet,
    rtol: Option<f64>,
) -> Result<InversionMatrix> {
    check_probe_count("standard_inversion_matrix", f, r)?;
    let calibrated = f.matrix() * pinv(r.matrix(), rtol)?;
    Ok(InversionMatrix::new(
        InversionKind::Standard,
        pinv(&calibrated, rtol)?,
    ))
}

/// `A_p = R F⁺`.
pub fn pattern_inversion_matrix(
    f: &PatternSet,
    r: &ProbeSet,
    rtol: Option<f64>,
) -> Result<InversionMatrix> {
    check_probe_count("pattern_inversion_matrix", f, r)?;
    Ok(InversionMatrix::new(
        InversionKind::DataPattern,
        r.matrix() * pinv(f.matrix(), rtol)?,
    ))
}

/// `[b | A]⁺` of the true detector.
pub fn oracle_inversion_matrix(
    detector: &DetectorModel,
    rtol: Option<f64>,
) -> Result<InversionMatrix> {
    Ok(InversionMatrix::new(
        InversionKind::Oracle,
        pinv(&detector.augmented(), rtol)?,
    ))
}

/// Pattern-fit weights `x = F⁺ f`; the data-pattern estimate is `R x`.
pub fn pattern_fit(f: &PatternSet, data: &RealVector, rtol: Option<f64>) -> Result<RealVector> {
    if data.len() != f.outcomes() {
        return Err(Error::DimensionMismatch {
            op: "pattern_fit",
            expected: f.outcomes(),
            got: data.len(),
        });
    }
    Ok(pinv(f.matrix(), rtol)? * data)
}

/// Unconstrained Bloch coordinates `r̃[1..] / r̃[0]` with `r̃ = A f`.
pub fn estimate_coords(inv: &InversionMatrix, data: &RealVector) -> Result<RealVector> {
    if data.len() != inv.matrix.ncols() {
        return Err(Error::DimensionMismatch {
            op: "estimate",
            expected: inv.matrix.ncols(),
            got: data.len(),
        });
    }
    let aug = &inv.matrix * data;
    let lead = aug[0];
    if !(lead.abs() > NORMALIZATION_FLOOR) {
        return Err(Error::DegenerateNormalization(lead));
    }
    Ok(aug.rows(1, aug.len() - 1) / lead)
}

/// LIN estimate. The result may lie outside the Bloch ball.
pub fn estimate(inv: &InversionMatrix, data: &RealVector) -> Result<BlochVector> {
    let rows = inv.matrix.nrows();
    let d = exact_sqrt(rows).ok_or_else(|| {
        Error::InvalidArgument(format!("{rows} augmented coordinates is not a square d²"))
    })?;
    BlochVector::new(d, estimate_coords(inv, data)?)
}

/// `ε²‖A‖²/m` for a matrix used as is.
pub fn mse_model(a: &RealMatrix, epsilon: f64, m: usize) -> Result<f64> {
    if !(epsilon >= 0.0) || m == 0 {
        return Err(Error::InvalidArgument(format!(
            "mse model needs epsilon >= 0 and m >= 1, got {epsilon}, {m}"
        )));
    }
    Ok(epsilon * epsilon * hs_norm(a).powi(2) / m as f64)
}

/// `ε²‖A‖²/m` with `A` the de-augmented inversion matrix.
pub fn mse_theoretical(inv: &InversionMatrix, epsilon: f64, m: usize) -> Result<f64> {
    mse_model(&inv.deaugmented(), epsilon, m)
}

/// How true states are drawn in Monte-Carlo MSE estimates.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum TruthEnsemble {
    #[default]
    HilbertSchmidt,
    HaarPure,
    /// The same state in every trial; only the data noise varies.
    Fixed(DensityMatrix),
}

impl TruthEnsemble {
    pub fn draw<R: Rng + ?Sized>(&self, d: usize, rng: &mut R) -> DensityMatrix {
        match self {
            Self::HilbertSchmidt => random_density_hs(d, rng),
            Self::HaarPure => DensityMatrix::from_pure(&haar_random_pure(d, rng))
                .expect("normalized Haar vector is a valid state"),
            Self::Fixed(rho) => rho.clone(),
        }
    }
}

/// One measurement ensemble: true detector, probes, patterns and the two
/// inversion matrices built from them.
#[derive(Debug, Clone)]
pub struct TomographySetup {
    pub basis: OperatorBasis,
    pub detector: DetectorModel,
    pub probes: ProbeSet,
    pub patterns: PatternSet,
    pub data_noise: NoiseSpec,
    pub truth: TruthEnsemble,
    pub standard: InversionMatrix,
    pub pattern: InversionMatrix,
}

impl TomographySetup {
    pub fn new(
        basis: OperatorBasis,
        detector: DetectorModel,
        probes: ProbeSet,
        patterns: PatternSet,
        data_noise: NoiseSpec,
        truth: TruthEnsemble,
        rtol: Option<f64>,
    ) -> Result<Self> {
        if detector.params() != basis.len() || probes.params() != basis.len() {
            return Err(Error::DimensionMismatch {
                op: "TomographySetup::new",
                expected: basis.len(),
                got: if detector.params() != basis.len() {
                    detector.params()
                } else {
                    probes.params()
                },
            });
        }
        if patterns.outcomes() != detector.outcomes() {
            return Err(Error::DimensionMismatch {
                op: "TomographySetup::new",
                expected: detector.outcomes(),
                got: patterns.outcomes(),
            });
        }
        let standard = standard_inversion_matrix(&patterns, &probes, rtol)?;
        let pattern = pattern_inversion_matrix(&patterns, &probes, rtol)?;
        Ok(Self {
            basis,
            detector,
            probes,
            patterns,
            data_noise,
            truth,
            standard,
            pattern,
        })
    }

    pub fn inversion(&self, kind: InversionKind) -> Result<InversionMatrix> {
        match kind {
            InversionKind::Standard => Ok(self.standard.clone()),
            InversionKind::DataPattern => Ok(self.pattern.clone()),
            InversionKind::Oracle => oracle_inversion_matrix(&self.detector, None),
        }
    }

    /// Draws a true state and noisy data for it from `rng`.
    pub fn draw_trial<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(RealVector, RealVector)> {
        let rho = self.truth.draw(self.basis.dim(), rng);
        let r = state_to_bloch(&rho, &self.basis)?;
        let p = self.detector.probabilities(&r)?;
        let f = add_noise(&p, self.data_noise, rng);
        Ok((r.coords().clone(), f))
    }
}

/// Monte-Carlo mean of `‖r̂ − r‖²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MseEstimate {
    pub mean: f64,
    pub used: usize,
    pub failures: usize,
}

fn summarize(errors: impl Iterator<Item = Option<f64>>, trials: usize) -> Result<MseEstimate> {
    let mut sum = 0.0;
    let mut used = 0;
    let mut failures = 0;
    for e in errors {
        match e {
            Some(v) => {
                sum += v;
                used += 1;
            }
            None => failures += 1,
        }
    }
    if failures as f64 >= MAX_FAILURE_FRACTION * trials as f64 && failures > 0 {
        return Err(Error::TooManyFailures {
            failed: failures,
            trials,
        });
    }
    Ok(MseEstimate {
        mean: sum / used as f64,
        used,
        failures,
    })
}

fn squared_error(inv: &InversionMatrix, f: &RealVector, r: &RealVector) -> Result<Option<f64>> {
    match estimate_coords(inv, f) {
        Ok(est) => Ok(Some((est - r).norm_squared())),
        Err(Error::DegenerateNormalization(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Trial `t` draws from the stream `(seed, Trial, path…, t)`, so the result
/// does not depend on the worker count.
pub fn mse_empirical(
    setup: &TomographySetup,
    kind: InversionKind,
    n_trials: usize,
    seed: u64,
    path: &[u64],
) -> Result<MseEstimate> {
    if n_trials == 0 {
        return Err(Error::InvalidArgument("n_trials must be >= 1".into()));
    }
    let inv = setup.inversion(kind)?;
    let errors = (0..n_trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_stream(seed, path, t);
            let (r, f) = setup.draw_trial(&mut rng)?;
            squared_error(&inv, &f, &r)
        })
        .collect::<Result<Vec<_>>>()?;
    summarize(errors.into_iter(), n_trials)
}

fn trial_stream(seed: u64, path: &[u64], t: usize) -> crate::rngstream::StreamRng {
    let mut full = Vec::with_capacity(path.len() + 1);
    full.extend_from_slice(path);
    full.push(t as u64);
    stream(seed, Role::Trial, &full)
}

/// Both protocols on identical true states and data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedMse {
    pub standard: MseEstimate,
    pub pattern: MseEstimate,
}

impl PairedMse {
    /// `e_s² / e_p²`; zero over zero counts as one.
    pub fn ratio(&self) -> f64 {
        performance_ratio(self.standard.mean, self.pattern.mean)
    }
}

/// `e_s² / e_p²`, with two numerically zero errors (below `1e-20`) giving 1.
pub fn performance_ratio(e2_standard: f64, e2_pattern: f64) -> f64 {
    if e2_standard < 1e-20 && e2_pattern < 1e-20 {
        1.0
    } else {
        e2_standard / e2_pattern
    }
}

pub fn mse_paired(
    setup: &TomographySetup,
    n_trials: usize,
    seed: u64,
    path: &[u64],
) -> Result<PairedMse> {
    if n_trials == 0 {
        return Err(Error::InvalidArgument("n_trials must be >= 1".into()));
    }
    let pairs = (0..n_trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_stream(seed, path, t);
            let (r, f) = setup.draw_trial(&mut rng)?;
            Ok((
                squared_error(&setup.standard, &f, &r)?,
                squared_error(&setup.pattern, &f, &r)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PairedMse {
        standard: summarize(pairs.iter().map(|p| p.0), n_trials)?,
        pattern: summarize(pairs.iter().map(|p| p.1), n_trials)?,
    })
}

/// Which relation between the protocols holds for `m` outcomes, `M` probes
/// and `n + 1` augmented coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// `M ≤ min(m, n+1)`: both inversion matrices coincide.
    Equivalence,
    /// `m ≥ M > n+1`: `‖A_s‖ ≤ ‖A_p‖`.
    StandardNoWorse,
    /// `M > m` and `M > n+1`: redundant probes, no ordering guaranteed.
    RedundantProbes,
}

pub fn classify_regime(m: usize, augmented_dim: usize, probes: usize) -> Regime {
    if probes <= m.min(augmented_dim) {
        Regime::Equivalence
    } else if m >= probes {
        Regime::StandardNoWorse
    } else {
        Regime::RedundantProbes
    }
}

/// Norms and factors behind the comparison of the two protocols.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitingCaseDiagnostics {
    pub regime: Regime,
    pub hs_standard: f64,
    pub hs_pattern: f64,
    pub rank_f: usize,
    pub rank_r: usize,
    /// Singular values of `h = (F⁺F R⁺R)⁺`.
    pub h_singular_values: Vec<f64>,
    pub h_rank: usize,
    /// `‖D_h‖`
    pub h_norm: f64,
    /// `‖U₁₁‖`, with `U₁₁` the rank block of `V_R* V_F`.
    pub u11_norm: f64,
    pub u11_shape: (usize, usize),
    /// `|‖D_R U₁₁ D_F⁺‖ − ‖A_p‖| / ‖A_p‖`
    pub pattern_sandwich_residual: f64,
}

const DIAGNOSTIC_SLACK: f64 = 1e-9;

pub fn limiting_case_diagnostics(
    f: &PatternSet,
    r: &ProbeSet,
    rtol: Option<f64>,
) -> Result<LimitingCaseDiagnostics> {
    check_probe_count("limiting_case_diagnostics", f, r)?;
    let a_s = standard_inversion_matrix(f, r, rtol)?;
    let a_p = pattern_inversion_matrix(f, r, rtol)?;
    let r_pinv = pinv(r.matrix(), rtol)?;
    let gw = gw_decompose(f.matrix(), &r_pinv, rtol)?;
    let sh = svd(&gw.h)?;
    let h_rank = sh.rank(rtol);
    let h_singular_values: Vec<f64> = sh.singular_values.iter().cloned().collect();
    let h_norm = sh.singular_values.rows(0, h_rank).norm();

    let sr = svd(r.matrix())?;
    let sf = svd(f.matrix())?;
    let rank_r = sr.rank(rtol);
    let rank_f = sf.rank(rtol);
    let u11 = sr.v.columns(0, rank_r).adjoint() * sf.v.columns(0, rank_f);
    let u11_norm = hs_norm(&u11);

    let mut sandwich = u11.clone();
    for i in 0..rank_r {
        sandwich.row_mut(i).scale_mut(sr.singular_values[i]);
    }
    for j in 0..rank_f {
        sandwich.column_mut(j).unscale_mut(sf.singular_values[j]);
    }
    let pattern_sandwich_residual =
        (hs_norm(&sandwich) - a_p.hs_norm()).abs() / a_p.hs_norm().max(f64::MIN_POSITIVE);

    if h_norm + DIAGNOSTIC_SLACK < (h_rank as f64).sqrt() {
        return Err(Error::InvariantViolation(format!(
            "‖D_h‖ = {h_norm} < √rank(h) = {}",
            (h_rank as f64).sqrt()
        )));
    }
    let u11_bound = (rank_r.min(rank_f) as f64).sqrt();
    if u11_norm > u11_bound + DIAGNOSTIC_SLACK {
        return Err(Error::InvariantViolation(format!(
            "‖U₁₁‖ = {u11_norm} > {u11_bound}"
        )));
    }

    Ok(LimitingCaseDiagnostics {
        regime: classify_regime(f.outcomes(), r.matrix().nrows(), r.len()),
        hs_standard: a_s.hs_norm(),
        hs_pattern: a_p.hs_norm(),
        rank_f,
        rank_r,
        h_singular_values,
        h_rank,
        h_norm,
        u11_norm,
        u11_shape: u11.shape(),
        pattern_sandwich_residual,
    })
}

/// `‖A_s − R(h+g)F⁺‖ / ‖A_s‖` with `(h, g)` decomposing `(F R⁺)⁺`.
pub fn gw_consistency_residual(f: &PatternSet, r: &ProbeSet, rtol: Option<f64>) -> Result<f64> {
    check_probe_count("gw_consistency_residual", f, r)?;
    let a_s = standard_inversion_matrix(f, r, rtol)?;
    let gw = gw_decompose(f.matrix(), &pinv(r.matrix(), rtol)?, rtol)?;
    let rebuilt = r.matrix() * (&gw.h + &gw.g) * pinv(f.matrix(), rtol)?;
    Ok(hs_norm(&(rebuilt - a_s.matrix())) / a_s.hs_norm().max(1.0))
}

/// One row of a sweep: averages over measurement ensembles.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub d: usize,
    pub n: usize,
    pub m: usize,
    pub probes: usize,
    pub seed: u64,
    /// Ensemble index for per-ensemble rows, ensemble count for aggregates.
    pub ensemble: usize,
    pub trials: usize,
    pub pattern_noise: f64,
    pub data_noise: f64,
    pub e2_standard: f64,
    pub e2_pattern: f64,
    pub ratio: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matlib::gaussian_matrix;
    use crate::qstate::{gellmann_basis, povm_to_affine, square_root_measurement};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_detector(d: usize, m: usize, rng: &mut ChaCha8Rng) -> DetectorModel {
        let basis = gellmann_basis(d).unwrap();
        let states: Vec<_> = (0..m).map(|_| haar_random_pure(d, rng)).collect();
        povm_to_affine(&square_root_measurement(&states).unwrap(), &basis).unwrap()
    }

    fn random_probes(d: usize, count: usize, rng: &mut ChaCha8Rng) -> ProbeSet {
        let basis = gellmann_basis(d).unwrap();
        let bloch: Vec<_> = (0..count)
            .map(|_| {
                state_to_bloch(
                    &DensityMatrix::from_pure(&haar_random_pure(d, rng)).unwrap(),
                    &basis,
                )
                .unwrap()
            })
            .collect();
        ProbeSet::from_bloch(&bloch).unwrap()
    }

    #[test]
    fn probe_set_validation() {
        let mut bad = RealMatrix::zeros(4, 2);
        assert!(ProbeSet::new(bad.clone()).is_err());
        bad.row_mut(0).fill(1.0);
        assert!(ProbeSet::new(bad.clone()).is_ok());
        bad[(3, 1)] = 0.9;
        assert!(matches!(ProbeSet::new(bad), Err(Error::InvalidState(_))));
    }

    #[test]
    fn zero_noise_is_identity() {
        let p = RealVector::from_vec(vec![0.2, 0.3, 0.5]);
        let mut g = rng(1);
        assert_eq!(
            add_noise(&p, NoiseSpec::fixed_strength(0.0).unwrap(), &mut g),
            p
        );
        assert_eq!(add_noise(&p, NoiseSpec::ratio(0.0).unwrap(), &mut g), p);
        assert!(NoiseSpec::ratio(-1.0).is_err());
    }

    #[test]
    fn fixed_strength_has_exact_norm() {
        let p = RealVector::from_vec(vec![0.1, 0.4, 0.2, 0.3]);
        let mut g = rng(2);
        for _ in 0..100 {
            let f = add_noise(&p, NoiseSpec::FixedStrength(0.05), &mut g);
            assert!(((f - &p).norm() - 0.05).abs() < 1e-15);
        }
    }

    #[test]
    fn ratio_noise_sigma_matches() {
        let p = RealVector::from_vec(vec![0.1, 0.4, 0.2, 0.3]);
        let target = 0.06 * (p.norm_squared() / 4.0).sqrt();
        let mut g = rng(3);
        let draws = 100_000;
        let mut sum_sq = vec![0.0; 4];
        for _ in 0..draws {
            let f = add_noise(&p, NoiseSpec::Ratio(0.06), &mut g);
            for k in 0..4 {
                sum_sq[k] += (f[k] - p[k]).powi(2);
            }
        }
        for s in sum_sq {
            let sigma = (s / draws as f64).sqrt();
            assert!((sigma / target - 1.0).abs() < 0.02, "{sigma} vs {target}");
        }
    }

    #[test]
    fn collect_patterns_matches_per_column_forward() {
        let mut g = rng(4);
        let det = random_detector(3, 10, &mut g);
        let probes = random_probes(3, 12, &mut g);
        let f = collect_patterns(&det, &probes, NoiseSpec::none(), &mut g).unwrap();
        assert!((f.matrix() - det.augmented() * probes.matrix()).amax() < 1e-15);
        for (a, col) in f.matrix().column_iter().enumerate() {
            let r = BlochVector::new(3, probes.matrix().column(a).rows(1, 8).into_owned()).unwrap();
            assert!((col - det.probabilities(&r).unwrap()).amax() < 1e-15);
        }

        let mixed = ProbeSet::new(RealMatrix::from_fn(
            9,
            1,
            |i, _| if i == 0 { 1.0 } else { 0.0 },
        ))
        .unwrap();
        let f = collect_patterns(&det, &mixed, NoiseSpec::none(), &mut g).unwrap();
        assert!((f.matrix().column(0) - &det.offset).amax() < 1e-15);

        let wrong = random_probes(2, 3, &mut g);
        assert!(collect_patterns(&det, &wrong, NoiseSpec::none(), &mut g).is_err());
    }

    #[test]
    fn pattern_prefix_is_nested() {
        let mut g = rng(5);
        let det = random_detector(2, 4, &mut g);
        let probes = random_probes(2, 10, &mut g);
        let full = collect_patterns(&det, &probes, NoiseSpec::Ratio(0.03), &mut rng(9)).unwrap();
        let short = collect_patterns(
            &det,
            &probes.prefix(6).unwrap(),
            NoiseSpec::Ratio(0.03),
            &mut rng(9),
        )
        .unwrap();
        assert_eq!(full.prefix(6).unwrap(), short);
    }

    #[test]
    fn square_invertible_probes_give_identical_protocols() {
        let mut g = rng(6);
        let det = random_detector(2, 4, &mut g);
        let probes = random_probes(2, 4, &mut g);
        let f = collect_patterns(&det, &probes, NoiseSpec::Ratio(0.05), &mut g).unwrap();
        let a_s = standard_inversion_matrix(&f, &probes, None).unwrap();
        let a_p = pattern_inversion_matrix(&f, &probes, None).unwrap();
        assert!(hs_norm(&(a_s.matrix() - a_p.matrix())) / a_p.hs_norm() < 1e-10);
    }

    #[test]
    fn equivalence_when_probes_are_few() {
        let mut g = rng(7);
        for _ in 0..20 {
            let det = random_detector(3, 12, &mut g);
            let probes = random_probes(3, 7, &mut g);
            let f = collect_patterns(&det, &probes, NoiseSpec::Ratio(0.05), &mut g).unwrap();
            let a_s = standard_inversion_matrix(&f, &probes, None).unwrap();
            let a_p = pattern_inversion_matrix(&f, &probes, None).unwrap();
            assert!(hs_norm(&(a_s.matrix() - a_p.matrix())) / a_p.hs_norm() < 1e-8);
            let data =
                det.augmented() * probes.matrix().column(0) + RealVector::from_fn(12, |_, _| 0.01);
            let (es, ep) = (
                estimate_coords(&a_s, &data).unwrap(),
                estimate_coords(&a_p, &data).unwrap(),
            );
            assert!((es - ep).amax() < 1e-8);
            assert_eq!(classify_regime(12, 9, 7), Regime::Equivalence);
        }
    }

    #[test]
    fn noiseless_forward_backward() {
        let mut g = rng(8);
        let det = random_detector(3, 15, &mut g);
        let probes = random_probes(3, 30, &mut g);
        let f = collect_patterns(&det, &probes, NoiseSpec::none(), &mut g).unwrap();
        let forward = det.augmented();
        for inv in [
            standard_inversion_matrix(&f, &probes, None).unwrap(),
            pattern_inversion_matrix(&f, &probes, None).unwrap(),
            oracle_inversion_matrix(&det, None).unwrap(),
        ] {
            for col in probes.matrix().column_iter().take(5) {
                let back = inv.matrix() * (&forward * col);
                assert!((back - col).amax() < 1e-8, "{}", inv.kind().label());
            }
            let basis = gellmann_basis(3).unwrap();
            let r = state_to_bloch(&random_density_hs(3, &mut g), &basis).unwrap();
            let est = estimate(&inv, &det.probabilities(&r).unwrap()).unwrap();
            assert!((est.coords() - r.coords()).amax() < 1e-8);
        }
    }

    #[test]
    fn pattern_estimate_of_a_pattern_is_its_probe() {
        let mut g = rng(9);
        let det = random_detector(2, 8, &mut g);
        let probes = random_probes(2, 3, &mut g);
        let f = collect_patterns(&det, &probes, NoiseSpec::Ratio(0.02), &mut g).unwrap();
        let a_p = pattern_inversion_matrix(&f, &probes, None).unwrap();
        let data = f.matrix().column(1).into_owned();
        let x = pattern_fit(&f, &data, None).unwrap();
        assert!((x - RealVector::from_vec(vec![0.0, 1.0, 0.0])).amax() < 1e-10);
        let est = estimate_coords(&a_p, &data).unwrap();
        assert!((est - probes.matrix().column(1).rows(1, 3)).amax() < 1e-10);
    }

    #[test]
    fn norm_inequality_when_outcomes_dominate() {
        let mut g = rng(10);
        for _ in 0..30 {
            let det = random_detector(2, 12, &mut g);
            let probes = random_probes(2, 4 + g.random_range(1..=8), &mut g);
            let f = collect_patterns(&det, &probes, NoiseSpec::Ratio(0.05), &mut g).unwrap();
            let a_s = standard_inversion_matrix(&f, &probes, None).unwrap();
            let a_p = pattern_inversion_matrix(&f, &probes, None).unwrap();
            assert!(a_s.hs_norm() <= a_p.hs_norm() + 1e-10);
            assert_eq!(
                classify_regime(12, 4, probes.len()),
                Regime::StandardNoWorse
            );
        }
    }

    #[test]
    fn degenerate_normalization_reported() {
        let inv = InversionMatrix::new(
            InversionKind::Oracle,
            RealMatrix::from_row_slice(4, 2, &[0., 0., 1., 0., 0., 1., 0., 0.]),
        );
        let r = estimate(&inv, &RealVector::from_vec(vec![1.0, 1.0]));
        assert!(matches!(r, Err(Error::DegenerateNormalization(_))));
        assert!(estimate(&inv, &RealVector::from_vec(vec![1.0])).is_err());
    }

    #[test]
    fn mse_model_examples() {
        assert!((mse_model(&RealMatrix::identity(5, 5), 0.3, 5).unwrap() - 0.09).abs() < 1e-15);
        let mut g = rng(11);
        let a: RealMatrix = gaussian_matrix(4, 6, &mut g);
        let base = mse_model(&a, 0.1, 6).unwrap();
        assert!((mse_model(&(&a * 3.0), 0.1, 6).unwrap() / base - 9.0).abs() < 1e-12);
        assert!(mse_model(&a, -0.1, 6).is_err());
    }

    #[test]
    fn mse_model_matches_sphere_noise() {
        let mut g = rng(12);
        let a: RealMatrix = gaussian_matrix(5, 9, &mut g);
        let eps = 0.2;
        let draws = 100_000;
        let mean = (0..draws)
            .map(|_| (&a * sphere_uniform(9, eps, &mut g)).norm_squared())
            .sum::<f64>()
            / draws as f64;
        let model = mse_model(&a, eps, 9).unwrap();
        assert!((mean / model - 1.0).abs() < 0.01, "{mean} vs {model}");
    }

    fn setup(
        d: usize,
        m: usize,
        big_m: usize,
        pattern_noise: f64,
        data_noise: f64,
        seed: u64,
    ) -> TomographySetup {
        let mut g = rng(seed);
        let det = random_detector(d, m, &mut g);
        let probes = random_probes(d, big_m, &mut g);
        let f = collect_patterns(&det, &probes, NoiseSpec::Ratio(pattern_noise), &mut g).unwrap();
        TomographySetup::new(
            gellmann_basis(d).unwrap(),
            det,
            probes,
            f,
            NoiseSpec::Ratio(data_noise),
            TruthEnsemble::HilbertSchmidt,
            None,
        )
        .unwrap()
    }

    #[test]
    fn empirical_mse_zero_noise_floor() {
        let s = setup(3, 12, 20, 0.0, 0.0, 13);
        let p = mse_paired(&s, 50, 1, &[0]).unwrap();
        assert!(p.standard.mean < 1e-16 && p.pattern.mean < 1e-16);
        assert_eq!(p.ratio(), 1.0);
    }

    #[test]
    fn empirical_mse_scales_quadratically_with_data_noise() {
        let mut s = setup(2, 6, 10, 0.0, 0.01, 14);
        let low = mse_empirical(&s, InversionKind::Standard, 4000, 3, &[1])
            .unwrap()
            .mean;
        s.data_noise = NoiseSpec::Ratio(0.02);
        let high = mse_empirical(&s, InversionKind::Standard, 4000, 3, &[1])
            .unwrap()
            .mean;
        // same streams, so the ratio is close to exactly 4 up to the renormalization nonlinearity
        assert!((high / low - 4.0).abs() < 0.1, "{}", high / low);
    }

    #[test]
    fn empirical_mse_equal_in_equivalence_regime() {
        let s = setup(3, 12, 6, 0.03, 0.06, 15);
        let p = mse_paired(&s, 500, 4, &[2]).unwrap();
        assert!((p.standard.mean - p.pattern.mean).abs() <= 1e-8 * p.pattern.mean);
    }

    #[test]
    fn empirical_mse_is_worker_independent() {
        let s = setup(2, 5, 8, 0.03, 0.06, 16);
        let a = mse_paired(&s, 300, 5, &[3]).unwrap();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let b = pool.install(|| mse_paired(&s, 300, 5, &[3]).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn diagnostics_in_each_regime() {
        let mut g = rng(17);
        // equivalence
        let det = random_detector(2, 6, &mut g);
        let probes = random_probes(2, 3, &mut g);
        let f = collect_patterns(&det, &probes, NoiseSpec::Ratio(0.05), &mut g).unwrap();
        let diag = limiting_case_diagnostics(&f, &probes, None).unwrap();
        assert_eq!(diag.regime, Regime::Equivalence);
        assert!((diag.hs_standard - diag.hs_pattern).abs() < 1e-8 * diag.hs_pattern);

        // minimal measurement, redundant probes
        let det = random_detector(3, 9, &mut g);
        let probes = random_probes(3, 30, &mut g);
        let f = collect_patterns(&det, &probes, NoiseSpec::Ratio(0.05), &mut g).unwrap();
        let diag = limiting_case_diagnostics(&f, &probes, None).unwrap();
        assert_eq!(diag.regime, Regime::RedundantProbes);
        assert_eq!((diag.rank_f, diag.rank_r, diag.h_rank), (9, 9, 9));
        assert!(diag.h_norm >= 3.0 - 1e-9);
        assert!(diag.u11_norm <= 3.0 + 1e-9);
        assert!(diag.pattern_sandwich_residual < 1e-10);

        // outcomes dominate
        let det = random_detector(2, 10, &mut g);
        let probes = random_probes(2, 7, &mut g);
        let f = collect_patterns(&det, &probes, NoiseSpec::Ratio(0.05), &mut g).unwrap();
        let diag = limiting_case_diagnostics(&f, &probes, None).unwrap();
        assert_eq!(diag.regime, Regime::StandardNoWorse);
        assert!(diag.hs_standard <= diag.hs_pattern + 1e-10);
    }

    #[test]
    fn gw_consistency_across_regimes() {
        let mut g = rng(18);
        for (m, big_m) in [(6, 3), (4, 12), (10, 7), (9, 40)] {
            let d = if m == 9 { 3 } else { 2 };
            let det = random_detector(d, m, &mut g);
            let probes = random_probes(d, big_m, &mut g);
            let f = collect_patterns(&det, &probes, NoiseSpec::Ratio(0.05), &mut g).unwrap();
            assert!(gw_consistency_residual(&f, &probes, None).unwrap() < 1e-9);
        }
    }
}
