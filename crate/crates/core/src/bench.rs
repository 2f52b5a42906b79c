//! Experiment runner: configuration, the probe/outcome/homodyne sweeps,
//! the invariant self-test, and CSV/JSON output.
//!
//! Every random quantity comes from a stream keyed by the master seed and
//! the coordinates of the point it belongs to:
//!
//! | quantity            | stream                                  |
//! |---------------------|-----------------------------------------|
//! | detector            | `Measurement, [m, ensemble, attempt]`   |
//! | probes              | `Probe, [ensemble]`                     |
//! | pattern noise       | `PatternNoise, [m, ensemble]`           |
//! | true state and data | `Trial, [m, ensemble, trial]`           |
//! | quadrature readings | `Homodyne, [ensemble]`                  |
//!
//! None of them depend on `M`: a longer probe list extends a shorter one,
//! so all points of a probe sweep share their random numbers.

use std::collections::HashSet;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::homodyne::{
    coherent_state_fock, homodyne_measurement, true_signal, wigner, GridSpec, HomodyneConfig,
    HomodyneMeasurement, WignerGrid,
};
use crate::matlib::{
    gw_decompose, penrose_check, pinv, pinv_property_residuals, random_with_singular_values,
    AdmissibleSampler,
};
use crate::protocols::{
    collect_patterns, estimate, gw_consistency_residual, limiting_case_diagnostics, mse_paired,
    pattern_inversion_matrix, standard_inversion_matrix, NoiseSpec, PatternSet, ProbeSet,
    SweepResult, TomographySetup, TruthEnsemble,
};
use crate::qstate::{
    bloch_to_operator, born_probabilities, gellmann_basis, haar_random_pure, povm_to_affine,
    random_density_hs, square_root_measurement, state_to_bloch, BlochVector, DensityMatrix,
    DetectorModel, OperatorBasis,
};
use crate::rngstream::{stream, Role};
use crate::{ComplexMatrix, RealMatrix};

pub const CSV_HEADER: &str = "d,n,m,M,seed,ensemble,e2_std,e2_pat,ratio";
pub const WIGNER_HEADER: &str = "x,p,w";
/// Square-root measurements redrawn at most this many times when the Gram
/// matrix is rank deficient.
pub const MAX_REDRAWS: u64 = 16;
/// Environment variable holding the default worker count.
pub const WORKERS_ENV: &str = "TOMOLIN_WORKERS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    SweepProbes,
    SweepOutcomes,
    Homodyne,
    Selftest,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::SweepProbes => "sweep-probes",
            Self::SweepOutcomes => "sweep-outcomes",
            Self::Homodyne => "homodyne",
            Self::Selftest => "selftest",
        }
    }
}

/// Integer grid given either as an explicit list or as an inclusive
/// `{start, end, step}` span.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum IntRange {
    List(Vec<usize>),
    Span {
        start: usize,
        end: usize,
        #[serde(default = "one")]
        step: usize,
    },
}

fn one() -> usize {
    1
}

impl IntRange {
    pub fn span(start: usize, end: usize, step: usize) -> Self {
        Self::Span { start, end, step }
    }

    pub fn values(&self) -> Result<Vec<usize>> {
        let v: Vec<usize> = match self {
            Self::List(v) => v.clone(),
            Self::Span { start, end, step } => {
                if *step == 0 {
                    return Err(Error::Config("range step must be >= 1".into()));
                }
                (*start..=*end).step_by(*step).collect()
            }
        };
        if v.is_empty() {
            return Err(Error::Config(format!("range {self:?} is empty")));
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TruthKind {
    #[default]
    HilbertSchmidt,
    HaarPure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridParams {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl GridParams {
    pub fn spec(&self) -> GridSpec {
        GridSpec {
            x_min: self.min,
            x_max: self.max,
            x_points: self.points,
            p_min: self.min,
            p_max: self.max,
            p_points: self.points,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HomodyneParams {
    pub eta: f64,
    pub bin_width: f64,
    pub x_max: f64,
    /// Coherent probe amplitudes are uniform in the disk `|α| < probe_radius`.
    pub probe_radius: f64,
    /// Outcome counts at which Wigner grids are exported; empty means `[n, M]`.
    pub wigner_at: Vec<usize>,
    pub grid: GridParams,
}

impl Default for HomodyneParams {
    fn default() -> Self {
        let h = HomodyneConfig::default();
        Self {
            eta: h.eta,
            bin_width: h.bin_width,
            x_max: h.x_max,
            probe_radius: 0.8,
            wigner_at: Vec::new(),
            grid: GridParams {
                min: -5.0,
                max: 5.0,
                points: 201,
            },
        }
    }
}

impl HomodyneParams {
    pub fn config(&self) -> HomodyneConfig {
        HomodyneConfig {
            eta: self.eta,
            bin_width: self.bin_width,
            x_max: self.x_max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelftestParams {
    pub matrices: usize,
    pub gw_pairs: usize,
    pub admissible_samples: usize,
    pub setups: usize,
    /// Overrides the pseudoinverse cutoff in the Penrose suite (negative control).
    pub pinv_rtol: Option<f64>,
    /// Rank cutoff for the decomposition suites, applied to `XY` and its factors.
    pub gw_rtol: f64,
}

impl Default for SelftestParams {
    fn default() -> Self {
        Self {
            matrices: 100,
            gw_pairs: 20,
            admissible_samples: 20,
            setups: 40,
            pinv_rtol: None,
            gw_rtol: 1e-10,
        }
    }
}

/// A complete experiment description. JSON documents only need the fields
/// they change; the rest comes from [`ExperimentConfig::defaults`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    /// Qudit dimension, or the Fock truncation `d_F` for homodyne runs.
    pub d: usize,
    #[serde(alias = "m")]
    pub outcomes: IntRange,
    #[serde(alias = "M")]
    pub probes: IntRange,
    pub pattern_noise: f64,
    pub data_noise: f64,
    pub ensembles: usize,
    pub trials: usize,
    pub seed: u64,
    pub output: Option<PathBuf>,
    pub rtol: Option<f64>,
    pub truth: TruthKind,
    pub homodyne: HomodyneParams,
    pub selftest: SelftestParams,
}

fn outcome_grid_default() -> Vec<usize> {
    let mut v = vec![16, 17];
    v.extend((18..=60).step_by(2));
    v
}

impl ExperimentConfig {
    /// Desk-scale defaults.
    pub fn defaults(kind: ExperimentKind) -> Self {
        let base = Self {
            experiment: kind,
            d: 4,
            outcomes: IntRange::List(vec![18, 20, 24]),
            probes: IntRange::span(18, 60, 2),
            pattern_noise: 0.03,
            data_noise: 0.06,
            ensembles: 50,
            trials: 500,
            seed: 2016,
            output: None,
            rtol: None,
            truth: TruthKind::HilbertSchmidt,
            homodyne: HomodyneParams::default(),
            selftest: SelftestParams::default(),
        };
        match kind {
            ExperimentKind::SweepProbes | ExperimentKind::Selftest => base,
            ExperimentKind::SweepOutcomes => Self {
                outcomes: IntRange::List(outcome_grid_default()),
                probes: IntRange::List(vec![30]),
                ..base
            },
            ExperimentKind::Homodyne => Self {
                outcomes: IntRange::span(8, 60, 1),
                probes: IntRange::List(vec![40]),
                ensembles: 20,
                trials: 200,
                ..base
            },
        }
    }

    /// Full-size settings: larger dimensions, grids and ensemble counts.
    pub fn full_scale(kind: ExperimentKind) -> Self {
        let base = Self::defaults(kind);
        match kind {
            ExperimentKind::SweepProbes => Self {
                d: 6,
                outcomes: IntRange::List(vec![38, 40, 44]),
                probes: IntRange::span(36, 100, 2),
                ensembles: 300,
                trials: 10_000,
                ..base
            },
            ExperimentKind::SweepOutcomes => Self {
                d: 6,
                outcomes: IntRange::span(30, 100, 2),
                probes: IntRange::List(vec![50]),
                ensembles: 300,
                trials: 10_000,
                ..base
            },
            ExperimentKind::Homodyne => Self {
                d: 6,
                outcomes: IntRange::span(20, 140, 1),
                probes: IntRange::List(vec![100]),
                ensembles: 100,
                trials: 1000,
                ..base
            },
            ExperimentKind::Selftest => Self {
                selftest: SelftestParams {
                    matrices: 500,
                    gw_pairs: 200,
                    admissible_samples: 100,
                    setups: 200,
                    pinv_rtol: None,
                    gw_rtol: 1e-10,
                },
                ..base
            },
        }
    }

    /// Overlays a JSON document on `base`.
    pub fn from_json_over(base: &Self, text: &str) -> Result<Self> {
        let user: Value =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid JSON: {e}")))?;
        if !user.is_object() {
            return Err(Error::Config("configuration must be a JSON object".into()));
        }
        if let Some(kind) = user.get("experiment") {
            if kind != &Value::String(base.experiment.name().into()) {
                return Err(Error::Config(format!(
                    "config is for experiment {kind}, but {} was requested",
                    base.experiment.name()
                )));
            }
        }
        let mut merged = serde_json::to_value(base)?;
        merge(&mut merged, normalize_aliases(user));
        let cfg: Self = serde_json::from_value(merged).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json(kind: ExperimentKind, text: &str) -> Result<Self> {
        Self::from_json_over(&Self::defaults(kind), text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.ensembles == 0 || self.trials == 0 {
            return bad("ensembles and trials must be >= 1".into());
        }
        for (name, v) in [
            ("pattern_noise", self.pattern_noise),
            ("data_noise", self.data_noise),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if let Some(r) = self.rtol {
            if !(r > 0.0) {
                return bad(format!("rtol must be positive, got {r}"));
            }
        }
        if !(self.selftest.gw_rtol > 0.0 && self.selftest.gw_rtol < 1.0) {
            return bad(format!(
                "selftest.gw_rtol must lie in (0, 1), got {}",
                self.selftest.gw_rtol
            ));
        }
        let ms = self.outcomes.values()?;
        let probes = self.probes.values()?;
        match self.experiment {
            ExperimentKind::SweepProbes | ExperimentKind::SweepOutcomes => {
                if self.d < 2 {
                    return bad(format!("d must be >= 2, got {}", self.d));
                }
                if let Some(&m) = ms.iter().find(|&&m| m < self.d) {
                    return bad(format!("square-root measurements need m >= d, got m = {m}"));
                }
                if probes.contains(&0) {
                    return bad("probe counts must be >= 1".into());
                }
            }
            ExperimentKind::Homodyne => {
                if self.d < 3 {
                    return bad(format!("homodyne runs need d_F >= 3, got {}", self.d));
                }
                if ms.contains(&0) || probes.contains(&0) {
                    return bad("outcome and probe counts must be >= 1".into());
                }
                self.homodyne
                    .config()
                    .validate()
                    .map_err(|e| Error::Config(e.to_string()))?;
                self.homodyne
                    .grid
                    .spec()
                    .validate()
                    .map_err(|e| Error::Config(e.to_string()))?;
                if !(self.homodyne.probe_radius > 0.0 && self.homodyne.probe_radius <= 2.0) {
                    return bad("probe_radius must lie in (0, 2]".into());
                }
            }
            ExperimentKind::Selftest => {}
        }
        Ok(())
    }

    pub fn noise(&self) -> Result<(NoiseSpec, NoiseSpec)> {
        Ok((
            NoiseSpec::ratio(self.pattern_noise)?,
            NoiseSpec::ratio(self.data_noise)?,
        ))
    }

    pub fn output_path(&self) -> PathBuf {
        self.output
            .clone()
            .unwrap_or_else(|| PathBuf::from(format!("tomolin-{}.csv", self.experiment.name())))
    }

    fn truth(&self) -> TruthEnsemble {
        match self.truth {
            TruthKind::HilbertSchmidt => TruthEnsemble::HilbertSchmidt,
            TruthKind::HaarPure => TruthEnsemble::HaarPure,
        }
    }
}

fn normalize_aliases(mut v: Value) -> Value {
    if let Value::Object(map) = &mut v {
        for (alias, name) in [("m", "outcomes"), ("M", "probes")] {
            if let Some(x) = map.remove(alias) {
                map.insert(name.into(), x);
            }
        }
    }
    v
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                // ranges are replaced whole, never merged field by field
                let replace = matches!(k.as_str(), "outcomes" | "probes");
                match b.get_mut(&k) {
                    Some(slot) if !replace => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// C `%.12e`: twelve fraction digits and a signed exponent of at least two digits.
pub fn format_sci(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let s = format!("{v:.12e}");
    let (mantissa, exp) = s.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let sign = if exp < 0 { '-' } else { '+' };
    format!("{mantissa}e{sign}{:02}", exp.abs())
}

pub fn csv_row(r: &SweepResult) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{}",
        r.d,
        r.n,
        r.m,
        r.probes,
        r.seed,
        r.ensemble,
        format_sci(r.e2_standard),
        format_sci(r.e2_pattern),
        format_sci(r.ratio)
    )
}

/// Spearman rank correlation, ties sharing their average rank.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut out = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for k in i..=j {
                out[idx[k]] = avg;
            }
            i = j + 1;
        }
        out
    }
    assert_eq!(xs.len(), ys.len(), "spearman needs paired samples");
    let (rx, ry) = (ranks(xs), ranks(ys));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

/// Detector, probes and patterns of one measurement ensemble, sized for the
/// largest `M` of the run.
#[derive(Debug, Clone)]
struct Ensemble {
    detector: DetectorModel,
    probes: ProbeSet,
    patterns: PatternSet,
}

fn random_srm_detector(
    cfg: &ExperimentConfig,
    basis: &OperatorBasis,
    m: usize,
    e: usize,
) -> Result<DetectorModel> {
    let mut last = None;
    for attempt in 0..MAX_REDRAWS {
        let mut rng = stream(cfg.seed, Role::Measurement, &[m as u64, e as u64, attempt]);
        let states: Vec<_> = (0..m).map(|_| haar_random_pure(cfg.d, &mut rng)).collect();
        match square_root_measurement(&states) {
            Ok(povm) => return povm_to_affine(&povm, basis),
            Err(err @ Error::RankDeficientGram { .. }) => last = Some(err),
            Err(err) => return Err(err),
        }
    }
    Err(last.expect("at least one attempt"))
}

fn qudit_probes(
    cfg: &ExperimentConfig,
    basis: &OperatorBasis,
    count: usize,
    e: usize,
) -> Result<ProbeSet> {
    let mut rng = stream(cfg.seed, Role::Probe, &[e as u64]);
    let bloch = (0..count)
        .map(|_| {
            state_to_bloch(
                &DensityMatrix::from_pure(&haar_random_pure(cfg.d, &mut rng))?,
                basis,
            )
        })
        .collect::<Result<Vec<BlochVector>>>()?;
    ProbeSet::from_bloch(&bloch)
}

fn qudit_ensemble(
    cfg: &ExperimentConfig,
    basis: &OperatorBasis,
    m: usize,
    e: usize,
    max_probes: usize,
) -> Result<Ensemble> {
    let detector = random_srm_detector(cfg, basis, m, e)?;
    let probes = qudit_probes(cfg, basis, max_probes, e)?;
    let mut rng = stream(cfg.seed, Role::PatternNoise, &[m as u64, e as u64]);
    let patterns = collect_patterns(&detector, &probes, cfg.noise()?.0, &mut rng)?;
    Ok(Ensemble {
        detector,
        probes,
        patterns,
    })
}

fn point_setup(
    cfg: &ExperimentConfig,
    basis: &OperatorBasis,
    ens: &Ensemble,
    probes: usize,
    truth: &TruthEnsemble,
) -> Result<TomographySetup> {
    TomographySetup::new(
        basis.clone(),
        ens.detector.clone(),
        ens.probes.prefix(probes)?,
        ens.patterns.prefix(probes)?,
        cfg.noise()?.1,
        truth.clone(),
        cfg.rtol,
    )
}

fn ensemble_row(
    cfg: &ExperimentConfig,
    m: usize,
    probes: usize,
    e: usize,
    setup: &TomographySetup,
) -> Result<SweepResult> {
    let paired = mse_paired(setup, cfg.trials, cfg.seed, &[m as u64, e as u64])?;
    Ok(SweepResult {
        d: cfg.d,
        n: cfg.d * cfg.d - 1,
        m,
        probes,
        seed: cfg.seed,
        ensemble: e,
        trials: cfg.trials,
        pattern_noise: cfg.pattern_noise,
        data_noise: cfg.data_noise,
        e2_standard: paired.standard.mean,
        e2_pattern: paired.pattern.mean,
        ratio: paired.ratio(),
    })
}

/// Mean of the per-ensemble errors; the ratio is the ratio of the means.
pub fn aggregate(rows: &[SweepResult]) -> SweepResult {
    let k = rows.len() as f64;
    let e2_standard = rows.iter().map(|r| r.e2_standard).sum::<f64>() / k;
    let e2_pattern = rows.iter().map(|r| r.e2_pattern).sum::<f64>() / k;
    SweepResult {
        ensemble: rows.len(),
        e2_standard,
        e2_pattern,
        ratio: crate::protocols::performance_ratio(e2_standard, e2_pattern),
        ..rows[0].clone()
    }
}

/// Receives each finished point: its per-ensemble rows and their aggregate.
pub trait PointSink {
    fn point(&mut self, ensembles: &[SweepResult], aggregate: &SweepResult) -> Result<()>;
}

/// Keeps everything in memory.
#[derive(Debug, Default, Clone)]
pub struct SweepOutput {
    pub rows: Vec<SweepResult>,
    pub ensemble_rows: Vec<SweepResult>,
}

impl PointSink for SweepOutput {
    fn point(&mut self, ensembles: &[SweepResult], aggregate: &SweepResult) -> Result<()> {
        self.ensemble_rows.extend_from_slice(ensembles);
        self.rows.push(aggregate.clone());
        Ok(())
    }
}

impl SweepOutput {
    /// Aggregated rows with the given `m`, in `M` order.
    pub fn series_for_m(&self, m: usize) -> Vec<&SweepResult> {
        self.rows.iter().filter(|r| r.m == m).collect()
    }

    pub fn series_for_probes(&self, probes: usize) -> Vec<&SweepResult> {
        self.rows.iter().filter(|r| r.probes == probes).collect()
    }
}

/// Qudit sweep over every `(m, M)` of the configuration, `m` outermost.
/// Points in `skip` are not recomputed.
pub fn run_qudit_sweep(
    cfg: &ExperimentConfig,
    skip: &HashSet<(usize, usize)>,
    sink: &mut dyn PointSink,
) -> Result<()> {
    cfg.validate()?;
    let basis = gellmann_basis(cfg.d)?;
    let ms = cfg.outcomes.values()?;
    let probe_counts = cfg.probes.values()?;
    let max_probes = *probe_counts.iter().max().expect("nonempty");
    let truth = cfg.truth();
    for &m in &ms {
        if probe_counts.iter().all(|&p| skip.contains(&(m, p))) {
            continue;
        }
        let ensembles = (0..cfg.ensembles)
            .into_par_iter()
            .map(|e| qudit_ensemble(cfg, &basis, m, e, max_probes))
            .collect::<Result<Vec<_>>>()?;
        for &probes in &probe_counts {
            if skip.contains(&(m, probes)) {
                continue;
            }
            let rows = ensembles
                .par_iter()
                .enumerate()
                .map(|(e, ens)| {
                    ensemble_row(
                        cfg,
                        m,
                        probes,
                        e,
                        &point_setup(cfg, &basis, ens, probes, &truth)?,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            sink.point(&rows, &aggregate(&rows))?;
        }
    }
    Ok(())
}

pub fn run_sweep_probes(cfg: &ExperimentConfig) -> Result<SweepOutput> {
    let mut out = SweepOutput::default();
    run_qudit_sweep(cfg, &HashSet::new(), &mut out)?;
    Ok(out)
}

pub fn run_sweep_outcomes(cfg: &ExperimentConfig) -> Result<SweepOutput> {
    run_sweep_probes(cfg)
}

/// Recomputes a single per-ensemble row of a qudit sweep in isolation.
pub fn regenerate_qudit_point(
    cfg: &ExperimentConfig,
    m: usize,
    probes: usize,
    ensemble: usize,
) -> Result<SweepResult> {
    let basis = gellmann_basis(cfg.d)?;
    let ens = qudit_ensemble(cfg, &basis, m, ensemble, probes)?;
    ensemble_row(
        cfg,
        m,
        probes,
        ensemble,
        &point_setup(cfg, &basis, &ens, probes, &cfg.truth())?,
    )
}

fn coherent_probes(
    cfg: &ExperimentConfig,
    basis: &OperatorBasis,
    count: usize,
    e: usize,
) -> Result<ProbeSet> {
    let mut rng = stream(cfg.seed, Role::Probe, &[e as u64]);
    let radius = cfg.homodyne.probe_radius;
    let bloch = (0..count)
        .map(|_| {
            let r = radius * rng.random::<f64>().sqrt();
            let phi = std::f64::consts::TAU * rng.random::<f64>();
            let state = coherent_state_fock(Complex64::from_polar(r, phi), cfg.d)?;
            state_to_bloch(&state.density_matrix(), basis)
        })
        .collect::<Result<Vec<BlochVector>>>()?;
    ProbeSet::from_bloch(&bloch)
}

fn homodyne_setup(
    cfg: &ExperimentConfig,
    basis: &OperatorBasis,
    readings: &HomodyneMeasurement,
    probes: &ProbeSet,
    m: usize,
    e: usize,
    truth: &TruthEnsemble,
) -> Result<TomographySetup> {
    let detector = readings.prefix(m).detector(basis)?;
    let mut rng = stream(cfg.seed, Role::PatternNoise, &[m as u64, e as u64]);
    let (pattern_noise, data_noise) = cfg.noise()?;
    let patterns = collect_patterns(&detector, probes, pattern_noise, &mut rng)?;
    TomographySetup::new(
        basis.clone(),
        detector,
        probes.clone(),
        patterns,
        data_noise,
        truth.clone(),
        cfg.rtol,
    )
}

/// A Wigner function exported by the homodyne run.
#[derive(Debug, Clone)]
pub struct WignerExport {
    /// `true`, `standard` or `pattern`.
    pub label: String,
    /// Outcome count of the reconstruction, `None` for the true state.
    pub m: Option<usize>,
    pub grid: WignerGrid,
    /// Squared Bloch distance of the exported reconstruction from the truth.
    pub error: f64,
}

impl WignerExport {
    pub fn file_suffix(&self) -> String {
        match self.m {
            Some(m) => format!("wigner-{}-m{m}", self.label),
            None => format!("wigner-{}", self.label),
        }
    }
}

#[derive(Debug, Default, Clone)]
pub struct HomodyneOutput {
    pub sweep: SweepOutput,
    pub wigner: Vec<WignerExport>,
}

fn homodyne_readings(
    cfg: &ExperimentConfig,
    e: usize,
    max_m: usize,
) -> Result<HomodyneMeasurement> {
    let mut rng = stream(cfg.seed, Role::Homodyne, &[e as u64]);
    homodyne_measurement(max_m, &cfg.homodyne.config(), cfg.d, &mut rng)
}

/// Outcome counts at which Wigner grids are exported.
pub fn wigner_outcomes(cfg: &ExperimentConfig) -> Result<Vec<usize>> {
    if !cfg.homodyne.wigner_at.is_empty() {
        return Ok(cfg.homodyne.wigner_at.clone());
    }
    let probes = *cfg.probes.values()?.iter().max().expect("nonempty");
    Ok(vec![cfg.d * cfg.d - 1, probes])
}

/// Homodyne reconstruction of the fixed signal state versus `m`, then Wigner
/// grids of the truth and of the ensemble-0, trial-0 reconstructions.
pub fn run_homodyne_with(
    cfg: &ExperimentConfig,
    skip: &HashSet<(usize, usize)>,
    sink: &mut dyn PointSink,
) -> Result<Vec<WignerExport>> {
    cfg.validate()?;
    let basis = gellmann_basis(cfg.d)?;
    let ms = cfg.outcomes.values()?;
    let probe_counts = cfg.probes.values()?;
    let wigner_ms = wigner_outcomes(cfg)?;
    let max_m = ms
        .iter()
        .chain(&wigner_ms)
        .copied()
        .max()
        .expect("nonempty");
    let max_probes = *probe_counts.iter().max().expect("nonempty");
    let signal = true_signal(cfg.d)?.density_matrix();
    let truth = TruthEnsemble::Fixed(signal.clone());

    let ensembles = (0..cfg.ensembles)
        .into_par_iter()
        .map(|e| {
            Ok((
                homodyne_readings(cfg, e, max_m)?,
                coherent_probes(cfg, &basis, max_probes, e)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;

    for &m in &ms {
        for &probes in &probe_counts {
            if skip.contains(&(m, probes)) {
                continue;
            }
            let rows = ensembles
                .par_iter()
                .enumerate()
                .map(|(e, (readings, all_probes))| {
                    let setup = homodyne_setup(
                        cfg,
                        &basis,
                        readings,
                        &all_probes.prefix(probes)?,
                        m,
                        e,
                        &truth,
                    )?;
                    ensemble_row(cfg, m, probes, e, &setup)
                })
                .collect::<Result<Vec<_>>>()?;
            sink.point(&rows, &aggregate(&rows))?;
        }
    }

    let grid = cfg.homodyne.grid.spec();
    let mut exports = vec![WignerExport {
        label: "true".into(),
        m: None,
        grid: wigner(signal.matrix(), &grid)?,
        error: 0.0,
    }];
    let (readings, all_probes) = &ensembles[0];
    let truth_r = state_to_bloch(&signal, &basis)?;
    for &m in &wigner_ms {
        let setup = homodyne_setup(
            cfg,
            &basis,
            readings,
            &all_probes.prefix(max_probes)?,
            m,
            0,
            &truth,
        )?;
        let mut rng = stream(cfg.seed, Role::Trial, &[m as u64, 0, 0]);
        let (_, data) = setup.draw_trial(&mut rng)?;
        for (label, inv) in [("standard", &setup.standard), ("pattern", &setup.pattern)] {
            let r = estimate(inv, &data)?;
            let op = bloch_to_operator(&r, &basis)?;
            exports.push(WignerExport {
                label: label.into(),
                m: Some(m),
                grid: wigner(&op, &grid)?,
                error: (r.coords() - truth_r.coords()).norm_squared(),
            });
        }
    }
    Ok(exports)
}

pub fn run_homodyne(cfg: &ExperimentConfig) -> Result<HomodyneOutput> {
    let mut sweep = SweepOutput::default();
    let wigner = run_homodyne_with(cfg, &HashSet::new(), &mut sweep)?;
    Ok(HomodyneOutput { sweep, wigner })
}

/// Result of one invariant suite.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub name: String,
    pub cases: usize,
    pub failures: usize,
    pub worst_residual: f64,
    pub tolerance: f64,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelftestReport {
    pub seed: u64,
    pub suites: Vec<SuiteReport>,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.suites.iter().all(SuiteReport::passed)
    }
}

struct Tally {
    name: &'static str,
    tolerance: f64,
    cases: usize,
    failures: usize,
    worst: f64,
}

impl Tally {
    fn new(name: &'static str, tolerance: f64) -> Self {
        Self {
            name,
            tolerance,
            cases: 0,
            failures: 0,
            worst: 0.0,
        }
    }

    fn record(&mut self, residual: f64) {
        self.cases += 1;
        if residual.is_nan() || residual > self.tolerance {
            self.failures += 1;
        }
        if residual.is_nan() || residual > self.worst {
            self.worst = residual;
        }
    }

    fn record_result(&mut self, r: Result<f64>) {
        self.record(r.unwrap_or(f64::NAN));
    }

    fn finish(self) -> SuiteReport {
        SuiteReport {
            name: self.name.into(),
            cases: self.cases,
            failures: self.failures,
            worst_residual: self.worst,
            tolerance: self.tolerance,
        }
    }
}

/// Real matrix with log-uniform singular values in `[0.1, 10]`, sometimes
/// rank deficient.
pub fn spectrum_controlled_matrix<R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    rng: &mut R,
) -> RealMatrix {
    let k = rows.min(cols);
    let rank = if k > 1 && rng.random_bool(0.3) {
        rng.random_range(1..k)
    } else {
        k
    };
    let s: Vec<f64> = (0..rank)
        .map(|_| 10f64.powf(rng.random_range(-1.0..=1.0)))
        .collect();
    random_with_singular_values(rows, cols, &s, rng)
}

fn random_shape<R: Rng + ?Sized>(rng: &mut R, max: usize) -> (usize, usize) {
    (rng.random_range(1..=max), rng.random_range(1..=max))
}

/// Runs the linear-algebra, state and protocol invariant suites.
pub fn run_selftest(cfg: &ExperimentConfig) -> Result<SelftestReport> {
    let p = &cfg.selftest;
    let mut rng = stream(cfg.seed, Role::Selftest, &[]);

    let mut penrose = Tally::new("penrose", 1e-9);
    let mut properties = Tally::new("pinv-properties", 1e-9);
    for _ in 0..p.matrices {
        let (r, c) = random_shape(&mut rng, 32);
        let x = spectrum_controlled_matrix(r, c, &mut rng);
        penrose.record_result(
            pinv(&x, p.pinv_rtol)
                .and_then(|xp| penrose_check(&x, &xp))
                .map(|res| res.max()),
        );
        properties.record_result(
            pinv_property_residuals(&x, None).map(|v| v.iter().cloned().fold(0.0, f64::max)),
        );
    }

    let mut gw = Tally::new("galperin-waksman", 1e-9);
    let mut minimality = Tally::new("gw-minimality", 1e-10);
    for _ in 0..p.gw_pairs {
        let (a, b) = random_shape(&mut rng, 6);
        let c = rng.random_range(1..=6);
        let x = spectrum_controlled_matrix(a, b, &mut rng);
        let y = spectrum_controlled_matrix(b, c, &mut rng);
        let outcome = gw_decompose(&x, &y, Some(p.gw_rtol)).and_then(|dec| {
            let res = dec
                .reconstruction_residual(&x, &y)?
                .max(dec.orthogonality_residual())
                .max(dec.invariance_residual(&x, &y)?);
            let sampler = AdmissibleSampler::new(&x, &y, Some(p.gw_rtol))?;
            let base = crate::matlib::hs_norm(&dec.reconstruct(&x, &y)?);
            let mut violation: f64 = 0.0;
            for _ in 0..p.admissible_samples {
                let z = sampler.sample(&mut rng);
                let other = crate::matlib::hs_norm(&dec.sandwich(&x, &y, &z)?);
                violation = violation.max((base - other) / base.max(f64::MIN_POSITIVE));
            }
            Ok((res, violation))
        });
        match outcome {
            Ok((res, violation)) => {
                gw.record(res);
                minimality.record(violation.max(0.0));
            }
            Err(_) => {
                gw.record(f64::NAN);
                minimality.record(f64::NAN);
            }
        }
    }

    let mut basis_suite = Tally::new("operator-basis", 1e-12);
    for d in 2..=6 {
        basis_suite.record_result(gellmann_basis(d).map(|b| b.orthonormality_defect()));
    }
    let mut povm_suite = Tally::new("srm-born", 1e-9);
    for _ in 0..p.setups {
        let d = rng.random_range(2..=5);
        let m = rng.random_range(d..=3 * d);
        let states: Vec<_> = (0..m).map(|_| haar_random_pure(d, &mut rng)).collect();
        let rho = random_density_hs(d, &mut rng);
        povm_suite.record_result(square_root_measurement(&states).and_then(|povm| {
            let total = povm
                .elements()
                .iter()
                .fold(ComplexMatrix::zeros(d, d), |acc, e| acc + e);
            let completeness = crate::matlib::hs_norm(&(total - ComplexMatrix::identity(d, d)));
            let born = born_probabilities(&rho, &povm)?;
            let affine = povm_to_affine(&povm, &gellmann_basis(d)?)?
                .probabilities(&state_to_bloch(&rho, &gellmann_basis(d)?)?)?;
            Ok(completeness
                .max((born.sum() - 1.0).abs())
                .max((born - affine).amax()))
        }));
    }

    let mut equivalence = Tally::new("equivalence", 1e-8);
    let mut inequality = Tally::new("norm-inequality", 1e-10);
    let mut gw_bridge = Tally::new("gw-consistency", 1e-9);
    let mut diagnostics = Tally::new("limiting-case-diagnostics", 1e-9);
    for _ in 0..p.setups {
        let d = rng.random_range(2..=3);
        let aug = d * d;
        let noise = NoiseSpec::Ratio(0.05);
        let basis = gellmann_basis(d)?;
        let probe_set = |count: usize, rng: &mut crate::rngstream::StreamRng| -> Result<ProbeSet> {
            let bloch = (0..count)
                .map(|_| {
                    state_to_bloch(
                        &DensityMatrix::from_pure(&haar_random_pure(d, rng))?,
                        &basis,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            ProbeSet::from_bloch(&bloch)
        };
        let detector = |m: usize, rng: &mut crate::rngstream::StreamRng| -> Result<DetectorModel> {
            let states: Vec<_> = (0..m).map(|_| haar_random_pure(d, rng)).collect();
            povm_to_affine(&square_root_measurement(&states)?, &basis)
        };

        let m = rng.random_range(aug..=aug + 6);
        let probes = rng.random_range(1..=aug);
        let case = detector(m, &mut rng).and_then(|det| {
            let r = probe_set(probes, &mut rng)?;
            let f = collect_patterns(&det, &r, noise, &mut rng)?;
            let a_s = standard_inversion_matrix(&f, &r, None)?;
            let a_p = pattern_inversion_matrix(&f, &r, None)?;
            Ok(crate::matlib::hs_norm(&(a_s.matrix() - a_p.matrix())) / a_p.hs_norm())
        });
        equivalence.record_result(case);

        let probes = rng.random_range(aug + 1..=aug + 6);
        let m = rng.random_range(probes..=probes + 6);
        let case = detector(m, &mut rng).and_then(|det| {
            let r = probe_set(probes, &mut rng)?;
            let f = collect_patterns(&det, &r, noise, &mut rng)?;
            let a_s = standard_inversion_matrix(&f, &r, None)?;
            let a_p = pattern_inversion_matrix(&f, &r, None)?;
            gw_bridge.record_result(gw_consistency_residual(&f, &r, None));
            Ok((a_s.hs_norm() - a_p.hs_norm()).max(0.0))
        });
        inequality.record_result(case);

        let m = aug;
        let probes = rng.random_range(aug + 1..=4 * aug);
        let case = detector(m, &mut rng).and_then(|det| {
            let r = probe_set(probes, &mut rng)?;
            let f = collect_patterns(&det, &r, noise, &mut rng)?;
            gw_bridge.record_result(gw_consistency_residual(&f, &r, None));
            Ok(limiting_case_diagnostics(&f, &r, None)?.pattern_sandwich_residual)
        });
        diagnostics.record_result(case);
    }

    Ok(SelftestReport {
        seed: cfg.seed,
        suites: [
            penrose,
            properties,
            gw,
            minimality,
            basis_suite,
            povm_suite,
            equivalence,
            inequality,
            gw_bridge,
            diagnostics,
        ]
        .into_iter()
        .map(Tally::finish)
        .collect(),
    })
}

/// Sibling file `<stem>.<suffix>` next to `path`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    path.with_file_name(format!("{stem}.{suffix}"))
}

pub fn ensembles_path(path: &Path) -> PathBuf {
    sibling(path, "ensembles.csv")
}

pub fn meta_path(path: &Path) -> PathBuf {
    sibling(path, "meta.json")
}

/// Appends rows to the main and per-ensemble CSV files, flushing after
/// every point.
pub struct CsvSink {
    main: BufWriter<File>,
    ensembles: BufWriter<File>,
    pub points_written: usize,
}

impl CsvSink {
    fn open(path: &Path, append: bool) -> Result<Self> {
        let open = |p: &Path| -> Result<BufWriter<File>> {
            let f = OpenOptions::new()
                .create(true)
                .write(true)
                .append(append)
                .truncate(!append)
                .open(p)?;
            Ok(BufWriter::new(f))
        };
        let mut main = open(path)?;
        let mut ensembles = open(&ensembles_path(path))?;
        if !append {
            writeln!(main, "{CSV_HEADER}")?;
            writeln!(ensembles, "{CSV_HEADER}")?;
            main.flush()?;
            ensembles.flush()?;
        }
        Ok(Self {
            main,
            ensembles,
            points_written: 0,
        })
    }
}

impl PointSink for CsvSink {
    fn point(&mut self, ensembles: &[SweepResult], aggregate: &SweepResult) -> Result<()> {
        for r in ensembles {
            writeln!(self.ensembles, "{}", csv_row(r))?;
        }
        self.ensembles.flush()?;
        writeln!(self.main, "{}", csv_row(aggregate))?;
        self.main.flush()?;
        self.points_written += 1;
        Ok(())
    }
}

fn complete_lines(path: &Path) -> Result<Vec<String>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(path)?;
    let mut lines: Vec<String> = text.split_inclusive('\n').map(str::to_owned).collect();
    if lines.last().is_some_and(|l| !l.ends_with('\n')) {
        lines.pop();
    }
    Ok(lines
        .into_iter()
        .map(|l| l.trim_end_matches('\n').to_owned())
        .collect())
}

fn row_key(line: &str) -> Result<(usize, usize, u64)> {
    let fields: Vec<&str> = line.split(',').collect();
    let parse = |i: usize| -> Result<u64> {
        fields
            .get(i)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Config(format!("malformed CSV row in resumed output: {line}")))
    };
    if fields.len() != 9 {
        return Err(Error::Config(format!(
            "malformed CSV row in resumed output: {line}"
        )));
    }
    Ok((parse(2)? as usize, parse(3)? as usize, parse(4)?))
}

/// Trims partial rows from an interrupted run and returns the finished points.
fn prepare_resume(path: &Path, seed: u64) -> Result<Option<HashSet<(usize, usize)>>> {
    let main = complete_lines(path)?;
    if main.is_empty() {
        return Ok(None);
    }
    if main[0] != CSV_HEADER {
        return Err(Error::Config(format!(
            "{} does not start with the expected header",
            path.display()
        )));
    }
    let mut done = HashSet::new();
    for line in &main[1..] {
        let (m, probes, row_seed) = row_key(line)?;
        if row_seed != seed {
            return Err(Error::Config(format!(
                "cannot resume: {} was written with seed {row_seed}",
                path.display()
            )));
        }
        done.insert((m, probes));
    }
    let ens_path = ensembles_path(path);
    let ens_lines = complete_lines(&ens_path)?;
    let mut kept = vec![CSV_HEADER.to_string()];
    for line in ens_lines.iter().skip(1) {
        let (m, probes, _) = row_key(line)?;
        if done.contains(&(m, probes)) {
            kept.push(line.clone());
        }
    }
    let rewrite = |p: &Path, lines: &[String]| -> Result<()> {
        let mut text = lines.join("\n");
        text.push('\n');
        fs::write(p, text)?;
        Ok(())
    };
    rewrite(path, &main)?;
    rewrite(&ens_path, &kept)?;
    Ok(Some(done))
}

pub fn write_wigner_csv(path: &Path, grid: &WignerGrid) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{WIGNER_HEADER}")?;
    for (i, x) in grid.x_axis.iter().enumerate() {
        for (j, p) in grid.p_axis.iter().enumerate() {
            writeln!(
                w,
                "{},{},{}",
                format_sci(*x),
                format_sci(*p),
                format_sci(grid.values[(i, j)])
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Summary of a run written to disk.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub output: PathBuf,
    pub points_computed: usize,
    pub points_resumed: usize,
    pub wigner_files: Vec<PathBuf>,
}

#[derive(Serialize)]
struct WignerMeta<'a> {
    file: String,
    label: &'a str,
    m: Option<usize>,
    min: f64,
    max: f64,
    normalization: f64,
    bloch_error: f64,
}

#[derive(Serialize)]
struct Meta<'a> {
    tool: &'static str,
    version: &'static str,
    config: &'a ExperimentConfig,
    ensemble_rows: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    wigner: Vec<WignerMeta<'a>>,
}

/// Runs a sweep or homodyne experiment, streaming rows to the configured
/// output and writing the metadata and Wigner files next to it.
pub fn run_to_files(cfg: &ExperimentConfig, resume: bool) -> Result<RunSummary> {
    cfg.validate()?;
    let path = cfg.output_path();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let done = if resume {
        prepare_resume(&path, cfg.seed)?
    } else {
        None
    };
    let points_resumed = done.as_ref().map_or(0, HashSet::len);
    let mut sink = CsvSink::open(&path, done.is_some())?;
    let skip = done.unwrap_or_default();
    let exports = match cfg.experiment {
        ExperimentKind::SweepProbes | ExperimentKind::SweepOutcomes => {
            run_qudit_sweep(cfg, &skip, &mut sink)?;
            Vec::new()
        }
        ExperimentKind::Homodyne => run_homodyne_with(cfg, &skip, &mut sink)?,
        ExperimentKind::Selftest => {
            return Err(Error::Config("selftest does not write sweep files".into()))
        }
    };
    let mut wigner_files = Vec::new();
    let mut wigner_meta = Vec::new();
    for ex in &exports {
        let file = sibling(&path, &format!("{}.csv", ex.file_suffix()));
        write_wigner_csv(&file, &ex.grid)?;
        wigner_meta.push(WignerMeta {
            file: file
                .file_name()
                .map(|f| f.to_string_lossy().into_owned())
                .unwrap_or_default(),
            label: &ex.label,
            m: ex.m,
            min: ex.grid.min(),
            max: ex.grid.max(),
            normalization: ex.grid.normalization(),
            bloch_error: ex.error,
        });
        wigner_files.push(file);
    }
    let meta = Meta {
        tool: "tomolin",
        version: env!("CARGO_PKG_VERSION"),
        config: cfg,
        ensemble_rows: ensembles_path(&path)
            .file_name()
            .map(|f| f.to_string_lossy().into_owned())
            .unwrap_or_default(),
        wigner: wigner_meta,
    };
    fs::write(
        meta_path(&path),
        serde_json::to_string_pretty(&meta)? + "\n",
    )?;
    Ok(RunSummary {
        output: path,
        points_computed: sink.points_written,
        points_resumed,
        wigner_files,
    })
}

/// Reads `ensembles × rows` back from a CSV written by [`run_to_files`].
pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepResult>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if i == 0 {
            if line != CSV_HEADER {
                return Err(Error::Config(format!(
                    "{} has an unexpected header",
                    path.display()
                )));
            }
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let bad = || Error::Config(format!("malformed row {}: {line}", i + 1));
        if f.len() != 9 {
            return Err(bad());
        }
        let int = |k: usize| f[k].parse::<usize>().map_err(|_| bad());
        let real = |k: usize| f[k].parse::<f64>().map_err(|_| bad());
        out.push(SweepResult {
            d: int(0)?,
            n: int(1)?,
            m: int(2)?,
            probes: int(3)?,
            seed: f[4].parse().map_err(|_| bad())?,
            ensemble: int(5)?,
            trials: 0,
            pattern_noise: f64::NAN,
            data_noise: f64::NAN,
            e2_standard: real(6)?,
            e2_pattern: real(7)?,
            ratio: real(8)?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(kind: ExperimentKind) -> ExperimentConfig {
        ExperimentConfig {
            d: 2,
            outcomes: IntRange::List(vec![4, 6]),
            probes: IntRange::List(vec![3, 5, 8]),
            ensembles: 3,
            trials: 20,
            ..ExperimentConfig::defaults(kind)
        }
    }

    #[test]
    fn c_style_scientific_format() {
        assert_eq!(format_sci(0.0), "0.000000000000e+00");
        assert_eq!(format_sci(1234.5), "1.234500000000e+03");
        assert_eq!(format_sci(-2.5e-7), "-2.500000000000e-07");
        assert_eq!(format_sci(1e123), "1.000000000000e+123");
        assert_eq!(format_sci(f64::INFINITY), "inf");
        assert_eq!(format_sci(f64::NAN), "nan");
    }

    #[test]
    fn int_range_forms() {
        let span: IntRange =
            serde_json::from_str(r#"{"start": 18, "end": 24, "step": 3}"#).unwrap();
        assert_eq!(span.values().unwrap(), vec![18, 21, 24]);
        let dflt: IntRange = serde_json::from_str(r#"{"start": 2, "end": 4}"#).unwrap();
        assert_eq!(dflt.values().unwrap(), vec![2, 3, 4]);
        let list: IntRange = serde_json::from_str("[5, 1]").unwrap();
        assert_eq!(list.values().unwrap(), vec![5, 1]);
        assert!(IntRange::List(vec![]).values().is_err());
        assert!(IntRange::span(4, 2, 1).values().is_err());
        assert!(IntRange::span(1, 2, 0).values().is_err());
    }

    #[test]
    fn config_overlay_and_validation() {
        let cfg = ExperimentConfig::from_json(
            ExperimentKind::SweepProbes,
            r#"{"d": 3, "m": [9, 10], "homodyne": {"eta": 0.5}}"#,
        )
        .unwrap();
        assert_eq!(cfg.d, 3);
        assert_eq!(cfg.outcomes, IntRange::List(vec![9, 10]));
        assert_eq!(cfg.homodyne.eta, 0.5);
        assert_eq!(cfg.homodyne.bin_width, 0.1);
        assert_eq!(cfg.trials, 500);

        for bad in [
            r#"{"trials": 0}"#,
            r#"{"data_noise": -0.1}"#,
            r#"{"unknown": 1}"#,
            r#"{"m": []}"#,
            r#"{"experiment": "homodyne"}"#,
            r#"{"d": 4, "m": [3]}"#,
            "[1, 2]",
            "{",
        ] {
            let err = ExperimentConfig::from_json(ExperimentKind::SweepProbes, bad).unwrap_err();
            assert_eq!(err.exit_code(), 1, "{bad}: {err}");
        }
    }

    #[test]
    fn spearman_examples() {
        assert!((spearman(&[1., 2., 3., 4.], &[10., 20., 30., 40.]) - 1.0).abs() < 1e-15);
        assert!((spearman(&[1., 2., 3., 4.], &[4., 3., 2., 1.]) + 1.0).abs() < 1e-15);
        // scipy.stats.spearmanr([1,2,3,4,5], [2,1,4,3,5]) = 0.8
        assert!((spearman(&[1., 2., 3., 4., 5.], &[2., 1., 4., 3., 5.]) - 0.8).abs() < 1e-12);
        // ties: scipy.stats.spearmanr([1,2,2,3], [1,2,3,4]) = 0.9486832980505138
        assert!(
            (spearman(&[1., 2., 2., 3.], &[1., 2., 3., 4.]) - 0.948_683_298_050_513_8).abs()
                < 1e-12
        );
    }

    #[test]
    fn sweep_rows_and_regeneration() {
        let cfg = tiny(ExperimentKind::SweepProbes);
        let out = run_sweep_probes(&cfg).unwrap();
        assert_eq!(out.rows.len(), 6);
        assert_eq!(out.ensemble_rows.len(), 18);
        for row in &out.rows {
            assert_eq!(row.ensemble, 3);
            assert!((row.ratio - row.e2_standard / row.e2_pattern).abs() <= 1e-12 * row.ratio);
        }
        let pick = &out.ensemble_rows[7];
        let again = regenerate_qudit_point(&cfg, pick.m, pick.probes, pick.ensemble).unwrap();
        assert_eq!(&again, pick);
    }

    #[test]
    fn zero_noise_gives_unit_ratio() {
        let cfg = ExperimentConfig {
            pattern_noise: 0.0,
            data_noise: 0.0,
            // informationally complete points only: m, M >= n + 1
            probes: IntRange::List(vec![4, 5, 8]),
            ..tiny(ExperimentKind::SweepProbes)
        };
        for row in run_sweep_probes(&cfg).unwrap().rows {
            assert!(row.e2_standard < 1e-20 && row.e2_pattern < 1e-20);
            assert_eq!(row.ratio, 1.0);
        }
    }

    #[test]
    fn files_are_worker_independent_and_resumable() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny(ExperimentKind::SweepProbes);
        let run = |cfg: &ExperimentConfig, threads: usize, resume: bool| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| run_to_files(cfg, resume)).unwrap()
        };
        cfg.output = Some(dir.path().join("a.csv"));
        run(&cfg, 1, false);
        cfg.output = Some(dir.path().join("b.csv"));
        run(&cfg, 4, false);
        let a = fs::read(dir.path().join("a.csv")).unwrap();
        assert_eq!(a, fs::read(dir.path().join("b.csv")).unwrap());
        assert_eq!(
            fs::read(dir.path().join("a.ensembles.csv")).unwrap(),
            fs::read(dir.path().join("b.ensembles.csv")).unwrap()
        );

        // simulate an interruption after three points plus a torn line
        let text = String::from_utf8(a.clone()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        let mut partial = lines[..4].join("\n");
        partial.push_str("\n2,3,6,");
        fs::write(dir.path().join("b.csv"), partial).unwrap();
        let summary = run(&cfg, 2, true);
        assert_eq!((summary.points_resumed, summary.points_computed), (3, 3));
        assert_eq!(a, fs::read(dir.path().join("b.csv")).unwrap());
        assert_eq!(
            fs::read(dir.path().join("a.ensembles.csv")).unwrap(),
            fs::read(dir.path().join("b.ensembles.csv")).unwrap()
        );
        let rows = read_sweep_csv(&dir.path().join("b.csv")).unwrap();
        assert_eq!(rows.len(), 6);
        assert!(dir.path().join("b.meta.json").exists());

        let other_seed = ExperimentConfig {
            seed: 1,
            ..cfg.clone()
        };
        assert!(run_to_files(&other_seed, true).is_err());
    }

    #[test]
    fn homodyne_small_run() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig {
            d: 3,
            outcomes: IntRange::List(vec![6, 9, 12]),
            probes: IntRange::List(vec![10]),
            ensembles: 2,
            trials: 10,
            output: Some(dir.path().join("h.csv")),
            homodyne: HomodyneParams {
                grid: GridParams {
                    min: -4.0,
                    max: 4.0,
                    points: 21,
                },
                ..Default::default()
            },
            ..ExperimentConfig::defaults(ExperimentKind::Homodyne)
        };
        let summary = run_to_files(&cfg, false).unwrap();
        assert_eq!(summary.points_computed, 3);
        // true state plus two protocols at m = n and m = M
        assert_eq!(summary.wigner_files.len(), 5);
        let text = fs::read_to_string(dir.path().join("h.wigner-true.csv")).unwrap();
        assert_eq!(text.lines().next().unwrap(), WIGNER_HEADER);
        assert_eq!(text.lines().count(), 1 + 21 * 21);
        let rows = read_sweep_csv(&summary.output).unwrap();
        assert!(rows.iter().all(|r| r.d == 3 && r.n == 8 && r.probes == 10));
    }

    #[test]
    fn selftest_passes_and_negative_control_fails() {
        let mut cfg = ExperimentConfig::defaults(ExperimentKind::Selftest);
        cfg.selftest = SelftestParams {
            matrices: 30,
            gw_pairs: 5,
            admissible_samples: 10,
            setups: 10,
            pinv_rtol: None,
            gw_rtol: 1e-10,
        };
        let report = run_selftest(&cfg).unwrap();
        assert!(report.passed(), "{report:#?}");
        assert!(report.suites.iter().all(|s| s.cases > 0));

        cfg.selftest.pinv_rtol = Some(0.5);
        let report = run_selftest(&cfg).unwrap();
        let penrose = report.suites.iter().find(|s| s.name == "penrose").unwrap();
        assert!(penrose.failures > 0);
        assert!(!report.passed());
    }
}
