//! Five distributional representations of a subject's epoch values.
//!
//! Density, survival and hazard live on the sample space (an `x` grid from 0
//! to a pooled upper quantile); quantile and TTT live on probability levels.
//! All subjects of a cohort are evaluated on one shared grid so their curves
//! can enter a common functional regression.

pub mod estimators;

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;
use crate::quad::linspace;
pub use estimators::{
    binned_hazard, sample_quantile, silverman_bandwidth, Bandwidth, KaplanMeier, Kde, NelsonAalen,
    RatioHazard, SortedSample, TttStatistic,
};

#[derive(Debug, Error)]
pub enum RepresentError {
    #[error("subject {subject_id}: {reason}")]
    InvalidSample { subject_id: String, reason: String },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid grid spec: {0}")]
    InvalidSpec(String),
    #[error("cannot build a pooled grid from an empty cohort")]
    EmptyPool,
    #[error("curves do not share one grid: {0}")]
    GridMismatch(String),
    #[error("{kind} curve violates its invariants: {reason}")]
    InvariantViolation { kind: RepresentationKind, reason: String },
    #[error("failed to write curves: {0}")]
    Write(#[from] csv::Error),
}

type Result<T> = std::result::Result<T, RepresentError>;

/// One subject's epoch values and outcome labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectSample {
    pub subject_id: String,
    pub values: Vec<f64>,
    pub outcome_binary: Option<u8>,
    pub outcome_continuous: Option<f64>,
}

impl SubjectSample {
    pub fn new(subject_id: impl Into<String>, values: Vec<f64>) -> Self {
        SubjectSample { subject_id: subject_id.into(), values, outcome_binary: None, outcome_continuous: None }
    }

    pub fn m(&self) -> usize {
        self.values.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| RepresentError::InvalidSample { subject_id: self.subject_id.clone(), reason };
        if self.values.len() < 2 {
            return Err(bad(format!("needs at least 2 values, has {}", self.values.len())));
        }
        if let Some(v) = self.values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(bad(format!("value {v} is not a finite non-negative number")));
        }
        if let Some(y) = self.outcome_binary {
            if y > 1 {
                return Err(bad(format!("binary outcome {y} is not 0/1")));
            }
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        crate::quad::neumaier_sum(self.values.iter().copied()) / self.values.len() as f64
    }

    /// Copy with every value mapped through `x ↦ ln(x + 1)`.
    pub fn log1p_transformed(&self) -> SubjectSample {
        SubjectSample { values: self.values.iter().map(|v| v.ln_1p()).collect(), ..self.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepresentationKind {
    ScalarMean,
    Ttt,
    Quantile,
    Density,
    Survival,
    Hazard,
    /// Nelson-Aalen cumulative hazard; auxiliary, not one of the predictors.
    CumulativeHazard,
}

impl RepresentationKind {
    /// The six predictors compared by cross-validation, in table order.
    pub const PREDICTORS: [RepresentationKind; 6] = [
        RepresentationKind::ScalarMean,
        RepresentationKind::Ttt,
        RepresentationKind::Quantile,
        RepresentationKind::Density,
        RepresentationKind::Survival,
        RepresentationKind::Hazard,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RepresentationKind::ScalarMean => "scalar_mean",
            RepresentationKind::Ttt => "ttt",
            RepresentationKind::Quantile => "quantile",
            RepresentationKind::Density => "density",
            RepresentationKind::Survival => "survival",
            RepresentationKind::Hazard => "hazard",
            RepresentationKind::CumulativeHazard => "cumulative_hazard",
        }
    }

    pub fn domain(self) -> Domain {
        match self {
            RepresentationKind::ScalarMean => Domain::Scalar,
            RepresentationKind::Ttt | RepresentationKind::Quantile => Domain::QuantileLevel,
            _ => Domain::SampleSpace,
        }
    }

    pub fn is_functional(self) -> bool {
        self != RepresentationKind::ScalarMean
    }
}

impl fmt::Display for RepresentationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RepresentationKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        [
            RepresentationKind::ScalarMean,
            RepresentationKind::Ttt,
            RepresentationKind::Quantile,
            RepresentationKind::Density,
            RepresentationKind::Survival,
            RepresentationKind::Hazard,
            RepresentationKind::CumulativeHazard,
        ]
        .into_iter()
        .find(|k| k.name() == s)
        .ok_or_else(|| format!("unknown representation '{s}'"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    SampleSpace,
    QuantileLevel,
    /// Length-one pseudo-curve carrying a scalar summary.
    Scalar,
}

impl Domain {
    pub fn name(self) -> &'static str {
        match self {
            Domain::SampleSpace => "sample_space",
            Domain::QuantileLevel => "quantile_level",
            Domain::Scalar => "scalar",
        }
    }
}

/// A representation evaluated on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub kind: RepresentationKind,
    pub domain: Domain,
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
}

impl Curve {
    pub fn validate(&self) -> Result<()> {
        let fail = |reason: &str| RepresentError::InvariantViolation { kind: self.kind, reason: reason.to_string() };
        if self.grid.len() != self.values.len() {
            return Err(fail("grid and values differ in length"));
        }
        if self.domain != self.kind.domain() {
            return Err(fail("domain does not match kind"));
        }
        if self.grid.windows(2).any(|w| w[1] <= w[0]) || self.grid.iter().any(|g| !g.is_finite()) {
            return Err(fail("grid is not strictly increasing"));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(fail("non-finite value"));
        }
        let nonincreasing = self.values.windows(2).all(|w| w[1] <= w[0]);
        let nondecreasing = self.values.windows(2).all(|w| w[1] >= w[0]);
        let nonneg = self.values.iter().all(|&v| v >= 0.0);
        match self.kind {
            RepresentationKind::Survival => {
                if !self.values.iter().all(|v| (0.0..=1.0).contains(v)) || !nonincreasing {
                    return Err(fail("survival must be nonincreasing in [0, 1]"));
                }
            }
            RepresentationKind::Quantile | RepresentationKind::Ttt => {
                if !nondecreasing {
                    return Err(fail("must be nondecreasing in p"));
                }
            }
            RepresentationKind::Density | RepresentationKind::Hazard => {
                if !nonneg {
                    return Err(fail("must be non-negative"));
                }
            }
            RepresentationKind::CumulativeHazard => {
                if !nonneg || !nondecreasing {
                    return Err(fail("must be non-negative and nondecreasing"));
                }
            }
            RepresentationKind::ScalarMean => {
                if self.values.len() != 1 {
                    return Err(fail("scalar summary must hold exactly one value"));
                }
            }
        }
        Ok(())
    }

    /// Linear interpolation, constant beyond the grid ends.
    pub fn interpolate(&self, x: f64) -> f64 {
        let g = &self.grid;
        let n = g.len();
        if x <= g[0] {
            return self.values[0];
        }
        if x >= g[n - 1] {
            return self.values[n - 1];
        }
        let i = g.partition_point(|&v| v <= x) - 1;
        let t = (x - g[i]) / (g[i + 1] - g[i]);
        self.values[i] + t * (self.values[i + 1] - self.values[i])
    }
}

/// Resolution and truncation of the shared grids.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub sample_space_points: usize,
    /// Pooled quantile level at which the sample-space grid is truncated.
    pub sample_space_upper: f64,
    pub quantile_levels: usize,
    pub quantile_lower: f64,
    pub quantile_upper: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            sample_space_points: 100,
            sample_space_upper: 0.99,
            quantile_levels: 100,
            quantile_lower: 0.005,
            quantile_upper: 0.995,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |s: String| Err(RepresentError::InvalidSpec(s));
        if self.sample_space_points < 10 || self.quantile_levels < 10 {
            return bad("grid point counts must be at least 10".into());
        }
        if !(self.sample_space_upper > 0.5 && self.sample_space_upper <= 1.0) {
            return bad(format!("truncation level {} must lie in (0.5, 1]", self.sample_space_upper));
        }
        if !(self.quantile_lower > 0.0 && self.quantile_lower < self.quantile_upper && self.quantile_upper < 1.0) {
            return bad("quantile levels must satisfy 0 < lower < upper < 1".into());
        }
        Ok(())
    }

    pub fn quantile_grid(&self) -> Vec<f64> {
        linspace(self.quantile_lower, self.quantile_upper, self.quantile_levels)
    }
}

/// Grids shared by every subject of a cohort (or training fold).
#[derive(Debug, Clone, PartialEq)]
pub struct PooledGrid {
    pub x: Vec<f64>,
    pub p: Vec<f64>,
}

impl PooledGrid {
    pub fn for_kind(&self, kind: RepresentationKind) -> &[f64] {
        match kind.domain() {
            Domain::QuantileLevel => &self.p,
            _ => &self.x,
        }
    }
}

/// Sample-space grid from 0 to the pooled empirical quantile at
/// `spec.sample_space_upper`, and the equally spaced probability grid.
pub fn pooled_grid(samples: &[SubjectSample], spec: &GridSpec) -> Result<PooledGrid> {
    spec.validate()?;
    if samples.is_empty() {
        return Err(RepresentError::EmptyPool);
    }
    let mut pool: Vec<f64> = samples.iter().flat_map(|s| s.values.iter().copied()).collect();
    if pool.is_empty() {
        return Err(RepresentError::EmptyPool);
    }
    pool.sort_by(f64::total_cmp);
    let upper = if spec.sample_space_upper >= 1.0 {
        pool[pool.len() - 1]
    } else {
        sample_quantile(&pool, spec.sample_space_upper)
    };
    if !(upper > 0.0 && upper.is_finite()) {
        return Err(RepresentError::InvalidGrid(format!("pooled upper quantile is {upper}; need a positive range")));
    }
    Ok(PooledGrid { x: linspace(0.0, upper, spec.sample_space_points), p: spec.quantile_grid() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "estimator", deny_unknown_fields)]
pub enum HazardEstimator {
    /// `f̂_KDE / max(Ŝ_KM, floor)`.
    Ratio { floor: f64 },
    /// Nelson-Aalen increments binned on the grid cells.
    Binned,
}

impl Default for HazardEstimator {
    fn default() -> Self {
        HazardEstimator::Ratio { floor: 1e-3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RepresentOptions {
    pub hazard: HazardEstimator,
}

fn check_grid(grid: &[f64], levels: bool) -> Result<()> {
    if grid.len() < 2 {
        return Err(RepresentError::InvalidGrid("needs at least 2 points".into()));
    }
    if grid.iter().any(|g| !g.is_finite()) || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(RepresentError::InvalidGrid("must be finite and strictly increasing".into()));
    }
    if levels && !(grid[0] > 0.0 && grid[grid.len() - 1] < 1.0) {
        return Err(RepresentError::InvalidGrid("probability levels must lie in (0, 1)".into()));
    }
    Ok(())
}

fn curve(kind: RepresentationKind, grid: &[f64], values: Vec<f64>) -> Curve {
    Curve { kind, domain: kind.domain(), grid: grid.to_vec(), values }
}

fn density_on(sample: &SortedSample, subject_id: &str, grid: &[f64]) -> Vec<f64> {
    let bw = silverman_bandwidth(sample, grid[1] - grid[0]);
    if bw.fallback {
        log::warn!("subject {subject_id}: zero sample variance, KDE fallback bandwidth {}", bw.value);
    }
    let kde = Kde::new(sample, bw.value);
    grid.iter().map(|&x| kde.eval(x)).collect()
}

fn hazard_on(sample: &SortedSample, subject_id: &str, grid: &[f64], estimator: HazardEstimator) -> Vec<f64> {
    match estimator {
        HazardEstimator::Ratio { floor } => {
            let bw = silverman_bandwidth(sample, grid[1] - grid[0]);
            if bw.fallback {
                log::warn!("subject {subject_id}: zero sample variance, KDE fallback bandwidth {}", bw.value);
            }
            let h = RatioHazard::new(sample, bw.value, floor);
            grid.iter().map(|&x| h.eval(x)).collect()
        }
        HazardEstimator::Binned => binned_hazard(sample, grid),
    }
}

fn evaluate(
    sample: &SortedSample,
    subject_id: &str,
    kind: RepresentationKind,
    grid: &[f64],
    options: &RepresentOptions,
) -> Curve {
    match kind {
        RepresentationKind::ScalarMean => curve(kind, &[0.0], vec![sample.mean()]),
        RepresentationKind::Density => curve(kind, grid, density_on(sample, subject_id, grid)),
        RepresentationKind::Survival => {
            let km = KaplanMeier::new(sample);
            curve(kind, grid, grid.iter().map(|&x| km.eval(x)).collect())
        }
        RepresentationKind::CumulativeHazard => {
            let na = NelsonAalen::new(sample);
            curve(kind, grid, grid.iter().map(|&x| na.eval(x)).collect())
        }
        RepresentationKind::Hazard => curve(kind, grid, hazard_on(sample, subject_id, grid, options.hazard)),
        RepresentationKind::Quantile => {
            let v = sample.values();
            curve(kind, grid, grid.iter().map(|&p| sample_quantile(v, p)).collect())
        }
        RepresentationKind::Ttt => {
            let t = TttStatistic::new(sample);
            curve(kind, grid, grid.iter().map(|&p| t.eval(p)).collect())
        }
    }
}

fn estimate(s: &SubjectSample, kind: RepresentationKind, grid: &[f64], options: &RepresentOptions) -> Result<Curve> {
    s.validate()?;
    if kind.is_functional() {
        check_grid(grid, kind.domain() == Domain::QuantileLevel)?;
    }
    Ok(evaluate(&SortedSample::new(&s.values), &s.subject_id, kind, grid, options))
}

/// Gaussian KDE with the rule-of-thumb bandwidth `1.06 σ̂ m^{−1/5}`.
pub fn estimate_density(s: &SubjectSample, grid: &[f64]) -> Result<Curve> {
    estimate(s, RepresentationKind::Density, grid, &RepresentOptions::default())
}

/// Kaplan-Meier survival (equal to `#{X > x}/m` for complete data).
pub fn estimate_survival(s: &SubjectSample, grid: &[f64]) -> Result<Curve> {
    estimate(s, RepresentationKind::Survival, grid, &RepresentOptions::default())
}

/// Nelson-Aalen cumulative hazard.
pub fn estimate_cumhaz(s: &SubjectSample, grid: &[f64]) -> Result<Curve> {
    estimate(s, RepresentationKind::CumulativeHazard, grid, &RepresentOptions::default())
}

pub fn estimate_hazard(s: &SubjectSample, grid: &[f64], estimator: HazardEstimator) -> Result<Curve> {
    estimate(s, RepresentationKind::Hazard, grid, &RepresentOptions { hazard: estimator })
}

pub fn estimate_quantile(s: &SubjectSample, levels: &[f64]) -> Result<Curve> {
    estimate(s, RepresentationKind::Quantile, levels, &RepresentOptions::default())
}

pub fn estimate_ttt(s: &SubjectSample, levels: &[f64]) -> Result<Curve> {
    estimate(s, RepresentationKind::Ttt, levels, &RepresentOptions::default())
}

/// Evaluates `kind` for every subject on an existing grid (for example one
/// built from a training fold).
pub fn represent_on_grid(
    samples: &[SubjectSample],
    grid: &PooledGrid,
    kind: RepresentationKind,
    options: &RepresentOptions,
    exec: Execution,
) -> Result<Vec<Curve>> {
    let g = grid.for_kind(kind);
    if kind.is_functional() {
        check_grid(g, kind.domain() == Domain::QuantileLevel)?;
    }
    exec.map(samples, |s| {
        s.validate()?;
        Ok(evaluate(&SortedSample::new(&s.values), &s.subject_id, kind, g, options))
    })
    .into_iter()
    .collect()
}

/// Builds the pooled grid from `samples` and evaluates `kind` for each.
pub fn represent_cohort(
    samples: &[SubjectSample],
    spec: &GridSpec,
    kind: RepresentationKind,
    options: &RepresentOptions,
    exec: Execution,
) -> Result<(PooledGrid, Vec<Curve>)> {
    for s in samples {
        s.validate()?;
    }
    let grid = pooled_grid(samples, spec)?;
    let curves = represent_on_grid(samples, &grid, kind, options, exec)?;
    Ok((grid, curves))
}

/// Pointwise mean of curves sharing one grid.
pub fn barycenter(curves: &[Curve]) -> Result<Curve> {
    let first = curves.first().ok_or(RepresentError::EmptyPool)?;
    for c in curves {
        if c.kind != first.kind || c.grid != first.grid {
            return Err(RepresentError::GridMismatch("barycenter needs one kind on one grid".into()));
        }
    }
    let n = curves.len() as f64;
    let values = (0..first.grid.len()).map(|g| curves.iter().map(|c| c.values[g]).sum::<f64>() / n).collect();
    Ok(Curve { values, ..first.clone() })
}

/// Writes curves in long format: `subject_id,kind,domain,grid,value`.
pub fn write_curves_csv<W: Write>(out: W, labeled: &[(&str, &Curve)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["subject_id", "kind", "domain", "grid", "value"])?;
    for (id, c) in labeled {
        for (g, v) in c.grid.iter().zip(&c.values) {
            w.write_record([id, c.kind.name(), c.domain.name(), &g.to_string(), &v.to_string()])?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
