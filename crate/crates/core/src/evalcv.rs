//! Replicated k-fold cross-validation of the six predictors, plus
//! regression biomarkers and their rank correlations.
//!
//! Every fold rebuilds the pooled grid, the representations and the
//! functional weights from its training subjects only, re-selects the
//! smoothing parameter, and scores the held-out subjects on the training
//! grid. Replication `r` draws its fold split from the keyed stream
//! `(seed, CV_FOLDS, r)`, so results do not depend on the worker count.

use std::io::Write;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;
use crate::represent::{
    pooled_grid, represent_on_grid, Curve, GridSpec, PooledGrid, RepresentError, RepresentOptions,
    RepresentationKind, SubjectSample,
};
use crate::rng::{derive_seed, domain, keyed_rng};
use crate::sofr::{
    fit_scalar_baseline, linear_predictor, log_grid, penalty_scale, select_smoothing, FitError, FitOptions, Link,
    Prediction, ScalarFit, Selection, SmoothingCriterion,
};
use crate::splinebasis::{functional_weights, BSplineBasis, BasisError, BasisSpec, PenaltyMatrix};
use crate::synthgen::{simulate_cohort, CohortDesign, SynthError};

#[derive(Debug, Error)]
pub enum CvError {
    #[error("invalid CV spec: {0}")]
    InvalidSpec(String),
    #[error("subject {0} has no outcome of the requested type")]
    MissingOutcome(String),
    #[error("degenerate fold: {0}")]
    DegenerateFold(String),
    #[error("outcome has zero variance")]
    ZeroVariance,
    #[error("{0}")]
    InvalidInput(String),
    #[error("{context}: {source}")]
    Fit {
        context: String,
        #[source]
        source: FitError,
    },
    #[error("{context}: {source}")]
    Represent {
        context: String,
        #[source]
        source: RepresentError,
    },
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("failed to write table: {0}")]
    Write(#[from] csv::Error),
}

type Result<T> = std::result::Result<T, CvError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Binary,
    Continuous,
}

impl Outcome {
    pub fn link(self) -> Link {
        match self {
            Outcome::Binary => Link::Logit,
            Outcome::Continuous => Link::Identity,
        }
    }

    pub fn metric_name(self) -> &'static str {
        match self {
            Outcome::Binary => "cvAUC",
            Outcome::Continuous => "cvR2",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Outcome::Binary => "binary",
            Outcome::Continuous => "continuous",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transform {
    Raw,
    /// `x ↦ ln(1 + x)`.
    Log1,
}

impl Transform {
    pub const BOTH: [Transform; 2] = [Transform::Raw, Transform::Log1];

    pub fn name(self) -> &'static str {
        match self {
            Transform::Raw => "raw",
            Transform::Log1 => "log1",
        }
    }

    pub fn apply(self, samples: &[SubjectSample]) -> Vec<SubjectSample> {
        match self {
            Transform::Raw => samples.to_vec(),
            Transform::Log1 => samples.iter().map(SubjectSample::log1p_transformed).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CvSpec {
    pub folds: usize,
    pub replications: usize,
    pub seed: u64,
    /// Stratify folds by the binary label.
    pub stratified: bool,
    /// Pool held-out predictions across folds before computing the metric;
    /// otherwise average per-fold metrics.
    pub pool_folds: bool,
}

impl Default for CvSpec {
    fn default() -> Self {
        CvSpec { folds: 5, replications: 100, seed: 0, stratified: true, pool_folds: true }
    }
}

impl CvSpec {
    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(CvError::InvalidSpec(format!("folds = {}; need at least 2", self.folds)));
        }
        if self.replications < 1 {
            return Err(CvError::InvalidSpec("replications must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// Log-spaced smoothing grid. With `relative` set the grid is multiplied by
/// `tr(WᵀW)/tr(ℙ)` of the design at hand.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LambdaGrid {
    pub min: f64,
    pub max: f64,
    pub count: usize,
    pub relative: bool,
}

impl Default for LambdaGrid {
    fn default() -> Self {
        LambdaGrid { min: 1e-6, max: 1e6, count: 50, relative: true }
    }
}

impl LambdaGrid {
    pub fn validate(&self) -> Result<()> {
        let ok = self.count >= 1
            && self.min.is_finite()
            && self.max.is_finite()
            && self.min > 0.0
            && self.max >= self.min
            && (self.count > 1 || self.min == self.max);
        if !ok {
            return Err(CvError::InvalidSpec(format!(
                "λ grid needs 0 < min ≤ max and count ≥ 1 (min = max for a single point), got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn values(&self, scale: f64) -> Vec<f64> {
        let s = if self.relative { scale } else { 1.0 };
        let base = if self.count == 1 { vec![self.min] } else { log_grid(self.min, self.max, self.count) };
        base.into_iter().map(|l| l * s).collect()
    }
}

/// Everything needed to turn samples into a fitted model.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub grid: GridSpec,
    pub basis: BasisSpec,
    pub represent: RepresentOptions,
    pub lambda: LambdaGrid,
    pub criterion: SmoothingCriterion,
    pub fit: FitOptions,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate().map_err(|e| CvError::InvalidSpec(e.to_string()))?;
        self.basis.validate()?;
        if self.basis.degree < 2 {
            return Err(BasisError::DegreeTooLow(self.basis.degree).into());
        }
        self.lambda.validate()
    }
}

/// Outcome values of the requested type, in subject order.
pub fn outcome_values(samples: &[SubjectSample], outcome: Outcome) -> Result<Vec<f64>> {
    samples
        .iter()
        .map(|s| {
            let v = match outcome {
                Outcome::Binary => s.outcome_binary.map(f64::from),
                Outcome::Continuous => s.outcome_continuous,
            };
            v.ok_or_else(|| CvError::MissingOutcome(s.subject_id.clone()))
        })
        .collect()
}

/// Rank-based (Mann-Whitney) AUC; tied scores count ½.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(CvError::InvalidInput("scores and labels differ in length".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(CvError::InvalidInput("NaN score".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.iter().filter(|&&l| l == 0).count();
    if n_pos + n_neg != labels.len() {
        return Err(CvError::InvalidInput("labels must be 0 or 1".into()));
    }
    if n_pos == 0 || n_neg == 0 {
        return Err(CvError::DegenerateFold("AUC needs both classes".into()));
    }
    let ranks = average_ranks(scores);
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l == 1).map(|(r, _)| r).sum();
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// `1 − SSE/SST` with SST centred at the mean of `y`.
pub fn r_squared(pred: &[f64], y: &[f64]) -> Result<f64> {
    if pred.len() != y.len() || y.is_empty() {
        return Err(CvError::InvalidInput("predictions and outcomes differ in length".into()));
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let sst: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    if sst <= 0.0 {
        return Err(CvError::ZeroVariance);
    }
    let sse: f64 = pred.iter().zip(y).map(|(p, v)| (v - p).powi(2)).sum();
    Ok(1.0 - sse / sst)
}

/// Average ranks (1-based); ties share the mean of their positions.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[order[k]] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Fold index of each subject. With labels, each class is shuffled and
/// dealt round-robin so every fold mirrors the class proportions.
pub fn assign_folds<R: Rng + ?Sized>(labels: Option<&[u8]>, n: usize, folds: usize, rng: &mut R) -> Vec<usize> {
    let mut out = vec![0; n];
    let mut dealt = 0;
    let mut deal = |idx: Vec<usize>| {
        for i in idx {
            out[i] = dealt % folds;
            dealt += 1;
        }
    };
    match labels {
        Some(labels) => {
            for class in [0u8, 1] {
                let mut idx: Vec<usize> = (0..n).filter(|&i| labels[i] == class).collect();
                idx.shuffle(rng);
                deal(idx);
            }
        }
        None => {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(rng);
            deal(idx);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn folds_from_assignment(assignment: &[usize], folds: usize) -> Vec<Fold> {
    (0..folds)
        .map(|f| {
            let (test, train) = (0..assignment.len()).partition(|&i| assignment[i] == f);
            Fold { train, test }
        })
        .collect()
}

/// The fold split used by replication `replication`.
pub fn replication_folds(samples: &[SubjectSample], outcome: Outcome, spec: &CvSpec, replication: usize) -> Result<Vec<Fold>> {
    spec.validate()?;
    let n = samples.len();
    if n < spec.folds {
        return Err(CvError::InvalidSpec(format!("{n} subjects cannot fill {} folds", spec.folds)));
    }
    let labels: Option<Vec<u8>> = match outcome {
        Outcome::Binary => Some(
            outcome_values(samples, outcome)?.into_iter().map(|v| v as u8).collect(),
        ),
        Outcome::Continuous => None,
    };
    let mut rng = keyed_rng(spec.seed, domain::CV_FOLDS, replication as u64);
    let stratify = spec.stratified && labels.is_some();
    // stratified splits can still leave a training fold with one class when
    // a class has fewer members than folds; reshuffle a few times first
    for _ in 0..20 {
        let assignment = assign_folds(if stratify { labels.as_deref() } else { None }, n, spec.folds, &mut rng);
        let folds = folds_from_assignment(&assignment, spec.folds);
        let degenerate = labels.as_ref().and_then(|l| {
            folds.iter().position(|f| {
                let ones = f.train.iter().filter(|&&i| l[i] == 1).count();
                ones == 0 || ones == f.train.len()
            })
        });
        match degenerate {
            None => return Ok(folds),
            Some(f) if !stratify => {
                return Err(CvError::DegenerateFold(format!(
                    "replication {replication}, fold {f}: training subjects share one class"
                )))
            }
            Some(_) => continue,
        }
    }
    Err(CvError::DegenerateFold(format!("replication {replication}: no split with both classes in every training fold")))
}

fn subset(samples: &[SubjectSample], idx: &[usize]) -> Vec<SubjectSample> {
    idx.iter().map(|&i| samples[i].clone()).collect()
}

/// Pooled grid, curves and weights of one training set.
#[derive(Debug, Clone)]
pub struct FoldDesign {
    pub grid: PooledGrid,
    pub curves: Vec<Curve>,
    pub w: DMatrix<f64>,
}

pub fn training_design(
    train: &[SubjectSample],
    kind: RepresentationKind,
    basis: &BSplineBasis,
    config: &ModelConfig,
    exec: Execution,
) -> Result<FoldDesign> {
    if !kind.is_functional() {
        return Err(CvError::InvalidInput(format!("{kind} is not a functional representation")));
    }
    let ctx = |e| CvError::Represent { context: format!("{kind} representation"), source: e };
    let grid = pooled_grid(train, &config.grid).map_err(ctx)?;
    let curves = represent_on_grid(train, &grid, kind, &config.represent, exec).map_err(ctx)?;
    let w = functional_weights(&curves, basis)?;
    Ok(FoldDesign { grid, curves, w })
}

/// A penalized functional fit together with the grid it was built on.
#[derive(Debug, Clone)]
pub struct FunctionalModel {
    pub kind: RepresentationKind,
    pub grid: PooledGrid,
    pub basis: BSplineBasis,
    pub penalty: PenaltyMatrix,
    pub lambda_scale: f64,
    pub selection: Selection,
}

impl FunctionalModel {
    /// Curves of `samples` on this model's grid.
    pub fn curves(&self, samples: &[SubjectSample], options: &RepresentOptions, exec: Execution) -> Result<Vec<Curve>> {
        represent_on_grid(samples, &self.grid, self.kind, options, exec)
            .map_err(|e| CvError::Represent { context: format!("{} representation", self.kind), source: e })
    }

    pub fn predict(&self, samples: &[SubjectSample], options: &RepresentOptions, exec: Execution) -> Result<Prediction> {
        let w = functional_weights(&self.curves(samples, options, exec)?, &self.basis)?;
        linear_predictor(&self.selection.fit, &w)
            .map_err(|e| CvError::Fit { context: format!("{} prediction", self.kind), source: e })
    }

    /// Per-subject `∫ D_i(z) β̂(z) dz` by trapezoid quadrature of the curve
    /// against the coefficient curve on the normalized grid.
    pub fn biomarker(&self, curves: &[Curve]) -> Result<Vec<f64>> {
        let grid = self.grid.for_kind(self.kind);
        let z = self.basis.normalized_grid(grid);
        let beta = self.basis.combine(&self.selection.fit.coef, &z)?;
        let tw = crate::quad::trapezoid_weights(&z);
        curves
            .iter()
            .map(|c| {
                if c.grid != grid || c.kind != self.kind {
                    return Err(CvError::InvalidInput(format!("{} curve is not on the model grid", c.kind)));
                }
                Ok(crate::quad::neumaier_sum((0..z.len()).map(|g| tw[g] * c.values[g] * beta[g])))
            })
            .collect()
    }
}

/// Builds the representation on `samples`, selects λ and fits.
pub fn fit_functional(
    samples: &[SubjectSample],
    kind: RepresentationKind,
    outcome: Outcome,
    config: &ModelConfig,
    exec: Execution,
) -> Result<FunctionalModel> {
    let y = outcome_values(samples, outcome)?;
    let basis = BSplineBasis::new(config.basis)?;
    let design = training_design(samples, kind, &basis, config, exec)?;
    let penalty = basis.penalty()?;
    let lambda_scale = penalty_scale(&design.w, &penalty);
    let lambdas = config.lambda.values(lambda_scale);
    let selection = select_smoothing(&design.w, &y, outcome.link(), &lambdas, &penalty, config.criterion, &config.fit)
        .map_err(|e| CvError::Fit { context: format!("{kind} fit"), source: e })?;
    Ok(FunctionalModel { kind, grid: design.grid, basis, penalty, lambda_scale, selection })
}

pub fn fit_scalar(samples: &[SubjectSample], outcome: Outcome, config: &ModelConfig) -> Result<ScalarFit> {
    let y = outcome_values(samples, outcome)?;
    let x: Vec<f64> = samples.iter().map(SubjectSample::mean).collect();
    fit_scalar_baseline(&x, &y, outcome.link(), &config.fit)
        .map_err(|e| CvError::Fit { context: "scalar-mean fit".into(), source: e })
}

/// Held-out predictions (probabilities or fitted means) for one fold.
fn fold_predictions(
    samples: &[SubjectSample],
    fold: &Fold,
    kind: RepresentationKind,
    outcome: Outcome,
    config: &ModelConfig,
) -> Result<Vec<f64>> {
    let train = subset(samples, &fold.train);
    let test = subset(samples, &fold.test);
    let pred = if kind.is_functional() {
        let model = fit_functional(&train, kind, outcome, config, Execution::Sequential)?;
        model.predict(&test, &config.represent, Execution::Sequential)?
    } else {
        let fit = fit_scalar(&train, outcome, config)?;
        fit.predict(&test.iter().map(SubjectSample::mean).collect::<Vec<_>>())
    };
    Ok(pred.response().to_vec())
}

fn metric(outcome: Outcome, pred: &[f64], y: &[f64]) -> Result<f64> {
    match outcome {
        Outcome::Binary => auc(pred, &y.iter().map(|&v| v as u8).collect::<Vec<_>>()),
        Outcome::Continuous => r_squared(pred, y),
    }
}

/// Metric of one replication for each of `kinds`; the fold split is shared.
fn replicate(
    samples: &[SubjectSample],
    kinds: &[RepresentationKind],
    outcome: Outcome,
    spec: &CvSpec,
    config: &ModelConfig,
    replication: usize,
) -> Vec<Result<f64>> {
    let folds = match replication_folds(samples, outcome, spec, replication) {
        Ok(f) => f,
        Err(e) => {
            let msg = e.to_string();
            return kinds.iter().map(|_| Err(CvError::DegenerateFold(msg.clone()))).collect();
        }
    };
    let y = match outcome_values(samples, outcome) {
        Ok(y) => y,
        Err(e) => {
            let msg = e.to_string();
            return kinds.iter().map(|_| Err(CvError::InvalidInput(msg.clone()))).collect();
        }
    };
    kinds
        .iter()
        .map(|&kind| {
            let mut pooled = vec![f64::NAN; samples.len()];
            let mut per_fold = Vec::with_capacity(folds.len());
            for (f, fold) in folds.iter().enumerate() {
                let pred = fold_predictions(samples, fold, kind, outcome, config).map_err(|e| match e {
                    CvError::Fit { context, source } => {
                        CvError::Fit { context: format!("replication {replication}, fold {f}, {context}"), source }
                    }
                    CvError::Represent { context, source } => {
                        CvError::Represent { context: format!("replication {replication}, fold {f}, {context}"), source }
                    }
                    other => other,
                })?;
                if spec.pool_folds {
                    for (&i, p) in fold.test.iter().zip(pred) {
                        pooled[i] = p;
                    }
                } else {
                    let yf: Vec<f64> = fold.test.iter().map(|&i| y[i]).collect();
                    per_fold.push(metric(outcome, &pred, &yf).map_err(|e| {
                        CvError::DegenerateFold(format!("replication {replication}, fold {f}: {e}"))
                    })?);
                }
            }
            if spec.pool_folds {
                metric(outcome, &pooled, &y)
            } else {
                Ok(per_fold.iter().sum::<f64>() / per_fold.len() as f64)
            }
        })
        .collect()
}

/// Linear-interpolation percentile (`q` in [0, 1]) of unsorted values.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = q * (v.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    /// Mean and 2.5 / 97.5 percentiles.
    pub fn percentile95(values: &[f64]) -> Interval {
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        // keep lower ≤ mean ≤ upper under rounding
        let lower = percentile(values, 0.025).min(mean);
        let upper = percentile(values, 0.975).max(mean);
        Interval { mean, lower, upper }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvReport {
    pub representation: RepresentationKind,
    pub transform: Transform,
    pub outcome: Outcome,
    pub metric_mean: f64,
    pub ci95: (f64, f64),
    pub per_replication: Vec<f64>,
}

impl CvReport {
    pub fn from_metrics(
        representation: RepresentationKind,
        transform: Transform,
        outcome: Outcome,
        per_replication: Vec<f64>,
    ) -> CvReport {
        let iv = Interval::percentile95(&per_replication);
        CvReport { representation, transform, outcome, metric_mean: iv.mean, ci95: (iv.lower, iv.upper), per_replication }
    }

    pub fn interval(&self) -> Interval {
        Interval { mean: self.metric_mean, lower: self.ci95.0, upper: self.ci95.1 }
    }
}

/// Replication-wise difference `a − b` (same fold splits) and its interval.
pub fn paired_difference(a: &CvReport, b: &CvReport) -> Result<Interval> {
    if a.per_replication.len() != b.per_replication.len() {
        return Err(CvError::InvalidInput("reports have different replication counts".into()));
    }
    let d: Vec<f64> = a.per_replication.iter().zip(&b.per_replication).map(|(x, y)| x - y).collect();
    Ok(Interval::percentile95(&d))
}

fn collect_reports(
    per_rep: Vec<Vec<Result<f64>>>,
    kinds: &[RepresentationKind],
    transform: Transform,
    outcome: Outcome,
) -> Vec<Result<CvReport>> {
    let mut columns: Vec<Vec<Result<f64>>> = kinds.iter().map(|_| Vec::with_capacity(per_rep.len())).collect();
    for rep in per_rep {
        for (k, v) in rep.into_iter().enumerate() {
            columns[k].push(v);
        }
    }
    columns
        .into_iter()
        .zip(kinds)
        .map(|(col, &kind)| {
            let metrics: Result<Vec<f64>> = col.into_iter().collect();
            Ok(CvReport::from_metrics(kind, transform, outcome, metrics?))
        })
        .collect()
}

fn crossvalidate_many(
    samples: &[SubjectSample],
    kinds: &[RepresentationKind],
    transform: Transform,
    outcome: Outcome,
    spec: &CvSpec,
    config: &ModelConfig,
    exec: Execution,
) -> Result<Vec<Result<CvReport>>> {
    spec.validate()?;
    config.validate()?;
    if samples.len() < spec.folds {
        return Err(CvError::InvalidSpec(format!("{} subjects cannot fill {} folds", samples.len(), spec.folds)));
    }
    outcome_values(samples, outcome)?;
    let data = transform.apply(samples);
    let per_rep = exec.map_range(spec.replications, |r| replicate(&data, kinds, outcome, spec, config, r));
    Ok(collect_reports(per_rep, kinds, transform, outcome))
}

/// Replicated k-fold CV of one representation.
pub fn crossvalidate(
    samples: &[SubjectSample],
    kind: RepresentationKind,
    transform: Transform,
    outcome: Outcome,
    spec: &CvSpec,
    config: &ModelConfig,
    exec: Execution,
) -> Result<CvReport> {
    crossvalidate_many(samples, &[kind], transform, outcome, spec, config, exec)?.remove(0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvCell {
    pub representation: RepresentationKind,
    pub transform: Transform,
    pub outcome: Outcome,
    /// The report, or the failure message of this cell.
    pub result: std::result::Result<CvReport, String>,
}

/// Six predictors × transforms. Fold splits are shared by every cell of one
/// transform, so rows can be compared replication by replication.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvTable {
    pub cells: Vec<CvCell>,
}

impl CvTable {
    pub fn get(&self, kind: RepresentationKind, transform: Transform) -> Option<&CvCell> {
        self.cells.iter().find(|c| c.representation == kind && c.transform == transform)
    }

    pub fn failures(&self) -> usize {
        self.cells.iter().filter(|c| c.result.is_err()).count()
    }
}

pub fn compare_representations(
    samples: &[SubjectSample],
    kinds: &[RepresentationKind],
    transforms: &[Transform],
    outcome: Outcome,
    spec: &CvSpec,
    config: &ModelConfig,
    exec: Execution,
) -> Result<CvTable> {
    let mut cells = Vec::new();
    for &transform in transforms {
        let reports = crossvalidate_many(samples, kinds, transform, outcome, spec, config, exec)?;
        for (&kind, r) in kinds.iter().zip(reports) {
            if let Err(e) = &r {
                log::error!("{kind} / {}: {e}", transform.name());
            }
            cells.push(CvCell { representation: kind, transform, outcome, result: r.map_err(|e| e.to_string()) });
        }
    }
    Ok(CvTable { cells })
}

/// CV where every replication draws a fresh cohort from `design` and then
/// runs one k-fold split. All kinds share the cohort and the split.
pub fn cohort_study(
    design: &CohortDesign,
    kinds: &[RepresentationKind],
    transform: Transform,
    outcome: Outcome,
    spec: &CvSpec,
    config: &ModelConfig,
    exec: Execution,
) -> Result<Vec<CvReport>> {
    spec.validate()?;
    config.validate()?;
    design.validate()?;
    let per_rep = exec.map_range(spec.replications, |r| {
        let cohort = match simulate_cohort(design, derive_seed(spec.seed, domain::COHORT_STUDY, r as u64)) {
            Ok(c) => transform.apply(&c),
            Err(e) => {
                let msg = e.to_string();
                return kinds.iter().map(|_| Err(CvError::InvalidInput(msg.clone()))).collect();
            }
        };
        replicate(&cohort, kinds, outcome, spec, config, r)
    });
    collect_reports(per_rep, kinds, transform, outcome).into_iter().collect()
}

/// Table layout: `representation,transform,outcome,metric,mean,lo95,hi95,status`.
pub fn write_cv_table_csv<W: Write>(out: W, table: &CvTable) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["representation", "transform", "outcome", "metric", "mean", "lo95", "hi95", "status"])?;
    for c in &table.cells {
        let head = [c.representation.name(), c.transform.name(), c.outcome.name(), c.outcome.metric_name()];
        match &c.result {
            Ok(r) => w.write_record(head.iter().map(|s| s.to_string()).chain([
                r.metric_mean.to_string(),
                r.ci95.0.to_string(),
                r.ci95.1.to_string(),
                "ok".to_string(),
            ]))?,
            Err(msg) => w.write_record(
                head.iter().map(|s| s.to_string()).chain(["NA".into(), "NA".into(), "NA".into(), format!("failed: {msg}")]),
            )?,
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Per-replication metrics in long format.
pub fn write_replications_csv<W: Write>(out: W, table: &CvTable) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["representation", "transform", "outcome", "replication", "value"])?;
    for c in &table.cells {
        if let Ok(r) = &c.result {
            for (i, v) in r.per_replication.iter().enumerate() {
                w.write_record([c.representation.name(), c.transform.name(), c.outcome.name(), &i.to_string(), &v.to_string()])?;
            }
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub const BIOMARKER_KINDS: [RepresentationKind; 5] = [
    RepresentationKind::Density,
    RepresentationKind::Survival,
    RepresentationKind::Hazard,
    RepresentationKind::Quantile,
    RepresentationKind::Ttt,
];

pub const BIOMARKER_COLUMNS: [&str; 6] = ["DBM_f", "DBM_S", "DBM_lambda", "DBM_Q", "DBM_TTT", "BM_a"];

/// Per-subject regression biomarkers, columns as in [`BIOMARKER_COLUMNS`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BiomarkerTable {
    pub subject_ids: Vec<String>,
    pub columns: [Vec<f64>; 6],
}

/// `DBM` for each functional model (in [`BIOMARKER_KINDS`] order) and
/// `BM_a = x̄_i · slope` from the scalar fit.
pub fn biomarkers(
    samples: &[SubjectSample],
    models: &[FunctionalModel],
    scalar: &ScalarFit,
    options: &RepresentOptions,
    exec: Execution,
) -> Result<BiomarkerTable> {
    let mut columns: [Vec<f64>; 6] = Default::default();
    for (slot, kind) in BIOMARKER_KINDS.iter().enumerate() {
        let model = models
            .iter()
            .find(|m| m.kind == *kind)
            .ok_or_else(|| CvError::InvalidInput(format!("no fitted {kind} model")))?;
        columns[slot] = model.biomarker(&model.curves(samples, options, exec)?)?;
    }
    columns[5] = samples.iter().map(|s| s.mean() * scalar.slope).collect();
    if columns.iter().flatten().any(|v| !v.is_finite()) {
        return Err(CvError::InvalidInput("non-finite biomarker".into()));
    }
    Ok(BiomarkerTable { subject_ids: samples.iter().map(|s| s.subject_id.clone()).collect(), columns })
}

/// Spearman correlation (Pearson on average ranks); `None` when either
/// column is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpearmanMatrix {
    pub names: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
}

pub fn spearman_matrix(table: &BiomarkerTable) -> Result<SpearmanMatrix> {
    let n = table.subject_ids.len();
    if n < 3 {
        return Err(CvError::InvalidInput(format!("Spearman matrix needs ≥ 3 subjects, got {n}")));
    }
    let k = table.columns.len();
    let mut values = vec![vec![None; k]; k];
    for i in 0..k {
        for j in i..k {
            let r = if i == j {
                spearman(&table.columns[i], &table.columns[i]).map(|_| 1.0)
            } else {
                spearman(&table.columns[i], &table.columns[j])
            };
            values[i][j] = r;
            values[j][i] = r;
        }
    }
    Ok(SpearmanMatrix { names: BIOMARKER_COLUMNS.iter().map(|s| s.to_string()).collect(), values })
}

pub fn write_biomarkers_csv<W: Write>(out: W, table: &BiomarkerTable) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(std::iter::once("subject_id").chain(BIOMARKER_COLUMNS))?;
    for (i, id) in table.subject_ids.iter().enumerate() {
        w.write_record(std::iter::once(id.clone()).chain(table.columns.iter().map(|c| c[i].to_string())))?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_spearman_csv<W: Write>(out: W, m: &SpearmanMatrix) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(std::iter::once("").chain(m.names.iter().map(String::as_str)))?;
    for (name, row) in m.names.iter().zip(&m.values) {
        w.write_record(
            std::iter::once(name.clone()).chain(row.iter().map(|v| v.map_or_else(|| "NA".to_string(), |r| r.to_string()))),
        )?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
