//! Penalized scalar-on-function GLM.
//!
//! The model is `g(μ_i) = α + ∫ D_i(z) β(z) dz` with `β = Σ θ_k B_k`, which
//! the functional weights reduce to `η = α + Wθ`. Coefficients minimize
//! `deviance + λ θᵀℙθ` by penalized IRLS (Fisher scoring) with step-halving.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::splinebasis::{BSplineBasis, BasisError, PenaltyMatrix};

#[derive(Debug, Error)]
pub enum FitError {
    #[error("invalid fit input: {0}")]
    InvalidInput(String),
    #[error("logistic separation: coefficient norm {norm:.3e} exceeds the guard")]
    Separation { norm: f64 },
    #[error("penalized information matrix is not finite")]
    NonFinite,
    #[error("no smoothing candidate converged ({0} tried)")]
    NoConvergence(usize),
    #[error("fit is not converged")]
    NotConverged,
    #[error(transparent)]
    Basis(#[from] BasisError),
}

type Result<T> = std::result::Result<T, FitError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    Identity,
    Logit,
}

pub fn logistic(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Relative change of the penalized deviance that counts as converged.
    pub tolerance: f64,
    pub max_halvings: usize,
    /// `‖θ̂‖` above which a logistic fit is declared separated.
    pub separation_norm: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { max_iterations: 100, tolerance: 1e-8, max_halvings: 30, separation_norm: 1e6 }
    }
}

fn serialize_matrix<S: Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    let rows: Vec<Vec<f64>> = (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect();
    rows.serialize(s)
}

#[derive(Debug, Clone, Serialize)]
pub struct FunctionalFit {
    pub link: Link,
    pub intercept: f64,
    pub coef: Vec<f64>,
    pub smoothing: f64,
    /// Joint covariance of `(α̂, θ̂)`.
    #[serde(serialize_with = "serialize_matrix")]
    pub coef_cov: DMatrix<f64>,
    pub dispersion: f64,
    pub deviance: f64,
    pub penalized_deviance: f64,
    /// Effective degrees of freedom, `tr(H)`.
    pub edf: f64,
    pub gcv: f64,
    pub aic: f64,
    pub converged: bool,
    pub iterations: usize,
    pub n: usize,
    #[serde(skip)]
    pub leverages: Vec<f64>,
}

impl FunctionalFit {
    pub fn num_coef(&self) -> usize {
        self.coef.len()
    }

    /// GCV recomputed from the sum of leverages instead of the trace.
    pub fn gcv_from_leverages(&self) -> f64 {
        let n = self.n as f64;
        let tr: f64 = self.leverages.iter().sum();
        n * self.deviance / (n - tr).powi(2)
    }

    fn coef_vector(&self) -> DVector<f64> {
        let mut b = DVector::zeros(self.coef.len() + 1);
        b[0] = self.intercept;
        b.rows_mut(1, self.coef.len()).copy_from_slice(&self.coef);
        b
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SmoothingCriterion {
    #[default]
    Gcv,
    Aic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PathPoint {
    pub lambda: f64,
    pub gcv: f64,
    pub aic: f64,
    pub edf: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Selection {
    pub fit: FunctionalFit,
    pub criterion: SmoothingCriterion,
    pub path: Vec<PathPoint>,
}

/// `n` log-spaced points from `lo` to `hi`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    crate::quad::linspace(lo.ln(), hi.ln(), n).into_iter().map(f64::exp).collect()
}

/// Ratio `tr(WᵀW) / tr(ℙ)`; multiplying a relative λ grid by it makes the
/// grid comparable across representations with very different scales.
pub fn penalty_scale(w: &DMatrix<f64>, penalty: &PenaltyMatrix) -> f64 {
    let data: f64 = w.iter().map(|v| v * v).sum();
    let pen = penalty.entries.trace();
    if data > 0.0 && pen > 0.0 {
        data / pen
    } else {
        1.0
    }
}

fn design(w: &DMatrix<f64>) -> DMatrix<f64> {
    let mut x = DMatrix::from_element(w.nrows(), w.ncols() + 1, 1.0);
    x.view_mut((0, 1), (w.nrows(), w.ncols())).copy_from(w);
    x
}

fn validate(w: &DMatrix<f64>, y: &[f64], link: Link, penalty: &DMatrix<f64>, lambda: f64) -> Result<()> {
    if w.nrows() == 0 {
        return Err(FitError::InvalidInput("no observations".into()));
    }
    if w.nrows() != y.len() {
        return Err(FitError::InvalidInput(format!("{} rows in W but {} outcomes", w.nrows(), y.len())));
    }
    if penalty.nrows() != w.ncols() || penalty.ncols() != w.ncols() {
        return Err(FitError::InvalidInput(format!(
            "penalty is {}×{} but W has {} columns",
            penalty.nrows(),
            penalty.ncols(),
            w.ncols()
        )));
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(FitError::InvalidInput("W has non-finite entries".into()));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(FitError::InvalidInput(format!("smoothing parameter {lambda} must be finite and ≥ 0")));
    }
    match link {
        Link::Identity if y.iter().any(|v| !v.is_finite()) => {
            Err(FitError::InvalidInput("outcomes must be finite".into()))
        }
        Link::Logit if y.iter().any(|&v| v != 0.0 && v != 1.0) => {
            Err(FitError::InvalidInput("logistic outcomes must be 0 or 1".into()))
        }
        _ => Ok(()),
    }
}

/// Penalized least-squares factorization of the augmented matrix
/// `[√w X; E]` with `EᵀE = λℙ⁺`. Columns are scaled to unit norm; QR is
/// used unless it is numerically rank deficient, in which case an SVD
/// pseudo-inverse takes over. Solving this system is better conditioned
/// than forming `XᵀWX + λℙ⁺`.
struct PenalizedLs {
    scale: DVector<f64>,
    /// `R⁻¹` (or `VΣ⁺`): `A⁻¹ = C · rinv · rinvᵀ · C`.
    rinv: DMatrix<f64>,
    /// Thin `Qᵀ` (or `Uᵀ`).
    qt: DMatrix<f64>,
}

impl PenalizedLs {
    fn new(x: &DMatrix<f64>, w: &DVector<f64>, root: &DMatrix<f64>) -> Result<Self> {
        let (n, p) = (x.nrows(), x.ncols());
        let mut m = DMatrix::zeros(n + root.nrows(), p);
        for i in 0..n {
            let sw = w[i].sqrt();
            for j in 0..p {
                m[(i, j)] = sw * x[(i, j)];
            }
        }
        m.view_mut((n, 0), (root.nrows(), p)).copy_from(root);
        if m.iter().any(|v| !v.is_finite()) {
            return Err(FitError::NonFinite);
        }
        let scale = DVector::from_iterator(
            p,
            m.column_iter().map(|c| {
                let norm = c.norm();
                if norm > 0.0 {
                    1.0 / norm
                } else {
                    1.0
                }
            }),
        );
        for j in 0..p {
            m.column_mut(j).scale_mut(scale[j]);
        }
        let qr = m.clone().qr();
        let r = qr.r();
        let diag = r.diagonal().map(f64::abs);
        if diag.min() > 1e-9 * diag.max() {
            if let Some(rinv) = r.try_inverse() {
                return Ok(PenalizedLs { scale, rinv, qt: qr.q().transpose() });
            }
        }
        let svd = m.svd(true, true);
        let (u, v_t) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
        let max = svd.singular_values.max();
        let inv = svd.singular_values.map(|v| if v > 1e-10 * max { 1.0 / v } else { 0.0 });
        let rinv = v_t.transpose() * DMatrix::from_diagonal(&inv);
        Ok(PenalizedLs { scale, rinv, qt: u.transpose() })
    }

    /// Solution of the penalized least-squares problem with response `√w z`
    /// stacked over zeros.
    fn solve(&self, w: &DVector<f64>, z: &DVector<f64>) -> DVector<f64> {
        let n = z.len();
        let qtb = self.qt.columns(0, n) * z.zip_map(w, |z, w| z * w.sqrt());
        (&self.rinv * qtb).component_mul(&self.scale)
    }

    /// `(XᵀWX + λℙ⁺)⁻¹`.
    fn inverse(&self) -> DMatrix<f64> {
        let inner = &self.rinv * self.rinv.transpose();
        let c = &self.scale;
        let inv = DMatrix::from_fn(inner.nrows(), inner.ncols(), |i, j| inner[(i, j)] * c[i] * c[j]);
        (&inv + inv.transpose()) * 0.5
    }
}

/// Square root `E` of the padded penalty: `EᵀE = ℙ⁺`.
fn penalty_root(penalty: &DMatrix<f64>) -> DMatrix<f64> {
    let k = penalty.nrows();
    let eig = nalgebra::SymmetricEigen::new(penalty.clone());
    let mut root = DMatrix::zeros(k, k + 1);
    for (r, (&ev, vec)) in eig.eigenvalues.iter().zip(eig.eigenvectors.column_iter()).enumerate() {
        let sv = ev.max(0.0).sqrt();
        for j in 0..k {
            root[(r, j + 1)] = sv * vec[j];
        }
    }
    root
}

struct Working {
    eta: DVector<f64>,
    deviance: f64,
}

fn evaluate(x: &DMatrix<f64>, y: &[f64], link: Link, beta: &DVector<f64>) -> Working {
    let eta = x * beta;
    let deviance = match link {
        Link::Identity => eta.iter().zip(y).map(|(e, y)| (y - e).powi(2)).sum(),
        Link::Logit => 2.0 * eta.iter().zip(y).map(|(&e, &y)| softplus((1.0 - 2.0 * y) * e)).sum::<f64>(),
    };
    Working { eta, deviance }
}

/// IRLS weights and working response at `eta`.
fn irls_step(link: Link, y: &[f64], eta: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    match link {
        Link::Identity => (DVector::from_element(y.len(), 1.0), DVector::from_column_slice(y)),
        Link::Logit => {
            let mut w = DVector::zeros(y.len());
            let mut z = DVector::zeros(y.len());
            for i in 0..y.len() {
                let mu = logistic(eta[i]);
                let v = (mu * (1.0 - mu)).max(1e-10);
                w[i] = v;
                z[i] = eta[i] + (y[i] - mu) / v;
            }
            (w, z)
        }
    }
}

fn weighted_gram(x: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let mut xw = x.clone();
    for i in 0..x.nrows() {
        xw.row_mut(i).scale_mut(w[i]);
    }
    x.transpose() * xw
}

/// Core penalized IRLS on a design with intercept column. `s` is the padded,
/// λ-scaled penalty.
fn pirls(
    x: &DMatrix<f64>,
    y: &[f64],
    link: Link,
    root: &DMatrix<f64>,
    lambda: f64,
    start: Option<&DVector<f64>>,
    opts: &FitOptions,
) -> Result<FunctionalFit> {
    let n = x.nrows();
    let p = x.ncols();
    let pen = |b: &DVector<f64>| (root * b).norm_squared();
    let mut beta = match start {
        Some(b) if b.len() == p => b.clone(),
        _ => {
            let mut b = DVector::zeros(p);
            let ybar = y.iter().sum::<f64>() / n as f64;
            b[0] = match link {
                Link::Identity => ybar,
                Link::Logit => {
                    let q = ybar.clamp(0.01, 0.99);
                    (q / (1.0 - q)).ln()
                }
            };
            b
        }
    };
    let mut state = evaluate(x, y, link, &beta);
    let mut pdev = state.deviance + pen(&beta);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iterations {
        iterations += 1;
        let (w, z) = irls_step(link, y, &state.eta);
        let proposal = PenalizedLs::new(x, &w, root)?.solve(&w, &z);
        if proposal.iter().any(|v| !v.is_finite()) {
            return Err(FitError::NonFinite);
        }
        let mut step = &proposal - &beta;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let cand = &beta + &step;
            let cs = evaluate(x, y, link, &cand);
            let cp = cs.deviance + pen(&cand);
            if cp.is_finite() && cp <= pdev + 1e-12 * pdev.abs().max(1.0) {
                accepted = Some((cand, cs, cp));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, cs, cp)) = accepted else {
            // no descent direction left: the current point is optimal to
            // working precision
            converged = true;
            break;
        };
        let change = (pdev - cp).abs() / (cp.abs() + 0.1);
        beta = cand;
        state = cs;
        pdev = cp;
        if link == Link::Logit {
            let norm = beta.rows(1, p - 1).norm();
            if norm > opts.separation_norm {
                return Err(FitError::Separation { norm });
            }
        }
        if change < opts.tolerance {
            converged = true;
            break;
        }
    }
    if link == Link::Logit {
        // fitted probabilities collapsed onto the labels: the likelihood has
        // no finite maximizer and θ̂ only stopped because the deviance did
        let collapsed = state.eta.iter().zip(y).all(|(&e, &y)| (y - logistic(e)).abs() < 1e-6);
        if collapsed {
            return Err(FitError::Separation { norm: beta.rows(1, p - 1).norm() });
        }
    }
    if !converged {
        log::debug!("P-IRLS stopped after {iterations} iterations at λ = {lambda:.3e}");
    }

    let (w, _) = irls_step(link, y, &state.eta);
    let xtwx = weighted_gram(x, &w);
    let a_inv = PenalizedLs::new(x, &w, root)?.inverse();
    let edf = (&a_inv * &xtwx).trace();
    let leverages: Vec<f64> = (0..n)
        .map(|i| {
            let xi = x.row(i).transpose();
            w[i] * (xi.transpose() * &a_inv * &xi)[(0, 0)]
        })
        .collect();
    let nf = n as f64;
    let resid_df = nf - edf;
    let deviance = state.deviance;
    let (dispersion, aic) = match link {
        Link::Identity => {
            let phi = if resid_df > 1e-8 { deviance / resid_df } else { deviance / nf };
            let rss = deviance.max(f64::MIN_POSITIVE);
            (phi.max(f64::MIN_POSITIVE), nf * (2.0 * std::f64::consts::PI * rss / nf).ln() + nf + 2.0 * (edf + 1.0))
        }
        Link::Logit => (1.0, deviance + 2.0 * edf),
    };
    let gcv = nf * deviance / resid_df.powi(2);
    let coef_cov = a_inv * dispersion;
    Ok(FunctionalFit {
        link,
        intercept: beta[0],
        coef: beta.rows(1, p - 1).iter().copied().collect(),
        smoothing: lambda,
        coef_cov,
        dispersion,
        deviance,
        penalized_deviance: pdev,
        edf,
        gcv,
        aic,
        converged,
        iterations,
        n,
        leverages,
    })
}

/// Minimizes `deviance + λ θᵀℙθ` for `η = α + Wθ`.
pub fn fit_penalized(
    w: &DMatrix<f64>,
    y: &[f64],
    link: Link,
    lambda: f64,
    penalty: &PenaltyMatrix,
    opts: &FitOptions,
) -> Result<FunctionalFit> {
    validate(w, y, link, &penalty.entries, lambda)?;
    pirls(&design(w), y, link, &(penalty_root(&penalty.entries) * lambda.sqrt()), lambda, None, opts)
}

/// Fits every λ in `lambdas` (warm-started in order) and keeps the one that
/// minimizes the criterion among converged candidates.
pub fn select_smoothing(
    w: &DMatrix<f64>,
    y: &[f64],
    link: Link,
    lambdas: &[f64],
    penalty: &PenaltyMatrix,
    criterion: SmoothingCriterion,
    opts: &FitOptions,
) -> Result<Selection> {
    if lambdas.is_empty() {
        return Err(FitError::InvalidInput("empty smoothing grid".into()));
    }
    for &l in lambdas {
        validate(w, y, link, &penalty.entries, l)?;
    }
    let x = design(w);
    let unit_root = penalty_root(&penalty.entries);
    let mut path = Vec::with_capacity(lambdas.len());
    let mut best: Option<FunctionalFit> = None;
    let mut warm: Option<DVector<f64>> = None;
    for &lambda in lambdas {
        let root = &unit_root * lambda.sqrt();
        match pirls(&x, y, link, &root, lambda, warm.as_ref(), opts) {
            Ok(fit) => {
                path.push(PathPoint { lambda, gcv: fit.gcv, aic: fit.aic, edf: fit.edf, converged: fit.converged });
                if fit.converged {
                    warm = Some(fit.coef_vector());
                    let score = |f: &FunctionalFit| match criterion {
                        SmoothingCriterion::Gcv => f.gcv,
                        SmoothingCriterion::Aic => f.aic,
                    };
                    let better = match &best {
                        None => score(&fit).is_finite() || best.is_none(),
                        Some(b) => score(&fit) < score(b) || !score(b).is_finite(),
                    };
                    if better {
                        best = Some(fit);
                    }
                }
            }
            Err(e @ (FitError::Separation { .. } | FitError::NonFinite)) => {
                log::debug!("λ = {lambda:.3e} rejected: {e}");
                warm = None;
                path.push(PathPoint { lambda, gcv: f64::NAN, aic: f64::NAN, edf: f64::NAN, converged: false });
            }
            Err(e) => return Err(e),
        }
    }
    let fit = best.ok_or(FitError::NoConvergence(lambdas.len()))?;
    Ok(Selection { fit, criterion, path })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoefCurve {
    pub grid: Vec<f64>,
    pub estimate: Vec<f64>,
    pub lower95: Vec<f64>,
    pub upper95: Vec<f64>,
}

/// `β̂(z) = B(z)ᵀθ̂` with pointwise bands `± 1.96 sd`.
pub fn coef_curve(fit: &FunctionalFit, basis: &BSplineBasis, z: &[f64]) -> Result<CoefCurve> {
    if !fit.converged {
        return Err(FitError::NotConverged);
    }
    if basis.len() != fit.num_coef() {
        return Err(FitError::InvalidInput(format!(
            "basis has {} functions but the fit has {} coefficients",
            basis.len(),
            fit.num_coef()
        )));
    }
    let k = fit.num_coef();
    let cov = fit.coef_cov.view((1, 1), (k, k));
    let mut out = CoefCurve {
        grid: z.to_vec(),
        estimate: Vec::with_capacity(z.len()),
        lower95: Vec::with_capacity(z.len()),
        upper95: Vec::with_capacity(z.len()),
    };
    for &zg in z {
        let b = DVector::from_vec(basis.eval(zg)?);
        let est: f64 = b.iter().zip(&fit.coef).map(|(b, t)| b * t).sum();
        let var = (b.transpose() * cov * &b)[(0, 0)].max(0.0);
        let half = 1.96 * var.sqrt();
        out.estimate.push(est);
        out.lower95.push(est - half);
        out.upper95.push(est + half);
    }
    Ok(out)
}

/// CSV with columns `z, estimate, lower, upper`.
pub fn write_coef_curve_csv<W: std::io::Write>(out: W, curve: &CoefCurve) -> std::result::Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["z", "estimate", "lower", "upper"])?;
    for i in 0..curve.grid.len() {
        w.write_record([
            curve.grid[i].to_string(),
            curve.estimate[i].to_string(),
            curve.lower95[i].to_string(),
            curve.upper95[i].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub eta: Vec<f64>,
    /// Fitted probabilities, logistic fits only.
    pub probability: Option<Vec<f64>>,
}

impl Prediction {
    /// Probabilities for logistic fits, `η̂` otherwise.
    pub fn response(&self) -> &[f64] {
        self.probability.as_deref().unwrap_or(&self.eta)
    }
}

/// `η̂ = α̂ + W_new θ̂`.
pub fn linear_predictor(fit: &FunctionalFit, w_new: &DMatrix<f64>) -> Result<Prediction> {
    if w_new.ncols() != fit.num_coef() {
        return Err(FitError::InvalidInput(format!(
            "W has {} columns but the fit has {} coefficients",
            w_new.ncols(),
            fit.num_coef()
        )));
    }
    let theta = DVector::from_column_slice(&fit.coef);
    let eta: Vec<f64> = (w_new * theta).iter().map(|v| v + fit.intercept).collect();
    let probability = match fit.link {
        Link::Logit => Some(eta.iter().map(|&e| logistic(e)).collect()),
        Link::Identity => None,
    };
    Ok(Prediction { eta, probability })
}

/// Unpenalized GLM of `y` on an intercept and one scalar covariate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalarFit {
    pub link: Link,
    pub intercept: f64,
    pub slope: f64,
    pub intercept_se: f64,
    pub slope_se: f64,
    pub dispersion: f64,
    pub deviance: f64,
    pub aic: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl ScalarFit {
    pub fn predict(&self, x: &[f64]) -> Prediction {
        let eta: Vec<f64> = x.iter().map(|v| self.intercept + self.slope * v).collect();
        let probability = match self.link {
            Link::Logit => Some(eta.iter().map(|&e| logistic(e)).collect()),
            Link::Identity => None,
        };
        Prediction { eta, probability }
    }
}

pub fn fit_scalar_baseline(x: &[f64], y: &[f64], link: Link, opts: &FitOptions) -> Result<ScalarFit> {
    let w = DMatrix::from_column_slice(x.len(), 1, x);
    let zero = DMatrix::zeros(1, 1);
    validate(&w, y, link, &zero, 0.0)?;
    let fit = pirls(&design(&w), y, link, &DMatrix::zeros(0, 2), 0.0, None, opts)?;
    Ok(ScalarFit {
        link,
        intercept: fit.intercept,
        slope: fit.coef[0],
        intercept_se: fit.coef_cov[(0, 0)].max(0.0).sqrt(),
        slope_se: fit.coef_cov[(1, 1)].max(0.0).sqrt(),
        dispersion: fit.dispersion,
        deviance: fit.deviance,
        aic: fit.aic,
        converged: fit.converged,
        iterations: fit.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::linspace;
    use crate::splinebasis::BasisSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn basis() -> BSplineBasis {
        BSplineBasis::new(BasisSpec::default()).unwrap()
    }

    /// Random smooth curves on a 100-point grid and their weights.
    fn curves_and_weights(n: usize, rng: &mut ChaCha8Rng) -> (DMatrix<f64>, DMatrix<f64>) {
        let b = basis();
        let grid = linspace(0.0, 1.0, 100);
        let map = b.quadrature_map(&grid).unwrap();
        let mut d = DMatrix::<f64>::zeros(n, grid.len());
        for i in 0..n {
            let (a1, a2, a3, a4): (f64, f64, f64, f64) = (rng.random(), rng.random(), rng.random(), rng.random());
            for (g, &z) in grid.iter().enumerate() {
                d[(i, g)] = 2.0 * a1 * (2.0 * std::f64::consts::PI * z).sin()
                    + 2.0 * a2 * (2.0 * std::f64::consts::PI * z).cos()
                    + 3.0 * a3 * z
                    + a4 * (6.0 * z).cos();
            }
        }
        let w = &d * map;
        (d, w)
    }

    /// Curves rich enough that every basis direction is identified.
    fn rich_curves(n: usize, rng: &mut ChaCha8Rng) -> (DMatrix<f64>, DMatrix<f64>) {
        let grid = linspace(0.0, 1.0, 100);
        let mut d = DMatrix::<f64>::zeros(n, grid.len());
        for i in 0..n {
            let c: Vec<f64> = (0..12).map(|_| rng.random::<f64>() - 0.5).collect();
            for (g, &z) in grid.iter().enumerate() {
                d[(i, g)] = (0..12).map(|j| c[j] * (std::f64::consts::PI * j as f64 * z).cos()).sum();
            }
        }
        let w = &d * basis().quadrature_map(&grid).unwrap();
        (d, w)
    }

    fn ols(x: &DMatrix<f64>, y: &[f64]) -> DVector<f64> {
        let qr = x.clone().qr();
        let qty = qr.q().transpose() * DVector::from_column_slice(y);
        qr.r().solve_upper_triangular(&qty).unwrap()
    }

    #[test]
    fn unpenalized_identity_fit_is_least_squares() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (_, w) = curves_and_weights(80, &mut rng);
        // a well-conditioned design: independent random columns
        let w = w.map(|v| v) + DMatrix::from_fn(80, 10, |_, _| rng.random::<f64>());
        let y: Vec<f64> = (0..80).map(|_| rng.random::<f64>() * 3.0).collect();
        let pen = basis().penalty().unwrap();
        let fit = fit_penalized(&w, &y, Link::Identity, 0.0, &pen, &FitOptions::default()).unwrap();
        let oracle = ols(&design(&w), &y);
        assert!((fit.intercept - oracle[0]).abs() < 1e-8);
        for k in 0..10 {
            assert!((fit.coef[k] - oracle[k + 1]).abs() < 1e-8 * oracle[k + 1].abs().max(1.0));
        }
        assert!(fit.converged);
        assert!((fit.edf - 11.0).abs() < 1e-8);
        // score equations
        let x = design(&w);
        let resid = DVector::from_column_slice(&y) - &x * fit.coef_vector();
        assert!((x.transpose() * resid).amax() < 1e-6);
    }

    #[test]
    fn huge_smoothing_leaves_an_affine_coefficient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (_, w) = curves_and_weights(120, &mut rng);
        let y: Vec<f64> = (0..120).map(|i| w.row(i).sum() * 2.0 + rng.random::<f64>()).collect();
        let pen = basis().penalty().unwrap();
        let fit = fit_penalized(&w, &y, Link::Identity, 1e12, &pen, &FitOptions::default()).unwrap();
        let theta = DVector::from_column_slice(&fit.coef);
        assert!(pen.quadratic_form(&theta) < 1e-6 * theta.dot(&theta));
        assert!(fit.edf < 3.0 + 1e-6, "edf {}", fit.edf);
    }

    #[test]
    fn logistic_score_equations_hold_at_zero_penalty() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 400;
        let w = DMatrix::from_fn(n, 3, |_, _| rng.random::<f64>() - 0.5);
        let y: Vec<f64> = (0..n)
            .map(|i| {
                let eta = 0.3 + 2.0 * w[(i, 0)] - 1.0 * w[(i, 1)];
                f64::from(rng.random::<f64>() < logistic(eta))
            })
            .collect();
        let pen = PenaltyMatrix { entries: DMatrix::identity(3, 3) };
        let fit = fit_penalized(&w, &y, Link::Logit, 0.0, &pen, &FitOptions::default()).unwrap();
        assert!(fit.converged);
        let x = design(&w);
        let p = (&x * fit.coef_vector()).map(logistic);
        let score = x.transpose() * (DVector::from_column_slice(&y) - p);
        assert!(score.amax() < 1e-6, "{score}");
    }

    /// Plain Newton-Raphson on the unpenalized logistic likelihood.
    fn newton_logit(x: &[f64], y: &[f64]) -> (f64, f64, f64, f64) {
        let (mut a, mut b) = (0.0, 0.0);
        let hessian = |a: f64, b: f64| {
            let (mut g0, mut g1, mut h00, mut h01, mut h11) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (xi, yi) in x.iter().zip(y) {
                let p = 1.0 / (1.0 + (-(a + b * xi)).exp());
                let v = p * (1.0 - p);
                g0 += yi - p;
                g1 += (yi - p) * xi;
                h00 += v;
                h01 += v * xi;
                h11 += v * xi * xi;
            }
            (g0, g1, h00, h01, h11)
        };
        for _ in 0..60 {
            let (g0, g1, h00, h01, h11) = hessian(a, b);
            let det = h00 * h11 - h01 * h01;
            a += (h11 * g0 - h01 * g1) / det;
            b += (-h01 * g0 + h00 * g1) / det;
        }
        let (_, _, h00, h01, h11) = hessian(a, b);
        let det = h00 * h11 - h01 * h01;
        (a, b, (h11 / det).sqrt(), (h00 / det).sqrt())
    }

    #[test]
    fn scalar_baseline_matches_newton_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x: Vec<f64> = (0..300).map(|_| 50.0 + 30.0 * rng.random::<f64>()).collect();
        let y: Vec<f64> = x.iter().map(|v| f64::from(rng.random::<f64>() < logistic(-4.0 + 0.06 * v))).collect();
        let fit = fit_scalar_baseline(&x, &y, Link::Logit, &FitOptions { tolerance: 1e-14, ..Default::default() }).unwrap();
        let (a, b, sa, sb) = newton_logit(&x, &y);
        assert!((fit.intercept - a).abs() < 1e-6 * a.abs().max(1.0));
        assert!((fit.slope - b).abs() < 1e-6 * b.abs().max(1.0));
        assert!((fit.intercept_se - sa).abs() < 1e-6 * sa);
        assert!((fit.slope_se - sb).abs() < 1e-6 * sb);
    }

    #[test]
    fn scalar_baseline_trivial_cases() {
        let x = [1.0, 2.0, 3.5, 4.0, 7.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let fit = fit_scalar_baseline(&x, &y, Link::Identity, &FitOptions::default()).unwrap();
        assert!((fit.slope - 2.0).abs() < 1e-12 && fit.intercept.abs() < 1e-12);
        assert!(fit.deviance < 1e-20);
        // symmetric, balanced: intercept 0
        let x = [-2.0, -1.0, 1.0, 2.0, -2.0, -1.0, 1.0, 2.0];
        let y = [0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0, 0.0];
        let fit = fit_scalar_baseline(&x, &y, Link::Logit, &FitOptions::default()).unwrap();
        assert!(fit.intercept.abs() < 1e-10);
        let pred = fit.predict(&[0.0]);
        assert!((pred.response()[0] - logistic(fit.intercept)).abs() < 1e-15);
    }

    #[test]
    fn predictions_survive_basis_reparameterization() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (_, w) = rich_curves(90, &mut rng);
        let y: Vec<f64> = (0..90).map(|i| f64::from(w[(i, 3)] + 0.1 * rng.random::<f64>() > 0.05)).collect();
        let pen = basis().penalty().unwrap();
        let a = DMatrix::from_fn(10, 10, |i, j| if i == j { 2.0 } else { 0.1 * ((i * 7 + j * 3) % 5) as f64 });
        let w2 = &w * &a;
        let pen2 = PenaltyMatrix { entries: a.transpose() * &pen.entries * &a };
        let opts = FitOptions { tolerance: 1e-13, ..Default::default() };
        let f1 = fit_penalized(&w, &y, Link::Logit, 0.5, &pen, &opts).unwrap();
        let f2 = fit_penalized(&w2, &y, Link::Logit, 0.5, &pen2, &opts).unwrap();
        let e1 = linear_predictor(&f1, &w).unwrap().eta;
        let e2 = linear_predictor(&f2, &w2).unwrap().eta;
        for (a, b) in e1.iter().zip(&e2) {
            assert!((a - b).abs() < 1e-8 * a.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn gcv_two_ways_and_edf_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (_, w) = curves_and_weights(100, &mut rng);
        let y: Vec<f64> = (0..100).map(|i| w[(i, 5)] + rng.random::<f64>()).collect();
        let pen = basis().penalty().unwrap();
        let scale = penalty_scale(&w, &pen);
        let grid: Vec<f64> = log_grid(1e-6, 1e6, 50).into_iter().map(|l| l * scale).collect();
        for link in [Link::Identity, Link::Logit] {
            let y: Vec<f64> = match link {
                Link::Identity => y.clone(),
                Link::Logit => y.iter().map(|v| f64::from(*v > 0.6)).collect(),
            };
            let sel = select_smoothing(&w, &y, link, &grid, &pen, SmoothingCriterion::Gcv, &FitOptions::default()).unwrap();
            for pair in sel.path.windows(2) {
                if pair[0].converged && pair[1].converged {
                    assert!(pair[1].edf <= pair[0].edf + 1e-8, "{pair:?}");
                }
            }
            let f = &sel.fit;
            assert!((f.gcv - f.gcv_from_leverages()).abs() < 1e-8 * f.gcv);
            let best = sel.path.iter().filter(|p| p.converged).map(|p| p.gcv).fold(f64::INFINITY, f64::min);
            assert_eq!(best, f.gcv);
        }
    }

    #[test]
    fn single_candidate_grid_returns_that_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (_, w) = curves_and_weights(40, &mut rng);
        let y: Vec<f64> = (0..40).map(|_| rng.random::<f64>()).collect();
        let pen = basis().penalty().unwrap();
        let sel = select_smoothing(&w, &y, Link::Identity, &[0.3], &pen, SmoothingCriterion::Aic, &FitOptions::default()).unwrap();
        let direct = fit_penalized(&w, &y, Link::Identity, 0.3, &pen, &FitOptions::default()).unwrap();
        assert_eq!(sel.fit.coef, direct.coef);
        assert_eq!(sel.path.len(), 1);
    }

    #[test]
    fn penalized_deviance_never_increases() {
        // track iterates by capping the iteration count
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (_, w) = curves_and_weights(150, &mut rng);
        let y: Vec<f64> = (0..150).map(|i| f64::from(w[(i, 2)] * 3.0 + rng.random::<f64>() > 0.8)).collect();
        let pen = basis().penalty().unwrap();
        let mut last = f64::INFINITY;
        for it in 1..8 {
            let opts = FitOptions { max_iterations: it, tolerance: 0.0, ..Default::default() };
            let f = fit_penalized(&w, &y, Link::Logit, 1e-3, &pen, &opts).unwrap();
            assert!(f.penalized_deviance <= last + 1e-9);
            last = f.penalized_deviance;
        }
    }

    #[test]
    fn separation_is_flagged() {
        let w = DMatrix::from_column_slice(6, 1, &[-3.0, -2.0, -1.0, 1.0, 2.0, 3.0]);
        let y = [0.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let pen = PenaltyMatrix { entries: DMatrix::zeros(1, 1) };
        let opts = FitOptions { separation_norm: 1e3, ..Default::default() };
        let r = fit_penalized(&w, &y, Link::Logit, 0.0, &pen, &opts);
        assert!(matches!(r, Err(FitError::Separation { .. })) || !r.unwrap().converged);
    }

    #[test]
    fn coefficient_curve_trivia() {
        let b = basis();
        let mut fit = fit_penalized(
            &DMatrix::from_fn(30, 10, |i, j| ((i * 13 + j * 7) % 11) as f64),
            &(0..30).map(|i| i as f64).collect::<Vec<_>>(),
            Link::Identity,
            1.0,
            &b.penalty().unwrap(),
            &FitOptions::default(),
        )
        .unwrap();
        fit.coef_cov = DMatrix::zeros(11, 11);
        let c = coef_curve(&fit, &b, &linspace(0.0, 1.0, 11)).unwrap();
        assert_eq!(c.lower95, c.estimate);
        assert_eq!(c.upper95, c.estimate);
        fit.coef = vec![0.0; 10];
        let c = coef_curve(&fit, &b, &linspace(0.0, 1.0, 11)).unwrap();
        assert!(c.estimate.iter().all(|&v| v == 0.0));
        let p = linear_predictor(&FunctionalFit { link: Link::Logit, ..fit.clone() }, &DMatrix::from_element(3, 10, 5.0)).unwrap();
        assert!(p.response().iter().all(|&v| (v - logistic(fit.intercept)).abs() < 1e-15));
        assert!(linear_predictor(&fit, &DMatrix::zeros(2, 9)).is_err());
    }

    #[test]
    fn linear_predictor_matches_curve_quadrature() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (d, w) = curves_and_weights(50, &mut rng);
        let y: Vec<f64> = (0..50).map(|i| w[(i, 4)] + 0.1 * rng.random::<f64>()).collect();
        let b = basis();
        let pen = b.penalty().unwrap();
        let fit = fit_penalized(&w, &y, Link::Identity, 1e-4, &pen, &FitOptions::default()).unwrap();
        let grid = linspace(0.0, 1.0, 100);
        let beta = b.combine(&fit.coef, &grid).unwrap();
        let tw = crate::quad::trapezoid_weights(&grid);
        let eta = linear_predictor(&fit, &w).unwrap().eta;
        for i in 0..50 {
            let direct: f64 = (0..100).map(|g| tw[g] * d[(i, g)] * beta[g]).sum::<f64>() + fit.intercept;
            assert!((direct - eta[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn bands_match_parametric_bootstrap() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let n = 600;
        let (_, w) = rich_curves(n, &mut rng);
        let b = basis();
        let pen = b.penalty().unwrap();
        let grid = linspace(0.0, 1.0, 100);
        let truth: Vec<f64> = grid.iter().map(|z| (2.0 * std::f64::consts::PI * z).sin()).collect();
        let theta_true = {
            // least-squares projection of the true β on the basis
            ols(&b.eval_matrix(&grid).unwrap(), &truth)
        };
        let mu = &w * &theta_true;
        let sigma = 0.5;
        let lambda = 1e-6 * penalty_scale(&w, &pen);
        let opts = FitOptions::default();
        let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            mu.iter().map(|m| { let e: f64 = StandardNormal.sample(rng); m + sigma * e }).collect::<Vec<f64>>()
        };
        let fit = fit_penalized(&w, &draw(&mut rng), Link::Identity, lambda, &pen, &opts).unwrap();
        let band = coef_curve(&fit, &b, &[0.25, 0.5, 0.75]).unwrap();
        let reps = 400;
        let mut est = vec![Vec::new(); 3];
        for _ in 0..reps {
            let f = fit_penalized(&w, &draw(&mut rng), Link::Identity, lambda, &pen, &opts).unwrap();
            let c = b.combine(&f.coef, &[0.25, 0.5, 0.75]).unwrap();
            for j in 0..3 {
                est[j].push(c[j]);
            }
        }
        for j in 0..3 {
            let mean = est[j].iter().sum::<f64>() / reps as f64;
            let sd = (est[j].iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (reps - 1) as f64).sqrt();
            let width = band.upper95[j] - band.lower95[j];
            let rel = (width - 2.0 * 1.96 * sd).abs() / (2.0 * 1.96 * sd);
            assert!(rel < 0.15, "z index {j}: band {width}, bootstrap {}", 2.0 * 1.96 * sd);
        }
    }
}
