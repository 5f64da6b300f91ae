//! Exponentiated Weibull family and synthetic cohorts.
//!
//! The exponentiated Weibull distribution with scale `λ₀`, shape `κ₀` and
//! power `α₀` has CDF `F(x) = {1 − exp(−(x/λ₀)^κ₀)}^α₀` on `x ≥ 0`. Depending
//! on `(κ₀, α₀)` its hazard is constant, monotone, bathtub-shaped or unimodal,
//! which makes it a convenient source of exact curves for every
//! representation in [`crate::represent`].

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quad;
use crate::represent::SubjectSample;
use crate::rng::{domain, keyed_rng};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("parameters must be finite and strictly positive (scale={scale}, shape={shape}, power={power})")]
    InvalidParams { scale: f64, shape: f64, power: f64 },
    #[error("argument {0} is not finite")]
    NonFinite(f64),
    #[error("probability level {0} is outside [0, 1)")]
    LevelOutOfRange(f64),
    #[error("hazard undefined at x={0}: survival is zero (hazard is infinite)")]
    HazardUndefined(f64),
    #[error("invalid cohort design: {0}")]
    InvalidDesign(String),
    #[error("could not match group means: {0}")]
    MeanMatching(String),
}

type Result<T> = std::result::Result<T, SynthError>;

/// Relative tolerance for the TTT and mean quadratures.
const QUAD_REL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpWeibullParams {
    pub scale: f64,
    pub shape: f64,
    pub power: f64,
}

/// The five hazard morphologies and their parameter triples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HazardShape {
    Constant,
    Decreasing,
    Increasing,
    Bathtub,
    Unimodal,
}

impl HazardShape {
    pub const ALL: [HazardShape; 5] = [
        HazardShape::Constant,
        HazardShape::Decreasing,
        HazardShape::Increasing,
        HazardShape::Bathtub,
        HazardShape::Unimodal,
    ];

    pub fn params(self) -> ExpWeibullParams {
        let (scale, shape, power) = match self {
            HazardShape::Constant => (20.0, 1.0, 1.0),
            HazardShape::Decreasing => (5.0, 0.5, 2.0),
            HazardShape::Increasing => (50.0, 2.0, 2.0),
            HazardShape::Bathtub => (150.0, 4.0, 0.15),
            HazardShape::Unimodal => (5.0, 0.55, 4.0),
        };
        ExpWeibullParams { scale, shape, power }
    }
}

fn check_finite(x: f64) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(SynthError::NonFinite(x))
    }
}

/// `ln(1 − e^{−t})` for `t > 0`, accurate at both ends.
/// `−ln(1 − e^u)` for `u ≤ 0`.
fn neg_ln_one_minus_exp(u: f64) -> f64 {
    if u < -std::f64::consts::LN_2 {
        -(-u.exp()).ln_1p()
    } else {
        -(-u.exp_m1()).ln()
    }
}

fn ln_one_minus_exp_neg(t: f64) -> f64 {
    if t > std::f64::consts::LN_2 {
        (-(-t).exp()).ln_1p()
    } else {
        (-(-t).exp_m1()).ln()
    }
}

impl ExpWeibullParams {
    pub fn new(scale: f64, shape: f64, power: f64) -> Result<Self> {
        let p = ExpWeibullParams { scale, shape, power };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if ok(self.scale) && ok(self.shape) && ok(self.power) {
            Ok(())
        } else {
            Err(SynthError::InvalidParams { scale: self.scale, shape: self.shape, power: self.power })
        }
    }

    fn t(&self, x: f64) -> f64 {
        (x / self.scale).powf(self.shape)
    }

    /// Density. Zero for `x < 0`; at `x = 0` the limit, which is infinite
    /// when `κ₀α₀ < 1`.
    pub fn density(&self, x: f64) -> Result<f64> {
        check_finite(x)?;
        if x < 0.0 {
            return Ok(0.0);
        }
        let (k, a, l) = (self.shape, self.power, self.scale);
        if x == 0.0 {
            let order = k * a;
            return Ok(if order < 1.0 {
                f64::INFINITY
            } else if order == 1.0 {
                a * k / l
            } else {
                0.0
            });
        }
        let t = self.t(x);
        let mut log_f = (a * k / l).ln() + (k - 1.0) * (x / l).ln() - t;
        if a != 1.0 {
            log_f += (a - 1.0) * ln_one_minus_exp_neg(t);
        }
        Ok(log_f.exp())
    }

    pub fn cdf(&self, x: f64) -> Result<f64> {
        check_finite(x)?;
        if x <= 0.0 {
            return Ok(0.0);
        }
        Ok((self.power * ln_one_minus_exp_neg(self.t(x))).exp())
    }

    /// `1 − F(x)`, computed without cancellation in the upper tail.
    pub fn survival(&self, x: f64) -> Result<f64> {
        check_finite(x)?;
        if x <= 0.0 {
            return Ok(1.0);
        }
        Ok(-(self.power * ln_one_minus_exp_neg(self.t(x))).exp_m1())
    }

    /// Inverse CDF, closed form `λ₀ {−ln(1 − p^{1/α₀})}^{1/κ₀}`.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        check_finite(p)?;
        if !(0.0..1.0).contains(&p) {
            return Err(SynthError::LevelOutOfRange(p));
        }
        if p == 0.0 {
            return Ok(0.0);
        }
        Ok(self.scale * neg_ln_one_minus_exp(p.ln() / self.power).powf(1.0 / self.shape))
    }

    /// The point where survival equals `s`; usable beyond the resolution of
    /// `quantile(1 − s)`.
    pub fn survival_quantile(&self, s: f64) -> Result<f64> {
        check_finite(s)?;
        if !(s > 0.0 && s <= 1.0) {
            return Err(SynthError::LevelOutOfRange(1.0 - s));
        }
        if s == 1.0 {
            return Ok(0.0);
        }
        Ok(self.scale * neg_ln_one_minus_exp((-s).ln_1p() / self.power).powf(1.0 / self.shape))
    }

    /// `f(x)/S(x)`; [`SynthError::HazardUndefined`] where `S(x) = 0`.
    pub fn hazard(&self, x: f64) -> Result<f64> {
        check_finite(x)?;
        if x < 0.0 {
            return Ok(0.0);
        }
        let s = self.survival(x)?;
        if s <= 0.0 {
            return Err(SynthError::HazardUndefined(x));
        }
        Ok(self.density(x)? / s)
    }

    /// `Λ(x) = −ln S(x)`.
    pub fn cumulative_hazard(&self, x: f64) -> Result<f64> {
        Ok(-self.survival(x)?.ln())
    }

    /// Total-time-on-test transform `T(p) = ∫_0^{Q(p)} S(x) dx`.
    pub fn ttt(&self, p: f64) -> Result<f64> {
        let upper = self.quantile(p)?;
        Ok(self.integrate_survival(upper))
    }

    /// Distribution mean, `∫_0^∞ S(x) dx`, truncated where `S < 1e-17`.
    pub fn mean(&self) -> f64 {
        let upper = self.survival_quantile(1e-17).expect("valid level");
        self.integrate_survival(upper)
    }

    fn integrate_survival(&self, upper: f64) -> f64 {
        if upper <= 0.0 {
            return 0.0;
        }
        let s = |x: f64| self.survival(x).unwrap_or(0.0);
        // Splitting at the median keeps the adaptive pass from wasting its
        // budget on the long flat tail.
        let mid = self.quantile(0.5).expect("valid level").min(upper);
        let a = quad::integrate(s, 0.0, mid, 0.0, QUAD_REL_TOL * 1e-2);
        let b = quad::integrate(s, mid, upper, 0.0, QUAD_REL_TOL * 1e-2);
        a.value + b.value
    }

    /// `m` i.i.d. draws by inverse-CDF sampling; deterministic in `seed`.
    pub fn sample(&self, m: usize, seed: u64) -> Vec<f64> {
        let mut rng = keyed_rng(seed, domain::SAMPLE, 0);
        self.sample_with(&mut rng, m)
    }

    pub fn sample_with<R: Rng + ?Sized>(&self, rng: &mut R, m: usize) -> Vec<f64> {
        (0..m)
            .map(|_| {
                let u: f64 = rng.random();
                self.quantile(u).expect("uniform draw lies in [0, 1)")
            })
            .collect()
    }
}

/// Links the continuous (EDSS-like) outcome to group and activity.
///
/// `score = intercept + group_effect·group + activity_effect·z + N(0, noise_sd²)`
/// where `z` is the cohort-standardized `ln(1 + subject mean)`. The score is
/// snapped to the half-point grid and clamped into the group's clinical band
/// (`[0, 3.5]` for group 0, `[4, 10]` for group 1) so that the binary label
/// can always be re-derived from it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutcomeModel {
    pub intercept: f64,
    pub group_effect: f64,
    pub activity_effect: f64,
    pub noise_sd: f64,
}

impl Default for OutcomeModel {
    fn default() -> Self {
        OutcomeModel { intercept: 2.0, group_effect: 3.5, activity_effect: -0.5, noise_sd: 0.75 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupDesign {
    pub n: usize,
    pub params: ExpWeibullParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortDesign {
    pub groups: [GroupDesign; 2],
    /// Epochs per subject.
    pub m: usize,
    #[serde(default)]
    pub outcome: OutcomeModel,
    /// Round draws to integers, mimicking activity counts.
    #[serde(default)]
    pub round_counts: bool,
}

impl CohortDesign {
    /// Both groups drawn from the same distribution: no signal anywhere.
    pub fn null(n_per_group: usize, m: usize, params: ExpWeibullParams) -> Self {
        CohortDesign {
            groups: [GroupDesign { n: n_per_group, params }, GroupDesign { n: n_per_group, params }],
            m,
            outcome: OutcomeModel { group_effect: 0.0, activity_effect: 0.0, ..OutcomeModel::default() },
            round_counts: false,
        }
    }

    /// Group 0 follows the decreasing-hazard preset; group 1 a unimodal-hazard
    /// preset rescaled so both groups have the same analytic mean. The scalar
    /// mean therefore carries no group signal while the hazard shapes differ.
    pub fn mean_matched(n_per_group: usize, m: usize) -> Result<Self> {
        let low = HazardShape::Decreasing.params();
        let unimodal = HazardShape::Unimodal.params();
        let scale = match_mean_scale(low.mean(), unimodal)?;
        let high = ExpWeibullParams { scale, ..unimodal };
        Ok(CohortDesign {
            groups: [GroupDesign { n: n_per_group, params: low }, GroupDesign { n: n_per_group, params: high }],
            m,
            outcome: OutcomeModel::default(),
            round_counts: false,
        })
    }

    pub fn validate(&self) -> Result<()> {
        for (g, group) in self.groups.iter().enumerate() {
            if group.n == 0 {
                return Err(SynthError::InvalidDesign(format!("group {g} has n = 0")));
            }
            group.params.validate()?;
        }
        if self.m < 2 {
            return Err(SynthError::InvalidDesign(format!("m = {} epochs per subject; need at least 2", self.m)));
        }
        let o = &self.outcome;
        if !(o.intercept.is_finite() && o.group_effect.is_finite() && o.activity_effect.is_finite())
            || !(o.noise_sd.is_finite() && o.noise_sd >= 0.0)
        {
            return Err(SynthError::InvalidDesign("outcome model coefficients must be finite, noise_sd ≥ 0".into()));
        }
        Ok(())
    }

    pub fn total_subjects(&self) -> usize {
        self.groups[0].n + self.groups[1].n
    }
}

/// Solves for the scale of `shape_params` whose mean equals `target_mean`.
pub fn match_mean_scale(target_mean: f64, shape_params: ExpWeibullParams) -> Result<f64> {
    shape_params.validate()?;
    if !(target_mean.is_finite() && target_mean > 0.0) {
        return Err(SynthError::MeanMatching(format!("target mean {target_mean} must be positive")));
    }
    let mean_at = |log_scale: f64| {
        let p = ExpWeibullParams { scale: log_scale.exp(), ..shape_params };
        p.mean().ln() - target_mean.ln()
    };
    let log_scale = quad::bisect(mean_at, -30.0, 30.0, 1e-13)
        .ok_or_else(|| SynthError::MeanMatching("no sign change in scale bracket".into()))?;
    Ok(log_scale.exp())
}

fn snap_to_half_points(x: f64, lo: f64, hi: f64) -> f64 {
    ((x * 2.0).round() / 2.0).clamp(lo, hi)
}

/// Draws a two-group cohort. Subject `i` (group 0 first) uses its own keyed
/// random stream, so the cohort does not depend on evaluation order.
pub fn simulate_cohort(design: &CohortDesign, seed: u64) -> Result<Vec<SubjectSample>> {
    design.validate()?;
    let n = design.total_subjects();
    let width = n.to_string().len().max(4);
    let mut raw: Vec<(String, u8, Vec<f64>)> = Vec::with_capacity(n);
    let mut index = 0u64;
    for (g, group) in design.groups.iter().enumerate() {
        for _ in 0..group.n {
            let mut rng = keyed_rng(seed, domain::COHORT_VALUES, index);
            let mut values = group.params.sample_with(&mut rng, design.m);
            if design.round_counts {
                values.iter_mut().for_each(|v| *v = v.round());
            }
            raw.push((format!("S{index:0width$}"), g as u8, values));
            index += 1;
        }
    }

    let log_means: Vec<f64> =
        raw.iter().map(|(_, _, v)| (v.iter().sum::<f64>() / v.len() as f64).ln_1p()).collect();
    let mu = log_means.iter().sum::<f64>() / n as f64;
    let sd = if n > 1 {
        (log_means.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };

    let o = design.outcome;
    Ok(raw
        .into_iter()
        .zip(log_means)
        .enumerate()
        .map(|(i, ((id, group, values), lm))| {
            let z = if sd > 0.0 { (lm - mu) / sd } else { 0.0 };
            let mut rng = keyed_rng(seed, domain::COHORT_OUTCOME, i as u64);
            let eps: f64 = rng.sample(StandardNormal);
            let score = o.intercept + o.group_effect * group as f64 + o.activity_effect * z + o.noise_sd * eps;
            let (lo, hi) = if group == 0 { (0.0, 3.5) } else { (4.0, 10.0) };
            SubjectSample {
                subject_id: id,
                values,
                outcome_binary: Some(group),
                outcome_continuous: Some(snap_to_half_points(score, lo, hi)),
            }
        })
        .collect())
}
