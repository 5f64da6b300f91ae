//! Nonparametric estimators over one subject's sorted sample.

use crate::quad::neumaier_sum;

/// Cutoff (in bandwidths) beyond which Gaussian kernel terms are dropped;
/// `φ(8) / φ(0) ≈ 1.3e-14`.
const KERNEL_REACH: f64 = 8.0;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// A subject's sample in ascending order with its distinct-value risk table.
#[derive(Debug, Clone)]
pub struct SortedSample {
    values: Vec<f64>,
    /// Distinct values `t_1 < … < t_J`.
    times: Vec<f64>,
    /// `N_j`, the number with value `≥ t_j`.
    at_risk: Vec<usize>,
    /// `D_j`, the number tied at `t_j`.
    events: Vec<usize>,
}

impl SortedSample {
    /// Values must be finite; callers validate that beforehand.
    pub fn new(values: &[f64]) -> Self {
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let m = sorted.len();
        let mut times = Vec::new();
        let mut at_risk = Vec::new();
        let mut events = Vec::new();
        let mut i = 0;
        while i < m {
            let t = sorted[i];
            let mut j = i;
            while j < m && sorted[j] == t {
                j += 1;
            }
            times.push(t);
            at_risk.push(m - i);
            events.push(j - i);
            i = j;
        }
        SortedSample { values: sorted, times, at_risk, events }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn distinct(&self) -> &[f64] {
        &self.times
    }

    pub fn at_risk(&self) -> &[usize] {
        &self.at_risk
    }

    pub fn events(&self) -> &[usize] {
        &self.events
    }

    pub fn mean(&self) -> f64 {
        neumaier_sum(self.values.iter().copied()) / self.len() as f64
    }

    /// Sample standard deviation with the `m − 1` denominator.
    pub fn std_dev(&self) -> f64 {
        let m = self.len();
        if m < 2 {
            return 0.0;
        }
        let mu = self.mean();
        let ss = neumaier_sum(self.values.iter().map(|x| (x - mu) * (x - mu)));
        (ss / (m - 1) as f64).sqrt()
    }

    /// Number of distinct values `≤ x`.
    fn distinct_at_or_below(&self, x: f64) -> usize {
        self.times.partition_point(|&t| t <= x)
    }

    /// `#{X_j > x} / m`.
    pub fn empirical_survival(&self, x: f64) -> f64 {
        let above = self.len() - self.values.partition_point(|&v| v <= x);
        above as f64 / self.len() as f64
    }
}

/// Rule-of-thumb bandwidth and whether the degenerate fallback was used.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bandwidth {
    pub value: f64,
    pub fallback: bool,
}

/// `h = 1.06 σ̂ m^{−1/5}`; when `σ̂ = 0` falls back to
/// `max(1e-6, 0.1 · grid_spacing)`.
pub fn silverman_bandwidth(sample: &SortedSample, grid_spacing: f64) -> Bandwidth {
    let sd = sample.std_dev();
    if sd > 0.0 && sd.is_finite() {
        Bandwidth { value: 1.06 * sd * (sample.len() as f64).powf(-0.2), fallback: false }
    } else {
        Bandwidth { value: (0.1 * grid_spacing).max(1e-6), fallback: true }
    }
}

/// Gaussian kernel density estimate with a fixed bandwidth.
#[derive(Debug, Clone, Copy)]
pub struct Kde<'a> {
    sample: &'a SortedSample,
    bandwidth: f64,
}

impl<'a> Kde<'a> {
    pub fn new(sample: &'a SortedSample, bandwidth: f64) -> Self {
        Kde { sample, bandwidth }
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn eval(&self, x: f64) -> f64 {
        let h = self.bandwidth;
        let v = self.sample.values();
        let lo = v.partition_point(|&s| s < x - KERNEL_REACH * h);
        let hi = v.partition_point(|&s| s <= x + KERNEL_REACH * h);
        let sum: f64 = v[lo..hi]
            .iter()
            .map(|&s| {
                let u = (x - s) / h;
                (-0.5 * u * u).exp()
            })
            .sum();
        sum * INV_SQRT_2PI / (h * v.len() as f64)
    }
}

/// Kaplan-Meier product-limit estimate; with complete data this reproduces
/// the empirical survival function.
#[derive(Debug, Clone)]
pub struct KaplanMeier<'a> {
    sample: &'a SortedSample,
    /// `Ŝ` just after each distinct value.
    after: Vec<f64>,
}

impl<'a> KaplanMeier<'a> {
    pub fn new(sample: &'a SortedSample) -> Self {
        let mut s = 1.0;
        let after = sample
            .at_risk()
            .iter()
            .zip(sample.events())
            .map(|(&n, &d)| {
                // (n − d)/n rather than 1 − d/n keeps the telescoping exact
                // at the last distinct value
                s *= (n - d) as f64 / n as f64;
                s
            })
            .collect();
        KaplanMeier { sample, after }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self.sample.distinct_at_or_below(x) {
            0 => 1.0,
            j => self.after[j - 1],
        }
    }
}

/// Nelson-Aalen cumulative hazard `Λ̂(x) = Σ_{t_j ≤ x} D_j / N_j`.
#[derive(Debug, Clone)]
pub struct NelsonAalen<'a> {
    sample: &'a SortedSample,
    cumulative: Vec<f64>,
    increments: Vec<f64>,
}

impl<'a> NelsonAalen<'a> {
    pub fn new(sample: &'a SortedSample) -> Self {
        let increments: Vec<f64> =
            sample.at_risk().iter().zip(sample.events()).map(|(&n, &d)| d as f64 / n as f64).collect();
        let mut acc = 0.0;
        let cumulative = increments
            .iter()
            .map(|inc| {
                acc += inc;
                acc
            })
            .collect();
        NelsonAalen { sample, cumulative, increments }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self.sample.distinct_at_or_below(x) {
            0 => 0.0,
            j => self.cumulative[j - 1],
        }
    }

    /// Sum of `D_j/N_j` over distinct values in `[lo, hi)`.
    pub fn increments_in(&self, lo: f64, hi: f64) -> f64 {
        let t = self.sample.distinct();
        let a = t.partition_point(|&v| v < lo);
        let b = t.partition_point(|&v| v < hi);
        self.increments[a..b].iter().sum()
    }
}

/// Order-statistic interpolation `Q̂(p) = (1−ω) X_([(m+1)p]) + ω X_([(m+1)p]+1)`,
/// clamped to the extreme order statistics outside `1..m`.
pub fn sample_quantile(sorted: &[f64], p: f64) -> f64 {
    let m = sorted.len();
    let pos = (m as f64 + 1.0) * p;
    let k = pos.floor();
    let omega = pos - k;
    if k < 1.0 {
        return sorted[0];
    }
    let k = k as usize;
    if k >= m {
        return sorted[m - 1];
    }
    (1.0 - omega) * sorted[k - 1] + omega * sorted[k]
}

/// Scaled total-time-on-test statistic.
///
/// `levels[r] = τ(X_(r)) / m` at `p = r/m`, with
/// `τ(X_(r)) = Σ_{k ≤ r} (m − k + 1)(X_(k) − X_(k−1))` and `X_(0) = 0`.
#[derive(Debug, Clone)]
pub struct TttStatistic {
    levels: Vec<f64>,
}

impl TttStatistic {
    pub fn new(sample: &SortedSample) -> Self {
        let v = sample.values();
        let m = v.len();
        let mut levels = Vec::with_capacity(m + 1);
        levels.push(0.0);
        let (mut sum, mut comp) = (0.0f64, 0.0f64);
        let mut prev = 0.0;
        for (k, &x) in v.iter().enumerate() {
            let term = (m - k) as f64 * (x - prev);
            prev = x;
            let t = sum + term;
            if sum.abs() >= term.abs() {
                comp += (sum - t) + term;
            } else {
                comp += (term - t) + sum;
            }
            sum = t;
            levels.push((sum + comp) / m as f64);
        }
        TttStatistic { levels }
    }

    /// `τ(X_(r)) / m` for `r = 0..=m`.
    pub fn at_order_statistics(&self) -> &[f64] {
        &self.levels
    }

    /// Piecewise-linear interpolation in `p` between the levels `r/m`.
    pub fn eval(&self, p: f64) -> f64 {
        let m = self.levels.len() - 1;
        if p <= 0.0 {
            return 0.0;
        }
        if p >= 1.0 {
            return self.levels[m];
        }
        let pos = p * m as f64;
        let r = (pos.floor() as usize).min(m - 1);
        let frac = pos - r as f64;
        self.levels[r] + frac * (self.levels[r + 1] - self.levels[r])
    }
}

/// Hazard as `f̂_KDE(x) / max(Ŝ_KM(x), floor)`.
#[derive(Debug, Clone)]
pub struct RatioHazard<'a> {
    kde: Kde<'a>,
    km: KaplanMeier<'a>,
    floor: f64,
}

impl<'a> RatioHazard<'a> {
    pub fn new(sample: &'a SortedSample, bandwidth: f64, floor: f64) -> Self {
        RatioHazard { kde: Kde::new(sample, bandwidth), km: KaplanMeier::new(sample), floor }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.kde.eval(x) / self.km.eval(x).max(self.floor)
    }
}

/// Hazard from Nelson-Aalen increments binned on the cells of `grid`:
/// `λ̂(cell) = Σ D_j/N_j over the cell ÷ cell width`. Grid point `g` reports
/// the cell `[x_g, x_{g+1})`; the last point reports the last cell.
pub fn binned_hazard(sample: &SortedSample, grid: &[f64]) -> Vec<f64> {
    let na = NelsonAalen::new(sample);
    let cells: Vec<f64> = grid
        .windows(2)
        .map(|w| {
            let width = w[1] - w[0];
            na.increments_in(w[0], w[1]) / width
        })
        .collect();
    let mut out = cells.clone();
    out.push(*cells.last().unwrap_or(&0.0));
    out
}
