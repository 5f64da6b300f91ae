//! B-spline basis for the coefficient function and its curvature penalty.
//!
//! The basis uses an open (clamped) uniform knot vector on `[a, b]`. The
//! penalty `ℙ_{kl} = ∫ B_k''(z) B_l''(z) dz` is integrated exactly span by
//! span with Gauss-Legendre, so `θᵀℙθ = ∫ β''(z)² dz` for `β = Σ θ_k B_k`.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quad::{gauss_legendre, trapezoid_weights};
use crate::represent::Curve;

#[derive(Debug, Error)]
pub enum BasisError {
    #[error("invalid basis spec: {0}")]
    InvalidSpec(String),
    #[error("z = {z} lies outside the basis domain [{lower}, {upper}]")]
    OutOfDomain { z: f64, lower: f64, upper: f64 },
    #[error("a curvature penalty needs degree ≥ 2, got {0}")]
    DegreeTooLow(usize),
    #[error("curves do not share one grid: {0}")]
    GridMismatch(String),
    #[error("failed to write matrix: {0}")]
    Write(#[from] csv::Error),
}

type Result<T> = std::result::Result<T, BasisError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BasisSpec {
    pub num_basis: usize,
    pub degree: usize,
    pub lower: f64,
    pub upper: f64,
}

impl Default for BasisSpec {
    fn default() -> Self {
        BasisSpec { num_basis: 10, degree: 3, lower: 0.0, upper: 1.0 }
    }
}

impl BasisSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_basis < self.degree + 1 {
            return Err(BasisError::InvalidSpec(format!(
                "num_basis {} must be at least degree + 1 = {}",
                self.num_basis,
                self.degree + 1
            )));
        }
        if !(self.lower.is_finite() && self.upper.is_finite() && self.lower < self.upper) {
            return Err(BasisError::InvalidSpec(format!("domain [{}, {}] is empty", self.lower, self.upper)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BSplineBasis {
    spec: BasisSpec,
    knots: Vec<f64>,
}

impl BSplineBasis {
    pub fn new(spec: BasisSpec) -> Result<Self> {
        spec.validate()?;
        let BasisSpec { num_basis, degree, lower, upper } = spec;
        let interior = num_basis - degree - 1;
        let mut knots = vec![lower; degree + 1];
        for i in 1..=interior {
            knots.push(lower + (upper - lower) * i as f64 / (interior + 1) as f64);
        }
        knots.extend(std::iter::repeat_n(upper, degree + 1));
        Ok(BSplineBasis { spec, knots })
    }

    pub fn spec(&self) -> &BasisSpec {
        &self.spec
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn len(&self) -> usize {
        self.spec.num_basis
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn check(&self, z: f64) -> Result<f64> {
        let (lo, hi) = (self.spec.lower, self.spec.upper);
        let slack = 1e-12 * (hi - lo);
        if !(z >= lo - slack && z <= hi + slack) {
            return Err(BasisError::OutOfDomain { z, lower: lo, upper: hi });
        }
        Ok(z.clamp(lo, hi))
    }

    /// Knot span index `i` with `t_i ≤ z < t_{i+1}` (the last span for `z = b`).
    fn span(&self, z: f64) -> usize {
        let p = self.spec.degree;
        let n = self.spec.num_basis - 1;
        if z >= self.knots[n + 1] {
            return n;
        }
        // largest i in [p, n] with t_i ≤ z
        let idx = self.knots[p..=n + 1].partition_point(|&t| t <= z);
        p + idx - 1
    }

    /// Values and derivatives up to `order` of the `degree + 1` basis
    /// functions that are nonzero at `z`, starting at index `span − degree`.
    fn local_derivatives(&self, span: usize, z: f64, order: usize) -> Vec<Vec<f64>> {
        let p = self.spec.degree;
        let u = &self.knots;
        let mut ndu = vec![vec![0.0; p + 1]; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        ndu[0][0] = 1.0;
        for j in 1..=p {
            left[j] = z - u[span + 1 - j];
            right[j] = u[span + j] - z;
            let mut saved = 0.0;
            for r in 0..j {
                ndu[j][r] = right[r + 1] + left[j - r];
                let temp = ndu[r][j - 1] / ndu[j][r];
                ndu[r][j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j][j] = saved;
        }
        let mut ders = vec![vec![0.0; p + 1]; order + 1];
        for j in 0..=p {
            ders[0][j] = ndu[j][p];
        }
        let pi = p as isize;
        let mut a = [vec![0.0; p + 1], vec![0.0; p + 1]];
        for r in 0..=pi {
            let (mut s1, mut s2) = (0usize, 1usize);
            a[0][0] = 1.0;
            for k in 1..=(order as isize) {
                let mut d = 0.0;
                let rk = r - k;
                let pk = pi - k;
                if pk < 0 {
                    break;
                }
                if r >= k {
                    a[s2][0] = a[s1][0] / ndu[(pk + 1) as usize][rk as usize];
                    d = a[s2][0] * ndu[rk as usize][pk as usize];
                }
                let j1 = if rk >= -1 { 1 } else { -rk };
                let j2 = if r - 1 <= pk { k - 1 } else { pi - r };
                for j in j1..=j2 {
                    let (ju, rkj) = (j as usize, (rk + j) as usize);
                    a[s2][ju] = (a[s1][ju] - a[s1][ju - 1]) / ndu[(pk + 1) as usize][rkj];
                    d += a[s2][ju] * ndu[rkj][pk as usize];
                }
                if r <= pk {
                    let ku = k as usize;
                    a[s2][ku] = -a[s1][ku - 1] / ndu[(pk + 1) as usize][r as usize];
                    d += a[s2][ku] * ndu[r as usize][pk as usize];
                }
                ders[k as usize][r as usize] = d;
                std::mem::swap(&mut s1, &mut s2);
            }
        }
        let mut factor = p as f64;
        for k in 1..=order {
            for j in 0..=p {
                ders[k][j] *= factor;
            }
            factor *= p as f64 - k as f64;
        }
        ders
    }

    /// `B(z)`, all `κ` basis functions at one point.
    pub fn eval(&self, z: f64) -> Result<Vec<f64>> {
        self.eval_derivative(z, 0)
    }

    /// `d^order/dz^order B(z)`.
    pub fn eval_derivative(&self, z: f64, order: usize) -> Result<Vec<f64>> {
        let z = self.check(z)?;
        let p = self.spec.degree;
        let span = self.span(z);
        let mut row = vec![0.0; self.len()];
        if order > p {
            return Ok(row);
        }
        let ders = self.local_derivatives(span, z, order);
        for j in 0..=p {
            row[span - p + j] = ders[order][j];
        }
        Ok(row)
    }

    /// `G × κ` matrix whose row `g` holds `B_k(z_g)`.
    pub fn eval_matrix(&self, z: &[f64]) -> Result<DMatrix<f64>> {
        let mut m = DMatrix::zeros(z.len(), self.len());
        for (g, &zg) in z.iter().enumerate() {
            for (k, v) in self.eval(zg)?.into_iter().enumerate() {
                m[(g, k)] = v;
            }
        }
        Ok(m)
    }

    /// `β(z) = B(z)ᵀθ` on a grid.
    pub fn combine(&self, theta: &[f64], z: &[f64]) -> Result<Vec<f64>> {
        z.iter().map(|&zg| Ok(self.eval(zg)?.iter().zip(theta).map(|(b, t)| b * t).sum())).collect()
    }

    /// Second-derivative penalty `ℙ_{kl} = ∫ B_k'' B_l'' dz`.
    pub fn penalty(&self) -> Result<PenaltyMatrix> {
        let p = self.spec.degree;
        if p < 2 {
            return Err(BasisError::DegreeTooLow(p));
        }
        let k = self.len();
        let mut pen = DMatrix::zeros(k, k);
        // integrand is a polynomial of degree 2(p − 2) per span
        let (nodes, weights) = gauss_legendre(p + 1);
        for span in p..k {
            let (a, b) = (self.knots[span], self.knots[span + 1]);
            if b <= a {
                continue;
            }
            let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
            for (x, w) in nodes.iter().zip(&weights) {
                let z = mid + half * x;
                let d2 = &self.local_derivatives(span, z, 2)[2];
                for i in 0..=p {
                    for j in 0..=p {
                        pen[(span - p + i, span - p + j)] += w * half * d2[i] * d2[j];
                    }
                }
            }
        }
        // exact symmetry
        let pen = (&pen + pen.transpose()) * 0.5;
        Ok(PenaltyMatrix { entries: pen })
    }

    /// Maps a curve grid affinely onto the basis domain.
    pub fn normalized_grid(&self, grid: &[f64]) -> Vec<f64> {
        let (g0, g1) = (grid[0], grid[grid.len() - 1]);
        let (lo, hi) = (self.spec.lower, self.spec.upper);
        let mut z: Vec<f64> = grid.iter().map(|g| lo + (hi - lo) * (g - g0) / (g1 - g0)).collect();
        let n = z.len();
        z[0] = lo;
        z[n - 1] = hi;
        z
    }

    /// `G × κ` matrix `M` with `M_{gk} = w_g B_k(z_g)` (trapezoid weights on
    /// the normalized grid), so that `W = D M` for curves stacked in `D`.
    pub fn quadrature_map(&self, grid: &[f64]) -> Result<DMatrix<f64>> {
        check_grid(grid)?;
        let z = self.normalized_grid(grid);
        let w = trapezoid_weights(&z);
        let mut m = self.eval_matrix(&z)?;
        for (g, wg) in w.iter().enumerate() {
            m.row_mut(g).scale_mut(*wg);
        }
        Ok(m)
    }
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 2 || grid.windows(2).any(|w| w[1] <= w[0]) || grid.iter().any(|g| !g.is_finite()) {
        return Err(BasisError::GridMismatch("curve grid must have ≥ 2 strictly increasing points".into()));
    }
    Ok(())
}

/// Symmetric positive semidefinite curvature penalty.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyMatrix {
    pub entries: DMatrix<f64>,
}

impl PenaltyMatrix {
    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn quadratic_form(&self, theta: &DVector<f64>) -> f64 {
        (theta.transpose() * &self.entries * theta)[(0, 0)]
    }

    /// Pads with a leading zero row and column for an unpenalized intercept.
    pub fn padded(&self) -> DMatrix<f64> {
        let k = self.dim();
        let mut out = DMatrix::zeros(k + 1, k + 1);
        out.view_mut((1, 1), (k, k)).copy_from(&self.entries);
        out
    }
}

/// `W_{ik} = ∫_0^1 D_i(z) B_k(z) dz` by the trapezoid rule on the
/// normalized grid shared by all `curves`.
pub fn functional_weights(curves: &[Curve], basis: &BSplineBasis) -> Result<DMatrix<f64>> {
    let first = curves.first().ok_or_else(|| BasisError::GridMismatch("no curves".into()))?;
    for c in curves {
        if c.grid != first.grid {
            return Err(BasisError::GridMismatch("every curve must use the same grid".into()));
        }
        if c.values.len() != c.grid.len() {
            return Err(BasisError::GridMismatch("curve values and grid differ in length".into()));
        }
    }
    let map = basis.quadrature_map(&first.grid)?;
    let d = DMatrix::from_fn(curves.len(), first.grid.len(), |i, g| curves[i].values[g]);
    Ok(d * map)
}

/// Dumps a matrix as CSV with columns `c0, c1, …`.
pub fn write_matrix_csv<W: Write>(out: W, m: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record((0..m.ncols()).map(|j| format!("c{j}")))?;
    for i in 0..m.nrows() {
        w.write_record(m.row(i).iter().map(|v| v.to_string()))?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
