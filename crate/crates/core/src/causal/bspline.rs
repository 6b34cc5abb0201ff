//! Cubic B-spline basis with interior knots at sample quantiles.

use super::CausalError;

pub const DEGREE: usize = 3;

/// Linear-interpolation sample quantile (the common "type 7" rule).
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Clamped knot vector: each boundary repeated `DEGREE + 1` times.
#[derive(Debug, Clone, PartialEq)]
pub struct BSplineBasis {
    knots: Vec<f64>,
}

impl BSplineBasis {
    pub fn new(lower: f64, upper: f64, interior: &[f64]) -> Result<Self, CausalError> {
        if !(lower < upper) || interior.iter().any(|&k| !(k >= lower && k <= upper)) {
            return Err(CausalError::Spline(format!(
                "knots {interior:?} do not fit inside [{lower}, {upper}]"
            )));
        }
        if interior.windows(2).any(|w| w[1] < w[0]) {
            return Err(CausalError::Spline("interior knots must be sorted".into()));
        }
        let mut knots = vec![lower; DEGREE + 1];
        knots.extend_from_slice(interior);
        knots.extend(std::iter::repeat_n(upper, DEGREE + 1));
        Ok(Self { knots })
    }

    /// Interior knots at the `i / (n_interior + 1)` quantiles of `values`,
    /// boundary knots at the extremes.
    pub fn at_quantiles(values: &[f64], n_interior: usize) -> Result<Self, CausalError> {
        if values.is_empty() {
            return Err(CausalError::Spline("no values to place knots".into()));
        }
        let s = sorted(values);
        let interior: Vec<f64> = (1..=n_interior)
            .map(|i| quantile(&s, i as f64 / (n_interior + 1) as f64))
            .collect();
        Self::new(s[0], s[s.len() - 1], &interior)
    }

    pub fn n_basis(&self) -> usize {
        self.knots.len() - DEGREE - 1
    }

    pub fn lower(&self) -> f64 {
        self.knots[0]
    }

    pub fn upper(&self) -> f64 {
        self.knots[self.knots.len() - 1]
    }

    /// All basis values at `x`; they are nonnegative and sum to one.
    pub fn evaluate(&self, x: f64) -> Result<Vec<f64>, CausalError> {
        let (lower, upper) = (self.lower(), self.upper());
        if !(x >= lower && x <= upper) {
            return Err(CausalError::Extrapolation { x, lower, upper });
        }
        let n = self.n_basis();
        // last span with knots[s] <= x < knots[s + 1]; x == upper uses the final nonempty span
        let span = if x >= upper {
            (DEGREE..n).rev().find(|&s| self.knots[s] < self.knots[s + 1]).expect("lower < upper")
        } else {
            (DEGREE..n).rev().find(|&s| self.knots[s] <= x).expect("x >= lower")
        };
        let t = &self.knots;
        let mut local = [0.0; DEGREE + 1];
        let mut left = [0.0; DEGREE + 1];
        let mut right = [0.0; DEGREE + 1];
        local[0] = 1.0;
        for j in 1..=DEGREE {
            left[j] = x - t[span + 1 - j];
            right[j] = t[span + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = local[r] / (right[r + 1] + left[j - r]);
                local[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            local[j] = saved;
        }
        let mut out = vec![0.0; n];
        out[span - DEGREE..=span].copy_from_slice(&local);
        Ok(out)
    }
}
