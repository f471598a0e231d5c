//! Not-a-knot cubic splines, used as a smooth stand-in for the state network
//! when checking residual and derivative computations against a known
//! trajectory.

use crate::error::{Error, Result};
use crate::pk::Trajectory;

#[derive(Debug, Clone)]
pub struct CubicSpline {
    knots: Vec<f64>,
    values: Vec<f64>,
    /// Second derivatives at the knots.
    curvature: Vec<f64>,
}

impl CubicSpline {
    /// Interpolating cubic spline with not-a-knot end conditions. Needs at
    /// least four strictly increasing knots.
    pub fn not_a_knot(knots: &[f64], values: &[f64]) -> Result<Self> {
        if knots.len() != values.len() {
            return Err(Error::Shape(format!("{} knots, {} values", knots.len(), values.len())));
        }
        if knots.len() < 4 {
            return Err(Error::InsufficientData("a not-a-knot spline needs at least 4 knots".into()));
        }
        if knots.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidGrid("spline knots must be strictly increasing".into()));
        }
        let n = knots.len() - 1;
        let h: Vec<f64> = knots.windows(2).map(|w| w[1] - w[0]).collect();
        let d: Vec<f64> = (0..n).map(|i| (values[i + 1] - values[i]) / h[i]).collect();

        // Tridiagonal system in M_1 .. M_{n-1}; M_0 and M_n are eliminated
        // through the not-a-knot conditions.
        let m = n - 1;
        let mut lower = vec![0.0; m];
        let mut diag = vec![0.0; m];
        let mut upper = vec![0.0; m];
        let mut rhs = vec![0.0; m];
        for k in 0..m {
            let i = k + 1;
            lower[k] = h[i - 1];
            diag[k] = 2.0 * (h[i - 1] + h[i]);
            upper[k] = h[i];
            rhs[k] = 6.0 * (d[i] - d[i - 1]);
        }
        diag[0] += h[0] * (h[0] + h[1]) / h[1];
        upper[0] -= h[0] * h[0] / h[1];
        let (a, b) = (h[n - 2], h[n - 1]);
        diag[m - 1] += b * (a + b) / a;
        lower[m - 1] -= b * b / a;

        for k in 1..m {
            let w = lower[k] / diag[k - 1];
            diag[k] -= w * upper[k - 1];
            rhs[k] -= w * rhs[k - 1];
        }
        let mut inner = vec![0.0; m];
        inner[m - 1] = rhs[m - 1] / diag[m - 1];
        for k in (0..m - 1).rev() {
            inner[k] = (rhs[k] - upper[k] * inner[k + 1]) / diag[k];
        }

        let mut curvature = Vec::with_capacity(n + 1);
        curvature.push(((h[0] + h[1]) * inner[0] - h[0] * inner[1]) / h[1]);
        curvature.extend(&inner);
        curvature.push(((a + b) * inner[m - 1] - b * inner[m - 2]) / a);

        Ok(Self {
            knots: knots.to_vec(),
            values: values.to_vec(),
            curvature,
        })
    }

    fn interval(&self, t: f64) -> usize {
        let n = self.knots.len() - 1;
        self.knots.partition_point(|&k| k <= t).clamp(1, n) - 1
    }

    pub fn value(&self, t: f64) -> f64 {
        let i = self.interval(t);
        let (x0, x1) = (self.knots[i], self.knots[i + 1]);
        let h = x1 - x0;
        let (m0, m1) = (self.curvature[i], self.curvature[i + 1]);
        let (a, b) = (x1 - t, t - x0);
        m0 * a.powi(3) / (6.0 * h)
            + m1 * b.powi(3) / (6.0 * h)
            + (self.values[i] / h - m0 * h / 6.0) * a
            + (self.values[i + 1] / h - m1 * h / 6.0) * b
    }

    pub fn derivative(&self, t: f64) -> f64 {
        let i = self.interval(t);
        let (x0, x1) = (self.knots[i], self.knots[i + 1]);
        let h = x1 - x0;
        let (m0, m1) = (self.curvature[i], self.curvature[i + 1]);
        let (a, b) = (x1 - t, t - x0);
        -m0 * a * a / (2.0 * h) + m1 * b * b / (2.0 * h) - (self.values[i] / h - m0 * h / 6.0)
            + (self.values[i + 1] / h - m1 * h / 6.0)
    }
}

/// One cubic spline per state component of a trajectory.
#[derive(Debug, Clone)]
pub struct TrajectorySpline {
    components: [CubicSpline; 3],
}

impl TrajectorySpline {
    pub fn fit(traj: &Trajectory) -> Result<Self> {
        let fit = |c| CubicSpline::not_a_knot(traj.times(), &traj.component(c));
        Ok(Self {
            components: [fit(0)?, fit(1)?, fit(2)?],
        })
    }

    pub fn value(&self, t: f64) -> [f64; 3] {
        [0, 1, 2].map(|c| self.components[c].value(t))
    }

    pub fn derivative(&self, t: f64) -> [f64; 3] {
        [0, 1, 2].map(|c| self.components[c].derivative(t))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproduces_cubics_exactly() {
        let knots: Vec<f64> = vec![0.0, 0.3, 0.7, 1.0, 1.6, 2.0];
        let f = |x: f64| 2.0 * x.powi(3) - x * x + 0.5 * x - 3.0;
        let df = |x: f64| 6.0 * x * x - 2.0 * x + 0.5;
        let values: Vec<f64> = knots.iter().map(|&x| f(x)).collect();
        let s = CubicSpline::not_a_knot(&knots, &values).unwrap();
        for t in [0.0, 0.1, 0.5, 0.99, 1.3, 2.0] {
            assert!((s.value(t) - f(t)).abs() < 1e-12, "value at {t}");
            assert!((s.derivative(t) - df(t)).abs() < 1e-11, "derivative at {t}");
        }
    }

    #[test]
    fn four_knots_is_the_interpolating_cubic() {
        let knots = [0.0, 1.0, 2.0, 3.0];
        let f = |x: f64| x.powi(3) - 4.0 * x;
        let values = knots.map(f);
        let s = CubicSpline::not_a_knot(&knots, &values).unwrap();
        assert!((s.value(2.5) - f(2.5)).abs() < 1e-12);
    }

    #[test]
    fn derivative_converges_on_smooth_functions() {
        let err = |n: usize| {
            let knots: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64 * 3.0).collect();
            let values: Vec<f64> = knots.iter().map(|x| (-1.3 * x).exp()).collect();
            let s = CubicSpline::not_a_knot(&knots, &values).unwrap();
            (0..200)
                .map(|k| k as f64 / 199.0 * 3.0)
                .map(|t| (s.derivative(t) + 1.3 * (-1.3 * t).exp()).abs())
                .fold(0.0, f64::max)
        };
        assert!(err(41) < err(21) / 6.0);
        assert!(err(81) < err(41) / 6.0);
    }

    #[test]
    fn needs_four_knots() {
        assert!(CubicSpline::not_a_knot(&[0.0, 1.0, 2.0], &[0.0, 1.0, 4.0]).is_err());
    }
}
