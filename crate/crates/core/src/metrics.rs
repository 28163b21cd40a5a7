//! Cost functions, replicate aggregation and curve comparison.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::engine::{SimReport, SweepPoint};
use crate::error::{Error, Result};

/// Convex increasing cost of an average delay.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CostFunction {
    /// `x² / 2`.
    #[default]
    QuadraticHalf,
    /// `scale · x^exponent`.
    Power { exponent: f64, scale: f64 },
    /// `exp(rate · x) − 1`.
    Exponential { rate: f64 },
}

const CONVEXITY_GRID: usize = 256;

impl CostFunction {
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            CostFunction::QuadraticHalf => 0.5 * x * x,
            CostFunction::Power { exponent, scale } => scale * x.powf(exponent),
            CostFunction::Exponential { rate } => (rate * x).exp_m1(),
        }
    }

    /// Checks the function is increasing and convex on `[0, upper]` by first
    /// and second differences on a uniform grid.
    pub fn validate(&self, upper: f64) -> Result<()> {
        let params_ok = match *self {
            CostFunction::QuadraticHalf => true,
            CostFunction::Power { exponent, scale } => exponent.is_finite() && scale.is_finite(),
            CostFunction::Exponential { rate } => rate.is_finite(),
        };
        if !params_ok {
            return Err(Error::invalid("cost", "finite"));
        }
        let h = upper / CONVEXITY_GRID as f64;
        let values: Vec<f64> = (0..=CONVEXITY_GRID)
            .map(|i| self.eval(i as f64 * h))
            .collect();
        let scale = values.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let slack = 1e-12 * scale;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("cost", "finite on [0, delay_bound]"));
        }
        if values.windows(2).any(|w| w[1] - w[0] <= -slack) || values[CONVEXITY_GRID] <= values[0] {
            return Err(Error::invalid("cost", "increasing"));
        }
        if values.windows(3).any(|w| w[2] - 2.0 * w[1] + w[0] < -slack) {
            return Err(Error::invalid("cost", "convex"));
        }
        Ok(())
    }

    /// Minimiser of `v·h(r) − c·r` over `[0, upper]`, when it has a closed form.
    pub fn argmin_linear_offset(&self, v: f64, c: f64, upper: f64) -> Option<f64> {
        let r = match *self {
            CostFunction::QuadraticHalf => c / v,
            CostFunction::Power { exponent, scale } if exponent > 1.0 && scale > 0.0 => {
                (c.max(0.0) / (v * scale * exponent)).powf(1.0 / (exponent - 1.0))
            }
            CostFunction::Exponential { rate } if rate > 0.0 => {
                let ratio = c / (v * rate);
                if ratio <= 1.0 {
                    0.0
                } else {
                    ratio.ln() / rate
                }
            }
            _ => return None,
        };
        Some(r.clamp(0.0, upper))
    }
}

/// `h(w)` for a validated cost kind. Negative delays are rejected.
pub fn cost_function(w: f64, kind: &CostFunction) -> Result<f64> {
    if w.is_nan() || w < 0.0 {
        return Err(Error::invalid("w", "non-negative"));
    }
    kind.validate(w.max(1.0))?;
    Ok(kind.eval(w))
}

/// One x-position of a curve, aggregated across replicates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub x: f64,
    pub per_user_delay: Vec<f64>,
    /// 95% Student-t half-width of each user's delay across replicates.
    pub ci_halfwidth: Vec<f64>,
    /// `Σ h_i(mean delay_i)`.
    pub sum_cost: f64,
    /// Half-width for the per-replicate sum of costs.
    pub sum_cost_ci: f64,
    pub max_interference: f64,
    pub replicates: usize,
    pub failed_replicates: usize,
}

fn t_quantile_975(dof: usize) -> f64 {
    StudentsT::new(0.0, 1.0, dof as f64)
        .map(|t| t.inverse_cdf(0.975))
        .unwrap_or(f64::NAN)
}

/// Sample mean and 95% confidence half-width. One sample gives width 0.
pub fn mean_ci(samples: &[f64]) -> (f64, f64) {
    let n = samples.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, t_quantile_975(n - 1) * (var / n as f64).sqrt())
}

/// Groups a sweep by x (in first-seen order) and averages the replicates.
pub fn curve_from_sweep(points: &[SweepPoint], costs: &[CostFunction]) -> Vec<CurvePoint> {
    let mut xs: Vec<f64> = Vec::new();
    for p in points {
        if !xs.iter().any(|x| x.to_bits() == p.x.to_bits()) {
            xs.push(p.x);
        }
    }
    xs.into_iter()
        .map(|x| {
            let group: Vec<&SweepPoint> = points
                .iter()
                .filter(|p| p.x.to_bits() == x.to_bits())
                .collect();
            let reports: Vec<&SimReport> = group
                .iter()
                .filter_map(|p| p.outcome.as_ref().ok())
                .collect();
            curve_point(x, &reports, costs, group.len() - reports.len())
        })
        .collect()
}

fn curve_point(
    x: f64,
    reports: &[&SimReport],
    costs: &[CostFunction],
    failed: usize,
) -> CurvePoint {
    let n_users = costs.len();
    let mut per_user_delay = Vec::with_capacity(n_users);
    let mut ci_halfwidth = Vec::with_capacity(n_users);
    for i in 0..n_users {
        let samples: Vec<f64> = reports.iter().map(|r| r.per_user_delay[i]).collect();
        let (m, ci) = mean_ci(&samples);
        per_user_delay.push(m);
        ci_halfwidth.push(ci);
    }
    let sums: Vec<f64> = reports.iter().map(|r| r.sum_cost).collect();
    let (_, sum_cost_ci) = mean_ci(&sums);
    let sum_cost = per_user_delay
        .iter()
        .zip(costs)
        .map(|(w, h)| h.eval(*w))
        .sum();
    let max_interference = reports
        .iter()
        .map(|r| r.max_interference_seen)
        .fold(0.0, f64::max);
    CurvePoint {
        x,
        per_user_delay,
        ci_halfwidth,
        sum_cost,
        sum_cost_ci,
        max_interference,
        replicates: reports.len(),
        failed_replicates: failed,
    }
}

/// Writes `x, w_user1..w_userN, ci_1..ci_N, sum_cost, max_interference` with a header row.
pub fn write_curve_csv<W: Write>(out: W, points: &[CurvePoint]) -> io::Result<()> {
    let n_users = points.first().map_or(0, |p| p.per_user_delay.len());
    let mut wtr = csv::Writer::from_writer(out);
    let mut header = vec!["x".to_string()];
    header.extend((1..=n_users).map(|i| format!("w_user{i}")));
    header.extend((1..=n_users).map(|i| format!("ci_{i}")));
    header.push("sum_cost".into());
    header.push("max_interference".into());
    wtr.write_record(&header)?;
    for p in points {
        let mut row = vec![p.x.to_string()];
        row.extend(p.per_user_delay.iter().map(f64::to_string));
        row.extend(p.ci_halfwidth.iter().map(f64::to_string));
        row.push(p.sum_cost.to_string());
        row.push(p.max_interference.to_string());
        wtr.write_record(&row)?;
    }
    wtr.flush()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointComparison {
    pub x: f64,
    /// `a − b` for the sum of costs.
    pub sum_cost_diff: f64,
    /// `100 · (a − b) / b`; zero when both are zero.
    pub relative_pct: f64,
    pub delay_diff: Vec<f64>,
    /// Sum-of-cost difference exceeds the combined half-widths.
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveComparison {
    pub points: Vec<PointComparison>,
    /// Maximal x-ranges `[lo, hi]` over which `a` has the larger sum of costs.
    pub a_above: Vec<(f64, f64)>,
    /// Maximal x-ranges over which `b` has the larger sum of costs.
    pub b_above: Vec<(f64, f64)>,
}

/// Point-by-point comparison of two curves on the same x-grid.
pub fn compare_curves(a: &[CurvePoint], b: &[CurvePoint]) -> Result<CurveComparison> {
    if a.len() != b.len() {
        return Err(Error::GridMismatch {
            detail: format!("{} points vs {}", a.len(), b.len()),
        });
    }
    let mut points = Vec::with_capacity(a.len());
    for (pa, pb) in a.iter().zip(b) {
        if pa.x != pb.x || pa.per_user_delay.len() != pb.per_user_delay.len() {
            return Err(Error::GridMismatch {
                detail: format!("x = {} vs x = {}", pa.x, pb.x),
            });
        }
        let diff = pa.sum_cost - pb.sum_cost;
        let relative_pct = if diff == 0.0 {
            0.0
        } else {
            100.0 * diff / pb.sum_cost
        };
        points.push(PointComparison {
            x: pa.x,
            sum_cost_diff: diff,
            relative_pct,
            delay_diff: pa
                .per_user_delay
                .iter()
                .zip(&pb.per_user_delay)
                .map(|(x, y)| x - y)
                .collect(),
            significant: diff.abs() > pa.sum_cost_ci + pb.sum_cost_ci,
        });
    }
    let a_above = runs(&points, |p| p.sum_cost_diff > 0.0);
    let b_above = runs(&points, |p| p.sum_cost_diff < 0.0);
    Ok(CurveComparison {
        points,
        a_above,
        b_above,
    })
}

fn runs(points: &[PointComparison], pred: impl Fn(&PointComparison) -> bool) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut start: Option<f64> = None;
    let mut last = 0.0;
    for p in points {
        if pred(p) {
            start.get_or_insert(p.x);
            last = p.x;
        } else if let Some(s) = start.take() {
            out.push((s, last));
        }
    }
    if let Some(s) = start {
        out.push((s, last));
    }
    out
}
