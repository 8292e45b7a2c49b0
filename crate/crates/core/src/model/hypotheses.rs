use std::fmt;

use super::DriftModel;
use crate::error::{domain, Error, Result};
use crate::hform::{build_nodes, cumulative_from_bottom, Panels};
use crate::numerics::{aitken, integrate};

/// Verdict of a numerical limit check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
    Inconclusive,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Inconclusive => "INCONCLUSIVE",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisReport {
    pub x_max: f64,
    pub tol: f64,
    pub h1: Status,
    /// ∫_0^∞ e^γ ∫_y^∞ e^{−γ}, truncated at x_max plus the 1/(2q) tail.
    pub h1_estimate: f64,
    pub h2: Status,
    pub h2_q_tail: f64,
    pub h2_ratio_tail: f64,
    pub h3: Status,
    pub h3_valley: f64,
    pub as_lln: Status,
    pub as_lln_estimate: f64,
    pub b_limit: Option<f64>,
    pub sigma: Option<f64>,
}

impl HypothesisReport {
    /// Rows of (name, status, value) for tabular output.
    pub fn rows(&self) -> Vec<(&'static str, String, f64)> {
        vec![
            ("h1", self.h1.to_string(), self.h1_estimate),
            ("h2_q_tail", self.h2.to_string(), self.h2_q_tail),
            ("h2_ratio_tail", self.h2.to_string(), self.h2_ratio_tail),
            ("h3_valley", self.h3.to_string(), self.h3_valley),
            ("as_lln", self.as_lln.to_string(), self.as_lln_estimate),
            ("b_limit", opt_status(self.b_limit), self.b_limit.unwrap_or(f64::NAN)),
            ("sigma", opt_status(self.sigma), self.sigma.unwrap_or(f64::NAN)),
        ]
    }
}

fn opt_status(v: Option<f64>) -> String {
    if v.is_some() { "VALUE" } else { "NONE" }.to_string()
}

/// ∫_z^∞ q^{-k}: closed tail if available, else quadrature to x_max plus a
/// local power-law tail.
fn inverse_power_tail(model: &DriftModel, k: u32, z: f64, x_max: f64) -> Option<f64> {
    if let Some(r) = model.tail_ratio(k, z) {
        return Some(r / model.q(z).powi(k as i32));
    }
    let (q, qp) = model.qq(x_max);
    if q <= 0.0 {
        return None;
    }
    let alpha = x_max * qp / q;
    if k as f64 * alpha <= 1.0 + 1e-9 {
        return None;
    }
    let tail = x_max / (k as f64 * alpha - 1.0) / q.powi(k as i32);
    let body = integrate(|s| model.q(s).powi(-(k as i32)), z, x_max, 1e-12, 0.0).value;
    Some(body + tail)
}

/// Verdict from successive increments over doubling intervals.
fn ratio_verdict(increments: &[f64]) -> (Status, f64) {
    let ratios: Vec<f64> = increments.windows(2).map(|w| w[0] / w[1]).collect();
    if ratios.iter().any(|r| !r.is_finite() || *r >= 0.97) {
        return (Status::Fail, ratios.iter().cloned().fold(0.0, f64::max));
    }
    let worst = ratios.iter().cloned().fold(0.0, f64::max);
    if worst <= 0.85 && ratios.iter().all(|r| *r >= 0.0) {
        (Status::Pass, worst)
    } else {
        (Status::Inconclusive, worst)
    }
}

/// Numerical assessment of the entrance-boundary hypotheses on [0, x_max].
pub fn check_hypotheses(model: &DriftModel, x_max: f64, tol: f64) -> Result<HypothesisReport> {
    if !(x_max > 1.0 && x_max.is_finite()) {
        return Err(domain("x_max", x_max, "must be finite and > 1"));
    }
    if !(tol > 0.0 && tol < 1.0) {
        return Err(domain("tol", tol, "must lie in (0, 1)"));
    }
    let levels = 5usize;
    let probes: Vec<f64> = (0..=levels).map(|j| x_max / 2f64.powi(j as i32)).collect();

    // H1: ∫_0^x h on doubling levels, with h from one backward sweep.
    let panels = Panels::new(model, build_nodes(0.0, x_max, 0.005, &probes));
    let (qx, qpx) = model.qq(x_max);
    if !(qx.is_finite() && qpx.is_finite()) {
        return Err(Error::GridTooSmall(format!("q is not finite at x_max = {x_max}")));
    }
    let terminal = if qx > 0.0 {
        1.0 / (2.0 * qx) - qpx / (4.0 * qx * qx * qx)
    } else {
        f64::INFINITY
    };
    let mut h1_estimate;
    let h1 = if !(terminal > 0.0 && terminal.is_finite()) {
        h1_estimate = f64::INFINITY;
        Status::Fail
    } else {
        let h = panels.sweep(model, |_, _| 1.0, terminal)?;
        let cum = cumulative_from_bottom(&h);
        let at = |x: f64| {
            let i = h.x.iter().position(|v| *v == x).expect("probe is a node");
            cum[i]
        };
        let partial: Vec<f64> = probes.iter().map(|&x| at(x)).collect();
        h1_estimate = partial[0];
        if model.tail_ratio(1, x_max).is_some() {
            let totals: Vec<f64> = probes
                .iter()
                .zip(&partial)
                .map(|(&x, p)| p + 0.5 * model.tail_ratio(1, x).unwrap() / model.q(x))
                .collect();
            h1_estimate = totals[0];
            let spread = (totals[0] - totals[1]).abs().max((totals[1] - totals[2]).abs());
            if spread <= 10.0 * tol * totals[0] {
                Status::Pass
            } else {
                Status::Inconclusive
            }
        } else {
            let inc: Vec<f64> = partial.windows(2).map(|w| w[0] - w[1]).collect();
            let (status, rho) = ratio_verdict(&inc[..3]);
            if status == Status::Pass {
                h1_estimate += inc[0] * rho / (1.0 - rho);
            } else if status == Status::Fail {
                h1_estimate = f64::INFINITY;
            }
            status
        }
    };

    // H2: q grows without bound and q'/q² vanishes.
    let qs: Vec<(f64, f64)> = probes.iter().map(|&x| model.qq(x)).collect();
    let ratio: Vec<f64> = qs.iter().map(|(q, qp)| qp.abs() / (q * q)).collect();
    let q_increasing = qs.windows(2).all(|w| w[0].0 > w[1].0);
    let ratio_decreasing = ratio.windows(2).take(3).all(|w| w[0] <= w[1]);
    let h2 = if q_increasing && ratio_decreasing && qs[0].0 > 1.0 && ratio[0] <= 10.0 * tol {
        Status::Pass
    } else if qs[0].0 <= qs[1].0 * (1.0 + 1e-6) && qs[0].0 < 1.0 / tol {
        Status::Fail
    } else {
        Status::Inconclusive
    };

    // H3: valley constant over the tail window.
    let lo = probes[levels];
    let npts = 4000;
    let xs: Vec<f64> = (0..=npts)
        .map(|i| lo * (x_max / lo).powf(i as f64 / npts as f64))
        .collect();
    let qv: Vec<f64> = xs.iter().map(|&x| model.q(x)).collect();
    let mut suffix_min = f64::INFINITY;
    let mut valley = f64::INFINITY;
    for &q in qv.iter().rev() {
        suffix_min = suffix_min.min(q);
        valley = valley.min(suffix_min / q);
    }
    let h3 = if qv.iter().all(|q| *q > 0.0) && valley > 0.0 && valley <= 1.0 {
        Status::Pass
    } else {
        Status::Fail
    };
    let valley = if valley.is_finite() {
        valley.clamp(0.0, 1.0)
    } else {
        0.0
    };

    // Almost-sure LLN integral ∫ dy / (q³ M²).
    let (as_lln, as_lln_estimate) = if h1 == Status::Fail || h3 == Status::Fail {
        (Status::Fail, f64::INFINITY)
    } else {
        let g = |y: f64| {
            let m = inverse_power_tail(model, 1, y, x_max)?;
            Some(1.0 / (model.q(y).powi(3) * m * m))
        };
        let mut inc = Vec::new();
        let mut ok = true;
        for j in 0..3 {
            let (a, b) = (probes[j + 1], probes[j]);
            let mut acc = 0.0;
            let steps = 32;
            for s in 0..steps {
                let l = a + (b - a) * s as f64 / steps as f64;
                let r = a + (b - a) * (s + 1) as f64 / steps as f64;
                acc += crate::numerics::gl_integrate(|y| g(y).unwrap_or(f64::NAN), l, r, 10);
            }
            ok &= acc.is_finite();
            inc.push(acc);
        }
        if !ok {
            (Status::Inconclusive, f64::NAN)
        } else {
            let (status, rho) = ratio_verdict(&inc);
            let head = integrate(|y| g(y).unwrap_or(0.0), probes[levels].min(1.0), probes[0], 1e-10, 0.0).value;
            let est = if status == Status::Pass {
                head + inc[0] * rho / (1.0 - rho)
            } else {
                f64::INFINITY
            };
            (status, est)
        }
    };

    // b = lim q'(z) ∫_z^∞ 1/q and Σ = lim ∫q⁻¹ / (q² ∫q⁻³).
    let zs: Vec<f64> = probes.iter().rev().copied().collect();
    let b_seq: Option<Vec<f64>> = zs
        .iter()
        .map(|&z| inverse_power_tail(model, 1, z, x_max).map(|m| model.qq(z).1 * m))
        .collect();
    let s_seq: Option<Vec<f64>> = zs
        .iter()
        .map(|&z| {
            let i1 = inverse_power_tail(model, 1, z, x_max)?;
            let i3 = inverse_power_tail(model, 3, z, x_max)?;
            Some(i1 / (model.q(z).powi(2) * i3))
        })
        .collect();
    let limit = |seq: Option<Vec<f64>>| -> Option<f64> {
        let s = seq?;
        let n = s.len();
        let l1 = aitken(s[n - 3], s[n - 2], s[n - 1]);
        let l0 = aitken(s[n - 4], s[n - 3], s[n - 2]);
        if l1.is_finite() && (l1 - l0).abs() <= 1e-3 * l1.abs().max(1e-12) {
            Some(l1)
        } else {
            None
        }
    };
    let mut b_limit = limit(b_seq);
    let mut sigma = limit(s_seq);
    if let (Some(b), Some(s)) = (b_limit, sigma) {
        if ((2.0 * b + 1.0) / s - 1.0).abs() > 1e-3 {
            b_limit = None;
            sigma = None;
        }
    }

    Ok(HypothesisReport {
        x_max,
        tol,
        h1,
        h1_estimate,
        h2,
        h2_q_tail: qs[0].0,
        h2_ratio_tail: ratio[0],
        h3,
        h3_valley: valley,
        as_lln,
        as_lln_estimate,
        b_limit,
        sigma,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_drift_passes_everything() {
        let m = DriftModel::power_law(1.0, 2.0).unwrap();
        let r = check_hypotheses(&m, 2000.0, 1e-6).unwrap();
        assert_eq!(r.h1, Status::Pass);
        assert_eq!(r.h2, Status::Pass);
        assert_eq!(r.h3, Status::Pass);
        assert_eq!(r.as_lln, Status::Pass);
        assert!((r.h3_valley - 1.0).abs() < 1e-12);
        assert!((r.b_limit.unwrap() - 2.0).abs() < 1e-9);
        assert!((r.sigma.unwrap() - 5.0).abs() < 1e-9);
        assert!(r.h2_ratio_tail <= 10.0 * r.tol);
    }

    #[test]
    fn cubic_drift_limits() {
        let m = DriftModel::power_law(1.0, 3.0).unwrap();
        let r = check_hypotheses(&m, 500.0, 1e-6).unwrap();
        assert!((r.b_limit.unwrap() - 1.5).abs() < 1e-9);
        assert!((r.sigma.unwrap() - 4.0).abs() < 1e-9);
    }

    #[test]
    fn exponential_drift_has_b_one() {
        let m = DriftModel::exp_poly(vec![0.0, 1.0]).unwrap();
        let r = check_hypotheses(&m, 30.0, 1e-6).unwrap();
        assert_eq!(r.h1, Status::Pass);
        assert!((r.b_limit.unwrap() - 1.0).abs() < 1e-9);
        assert!((r.sigma.unwrap() - 3.0).abs() < 1e-9);
    }

    #[test]
    fn constant_drift_fails_h1() {
        let m = DriftModel::exp_poly(vec![0.0]).unwrap();
        let r = check_hypotheses(&m, 100.0, 1e-6).unwrap();
        assert_eq!(r.h1, Status::Fail);
        assert_eq!(r.h2, Status::Fail);
    }

    #[test]
    fn linear_custom_drift_fails_h1() {
        let knots: Vec<f64> = (0..=10).map(|i| i as f64).collect();
        let vals = knots.clone();
        let m = DriftModel::custom(knots, vals).unwrap();
        let r = check_hypotheses(&m, 400.0, 1e-6).unwrap();
        assert_eq!(r.h1, Status::Fail);
    }

    #[test]
    fn valley_constant_detects_dips() {
        // q dips to half its value once before growing again
        let knots = vec![0.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0];
        let vals = vec![1.0, 100.0, 400.0, 200.0, 900.0, 2500.0, 3600.0, 4900.0, 6400.0];
        let m = DriftModel::custom(knots, vals).unwrap();
        let r = check_hypotheses(&m, 80.0, 1e-3).unwrap();
        assert!(r.h3_valley > 0.0 && r.h3_valley < 0.6, "{}", r.h3_valley);
    }
}
