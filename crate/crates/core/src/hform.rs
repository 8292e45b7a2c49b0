//! Backward sweeps for H(y) = e^{γ(y)}∫_y^∞ f e^{−γ}, the solution of
//! H' = 2qH − f that decays with the weight e^{−γ}.
//!
//! Each panel [a, b] is advanced with the exact variation-of-constants step
//! H(a) = e^{−(γ(b)−γ(a))}H(b) + ∫_a^b e^{−(γ(s)−γ(a))} f(s) ds,
//! so no exponential of γ itself is ever formed.

use crate::error::{Error, Result};
use crate::model::DriftModel;
use crate::numerics::{gl_integrate, integrate, Curve};

/// Integral over [a, b] of a function concentrated at one end (`anchor_left`
/// selects a), split into geometrically growing pieces. `f` takes the exact
/// distance u ≥ 0 from that end.
pub(crate) fn layered_integral<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, anchor_left: bool, width: f64) -> Result<f64> {
    let len = b - a;
    if len <= 0.0 {
        return Ok(0.0);
    }
    let mut w = width.clamp(len * 1e-12, len);
    let mut done = 0.0;
    let mut total: f64 = 0.0;
    while done < len {
        let next = (done + w).min(len);
        let q = integrate(&f, done, next, 1e-12, 1e-300_f64.max(total.abs() * 1e-16));
        if !q.converged && q.error > 1e-10 * q.value.abs() {
            let (lo, hi) = if anchor_left {
                (a + done, a + next)
            } else {
                (b - next, b - done)
            };
            return Err(Error::Stiffness { a: lo, b: hi });
        }
        total += q.value;
        done = next;
        if done >= len {
            break;
        }
        if total != 0.0 && f(done).abs() * (len - done) <= 1e-17 * total.abs() {
            break;
        }
        if done >= 2.0 * w {
            w *= 2.0;
        }
    }
    Ok(total)
}

/// Node geometry shared by every sweep over the same grid.
#[derive(Debug, Clone)]
pub(crate) struct Panels {
    pub x: Vec<f64>,
    pub q: Vec<f64>,
    pub qp: Vec<f64>,
    /// γ(x_{i+1}) − γ(x_i)
    pub dgamma: Vec<f64>,
}

impl Panels {
    pub fn new(model: &DriftModel, x: Vec<f64>) -> Self {
        let (q, qp): (Vec<f64>, Vec<f64>) = x.iter().map(|&v| model.qq(v)).unzip();
        let dgamma = x.windows(2).map(|w| model.gamma_increment(w[0], w[1])).collect();
        Panels { x, q, qp, dgamma }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    /// H at every node given H at the last node; `source(i, s)` evaluates a
    /// smooth f at s inside panel i.
    pub fn sweep<S>(&self, model: &DriftModel, source: S, terminal: f64) -> Result<Curve>
    where
        S: Fn(usize, f64) -> f64 + Sync,
    {
        let local: Vec<f64> = (0..self.len() - 1)
            .into_iter()
            .map(|i| self.graded_panel(model, i, |s| source(i, s)))
            .collect();
        Ok(self.recur(local, &source, terminal))
    }

    /// As [`Panels::sweep`] for sources with kinks or jumps, using adaptive
    /// quadrature on every panel.
    pub fn sweep_adaptive<S>(&self, model: &DriftModel, source: S, terminal: f64) -> Result<Curve>
    where
        S: Fn(usize, f64) -> f64 + Sync,
    {
        let local: Vec<f64> = (0..self.len() - 1)
            .into_iter()
            .map(|i| {
                let (a, b) = (self.x[i], self.x[i + 1]);
                let qa = self.q[i].max(self.q[i + 1]);
                let width = if qa > 0.0 { 1.0 / (2.0 * qa) } else { b - a };
                layered_integral(
                    |u| (-model.gamma_offset(a, u)).exp() * source(i, a + u),
                    a,
                    b,
                    true,
                    width,
                )
            })
            .collect::<Result<_>>()?;
        Ok(self.recur(local, &source, terminal))
    }

    /// ∫_a^b e^{−(γ(s)−γ(a))} f(s) ds on panel i with Gauss–Legendre pieces
    /// whose exponent span is at most 4.
    fn graded_panel<F: Fn(f64) -> f64>(&self, model: &DriftModel, i: usize, f: F) -> f64 {
        let (a, b) = (self.x[i], self.x[i + 1]);
        let qmax = self.q[i].max(self.q[i + 1]);
        let w0 = if qmax > 0.0 { (0.5 / qmax).min(b - a) } else { b - a };
        let len = b - a;
        let mut lo = 0.0;
        let mut w = w0;
        let mut total = 0.0;
        while lo < len {
            let hi = if lo + w >= len - 1e-3 * w { len } else { lo + w };
            let piece = gl_integrate(|u| (-model.gamma_offset(a, u)).exp() * f(a + u), lo, hi, 10);
            total += piece;
            lo = hi;
            if lo >= len {
                break;
            }
            let decay = (-model.gamma_offset(a, lo)).exp();
            if decay < 1e-18 && piece.abs() <= 1e-17 * total.abs() {
                break;
            }
            w = (2.0 * w).min(8.0 * w0);
        }
        total
    }

    fn recur<S: Fn(usize, f64) -> f64>(&self, local: Vec<f64>, source: &S, terminal: f64) -> Curve {
        let n = self.len();
        let mut h = vec![0.0; n];
        h[n - 1] = terminal;
        for i in (0..n - 1).rev() {
            h[i] = (-self.dgamma[i]).exp() * h[i + 1] + local[i];
        }
        let d = (0..n)
            .map(|i| {
                let s = if i + 1 < n {
                    source(i, self.x[i])
                } else {
                    source(n - 2, self.x[n - 1])
                };
                2.0 * self.q[i] * h[i] - s
            })
            .collect();
        Curve::new(self.x.clone(), h, d)
    }
}

/// ∫_{x_i}^{x_last} of a Hermite curve plus `tail`, for every node.
pub(crate) fn cumulative_from_top(c: &Curve, tail: f64) -> Vec<f64> {
    let n = c.x.len();
    let mut out = vec![0.0; n];
    out[n - 1] = tail;
    for i in (0..n - 1).rev() {
        out[i] = out[i + 1] + c.panel(i).integral();
    }
    out
}

/// ∫_{x_0}^{x_i} of a Hermite curve for every node.
pub(crate) fn cumulative_from_bottom(c: &Curve) -> Vec<f64> {
    let n = c.x.len();
    let mut out = vec![0.0; n];
    for i in 0..n - 1 {
        out[i + 1] = out[i] + c.panel(i).integral();
    }
    out
}

/// Nodes from `start` to `end`: uniform spacing `step` below 1, then
/// geometric with ratio 1 + step; `pins` are forced to be nodes.
pub(crate) fn build_nodes(start: f64, end: f64, step: f64, pins: &[f64]) -> Vec<f64> {
    let mut nodes = vec![start];
    let mut x = start;
    let mut pins: Vec<f64> = pins.iter().copied().filter(|p| *p > start && *p < end).collect();
    pins.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pins.push(end);
    for target in pins {
        while x < target {
            let dx = step * x.max(1.0);
            let next = x + dx;
            if next >= target - 0.25 * dx {
                x = target;
            } else {
                x = next;
            }
            nodes.push(x);
        }
    }
    nodes.dedup();
    nodes
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nodes_hit_pins_and_end() {
        let n = build_nodes(0.0, 50.0, 0.01, &[10.0, 3.3]);
        assert_eq!(n[0], 0.0);
        assert_eq!(*n.last().unwrap(), 50.0);
        assert!(n.contains(&10.0) && n.contains(&3.3));
        assert!(n.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn sweep_reproduces_constant_drift_solution() {
        // q = 1: h = 1/2 exactly, and with f = e^{-y}: H = e^{-y}/3
        let m = DriftModel::exp_poly(vec![0.0]).unwrap();
        let p = Panels::new(&m, build_nodes(0.0, 20.0, 0.01, &[]));
        let h = p.sweep(&m, |_, _| 1.0, 0.5).unwrap();
        assert!(h.f.iter().all(|v| (v - 0.5).abs() < 1e-13));
        let g = p.sweep(&m, |_, s| (-s).exp(), (-20f64).exp() / 3.0).unwrap();
        for (x, v) in g.x.iter().zip(&g.f) {
            assert!((v - (-x).exp() / 3.0).abs() < 1e-13 * (-x).exp());
        }
    }

    #[test]
    fn layered_integral_handles_right_anchor() {
        let v = layered_integral(|u| (-1e4 * u).exp(), 0.0, 1.0, false, 1e-4).unwrap();
        assert!((v - 1e-4).abs() < 1e-15);
    }
}
