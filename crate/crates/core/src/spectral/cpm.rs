//! Constant-potential shooting for −φ'' + Wφ = Eφ, W = q² − q', E = 2λ.
//!
//! W is frozen at each cell midpoint, so every cell is propagated exactly by
//! trigonometric or hyperbolic transfer matrices. The Prüfer angle
//! θ = atan2(Sφ, φ') is carried with the cell scale S = √|E − W|; it grows by
//! exactly kh across an oscillatory cell and its integer part in units of π
//! counts the zeros of φ.

use std::f64::consts::PI;

use crate::model::DriftModel;

/// Solution value and slope with a separate log scale: φ = e^log·f.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct State {
    pub f: f64,
    pub d: f64,
    pub log: f64,
}

impl State {
    fn renormalize(mut self) -> Self {
        let n = self.f.abs() + self.d.abs();
        if n > 0.0 && n.is_finite() && !(1e-100..=1e100).contains(&n) {
            self.f /= n;
            self.d /= n;
            self.log += n.ln();
        }
        self
    }
}

/// Exact propagation over a signed distance h with E − W = de.
pub(crate) fn propagate(s: State, de: f64, h: f64) -> State {
    if h == 0.0 {
        return s;
    }
    let out = if de > 0.0 {
        let k = de.sqrt();
        let (sn, cs) = (k * h).sin_cos();
        State {
            f: s.f * cs + s.d * sn / k,
            d: -s.f * k * sn + s.d * cs,
            log: s.log,
        }
    } else if de < 0.0 {
        let kappa = (-de).sqrt();
        let a = kappa * h.abs();
        if a > 20.0 {
            let e = (-2.0 * a).exp();
            let ch = 0.5 * (1.0 + e);
            let sh = 0.5 * (1.0 - e) * h.signum();
            State {
                f: s.f * ch + s.d * sh / kappa,
                d: s.f * kappa * sh + s.d * ch,
                log: s.log + a,
            }
        } else {
            let (ch, sh) = ((kappa * h).cosh(), (kappa * h).sinh());
            State {
                f: s.f * ch + s.d * sh / kappa,
                d: s.f * kappa * sh + s.d * ch,
                log: s.log,
            }
        }
    } else {
        State {
            f: s.f + s.d * h,
            d: s.d,
            log: s.log,
        }
    };
    out.renormalize()
}

fn mod_pi(a: f64) -> f64 {
    a.rem_euclid(PI)
}

fn scale(de: f64) -> f64 {
    let s = de.abs().sqrt();
    if s > 0.0 {
        s
    } else {
        1.0
    }
}

/// Cell partition of [z, X_R] with frozen potential values.
#[derive(Debug, Clone)]
pub(crate) struct Cells {
    pub x: Vec<f64>,
    pub w: Vec<f64>,
}

impl Cells {
    /// Width h near the well, growing geometrically once W exceeds 4·e_max.
    pub fn new(model: &DriftModel, z: f64, x_r: f64, e_max: f64, h: f64) -> Self {
        let pot = |x: f64| {
            let (q, qp) = model.qq(x);
            q * q - qp
        };
        let mut x = vec![z];
        let mut cur = z;
        let mut step = h;
        while cur < x_r {
            if pot(cur) > 4.0 * e_max.max(1.0) {
                step = (step * 1.02).min(0.05 * cur.max(1.0));
            } else {
                step = h;
            }
            cur = if cur + step >= x_r - 0.25 * step {
                x_r
            } else {
                cur + step
            };
            x.push(cur);
        }
        let w = x.windows(2).map(|p| pot(0.5 * (p[0] + p[1]))).collect();
        Cells { x, w }
    }

    /// Every other node, with potentials re-frozen at the merged midpoints.
    pub fn coarsen(&self, model: &DriftModel) -> Self {
        let n = self.x.len();
        let mut x: Vec<f64> = self.x.iter().copied().step_by(2).collect();
        if (n - 1) % 2 == 1 {
            x.push(self.x[n - 1]);
        }
        let w = x
            .windows(2)
            .map(|p| {
                let (q, qp) = model.qq(0.5 * (p[0] + p[1]));
                q * q - qp
            })
            .collect();
        Cells { x, w }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    /// Node index nearest the last classical turning point of E.
    pub fn turning_index(&self, e: f64) -> usize {
        let n = self.x.len();
        let last = self.w.iter().rposition(|w| *w <= e).map(|i| i + 1).unwrap_or(n / 2);
        last.clamp(1, n - 2)
    }

    /// Prüfer angle at node `im` from the left (φ(z) = 0, φ'(z) = 1),
    /// optionally keeping the node states.
    pub fn shoot_left(&self, e: f64, im: usize, keep: Option<&mut Vec<State>>) -> (f64, State) {
        let mut s = State {
            f: 0.0,
            d: 1.0,
            log: 0.0,
        };
        let mut theta = 0.0;
        let mut store = keep;
        if let Some(v) = store.as_deref_mut() {
            v.push(s);
        }
        for i in 0..im {
            let de = e - self.w[i];
            let h = self.x[i + 1] - self.x[i];
            let m = (theta / PI).floor();
            let next = propagate(s, de, h);
            if de > 0.0 {
                let k = de.sqrt();
                theta = m * PI + mod_pi((k * s.f).atan2(s.d)) + k * h;
            } else {
                let j = if s.f * next.f < 0.0 { 1.0 } else { 0.0 };
                theta = (m + j) * PI + mod_pi((scale(de) * next.f).atan2(next.d));
            }
            s = next;
            if let Some(v) = store.as_deref_mut() {
                v.push(s);
            }
        }
        let m = (theta / PI).floor();
        (m * PI + mod_pi(s.f.atan2(s.d)), s)
    }

    /// Prüfer angle at node `im` from the right end with φ'/φ = beta there.
    /// Stored states run from the right end leftwards.
    pub fn shoot_right(&self, e: f64, beta: f64, im: usize, keep: Option<&mut Vec<State>>) -> (f64, State) {
        let n = self.x.len();
        let last_de = e - self.w[n - 2];
        let mut s = State {
            f: 1.0,
            d: beta,
            log: 0.0,
        }
        .renormalize();
        let mut theta = mod_pi((scale(last_de) * s.f).atan2(s.d));
        let mut store = keep;
        if let Some(v) = store.as_deref_mut() {
            v.push(s);
        }
        for i in (im..n - 1).rev() {
            let de = e - self.w[i];
            let h = self.x[i] - self.x[i + 1];
            let m = (theta / PI).floor();
            let next = propagate(s, de, h);
            if de > 0.0 {
                let k = de.sqrt();
                theta = m * PI + mod_pi((k * s.f).atan2(s.d)) + k * h;
            } else {
                let j = if s.f * next.f < 0.0 { 1.0 } else { 0.0 };
                theta = (m - j) * PI + mod_pi((scale(de) * next.f).atan2(next.d));
            }
            s = next;
            if let Some(v) = store.as_deref_mut() {
                v.push(s);
            }
        }
        let m = (theta / PI).floor();
        (m * PI + mod_pi(s.f.atan2(s.d)), s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn propagation_matches_closed_forms() {
        let s = State {
            f: 0.3,
            d: -1.1,
            log: 0.0,
        };
        let t = propagate(s, 4.0, 0.7);
        let (f, d) = (
            0.3 * (1.4f64).cos() - 1.1 * (1.4f64).sin() / 2.0,
            -0.6 * (1.4f64).sin() - 1.1 * (1.4f64).cos(),
        );
        assert!((t.f * t.log.exp() - f).abs() < 1e-14 && (t.d * t.log.exp() - d).abs() < 1e-14);
        // large hyperbolic steps keep their scale in the log
        let u = propagate(
            State {
                f: 1.0,
                d: 0.0,
                log: 0.0,
            },
            -1e4,
            1.0,
        );
        assert!(((u.f.abs().ln() + u.log) - (100f64.cosh().ln())).abs() < 1e-12);
        let back = propagate(propagate(s, -3.0, 0.4), -3.0, -0.4);
        assert!((back.f * back.log.exp() - s.f).abs() < 1e-13);
    }

    #[test]
    fn box_eigenvalues_from_angles() {
        // W = 0 on [0, 1] with φ(1) = 0: E_k = (kπ)², D(E_k) = (k − 1)π
        let cells = Cells {
            x: (0..=100).map(|i| i as f64 / 100.0).collect(),
            w: vec![0.0; 100],
        };
        for k in 1..=3 {
            let e = (k as f64 * PI).powi(2);
            let (tl, _) = cells.shoot_left(e, 37, None);
            let (tr, _) = cells.shoot_right(e, -1e12, 37, None);
            let d = tl - tr;
            assert!((d - (k as f64 - 1.0) * PI).abs() < 1e-9, "k = {k}: {d}");
        }
    }
}
