//! Overflow-safe tables of the nested integrals attached to a drift:
//! h = e^γ∫e^{−γ}, w = e^γ∫h²e^{−γ}, m = 2∫h, M = ∫1/q, and the cumulants of
//! the descent time from infinity.
//!
//! The cumulant generating function Φ_z(θ) = log E∞ e^{θT_z} satisfies
//! Φ_z(θ) = ∫_z^∞ ρ with ρ' = 2qρ − ρ² − 2θ. Expanding ρ = Σ r_n θ^n gives
//! one h-form sweep per order: r_1 = 2h and r_n' = 2q r_n − Σ_{i+j=n} r_i r_j.
//! Hence κ_n(z) = n!∫_z^∞ r_n, with κ_1 = m and κ_2 = 8∫w.

mod moments;

pub use moments::MomentTable;

use std::io::{self, Write};

use num_complex::Complex64;

use crate::error::{domain, Error, Result};
use crate::hform::{build_nodes, cumulative_from_top, Panels};
use crate::model::DriftModel;
use crate::numerics::{aitken, factorial, gl_integrate, integrate, locate, Curve};

/// Build parameters for [`PotentialTables`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TableOptions {
    /// Public domain end; chosen by the default rule when `None`.
    pub x_max: Option<f64>,
    pub tol: f64,
    /// Number of cumulant orders tabulated (at least 4).
    pub depth: usize,
    /// Relative node spacing.
    pub step: f64,
}

impl Default for TableOptions {
    fn default() -> Self {
        TableOptions {
            x_max: None,
            tol: 1e-6,
            depth: 8,
            step: 0.005,
        }
    }
}

impl TableOptions {
    pub fn with_x_max(mut self, x_max: f64) -> Self {
        self.x_max = Some(x_max);
        self
    }

    pub fn with_step(mut self, step: f64) -> Self {
        self.step = step;
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TailKind {
    /// Exact (closed form or converged quadrature) tail integrals of q^{-k}.
    Exact,
    /// Local power-law fit of q at the end of the grid.
    LocalPowerLaw,
}

/// Tail corrections applied beyond the last internal node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailModel {
    pub kind: TailKind,
    /// Internal end of the grid; tables are solved on [0, x_end] ⊇ [0, x_max].
    pub x_end: f64,
    pub m_tail: f64,
    pub big_m_tail: f64,
}

/// Immutable tables of the descent-time quantities on [0, x_max].
#[derive(Debug, Clone)]
pub struct PotentialTables {
    model: DriftModel,
    tol: f64,
    step: f64,
    x_max: f64,
    n_pub: usize,
    panels: Panels,
    gamma: Vec<f64>,
    r: Vec<Curve>,
    cum: Vec<Vec<f64>>,
    big_m: Vec<f64>,
    tail: TailModel,
}

/// Default truncation: the first point where q ≥ 10³ and |q'|/q² ≤ tol.
pub fn select_x_max(model: &DriftModel, tol: f64) -> Result<f64> {
    let mut x: f64 = 0.5;
    while x < 1e9 {
        let (q, qp) = model.qq(x);
        if !q.is_finite() {
            break;
        }
        if q >= 1e3 && qp.abs() / (q * q) <= tol {
            return Ok(x);
        }
        x *= 1.005;
    }
    Err(Error::GridTooSmall(
        "q never reaches 1e3 with |q'|/q^2 <= tol; the entrance-boundary hypothesis looks violated".into(),
    ))
}

fn select_x_end(model: &DriftModel, x_max: f64) -> f64 {
    let (q0, qp0) = model.qq(x_max);
    let target = 1e-3 * qp0.abs() / (q0 * q0);
    let mut x = x_max;
    while x < 8.0 * x_max {
        let next = x * 1.01;
        let (q, qp) = model.qq(next);
        if !(q.is_finite() && q < 1e100) {
            break;
        }
        x = next;
        if qp.abs() / (q * q) <= target {
            break;
        }
    }
    x.min(8.0 * x_max)
}

impl PotentialTables {
    pub fn build(model: &DriftModel, opts: TableOptions) -> Result<Self> {
        if !(opts.tol > 0.0 && opts.tol < 1.0) {
            return Err(domain("tol", opts.tol, "must lie in (0, 1)"));
        }
        if opts.depth < 4 {
            return Err(domain("depth", opts.depth as f64, "need at least 4 cumulant orders"));
        }
        if !(opts.step > 0.0 && opts.step <= 0.1) {
            return Err(domain("step", opts.step, "must lie in (0, 0.1]"));
        }
        let x_max = match opts.x_max {
            Some(x) => x,
            None => select_x_max(model, opts.tol)?,
        };
        if !(x_max > 0.0 && x_max.is_finite()) {
            return Err(domain("x_max", x_max, "must be positive and finite"));
        }
        if model.q(x_max) <= 1.0 {
            return Err(domain("x_max", x_max, "need q(x_max) > 1"));
        }
        let x_end = select_x_end(model, x_max);
        let nodes = build_nodes(0.0, x_end, opts.step, &[x_max]);
        let n_pub = nodes.iter().position(|v| *v == x_max).expect("x_max is pinned");
        let panels = Panels::new(model, nodes);
        let n = panels.len();
        let last = n - 1;
        let mut gamma = vec![0.0; n];
        for i in 0..n - 1 {
            gamma[i + 1] = gamma[i] + panels.dgamma[i];
        }
        let (qx, qpx) = (panels.q[last], panels.qp[last]);
        let x_end = panels.x[last];

        // terminal value of H' = 2qH − S from two asymptotic terms
        let terminal = |s: f64, ds: f64| s / (2.0 * qx) + ds / (4.0 * qx * qx) - s * qpx / (4.0 * qx * qx * qx);

        let mut r: Vec<Curve> = Vec::with_capacity(opts.depth);
        r.push(panels.sweep(model, |_, _| 2.0, terminal(2.0, 0.0))?);
        for order in 2..=opts.depth {
            let (s_end, ds_end) = (1..order).fold((0.0, 0.0), |(s, ds), j| {
                let (a, b) = (&r[j - 1], &r[order - j - 1]);
                (
                    s + a.f[last] * b.f[last],
                    ds + a.d[last] * b.f[last] + a.f[last] * b.d[last],
                )
            });
            let prev = &r;
            let curve = panels.sweep(
                model,
                |i, s| {
                    (1..order)
                        .map(|j| prev[j - 1].panel(i).eval(s) * prev[order - j - 1].panel(i).eval(s))
                        .sum()
                },
                terminal(s_end, ds_end),
            )?;
            r.push(curve);
        }
        if r[0].f.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Stiffness { a: 0.0, b: x_end });
        }

        // tail integrals beyond x_end
        let exact: Vec<Option<f64>> = (1..=2 * opts.depth as u32)
            .map(|k| model.tail_ratio(k, x_end))
            .collect();
        let kind = if exact.iter().all(|v| v.is_some()) {
            TailKind::Exact
        } else {
            TailKind::LocalPowerLaw
        };
        let alpha = x_end * qpx / qx;
        let ratio = |k: usize| -> Result<f64> {
            match exact[k - 1] {
                Some(v) => Ok(v),
                None if k as f64 * alpha > 1.0 + 1e-9 => Ok(x_end / (k as f64 * alpha - 1.0)),
                None => Err(Error::TailUnresolved(format!(
                    "local exponent {alpha:.3} at x = {x_end} gives a divergent tail"
                ))),
            }
        };
        let big_m_tail = ratio(1)? / qx;
        let mut tails = vec![big_m_tail - 1.0 / (4.0 * qx * qx)];
        for order in 2..=opts.depth {
            tails.push(r[order - 1].f[last] * ratio(2 * order - 1)?);
        }
        let cum: Vec<Vec<f64>> = r.iter().zip(&tails).map(|(c, t)| cumulative_from_top(c, *t)).collect();
        if kind == TailKind::LocalPowerLaw && tails[0] > opts.tol * cum[0][0] {
            return Err(Error::TailUnresolved(format!(
                "m_tail / m(0) = {:e} exceeds tol without an exact tail",
                tails[0] / cum[0][0]
            )));
        }

        let pieces: Vec<f64> = {
            panels
                .x
                .windows(2)
                .map(|w| {
                    let (qa, qb) = (model.q(w[0]), model.q(w[1]));
                    if qa <= 0.0 || qb <= 0.0 {
                        f64::INFINITY
                    } else if qa.max(qb) <= 2.0 * qa.min(qb) {
                        gl_integrate(|s| 1.0 / model.q(s), w[0], w[1], 10)
                    } else {
                        integrate(|s| 1.0 / model.q(s), w[0], w[1], 1e-13, 0.0).value
                    }
                })
                .collect()
        };
        let mut big_m = vec![0.0; n];
        big_m[last] = big_m_tail;
        for i in (0..last).rev() {
            big_m[i] = big_m[i + 1] + pieces[i];
        }

        Ok(PotentialTables {
            model: model.clone(),
            tol: opts.tol,
            step: opts.step,
            x_max,
            n_pub,
            panels,
            gamma,
            r,
            cum,
            big_m,
            tail: TailModel {
                kind,
                x_end,
                m_tail: tails[0],
                big_m_tail,
            },
        })
    }

    pub fn model(&self) -> &DriftModel {
        &self.model
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn depth(&self) -> usize {
        self.r.len()
    }

    pub fn tail_model(&self) -> TailModel {
        self.tail
    }

    pub fn grid(&self) -> &[f64] {
        &self.panels.x[..=self.n_pub]
    }

    pub fn gamma_vals(&self) -> &[f64] {
        &self.gamma[..=self.n_pub]
    }

    pub fn h_vals(&self) -> Vec<f64> {
        self.r[0].f[..=self.n_pub].iter().map(|v| 0.5 * v).collect()
    }

    pub fn w_vals(&self) -> Vec<f64> {
        self.r[1].f[..=self.n_pub].iter().map(|v| 0.25 * v).collect()
    }

    pub fn m_vals(&self) -> &[f64] {
        &self.cum[0][..=self.n_pub]
    }

    pub fn big_m_vals(&self) -> &[f64] {
        &self.big_m[..=self.n_pub]
    }

    pub(crate) fn panels(&self) -> &Panels {
        &self.panels
    }

    pub(crate) fn check_z(&self, name: &'static str, z: f64) -> Result<()> {
        if !(z >= 0.0 && z <= self.x_max) {
            return Err(domain(name, z, "outside the table range [0, x_max]"));
        }
        Ok(())
    }

    /// ∫_x^∞ r_n for x anywhere in [0, x_end].
    pub(crate) fn tail_integral(&self, n: usize, x: f64) -> f64 {
        let i = locate(&self.panels.x, x);
        if x == self.panels.x[i] {
            return self.cum[n - 1][i];
        }
        if x >= self.tail.x_end {
            return self.cum[n - 1][self.panels.len() - 1];
        }
        let p = self.r[n - 1].panel(i);
        self.cum[n - 1][i + 1] + p.integral_between(x, p.b)
    }

    /// r_n(x) on [0, x_end]: the coefficient of θ^n in (log ψ_θ)'.
    pub(crate) fn r_at(&self, n: usize, x: f64) -> f64 {
        self.r[n - 1].eval(x.min(self.tail.x_end))
    }

    pub(crate) fn x_end(&self) -> f64 {
        self.tail.x_end
    }

    /// m(z) = E∞(T_z).
    pub fn lyapunov_m(&self, z: f64) -> Result<f64> {
        self.check_z("z", z)?;
        Ok(self.tail_integral(1, z))
    }

    /// M(z) = ∫_z^∞ 1/q.
    pub fn deterministic_time(&self, z: f64) -> Result<f64> {
        self.check_z("z", z)?;
        let x = &self.panels.x;
        let i = locate(x, z);
        if z == x[i] {
            return Ok(self.big_m[i]);
        }
        if self.model.q(z) <= 0.0 || self.big_m[i + 1].is_infinite() {
            return Ok(f64::INFINITY);
        }
        let part = integrate(|s| 1.0 / self.model.q(s), z, x[i + 1], 1e-13, 0.0).value;
        Ok(self.big_m[i + 1] + part)
    }

    pub fn h(&self, z: f64) -> Result<f64> {
        self.check_z("z", z)?;
        Ok(0.5 * self.r[0].eval(z))
    }

    pub fn w(&self, z: f64) -> Result<f64> {
        self.check_z("z", z)?;
        Ok(0.25 * self.r[1].eval(z))
    }

    /// n-th cumulant of the descent time T_z from infinity.
    pub fn cumulant(&self, n: usize, z: f64) -> Result<f64> {
        if n == 0 || n > self.depth() {
            return Err(Error::DepthExceeded { n, depth: self.depth() });
        }
        self.check_z("z", z)?;
        Ok(factorial(n) * self.tail_integral(n, z))
    }

    /// Var(T_z) from infinity, equal to 8∫_z^∞ w.
    pub fn variance(&self, z: f64) -> Result<f64> {
        self.cumulant(2, z)
    }

    /// E∞((T_z − m(z))⁴) = κ₄ + 3κ₂².
    pub fn central4(&self, z: f64) -> Result<f64> {
        let k2 = self.cumulant(2, z)?;
        Ok(self.cumulant(4, z)? + 3.0 * k2 * k2)
    }

    /// E∞(T_z^n) for n ≤ depth, from the cumulants.
    pub fn moment_from_infinity(&self, z: f64, n: usize) -> Result<f64> {
        let kappa: Vec<f64> = (1..=n).map(|k| self.cumulant(k, z)).collect::<Result<_>>()?;
        Ok(crate::numerics::moments_from_cumulants(&kappa)[n])
    }

    /// The bound E_x e^{λT_z} ≤ 1/(1 − λm(z)).
    pub fn exp_moment_bound(&self, z: f64, lambda: f64) -> Result<f64> {
        let lm = lambda * self.lyapunov_m(z)?;
        if lm >= 1.0 {
            return Err(Error::BoundInvalid(lm));
        }
        Ok(1.0 / (1.0 - lm))
    }

    /// E_x(T_z^n), x in [z, x_max] or x = ∞.
    pub fn hitting_moment(&self, x: f64, z: f64, n: usize) -> Result<f64> {
        MomentTable::build(self, z, n.max(1))?.moment(x, n)
    }

    /// E_ξ(T_z^n) through the alternating chain sum over moments from infinity.
    pub fn hitting_moment_combinatorial(&self, xi: f64, z: f64, n: usize) -> Result<f64> {
        moments::combinatorial(self, xi, z, n)
    }

    /// E_x ∫_0^{T_z} f(X_s) ds = 2∫_z^x e^{γ(y)}∫_y^∞ f e^{−γ} dξ dy.
    pub fn green_occupation<F>(&self, x: f64, z: f64, f: F) -> Result<f64>
    where
        F: Fn(f64) -> f64 + Sync,
    {
        moments::green_occupation(self, x, z, f)
    }

    /// E_x e^{iθT_z} from the moment series, with the remainder bound.
    pub fn characteristic_function(&self, x: f64, z: f64, theta: f64, n_terms: usize) -> Result<(Complex64, f64)> {
        let lm = theta.abs() * self.lyapunov_m(z)?;
        if lm >= 1.0 {
            return Err(Error::SeriesDiverges(lm));
        }
        let table = MomentTable::build(self, z, n_terms.max(1))?;
        let mut sum = Complex64::new(1.0, 0.0);
        let mut ipow = Complex64::new(1.0, 0.0);
        for n in 1..=n_terms {
            ipow *= Complex64::new(0.0, theta);
            sum += ipow * table.moment(x, n)? / factorial(n);
        }
        Ok((sum, lm.powi(n_terms as i32 + 1) / (1.0 - lm)))
    }

    /// z with m(z) = t.
    pub fn m_inverse(&self, t: f64) -> Result<f64> {
        let m = &self.cum[0];
        if !(t >= m[self.n_pub] && t <= m[0]) {
            return Err(domain("t", t, "outside [m(x_max), m(0)]"));
        }
        let x = &self.panels.x;
        // m is decreasing: find the bracketing panel
        let (mut lo, mut hi) = (0usize, self.n_pub);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if m[mid] >= t {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        if m[lo] == t {
            return Ok(x[lo]);
        }
        if m[hi] == t {
            return Ok(x[hi]);
        }
        let (mut a, mut b) = (x[lo], x[hi]);
        let mut z = a + (b - a) * (m[lo] - t) / (m[lo] - m[hi]);
        for _ in 0..100 {
            let f = self.tail_integral(1, z) - t;
            if f.abs() <= 1e-15 * t {
                break;
            }
            if f > 0.0 {
                a = z;
            } else {
                b = z;
            }
            let newton = z + f / self.r[0].eval(z);
            z = if newton > a && newton < b {
                newton
            } else {
                0.5 * (a + b)
            };
            if b - a <= 1e-15 * b {
                break;
            }
        }
        Ok(z)
    }

    /// Σ = lim ∫q⁻¹ / (q²∫q⁻³), extrapolated over a geometric sequence of z.
    pub fn sigma(&self) -> Result<f64> {
        let zs: Vec<f64> = (0..6).rev().map(|j| self.x_max / 2f64.powi(j)).collect();
        let inv3 = |z: f64| -> f64 {
            let end = self.tail.x_end;
            let body = integrate(|s| self.model.q(s).powi(-3), z, end, 1e-13, 0.0).value;
            let (q, qp) = self.model.qq(end);
            let tail = self
                .model
                .tail_ratio(3, end)
                .unwrap_or(end / (3.0 * end * qp / q - 1.0))
                / q.powi(3);
            body + tail
        };
        let mut seq = Vec::new();
        let mut bseq = Vec::new();
        for &z in &zs {
            let big_m = self.deterministic_time(z)?;
            let (q, qp) = self.model.qq(z);
            seq.push(big_m / (q * q * inv3(z)));
            bseq.push(qp * big_m);
        }
        let n = seq.len();
        let l1 = aitken(seq[n - 3], seq[n - 2], seq[n - 1]);
        let l0 = aitken(seq[n - 4], seq[n - 3], seq[n - 2]);
        if !(l1.is_finite() && (l1 - l0).abs() <= 1e-2 * l1.abs()) {
            return Err(Error::NoLimit(format!("extrapolants {l0} and {l1} disagree")));
        }
        let b1 = aitken(bseq[n - 3], bseq[n - 2], bseq[n - 1]);
        let b0 = aitken(bseq[n - 4], bseq[n - 3], bseq[n - 2]);
        if (b1 - b0).abs() <= 1e-3 * b1.abs() && ((2.0 * b1 + 1.0) / l1 - 1.0).abs() > 1e-2 {
            return Err(Error::NoLimit(format!(
                "sigma {l1} disagrees with 2b+1 = {}",
                2.0 * b1 + 1.0
            )));
        }
        Ok(l1)
    }

    /// max |m''/m'| over the public grid; m''/m' = 2q − 1/h.
    pub fn curvature_ratio_max(&self) -> f64 {
        (0..=self.n_pub)
            .map(|i| (2.0 * self.panels.q[i] - 2.0 / self.r[0].f[i]).abs())
            .fold(0.0, f64::max)
    }

    /// CSV with columns z, gamma, h, w, m, M, var.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "# model: {}", self.model.describe())?;
        writeln!(out, "# tol: {:e}, x_max: {:.16e}", self.tol, self.x_max)?;
        writeln!(out, "z,gamma,h,w,m,M,var")?;
        for i in 0..=self.n_pub {
            writeln!(
                out,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                self.panels.x[i],
                self.gamma[i],
                0.5 * self.r[0].f[i],
                0.25 * self.r[1].f[i],
                self.cum[0][i],
                self.big_m[i],
                2.0 * self.cum[1][i],
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tables() -> PotentialTables {
        let m = DriftModel::power_law(1.0, 2.0).unwrap();
        PotentialTables::build(&m, TableOptions::default()).unwrap()
    }

    #[test]
    fn default_truncation_for_quadratic_drift() {
        let t = tables();
        // 2/x³ <= 1e-6 first holds near x = 126
        assert!(t.x_max() > 125.0 && t.x_max() < 128.0, "{}", t.x_max());
        assert!(t.tail_model().x_end > 7.9 * t.x_max());
        assert_eq!(t.tail_model().kind, TailKind::Exact);
    }

    #[test]
    fn m_at_x_max_is_the_tail_when_grid_ends_there() {
        let m = DriftModel::power_law(1.0, 2.0).unwrap();
        let t = PotentialTables::build(&m, TableOptions::default().with_x_max(50.0)).unwrap();
        let end = t.lyapunov_m(50.0).unwrap();
        assert!((end / (1.0 / 50.0) - 1.0).abs() < 1e-3);
        assert!(t.lyapunov_m(50.1).is_err());
    }

    #[test]
    fn deterministic_time_values() {
        let t = tables();
        assert!((t.deterministic_time(4.0).unwrap() - 0.25).abs() < 1e-12);
        assert!((t.deterministic_time(0.0123).unwrap() - 1.0 / 0.0123).abs() < 1e-9);
        assert_eq!(t.deterministic_time(0.0).unwrap(), f64::INFINITY);
        let cubic = DriftModel::power_law(1.0, 3.0).unwrap();
        let t3 = PotentialTables::build(&cubic, TableOptions::default()).unwrap();
        assert!((t3.deterministic_time(2.0).unwrap() - 0.125).abs() < 1e-12);
    }

    #[test]
    fn m_is_decreasing_and_h_positive() {
        let t = tables();
        assert!(t.m_vals().windows(2).all(|w| w[1] < w[0]));
        assert!(t.h_vals().iter().all(|v| *v > 0.0));
        assert!(t.w_vals().iter().all(|v| *v > 0.0));
        let (a, b, c) = (
            t.lyapunov_m(1.0).unwrap(),
            t.lyapunov_m(2.0).unwrap(),
            t.lyapunov_m(5.0).unwrap(),
        );
        assert!(a > b && b > c);
    }

    #[test]
    fn tail_diagnostics_hold_at_x_max() {
        let t = tables();
        let x = t.x_max();
        let q = x * x;
        let tol = t.tol();
        assert!((2.0 * q * t.h(x).unwrap() - 1.0).abs() <= 5.0 * tol);
        let h = t.h(x).unwrap();
        assert!((t.w(x).unwrap() / h.powi(3) - 1.0).abs() <= 5.0 * tol);
        let ratio = t.lyapunov_m(x).unwrap() / t.deterministic_time(x).unwrap();
        assert!((ratio - 1.0).abs() <= 10.0 * tol);
    }

    #[test]
    fn exp_moment_bound_values() {
        let t = tables();
        assert_eq!(t.exp_moment_bound(3.0, 0.0).unwrap(), 1.0);
        let m = t.lyapunov_m(3.0).unwrap();
        assert!((t.exp_moment_bound(3.0, 0.5 / m).unwrap() - 2.0).abs() < 1e-12);
        assert!(matches!(t.exp_moment_bound(3.0, 1.0 / m), Err(Error::BoundInvalid(_))));
    }

    #[test]
    fn m_inverse_hits_nodes_and_small_t_asymptotics() {
        let t = tables();
        let m5 = t.lyapunov_m(5.0).unwrap();
        assert!((t.m_inverse(m5).unwrap() - 5.0).abs() < 1e-10);
        let z = t.m_inverse(0.01).unwrap();
        assert!((z * 0.01 - 1.0).abs() < 0.05);
        assert!(t.m_inverse(10.0).is_err());
    }

    #[test]
    fn sigma_matches_symbolic_values() {
        assert!((tables().sigma().unwrap() - 5.0).abs() < 0.05);
        let cubic = DriftModel::power_law(1.0, 3.0).unwrap();
        let t3 = PotentialTables::build(&cubic, TableOptions::default()).unwrap();
        assert!((t3.sigma().unwrap() - 4.0).abs() < 0.04);
        let e = DriftModel::exp_poly(vec![0.0, 1.0]).unwrap();
        let te = PotentialTables::build(&e, TableOptions::default()).unwrap();
        assert!((te.sigma().unwrap() - 3.0).abs() < 0.06);
    }

    #[test]
    fn refuses_constant_drift() {
        let one = DriftModel::exp_poly(vec![0.0]).unwrap();
        assert!(PotentialTables::build(&one, TableOptions::default()).is_err());
    }

    #[test]
    fn csv_has_header_and_one_row_per_node() {
        let t = tables();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("tol: 1e-6"));
        assert!(text.lines().any(|l| l == "z,gamma,h,w,m,M,var"));
        assert_eq!(text.lines().count(), 3 + t.grid().len());
    }
}
