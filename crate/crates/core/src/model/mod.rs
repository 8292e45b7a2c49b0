//! Drift families q, the potential γ = 2∫q, the scale function Λ = ∫e^γ
//! and the numerical hypothesis checks.

mod hypotheses;
mod spec_file;

pub use hypotheses::{check_hypotheses, HypothesisReport, Status};
pub use spec_file::{parse_model, parse_model_table, parse_table};

use crate::error::{domain, Error, Result};
use crate::numerics::{integrate, CubicSpline};

/// The family q belongs to.
#[derive(Debug, Clone, PartialEq)]
pub enum Family {
    /// q(x) = c·x^a above the floor, Gaussian-flattened below it.
    PowerLaw { c: f64, a: f64 },
    /// q(x) = exp(p(x)) with p given by ascending coefficients.
    ExpPoly { coeffs: Vec<f64> },
    /// Tabulated q through a natural cubic spline.
    Custom { spline: CubicSpline },
}

/// A drift q for dX = dB − q(X)dt on [0, ∞).
#[derive(Debug, Clone, PartialEq)]
pub struct DriftModel {
    family: Family,
    x_floor: f64,
}

impl DriftModel {
    pub fn power_law(c: f64, a: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(domain("c", c, "power-law scale must be positive"));
        }
        if !(a > 1.0 && a.is_finite()) {
            return Err(domain("a", a, "power-law exponent must exceed 1"));
        }
        Ok(DriftModel {
            family: Family::PowerLaw { c, a },
            x_floor: 0.0,
        })
    }

    pub fn exp_poly(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.is_empty() || coeffs.iter().any(|c| !c.is_finite()) {
            return Err(domain("coefficients", f64::NAN, "need finite polynomial coefficients"));
        }
        Ok(DriftModel {
            family: Family::ExpPoly { coeffs },
            x_floor: 0.0,
        })
    }

    pub fn custom(knots: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if knots.first() != Some(&0.0) {
            return Err(domain(
                "knots",
                knots.first().copied().unwrap_or(f64::NAN),
                "first knot must be 0",
            ));
        }
        let spline = CubicSpline::new(knots, values)
            .ok_or_else(|| domain("knots", f64::NAN, "need at least two strictly increasing knots"))?;
        Ok(DriftModel {
            family: Family::Custom { spline },
            x_floor: 0.0,
        })
    }

    /// Flatten a power law below `x_floor` so that q stays positive and C¹.
    pub fn with_floor(mut self, x_floor: f64) -> Result<Self> {
        if !(x_floor >= 0.0 && x_floor.is_finite()) {
            return Err(domain("x_floor", x_floor, "must be finite and >= 0"));
        }
        if x_floor > 0.0 && !matches!(self.family, Family::PowerLaw { .. }) {
            return Err(domain("x_floor", x_floor, "flattening applies to power laws only"));
        }
        self.x_floor = x_floor;
        Ok(self)
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn x_floor(&self) -> f64 {
        self.x_floor
    }

    /// One-line description used in report headers.
    pub fn describe(&self) -> String {
        match &self.family {
            Family::PowerLaw { c, a } => format!("power_law(c={c}, a={a}, x_floor={})", self.x_floor),
            Family::ExpPoly { coeffs } => format!("exp_poly({coeffs:?})"),
            Family::Custom { spline } => format!("custom({} knots)", spline.knots().len()),
        }
    }

    /// q(x) and q'(x).
    pub fn eval_drift(&self, x: f64) -> Result<(f64, f64)> {
        if !(x >= 0.0 && x.is_finite()) {
            return Err(domain("x", x, "drift is defined on [0, inf)"));
        }
        Ok(self.qq(x))
    }

    pub(crate) fn q(&self, x: f64) -> f64 {
        match &self.family {
            Family::PowerLaw { c, a } => {
                let xf = self.x_floor;
                if x >= xf {
                    c * pow(x, *a)
                } else {
                    c * pow(xf, *a) * (a * (x * x - xf * xf) / (2.0 * xf * xf)).exp()
                }
            }
            Family::ExpPoly { coeffs } => poly(coeffs, x).0.exp(),
            Family::Custom { spline } => spline.eval(x).0,
        }
    }

    pub(crate) fn qq(&self, x: f64) -> (f64, f64) {
        match &self.family {
            Family::PowerLaw { c, a } => {
                let xf = self.x_floor;
                if x >= xf {
                    let q = c * pow(x, *a);
                    let qp = if x == 0.0 { 0.0 } else { a * q / x };
                    (q, qp)
                } else {
                    let q = self.q(x);
                    (q, q * a * x / (xf * xf))
                }
            }
            Family::ExpPoly { coeffs } => {
                let (p, dp) = poly(coeffs, x);
                let q = p.exp();
                (q, dp * q)
            }
            Family::Custom { spline } => spline.eval(x),
        }
    }

    /// γ(x) = 2∫_0^x q.
    pub fn gamma(&self, x: f64) -> Result<f64> {
        if !(x >= 0.0 && x.is_finite()) {
            return Err(domain("x", x, "gamma is defined on [0, inf)"));
        }
        Ok(self.gamma_closed_form(x).unwrap_or_else(|| self.gamma_by_quadrature(x)))
    }

    /// Closed form of γ when the family has one.
    pub fn gamma_closed_form(&self, x: f64) -> Option<f64> {
        match &self.family {
            Family::PowerLaw { c, a } => {
                if self.x_floor == 0.0 {
                    Some(2.0 * c * pow(x, a + 1.0) / (a + 1.0))
                } else if x >= self.x_floor {
                    Some(2.0 * c * pow(x, a + 1.0) / (a + 1.0) + self.flattening_correction())
                } else {
                    None
                }
            }
            Family::ExpPoly { coeffs } if coeffs.len() <= 2 => Some(self.gamma_increment(0.0, x)),
            _ => None,
        }
    }

    /// γ by adaptive quadrature of q, regardless of family.
    pub fn gamma_by_quadrature(&self, x: f64) -> f64 {
        let mut total = 0.0;
        let mut a = 0.0;
        while a < x {
            let b = (a + 1.0).min(x);
            total += 2.0 * integrate(|s| self.q(s), a, b, 1e-14, 0.0).value;
            a = b;
        }
        total
    }

    /// Shift of γ above the floor relative to the unflattened power law.
    pub fn flattening_correction(&self) -> f64 {
        match &self.family {
            Family::PowerLaw { c, a } if self.x_floor > 0.0 => {
                let xf = self.x_floor;
                2.0 * integrate(|s| self.q(s), 0.0, xf, 1e-14, 0.0).value - 2.0 * c * pow(xf, a + 1.0) / (a + 1.0)
            }
            _ => 0.0,
        }
    }

    /// γ(a + u) − γ(a) for either sign of u, with u taken exactly: far out,
    /// γ changes by O(1) over a few ulps of a, so a + u must not be rounded.
    pub(crate) fn gamma_offset(&self, a: f64, u: f64) -> f64 {
        if u == 0.0 {
            return 0.0;
        }
        let b = a + u;
        match &self.family {
            Family::PowerLaw { c, a: p } if a > 0.0 && a.min(b) >= self.x_floor => {
                let e = p + 1.0;
                2.0 * c / e * pow(a, e) * (e * (u / a).ln_1p()).exp_m1()
            }
            Family::ExpPoly { coeffs } if coeffs.len() == 2 && coeffs[1] != 0.0 => {
                let (p0, p1) = (coeffs[0], coeffs[1]);
                2.0 * (p0 + p1 * a).exp() * (p1 * u).exp_m1() / p1
            }
            _ => self.gamma_increment(a, b),
        }
    }

    /// γ(b) − γ(a), accurate even when b − a is tiny against γ.
    pub(crate) fn gamma_increment(&self, a: f64, b: f64) -> f64 {
        if a == b {
            return 0.0;
        }
        if b < a {
            return -self.gamma_increment(b, a);
        }
        match &self.family {
            Family::PowerLaw { c, a: p } if a >= self.x_floor => {
                let e = p + 1.0;
                if a == 0.0 {
                    2.0 * c * pow(b, e) / e
                } else {
                    2.0 * c / e * pow(a, e) * (e * ((b - a) / a).ln_1p()).exp_m1()
                }
            }
            Family::PowerLaw { .. } if b > self.x_floor => {
                self.gamma_increment(a, self.x_floor) + self.gamma_increment(self.x_floor, b)
            }
            Family::ExpPoly { coeffs } if coeffs.len() <= 2 => {
                let p0 = coeffs[0];
                let p1 = coeffs.get(1).copied().unwrap_or(0.0);
                if p1 == 0.0 {
                    2.0 * p0.exp() * (b - a)
                } else {
                    2.0 * (p0 + p1 * a).exp() * (p1 * (b - a)).exp_m1() / p1
                }
            }
            Family::Custom { spline } => 2.0 * spline.integral(a, b),
            _ => {
                let q = integrate(|s| self.q(s), a, b, 1e-13, 0.0);
                2.0 * q.value
            }
        }
    }

    /// R_k(x) = q(x)^k ∫_x^∞ q^{-k}, when the family admits an exact or
    /// numerically exact evaluation.
    pub fn tail_ratio(&self, k: u32, x: f64) -> Option<f64> {
        let kf = k as f64;
        match &self.family {
            Family::PowerLaw { a, .. } if x >= self.x_floor && x > 0.0 => Some(x / (kf * a - 1.0)),
            Family::ExpPoly { coeffs } => {
                let deg = coeffs.iter().rposition(|c| *c != 0.0).unwrap_or(0);
                if deg == 0 || coeffs[deg] <= 0.0 {
                    return None;
                }
                if deg == 1 {
                    return Some(1.0 / (kf * coeffs[1]));
                }
                let (px, dpx) = poly(coeffs, x);
                if dpx <= 0.0 {
                    return None;
                }
                let mut len = 1.0 / (kf * dpx);
                while kf * (poly(coeffs, x + len).0 - px) < 40.0 {
                    len *= 2.0;
                }
                let f = |u: f64| (-kf * (poly(coeffs, x + u).0 - px)).exp();
                let mut total = 0.0;
                let mut lo = 0.0;
                let mut hi = 1.0 / (kf * dpx);
                while lo < 2.0 * len {
                    total += integrate(f, lo, hi, 1e-13, 0.0).value;
                    lo = hi;
                    hi *= 2.0;
                }
                Some(total)
            }
            _ => None,
        }
    }

    /// log Λ(x); −∞ at x = 0.
    pub fn log_scale(&self, x: f64) -> Result<f64> {
        if !(x >= 0.0 && x.is_finite()) {
            return Err(domain("x", x, "scale function is defined on [0, inf)"));
        }
        if x == 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
        let gx = self.gamma(x)?;
        let qx = self.q(x);
        let width = if qx > 0.0 { (1.0 / (2.0 * qx)).min(x) } else { x };
        let inner = crate::hform::layered_integral(|u| (self.gamma_offset(x, -u)).exp(), 0.0, x, false, width)?;
        Ok(gx + inner.ln())
    }

    /// Λ(x) = ∫_0^x e^γ, or `Overflow` carrying log Λ when it is not representable.
    pub fn scale(&self, x: f64) -> Result<f64> {
        let l = self.log_scale(x)?;
        if l > f64::MAX.ln() {
            return Err(Error::Overflow { log_value: l });
        }
        Ok(l.exp())
    }
}

fn pow(x: f64, a: f64) -> f64 {
    if a.fract() == 0.0 && a.abs() < 64.0 {
        x.powi(a as i32)
    } else {
        x.powf(a)
    }
}

/// Polynomial value and derivative by Horner's rule.
fn poly(coeffs: &[f64], x: f64) -> (f64, f64) {
    let mut p = 0.0;
    let mut dp = 0.0;
    for c in coeffs.iter().rev() {
        dp = dp * x + p;
        p = p * x + c;
    }
    (p, dp)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad_model() -> DriftModel {
        DriftModel::power_law(1.0, 2.0).unwrap()
    }

    #[test]
    fn drift_values() {
        assert_eq!(quad_model().eval_drift(3.0).unwrap(), (9.0, 6.0));
        assert_eq!(quad_model().eval_drift(10.0).unwrap(), (100.0, 20.0));
        let e = DriftModel::exp_poly(vec![0.0, 1.0]).unwrap();
        assert_eq!(e.eval_drift(0.0).unwrap(), (1.0, 1.0));
        assert!(quad_model().eval_drift(-1.0).is_err());
        assert!(quad_model().eval_drift(f64::NAN).is_err());
    }

    #[test]
    fn derivative_matches_finite_differences() {
        let models = [
            quad_model(),
            DriftModel::power_law(2.0, 2.5).unwrap().with_floor(0.7).unwrap(),
            DriftModel::exp_poly(vec![0.1, 0.5, 0.2]).unwrap(),
        ];
        for m in &models {
            for i in 1..60 {
                let x = 0.05 + i as f64 * 0.1;
                let h = 1e-6 * x.max(1.0);
                let fd = (m.q(x + h) - m.q(x - h)) / (2.0 * h);
                let (_, qp) = m.qq(x);
                assert!(
                    (fd - qp).abs() <= 1e-6 * qp.abs().max(1.0),
                    "{m:?} at {x}: {fd} vs {qp}"
                );
            }
        }
    }

    #[test]
    fn gamma_values() {
        let m = quad_model();
        assert_eq!(m.gamma(0.0).unwrap(), 0.0);
        assert!((m.gamma(2.0).unwrap() - 16.0 / 3.0).abs() < 1e-13);
        let one = DriftModel::exp_poly(vec![0.0]).unwrap();
        assert!((one.gamma(5.0).unwrap() - 10.0).abs() < 1e-13);
    }

    #[test]
    fn gamma_quadrature_matches_closed_forms() {
        let models = [
            quad_model(),
            DriftModel::power_law(0.5, 3.0).unwrap(),
            DriftModel::power_law(1.0, 2.0).unwrap().with_floor(1.0).unwrap(),
            DriftModel::exp_poly(vec![0.3, 0.8]).unwrap(),
        ];
        for m in &models {
            for x in [0.3, 1.0, 2.5, 7.0, 20.0] {
                if let Some(c) = m.gamma_closed_form(x) {
                    let q = m.gamma_by_quadrature(x);
                    assert!((c - q).abs() <= 1e-8 * c.abs(), "{m:?} {x}: {c} vs {q}");
                }
            }
        }
    }

    #[test]
    fn flattening_shifts_gamma_by_a_constant() {
        let flat = DriftModel::power_law(1.0, 2.0).unwrap().with_floor(1.0).unwrap();
        let plain = quad_model();
        let corr = flat.flattening_correction();
        // ∫_0^1 e^{(x²−1)} dx − 1/3, doubled
        let expect = 2.0 * (integrate(|s| (s * s - 1.0).exp(), 0.0, 1.0, 1e-15, 0.0).value - 1.0 / 3.0);
        assert!((corr - expect).abs() < 1e-12);
        for x in [1.0, 2.0, 5.0] {
            let d = flat.gamma(x).unwrap() - plain.gamma(x).unwrap();
            assert!((d - corr).abs() < 1e-10);
        }
    }

    #[test]
    fn gamma_increment_is_accurate_for_short_intervals() {
        let m = quad_model();
        let a = 1000.0;
        let b = 1000.0 + 1e-9;
        let d = b - a;
        let exact = 2.0 * 1e6 * d + 2.0 * 1000.0 * d * d;
        assert!((m.gamma_increment(a, b) - exact).abs() < 1e-12 * exact);
    }

    #[test]
    fn scale_function_values() {
        let one = DriftModel::exp_poly(vec![0.0]).unwrap();
        let expect = (2f64.exp() - 1.0) / 2.0;
        assert!((one.scale(1.0).unwrap() - expect).abs() < 1e-10 * expect);
        assert_eq!(one.scale(0.0).unwrap(), 0.0);
        let m = quad_model();
        let r = (m.log_scale(3.0).unwrap() - m.log_scale(4.0).unwrap()).exp();
        assert!(r > 0.0 && r < 1.0);
        match m.scale(20.0) {
            Err(Error::Overflow { log_value }) => assert!(log_value > 5000.0),
            other => panic!("expected overflow, got {other:?}"),
        }
    }

    #[test]
    fn tail_ratios_match_closed_forms() {
        let m = quad_model();
        // q^3 ∫ q^-3 = x^6 · x^-5/5
        assert!((m.tail_ratio(3, 10.0).unwrap() - 2.0).abs() < 1e-14);
        let e = DriftModel::exp_poly(vec![0.0, 2.0]).unwrap();
        assert!((e.tail_ratio(2, 3.0).unwrap() - 0.25).abs() < 1e-14);
        // x² + x: compare the numeric tail with a direct integral
        let g = DriftModel::exp_poly(vec![0.0, 1.0, 1.0]).unwrap();
        let x: f64 = 2.0;
        let q = g.q(x);
        let direct = integrate(|s| 1.0 / g.q(s), x, 12.0, 1e-14, 0.0).value * q;
        assert!((g.tail_ratio(1, x).unwrap() - direct).abs() < 1e-10 * direct);
    }
}
