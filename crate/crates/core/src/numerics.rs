//! Quadrature rules, Hermite panels, splines and small helpers shared by the
//! table builders, the simulators and the spectral solver.

use std::sync::OnceLock;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// One 15-point Kronrod sweep: (estimate, error estimate, integral of |f|).
pub fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64, f64) {
    let c = 0.5 * (a + b);
    let hl = 0.5 * (b - a);
    let fc = f(c);
    let mut resk = fc * WGK[7];
    let mut resg = fc * WG[3];
    let mut resabs = resk.abs();
    let mut fv1 = [0.0; 7];
    let mut fv2 = [0.0; 7];
    for j in 0..7 {
        let dx = hl * XGK[j];
        let f1 = f(c - dx);
        let f2 = f(c + dx);
        fv1[j] = f1;
        fv2[j] = f2;
        resk += WGK[j] * (f1 + f2);
        resabs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            resg += WG[j / 2] * (f1 + f2);
        }
    }
    let mean = 0.5 * resk;
    let mut resasc = WGK[7] * (fc - mean).abs();
    for j in 0..7 {
        resasc += WGK[j] * ((fv1[j] - mean).abs() + (fv2[j] - mean).abs());
    }
    let result = resk * hl;
    let resabs = resabs * hl.abs();
    let resasc = resasc * hl.abs();
    let mut err = ((resk - resg) * hl).abs();
    if resasc != 0.0 && err != 0.0 {
        err = resasc * (200.0 * err / resasc).powf(1.5).min(1.0);
    }
    if resabs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        err = err.max(50.0 * f64::EPSILON * resabs);
    }
    (result, err, resabs)
}

/// Outcome of a globally adaptive integration.
#[derive(Debug, Clone, Copy)]
pub struct Quadrature {
    pub value: f64,
    pub error: f64,
    pub converged: bool,
}

/// Globally adaptive Gauss–Kronrod integration with bisection of the worst interval.
pub fn integrate<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, rel: f64, abs: f64) -> Quadrature {
    if a == b {
        return Quadrature {
            value: 0.0,
            error: 0.0,
            converged: true,
        };
    }
    if b < a {
        let q = integrate(f, b, a, rel, abs);
        return Quadrature { value: -q.value, ..q };
    }
    const LIMIT: usize = 400;
    let (v, e, _) = gk15(&mut f, a, b);
    let mut segs = vec![(a, b, v, e)];
    let mut total = v;
    let mut err = e;
    while err > abs.max(rel * total.abs()) {
        if segs.len() >= LIMIT {
            return Quadrature {
                value: total,
                error: err,
                converged: false,
            };
        }
        let (idx, _) = segs
            .iter()
            .enumerate()
            .fold((0, -1.0), |best, (i, s)| if s.3 > best.1 { (i, s.3) } else { best });
        let (sa, sb, sv, se) = segs.swap_remove(idx);
        let mid = 0.5 * (sa + sb);
        if mid <= sa || mid >= sb {
            return Quadrature {
                value: total,
                error: err,
                converged: false,
            };
        }
        let (v1, e1, _) = gk15(&mut f, sa, mid);
        let (v2, e2, _) = gk15(&mut f, mid, sb);
        total += v1 + v2 - sv;
        err += e1 + e2 - se;
        segs.push((sa, mid, v1, e1));
        segs.push((mid, sb, v2, e2));
    }
    Quadrature {
        value: total,
        error: err,
        converged: true,
    }
}

fn legendre_rule(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut t = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, t);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * t * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let dp = n as f64 * (t * p1 - p0) / (t * t - 1.0);
            let dt = p1 / dp;
            t -= dt;
            if dt.abs() < 1e-16 {
                let (mut p0, mut p1) = (1.0, t);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * t * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                let dp = n as f64 * (t * p1 - p0) / (t * t - 1.0);
                x[i] = t;
                w[i] = 2.0 / ((1.0 - t * t) * dp * dp);
                break;
            }
        }
    }
    (x, w)
}

/// Gauss–Legendre nodes and weights on [-1, 1] for the supported orders 3, 8 and 10.
pub fn gauss_legendre(n: usize) -> &'static (Vec<f64>, Vec<f64>) {
    static G3: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    static G8: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    static G10: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    match n {
        3 => G3.get_or_init(|| legendre_rule(3)),
        8 => G8.get_or_init(|| legendre_rule(8)),
        10 => G10.get_or_init(|| legendre_rule(10)),
        _ => panic!("unsupported Gauss-Legendre order {n}"),
    }
}

/// Fixed-order Gauss–Legendre integral of `f` over [a, b].
pub fn gl_integrate<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, n: usize) -> f64 {
    let (x, w) = gauss_legendre(n);
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    x.iter().zip(w).map(|(xi, wi)| wi * f(c + h * xi)).sum::<f64>() * h
}

/// Cubic Hermite panel on [a, b] with end values and end derivatives.
#[derive(Debug, Clone, Copy)]
pub struct Hermite {
    pub a: f64,
    pub b: f64,
    pub fa: f64,
    pub fb: f64,
    pub da: f64,
    pub db: f64,
}

impl Hermite {
    pub fn eval(&self, x: f64) -> f64 {
        let h = self.b - self.a;
        let t = (x - self.a) / h;
        let s = 1.0 - t;
        (1.0 + 2.0 * t) * s * s * self.fa + t * s * s * h * self.da + t * t * (3.0 - 2.0 * t) * self.fb
            - t * t * s * h * self.db
    }

    pub fn deriv(&self, x: f64) -> f64 {
        let h = self.b - self.a;
        let t = (x - self.a) / h;
        6.0 * t * (t - 1.0) / h * (self.fa - self.fb)
            + (3.0 * t * t - 4.0 * t + 1.0) * self.da
            + (3.0 * t * t - 2.0 * t) * self.db
    }

    pub fn integral(&self) -> f64 {
        let h = self.b - self.a;
        h * 0.5 * (self.fa + self.fb) + h * h * (self.da - self.db) / 12.0
    }

    /// Integral of the cubic over [from, to] (exact).
    pub fn integral_between(&self, from: f64, to: f64) -> f64 {
        gl_integrate(|x| self.eval(x), from, to, 3)
    }
}

/// Piecewise cubic Hermite function on a node set.
#[derive(Debug, Clone, Default)]
pub struct Curve {
    pub x: Vec<f64>,
    pub f: Vec<f64>,
    pub d: Vec<f64>,
}

impl Curve {
    pub fn new(x: Vec<f64>, f: Vec<f64>, d: Vec<f64>) -> Self {
        debug_assert!(x.len() == f.len() && x.len() == d.len());
        Curve { x, f, d }
    }

    /// Index i with x[i] <= t <= x[i+1], clamped to the node range.
    pub fn locate(&self, t: f64) -> usize {
        locate(&self.x, t)
    }

    pub fn panel(&self, i: usize) -> Hermite {
        Hermite {
            a: self.x[i],
            b: self.x[i + 1],
            fa: self.f[i],
            fb: self.f[i + 1],
            da: self.d[i],
            db: self.d[i + 1],
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        let i = self.locate(t);
        if t == self.x[i] {
            return self.f[i];
        }
        self.panel(i).eval(t)
    }

    pub fn deriv(&self, t: f64) -> f64 {
        let i = self.locate(t);
        self.panel(i).deriv(t)
    }
}

pub fn locate(x: &[f64], t: f64) -> usize {
    let n = x.len();
    if n < 2 || t <= x[0] {
        return 0;
    }
    if t >= x[n - 1] {
        return n - 2;
    }
    match x.binary_search_by(|v| v.partial_cmp(&t).unwrap()) {
        Ok(i) => i.min(n - 2),
        Err(i) => i - 1,
    }
}

/// Natural cubic spline with linear extrapolation beyond the end knots.
#[derive(Debug, Clone, PartialEq)]
pub struct CubicSpline {
    x: Vec<f64>,
    y: Vec<f64>,
    m: Vec<f64>,
}

impl CubicSpline {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Option<Self> {
        let n = x.len();
        if n < 2 || y.len() != n || x.windows(2).any(|w| !(w[1] > w[0])) {
            return None;
        }
        let mut m = vec![0.0; n];
        if n > 2 {
            let mut c = vec![0.0; n];
            let mut r = vec![0.0; n];
            for i in 1..n - 1 {
                let h0 = x[i] - x[i - 1];
                let h1 = x[i + 1] - x[i];
                let diag = 2.0 * (h0 + h1);
                let rhs = 6.0 * ((y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0);
                let denom = diag - h0 * c[i - 1];
                c[i] = h1 / denom;
                r[i] = (rhs - h0 * r[i - 1]) / denom;
            }
            for i in (1..n - 1).rev() {
                m[i] = r[i] - c[i] * m[i + 1];
            }
        }
        Some(CubicSpline { x, y, m })
    }

    pub fn knots(&self) -> &[f64] {
        &self.x
    }

    pub fn values(&self) -> &[f64] {
        &self.y
    }

    fn end_slope(&self, left: bool) -> f64 {
        let n = self.x.len();
        if left {
            let h = self.x[1] - self.x[0];
            (self.y[1] - self.y[0]) / h - h * (2.0 * self.m[0] + self.m[1]) / 6.0
        } else {
            let h = self.x[n - 1] - self.x[n - 2];
            (self.y[n - 1] - self.y[n - 2]) / h + h * (self.m[n - 2] + 2.0 * self.m[n - 1]) / 6.0
        }
    }

    /// Value and first derivative.
    pub fn eval(&self, t: f64) -> (f64, f64) {
        let n = self.x.len();
        if t < self.x[0] {
            let s = self.end_slope(true);
            return (self.y[0] + s * (t - self.x[0]), s);
        }
        if t > self.x[n - 1] {
            let s = self.end_slope(false);
            return (self.y[n - 1] + s * (t - self.x[n - 1]), s);
        }
        let i = locate(&self.x, t);
        let h = self.x[i + 1] - self.x[i];
        let a = (self.x[i + 1] - t) / h;
        let b = (t - self.x[i]) / h;
        let v = a * self.y[i]
            + b * self.y[i + 1]
            + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]) * h * h / 6.0;
        let d = (self.y[i + 1] - self.y[i]) / h
            + ((1.0 - 3.0 * a * a) * self.m[i] + (3.0 * b * b - 1.0) * self.m[i + 1]) * h / 6.0;
        (v, d)
    }

    /// ∫_a^b of the spline, exact piece by piece.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        if b < a {
            return -self.integral(b, a);
        }
        let mut total = 0.0;
        let mut lo = a;
        while lo < b {
            let hi = match self.x.iter().find(|k| **k > lo) {
                Some(k) => k.min(b),
                None => b,
            };
            total += gl_integrate(|t| self.eval(t).0, lo, hi, 3);
            lo = hi;
        }
        total
    }
}

/// Aitken's delta-squared extrapolation of three successive estimates.
pub fn aitken(s0: f64, s1: f64, s2: f64) -> f64 {
    let d1 = s1 - s0;
    let d2 = s2 - s1;
    let denom = d2 - d1;
    if denom.abs() <= 1e-14 * (s2.abs() + d1.abs() + d2.abs()) || d2 == 0.0 {
        return s2;
    }
    let ratio = d2 / d1;
    if !(ratio.is_finite()) || ratio.abs() >= 1.0 {
        return s2;
    }
    s2 - d2 * d2 / denom
}

/// Running sum of signed terms held in log-magnitude form.
#[derive(Debug, Clone, Copy)]
pub struct SignedLogSum {
    log_scale: f64,
    acc: f64,
    log_max_term: f64,
}

impl Default for SignedLogSum {
    fn default() -> Self {
        SignedLogSum {
            log_scale: f64::NEG_INFINITY,
            acc: 0.0,
            log_max_term: f64::NEG_INFINITY,
        }
    }
}

impl SignedLogSum {
    pub fn add(&mut self, sign: f64, log_mag: f64) {
        if sign == 0.0 || log_mag == f64::NEG_INFINITY {
            return;
        }
        self.log_max_term = self.log_max_term.max(log_mag);
        if log_mag > self.log_scale {
            self.acc = self.acc * (self.log_scale - log_mag).exp() + sign.signum();
            self.log_scale = log_mag;
        } else {
            self.acc += sign.signum() * (log_mag - self.log_scale).exp();
        }
    }

    pub fn sign(&self) -> f64 {
        if self.acc == 0.0 {
            0.0
        } else {
            self.acc.signum()
        }
    }

    pub fn log_abs(&self) -> f64 {
        if self.acc == 0.0 {
            f64::NEG_INFINITY
        } else {
            self.log_scale + self.acc.abs().ln()
        }
    }

    pub fn log_max_term(&self) -> f64 {
        self.log_max_term
    }

    pub fn value(&self) -> f64 {
        self.sign() * self.log_abs().exp()
    }
}

/// log(e^a + e^b) without overflow.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

pub fn factorial(n: usize) -> f64 {
    (1..=n).fold(1.0, |acc, i| acc * i as f64)
}

/// Raw moments from cumulants: mu_n = sum_j C(n-1, j-1) kappa_j mu_{n-j}, with kappa[0] = kappa_1.
pub fn moments_from_cumulants(kappa: &[f64]) -> Vec<f64> {
    let n = kappa.len();
    let mut mu = vec![1.0; n + 1];
    for k in 1..=n {
        mu[k] = (1..=k).map(|j| binomial(k - 1, j - 1) * kappa[j - 1] * mu[k - j]).sum();
    }
    mu
}

/// Ordinary least squares line fit: (slope, intercept, r^2).
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my) * (v - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, intercept, r2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        for n in [3, 8, 10] {
            let deg = 2 * n - 1;
            let v = gl_integrate(|x| x.powi(deg as i32 - 1) + 1.0, 0.0, 2.0, n);
            let exact = 2f64.powi(deg as i32) / deg as f64 + 2.0;
            assert!((v - exact).abs() < 1e-12 * exact, "n={n}: {v} vs {exact}");
        }
    }

    #[test]
    fn adaptive_quadrature_handles_boundary_layer() {
        let q = integrate(|x| (-1e3 * x).exp(), 0.0, 1.0, 1e-12, 0.0);
        assert!(q.converged);
        assert!((q.value - 1e-3).abs() < 1e-14, "{q:?}");
    }

    #[test]
    fn spline_integral_is_exact() {
        let x: Vec<f64> = (0..6).map(|i| i as f64 * 0.7).collect();
        let y: Vec<f64> = x.iter().map(|v| (v * 1.3).sin() + v).collect();
        let s = CubicSpline::new(x, y).unwrap();
        for (a, b) in [(0.1, 3.2), (-1.0, 5.0), (1.0, 1.0 + 1e-9), (2.0, 0.5)] {
            let reference = integrate(|t| s.eval(t).0, a, b, 1e-15, 0.0).value;
            assert!(
                (s.integral(a, b) - reference).abs() <= 1e-13 * reference.abs().max(1e-9),
                "{a} {b} {} {reference}",
                s.integral(a, b)
            );
        }
    }

    #[test]
    fn hermite_reproduces_cubics() {
        let f = |x: f64| x * x * x - 2.0 * x + 1.0;
        let d = |x: f64| 3.0 * x * x - 2.0;
        let p = Hermite {
            a: 0.5,
            b: 2.0,
            fa: f(0.5),
            fb: f(2.0),
            da: d(0.5),
            db: d(2.0),
        };
        assert!((p.eval(1.3) - f(1.3)).abs() < 1e-13);
        assert!((p.deriv(1.3) - d(1.3)).abs() < 1e-12);
        let exact = |x: f64| x.powi(4) / 4.0 - x * x + x;
        assert!((p.integral() - (exact(2.0) - exact(0.5))).abs() < 1e-13);
        assert!((p.integral_between(0.7, 1.1) - (exact(1.1) - exact(0.7))).abs() < 1e-13);
    }

    #[test]
    fn spline_interpolates_and_extrapolates_linearly() {
        let x: Vec<f64> = (0..11).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        let s = CubicSpline::new(x, y).unwrap();
        let (v, d) = s.eval(3.7);
        assert!((v - 8.4).abs() < 1e-12 && (d - 2.0).abs() < 1e-12);
        let (v, d) = s.eval(12.0);
        assert!((v - 25.0).abs() < 1e-12 && (d - 2.0).abs() < 1e-12);
    }

    #[test]
    fn signed_log_sum_matches_direct_sum() {
        let terms: [f64; 5] = [3.0, -1.5, 0.25, -0.125, 1e-3];
        let mut s = SignedLogSum::default();
        for t in terms {
            s.add(t.signum(), f64::abs(t).ln());
        }
        let direct: f64 = terms.iter().sum();
        assert!((s.value() - direct).abs() < 1e-14);
    }

    #[test]
    fn cumulants_of_exponential_give_factorial_moments() {
        let kappa: Vec<f64> = (1..=5).map(|n| factorial(n - 1)).collect();
        let mu = moments_from_cumulants(&kappa);
        for n in 0..=5 {
            assert!((mu[n] - factorial(n)).abs() < 1e-12);
        }
    }

    #[test]
    fn aitken_accelerates_geometric_sequence() {
        let s = |k: i32| 2.0 + 0.5f64.powi(k);
        assert!((aitken(s(1), s(2), s(3)) - 2.0).abs() < 1e-14);
    }
}
