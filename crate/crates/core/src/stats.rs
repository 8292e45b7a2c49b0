//! Monte Carlo checks of the limit theorems: LLN ratios, CLT and fluctuation
//! KS tests, exponential moments and exponential tail-rate fits.

use std::fmt;
use std::io::{self, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{domain, Error, Result};
use crate::model::DriftModel;
use crate::numerics::linear_fit;
use crate::quad::PotentialTables;
use crate::sde::{simulate_from_infinity, DescentConfig, StopRule};

/// What a report measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantity {
    LlnRatio,
    CltKs,
    FluctKs,
    TailRate,
    Moment,
}

impl fmt::Display for Quantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Quantity::LlnRatio => "lln_ratio",
            Quantity::CltKs => "clt_ks",
            Quantity::FluctKs => "fluct_ks",
            Quantity::TailRate => "tail_rate",
            Quantity::Moment => "moment",
        })
    }
}

/// Declared acceptance rule of a report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Tolerance {
    /// |estimate − reference| ≤ n_se·se + slack.
    Band { n_se: f64, slack: f64 },
    /// ks_stat ≤ threshold.
    KsAtMost(f64),
    /// |estimate/reference − 1| ≤ rel.
    Relative(f64),
    /// lo ≤ estimate ≤ hi.
    Interval { lo: f64, hi: f64 },
}

/// One Monte Carlo estimate with its ground truth and verdict.
#[derive(Debug, Clone, PartialEq)]
pub struct McReport {
    pub quantity: Quantity,
    pub estimate: f64,
    pub se: f64,
    pub n: usize,
    pub reference: f64,
    pub ks_stat: Option<f64>,
    pub tolerance: Tolerance,
    pub pass: bool,
    pub dt: f64,
    pub seed: u64,
    /// The level z or the time t the report is about.
    pub param: f64,
    pub note: Option<String>,
}

impl McReport {
    #[allow(clippy::too_many_arguments)]
    fn new(
        quantity: Quantity,
        estimate: f64,
        se: f64,
        n: usize,
        reference: f64,
        ks_stat: Option<f64>,
        tolerance: Tolerance,
        proto: &McProtocol,
        param: f64,
    ) -> Self {
        let mut r = McReport {
            quantity,
            estimate,
            se,
            n,
            reference,
            ks_stat,
            tolerance,
            pass: false,
            dt: proto.dt,
            seed: proto.seed,
            param,
            note: None,
        };
        r.pass = r.judge();
        r
    }

    /// The verdict recomputed from the stored fields.
    pub fn judge(&self) -> bool {
        match self.tolerance {
            Tolerance::Band { n_se, slack } => (self.estimate - self.reference).abs() <= n_se * self.se + slack,
            Tolerance::KsAtMost(th) => self.ks_stat.is_some_and(|k| k <= th),
            Tolerance::Relative(rel) => (self.estimate / self.reference - 1.0).abs() <= rel,
            Tolerance::Interval { lo, hi } => self.estimate >= lo && self.estimate <= hi,
        }
    }
}

/// Sampling parameters shared by the checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McProtocol {
    pub n_paths: usize,
    pub dt: f64,
    /// m-level of the start point for the descent from infinity.
    pub delta: f64,
    pub seed: u64,
    /// Fixed KS pass threshold replacing the calibrated one.
    pub ks_threshold: Option<f64>,
}

impl McProtocol {
    pub fn new(n_paths: usize, dt: f64, seed: u64) -> Self {
        McProtocol {
            n_paths,
            dt,
            delta: 1e-3,
            seed,
            ks_threshold: None,
        }
    }

    pub fn with_ks_threshold(mut self, threshold: f64) -> Self {
        self.ks_threshold = Some(threshold);
        self
    }

    pub fn with_delta(mut self, delta: f64) -> Self {
        self.delta = delta;
        self
    }
}

/// Sample mean and standard error.
pub fn mean_se(x: &[f64]) -> Result<(f64, f64)> {
    if x.len() < 2 {
        return Err(Error::InsufficientSample { n: x.len(), need: 2 });
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}

/// sup_x |F_n(x) − F(x)| by the sorted-sample formula.
pub fn ks_statistic<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::InsufficientSample {
            n: samples.len(),
            need: 2,
        });
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let mut d: f64 = 0.0;
    for (i, x) in s.iter().enumerate() {
        let f = cdf(*x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    Ok(d)
}

pub fn normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

/// P(χ²_dof > stat).
pub fn chi_square_p_value(stat: f64, dof: f64) -> f64 {
    match ChiSquared::new(dof) {
        Ok(c) => c.sf(stat),
        Err(_) => f64::NAN,
    }
}

/// Pearson χ² of observed counts against expected counts; bins with expected
/// count below 5 are merged into their right neighbour. Returns (stat, dof).
pub fn chi_square(observed: &[f64], expected: &[f64]) -> Result<(f64, f64)> {
    if observed.len() != expected.len() || observed.is_empty() {
        return Err(domain(
            "bins",
            observed.len() as f64,
            "observed and expected differ in length",
        ));
    }
    let (mut o, mut e) = (0.0, 0.0);
    let mut stat = 0.0;
    let mut bins = 0usize;
    for (oi, ei) in observed.iter().zip(expected) {
        o += oi;
        e += ei;
        if e >= 5.0 {
            stat += (o - e) * (o - e) / e;
            bins += 1;
            o = 0.0;
            e = 0.0;
        }
    }
    if e > 0.0 {
        stat += (o - e) * (o - e) / e;
        bins += 1;
    }
    if bins < 2 {
        return Err(Error::InsufficientSample { n: bins, need: 2 });
    }
    Ok((stat, (bins - 1) as f64))
}

/// 5% KS critical value.
fn ks_critical(n: usize) -> f64 {
    1.36 / (n as f64).sqrt()
}

/// Euler time bias of a descent from x* to z, (dt/2)·log(q(x*)/q(z)).
fn euler_time_bias(model: &DriftModel, x_star: f64, z: f64, dt: f64) -> f64 {
    let (a, b) = (model.q(x_star), model.q(z));
    if a > 0.0 && b > 0.0 {
        0.5 * dt * (a / b).ln().abs()
    } else {
        0.0
    }
}

fn descent(
    model: &DriftModel,
    tables: &PotentialTables,
    zs: &[f64],
    proto: &McProtocol,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let z_min = zs.iter().cloned().fold(f64::INFINITY, f64::min);
    let m = tables.lyapunov_m(z_min)?;
    let sd = tables.variance(z_min)?.sqrt();
    let cfg = DescentConfig::new(
        proto.delta,
        proto.dt,
        4.0 * m + 40.0 * sd + 1.0,
        proto.n_paths,
        proto.seed,
    );
    let run = simulate_from_infinity(model, tables, &cfg, zs)?;
    let times = zs
        .iter()
        .map(|&z| {
            let t = run.hitting_times(z);
            if t.len() < run.paths.len() {
                return Err(Error::InsufficientSample {
                    n: t.len(),
                    need: run.paths.len(),
                });
            }
            Ok(t)
        })
        .collect::<Result<_>>()?;
    Ok((run.x_star, times))
}

/// Descent times T_z from infinity for one level.
pub fn descent_times(model: &DriftModel, tables: &PotentialTables, z: f64, proto: &McProtocol) -> Result<Vec<f64>> {
    Ok(descent(model, tables, &[z], proto)?.1.remove(0))
}

/// Mean of T_z/m(z) for each z against 1.
pub fn lln_check(
    model: &DriftModel,
    tables: &PotentialTables,
    zs: &[f64],
    proto: &McProtocol,
) -> Result<Vec<McReport>> {
    let (x_star, times) = descent(model, tables, zs, proto)?;
    zs.iter()
        .zip(times)
        .map(|(&z, t)| {
            let m = tables.lyapunov_m(z)?;
            let ratios: Vec<f64> = t.iter().map(|v| v / m).collect();
            let (mean, se) = mean_se(&ratios)?;
            let slack = (2.0 * proto.delta + euler_time_bias(model, x_star, z, proto.dt)) / m;
            let mut r = McReport::new(
                Quantity::LlnRatio,
                mean,
                se,
                ratios.len(),
                1.0,
                None,
                Tolerance::Band { n_se: 3.0, slack },
                proto,
                z,
            );
            if m < 20.0 * proto.delta {
                r.note = Some("delta-dominated: m(z) < 20 delta".into());
            }
            Ok(r)
        })
        .collect()
}

/// KS of (T_z − m(z))/√Var(z) against the standard normal.
pub fn clt_check(model: &DriftModel, tables: &PotentialTables, z: f64, proto: &McProtocol) -> Result<McReport> {
    Ok(clt_run(model, tables, z, proto)?.0)
}

/// [`clt_check`] together with the standardized samples.
pub fn clt_run(
    model: &DriftModel,
    tables: &PotentialTables,
    z: f64,
    proto: &McProtocol,
) -> Result<(McReport, Vec<f64>)> {
    if proto.n_paths < 2 {
        return Err(Error::InsufficientSample {
            n: proto.n_paths,
            need: 2,
        });
    }
    let var = tables.variance(z)?;
    if !(var > 0.0) {
        return Err(domain("variance", var, "must be positive"));
    }
    let (x_star, mut times) = descent(model, tables, &[z], proto)?;
    let m = tables.lyapunov_m(z)?;
    let sd = var.sqrt();
    let std: Vec<f64> = times.remove(0).iter().map(|t| (t - m) / sd).collect();
    let ks = ks_statistic(&std, normal_cdf)?;
    let (mean, se) = mean_se(&std)?;
    let skew = tables.cumulant(3, z)? / var.powf(1.5);
    let bias = euler_time_bias(model, x_star, z, proto.dt) / sd;
    let threshold = proto
        .ks_threshold
        .unwrap_or(ks_critical(std.len()) + skew.abs() * 0.3989 / 6.0 + bias * 0.3989);
    let report = McReport::new(
        Quantity::CltKs,
        mean,
        se,
        std.len(),
        0.0,
        Some(ks),
        Tolerance::KsAtMost(threshold),
        proto,
        z,
    );
    Ok((report, std))
}

/// KS of standardized exponential samples against the normal law: a control
/// showing the KS test separates non-Gaussian shapes at this sample size.
pub fn exponential_control(n: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let exp = Exp::new(1.0).map_err(|_| domain("rate", 1.0, "invalid"))?;
    let x: Vec<f64> = (0..n).map(|_| exp.sample(&mut rng) - 1.0).collect();
    ks_statistic(&x, normal_cdf)
}

/// KS of (X_t^∞ − m⁻¹(t))·√(Σ/t) against the standard normal, with Σ from the
/// tables unless given.
pub fn fluctuation_check(
    model: &DriftModel,
    tables: &PotentialTables,
    t: f64,
    sigma: Option<f64>,
    proto: &McProtocol,
) -> Result<McReport> {
    Ok(fluctuation_run(model, tables, t, sigma, proto)?.0)
}

/// [`fluctuation_check`] together with the standardized positions.
pub fn fluctuation_run(
    model: &DriftModel,
    tables: &PotentialTables,
    t: f64,
    sigma: Option<f64>,
    proto: &McProtocol,
) -> Result<(McReport, Vec<f64>)> {
    if proto.delta > 0.1 * t {
        return Err(Error::DeltaTooLarge {
            delta: proto.delta,
            reason: format!("need delta <= t/10 = {}", 0.1 * t),
        });
    }
    let sigma = match sigma {
        Some(s) => s,
        None => tables.sigma()?,
    };
    let center = tables.m_inverse(t)?;
    let mut cfg = DescentConfig::new(
        proto.delta,
        proto.dt,
        t - proto.delta + proto.dt,
        proto.n_paths,
        proto.seed,
    );
    cfg.stop = StopRule::Horizon;
    cfg.observe = vec![t];
    let run = simulate_from_infinity(model, tables, &cfg, &[])?;
    let scale = (sigma / t).sqrt();
    let std: Vec<f64> = run
        .observed(0)
        .into_iter()
        .flatten()
        .map(|x| (x - center) * scale)
        .collect();
    let ks = ks_statistic(&std, normal_cdf)?;
    let (mean, se) = mean_se(&std)?;
    let threshold = proto.ks_threshold.unwrap_or(
        ks_critical(std.len()) + euler_time_bias(model, run.x_star, center, proto.dt) * model.q(center) * scale,
    );
    let report = McReport::new(
        Quantity::FluctKs,
        mean,
        se,
        std.len(),
        0.0,
        Some(ks),
        Tolerance::KsAtMost(threshold),
        proto,
        t,
    );
    Ok((report, std))
}

/// Mean of exp(λT_z/m(z)) against e^λ, within `slack` and below 1/(1 − λ).
pub fn exp_moment_check(
    model: &DriftModel,
    tables: &PotentialTables,
    z: f64,
    lambda: f64,
    slack: f64,
    proto: &McProtocol,
) -> Result<McReport> {
    if !(0.0..1.0).contains(&lambda) {
        return Err(domain("lambda", lambda, "need 0 <= lambda < 1"));
    }
    let m = tables.lyapunov_m(z)?;
    let times = descent_times(model, tables, z, proto)?;
    let v: Vec<f64> = times.iter().map(|t| (lambda * t / m).exp()).collect();
    let (mean, se) = mean_se(&v)?;
    let limit = lambda.exp();
    let bound = 1.0 / (1.0 - lambda);
    Ok(McReport::new(
        Quantity::Moment,
        mean,
        se,
        v.len(),
        limit,
        None,
        Tolerance::Interval {
            lo: limit - slack,
            hi: (limit + slack).min(bound),
        },
        proto,
        z,
    ))
}

/// Least-squares line through log P against t: P ≈ intercept·e^{−rate·t}.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailFit {
    pub rate: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Fit of log P against t over the last half of the points.
pub fn tail_rate_fit(points: &[(f64, f64)]) -> Result<TailFit> {
    let good: Vec<(f64, f64)> = points.iter().copied().filter(|(_, p)| *p > 0.0 && *p < 1.0).collect();
    if good.len() < 5 {
        return Err(Error::InsufficientSample { n: good.len(), need: 5 });
    }
    let window = &good[good.len() / 2..];
    let t: Vec<f64> = window.iter().map(|p| p.0).collect();
    let l: Vec<f64> = window.iter().map(|p| p.1.ln()).collect();
    let (slope, icept, r2) = linear_fit(&t, &l);
    if r2 < 0.99 {
        return Err(Error::WindowTooNoisy { r2 });
    }
    Ok(TailFit {
        rate: -slope,
        intercept: icept.exp(),
        r2,
    })
}

/// Empirical P(T > t) over a time grid.
pub fn empirical_survival(times: &[f64], grid: &[f64]) -> Vec<(f64, f64)> {
    let mut s = times.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    grid.iter()
        .map(|&t| {
            let below = s.partition_point(|v| *v <= t);
            (t, (s.len() - below) as f64 / n)
        })
        .collect()
}

/// Maximum-likelihood exponential rate of the excesses T − t0 over T > t0,
/// with its standard error.
pub fn exponential_tail_rate(times: &[f64], t0: f64) -> Result<(f64, f64)> {
    let excess: Vec<f64> = times.iter().filter(|t| **t > t0).map(|t| t - t0).collect();
    if excess.len() < 2 {
        return Err(Error::InsufficientSample {
            n: excess.len(),
            need: 2,
        });
    }
    let n = excess.len() as f64;
    let rate = n / excess.iter().sum::<f64>();
    Ok((rate, rate / n.sqrt()))
}

/// Exponential tail rate of descent times to z beyond t0 against λ₁(z),
/// within `rel` of it.
pub fn tail_rate_check(times: &[f64], t0: f64, lambda1: f64, rel: f64, proto: &McProtocol, z: f64) -> Result<McReport> {
    let (rate, se) = exponential_tail_rate(times, t0)?;
    let mut r = McReport::new(
        Quantity::TailRate,
        rate,
        se,
        times.iter().filter(|t| **t > t0).count(),
        lambda1,
        None,
        Tolerance::Relative(rel),
        proto,
        z,
    );
    r.note = Some(format!("MLE over T > {t0}"));
    Ok(r)
}

/// Report CSV: one row per report with every field.
pub fn write_reports_csv<W: Write>(reports: &[McReport], mut out: W) -> io::Result<()> {
    writeln!(
        out,
        "quantity,param,estimate,se,n,reference,ks_stat,tolerance,pass,dt,seed,note"
    )?;
    for r in reports {
        let tol = match r.tolerance {
            Tolerance::Band { n_se, slack } => format!("band {n_se}se+{slack:e}"),
            Tolerance::KsAtMost(t) => format!("ks<={t:.6}"),
            Tolerance::Relative(t) => format!("rel<={t:e}"),
            Tolerance::Interval { lo, hi } => format!("[{lo:.6} {hi:.6}]"),
        };
        writeln!(
            out,
            "{},{:.16e},{:.16e},{:.16e},{},{:.16e},{},{},{},{:e},{},{}",
            r.quantity,
            r.param,
            r.estimate,
            r.se,
            r.n,
            r.reference,
            r.ks_stat.map(|k| format!("{k:.16e}")).unwrap_or_default(),
            tol,
            r.pass,
            r.dt,
            r.seed,
            r.note.clone().unwrap_or_default()
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ks_of_quantile_grid_and_point_mass() {
        let q: Vec<f64> = (0..100).map(|i| (i as f64 + 0.5) / 100.0).collect();
        let d = ks_statistic(&q, |x| x.clamp(0.0, 1.0)).unwrap();
        assert!(d <= 0.01 + 1e-12);
        let med = vec![0.0; 50];
        assert!((ks_statistic(&med, normal_cdf).unwrap() - 0.5).abs() < 1e-12);
        assert!(matches!(
            ks_statistic(&[1.0], normal_cdf),
            Err(Error::InsufficientSample { .. })
        ));
    }

    #[test]
    fn uniform_samples_pass_ks() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let u: Vec<f64> = (0..10_000).map(|_| rng.random::<f64>()).collect();
        assert!(ks_statistic(&u, |x| x.clamp(0.0, 1.0)).unwrap() < 0.02);
    }

    #[test]
    fn exponential_control_fails_normality() {
        assert!(exponential_control(5000, 3).unwrap() > 0.05);
    }

    #[test]
    fn tail_fit_recovers_rate_and_gates_noise() {
        let pts: Vec<(f64, f64)> = (0..20)
            .map(|i| {
                let t = 0.5 * i as f64;
                (t, 0.4 * (-1.3 * t).exp() + 0.3 * (-6.0 * t).exp())
            })
            .collect();
        let f = tail_rate_fit(&pts).unwrap();
        assert!((f.rate - 1.3).abs() < 1e-3 && (f.intercept / 0.4 - 1.0).abs() < 1e-3);
        let noisy: Vec<(f64, f64)> = (0..10)
            .map(|i| (i as f64, if i % 2 == 0 { 0.5 } else { 0.01 }))
            .collect();
        assert!(matches!(tail_rate_fit(&noisy), Err(Error::WindowTooNoisy { .. })));
        assert!(tail_rate_fit(&pts[..4]).is_err());
    }

    #[test]
    fn chi_square_merges_sparse_bins() {
        let (s, dof) = chi_square(&[10.0, 10.0, 1.0, 1.0], &[10.0, 10.0, 1.0, 1.0]).unwrap();
        assert_eq!(s, 0.0);
        assert_eq!(dof, 2.0);
        assert!((chi_square_p_value(3.84, 1.0) - 0.05).abs() < 1e-3);
    }

    #[test]
    fn report_verdict_is_recomputable() {
        let proto = McProtocol::new(10, 1e-3, 1);
        let r = McReport::new(
            Quantity::Moment,
            1.02,
            0.01,
            10,
            1.0,
            None,
            Tolerance::Band { n_se: 3.0, slack: 0.0 },
            &proto,
            1.0,
        );
        assert!(r.pass && r.judge());
        let mut bad = r.clone();
        bad.estimate = 1.5;
        assert!(!bad.judge());
    }
}
