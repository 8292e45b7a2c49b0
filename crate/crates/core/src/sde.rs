//! Euler–Maruyama simulation of dX = dB − q(X)dt on [0, ∞) with absorption
//! at 0, threshold crossing times, monotone coupling and the descent from
//! infinity.
//!
//! Every path draws its Gaussian increments from its own ChaCha8 stream keyed
//! by (seed, path id), so a batch gives the same numbers serially or in
//! parallel.

use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{domain, Error, Result};
use crate::model::DriftModel;
use crate::quad::PotentialTables;

/// When a path stops before `t_max`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopRule {
    /// Run to `t_max` or absorption.
    Horizon,
    /// Stop once every threshold has been crossed.
    AllHit,
    /// Stop at the first threshold crossing.
    AnyHit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub dt: f64,
    pub t_max: f64,
    /// Keep every k-th state; 0 keeps only the start and the end.
    pub record_every: usize,
    pub stop: StopRule,
    /// Path times at which the state is reported (linear interpolation).
    pub observe: Vec<f64>,
}

impl SimConfig {
    pub fn new(dt: f64, t_max: f64) -> Self {
        SimConfig {
            dt,
            t_max,
            record_every: 0,
            stop: StopRule::Horizon,
            observe: Vec::new(),
        }
    }

    pub fn stop(mut self, stop: StopRule) -> Self {
        self.stop = stop;
        self
    }

    pub fn record_every(mut self, k: usize) -> Self {
        self.record_every = k;
        self
    }

    pub fn observe(mut self, times: Vec<f64>) -> Self {
        self.observe = times;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(domain("dt", self.dt, "must be positive"));
        }
        if !(self.t_max > 0.0) {
            return Err(domain("t_max", self.t_max, "must be positive"));
        }
        Ok(())
    }
}

/// One simulated path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSample {
    pub seed: u64,
    pub path_id: u64,
    pub x0: f64,
    /// Added to every reported time (the mean descent time discarded above x0).
    pub time_offset: f64,
    pub dt: f64,
    pub times: Vec<f64>,
    pub states: Vec<f64>,
    pub absorbed_at: Option<f64>,
    /// (threshold, first crossing time in path time).
    pub hits: Vec<(f64, Option<f64>)>,
    /// State at each requested observation time; `None` past the end of the run.
    pub observed: Vec<Option<f64>>,
    pub end_time: f64,
    pub end_state: f64,
}

impl PathSample {
    /// First crossing of `z`, including the time offset.
    pub fn hit(&self, z: f64) -> Option<f64> {
        self.hits
            .iter()
            .find(|(level, _)| *level == z)
            .and_then(|(_, t)| t.map(|t| t + self.time_offset))
    }
}

fn stream(seed: u64, path_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path_id);
    rng
}

/// Crossing bookkeeping shared by single and coupled runs.
struct Tracker {
    hits: Vec<(f64, Option<f64>)>,
    open: usize,
    observe: Vec<f64>,
    observed: Vec<Option<f64>>,
    next_obs: usize,
    record_every: usize,
    times: Vec<f64>,
    states: Vec<f64>,
    absorbed_at: Option<f64>,
    overshoot: usize,
}

impl Tracker {
    fn new(x0: f64, thresholds: &[f64], cfg: &SimConfig) -> Self {
        let hits: Vec<(f64, Option<f64>)> = thresholds
            .iter()
            .map(|&z| (z, if z == x0 { Some(0.0) } else { None }))
            .collect();
        let open = hits.iter().filter(|h| h.1.is_none()).count();
        let mut observe = cfg.observe.clone();
        observe.sort_by(f64::total_cmp);
        let mut t = Tracker {
            hits,
            open,
            observed: vec![None; observe.len()],
            observe,
            next_obs: 0,
            record_every: cfg.record_every,
            times: vec![0.0],
            states: vec![x0],
            absorbed_at: None,
            overshoot: 0,
        };
        if x0 <= 0.0 {
            t.absorbed_at = Some(0.0);
            t.states[0] = 0.0;
        }
        t.observe_until(0.0, x0, 0.0, x0);
        t
    }

    fn observe_until(&mut self, t0: f64, x0: f64, t1: f64, x1: f64) {
        while self.next_obs < self.observe.len() && self.observe[self.next_obs] <= t1 {
            let s = self.observe[self.next_obs];
            let v = if t1 > t0 {
                x0 + (x1 - x0) * (s - t0) / (t1 - t0)
            } else {
                x1
            };
            self.observed[self.next_obs] = Some(v.max(0.0));
            self.next_obs += 1;
        }
    }

    /// Register the step (t0, x0) → (t1, x1); x1 may be negative.
    fn step(&mut self, k: usize, t0: f64, x0: f64, t1: f64, x1: f64) -> (f64, f64) {
        let (t_end, x_end) = if x1 <= 0.0 {
            let tc = t0 + (t1 - t0) * x0 / (x0 - x1);
            self.absorbed_at = Some(tc);
            (tc, 0.0)
        } else {
            (t1, x1)
        };
        if self.open > 0 {
            for h in self.hits.iter_mut().filter(|h| h.1.is_none()) {
                let z = h.0;
                if (x0 - z) * (x_end - z) <= 0.0 {
                    let frac = if x_end == x0 { 0.0 } else { (z - x0) / (x_end - x0) };
                    h.1 = Some(t0 + frac * (t_end - t0));
                    self.open -= 1;
                }
            }
        }
        self.observe_until(t0, x0, t_end, x_end);
        if self.absorbed_at.is_some() {
            // the absorbed state stays 0 for every later observation
            for v in &mut self.observed[self.next_obs..] {
                *v = Some(0.0);
            }
            self.next_obs = self.observe.len();
        }
        if self.record_every > 0 && (k + 1) % self.record_every == 0 {
            self.times.push(t_end);
            self.states.push(x_end);
        }
        (t_end, x_end)
    }

    fn done(&self, stop: StopRule) -> bool {
        self.absorbed_at.is_some()
            || match stop {
                StopRule::Horizon => false,
                StopRule::AllHit => self.open == 0,
                StopRule::AnyHit => self.open < self.hits.len(),
            }
    }

    /// Guard against the drift overshooting the state in a single step.
    fn check_overshoot(&mut self, x: f64, q: f64, dt: f64) -> Result<()> {
        if q * dt > 0.5 * x && x > 4.0 * dt.sqrt() {
            self.overshoot += 1;
            if self.overshoot >= 3 || q * dt > x {
                return Err(Error::StepTooLarge {
                    x,
                    suggested_dt: x / (4.0 * q),
                });
            }
        } else {
            self.overshoot = 0;
        }
        Ok(())
    }

    fn finish(mut self, seed: u64, path_id: u64, x0: f64, dt: f64, t: f64, x: f64) -> PathSample {
        if self.times.last() != Some(&t) {
            self.times.push(t);
            self.states.push(x);
        }
        PathSample {
            seed,
            path_id,
            x0,
            time_offset: 0.0,
            dt,
            times: self.times,
            states: self.states,
            absorbed_at: self.absorbed_at,
            hits: self.hits,
            observed: self.observed,
            end_time: t,
            end_state: x,
        }
    }
}

/// Simulate one path from `x0` with the stream (seed, path_id).
pub fn simulate_path(
    model: &DriftModel,
    x0: f64,
    cfg: &SimConfig,
    seed: u64,
    path_id: u64,
    thresholds: &[f64],
) -> Result<PathSample> {
    cfg.validate()?;
    if !(x0 >= 0.0 && x0.is_finite()) {
        return Err(domain("x0", x0, "must be finite and >= 0"));
    }
    let mut rng = stream(seed, path_id);
    let mut tr = Tracker::new(x0, thresholds, cfg);
    let sq = cfg.dt.sqrt();
    let (mut t, mut x) = (0.0, x0.max(0.0));
    let mut k = 0usize;
    while !tr.done(cfg.stop) && t < cfg.t_max {
        let h = cfg.dt.min(cfg.t_max - t);
        let q = model.q(x);
        tr.check_overshoot(x, q, h)?;
        let n: f64 = rng.sample(StandardNormal);
        let scale = if h == cfg.dt { sq } else { h.sqrt() };
        let next = x - q * h + scale * n;
        let t_next = if h == cfg.dt {
            (k + 1) as f64 * cfg.dt
        } else {
            cfg.t_max
        };
        (t, x) = tr.step(k, t, x, t_next, next);
        k += 1;
    }
    Ok(tr.finish(seed, path_id, x0, cfg.dt, t, x))
}

/// `n_paths` independent paths (ids 0..n_paths) from `x0`, in id order.
pub fn simulate_paths(
    model: &DriftModel,
    x0: f64,
    cfg: &SimConfig,
    seed: u64,
    n_paths: usize,
    thresholds: &[f64],
) -> Result<Vec<PathSample>> {
    (0..n_paths as u64)
        .into_par_iter()
        .map(|id| simulate_path(model, x0, cfg, seed, id, thresholds))
        .collect()
}

/// Paths from sorted starts driven by one shared noise stream; the pointwise
/// ordering is checked after every step.
pub fn simulate_coupled(
    model: &DriftModel,
    x0s: &[f64],
    cfg: &SimConfig,
    seed: u64,
    thresholds: &[f64],
) -> Result<Vec<PathSample>> {
    cfg.validate()?;
    if x0s.windows(2).any(|w| w[1] < w[0]) {
        return Err(domain("x0s", f64::NAN, "starting points must be sorted"));
    }
    if let Some(bad) = x0s.iter().find(|x| !(**x >= 0.0 && x.is_finite())) {
        return Err(domain("x0", *bad, "must be finite and >= 0"));
    }
    let mut rng = stream(seed, 0);
    let mut trackers: Vec<Tracker> = x0s.iter().map(|&x| Tracker::new(x, thresholds, cfg)).collect();
    let mut xs: Vec<f64> = x0s.to_vec();
    let mut ts = vec![0.0; xs.len()];
    let sq = cfg.dt.sqrt();
    let mut t = 0.0;
    let mut k = 0usize;
    while t < cfg.t_max && !trackers.iter().all(|tr| tr.done(cfg.stop)) {
        let h = cfg.dt.min(cfg.t_max - t);
        let n: f64 = rng.sample(StandardNormal);
        let noise = if h == cfg.dt { sq * n } else { h.sqrt() * n };
        let t_next = if h == cfg.dt {
            (k + 1) as f64 * cfg.dt
        } else {
            cfg.t_max
        };
        for (i, tr) in trackers.iter_mut().enumerate() {
            if tr.done(cfg.stop) {
                continue;
            }
            let q = model.q(xs[i]);
            tr.check_overshoot(xs[i], q, h)?;
            let next = xs[i] - q * h + noise;
            (ts[i], xs[i]) = tr.step(k, t, xs[i], t_next, next);
        }
        t = t_next;
        k += 1;
        // paths halted by the stop rule drop out of the comparison
        let live: Vec<f64> = trackers
            .iter()
            .zip(&xs)
            .filter(|(tr, _)| tr.absorbed_at.is_some() || !tr.done(cfg.stop))
            .map(|(tr, x)| if tr.absorbed_at.is_some() { 0.0 } else { *x })
            .collect();
        if live.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::CouplingViolated { step: k });
        }
    }
    Ok(trackers
        .into_iter()
        .enumerate()
        .map(|(i, tr)| tr.finish(seed, 0, x0s[i], cfg.dt, ts[i], xs[i]))
        .collect())
}

/// Parameters of the descent from infinity.
#[derive(Debug, Clone, PartialEq)]
pub struct DescentConfig {
    /// m-level of the start point x* = m⁻¹(delta).
    pub delta: f64,
    pub dt: f64,
    pub t_max: f64,
    pub n_paths: usize,
    pub base_seed: u64,
    pub stop: StopRule,
    /// Times on the clock started at infinity.
    pub observe: Vec<f64>,
}

impl DescentConfig {
    pub fn new(delta: f64, dt: f64, t_max: f64, n_paths: usize, base_seed: u64) -> Self {
        DescentConfig {
            delta,
            dt,
            t_max,
            n_paths,
            base_seed,
            stop: StopRule::AllHit,
            observe: Vec::new(),
        }
    }
}

/// Paths started at x* whose reported times include the offset delta = m(x*).
#[derive(Debug, Clone)]
pub struct DescentRun {
    pub x_star: f64,
    pub delta: f64,
    /// m(x*)² e^{t_max}: order of the pathwise coupling error with unknown
    /// constants, reported and never asserted.
    pub error_budget: f64,
    pub paths: Vec<PathSample>,
}

impl DescentRun {
    /// Descent times to z from infinity (paths that crossed z).
    pub fn hitting_times(&self, z: f64) -> Vec<f64> {
        self.paths.iter().filter_map(|p| p.hit(z)).collect()
    }

    /// States at the i-th observation time.
    pub fn observed(&self, i: usize) -> Vec<Option<f64>> {
        self.paths
            .iter()
            .map(|p| p.observed.get(i).copied().flatten())
            .collect()
    }
}

pub fn simulate_from_infinity(
    model: &DriftModel,
    tables: &PotentialTables,
    cfg: &DescentConfig,
    thresholds: &[f64],
) -> Result<DescentRun> {
    let m0 = tables.lyapunov_m(0.0)?;
    let m_top = tables.lyapunov_m(tables.x_max())?;
    if !(cfg.delta > 0.0 && cfg.delta < m0) {
        return Err(Error::DeltaTooLarge {
            delta: cfg.delta,
            reason: format!("need 0 < delta < m(0) = {m0}"),
        });
    }
    if cfg.delta < m_top {
        return Err(Error::DeltaTooLarge {
            delta: cfg.delta,
            reason: format!("x* lies beyond x_max; need delta >= m(x_max) = {m_top}"),
        });
    }
    let x_star = tables.m_inverse(cfg.delta)?;
    let sim = SimConfig {
        dt: cfg.dt,
        t_max: cfg.t_max,
        record_every: 0,
        stop: cfg.stop,
        observe: cfg.observe.iter().map(|t| t - cfg.delta).collect(),
    };
    let mut paths = simulate_paths(model, x_star, &sim, cfg.base_seed, cfg.n_paths, thresholds)?;
    for p in &mut paths {
        p.time_offset = cfg.delta;
    }
    Ok(DescentRun {
        x_star,
        delta: cfg.delta,
        error_budget: cfg.delta * cfg.delta * cfg.t_max.exp(),
        paths,
    })
}

/// d_m(x, y) = |m(x) − m(y)| with m(∞) = 0.
pub fn dm_distance(tables: &PotentialTables, x: f64, y: f64) -> Result<f64> {
    let m = |v: f64| {
        if v == f64::INFINITY {
            Ok(0.0)
        } else {
            tables.lyapunov_m(v)
        }
    };
    Ok((m(x)? - m(y)?).abs())
}

/// Monte Carlo estimate and standard error of P_z(T_x < T_lower).
pub fn ruin_probability_mc(
    model: &DriftModel,
    z: f64,
    x: f64,
    lower: f64,
    n_paths: usize,
    dt: f64,
    seed: u64,
) -> Result<(f64, f64)> {
    if !(lower >= 0.0 && lower <= z && z <= x) {
        return Err(domain("z", z, "need 0 <= lower <= z <= x"));
    }
    if z == x {
        return Ok((1.0, 0.0));
    }
    let cfg = SimConfig::new(dt, f64::MAX).stop(StopRule::AnyHit);
    let thresholds = if lower > 0.0 { vec![x, lower] } else { vec![x] };
    let paths = simulate_paths(model, z, &cfg, seed, n_paths, &thresholds)?;
    let wins = paths
        .iter()
        .filter(|p| {
            let up = p.hits[0].1;
            let down = if lower > 0.0 { p.hits[1].1 } else { p.absorbed_at };
            match (up, down) {
                (Some(a), Some(b)) => a < b,
                (Some(_), None) => true,
                _ => false,
            }
        })
        .count();
    let p = wins as f64 / n_paths as f64;
    Ok((p, (p * (1.0 - p) / n_paths as f64).sqrt()))
}

/// CSV with columns path_id, t, x over the recorded states.
pub fn write_paths_csv<W: Write>(paths: &[PathSample], mut out: W) -> io::Result<()> {
    writeln!(out, "path_id,t,x")?;
    for p in paths {
        for (t, x) in p.times.iter().zip(&p.states) {
            writeln!(out, "{},{:.16e},{:.16e}", p.path_id, t + p.time_offset, x)?;
        }
    }
    Ok(())
}

/// CSV with columns path_id, z, t_hit; paths that never crossed z are omitted.
pub fn write_hits_csv<W: Write>(paths: &[PathSample], mut out: W) -> io::Result<()> {
    writeln!(out, "path_id,z,t_hit")?;
    for p in paths {
        for (z, t) in &p.hits {
            if let Some(t) = t {
                writeln!(out, "{},{:.16e},{:.16e}", p.path_id, z, t + p.time_offset)?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::TableOptions;

    fn quadratic() -> DriftModel {
        DriftModel::power_law(1.0, 2.0).unwrap()
    }

    fn zero_drift() -> DriftModel {
        DriftModel::custom(vec![0.0, 1.0, 2.0], vec![0.0, 0.0, 0.0]).unwrap()
    }

    #[test]
    fn start_at_zero_is_absorbed() {
        let p = simulate_path(&quadratic(), 0.0, &SimConfig::new(1e-3, 1.0), 1, 0, &[0.0, 1.0]).unwrap();
        assert_eq!(p.absorbed_at, Some(0.0));
        assert_eq!(p.hits[0].1, Some(0.0));
        assert_eq!(p.hits[1].1, None);
        assert_eq!(p.end_state, 0.0);
    }

    #[test]
    fn seeded_paths_are_reproducible_and_distinct() {
        let cfg = SimConfig::new(1e-3, 0.5).record_every(1);
        let a = simulate_path(&quadratic(), 2.0, &cfg, 9, 3, &[1.0]).unwrap();
        let b = simulate_path(&quadratic(), 2.0, &cfg, 9, 3, &[1.0]).unwrap();
        let c = simulate_path(&quadratic(), 2.0, &cfg, 9, 4, &[1.0]).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.states, c.states);
    }

    #[test]
    fn absorbed_states_stay_zero() {
        let cfg = SimConfig::new(1e-3, 3.0).record_every(1).observe(vec![0.5, 2.9]);
        let paths = simulate_paths(&quadratic(), 0.3, &cfg, 2, 50, &[]).unwrap();
        for p in paths.iter().filter(|p| p.absorbed_at.is_some()) {
            let ta = p.absorbed_at.unwrap();
            assert!(p.times.iter().zip(&p.states).all(|(t, x)| *t < ta || *x == 0.0));
            assert_eq!(p.observed[1], Some(0.0));
        }
        assert!(paths.iter().any(|p| p.absorbed_at.is_some()));
    }

    #[test]
    fn zero_drift_mean_displacement_is_zero() {
        let n = 4000;
        let cfg = SimConfig::new(1e-2, 1.0);
        let paths = simulate_paths(&zero_drift(), 10.0, &cfg, 5, n, &[]).unwrap();
        let mean = paths.iter().map(|p| p.end_state - 10.0).sum::<f64>() / n as f64;
        assert!(mean.abs() < 3.0 * (1.0 / n as f64).sqrt(), "{mean}");
    }

    #[test]
    fn coupled_paths_keep_their_order() {
        let cfg = SimConfig::new(1e-3, 2.0).record_every(1).stop(StopRule::AllHit);
        let same = simulate_coupled(&quadratic(), &[5.0, 5.0], &cfg, 4, &[1.0]).unwrap();
        assert_eq!(same[0].states, same[1].states);
        let pair = simulate_coupled(&quadratic(), &[2.0, 8.0], &cfg, 4, &[1.0]).unwrap();
        let n = pair[0].states.len().min(pair[1].states.len());
        assert!((0..n).all(|i| pair[0].states[i] <= pair[1].states[i]));
        assert!(pair[0].hits[0].1.unwrap() <= pair[1].hits[0].1.unwrap());
        assert!(simulate_coupled(&quadratic(), &[3.0, 2.0], &cfg, 4, &[]).is_err());
    }

    #[test]
    fn hits_are_ordered_by_level() {
        let cfg = SimConfig::new(1e-4, 5.0).stop(StopRule::AllHit);
        let p = simulate_path(&quadratic(), 10.0, &cfg, 7, 0, &[1.0, 2.0, 5.0]).unwrap();
        let t: Vec<f64> = p.hits.iter().map(|h| h.1.unwrap()).collect();
        assert!(t[0] >= t[1] && t[1] >= t[2]);
    }

    #[test]
    fn overshooting_steps_are_refused() {
        let cfg = SimConfig::new(0.1, 1.0);
        match simulate_path(&quadratic(), 100.0, &cfg, 1, 0, &[]) {
            Err(Error::StepTooLarge { suggested_dt, .. }) => assert!(suggested_dt < 0.1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn ruin_with_zero_drift_is_linear() {
        let (p, se) = ruin_probability_mc(&zero_drift(), 3.0, 10.0, 0.0, 4000, 1e-2, 11).unwrap();
        assert!((p - 0.3).abs() < 3.0 * se + 0.01, "{p} ± {se}");
        assert_eq!(
            ruin_probability_mc(&zero_drift(), 4.0, 4.0, 0.0, 10, 1e-2, 1)
                .unwrap()
                .0,
            1.0
        );
    }

    #[test]
    fn dm_distance_is_a_metric() {
        let t = PotentialTables::build(&quadratic(), TableOptions::default()).unwrap();
        assert_eq!(dm_distance(&t, 3.0, 3.0).unwrap(), 0.0);
        assert_eq!(dm_distance(&t, 0.0, f64::INFINITY).unwrap(), t.lyapunov_m(0.0).unwrap());
        let (a, b, c) = (1.0, 7.0, 2.5);
        let ab = dm_distance(&t, a, b).unwrap();
        assert!(ab <= dm_distance(&t, a, c).unwrap() + dm_distance(&t, c, b).unwrap() + 1e-15);
        assert_eq!(ab, dm_distance(&t, b, a).unwrap());
    }

    #[test]
    fn descent_start_sits_at_delta() {
        let m = quadratic();
        let t = PotentialTables::build(&m, TableOptions::default()).unwrap();
        let cfg = DescentConfig::new(0.05, 1e-5, 1.0, 8, 3);
        let run = simulate_from_infinity(&m, &t, &cfg, &[5.0]).unwrap();
        assert!((dm_distance(&t, run.x_star, f64::INFINITY).unwrap() - 0.05).abs() < 1e-12);
        assert!(run.hitting_times(5.0).iter().all(|v| *v > 0.05));
        let bad = DescentConfig::new(10.0, 1e-5, 1.0, 8, 3);
        assert!(matches!(
            simulate_from_infinity(&m, &t, &bad, &[]),
            Err(Error::DeltaTooLarge { .. })
        ));
    }

    #[test]
    fn csv_dumps_have_headers() {
        let cfg = SimConfig::new(1e-3, 0.01).record_every(1);
        let p = simulate_paths(&quadratic(), 1.0, &cfg, 1, 2, &[0.5]).unwrap();
        let mut buf = Vec::new();
        write_paths_csv(&p, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("path_id,t,x\n"));
        assert_eq!(text.lines().count(), 1 + p[0].states.len() + p[1].states.len());
        let mut buf = Vec::new();
        write_hits_csv(&p, &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("path_id,z,t_hit"));
    }
}
