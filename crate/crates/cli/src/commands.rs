//! One function per subcommand. Each writes its artifacts and returns whether
//! its checks passed.

use std::io::Write;
use std::path::Path;

use descent::model::check_hypotheses;
use descent::model::Status;
use descent::quad::select_x_max;
use descent::spectral::{ratio_uniformity, solve_for_time, solve_spectrum};
use descent::stats::{
    clt_run, descent_times, empirical_survival, fluctuation_run, lln_check, normal_cdf, tail_rate_check, tail_rate_fit,
    write_reports_csv, McProtocol, McReport,
};
use descent::{Error, PotentialTables, TableOptions};

use crate::config::RunConfig;
use crate::output::{header, Chart, Out};
use crate::CliError;

fn tables(cfg: &RunConfig) -> Result<PotentialTables, CliError> {
    let mut opts = TableOptions::default()
        .with_tol(cfg.tables.tol)
        .with_step(cfg.tables.step);
    if let Some(x) = cfg.tables.x_max {
        opts = opts.with_x_max(x);
    }
    Ok(PotentialTables::build(&cfg.model, opts)?)
}

fn report_line(r: &McReport) -> String {
    let ks = r.ks_stat.map(|k| format!(" ks {k:.4}")).unwrap_or_default();
    format!(
        "{} at {}: estimate {:.6} (se {:.2e}) reference {:.6}{ks} -> {}",
        r.quantity,
        r.param,
        r.estimate,
        r.se,
        r.reference,
        if r.pass { "PASS" } else { "FAIL" }
    )
}

fn reports_csv(reports: &[McReport]) -> Result<Vec<u8>, CliError> {
    let mut body = Vec::new();
    write_reports_csv(reports, &mut body)?;
    Ok(body)
}

/// Empirical against normal CDF on at most 400 order statistics.
fn cdf_chart(title: &str, samples: &[f64]) -> Chart {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    let stride = n.div_ceil(400).max(1);
    let emp: Vec<(f64, f64)> = (0..n)
        .step_by(stride)
        .map(|i| (s[i], (i + 1) as f64 / n as f64))
        .collect();
    let norm: Vec<(f64, f64)> = emp.iter().map(|(x, _)| (*x, normal_cdf(*x))).collect();
    Chart::new(title, "standardized value", "CDF")
        .line("empirical", emp)
        .line("standard normal", norm)
}

pub fn check(cfg: &RunConfig, out: &Path) -> Result<bool, CliError> {
    let x_max = match cfg.check.x_max.or(cfg.tables.x_max) {
        Some(x) => x,
        None => match select_x_max(&cfg.model, cfg.check.tol) {
            Ok(x) => x,
            Err(Error::GridTooSmall(_)) => 100.0,
            Err(e) => return Err(e.into()),
        },
    };
    let report = check_hypotheses(&cfg.model, x_max, cfg.check.tol)?;
    let mut o = Out::new(out, header(cfg, "check"))?;
    let mut body = Vec::new();
    writeln!(body, "name,status,value")?;
    println!("{:<14} {:<13} value", "hypothesis", "status");
    for (name, status, value) in report.rows() {
        println!("{name:<14} {status:<13} {value:.6e}");
        writeln!(body, "{name},{status},{value:.16e}")?;
    }
    o.csv("check.csv", &[format!("x_max: {x_max}")], &body)?;
    Ok(report.h1 == Status::Pass)
}

pub fn moments(cfg: &RunConfig, out: &Path) -> Result<bool, CliError> {
    let t = tables(cfg)?;
    let mut body = Vec::new();
    writeln!(body, "z,m,M,var,central4_over_var2,second_moment_over_m2")?;
    let mut curve = Vec::new();
    for &z in &cfg.moments.z {
        let m = t.lyapunov_m(z)?;
        let big_m = t.deterministic_time(z)?;
        let var = t.variance(z)?;
        let k4 = t.central4(z)? / (var * var);
        let m2 = t.moment_from_infinity(z, 2)? / (m * m);
        writeln!(body, "{z:.16e},{m:.16e},{big_m:.16e},{var:.16e},{k4:.16e},{m2:.16e}")?;
        println!("z {z}: m {m:.6e} M {big_m:.6e} var {var:.6e} c4/var^2 {k4:.4} E(T^2)/m^2 {m2:.6}");
        curve.push((z, m / big_m));
    }
    let mut o = Out::new(out, header(cfg, "moments"))?;
    o.csv("moments.csv", &[format!("tol: {:e}", t.tol())], &body)?;
    o.svg("moments.svg", &Chart::new("m(z)/M(z)", "z", "m/M").line("m/M", curve))?;
    Ok(true)
}

pub fn simulate(cfg: &RunConfig, out: &Path) -> Result<bool, CliError> {
    let t = tables(cfg)?;
    let s = &cfg.simulate;
    let proto = McProtocol::new(s.n_paths, s.dt, cfg.seed).with_delta(s.delta);
    let reports = lln_check(&cfg.model, &t, &s.z, &proto)?;
    for r in &reports {
        println!("{}", report_line(r));
    }
    let mut o = Out::new(out, header(cfg, "simulate"))?;
    o.csv("simulate.csv", &[], &reports_csv(&reports)?)?;
    let pts = reports.iter().map(|r| (r.param, r.estimate)).collect();
    o.svg(
        "simulate.svg",
        &Chart::new("mean T_z / m(z)", "z", "ratio").line("Monte Carlo", pts),
    )?;
    Ok(reports.iter().all(|r| r.pass))
}

pub fn clt(cfg: &RunConfig, out: &Path) -> Result<bool, CliError> {
    let t = tables(cfg)?;
    let c = &cfg.clt;
    let mut proto = McProtocol::new(c.n_paths, c.dt, cfg.seed).with_delta(c.delta);
    if let Some(th) = c.ks_threshold {
        proto = proto.with_ks_threshold(th);
    }
    let (report, samples) = clt_run(&cfg.model, &t, c.z, &proto)?;
    println!("{}", report_line(&report));
    let mut o = Out::new(out, header(cfg, "clt"))?;
    o.csv("clt.csv", &[], &reports_csv(std::slice::from_ref(&report))?)?;
    o.svg("clt.svg", &cdf_chart("standardized descent times", &samples))?;
    Ok(report.pass)
}

pub fn fluct(cfg: &RunConfig, out: &Path) -> Result<bool, CliError> {
    let t = tables(cfg)?;
    let f = &cfg.fluct;
    let time = match f.t {
        Some(v) => v,
        None => t.lyapunov_m(f.z)?,
    };
    let mut proto = McProtocol::new(f.n_paths, f.dt, cfg.seed).with_delta(f.delta.unwrap_or(time / 20.0));
    if let Some(th) = f.ks_threshold {
        proto = proto.with_ks_threshold(th);
    }
    let (report, samples) = fluctuation_run(&cfg.model, &t, time, f.sigma, &proto)?;
    println!("{}", report_line(&report));
    let mut o = Out::new(out, header(cfg, "fluct"))?;
    o.csv(
        "fluct.csv",
        &[format!("t: {time:e}, delta: {:e}", proto.delta)],
        &reports_csv(std::slice::from_ref(&report))?,
    )?;
    o.svg("fluct.svg", &cdf_chart("standardized positions", &samples))?;
    Ok(report.pass)
}

pub fn yaglom(cfg: &RunConfig, out: &Path) -> Result<bool, CliError> {
    let t = tables(cfg)?;
    let y = &cfg.yaglom;
    let spec = solve_for_time(&t, y.z, y.t_min, y.k_max)?;
    let grid: Vec<f64> = (0..y.points)
        .map(|i| y.t_min + (y.t_max - y.t_min) * i as f64 / (y.points - 1) as f64)
        .collect();
    let series: Vec<_> = grid
        .iter()
        .map(|&s| spec.survival_probability(s, f64::INFINITY))
        .collect::<Result<_, _>>()?;
    let fit = tail_rate_fit(&grid.iter().zip(&series).map(|(s, v)| (*s, v.value)).collect::<Vec<_>>())?;
    let l1 = spec.lambda(1);
    let constant = spec.yaglom_constant(f64::INFINITY)?;
    let proto = McProtocol::new(y.n_paths, y.dt, cfg.seed).with_delta(y.delta);
    let times = descent_times(&cfg.model, &t, y.z, &proto)?;
    let mc = empirical_survival(&times, &grid);
    let report = tail_rate_check(&times, y.t_tail, l1, y.rate_tol, &proto, y.z)?;

    let mut body = Vec::new();
    writeln!(body, "t,survival_series,truncation,survival_mc")?;
    for ((s, v), (_, p)) in grid.iter().zip(&series).zip(&mc) {
        writeln!(body, "{s:.16e},{:.16e},{:.16e},{p:.16e}", v.value, v.truncation)?;
    }
    let extra = vec![
        format!("pairs: {}, lambda1: {l1:.16e}", spec.len()),
        format!(
            "series fit: rate {:.16e}, intercept {:.16e}, r2 {:.16e}",
            fit.rate, fit.intercept, fit.r2
        ),
        format!("yaglom constant psi1(inf)*mass: {constant:.16e}"),
    ];
    println!(
        "lambda1 {l1:.6} series fit rate {:.6} intercept {:.5} (constant {constant:.5})",
        fit.rate, fit.intercept
    );
    println!("{}", report_line(&report));
    let mut o = Out::new(out, header(cfg, "yaglom"))?;
    o.csv("yaglom.csv", &extra, &body)?;
    o.csv("yaglom_report.csv", &[], &reports_csv(std::slice::from_ref(&report))?)?;
    let log = |pts: Vec<(f64, f64)>| {
        pts.into_iter()
            .filter(|p| p.1 > 0.0)
            .map(|(a, b)| (a, b.ln()))
            .collect()
    };
    let chart = Chart::new("log P(T_z > t) from infinity", "t", "log survival")
        .line(
            "series",
            log(grid.iter().zip(&series).map(|(s, v)| (*s, v.value)).collect()),
        )
        .line("Monte Carlo", log(mc));
    o.svg("yaglom.svg", &chart)?;
    Ok(report.pass)
}

pub fn spectrum(cfg: &RunConfig, out: &Path) -> Result<bool, CliError> {
    let t = tables(cfg)?;
    let spec = solve_spectrum(&t, cfg.spectrum.z, cfg.spectrum.k)?;
    let mut body = Vec::new();
    spec.write_csv(&mut body)?;
    for p in spec.pairs() {
        println!(
            "k {:>3} lambda {:.10e} psi_inf {:.6e} zeros {} residual {:.1e}",
            p.k, p.lambda, p.psi_inf, p.zero_count, p.norm_residual
        );
    }
    let mut o = Out::new(out, header(cfg, "spectrum"))?;
    o.csv("spectrum.csv", &[], &body)?;
    let pts = spec.pairs().iter().map(|p| (p.k as f64, p.lambda)).collect();
    o.svg(
        "spectrum.svg",
        &Chart::new("eigenvalues", "k", "lambda_k").line("lambda_k", pts),
    )?;
    Ok(true)
}

pub fn density(cfg: &RunConfig, out: &Path) -> Result<bool, CliError> {
    let t = tables(cfg)?;
    let d = &cfg.density;
    let spec = solve_for_time(&t, d.z, d.t, d.k_max)?;
    let survival = spec.survival_probability(d.t, d.y)?;
    let (lo, hi) = (d.z, spec.x_closure());
    let g_z = cfg.model.gamma(d.z)?;
    let mut body = Vec::new();
    writeln!(body, "x,r,density_dx,truncation")?;
    let mut pts = Vec::with_capacity(d.points);
    for i in 0..d.points {
        let x = lo + (hi - lo) * i as f64 / (d.points - 1) as f64;
        // deep in the tail both value and bound underflow; judge those against the mass
        let (r, bound) = match spec.transition_density(d.t, d.y, x) {
            Ok(v) => (v.value, v.truncation),
            Err(Error::TruncationDominates { value, bound }) if bound < 1e-8 * survival.value => (value, bound),
            Err(e) => return Err(e.into()),
        };
        let dx = r * 2.0 * (g_z - cfg.model.gamma(x)?).exp();
        writeln!(body, "{x:.16e},{r:.16e},{dx:.16e},{bound:.3e}")?;
        pts.push((x, dx));
    }
    println!(
        "survival {:.10} (truncation {:.1e}) over x in [{lo}, {hi:.4}]",
        survival.value, survival.truncation
    );
    let mut o = Out::new(out, header(cfg, "density"))?;
    let extra = vec![format!(
        "pairs: {}, survival: {:.16e}, truncation: {:.3e}",
        spec.len(),
        survival.value,
        survival.truncation
    )];
    o.csv("density.csv", &extra, &body)?;
    o.svg(
        "density.svg",
        &Chart::new("density of X_t on {T_z > t}", "x", "density").line("r(t,y,x) dmu/dx", pts),
    )?;
    Ok(true)
}

pub fn ratio(cfg: &RunConfig, out: &Path) -> Result<bool, CliError> {
    let t = tables(cfg)?;
    let r = &cfg.ratio;
    let spec = solve_for_time(&t, r.z, r.t, r.k_max)?;
    let sups = ratio_uniformity(&spec, &r.starts, r.t)?;
    let mut body = Vec::new();
    writeln!(body, "start,sup_rel_error,M,sup_over_M")?;
    let mut pts = Vec::new();
    for (y, s) in &sups {
        let big_m = t.deterministic_time(*y)?;
        writeln!(body, "{y:.16e},{s:.16e},{big_m:.16e},{:.16e}", s / big_m)?;
        println!(
            "start {y}: sup |r(t,inf,x)/r(t,y,x) - 1| = {s:.6} (/M = {:.4})",
            s / big_m
        );
        pts.push((*y, *s));
    }
    let mut o = Out::new(out, header(cfg, "ratio"))?;
    o.csv("ratio.csv", &[format!("pairs: {}", spec.len())], &body)?;
    o.svg(
        "ratio.svg",
        &Chart::new("uniform ratio error", "start y", "sup |ratio - 1|").line("sup", pts),
    )?;
    Ok(sups.windows(2).all(|w| w[1].1 < w[0].1))
}
