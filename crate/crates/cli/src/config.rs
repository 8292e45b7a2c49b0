//! Run configuration: the model keys at top level plus one TOML section per
//! subcommand. Every numeric parameter is validated when the file is read.

use descent::model::{parse_model_table, parse_table};
use descent::DriftModel;
use sha2::{Digest, Sha256};
use toml::{Table, Value};

use crate::CliError;

const MODEL_KEYS: &[&str] = &["family", "coefficients", "x_floor", "knots", "seed"];
const SECTIONS: &[&str] = &[
    "tables", "check", "moments", "simulate", "clt", "fluct", "yaglom", "spectrum", "density", "ratio",
];

/// Line of `key` inside `[section]` (top level when `section` is None), or 0.
fn line_of(text: &str, section: Option<&str>, key: &str) -> usize {
    let mut current: Option<String> = None;
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if let Some(name) = t.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
            current = Some(name.trim().to_string());
            continue;
        }
        if current.as_deref() == section {
            if let Some(rest) = t.strip_prefix(key) {
                if rest.trim_start().starts_with('=') {
                    return i + 1;
                }
            }
        }
    }
    0
}

/// Resolved parameters of one section, in reading order.
pub type Echo = Vec<(String, String)>;

/// Typed reader over one section that records every value it hands out.
struct Section<'a> {
    name: &'static str,
    table: Option<&'a Table>,
    text: &'a str,
    echo: Echo,
    known: Vec<&'static str>,
}

impl<'a> Section<'a> {
    fn new(root: &'a Table, text: &'a str, name: &'static str) -> Result<Self, CliError> {
        let table = match root.get(name) {
            None => None,
            Some(Value::Table(t)) => Some(t),
            Some(_) => {
                return Err(CliError::config(
                    line_of(text, None, name),
                    name,
                    "expected a [section]",
                ))
            }
        };
        Ok(Section {
            name,
            table,
            text,
            echo: Vec::new(),
            known: Vec::new(),
        })
    }

    fn fail(&self, key: &str, message: impl Into<String>) -> CliError {
        CliError::config(
            line_of(self.text, Some(self.name), key),
            &format!("{}.{key}", self.name),
            message,
        )
    }

    fn raw(&mut self, key: &'static str) -> Option<&'a Value> {
        self.known.push(key);
        self.table.and_then(|t| t.get(key))
    }

    fn number(&mut self, key: &'static str) -> Result<Option<f64>, CliError> {
        match self.raw(key) {
            None => Ok(None),
            Some(Value::Float(f)) if f.is_finite() => Ok(Some(*f)),
            Some(Value::Integer(i)) => Ok(Some(*i as f64)),
            Some(_) => Err(self.fail(key, "expected a finite number")),
        }
    }

    fn record(&mut self, key: &str, value: String) {
        self.echo.push((key.to_string(), value));
    }

    /// Optional number ≥ 0 (or > 0 when `strict`).
    fn opt_f64(&mut self, key: &'static str, strict: bool) -> Result<Option<f64>, CliError> {
        let v = self.number(key)?;
        if let Some(x) = v {
            if x < 0.0 || (strict && x == 0.0) {
                return Err(self.fail(key, if strict { "must be positive" } else { "must be >= 0" }));
            }
            self.record(key, x.to_string());
        }
        Ok(v)
    }

    fn positive(&mut self, key: &'static str, default: f64) -> Result<f64, CliError> {
        let v = self.opt_f64(key, true)?;
        if v.is_none() {
            self.record(key, default.to_string());
        }
        Ok(v.unwrap_or(default))
    }

    fn level(&mut self, key: &'static str, default: f64) -> Result<f64, CliError> {
        let v = self.opt_f64(key, false)?;
        if v.is_none() {
            self.record(key, default.to_string());
        }
        Ok(v.unwrap_or(default))
    }

    fn count(&mut self, key: &'static str, default: usize) -> Result<usize, CliError> {
        let v = match self.raw(key) {
            None => default,
            Some(Value::Integer(i)) if *i >= 1 => *i as usize,
            Some(_) => return Err(self.fail(key, "expected a positive integer")),
        };
        self.record(key, v.to_string());
        Ok(v)
    }

    /// Non-empty, strictly increasing list of numbers ≥ 0.
    fn levels(&mut self, key: &'static str, default: &[f64]) -> Result<Vec<f64>, CliError> {
        let v: Vec<f64> = match self.raw(key) {
            None => default.to_vec(),
            Some(Value::Array(a)) => a
                .iter()
                .map(|x| match x {
                    Value::Float(f) if f.is_finite() => Ok(*f),
                    Value::Integer(i) => Ok(*i as f64),
                    _ => Err(self.fail(key, "expected an array of finite numbers")),
                })
                .collect::<Result<_, _>>()?,
            Some(_) => return Err(self.fail(key, "expected an array of numbers")),
        };
        if v.is_empty() || v.iter().any(|x| *x < 0.0) || v.windows(2).any(|w| w[1] <= w[0]) {
            return Err(self.fail(key, "need a non-empty, strictly increasing list of values >= 0"));
        }
        self.record(key, format!("{v:?}").replace(", ", " "));
        Ok(v)
    }

    /// A level or `"inf"`.
    fn start(&mut self, key: &'static str, default: f64) -> Result<f64, CliError> {
        let v = match self.raw(key) {
            None => default,
            Some(Value::String(s)) if s == "inf" => f64::INFINITY,
            Some(Value::Float(f)) if *f >= 0.0 => *f,
            Some(Value::Integer(i)) if *i >= 0 => *i as f64,
            Some(_) => return Err(self.fail(key, "expected a number >= 0 or \"inf\"")),
        };
        self.record(key, v.to_string());
        Ok(v)
    }

    fn finish(self) -> Result<Echo, CliError> {
        if let Some(t) = self.table {
            if let Some(k) = t.keys().find(|k| !self.known.contains(&k.as_str())) {
                return Err(self.fail(k, format!("unknown key (expected one of {})", self.known.join(", "))));
            }
        }
        Ok(self.echo)
    }
}

#[derive(Debug, Clone)]
pub struct TablesCfg {
    pub x_max: Option<f64>,
    pub tol: f64,
    pub step: f64,
}

#[derive(Debug, Clone)]
pub struct CheckCfg {
    pub x_max: Option<f64>,
    pub tol: f64,
}

#[derive(Debug, Clone)]
pub struct MomentsCfg {
    pub z: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SimulateCfg {
    pub z: Vec<f64>,
    pub n_paths: usize,
    pub dt: f64,
    pub delta: f64,
}

#[derive(Debug, Clone)]
pub struct CltCfg {
    pub z: f64,
    pub n_paths: usize,
    pub dt: f64,
    pub delta: f64,
    pub ks_threshold: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct FluctCfg {
    /// Observation time; m(z) when absent.
    pub t: Option<f64>,
    pub z: f64,
    pub sigma: Option<f64>,
    pub n_paths: usize,
    pub dt: f64,
    /// t/20 when absent.
    pub delta: Option<f64>,
    pub ks_threshold: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct YaglomCfg {
    pub z: f64,
    pub t_min: f64,
    pub t_max: f64,
    pub points: usize,
    pub k_max: usize,
    pub n_paths: usize,
    pub dt: f64,
    pub delta: f64,
    pub t_tail: f64,
    pub rate_tol: f64,
}

#[derive(Debug, Clone)]
pub struct SpectrumCfg {
    pub z: f64,
    pub k: usize,
}

#[derive(Debug, Clone)]
pub struct DensityCfg {
    pub z: f64,
    pub t: f64,
    pub y: f64,
    pub points: usize,
    pub k_max: usize,
}

#[derive(Debug, Clone)]
pub struct RatioCfg {
    pub z: f64,
    pub t: f64,
    pub starts: Vec<f64>,
    pub k_max: usize,
}

/// Everything a run needs, validated up front.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub model: DriftModel,
    pub spec_hash: String,
    pub seed: u64,
    pub tables: TablesCfg,
    pub check: CheckCfg,
    pub moments: MomentsCfg,
    pub simulate: SimulateCfg,
    pub clt: CltCfg,
    pub fluct: FluctCfg,
    pub yaglom: YaglomCfg,
    pub spectrum: SpectrumCfg,
    pub density: DensityCfg,
    pub ratio: RatioCfg,
    /// Resolved parameters per section.
    pub echo: Vec<(&'static str, Echo)>,
}

impl RunConfig {
    pub fn parse(text: &str, seed_override: Option<u64>) -> Result<Self, CliError> {
        let root = parse_table(text)?;
        for (k, v) in &root {
            let ok = if v.is_table() {
                SECTIONS.contains(&k.as_str())
            } else {
                MODEL_KEYS.contains(&k.as_str())
            };
            if !ok {
                return Err(CliError::config(line_of(text, None, k), k, "unknown key or section"));
            }
        }
        let model = parse_model_table(&root, text)?;
        let seed = match (seed_override, root.get("seed")) {
            (Some(s), _) => s,
            (None, None) => 1,
            (None, Some(Value::Integer(i))) if *i >= 0 => *i as u64,
            (None, Some(_)) => {
                return Err(CliError::config(
                    line_of(text, None, "seed"),
                    "seed",
                    "expected an integer >= 0",
                ))
            }
        };
        let mut echo = Vec::new();

        let mut s = Section::new(&root, text, "tables")?;
        let tables = TablesCfg {
            x_max: s.opt_f64("x_max", true)?,
            tol: s.positive("tol", 1e-6)?,
            step: s.positive("step", 0.005)?,
        };
        if !(tables.tol < 1.0) {
            return Err(s.fail("tol", "must lie in (0, 1)"));
        }
        if tables.step > 0.1 {
            return Err(s.fail("step", "must lie in (0, 0.1]"));
        }
        echo.push(("tables", s.finish()?));

        let mut s = Section::new(&root, text, "check")?;
        let check = CheckCfg {
            x_max: s.opt_f64("x_max", true)?,
            tol: s.positive("tol", 1e-6)?,
        };
        echo.push(("check", s.finish()?));

        let mut s = Section::new(&root, text, "moments")?;
        let moments = MomentsCfg {
            z: s.levels("z", &[1.0, 5.0, 10.0, 30.0])?,
        };
        echo.push(("moments", s.finish()?));

        let mut s = Section::new(&root, text, "simulate")?;
        let simulate = SimulateCfg {
            z: s.levels("z", &[5.0, 10.0, 30.0])?,
            n_paths: s.count("n_paths", 10_000)?,
            dt: s.positive("dt", 1e-4)?,
            delta: s.positive("delta", 1e-3)?,
        };
        echo.push(("simulate", s.finish()?));

        let mut s = Section::new(&root, text, "clt")?;
        let clt = CltCfg {
            z: s.level("z", 30.0)?,
            n_paths: s.count("n_paths", 5000)?,
            dt: s.positive("dt", 2.5e-7)?,
            delta: s.positive("delta", 1e-3)?,
            ks_threshold: s.opt_f64("ks_threshold", true)?,
        };
        echo.push(("clt", s.finish()?));

        let mut s = Section::new(&root, text, "fluct")?;
        let fluct = FluctCfg {
            t: s.opt_f64("t", true)?,
            z: s.level("z", 30.0)?,
            sigma: s.opt_f64("sigma", true)?,
            n_paths: s.count("n_paths", 5000)?,
            dt: s.positive("dt", 2.5e-7)?,
            delta: s.opt_f64("delta", true)?,
            ks_threshold: s.opt_f64("ks_threshold", true)?,
        };
        echo.push(("fluct", s.finish()?));

        let mut s = Section::new(&root, text, "yaglom")?;
        let yaglom = YaglomCfg {
            z: s.level("z", 0.0)?,
            t_min: s.positive("t_min", 1.0)?,
            t_max: s.positive("t_max", 5.8)?,
            points: s.count("points", 25)?,
            k_max: s.count("k_max", 64)?,
            n_paths: s.count("n_paths", 10_000)?,
            dt: s.positive("dt", 1e-5)?,
            delta: s.positive("delta", 1e-3)?,
            t_tail: s.positive("t_tail", 2.0)?,
            rate_tol: s.positive("rate_tol", 0.02)?,
        };
        if yaglom.t_max <= yaglom.t_min {
            return Err(s.fail("t_max", "must exceed t_min"));
        }
        if yaglom.points < 5 {
            return Err(s.fail("points", "need at least 5 points"));
        }
        echo.push(("yaglom", s.finish()?));

        let mut s = Section::new(&root, text, "spectrum")?;
        let spectrum = SpectrumCfg {
            z: s.level("z", 0.0)?,
            k: s.count("k", 10)?,
        };
        echo.push(("spectrum", s.finish()?));

        let mut s = Section::new(&root, text, "density")?;
        let density = DensityCfg {
            z: s.level("z", 0.0)?,
            t: s.positive("t", 1.0)?,
            y: s.start("y", f64::INFINITY)?,
            points: s.count("points", 2001)?,
            k_max: s.count("k_max", 64)?,
        };
        if density.y < density.z {
            return Err(s.fail("y", "start must lie above z"));
        }
        if density.points < 2 {
            return Err(s.fail("points", "need at least 2 points"));
        }
        echo.push(("density", s.finish()?));

        let mut s = Section::new(&root, text, "ratio")?;
        let ratio = RatioCfg {
            z: s.level("z", 0.0)?,
            t: s.positive("t", 1.0)?,
            starts: s.levels("starts", &[5.0, 10.0, 20.0])?,
            k_max: s.count("k_max", 64)?,
        };
        if ratio.starts[0] <= ratio.z {
            return Err(s.fail("starts", "starts must lie above z"));
        }
        echo.push(("ratio", s.finish()?));

        let digest = Sha256::digest(text.as_bytes());
        let spec_hash = digest.iter().map(|b| format!("{b:02x}")).collect();
        Ok(RunConfig {
            model,
            spec_hash,
            seed,
            tables,
            check,
            moments,
            simulate,
            clt,
            fluct,
            yaglom,
            spectrum,
            density,
            ratio,
            echo,
        })
    }

    pub fn echo_of(&self, section: &str) -> &[(String, String)] {
        self.echo
            .iter()
            .find(|(s, _)| *s == section)
            .map(|(_, e)| e.as_slice())
            .unwrap_or(&[])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = "family = \"power_law\"\ncoefficients = [1.0, 2.0]\n";

    #[test]
    fn defaults_and_echo() {
        let c = RunConfig::parse(BASE, Some(9)).unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.clt.n_paths, 5000);
        assert!(c.density.y.is_infinite());
        assert!(c.echo_of("clt").iter().any(|(k, v)| k == "dt" && v == "0.00000025"));
        assert_eq!(c.spec_hash.len(), 64);
    }

    #[test]
    fn bad_values_name_key_and_line() {
        let text = format!("{BASE}\n[clt]\nz = 30\ndt = -1\n");
        match RunConfig::parse(&text, None) {
            Err(CliError::Config { line, key, .. }) => {
                assert_eq!(key, "clt.dt");
                assert_eq!(line, 6);
            }
            other => panic!("{other:?}"),
        }
        let text = format!("{BASE}\n[ratio]\nstarts = [10, 5]\n");
        assert!(matches!(RunConfig::parse(&text, None), Err(CliError::Config { .. })));
        let text = format!("{BASE}\n[spectrum]\nkk = 3\n");
        match RunConfig::parse(&text, None) {
            Err(CliError::Config { key, .. }) => assert_eq!(key, "spectrum.kk"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_model_reports_key() {
        let err = RunConfig::parse("family = \"power_law\"\ncoefficients = [1.0]\n", None).unwrap_err();
        assert!(err.to_string().contains("coefficients"), "{err}");
    }

    proptest::proptest! {
        #[test]
        fn echo_round_trips_every_value(dt in 1e-9f64..1.0, n in 1usize..100_000, z in 0.0f64..1e3) {
            let text = format!("{BASE}\n[simulate]\nz = [{z:e}]\ndt = {dt:e}\nn_paths = {n}\n");
            let c = RunConfig::parse(&text, None).unwrap();
            let echo = c.echo_of("simulate");
            let get = |k: &str| echo.iter().find(|(key, _)| key == k).map(|(_, v)| v.clone()).unwrap();
            proptest::prop_assert_eq!(get("dt").parse::<f64>().unwrap(), dt);
            proptest::prop_assert_eq!(get("n_paths").parse::<usize>().unwrap(), n);
            proptest::prop_assert_eq!(c.simulate.z.clone(), vec![z]);
            proptest::prop_assert_eq!(get("z"), format!("[{z:?}]"));
            proptest::prop_assert_eq!(c.echo_of("delta").len(), 0);
        }
    }
}
