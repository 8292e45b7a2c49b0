use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use descent::stats::{clt_check, McProtocol};
use descent::{DriftModel, PotentialTables, TableOptions};

const QUADRATIC: &str = "family = \"power_law\"\ncoefficients = [1.0, 2.0]\n";

struct Scratch(PathBuf);

impl Scratch {
    fn new(tag: &str) -> Self {
        let dir = std::env::temp_dir().join(format!("descent-cli-{tag}-{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        Scratch(dir)
    }

    fn config(&self, text: &str) -> PathBuf {
        let p = self.0.join("run.toml");
        std::fs::write(&p, text).unwrap();
        p
    }
}

impl Drop for Scratch {
    fn drop(&mut self) {
        let _ = std::fs::remove_dir_all(&self.0);
    }
}

fn descent(config: &Path, out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_descent"))
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .unwrap()
}

/// Data rows of a CSV artifact, skipping `#` lines and the column header.
fn rows(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

fn header_value(path: &Path, key: &str) -> f64 {
    let text = std::fs::read_to_string(path).unwrap();
    let line = text.lines().find(|l| l.starts_with('#') && l.contains(key)).unwrap();
    let rest = &line[line.find(key).unwrap() + key.len()..];
    rest.trim_start_matches([':', ' '])
        .split(',')
        .next()
        .unwrap()
        .trim()
        .parse()
        .unwrap()
}

#[test]
fn density_integrates_to_survival() {
    let s = Scratch::new("density");
    let cfg = s.config(&format!(
        "{QUADRATIC}\n[density]\nz = 0\nt = 1\ny = \"inf\"\npoints = 1601\n"
    ));
    let out = descent(&cfg, &s.0, &["density"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let path = s.0.join("density.csv");
    let data: Vec<(f64, f64)> = rows(&path)
        .iter()
        .map(|r| (r[0].parse().unwrap(), r[2].parse().unwrap()))
        .collect();
    let integral: f64 = data
        .windows(2)
        .map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1))
        .sum();
    let survival = header_value(&path, "survival");
    assert!((integral - survival).abs() < 1e-4, "{integral} vs {survival}");
    assert!(s.0.join("density.svg").exists());
}

#[test]
fn ratio_error_decreases_with_start() {
    let s = Scratch::new("ratio");
    let cfg = s.config(&format!("{QUADRATIC}\n[ratio]\nstarts = [5, 10, 20]\n"));
    let out = descent(&cfg, &s.0, &["--strict", "ratio"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let sups: Vec<f64> = rows(&s.0.join("ratio.csv"))
        .iter()
        .map(|r| r[1].parse().unwrap())
        .collect();
    assert_eq!(sups.len(), 3);
    assert!(sups.windows(2).all(|w| w[1] < w[0]), "{sups:?}");
}

#[test]
fn reruns_are_byte_identical() {
    let s = Scratch::new("rerun");
    let cfg = s.config(&format!(
        "{QUADRATIC}seed = 4\n[tables]\nx_max = 2000\n[simulate]\nz = [5, 10]\nn_paths = 300\ndt = 1e-4\n"
    ));
    let (a, b) = (s.0.join("a"), s.0.join("b"));
    for (dir, threads) in [(&a, "1"), (&b, "3")] {
        for cmd in ["simulate", "spectrum", "moments"] {
            let out = descent(&cfg, dir, &["--threads", threads, cmd]);
            assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        }
    }
    for name in ["simulate.csv", "spectrum.csv", "moments.csv", "simulate.svg"] {
        let (x, y) = (
            std::fs::read(a.join(name)).unwrap(),
            std::fs::read(b.join(name)).unwrap(),
        );
        assert!(x == y, "{name} differs between runs");
    }
}

#[test]
fn clt_command_matches_library_check() {
    let s = Scratch::new("clt");
    let cfg = s.config(&format!(
        "{QUADRATIC}seed = 11\n[tables]\nx_max = 2000\n[clt]\nz = 30\nn_paths = 400\ndt = 1e-5\nks_threshold = 0.1\n"
    ));
    let out = descent(&cfg, &s.0, &["clt"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let row = &rows(&s.0.join("clt.csv"))[0];
    let ks_cli: f64 = row[6].parse().unwrap();

    let model = DriftModel::power_law(1.0, 2.0).unwrap();
    let tables = PotentialTables::build(&model, TableOptions::default().with_x_max(2000.0)).unwrap();
    let proto = McProtocol::new(400, 1e-5, 11).with_delta(1e-3).with_ks_threshold(0.1);
    let report = clt_check(&model, &tables, 30.0, &proto).unwrap();
    assert_eq!(ks_cli.to_bits(), report.ks_stat.unwrap().to_bits());
}

#[test]
fn check_exit_codes() {
    let s = Scratch::new("check");
    let good = s.config(QUADRATIC);
    assert_eq!(descent(&good, &s.0, &["check"]).status.code(), Some(0));

    // constant drift: infinity is not an entrance boundary
    let flat = s.config("family = \"exp_poly\"\ncoefficients = [0.0]\n");
    assert_eq!(descent(&flat, &s.0, &["check"]).status.code(), Some(1));

    let bad = s.config("family = \"power_law\"\ncoefficients = [1.0, \"two\"]\n");
    let out = descent(&bad, &s.0, &["check"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("coefficients"));

    let unknown = s.config(&format!("{QUADRATIC}\n[clt]\ndtt = 1e-5\n"));
    let out = descent(&unknown, &s.0, &["clt"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("clt.dtt"));
}
