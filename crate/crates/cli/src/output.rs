//! Artifacts: CSV files with a commented header echoing the run, and static
//! SVG line charts.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::CliError;

/// Header lines shared by every artifact of one command.
pub fn header(cfg: &RunConfig, command: &str) -> Vec<String> {
    let params = |section: &str| {
        cfg.echo_of(section)
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(" ")
    };
    vec![
        format!("descent-cli {}", env!("CARGO_PKG_VERSION")),
        format!("command: {command}"),
        format!("model: {}", cfg.model.describe()),
        format!("spec_sha256: {}", cfg.spec_hash),
        format!("seed: {}", cfg.seed),
        format!("tables: {}", params("tables")),
        format!("params: {}", params(command)),
    ]
}

pub struct Out {
    dir: PathBuf,
    header: Vec<String>,
}

impl Out {
    pub fn new(dir: &Path, header: Vec<String>) -> Result<Self, CliError> {
        fs::create_dir_all(dir)?;
        Ok(Out {
            dir: dir.to_path_buf(),
            header,
        })
    }

    /// Write `name` as the header followed by `body`.
    pub fn csv(&mut self, name: &str, extra: &[String], body: &[u8]) -> Result<(), CliError> {
        let mut text = String::new();
        for line in self.header.iter().chain(extra) {
            let _ = writeln!(text, "# {line}");
        }
        let mut bytes = text.into_bytes();
        bytes.extend_from_slice(body);
        self.put(name, &bytes)
    }

    pub fn svg(&mut self, name: &str, chart: &Chart) -> Result<(), CliError> {
        let svg = chart.render(&self.header);
        self.put(name, svg.as_bytes())
    }

    fn put(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, bytes)?;
        println!("wrote {}", path.display());
        Ok(())
    }
}

/// A line chart of one or more (x, y) series.
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<(String, Vec<(f64, f64)>)>,
}

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace("--", "- -")
}

impl Chart {
    pub fn new(title: &str, x_label: &str, y_label: &str) -> Self {
        Chart {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            series: Vec::new(),
        }
    }

    pub fn line(mut self, name: &str, points: Vec<(f64, f64)>) -> Self {
        let pts = points
            .into_iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .collect();
        self.series.push((name.into(), pts));
        self
    }

    fn bounds(&self) -> (f64, f64, f64, f64) {
        let all = self.series.iter().flat_map(|s| s.1.iter());
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for (x, y) in all {
            x0 = x0.min(*x);
            x1 = x1.max(*x);
            y0 = y0.min(*y);
            y1 = y1.max(*y);
        }
        if !x0.is_finite() {
            return (0.0, 1.0, 0.0, 1.0);
        }
        if x1 == x0 {
            x1 = x0 + 1.0;
        }
        if y1 == y0 {
            y1 = y0 + 1.0;
        }
        (x0, x1, y0, y1)
    }

    pub fn render(&self, header: &[String]) -> String {
        let (w, h, left, right, top, bottom) = (720.0, 440.0, 80.0, 20.0, 40.0, 60.0);
        let (x0, x1, y0, y1) = self.bounds();
        let px = |x: f64| left + (x - x0) / (x1 - x0) * (w - left - right);
        let py = |y: f64| h - bottom - (y - y0) / (y1 - y0) * (h - top - bottom);
        let mut s = String::new();
        let _ = writeln!(
            s,
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">"
        );
        let _ = writeln!(s, "<!--");
        for line in header {
            let _ = writeln!(s, "{}", escape(line));
        }
        let _ = writeln!(s, "-->");
        let _ = writeln!(s, "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>");
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"15\" text-anchor=\"middle\">{}</text>",
            w / 2.0,
            escape(&self.title)
        );
        let (bx, by) = (h - bottom, left);
        let _ = writeln!(
            s,
            "<path d=\"M{left} {top} V{bx} H{}\" fill=\"none\" stroke=\"black\"/>",
            w - right
        );
        for i in 0..=4 {
            let f = i as f64 / 4.0;
            let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
            let _ = writeln!(
                s,
                "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{}</text>",
                px(xv),
                bx + 16.0,
                tick(xv)
            );
            let _ = writeln!(
                s,
                "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{}</text>",
                by - 6.0,
                py(yv) + 4.0,
                tick(yv)
            );
        }
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\">{}</text>",
            (left + w - right) / 2.0,
            h - 14.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            s,
            "<text transform=\"translate(16 {:.1}) rotate(-90)\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\">{}</text>",
            (top + h - bottom) / 2.0,
            escape(&self.y_label)
        );
        for (i, (name, pts)) in self.series.iter().enumerate() {
            let color = COLORS[i % COLORS.len()];
            let coords: Vec<String> = pts
                .iter()
                .map(|(x, y)| format!("{:.2},{:.2}", px(*x), py(*y)))
                .collect();
            let _ = writeln!(
                s,
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>",
                coords.join(" ")
            );
            let ly = top + 16.0 * i as f64 + 6.0;
            let _ = writeln!(
                s,
                "<line x1=\"{:.1}\" y1=\"{ly:.1}\" x2=\"{:.1}\" y2=\"{ly:.1}\" stroke=\"{color}\" stroke-width=\"2\"/>",
                w - right - 150.0,
                w - right - 130.0
            );
            let _ = writeln!(
                s,
                "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\">{}</text>",
                w - right - 124.0,
                ly + 4.0,
                escape(name)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svg_has_one_polyline_per_series_and_header_comment() {
        let c = Chart::new("t", "x", "y")
            .line("a", vec![(0.0, 0.0), (1.0, 1.0)])
            .line("b", vec![(0.0, 1.0), (1.0, f64::NAN), (2.0, 0.5)]);
        let svg = c.render(&["descent-cli test".into(), "a -- b".into()]);
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("descent-cli test"));
        assert!(!svg.contains("a -- b"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }
}
