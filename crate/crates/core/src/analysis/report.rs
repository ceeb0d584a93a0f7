use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::AnalysisError;

/// Most points drawn per trace.
pub const MAX_PLOT_POINTS: usize = 2000;

const WIDTH: f64 = 960.0;
const HEIGHT: f64 = 320.0;
const MARGIN: f64 = 56.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub file_name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn to_csv(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub name: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl Trace {
    pub fn new(name: impl Into<String>, x: Vec<f64>, y: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            x,
            y,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_y: bool,
    pub traces: Vec<Trace>,
    /// Vertical markers at x positions.
    pub markers: Vec<(f64, String)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

impl Plot {
    /// Standalone SVG line chart.
    pub fn to_svg(&self) -> String {
        let ty = |v: f64| if self.log_y { v.max(1e-12).log10() } else { v };
        let points: Vec<Vec<(f64, f64)>> = self
            .traces
            .iter()
            .map(|t| {
                let stride = t.x.len().div_ceil(MAX_PLOT_POINTS).max(1);
                t.x.iter()
                    .zip(&t.y)
                    .step_by(stride)
                    .map(|(&x, &y)| (x, ty(y)))
                    .filter(|(x, y)| x.is_finite() && y.is_finite())
                    .collect()
            })
            .collect();
        let all = points.iter().flatten();
        let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for &(x, y) in all {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if x0 > x1 {
            (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
        }
        if x1 == x0 {
            x1 = x0 + 1.0;
        }
        if y1 == y0 {
            y1 = y0 + 1.0;
        }
        let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
        let sy = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
            WIDTH / 2.0,
            escape(&self.title)
        );
        let _ = writeln!(
            s,
            r#"<path d="M{m} {t} V{b} H{r}" stroke="black" fill="none"/>"#,
            m = MARGIN,
            t = MARGIN,
            b = HEIGHT - MARGIN,
            r = WIDTH - MARGIN
        );
        let ylab = |v: f64| {
            if self.log_y {
                format!("1e{v:.1}")
            } else {
                format!("{v:.3}")
            }
        };
        for (v, anchor_y) in [(y0, HEIGHT - MARGIN), (y1, MARGIN)] {
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{anchor_y}" text-anchor="end">{}</text>"#,
                MARGIN - 4.0,
                ylab(v)
            );
        }
        for (v, anchor) in [(x0, "start"), (x1, "end")] {
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="{anchor}">{v:.2}</text>"#,
                sx(v),
                HEIGHT - MARGIN + 16.0
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            WIDTH / 2.0,
            HEIGHT - 12.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="14" y="{}" transform="rotate(-90 14 {})" text-anchor="middle">{}</text>"#,
            HEIGHT / 2.0,
            HEIGHT / 2.0,
            escape(&self.y_label)
        );
        for (x, label) in &self.markers {
            if *x < x0 || *x > x1 {
                continue;
            }
            let _ = writeln!(
                s,
                r##"<line x1="{x}" x2="{x}" y1="{t}" y2="{b}" stroke="#999" stroke-dasharray="3,3"><title>{l}</title></line>"##,
                x = sx(*x),
                t = MARGIN,
                b = HEIGHT - MARGIN,
                l = escape(label)
            );
        }
        for (k, (trace, pts)) in self.traces.iter().zip(&points).enumerate() {
            let color = COLORS[k % COLORS.len()];
            let mut d = String::new();
            for (x, y) in pts {
                let _ = write!(d, "{:.1},{:.1} ", sx(*x), sy(*y));
            }
            let _ = writeln!(
                s,
                r#"<polyline points="{}" stroke="{color}" fill="none" stroke-width="1"/>"#,
                d.trim_end()
            );
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" fill="{color}" text-anchor="end">{}</text>"#,
                WIDTH - MARGIN,
                MARGIN + 14.0 * (k as f64 + 1.0),
                escape(&trace.name)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

/// Writes `<name>_report.json`, each table as CSV and, with `svg`, the plot
/// as `<name>.svg` into `dir`. Returns the written paths.
pub fn write_report<R: Serialize>(
    dir: &Path,
    name: &str,
    report: &R,
    tables: &[Table],
    plot: Option<&Plot>,
    svg: bool,
) -> Result<Vec<PathBuf>, AnalysisError> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let json_path = dir.join(format!("{name}_report.json"));
    let mut json = serde_json::to_string_pretty(report)?;
    json.push('\n');
    fs::write(&json_path, json)?;
    written.push(json_path);
    for t in tables {
        let p = dir.join(&t.file_name);
        fs::write(&p, t.to_csv())?;
        written.push(p);
    }
    if let (true, Some(plot)) = (svg, plot) {
        let p = dir.join(format!("{name}.svg"));
        fs::write(&p, plot.to_svg())?;
        written.push(p);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let t = Table {
            file_name: "x.csv".into(),
            header: vec!["a".into(), "b".into()],
            rows: vec![vec!["1".into(), "2.5".into()]],
        };
        assert_eq!(t.to_csv(), "a,b\n1,2.5\n");
    }

    #[test]
    fn svg_decimates_and_escapes() {
        let x: Vec<f64> = (0..10_000).map(|i| i as f64).collect();
        let p = Plot {
            title: "a < b".into(),
            x_label: "s".into(),
            y_label: "uV".into(),
            log_y: false,
            traces: vec![Trace::new(
                "t",
                x.clone(),
                x.iter().map(|v| v.sin()).collect(),
            )],
            markers: vec![(5.0, "m".into())],
        };
        let svg = p.to_svg();
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("a &lt; b"));
        let poly = svg.lines().find(|l| l.starts_with("<polyline")).unwrap();
        assert!(poly.matches(',').count() <= MAX_PLOT_POINTS);
    }
}
