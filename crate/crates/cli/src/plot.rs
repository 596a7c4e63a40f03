//! Minimal SVG line charts drawn from the CSV files written by `evaluate`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 60.0;

struct Series {
    name: String,
    color: &'static str,
    dashed: bool,
    points: Vec<(f64, f64)>,
}

struct Chart {
    title: String,
    x_label: &'static str,
    y_label: &'static str,
    log_x: bool,
    log_y: bool,
    series: Vec<Series>,
}

fn read_xy(path: &Path, x: &str, y: &str) -> Result<Vec<(f64, f64)>> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("cannot read {}", path.display()))?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .with_context(|| format!("{}: no column {name}", path.display()))
    };
    let (xi, yi) = (col(x)?, col(y)?);
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        out.push((row[xi].parse()?, row[yi].parse()?));
    }
    Ok(out)
}

impl Chart {
    fn transform(&self, v: f64, log: bool) -> Option<f64> {
        if log {
            (v > 0.0).then(|| v.log10())
        } else {
            Some(v)
        }
    }

    fn render(&self) -> String {
        let pts: Vec<(f64, f64)> = self
            .series
            .iter()
            .flat_map(|s| s.points.iter())
            .filter_map(|&(x, y)| Some((self.transform(x, self.log_x)?, self.transform(y, self.log_y)?)))
            .collect();
        let bounds = |f: fn(&(f64, f64)) -> f64| {
            let lo = pts.iter().map(f).fold(f64::INFINITY, f64::min);
            let hi = pts.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
            if !lo.is_finite() {
                (0.0, 1.0)
            } else if hi - lo < 1e-12 {
                (lo - 0.5, hi + 0.5)
            } else {
                (lo, hi)
            }
        };
        let (x0, x1) = bounds(|p| p.0);
        let (y0, y1) = bounds(|p| p.1);
        let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
        let sy = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);

        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            svg,
            r#"<rect x="{MARGIN}" y="{MARGIN}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            WIDTH - 2.0 * MARGIN,
            HEIGHT - 2.0 * MARGIN
        );
        let _ = writeln!(svg, r#"<text x="{}" y="30" text-anchor="middle" font-size="14">{}</text>"#, WIDTH / 2.0, self.title);
        let fmt_tick = |v: f64, log: bool| if log { format!("1e{v:.1}") } else { format!("{v:.3}") };
        for i in 0..=4 {
            let f = i as f64 / 4.0;
            let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
            let _ = writeln!(
                svg,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
                sx(xv),
                HEIGHT - MARGIN + 18.0,
                fmt_tick(xv, self.log_x)
            );
            let _ = writeln!(
                svg,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
                MARGIN - 6.0,
                sy(yv) + 4.0,
                fmt_tick(yv, self.log_y)
            );
        }
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, WIDTH / 2.0, HEIGHT - 15.0, self.x_label);
        let _ = writeln!(
            svg,
            r#"<text x="15" y="{}" text-anchor="middle" transform="rotate(-90 15 {})">{}</text>"#,
            HEIGHT / 2.0,
            HEIGHT / 2.0,
            self.y_label
        );
        for (i, s) in self.series.iter().enumerate() {
            let path: Vec<String> = s
                .points
                .iter()
                .filter_map(|&(x, y)| Some((self.transform(x, self.log_x)?, self.transform(y, self.log_y)?)))
                .map(|(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                .collect();
            let dash = if s.dashed { r#" stroke-dasharray="6 4""# } else { "" };
            let _ = writeln!(
                svg,
                r#"<polyline fill="none" stroke="{}" stroke-width="1.5"{dash} points="{}"/>"#,
                s.color,
                path.join(" ")
            );
            let ly = MARGIN + 16.0 + 16.0 * i as f64;
            let _ = writeln!(
                svg,
                r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{}"{dash}/><text x="{}" y="{}">{}</text>"#,
                WIDTH - MARGIN - 140.0,
                WIDTH - MARGIN - 115.0,
                s.color,
                WIDTH - MARGIN - 110.0,
                ly + 4.0,
                s.name
            );
        }
        svg.push_str("</svg>\n");
        svg
    }
}

fn write_svg(path: &Path, chart: &Chart) -> Result<()> {
    fs::write(path, chart.render()).with_context(|| format!("cannot write {}", path.display()))
}

pub fn roc_plot(dir: &Path) -> Result<()> {
    let chart = Chart {
        title: "ROC".into(),
        x_label: "FMR",
        y_label: "FNMR",
        log_x: true,
        log_y: false,
        series: vec![
            Series {
                name: "true".into(),
                color: "black",
                dashed: false,
                points: read_xy(&dir.join("roc.csv"), "fmr", "fnmr")?,
            },
            Series {
                name: "predicted".into(),
                color: "#d62728",
                dashed: true,
                points: read_xy(&dir.join("roc_predicted.csv"), "fmr", "fnmr")?,
            },
        ],
    };
    write_svg(&dir.join("roc.svg"), &chart)
}

pub fn erc_plot(dir: &Path, target_fmr: f64) -> Result<()> {
    let series = [("model", "#1f77b4", false), ("ideal", "black", true), ("random", "gray", true)]
        .into_iter()
        .map(|(name, color, dashed)| {
            Ok(Series {
                name: name.into(),
                color,
                dashed,
                points: read_xy(&dir.join(format!("erc_{name}_fmr{target_fmr}.csv")), "reject_frac", "fnmr")?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let chart = Chart {
        title: format!("ERC at FMR {target_fmr}"),
        x_label: "fraction rejected",
        y_label: "FNMR",
        log_x: false,
        log_y: false,
        series,
    };
    write_svg(&dir.join(format!("erc_fmr{target_fmr}.svg")), &chart)
}
