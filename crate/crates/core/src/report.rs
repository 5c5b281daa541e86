//! Serialization of result grids and layer profiles.
//!
//! Outputs are pure functions of their inputs so reruns are byte-identical.
//!
//! * `grid.csv` / `grid_std.csv`: header `dim,<layer>,<layer>,...`, one row
//!   per dim (`d'` for the identity baseline), 6 significant digits, `NA`
//!   for failed cells.
//! * `grid.json`: the full [`ResultGrid`], including per-run records and
//!   failure reasons.
//! * `by_layer.json`: `{"series": [{"label", "points": [{"layer",
//!   "relative_position", "value"}]}]}`
//! * `by_dim.json`: `{"label", "points": [{"dim", "value"}]}`
//! * `profiles.svg`: line chart of the by-layer series.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::sweep::{DimProfile, LayerProfile, ResultGrid};

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("no profiles to plot")]
    NoProfiles,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), ReportError> {
    fs::write(path, contents).map_err(|source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// `%.6g`-style rendering: 6 significant digits, trailing zeros dropped,
/// exponent form outside `1e-4 ≤ |v| < 1e6`.
pub fn format_sig6(value: f64) -> String {
    if value == 0.0 {
        return "0".into();
    }
    if !value.is_finite() {
        return "NA".into();
    }
    // Round first so that e.g. 999999.5 picks the right exponent.
    let sci = format!("{value:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let mantissa = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{mantissa}e{sign}{:02}", exp.abs());
    }
    let decimals = (5 - exp).max(0) as usize;
    trim_zeros(&format!("{value:.decimals$}")).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn render_matrix(grid: &ResultGrid, values: &[Vec<Option<f64>>]) -> Result<String, ReportError> {
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    let mut header = vec!["dim".to_string()];
    header.extend(grid.layers.iter().map(usize::to_string));
    w.write_record(&header)?;
    for (dim, row) in grid.dims.iter().zip(values) {
        let mut record = vec![dim.to_string()];
        record.extend(row.iter().map(|v| v.map_or_else(|| "NA".to_string(), format_sig6)));
        w.write_record(&record)?;
    }
    let bytes = w.into_inner().map_err(|e| ReportError::Io {
        path: PathBuf::from("<memory>"),
        source: e.into_error(),
    })?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn render_grid_csv(grid: &ResultGrid) -> Result<String, ReportError> {
    render_matrix(grid, &grid.mean_matrix())
}

pub fn render_std_csv(grid: &ResultGrid) -> Result<String, ReportError> {
    render_matrix(grid, &grid.std_matrix())
}

fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut text = serde_json::to_string_pretty(value).expect("report types serialize");
    text.push('\n');
    text.into_bytes()
}

fn std_path(destination: &Path) -> PathBuf {
    let stem = destination
        .file_stem()
        .map_or_else(|| "grid".into(), |s| s.to_string_lossy().into_owned());
    destination.with_file_name(format!("{stem}_std.csv"))
}

/// Writes `destination` (means), a parallel `<stem>_std.csv`, and the
/// `<stem>.json` sidecar carrying the whole grid and any failures.
pub fn emit_grid_csv(grid: &ResultGrid, destination: &Path) -> Result<PathBuf, ReportError> {
    write_file(destination, render_grid_csv(grid)?.as_bytes())?;
    write_file(&std_path(destination), render_std_csv(grid)?.as_bytes())?;
    write_file(&destination.with_extension("json"), &to_json(grid))?;
    Ok(destination.to_path_buf())
}

#[derive(Serialize)]
struct Series<'a> {
    label: &'a str,
    points: &'a [crate::sweep::ProfilePoint],
}

#[derive(Serialize)]
struct SeriesDocument<'a> {
    series: Vec<Series<'a>>,
}

#[derive(Serialize)]
struct DimDocument<'a> {
    label: &'a str,
    points: &'a [crate::sweep::DimPoint],
}

pub fn render_profiles_json(profiles: &[(String, LayerProfile)]) -> Vec<u8> {
    to_json(&SeriesDocument {
        series: profiles
            .iter()
            .map(|(label, p)| Series {
                label,
                points: &p.points,
            })
            .collect(),
    })
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn escape_xml(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Line chart of metric against relative layer position, one polyline per
/// profile.
pub fn render_profiles_svg(profiles: &[(String, LayerProfile)]) -> Result<String, ReportError> {
    if profiles.is_empty() {
        return Err(ReportError::NoProfiles);
    }
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const LEFT: f64 = 60.0;
    const RIGHT: f64 = 160.0;
    const TOP: f64 = 20.0;
    const BOTTOM: f64 = 50.0;
    let plot_w = W - LEFT - RIGHT;
    let plot_h = H - TOP - BOTTOM;

    let values = profiles.iter().flat_map(|(_, p)| p.points.iter().map(|pt| pt.value));
    let (lo, hi) = values.fold((0.0f64, 1.0f64), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let x = |pos: f64| LEFT + pos * plot_w;
    let y = |v: f64| TOP + (hi - v) / (hi - lo) * plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<g stroke="black" stroke-width="1"><line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}"/><line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}"/></g>"#,
        LEFT, TOP + plot_h, LEFT + plot_w, TOP + plot_h, LEFT, TOP, LEFT, TOP + plot_h
    );
    for i in 0..=4 {
        let pos = i as f64 / 4.0;
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{pos}</text>"#,
            x(pos),
            TOP + plot_h + 18.0
        );
        let v = lo + (hi - lo) * pos;
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            LEFT - 6.0,
            y(v) + 4.0,
            format_sig6((v * 100.0).round() / 100.0)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">relative layer position</text>"#,
        LEFT + plot_w / 2.0,
        H - 10.0
    );

    for (i, (label, profile)) in profiles.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let points: Vec<String> = profile
            .points
            .iter()
            .map(|p| format!("{:.2},{:.2}", x(p.relative_position), y(p.value)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            points.join(" ")
        );
        let ly = TOP + 16.0 * i as f64 + 8.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            W - RIGHT + 10.0,
            W - RIGHT + 30.0,
            W - RIGHT + 36.0,
            ly + 4.0,
            escape_xml(label)
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Writes `by_layer.json` and `profiles.svg` into `out_dir`; returns the
/// SVG path.
pub fn emit_profiles(
    profiles: &[(String, LayerProfile)],
    out_dir: &Path,
) -> Result<PathBuf, ReportError> {
    let svg = render_profiles_svg(profiles)?;
    write_file(&out_dir.join("by_layer.json"), &render_profiles_json(profiles))?;
    let svg_path = out_dir.join("profiles.svg");
    write_file(&svg_path, svg.as_bytes())?;
    Ok(svg_path)
}

pub fn emit_dim_profile(
    label: &str,
    profile: &DimProfile,
    destination: &Path,
) -> Result<PathBuf, ReportError> {
    write_file(
        destination,
        &to_json(&DimDocument {
            label,
            points: &profile.points,
        }),
    )?;
    Ok(destination.to_path_buf())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::Task;
    use crate::sweep::{CellOutcome, DimSpec, ProfilePoint};

    fn grid() -> ResultGrid {
        ResultGrid::from_means(
            "toy",
            Task::Sts,
            vec![DimSpec::Rank(2), DimSpec::Identity],
            vec![0, 3],
            4,
            &[vec![0.5, 0.123456789], vec![-0.25, 1.0]],
        )
        .unwrap()
    }

    #[test]
    fn sig6_formatting() {
        assert_eq!(format_sig6(0.0), "0");
        assert_eq!(format_sig6(0.5), "0.5");
        assert_eq!(format_sig6(0.123456789), "0.123457");
        assert_eq!(format_sig6(-0.25), "-0.25");
        assert_eq!(format_sig6(1.0), "1");
        assert_eq!(format_sig6(123456.7), "123457");
        assert_eq!(format_sig6(999999.7), "1e+06");
        assert_eq!(format_sig6(0.00001234567), "1.23457e-05");
        assert_eq!(format_sig6(0.0001234567), "0.000123457");
        assert_eq!(format_sig6(0.99999999), "1");
    }

    #[test]
    fn grid_csv_bytes() {
        let g = grid();
        assert_eq!(render_grid_csv(&g).unwrap(), "dim,0,3\n2,0.5,0.123457\nd',-0.25,1\n");
        assert_eq!(render_std_csv(&g).unwrap(), "dim,0,3\n2,0,0\nd',0,0\n");
    }

    #[test]
    fn failed_cell_is_na_and_listed() {
        let dir = tempfile::tempdir().unwrap();
        let mut g = grid();
        g.cells[0][1].outcome = CellOutcome::Failed {
            reason: "weights became non-finite".into(),
        };
        let path = dir.path().join("grid.csv");
        emit_grid_csv(&g, &path).unwrap();
        let csv = fs::read_to_string(&path).unwrap();
        assert_eq!(csv, "dim,0,3\n2,0.5,NA\nd',-0.25,1\n");
        let std = fs::read_to_string(dir.path().join("grid_std.csv")).unwrap();
        assert_eq!(std, "dim,0,3\n2,0,NA\nd',0,0\n");
        let sidecar: serde_json::Value =
            serde_json::from_slice(&fs::read(dir.path().join("grid.json")).unwrap()).unwrap();
        let failed = &sidecar["cells"][0][1];
        assert_eq!(failed["status"], "failed");
        assert_eq!(failed["reason"], "weights became non-finite");
        assert_eq!(failed["dim"], 2);
        assert_eq!(sidecar["cells"][1][0]["dim"], "d'");
    }

    #[test]
    fn csv_reparses_to_grid() {
        let g = grid();
        let text = render_grid_csv(&g).unwrap();
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        for (record, row) in reader.records().zip(g.mean_matrix()) {
            let record = record.unwrap();
            for (field, value) in record.iter().skip(1).zip(row) {
                let parsed: f64 = field.parse().unwrap();
                let v = value.unwrap();
                assert!((parsed - v).abs() <= 5e-6 * v.abs().max(1e-300));
            }
        }
    }

    fn profile(points: &[(f64, f64)]) -> LayerProfile {
        LayerProfile {
            points: points
                .iter()
                .enumerate()
                .map(|(layer, &(relative_position, value))| ProfilePoint {
                    layer,
                    relative_position,
                    value,
                })
                .collect(),
        }
    }

    #[test]
    fn svg_has_one_polyline_per_profile() {
        let svg = render_profiles_svg(&[("toy".into(), profile(&[(0.0, 0.1), (1.0, 0.9)]))]).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 1);
        let start = svg.find("points=\"").unwrap() + 8;
        let end = start + svg[start..].find('"').unwrap();
        assert_eq!(svg[start..end].split(' ').count(), 2);

        let two = render_profiles_svg(&[
            ("a".into(), profile(&[(0.0, 0.1), (1.0, 0.9)])),
            ("b<c>".into(), profile(&[(0.0, 0.3), (0.5, 0.2), (1.0, 0.4)])),
        ])
        .unwrap();
        assert_eq!(two.matches("<polyline").count(), 2);
        assert!(two.contains("b&lt;c&gt;"));
    }

    #[test]
    fn svg_requires_profiles() {
        assert!(matches!(render_profiles_svg(&[]), Err(ReportError::NoProfiles)));
    }

    #[test]
    fn emission_is_deterministic() {
        let p = vec![("toy".to_string(), profile(&[(0.0, 0.1), (0.5, 0.7), (1.0, 0.9)]))];
        assert_eq!(render_profiles_svg(&p).unwrap(), render_profiles_svg(&p).unwrap());
        assert_eq!(render_profiles_json(&p), render_profiles_json(&p));
        assert_eq!(render_grid_csv(&grid()).unwrap(), render_grid_csv(&grid()).unwrap());
    }
}
