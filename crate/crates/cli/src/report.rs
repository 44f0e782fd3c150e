//! CSV to static SVG line charts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::exit::{Failure, Outcome};

/// A parsed numeric CSV: header plus rows of equal width.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    fn values(&self, c: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[c]).collect()
    }
}

/// Reads a CSV whose cells are all numbers. Any malformed row is reported by
/// its 1-based data row number.
pub fn read_table(path: &Path) -> Outcome<Table> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| Failure::user(format!("cannot read {}: {e}", path.display())))?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Failure::user(format!("{}: bad header: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.is_empty() || header.iter().all(|h| h.is_empty()) {
        return Err(Failure::user(format!("{}: missing header", path.display())));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| Failure::user(format!("{}: row {row}: {e}", path.display())))?;
        if rec.len() != header.len() {
            return Err(Failure::user(format!(
                "{}: row {row}: expected {} fields, found {}",
                path.display(),
                header.len(),
                rec.len()
            )));
        }
        let vals = rec
            .iter()
            .zip(&header)
            .map(|(cell, col)| match cell.trim().parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Failure::user(format!(
                    "{}: row {row}: column {col}: {cell:?} is not a finite number",
                    path.display()
                ))),
            })
            .collect::<Outcome<Vec<f64>>>()?;
        rows.push(vals);
    }
    if rows.is_empty() {
        return Err(Failure::user(format!("{}: no data rows", path.display())));
    }
    Ok(Table { header, rows })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

const BATCH_SERIES: [(&str, &str); 4] = [
    ("meta_err", "MeTA"),
    ("best_err", "best single source"),
    ("worst_err", "worst single source"),
    ("uniform_err", "uniform ensemble"),
];

/// Picks the chart for a table by its columns: per-batch error curves,
/// forgetting per source, or every `*_err` column against `t`.
pub fn chart_for(table: &Table, name: &str) -> Outcome<Chart> {
    let h = |c: &str| table.column(c);
    if let (Some(cp), Some(src), Some(a), Some(p)) =
        (h("checkpoint"), h("source_id"), h("adapted_err"), h("pristine_err"))
    {
        let mut by_source: BTreeMap<u64, Vec<(f64, f64)>> = BTreeMap::new();
        for r in &table.rows {
            by_source.entry(r[src] as u64).or_default().push((r[cp], r[a] - r[p]));
        }
        return Ok(Chart {
            title: format!("Forgetting per checkpoint ({name})"),
            x_label: "checkpoint (segment)".into(),
            y_label: "own-domain error change".into(),
            series: by_source
                .into_iter()
                .map(|(j, points)| Series {
                    label: format!("source {j}"),
                    points,
                })
                .collect(),
        });
    }
    let t = h("t").ok_or_else(|| Failure::user(format!("{name}: no t or checkpoint column to plot against")))?;
    let xs = table.values(t);
    let cols: Vec<(usize, String)> = if h("meta_err").is_some() {
        BATCH_SERIES
            .iter()
            .filter_map(|(c, label)| h(c).map(|i| (i, label.to_string())))
            .collect()
    } else {
        table
            .header
            .iter()
            .enumerate()
            .filter(|(_, c)| c.ends_with("_err"))
            .map(|(i, c)| (i, c.clone()))
            .collect()
    };
    if cols.is_empty() {
        return Err(Failure::user(format!("{name}: no error columns to plot")));
    }
    Ok(Chart {
        title: format!("Error per batch ({name})"),
        x_label: "batch t".into(),
        y_label: "error rate".into(),
        series: cols
            .into_iter()
            .map(|(c, label)| Series {
                label,
                points: xs.iter().copied().zip(table.values(c)).collect(),
            })
            .collect(),
    })
}

const WIDTH: f64 = 760.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 190.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;
const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

fn range(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if hi - lo < 1e-12 {
        let pad = if lo.abs() > 1e-12 { lo.abs() * 0.05 } else { 0.5 };
        (lo - pad, hi + pad)
    } else {
        (lo, hi)
    }
}

fn tick_label(v: f64) -> String {
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

pub fn render_svg(chart: &Chart) -> String {
    let pts = || chart.series.iter().flat_map(|s| s.points.iter());
    let (x0, x1) = range(pts().map(|p| p.0));
    let (y0, y1) = range(pts().map(|p| p.1));
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + ph - (y - y0) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        LEFT + pw / 2.0,
        escape(&chart.title)
    );
    let _ = writeln!(
        s,
        r##"<g stroke="#333" stroke-width="1"><line x1="{LEFT}" y1="{b}" x2="{r}" y2="{b}"/><line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{b}"/></g>"##,
        b = TOP + ph,
        r = LEFT + pw
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            sx(xv),
            TOP + ph + 16.0,
            tick_label(xv)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            LEFT - 6.0,
            sy(yv) + 4.0,
            tick_label(yv)
        );
    }
    let _ = writeln!(
        s,
        r#"<text class="axis-label" x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 12.0,
        escape(&chart.x_label)
    );
    let _ = writeln!(
        s,
        r#"<text class="axis-label" x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        escape(&chart.y_label)
    );
    for (i, series) in chart.series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let points: Vec<String> = series
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline data-series="{}" fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            escape(&series.label),
            points.join(" ")
        );
        let ly = TOP + 10.0 + 20.0 * i as f64;
        let lx = LEFT + pw + 15.0;
        let _ = writeln!(
            s,
            r#"<g class="legend"><line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="3"/><text x="{}" y="{}">{}</text></g>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            escape(&series.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Renders every CSV into `<dir>/<stem>.svg`; `dir` defaults to the CSV's
/// own directory. Returns the written paths.
pub fn report(paths: &[PathBuf], out_dir: Option<&Path>) -> Outcome<Vec<PathBuf>> {
    if paths.is_empty() {
        return Err(Failure::user("report needs at least one CSV file"));
    }
    let mut written = Vec::new();
    for path in paths {
        let table = read_table(path)?;
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "chart".into());
        let chart = chart_for(&table, &path.display().to_string())?;
        let dir = match out_dir {
            Some(d) => d.to_path_buf(),
            None => path.parent().map(Path::to_path_buf).unwrap_or_default(),
        };
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(&dir)?;
        }
        let target = dir.join(format!("{stem}.svg"));
        std::fs::write(&target, render_svg(&chart))?;
        written.push(target);
    }
    Ok(written)
}
