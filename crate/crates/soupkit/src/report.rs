//! Metrics tables, interpolation-curve reports and ternary SVG plots.

use std::fmt::Write as _;

use serde_json::{json, Value};
use soupkit_core::mixer::{barycentric_cells, SimplexGridSpec};
use soupkit_core::soup::lmc_from_curve;

use crate::error::{Error, Result};

pub const METRICS_HEADER: &str = "mixture_id,weights,split,metric,value";

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub mixture_id: String,
    pub weights: Vec<f64>,
    pub split: String,
    pub metric: String,
    pub value: f64,
}

fn join_weights(w: &[f64]) -> String {
    w.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";")
}

/// CSV text with the fixed header. Floats use the shortest representation
/// that parses back to the same value.
pub fn format_metrics_csv(rows: &[MetricRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{}", r.mixture_id, join_weights(&r.weights), r.split, r.metric, r.value);
    }
    out
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == METRICS_HEADER => {}
        _ => return Err(Error::BadMetrics { line: 1, reason: format!("expected header `{METRICS_HEADER}`") }),
    }
    lines
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, line)| {
            let bad = |reason: &str| Error::BadMetrics { line: i + 1, reason: reason.to_string() };
            let cols: Vec<&str> = line.split(',').collect();
            let [id, weights, split, metric, value] = cols[..] else {
                return Err(bad("expected 5 columns"));
            };
            let weights = weights
                .split(';')
                .map(|w| w.parse::<f64>().map_err(|_| bad("unparsable weight")))
                .collect::<Result<Vec<_>>>()?;
            let value = value.parse().map_err(|_| bad("unparsable value"))?;
            Ok(MetricRow { mixture_id: id.into(), weights, split: split.into(), metric: metric.into(), value })
        })
        .collect()
}

fn select<'a>(rows: &'a [MetricRow], split: &'a str, metric: &'a str) -> impl Iterator<Item = &'a MetricRow> {
    rows.iter().filter(move |r| r.split == split && r.metric == metric)
}

/// Rows named `{prefix}{index}`, keyed by index.
fn indexed<'a>(rows: &[&'a MetricRow], prefix: &str) -> Vec<(usize, &'a MetricRow)> {
    let mut out: Vec<(usize, &MetricRow)> =
        rows.iter().filter_map(|r| r.mixture_id.strip_prefix(prefix)?.parse().ok().map(|i| (i, *r))).collect();
    out.sort_by_key(|(i, _)| *i);
    out
}

/// One point of an interpolation sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub lambda: f64,
    pub metric: f64,
    pub chord: f64,
    pub satisfied: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveReport {
    pub rows: Vec<CurveRow>,
    pub lmc_holds: bool,
    pub violations: Vec<usize>,
}

/// LMC view of the `lambda{k}` rows of a pair sweep, in index order. The
/// mixing coefficient is the weight on the second ingredient.
pub fn report_curve(rows: &[MetricRow], split: &str, metric: &str) -> Result<CurveReport> {
    let picked: Vec<&MetricRow> = select(rows, split, metric).collect();
    let points = indexed(&picked, "lambda");
    if points.len() < 2 {
        return Err(Error::MissingRows(format!("need 2+ `lambda` rows for {split}/{metric}, found {}", points.len())));
    }
    if let Some(k) = points.iter().enumerate().find_map(|(pos, (k, _))| (pos != *k).then_some(pos)) {
        return Err(Error::MissingRows(format!("row lambda{k} missing for {split}/{metric}")));
    }
    let mut lambdas = Vec::with_capacity(points.len());
    for (k, r) in &points {
        let [_, l] = r.weights[..] else {
            return Err(Error::MissingRows(format!("lambda{k} does not carry two weights")));
        };
        lambdas.push(l);
    }
    let curve: Vec<f64> = points.iter().map(|(_, r)| r.value).collect();
    let lmc = lmc_from_curve(&lambdas, &curve)?;
    let rows = (0..lambdas.len())
        .map(|i| CurveRow {
            lambda: lmc.lambdas[i],
            metric: lmc.curve[i],
            chord: lmc.chord[i],
            satisfied: lmc.satisfied[i],
        })
        .collect();
    Ok(CurveReport { rows, lmc_holds: lmc.lmc_holds, violations: lmc.violations })
}

impl CurveReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("lambda,metric,chord,satisfied\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{}", r.lambda, r.metric, r.chord, r.satisfied);
        }
        out
    }

    pub fn to_json(&self, split: &str, metric: &str) -> Value {
        json!({
            "split": split,
            "metric": metric,
            "lambdas": self.rows.iter().map(|r| r.lambda).collect::<Vec<_>>(),
            "curve": self.rows.iter().map(|r| r.metric).collect::<Vec<_>>(),
            "chord": self.rows.iter().map(|r| r.chord).collect::<Vec<_>>(),
            "satisfied": self.rows.iter().map(|r| r.satisfied).collect::<Vec<_>>(),
            "lmc_holds": self.lmc_holds,
            "violations": self.violations,
        })
    }
}

const SIZE: f64 = 400.0;
const MARGIN: f64 = 40.0;

/// Plot position of a barycentric point: ingredient 0 at the apex,
/// 1 bottom left, 2 bottom right.
fn project(w: [f64; 3]) -> (f64, f64) {
    let h = SIZE * 3f64.sqrt() / 2.0;
    let corners = [(SIZE / 2.0, 0.0), (0.0, h), (SIZE, h)];
    let x = w.iter().zip(&corners).map(|(a, c)| a * c.0).sum::<f64>();
    let y = w.iter().zip(&corners).map(|(a, c)| a * c.1).sum::<f64>();
    (MARGIN + x, MARGIN + y)
}

/// Diverging color: white at the anchor, red above, blue below.
fn color(value: f64, anchor: f64, span: f64) -> String {
    let t = if span > 0.0 { ((value - anchor) / span).clamp(-1.0, 1.0) } else { 0.0 };
    let fade = (255.0 * (1.0 - t.abs())).round() as u8;
    if t >= 0.0 {
        format!("#ff{fade:02x}{fade:02x}")
    } else {
        format!("#{fade:02x}{fade:02x}ff")
    }
}

/// Ternary plot of a 3-ingredient simplex sweep: one `<path>` per grid cell
/// (`grid{i}` rows) and one circle per corner (`corner{j}` rows). Colors
/// diverge around the mean of the three corners.
pub fn emit_ternary_svg(rows: &[MetricRow], split: &str, metric: &str) -> Result<String> {
    let picked: Vec<&MetricRow> = select(rows, split, metric).collect();
    let cells = indexed(&picked, "grid");
    let corners = indexed(&picked, "corner");
    let n = (1..=cells.len()).find(|n| n * n >= cells.len()).unwrap_or(0);
    if cells.is_empty() || n * n != cells.len() {
        return Err(Error::IncompleteGrid(format!(
            "{} grid rows for {split}/{metric} do not form a full grid",
            cells.len()
        )));
    }
    if let Some(i) = cells.iter().enumerate().find_map(|(pos, (i, _))| (pos != *i).then_some(pos)) {
        return Err(Error::IncompleteGrid(format!("row grid{i} missing")));
    }
    if corners.len() != 3 || corners.iter().enumerate().any(|(pos, (j, _))| pos != *j) {
        return Err(Error::IncompleteGrid("corner0, corner1 and corner2 are all required".into()));
    }
    let anchor = corners.iter().map(|(_, r)| r.value).sum::<f64>() / 3.0;
    let span = cells.iter().chain(&corners).map(|(_, r)| (r.value - anchor).abs()).fold(0.0, f64::max);
    let lattice = barycentric_cells(&SimplexGridSpec::triangle(n))?;

    let side = SIZE + 2.0 * MARGIN;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{side}" height="{side}" viewBox="0 0 {side} {side}">"#
    );
    let _ = writeln!(svg, "<title>{metric} on {split}, anchored at corner mean {anchor}</title>");
    for ((_, row), cell) in cells.iter().zip(&lattice) {
        let pts: Vec<String> = cell
            .iter()
            .map(|v| {
                let (x, y) = project(v.map(|c| c as f64 / n as f64));
                format!("{x:.3},{y:.3}")
            })
            .collect();
        let _ = writeln!(
            svg,
            r##"<path d="M{}L{}L{}Z" fill="{}" stroke="#888888" stroke-width="0.5"><title>{} {}</title></path>"##,
            pts[0],
            pts[1],
            pts[2],
            color(row.value, anchor, span),
            row.mixture_id,
            row.value
        );
    }
    for (j, row) in &corners {
        let mut w = [0.0; 3];
        w[*j] = 1.0;
        let (x, y) = project(w);
        let _ = writeln!(
            svg,
            r##"<circle cx="{x:.3}" cy="{y:.3}" r="12" fill="{}" stroke="#000000"><title>{} {}</title></circle>"##,
            color(row.value, anchor, span),
            row.mixture_id,
            row.value
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}
