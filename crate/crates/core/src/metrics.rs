//! Position-error statistics, hit rates, and scatter output.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::datasets::store::write_atomic;
use crate::error::{Error, Result};
use crate::grid::{CellMap, Point};

pub fn position_error(pred: Point, truth: Point) -> f64 {
    (pred[0] - truth[0]).hypot(pred[1] - truth[1])
}

/// Serialized as `metrics.json`; field order is the on-disk key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mean_m: f64,
    pub median_m: f64,
    pub hits: BTreeMap<String, f64>,
    pub off_map_rate: f64,
    pub n: usize,
    pub config: Map<String, Value>,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json().as_bytes())
    }
}

/// Lower-middle element of the sorted values.
pub fn lower_median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Some(sorted[(sorted.len() - 1) / 2])
}

/// Summarizes per-sample errors, per-head hit flags and off-map flags.
/// Sums run over sorted values so the result does not depend on input order.
pub fn summarize(
    errors: &[f64],
    hits: &[(&str, &[bool])],
    off_map: &[bool],
    config: Map<String, Value>,
) -> Result<MetricsReport> {
    let n = errors.len();
    if n == 0 {
        return Err(Error::EmptyEvaluation);
    }
    for (_, flags) in hits {
        if flags.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: flags.len(),
            });
        }
    }
    if off_map.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: off_map.len(),
        });
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mean = sorted.iter().sum::<f64>() / n as f64;
    let rate = |flags: &[bool]| flags.iter().filter(|&&b| b).count() as f64 / n as f64;
    Ok(MetricsReport {
        mean_m: mean,
        median_m: sorted[(n - 1) / 2],
        hits: hits
            .iter()
            .map(|(name, flags)| ((*name).to_string(), rate(flags)))
            .collect(),
        off_map_rate: rate(off_map),
        n,
        config,
    })
}

/// Report for (truth, prediction) pairs judged against a cell map: a
/// prediction is off-map when its fine cell is out of bounds or unoccupied,
/// and a fine hit when it lands in the truth's occupied cell.
pub fn evaluate_positions(
    pairs: &[(Point, Point)],
    map: &CellMap,
    config: Map<String, Value>,
) -> Result<MetricsReport> {
    let errors: Vec<f64> = pairs.iter().map(|(t, p)| position_error(*p, *t)).collect();
    let off_map: Vec<bool> = pairs.iter().map(|(_, p)| !map.is_on_map(*p)).collect();
    let fine: Vec<bool> = pairs
        .iter()
        .map(|(t, p)| {
            let predicted = map.fine_class(*p);
            predicted.is_some() && predicted == map.fine_class(*t)
        })
        .collect();
    summarize(&errors, &[("fine", &fine)], &off_map, config)
}

/// Writes `<stem>.csv` (`true_x,true_y,pred_x,pred_y`) and an SVG quick-look
/// `<stem>.svg` next to it. `csv_path` names the CSV file.
pub fn emit_scatter(pairs: &[(Point, Point)], csv_path: &Path) -> Result<()> {
    let mut csv = String::from("true_x,true_y,pred_x,pred_y\n");
    for (t, p) in pairs {
        let _ = writeln!(csv, "{},{},{},{}", t[0], t[1], p[0], p[1]);
    }
    write_atomic(csv_path, csv.as_bytes())?;
    write_atomic(&csv_path.with_extension("svg"), scatter_svg(pairs).as_bytes())
}

/// Axis-equal point plot: truths gray, predictions blue, y pointing up.
pub fn scatter_svg(pairs: &[(Point, Point)]) -> String {
    let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in pairs.iter().flat_map(|(t, p)| [t, p]) {
        if p[0].is_finite() && p[1].is_finite() {
            x0 = x0.min(p[0]);
            y0 = y0.min(p[1]);
            x1 = x1.max(p[0]);
            y1 = y1.max(p[1]);
        }
    }
    if !x0.is_finite() {
        (x0, y0, x1, y1) = (0.0, 0.0, 1.0, 1.0);
    }
    let span = (x1 - x0).max(y1 - y0).max(1e-9);
    let size = 600.0;
    let margin = 20.0;
    let scale = (size - 2.0 * margin) / span;
    let width = (x1 - x0) * scale + 2.0 * margin;
    let height = (y1 - y0) * scale + 2.0 * margin;
    let sx = |x: f64| margin + (x - x0) * scale;
    let sy = |y: f64| height - margin - (y - y0) * scale;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.1}" height="{height:.1}" viewBox="0 0 {width:.1} {height:.1}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (color, pick) in [("#999999", 0usize), ("#1f77b4", 1usize)] {
        let _ = writeln!(svg, r#"<g fill="{color}" fill-opacity="0.6">"#);
        for pair in pairs {
            let p = if pick == 0 { pair.0 } else { pair.1 };
            if p[0].is_finite() && p[1].is_finite() {
                let _ = writeln!(svg, r#"<circle cx="{:.2}" cy="{:.2}" r="2"/>"#, sx(p[0]), sy(p[1]));
            }
        }
        let _ = writeln!(svg, "</g>");
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_four_five() {
        assert_eq!(position_error([0.0, 3.0], [4.0, 0.0]), 5.0);
        assert_eq!(position_error([1.5, -2.0], [1.5, -2.0]), 0.0);
        assert_eq!(position_error([1.0, 2.0], [7.0, -3.0]), position_error([7.0, -3.0], [1.0, 2.0]));
    }

    #[test]
    fn lower_middle_median() {
        let r = summarize(&[4.0, 1.0, 3.0, 2.0], &[], &[false; 4], Map::new()).unwrap();
        assert_eq!(r.mean_m, 2.5);
        assert_eq!(r.median_m, 2.0);
        assert_eq!(r.off_map_rate, 0.0);
        assert_eq!(r.n, 4);
    }

    #[test]
    fn rates_and_empty() {
        let all = [true; 3];
        let some = [true, false, false];
        let r = summarize(&[1.0; 3], &[("fine", &all), ("floor", &some)], &some, Map::new()).unwrap();
        assert_eq!(r.hits["fine"], 1.0);
        assert!((r.hits["floor"] - 1.0 / 3.0).abs() < 1e-15);
        assert!((r.off_map_rate - 1.0 / 3.0).abs() < 1e-15);
        assert!(matches!(summarize(&[], &[], &[], Map::new()), Err(Error::EmptyEvaluation)));
    }

    #[test]
    fn json_key_order_is_fixed() {
        let mut config = Map::new();
        config.insert("tau".into(), Value::from(2.0));
        let r = summarize(&[1.0], &[("fine", &[true])], &[false], config).unwrap();
        let json = r.to_json();
        let keys = ["\"mean_m\"", "\"median_m\"", "\"hits\"", "\"off_map_rate\"", "\"n\"", "\"config\""];
        let positions: Vec<usize> = keys.iter().map(|k| json.find(k).unwrap()).collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]), "{json}");
    }

    #[test]
    fn scatter_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scatter.csv");
        emit_scatter(&[([0.0, 0.0], [1.0, 1.0]), ([2.0, 3.0], [2.5, 3.5])], &path).unwrap();
        let csv = std::fs::read_to_string(&path).unwrap();
        assert_eq!(csv.lines().count(), 3);
        assert_eq!(csv.lines().next().unwrap(), "true_x,true_y,pred_x,pred_y");
        let svg = std::fs::read_to_string(dir.path().join("scatter.svg")).unwrap();
        let doc = roxmltree::Document::parse(&svg).unwrap();
        let circles = doc.descendants().filter(|n| n.has_tag_name("circle")).count();
        assert_eq!(circles, 4);
    }
}
