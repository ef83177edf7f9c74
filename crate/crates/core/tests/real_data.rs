//! Checks against the published corpora. Each test returns early unless the
//! corresponding environment variable points at the downloaded files:
//! `NOBLE_UJI_DIR` (directory with `trainingData.csv` and
//! `validationData.csv`) and `NOBLE_IPIN_CSV`.

use std::collections::HashSet;
use std::path::PathBuf;

use noble_core::datasets::wifi::{load_ipin2016, load_ujiindoorloc};
use noble_core::{CellMap, GridSpec, Point, WifiCorpus};

fn extent(corpus: &WifiCorpus) -> (f64, f64) {
    let pts: Vec<Point> = corpus.train.iter().chain(&corpus.test).map(|s| s.position).collect();
    let span = |axis: usize| {
        let lo = pts.iter().map(|p| p[axis]).fold(f64::INFINITY, f64::min);
        let hi = pts.iter().map(|p| p[axis]).fold(f64::NEG_INFINITY, f64::max);
        hi - lo
    };
    (span(0), span(1))
}

#[test]
fn ujiindoorloc_shape_and_quantization() {
    let Some(dir) = std::env::var_os("NOBLE_UJI_DIR").map(PathBuf::from) else {
        eprintln!("NOBLE_UJI_DIR not set; skipped");
        return;
    };
    let corpus = load_ujiindoorloc(&dir.join("trainingData.csv"), &dir.join("validationData.csv")).unwrap();
    assert_eq!(corpus.train.len(), 19_937);
    assert_eq!(corpus.test.len(), 3_987);
    assert_eq!(corpus.wap_count, 520);
    let (w, h) = extent(&corpus);
    assert!((w - 397.0).abs() <= 10.0 && (h - 273.0).abs() <= 10.0, "extent {w} x {h}");

    let points = corpus.train_positions();
    let spec = GridSpec::fit(&points, 0.2, None).unwrap();
    let map = CellMap::build(spec.clone(), &points).unwrap();
    let cells: HashSet<(i64, i64)> = points
        .iter()
        .map(|p| {
            (
                ((p[0] - spec.origin_x) / 0.2).floor() as i64,
                ((p[1] - spec.origin_y) / 0.2).floor() as i64,
            )
        })
        .collect();
    assert_eq!(map.fine_count(), cells.len());
    assert!(map.fine_count() <= 19_937);
    assert!(points.iter().all(|&p| map.fine_class(p).is_some()));
}

#[test]
fn ipin2016_shape() {
    let Some(path) = std::env::var_os("NOBLE_IPIN_CSV").map(PathBuf::from) else {
        eprintln!("NOBLE_IPIN_CSV not set; skipped");
        return;
    };
    let corpus = load_ipin2016(&path, 0).unwrap();
    assert_eq!(corpus.train.len(), 742);
    assert_eq!(corpus.test.len(), 185);
    assert_eq!(corpus.wap_count, 168);
    let (w, h) = extent(&corpus);
    let (short, long) = (w.min(h), w.max(h));
    assert!((short - 6.0).abs() <= 1.0 && (long - 31.0).abs() <= 1.0, "extent {w} x {h}");
    assert_eq!(load_ipin2016(&path, 0).unwrap(), corpus);
}
