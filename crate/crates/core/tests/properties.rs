use ndarray::Array2;
use noble_core::baselines::knn::knn_graph;
use noble_core::baselines::regression::project_to_map;
use noble_core::datasets::synth::{synth_wifi, OccupancyMask, SynthWifiParams};
use noble_core::datasets::wifi::normalize_value;
use noble_core::grid::Bounds;
use noble_core::metrics::{position_error, summarize};
use noble_core::theory::sigmoid_rewrite;
use noble_core::{CellIndex, CellMap, GridSpec, Point};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Map;

fn point_cloud(max: usize) -> impl Strategy<Value = Vec<Point>> {
    prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0).prop_map(|(x, y)| [x, y]), 1..max)
}

fn square(origin: Point, size: f64) -> Bounds {
    Bounds {
        min_x: origin[0],
        min_y: origin[1],
        max_x: origin[0] + size,
        max_y: origin[1] + size,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn quantize_roundtrip_and_floor_rule(
        ox in -100.0f64..100.0, oy in -100.0f64..100.0,
        tau in 0.01f64..10.0,
        fx in 0.0f64..1.0, fy in 0.0f64..1.0,
    ) {
        let origin = [ox, oy];
        let size = 50.0 * tau;
        let spec = GridSpec::new(origin, tau, None, square(origin, size)).unwrap();
        let p = [ox + fx * size, oy + fy * size];
        let cell = spec.quantize(p).unwrap();
        prop_assert_eq!(cell.ix, ((p[0] - ox) / tau).floor() as i64);
        prop_assert_eq!(cell.iy, ((p[1] - oy) / tau).floor() as i64);
        let c = spec.centroid(cell, tau);
        prop_assert!(position_error(p, c) <= tau * 2f64.sqrt() / 2.0 * (1.0 + 1e-12));
        prop_assert_eq!(spec.quantize(p).unwrap(), cell);
    }

    #[test]
    fn gridline_points_take_the_larger_index(ix in 0i64..40, iy in 0i64..40, tau_q in 1u32..16) {
        let tau = f64::from(tau_q) * 0.25;
        let spec = GridSpec::new([0.0, 0.0], tau, None, square([0.0, 0.0], 50.0 * tau)).unwrap();
        let p = [ix as f64 * tau, iy as f64 * tau];
        prop_assert_eq!(spec.quantize(p).unwrap(), CellIndex::new(ix, iy));
    }

    #[test]
    fn out_of_bounds_points_are_rejected(dx in 0.001f64..10.0) {
        let spec = GridSpec::new([0.0, 0.0], 1.0, None, square([0.0, 0.0], 5.0)).unwrap();
        prop_assert!(spec.quantize([-dx, 1.0]).is_err());
        prop_assert!(spec.quantize([1.0, 5.0 + dx]).is_err());
    }

    #[test]
    fn cell_map_is_dense_bijective_and_order_free(points in point_cloud(200), tau in 0.5f64..8.0, seed in any::<u64>()) {
        let spec = GridSpec::fit(&points, tau, Some(5.0 * tau)).unwrap();
        let map = CellMap::build(spec.clone(), &points).unwrap();
        let fine = map.fine();
        for id in 0..map.fine_count() {
            let cell = fine.cell_of(id).unwrap();
            prop_assert_eq!(fine.class_of(cell), Some(id));
            prop_assert!(fine.count(id) >= 1);
        }
        prop_assert!(fine.cell_of(map.fine_count()).is_none());
        prop_assert_eq!((0..map.fine_count()).map(|id| fine.count(id)).sum::<usize>(), points.len());
        prop_assert!(fine.cells().windows(2).all(|w| (w[0].ix, w[0].iy) < (w[1].ix, w[1].iy)));
        for &p in &points {
            prop_assert!(map.fine_class(p).is_some());
        }

        let mut shuffled = points.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(&CellMap::build(spec, &shuffled).unwrap(), &map);
        prop_assert_eq!(&CellMap::from_text(&map.to_text()).unwrap(), &map);
    }

    #[test]
    fn fine_cells_nest_in_one_coarse_cell(ix in -30i64..30, iy in -30i64..30, m in 2u32..8, tau_q in 1u32..9) {
        let tau = f64::from(tau_q) * 0.25;
        let l = f64::from(m) * tau;
        let origin = [-40.0 * tau, -40.0 * tau];
        let spec = GridSpec::new(origin, tau, Some(l), square(origin, 80.0 * tau)).unwrap();
        let c = spec.centroid(CellIndex::new(ix + 40, iy + 40), tau);
        let home = spec.cell_unchecked(c, l);
        for (dx, dy) in [(-0.499, -0.499), (0.499, -0.499), (-0.499, 0.499), (0.499, 0.499)] {
            let corner = [c[0] + dx * tau, c[1] + dy * tau];
            prop_assert_eq!(spec.cell_unchecked(corner, l), home);
        }
    }

    #[test]
    fn labels_reference_occupied_neighbors_only(points in point_cloud(150), tau in 0.5f64..6.0) {
        let spec = GridSpec::fit(&points, tau, None).unwrap();
        let map = CellMap::build(spec, &points).unwrap();
        for &p in &points {
            let label = map.label_sample(p, true).unwrap();
            prop_assert!(label.fine_class < map.fine_count());
            prop_assert!(!label.extra_classes.contains(&label.fine_class));
            prop_assert!(label.extra_classes.windows(2).all(|w| w[0] < w[1]));
            let home = map.fine().cell_of(label.fine_class).unwrap();
            for &e in &label.extra_classes {
                let cell = map.fine().cell_of(e).unwrap();
                prop_assert!((cell.ix - home.ix).abs() <= 1 && (cell.iy - home.iy).abs() <= 1);
            }
            let all_neighbors = (-1..=1)
                .flat_map(|dx| (-1..=1).map(move |dy| (dx, dy)))
                .filter(|&d| d != (0, 0))
                .filter(|&(dx, dy)| map.fine().class_of(CellIndex::new(home.ix + dx, home.iy + dy)).is_some())
                .count();
            prop_assert_eq!(label.extra_classes.len(), all_neighbors);
            prop_assert!(map.label_sample(p, false).unwrap().extra_classes.is_empty());
        }
    }

    #[test]
    fn nearest_occupied_matches_brute_force(points in point_cloud(120), tau in 0.5f64..6.0,
                                            qx in -400.0f64..400.0, qy in -400.0f64..400.0) {
        let spec = GridSpec::fit(&points, tau, None).unwrap();
        let map = CellMap::build(spec, &points).unwrap();
        let q = [qx, qy];
        let mut best = (f64::INFINITY, usize::MAX);
        for id in 0..map.fine_count() {
            let d = position_error(q, map.fine_centroid(id));
            if d < best.0 {
                best = (d, id);
            }
        }
        prop_assert_eq!(map.nearest_occupied(q), best.1);
    }

    #[test]
    fn projection_never_moves_away_from_the_map(points in point_cloud(80), tau in 0.5f64..6.0,
                                                 preds in point_cloud(40)) {
        let spec = GridSpec::fit(&points, tau, None).unwrap();
        let map = CellMap::build(spec, &points).unwrap();
        let gap = |p: Point| position_error(p, map.nearest_occupied_centroid(p));
        for (before, after) in preds.iter().zip(project_to_map(&preds, &map)) {
            prop_assert!(map.is_on_map(after));
            prop_assert!(gap(after) <= gap(*before));
            if !map.is_on_map(*before) {
                prop_assert_eq!(gap(after), 0.0);
            }
        }
    }

    #[test]
    fn summary_ignores_test_order(rows in prop::collection::vec((0.0f64..50.0, any::<bool>(), any::<bool>()), 1..120),
                                  seed in any::<u64>()) {
        let run = |rows: &[(f64, bool, bool)]| {
            let errors: Vec<f64> = rows.iter().map(|r| r.0).collect();
            let hits: Vec<bool> = rows.iter().map(|r| r.1).collect();
            let off: Vec<bool> = rows.iter().map(|r| r.2).collect();
            summarize(&errors, &[("fine", &hits)], &off, Map::new()).unwrap()
        };
        let mut shuffled = rows.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let (a, b) = (run(&rows), run(&shuffled));
        prop_assert!((a.mean_m - b.mean_m).abs() <= 1e-12 * a.mean_m.max(1.0));
        prop_assert_eq!(a.median_m, b.median_m);
        prop_assert_eq!(a.hits, b.hits);
        prop_assert_eq!(a.off_map_rate, b.off_map_rate);
    }

    #[test]
    fn knn_graph_is_symmetric_and_exact(seed in any::<u64>(), n in 12usize..60, k in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((n, 3), |_| rng.random_range(-1.0..1.0));
        let g = knn_graph(x.view(), k).unwrap();
        for i in 0..n {
            prop_assert_eq!(g.knn[i].len(), k);
            let mut brute: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| ((&x.row(i) - &x.row(j)).mapv(|v| v * v).sum().sqrt(), j))
                .collect();
            brute.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let got: Vec<usize> = g.knn[i].iter().map(|e| e.0).collect();
            let want: Vec<usize> = brute.iter().take(k).map(|e| e.1).collect();
            prop_assert_eq!(got, want);
            for &(j, w) in &g.adjacency[i] {
                prop_assert!(j != i && w > 0.0);
                prop_assert!(g.adjacency[j].iter().any(|&(b, wb)| b == i && wb == w));
            }
        }
    }

    #[test]
    fn sigmoid_rewrite_holds_for_unit_vectors(seed in any::<u64>(), dim in 2usize..65) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut unit = || {
            let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            v.into_iter().map(|a| a / n).collect::<Vec<f64>>()
        };
        let (w, z) = (unit(), unit());
        let r = sigmoid_rewrite(&w, &z).unwrap();
        prop_assert!(r.residual < 1e-12);
    }

    #[test]
    fn rssi_normalization_is_monotone(a in -110.0f64..0.0, b in -110.0f64..0.0) {
        let (na, nb) = (normalize_value(a, -105.0, 105.0), normalize_value(b, -105.0, 105.0));
        prop_assert!((0.0..=1.0).contains(&na));
        if a <= b {
            prop_assert!(na <= nb);
        }
        prop_assert_eq!(normalize_value(100.0, -105.0, 105.0), 0.0);
    }
}

/// Two-sample Kolmogorov–Smirnov statistic.
fn ks_statistic(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut worst) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        worst = worst.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    worst
}

#[test]
fn synthetic_positions_match_rejection_sampling() {
    let mask = OccupancyMask::campus();
    let pairs = 10_000;
    let mut params = SynthWifiParams::campus(2 * pairs, 0.0);
    params.test_fraction = 0.0;
    let corpus = synth_wifi(&mask, &params, 17).unwrap();
    let generated: Vec<Point> = corpus.train.iter().chain(&corpus.test).map(|s| s.position).collect();
    assert_eq!(generated.len(), 2 * pairs);
    assert!(generated.iter().all(|&p| mask.is_accessible(p)));

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut oracle = Vec::with_capacity(2 * pairs);
    while oracle.len() < 2 * pairs {
        let p = [rng.random_range(0.0..mask.width()), rng.random_range(0.0..mask.height())];
        if mask.is_accessible(p) {
            oracle.push(p);
        }
    }
    let distances = |pts: &[Point]| pts.chunks(2).map(|c| position_error(c[0], c[1])).collect::<Vec<f64>>();
    let d = ks_statistic(distances(&generated), distances(&oracle));
    assert!(d < 0.05, "KS statistic {d}");
}

#[test]
fn ks_statistic_oracle() {
    assert_eq!(ks_statistic(vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0]), 0.0);
    assert_eq!(ks_statistic(vec![0.0, 0.1], vec![5.0, 6.0]), 1.0);
    assert!((ks_statistic(vec![1.0, 2.0, 3.0, 4.0], vec![3.5, 4.5, 5.5, 6.5]) - 0.75).abs() < 1e-15);
}
