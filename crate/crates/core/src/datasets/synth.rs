//! Seeded synthetic corpora over an occupancy mask.
//!
//! The default mask mimics a small campus: a ring-shaped building around an
//! inaccessible courtyard and an L-shaped second building, separated by open
//! ground. Wi-Fi samples follow a log-distance path-loss model; IMU paths come
//! from a lattice walk whose gaps carry idealized accelerometer and gyroscope
//! profiles plus Gaussian noise.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::imu::{build_imu_paths, ImuCorpus, ReferenceWalk, Segment, SplitRule};
use super::wifi::{WifiCorpus, WifiSample, FLOOR_DBM, NOT_DETECTED};
use crate::error::{Error, Result};
use crate::grid::Point;

pub const GRAVITY: f64 = 9.80665;

/// Axis-aligned rectangle `[x0, x1) x [y0, y1)` in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self { x0, y0, x1, y1 }
    }

    fn contains(&self, p: Point) -> bool {
        p[0] >= self.x0 && p[0] < self.x1 && p[1] >= self.y0 && p[1] < self.y1
    }
}

/// Raster of accessible ground. Each accessible cell carries a building ID.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyMask {
    pub cell: f64,
    pub cols: usize,
    pub rows: usize,
    /// Row-major (`iy * cols + ix`); `None` is inaccessible.
    pub buildings: Vec<Option<usize>>,
}

impl OccupancyMask {
    /// Rasterizes `(building, rect)` pairs, then clears every hole.
    pub fn from_rects(
        cell: f64,
        width: f64,
        height: f64,
        solids: &[(usize, Rect)],
        holes: &[Rect],
    ) -> Self {
        let cols = (width / cell).ceil() as usize;
        let rows = (height / cell).ceil() as usize;
        let mut buildings = vec![None; cols * rows];
        for iy in 0..rows {
            for ix in 0..cols {
                let c = [(ix as f64 + 0.5) * cell, (iy as f64 + 0.5) * cell];
                if holes.iter().any(|h| h.contains(c)) {
                    continue;
                }
                if let Some((b, _)) = solids.iter().find(|(_, r)| r.contains(c)) {
                    buildings[iy * cols + ix] = Some(*b);
                }
            }
        }
        Self {
            cell,
            cols,
            rows,
            buildings,
        }
    }

    /// A 60 m x 40 m campus: building 0 is a ring around a 12 m x 24 m
    /// courtyard, building 1 an L shape.
    pub fn campus() -> Self {
        Self::from_rects(
            1.0,
            60.0,
            40.0,
            &[
                (0, Rect::new(0.0, 0.0, 26.0, 40.0)),
                (1, Rect::new(34.0, 0.0, 60.0, 12.0)),
                (1, Rect::new(34.0, 12.0, 46.0, 40.0)),
            ],
            &[Rect::new(7.0, 8.0, 19.0, 32.0)],
        )
    }

    pub fn width(&self) -> f64 {
        self.cols as f64 * self.cell
    }

    pub fn height(&self) -> f64 {
        self.rows as f64 * self.cell
    }

    pub fn building_at(&self, p: Point) -> Option<usize> {
        if p[0] < 0.0 || p[1] < 0.0 {
            return None;
        }
        let ix = (p[0] / self.cell).floor() as usize;
        let iy = (p[1] / self.cell).floor() as usize;
        if ix >= self.cols || iy >= self.rows {
            return None;
        }
        self.buildings[iy * self.cols + ix]
    }

    pub fn is_accessible(&self, p: Point) -> bool {
        self.building_at(p).is_some()
    }

    pub fn accessible_cells(&self) -> Vec<(usize, usize)> {
        (0..self.rows)
            .flat_map(|iy| (0..self.cols).map(move |ix| (ix, iy)))
            .filter(|&(ix, iy)| self.buildings[iy * self.cols + ix].is_some())
            .collect()
    }

    /// Uniform position over the accessible area.
    pub fn sample_uniform(&self, cells: &[(usize, usize)], rng: &mut impl Rng) -> Point {
        let (ix, iy) = cells[rng.random_range(0..cells.len())];
        [
            (ix as f64 + rng.random::<f64>()) * self.cell,
            (iy as f64 + rng.random::<f64>()) * self.cell,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthWifiParams {
    pub access_points: Vec<Point>,
    pub n_samples: usize,
    pub test_fraction: f64,
    /// Received power at the 1 m reference distance.
    pub p0_dbm: f64,
    pub path_loss_exponent: f64,
    pub noise_dbm: f64,
    /// Readings weaker than this are reported as not detected.
    pub dropout_dbm: f64,
    /// When set, positions are drawn from survey points on this lattice
    /// instead of uniformly over the accessible area.
    pub survey_spacing: Option<f64>,
}

impl SynthWifiParams {
    /// Sixteen access points spread over both buildings.
    pub fn campus(n_samples: usize, noise_dbm: f64) -> Self {
        let access_points = vec![
            [3.0, 4.0],
            [22.0, 4.0],
            [3.0, 20.0],
            [22.0, 20.0],
            [3.0, 36.0],
            [22.0, 36.0],
            [13.0, 3.0],
            [13.0, 37.0],
            [37.0, 3.0],
            [50.0, 6.0],
            [57.0, 10.0],
            [38.0, 20.0],
            [43.0, 28.0],
            [38.0, 37.0],
            [30.0, 20.0],
            [30.0, 2.0],
        ];
        Self {
            access_points,
            n_samples,
            test_fraction: 0.2,
            p0_dbm: -30.0,
            path_loss_exponent: 2.0,
            noise_dbm,
            dropout_dbm: -95.0,
            survey_spacing: None,
        }
    }
}

/// Log-distance path loss with a 1 m reference distance.
pub fn path_loss_rssi(p0_dbm: f64, exponent: f64, distance: f64) -> f64 {
    p0_dbm - 10.0 * exponent * distance.max(1.0).log10()
}

pub fn synth_wifi(mask: &OccupancyMask, params: &SynthWifiParams, seed: u64) -> Result<WifiCorpus> {
    if params.access_points.is_empty() {
        return Err(Error::InvalidConfig("need at least one access point".into()));
    }
    if !(0.0..1.0).contains(&params.test_fraction) {
        return Err(Error::InvalidConfig("test_fraction must be in [0, 1)".into()));
    }
    let cells = mask.accessible_cells();
    if cells.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let survey: Option<Vec<Point>> = params.survey_spacing.map(|s| {
        let mut pts = Vec::new();
        let mut y = s / 2.0;
        while y < mask.height() {
            let mut x = s / 2.0;
            while x < mask.width() {
                if mask.is_accessible([x, y]) {
                    pts.push([x, y]);
                }
                x += s;
            }
            y += s;
        }
        pts
    });
    if survey.as_ref().is_some_and(Vec::is_empty) {
        return Err(Error::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, params.noise_dbm.max(0.0)).map_err(|e| {
        Error::InvalidConfig(format!("noise: {e}"))
    })?;
    let mut samples = Vec::with_capacity(params.n_samples);
    for _ in 0..params.n_samples {
        let position = match &survey {
            Some(pts) => pts[rng.random_range(0..pts.len())],
            None => mask.sample_uniform(&cells, &mut rng),
        };
        let rssi = params
            .access_points
            .iter()
            .map(|ap| {
                let d = (ap[0] - position[0]).hypot(ap[1] - position[1]);
                let mut v = path_loss_rssi(params.p0_dbm, params.path_loss_exponent, d);
                if params.noise_dbm > 0.0 {
                    v += noise.sample(&mut rng);
                }
                let v = v.clamp(FLOOR_DBM, 0.0);
                if v < params.dropout_dbm {
                    NOT_DETECTED
                } else {
                    v
                }
            })
            .collect();
        samples.push(WifiSample {
            rssi,
            position,
            building: mask.building_at(position),
            floor: None,
            space_id: None,
        });
    }
    let n_test = (params.n_samples as f64 * params.test_fraction).round() as usize;
    let test = samples.split_off(samples.len() - n_test);
    Ok(WifiCorpus {
        train: samples,
        test,
        wap_count: params.access_points.len(),
        normalization: None,
        offset: [0.0, 0.0],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthImuParams {
    /// Distance between neighboring lattice nodes of the walk.
    pub lattice_step: f64,
    pub walk_points: usize,
    pub readings_per_gap: usize,
    pub sample_rate_hz: f64,
    pub accel_noise: f64,
    pub gyro_noise: f64,
    /// Probability of continuing straight when that move is available.
    pub straight_prob: f64,
    pub paths: usize,
    pub max_len: usize,
    pub split: SplitRule,
}

impl Default for SynthImuParams {
    fn default() -> Self {
        Self {
            lattice_step: 4.0,
            walk_points: 30,
            readings_per_gap: 768,
            sample_rate_hz: 50.0,
            accel_noise: 0.02,
            gyro_noise: 0.005,
            straight_prob: 0.6,
            paths: 1500,
            max_len: 50,
            split: SplitRule::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticImu {
    pub corpus: ImuCorpus,
    pub walk: ReferenceWalk,
    /// Heading change applied during each gap (radians).
    pub gap_turns: Vec<f64>,
}

/// Noise-free readings for one gap: the walker starts and ends at rest,
/// moving along `delta` with a raised-cosine speed profile while yawing
/// smoothly by `turn`. Horizontal acceleration is expressed in the
/// navigation frame. Each row holds the mean acceleration and yaw rate over
/// one sampling interval, so integrating rows reproduces `delta` and `turn`.
pub fn ideal_gap_profile(delta: Point, turn: f64, rows: usize, rate_hz: f64) -> Vec<[f64; 6]> {
    let dt = 1.0 / rate_hz;
    let period = rows as f64 * dt;
    let speed = |t: f64, k: usize| delta[k] / period * (1.0 - (2.0 * PI * t / period).cos());
    let yaw = |t: f64| turn * (t / period - (2.0 * PI * t / period).sin() / (2.0 * PI));
    (0..rows)
        .map(|r| {
            let (t0, t1) = (r as f64 * dt, (r + 1) as f64 * dt);
            [
                (speed(t1, 0) - speed(t0, 0)) / dt,
                (speed(t1, 1) - speed(t0, 1)) / dt,
                GRAVITY,
                0.0,
                0.0,
                (yaw(t1) - yaw(t0)) / dt,
            ]
        })
        .collect()
}

/// Random lattice walk constrained to the mask; returns node positions.
fn lattice_walk(
    mask: &OccupancyMask,
    step: f64,
    points: usize,
    straight_prob: f64,
    rng: &mut impl Rng,
) -> Result<Vec<Point>> {
    let nx = (mask.width() / step).floor() as i64;
    let ny = (mask.height() / step).floor() as i64;
    let pos = |ix: i64, iy: i64| [(ix as f64 + 0.5) * step, (iy as f64 + 0.5) * step];
    let ok = |ix: i64, iy: i64| {
        ix >= 0 && iy >= 0 && ix < nx && iy < ny && mask.is_accessible(pos(ix, iy))
    };
    let nodes: Vec<(i64, i64)> = (0..ny)
        .flat_map(|iy| (0..nx).map(move |ix| (ix, iy)))
        .filter(|&(ix, iy)| ok(ix, iy))
        .collect();
    if nodes.is_empty() {
        return Err(Error::InsufficientWalk("no accessible lattice nodes".into()));
    }
    const DIRS: [(i64, i64); 4] = [(1, 0), (0, 1), (-1, 0), (0, -1)];
    let (mut ix, mut iy) = nodes[rng.random_range(0..nodes.len())];
    let mut dir = rng.random_range(0..4usize);
    let mut out = vec![pos(ix, iy)];
    while out.len() < points {
        let open = |d: usize| ok(ix + DIRS[d].0, iy + DIRS[d].1);
        let turns: Vec<usize> = [(dir + 1) % 4, (dir + 3) % 4]
            .into_iter()
            .filter(|&d| open(d))
            .collect();
        dir = if open(dir) && (turns.is_empty() || rng.random::<f64>() < straight_prob) {
            dir
        } else if !turns.is_empty() {
            turns[rng.random_range(0..turns.len())]
        } else if open((dir + 2) % 4) {
            (dir + 2) % 4
        } else {
            return Err(Error::InsufficientWalk("walk start is an isolated node".into()));
        };
        ix += DIRS[dir].0;
        iy += DIRS[dir].1;
        out.push(pos(ix, iy));
    }
    Ok(out)
}

fn heading(delta: Point) -> f64 {
    delta[1].atan2(delta[0])
}

pub fn synth_imu(mask: &OccupancyMask, params: &SynthImuParams, seed: u64) -> Result<SyntheticImu> {
    if params.walk_points < 2 {
        return Err(Error::InsufficientWalk("need at least 2 walk points".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = lattice_walk(
        mask,
        params.lattice_step,
        params.walk_points,
        params.straight_prob,
        &mut rng,
    )?;
    let accel = Normal::new(0.0, params.accel_noise.max(0.0))
        .map_err(|e| Error::InvalidConfig(format!("accel noise: {e}")))?;
    let gyro = Normal::new(0.0, params.gyro_noise.max(0.0))
        .map_err(|e| Error::InvalidConfig(format!("gyro noise: {e}")))?;

    let mut segments = Vec::with_capacity(points.len() - 1);
    let mut gap_turns = Vec::with_capacity(points.len() - 1);
    let mut previous: Option<f64> = None;
    for w in points.windows(2) {
        let delta = [w[1][0] - w[0][0], w[1][1] - w[0][1]];
        let h = heading(delta);
        let turn = previous.map_or(0.0, |p| {
            let mut t = h - p;
            while t > PI + 1e-9 {
                t -= 2.0 * PI;
            }
            while t < -PI + 1e-9 {
                t += 2.0 * PI;
            }
            t
        });
        previous = Some(h);
        gap_turns.push(turn);
        let mut data = Vec::with_capacity(params.readings_per_gap * 6);
        for row in ideal_gap_profile(delta, turn, params.readings_per_gap, params.sample_rate_hz) {
            for (axis, v) in row.into_iter().enumerate() {
                let n = if axis < 3 {
                    if params.accel_noise > 0.0 {
                        accel.sample(&mut rng)
                    } else {
                        0.0
                    }
                } else if params.gyro_noise > 0.0 {
                    gyro.sample(&mut rng)
                } else {
                    0.0
                };
                data.push((v + n) as f32);
            }
        }
        segments.push(Segment::new(params.readings_per_gap, 6, data)?);
    }
    let walk = ReferenceWalk::new(points, segments)?;
    let corpus = build_imu_paths(
        &walk,
        params.max_len,
        params.paths,
        seed.wrapping_add(0x5eed),
        params.split,
    )?;
    Ok(SyntheticImu {
        corpus,
        walk,
        gap_turns,
    })
}
