//! IMU path corpora built from a reference walk.
//!
//! A reference walk is an ordered list of surveyed locations with one block of
//! inertial readings per gap between consecutive locations. Paths are
//! contiguous stretches of that walk: a random start, a random number of gaps,
//! and the concatenated readings in walk order.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Point;

/// Readings per gap per axis in full-scale data.
pub const SEGMENT_ROWS: usize = 768;
/// Three accelerometer plus three gyroscope axes.
pub const SEGMENT_AXES: usize = 6;
pub const MAX_PATH_LEN: usize = 50;
pub const REFERENCE_COUNT: usize = 177;
pub const FULL_SCALE_PATH_COUNT: usize = 6857;
pub const FULL_SCALE_SPLIT_COUNTS: (usize, usize) = (4389, 1096);
pub const SAMPLE_RATE_HZ: f64 = 50.0;

/// One gap's readings, `rows` samples by `cols` axes, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Segment {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                actual: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Row-major readings; also the flattened input of the projection.
    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.cols + col]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImuPath {
    pub segments: Vec<Arc<Segment>>,
    pub start_id: usize,
    pub start: Point,
    pub end_position: Point,
}

impl ImuPath {
    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn displacement(&self) -> Point {
        [
            self.end_position[0] - self.start[0],
            self.end_position[1] - self.start[1],
        ]
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// How paths are divided into train / validation / test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SplitRule {
    /// Train and validation fractions; the remainder is test.
    Fractions { train: f64, validation: f64 },
    /// Exact train and validation counts; the remainder is test.
    Counts { train: usize, validation: usize },
}

impl Default for SplitRule {
    fn default() -> Self {
        SplitRule::Fractions {
            train: 0.64,
            validation: 0.16,
        }
    }
}

impl SplitRule {
    /// Seeded permutation cut into three disjoint, exhaustive index sets.
    pub fn apply(&self, n: usize, seed: u64) -> Result<Splits> {
        let (train, validation) = match *self {
            SplitRule::Fractions { train, validation } => {
                if train < 0.0 || validation < 0.0 || train + validation > 1.0 {
                    return Err(Error::InvalidConfig(format!(
                        "split fractions {train}/{validation} out of range"
                    )));
                }
                (
                    (train * n as f64).round() as usize,
                    (validation * n as f64).round() as usize,
                )
            }
            SplitRule::Counts { train, validation } => (train, validation),
        };
        if train + validation > n {
            return Err(Error::InvalidConfig(format!(
                "split {train}+{validation} exceeds {n} paths"
            )));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut test = order.split_off(train + validation);
        let mut validation_ids = order.split_off(train);
        order.sort_unstable();
        validation_ids.sort_unstable();
        test.sort_unstable();
        Ok(Splits {
            train: order,
            validation: validation_ids,
            test,
        })
    }
}

/// Surveyed locations plus the readings recorded on each gap between them.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceWalk {
    pub points: Vec<Point>,
    pub segments: Vec<Arc<Segment>>,
}

impl ReferenceWalk {
    pub fn new(points: Vec<Point>, segments: Vec<Segment>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InsufficientWalk(format!(
                "{} reference points, need at least 2",
                points.len()
            )));
        }
        if segments.len() != points.len() - 1 {
            return Err(Error::InsufficientWalk(format!(
                "{} points need {} gap segments, got {}",
                points.len(),
                points.len() - 1,
                segments.len()
            )));
        }
        let shape = segments[0].shape();
        if let Some(bad) = segments.iter().find(|s| s.shape() != shape) {
            return Err(Error::DimensionMismatch {
                expected: shape.0 * shape.1,
                actual: bad.rows * bad.cols,
            });
        }
        Ok(Self {
            points,
            segments: segments.into_iter().map(Arc::new).collect(),
        })
    }

    pub fn gap_count(&self) -> usize {
        self.segments.len()
    }

    pub fn segment_shape(&self) -> (usize, usize) {
        self.segments[0].shape()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImuCorpus {
    pub paths: Vec<ImuPath>,
    pub reference_locations: Vec<Point>,
    pub splits: Splits,
    pub segment_shape: (usize, usize),
}

impl ImuCorpus {
    pub fn subset(&self, ids: &[usize]) -> Vec<&ImuPath> {
        ids.iter().map(|&i| &self.paths[i]).collect()
    }
}

/// Samples `count` paths from the walk: a uniform start among points with at
/// least one gap ahead, a uniform length in `1..=min(max_len, gaps ahead)`,
/// and the segments of those gaps in order.
pub fn build_imu_paths(
    walk: &ReferenceWalk,
    max_len: usize,
    count: usize,
    seed: u64,
    split: SplitRule,
) -> Result<ImuCorpus> {
    if max_len == 0 {
        return Err(Error::InvalidConfig("max path length must be positive".into()));
    }
    let gaps = walk.gap_count();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut paths = Vec::with_capacity(count);
    for _ in 0..count {
        let start = rng.random_range(0..gaps);
        let longest = max_len.min(gaps - start);
        let len = rng.random_range(1..=longest);
        paths.push(ImuPath {
            segments: walk.segments[start..start + len].to_vec(),
            start_id: start,
            start: walk.points[start],
            end_position: walk.points[start + len],
        });
    }
    let splits = split.apply(count, seed.wrapping_add(1))?;
    Ok(ImuCorpus {
        paths,
        reference_locations: walk.points.clone(),
        splits,
        segment_shape: walk.segment_shape(),
    })
}

/// A full-scale walk (177 points over a 160 m x 60 m area,
/// 768 x 6 readings per gap) filled with seeded noise. Only its shape matters.
pub fn full_scale_walk(seed: u64) -> ReferenceWalk {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = REFERENCE_COUNT;
    let points: Vec<Point> = (0..n)
        .map(|i| {
            // a loop around the quad perimeter
            let t = i as f64 / n as f64 * 440.0;
            match t {
                t if t < 160.0 => [t, 0.0],
                t if t < 220.0 => [160.0, t - 160.0],
                t if t < 380.0 => [380.0 - t, 60.0],
                t => [0.0, 440.0 - t],
            }
        })
        .collect();
    let segments = (0..n - 1)
        .map(|_| {
            let data = (0..SEGMENT_ROWS * SEGMENT_AXES)
                .map(|_| rng.random_range(-1.0f32..1.0))
                .collect();
            Segment::new(SEGMENT_ROWS, SEGMENT_AXES, data).expect("shape")
        })
        .collect();
    ReferenceWalk::new(points, segments).expect("walk is well formed")
}

/// Double-integrates the horizontal accelerometer columns (0 and 1) of a
/// segment that starts at rest: per-interval mean acceleration updates the
/// velocity, and position advances by the trapezoid of consecutive velocities.
pub fn integrate_displacement(segment: &Segment, dt: f64) -> Point {
    let mut v = [0.0f64; 2];
    let mut x = [0.0f64; 2];
    for r in 0..segment.rows() {
        for axis in 0..2 {
            let a = segment.get(r, axis) as f64;
            let next = v[axis] + a * dt;
            x[axis] += 0.5 * (v[axis] + next) * dt;
            v[axis] = next;
        }
    }
    x
}

/// Integrates the yaw-rate column (5) of a segment.
pub fn integrate_yaw(segment: &Segment, dt: f64) -> f64 {
    (0..segment.rows())
        .map(|r| segment.get(r, 5) as f64 * dt)
        .sum()
}
