//! Output-space quantization.
//!
//! A [`GridSpec`] lays a square lattice over the localization area. Cells are
//! half-open, `[low, low + side)` on both axes, so every point inside the
//! bounds belongs to exactly one cell. A [`CellMap`] keeps only the cells that
//! hold training samples and numbers them densely in lexicographic `(ix, iy)`
//! order; those numbers are the class IDs the classifiers predict.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A 2-D position in meters.
pub type Point = [f64; 2];

/// Coarse cell side used when a coarse grid is requested without an explicit size.
pub const DEFAULT_COARSE_FACTOR: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl Bounds {
    pub fn contains(&self, p: Point) -> bool {
        p[0] >= self.min_x && p[0] <= self.max_x && p[1] >= self.min_y && p[1] <= self.max_y
    }

    pub fn width(&self) -> f64 {
        self.max_x - self.min_x
    }

    pub fn height(&self) -> f64 {
        self.max_y - self.min_y
    }
}

/// Integer lattice coordinates of a fine or coarse cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellIndex {
    pub ix: i64,
    pub iy: i64,
}

impl CellIndex {
    pub fn new(ix: i64, iy: i64) -> Self {
        Self { ix, iy }
    }
}

/// Quantization lattice: anchor, fine side `tau`, optional coarse side and the
/// rectangle of valid positions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin_x: f64,
    pub origin_y: f64,
    pub tau: f64,
    pub coarse_side: Option<f64>,
    pub bounds: Bounds,
}

impl GridSpec {
    pub fn new(
        origin: Point,
        tau: f64,
        coarse_side: Option<f64>,
        bounds: Bounds,
    ) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidGrid(format!("tau must be positive, got {tau}")));
        }
        if let Some(l) = coarse_side {
            if !(l > tau && l.is_finite()) {
                return Err(Error::InvalidGrid(format!(
                    "coarse side {l} must exceed tau {tau}"
                )));
            }
        }
        if !(bounds.width() > 0.0 && bounds.height() > 0.0) {
            return Err(Error::InvalidGrid("bounds must have positive area".into()));
        }
        Ok(Self {
            origin_x: origin[0],
            origin_y: origin[1],
            tau,
            coarse_side,
            bounds,
        })
    }

    /// Anchors the lattice half a cell below the minimum training coordinate
    /// and extends the bounds half a cell past the maximum.
    pub fn fit(points: &[Point], tau: f64, coarse_side: Option<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let (mut min_x, mut min_y) = (f64::INFINITY, f64::INFINITY);
        let (mut max_x, mut max_y) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in points {
            min_x = min_x.min(p[0]);
            min_y = min_y.min(p[1]);
            max_x = max_x.max(p[0]);
            max_y = max_y.max(p[1]);
        }
        let pad = tau / 2.0;
        let origin = [min_x - pad, min_y - pad];
        let bounds = Bounds {
            min_x: origin[0],
            min_y: origin[1],
            max_x: max_x + pad,
            max_y: max_y + pad,
        };
        Self::new(origin, tau, coarse_side, bounds)
    }

    /// Fine cell of `point`.
    pub fn quantize(&self, point: Point) -> Result<CellIndex> {
        self.quantize_with(point, self.tau)
    }

    /// Cell of `point` on the lattice with the given side.
    pub fn quantize_with(&self, point: Point, side: f64) -> Result<CellIndex> {
        if !self.bounds.contains(point) {
            return Err(Error::OutOfBounds {
                x: point[0],
                y: point[1],
            });
        }
        Ok(self.cell_unchecked(point, side))
    }

    /// Floor arithmetic without the bounds check; used for off-map queries.
    pub fn cell_unchecked(&self, point: Point, side: f64) -> CellIndex {
        CellIndex {
            ix: ((point[0] - self.origin_x) / side).floor() as i64,
            iy: ((point[1] - self.origin_y) / side).floor() as i64,
        }
    }

    pub fn centroid(&self, cell: CellIndex, side: f64) -> Point {
        [
            self.origin_x + (cell.ix as f64 + 0.5) * side,
            self.origin_y + (cell.iy as f64 + 0.5) * side,
        ]
    }
}

/// Dense class numbering over the occupied cells of one lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct CellClasses {
    side: f64,
    cells: Vec<CellIndex>,
    counts: Vec<usize>,
    lookup: HashMap<CellIndex, usize>,
}

impl CellClasses {
    fn from_counts(side: f64, counts: BTreeMap<CellIndex, usize>) -> Self {
        let mut cells = Vec::with_capacity(counts.len());
        let mut per_cell = Vec::with_capacity(counts.len());
        for (cell, count) in counts {
            cells.push(cell);
            per_cell.push(count);
        }
        let lookup = cells.iter().enumerate().map(|(id, &c)| (c, id)).collect();
        Self {
            side,
            cells,
            counts: per_cell,
            lookup,
        }
    }

    pub fn side(&self) -> f64 {
        self.side
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn class_of(&self, cell: CellIndex) -> Option<usize> {
        self.lookup.get(&cell).copied()
    }

    pub fn cell_of(&self, class_id: usize) -> Option<CellIndex> {
        self.cells.get(class_id).copied()
    }

    pub fn count(&self, class_id: usize) -> usize {
        self.counts[class_id]
    }

    pub fn cells(&self) -> &[CellIndex] {
        &self.cells
    }
}

/// Per-sample class assignment.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct QuantizedLabel {
    pub fine_class: usize,
    pub coarse_class: Option<usize>,
    /// Occupied Moore neighbors of the fine cell, ascending.
    pub extra_classes: Vec<usize>,
    pub building: Option<usize>,
    pub floor: Option<usize>,
}

/// The occupied cells of a grid and their class IDs.
#[derive(Debug, Clone, PartialEq)]
pub struct CellMap {
    spec: GridSpec,
    fine: CellClasses,
    coarse: Option<CellClasses>,
}

impl CellMap {
    pub fn build(spec: GridSpec, points: &[Point]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut fine = BTreeMap::new();
        let mut coarse = BTreeMap::new();
        for &p in points {
            *fine.entry(spec.quantize(p)?).or_insert(0) += 1;
            if let Some(l) = spec.coarse_side {
                *coarse.entry(spec.quantize_with(p, l)?).or_insert(0) += 1;
            }
        }
        Ok(Self {
            spec,
            fine: CellClasses::from_counts(spec.tau, fine),
            coarse: spec
                .coarse_side
                .map(|l| CellClasses::from_counts(l, coarse)),
        })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn fine(&self) -> &CellClasses {
        &self.fine
    }

    pub fn coarse(&self) -> Option<&CellClasses> {
        self.coarse.as_ref()
    }

    pub fn fine_count(&self) -> usize {
        self.fine.len()
    }

    pub fn coarse_count(&self) -> usize {
        self.coarse.as_ref().map_or(0, CellClasses::len)
    }

    /// Fine class of `point`, if its cell is in bounds and occupied.
    pub fn fine_class(&self, point: Point) -> Option<usize> {
        self.spec
            .quantize(point)
            .ok()
            .and_then(|c| self.fine.class_of(c))
    }

    pub fn fine_centroid(&self, class_id: usize) -> Point {
        self.spec.centroid(self.fine.cells[class_id], self.spec.tau)
    }

    /// Whether `point` falls inside an occupied fine cell.
    pub fn is_on_map(&self, point: Point) -> bool {
        self.fine_class(point).is_some()
    }

    pub fn label_sample(&self, point: Point, adjacency: bool) -> Result<QuantizedLabel> {
        let cell = self.spec.quantize(point)?;
        let fine_class = self
            .fine
            .class_of(cell)
            .ok_or(Error::UnoccupiedCell {
                ix: cell.ix,
                iy: cell.iy,
            })?;
        let coarse_class = match (&self.coarse, self.spec.coarse_side) {
            (Some(coarse), Some(l)) => {
                let c = self.spec.quantize_with(point, l)?;
                Some(coarse.class_of(c).ok_or(Error::UnoccupiedCell {
                    ix: c.ix,
                    iy: c.iy,
                })?)
            }
            _ => None,
        };
        let mut extra_classes = Vec::new();
        if adjacency {
            for dx in -1..=1 {
                for dy in -1..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let n = CellIndex::new(cell.ix + dx, cell.iy + dy);
                    if let Some(id) = self.fine.class_of(n) {
                        extra_classes.push(id);
                    }
                }
            }
            extra_classes.sort_unstable();
        }
        Ok(QuantizedLabel {
            fine_class,
            coarse_class,
            extra_classes,
            building: None,
            floor: None,
        })
    }

    /// Class ID of the occupied fine cell whose centroid is closest to `point`
    /// (ties go to the smaller ID).
    ///
    /// Searches square rings of lattice cells outward from the query cell and
    /// stops once no farther ring can beat the current best. Falls back to a
    /// linear scan when the query sits so far off the map that the rings would
    /// visit more cells than exist.
    pub fn nearest_occupied(&self, point: Point) -> usize {
        let tau = self.spec.tau;
        let home = self.spec.cell_unchecked(point, tau);
        let k = self.fine.len();
        let mut best: Option<(f64, usize)> = None;
        let mut visited = 0usize;
        let consider = |id: usize, best: &mut Option<(f64, usize)>| {
            let c = self.fine_centroid(id);
            let d = (c[0] - point[0]).hypot(c[1] - point[1]);
            match *best {
                Some((bd, bid)) if d > bd || (d == bd && id > bid) => {}
                _ => *best = Some((d, id)),
            }
        };
        let mut r: i64 = 0;
        loop {
            if let Some((bd, _)) = best {
                // every centroid in ring r is at least (r - 1/2) cells away
                if (r as f64 - 0.5) * tau > bd {
                    break;
                }
            }
            let ring_cells = if r == 0 { 1 } else { 8 * r as usize };
            visited += ring_cells;
            if visited > 4 * k + 64 {
                for id in 0..k {
                    consider(id, &mut best);
                }
                break;
            }
            for_each_ring_cell(home, r, |cell| {
                if let Some(id) = self.fine.class_of(cell) {
                    consider(id, &mut best);
                }
            });
            r += 1;
        }
        best.expect("cell map is never empty").1
    }

    pub fn nearest_occupied_centroid(&self, point: Point) -> Point {
        self.fine_centroid(self.nearest_occupied(point))
    }

    /// Text form: a header `tau coarse_side origin_x origin_y`, a `# bounds`
    /// comment, then `kind ix iy class_id count` per occupied cell.
    pub fn to_text(&self) -> String {
        let s = &self.spec;
        let mut out = String::new();
        let coarse = s
            .coarse_side
            .map_or_else(|| "none".to_string(), |l| l.to_string());
        let _ = writeln!(out, "{} {} {} {}", s.tau, coarse, s.origin_x, s.origin_y);
        let b = s.bounds;
        let _ = writeln!(
            out,
            "# bounds {} {} {} {}",
            b.min_x, b.min_y, b.max_x, b.max_y
        );
        for (kind, classes) in [("F", Some(&self.fine)), ("C", self.coarse.as_ref())] {
            let Some(classes) = classes else { continue };
            for (id, cell) in classes.cells.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{kind} {} {} {id} {}",
                    cell.ix, cell.iy, classes.counts[id]
                );
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let fmt = |row: usize, column: usize, message: &str| Error::Format {
            row,
            column,
            message: message.to_string(),
        };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| fmt(1, 1, "missing header"))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(fmt(1, 1, "header needs 4 fields"));
        }
        let num = |row: usize, col: usize, s: &str| -> Result<f64> {
            s.parse::<f64>().map_err(|_| fmt(row, col, "not a number"))
        };
        let tau = num(1, 1, fields[0])?;
        let coarse_side = if fields[1] == "none" {
            None
        } else {
            Some(num(1, 2, fields[1])?)
        };
        let origin = [num(1, 3, fields[2])?, num(1, 4, fields[3])?];

        let mut bounds = None;
        let mut fine = BTreeMap::new();
        let mut coarse = BTreeMap::new();
        for (i, line) in lines {
            let row = i + 1;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let f: Vec<&str> = rest.split_whitespace().collect();
                if f.first() == Some(&"bounds") && f.len() == 5 {
                    bounds = Some(Bounds {
                        min_x: num(row, 2, f[1])?,
                        min_y: num(row, 3, f[2])?,
                        max_x: num(row, 4, f[3])?,
                        max_y: num(row, 5, f[4])?,
                    });
                }
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 5 {
                return Err(fmt(row, 1, "cell line needs 5 fields"));
            }
            let int = |col: usize| -> Result<i64> {
                f[col - 1]
                    .parse::<i64>()
                    .map_err(|_| fmt(row, col, "not an integer"))
            };
            let cell = CellIndex::new(int(2)?, int(3)?);
            let id = int(4)? as usize;
            let count = int(5)? as usize;
            let target = match f[0] {
                "F" => &mut fine,
                "C" => &mut coarse,
                _ => return Err(fmt(row, 1, "kind must be F or C")),
            };
            target.insert(cell, (id, count));
        }
        let bounds = bounds.ok_or_else(|| fmt(2, 1, "missing bounds line"))?;
        let spec = GridSpec::new(origin, tau, coarse_side, bounds)?;
        let classes = |side: f64, m: BTreeMap<CellIndex, (usize, usize)>| -> Result<CellClasses> {
            for (expected, (_, (id, _))) in m.iter().enumerate() {
                if *id != expected {
                    return Err(fmt(0, 4, "class IDs must be dense and lexicographic"));
                }
            }
            Ok(CellClasses::from_counts(
                side,
                m.into_iter().map(|(c, (_, n))| (c, n)).collect(),
            ))
        };
        if fine.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(Self {
            spec,
            fine: classes(tau, fine)?,
            coarse: match coarse_side {
                Some(l) => Some(classes(l, coarse)?),
                None => None,
            },
        })
    }
}

fn for_each_ring_cell(center: CellIndex, r: i64, mut f: impl FnMut(CellIndex)) {
    if r == 0 {
        f(center);
        return;
    }
    for dx in -r..=r {
        f(CellIndex::new(center.ix + dx, center.iy - r));
        f(CellIndex::new(center.ix + dx, center.iy + r));
    }
    for dy in (-r + 1)..r {
        f(CellIndex::new(center.ix - r, center.iy + dy));
        f(CellIndex::new(center.ix + r, center.iy + dy));
    }
}
