//! Wi-Fi fingerprint corpora and the public CSV layouts.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Point;

/// RSSI value the public corpora use for "access point not detected".
pub const NOT_DETECTED: f64 = 100.0;
/// Replacement for [`NOT_DETECTED`] and the zero point of the normalized scale.
pub const FLOOR_DBM: f64 = -105.0;
pub const MIN_DETECTED_DBM: f64 = -110.0;

pub const UJI_WAP_COUNT: usize = 520;
pub const IPIN_WAP_COUNT: usize = 168;
pub const IPIN_TEST_COUNT: usize = 185;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WifiSample {
    pub rssi: Vec<f64>,
    pub position: Point,
    pub building: Option<usize>,
    pub floor: Option<usize>,
    pub space_id: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub floor_dbm: f64,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WifiCorpus {
    pub train: Vec<WifiSample>,
    pub test: Vec<WifiSample>,
    pub wap_count: usize,
    pub normalization: Option<Normalization>,
    /// Translation subtracted from the raw coordinates at load time.
    pub offset: Point,
}

impl WifiCorpus {
    pub fn train_positions(&self) -> Vec<Point> {
        self.train.iter().map(|s| s.position).collect()
    }

    /// Maps RSSI to `[0, 1]`: the sentinel becomes [`FLOOR_DBM`], then
    /// `(v - floor) / (0 - floor)`, clamped.
    pub fn normalize_rssi(mut self) -> Result<Self> {
        if self.normalization.is_some() {
            return Err(Error::AlreadyNormalized);
        }
        let scale = 0.0 - FLOOR_DBM;
        for s in self.train.iter_mut().chain(self.test.iter_mut()) {
            for v in &mut s.rssi {
                *v = normalize_value(*v, FLOOR_DBM, scale);
            }
        }
        self.normalization = Some(Normalization {
            floor_dbm: FLOOR_DBM,
            scale,
        });
        Ok(self)
    }

    /// Like [`normalize_rssi`](Self::normalize_rssi) but a no-op on an
    /// already normalized corpus.
    pub fn normalized(self) -> Self {
        if self.normalization.is_some() {
            self
        } else {
            self.normalize_rssi().expect("checked above")
        }
    }
}

pub fn normalize_value(v: f64, floor_dbm: f64, scale: f64) -> f64 {
    let v = if v == NOT_DETECTED { floor_dbm } else { v };
    ((v - floor_dbm) / scale).clamp(0.0, 1.0)
}

/// Loads the UJIIndoorLoc training and validation files. The validation file
/// becomes the test split.
pub fn load_ujiindoorloc(train_path: &Path, test_path: &Path) -> Result<WifiCorpus> {
    let mut train = read_fingerprint_csv(train_path, Some(UJI_WAP_COUNT))?;
    let mut test = read_fingerprint_csv(test_path, Some(UJI_WAP_COUNT))?;
    let offset = recenter(&mut train, &mut test);
    Ok(WifiCorpus {
        train,
        test,
        wap_count: UJI_WAP_COUNT,
        normalization: None,
        offset,
    })
}

/// Loads the IPIN2016 tutorial file and reserves the last
/// [`IPIN_TEST_COUNT`] rows of a seeded shuffle for testing.
pub fn load_ipin2016(path: &Path, seed: u64) -> Result<WifiCorpus> {
    let mut rows = read_fingerprint_csv(path, Some(IPIN_WAP_COUNT))?;
    if rows.len() <= IPIN_TEST_COUNT {
        return Err(Error::Format {
            row: rows.len() + 1,
            column: 1,
            message: format!("need more than {IPIN_TEST_COUNT} rows"),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rows.shuffle(&mut rng);
    let mut test = rows.split_off(rows.len() - IPIN_TEST_COUNT);
    let mut train = rows;
    let offset = recenter(&mut train, &mut test);
    Ok(WifiCorpus {
        train,
        test,
        wap_count: IPIN_WAP_COUNT,
        normalization: None,
        offset,
    })
}

/// Shifts both splits so the training set's min corner is the origin.
fn recenter(train: &mut [WifiSample], test: &mut [WifiSample]) -> Point {
    let mut min = [f64::INFINITY, f64::INFINITY];
    for s in train.iter() {
        min[0] = min[0].min(s.position[0]);
        min[1] = min[1].min(s.position[1]);
    }
    if !min[0].is_finite() {
        return [0.0, 0.0];
    }
    for s in train.iter_mut().chain(test.iter_mut()) {
        s.position[0] -= min[0];
        s.position[1] -= min[1];
    }
    min
}

/// Reads the shared UJIIndoorLoc/IPIN2016 layout: `WAP*` columns followed by
/// LONGITUDE, LATITUDE, FLOOR, BUILDINGID, SPACEID and metadata columns.
pub fn read_fingerprint_csv(path: &Path, expected_waps: Option<usize>) -> Result<Vec<WifiSample>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(e, 1))?;
    let headers = reader.headers().map_err(|e| csv_error(e, 1))?.clone();
    let strip = |h: &str| h.trim_matches('"').to_ascii_uppercase();
    let wap_cols: Vec<usize> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| strip(h).starts_with("WAP"))
        .map(|(i, _)| i)
        .collect();
    if let Some(w) = expected_waps {
        if wap_cols.len() != w {
            return Err(Error::Format {
                row: 1,
                column: wap_cols.len() + 1,
                message: format!("expected {w} WAP columns, found {}", wap_cols.len()),
            });
        }
    }
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| strip(h) == name)
            .ok_or_else(|| Error::Format {
                row: 1,
                column: headers.len(),
                message: format!("missing column {name}"),
            })
    };
    let lon = find("LONGITUDE")?;
    let lat = find("LATITUDE")?;
    let floor = find("FLOOR").ok();
    let building = find("BUILDINGID").ok();
    let space = find("SPACEID").ok();

    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| csv_error(e, row))?;
        let field = |col: usize| -> Result<f64> {
            record
                .get(col)
                .and_then(|s| s.trim_matches('"').parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Format {
                    row,
                    column: col + 1,
                    message: format!("malformed number {:?}", record.get(col).unwrap_or("")),
                })
        };
        let id = |col: Option<usize>| -> Result<Option<usize>> {
            match col {
                None => Ok(None),
                Some(c) => {
                    let v = field(c)?;
                    if v < 0.0 || v.fract() != 0.0 {
                        return Err(Error::Format {
                            row,
                            column: c + 1,
                            message: format!("expected a non-negative integer ID, got {v}"),
                        });
                    }
                    Ok(Some(v as usize))
                }
            }
        };
        let mut rssi = Vec::with_capacity(wap_cols.len());
        for &c in &wap_cols {
            let v = field(c)?;
            if v != NOT_DETECTED && !(MIN_DETECTED_DBM..=0.0).contains(&v) {
                return Err(Error::Format {
                    row,
                    column: c + 1,
                    message: format!("RSSI {v} outside [-110, 0] and not the +100 sentinel"),
                });
            }
            rssi.push(v);
        }
        out.push(WifiSample {
            rssi,
            position: [field(lon)?, field(lat)?],
            building: id(building)?,
            floor: id(floor)?,
            space_id: id(space)?,
        });
    }
    Ok(out)
}

fn csv_error(e: csv::Error, row: usize) -> Error {
    let row = e
        .position()
        .map_or(row, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format {
            row,
            column: 0,
            message: format!("{other:?}"),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(rssi: Vec<f64>) -> WifiSample {
        WifiSample {
            rssi,
            position: [0.0, 0.0],
            building: None,
            floor: None,
            space_id: None,
        }
    }

    #[test]
    fn normalization_endpoints() {
        let corpus = WifiCorpus {
            train: vec![sample(vec![-105.0, 0.0, 100.0, -52.5, -110.0])],
            test: vec![],
            wap_count: 5,
            normalization: None,
            offset: [0.0, 0.0],
        };
        let n = corpus.normalize_rssi().unwrap();
        assert_eq!(n.train[0].rssi, vec![0.0, 1.0, 0.0, 0.5, 0.0]);
        assert!(matches!(
            n.clone().normalize_rssi(),
            Err(Error::AlreadyNormalized)
        ));
        assert_eq!(n.clone().normalized(), n);
    }

    #[test]
    fn missing_file() {
        let err = read_fingerprint_csv(Path::new("/nonexistent/x.csv"), None).unwrap_err();
        assert!(matches!(err, Error::MissingFile(_)));
    }
}
