//! On-disk corpus directories.
//!
//! Wi-Fi: `meta.json` plus `samples.csv` (`split,x,y,building,floor,space,rssi_0..`).
//! IMU: `meta.json`, `paths/index.csv` and one binary file per path. A path
//! file starts with a 16-byte header (`NOBL`, version `u16`, segment count
//! `u16`, rows `u32`, axes `u32`, all little-endian) followed by the segments
//! as little-endian `f32`, row-major, in path order.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::fs;
use std::hash::{Hash, Hasher};
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use serde_json::{json, Value};

use super::imu::{ImuCorpus, ImuPath, Segment, Splits};
use super::wifi::{Normalization, WifiCorpus, WifiSample};
use crate::error::{Error, Result};

pub const PATH_MAGIC: &[u8; 4] = b"NOBL";
pub const PATH_VERSION: u16 = 1;

/// Writes `bytes` to a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        fs::create_dir_all(dir)?;
    }
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn opt(v: Option<usize>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

pub fn write_wifi_dir(dir: &Path, corpus: &WifiCorpus, generator: Value) -> Result<()> {
    fs::create_dir_all(dir)?;
    let meta = json!({
        "kind": "wifi",
        "wap_count": corpus.wap_count,
        "offset": corpus.offset,
        "normalization": corpus.normalization,
        "n_train": corpus.train.len(),
        "n_test": corpus.test.len(),
        "generator": generator,
    });
    write_atomic(&dir.join("meta.json"), serde_json::to_string_pretty(&meta)?.as_bytes())?;

    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = ["split", "x", "y", "building", "floor", "space"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((0..corpus.wap_count).map(|i| format!("rssi_{i}")));
    w.write_record(&header).map_err(csv_io)?;
    for (split, rows) in [("train", &corpus.train), ("test", &corpus.test)] {
        for s in rows {
            let mut rec = vec![
                split.to_string(),
                s.position[0].to_string(),
                s.position[1].to_string(),
                opt(s.building),
                opt(s.floor),
                opt(s.space_id),
            ];
            rec.extend(s.rssi.iter().map(f64::to_string));
            w.write_record(&rec).map_err(csv_io)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    write_atomic(&dir.join("samples.csv"), &bytes)
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

fn read_meta(dir: &Path) -> Result<Value> {
    let path = dir.join("meta.json");
    if !path.exists() {
        return Err(Error::MissingFile(path));
    }
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

pub fn read_wifi_dir(dir: &Path) -> Result<(WifiCorpus, Value)> {
    let meta = read_meta(dir)?;
    let path = dir.join("samples.csv");
    if !path.exists() {
        return Err(Error::MissingFile(path));
    }
    let mut reader = csv::Reader::from_path(&path).map_err(csv_io)?;
    let width = reader.headers().map_err(csv_io)?.len();
    let wap_count = width.saturating_sub(6);
    let mut corpus = WifiCorpus {
        train: Vec::new(),
        test: Vec::new(),
        wap_count,
        normalization: serde_json::from_value::<Option<Normalization>>(
            meta.get("normalization").cloned().unwrap_or(Value::Null),
        )?,
        offset: serde_json::from_value(meta.get("offset").cloned().unwrap_or(json!([0.0, 0.0])))?,
    };
    for (i, rec) in reader.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(csv_io)?;
        let err = |column: usize, message: &str| Error::Format {
            row,
            column,
            message: message.to_string(),
        };
        let num = |c: usize| -> Result<f64> {
            rec.get(c)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| err(c + 1, "malformed number"))
        };
        let id = |c: usize| -> Result<Option<usize>> {
            match rec.get(c) {
                Some("") | None => Ok(None),
                Some(s) => s.parse().map(Some).map_err(|_| err(c + 1, "malformed ID")),
            }
        };
        let sample = WifiSample {
            position: [num(1)?, num(2)?],
            building: id(3)?,
            floor: id(4)?,
            space_id: id(5)?,
            rssi: (6..width).map(num).collect::<Result<_>>()?,
        };
        match rec.get(0) {
            Some("train") => corpus.train.push(sample),
            Some("test") => corpus.test.push(sample),
            _ => return Err(err(1, "split must be train or test")),
        }
    }
    Ok((corpus, meta))
}

pub fn encode_path(segments: &[Arc<Segment>]) -> Result<Vec<u8>> {
    let (rows, cols) = segments.first().map_or((0, 0), |s| s.shape());
    let len = u16::try_from(segments.len())
        .map_err(|_| Error::InvalidConfig("path longer than 65535 segments".into()))?;
    let mut out = Vec::with_capacity(16 + segments.len() * rows * cols * 4);
    out.extend_from_slice(PATH_MAGIC);
    out.extend_from_slice(&PATH_VERSION.to_le_bytes());
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(&(rows as u32).to_le_bytes());
    out.extend_from_slice(&(cols as u32).to_le_bytes());
    for s in segments {
        if s.shape() != (rows, cols) {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                actual: s.rows() * s.cols(),
            });
        }
        for v in s.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_path(bytes: &[u8]) -> Result<Vec<Segment>> {
    let bad = |m: &str| Error::Format {
        row: 0,
        column: 0,
        message: m.to_string(),
    };
    if bytes.len() < 16 || &bytes[..4] != PATH_MAGIC {
        return Err(bad("not a path file"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != PATH_VERSION {
        return Err(bad(&format!("unsupported path file version {version}")));
    }
    let len = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
    let rows = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let cols = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    let per = rows * cols;
    if bytes.len() != 16 + len * per * 4 {
        return Err(bad("path file length does not match its header"));
    }
    let body = &bytes[16..];
    (0..len)
        .map(|k| {
            let data = body[k * per * 4..(k + 1) * per * 4]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            Segment::new(rows, cols, data)
        })
        .collect()
}

pub fn write_imu_dir(dir: &Path, corpus: &ImuCorpus, generator: Value) -> Result<()> {
    let paths_dir = dir.join("paths");
    fs::create_dir_all(&paths_dir)?;
    let meta = json!({
        "kind": "imu",
        "segment_rows": corpus.segment_shape.0,
        "segment_cols": corpus.segment_shape.1,
        "reference_locations": corpus.reference_locations,
        "n_paths": corpus.paths.len(),
        "generator": generator,
    });
    write_atomic(&dir.join("meta.json"), serde_json::to_string_pretty(&meta)?.as_bytes())?;

    let mut split_of = vec![""; corpus.paths.len()];
    for (name, ids) in [
        ("train", &corpus.splits.train),
        ("validation", &corpus.splits.validation),
        ("test", &corpus.splits.test),
    ] {
        for &i in ids {
            split_of[i] = name;
        }
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "id", "split", "start_id", "start_x", "start_y", "end_x", "end_y", "length", "file",
    ])
    .map_err(csv_io)?;
    for (i, p) in corpus.paths.iter().enumerate() {
        let file = format!("path_{i:05}.bin");
        write_atomic(&paths_dir.join(&file), &encode_path(&p.segments)?)?;
        w.write_record([
            i.to_string(),
            split_of[i].to_string(),
            p.start_id.to_string(),
            p.start[0].to_string(),
            p.start[1].to_string(),
            p.end_position[0].to_string(),
            p.end_position[1].to_string(),
            p.len().to_string(),
            file,
        ])
        .map_err(csv_io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    write_atomic(&paths_dir.join("index.csv"), &bytes)
}

/// Reads an IMU directory. Identical segments across path files are shared
/// in memory, which restores the walk structure the paths were cut from.
pub fn read_imu_dir(dir: &Path) -> Result<(ImuCorpus, Value)> {
    let meta = read_meta(dir)?;
    let index = dir.join("paths").join("index.csv");
    if !index.exists() {
        return Err(Error::MissingFile(index));
    }
    let reference_locations = serde_json::from_value(
        meta.get("reference_locations").cloned().unwrap_or(json!([])),
    )?;
    let get_usize = |k: &str| meta.get(k).and_then(Value::as_u64).unwrap_or(0) as usize;
    let segment_shape = (get_usize("segment_rows"), get_usize("segment_cols"));

    let mut pool: HashMap<u64, Vec<Arc<Segment>>> = HashMap::new();
    let mut intern = |s: Segment| -> Arc<Segment> {
        let mut h = DefaultHasher::new();
        s.shape().hash(&mut h);
        for v in s.as_slice() {
            v.to_bits().hash(&mut h);
        }
        let bucket = pool.entry(h.finish()).or_default();
        if let Some(hit) = bucket.iter().find(|e| ***e == s) {
            return Arc::clone(hit);
        }
        let a = Arc::new(s);
        bucket.push(Arc::clone(&a));
        a
    };

    let mut reader = csv::Reader::from_path(&index).map_err(csv_io)?;
    let mut paths = Vec::new();
    let mut splits = Splits::default();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(csv_io)?;
        let err = |column: usize| Error::Format {
            row,
            column,
            message: "malformed field".into(),
        };
        let f = |c: usize| -> Result<f64> {
            rec.get(c).and_then(|s| s.parse().ok()).ok_or_else(|| err(c + 1))
        };
        let u = |c: usize| -> Result<usize> {
            rec.get(c).and_then(|s| s.parse().ok()).ok_or_else(|| err(c + 1))
        };
        let id = u(0)?;
        if id != paths.len() {
            return Err(err(1));
        }
        let file = rec.get(8).ok_or_else(|| err(9))?;
        let segments = decode_path(&fs::read(dir.join("paths").join(file))?)?
            .into_iter()
            .map(&mut intern)
            .collect::<Vec<_>>();
        if segments.len() != u(7)? {
            return Err(err(8));
        }
        match rec.get(1) {
            Some("train") => splits.train.push(id),
            Some("validation") => splits.validation.push(id),
            Some("test") => splits.test.push(id),
            _ => return Err(err(2)),
        }
        paths.push(ImuPath {
            segments,
            start_id: u(2)?,
            start: [f(3)?, f(4)?],
            end_position: [f(5)?, f(6)?],
        });
    }
    Ok((
        ImuCorpus {
            paths,
            reference_locations,
            splits,
            segment_shape,
        },
        meta,
    ))
}
