//! The Wi-Fi localizer: RSSI in, concatenated multi-hot class heads out,
//! fine-cell centroid as the position estimate.

use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::datasets::store::write_atomic;
use crate::datasets::{WifiCorpus, WifiSample};
use crate::error::{Error, Result};
use crate::grid::{CellMap, GridSpec, Point, DEFAULT_COARSE_FACTOR};
use crate::metrics::{position_error, summarize, MetricsReport};
use crate::nn::{checkpoint, train, Activation, LossKind, Network, TrainConfig, TrainReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    Building,
    Floor,
    /// Dataset-provided space label (IPIN2016, or UJIIndoorLoc SPACEID).
    Space,
    /// Coarse grid cell.
    Coarse,
    /// Fine grid cell; the position head.
    Fine,
}

impl HeadKind {
    pub fn name(self) -> &'static str {
        match self {
            HeadKind::Building => "building",
            HeadKind::Floor => "floor",
            HeadKind::Space => "space",
            HeadKind::Coarse => "coarse",
            HeadKind::Fine => "fine",
        }
    }
}

/// One label space within the concatenated output vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Head {
    pub kind: HeadKind,
    pub offset: usize,
    pub size: usize,
    /// Raw dataset label for each class index (empty for grid heads).
    pub labels: Vec<usize>,
}

impl Head {
    fn class_of_label(&self, label: usize) -> Option<usize> {
        self.labels.binary_search(&label).ok()
    }
}

/// Where the second-granularity head comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoarseSource {
    Grid,
    Space,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WifiModelConfig {
    pub tau: f64,
    /// Coarse cell side; defaults to `5 * tau` when the source is the grid.
    pub coarse_side: Option<f64>,
    pub coarse_source: CoarseSource,
    pub adjacency: bool,
    pub hidden: Vec<usize>,
    pub batch_norm: bool,
    pub include_building: bool,
    pub include_floor: bool,
    /// Fraction of the training split held out for early stopping. Zero
    /// validates on the test split instead.
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for WifiModelConfig {
    fn default() -> Self {
        Self {
            tau: 0.2,
            coarse_side: None,
            coarse_source: CoarseSource::Grid,
            adjacency: true,
            hidden: vec![128, 128],
            batch_norm: true,
            include_building: true,
            include_floor: true,
            validation_fraction: 0.1,
            seed: 0,
        }
    }
}

impl WifiModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidConfig(format!("tau must be positive, got {}", self.tau)));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::InvalidConfig(format!(
                "validation_fraction must be in [0, 1), got {}",
                self.validation_fraction
            )));
        }
        Ok(())
    }

    fn resolved_coarse_side(&self) -> Option<f64> {
        match self.coarse_source {
            CoarseSource::Grid => Some(self.coarse_side.unwrap_or(DEFAULT_COARSE_FACTOR * self.tau)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WifiModelSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub heads: Vec<Head>,
    pub adjacency: bool,
    pub tau: f64,
    pub coarse_side: Option<f64>,
    pub seed: u64,
}

impl WifiModelSpec {
    pub fn output_dim(&self) -> usize {
        self.heads.iter().map(|h| h.size).sum()
    }

    pub fn head(&self, kind: HeadKind) -> Option<&Head> {
        self.heads.iter().find(|h| h.kind == kind)
    }

    fn fine_head(&self) -> &Head {
        self.head(HeadKind::Fine).expect("fine head always present")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WifiModel {
    pub spec: WifiModelSpec,
    pub cell_map: CellMap,
    pub network: Network,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadPrediction {
    pub kind: HeadKind,
    pub class: usize,
    /// Dataset label for label heads, the class ID for grid heads.
    pub label: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WifiPrediction {
    pub heads: Vec<HeadPrediction>,
    pub fine_class: usize,
    pub position: Point,
}

impl WifiPrediction {
    pub fn head(&self, kind: HeadKind) -> Option<&HeadPrediction> {
        self.heads.iter().find(|h| h.kind == kind)
    }
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

fn distinct(values: impl Iterator<Item = Option<usize>>) -> Option<Vec<usize>> {
    let mut out: Vec<usize> = values.collect::<Option<Vec<_>>>()?;
    out.sort_unstable();
    out.dedup();
    Some(out)
}

/// RSSI rows as a matrix.
pub fn rssi_matrix(samples: &[WifiSample], width: usize) -> Result<Array2<f64>> {
    let mut x = Array2::zeros((samples.len(), width));
    for (i, s) in samples.iter().enumerate() {
        if s.rssi.len() != width {
            return Err(Error::DimensionMismatch {
                expected: width,
                actual: s.rssi.len(),
            });
        }
        x.row_mut(i).assign(&ndarray::ArrayView1::from(&s.rssi));
    }
    Ok(x)
}

fn require_normalized(corpus: &WifiCorpus) -> Result<()> {
    if corpus.normalization.is_none() {
        return Err(Error::InvalidConfig("corpus RSSI must be normalized first".into()));
    }
    Ok(())
}

/// Builds the cell map from training coordinates, sizes the heads from the
/// training label spaces, and initializes `W -> hidden -> sum(heads)`.
pub fn build_wifi_model(corpus: &WifiCorpus, config: &WifiModelConfig) -> Result<WifiModel> {
    config.validate()?;
    require_normalized(corpus)?;
    if corpus.train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let coarse_side = config.resolved_coarse_side();
    let points = corpus.train_positions();
    let spec = GridSpec::fit(&points, config.tau, coarse_side)?;
    let cell_map = CellMap::build(spec, &points)?;

    let mut heads = Vec::new();
    let mut push = |kind, size, labels| {
        let offset = heads.iter().map(|h: &Head| h.size).sum();
        heads.push(Head { kind, offset, size, labels });
    };
    if config.include_building {
        if let Some(labels) = distinct(corpus.train.iter().map(|s| s.building)) {
            push(HeadKind::Building, labels.len(), labels);
        }
    }
    if config.include_floor {
        if let Some(labels) = distinct(corpus.train.iter().map(|s| s.floor)) {
            push(HeadKind::Floor, labels.len(), labels);
        }
    }
    match config.coarse_source {
        CoarseSource::Space => {
            let labels = distinct(corpus.train.iter().map(|s| s.space_id)).ok_or_else(|| {
                Error::InvalidConfig("coarse_source = space needs a space ID on every sample".into())
            })?;
            push(HeadKind::Space, labels.len(), labels);
        }
        CoarseSource::Grid => push(HeadKind::Coarse, cell_map.coarse_count(), Vec::new()),
        CoarseSource::None => {}
    }
    push(HeadKind::Fine, cell_map.fine_count(), Vec::new());

    let spec = WifiModelSpec {
        input_dim: corpus.wap_count,
        hidden: config.hidden.clone(),
        heads,
        adjacency: config.adjacency,
        tau: config.tau,
        coarse_side,
        seed: config.seed,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let network = Network::mlp(
        spec.input_dim,
        &spec.hidden,
        spec.output_dim(),
        Activation::Tanh,
        config.batch_norm,
        &mut rng,
    );
    Ok(WifiModel {
        spec,
        cell_map,
        network,
    })
}

impl WifiModel {
    /// Multi-hot targets for labeled samples. Samples must lie in occupied
    /// training cells; label-head values unseen in training are an error.
    pub fn targets(&self, samples: &[WifiSample]) -> Result<Array2<f64>> {
        let mut y = Array2::zeros((samples.len(), self.spec.output_dim()));
        for (i, s) in samples.iter().enumerate() {
            let label = self.cell_map.label_sample(s.position, self.spec.adjacency)?;
            for head in &self.spec.heads {
                let class = match head.kind {
                    HeadKind::Fine => Some(label.fine_class),
                    HeadKind::Coarse => label.coarse_class,
                    HeadKind::Building => s.building.and_then(|b| head.class_of_label(b)),
                    HeadKind::Floor => s.floor.and_then(|f| head.class_of_label(f)),
                    HeadKind::Space => s.space_id.and_then(|v| head.class_of_label(v)),
                };
                let class = class.ok_or_else(|| {
                    Error::InvalidConfig(format!("sample {i} has no {} label", head.kind.name()))
                })?;
                y[[i, head.offset + class]] = 1.0;
                if head.kind == HeadKind::Fine {
                    for &extra in &label.extra_classes {
                        y[[i, head.offset + extra]] = 1.0;
                    }
                }
            }
        }
        Ok(y)
    }

    /// Decodes one row of sigmoid scores.
    pub fn decode(&self, scores: &[f64]) -> WifiPrediction {
        let heads: Vec<HeadPrediction> = self
            .spec
            .heads
            .iter()
            .map(|h| {
                let slice = &scores[h.offset..h.offset + h.size];
                let class = argmax(slice);
                HeadPrediction {
                    kind: h.kind,
                    class,
                    label: h.labels.get(class).copied().unwrap_or(class),
                    score: slice[class],
                }
            })
            .collect();
        let fine_class = heads
            .iter()
            .find(|h| h.kind == HeadKind::Fine)
            .expect("fine head")
            .class;
        WifiPrediction {
            position: self.cell_map.fine_centroid(fine_class),
            fine_class,
            heads,
        }
    }

    /// Head scores for a batch of normalized RSSI rows.
    pub fn scores(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.network.infer(x)?.outputs)
    }

    pub fn predict_batch(&self, x: ArrayView2<f64>) -> Result<Vec<WifiPrediction>> {
        let scores = self.scores(x)?;
        Ok(scores
            .rows()
            .into_iter()
            .map(|row| self.decode(&row.to_vec()))
            .collect())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        write_atomic(&dir.join("network.nnet"), &checkpoint::to_bytes(&self.network))?;
        write_atomic(&dir.join("cellmap.txt"), self.cell_map.to_text().as_bytes())?;
        let mut json = serde_json::to_string_pretty(&self.spec)?;
        json.push('\n');
        write_atomic(&dir.join("model.json"), json.as_bytes())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| {
            let path = dir.join(name);
            fs::read(&path).map_err(|e| match e.kind() {
                std::io::ErrorKind::NotFound => Error::MissingFile(path),
                _ => Error::Io(e),
            })
        };
        let spec: WifiModelSpec = serde_json::from_slice(&read("model.json")?)?;
        let cell_map = CellMap::from_text(&String::from_utf8_lossy(&read("cellmap.txt")?))?;
        let network = checkpoint::from_bytes(&read("network.nnet")?)?;
        if network.input_dim() != spec.input_dim || network.output_dim() != spec.output_dim() {
            return Err(Error::Checkpoint("network shape disagrees with model.json".into()));
        }
        if spec.fine_head().size != cell_map.fine_count() {
            return Err(Error::Checkpoint("fine head size disagrees with cellmap.txt".into()));
        }
        Ok(Self {
            spec,
            cell_map,
            network,
        })
    }
}

pub fn predict_wifi(model: &WifiModel, rssi: &[f64]) -> Result<WifiPrediction> {
    if rssi.len() != model.spec.input_dim {
        return Err(Error::DimensionMismatch {
            expected: model.spec.input_dim,
            actual: rssi.len(),
        });
    }
    let x = ArrayView2::from_shape((1, rssi.len()), rssi).expect("one row");
    Ok(model.predict_batch(x)?.remove(0))
}

/// Splits training indices into (fit, holdout) with a seeded shuffle.
pub fn holdout_split(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let held = ((n as f64) * fraction).round() as usize;
    let held = held.min(n.saturating_sub(1));
    let mut fit = idx[..n - held].to_vec();
    let mut hold = idx[n - held..].to_vec();
    fit.sort_unstable();
    hold.sort_unstable();
    (fit, hold)
}

/// The samples used for per-epoch validation: a holdout from training, or
/// the test split when the fraction is zero. Test samples whose cell or
/// labels fall outside the training support are skipped.
fn validation_set(
    model: &WifiModel,
    corpus: &WifiCorpus,
    fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Option<(Array2<f64>, Array2<f64>)>)> {
    let n = corpus.train.len();
    if fraction > 0.0 {
        let (fit, hold) = holdout_split(n, fraction, seed ^ 0x7a11);
        if hold.is_empty() {
            return Ok((fit, None));
        }
        let held: Vec<WifiSample> = hold.iter().map(|&i| corpus.train[i].clone()).collect();
        let vx = rssi_matrix(&held, corpus.wap_count)?;
        let vy = model.targets(&held)?;
        return Ok((fit, Some((vx, vy))));
    }
    let usable: Vec<WifiSample> = corpus
        .test
        .iter()
        .filter(|s| model.targets(std::slice::from_ref(s)).is_ok())
        .cloned()
        .collect();
    let all: Vec<usize> = (0..n).collect();
    if usable.is_empty() {
        return Ok((all, None));
    }
    Ok((
        all,
        Some((rssi_matrix(&usable, corpus.wap_count)?, model.targets(&usable)?)),
    ))
}

/// Trains on BCE over the concatenated multi-hot targets.
pub fn train_wifi(
    model: &mut WifiModel,
    corpus: &WifiCorpus,
    config: &TrainConfig,
    validation_fraction: f64,
) -> Result<TrainReport> {
    require_normalized(corpus)?;
    let (fit, validation) = validation_set(model, corpus, validation_fraction, config.seed)?;
    let samples: Vec<WifiSample> = fit.iter().map(|&i| corpus.train[i].clone()).collect();
    let x = rssi_matrix(&samples, corpus.wap_count)?;
    let y = model.targets(&samples)?;
    let validation = validation.as_ref().map(|(vx, vy)| (vx.view(), vy.view()));
    train(&mut model.network, x.view(), y.view(), LossKind::Bce, config, validation)
}

/// Position errors, hit rates and the off-map rate over `samples`, plus the
/// (truth, prediction) pairs in input order.
pub fn evaluate_wifi(
    model: &WifiModel,
    samples: &[WifiSample],
    config: Map<String, Value>,
) -> Result<(MetricsReport, Vec<(Point, Point)>)> {
    if samples.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let x = rssi_matrix(samples, model.spec.input_dim)?;
    let predictions = model.predict_batch(x.view())?;
    let mut errors = Vec::with_capacity(samples.len());
    let mut pairs = Vec::with_capacity(samples.len());
    let mut off_map = Vec::with_capacity(samples.len());
    let mut hits: Vec<(&str, Vec<bool>)> = model
        .spec
        .heads
        .iter()
        .map(|h| (h.kind.name(), Vec::with_capacity(samples.len())))
        .collect();
    for (s, p) in samples.iter().zip(&predictions) {
        errors.push(position_error(p.position, s.position));
        pairs.push((s.position, p.position));
        off_map.push(!model.cell_map.is_on_map(p.position));
        let truth_fine = model.cell_map.fine_class(s.position);
        let truth_coarse = model.cell_map.coarse().and_then(|c| {
            let side = c.side();
            model
                .cell_map
                .spec()
                .quantize_with(s.position, side)
                .ok()
                .and_then(|cell| c.class_of(cell))
        });
        for (head, (_, flags)) in model.spec.heads.iter().zip(hits.iter_mut()) {
            let got = p.head(head.kind).expect("every head decoded");
            let hit = match head.kind {
                HeadKind::Fine => truth_fine == Some(got.class),
                HeadKind::Coarse => truth_coarse == Some(got.class),
                HeadKind::Building => s.building == Some(got.label),
                HeadKind::Floor => s.floor == Some(got.label),
                HeadKind::Space => s.space_id == Some(got.label),
            };
            flags.push(hit);
        }
    }
    let hit_refs: Vec<(&str, &[bool])> = hits.iter().map(|(k, v)| (*k, v.as_slice())).collect();
    let mut echo = model_echo(&model.spec);
    echo.extend(config);
    let report = summarize(&errors, &hit_refs, &off_map, echo)?;
    Ok((report, pairs))
}

fn model_echo(spec: &WifiModelSpec) -> Map<String, Value> {
    let mut m = Map::new();
    m.insert("tau".into(), Value::from(spec.tau));
    m.insert("coarse_side".into(), spec.coarse_side.map_or(Value::Null, Value::from));
    m.insert("adjacency".into(), Value::from(spec.adjacency));
    m.insert("seed".into(), Value::from(spec.seed));
    m.insert("k_fine".into(), Value::from(spec.fine_head().size));
    m
}
