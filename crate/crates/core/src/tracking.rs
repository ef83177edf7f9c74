//! IMU path tracking: a projection shared across segment slots, a
//! displacement network, and a location classifier over quantized end cells.
//! Also the deep-regression tracker used as its baseline.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::datasets::store::write_atomic;
use crate::datasets::{ImuCorpus, ImuPath, Segment};
use crate::error::{Error, Result};
use crate::grid::{CellMap, GridSpec, Point};
use crate::metrics::{evaluate_positions, MetricsReport};
use crate::nn::init::xavier_with_rng;
use crate::nn::loss::{bce_loss, mse_loss};
use crate::nn::network::sigmoid;
use crate::nn::train::epoch_batches;
use crate::nn::{
    checkpoint, Activation, Layer, Linear, Mode, Network, Optimizer, ParamMut, Parameterized,
    TrainConfig, TrainReport,
};
use crate::wifi::argmax;

/// Per-axis standardization applied to segment readings before projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisScaling {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl AxisScaling {
    pub fn identity(axes: usize) -> Self {
        Self {
            mean: vec![0.0; axes],
            scale: vec![1.0; axes],
        }
    }

    /// Mean and inverse standard deviation per axis over the given segments.
    /// Constant axes get scale 1 (they become zero after centering).
    pub fn fit<'a>(segments: impl IntoIterator<Item = &'a Segment>, axes: usize) -> Self {
        let mut sum = vec![0.0f64; axes];
        let mut sq = vec![0.0f64; axes];
        let mut count = 0usize;
        for seg in segments {
            for row in seg.as_slice().chunks_exact(axes) {
                for (a, &v) in row.iter().enumerate() {
                    sum[a] += v as f64;
                    sq[a] += (v as f64) * (v as f64);
                }
                count += 1;
            }
        }
        if count == 0 {
            return Self::identity(axes);
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let scale = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let var = (q / n - m * m).max(0.0);
                if var.sqrt() > 1e-6 {
                    1.0 / var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, scale }
    }

    fn flatten(&self, seg: &Segment) -> impl Iterator<Item = f64> + '_ {
        let axes = self.mean.len();
        let data = seg.as_slice().to_vec();
        data.into_iter()
            .enumerate()
            .map(move |(i, v)| (v as f64 - self.mean[i % axes]) * self.scale[i % axes])
    }
}

struct ProjectionCache {
    /// Distinct segments of the batch, flattened and scaled, one per row.
    unique: Array2<f64>,
    /// For each path, the unique-row index of each slot.
    slots: Vec<Vec<usize>>,
}

/// One `(rows * axes) x p` matrix applied to every segment slot. A path's
/// embedding is the concatenation of its slot projections, zero-padded to
/// `max_segments` slots.
#[derive(Clone)]
pub struct Projection {
    pub weight: Array2<f64>,
    pub grad: Array2<f64>,
    pub scaling: AxisScaling,
    pub segment_shape: (usize, usize),
    pub max_segments: usize,
    cache: Option<Arc<ProjectionCache>>,
}

impl std::fmt::Debug for Projection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Projection")
            .field("shape", &self.weight.dim())
            .field("segment_shape", &self.segment_shape)
            .field("max_segments", &self.max_segments)
            .finish()
    }
}

impl PartialEq for Projection {
    fn eq(&self, other: &Self) -> bool {
        self.weight == other.weight
            && self.scaling == other.scaling
            && self.segment_shape == other.segment_shape
            && self.max_segments == other.max_segments
    }
}

impl Projection {
    pub fn new(
        segment_shape: (usize, usize),
        dim: usize,
        max_segments: usize,
        scaling: AxisScaling,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let flat = segment_shape.0 * segment_shape.1;
        Self {
            weight: xavier_with_rng(flat, dim, rng),
            grad: Array2::zeros((flat, dim)),
            scaling,
            segment_shape,
            max_segments,
            cache: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.max_segments * self.dim()
    }

    fn gather(&self, paths: &[&ImuPath]) -> Result<ProjectionCache> {
        let mut index: HashMap<*const Segment, usize> = HashMap::new();
        let mut rows: Vec<&Segment> = Vec::new();
        let mut slots = Vec::with_capacity(paths.len());
        for path in paths {
            if path.segments.len() > self.max_segments {
                return Err(Error::InvalidConfig(format!(
                    "path has {} segments, the model holds {}",
                    path.segments.len(),
                    self.max_segments
                )));
            }
            let mut ids = Vec::with_capacity(path.segments.len());
            for seg in &path.segments {
                if seg.shape() != self.segment_shape {
                    return Err(Error::DimensionMismatch {
                        expected: self.segment_shape.0 * self.segment_shape.1,
                        actual: seg.rows() * seg.cols(),
                    });
                }
                let id = *index.entry(Arc::as_ptr(seg)).or_insert_with(|| {
                    rows.push(seg);
                    rows.len() - 1
                });
                ids.push(id);
            }
            slots.push(ids);
        }
        let flat = self.weight.nrows();
        let mut unique = Array2::zeros((rows.len(), flat));
        for (r, seg) in rows.iter().enumerate() {
            for (dst, v) in unique.row_mut(r).iter_mut().zip(self.scaling.flatten(seg)) {
                *dst = v;
            }
        }
        Ok(ProjectionCache { unique, slots })
    }

    fn assemble(&self, cache: &ProjectionCache) -> Array2<f64> {
        let p = self.dim();
        let projected = cache.unique.dot(&self.weight);
        let mut out = Array2::zeros((cache.slots.len(), self.output_dim()));
        for (b, ids) in cache.slots.iter().enumerate() {
            for (slot, &u) in ids.iter().enumerate() {
                out.slice_mut(s![b, slot * p..(slot + 1) * p])
                    .assign(&projected.row(u));
            }
        }
        out
    }

    pub fn embed(&self, paths: &[&ImuPath]) -> Result<Array2<f64>> {
        Ok(self.assemble(&self.gather(paths)?))
    }

    pub fn forward(&mut self, paths: &[&ImuPath]) -> Result<Array2<f64>> {
        let cache = Arc::new(self.gather(paths)?);
        let out = self.assemble(&cache);
        self.cache = Some(cache);
        Ok(out)
    }

    /// Accumulates the weight gradient over every slot of every path.
    pub fn backward(&mut self, grad: ArrayView2<f64>) -> Result<()> {
        let cache = self.cache.take().ok_or(Error::StaleCache)?;
        let p = self.dim();
        let mut per_unique = Array2::<f64>::zeros((cache.unique.nrows(), p));
        for (b, ids) in cache.slots.iter().enumerate() {
            for (slot, &u) in ids.iter().enumerate() {
                let g = grad.slice(s![b, slot * p..(slot + 1) * p]);
                let mut row = per_unique.row_mut(u);
                row += &g;
            }
        }
        self.grad.assign(&cache.unique.t().dot(&per_unique));
        Ok(())
    }

    fn clear_cache(&mut self) {
        self.cache = None;
    }

    fn visit(&mut self, f: &mut dyn FnMut(ParamMut<'_>)) {
        f(ParamMut {
            value: self.weight.as_slice_mut().expect("standard layout"),
            grad: self.grad.as_slice().expect("standard layout"),
            decay: true,
        });
    }

    fn to_network(&self) -> Network {
        let lin = Linear::new(self.weight.clone(), Array1::zeros(self.dim())).expect("shape");
        Network::new(vec![Layer::Linear(lin)]).expect("one layer")
    }

    fn from_network(
        net: &Network,
        scaling: AxisScaling,
        segment_shape: (usize, usize),
        max_segments: usize,
    ) -> Result<Self> {
        let weight = match net.layers() {
            [Layer::Linear(l)] => l.weight.clone(),
            _ => return Err(Error::Checkpoint("projection must be a single linear layer".into())),
        };
        if weight.nrows() != segment_shape.0 * segment_shape.1 {
            return Err(Error::Checkpoint("projection rows disagree with segment shape".into()));
        }
        Ok(Self {
            grad: Array2::zeros(weight.raw_dim()),
            weight,
            scaling,
            segment_shape,
            max_segments,
            cache: None,
        })
    }
}

fn one_hot_starts(paths: &[&ImuPath], count: usize) -> Result<Array2<f64>> {
    let mut x = Array2::zeros((paths.len(), count));
    for (i, p) in paths.iter().enumerate() {
        if p.start_id >= count {
            return Err(Error::UnknownStartLocation {
                id: p.start_id,
                count,
            });
        }
        x[[i, p.start_id]] = 1.0;
    }
    Ok(x)
}

fn displacements(paths: &[&ImuPath]) -> Array2<f64> {
    let mut d = Array2::zeros((paths.len(), 2));
    for (i, p) in paths.iter().enumerate() {
        let v = p.displacement();
        d[[i, 0]] = v[0];
        d[[i, 1]] = v[1];
    }
    d
}

fn concat(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    ndarray::concatenate(Axis(1), &[a, b]).expect("same row count")
}

fn read_file(dir: &Path, name: &str) -> Result<Vec<u8>> {
    let path = dir.join(name);
    fs::read(&path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path),
        _ => Error::Io(e),
    })
}

/// Restores `best` into `model` once training ends and fills `best_epoch`.
fn finish<M>(model: &mut M, best: Option<(f64, M)>, report: &mut TrainReport) {
    if let Some((_, snapshot)) = best {
        *model = snapshot;
    } else if !report.train_loss.is_empty() {
        report.best_epoch = Some(report.train_loss.len() - 1);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImuModelConfig {
    pub tau: f64,
    pub projection_dim: usize,
    pub max_segments: usize,
    pub hidden: Vec<usize>,
    pub batch_norm: bool,
    /// Weight of the auxiliary displacement MSE.
    pub beta: f64,
    pub adjacency: bool,
    /// Standardize each sensor axis before projection.
    pub scale_axes: bool,
    pub seed: u64,
}

impl Default for ImuModelConfig {
    fn default() -> Self {
        Self {
            tau: 0.4,
            projection_dim: 32,
            max_segments: 50,
            hidden: vec![128, 128],
            batch_norm: true,
            beta: 0.1,
            adjacency: false,
            scale_axes: true,
            seed: 0,
        }
    }
}

impl ImuModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidConfig(format!("tau must be positive, got {}", self.tau)));
        }
        if self.projection_dim == 0 || self.max_segments == 0 {
            return Err(Error::InvalidConfig(
                "projection_dim and max_segments must be positive".into(),
            ));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidConfig(format!("beta must be non-negative, got {}", self.beta)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImuModelSpec {
    pub segment_shape: (usize, usize),
    pub projection_dim: usize,
    pub max_segments: usize,
    pub hidden: Vec<usize>,
    pub reference_count: usize,
    pub k_fine: usize,
    pub tau: f64,
    pub beta: f64,
    pub adjacency: bool,
    pub seed: u64,
    pub scaling: AxisScaling,
}

/// Cell map over training end positions and the reference locations.
pub fn imu_cell_map(corpus: &ImuCorpus, tau: f64) -> Result<CellMap> {
    let mut points: Vec<Point> = corpus
        .splits
        .train
        .iter()
        .map(|&i| corpus.paths[i].end_position)
        .collect();
    points.extend(corpus.reference_locations.iter().copied());
    let spec = GridSpec::fit(&points, tau, None)?;
    CellMap::build(spec, &points)
}

fn training_scaling(corpus: &ImuCorpus, enabled: bool) -> AxisScaling {
    let axes = corpus.segment_shape.1;
    if !enabled {
        return AxisScaling::identity(axes);
    }
    let mut seen: HashMap<*const Segment, &Segment> = HashMap::new();
    let mut order = Vec::new();
    for &i in &corpus.splits.train {
        for seg in &corpus.paths[i].segments {
            seen.entry(Arc::as_ptr(seg)).or_insert_with(|| {
                order.push(seg.as_ref());
                seg.as_ref()
            });
        }
    }
    AxisScaling::fit(order, axes)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImuModel {
    pub spec: ImuModelSpec,
    pub cell_map: CellMap,
    pub projection: Projection,
    pub displacement: Network,
    pub location: Network,
}

/// Outputs of one forward pass over a batch of paths.
#[derive(Debug, Clone, PartialEq)]
pub struct ImuForward {
    pub displacement: Array2<f64>,
    pub logits: Array2<f64>,
}

impl ImuForward {
    pub fn scores(&self) -> Array2<f64> {
        self.logits.mapv(sigmoid)
    }
}

pub fn build_imu_model(corpus: &ImuCorpus, config: &ImuModelConfig) -> Result<ImuModel> {
    config.validate()?;
    if corpus.splits.train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let cell_map = imu_cell_map(corpus, config.tau)?;
    let scaling = training_scaling(corpus, config.scale_axes);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let projection = Projection::new(
        corpus.segment_shape,
        config.projection_dim,
        config.max_segments,
        scaling.clone(),
        &mut rng,
    );
    let displacement = Network::mlp(
        projection.output_dim(),
        &config.hidden,
        2,
        Activation::Tanh,
        config.batch_norm,
        &mut rng,
    );
    let reference_count = corpus.reference_locations.len();
    let location = Network::mlp(
        2 + reference_count,
        &config.hidden,
        cell_map.fine_count(),
        Activation::Tanh,
        config.batch_norm,
        &mut rng,
    );
    Ok(ImuModel {
        spec: ImuModelSpec {
            segment_shape: corpus.segment_shape,
            projection_dim: config.projection_dim,
            max_segments: config.max_segments,
            hidden: config.hidden.clone(),
            reference_count,
            k_fine: cell_map.fine_count(),
            tau: config.tau,
            beta: config.beta,
            adjacency: config.adjacency,
            seed: config.seed,
            scaling,
        },
        cell_map,
        projection,
        displacement,
        location,
    })
}

impl Parameterized for ImuModel {
    fn visit_params(&mut self, f: &mut dyn FnMut(ParamMut<'_>)) {
        self.projection.visit(f);
        self.displacement.visit_params(f);
        self.location.visit_params(f);
    }
}

impl ImuModel {
    fn set_mode(&mut self, mode: Mode) {
        self.displacement.set_mode(mode);
        self.location.set_mode(mode);
    }

    fn clear_caches(&mut self) {
        self.projection.clear_cache();
        self.displacement.clear_caches();
        self.location.clear_caches();
    }

    /// Multi-hot end-cell targets.
    pub fn targets(&self, paths: &[&ImuPath]) -> Result<Array2<f64>> {
        let mut y = Array2::zeros((paths.len(), self.spec.k_fine));
        for (i, p) in paths.iter().enumerate() {
            let label = self.cell_map.label_sample(p.end_position, self.spec.adjacency)?;
            y[[i, label.fine_class]] = 1.0;
            for &e in &label.extra_classes {
                y[[i, e]] = 1.0;
            }
        }
        Ok(y)
    }

    /// Pure inference forward pass.
    pub fn infer(&self, paths: &[&ImuPath]) -> Result<ImuForward> {
        let starts = one_hot_starts(paths, self.spec.reference_count)?;
        let emb = self.projection.embed(paths)?;
        let v = self.displacement.infer(emb.view())?.logits;
        let logits = self.location.infer(concat(v.view(), starts.view()).view())?.logits;
        Ok(ImuForward {
            displacement: v,
            logits,
        })
    }

    fn forward(&mut self, paths: &[&ImuPath]) -> Result<ImuForward> {
        let starts = one_hot_starts(paths, self.spec.reference_count)?;
        let emb = self.projection.forward(paths)?;
        let v = self.displacement.forward(emb.view())?.logits;
        let logits = self.location.forward(concat(v.view(), starts.view()).view())?.logits;
        Ok(ImuForward {
            displacement: v,
            logits,
        })
    }

    /// Loss of a batch in the current mode, without touching gradients.
    pub fn batch_loss(&mut self, paths: &[&ImuPath], targets: ArrayView2<f64>) -> Result<f64> {
        let out = self.forward(paths)?;
        self.clear_caches();
        let bce = bce_loss(out.scores().view(), targets).loss;
        let mse = mse_loss(out.displacement.view(), displacements(paths).view()).loss;
        Ok(bce + self.spec.beta * mse)
    }

    /// Forward and backward over a batch; returns the loss and leaves
    /// gradients in every parameter.
    pub fn loss_and_backward(&mut self, paths: &[&ImuPath], targets: ArrayView2<f64>) -> Result<f64> {
        let out = self.forward(paths)?;
        let bce = bce_loss(out.scores().view(), targets);
        let mse = mse_loss(out.displacement.view(), displacements(paths).view());
        let grad_in = self.location.backward(bce.grad.view())?;
        let grad_v = grad_in.slice(s![.., 0..2]).to_owned() + &(mse.grad * self.spec.beta);
        let grad_emb = self.displacement.backward(grad_v.view())?;
        self.projection.backward(grad_emb.view())?;
        Ok(bce.loss + self.spec.beta * mse.loss)
    }

    fn evaluation_loss(&self, paths: &[&ImuPath], targets: ArrayView2<f64>) -> Result<f64> {
        let out = self.infer(paths)?;
        let bce = bce_loss(out.scores().view(), targets).loss;
        let mse = mse_loss(out.displacement.view(), displacements(paths).view()).loss;
        Ok(bce + self.spec.beta * mse)
    }

    pub fn predict(&self, paths: &[&ImuPath]) -> Result<Vec<Point>> {
        let out = self.infer(paths)?;
        Ok(out
            .logits
            .rows()
            .into_iter()
            .map(|row| self.cell_map.fine_centroid(argmax(&row.to_vec())))
            .collect())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        write_atomic(
            &dir.join("projection.nnet"),
            &checkpoint::to_bytes(&self.projection.to_network()),
        )?;
        write_atomic(&dir.join("displacement.nnet"), &checkpoint::to_bytes(&self.displacement))?;
        write_atomic(&dir.join("location.nnet"), &checkpoint::to_bytes(&self.location))?;
        write_atomic(&dir.join("cellmap.txt"), self.cell_map.to_text().as_bytes())?;
        let mut json = serde_json::to_string_pretty(&self.spec)?;
        json.push('\n');
        write_atomic(&dir.join("model.json"), json.as_bytes())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let spec: ImuModelSpec = serde_json::from_slice(&read_file(dir, "model.json")?)?;
        let cell_map = CellMap::from_text(&String::from_utf8_lossy(&read_file(dir, "cellmap.txt")?))?;
        let projection = Projection::from_network(
            &checkpoint::from_bytes(&read_file(dir, "projection.nnet")?)?,
            spec.scaling.clone(),
            spec.segment_shape,
            spec.max_segments,
        )?;
        let displacement = checkpoint::from_bytes(&read_file(dir, "displacement.nnet")?)?;
        let location = checkpoint::from_bytes(&read_file(dir, "location.nnet")?)?;
        if displacement.input_dim() != projection.output_dim()
            || location.input_dim() != 2 + spec.reference_count
            || location.output_dim() != cell_map.fine_count()
        {
            return Err(Error::Checkpoint("network shapes disagree with model.json".into()));
        }
        Ok(Self {
            spec,
            cell_map,
            projection,
            displacement,
            location,
        })
    }
}

pub fn forward_imu(model: &ImuModel, path: &ImuPath) -> Result<(Point, Vec<f64>)> {
    let out = model.infer(&[path])?;
    let v = [out.displacement[[0, 0]], out.displacement[[0, 1]]];
    Ok((v, out.scores().row(0).to_vec()))
}

pub fn predict_end_position(model: &ImuModel, path: &ImuPath) -> Result<Point> {
    Ok(model.predict(&[path])?[0])
}

/// Shared mini-batch loop with validation-driven early stopping.
fn fit_loop<M: Parameterized + Clone>(
    model: &mut M,
    n_train: usize,
    config: &TrainConfig,
    mut step: impl FnMut(&mut M, &[usize]) -> Result<f64>,
    mut validate: Option<impl FnMut(&M) -> Result<f64>>,
    mut prepare: impl FnMut(&mut M, Mode),
) -> Result<TrainReport> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut optimizer: Optimizer = config.optimizer();
    let mut report = TrainReport::default();
    let mut best: Option<(f64, M)> = None;
    let mut since_best = 0;
    for epoch in 0..config.epochs {
        prepare(model, Mode::Training);
        let mut total = 0.0;
        for batch in epoch_batches(n_train, config.batch_size, &mut rng) {
            let loss = step(model, &batch)?;
            if !loss.is_finite() {
                return Err(Error::DivergedLoss { epoch });
            }
            optimizer.step(model);
            total += loss * batch.len() as f64;
        }
        report.train_loss.push(total / n_train.max(1) as f64);
        if let Some(validate) = validate.as_mut() {
            prepare(model, Mode::Inference);
            let v = validate(model)?;
            if !v.is_finite() {
                return Err(Error::DivergedLoss { epoch });
            }
            report.validation_loss.push(v);
            if config.patience.is_some() {
                if best.as_ref().is_none_or(|(b, _)| v < *b) {
                    best = Some((v, model.clone()));
                    report.best_epoch = Some(epoch);
                    since_best = 0;
                } else {
                    since_best += 1;
                    if config.patience.is_some_and(|p| since_best >= p) {
                        report.stopped_early = true;
                        break;
                    }
                }
            }
        }
    }
    finish(model, best, &mut report);
    prepare(model, Mode::Inference);
    Ok(report)
}

/// Trains on BCE over end cells plus `beta` times the displacement MSE. The
/// corpus validation split drives early stopping.
pub fn train_imu(model: &mut ImuModel, corpus: &ImuCorpus, config: &TrainConfig) -> Result<TrainReport> {
    let train_paths = corpus.subset(&corpus.splits.train);
    let targets = model.targets(&train_paths)?;
    let val_paths = corpus.subset(&corpus.splits.validation);
    let val_targets = model.targets(&val_paths)?;
    let validate = (!val_paths.is_empty())
        .then_some(|m: &ImuModel| m.evaluation_loss(&val_paths, val_targets.view()));
    fit_loop(
        model,
        train_paths.len(),
        config,
        |m, batch| {
            let paths: Vec<&ImuPath> = batch.iter().map(|&i| train_paths[i]).collect();
            let y = targets.select(Axis(0), batch);
            m.loss_and_backward(&paths, y.view())
        },
        validate,
        |m, mode| {
            m.clear_caches();
            m.set_mode(mode);
        },
    )
}

/// Mean displacement MSE (squared meters) over the given paths.
pub fn displacement_mse(model: &ImuModel, paths: &[&ImuPath]) -> Result<f64> {
    let out = model.infer(paths)?;
    let d = displacements(paths);
    Ok(mse_loss(out.displacement.view(), d.view()).loss)
}

fn spec_echo(tau: f64, seed: u64, method: &str) -> Map<String, Value> {
    let mut m = Map::new();
    m.insert("method".into(), Value::from(method));
    m.insert("tau".into(), Value::from(tau));
    m.insert("seed".into(), Value::from(seed));
    m
}

pub fn evaluate_imu(
    model: &ImuModel,
    paths: &[&ImuPath],
    config: Map<String, Value>,
) -> Result<(MetricsReport, Vec<(Point, Point)>)> {
    let preds = model.predict(paths)?;
    let pairs: Vec<(Point, Point)> = paths.iter().map(|p| p.end_position).zip(preds).collect();
    let mut echo = spec_echo(model.spec.tau, model.spec.seed, "noble");
    echo.extend(config);
    Ok((evaluate_positions(&pairs, &model.cell_map, echo)?, pairs))
}

/// Deep-regression tracker: projection, then an MLP on the embedding and the
/// one-hot start that outputs standardized end coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ImuRegression {
    pub projection: Projection,
    pub network: Network,
    pub reference_count: usize,
    pub target_mean: Point,
    pub target_scale: Point,
}

impl Parameterized for ImuRegression {
    fn visit_params(&mut self, f: &mut dyn FnMut(ParamMut<'_>)) {
        self.projection.visit(f);
        self.network.visit_params(f);
    }
}

impl ImuRegression {
    pub fn build(corpus: &ImuCorpus, config: &ImuModelConfig) -> Result<Self> {
        config.validate()?;
        if corpus.splits.train.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let projection = Projection::new(
            corpus.segment_shape,
            config.projection_dim,
            config.max_segments,
            training_scaling(corpus, config.scale_axes),
            &mut rng,
        );
        let reference_count = corpus.reference_locations.len();
        let network = Network::mlp(
            projection.output_dim() + reference_count,
            &config.hidden,
            2,
            Activation::Tanh,
            config.batch_norm,
            &mut rng,
        );
        let ends: Vec<Point> = corpus
            .splits
            .train
            .iter()
            .map(|&i| corpus.paths[i].end_position)
            .collect();
        let n = ends.len() as f64;
        let mut mean = [0.0; 2];
        let mut scale = [1.0; 2];
        for k in 0..2 {
            mean[k] = ends.iter().map(|p| p[k]).sum::<f64>() / n;
            let var = ends.iter().map(|p| (p[k] - mean[k]).powi(2)).sum::<f64>() / n;
            if var > 1e-12 {
                scale[k] = var.sqrt();
            }
        }
        Ok(Self {
            projection,
            network,
            reference_count,
            target_mean: mean,
            target_scale: scale,
        })
    }

    fn standardized_targets(&self, paths: &[&ImuPath]) -> Array2<f64> {
        let mut y = Array2::zeros((paths.len(), 2));
        for (i, p) in paths.iter().enumerate() {
            for k in 0..2 {
                y[[i, k]] = (p.end_position[k] - self.target_mean[k]) / self.target_scale[k];
            }
        }
        y
    }

    fn inputs(&self, emb: Array2<f64>, paths: &[&ImuPath]) -> Result<Array2<f64>> {
        let starts = one_hot_starts(paths, self.reference_count)?;
        Ok(concat(emb.view(), starts.view()))
    }

    fn loss_and_backward(&mut self, paths: &[&ImuPath]) -> Result<f64> {
        let emb = self.projection.forward(paths)?;
        let x = self.inputs(emb, paths)?;
        let out = self.network.forward(x.view())?.logits;
        let loss = mse_loss(out.view(), self.standardized_targets(paths).view());
        let grad_x = self.network.backward(loss.grad.view())?;
        let width = self.projection.output_dim();
        self.projection.backward(grad_x.slice(s![.., 0..width]))?;
        Ok(loss.loss)
    }

    fn evaluation_loss(&self, paths: &[&ImuPath]) -> Result<f64> {
        let x = self.inputs(self.projection.embed(paths)?, paths)?;
        let out = self.network.infer(x.view())?.logits;
        Ok(mse_loss(out.view(), self.standardized_targets(paths).view()).loss)
    }

    pub fn predict(&self, paths: &[&ImuPath]) -> Result<Vec<Point>> {
        let x = self.inputs(self.projection.embed(paths)?, paths)?;
        let out = self.network.infer(x.view())?.logits;
        Ok(out
            .rows()
            .into_iter()
            .map(|r| {
                [
                    r[0] * self.target_scale[0] + self.target_mean[0],
                    r[1] * self.target_scale[1] + self.target_mean[1],
                ]
            })
            .collect())
    }

    pub fn train(&mut self, corpus: &ImuCorpus, config: &TrainConfig) -> Result<TrainReport> {
        let train_paths = corpus.subset(&corpus.splits.train);
        let val_paths = corpus.subset(&corpus.splits.validation);
        let validate = (!val_paths.is_empty()).then_some(|m: &ImuRegression| m.evaluation_loss(&val_paths));
        fit_loop(
            self,
            train_paths.len(),
            config,
            |m, batch| {
                let paths: Vec<&ImuPath> = batch.iter().map(|&i| train_paths[i]).collect();
                m.loss_and_backward(&paths)
            },
            validate,
            |m, mode| {
                m.projection.clear_cache();
                m.network.clear_caches();
                m.network.set_mode(mode);
            },
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::imu::{build_imu_paths, ReferenceWalk, SplitRule};
    use crate::nn::gradcheck::{central_difference, relative_error};
    use rand::Rng;

    fn tiny_corpus(count: usize, seed: u64) -> ImuCorpus {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points: Vec<Point> = (0..8).map(|i| [i as f64, (i % 3) as f64]).collect();
        let segments = (0..7)
            .map(|i| {
                let d = [points[i + 1][0] - points[i][0], points[i + 1][1] - points[i][1]];
                let data = (0..4 * 2)
                    .map(|k| (d[k % 2] + rng.random_range(-0.01..0.01)) as f32)
                    .collect();
                Segment::new(4, 2, data).unwrap()
            })
            .collect();
        let walk = ReferenceWalk::new(points, segments).unwrap();
        build_imu_paths(&walk, 3, count, seed, SplitRule::default()).unwrap()
    }

    fn tiny_config() -> ImuModelConfig {
        ImuModelConfig {
            tau: 0.5,
            projection_dim: 2,
            max_segments: 3,
            hidden: vec![6],
            ..ImuModelConfig::default()
        }
    }

    #[test]
    fn padding_and_zero_weights() {
        let corpus = tiny_corpus(30, 1);
        let mut model = build_imu_model(&corpus, &tiny_config()).unwrap();
        let single = corpus.paths.iter().find(|p| p.len() == 1).unwrap();
        let emb = model.projection.embed(&[single]).unwrap();
        assert_eq!(emb.ncols(), 3 * 2);
        assert!(emb.slice(s![0, 2..]).iter().all(|&v| v == 0.0));
        model.projection.weight.fill(0.0);
        assert!(model.projection.embed(&[single]).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn slot_order_matters() {
        let corpus = tiny_corpus(60, 2);
        let model = build_imu_model(&corpus, &tiny_config()).unwrap();
        let path = corpus.paths.iter().find(|p| p.len() >= 2).unwrap();
        let mut swapped = path.clone();
        swapped.segments.swap(0, 1);
        assert_ne!(
            model.projection.embed(&[path]).unwrap(),
            model.projection.embed(&[&swapped]).unwrap()
        );
    }

    #[test]
    fn score_shape_and_determinism() {
        let corpus = tiny_corpus(30, 3);
        let model = build_imu_model(&corpus, &tiny_config()).unwrap();
        let (v1, s1) = forward_imu(&model, &corpus.paths[0]).unwrap();
        let (v2, s2) = forward_imu(&model, &corpus.paths[0]).unwrap();
        assert_eq!(s1.len(), model.spec.k_fine);
        assert_eq!((v1, s1), (v2, s2));
    }

    #[test]
    fn unknown_start_is_rejected() {
        let corpus = tiny_corpus(10, 4);
        let model = build_imu_model(&corpus, &tiny_config()).unwrap();
        let mut path = corpus.paths[0].clone();
        path.start_id = 99;
        assert!(matches!(
            forward_imu(&model, &path),
            Err(Error::UnknownStartLocation { id: 99, count: 8 })
        ));
    }

    #[test]
    fn projection_gradient_accumulates_over_slots() {
        let corpus = tiny_corpus(40, 5);
        let mut model = build_imu_model(&corpus, &tiny_config()).unwrap();
        // shared segments across and within paths
        let paths: Vec<&ImuPath> = corpus.paths.iter().take(12).collect();
        let y = model.targets(&paths).unwrap();
        model.set_mode(Mode::Training);
        model.loss_and_backward(&paths, y.view()).unwrap();
        let analytic = model.projection.grad.clone();
        let mut worst = 0.0f64;
        for idx in 0..analytic.len() {
            let (r, c) = (idx / analytic.ncols(), idx % analytic.ncols());
            let base = model.projection.weight[[r, c]];
            let numeric = central_difference(
                |v| {
                    model.projection.weight[[r, c]] = v;
                    model.batch_loss(&paths, y.view()).unwrap()
                },
                base,
                1e-5,
            );
            model.projection.weight[[r, c]] = base;
            worst = worst.max(relative_error(analytic[[r, c]], numeric, 1e-6));
        }
        assert!(worst < 1e-4, "{worst}");
    }

    #[test]
    fn beta_zero_is_pure_classification() {
        let corpus = tiny_corpus(20, 6);
        let mut model = build_imu_model(&corpus, &ImuModelConfig { beta: 0.0, ..tiny_config() }).unwrap();
        let paths: Vec<&ImuPath> = corpus.paths.iter().take(5).collect();
        let y = model.targets(&paths).unwrap();
        model.set_mode(Mode::Inference);
        let total = model.batch_loss(&paths, y.view()).unwrap();
        let out = model.infer(&paths).unwrap();
        let bce = bce_loss(out.scores().view(), y.view()).loss;
        assert!((total - bce).abs() < 1e-12);
    }

    #[test]
    fn overfit_tiny_corpus_hits_true_cells() {
        let corpus = tiny_corpus(60, 7);
        let mut model = build_imu_model(&corpus, &tiny_config()).unwrap();
        let config = TrainConfig {
            learning_rate: 0.02,
            batch_size: 16,
            epochs: 800,
            patience: None,
            ..TrainConfig::default()
        };
        train_imu(&mut model, &corpus, &config).unwrap();
        let paths = corpus.subset(&corpus.splits.train);
        let preds = model.predict(&paths).unwrap();
        let correct = paths
            .iter()
            .zip(&preds)
            .filter(|(p, q)| model.cell_map.fine_class(p.end_position) == model.cell_map.fine_class(**q))
            .count();
        assert!(correct as f64 / paths.len() as f64 > 0.95, "{correct}/{}", paths.len());
        for q in preds {
            assert!(model.cell_map.is_on_map(q));
        }
    }

    #[test]
    fn training_is_reproducible_and_round_trips() {
        let corpus = tiny_corpus(30, 8);
        let config = TrainConfig {
            epochs: 3,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let run = || {
            let mut m = build_imu_model(&corpus, &tiny_config()).unwrap();
            let r = train_imu(&mut m, &corpus, &config).unwrap();
            (m, r)
        };
        let (a, ra) = run();
        let (b, rb) = run();
        assert_eq!(ra, rb);
        assert_eq!(a, b);
        let dir = tempfile::tempdir().unwrap();
        a.save(dir.path()).unwrap();
        let back = ImuModel::load(dir.path()).unwrap();
        let paths = corpus.subset(&corpus.splits.test);
        assert_eq!(back.predict(&paths).unwrap(), a.predict(&paths).unwrap());
    }

    #[test]
    fn regression_learns_tiny_corpus() {
        let corpus = tiny_corpus(60, 9);
        let mut model = ImuRegression::build(&corpus, &tiny_config()).unwrap();
        let config = TrainConfig {
            learning_rate: 0.01,
            batch_size: 16,
            epochs: 300,
            patience: None,
            ..TrainConfig::default()
        };
        let report = model.train(&corpus, &config).unwrap();
        assert!(report.train_loss.last().unwrap() < &report.train_loss[0]);
        let paths = corpus.subset(&corpus.splits.train);
        let preds = model.predict(&paths).unwrap();
        let mean = paths
            .iter()
            .zip(&preds)
            .map(|(p, q)| crate::metrics::position_error(p.end_position, *q))
            .sum::<f64>()
            / paths.len() as f64;
        assert!(mean < 0.5, "{mean}");
    }
}
