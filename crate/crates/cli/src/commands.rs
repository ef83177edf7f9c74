use std::path::Path;

use noble_core::baselines::{
    deep_regression, embedding_regression, project_to_map, regression_pairs, regression_projection,
    training_cell_map, write_embedding_csv, EmbeddingMethod,
};
use noble_core::datasets::store::{read_imu_dir, read_wifi_dir, write_atomic, write_imu_dir, write_wifi_dir};
use noble_core::datasets::synth::{synth_imu, synth_wifi, OccupancyMask, SynthImuParams, SynthWifiParams};
use noble_core::datasets::{load_ipin2016, load_ujiindoorloc, ImuCorpus, WifiCorpus};
use noble_core::metrics::{emit_scatter, evaluate_positions, MetricsReport};
use noble_core::theory::{class_embedding, class_embedding_range, theory_report, train_blob_classifier};
use noble_core::tracking::{build_imu_model, evaluate_imu, imu_cell_map, train_imu, ImuRegression};
use noble_core::wifi::{build_wifi_model, evaluate_wifi, rssi_matrix, train_wifi, HeadKind};
use noble_core::{CellMap, GridSpec, ImuModel, Point, TrainReport, WifiModel};
use serde_json::{json, Map, Value};

use crate::config::ExperimentConfig;
use crate::{CliError, Command, DatasetKind, Method, Task};

pub fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Ingest {
            dataset,
            input,
            out,
            seed,
            samples,
            noise_dbm,
            paths,
        } => ingest(dataset, input.as_deref(), &out, seed, samples, noise_dbm, paths),
        Command::Train { task, data, config, out } => train(task, &data, &load_config(config.as_deref())?, &out),
        Command::Eval {
            task,
            model,
            data,
            out,
            emit_scatter,
        } => eval(task, &model, &data, &out, emit_scatter),
        Command::Baseline { method, data, config, out } => {
            baseline(method, &data, &load_config(config.as_deref())?, &out)
        }
        Command::CheckTheory {
            model,
            data,
            lambda,
            seed,
            out,
        } => check_theory(model.as_deref(), data.as_deref(), lambda, seed, &out),
        Command::Quantize { data, tau, coarse, out } => quantize(&data, tau, coarse, &out),
    }
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig, CliError> {
    path.map_or_else(|| Ok(ExperimentConfig::default()), ExperimentConfig::load)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), CliError> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(write_atomic(path, s.as_bytes())?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CorpusKind {
    Wifi,
    Imu,
}

fn corpus_kind(dir: &Path) -> Result<CorpusKind, CliError> {
    let path = dir.join("meta.json");
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::Usage(format!("--data {}: cannot read meta.json: {e}", dir.display())))?;
    let meta: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("--data {}: meta.json: {e}", dir.display())))?;
    match meta.get("kind").and_then(Value::as_str) {
        Some("wifi") => Ok(CorpusKind::Wifi),
        Some("imu") => Ok(CorpusKind::Imu),
        other => Err(CliError::Usage(format!("--data {}: unknown corpus kind {other:?}", dir.display()))),
    }
}

fn expect_kind(dir: &Path, want: CorpusKind) -> Result<(), CliError> {
    let got = corpus_kind(dir)?;
    if got != want {
        return Err(CliError::Usage(format!(
            "--data {} holds a {got:?} corpus, expected {want:?}",
            dir.display()
        )));
    }
    Ok(())
}

fn read_wifi(dir: &Path) -> Result<WifiCorpus, CliError> {
    expect_kind(dir, CorpusKind::Wifi)?;
    Ok(read_wifi_dir(dir)?.0.normalized())
}

fn read_imu(dir: &Path) -> Result<ImuCorpus, CliError> {
    expect_kind(dir, CorpusKind::Imu)?;
    Ok(read_imu_dir(dir)?.0)
}

fn ingest(
    dataset: DatasetKind,
    input: Option<&Path>,
    out: &Path,
    seed: u64,
    samples: usize,
    noise_dbm: f64,
    paths: usize,
) -> Result<(), CliError> {
    let need_input = || input.ok_or_else(|| CliError::Usage(format!("--in is required for {dataset:?}")));
    match dataset {
        DatasetKind::Ujiindoorloc => {
            let dir = need_input()?;
            let corpus = load_ujiindoorloc(&dir.join("trainingData.csv"), &dir.join("validationData.csv"))?;
            let generator = json!({"source": "ujiindoorloc", "input": dir});
            write_wifi_dir(out, &corpus.normalize_rssi()?, generator)?;
        }
        DatasetKind::Ipin2016 => {
            let file = need_input()?;
            let corpus = load_ipin2016(file, seed)?;
            let generator = json!({"source": "ipin2016", "input": file, "seed": seed});
            write_wifi_dir(out, &corpus.normalize_rssi()?, generator)?;
        }
        DatasetKind::SyntheticWifi => {
            let params = SynthWifiParams::campus(samples, noise_dbm);
            let corpus = synth_wifi(&OccupancyMask::campus(), &params, seed)?;
            let generator = json!({"source": "synthetic-wifi", "seed": seed, "params": params});
            write_wifi_dir(out, &corpus.normalize_rssi()?, generator)?;
        }
        DatasetKind::SyntheticImu => {
            let params = SynthImuParams {
                paths,
                ..SynthImuParams::default()
            };
            let synth = synth_imu(&OccupancyMask::campus(), &params, seed)?;
            let generator = json!({"source": "synthetic-imu", "seed": seed, "params": params});
            write_imu_dir(out, &synth.corpus, generator)?;
        }
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn write_run_files(out: &Path, task: &str, config: &ExperimentConfig, report: &TrainReport) -> Result<(), CliError> {
    write_json(&out.join("config.json"), &json!({"task": task, "config": config}))?;
    write_json(&out.join("train_report.json"), report)
}

fn train(task: Task, data: &Path, config: &ExperimentConfig, out: &Path) -> Result<(), CliError> {
    let train_config = config.train();
    train_config.validate()?;
    let report = match task {
        Task::Wifi => {
            let corpus = read_wifi(data)?;
            let model_config = config.wifi_model();
            let mut model = build_wifi_model(&corpus, &model_config)?;
            let report = train_wifi(&mut model, &corpus, &train_config, model_config.validation_fraction)?;
            model.save(out)?;
            report
        }
        Task::Imu => {
            let corpus = read_imu(data)?;
            let mut model = build_imu_model(&corpus, &config.imu_model())?;
            let report = train_imu(&mut model, &corpus, &train_config)?;
            model.save(out)?;
            report
        }
    };
    let name = match task {
        Task::Wifi => "wifi",
        Task::Imu => "imu",
    };
    write_run_files(out, name, config, &report)?;
    println!(
        "trained {} epochs (best {:?}); model in {}",
        report.train_loss.len(),
        report.best_epoch,
        out.display()
    );
    Ok(())
}

/// Config echo stored next to a trained model, if any.
fn model_echo(model_dir: &Path) -> Map<String, Value> {
    let path = model_dir.join("config.json");
    let parsed: Option<Value> = std::fs::read_to_string(path).ok().and_then(|t| serde_json::from_str(&t).ok());
    match parsed.and_then(|v| v.get("config").cloned()) {
        Some(Value::Object(m)) => m.into_iter().filter(|(_, v)| !v.is_null()).collect(),
        _ => Map::new(),
    }
}

fn write_report(out: &Path, report: &MetricsReport, pairs: &[(Point, Point)], scatter: bool) -> Result<(), CliError> {
    report.write(&out.join("metrics.json"))?;
    if scatter {
        emit_scatter(pairs, &out.join("scatter.csv"))?;
    }
    println!(
        "mean {:.3} m, median {:.3} m, off-map {:.3}, n = {}",
        report.mean_m, report.median_m, report.off_map_rate, report.n
    );
    Ok(())
}

fn eval(task: Task, model_dir: &Path, data: &Path, out: &Path, scatter: bool) -> Result<(), CliError> {
    let echo = model_echo(model_dir);
    let (report, pairs) = match task {
        Task::Wifi => {
            let corpus = read_wifi(data)?;
            let model = WifiModel::load(model_dir)?;
            evaluate_wifi(&model, &corpus.test, echo)?
        }
        Task::Imu => {
            let corpus = read_imu(data)?;
            let model = ImuModel::load(model_dir)?;
            evaluate_imu(&model, &corpus.subset(&corpus.splits.test), echo)?
        }
    };
    write_report(out, &report, &pairs, scatter)
}

fn method_echo(config: &ExperimentConfig, method: &str, tau: f64) -> Map<String, Value> {
    let mut echo = config.echo();
    echo.insert("method".into(), Value::from(method));
    echo.insert("tau".into(), Value::from(tau));
    echo
}

fn baseline(method: Method, data: &Path, config: &ExperimentConfig, out: &Path) -> Result<(), CliError> {
    let train_config = config.train();
    train_config.validate()?;
    let (report, pairs, train_report) = match corpus_kind(data)? {
        CorpusKind::Wifi => wifi_baseline(method, &read_wifi(data)?, config, out)?,
        CorpusKind::Imu => imu_baseline(method, &read_imu(data)?, config)?,
    };
    write_json(&out.join("train_report.json"), &train_report)?;
    write_report(out, &report, &pairs, true)
}

type BaselineRun = (MetricsReport, Vec<(Point, Point)>, TrainReport);

fn wifi_baseline(method: Method, corpus: &WifiCorpus, config: &ExperimentConfig, out: &Path) -> Result<BaselineRun, CliError> {
    let train_config = config.train();
    let tau = config.wifi_tau();
    let map = training_cell_map(corpus, tau)?;
    match method {
        Method::Regression | Method::Projection => {
            let (model, report) = deep_regression(corpus, &config.regression(false), &train_config)?;
            let pairs = regression_pairs(&model, &corpus.test, corpus.wap_count)?;
            if method == Method::Regression {
                let echo = method_echo(config, "regression", tau);
                Ok((evaluate_positions(&pairs, &map, echo)?, pairs, report))
            } else {
                let (metrics, projected) = regression_projection(&pairs, &map, method_echo(config, "projection", tau))?;
                Ok((metrics, projected, report))
            }
        }
        Method::Isomap | Method::Lle => {
            let kind = if method == Method::Isomap {
                EmbeddingMethod::Isomap
            } else {
                EmbeddingMethod::Lle
            };
            let (model, report) =
                embedding_regression(corpus, kind, &config.embedding(), &config.regression(true), &train_config)?;
            write_embedding_csv(&out.join("embedding.csv"), model.embedder.embedding().view())?;
            let pairs = model.pairs(&corpus.test, corpus.wap_count)?;
            let echo = method_echo(config, kind.name(), tau);
            Ok((evaluate_positions(&pairs, &map, echo)?, pairs, report))
        }
    }
}

fn imu_baseline(method: Method, corpus: &ImuCorpus, config: &ExperimentConfig) -> Result<BaselineRun, CliError> {
    let name = match method {
        Method::Regression => "regression",
        Method::Projection => "projection",
        Method::Isomap | Method::Lle => {
            return Err(CliError::Usage(
                "--method isomap/lle needs a Wi-Fi corpus; IMU supports regression and projection".into(),
            ))
        }
    };
    let model_config = config.imu_model();
    let map = imu_cell_map(corpus, model_config.tau)?;
    let mut model = ImuRegression::build(corpus, &model_config)?;
    let report = model.train(corpus, &config.train())?;
    let test = corpus.subset(&corpus.splits.test);
    let mut preds = model.predict(&test)?;
    if method == Method::Projection {
        preds = project_to_map(&preds, &map);
    }
    let pairs: Vec<(Point, Point)> = test.iter().map(|p| p.end_position).zip(preds).collect();
    let echo = method_echo(config, name, model_config.tau);
    Ok((evaluate_positions(&pairs, &map, echo)?, pairs, report))
}

fn check_theory(
    model_dir: Option<&Path>,
    data: Option<&Path>,
    lambda: Option<f64>,
    seed: u64,
    out: &Path,
) -> Result<(), CliError> {
    if let Some(l) = lambda {
        if !(l >= 0.0 && l.is_finite()) {
            return Err(CliError::Usage(format!("--lambda must be a nonnegative number, got {l}")));
        }
    }
    let emb = match (model_dir, data) {
        (Some(model_dir), Some(data)) => {
            let corpus = read_wifi(data)?;
            let model = WifiModel::load(model_dir)?;
            let fine = model
                .spec
                .head(HeadKind::Fine)
                .ok_or_else(|| CliError::Usage("model has no fine head".into()))?;
            let x = rssi_matrix(&corpus.test, corpus.wap_count)?;
            class_embedding_range(&model.network, x.view(), fine.offset..fine.offset + fine.size)?
        }
        _ => {
            let (net, x) = train_blob_classifier(100, seed)?;
            class_embedding(&net, x.view())?
        }
    };
    let report = theory_report(&emb, lambda, seed)?;
    report.write(&out.join("theory_report.json"))?;
    let p = &report.proposition;
    println!(
        "rewrite max residual {:.3e}; lambda {:.4}; {} pairs; 4-lambda {:.4}; 2-lambda {:.4}",
        report.sigmoid_rewrite.max_residual, p.lambda, p.qualifying_pairs, p.within_4_lambda, p.within_2_lambda
    );
    if !report.passed() {
        return Err(CliError::Runtime(noble_core::Error::InvalidConfig(
            "theory check failed; see theory_report.json".into(),
        )));
    }
    Ok(())
}

fn quantize(data: &Path, tau: f64, coarse: Option<f64>, out: &Path) -> Result<(), CliError> {
    let points: Vec<Point> = match corpus_kind(data)? {
        CorpusKind::Wifi => read_wifi(data)?.train_positions(),
        CorpusKind::Imu => {
            let corpus = read_imu(data)?;
            let mut p: Vec<Point> = corpus.splits.train.iter().map(|&i| corpus.paths[i].end_position).collect();
            p.extend(corpus.reference_locations.iter().copied());
            p
        }
    };
    let spec = GridSpec::fit(&points, tau, coarse).map_err(|e| CliError::Usage(format!("--tau/--coarse: {e}")))?;
    let map = CellMap::build(spec, &points)?;
    write_atomic(out, map.to_text().as_bytes())?;
    let fine = map.fine();
    let mut counts: Vec<usize> = (0..fine.len()).map(|c| fine.count(c)).collect();
    counts.sort_unstable();
    println!("K_fine={}", map.fine_count());
    if coarse.is_some() {
        println!("K_coarse={}", map.coarse_count());
    }
    if let (Some(min), Some(max)) = (counts.first(), counts.last()) {
        let median = counts[(counts.len() - 1) / 2];
        println!("samples_per_cell min={min} median={median} max={max}");
    }
    Ok(())
}
