//! The four subcommands. Each takes a validated [`RunConfig`] and explicit
//! paths, writes its artifacts into `out` and returns what it wrote.

use std::fs;
use std::path::{Path, PathBuf};

use extra_tilt::classifier::{oracle_classifier, train_classifier, ClassifierModel, DEFAULT_CLIP_EPSILON};
use extra_tilt::evaluation::{
    anchor_sets, effective_sample_size, risk_report, weight_histogram, AnchorReport, Loss,
    RiskReport,
};
use extra_tilt::fit::{fit_extra, weight_table, FitResult};
use extra_tilt::io;
use extra_tilt::rtb::{market_stat_features, simulate_auctions, split_domains, win_conditional_rate, WinRateEstimate};
use extra_tilt::tilt::{exact_weights, DiscretePopulation, Domain, TiltParams};
use extra_tilt::{Error, Result, VERSION};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, SCHEMA_VERSION};

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(fs::write(path, text)?)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Schema {
        file: path.display().to_string(),
        message: e.to_string(),
    })
}

fn prepare_out(out: &Path) -> Result<()> {
    Ok(fs::create_dir_all(out)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationTruth {
    pub schema_version: u32,
    pub version: String,
    pub config: RunConfig,
    pub n_source: usize,
    pub n_target: usize,
    /// Estimates from the written stream.
    pub stream: WinRateEstimate,
    /// Estimates from an independent stream of `n_oracle` records drawn
    /// with seed `seed + 1`.
    pub oracle: WinRateEstimate,
}

/// Writes source.csv, target.csv, stream.csv and truth.json.
pub fn simulate(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let market = cfg.market()?;
    let raw = simulate_auctions(market, cfg.n_stream, cfg.seed)?;
    let stream = if cfg.market_features {
        market_stat_features(market, &raw)?
    } else {
        raw
    };
    let (source, target) = split_domains(&stream)?;
    let truth = SimulationTruth {
        schema_version: SCHEMA_VERSION,
        version: VERSION.to_string(),
        config: cfg.echo(),
        n_source: source.len(),
        n_target: target.len(),
        stream: WinRateEstimate::from_stream(&stream)?,
        oracle: win_conditional_rate(market, cfg.n_oracle, cfg.seed.wrapping_add(1))?,
    };

    prepare_out(out)?;
    let files = ["source.csv", "target.csv", "stream.csv", "truth.json"].map(|f| out.join(f));
    io::write_source_csv(&files[0], &source)?;
    io::write_target_csv(&files[1], &target)?;
    io::write_stream_csv(&files[2], &stream)?;
    write_json(&files[3], &truth)?;
    Ok(files.to_vec())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellWeight {
    pub x: Vec<f64>,
    pub u: u8,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationTruth {
    pub schema_version: u32,
    pub version: String,
    pub config: RunConfig,
    pub population: DiscretePopulation,
    /// `q(x, u) / p(x, u)` on every cell with source mass.
    pub exact_weights: Vec<CellWeight>,
    pub anchors: AnchorReport,
}

/// Samples a discrete population into source.csv, target.csv and
/// labeled_target.csv (`n_stream` rows each, seeds `seed`, `seed + 1` and
/// `seed + 2`), and writes its exact classifier and weights.
pub fn sample(cfg: &RunConfig, population: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let pop: DiscretePopulation = read_json(population)?;
    let n = cfg.n_stream;
    let source = pop.sample_source(n, cfg.seed)?;
    let target = pop.sample_target(n, cfg.seed.wrapping_add(1))?;
    let labeled = pop.sample_labeled(Domain::Target, n, cfg.seed.wrapping_add(2))?;
    let classifier = ClassifierModel::Tabulated(oracle_classifier(&pop, DEFAULT_CLIP_EPSILON)?);
    let table = exact_weights(&pop)?;
    let exact_weights = pop
        .alphabet()
        .iter()
        .zip(&table)
        .flat_map(|(x, w)| {
            (0..2u8).filter_map(move |u| {
                w[u as usize].map(|weight| CellWeight {
                    x: x.clone(),
                    u,
                    weight,
                })
            })
        })
        .collect();
    let truth = PopulationTruth {
        schema_version: SCHEMA_VERSION,
        version: VERSION.to_string(),
        config: cfg.echo(),
        anchors: anchor_sets(&pop, &cfg.statistic)?,
        population: pop,
        exact_weights,
    };

    prepare_out(out)?;
    let files = [
        "source.csv",
        "target.csv",
        "labeled_target.csv",
        "classifier.json",
        "truth.json",
    ]
    .map(|f| out.join(f));
    io::write_source_csv(&files[0], &source)?;
    io::write_target_csv(&files[1], &target)?;
    io::write_source_csv(&files[2], &labeled)?;
    write_json(&files[3], &classifier)?;
    write_json(&files[4], &truth)?;
    Ok(files.to_vec())
}

/// Contents of params.json.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsDocument {
    pub schema_version: u32,
    pub version: String,
    pub config: RunConfig,
    /// Normalized parameters: the weights average to one over the source.
    pub params: TiltParams,
    pub converged: bool,
    pub steps_taken: usize,
    pub final_normalizer: f64,
}

/// Fits ExTRA and writes params.json, weights.csv and trace.csv, plus
/// classifier.json when no classifier was supplied. On divergence the trace
/// is still written before the error is returned.
pub fn fit(
    cfg: &RunConfig,
    source_path: &Path,
    target_path: &Path,
    classifier_path: Option<&Path>,
    out: &Path,
) -> Result<Vec<PathBuf>> {
    let source = io::read_source_csv(source_path)?;
    let target = io::read_target_csv(target_path)?;
    if source.dim() != target.dim() {
        return Err(Error::Shape {
            what: "target.csv feature columns",
            expected: source.dim(),
            found: target.dim(),
        });
    }
    cfg.statistic.output_dim(source.dim())?;
    prepare_out(out)?;
    let mut files = Vec::new();

    let classifier = match classifier_path {
        Some(path) => read_json::<ClassifierModel>(path)?,
        None => {
            let model = ClassifierModel::Logistic(train_classifier(&source, &cfg.train)?);
            let path = out.join("classifier.json");
            write_json(&path, &model)?;
            files.push(path);
            model
        }
    };

    let trace_path = out.join("trace.csv");
    let result: FitResult = match fit_extra(&source, &target, &classifier, &cfg.statistic, &cfg.extra) {
        Ok(r) => r,
        Err(Error::Divergence { message, trace }) => {
            if let Some(t) = &trace {
                io::write_trace_csv(&trace_path, &t.checks)?;
            }
            return Err(Error::Divergence { message, trace });
        }
        Err(e) => return Err(e),
    };
    let weights = weight_table(&result.params, &cfg.statistic, &source)?;
    let doc = ParamsDocument {
        schema_version: SCHEMA_VERSION,
        version: VERSION.to_string(),
        config: cfg.echo(),
        converged: result.converged(),
        steps_taken: result.trace.steps_taken,
        final_normalizer: result.final_normalizer,
        params: result.params,
    };

    let params_path = out.join("params.json");
    let weights_path = out.join("weights.csv");
    write_json(&params_path, &doc)?;
    io::write_weights_csv(&weights_path, &weights)?;
    io::write_trace_csv(&trace_path, &result.trace.checks)?;
    files.extend([params_path, weights_path, trace_path]);
    Ok(files)
}

/// Contents of report.json.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub schema_version: u32,
    pub version: String,
    pub config: RunConfig,
    pub n_source: usize,
    pub zero_one: RiskReport,
    pub log_loss: RiskReport,
    pub effective_sample_size: f64,
    pub weight_mean: f64,
    pub weight_min: f64,
    pub weight_max: f64,
}

/// Where evaluate takes its weights from.
#[derive(Debug, Clone, Copy)]
pub enum WeightSource<'a> {
    /// A weights.csv file.
    File(&'a Path),
    /// A params.json file, evaluated with the config's statistic.
    Params(&'a Path),
}

/// Writes report.json and hist.csv.
pub fn evaluate(
    cfg: &RunConfig,
    source_path: &Path,
    weights: WeightSource<'_>,
    classifier_path: &Path,
    labeled_target_path: Option<&Path>,
    out: &Path,
) -> Result<Vec<PathBuf>> {
    let source = io::read_source_csv(source_path)?;
    let weights = match weights {
        WeightSource::File(path) => io::read_weights_csv(path)?,
        WeightSource::Params(path) => {
            let doc: ParamsDocument = read_json(path)?;
            weight_table(&doc.params, &cfg.statistic, &source)?
        }
    };
    if weights.len() != source.len() {
        return Err(Error::Shape {
            what: "weights rows",
            expected: source.len(),
            found: weights.len(),
        });
    }
    let classifier: ClassifierModel = read_json(classifier_path)?;
    let labeled = labeled_target_path.map(io::read_source_csv).transpose()?;

    let zero_one = risk_report(&classifier, &source, &weights, labeled.as_ref(), Loss::ZeroOne)?;
    let log_loss = risk_report(&classifier, &source, &weights, labeled.as_ref(), Loss::LogLoss)?;
    let report = EvaluationReport {
        schema_version: SCHEMA_VERSION,
        version: VERSION.to_string(),
        config: cfg.echo(),
        n_source: source.len(),
        zero_one,
        log_loss,
        effective_sample_size: effective_sample_size(&weights)?,
        weight_mean: weights.iter().sum::<f64>() / weights.len() as f64,
        weight_min: weights.iter().copied().fold(f64::INFINITY, f64::min),
        weight_max: weights.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    };
    let bins = weight_histogram(&weights, cfg.hist_bins)?;

    prepare_out(out)?;
    let files = ["report.json", "hist.csv"].map(|f| out.join(f));
    write_json(&files[0], &report)?;
    io::write_histogram_csv(&files[1], &bins)?;
    Ok(files.to_vec())
}
