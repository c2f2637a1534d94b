//! The `von` command line.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataprep::{load_dataset, read_points_csv, DatasetData};
use crate::error::{Result, VonError};
use crate::instance::{uniform_points, Instance};
use crate::metrics::{score_from_loss, Metric, MetricParams, QualityMetric};
use crate::model::Model;
use crate::runner::{check_checkpoint_metric, solve, MethodSpec, OrderResult, Solver};
use crate::sampling::{SamplingPlan, Strategy};
use crate::training::{train, DataSource, InstanceSource, TrainConfig, CHECKPOINT_FILE, LOG_FILE};

#[derive(Debug, Parser)]
#[command(name = "von", version, about = "Learned and classical ordering of point sets")]
pub struct Cli {
    /// Root for relative dataset and checkpoint paths.
    #[arg(long, env = "VON_DATA_DIR", global = true)]
    pub data_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model from a JSON config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Directory for the checkpoint and training log.
        #[arg(long, default_value = "von-run")]
        output: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Order one input with a checkpoint or a classical method.
    Order {
        #[arg(long, conflicts_with = "method", required_unless_present = "method")]
        model: Option<PathBuf>,
        #[arg(long)]
        method: Option<String>,
        /// Point CSV or dataset manifest.
        #[arg(long)]
        input: PathBuf,
        /// Metric key; defaults to the checkpoint's metric.
        #[arg(long)]
        metric: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Order one input with a classical method.
    Baseline {
        #[arg(long)]
        method: String,
        #[arg(long)]
        metric: String,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Mean greedy loss of a checkpoint on inputs or on fresh uniform instances.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: Vec<PathBuf>,
        #[arg(long)]
        metric: Option<String>,
        #[arg(long, default_value_t = 256)]
        count: usize,
        #[arg(long, default_value_t = 20)]
        n_points: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Compare methods over metrics and sampling plans; writes CSV.
    Benchmark {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Serve datasets and orderings over HTTP.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
}

/// Exit status for an error: 2 for bad configuration or input, 1 otherwise.
pub fn exit_code(e: &VonError) -> i32 {
    match e.root() {
        VonError::Config(_)
        | VonError::UnknownMetric(_)
        | VonError::Parse { .. }
        | VonError::Json(_)
        | VonError::MetricMismatch { .. }
        | VonError::DimensionMismatch { .. } => 2,
        _ => 1,
    }
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn resolve(data_dir: Option<&Path>, p: &Path) -> PathBuf {
    match data_dir {
        Some(root) if p.is_relative() && !p.exists() => root.join(p),
        _ => p.to_path_buf(),
    }
}

fn emit(output: Option<&Path>, text: &str) -> Result<()> {
    match output {
        Some(p) => fs::write(p, text).map_err(|e| VonError::io(p, e)),
        None => {
            let mut out = std::io::stdout().lock();
            writeln!(out, "{text}").map_err(|e| VonError::io("<stdout>", e))
        }
    }
}

fn emit_json<T: Serialize>(output: Option<&Path>, v: &T) -> Result<()> {
    emit(output, &serde_json::to_string_pretty(v)?)
}

/// Reads a point CSV or a dataset manifest as one instance.
pub fn load_instance(path: &Path, metric: Metric, params: &MetricParams) -> Result<Instance> {
    if path.extension().is_some_and(|e| e == "json") {
        let ds = load_dataset(path)?;
        return match ds.data {
            DatasetData::Points(ps) => Instance::from_points(metric, params, ps),
            DatasetData::Graphs(g) => Instance::from_graph_collection(metric, params, g),
        };
    }
    Instance::from_points(metric, params, read_points_csv(path, false)?)
}

fn execute(cli: Cli) -> Result<()> {
    let root = cli.data_dir.as_deref();
    match cli.command {
        Command::Train { config, output, seed } => {
            let path = resolve(root, &config);
            let text = fs::read_to_string(&path).map_err(|e| VonError::io(&path, e))?;
            let mut cfg = TrainConfig::from_json(&text)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let out = train(&cfg, root, Some(&output), |row, _| {
                eprintln!(
                    "epoch {:>4}  sampled {:.5}  greedy {:.5}  eval {:.5}  baseline {:.5}{}",
                    row.epoch,
                    row.mean_sampled_loss,
                    row.mean_greedy_loss,
                    row.eval_loss,
                    row.baseline_eval_loss,
                    if row.baseline_replaced { "  (baseline replaced)" } else { "" }
                );
            })?;
            emit_json(
                None,
                &serde_json::json!({
                    "checkpoint": output.join(CHECKPOINT_FILE),
                    "log": output.join(LOG_FILE),
                    "epochs": out.log.len(),
                    "final_eval_loss": out.log.last().map(|r| r.eval_loss),
                }),
            )
        }
        Command::Order { model, method, input, metric, seed, output } => {
            let input = resolve(root, &input);
            let r = match (model, method) {
                (Some(m), _) => order_with_model(&resolve(root, &m), &input, metric.as_deref())?,
                (None, Some(method)) => {
                    let metric = metric.ok_or_else(|| VonError::Config("--method needs --metric".into()))?;
                    order_with_method(&method, &metric, &input, seed)?
                }
                (None, None) => unreachable!("clap requires --model or --method"),
            };
            emit_json(output.as_deref(), &r)
        }
        Command::Baseline { method, metric, input, seed, output } => {
            let r = order_with_method(&method, &metric, &resolve(root, &input), seed)?;
            emit_json(output.as_deref(), &r)
        }
        Command::Evaluate { model, input, metric, count, n_points, seed, output } => {
            let report = evaluate_checkpoint(&resolve(root, &model), &input.iter().map(|p| resolve(root, p)).collect::<Vec<_>>(), metric.as_deref(), count, n_points, seed)?;
            emit_json(output.as_deref(), &report)
        }
        Command::Benchmark { config, output, seed } => {
            let path = resolve(root, &config);
            let text = fs::read_to_string(&path).map_err(|e| VonError::io(&path, e))?;
            let mut cfg: BenchmarkConfig = serde_json::from_str(&text).map_err(|e| VonError::Config(format!("{}: {e}", path.display())))?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let rows = run_benchmark(&cfg, root)?;
            emit(output.as_deref(), &benchmark_csv(&rows)?)
        }
        Command::Serve { addr } => {
            let dir = root.ok_or_else(|| VonError::Config("serve needs --data-dir or VON_DATA_DIR".into()))?;
            let state = crate::service::AppState::load(dir)?;
            let rt = tokio::runtime::Runtime::new().map_err(|e| VonError::io("<runtime>", e))?;
            rt.block_on(crate::service::serve(state, addr))
        }
    }
}

fn order_with_model(model_path: &Path, input: &Path, metric: Option<&str>) -> Result<OrderResult> {
    let (model, info) = Model::load(model_path)?;
    let metric = match metric {
        Some(k) => k.parse()?,
        None => info.metric,
    };
    check_checkpoint_metric(&info, metric)?;
    let inst = load_instance(input, metric, &info.metric_params)?;
    solve(&Solver::Model(&model), &inst, metric, 0, None)
}

fn order_with_method(method: &str, metric: &str, input: &Path, seed: u64) -> Result<OrderResult> {
    let metric: Metric = metric.parse()?;
    let method = method.parse()?;
    let inst = load_instance(input, metric, &MetricParams::default())?;
    solve(&Solver::Baseline(method), &inst, metric, seed, None)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub metric: Metric,
    pub instances: usize,
    pub mean_loss: f64,
    pub mean_score: f64,
    pub mean_millis: f64,
}

pub fn evaluate_checkpoint(model_path: &Path, inputs: &[PathBuf], metric: Option<&str>, count: usize, n_points: usize, seed: u64) -> Result<EvaluationReport> {
    let (model, info) = Model::load(model_path)?;
    let metric = match metric {
        Some(k) => k.parse()?,
        None => info.metric,
    };
    check_checkpoint_metric(&info, metric)?;
    let instances: Vec<Instance> = if inputs.is_empty() {
        if count == 0 || n_points == 0 {
            return Err(VonError::Config("--count and --n-points must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| Instance::from_points(metric, &info.metric_params, uniform_points(n_points, model.input_dim(), &mut rng)))
            .collect::<Result<_>>()?
    } else {
        inputs.iter().map(|p| load_instance(p, metric, &info.metric_params)).collect::<Result<_>>()?
    };
    let (mut loss, mut millis) = (0.0, 0.0);
    for inst in &instances {
        let r = solve(&Solver::Model(&model), inst, metric, 0, None)?;
        loss += r.loss;
        millis += r.millis;
    }
    let k = instances.len() as f64;
    Ok(EvaluationReport {
        metric,
        instances: instances.len(),
        mean_loss: loss / k,
        mean_score: score_from_loss(metric.direction(), loss / k),
        mean_millis: millis / k,
    })
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkConfig {
    /// Baseline keys or `model:<checkpoint path>`.
    pub methods: Vec<String>,
    pub metrics: Vec<Metric>,
    #[serde(default)]
    pub metric_params: MetricParams,
    pub plans: Vec<SamplingPlan>,
    #[serde(default = "one")]
    pub repetitions: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub data: DataSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: String,
    pub metric: Metric,
    pub strategy: Strategy,
    pub size: usize,
    pub mean_score: f64,
    pub mean_loss: f64,
    /// Mean of `(loss - best) / |best|` over repetitions, best taken over all methods.
    pub mean_gap: f64,
    pub mean_millis: f64,
    /// Mean percentage by which the (single) model method beats this method; positive favours the model.
    pub model_improvement_pct: Option<f64>,
    pub reason: String,
}

fn relative_gap(loss: f64, best: f64) -> f64 {
    let diff = loss - best;
    if best.abs() > 1e-12 {
        diff / best.abs()
    } else {
        diff
    }
}

/// Runs every (metric, plan, method) cell; failed cells report NaN with a reason.
pub fn run_benchmark(cfg: &BenchmarkConfig, data_root: Option<&Path>) -> Result<Vec<BenchRow>> {
    if cfg.methods.is_empty() || cfg.metrics.is_empty() || cfg.plans.is_empty() || cfg.repetitions == 0 {
        return Err(VonError::Config("benchmark needs methods, metrics, plans and repetitions >= 1".into()));
    }
    let specs: Vec<MethodSpec> = cfg.methods.iter().map(|m| m.parse()).collect::<Result<_>>()?;
    let models: Vec<Option<(Model, crate::model::CheckpointInfo)>> = specs
        .iter()
        .map(|s| match s {
            MethodSpec::Model(p) => Model::load(&resolve(data_root, Path::new(p))).map(Some),
            MethodSpec::Baseline(_) => Ok(None),
        })
        .collect::<Result<_>>()?;
    let model_col = (specs.iter().filter(|s| matches!(s, MethodSpec::Model(_))).count() == 1)
        .then(|| specs.iter().position(|s| matches!(s, MethodSpec::Model(_))).unwrap());
    let mut rows = Vec::new();
    for (mi, &metric) in cfg.metrics.iter().enumerate() {
        for (pi, plan) in cfg.plans.iter().enumerate() {
            plan.validate()?;
            if !plan.strategy.is_basic() {
                return Err(VonError::Config(format!("benchmark plans take g, n, r or l, got `{}`", plan.strategy)));
            }
            if plan.strategy != Strategy::Global && !matches!(cfg.data, DataSource::Dataset { .. }) {
                return Err(VonError::Config(format!("strategy `{}` needs a dataset source", plan.strategy)));
            }
            let source = InstanceSource::build(metric, &cfg.metric_params, plan, &cfg.data, data_root)?;
            // results[method][rep]
            let mut results: Vec<Vec<std::result::Result<OrderResult, String>>> = vec![Vec::new(); specs.len()];
            for rep in 0..cfg.repetitions {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream(((mi as u64) << 40) | ((pi as u64) << 20) | rep as u64);
                let inst = source.draw(plan.strategy, &mut rng)?;
                for (k, spec) in specs.iter().enumerate() {
                    let r = match (spec, &models[k]) {
                        (_, Some((model, info))) => check_checkpoint_metric(info, metric)
                            .and_then(|_| solve(&Solver::Model(model), &inst, metric, 0, None)),
                        (MethodSpec::Baseline(m), None) => solve(&Solver::Baseline(*m), &inst, metric, cfg.seed ^ rep as u64, None),
                        (MethodSpec::Model(_), None) => unreachable!("models are loaded up front"),
                    };
                    results[k].push(r.map_err(|e| e.to_string()));
                }
            }
            let best: Vec<Option<f64>> = (0..cfg.repetitions)
                .map(|rep| results.iter().filter_map(|r| r[rep].as_ref().ok().map(|o| o.loss)).reduce(f64::min))
                .collect();
            for (k, spec) in specs.iter().enumerate() {
                let reason = results[k].iter().find_map(|r| r.as_ref().err().cloned()).unwrap_or_default();
                let ok: Vec<&OrderResult> = results[k].iter().filter_map(|r| r.as_ref().ok()).collect();
                let (mean_loss, mean_millis, mean_gap, improvement) = if reason.is_empty() {
                    let r = cfg.repetitions as f64;
                    let gap = ok.iter().zip(&best).map(|(o, b)| relative_gap(o.loss, b.unwrap())).sum::<f64>() / r;
                    let improvement = model_col.and_then(|mc| {
                        let theirs: Vec<&OrderResult> = results[mc].iter().filter_map(|r| r.as_ref().ok()).collect();
                        (theirs.len() == ok.len()).then(|| {
                            ok.iter().zip(&theirs).map(|(o, m)| 100.0 * (o.loss - m.loss) / o.loss.abs().max(1e-12)).sum::<f64>() / r
                        })
                    });
                    (ok.iter().map(|o| o.loss).sum::<f64>() / r, ok.iter().map(|o| o.millis).sum::<f64>() / r, gap, improvement)
                } else {
                    (f64::NAN, f64::NAN, f64::NAN, None)
                };
                rows.push(BenchRow {
                    method: spec.to_string(),
                    metric,
                    strategy: plan.strategy,
                    size: plan.size,
                    mean_score: score_from_loss(metric.direction(), mean_loss),
                    mean_loss,
                    mean_gap,
                    mean_millis,
                    model_improvement_pct: improvement,
                    reason,
                });
            }
        }
    }
    Ok(rows)
}

pub fn benchmark_csv(rows: &[BenchRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| VonError::Config(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| VonError::Config(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
