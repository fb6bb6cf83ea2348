use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use riskml::artifact::ModelArtifact;
use riskml::dataset::{self, ImputeStrategy};
use riskml::ensemble::StackSpec;
use riskml::featsel::{self, SelectConfig};
use riskml::learners::{Family, LearnerSpec, ParamValue};
use riskml::metrics::{self, Metric};
use riskml::pipeline::{self, Mode, ModelConfig, PipelineConfig, StageError};
use riskml::resample::{self, ResampleConfig};
use riskml::tuning::{self, TuneConfig};
use riskml::{Dataset, Error};
use riskml_service::ServiceConfig;

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_TRAINING: u8 = 3;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

fn error_code(e: &Error) -> u8 {
    match e {
        Error::InvalidArgument(_) | Error::UnknownParam { .. } | Error::Unsupported(_) => {
            EXIT_USAGE
        }
        Error::NotConverged { .. } | Error::Serialization(_) => EXIT_TRAINING,
        _ => EXIT_DATA,
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: error_code(&e),
            message: e.to_string(),
        }
    }
}

impl From<StageError> for Failure {
    fn from(e: StageError) -> Self {
        let mut code = error_code(&e.source);
        if matches!(e.stage, "train" | "compare") && code == EXIT_DATA {
            code = EXIT_TRAINING;
        }
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_USAGE,
        message: message.into(),
    }
}

type CmdResult = Result<(), Failure>;

#[derive(Debug, Parser)]
#[command(
    name = "riskml",
    version,
    about = "Tabular diabetes-risk modelling pipeline"
)]
pub struct Cli {
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// More log output; repeat for debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

impl Cli {
    pub fn log_level(&self) -> log::LevelFilter {
        match self.verbose {
            0 => log::LevelFilter::Warn,
            1 => log::LevelFilter::Info,
            _ => log::LevelFilter::Debug,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Histograms, correlation matrix, VIF and class balance.
    Profile(ProfileArgs),
    /// Deduplicate, impute and min-max normalize a CSV.
    Prep(PrepArgs),
    /// SMOTE followed by Tomek-link cleaning.
    Balance(BalanceArgs),
    /// Rank features by MI, RFE and LASSO and keep the top ones.
    Select(SelectArgs),
    /// Run the pipeline with a single learner.
    Train(TrainArgs),
    /// Random search then grid refinement with cross-validation.
    Tune(TuneArgs),
    /// Score a saved model on a labelled CSV.
    Evaluate(EvaluateArgs),
    /// Run the pipeline with a stacked ensemble.
    Stack(StackArgs),
    /// Default stack plus the comparison learners, replicate-paper ordering.
    ReproducePaper(PipelineArgs),
    /// Run the pipeline described by a config file.
    Run(PipelineArgs),
    /// Serve a model over HTTP.
    Serve(ServeArgs),
    /// Write a synthetic CSV with the BRFSS indicator layout.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 1000)]
    pub rows: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Input CSV.
    #[arg(long)]
    pub input: PathBuf,
    /// Label column.
    #[arg(long, default_value = "Diabetes_binary")]
    pub label: String,
}

impl DataArgs {
    fn load(&self) -> Result<Dataset, Failure> {
        Ok(dataset::load_csv(&self.input, &self.label)?)
    }
}

#[derive(Debug, Args)]
pub struct ProfileArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 10)]
    pub bins: usize,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PrepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// `mode-for-binary` or `median`.
    #[arg(long, default_value = "mode-for-binary")]
    pub impute: String,
}

#[derive(Debug, Args)]
pub struct ResampleArgs {
    #[arg(long)]
    pub smote_k: Option<usize>,
    /// Minority/majority ratio after SMOTE.
    #[arg(long)]
    pub ratio: Option<f64>,
    #[arg(long)]
    pub resample_seed: Option<u64>,
}

impl ResampleArgs {
    fn apply(&self, cfg: &mut ResampleConfig) {
        if let Some(k) = self.smote_k {
            cfg.smote_k = k;
        }
        if let Some(r) = self.ratio {
            cfg.target_ratio = r;
        }
        if let Some(s) = self.resample_seed {
            cfg.seed = s;
        }
    }
}

#[derive(Debug, Args)]
pub struct BalanceArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub resample: ResampleArgs,
    /// Write the resample report here instead of stdout.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 18)]
    pub keep: usize,
    #[arg(long, default_value_t = 10)]
    pub mi_bins: usize,
    /// Write the ranking JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    /// TOML config; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub label: Option<String>,
    /// `replicate-paper` or `leakage-safe`.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
    /// Features kept by selection.
    #[arg(long)]
    pub keep: Option<usize>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[command(flatten)]
    pub resample: ResampleArgs,
}

impl PipelineArgs {
    fn config(&self) -> Result<PipelineConfig, Failure> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(v) = &self.input {
            cfg.input = v.clone();
        }
        if let Some(v) = &self.label {
            cfg.label = v.clone();
        }
        if let Some(v) = &self.mode {
            cfg.mode = v.parse()?;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.test_fraction {
            cfg.test_fraction = v;
        }
        if let Some(v) = self.keep {
            cfg.select.keep = v;
        }
        if let Some(v) = &self.out_dir {
            cfg.out_dir = v.clone();
        }
        self.resample.apply(&mut cfg.resample);
        if self.config.is_none() && self.input.is_none() {
            return Err(usage("either --config or --input is required"));
        }
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct LearnerArgs {
    #[arg(long)]
    pub family: String,
    /// GBDT preset: xgb, lgbm, cat or gb.
    #[arg(long)]
    pub preset: Option<String>,
    /// Hyperparameter, repeatable: `--param k=7`.
    #[arg(long = "param", value_name = "NAME=VALUE")]
    pub params: Vec<String>,
}

impl LearnerArgs {
    fn spec(&self) -> Result<LearnerSpec, Failure> {
        let family: Family = self.family.parse()?;
        let mut spec = LearnerSpec::new(family);
        if let Some(p) = &self.preset {
            if family != Family::Gbdt {
                return Err(usage("--preset only applies to --family gbdt"));
            }
            spec = spec.with("preset", p.as_str());
        }
        for kv in &self.params {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| usage(format!("--param expects NAME=VALUE, got `{kv}`")))?;
            spec.params
                .insert(k.trim().to_string(), ParamValue::parse(v.trim()));
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub learner: LearnerArgs,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Debug, Args)]
pub struct StackArgs {
    #[arg(long)]
    pub folds: Option<usize>,
    /// Feed the original features to the meta-learner too.
    #[arg(long)]
    pub passthrough: bool,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub learner: LearnerArgs,
    #[arg(long, default_value_t = tuning::DEFAULT_BUDGET)]
    pub budget: usize,
    #[arg(long, default_value_t = 5)]
    pub cv: usize,
    /// `roc_auc` or `accuracy`.
    #[arg(long, default_value = "roc_auc")]
    pub metric: String,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Keep only the top features before tuning.
    #[arg(long)]
    pub keep: Option<usize>,
    /// Balance the data with SMOTE + Tomek before tuning.
    #[arg(long)]
    pub balance: bool,
    /// Write the search trace here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// Directory for eval.json, roc.csv and pr.csv; stdout otherwise.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// CORS origin, repeatable; `*` allows any.
    #[arg(long = "allow-origin")]
    pub allow_origin: Vec<String>,
    #[arg(long, default_value_t = 1000)]
    pub importance_rows: usize,
}

pub fn dispatch(cli: Cli) -> CmdResult {
    match cli.command {
        Command::Profile(a) => profile(a),
        Command::Prep(a) => prep(a),
        Command::Balance(a) => balance(a),
        Command::Select(a) => select(a),
        Command::Train(a) => {
            let mut cfg = a.pipeline.config()?;
            cfg.model = ModelConfig::Single(a.learner.spec()?);
            run_pipeline(&cfg)
        }
        Command::Tune(a) => tune(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Stack(a) => {
            let mut cfg = a.pipeline.config()?;
            let mut spec = match cfg.model {
                ModelConfig::Stack(s) => s,
                ModelConfig::Single(_) => StackSpec::default(),
            };
            if let Some(f) = a.folds {
                spec.n_folds = f;
            }
            spec.passthrough |= a.passthrough;
            cfg.model = ModelConfig::Stack(spec);
            run_pipeline(&cfg)
        }
        Command::ReproducePaper(a) => {
            let mut cfg = a.config()?;
            cfg.mode = Mode::ReplicatePaper;
            cfg.model = ModelConfig::Stack(StackSpec::default());
            if cfg.compare.is_empty() {
                cfg.compare = PipelineConfig::paper_comparison();
            }
            log::warn!("replicate-paper ordering balances before splitting; test rows may include synthetic samples");
            run_pipeline(&cfg)
        }
        Command::Run(a) => run_pipeline(&a.config()?),
        Command::Serve(a) => serve(a),
        Command::Synth(a) => {
            let d = dataset::synthetic::brfss_like(a.rows, a.seed);
            csv_out(&a.out, &d, dataset::synthetic::LABEL)
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("plain data");
    s.push('\n');
    s
}

fn write_file(path: &Path, contents: &str) -> CmdResult {
    fs::write(path, contents).map_err(|e| Failure {
        code: EXIT_DATA,
        message: format!("cannot write {}: {e}", path.display()),
    })
}

fn emit(out: Option<&Path>, contents: &str) -> CmdResult {
    match out {
        Some(p) => write_file(p, contents),
        None => {
            print!("{contents}");
            Ok(())
        }
    }
}

fn csv_out(path: &Path, d: &Dataset, label: &str) -> CmdResult {
    let f = fs::File::create(path).map_err(|e| Failure {
        code: EXIT_DATA,
        message: format!("cannot write {}: {e}", path.display()),
    })?;
    Ok(d.write_csv(std::io::BufWriter::new(f), label)?)
}

fn profile(a: ProfileArgs) -> CmdResult {
    let raw = a.data.load()?;
    let (dedup, _) = dataset::deduplicate(&raw);
    let clean = dataset::impute(&dedup, ImputeStrategy::default())?;
    let report = dataset::profile(&clean, a.bins)?;
    emit(a.out.as_deref(), &to_json(&report))
}

fn prep(a: PrepArgs) -> CmdResult {
    let strategy = match a.impute.as_str() {
        "mode-for-binary" => ImputeStrategy::ModeForBinary,
        "median" => ImputeStrategy::Median,
        other => return Err(usage(format!("unknown impute strategy `{other}`"))),
    };
    let raw = a.data.load()?;
    let (clean, scaler, report) = pipeline::prep(&raw, strategy)?;
    csv_out(&a.out, &clean, &a.data.label)?;
    print!(
        "{}",
        to_json(&serde_json::json!({ "report": report, "scaler": scaler }))
    );
    Ok(())
}

fn balance(a: BalanceArgs) -> CmdResult {
    let d = a.data.load()?;
    if d.has_missing() {
        return Err(Error::HasMissing.into());
    }
    let mut cfg = ResampleConfig::default();
    a.resample.apply(&mut cfg);
    cfg.validate()?;
    let (balanced, report) = resample::balance(&d, &cfg)?;
    csv_out(&a.out, &balanced, &a.data.label)?;
    emit(a.report.as_deref(), &to_json(&report))
}

fn select(a: SelectArgs) -> CmdResult {
    let d = a.data.load()?;
    let d = if d.has_missing() {
        dataset::impute(&d, ImputeStrategy::default())?
    } else {
        d
    };
    let cfg = SelectConfig {
        keep: a.keep,
        mi_bins: a.mi_bins,
    };
    let ranking = featsel::rank_features(&d, &cfg)?;
    print!("{}", ranking.to_table());
    if let Some(p) = &a.out {
        write_file(p, &to_json(&ranking))?;
    }
    Ok(())
}

fn run_pipeline(cfg: &PipelineConfig) -> CmdResult {
    let out = pipeline::run(cfg)?;
    let e = &out.eval;
    println!(
        "{:<18} accuracy {:.4}  precision {:.4}  recall {:.4}  f1 {:.4}  roc_auc {:.4}  pr_auc {:.4}",
        out.artifact.meta.model, e.accuracy, e.precision, e.recall, e.f1, e.roc_auc, e.pr_auc
    );
    for row in &out.comparison {
        let t = &row.test;
        println!(
            "{:<18} accuracy {:.4}  precision {:.4}  recall {:.4}  f1 {:.4}  roc_auc {:.4}  pr_auc {:.4}",
            row.model, t.accuracy, t.precision, t.recall, t.f1, t.roc_auc, t.pr_auc
        );
    }
    println!("outputs written to {}", cfg.out_dir.display());
    Ok(())
}

fn tune(a: TuneArgs) -> CmdResult {
    let base = a.learner.spec()?;
    let metric: Metric = a.metric.parse()?;
    let raw = a.data.load()?;
    let (mut d, _, _) = pipeline::prep(&raw, ImputeStrategy::default())?;
    if let Some(keep) = a.keep {
        let ranking = featsel::rank_features(
            &d,
            &SelectConfig {
                keep,
                ..Default::default()
            },
        )?;
        d = d.select_features(&ranking.selected)?;
    }
    if a.balance {
        d = resample::balance(&d, &ResampleConfig::default())?.0;
    }
    let cfg = TuneConfig {
        budget: a.budget,
        cv_k: a.cv,
        metric,
        seed: a.seed,
    };
    let trace =
        tuning::tune(&base, &tuning::default_space(base.family), &d, &cfg).map_err(|e| {
            let mut f = Failure::from(e);
            if f.code == EXIT_DATA {
                f.code = EXIT_TRAINING;
            }
            f
        })?;
    eprintln!(
        "best {:?}: mean {:.4} (std {:.4})",
        trace.best.params, trace.best.mean, trace.best.std
    );
    emit(a.out.as_deref(), &to_json(&trace))
}

fn evaluate(a: EvaluateArgs) -> CmdResult {
    let artifact = ModelArtifact::load(&a.model)?;
    let d = a.data.load()?.select_features(artifact.features())?;
    if d.has_missing() {
        return Err(Error::HasMissing.into());
    }
    let probs = artifact.predict_raw(&d.features)?;
    let report = metrics::evaluate(&d.labels, &probs, a.threshold)?;
    match &a.out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Failure {
                code: EXIT_DATA,
                message: format!("cannot create {}: {e}", dir.display()),
            })?;
            write_file(&dir.join("eval.json"), &to_json(&report))?;
            write_file(&dir.join("roc.csv"), &metrics::curve_csv(&report.roc))?;
            write_file(&dir.join("pr.csv"), &metrics::curve_csv(&report.pr))?;
            println!(
                "accuracy {:.4}  roc_auc {:.4}  pr_auc {:.4}",
                report.accuracy, report.roc_auc, report.pr_auc
            );
            Ok(())
        }
        None => emit(None, &to_json(&report)),
    }
}

fn serve(a: ServeArgs) -> CmdResult {
    if !a.model.exists() {
        return Err(Error::MissingFile(a.model).into());
    }
    let addr: SocketAddr = format!("{}:{}", a.host, a.port)
        .parse()
        .map_err(|e| usage(format!("bad --host/--port: {e}")))?;
    let cfg = ServiceConfig {
        allow_origins: a.allow_origin,
        importance_rows: a.importance_rows,
    };
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| usage(format!("cannot start runtime: {e}")))?;
    rt.block_on(riskml_service::serve(addr, a.model, cfg))
        .map_err(|e| Failure {
            code: EXIT_DATA,
            message: format!("server error: {e}"),
        })
}
