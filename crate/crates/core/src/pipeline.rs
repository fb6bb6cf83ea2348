//! End-to-end driver: load, clean, select, balance, split, train, evaluate,
//! persist.
//!
//! Two stage orderings are available:
//!
//! * `replicate-paper`: prep → select → balance → split. Synthetic rows can
//!   land in the test set, so test scores are optimistic.
//! * `leakage-safe`: prep → split → select and balance on the training part
//!   only.
//!
//! Every output is a pure function of the config, so two runs with the same
//! config write byte-identical files whatever the thread count.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::artifact::{dataset_fingerprint, Holdout, ModelArtifact, ModelPayload};
use crate::dataset::{self, Dataset, ImputeStrategy, Scaler};
use crate::ensemble::{fit_stack, StackSpec};
use crate::error::{Error, Result};
use crate::featsel::{self, FeatureRanking, SelectConfig};
use crate::learners::{self, LearnerSpec};
use crate::metrics::{self, EvalReport};
use crate::resample::{self, ResampleConfig, ResampleReport};
use crate::Classifier;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    ReplicatePaper,
    LeakageSafe,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "replicate-paper" => Ok(Mode::ReplicatePaper),
            "leakage-safe" => Ok(Mode::LeakageSafe),
            _ => Err(Error::InvalidArgument(format!("unknown mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelConfig {
    Single(LearnerSpec),
    Stack(StackSpec),
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::Stack(StackSpec::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub input: PathBuf,
    pub label: String,
    pub mode: Mode,
    pub seed: u64,
    pub test_fraction: f64,
    pub impute: ImputeStrategy,
    pub resample: ResampleConfig,
    pub select: SelectConfig,
    pub model: ModelConfig,
    /// Extra single learners trained and evaluated on the same split.
    pub compare: Vec<LearnerSpec>,
    /// Test rows bundled into the artifact for importance estimates.
    pub holdout_rows: usize,
    pub out_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            input: PathBuf::from("diabetes_binary_health_indicators_BRFSS2015.csv"),
            label: "Diabetes_binary".into(),
            mode: Mode::ReplicatePaper,
            seed: 42,
            test_fraction: 0.2,
            impute: ImputeStrategy::ModeForBinary,
            resample: ResampleConfig::default(),
            select: SelectConfig::default(),
            model: ModelConfig::default(),
            compare: Vec::new(),
            holdout_rows: 2000,
            out_dir: PathBuf::from("out"),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidArgument(format!("config: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    /// The learner zoo used by `reproduce-paper` for the comparison table.
    pub fn paper_comparison() -> Vec<LearnerSpec> {
        use learners::Family;
        vec![
            LearnerSpec::gbdt_preset("xgb"),
            LearnerSpec::gbdt_preset("lgbm"),
            LearnerSpec::gbdt_preset("cat"),
            LearnerSpec::gbdt_preset("gb"),
            LearnerSpec::new(Family::RandomForest),
            LearnerSpec::new(Family::Tree),
            LearnerSpec::new(Family::Knn),
            LearnerSpec::new(Family::Logreg),
            LearnerSpec::new(Family::GaussianNb),
        ]
    }
}

/// An error tagged with the stage that raised it.
#[derive(Debug, thiserror::Error)]
#[error("stage `{stage}` failed: {source}")]
pub struct StageError {
    pub stage: &'static str,
    #[source]
    pub source: Error,
}

trait StageExt<T> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, StageError>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, StageError> {
        self.map_err(|source| StageError { stage, source })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrepReport {
    pub rows_in: usize,
    pub duplicates_removed: usize,
    pub missing_cells: usize,
    pub rows_out: usize,
}

/// Deduplicate, impute, min-max normalize.
pub fn prep(d: &Dataset, strategy: ImputeStrategy) -> Result<(Dataset, Scaler, PrepReport)> {
    let rows_in = d.row_count();
    let (dedup, duplicates_removed) = dataset::deduplicate(d);
    let missing_cells = dedup
        .features
        .as_slice()
        .iter()
        .filter(|v| v.is_nan())
        .count();
    let imputed = dataset::impute(&dedup, strategy)?;
    let (norm, scaler) = dataset::normalize(&imputed)?;
    let report = PrepReport {
        rows_in,
        duplicates_removed,
        missing_cells,
        rows_out: norm.row_count(),
    };
    Ok((norm, scaler, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub library_version: String,
    pub mode: Mode,
    pub seed: u64,
    pub resample_seed: u64,
    pub config: PipelineConfig,
    pub stages: Vec<StageRecord>,
    pub outputs: Vec<String>,
    pub model_checksum: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: String,
    pub train_accuracy: f64,
    pub test: EvalReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub manifest: RunManifest,
    pub eval: EvalReport,
    pub ranking: FeatureRanking,
    pub resample: ResampleReport,
    pub comparison: Vec<ComparisonRow>,
    pub artifact: ModelArtifact,
}

struct Writer<'a> {
    dir: &'a Path,
    written: Vec<String>,
}

impl Writer<'_> {
    fn text(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        self.written.push(name.to_string());
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut s =
            serde_json::to_string_pretty(value).map_err(|e| Error::Serialization(e.to_string()))?;
        s.push('\n');
        self.text(name, &s)
    }
}

fn describe_model(m: &ModelConfig) -> String {
    match m {
        ModelConfig::Single(s) => format!("single {} {:?}", s.family, s.params),
        ModelConfig::Stack(s) => {
            let bases: Vec<String> = s.bases.iter().map(|b| b.family.to_string()).collect();
            format!(
                "stack [{}] meta {} folds {}",
                bases.join(", "),
                s.meta.family,
                s.n_folds
            )
        }
    }
}

/// Slug for a learner spec, used in comparison file names.
pub fn spec_slug(s: &LearnerSpec) -> String {
    match s.params.get("preset").and_then(|p| p.as_str()) {
        Some(p) => format!("{}_{p}", s.family),
        None => s.family.to_string(),
    }
}

fn fit_model(cfg: &ModelConfig, train: &Dataset, seed: u64) -> Result<ModelPayload> {
    Ok(match cfg {
        ModelConfig::Single(spec) => {
            let mut spec = spec.clone();
            if spec.seed == 0 {
                spec.seed = seed;
            }
            ModelPayload::Single(learners::fit(&spec, train)?)
        }
        ModelConfig::Stack(spec) => ModelPayload::Stack(fit_stack(spec, train)?),
    })
}

fn accuracy(model: &dyn Classifier, d: &Dataset) -> Result<f64> {
    let p = model.predict(&d.features, 0.5)?;
    Ok(p.iter().zip(&d.labels).filter(|(a, b)| a == b).count() as f64 / d.row_count() as f64)
}

pub fn run(cfg: &PipelineConfig) -> std::result::Result<RunOutput, StageError> {
    let mut stages = Vec::new();
    let mut record = |stage: &str, detail: String| {
        log::info!("{stage}: {detail}");
        stages.push(StageRecord {
            stage: stage.to_string(),
            detail,
        });
    };
    cfg.resample.validate().stage("config")?;
    fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| Error::io(&cfg.out_dir, e))
        .stage("config")?;

    let raw = dataset::load_csv(&cfg.input, &cfg.label).stage("load")?;
    record(
        "load",
        format!(
            "{} rows x {} features from {}",
            raw.row_count(),
            raw.n_features(),
            cfg.input.display()
        ),
    );
    let (clean, scaler, prep_report) = prep(&raw, cfg.impute).stage("prep")?;
    record(
        "prep",
        format!(
            "removed {} duplicates, imputed {} cells, normalized {} rows",
            prep_report.duplicates_removed, prep_report.missing_cells, prep_report.rows_out
        ),
    );

    let split_seed = crate::rng::derive_seed(cfg.seed, 1);
    let (train, test, ranking, resample_report) = match cfg.mode {
        Mode::ReplicatePaper => {
            let ranking = featsel::rank_features(&clean, &cfg.select).stage("select")?;
            record("select", format!("kept {}", ranking.selected.join(", ")));
            let selected = clean.select_features(&ranking.selected).stage("select")?;
            let (balanced, rep) = resample::balance(&selected, &cfg.resample).stage("balance")?;
            record("balance", balance_detail(&rep));
            let (train, test) =
                dataset::split(&balanced, cfg.test_fraction, true, split_seed).stage("split")?;
            record(
                "split",
                format!(
                    "{} train / {} test rows",
                    train.row_count(),
                    test.row_count()
                ),
            );
            (train, test, ranking, rep)
        }
        Mode::LeakageSafe => {
            let (train, test) =
                dataset::split(&clean, cfg.test_fraction, true, split_seed).stage("split")?;
            record(
                "split",
                format!(
                    "{} train / {} test rows",
                    train.row_count(),
                    test.row_count()
                ),
            );
            let ranking = featsel::rank_features(&train, &cfg.select).stage("select")?;
            record("select", format!("kept {}", ranking.selected.join(", ")));
            let train = train.select_features(&ranking.selected).stage("select")?;
            let test = test.select_features(&ranking.selected).stage("select")?;
            let (train, rep) = resample::balance(&train, &cfg.resample).stage("balance")?;
            record("balance", balance_detail(&rep));
            (train, test, ranking, rep)
        }
    };

    let model = fit_model(&cfg.model, &train, cfg.seed).stage("train")?;
    record("train", describe_model(&cfg.model));
    let probs = model.predict_proba(&test.features).stage("evaluate")?;
    let eval = metrics::evaluate(&test.labels, &probs, 0.5).stage("evaluate")?;
    record(
        "evaluate",
        format!(
            "accuracy {:.4}, roc_auc {:.4}, pr_auc {:.4} on {} test rows",
            eval.accuracy, eval.roc_auc, eval.pr_auc, eval.n
        ),
    );

    let mut comparison = Vec::new();
    for spec in &cfg.compare {
        let m = fit_model(&ModelConfig::Single(spec.clone()), &train, cfg.seed).stage("compare")?;
        let p = m.predict_proba(&test.features).stage("compare")?;
        let row = ComparisonRow {
            model: spec_slug(spec),
            train_accuracy: accuracy(&m, &train).stage("compare")?,
            test: metrics::evaluate(&test.labels, &p, 0.5).stage("compare")?,
        };
        record(
            "compare",
            format!(
                "{}: accuracy {:.4}, recall {:.4}",
                row.model, row.test.accuracy, row.test.recall
            ),
        );
        comparison.push(row);
    }

    let holdout_n = cfg.holdout_rows.min(test.row_count());
    let holdout_idx: Vec<usize> = (0..holdout_n).collect();
    let held = test.subset(&holdout_idx);
    let mut artifact = ModelArtifact::new(
        model,
        &scaler,
        &raw.schema,
        cfg.seed,
        dataset_fingerprint(&train),
    )
    .stage("persist")?;
    if holdout_n > 0 {
        artifact = artifact
            .with_holdout(Holdout {
                features: held.features,
                labels: held.labels,
            })
            .stage("persist")?;
    }

    let mut w = Writer {
        dir: &cfg.out_dir,
        written: Vec::new(),
    };
    let write = |w: &mut Writer| -> Result<String> {
        w.json("prep_report.json", &prep_report)?;
        w.json("resample_report.json", &resample_report)?;
        w.json("feature_ranking.json", &ranking)?;
        w.text("feature_ranking.txt", &ranking.to_table())?;
        w.json("eval.json", &eval)?;
        w.text("roc.csv", &metrics::curve_csv(&eval.roc))?;
        w.text("pr.csv", &metrics::curve_csv(&eval.pr))?;
        if !comparison.is_empty() {
            w.json("comparison.json", &comparison)?;
        }
        let summary = artifact.save(w.dir.join("model.rmla"))?;
        w.written.push("model.rmla".into());
        Ok(summary.checksum)
    };
    let checksum = write(&mut w).stage("persist")?;
    record(
        "persist",
        format!(
            "{} files, model checksum {}",
            w.written.len(),
            &checksum[..12]
        ),
    );

    let mut outputs = w.written.clone();
    outputs.push("manifest.json".into());
    let manifest = RunManifest {
        library_version: env!("CARGO_PKG_VERSION").to_string(),
        mode: cfg.mode,
        seed: cfg.seed,
        resample_seed: cfg.resample.seed,
        config: cfg.clone(),
        stages,
        outputs,
        model_checksum: checksum,
    };
    w.json("manifest.json", &manifest).stage("persist")?;
    Ok(RunOutput {
        manifest,
        eval,
        ranking,
        resample: resample_report,
        comparison,
        artifact,
    })
}

fn balance_detail(r: &ResampleReport) -> String {
    format!(
        "{} synthetic rows, {} tomek links, {} majority rows removed; {} / {} after",
        r.synthetic_created,
        r.tomek_pairs_found,
        r.majority_removed,
        r.counts_after.negative,
        r.counts_after.positive
    )
}
