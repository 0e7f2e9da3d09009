//! End-to-end experiment recipes shared by the command-line tool and
//! the integration suite: run configuration, corpus resolution and
//! splitting, detector training, evaluation, threshold sweeps,
//! embedding analysis, the TF-IDF baseline, and the head-set ablation
//! grid.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{embed_corpus_with, pca_fit, pca_project, silhouette, EmbedTarget, PcaModel, ProjectionTable};
use crate::baseline::{logreg_gradient_norm, train_baseline, BaselineModel, LogRegConfig, TfidfConfig};
use crate::corpus::{
    load_jsonl, split, synth_corpus, Corpus, Source, SynthSpec, HC3_SUB_SOURCES,
    M4GT_SUB_SOURCES, MAGE_SUB_SOURCES,
};
use crate::encoder::{EncoderConfig, Vocab};
use crate::error::{Error, Result};
use crate::export::config_hash;
use crate::heads::CchConfig;
use crate::metrics::{
    default_threshold_grid, f1_report_n, group_breakdown, threshold_sweep, EvalReport,
    GroupBreakdown, GroupKey, ThresholdCurve,
};
use crate::multitask::{DecisionRule, HeadSpec, MtlModel};
use crate::numerics::params::ParamStore;
use crate::rng::derive_seed;
use crate::trainer::{two_stage_train, Checkpoint, StageConfig, TwoStageArtifacts};

/// Config schema version, bumped together with the checkpoint format.
pub const CONFIG_VERSION: u32 = 1;

/// Where the working corpus comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum CorpusSource {
    /// Generate the synthetic corpus from a spec.
    Synth(SynthSpec),
    /// Load pre-split JSONL files.
    Files {
        train: PathBuf,
        dev: PathBuf,
        #[serde(default)]
        test: Option<PathBuf>,
    },
}

impl Default for CorpusSource {
    fn default() -> Self {
        Self::Synth(SynthSpec::default())
    }
}

/// Stratified split fractions, both relative to the whole corpus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    pub dev_fraction: f64,
    /// Zero means no test split.
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { dev_fraction: 0.15, test_fraction: 0.15, seed: 7 }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.dev_fraction > 0.0 && self.dev_fraction < 1.0) {
            return Err(Error::Config(format!(
                "dev_fraction must be in (0, 1), got {}",
                self.dev_fraction
            )));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::Config(format!(
                "test_fraction must be in [0, 1), got {}",
                self.test_fraction
            )));
        }
        if self.dev_fraction + self.test_fraction >= 1.0 {
            return Err(Error::Config(format!(
                "dev_fraction + test_fraction must leave room for training data, got {}",
                self.dev_fraction + self.test_fraction
            )));
        }
        Ok(())
    }
}

/// Train/dev/test corpora. `test` is `None` when the split spec (or
/// file set) defines no test portion.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Corpus,
    pub dev: Corpus,
    pub test: Option<Corpus>,
}

/// Deterministic stratified three-way split: the test portion is carved
/// out first (under a derived seed), then dev is taken from the rest at
/// the rate that makes both fractions hold relative to the full corpus.
pub fn three_way_split(corpus: &Corpus, spec: &SplitSpec) -> Result<Splits> {
    spec.validate()?;
    if spec.test_fraction == 0.0 {
        let (train, dev) = split(corpus, spec.dev_fraction, spec.seed)?;
        return Ok(Splits { train, dev, test: None });
    }
    let (rest, test) = split(corpus, spec.test_fraction, derive_seed(spec.seed, "test"))?;
    let dev_rel = spec.dev_fraction / (1.0 - spec.test_fraction);
    let (train, dev) = split(&rest, dev_rel, spec.seed)?;
    Ok(Splits { train, dev, test: Some(test) })
}

/// Encoder shape without the vocabulary size, which is data-dependent:
/// it is set from the fitted vocabulary at train time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderSettings {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub dropout_p: f64,
    pub seed: u64,
}

impl Default for EncoderSettings {
    fn default() -> Self {
        let c = EncoderConfig::with_vocab_size(3);
        Self {
            d_model: c.d_model,
            n_layers: c.n_layers,
            n_heads: c.n_heads,
            d_ff: c.d_ff,
            max_len: c.max_len,
            dropout_p: c.dropout_p,
            seed: c.seed,
        }
    }
}

impl EncoderSettings {
    pub fn with_vocab(&self, vocab_size: usize) -> EncoderConfig {
        EncoderConfig {
            vocab_size,
            d_model: self.d_model,
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            d_ff: self.d_ff,
            max_len: self.max_len,
            dropout_p: self.dropout_p,
            seed: self.seed,
        }
    }
}

/// Build the head list for a run: the binary head (always present,
/// first) plus one multiclass head per requested source name.
pub fn head_specs_for<S: AsRef<str>>(multiclass: &[S]) -> Result<Vec<HeadSpec>> {
    let mut specs = vec![HeadSpec::binary("binary")];
    for name in multiclass {
        let spec = match name.as_ref() {
            "hc3" => HeadSpec::multiclass("hc3", Source::Hc3, HC3_SUB_SOURCES),
            "m4gt" => HeadSpec::multiclass("m4gt", Source::M4gt, M4GT_SUB_SOURCES),
            "mage" => HeadSpec::multiclass("mage", Source::Mage, MAGE_SUB_SOURCES),
            other => {
                return Err(Error::Config(format!(
                    "unknown multiclass head {other:?} (expected hc3, m4gt or mage)"
                )))
            }
        };
        specs.push(spec);
    }
    Ok(specs)
}

/// Full experiment configuration. Every field has a default, so a JSON
/// config may specify only what it changes; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Schema version; must equal [`CONFIG_VERSION`].
    pub version: u32,
    pub corpus: CorpusSource,
    pub split: SplitSpec,
    /// Upper bound on the fitted vocabulary size (reserved tokens included).
    pub vocab_size: usize,
    pub encoder: EncoderSettings,
    /// Multiclass head names (`hc3`, `m4gt`, `mage`); the binary head is
    /// always present. Empty means single-task.
    pub heads: Vec<String>,
    /// Dropout probability inside the classification heads; `None`
    /// keeps the per-head default.
    pub head_dropout: Option<f64>,
    /// Per-head loss weights, binary first, matching `heads` order;
    /// `None` means all 1.0.
    pub loss_weights: Option<Vec<f64>>,
    pub stage1: StageConfig,
    pub stage2: StageConfig,
    pub rule: DecisionRule,
    pub tfidf: TfidfConfig,
    pub logreg: LogRegConfig,
    /// What `analyze` embeds per sample.
    pub embed_target: EmbedTarget,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            corpus: CorpusSource::default(),
            split: SplitSpec::default(),
            vocab_size: 512,
            encoder: EncoderSettings::default(),
            heads: vec!["hc3".to_string(), "m4gt".to_string()],
            head_dropout: None,
            loss_weights: None,
            stage1: StageConfig::stage1(),
            stage2: StageConfig::stage2(),
            rule: DecisionRule::default(),
            tfidf: TfidfConfig::default(),
            logreg: LogRegConfig::default(),
            embed_target: EmbedTarget::Cls,
        }
    }
}

impl RunConfig {
    /// Parse and validate a JSON config.
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("parsing run config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    /// Load and validate a JSON config file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading config {}", path.display()), e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::VersionMismatch {
                found: self.version,
                expected: CONFIG_VERSION,
            });
        }
        if self.vocab_size < 4 {
            return Err(Error::Config(format!(
                "vocab_size must be at least 4, got {}",
                self.vocab_size
            )));
        }
        self.split.validate()?;
        // Probe-validate the encoder shape with a placeholder vocab size.
        self.encoder.with_vocab(4).validate()?;
        let specs = head_specs_for(&self.heads)?;
        if let Some(p) = self.head_dropout {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Config(format!("head_dropout must be in [0, 1), got {p}")));
            }
        }
        if let Some(weights) = &self.loss_weights {
            if weights.len() != specs.len() {
                return Err(Error::Config(format!(
                    "{} loss weights given for {} heads (binary included)",
                    weights.len(),
                    specs.len()
                )));
            }
        }
        self.stage1.validate()?;
        self.stage2.validate()?;
        self.rule.validate()?;
        Ok(())
    }

    /// Short provenance hash of the canonical JSON form, embedded in
    /// every artifact this config produces.
    pub fn hash(&self) -> Result<String> {
        let text = serde_json::to_string(self)
            .map_err(|e| Error::Config(format!("serializing run config: {e}")))?;
        Ok(config_hash(&text))
    }

    /// Re-seed everything that varies across repetitions of the same
    /// experiment (split, encoder/head init, batch order, dropout)
    /// while leaving the corpus recipe untouched.
    pub fn with_run_seed(mut self, seed: u64) -> Self {
        self.split.seed = seed;
        self.encoder.seed = seed;
        self.stage1.seed = seed;
        self.stage2.seed = seed;
        self
    }

    /// Same config with a different head set.
    pub fn with_heads<S: AsRef<str>>(mut self, heads: &[S]) -> Self {
        self.heads = heads.iter().map(|h| h.as_ref().to_string()).collect();
        self
    }
}

/// Materialize the configured corpus and split it.
pub fn resolve_splits(config: &RunConfig) -> Result<Splits> {
    match &config.corpus {
        CorpusSource::Synth(spec) => {
            let corpus = synth_corpus(spec)?;
            three_way_split(&corpus, &config.split)
        }
        CorpusSource::Files { train, dev, test } => Ok(Splits {
            train: load_jsonl(train)?,
            dev: load_jsonl(dev)?,
            test: test.as_ref().map(load_jsonl).transpose()?,
        }),
    }
}

/// Build the model a config describes, with the vocabulary fitted on
/// the given training corpus.
pub fn build_model(config: &RunConfig, train: &Corpus) -> Result<MtlModel> {
    let vocab = Vocab::build(train, config.vocab_size)?;
    let encoder = config.encoder.with_vocab(vocab.size());
    let specs = head_specs_for(&config.heads)?;
    let mut model = match config.head_dropout {
        None => MtlModel::new(encoder, specs, vocab)?,
        Some(p) => {
            let head_configs = specs
                .iter()
                .map(|spec| {
                    let mut cfg = CchConfig::new(encoder.d_model, spec.num_classes());
                    cfg.dropout_p = p;
                    cfg.seed = derive_seed(encoder.seed, &format!("head/{}", spec.name));
                    cfg
                })
                .collect();
            MtlModel::with_head_configs(encoder, specs, head_configs, vocab)?
        }
    };
    if let Some(weights) = &config.loss_weights {
        model.set_loss_weights(weights.clone())?;
    }
    Ok(model)
}

/// A finished training run: checkpoints after each stage, the step/epoch
/// log, and a dev evaluation of the final model at τ = 0.5.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub artifacts: TwoStageArtifacts,
    pub dev_report: EvalReport,
}

/// The full two-stage recipe: fit vocabulary on train, initialize, run
/// both stages, and score the final model on dev at τ = 0.5 (the
/// deployment threshold is a separate calibration concern).
pub fn train_detector(config: &RunConfig, splits: &Splits) -> Result<TrainOutput> {
    let model = build_model(config, &splits.train)?;
    let mut store = ParamStore::new();
    model.init_params(&mut store)?;
    let artifacts = two_stage_train(
        &model,
        &mut store,
        &splits.train,
        &splits.dev,
        &config.stage1,
        &config.stage2,
        config.rule,
    )?;
    let dev_report = evaluate_model(&model, &store, &splits.dev, 0.5)?.report;
    Ok(TrainOutput { artifacts, dev_report })
}

/// Binary evaluation of a corpus: overall report plus per-source and
/// per-sub-source breakdowns.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: EvalReport,
    pub by_source: GroupBreakdown,
    pub by_sub_source: GroupBreakdown,
}

fn corpus_texts(corpus: &Corpus) -> Vec<&str> {
    corpus.iter().map(|s| s.text.as_str()).collect()
}

/// Binary labels in corpus order (human = 0, machine = 1).
pub fn binary_labels(corpus: &Corpus) -> Vec<u32> {
    corpus.iter().map(|s| u32::from(s.label.as_u8())).collect()
}

/// Evaluate a model on a corpus at an explicit decision threshold.
pub fn evaluate_model(
    model: &MtlModel,
    store: &ParamStore,
    corpus: &Corpus,
    threshold: f64,
) -> Result<Evaluation> {
    let probs = model.predict_proba(store, &corpus_texts(corpus))?;
    let preds: Vec<u32> = probs.iter().map(|&p| u32::from(p >= threshold)).collect();
    let labels = binary_labels(corpus);
    Ok(Evaluation {
        report: f1_report_n(&preds, &labels, 2)?,
        by_source: group_breakdown(&preds, &labels, corpus.samples(), GroupKey::Source)?,
        by_sub_source: group_breakdown(&preds, &labels, corpus.samples(), GroupKey::SubSource)?,
    })
}

/// Evaluate a checkpoint; `threshold` overrides the checkpoint's own
/// decision rule when given.
pub fn evaluate_checkpoint(
    checkpoint: &Checkpoint,
    corpus: &Corpus,
    threshold: Option<f64>,
) -> Result<Evaluation> {
    let model = checkpoint.model()?;
    let tau = threshold.unwrap_or(checkpoint.rule.threshold);
    evaluate_model(&model, &checkpoint.params, corpus, tau)
}

/// Macro-F1 over the default threshold grid.
pub fn sweep_model(model: &MtlModel, store: &ParamStore, corpus: &Corpus) -> Result<ThresholdCurve> {
    let probs = model.predict_proba(store, &corpus_texts(corpus))?;
    threshold_sweep(&probs, &binary_labels(corpus), &default_threshold_grid())
}

/// As [`sweep_model`], starting from a checkpoint.
pub fn sweep_checkpoint(checkpoint: &Checkpoint, corpus: &Corpus) -> Result<ThresholdCurve> {
    let model = checkpoint.model()?;
    sweep_model(&model, &checkpoint.params, corpus)
}

/// Embedding analysis of one corpus under one model: 2-component PCA
/// projection table plus silhouette scores of the source and sub-source
/// clusterings in the full embedding space. A silhouette is `None` when
/// the corpus has fewer than two clusters for that key.
#[derive(Debug, Clone)]
pub struct AnalysisOutput {
    pub table: ProjectionTable,
    pub pca: PcaModel,
    pub embeddings: Vec<Vec<f64>>,
    pub silhouette_source: Option<f64>,
    pub silhouette_sub_source: Option<f64>,
}

/// Embed every sample, fit a 2-component PCA for plotting, and score
/// cluster separations on the raw (un-projected) embeddings.
pub fn analyze_model(
    model: &MtlModel,
    store: &ParamStore,
    corpus: &Corpus,
    target: &EmbedTarget,
) -> Result<AnalysisOutput> {
    let embeddings = embed_corpus_with(model, store, corpus, target)?;
    let pca = pca_fit(&embeddings, 2)?;
    let coords = pca_project(&pca, &embeddings)?;
    let table = ProjectionTable::build(corpus, &coords)?;
    let sources: Vec<&str> = corpus.iter().map(|s| s.source.name()).collect();
    let sub_sources: Vec<&str> = corpus.iter().map(|s| s.sub_source.as_str()).collect();
    Ok(AnalysisOutput {
        table,
        pca,
        silhouette_source: silhouette(&embeddings, &sources).ok(),
        silhouette_sub_source: silhouette(&embeddings, &sub_sources).ok(),
        embeddings,
    })
}

/// As [`analyze_model`], starting from a checkpoint.
pub fn analyze_checkpoint(
    checkpoint: &Checkpoint,
    corpus: &Corpus,
    target: &EmbedTarget,
) -> Result<AnalysisOutput> {
    let model = checkpoint.model()?;
    analyze_model(&model, &checkpoint.params, corpus, target)
}

/// A trained TF-IDF + logistic-regression baseline with its evaluation
/// and the gradient-norm optimality certificate at the solution.
#[derive(Debug, Clone)]
pub struct BaselineOutcome {
    pub model: BaselineModel,
    pub report: EvalReport,
    pub gradient_norm: f64,
}

/// Train the baseline on `train`, evaluate on `eval` at `threshold`.
pub fn run_baseline(
    config: &RunConfig,
    train: &Corpus,
    eval: &Corpus,
    threshold: f64,
) -> Result<BaselineOutcome> {
    let model = train_baseline(train, config.tfidf.clone(), config.logreg.clone())?;
    let rows = model.vectorizer.transform(train.iter().map(|s| s.text.as_str()));
    let gradient_norm =
        logreg_gradient_norm(&model.logreg, &rows, &binary_labels(train), config.logreg.lambda);
    let probs = model.predict_proba(eval.iter().map(|s| s.text.as_str()));
    let preds: Vec<u32> = probs.iter().map(|&p| u32::from(p >= threshold)).collect();
    let report = f1_report_n(&preds, &binary_labels(eval), 2)?;
    Ok(BaselineOutcome { model, report, gradient_norm })
}

/// The four head sets of the ablation grid (each on top of the binary
/// head).
pub const ABLATION_HEAD_SETS: [&[&str]; 4] =
    [&["hc3"], &["m4gt"], &["hc3", "m4gt"], &["hc3", "m4gt", "mage"]];

/// One ablation result: the head set and its dev/test macro-F1 at
/// τ = 0.5.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub heads: String,
    pub dev_macro_f1: f64,
    pub test_macro_f1: f64,
}

/// Train the full two-stage recipe once per head set and score each
/// final model on dev and test. Requires a test split.
pub fn ablate(config: &RunConfig, splits: &Splits) -> Result<Vec<AblationRow>> {
    let test = splits.test.as_ref().ok_or_else(|| {
        Error::Config(
            "ablation needs a test split; set split.test_fraction > 0 or provide a test file"
                .into(),
        )
    })?;
    let mut rows = Vec::with_capacity(ABLATION_HEAD_SETS.len());
    for set in ABLATION_HEAD_SETS {
        let run = config.clone().with_heads(set);
        let out = train_detector(&run, splits)?;
        let test_report = evaluate_checkpoint(&out.artifacts.stage2, test, Some(0.5))?.report;
        rows.push(AblationRow {
            heads: set.join("+").to_uppercase(),
            dev_macro_f1: out.dev_report.macro_f1,
            test_macro_f1: test_report.macro_f1,
        });
    }
    Ok(rows)
}

/// CSV body for an ablation table (header `heads,dev_macro_f1,test_macro_f1`).
pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("heads,dev_macro_f1,test_macro_f1\n");
    for row in rows {
        out.push_str(&format!("{},{},{}\n", row.heads, row.dev_macro_f1, row.test_macro_f1));
    }
    out
}
