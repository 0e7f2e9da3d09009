//! The full detector: one shared encoder feeding a binary head plus any
//! number of source-specific multiclass heads, with per-sample task
//! masking in the loss and thresholded binary inference.

use std::io::{BufWriter, Write as _};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Label, LabeledSample, Source};
use crate::encoder::{EncoderConfig, EncoderModel, Encoding, Vocab};
use crate::error::{Error, Result};
use crate::heads::{CchConfig, CchHead};
use crate::numerics::params::ParamStore;
use crate::numerics::tape::{NodeId, Tape};
use crate::rng::{derive_seed, Rng};

/// Batch size used by [`MtlModel::predict`] and [`MtlModel::embed`].
pub const INFERENCE_BATCH: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum HeadKind {
    /// Human-vs-machine over every sample.
    Binary,
    /// Sub-source identification, active only for samples of `source`.
    Multiclass { source: Source, class_names: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub name: String,
    pub kind: HeadKind,
}

impl HeadSpec {
    pub fn binary(name: impl Into<String>) -> Self {
        Self { name: name.into(), kind: HeadKind::Binary }
    }

    pub fn multiclass(
        name: impl Into<String>,
        source: Source,
        class_names: impl IntoIterator<Item = impl Into<String>>,
    ) -> Self {
        Self {
            name: name.into(),
            kind: HeadKind::Multiclass {
                source,
                class_names: class_names.into_iter().map(Into::into).collect(),
            },
        }
    }

    pub fn num_classes(&self) -> usize {
        match &self.kind {
            HeadKind::Binary => 2,
            HeadKind::Multiclass { class_names, .. } => class_names.len(),
        }
    }

    /// Class index this head assigns to a sample, if any.
    pub fn target_for(&self, sample: &LabeledSample) -> Result<Option<u32>> {
        match &self.kind {
            HeadKind::Binary => Ok(Some(sample.label.as_u8() as u32)),
            HeadKind::Multiclass { source, class_names } => {
                if sample.source != *source {
                    return Ok(None);
                }
                match class_names.iter().position(|c| c == &sample.sub_source) {
                    Some(i) => Ok(Some(i as u32)),
                    None => Err(Error::Multitask(format!(
                        "sample {:?} has {} sub_source {:?} unknown to head {:?}",
                        sample.id,
                        source.name(),
                        sample.sub_source,
                        self.name
                    ))),
                }
            }
        }
    }
}

/// Binary decision threshold: predict machine iff p_machine ≥ τ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionRule {
    pub threshold: f64,
}

impl Default for DecisionRule {
    fn default() -> Self {
        Self { threshold: 0.92 }
    }
}

impl DecisionRule {
    pub fn new(threshold: f64) -> Result<Self> {
        let rule = Self { threshold };
        rule.validate()?;
        Ok(rule)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Multitask(format!(
                "threshold {} outside (0, 1)",
                self.threshold
            )));
        }
        Ok(())
    }

    pub fn decide(&self, p_machine: f64) -> Label {
        if p_machine >= self.threshold {
            Label::Machine
        } else {
            Label::Human
        }
    }
}

/// One tokenized training batch with per-head targets
/// (`targets[head][sample]`; `None` where the head does not apply).
#[derive(Debug, Clone)]
pub struct TaskBatch {
    pub encodings: Vec<Encoding>,
    pub targets: Vec<Vec<Option<u32>>>,
}

impl TaskBatch {
    pub fn len(&self) -> usize {
        self.encodings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.encodings.is_empty()
    }
}

/// One binary prediction. `label` serializes as `"human"`/`"machine"`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub id: String,
    #[serde(serialize_with = "label_name")]
    pub label: Label,
    pub p_machine: f64,
}

fn label_name<S: serde::Serializer>(label: &Label, serializer: S) -> std::result::Result<S::Ok, S::Error> {
    serializer.serialize_str(match label {
        Label::Human => "human",
        Label::Machine => "machine",
    })
}

/// Write predictions as JSONL: one `{"id", "label", "p_machine"}` per line.
pub fn write_predictions(path: &Path, predictions: &[Prediction]) -> Result<()> {
    let file = std::fs::File::create(path)
        .map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    let mut w = BufWriter::new(file);
    for p in predictions {
        let line = serde_json::to_string(p)
            .map_err(|e| Error::json(format!("serializing prediction {:?}", p.id), e))?;
        writeln!(w, "{line}").map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    }
    Ok(())
}

/// Shared encoder + one head per task. Parameters for everything live in
/// a single external [`ParamStore`].
#[derive(Debug, Clone)]
pub struct MtlModel {
    encoder: EncoderModel,
    vocab: Vocab,
    heads: Vec<(HeadSpec, CchHead)>,
    loss_weights: Vec<f64>,
    binary_index: usize,
}

impl MtlModel {
    /// Build the model with default head stacks (hidden width =
    /// `d_model`, two hidden blocks, dropout 0.5). Head parameter seeds
    /// derive from the encoder seed and the head name.
    pub fn new(encoder_config: EncoderConfig, specs: Vec<HeadSpec>, vocab: Vocab) -> Result<Self> {
        let configs = specs
            .iter()
            .map(|spec| {
                let mut cfg = CchConfig::new(encoder_config.d_model, spec.num_classes());
                cfg.seed = derive_seed(encoder_config.seed, &format!("head/{}", spec.name));
                cfg
            })
            .collect();
        Self::with_head_configs(encoder_config, specs, configs, vocab)
    }

    /// As [`MtlModel::new`] but with explicit per-head configurations
    /// (used by checkpoint reload and ablations).
    pub fn with_head_configs(
        encoder_config: EncoderConfig,
        specs: Vec<HeadSpec>,
        head_configs: Vec<CchConfig>,
        vocab: Vocab,
    ) -> Result<Self> {
        if vocab.size() != encoder_config.vocab_size {
            return Err(Error::Multitask(format!(
                "vocab has {} tokens but the encoder expects {}",
                vocab.size(),
                encoder_config.vocab_size
            )));
        }
        if specs.len() != head_configs.len() {
            return Err(Error::Multitask("one head config required per head spec".into()));
        }
        let binary_count = specs.iter().filter(|s| s.kind == HeadKind::Binary).count();
        if binary_count != 1 {
            return Err(Error::Multitask(format!(
                "exactly one binary head required, found {binary_count}"
            )));
        }
        for pair in specs.windows(2) {
            if specs.iter().filter(|s| s.name == pair[0].name).count() > 1 {
                return Err(Error::Multitask(format!("duplicate head name {:?}", pair[0].name)));
            }
        }
        let encoder = EncoderModel::new(encoder_config)?;
        let d_model = encoder.config().d_model;
        let mut heads = Vec::with_capacity(specs.len());
        for (spec, cfg) in specs.into_iter().zip(head_configs) {
            if cfg.input_dim != d_model {
                return Err(Error::Multitask(format!(
                    "head {:?} expects input_dim {} but the encoder emits {}",
                    spec.name, cfg.input_dim, d_model
                )));
            }
            if cfg.num_classes != spec.num_classes() {
                return Err(Error::Multitask(format!(
                    "head {:?} config has {} classes but its spec defines {}",
                    spec.name,
                    cfg.num_classes,
                    spec.num_classes()
                )));
            }
            let head = CchHead::new(format!("head/{}", spec.name), cfg)?;
            heads.push((spec, head));
        }
        let binary_index =
            heads.iter().position(|(s, _)| s.kind == HeadKind::Binary).expect("checked above");
        let loss_weights = vec![1.0; heads.len()];
        Ok(Self { encoder, vocab, heads, loss_weights, binary_index })
    }

    /// Override the per-head loss weights (defaults are all 1.0).
    pub fn set_loss_weights(&mut self, weights: Vec<f64>) -> Result<()> {
        if weights.len() != self.heads.len() {
            return Err(Error::Multitask(format!(
                "{} loss weights for {} heads",
                weights.len(),
                self.heads.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Multitask("loss weights must be finite and non-negative".into()));
        }
        self.loss_weights = weights;
        Ok(())
    }

    pub fn encoder(&self) -> &EncoderModel {
        &self.encoder
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn heads(&self) -> &[(HeadSpec, CchHead)] {
        &self.heads
    }

    pub fn head_specs(&self) -> Vec<HeadSpec> {
        self.heads.iter().map(|(s, _)| s.clone()).collect()
    }

    pub fn head_configs(&self) -> Vec<CchConfig> {
        self.heads.iter().map(|(_, h)| h.config().clone()).collect()
    }

    pub fn binary_index(&self) -> usize {
        self.binary_index
    }

    pub fn encoder_param_names(&self) -> Vec<String> {
        self.encoder.param_names()
    }

    pub fn head_param_names(&self, head_index: usize) -> Vec<String> {
        self.heads[head_index].1.param_names()
    }

    /// Every parameter name, encoder first, heads in declaration order.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = self.encoder.param_names();
        for (_, head) in &self.heads {
            names.extend(head.param_names());
        }
        names
    }

    /// Fresh parameters for the encoder and all heads.
    pub fn init_params(&self, store: &mut ParamStore) -> Result<()> {
        self.encoder.init_params(store)?;
        for (_, head) in &self.heads {
            head.init_params(store)?;
        }
        Ok(())
    }

    /// Tokenize samples and assemble per-head targets.
    pub fn make_batch<'a, I>(&self, samples: I) -> Result<TaskBatch>
    where
        I: IntoIterator<Item = &'a LabeledSample>,
    {
        let max_len = self.encoder.config().max_len;
        let mut encodings = Vec::new();
        let mut targets: Vec<Vec<Option<u32>>> = vec![Vec::new(); self.heads.len()];
        for sample in samples {
            encodings.push(self.vocab.encode_text(&sample.text, max_len));
            for ((spec, _), column) in self.heads.iter().zip(&mut targets) {
                column.push(spec.target_for(sample)?);
            }
        }
        Ok(TaskBatch { encodings, targets })
    }

    /// One encoder pass, then every head on the shared [CLS] vectors.
    /// Returns per-head logit nodes in head order.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        encodings: &[Encoding],
        mut dropout: Option<&mut Rng>,
    ) -> Result<Vec<NodeId>> {
        let cls = self.encoder.forward(tape, store, encodings, dropout.as_deref_mut())?;
        self.heads
            .iter()
            .map(|(_, head)| head.forward(tape, store, cls, dropout.as_deref_mut()))
            .collect()
    }

    /// Multi-task loss: per-head mean cross-entropy over the samples
    /// that carry a label for that head (0 when none do), combined as a
    /// weighted sum. Returns the total-loss node plus per-head values.
    pub fn mtl_loss(
        &self,
        tape: &mut Tape,
        logits: &[NodeId],
        batch: &TaskBatch,
    ) -> Result<(NodeId, Vec<(String, f64)>)> {
        if logits.len() != self.heads.len() {
            return Err(Error::Multitask(format!(
                "{} logit sets for {} heads",
                logits.len(),
                self.heads.len()
            )));
        }
        let mut parts = Vec::with_capacity(logits.len());
        let mut per_head = Vec::with_capacity(logits.len());
        for (i, ((spec, _), &node)) in self.heads.iter().zip(logits).enumerate() {
            let loss = tape.cross_entropy_mean(node, &batch.targets[i])?;
            per_head.push((spec.name.clone(), tape.value(loss).data()[0]));
            parts.push((loss, self.loss_weights[i]));
        }
        let total = tape.weighted_sum(&parts)?;
        Ok((total, per_head))
    }

    /// Machine probabilities from the binary head, eval mode.
    pub fn predict_proba(&self, store: &ParamStore, texts: &[&str]) -> Result<Vec<f64>> {
        let max_len = self.encoder.config().max_len;
        let mut probs = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(INFERENCE_BATCH.max(1)) {
            let encodings: Vec<Encoding> =
                chunk.iter().map(|t| self.vocab.encode_text(t, max_len)).collect();
            let mut tape = Tape::new();
            let logits = self.forward(&mut tape, store, &encodings, None)?;
            let binary = tape.value(logits[self.binary_index]);
            let mut row = vec![0.0; 2];
            for sample in binary.data().chunks_exact(2) {
                crate::numerics::functions::softmax_row(sample, &mut row);
                probs.push(row[Label::Machine.as_u8() as usize]);
            }
        }
        Ok(probs)
    }

    /// Thresholded binary predictions; multiclass heads are not consulted.
    pub fn predict(
        &self,
        store: &ParamStore,
        samples: &[LabeledSample],
        rule: DecisionRule,
    ) -> Result<Vec<Prediction>> {
        rule.validate()?;
        let texts: Vec<&str> = samples.iter().map(|s| s.text.as_str()).collect();
        let probs = self.predict_proba(store, &texts)?;
        Ok(samples
            .iter()
            .zip(probs)
            .map(|(s, p)| Prediction { id: s.id.clone(), label: rule.decide(p), p_machine: p })
            .collect())
    }

    /// Eval-mode [CLS] vectors (`d_model` wide) for analysis.
    pub fn embed_cls(&self, store: &ParamStore, texts: &[&str]) -> Result<Vec<Vec<f64>>> {
        self.embed(store, texts, None)
    }

    /// Eval-mode logits of the named head, one vector per text.
    pub fn embed_head_logits(
        &self,
        store: &ParamStore,
        texts: &[&str],
        head_name: &str,
    ) -> Result<Vec<Vec<f64>>> {
        let index = self
            .heads
            .iter()
            .position(|(s, _)| s.name == head_name)
            .ok_or_else(|| Error::Multitask(format!("unknown head {head_name:?}")))?;
        self.embed(store, texts, Some(index))
    }

    fn embed(
        &self,
        store: &ParamStore,
        texts: &[&str],
        head_index: Option<usize>,
    ) -> Result<Vec<Vec<f64>>> {
        let max_len = self.encoder.config().max_len;
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(INFERENCE_BATCH.max(1)) {
            let encodings: Vec<Encoding> =
                chunk.iter().map(|t| self.vocab.encode_text(t, max_len)).collect();
            let mut tape = Tape::new();
            let cls = self.encoder.forward(&mut tape, store, &encodings, None)?;
            let node = match head_index {
                None => cls,
                Some(i) => self.heads[i].1.forward(&mut tape, store, cls, None)?,
            };
            let value = tape.value(node);
            let cols = value.cols();
            for row in value.data().chunks_exact(cols) {
                out.push(row.to_vec());
            }
        }
        Ok(out)
    }
}
