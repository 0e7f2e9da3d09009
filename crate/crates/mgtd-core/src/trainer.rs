//! Two-stage training: stage 1 fine-tunes the heads against a frozen
//! encoder, stage 2 unfreezes everything at a much smaller learning
//! rate. Also owns the versioned binary checkpoint format.

use std::io::{Read, Write as _};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::Corpus;
use crate::encoder::{EncoderConfig, Vocab};
use crate::error::{Error, Result};
use crate::heads::CchConfig;
use crate::metrics::f1_report_n;
use crate::multitask::{DecisionRule, HeadSpec, MtlModel};
use crate::numerics::adamw::{AdamW, AdamWConfig};
use crate::numerics::params::ParamStore;
use crate::numerics::tape::Tape;
use crate::rng::{derive_seed, Rng};

/// How batches are assembled from the mixed-source training pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BatchMode {
    /// One shuffled pass over the pooled corpus; task masking sorts out
    /// which heads learn from which sample.
    Mixed,
    /// Alternate batches between tasks; each task draws from the
    /// samples it can label (the binary task from everything).
    RoundRobin,
}

/// Dev-metric patience. Besides stopping, an early-exit stage keeps the
/// parameters of its best dev epoch instead of its last one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EarlyExit {
    /// Stop after this many consecutive dev evaluations without
    /// improvement.
    pub patience: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub warmup_steps: u32,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub freeze_encoder: bool,
    pub early_exit: Option<EarlyExit>,
    pub batch_mode: BatchMode,
    pub seed: u64,
}

impl StageConfig {
    /// Stage-1 defaults: frozen encoder, LR 3e-4, warmup 50, batch 32.
    pub fn stage1() -> Self {
        Self {
            epochs: 1,
            learning_rate: 3e-4,
            warmup_steps: 50,
            weight_decay: 0.01,
            batch_size: 32,
            freeze_encoder: true,
            early_exit: None,
            batch_mode: BatchMode::Mixed,
            seed: 0,
        }
    }

    /// Stage-2 defaults: everything unfrozen, LR 3e-6, warmup 75,
    /// batch 16.
    pub fn stage2() -> Self {
        Self {
            epochs: 1,
            learning_rate: 3e-6,
            warmup_steps: 75,
            weight_decay: 0.01,
            batch_size: 16,
            freeze_encoder: false,
            early_exit: None,
            batch_mode: BatchMode::Mixed,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Trainer(format!("learning_rate {} not positive", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Trainer("batch_size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Trainer("epochs must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub stage: u32,
    pub global_step: u64,
    pub lr: f64,
    pub total_loss: f64,
    pub head_losses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub stage: u32,
    pub epoch: usize,
    pub dev_macro_f1: f64,
}

/// Step- and epoch-level training history.
#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub head_names: Vec<String>,
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn new(head_names: Vec<String>) -> Self {
        Self { head_names, steps: Vec::new(), epochs: Vec::new() }
    }

    /// Step records as CSV: `stage,step,lr,total_loss,<one column per head>`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("stage,step,lr,total_loss");
        for name in &self.head_names {
            out.push_str(&format!(",loss_{name}"));
        }
        out.push('\n');
        for s in &self.steps {
            out.push_str(&format!("{},{},{},{}", s.stage, s.global_step, s.lr, s.total_loss));
            for l in &s.head_losses {
                out.push_str(&format!(",{l}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn last_dev_macro_f1(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.dev_macro_f1)
    }
}

/// Dev-set evaluation used during training: τ = 0.5 (argmax) binary
/// macro-F1; threshold calibration happens after training.
pub fn dev_macro_f1(model: &MtlModel, store: &ParamStore, dev: &Corpus) -> Result<f64> {
    let texts: Vec<&str> = dev.iter().map(|s| s.text.as_str()).collect();
    let probs = model.predict_proba(store, &texts)?;
    let preds: Vec<u32> = probs.iter().map(|&p| u32::from(p >= 0.5)).collect();
    let labels: Vec<u32> = dev.iter().map(|s| s.label.as_u8() as u32).collect();
    Ok(f1_report_n(&preds, &labels, 2)?.macro_f1)
}

/// Per-epoch batch assembly: lists of sample indices.
fn epoch_batches(
    model: &MtlModel,
    train: &Corpus,
    cfg: &StageConfig,
    epoch: usize,
) -> Vec<Vec<usize>> {
    match cfg.batch_mode {
        BatchMode::Mixed => {
            let mut rng = Rng::new(derive_seed(cfg.seed, &format!("epoch/{epoch}")));
            let order = rng.permutation(train.len());
            order.chunks(cfg.batch_size).map(<[usize]>::to_vec).collect()
        }
        BatchMode::RoundRobin => {
            // One batch list per head over the samples it can label,
            // then interleave the lists.
            let mut per_task: Vec<Vec<Vec<usize>>> = Vec::new();
            for (spec, _) in model.heads() {
                let mut pool: Vec<usize> = train
                    .iter()
                    .enumerate()
                    .filter(|(_, s)| spec.target_for(s).ok().flatten().is_some())
                    .map(|(i, _)| i)
                    .collect();
                let tag = format!("epoch/{epoch}/task/{}", spec.name);
                Rng::new(derive_seed(cfg.seed, &tag)).shuffle(&mut pool);
                per_task.push(pool.chunks(cfg.batch_size).map(<[usize]>::to_vec).collect());
            }
            let mut batches = Vec::new();
            let longest = per_task.iter().map(Vec::len).max().unwrap_or(0);
            for round in 0..longest {
                for task in &per_task {
                    if let Some(batch) = task.get(round) {
                        batches.push(batch.clone());
                    }
                }
            }
            batches
        }
    }
}

/// Run one training stage in place, appending to `log`. `stage` tags the
/// log rows; `start_step` continues the global step counter. Returns the
/// next global step. The warmup schedule counts stage-local steps, and
/// optimizer state is created fresh (and only for trainable parameters).
/// When `early_exit` is set, the stage both stops on stale dev scores
/// and restores the parameters of its best dev epoch before returning.
pub fn run_stage(
    model: &MtlModel,
    store: &mut ParamStore,
    train: &Corpus,
    dev: &Corpus,
    cfg: &StageConfig,
    stage: u32,
    start_step: u64,
    log: &mut TrainLog,
) -> Result<u64> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Trainer("empty training corpus".into()));
    }
    let trainable: Vec<String> = if cfg.freeze_encoder {
        model
            .param_names()
            .into_iter()
            .filter(|n| !n.starts_with("enc/"))
            .collect()
    } else {
        model.param_names()
    };
    let mut optimizer = AdamW::new(
        AdamWConfig::new(cfg.learning_rate, cfg.weight_decay, cfg.warmup_steps),
        &trainable,
        store,
    )?;
    let mut dropout_rng = Rng::new(derive_seed(cfg.seed, "dropout"));
    let samples: Vec<_> = train.iter().cloned().collect();

    let mut global_step = start_step;
    let mut local_step: u64 = 0;
    let mut best_dev = f64::NEG_INFINITY;
    let mut best_params: Option<ParamStore> = None;
    let mut stale_evals = 0usize;
    for epoch in 0..cfg.epochs {
        for indices in epoch_batches(model, train, cfg, epoch) {
            let batch = model.make_batch(indices.iter().map(|&i| &samples[i]))?;
            store.zero_grads();
            let mut tape = Tape::new();
            let logits =
                model.forward(&mut tape, store, &batch.encodings, Some(&mut dropout_rng))?;
            let (total, per_head) = model.mtl_loss(&mut tape, &logits, &batch)?;
            let total_loss = tape.value(total).data()[0];
            if !total_loss.is_finite() {
                return Err(Error::Trainer(format!(
                    "non-finite loss {total_loss} at step {global_step}"
                )));
            }
            tape.backward(total)?;
            tape.accumulate_into(store)?;
            let lr = optimizer.step(store, local_step)?;
            log.steps.push(StepRecord {
                stage,
                global_step,
                lr,
                total_loss,
                head_losses: per_head.into_iter().map(|(_, l)| l).collect(),
            });
            local_step += 1;
            global_step += 1;
        }
        let f1 = dev_macro_f1(model, store, dev)?;
        log.epochs.push(EpochRecord { stage, epoch, dev_macro_f1: f1 });
        if let Some(exit) = cfg.early_exit {
            if f1 > best_dev {
                best_dev = f1;
                best_params = Some(store.clone());
                stale_evals = 0;
            } else {
                stale_evals += 1;
                if stale_evals >= exit.patience {
                    break;
                }
            }
        }
    }
    // With early exit engaged, the stage keeps its best dev epoch rather
    // than whatever state training happened to stop in.
    if let Some(best) = best_params {
        *store = best;
    }
    Ok(global_step)
}

/// Everything `two_stage_train` produces: a checkpoint after each stage
/// plus the combined log.
#[derive(Debug, Clone)]
pub struct TwoStageArtifacts {
    pub stage1: Checkpoint,
    pub stage2: Checkpoint,
    pub log: TrainLog,
}

/// Stage 1 (frozen encoder) followed by stage 2 (full fine-tune),
/// mutating `store` in place and snapshotting a checkpoint after each
/// stage.
pub fn two_stage_train(
    model: &MtlModel,
    store: &mut ParamStore,
    train: &Corpus,
    dev: &Corpus,
    stage1: &StageConfig,
    stage2: &StageConfig,
    rule: DecisionRule,
) -> Result<TwoStageArtifacts> {
    let mut log = TrainLog::new(model.heads().iter().map(|(s, _)| s.name.clone()).collect());
    let next = run_stage(model, store, train, dev, stage1, 1, 0, &mut log)?;
    let ckpt1 = Checkpoint::from_model(model, store, rule, vec![stage1.clone()]);
    run_stage(model, store, train, dev, stage2, 2, next, &mut log)?;
    let ckpt2 =
        Checkpoint::from_model(model, store, rule, vec![stage1.clone(), stage2.clone()]);
    Ok(TwoStageArtifacts { stage1: ckpt1, stage2: ckpt2, log })
}

const MAGIC: &[u8; 4] = b"MGTD";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointHeader {
    encoder: EncoderConfig,
    head_specs: Vec<HeadSpec>,
    head_configs: Vec<CchConfig>,
    vocab: Vec<String>,
    rule: DecisionRule,
    stages: Vec<StageConfig>,
    arrays: Vec<(String, Vec<usize>)>,
    payload_sha256: String,
}

/// A complete trained (or initialized) model: configs, vocab, decision
/// rule, stage metadata, and every named parameter.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub encoder: EncoderConfig,
    pub head_specs: Vec<HeadSpec>,
    pub head_configs: Vec<CchConfig>,
    pub vocab_tokens: Vec<String>,
    pub rule: DecisionRule,
    pub stages: Vec<StageConfig>,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn from_model(
        model: &MtlModel,
        store: &ParamStore,
        rule: DecisionRule,
        stages: Vec<StageConfig>,
    ) -> Self {
        Self {
            encoder: model.encoder().config().clone(),
            head_specs: model.head_specs(),
            head_configs: model.head_configs(),
            vocab_tokens: model.vocab().tokens().to_vec(),
            rule,
            stages,
            params: store.clone(),
        }
    }

    /// Rebuild the model this checkpoint describes. Parameters stay in
    /// `self.params`.
    pub fn model(&self) -> Result<MtlModel> {
        let vocab = Vocab::from_tokens(self.vocab_tokens.clone())?;
        MtlModel::with_head_configs(
            self.encoder.clone(),
            self.head_specs.clone(),
            self.head_configs.clone(),
            vocab,
        )
    }

    /// Binary layout: `MGTD` magic, u32 version, u64 header length, JSON
    /// header (configs + array table + payload checksum), then all
    /// parameter data as little-endian f64.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut payload = Vec::new();
        let mut arrays = Vec::new();
        for (name, param) in self.params.iter() {
            arrays.push((name.to_string(), param.value().shape().to_vec()));
            for v in param.value().data() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        let header = CheckpointHeader {
            encoder: self.encoder.clone(),
            head_specs: self.head_specs.clone(),
            head_configs: self.head_configs.clone(),
            vocab: self.vocab_tokens.clone(),
            rule: self.rule,
            stages: self.stages.clone(),
            arrays,
            payload_sha256: hex(&Sha256::digest(&payload)),
        };
        let header_bytes = serde_json::to_vec(&header)
            .map_err(|e| Error::json("serializing checkpoint header", e))?;
        let ctx = || format!("writing checkpoint {}", path.display());
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(ctx(), e))?;
        file.write_all(MAGIC).map_err(|e| Error::io(ctx(), e))?;
        file.write_all(&CHECKPOINT_VERSION.to_le_bytes()).map_err(|e| Error::io(ctx(), e))?;
        file.write_all(&(header_bytes.len() as u64).to_le_bytes())
            .map_err(|e| Error::io(ctx(), e))?;
        file.write_all(&header_bytes).map_err(|e| Error::io(ctx(), e))?;
        file.write_all(&payload).map_err(|e| Error::io(ctx(), e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ctx = || format!("reading checkpoint {}", path.display());
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(ctx(), e))?;
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(Error::Trainer(format!("{} is not a checkpoint file", path.display())));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::VersionMismatch { found: version, expected: CHECKPOINT_VERSION });
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let payload_start = 16usize.checked_add(header_len).filter(|&p| p <= bytes.len());
        let Some(payload_start) = payload_start else {
            return Err(Error::Trainer("checkpoint header length out of bounds".into()));
        };
        let header: CheckpointHeader = serde_json::from_slice(&bytes[16..payload_start])
            .map_err(|e| Error::json("parsing checkpoint header", e))?;
        let payload = &bytes[payload_start..];
        if hex(&Sha256::digest(payload)) != header.payload_sha256 {
            return Err(Error::ChecksumMismatch);
        }
        let mut params = ParamStore::new();
        let mut offset = 0usize;
        for (name, shape) in &header.arrays {
            let len: usize = shape.iter().product();
            let end = offset + len * 8;
            if end > payload.len() {
                return Err(Error::Trainer(format!("checkpoint payload truncated at {name}")));
            }
            let data: Vec<f64> = payload[offset..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            params.insert(name, crate::numerics::tensor::Tensor::new(shape.clone(), data)?)?;
            offset = end;
        }
        if offset != payload.len() {
            return Err(Error::Trainer("checkpoint payload has trailing bytes".into()));
        }
        Ok(Self {
            encoder: header.encoder,
            head_specs: header.head_specs,
            head_configs: header.head_configs,
            vocab_tokens: header.vocab,
            rule: header.rule,
            stages: header.stages,
            params,
        })
    }
}

fn hex(digest: &[u8]) -> String {
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{synth_corpus, SynthSpec};
    use crate::multitask::HeadSpec;

    fn tiny_spec(n_per_cell: usize) -> SynthSpec {
        let mut spec = SynthSpec::default();
        spec.n_per_cell = n_per_cell;
        spec.seed = 77;
        spec
    }

    fn tiny_setup(n_per_cell: usize) -> (MtlModel, ParamStore, Corpus, Corpus) {
        let corpus = synth_corpus(&tiny_spec(n_per_cell)).unwrap();
        let (train, dev) = crate::corpus::split(&corpus, 0.25, 9).unwrap();
        let vocab = Vocab::build(&train, 600).unwrap();
        let config = EncoderConfig {
            vocab_size: vocab.size(),
            d_model: 16,
            n_layers: 1,
            n_heads: 2,
            d_ff: 32,
            max_len: 24,
            dropout_p: 0.1,
            seed: 4,
        };
        let specs = vec![
            HeadSpec::binary("binary"),
            HeadSpec::multiclass("hc3", crate::corpus::Source::Hc3, crate::corpus::HC3_SUB_SOURCES),
        ];
        let model = MtlModel::new(config, specs, vocab).unwrap();
        let mut store = ParamStore::new();
        model.init_params(&mut store).unwrap();
        (model, store, train, dev)
    }

    fn quick_stage(freeze: bool, seed: u64) -> StageConfig {
        let mut cfg = if freeze { StageConfig::stage1() } else { StageConfig::stage2() };
        cfg.batch_size = 16;
        cfg.seed = seed;
        cfg
    }

    #[test]
    fn early_exit_keeps_the_best_dev_epoch_and_stops_when_stale() {
        // deliberately jumpy learning rate so dev moves both ways
        let (model, mut store, train, dev) = tiny_setup(12);
        let mut cfg = quick_stage(false, 3);
        cfg.epochs = 5;
        cfg.learning_rate = 5e-3;
        cfg.early_exit = Some(EarlyExit { patience: 99 });
        let mut log = TrainLog::new(vec!["binary".into(), "hc3".into()]);
        run_stage(&model, &mut store, &train, &dev, &cfg, 1, 0, &mut log).unwrap();
        let best_logged =
            log.epochs.iter().map(|e| e.dev_macro_f1).fold(f64::NEG_INFINITY, f64::max);
        let restored = dev_macro_f1(&model, &store, &dev).unwrap();
        assert_eq!(restored, best_logged, "stage must return its best dev state");

        // without early exit, the last state is kept even if worse
        let (model2, mut store2, train2, dev2) = tiny_setup(12);
        let mut cfg2 = quick_stage(false, 3);
        cfg2.epochs = 5;
        cfg2.learning_rate = 5e-3;
        let mut log2 = TrainLog::new(vec!["binary".into(), "hc3".into()]);
        run_stage(&model2, &mut store2, &train2, &dev2, &cfg2, 1, 0, &mut log2).unwrap();
        let last = log2.epochs.last().unwrap().dev_macro_f1;
        assert_eq!(dev_macro_f1(&model2, &store2, &dev2).unwrap(), last);

        // patience of 1 stops at the first non-improving evaluation
        let (model3, mut store3, train3, dev3) = tiny_setup(12);
        let mut cfg3 = quick_stage(false, 3);
        cfg3.epochs = 30;
        cfg3.learning_rate = 5e-3;
        cfg3.early_exit = Some(EarlyExit { patience: 1 });
        let mut log3 = TrainLog::new(vec!["binary".into(), "hc3".into()]);
        run_stage(&model3, &mut store3, &train3, &dev3, &cfg3, 1, 0, &mut log3).unwrap();
        assert!(log3.epochs.len() < 30, "high-variance training should go stale early");
    }

    #[test]
    fn stage_defaults_match_the_training_recipe() {
        let s1 = StageConfig::stage1();
        assert_eq!(
            (s1.epochs, s1.learning_rate, s1.warmup_steps, s1.weight_decay, s1.batch_size),
            (1, 3e-4, 50, 0.01, 32)
        );
        assert!(s1.freeze_encoder);
        let s2 = StageConfig::stage2();
        assert_eq!(
            (s2.epochs, s2.learning_rate, s2.warmup_steps, s2.weight_decay, s2.batch_size),
            (1, 3e-6, 75, 0.01, 16)
        );
        assert!(!s2.freeze_encoder);
    }

    #[test]
    fn frozen_stage_leaves_encoder_bits_untouched() {
        let (model, mut store, train, dev) = tiny_setup(12);
        let snapshot = |store: &ParamStore, names: &[String]| -> Vec<Vec<f64>> {
            names.iter().map(|n| store.get(n).unwrap().value().data().to_vec()).collect()
        };
        let enc_names = model.encoder_param_names();
        let head_names = model.head_param_names(0);
        let enc_before = snapshot(&store, &enc_names);
        let head_before = snapshot(&store, &head_names);
        let mut log = TrainLog::new(vec!["binary".into(), "hc3".into()]);
        run_stage(&model, &mut store, &train, &dev, &quick_stage(true, 1), 1, 0, &mut log)
            .unwrap();
        for (name, b) in enc_names.iter().zip(&enc_before) {
            assert_eq!(store.get(name).unwrap().value().data(), b.as_slice(), "{name} moved");
        }
        // heads did move
        assert_ne!(snapshot(&store, &head_names), head_before);
        assert!(!log.steps.is_empty());
        assert_eq!(log.epochs.len(), 1);
    }

    #[test]
    fn warmup_lrs_follow_the_linear_ramp() {
        let (model, mut store, train, dev) = tiny_setup(12);
        let mut cfg = quick_stage(true, 2);
        cfg.batch_size = 8;
        let mut log = TrainLog::new(vec!["binary".into(), "hc3".into()]);
        run_stage(&model, &mut store, &train, &dev, &cfg, 1, 0, &mut log).unwrap();
        assert!((log.steps[0].lr - 3e-4 / 50.0).abs() < 1e-18);
        assert!((log.steps[1].lr - 2.0 * 3e-4 / 50.0).abs() < 1e-18);
        let steps: Vec<u64> = log.steps.iter().map(|s| s.global_step).collect();
        assert!(steps.windows(2).all(|w| w[1] == w[0] + 1));
    }

    #[test]
    fn training_loss_decreases_on_most_seeds() {
        let mut wins = 0;
        for seed in 0..5u64 {
            let (model, mut store, train, dev) = tiny_setup(16);
            let mut cfg = quick_stage(true, seed);
            cfg.epochs = 3;
            cfg.learning_rate = 3e-3;
            let mut log = TrainLog::new(vec!["binary".into(), "hc3".into()]);
            run_stage(&model, &mut store, &train, &dev, &cfg, 1, 0, &mut log).unwrap();
            let first = log.steps.first().unwrap().total_loss;
            let last = log.steps.last().unwrap().total_loss;
            if last < first {
                wins += 1;
            }
        }
        assert!(wins >= 4, "loss decreased in only {wins}/5 seeds");
    }

    #[test]
    fn two_stage_is_deterministic_and_resumable() {
        let (model, store, train, dev) = tiny_setup(10);
        let s1 = quick_stage(true, 3);
        let s2 = {
            let mut c = quick_stage(false, 4);
            c.learning_rate = 1e-4;
            c
        };
        let rule = DecisionRule::default();
        let run1 =
            two_stage_train(&model, &mut store.clone(), &train, &dev, &s1, &s2, rule).unwrap();
        let run2 =
            two_stage_train(&model, &mut store.clone(), &train, &dev, &s1, &s2, rule).unwrap();
        for ((n1, p1), (n2, p2)) in run1.stage2.params.iter().zip(run2.stage2.params.iter()) {
            assert_eq!(n1, n2);
            assert_eq!(p1.value().data(), p2.value().data());
        }

        // resume: reload stage-1 checkpoint, run stage 2 only
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stage1.ckpt");
        run1.stage1.save(&path).unwrap();
        let reloaded = Checkpoint::load(&path).unwrap();
        let model2 = reloaded.model().unwrap();
        let mut resumed = reloaded.params.clone();
        let steps_so_far = run1.log.steps.iter().filter(|s| s.stage == 1).count() as u64;
        let mut log = TrainLog::new(vec!["binary".into(), "hc3".into()]);
        run_stage(&model2, &mut resumed, &train, &dev, &s2, 2, steps_so_far, &mut log).unwrap();
        for (name, p) in run1.stage2.params.iter() {
            assert_eq!(
                p.value().data(),
                resumed.get(name).unwrap().value().data(),
                "{name} differs after resume"
            );
        }
    }

    #[test]
    fn checkpoint_round_trip_and_corruption_detection() {
        let (model, store, ..) = tiny_setup(8);
        let ckpt = Checkpoint::from_model(
            &model,
            &store,
            DecisionRule::default(),
            vec![StageConfig::stage1()],
        );
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        ckpt.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded.encoder, ckpt.encoder);
        assert_eq!(loaded.head_specs, ckpt.head_specs);
        assert_eq!(loaded.vocab_tokens, ckpt.vocab_tokens);
        assert_eq!(loaded.rule, ckpt.rule);
        for (name, p) in ckpt.params.iter() {
            assert_eq!(p.value().data(), loaded.params.get(name).unwrap().value().data());
        }

        // same predictions from the reloaded model
        let texts: Vec<String> =
            (0..10).map(|i| format!("the of to and is in that it for as {i}")).collect();
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let a = model.predict_proba(&store, &refs).unwrap();
        let b = loaded.model().unwrap().predict_proba(&loaded.params, &refs).unwrap();
        assert_eq!(a, b);

        // corrupt one payload byte → checksum error
        let mut bytes = std::fs::read(&path).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0xff;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::ChecksumMismatch)));

        // bump the version field → version error
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4] = 99;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::VersionMismatch { .. })));
    }

    #[test]
    fn round_robin_covers_every_task() {
        let (model, mut store, train, dev) = tiny_setup(10);
        let mut cfg = quick_stage(true, 5);
        cfg.batch_mode = BatchMode::RoundRobin;
        let mut log = TrainLog::new(vec!["binary".into(), "hc3".into()]);
        run_stage(&model, &mut store, &train, &dev, &cfg, 1, 0, &mut log).unwrap();
        // binary pool covers all samples, hc3 pool only HC3 ones
        let n_binary_batches = train.len().div_ceil(cfg.batch_size);
        let hc3_count = train.iter().filter(|s| s.source == crate::corpus::Source::Hc3).count();
        let n_hc3_batches = hc3_count.div_ceil(cfg.batch_size);
        assert_eq!(log.steps.len(), n_binary_batches + n_hc3_batches);
    }

    #[test]
    fn log_csv_layout() {
        let mut log = TrainLog::new(vec!["binary".into(), "hc3".into()]);
        log.steps.push(StepRecord {
            stage: 1,
            global_step: 0,
            lr: 6e-6,
            total_loss: 2.5,
            head_losses: vec![0.7, 1.8],
        });
        let csv = log.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "stage,step,lr,total_loss,loss_binary,loss_hc3");
        assert_eq!(lines.next().unwrap(), "1,0,0.000006,2.5,0.7,1.8");
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let (model, mut store, _, dev) = tiny_setup(8);
        let empty = Corpus::new(Vec::new(), "empty").unwrap();
        let mut log = TrainLog::new(Vec::new());
        let r = run_stage(&model, &mut store, &empty, &dev, &quick_stage(true, 0), 1, 0, &mut log);
        assert!(r.is_err());
    }
}
