//! Vocabulary, tokenization to fixed-length id sequences, and a small
//! pre-norm Transformer encoder producing one [CLS] vector per text.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::numerics::params::ParamStore;
use crate::numerics::tape::{NodeId, Tape};
use crate::numerics::tensor::Tensor;
use crate::rng::Rng;
use crate::text::tokenize_words;

pub const PAD_ID: u32 = 0;
pub const CLS_ID: u32 = 1;
pub const UNK_ID: u32 = 2;
const RESERVED: [&str; 3] = ["[PAD]", "[CLS]", "[UNK]"];

/// Additive attention bias at masked key positions. exp(-1e9) underflows
/// to exactly 0, so masked positions get zero attention weight and the
/// [CLS] output is bit-invariant to padded content.
const MASK_BIAS: f64 = -1e9;

/// Token vocabulary with reserved ids 0=[PAD], 1=[CLS], 2=[UNK].
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Vocab {
    /// Rank corpus tokens by frequency (ties lexicographic) and keep the
    /// most frequent ones so the whole vocabulary, reserved tokens
    /// included, has at most `max_size` entries.
    pub fn build(corpus: &Corpus, max_size: usize) -> Result<Self> {
        if max_size < 4 {
            return Err(Error::Encoder(format!(
                "vocab max_size {max_size} leaves no room for content tokens"
            )));
        }
        if corpus.is_empty() {
            return Err(Error::Encoder("cannot build a vocab from an empty corpus".into()));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        for sample in corpus.iter() {
            for token in tokenize_words(&sample.text) {
                *counts.entry(token).or_insert(0) += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(max_size - RESERVED.len());
        let tokens: Vec<String> = RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(ranked.into_iter().map(|(t, _)| t))
            .collect();
        Self::from_tokens(tokens)
    }

    /// Rebuild from a serialized token list (reserved entries first).
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < RESERVED.len()
            || tokens[..RESERVED.len()] != RESERVED.map(String::from)
        {
            return Err(Error::Encoder("vocab does not start with the reserved tokens".into()));
        }
        let mut ids = HashMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Encoder(format!("duplicate vocab token {t:?}")));
            }
        }
        Ok(Self { tokens, ids })
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id_of(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    /// Fixed-length encoding: [CLS] + content ids (OOV → [UNK]),
    /// truncated to `max_len`, padded with [PAD]; mask is 1 at [CLS] and
    /// real tokens, 0 at padding.
    pub fn encode_text(&self, text: &str, max_len: usize) -> Encoding {
        let mut ids = Vec::with_capacity(max_len);
        ids.push(CLS_ID);
        for token in tokenize_words(text) {
            if ids.len() == max_len {
                break;
            }
            ids.push(self.id_of(&token).unwrap_or(UNK_ID));
        }
        let mut mask = vec![1u8; ids.len()];
        ids.resize(max_len, PAD_ID);
        mask.resize(max_len, 0);
        Encoding { ids, mask }
    }
}

/// One tokenized text: ids and attention mask, both `max_len` long.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Encoding {
    pub ids: Vec<u32>,
    pub mask: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub dropout_p: f64,
    pub seed: u64,
}

impl EncoderConfig {
    /// Spec-level defaults for a given vocabulary.
    pub fn with_vocab_size(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            d_ff: 128,
            max_len: 64,
            dropout_p: 0.1,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::Encoder(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.max_len < 2 {
            return Err(Error::Encoder(format!("max_len {} < 2", self.max_len)));
        }
        if self.vocab_size < RESERVED.len() {
            return Err(Error::Encoder(format!(
                "vocab_size {} smaller than the reserved token count",
                self.vocab_size
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Encoder(format!("dropout_p {} outside [0, 1)", self.dropout_p)));
        }
        if self.n_layers == 0 || self.d_ff == 0 {
            return Err(Error::Encoder("n_layers and d_ff must be positive".into()));
        }
        Ok(())
    }
}

/// Standard deviation of the normal init for embeddings and projections.
const INIT_STD: f64 = 0.02;

/// The pre-norm Transformer encoder. Parameters live in an external
/// [`ParamStore`] under the stable names produced by
/// [`EncoderModel::param_names`].
#[derive(Debug, Clone)]
pub struct EncoderModel {
    config: EncoderConfig,
}

impl EncoderModel {
    pub fn new(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    /// All parameter names, in registration order.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = vec!["enc/tok_emb".to_string(), "enc/pos_emb".to_string()];
        for l in 0..self.config.n_layers {
            for part in [
                "ln1/gain", "ln1/bias", "attn/wq", "attn/wk", "attn/wv", "attn/wo", "ln2/gain",
                "ln2/bias", "ffn/w1", "ffn/w2",
            ] {
                names.push(format!("enc/l{l}/{part}"));
            }
        }
        names.push("enc/final/gain".to_string());
        names.push("enc/final/bias".to_string());
        names
    }

    /// Insert freshly initialized parameters into `store`: normal(0,
    /// 0.02) for embeddings and projections, ones/zeros for layer norms
    /// and biases. Deterministic given the config seed.
    pub fn init_params(&self, store: &mut ParamStore) -> Result<()> {
        let cfg = &self.config;
        let mut rng = Rng::new(crate::rng::derive_seed(cfg.seed, "encoder/init"));
        let normal = |rows: usize, cols: usize, rng: &mut Rng| -> Tensor {
            let data = (0..rows * cols).map(|_| INIT_STD * rng.normal()).collect();
            Tensor::matrix(rows, cols, data).expect("consistent dims")
        };
        store.insert("enc/tok_emb", normal(cfg.vocab_size, cfg.d_model, &mut rng))?;
        store.insert("enc/pos_emb", normal(cfg.max_len, cfg.d_model, &mut rng))?;
        for l in 0..cfg.n_layers {
            let p = |part: &str| format!("enc/l{l}/{part}");
            // Projections are bias-free: layer-norm biases already give
            // per-channel shifts, and a key bias in particular would be a
            // dead parameter (softmax ignores uniform row shifts).
            store.insert(&p("ln1/gain"), Tensor::new(vec![cfg.d_model], vec![1.0; cfg.d_model])?)?;
            store.insert(&p("ln1/bias"), Tensor::zeros(vec![cfg.d_model]))?;
            for w in ["attn/wq", "attn/wk", "attn/wv", "attn/wo"] {
                store.insert(&p(w), normal(cfg.d_model, cfg.d_model, &mut rng))?;
            }
            store.insert(&p("ln2/gain"), Tensor::new(vec![cfg.d_model], vec![1.0; cfg.d_model])?)?;
            store.insert(&p("ln2/bias"), Tensor::zeros(vec![cfg.d_model]))?;
            store.insert(&p("ffn/w1"), normal(cfg.d_model, cfg.d_ff, &mut rng))?;
            store.insert(&p("ffn/w2"), normal(cfg.d_ff, cfg.d_model, &mut rng))?;
        }
        // Closing norm of the pre-norm stack: keeps the [CLS] output at
        // unit scale regardless of depth, so heads see O(1) inputs.
        store.insert("enc/final/gain", Tensor::new(vec![cfg.d_model], vec![1.0; cfg.d_model])?)?;
        store.insert("enc/final/bias", Tensor::zeros(vec![cfg.d_model]))?;
        Ok(())
    }

    /// Run the encoder over a batch and return the [CLS] hidden states
    /// as a `[batch × d_model]` node. `dropout` carries the training
    /// RNG; `None` means eval mode (dropout off).
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        batch: &[Encoding],
        mut dropout: Option<&mut Rng>,
    ) -> Result<NodeId> {
        let cfg = &self.config;
        if batch.is_empty() {
            return Err(Error::Encoder("empty batch".into()));
        }
        for enc in batch {
            if enc.ids.len() != cfg.max_len || enc.mask.len() != cfg.max_len {
                return Err(Error::Encoder(format!(
                    "encoding length {} != max_len {}",
                    enc.ids.len(),
                    cfg.max_len
                )));
            }
            if let Some(&bad) = enc.ids.iter().find(|&&id| id as usize >= cfg.vocab_size) {
                return Err(Error::Encoder(format!(
                    "token id {bad} out of range for vocab of {}",
                    cfg.vocab_size
                )));
            }
        }

        // Bind every parameter once per tape.
        let tok_emb = tape.param(store, "enc/tok_emb")?;
        let pos_emb = tape.param(store, "enc/pos_emb")?;
        struct LayerNodes {
            ln1_gain: NodeId,
            ln1_bias: NodeId,
            wq: NodeId,
            wk: NodeId,
            wv: NodeId,
            wo: NodeId,
            ln2_gain: NodeId,
            ln2_bias: NodeId,
            w1: NodeId,
            w2: NodeId,
        }
        let mut layers = Vec::with_capacity(cfg.n_layers);
        for l in 0..cfg.n_layers {
            let bind = |part: &str, tape: &mut Tape| tape.param(store, &format!("enc/l{l}/{part}"));
            layers.push(LayerNodes {
                ln1_gain: bind("ln1/gain", tape)?,
                ln1_bias: bind("ln1/bias", tape)?,
                wq: bind("attn/wq", tape)?,
                wk: bind("attn/wk", tape)?,
                wv: bind("attn/wv", tape)?,
                wo: bind("attn/wo", tape)?,
                ln2_gain: bind("ln2/gain", tape)?,
                ln2_bias: bind("ln2/bias", tape)?,
                w1: bind("ffn/w1", tape)?,
                w2: bind("ffn/w2", tape)?,
            });
        }

        let final_gain = tape.param(store, "enc/final/gain")?;
        let final_bias = tape.param(store, "enc/final/bias")?;

        let d_head = cfg.d_model / cfg.n_heads;
        let scale = 1.0 / (d_head as f64).sqrt();
        let mut cls_rows = Vec::with_capacity(batch.len());
        for enc in batch {
            // Additive key mask shared by every layer of this sample.
            let mask_bias: Vec<f64> = {
                let row: Vec<f64> = enc
                    .mask
                    .iter()
                    .map(|&m| if m == 0 { MASK_BIAS } else { 0.0 })
                    .collect();
                row.iter().cycle().take(cfg.max_len * cfg.max_len).copied().collect()
            };

            let gathered = tape.gather_rows(tok_emb, &enc.ids)?;
            let mut x = tape.add(gathered, pos_emb)?;
            for nodes in &layers {
                // Attention block (pre-norm).
                let h = tape.layer_norm(x, nodes.ln1_gain, nodes.ln1_bias)?;
                let q = tape.matmul(h, nodes.wq)?;
                let k = tape.matmul(h, nodes.wk)?;
                let v = tape.matmul(h, nodes.wv)?;
                let mut head_outputs = Vec::with_capacity(cfg.n_heads);
                for hd in 0..cfg.n_heads {
                    let qh = tape.slice_cols(q, hd * d_head, d_head)?;
                    let kh = tape.slice_cols(k, hd * d_head, d_head)?;
                    let vh = tape.slice_cols(v, hd * d_head, d_head)?;
                    let kt = tape.transpose(kh);
                    let scores = tape.matmul(qh, kt)?;
                    let scores = tape.scale(scores, scale);
                    let scores = tape.mask_add(scores, &mask_bias)?;
                    let attn = tape.softmax_rows(scores)?;
                    head_outputs.push(tape.matmul(attn, vh)?);
                }
                let ctx = tape.concat_cols(&head_outputs)?;
                let mut o = tape.matmul(ctx, nodes.wo)?;
                if let Some(rng) = dropout.as_deref_mut() {
                    o = tape.dropout(o, cfg.dropout_p, rng);
                }
                x = tape.add(x, o)?;

                // Feed-forward block (pre-norm).
                let h = tape.layer_norm(x, nodes.ln2_gain, nodes.ln2_bias)?;
                let f = tape.matmul(h, nodes.w1)?;
                let f = tape.gelu(f);
                let mut f = tape.matmul(f, nodes.w2)?;
                if let Some(rng) = dropout.as_deref_mut() {
                    f = tape.dropout(f, cfg.dropout_p, rng);
                }
                x = tape.add(x, f)?;
            }
            // layer_norm is row-wise, so norming just the [CLS] row
            // equals norming the whole sequence and then slicing
            let cls = tape.slice_rows(x, 0, 1)?;
            cls_rows.push(tape.layer_norm(cls, final_gain, final_bias)?);
        }
        tape.concat_rows(&cls_rows)
    }
}
