//! Classical comparison system: TF-IDF word n-gram features with an
//! L2-regularized logistic-regression classifier.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Label};
use crate::error::{Error, Result};
use crate::text::tokenize_words;

/// Sparse feature row: (feature index, value), sorted by index.
pub type SparseRow = Vec<(u32, f64)>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfidfConfig {
    /// Inclusive n-gram order range.
    pub ngram_range: (usize, usize),
    /// Keep at most this many features, by document frequency.
    pub max_features: usize,
    /// Use 1 + ln(count) instead of the raw count as term frequency.
    pub sublinear_tf: bool,
}

impl Default for TfidfConfig {
    fn default() -> Self {
        Self { ngram_range: (1, 2), max_features: 50_000, sublinear_tf: false }
    }
}

/// Fitted TF-IDF featurizer. Feature order is deterministic: document
/// frequency descending, ties lexicographic.
#[derive(Debug, Clone, PartialEq)]
pub struct TfidfVectorizer {
    config: TfidfConfig,
    vocabulary: Vec<String>,
    index: HashMap<String, u32>,
    idf: Vec<f64>,
}

fn ngrams_of(text: &str, range: (usize, usize)) -> Vec<String> {
    let words = tokenize_words(text);
    let mut out = Vec::new();
    for n in range.0..=range.1 {
        if n == 0 || words.len() < n {
            continue;
        }
        for window in words.windows(n) {
            out.push(window.join(" "));
        }
    }
    out
}

impl TfidfVectorizer {
    pub fn config(&self) -> &TfidfConfig {
        &self.config
    }

    pub fn n_features(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn vocabulary(&self) -> &[String] {
        &self.vocabulary
    }

    pub fn idf(&self) -> &[f64] {
        &self.idf
    }

    /// Rebuild a vectorizer from its serialized parts.
    pub fn from_parts(config: TfidfConfig, vocabulary: Vec<String>, idf: Vec<f64>) -> Result<Self> {
        if vocabulary.len() != idf.len() {
            return Err(Error::Baseline(format!(
                "vocabulary/idf length mismatch: {} vs {}",
                vocabulary.len(),
                idf.len()
            )));
        }
        let index = vocabulary
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Ok(Self { config, vocabulary, index, idf })
    }

    /// Featurize texts; each row is L2-normalized (zero rows stay zero).
    pub fn transform<'a, I>(&self, texts: I) -> Vec<SparseRow>
    where
        I: IntoIterator<Item = &'a str>,
    {
        texts
            .into_iter()
            .map(|text| {
                let mut counts: HashMap<u32, usize> = HashMap::new();
                for gram in ngrams_of(text, self.config.ngram_range) {
                    if let Some(&i) = self.index.get(&gram) {
                        *counts.entry(i).or_insert(0) += 1;
                    }
                }
                let mut row: SparseRow = counts
                    .into_iter()
                    .map(|(i, count)| {
                        let tf = if self.config.sublinear_tf {
                            1.0 + (count as f64).ln()
                        } else {
                            count as f64
                        };
                        (i, tf * self.idf[i as usize])
                    })
                    .collect();
                row.sort_by_key(|&(i, _)| i);
                let norm = row.iter().map(|&(_, v)| v * v).sum::<f64>().sqrt();
                if norm > 0.0 {
                    for (_, v) in &mut row {
                        *v /= norm;
                    }
                }
                row
            })
            .collect()
    }
}

/// Fit the featurizer on a corpus: vocabulary = the `max_features` most
/// document-frequent n-grams; idf(t) = ln((1+N)/(1+df(t))) + 1.
pub fn tfidf_fit(corpus: &Corpus, config: TfidfConfig) -> Result<TfidfVectorizer> {
    if corpus.is_empty() {
        return Err(Error::Baseline("cannot fit TF-IDF on an empty corpus".into()));
    }
    if config.ngram_range.0 < 1 || config.ngram_range.0 > config.ngram_range.1 {
        return Err(Error::Baseline(format!(
            "bad ngram_range {:?}",
            config.ngram_range
        )));
    }
    let n_docs = corpus.len();
    let mut df: HashMap<String, usize> = HashMap::new();
    for sample in corpus.iter() {
        let mut grams = ngrams_of(&sample.text, config.ngram_range);
        grams.sort();
        grams.dedup();
        for gram in grams {
            *df.entry(gram).or_insert(0) += 1;
        }
    }
    let mut ranked: Vec<(String, usize)> = df.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(config.max_features);

    let vocabulary: Vec<String> = ranked.iter().map(|(t, _)| t.clone()).collect();
    let idf: Vec<f64> = ranked
        .iter()
        .map(|&(_, df)| ((1 + n_docs) as f64 / (1 + df) as f64).ln() + 1.0)
        .collect();
    TfidfVectorizer::from_parts(config, vocabulary, idf)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRegConfig {
    /// L2 strength on the weights (bias unregularized).
    pub lambda: f64,
    pub max_iters: usize,
    /// Stop when the full gradient norm drops below this.
    pub tol: f64,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        Self { lambda: 1e-4, max_iters: 500, tol: 1e-8 }
    }
}

/// Trained binary logistic-regression model.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRegModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LogRegModel {
    pub fn score(&self, row: &SparseRow) -> f64 {
        let mut z = self.bias;
        for &(i, v) in row {
            z += self.weights[i as usize] * v;
        }
        z
    }

    /// p(machine) = sigmoid(w·x + b).
    pub fn prob(&self, row: &SparseRow) -> f64 {
        sigmoid(self.score(row))
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// ln(1 + e^z) without overflow.
fn log1p_exp(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Mean logistic loss + (λ/2)‖w‖² and its gradient.
fn loss_and_grad(
    weights: &[f64],
    bias: f64,
    rows: &[SparseRow],
    labels: &[u32],
    lambda: f64,
) -> (f64, Vec<f64>, f64) {
    let n = rows.len() as f64;
    let mut loss = 0.0;
    let mut grad_w = vec![0.0; weights.len()];
    let mut grad_b = 0.0;
    for (row, &y) in rows.iter().zip(labels) {
        let mut z = bias;
        for &(i, v) in row {
            z += weights[i as usize] * v;
        }
        // -[y ln p + (1-y) ln(1-p)] = log1p_exp(z) - y z
        loss += log1p_exp(z) - f64::from(y) * z;
        let residual = sigmoid(z) - f64::from(y);
        for &(i, v) in row {
            grad_w[i as usize] += residual * v;
        }
        grad_b += residual;
    }
    loss /= n;
    grad_b /= n;
    let mut reg = 0.0;
    for (gw, &w) in grad_w.iter_mut().zip(weights) {
        *gw = *gw / n + lambda * w;
        reg += w * w;
    }
    loss += 0.5 * lambda * reg;
    (loss, grad_w, grad_b)
}

/// Norm of the regularized-loss gradient at a model — the optimality
/// certificate for a trained model.
pub fn logreg_gradient_norm(
    model: &LogRegModel,
    rows: &[SparseRow],
    labels: &[u32],
    lambda: f64,
) -> f64 {
    let (_, gw, gb) = loss_and_grad(&model.weights, model.bias, rows, labels, lambda);
    (gw.iter().map(|g| g * g).sum::<f64>() + gb * gb).sqrt()
}

/// Full-batch gradient descent with backtracking line search. The loss
/// never increases across accepted steps; training stops when the
/// gradient norm falls below `tol` or after `max_iters` steps.
pub fn logreg_train(
    rows: &[SparseRow],
    labels: &[u32],
    n_features: usize,
    config: &LogRegConfig,
) -> Result<LogRegModel> {
    if rows.len() != labels.len() {
        return Err(Error::Baseline(format!(
            "length mismatch: {} rows vs {} labels",
            rows.len(),
            labels.len()
        )));
    }
    if rows.is_empty() {
        return Err(Error::Baseline("empty training set".into()));
    }
    if let Some(&(i, _)) = rows.iter().flatten().find(|&&(i, _)| i as usize >= n_features) {
        return Err(Error::Baseline(format!(
            "feature index {i} out of range for {n_features} features"
        )));
    }
    let has0 = labels.contains(&0);
    let has1 = labels.contains(&1);
    if !(has0 && has1) {
        return Err(Error::Baseline("training labels contain a single class".into()));
    }

    let mut weights = vec![0.0; n_features];
    let mut bias = 0.0;
    let mut step = 1.0f64;
    const ARMIJO: f64 = 1e-4;

    let (mut loss, mut grad_w, mut grad_b) =
        loss_and_grad(&weights, bias, rows, labels, config.lambda);
    for _ in 0..config.max_iters {
        let grad_sq: f64 = grad_w.iter().map(|g| g * g).sum::<f64>() + grad_b * grad_b;
        if grad_sq.sqrt() < config.tol {
            break;
        }
        // Backtrack until the Armijo condition holds.
        let mut accepted = false;
        for _ in 0..60 {
            let cand_w: Vec<f64> =
                weights.iter().zip(&grad_w).map(|(&w, &g)| w - step * g).collect();
            let cand_b = bias - step * grad_b;
            let (cand_loss, cand_gw, cand_gb) =
                loss_and_grad(&cand_w, cand_b, rows, labels, config.lambda);
            if cand_loss <= loss - ARMIJO * step * grad_sq {
                weights = cand_w;
                bias = cand_b;
                loss = cand_loss;
                grad_w = cand_gw;
                grad_b = cand_gb;
                // Allow the step to grow again after a success.
                step *= 1.25;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break; // step underflowed: numerically at an optimum
        }
    }
    if weights.iter().any(|w| !w.is_finite()) || !bias.is_finite() {
        return Err(Error::Baseline("training produced non-finite weights".into()));
    }
    Ok(LogRegModel { weights, bias })
}

/// Featurizer + classifier trained together.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineModel {
    pub vectorizer: TfidfVectorizer,
    pub logreg: LogRegModel,
    pub logreg_config: LogRegConfig,
}

/// Fit TF-IDF on the corpus and train logistic regression on the
/// binary labels.
pub fn train_baseline(
    corpus: &Corpus,
    tfidf_config: TfidfConfig,
    logreg_config: LogRegConfig,
) -> Result<BaselineModel> {
    let vectorizer = tfidf_fit(corpus, tfidf_config)?;
    let rows = vectorizer.transform(corpus.iter().map(|s| s.text.as_str()));
    let labels: Vec<u32> = corpus.iter().map(|s| u32::from(s.label.as_u8())).collect();
    let logreg = logreg_train(&rows, &labels, vectorizer.n_features(), &logreg_config)?;
    Ok(BaselineModel { vectorizer, logreg, logreg_config })
}

impl BaselineModel {
    /// p(machine) for each text.
    pub fn predict_proba<'a, I>(&self, texts: I) -> Vec<f64>
    where
        I: IntoIterator<Item = &'a str>,
    {
        self.vectorizer
            .transform(texts)
            .iter()
            .map(|row| self.logreg.prob(row))
            .collect()
    }

    /// Hard labels at a decision threshold: machine iff p ≥ τ.
    pub fn predict<'a, I>(&self, texts: I, threshold: f64) -> Vec<Label>
    where
        I: IntoIterator<Item = &'a str>,
    {
        self.predict_proba(texts)
            .into_iter()
            .map(|p| if p >= threshold { Label::Machine } else { Label::Human })
            .collect()
    }
}
