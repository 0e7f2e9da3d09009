//! Representation analysis: PCA of [CLS] vectors or head logits,
//! silhouette scoring of the resulting clusters, and the scatter-table
//! export behind the projection plots.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Label};
use crate::error::{Error, Result};
use crate::multitask::MtlModel;
use crate::numerics::params::ParamStore;
use crate::trainer::Checkpoint;

/// Convergence threshold for the off-diagonal norm in the Jacobi sweep,
/// relative to the matrix scale.
const JACOBI_TOL: f64 = 1e-14;
const JACOBI_MAX_SWEEPS: usize = 64;

/// A fitted PCA: mean, top-k orthonormal axes, and per-axis
/// explained-variance ratios (non-increasing).
#[derive(Debug, Clone)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    pub axes: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations. Returns
/// (eigenvalues, eigenvectors as rows), unsorted.
fn jacobi_eigen(matrix: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let d = matrix.len();
    let mut a: Vec<Vec<f64>> = matrix.to_vec();
    let mut v = vec![vec![0.0; d]; d];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    let scale: f64 = matrix
        .iter()
        .flat_map(|r| r.iter())
        .map(|&x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(f64::MIN_POSITIVE);
    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..d)
            .flat_map(|p| ((p + 1)..d).map(move |q| (p, q)))
            .map(|(p, q)| a[p][q] * a[p][q])
            .sum::<f64>()
            .sqrt();
        if off <= JACOBI_TOL * scale {
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                if a[p][q] == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for i in 0..d {
                    let aip = a[i][p];
                    let aiq = a[i][q];
                    a[i][p] = c * aip - s * aiq;
                    a[i][q] = s * aip + c * aiq;
                }
                for j in 0..d {
                    let apj = a[p][j];
                    let aqj = a[q][j];
                    a[p][j] = c * apj - s * aqj;
                    a[q][j] = s * apj + c * aqj;
                }
                for row in v.iter_mut() {
                    let vp = row[p];
                    let vq = row[q];
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let eigenvalues: Vec<f64> = (0..d).map(|i| a[i][i]).collect();
    // eigenvector i = column i of v, returned as a row
    let eigenvectors: Vec<Vec<f64>> =
        (0..d).map(|i| (0..d).map(|r| v[r][i]).collect()).collect();
    (eigenvalues, eigenvectors)
}

/// Fit PCA on `vectors` (covariance divisor n). Axes are ordered by
/// decreasing eigenvalue; each axis is flipped so its largest-magnitude
/// coordinate is positive, which makes projections reproducible.
pub fn pca_fit(vectors: &[Vec<f64>], k: usize) -> Result<PcaModel> {
    let n = vectors.len();
    if n < 2 {
        return Err(Error::Analysis(format!("PCA needs at least 2 vectors, got {n}")));
    }
    let d = vectors[0].len();
    if vectors.iter().any(|v| v.len() != d) {
        return Err(Error::Analysis("PCA input rows have mixed widths".into()));
    }
    if k == 0 || k > n.min(d) {
        return Err(Error::Analysis(format!("k = {k} outside 1..=min(n, d) = {}", n.min(d))));
    }
    let mut mean = vec![0.0; d];
    for v in vectors {
        for (m, &x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut cov = vec![vec![0.0; d]; d];
    for v in vectors {
        let centered: Vec<f64> = v.iter().zip(&mean).map(|(&x, &m)| x - m).collect();
        for i in 0..d {
            for j in i..d {
                cov[i][j] += centered[i] * centered[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            cov[i][j] /= n as f64;
            cov[j][i] = cov[i][j];
        }
    }
    let total_variance: f64 = (0..d).map(|i| cov[i][i]).sum();
    let mean_sq: f64 = mean.iter().map(|&m| m * m).sum();
    if total_variance <= 1e-15 * (1.0 + mean_sq) {
        return Err(Error::Analysis("zero-variance input, ratios undefined".into()));
    }

    let (eigenvalues, eigenvectors) = jacobi_eigen(&cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| eigenvalues[j].total_cmp(&eigenvalues[i]));
    let mut axes = Vec::with_capacity(k);
    let mut top_values = Vec::with_capacity(k);
    for &i in order.iter().take(k) {
        let mut axis = eigenvectors[i].clone();
        let dominant = axis
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .map(|(idx, _)| idx)
            .expect("d > 0");
        if axis[dominant] < 0.0 {
            for x in &mut axis {
                *x = -*x;
            }
        }
        axes.push(axis);
        top_values.push(eigenvalues[i].max(0.0));
    }
    let explained_variance_ratio: Vec<f64> =
        top_values.iter().map(|&l| l / total_variance).collect();
    Ok(PcaModel { mean, axes, eigenvalues: top_values, explained_variance_ratio })
}

/// Project vectors onto the fitted axes: `(x − mean) · axesᵀ`.
pub fn pca_project(model: &PcaModel, vectors: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let d = model.mean.len();
    vectors
        .iter()
        .map(|v| {
            if v.len() != d {
                return Err(Error::Analysis(format!(
                    "cannot project a {}-wide vector with a {d}-wide PCA",
                    v.len()
                )));
            }
            Ok(model
                .axes
                .iter()
                .map(|axis| {
                    v.iter().zip(&model.mean).zip(axis).map(|((&x, &m), &a)| (x - m) * a).sum()
                })
                .collect())
        })
        .collect()
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Mean silhouette score with Euclidean distance. Clusters with a single
/// point score 0; fewer than two clusters is an error.
pub fn silhouette<K: Ord>(points: &[Vec<f64>], labels: &[K]) -> Result<f64> {
    if points.len() != labels.len() {
        return Err(Error::Analysis(format!(
            "{} points but {} labels",
            points.len(),
            labels.len()
        )));
    }
    let mut clusters: BTreeMap<&K, Vec<usize>> = BTreeMap::new();
    for (i, key) in labels.iter().enumerate() {
        clusters.entry(key).or_default().push(i);
    }
    if clusters.len() < 2 {
        return Err(Error::Analysis("silhouette needs at least two clusters".into()));
    }
    let members: Vec<&Vec<usize>> = clusters.values().collect();
    let mut total = 0.0;
    for (c, own) in members.iter().enumerate() {
        for &i in own.iter() {
            if own.len() == 1 {
                continue; // singleton scores 0
            }
            let a: f64 = own
                .iter()
                .filter(|&&j| j != i)
                .map(|&j| euclidean(&points[i], &points[j]))
                .sum::<f64>()
                / (own.len() - 1) as f64;
            let b = members
                .iter()
                .enumerate()
                .filter(|(o, _)| *o != c)
                .map(|(_, other)| {
                    other.iter().map(|&j| euclidean(&points[i], &points[j])).sum::<f64>()
                        / other.len() as f64
                })
                .fold(f64::INFINITY, f64::min);
            let denom = a.max(b);
            if denom > 0.0 {
                total += (b - a) / denom;
            }
        }
    }
    Ok(total / points.len() as f64)
}

/// What to extract per sample when embedding a corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedTarget {
    /// The shared encoder's [CLS] vector.
    Cls,
    /// Logits of the named multiclass (or binary) head.
    HeadLogits(String),
}

/// Eval-mode vectors for every corpus sample, aligned with corpus order.
pub fn embed_corpus(
    checkpoint: &Checkpoint,
    corpus: &Corpus,
    target: &EmbedTarget,
) -> Result<Vec<Vec<f64>>> {
    let model = checkpoint.model()?;
    embed_corpus_with(&model, &checkpoint.params, corpus, target)
}

/// As [`embed_corpus`] but with an already-built model, avoiding repeated
/// reconstruction in sweeps.
pub fn embed_corpus_with(
    model: &MtlModel,
    store: &ParamStore,
    corpus: &Corpus,
    target: &EmbedTarget,
) -> Result<Vec<Vec<f64>>> {
    let texts: Vec<&str> = corpus.iter().map(|s| s.text.as_str()).collect();
    match target {
        EmbedTarget::Cls => model.embed_cls(store, &texts),
        EmbedTarget::HeadLogits(name) => model.embed_head_logits(store, &texts, name),
    }
}

/// One scatter point of the projection plot.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionRow {
    pub id: String,
    pub pc1: f64,
    pub pc2: f64,
    pub source: String,
    pub sub_source: String,
    pub label: Label,
}

/// The 2-D projection of a corpus, ready for CSV/plot export.
#[derive(Debug, Clone, Default)]
pub struct ProjectionTable {
    pub rows: Vec<ProjectionRow>,
}

impl ProjectionTable {
    /// Pair corpus metadata with ≥2-wide projected coordinates.
    pub fn build(corpus: &Corpus, coords: &[Vec<f64>]) -> Result<Self> {
        if corpus.len() != coords.len() {
            return Err(Error::Analysis(format!(
                "{} samples but {} coordinate rows",
                corpus.len(),
                coords.len()
            )));
        }
        let rows = corpus
            .iter()
            .zip(coords)
            .map(|(s, c)| {
                if c.len() < 2 {
                    return Err(Error::Analysis("projection rows need at least 2 columns".into()));
                }
                Ok(ProjectionRow {
                    id: s.id.clone(),
                    pc1: c[0],
                    pc2: c[1],
                    source: s.source.name().to_string(),
                    sub_source: s.sub_source.clone(),
                    label: s.label,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { rows })
    }

    /// CSV layout: `id,pc1,pc2,source,sub_source,label`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,pc1,pc2,source,sub_source,label\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.id, r.pc1, r.pc2, r.source, r.sub_source, r.label
            ));
        }
        out
    }
}
