//! Synthetic labeled datasets for the desk-scale trainer. Dense kinds emit
//! feature vectors; `SparseTokens` emits integer id sequences to exercise the
//! embedding lookup path. Labels are assigned round-robin before shuffling,
//! so class counts are balanced by construction.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::estimator::gaussian;
use crate::hashing::mix_seed;

/// Tokens per sample emitted by the sparse-tokens generator.
pub const TOKEN_SEQ_LEN: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetKind {
    /// Well-separated Gaussian blobs, one per class.
    Clusters,
    /// Two interleaved half-moons in the first two dimensions.
    Moons,
    /// Per-class token bands over the vocabulary.
    SparseTokens,
}

impl DatasetKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "clusters" => Ok(Self::Clusters),
            "moons" => Ok(Self::Moons),
            "sparse_tokens" => Ok(Self::SparseTokens),
            other => Err(Error::Config(format!("unknown dataset kind '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Clusters => "clusters",
            Self::Moons => "moons",
            Self::SparseTokens => "sparse_tokens",
        }
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub kind: DatasetKind,
    /// Dense features, `size × dim` (dense kinds only).
    pub features: Option<Array2<f64>>,
    /// Token id sequences (sparse kind only).
    pub tokens: Option<Vec<Vec<u32>>>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    /// Feature dimension for dense kinds; vocabulary size for tokens.
    pub dim: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Deterministic shuffled split into (train, test).
    pub fn split(&self, test_fraction: f64, seed: u64) -> (Dataset, Dataset) {
        let n = self.len();
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha12Rng::seed_from_u64(mix_seed(seed, 0x5b117));
        for i in (1..n).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }
        let test_n = ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1);
        let (test_idx, train_idx) = order.split_at(test_n);
        (self.subset(train_idx), self.subset(test_idx))
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let features = self.features.as_ref().map(|f| {
            let mut out = Array2::zeros((indices.len(), self.dim));
            for (r, &i) in indices.iter().enumerate() {
                out.row_mut(r).assign(&f.row(i));
            }
            out
        });
        let tokens = self
            .tokens
            .as_ref()
            .map(|t| indices.iter().map(|&i| t[i].clone()).collect());
        Dataset {
            kind: self.kind,
            features,
            tokens,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            dim: self.dim,
        }
    }
}

/// Generates a reproducible labeled dataset. `dim` is the feature dimension
/// for dense kinds and the vocabulary size for `SparseTokens`.
pub fn synth_dataset(
    kind: DatasetKind,
    size: usize,
    dim: usize,
    num_classes: usize,
    seed: u64,
) -> Result<Dataset> {
    if size == 0 || num_classes < 2 || dim == 0 {
        return Err(Error::Config(
            "need size ≥ 1, dim ≥ 1 and at least two classes".into(),
        ));
    }
    if kind == DatasetKind::Moons && (num_classes != 2 || dim < 2) {
        return Err(Error::Config(
            "moons is a 2-class dataset with dim ≥ 2".into(),
        ));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(mix_seed(seed, kind.name().len() as u64));

    // Round-robin labels, then one shuffle: balanced within one sample.
    let mut labels: Vec<usize> = (0..size).map(|i| i % num_classes).collect();
    for i in (1..size).rev() {
        labels.swap(i, rng.gen_range(0..=i));
    }

    match kind {
        DatasetKind::Clusters => {
            let means = cluster_means(&mut rng, num_classes, dim);
            let mut features = Array2::zeros((size, dim));
            for (r, &label) in labels.iter().enumerate() {
                for d in 0..dim {
                    features[[r, d]] = means[label][d] + 0.5 * gaussian(&mut rng);
                }
            }
            Ok(Dataset {
                kind,
                features: Some(features),
                tokens: None,
                labels,
                num_classes,
                dim,
            })
        }
        DatasetKind::Moons => {
            let mut features = Array2::zeros((size, dim));
            for (r, &label) in labels.iter().enumerate() {
                let t = rng.gen::<f64>() * std::f64::consts::PI;
                let (mut u, mut v) = if label == 0 {
                    (t.cos(), t.sin())
                } else {
                    (1.0 - t.cos(), 0.5 - t.sin())
                };
                u += 0.1 * gaussian(&mut rng);
                v += 0.1 * gaussian(&mut rng);
                features[[r, 0]] = u;
                features[[r, 1]] = v;
            }
            Ok(Dataset {
                kind,
                features: Some(features),
                tokens: None,
                labels,
                num_classes,
                dim,
            })
        }
        DatasetKind::SparseTokens => {
            if dim < num_classes * 2 {
                return Err(Error::Config(format!(
                    "vocabulary of {dim} too small for {num_classes} token bands"
                )));
            }
            let band = dim / num_classes;
            let tokens: Vec<Vec<u32>> = labels
                .iter()
                .map(|&label| {
                    (0..TOKEN_SEQ_LEN)
                        .map(|_| {
                            // 90% from the class band, 10% uniform noise.
                            if rng.gen::<f64>() < 0.9 {
                                (label * band + rng.gen_range(0..band)) as u32
                            } else {
                                rng.gen_range(0..dim) as u32
                            }
                        })
                        .collect()
                })
                .collect();
            Ok(Dataset {
                kind,
                features: None,
                tokens: Some(tokens),
                labels,
                num_classes,
                dim,
            })
        }
    }
}

/// Class means of norm 3, re-drawn until pairwise distances are ≥ 3 so the
/// classes stay linearly separable at noise σ = 0.5.
fn cluster_means<R: Rng>(rng: &mut R, num_classes: usize, dim: usize) -> Vec<Vec<f64>> {
    loop {
        let means: Vec<Vec<f64>> = (0..num_classes)
            .map(|_| {
                let mut v: Vec<f64> = (0..dim).map(|_| gaussian(rng)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                v.iter_mut().for_each(|x| *x *= 3.0 / norm);
                v
            })
            .collect();
        let mut ok = true;
        'outer: for a in 0..num_classes {
            for b in (a + 1)..num_classes {
                let d2: f64 = means[a]
                    .iter()
                    .zip(&means[b])
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum();
                if d2 < 9.0 {
                    ok = false;
                    break 'outer;
                }
            }
        }
        if ok {
            return means;
        }
    }
}
