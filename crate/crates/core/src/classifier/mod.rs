//! Random-forest classification of mutant embeddings.

mod cv;
mod metrics;
mod tree;

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;

pub use cv::{assign_folds, cross_validate, CvPrediction, CvReport, FoldReport};
pub use metrics::{evaluate, ConfusionMatrix, Degenerate, MetricsReport};
pub use tree::{best_split, gini, gini_decrease, DecisionTree, GrowParams, Node, Split, SplitRecord};

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("training labels contain a single class")]
    DegenerateDataset,
    #[error("expected {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("{predictions} predictions for {truths} truths")]
    LengthMismatch { predictions: usize, truths: usize },
    #[error("nothing to evaluate")]
    EmptyEvaluation,
    #[error("need at least {k} groups, found {groups}")]
    TooFewGroups { groups: usize, k: usize },
    #[error("invalid forest config: {0}")]
    Config(String),
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub mutant_id: String,
    pub group_id: String,
    pub features: Vec<f64>,
    pub truth: bool,
}

fn default_trees() -> usize {
    100
}

fn default_min_leaf() -> usize {
    1
}

fn default_threshold() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    #[serde(default = "default_trees")]
    pub n_trees: usize,
    /// Defaults to `floor(sqrt(d))`.
    #[serde(default)]
    pub features_per_split: Option<usize>,
    #[serde(default = "default_min_leaf")]
    pub min_samples_leaf: usize,
    #[serde(default)]
    pub seed: u64,
    /// Score at or above which a sample is predicted positive.
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default)]
    pub allow_degenerate: bool,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: default_trees(),
            features_per_split: None,
            min_samples_leaf: default_min_leaf(),
            seed: 0,
            threshold: default_threshold(),
            allow_degenerate: false,
        }
    }
}

impl ForestConfig {
    pub fn features_for(&self, d: usize) -> Result<usize, ClassifierError> {
        let f = self
            .features_per_split
            .unwrap_or_else(|| ((d as f64).sqrt().floor() as usize).max(1));
        if f < 1 || f > d.max(1) {
            return Err(ClassifierError::Config(format!(
                "features_per_split {f} outside 1..={d}"
            )));
        }
        Ok(f)
    }
}

/// Mix a master seed with an index (splitmix64 finalizer).
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    pub trees: Vec<DecisionTree>,
    pub n_features: usize,
    pub threshold: f64,
}

type Xy = (Vec<Vec<f64>>, Vec<bool>, usize);

fn split_xy(data: &[LabeledSample]) -> Result<Xy, ClassifierError> {
    let d = data.first().map_or(0, |s| s.features.len());
    if let Some(bad) = data.iter().find(|s| s.features.len() != d) {
        return Err(ClassifierError::DimensionMismatch {
            expected: d,
            got: bad.features.len(),
        });
    }
    Ok((
        data.iter().map(|s| s.features.clone()).collect(),
        data.iter().map(|s| s.truth).collect(),
        d,
    ))
}

/// Bootstrap-aggregated Gini trees. Each tree draws its own seed from
/// `cfg.seed` and its index, so the forest is identical however the trees
/// are scheduled.
pub fn train_forest(data: &[LabeledSample], cfg: &ForestConfig, exec: Execution) -> Result<ForestModel, ClassifierError> {
    if data.len() < 2 {
        return Err(ClassifierError::TooFewSamples(data.len()));
    }
    if cfg.n_trees == 0 {
        return Err(ClassifierError::Config("n_trees must be at least 1".into()));
    }
    let (x, y, d) = split_xy(data)?;
    let positives = y.iter().filter(|&&t| t).count();
    if (positives == 0 || positives == y.len()) && !cfg.allow_degenerate {
        return Err(ClassifierError::DegenerateDataset);
    }
    let params = GrowParams {
        features_per_split: cfg.features_for(d)?,
        min_samples_leaf: cfg.min_samples_leaf.max(1),
    };
    let n = x.len();
    let trees = exec.map_range(cfg.n_trees, |t| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, t as u64));
        let bootstrap: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
        DecisionTree::fit(&x, &y, &bootstrap, &params, &mut rng)
    });
    Ok(ForestModel {
        trees,
        n_features: d,
        threshold: cfg.threshold,
    })
}

impl ForestModel {
    /// Fraction of trees voting positive, and the thresholded label.
    pub fn predict(&self, features: &[f64]) -> Result<(bool, f64), ClassifierError> {
        if features.len() != self.n_features {
            return Err(ClassifierError::DimensionMismatch {
                expected: self.n_features,
                got: features.len(),
            });
        }
        let votes = self.trees.iter().filter(|t| t.vote(features)).count();
        let score = votes as f64 / self.trees.len() as f64;
        Ok((score >= self.threshold, score))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), ClassifierError> {
        w.write_all(MODEL_MAGIC)?;
        w.write_all(&MODEL_VERSION.to_le_bytes())?;
        w.write_all(&(self.n_features as u32).to_le_bytes())?;
        w.write_all(&self.threshold.to_le_bytes())?;
        w.write_all(&(self.trees.len() as u32).to_le_bytes())?;
        for tree in &self.trees {
            w.write_all(&(tree.nodes.len() as u32).to_le_bytes())?;
            for node in &tree.nodes {
                match *node {
                    Node::Leaf { positive, total } => {
                        w.write_all(&[0])?;
                        w.write_all(&positive.to_le_bytes())?;
                        w.write_all(&total.to_le_bytes())?;
                    }
                    Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    } => {
                        w.write_all(&[1])?;
                        w.write_all(&feature.to_le_bytes())?;
                        w.write_all(&threshold.to_le_bytes())?;
                        w.write_all(&left.to_le_bytes())?;
                        w.write_all(&right.to_le_bytes())?;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, ClassifierError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MODEL_MAGIC {
            return Err(ClassifierError::Format("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != MODEL_VERSION {
            return Err(ClassifierError::Format(format!("unsupported version {version}")));
        }
        let n_features = read_u32(&mut r)? as usize;
        let threshold = read_f64(&mut r)?;
        let n_trees = read_u32(&mut r)? as usize;
        let mut trees = Vec::with_capacity(n_trees);
        for _ in 0..n_trees {
            let n_nodes = read_u32(&mut r)? as usize;
            let mut nodes = Vec::with_capacity(n_nodes);
            for _ in 0..n_nodes {
                let mut tag = [0u8];
                r.read_exact(&mut tag)?;
                nodes.push(match tag[0] {
                    0 => Node::Leaf {
                        positive: read_u32(&mut r)?,
                        total: read_u32(&mut r)?,
                    },
                    1 => Node::Split {
                        feature: read_u32(&mut r)?,
                        threshold: read_f64(&mut r)?,
                        left: read_u32(&mut r)?,
                        right: read_u32(&mut r)?,
                    },
                    t => return Err(ClassifierError::Format(format!("bad node tag {t}"))),
                });
            }
            let in_range = |i: u32| (i as usize) < n_nodes;
            let ok = nodes.iter().all(|n| match *n {
                Node::Leaf { .. } => true,
                Node::Split { feature, left, right, .. } => {
                    (feature as usize) < n_features && in_range(left) && in_range(right)
                }
            });
            if nodes.is_empty() || !ok {
                return Err(ClassifierError::Format("corrupt tree".into()));
            }
            trees.push(DecisionTree { nodes });
        }
        if trees.is_empty() {
            return Err(ClassifierError::Format("model has no trees".into()));
        }
        Ok(ForestModel {
            trees,
            n_features,
            threshold,
        })
    }
}

const MODEL_MAGIC: &[u8; 4] = b"MMRF";
const MODEL_VERSION: u32 = 1;

fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> std::io::Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}
