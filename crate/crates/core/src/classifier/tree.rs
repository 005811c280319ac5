//! CART decision tree with Gini impurity over dense real features.
//!
//! Split quality is compared exactly: for a fixed parent, maximizing the Gini
//! decrease is the same as maximizing
//! `(pl² + nl²) / l + (pr² + nr²) / r` over the child class counts, which is
//! a ratio of integers and can be ordered by cross-multiplication. Ties go to
//! the lowest feature index, then the lowest threshold.

use std::cmp::Ordering;

use rand::seq::index::sample;
use rand::Rng;

/// Gini impurity of a node holding `positive` of `total` samples.
pub fn gini(positive: usize, total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let p = positive as f64 / total as f64;
    1.0 - p * p - (1.0 - p) * (1.0 - p)
}

/// Parent impurity minus size-weighted child impurity.
pub fn gini_decrease(left: (usize, usize), right: (usize, usize)) -> f64 {
    let (lp, ln) = left;
    let (rp, rn) = right;
    let n = (ln + rn) as f64;
    gini(lp + rp, ln + rn) - (ln as f64 / n) * gini(lp, ln) - (rn as f64 / n) * gini(rp, rn)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Purity {
    num: u128,
    den: u128,
}

impl Purity {
    fn of(left: (usize, usize), right: (usize, usize)) -> Self {
        let sq = |pos: usize, n: usize| {
            let (p, q) = (pos as u128, (n - pos) as u128);
            p * p + q * q
        };
        let (l, r) = (left.1 as u128, right.1 as u128);
        Purity {
            num: sq(left.0, left.1) * r + sq(right.0, right.1) * l,
            den: l * r,
        }
    }
}

impl PartialOrd for Purity {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Purity {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.num * other.den).cmp(&(other.num * self.den))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    pub decrease: f64,
}

/// Best split of the samples at `indices` over the given features, or `None`
/// when every candidate feature is constant or no split leaves
/// `min_leaf` samples per side. `features` must be ascending.
pub fn best_split(
    x: &[Vec<f64>],
    y: &[bool],
    indices: &[usize],
    features: &[usize],
    min_leaf: usize,
) -> Option<Split> {
    let n = indices.len();
    let total_pos = indices.iter().filter(|&&i| y[i]).count();
    let mut best: Option<(Purity, Split)> = None;
    let mut column: Vec<(f64, bool)> = Vec::with_capacity(n);
    for &f in features {
        column.clear();
        column.extend(indices.iter().map(|&i| (x[i][f], y[i])));
        column.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut left_pos = 0;
        for cut in 1..n {
            left_pos += usize::from(column[cut - 1].1);
            if column[cut - 1].0 == column[cut].0 || cut < min_leaf || n - cut < min_leaf {
                continue;
            }
            let left = (left_pos, cut);
            let right = (total_pos - left_pos, n - cut);
            let score = Purity::of(left, right);
            if best.as_ref().is_none_or(|(b, _)| score > *b) {
                let threshold = column[cut - 1].0 + (column[cut].0 - column[cut - 1].0) / 2.0;
                best = Some((
                    score,
                    Split {
                        feature: f,
                        threshold,
                        decrease: gini_decrease(left, right),
                    },
                ));
            }
        }
    }
    best.map(|(_, s)| s)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Node {
    Leaf { positive: u32, total: u32 },
    Split { feature: u32, threshold: f64, left: u32, right: u32 },
}

/// One split decision, recorded while growing a tree.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitRecord {
    pub samples: Vec<usize>,
    pub candidates: Vec<usize>,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    pub(crate) nodes: Vec<Node>,
}

pub struct GrowParams {
    pub features_per_split: usize,
    pub min_samples_leaf: usize,
}

impl DecisionTree {
    pub fn fit<R: Rng>(x: &[Vec<f64>], y: &[bool], indices: &[usize], params: &GrowParams, rng: &mut R) -> Self {
        Self::grow(x, y, indices, params, rng, None)
    }

    /// Like [`DecisionTree::fit`], also returning every split decision.
    pub fn fit_traced<R: Rng>(
        x: &[Vec<f64>],
        y: &[bool],
        indices: &[usize],
        params: &GrowParams,
        rng: &mut R,
    ) -> (Self, Vec<SplitRecord>) {
        let mut trace = Vec::new();
        let tree = Self::grow(x, y, indices, params, rng, Some(&mut trace));
        (tree, trace)
    }

    fn grow<R: Rng>(
        x: &[Vec<f64>],
        y: &[bool],
        indices: &[usize],
        params: &GrowParams,
        rng: &mut R,
        mut trace: Option<&mut Vec<SplitRecord>>,
    ) -> Self {
        let d = x.first().map_or(0, Vec::len);
        let mut nodes = Vec::new();
        let mut stack: Vec<(usize, Vec<usize>)> = Vec::new();
        nodes.push(Node::Leaf { positive: 0, total: 0 });
        stack.push((0, indices.to_vec()));
        while let Some((slot, idx)) = stack.pop() {
            let positive = idx.iter().filter(|&&i| y[i]).count();
            let leaf = Node::Leaf {
                positive: positive as u32,
                total: idx.len() as u32,
            };
            if positive == 0 || positive == idx.len() || idx.len() < 2 * params.min_samples_leaf || d == 0 {
                nodes[slot] = leaf;
                continue;
            }
            let mut candidates = sample(rng, d, params.features_per_split.clamp(1, d)).into_vec();
            candidates.sort_unstable();
            let Some(split) = best_split(x, y, &idx, &candidates, params.min_samples_leaf) else {
                nodes[slot] = leaf;
                continue;
            };
            let (left, right): (Vec<usize>, Vec<usize>) =
                idx.iter().partition(|&&i| x[i][split.feature] <= split.threshold);
            if let Some(t) = trace.as_deref_mut() {
                t.push(SplitRecord {
                    samples: idx.clone(),
                    candidates,
                    split,
                });
            }
            let l = nodes.len();
            nodes.push(Node::Leaf { positive: 0, total: 0 });
            nodes.push(Node::Leaf { positive: 0, total: 0 });
            nodes[slot] = Node::Split {
                feature: split.feature as u32,
                threshold: split.threshold,
                left: l as u32,
                right: (l + 1) as u32,
            };
            // Right pushed first so the left subtree is grown (and consumes
            // randomness) first.
            stack.push((l + 1, right));
            stack.push((l, left));
        }
        DecisionTree { nodes }
    }

    /// Majority vote of the reached leaf; ties vote false.
    pub fn vote(&self, features: &[f64]) -> bool {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf { positive, total } => return 2 * positive > total,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if features[feature as usize] <= threshold {
                        left as usize
                    } else {
                        right as usize
                    }
                }
            }
        }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }
}
