//! The hybrid pipeline: 512-dim features from the VGG16 tap layer feed a
//! gradient-boosted decision-tree classifier with a binary-logistic
//! objective (second-order boosting, exact greedy splits).

use crate::backbones::ModelHandle;
use crate::nn::Mode;
use crate::par;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub matrix: Vec<Vec<f32>>,
    /// Backbone id + tap-layer description.
    pub extractor: String,
    pub sample_ids: Vec<String>,
}

impl FeatureMatrix {
    pub fn width(&self) -> usize {
        self.matrix.first().map(|r| r.len()).unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GBDTParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for GBDTParams {
    fn default() -> Self {
        GBDTParams { n_trees: 100, max_depth: 6, learning_rate: 0.3, seed: 7 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum TreeNode {
    Leaf { value: f64 },
    Split { feature: usize, threshold: f32, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Tree {
    nodes: Vec<TreeNode>,
}

impl Tree {
    fn predict(&self, row: &[f32]) -> f64 {
        let mut idx = 0;
        loop {
            match &self.nodes[idx] {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Split { feature, threshold, left, right } => {
                    idx = if row[*feature] < *threshold { *left } else { *right };
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GBDTModel {
    pub params: GBDTParams,
    pub n_features: usize,
    base_score: f64,
    trees: Vec<Tree>,
}

#[derive(Debug, thiserror::Error)]
pub enum GbdtError {
    #[error("single class: training labels must contain both classes")]
    SingleClass,
    #[error("non-finite feature at row {row}, column {col}")]
    NonFiniteFeature { row: usize, col: usize },
    #[error("feature width mismatch: model expects {expected}, got {got}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("empty feature matrix")]
    Empty,
}

/// Per-sample vector from the model's tap layer (for VGG16: the
/// global-max-pooled final conv block, 512-dim), order-preserving.
pub fn extract_features(model: &ModelHandle, samples: &[Tensor], ids: &[String]) -> FeatureMatrix {
    assert_eq!(samples.len(), ids.len());
    let tap = model.feature_tap;
    let matrix = par::map_ordered(samples, |px| {
        let acts = model.graph.forward_to(tap, px, Mode::Eval);
        acts.node_output(tap).data.clone()
    });
    FeatureMatrix {
        matrix,
        extractor: format!("{}:{}", model.spec.id.token(), model.graph.nodes[tap].name),
        sample_ids: ids.to_vec(),
    }
}

const LAMBDA: f64 = 1.0;

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Fit by second-order boosting: each round builds one depth-limited tree
/// on the gradient/hessian of the logistic loss using exact greedy splits.
/// Fully deterministic given the inputs (the seed is recorded, not used for
/// subsampling: there is none).
pub fn fit_gbdt(features: &FeatureMatrix, labels: &[f32], params: &GBDTParams) -> Result<GBDTModel, GbdtError> {
    let n = features.matrix.len();
    assert_eq!(n, labels.len(), "features and labels must align");
    if n == 0 {
        return Err(GbdtError::Empty);
    }
    let width = features.matrix[0].len();
    for (ri, row) in features.matrix.iter().enumerate() {
        if row.len() != width {
            return Err(GbdtError::WidthMismatch { expected: width, got: row.len() });
        }
        if let Some(ci) = row.iter().position(|v| !v.is_finite()) {
            return Err(GbdtError::NonFiniteFeature { row: ri, col: ci });
        }
    }
    let positives = labels.iter().filter(|&&y| y >= 0.5).count();
    if positives == 0 || positives == n {
        return Err(GbdtError::SingleClass);
    }

    // Pre-sorted feature index lists shared across rounds.
    let sorted: Vec<Vec<u32>> = (0..width)
        .map(|f| {
            let mut idx: Vec<u32> = (0..n as u32).collect();
            idx.sort_by(|&a, &b| {
                features.matrix[a as usize][f]
                    .partial_cmp(&features.matrix[b as usize][f])
                    .unwrap()
                    .then(a.cmp(&b))
            });
            idx
        })
        .collect();

    let mut scores = vec![0.0f64; n];
    let mut trees = Vec::with_capacity(params.n_trees);
    for _ in 0..params.n_trees {
        let grad: Vec<f64> = scores
            .iter()
            .zip(labels)
            .map(|(&s, &y)| sigmoid(s) - y as f64)
            .collect();
        let hess: Vec<f64> = scores
            .iter()
            .map(|&s| {
                let p = sigmoid(s);
                p * (1.0 - p)
            })
            .collect();
        let mut tree = Tree { nodes: Vec::new() };
        let members: Vec<u32> = (0..n as u32).collect();
        grow(
            &mut tree,
            features,
            &sorted,
            &grad,
            &hess,
            members,
            params.max_depth,
        );
        for (i, s) in scores.iter_mut().enumerate() {
            *s += params.learning_rate * tree.predict(&features.matrix[i]);
        }
        trees.push(tree);
    }
    Ok(GBDTModel { params: *params, n_features: width, base_score: 0.0, trees })
}

/// Recursively grow one node; returns its index in tree.nodes.
fn grow(
    tree: &mut Tree,
    features: &FeatureMatrix,
    sorted: &[Vec<u32>],
    grad: &[f64],
    hess: &[f64],
    members: Vec<u32>,
    depth_left: usize,
) -> usize {
    let g_total: f64 = members.iter().map(|&i| grad[i as usize]).sum();
    let h_total: f64 = members.iter().map(|&i| hess[i as usize]).sum();
    let leaf = |tree: &mut Tree| {
        tree.nodes.push(TreeNode::Leaf { value: -g_total / (h_total + LAMBDA) });
        tree.nodes.len() - 1
    };
    if depth_left == 0 || members.len() < 2 {
        return leaf(tree);
    }

    // Exact greedy: scan every feature's sorted order restricted to this
    // node's members; gain per the second-order split criterion.
    let in_node = {
        let mut mask = vec![false; grad.len()];
        for &i in &members {
            mask[i as usize] = true;
        }
        mask
    };
    let parent_score = g_total * g_total / (h_total + LAMBDA);
    let mut best: Option<(f64, usize, f32)> = None;
    for (f, order) in sorted.iter().enumerate() {
        let mut gl = 0.0f64;
        let mut hl = 0.0f64;
        let mut prev: Option<f32> = None;
        for &i in order.iter().filter(|&&i| in_node[i as usize]) {
            let v = features.matrix[i as usize][f];
            if let Some(pv) = prev {
                if v > pv {
                    let gr = g_total - gl;
                    let hr = h_total - hl;
                    let gain = gl * gl / (hl + LAMBDA) + gr * gr / (hr + LAMBDA) - parent_score;
                    let threshold = pv + (v - pv) / 2.0;
                    if gain > 1e-12 && best.map(|(bg, _, _)| gain > bg).unwrap_or(true) {
                        best = Some((gain, f, threshold));
                    }
                }
            }
            gl += grad[i as usize];
            hl += hess[i as usize];
            prev = Some(v);
        }
    }
    let Some((_, feature, threshold)) = best else {
        return leaf(tree);
    };
    let (left_m, right_m): (Vec<u32>, Vec<u32>) = members
        .iter()
        .partition(|&&i| features.matrix[i as usize][feature] < threshold);
    if left_m.is_empty() || right_m.is_empty() {
        return leaf(tree);
    }
    let idx = tree.nodes.len();
    tree.nodes.push(TreeNode::Split { feature, threshold, left: 0, right: 0 });
    let left = grow(tree, features, sorted, grad, hess, left_m, depth_left - 1);
    let right = grow(tree, features, sorted, grad, hess, right_m, depth_left - 1);
    if let TreeNode::Split { left: l, right: r, .. } = &mut tree.nodes[idx] {
        *l = left;
        *r = right;
    }
    idx
}

/// Probabilities in [0,1] plus 0.5-thresholded labels.
pub fn predict_gbdt(model: &GBDTModel, features: &FeatureMatrix) -> Result<(Vec<f64>, Vec<bool>), GbdtError> {
    if !features.matrix.is_empty() && features.width() != model.n_features {
        return Err(GbdtError::WidthMismatch { expected: model.n_features, got: features.width() });
    }
    let probs: Vec<f64> = features
        .matrix
        .iter()
        .map(|row| {
            let z: f64 = model.base_score
                + model
                    .trees
                    .iter()
                    .map(|t| model.params.learning_rate * t.predict(row))
                    .sum::<f64>();
            sigmoid(z)
        })
        .collect();
    let labels = probs.iter().map(|&p| p >= 0.5).collect();
    Ok((probs, labels))
}
