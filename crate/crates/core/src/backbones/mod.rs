//! The six backbone architectures with their fine-tuning heads, parameter
//! accounting, and model construction.
//!
//! Architectures follow the standard Keras-application layer layouts so that
//! trainable-parameter totals line up with the published per-model counts.
//! See `docs/parameter_audit.md` for the per-layer arithmetic, including the
//! ResNet-50 residual.

mod densenet;
mod inception;
mod mobilenet;
mod resnet;
mod vgg;
mod xception;

use crate::nn::{self, Graph, Op};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

pub const INPUT_SHAPE: [usize; 3] = [3, 224, 224];

/// Environment variable naming a directory of pretrained `.fwt` containers.
pub const WEIGHTS_DIR_ENV: &str = "FACEBENCH_WEIGHTS_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneId {
    InceptionV3,
    Xception,
    DenseNet121,
    MobileNet,
    ResNet50,
    Vgg16,
}

impl BackboneId {
    /// Canonical fixed order used everywhere a list of backbones appears.
    pub const ALL: [BackboneId; 6] = [
        BackboneId::InceptionV3,
        BackboneId::Xception,
        BackboneId::DenseNet121,
        BackboneId::MobileNet,
        BackboneId::ResNet50,
        BackboneId::Vgg16,
    ];

    /// Lowercase CLI token.
    pub fn token(&self) -> &'static str {
        match self {
            BackboneId::InceptionV3 => "inceptionv3",
            BackboneId::Xception => "xception",
            BackboneId::DenseNet121 => "densenet121",
            BackboneId::MobileNet => "mobilenet",
            BackboneId::ResNet50 => "resnet50",
            BackboneId::Vgg16 => "vgg16",
        }
    }

    pub fn from_token(s: &str) -> Option<BackboneId> {
        Self::ALL.iter().copied().find(|b| b.token() == s)
    }

    /// Display name as printed in result tables.
    pub fn display_name(&self) -> &'static str {
        match self {
            BackboneId::InceptionV3 => "Inceptionv3",
            BackboneId::Xception => "Xception",
            BackboneId::DenseNet121 => "Densenet",
            BackboneId::MobileNet => "Mobilenet",
            BackboneId::ResNet50 => "Resnet50",
            BackboneId::Vgg16 => "VGG16",
        }
    }

    /// Published trainable-parameter count for the fine-tuned model.
    pub fn expected_trainable_params(&self) -> u64 {
        match self {
            BackboneId::InceptionV3 => 21_770_401,
            BackboneId::Xception => 33_853_225,
            BackboneId::DenseNet121 => 6_954_881,
            BackboneId::MobileNet => 3_208_001,
            BackboneId::ResNet50 => 23_796_993,
            BackboneId::Vgg16 => 14_977_857,
        }
    }

    /// Relative tolerance for the parameter audit: four counts reproduce
    /// exactly; Xception and ResNet-50 are held to 0.1%.
    pub fn param_tolerance(&self) -> f64 {
        match self {
            BackboneId::Xception | BackboneId::ResNet50 => 1e-3,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "layer", rename_all = "snake_case")]
pub enum HeadLayer {
    GlobalAvgPool,
    GlobalMaxPool,
    Flatten,
    BatchNorm,
    Dense { units: usize, activation: Activation },
    Dropout { rate: f32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub layers: Vec<HeadLayer>,
}

impl HeadSpec {
    /// Every head ends in a single sigmoid unit.
    pub fn final_layer_is_sigmoid_unit(&self) -> bool {
        matches!(
            self.layers.last(),
            Some(HeadLayer::Dense { units: 1, activation: Activation::Sigmoid })
        )
    }
}

/// The published fine-tuning head for each backbone.
pub fn head_for(id: BackboneId) -> HeadSpec {
    use Activation::*;
    use HeadLayer::*;
    let layers = match id {
        BackboneId::InceptionV3 | BackboneId::DenseNet121 | BackboneId::MobileNet => vec![
            GlobalAvgPool,
            Dropout { rate: 0.5 },
            Dense { units: 1, activation: Sigmoid },
        ],
        BackboneId::Xception | BackboneId::ResNet50 => vec![
            Flatten,
            BatchNorm,
            Dense { units: 128, activation: Relu },
            BatchNorm,
            Dense { units: 1, activation: Sigmoid },
        ],
        BackboneId::Vgg16 => vec![
            GlobalMaxPool,
            Dense { units: 512, activation: Relu },
            Dropout { rate: 0.5 },
            Dense { units: 1, activation: Sigmoid },
        ],
    };
    HeadSpec { layers }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackboneSpec {
    pub id: BackboneId,
    pub head: HeadSpec,
    pub expected_trainable_params: u64,
    pub input_shape: [usize; 3],
}

impl BackboneSpec {
    pub fn new(id: BackboneId) -> Self {
        BackboneSpec {
            id,
            head: head_for(id),
            expected_trainable_params: id.expected_trainable_params(),
            input_shape: INPUT_SHAPE,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("pretrained weights for {0} not available: {1}")]
    WeightsUnavailable(String, String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// A constructed (possibly untrained) model.
pub struct ModelHandle {
    pub spec: BackboneSpec,
    pub graph: Graph,
    /// Index of the first head node; everything below is the backbone base.
    pub head_start: usize,
    /// Node whose output serves as the feature-extraction tap (the pooled
    /// final conv block). Present on every backbone whose head starts with a
    /// pooling or flatten stage.
    pub feature_tap: usize,
}

/// Build the backbone graph and return the last base node index.
fn base_output(id: BackboneId, g: &mut Graph) -> usize {
    match id {
        BackboneId::InceptionV3 => inception::build(g),
        BackboneId::Xception => xception::build(g),
        BackboneId::DenseNet121 => densenet::build(g),
        BackboneId::MobileNet => mobilenet::build(g),
        // GAP tail: the published count only reconciles when the head's
        // Flatten sees pooled 2048 features, not the raw 7x7 map.
        BackboneId::ResNet50 => {
            let last = resnet::build(g);
            g.add(Op::GlobalAvgPool, &[last])
        }
        BackboneId::Vgg16 => vgg::build(g),
    }
}

pub fn build_model(spec: &BackboneSpec, pretrained: bool, seed: u64) -> Result<ModelHandle, ModelError> {
    let mut g = Graph::new(&spec.input_shape);
    let base_last = base_output(spec.id, &mut g);
    let head_start = g.nodes.len();

    let mut prev = base_last;
    let mut feature_tap = base_last;
    for (li, layer) in spec.head.layers.iter().enumerate() {
        prev = match layer {
            HeadLayer::GlobalAvgPool => g.add(Op::GlobalAvgPool, &[prev]),
            HeadLayer::GlobalMaxPool => g.add(Op::GlobalMaxPool, &[prev]),
            HeadLayer::Flatten => g.add(Op::Flatten, &[prev]),
            HeadLayer::BatchNorm => g.add(Op::BatchNorm { scale: true }, &[prev]),
            HeadLayer::Dense { units, activation } => {
                let d = g.add(Op::Dense { units: *units, bias: true }, &[prev]);
                match activation {
                    Activation::Relu => g.add(Op::Relu, &[d]),
                    // sigmoid is applied by predict / folded into the loss
                    Activation::Sigmoid => d,
                }
            }
            HeadLayer::Dropout { rate } => g.add(Op::Dropout { rate: *rate }, &[prev]),
        };
        if li == 0 {
            feature_tap = prev;
        }
    }
    let out = &g.nodes[g.output_node()].out_shape;
    if out != &vec![1] {
        return Err(ModelError::ShapeMismatch(format!(
            "head must emit one logit, got {out:?}"
        )));
    }

    g.init_params(seed);
    if pretrained {
        let dir = std::env::var(WEIGHTS_DIR_ENV).map_err(|_| {
            ModelError::WeightsUnavailable(
                spec.id.token().into(),
                format!("{WEIGHTS_DIR_ENV} is not set and no local container was found"),
            )
        })?;
        let path = PathBuf::from(dir).join(format!("{}.fwt", spec.id.token()));
        nn::weights::load(&mut g, &path)
            .map_err(|e| ModelError::WeightsUnavailable(spec.id.token().into(), e.to_string()))?;
    }

    Ok(ModelHandle {
        spec: spec.clone(),
        graph: g,
        head_start,
        feature_tap,
    })
}

/// Number of weight scalars the optimizer updates (batch-norm moving
/// statistics excluded).
pub fn trainable_param_count(model: &ModelHandle) -> u64 {
    model.graph.trainable_param_count()
}

/// One row of the `params` audit.
#[derive(Debug, Clone, Serialize)]
pub struct AuditRow {
    pub id: BackboneId,
    pub computed: u64,
    pub expected: u64,
    pub delta: i64,
    pub tolerance: f64,
    pub within_tolerance: bool,
}

/// Build every backbone with random init and compare trainable counts
/// against the published figures.
pub fn audit_params(seed: u64) -> Vec<AuditRow> {
    BackboneId::ALL
        .iter()
        .map(|&id| {
            let spec = BackboneSpec::new(id);
            let model = build_model(&spec, false, seed).expect("random-init build cannot fail");
            let computed = trainable_param_count(&model);
            let expected = id.expected_trainable_params();
            let delta = computed as i64 - expected as i64;
            let tolerance = id.param_tolerance();
            let within = (delta.unsigned_abs() as f64) <= tolerance * expected as f64;
            AuditRow {
                id,
                computed,
                expected,
                delta,
                tolerance,
                within_tolerance: within,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests;
