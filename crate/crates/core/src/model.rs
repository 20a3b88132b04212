//! Backbone, projection head and cosine prototype classifier.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::ByteReader;
use crate::error::{GcdError, Result};
use crate::matrix::Matrix;
use crate::numgraph::{ComputeGraph, Gradients, LeafValues, NodeId};

const CHECKPOINT_MAGIC: &[u8; 4] = b"GCDM";
const CHECKPOINT_VERSION: u32 = 1;

/// Which representation feeds the prototype classifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierInput {
    PostBackbone,
    PostProjector,
}

impl ClassifierInput {
    pub fn as_str(self) -> &'static str {
        match self {
            ClassifierInput::PostBackbone => "post_backbone",
            ClassifierInput::PostProjector => "post_projector",
        }
    }
}

impl std::str::FromStr for ClassifierInput {
    type Err = GcdError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "post_backbone" => Ok(ClassifierInput::PostBackbone),
            "post_projector" => Ok(ClassifierInput::PostProjector),
            other => Err(GcdError::Config(format!("unknown classifier_input {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub feature_dim: usize,
    pub hidden_dim: usize,
    /// Width of the backbone output `h`.
    pub embed_dim: usize,
    /// Width of the projector output `z`.
    pub projection_dim: usize,
    pub num_prototypes: usize,
    pub classifier_input: ClassifierInput,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            feature_dim: 32,
            hidden_dim: 64,
            embed_dim: 32,
            projection_dim: 16,
            num_prototypes: 10,
            classifier_input: ClassifierInput::PostBackbone,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn prototype_dim(&self) -> usize {
        match self.classifier_input {
            ClassifierInput::PostBackbone => self.embed_dim,
            ClassifierInput::PostProjector => self.projection_dim,
        }
    }
}

/// Affine layer `x · W + b` with `W` stored `in x out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Option<Matrix>,
}

impl Linear {
    fn he_init(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        Linear {
            weight: Matrix::randn(fan_in, fan_out, (2.0 / fan_in as f64).sqrt(), rng),
            bias: Some(Matrix::zeros(1, fan_out)),
        }
    }

    fn forward(&self, x: &Matrix) -> Matrix {
        let mut y = x.matmul(&self.weight);
        if let Some(b) = &self.bias {
            for r in 0..y.rows() {
                for (v, bv) in y.row_mut(r).iter_mut().zip(b.row(0)) {
                    *v += bv;
                }
            }
        }
        y
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    /// Layers with relu between consecutive layers, none after the last.
    pub backbone: Vec<Linear>,
    pub projector: Vec<Linear>,
    /// `K x prototype_dim`, stored unnormalized.
    pub prototypes: Matrix,
}

/// Graph leaves bound to the model's parameters, in declaration order.
#[derive(Clone, Debug)]
pub struct ModelNodes {
    pub backbone: Vec<(NodeId, Option<NodeId>)>,
    pub projector: Vec<(NodeId, Option<NodeId>)>,
    pub prototypes: NodeId,
}

impl ModelNodes {
    pub fn all(&self) -> Vec<NodeId> {
        let mut out = Vec::new();
        for &(w, b) in self.backbone.iter().chain(&self.projector) {
            out.push(w);
            out.extend(b);
        }
        out.push(self.prototypes);
        out
    }

    pub fn backbone_leaves(&self) -> Vec<NodeId> {
        self.backbone
            .iter()
            .flat_map(|&(w, b)| std::iter::once(w).chain(b))
            .collect()
    }

    pub fn projector_leaves(&self) -> Vec<NodeId> {
        self.projector
            .iter()
            .flat_map(|&(w, b)| std::iter::once(w).chain(b))
            .collect()
    }
}

impl Model {
    pub fn init(cfg: &ModelConfig) -> Result<Model> {
        if cfg.num_prototypes < 2 {
            return Err(GcdError::InvalidArgument(format!(
                "need at least 2 prototypes, got {}",
                cfg.num_prototypes
            )));
        }
        if [cfg.feature_dim, cfg.hidden_dim, cfg.embed_dim, cfg.projection_dim].contains(&0) {
            return Err(GcdError::InvalidArgument("model dimensions must be >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let backbone = vec![
            Linear::he_init(cfg.feature_dim, cfg.hidden_dim, &mut rng),
            Linear::he_init(cfg.hidden_dim, cfg.embed_dim, &mut rng),
        ];
        let projector = vec![
            Linear::he_init(cfg.embed_dim, cfg.embed_dim, &mut rng),
            Linear::he_init(cfg.embed_dim, cfg.projection_dim, &mut rng),
        ];
        let prototypes =
            Matrix::randn(cfg.num_prototypes, cfg.prototype_dim(), 1.0, &mut rng).normalize_rows()?;
        Ok(Model {
            config: cfg.clone(),
            backbone,
            projector,
            prototypes,
        })
    }

    pub fn num_prototypes(&self) -> usize {
        self.prototypes.rows()
    }

    /// Parameter matrices in declaration order (matches [`ModelNodes::all`]).
    pub fn params(&self) -> Vec<&Matrix> {
        let mut out = Vec::new();
        for l in self.backbone.iter().chain(&self.projector) {
            out.push(&l.weight);
            out.extend(l.bias.as_ref());
        }
        out.push(&self.prototypes);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = Vec::new();
        for l in self.backbone.iter_mut().chain(self.projector.iter_mut()) {
            out.push(&mut l.weight);
            out.extend(l.bias.as_mut());
        }
        out.push(&mut self.prototypes);
        out
    }

    pub fn backbone_forward(&self, x: &Matrix) -> Result<Matrix> {
        mlp_forward(&self.backbone, x)
    }

    /// `z = normalize(g(h))`.
    pub fn projector_forward(&self, h: &Matrix) -> Result<Matrix> {
        mlp_forward(&self.projector, h)?.normalize_rows()
    }

    /// Features the classifier sees for a batch of inputs.
    pub fn classifier_features(&self, x: &Matrix) -> Result<Matrix> {
        let h = self.backbone_forward(x)?;
        match self.config.classifier_input {
            ClassifierInput::PostBackbone => Ok(h),
            ClassifierInput::PostProjector => self.projector_forward(&h),
        }
    }

    /// Prototype argmax for each input row.
    pub fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        let u = self.classifier_features(x)?;
        Ok(cosine_similarity(&u, &self.prototypes)?.argmax_rows())
    }

    /// Registers every parameter as a graph leaf.
    pub fn bind(&self, g: &mut ComputeGraph) -> ModelNodes {
        let layer_nodes = |layers: &[Linear], g: &mut ComputeGraph| {
            layers
                .iter()
                .map(|l| {
                    let w = g.param(l.weight.rows(), l.weight.cols());
                    let b = l.bias.as_ref().map(|b| g.param(1, b.cols()));
                    (w, b)
                })
                .collect::<Vec<_>>()
        };
        let backbone = layer_nodes(&self.backbone, g);
        let projector = layer_nodes(&self.projector, g);
        let prototypes = g.param(self.prototypes.rows(), self.prototypes.cols());
        ModelNodes {
            backbone,
            projector,
            prototypes,
        }
    }

    pub fn leaf_values(&self, nodes: &ModelNodes) -> LeafValues {
        nodes
            .all()
            .into_iter()
            .zip(self.params())
            .map(|(id, m)| (id, m.clone()))
            .collect()
    }

    /// Gradients in declaration order.
    pub fn ordered_grads(&self, nodes: &ModelNodes, grads: &Gradients) -> Vec<Matrix> {
        nodes.all().iter().map(|id| grads[id].clone()).collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| GcdError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Model> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| GcdError::io(path, e))?;
        Model::from_bytes(&bytes)
    }

    /// Serializes a model with the standard layer layout produced by
    /// [`Model::init`].
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let template = Model::init(&self.config)?;
        let same_layout = template.params().len() == self.params().len()
            && template
                .params()
                .iter()
                .zip(self.params())
                .all(|(a, b)| a.shape() == b.shape());
        if !same_layout {
            return Err(GcdError::InvalidArgument(
                "only models with the standard layer layout can be checkpointed".into(),
            ));
        }
        let c = &self.config;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let input_code = match c.classifier_input {
            ClassifierInput::PostBackbone => 0u64,
            ClassifierInput::PostProjector => 1,
        };
        for v in [
            c.feature_dim as u64,
            c.hidden_dim as u64,
            c.embed_dim as u64,
            c.projection_dim as u64,
            c.num_prototypes as u64,
            input_code,
            c.seed,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for m in self.params() {
            for v in m.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
        let mut r = ByteReader::new(bytes);
        r.expect_magic(CHECKPOINT_MAGIC)?;
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(r.malformed_at(4, format!("unsupported version {version}")));
        }
        let feature_dim = r.len_u64()?;
        let hidden_dim = r.len_u64()?;
        let embed_dim = r.len_u64()?;
        let projection_dim = r.len_u64()?;
        let num_prototypes = r.len_u64()?;
        let off = r.offset();
        let classifier_input = match r.u64()? {
            0 => ClassifierInput::PostBackbone,
            1 => ClassifierInput::PostProjector,
            v => return Err(r.malformed_at(off, format!("classifier input code {v}"))),
        };
        let seed = r.u64()?;
        let config = ModelConfig {
            feature_dim,
            hidden_dim,
            embed_dim,
            projection_dim,
            num_prototypes,
            classifier_input,
            seed,
        };
        let mut model = Model::init(&config)
            .map_err(|e| r.malformed_at(8, format!("invalid model config: {e}")))?;
        for m in model.params_mut() {
            for v in m.data_mut() {
                *v = r.f64()?;
            }
        }
        if r.offset() as usize != bytes.len() {
            return Err(r.malformed_at(r.offset(), "trailing bytes after weights".into()));
        }
        Ok(model)
    }
}

fn mlp_forward(layers: &[Linear], x: &Matrix) -> Result<Matrix> {
    let mut cur = x.clone();
    for (i, l) in layers.iter().enumerate() {
        if cur.cols() != l.weight.rows() {
            return Err(GcdError::ShapeMismatch {
                node: i,
                expected: (cur.rows(), l.weight.rows()),
                actual: cur.shape(),
            });
        }
        cur = l.forward(&cur);
        if i + 1 < layers.len() {
            cur = cur.map(|v| v.max(0.0));
        }
    }
    if !cur.is_finite() {
        return Err(GcdError::Numerical("non-finite activation".into()));
    }
    Ok(cur)
}

/// Cosine similarity of every row of `features` with every prototype.
pub fn cosine_similarity(features: &Matrix, prototypes: &Matrix) -> Result<Matrix> {
    if features.cols() != prototypes.cols() {
        return Err(GcdError::ShapeMismatch {
            node: 0,
            expected: (prototypes.rows(), features.cols()),
            actual: prototypes.shape(),
        });
    }
    Ok(features
        .normalize_rows()?
        .matmul_t(&prototypes.normalize_rows()?))
}

/// `p_ik = softmax_k(cos(h_i, c_k) / τ)`.
pub fn soft_assign(h: &Matrix, prototypes: &Matrix, temperature: f64) -> Result<Matrix> {
    check_temperature(temperature)?;
    Ok(cosine_similarity(h, prototypes)?.softmax_rows(temperature))
}

/// Sharpened targets from the other view. Numerically identical to
/// [`soft_assign`]; in a graph the same quantity is built by
/// [`graph_teacher_probs`] behind a stop-gradient.
pub fn teacher_probs(h_other_view: &Matrix, prototypes: &Matrix, temperature: f64) -> Result<Matrix> {
    soft_assign(h_other_view, prototypes, temperature)
}

fn check_temperature(t: f64) -> Result<()> {
    if t > 0.0 {
        Ok(())
    } else {
        Err(GcdError::InvalidArgument(format!(
            "temperature must be positive, got {t}"
        )))
    }
}

/// Builds `layers` on graph input `x`.
pub fn graph_mlp(
    g: &mut ComputeGraph,
    layers: &[(NodeId, Option<NodeId>)],
    x: NodeId,
) -> Result<NodeId> {
    let mut cur = x;
    for (i, &(w, b)) in layers.iter().enumerate() {
        cur = g.matmul(cur, w)?;
        if let Some(b) = b {
            cur = g.add(cur, b)?;
        }
        if i + 1 < layers.len() {
            cur = g.relu(cur);
        }
    }
    Ok(cur)
}

pub fn graph_backbone(g: &mut ComputeGraph, nodes: &ModelNodes, x: NodeId) -> Result<NodeId> {
    graph_mlp(g, &nodes.backbone, x)
}

pub fn graph_projector(g: &mut ComputeGraph, nodes: &ModelNodes, h: NodeId) -> Result<NodeId> {
    let z = graph_mlp(g, &nodes.projector, h)?;
    Ok(g.row_l2_normalize(z))
}

pub fn graph_soft_assign(
    g: &mut ComputeGraph,
    features: NodeId,
    prototypes: NodeId,
    temperature: f64,
) -> Result<NodeId> {
    let f = g.row_l2_normalize(features);
    let c = g.row_l2_normalize(prototypes);
    let cos = g.matmul_t(f, c)?;
    g.row_softmax(cos, temperature)
}

pub fn graph_teacher_probs(
    g: &mut ComputeGraph,
    features_other_view: NodeId,
    prototypes: NodeId,
    temperature: f64,
) -> Result<NodeId> {
    let p = graph_soft_assign(g, features_other_view, prototypes, temperature)?;
    Ok(g.stop_gradient(p))
}
