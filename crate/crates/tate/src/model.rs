//! Network components: per-modality attention encoders, common space
//! projection, joint transformer encoder-decoder, classifier, and the
//! full-modality teacher whose representation supervises the student.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{MissingPattern, Segment, Tag};
use crate::graph::{Graph, NodeId};
use crate::tensor::{NumericsError, Tensor};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("contract violation: {0}")]
    Contract(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelConfig {
    /// Hidden width d of each modality representation.
    pub hidden: usize,
    /// Attention head count, shared by modality and joint attention.
    pub heads: usize,
    pub classes: usize,
    pub dropout: f64,
    /// Attach the 4-digit modality tag to the joint vector.
    pub use_tag: bool,
    /// Route modality vectors through the shared pairwise projections.
    pub use_common_space: bool,
    pub width_visual: usize,
    pub width_acoustic: usize,
    pub width_textual: usize,
}

impl ModelConfig {
    /// Common-space width d_c = d/2, so each projected modality keeps width d.
    pub fn common_width(&self) -> usize {
        self.hidden / 2
    }

    /// Width of E_all / E_out / E_pre: 3d plus the tag digits when enabled.
    pub fn joint_width(&self) -> usize {
        3 * self.hidden + if self.use_tag { 4 } else { 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.hidden % 2 != 0 {
            return Err(ModelError::Config(format!(
                "hidden size {} must be a positive even number (common width is hidden/2)",
                self.hidden
            )));
        }
        if self.heads == 0 || self.hidden % self.heads != 0 {
            return Err(ModelError::Config(format!(
                "hidden size {} must be divisible by head count {}",
                self.hidden, self.heads
            )));
        }
        if self.joint_width() % self.heads != 0 {
            return Err(ModelError::Config(format!(
                "joint width {} must be divisible by head count {}",
                self.joint_width(),
                self.heads
            )));
        }
        if self.classes < 2 {
            return Err(ModelError::Config("need at least 2 classes".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config(format!(
                "dropout {} must be in [0, 1)",
                self.dropout
            )));
        }
        if self.width_visual == 0 || self.width_acoustic == 0 || self.width_textual == 0 {
            return Err(ModelError::Config("feature widths must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommonSpaceWeights {
    /// Shared across the (visual, acoustic) pair.
    pub w_va: Tensor,
    /// Shared across the (visual, textual) pair.
    pub w_vt: Tensor,
    /// Shared across the (textual, acoustic) pair.
    pub w_ta: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudentParams {
    pub proj_v: Tensor,
    pub proj_a: Tensor,
    pub proj_t: Tensor,
    pub attn_v: AttentionWeights,
    pub attn_a: AttentionWeights,
    pub attn_t: AttentionWeights,
    pub common: Option<CommonSpaceWeights>,
    pub enc_attn: AttentionWeights,
    pub w_e1: Tensor,
    pub b_e1: Tensor,
    pub w_e2: Tensor,
    pub b_e2: Tensor,
    pub dec_attn: AttentionWeights,
    pub w_o1: Tensor,
    pub b_o1: Tensor,
    pub w_o2: Tensor,
    pub b_o2: Tensor,
    pub w_c: Tensor,
    pub b_c: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeacherParams {
    pub proj_v: Tensor,
    pub proj_a: Tensor,
    pub proj_t: Tensor,
    /// Lifts the 3d concatenation to the student joint width.
    pub lift_w: Tensor,
    pub lift_b: Tensor,
    pub w_c: Tensor,
    pub b_c: Tensor,
}

fn xavier(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::matrix(rows, cols, data).expect("consistent init shape")
}

fn attn_init(rng: &mut ChaCha8Rng, dim: usize) -> AttentionWeights {
    AttentionWeights {
        wq: xavier(rng, dim, dim),
        wk: xavier(rng, dim, dim),
        wv: xavier(rng, dim, dim),
        wo: xavier(rng, dim, dim),
    }
}

impl StudentParams {
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = cfg.hidden;
        let dc = cfg.common_width();
        let j = cfg.joint_width();
        Ok(Self {
            proj_v: xavier(&mut rng, cfg.width_visual, d),
            proj_a: xavier(&mut rng, cfg.width_acoustic, d),
            proj_t: xavier(&mut rng, cfg.width_textual, d),
            attn_v: attn_init(&mut rng, d),
            attn_a: attn_init(&mut rng, d),
            attn_t: attn_init(&mut rng, d),
            common: cfg.use_common_space.then(|| CommonSpaceWeights {
                w_va: xavier(&mut rng, d, dc),
                w_vt: xavier(&mut rng, d, dc),
                w_ta: xavier(&mut rng, d, dc),
            }),
            enc_attn: attn_init(&mut rng, j),
            w_e1: xavier(&mut rng, j, j),
            b_e1: Tensor::zeros(vec![1, j]),
            w_e2: xavier(&mut rng, j, j),
            b_e2: Tensor::zeros(vec![1, j]),
            dec_attn: attn_init(&mut rng, j),
            w_o1: xavier(&mut rng, j, j),
            b_o1: Tensor::zeros(vec![1, j]),
            w_o2: xavier(&mut rng, j, j),
            b_o2: Tensor::zeros(vec![1, j]),
            w_c: xavier(&mut rng, j, cfg.classes),
            b_c: Tensor::zeros(vec![1, cfg.classes]),
        })
    }

    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![
            ("proj_v".into(), &self.proj_v),
            ("proj_a".into(), &self.proj_a),
            ("proj_t".into(), &self.proj_t),
        ];
        for (pfx, a) in [
            ("attn_v", &self.attn_v),
            ("attn_a", &self.attn_a),
            ("attn_t", &self.attn_t),
            ("enc", &self.enc_attn),
            ("dec", &self.dec_attn),
        ] {
            out.push((format!("{pfx}.wq"), &a.wq));
            out.push((format!("{pfx}.wk"), &a.wk));
            out.push((format!("{pfx}.wv"), &a.wv));
            out.push((format!("{pfx}.wo"), &a.wo));
        }
        if let Some(c) = &self.common {
            out.push(("w_va".into(), &c.w_va));
            out.push(("w_vt".into(), &c.w_vt));
            out.push(("w_ta".into(), &c.w_ta));
        }
        out.extend([
            ("w_e1".to_string(), &self.w_e1),
            ("b_e1".to_string(), &self.b_e1),
            ("w_e2".to_string(), &self.w_e2),
            ("b_e2".to_string(), &self.b_e2),
            ("w_o1".to_string(), &self.w_o1),
            ("b_o1".to_string(), &self.b_o1),
            ("w_o2".to_string(), &self.w_o2),
            ("b_o2".to_string(), &self.b_o2),
            ("w_c".to_string(), &self.w_c),
            ("b_c".to_string(), &self.b_c),
        ]);
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = vec![
            ("proj_v".into(), &mut self.proj_v),
            ("proj_a".into(), &mut self.proj_a),
            ("proj_t".into(), &mut self.proj_t),
        ];
        for (pfx, a) in [
            ("attn_v", &mut self.attn_v),
            ("attn_a", &mut self.attn_a),
            ("attn_t", &mut self.attn_t),
            ("enc", &mut self.enc_attn),
            ("dec", &mut self.dec_attn),
        ] {
            out.push((format!("{pfx}.wq"), &mut a.wq));
            out.push((format!("{pfx}.wk"), &mut a.wk));
            out.push((format!("{pfx}.wv"), &mut a.wv));
            out.push((format!("{pfx}.wo"), &mut a.wo));
        }
        if let Some(c) = &mut self.common {
            out.push(("w_va".into(), &mut c.w_va));
            out.push(("w_vt".into(), &mut c.w_vt));
            out.push(("w_ta".into(), &mut c.w_ta));
        }
        out.extend([
            ("w_e1".to_string(), &mut self.w_e1),
            ("b_e1".to_string(), &mut self.b_e1),
            ("w_e2".to_string(), &mut self.w_e2),
            ("b_e2".to_string(), &mut self.b_e2),
            ("w_o1".to_string(), &mut self.w_o1),
            ("b_o1".to_string(), &mut self.b_o1),
            ("w_o2".to_string(), &mut self.w_o2),
            ("b_o2".to_string(), &mut self.b_o2),
            ("w_c".to_string(), &mut self.w_c),
            ("b_c".to_string(), &mut self.b_c),
        ]);
        out
    }

    pub fn param_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.numel()).sum()
    }
}

impl TeacherParams {
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = cfg.hidden;
        let j = cfg.joint_width();
        Ok(Self {
            proj_v: xavier(&mut rng, cfg.width_visual, d),
            proj_a: xavier(&mut rng, cfg.width_acoustic, d),
            proj_t: xavier(&mut rng, cfg.width_textual, d),
            lift_w: xavier(&mut rng, 3 * d, j),
            lift_b: Tensor::zeros(vec![1, j]),
            w_c: xavier(&mut rng, j, cfg.classes),
            b_c: Tensor::zeros(vec![1, cfg.classes]),
        })
    }

    pub fn named(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("proj_v".into(), &self.proj_v),
            ("proj_a".into(), &self.proj_a),
            ("proj_t".into(), &self.proj_t),
            ("lift_w".into(), &self.lift_w),
            ("lift_b".into(), &self.lift_b),
            ("w_c".into(), &self.w_c),
            ("b_c".into(), &self.b_c),
        ]
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![
            ("proj_v".into(), &mut self.proj_v),
            ("proj_a".into(), &mut self.proj_a),
            ("proj_t".into(), &mut self.proj_t),
            ("lift_w".into(), &mut self.lift_w),
            ("lift_b".into(), &mut self.lift_b),
            ("w_c".into(), &mut self.w_c),
            ("b_c".into(), &mut self.b_c),
        ]
    }
}

/// Parameter tensors inserted into a graph as leaves, addressable by name.
pub struct BoundParams {
    ids: Vec<(String, NodeId)>,
}

impl BoundParams {
    pub fn bind(g: &mut Graph, named: &[(String, &Tensor)]) -> Self {
        let ids = named
            .iter()
            .map(|(n, t)| (n.clone(), g.leaf((*t).clone())))
            .collect();
        Self { ids }
    }

    pub fn id(&self, name: &str) -> NodeId {
        self.ids
            .iter()
            .find(|(n, _)| n == name)
            .unwrap_or_else(|| panic!("unbound parameter {name}"))
            .1
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, NodeId)> {
        self.ids.iter().map(|(n, i)| (n.as_str(), *i))
    }

    fn attn(&self, pfx: &str) -> BoundAttention {
        BoundAttention {
            wq: self.id(&format!("{pfx}.wq")),
            wk: self.id(&format!("{pfx}.wk")),
            wv: self.id(&format!("{pfx}.wv")),
            wo: self.id(&format!("{pfx}.wo")),
        }
    }
}

#[derive(Clone, Copy)]
pub struct BoundAttention {
    pub wq: NodeId,
    pub wk: NodeId,
    pub wv: NodeId,
    pub wo: NodeId,
}

/// Inverted dropout; identity when no rng is attached (inference mode).
pub struct Dropout<'a> {
    pub p: f64,
    pub rng: Option<&'a mut ChaCha8Rng>,
}

impl Dropout<'_> {
    pub fn off() -> Dropout<'static> {
        Dropout { p: 0.0, rng: None }
    }

    fn apply(&mut self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        let Some(rng) = self.rng.as_deref_mut() else {
            return Ok(x);
        };
        if self.p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - self.p;
        let shape = g.value(x).shape().to_vec();
        let numel: usize = shape.iter().product();
        let mask_data: Vec<f64> = (0..numel)
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let mask = g.leaf(Tensor::new(shape, mask_data)?);
        Ok(g.mul(x, mask)?)
    }
}

/// Scaled dot-product multi-head attention over row sequences `[n, dim]`.
/// Per-head projections are column blocks of the full `dim x dim` matrices
/// and scores are scaled by 1/sqrt(dim), the input dimension.
pub fn multi_head_attention(
    g: &mut Graph,
    q: NodeId,
    k: NodeId,
    v: NodeId,
    w: BoundAttention,
    heads: usize,
) -> Result<NodeId> {
    let dim = g.value(q).cols();
    if dim % heads != 0 {
        return Err(ModelError::Config(format!(
            "attention width {dim} not divisible by {heads} heads"
        )));
    }
    let hw = dim / heads;
    let qp = g.matmul(q, w.wq)?;
    let kp = g.matmul(k, w.wk)?;
    let vp = g.matmul(v, w.wv)?;
    let scale = 1.0 / (dim as f64).sqrt();
    let mut head_outs = Vec::with_capacity(heads);
    for i in 0..heads {
        let (lo, hi) = (i * hw, (i + 1) * hw);
        let qi = g.slice_cols(qp, lo, hi)?;
        let ki = g.slice_cols(kp, lo, hi)?;
        let vi = g.slice_cols(vp, lo, hi)?;
        let kt = g.transpose(ki);
        let scores = g.matmul(qi, kt)?;
        let scores = g.scale(scores, scale);
        let weights = g.softmax(scores, 1)?;
        head_outs.push(g.matmul(weights, vi)?);
    }
    let cat = g.concat_cols(&head_outs)?;
    Ok(g.matmul(cat, w.wo)?)
}

/// Bias-free input projection, self-attention, then mean-pool over time.
pub fn encode_modality(
    g: &mut Graph,
    x: NodeId,
    proj: NodeId,
    attn: BoundAttention,
    heads: usize,
    dropout: &mut Dropout,
) -> Result<NodeId> {
    if g.value(x).rows() == 0 {
        return Err(ModelError::Contract("empty modality sequence".into()));
    }
    let xp = g.matmul(x, proj)?;
    let att = multi_head_attention(g, xp, xp, xp, attn, heads)?;
    let att = dropout.apply(g, att)?;
    Ok(g.mean_rows(att))
}

/// Pairwise shared projections: C_v = [W_va E_v || W_vt E_v],
/// C_a = [W_va E_a || W_ta E_a], C_t = [W_vt E_t || W_ta E_t].
pub fn common_space_project(
    g: &mut Graph,
    e_v: NodeId,
    e_a: NodeId,
    e_t: NodeId,
    w_va: NodeId,
    w_vt: NodeId,
    w_ta: NodeId,
) -> Result<(NodeId, NodeId, NodeId)> {
    let va_v = g.matmul(e_v, w_va)?;
    let vt_v = g.matmul(e_v, w_vt)?;
    let c_v = g.concat_cols(&[va_v, vt_v])?;
    let va_a = g.matmul(e_a, w_va)?;
    let ta_a = g.matmul(e_a, w_ta)?;
    let c_a = g.concat_cols(&[va_a, ta_a])?;
    let vt_t = g.matmul(e_t, w_vt)?;
    let ta_t = g.matmul(e_t, w_ta)?;
    let c_t = g.concat_cols(&[vt_t, ta_t])?;
    Ok((c_v, c_a, c_t))
}

/// One transformer sublayer over the length-1 joint sequence: self-attention
/// followed by a relu feed-forward, dropout after each in training mode.
#[allow(clippy::too_many_arguments)]
pub fn transformer_block(
    g: &mut Graph,
    x: NodeId,
    attn: BoundAttention,
    w1: NodeId,
    b1: NodeId,
    w2: NodeId,
    b2: NodeId,
    heads: usize,
    dropout: &mut Dropout,
) -> Result<NodeId> {
    let att = multi_head_attention(g, x, x, x, attn, heads)?;
    let att = dropout.apply(g, att)?;
    let h = g.matmul(att, w1)?;
    let h = g.add(h, b1)?;
    let h = g.relu(h);
    let h = g.matmul(h, w2)?;
    let h = g.add(h, b2)?;
    dropout.apply(g, h).map_err(Into::into)
}

/// Softmax classifier head over the encoder output.
pub fn classify(g: &mut Graph, e_out: NodeId, w_c: NodeId, b_c: NodeId) -> Result<NodeId> {
    let logits = g.matmul(e_out, w_c)?;
    let logits = g.add(logits, b_c)?;
    Ok(g.softmax(logits, 1)?)
}

/// Node ids of the student's intermediate representations for one sample.
pub struct StudentTrace {
    pub e_all: NodeId,
    pub e_out: NodeId,
    pub d_out: NodeId,
    pub probs: NodeId,
}

/// Full student forward pass on an already-masked segment.
pub fn student_forward(
    g: &mut Graph,
    cfg: &ModelConfig,
    bound: &BoundParams,
    masked: &Segment,
    tag: &Tag,
    dropout: &mut Dropout,
) -> Result<StudentTrace> {
    let h = cfg.heads;
    let xv = g.leaf(masked.visual.clone());
    let xa = g.leaf(masked.acoustic.clone());
    let xt = g.leaf(masked.textual.clone());
    let e_v = encode_modality(g, xv, bound.id("proj_v"), bound.attn("attn_v"), h, dropout)?;
    let e_a = encode_modality(g, xa, bound.id("proj_a"), bound.attn("attn_a"), h, dropout)?;
    let e_t = encode_modality(g, xt, bound.id("proj_t"), bound.attn("attn_t"), h, dropout)?;

    let (c_v, c_a, c_t) = if cfg.use_common_space {
        common_space_project(
            g,
            e_v,
            e_a,
            e_t,
            bound.id("w_va"),
            bound.id("w_vt"),
            bound.id("w_ta"),
        )?
    } else {
        (e_v, e_a, e_t)
    };

    let e_all = if cfg.use_tag {
        let tag_node = g.leaf(Tensor::row(&tag.as_floats()));
        g.concat_cols(&[c_v, c_a, c_t, tag_node])?
    } else {
        g.concat_cols(&[c_v, c_a, c_t])?
    };

    let e_out = transformer_block(
        g,
        e_all,
        bound.attn("enc"),
        bound.id("w_e1"),
        bound.id("b_e1"),
        bound.id("w_e2"),
        bound.id("b_e2"),
        h,
        dropout,
    )?;
    let d_out = transformer_block(
        g,
        e_out,
        bound.attn("dec"),
        bound.id("w_o1"),
        bound.id("b_o1"),
        bound.id("w_o2"),
        bound.id("b_o2"),
        h,
        dropout,
    )?;
    let probs = classify(g, e_out, bound.id("w_c"), bound.id("b_c"))?;
    Ok(StudentTrace {
        e_all,
        e_out,
        d_out,
        probs,
    })
}

/// Teacher forward pass on a complete segment: project + mean-pool each
/// modality, concatenate, lift to the joint width (E_pre), classify.
/// E_pre is the penultimate representation, not the logits.
pub fn teacher_forward(
    g: &mut Graph,
    bound: &BoundParams,
    segment: &Segment,
    pattern: &MissingPattern,
) -> Result<(NodeId, NodeId)> {
    if !pattern.is_empty() {
        return Err(ModelError::Contract(
            "teacher requires full-modality input".into(),
        ));
    }
    let mut pooled = Vec::with_capacity(3);
    for (x, pname) in [
        (&segment.visual, "proj_v"),
        (&segment.acoustic, "proj_a"),
        (&segment.textual, "proj_t"),
    ] {
        let xi = g.leaf(x.clone());
        let xp = g.matmul(xi, bound.id(pname))?;
        pooled.push(g.mean_rows(xp));
    }
    let cat = g.concat_cols(&pooled)?;
    let lifted = g.matmul(cat, bound.id("lift_w"))?;
    let e_pre = g.add(lifted, bound.id("lift_b"))?;
    let probs = classify(g, e_pre, bound.id("w_c"), bound.id("b_c"))?;
    Ok((e_pre, probs))
}

/// Collects leaf gradients back out of the graph, keyed by parameter name.
/// Parameters untouched by the loss get explicit zero gradients.
pub fn collect_grads(g: &Graph, bound: &BoundParams) -> Vec<(String, Tensor)> {
    bound
        .iter()
        .map(|(name, id)| {
            let grad = g
                .grad(id)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(g.value(id).shape().to_vec()));
            (name.to_string(), grad)
        })
        .collect()
}

pub fn default_config(
    width_visual: usize,
    width_acoustic: usize,
    width_textual: usize,
) -> ModelConfig {
    ModelConfig {
        hidden: 300,
        heads: 4,
        classes: 3,
        dropout: 0.3,
        use_tag: true,
        use_common_space: true,
        width_visual,
        width_acoustic,
        width_textual,
    }
}
