//! Loss terms: cross-entropy classification, symmetrized-KL divergence for
//! the forward (teacher alignment) and backward (reconstruction) terms, a
//! sigmoid-MAE tag recovery term, and the weighted total.
//!
//! Real-valued vectors are softmax-normalized into distributions before any
//! KL; every logarithm is epsilon-shifted by [`LOG_EPS`].

use serde::{Deserialize, Serialize};

use crate::graph::{Graph, NodeId};
use crate::tensor::{NumericsError, Result, Tensor};

/// Epsilon added inside every log ratio.
pub const LOG_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 0.1,
            lambda2: 0.1,
            lambda3: 0.1,
        }
    }
}

/// Selectable similarity losses for the forward/backward/tag terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Js,
    Mae,
    Cosine,
}

impl std::str::FromStr for LossKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "js" => Ok(LossKind::Js),
            "mae" => Ok(LossKind::Mae),
            "cosine" => Ok(LossKind::Cosine),
            other => Err(format!("unknown loss kind '{other}'")),
        }
    }
}

fn check_same_width(g: &Graph, a: NodeId, b: NodeId) -> Result<()> {
    if g.value(a).shape() != g.value(b).shape() {
        return Err(NumericsError::ShapeMismatch {
            op: "divergence",
            lhs: g.value(a).shape().to_vec(),
            rhs: g.value(b).shape().to_vec(),
        });
    }
    Ok(())
}

/// KL(p || q) = sum p * (ln(p + eps) - ln(q + eps)) over row vectors that
/// already sum to 1.
pub fn kl_divergence(g: &mut Graph, p: NodeId, q: NodeId) -> Result<NodeId> {
    check_same_width(g, p, q)?;
    for id in [p, q] {
        let t = g.value(id);
        if t.data().iter().any(|&v| v < 0.0) || (t.sum() - 1.0).abs() > 1e-9 {
            return Err(NumericsError::Contract(
                "kl_divergence arguments must be probability distributions".into(),
            ));
        }
    }
    let lp = g.log_eps(p, LOG_EPS)?;
    let lq = g.log_eps(q, LOG_EPS)?;
    let diff = g.sub(lp, lq)?;
    let prod = g.mul(p, diff)?;
    Ok(g.sum(prod))
}

/// Symmetrized KL of the softmax-normalized arguments:
/// 1/2 (KL(a'||b') + KL(b'||a')).
pub fn js_divergence(g: &mut Graph, a: NodeId, b: NodeId) -> Result<NodeId> {
    check_same_width(g, a, b)?;
    let ap = g.softmax(a, 1)?;
    let bp = g.softmax(b, 1)?;
    let ab = kl_divergence(g, ap, bp)?;
    let ba = kl_divergence(g, bp, ap)?;
    let s = g.add(ab, ba)?;
    Ok(g.scale(s, 0.5))
}

fn mae_loss(g: &mut Graph, a: NodeId, b: NodeId) -> Result<NodeId> {
    check_same_width(g, a, b)?;
    let diff = g.sub(a, b)?;
    let ad = g.abs(diff);
    Ok(g.mean_all(ad))
}

/// 1 - cos(a, b), epsilon-guarded in the denominator.
fn cosine_loss(g: &mut Graph, a: NodeId, b: NodeId) -> Result<NodeId> {
    check_same_width(g, a, b)?;
    let prod = g.mul(a, b)?;
    let dot = g.sum(prod);
    let aa = g.mul(a, a)?;
    let bb = g.mul(b, b)?;
    let saa = g.sum(aa);
    let sbb = g.sum(bb);
    let na = g.sqrt(saa)?;
    let nb = g.sqrt(sbb)?;
    let denom = g.mul(na, nb)?;
    let eps = g.leaf(Tensor::scalar(LOG_EPS));
    let denom = g.add(denom, eps)?;
    let cos = g.div(dot, denom)?;
    let one = g.leaf(Tensor::scalar(1.0));
    g.sub(one, cos)
}

/// Similarity loss between two equal-width row vectors, per selected kind.
pub fn pair_loss(g: &mut Graph, kind: LossKind, a: NodeId, b: NodeId) -> Result<NodeId> {
    match kind {
        LossKind::Js => js_divergence(g, a, b),
        LossKind::Mae => mae_loss(g, a, b),
        LossKind::Cosine => cosine_loss(g, a, b),
    }
}

/// Forward differential loss between E_out and the (constant) teacher E_pre.
/// The teacher tensor enters as a fresh leaf, so no gradient can reach it.
pub fn forward_loss(
    g: &mut Graph,
    kind: LossKind,
    e_out: NodeId,
    e_pre: &Tensor,
) -> Result<NodeId> {
    let teacher = g.leaf(e_pre.clone());
    pair_loss(g, kind, e_out, teacher)
}

/// Backward reconstruction loss between D_out and E_all; gradients flow to
/// both sides.
pub fn backward_loss(g: &mut Graph, kind: LossKind, d_out: NodeId, e_all: NodeId) -> Result<NodeId> {
    pair_loss(g, kind, d_out, e_all)
}

/// Tag recovery loss between the tag digits and sigmoid(D_out[-4:]).
pub fn tag_loss(g: &mut Graph, kind: LossKind, tag: &[f64; 4], d_out: NodeId) -> Result<NodeId> {
    let j = g.value(d_out).cols();
    if j < 4 {
        return Err(NumericsError::Contract(format!(
            "decoder output width {j} is narrower than the tag"
        )));
    }
    let tail = g.slice_cols(d_out, j - 4, j)?;
    let decoded = g.sigmoid(tail);
    let target = g.leaf(Tensor::row(tag));
    pair_loss(g, kind, target, decoded)
}

/// Per-sample cross-entropy -ln(max(P[label], eps)) for a distribution row.
/// The clamp (rather than an epsilon shift) keeps the value exact for any
/// probability above the floor.
pub fn cls_loss(g: &mut Graph, probs: NodeId, label: usize) -> Result<NodeId> {
    let c = g.value(probs).cols();
    if label >= c {
        return Err(NumericsError::Contract(format!(
            "label {label} out of range for {c} classes"
        )));
    }
    let picked = g.slice_cols(probs, label, label + 1)?;
    let picked = g.clamp_min(picked, LOG_EPS);
    let lp = g.log_eps(picked, 0.0)?;
    let s = g.sum(lp);
    Ok(g.scale(s, -1.0))
}

/// Mean cross-entropy over a batch of distribution rows, no graph involved.
pub fn cls_loss_batch(probs: &Tensor, labels: &[usize]) -> Result<f64> {
    if probs.rows() != labels.len() {
        return Err(NumericsError::Contract(format!(
            "{} probability rows but {} labels",
            probs.rows(),
            labels.len()
        )));
    }
    let c = probs.cols();
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        if y >= c {
            return Err(NumericsError::Contract(format!(
                "label {y} out of range for {c} classes"
            )));
        }
        total -= probs.data()[i * c + y].max(LOG_EPS).ln();
    }
    Ok(total / labels.len() as f64)
}

/// Weighted total: cls + l1*forward + l2*backward + l3*tag. Disabled terms
/// are passed as `None` and contribute nothing.
pub fn total_loss(
    g: &mut Graph,
    cls: NodeId,
    forward: Option<NodeId>,
    backward: Option<NodeId>,
    tag: Option<NodeId>,
    w: &LossWeights,
) -> Result<NodeId> {
    let mut acc = cls;
    for (term, lambda) in [
        (forward, w.lambda1),
        (backward, w.lambda2),
        (tag, w.lambda3),
    ] {
        if let Some(t) = term {
            let scaled = g.scale(t, lambda);
            acc = g.add(acc, scaled)?;
        }
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_of(g: &Graph, id: NodeId) -> f64 {
        g.value(id).item().unwrap()
    }

    #[test]
    fn kl_of_identical_distributions_is_zero() {
        let mut g = Graph::new();
        let p = g.leaf(Tensor::row(&[0.2, 0.3, 0.5]));
        let q = g.leaf(Tensor::row(&[0.2, 0.3, 0.5]));
        let kl = kl_divergence(&mut g, p, q).unwrap();
        assert!(scalar_of(&g, kl).abs() < 1e-9);
    }

    #[test]
    fn kl_closed_form_point_mass_vs_uniform() {
        let mut g = Graph::new();
        let p = g.leaf(Tensor::row(&[1.0, 0.0]));
        let q = g.leaf(Tensor::row(&[0.5, 0.5]));
        let kl = kl_divergence(&mut g, p, q).unwrap();
        assert!((scalar_of(&g, kl) - 2.0f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn kl_is_asymmetric() {
        let mut g = Graph::new();
        let p = g.leaf(Tensor::row(&[0.9, 0.1]));
        let q = g.leaf(Tensor::row(&[0.5, 0.5]));
        let pq = kl_divergence(&mut g, p, q).unwrap();
        let qp = kl_divergence(&mut g, q, p).unwrap();
        assert!((scalar_of(&g, pq) - scalar_of(&g, qp)).abs() > 1e-3);
    }

    #[test]
    fn kl_rejects_non_distributions() {
        let mut g = Graph::new();
        let p = g.leaf(Tensor::row(&[2.0, 1.0]));
        let q = g.leaf(Tensor::row(&[0.5, 0.5]));
        assert!(kl_divergence(&mut g, p, q).is_err());
    }

    #[test]
    fn js_zero_on_equal_inputs_and_symmetric() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::row(&[0.3, -1.0, 2.0]));
        let b = g.leaf(Tensor::row(&[0.3, -1.0, 2.0]));
        let js = js_divergence(&mut g, a, b).unwrap();
        assert!(scalar_of(&g, js).abs() < 1e-12);

        let x = g.leaf(Tensor::row(&[1.0, -0.5, 0.7]));
        let y = g.leaf(Tensor::row(&[-2.0, 0.1, 0.3]));
        let xy = js_divergence(&mut g, x, y).unwrap();
        let yx = js_divergence(&mut g, y, x).unwrap();
        assert!((scalar_of(&g, xy) - scalar_of(&g, yx)).abs() < 1e-12);
        assert!(scalar_of(&g, xy) > 0.0);
    }

    #[test]
    fn js_of_extreme_two_point_distributions_approaches_ln2() {
        // softmax of (+s, -s) with large s gives (1-delta, delta)
        let mut g = Graph::new();
        let a = g.leaf(Tensor::row(&[20.0, -20.0]));
        let b = g.leaf(Tensor::row(&[-20.0, 20.0]));
        let js = js_divergence(&mut g, a, b).unwrap();
        // symmetrized KL of near-point-masses grows like (1-2d)*ln((1-d)/d);
        // with d = e^{-40} + eps effects this is far above ln 2 and finite
        let v = scalar_of(&g, js);
        assert!(v.is_finite() && v > 2.0f64.ln());
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::row(&[0.5, 0.5]));
        let b = g.leaf(Tensor::row(&[0.3, 0.3, 0.4]));
        assert!(kl_divergence(&mut g, a, b).is_err());
        assert!(js_divergence(&mut g, a, b).is_err());
    }

    #[test]
    fn tag_loss_saturated_sigmoid_recovers_tag() {
        let mut g = Graph::new();
        let d_out = g.leaf(Tensor::row(&[0.1, 0.2, 20.0, -20.0, -20.0, -20.0]));
        let l = tag_loss(&mut g, LossKind::Mae, &[1.0, 0.0, 0.0, 0.0], d_out).unwrap();
        assert!(scalar_of(&g, l) < 1e-8);
    }

    #[test]
    fn tag_loss_at_zero_logits_is_half() {
        let mut g = Graph::new();
        let d_out = g.leaf(Tensor::row(&[0.0; 6]));
        let l = tag_loss(&mut g, LossKind::Mae, &[1.0, 0.0, 0.0, 0.0], d_out).unwrap();
        assert!((scalar_of(&g, l) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn tag_loss_bounded_by_one() {
        let mut g = Graph::new();
        let d_out = g.leaf(Tensor::row(&[50.0, -50.0, 50.0, -50.0, 50.0, -50.0]));
        let l = tag_loss(&mut g, LossKind::Mae, &[1.0, 1.0, 1.0, 1.0], d_out).unwrap();
        let v = scalar_of(&g, l);
        assert!((0.0..=1.0).contains(&v));
    }

    #[test]
    fn cls_loss_perfect_prediction_is_zero() {
        let mut g = Graph::new();
        let p = g.leaf(Tensor::row(&[0.0, 1.0, 0.0]));
        let l = cls_loss(&mut g, p, 1).unwrap();
        assert!(scalar_of(&g, l).abs() < 1e-7);
    }

    #[test]
    fn cls_loss_uniform_three_classes_is_ln3() {
        let mut g = Graph::new();
        let third = 1.0 / 3.0;
        let p = g.leaf(Tensor::row(&[third, third, third]));
        let l = cls_loss(&mut g, p, 2).unwrap();
        assert!((scalar_of(&g, l) - 3.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cls_loss_rejects_out_of_range_label() {
        let mut g = Graph::new();
        let p = g.leaf(Tensor::row(&[0.5, 0.5]));
        assert!(cls_loss(&mut g, p, 2).is_err());
    }

    #[test]
    fn batch_cls_loss_is_mean_of_per_sample() {
        let probs = Tensor::matrix(2, 2, vec![0.8, 0.2, 0.4, 0.6]).unwrap();
        let whole = cls_loss_batch(&probs, &[0, 1]).unwrap();
        let first = -(0.8f64.ln());
        let second = -(0.6f64.ln());
        assert!((whole - (first + second) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn total_loss_weighted_sum() {
        let mut g = Graph::new();
        let cls = g.leaf(Tensor::scalar(1.0));
        let f = g.leaf(Tensor::scalar(2.0));
        let b = g.leaf(Tensor::scalar(3.0));
        let t = g.leaf(Tensor::scalar(4.0));
        let w = LossWeights::default();
        let total = total_loss(&mut g, cls, Some(f), Some(b), Some(t), &w).unwrap();
        assert!((scalar_of(&g, total) - 1.9).abs() < 1e-12);

        let zero = LossWeights {
            lambda1: 0.0,
            lambda2: 0.0,
            lambda3: 0.0,
        };
        let total = total_loss(&mut g, cls, Some(f), Some(b), Some(t), &zero).unwrap();
        assert!((scalar_of(&g, total) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn forward_loss_reaches_student_side_only() {
        // The teacher representation enters as a parentless leaf, so backward
        // stops there; only the student-side input receives a usable gradient.
        let mut g = Graph::new();
        let e_out = g.leaf(Tensor::row(&[0.1, 0.4, -0.2]));
        let e_pre = Tensor::row(&[0.3, -0.1, 0.5]);
        let l = forward_loss(&mut g, LossKind::Js, e_out, &e_pre).unwrap();
        g.backward(l).unwrap();
        let grad = g.grad(e_out).unwrap();
        assert!(grad.data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn divergence_gradients_pass_finite_differences() {
        use crate::gradcheck::{finite_diff_check, NamedParams};
        for kind in [LossKind::Js, LossKind::Mae, LossKind::Cosine] {
            let params: NamedParams = vec![
                ("a".into(), Tensor::row(&[0.4, -0.3, 0.8, 0.1])),
                ("b".into(), Tensor::row(&[-0.2, 0.5, 0.3, -0.7])),
            ];
            let f = move |p: &NamedParams| {
                let mut g = Graph::new();
                let a = g.leaf(p[0].1.clone());
                let b = g.leaf(p[1].1.clone());
                let l = pair_loss(&mut g, kind, a, b)?;
                g.value(l).item()
            };
            let mut g = Graph::new();
            let a = g.leaf(params[0].1.clone());
            let b = g.leaf(params[1].1.clone());
            let l = pair_loss(&mut g, kind, a, b).unwrap();
            g.backward(l).unwrap();
            let analytic: NamedParams = vec![
                ("a".into(), g.grad(a).unwrap().clone()),
                ("b".into(), g.grad(b).unwrap().clone()),
            ];
            let err = finite_diff_check(&f, &params, &analytic, 1e-6).unwrap();
            assert!(err < 1e-4, "{kind:?}: err = {err}");
        }
    }
}
