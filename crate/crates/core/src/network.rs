//! Forward passes of the region network: per-frame self-attention blocks,
//! bidirectional cross-frame aggregation, the single-query decoder, the
//! detection heads and the training loss.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::mlp::{Activation, DenseLayer, Mlp};
use crate::model::{normalize_yaw, Proposal};
use crate::par;
use crate::tensor::{dot, softmax_inplace, Matrix, NnError};

/// Number of box residual channels: center (3), log sizes (3), yaw (1).
pub const BOX_RESIDUALS: usize = 7;

fn expect_linear(name: &str, m: &Mlp, input: usize, output: usize) -> Result<(), NnError> {
    if m.input_width() != input || m.output_width() != output {
        return Err(NnError::InvalidWeights(format!(
            "{name}: expected {input}->{output}, got {}->{}",
            m.input_width(),
            m.output_width()
        )));
    }
    Ok(())
}

fn check_heads(d: usize, heads: usize) -> Result<(), NnError> {
    if heads == 0 || !d.is_multiple_of(heads) {
        return Err(NnError::InvalidWeights(format!(
            "{heads} heads do not divide width {d}"
        )));
    }
    Ok(())
}

/// Query/key/value/output projections of a multi-head attention layer.
/// Head `h` owns columns `h * D/H .. (h + 1) * D/H` of each projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionWeights {
    pub heads: usize,
    pub query: Mlp,
    pub key: Mlp,
    pub value: Mlp,
    pub output: Mlp,
}

impl AttentionWeights {
    pub fn seeded(d: usize, heads: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut lin = || Mlp::seeded(&[d, d], rng);
        Self {
            heads,
            query: lin(),
            key: lin(),
            value: lin(),
            output: lin(),
        }
    }

    pub fn width(&self) -> usize {
        self.query.input_width()
    }

    pub fn validate(&self, d: usize) -> Result<(), NnError> {
        check_heads(d, self.heads)?;
        for (name, m) in [
            ("query", &self.query),
            ("key", &self.key),
            ("value", &self.value),
            ("output", &self.output),
        ] {
            expect_linear(name, m, d, d)?;
        }
        Ok(())
    }
}

/// Parameters of one learning block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockWeights {
    pub attention: AttentionWeights,
    /// `D -> 4D -> D` with ReLU.
    pub ffn: Mlp,
    /// Pointwise `2D -> D` maps, one per path, shared across frames.
    pub bifa_forward: Mlp,
    pub bifa_backward: Mlp,
}

impl BlockWeights {
    pub fn seeded(d: usize, heads: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            attention: AttentionWeights::seeded(d, heads, rng),
            ffn: Mlp::seeded(&[d, 4 * d, d], rng),
            bifa_forward: Mlp::seeded(&[2 * d, d], rng),
            bifa_backward: Mlp::seeded(&[2 * d, d], rng),
        }
    }

    pub fn width(&self) -> usize {
        self.attention.width()
    }

    pub fn validate(&self, d: usize) -> Result<(), NnError> {
        self.attention.validate(d)?;
        expect_linear("ffn", &self.ffn, d, d)?;
        expect_linear("bifa_forward", &self.bifa_forward, 2 * d, d)?;
        expect_linear("bifa_backward", &self.bifa_backward, 2 * d, d)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderWeights {
    /// Learnable query vector.
    pub query_vector: Vec<f64>,
    pub attention: AttentionWeights,
    pub ffn: Mlp,
}

impl DecoderWeights {
    pub fn seeded(d: usize, heads: usize, rng: &mut ChaCha8Rng) -> Self {
        let query_vector = Mlp::seeded(&[1, d], rng).layers()[0].bias.clone();
        Self {
            query_vector,
            attention: AttentionWeights::seeded(d, heads, rng),
            ffn: Mlp::seeded(&[d, 4 * d, d], rng),
        }
    }

    pub fn validate(&self, d: usize) -> Result<(), NnError> {
        if self.query_vector.len() != d || self.query_vector.iter().any(|v| !v.is_finite()) {
            return Err(NnError::InvalidWeights(format!(
                "query vector must hold {d} finite values"
            )));
        }
        self.attention.validate(d)?;
        expect_linear("decoder ffn", &self.ffn, d, d)
    }
}

/// Single linear heads over the concatenated per-frame decodings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadWeights {
    pub confidence: Mlp,
    pub regression: Mlp,
}

impl HeadWeights {
    pub fn seeded(input: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            confidence: Mlp::seeded(&[input, 1], rng),
            regression: Mlp::seeded(&[input, BOX_RESIDUALS], rng),
        }
    }

    pub fn validate(&self, input: usize) -> Result<(), NnError> {
        expect_linear("confidence head", &self.confidence, input, 1)?;
        expect_linear("regression head", &self.regression, input, BOX_RESIDUALS)
    }
}

/// Scaled dot-product attention of `queries` over `context` rows.
pub fn multi_head_attention(
    queries: &Matrix,
    context: &Matrix,
    w: &AttentionWeights,
) -> Result<Matrix, NnError> {
    let q = w.query.forward(queries)?;
    let k = w.key.forward(context)?;
    let v = w.value.forward(context)?;
    let d = q.cols();
    check_heads(d, w.heads)?;
    let dh = d / w.heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = Matrix::zeros(q.rows(), d);
    let mut scores = vec![0.0; k.rows()];
    for h in 0..w.heads {
        let cols = h * dh..(h + 1) * dh;
        for i in 0..q.rows() {
            let qi = &q.row(i)[cols.clone()];
            for (j, s) in scores.iter_mut().enumerate() {
                *s = dot(qi, &k.row(j)[cols.clone()]) * scale;
            }
            softmax_inplace(&mut scores);
            let oi = &mut out.row_mut(i)[cols.clone()];
            for (j, &a) in scores.iter().enumerate() {
                for (o, &vv) in oi.iter_mut().zip(&v.row(j)[cols.clone()]) {
                    *o += a * vv;
                }
            }
        }
    }
    w.output.forward(&out)
}

/// Self-attention with residual, then FFN with residual.
pub fn mhsa_ffn(features: &Matrix, w: &BlockWeights) -> Result<Matrix, NnError> {
    if features.cols() != w.width() {
        return Err(NnError::ShapeMismatch(format!(
            "features have {} channels, block expects {}",
            features.cols(),
            w.width()
        )));
    }
    let y = features.add(&multi_head_attention(features, features, &w.attention)?)?;
    y.add(&w.ffn.forward(&y)?)
}

/// Column-wise max broadcast back to every row.
pub fn maxpool_repeat(features: &Matrix) -> Matrix {
    Matrix::repeat_row(&features.column_max(), features.rows())
}

/// Context used at the last frame of the backward path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackwardBoundary {
    /// The frame's own pooled context, mirroring the forward path's first frame.
    #[default]
    SelfContext,
    /// Zeros in place of the context.
    ZeroContext,
}

fn uniform_shape(seq: &[Matrix]) -> Result<(usize, usize), NnError> {
    let first = seq.first().ok_or(NnError::EmptySequence)?.shape();
    if let Some(bad) = seq.iter().find(|m| m.shape() != first) {
        return Err(NnError::ShapeMismatch(format!(
            "frame shapes differ: {first:?} vs {:?}",
            bad.shape()
        )));
    }
    Ok(first)
}

fn aggregate(own: &Matrix, neighbour: &Matrix, conv: &Mlp) -> Result<Matrix, NnError> {
    conv.forward(&own.hcat(&maxpool_repeat(neighbour))?)
}

/// Bidirectional feature aggregation over frames `t = 1..=T` (slice order).
///
/// Forward: `h_F[t] = conv_F([f[t] | ctx(f[t-1])])`, with `f[1]` using its own
/// context. Backward: `h_B[t] = conv_B([h_F[t] | ctx(h_F[t+1])])`, with the
/// last frame handled by `boundary`. Each frame reads only its neighbours, so
/// both paths run in parallel across frames.
pub fn bifa(
    seq: &[Matrix],
    w: &BlockWeights,
    boundary: BackwardBoundary,
) -> Result<Vec<Matrix>, NnError> {
    let (_, d) = uniform_shape(seq)?;
    if d != w.width() {
        return Err(NnError::ShapeMismatch(format!(
            "features have {d} channels, block expects {}",
            w.width()
        )));
    }
    let idx: Vec<usize> = (0..seq.len()).collect();
    let forward = par::try_map(&idx, |&t| {
        let prev = if t == 0 { &seq[0] } else { &seq[t - 1] };
        aggregate(&seq[t], prev, &w.bifa_forward)
    })?;
    let last = seq.len() - 1;
    par::try_map(&idx, |&t| {
        if t < last {
            aggregate(&forward[t], &forward[t + 1], &w.bifa_backward)
        } else {
            match boundary {
                BackwardBoundary::SelfContext => {
                    aggregate(&forward[t], &forward[t], &w.bifa_backward)
                }
                BackwardBoundary::ZeroContext => {
                    let zeros = Matrix::zeros(forward[t].rows(), d);
                    w.bifa_backward.forward(&forward[t].hcat(&zeros)?)
                }
            }
        }
    })
}

/// Per-frame self-attention and FFN, then cross-frame aggregation.
pub fn learning_block(
    seq: &[Matrix],
    w: &BlockWeights,
    boundary: BackwardBoundary,
) -> Result<Vec<Matrix>, NnError> {
    uniform_shape(seq)?;
    let refined = par::try_map(seq, |f| mhsa_ffn(f, w))?;
    bifa(&refined, w, boundary)
}

/// Single-query cross-attention with residual against the query, then FFN
/// with residual. Returns one `D`-vector.
pub fn decode(features: &Matrix, w: &DecoderWeights) -> Result<Vec<f64>, NnError> {
    let d = w.query_vector.len();
    if features.cols() != d {
        return Err(NnError::ShapeMismatch(format!(
            "features have {} channels, decoder expects {d}",
            features.cols()
        )));
    }
    if features.rows() == 0 {
        return Err(NnError::ShapeMismatch(
            "decoder needs at least one point".into(),
        ));
    }
    let q = Matrix::from_vec(1, d, w.query_vector.clone())?;
    let attended = q.add(&multi_head_attention(&q, features, &w.attention)?)?;
    Ok(attended.add(&w.ffn.forward(&attended)?)?.data().to_vec())
}

/// Raw confidence logit and box residuals from per-frame decodings.
pub fn apply_heads(
    decoded: &[Vec<f64>],
    w: &HeadWeights,
) -> Result<(f64, [f64; BOX_RESIDUALS]), NnError> {
    let concat = decoded.concat();
    let logit = w.confidence.forward_vec(&concat)?[0];
    let reg = w.regression.forward_vec(&concat)?;
    let mut out = [0.0; BOX_RESIDUALS];
    out.copy_from_slice(&reg);
    Ok((logit, out))
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy on a logit, stable for large magnitudes.
pub fn bce_with_logit(logit: f64, target: f64) -> f64 {
    logit.max(0.0) - logit * target + (-logit.abs()).exp().ln_1p()
}

/// Smooth L1 with transition point 1.
pub fn smooth_l1(x: f64) -> f64 {
    let a = x.abs();
    if a < 1.0 {
        0.5 * a * a
    } else {
        a - 0.5
    }
}

/// Regression target of `target` relative to `anchor`: center offsets over
/// the anchor's plan diagonal, log size ratios, and wrapped yaw difference.
pub fn encode_box_residual(anchor: &Proposal, target: &Proposal) -> [f64; BOX_RESIDUALS] {
    let diag = anchor.plan_diagonal();
    let (a, t) = (anchor.center(), target.center());
    let (ad, td) = (anchor.dims(), target.dims());
    [
        (t[0] - a[0]) / diag,
        (t[1] - a[1]) / diag,
        (t[2] - a[2]) / diag,
        (td[0] / ad[0]).ln(),
        (td[1] / ad[1]).ln(),
        (td[2] / ad[2]).ln(),
        normalize_yaw(target.yaw() - anchor.yaw()),
    ]
}

/// Applies predicted residuals to an anchor box.
pub fn decode_box_residual(
    anchor: &Proposal,
    r: &[f64; BOX_RESIDUALS],
) -> Result<Proposal, crate::model::ModelError> {
    let diag = anchor.plan_diagonal();
    let c = anchor.center();
    let d = anchor.dims();
    Proposal::new(
        [c[0] + r[0] * diag, c[1] + r[1] * diag, c[2] + r[2] * diag],
        [d[0] * r[3].exp(), d[1] * r[4].exp(), d[2] * r[5].exp()],
        anchor.yaw() + r[6],
        anchor.velocity(),
        anchor.score(),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossTargets {
    /// Confidence targets in `[0, 1]`, one per proposal.
    pub confidence: Vec<f64>,
    /// Regression targets, one per proposal.
    pub residuals: Vec<[f64; BOX_RESIDUALS]>,
    /// Proposals contributing to the regression term.
    pub positive: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub confidence: f64,
    pub regression: f64,
    pub total: f64,
}

/// `L_conf + alpha * L_reg`: mean BCE over all proposals plus mean smooth L1
/// over the residual channels of positive proposals (zero without positives).
pub fn total_loss(
    logits: &[f64],
    residuals: &[[f64; BOX_RESIDUALS]],
    targets: &LossTargets,
    alpha: f64,
) -> Result<LossBreakdown, NnError> {
    let n = logits.len();
    if residuals.len() != n
        || targets.confidence.len() != n
        || targets.residuals.len() != n
        || targets.positive.len() != n
    {
        return Err(NnError::AlignmentMismatch(format!(
            "{n} logits, {} residuals, {} confidence targets, {} residual targets, {} positive flags",
            residuals.len(),
            targets.confidence.len(),
            targets.residuals.len(),
            targets.positive.len()
        )));
    }
    if alpha.is_nan() || alpha < 0.0 {
        return Err(NnError::AlignmentMismatch(format!(
            "alpha must be non-negative, got {alpha}"
        )));
    }
    let confidence = if n == 0 {
        0.0
    } else {
        logits
            .iter()
            .zip(&targets.confidence)
            .map(|(&x, &y)| bce_with_logit(x, y))
            .sum::<f64>()
            / n as f64
    };
    let positives: Vec<usize> = (0..n).filter(|&i| targets.positive[i]).collect();
    let regression = if positives.is_empty() {
        0.0
    } else {
        let sum: f64 = positives
            .iter()
            .flat_map(|&i| {
                residuals[i]
                    .iter()
                    .zip(&targets.residuals[i])
                    .map(|(p, t)| smooth_l1(p - t))
            })
            .sum();
        sum / (positives.len() * BOX_RESIDUALS) as f64
    };
    Ok(LossBreakdown {
        confidence,
        regression,
        total: confidence + alpha * regression,
    })
}

/// A `2D -> D` pointwise map with every weight equal to `value` and zero bias.
pub fn constant_conv(d: usize, value: f64) -> Mlp {
    Mlp::linear(DenseLayer {
        rows: d,
        cols: 2 * d,
        weight: vec![value; 2 * d * d],
        bias: vec![0.0; d],
        act: Activation::None,
    })
    .expect("constant conv is well formed")
}
