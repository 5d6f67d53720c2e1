//! End-to-end forward pass: propagate, pool, encode, refine, decode, head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoding::{
    fuse_embeddings, geometric_embedding, motion_embedding, GEOMETRIC_INPUT_WIDTH,
    MOTION_INPUT_WIDTH,
};
use crate::mlp::Mlp;
use crate::model::{ModelError, Proposal, SequenceWindow};
use crate::motion::{propagate_all, MotionError, PropagationConfig};
use crate::network::{
    apply_heads, decode, decode_box_residual, encode_box_residual, learning_block, sigmoid,
    total_loss, BackwardBoundary, BlockWeights, DecoderWeights, HeadWeights, LossBreakdown,
    LossTargets, BOX_RESIDUALS,
};
use crate::par;
use crate::pooling::{
    build_grids, draw, pool_optimized, stream_seed, Draw, PooledProposal, PoolingError,
};
use crate::tensor::{Matrix, NnError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Motion(#[from] MotionError),
    #[error(transparent)]
    Pooling(#[from] PoolingError),
    #[error(transparent)]
    Network(#[from] NnError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub points_per_proposal: usize,
    pub feature_dim: usize,
    pub heads: usize,
    pub blocks: usize,
    pub backward_boundary: BackwardBoundary,
    /// Regression weight in the total loss.
    pub alpha: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            points_per_proposal: 128,
            feature_dim: 256,
            heads: 8,
            blocks: 3,
            backward_boundary: BackwardBoundary::SelfContext,
            alpha: 1.0,
        }
    }
}

/// All learnable parameters, serialised as one JSON document whose leaves use
/// the MLP weight format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkWeights {
    pub geometric: Mlp,
    pub motion: Mlp,
    pub blocks: Vec<BlockWeights>,
    pub decoder: DecoderWeights,
    pub heads: HeadWeights,
}

impl NetworkWeights {
    /// Seeded uniform weights for a window of `frames` frames.
    pub fn seeded(config: &PipelineConfig, frames: usize, seed: u64) -> Self {
        let d = config.feature_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            geometric: Mlp::seeded(&[GEOMETRIC_INPUT_WIDTH, d, d], &mut rng),
            motion: Mlp::seeded(&[MOTION_INPUT_WIDTH, d, d], &mut rng),
            blocks: (0..config.blocks)
                .map(|_| BlockWeights::seeded(d, config.heads, &mut rng))
                .collect(),
            decoder: DecoderWeights::seeded(d, config.heads, &mut rng),
            heads: HeadWeights::seeded(frames * d, &mut rng),
        }
    }

    pub fn validate(&self, config: &PipelineConfig, frames: usize) -> Result<(), NnError> {
        let d = config.feature_dim;
        for (name, mlp, input) in [
            ("geometric", &self.geometric, GEOMETRIC_INPUT_WIDTH),
            ("motion", &self.motion, MOTION_INPUT_WIDTH),
        ] {
            if mlp.input_width() != input || mlp.output_width() != d {
                return Err(NnError::InvalidWeights(format!(
                    "{name} embedding: expected {input}->{d}, got {}->{}",
                    mlp.input_width(),
                    mlp.output_width()
                )));
            }
        }
        if self.blocks.len() != config.blocks {
            return Err(NnError::InvalidWeights(format!(
                "{} blocks configured, {} in weights",
                config.blocks,
                self.blocks.len()
            )));
        }
        for b in &self.blocks {
            b.validate(d)?;
        }
        self.decoder.validate(d)?;
        self.heads.validate(frames * d)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeadOutput {
    pub logit: f64,
    pub residuals: [f64; BOX_RESIDUALS],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProposalOutput {
    pub proposal_id: usize,
    pub confidence: f64,
    pub logit: f64,
    pub residuals: [f64; BOX_RESIDUALS],
    pub refined_box: Proposal,
    /// Norm of each frame's decoded vector, `t = 1..=T`.
    pub e_norms: Vec<f64>,
    /// Head outputs after every block; the last equals the final prediction.
    #[serde(skip)]
    pub per_block: Vec<HeadOutput>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PipelineLoss {
    pub confidence: f64,
    pub regression: f64,
    pub total: f64,
    /// Sum of total losses over every block's outputs.
    pub intermediate_total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineOutput {
    pub points_per_proposal: usize,
    pub feature_dim: usize,
    pub heads: usize,
    pub frames: usize,
    pub proposals: Vec<ProposalOutput>,
    pub loss: Option<PipelineLoss>,
}

/// Proposal features for every pooled frame, `t` ascending.
pub fn encode_proposal(
    pooled: &PooledProposal,
    proposal: &Proposal,
    weights: &NetworkWeights,
) -> Result<Vec<Matrix>, NnError> {
    pooled
        .frames
        .iter()
        .map(|f| {
            let points = f.points();
            let dt = f.region.delta_t;
            let g = geometric_embedding(&points, &proposal.backtracked(dt), &weights.geometric)?;
            let m = motion_embedding(&points, proposal, dt, &weights.motion)?;
            Ok(fuse_embeddings(&g, &m)?.values)
        })
        .collect()
}

/// Encoder, learning blocks, decoder and heads for one proposal.
pub fn forward_proposal(
    pooled: &PooledProposal,
    proposal: &Proposal,
    weights: &NetworkWeights,
    config: &PipelineConfig,
) -> Result<ProposalOutput, PipelineError> {
    let mut seq = encode_proposal(pooled, proposal, weights)?;
    let mut per_block = Vec::with_capacity(weights.blocks.len());
    let mut decoded = Vec::new();
    for block in &weights.blocks {
        seq = learning_block(&seq, block, config.backward_boundary)?;
        decoded = par::try_map(&seq, |h| decode(h, &weights.decoder))?;
        let (logit, residuals) = apply_heads(&decoded, &weights.heads)?;
        per_block.push(HeadOutput { logit, residuals });
    }
    if per_block.is_empty() {
        decoded = par::try_map(&seq, |h| decode(h, &weights.decoder))?;
        let (logit, residuals) = apply_heads(&decoded, &weights.heads)?;
        per_block.push(HeadOutput { logit, residuals });
    }
    let last = per_block.last().cloned().expect("at least one head output");
    Ok(ProposalOutput {
        proposal_id: pooled.proposal_id,
        confidence: sigmoid(last.logit),
        logit: last.logit,
        residuals: last.residuals,
        refined_box: decode_box_residual(proposal, &last.residuals)?,
        e_norms: decoded
            .iter()
            .map(|e| e.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect(),
        per_block,
    })
}

/// Confidence 1 and a regression target for proposals whose center lies
/// within half a plan diagonal of a truth box; confidence 0 otherwise.
pub fn match_targets(proposals: &[Proposal], truth: &[Proposal]) -> LossTargets {
    let mut targets = LossTargets {
        confidence: Vec::with_capacity(proposals.len()),
        residuals: Vec::with_capacity(proposals.len()),
        positive: Vec::with_capacity(proposals.len()),
    };
    for p in proposals {
        let c = p.center();
        let best = truth
            .iter()
            .map(|t| {
                let tc = t.center();
                ((tc[0] - c[0]).hypot(tc[1] - c[1]), t)
            })
            .filter(|(dist, _)| *dist < p.plan_diagonal() / 2.0)
            .min_by(|a, b| a.0.total_cmp(&b.0));
        match best {
            Some((_, t)) => {
                targets.confidence.push(1.0);
                targets.residuals.push(encode_box_residual(p, t));
                targets.positive.push(true);
            }
            None => {
                targets.confidence.push(0.0);
                targets.residuals.push([0.0; BOX_RESIDUALS]);
                targets.positive.push(false);
            }
        }
    }
    targets
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub gamma: f64,
    pub voxel_size: f64,
    pub points_per_voxel: usize,
    pub seed: u64,
    /// Shuffle every pooled point set before encoding.
    pub permute_points: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            gamma: 1.1,
            voxel_size: 0.4,
            points_per_voxel: 32,
            seed: 0,
            permute_points: false,
        }
    }
}

const PERMUTE_SALT: u64 = 0x5e_ed0f_9e47;

fn permute(pooled: &mut PooledProposal, seed: u64) {
    for f in &mut pooled.frames {
        let n = f.entries.len();
        if let Draw::Picks(order) = draw(
            n,
            n,
            stream_seed(seed ^ PERMUTE_SALT, pooled.proposal_id, f.frame_index),
        ) {
            f.entries = order.iter().map(|&(i, _)| f.entries[i]).collect();
        }
    }
}

/// Full forward pipeline over a window whose frames are `1..=T`.
pub fn run_pipeline(
    window: &SequenceWindow,
    proposals: &[Proposal],
    truth: Option<&[Proposal]>,
    weights: &NetworkWeights,
    config: &PipelineConfig,
    options: &RunOptions,
) -> Result<PipelineOutput, PipelineError> {
    let frames = window.current_index() as usize;
    weights.validate(config, frames)?;
    let propagation = PropagationConfig::new(options.gamma, window.current_index())?;
    let regions = propagate_all(proposals, &propagation)?;
    let grids = build_grids(window, options.voxel_size, options.points_per_voxel)?;
    let mut pooled = pool_optimized(
        window,
        &grids,
        &regions,
        config.points_per_proposal,
        options.seed,
    )?;
    if options.permute_points {
        for p in &mut pooled {
            permute(p, options.seed);
        }
    }
    let outputs = par::try_map(&pooled, |p| {
        forward_proposal(p, &proposals[p.proposal_id], weights, config)
    })?;
    let loss = truth
        .map(|truth| -> Result<PipelineLoss, NnError> {
            let targets = match_targets(proposals, truth);
            let head_loss = |block: usize| -> Result<LossBreakdown, NnError> {
                let logits: Vec<f64> = outputs.iter().map(|o| o.per_block[block].logit).collect();
                let residuals: Vec<_> = outputs
                    .iter()
                    .map(|o| o.per_block[block].residuals)
                    .collect();
                total_loss(&logits, &residuals, &targets, config.alpha)
            };
            let blocks = outputs.first().map_or(0, |o| o.per_block.len());
            let last = if blocks == 0 {
                total_loss(&[], &[], &match_targets(&[], truth), config.alpha)?
            } else {
                head_loss(blocks - 1)?
            };
            let intermediate_total = (0..blocks)
                .map(|b| head_loss(b).map(|l| l.total))
                .sum::<Result<f64, _>>()?;
            Ok(PipelineLoss {
                confidence: last.confidence,
                regression: last.regression,
                total: last.total,
                intermediate_total,
            })
        })
        .transpose()?;
    Ok(PipelineOutput {
        points_per_proposal: config.points_per_proposal,
        feature_dim: config.feature_dim,
        heads: config.heads,
        frames,
        proposals: outputs,
        loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Point3, PointCloudFrame};

    fn small_config() -> PipelineConfig {
        PipelineConfig {
            points_per_proposal: 16,
            feature_dim: 16,
            heads: 4,
            ..PipelineConfig::default()
        }
    }

    fn scene(frames: u32) -> (SequenceWindow, Vec<Proposal>) {
        let p = Proposal::new([0.0, 0.0, 0.8], [2.0, 4.0, 1.6], 0.2, [1.0, 0.5], 0.9).unwrap();
        let window = SequenceWindow::new(
            (1..=frames)
                .map(|t| {
                    let dt = f64::from(frames - t);
                    let pts = (0..60)
                        .map(|i| {
                            let a = f64::from(i) * 0.37;
                            Point3::new(
                                -dt + a.cos() * 1.2,
                                -0.5 * dt + a.sin() * 1.8,
                                0.2 + 0.02 * f64::from(i),
                                0.5,
                            )
                        })
                        .collect();
                    PointCloudFrame::with_mask(t, pts, vec![true; 60])
                })
                .collect(),
        )
        .unwrap();
        (window, vec![p])
    }

    #[test]
    fn default_config_matches_published_sizes() {
        let c = PipelineConfig::default();
        assert_eq!(
            (c.points_per_proposal, c.feature_dim, c.heads, c.blocks),
            (128, 256, 8, 3)
        );
        let parsed: PipelineConfig = serde_json::from_str(r#"{"feature_dim": 64}"#).unwrap();
        assert_eq!(parsed.feature_dim, 64);
        assert_eq!(parsed.points_per_proposal, 128);
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"dims": 64}"#).is_err());
    }

    #[test]
    fn end_to_end_small() {
        let (w, props) = scene(3);
        let cfg = small_config();
        let weights = NetworkWeights::seeded(&cfg, 3, 11);
        let out = run_pipeline(
            &w,
            &props,
            Some(&props),
            &weights,
            &cfg,
            &RunOptions::default(),
        )
        .unwrap();
        assert_eq!(out.proposals.len(), 1);
        let p = &out.proposals[0];
        assert_eq!(p.e_norms.len(), 3);
        assert_eq!(p.per_block.len(), 3);
        assert!(p.confidence > 0.0 && p.confidence < 1.0);
        assert!(p.residuals.iter().all(|r| r.is_finite()));
        let loss = out.loss.unwrap();
        assert!(loss.total.is_finite() && loss.intermediate_total >= loss.total);
    }

    #[test]
    fn weights_json_round_trip_and_validation() {
        let cfg = small_config();
        let weights = NetworkWeights::seeded(&cfg, 2, 3);
        let json = serde_json::to_string(&weights).unwrap();
        let back: NetworkWeights = serde_json::from_str(&json).unwrap();
        assert_eq!(back, weights);
        assert!(weights.validate(&cfg, 2).is_ok());
        assert!(weights.validate(&cfg, 3).is_err());
    }

    #[test]
    fn permuted_points_give_same_outputs() {
        let (w, props) = scene(4);
        let cfg = small_config();
        let weights = NetworkWeights::seeded(&cfg, 4, 2);
        let base = run_pipeline(&w, &props, None, &weights, &cfg, &RunOptions::default()).unwrap();
        let opts = RunOptions {
            permute_points: true,
            ..RunOptions::default()
        };
        let permuted = run_pipeline(&w, &props, None, &weights, &cfg, &opts).unwrap();
        let (a, b) = (&base.proposals[0], &permuted.proposals[0]);
        assert!((a.confidence - b.confidence).abs() < 1e-9);
        assert!(a
            .residuals
            .iter()
            .zip(&b.residuals)
            .all(|(x, y)| (x - y).abs() < 1e-9));
    }

    #[test]
    fn match_targets_positive_and_negative() {
        let a = Proposal::new([0.0; 3], [2.0, 4.0, 1.5], 0.0, [0.0; 2], 1.0).unwrap();
        let far = Proposal::new([50.0, 0.0, 0.0], [2.0, 4.0, 1.5], 0.0, [0.0; 2], 1.0).unwrap();
        let t = match_targets(&[a, far], &[a]);
        assert_eq!(t.positive, vec![true, false]);
        assert_eq!(t.confidence, vec![1.0, 0.0]);
        assert_eq!(t.residuals[0], [0.0; 7]);
    }
}
