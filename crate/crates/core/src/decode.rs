//! Prior-normalized decoding.
//!
//! At every step the next-token log-probabilities of a conditional model are
//! corrected by those of an unconditional model,
//! `score[i] = log P(i | prefix, condition) - alpha * log P(i | prefix)`,
//! and the scores drive greedy or nucleus decoding. Scores are not
//! probabilities; nucleus sampling softmaxes them first, then truncates to the
//! smallest high-probability prefix reaching mass `p`, then renormalizes.
//!
//! Decoding is fixed-length: the toy vocabularies have no stop symbol.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bimodel::BiModel;
use crate::calibrate::{by_score_desc, cpn_cell};
use crate::error::{Error, Result};
use crate::logprob::{argmax_with_ties, log_sum_exp_nonempty, softmax, NEG_INF};
use crate::rng::Rng;
use crate::seq::{Token, TokenSeq};
use crate::world::GenerativeWorld;

/// A source of next-token distributions over a fixed vocabulary.
pub trait NextTokenModel: Sync {
    fn vocab(&self) -> usize;

    /// `log P(next | prefix, condition)` for every token of the vocabulary.
    /// Unconditional models ignore `condition`.
    fn next_log_probs(&self, condition: Option<&TokenSeq>, prefix: &[Token]) -> Result<Vec<f64>>;
}

/// The text head of a [`BiModel`], conditioned on a video.
pub struct ModelText<'a>(pub &'a BiModel);

/// The text head of a [`BiModel`] under its mask state: the model's text prior.
pub struct ModelTextPrior<'a>(pub &'a BiModel);

fn model_row(model: &BiModel, state: usize, prefix: &[Token]) -> Vec<f64> {
    let logits = model.text_logits(state, prefix.last().map(|t| t.index()));
    let lse = log_sum_exp_nonempty(logits);
    logits.iter().map(|z| z - lse).collect()
}

impl NextTokenModel for ModelText<'_> {
    fn vocab(&self) -> usize {
        self.0.config().text_vocab
    }

    fn next_log_probs(&self, condition: Option<&TokenSeq>, prefix: &[Token]) -> Result<Vec<f64>> {
        let video = condition.ok_or_else(|| Error::Usage("conditional text head needs a video".into()))?;
        // Validates the video against the model's dimensions.
        self.0.log_prior_video(video)?;
        Ok(model_row(self.0, self.0.video_condition_state(video), prefix))
    }
}

impl NextTokenModel for ModelTextPrior<'_> {
    fn vocab(&self) -> usize {
        self.0.config().text_vocab
    }

    fn next_log_probs(&self, _condition: Option<&TokenSeq>, prefix: &[Token]) -> Result<Vec<f64>> {
        Ok(model_row(self.0, self.0.text_mask_state(), prefix))
    }
}

/// Exact `P(t_i | t_{i-1}, summary(v))` of a world.
pub struct WorldText<'a>(pub &'a GenerativeWorld);

/// Exact `P(t_i | t_{<i})` of a world, marginalizing the video state given the prefix.
pub struct WorldTextPrior<'a>(pub &'a GenerativeWorld);

impl NextTokenModel for WorldText<'_> {
    fn vocab(&self) -> usize {
        self.0.config().text_vocab
    }

    fn next_log_probs(&self, condition: Option<&TokenSeq>, prefix: &[Token]) -> Result<Vec<f64>> {
        let video = condition.ok_or_else(|| Error::Usage("conditional world head needs a video".into()))?;
        self.0.exact_video_prior(video)?;
        let row = self.0.text_row(self.0.video_state(video), prefix.last().map(|t| t.index()));
        Ok(row.iter().map(|p| p.ln()).collect())
    }
}

impl NextTokenModel for WorldTextPrior<'_> {
    fn vocab(&self) -> usize {
        self.0.config().text_vocab
    }

    fn next_log_probs(&self, _condition: Option<&TokenSeq>, prefix: &[Token]) -> Result<Vec<f64>> {
        let world = self.0;
        let states = world.states();
        let vocab = self.vocab();
        // Start from the state marginal, then condition on the prefix.
        let mut log_w = vec![NEG_INF; states];
        for video in world.all_videos() {
            let s = world.video_state(&video);
            log_w[s] = crate::logprob::log_add_exp(log_w[s], world.exact_video_prior(&video)?.value());
        }
        let mut prev = None;
        for tok in prefix {
            for (s, w) in log_w.iter_mut().enumerate() {
                *w += world.text_row(s, prev)[tok.index()].ln();
            }
            prev = Some(tok.index());
        }
        let norm = log_sum_exp_nonempty(&log_w);
        if norm == NEG_INF {
            return Err(Error::UndefinedPosterior("text prefix has probability zero".into()));
        }
        let mut out = vec![NEG_INF; vocab];
        for (s, w) in log_w.iter().enumerate() {
            if *w == NEG_INF {
                continue;
            }
            for (i, p) in world.text_row(s, prev).iter().enumerate() {
                out[i] = crate::logprob::log_add_exp(out[i], w - norm + p.ln());
            }
        }
        Ok(out)
    }
}

/// One step's conditional and unconditional log-probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct NextTokenScores {
    conditional: Vec<f64>,
    unconditional: Vec<f64>,
    alpha: f64,
}

impl NextTokenScores {
    pub fn new(conditional: Vec<f64>, unconditional: Vec<f64>, alpha: f64) -> Result<Self> {
        if conditional.len() != unconditional.len() || conditional.is_empty() {
            return Err(Error::Dimension(format!(
                "conditional has {} entries, unconditional {}",
                conditional.len(),
                unconditional.len()
            )));
        }
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::Config(format!("alpha = {alpha} outside [0, 1]")));
        }
        for (name, xs) in [("conditional", &conditional), ("unconditional", &unconditional)] {
            if xs.iter().any(|x| x.is_nan()) {
                return Err(Error::Data(format!("{name} next-token log-probability is NaN")));
            }
            let total = log_sum_exp_nonempty(xs);
            if total.abs() > 1e-9 {
                return Err(Error::Data(format!("{name} next-token distribution sums to exp({total})")));
            }
        }
        Ok(NextTokenScores {
            conditional,
            unconditional,
            alpha,
        })
    }

    pub fn conditional(&self) -> &[f64] {
        &self.conditional
    }

    pub fn unconditional(&self) -> &[f64] {
        &self.unconditional
    }
}

/// `conditional[i] - alpha * unconditional[i]`; exactly `conditional` at `alpha = 0`.
pub fn cpn_scores(s: &NextTokenScores) -> Result<Vec<f64>> {
    s.conditional
        .iter()
        .zip(&s.unconditional)
        .map(|(&c, &u)| cpn_cell(c, u, s.alpha))
        .collect()
}

/// Softmax of `scores`, restricted to the smallest set of most probable
/// tokens with total mass `>= p`, renormalized.
///
/// Ties in probability are broken toward the lower token index. When every
/// token is kept the softmax is returned as is.
pub fn nucleus_distribution(scores: &[f64], p: f64) -> Result<Vec<f64>> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Config(format!("nucleus p = {p} outside (0, 1]")));
    }
    if scores.iter().all(|&s| s == NEG_INF) {
        return Err(Error::Data("every token has score -inf".into()));
    }
    let probs = softmax(scores);
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| by_score_desc((a, probs[a]), (b, probs[b])));
    let mut kept = 0;
    let mut mass = 0.0;
    for &i in &order {
        if probs[i] == 0.0 {
            break;
        }
        kept += 1;
        mass += probs[i];
        // Slack absorbs rounding when p = 1.
        if mass >= p - 1e-12 {
            break;
        }
    }
    if kept == order.iter().filter(|&&i| probs[i] > 0.0).count() {
        return Ok(probs);
    }
    let mut out = vec![0.0; probs.len()];
    for &i in &order[..kept] {
        out[i] = probs[i] / mass;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Strategy {
    Greedy,
    Nucleus { p: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    pub strategy: Strategy,
    pub max_len: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            strategy: Strategy::Greedy,
            max_len: 4,
            alpha: 1.0,
            seed: 0,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_len == 0 {
            return Err(Error::Config("max_len must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha = {} outside [0, 1]", self.alpha)));
        }
        if let Strategy::Nucleus { p } = self.strategy {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::Config(format!("nucleus p = {p} outside (0, 1]")));
            }
        }
        Ok(())
    }
}

fn check_models(cond: &dyn NextTokenModel, uncond: &dyn NextTokenModel) -> Result<()> {
    if cond.vocab() != uncond.vocab() {
        return Err(Error::Dimension(format!(
            "conditional vocabulary {} differs from unconditional {}",
            cond.vocab(),
            uncond.vocab()
        )));
    }
    Ok(())
}

/// Prior-normalized scores for the next token after `prefix`.
pub fn step_scores(cond: &dyn NextTokenModel, uncond: &dyn NextTokenModel, condition: &TokenSeq, prefix: &[Token], alpha: f64) -> Result<Vec<f64>> {
    let at = |e: Error| Error::Decode {
        position: prefix.len(),
        source: Box::new(e),
    };
    let c = cond.next_log_probs(Some(condition), prefix).map_err(at)?;
    let u = if alpha == 0.0 {
        // Not consulted at alpha = 0; keeps the unconditional model optional.
        c.clone()
    } else {
        uncond.next_log_probs(None, prefix).map_err(at)?
    };
    cpn_scores(&NextTokenScores::new(c, u, alpha).map_err(at)?).map_err(at)
}

fn finish(vocab: usize, tokens: Vec<Token>) -> Result<TokenSeq> {
    TokenSeq::text(vocab, tokens.into_iter().map(|t| t.0))
}

/// Argmax decoding of the prior-normalized scores (lowest index on ties).
pub fn greedy_decode(cond: &dyn NextTokenModel, uncond: &dyn NextTokenModel, condition: &TokenSeq, config: &DecodeConfig) -> Result<TokenSeq> {
    config.validate()?;
    check_models(cond, uncond)?;
    let mut prefix = Vec::with_capacity(config.max_len);
    for _ in 0..config.max_len {
        let scores = step_scores(cond, uncond, condition, &prefix, config.alpha)?;
        prefix.push(Token(argmax_with_ties(&scores, 0.0)? as u32));
    }
    finish(cond.vocab(), prefix)
}

/// Nucleus sampling of the prior-normalized scores.
pub fn nucleus_sample(cond: &dyn NextTokenModel, uncond: &dyn NextTokenModel, condition: &TokenSeq, config: &DecodeConfig, rng: &mut Rng) -> Result<TokenSeq> {
    config.validate()?;
    check_models(cond, uncond)?;
    let p = match config.strategy {
        Strategy::Nucleus { p } => p,
        Strategy::Greedy => 1.0,
    };
    let mut prefix = Vec::with_capacity(config.max_len);
    for _ in 0..config.max_len {
        let scores = step_scores(cond, uncond, condition, &prefix, config.alpha)?;
        let dist = nucleus_distribution(&scores, p).map_err(|e| Error::Decode {
            position: prefix.len(),
            source: Box::new(e),
        })?;
        prefix.push(Token(rng.categorical(&dist) as u32));
    }
    finish(cond.vocab(), prefix)
}

/// Decode with the configured strategy; nucleus draws from `Rng::new(config.seed)`.
pub fn decode(cond: &dyn NextTokenModel, uncond: &dyn NextTokenModel, condition: &TokenSeq, config: &DecodeConfig) -> Result<TokenSeq> {
    match config.strategy {
        Strategy::Greedy => greedy_decode(cond, uncond, condition, config),
        Strategy::Nucleus { .. } => nucleus_sample(cond, uncond, condition, config, &mut Rng::new(config.seed)),
    }
}

/// Decode many conditions in parallel; condition `i` samples from
/// `Rng::new(config.seed).child(i)`.
pub fn decode_batch(cond: &dyn NextTokenModel, uncond: &dyn NextTokenModel, conditions: &[TokenSeq], config: &DecodeConfig) -> Result<Vec<TokenSeq>> {
    let root = Rng::new(config.seed);
    let out: Vec<Result<TokenSeq>> = conditions
        .par_iter()
        .enumerate()
        .map(|(i, c)| match config.strategy {
            Strategy::Greedy => greedy_decode(cond, uncond, c, config),
            Strategy::Nucleus { .. } => nucleus_sample(cond, uncond, c, config, &mut root.child(i as u64)),
        })
        .collect();
    out.into_iter().collect()
}
