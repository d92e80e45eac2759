//! Trainable tabular bidirectional model.
//!
//! Two heads share one parameter set:
//!
//! - the **text head** is a logit table indexed by (video condition state,
//!   previous text token) and scores `P(t_i | t_{i-1}, summary(v))` with a
//!   softmax over the text vocabulary;
//! - the **video head** maps (text condition state, previous clip) to a
//!   context vector of dimension `dim` and scores the next clip with a
//!   dot-product softmax over a learnable feature bank holding one vector per
//!   clip symbol.
//!
//! Each head has one extra condition state, the *mask state*, that stands for
//! "condition hidden". Scoring a sequence under the mask state gives the
//! model's own prior `P(t)` or `P(v)`. Every training step descends the joint
//! conditional loss and, in auxiliary masked passes, fits the mask-state rows
//! to each modality alone. The masked video pass reads the shared feature bank
//! but does not update it, so prior fitting never disturbs the likelihoods.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logprob::{log_sum_exp_nonempty, softmax, LogProb};
use crate::rng::Rng;
use crate::seq::{Modality, Summary, TokenSeq};

pub const CHECKPOINT_VERSION: u32 = 1;

/// A (video, text) training or scoring pair.
pub type Pair = (TokenSeq, TokenSeq);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub text_vocab: usize,
    pub video_vocab: usize,
    pub text_len: usize,
    pub video_len: usize,
    /// Context and feature-bank dimension.
    pub dim: usize,
    /// Condition state of a video as seen by the text head.
    pub video_summary: Summary,
    /// Condition state of a text as seen by the video head.
    pub text_summary: Summary,
    /// Standard deviation of the initial context and bank entries.
    pub init_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            text_vocab: 8,
            video_vocab: 6,
            text_len: 4,
            video_len: 4,
            dim: 16,
            video_summary: Summary::default(),
            text_summary: Summary::default(),
            init_scale: 0.1,
        }
    }
}

impl ModelConfig {
    /// Model dimensions matching a world.
    pub fn for_world(world: &crate::world::WorldConfig) -> Self {
        ModelConfig {
            text_vocab: world.text_vocab,
            video_vocab: world.video_vocab,
            text_len: world.text_len,
            video_len: world.video_len,
            video_summary: world.summary,
            ..ModelConfig::default()
        }
    }

    fn video_states(&self) -> usize {
        self.video_summary.state_count(self.video_vocab, self.video_len)
    }

    fn text_states(&self) -> usize {
        self.text_summary.state_count(self.text_vocab, self.text_len)
    }

    pub fn validate(&self) -> Result<()> {
        if self.text_vocab == 0 || self.video_vocab == 0 || self.dim == 0 || self.text_len == 0 || self.video_len == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        self.video_summary.validate()?;
        self.text_summary.validate()?;
        if !(self.init_scale.is_finite() && self.init_scale >= 0.0) {
            return Err(Error::Config(format!("init_scale = {} must be >= 0", self.init_scale)));
        }
        let cells = (self.video_states() as u128 + 1) * (self.text_vocab as u128 + 1) * self.text_vocab as u128
            + (self.text_states() as u128 + 1) * (self.video_vocab as u128 + 1) * self.dim as u128;
        if cells > 50_000_000 {
            return Err(Error::Config(format!("model would have {cells} parameters")));
        }
        Ok(())
    }
}

/// All trainable parameters; also the shape of a gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    /// `[(video_states + 1) * (text_vocab + 1) * text_vocab]`
    pub text_logits: Vec<f64>,
    /// `[(text_states + 1) * (video_vocab + 1) * dim]`
    pub video_context: Vec<f64>,
    /// `[video_vocab * dim]`
    pub feature_bank: Vec<f64>,
}

impl Params {
    fn zeros_like(other: &Params) -> Params {
        Params {
            text_logits: vec![0.0; other.text_logits.len()],
            video_context: vec![0.0; other.video_context.len()],
            feature_bank: vec![0.0; other.feature_bank.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.text_logits.len() + self.video_context.len() + self.feature_bank.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat view over all three tables, in declaration order.
    pub fn get(&self, i: usize) -> f64 {
        let (a, b) = (self.text_logits.len(), self.video_context.len());
        if i < a {
            self.text_logits[i]
        } else if i < a + b {
            self.video_context[i - a]
        } else {
            self.feature_bank[i - a - b]
        }
    }

    pub fn set(&mut self, i: usize, v: f64) {
        let (a, b) = (self.text_logits.len(), self.video_context.len());
        if i < a {
            self.text_logits[i] = v;
        } else if i < a + b {
            self.video_context[i - a] = v;
        } else {
            self.feature_bank[i - a - b] = v;
        }
    }

    fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.text_logits
            .iter_mut()
            .chain(self.video_context.iter_mut())
            .chain(self.feature_bank.iter_mut())
    }

    fn iter(&self) -> impl Iterator<Item = &f64> {
        self.text_logits
            .iter()
            .chain(self.video_context.iter())
            .chain(self.feature_bank.iter())
    }

    fn axpy(&mut self, alpha: f64, other: &Params) {
        for (p, g) in self.iter_mut().zip(other.iter()) {
            *p += alpha * g;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.iter().all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1.0,
            epochs: 200,
            // Full batch for desk-scale datasets: plain gradient descent on the
            // mean loss, which keeps the per-epoch loss curve monotone.
            batch_size: 8192,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Config(format!("learning_rate = {} must be >= 0", self.learning_rate)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Full-dataset losses after an epoch (or before training, for the first entry).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    /// Number of epochs completed when measured.
    pub epoch: usize,
    /// Mean of both conditional losses.
    pub joint: f64,
    /// `joint` plus the masked prior losses; the quantity descended.
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub initial: EpochLoss,
    pub epochs: Vec<EpochLoss>,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiModel {
    config: ModelConfig,
    params: Params,
    seed: u64,
    epochs_completed: usize,
    steps_completed: usize,
    last_train: Option<TrainConfig>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    #[serde(flatten)]
    model: BiModel,
}

/// Which losses a pass accumulates.
#[derive(Clone, Copy)]
struct Terms {
    conditional: bool,
    prior: bool,
}

impl BiModel {
    /// Fresh model: uniform text head, small random video head.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let vt = config.text_vocab;
        let vv = config.video_vocab;
        let mut rng = Rng::new(seed);
        let text_logits = vec![0.0; (config.video_states() + 1) * (vt + 1) * vt];
        let mut draw = |n: usize| (0..n).map(|_| config.init_scale * rng.standard_normal()).collect::<Vec<_>>();
        let video_context = draw((config.text_states() + 1) * (vv + 1) * config.dim);
        let feature_bank = draw(vv * config.dim);
        Ok(BiModel {
            config,
            params: Params {
                text_logits,
                video_context,
                feature_bank,
            },
            seed,
            epochs_completed: 0,
            steps_completed: 0,
            last_train: None,
        })
    }

    /// Model with explicit parameters (validated for shape and finiteness).
    pub fn from_params(config: ModelConfig, params: Params, seed: u64) -> Result<Self> {
        let mut m = Self::new(config, seed)?;
        let expect = Params::zeros_like(&m.params);
        if params.text_logits.len() != expect.text_logits.len()
            || params.video_context.len() != expect.video_context.len()
            || params.feature_bank.len() != expect.feature_bank.len()
        {
            return Err(Error::Dimension("parameter table shapes do not match the model config".into()));
        }
        if !params.all_finite() {
            return Err(Error::Data("non-finite model parameter".into()));
        }
        m.params = params;
        Ok(m)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn epochs_completed(&self) -> usize {
        self.epochs_completed
    }

    pub fn steps_completed(&self) -> usize {
        self.steps_completed
    }

    /// Condition state used for the masked text prior.
    pub fn text_mask_state(&self) -> usize {
        self.config.video_states()
    }

    /// Condition state used for the masked video prior.
    pub fn video_mask_state(&self) -> usize {
        self.config.text_states()
    }

    pub fn video_condition_state(&self, video: &TokenSeq) -> usize {
        self.config.video_summary.state(video)
    }

    pub fn text_condition_state(&self, text: &TokenSeq) -> usize {
        self.config.text_summary.state(text)
    }

    fn check(&self, seq: &TokenSeq, modality: Modality) -> Result<()> {
        let (vocab, len, summary) = match modality {
            Modality::Text => (self.config.text_vocab, self.config.text_len, self.config.text_summary),
            Modality::Video => (self.config.video_vocab, self.config.video_len, self.config.video_summary),
        };
        // Identity summaries index by sequence, which fixes the length.
        let fixed = matches!(summary, Summary::Identity).then_some(len);
        seq.expect(modality, vocab, fixed)
    }

    fn text_offset(&self, state: usize, prev: Option<usize>) -> usize {
        let vt = self.config.text_vocab;
        (state * (vt + 1) + prev.map_or(0, |p| p + 1)) * vt
    }

    fn context_offset(&self, state: usize, prev: Option<usize>) -> usize {
        let vv = self.config.video_vocab;
        (state * (vv + 1) + prev.map_or(0, |p| p + 1)) * self.config.dim
    }

    /// Text-head logits for one condition state and previous token.
    pub fn text_logits(&self, state: usize, prev: Option<usize>) -> &[f64] {
        let off = self.text_offset(state, prev);
        &self.params.text_logits[off..off + self.config.text_vocab]
    }

    /// `P(t_i | t_{i-1} = prev, state)` as a distribution.
    pub fn text_distribution(&self, state: usize, prev: Option<usize>) -> Vec<f64> {
        softmax(self.text_logits(state, prev))
    }

    /// Context vector for one text condition state and previous clip.
    pub fn video_context(&self, state: usize, prev: Option<usize>) -> &[f64] {
        let off = self.context_offset(state, prev);
        &self.params.video_context[off..off + self.config.dim]
    }

    pub fn feature(&self, clip: usize) -> &[f64] {
        let d = self.config.dim;
        &self.params.feature_bank[clip * d..(clip + 1) * d]
    }

    /// Dot-product scores of every bank vector against a context.
    pub fn video_scores(&self, state: usize, prev: Option<usize>) -> Vec<f64> {
        let ctx = self.video_context(state, prev);
        (0..self.config.video_vocab)
            .map(|n| dot(ctx, self.feature(n)))
            .collect()
    }

    /// `P(v_i | v_{i-1} = prev, state)` as a distribution.
    pub fn video_distribution(&self, state: usize, prev: Option<usize>) -> Vec<f64> {
        softmax(&self.video_scores(state, prev))
    }

    /// Text chain NLL under a fixed condition state; accumulates `scale * dL` into `grad`.
    fn text_chain(&self, text: &TokenSeq, state: usize, mut grad: Option<(&mut Params, f64)>) -> f64 {
        let vt = self.config.text_vocab;
        let mut nll = 0.0;
        let mut prev = None;
        for tok in text.tokens() {
            let y = tok.index();
            let off = self.text_offset(state, prev);
            let row = &self.params.text_logits[off..off + vt];
            let lse = log_sum_exp_nonempty(row);
            nll += lse - row[y];
            if let Some((g, scale)) = grad.as_mut() {
                for k in 0..vt {
                    let p = (row[k] - lse).exp();
                    g.text_logits[off + k] += *scale * (p - f64::from(k == y));
                }
            }
            prev = Some(y);
        }
        nll
    }

    /// Video chain NLL under a fixed text condition state; accumulates gradients.
    ///
    /// With `bank_grad == false` only the context rows receive gradient.
    fn video_chain(&self, video: &TokenSeq, state: usize, mut grad: Option<(&mut Params, f64)>, bank_grad: bool) -> f64 {
        let d = self.config.dim;
        let vv = self.config.video_vocab;
        let mut nll = 0.0;
        let mut prev = None;
        let mut scores = vec![0.0; vv];
        for tok in video.tokens() {
            let y = tok.index();
            let coff = self.context_offset(state, prev);
            let ctx = &self.params.video_context[coff..coff + d];
            for (n, s) in scores.iter_mut().enumerate() {
                *s = dot(ctx, self.feature(n));
            }
            let lse = log_sum_exp_nonempty(&scores);
            nll += lse - scores[y];
            if let Some((g, scale)) = grad.as_mut() {
                for n in 0..vv {
                    let coef = *scale * ((scores[n] - lse).exp() - f64::from(n == y));
                    if coef == 0.0 {
                        continue;
                    }
                    let feat = self.feature(n);
                    for j in 0..d {
                        g.video_context[coff + j] += coef * feat[j];
                    }
                    if bank_grad {
                        for j in 0..d {
                            g.feature_bank[n * d + j] += coef * ctx[j];
                        }
                    }
                }
            }
            prev = Some(y);
        }
        nll
    }

    /// `-log P(t | v)`, summed over positions.
    pub fn nll_text_given_video(&self, text: &TokenSeq, video: &TokenSeq) -> Result<f64> {
        self.check(text, Modality::Text)?;
        self.check(video, Modality::Video)?;
        Ok(self.text_chain(text, self.video_condition_state(video), None))
    }

    /// `-log P(v | t)`, summed over positions.
    pub fn nll_video_given_text(&self, video: &TokenSeq, text: &TokenSeq) -> Result<f64> {
        self.check(text, Modality::Text)?;
        self.check(video, Modality::Video)?;
        Ok(self.video_chain(video, self.text_condition_state(text), None, false))
    }

    pub fn log_cond_text(&self, text: &TokenSeq, video: &TokenSeq) -> Result<LogProb> {
        LogProb::new(-self.nll_text_given_video(text, video)?)
    }

    pub fn log_cond_video(&self, video: &TokenSeq, text: &TokenSeq) -> Result<LogProb> {
        LogProb::new(-self.nll_video_given_text(video, text)?)
    }

    /// Masked-condition text prior.
    pub fn log_prior_text(&self, text: &TokenSeq) -> Result<LogProb> {
        self.check(text, Modality::Text)?;
        LogProb::new(-self.text_chain(text, self.text_mask_state(), None))
    }

    /// Masked-condition video prior.
    pub fn log_prior_video(&self, video: &TokenSeq) -> Result<LogProb> {
        self.check(video, Modality::Video)?;
        LogProb::new(-self.video_chain(video, self.video_mask_state(), None, false))
    }

    fn pass(&self, batch: &[Pair], terms: Terms, grad: Option<&mut Params>) -> Result<f64> {
        self.pass_iter(batch.iter(), batch.len(), terms, grad)
    }

    fn pass_iter<'p>(&self, batch: impl Iterator<Item = &'p Pair>, len: usize, terms: Terms, mut grad: Option<&mut Params>) -> Result<f64> {
        if len == 0 {
            return Err(Error::Usage("loss over an empty batch".into()));
        }
        let scale = 1.0 / len as f64;
        let mut total = 0.0;
        for (video, text) in batch {
            self.check(video, Modality::Video)?;
            self.check(text, Modality::Text)?;
            let mut pair_loss = 0.0;
            if terms.conditional {
                let vs = self.video_condition_state(video);
                let ts = self.text_condition_state(text);
                pair_loss += self.text_chain(text, vs, grad.as_deref_mut().map(|g| (g, scale)));
                pair_loss += self.video_chain(video, ts, grad.as_deref_mut().map(|g| (g, scale)), true);
            }
            if terms.prior {
                pair_loss += self.text_chain(text, self.text_mask_state(), grad.as_deref_mut().map(|g| (g, scale)));
                // The feature bank belongs to the conditional head; masked
                // passes fit only the mask-state context rows against it.
                pair_loss += self.video_chain(video, self.video_mask_state(), grad.as_deref_mut().map(|g| (g, scale)), false);
            }
            total += pair_loss;
        }
        Ok(total * scale)
    }

    /// Mean over the batch of `-log P(t|v) - log P(v|t)`.
    pub fn joint_loss(&self, batch: &[Pair]) -> Result<f64> {
        self.pass(batch, Terms { conditional: true, prior: false }, None)
    }

    /// Mean over the batch of the masked losses `-log P(t) - log P(v)`.
    pub fn prior_loss(&self, batch: &[Pair]) -> Result<f64> {
        self.pass(batch, Terms { conditional: false, prior: true }, None)
    }

    /// `joint_loss + prior_loss`, the training objective.
    pub fn objective(&self, batch: &[Pair]) -> Result<f64> {
        self.pass(batch, Terms { conditional: true, prior: true }, None)
    }

    /// Analytic gradient of [`Self::joint_loss`].
    pub fn grad(&self, batch: &[Pair]) -> Result<Params> {
        let mut g = Params::zeros_like(&self.params);
        self.pass(batch, Terms { conditional: true, prior: false }, Some(&mut g))?;
        Ok(g)
    }

    /// Objective value and the descent direction used by [`Self::train`]:
    /// the full gradient of the joint loss plus the gradient of the prior loss
    /// with respect to the mask-state rows (the bank is held fixed for the
    /// masked video pass, so prior fitting never moves the conditional head).
    pub fn training_grad(&self, batch: &[Pair]) -> Result<(f64, Params)> {
        let mut g = Params::zeros_like(&self.params);
        let loss = self.pass(batch, Terms { conditional: true, prior: true }, Some(&mut g))?;
        Ok((loss, g))
    }

    fn epoch_loss(&self, dataset: &[Pair]) -> Result<EpochLoss> {
        let joint = self.joint_loss(dataset)?;
        let prior = self.prior_loss(dataset)?;
        Ok(EpochLoss {
            epoch: self.epochs_completed,
            joint,
            objective: joint + prior,
        })
    }

    /// Minibatch gradient descent on the objective for `config.epochs` epochs.
    ///
    /// Epoch `e` (counted over the model's lifetime) visits the dataset in an
    /// order drawn from `Rng::new(config.seed).child(e)`, so stopping after any
    /// epoch and resuming from a checkpoint continues exactly as an
    /// uninterrupted run would.
    pub fn train(&mut self, dataset: &[Pair], config: &TrainConfig) -> Result<TrainReport> {
        config.validate()?;
        if dataset.is_empty() {
            return Err(Error::Usage("training on an empty dataset".into()));
        }
        let initial = self.epoch_loss(dataset)?;
        let root = Rng::new(config.seed);
        let mut epochs = Vec::with_capacity(config.epochs);
        let mut steps = 0;
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        for _ in 0..config.epochs {
            order.sort_unstable();
            root.child(self.epochs_completed as u64).shuffle(&mut order);
            for chunk in order.chunks(config.batch_size) {
                let mut grad = Params::zeros_like(&self.params);
                let loss = self.pass_iter(
                    chunk.iter().map(|&i| &dataset[i]),
                    chunk.len(),
                    Terms { conditional: true, prior: true },
                    Some(&mut grad),
                )?;
                if !loss.is_finite() || !grad.all_finite() {
                    return Err(Error::Training {
                        step: self.steps_completed,
                        loss,
                    });
                }
                self.params.axpy(-config.learning_rate, &grad);
                self.steps_completed += 1;
                steps += 1;
            }
            self.epochs_completed += 1;
            let measured = self.epoch_loss(dataset)?;
            if !measured.objective.is_finite() {
                return Err(Error::Training {
                    step: self.steps_completed,
                    loss: measured.objective,
                });
            }
            epochs.push(measured);
        }
        self.last_train = Some(*config);
        Ok(TrainReport { initial, epochs, steps })
    }

    pub fn to_json(&self) -> String {
        let ck = Checkpoint {
            version: CHECKPOINT_VERSION,
            model: self.clone(),
        };
        let mut s = serde_json::to_string_pretty(&ck).expect("checkpoint serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text).map_err(|e| Error::Serde(e.to_string()))?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Data(format!(
                "checkpoint version {} (supported: {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        let m = ck.model;
        let mut checked = Self::from_params(m.config, m.params, m.seed)?;
        checked.epochs_completed = m.epochs_completed;
        checked.steps_completed = m.steps_completed;
        checked.last_train = m.last_train;
        Ok(checked)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
