//! Exact synthetic generative worlds over (video, text) pairs.
//!
//! A world is a tabular joint distribution small enough to enumerate:
//!
//! - videos follow a per-position order-1 Markov chain, `P(v_i | v_{i-1})`;
//! - texts follow an order-1 chain conditioned on a summary state of the
//!   video, `P(t_i | t_{i-1}, summary(v))`.
//!
//! Every probability the reranker manipulates (candidate likelihood, query
//! likelihood, both priors) has an exact oracle here. The text prior is the
//! only quantity that needs marginalization, which is why world size is
//! capped by a hard brute-force budget.
//!
//! Rows are generated as `softmax(skew * logits)`: `skew = 0` makes every row
//! uniform and larger skews sharpen them. Text logits are a shared
//! per-previous-token component (which shapes the text prior) plus
//! `coupling` times a state-specific component (which ties text to video).

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logprob::{log_sum_exp_nonempty, softmax, LogProb, NEG_INF};
use crate::rng::Rng;
use crate::seq::{all_sequences, sequence_count, Direction, Modality, Summary, TokenSeq};

/// Default cap on `video_vocab^video_len * text_vocab^text_len`.
pub const DEFAULT_BUDGET: u64 = 10_000_000;

pub const WORLD_FILE_VERSION: u32 = 1;

/// Tolerance on each conditional row summing to one.
const ROW_SUM_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub video_vocab: usize,
    pub text_vocab: usize,
    pub video_len: usize,
    pub text_len: usize,
    /// How the text chain sees the video.
    pub summary: Summary,
    /// Sharpening of every text row; also of video rows unless `video_skew` is set.
    pub skew: f64,
    pub video_skew: Option<f64>,
    /// Weight of the state-specific text logits relative to the shared ones.
    pub coupling: f64,
    pub budget: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            video_vocab: 6,
            text_vocab: 8,
            video_len: 4,
            text_len: 4,
            summary: Summary::default(),
            skew: 1.0,
            video_skew: None,
            coupling: 1.0,
            budget: DEFAULT_BUDGET,
        }
    }
}

impl WorldConfig {
    pub fn video_space(&self) -> Option<u128> {
        sequence_count(self.video_vocab, self.video_len)
    }

    pub fn text_space(&self) -> Option<u128> {
        sequence_count(self.text_vocab, self.text_len)
    }

    pub fn joint_space(&self) -> Option<u128> {
        self.video_space()?.checked_mul(self.text_space()?)
    }

    pub fn states(&self) -> usize {
        self.summary.state_count(self.video_vocab, self.video_len)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("video_vocab", self.video_vocab),
            ("text_vocab", self.text_vocab),
            ("video_len", self.video_len),
            ("text_len", self.text_len),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        self.summary.validate()?;
        let video_skew = self.video_skew.unwrap_or(self.skew);
        for (name, v) in [("skew", self.skew), ("video_skew", video_skew), ("coupling", self.coupling)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("{name} = {v} must be finite and >= 0")));
            }
        }
        let budget = self.budget as u128;
        let joint = self.joint_space().unwrap_or(u128::MAX);
        if joint > budget {
            return Err(Error::Budget {
                what: format!(
                    "video_vocab^video_len * text_vocab^text_len = {}^{} * {}^{}",
                    self.video_vocab, self.video_len, self.text_vocab, self.text_len
                ),
                size: joint,
                budget,
            });
        }
        let text_cells = (self.states() as u128) * (self.text_vocab as u128 + 1) * self.text_vocab as u128;
        if text_cells > budget {
            return Err(Error::Budget {
                what: format!("text table cells (states {} x {} x {})", self.states(), self.text_vocab + 1, self.text_vocab),
                size: text_cells,
                budget,
            });
        }
        Ok(())
    }
}

/// Exact tabular joint distribution over (video, text) pairs.
#[derive(Debug, Clone)]
pub struct GenerativeWorld {
    config: WorldConfig,
    seed: u64,
    /// `video_tables[i][prev]` is `P(v_i | v_{i-1} = prev)`; position 0 has one row.
    video_tables: Vec<Vec<Vec<f64>>>,
    /// Row `state * (text_vocab + 1) + slot`, slot 0 = start, slot k = previous token k-1.
    text_table: Vec<Vec<f64>>,
    log_video: Vec<Vec<Vec<f64>>>,
    log_text: Vec<Vec<f64>>,
    /// `log P(summary(v) = s)`.
    log_state_marginal: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct WorldFile {
    version: u32,
    seed: u64,
    config: WorldConfig,
    video_tables: Vec<Vec<Vec<f64>>>,
    text_table: Vec<Vec<f64>>,
}

fn check_row(row: &[f64], width: usize, what: &str) -> Result<()> {
    if row.len() != width {
        return Err(Error::Dimension(format!("{what} has {} entries, expected {width}", row.len())));
    }
    if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::Data(format!("{what} has a negative or non-finite probability")));
    }
    let total: f64 = row.iter().sum();
    if (total - 1.0).abs() > ROW_SUM_TOLERANCE {
        return Err(Error::Data(format!("{what} sums to {total}, not 1")));
    }
    Ok(())
}

impl GenerativeWorld {
    /// Random world with the configured dimensions and sharpness.
    pub fn generate(config: &WorldConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let seed = rng.seed();
        let vv = config.video_vocab;
        let vt = config.text_vocab;
        let video_skew = config.video_skew.unwrap_or(config.skew);

        let row = |rng: &mut Rng, width: usize, skew: f64, base: Option<&[f64]>, coupling: f64| {
            let logits: Vec<f64> = (0..width)
                .map(|k| {
                    let own = rng.standard_normal();
                    match base {
                        Some(b) => skew * (b[k] + coupling * own),
                        None => skew * own,
                    }
                })
                .collect();
            softmax(&logits)
        };

        let video_tables: Vec<Vec<Vec<f64>>> = (0..config.video_len)
            .map(|pos| {
                let rows = if pos == 0 { 1 } else { vv };
                (0..rows).map(|_| row(rng, vv, video_skew, None, 0.0)).collect()
            })
            .collect();

        let shared: Vec<Vec<f64>> = (0..=vt)
            .map(|_| (0..vt).map(|_| rng.standard_normal()).collect())
            .collect();
        let states = config.states();
        let mut text_table = Vec::with_capacity(states * (vt + 1));
        for _ in 0..states {
            for base in &shared {
                text_table.push(row(rng, vt, config.skew, Some(base), config.coupling));
            }
        }
        Self::from_tables(config.clone(), seed, video_tables, text_table)
    }

    /// World from explicit probability tables (validated).
    pub fn from_tables(
        config: WorldConfig,
        seed: u64,
        video_tables: Vec<Vec<Vec<f64>>>,
        text_table: Vec<Vec<f64>>,
    ) -> Result<Self> {
        config.validate()?;
        let vv = config.video_vocab;
        let vt = config.text_vocab;
        if video_tables.len() != config.video_len {
            return Err(Error::Dimension(format!(
                "{} video position tables for video_len {}",
                video_tables.len(),
                config.video_len
            )));
        }
        for (pos, table) in video_tables.iter().enumerate() {
            let expected_rows = if pos == 0 { 1 } else { vv };
            if table.len() != expected_rows {
                return Err(Error::Dimension(format!(
                    "video position {pos} has {} rows, expected {expected_rows}",
                    table.len()
                )));
            }
            for (r, row) in table.iter().enumerate() {
                check_row(row, vv, &format!("video row (position {pos}, prev {r})"))?;
            }
        }
        let states = config.states();
        if text_table.len() != states * (vt + 1) {
            return Err(Error::Dimension(format!(
                "text table has {} rows, expected {}",
                text_table.len(),
                states * (vt + 1)
            )));
        }
        for (r, row) in text_table.iter().enumerate() {
            check_row(row, vt, &format!("text row {r}"))?;
        }

        let ln_rows = |rows: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
            rows.iter().map(|r| r.iter().map(|p| p.ln()).collect()).collect()
        };
        let log_video: Vec<Vec<Vec<f64>>> = video_tables.iter().map(ln_rows).collect();
        let log_text = ln_rows(&text_table);

        let mut world = GenerativeWorld {
            config,
            seed,
            video_tables,
            text_table,
            log_video,
            log_text,
            log_state_marginal: Vec::new(),
        };
        let mut per_state: Vec<Vec<f64>> = vec![Vec::new(); states];
        for v in world.all_videos() {
            let s = world.config.summary.state(&v);
            per_state[s].push(world.video_chain(&v));
        }
        world.log_state_marginal = per_state
            .iter()
            .map(|lps| if lps.is_empty() { NEG_INF } else { log_sum_exp_nonempty(lps) })
            .collect();
        Ok(world)
    }

    pub fn config(&self) -> &WorldConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn skew(&self) -> f64 {
        self.config.skew
    }

    pub fn states(&self) -> usize {
        self.log_state_marginal.len()
    }

    pub fn summary(&self) -> Summary {
        self.config.summary
    }

    /// Summary state of a video.
    pub fn video_state(&self, video: &TokenSeq) -> usize {
        self.config.summary.state(video)
    }

    /// `P(v_pos | v_{pos-1} = prev)`; `prev` is ignored at position 0.
    pub fn video_row(&self, pos: usize, prev: Option<usize>) -> &[f64] {
        if pos == 0 {
            &self.video_tables[0][0]
        } else {
            &self.video_tables[pos][prev.expect("previous clip required after position 0")]
        }
    }

    /// `P(t_i | t_{i-1} = prev, state)`; `prev = None` is the first position.
    pub fn text_row(&self, state: usize, prev: Option<usize>) -> &[f64] {
        &self.text_table[self.text_row_index(state, prev)]
    }

    fn text_row_index(&self, state: usize, prev: Option<usize>) -> usize {
        state * (self.config.text_vocab + 1) + prev.map_or(0, |p| p + 1)
    }

    pub fn video_tables(&self) -> &[Vec<Vec<f64>>] {
        &self.video_tables
    }

    pub fn text_table(&self) -> &[Vec<f64>] {
        &self.text_table
    }

    pub fn all_videos(&self) -> impl Iterator<Item = TokenSeq> {
        all_sequences(Modality::Video, self.config.video_vocab, self.config.video_len)
    }

    pub fn all_texts(&self) -> impl Iterator<Item = TokenSeq> {
        all_sequences(Modality::Text, self.config.text_vocab, self.config.text_len)
    }

    fn check_video(&self, v: &TokenSeq) -> Result<()> {
        v.expect(Modality::Video, self.config.video_vocab, Some(self.config.video_len))
    }

    fn check_text(&self, t: &TokenSeq) -> Result<()> {
        t.expect(Modality::Text, self.config.text_vocab, Some(self.config.text_len))
    }

    fn video_chain(&self, v: &TokenSeq) -> f64 {
        let mut lp = 0.0;
        let mut prev = 0;
        for (pos, tok) in v.tokens().iter().enumerate() {
            lp += self.log_video[pos][prev][tok.index()];
            prev = tok.index();
        }
        lp
    }

    fn text_chain(&self, t: &TokenSeq, state: usize) -> f64 {
        let mut lp = 0.0;
        let mut prev = None;
        for tok in t.tokens() {
            lp += self.log_text[self.text_row_index(state, prev)][tok.index()];
            prev = Some(tok.index());
        }
        lp
    }

    /// Draw `v ~ P(v)` then `t ~ P(t | v)`.
    pub fn sample_pair(&self, rng: &mut Rng) -> (TokenSeq, TokenSeq) {
        let mut video = Vec::with_capacity(self.config.video_len);
        let mut prev = None;
        for pos in 0..self.config.video_len {
            let tok = rng.categorical(self.video_row(pos, prev));
            video.push(tok as u32);
            prev = Some(tok);
        }
        let video = TokenSeq::video(self.config.video_vocab, video).expect("sampled clips are in vocabulary");
        let state = self.video_state(&video);
        let mut text = Vec::with_capacity(self.config.text_len);
        let mut prev = None;
        for _ in 0..self.config.text_len {
            let tok = rng.categorical(self.text_row(state, prev));
            text.push(tok as u32);
            prev = Some(tok);
        }
        let text = TokenSeq::text(self.config.text_vocab, text).expect("sampled tokens are in vocabulary");
        (video, text)
    }

    /// `n` independent draws of [`Self::sample_pair`] (duplicates allowed).
    pub fn sample_pairs(&self, n: usize, rng: &mut Rng) -> Vec<(TokenSeq, TokenSeq)> {
        (0..n).map(|_| self.sample_pair(rng)).collect()
    }

    /// Exact `log P(t | v)`.
    pub fn exact_cond_text(&self, text: &TokenSeq, video: &TokenSeq) -> Result<LogProb> {
        self.check_text(text)?;
        self.check_video(video)?;
        LogProb::new(self.text_chain(text, self.video_state(video)))
    }

    /// Exact `log P(v)` from the video chain.
    pub fn exact_video_prior(&self, video: &TokenSeq) -> Result<LogProb> {
        self.check_video(video)?;
        LogProb::new(self.video_chain(video))
    }

    /// Exact `log P(t) = log Σ_v P(t | v) P(v)`.
    ///
    /// The sum over videos is grouped by summary state, which is exact because
    /// `P(t | v)` depends on `v` only through its state.
    pub fn exact_text_prior(&self, text: &TokenSeq) -> Result<LogProb> {
        self.check_text(text)?;
        let terms: Vec<f64> = self
            .log_state_marginal
            .iter()
            .enumerate()
            .filter(|(_, lp)| **lp > NEG_INF)
            .map(|(s, lp)| lp + self.text_chain(text, s))
            .collect();
        if terms.is_empty() {
            return Ok(LogProb::IMPOSSIBLE);
        }
        LogProb::new(log_sum_exp_nonempty(&terms).min(0.0))
    }

    /// Exact `log P(v | t)` by Bayes' rule.
    pub fn exact_cond_video(&self, video: &TokenSeq, text: &TokenSeq) -> Result<LogProb> {
        let log_pt = self.exact_text_prior(text)?;
        self.exact_cond_video_given_prior(video, text, log_pt)
    }

    /// [`Self::exact_cond_video`] with a precomputed `log P(t)`.
    pub fn exact_cond_video_given_prior(&self, video: &TokenSeq, text: &TokenSeq, log_text_prior: LogProb) -> Result<LogProb> {
        if log_text_prior.is_impossible() {
            return Err(Error::UndefinedPosterior(format!("text [{text}] has zero prior probability")));
        }
        let joint = self.exact_cond_text(text, video)?.value() + self.exact_video_prior(video)?.value();
        if joint == NEG_INF {
            return Ok(LogProb::IMPOSSIBLE);
        }
        LogProb::new((joint - log_text_prior.value()).min(0.0))
    }

    /// Shannon entropy (nats) of the text prior, by enumeration.
    pub fn text_prior_entropy(&self) -> f64 {
        self.all_texts()
            .map(|t| {
                let lp = self.exact_text_prior(&t).expect("enumerated text fits").value();
                if lp == NEG_INF { 0.0 } else { -lp.exp() * lp }
            })
            .sum()
    }

    /// Shannon entropy (nats) of the video prior, by enumeration.
    pub fn video_prior_entropy(&self) -> f64 {
        self.all_videos()
            .map(|v| {
                let lp = self.video_chain(&v);
                if lp == NEG_INF { 0.0 } else { -lp.exp() * lp }
            })
            .sum()
    }

    /// `n_pairs` samples with pairwise-distinct videos and pairwise-distinct texts.
    pub fn build_instance(&self, n_pairs: usize, rng: &mut Rng) -> Result<PairSet> {
        if n_pairs < 2 {
            return Err(Error::Usage(format!("n_pairs = {n_pairs}, need at least 2")));
        }
        let max_attempts = n_pairs.saturating_mul(1000).max(10_000);
        let mut seen_v = HashSet::with_capacity(n_pairs);
        let mut seen_t = HashSet::with_capacity(n_pairs);
        let mut videos = Vec::with_capacity(n_pairs);
        let mut texts = Vec::with_capacity(n_pairs);
        for _ in 0..max_attempts {
            if videos.len() == n_pairs {
                break;
            }
            let (v, t) = self.sample_pair(rng);
            if seen_v.contains(&v) || seen_t.contains(&t) {
                continue;
            }
            seen_v.insert(v.clone());
            seen_t.insert(t.clone());
            videos.push(v);
            texts.push(t);
        }
        if videos.len() < n_pairs {
            return Err(Error::SamplingExhausted {
                wanted: n_pairs,
                attempts: max_attempts,
            });
        }
        Ok(PairSet { videos, texts })
    }

    /// Rejection search for a pair of texts meeting both hypotheses for video `v`:
    /// a small query-likelihood gap (`0 < gap < epsilon`) and a large prior gap
    /// favouring the negative (`> c * epsilon`). `Ok(None)` when nothing is found.
    pub fn build_reversal_instance(&self, epsilon: f64, c: f64, rng: &mut Rng, max_tries: usize) -> Result<Option<ReversalInstance>> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::Usage(format!("epsilon = {epsilon} must be > 0")));
        }
        if !(c.is_finite() && c > 1.0) {
            return Err(Error::Usage(format!("c = {c} must be > 1")));
        }
        for _ in 0..max_tries {
            let (video, positive) = self.sample_pair(rng);
            let (_, negative) = self.sample_pair(rng);
            if positive == negative {
                continue;
            }
            let prior_pos = self.exact_text_prior(&positive)?;
            let prior_neg = self.exact_text_prior(&negative)?;
            if prior_pos.is_impossible() || prior_neg.is_impossible() {
                continue;
            }
            let q_pos = self.exact_cond_video_given_prior(&video, &positive, prior_pos)?;
            let q_neg = self.exact_cond_video_given_prior(&video, &negative, prior_neg)?;
            if q_pos.is_impossible() || q_neg.is_impossible() {
                continue;
            }
            let hyp = ReversalScores {
                query_ll_positive: q_pos.value(),
                query_ll_negative: q_neg.value(),
                prior_positive: prior_pos.value(),
                prior_negative: prior_neg.value(),
            };
            if hyp.hypotheses_hold(epsilon, c) {
                return Ok(Some(ReversalInstance {
                    video,
                    positive,
                    negative,
                    epsilon,
                    c,
                    scores: hyp,
                }));
            }
        }
        Ok(None)
    }

    pub fn to_json(&self) -> String {
        let file = WorldFile {
            version: WORLD_FILE_VERSION,
            seed: self.seed,
            config: self.config.clone(),
            video_tables: self.video_tables.clone(),
            text_table: self.text_table.clone(),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("world serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: WorldFile = serde_json::from_str(text).map_err(|e| Error::Serde(e.to_string()))?;
        if file.version != WORLD_FILE_VERSION {
            return Err(Error::Data(format!(
                "world file version {} (supported: {WORLD_FILE_VERSION})",
                file.version
            )));
        }
        Self::from_tables(file.config, file.seed, file.video_tables, file.text_table)
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

/// The four log-quantities the reversal argument works with, for one video
/// and a (positive, negative) text pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReversalScores {
    /// `log P(v | t_pos)`
    pub query_ll_positive: f64,
    /// `log P(v | t_neg)`
    pub query_ll_negative: f64,
    /// `log P(t_pos)`
    pub prior_positive: f64,
    /// `log P(t_neg)`
    pub prior_negative: f64,
}

impl ReversalScores {
    pub fn query_gap(&self) -> f64 {
        self.query_ll_positive - self.query_ll_negative
    }

    pub fn prior_gap(&self) -> f64 {
        self.prior_negative - self.prior_positive
    }

    pub fn hypotheses_hold(&self, epsilon: f64, c: f64) -> bool {
        let gap = self.query_gap();
        gap > 0.0 && gap < epsilon && self.prior_gap() > c * epsilon
    }

    /// `log P(v | t) + log P(t)` for the positive and the negative text; equal to
    /// the candidate likelihoods up to the shared `log P(v)`.
    pub fn bayes_candidate_scores(&self) -> (f64, f64) {
        (
            self.query_ll_positive + self.prior_positive,
            self.query_ll_negative + self.prior_negative,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReversalInstance {
    pub video: TokenSeq,
    pub positive: TokenSeq,
    pub negative: TokenSeq,
    pub epsilon: f64,
    pub c: f64,
    pub scores: ReversalScores,
}

impl ReversalInstance {
    /// `log P(t_pos | v) - log P(t_neg | v)` from the world's direct oracle.
    pub fn candidate_gap(&self, world: &GenerativeWorld) -> Result<f64> {
        Ok(world.exact_cond_text(&self.positive, &self.video)?.value()
            - world.exact_cond_text(&self.negative, &self.video)?.value())
    }
}

/// Sampled pairs; pair `i` is `(videos[i], texts[i])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSet {
    pub videos: Vec<TokenSeq>,
    pub texts: Vec<TokenSeq>,
}

impl PairSet {
    pub fn len(&self) -> usize {
        self.videos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }

    /// Retrieval view: queries from one modality, candidates from the other,
    /// ground truth the identity.
    pub fn view(&self, direction: Direction) -> RetrievalInstance {
        let (queries, candidates) = match direction {
            Direction::V2T => (self.videos.clone(), self.texts.clone()),
            Direction::T2V => (self.texts.clone(), self.videos.clone()),
        };
        RetrievalInstance {
            direction,
            gt: (0..queries.len()).collect(),
            queries,
            candidates,
        }
    }

    pub fn video_ids(&self) -> Vec<String> {
        crate::score::ids("v", self.len())
    }

    pub fn text_ids(&self) -> Vec<String> {
        crate::score::ids("t", self.len())
    }
}

/// The query/candidate universe for one retrieval direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalInstance {
    pub direction: Direction,
    pub queries: Vec<TokenSeq>,
    pub candidates: Vec<TokenSeq>,
    /// `gt[q]` is the index of query `q`'s ground-truth candidate.
    pub gt: Vec<usize>,
}

impl RetrievalInstance {
    pub fn query_ids(&self) -> Vec<String> {
        let prefix = match self.direction {
            Direction::V2T => "v",
            Direction::T2V => "t",
        };
        crate::score::ids(prefix, self.queries.len())
    }

    pub fn candidate_ids(&self) -> Vec<String> {
        let prefix = match self.direction {
            Direction::V2T => "t",
            Direction::T2V => "v",
        };
        crate::score::ids(prefix, self.candidates.len())
    }
}
