//! Two-stage retrieval: exact cosine top-K, then bidirectional rerank.
//!
//! The first stage scans every candidate embedding and keeps the `k` most
//! similar (lowest index on ties). The reranker scores only the shortlist with
//! a [`PairScorer`]: candidate likelihood normalized by the candidate prior
//! (CPN), fused with the query likelihood. Candidates outside the shortlist are
//! appended after it in first-stage order, so every ranking is a full
//! permutation and Recall@K is defined for any K.
//!
//! Embedding file layout:
//!
//! ```text
//! dim=2 count=2
//! t0,0.5,-1.25
//! t1,1.0,0.0
//! ```

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering as AtomicOrdering};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bimodel::BiModel;
use crate::calibrate::{by_score_desc, cpn_cell, fuse_cell, CpnConfig, FusionMode, Provenance, RankedEntry, RankingResult, Stage};
use crate::error::{Error, Result};
use crate::logprob::LogProb;
use crate::rng::Rng;
use crate::score::{MatrixKind, ScoreMatrix};
use crate::seq::{Direction, TokenSeq};
use crate::world::{GenerativeWorld, RetrievalInstance};

/// Default shortlist size.
pub const DEFAULT_K: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    ids: Vec<String>,
    dim: usize,
    vectors: Vec<f64>,
}

impl EmbeddingTable {
    pub fn new(ids: Vec<String>, dim: usize, vectors: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Dimension("embedding dim must be >= 1".into()));
        }
        if vectors.len() != ids.len() * dim {
            return Err(Error::Dimension(format!(
                "{} values for {} vectors of dim {dim}",
                vectors.len(),
                ids.len()
            )));
        }
        if vectors.iter().any(|x| !x.is_finite()) {
            return Err(Error::Data("non-finite embedding value".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for id in &ids {
            if id.is_empty() || id.contains(',') || id.chars().any(char::is_whitespace) {
                return Err(Error::Data(format!("embedding id {id:?} is empty or contains a comma/whitespace")));
            }
            if !seen.insert(id.as_str()) {
                return Err(Error::Data(format!("duplicate embedding id {id:?}")));
            }
        }
        Ok(EmbeddingTable { ids, dim, vectors })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    /// Rows reordered to follow `ids`; every id must be present.
    pub fn aligned_to(&self, ids: &[String]) -> Result<Self> {
        if ids == self.ids.as_slice() {
            return Ok(self.clone());
        }
        let index: HashMap<&str, usize> = self.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        let mut vectors = Vec::with_capacity(ids.len() * self.dim);
        for id in ids {
            let &i = index
                .get(id.as_str())
                .ok_or_else(|| Error::IdMismatch(format!("no embedding for id {id:?}")))?;
            vectors.extend_from_slice(self.vector(i));
        }
        EmbeddingTable::new(ids.to_vec(), self.dim, vectors)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("dim={} count={}\n", self.dim, self.len());
        for (i, id) in self.ids.iter().enumerate() {
            out.push_str(id);
            for x in self.vector(i) {
                out.push(',');
                out.push_str(&format!("{x:?}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_text(&text, path)
    }

    pub fn parse_text(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| Error::parse(path, 1, "empty embedding file"))?;
        let mut dim = None;
        let mut count = None;
        for field in header.split_whitespace() {
            match field.split_once('=') {
                Some(("dim", v)) => dim = v.parse::<usize>().ok(),
                Some(("count", v)) => count = v.parse::<usize>().ok(),
                _ => return Err(Error::parse(path, 1, format!("unexpected header field {field:?}"))),
            }
        }
        let (dim, count) = match (dim, count) {
            (Some(d), Some(c)) if d > 0 => (d, c),
            _ => return Err(Error::parse(path, 1, "header must be `dim=<D> count=<N>` with D >= 1")),
        };
        let mut ids = Vec::with_capacity(count);
        let mut vectors = Vec::with_capacity(count * dim);
        let mut seen = std::collections::HashSet::new();
        for (i, line) in lines {
            let lineno = i + 1;
            if line.is_empty() {
                continue;
            }
            let mut cells = line.split(',');
            let id = cells.next().unwrap_or_default().to_string();
            if id.is_empty() || id.chars().any(char::is_whitespace) {
                return Err(Error::parse(path, lineno, format!("bad id {id:?}")));
            }
            if !seen.insert(id.clone()) {
                return Err(Error::parse(path, lineno, format!("duplicate id {id:?}")));
            }
            let before = vectors.len();
            for cell in cells {
                let x: f64 = cell
                    .trim()
                    .parse()
                    .map_err(|_| Error::parse(path, lineno, format!("not a number: {cell:?}")))?;
                if !x.is_finite() {
                    return Err(Error::parse(path, lineno, format!("non-finite value {cell:?}")));
                }
                vectors.push(x);
            }
            if vectors.len() - before != dim {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("{} values, expected dim = {dim}", vectors.len() - before),
                ));
            }
            ids.push(id);
        }
        if ids.len() != count {
            return Err(Error::parse(path, 1, format!("header says count={count}, found {} vectors", ids.len())));
        }
        EmbeddingTable::new(ids, dim, vectors)
    }
}

/// Parameters of the synthetic first-stage embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub dim: usize,
    /// Standard deviation of the per-sequence noise; 0 makes every
    /// ground-truth pair the unique cosine maximum.
    pub noise: f64,
    pub seed: u64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            dim: 16,
            noise: 0.5,
            seed: 0,
        }
    }
}

/// Synthetic embeddings for an instance whose ground truth is the identity.
///
/// Pair `i` gets a shared latent `z_i ~ N(0, I)`; the query and the candidate
/// of that pair embed as `z_i + noise * g` with independent noise `g`. The
/// noise level is the first-stage quality knob.
pub fn synthetic_embeddings(instance: &RetrievalInstance, config: &EmbeddingConfig) -> Result<(EmbeddingTable, EmbeddingTable)> {
    if config.dim == 0 || !(config.noise.is_finite() && config.noise >= 0.0) {
        return Err(Error::Config("embedding dim must be >= 1 and noise >= 0".into()));
    }
    let n = instance.queries.len();
    if instance.candidates.len() != n || instance.gt.iter().enumerate().any(|(q, &c)| q != c) {
        return Err(Error::Usage("synthetic embeddings need identity ground truth".into()));
    }
    let d = config.dim;
    let root = Rng::new(config.seed);
    let mut latent_rng = root.child(0);
    let latent: Vec<f64> = (0..n * d).map(|_| latent_rng.standard_normal()).collect();
    let side = |child: u64| {
        let mut rng = root.child(child);
        latent.iter().map(|z| z + config.noise * rng.standard_normal()).collect::<Vec<f64>>()
    };
    let q = EmbeddingTable::new(instance.query_ids(), d, side(1))?;
    let c = EmbeddingTable::new(instance.candidate_ids(), d, side(2))?;
    Ok((q, c))
}

/// Full first-stage orderings (best first) and the similarities behind them.
#[derive(Debug, Clone, PartialEq)]
pub struct FirstStage {
    pub orders: Vec<Vec<usize>>,
    /// `similarity[q][c]`, cosine of query `q` and candidate `c`.
    pub similarity: Vec<Vec<f64>>,
}

impl FirstStage {
    /// The first `k` candidates of every query.
    pub fn shortlists(&self, k: usize) -> Vec<Vec<usize>> {
        self.orders.iter().map(|o| o[..k.min(o.len())].to_vec()).collect()
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Exhaustive cosine scan ordering every candidate for every query.
pub fn first_stage(queries: &EmbeddingTable, candidates: &EmbeddingTable) -> Result<FirstStage> {
    if queries.dim() != candidates.dim() {
        return Err(Error::Dimension(format!(
            "query embeddings have dim {}, candidates {}",
            queries.dim(),
            candidates.dim()
        )));
    }
    if candidates.is_empty() {
        return Err(Error::Usage("first stage over zero candidates".into()));
    }
    let cand_norms: Vec<f64> = (0..candidates.len()).map(|c| norm(candidates.vector(c))).collect();
    let rows: Vec<(Vec<usize>, Vec<f64>)> = (0..queries.len())
        .into_par_iter()
        .map(|q| {
            let qv = queries.vector(q);
            let qn = norm(qv);
            let sims: Vec<f64> = (0..candidates.len())
                .map(|c| {
                    let denom = qn * cand_norms[c];
                    if denom == 0.0 {
                        0.0
                    } else {
                        qv.iter().zip(candidates.vector(c)).map(|(a, b)| a * b).sum::<f64>() / denom
                    }
                })
                .collect();
            let mut order: Vec<usize> = (0..sims.len()).collect();
            order.sort_by(|&a, &b| by_score_desc((a, sims[a]), (b, sims[b])));
            (order, sims)
        })
        .collect();
    let (orders, similarity) = rows.into_iter().unzip();
    Ok(FirstStage { orders, similarity })
}

/// Top-`k` candidate indices per query by cosine similarity.
pub fn first_stage_topk(queries: &EmbeddingTable, candidates: &EmbeddingTable, k: usize) -> Result<Vec<Vec<usize>>> {
    check_k(k, candidates.len())?;
    Ok(first_stage(queries, candidates)?.shortlists(k))
}

fn check_k(k: usize, n: usize) -> Result<()> {
    if k == 0 || k > n {
        return Err(Error::Config(format!("k = {k} must be in 1..={n}")));
    }
    Ok(())
}

/// Scores for one direction of a retrieval universe, addressed by index.
///
/// `candidate_likelihood(q, c)` is `log P(candidate | query)`;
/// `query_likelihood(q, c)` is `log P(query | candidate)`;
/// `candidate_prior(c)` is `log P(candidate)`.
pub trait PairScorer: Sync {
    fn candidate_likelihood(&self, q: usize, c: usize) -> Result<f64>;
    fn query_likelihood(&self, q: usize, c: usize) -> Result<f64>;
    fn candidate_prior(&self, c: usize) -> Result<f64>;
}

/// Exact scores from a generative world.
pub struct WorldScorer<'a> {
    world: &'a GenerativeWorld,
    instance: &'a RetrievalInstance,
    /// Text priors of the texts on either side, cached once.
    text_priors: Vec<LogProb>,
    candidate_priors: Vec<f64>,
}

impl<'a> WorldScorer<'a> {
    pub fn new(world: &'a GenerativeWorld, instance: &'a RetrievalInstance) -> Result<Self> {
        let texts = match instance.direction {
            Direction::V2T => &instance.candidates,
            Direction::T2V => &instance.queries,
        };
        let text_priors = texts
            .par_iter()
            .map(|t| world.exact_text_prior(t))
            .collect::<Result<Vec<_>>>()?;
        let candidate_priors = match instance.direction {
            Direction::V2T => text_priors.iter().map(|p| p.value()).collect(),
            Direction::T2V => instance
                .candidates
                .iter()
                .map(|v| world.exact_video_prior(v).map(LogProb::value))
                .collect::<Result<Vec<_>>>()?,
        };
        Ok(WorldScorer {
            world,
            instance,
            text_priors,
            candidate_priors,
        })
    }

    fn video_given_text(&self, video: &TokenSeq, text: &TokenSeq, text_index: usize) -> Result<f64> {
        Ok(self
            .world
            .exact_cond_video_given_prior(video, text, self.text_priors[text_index])?
            .value())
    }
}

impl PairScorer for WorldScorer<'_> {
    fn candidate_likelihood(&self, q: usize, c: usize) -> Result<f64> {
        let (query, cand) = (&self.instance.queries[q], &self.instance.candidates[c]);
        match self.instance.direction {
            Direction::V2T => Ok(self.world.exact_cond_text(cand, query)?.value()),
            Direction::T2V => self.video_given_text(cand, query, q),
        }
    }

    fn query_likelihood(&self, q: usize, c: usize) -> Result<f64> {
        let (query, cand) = (&self.instance.queries[q], &self.instance.candidates[c]);
        match self.instance.direction {
            Direction::V2T => self.video_given_text(query, cand, c),
            Direction::T2V => Ok(self.world.exact_cond_text(query, cand)?.value()),
        }
    }

    fn candidate_prior(&self, c: usize) -> Result<f64> {
        Ok(self.candidate_priors[c])
    }
}

/// Scores from a trained [`BiModel`], priors from its masked passes.
pub struct ModelScorer<'a> {
    model: &'a BiModel,
    instance: &'a RetrievalInstance,
    length_normalize: bool,
    candidate_priors: Vec<f64>,
}

impl<'a> ModelScorer<'a> {
    /// With `length_normalize`, every log-score is divided by the length of
    /// the scored sequence. Off by default: raw chain sums.
    pub fn new(model: &'a BiModel, instance: &'a RetrievalInstance, length_normalize: bool) -> Result<Self> {
        let mut this = ModelScorer {
            model,
            instance,
            length_normalize,
            candidate_priors: Vec::new(),
        };
        this.candidate_priors = instance
            .candidates
            .iter()
            .map(|c| {
                let lp = match instance.direction {
                    Direction::V2T => model.log_prior_text(c)?,
                    Direction::T2V => model.log_prior_video(c)?,
                };
                Ok(this.scale(lp.value(), c))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(this)
    }

    fn scale(&self, lp: f64, scored: &TokenSeq) -> f64 {
        if self.length_normalize {
            lp / scored.len() as f64
        } else {
            lp
        }
    }

    /// `log P(scored | given)` from the head matching `scored`.
    fn cond(&self, scored: &TokenSeq, given: &TokenSeq) -> Result<f64> {
        let lp = match scored.modality() {
            crate::seq::Modality::Text => self.model.log_cond_text(scored, given)?,
            crate::seq::Modality::Video => self.model.log_cond_video(scored, given)?,
        };
        Ok(self.scale(lp.value(), scored))
    }
}

impl PairScorer for ModelScorer<'_> {
    fn candidate_likelihood(&self, q: usize, c: usize) -> Result<f64> {
        self.cond(&self.instance.candidates[c], &self.instance.queries[q])
    }

    fn query_likelihood(&self, q: usize, c: usize) -> Result<f64> {
        self.cond(&self.instance.queries[q], &self.instance.candidates[c])
    }

    fn candidate_prior(&self, c: usize) -> Result<f64> {
        Ok(self.candidate_priors[c])
    }
}

/// Scores read from precomputed tables.
#[derive(Debug, Clone)]
pub struct MatrixScorer {
    candidate: ScoreMatrix,
    query: ScoreMatrix,
    prior: ScoreMatrix,
}

impl MatrixScorer {
    /// The three tables must share query ids and candidate ids, in order.
    pub fn new(candidate: ScoreMatrix, query: ScoreMatrix, prior: ScoreMatrix) -> Result<Self> {
        if candidate.kind() != MatrixKind::CandidateLikelihood
            || query.kind() != MatrixKind::QueryLikelihood
            || prior.kind() != MatrixKind::Prior
        {
            return Err(Error::Usage(format!(
                "expected candidate_likelihood, query_likelihood and prior tables, got {}, {}, {}",
                candidate.kind(),
                query.kind(),
                prior.kind()
            )));
        }
        if candidate.query_ids() != query.query_ids() || candidate.candidate_ids() != query.candidate_ids() {
            return Err(Error::IdMismatch("candidate- and query-likelihood tables have different ids".into()));
        }
        if prior.candidate_ids() != candidate.candidate_ids() {
            return Err(Error::IdMismatch("prior table candidate ids differ from the score tables".into()));
        }
        Ok(MatrixScorer { candidate, query, prior })
    }

    pub fn query_ids(&self) -> &[String] {
        self.candidate.query_ids()
    }

    pub fn candidate_ids(&self) -> &[String] {
        self.candidate.candidate_ids()
    }
}

impl PairScorer for MatrixScorer {
    fn candidate_likelihood(&self, q: usize, c: usize) -> Result<f64> {
        Ok(self.candidate.get(q, c))
    }

    fn query_likelihood(&self, q: usize, c: usize) -> Result<f64> {
        Ok(self.query.get(q, c))
    }

    fn candidate_prior(&self, c: usize) -> Result<f64> {
        Ok(self.prior.get(0, c))
    }
}

/// Wraps a scorer and counts calls.
pub struct CountingScorer<S> {
    inner: S,
    candidate_calls: AtomicU64,
    query_calls: AtomicU64,
    prior_calls: AtomicU64,
}

impl<S: PairScorer> CountingScorer<S> {
    pub fn new(inner: S) -> Self {
        CountingScorer {
            inner,
            candidate_calls: AtomicU64::new(0),
            query_calls: AtomicU64::new(0),
            prior_calls: AtomicU64::new(0),
        }
    }

    /// (candidate-likelihood, query-likelihood, prior) call counts.
    pub fn counts(&self) -> (u64, u64, u64) {
        (
            self.candidate_calls.load(AtomicOrdering::Relaxed),
            self.query_calls.load(AtomicOrdering::Relaxed),
            self.prior_calls.load(AtomicOrdering::Relaxed),
        )
    }

    pub fn into_inner(self) -> S {
        self.inner
    }
}

impl<S: PairScorer> PairScorer for CountingScorer<S> {
    fn candidate_likelihood(&self, q: usize, c: usize) -> Result<f64> {
        self.candidate_calls.fetch_add(1, AtomicOrdering::Relaxed);
        self.inner.candidate_likelihood(q, c)
    }

    fn query_likelihood(&self, q: usize, c: usize) -> Result<f64> {
        self.query_calls.fetch_add(1, AtomicOrdering::Relaxed);
        self.inner.query_likelihood(q, c)
    }

    fn candidate_prior(&self, c: usize) -> Result<f64> {
        self.prior_calls.fetch_add(1, AtomicOrdering::Relaxed);
        self.inner.candidate_prior(c)
    }
}

impl<S: PairScorer + ?Sized> PairScorer for &S {
    fn candidate_likelihood(&self, q: usize, c: usize) -> Result<f64> {
        (**self).candidate_likelihood(q, c)
    }

    fn query_likelihood(&self, q: usize, c: usize) -> Result<f64> {
        (**self).query_likelihood(q, c)
    }

    fn candidate_prior(&self, c: usize) -> Result<f64> {
        (**self).candidate_prior(c)
    }
}

/// Which scorer a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerKind {
    World,
    BiModel,
    FileScores,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub k: usize,
    pub direction: Direction,
    pub cpn: CpnConfig,
    pub fusion: FusionMode,
    pub scorer: ScorerKind,
    /// Allow `prob_sum` fusion even though CPN scores are not probabilities.
    pub allow_calibrated_prob_sum: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            k: DEFAULT_K,
            direction: Direction::V2T,
            cpn: CpnConfig::default(),
            fusion: FusionMode::default(),
            scorer: ScorerKind::World,
            allow_calibrated_prob_sum: false,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be >= 1".into()));
        }
        self.cpn.validate()?;
        self.fusion.validate()?;
        if self.fusion == FusionMode::ProbSum && self.alpha() > 0.0 && !self.allow_calibrated_prob_sum {
            return Err(Error::Config(
                "prob_sum fusion with alpha > 0 sums calibrated scores; set allow_calibrated_prob_sum to force it".into(),
            ));
        }
        Ok(())
    }

    /// The CPN strength for this direction's candidates.
    pub fn alpha(&self) -> f64 {
        self.cpn.alpha_for(self.direction)
    }
}

/// Ids and ground truth of a retrieval universe, independent of sequences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Universe {
    pub direction: Direction,
    pub query_ids: Vec<String>,
    pub candidate_ids: Vec<String>,
    /// Ground-truth candidate index per query, when known.
    pub gt: Option<Vec<usize>>,
}

impl From<&RetrievalInstance> for Universe {
    fn from(instance: &RetrievalInstance) -> Self {
        Universe {
            direction: instance.direction,
            query_ids: instance.query_ids(),
            candidate_ids: instance.candidate_ids(),
            gt: Some(instance.gt.clone()),
        }
    }
}

/// Rerank each query's shortlist, then append the rest of its first-stage order.
///
/// `orders[q]` is a permutation of the candidate universe (best first-stage
/// match first); its first `k` entries are the shortlist. Shortlist ties are
/// broken by lowest universe index, so the result does not depend on the
/// shortlist's internal order. With `k` equal to the universe size this is
/// exactly exhaustive reranking.
pub fn rerank(universe: &Universe, orders: &[Vec<usize>], similarity: Option<&[Vec<f64>]>, k: usize, scorer: &impl PairScorer, config: &PipelineConfig) -> Result<RankingResult> {
    config.validate()?;
    let n = universe.candidate_ids.len();
    check_k(k, n)?;
    if orders.len() != universe.query_ids.len() {
        return Err(Error::Dimension(format!(
            "{} first-stage orders for {} queries",
            orders.len(),
            universe.query_ids.len()
        )));
    }
    let alpha = config.alpha();
    let rows: Vec<Result<Vec<RankedEntry>>> = orders
        .par_iter()
        .enumerate()
        .map(|(q, order)| {
            let ctx = |e: Error| Error::Scorer {
                query: universe.query_ids[q].clone(),
                source: Box::new(e),
            };
            if order.is_empty() || order.iter().any(|&c| c >= n) {
                return Err(ctx(Error::Usage("shortlist empty or outside the candidate universe".into())));
            }
            let k = k.min(order.len());
            let mut scored = Vec::with_capacity(k);
            for &c in &order[..k] {
                let cand = scorer.candidate_likelihood(q, c).map_err(ctx)?;
                let prior = scorer.candidate_prior(c).map_err(ctx)?;
                let query = scorer.query_likelihood(q, c).map_err(ctx)?;
                let normalized = cpn_cell(cand, prior, alpha).map_err(ctx)?;
                let fused = fuse_cell(normalized, query, config.fusion);
                if fused.is_nan() {
                    return Err(ctx(Error::Data(format!("fused score is NaN for candidate {}", universe.candidate_ids[c]))));
                }
                scored.push((c, fused));
            }
            scored.sort_by(|&a, &b| by_score_desc(a, b));
            let mut row: Vec<RankedEntry> = scored
                .into_iter()
                .map(|(candidate, score)| RankedEntry {
                    candidate,
                    score,
                    stage: Stage::Rerank,
                })
                .collect();
            row.extend(order[k..].iter().map(|&c| RankedEntry {
                candidate: c,
                score: similarity.map_or(0.0, |s| s[q][c]),
                stage: Stage::FirstStage,
            }));
            Ok(row)
        })
        .collect();
    let rankings = rows.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(RankingResult {
        query_ids: universe.query_ids.clone(),
        candidate_ids: universe.candidate_ids.clone(),
        rankings,
        provenance: Provenance {
            kind: MatrixKind::Fused,
            direction: Some(universe.direction),
            fusion: Some(config.fusion),
            alpha: Some(alpha),
            shortlist: Some(k),
        },
    })
}

/// Rerank every candidate for every query (no first stage).
pub fn rerank_exhaustive(universe: &Universe, scorer: &impl PairScorer, config: &PipelineConfig) -> Result<RankingResult> {
    let n = universe.candidate_ids.len();
    let orders = vec![(0..n).collect::<Vec<_>>(); universe.query_ids.len()];
    rerank(universe, &orders, None, n, scorer, config)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub queries: usize,
    pub candidates: usize,
    pub k: usize,
    pub first_stage_seconds: f64,
    pub rerank_seconds: f64,
    pub candidate_likelihood_calls: u64,
    pub query_likelihood_calls: u64,
    pub prior_calls: u64,
    /// Candidate- plus query-likelihood calls.
    pub scorer_calls: u64,
    /// Calls an exhaustive rerank would make: `2 * queries * candidates`.
    pub exhaustive_calls: u64,
}

impl TimingReport {
    /// `exhaustive_calls / scorer_calls`.
    pub fn savings(&self) -> f64 {
        self.exhaustive_calls as f64 / self.scorer_calls.max(1) as f64
    }
}

/// First stage plus rerank, with timings and call counts.
pub fn run_pipeline(
    universe: &Universe,
    query_embeddings: &EmbeddingTable,
    candidate_embeddings: &EmbeddingTable,
    scorer: &impl PairScorer,
    config: &PipelineConfig,
) -> Result<(RankingResult, TimingReport)> {
    config.validate()?;
    check_k(config.k, universe.candidate_ids.len())?;
    let queries = query_embeddings.aligned_to(&universe.query_ids)?;
    let candidates = candidate_embeddings.aligned_to(&universe.candidate_ids)?;

    let t0 = Instant::now();
    let stage = first_stage(&queries, &candidates)?;
    let first_stage_seconds = t0.elapsed().as_secs_f64();

    let counting = CountingScorer::new(scorer);
    let t1 = Instant::now();
    let result = rerank(universe, &stage.orders, Some(&stage.similarity), config.k, &counting, config)?;
    let rerank_seconds = t1.elapsed().as_secs_f64();

    let (cand, query, prior) = counting.counts();
    let (nq, nc) = (universe.query_ids.len() as u64, universe.candidate_ids.len() as u64);
    let timing = TimingReport {
        queries: nq as usize,
        candidates: nc as usize,
        k: config.k,
        first_stage_seconds,
        rerank_seconds,
        candidate_likelihood_calls: cand,
        query_likelihood_calls: query,
        prior_calls: prior,
        scorer_calls: cand + query,
        exhaustive_calls: 2 * nq * nc,
    };
    Ok((result, timing))
}

/// Full candidate-likelihood, query-likelihood and prior tables of a scorer.
pub fn score_tables(universe: &Universe, scorer: &impl PairScorer) -> Result<(ScoreMatrix, ScoreMatrix, ScoreMatrix)> {
    let (nq, nc) = (universe.query_ids.len(), universe.candidate_ids.len());
    let rows: Vec<Result<(Vec<f64>, Vec<f64>)>> = (0..nq)
        .into_par_iter()
        .map(|q| {
            let ctx = |e: Error| Error::Scorer {
                query: universe.query_ids[q].clone(),
                source: Box::new(e),
            };
            let mut cand = Vec::with_capacity(nc);
            let mut query = Vec::with_capacity(nc);
            for c in 0..nc {
                cand.push(scorer.candidate_likelihood(q, c).map_err(ctx)?);
                query.push(scorer.query_likelihood(q, c).map_err(ctx)?);
            }
            Ok((cand, query))
        })
        .collect();
    let mut cand = Vec::with_capacity(nq * nc);
    let mut query = Vec::with_capacity(nq * nc);
    for row in rows {
        let (c, q) = row?;
        cand.extend(c);
        query.extend(q);
    }
    let priors = (0..nc).map(|c| scorer.candidate_prior(c)).collect::<Result<Vec<_>>>()?;
    Ok((
        ScoreMatrix::new(MatrixKind::CandidateLikelihood, universe.query_ids.clone(), universe.candidate_ids.clone(), cand)?,
        ScoreMatrix::new(MatrixKind::QueryLikelihood, universe.query_ids.clone(), universe.candidate_ids.clone(), query)?,
        ScoreMatrix::prior(universe.candidate_ids.clone(), priors)?,
    ))
}
