//! Candidate prior normalization (CPN), score fusion and ranking.
//!
//! Everything here is pure score algebra over [`ScoreMatrix`] values, so it
//! applies equally to oracle scores, model scores and ingested files. The
//! per-cell functions [`cpn_cell`] and [`fuse_cell`] are exported so the
//! reranking pipeline applies exactly the same arithmetic to shortlists.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logprob::{log_add_exp, NEG_INF};
use crate::score::{MatrixKind, ScoreMatrix};
use crate::seq::Direction;

/// Normalization strengths for the two candidate modalities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CpnConfig {
    /// Used when candidates are texts (video-to-text).
    pub alpha_t_given_v: f64,
    /// Used when candidates are videos (text-to-video).
    pub alpha_v_given_t: f64,
}

impl Default for CpnConfig {
    fn default() -> Self {
        CpnConfig {
            alpha_t_given_v: 0.9,
            alpha_v_given_t: 0.1,
        }
    }
}

impl CpnConfig {
    /// Same strength in both directions.
    pub fn uniform(alpha: f64) -> Self {
        CpnConfig {
            alpha_t_given_v: alpha,
            alpha_v_given_t: alpha,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha_t_given_v)?;
        check_alpha(self.alpha_v_given_t)
    }

    pub fn alpha_for(&self, direction: Direction) -> f64 {
        match direction {
            Direction::V2T => self.alpha_t_given_v,
            Direction::T2V => self.alpha_v_given_t,
        }
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::Config(format!("alpha = {alpha} outside [0, 1]")))
    }
}

/// How candidate-side and query-side scores are combined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// Sum in probability space, stored as `ln(e^a + e^b)`.
    ProbSum,
    /// Sum of log-scores.
    LogSum,
    /// `w * a + (1 - w) * b`.
    WeightedLogSum(f64),
}

impl Default for FusionMode {
    fn default() -> Self {
        FusionMode::LogSum
    }
}

impl FusionMode {
    pub fn validate(&self) -> Result<()> {
        match *self {
            FusionMode::WeightedLogSum(w) if !(0.0..=1.0).contains(&w) => {
                Err(Error::Config(format!("fusion weight {w} outside [0, 1]")))
            }
            _ => Ok(()),
        }
    }
}

impl std::fmt::Display for FusionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FusionMode::ProbSum => f.write_str("prob_sum"),
            FusionMode::LogSum => f.write_str("log_sum"),
            FusionMode::WeightedLogSum(w) => write!(f, "weighted_log_sum({w})"),
        }
    }
}

impl std::str::FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let mode = match s {
            "prob_sum" => FusionMode::ProbSum,
            "log_sum" => FusionMode::LogSum,
            _ => {
                let w = s
                    .strip_prefix("weighted_log_sum(")
                    .and_then(|rest| rest.strip_suffix(')'))
                    .and_then(|w| w.trim().parse::<f64>().ok())
                    .ok_or_else(|| Error::Config(format!("unknown fusion mode {s:?}")))?;
                FusionMode::WeightedLogSum(w)
            }
        };
        mode.validate()?;
        Ok(mode)
    }
}

/// `score - alpha * prior` for one cell.
///
/// `alpha == 0` returns `score` untouched (bit-identical). An impossible
/// candidate stays impossible. A possible candidate with an impossible prior
/// is contradictory input and is rejected.
#[inline]
pub fn cpn_cell(score: f64, prior: f64, alpha: f64) -> Result<f64> {
    if alpha == 0.0 || score == NEG_INF {
        return Ok(score);
    }
    if prior == NEG_INF {
        return Err(Error::Data(format!(
            "candidate has score {score} but prior probability zero"
        )));
    }
    Ok(score - alpha * prior)
}

/// Combine one candidate-side and one query-side score.
#[inline]
pub fn fuse_cell(a: f64, b: f64, mode: FusionMode) -> f64 {
    match mode {
        FusionMode::ProbSum => log_add_exp(a, b),
        FusionMode::LogSum => a + b,
        FusionMode::WeightedLogSum(w) if w == 1.0 => a,
        FusionMode::WeightedLogSum(w) if w == 0.0 => b,
        FusionMode::WeightedLogSum(w) => w * a + (1.0 - w) * b,
    }
}

/// Subtract `alpha` times the candidate log prior from every row.
///
/// The result is flagged calibrated: its entries are scores, not probabilities.
pub fn cpn_normalize(candidate_scores: &ScoreMatrix, prior: &ScoreMatrix, alpha: f64) -> Result<ScoreMatrix> {
    check_alpha(alpha)?;
    if prior.kind() != MatrixKind::Prior {
        return Err(Error::Usage(format!("expected a prior table, got {}", prior.kind())));
    }
    if prior.candidate_ids() != candidate_scores.candidate_ids() {
        return Err(Error::IdMismatch(
            "prior candidate ids differ from the score table's candidate ids".into(),
        ));
    }
    let p = prior.row(0);
    let cols = candidate_scores.cols();
    let scores = candidate_scores
        .scores()
        .iter()
        .enumerate()
        .map(|(i, &s)| cpn_cell(s, p[i % cols], alpha))
        .collect::<Result<Vec<f64>>>()?;
    ScoreMatrix::with_calibration(
        candidate_scores.kind(),
        candidate_scores.query_ids().to_vec(),
        candidate_scores.candidate_ids().to_vec(),
        scores,
        true,
    )
}

/// Cellwise fusion of two tables over the same ids.
pub fn fuse(a: &ScoreMatrix, b: &ScoreMatrix, mode: FusionMode) -> Result<ScoreMatrix> {
    fuse_with_override(a, b, mode, false)
}

/// [`fuse`], optionally allowing probability-space sums of calibrated scores.
pub fn fuse_with_override(a: &ScoreMatrix, b: &ScoreMatrix, mode: FusionMode, allow_calibrated_prob_sum: bool) -> Result<ScoreMatrix> {
    mode.validate()?;
    if a.query_ids() != b.query_ids() || a.candidate_ids() != b.candidate_ids() {
        return Err(Error::IdMismatch("fused tables have different query or candidate ids".into()));
    }
    if mode == FusionMode::ProbSum && !allow_calibrated_prob_sum && (a.is_calibrated() || b.is_calibrated()) {
        return Err(Error::Usage(
            "prob_sum fusion of calibrated scores (they are not probabilities); pass the override to force it".into(),
        ));
    }
    let scores: Vec<f64> = a
        .scores()
        .iter()
        .zip(b.scores())
        .map(|(&x, &y)| fuse_cell(x, y, mode))
        .collect();
    ScoreMatrix::with_calibration(MatrixKind::Fused, a.query_ids().to_vec(), a.candidate_ids().to_vec(), scores, true)
}

/// Which stage placed an entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Scored by the reranker; `score` is the fused score.
    Rerank,
    /// Outside the shortlist, appended in first-stage order; `score` is the cosine similarity.
    FirstStage,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Rerank => "rerank",
            Stage::FirstStage => "first_stage",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    /// Index into [`RankingResult::candidate_ids`].
    pub candidate: usize,
    pub score: f64,
    pub stage: Stage,
}

/// How a ranking was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub kind: MatrixKind,
    pub direction: Option<Direction>,
    pub fusion: Option<FusionMode>,
    pub alpha: Option<f64>,
    pub shortlist: Option<usize>,
}

impl Provenance {
    pub fn of(kind: MatrixKind) -> Self {
        Provenance {
            kind,
            direction: None,
            fusion: None,
            alpha: None,
            shortlist: None,
        }
    }
}

/// A full per-query ordering of the candidates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingResult {
    pub query_ids: Vec<String>,
    pub candidate_ids: Vec<String>,
    /// `rankings[q]` lists every candidate once, best first.
    pub rankings: Vec<Vec<RankedEntry>>,
    pub provenance: Provenance,
}

impl RankingResult {
    pub fn queries(&self) -> usize {
        self.query_ids.len()
    }

    /// Candidate index ranked first for query `q`.
    pub fn top1(&self, q: usize) -> usize {
        self.rankings[q][0].candidate
    }

    /// Candidate indices in rank order for query `q`.
    pub fn order(&self, q: usize) -> Vec<usize> {
        self.rankings[q].iter().map(|e| e.candidate).collect()
    }

    /// 1-based rank of `candidate` for query `q`.
    pub fn rank_of(&self, q: usize, candidate: usize) -> Option<usize> {
        self.rankings[q].iter().position(|e| e.candidate == candidate).map(|p| p + 1)
    }

    /// CSV with columns `query_id,rank,candidate_id,score,stage`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("query_id,rank,candidate_id,score,stage\n");
        for (q, row) in self.rankings.iter().enumerate() {
            for (r, e) in row.iter().enumerate() {
                out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    self.query_ids[q],
                    r + 1,
                    self.candidate_ids[e.candidate],
                    crate::score::format_score(e.score),
                    e.stage.as_str()
                ));
            }
        }
        out
    }
}

/// Descending score, then ascending index.
#[inline]
pub(crate) fn by_score_desc(a: (usize, f64), b: (usize, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// Order candidate indices `0..scores.len()` best first, lowest index on ties.
pub fn rank_row(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| by_score_desc((a, scores[a]), (b, scores[b])));
    idx
}

/// Rank every row of a table.
pub fn rank(scores: &ScoreMatrix) -> RankingResult {
    let rankings = (0..scores.rows())
        .into_par_iter()
        .map(|q| {
            let row = scores.row(q);
            rank_row(row)
                .into_iter()
                .map(|c| RankedEntry {
                    candidate: c,
                    score: row[c],
                    stage: Stage::Rerank,
                })
                .collect()
        })
        .collect();
    RankingResult {
        query_ids: scores.query_ids().to_vec(),
        candidate_ids: scores.candidate_ids().to_vec(),
        rankings,
        provenance: Provenance::of(scores.kind()),
    }
}
