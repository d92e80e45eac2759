//! Retrieval metrics and prior-bias diagnostics.
//!
//! - [`recall_at_k`]: percentage of queries whose ground truth is in the top K.
//! - [`concentration`]: how often the single most-retrieved candidate wins.
//! - [`pearson`], [`repetition_count`]: inputs to the prior correlations.
//! - [`bias_report`]: all of the above against a candidate prior table.
//! - [`heatmap_export`] / [`heatmap_import`]: score grids as CSV plus a JSON sidecar.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::calibrate::RankingResult;
use crate::error::{Error, Result};
use crate::score::{format_score, parse_score, MatrixKind, ScoreMatrix};
use crate::seq::{Direction, TokenSeq};

/// Recall percentages of one retrieval direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallReport {
    pub direction: Option<Direction>,
    pub queries: usize,
    /// K -> recall in percent.
    pub recall: BTreeMap<usize, f64>,
}

impl RecallReport {
    pub fn at(&self, k: usize) -> Option<f64> {
        self.recall.get(&k).copied()
    }
}

/// 1-based rank of each query's ground truth.
pub fn gt_ranks(result: &RankingResult, gt: &[usize]) -> Result<Vec<usize>> {
    if gt.len() != result.queries() {
        return Err(Error::Data(format!(
            "ground truth covers {} of {} queries",
            gt.len(),
            result.queries()
        )));
    }
    gt.iter()
        .enumerate()
        .map(|(q, &c)| {
            result.rank_of(q, c).ok_or_else(|| {
                Error::Data(format!(
                    "ground-truth candidate of query {} is not in its ranking",
                    result.query_ids[q]
                ))
            })
        })
        .collect()
}

/// Recall@K in percent for each K in `ks`; `gt[q]` is query `q`'s candidate index.
pub fn recall_at_k(result: &RankingResult, gt: &[usize], ks: &[usize]) -> Result<RecallReport> {
    if ks.contains(&0) {
        return Err(Error::Usage("recall cutoffs must be >= 1".into()));
    }
    let ranks = gt_ranks(result, gt)?;
    let n = ranks.len();
    let recall = ks
        .iter()
        .map(|&k| {
            let hits = ranks.iter().filter(|&&r| r <= k).count();
            (k, if n == 0 { 0.0 } else { 100.0 * hits as f64 / n as f64 })
        })
        .collect();
    Ok(RecallReport {
        direction: result.provenance.direction,
        queries: n,
        recall,
    })
}

/// Most frequent top-1 candidate (lowest index on ties) and its share of queries.
pub fn concentration(result: &RankingResult) -> Result<(usize, f64)> {
    if result.queries() == 0 {
        return Err(Error::Usage("concentration of an empty ranking".into()));
    }
    let mut counts = vec![0usize; result.candidate_ids.len()];
    for q in 0..result.queries() {
        counts[result.top1(q)] += 1;
    }
    let (mut best, mut best_count) = (0, 0);
    for (c, &n) in counts.iter().enumerate() {
        if n > best_count {
            best = c;
            best_count = n;
        }
    }
    Ok((best, best_count as f64 / result.queries() as f64))
}

/// Sample Pearson correlation coefficient.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::Usage(format!(
            "pearson needs two equal-length lists of >= 2 values, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("one of the inputs has zero variance".into()));
    }
    if !(sxx.is_finite() && syy.is_finite() && sxy.is_finite()) {
        return Err(Error::UndefinedCorrelation("non-finite input".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Surplus occurrences of overlapping n-grams: `Σ max(0, count - 1)`.
pub fn repetition_count(seq: &TokenSeq, n: usize) -> Result<usize> {
    if n == 0 {
        return Err(Error::Usage("n-gram order must be >= 1".into()));
    }
    let toks = seq.tokens();
    if toks.len() < n {
        return Ok(0);
    }
    let mut counts: HashMap<&[crate::seq::Token], usize> = HashMap::new();
    for w in toks.windows(n) {
        *counts.entry(w).or_default() += 1;
    }
    Ok(counts.values().map(|c| c - 1).sum())
}

pub const CORR_PRIOR_LENGTH: &str = "prior_vs_length";
pub const CORR_PRIOR_REPETITION: &str = "prior_vs_repetition";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub concentration: f64,
    /// Candidate ranked first most often.
    pub modal_candidate_id: String,
    /// Candidate with the highest prior (lowest index on ties).
    pub top_prior_candidate_id: String,
    /// Per query: rank of its ground truth when all candidates are ordered by
    /// prior. Ties share the best rank, so uniform priors give rank 1 everywhere.
    pub prior_rank_of_gt: Vec<(String, usize)>,
    /// Named Pearson coefficients; omitted when undefined.
    pub correlations: BTreeMap<String, f64>,
}

/// Bias diagnostics of a ranking against candidate priors.
///
/// `candidates`, when given, supplies the sequences for the length and
/// repetition correlations (bigram repetition).
pub fn bias_report(result: &RankingResult, priors: &ScoreMatrix, gt: &[usize], candidates: Option<&[TokenSeq]>) -> Result<BiasReport> {
    if priors.kind() != MatrixKind::Prior {
        return Err(Error::Usage(format!("expected a prior table, got {}", priors.kind())));
    }
    if priors.candidate_ids() != result.candidate_ids.as_slice() {
        return Err(Error::IdMismatch("prior ids differ from the ranking's candidate ids".into()));
    }
    if gt.len() != result.queries() || gt.iter().any(|&c| c >= priors.cols()) {
        return Err(Error::Data("ground truth does not cover every query".into()));
    }
    let p = priors.row(0);
    let (modal, frac) = concentration(result)?;
    let top_prior = crate::logprob::argmax_with_ties(p, 0.0)?;
    let prior_rank_of_gt = gt
        .iter()
        .enumerate()
        .map(|(q, &c)| {
            let better = p.iter().filter(|&&x| x > p[c]).count();
            (result.query_ids[q].clone(), better + 1)
        })
        .collect();
    let mut correlations = BTreeMap::new();
    if let Some(cands) = candidates {
        if cands.len() != p.len() {
            return Err(Error::Dimension(format!("{} candidate sequences for {} priors", cands.len(), p.len())));
        }
        let lengths: Vec<f64> = cands.iter().map(|s| s.len() as f64).collect();
        let reps = cands
            .iter()
            .map(|s| repetition_count(s, 2).map(|r| r as f64))
            .collect::<Result<Vec<_>>>()?;
        for (name, xs) in [(CORR_PRIOR_LENGTH, &lengths), (CORR_PRIOR_REPETITION, &reps)] {
            match pearson(p, xs) {
                Ok(r) => {
                    correlations.insert(name.to_string(), r);
                }
                Err(Error::UndefinedCorrelation(_)) => {}
                Err(e) => return Err(e),
            }
        }
    }
    Ok(BiasReport {
        concentration: frac,
        modal_candidate_id: result.candidate_ids[modal].clone(),
        top_prior_candidate_id: result.candidate_ids[top_prior].clone(),
        prior_rank_of_gt,
        correlations,
    })
}

impl BiasReport {
    /// Long-format CSV `field,key,value` in a fixed field order.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("field,key,value\n");
        out.push_str(&format!("concentration,,{:?}\n", self.concentration));
        out.push_str(&format!("modal_candidate_id,,{}\n", self.modal_candidate_id));
        out.push_str(&format!("top_prior_candidate_id,,{}\n", self.top_prior_candidate_id));
        for (name, r) in &self.correlations {
            out.push_str(&format!("correlation,{name},{r:?}\n"));
        }
        for (q, r) in &self.prior_rank_of_gt {
            out.push_str(&format!("prior_rank_of_gt,{q},{r}\n"));
        }
        out
    }

    pub fn from_csv(text: &str, path: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
        let mut concentration = None;
        let mut modal = None;
        let mut top_prior = None;
        let mut correlations = BTreeMap::new();
        let mut ranks = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| Error::parse(path, line, e.to_string()))?;
            if rec.len() != 3 {
                return Err(Error::parse(path, line, "expected 3 fields"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| Error::parse(path, line, format!("not a number: {s:?}")));
            match &rec[0] {
                "concentration" => concentration = Some(num(&rec[2])?),
                "modal_candidate_id" => modal = Some(rec[2].to_string()),
                "top_prior_candidate_id" => top_prior = Some(rec[2].to_string()),
                "correlation" => {
                    correlations.insert(rec[1].to_string(), num(&rec[2])?);
                }
                "prior_rank_of_gt" => {
                    let r = rec[2]
                        .parse::<usize>()
                        .map_err(|_| Error::parse(path, line, format!("bad rank {:?}", &rec[2])))?;
                    ranks.push((rec[1].to_string(), r));
                }
                other => return Err(Error::parse(path, line, format!("unknown field {other:?}"))),
            }
        }
        let missing = |what: &str| Error::parse(path, 1, format!("missing {what}"));
        Ok(BiasReport {
            concentration: concentration.ok_or_else(|| missing("concentration"))?,
            modal_candidate_id: modal.ok_or_else(|| missing("modal_candidate_id"))?,
            top_prior_candidate_id: top_prior.ok_or_else(|| missing("top_prior_candidate_id"))?,
            prior_rank_of_gt: ranks,
            correlations,
        })
    }
}

/// Default row/column cap for heatmaps.
pub const HEATMAP_SUBSAMPLE: usize = 50;

/// Sidecar written next to every heatmap CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapMeta {
    pub kind: MatrixKind,
    pub calibrated: bool,
    /// Shape of the matrix before subsampling.
    pub source_rows: usize,
    pub source_cols: usize,
    pub query_ids: Vec<String>,
    pub candidate_ids: Vec<String>,
    /// Free-form description of the run that produced the matrix.
    pub config: String,
    pub seed: u64,
}

/// `heat.csv` -> `heat.meta.json`.
pub fn heatmap_meta_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("meta.json")
}

/// `count` indices spread evenly over `0..n` (all of them if `n <= count`).
pub fn even_subsample(n: usize, count: usize) -> Vec<usize> {
    if n <= count {
        return (0..n).collect();
    }
    (0..count).map(|i| i * n / count).collect()
}

/// Write a score grid (rows = queries, columns = candidates) and its sidecar.
///
/// With `subsample = Some(m)`, at most `m` rows and `m` columns are kept,
/// evenly spaced; the same positions are used on both axes so a diagonal
/// ground truth stays on the diagonal.
pub fn heatmap_export(matrix: &ScoreMatrix, path: impl AsRef<Path>, subsample: Option<usize>, config: &str, seed: u64) -> Result<HeatmapMeta> {
    let path = path.as_ref();
    let (rows, cols) = match subsample {
        Some(0) => return Err(Error::Usage("heatmap subsample must be >= 1".into())),
        Some(m) => (even_subsample(matrix.rows(), m), even_subsample(matrix.cols(), m)),
        None => ((0..matrix.rows()).collect(), (0..matrix.cols()).collect()),
    };
    let sub = matrix.select_rows(&rows)?.select_columns(&cols)?;
    let mut out = String::from("query_id");
    for id in sub.candidate_ids() {
        out.push(',');
        out.push_str(id);
    }
    out.push('\n');
    for r in 0..sub.rows() {
        out.push_str(&sub.query_ids()[r]);
        for &s in sub.row(r) {
            out.push(',');
            out.push_str(&format_score(s));
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))?;
    let meta = HeatmapMeta {
        kind: sub.kind(),
        calibrated: sub.is_calibrated(),
        source_rows: matrix.rows(),
        source_cols: matrix.cols(),
        query_ids: sub.query_ids().to_vec(),
        candidate_ids: sub.candidate_ids().to_vec(),
        config: config.to_string(),
        seed,
    };
    let meta_path = heatmap_meta_path(path);
    let json = serde_json::to_string_pretty(&meta).map_err(|e| Error::Serde(e.to_string()))?;
    std::fs::write(&meta_path, json + "\n").map_err(|e| Error::io(&meta_path, e))?;
    Ok(meta)
}

/// Read a heatmap CSV (and its sidecar) back into a table.
pub fn heatmap_import(path: impl AsRef<Path>) -> Result<ScoreMatrix> {
    let path = path.as_ref();
    let meta_path = heatmap_meta_path(path);
    let meta_text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: HeatmapMeta = serde_json::from_str(&meta_text).map_err(|e| Error::Serde(format!("{}: {e}", meta_path.display())))?;
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| Error::parse(path, 1, e.to_string()))?.clone();
    let candidate_ids: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    if candidate_ids != meta.candidate_ids {
        return Err(Error::IdMismatch(format!(
            "{} columns differ from {}",
            path.display(),
            meta_path.display()
        )));
    }
    let mut query_ids = Vec::new();
    let mut scores = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::parse(path, line, e.to_string()))?;
        query_ids.push(rec[0].to_string());
        for cell in rec.iter().skip(1) {
            scores.push(parse_score(cell).map_err(|m| Error::parse(path, line, m))?);
        }
    }
    ScoreMatrix::with_calibration(meta.kind, query_ids, candidate_ids, scores, meta.calibrated)
}
