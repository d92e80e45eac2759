//! Precomputed score files as a score source.
//!
//! A bundle names three score tables (see [`crate::score`]) plus optional
//! side files:
//!
//! * `ground_truth`: CSV `query_id,candidate_id`, one row per query;
//! * `query_embeddings` / `candidate_embeddings`: embedding tables
//!   (see [`crate::pipeline::EmbeddingTable`]) for the first stage;
//! * `candidate_tokens`: CSV `candidate_id,tokens` with space-separated
//!   token ids, used for the length and repetition diagnostics.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::{EmbeddingTable, MatrixScorer, Universe};
use crate::score::{MatrixKind, ScoreMatrix};
use crate::seq::{Direction, TokenSeq};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreFileBundle {
    pub candidate: PathBuf,
    pub query: PathBuf,
    pub prior: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_embeddings: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidate_embeddings: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidate_tokens: Option<PathBuf>,
}

/// A loaded, cross-checked bundle.
#[derive(Debug, Clone)]
pub struct LoadedBundle {
    pub scorer: MatrixScorer,
    pub candidate: ScoreMatrix,
    pub query: ScoreMatrix,
    pub prior: ScoreMatrix,
    pub gt: Option<Vec<usize>>,
    /// `(queries, candidates)`, aligned to the score tables' ids.
    pub embeddings: Option<(EmbeddingTable, EmbeddingTable)>,
    pub candidate_tokens: Option<Vec<TokenSeq>>,
}

impl LoadedBundle {
    pub fn universe(&self, direction: Direction) -> Universe {
        Universe {
            direction,
            query_ids: self.candidate.query_ids().to_vec(),
            candidate_ids: self.candidate.candidate_ids().to_vec(),
            gt: self.gt.clone(),
        }
    }
}

impl ScoreFileBundle {
    pub fn paths(&self) -> Vec<&Path> {
        let mut out = vec![self.candidate.as_path(), self.query.as_path(), self.prior.as_path()];
        for p in [&self.ground_truth, &self.query_embeddings, &self.candidate_embeddings, &self.candidate_tokens]
            .into_iter()
            .flatten()
        {
            out.push(p);
        }
        out
    }

    pub(crate) fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.candidate);
        fix(&mut self.query);
        fix(&mut self.prior);
        for p in [
            &mut self.ground_truth,
            &mut self.query_embeddings,
            &mut self.candidate_embeddings,
            &mut self.candidate_tokens,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    pub fn check_exists(&self) -> Result<()> {
        if self.query_embeddings.is_some() != self.candidate_embeddings.is_some() {
            return Err(Error::Config("query_embeddings and candidate_embeddings must be given together".into()));
        }
        for p in self.paths() {
            if !p.exists() {
                return Err(Error::Config(format!("referenced file {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    /// Load every file and check that kinds and ids agree.
    pub fn load(&self) -> Result<LoadedBundle> {
        self.check_exists()?;
        let candidate = load_kind(&self.candidate, MatrixKind::CandidateLikelihood)?;
        let query = load_kind(&self.query, MatrixKind::QueryLikelihood)?;
        let prior = load_kind(&self.prior, MatrixKind::Prior)?;
        let candidate_ids = candidate.candidate_ids();
        let query_ids = candidate.query_ids();
        if query.query_ids() != query_ids {
            return Err(mismatch("query ids", &self.candidate, &self.query, query_ids, query.query_ids()));
        }
        if query.candidate_ids() != candidate_ids {
            return Err(mismatch("candidate ids", &self.candidate, &self.query, candidate_ids, query.candidate_ids()));
        }
        if prior.candidate_ids() != candidate_ids {
            return Err(mismatch("candidate ids", &self.candidate, &self.prior, candidate_ids, prior.candidate_ids()));
        }
        let gt = self
            .ground_truth
            .as_deref()
            .map(|p| load_ground_truth(p, query_ids, candidate_ids))
            .transpose()?;
        let embeddings = match (&self.query_embeddings, &self.candidate_embeddings) {
            (Some(qp), Some(cp)) => {
                let q = EmbeddingTable::load(qp)?;
                let c = EmbeddingTable::load(cp)?;
                let q = q.aligned_to(query_ids).map_err(|e| in_file(e, qp))?;
                let c = c.aligned_to(candidate_ids).map_err(|e| in_file(e, cp))?;
                Some((q, c))
            }
            _ => None,
        };
        let candidate_tokens = self
            .candidate_tokens
            .as_deref()
            .map(|p| load_tokens(p, candidate_ids))
            .transpose()?;
        let scorer = MatrixScorer::new(candidate.clone(), query.clone(), prior.clone())?;
        Ok(LoadedBundle {
            scorer,
            candidate,
            query,
            prior,
            gt,
            embeddings,
            candidate_tokens,
        })
    }
}

fn in_file(e: Error, path: &Path) -> Error {
    match e {
        Error::IdMismatch(m) => Error::IdMismatch(format!("{}: {m}", path.display())),
        other => other,
    }
}

fn load_kind(path: &Path, kind: MatrixKind) -> Result<ScoreMatrix> {
    let m = ScoreMatrix::load(path)?;
    if m.kind() != kind {
        return Err(Error::Data(format!("{}: expected kind={kind}, found kind={}", path.display(), m.kind())));
    }
    Ok(m)
}

fn mismatch(what: &str, a: &Path, b: &Path, left: &[String], right: &[String]) -> Error {
    let detail = if left.len() != right.len() {
        format!("{} vs {} entries", left.len(), right.len())
    } else {
        let i = left.iter().zip(right).position(|(x, y)| x != y).unwrap_or(0);
        format!("position {i}: {:?} vs {:?}", left[i], right[i])
    };
    Error::IdMismatch(format!("{what} differ between {} and {} ({detail})", a.display(), b.display()))
}

fn csv_rows(path: &Path, header: [&str; 2]) -> Result<Vec<(usize, String, String)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::parse(path, 1, e.to_string()))?;
    let found = reader.headers().map_err(|e| Error::parse(path, 1, e.to_string()))?.clone();
    if found.iter().collect::<Vec<_>>() != header {
        return Err(Error::parse(path, 1, format!("expected header {}", header.join(","))));
    }
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| Error::parse(path, line, e.to_string()))?;
        if record.len() != 2 {
            return Err(Error::parse(path, line, format!("expected 2 fields, found {}", record.len())));
        }
        out.push((line, record[0].trim().to_string(), record[1].trim().to_string()));
    }
    Ok(out)
}

fn index_of(ids: &[String]) -> HashMap<&str, usize> {
    ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect()
}

/// Ground truth in query order.
pub fn load_ground_truth(path: &Path, query_ids: &[String], candidate_ids: &[String]) -> Result<Vec<usize>> {
    let queries = index_of(query_ids);
    let candidates = index_of(candidate_ids);
    let mut gt = vec![None; query_ids.len()];
    for (line, q, c) in csv_rows(path, ["query_id", "candidate_id"])? {
        let qi = *queries
            .get(q.as_str())
            .ok_or_else(|| Error::IdMismatch(format!("{}:{line}: unknown query id {q:?}", path.display())))?;
        let ci = *candidates
            .get(c.as_str())
            .ok_or_else(|| Error::IdMismatch(format!("{}:{line}: unknown candidate id {c:?}", path.display())))?;
        if gt[qi].replace(ci).is_some() {
            return Err(Error::parse(path, line, format!("duplicate query id {q:?}")));
        }
    }
    gt.into_iter()
        .enumerate()
        .map(|(i, g)| {
            g.ok_or_else(|| Error::IdMismatch(format!("{}: no ground truth for query {:?}", path.display(), query_ids[i])))
        })
        .collect()
}

/// Candidate token sequences in candidate order. The vocabulary is taken as
/// one past the largest token id in the file.
pub fn load_tokens(path: &Path, candidate_ids: &[String]) -> Result<Vec<TokenSeq>> {
    let candidates = index_of(candidate_ids);
    let mut raw: Vec<Option<Vec<u32>>> = vec![None; candidate_ids.len()];
    for (line, c, tokens) in csv_rows(path, ["candidate_id", "tokens"])? {
        let ci = *candidates
            .get(c.as_str())
            .ok_or_else(|| Error::IdMismatch(format!("{}:{line}: unknown candidate id {c:?}", path.display())))?;
        let toks = tokens
            .split_whitespace()
            .map(|t| t.parse::<u32>().map_err(|e| Error::parse(path, line, format!("token {t:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        if toks.is_empty() {
            return Err(Error::parse(path, line, "empty token sequence"));
        }
        if raw[ci].replace(toks).is_some() {
            return Err(Error::parse(path, line, format!("duplicate candidate id {c:?}")));
        }
    }
    let vocab = raw.iter().flatten().flatten().max().map_or(1, |&m| m as usize + 1);
    raw.into_iter()
        .enumerate()
        .map(|(i, t)| {
            let t = t.ok_or_else(|| {
                Error::IdMismatch(format!("{}: no tokens for candidate {:?}", path.display(), candidate_ids[i]))
            })?;
            TokenSeq::text(vocab, t)
        })
        .collect()
}
