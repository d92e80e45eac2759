//! Dense query x candidate score tables and their text file format.
//!
//! File layout (one record per line, `\n` terminated):
//!
//! ```text
//! kind=candidate_likelihood rows=2 cols=3
//! query_ids=q0,q1
//! candidate_ids=c0,c1,c2
//! -1.25,-2.5,-inf
//! -0.5,-3.0,-4.75
//! ```
//!
//! `kind` is one of `candidate_likelihood`, `query_likelihood`, `prior`,
//! `fused`. Calibrated tables append ` calibrated=true` to the header. Scores
//! are written in shortest round-trip decimal form; probability zero is
//! spelled `-inf`. Ids may not contain commas or whitespace.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logprob::POSITIVE_SLACK;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixKind {
    CandidateLikelihood,
    QueryLikelihood,
    /// Degenerate 1 x N table of candidate priors.
    Prior,
    Fused,
}

impl MatrixKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MatrixKind::CandidateLikelihood => "candidate_likelihood",
            MatrixKind::QueryLikelihood => "query_likelihood",
            MatrixKind::Prior => "prior",
            MatrixKind::Fused => "fused",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "candidate_likelihood" => MatrixKind::CandidateLikelihood,
            "query_likelihood" => MatrixKind::QueryLikelihood,
            "prior" => MatrixKind::Prior,
            "fused" => MatrixKind::Fused,
            _ => return None,
        })
    }
}

impl std::fmt::Display for MatrixKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Row id used for the single row of a prior table.
pub const PRIOR_ROW_ID: &str = "prior";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMatrix {
    kind: MatrixKind,
    query_ids: Vec<String>,
    candidate_ids: Vec<String>,
    scores: Vec<f64>,
    calibrated: bool,
}

fn check_ids(ids: &[String], what: &str) -> Result<()> {
    let mut seen = HashSet::with_capacity(ids.len());
    for id in ids {
        if id.is_empty() || id.contains(',') || id.chars().any(char::is_whitespace) {
            return Err(Error::Data(format!("{what} id {id:?} is empty or contains a comma/whitespace")));
        }
        if !seen.insert(id.as_str()) {
            return Err(Error::Data(format!("duplicate {what} id {id:?}")));
        }
    }
    Ok(())
}

impl ScoreMatrix {
    /// Uncalibrated table; scores must be log-probabilities.
    pub fn new(kind: MatrixKind, query_ids: Vec<String>, candidate_ids: Vec<String>, scores: Vec<f64>) -> Result<Self> {
        Self::with_calibration(kind, query_ids, candidate_ids, scores, false)
    }

    pub fn with_calibration(
        kind: MatrixKind,
        query_ids: Vec<String>,
        candidate_ids: Vec<String>,
        scores: Vec<f64>,
        calibrated: bool,
    ) -> Result<Self> {
        check_ids(&query_ids, "query")?;
        check_ids(&candidate_ids, "candidate")?;
        if query_ids.is_empty() || candidate_ids.is_empty() {
            return Err(Error::Dimension("score matrix needs at least one row and one column".into()));
        }
        if kind == MatrixKind::Prior && query_ids.len() != 1 {
            return Err(Error::Dimension(format!("prior table has {} rows, expected 1", query_ids.len())));
        }
        if scores.len() != query_ids.len() * candidate_ids.len() {
            return Err(Error::Dimension(format!(
                "{} scores for a {}x{} table",
                scores.len(),
                query_ids.len(),
                candidate_ids.len()
            )));
        }
        if let Some(i) = scores.iter().position(|s| s.is_nan()) {
            return Err(Error::Data(format!(
                "NaN score at row {}, column {}",
                i / candidate_ids.len(),
                i % candidate_ids.len()
            )));
        }
        if !calibrated {
            if let Some(i) = scores.iter().position(|&s| s > POSITIVE_SLACK) {
                return Err(Error::Data(format!(
                    "uncalibrated {kind} table has positive log-probability {} at row {}, column {}",
                    scores[i],
                    i / candidate_ids.len(),
                    i % candidate_ids.len()
                )));
            }
        }
        Ok(ScoreMatrix {
            kind,
            query_ids,
            candidate_ids,
            scores,
            calibrated,
        })
    }

    /// A 1 x N prior table.
    pub fn prior(candidate_ids: Vec<String>, priors: Vec<f64>) -> Result<Self> {
        Self::new(MatrixKind::Prior, vec![PRIOR_ROW_ID.to_string()], candidate_ids, priors)
    }

    pub fn kind(&self) -> MatrixKind {
        self.kind
    }

    pub fn is_calibrated(&self) -> bool {
        self.calibrated
    }

    pub fn rows(&self) -> usize {
        self.query_ids.len()
    }

    pub fn cols(&self) -> usize {
        self.candidate_ids.len()
    }

    pub fn query_ids(&self) -> &[String] {
        &self.query_ids
    }

    pub fn candidate_ids(&self) -> &[String] {
        &self.candidate_ids
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.scores[row * self.cols() + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let c = self.cols();
        &self.scores[row * c..(row + 1) * c]
    }

    /// Columns `cols` (in that order) as a new table of the same kind.
    pub fn select_columns(&self, cols: &[usize]) -> Result<Self> {
        let candidate_ids = cols.iter().map(|&c| self.candidate_ids[c].clone()).collect();
        let scores = (0..self.rows())
            .flat_map(|r| cols.iter().map(move |&c| (r, c)))
            .map(|(r, c)| self.get(r, c))
            .collect();
        Self::with_calibration(self.kind, self.query_ids.clone(), candidate_ids, scores, self.calibrated)
    }

    /// Rows `rows` (in that order) as a new table of the same kind.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let query_ids = rows.iter().map(|&r| self.query_ids[r].clone()).collect();
        let scores = rows.iter().flat_map(|&r| self.row(r).iter().copied()).collect();
        Self::with_calibration(self.kind, query_ids, self.candidate_ids.clone(), scores, self.calibrated)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        write!(out, "kind={} rows={} cols={}", self.kind, self.rows(), self.cols()).unwrap();
        if self.calibrated {
            out.push_str(" calibrated=true");
        }
        out.push('\n');
        out.push_str("query_ids=");
        out.push_str(&self.query_ids.join(","));
        out.push('\n');
        out.push_str("candidate_ids=");
        out.push_str(&self.candidate_ids.join(","));
        out.push('\n');
        for r in 0..self.rows() {
            for (c, &s) in self.row(r).iter().enumerate() {
                if c > 0 {
                    out.push(',');
                }
                out.push_str(&format_score(s));
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

    /// Parse the file format; `path` is used only in error messages.
    pub fn parse_text(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, msg: String| Error::parse(path, line, msg);
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));

        let (ln, header) = lines.next().ok_or_else(|| err(1, "empty file, expected header".into()))?;
        let mut kind = None;
        let mut rows = None;
        let mut cols = None;
        let mut calibrated = false;
        for field in header.split_whitespace() {
            let (key, value) = field
                .split_once('=')
                .ok_or_else(|| err(ln, format!("header field {field:?} is not key=value")))?;
            match key {
                "kind" => {
                    kind = Some(MatrixKind::parse(value).ok_or_else(|| err(ln, format!("unknown kind {value:?}")))?)
                }
                "rows" => rows = Some(value.parse::<usize>().map_err(|_| err(ln, format!("bad rows {value:?}")))?),
                "cols" => cols = Some(value.parse::<usize>().map_err(|_| err(ln, format!("bad cols {value:?}")))?),
                "calibrated" => {
                    calibrated = match value {
                        "true" => true,
                        "false" => false,
                        _ => return Err(err(ln, format!("bad calibrated flag {value:?}"))),
                    }
                }
                _ => return Err(err(ln, format!("unknown header field {key:?}"))),
            }
        }
        let kind = kind.ok_or_else(|| err(ln, "header missing kind=".into()))?;
        let rows = rows.ok_or_else(|| err(ln, "header missing rows=".into()))?;
        let cols = cols.ok_or_else(|| err(ln, "header missing cols=".into()))?;

        let mut id_line = |key: &str, expected: usize| -> Result<Vec<String>> {
            let (ln, line) = lines
                .next()
                .ok_or_else(|| err(ln + 1, format!("missing {key}= line")))?;
            let list = line
                .strip_prefix(key)
                .and_then(|r| r.strip_prefix('='))
                .ok_or_else(|| err(ln, format!("expected {key}=...")))?;
            let ids: Vec<String> = list.split(',').map(str::to_string).collect();
            if ids.len() != expected {
                return Err(err(ln, format!("{key} lists {} ids, header says {expected}", ids.len())));
            }
            check_ids(&ids, key).map_err(|e| err(ln, e.to_string()))?;
            Ok(ids)
        };
        let query_ids = id_line("query_ids", rows)?;
        let candidate_ids = id_line("candidate_ids", cols)?;

        let mut scores = Vec::with_capacity(rows * cols);
        let mut seen_rows = 0;
        for (ln, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            if seen_rows == rows {
                return Err(err(ln, format!("more than {rows} data rows")));
            }
            let before = scores.len();
            for cell in line.split(',') {
                let v = parse_score(cell.trim()).map_err(|m| err(ln, m))?;
                if !calibrated && v > POSITIVE_SLACK {
                    return Err(err(ln, format!("positive log-probability {v} in uncalibrated table")));
                }
                scores.push(v);
            }
            if scores.len() - before != cols {
                return Err(err(ln, format!("row has {} values, expected {cols}", scores.len() - before)));
            }
            seen_rows += 1;
        }
        if seen_rows != rows {
            return Err(err(text.lines().count() + 1, format!("found {seen_rows} data rows, expected {rows}")));
        }
        Self::with_calibration(kind, query_ids, candidate_ids, scores, calibrated)
            .map_err(|e| err(1, e.to_string()))
    }
}

/// Shortest round-trip decimal; `-inf`/`inf` for infinities.
pub fn format_score(s: f64) -> String {
    if s == f64::NEG_INFINITY {
        "-inf".to_string()
    } else if s == f64::INFINITY {
        "inf".to_string()
    } else {
        format!("{s:?}")
    }
}

pub fn parse_score(cell: &str) -> std::result::Result<f64, String> {
    match cell {
        "-inf" => Ok(f64::NEG_INFINITY),
        "inf" | "+inf" => Ok(f64::INFINITY),
        _ => {
            let v: f64 = cell.parse().map_err(|_| format!("cannot parse {cell:?} as a number"))?;
            if v.is_nan() {
                Err("NaN is not a valid score".to_string())
            } else if v.is_infinite() {
                Err(format!("spell infinities as -inf or inf, not {cell:?}"))
            } else {
                Ok(v)
            }
        }
    }
}

pub(crate) fn ids(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}
