//! Rerank from precomputed score tables instead of a model.
//!
//! Writes a tiny three-by-three bundle of text score files, reads it back, and
//! ranks with and without CPN.
//!
//! Run with `cargo run --example score_files`.

use birank::calibrate::CpnConfig;
use birank::pipeline::{rerank_exhaustive, MatrixScorer, PipelineConfig, ScorerKind, Universe};
use birank::{Direction, MatrixKind, ScoreMatrix};

fn ids(prefix: &str) -> Vec<String> {
    (1..=3).map(|i| format!("{prefix}{i}")).collect()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("birank-score-files-example");
    std::fs::create_dir_all(&dir)?;

    // Caption c3 is generic: likely under every video, so it wins v1 and v2 until
    // its high prior is divided out.
    let candidate = ScoreMatrix::new(
        MatrixKind::CandidateLikelihood,
        ids("v"),
        ids("c"),
        vec![-3.0, -4.5, -2.5, -4.5, -3.0, -2.6, -4.0, -4.0, -2.4],
    )?;
    let query = ScoreMatrix::new(
        MatrixKind::QueryLikelihood,
        ids("v"),
        ids("c"),
        vec![-3.0, -5.0, -3.0, -5.0, -3.0, -3.0, -5.0, -5.0, -2.5],
    )?;
    let prior = ScoreMatrix::prior(ids("c"), vec![-3.5, -3.5, -1.0])?;
    for (name, m) in [("candidate", &candidate), ("query", &query), ("prior", &prior)] {
        m.save(dir.join(format!("{name}.scores")))?;
    }

    let load = |name: &str| ScoreMatrix::load(dir.join(format!("{name}.scores")));
    let scorer = MatrixScorer::new(load("candidate")?, load("query")?, load("prior")?)?;
    let universe = Universe {
        direction: Direction::V2T,
        query_ids: scorer.query_ids().to_vec(),
        candidate_ids: scorer.candidate_ids().to_vec(),
        gt: Some(vec![0, 1, 2]),
    };
    for alpha in [0.0, 1.0] {
        let config = PipelineConfig {
            k: 3,
            cpn: CpnConfig::uniform(alpha),
            scorer: ScorerKind::FileScores,
            ..PipelineConfig::default()
        };
        println!("alpha {alpha}:\n{}", rerank_exhaustive(&universe, &scorer, &config)?.to_csv());
    }
    println!("score files in {}", dir.display());
    Ok(())
}
