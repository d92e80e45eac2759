//! Cosine first stage over all candidates, then bidirectional rerank of the
//! top-K shortlist.
//!
//! Run with `cargo run --release --example two_stage_rerank`.

use birank::evalkit::recall_at_k;
use birank::pipeline::{run_pipeline, synthetic_embeddings, EmbeddingConfig, PipelineConfig, Universe, WorldScorer};
use birank::world::{GenerativeWorld, WorldConfig};
use birank::{Direction, Rng};

fn main() -> birank::Result<()> {
    let cfg = WorldConfig {
        video_vocab: 4,
        video_len: 6,
        text_vocab: 3,
        text_len: 7,
        skew: 0.4,
        ..WorldConfig::default()
    };
    let world = GenerativeWorld::generate(&cfg, &mut Rng::new(70))?;
    let pairs = world.build_instance(1000, &mut Rng::new(70).child(1))?;

    for direction in [Direction::V2T, Direction::T2V] {
        let inst = pairs.view(direction);
        let universe = Universe::from(&inst);
        let scorer = WorldScorer::new(&world, &inst)?;
        let (qe, ce) = synthetic_embeddings(&inst, &EmbeddingConfig::default())?;
        let config = PipelineConfig { direction, ..PipelineConfig::default() };
        let (result, timing) = run_pipeline(&universe, &qe, &ce, &scorer, &config)?;
        let recall = recall_at_k(&result, &inst.gt, &[1, 5, 10])?;
        println!(
            "{}: K={} R@1 {:.1} R@5 {:.1} R@10 {:.1}; {} scorer calls ({} exhaustive), {:.3} s",
            direction.as_str(),
            timing.k,
            recall.at(1).unwrap_or(0.0),
            recall.at(5).unwrap_or(0.0),
            recall.at(10).unwrap_or(0.0),
            timing.scorer_calls,
            timing.exhaustive_calls,
            timing.first_stage_seconds + timing.rerank_seconds
        );
    }
    Ok(())
}
