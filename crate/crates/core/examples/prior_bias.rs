//! Measure how a peaked text prior concentrates top-1 choices, and how CPN
//! removes the effect.
//!
//! Run with `cargo run --release --example prior_bias`.

use birank::calibrate::{cpn_normalize, rank};
use birank::evalkit::{bias_report, concentration, recall_at_k};
use birank::pipeline::{score_tables, Universe, WorldScorer};
use birank::world::{GenerativeWorld, WorldConfig};
use birank::{Direction, Rng, Summary};

fn main() -> birank::Result<()> {
    let cfg = WorldConfig {
        video_vocab: 6,
        video_len: 4,
        text_vocab: 8,
        text_len: 4,
        summary: Summary::Identity,
        skew: 3.0,
        video_skew: Some(0.5),
        coupling: 0.5,
        ..WorldConfig::default()
    };
    let world = GenerativeWorld::generate(&cfg, &mut Rng::new(0))?;
    let inst = world.build_instance(200, &mut Rng::new(0).child(1))?.view(Direction::V2T);
    let universe = Universe::from(&inst);
    let scorer = WorldScorer::new(&world, &inst)?;
    let (cand, _, prior) = score_tables(&universe, &scorer)?;

    for alpha in [0.0, 0.5, 1.0] {
        let ranking = rank(&cpn_normalize(&cand, &prior, alpha)?);
        let (_, share) = concentration(&ranking)?;
        let recall = recall_at_k(&ranking, &inst.gt, &[1, 5])?;
        println!(
            "alpha {alpha:.1}: top-1 concentration {share:.3}, R@1 {:.1}, R@5 {:.1}",
            recall.at(1).unwrap_or(0.0),
            recall.at(5).unwrap_or(0.0)
        );
    }

    let report = bias_report(&rank(&cand), &prior, &inst.gt, None)?;
    println!(
        "candidate-only: modal candidate {}, highest-prior candidate {}",
        report.modal_candidate_id, report.top_prior_candidate_id
    );
    Ok(())
}
