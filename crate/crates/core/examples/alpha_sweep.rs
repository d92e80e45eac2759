//! Sweep the CPN strength and report R@1 of exhaustive reranking.
//!
//! Run with `cargo run --release --example alpha_sweep`.

use birank::calibrate::CpnConfig;
use birank::evalkit::recall_at_k;
use birank::pipeline::{rerank_exhaustive, PipelineConfig, Universe, WorldScorer};
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

    println!("alpha,r_at_1");
    for step in 0..=10 {
        let alpha = step as f64 / 10.0;
        let config = PipelineConfig { cpn: CpnConfig::uniform(alpha), ..PipelineConfig::default() };
        let result = rerank_exhaustive(&universe, &scorer, &config)?;
        let r1 = recall_at_k(&result, &inst.gt, &[1])?.at(1).unwrap_or(0.0);
        println!("{alpha:.1},{r1:.1}");
    }
    Ok(())
}
