//! Caption videos with plain and prior-normalized greedy decoding, and with
//! seeded nucleus sampling.
//!
//! Run with `cargo run --example cpn_decoding`.

use birank::decode::{decode, greedy_decode, DecodeConfig, Strategy, WorldText, WorldTextPrior};
use birank::world::{GenerativeWorld, WorldConfig};
use birank::Rng;

fn tokens(seq: &birank::TokenSeq) -> Vec<u32> {
    seq.tokens().iter().map(|t| t.0).collect()
}

fn main() -> birank::Result<()> {
    let cfg = WorldConfig { skew: 2.0, ..WorldConfig::default() };
    let world = GenerativeWorld::generate(&cfg, &mut Rng::new(3))?;
    let (cond, prior) = (WorldText(&world), WorldTextPrior(&world));
    let plain = DecodeConfig { alpha: 0.0, max_len: cfg.text_len, ..DecodeConfig::default() };
    let cpn = DecodeConfig { alpha: 1.0, ..plain };
    let nucleus = DecodeConfig { strategy: Strategy::Nucleus { p: 0.9 }, seed: 7, ..cpn };

    for (video, _) in world.sample_pairs(6, &mut Rng::new(4)) {
        println!(
            "video {:?}: greedy {:?}, cpn greedy {:?}, cpn nucleus {:?}",
            tokens(&video),
            tokens(&greedy_decode(&cond, &prior, &video, &plain)?),
            tokens(&greedy_decode(&cond, &prior, &video, &cpn)?),
            tokens(&decode(&cond, &prior, &video, &nucleus)?)
        );
    }
    Ok(())
}
