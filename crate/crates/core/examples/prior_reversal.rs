//! Find pairs where a strong text prior reverses the candidate-likelihood order.
//!
//! The positive text explains the video slightly better (query gap below
//! epsilon) but the negative text is much more common (prior gap above
//! c * epsilon), so `P(t | v)` prefers the negative.
//!
//! Run with `cargo run --example prior_reversal`.

use birank::world::{GenerativeWorld, WorldConfig};
use birank::{Rng, Summary};

fn main() -> birank::Result<()> {
    let cfg = WorldConfig {
        video_vocab: 3,
        video_len: 3,
        text_vocab: 3,
        text_len: 3,
        summary: Summary::TokenSum { states: 3 },
        skew: 1.5,
        ..WorldConfig::default()
    };
    let (epsilon, c) = (0.25, 2.0);
    let mut shown = 0;
    for seed in 1.. {
        let world = GenerativeWorld::generate(&cfg, &mut Rng::new(seed))?;
        let Some(inst) = world.build_reversal_instance(epsilon, c, &mut Rng::new(seed).child(1), 2000)? else {
            continue;
        };
        let s = inst.scores;
        println!(
            "world {seed}: query gap {:.3}, prior gap {:.3}, candidate gap {:.3}",
            s.query_gap(),
            s.prior_gap(),
            inst.candidate_gap(&world)?
        );
        shown += 1;
        if shown == 5 {
            break;
        }
    }
    println!("a negative candidate gap means P(t|v) ranks the wrong text first");
    Ok(())
}
