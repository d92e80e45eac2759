//! Generate a small exact world and check its probabilities by enumeration.
//!
//! Run with `cargo run --example exact_world`.

use birank::world::{GenerativeWorld, WorldConfig};
use birank::{log_sum_exp, Rng};

fn main() -> birank::Result<()> {
    let world = GenerativeWorld::generate(&WorldConfig::default(), &mut Rng::new(1))?;
    let cfg = world.config();
    println!(
        "videos: {} tokens x {}, texts: {} tokens x {}, {} summary states",
        cfg.video_vocab,
        cfg.video_len,
        cfg.text_vocab,
        cfg.text_len,
        world.states()
    );

    // P(v) sums to one over every video.
    let video_priors: Vec<f64> = world
        .all_videos()
        .map(|v| world.exact_video_prior(&v).map(|p| p.value()))
        .collect::<birank::Result<_>>()?;
    println!("log sum P(v) = {:.3e}", log_sum_exp(&video_priors)?);

    // Bayes: P(v | t) P(t) = P(t | v) P(v) for one sampled pair.
    let (video, text) = world.sample_pair(&mut Rng::new(2));
    let lhs = world.exact_cond_video(&video, &text)?.value() + world.exact_text_prior(&text)?.value();
    let rhs = world.exact_cond_text(&text, &video)?.value() + world.exact_video_prior(&video)?.value();
    println!("video {:?}, text {:?}", video.tokens(), text.tokens());
    println!("log P(v|t) + log P(t) = {lhs:.12}");
    println!("log P(t|v) + log P(v) = {rhs:.12}");
    println!("H(text prior) = {:.4} nats", world.text_prior_entropy());
    Ok(())
}
