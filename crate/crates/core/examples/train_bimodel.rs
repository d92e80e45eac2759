//! Train the tabular bidirectional model on world samples and compare its
//! conditional rows with the world's.
//!
//! Run with `cargo run --release --example train_bimodel`.

use birank::bimodel::{BiModel, ModelConfig, TrainConfig};
use birank::world::{GenerativeWorld, WorldConfig};
use birank::{Rng, Summary};

fn main() -> birank::Result<()> {
    let cfg = WorldConfig {
        video_vocab: 2,
        video_len: 2,
        text_vocab: 3,
        text_len: 3,
        summary: Summary::TokenSum { states: 2 },
        skew: 0.5,
        video_skew: Some(0.0),
        ..WorldConfig::default()
    };
    let root = Rng::new(0);
    let world = GenerativeWorld::generate(&cfg, &mut root.clone())?;
    let data = world.sample_pairs(5000, &mut root.child(3));
    let mut model = BiModel::new(ModelConfig::for_world(world.config()), root.child(4).seed())?;
    let train = TrainConfig { seed: root.child(5).seed(), ..TrainConfig::default() };
    let report = model.train(&data, &train)?;

    println!("joint loss before training: {:.4}", report.initial.joint);
    for e in report.epochs.iter().filter(|e| e.epoch % 40 == 0) {
        println!("epoch {:>3}: joint {:.4}", e.epoch, e.joint);
    }

    // Worst total variation between model and world text rows.
    let mut worst: f64 = 0.0;
    for state in 0..world.states() {
        for prev in std::iter::once(None).chain((0..cfg.text_vocab).map(Some)) {
            let model_row = model.text_distribution(state, prev);
            let tv: f64 = model_row.iter().zip(world.text_row(state, prev)).map(|(a, b)| (a - b).abs()).sum::<f64>() / 2.0;
            worst = worst.max(tv);
        }
    }
    println!("max TV over text rows: {worst:.4}");
    Ok(())
}
