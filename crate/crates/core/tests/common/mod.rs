#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::Output;

use birank::world::GenerativeWorld;
use birank::TokenSeq;

pub fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(rel)
}

/// Run the `birank` binary.
pub fn birank(args: &[&str]) -> Output {
    std::process::Command::new(env!("CARGO_BIN_EXE_birank"))
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Write `toml` to `dir/run.toml` and run `command` with output in `dir/out`.
pub fn run_with(dir: &Path, command: &str, toml: &str, extra: &[&str]) -> (Output, PathBuf) {
    let config = dir.join("run.toml");
    std::fs::write(&config, toml).unwrap();
    let out = dir.join("out");
    let mut args = vec![command, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    (birank(&args), out)
}

pub fn read(path: impl AsRef<Path>) -> String {
    std::fs::read_to_string(path.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", path.as_ref().display()))
}

/// `P(v)` and `P(t | v)` straight from the world's transition tables.
pub fn chain_probs(world: &GenerativeWorld, video: &TokenSeq, text: &TokenSeq) -> (f64, f64) {
    let mut pv = 1.0;
    let mut prev = None;
    for (pos, tok) in video.tokens().iter().enumerate() {
        pv *= world.video_row(pos, prev)[tok.index()];
        prev = Some(tok.index());
    }
    let state = world.video_state(video);
    let mut pt = 1.0;
    let mut prev = None;
    for tok in text.tokens() {
        pt *= world.text_row(state, prev)[tok.index()];
        prev = Some(tok.index());
    }
    (pv, pt)
}

/// Brute-force `P(t)` for every text, in `all_texts` order.
pub fn brute_text_marginal(world: &GenerativeWorld) -> Vec<f64> {
    let videos: Vec<TokenSeq> = world.all_videos().collect();
    world
        .all_texts()
        .map(|t| {
            videos
                .iter()
                .map(|v| {
                    let (pv, ptv) = chain_probs(world, v, &t);
                    pv * ptv
                })
                .sum()
        })
        .collect()
}

/// The high-skew world of the bias demonstration.
pub const SKEWED_WORLD: &str = r#"
[world]
video_vocab = 6
video_len = 4
text_vocab = 8
text_len = 4
summary = { kind = "identity" }
skew = 3.0
video_skew = 0.5
coupling = 0.5
"#;
