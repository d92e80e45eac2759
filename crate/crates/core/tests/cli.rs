mod common;

use std::collections::BTreeMap;
use std::path::Path;

use birank::bimodel::BiModel;
use birank::cli::{Manifest, RunConfig};
use birank::evalkit::{heatmap_import, BiasReport, RecallReport};
use birank::pipeline::{rerank_exhaustive, PipelineConfig, Universe, WorldScorer};
use birank::world::{GenerativeWorld, PairSet};
use birank::{Direction, Rng};

use common::{birank, brute_text_marginal, fixture, read, run_with, stderr, stdout, SKEWED_WORLD};

const SMALL_TRAIN: &str = r#"
seed = 5
[world]
video_vocab = 2
video_len = 2
text_vocab = 3
text_len = 3
summary = { kind = "token_sum", states = 2 }
skew = 0.5
video_skew = 0.0
[train]
samples = 400
epochs = 12
batch_size = 64
"#;

fn dir_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

#[test]
fn synth_default_writes_world_and_instance() {
    let tmp = tempfile::tempdir().unwrap();
    let (o, out) = run_with(tmp.path(), "synth", "", &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let world = GenerativeWorld::load(out.join("world.json")).unwrap();
    let pairs: PairSet = serde_json::from_str(&read(out.join("instance.json"))).unwrap();
    assert_eq!(pairs.len(), 200);
    let manifest = Manifest::load(out.join("manifest.json")).unwrap();
    assert_eq!(manifest.outputs, ["world.json", "instance.json", "manifest.json"]);

    // Printed entropy against a brute-force marginal.
    let printed: f64 = stdout(&o)
        .lines()
        .find_map(|l| l.strip_prefix("text_prior_entropy="))
        .expect("entropy line")
        .parse()
        .unwrap();
    let entropy: f64 = brute_text_marginal(&world).iter().filter(|&&p| p > 0.0).map(|p| -p * p.ln()).sum();
    assert!((printed - entropy).abs() < 1e-9, "{printed} vs {entropy}");
}

#[test]
fn same_seed_gives_byte_identical_outputs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for command in ["synth", "rerank", "sweep-alpha", "diagnose", "decode"] {
        for (tmp, threads) in [(&a, "1"), (&b, "3")] {
            let (o, _) = run_with(tmp.path(), command, "seed = 11\n[instance]\nn_pairs = 60\n", &["--threads", threads]);
            assert!(o.status.success(), "{command}: {}", stderr(&o));
        }
    }
    let mut fa = dir_files(&a.path().join("out"));
    let mut fb = dir_files(&b.path().join("out"));
    // Wall-clock report; manifests echo their own output directory.
    for files in [&mut fa, &mut fb] {
        files.remove("timing.json");
        files.remove("manifest.json");
    }
    assert_eq!(fa, fb);

    // Re-running in place reproduces the manifest as well.
    let before = read(a.path().join("out/manifest.json"));
    let (o, _) = run_with(a.path(), "decode", "seed = 11\n[instance]\nn_pairs = 60\n", &[]);
    assert!(o.status.success());
    assert_eq!(read(a.path().join("out/manifest.json")), before);
}

#[test]
fn seed_flag_overrides_config() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, out) = run_with(tmp.path(), "synth", "seed = 1\n", &["--seed", "2"]);
    let manifest = Manifest::load(out.join("manifest.json")).unwrap();
    assert_eq!(manifest.seed, 2);
    let expected = GenerativeWorld::generate(&Default::default(), &mut Rng::new(2)).unwrap();
    assert_eq!(read(out.join("world.json")), expected.to_json());
}

#[test]
fn manifest_records_inputs_and_default_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let (o, out) = run_with(tmp.path(), "rerank", "[instance]\nn_pairs = 40\n", &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest = Manifest::load(out.join("manifest.json")).unwrap();
    assert_eq!(manifest.command, "rerank");
    assert_eq!(manifest.tool, "birank");
    assert_eq!(manifest.inputs.len(), 1);
    use sha2::Digest;
    let digest = hex::encode(sha2::Sha256::digest(std::fs::read(tmp.path().join("run.toml")).unwrap()));
    assert_eq!(manifest.inputs[0].sha256, digest);
    let config = manifest.run_config().unwrap();
    assert_eq!(config.pipeline.k, 16);
    assert_eq!(config.pipeline.cpn.alpha_t_given_v, 0.9);
    assert_eq!(config.pipeline.cpn.alpha_v_given_t, 0.1);
    assert_eq!(config.instance.n_pairs, 40);
    for f in ["ranking.csv", "recall.json", "timing.json"] {
        assert!(manifest.outputs.iter().any(|o| o == f), "{f} not listed");
    }
    // The echo replays the run.
    let mut replay = config.clone();
    replay.out = Some(tmp.path().join("replay"));
    birank::cli::execute(birank::cli::Command::Rerank, &replay, None).unwrap();
    assert_eq!(read(out.join("ranking.csv")), read(tmp.path().join("replay/ranking.csv")));
}

#[test]
fn train_writes_one_loss_row_per_epoch_and_decreases() {
    let tmp = tempfile::tempdir().unwrap();
    let (o, out) = run_with(tmp.path(), "train", SMALL_TRAIN, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = read(out.join("loss.csv"));
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "epoch,joint,objective");
    assert_eq!(rows.len(), 1 + 12);
    let joint = |line: &str| line.split(',').nth(1).unwrap().parse::<f64>().unwrap();
    assert!(joint(rows[12]) < joint(rows[1]));
    let model = BiModel::load(out.join("model.json")).unwrap();
    assert_eq!(model.epochs_completed(), 12);
}

#[test]
fn train_resume_matches_uninterrupted_run() {
    let tmp = tempfile::tempdir().unwrap();
    let straight = tmp.path().join("straight");
    std::fs::create_dir(&straight).unwrap();
    let (o, full) = run_with(&straight, "train", SMALL_TRAIN, &[]);
    assert!(o.status.success(), "{}", stderr(&o));

    let half = tmp.path().join("half");
    std::fs::create_dir(&half).unwrap();
    let (o, first) = run_with(&half, "train", &SMALL_TRAIN.replace("epochs = 12", "epochs = 5"), &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let resume_cfg = format!("{SMALL_TRAIN}resume = {:?}\n", first.join("model.json").to_str().unwrap());
    let resumed = tmp.path().join("resumed");
    std::fs::create_dir(&resumed).unwrap();
    let (o, second) = run_with(&resumed, "train", &resume_cfg, &[]);
    assert!(o.status.success(), "{}", stderr(&o));

    let a = BiModel::load(full.join("model.json")).unwrap();
    let b = BiModel::load(second.join("model.json")).unwrap();
    assert_eq!(a.params(), b.params());
    assert_eq!(b.epochs_completed(), 12);
    // The resumed loss rows continue the uninterrupted ones exactly.
    let full_rows: Vec<String> = read(full.join("loss.csv")).lines().map(str::to_string).collect();
    let resumed_rows: Vec<String> = read(second.join("loss.csv")).lines().map(str::to_string).collect();
    assert_eq!(resumed_rows.len(), 1 + 7);
    assert_eq!(&resumed_rows[1..], &full_rows[6..]);
}

#[test]
fn rerank_with_full_shortlist_equals_exhaustive() {
    let tmp = tempfile::tempdir().unwrap();
    let (o, out) = run_with(tmp.path(), "rerank", "seed = 3\n[instance]\nn_pairs = 30\n[pipeline]\nk = 30\n", &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let cfg = RunConfig { seed: 3, ..RunConfig::default() };
    let world = GenerativeWorld::generate(&cfg.world, &mut Rng::new(3)).unwrap();
    let inst = world.build_instance(30, &mut Rng::new(3).child(1)).unwrap().view(Direction::V2T);
    let scorer = WorldScorer::new(&world, &inst).unwrap();
    let config = PipelineConfig { k: 30, ..PipelineConfig::default() };
    let expected = rerank_exhaustive(&Universe::from(&inst), &scorer, &config).unwrap();
    assert_eq!(read(out.join("ranking.csv")), expected.to_csv());
    let recall: RecallReport = serde_json::from_str(&read(out.join("recall.json"))).unwrap();
    assert_eq!(recall.recall.keys().copied().collect::<Vec<_>>(), vec![1, 5, 10]);
}

#[test]
fn rerank_csv_matches_golden_file() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = birank(&["rerank", "--config", fixture("bundle/bundle.toml").to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(read(out.join("ranking.csv")), read(fixture("golden/bundle_ranking.csv")));
}

fn sweep_rows(out: &Path) -> Vec<(f64, f64)> {
    read(out.join("sweep.csv"))
        .lines()
        .skip(1)
        .map(|l| {
            let (a, r) = l.split_once(',').unwrap();
            (a.parse().unwrap(), r.parse().unwrap())
        })
        .collect()
}

#[test]
fn sweep_rows_match_grid_and_rerank() {
    let tmp = tempfile::tempdir().unwrap();
    let base = "seed = 4\n[instance]\nn_pairs = 80\n";
    let (o, out) = run_with(tmp.path(), "sweep-alpha", &format!("{base}[sweep]\nalphas = [0.0, 0.5, 1.0]\n"), &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = sweep_rows(&out);
    assert_eq!(rows.len(), 3);
    assert_eq!(read(out.join("sweep.csv")).lines().next(), Some("alpha,r_at_1"));

    let (o, out) = run_with(
        tmp.path(),
        "rerank",
        &format!("{base}[pipeline]\ncpn = {{ alpha_t_given_v = 0.0, alpha_v_given_t = 0.0 }}\n"),
        &[],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let recall: RecallReport = serde_json::from_str(&read(out.join("recall.json"))).unwrap();
    assert_eq!(rows[0], (0.0, recall.at(1).unwrap()));
}

#[test]
fn sweep_improves_on_skewed_world() {
    let tmp = tempfile::tempdir().unwrap();
    let toml = format!("{SKEWED_WORLD}[sweep]\nalphas = [0.0, 1.0]\n[pipeline]\nfusion = {{ weighted_log_sum = 1.0 }}\n");
    let (o, out) = run_with(tmp.path(), "sweep-alpha", &toml, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = sweep_rows(&out);
    assert!(rows[1].1 >= rows[0].1, "{rows:?}");
}

#[test]
fn diagnose_shows_concentration_drop_and_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let (o, out) = run_with(tmp.path(), "diagnose", SKEWED_WORLD, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let raw = BiasReport::from_csv(&read(out.join("bias_candidate.csv")), &out.join("bias_candidate.csv")).unwrap();
    let cpn = BiasReport::from_csv(&read(out.join("bias_cpn.csv")), &out.join("bias_cpn.csv")).unwrap();
    assert!(raw.concentration >= 0.25, "{}", raw.concentration);
    assert!(cpn.concentration <= 0.05, "{}", cpn.concentration);
    assert_eq!(raw.to_csv(), read(out.join("bias_candidate.csv")));
    for name in ["heatmap_candidate", "heatmap_query", "heatmap_cpn"] {
        let m = heatmap_import(out.join(format!("{name}.csv"))).unwrap();
        // 200 x 200 subsampled to the default 50 x 50.
        assert_eq!((m.rows(), m.cols()), (50, 50));
    }
    let cpn_heat = heatmap_import(out.join("heatmap_cpn.csv")).unwrap();
    assert!(cpn_heat.is_calibrated());
}

#[test]
fn decode_alpha_zero_equals_baseline_and_nucleus_is_seeded() {
    let tmp = tempfile::tempdir().unwrap();
    let (o, out) = run_with(tmp.path(), "decode", "[decode]\nalpha = 0.0\n", &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = read(out.join("decoded.csv"));
    assert_eq!(csv.lines().next(), Some("video_id,video,decoded,baseline"));
    assert_eq!(csv.lines().count(), 1 + 16);
    for line in csv.lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells[2], cells[3], "{line}");
    }

    let nucleus = "seed = 8\n[decode]\nstrategy = { kind = \"nucleus\", p = 0.9 }\n";
    let (o, out) = run_with(tmp.path(), "decode", nucleus, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let first = read(out.join("decoded.csv"));
    let (_, out) = run_with(tmp.path(), "decode", nucleus, &["--threads", "2"]);
    assert_eq!(read(out.join("decoded.csv")), first);
    let (_, out) = run_with(tmp.path(), "decode", &nucleus.replace("seed = 8", "seed = 9"), &[]);
    assert_ne!(read(out.join("decoded.csv")), first);
}

#[test]
fn decode_with_trained_model() {
    let tmp = tempfile::tempdir().unwrap();
    let (o, out) = run_with(tmp.path(), "train", SMALL_TRAIN, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let model = out.join("model.json");
    let toml = format!("{SMALL_TRAIN}[model]\nfile = {:?}\n[instance]\nn_pairs = 4\n", model.to_str().unwrap());
    let (o, out) = run_with(tmp.path(), "decode", &toml, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(read(out.join("decoded.csv")).lines().count(), 1 + 4);
    let toml = format!(
        "source = \"world_model\"\n{SMALL_TRAIN}[model]\nfile = {:?}\n[instance]\nn_pairs = 4\n[pipeline]\nk = 2\n",
        model.to_str().unwrap()
    );
    let (o, out) = run_with(tmp.path(), "rerank", &toml, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("ranking.csv").exists());
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    // Config errors: unknown key, bad value, missing file, two sources.
    for toml in [
        "sede = 1\n",
        "[pipeline]\nk = 0\n",
        "world_file = \"missing.json\"\n",
        "[files]\ncandidate = \"a\"\nquery = \"b\"\nprior = \"c\"\n",
        "[world]\nvideo_vocab = 60\nvideo_len = 8\n",
    ] {
        let (o, _) = run_with(tmp.path(), "synth", toml, &[]);
        assert_eq!(o.status.code(), Some(2), "{toml}: {}", stderr(&o));
        assert!(stderr(&o).starts_with("error: "));
    }
    let o = birank(&["bogus"]);
    assert_eq!(o.status.code(), Some(2));
    let o = birank(&["--help"]);
    assert_eq!(o.status.code(), Some(0));

    // Data error: a malformed score file.
    let bad = tmp.path().join("bad");
    std::fs::create_dir(&bad).unwrap();
    for f in ["candidate.scores", "query.scores", "prior.scores"] {
        std::fs::copy(fixture("bundle").join(f), bad.join(f)).unwrap();
    }
    let text = read(bad.join("query.scores")).replacen("-0.", "x0.", 1);
    std::fs::write(bad.join("query.scores"), text).unwrap();
    let toml = "source = \"files\"\n[files]\ncandidate = \"candidate.scores\"\nquery = \"query.scores\"\nprior = \"prior.scores\"\n";
    let (o, _) = run_with(&bad, "load-check", toml, &[]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("query.scores:4"), "{}", stderr(&o));

    // Runtime error: the output directory cannot be created.
    let blocker = tmp.path().join("file");
    std::fs::write(&blocker, "").unwrap();
    let o = birank(&["synth", "--out", blocker.join("sub").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}
