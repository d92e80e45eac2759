//! The subcommands.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bimodel::{BiModel, ModelConfig};
use crate::calibrate::{cpn_normalize, rank, CpnConfig, RankingResult};
use crate::decode::{decode_batch, DecodeConfig, ModelText, ModelTextPrior, NextTokenModel, Strategy, WorldText, WorldTextPrior};
use crate::error::{Error, Result};
use crate::evalkit::{bias_report, heatmap_export, recall_at_k};
use crate::pipeline::{
    rerank_exhaustive, run_pipeline, score_tables, synthetic_embeddings, CountingScorer, EmbeddingTable, ModelScorer,
    PairScorer, PipelineConfig, TimingReport, Universe, WorldScorer,
};
use crate::rng::Rng;
use crate::seq::{Direction, TokenSeq};
use crate::world::{GenerativeWorld, PairSet};

use super::bundle::LoadedBundle;
use super::config::{streams, RunConfig, Source};
use super::Command;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputRecord {
    pub path: String,
    pub sha256: String,
}

/// Everything needed to replay a run. Contains no timestamps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    /// Derived per-purpose seeds.
    pub seeds: BTreeMap<String, u64>,
    /// The effective configuration after command-line overrides.
    pub config: serde_json::Value,
    pub inputs: Vec<InputRecord>,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))
    }

    /// The echoed configuration as a [`RunConfig`].
    pub fn run_config(&self) -> Result<RunConfig> {
        serde_json::from_value(self.config.clone()).map_err(|e| Error::Config(e.to_string()))
    }
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| Error::Serde(e.to_string()))
}

/// Output directory, inputs read and outputs written by one command.
struct Run<'a> {
    command: Command,
    config: &'a RunConfig,
    out: PathBuf,
    inputs: Vec<PathBuf>,
    outputs: Vec<String>,
}

impl<'a> Run<'a> {
    fn new(command: Command, config: &'a RunConfig, config_file: Option<&Path>) -> Result<Self> {
        let out = config.out.clone().unwrap_or_else(|| PathBuf::from("out"));
        std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
        let mut inputs: Vec<PathBuf> = config_file.into_iter().map(Path::to_path_buf).collect();
        for p in [&config.world_file, &config.model.file, &config.train.resume].into_iter().flatten() {
            inputs.push(p.clone());
        }
        if let Some(files) = &config.files {
            inputs.extend(files.paths().into_iter().map(Path::to_path_buf));
        }
        Ok(Run {
            command,
            config,
            out,
            inputs,
            outputs: Vec::new(),
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<PathBuf> {
        let path = self.path(name);
        std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        self.record(name);
        Ok(path)
    }

    fn record(&mut self, name: &str) {
        if !self.outputs.iter().any(|o| o == name) {
            self.outputs.push(name.to_string());
        }
    }

    fn finish(mut self) -> Result<()> {
        let cfg = self.config;
        let mut seeds = BTreeMap::new();
        seeds.insert("world".to_string(), cfg.seed);
        for (name, stream) in [
            ("instance", streams::INSTANCE),
            ("embeddings", streams::EMBEDDINGS),
            ("train_data", streams::TRAIN_DATA),
            ("model_init", streams::MODEL_INIT),
            ("train_order", streams::TRAIN_ORDER),
            ("decode", streams::DECODE),
        ] {
            seeds.insert(name.to_string(), cfg.child_seed(stream));
        }
        let inputs = self
            .inputs
            .iter()
            .map(|p| {
                Ok(InputRecord {
                    path: p.display().to_string(),
                    sha256: sha256_file(p)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        self.outputs.push(MANIFEST_FILE.to_string());
        let manifest = Manifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: self.command.name().to_string(),
            seed: cfg.seed,
            seeds,
            config: serde_json::to_value(cfg).map_err(|e| Error::Serde(e.to_string()))?,
            inputs,
            outputs: self.outputs.clone(),
        };
        let path = self.path(MANIFEST_FILE);
        std::fs::write(&path, json(&manifest)?).map_err(|e| Error::io(&path, e))
    }
}

/// Run one command with an already resolved configuration.
pub fn execute(command: Command, config: &RunConfig, config_file: Option<&Path>) -> Result<()> {
    config.validate()?;
    let mut run = Run::new(command, config, config_file)?;
    match command {
        Command::Synth => synth(&mut run)?,
        Command::Train => train(&mut run)?,
        Command::Rerank => rerank(&mut run)?,
        Command::SweepAlpha => sweep_alpha(&mut run)?,
        Command::Diagnose => diagnose(&mut run)?,
        Command::Decode => decode(&mut run)?,
        Command::LoadCheck => load_check(&mut run)?,
    }
    run.finish()
}

fn world(cfg: &RunConfig) -> Result<GenerativeWorld> {
    match &cfg.world_file {
        Some(path) => GenerativeWorld::load(path),
        None => GenerativeWorld::generate(&cfg.world, &mut Rng::new(cfg.seed)),
    }
}

fn pairs(cfg: &RunConfig, world: &GenerativeWorld) -> Result<PairSet> {
    world.build_instance(cfg.instance.n_pairs, &mut Rng::new(cfg.seed).child(streams::INSTANCE))
}

fn format_tokens(seq: &TokenSeq) -> String {
    seq.tokens().iter().map(|t| t.0.to_string()).collect::<Vec<_>>().join(" ")
}

fn synth(run: &mut Run) -> Result<()> {
    let cfg = run.config;
    let world = world(cfg)?;
    let pairs = pairs(cfg, &world)?;
    run.write("world.json", &world.to_json())?;
    run.write("instance.json", &json(&pairs)?)?;
    let wc = world.config();
    println!(
        "video_support={} text_support={} states={} pairs={}",
        wc.video_space().unwrap_or(0),
        wc.text_space().unwrap_or(0),
        world.states(),
        pairs.len()
    );
    println!("text_prior_entropy={:?}", world.text_prior_entropy());
    println!("video_prior_entropy={:?}", world.video_prior_entropy());
    Ok(())
}

/// The pairs a `train` run fits.
pub(crate) fn training_pairs(cfg: &RunConfig, world: &GenerativeWorld) -> Vec<(TokenSeq, TokenSeq)> {
    world.sample_pairs(cfg.train.samples, &mut Rng::new(cfg.seed).child(streams::TRAIN_DATA))
}

fn train(run: &mut Run) -> Result<()> {
    let cfg = run.config;
    let world = world(cfg)?;
    if cfg.train.samples == 0 {
        return Err(Error::Config("train.samples must be >= 1".into()));
    }
    let data = training_pairs(cfg, &world);
    let mut model = match &cfg.train.resume {
        Some(path) => BiModel::load(path)?,
        None => {
            let model_config = ModelConfig {
                dim: cfg.model.dim,
                text_summary: cfg.model.text_summary,
                init_scale: cfg.model.init_scale,
                ..ModelConfig::for_world(world.config())
            };
            BiModel::new(model_config, cfg.child_seed(streams::MODEL_INIT))?
        }
    };
    let total = cfg.train.epochs;
    let done = model.epochs_completed();
    if done > total {
        return Err(Error::Config(format!("checkpoint already has {done} epochs, more than train.epochs = {total}")));
    }
    let mut csv = String::from("epoch,joint,objective\n");
    let mut initial = None;
    if done < total {
        let tc = crate::bimodel::TrainConfig {
            epochs: total - done,
            ..cfg.train_config()
        };
        let report = model.train(&data, &tc)?;
        initial = Some(report.initial);
        for e in &report.epochs {
            writeln!(csv, "{},{:?},{:?}", e.epoch, e.joint, e.objective).expect("string write");
        }
        if let (Some(first), Some(last)) = (report.epochs.first(), report.epochs.last()) {
            println!(
                "epochs {}..={} joint {:?} -> {:?}",
                first.epoch, last.epoch, report.initial.joint, last.joint
            );
        }
    }
    run.write("model.json", &model.to_json())?;
    run.write("loss.csv", &csv)?;
    if initial.is_none() {
        println!("checkpoint already trained for {total} epochs");
    }
    Ok(())
}

/// Owned inputs of a scoring command.
struct Scene {
    direction: Direction,
    world: Option<GenerativeWorld>,
    instance: Option<crate::world::RetrievalInstance>,
    model: Option<BiModel>,
    bundle: Option<LoadedBundle>,
}

impl Scene {
    fn load(cfg: &RunConfig) -> Result<Self> {
        let direction = cfg.pipeline.direction;
        let mut scene = Scene {
            direction,
            world: None,
            instance: None,
            model: None,
            bundle: None,
        };
        match cfg.source {
            Source::Files => {
                let files = cfg.files.as_ref().expect("validated");
                scene.bundle = Some(files.load()?);
            }
            Source::WorldOracle | Source::WorldModel => {
                let world = world(cfg)?;
                scene.instance = Some(pairs(cfg, &world)?.view(direction));
                scene.world = Some(world);
                if cfg.source == Source::WorldModel {
                    scene.model = Some(BiModel::load(cfg.model.file.as_ref().expect("validated"))?);
                }
            }
        }
        Ok(scene)
    }

    fn universe(&self) -> Universe {
        match (&self.bundle, &self.instance) {
            (Some(b), _) => b.universe(self.direction),
            (None, Some(inst)) => Universe::from(inst),
            (None, None) => unreachable!("scene has a score source"),
        }
    }

    fn scorer(&self, cfg: &RunConfig) -> Result<Box<dyn PairScorer + '_>> {
        if let Some(b) = &self.bundle {
            return Ok(Box::new(&b.scorer));
        }
        let instance = self.instance.as_ref().expect("world scene");
        match &self.model {
            Some(model) => Ok(Box::new(ModelScorer::new(model, instance, cfg.model.length_normalize)?)),
            None => Ok(Box::new(WorldScorer::new(self.world.as_ref().expect("world scene"), instance)?)),
        }
    }

    fn embeddings(&self, cfg: &RunConfig) -> Result<Option<(EmbeddingTable, EmbeddingTable)>> {
        match (&self.bundle, &self.instance) {
            (Some(b), _) => Ok(b.embeddings.clone()),
            (None, Some(inst)) => synthetic_embeddings(inst, &cfg.embedding_config()).map(Some),
            (None, None) => Ok(None),
        }
    }

    fn candidate_tokens(&self) -> Option<&[TokenSeq]> {
        match (&self.bundle, &self.instance) {
            (Some(b), _) => b.candidate_tokens.as_deref(),
            (None, Some(inst)) => Some(&inst.candidates),
            (None, None) => None,
        }
    }
}

/// First stage plus rerank; exhaustive when no embeddings are available.
fn ranked(
    universe: &Universe,
    embeddings: Option<&(EmbeddingTable, EmbeddingTable)>,
    scorer: &dyn PairScorer,
    pipeline: &PipelineConfig,
) -> Result<(RankingResult, TimingReport)> {
    match embeddings {
        Some((q, c)) => run_pipeline(universe, q, c, &scorer, pipeline),
        None => {
            let counting = CountingScorer::new(scorer);
            let t = std::time::Instant::now();
            let result = rerank_exhaustive(universe, &counting, pipeline)?;
            let rerank_seconds = t.elapsed().as_secs_f64();
            let (cand, query, prior) = counting.counts();
            let (nq, nc) = (universe.query_ids.len(), universe.candidate_ids.len());
            Ok((
                result,
                TimingReport {
                    queries: nq,
                    candidates: nc,
                    k: nc,
                    first_stage_seconds: 0.0,
                    rerank_seconds,
                    candidate_likelihood_calls: cand,
                    query_likelihood_calls: query,
                    prior_calls: prior,
                    scorer_calls: cand + query,
                    exhaustive_calls: 2 * (nq * nc) as u64,
                },
            ))
        }
    }
}

fn rerank(run: &mut Run) -> Result<()> {
    let cfg = run.config;
    let scene = Scene::load(cfg)?;
    let universe = scene.universe();
    let scorer = scene.scorer(cfg)?;
    let embeddings = scene.embeddings(cfg)?;
    let pipeline = cfg.pipeline_config();
    let (result, timing) = ranked(&universe, embeddings.as_ref(), &*scorer, &pipeline)?;
    run.write("ranking.csv", &result.to_csv())?;
    if let Some(gt) = &universe.gt {
        let recall = recall_at_k(&result, gt, &cfg.eval.ks)?;
        let line: Vec<String> = recall.recall.iter().map(|(k, r)| format!("R@{k}={r:.2}")).collect();
        println!("{} {}", universe.direction.as_str(), line.join(" "));
        run.write("recall.json", &json(&recall)?)?;
    } else {
        println!("no ground truth; recall report skipped");
    }
    run.write("timing.json", &json(&timing)?)?;
    println!(
        "k={} scorer_calls={} exhaustive_calls={} first_stage={:.3}s rerank={:.3}s",
        timing.k, timing.scorer_calls, timing.exhaustive_calls, timing.first_stage_seconds, timing.rerank_seconds
    );
    Ok(())
}

fn sweep_alpha(run: &mut Run) -> Result<()> {
    let cfg = run.config;
    let scene = Scene::load(cfg)?;
    let universe = scene.universe();
    let gt = universe
        .gt
        .clone()
        .ok_or_else(|| Error::Config("sweep-alpha needs ground truth".into()))?;
    let scorer = scene.scorer(cfg)?;
    let embeddings = scene.embeddings(cfg)?;
    let mut csv = String::from("alpha,r_at_1\n");
    for &alpha in &cfg.sweep.alphas {
        let pipeline = PipelineConfig {
            cpn: CpnConfig::uniform(alpha),
            ..cfg.pipeline_config()
        };
        let (result, _) = ranked(&universe, embeddings.as_ref(), &*scorer, &pipeline)?;
        let r1 = recall_at_k(&result, &gt, &[1])?.at(1).expect("k = 1 requested");
        writeln!(csv, "{alpha:?},{r1:?}").expect("string write");
        println!("alpha={alpha:?} R@1={r1:.2}");
    }
    run.write("sweep.csv", &csv)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DiagnoseSummary {
    direction: Direction,
    alpha: f64,
    concentration_candidate: f64,
    concentration_cpn: f64,
    modal_candidate: String,
    modal_candidate_cpn: String,
    top_prior_candidate: String,
}

fn diagnose(run: &mut Run) -> Result<()> {
    let cfg = run.config;
    let scene = Scene::load(cfg)?;
    let universe = scene.universe();
    let gt = universe
        .gt
        .clone()
        .ok_or_else(|| Error::Config("diagnose needs ground truth".into()))?;
    let scorer = scene.scorer(cfg)?;
    let (cand, query, prior) = score_tables(&universe, &&*scorer)?;
    let normalized = cpn_normalize(&cand, &prior, cfg.diagnose.alpha)?;
    let raw_rank = rank(&cand);
    let cpn_rank = rank(&normalized);
    let tokens = scene.candidate_tokens();
    let raw = bias_report(&raw_rank, &prior, &gt, tokens)?;
    let cpn = bias_report(&cpn_rank, &prior, &gt, tokens)?;
    run.write("bias_candidate.csv", &raw.to_csv())?;
    run.write("bias_cpn.csv", &cpn.to_csv())?;
    let subsample = match cfg.diagnose.heatmap_subsample {
        0 => None,
        m => Some(m),
    };
    let description = format!("command=diagnose source={:?} direction={}", cfg.source, universe.direction.as_str());
    for (name, matrix) in [("heatmap_candidate", &cand), ("heatmap_query", &query), ("heatmap_cpn", &normalized)] {
        let file = format!("{name}.csv");
        heatmap_export(matrix, run.path(&file), subsample, &description, cfg.seed)?;
        run.record(&file);
        run.record(&format!("{name}.meta.json"));
    }
    let summary = DiagnoseSummary {
        direction: universe.direction,
        alpha: cfg.diagnose.alpha,
        concentration_candidate: raw.concentration,
        concentration_cpn: cpn.concentration,
        modal_candidate: raw.modal_candidate_id.clone(),
        modal_candidate_cpn: cpn.modal_candidate_id.clone(),
        top_prior_candidate: raw.top_prior_candidate_id.clone(),
    };
    run.write("diagnose.json", &json(&summary)?)?;
    println!(
        "concentration candidate-only={:.3} cpn(alpha={:?})={:.3} modal={} top_prior={}",
        raw.concentration, cfg.diagnose.alpha, cpn.concentration, raw.modal_candidate_id, raw.top_prior_candidate_id
    );
    Ok(())
}

fn decode(run: &mut Run) -> Result<()> {
    let cfg = run.config;
    if cfg.source == Source::Files {
        return Err(Error::Config("decode needs a world (source = \"world_oracle\" or \"world_model\")".into()));
    }
    let world = world(cfg)?;
    let pairs = pairs(cfg, &world)?;
    let n = cfg.decode.conditions.min(pairs.len());
    let videos = &pairs.videos[..n];
    let ids = pairs.video_ids();
    let max_len = match cfg.decode.max_len {
        0 => world.config().text_len,
        m => m,
    };
    let model = cfg.model.file.as_ref().map(BiModel::load).transpose()?;
    let (cond, uncond): (Box<dyn NextTokenModel + '_>, Box<dyn NextTokenModel + '_>) = match &model {
        Some(m) => (Box::new(ModelText(m)), Box::new(ModelTextPrior(m))),
        None => (Box::new(WorldText(&world)), Box::new(WorldTextPrior(&world))),
    };
    let decode_config = DecodeConfig {
        strategy: cfg.decode.strategy,
        max_len,
        alpha: cfg.decode.alpha,
        seed: cfg.child_seed(streams::DECODE),
    };
    let baseline_config = DecodeConfig {
        strategy: Strategy::Greedy,
        alpha: 0.0,
        ..decode_config
    };
    let decoded = decode_batch(&*cond, &*uncond, videos, &decode_config)?;
    let baseline = decode_batch(&*cond, &*uncond, videos, &baseline_config)?;
    let mut csv = String::from("video_id,video,decoded,baseline\n");
    let mut changed = 0;
    for i in 0..n {
        changed += usize::from(decoded[i] != baseline[i]);
        writeln!(
            csv,
            "{},{},{},{}",
            ids[i],
            format_tokens(&videos[i]),
            format_tokens(&decoded[i]),
            format_tokens(&baseline[i])
        )
        .expect("string write");
    }
    run.write("decoded.csv", &csv)?;
    println!("decoded {n} captions; {changed} differ from plain greedy");
    Ok(())
}

fn load_check(run: &mut Run) -> Result<()> {
    let cfg = run.config;
    let files = cfg
        .files
        .as_ref()
        .ok_or_else(|| Error::Config("load-check needs a [files] section".into()))?;
    let bundle = files.load()?;
    println!(
        "ok: {} queries x {} candidates; ground_truth={} embeddings={} tokens={}",
        bundle.candidate.rows(),
        bundle.candidate.cols(),
        bundle.gt.is_some(),
        bundle.embeddings.is_some(),
        bundle.candidate_tokens.is_some()
    );
    Ok(())
}
