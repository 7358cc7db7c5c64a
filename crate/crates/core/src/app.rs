//! Command implementations behind the `svmr` binary.
//!
//! Every command reads one flat [`PipelineConfig`] and writes its artifacts into an output
//! directory under fixed file names, so a pipeline run is a chain of directories.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use crate::benchmark::{
    build_corpus, synth_generate, ClassSplit, Corpus, QuerySet, SynthConfig, SynthSizes,
};
use crate::config::KvConfig;
use crate::data::{
    load_annotated_videos, load_features, read_jsonl, write_jsonl, AnnotatedVideo,
    CandidateRecord, ClassId, PredictionRecord,
};
use crate::error::{Error, Result};
use crate::gallery::GalleryIndex;
use crate::gradsuite::{run_suite, GradCheck};
use crate::metrics::ar_curve_csv;
use crate::nn::derive_seed;
use crate::pipeline::{evaluate_predictions, Evaluation, GroundTruth, Retriever};
use crate::postprocess::DEFAULT_SOFT_NMS_SIGMA;
use crate::stage1::{load_stage1, save_stage1, train_stage1, Stage1Config, Stage1Report};
use crate::stage1::Stage1TrainConfig;
use crate::stage2::train::{load_stage2, save_stage2, train_stage2, Stage2Report};
use crate::stage2::{Stage2Config, Stage2TrainConfig};

pub const STAGE1_FILE: &str = "stage1.ckpt";
pub const STAGE1_LOG: &str = "stage1_loss.csv";
pub const STAGE2_FILE: &str = "stage2.ckpt";
pub const STAGE2_LOG: &str = "stage2_loss.csv";
pub const INDEX_FILE: &str = "gallery.idx";
pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const CANDIDATES_FILE: &str = "candidates.jsonl";
pub const REPORT_FILE: &str = "report.txt";
pub const CURVE_FILE: &str = "ar_curve.csv";

/// All settings of a pipeline run, read from one `key = value` file.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub synth: SynthConfig,
    pub sizes: SynthSizes,
    pub stage1: Stage1Config,
    pub train1: Stage1TrainConfig,
    pub stage2: Stage2Config,
    pub train2: Stage2TrainConfig,
    pub top_videos: usize,
    pub soft_nms_sigma: f64,
    pub tiou_tau: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            synth: SynthConfig::default(),
            sizes: SynthSizes {
                query_videos: 200,
                reference_videos: 400,
            },
            stage1: Stage1Config::default(),
            train1: Stage1TrainConfig::default(),
            stage2: Stage2Config::default(),
            train2: Stage2TrainConfig::default(),
            top_videos: crate::pipeline::DEFAULT_TOP_VIDEOS,
            soft_nms_sigma: DEFAULT_SOFT_NMS_SIGMA,
            tiou_tau: crate::pipeline::DEFAULT_TIOU_TAU,
        }
    }
}

impl PipelineConfig {
    /// Smaller models and shorter schedules that train both stages in minutes on one core.
    pub fn desk() -> Self {
        let d = Self::default();
        Self {
            stage1: Stage1Config {
                embed_dim: 128,
                ..d.stage1
            },
            train1: Stage1TrainConfig {
                epochs: 20,
                batch_size: 32,
                lr: 3e-3,
                batches_per_epoch: 8,
                ..d.train1
            },
            stage2: Stage2Config {
                ref_len: 32,
                hidden: 64,
                feat: 32,
                samples: 8,
                head: 32,
                ..d.stage2
            },
            train2: Stage2TrainConfig {
                epochs: 15,
                batch_size: 8,
                lr: 1e-4,
                batches_per_epoch: 16,
                val_pairs: 150,
                ..d.train2
            },
            ..d
        }
    }

    pub fn to_kv(&self) -> KvConfig {
        let mut kv = self.synth.to_kv();
        kv.set("synth.query_videos", self.sizes.query_videos);
        kv.set("synth.reference_videos", self.sizes.reference_videos);
        kv.merge(&self.stage1.to_kv());
        kv.merge(&self.train1.to_kv());
        kv.merge(&self.stage2.to_kv());
        kv.merge(&self.train2.to_kv());
        kv.set("query.top_videos", self.top_videos);
        kv.set("query.soft_nms_sigma", self.soft_nms_sigma);
        kv.set("eval.tiou_tau", self.tiou_tau);
        kv
    }

    /// Reads a config; absent keys keep their defaults and unknown keys are rejected.
    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let d = Self::default();
        let known = d.to_kv();
        kv.check_known(&known.keys().collect::<Vec<_>>())?;
        let cfg = Self {
            synth: SynthConfig::from_kv(kv)?,
            sizes: SynthSizes {
                query_videos: kv.get_or("synth.query_videos", d.sizes.query_videos)?,
                reference_videos: kv.get_or("synth.reference_videos", d.sizes.reference_videos)?,
            },
            stage1: Stage1Config::from_kv(kv)?,
            train1: Stage1TrainConfig::from_kv(kv)?,
            stage2: Stage2Config::from_kv(kv)?,
            train2: Stage2TrainConfig::from_kv(kv)?,
            top_videos: kv.get_or("query.top_videos", d.top_videos)?,
            soft_nms_sigma: kv.get_or("query.soft_nms_sigma", d.soft_nms_sigma)?,
            tiou_tau: kv.get_or("eval.tiou_tau", d.tiou_tau)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.top_videos == 0 {
            return Err(Error::Config("query.top_videos must be >= 1".into()));
        }
        if !(self.soft_nms_sigma > 0.0) {
            return Err(Error::Config("query.soft_nms_sigma must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.tiou_tau) {
            return Err(Error::Config("eval.tiou_tau must lie in [0, 1]".into()));
        }
        if self.stage1.channels != self.stage2.channels {
            return Err(Error::Config(format!(
                "stage1.channels ({}) and stage2.channels ({}) differ",
                self.stage1.channels, self.stage2.channels
            )));
        }
        Ok(())
    }

    /// Loads `path` (if any), applies `key=value` overrides, then pins every seed to `seed`.
    pub fn resolve(path: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<Self> {
        let mut kv = match path {
            Some(p) => KvConfig::load(p)?,
            None => KvConfig::new(),
        };
        for o in overrides {
            let (k, v) = parse_override(o)?;
            kv.set(k, v);
        }
        if let Some(s) = seed {
            for k in ["synth.seed", "train1.seed", "train2.seed"] {
                kv.set(k, s);
            }
        }
        Self::from_kv(&kv)
    }

    /// Hex hash of the canonical text of the full config.
    pub fn hash(&self) -> String {
        self.to_kv().hash()
    }
}

/// Splits a `key=value` override.
pub fn parse_override(s: &str) -> Result<(&str, &str)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {s:?} is not key=value")))?;
    let k = k.trim();
    if k.is_empty() {
        return Err(Error::Config(format!("override {s:?} has an empty key")));
    }
    Ok((k, v.trim()))
}

fn start(command: &str, cfg: &PipelineConfig, seed: u64) {
    log::info!("{command}: config_hash={} seed={seed}", cfg.hash());
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn warn_all(warnings: &[String]) {
    for w in warnings {
        log::warn!("{w}");
    }
}

/// Generates a synthetic corpus into `out`.
pub fn synth_corpus(cfg: &PipelineConfig, out: &Path) -> Result<Corpus> {
    start("synth-corpus", cfg, cfg.synth.seed);
    let corpus = synth_generate(&cfg.synth, cfg.sizes)?;
    warn_all(&corpus.warnings);
    ensure_dir(out)?;
    corpus.save(out)?;
    Ok(corpus)
}

/// Builds a corpus from two annotation files: `v1` supplies queries, `v2` references.
///
/// Classes are split by the `synth.train_fraction` / `synth.val_fraction` keys.
pub fn build_corpus_from(cfg: &PipelineConfig, v1: &Path, v2: &Path, out: &Path) -> Result<Corpus> {
    start("build-corpus", cfg, cfg.synth.seed);
    let v1 = load_annotated_videos(v1)?;
    let v2 = load_annotated_videos(v2)?;
    let classes: BTreeSet<ClassId> = v1.iter().chain(&v2).flat_map(|v| v.classes()).collect();
    let split =
        ClassSplit::proportional(&classes, cfg.synth.train_fraction, cfg.synth.val_fraction)?;
    let corpus = build_corpus(&v1, &v2, split, derive_seed(cfg.synth.seed, 3))?;
    warn_all(&corpus.warnings);
    ensure_dir(out)?;
    corpus.save(out)?;
    Ok(corpus)
}

pub fn train_stage1_cmd(cfg: &PipelineConfig, corpus_dir: &Path, out: &Path) -> Result<Stage1Report> {
    start("train-stage1", cfg, cfg.train1.seed);
    let corpus = Corpus::load(corpus_dir)?;
    let (model, report) = train_stage1(&corpus, cfg.stage1.clone(), &cfg.train1)?;
    warn_all(&report.warnings);
    ensure_dir(out)?;
    save_stage1(&model, &out.join(STAGE1_FILE))?;
    let mut log = String::from("epoch,train_loss,val_loss\n");
    for e in &report.epochs {
        log += &format!("{},{:.6},{:.6}\n", e.epoch, e.train_loss, e.val_loss);
    }
    write_text(&out.join(STAGE1_LOG), &log)?;
    Ok(report)
}

/// Embeds every reference video of the corpus with a trained stage-1 model.
pub fn embed_gallery(stage1: &Path, corpus_dir: &Path, out: &Path) -> Result<GalleryIndex> {
    let model = load_stage1(stage1)?;
    let corpus = Corpus::load(corpus_dir)?;
    let refs: Vec<&AnnotatedVideo> = corpus.reference_videos().collect();
    let index = GalleryIndex::embed(&model, &refs)?;
    ensure_dir(out)?;
    index.save(&out.join(INDEX_FILE))?;
    log::info!("embed-gallery: {} videos indexed", index.len());
    Ok(index)
}

pub fn train_stage2_cmd(cfg: &PipelineConfig, corpus_dir: &Path, out: &Path) -> Result<Stage2Report> {
    start("train-stage2", cfg, cfg.train2.seed);
    let corpus = Corpus::load(corpus_dir)?;
    let (model, report) = train_stage2(&corpus, cfg.stage2.clone(), &cfg.train2)?;
    warn_all(&report.warnings);
    ensure_dir(out)?;
    save_stage2(&model, &out.join(STAGE2_FILE))?;
    let mut log = String::from("epoch,train_loss,val_auc\n");
    for e in &report.epochs {
        log += &format!("{},{:.6},{:.4}\n", e.epoch, e.train_loss, e.val_auc);
    }
    write_text(&out.join(STAGE2_LOG), &log)?;
    Ok(report)
}

/// Trained artifacts a query needs.
#[derive(Debug, Clone)]
pub struct QueryArtifacts {
    pub stage1: PathBuf,
    pub stage2: PathBuf,
    pub index: PathBuf,
    /// Corpus holding the reference features of the indexed videos.
    pub corpus: PathBuf,
}

/// What to search for.
#[derive(Debug, Clone)]
pub enum QuerySource {
    /// One feature file; its file stem becomes the query id.
    Features(PathBuf),
    /// Every query clip of a corpus split.
    Split(QuerySet),
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryOutput {
    pub candidates: Vec<CandidateRecord>,
    pub predictions: Vec<PredictionRecord>,
}

/// Runs retrieval and writes the candidate videos and globally ranked clips of every query.
pub fn query(
    cfg: &PipelineConfig,
    art: &QueryArtifacts,
    source: &QuerySource,
    out: &Path,
) -> Result<QueryOutput> {
    let stage1 = load_stage1(&art.stage1)?;
    let stage2 = load_stage2(&art.stage2)?;
    let index = GalleryIndex::load(&art.index)?;
    let corpus = Corpus::load(&art.corpus)?;
    let refs: Vec<&AnnotatedVideo> = corpus.reference_videos().collect();
    let mut retriever = Retriever::new(&stage1, &stage2, &index, &refs)?;
    retriever.top_videos = cfg.top_videos;
    retriever.sigma = cfg.soft_nms_sigma;

    let queries = match source {
        QuerySource::Features(p) => {
            let f = load_features(p)?;
            vec![(f.video_id.clone(), f)]
        }
        QuerySource::Split(set) => corpus
            .queries_in(*set)
            .map(|q| (q.query_id.clone(), q.features.clone()))
            .collect(),
    };
    let mut output = QueryOutput {
        candidates: Vec::new(),
        predictions: Vec::new(),
    };
    for (id, features) in &queries {
        let r = retriever.query(id, features)?;
        output.candidates.extend(r.candidate_records(id));
        output.predictions.extend(r.results.global);
    }
    ensure_dir(out)?;
    write_jsonl(&out.join(CANDIDATES_FILE), &output.candidates)?;
    write_jsonl(&out.join(PREDICTIONS_FILE), &output.predictions)?;
    log::info!(
        "query: {} queries, {} predictions",
        queries.len(),
        output.predictions.len()
    );
    Ok(output)
}

/// Scores prediction and candidate files against the ground truth of a corpus split.
pub fn evaluate(
    cfg: &PipelineConfig,
    corpus_dir: &Path,
    set: QuerySet,
    predictions: &Path,
    candidates: &Path,
    out: &Path,
) -> Result<Evaluation> {
    let corpus = Corpus::load(corpus_dir)?;
    let gt = GroundTruth {
        queries: corpus.queries_in(set).collect(),
        references: corpus.reference_videos().collect(),
    };
    let preds: Vec<PredictionRecord> = read_jsonl(predictions)?;
    let cands: Vec<CandidateRecord> = read_jsonl(candidates)?;
    let ev = evaluate_predictions(&gt, &cands, &preds, cfg.tiou_tau)?;
    ensure_dir(out)?;
    write_text(&out.join(REPORT_FILE), &ev.report.to_text())?;
    write_text(&out.join(CURVE_FILE), &ar_curve_csv(&ev.curve))?;
    Ok(ev)
}

/// Runs the gradient suite; any failed check is an error.
pub fn gradcheck(seeds: &[u64]) -> Result<Vec<GradCheck>> {
    let checks = run_suite(seeds)?;
    let failed: Vec<String> = checks
        .iter()
        .filter(|c| !c.passed())
        .map(|c| format!("{}@seed{}", c.name, c.seed))
        .collect();
    if !failed.is_empty() {
        return Err(Error::GradientCheck(failed.join(",")));
    }
    Ok(checks)
}

/// Chains every command on a synthetic corpus under `root` and evaluates the test split.
pub fn run_pipeline(cfg: &PipelineConfig, root: &Path) -> Result<Evaluation> {
    let corpus = root.join("corpus");
    let models = root.join("models");
    let results = root.join("results");
    synth_corpus(cfg, &corpus)?;
    train_stage1_cmd(cfg, &corpus, &models)?;
    embed_gallery(&models.join(STAGE1_FILE), &corpus, &models)?;
    train_stage2_cmd(cfg, &corpus, &models)?;
    let art = QueryArtifacts {
        stage1: models.join(STAGE1_FILE),
        stage2: models.join(STAGE2_FILE),
        index: models.join(INDEX_FILE),
        corpus: corpus.clone(),
    };
    query(cfg, &art, &QuerySource::Split(QuerySet::Test), &results)?;
    evaluate(
        cfg,
        &corpus,
        QuerySet::Test,
        &results.join(PREDICTIONS_FILE),
        &results.join(CANDIDATES_FILE),
        &results,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips_and_rejects_unknown_keys() {
        let cfg = PipelineConfig::desk();
        assert_eq!(PipelineConfig::from_kv(&cfg.to_kv()).unwrap(), cfg);
        let bad = KvConfig::parse("train1.epoch = 3\n").unwrap();
        assert_eq!(PipelineConfig::from_kv(&bad).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn overrides_and_seed() {
        let cfg = PipelineConfig::resolve(
            None,
            &["query.top_videos = 5".into(), "train2.lr=0.01".into()],
            Some(9),
        )
        .unwrap();
        assert_eq!(cfg.top_videos, 5);
        assert_eq!(cfg.train2.lr, 0.01);
        assert_eq!((cfg.synth.seed, cfg.train1.seed, cfg.train2.seed), (9, 9, 9));
        assert!(parse_override("novalue").is_err());
        assert!(PipelineConfig::resolve(None, &["stage2.channels=8".into()], None).is_err());
    }
}
