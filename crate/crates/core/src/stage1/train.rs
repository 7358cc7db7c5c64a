//! Pair sampling, the Adam training loop and checkpoint persistence for stage 1.

use std::path::{Path, PathBuf};

use rand::Rng;

use super::loss::{make_similarity_label, stage1_loss_and_grad, Stage1Grad};
use super::model::{Stage1Config, Stage1Model};
use crate::benchmark::{Corpus, QueryClip, QuerySet};
use crate::checkpoint::{guarded_write, load_blocks_into, read_blocks, save_params};
use crate::config::KvConfig;
use crate::data::AnnotatedVideo;
use crate::error::{Error, Result};
use crate::nn::{derive_seed, seeded_rng, Adam, HasParams, Mat};

pub const STAGE1_MAGIC: &[u8; 5] = b"SVMR1";

#[derive(Debug, Clone, PartialEq)]
pub struct Stage1TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Batches per epoch; 0 means enough to draw about two pairs per training query.
    pub batches_per_epoch: usize,
    pub val_pairs: usize,
    pub seed: u64,
}

impl Default for Stage1TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 256,
            lr: 1e-4,
            batches_per_epoch: 0,
            val_pairs: 256,
            seed: 0,
        }
    }
}

impl Stage1TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("train1: epochs and batch_size must be >= 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("train1: lr must be positive".into()));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KvConfig {
        let mut kv = KvConfig::new();
        kv.set("train1.epochs", self.epochs);
        kv.set("train1.batch_size", self.batch_size);
        kv.set("train1.lr", self.lr);
        kv.set("train1.batches_per_epoch", self.batches_per_epoch);
        kv.set("train1.val_pairs", self.val_pairs);
        kv.set("train1.seed", self.seed);
        kv
    }

    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let d = Self::default();
        let cfg = Self {
            epochs: kv.get_or("train1.epochs", d.epochs)?,
            batch_size: kv.get_or("train1.batch_size", d.batch_size)?,
            lr: kv.get_or("train1.lr", d.lr)?,
            batches_per_epoch: kv.get_or("train1.batches_per_epoch", d.batches_per_epoch)?,
            val_pairs: kv.get_or("train1.val_pairs", d.val_pairs)?,
            seed: kv.get_or("train1.seed", d.seed)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// A sampled training pair, by index into the sampler's queries and references.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairIndex {
    pub query: usize,
    pub reference: usize,
    pub positive: bool,
}

/// Draws (query, reference) pairs with a positive reference half of the time.
#[derive(Debug, Clone)]
pub struct PairSampler<'a> {
    queries: Vec<&'a QueryClip>,
    references: Vec<&'a AnnotatedVideo>,
    positives: Vec<Vec<usize>>,
    negatives: Vec<Vec<usize>>,
    pub warnings: Vec<String>,
}

impl<'a> PairSampler<'a> {
    /// Queries whose class has no positive (or no negative) reference are skipped with a warning.
    pub fn new(queries: &[&'a QueryClip], references: &[&'a AnnotatedVideo]) -> Self {
        let mut kept = Vec::new();
        let mut positives = Vec::new();
        let mut negatives = Vec::new();
        let mut warnings = Vec::new();
        for &q in queries {
            let (pos, neg): (Vec<usize>, Vec<usize>) =
                (0..references.len()).partition(|&i| references[i].has_class(q.class_id));
            if pos.is_empty() || neg.is_empty() {
                let which = if pos.is_empty() { "positive" } else { "negative" };
                warnings.push(format!(
                    "query {} skipped: no {which} reference for class {}",
                    q.query_id, q.class_id
                ));
                continue;
            }
            kept.push(q);
            positives.push(pos);
            negatives.push(neg);
        }
        Self {
            queries: kept,
            references: references.to_vec(),
            positives,
            negatives,
            warnings,
        }
    }

    pub fn num_queries(&self) -> usize {
        self.queries.len()
    }

    pub fn query(&self, i: usize) -> &'a QueryClip {
        self.queries[i]
    }

    pub fn reference(&self, i: usize) -> &'a AnnotatedVideo {
        self.references[i]
    }

    pub fn references(&self) -> &[&'a AnnotatedVideo] {
        &self.references
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<PairIndex> {
        if self.queries.is_empty() {
            return Err(Error::Data("no query with both positive and negative references".into()));
        }
        let query = rng.gen_range(0..self.queries.len());
        let positive = rng.gen_bool(0.5);
        let pool = if positive {
            &self.positives[query]
        } else {
            &self.negatives[query]
        };
        let reference = pool[rng.gen_range(0..pool.len())];
        Ok(PairIndex {
            query,
            reference,
            positive,
        })
    }
}

/// Resized inputs for every query and reference of a sampler, computed once.
#[derive(Debug, Clone)]
pub struct PreparedInputs {
    pub queries: Vec<Mat>,
    pub references: Vec<Mat>,
}

impl PreparedInputs {
    pub fn new(model: &Stage1Model, sampler: &PairSampler<'_>) -> Result<Self> {
        Ok(Self {
            queries: sampler
                .queries
                .iter()
                .map(|q| model.prepare_query(&q.features))
                .collect::<Result<_>>()?,
            references: sampler
                .references
                .iter()
                .map(|r| model.prepare_reference(&r.features))
                .collect::<Result<_>>()?,
        })
    }
}

/// Mean total loss over `pairs`, and (when `grad` is given) the mean flat parameter gradient.
pub fn batch_loss(
    model: &Stage1Model,
    sampler: &PairSampler<'_>,
    inputs: &PreparedInputs,
    pairs: &[PairIndex],
    want_grad: bool,
) -> Result<(f64, Option<Vec<f64>>)> {
    let mut grad = Stage1Grad::zeros(model);
    let mut total = 0.0;
    for p in pairs {
        let g = make_similarity_label(
            sampler.reference(p.reference),
            sampler.query(p.query).class_id,
            model.config.t_emb,
            model.config.rho,
        );
        let (loss, _) = stage1_loss_and_grad(
            model,
            &inputs.queries[p.query],
            &inputs.references[p.reference],
            &g,
            &mut grad,
        )?;
        total += loss.total;
    }
    let n = pairs.len().max(1) as f64;
    let flat = want_grad.then(|| grad.flatten().into_iter().map(|v| v / n).collect());
    Ok((total / n, flat))
}

/// One Adam step on a fixed batch; returns the batch loss before the step.
pub fn train_step(
    model: &mut Stage1Model,
    adam: &mut Adam,
    sampler: &PairSampler<'_>,
    inputs: &PreparedInputs,
    pairs: &[PairIndex],
) -> Result<f64> {
    let (loss, grad) = batch_loss(model, sampler, inputs, pairs, true)?;
    let grad = grad.expect("gradient requested");
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("stage-1 batch".into()));
    }
    adam.step(model, &grad);
    Ok(loss)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage1Report {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub warnings: Vec<String>,
}

fn draw_pairs(sampler: &PairSampler<'_>, n: usize, seed: u64) -> Result<Vec<PairIndex>> {
    let mut rng = seeded_rng(seed);
    (0..n).map(|_| sampler.sample(&mut rng)).collect()
}

/// Trains a fresh model (initialised from `train.seed`) on the corpus's training queries.
///
/// Validation pairs come from the val query classes and are fixed for the whole run; the returned
/// model is the best-validation epoch with parameters rounded to `f32`.
/// References whose instances all belong to classes of `sets`.
pub fn references_within<'a>(corpus: &'a Corpus, sets: &[QuerySet]) -> Vec<&'a AnnotatedVideo> {
    corpus
        .reference_videos()
        .filter(|r| {
            r.instances
                .iter()
                .all(|i| sets.iter().any(|&s| corpus.split.classes(s).contains(&i.class_id)))
        })
        .collect()
}

pub fn train_stage1(
    corpus: &Corpus,
    model_config: Stage1Config,
    train: &Stage1TrainConfig,
) -> Result<(Stage1Model, Stage1Report)> {
    let model = Stage1Model::new(model_config, derive_seed(train.seed, 0x494e_4954))?;
    train_stage1_from(model, corpus, train)
}

pub fn train_stage1_from(
    mut model: Stage1Model,
    corpus: &Corpus,
    train: &Stage1TrainConfig,
) -> Result<(Stage1Model, Stage1Report)> {
    train.validate()?;
    let train_q: Vec<&QueryClip> = corpus.queries_in(QuerySet::Train).collect();
    let val_q: Vec<&QueryClip> = corpus.queries_in(QuerySet::Val).collect();
    let sampler = PairSampler::new(&train_q, &references_within(corpus, &[QuerySet::Train]));
    let val_sampler = PairSampler::new(&val_q, &references_within(corpus, &[QuerySet::Train, QuerySet::Val]));
    let mut warnings = sampler.warnings.clone();
    warnings.extend(val_sampler.warnings.iter().cloned());
    if sampler.num_queries() == 0 {
        return Err(Error::Data("no usable training queries".into()));
    }
    let inputs = PreparedInputs::new(&model, &sampler)?;
    let val = if val_sampler.num_queries() > 0 && train.val_pairs > 0 {
        let inputs = PreparedInputs::new(&model, &val_sampler)?;
        let pairs = draw_pairs(&val_sampler, train.val_pairs, derive_seed(train.seed, 0x56414c))?;
        Some((inputs, pairs))
    } else {
        warnings.push("no validation pairs; best epoch chosen by training loss".into());
        None
    };

    let batches = if train.batches_per_epoch > 0 {
        train.batches_per_epoch
    } else {
        (2 * sampler.num_queries()).div_ceil(train.batch_size).max(1)
    };
    let mut adam = Adam::new(train.lr, model.num_values());
    let mut stats = Vec::with_capacity(train.epochs);
    let mut best: Option<(f64, usize, Stage1Model)> = None;
    for epoch in 0..train.epochs {
        let mut sum = 0.0;
        for b in 0..batches {
            let batch_seed = derive_seed(train.seed, ((epoch as u64) << 32) | b as u64);
            let pairs = draw_pairs(&sampler, train.batch_size, batch_seed)?;
            let loss = train_step(&mut model, &mut adam, &sampler, &inputs, &pairs)
                .map_err(|e| match e {
                    Error::NonFinite(_) => Error::Divergence { batch_seed },
                    other => other,
                })?;
            if model.params().iter().any(|p| p.check_finite().is_err()) {
                return Err(Error::Divergence { batch_seed });
            }
            sum += loss;
        }
        let train_loss = sum / batches as f64;
        let val_loss = match &val {
            Some((vi, vp)) => batch_loss(&model, &val_sampler, vi, vp, false)?.0,
            None => train_loss,
        };
        log::info!("stage1 epoch {epoch}: train {train_loss:.6} val {val_loss:.6}");
        stats.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
        });
        if best.as_ref().map_or(true, |(v, _, _)| val_loss < *v) {
            best = Some((val_loss, epoch, model.clone()));
        }
    }
    let (_, best_epoch, mut best_model) = best.expect("at least one epoch");
    best_model.round_to_f32();
    Ok((
        best_model,
        Stage1Report {
            epochs: stats,
            best_epoch,
            warnings,
        },
    ))
}

/// Path of the key-value config written next to a checkpoint.
pub fn config_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("cfg")
}

pub fn save_stage1(model: &Stage1Model, path: &Path) -> Result<()> {
    save_params(model, STAGE1_MAGIC, path)?;
    guarded_write(&config_path(path), model.config.to_kv().to_text().as_bytes())
}

pub fn load_stage1(path: &Path) -> Result<Stage1Model> {
    let kv = KvConfig::load(&config_path(path))?;
    let mut model = Stage1Model::new(Stage1Config::from_kv(&kv)?, 0)?;
    load_blocks_into(&mut model, &read_blocks(STAGE1_MAGIC, path)?)?;
    Ok(model)
}
