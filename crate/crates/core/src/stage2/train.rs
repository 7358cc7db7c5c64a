//! Positive-pair sampling, AUC evaluation and the training loop for stage 2.

use std::path::Path;

use rand::Rng;

use super::loss::{grid_instances, gt_label_map, stage2_loss_and_grad, RlmLoss};
use super::model::{Stage2Config, Stage2Model};
use crate::benchmark::{Corpus, QueryClip, QuerySet};
use crate::checkpoint::{guarded_write, load_blocks_into, read_blocks, save_params};
use crate::config::KvConfig;
use crate::data::AnnotatedVideo;
use crate::error::{Error, Result};
use crate::metrics::{ar_at_an, auc, ArCurve, ProposalSet, MAX_AN, TIOU_THRESHOLDS};
use crate::nn::{derive_seed, seeded_rng, Adam, HasParams, Mat};
use crate::postprocess::{fuse_scores, soft_nms, DEFAULT_SOFT_NMS_SIGMA, PRUNE_THRESHOLD};

pub const STAGE2_MAGIC: &[u8; 5] = b"SVMR2";

#[derive(Debug, Clone, PartialEq)]
pub struct Stage2TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Batches per epoch; 0 means about one pair per training query.
    pub batches_per_epoch: usize,
    /// Validation pairs scored for AUC after each epoch (0 disables validation).
    pub val_pairs: usize,
    pub seed: u64,
}

impl Default for Stage2TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 16,
            lr: 1e-4,
            batches_per_epoch: 0,
            val_pairs: 64,
            seed: 0,
        }
    }
}

impl Stage2TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("train2: epochs and batch_size must be >= 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("train2: lr must be positive".into()));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KvConfig {
        let mut kv = KvConfig::new();
        kv.set("train2.epochs", self.epochs);
        kv.set("train2.batch_size", self.batch_size);
        kv.set("train2.lr", self.lr);
        kv.set("train2.batches_per_epoch", self.batches_per_epoch);
        kv.set("train2.val_pairs", self.val_pairs);
        kv.set("train2.seed", self.seed);
        kv
    }

    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let d = Self::default();
        let cfg = Self {
            epochs: kv.get_or("train2.epochs", d.epochs)?,
            batch_size: kv.get_or("train2.batch_size", d.batch_size)?,
            lr: kv.get_or("train2.lr", d.lr)?,
            batches_per_epoch: kv.get_or("train2.batches_per_epoch", d.batches_per_epoch)?,
            val_pairs: kv.get_or("train2.val_pairs", d.val_pairs)?,
            seed: kv.get_or("train2.seed", d.seed)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Queries and the references that contain their class, with inputs resized once.
#[derive(Debug, Clone)]
pub struct Stage2Data<'a> {
    pub queries: Vec<&'a QueryClip>,
    pub references: Vec<&'a AnnotatedVideo>,
    query_inputs: Vec<Mat>,
    reference_inputs: Vec<Mat>,
    positives: Vec<Vec<usize>>,
    ref_len: usize,
    pub warnings: Vec<String>,
}

impl<'a> Stage2Data<'a> {
    /// Queries with no positive reference are skipped with a warning.
    pub fn new(
        config: &Stage2Config,
        queries: &[&'a QueryClip],
        references: &[&'a AnnotatedVideo],
    ) -> Result<Self> {
        let mut kept = Vec::new();
        let mut positives = Vec::new();
        let mut warnings = Vec::new();
        for &q in queries {
            let pos: Vec<usize> = (0..references.len())
                .filter(|&i| references[i].has_class(q.class_id))
                .collect();
            if pos.is_empty() {
                warnings.push(format!(
                    "query {} skipped: no reference contains class {}",
                    q.query_id, q.class_id
                ));
                continue;
            }
            kept.push(q);
            positives.push(pos);
        }
        let resize = |f: &crate::data::FeatureSequence, len| {
            crate::nn::linear_resize(&f.to_mat(), len)
        };
        Ok(Self {
            query_inputs: kept
                .iter()
                .map(|q| resize(&q.features, config.query_len))
                .collect::<Result<_>>()?,
            reference_inputs: references
                .iter()
                .map(|r| resize(&r.features, config.ref_len))
                .collect::<Result<_>>()?,
            queries: kept,
            references: references.to_vec(),
            positives,
            ref_len: config.ref_len,
            warnings,
        })
    }

    pub fn num_queries(&self) -> usize {
        self.queries.len()
    }

    /// A uniformly drawn query and a uniformly drawn reference containing its class.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(usize, usize)> {
        if self.queries.is_empty() {
            return Err(Error::Data("no query has a positive reference".into()));
        }
        let q = rng.gen_range(0..self.queries.len());
        let pool = &self.positives[q];
        Ok((q, pool[rng.gen_range(0..pool.len())]))
    }

    /// Every positive `(query, reference)` pair.
    pub fn all_pairs(&self) -> Vec<(usize, usize)> {
        self.positives
            .iter()
            .enumerate()
            .flat_map(|(q, refs)| refs.iter().map(move |&r| (q, r)))
            .collect()
    }

    pub fn inputs(&self, q: usize, r: usize) -> (&Mat, &Mat) {
        (&self.query_inputs[q], &self.reference_inputs[r])
    }

    pub fn label_map(&self, q: usize, r: usize) -> Vec<f64> {
        let inst = grid_instances(self.references[r], self.queries[q].class_id, self.ref_len);
        gt_label_map(&inst, self.ref_len)
    }

    /// Ground-truth intervals of the query's class in the reference, in seconds.
    pub fn ground_truth(&self, q: usize, r: usize) -> Vec<(f64, f64)> {
        self.references[r]
            .instances_of(self.queries[q].class_id)
            .map(|i| (i.t_start, i.t_end))
            .collect()
    }
}

/// Mean loss over a batch and the mean flat gradient.
pub fn batch_loss_and_grad(
    model: &Stage2Model,
    data: &Stage2Data<'_>,
    pairs: &[(usize, usize)],
) -> Result<(f64, Vec<f64>)> {
    let mut grad = model.zero_grad();
    let mut total = 0.0;
    for &(q, r) in pairs {
        let (f_q, f_r) = data.inputs(q, r);
        let loss: RlmLoss = stage2_loss_and_grad(model, f_q, f_r, &data.label_map(q, r), &mut grad)?;
        total += loss.total;
    }
    let n = pairs.len().max(1) as f64;
    Ok((total / n, grad.flatten().into_iter().map(|g| g / n).collect()))
}

pub fn batch_loss(model: &Stage2Model, data: &Stage2Data<'_>, pairs: &[(usize, usize)]) -> Result<f64> {
    let mut total = 0.0;
    for &(q, r) in pairs {
        let (f_q, f_r) = data.inputs(q, r);
        let maps = model.predict(f_q, f_r)?;
        total += super::loss::rlm_loss(&maps, &data.label_map(q, r), &model.config)?
            .loss
            .total;
    }
    Ok(total / pairs.len().max(1) as f64)
}

/// One Adam step on a fixed batch; returns the loss before the step.
pub fn train_step(
    model: &mut Stage2Model,
    adam: &mut Adam,
    data: &Stage2Data<'_>,
    pairs: &[(usize, usize)],
) -> Result<f64> {
    let (loss, grad) = batch_loss_and_grad(model, data, pairs)?;
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("stage-2 batch".into()));
    }
    adam.step(model, &grad);
    Ok(loss)
}

/// Ranked proposals for one pair: maps fused with similarity 1, pruned, soft-NMS, top `MAX_AN`.
pub fn pair_proposals(
    model: &Stage2Model,
    data: &Stage2Data<'_>,
    q: usize,
    r: usize,
    sigma: f64,
) -> Result<ProposalSet> {
    let (f_q, f_r) = data.inputs(q, r);
    let video = data.references[r];
    let maps = model.predict(f_q, f_r)?;
    let fused = fuse_scores(1.0, &maps, video.video_id(), video.duration_sec())?
        .into_iter()
        .filter(|p| p.score >= PRUNE_THRESHOLD)
        .collect();
    let kept = soft_nms(fused, sigma, Some(MAX_AN))?;
    Ok(ProposalSet {
        predictions: kept.iter().map(|p| p.interval()).collect(),
        ground_truth: data.ground_truth(q, r),
    })
}

/// AR-vs-AN curve and AUC of the model over the given pairs.
pub fn evaluate_pairs(
    model: &Stage2Model,
    data: &Stage2Data<'_>,
    pairs: &[(usize, usize)],
) -> Result<(ArCurve, f64)> {
    let sets = pairs
        .iter()
        .map(|&(q, r)| pair_proposals(model, data, q, r, DEFAULT_SOFT_NMS_SIGMA))
        .collect::<Result<Vec<_>>>()?;
    let curve = ar_at_an(&sets, MAX_AN, &TIOU_THRESHOLDS)?;
    let a = auc(&curve);
    Ok((curve, a))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stage2EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_auc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage2Report {
    pub epochs: Vec<Stage2EpochStats>,
    pub best_epoch: usize,
    pub warnings: Vec<String>,
}

pub fn draw_pairs(data: &Stage2Data<'_>, n: usize, seed: u64) -> Result<Vec<(usize, usize)>> {
    let mut rng = seeded_rng(seed);
    (0..n).map(|_| data.sample(&mut rng)).collect()
}

/// Trains a fresh model initialised from `train.seed`; returns the best-validation-AUC epoch.
pub fn train_stage2(
    corpus: &Corpus,
    model_config: Stage2Config,
    train: &Stage2TrainConfig,
) -> Result<(Stage2Model, Stage2Report)> {
    let model = Stage2Model::new(model_config, init_seed(train.seed))?;
    train_stage2_from(model, corpus, train)
}

/// Seed used to initialise a model for a training seed; an untrained seed-matched baseline uses it too.
pub fn init_seed(seed: u64) -> u64 {
    derive_seed(seed, 0x494e_4954)
}

pub fn train_stage2_from(
    mut model: Stage2Model,
    corpus: &Corpus,
    train: &Stage2TrainConfig,
) -> Result<(Stage2Model, Stage2Report)> {
    train.validate()?;
    let refs: Vec<&AnnotatedVideo> = corpus.reference_videos().collect();
    let train_q: Vec<&QueryClip> = corpus.queries_in(QuerySet::Train).collect();
    let val_q: Vec<&QueryClip> = corpus.queries_in(QuerySet::Val).collect();
    let data = Stage2Data::new(&model.config, &train_q, &refs)?;
    let val = Stage2Data::new(&model.config, &val_q, &refs)?;
    let mut warnings = data.warnings.clone();
    warnings.extend(val.warnings.iter().cloned());
    if data.num_queries() == 0 {
        return Err(Error::Data("no usable training queries".into()));
    }
    let val_pairs = if val.num_queries() > 0 && train.val_pairs > 0 {
        draw_pairs(&val, train.val_pairs, derive_seed(train.seed, 0x56414c))?
    } else {
        warnings.push("no validation pairs; best epoch chosen by training loss".into());
        Vec::new()
    };
    let batches = if train.batches_per_epoch > 0 {
        train.batches_per_epoch
    } else {
        data.num_queries().div_ceil(train.batch_size).max(1)
    };

    let mut adam = Adam::new(train.lr, model.num_values());
    let mut stats = Vec::with_capacity(train.epochs);
    let mut best: Option<(f64, usize, Stage2Model)> = None;
    for epoch in 0..train.epochs {
        let mut sum = 0.0;
        for b in 0..batches {
            let batch_seed = derive_seed(train.seed, ((epoch as u64) << 32) | b as u64);
            let pairs = draw_pairs(&data, train.batch_size, batch_seed)?;
            let loss = train_step(&mut model, &mut adam, &data, &pairs).map_err(|e| match e {
                Error::NonFinite(_) => Error::Divergence { batch_seed },
                other => other,
            })?;
            if model.params().iter().any(|p| p.check_finite().is_err()) {
                return Err(Error::Divergence { batch_seed });
            }
            sum += loss;
        }
        let train_loss = sum / batches as f64;
        let (val_auc, score) = if val_pairs.is_empty() {
            (f64::NAN, -train_loss)
        } else {
            let a = evaluate_pairs(&model, &val, &val_pairs)?.1;
            (a, a)
        };
        log::info!("stage2 epoch {epoch}: train {train_loss:.6} val AUC {val_auc:.3}");
        stats.push(Stage2EpochStats {
            epoch,
            train_loss,
            val_auc,
        });
        if best.as_ref().map_or(true, |(s, _, _)| score > *s) {
            best = Some((score, epoch, model.clone()));
        }
    }
    let (_, best_epoch, mut best_model) = best.expect("at least one epoch");
    best_model.round_to_f32();
    Ok((
        best_model,
        Stage2Report {
            epochs: stats,
            best_epoch,
            warnings,
        },
    ))
}

pub fn save_stage2(model: &Stage2Model, path: &Path) -> Result<()> {
    save_params(model, STAGE2_MAGIC, path)?;
    guarded_write(
        &crate::stage1::train::config_path(path),
        model.config.to_kv().to_text().as_bytes(),
    )
}

pub fn load_stage2(path: &Path) -> Result<Stage2Model> {
    let kv = KvConfig::load(&crate::stage1::train::config_path(path))?;
    let mut model = Stage2Model::new(Stage2Config::from_kv(&kv)?, 0)?;
    load_blocks_into(&mut model, &read_blocks(STAGE2_MAGIC, path)?)?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmark::{synth_generate, SynthConfig, SynthSizes};

    fn corpus() -> Corpus {
        let cfg = SynthConfig {
            num_classes: 10,
            channels: 4,
            video_snippets: (12, 16),
            instance_snippets: (3, 6),
            ..SynthConfig::default()
        };
        synth_generate(
            &cfg,
            SynthSizes {
                query_videos: 20,
                reference_videos: 20,
            },
        )
        .unwrap()
    }

    fn model_cfg() -> Stage2Config {
        Stage2Config {
            channels: 4,
            ref_len: 8,
            hidden: 6,
            feat: 4,
            samples: 3,
            head: 4,
            ..Stage2Config::default()
        }
    }

    #[test]
    fn pairs_are_positive() {
        let c = corpus();
        let refs: Vec<_> = c.reference_videos().collect();
        let qs: Vec<_> = c.queries_in(QuerySet::Train).collect();
        let d = Stage2Data::new(&model_cfg(), &qs, &refs).unwrap();
        for (q, r) in draw_pairs(&d, 200, 1).unwrap() {
            assert!(d.references[r].has_class(d.queries[q].class_id));
            assert!(d.label_map(q, r).iter().any(|&v| v > 0.0));
        }
    }

    #[test]
    fn one_step_decreases_frozen_batch_loss() {
        let c = corpus();
        let refs: Vec<_> = c.reference_videos().collect();
        let qs: Vec<_> = c.queries_in(QuerySet::Train).collect();
        let mut model = Stage2Model::new(model_cfg(), 2).unwrap();
        let d = Stage2Data::new(&model.config, &qs, &refs).unwrap();
        let pairs = draw_pairs(&d, 8, 5).unwrap();
        let mut adam = Adam::new(1e-3, model.num_values());
        let before = train_step(&mut model, &mut adam, &d, &pairs).unwrap();
        let after = batch_loss(&model, &d, &pairs).unwrap();
        assert!(after < before, "{after} >= {before}");
    }

    #[test]
    fn deterministic_training_and_checkpoint_round_trip() {
        let c = corpus();
        let tc = Stage2TrainConfig {
            epochs: 2,
            batch_size: 4,
            lr: 1e-3,
            batches_per_epoch: 2,
            val_pairs: 4,
            seed: 3,
        };
        let (a, rep) = train_stage2(&c, model_cfg(), &tc).unwrap();
        let (b, _) = train_stage2(&c, model_cfg(), &tc).unwrap();
        assert_eq!(a.flatten(), b.flatten());
        assert_eq!(rep.epochs.len(), 2);
        assert!(rep.epochs.iter().all(|e| (0.0..=100.0).contains(&e.val_auc)));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s2.ckpt");
        save_stage2(&a, &path).unwrap();
        let back = load_stage2(&path).unwrap();
        assert_eq!(back, a);
    }
}
