//! Class-conditioned synthetic feature corpora.
//!
//! Each class owns a prototype vector drawn once from the seed. Instance snippets are the class
//! prototype plus isotropic noise; background snippets are a shared background prototype plus
//! noise. The generated V1 videos become queries and the V2 videos go through reference
//! construction, exactly as an extracted real corpus would.

use std::collections::BTreeSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::corpus::{build_corpus, Corpus};
use super::split::ClassSplit;
use crate::config::KvConfig;
use crate::data::{AnnotatedVideo, ClassId, FeatureSequence, TemporalInstance};
use crate::error::{Error, Result};
use crate::nn::{derive_seed, seeded_rng};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub channels: usize,
    pub snippets_per_second: f64,
    pub sigma_proto: f64,
    pub sigma_inst: f64,
    pub sigma_bg: f64,
    /// Inclusive range of source-video lengths in snippets.
    pub video_snippets: (usize, usize),
    /// Inclusive range of instances per source video.
    pub instances_per_video: (usize, usize),
    /// Inclusive range of instance lengths in snippets.
    pub instance_snippets: (usize, usize),
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_classes: 20,
            channels: 64,
            snippets_per_second: 1.0,
            sigma_proto: 1.0,
            sigma_inst: 0.6,
            sigma_bg: 0.6,
            video_snippets: (30, 60),
            instances_per_video: (1, 2),
            instance_snippets: (6, 16),
            train_fraction: 0.8,
            val_fraction: 0.1,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synth config: {m}")));
        if self.num_classes < 2 {
            return bad("num_classes must be >= 2");
        }
        if self.channels == 0 {
            return bad("channels must be >= 1");
        }
        if !(self.snippets_per_second > 0.0) {
            return bad("snippets_per_second must be > 0");
        }
        // σ_inst = 0 is allowed for noiseless corpora; the prototype and background scales must be positive
        if !(self.sigma_proto > 0.0 && self.sigma_bg > 0.0 && self.sigma_inst >= 0.0) {
            return bad("sigma_proto and sigma_bg must be > 0, sigma_inst >= 0");
        }
        let ordered = |(a, b): (usize, usize)| a >= 1 && a <= b;
        if !ordered(self.video_snippets)
            || !ordered(self.instances_per_video)
            || !ordered(self.instance_snippets)
        {
            return bad("ranges must satisfy 1 <= min <= max");
        }
        if self.instance_snippets.0 >= self.video_snippets.0 {
            return bad("shortest video must be longer than the shortest instance");
        }
        Ok(())
    }
}

impl SynthConfig {
    pub fn to_kv(&self) -> KvConfig {
        let pair = |(a, b): (usize, usize)| format!("{a}, {b}");
        let mut kv = KvConfig::new();
        kv.set("synth.num_classes", self.num_classes);
        kv.set("synth.channels", self.channels);
        kv.set("synth.snippets_per_second", self.snippets_per_second);
        kv.set("synth.sigma_proto", self.sigma_proto);
        kv.set("synth.sigma_inst", self.sigma_inst);
        kv.set("synth.sigma_bg", self.sigma_bg);
        kv.set("synth.video_snippets", pair(self.video_snippets));
        kv.set("synth.instances_per_video", pair(self.instances_per_video));
        kv.set("synth.instance_snippets", pair(self.instance_snippets));
        kv.set("synth.train_fraction", self.train_fraction);
        kv.set("synth.val_fraction", self.val_fraction);
        kv.set("synth.seed", self.seed);
        kv
    }

    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let d = Self::default();
        let cfg = Self {
            num_classes: kv.get_or("synth.num_classes", d.num_classes)?,
            channels: kv.get_or("synth.channels", d.channels)?,
            snippets_per_second: kv.get_or("synth.snippets_per_second", d.snippets_per_second)?,
            sigma_proto: kv.get_or("synth.sigma_proto", d.sigma_proto)?,
            sigma_inst: kv.get_or("synth.sigma_inst", d.sigma_inst)?,
            sigma_bg: kv.get_or("synth.sigma_bg", d.sigma_bg)?,
            video_snippets: kv.get_pair_or("synth.video_snippets", d.video_snippets)?,
            instances_per_video: kv.get_pair_or("synth.instances_per_video", d.instances_per_video)?,
            instance_snippets: kv.get_pair_or("synth.instance_snippets", d.instance_snippets)?,
            train_fraction: kv.get_or("synth.train_fraction", d.train_fraction)?,
            val_fraction: kv.get_or("synth.val_fraction", d.val_fraction)?,
            seed: kv.get_or("synth.seed", d.seed)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthSizes {
    /// Source videos whose instances become queries.
    pub query_videos: usize,
    /// Source videos fed to reference construction.
    pub reference_videos: usize,
}

/// The per-class prototypes and the background prototype.
#[derive(Debug, Clone, PartialEq)]
pub struct Prototypes {
    pub classes: Vec<Vec<f64>>,
    pub background: Vec<f64>,
}

pub fn draw_prototypes(config: &SynthConfig) -> Prototypes {
    let mut rng = seeded_rng(derive_seed(config.seed, 0x5052_4f54));
    let normal = Normal::new(0.0, config.sigma_proto).expect("validated sigma");
    let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..config.channels).map(|_| normal.sample(rng)).collect()
    };
    let classes = (0..config.num_classes).map(|_| draw(&mut rng)).collect();
    let background = draw(&mut rng);
    Prototypes {
        classes,
        background,
    }
}

/// Generates one single-class source video.
pub fn synth_video(
    config: &SynthConfig,
    protos: &Prototypes,
    video_id: &str,
    class_id: ClassId,
    seed: u64,
) -> Result<AnnotatedVideo> {
    let mut rng = seeded_rng(seed);
    let len = rng.gen_range(config.video_snippets.0..=config.video_snippets.1);
    let mut k = rng.gen_range(config.instances_per_video.0..=config.instances_per_video.1);
    let mut lens: Vec<usize> = (0..k)
        .map(|_| rng.gen_range(config.instance_snippets.0..=config.instance_snippets.1))
        .collect();
    while k > 1 && lens.iter().sum::<usize>() + 1 > len {
        lens.pop();
        k -= 1;
    }
    lens[0] = lens[0].min(len - 1);
    let background = len - lens.iter().sum::<usize>();
    let mut cuts: Vec<usize> = (0..k).map(|_| rng.gen_range(0..=background)).collect();
    cuts.sort_unstable();

    let dt = 1.0 / config.snippets_per_second;
    let mut label = vec![None; len];
    let mut instances = Vec::with_capacity(k);
    let mut pos = 0;
    let mut prev_cut = 0;
    for (j, &l) in lens.iter().enumerate() {
        pos += cuts[j] - prev_cut;
        prev_cut = cuts[j];
        for slot in &mut label[pos..pos + l] {
            *slot = Some(class_id);
        }
        instances.push(TemporalInstance::new(
            class_id,
            pos as f64 * dt,
            (pos + l) as f64 * dt,
        ));
        pos += l;
    }

    let inst_noise = Normal::new(0.0, config.sigma_inst.max(0.0)).expect("validated sigma");
    let bg_noise = Normal::new(0.0, config.sigma_bg).expect("validated sigma");
    let mut data = vec![0f32; config.channels * len];
    for (t, lab) in label.iter().enumerate() {
        for c in 0..config.channels {
            let v = match lab {
                Some(cls) => {
                    let mu = protos.classes[*cls as usize][c];
                    if config.sigma_inst > 0.0 {
                        mu + inst_noise.sample(&mut rng)
                    } else {
                        mu
                    }
                }
                None => protos.background[c] + bg_noise.sample(&mut rng),
            };
            data[c * len + t] = v as f32;
        }
    }
    let duration = (len as f64 * dt) as f32;
    let features = FeatureSequence::new(video_id, config.channels, len, duration, data)?;
    Ok(AnnotatedVideo::new(features, instances))
}

/// Generates `count` single-class source videos with classes spread evenly; `stream` separates
/// independent draws from the same seed.
pub fn synth_sources(
    config: &SynthConfig,
    protos: &Prototypes,
    prefix: &str,
    count: usize,
    stream: u64,
) -> Result<Vec<AnnotatedVideo>> {
    let mut class_rng = seeded_rng(derive_seed(config.seed, stream));
    let mut classes: Vec<ClassId> = (0..count)
        .map(|i| (i % config.num_classes) as ClassId)
        .collect();
    rand::seq::SliceRandom::shuffle(classes.as_mut_slice(), &mut class_rng);
    classes
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let seed = derive_seed(derive_seed(config.seed, stream), i as u64 + 1);
            synth_video(config, protos, &format!("{prefix}_{i:04}"), c, seed)
        })
        .collect()
}

/// Generates query clips (from V1) and references (V2 through reference construction).
pub fn synth_generate(config: &SynthConfig, sizes: SynthSizes) -> Result<Corpus> {
    config.validate()?;
    let protos = draw_prototypes(config);
    let v1 = synth_sources(config, &protos, "v1", sizes.query_videos, 1)?;
    let v2 = synth_sources(config, &protos, "v2", sizes.reference_videos, 2)?;
    let classes: BTreeSet<ClassId> = (0..config.num_classes as ClassId).collect();
    let split = ClassSplit::proportional(&classes, config.train_fraction, config.val_fraction)?;
    build_corpus(&v1, &v2, split, derive_seed(config.seed, 3))
}
