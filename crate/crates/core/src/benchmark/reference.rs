use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::merge::merge_videos;
use crate::data::{validate_annotations, AnnotatedVideo};
use crate::error::{Error, Result};
use crate::nn::{derive_seed, seeded_rng};

/// Attempts at drawing a class-disjoint supplement before falling back to an unchanged video.
pub const DEFAULT_MAX_RETRIES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceKind {
    Unchanged,
    TwoSource,
    ThreeSource,
}

impl ReferenceKind {
    fn from_sources(n: usize) -> Self {
        match n {
            0 => ReferenceKind::Unchanged,
            1 => ReferenceKind::TwoSource,
            _ => ReferenceKind::ThreeSource,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceVideo {
    pub video: AnnotatedVideo,
    pub kind: ReferenceKind,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReferenceSet {
    pub videos: Vec<ReferenceVideo>,
    pub warnings: Vec<String>,
}

impl ReferenceSet {
    pub fn count(&self, kind: ReferenceKind) -> usize {
        self.videos.iter().filter(|v| v.kind == kind).count()
    }
}

/// Splits `n` into (unchanged, two-source, three-source) counts: ⌈n/3⌉, ⌊n/3⌋ and the rest.
pub fn reference_mix(n: usize) -> (usize, usize, usize) {
    let unchanged = n.div_ceil(3);
    let two = n / 3;
    (unchanged, two, n - unchanged - two)
}

/// Builds the reference gallery: a third of the videos pass through unchanged, the rest serve as
/// bases for two- and three-source merges. Supplements are drawn from the whole input, excluding
/// the base, and must be class-disjoint from the base and from each other.
pub fn build_reference_set<R: Rng + ?Sized>(
    videos: &[AnnotatedVideo],
    rng: &mut R,
) -> Result<ReferenceSet> {
    build_reference_set_with_retries(videos, DEFAULT_MAX_RETRIES, rng)
}

pub fn build_reference_set_with_retries<R: Rng + ?Sized>(
    videos: &[AnnotatedVideo],
    max_retries: usize,
    rng: &mut R,
) -> Result<ReferenceSet> {
    let n = videos.len();
    if n < 3 {
        return Err(Error::InvalidArgument(format!(
            "reference construction needs at least 3 videos, got {n}"
        )));
    }
    let (n_unchanged, n_two, _) = reference_mix(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let root_seed: u64 = rng.gen();
    let (unchanged, pool) = order.split_at(n_unchanged);

    let mut out = ReferenceSet::default();
    for &i in unchanged {
        out.videos.push(ReferenceVideo {
            video: videos[i].clone(),
            kind: ReferenceKind::Unchanged,
        });
    }
    for (slot, &base_idx) in pool.iter().enumerate() {
        let wanted = if slot < n_two { 1 } else { 2 };
        let mut vrng = seeded_rng(derive_seed(root_seed, slot as u64));
        let base = &videos[base_idx];
        let mut used = base.classes();
        let mut chosen: Vec<&AnnotatedVideo> = Vec::with_capacity(wanted);
        for _ in 0..wanted {
            let mut found = None;
            for _ in 0..max_retries {
                let cand = &videos[vrng.gen_range(0..n)];
                if cand.video_id() != base.video_id()
                    && !cand.instances.is_empty()
                    && used.is_disjoint(&cand.classes())
                {
                    found = Some(cand);
                    break;
                }
            }
            match found {
                Some(c) => {
                    used.extend(c.classes());
                    chosen.push(c);
                }
                None => break,
            }
        }
        if chosen.len() < wanted {
            out.warnings.push(format!(
                "{}: found {} of {wanted} class-disjoint supplements after {max_retries} retries, emitted unchanged",
                base.video_id(),
                chosen.len()
            ));
            out.videos.push(ReferenceVideo {
                video: base.clone(),
                kind: ReferenceKind::Unchanged,
            });
            continue;
        }
        let merged = merge_videos(base, &chosen, &mut vrng)?;
        out.warnings.extend(merged.failures);
        let violations = validate_annotations(&merged.video);
        if !violations.is_empty() {
            return Err(Error::Data(format!(
                "merged video {} failed validation: {}",
                merged.video.video_id(),
                violations[0]
            )));
        }
        out.videos.push(ReferenceVideo {
            kind: ReferenceKind::from_sources(merged.merged_supplements),
            video: merged.video,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{FeatureSequence, TemporalInstance};

    fn video(id: &str, class: u32) -> AnnotatedVideo {
        AnnotatedVideo::new(
            FeatureSequence::new(id, 1, 10, 10.0, vec![0.0; 10]).unwrap(),
            vec![TemporalInstance::new(class, 3.0, 6.0)],
        )
    }

    #[test]
    fn mix_counts() {
        assert_eq!(reference_mix(3), (1, 1, 1));
        assert_eq!(reference_mix(300), (100, 100, 100));
        assert_eq!(reference_mix(400), (134, 133, 133));
        assert_eq!(reference_mix(4), (2, 1, 1));
    }

    #[test]
    fn three_disjoint_videos() {
        let vs = vec![video("a", 1), video("b", 2), video("c", 3)];
        let set = build_reference_set(&vs, &mut seeded_rng(1)).unwrap();
        assert_eq!(set.count(ReferenceKind::Unchanged), 1);
        assert_eq!(set.count(ReferenceKind::TwoSource), 1);
        assert_eq!(set.count(ReferenceKind::ThreeSource), 1);
        let three = set
            .videos
            .iter()
            .find(|v| v.kind == ReferenceKind::ThreeSource)
            .unwrap();
        assert_eq!(three.video.classes().len(), 3);
        assert!(set.warnings.is_empty());
    }

    #[test]
    fn single_class_corpus_all_unchanged() {
        let vs: Vec<_> = (0..6).map(|i| video(&format!("v{i}"), 1)).collect();
        let set = build_reference_set(&vs, &mut seeded_rng(1)).unwrap();
        assert_eq!(set.count(ReferenceKind::Unchanged), 6);
        assert_eq!(set.warnings.len(), 4);
    }

    #[test]
    fn deterministic() {
        let vs: Vec<_> = (0..9).map(|i| video(&format!("v{i}"), i)).collect();
        let a = build_reference_set(&vs, &mut seeded_rng(5)).unwrap();
        let b = build_reference_set(&vs, &mut seeded_rng(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn too_few_videos_rejected() {
        let vs = vec![video("a", 1), video("b", 2)];
        assert!(build_reference_set(&vs, &mut seeded_rng(1)).is_err());
    }
}
