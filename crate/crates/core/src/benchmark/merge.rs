//! Multi-action reference construction by inserting supplement segments into a base video.

use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::Rng;

use crate::data::{validate_annotations, AnnotatedVideo, FeatureSequence, TemporalInstance};
use crate::error::{Error, Result};

/// Context kept around an inserted instance, in seconds, when the supplement has background there.
pub const DEFAULT_CONTEXT_MARGIN_SEC: f64 = 1.0;

const EPS: f64 = 1e-9;

/// A segment cut out of a supplement video, with instance times relative to the segment start.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub features: FeatureSequence,
    pub instances: Vec<TemporalInstance>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergeOutcome {
    pub video: AnnotatedVideo,
    /// Number of supplements that contributed at least one segment.
    pub merged_supplements: usize,
    /// One message per supplement that could not be inserted.
    pub failures: Vec<String>,
}

/// Cuts the snippet-aligned segment holding instance `index`, widened by up to `margin` seconds of
/// context on each side without reaching into neighbouring instances.
pub fn cut_segment(video: &AnnotatedVideo, index: usize, margin: f64) -> Result<Segment> {
    let inst = *video
        .instances
        .get(index)
        .ok_or_else(|| Error::InvalidArgument(format!("no instance {index}")))?;
    let seq = &video.features;
    let dt = seq.snippet_duration();
    let mut left = (inst.t_start - margin).max(0.0);
    let mut right = (inst.t_end + margin).min(seq.duration_sec());
    for (j, other) in video.instances.iter().enumerate() {
        if j == index {
            continue;
        }
        if other.t_end <= inst.t_start + EPS {
            left = left.max(other.t_end);
        }
        if other.t_start >= inst.t_end - EPS {
            right = right.min(other.t_start);
        }
    }
    let a = ((left / dt) - EPS).ceil() as usize;
    let a = a.min(((inst.t_start / dt) + EPS).floor() as usize);
    let b = ((right / dt) + EPS).floor() as usize;
    let b = b.max(((inst.t_end / dt) - EPS).ceil() as usize).min(seq.len());
    if b <= a {
        return Err(Error::InvalidArgument(format!(
            "instance {index} of {} maps to no snippets",
            video.video_id()
        )));
    }
    let offset = a as f64 * dt;
    let seg_end = b as f64 * dt;
    let features = seq.slice(format!("{}[{a}:{b}]", video.video_id()), a, b)?;
    let instances = video
        .instances
        .iter()
        .filter(|o| o.t_start >= offset - EPS && o.t_end <= seg_end + EPS)
        .map(|o| {
            TemporalInstance::new(
                o.class_id,
                (o.t_start - offset).max(0.0),
                (o.t_end - offset).min(features.duration_sec()),
            )
        })
        .collect();
    Ok(Segment {
        features,
        instances,
    })
}

fn snippet_is_background(video: &AnnotatedVideo, k: usize, dt: f64) -> bool {
    let (a, b) = (k as f64 * dt, (k + 1) as f64 * dt);
    video
        .instances
        .iter()
        .all(|i| i.t_end <= a + EPS || i.t_start >= b - EPS)
}

/// Snippet boundaries at which a segment may be inserted: outside every instance and adjacent to
/// at least one background snippet.
pub fn background_insertion_points(video: &AnnotatedVideo) -> Vec<usize> {
    let dt = video.features.snippet_duration();
    let len = video.features.len();
    (0..=len)
        .filter(|&j| {
            let t = j as f64 * dt;
            let inside = video
                .instances
                .iter()
                .any(|i| i.t_start + EPS < t && t < i.t_end - EPS);
            if inside {
                return false;
            }
            let before = j > 0 && snippet_is_background(video, j - 1, dt);
            let after = j < len && snippet_is_background(video, j, dt);
            before || after
        })
        .collect()
}

/// Inserts `segment` before snippet `at` of `video`, shifting later annotations.
pub fn insert_segment(video: &AnnotatedVideo, segment: &Segment, at: usize) -> Result<AnnotatedVideo> {
    let seq = &video.features;
    let dt = seq.snippet_duration();
    let seg_dt = segment.features.snippet_duration();
    if (dt - seg_dt).abs() > 1e-4 * dt {
        return Err(Error::Data(format!(
            "snippet duration mismatch: {dt} s vs {seg_dt} s"
        )));
    }
    if at > seq.len() {
        return Err(Error::InvalidArgument(format!(
            "insertion point {at} beyond length {}",
            seq.len()
        )));
    }
    let t = at as f64 * dt;
    let shift = segment.features.duration_sec();
    let mut parts = Vec::with_capacity(3);
    let head;
    let tail;
    if at > 0 {
        head = seq.slice("head", 0, at)?;
        parts.push(&head);
    }
    parts.push(&segment.features);
    if at < seq.len() {
        tail = seq.slice("tail", at, seq.len())?;
        parts.push(&tail);
    }
    let features = FeatureSequence::concat(seq.video_id.clone(), &parts)?;
    let mut instances = Vec::with_capacity(video.instances.len() + segment.instances.len());
    for inst in &video.instances {
        if inst.t_end <= t + EPS {
            instances.push(*inst);
        } else if inst.t_start >= t - EPS {
            instances.push(TemporalInstance::new(
                inst.class_id,
                inst.t_start + shift,
                inst.t_end + shift,
            ));
        } else {
            return Err(Error::InvalidArgument(format!(
                "insertion point {t} s falls inside an instance"
            )));
        }
    }
    instances.extend(
        segment
            .instances
            .iter()
            .map(|i| TemporalInstance::new(i.class_id, i.t_start + t, i.t_end + t)),
    );
    let mut merged = AnnotatedVideo::new(features, instances);
    merged.sort_instances();
    Ok(merged)
}

/// Inserts one or more instance segments from each supplement into `base` at random background
/// timestamps.
pub fn merge_videos<R: Rng + ?Sized>(
    base: &AnnotatedVideo,
    supplements: &[&AnnotatedVideo],
    rng: &mut R,
) -> Result<MergeOutcome> {
    merge_videos_with_margin(base, supplements, DEFAULT_CONTEXT_MARGIN_SEC, rng)
}

pub fn merge_videos_with_margin<R: Rng + ?Sized>(
    base: &AnnotatedVideo,
    supplements: &[&AnnotatedVideo],
    margin: f64,
    rng: &mut R,
) -> Result<MergeOutcome> {
    let mut seen: BTreeSet<_> = base.classes();
    for sup in supplements {
        if sup.instances.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "supplement {} has no instances",
                sup.video_id()
            )));
        }
        let classes = sup.classes();
        if !seen.is_disjoint(&classes) {
            return Err(Error::InvalidArgument(format!(
                "supplement {} shares class labels with the base or another supplement",
                sup.video_id()
            )));
        }
        seen.extend(classes);
    }

    let mut current = base.clone();
    let mut merged_supplements = 0;
    let mut failures = Vec::new();
    let mut ids = vec![base.video_id().to_string()];
    for sup in supplements {
        let n = sup.instances.len();
        let k = rng.gen_range(1..=n);
        let mut chosen = sample(rng, n, k).into_vec();
        chosen.sort_unstable();
        let mut inserted = 0;
        for idx in chosen {
            let segment = cut_segment(sup, idx, margin)?;
            let points = background_insertion_points(&current);
            if points.is_empty() {
                failures.push(format!(
                    "no background insertion point in {} for a segment of {}",
                    base.video_id(),
                    sup.video_id()
                ));
                break;
            }
            let at = points[rng.gen_range(0..points.len())];
            current = insert_segment(&current, &segment, at)?;
            inserted += 1;
        }
        if inserted > 0 {
            merged_supplements += 1;
            ids.push(sup.video_id().to_string());
        }
    }
    current.features.video_id = ids.join("+");
    debug_assert!(validate_annotations(&current).is_empty());
    Ok(MergeOutcome {
        video: current,
        merged_supplements,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::seeded_rng;

    fn video(id: &str, secs: usize, instances: Vec<TemporalInstance>) -> AnnotatedVideo {
        let data = (0..secs).map(|v| v as f32).collect();
        AnnotatedVideo::new(
            FeatureSequence::new(id, 1, secs, secs as f32, data).unwrap(),
            instances,
        )
    }

    #[test]
    fn insertion_shifts_later_annotations() {
        let base = video("b", 10, vec![TemporalInstance::new(1, 2.0, 4.0)]);
        let sup = video("s", 3, vec![TemporalInstance::new(7, 0.0, 3.0)]);
        let seg = cut_segment(&sup, 0, 1.0).unwrap();
        assert_eq!(seg.features.len(), 3);
        let merged = insert_segment(&base, &seg, 6).unwrap();
        assert_eq!(merged.duration_sec(), 13.0);
        assert_eq!(
            merged.instances,
            vec![
                TemporalInstance::new(1, 2.0, 4.0),
                TemporalInstance::new(7, 6.0, 9.0)
            ]
        );
        assert!(validate_annotations(&merged).is_empty());
        assert_eq!(merged.features.data()[6..9], [0.0, 1.0, 2.0]);
        assert_eq!(merged.features.data()[9], 6.0);
    }

    #[test]
    fn cut_keeps_context_up_to_neighbours() {
        let sup = video(
            "s",
            20,
            vec![
                TemporalInstance::new(7, 2.0, 5.0),
                TemporalInstance::new(7, 5.5, 9.0),
                TemporalInstance::new(7, 15.0, 16.0),
            ],
        );
        let seg = cut_segment(&sup, 1, 1.0).unwrap();
        // left context stops at the previous instance's end
        assert_eq!(seg.features.data()[0], 5.0);
        assert_eq!(seg.features.len(), 5);
        let seg = cut_segment(&sup, 2, 1.0).unwrap();
        assert_eq!(seg.features.len(), 3);
        assert_eq!(seg.instances, vec![TemporalInstance::new(7, 1.0, 2.0)]);
    }

    #[test]
    fn empty_base_receives_supplement_instances() {
        let base = video("b", 8, vec![]);
        let sup = video("s", 6, vec![TemporalInstance::new(7, 1.0, 4.0)]);
        let out = merge_videos(&base, &[&sup], &mut seeded_rng(3)).unwrap();
        assert_eq!(out.merged_supplements, 1);
        assert_eq!(out.video.instances.len(), 1);
        let inst = out.video.instances[0];
        assert_eq!(inst.class_id, 7);
        assert!((inst.duration() - 3.0).abs() < 1e-9);
    }

    #[test]
    fn shared_class_rejected() {
        let base = video("b", 8, vec![TemporalInstance::new(1, 1.0, 2.0)]);
        let sup = video("s", 6, vec![TemporalInstance::new(1, 1.0, 4.0)]);
        assert!(merge_videos(&base, &[&sup], &mut seeded_rng(0)).is_err());
    }

    #[test]
    fn fully_covered_base_reports_failure() {
        let base = video("b", 4, vec![TemporalInstance::new(1, 0.0, 4.0)]);
        assert!(background_insertion_points(&base).is_empty());
        let sup = video("s", 6, vec![TemporalInstance::new(2, 1.0, 4.0)]);
        let out = merge_videos(&base, &[&sup], &mut seeded_rng(0)).unwrap();
        assert_eq!(out.merged_supplements, 0);
        assert_eq!(out.failures.len(), 1);
        assert_eq!(out.video.instances, base.instances);
    }

    #[test]
    fn insertion_points_avoid_instances() {
        let base = video("b", 6, vec![TemporalInstance::new(1, 2.0, 4.0)]);
        assert_eq!(background_insertion_points(&base), vec![0, 1, 2, 4, 5, 6]);
    }
}
