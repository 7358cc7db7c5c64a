use super::split::{ClassSplit, QuerySet};
use crate::data::{AnnotatedVideo, ClassId, FeatureSequence};

/// A trimmed query clip cut out of an annotated video.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryClip {
    pub query_id: String,
    pub class_id: ClassId,
    pub set: QuerySet,
    pub features: FeatureSequence,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct QueryExtraction {
    pub train: Vec<QueryClip>,
    pub val: Vec<QueryClip>,
    pub test: Vec<QueryClip>,
    pub warnings: Vec<String>,
}

impl QueryExtraction {
    pub fn set(&self, set: QuerySet) -> &[QueryClip] {
        match set {
            QuerySet::Train => &self.train,
            QuerySet::Val => &self.val,
            QuerySet::Test => &self.test,
        }
    }

    pub fn into_all(self) -> Vec<QueryClip> {
        let mut all = self.train;
        all.extend(self.val);
        all.extend(self.test);
        all
    }
}

/// Snippet range `[start, end)` covering `[t_start, t_end)` seconds, or `None` when the interval
/// is shorter than one snippet.
pub(crate) fn snippet_span(seq: &FeatureSequence, t_start: f64, t_end: f64) -> Option<(usize, usize)> {
    let dt = seq.snippet_duration();
    if t_end - t_start < dt - 1e-9 {
        return None;
    }
    let start = ((t_start / dt) + 1e-9).floor().max(0.0) as usize;
    let end = (((t_end / dt) - 1e-9).ceil() as usize).min(seq.len());
    (end > start).then_some((start, end))
}

/// Cuts every instance of `videos` into a query clip and assigns it to the set of its class.
pub fn extract_query_clips(videos: &[AnnotatedVideo], split: &ClassSplit) -> QueryExtraction {
    let mut out = QueryExtraction::default();
    for video in videos {
        for (k, inst) in video.instances.iter().enumerate() {
            let Some(set) = split.set_of(inst.class_id) else {
                out.warnings.push(format!(
                    "{} instance {k}: class {} not in split, skipped",
                    video.video_id(),
                    inst.class_id
                ));
                continue;
            };
            let Some((a, b)) = snippet_span(&video.features, inst.t_start, inst.t_end) else {
                out.warnings.push(format!(
                    "{} instance {k}: shorter than one snippet, skipped",
                    video.video_id()
                ));
                continue;
            };
            let query_id = format!("q_{}_{k}", video.video_id());
            let features = video
                .features
                .slice(query_id.clone(), a, b)
                .expect("span checked above");
            let clip = QueryClip {
                query_id,
                class_id: inst.class_id,
                set,
                features,
            };
            match set {
                QuerySet::Train => out.train.push(clip),
                QuerySet::Val => out.val.push(clip),
                QuerySet::Test => out.test.push(clip),
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::TemporalInstance;
    use std::collections::BTreeSet;

    fn video(id: &str, instances: Vec<TemporalInstance>) -> AnnotatedVideo {
        let data = (0..20).map(|v| v as f32).collect();
        AnnotatedVideo::new(
            FeatureSequence::new(id, 2, 10, 10.0, data).unwrap(),
            instances,
        )
    }

    fn split() -> ClassSplit {
        ClassSplit::new(
            BTreeSet::from([1, 2]),
            BTreeSet::from([3]),
            BTreeSet::from([4]),
        )
        .unwrap()
    }

    #[test]
    fn single_test_instance() {
        let v = video("a", vec![TemporalInstance::new(4, 2.0, 5.0)]);
        let q = extract_query_clips(&[v], &split());
        assert!(q.train.is_empty() && q.val.is_empty());
        assert_eq!(q.test.len(), 1);
        assert_eq!(q.test[0].features.len(), 3);
        assert_eq!(q.test[0].features.data(), &[2.0, 3.0, 4.0, 12.0, 13.0, 14.0]);
    }

    #[test]
    fn instances_routed_by_class() {
        let v = video(
            "a",
            vec![
                TemporalInstance::new(1, 0.0, 2.0),
                TemporalInstance::new(4, 5.0, 9.0),
            ],
        );
        let q = extract_query_clips(&[v], &split());
        assert_eq!((q.train.len(), q.val.len(), q.test.len()), (1, 0, 1));
    }

    #[test]
    fn sub_snippet_instance_skipped_with_warning() {
        let v = video("a", vec![TemporalInstance::new(1, 2.0, 2.5)]);
        let q = extract_query_clips(&[v], &split());
        assert!(q.train.is_empty());
        assert_eq!(q.warnings.len(), 1);
    }
}
