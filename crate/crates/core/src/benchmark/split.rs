use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::data::ClassId;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuerySet {
    Train,
    Val,
    Test,
}

impl QuerySet {
    pub const ALL: [QuerySet; 3] = [QuerySet::Train, QuerySet::Val, QuerySet::Test];

    pub fn as_str(&self) -> &'static str {
        match self {
            QuerySet::Train => "train",
            QuerySet::Val => "val",
            QuerySet::Test => "test",
        }
    }
}

impl std::str::FromStr for QuerySet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(QuerySet::Train),
            "val" => Ok(QuerySet::Val),
            "test" => Ok(QuerySet::Test),
            other => Err(Error::Config(format!("unknown query set {other:?}"))),
        }
    }
}

/// Disjoint train / validation / test class sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSplit {
    pub train: BTreeSet<ClassId>,
    pub val: BTreeSet<ClassId>,
    pub test: BTreeSet<ClassId>,
}

impl ClassSplit {
    pub fn new(
        train: BTreeSet<ClassId>,
        val: BTreeSet<ClassId>,
        test: BTreeSet<ClassId>,
    ) -> Result<Self> {
        if !train.is_disjoint(&val) || !train.is_disjoint(&test) || !val.is_disjoint(&test) {
            return Err(Error::InvalidArgument(
                "class split sets must be pairwise disjoint".into(),
            ));
        }
        Ok(Self { train, val, test })
    }

    /// Assigns the first `train_frac` of the sorted classes to training, the next `val_frac` to
    /// validation and the rest to testing. 200 classes with (0.8, 0.1) gives 160/20/20.
    pub fn proportional(classes: &BTreeSet<ClassId>, train_frac: f64, val_frac: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&train_frac)
            || !(0.0..=1.0).contains(&val_frac)
            || train_frac + val_frac > 1.0 + 1e-12
        {
            return Err(Error::InvalidArgument(format!(
                "invalid split fractions train={train_frac} val={val_frac}"
            )));
        }
        let n = classes.len();
        let n_train = ((n as f64) * train_frac).round() as usize;
        let n_val = (((n as f64) * val_frac).round() as usize).min(n - n_train);
        let sorted: Vec<ClassId> = classes.iter().copied().collect();
        Self::new(
            sorted[..n_train].iter().copied().collect(),
            sorted[n_train..n_train + n_val].iter().copied().collect(),
            sorted[n_train + n_val..].iter().copied().collect(),
        )
    }

    pub fn set_of(&self, class_id: ClassId) -> Option<QuerySet> {
        if self.train.contains(&class_id) {
            Some(QuerySet::Train)
        } else if self.val.contains(&class_id) {
            Some(QuerySet::Val)
        } else if self.test.contains(&class_id) {
            Some(QuerySet::Test)
        } else {
            None
        }
    }

    pub fn classes(&self, set: QuerySet) -> &BTreeSet<ClassId> {
        match set {
            QuerySet::Train => &self.train,
            QuerySet::Val => &self.val,
            QuerySet::Test => &self.test,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_proportions_on_200_classes() {
        let classes = (0..200).collect();
        let split = ClassSplit::proportional(&classes, 0.8, 0.1).unwrap();
        assert_eq!(
            (split.train.len(), split.val.len(), split.test.len()),
            (160, 20, 20)
        );
        assert_eq!(split.train.iter().next_back(), Some(&159));
        assert_eq!(split.set_of(170), Some(QuerySet::Val));
        assert_eq!(split.set_of(199), Some(QuerySet::Test));
    }

    #[test]
    fn overlapping_sets_rejected() {
        let a: BTreeSet<_> = [1, 2].into();
        let b: BTreeSet<_> = [2].into();
        assert!(ClassSplit::new(a, b, BTreeSet::new()).is_err());
    }
}
