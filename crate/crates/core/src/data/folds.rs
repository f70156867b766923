use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::error::{config_err, Result};
use crate::rng;

use super::scan::base_scan_id;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
    Test,
}

/// One cross-validation fold over original scan ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fold {
    pub test: Vec<String>,
    pub validation: Vec<String>,
    pub train: Vec<String>,
}

impl Fold {
    /// Split of a scan id; rotated variants resolve to their original.
    pub fn split_of(&self, id: &str) -> Option<Split> {
        let base = base_scan_id(id);
        let has = |v: &[String]| v.iter().any(|s| s == base);
        if has(&self.test) {
            Some(Split::Test)
        } else if has(&self.validation) {
            Some(Split::Validation)
        } else if has(&self.train) {
            Some(Split::Train)
        } else {
            None
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldPlan {
    pub k: usize,
    pub folds: Vec<Fold>,
}

/// Partitions the scans into `k` test folds. For each fold, `validation_count`
/// scans are drawn from the other folds and the rest form the training set.
/// Ids are reduced to their originals first, so variants share a split.
pub fn make_folds(scan_ids: &[String], k: usize, validation_count: usize, seed: u64) -> Result<FoldPlan> {
    let mut ids: Vec<String> = scan_ids.iter().map(|s| String::from(base_scan_id(s))).collect();
    ids.sort_unstable();
    ids.dedup();
    let n = ids.len();
    if k < 2 {
        return Err(config_err!("k must be at least 2, got {k}"));
    }
    if k > n {
        return Err(config_err!("k = {k} exceeds the {n} available scans"));
    }
    let smallest_rest = n - n.div_ceil(k);
    if validation_count >= smallest_rest {
        return Err(config_err!(
            "validation_count {validation_count} leaves no training scans (at most {} available outside a test fold)",
            smallest_rest
        ));
    }
    let mut r = rng::rng(seed, &[0xf01d]);
    ids.shuffle(&mut r);
    // fold sizes differ by at most one, larger folds first
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = n / k + usize::from(f < n % k);
        let test: Vec<String> = ids[start..start + size].to_vec();
        let mut rest: Vec<String> = ids[..start].iter().chain(&ids[start + size..]).cloned().collect();
        let mut fr = rng::rng(seed, &[0xf01d, f as u64 + 1]);
        rest.shuffle(&mut fr);
        let mut validation: Vec<String> = rest.drain(..validation_count).collect();
        validation.sort_unstable();
        rest.sort_unstable();
        let mut test_sorted = test;
        test_sorted.sort_unstable();
        folds.push(Fold {
            test: test_sorted,
            validation,
            train: rest,
        });
        start += size;
    }
    Ok(FoldPlan { k, folds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("scan{i:02}")).collect()
    }

    #[test]
    fn five_folds_of_six() {
        let plan = make_folds(&ids(30), 5, 2, 3).unwrap();
        assert_eq!(plan.folds.len(), 5);
        let mut all: Vec<String> = Vec::new();
        for f in &plan.folds {
            assert_eq!(f.test.len(), 6);
            assert_eq!(f.validation.len(), 2);
            assert_eq!(f.train.len(), 22);
            all.extend(f.test.iter().cloned());
        }
        all.sort();
        assert_eq!(all, ids(30));
    }

    #[test]
    fn leave_one_out() {
        let plan = make_folds(&ids(30), 30, 2, 3).unwrap();
        assert!(plan.folds.iter().all(|f| f.test.len() == 1 && f.train.len() == 27));
    }

    #[test]
    fn deterministic_and_seed_dependent() {
        assert_eq!(make_folds(&ids(30), 5, 2, 9).unwrap(), make_folds(&ids(30), 5, 2, 9).unwrap());
        assert_ne!(make_folds(&ids(30), 5, 2, 9).unwrap(), make_folds(&ids(30), 5, 2, 10).unwrap());
    }

    #[test]
    fn variants_follow_originals() {
        let mut all = ids(10);
        all.push(String::from("scan03@rot+20"));
        let plan = make_folds(&all, 5, 1, 1).unwrap();
        for f in &plan.folds {
            assert_eq!(f.split_of("scan03@rot+20"), f.split_of("scan03"));
        }
    }

    #[test]
    fn too_many_folds() {
        assert!(make_folds(&ids(4), 5, 1, 0).is_err());
        assert!(make_folds(&ids(4), 2, 2, 0).is_err());
    }
}
