use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Stratified fold assignment over a fixed subject list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub k: usize,
    pub seed: u64,
    pub labeled_fraction: f64,
    pub ids: Vec<String>,
    pub labels: Vec<Option<u8>>,
    /// Fold index for each subject, aligned with `ids`.
    pub folds: Vec<usize>,
}

/// Subject indices for one cross-validation round.
///
/// The held-out fold is halved into validation and test, so five folds give
/// the 80/10/10 fine-tune/validation/test proportions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub fold: usize,
    /// Every non-held-out subject; the unlabeled pool for self-supervision.
    pub finetune: Vec<usize>,
    /// Subjects of `finetune` whose labels may be used for training.
    pub labeled: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl FoldSplit {
    /// Every subject a training phase is allowed to read.
    pub fn training_pool(&self) -> &[usize] {
        &self.finetune
    }

    pub fn assert_hygiene(&self) {
        for t in &self.test {
            assert!(!self.finetune.contains(t), "test subject {t} in fine-tune pool");
            assert!(!self.validation.contains(t), "test subject {t} in validation");
        }
        for l in &self.labeled {
            assert!(self.finetune.contains(l), "labeled subject {l} outside fine-tune pool");
        }
    }
}

/// Stratified `k`-fold assignment, deterministic under `seed`.
pub fn split_kfold(
    ids: &[String],
    labels: &[Option<u8>],
    k: usize,
    seed: u64,
    labeled_fraction: f64,
) -> Result<SplitSpec> {
    if k < 2 {
        return Err(Error::Split(format!("need k >= 2 folds, got {k}")));
    }
    if ids.len() != labels.len() {
        return Err(Error::Split("ids and labels differ in length".into()));
    }
    if !(labeled_fraction > 0.0 && labeled_fraction <= 1.0) {
        return Err(Error::Split(format!(
            "labeled fraction {labeled_fraction} outside (0, 1]"
        )));
    }
    let mut groups: [Vec<usize>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for (i, l) in labels.iter().enumerate() {
        match l {
            Some(c @ (0 | 1)) => groups[*c as usize].push(i),
            Some(other) => return Err(Error::Split(format!("label {other} is not 0 or 1"))),
            None => groups[2].push(i),
        }
    }
    for (c, members) in groups.iter().take(2).enumerate() {
        if members.len() < k {
            return Err(Error::Split(format!(
                "class {c} has {} labeled subjects, fewer than k = {k}",
                members.len()
            )));
        }
    }
    let rng = RngStream::new(seed);
    let mut folds = vec![0; ids.len()];
    let mut position = 0;
    for (tag, group) in groups.iter_mut().enumerate() {
        rng.split(tag as u64).shuffle(group);
        for &i in group.iter() {
            folds[i] = position % k;
            position += 1;
        }
    }
    Ok(SplitSpec {
        k,
        seed,
        labeled_fraction,
        ids: ids.to_vec(),
        labels: labels.to_vec(),
        folds,
    })
}

impl SplitSpec {
    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        self.folds.iter().for_each(|&f| sizes[f] += 1);
        sizes
    }

    /// Fine-tune/validation/test partition with fold `f` held out.
    pub fn fold(&self, f: usize) -> Result<FoldSplit> {
        if f >= self.k {
            return Err(Error::Split(format!("fold {f} outside 0..{}", self.k)));
        }
        let rng = RngStream::new(self.seed).split(1000 + f as u64);
        let mut validation = Vec::new();
        let mut test = Vec::new();
        let mut finetune = Vec::new();
        let mut held: [Vec<usize>; 3] = [Vec::new(), Vec::new(), Vec::new()];
        for (i, &fi) in self.folds.iter().enumerate() {
            let class = match self.labels[i] {
                Some(c) => c as usize,
                None => 2,
            };
            if fi == f {
                held[class].push(i);
            } else {
                finetune.push(i);
            }
        }
        // alternate within each class so both halves stay stratified
        let mut turn = 0;
        for group in held.iter().take(2) {
            for &i in group {
                if turn % 2 == 0 {
                    test.push(i);
                } else {
                    validation.push(i);
                }
                turn += 1;
            }
        }
        test.sort_unstable();
        validation.sort_unstable();

        let mut labeled = Vec::new();
        for c in 0..2u8 {
            let mut members: Vec<usize> = finetune
                .iter()
                .copied()
                .filter(|&i| self.labels[i] == Some(c))
                .collect();
            rng.split(c as u64).shuffle(&mut members);
            let take = ((self.labeled_fraction * members.len() as f64).round() as usize)
                .clamp(1, members.len());
            labeled.extend_from_slice(&members[..take]);
        }
        labeled.sort_unstable();
        Ok(FoldSplit {
            fold: f,
            finetune,
            labeled,
            validation,
            test,
        })
    }
}
