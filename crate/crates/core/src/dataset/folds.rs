use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::ImageSet;
use crate::error::{Error, Result};
use crate::rng;

/// Image-level fold assignment for cross validation.
///
/// A pair belongs to the training side of fold `f` iff neither image is in
/// `f`, and to its test side iff both are. Pairs straddling the boundary are
/// dropped for that fold so train and test never share an image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub n_folds: usize,
    fold_of: Vec<usize>,
}

pub fn make_folds(n_images: usize, n_folds: usize, seed: u64) -> Result<FoldAssignment> {
    if n_folds < 2 || n_folds > n_images {
        return Err(Error::FoldCount { n_folds, n_images });
    }
    let mut order: Vec<usize> = (0..n_images).collect();
    order.shuffle(&mut rng::stream(seed, &[0xf01d]));
    let mut fold_of = vec![0; n_images];
    for (pos, &img) in order.iter().enumerate() {
        fold_of[img] = pos % n_folds;
    }
    Ok(FoldAssignment { n_folds, fold_of })
}

impl FoldAssignment {
    pub fn fold_of(&self, image: usize) -> usize {
        self.fold_of[image]
    }

    pub fn fold_size(&self, fold: usize) -> usize {
        self.fold_of.iter().filter(|&&f| f == fold).count()
    }

    pub fn is_test_pair(&self, fold: usize, i: usize, j: usize) -> bool {
        self.fold_of[i] == fold && self.fold_of[j] == fold
    }

    pub fn is_train_pair(&self, fold: usize, i: usize, j: usize) -> bool {
        self.fold_of[i] != fold && self.fold_of[j] != fold
    }

    pub fn train_images(&self, fold: usize) -> ImageSet {
        ImageSet::from_mask(self.fold_of.iter().map(|&f| f != fold).collect())
    }

    pub fn test_images(&self, fold: usize) -> ImageSet {
        ImageSet::from_mask(self.fold_of.iter().map(|&f| f == fold).collect())
    }
}
