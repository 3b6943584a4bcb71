//! Synthetic item/view datasets.
//!
//! Every item has two views; the positive pairs are `(view 0, view 1)` of
//! each item. Taking both orders of each pair gives a symmetric positive-pair
//! distribution whose marginal is uniform over views.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sphere::{
    normalize_in_place, sample_uniform_point, seeded_rng, FeatureSet, PairedFeatures,
};
use rand_distr::{Distribution, StandardNormal};

pub const VIEWS_PER_ITEM: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDataset {
    pub n_items: usize,
    pub views_per_item: usize,
    pub dim: usize,
    pub labels: Vec<i64>,
    #[serde(default)]
    pub seed: u64,
}

/// One positive pair: both views of `item`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairIndex {
    pub item: usize,
    pub view_left: usize,
    pub view_right: usize,
}

impl SyntheticDataset {
    pub fn validate(&self) -> Result<()> {
        if self.views_per_item != VIEWS_PER_ITEM {
            return Err(Error::InvalidConfig(format!(
                "views_per_item must be {VIEWS_PER_ITEM}, got {}",
                self.views_per_item
            )));
        }
        if self.dim < 2 {
            return Err(Error::InvalidDimension { dim: self.dim });
        }
        if self.n_items == 0 {
            return Err(Error::InvalidConfig("dataset has no items".into()));
        }
        if self.labels.len() != self.n_items {
            return Err(Error::CountMismatch(format!(
                "{} labels for {} items",
                self.labels.len(),
                self.n_items
            )));
        }
        Ok(())
    }

    pub fn pair_index(&self) -> Vec<PairIndex> {
        (0..self.n_items)
            .map(|item| PairIndex {
                item,
                view_left: 0,
                view_right: 1,
            })
            .collect()
    }

    pub fn n_classes(&self) -> usize {
        let mut l = self.labels.clone();
        l.sort_unstable();
        l.dedup();
        l.len()
    }
}

/// `n_classes * items_per_class` items with blockwise labels.
pub fn make_dataset(
    n_classes: usize,
    items_per_class: usize,
    dim: usize,
    seed: u64,
) -> Result<SyntheticDataset> {
    if n_classes < 1 {
        return Err(Error::InvalidConfig("need at least one class".into()));
    }
    if items_per_class < 2 {
        return Err(Error::InvalidConfig(
            "need at least two items per class".into(),
        ));
    }
    if dim < 2 {
        return Err(Error::InvalidConfig(format!(
            "dimension must be >= 2, got {dim}"
        )));
    }
    let labels = (0..n_classes)
        .flat_map(|c| std::iter::repeat_n(c as i64, items_per_class))
        .collect();
    Ok(SyntheticDataset {
        n_items: n_classes * items_per_class,
        views_per_item: VIEWS_PER_ITEM,
        dim,
        labels,
        seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum InitMode {
    /// Every view uniform on the sphere.
    Random,
    /// Each class gets a uniform center; each view is
    /// `normalize(center + noise * N(0, I))`.
    Clustered { noise: f64 },
}

/// Initial embeddings for both views of every item.
pub fn init_embeddings(ds: &SyntheticDataset, mode: InitMode, seed: u64) -> Result<PairedFeatures> {
    ds.validate()?;
    let m = ds.dim;
    let n = ds.n_items;
    let mut rng = seeded_rng(seed);
    let (left, right) = match mode {
        InitMode::Random => {
            let mut l = Vec::with_capacity(n * m);
            let mut r = Vec::with_capacity(n * m);
            for _ in 0..n {
                l.extend(sample_uniform_point(&mut rng, m));
                r.extend(sample_uniform_point(&mut rng, m));
            }
            (l, r)
        }
        InitMode::Clustered { noise } => {
            if !(noise >= 0.0) {
                return Err(Error::InvalidConfig("noise must be >= 0".into()));
            }
            let mut classes: Vec<i64> = ds.labels.clone();
            classes.sort_unstable();
            classes.dedup();
            let centers: Vec<Vec<f64>> = classes
                .iter()
                .map(|_| sample_uniform_point(&mut rng, m))
                .collect();
            let mut views = [Vec::with_capacity(n * m), Vec::with_capacity(n * m)];
            for &label in &ds.labels {
                let c = &centers[classes.binary_search(&label).expect("label present")];
                for side in views.iter_mut() {
                    let mut v: Vec<f64> = c
                        .iter()
                        .map(|ci| {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            ci + noise * z
                        })
                        .collect();
                    if normalize_in_place(&mut v).is_err() {
                        v = c.clone();
                    }
                    side.extend(v);
                }
            }
            let [l, r] = views;
            (l, r)
        }
    };
    PairedFeatures::new(
        FeatureSet::from_flat(left, m)?,
        FeatureSet::from_flat(right, m)?,
    )
}
