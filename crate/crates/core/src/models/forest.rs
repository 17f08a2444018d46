//! Bagged trees with per-split feature subsampling.

use ndarray::{ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{grow, Criterion, FeatureSampler, TreeModel, TreeParams};
use super::{check_training, ModelError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_learners: usize,
    pub max_splits: usize,
    pub predictors_to_sample: usize,
    pub criterion: Criterion,
    pub bootstrap: bool,
    pub seed: u64,
}

impl ForestParams {
    pub fn new(n_learners: usize, max_splits: usize, predictors_to_sample: usize, seed: u64) -> Self {
        ForestParams {
            n_learners,
            max_splits,
            predictors_to_sample,
            criterion: Criterion::Gini,
            bootstrap: true,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub params: ForestParams,
    pub tree_seeds: Vec<u64>,
    pub trees: Vec<TreeModel>,
    pub n_features: usize,
    pub n_classes: usize,
}

impl ForestModel {
    /// Mean of the trees' leaf distributions.
    pub fn predict_proba_row(&self, row: ArrayView1<f64>) -> Vec<f64> {
        let mut acc = vec![0.0; self.n_classes];
        for t in &self.trees {
            for (a, p) in acc.iter_mut().zip(t.leaf_probs(row)) {
                *a += p;
            }
        }
        let n = self.trees.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    }
}

pub fn rf_fit(x: ArrayView2<f64>, y: &[usize], n_classes: usize, params: &ForestParams) -> Result<ForestModel, ModelError> {
    check_training(x, y, n_classes)?;
    let p = x.ncols();
    if params.predictors_to_sample < 1 || params.predictors_to_sample > p {
        return Err(ModelError::BadParam(format!(
            "predictors_to_sample must be in 1..={p}, got {}",
            params.predictors_to_sample
        )));
    }
    if params.n_learners < 1 {
        return Err(ModelError::BadParam("n_learners must be at least 1".into()));
    }
    let mut master = ChaCha8Rng::seed_from_u64(params.seed);
    let tree_seeds: Vec<u64> = (0..params.n_learners).map(|_| master.gen()).collect();
    let tree_params = TreeParams {
        criterion: params.criterion,
        max_splits: params.max_splits,
    };
    let n = x.nrows();
    let trees = tree_seeds
        .par_iter()
        .map(|&seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rows: Vec<usize> = if params.bootstrap {
                (0..n).map(|_| rng.gen_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            let sampler = FeatureSampler {
                m: params.predictors_to_sample,
                rng: &mut rng,
            };
            grow(x, y, rows, n_classes, &tree_params, Some(sampler))
        })
        .collect();
    Ok(ForestModel {
        params: *params,
        tree_seeds,
        trees,
        n_features: p,
        n_classes,
    })
}
