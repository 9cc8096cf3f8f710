use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Split};
use crate::nn::{dot, sigmoid, Tensor2};

use super::EnvError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LmfConfig {
    pub k: usize,
    pub epochs: usize,
    pub lr: f64,
    pub reg: f64,
    pub init_scale: f64,
    /// Unobserved items sampled per observed training interaction of a
    /// user, labelled 0.
    pub negative_ratio: f64,
    /// Loss weight of each sampled negative.
    pub negative_weight: f64,
}

impl Default for LmfConfig {
    fn default() -> Self {
        Self { k: 8, epochs: 300, lr: 0.5, reg: 1.0, init_scale: 0.1, negative_ratio: 5.0, negative_weight: 0.2 }
    }
}

/// Click model `σ(x_u·y_i + b_u + b_i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmfModel {
    pub user_factors: Tensor2,
    pub item_factors: Tensor2,
    pub user_bias: Vec<f64>,
    pub item_bias: Vec<f64>,
}

impl LmfModel {
    pub fn n_users(&self) -> usize {
        self.user_factors.rows()
    }

    pub fn n_items(&self) -> usize {
        self.item_factors.rows()
    }

    pub fn k(&self) -> usize {
        self.item_factors.cols()
    }

    pub fn logit(&self, user: usize, item: usize) -> f64 {
        dot(self.user_factors.row(user), self.item_factors.row(item)) + self.user_bias[user] + self.item_bias[item]
    }

    pub fn probability(&self, user: usize, item: usize) -> f64 {
        sigmoid(self.logit(user, item))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LmfFit {
    pub model: LmfModel,
    /// Regularized objective per observation, evaluated before each epoch's
    /// update and once after the last.
    pub loss_curve: Vec<f64>,
}

/// Fits the click model to the relevance flags of the training split by
/// full-batch gradient descent on the regularized logistic loss. Unobserved
/// items are sampled per user as extra negatives (`negative_ratio`). Each
/// row's step is divided by one plus its observation count.
pub fn fit_lmf(ds: &Dataset, cfg: &LmfConfig, seed: u64) -> Result<LmfFit, EnvError> {
    if cfg.k == 0 || !(cfg.lr > 0.0) || !(cfg.reg >= 0.0) || !(cfg.negative_weight > 0.0) {
        return Err(EnvError::InvalidArgument(format!("bad LMF config {:?}", cfg)));
    }
    // (user, item, label, weight)
    let obs: Vec<(usize, usize, f64, f64)> = ds
        .interactions
        .iter()
        .filter(|it| it.split == Split::Train)
        .map(|it| (it.user, it.item, if it.relevant { 1.0 } else { 0.0 }, 1.0))
        .collect();
    if obs.is_empty() {
        return Err(EnvError::InvalidArgument("training split is empty".into()));
    }
    let (nu, ni, k) = (ds.n_users, ds.n_items, cfg.k);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut obs = obs;
    if cfg.negative_ratio > 0.0 {
        let mut seen = vec![Vec::new(); nu];
        for &(u, i, _, _) in &obs {
            seen[u].push(i);
        }
        for (u, items) in seen.iter_mut().enumerate() {
            items.sort_unstable();
            items.dedup();
            let pool: Vec<usize> = (0..ni).filter(|i| items.binary_search(i).is_err()).collect();
            let want = ((cfg.negative_ratio * items.len() as f64).round() as usize).min(pool.len());
            let mut picked: Vec<usize> =
                rand::seq::index::sample(&mut rng, pool.len(), want).into_iter().map(|k| pool[k]).collect();
            picked.sort_unstable();
            obs.extend(picked.into_iter().map(|i| (u, i, 0.0, cfg.negative_weight)));
        }
    }
    let init = Normal::new(0.0, cfg.init_scale).map_err(|e| EnvError::InvalidArgument(e.to_string()))?;
    let mut m = LmfModel {
        user_factors: Tensor2::from_vec(nu, k, (0..nu * k).map(|_| init.sample(&mut rng)).collect()).expect("sized"),
        item_factors: Tensor2::from_vec(ni, k, (0..ni * k).map(|_| init.sample(&mut rng)).collect()).expect("sized"),
        user_bias: vec![0.0; nu],
        item_bias: vec![0.0; ni],
    };
    let mut user_step = vec![1.0; nu];
    let mut item_step = vec![1.0; ni];
    for &(u, i, _, w) in &obs {
        user_step[u] += w;
        item_step[i] += w;
    }
    user_step.iter_mut().chain(item_step.iter_mut()).for_each(|s| *s = cfg.lr / *s);

    let n: f64 = obs.iter().map(|o| o.3).sum();
    let mut loss_curve = Vec::with_capacity(cfg.epochs + 1);
    for epoch in 0..=cfg.epochs {
        let mut gx = Tensor2::zeros(nu, k);
        let mut gy = Tensor2::zeros(ni, k);
        let mut gbu = vec![0.0; nu];
        let mut gbi = vec![0.0; ni];
        let mut loss = 0.0;
        for &(u, i, y, w) in &obs {
            let z = m.logit(u, i);
            // softplus(z) - y z, stable for large |z|
            loss += w * (z.max(0.0) + (-z.abs()).exp().ln_1p() - y * z);
            let e = w * (sigmoid(z) - y);
            for c in 0..k {
                gx.row_mut(u)[c] += e * m.item_factors.get(i, c);
                gy.row_mut(i)[c] += e * m.user_factors.get(u, c);
            }
            gbu[u] += e;
            gbi[i] += e;
        }
        loss += 0.5 * cfg.reg * (m.user_factors.sq_norm() + m.item_factors.sq_norm());
        let loss = loss / n;
        if !loss.is_finite() {
            return Err(EnvError::Diverged { epoch, lr: cfg.lr });
        }
        loss_curve.push(loss);
        if epoch == cfg.epochs {
            break;
        }
        for u in 0..nu {
            for c in 0..k {
                let g = gx.get(u, c) + cfg.reg * m.user_factors.get(u, c);
                m.user_factors.row_mut(u)[c] -= user_step[u] * g;
            }
            m.user_bias[u] -= user_step[u] * gbu[u];
        }
        for i in 0..ni {
            for c in 0..k {
                let g = gy.get(i, c) + cfg.reg * m.item_factors.get(i, c);
                m.item_factors.row_mut(i)[c] -= item_step[i] * g;
            }
            m.item_bias[i] -= item_step[i] * gbi[i];
        }
    }
    Ok(LmfFit { model: m, loss_curve })
}

/// Area under the ROC curve of `probability` against the relevance flags of
/// `split`; ties count one half.
pub fn auc(model: &LmfModel, ds: &Dataset, split: Split) -> Option<f64> {
    let mut scored: Vec<(f64, bool)> = ds
        .interactions
        .iter()
        .filter(|it| it.split == split)
        .map(|it| (model.logit(it.user, it.item), it.relevant))
        .collect();
    let pos = scored.iter().filter(|s| s.1).count() as f64;
    let neg = scored.len() as f64 - pos;
    if pos == 0.0 || neg == 0.0 {
        return None;
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    // rank-sum with average ranks over ties
    let mut rank_sum = 0.0;
    let mut k = 0;
    while k < scored.len() {
        let mut j = k;
        while j + 1 < scored.len() && scored[j + 1].0 == scored[k].0 {
            j += 1;
        }
        let avg_rank = (k + j) as f64 / 2.0 + 1.0;
        rank_sum += avg_rank * scored[k..=j].iter().filter(|s| s.1).count() as f64;
        k = j + 1;
    }
    Some((rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, preprocess, split, Interaction};

    #[test]
    fn single_positive_pair_is_learned() {
        let mut ds = Dataset::empty();
        ds.n_users = 1;
        ds.n_items = 1;
        ds.interactions.push(Interaction {
            user: 0,
            item: 0,
            rating: 5.0,
            timestamp: 0,
            relevant: true,
            split: Split::Train,
        });
        let fit = fit_lmf(&ds, &LmfConfig::default(), 1).unwrap();
        assert!(fit.model.probability(0, 0) > 0.5);
    }

    #[test]
    fn planted_data_loss_nonincreasing_and_auc() {
        let raw = generate_synthetic(50, 200, 4, 0.2, 11).unwrap().dataset;
        let ds = split(&preprocess(&raw, 10, 3.0).unwrap(), 11);
        let fit = fit_lmf(&ds, &LmfConfig::default(), 3).unwrap();
        for (e, w) in fit.loss_curve.windows(2).enumerate().skip(3) {
            assert!(w[1] <= w[0] + 1e-6, "epoch {}: {} -> {}", e + 1, w[0], w[1]);
        }
        let a = auc(&fit.model, &ds, Split::Validation).unwrap();
        assert!(a > 0.75, "validation AUC {}", a);
        assert_eq!(fit, fit_lmf(&ds, &LmfConfig::default(), 3).unwrap());
    }

    #[test]
    fn auc_of_perfect_and_inverted_scores() {
        let mut ds = Dataset::empty();
        ds.n_users = 1;
        ds.n_items = 4;
        for i in 0..4 {
            ds.interactions.push(Interaction {
                user: 0,
                item: i,
                rating: 0.0,
                timestamp: 0,
                relevant: i >= 2,
                split: Split::Test,
            });
        }
        let mut m = LmfModel {
            user_factors: Tensor2::zeros(1, 1),
            item_factors: Tensor2::zeros(4, 1),
            user_bias: vec![0.0],
            item_bias: vec![0.0, 1.0, 2.0, 3.0],
        };
        assert_eq!(auc(&m, &ds, Split::Test), Some(1.0));
        m.item_bias.reverse();
        assert_eq!(auc(&m, &ds, Split::Test), Some(0.0));
        m.item_bias = vec![0.0; 4];
        assert_eq!(auc(&m, &ds, Split::Test), Some(0.5));
    }

    #[test]
    fn divergence_is_reported() {
        let raw = generate_synthetic(20, 60, 2, 0.3, 1).unwrap().dataset;
        let ds = split(&preprocess(&raw, 10, 3.0).unwrap(), 1);
        let cfg = LmfConfig { lr: 1e6, init_scale: 10.0, ..LmfConfig::default() };
        assert!(matches!(fit_lmf(&ds, &cfg, 1), Err(EnvError::Diverged { .. })));
    }
}
