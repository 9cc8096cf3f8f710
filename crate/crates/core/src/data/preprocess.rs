use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DataError, Dataset, Split};

pub const DEFAULT_MIN_INTERACTIONS: usize = 10;
pub const DEFAULT_RELEVANCE_THRESHOLD: f64 = 3.0;

const TRAIN_SHARE: f64 = 0.7;
const VALIDATION_SHARE: f64 = 0.1;

/// Rescales ratings linearly onto `[0, 5]`, drops users with fewer than
/// `min_interactions` interactions (one pass) and flags relevance as
/// `rating > relevance_threshold` on the new scale.
pub fn preprocess(d: &Dataset, min_interactions: usize, relevance_threshold: f64) -> Result<Dataset, DataError> {
    if d.interactions.is_empty() {
        return Err(DataError::EmptyAfterFiltering);
    }
    let lo = d.interactions.iter().map(|i| i.rating).fold(f64::INFINITY, f64::min);
    let hi = d.interactions.iter().map(|i| i.rating).fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;

    let mut counts = vec![0usize; d.n_users];
    for it in &d.interactions {
        counts[it.user] += 1;
    }
    let mut new_index = vec![None; d.n_users];
    let mut user_ids = Vec::new();
    for (u, &c) in counts.iter().enumerate() {
        if c >= min_interactions {
            new_index[u] = Some(user_ids.len());
            user_ids.push(d.user_ids[u].clone());
        }
    }
    if user_ids.is_empty() {
        return Err(DataError::EmptyAfterFiltering);
    }

    let mut out = d.clone();
    out.interactions = d
        .interactions
        .iter()
        .filter_map(|it| {
            let user = new_index[it.user]?;
            let rating = if span > 0.0 { (it.rating - lo) / span * 5.0 } else { 5.0 };
            let mut it = it.clone();
            it.user = user;
            it.rating = rating;
            it.relevant = rating > relevance_threshold;
            Some(it)
        })
        .collect();
    out.n_users = user_ids.len();
    out.user_ids = user_ids;
    out.original_rating_range = Some(d.original_rating_range.unwrap_or((lo, hi)));
    Ok(out)
}

/// Per-user stratified 70/10/20 assignment.
///
/// Users are visited in index order and each receives the quota that keeps
/// the running totals at the rounded global proportions, so the overall
/// counts stay within one interaction of 70/10/20. Within a user the
/// interactions receiving each label are chosen by a seeded shuffle. Users
/// with fewer than three interactions keep everything in train.
pub fn split(d: &Dataset, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = d.clone();
    let mut per_user: Vec<Vec<usize>> = vec![Vec::new(); d.n_users];
    for (k, it) in d.interactions.iter().enumerate() {
        per_user[it.user].push(k);
    }

    let (mut seen, mut assigned_train, mut assigned_val) = (0usize, 0usize, 0usize);
    for mut idx in per_user {
        let n = idx.len();
        if n == 0 {
            continue;
        }
        seen += n;
        let (n_train, n_val) = if n < 3 {
            (n, 0)
        } else {
            let want_train = (TRAIN_SHARE * seen as f64).round() as i64 - assigned_train as i64;
            let n_train = want_train.clamp(1, n as i64) as usize;
            let want_val = (VALIDATION_SHARE * seen as f64).round() as i64 - assigned_val as i64;
            let n_val = want_val.clamp(0, (n - n_train) as i64) as usize;
            (n_train, n_val)
        };
        assigned_train += n_train;
        assigned_val += n_val;
        idx.shuffle(&mut rng);
        for (pos, &k) in idx.iter().enumerate() {
            out.interactions[k].split = if pos < n_train {
                Split::Train
            } else if pos < n_train + n_val {
                Split::Validation
            } else {
                Split::Test
            };
        }
    }
    out.split_seed = Some(seed);
    out
}
