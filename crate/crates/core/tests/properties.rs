mod common;

use std::collections::{BTreeMap, HashSet};
use std::sync::OnceLock;

use kgrl_core::agent::{encode_state, resolve_item, Agent, AgentConfig, ItemInit, Variant};
use kgrl_core::data::{generate_synthetic, preprocess, split, Dataset};
use kgrl_core::env::{EnvConfig, Environment, EpisodeState, LmfModel, Transition};
use kgrl_core::eval::{ndcg_at_k, precision_at_k, recall_at_k, RankedList};
use kgrl_core::nn::{ParamStore, Tape, Tensor2};
use kgrl_core::training::{lkg_loss, soft_update, ReplayBuffer, PREDICTION_CLAMP};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn env() -> &'static (Dataset, LmfModel, Environment) {
    static ENV: OnceLock<(Dataset, LmfModel, Environment)> = OnceLock::new();
    ENV.get_or_init(|| common::planted_env(20, 60, 2, 60))
}

fn embeddings(n: usize, d: usize, seed: u64) -> Tensor2 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor2::from_vec(n, d, (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn transition(k: usize) -> Transition {
    let s = EpisodeState::new(0, vec![k]);
    Transition { state: s.clone(), action: vec![k as f64], item: k, reward: 0.0, next_state: s, terminal: false }
}

/// Ranked list and relevant set drawn from a small item universe.
fn ranked_case() -> impl Strategy<Value = (Vec<usize>, Vec<usize>, usize)> {
    (1usize..=10, prop::collection::hash_set(0usize..30, 0..12)).prop_flat_map(|(k, relevant)| {
        let relevant: Vec<usize> = relevant.into_iter().collect();
        (Just((0..30).collect::<Vec<usize>>()).prop_shuffle(), Just(relevant), Just(k))
            .prop_map(|(perm, rel, k)| (perm[..k + 3].to_vec(), rel, k))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn preprocess_and_split_invariants(
        users in 5usize..30,
        items in 20usize..60,
        density in 0.1f64..0.5,
        min in 1usize..15,
        seed in 0u64..1000,
    ) {
        let raw = generate_synthetic(users, items, 3, density, seed).unwrap().dataset;
        let Ok(ds) = preprocess(&raw, min, 3.0) else {
            return Ok(());
        };
        let mut counts = vec![0usize; ds.n_users];
        for it in &ds.interactions {
            counts[it.user] += 1;
            prop_assert!((0.0..=5.0).contains(&it.rating));
            prop_assert_eq!(it.relevant, it.rating > 3.0);
        }
        prop_assert!(counts.iter().all(|&c| c >= min));
        let ids: HashSet<&String> = ds.user_ids.iter().collect();
        prop_assert_eq!(ids.len(), ds.n_users);
        let mut raw_counts: BTreeMap<&String, usize> = BTreeMap::new();
        for it in &raw.interactions {
            *raw_counts.entry(&raw.user_ids[it.user]).or_default() += 1;
        }
        let kept: HashSet<&String> = raw_counts.iter().filter(|(_, &c)| c >= min).map(|(id, _)| *id).collect();
        prop_assert_eq!(kept, ids);

        let parts = split(&ds, seed);
        let key = |d: &Dataset| {
            let mut v: Vec<(usize, usize, i64)> = d.interactions.iter().map(|i| (i.user, i.item, i.timestamp)).collect();
            v.sort_unstable();
            v
        };
        prop_assert_eq!(key(&parts), key(&ds));
        prop_assert_eq!(parts.split_counts().iter().sum::<usize>(), ds.interactions.len());
    }

    #[test]
    fn softmax_rows_are_distributions(vals in prop::collection::vec(-30.0f64..30.0, 12)) {
        let mut tape = Tape::new();
        let x = tape.input(Tensor2::from_vec(3, 4, vals).unwrap());
        let y = tape.softmax_rows(x);
        let out = tape.value(y);
        for r in 0..3 {
            prop_assert!((out.row(r).iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            prop_assert!(out.row(r).iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn resolve_is_scale_equivariant_and_brute_force_argmax(
        seed in 0u64..1000,
        c in 1e-3f64..1e3,
        mask in prop::collection::vec(any::<bool>(), 15),
    ) {
        let e = embeddings(15, 4, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        let a: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let scaled: Vec<f64> = a.iter().map(|x| x * c).collect();
        let got = resolve_item(&a, &mask, &e);
        if mask.iter().all(|m| !m) {
            prop_assert!(got.is_err());
            return Ok(());
        }
        let got = got.unwrap();
        prop_assert_eq!(resolve_item(&scaled, &mask, &e).unwrap(), got);
        let score = |i: usize| (0..4).map(|k| a[k] * e.get(i, k)).sum::<f64>();
        let best = (0..15).filter(|&i| mask[i]).map(score).fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(mask[got]);
        prop_assert_eq!(score(got), best);
    }

    #[test]
    fn encoding_shape_and_noiseless_determinism(len in 1usize..=5, seed in 0u64..1000, ma in any::<bool>()) {
        let variant = if ma { Variant::MA } else { Variant::M };
        let cfg = AgentConfig { item_init: ItemInit::Random, variant, ..AgentConfig::default() };
        let agent = Agent::new(cfg, 2, 12, 5, None, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let state = EpisodeState::new(0, (0..len).map(|_| rng.random_range(0..12)).collect());
        let s = encode_state(&agent.actor, variant, &state).unwrap();
        prop_assert_eq!(s.len(), agent.cfg.dim);
        let a1 = agent.act(&state, 0.0, &mut rng).unwrap();
        let a2 = agent.act(&state, 0.0, &mut rng).unwrap();
        prop_assert_eq!(&a1, &a2);
        let all = vec![true; 12];
        prop_assert_eq!(agent.resolve(&a1, &all).unwrap(), agent.resolve(&a2, &all).unwrap());
    }

    #[test]
    fn episodes_respect_window_rewards_and_length(user in 0usize..20, seed in 0u64..1000) {
        let (_, _, env) = env();
        let cfg = EnvConfig::default();
        if env.train_relevant(user).is_empty() {
            return Ok(());
        }
        let run = |seed: u64| {
            let mut ep = env.reset(user, seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut trace = Vec::new();
            while !ep.is_terminal() {
                let free: Vec<usize> = (0..env.n_items()).filter(|&i| ep.available()[i]).collect();
                let item = free[rng.random_range(0..free.len())];
                let out = env.step(&mut ep, item).unwrap();
                trace.push((item, out.reward.to_bits(), out.next_state.items.clone(), out.exhausted));
            }
            trace
        };
        let trace = run(seed);
        for (_, r, state, _) in &trace {
            let r = f64::from_bits(*r);
            prop_assert!((0.0..=cfg.r_max).contains(&r));
            prop_assert!(state.len() <= cfg.history);
        }
        let exhausted = trace.last().map(|t| t.3).unwrap_or(false);
        prop_assert!(trace.len() == cfg.episode_len || exhausted);
        prop_assert_eq!(run(seed), trace);
    }

    #[test]
    fn replay_buffer_keeps_the_newest(capacity in 1usize..20, n in 0usize..60) {
        let mut b = ReplayBuffer::new(capacity, 1).unwrap();
        for k in 0..n {
            b.push(transition(k));
            prop_assert!(b.len() <= capacity);
        }
        let kept: Vec<usize> = b.iter().map(|t| t.item).collect();
        let expected: Vec<usize> = (n.saturating_sub(capacity)..n).collect();
        prop_assert_eq!(kept, expected);
    }

    #[test]
    fn soft_update_contracts_gap(tau in 0.01f64..=1.0, seed in 0u64..1000) {
        let store = |s: u64| {
            let mut p = ParamStore::new(s);
            p.insert_uniform("w", 3, 4, 4).unwrap();
            p
        };
        let (mut target, online) = (store(seed), store(seed + 1));
        let id = target.id("w").unwrap();
        let before = target.value(id).clone();
        soft_update(&mut target, &online, tau).unwrap();
        for k in 0..12 {
            let (t0, t1, o) = (before.data()[k], target.value(id).data()[k], online.value(id).data()[k]);
            prop_assert!(((t1 - o) - (1.0 - tau) * (t0 - o)).abs() <= 1e-12);
        }
    }

    #[test]
    fn lkg_loss_matches_per_term_sum(cases in prop::collection::vec((any::<bool>(), 0.0f64..=1.0), 0..20)) {
        let labels: Vec<f64> = cases.iter().map(|c| if c.0 { 1.0 } else { 0.0 }).collect();
        let preds: Vec<f64> = cases.iter().map(|c| c.1).collect();
        let (loss, clamped) = lkg_loss(&labels, &preds).unwrap();
        let mut expected = 0.0;
        let mut n_clamped = 0;
        for (&y, &p) in labels.iter().zip(&preds) {
            let q = p.max(PREDICTION_CLAMP).min(1.0 - PREDICTION_CLAMP);
            n_clamped += usize::from(q != p);
            expected += if y == 1.0 { -q.ln() } else { -(1.0 - q).ln() };
        }
        prop_assert!((loss - expected).abs() <= 1e-9 * (1.0 + expected.abs()));
        prop_assert_eq!(clamped, n_clamped);
    }

    #[test]
    fn metrics_match_set_and_term_oracles((items, relevant, k) in ranked_case()) {
        let rl = RankedList::new(0, items.clone(), &relevant, k).unwrap();
        let rel: HashSet<usize> = relevant.iter().copied().collect();
        let hits = items[..k].iter().filter(|i| rel.contains(i)).count();
        let p = precision_at_k(&rl);
        prop_assert!((0.0..=1.0).contains(&p));
        prop_assert_eq!(p, hits as f64 / k as f64);
        match (recall_at_k(&rl), ndcg_at_k(&rl)) {
            (None, None) => prop_assert!(rel.is_empty()),
            (Some(r), Some(n)) => {
                prop_assert!((0.0..=1.0).contains(&r) && (0.0..=1.0 + 1e-12).contains(&n));
                prop_assert_eq!(r, hits as f64 / rel.len() as f64);
                let mut dcg = 0.0;
                for (pos, item) in items[..k].iter().enumerate() {
                    if rel.contains(item) {
                        dcg += 1.0 / ((pos + 2) as f64).log2();
                    }
                }
                let mut idcg = 0.0;
                for pos in 0..k.min(rel.len()) {
                    idcg += 1.0 / ((pos + 2) as f64).log2();
                }
                prop_assert!((n - dcg / idcg).abs() <= 1e-12);
                let head_full = items[..k.min(rel.len())].iter().all(|i| rel.contains(i));
                prop_assert_eq!((n - 1.0).abs() <= 1e-12, head_full);
            }
            other => prop_assert!(false, "recall and nDCG disagree on skipping: {:?}", other),
        }
    }
}
