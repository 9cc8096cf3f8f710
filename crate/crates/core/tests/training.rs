mod common;

use kgrl_core::agent::{Agent, AgentConfig, Variant};
use kgrl_core::training::{train_ddpg, DdpgConfig, DdpgTrainer, LkgConfig, TrainConfig, UpdateKind};

fn trainer(env: &kgrl_core::env::Environment, lmf: &kgrl_core::env::LmfModel, variant: Variant) -> DdpgTrainer {
    let cfg = AgentConfig { variant, ..AgentConfig::default() };
    let agent = Agent::new(cfg, env.n_users(), env.n_items(), 5, Some(&lmf.item_factors), 3).unwrap();
    DdpgTrainer::new(agent, DdpgConfig { batch_size: 8, ..DdpgConfig::default() }).unwrap()
}

fn short(episodes: usize) -> TrainConfig {
    TrainConfig { episodes, probe_every: 2, ..TrainConfig::default() }
}

#[test]
fn zero_episodes_touch_nothing() {
    let (ds, lmf, env) = common::planted_env(20, 60, 1, 50);
    let mut t = trainer(&env, &lmf, Variant::M);
    let before = t.agent.clone();
    let log = train_ddpg(&env, Some(&ds), &mut t, &short(0), 1).unwrap();
    assert!(log.steps.is_empty() && log.episodes.is_empty());
    for (a, b) in [(&before.actor, &t.agent.actor), (&before.critic, &t.agent.critic), (&before.kg, &t.agent.kg)] {
        for id in a.ids() {
            assert_eq!(a.value(id), b.value(id));
        }
    }
}

#[test]
fn identical_seeds_give_identical_logs_and_checkpoints() {
    let (ds, lmf, env) = common::planted_env(20, 60, 2, 50);
    let run = |seed| {
        let mut t = trainer(&env, &lmf, Variant::M);
        let log = train_ddpg(&env, Some(&ds), &mut t, &short(4), seed).unwrap();
        let (mut steps, mut episodes, mut ckpt) = (Vec::new(), Vec::new(), Vec::new());
        log.write_steps_csv(&mut steps).unwrap();
        log.write_episodes_csv(&mut episodes).unwrap();
        t.agent.write_checkpoint(&mut ckpt).unwrap();
        (steps, episodes, ckpt)
    };
    let a = run(9);
    assert_eq!(a, run(9));
    assert_ne!(a.0, run(10).0);
    let header = String::from_utf8(a.0).unwrap();
    assert_eq!(header.lines().next().unwrap(), "episode,step,reward,critic_loss,lkg_loss,actor_grad_norm,buffer_size");
}

#[test]
fn updates_run_in_order_after_warmup() {
    let (ds, lmf, env) = common::planted_env(20, 60, 3, 50);
    for (variant, every) in [(Variant::M, 1), (Variant::MK, 1), (Variant::MA, 3)] {
        let mut t = trainer(&env, &lmf, variant);
        t.record_order();
        let cfg = TrainConfig { lkg: LkgConfig { every, ..LkgConfig::default() }, ..short(3) };
        let log = train_ddpg(&env, Some(&ds), &mut t, &cfg, 4).unwrap();
        assert_eq!(log.warmup_steps, 7);
        assert!(log.steps[..7].iter().all(|s| s.critic_loss.is_none() && s.actor_grad_norm.is_none()));
        let updates = log.steps.len() - 7;
        let mut expected = Vec::new();
        for k in 0..updates {
            expected.push(UpdateKind::Critic);
            if k % every == 0 {
                expected.push(UpdateKind::LocalKg);
            }
            expected.push(UpdateKind::Actor);
            expected.push(UpdateKind::Targets);
        }
        assert_eq!(t.order_log(), &expected[..], "{:?}", variant);
        assert!(log.episodes.iter().skip(1).step_by(2).all(|e| e.probe_precision.is_some()));
    }
}
