mod oracle;

use mdpval::env::{make_env, EnvSpec, RandomPolicy};

#[test]
fn frequencies_match_tables_for_every_env() {
    for env in 1..=7u8 {
        let c = oracle::env_conformance(env, 100_000, 40 + env as u64, 1000);
        assert!(c.invariant_violations.is_empty(), "env {env}: {:?}", &c.invariant_violations[..1]);
        assert!(c.max_dev <= 0.02, "env {env}: worst cell {:?}", c.worst);
    }
}

#[test]
fn hidden_factor_is_a_fair_coin() {
    let mut e = make_env(EnvSpec::new(6, 10, 10, 5)).unwrap();
    let ones = (0..10_000).filter(|_| e.reset().hidden_h == Some(1)).count();
    assert!((ones as f64 / 10_000.0 - 0.5).abs() <= 0.02);
}

#[test]
fn random_policy_is_a_fair_coin() {
    let mut p = RandomPolicy::new(12);
    let ones: u32 = (0..100_000).map(|_| p.act() as u32).sum();
    assert!((ones as f64 / 100_000.0 - 0.5).abs() <= 0.01);
}

#[test]
fn deterministic_cells() {
    // f_0 always increments in env 1, so env 4's reward switches on at t = 5
    let mut e = make_env(EnvSpec::new(4, 10, 10, 1)).unwrap();
    let ep = e.rollout_episode(2);
    for tr in &ep.transitions {
        assert_eq!(tr.next_state[0], tr.state[0] + 1.0);
        assert_eq!(tr.reward, if tr.state[0] > 4.0 { 1.0 } else { 0.0 });
    }
    assert_eq!(ep.transitions[5].state[0], 5.0);
    assert_eq!(ep.transitions[5].reward, 1.0);
    assert_eq!(ep.transitions[4].reward, 0.0);

    for env in [3u8, 7] {
        let mut e = make_env(EnvSpec::new(env, 10, 10, 3)).unwrap();
        for _ in 0..50 {
            let s = e.reset();
            let (next, _, _) = e.step(0).unwrap();
            assert_eq!(next, s.features);
        }
    }

    let mut e = make_env(EnvSpec::new(2, 10, 10, 3)).unwrap();
    e.reset();
    for _ in 0..10 {
        assert_eq!(e.step(1).unwrap().1, 1.0);
    }
}

#[test]
fn identical_specs_give_identical_episodes() {
    for env in 1..=7 {
        let spec = EnvSpec::new(env, 10, 10, 99);
        let a = make_env(spec).unwrap().rollout_episode(4);
        let b = make_env(spec).unwrap().rollout_episode(4);
        assert_eq!(a, b);
    }
}
