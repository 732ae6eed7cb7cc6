use mdpval::analysis::{
    action_sensitivity, member_seed, train_ensemble, Ensemble, EnsembleKind,
};
use mdpval::dataset::{batches, collect, BatchPolicy, Dataset, RemainderPolicy};
use mdpval::env::{make_env, EnvSpec};
use mdpval::mdn::{batch_loss, forward, init, train, ModelConfig};

fn dataset(env: u8, num_batches: usize, bs: usize, seed: u64) -> Dataset {
    let mut e = make_env(EnvSpec::new(env, 10, 10, seed)).unwrap();
    collect(&mut e, num_batches, bs, seed ^ 0xF00D, RemainderPolicy::PadEpisodes).unwrap()
}

fn mean_loss(params: &mdpval::ModelParams<f32>, ds: &Dataset) -> f64 {
    let bs = batches(ds, 1024, None, BatchPolicy::DropRemainder).unwrap();
    let cfg = ModelConfig { input_dropout_rate: 0.0, ..params.config.clone() };
    let p = mdpval::ModelParams { config: cfg, layers: params.layers.clone() };
    bs.iter().map(|b| batch_loss(&p, b, 0).unwrap()).sum::<f64>() / bs.len() as f64
}

#[test]
fn env5_full_config_training_descends() {
    let cfg = ModelConfig { seed: 1, ..ModelConfig::default() };
    let ds = dataset(5, cfg.train_batches, cfg.batch_size, 5);
    let eval = dataset(5, 4, 1024, 55);
    let trained = train(&ds, &cfg).unwrap();
    let start = init::<f32>(&cfg).unwrap();
    let (before, after) = (mean_loss(&start, &eval), mean_loss(&trained.params, &eval));
    assert!(after < before, "{after} !< {before}");
    assert_eq!(trained.loss_curve.len(), cfg.train_batches);
    let head: f64 = trained.loss_curve[..20].iter().sum::<f64>() / 20.0;
    let tail: f64 = trained.loss_curve[cfg.train_batches - 20..].iter().sum::<f64>() / 20.0;
    assert!(tail < head);
}

#[test]
fn env2_reward_head_learns_the_sure_reward() {
    let cfg = ModelConfig { seed: 2, ..ModelConfig::default() };
    let ds = dataset(2, cfg.train_batches, cfg.batch_size, 21);
    let eval = dataset(2, 4, 250, 22);
    let m = train(&ds, &cfg).unwrap().params;
    let mean = eval
        .transitions
        .iter()
        .map(|t| forward(&m, &t.state, 1, None).unwrap().r_hat)
        .sum::<f64>()
        / eval.transitions.len() as f64;
    assert!((mean - 1.0).abs() < 0.1, "mean r_hat(s, 1) = {mean}");
}

#[test]
fn training_is_a_pure_function_of_data_and_config() {
    let cfg = ModelConfig {
        train_batches: 40,
        batch_size: 100,
        seed: 9,
        ..ModelConfig::default()
    };
    let ds = dataset(7, 40, 100, 3);
    let a = train(&ds, &cfg).unwrap();
    let b = train(&ds, &cfg).unwrap();
    assert_eq!(a, b);
    // the ensemble trainer runs members on a thread pool; results must match
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let ens = pool.install(|| train_ensemble(&ds, &cfg, 3, 77, false)).unwrap();
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let ens1 = single.install(|| train_ensemble(&ds, &cfg, 3, 77, false)).unwrap();
    assert_eq!(ens.models, ens1.models);
    // N = 1 is one train() call with the derived seed
    let one = train_ensemble(&ds, &cfg, 1, 77, false).unwrap();
    let direct = train(&ds, &ModelConfig { seed: member_seed(77, 0), ..cfg.clone() }).unwrap();
    assert_eq!(one.models[0], direct.params);
    assert_eq!(one.seeds, vec![member_seed(77, 0)]);
}

#[test]
fn shuffled_baseline_sits_at_the_noise_floor() {
    let cfg = ModelConfig {
        train_batches: 300,
        batch_size: 250,
        ..ModelConfig::default()
    };
    let ds = dataset(3, 300, 250, 31);
    let eval = dataset(3, 10, 250, 32);
    let orig: Ensemble = train_ensemble(&ds, &cfg, 2, 5, false).unwrap();
    let base = train_ensemble(&ds, &cfg, 2, 5, true).unwrap();
    assert_eq!(base.kind, EnsembleKind::ShuffledBaseline);
    let a = action_sensitivity(&orig, &eval, 250, 1).unwrap();
    let b = action_sensitivity(&base, &eval, 250, 1).unwrap();
    for i in 0..9 {
        let median = |v: &[f64]| mdpval::analysis::percentile(v, 50.0);
        assert!(
            median(&b.values[i]) < 0.5 * median(&a.values[i]),
            "feature {i}: baseline {} vs original {}",
            median(&b.values[i]),
            median(&a.values[i])
        );
    }
}
