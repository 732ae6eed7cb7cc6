use super::adam::Adam;
use super::grad::gradients;
use super::params::{init, ModelParams, Real};
use super::ModelConfig;
use crate::dataset::{row_order, shuffle_actions_within_batch, Dataset, MiniBatch};
use crate::error::{Error, Result};
use crate::rng::{derive, stream};

#[derive(Debug, Clone, PartialEq)]
pub struct Trained<T> {
    pub params: ModelParams<T>,
    /// Mean mini-batch loss at every optimizer step, before the update.
    pub loss_curve: Vec<f64>,
}

/// Train in single precision.
pub fn train(dataset: &Dataset, config: &ModelConfig) -> Result<Trained<f32>> {
    fit(dataset, config, false)
}

/// Run `config.train_batches` Adam steps over seeded mini-batches. Passes
/// over the data are reshuffled and a trailing partial batch is skipped.
/// With `shuffle_actions`, each mini-batch has its actions permuted before
/// the forward pass.
pub fn fit<T: Real>(
    dataset: &Dataset,
    config: &ModelConfig,
    shuffle_actions: bool,
) -> Result<Trained<T>> {
    config.validate()?;
    if dataset.d != config.d {
        return Err(Error::Config(format!(
            "dataset has d = {}, model expects {}",
            dataset.d, config.d
        )));
    }
    let n = dataset.transitions.len();
    if n < config.batch_size {
        return Err(Error::Config(format!(
            "dataset of {n} transitions is smaller than batch_size {}",
            config.batch_size
        )));
    }

    let order_seed = derive(config.seed, stream::BATCH_ORDER);
    let dropout_seed = derive(config.seed, stream::DROPOUT);
    let shuffle_seed = derive(config.seed, stream::ACTION_SHUFFLE);

    let mut params = init::<T>(config)?;
    let mut opt = Adam::new(config);
    let mut loss_curve = Vec::with_capacity(config.train_batches);
    let mut pass = 0u64;
    let mut order = row_order(n, Some(derive(order_seed, pass)));
    let mut cursor = 0;

    for step in 0..config.train_batches {
        if cursor + config.batch_size > n {
            pass += 1;
            order = row_order(n, Some(derive(order_seed, pass)));
            cursor = 0;
        }
        let rows = &order[cursor..cursor + config.batch_size];
        cursor += config.batch_size;
        let mut batch =
            MiniBatch::from_transitions(dataset.d, rows.iter().map(|&i| &dataset.transitions[i]));
        if shuffle_actions {
            batch = shuffle_actions_within_batch(&batch, derive(shuffle_seed, step as u64));
        }
        let g = gradients(&params, &batch, derive(dropout_seed, step as u64))
            .map_err(|e| annotate(e, step))?;
        loss_curve.push(g.loss);
        opt.update(&mut params, &g);
        if !params.is_finite() {
            return Err(Error::training(format!(
                "parameters diverged at step {step}"
            )));
        }
    }
    Ok(Trained { params, loss_curve })
}

fn annotate(e: Error, step: usize) -> Error {
    match e {
        Error::Training { model, msg } => Error::Training {
            model,
            msg: format!("{msg} at step {step}"),
        },
        other => other,
    }
}
