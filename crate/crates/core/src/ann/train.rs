use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::io::SurrogateModel;
use super::net::{Network, NetworkConfig};
use crate::pooling::NormalizationMode;
use crate::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

fn check_pair(pred: &[f64], target: &[f64]) -> Result<()> {
    if pred.is_empty() || pred.len() != target.len() {
        return Err(Error::InvalidArgument(format!(
            "need equal nonempty lists, got {} and {}",
            pred.len(),
            target.len()
        )));
    }
    Ok(())
}

pub fn loss_mse(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_pair(pred, target)?;
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64)
}

pub fn metric_mae(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_pair(pred, target)?;
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64) {
    state.t += 1;
    let c1 = 1.0 - ADAM_BETA1.powi(state.t as i32);
    let c2 = 1.0 - ADAM_BETA2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = ADAM_BETA1 * state.m[i] + (1.0 - ADAM_BETA1) * g;
        state.v[i] = ADAM_BETA2 * state.v[i] + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
}

/// One training or evaluation record.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub input: Vec<f64>,
    pub neg_log2_h: f64,
    pub theta: f64,
    pub target: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            batch_size: 32,
            learning_rate: 1e-3,
            max_epochs: 1000,
            patience: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean batch loss seen during the epoch (dropout active).
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_mae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

fn predict_all(net: &Network, params: &[f64], data: &[Example]) -> Result<Vec<f64>> {
    data.iter()
        .map(|e| net.forward(params, &e.input, e.neg_log2_h, e.theta))
        .collect()
}

/// Mini-batch Adam on the MSE with per-epoch shuffling, early stopping on
/// the validation loss and restoration of the best weights.
pub fn train(
    train_set: &[Example],
    val_set: &[Example],
    config: &NetworkConfig,
    m: usize,
    mode: NormalizationMode,
    seed: u64,
    opts: &TrainOptions,
) -> Result<(SurrogateModel, TrainHistory)> {
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::InvalidArgument(
            "training needs nonempty train and validation sets".into(),
        ));
    }
    if opts.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let net = Network::new(config, m)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = net.init_params(&mut rng);
    rng.set_stream(1);
    let mut adam = AdamState::new(params.len());
    let mut grad = vec![0.0; params.len()];
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let val_targets: Vec<f64> = val_set.iter().map(|e| e.target).collect();

    let mut best = params.clone();
    let mut best_loss = f64::INFINITY;
    let mut best_epoch = 0;
    let mut epochs = Vec::new();
    let mut stopped_early = false;

    for epoch in 1..=opts.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(opts.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let e = &train_set[i];
                let masks = net.sample_masks(&mut rng);
                let cache = net.forward_train(&params, &e.input, e.neg_log2_h, e.theta, masks)?;
                let err = cache.output - e.target;
                loss_sum += err * err;
                net.backward(&params, &cache, 2.0 * err * scale, &mut grad);
            }
            adam_step(&mut params, &grad, &mut adam, opts.learning_rate);
        }
        let pred = predict_all(&net, &params, val_set)?;
        let val_loss = loss_mse(&pred, &val_targets)?;
        let val_mae = metric_mae(&pred, &val_targets)?;
        epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            val_loss,
            val_mae,
        });
        log::debug!("epoch {epoch}: train {:.3e} val {val_loss:.3e}", loss_sum / train_set.len() as f64);
        if val_loss < best_loss {
            best_loss = val_loss;
            best_epoch = epoch;
            best.copy_from_slice(&params);
        } else if epoch - best_epoch >= opts.patience {
            stopped_early = true;
            break;
        }
    }
    let model = SurrogateModel::from_parts(config.clone(), m, seed, mode, best)?;
    Ok((
        model,
        TrainHistory {
            epochs,
            best_epoch,
            best_val_loss: best_loss,
            stopped_early,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn loss_and_metric_by_hand() {
        assert_eq!(loss_mse(&[0.0, 1.0], &[1.0, 1.0]).unwrap(), 0.5);
        assert_eq!(metric_mae(&[0.0, 1.0], &[1.0, 1.0]).unwrap(), 0.5);
        assert_eq!(loss_mse(&[0.3, 0.2], &[0.3, 0.2]).unwrap(), 0.0);
        assert!(loss_mse(&[], &[]).is_err());
        assert!(metric_mae(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut p = vec![1.0, -2.0];
        let mut s = AdamState::new(2);
        adam_step(&mut p, &[0.0, 0.0], &mut s, 1e-3);
        assert_eq!(p, vec![1.0, -2.0]);
    }

    #[test]
    fn adam_first_step_is_lr_times_sign() {
        let mut p = vec![0.0, 0.0];
        let mut s = AdamState::new(2);
        adam_step(&mut p, &[3.0, -0.01], &mut s, 1e-3);
        assert!((p[0] + 1e-3).abs() < 1e-6 * 1e-3);
        assert!((p[1] - 1e-3).abs() < 1e-6 * 1e-3);
    }

    #[test]
    fn adam_constant_gradient_step_tends_to_lr() {
        let mut p = vec![0.0];
        let mut s = AdamState::new(1);
        let mut last = 0.0;
        for _ in 0..5000 {
            let before = p[0];
            adam_step(&mut p, &[0.7], &mut s, 1e-3);
            last = before - p[0];
        }
        assert!((last - 1e-3).abs() < 1e-9);
    }

    fn synthetic(n: usize, m: usize, seed: u64) -> Vec<Example> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let input: Vec<f64> = (0..m * m).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let theta = rng.gen_range(0.1..0.8);
                let neg_log2_h = rng.gen_range(3..8) as f64;
                let target = 0.05 + 0.1 * theta + 0.01 * neg_log2_h + 0.02 * input[0];
                Example {
                    input,
                    neg_log2_h,
                    theta,
                    target,
                }
            })
            .collect()
    }

    #[test]
    fn empty_sets_are_rejected() {
        let data = synthetic(3, 6, 1);
        let cfg = NetworkConfig::tiny();
        let o = TrainOptions::default();
        assert!(train(&[], &data, &cfg, 6, NormalizationMode::SumStandard, 0, &o).is_err());
        assert!(train(&data, &[], &cfg, 6, NormalizationMode::SumStandard, 0, &o).is_err());
    }

    #[test]
    fn training_is_deterministic() {
        let data = synthetic(12, 6, 2);
        let opts = TrainOptions {
            max_epochs: 5,
            batch_size: 4,
            ..TrainOptions::default()
        };
        let cfg: NetworkConfig = "2 1 0.25 4 4 2".parse().unwrap();
        let run = || train(&data[..8], &data[8..], &cfg, 6, NormalizationMode::SumStandard, 9, &opts).unwrap();
        let (m1, h1) = run();
        let (m2, h2) = run();
        assert_eq!(h1, h2);
        assert_eq!(m1.params(), m2.params());
    }

    #[test]
    fn early_stopping_restores_best_weights() {
        let data = synthetic(16, 6, 3);
        let opts = TrainOptions {
            max_epochs: 400,
            patience: 5,
            batch_size: 8,
            learning_rate: 5e-2,
        };
        let (model, hist) = train(
            &data[..10],
            &data[10..],
            &NetworkConfig::tiny(),
            6,
            NormalizationMode::SumStandard,
            4,
            &opts,
        )
        .unwrap();
        let best = hist.epochs[hist.best_epoch - 1].val_loss;
        assert_eq!(best, hist.best_val_loss);
        let pred: Vec<f64> = data[10..]
            .iter()
            .map(|e| model.predict(&e.input, e.neg_log2_h, e.theta).unwrap())
            .collect();
        let t: Vec<f64> = data[10..].iter().map(|e| e.target).collect();
        assert_eq!(loss_mse(&pred, &t).unwrap(), best);
        if hist.stopped_early {
            assert_eq!(hist.epochs.len(), hist.best_epoch + 5);
        }
    }

    #[test]
    fn overfits_ten_samples() {
        let data = synthetic(10, 6, 5);
        let opts = TrainOptions {
            patience: 1000,
            ..TrainOptions::default()
        };
        let cfg: NetworkConfig = "4 1 0 16 16 2".parse().unwrap();
        let (model, hist) =
            train(&data, &data, &cfg, 6, NormalizationMode::SumStandard, 1, &opts).unwrap();
        let pred: Vec<f64> = data
            .iter()
            .map(|e| model.predict(&e.input, e.neg_log2_h, e.theta).unwrap())
            .collect();
        let t: Vec<f64> = data.iter().map(|e| e.target).collect();
        let mse = loss_mse(&pred, &t).unwrap();
        assert!(mse < 1e-6, "mse {mse} after {} epochs", hist.epochs.len());
    }
}
