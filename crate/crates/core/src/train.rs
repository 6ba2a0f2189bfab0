//! Mini-batch training with Adam, decoupled weight decay and a per-epoch
//! cosine learning-rate schedule.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::darcy::DarcySample;
use crate::error::{Error, Result};
use crate::grad::{loss_and_gradient, GradientSet};
use crate::grid::{ChannelField, GroupElement};
use crate::metrics::dataset_report;
use crate::model::{init_parameters, ModelConfig, ModelParameters, Normalization, Operator};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 20,
            lr0: 1e-3,
            lr_min: 0.0,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("epochs and batch size must be at least 1"));
        }
        if !(self.lr_min >= 0.0 && self.lr0 > self.lr_min) {
            return Err(Error::config(format!(
                "learning rates must satisfy lr0 > lr_min >= 0, got {} and {}",
                self.lr0, self.lr_min
            )));
        }
        if !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || !(self.adam_eps > 0.0)
        {
            return Err(Error::config(
                "Adam betas must lie in [0, 1) and eps must be positive",
            ));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::config("weight decay must be non-negative"));
        }
        Ok(())
    }
}

/// Learning rate for `epoch` in `0..=epochs`, falling from `lr0` to `lr_min`
/// along a half cosine.
pub fn cosine_lr(epoch: usize, cfg: &TrainConfig) -> f64 {
    let t = epoch.min(cfg.epochs) as f64 / cfg.epochs as f64;
    cfg.lr_min + 0.5 * (cfg.lr0 - cfg.lr_min) * (1.0 + (std::f64::consts::PI * t).cos())
}

/// First and second moment estimates, one entry per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            first: vec![0.0; len],
            second: vec![0.0; len],
            step: 0,
        }
    }
}

/// One Adam update with bias correction. Weight decay is applied first as
/// `theta *= 1 - lr * weight_decay`.
pub fn adam_step(
    theta: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    let n = theta.len();
    if grads.len() != n || state.first.len() != n || state.second.len() != n {
        return Err(Error::shape(format!(
            "parameters {n}, gradients {}, moments {}/{}",
            grads.len(),
            state.first.len(),
            state.second.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let decay = 1.0 - lr * cfg.weight_decay;
    for k in 0..n {
        let g = grads[k];
        let m = cfg.beta1 * state.first[k] + (1.0 - cfg.beta1) * g;
        let v = cfg.beta2 * state.second[k] + (1.0 - cfg.beta2) * g * g;
        state.first[k] = m;
        state.second[k] = v;
        theta[k] = theta[k] * decay - lr * (m / c1) / ((v / c2).sqrt() + cfg.adam_eps);
    }
    Ok(())
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let count = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / count;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / count;
    let sd = var.sqrt();
    (mean, if sd > 0.0 { sd } else { 1.0 })
}

/// Global mean and standard deviation of the coefficients and of the
/// solutions. A constant field gets a unit scale.
pub fn fit_normalization(data: &[DarcySample]) -> Result<Normalization> {
    if data.is_empty() {
        return Err(Error::config(
            "cannot fit normalization to an empty dataset",
        ));
    }
    let (input_mean, input_std) = mean_std(data.iter().flat_map(|s| s.a.data().iter().copied()));
    let (output_mean, output_std) = mean_std(data.iter().flat_map(|s| s.u.data().iter().copied()));
    Ok(Normalization {
        input_mean,
        input_std,
        output_mean,
        output_std,
    })
}

/// Metrics recorded after one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_l2: f64,
    pub test_l2: f64,
    pub train_h2: f64,
    pub test_h2: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParameters,
    pub history: Vec<EpochMetrics>,
}

fn check_resolution(mcfg: &ModelConfig, sets: [&[DarcySample]; 2]) -> Result<()> {
    let n = sets[0]
        .first()
        .ok_or_else(|| Error::config("training set is empty"))?
        .resolution();
    if sets[1].is_empty() {
        return Err(Error::config("test set is empty"));
    }
    for s in sets.iter().flat_map(|s| s.iter()) {
        if s.a.shape() != (n, n) || s.u.shape() != (n, n) {
            return Err(Error::config(format!(
                "mixed resolutions: {:?} and {:?} in a dataset of {n}x{n}",
                s.a.shape(),
                s.u.shape()
            )));
        }
    }
    mcfg.check_resolution(n, n)
}

/// [`train_with`] without a progress callback.
pub fn train(
    cfg: &TrainConfig,
    mcfg: &ModelConfig,
    train_set: &[DarcySample],
    test_set: &[DarcySample],
) -> Result<TrainOutcome> {
    train_with(cfg, mcfg, train_set, test_set, |_| {})
}

/// Trains a freshly initialized model, calling `on_epoch` after each epoch.
///
/// The normalization is fitted on `train_set` only. The loss is the batch
/// mean of per-sample relative L2 errors; the learning rate is constant
/// within an epoch.
pub fn train_with(
    cfg: &TrainConfig,
    mcfg: &ModelConfig,
    train_set: &[DarcySample],
    test_set: &[DarcySample],
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    mcfg.validate()?;
    check_resolution(mcfg, [train_set, test_set])?;

    let mut params = init_parameters(mcfg, cfg.seed)?;
    params.set_normalization(fit_normalization(train_set)?)?;
    let mut state = AdamState::new(params.values().len());
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5348_5546_464c_4521);
    let inputs: Vec<ChannelField> = train_set
        .iter()
        .map(|s| ChannelField::from_grid(&s.a))
        .collect();
    let targets: Vec<ChannelField> = train_set
        .iter()
        .map(|s| ChannelField::from_grid(&s.u))
        .collect();

    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = cosine_lr(epoch, cfg);
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let mut total = GradientSet::zeros(*mcfg);
            {
                let op = Operator::new(&params)?;
                for &k in batch {
                    let (_, g) = loss_and_gradient(&op, &inputs[k], &targets[k])?;
                    total.add_assign(&g)?;
                }
            }
            total.scale(1.0 / batch.len() as f64);
            adam_step(params.values_mut(), total.values(), &mut state, lr, cfg)?;
        }

        let op = Operator::new(&params)?;
        let tr = dataset_report(&op, train_set, GroupElement::Identity)?;
        let te = dataset_report(&op, test_set, GroupElement::Identity)?;
        let row = EpochMetrics {
            epoch: epoch + 1,
            train_l2: tr.mean_l2,
            test_l2: te.mean_l2,
            train_h2: tr.mean_h2,
            test_h2: te.mean_h2,
        };
        on_epoch(&row);
        history.push(row);
    }
    Ok(TrainOutcome { params, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::darcy::generate_dataset;
    use crate::grid::apply_group_field;
    use crate::model::{forward, Variant};

    #[test]
    fn cosine_schedule_endpoints() {
        let cfg = TrainConfig::default();
        assert_eq!(cosine_lr(0, &cfg), 1e-3);
        assert!(cosine_lr(100, &cfg).abs() < 1e-18);
        assert!((cosine_lr(50, &cfg) - 5e-4).abs() < 1e-15);
        let floor = TrainConfig {
            lr_min: 1e-5,
            ..cfg
        };
        assert!((cosine_lr(100, &floor) - 1e-5).abs() < 1e-18);
        for e in 0..100 {
            assert!(cosine_lr(e + 1, &cfg) < cosine_lr(e, &cfg));
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig {
                epochs: 0,
                ..Default::default()
            },
            TrainConfig {
                batch_size: 0,
                ..Default::default()
            },
            TrainConfig {
                lr0: 0.0,
                ..Default::default()
            },
            TrainConfig {
                lr_min: 2e-3,
                ..Default::default()
            },
            TrainConfig {
                beta2: 1.0,
                ..Default::default()
            },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))), "{bad:?}");
        }
    }

    #[test]
    fn adam_zero_gradient_without_decay_is_identity() {
        let cfg = TrainConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut theta = vec![0.5, -1.0, 2.0];
        let mut st = AdamState::new(3);
        for _ in 0..3 {
            adam_step(&mut theta, &[0.0; 3], &mut st, 1e-3, &cfg).unwrap();
        }
        assert_eq!(theta, vec![0.5, -1.0, 2.0]);
        assert_eq!(st.step, 3);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let cfg = TrainConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let g = [3.0, -0.2, 1e-3];
        let mut theta = vec![0.0; 3];
        let mut st = AdamState::new(3);
        adam_step(&mut theta, &g, &mut st, 1e-2, &cfg).unwrap();
        for k in 0..3 {
            // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
            let expect = -1e-2 * g[k] / (g[k].abs() + 1e-8);
            assert!((theta[k] - expect).abs() < 1e-15, "{k}");
            assert!((theta[k].abs() - 1e-2).abs() < 1e-7);
        }
        assert!(st.second.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn adam_applies_decoupled_decay() {
        let cfg = TrainConfig {
            weight_decay: 0.1,
            ..Default::default()
        };
        let mut theta = vec![2.0];
        let mut st = AdamState::new(1);
        adam_step(&mut theta, &[0.0], &mut st, 0.5, &cfg).unwrap();
        assert!((theta[0] - 2.0 * (1.0 - 0.05)).abs() < 1e-15);
        assert!(matches!(
            adam_step(&mut theta, &[0.0, 1.0], &mut st, 0.5, &cfg),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn normalization_uses_training_data() {
        let data = generate_dataset(3, 0, 16).unwrap();
        let n = fit_normalization(&data).unwrap();
        assert!(n.input_mean > 3.0 && n.input_mean < 12.0);
        assert!(n.input_std > 0.0 && n.output_std > 0.0 && n.output_mean > 0.0);
        assert!(fit_normalization(&[]).is_err());
    }

    fn small() -> (TrainConfig, ModelConfig) {
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 2,
            seed: 4,
            ..Default::default()
        };
        let mut m = ModelConfig::new(Variant::Isotropic, 4, 3, 2);
        m.projection_hidden = 8;
        (cfg, m)
    }

    #[test]
    fn training_is_deterministic_and_records_every_epoch() {
        let data = generate_dataset(5, 100, 16).unwrap();
        let (cfg, m) = small();
        let a = train(&cfg, &m, &data[..4], &data[4..]).unwrap();
        let b = train(&cfg, &m, &data[..4], &data[4..]).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.params.values(), b.params.values());
        assert_eq!(a.history.len(), 3);
        assert_eq!(
            a.history.iter().map(|r| r.epoch).collect::<Vec<_>>(),
            vec![1, 2, 3]
        );
        assert_eq!(
            a.params.normalization(),
            fit_normalization(&data[..4]).unwrap()
        );
        let c = train(&TrainConfig { seed: 5, ..cfg }, &m, &data[..4], &data[4..]).unwrap();
        assert_ne!(a.params.values(), c.params.values());
    }

    #[test]
    fn partial_batch_is_processed() {
        let data = generate_dataset(5, 200, 16).unwrap();
        let (cfg, m) = small();
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 20,
            ..cfg
        };
        let out = train(&cfg, &m, &data[..4], &data[4..]).unwrap();
        let init = init_parameters(&m, cfg.seed).unwrap();
        assert_ne!(out.params.values(), init.values());
    }

    #[test]
    fn trained_iso_model_stays_equivariant() {
        let data = generate_dataset(5, 300, 16).unwrap();
        let (cfg, m) = small();
        let out = train(&cfg, &m, &data[..4], &data[4..]).unwrap();
        let a = ChannelField::from_grid(&data[4].a);
        let y = forward(&out.params, &a).unwrap();
        for g in GroupElement::ALL {
            let lhs = forward(&out.params, &apply_group_field(g, &a).unwrap()).unwrap();
            let rhs = apply_group_field(g, &y).unwrap();
            assert!(lhs.max_abs_diff(&rhs) < 1e-9, "{g}");
        }
    }

    #[test]
    fn rejects_resolution_mismatch() {
        let data16 = generate_dataset(2, 0, 16).unwrap();
        let data8 = generate_dataset(1, 0, 8).unwrap();
        let (cfg, m) = small();
        let mixed = vec![data16[0].clone(), data8[0].clone()];
        assert!(matches!(
            train(&cfg, &m, &mixed, &data16),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            train(&cfg, &m, &data16, &data8),
            Err(Error::Config(_))
        ));
        let wide = ModelConfig::new(Variant::Standard, 4, 12, 1);
        assert!(matches!(
            train(&cfg, &wide, &data16, &data16),
            Err(Error::Config(_))
        ));
        assert!(train(&cfg, &m, &[], &data16).is_err());
    }
}
