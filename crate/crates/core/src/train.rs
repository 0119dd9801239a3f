//! MAP estimation by SGD with classical momentum on the regularized
//! empirical NLL
//!
//! ```text
//! (1/n) Σ_i ℓ_nll(w, x_i, y_i) + ‖w‖² / (2 n σ²_π)
//! ```
//!
//! i.e. the negative log posterior (up to constants) under a Gaussian
//! prior N(0, σ²_π I). Gaussian-head models train with unit likelihood
//! variance; the likelihood/prior trade-off is controlled through σ²_π.
//!
//! Training is deterministic given the seed: initialization, batch
//! shuffling, and update order all draw from one seeded ChaCha stream.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{
    forward, grad_loss, loss, LossKind, MlpArchitecture, ModelParams, OutputHead, Target,
};

/// SGD hyperparameters plus the prior variance realized as the MAP penalty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub prior_variance: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            momentum: 0.9,
            epochs: 60,
            batch_size: 32,
            prior_variance: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument("learning rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "epochs and batch size must be positive".into(),
            ));
        }
        if !(self.prior_variance > 0.0) {
            return Err(Error::InvalidArgument("prior variance must be positive".into()));
        }
        Ok(())
    }
}

/// A trained mode of the regularized objective with its training metrics.
#[derive(Clone, Debug)]
pub struct MapEstimate {
    pub params: ModelParams,
    pub train_nll: f64,
    /// Mean zero-one loss on the training set; `None` for regression heads.
    pub train_zero_one: Option<f64>,
    pub config: TrainConfig,
}

/// The NLL kind a head trains with (Gaussian heads use unit variance).
pub fn nll_kind_for(arch: &MlpArchitecture) -> LossKind {
    match arch.output_head() {
        OutputHead::SoftmaxCategorical => LossKind::NllCategorical,
        OutputHead::Gaussian => LossKind::NllGaussian { variance: 1.0 },
    }
}

/// Seeded initialization: biases zero, weights uniform in
/// ±1/√fan_in.
pub fn init_params(arch: &MlpArchitecture, rng: &mut ChaCha8Rng) -> ModelParams {
    let mut w = vec![0.0; arch.param_count()];
    for l in 0..arch.num_layers() {
        let (in_dim, out_dim) = arch.layer_shape(l);
        let scale = 1.0 / (in_dim as f64).sqrt();
        let offset = arch.layer_offset(l);
        for i in 0..in_dim * out_dim {
            w[offset + i] = rng.random_range(-scale..scale);
        }
        // biases stay zero
    }
    ModelParams::new(arch.clone(), w).expect("init produces the right length")
}

/// Full-batch regularized objective at `w`.
pub fn map_objective(params: &ModelParams, data: &Dataset, config: &TrainConfig) -> Result<f64> {
    let kind = nll_kind_for(params.arch());
    let n = data.len() as f64;
    let mut total = 0.0;
    for i in 0..data.len() {
        total += loss(params, data.input_row(i), &data.target(i), &kind)?;
    }
    let sq: f64 = params.weights().iter().map(|w| w * w).sum();
    Ok(total / n + sq / (2.0 * n * config.prior_variance))
}

/// Gradient of the full-batch regularized objective.
pub fn map_objective_gradient(
    params: &ModelParams,
    data: &Dataset,
    config: &TrainConfig,
) -> Result<Vec<f64>> {
    let kind = nll_kind_for(params.arch());
    let n = data.len() as f64;
    let mut grad = vec![0.0; params.dim()];
    for i in 0..data.len() {
        let g = grad_loss(params, data.input_row(i), &data.target(i), &kind)?;
        for (acc, v) in grad.iter_mut().zip(&g) {
            *acc += v;
        }
    }
    for (j, g) in grad.iter_mut().enumerate() {
        *g = *g / n + params.weights()[j] / (n * config.prior_variance);
    }
    Ok(grad)
}

/// Train a MAP estimate with SGD + momentum. Deterministic given
/// `config.seed`; returns the training-set metrics of the final weights.
pub fn train_map(
    arch: &MlpArchitecture,
    data: &Dataset,
    config: &TrainConfig,
) -> Result<MapEstimate> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    if data.input_dim() != arch.input_dim() {
        return Err(Error::InvalidArgument(format!(
            "dataset input dim {} does not match architecture input dim {}",
            data.input_dim(),
            arch.input_dim()
        )));
    }
    let kind = nll_kind_for(arch);
    let n = data.len();
    let n_f = n as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = init_params(arch, &mut rng);
    let mut velocity = vec![0.0; params.dim()];
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let mut grad = vec![0.0; params.dim()];
            let mut batch_loss = 0.0;
            for &i in batch {
                let x = data.input_row(i);
                let y = data.target(i);
                batch_loss += loss(&params, x, &y, &kind)?;
                let g = grad_loss(&params, x, &y, &kind)?;
                for (acc, v) in grad.iter_mut().zip(&g) {
                    *acc += v;
                }
            }
            if !batch_loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    message: format!("non-finite minibatch loss {batch_loss}"),
                });
            }
            let inv_b = 1.0 / batch.len() as f64;
            let mut new_weights = params.weights().to_vec();
            for j in 0..new_weights.len() {
                let g = grad[j] * inv_b + new_weights[j] / (n_f * config.prior_variance);
                velocity[j] = config.momentum * velocity[j] - config.learning_rate * g;
                new_weights[j] += velocity[j];
            }
            if new_weights.iter().any(|w| !w.is_finite()) {
                return Err(Error::Diverged {
                    epoch,
                    message: "non-finite weights after update".to_string(),
                });
            }
            params = ModelParams::new(arch.clone(), new_weights)?;
        }
    }

    let (train_nll, train_zero_one) = train_metrics(&params, data)?;
    Ok(MapEstimate {
        params,
        train_nll,
        train_zero_one,
        config: config.clone(),
    })
}

/// Mean NLL and (for classifiers) mean zero-one loss over a dataset.
pub fn train_metrics(params: &ModelParams, data: &Dataset) -> Result<(f64, Option<f64>)> {
    let kind = nll_kind_for(params.arch());
    let n = data.len() as f64;
    let mut nll = 0.0;
    let mut zo = 0.0;
    let classify = matches!(params.arch().output_head(), OutputHead::SoftmaxCategorical);
    for i in 0..data.len() {
        let x = data.input_row(i);
        let y = data.target(i);
        let out = forward(params, x)?;
        nll += crate::nn::loss_from_output(&out, &y, &kind);
        if classify {
            if let Target::Class(c) = y {
                if crate::nn::argmax(&out) != c {
                    zo += 1.0;
                }
            }
        }
    }
    Ok((nll / n, classify.then_some(zo / n)))
}

/// One MAP per seed `config.seed + i`, ordered by seed.
pub fn seed_farm(
    arch: &MlpArchitecture,
    data: &Dataset,
    config: &TrainConfig,
    num_seeds: usize,
) -> Result<Vec<MapEstimate>> {
    if num_seeds == 0 {
        return Err(Error::InvalidArgument("num_seeds must be ≥ 1".into()));
    }
    let mut out = Vec::with_capacity(num_seeds);
    for i in 0..num_seeds as u64 {
        let cfg = TrainConfig {
            seed: config.seed + i,
            ..config.clone()
        };
        let est = train_map(arch, data, &cfg).map_err(|e| match e {
            Error::Diverged { epoch, message } => Error::Diverged {
                epoch,
                message: format!("seed {}: {}", cfg.seed, message),
            },
            other => other,
        })?;
        out.push(est);
    }
    Ok(out)
}

/// Post-hoc similarity filter over a seed farm: keep estimates whose train
/// zero-one loss is within `tolerance` (default 0.02) of the seed median.
/// Returns (kept indices, rejected indices), both in input order.
pub fn filter_by_train_error(
    estimates: &[MapEstimate],
    tolerance: f64,
) -> (Vec<usize>, Vec<usize>) {
    let errors: Vec<Option<f64>> = estimates.iter().map(|e| e.train_zero_one).collect();
    let mut known: Vec<f64> = errors.iter().filter_map(|e| *e).collect();
    if known.is_empty() {
        // Regression farms have no zero-one metric; keep everything.
        return ((0..estimates.len()).collect(), Vec::new());
    }
    known.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = if known.len() % 2 == 1 {
        known[known.len() / 2]
    } else {
        0.5 * (known[known.len() / 2 - 1] + known[known.len() / 2])
    };
    let mut kept = Vec::new();
    let mut rejected = Vec::new();
    for (i, e) in errors.iter().enumerate() {
        match e {
            Some(v) if (v - median).abs() > tolerance => rejected.push(i),
            _ => kept.push(i),
        }
    }
    (kept, rejected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gaussian_blobs, BlobsSpec};
    use crate::nn::Activation;

    fn linear_regression_data(seed: u64, n: usize, w_true: f64, b_true: f64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut xs = Vec::with_capacity(n);
        let mut ys = Vec::with_capacity(n);
        for _ in 0..n {
            let x: f64 = rng.random_range(-2.0..2.0);
            let noise: f64 = rng.sample(rand_distr::StandardNormal);
            xs.push(x);
            ys.push(w_true * x + b_true + 0.05 * noise);
        }
        Dataset::regression("lin", xs, 1, ys).unwrap()
    }

    #[test]
    fn recovers_least_squares_without_regularization() {
        let data = linear_regression_data(1, 200, 1.7, -0.4);
        let arch =
            MlpArchitecture::new(vec![1, 1], Activation::Identity, OutputHead::Gaussian).unwrap();
        // Full-batch descent so the iterate converges tightly.
        let config = TrainConfig {
            learning_rate: 0.05,
            momentum: 0.9,
            epochs: 2000,
            batch_size: 200,
            prior_variance: 1e12,
            seed: 0,
        };
        let est = train_map(&arch, &data, &config).unwrap();

        // Normal-equations oracle for [w, b].
        let n = data.len() as f64;
        let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..data.len() {
            let x = data.input_row(i)[0];
            let y = match data.target(i) {
                Target::Real(v) => v,
                _ => unreachable!(),
            };
            sx += x;
            sy += y;
            sxx += x * x;
            sxy += x * y;
        }
        let denom = n * sxx - sx * sx;
        let w_ls = (n * sxy - sx * sy) / denom;
        let b_ls = (sy - w_ls * sx) / n;

        let w = est.params.weights();
        assert!((w[0] - w_ls).abs() < 1e-4, "w={} ls={}", w[0], w_ls);
        assert!((w[1] - b_ls).abs() < 1e-4, "b={} ls={}", w[1], b_ls);
    }

    #[test]
    fn tiny_prior_variance_pins_weights_to_zero() {
        let data = linear_regression_data(2, 50, 1.0, 0.0);
        let arch =
            MlpArchitecture::new(vec![1, 1], Activation::Identity, OutputHead::Gaussian).unwrap();
        // The penalty curvature is 1/(nσ²_π) = 2e10, so the step size must
        // sit at its stability edge: lr·2e10 = 1 contracts w to 0 at once.
        let config = TrainConfig {
            learning_rate: 5e-11,
            momentum: 0.0,
            epochs: 20,
            batch_size: 50,
            prior_variance: 1e-12,
            seed: 0,
        };
        let est = train_map(&arch, &data, &config).unwrap();
        let norm: f64 = est.params.weights().iter().map(|w| w * w).sum::<f64>().sqrt();
        assert!(norm < 1e-3, "norm = {norm}");
    }

    #[test]
    fn same_seed_is_bitwise_identical() {
        let data = gaussian_blobs(&BlobsSpec {
            n: 60,
            ..Default::default()
        })
        .unwrap();
        let arch = MlpArchitecture::new(
            vec![2, 8, 3],
            Activation::Relu,
            OutputHead::SoftmaxCategorical,
        )
        .unwrap();
        let config = TrainConfig {
            epochs: 5,
            ..Default::default()
        };
        let a = train_map(&arch, &data, &config).unwrap();
        let b = train_map(&arch, &data, &config).unwrap();
        assert_eq!(a.params.weights(), b.params.weights());
        assert_eq!(a.train_nll.to_bits(), b.train_nll.to_bits());
    }

    #[test]
    fn objective_decreases_from_init() {
        let data = gaussian_blobs(&BlobsSpec {
            n: 120,
            ..Default::default()
        })
        .unwrap();
        let arch = MlpArchitecture::new(
            vec![2, 8, 3],
            Activation::Relu,
            OutputHead::SoftmaxCategorical,
        )
        .unwrap();
        let config = TrainConfig {
            epochs: 20,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let init = init_params(&arch, &mut rng);
        let before = map_objective(&init, &data, &config).unwrap();
        let est = train_map(&arch, &data, &config).unwrap();
        let after = map_objective(&est.params, &data, &config).unwrap();
        assert!(after <= before, "after={after} before={before}");
    }

    #[test]
    fn stationarity_on_convex_instance() {
        let data = linear_regression_data(3, 100, 0.8, 0.2);
        let arch =
            MlpArchitecture::new(vec![1, 1], Activation::Identity, OutputHead::Gaussian).unwrap();
        let config = TrainConfig {
            learning_rate: 0.05,
            momentum: 0.9,
            epochs: 300,
            batch_size: 100,
            prior_variance: 1.0,
            seed: 0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let init = init_params(&arch, &mut rng);
        let g0 = map_objective_gradient(&init, &data, &config).unwrap();
        let init_norm: f64 = g0.iter().map(|v| v * v).sum::<f64>().sqrt();
        let est = train_map(&arch, &data, &config).unwrap();
        let g = map_objective_gradient(&est.params, &data, &config).unwrap();
        let norm: f64 = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(
            norm < 1e-2 * (1.0 + init_norm),
            "grad norm {norm}, init {init_norm}"
        );
    }

    #[test]
    fn train_metrics_recomputable() {
        let data = gaussian_blobs(&BlobsSpec {
            n: 80,
            ..Default::default()
        })
        .unwrap();
        let arch = MlpArchitecture::new(
            vec![2, 6, 3],
            Activation::Tanh,
            OutputHead::SoftmaxCategorical,
        )
        .unwrap();
        let config = TrainConfig {
            epochs: 10,
            ..Default::default()
        };
        let est = train_map(&arch, &data, &config).unwrap();
        let (nll, zo) = train_metrics(&est.params, &data).unwrap();
        assert!((nll - est.train_nll).abs() < 1e-9);
        assert!((zo.unwrap() - est.train_zero_one.unwrap()).abs() < 1e-9);
    }

    #[test]
    fn seed_farm_produces_distinct_ordered_estimates() {
        let data = gaussian_blobs(&BlobsSpec {
            n: 100,
            ..Default::default()
        })
        .unwrap();
        let arch = MlpArchitecture::new(
            vec![2, 6, 3],
            Activation::Relu,
            OutputHead::SoftmaxCategorical,
        )
        .unwrap();
        let config = TrainConfig {
            epochs: 8,
            seed: 11,
            ..Default::default()
        };
        let farm = seed_farm(&arch, &data, &config, 4).unwrap();
        assert_eq!(farm.len(), 4);
        for (i, est) in farm.iter().enumerate() {
            assert_eq!(est.config.seed, 11 + i as u64);
        }
        for i in 0..farm.len() {
            for j in i + 1..farm.len() {
                let dist: f64 = farm[i]
                    .params
                    .weights()
                    .iter()
                    .zip(farm[j].params.weights())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                assert!(dist > 0.0, "seeds {i} and {j} coincide");
            }
        }
        // Singleton farm equals train_map output.
        let single = seed_farm(&arch, &data, &config, 1).unwrap();
        let direct = train_map(&arch, &data, &config).unwrap();
        assert_eq!(single[0].params.weights(), direct.params.weights());
    }

    #[test]
    fn filter_rejects_outlier_seeds() {
        let arch = MlpArchitecture::new(
            vec![2, 4, 3],
            Activation::Relu,
            OutputHead::SoftmaxCategorical,
        )
        .unwrap();
        let stub = |zo: f64| MapEstimate {
            params: crate::nn::ModelParams::zeros(arch.clone()),
            train_nll: 1.0,
            train_zero_one: Some(zo),
            config: TrainConfig::default(),
        };
        let farm = vec![stub(0.10), stub(0.60), stub(0.11)];
        let (kept, rejected) = filter_by_train_error(&farm, 0.02);
        assert_eq!(rejected, vec![1]);
        assert_eq!(kept, vec![0, 2]);
    }

    #[test]
    fn divergent_learning_rate_reports_epoch() {
        let data = gaussian_blobs(&BlobsSpec {
            n: 60,
            ..Default::default()
        })
        .unwrap();
        let arch = MlpArchitecture::new(
            vec![2, 8, 3],
            Activation::Relu,
            OutputHead::SoftmaxCategorical,
        )
        .unwrap();
        let config = TrainConfig {
            learning_rate: 1e6,
            momentum: 0.99,
            epochs: 50,
            batch_size: 8,
            prior_variance: 0.1,
            seed: 0,
        };
        match train_map(&arch, &data, &config) {
            Err(Error::Diverged { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
