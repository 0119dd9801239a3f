//! Monte-Carlo posterior predictive and the evaluation metric triple
//! (zero-one loss, NLL, ECE), plus the predictive relative entropy against
//! a known conditional on synthetic data.
//!
//! ECE uses equal-width bins on the maximum predicted probability over its
//! attainable range `[1/K, 1]`; 15 bins is the default used by callers.
//! Probabilities are clamped at 1e-12 before logs: a cold Monte-Carlo
//! predictive can produce exact zeros.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::laplace::{sample_weights, TemperedPosterior};
use crate::nn::{argmax, forward, softmax, OutputHead};

/// Probability floor applied before any logarithm.
pub const PROB_CLAMP: f64 = 1e-12;

/// Posterior-predictive output over one dataset.
#[derive(Clone, Debug)]
pub struct PredictiveResult {
    pub output: PredictiveOutput,
    pub num_mc_samples: usize,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub enum PredictiveOutput {
    /// `n × K` class probabilities, row-major; each row sums to 1.
    Classification { probs: Vec<f64>, num_classes: usize },
    /// Per-row predictive mean and variance (between-sample spread plus
    /// the unit likelihood variance) for Gaussian heads.
    Regression { means: Vec<f64>, variances: Vec<f64> },
}

impl PredictiveResult {
    pub fn len(&self) -> usize {
        match &self.output {
            PredictiveOutput::Classification { probs, num_classes } => probs.len() / num_classes,
            PredictiveOutput::Regression { means, .. } => means.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn prob_row(&self, i: usize) -> Option<&[f64]> {
        match &self.output {
            PredictiveOutput::Classification { probs, num_classes } => {
                Some(&probs[i * num_classes..(i + 1) * num_classes])
            }
            PredictiveOutput::Regression { .. } => None,
        }
    }
}

/// Monte-Carlo posterior predictive: draws `num_samples` weight vectors
/// from the posterior and averages per-row predictions. Deterministic
/// given `seed` (fixed sample-major accumulation order).
pub fn posterior_predictive(
    post: &TemperedPosterior,
    data: &Dataset,
    num_samples: usize,
    seed: u64,
) -> Result<PredictiveResult> {
    if num_samples == 0 {
        return Err(Error::InvalidArgument("num_samples must be ≥ 1".into()));
    }
    if data.input_dim() != post.mean.arch().input_dim() {
        return Err(Error::InvalidArgument(format!(
            "dataset input dim {} does not match model input dim {}",
            data.input_dim(),
            post.mean.arch().input_dim()
        )));
    }
    let n = data.len();
    let samples = sample_weights(post, seed, num_samples)?;
    let inv = 1.0 / num_samples as f64;
    match post.mean.arch().output_head() {
        OutputHead::SoftmaxCategorical => {
            let k = post.mean.arch().output_dim();
            let mut probs = vec![0.0; n * k];
            for w in &samples {
                for i in 0..n {
                    let p = softmax(&forward(w, data.input_row(i))?);
                    for (acc, v) in probs[i * k..(i + 1) * k].iter_mut().zip(&p) {
                        *acc += v;
                    }
                }
            }
            for v in &mut probs {
                *v *= inv;
            }
            Ok(PredictiveResult {
                output: PredictiveOutput::Classification {
                    probs,
                    num_classes: k,
                },
                num_mc_samples: num_samples,
                seed,
            })
        }
        OutputHead::Gaussian => {
            let mut outputs = vec![0.0; n * num_samples];
            for (s, w) in samples.iter().enumerate() {
                for i in 0..n {
                    outputs[s * n + i] = forward(w, data.input_row(i))?[0];
                }
            }
            let mut means = vec![0.0; n];
            let mut variances = vec![0.0; n];
            for i in 0..n {
                let mut m = 0.0;
                for s in 0..num_samples {
                    m += outputs[s * n + i];
                }
                m *= inv;
                let mut v = 0.0;
                for s in 0..num_samples {
                    let r = outputs[s * n + i] - m;
                    v += r * r;
                }
                means[i] = m;
                variances[i] = v * inv + 1.0;
            }
            Ok(PredictiveResult {
                output: PredictiveOutput::Regression { means, variances },
                num_mc_samples: num_samples,
                seed,
            })
        }
    }
}

/// Test metric triple with the per-bin calibration breakdown.
#[derive(Clone, Debug)]
pub struct MetricTriple {
    pub zero_one: f64,
    pub nll: f64,
    pub ece: f64,
    /// One entry per bin: (mean confidence, accuracy, count). Empty bins
    /// carry zeros and contribute nothing to the ECE.
    pub per_bin: Vec<(f64, f64, usize)>,
}

impl MetricTriple {
    /// Re-assemble the ECE from the per-bin breakdown.
    pub fn ece_from_bins(&self, n: usize) -> f64 {
        self.per_bin
            .iter()
            .map(|(conf, acc, count)| (*count as f64 / n as f64) * (acc - conf).abs())
            .sum()
    }
}

/// Evaluate the metric triple of a classification predictive against the
/// dataset labels.
///
/// * zero-one: mean misclassification with argmax ties broken toward the
///   lowest class index;
/// * NLL: mean `−ln p(y_i)` with the 1e-12 clamp;
/// * ECE: `Σ_b (n_b/n)·|acc_b − conf_b|` over `num_bins` equal-width bins
///   on the max predicted probability in `[1/K, 1]`.
pub fn evaluate(pred: &PredictiveResult, data: &Dataset, num_bins: usize) -> Result<MetricTriple> {
    if num_bins == 0 {
        return Err(Error::InvalidArgument("num_bins must be ≥ 1".into()));
    }
    let (probs, k) = match &pred.output {
        PredictiveOutput::Classification { probs, num_classes } => (probs, *num_classes),
        PredictiveOutput::Regression { .. } => {
            return Err(Error::Unsupported(
                "metric triple is defined for classification predictives".into(),
            ))
        }
    };
    let n = pred.len();
    if data.len() != n {
        return Err(Error::InvalidArgument(format!(
            "predictive has {n} rows, dataset has {}",
            data.len()
        )));
    }
    if data.num_classes() != Some(k) {
        return Err(Error::InvalidArgument(
            "dataset classes do not match predictive classes".into(),
        ));
    }
    let lo = 1.0 / k as f64;
    let width = (1.0 - lo) / num_bins as f64;
    let mut bin_conf = vec![0.0; num_bins];
    let mut bin_acc = vec![0.0; num_bins];
    let mut bin_count = vec![0usize; num_bins];
    let mut errors = 0.0;
    let mut nll = 0.0;
    for i in 0..n {
        let row = &probs[i * k..(i + 1) * k];
        let label = data.label(i).ok_or_else(|| {
            Error::UnsupportedDataset("metric triple requires class labels".into())
        })?;
        let pick = argmax(row);
        let correct = pick == label;
        if !correct {
            errors += 1.0;
        }
        nll -= row[label].max(PROB_CLAMP).ln();
        let conf = row[pick];
        let mut b = ((conf - lo) / width) as usize;
        if b >= num_bins {
            b = num_bins - 1;
        }
        bin_conf[b] += conf;
        bin_acc[b] += if correct { 1.0 } else { 0.0 };
        bin_count[b] += 1;
    }
    let n_f = n as f64;
    let mut ece = 0.0;
    let mut per_bin = Vec::with_capacity(num_bins);
    for b in 0..num_bins {
        if bin_count[b] == 0 {
            per_bin.push((0.0, 0.0, 0));
            continue;
        }
        let c = bin_conf[b] / bin_count[b] as f64;
        let a = bin_acc[b] / bin_count[b] as f64;
        ece += (bin_count[b] as f64 / n_f) * (a - c).abs();
        per_bin.push((c, a, bin_count[b]));
    }
    Ok(MetricTriple {
        zero_one: errors / n_f,
        nll: nll / n_f,
        ece,
        per_bin,
    })
}

/// Empirical conditional relative entropy between the dataset's true
/// conditional and the predictive, averaged analytically over classes:
///
/// `(1/n) Σ_i Σ_k p_D(k|x_i) [ln p_D(k|x_i) − ln pred(k|x_i)]`.
///
/// Each row is a KL divergence, so the estimate is nonnegative.
pub fn predictive_relative_entropy(pred: &PredictiveResult, data: &Dataset) -> Result<f64> {
    let (probs, k) = match &pred.output {
        PredictiveOutput::Classification { probs, num_classes } => (probs, *num_classes),
        PredictiveOutput::Regression { .. } => {
            return Err(Error::Unsupported(
                "relative entropy is defined for classification predictives".into(),
            ))
        }
    };
    if !data.has_true_conditional() {
        return Err(Error::UnsupportedDataset(
            "predictive relative entropy needs a dataset with a true conditional".into(),
        ));
    }
    let n = pred.len();
    if data.len() != n || data.num_classes() != Some(k) {
        return Err(Error::InvalidArgument(
            "predictive and dataset shapes disagree".into(),
        ));
    }
    let mut total = 0.0;
    for i in 0..n {
        let truth = data.true_conditional_row(i).unwrap();
        let row = &probs[i * k..(i + 1) * k];
        for c in 0..k {
            if truth[c] > 0.0 {
                total += truth[c] * (truth[c].ln() - row[c].max(PROB_CLAMP).ln());
            }
        }
    }
    Ok(total / n as f64)
}
