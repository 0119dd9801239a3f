//! Datasets: row-major input matrices with class or real targets, an
//! optional ground-truth conditional `p(y|x)` for synthetic data, and the
//! desk-scale generators (Gaussian blobs, two spirals) plus split helpers.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::nn::Target;

/// Targets for a whole dataset.
#[derive(Clone, Debug, PartialEq)]
pub enum Targets {
    Classes { labels: Vec<usize>, num_classes: usize },
    Reals(Vec<f64>),
}

/// An in-memory dataset. Inputs are stored row-major (`n × input_dim`).
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    name: String,
    inputs: Vec<f64>,
    input_dim: usize,
    targets: Targets,
    /// Optional true conditional `p(y|x)` per row (`n × num_classes`).
    true_conditional: Option<Vec<f64>>,
}

impl Dataset {
    pub fn classification(
        name: impl Into<String>,
        inputs: Vec<f64>,
        input_dim: usize,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        let n = labels.len();
        if n == 0 {
            return Err(Error::InvalidArgument("dataset must be non-empty".into()));
        }
        if input_dim == 0 || inputs.len() != n * input_dim {
            return Err(Error::InvalidArgument(format!(
                "inputs length {} does not match {} rows × {} columns",
                inputs.len(),
                n,
                input_dim
            )));
        }
        if inputs.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite input entry".into()));
        }
        if let Some(bad) = labels.iter().find(|&&c| c >= num_classes) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Self {
            name: name.into(),
            inputs,
            input_dim,
            targets: Targets::Classes { labels, num_classes },
            true_conditional: None,
        })
    }

    pub fn regression(
        name: impl Into<String>,
        inputs: Vec<f64>,
        input_dim: usize,
        targets: Vec<f64>,
    ) -> Result<Self> {
        let n = targets.len();
        if n == 0 {
            return Err(Error::InvalidArgument("dataset must be non-empty".into()));
        }
        if input_dim == 0 || inputs.len() != n * input_dim {
            return Err(Error::InvalidArgument(format!(
                "inputs length {} does not match {} rows × {} columns",
                inputs.len(),
                n,
                input_dim
            )));
        }
        if inputs.iter().chain(targets.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite entry".into()));
        }
        Ok(Self {
            name: name.into(),
            inputs,
            input_dim,
            targets: Targets::Reals(targets),
            true_conditional: None,
        })
    }

    /// Attach a ground-truth conditional distribution (`n × num_classes`,
    /// each row a probability vector summing to 1 within 1e-9).
    pub fn with_true_conditional(mut self, cond: Vec<f64>) -> Result<Self> {
        let k = self
            .num_classes()
            .ok_or_else(|| Error::UnsupportedDataset("true conditional requires class targets".into()))?;
        if cond.len() != self.len() * k {
            return Err(Error::InvalidArgument(format!(
                "conditional length {} does not match {} rows × {} classes",
                cond.len(),
                self.len(),
                k
            )));
        }
        for (i, row) in cond.chunks(k).enumerate() {
            if row.iter().any(|&p| !(0.0..=1.0 + 1e-12).contains(&p)) {
                return Err(Error::InvalidArgument(format!(
                    "conditional row {i} has entries outside [0, 1]"
                )));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!(
                    "conditional row {i} sums to {s}, expected 1"
                )));
            }
        }
        self.true_conditional = Some(cond);
        Ok(self)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        match &self.targets {
            Targets::Classes { labels, .. } => labels.len(),
            Targets::Reals(t) => t.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_classes(&self) -> Option<usize> {
        match &self.targets {
            Targets::Classes { num_classes, .. } => Some(*num_classes),
            Targets::Reals(_) => None,
        }
    }

    pub fn targets(&self) -> &Targets {
        &self.targets
    }

    pub fn input_row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.input_dim..(i + 1) * self.input_dim]
    }

    pub fn target(&self, i: usize) -> Target {
        match &self.targets {
            Targets::Classes { labels, .. } => Target::Class(labels[i]),
            Targets::Reals(t) => Target::Real(t[i]),
        }
    }

    pub fn label(&self, i: usize) -> Option<usize> {
        match &self.targets {
            Targets::Classes { labels, .. } => Some(labels[i]),
            Targets::Reals(_) => None,
        }
    }

    pub fn true_conditional_row(&self, i: usize) -> Option<&[f64]> {
        let k = self.num_classes()?;
        self.true_conditional
            .as_ref()
            .map(|c| &c[i * k..(i + 1) * k])
    }

    pub fn has_true_conditional(&self) -> bool {
        self.true_conditional.is_some()
    }

    /// New dataset holding the given rows, in order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::InvalidArgument("empty subset".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::InvalidArgument(format!(
                "subset index {bad} out of range for {} rows",
                self.len()
            )));
        }
        let mut inputs = Vec::with_capacity(indices.len() * self.input_dim);
        for &i in indices {
            inputs.extend_from_slice(self.input_row(i));
        }
        let targets = match &self.targets {
            Targets::Classes { labels, num_classes } => Targets::Classes {
                labels: indices.iter().map(|&i| labels[i]).collect(),
                num_classes: *num_classes,
            },
            Targets::Reals(t) => Targets::Reals(indices.iter().map(|&i| t[i]).collect()),
        };
        let true_conditional = self.true_conditional.as_ref().map(|c| {
            let k = self.num_classes().unwrap();
            let mut out = Vec::with_capacity(indices.len() * k);
            for &i in indices {
                out.extend_from_slice(&c[i * k..(i + 1) * k]);
            }
            out
        });
        Ok(Self {
            name: self.name.clone(),
            inputs,
            input_dim: self.input_dim,
            targets,
            true_conditional,
        })
    }
}

/// Parameters for the Gaussian-blobs generator: `classes` isotropic
/// Gaussians with equal mixture weight, means equally spaced on a circle
/// of radius `center_scale` (padded with zeros beyond two dimensions).
#[derive(Clone, Debug)]
pub struct BlobsSpec {
    pub n: usize,
    pub classes: usize,
    pub dim: usize,
    pub center_scale: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for BlobsSpec {
    fn default() -> Self {
        Self {
            n: 900,
            classes: 3,
            dim: 2,
            center_scale: 3.0,
            noise: 1.0,
            seed: 0,
        }
    }
}

/// Class means for [`gaussian_blobs`], exposed so oracles can recompute
/// the conditional independently.
pub fn blob_centers(spec: &BlobsSpec) -> Vec<Vec<f64>> {
    (0..spec.classes)
        .map(|c| {
            let angle = 2.0 * std::f64::consts::PI * c as f64 / spec.classes as f64;
            let mut center = vec![0.0; spec.dim];
            center[0] = spec.center_scale * angle.cos();
            if spec.dim > 1 {
                center[1] = spec.center_scale * angle.sin();
            }
            center
        })
        .collect()
}

/// Sample a Gaussian-blobs classification set with its exact Bayes
/// conditional attached.
pub fn gaussian_blobs(spec: &BlobsSpec) -> Result<Dataset> {
    if spec.n == 0 || spec.classes < 2 || spec.dim == 0 {
        return Err(Error::InvalidArgument(format!(
            "blobs spec needs n ≥ 1, classes ≥ 2, dim ≥ 1 (got n={}, classes={}, dim={})",
            spec.n, spec.classes, spec.dim
        )));
    }
    if !(spec.noise > 0.0) {
        return Err(Error::InvalidArgument("blob noise must be positive".into()));
    }
    let centers = blob_centers(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut inputs = Vec::with_capacity(spec.n * spec.dim);
    let mut labels = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let c = rng.random_range(0..spec.classes);
        labels.push(c);
        for j in 0..spec.dim {
            let z: f64 = rng.sample(StandardNormal);
            inputs.push(centers[c][j] + spec.noise * z);
        }
    }
    let mut cond = Vec::with_capacity(spec.n * spec.classes);
    for i in 0..spec.n {
        let x = &inputs[i * spec.dim..(i + 1) * spec.dim];
        cond.extend_from_slice(&blob_conditional(&centers, spec.noise, x));
    }
    Dataset::classification("blobs", inputs, spec.dim, labels, spec.classes)?
        .with_true_conditional(cond)
}

/// Bayes conditional `p(y|x)` for equal-weight isotropic Gaussian blobs.
pub fn blob_conditional(centers: &[Vec<f64>], noise: f64, x: &[f64]) -> Vec<f64> {
    // p(y|x) ∝ exp(−‖x−μ_y‖² / (2σ²)); normalize via log-sum-exp.
    let logs: Vec<f64> = centers
        .iter()
        .map(|mu| {
            let d2: f64 = mu.iter().zip(x).map(|(m, v)| (v - m) * (v - m)).sum();
            -d2 / (2.0 * noise * noise)
        })
        .collect();
    let lse = crate::nn::log_sum_exp(&logs);
    logs.iter().map(|l| (l - lse).exp()).collect()
}

/// Two interleaved spirals, the classic non-linearly-separable 2-class set.
/// No analytic conditional is attached.
pub fn two_spirals(n: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::InvalidArgument("two spirals need n ≥ 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = Vec::with_capacity(n * 2);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % 2;
        let t = 0.25 + 3.0 * std::f64::consts::PI * rng.random::<f64>();
        let r = t / (3.0 * std::f64::consts::PI) * 3.0;
        let (sx, sy) = (r * t.cos(), r * t.sin());
        let sign = if class == 0 { 1.0 } else { -1.0 };
        let nx: f64 = rng.sample(StandardNormal);
        let ny: f64 = rng.sample(StandardNormal);
        inputs.push(sign * sx + noise * nx);
        inputs.push(sign * sy + noise * ny);
        labels.push(class);
    }
    Dataset::classification("two-spirals", inputs, 2, labels, 2)
}

/// Deterministic three-way split of `0..n` by fractions (train, validation,
/// test). Fractions must be positive and sum to 1 within 1e-9. The three
/// index lists partition `0..n`.
pub fn split_indices(
    n: usize,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    let (a, b, c) = fractions;
    if !(a > 0.0 && b > 0.0 && c > 0.0) {
        return Err(Error::InvalidArgument(
            "split fractions must all be positive".into(),
        ));
    }
    if (a + b + c - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split fractions sum to {}, expected 1",
            a + b + c
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let n_train = ((n as f64) * a).round() as usize;
    let n_val = ((n as f64) * b).round() as usize;
    let n_train = n_train.min(n.saturating_sub(2)).max(1);
    let n_val = n_val.min(n - n_train - 1).max(1);
    let train = idx[..n_train].to_vec();
    let val = idx[n_train..n_train + n_val].to_vec();
    let test = idx[n_train + n_val..].to_vec();
    if train.is_empty() || val.is_empty() || test.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "dataset of {n} rows is too small for a three-way split"
        )));
    }
    Ok((train, val, test))
}

/// Split a dataset into (train, validation, test) subsets.
pub fn split_three(
    data: &Dataset,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset)> {
    let (tr, va, te) = split_indices(data.len(), fractions, seed)?;
    Ok((data.subset(&tr)?, data.subset(&va)?, data.subset(&te)?))
}
