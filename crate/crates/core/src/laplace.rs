//! Temperature-scaled Laplace approximations to the posterior over
//! network weights.
//!
//! The curvature at a MAP estimate is summarized by the generalized
//! Gauss–Newton matrix `H = Σ_i J_iᵀ Λ_i J_i` (sum over samples), where
//! `J_i` is the per-sample weight Jacobian and `Λ = −∇²_ff log p(y;f)` the
//! output-space noise curvature (softmax head: `diag(p) − ppᵀ`; Gaussian
//! head: `I/σ²` with the crate's unit-variance convention). Two summaries
//! are kept:
//!
//! * the exact trace `h = tr(H)`, driving the isotropic posterior
//!   `σ²_ρ̂(λ) = (λh/d + 1/σ²_π)⁻¹`;
//! * per-layer Kronecker factors `A_l` (input second moments, mean over
//!   samples, with an appended 1 for the bias) and `G_l` (backpropagated
//!   output-gradient second moments, summed over samples), so the layer's
//!   GGN block is approximated by the Kronecker product of `G_l` and `A_l`.
//!
//! With the flat layout of [`crate::nn`] (row `k` of a layer contiguous,
//! bias last), the Kronecker approximation of the block entry at
//! (weight `(k₁,j₁)`, weight `(k₂,j₂)`) is `G_l[k₁,k₂] · A_l[j₁,j₂]`,
//! where `j = in` denotes the bias column. Tempered covariances are
//! realized per eigendirection: eigenvalue `(λ·γ_k·α_j + 1/σ²_π)⁻¹` along
//! `u^G_k ⊗ u^A_j`, which keeps sampling and log-determinants `O(d·width)`
//! instead of requiring a dense `d × d` Cholesky.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{forward_trace, output_sensitivities, softmax, ModelParams, OutputHead};
use crate::train::{train_metrics, MapEstimate};

/// Minimum factor eigenvalue below which a KFAC factor counts as singular
/// and is regularized by `+KFAC_JITTER·I` before use.
const SINGULAR_EIG_THRESHOLD: f64 = 1e-12;
const KFAC_JITTER: f64 = 1e-8;

/// Kronecker factors of one layer's GGN block.
#[derive(Clone, Debug)]
pub struct LayerFactors {
    /// `(in+1) × (in+1)` input second-moment factor, mean over samples.
    pub a: DMatrix<f64>,
    /// `out × out` output-gradient second-moment factor, sum over samples.
    pub g: DMatrix<f64>,
}

/// Curvature at a MAP estimate: the exact GGN trace and, optionally,
/// per-layer Kronecker factors.
#[derive(Clone, Debug)]
pub struct CurvatureSummary {
    /// Exact GGN trace `h = Σ_{i,k} Λ_kk ‖∇_w f_k(x_i)‖²` ≥ 0.
    pub h: f64,
    pub kfac: Option<Vec<LayerFactors>>,
    /// Parameter count.
    pub d: usize,
    /// Number of samples the curvature was accumulated over.
    pub n: usize,
}

/// Output-space curvature `Λ(y;f)` for the given head; depends on the
/// output only (not the label) for both supported heads.
fn lambda_matrix(head: OutputHead, output: &[f64]) -> DMatrix<f64> {
    match head {
        OutputHead::SoftmaxCategorical => {
            let p = softmax(output);
            let k = p.len();
            DMatrix::from_fn(k, k, |r, c| {
                if r == c {
                    p[r] * (1.0 - p[r])
                } else {
                    -p[r] * p[c]
                }
            })
        }
        OutputHead::Gaussian => DMatrix::identity(output.len(), output.len()),
    }
}

fn check_compatible(map: &MapEstimate, data: &Dataset) -> Result<()> {
    let arch = map.params.arch();
    if data.input_dim() != arch.input_dim() {
        return Err(Error::InvalidArgument(format!(
            "dataset input dim {} does not match architecture input dim {}",
            data.input_dim(),
            arch.input_dim()
        )));
    }
    if data.is_empty() {
        return Err(Error::InvalidArgument("dataset is empty".into()));
    }
    Ok(())
}

/// Exact GGN trace. Accumulated layer by layer from output sensitivities
/// `B_l = ∂f/∂z_l`: `h = Σ_i Σ_l ‖ã_{l-1,i}‖² Σ_k Λ_kk ‖B_l[k,·]‖²`,
/// which equals the per-sample-Jacobian definition without materializing
/// any Jacobian.
pub fn ggn_trace(map: &MapEstimate, data: &Dataset) -> Result<CurvatureSummary> {
    check_compatible(map, data)?;
    let params = &map.params;
    let arch = params.arch();
    let mut h = 0.0;
    for i in 0..data.len() {
        let trace = forward_trace(params, data.input_row(i))?;
        let bs = output_sensitivities(params, &trace);
        let lam = lambda_matrix(arch.output_head(), trace.output());
        let num_out = arch.output_dim();
        for l in 0..arch.num_layers() {
            let (_, out_dim) = arch.layer_shape(l);
            let a_prev = &trace.activations[l];
            let a_sq: f64 = a_prev.iter().map(|v| v * v).sum::<f64>() + 1.0;
            let b = &bs[l];
            let mut s = 0.0;
            for k in 0..num_out {
                let row = &b[k * out_dim..(k + 1) * out_dim];
                let row_sq: f64 = row.iter().map(|v| v * v).sum();
                s += lam[(k, k)] * row_sq;
            }
            h += a_sq * s;
        }
    }
    Ok(CurvatureSummary {
        h,
        kfac: None,
        d: params.dim(),
        n: data.len(),
    })
}

/// Kronecker factors per layer plus the exact trace.
///
/// `A_l = (1/n) Σ_i ã_i ã_iᵀ` over layer inputs with an appended 1;
/// `G_l = Σ_i B_{l,i}ᵀ Λ_i B_{l,i}`, the exact expectation of the
/// backpropagated output-gradient second moment under the model's
/// predictive distribution. For a single sample the product recovers the
/// exact GGN block.
pub fn kfac_factors(map: &MapEstimate, data: &Dataset) -> Result<CurvatureSummary> {
    check_compatible(map, data)?;
    let params = &map.params;
    let arch = params.arch();
    let num_layers = arch.num_layers();
    let num_out = arch.output_dim();
    let mut factors: Vec<LayerFactors> = (0..num_layers)
        .map(|l| {
            let (in_dim, out_dim) = arch.layer_shape(l);
            LayerFactors {
                a: DMatrix::zeros(in_dim + 1, in_dim + 1),
                g: DMatrix::zeros(out_dim, out_dim),
            }
        })
        .collect();
    let mut h = 0.0;
    for i in 0..data.len() {
        let trace = forward_trace(params, data.input_row(i))?;
        let bs = output_sensitivities(params, &trace);
        let lam = lambda_matrix(arch.output_head(), trace.output());
        for l in 0..num_layers {
            let (in_dim, out_dim) = arch.layer_shape(l);
            let a_prev = &trace.activations[l];
            // A ← A + ã ãᵀ (bias slot last).
            for r in 0..=in_dim {
                let ar = if r < in_dim { a_prev[r] } else { 1.0 };
                for c in 0..=in_dim {
                    let ac = if c < in_dim { a_prev[c] } else { 1.0 };
                    factors[l].a[(r, c)] += ar * ac;
                }
            }
            // G ← G + BᵀΛB.
            let b = &bs[l];
            let mut lam_b = DMatrix::zeros(num_out, out_dim);
            for r in 0..num_out {
                for c in 0..out_dim {
                    let mut acc = 0.0;
                    for k in 0..num_out {
                        acc += lam[(r, k)] * b[k * out_dim + c];
                    }
                    lam_b[(r, c)] = acc;
                }
            }
            for r in 0..out_dim {
                for c in 0..out_dim {
                    let mut acc = 0.0;
                    for k in 0..num_out {
                        acc += b[k * out_dim + r] * lam_b[(k, c)];
                    }
                    factors[l].g[(r, c)] += acc;
                }
            }
            let a_sq: f64 = a_prev.iter().map(|v| v * v).sum::<f64>() + 1.0;
            let mut s = 0.0;
            for k in 0..num_out {
                let row = &b[k * out_dim..(k + 1) * out_dim];
                s += lam[(k, k)] * row.iter().map(|v| v * v).sum::<f64>();
            }
            h += a_sq * s;
        }
    }
    let inv_n = 1.0 / data.len() as f64;
    for f in &mut factors {
        f.a *= inv_n;
    }
    Ok(CurvatureSummary {
        h,
        kfac: Some(factors),
        d: params.dim(),
        n: data.len(),
    })
}

/// Which covariance structure to fit.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FitKind {
    Isotropic,
    Kfac,
}

/// Eigendecomposed tempered KFAC covariance of one layer.
#[derive(Clone, Debug)]
pub struct KfacLayerPosterior {
    /// Eigenvectors of `A_l`, `(in+1) × (in+1)`.
    pub u_a: DMatrix<f64>,
    /// Eigenvalues of `A_l` (after any regularization), length `in+1`.
    pub eig_a: DVector<f64>,
    /// Eigenvectors of `G_l`, `out × out`.
    pub u_g: DMatrix<f64>,
    /// Eigenvalues of `G_l`, length `out`.
    pub eig_g: DVector<f64>,
    /// Whether the `+1e-8·I` jitter was applied to a singular factor.
    pub regularized: bool,
}

impl KfacLayerPosterior {
    /// Posterior variance along eigendirection `(k, j)`.
    pub fn variance(&self, lambda: f64, prior_variance: f64, k: usize, j: usize) -> f64 {
        1.0 / (lambda * self.eig_g[k] * self.eig_a[j] + 1.0 / prior_variance)
    }
}

/// Covariance structure of a tempered posterior.
#[derive(Clone, Debug)]
pub enum PosteriorCovariance {
    Isotropic { variance: f64 },
    Kfac { layers: Vec<KfacLayerPosterior> },
}

/// A Gaussian posterior approximation `N(w_ρ̂, Σ(λ))` with its temperature
/// and prior variance.
#[derive(Clone, Debug)]
pub struct TemperedPosterior {
    pub mean: ModelParams,
    pub covariance: PosteriorCovariance,
    pub lambda: f64,
    pub prior_variance: f64,
}

impl TemperedPosterior {
    pub fn dim(&self) -> usize {
        self.mean.dim()
    }

    /// The isotropic variance `σ²_ρ̂(λ)`, if this is an isotropic fit.
    pub fn isotropic_variance(&self) -> Option<f64> {
        match &self.covariance {
            PosteriorCovariance::Isotropic { variance } => Some(*variance),
            PosteriorCovariance::Kfac { .. } => None,
        }
    }

    /// Covariance eigenvalues in a fixed (layer-major) order; the isotropic
    /// case repeats `σ²_ρ̂` `d` times.
    pub fn covariance_eigenvalues(&self) -> Vec<f64> {
        match &self.covariance {
            PosteriorCovariance::Isotropic { variance } => vec![*variance; self.dim()],
            PosteriorCovariance::Kfac { layers } => {
                let mut out = Vec::with_capacity(self.dim());
                for layer in layers {
                    for k in 0..layer.eig_g.len() {
                        for j in 0..layer.eig_a.len() {
                            out.push(layer.variance(self.lambda, self.prior_variance, k, j));
                        }
                    }
                }
                out
            }
        }
    }
}

/// The isotropic tempered variance `σ²_ρ̂(λ) = (λh/d + 1/σ²_π)⁻¹`.
pub fn isotropic_variance(h: f64, d: usize, lambda: f64, prior_variance: f64) -> f64 {
    1.0 / (lambda * h / d as f64 + 1.0 / prior_variance)
}

/// Fit the temperature-scaled Laplace posterior around the MAP.
pub fn fit_tempered_posterior(
    map: &MapEstimate,
    curvature: &CurvatureSummary,
    lambda: f64,
    prior_variance: f64,
    kind: FitKind,
) -> Result<TemperedPosterior> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "temperature λ must be positive, got {lambda}"
        )));
    }
    if !(prior_variance > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "prior variance must be positive, got {prior_variance}"
        )));
    }
    if curvature.d != map.params.dim() {
        return Err(Error::InvalidArgument(format!(
            "curvature dimension {} does not match parameter count {}",
            curvature.d,
            map.params.dim()
        )));
    }
    let covariance = match kind {
        FitKind::Isotropic => PosteriorCovariance::Isotropic {
            variance: isotropic_variance(curvature.h, curvature.d, lambda, prior_variance),
        },
        FitKind::Kfac => {
            let factors = curvature.kfac.as_ref().ok_or_else(|| {
                Error::InvalidArgument(
                    "KFAC posterior requested but the curvature has no factors".into(),
                )
            })?;
            let layers = factors
                .iter()
                .map(|f| {
                    let (u_a, eig_a, reg_a) = decompose_factor(&f.a);
                    let (u_g, eig_g, reg_g) = decompose_factor(&f.g);
                    KfacLayerPosterior {
                        u_a,
                        eig_a,
                        u_g,
                        eig_g,
                        regularized: reg_a || reg_g,
                    }
                })
                .collect();
            PosteriorCovariance::Kfac { layers }
        }
    };
    Ok(TemperedPosterior {
        mean: map.params.clone(),
        covariance,
        lambda,
        prior_variance,
    })
}

/// Symmetric eigendecomposition with the singular-factor jitter rule:
/// factors whose smallest eigenvalue falls below the threshold get all
/// eigenvalues shifted by `+1e-8` (the `+1e-8·I` regularization) and are
/// flagged.
fn decompose_factor(m: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>, bool) {
    let eig = m.clone().symmetric_eigen();
    let mut values = eig.eigenvalues;
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let regularized = min < SINGULAR_EIG_THRESHOLD;
    if regularized {
        for v in values.iter_mut() {
            *v = (*v).max(0.0) + KFAC_JITTER;
        }
    }
    (eig.eigenvectors, values, regularized)
}

/// Draw `count` i.i.d. weight vectors from the posterior. Deterministic
/// given `seed`; Gaussian draws happen in a fixed coordinate order.
pub fn sample_weights(
    post: &TemperedPosterior,
    seed: u64,
    count: usize,
) -> Result<Vec<ModelParams>> {
    if count == 0 {
        return Err(Error::InvalidArgument("sample count must be ≥ 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = post.dim();
    let mean = post.mean.weights();
    let arch = post.mean.arch();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut w = mean.to_vec();
        match &post.covariance {
            PosteriorCovariance::Isotropic { variance } => {
                let sd = variance.sqrt();
                for v in w.iter_mut().take(d) {
                    let z: f64 = rng.sample(StandardNormal);
                    *v += sd * z;
                }
            }
            PosteriorCovariance::Kfac { layers } => {
                for (l, layer) in layers.iter().enumerate() {
                    let (in_dim, out_dim) = arch.layer_shape(l);
                    let cols = in_dim + 1;
                    // S[k,j] = √v_kj · ε_kj in the eigenbasis, then
                    // ΔW̃ = U_G S U_Aᵀ maps back to weight space.
                    let mut s = DMatrix::zeros(out_dim, cols);
                    for k in 0..out_dim {
                        for j in 0..cols {
                            let z: f64 = rng.sample(StandardNormal);
                            let v = layer.variance(post.lambda, post.prior_variance, k, j);
                            s[(k, j)] = v.sqrt() * z;
                        }
                    }
                    let delta = &layer.u_g * s * layer.u_a.transpose();
                    for k in 0..out_dim {
                        for j in 0..in_dim {
                            w[arch.weight_index(l, k, j)] += delta[(k, j)];
                        }
                        w[arch.bias_index(l, k)] += delta[(k, in_dim)];
                    }
                }
            }
        }
        out.push(post.mean.with_weights(w)?);
    }
    Ok(out)
}

/// Closed-form KL divergence from the posterior to the Gaussian prior
/// `N(prior_mean, σ²_π I)`.
///
/// Isotropic case:
/// `KL = ½ (d σ²_ρ̂/σ²_π + ‖w_ρ̂−w_π‖²/σ²_π − d − d ln σ²_ρ̂ + d ln σ²_π)`.
/// The KFAC case applies the same per-direction formula over the
/// covariance eigenvalues. Each direction contributes
/// `½ (r − 1 − ln r)` with `r = v/σ²_π`, which is nonnegative by
/// construction, so the result is never negative.
pub fn gaussian_kl(
    post: &TemperedPosterior,
    prior_mean: &ModelParams,
    prior_variance: f64,
) -> Result<f64> {
    if !(prior_variance > 0.0) {
        return Err(Error::InvalidArgument("prior variance must be positive".into()));
    }
    if prior_mean.dim() != post.dim() {
        return Err(Error::InvalidArgument(format!(
            "prior mean dimension {} does not match posterior dimension {}",
            prior_mean.dim(),
            post.dim()
        )));
    }
    let dist_sq: f64 = post
        .mean
        .weights()
        .iter()
        .zip(prior_mean.weights())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let mut kl = dist_sq / (2.0 * prior_variance);
    for v in post.covariance_eigenvalues() {
        let x = v / prior_variance - 1.0;
        kl += 0.5 * (x - x.ln_1p());
    }
    Ok(kl)
}

/// Laplace marginal-likelihood (evidence) surrogate at a fixed MAP, as a
/// function of the prior variance, using the isotropic `h/d` curvature:
///
/// `log p(Y|X,σ²_π) ≈ −n L̂_nll(w_ρ̂) − ‖w_ρ̂‖²/(2σ²_π)
///                    − (d/2) ln σ²_π − (d/2) ln(h/d + 1/σ²_π)`.
pub fn laplace_evidence(
    mean_nll: f64,
    weight_norm_sq: f64,
    h: f64,
    d: usize,
    n: usize,
    prior_variance: f64,
) -> f64 {
    let d_f = d as f64;
    -(n as f64) * mean_nll
        - weight_norm_sq / (2.0 * prior_variance)
        - 0.5 * d_f * prior_variance.ln()
        - 0.5 * d_f * (h / d_f + 1.0 / prior_variance).ln()
}

/// Pick the candidate prior variance maximizing the Laplace evidence at
/// the given MAP. Ties break toward the smaller candidate.
pub fn select_prior_variance(
    map: &MapEstimate,
    data: &Dataset,
    candidate_grid: &[f64],
) -> Result<f64> {
    if candidate_grid.is_empty() {
        return Err(Error::InvalidArgument("prior variance grid is empty".into()));
    }
    if let Some(bad) = candidate_grid.iter().find(|&&s| !(s > 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "prior variance candidates must be positive, got {bad}"
        )));
    }
    let curvature = ggn_trace(map, data)?;
    let (mean_nll, _) = train_metrics(&map.params, data)?;
    let norm_sq: f64 = map.params.weights().iter().map(|w| w * w).sum();
    let mut best = candidate_grid[0];
    let mut best_ev = f64::NEG_INFINITY;
    for &s in candidate_grid {
        let ev = laplace_evidence(mean_nll, norm_sq, curvature.h, curvature.d, curvature.n, s);
        if ev > best_ev || (ev == best_ev && s < best) {
            best = s;
            best_ev = ev;
        }
    }
    Ok(best)
}
