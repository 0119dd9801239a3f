//! The linearized-regression synthetic world and its closed-form
//! high-probability risk bound.
//!
//! The generative model: per-sample gradient vectors are drawn from a
//! Gaussian mixture `Σ_i φ_i N(μ_i, σ²_{x,i} I)`, labels follow
//! `y = f(x; w_ρ̂) + ∇f(x; w_ρ̂)ᵀ (w_* − w_ρ̂) + ε` with
//! `ε ∼ N(0, σ²_ε)`, the prior over weights is `N(w_π, σ²_π I)`, and the
//! posterior is `N(w_ρ̂, σ²_ρ̂(λ) I)` around a fixed posterior mean. Under
//! a Gaussian likelihood with variance σ², twice the expected posterior
//! NLL risk is bounded, with probability ≥ 1−δ over the data draw and for
//! `λ ∈ (0, 1/c)` with `c = 2nσ²_x σ²_π`, by the sum of
//!
//! * the scaled training residual `‖y − f(X;w_ρ̂)‖²/(nσ²)`,
//! * the likelihood constant `ln(2πσ²)`,
//! * the label-noise variance `σ²_ε`,
//! * a curvature term `(h/(2nσ²)) · (λh/(dσ²) + 1/σ²_π)⁻¹`,
//! * a mixture term `2σ²_x(σ²_π d + ‖w_*‖²) / (1 − 2λnσ²_x σ²_π)`, and
//! * `(1/(λn)) [ (d/σ²_π)(λh/(dσ²) + 1/(2σ²_π))⁻¹ + ‖w_ρ̂−w_π‖²/σ²_π − d
//!   + d ln(λh/(dσ²) + 1/σ²_π) + d ln σ²_π + 2 ln(1/δ) ]`,
//!
//! where `h = Σ_{i,j} (∇f(x_i)_j)²` is the raw curvature (no 1/σ² inside)
//! and `σ²_x = Σ_j φ_j σ²_{x,j}` uses the component variances only.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::bounds::{BoundKind, BoundReport};
use crate::error::{Error, Result};

/// One Gaussian mixture component for the gradient distribution.
#[derive(Clone, Debug)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub variance: f64,
}

/// Parameters of the synthetic generative model.
#[derive(Clone, Debug)]
pub struct SyntheticWorld {
    pub d: usize,
    pub n: usize,
    /// True weights `w_*` of the labeling function.
    pub w_star: Vec<f64>,
    /// Prior mean `w_π`.
    pub w_prior: Vec<f64>,
    pub prior_variance: f64,
    pub mixture: Vec<MixtureComponent>,
    /// Label noise variance `σ²_ε`.
    pub noise_variance: f64,
    /// Likelihood variance `σ²`.
    pub likelihood_variance: f64,
    /// Fixed posterior mean `w_ρ̂`.
    pub w_posterior: Vec<f64>,
}

impl SyntheticWorld {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.n == 0 {
            return Err(Error::InvalidArgument("world needs d ≥ 1 and n ≥ 1".into()));
        }
        for (name, v) in [
            ("w_star", &self.w_star),
            ("w_prior", &self.w_prior),
            ("w_posterior", &self.w_posterior),
        ] {
            if v.len() != self.d {
                return Err(Error::InvalidArgument(format!(
                    "{name} has length {}, expected d = {}",
                    v.len(),
                    self.d
                )));
            }
        }
        if self.mixture.is_empty() {
            return Err(Error::InvalidArgument("mixture must be non-empty".into()));
        }
        let total: f64 = self.mixture.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "mixture weights sum to {total}, expected 1"
            )));
        }
        for (i, c) in self.mixture.iter().enumerate() {
            if c.weight < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "mixture weight {i} is negative"
                )));
            }
            if !(c.variance > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "mixture variance {i} must be positive"
                )));
            }
            if c.mean.len() != self.d {
                return Err(Error::InvalidArgument(format!(
                    "mixture mean {i} has wrong dimension"
                )));
            }
        }
        for (name, v) in [
            ("prior variance", self.prior_variance),
            ("noise variance", self.noise_variance),
            ("likelihood variance", self.likelihood_variance),
        ] {
            if !(v > 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    /// The gradient variance `σ²_x = Σ_j φ_j σ²_{x,j}` (component
    /// variances only; the means enter the risk, not the constraint).
    pub fn gradient_variance(&self) -> f64 {
        self.mixture.iter().map(|c| c.weight * c.variance).sum()
    }

    /// The admissibility constant `c = 2 n σ²_x σ²_π`; temperatures must
    /// satisfy `λ < 1/c`.
    pub fn constraint_constant(&self) -> f64 {
        2.0 * self.n as f64 * self.gradient_variance() * self.prior_variance
    }

    /// The tempered posterior variance this world induces:
    /// `σ²_ρ̂(λ) = (λh/(dσ²) + 1/σ²_π)⁻¹` for raw curvature `h`.
    pub fn posterior_variance(&self, h: f64, lambda: f64) -> f64 {
        1.0 / (lambda * h / (self.d as f64 * self.likelihood_variance) + 1.0 / self.prior_variance)
    }

    /// Second moment `M = Σ_j φ_j (μ_j μ_jᵀ + σ²_{x,j} I)` of the gradient
    /// distribution, row-major `d × d`.
    pub fn gradient_second_moment(&self) -> Vec<f64> {
        let d = self.d;
        let mut m = vec![0.0; d * d];
        for c in &self.mixture {
            for r in 0..d {
                for s in 0..d {
                    m[r * d + s] += c.weight * c.mean[r] * c.mean[s];
                }
                m[r * d + r] += c.weight * c.variance;
            }
        }
        m
    }
}

/// One draw of the world: gradient rows (`n × d` row-major), the base
/// outputs `f(x_i; w_ρ̂)`, and the labels.
#[derive(Clone, Debug)]
pub struct WorldData {
    pub gradients: Vec<f64>,
    pub base_outputs: Vec<f64>,
    pub labels: Vec<f64>,
}

impl WorldData {
    /// Raw curvature `h = Σ_{i,j} g_{ij}²` of this draw.
    pub fn curvature(&self) -> f64 {
        self.gradients.iter().map(|g| g * g).sum()
    }

    /// Squared training residual `‖y − f(X; w_ρ̂)‖²`.
    pub fn residual_sq(&self) -> f64 {
        self.labels
            .iter()
            .zip(&self.base_outputs)
            .map(|(y, f)| (y - f) * (y - f))
            .sum()
    }
}

/// Sample `n` rows of the generative model. Deterministic given `seed`.
/// Base outputs are standard-normal draws; they cancel out of residuals
/// and risks, which depend on the data only through `y − f(X; w_ρ̂)`.
pub fn generate_world_data(world: &SyntheticWorld, n: usize, seed: u64) -> Result<WorldData> {
    world.validate()?;
    if n == 0 {
        return Err(Error::InvalidArgument("n must be ≥ 1".into()));
    }
    let d = world.d;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gradients = Vec::with_capacity(n * d);
    let mut base_outputs = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let shift: Vec<f64> = world
        .w_star
        .iter()
        .zip(&world.w_posterior)
        .map(|(s, p)| s - p)
        .collect();
    for _ in 0..n {
        // Pick a component, then sample the gradient around its mean.
        let u: f64 = rng.random::<f64>();
        let mut acc = 0.0;
        let mut comp = world.mixture.len() - 1;
        for (j, c) in world.mixture.iter().enumerate() {
            acc += c.weight;
            if u < acc {
                comp = j;
                break;
            }
        }
        let c = &world.mixture[comp];
        let sd = c.variance.sqrt();
        let start = gradients.len();
        for j in 0..d {
            let z: f64 = rng.sample(StandardNormal);
            gradients.push(c.mean[j] + sd * z);
        }
        let g = &gradients[start..start + d];
        let f: f64 = rng.sample(StandardNormal);
        let eps: f64 = {
            let z: f64 = rng.sample(StandardNormal);
            world.noise_variance.sqrt() * z
        };
        let dy: f64 = g.iter().zip(&shift).map(|(gi, si)| gi * si).sum();
        base_outputs.push(f);
        labels.push(f + dy + eps);
    }
    Ok(WorldData {
        gradients,
        base_outputs,
        labels,
    })
}

/// The closed-form bound on `2 E_{w∼ρ̂} L_D^nll(w)` for this world,
/// assembled term by term (see the module docs). Fails with the
/// constraint constant named when `λ ≥ 1/c`.
pub fn proposition_bound(
    world: &SyntheticWorld,
    train_residual_sq: f64,
    h: f64,
    lambda: f64,
    delta: f64,
) -> Result<BoundReport> {
    world.validate()?;
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "δ must lie in (0, 1], got {delta}"
        )));
    }
    if !(h >= 0.0) {
        return Err(Error::InvalidArgument(format!("curvature h must be ≥ 0, got {h}")));
    }
    let c = world.constraint_constant();
    if !(lambda > 0.0) || lambda >= 1.0 / c {
        return Err(Error::ConstraintViolation(format!(
            "λ must lie in (0, 1/c) with c = 2nσ²_xσ²_π = {c}; got λ = {lambda}"
        )));
    }
    let n = world.n as f64;
    let d = world.d as f64;
    let s2 = world.likelihood_variance;
    let s2_pi = world.prior_variance;
    let s2_x = world.gradient_variance();
    let w_star_sq: f64 = world.w_star.iter().map(|w| w * w).sum();
    let mean_dist_sq: f64 = world
        .w_posterior
        .iter()
        .zip(&world.w_prior)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();

    let residual_term = train_residual_sq / (n * s2);
    let likelihood_const = (2.0 * std::f64::consts::PI * s2).ln();
    let noise_term = world.noise_variance;
    let curvature_term = h / (2.0 * n * s2) / (lambda * h / (d * s2) + 1.0 / s2_pi);
    let mixture_term = 2.0 * s2_x * (s2_pi * d + w_star_sq) / (1.0 - 2.0 * lambda * n * s2_x * s2_pi);
    let kl_like = d / s2_pi / (lambda * h / (d * s2) + 0.5 / s2_pi) + mean_dist_sq / s2_pi - d
        + d * (lambda * h / (d * s2) + 1.0 / s2_pi).ln()
        + d * s2_pi.ln();
    let bracket_term = (kl_like + 2.0 * (1.0 / delta).ln()) / (lambda * n);

    let terms = vec![
        ("residual", residual_term),
        ("likelihood_const", likelihood_const),
        ("label_noise", noise_term),
        ("curvature", curvature_term),
        ("mixture", mixture_term),
        ("bracket", bracket_term),
    ];
    let value: f64 = terms.iter().map(|(_, v)| v).sum();
    Ok(BoundReport {
        kind: BoundKind::Proposition,
        lambda,
        delta,
        empirical_risk: residual_term,
        kl: kl_like / 2.0,
        moment_or_complexity: mixture_term,
        value,
        n: world.n,
        terms,
    })
}

/// Monte-Carlo oracle for the bound's left-hand side: averages the exact
/// per-weight risk
/// `½ln(2πσ²) + [(w_*−w)ᵀ M (w_*−w) + σ²_ε] / (2σ²)`
/// over `w ∼ N(w_ρ̂, σ²_ρ̂ I)` and doubles it, with `M` the gradient
/// second moment. Deterministic given `seed`.
pub fn mc_true_risk(
    world: &SyntheticWorld,
    posterior_variance: f64,
    num_weight_samples: usize,
    seed: u64,
) -> Result<f64> {
    world.validate()?;
    if num_weight_samples == 0 {
        return Err(Error::InvalidArgument("num_weight_samples must be ≥ 1".into()));
    }
    if !(posterior_variance >= 0.0) {
        return Err(Error::InvalidArgument(
            "posterior variance must be nonnegative".into(),
        ));
    }
    let d = world.d;
    let m = world.gradient_second_moment();
    let s2 = world.likelihood_variance;
    let const_term = 0.5 * (2.0 * std::f64::consts::PI * s2).ln();
    let sd = posterior_variance.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    let mut u = vec![0.0; d];
    for _ in 0..num_weight_samples {
        for (j, uj) in u.iter_mut().enumerate() {
            let z: f64 = rng.sample(StandardNormal);
            *uj = world.w_star[j] - (world.w_posterior[j] + sd * z);
        }
        let mut quad = 0.0;
        for r in 0..d {
            let mut acc = 0.0;
            for s in 0..d {
                acc += m[r * d + s] * u[s];
            }
            quad += u[r] * acc;
        }
        total += const_term + (quad + world.noise_variance) / (2.0 * s2);
    }
    Ok(2.0 * total / num_weight_samples as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn simple_world() -> SyntheticWorld {
        SyntheticWorld {
            d: 2,
            n: 50,
            w_star: vec![0.5, -0.3],
            w_prior: vec![0.0, 0.0],
            prior_variance: 1.0,
            mixture: vec![MixtureComponent {
                weight: 1.0,
                mean: vec![0.0, 0.0],
                variance: 0.001,
            }],
            noise_variance: 1.0,
            likelihood_variance: 1.0,
            w_posterior: vec![0.4, -0.2],
        }
    }

    #[test]
    fn labels_equal_base_outputs_without_noise_or_shift() {
        let mut w = simple_world();
        w.noise_variance = 1e-300; // validate() demands positivity
        w.w_star = w.w_posterior.clone();
        let data = generate_world_data(&w, 20, 1).unwrap();
        for (y, f) in data.labels.iter().zip(&data.base_outputs) {
            assert!((y - f).abs() < 1e-140);
        }
    }

    #[test]
    fn single_component_gradient_covariance_is_isotropic() {
        let mut w = simple_world();
        w.mixture = vec![MixtureComponent {
            weight: 1.0,
            mean: vec![0.0, 0.0],
            variance: 1.0,
        }];
        let n = 100_000;
        let data = generate_world_data(&w, n, 3).unwrap();
        let d = w.d;
        for r in 0..d {
            for s in 0..d {
                let mut acc = 0.0;
                for i in 0..n {
                    acc += data.gradients[i * d + r] * data.gradients[i * d + s];
                }
                let cov = acc / n as f64;
                let expect = if r == s { 1.0 } else { 0.0 };
                assert!(
                    (cov - expect).abs() < 0.05,
                    "cov[{r},{s}] = {cov}, expected {expect}"
                );
            }
        }
    }

    #[test]
    fn world_data_deterministic_in_seed() {
        let w = simple_world();
        let a = generate_world_data(&w, 30, 9).unwrap();
        let b = generate_world_data(&w, 30, 9).unwrap();
        assert_eq!(a.gradients, b.gradients);
        assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn bound_diverges_at_the_pole() {
        let w = simple_world();
        let c = w.constraint_constant();
        let lambda = (1.0 - 1e-9) / c;
        let r = proposition_bound(&w, 10.0, 5.0, lambda, 0.05).unwrap();
        assert!(r.value > 1e6, "value = {}", r.value);
    }

    #[test]
    fn admissibility_error_names_the_constant() {
        let w = simple_world();
        let c = w.constraint_constant();
        let err = proposition_bound(&w, 10.0, 5.0, 1.0 / c, 0.05).unwrap_err();
        match err {
            Error::ConstraintViolation(msg) => {
                assert!(msg.contains(&format!("{c}")), "message: {msg}")
            }
            other => panic!("expected constraint violation, got {other:?}"),
        }
    }

    #[test]
    fn algebraic_reduction_with_vanishing_pieces() {
        // h = 0, w_ρ̂ = w_π, w_* = 0, μ_i = 0: every h-dependent and
        // mean-distance piece drops and the bracket collapses to
        // d + 2 ln(1/δ) because (d/σ²_π)(2σ²_π) − d = d and the two log
        // terms cancel.
        let mut w = simple_world();
        w.w_star = vec![0.0, 0.0];
        w.w_posterior = w.w_prior.clone();
        let (lambda, delta) = (0.3, 0.05);
        let residual = 7.0;
        let r = proposition_bound(&w, residual, 0.0, lambda, delta).unwrap();
        let n = w.n as f64;
        let d = w.d as f64;
        let s2_x = w.gradient_variance();
        let expect = residual / (n * w.likelihood_variance)
            + (2.0 * std::f64::consts::PI * w.likelihood_variance).ln()
            + w.noise_variance
            + 2.0 * s2_x * w.prior_variance * d
                / (1.0 - 2.0 * lambda * n * s2_x * w.prior_variance)
            + (d + 2.0 * (1.0 / delta).ln()) / (lambda * n);
        assert!((r.value - expect).abs() < 1e-12, "{} vs {}", r.value, expect);
    }

    #[test]
    fn report_value_reassembles_from_terms() {
        let w = simple_world();
        let r = proposition_bound(&w, 42.0, 3.0, 0.5, 0.1).unwrap();
        let sum: f64 = r.terms.iter().map(|(_, v)| v).sum();
        assert!((r.value - sum).abs() < 1e-12);
        assert!((r.recompute() - r.value).abs() < 1e-12);
    }

    #[test]
    fn degenerate_risk_is_exact() {
        let mut w = simple_world();
        w.w_star = w.w_posterior.clone();
        w.mixture[0].mean = vec![0.0, 0.0];
        let risk = mc_true_risk(&w, 0.0, 10, 0).unwrap();
        let expect = 2.0
            * (0.5 * (2.0 * std::f64::consts::PI * w.likelihood_variance).ln()
                + w.noise_variance / (2.0 * w.likelihood_variance));
        assert!((risk - expect).abs() < 1e-12);
    }

    #[test]
    fn risk_monotone_in_posterior_variance() {
        let mut w = simple_world();
        w.w_star = w.w_posterior.clone();
        w.mixture[0].mean = vec![0.0, 0.0];
        let r1 = mc_true_risk(&w, 0.01, 20_000, 5).unwrap();
        let r2 = mc_true_risk(&w, 0.1, 20_000, 5).unwrap();
        let r3 = mc_true_risk(&w, 1.0, 20_000, 5).unwrap();
        assert!(r1 < r2 && r2 < r3, "{r1} {r2} {r3}");
    }

    #[test]
    fn analytic_risk_matches_full_sampling_estimator() {
        // Cross-check: estimate E[(gᵀ(w_*−w) + ε)²] by also sampling the
        // gradients and noise, not just the weights.
        let w = simple_world();
        let sigma2_rho = 0.05;
        let analytic = mc_true_risk(&w, sigma2_rho, 40_000, 11).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let trials = 200_000;
        let sd_w = sigma2_rho.sqrt();
        let mut total = 0.0;
        let mut sq = 0.0;
        for _ in 0..trials {
            let mut u = vec![0.0; w.d];
            for (j, uj) in u.iter_mut().enumerate() {
                let z: f64 = rng.sample(StandardNormal);
                *uj = w.w_star[j] - (w.w_posterior[j] + sd_w * z);
            }
            // single mixture component
            let c = &w.mixture[0];
            let mut g_dot_u = 0.0;
            for uj in &u {
                let z: f64 = rng.sample(StandardNormal);
                let g = c.variance.sqrt() * z;
                g_dot_u += g * uj;
            }
            let eps: f64 = {
                let z: f64 = rng.sample(StandardNormal);
                w.noise_variance.sqrt() * z
            };
            let r = g_dot_u + eps;
            let per = 2.0
                * (0.5 * (2.0 * std::f64::consts::PI * w.likelihood_variance).ln()
                    + r * r / (2.0 * w.likelihood_variance));
            total += per;
            sq += per * per;
        }
        let mean = total / trials as f64;
        let var = sq / trials as f64 - mean * mean;
        let se = (var / trials as f64).sqrt();
        assert!(
            (analytic - mean).abs() < 2.0 * se + 1e-3,
            "analytic {analytic} vs sampled {mean} (se {se})"
        );
    }

    #[test]
    fn mixture_weights_must_sum_to_one() {
        let mut w = simple_world();
        w.mixture[0].weight = 0.9;
        assert!(w.validate().is_err());
    }
}
