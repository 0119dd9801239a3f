//! Shared oracle helpers for the integration tests. Everything here is
//! deliberately brute-force and independent of the library's fast paths.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tempered_core::nn::{
    forward, loss, softmax, Activation, LossKind, MlpArchitecture, ModelParams, OutputHead, Target,
};

/// Central finite-difference gradient of the loss w.r.t. the flat weights.
pub fn fd_grad_loss(
    params: &ModelParams,
    x: &[f64],
    y: &Target,
    kind: &LossKind,
    step: f64,
) -> Vec<f64> {
    let d = params.dim();
    let mut grad = vec![0.0; d];
    for j in 0..d {
        let mut plus = params.weights().to_vec();
        let mut minus = plus.clone();
        plus[j] += step;
        minus[j] -= step;
        let lp = loss(&params.with_weights(plus).unwrap(), x, y, kind).unwrap();
        let lm = loss(&params.with_weights(minus).unwrap(), x, y, kind).unwrap();
        grad[j] = (lp - lm) / (2.0 * step);
    }
    grad
}

/// Central finite-difference Jacobian of the forward map, rows per output.
pub fn fd_jacobian(params: &ModelParams, x: &[f64], step: f64) -> Vec<Vec<f64>> {
    let d = params.dim();
    let k = params.arch().output_dim();
    let mut jac = vec![vec![0.0; d]; k];
    for j in 0..d {
        let mut plus = params.weights().to_vec();
        let mut minus = plus.clone();
        plus[j] += step;
        minus[j] -= step;
        let fp = forward(&params.with_weights(plus).unwrap(), x).unwrap();
        let fm = forward(&params.with_weights(minus).unwrap(), x).unwrap();
        for c in 0..k {
            jac[c][j] = (fp[c] - fm[c]) / (2.0 * step);
        }
    }
    jac
}

/// Relative error with an absolute floor, symmetric in its arguments.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Dense output-space curvature Λ(y;f) for the given head.
pub fn dense_lambda(head: OutputHead, output: &[f64]) -> Vec<Vec<f64>> {
    match head {
        OutputHead::SoftmaxCategorical => {
            let p = softmax(output);
            let k = p.len();
            (0..k)
                .map(|r| {
                    (0..k)
                        .map(|c| if r == c { p[r] * (1.0 - p[r]) } else { -p[r] * p[c] })
                        .collect()
                })
                .collect()
        }
        OutputHead::Gaussian => {
            let k = output.len();
            (0..k)
                .map(|r| (0..k).map(|c| if r == c { 1.0 } else { 0.0 }).collect())
                .collect()
        }
    }
}

/// Dense GGN `Σ_i J_iᵀ Λ_i J_i` assembled from explicit per-sample
/// Jacobians (supplied by the caller so the Jacobian source can vary).
pub fn dense_ggn_from_jacobians(jacobians: &[(Vec<Vec<f64>>, Vec<Vec<f64>>)], d: usize) -> Vec<Vec<f64>> {
    let mut h = vec![vec![0.0; d]; d];
    for (jac, lam) in jacobians {
        let k = jac.len();
        for r in 0..k {
            for c in 0..k {
                let l = lam[r][c];
                if l == 0.0 {
                    continue;
                }
                for a in 0..d {
                    let jra = jac[r][a];
                    if jra == 0.0 {
                        continue;
                    }
                    let scaled = l * jra;
                    for b in 0..d {
                        h[a][b] += scaled * jac[c][b];
                    }
                }
            }
        }
    }
    h
}

/// Seeded random architecture/weights with moderate scales, hidden sizes
/// in 1..=max_width.
pub fn random_net(
    rng: &mut ChaCha8Rng,
    input_dim: usize,
    output_dim: usize,
    max_width: usize,
    hidden_layers: usize,
    act: Activation,
    head: OutputHead,
) -> ModelParams {
    let mut sizes = vec![input_dim];
    for _ in 0..hidden_layers {
        sizes.push(rng.random_range(1..=max_width));
    }
    sizes.push(output_dim);
    let arch = MlpArchitecture::new(sizes, act, head).unwrap();
    let w: Vec<f64> = (0..arch.param_count())
        .map(|_| rng.random_range(-0.8..0.8))
        .collect();
    ModelParams::new(arch, w).unwrap()
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
