//! Dense-matrix verification of the GGN trace and the KFAC factorization.
//!
//! The oracle assembles `Σ_i J_iᵀ Λ_i J_i` from finite-difference
//! Jacobians (exact for single-layer nets, ~1e-10 accurate otherwise), so
//! it shares no code with the curvature implementation.

mod common;

use common::{dense_ggn_from_jacobians, dense_lambda, fd_jacobian, random_net, seeded};
use rand::Rng;
use tempered_core::data::Dataset;
use tempered_core::laplace::{ggn_trace, kfac_factors};
use tempered_core::nn::{Activation, MlpArchitecture, ModelParams, OutputHead};
use tempered_core::train::{MapEstimate, TrainConfig};

fn wrap(params: ModelParams) -> MapEstimate {
    MapEstimate {
        params,
        train_nll: 0.0,
        train_zero_one: None,
        config: TrainConfig::default(),
    }
}

fn random_classification(rng: &mut impl Rng, n: usize, dim: usize, classes: usize) -> Dataset {
    let inputs: Vec<f64> = (0..n * dim).map(|_| rng.random_range(-1.5..1.5)).collect();
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
    Dataset::classification("oracle", inputs, dim, labels, classes).unwrap()
}

fn dense_ggn(map: &MapEstimate, data: &Dataset) -> Vec<Vec<f64>> {
    let head = map.params.arch().output_head();
    let jacobians: Vec<_> = (0..data.len())
        .map(|i| {
            let x = data.input_row(i);
            let jac = fd_jacobian(&map.params, x, 1e-5);
            let out = tempered_core::forward(&map.params, x).unwrap();
            (jac, dense_lambda(head, &out))
        })
        .collect();
    dense_ggn_from_jacobians(&jacobians, map.params.dim())
}

#[test]
fn trace_matches_dense_oracle_on_random_nets() {
    let mut rng = seeded(7);
    for trial in 0..20 {
        let classes = rng.random_range(2..=5);
        let in_dim = rng.random_range(2..=6);
        let params = random_net(
            &mut rng,
            in_dim,
            classes,
            10,
            rng.random_range(1..=2),
            Activation::Tanh,
            OutputHead::SoftmaxCategorical,
        );
        assert!(params.dim() <= 200, "net too large for the dense oracle");
        let map = wrap(params);
        let data = random_classification(&mut rng, rng.random_range(2..=6), in_dim, classes);
        let h_dense: f64 = dense_ggn(&map, &data)
            .iter()
            .enumerate()
            .map(|(i, row)| row[i])
            .sum();
        let c = ggn_trace(&map, &data).unwrap();
        let rel = (c.h - h_dense).abs() / h_dense.abs().max(1e-12);
        assert!(rel < 1e-8, "trial {trial}: trace {} vs dense {h_dense} (rel {rel})", c.h);
    }
}

/// KFAC block entry for flat indices, honoring the crate's weight layout
/// (weights row-major, then biases; bias column index is `in`).
fn kron_entry(
    arch: &MlpArchitecture,
    layer: usize,
    a: &nalgebra::DMatrix<f64>,
    g: &nalgebra::DMatrix<f64>,
    flat_row: usize,
    flat_col: usize,
) -> f64 {
    let (in_dim, out_dim) = arch.layer_shape(layer);
    let offset = arch.layer_offset(layer);
    let locate = |idx: usize| -> (usize, usize) {
        let rel = idx - offset;
        if rel < in_dim * out_dim {
            (rel / in_dim, rel % in_dim)
        } else {
            (rel - in_dim * out_dim, in_dim) // bias column
        }
    };
    let (k1, j1) = locate(flat_row);
    let (k2, j2) = locate(flat_col);
    g[(k1, k2)] * a[(j1, j2)]
}

#[test]
fn kfac_single_sample_block_is_exact_for_all_small_shapes() {
    let mut rng = seeded(8);
    for in_dim in 1..=8usize {
        for out_dim in 1..=8usize {
            let (head, data) = if out_dim == 1 {
                let inputs: Vec<f64> = (0..in_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                (
                    OutputHead::Gaussian,
                    Dataset::regression("o", inputs, in_dim, vec![0.3]).unwrap(),
                )
            } else {
                let inputs: Vec<f64> = (0..in_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                (
                    OutputHead::SoftmaxCategorical,
                    Dataset::classification("o", inputs, in_dim, vec![0], out_dim).unwrap(),
                )
            };
            let arch =
                MlpArchitecture::new(vec![in_dim, out_dim], Activation::Identity, head).unwrap();
            let w: Vec<f64> = (0..arch.param_count())
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            let map = wrap(ModelParams::new(arch.clone(), w).unwrap());
            let curv = kfac_factors(&map, &data).unwrap();
            let factors = &curv.kfac.as_ref().unwrap()[0];
            let dense = dense_ggn(&map, &data);
            let d = map.params.dim();
            let mut max_dev: f64 = 0.0;
            for r in 0..d {
                for c in 0..d {
                    let k = kron_entry(&arch, 0, &factors.a, &factors.g, r, c);
                    max_dev = max_dev.max((k - dense[r][c]).abs());
                }
            }
            assert!(
                max_dev < 1e-8,
                "shape {in_dim}×{out_dim}: max deviation {max_dev}"
            );
        }
    }
}

#[test]
fn kfac_exact_for_repeated_inputs() {
    // Two samples with identical inputs keep A rank-1, so the Kronecker
    // structure still reproduces the block exactly.
    let mut rng = seeded(9);
    let arch = MlpArchitecture::new(
        vec![2, 2],
        Activation::Identity,
        OutputHead::SoftmaxCategorical,
    )
    .unwrap();
    let w: Vec<f64> = (0..arch.param_count())
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let map = wrap(ModelParams::new(arch.clone(), w).unwrap());
    let x = [0.7, -0.4];
    let inputs = vec![x[0], x[1], x[0], x[1]];
    let data = Dataset::classification("o", inputs, 2, vec![0, 1], 2).unwrap();
    let curv = kfac_factors(&map, &data).unwrap();
    let factors = &curv.kfac.as_ref().unwrap()[0];
    let dense = dense_ggn(&map, &data);
    let d = map.params.dim();
    for r in 0..d {
        for c in 0..d {
            let k = kron_entry(&arch, 0, &factors.a, &factors.g, r, c);
            assert!(
                (k - dense[r][c]).abs() < 1e-8,
                "entry ({r},{c}): {k} vs {}",
                dense[r][c]
            );
        }
    }
}

#[test]
fn kfac_trace_within_an_order_of_magnitude_of_exact() {
    let mut rng = seeded(10);
    for _ in 0..5 {
        let in_dim = rng.random_range(2..=4);
        let classes = rng.random_range(2..=3);
        let params = random_net(
            &mut rng,
            in_dim,
            classes,
            5,
            1,
            Activation::Tanh,
            OutputHead::SoftmaxCategorical,
        );
        let map = wrap(params);
        let data = random_classification(&mut rng, 8, in_dim, classes);
        let curv = kfac_factors(&map, &data).unwrap();
        let kfac_trace: f64 = curv
            .kfac
            .as_ref()
            .unwrap()
            .iter()
            .map(|f| f.a.trace() * f.g.trace())
            .sum();
        // The exact block-diagonal trace equals the full GGN trace.
        let ratio = kfac_trace / curv.h;
        assert!(
            (0.1..=10.0).contains(&ratio),
            "KFAC trace ratio {ratio} outside [0.1, 10]"
        );
    }
}
