//! Persistence for MAP estimates and tempered posteriors.
//!
//! # File format
//!
//! ```text
//! bytes 0..8    u64 little-endian: byte length J of the JSON header
//! bytes 8..8+J  UTF-8 JSON header (see [`Header`])
//! bytes 8+J..   payload: little-endian IEEE-754 f64 values
//! ```
//!
//! Payload layout by kind:
//!
//! * `map`: the flat weight vector (`d` values);
//! * `isotropic`: mean (`d` values) then `σ²_ρ̂` (1 value);
//! * `kfac`: mean (`d` values) then, per layer in forward order:
//!   `U_A` row-major (`(in+1)²`), `eig_A` (`in+1`), `U_G` row-major
//!   (`out²`), `eig_G` (`out`).
//!
//! Loading re-validates lengths against the architecture in the header,
//! and writing the same value twice produces identical bytes, so runs can
//! be resumed and compared byte for byte.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::laplace::{KfacLayerPosterior, PosteriorCovariance, TemperedPosterior};
use crate::nn::{Activation, MlpArchitecture, ModelParams, OutputHead};
use crate::train::{MapEstimate, TrainConfig};

/// JSON header carried by every persisted blob.
#[derive(Debug, Serialize, Deserialize)]
pub struct Header {
    pub kind: String,
    pub lambda: Option<f64>,
    pub prior_variance: f64,
    pub d: usize,
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub output_head: OutputHead,
    pub payload_len: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_nll: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_zero_one: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_config: Option<TrainConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regularized_layers: Option<Vec<bool>>,
}

fn encode(header: &Header, payload: &[f64]) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(header)
        .map_err(|e| Error::Serialization(format!("header encode: {e}")))?;
    let mut out = Vec::with_capacity(8 + json.len() + payload.len() * 8);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for v in payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

fn decode(bytes: &[u8]) -> Result<(Header, Vec<f64>)> {
    if bytes.len() < 8 {
        return Err(Error::Serialization("file shorter than length prefix".into()));
    }
    let jlen = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
    if bytes.len() < 8 + jlen {
        return Err(Error::Serialization(format!(
            "header length {jlen} exceeds file size {}",
            bytes.len()
        )));
    }
    let header: Header = serde_json::from_slice(&bytes[8..8 + jlen])
        .map_err(|e| Error::Serialization(format!("header decode: {e}")))?;
    let rest = &bytes[8 + jlen..];
    if rest.len() % 8 != 0 {
        return Err(Error::Serialization("payload is not a whole number of f64s".into()));
    }
    let payload: Vec<f64> = rest
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if payload.len() != header.payload_len {
        return Err(Error::Serialization(format!(
            "payload has {} values, header promises {}",
            payload.len(),
            header.payload_len
        )));
    }
    Ok((header, payload))
}

fn arch_from_header(h: &Header) -> Result<MlpArchitecture> {
    let arch = MlpArchitecture::new(h.layer_sizes.clone(), h.activation, h.output_head)?;
    if arch.param_count() != h.d {
        return Err(Error::Serialization(format!(
            "architecture parameter count {} disagrees with header d = {}",
            arch.param_count(),
            h.d
        )));
    }
    Ok(arch)
}

pub fn map_to_bytes(est: &MapEstimate) -> Result<Vec<u8>> {
    let arch = est.params.arch();
    let header = Header {
        kind: "map".into(),
        lambda: None,
        prior_variance: est.config.prior_variance,
        d: est.params.dim(),
        layer_sizes: arch.layer_sizes().to_vec(),
        activation: arch.activation(),
        output_head: arch.output_head(),
        payload_len: est.params.dim(),
        train_nll: Some(est.train_nll),
        train_zero_one: est.train_zero_one,
        train_config: Some(est.config.clone()),
        regularized_layers: None,
    };
    encode(&header, est.params.weights())
}

pub fn map_from_bytes(bytes: &[u8]) -> Result<MapEstimate> {
    let (header, payload) = decode(bytes)?;
    if header.kind != "map" {
        return Err(Error::Serialization(format!(
            "expected a map blob, found kind {:?}",
            header.kind
        )));
    }
    let arch = arch_from_header(&header)?;
    let config = header
        .train_config
        .ok_or_else(|| Error::Serialization("map blob without train_config".into()))?;
    Ok(MapEstimate {
        params: ModelParams::new(arch, payload)?,
        train_nll: header
            .train_nll
            .ok_or_else(|| Error::Serialization("map blob without train_nll".into()))?,
        train_zero_one: header.train_zero_one,
        config,
    })
}

pub fn posterior_to_bytes(post: &TemperedPosterior) -> Result<Vec<u8>> {
    let arch = post.mean.arch();
    let mut payload: Vec<f64> = post.mean.weights().to_vec();
    let (kind, regularized_layers) = match &post.covariance {
        PosteriorCovariance::Isotropic { variance } => {
            payload.push(*variance);
            ("isotropic", None)
        }
        PosteriorCovariance::Kfac { layers } => {
            let mut flags = Vec::with_capacity(layers.len());
            for layer in layers {
                flags.push(layer.regularized);
                push_matrix(&mut payload, &layer.u_a);
                payload.extend(layer.eig_a.iter());
                push_matrix(&mut payload, &layer.u_g);
                payload.extend(layer.eig_g.iter());
            }
            ("kfac", Some(flags))
        }
    };
    let header = Header {
        kind: kind.into(),
        lambda: Some(post.lambda),
        prior_variance: post.prior_variance,
        d: post.dim(),
        layer_sizes: arch.layer_sizes().to_vec(),
        activation: arch.activation(),
        output_head: arch.output_head(),
        payload_len: payload.len(),
        train_nll: None,
        train_zero_one: None,
        train_config: None,
        regularized_layers,
    };
    encode(&header, &payload)
}

fn push_matrix(payload: &mut Vec<f64>, m: &DMatrix<f64>) {
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            payload.push(m[(r, c)]);
        }
    }
}

fn read_matrix(payload: &[f64], pos: &mut usize, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    let need = rows * cols;
    if *pos + need > payload.len() {
        return Err(Error::Serialization("payload truncated inside a matrix".into()));
    }
    let m = DMatrix::from_fn(rows, cols, |r, c| payload[*pos + r * cols + c]);
    *pos += need;
    Ok(m)
}

pub fn posterior_from_bytes(bytes: &[u8]) -> Result<TemperedPosterior> {
    let (header, payload) = decode(bytes)?;
    let arch = arch_from_header(&header)?;
    let d = header.d;
    if payload.len() < d {
        return Err(Error::Serialization("payload shorter than the mean vector".into()));
    }
    let mean = ModelParams::new(arch.clone(), payload[..d].to_vec())?;
    let lambda = header
        .lambda
        .ok_or_else(|| Error::Serialization("posterior blob without lambda".into()))?;
    let covariance = match header.kind.as_str() {
        "isotropic" => {
            if payload.len() != d + 1 {
                return Err(Error::Serialization(format!(
                    "isotropic payload must hold d+1 values, got {}",
                    payload.len()
                )));
            }
            PosteriorCovariance::Isotropic {
                variance: payload[d],
            }
        }
        "kfac" => {
            let flags = header
                .regularized_layers
                .ok_or_else(|| Error::Serialization("kfac blob without layer flags".into()))?;
            if flags.len() != arch.num_layers() {
                return Err(Error::Serialization("kfac layer flag count mismatch".into()));
            }
            let mut pos = d;
            let mut layers = Vec::with_capacity(arch.num_layers());
            for (l, &regularized) in flags.iter().enumerate() {
                let (in_dim, out_dim) = arch.layer_shape(l);
                let cols = in_dim + 1;
                let u_a = read_matrix(&payload, &mut pos, cols, cols)?;
                let eig_a = DVector::from_fn(cols, |j, _| payload[pos + j]);
                pos += cols;
                let u_g = read_matrix(&payload, &mut pos, out_dim, out_dim)?;
                if pos + out_dim > payload.len() {
                    return Err(Error::Serialization("payload truncated in eigenvalues".into()));
                }
                let eig_g = DVector::from_fn(out_dim, |j, _| payload[pos + j]);
                pos += out_dim;
                layers.push(KfacLayerPosterior {
                    u_a,
                    eig_a,
                    u_g,
                    eig_g,
                    regularized,
                });
            }
            if pos != payload.len() {
                return Err(Error::Serialization(format!(
                    "kfac payload has {} trailing values",
                    payload.len() - pos
                )));
            }
            PosteriorCovariance::Kfac { layers }
        }
        other => {
            return Err(Error::Serialization(format!(
                "expected a posterior blob, found kind {other:?}"
            )))
        }
    };
    Ok(TemperedPosterior {
        mean,
        covariance,
        lambda,
        prior_variance: header.prior_variance,
    })
}

pub fn save_map(path: impl AsRef<Path>, est: &MapEstimate) -> Result<()> {
    Ok(fs::write(path, map_to_bytes(est)?)?)
}

pub fn load_map(path: impl AsRef<Path>) -> Result<MapEstimate> {
    map_from_bytes(&fs::read(path)?)
}

pub fn save_posterior(path: impl AsRef<Path>, post: &TemperedPosterior) -> Result<()> {
    Ok(fs::write(path, posterior_to_bytes(post)?)?)
}

pub fn load_posterior(path: impl AsRef<Path>) -> Result<TemperedPosterior> {
    posterior_from_bytes(&fs::read(path)?)
}
