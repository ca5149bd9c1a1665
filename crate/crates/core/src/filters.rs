//! Spectral responses of the propagation operators.
//!
//! Every function maps a Laplacian eigenvalue `λ ∈ [0, 2]` to the factor the
//! corresponding operator applies to that eigenmode:
//!
//! * GCN: `1 − λ`
//! * low-rank branch: `(1 − λ)(1 − α_ℓ θ(λ))`
//! * both branches summed: `(1 − λ)(2 − α_ℓ θ(λ))`, or half of it when the
//!   branches are averaged.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dense::Matrix;
use crate::eigen::EigenBasis;
use crate::error::{Error, Result};

/// Width of the hidden layer of [`ThetaNet`].
pub const THETA_HIDDEN: usize = 32;

/// Eigenvalues at or below this are treated as the zero mode by
/// [`stability_report`].
pub const ZERO_EIGENVALUE: f64 = 1e-8;

/// How the GCN and low-rank branches are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Combine {
    #[default]
    Sum,
    Mean,
}

impl Combine {
    pub fn factor(self) -> f64 {
        match self {
            Combine::Sum => 1.0,
            Combine::Mean => 0.5,
        }
    }
}

impl std::str::FromStr for Combine {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(Combine::Sum),
            "mean" => Ok(Combine::Mean),
            _ => Err(Error::Parameter(format!("unknown combine mode {s:?}"))),
        }
    }
}

/// `θ(λ) = sigmoid(W2 · relu(W1 λ + b1) + b2)`, one instance shared by every
/// layer of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaNet {
    /// `1 × 32`
    pub w1: Matrix,
    /// `1 × 32`
    pub b1: Matrix,
    /// `32 × 1`
    pub w2: Matrix,
    /// `1 × 1`
    pub b2: Matrix,
}

impl ThetaNet {
    pub fn zeros() -> Self {
        ThetaNet {
            w1: Matrix::zeros(1, THETA_HIDDEN),
            b1: Matrix::zeros(1, THETA_HIDDEN),
            w2: Matrix::zeros(THETA_HIDDEN, 1),
            b2: Matrix::zeros(1, 1),
        }
    }

    /// Weights uniform in `±1/√fan_in`, biases zero.
    pub fn init(rng: &mut impl Rng) -> Self {
        let mut net = ThetaNet::zeros();
        for w in net.w1.as_mut_slice() {
            *w = rng.gen_range(-1.0..=1.0);
        }
        let bound = 1.0 / (THETA_HIDDEN as f64).sqrt();
        for w in net.w2.as_mut_slice() {
            *w = rng.gen_range(-bound..=bound);
        }
        net
    }

    pub fn parameter_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    pub fn eval(&self, lambda: f64) -> f64 {
        let mut z = self.b2.get(0, 0);
        for j in 0..THETA_HIDDEN {
            let h = (self.w1.get(0, j) * lambda + self.b1.get(0, j)).max(0.0);
            z += self.w2.get(j, 0) * h;
        }
        sigmoid(z)
    }
}

/// Logistic function, kept strictly inside `(0, 1)` where `f64` would
/// round to an endpoint.
pub fn sigmoid(z: f64) -> f64 {
    let s = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    s.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// Global strength `α`, layer `ℓ` (1-based) and depth `L`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterParams {
    pub alpha: f64,
    pub layer: usize,
    pub depth: usize,
}

impl FilterParams {
    pub fn new(alpha: f64, layer: usize, depth: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::Domain {
                name: "alpha",
                value: alpha,
                domain: "[0, 1]",
            });
        }
        if depth == 0 || layer == 0 || layer > depth {
            return Err(Error::Parameter(format!(
                "layer {layer} outside 1..={depth}"
            )));
        }
        Ok(FilterParams {
            alpha,
            layer,
            depth,
        })
    }

    /// `α_ℓ = α ℓ / L`
    pub fn alpha_at_layer(&self) -> f64 {
        self.alpha * self.layer as f64 / self.depth as f64
    }

    /// One parameter set per layer `1..=depth`.
    pub fn per_layer(alpha: f64, depth: usize) -> Result<Vec<FilterParams>> {
        (1..=depth).map(|l| FilterParams::new(alpha, l, depth)).collect()
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if (0.0..=2.0).contains(&lambda) {
        Ok(())
    } else {
        Err(Error::Domain {
            name: "lambda",
            value: lambda,
            domain: "[0, 2]",
        })
    }
}

pub fn gcn_filter(lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    Ok(1.0 - lambda)
}

/// `β(λ) = 1 − α_ℓ θ(λ)`; non-negative whenever `α ≤ 1`.
pub fn beta_of_lambda(lambda: f64, params: &FilterParams, theta: &ThetaNet) -> Result<f64> {
    check_lambda(lambda)?;
    Ok(1.0 - params.alpha_at_layer() * theta.eval(lambda))
}

pub fn lora_filter(lambda: f64, params: &FilterParams, theta: &ThetaNet) -> Result<f64> {
    let beta = beta_of_lambda(lambda, params, theta)?;
    Ok((1.0 - lambda) * beta)
}

pub fn effective_filter(
    lambda: f64,
    params: &FilterParams,
    theta: &ThetaNet,
    combine: Combine,
) -> Result<f64> {
    let beta = beta_of_lambda(lambda, params, theta)?;
    Ok(combine.factor() * (1.0 - lambda) * (1.0 + beta))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerStability {
    pub layer: usize,
    pub alpha_at_layer: f64,
    /// `sup |g_eff(λ)|` over the cached non-zero eigenvalues.
    pub sup: f64,
    /// Eigenvalue attaining `sup`; `None` when no non-zero eigenvalue is cached.
    pub argmax_lambda: Option<f64>,
    pub stable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub combine: Combine,
    pub layers: Vec<LayerStability>,
    /// Largest per-layer `sup`.
    pub sup: f64,
    /// `sup < 1` on every layer.
    pub stable: bool,
}

/// Evaluates `sup_{λ ∈ (0, 2]} |g_eff(λ)| < 1` on the cached spectrum for every
/// layer. Eigenvalues `≤ ZERO_EIGENVALUE` are excluded. Nothing is clamped.
pub fn stability_report(
    basis: &EigenBasis,
    layers: &[FilterParams],
    theta: &ThetaNet,
    combine: Combine,
) -> Result<StabilityReport> {
    let nonzero: Vec<f64> = basis
        .eigenvalues
        .iter()
        .copied()
        .filter(|&l| l > ZERO_EIGENVALUE)
        .collect();
    let mut out = Vec::with_capacity(layers.len());
    for p in layers {
        let mut sup = 0.0;
        let mut argmax = None;
        for &lambda in &nonzero {
            let g = effective_filter(lambda, p, theta, combine)?.abs();
            if g > sup || argmax.is_none() {
                sup = g;
                argmax = Some(lambda);
            }
        }
        out.push(LayerStability {
            layer: p.layer,
            alpha_at_layer: p.alpha_at_layer(),
            sup,
            argmax_lambda: argmax,
            stable: sup < 1.0,
        });
    }
    let sup = out.iter().map(|l| l.sup).fold(0.0, f64::max);
    Ok(StabilityReport {
        combine,
        stable: out.iter().all(|l| l.stable),
        sup,
        layers: out,
    })
}
