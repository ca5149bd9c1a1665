//! Oversmoothing diagnostics: embedding variance, the propagation spectrum
//! `μ(λ)`, contraction ratio `C(L) = (|μ₂| / |μ₁|)^L` and energy retention
//! `E(λ; L) = |μ(λ)|^L`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dense::Matrix;
use crate::eigen::EigenBasis;
use crate::error::{Error, Result};
use crate::filters::{
    effective_filter, gcn_filter, stability_report, Combine, FilterParams, StabilityReport, ThetaNet,
};
use crate::model::{GcnModel, ProtocolResult, Variant};

/// Mean over columns of the across-row population variance.
pub fn embedding_variance(h: &Matrix) -> Result<f64> {
    let (n, d) = h.shape();
    if n < 2 {
        return Err(Error::Data(format!("embedding variance needs ≥ 2 nodes, got {n}")));
    }
    if d == 0 {
        return Ok(0.0);
    }
    // Welford, one column accumulator per feature.
    let mut mean = vec![0.0; d];
    let mut m2 = vec![0.0; d];
    for r in 0..n {
        let count = (r + 1) as f64;
        for (c, &x) in h.row(r).iter().enumerate() {
            let delta = x - mean[c];
            mean[c] += delta / count;
            m2[c] += delta * (x - mean[c]);
        }
    }
    Ok(m2.iter().map(|s| s / n as f64).sum::<f64>() / d as f64)
}

/// A propagation factor `μ` at eigenvalue `λ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumPoint {
    pub lambda: f64,
    pub mu: f64,
}

/// Which layer's filter stands for a depth-annealed model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerChoice {
    /// The output layer, `ℓ = L`, where `α_ℓ = α`.
    #[default]
    Final,
    /// Geometric mean of `|μ_ℓ|` over `ℓ = 1..L`.
    GeometricMean,
}

/// `μ(λ_i)` of layer `layer` at every cached eigenvalue: the summed (or
/// averaged) filter for a model with the low-rank branch, `1 − λ` otherwise.
pub fn propagation_spectrum(basis: &EigenBasis, model: &GcnModel, layer: usize) -> Result<Vec<SpectrumPoint>> {
    let params = model.config.filter_params(layer)?;
    let theta = model.theta_net();
    let branch = model.config.use_lora && (layer < model.config.depth || model.config.lora_on_output);
    basis
        .eigenvalues
        .iter()
        .map(|&lambda| {
            let mu = match (&theta, branch) {
                (Some(net), true) => effective_filter(lambda, &params, net, model.config.combine)?,
                _ => gcn_filter(lambda)?,
            };
            Ok(SpectrumPoint { lambda, mu })
        })
        .collect()
}

/// One spectrum per model following `choice`. The geometric mean is taken
/// over magnitudes, so its `μ` values are non-negative.
pub fn model_spectrum(basis: &EigenBasis, model: &GcnModel, choice: LayerChoice) -> Result<Vec<SpectrumPoint>> {
    let depth = model.config.depth;
    match choice {
        LayerChoice::Final => propagation_spectrum(basis, model, depth),
        LayerChoice::GeometricMean => {
            let layers = (1..=depth)
                .map(|l| propagation_spectrum(basis, model, l))
                .collect::<Result<Vec<_>>>()?;
            Ok((0..basis.k())
                .map(|i| {
                    let log_sum: f64 = layers.iter().map(|s| s[i].mu.abs().ln()).sum();
                    SpectrumPoint {
                        lambda: basis.eigenvalues[i],
                        mu: (log_sum / depth as f64).exp(),
                    }
                })
                .collect())
        }
    }
}

/// Orders by `|μ|` descending, then `λ` ascending.
fn leading(spectrum: &[SpectrumPoint]) -> Vec<SpectrumPoint> {
    let mut sorted = spectrum.to_vec();
    sorted.sort_by(|a, b| {
        b.mu.abs()
            .total_cmp(&a.mu.abs())
            .then(a.lambda.total_cmp(&b.lambda))
    });
    sorted
}

/// `C(L) = (|μ₂| / |μ₁|)^L` for the two largest `|μ|`. `C(0) = 1`; a zero
/// leading factor gives 0.
pub fn contraction_ratio(spectrum: &[SpectrumPoint], depth: usize) -> Result<f64> {
    if spectrum.len() < 2 {
        return Err(Error::Data(format!(
            "contraction ratio needs ≥ 2 spectrum entries, got {}",
            spectrum.len()
        )));
    }
    if depth == 0 {
        return Ok(1.0);
    }
    let sorted = leading(spectrum);
    let (mu1, mu2) = (sorted[0].mu.abs(), sorted[1].mu.abs());
    if mu1 == 0.0 {
        return Ok(0.0);
    }
    Ok((mu2 / mu1).powi(depth as i32))
}

/// `E(λ_i; L) = |μ(λ_i)|^L`.
pub fn energy_retention(spectrum: &[SpectrumPoint], depth: usize) -> Vec<SpectrumPoint> {
    spectrum
        .iter()
        .map(|p| SpectrumPoint {
            lambda: p.lambda,
            mu: p.mu.abs().powi(depth as i32),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariancePair {
    pub gcn: Option<f64>,
    pub lora: Option<f64>,
}

/// Seed-averaged embedding variance per depth and variant. Uses the stored
/// embeddings when the protocol kept them, the recorded variance otherwise.
pub fn variance_sweep(protocol: &ProtocolResult) -> Result<BTreeMap<usize, VariancePair>> {
    let mut acc: BTreeMap<(usize, Variant), (f64, usize)> = BTreeMap::new();
    for run in &protocol.runs {
        let v = match &run.embeddings {
            Some(h) => embedding_variance(h)?,
            None => run.embed_variance,
        };
        let slot = acc.entry((run.depth, run.variant)).or_insert((0.0, 0));
        slot.0 += v;
        slot.1 += 1;
    }
    let mut out: BTreeMap<usize, VariancePair> = BTreeMap::new();
    for ((depth, variant), (sum, count)) in acc {
        let entry = out.entry(depth).or_insert(VariancePair { gcn: None, lora: None });
        let mean = Some(sum / count as f64);
        match variant {
            Variant::Gcn => entry.gcn = mean,
            Variant::Lora => entry.lora = mean,
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumRow {
    pub lambda: f64,
    pub mu_gcn: f64,
    pub mu_eff: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContractionRow {
    pub depth: usize,
    pub gcn: f64,
    pub effective: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyRow {
    pub lambda: f64,
    pub e_gcn: f64,
    pub e_eff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub variant: Variant,
    pub model_depth: usize,
    pub layer_choice: LayerChoice,
    pub per_depth_variance: BTreeMap<usize, f64>,
    pub spectrum: Vec<SpectrumRow>,
    pub contraction_curve: Vec<ContractionRow>,
    /// Depth at which `energy_curve` is evaluated.
    pub energy_depth: usize,
    pub energy_curve: Vec<EnergyRow>,
    pub stability: StabilityReport,
}

/// Spectral diagnostics of one model: spectrum at the cached eigenvalues,
/// `C(L)` for `L = 1..=max_depth`, `E(λ; energy_depth)` and the stability
/// report over all layers.
pub fn diagnose(
    basis: &EigenBasis,
    model: &GcnModel,
    choice: LayerChoice,
    energy_depth: usize,
    max_depth: usize,
) -> Result<DiagnosticsReport> {
    let gcn: Vec<SpectrumPoint> = basis
        .eigenvalues
        .iter()
        .map(|&lambda| gcn_filter(lambda).map(|mu| SpectrumPoint { lambda, mu }))
        .collect::<Result<_>>()?;
    let eff = model_spectrum(basis, model, choice)?;
    let spectrum = gcn
        .iter()
        .zip(&eff)
        .map(|(g, e)| SpectrumRow {
            lambda: g.lambda,
            mu_gcn: g.mu,
            mu_eff: e.mu,
        })
        .collect();
    let contraction_curve = if basis.k() >= 2 {
        (1..=max_depth)
            .map(|depth| {
                Ok(ContractionRow {
                    depth,
                    gcn: contraction_ratio(&gcn, depth)?,
                    effective: contraction_ratio(&eff, depth)?,
                })
            })
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    let energy_curve = energy_retention(&gcn, energy_depth)
        .into_iter()
        .zip(energy_retention(&eff, energy_depth))
        .map(|(g, e)| EnergyRow {
            lambda: g.lambda,
            e_gcn: g.mu,
            e_eff: e.mu,
        })
        .collect();

    let layers = FilterParams::per_layer(model.config.alpha, model.config.depth)?;
    let stability = match model.theta_net().filter(|_| model.config.use_lora) {
        Some(net) => stability_report(basis, &layers, &net, model.config.combine)?,
        None => {
            // A plain GCN layer applies 1 − λ, which is the mean-mode filter at α = 0.
            let plain: Vec<FilterParams> = layers
                .iter()
                .map(|p| FilterParams { alpha: 0.0, ..*p })
                .collect();
            stability_report(
                basis,
                &plain,
                &ThetaNet::zeros(),
                Combine::Mean,
            )?
        }
    };

    Ok(DiagnosticsReport {
        variant: model.config.variant(),
        model_depth: model.config.depth,
        layer_choice: choice,
        per_depth_variance: BTreeMap::new(),
        spectrum,
        contraction_curve,
        energy_depth,
        energy_curve,
        stability,
    })
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn format_real(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

impl DiagnosticsReport {
    /// Long format: `diagnostic,variant,depth,lambda,value`. The `gcn` rows
    /// are the plain `1 − λ` reference, the `effective` rows the model's own
    /// filter.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("diagnostic,variant,depth,lambda,value\n");
        let mut row = |diag: &str, variant: &str, depth: usize, lambda: Option<f64>, value: f64| {
            let lambda = lambda.map(format_real).unwrap_or_default();
            writeln!(out, "{diag},{variant},{depth},{lambda},{}", format_real(value))
                .expect("writing to a String");
        };
        for s in &self.spectrum {
            row("spectrum", "gcn", self.model_depth, Some(s.lambda), s.mu_gcn);
            row("spectrum", "effective", self.model_depth, Some(s.lambda), s.mu_eff);
        }
        for c in &self.contraction_curve {
            row("contraction", "gcn", c.depth, None, c.gcn);
            row("contraction", "effective", c.depth, None, c.effective);
        }
        for e in &self.energy_curve {
            row("energy", "gcn", self.energy_depth, Some(e.lambda), e.e_gcn);
            row("energy", "effective", self.energy_depth, Some(e.lambda), e.e_eff);
        }
        for l in &self.stability.layers {
            row("stability_sup", "effective", l.layer, l.argmax_lambda, l.sup);
        }
        for (&depth, &v) in &self.per_depth_variance {
            row("embedding_variance", self.variant.as_str(), depth, None, v);
        }
        out
    }
}
