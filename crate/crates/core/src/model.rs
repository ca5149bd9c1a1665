//! GCN backbone with the optional low-rank spectral branch, the training
//! loop, and the multi-seed protocol.
//!
//! Layer `ℓ` maps `H` to `σ(P W_ℓ)` where `P = S H` for the plain GCN and
//! `P = S H + U_k diag(g_LoRA(λ; α_ℓ)) U_kᵀ H` (halved in mean mode) with the
//! branch enabled. Both terms are linear in `H`, so they are evaluated on
//! `H W_ℓ` instead, which keeps the wide input layer cheap. `σ` is ReLU on
//! every layer but the last.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{adam_step, sparse_dropout, AdamConfig, AdamState, Tape, Tensor, Var};
use crate::dense::Matrix;
use crate::diagnostics::embedding_variance;
use crate::eigen::EigenBasis;
use crate::error::{Error, Result};
use crate::filters::{lora_filter, Combine, FilterParams, ThetaNet, THETA_HIDDEN};
use crate::graph::{laplacian_with, propagation_operator, Adjacency, GraphDataset};
use crate::sparse::SparseMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Gcn,
    Lora,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Gcn => "gcn",
            Variant::Lora => "lora",
        }
    }

    fn stream_id(self) -> u64 {
        match self {
            Variant::Gcn => 0,
            Variant::Lora => 1,
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gcn" => Ok(Variant::Gcn),
            "lora" => Ok(Variant::Lora),
            _ => Err(Error::Parameter(format!("unknown variant {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub depth: usize,
    pub hidden_dim: usize,
    pub dropout: f64,
    /// Global correction strength `α`.
    pub alpha: f64,
    pub use_lora: bool,
    pub combine: Combine,
    /// Eigenpairs used by the branch; clamped to the node count.
    pub k: usize,
    /// Apply the branch on the output layer as well as the hidden ones.
    pub lora_on_output: bool,
    pub adjacency: Adjacency,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            depth: 2,
            hidden_dim: 64,
            dropout: 0.5,
            alpha: 0.5,
            use_lora: false,
            combine: Combine::Sum,
            k: 64,
            lora_on_output: true,
            adjacency: Adjacency::Plain,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 2 {
            return Err(Error::Parameter(format!("depth must be ≥ 2, got {}", self.depth)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Parameter(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Parameter(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if self.hidden_dim == 0 {
            return Err(Error::Parameter("hidden_dim must be positive".into()));
        }
        Ok(())
    }

    pub fn variant(&self) -> Variant {
        if self.use_lora {
            Variant::Lora
        } else {
            Variant::Gcn
        }
    }

    pub fn for_variant(&self, variant: Variant) -> ModelConfig {
        ModelConfig {
            use_lora: variant == Variant::Lora,
            ..self.clone()
        }
    }

    pub fn filter_params(&self, layer: usize) -> Result<FilterParams> {
        FilterParams::new(self.alpha, layer, self.depth)
    }

    fn branch_on(&self, layer: usize) -> bool {
        self.use_lora && (layer < self.depth || self.lora_on_output)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub n_seeds: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.01,
            weight_decay: 5e-4,
            max_epochs: 200,
            patience: 50,
            n_seeds: 5,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds `parts` through splitmix64; used to give every (seed, depth,
/// variant) run and every (epoch, layer) dropout draw its own stream.
pub fn derive_seed(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x6C61_706C_6F72_6100, |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// The operators a model runs on, shared read-only across runs.
#[derive(Debug, Clone)]
pub struct GraphContext {
    pub propagation: Arc<SparseMatrix>,
    pub features: Arc<SparseMatrix>,
    pub basis: Option<Arc<EigenBasis>>,
}

impl GraphContext {
    pub fn new(data: &GraphDataset, adjacency: Adjacency, basis: Option<Arc<EigenBasis>>) -> Result<Self> {
        if let Some(b) = &basis {
            if b.n() != data.n_nodes {
                return Err(Error::shape(
                    "GraphContext",
                    format!("eigenbasis has {} rows for {} nodes", b.n(), data.n_nodes),
                ));
            }
        }
        let s = propagation_operator(&laplacian_with(data, adjacency))?;
        Ok(GraphContext {
            propagation: Arc::new(s),
            features: Arc::new(SparseMatrix::from_dense(&data.features)),
            basis,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.propagation.n_rows()
    }
}

/// Per-forward constants of the spectral branch.
struct Spectral {
    u: Var,
    one_minus_lambda: Var,
    theta: Var,
}

pub struct Forward {
    pub logits: Var,
    /// Post-activation input of the final layer.
    pub embeddings: Var,
    /// Tape leaves of the parameters, in [`GcnModel::parameters`] order.
    pub params: Vec<Var>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcnModel {
    pub config: ModelConfig,
    pub weights: Vec<Tensor>,
    /// `[W1, b1, W2, b2]` of the shared θ-network; empty without the branch.
    pub theta: Vec<Tensor>,
}

impl GcnModel {
    /// Glorot-uniform weights; θ-network per [`ThetaNet::init`].
    pub fn new(config: ModelConfig, n_features: usize, n_classes: usize, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let mut dims = vec![n_features];
        dims.extend(std::iter::repeat(config.hidden_dim).take(config.depth - 1));
        dims.push(n_classes);
        let weights = dims
            .windows(2)
            .map(|w| {
                let bound = (6.0 / (w[0] + w[1]) as f64).sqrt();
                let data = (0..w[0] * w[1]).map(|_| rng.gen_range(-bound..=bound)).collect();
                Matrix::from_vec(w[0], w[1], data).map(Tensor::param)
            })
            .collect::<Result<Vec<_>>>()?;
        let theta = if config.use_lora {
            let net = ThetaNet::init(rng);
            vec![net.w1, net.b1, net.w2, net.b2]
                .into_iter()
                .map(Tensor::param)
                .collect()
        } else {
            Vec::new()
        };
        Ok(GcnModel {
            config,
            weights,
            theta,
        })
    }

    /// Model initialized from the stream derived for `(seed, depth, variant)`.
    pub fn seeded(config: ModelConfig, n_features: usize, n_classes: usize) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[run_stream(&config), 0]));
        GcnModel::new(config, n_features, n_classes, &mut rng)
    }

    pub fn theta_net(&self) -> Option<ThetaNet> {
        match self.theta.as_slice() {
            [w1, b1, w2, b2] => Some(ThetaNet {
                w1: w1.value.clone(),
                b1: b1.value.clone(),
                w2: w2.value.clone(),
                b2: b2.value.clone(),
            }),
            _ => None,
        }
    }

    pub fn set_theta_net(&mut self, net: ThetaNet) {
        self.theta = vec![net.w1, net.b1, net.w2, net.b2]
            .into_iter()
            .map(Tensor::param)
            .collect();
    }

    pub fn theta_parameter_count(&self) -> usize {
        self.theta.iter().map(|t| t.value.len()).sum()
    }

    pub fn parameters(&self) -> impl Iterator<Item = &Tensor> {
        self.weights.iter().chain(&self.theta)
    }

    pub fn parameters_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.weights.iter_mut().chain(&mut self.theta)
    }

    fn spectral_leaves(&self, tape: &mut Tape, ctx: &GraphContext, params: &[Var]) -> Result<Option<Spectral>> {
        if !self.config.use_lora {
            return Ok(None);
        }
        let basis = ctx
            .basis
            .as_ref()
            .ok_or_else(|| Error::Parameter("the low-rank branch needs an eigenbasis".into()))?;
        let k = self.config.k.min(basis.k());
        let (u, lambdas) = truncated(basis, k);
        let [w1, b1, w2, b2] = params[self.weights.len()..] else {
            return Err(Error::Contract("θ-network parameters missing".into()));
        };
        let u = tape.constant(u);
        let lam = tape.constant(Matrix::column(&lambdas));
        let one_minus_lambda = tape.constant(Matrix::column(
            &lambdas.iter().map(|l| 1.0 - l).collect::<Vec<_>>(),
        ));
        let h = tape.matmul(lam, w1)?;
        let h = tape.add_row(h, b1)?;
        let h = tape.relu(h);
        let z = tape.matmul(h, w2)?;
        let z = tape.add_row(z, b2)?;
        let theta = tape.sigmoid(z);
        Ok(Some(Spectral {
            u,
            one_minus_lambda,
            theta,
        }))
    }

    /// Propagation of an already transformed input `xw = H W_ℓ`.
    fn propagate(
        &self,
        tape: &mut Tape,
        ctx: &GraphContext,
        spectral: Option<&Spectral>,
        xw: Var,
        layer: usize,
    ) -> Result<Var> {
        let smoothed = tape.sparse_matmul(ctx.propagation.clone(), xw)?;
        let Some(sp) = spectral.filter(|_| self.config.branch_on(layer)) else {
            return Ok(smoothed);
        };
        let alpha_l = self.config.filter_params(layer)?.alpha_at_layer();
        // g = (1 − λ) ⊙ (1 − α_ℓ θ)
        let beta = tape.scale(sp.theta, -alpha_l);
        let beta = tape.add_scalar(beta, 1.0);
        let g = tape.mul(beta, sp.one_minus_lambda)?;
        let coeffs = tape.matmul_tn(sp.u, xw)?;
        let coeffs = tape.scale_rows(coeffs, g)?;
        let correction = tape.matmul(sp.u, coeffs)?;
        let total = tape.add(smoothed, correction)?;
        Ok(match self.config.combine {
            Combine::Sum => total,
            Combine::Mean => tape.scale(total, 0.5),
        })
    }

    /// Records a full forward pass. Dropout draws come from `seed`.
    pub fn forward(&self, tape: &mut Tape, ctx: &GraphContext, training: bool, seed: u64) -> Result<Forward> {
        if ctx.features.n_cols() != self.weights[0].value.rows() {
            return Err(Error::shape(
                "forward",
                format!(
                    "{} input features for a model expecting {}",
                    ctx.features.n_cols(),
                    self.weights[0].value.rows()
                ),
            ));
        }
        let params: Vec<Var> = self.parameters().map(|t| tape.tensor(t)).collect();
        let spectral = self.spectral_leaves(tape, ctx, &params)?;
        let depth = self.config.depth;
        let rate = self.config.dropout;

        let x = if training && rate > 0.0 {
            Arc::new(sparse_dropout(&ctx.features, rate, derive_seed(&[seed, 1]))?)
        } else {
            ctx.features.clone()
        };
        let xw = tape.sparse_matmul(x, params[0])?;
        let mut h = self.propagate(tape, ctx, spectral.as_ref(), xw, 1)?;
        h = tape.relu(h);
        let mut embeddings = h;
        for layer in 2..=depth {
            embeddings = h;
            let hd = tape.dropout(h, rate, derive_seed(&[seed, layer as u64]), training)?;
            let xw = tape.matmul(hd, params[layer - 1])?;
            h = self.propagate(tape, ctx, spectral.as_ref(), xw, layer)?;
            if layer < depth {
                h = tape.relu(h);
            }
        }
        Ok(Forward {
            logits: h,
            embeddings,
            params,
        })
    }

    /// Evaluation-mode logits and embeddings.
    pub fn predict(&self, ctx: &GraphContext) -> Result<(Matrix, Matrix)> {
        let mut tape = Tape::new();
        let f = self.forward(&mut tape, ctx, false, 0)?;
        Ok((tape.value(f.logits).clone(), tape.value(f.embeddings).clone()))
    }
}

/// First `k` eigenpairs as `(U_k, λ)`.
fn truncated(basis: &EigenBasis, k: usize) -> (Matrix, Vec<f64>) {
    if k == basis.k() {
        return (basis.eigenvectors.clone(), basis.eigenvalues.clone());
    }
    let n = basis.n();
    let mut u = Matrix::zeros(n, k);
    for r in 0..n {
        u.row_mut(r).copy_from_slice(&basis.eigenvectors.row(r)[..k]);
    }
    (u, basis.eigenvalues[..k].to_vec())
}

fn run_stream(config: &ModelConfig) -> u64 {
    derive_seed(&[config.seed, config.depth as u64, config.variant().stream_id()])
}

/// `U_k diag(g_LoRA(λ_i; α_ℓ)) U_kᵀ H` as three skinny products.
pub fn lora_correction(h: &Matrix, basis: &EigenBasis, params: &FilterParams, net: &ThetaNet) -> Result<Matrix> {
    if h.rows() != basis.n() {
        return Err(Error::shape(
            "lora_correction",
            format!("{} rows against a basis over {} nodes", h.rows(), basis.n()),
        ));
    }
    let mut coeffs = basis.eigenvectors.matmul_tn(h)?;
    for (i, &lambda) in basis.eigenvalues.iter().enumerate() {
        let g = lora_filter(lambda, params, net)?;
        coeffs.row_mut(i).iter_mut().for_each(|v| *v *= g);
    }
    basis.eigenvectors.matmul(&coeffs)
}

/// Output of layer `layer` (1-based) for a dense input `h`.
pub fn layer_forward(
    h: &Matrix,
    layer: usize,
    model: &GcnModel,
    ctx: &GraphContext,
    training: bool,
    seed: u64,
) -> Result<Matrix> {
    if layer == 0 || layer > model.config.depth {
        return Err(Error::Parameter(format!(
            "layer {layer} outside 1..={}",
            model.config.depth
        )));
    }
    let mut tape = Tape::new();
    let params: Vec<Var> = model.parameters().map(|t| tape.tensor(t)).collect();
    let spectral = model.spectral_leaves(&mut tape, ctx, &params)?;
    let x = tape.constant(h.clone());
    let x = tape.dropout(x, model.config.dropout, seed, training)?;
    let xw = tape.matmul(x, params[layer - 1])?;
    let mut out = model.propagate(&mut tape, ctx, spectral.as_ref(), xw, layer)?;
    if layer < model.config.depth {
        out = tape.relu(out);
    }
    Ok(tape.value(out).clone())
}

/// Fraction of masked rows whose arg-max column equals the label; ties go
/// to the lowest column.
pub fn accuracy(logits: &Matrix, labels: &[usize], mask: &[bool]) -> f64 {
    let mut total = 0usize;
    let mut hits = 0usize;
    for i in (0..logits.rows()).filter(|&i| mask[i]) {
        total += 1;
        let row = logits.row(i);
        let pred = (0..row.len()).fold(0, |best, j| if row[j] > row[best] { j } else { best });
        if pred == labels[i] {
            hits += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainResult {
    pub test_acc: f64,
    pub best_val_acc: f64,
    /// Zero-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub val_history: Vec<f64>,
    pub final_embeddings: Matrix,
}

/// Full-batch training with early stopping on validation accuracy. The model
/// ends up holding the parameters of the best epoch (earliest on ties).
pub fn train(model: &mut GcnModel, data: &GraphDataset, ctx: &GraphContext, tc: &TrainConfig) -> Result<TrainResult> {
    if !data.train_mask.iter().any(|&m| m) {
        return Err(Error::Data("empty training mask".into()));
    }
    if ctx.n_nodes() != data.n_nodes {
        return Err(Error::shape(
            "train",
            format!("context over {} nodes, dataset has {}", ctx.n_nodes(), data.n_nodes),
        ));
    }
    let stream = run_stream(&model.config);
    let adam = tc.adam();
    let mut state = AdamState::new();
    let mut best: Option<(f64, usize, Vec<Tensor>)> = None;
    let mut stale = 0usize;
    let mut val_history = Vec::new();

    for epoch in 0..tc.max_epochs {
        let mut tape = Tape::new();
        let fwd = model.forward(&mut tape, ctx, true, derive_seed(&[stream, 1, epoch as u64]))?;
        let loss = tape.log_softmax_cross_entropy(fwd.logits, &data.labels, &data.train_mask)?;
        let loss_value = tape.value(loss).get(0, 0);
        if !loss_value.is_finite() {
            return Err(Error::Training(format!("non-finite loss at epoch {epoch}")));
        }
        tape.backward(loss)?;
        for (param, var) in model.parameters_mut().zip(&fwd.params) {
            param.grad = Some(
                tape.grad(*var)
                    .cloned()
                    .unwrap_or_else(|| Matrix::zeros(param.value.rows(), param.value.cols())),
            );
        }
        let mut params: Vec<&mut Tensor> = model.parameters_mut().collect();
        adam_step(&mut params, &mut state, &adam)?;

        let (logits, _) = model.predict(ctx)?;
        let val = accuracy(&logits, &data.labels, &data.val_mask);
        val_history.push(val);
        if best.as_ref().map_or(true, |(b, _, _)| val > *b) {
            let snapshot = model.parameters().cloned().collect();
            best = Some((val, epoch, snapshot));
            stale = 0;
        } else {
            stale += 1;
            if stale >= tc.patience {
                break;
            }
        }
    }

    let Some((best_val_acc, best_epoch, snapshot)) = best else {
        return Err(Error::Training("no epochs were run".into()));
    };
    for (param, saved) in model.parameters_mut().zip(snapshot) {
        *param = saved;
        param.grad = None;
    }
    let (logits, embeddings) = model.predict(ctx)?;
    Ok(TrainResult {
        test_acc: accuracy(&logits, &data.labels, &data.test_mask),
        best_val_acc,
        best_epoch,
        epochs_run: val_history.len(),
        val_history,
        final_embeddings: embeddings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub variant: Variant,
    pub depth: usize,
    pub seed: u64,
    pub test_acc: f64,
    pub val_acc: f64,
    pub best_epoch: usize,
    pub embed_variance: f64,
    #[serde(skip)]
    pub embeddings: Option<Matrix>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub variant: Variant,
    pub depth: usize,
    pub n_seeds: usize,
    pub mean_test_acc: f64,
    pub std_test_acc: f64,
    pub mean_embed_variance: f64,
    pub std_embed_variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolResult {
    /// Sorted by (variant, depth, seed).
    pub runs: Vec<RunRecord>,
    /// Sorted by (variant, depth).
    pub summary: Vec<SummaryRow>,
}

impl ProtocolResult {
    pub fn summary_for(&self, variant: Variant, depth: usize) -> Option<&SummaryRow> {
        self.summary
            .iter()
            .find(|r| r.variant == variant && r.depth == depth)
    }
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Options of [`run_protocol`] beyond the two configs.
#[derive(Clone, Default)]
pub struct ProtocolOptions {
    pub variants: Vec<Variant>,
    pub keep_embeddings: bool,
    /// Called with every finished run's trained model.
    #[allow(clippy::type_complexity)]
    pub on_model: Option<Arc<dyn Fn(&RunRecord, &GcnModel) -> Result<()> + Send + Sync>>,
}

impl std::fmt::Debug for ProtocolOptions {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProtocolOptions")
            .field("variants", &self.variants)
            .field("keep_embeddings", &self.keep_embeddings)
            .field("on_model", &self.on_model.as_ref().map(|_| "<callback>"))
            .finish()
    }
}

/// Trains every (variant, depth, seed) combination, seeds `0..n_seeds`,
/// in parallel on the current rayon pool. Results do not depend on the
/// scheduling.
pub fn run_protocol(
    data: &GraphDataset,
    depths: &[usize],
    tc: &TrainConfig,
    base: &ModelConfig,
    basis: Option<Arc<EigenBasis>>,
    opts: &ProtocolOptions,
) -> Result<ProtocolResult> {
    let variants = if opts.variants.is_empty() {
        vec![Variant::Gcn, Variant::Lora]
    } else {
        let mut v = opts.variants.clone();
        v.sort();
        v.dedup();
        v
    };
    if variants.contains(&Variant::Lora) && basis.is_none() {
        return Err(Error::Parameter("the lora variant needs an eigenbasis".into()));
    }
    let mut depths = depths.to_vec();
    depths.sort_unstable();
    depths.dedup();
    let ctx = GraphContext::new(data, base.adjacency, basis)?;

    let jobs: Vec<(Variant, usize, u64)> = variants
        .iter()
        .flat_map(|&v| {
            depths
                .iter()
                .flat_map(move |&d| (0..tc.n_seeds as u64).map(move |s| (v, d, s)))
        })
        .collect();

    let runs = jobs
        .par_iter()
        .map(|&(variant, depth, seed)| {
            let config = ModelConfig {
                depth,
                seed,
                ..base.for_variant(variant)
            };
            let mut model = GcnModel::seeded(config, data.n_features(), data.n_classes)?;
            let result = train(&mut model, data, &ctx, tc)?;
            let record = RunRecord {
                variant,
                depth,
                seed,
                test_acc: result.test_acc,
                val_acc: result.best_val_acc,
                best_epoch: result.best_epoch,
                embed_variance: embedding_variance(&result.final_embeddings)?,
                embeddings: opts.keep_embeddings.then_some(result.final_embeddings),
            };
            if let Some(cb) = &opts.on_model {
                cb(&record, &model)?;
            }
            Ok(record)
        })
        .collect::<Result<Vec<_>>>()?;

    let summary = variants
        .iter()
        .flat_map(|&v| depths.iter().map(move |&d| (v, d)))
        .map(|(variant, depth)| {
            let rows: Vec<&RunRecord> = runs
                .iter()
                .filter(|r| r.variant == variant && r.depth == depth)
                .collect();
            let acc: Vec<f64> = rows.iter().map(|r| r.test_acc).collect();
            let var: Vec<f64> = rows.iter().map(|r| r.embed_variance).collect();
            let (mean_test_acc, std_test_acc) = mean_std(&acc);
            let (mean_embed_variance, std_embed_variance) = mean_std(&var);
            SummaryRow {
                variant,
                depth,
                n_seeds: rows.len(),
                mean_test_acc,
                std_test_acc,
                mean_embed_variance,
                std_embed_variance,
            }
        })
        .collect();
    Ok(ProtocolResult { runs, summary })
}

/// `θ` network size, independent of depth.
pub const THETA_PARAMETERS: usize = 3 * THETA_HIDDEN + 1;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{generate, GraphKind, SyntheticSpec};

    fn cliques() -> GraphDataset {
        generate(&SyntheticSpec::new(GraphKind::TwoCliques, 10)).unwrap()
    }

    #[test]
    fn config_validation() {
        let ok = ModelConfig::default();
        assert!(ok.validate().is_ok());
        for bad in [
            ModelConfig { depth: 1, ..ok.clone() },
            ModelConfig { dropout: 1.0, ..ok.clone() },
            ModelConfig { alpha: 1.2, ..ok.clone() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Parameter(_))));
        }
    }

    #[test]
    fn weights_have_expected_shapes() {
        let cfg = ModelConfig {
            depth: 4,
            hidden_dim: 8,
            use_lora: true,
            ..ModelConfig::default()
        };
        let m = GcnModel::seeded(cfg, 5, 3).unwrap();
        let shapes: Vec<_> = m.weights.iter().map(Tensor::shape).collect();
        assert_eq!(shapes, vec![(5, 8), (8, 8), (8, 8), (8, 3)]);
        assert_eq!(m.theta_parameter_count(), THETA_PARAMETERS);
    }

    #[test]
    fn seeds_are_distinct_per_stream() {
        assert_ne!(derive_seed(&[0, 2, 0]), derive_seed(&[0, 2, 1]));
        assert_ne!(derive_seed(&[0, 2]), derive_seed(&[2, 0]));
        assert_eq!(derive_seed(&[3, 4]), derive_seed(&[3, 4]));
    }

    #[test]
    fn empty_train_mask_is_a_data_error() {
        let mut data = cliques();
        data.train_mask = vec![false; data.n_nodes];
        let ctx = GraphContext::new(&data, Adjacency::Plain, None).unwrap();
        let mut m = GcnModel::seeded(ModelConfig::default(), data.n_features(), 2).unwrap();
        assert!(matches!(
            train(&mut m, &data, &ctx, &TrainConfig::default()),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn lora_without_basis_is_rejected() {
        let data = cliques();
        let ctx = GraphContext::new(&data, Adjacency::Plain, None).unwrap();
        let cfg = ModelConfig {
            use_lora: true,
            ..ModelConfig::default()
        };
        let m = GcnModel::seeded(cfg, data.n_features(), 2).unwrap();
        assert!(m.predict(&ctx).is_err());
    }

    #[test]
    fn population_std() {
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!((m, s), (2.0, 1.0));
    }

    #[test]
    fn accuracy_breaks_ties_low() {
        let logits = Matrix::from_rows(&[vec![1.0, 1.0], vec![0.0, 2.0]]).unwrap();
        assert_eq!(accuracy(&logits, &[0, 1], &[true, true]), 1.0);
        assert_eq!(accuracy(&logits, &[1, 1], &[true, false]), 0.0);
    }
}
