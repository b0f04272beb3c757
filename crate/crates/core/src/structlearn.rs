//! Continuous-optimization structure learning under the acyclicity
//! constraint `h(W) = tr(e^{W∘W}) − V = 0`.
//!
//! Three encoder/decoder variants share the augmented-Lagrangian loop:
//!
//! | algo      | latent                    | reconstruction                |
//! |-----------|---------------------------|-------------------------------|
//! | `NoTears` | `Z = X`                   | `D(W·Z)`, MSE                 |
//! | `Gnn`     | `Z = (−I+W)·E(X)` (+noise) | `D((−I+W)⁻¹·Z)`, negative ELBO |
//! | `Gae`     | `Z = E(X)`                | `D(W·Z)`, MSE                 |
//!
//! `E` and `D` are one MLP shared by every node channel. Their layer weights
//! enter at unit Frobenius norm, so the networks cannot undo a shrinking `W`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{acyclicity, find_cycle, CausalMask, WeightedAdjacency};
use crate::math;
use crate::rng;
use crate::semgen::{Dataset, Standardization};
use crate::tensorcore::{load_grads, Activation, AdamConfig, AdamState, Mlp, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgoKind {
    NoTears,
    Gnn,
    Gae,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "StructAlgoRepr")]
pub struct StructAlgo {
    pub kind: AlgoKind,
    /// Hidden widths of the shared per-node encoder and decoder.
    pub hidden: Vec<usize>,
    /// Latent width per node. Only 1 is supported.
    pub latent_dim: usize,
}

impl StructAlgo {
    /// `NoTears` defaults to a linear decoder, the others to one hidden layer of 16.
    pub fn new(kind: AlgoKind) -> Self {
        Self {
            kind,
            hidden: match kind {
                AlgoKind::NoTears => vec![],
                AlgoKind::Gnn | AlgoKind::Gae => vec![16],
            },
            latent_dim: 1,
        }
    }
}

impl Default for StructAlgo {
    fn default() -> Self {
        Self::new(AlgoKind::Gae)
    }
}

/// Serialized form of [`StructAlgo`]: omitted fields take the defaults of
/// the chosen kind.
#[derive(Deserialize)]
struct StructAlgoRepr {
    kind: AlgoKind,
    hidden: Option<Vec<usize>>,
    latent_dim: Option<usize>,
}

impl From<StructAlgoRepr> for StructAlgo {
    fn from(r: StructAlgoRepr) -> Self {
        let base = Self::new(r.kind);
        Self {
            kind: r.kind,
            hidden: r.hidden.unwrap_or(base.hidden),
            latent_dim: r.latent_dim.unwrap_or(base.latent_dim),
        }
    }
}

/// Preprocessing applied to the data before fitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scaling {
    None,
    /// Centered columns divided by one shared scale. Keeps the variance
    /// ordering between nodes, which is what identifies a linear-gaussian DAG
    /// with equal noise scales.
    Pooled,
    /// Centered unit-variance columns.
    PerColumn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StructConfig {
    pub algo: StructAlgo,
    pub adam: AdamConfig,
    pub inner_steps: usize,
    /// Learning rate at the end of each inner loop, as a fraction of
    /// `adam.lr` (cosine decay in between).
    pub lr_floor: f64,
    /// Fresh Adam moments at the start of every outer iteration.
    pub reset_adam: bool,
    /// Rows per Adam step; `None` uses the full dataset. Serialized as 0
    /// in that case, since formats like TOML have no null.
    #[serde(with = "full_batch_as_zero")]
    pub batch_size: Option<usize>,
    pub c_init: f64,
    pub c_growth: f64,
    pub c_max: f64,
    /// Progress ratio η: `c` grows unless `h` shrank below `η·h_prev`.
    pub progress_ratio: f64,
    pub h_tol: f64,
    pub max_outer: usize,
    pub threshold: f64,
    pub scaling: Scaling,
    pub min_rows: usize,
    pub seed: u64,
}

mod full_batch_as_zero {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<usize>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(v.unwrap_or(0) as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<usize>, D::Error> {
        let n = usize::deserialize(d)?;
        Ok((n > 0).then_some(n))
    }
}

impl Default for StructConfig {
    fn default() -> Self {
        Self {
            algo: StructAlgo::new(AlgoKind::Gae),
            adam: AdamConfig::with_lr(1e-2),
            inner_steps: 300,
            lr_floor: 0.01,
            reset_adam: false,
            batch_size: Some(256),
            c_init: 1.0,
            c_growth: 10.0,
            c_max: 1e16,
            progress_ratio: 0.25,
            h_tol: 1e-8,
            max_outer: 20,
            threshold: 0.3,
            scaling: Scaling::Pooled,
            min_rows: 100,
            seed: 0,
        }
    }
}

impl StructConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.batch_size == Some(0) {
            return bad("batch_size must be positive".into());
        }
        if self.algo.hidden.contains(&0) {
            return bad(format!(
                "hidden widths must be positive, got {:?}",
                self.algo.hidden
            ));
        }
        if self.algo.latent_dim != 1 {
            return bad(format!(
                "latent_dim must be 1, got {}",
                self.algo.latent_dim
            ));
        }
        if !(self.progress_ratio > 0.0 && self.progress_ratio < 1.0) {
            return bad(format!(
                "progress_ratio must lie in (0, 1), got {}",
                self.progress_ratio
            ));
        }
        if !(self.lr_floor > 0.0 && self.lr_floor <= 1.0) {
            return bad(format!(
                "lr_floor must lie in (0, 1], got {}",
                self.lr_floor
            ));
        }
        if !(self.threshold >= 0.0) {
            return bad(format!("threshold must be >= 0, got {}", self.threshold));
        }
        if !(self.h_tol > 0.0 && self.c_init > 0.0 && self.c_growth >= 1.0 && self.adam.lr > 0.0) {
            return bad("h_tol, c_init and lr must be positive and c_growth >= 1".into());
        }
        if self.inner_steps == 0 || self.max_outer == 0 {
            return bad("inner_steps and max_outer must be positive".into());
        }
        Ok(())
    }
}

/// Multiplier state of the augmented Lagrangian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugLagState {
    pub lambda: f64,
    pub c: f64,
    pub h_prev: f64,
    pub outer: usize,
}

impl AugLagState {
    pub fn new(c_init: f64) -> Self {
        Self {
            lambda: 0.0,
            c: c_init,
            h_prev: f64::INFINITY,
            outer: 0,
        }
    }
}

/// `recon + λ·|h| + (c/2)·|h|²`
pub fn aug_lagrangian(recon: f64, h: f64, state: &AugLagState) -> f64 {
    recon + state.lambda * h.abs() + 0.5 * state.c * h * h
}

/// Taped augmented Lagrangian for a recorded reconstruction loss and `W`.
pub fn aug_lagrangian_tape(
    tape: &mut Tape,
    recon: Var,
    w: Var,
    state: &AugLagState,
) -> Result<Var> {
    let (h, grad) = acyclicity(tape.value(w)?)?;
    let hv = tape.scalar_fn(w, h, grad)?;
    let habs = tape.abs(hv)?;
    let lin = tape.scale(habs, state.lambda)?;
    let sq = tape.square(hv)?;
    let quad = tape.scale(sq, 0.5 * state.c)?;
    let pen = tape.add(lin, quad)?;
    tape.add(recon, pen)
}

/// Dual ascent step: `λ ← λ + c·h`; `c ← growth·c` unless `h ≤ η·h_prev`.
pub fn dual_update(
    state: &AugLagState,
    h_new: f64,
    growth: f64,
    progress_ratio: f64,
    c_max: f64,
) -> Result<AugLagState> {
    if !(h_new >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "constraint value must be >= 0, got {h_new}"
        )));
    }
    let mut next = *state;
    next.lambda += state.c * h_new;
    if h_new > progress_ratio * state.h_prev {
        next.c *= growth;
    }
    if !(next.c <= c_max) || !next.lambda.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "penalty schedule overflow: c = {:e}, λ = {:e}",
            next.c, next.lambda
        )));
    }
    next.h_prev = h_new;
    next.outer += 1;
    Ok(next)
}

const W_INIT_SCALE: f64 = 0.05;

/// Trainable parameters of one structure-learning run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructModel {
    pub kind: AlgoKind,
    pub w: Tensor,
    pub encoder: Option<Mlp>,
    pub decoder: Mlp,
    /// Per-node latent log-variance (`Gnn` only), `[1, V]`.
    pub latent_logvar: Option<Tensor>,
}

struct ModelVars {
    w: Var,
    encoder: Vec<Var>,
    decoder: Vec<Var>,
    logvar: Option<Var>,
}

impl StructModel {
    pub fn new(algo: &StructAlgo, v: usize, seed: u64) -> Result<Self> {
        let mut r = rng::rng(seed);
        let mut widths = vec![1];
        widths.extend_from_slice(&algo.hidden);
        widths.push(1);
        let mut net = || -> Result<Mlp> {
            let mut m = Mlp::new(&widths, Activation::Relu, &mut r)?;
            spread_biases(&mut m, &mut r);
            Ok(m)
        };
        let encoder = match algo.kind {
            AlgoKind::NoTears => None,
            AlgoKind::Gnn | AlgoKind::Gae => Some(net()?),
        };
        let decoder = net()?;
        // Nonzero start: at W = 0 the decoder sees a constant input and its
        // ReLU units pass no gradient back to W.
        let w = Tensor::from_fn(v, v, |i, j| {
            let u: f64 = r.random_range(-W_INIT_SCALE..W_INIT_SCALE);
            if i == j {
                0.0
            } else {
                u
            }
        });
        Ok(Self {
            kind: algo.kind,
            w,
            encoder,
            decoder,
            latent_logvar: matches!(algo.kind, AlgoKind::Gnn).then(|| Tensor::zeros(1, v)),
        })
    }

    pub fn nodes(&self) -> usize {
        self.w.rows()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.w];
        if let Some(e) = self.encoder.as_mut() {
            out.extend(e.params_mut());
        }
        out.extend(self.decoder.params_mut());
        if let Some(lv) = self.latent_logvar.as_mut() {
            out.push(lv);
        }
        out
    }

    fn param_names(&self) -> Vec<String> {
        let mut out = vec![String::from("w")];
        let mlp_names = |prefix: &str, m: &Mlp| -> Vec<String> {
            (0..m.layers.len())
                .flat_map(|l| [format!("{prefix}.{l}.weight"), format!("{prefix}.{l}.bias")])
                .collect()
        };
        if let Some(e) = &self.encoder {
            out.extend(mlp_names("encoder", e));
        }
        out.extend(mlp_names("decoder", &self.decoder));
        if self.latent_logvar.is_some() {
            out.push("latent_logvar".into());
        }
        out
    }

    fn register(&self, tape: &mut Tape) -> ModelVars {
        ModelVars {
            w: tape.param(&self.w),
            encoder: self
                .encoder
                .as_ref()
                .map(|e| e.register(tape))
                .unwrap_or_default(),
            decoder: self.decoder.register(tape),
            logvar: self.latent_logvar.as_ref().map(|lv| tape.param(lv)),
        }
    }

    /// `W` with its diagonal forced to zero.
    pub fn adjacency(&self) -> Result<WeightedAdjacency> {
        let v = self.nodes();
        WeightedAdjacency::new(Tensor::from_fn(v, v, |i, j| {
            if i == j {
                0.0
            } else {
                self.w.at(i, j)
            }
        }))
    }
}

/// Biases drawn from `U(±1/√fan_in)`. With zero biases every ReLU kink of
/// a 1→h→1 net sits at the origin, so the net is one of a few two-slope
/// shapes; an even encoder then hides the sign of a parent from `W`.
fn spread_biases(net: &mut Mlp, r: &mut rng::Rng) {
    for layer in &mut net.layers {
        let limit = 1.0 / math::sqrt(layer.weight.rows() as f64);
        layer
            .bias
            .values_mut()
            .iter_mut()
            .for_each(|b| *b = r.random_range(-limit..limit));
    }
}

/// Layer weights rescaled to unit Frobenius norm (biases untouched), which
/// makes the networks 1-Lipschitz so they cannot absorb the scale of `W`.
fn unit_norm_layers(tape: &mut Tape, vars: &[Var]) -> Result<Vec<Var>> {
    vars.iter()
        .enumerate()
        .map(|(k, &v)| {
            if k % 2 == 1 {
                return Ok(v);
            }
            let sq = tape.square(v)?;
            let ss = tape.sum(sq)?;
            let inv = tape.powf(ss, -0.5)?;
            tape.mul_scalar(v, inv)
        })
        .collect()
}

/// Applies a 1→…→1 MLP to every entry of an `n×V` tensor.
fn per_node(tape: &mut Tape, net: &Mlp, vars: &[Var], x: Var) -> Result<Var> {
    let (n, v) = tape.value(x)?.dims();
    let flat = tape.reshape(x, n * v, 1)?;
    let y = net.forward(tape, vars, flat)?;
    tape.reshape(y, n, v)
}

/// Reconstruction loss for one batch, plus the taped `W` (diagonal masked).
pub fn forward_loss(
    tape: &mut Tape,
    model: &StructModel,
    batch: &Tensor,
    seed: u64,
) -> Result<(Var, Var)> {
    let vars = model.register(tape);
    forward_with(tape, model, &vars, batch, seed)
}

fn forward_with(
    tape: &mut Tape,
    model: &StructModel,
    vars: &ModelVars,
    batch: &Tensor,
    seed: u64,
) -> Result<(Var, Var)> {
    batch.check_finite("structure batch")?;
    let (n, v) = batch.dims();
    let off_diag = tape.constant(Tensor::from_fn(v, v, |i, j| if i == j { 0.0 } else { 1.0 }));
    let w = tape.mul(vars.w, off_diag)?;
    let x = tape.constant(batch.clone());
    let enc_vars = unit_norm_layers(tape, &vars.encoder)?;
    let dec_vars = unit_norm_layers(tape, &vars.decoder)?;
    let inv_n = 1.0 / n as f64;
    let recon = match model.kind {
        AlgoKind::NoTears | AlgoKind::Gae => {
            let z = match (&model.encoder, model.kind) {
                (Some(enc), AlgoKind::Gae) => per_node(tape, enc, &enc_vars, x)?,
                _ => x,
            };
            let wt = tape.transpose(w)?;
            let wz = tape.matmul(z, wt)?;
            let xhat = per_node(tape, &model.decoder, &dec_vars, wz)?;
            let diff = tape.sub(x, xhat)?;
            let sq = tape.square(diff)?;
            let s = tape.sum(sq)?;
            tape.scale(s, inv_n)?
        }
        AlgoKind::Gnn => {
            let enc = model
                .encoder
                .as_ref()
                .ok_or_else(|| Error::Contract("Gnn model has no encoder".into()))?;
            let lv = vars
                .logvar
                .ok_or_else(|| Error::Contract("Gnn model has no latent log-variance".into()))?;
            let neg_id = tape.constant(Tensor::identity(v).map(|x| -x));
            let a = tape.add(neg_id, w)?;
            let a_inv = match tape.inverse(a) {
                Ok(inv) => inv,
                Err(Error::Singular(_)) => {
                    let w99 = tape.scale(w, 0.99)?;
                    let a99 = tape.add(neg_id, w99)?;
                    tape.inverse(a99)?
                }
                Err(e) => return Err(e),
            };
            let h = per_node(tape, enc, &enc_vars, x)?;
            let at = tape.transpose(a)?;
            let mu = tape.matmul(h, at)?;
            let half = tape.scale(lv, 0.5)?;
            let std = tape.exp(half)?;
            let mut r = rng::rng(seed);
            let eta = tape.constant(Tensor::from_fn(n, v, |_, _| rng::standard_normal(&mut r)));
            let noise = tape.mul_row(eta, std)?;
            let z = tape.add(mu, noise)?;
            let inv_t = tape.transpose(a_inv)?;
            let lin = tape.matmul(z, inv_t)?;
            let xhat = per_node(tape, &model.decoder, &dec_vars, lin)?;
            let diff = tape.sub(x, xhat)?;
            let sq = tape.square(diff)?;
            let nll = tape.sum(sq)?;
            let nll = tape.scale(nll, 0.5)?;
            // KL(N(μ, σ²) ‖ N(0, 1)) = ½ Σ (μ² + σ² − 1 − log σ²)
            let mu2 = tape.square(mu)?;
            let mu2 = tape.sum(mu2)?;
            let var = tape.exp(lv)?;
            let var_minus = tape.sub(var, lv)?;
            let per_node_kl = tape.add_scalar(var_minus, -1.0)?;
            let var_term = tape.sum(per_node_kl)?;
            let var_term = tape.scale(var_term, n as f64)?;
            let kl = tape.add(mu2, var_term)?;
            let kl = tape.scale(kl, 0.5)?;
            let total = tape.add(nll, kl)?;
            tape.scale(total, inv_n)?
        }
    };
    Ok((recon, w))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub outer: usize,
    pub h: f64,
    pub recon: f64,
    pub lambda: f64,
    pub c: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StructStatus {
    Converged,
    MaxIterations,
    PenaltyOverflow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructResult {
    pub w_hat: WeightedAdjacency,
    pub history: Vec<HistoryRow>,
    pub status: StructStatus,
    pub standardization: Option<Standardization>,
}

impl StructResult {
    pub fn final_h(&self) -> f64 {
        self.history.last().map_or(f64::NAN, |r| r.h)
    }
}

/// Runs the augmented-Lagrangian schedule on `dataset`.
pub fn learn_structure(dataset: &Dataset, config: &StructConfig) -> Result<StructResult> {
    config.validate()?;
    let n = dataset.rows();
    if n < config.min_rows {
        return Err(Error::TooFewSamples {
            needed: config.min_rows,
            got: n,
        });
    }
    let v = dataset.nodes();
    let standardization = match config.scaling {
        Scaling::None => None,
        Scaling::Pooled => Some(Standardization::fit_pooled(&dataset.data)),
        Scaling::PerColumn => Some(Standardization::fit(&dataset.data)),
    };
    let data = match &standardization {
        Some(s) => s.apply(&dataset.data),
        None => dataset.data.clone(),
    };

    let mut model = StructModel::new(&config.algo, v, rng::derive_seed(config.seed, "init"))?;
    let names = model.param_names();
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    let fresh_adam = |model: &mut StructModel| {
        let ps = model.params_mut();
        let refs: Vec<&Tensor> = ps.into_iter().map(|p| &*p).collect();
        AdamState::new(config.adam, &refs)
    };
    let mut adam = fresh_adam(&mut model);
    let batch_size = config.batch_size.unwrap_or(n).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut shuffle_rng = rng::rng(rng::derive_seed(config.seed, "batches"));
    let noise_seed = rng::derive_seed(config.seed, "noise");

    let mut state = AugLagState::new(config.c_init);
    let mut history = Vec::new();
    let mut status = StructStatus::MaxIterations;
    let mut step: u64 = 0;
    let mut cursor = n;
    for outer in 0..config.max_outer {
        if config.reset_adam && outer > 0 {
            adam = fresh_adam(&mut model);
        }
        for inner in 0..config.inner_steps {
            let progress = inner as f64 / config.inner_steps as f64;
            let cosine = 0.5 * (1.0 + math::cos(core::f64::consts::PI * progress));
            let base = config.adam.lr / math::log10(state.c).max(1.0);
            adam.config.lr = base * (config.lr_floor + (1.0 - config.lr_floor) * cosine);
            let batch = if batch_size == n {
                data.clone()
            } else {
                if cursor + batch_size > n {
                    use rand::seq::SliceRandom;
                    order.shuffle(&mut shuffle_rng);
                    cursor = 0;
                }
                let b = data.select_rows(&order[cursor..cursor + batch_size]);
                cursor += batch_size;
                b
            };
            let mut tape = Tape::new();
            let vars = model.register(&mut tape);
            let (recon, w) = forward_with(
                &mut tape,
                &model,
                &vars,
                &batch,
                rng::derive_index(noise_seed, step),
            )?;
            let loss = aug_lagrangian_tape(&mut tape, recon, w, &state)?;
            let lv = tape.value(loss)?.item();
            if !lv.is_finite() {
                return Err(Error::NonFiniteLoss {
                    iteration: outer,
                    detail: format!("augmented Lagrangian = {lv} at inner step {step}"),
                });
            }
            let grads = tape.backward(loss)?;
            let mut all_vars = vec![vars.w];
            all_vars.extend(&vars.encoder);
            all_vars.extend(&vars.decoder);
            all_vars.extend(vars.logvar);
            let mut params = model.params_mut();
            load_grads(&grads, &all_vars, &mut params)?;
            adam.step(&mut params, &names)?;
            step += 1;
        }
        let mut tape = Tape::new();
        let (recon, _) = forward_loss(
            &mut tape,
            &model,
            &data,
            rng::derive_index(noise_seed, u64::MAX),
        )?;
        let recon = tape.value(recon)?.item();
        let (h, _) = acyclicity(model.adjacency()?.matrix())?;
        history.push(HistoryRow {
            outer,
            h,
            recon,
            lambda: state.lambda,
            c: state.c,
        });
        if !recon.is_finite() || !h.is_finite() {
            return Err(Error::NonFiniteLoss {
                iteration: outer,
                detail: format!("recon = {recon}, h = {h}"),
            });
        }
        if h < config.h_tol {
            status = StructStatus::Converged;
            break;
        }
        match dual_update(
            &state,
            h,
            config.c_growth,
            config.progress_ratio,
            config.c_max,
        ) {
            Ok(next) => state = next,
            Err(_) => {
                status = StructStatus::PenaltyOverflow;
                break;
            }
        }
    }
    Ok(StructResult {
        w_hat: model.adjacency()?,
        history,
        status,
        standardization,
    })
}

/// Thresholded mask plus the edges removed to break leftover cycles.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdOutcome {
    pub mask: CausalMask,
    /// `(parent, child, weight)` removed while breaking cycles.
    pub removed: Vec<(usize, usize, f64)>,
}

/// Zeroes `|W| < τ`, binarizes, then repeatedly drops the weakest edge of a
/// detected cycle until the graph is acyclic.
pub fn threshold_weights(w: &WeightedAdjacency, tau: f64) -> Result<ThresholdOutcome> {
    if !(tau >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "threshold must be >= 0, got {tau}"
        )));
    }
    let v = w.size();
    let mut kept = Tensor::from_fn(v, v, |i, j| {
        let x = w.weight(i, j);
        if i != j && x.abs() >= tau {
            x
        } else {
            0.0
        }
    });
    let mut removed = Vec::new();
    while let Some(cycle) = find_cycle(&kept) {
        let mut weakest: Option<(usize, usize, f64)> = None;
        for k in 0..cycle.len() {
            let (from, to) = (cycle[k], cycle[(k + 1) % cycle.len()]);
            let x = kept.at(to, from);
            if weakest.is_none_or(|(_, _, y)| x.abs() < y.abs()) {
                weakest = Some((from, to, x));
            }
        }
        let (from, to, x) = weakest.ok_or_else(|| Error::Contract("empty cycle witness".into()))?;
        kept.set(to, from, 0.0);
        removed.push((from, to, x));
    }
    Ok(ThresholdOutcome {
        mask: CausalMask::from_matrix(&kept)?,
        removed,
    })
}
