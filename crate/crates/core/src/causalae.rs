//! Causal autoencoder: a VAE whose latent coordinates are tied together by a
//! causal block of per-node networks, trained by moment matching (MMD to the
//! prior, CMMD for every child given its parents) and sampled under
//! interventions by cycling the block.
//!
//! Each node `μ` has its own encoder `x_μ → (mean, logvar)`, decoder
//! `z_μ → x̂_μ`, and block network `NN_μ` reading the parental-mask row of
//! `Z`. Data are standardized per column inside the model.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::graph::CausalMask;
use crate::math;
use crate::mmd::{self, CmmdConfig, KernelChoice};
use crate::rng;
use crate::semgen::{Dataset, Intervention, Standardization};
use crate::tensorcore::{Activation, AdamConfig, AdamState, Mlp, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CaeTrainConfig {
    pub beta: f64,
    pub gamma: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Peak Adam learning rate.
    pub lr: f64,
    /// Final learning rate as a fraction of `lr`, reached by cosine decay
    /// over all training steps.
    pub lr_floor: f64,
    pub encoder_hidden: usize,
    pub decoder_hidden: usize,
    pub block_hidden: usize,
    /// Kernel for the MMD between the latent batch and prior draws.
    pub prior_kernel: KernelChoice,
    pub cmmd: CmmdConfig,
    /// Let the CMMD term update the encoder through the real child latents.
    /// Off by default: with a large `gamma` the encoder then collapses the
    /// child latents, which makes them trivially predictable.
    pub cmmd_trains_encoder: bool,
    pub seed: u64,
}

impl Default for CaeTrainConfig {
    fn default() -> Self {
        Self {
            beta: 1.0,
            gamma: 300.0,
            epochs: 120,
            batch_size: 256,
            lr: 3e-3,
            lr_floor: 0.05,
            encoder_hidden: 16,
            decoder_hidden: 16,
            block_hidden: 64,
            prior_kernel: KernelChoice::default(),
            cmmd: CmmdConfig::default(),
            cmmd_trains_encoder: false,
            seed: 0,
        }
    }
}

impl CaeTrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.beta > 0.0 && self.gamma >= self.beta) {
            return bad(format!(
                "need gamma >= beta > 0, got beta = {}, gamma = {}",
                self.beta, self.gamma
            ));
        }
        if self.batch_size < 2 {
            return bad(format!("batch_size must be >= 2, got {}", self.batch_size));
        }
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if !(self.lr > 0.0) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.lr_floor > 0.0 && self.lr_floor <= 1.0) {
            return bad(format!(
                "lr_floor must lie in (0, 1], got {}",
                self.lr_floor
            ));
        }
        if self.encoder_hidden == 0 || self.decoder_hidden == 0 || self.block_hidden == 0 {
            return bad("hidden widths must be positive".into());
        }
        self.prior_kernel.validate()?;
        self.cmmd.validate()
    }
}

/// Latent marginal `(mean, variance)` of one node over the training data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatentMoments {
    pub mean: f64,
    pub var: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalModel {
    pub mask: CausalMask,
    /// Per node, `1 → h → 2` producing `(mean, logvar)`.
    pub encoders: Vec<Mlp>,
    /// Per node, `1 → h → 1`.
    pub decoders: Vec<Mlp>,
    /// Per node, `V → h → 1` on the parental-mask row.
    pub block: Vec<Mlp>,
    /// Log-variance of the block noise ξ, `[1, V]`.
    pub block_logvar: Tensor,
    pub standardization: Standardization,
    pub latent_moments: Vec<LatentMoments>,
    pub config: CaeTrainConfig,
}

struct ModelVars {
    encoders: Vec<Vec<Var>>,
    decoders: Vec<Vec<Var>>,
    block: Vec<Vec<Var>>,
    block_logvar: Var,
}

/// Loss components of one evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub recon: f64,
    pub mmd: f64,
    pub cmmd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub loss: LossParts,
}

/// Standard-normal draws consumed by one loss evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct LossNoise {
    /// Encoder reparameterization, `batch × V`.
    pub encoder: Tensor,
    /// Block noise ξ before scaling, `batch × V`.
    pub block: Tensor,
    /// A second, independent ξ draw for the within-row CMMD terms.
    pub block_twin: Tensor,
    /// Prior draws for the MMD term, `batch × V`.
    pub prior: Tensor,
}

impl LossNoise {
    pub fn draw(n: usize, v: usize, seed: u64) -> Self {
        let mut r = rng::rng(seed);
        let mut normal = |_: usize, _: usize| rng::standard_normal(&mut r);
        Self {
            encoder: Tensor::from_fn(n, v, &mut normal),
            block: Tensor::from_fn(n, v, &mut normal),
            block_twin: Tensor::from_fn(n, v, &mut normal),
            prior: Tensor::from_fn(n, v, &mut normal),
        }
    }
}

impl CausalModel {
    /// Fresh model for `mask` with standardization fitted on `data`.
    pub fn new(mask: CausalMask, data: &Tensor, config: &CaeTrainConfig) -> Result<Self> {
        let v = mask.size();
        if data.cols() != v {
            return Err(dim_err("dataset columns vs mask", v, data.cols()));
        }
        let mut r = rng::rng(rng::derive_seed(config.seed, "init"));
        let mut encoders = Vec::with_capacity(v);
        let mut decoders = Vec::with_capacity(v);
        let mut block = Vec::with_capacity(v);
        for _ in 0..v {
            encoders.push(Mlp::new(
                &[1, config.encoder_hidden, 2],
                Activation::Relu,
                &mut r,
            )?);
            decoders.push(Mlp::new(
                &[1, config.decoder_hidden, 1],
                Activation::Relu,
                &mut r,
            )?);
            block.push(Mlp::new(
                &[v, config.block_hidden, 1],
                Activation::Relu,
                &mut r,
            )?);
        }
        Ok(Self {
            mask,
            encoders,
            decoders,
            block,
            block_logvar: Tensor::zeros(1, v),
            standardization: Standardization::fit(data),
            latent_moments: vec![
                LatentMoments {
                    mean: 0.0,
                    var: 1.0
                };
                v
            ],
            config: config.clone(),
        })
    }

    pub fn nodes(&self) -> usize {
        self.mask.size()
    }

    /// Every trainable tensor in a fixed order: encoders, decoders, block
    /// networks, block log-variance.
    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for net in self
            .encoders
            .iter()
            .chain(&self.decoders)
            .chain(&self.block)
        {
            out.extend(net.params());
        }
        out.push(&self.block_logvar);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for net in self
            .encoders
            .iter_mut()
            .chain(self.decoders.iter_mut())
            .chain(self.block.iter_mut())
        {
            out.extend(net.params_mut());
        }
        out.push(&mut self.block_logvar);
        out
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (group, nets) in [
            ("encoder", &self.encoders),
            ("decoder", &self.decoders),
            ("block", &self.block),
        ] {
            for (node, net) in nets.iter().enumerate() {
                for l in 0..net.layers.len() {
                    out.push(format!("{group}{node}.{l}.weight"));
                    out.push(format!("{group}{node}.{l}.bias"));
                }
            }
        }
        out.push("block_logvar".into());
        out
    }

    fn register(&self, tape: &mut Tape) -> ModelVars {
        ModelVars {
            encoders: self.encoders.iter().map(|n| n.register(tape)).collect(),
            decoders: self.decoders.iter().map(|n| n.register(tape)).collect(),
            block: self.block.iter().map(|n| n.register(tape)).collect(),
            block_logvar: tape.param(&self.block_logvar),
        }
    }

    fn check_width(&self, x: &Tensor, context: &str) -> Result<()> {
        if x.cols() != self.nodes() {
            return Err(dim_err(context, self.nodes(), x.cols()));
        }
        Ok(())
    }

    /// Encoder means and log-variances for standardized `x`.
    pub fn encode_moments(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        self.check_width(x, "encode input")?;
        x.check_finite("encode input")?;
        let (n, v) = x.dims();
        let mut means = Tensor::zeros(n, v);
        let mut logvars = Tensor::zeros(n, v);
        for (mu, enc) in self.encoders.iter().enumerate() {
            let out = enc.eval(&Tensor::column(x.col(mu)))?;
            for i in 0..n {
                means.set(i, mu, out.at(i, 0));
                logvars.set(i, mu, out.at(i, 1));
            }
        }
        Ok((means, logvars))
    }

    /// Reparameterized latent sample `Z = mean + exp(logvar/2)·η` for
    /// standardized `x`; `eta = None` returns the means.
    pub fn encode(&self, x: &Tensor, eta: Option<&Tensor>) -> Result<(Tensor, Tensor, Tensor)> {
        let (means, logvars) = self.encode_moments(x)?;
        let z = match eta {
            None => means.clone(),
            Some(eta) => {
                if eta.dims() != means.dims() {
                    return Err(dim_err("encoder noise", means.dims(), eta.dims()));
                }
                let scaled = logvars.zip_map(eta, |lv, e| math::exp(0.5 * lv) * e)?;
                means.zip_map(&scaled, |m, s| m + s)?
            }
        };
        Ok((z, means, logvars))
    }

    /// Standardized reconstruction of every column of `z`.
    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        self.check_width(z, "decode input")?;
        let (n, v) = z.dims();
        let mut out = Tensor::zeros(n, v);
        for (mu, dec) in self.decoders.iter().enumerate() {
            let col = dec.eval(&Tensor::column(z.col(mu)))?;
            for i in 0..n {
                out.set(i, mu, col.at(i, 0));
            }
        }
        Ok(out)
    }

    /// Parental-mask rows of `z` for node `mu`: non-parent coordinates are 0.
    pub fn parental_input(&self, z: &Tensor, mu: usize) -> Result<Tensor> {
        self.check_width(z, "block input")?;
        let parents = self.mask.parents(mu);
        let v = self.nodes();
        Ok(Tensor::from_fn(z.rows(), v, |i, j| {
            if parents.contains(&j) {
                z.at(i, j)
            } else {
                0.0
            }
        }))
    }

    /// One pass of the causal block. Parentless nodes pass through; every
    /// other node is `NN_μ(parental row) + exp(lv_μ/2)·ξ_μ`, with `xi` the
    /// unscaled standard-normal draws (`None` switches the noise off).
    pub fn causal_block_forward(&self, z: &Tensor, xi: Option<&Tensor>) -> Result<Tensor> {
        self.block_pass(z, xi, &[])
    }

    fn block_pass(&self, z: &Tensor, xi: Option<&Tensor>, frozen: &[usize]) -> Result<Tensor> {
        self.check_width(z, "block input")?;
        z.check_finite("block input")?;
        if let Some(xi) = xi {
            if xi.dims() != z.dims() {
                return Err(dim_err("block noise", z.dims(), xi.dims()));
            }
        }
        let mut out = z.clone();
        for mu in 0..self.nodes() {
            if self.mask.is_root(mu) || frozen.contains(&mu) {
                continue;
            }
            let pred = self.block[mu].eval(&self.parental_input(z, mu)?)?;
            let std = math::exp(0.5 * self.block_logvar.at(0, mu));
            for i in 0..z.rows() {
                let noise = xi.map_or(0.0, |x| std * x.at(i, mu));
                out.set(i, mu, pred.at(i, 0) + noise);
            }
        }
        Ok(out)
    }

    /// Latent clamp for observing `x_value` at `node`: the encoder mean of
    /// the standardized value.
    pub fn clamp_in_latent(&self, node: usize, x_value: f64) -> Result<f64> {
        if node >= self.nodes() {
            return Err(Error::IndexOutOfRange {
                index: node,
                size: self.nodes(),
            });
        }
        let x = Tensor::scalar(self.standardization.to_standard(node, x_value));
        Ok(self.encoders[node].eval(&x)?.at(0, 0))
    }

    /// Ancestral sampling under `interventions` (values in data units).
    ///
    /// Parentless nodes start from their latent marginal, clamped nodes at
    /// their latent clamp, everything else from N(0, 1). The block is cycled
    /// `depth` times (default: the longest path of the mask) with one ξ draw
    /// per row shared by all cycles; clamped nodes are treated as parentless.
    /// Returns the latent sample and its decoding in data units.
    pub fn intervene_sample(
        &self,
        interventions: &[Intervention],
        n: usize,
        depth: Option<usize>,
        seed: u64,
    ) -> Result<(Tensor, Tensor)> {
        let v = self.nodes();
        for (k, iv) in interventions.iter().enumerate() {
            if iv.node >= v {
                return Err(Error::IndexOutOfRange {
                    index: iv.node,
                    size: v,
                });
            }
            if interventions[..k].iter().any(|o| o.node == iv.node) {
                return Err(Error::DuplicateIntervention(iv.node));
            }
        }
        let depth = depth.unwrap_or_else(|| self.mask.depth());
        if depth < 1 && self.mask.edge_count() > 0 {
            return Err(Error::InvalidParameter("cycling depth must be >= 1".into()));
        }
        let clamps = interventions
            .iter()
            .map(|iv| Ok((iv.node, self.clamp_in_latent(iv.node, iv.value)?)))
            .collect::<Result<Vec<_>>>()?;
        let frozen: Vec<usize> = clamps.iter().map(|c| c.0).collect();

        let mut r = rng::rng(rng::derive_seed(seed, "latent-init"));
        let mut z = Tensor::from_fn(n, v, |_, j| {
            let e = rng::standard_normal(&mut r);
            if self.mask.is_root(j) {
                let m = self.latent_moments[j];
                m.mean + math::sqrt(m.var) * e
            } else {
                e
            }
        });
        let mut r = rng::rng(rng::derive_seed(seed, "block-noise"));
        let xi = Tensor::from_fn(n, v, |_, _| rng::standard_normal(&mut r));
        let clamp = |z: &mut Tensor| {
            for &(node, value) in &clamps {
                for i in 0..n {
                    z.set(i, node, value);
                }
            }
        };
        clamp(&mut z);
        for _ in 0..depth {
            z = self.block_pass(&z, Some(&xi), &frozen)?;
            clamp(&mut z);
        }
        let x = self.standardization.invert(&self.decode(&z)?);
        Ok((z, x))
    }

    /// Taped loss on a standardized batch; returns the total and its parts.
    fn loss_tape(
        &self,
        tape: &mut Tape,
        vars: &ModelVars,
        x: &Tensor,
        noise: &LossNoise,
    ) -> Result<(Var, [Var; 3])> {
        let (n, v) = x.dims();
        if n < 2 {
            return Err(Error::TooFewSamples { needed: 2, got: n });
        }
        self.check_width(x, "loss batch")?;
        for t in [
            &noise.encoder,
            &noise.block,
            &noise.block_twin,
            &noise.prior,
        ] {
            if t.dims() != (n, v) {
                return Err(dim_err("loss noise", (n, v), t.dims()));
            }
        }
        let cfg = &self.config;

        let mut z_cols = Vec::with_capacity(v);
        let mut recon_terms = Vec::with_capacity(v);
        for mu in 0..v {
            let xcol = tape.constant(Tensor::column(x.col(mu)));
            let enc = self.encoders[mu].forward(tape, &vars.encoders[mu], xcol)?;
            let mean = tape.column(enc, 0)?;
            let logvar = tape.column(enc, 1)?;
            let half = tape.scale(logvar, 0.5)?;
            let std = tape.exp(half)?;
            let eta = tape.constant(Tensor::column(noise.encoder.col(mu)));
            let jitter = tape.mul(std, eta)?;
            let z = tape.add(mean, jitter)?;
            let xhat = self.decoders[mu].forward(tape, &vars.decoders[mu], z)?;
            let diff = tape.sub(xcol, xhat)?;
            let sq = tape.square(diff)?;
            recon_terms.push(tape.sum(sq)?);
            z_cols.push(z);
        }
        let mut recon = recon_terms[0];
        for &t in &recon_terms[1..] {
            recon = tape.add(recon, t)?;
        }
        let recon = tape.scale(recon, 1.0 / n as f64)?;

        let z_value = {
            let z = tape.concat_cols(&z_cols)?;
            tape.value(z)?.clone()
        };
        // Each coordinate is matched to its own N(0, 1): the latents of a
        // causal model are dependent, so a joint N(0, I) target would warp
        // the encoders.
        let mut mmd_total: Option<Var> = None;
        for (mu, &z_mu) in z_cols.iter().enumerate() {
            let zc = Tensor::column(z_value.col(mu));
            let pc = Tensor::column(noise.prior.col(mu));
            let spec = cfg.prior_kernel.resolve(&[&zc, &pc])?;
            let prior = tape.constant(pc);
            let term = mmd::mmd2_tape(tape, z_mu, prior, &spec)?;
            mmd_total = Some(match mmd_total {
                Some(acc) => tape.add(acc, term)?,
                None => term,
            });
        }
        let mmd = mmd_total.ok_or_else(|| Error::Contract("model has no nodes".into()))?;

        let mut cmmd_total: Option<Var> = None;
        let mut weights_by_parents: Vec<(&[usize], Tensor)> = Vec::new();
        for (mu, &z_mu) in z_cols.iter().enumerate() {
            let parents = self.mask.parents(mu);
            if parents.is_empty() {
                continue;
            }
            let cond = z_value.select_cols(parents);
            let input = tape.constant(self.parental_input(&z_value, mu)?);
            let pred = self.block[mu].forward(tape, &vars.block[mu], input)?;
            let lv = tape.column(vars.block_logvar, mu)?;
            let half = tape.scale(lv, 0.5)?;
            let std = tape.exp(half)?;
            let xi = tape.constant(Tensor::column(noise.block.col(mu)));
            let jitter = tape.mul_scalar(xi, std)?;
            let t_gen = tape.add(pred, jitter)?;
            let xi_twin = tape.constant(Tensor::column(noise.block_twin.col(mu)));
            let jitter_twin = tape.mul_scalar(xi_twin, std)?;
            let t_twin = tape.add(pred, jitter_twin)?;
            let t_real = if cfg.cmmd_trains_encoder {
                z_mu
            } else {
                tape.detach(z_mu)?
            };
            let params = cfg.cmmd.resolve(&cond, tape.value(t_real)?)?;
            let cached = weights_by_parents.iter().position(|(p, _)| *p == parents);
            let slot = match cached {
                Some(slot) => slot,
                None => {
                    weights_by_parents.push((parents, mmd::conditioning_weights(&cond, &params)?));
                    weights_by_parents.len() - 1
                }
            };
            let a = &weights_by_parents[slot].1;
            let term =
                mmd::cmmd2_twin_weighted_tape(tape, a, t_real, t_gen, t_twin, &params.target)?;
            cmmd_total = Some(match cmmd_total {
                Some(acc) => tape.add(acc, term)?,
                None => term,
            });
        }
        let cmmd = match cmmd_total {
            Some(c) => c,
            None => tape.constant(Tensor::scalar(0.0)),
        };

        let wm = tape.scale(mmd, cfg.beta)?;
        let wc = tape.scale(cmmd, cfg.gamma)?;
        let total = tape.add(recon, wm)?;
        let total = tape.add(total, wc)?;
        Ok((total, [recon, mmd, cmmd]))
    }

    /// Loss on a standardized batch with the given noise draws.
    pub fn cae_loss(&self, x: &Tensor, noise: &LossNoise) -> Result<LossParts> {
        let mut tape = Tape::new();
        let vars = self.register(&mut tape);
        let (total, [recon, mmd, cmmd]) = self.loss_tape(&mut tape, &vars, x, noise)?;
        Ok(LossParts {
            total: tape.value(total)?.item(),
            recon: tape.value(recon)?.item(),
            mmd: tape.value(mmd)?.item(),
            cmmd: tape.value(cmmd)?.item(),
        })
    }

    /// Records the loss on `tape` with every parameter as a leaf, in
    /// [`CausalModel::params`] order. Used for gradient checks.
    pub fn cae_loss_tape(
        &self,
        tape: &mut Tape,
        params: &[Var],
        x: &Tensor,
        noise: &LossNoise,
    ) -> Result<Var> {
        let vars = self.vars_from(params)?;
        Ok(self.loss_tape(tape, &vars, x, noise)?.0)
    }

    fn vars_from(&self, params: &[Var]) -> Result<ModelVars> {
        let expected = self.params().len();
        if params.len() != expected {
            return Err(dim_err("parameter count", expected, params.len()));
        }
        let mut it = params.iter().copied();
        let mut take = |nets: &[Mlp]| -> Vec<Vec<Var>> {
            nets.iter()
                .map(|net| {
                    (0..2 * net.layers.len())
                        .filter_map(|_| it.next())
                        .collect()
                })
                .collect()
        };
        let encoders = take(&self.encoders);
        let decoders = take(&self.decoders);
        let block = take(&self.block);
        let block_logvar = it
            .next()
            .ok_or_else(|| Error::Contract("missing block_logvar".into()))?;
        Ok(ModelVars {
            encoders,
            decoders,
            block,
            block_logvar,
        })
    }

    fn fit_latent_moments(&mut self, x: &Tensor, seed: u64) -> Result<()> {
        let (n, v) = x.dims();
        let mut r = rng::rng(seed);
        let eta = Tensor::from_fn(n, v, |_, _| rng::standard_normal(&mut r));
        let (z, _, _) = self.encode(x, Some(&eta))?;
        for mu in 0..v {
            let col = z.col(mu);
            let mean = col.iter().sum::<f64>() / n as f64;
            let var =
                col.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / (n.max(2) - 1) as f64;
            self.latent_moments[mu] = LatentMoments { mean, var };
        }
        Ok(())
    }
}

/// Result of [`train`].
#[derive(Debug, Clone, PartialEq)]
pub struct Trained {
    pub model: CausalModel,
    pub history: Vec<EpochLoss>,
}

/// Minibatch Adam on the full loss; encoder, decoder and block train jointly.
pub fn train(dataset: &Dataset, mask: &CausalMask, config: &CaeTrainConfig) -> Result<Trained> {
    config.validate()?;
    let v = mask.size();
    if dataset.nodes() != v {
        return Err(dim_err("dataset columns vs mask", v, dataset.nodes()));
    }
    let n = dataset.rows();
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: n });
    }
    let mut model = CausalModel::new(mask.clone(), &dataset.data, config)?;
    let data = model.standardization.apply(&dataset.data);
    let names = model.param_names();
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    let mut adam = AdamState::new(AdamConfig::with_lr(config.lr), &model.params());

    let batch = config.batch_size.min(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut shuffle = rng::rng(rng::derive_seed(config.seed, "batches"));
    let noise_seed = rng::derive_seed(config.seed, "noise");
    let mut history = Vec::with_capacity(config.epochs);
    let mut step: u64 = 0;
    let total_steps = (config.epochs * (n / batch)).max(1) as f64;
    for epoch in 0..config.epochs {
        {
            use rand::seq::SliceRandom;
            order.shuffle(&mut shuffle);
        }
        let mut sums = [0.0; 4];
        let mut batches = 0usize;
        for rows in order.chunks_exact(batch) {
            let xb = data.select_rows(rows);
            let noise = LossNoise::draw(batch, v, rng::derive_index(noise_seed, step));
            let mut tape = Tape::new();
            let vars = model.register(&mut tape);
            let (total, parts) = model.loss_tape(&mut tape, &vars, &xb, &noise)?;
            let vals = [
                tape.value(total)?.item(),
                tape.value(parts[0])?.item(),
                tape.value(parts[1])?.item(),
                tape.value(parts[2])?.item(),
            ];
            if vals.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    iteration: epoch,
                    detail: format!(
                        "total = {}, recon = {}, mmd = {}, cmmd = {}",
                        vals[0], vals[1], vals[2], vals[3]
                    ),
                });
            }
            let grads = tape.backward(total)?;
            let all: Vec<Var> = vars
                .encoders
                .iter()
                .chain(&vars.decoders)
                .chain(&vars.block)
                .flatten()
                .copied()
                .chain(core::iter::once(vars.block_logvar))
                .collect();
            let mut params = model.params_mut();
            crate::tensorcore::load_grads(&grads, &all, &mut params)?;
            let cosine = 0.5 * (1.0 + math::cos(core::f64::consts::PI * step as f64 / total_steps));
            adam.config.lr = config.lr * (config.lr_floor + (1.0 - config.lr_floor) * cosine);
            adam.step(&mut params, &names)?;
            for (s, x) in sums.iter_mut().zip(vals) {
                *s += x;
            }
            batches += 1;
            step += 1;
        }
        let k = batches.max(1) as f64;
        history.push(EpochLoss {
            epoch,
            loss: LossParts {
                total: sums[0] / k,
                recon: sums[1] / k,
                mmd: sums[2] / k,
                cmmd: sums[3] / k,
            },
        });
    }
    model.fit_latent_moments(&data, rng::derive_seed(config.seed, "moments"))?;
    Ok(Trained { model, history })
}
