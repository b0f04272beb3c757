//! Kernel two-sample statistics: RBF-mixture kernels, MMD, and the
//! conditional MMD used by the causal autoencoder.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::linalg;
use crate::math;
use crate::tensorcore::{rbf_kernel, KernelWeights, Tape, Tensor, Var};

/// Bandwidth multipliers applied to the median pairwise distance.
pub const DEFAULT_MULTIPLIERS: [f64; 5] = [0.25, 0.5, 1.0, 2.0, 4.0];

/// Mixture of RBF kernels `Σ_bw exp(−‖x−y‖² / (2 bw²))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub bandwidths: Vec<f64>,
}

impl KernelSpec {
    pub fn new(bandwidths: Vec<f64>) -> Result<Self> {
        if bandwidths.is_empty() || bandwidths.iter().any(|b| !(*b > 0.0) || !b.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "bandwidths must be positive, got {bandwidths:?}"
            )));
        }
        Ok(Self { bandwidths })
    }

    pub fn single(bw: f64) -> Result<Self> {
        Self::new(alloc::vec![bw])
    }

    /// `multipliers × median pairwise distance` over the pooled rows.
    pub fn median_heuristic(samples: &[&Tensor], multipliers: &[f64]) -> Result<Self> {
        let med = median_pairwise_distance(samples);
        Self::new(multipliers.iter().map(|m| m * med).collect())
    }
}

/// How a kernel is chosen for a given batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum KernelChoice {
    Fixed { bandwidths: Vec<f64> },
    Median { multipliers: Vec<f64> },
}

impl Default for KernelChoice {
    fn default() -> Self {
        Self::Median {
            multipliers: DEFAULT_MULTIPLIERS.to_vec(),
        }
    }
}

impl KernelChoice {
    pub fn resolve(&self, samples: &[&Tensor]) -> Result<KernelSpec> {
        match self {
            Self::Fixed { bandwidths } => KernelSpec::new(bandwidths.clone()),
            Self::Median { multipliers } => KernelSpec::median_heuristic(samples, multipliers),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let vals = match self {
            Self::Fixed { bandwidths } => bandwidths,
            Self::Median { multipliers } => multipliers,
        };
        KernelSpec::new(vals.clone()).map(|_| ())
    }
}

/// Up to this many pooled rows enter the median computation.
const MEDIAN_MAX_ROWS: usize = 1000;

/// Median Euclidean distance over distinct row pairs; 1 when degenerate.
pub fn median_pairwise_distance(samples: &[&Tensor]) -> f64 {
    let rows: Vec<&[f64]> = samples
        .iter()
        .flat_map(|t| (0..t.rows()).map(move |i| t.row(i)))
        .collect();
    let stride = rows.len().div_ceil(MEDIAN_MAX_ROWS).max(1);
    let picked: Vec<&[f64]> = rows.into_iter().step_by(stride).collect();
    let mut d = Vec::with_capacity(picked.len() * picked.len().saturating_sub(1) / 2);
    for i in 0..picked.len() {
        for j in i + 1..picked.len() {
            let s: f64 = picked[i]
                .iter()
                .zip(picked[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            d.push(math::sqrt(s));
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    let mid = d.len() / 2;
    let (_, m, _) = d.select_nth_unstable_by(mid, f64::total_cmp);
    if *m > 0.0 && m.is_finite() {
        *m
    } else {
        1.0
    }
}

pub fn kernel_matrix(x: &Tensor, y: &Tensor, spec: &KernelSpec) -> Result<Tensor> {
    rbf_kernel(x, y, &spec.bandwidths)
}

/// Squared MMD between the row sets of `x` and `y`.
pub fn mmd2(x: &Tensor, y: &Tensor, spec: &KernelSpec, unbiased: bool) -> Result<f64> {
    if x.cols() != y.cols() {
        return Err(dim_err("mmd2", x.cols(), y.cols()));
    }
    let (n, m) = (x.rows(), y.rows());
    if unbiased && (n < 2 || m < 2) {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: n.min(m),
        });
    }
    if n == 0 || m == 0 {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    let kxx = kernel_matrix(x, x, spec)?;
    let kyy = kernel_matrix(y, y, spec)?;
    let kxy = kernel_matrix(x, y, spec)?;
    if unbiased {
        let off = |k: &Tensor, n: usize| {
            (k.sum() - (0..n).map(|i| k.at(i, i)).sum::<f64>()) / (n * (n - 1)) as f64
        };
        Ok(off(&kxx, n) + off(&kyy, m) - 2.0 * kxy.mean())
    } else {
        Ok(kxx.mean() + kyy.mean() - 2.0 * kxy.mean())
    }
}

/// Biased squared MMD recorded on a tape.
pub fn mmd2_tape(tape: &mut Tape, x: Var, y: Var, spec: &KernelSpec) -> Result<Var> {
    let (n, m) = (tape.value(x)?.rows(), tape.value(y)?.rows());
    let bw = &spec.bandwidths;
    let uniform = |r: usize, c: usize| KernelWeights::Uniform(1.0 / (r * c) as f64);
    let a = tape.kernel_dot(x, x, bw, uniform(n, n))?;
    let b = tape.kernel_dot(y, y, bw, uniform(m, m))?;
    let c = tape.kernel_dot(x, y, bw, uniform(n, m))?;
    let ab = tape.add(a, b)?;
    let c2 = tape.scale(c, 2.0)?;
    tape.sub(ab, c2)
}

/// Estimator constants, before resolving kernels for a batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CmmdConfig {
    /// `λ_reg = lambda_scale · n` for a batch of `n` rows.
    pub lambda_scale: f64,
    pub cond_kernel: KernelChoice,
    pub target_kernel: KernelChoice,
}

impl Default for CmmdConfig {
    fn default() -> Self {
        Self {
            lambda_scale: 0.1,
            cond_kernel: KernelChoice::default(),
            target_kernel: KernelChoice::default(),
        }
    }
}

impl CmmdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_scale > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "CMMD lambda_scale must be positive, got {}",
                self.lambda_scale
            )));
        }
        self.cond_kernel.validate()?;
        self.target_kernel.validate()
    }

    pub fn resolve(&self, cond: &Tensor, target: &Tensor) -> Result<CmmdParams> {
        Ok(CmmdParams {
            lambda_reg: self.lambda_scale * cond.rows() as f64,
            cond: self.cond_kernel.resolve(&[cond])?,
            target: self.target_kernel.resolve(&[target])?,
        })
    }
}

/// Resolved CMMD constants for one evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct CmmdParams {
    pub lambda_reg: f64,
    pub cond: KernelSpec,
    pub target: KernelSpec,
}

/// `A = K̃⁻¹ K K̃⁻¹` with `K = k(C, C)`, `K̃ = K + λI`.
///
/// Every CMMD trace `tr(K̃⁻¹ L K̃⁻¹ K)` equals `Σ_ij A_ij L_ij` because `A`
/// is symmetric, so `A` is all the estimator needs from the conditioning set.
pub fn conditioning_weights(c: &Tensor, params: &CmmdParams) -> Result<Tensor> {
    if !(params.lambda_reg > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "lambda_reg must be positive, got {}",
            params.lambda_reg
        )));
    }
    let k = kernel_matrix(c, c, &params.cond)?;
    linalg::regularized_sandwich(&k, params.lambda_reg)
}

fn check_rows(n: usize, t_real: &Tensor, t_gen: &Tensor) -> Result<()> {
    if t_real.rows() != n || t_gen.rows() != n {
        return Err(dim_err("cmmd2 rows", n, (t_real.rows(), t_gen.rows())));
    }
    if t_real.cols() != t_gen.cols() {
        return Err(dim_err("cmmd2 target width", t_real.cols(), t_gen.cols()));
    }
    Ok(())
}

/// Conditional MMD between `T_real | C` and `T_gen | C`, rows paired by
/// conditioning value:
/// `tr(K̃⁻¹L_rK̃⁻¹K) + tr(K̃⁻¹L_gK̃⁻¹K) − 2 tr(K̃⁻¹L_grK̃⁻¹K)`.
pub fn cmmd2(c: &Tensor, t_real: &Tensor, t_gen: &Tensor, params: &CmmdParams) -> Result<f64> {
    check_rows(c.rows(), t_real, t_gen)?;
    let a = conditioning_weights(c, params)?;
    let lr = kernel_matrix(t_real, t_real, &params.target)?;
    let lg = kernel_matrix(t_gen, t_gen, &params.target)?;
    let lgr = kernel_matrix(t_gen, t_real, &params.target)?;
    let dot = |l: &Tensor| -> f64 { a.values().iter().zip(l.values()).map(|(x, y)| x * y).sum() };
    Ok(dot(&lr) + dot(&lg) - 2.0 * dot(&lgr))
}

/// [`cmmd2`] on a tape. The conditioning set is a constant; gradients
/// reach `t_real` and `t_gen` through the target kernels.
pub fn cmmd2_tape(
    tape: &mut Tape,
    c: &Tensor,
    t_real: Var,
    t_gen: Var,
    params: &CmmdParams,
) -> Result<Var> {
    check_rows(c.rows(), tape.value(t_real)?, tape.value(t_gen)?)?;
    let a = conditioning_weights(c, params)?;
    let bw = &params.target.bandwidths;
    let lr = tape.kernel_dot(t_real, t_real, bw, KernelWeights::Matrix(a.clone()))?;
    let lg = tape.kernel_dot(t_gen, t_gen, bw, KernelWeights::Matrix(a.clone()))?;
    let lgr = tape.kernel_dot(t_gen, t_real, bw, KernelWeights::Matrix(a))?;
    let s = tape.add(lr, lg)?;
    let cross = tape.scale(lgr, 2.0)?;
    tape.sub(s, cross)
}

/// Training form of [`cmmd2_tape`] with the within-row generated term
/// `k(g_i, g_i)` replaced by `k(g_i, g'_i)`, where `t_twin` holds a second,
/// independent draw from the same generator.
///
/// With the constant `k(g_i, g_i)` only the cross term `−2 k(g_i, r_i)`
/// depends on row `i` of the generator, and it is largest when every `g_i`
/// sits on the mode of its conditional: the plain estimator rewards
/// under-dispersed generators. The twin draw turns each diagonal into an
/// unbiased MMD between generator and data at `c_i`. The real-real terms
/// carry no gradient into the generator and are kept as is.
pub fn cmmd2_twin_tape(
    tape: &mut Tape,
    c: &Tensor,
    t_real: Var,
    t_gen: Var,
    t_twin: Var,
    params: &CmmdParams,
) -> Result<Var> {
    check_rows(c.rows(), tape.value(t_real)?, tape.value(t_gen)?)?;
    let a = conditioning_weights(c, params)?;
    cmmd2_twin_weighted_tape(tape, &a, t_real, t_gen, t_twin, &params.target)
}

/// [`cmmd2_twin_tape`] with precomputed [`conditioning_weights`] `a`.
pub fn cmmd2_twin_weighted_tape(
    tape: &mut Tape,
    a: &Tensor,
    t_real: Var,
    t_gen: Var,
    t_twin: Var,
    target: &KernelSpec,
) -> Result<Var> {
    let n = a.rows();
    if a.cols() != n {
        return Err(dim_err("cmmd2 weights", (n, n), a.dims()));
    }
    check_rows(n, tape.value(t_real)?, tape.value(t_gen)?)?;
    check_rows(n, tape.value(t_real)?, tape.value(t_twin)?)?;
    let mut off = a.clone();
    let mut diag = Vec::with_capacity(n);
    for i in 0..n {
        diag.push(a.at(i, i));
        off.set(i, i, 0.0);
    }
    let bw = &target.bandwidths;
    let lr = tape.kernel_dot(t_real, t_real, bw, KernelWeights::Matrix(a.clone()))?;
    let lg = tape.kernel_dot(t_gen, t_gen, bw, KernelWeights::Matrix(off))?;
    let lgg = tape.kernel_dot(t_gen, t_twin, bw, KernelWeights::Diagonal(diag))?;
    let lgr = tape.kernel_dot(t_gen, t_real, bw, KernelWeights::Matrix(a.clone()))?;
    let s = tape.add(lr, lg)?;
    let s = tape.add(s, lgg)?;
    let cross = tape.scale(lgr, 2.0)?;
    tape.sub(s, cross)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn kernel_values() {
        let z = Tensor::scalar(0.0);
        let o = Tensor::scalar(1.0);
        let k1 = KernelSpec::single(1.0).unwrap();
        assert_eq!(kernel_matrix(&z, &z, &k1).unwrap().item(), 1.0);
        assert!((kernel_matrix(&z, &o, &k1).unwrap().item() - 0.60653).abs() < 1e-5);
        let k12 = KernelSpec::new(vec![1.0, 2.0]).unwrap();
        let v = kernel_matrix(&z, &o, &k12).unwrap().item();
        assert!((v - (math::exp(-0.5) + math::exp(-0.125))).abs() < 1e-15);
        assert!((v - 1.489028).abs() < 1e-6);
    }

    #[test]
    fn mmd_single_points() {
        let k1 = KernelSpec::single(1.0).unwrap();
        let x = Tensor::scalar(0.0);
        let y = Tensor::scalar(1.0);
        let v = mmd2(&x, &y, &k1, false).unwrap();
        assert!((v - (2.0 - 2.0 * math::exp(-0.5))).abs() < 1e-15);
        assert!(mmd2(&x, &y, &k1, true).is_err());
        let xs = Tensor::column(vec![0.1, 0.7, -0.4]);
        assert_eq!(mmd2(&xs, &xs, &k1, false).unwrap(), 0.0);
    }

    #[test]
    fn cmmd_hand_value() {
        let p = CmmdParams {
            lambda_reg: 1.0,
            cond: KernelSpec::single(1.0).unwrap(),
            target: KernelSpec::single(1.0).unwrap(),
        };
        let v = cmmd2(
            &Tensor::scalar(0.0),
            &Tensor::scalar(0.0),
            &Tensor::scalar(1.0),
            &p,
        )
        .unwrap();
        assert!((v - 0.25 * (2.0 - 2.0 * math::exp(-0.5))).abs() < 1e-15);
        assert!((v - 0.19673).abs() < 1e-5);
    }

    #[test]
    fn cmmd_identical_targets_cancel() {
        let c = Tensor::from_fn(6, 2, |i, j| (i * 3 + j) as f64 * 0.1);
        let t = Tensor::column(vec![0.3, -0.2, 1.1, 0.0, 0.5, -0.9]);
        let cfg = CmmdConfig::default();
        let p = cfg.resolve(&c, &t).unwrap();
        assert_eq!(cmmd2(&c, &t, &t, &p).unwrap(), 0.0);
    }

    #[test]
    fn median_heuristic_scales() {
        let x = Tensor::column(vec![0.0, 1.0, 3.0]);
        // distances 1, 3, 2 → median 2
        assert_eq!(median_pairwise_distance(&[&x]), 2.0);
        let spec = KernelSpec::median_heuristic(&[&x], &[0.5, 1.0]).unwrap();
        assert_eq!(spec.bandwidths, vec![1.0, 2.0]);
        assert_eq!(
            median_pairwise_distance(&[&Tensor::column(vec![2.0, 2.0])]),
            1.0
        );
    }

    #[test]
    fn invalid_kernels() {
        assert!(KernelSpec::new(vec![]).is_err());
        assert!(KernelSpec::new(vec![1.0, -1.0]).is_err());
        let cfg = CmmdConfig {
            lambda_scale: 0.0,
            ..CmmdConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
