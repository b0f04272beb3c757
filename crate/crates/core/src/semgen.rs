//! Ground-truth structural equation model simulation.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::graph::{mask_from_weights, CausalMask, GraphSpec, Mutilate, WeightedAdjacency};
use crate::linalg;
use crate::math;
use crate::rng;
use crate::tensorcore::Tensor;

/// Node equations, with `s = Σ_ν W_μν ·` over parents:
///
/// * `Linear`:     `X = −ξ + s(X)`
/// * `NonLinear1`: `X = −ξ + s(cos(X + 1))`
/// * `NonLinear2`: `X = −ξ + 2 sin(s(X + ½)) + s(X + ½)`
/// * `NonLinear3`: `X = −ξ + 2 sin(s(cos(X + 1) + ½)) + s(cos(X + 1) + ½)`
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SemKind {
    Linear,
    NonLinear1,
    NonLinear2,
    NonLinear3,
}

impl SemKind {
    pub const ALL: [SemKind; 4] = [
        Self::Linear,
        Self::NonLinear1,
        Self::NonLinear2,
        Self::NonLinear3,
    ];

    fn node_value(self, noise: f64, weights: &[f64], parents: &[usize], x: &[f64]) -> f64 {
        let weighted =
            |g: &dyn Fn(f64) -> f64| -> f64 { parents.iter().map(|&p| weights[p] * g(x[p])).sum() };
        match self {
            Self::Linear => -noise + weighted(&|v| v),
            Self::NonLinear1 => -noise + weighted(&|v| math::cos(v + 1.0)),
            Self::NonLinear2 => {
                let s = weighted(&|v| v + 0.5);
                -noise + 2.0 * math::sin(s) + s
            }
            Self::NonLinear3 => {
                let s = weighted(&|v| math::cos(v + 1.0) + 0.5);
                -noise + 2.0 * math::sin(s) + s
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseDistribution {
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub distribution: NoiseDistribution,
    pub scale: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self::gaussian(1.0)
    }
}

impl NoiseSpec {
    pub fn gaussian(scale: f64) -> Self {
        Self {
            distribution: NoiseDistribution::Gaussian,
            scale,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scale > 0.0 && self.scale.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "noise scale must be positive, got {}",
                self.scale
            )))
        }
    }

    /// `n×v` noise matrix, drawn row-major.
    pub fn draw(&self, n: usize, v: usize, seed: u64) -> Tensor {
        let mut r = rng::rng(seed);
        match self.distribution {
            NoiseDistribution::Gaussian => {
                Tensor::from_fn(n, v, |_, _| self.scale * rng::standard_normal(&mut r))
            }
        }
    }
}

/// Clamp of one node (do-operator).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intervention {
    pub node: usize,
    pub value: f64,
}

impl Intervention {
    pub fn new(node: usize, value: f64) -> Self {
        Self { node, value }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub family: Option<GraphSpec>,
    pub kind: SemKind,
    pub noise: NoiseSpec,
    pub seed: u64,
    pub interventions: Vec<Intervention>,
}

/// `n×V` observations with names and provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub data: Tensor,
    pub names: Vec<String>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn new(data: Tensor, names: Vec<String>, provenance: Provenance) -> Result<Self> {
        if names.len() != data.cols() {
            return Err(dim_err("Dataset names", data.cols(), names.len()));
        }
        if !data.is_finite() {
            return Err(Error::InvalidParameter(
                "dataset has non-finite entries".into(),
            ));
        }
        Ok(Self {
            data,
            names,
            provenance,
        })
    }

    pub fn rows(&self) -> usize {
        self.data.rows()
    }

    pub fn nodes(&self) -> usize {
        self.data.cols()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.data.col(j)
    }
}

/// Per-column affine standardization, kept so it can be undone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl Standardization {
    /// Column means and sample standard deviations (a zero deviation maps to 1).
    pub fn fit(data: &Tensor) -> Self {
        let (n, v) = data.dims();
        let mut means = alloc::vec![0.0; v];
        let mut stds = alloc::vec![0.0; v];
        for j in 0..v {
            let col = data.col(j);
            let m = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n.max(2) - 1) as f64;
            means[j] = m;
            stds[j] = if var > 0.0 { math::sqrt(var) } else { 1.0 };
        }
        Self { means, stds }
    }

    /// Column means with one shared scale, the root mean column variance.
    /// Relative column variances survive.
    pub fn fit_pooled(data: &Tensor) -> Self {
        let mut s = Self::fit(data);
        let v = s.stds.len().max(1);
        let pooled = math::sqrt(s.stds.iter().map(|x| x * x).sum::<f64>() / v as f64);
        s.stds.iter_mut().for_each(|x| *x = pooled);
        s
    }

    pub fn identity(v: usize) -> Self {
        Self {
            means: alloc::vec![0.0; v],
            stds: alloc::vec![1.0; v],
        }
    }

    pub fn apply(&self, data: &Tensor) -> Tensor {
        let v = data.cols();
        Tensor::from_fn(data.rows(), v, |i, j| {
            (data.at(i, j) - self.means[j]) / self.stds[j]
        })
    }

    pub fn invert(&self, data: &Tensor) -> Tensor {
        let v = data.cols();
        Tensor::from_fn(data.rows(), v, |i, j| {
            data.at(i, j) * self.stds[j] + self.means[j]
        })
    }

    pub fn to_standard(&self, node: usize, x: f64) -> f64 {
        (x - self.means[node]) / self.stds[node]
    }

    pub fn from_standard(&self, node: usize, z: f64) -> f64 {
        z * self.stds[node] + self.means[node]
    }
}

fn check_interventions(v: usize, interventions: &[Intervention]) -> Result<()> {
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
    Ok(())
}

/// Mutilated graph and its mask for a set of interventions.
pub fn mutilated(
    w: &WeightedAdjacency,
    interventions: &[Intervention],
) -> Result<(WeightedAdjacency, CausalMask)> {
    check_interventions(w.size(), interventions)?;
    let mut cut = w.clone();
    for iv in interventions {
        cut = cut.mutilate(iv.node)?;
    }
    // Validate the unmutilated graph so cycles through clamped nodes still fail.
    mask_from_weights(w, 1e-12)?;
    let mask = mask_from_weights(&cut, 1e-12)?;
    Ok((cut, mask))
}

/// Evaluates the SEM in topological order on explicit noise `xi` (`n×V`).
/// Clamped nodes ignore their noise.
pub fn simulate_with_noise(
    w: &WeightedAdjacency,
    kind: SemKind,
    xi: &Tensor,
    interventions: &[Intervention],
) -> Result<Tensor> {
    let v = w.size();
    if xi.cols() != v {
        return Err(dim_err("noise columns", v, xi.cols()));
    }
    let (cut, mask) = mutilated(w, interventions)?;
    let n = xi.rows();
    let mut clamp: Vec<Option<f64>> = alloc::vec![None; v];
    for iv in interventions {
        clamp[iv.node] = Some(iv.value);
    }
    let mut out = Tensor::zeros(n, v);
    let mut x = alloc::vec![0.0; v];
    for r in 0..n {
        let noise = xi.row(r);
        for &node in mask.topo() {
            x[node] = match clamp[node] {
                Some(c) => c,
                None => {
                    kind.node_value(noise[node], cut.matrix().row(node), mask.parents(node), &x)
                }
            };
        }
        out.row_mut(r).copy_from_slice(&x);
    }
    Ok(out)
}

/// Draws `n` rows by ancestral sampling. Noise is drawn as a full `n×V`
/// matrix from `seed` whatever the interventions, so non-descendants of a
/// clamped node match the unintervened run exactly.
pub fn ancestral_sample(
    w: &WeightedAdjacency,
    kind: SemKind,
    noise: &NoiseSpec,
    n: usize,
    seed: u64,
    interventions: &[Intervention],
) -> Result<Dataset> {
    noise.validate()?;
    let xi = noise.draw(n, w.size(), seed);
    let data = simulate_with_noise(w, kind, &xi, interventions)?;
    let names = (0..w.size()).map(|i| format!("X{i}")).collect();
    Dataset::new(
        data,
        names,
        Provenance {
            family: None,
            kind,
            noise: *noise,
            seed,
            interventions: interventions.to_vec(),
        },
    )
}

/// `X = (−I + W)⁻¹ ξ` row by row.
pub fn linear_closed_form(w: &WeightedAdjacency, xi: &Tensor) -> Result<Tensor> {
    let v = w.size();
    if xi.cols() != v {
        return Err(dim_err("noise columns", v, xi.cols()));
    }
    let a = w
        .matrix()
        .zip_map(&Tensor::identity(v), |wij, id| wij - id)?;
    let inv = linalg::inverse(&a)?;
    xi.matmul(&inv.transpose())
}

/// Samples of `target` under a single intervention.
pub fn ground_truth_conditional(
    w: &WeightedAdjacency,
    kind: SemKind,
    noise: &NoiseSpec,
    intervention: Intervention,
    target: usize,
    n: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if target >= w.size() {
        return Err(Error::IndexOutOfRange {
            index: target,
            size: w.size(),
        });
    }
    let ds = ancestral_sample(w, kind, noise, n, seed, &[intervention])?;
    Ok(ds.column(target))
}

/// Rows whose conditioning column lies within `half_width` of `value`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Slice {
    pub rows: Vec<usize>,
}

impl Slice {
    pub fn count(&self) -> usize {
        self.rows.len()
    }

    pub fn project(&self, dataset: &Dataset, target: usize) -> Vec<f64> {
        self.rows
            .iter()
            .map(|&r| dataset.data.at(r, target))
            .collect()
    }
}

pub fn conditional_slice(
    dataset: &Dataset,
    cond: usize,
    value: f64,
    half_width: f64,
) -> Result<Slice> {
    if cond >= dataset.nodes() {
        return Err(Error::IndexOutOfRange {
            index: cond,
            size: dataset.nodes(),
        });
    }
    if !(half_width > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "half_width must be positive, got {half_width}"
        )));
    }
    let rows = (0..dataset.rows())
        .filter(|&r| (dataset.data.at(r, cond) - value).abs() <= half_width)
        .collect();
    Ok(Slice { rows })
}
