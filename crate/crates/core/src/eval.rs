//! Kernel density estimates, grid KL divergence, and the σ-contour protocol
//! comparing model-intervened, truth-intervened, and sliced observational
//! conditionals.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::causalae::CausalModel;
use crate::error::{Error, Result};
use crate::graph::WeightedAdjacency;
use crate::math;
use crate::rng;
use crate::semgen::{self, Intervention, NoiseSpec, SemKind};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Gaussian KDE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdeModel {
    pub samples: Vec<f64>,
    pub bandwidth: f64,
}

/// `1.06 · σ̂ · n^(−1/5)`
pub fn normal_reference_bandwidth(sd: f64, n: usize) -> f64 {
    1.06 * sd * math::powf(n as f64, -0.2)
}

fn sample_sd(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    math::sqrt(x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0))
}

pub fn kde_fit(samples: &[f64]) -> Result<KdeModel> {
    if samples.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: samples.len(),
        });
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidParameter("KDE samples must be finite".into()));
    }
    let sd = sample_sd(samples);
    if !(sd > 0.0) {
        return Err(Error::Degenerate(format!(
            "all {} samples are identical; no bandwidth",
            samples.len()
        )));
    }
    Ok(KdeModel {
        samples: samples.to_vec(),
        bandwidth: normal_reference_bandwidth(sd, samples.len()),
    })
}

/// The KDE applied to model outputs before they enter a KL estimate.
pub fn smooth_predictions(samples: &[f64]) -> Result<KdeModel> {
    kde_fit(samples)
}

impl KdeModel {
    pub fn pdf_at(&self, x: f64) -> f64 {
        let h = self.bandwidth;
        let s: f64 = self
            .samples
            .iter()
            .map(|c| {
                let u = (x - c) / h;
                math::exp(-0.5 * u * u)
            })
            .sum();
        s * INV_SQRT_2PI / (h * self.samples.len() as f64)
    }

    pub fn pdf(&self, grid: &[f64]) -> Vec<f64> {
        grid.iter().map(|&x| self.pdf_at(x)).collect()
    }
}

/// Grid and floor used by [`kl_divergence`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KlGrid {
    pub points: usize,
    /// Padding beyond the pooled sample range, in units of the larger bandwidth.
    pub pad_bandwidths: f64,
    pub floor: f64,
}

impl Default for KlGrid {
    fn default() -> Self {
        Self {
            points: 512,
            pad_bandwidths: 3.0,
            floor: 1e-12,
        }
    }
}

/// `KL(p ‖ q)` between the KDEs of two sample sets, by a Riemann sum on a
/// shared grid. Both densities are floored and renormalized on the grid.
pub fn kl_divergence(p_samples: &[f64], q_samples: &[f64], grid: &KlGrid) -> Result<f64> {
    if grid.points < 2 {
        return Err(Error::InvalidParameter(format!(
            "KL grid needs >= 2 points, got {}",
            grid.points
        )));
    }
    let p = kde_fit(p_samples)?;
    let q = kde_fit(q_samples)?;
    let pad = grid.pad_bandwidths * p.bandwidth.max(q.bandwidth);
    let (lo, hi) = p_samples
        .iter()
        .chain(q_samples)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        });
    let (lo, hi) = (lo - pad, hi + pad);
    let dx = (hi - lo) / (grid.points - 1) as f64;
    let xs: Vec<f64> = (0..grid.points).map(|k| lo + k as f64 * dx).collect();
    let normalized = |m: &KdeModel| {
        let d: Vec<f64> = m.pdf(&xs).into_iter().map(|v| v.max(grid.floor)).collect();
        let mass = d.iter().sum::<f64>() * dx;
        d.into_iter().map(|v| v / mass).collect::<Vec<_>>()
    };
    let pd = normalized(&p);
    let qd = normalized(&q);
    Ok(pd
        .iter()
        .zip(&qd)
        .map(|(a, b)| a * math::ln(a / b))
        .sum::<f64>()
        * dx)
}

/// Anything that can draw a target column under a single intervention.
pub trait InterventionalSampler {
    fn sample_intervened(
        &self,
        intervention: Intervention,
        target: usize,
        n: usize,
        seed: u64,
    ) -> Result<Vec<f64>>;
}

impl InterventionalSampler for CausalModel {
    fn sample_intervened(
        &self,
        intervention: Intervention,
        target: usize,
        n: usize,
        seed: u64,
    ) -> Result<Vec<f64>> {
        if target >= self.nodes() {
            return Err(Error::IndexOutOfRange {
                index: target,
                size: self.nodes(),
            });
        }
        let (_, x) = self.intervene_sample(&[intervention], n, None, seed)?;
        Ok(x.col(target))
    }
}

/// The generating SEM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemTruth {
    pub w: WeightedAdjacency,
    pub kind: SemKind,
    pub noise: NoiseSpec,
}

impl InterventionalSampler for SemTruth {
    fn sample_intervened(
        &self,
        intervention: Intervention,
        target: usize,
        n: usize,
        seed: u64,
    ) -> Result<Vec<f64>> {
        semgen::ground_truth_conditional(
            &self.w,
            self.kind,
            &self.noise,
            intervention,
            target,
            n,
            seed,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContourConfig {
    pub sigmas: Vec<f64>,
    /// Rows per sample set (observational, truth-intervened, model).
    pub samples: usize,
    /// Baseline slice half-width in units of the intervened node's σ.
    pub slice_half_width: f64,
    /// Baseline slices with fewer rows are flagged as starved.
    pub min_slice: usize,
    pub grid: KlGrid,
}

impl Default for ContourConfig {
    fn default() -> Self {
        Self {
            sigmas: (0..10).map(|k| 0.5 * k as f64).collect(),
            samples: 8000,
            slice_half_width: 0.1,
            min_slice: 50,
            grid: KlGrid::default(),
        }
    }
}

impl ContourConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sigmas.is_empty() {
            return Err(Error::InvalidParameter("sigma list is empty".into()));
        }
        if self.sigmas.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidParameter(
                "sigma multiples must be finite".into(),
            ));
        }
        if self.samples < 2 || self.min_slice < 2 {
            return Err(Error::InvalidParameter(
                "samples and min_slice must be >= 2".into(),
            ));
        }
        if !(self.slice_half_width > 0.0) {
            return Err(Error::InvalidParameter(
                "slice_half_width must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContourRow {
    pub sigma: f64,
    pub clamp: f64,
    pub kl_model: f64,
    /// `None` when the baseline slice is starved.
    pub kl_baseline: Option<f64>,
    pub model_count: usize,
    pub truth_count: usize,
    pub baseline_count: usize,
    pub baseline_starved: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaContourReport {
    pub intervention: usize,
    pub target: usize,
    /// Observational mean and standard deviation of the intervened node.
    pub anchor_mean: f64,
    pub anchor_sd: f64,
    pub rows: Vec<ContourRow>,
}

/// For each `s` in the σ list, clamps `x_j = μ_j + s·σ_j` and reports
/// `KL(model ‖ truth)` and `KL(baseline ‖ truth)` on the target, where the
/// baseline is the observational slice `|x_j − clamp| ≤ half_width·σ_j`.
pub fn sigma_contours(
    model: &dyn InterventionalSampler,
    truth: &SemTruth,
    intervention: usize,
    target: usize,
    config: &ContourConfig,
    seed: u64,
) -> Result<SigmaContourReport> {
    config.validate()?;
    let v = truth.w.size();
    for node in [intervention, target] {
        if node >= v {
            return Err(Error::IndexOutOfRange {
                index: node,
                size: v,
            });
        }
    }
    if intervention == target {
        return Err(Error::InvalidParameter(format!(
            "intervention and target must differ, both are {target}"
        )));
    }
    let obs = semgen::ancestral_sample(
        &truth.w,
        truth.kind,
        &truth.noise,
        config.samples,
        rng::derive_seed(seed, "observational"),
        &[],
    )?;
    let anchor = obs.column(intervention);
    let mean = anchor.iter().sum::<f64>() / anchor.len() as f64;
    let sd = sample_sd(&anchor);
    let mut rows = Vec::with_capacity(config.sigmas.len());
    for (k, &s) in config.sigmas.iter().enumerate() {
        let clamp = mean + s * sd;
        let iv = Intervention::new(intervention, clamp);
        let truth_samples = truth.sample_intervened(
            iv,
            target,
            config.samples,
            rng::derive_index(rng::derive_seed(seed, "truth"), k as u64),
        )?;
        let model_samples = model.sample_intervened(
            iv,
            target,
            config.samples,
            rng::derive_index(rng::derive_seed(seed, "model"), k as u64),
        )?;
        let kl_model = kl_divergence(
            &smooth_predictions(&model_samples)?.samples,
            &truth_samples,
            &config.grid,
        )?;
        let slice =
            semgen::conditional_slice(&obs, intervention, clamp, config.slice_half_width * sd)?;
        let starved = slice.count() < config.min_slice;
        let kl_baseline = if starved {
            None
        } else {
            Some(kl_divergence(
                &slice.project(&obs, target),
                &truth_samples,
                &config.grid,
            )?)
        };
        rows.push(ContourRow {
            sigma: s,
            clamp,
            kl_model,
            kl_baseline,
            model_count: model_samples.len(),
            truth_count: truth_samples.len(),
            baseline_count: slice.count(),
            baseline_starved: starved,
        });
    }
    Ok(SigmaContourReport {
        intervention,
        target,
        anchor_mean: mean,
        anchor_sd: sd,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn bandwidth_formula() {
        assert!((normal_reference_bandwidth(1.0, 100) - 0.421_993_6).abs() < 1e-5);
        let x = [0.0, 1.0, 3.0, 7.0];
        let scaled: Vec<f64> = x.iter().map(|v| v * 2.5).collect();
        let (a, b) = (kde_fit(&x).unwrap(), kde_fit(&scaled).unwrap());
        assert!((b.bandwidth - 2.5 * a.bandwidth).abs() < 1e-12);
    }

    #[test]
    fn degenerate_and_short_inputs() {
        assert!(matches!(
            kde_fit(&[2.0, 2.0, 2.0]),
            Err(Error::Degenerate(_))
        ));
        assert!(matches!(kde_fit(&[1.0]), Err(Error::TooFewSamples { .. })));
    }

    #[test]
    fn single_point_peak() {
        let k = KdeModel {
            samples: vec![0.0],
            bandwidth: 1.0,
        };
        assert!((k.pdf_at(0.0) - 0.39894).abs() < 1e-5);
    }

    #[test]
    fn symmetric_samples_symmetric_density() {
        let k = kde_fit(&[-2.0, -0.5, 0.5, 2.0]).unwrap();
        for x in [0.3, 1.1, 4.0] {
            assert!((k.pdf_at(x) - k.pdf_at(-x)).abs() < 1e-15);
        }
    }

    #[test]
    fn self_divergence_is_zero() {
        let x: Vec<f64> = (0..50).map(|i| math::sin(i as f64)).collect();
        assert!(kl_divergence(&x, &x, &KlGrid::default()).unwrap().abs() < 1e-6);
    }

    #[test]
    fn empty_sigma_list_rejected() {
        let cfg = ContourConfig {
            sigmas: vec![],
            ..ContourConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
