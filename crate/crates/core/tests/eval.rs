use causemm_core::eval::{kde_fit, kl_divergence, sigma_contours, ContourConfig, KlGrid, SemTruth};
use causemm_core::graph::{gen_graph, GraphFamily, GraphSpec};
use causemm_core::rng::{self, Rng};
use causemm_core::semgen::{NoiseSpec, SemKind};

fn normal(r: &mut Rng, n: usize, mean: f64) -> Vec<f64> {
    (0..n).map(|_| mean + rng::standard_normal(r)).collect()
}

fn graph_a_truth() -> SemTruth {
    SemTruth {
        w: gen_graph(&GraphSpec::new(GraphFamily::GraphA { confounders: 2 }, 1)).unwrap(),
        kind: SemKind::Linear,
        noise: NoiseSpec::gaussian(1.0),
    }
}

#[test]
fn kde_integrates_to_one() {
    let mut r = rng::rng(1);
    let samples = normal(&mut r, 300, 0.7);
    let kde = kde_fit(&samples).unwrap();
    let (lo, hi, points) = (-12.0, 13.0, 5001);
    let dx = (hi - lo) / (points - 1) as f64;
    let d = kde.pdf(&(0..points).map(|k| lo + k as f64 * dx).collect::<Vec<_>>());
    assert!(d.iter().all(|&v| v >= 0.0));
    let integral = dx * (d.iter().sum::<f64>() - 0.5 * (d[0] + d[points - 1]));
    assert!((integral - 1.0).abs() < 1e-3, "integral {integral}");
}

#[test]
fn unit_shift_gives_half_a_nat() {
    let mut r = rng::rng(2);
    let p = normal(&mut r, 50_000, 0.0);
    let q = normal(&mut r, 50_000, 1.0);
    let kl = kl_divergence(&p, &q, &KlGrid::default()).unwrap();
    assert!((kl - 0.5).abs() < 0.05, "KL {kl}");
}

#[test]
fn divergence_is_zero_on_itself_and_never_negative() {
    let mut r = rng::rng(3);
    for _ in 0..20 {
        let p = normal(&mut r, 200, 0.0);
        let q = normal(&mut r, 150, 0.3);
        assert!(kl_divergence(&p, &p, &KlGrid::default()).unwrap().abs() < 1e-6);
        assert!(kl_divergence(&p, &q, &KlGrid::default()).unwrap() >= -1e-6);
    }
}

#[test]
fn divergence_grows_with_shift() {
    let mut r = rng::rng(4);
    let p = normal(&mut r, 5000, 0.0);
    let kls: Vec<f64> = [0.0, 0.5, 1.0, 2.0]
        .iter()
        .map(|&s| {
            let q: Vec<f64> = p.iter().map(|x| x + s).collect();
            kl_divergence(&p, &q, &KlGrid::default()).unwrap()
        })
        .collect();
    assert!(kls.windows(2).all(|w| w[1] > w[0]), "{kls:?}");
}

fn contour_config(sigmas: Vec<f64>) -> ContourConfig {
    ContourConfig {
        sigmas,
        ..ContourConfig::default()
    }
}

#[test]
fn truth_against_itself_is_close_everywhere() {
    let truth = graph_a_truth();
    let report = sigma_contours(
        &truth,
        &truth,
        2,
        0,
        &contour_config(vec![0.0, 1.0, 2.0, 3.0, 4.5]),
        5,
    )
    .unwrap();
    for row in &report.rows {
        assert!(
            row.kl_model < 0.05,
            "σ = {}: KL {}",
            row.sigma,
            row.kl_model
        );
        assert!(row.kl_model >= -1e-6);
    }
    let far = report.rows.last().unwrap();
    assert!(far.baseline_starved && far.kl_baseline.is_none(), "{far:?}");
    assert!(!report.rows[0].baseline_starved);
}

#[test]
fn mirrored_clamps_give_comparable_divergences() {
    let truth = graph_a_truth();
    let report = sigma_contours(
        &truth,
        &truth,
        2,
        0,
        &contour_config(vec![-2.0, -1.0, 1.0, 2.0]),
        6,
    )
    .unwrap();
    for (neg, pos) in [(1, 2), (0, 3)] {
        let (a, b) = (&report.rows[neg], &report.rows[pos]);
        assert!((a.kl_model - b.kl_model).abs() < 0.15, "{a:?} vs {b:?}");
        let (ka, kb) = (a.kl_baseline.unwrap(), b.kl_baseline.unwrap());
        assert!((ka - kb).abs() < 0.15, "baseline {ka} vs {kb}");
    }
}

#[test]
fn contours_are_reproducible() {
    let truth = graph_a_truth();
    let config = ContourConfig {
        samples: 2000,
        ..contour_config(vec![0.0, 1.5])
    };
    let a = sigma_contours(&truth, &truth, 2, 0, &config, 9).unwrap();
    let b = sigma_contours(&truth, &truth, 2, 0, &config, 9).unwrap();
    assert_eq!(a, b);
    let c = sigma_contours(&truth, &truth, 2, 0, &config, 10).unwrap();
    assert_ne!(a, c);
}

#[test]
fn contours_reject_bad_nodes() {
    let truth = graph_a_truth();
    let config = contour_config(vec![0.0]);
    assert!(sigma_contours(&truth, &truth, 2, 2, &config, 1).is_err());
    assert!(sigma_contours(&truth, &truth, 2, 40, &config, 1).is_err());
}
