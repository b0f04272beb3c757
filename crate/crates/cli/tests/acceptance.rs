//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.
//!
//! The whole suite runs twice; the last criterion compares the artifacts of
//! both executions byte for byte.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use causemm::config::ExperimentConfig;
use causemm::{run_pipeline, RunOptions};
use causemm_core::causalae::{train, CaeTrainConfig, CausalModel, LossNoise};
use causemm_core::eval::SigmaContourReport;
use causemm_core::eval::{kl_divergence, normal_reference_bandwidth, KlGrid};
use causemm_core::graph::{acyclicity, gen_graph, shd, CausalMask, GraphFamily, GraphSpec};
use causemm_core::mmd::{cmmd2, kernel_matrix, mmd2, CmmdParams, KernelChoice, KernelSpec};
use causemm_core::rng::{self, Rng};
use causemm_core::semgen::{
    ancestral_sample, linear_closed_form, simulate_with_noise, NoiseSpec, SemKind,
};
use causemm_core::structlearn::{
    aug_lagrangian_tape, learn_structure, threshold_weights, AugLagState, StructConfig,
};
use causemm_core::tensorcore::{grad_check, grad_check_steps, Activation, Mlp, Var};
use causemm_core::Tensor;
use rand::Rng as _;
use serde::Serialize;

struct Outcome {
    pass: bool,
    detail: String,
    /// Serialized results, compared across executions.
    artifact: Vec<u8>,
    elapsed: Duration,
}

fn outcome(pass: bool, detail: String, record: &impl Serialize) -> Outcome {
    Outcome {
        pass,
        detail,
        artifact: serde_json::to_vec(record).expect("record serializes"),
        elapsed: Duration::ZERO,
    }
}

fn normal(r: &mut Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| rng::standard_normal(r))
}

/// Random weighted 6-node matrix, acyclic or not.
fn random_weights(r: &mut Rng, v: usize, acyclic: bool) -> Tensor {
    let mut order: Vec<usize> = (0..v).collect();
    for i in (1..v).rev() {
        order.swap(i, r.random_range(0..=i));
    }
    let rank: Vec<usize> = (0..v)
        .map(|n| order.iter().position(|&x| x == n).unwrap())
        .collect();
    Tensor::from_fn(v, v, |i, j| {
        if i == j || !r.random_bool(0.35) || (acyclic && rank[j] > rank[i]) {
            0.0
        } else {
            r.random_range(0.3..1.5) * if r.random_bool(0.5) { 1.0 } else { -1.0 }
        }
    })
}

fn has_cycle(w: &Tensor) -> bool {
    let v = w.rows();
    let mut alive = vec![true; v];
    while let Some(i) = (0..v).find(|&i| alive[i] && (0..v).all(|j| !alive[j] || w.at(i, j) == 0.0))
    {
        alive[i] = false;
    }
    alive.iter().any(|&a| a)
}

fn c1_closed_form() -> Outcome {
    let mut r = rng::rng(101);
    let mut worst: f64 = 0.0;
    for seed in 0..50u64 {
        let w =
            causemm_core::graph::WeightedAdjacency::new(random_weights(&mut r, 6, true)).unwrap();
        let xi = NoiseSpec::gaussian(1.0).draw(100, 6, seed);
        let a = simulate_with_noise(&w, SemKind::Linear, &xi, &[]).unwrap();
        let b = linear_closed_form(&w, &xi).unwrap();
        worst = worst.max(a.zip_map(&b, |x, y| (x - y).abs()).unwrap().max_abs());
    }
    outcome(
        worst < 1e-10,
        format!("max |ancestral − closed form| = {worst:.2e} over 50 DAGs"),
        &worst,
    )
}

fn c2_acyclicity() -> Outcome {
    let mut r = rng::rng(102);
    let (mut agree, mut cyclic) = (0, 0);
    for _ in 0..200 {
        let acyclic = r.random_bool(0.5);
        let w = random_weights(&mut r, 6, acyclic);
        let (h, _) = acyclicity(&w).unwrap();
        let brute = has_cycle(&w);
        cyclic += usize::from(brute);
        agree += usize::from((h < 1e-9) == !brute);
    }
    let two = Tensor::from_rows(&[&[0.0, 1.0], &[1.0, 0.0]]).unwrap();
    let h2 = acyclicity(&two).unwrap().0;
    let err2 = (h2 - (2.0 * 1f64.cosh() - 2.0)).abs();
    outcome(
        agree == 200 && err2 < 1e-9,
        format!("{agree}/200 agree ({cyclic} cyclic); 2-cycle error {err2:.1e}"),
        &(agree, cyclic, h2),
    )
}

fn fixed(bw: &[f64]) -> KernelChoice {
    KernelChoice::Fixed {
        bandwidths: bw.to_vec(),
    }
}

fn c3_gradients() -> Outcome {
    let mut r = rng::rng(103);
    let mut errs = BTreeMap::new();

    let net = Mlp::new(&[3, 8, 2], Activation::Relu, &mut r).unwrap();
    let (x, y) = (normal(&mut r, 10, 3), normal(&mut r, 10, 2));
    let params: Vec<Tensor> = net.params().into_iter().cloned().collect();
    let e = grad_check(
        |tape, vars| {
            let xv = tape.constant(x.clone());
            let out = net.forward(tape, vars, xv)?;
            let yv = tape.constant(y.clone());
            let d = tape.sub(out, yv)?;
            let sq = tape.square(d)?;
            tape.mean(sq)
        },
        &params,
        1e-6,
    )
    .unwrap();
    errs.insert("mlp_mse", e);

    let w = Tensor::from_fn(5, 5, |i, j| {
        if i == j {
            0.0
        } else {
            r.random_range(-0.8..0.8)
        }
    });
    let state = AugLagState {
        lambda: 0.7,
        c: 3.0,
        ..AugLagState::new(1.0)
    };
    let e = grad_check(
        |tape, vars| {
            let zero = tape.constant(Tensor::scalar(0.0));
            aug_lagrangian_tape(tape, zero, vars[0], &state)
        },
        &[w],
        1e-6,
    )
    .unwrap();
    errs.insert("aug_lagrangian", e);

    let spec = KernelSpec::new(vec![0.5, 1.0, 2.0]).unwrap();
    let (a, b) = (normal(&mut r, 8, 1), normal(&mut r, 8, 1));
    let e = grad_check(
        |tape, v| causemm_core::mmd::mmd2_tape(tape, v[0], v[1], &spec),
        &[a.clone(), b.clone()],
        1e-6,
    )
    .unwrap();
    errs.insert("mmd2", e);

    let c = normal(&mut r, 8, 2);
    let p = CmmdParams {
        lambda_reg: 0.8,
        cond: KernelSpec::new(vec![0.7, 1.4]).unwrap(),
        target: spec.clone(),
    };
    let e = grad_check(
        |tape, v| causemm_core::mmd::cmmd2_tape(tape, &c, v[0], v[1], &p),
        &[a, b],
        1e-6,
    )
    .unwrap();
    errs.insert("cmmd2", e);

    let (enc_err, rest_err) = cae_loss_gradients(&mut r);
    errs.insert("cae_loss_encoders", enc_err);
    errs.insert("cae_loss_decoder_block", rest_err);

    let worst = errs.values().copied().fold(0.0, f64::max);
    let detail = errs
        .iter()
        .map(|(k, v)| format!("{k} {v:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    outcome(worst < 1e-4, detail, &errs)
}

/// Full loss on V=3, batch 8. Encoder parameters are checked with the CMMD
/// weight at zero; everything downstream of the latents is checked under
/// the full loss with the encoders held fixed, because the CMMD conditioning
/// weights are computed from latent values outside the graph. At γ=300 the
/// loss is large next to its smallest gradient entries, so that check scores
/// each entry at its best of several difference steps.
fn cae_loss_gradients(r: &mut Rng) -> (f64, f64) {
    let mask = CausalMask::from_edges(3, &[(2, 1), (1, 0), (2, 0)]).unwrap();
    let x = normal(r, 8, 3);
    let build = |gamma: f64, r: &mut Rng| {
        let mut config = CaeTrainConfig {
            gamma,
            encoder_hidden: 4,
            decoder_hidden: 4,
            block_hidden: 5,
            prior_kernel: fixed(&[0.5, 1.0, 2.0]),
            ..CaeTrainConfig::default()
        };
        config.cmmd.cond_kernel = fixed(&[0.7, 1.4]);
        config.cmmd.target_kernel = fixed(&[0.5, 1.0, 2.0]);
        let mut model = CausalModel::new(mask.clone(), &x, &config).unwrap();
        for p in model.params_mut() {
            p.values_mut()
                .iter_mut()
                .for_each(|v| *v += 0.3 * rng::standard_normal(r));
        }
        model
    };
    let noise = LossNoise::draw(8, 3, 5);
    let model = build(0.0, r);
    let params: Vec<Tensor> = model.params().into_iter().cloned().collect();
    let enc = grad_check(
        |tape, vars| model.cae_loss_tape(tape, vars, &x, &noise),
        &params,
        1e-6,
    )
    .unwrap();

    let model = build(300.0, r);
    let all: Vec<Tensor> = model.params().into_iter().cloned().collect();
    let k: usize = model.encoders.iter().map(|e| e.params().len()).sum();
    let (frozen, free) = all.split_at(k);
    let rest = grad_check_steps(
        |tape, vars| {
            let mut full: Vec<Var> = frozen.iter().map(|t| tape.constant(t.clone())).collect();
            full.extend_from_slice(vars);
            model.cae_loss_tape(tape, &full, &x, &noise)
        },
        free,
        &[1e-4, 1e-5, 1e-6],
    )
    .unwrap();
    (enc, rest)
}

fn recover(family: GraphFamily, rows: usize, seed: u64) -> usize {
    let g = gen_graph(&GraphSpec::new(family, seed)).unwrap();
    let ds = ancestral_sample(
        &g,
        SemKind::Linear,
        &NoiseSpec::gaussian(1.0),
        rows,
        seed + 100,
        &[],
    )
    .unwrap();
    let config = StructConfig {
        seed,
        ..StructConfig::default()
    };
    let result = learn_structure(&ds, &config).unwrap();
    let learned = threshold_weights(&result.w_hat, config.threshold).unwrap();
    shd(&learned.mask, &CausalMask::from_matrix(g.matrix()).unwrap()).unwrap()
}

fn c4_structure() -> Outcome {
    let mut shds = BTreeMap::new();
    for v in [5usize, 8, 10] {
        for seed in 0..2u64 {
            let family = GraphFamily::ErdosRenyi {
                nodes: v,
                edge_prob: 2.0 / (v - 1) as f64,
            };
            shds.insert(format!("V{v}_s{seed}"), recover(family, 3000, seed));
        }
    }
    let worst = shds.values().copied().max().unwrap_or(0);
    let detail = shds
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(" ");
    outcome(worst <= 3, format!("SHD {detail}"), &shds)
}

/// GraphB(n) against Erdős–Rényi graphs with the same node count and the
/// same expected number of edges.
fn c5_confounders() -> Outcome {
    let mut record = BTreeMap::new();
    let mut pass = true;
    let mut parts = Vec::new();
    for n in [2usize, 5] {
        let v = n + 3;
        let edges = 2 + 2 * n;
        let er = GraphFamily::ErdosRenyi {
            nodes: v,
            edge_prob: edges as f64 / (v * (v - 1) / 2) as f64,
        };
        let b: Vec<usize> = (0..4)
            .map(|s| recover(GraphFamily::GraphB { confounders: n }, 3000, s))
            .collect();
        let e: Vec<usize> = (0..4).map(|s| recover(er, 3000, s)).collect();
        let mean = |x: &[usize]| x.iter().sum::<usize>() as f64 / x.len() as f64;
        pass &= mean(&b) >= mean(&e) - 1.0;
        parts.push(format!("V={v}: GraphB {b:?} vs ER {e:?}"));
        record.insert(v, (b, e));
    }
    outcome(pass, parts.join("; "), &record)
}

/// Perturbs every coordinate in turn and counts child outputs that moved
/// although the coordinate is not a parent.
fn mask_violations(model: &CausalModel, z: &Tensor) -> usize {
    let v = model.nodes();
    let base = model.causal_block_forward(z, None).unwrap();
    let mut bad = 0;
    for coord in 0..v {
        let mut moved = z.clone();
        for i in 0..z.rows() {
            moved.set(i, coord, z.at(i, coord) - 2.3);
        }
        let out = model.causal_block_forward(&moved, None).unwrap();
        for mu in (0..v).filter(|&mu| mu != coord && !model.mask.parents(mu).contains(&coord)) {
            bad += usize::from(out.col(mu) != base.col(mu));
        }
    }
    bad
}

fn c6_masking() -> Outcome {
    let mut r = rng::rng(106);
    let mut bad = 0;
    for _ in 0..5 {
        let w = random_weights(&mut r, 8, true);
        let mask = CausalMask::from_matrix(&w).unwrap();
        let mut model =
            CausalModel::new(mask, &normal(&mut r, 20, 8), &CaeTrainConfig::default()).unwrap();
        for p in model.params_mut() {
            p.values_mut()
                .iter_mut()
                .for_each(|v| *v += 0.3 * rng::standard_normal(&mut r));
        }
        bad += mask_violations(&model, &normal(&mut r, 16, 8));
    }
    let g = gen_graph(&GraphSpec::new(GraphFamily::GraphA { confounders: 2 }, 6)).unwrap();
    let ds =
        ancestral_sample(&g, SemKind::Linear, &NoiseSpec::gaussian(1.0), 1000, 6, &[]).unwrap();
    let config = CaeTrainConfig {
        epochs: 3,
        seed: 6,
        ..CaeTrainConfig::default()
    };
    let trained = train(&ds, &CausalMask::from_matrix(g.matrix()).unwrap(), &config).unwrap();
    let trained_bad = mask_violations(&trained.model, &normal(&mut r, 16, 5));
    outcome(
        bad == 0 && trained_bad == 0,
        format!("{bad} violations on 5 untrained V=8 models, {trained_bad} on a trained V=5 model"),
        &(bad, trained_bad),
    )
}

fn c7_mmd() -> Outcome {
    let mut r = rng::rng(107);
    let spec = KernelSpec::new(vec![0.25, 0.5, 1.0, 2.0, 4.0]).unwrap();
    let (x, y) = (normal(&mut r, 500, 1), normal(&mut r, 500, 1));
    let pooled = Tensor::column(x.values().iter().chain(y.values()).copied().collect());
    let k = kernel_matrix(&pooled, &pooled, &spec).unwrap();
    let mut labels: Vec<bool> = (0..1000).map(|i| i < 500).collect();
    let observed = split_mmd(&k, &labels);
    let library = mmd2(&x, &y, &spec, true).unwrap();
    let mut exceed = 0;
    for _ in 0..200 {
        for i in (1..1000).rev() {
            labels.swap(i, r.random_range(0..=i));
        }
        exceed += usize::from(split_mmd(&k, &labels) >= observed);
    }
    let p = (exceed + 1) as f64 / 201.0;

    let params = CmmdParams {
        lambda_reg: 1.0,
        cond: KernelSpec::new(vec![1.0]).unwrap(),
        target: KernelSpec::new(vec![1.0]).unwrap(),
    };
    let c = normal(&mut r, 30, 2);
    let t = normal(&mut r, 30, 1);
    let self_cmmd = cmmd2(&c, &t, &t, &params).unwrap();

    let one = KernelSpec::new(vec![1.0]).unwrap();
    let m1 = mmd2(&Tensor::scalar(0.0), &Tensor::scalar(1.0), &one, false).unwrap();
    let c1 = cmmd2(
        &Tensor::scalar(0.0),
        &Tensor::scalar(0.0),
        &Tensor::scalar(1.0),
        &params,
    )
    .unwrap();
    let e1 = (m1 - (2.0 - 2.0 * (-0.5f64).exp())).abs();
    let e2 = (c1 - 0.25 * (2.0 - 2.0 * (-0.5f64).exp())).abs();
    let pass = p > 0.05
        && (library - observed).abs() < 1e-12
        && self_cmmd == 0.0
        && (m1 - 0.78694).abs() < 1e-5
        && (c1 - 0.19673).abs() < 1e-5;
    outcome(
        pass,
        format!(
            "permutation p = {p:.3}; cmmd2(T, T) = {self_cmmd}; 1-point mmd2 {m1:.5} (closed form err {e1:.0e}), cmmd2 {c1:.5} (err {e2:.0e})"
        ),
        &(observed, p, self_cmmd, m1, c1),
    )
}

fn split_mmd(k: &Tensor, in_x: &[bool]) -> f64 {
    let n = k.rows();
    let (mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            match (in_x[i], in_x[j]) {
                (true, true) if i != j => xx += k.at(i, j),
                (false, false) if i != j => yy += k.at(i, j),
                (true, false) => xy += k.at(i, j),
                _ => {}
            }
        }
    }
    let nx = in_x.iter().filter(|&&b| b).count() as f64;
    let ny = n as f64 - nx;
    xx / (nx * (nx - 1.0)) + yy / (ny * (ny - 1.0)) - 2.0 * xy / (nx * ny)
}

fn c8_kl() -> Outcome {
    let mut r = rng::rng(108);
    let p: Vec<f64> = (0..50_000).map(|_| rng::standard_normal(&mut r)).collect();
    let q: Vec<f64> = (0..50_000)
        .map(|_| 1.0 + rng::standard_normal(&mut r))
        .collect();
    let kl = kl_divergence(&p, &q, &KlGrid::default()).unwrap();
    let h = normal_reference_bandwidth(1.0, 100);
    let oracle = 1.06 * (100f64).powf(-0.2);
    outcome(
        (kl - 0.5).abs() < 0.05 && (h - oracle).abs() < 1e-5,
        format!("KL(N(0,1) ‖ N(1,1)) = {kl:.4}; bandwidth {h:.7} (formula oracle {oracle:.7})"),
        &(kl, h),
    )
}

/// Trains with the true mask through the pipeline and returns the
/// `P(X0 | do X2)` report of each seed.
fn end_to_end(root: &Path) -> Vec<(u64, SigmaContourReport)> {
    let mut reports = Vec::new();
    for seed in [1u64, 2] {
        let dir = root.join(format!("seed_{seed}"));
        let text = format!(
            r#"
seed = {seed}
output_dir = "{}"
mask_source = "truth"

[graph]
family = {{ type = "graph_a", confounders = 2 }}

[data]
rows = 8000

[evaluation]
pairs = [[2, 0]]
sigmas = [0.0, 1.0, 2.0, 3.0, 4.5]
samples = 8000
"#,
            dir.display()
        );
        let config = ExperimentConfig::parse(&text, &[]).unwrap();
        assert_eq!(
            (
                config.causal_ae.encoder_hidden,
                config.causal_ae.block_hidden
            ),
            (16, 64)
        );
        assert_eq!(
            (config.causal_ae.beta, config.causal_ae.gamma),
            (1.0, 300.0)
        );
        run_pipeline(&config, RunOptions::default()).unwrap();
        let report: SigmaContourReport =
            causemm::formats::read_json(&dir.join("reports/sigma_X2_X0.json")).unwrap();
        reports.push((seed, report));
    }
    reports
}

fn c9_fidelity(reports: &[(u64, SigmaContourReport)], elapsed: Duration) -> Outcome {
    let mut pass = elapsed < Duration::from_secs(20 * 60);
    let mut parts = Vec::new();
    for (seed, report) in reports {
        let mut row_text = Vec::new();
        for row in report.rows.iter().filter(|r| r.sigma <= 3.0) {
            match row.kl_baseline {
                Some(b) => {
                    pass &= row.kl_model < b;
                    row_text.push(format!("σ{}: {:.3} vs {:.3}", row.sigma, row.kl_model, b));
                }
                None => row_text.push(format!(
                    "σ{}: {:.3} vs starved ({} rows)",
                    row.sigma, row.kl_model, row.baseline_count
                )),
            }
        }
        parts.push(format!("seed {seed} [{}]", row_text.join(", ")));
    }
    outcome(
        pass,
        format!("KL(model) vs KL(baseline): {}", parts.join("; ")),
        &reports.len(),
    )
}

fn c10_extrapolation(reports: &[(u64, SigmaContourReport)]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (seed, report) in reports {
        let row = report
            .rows
            .iter()
            .find(|r| r.sigma == 4.5)
            .expect("σ = 4.5 row");
        pass &= row.kl_model < 1.0 && row.baseline_starved;
        parts.push(format!(
            "seed {seed}: KL(model) {:.3}, baseline {} ({} rows)",
            row.kl_model,
            if row.baseline_starved {
                "starved"
            } else {
                "available"
            },
            row.baseline_count
        ));
    }
    outcome(pass, parts.join("; "), &reports.len())
}

fn timed(limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> Outcome {
    let started = Instant::now();
    let mut out = f();
    out.elapsed = started.elapsed();
    if let Some(limit) = limit {
        if out.elapsed > limit {
            out.pass = false;
            out.detail
                .push_str(&format!(" (over the {}s limit)", limit.as_secs()));
        }
    }
    out
}

/// All files under `dir`, relative path to bytes. Manifest timings are
/// zeroed so only content is compared.
fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
                continue;
            }
            let mut bytes = fs::read(&path).unwrap();
            if path
                .file_name()
                .is_some_and(|n| n == causemm::pipeline::MANIFEST_FILE)
            {
                let mut m: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
                for stage in m["stages"].as_array_mut().unwrap() {
                    stage["seconds"] = serde_json::Value::from(0.0);
                }
                bytes = serde_json::to_vec(&m).unwrap();
            }
            out.insert(path.strip_prefix(dir).unwrap().to_path_buf(), bytes);
        }
    }
    out
}

fn execute(run_dir: &Path) -> Vec<Outcome> {
    let secs = |s| Some(Duration::from_secs(s));
    let mut out = vec![
        timed(secs(1), c1_closed_form),
        timed(secs(5), c2_acyclicity),
        timed(secs(30), c3_gradients),
        timed(secs(600), c4_structure),
        timed(secs(900), c5_confounders),
        timed(secs(10), c6_masking),
        timed(secs(30), c7_mmd),
        timed(secs(10), c8_kl),
    ];
    let started = Instant::now();
    let reports = end_to_end(run_dir);
    let elapsed = started.elapsed();
    let mut c9 = c9_fidelity(&reports, elapsed);
    c9.elapsed = elapsed;
    out.push(c9);
    out.push(c10_extrapolation(&reports));
    out
}

fn main() -> ExitCode {
    let tmp = tempfile::TempDir::new().unwrap();
    let run_dir = tmp.path().join("run");
    let first = execute(&run_dir);
    let first_files = snapshot(&run_dir);
    fs::remove_dir_all(&run_dir).unwrap();
    let second = execute(&run_dir);
    let second_files = snapshot(&run_dir);

    let mut all_pass = true;
    for (k, (a, b)) in first.iter().zip(&second).enumerate() {
        let pass = a.pass && b.pass;
        all_pass &= pass;
        println!(
            "criterion {:>2}: {} [{:.1}s] {}",
            k + 1,
            if pass { "PASS" } else { "FAIL" },
            a.elapsed.as_secs_f64(),
            a.detail
        );
    }
    let differing: Vec<usize> = first
        .iter()
        .zip(&second)
        .enumerate()
        .filter(|(_, (a, b))| a.artifact != b.artifact)
        .map(|(k, _)| k + 1)
        .collect();
    let mismatched_files: Vec<String> = first_files
        .keys()
        .chain(second_files.keys())
        .filter(|p| first_files.get(*p) != second_files.get(*p))
        .map(|p| p.display().to_string())
        .collect();
    let pass = differing.is_empty() && mismatched_files.is_empty() && !first_files.is_empty();
    all_pass &= pass;
    println!(
        "criterion 11: {} {} pipeline files and 10 result records compared; differing criteria {differing:?}, differing files {mismatched_files:?}",
        if pass { "PASS" } else { "FAIL" },
        first_files.len()
    );
    if all_pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
