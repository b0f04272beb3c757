use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use causemm::config::ExperimentConfig;
use causemm::formats::{self, Checkpoint, GraphDoc, ShdDoc};
use causemm::pipeline::{Layout, RunManifest};
use causemm::{run_pipeline, CliError, RunOptions};
use causemm_core::causalae::{CaeTrainConfig, CausalModel};
use causemm_core::graph::{CausalMask, WeightedAdjacency};
use causemm_core::rng;
use causemm_core::semgen::{ancestral_sample, NoiseSpec, SemKind};
use causemm_core::Tensor;
use tempfile::TempDir;

const SHIPPED: &str = concat!(
    env!("CARGO_MANIFEST_DIR"),
    "/../../configs/graph_a2_linear.toml"
);

/// A four-node run small enough to finish in seconds.
const SMALL: &str = r#"
seed = 7
output_dir = "unused"
mask_source = "learned"

[graph]
family = { type = "graph_a", confounders = 1 }

[data]
rows = 600

[structure]
max_outer = 4
inner_steps = 40

[causal_ae]
epochs = 2
batch_size = 128

[evaluation]
pairs = [[2, 0]]
sigmas = [0.0, 1.0]
samples = 600
"#;

fn small_config(dir: &Path, extra: &[&str]) -> ExperimentConfig {
    let mut overrides = vec![format!("output_dir={}", dir.display())];
    overrides.extend(extra.iter().map(|s| s.to_string()));
    ExperimentConfig::parse(SMALL, &overrides).unwrap()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("config.toml");
    fs::write(&path, text).unwrap();
    path
}

fn causemm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_causemm"))
        .args(args)
        .output()
        .unwrap()
}

#[test]
fn shipped_config_round_trips() {
    let config = ExperimentConfig::load(Path::new(SHIPPED), &[]).unwrap();
    let text = config.to_toml().unwrap();
    let again = ExperimentConfig::parse(&text, &[]).unwrap();
    assert_eq!(again, config);
    assert_eq!(again.hash(), config.hash());
}

#[test]
fn overrides_reach_nested_fields() {
    let config = ExperimentConfig::load(
        Path::new(SHIPPED),
        &[
            "causal_ae.epochs=50".into(),
            "evaluation.sigmas=[0, 2.5]".into(),
            "mask_source=truth".into(),
        ],
    )
    .unwrap();
    assert_eq!(config.causal_ae.epochs, 50);
    assert_eq!(config.evaluation.sigmas, vec![0.0, 2.5]);
    assert_eq!(config.mask_source, causemm::MaskSource::Truth);
    for bad in [
        "causal_ae.epochs",
        "causal_ae..epochs=3",
        "graph.family.bogus=1",
        "seed.inner=3",
    ] {
        assert!(
            ExperimentConfig::load(Path::new(SHIPPED), &[bad.into()]).is_err(),
            "{bad}"
        );
    }
}

#[test]
fn hash_tracks_every_field() {
    let dir = TempDir::new().unwrap();
    let base = small_config(dir.path(), &[]);
    let variants = [
        "seed=8",
        "data.rows=601",
        "graph.weight_high=2.5",
        "structure.threshold=0.25",
        "causal_ae.gamma=299",
        "evaluation.sigmas=[0.0, 1.5]",
        "evaluation.pairs=[[1, 0]]",
        "mask_source=truth",
    ];
    let mut hashes = vec![base.hash()];
    for v in variants {
        let h = small_config(dir.path(), &[v]).hash();
        assert!(!hashes.contains(&h), "{v} did not change the hash");
        hashes.push(h);
    }
    assert_eq!(small_config(dir.path(), &[]).hash(), base.hash());
}

#[test]
fn invalid_configs_name_the_field() {
    let dir = TempDir::new().unwrap();
    let cases = [
        ("data.rows=0", "data.rows"),
        ("evaluation.sigmas=[]", "sigma"),
        ("evaluation.pairs=[[2, 9]]", "evaluation.pairs"),
        ("causal_ae.gamma=0.5", "causal_ae"),
        ("structure.seed=4", "structure.seed"),
    ];
    for (o, field) in cases {
        let overrides = vec![
            format!("output_dir={}", dir.path().display()),
            o.to_string(),
        ];
        match ExperimentConfig::parse(SMALL, &overrides) {
            Err(CliError::Config(msg)) => assert!(msg.contains(field), "{o}: {msg}"),
            other => panic!("{o}: expected a config error, got {other:?}"),
        }
    }
    let unknown = format!("{SMALL}\nstray = 1\n");
    assert!(matches!(
        ExperimentConfig::parse(&unknown, &[]),
        Err(CliError::Config(_))
    ));
}

#[test]
fn csv_errors_carry_line_numbers() {
    let dir = TempDir::new().unwrap();
    let cases = [
        ("a,b\n1,2\n3,x\n", "line 3"),
        ("a,b\n1,2\n3\n", "line 3"),
        ("a,b\n1,2\n4,5\n6,inf\n", "line 4"),
    ];
    for (text, want) in cases {
        let path = dir.path().join("bad.csv");
        fs::write(&path, text).unwrap();
        let err = formats::read_dataset_csv(&path).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains(want), "{err}");
    }
    let path = dir.path().join("good.csv");
    fs::write(&path, "a,b\n1,2\n-3.5,4e-3\n").unwrap();
    let (names, data) = formats::read_dataset_csv(&path).unwrap();
    assert_eq!(names, vec!["a", "b"]);
    assert_eq!(data.values(), &[1.0, 2.0, -3.5, 4e-3]);
}

fn trained_looking_model() -> CausalModel {
    let mask = CausalMask::from_edges(3, &[(2, 1), (1, 0)]).unwrap();
    let mut r = rng::rng(4);
    let data = Tensor::from_fn(40, 3, |_, _| rng::standard_normal(&mut r));
    let mut model = CausalModel::new(mask, &data, &CaeTrainConfig::default()).unwrap();
    for p in model.params_mut() {
        p.values_mut()
            .iter_mut()
            .for_each(|x| *x += rng::standard_normal(&mut r) / 3.0);
    }
    model
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = TempDir::new().unwrap();
    let model = trained_looking_model();
    let path = dir.path().join("cp.json");
    Checkpoint::save(&model, &path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded, model);
    let again = dir.path().join("cp2.json");
    Checkpoint::save(&loaded, &again).unwrap();
    assert_eq!(fs::read(&path).unwrap(), fs::read(&again).unwrap());
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("cp.json");
    Checkpoint::save(&trained_looking_model(), &path).unwrap();
    let original: Checkpoint = formats::read_json(&path).unwrap();

    let mut flipped = original.clone();
    let blob = &mut flipped.params[3].data;
    let c = if blob.starts_with('A') { "B" } else { "A" };
    blob.replace_range(0..1, c);
    let mut old = original.clone();
    old.version = 0;
    let mut reshaped = original.clone();
    reshaped.params[0].shape = vec![2, 8];
    let mut truncated = original.clone();
    truncated.params.pop();
    for (label, cp) in [
        ("flipped", flipped),
        ("version", old),
        ("shape", reshaped),
        ("truncated", truncated),
    ] {
        formats::write_json(&path, &cp).unwrap();
        let err = Checkpoint::load(&path).unwrap_err();
        assert_eq!(err.exit_code(), 2, "{label}: {err}");
    }
    fs::write(&path, "{ not json").unwrap();
    assert_eq!(Checkpoint::load(&path).unwrap_err().exit_code(), 2);
}

#[test]
fn generate_writes_the_requested_table() {
    let dir = TempDir::new().unwrap();
    let config = dir.path().join("c.toml");
    fs::write(
        &config,
        format!(
            "seed = 3\noutput_dir = \"{}\"\n[graph]\nfamily = {{ type = \"graph_b\", confounders = 4 }}\n[evaluation]\npairs = [[2, 0]]\n",
            dir.path().join("out").display()
        ),
    )
    .unwrap();
    let out = causemm(&["generate", "-c", config.to_str().unwrap()]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let (names, data) =
        formats::read_dataset_csv(&dir.path().join("out/data/dataset.csv")).unwrap();
    assert_eq!(names.len(), 7);
    assert_eq!(data.dims(), (8000, 7));
}

/// The config hash (which includes `output_dir`) is part of the provenance
/// file, so reproducibility is checked by regenerating in place.
#[test]
fn generation_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let config = small_config(dir.path(), &[]);
    let files = [
        "data/dataset.csv",
        "data/dataset.provenance.json",
        "data/graph.json",
    ];
    let mut runs = Vec::new();
    for _ in 0..2 {
        let _ = fs::remove_dir_all(dir.path().join("data"));
        causemm::pipeline::run_stage(
            &config,
            causemm::Stage::Generate,
            RunOptions::default(),
            |l| causemm::pipeline::run_generate(&config, l),
        )
        .unwrap();
        runs.push(files.map(|f| fs::read(dir.path().join(f)).unwrap()));
    }
    for (k, file) in files.iter().enumerate() {
        assert!(runs[0][k] == runs[1][k], "{file} differs between runs");
    }
}

#[test]
fn exit_codes_follow_the_error_kind() {
    let dir = TempDir::new().unwrap();
    let out_dir = dir.path().join("out");
    let config = write_config(
        dir.path(),
        &SMALL.replace("\"unused\"", &format!("\"{}\"", out_dir.display())),
    );
    let config = config.to_str().unwrap();

    let bad_rows = causemm(&["generate", "-c", config, "--set", "data.rows=0"]);
    assert_eq!(bad_rows.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad_rows.stderr).contains("data.rows"));
    let no_sigmas = causemm(&["evaluate", "-c", config, "--set", "evaluation.sigmas=[]"]);
    assert_eq!(no_sigmas.status.code(), Some(1));

    let missing = dir.path().join("nowhere.csv");
    let out = causemm(&[
        "learn-structure",
        "-c",
        config,
        "--dataset",
        missing.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere.csv"));
    assert_eq!(
        causemm(&["generate", "-c", "/no/such/config.toml"])
            .status
            .code(),
        Some(2)
    );

    assert!(causemm(&["generate", "-c", config]).status.success());
    let blown = causemm(&[
        "train",
        "-c",
        config,
        "--mask",
        "truth",
        "--set",
        "causal_ae.lr=1e300",
    ]);
    assert_eq!(
        blown.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&blown.stderr)
    );
    let manifest: RunManifest = formats::read_json(&out_dir.join("manifest.json")).unwrap();
    let failure = manifest.failure.expect("failure recorded");
    assert_eq!(
        (failure.stage, failure.exit_code),
        (causemm::Stage::Train, 3)
    );
}

#[test]
fn learn_structure_scores_a_chain() {
    let dir = TempDir::new().unwrap();
    let data_dir = dir.path().join("chain");
    let w = WeightedAdjacency::from_edges(2, &[(1, 0, 1.5)]).unwrap();
    let mut ds =
        ancestral_sample(&w, SemKind::Linear, &NoiseSpec::gaussian(1.0), 2000, 4, &[]).unwrap();
    ds.names = vec!["X0".into(), "X1".into()];
    let csv = data_dir.join("dataset.csv");
    formats::write_dataset_csv(&csv, &ds).unwrap();
    formats::write_json(&data_dir.join("graph.json"), &GraphDoc::new(&ds.names, &w)).unwrap();
    let config = write_config(
        dir.path(),
        &format!(
            "seed = 7\noutput_dir = \"{}\"\n[graph]\nfamily = {{ type = \"erdos_renyi\", nodes = 2, edge_prob = 0.5 }}\n[evaluation]\npairs = [[1, 0]]\n",
            dir.path().join("out").display()
        ),
    );
    let out = causemm(&[
        "learn-structure",
        "-c",
        config.to_str().unwrap(),
        "--dataset",
        csv.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let doc: ShdDoc = formats::read_json(&dir.path().join("out/structure/shd.json")).unwrap();
    assert_eq!(doc.shd, 0, "{doc:?}");
    assert_eq!(doc.predicted_edges, vec![(1, 0)]);
}

#[test]
fn pipeline_records_resumes_and_protects() {
    let dir = TempDir::new().unwrap();
    let config = small_config(dir.path(), &[]);
    let first = run_pipeline(&config, RunOptions::default()).unwrap();
    assert!(first.failure.is_none());
    first.verify(dir.path()).unwrap();
    let mut groups: Vec<&str> = first.artifacts().map(|a| a.group.as_str()).collect();
    groups.sort();
    groups.dedup();
    assert_eq!(
        groups,
        vec!["dataset", "model", "reports", "structure", "truth-graph"]
    );
    for a in first.artifacts() {
        assert!(
            a.path.is_relative() && dir.path().join(&a.path).exists(),
            "{:?}",
            a.path
        );
    }
    assert!(dir.path().join("reports/sigma_X2_X0.csv").exists());

    let resumed = run_pipeline(
        &config,
        RunOptions {
            force: false,
            resume: true,
        },
    )
    .unwrap();
    assert_eq!(resumed, first, "resume reran a completed stage");

    fs::write(dir.path().join("model/history.csv"), "tampered").unwrap();
    let partial = run_pipeline(
        &config,
        RunOptions {
            force: false,
            resume: true,
        },
    )
    .unwrap();
    assert_eq!(partial.stages[..2], first.stages[..2]);
    assert_ne!(partial.stages[2].seconds, first.stages[2].seconds);
    assert_eq!(partial.stages[2].artifacts, first.stages[2].artifacts);

    let changed = small_config(dir.path(), &["causal_ae.epochs=3"]);
    let refused = run_pipeline(&changed, RunOptions::default()).unwrap_err();
    assert_eq!(refused.exit_code(), 1);
    let layout = Layout::new(dir.path());
    let train = causemm::pipeline::run_stage(
        &changed,
        causemm::Stage::Train,
        RunOptions::default(),
        |l| causemm::pipeline::run_train(&changed, l, &layout.dataset(), &layout.learned_graph()),
    );
    assert!(
        train.is_err(),
        "stage rerun under another config must need --force"
    );
    let forced = run_pipeline(
        &changed,
        RunOptions {
            force: true,
            resume: false,
        },
    )
    .unwrap();
    assert_eq!(forced.config_hash, changed.hash());
    forced.verify(dir.path()).unwrap();
}
