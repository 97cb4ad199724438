use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use mla::baselines::TrainedModel;
use mla::cli::read_metrics;
use mla::model::{init_params, load_checkpoint};
use serde_json::{json, Value};

fn config(out: &Path, steps: usize) -> Value {
    json!({
        "version": "mla-config/1",
        "dataset": {"synthetic": {
            "latent_dim": 3,
            "class_count": 3,
            "samples": 240,
            "modalities": [
                {"dim": 4, "mixing_scale": 1.0, "noise_std": 0.1},
                {"dim": 3, "mixing_scale": 0.5, "noise_std": 0.5}
            ],
            "seed": 7
        }},
        "train": {
            "total_steps": steps,
            "lr": 0.01,
            "hidden": [8],
            "feature_dim": 4,
            "batch_size": 32,
            "seed": 1
        },
        "sweep": {"etas": [0.3, 0.0], "seeds": [2, 1]},
        "output_dir": out
    })
}

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Workspace {
    fn new(cfg: impl FnOnce(&Path) -> Value) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        fs::write(root.join("config.json"), cfg(&root.join("out")).to_string()).unwrap();
        Self { _dir: dir, root }
    }

    fn config(&self) -> String {
        self.root.join("config.json").display().to_string()
    }

    fn out(&self, name: &str) -> PathBuf {
        self.root.join("out").join(name)
    }

    fn run(&self, args: &[&str]) -> (i32, String) {
        let output = Command::new(env!("CARGO_BIN_EXE_mla")).args(args).output().unwrap();
        (
            output.status.code().unwrap(),
            String::from_utf8(output.stdout).unwrap(),
        )
    }

    fn ok(&self, args: &[&str]) -> String {
        let (code, stdout) = self.run(args);
        assert_eq!(code, 0, "mla {args:?}");
        stdout
    }
}

fn tree_bytes(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            out.extend(tree_bytes(&path));
        } else {
            out.push((path.clone(), fs::read(&path).unwrap()));
        }
    }
    out.sort();
    out
}

#[test]
fn generate_is_byte_reproducible() {
    let ws = Workspace::new(|o| config(o, 4));
    let (a, b) = (ws.root.join("a"), ws.root.join("b"));
    ws.ok(&["generate", "--config", &ws.config(), "--out", a.to_str().unwrap()]);
    ws.ok(&["generate", "--config", &ws.config(), "--out", b.to_str().unwrap()]);
    let strip = |t: Vec<(PathBuf, Vec<u8>)>, base: &Path| {
        t.into_iter()
            .map(|(p, b)| (p.strip_prefix(base).unwrap().to_path_buf(), b))
            .collect::<Vec<_>>()
    };
    assert_eq!(strip(tree_bytes(&a), &a), strip(tree_bytes(&b), &b));
}

#[test]
fn zero_step_training_saves_the_initial_model() {
    let ws = Workspace::new(|o| config(o, 0));
    ws.ok(&["train", "--config", &ws.config()]);
    assert!(fs::read(ws.out("metrics.jsonl")).unwrap().is_empty());
    let model = TrainedModel::from_checkpoint(load_checkpoint(&ws.out("checkpoint")).unwrap()).unwrap();
    let dims = model.dims().clone();
    let TrainedModel::Mla(params) = model else {
        panic!("expected an MLA checkpoint");
    };
    assert_eq!(params, init_params(&dims, 1).unwrap());
}

#[test]
fn train_and_eval_rerun_identically() {
    let ws = Workspace::new(|o| config(o, 6));
    let ckpt = ws.out("checkpoint");
    let cycle = || {
        ws.ok(&["train", "--config", &ws.config()]);
        let stdout = ws.ok(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--config", &ws.config()]);
        (stdout, tree_bytes(&ws.root.join("out")))
    };
    let first = cycle();
    assert_eq!(first, cycle());
    let report: Value = serde_json::from_str(&first.0).unwrap();
    assert!(report["multi"].as_f64().unwrap() > 1.0 / 3.0);
    let records = read_metrics(&ws.out("metrics.jsonl")).unwrap();
    assert_eq!(records.len(), 6 + 1 + 1);
    let stamps: Vec<u64> = records.iter().map(|r| r.timestamp).collect();
    assert_eq!(stamps, (0..8).collect::<Vec<_>>());
}

#[test]
fn overrides_reach_the_run() {
    let ws = Workspace::new(|o| config(o, 6));
    ws.ok(&["train", "--config", &ws.config(), "--set", "train.total_steps=2"]);
    assert_eq!(read_metrics(&ws.out("metrics.jsonl")).unwrap().len(), 2);
}

#[test]
fn baselines_train_and_evaluate() {
    for model in ["concat", "late"] {
        let ws = Workspace::new(|o| {
            let mut c = config(o, 4);
            c["model"] = json!(model);
            c
        });
        ws.ok(&["train", "--config", &ws.config()]);
        let ckpt = ws.out("checkpoint");
        ws.ok(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--config", &ws.config()]);
    }
}

#[test]
fn corrupted_checkpoint_is_a_usage_failure() {
    let ws = Workspace::new(|o| config(o, 2));
    ws.ok(&["train", "--config", &ws.config()]);
    let params = ws.out("checkpoint").join("params.bin");
    let mut bytes = fs::read(&params).unwrap();
    bytes.truncate(bytes.len() - 3);
    fs::write(&params, bytes).unwrap();
    let ckpt = ws.out("checkpoint");
    let (code, _) = ws.run(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--config", &ws.config()]);
    assert_eq!(code, 2);
}

#[test]
fn bad_configs_exit_with_two() {
    let unknown = Workspace::new(|o| {
        let mut c = config(o, 2);
        c["surprise"] = json!(1);
        c
    });
    assert_eq!(unknown.run(&["train", "--config", &unknown.config()]).0, 2);
    let version = Workspace::new(|o| {
        let mut c = config(o, 2);
        c["version"] = json!("mla-config/0");
        c
    });
    assert_eq!(version.run(&["train", "--config", &version.config()]).0, 2);
    let ws = Workspace::new(|o| config(o, 2));
    assert_eq!(ws.run(&["train", "--config", &ws.config(), "--set", "train.lr=-1"]).0, 2);
    assert_eq!(ws.run(&["train"]).0, 2);
    let missing = ws.root.join("nope.json");
    assert_eq!(ws.run(&["train", "--config", missing.to_str().unwrap()]).0, 3);
}

fn csv_rows(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().map(str::to_string).collect()
}

#[test]
fn export_plot_of_empty_metrics_writes_headers() {
    let ws = Workspace::new(|o| config(o, 2));
    let empty = ws.root.join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let plots = ws.root.join("plots");
    ws.ok(&["export-plot", "--metrics", empty.to_str().unwrap(), "--out", plots.to_str().unwrap()]);
    assert_eq!(csv_rows(&plots.join("accuracy_vs_eta.csv")), ["eta,seed,mla_multi,late_multi"]);
    assert_eq!(csv_rows(&plots.join("loss_vs_step.csv")), ["step,modality,loss,lr"]);
    assert_eq!(csv_rows(&plots.join("gap_distances.csv")), ["modality_a,modality_b,distance"]);
}

#[test]
fn export_plot_rejects_malformed_metrics() {
    let ws = Workspace::new(|o| config(o, 2));
    let bad = ws.root.join("bad.jsonl");
    fs::write(&bad, "{\"not\": \"a record\"}\n").unwrap();
    let plots = ws.root.join("plots");
    let (code, _) = ws.run(&["export-plot", "--metrics", bad.to_str().unwrap(), "--out", plots.to_str().unwrap()]);
    assert_eq!(code, 3);
}

#[test]
fn sweep_ablate_and_export() {
    let ws = Workspace::new(|o| config(o, 4));
    ws.ok(&["sweep", "--config", &ws.config(), "--jobs", "2"]);
    let sweep = read_metrics(&ws.out("sweep.jsonl")).unwrap();
    let cells: Vec<(f64, u64)> = sweep.iter().map(|r| (r.eta.unwrap(), r.seed.unwrap())).collect();
    assert_eq!(cells, [(0.0, 1), (0.0, 2), (0.3, 1), (0.3, 2)]);

    ws.ok(&["ablate", "--config", &ws.config()]);
    let ablation: Value = serde_json::from_slice(&fs::read(ws.out("ablation.json")).unwrap()).unwrap();
    let runs = ablation.as_array().unwrap();
    assert_eq!(runs.len(), 2);
    assert!(runs.iter().all(|r| r["cells"].as_array().unwrap().len() == 4));

    ws.ok(&["train", "--config", &ws.config()]);
    let ckpt = ws.out("checkpoint");
    ws.ok(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--config", &ws.config()]);
    let plots = ws.root.join("plots");
    ws.ok(&[
        "export-plot",
        "--metrics",
        ws.out("sweep.jsonl").to_str().unwrap(),
        "--metrics",
        ws.out("metrics.jsonl").to_str().unwrap(),
        "--out",
        plots.to_str().unwrap(),
    ]);
    assert_eq!(csv_rows(&plots.join("accuracy_vs_eta.csv")).len(), 1 + 4);
    assert_eq!(csv_rows(&plots.join("loss_vs_step.csv")).len(), 1 + 4);
    assert_eq!(csv_rows(&plots.join("gap_distances.csv")).len(), 1 + 1);
}
