use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const TINY: &str = r#"
[paths]
root = "ROOT"

[sim]
n_phantoms = 5
image_size = 32
n_detectors = 48
full_views = 36
view_grid = [36, 18, 9]

[prep]
work_size = 16

[ddpm]
steps = 10
checkpoint_every = 4

[ddpm.denoiser]
base_width = 4
time_embed_dim = 8

[ddpm.train]
iters = 12
lr = 0.001

[evaluator.model]
stage_dims = [8, 4]
head_hidden = 4

[evaluator.model.backbone]
image_size = 16
patch_size = 4
embed_dim = 8
depth = 4
n_heads = 2
mlp_ratio = 2
tap_layers = [0, 1, 2, 3]

[evaluator.model.swin]
heads = 2
window = 2
mlp_ratio = 2

[evaluator.train]
lr = 0.001
epochs = 3
"#;

struct Run {
    _tmp: TempDir,
    dir: PathBuf,
    config: PathBuf,
}

impl Run {
    fn new() -> Self {
        Self::with(|s| s)
    }

    fn with(edit: impl FnOnce(String) -> String) -> Self {
        let tmp = TempDir::new().unwrap();
        let dir = tmp.path().to_path_buf();
        let config = dir.join("exp.toml");
        let text = edit(TINY.replace("ROOT", &dir.join("run").display().to_string()));
        fs::write(&config, text).unwrap();
        Self { _tmp: tmp, dir, config }
    }

    fn root(&self) -> PathBuf {
        self.dir.join("run")
    }

    fn ctiqa(&self, args: &[&str]) -> Output {
        let out = Command::new(env!("CARGO_BIN_EXE_ctiqa"))
            .arg("--config")
            .arg(&self.config)
            .args(args)
            .env("RUST_LOG", "warn")
            .output()
            .unwrap();
        out
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.ctiqa(args);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    }

    fn code(&self, args: &[&str]) -> i32 {
        self.ctiqa(args).status.code().unwrap()
    }

    fn chain(&self, extra: &[&str]) {
        for stage in ["simulate", "train-ddpm", "infer-primary", "dissim", "train-evaluator", "evaluate"] {
            let mut args = extra.to_vec();
            args.push(stage);
            self.ok(&args);
        }
    }
}

fn files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(base: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(base, &path, out);
            } else {
                out.insert(path.strip_prefix(base).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

#[test]
fn simulate_writes_manifest_and_is_reproducible() {
    let run = Run::new();
    assert!(!run.root().exists());
    let stdout = run.ok(&["simulate"]);
    assert!(stdout.contains("60 images"));
    let manifest = run.root().join("dataset/manifest.csv");
    let first = fs::read(&manifest).unwrap();
    assert_eq!(String::from_utf8_lossy(&first).lines().count(), 1 + 5 * 12);
    run.ok(&["simulate"]);
    assert_eq!(fs::read(&manifest).unwrap(), first);
    run.ok(&["--seed", "5", "simulate"]);
    assert_ne!(fs::read(&manifest).unwrap(), first);
}

#[test]
fn config_errors_exit_2() {
    let run = Run::new();
    let missing = Command::new(env!("CARGO_BIN_EXE_ctiqa"))
        .args(["--config", "/definitely/not/here.toml", "simulate"])
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(2));
    for bad in [
        "[sim]\nn_phantoms = \"many\"\n",
        "[split]\ntrain_fraction = 0.8\ntest_fraction = 0.1\n",
        "[sim]\nunknown_knob = 1\n",
        "[split]\ntrain_fraction = 1.0\ntest_fraction = 0.0\n",
        "[prep]\nwork_size = 24\n",
        "{ \"sim\": { \"n_phantoms\": 0 } }",
    ] {
        fs::write(&run.config, bad).unwrap();
        assert_eq!(run.code(&["simulate"]), 2, "{bad}");
    }
    let json = run.dir.join("exp.json");
    fs::write(
        &json,
        "{ \"sim\": { \"n_phantoms\": 2 }, \"split\": { \"train_fraction\": 0.5, \"test_fraction\": 0.5 } }",
    )
    .unwrap();
    let out =
        Command::new(env!("CARGO_BIN_EXE_ctiqa")).arg("--config").arg(&json).arg("print-config").output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("n_phantoms = 2"));
}

#[test]
fn missing_upstream_exits_4_and_io_errors_exit_3() {
    let run = Run::new();
    for stage in ["train-ddpm", "infer-primary", "dissim", "train-evaluator", "evaluate", "metrics"] {
        assert_eq!(run.code(&[stage]), 4, "{stage}");
    }
    let blocker = run.dir.join("file");
    fs::write(&blocker, b"x").unwrap();
    let blocked = Run::with(|s| {
        let root = s.lines().find(|l| l.starts_with("root")).unwrap().to_string();
        s.replace(&root, &format!("root = \"{}\"", blocker.join("run").display()))
    });
    assert_eq!(blocked.code(&["simulate"]), 3);
}

#[test]
fn divergence_exits_5() {
    let run = Run::with(|s| s.replace("iters = 12\nlr = 0.001", "iters = 12\nlr = 1e30"));
    run.ok(&["simulate"]);
    assert_eq!(run.code(&["train-ddpm"]), 5);
}

#[test]
fn full_chain_both_modes() {
    let run = Run::new();
    run.chain(&[]);
    let skipped = run.ok(&["--ablation", "maniqa", "infer-primary"]);
    assert!(skipped.contains("skipped"));
    run.ok(&["--ablation", "maniqa", "train-evaluator"]);
    run.ok(&["--ablation", "maniqa", "evaluate"]);
    let table_out = run.ok(&["metrics"]);
    assert!(table_out.contains("d-biqa") && table_out.contains("maniqa-ablation"));

    let root = run.root();
    let table = fs::read_to_string(root.join("results/table.csv")).unwrap();
    assert_eq!(table.lines().next().unwrap(), "method,PLCC,SROCC,KROCC,Overall");
    assert_eq!(table.lines().count(), 3);
    let preds = fs::read_to_string(root.join("results/d-biqa/predictions.csv")).unwrap();
    assert_eq!(preds.lines().next().unwrap(), "image_id,condition,proxy_mos,predicted_score,split_tag");
    assert_eq!(preds.lines().filter(|l| l.ends_with(",test")).count(), 12);
    assert_eq!(preds.lines().filter(|l| l.ends_with(",train")).count(), 48);
    let summary = fs::read_to_string(root.join("results/d-biqa/summary.csv")).unwrap();
    assert!(summary.contains("d-biqa,train,48,") && summary.contains("d-biqa,test,12,"));
    let scatter = fs::read_to_string(root.join("results/d-biqa/scatter_test.dat")).unwrap();
    assert_eq!(scatter.lines().filter(|l| !l.starts_with('#')).count(), 12);
    for stage in
        ["dataset", "ddpm", "primary", "dissim", "evaluator/d-biqa", "evaluator/maniqa-ablation", "results/d-biqa"]
    {
        assert!(root.join(stage).join("provenance.json").exists(), "{stage}");
    }
    // Stages already built from this config are not redone.
    assert!(run.ok(&["train-ddpm"]).contains("up to date"));
    assert!(run.ok(&["train-evaluator"]).contains("up to date"));
}

#[test]
fn evaluate_refuses_a_checkpoint_from_another_config() {
    let run = Run::new();
    run.chain(&[]);
    let text = fs::read_to_string(&run.config).unwrap();
    fs::write(&run.config, text.replace("[evaluator.train]\nlr = 0.001", "[evaluator.train]\nlr = 0.002")).unwrap();
    assert_eq!(run.code(&["evaluate"]), 4);
    fs::write(&run.config, text.replace("[ddpm.train]\niters = 12", "[ddpm.train]\niters = 13")).unwrap();
    assert_eq!(run.code(&["infer-primary"]), 4);
}

#[test]
fn interrupted_training_resumes_identically() {
    let (a, b) = (Run::new(), Run::new());
    for r in [&a, &b] {
        r.ok(&["simulate"]);
    }
    assert!(a.ok(&["train-ddpm", "--stop-after", "5"]).contains("paused at 5/12"));
    assert!(!a.root().join("ddpm/model.ckpt").exists());
    a.ok(&["train-ddpm"]);
    b.ok(&["train-ddpm"]);
    for f in ["ddpm/loss.csv", "ddpm/model.ckpt", "ddpm/provenance.json"] {
        assert_eq!(fs::read(a.root().join(f)).unwrap(), fs::read(b.root().join(f)).unwrap(), "{f}");
    }
    assert!(!a.root().join("ddpm/state.ckpt").exists());

    let args = ["--ablation", "maniqa", "train-evaluator"];
    assert!(a.ok(&[&args[..], &["--stop-after", "1"]].concat()).contains("paused at 1/3"));
    a.ok(&args);
    b.ok(&args);
    for f in ["evaluator/maniqa-ablation/epochs.csv", "evaluator/maniqa-ablation/model.ckpt"] {
        assert_eq!(fs::read(a.root().join(f)).unwrap(), fs::read(b.root().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn deterministic_and_parallel_runs_are_byte_identical() {
    let (a, b) = (Run::new(), Run::new());
    a.chain(&["--deterministic"]);
    b.chain(&["--workers", "3"]);
    let (fa, fb) = (files(&a.root()), files(&b.root()));
    assert_eq!(fa.keys().collect::<Vec<_>>(), fb.keys().collect::<Vec<_>>());
    for (path, bytes) in &fa {
        assert!(bytes == &fb[path], "{} differs", path.display());
    }
}
