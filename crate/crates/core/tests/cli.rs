use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use streamroute::expert::{Expert, ExpertRequest, RemoteExpert, RemoteExpertConfig};
use streamroute::harness::read_summary_csv;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_streamroute"))
}

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/synthetic.toml")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            out.extend(read_tree(&p));
        } else {
            out.push((p.strip_prefix(dir).unwrap_or(&p).display().to_string(), std::fs::read(&p).unwrap()));
        }
    }
    out.sort();
    out
}

#[test]
fn simulate_twice_gives_identical_reports() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixture();
    let mut trees = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(format!("run{k}"));
        let o = run(&[
            "simulate",
            "--config",
            fx.to_str().unwrap(),
            "--seed",
            "7",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        trees.push(read_tree(&out));
    }
    assert!(trees[0].iter().any(|(n, _)| n == "metrics.json"));
    assert!(trees[0].iter().any(|(n, _)| n == "metrics.csv"));
    assert_eq!(trees[0].iter().filter(|(n, _)| n.ends_with(".jsonl")).count(), 50);
    assert!(trees[0] == trees[1], "reports differ between runs");

    let other = dir.path().join("seed8");
    let o = run(&["simulate", "-c", fx.to_str().unwrap(), "--seed", "8", "-o", other.to_str().unwrap()]);
    assert!(o.status.success());
    assert_ne!(
        std::fs::read(other.join("metrics.json")).unwrap(),
        trees[0].iter().find(|(n, _)| n == "metrics.json").unwrap().1
    );
}

#[test]
fn sweep_writes_grid_and_presets() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "sweep",
        "--config",
        fixture().to_str().unwrap(),
        "--set",
        "dataset.synthetic.streams=10",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert!(text
        .starts_with("name,max_enc,max_defer,deferral_source,accuracy,macro_f1,vlm_suc_rate,vlm_defer_rate,vlm_invoc_rate,avg_latency_s"));
    let rows = read_summary_csv(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(rows.iter().filter(|r| r.name == "grid").count(), 36);
    for p in ["no_vlm", "no_defer", "allow_both", "encoder_only", "expert_always"] {
        assert!(rows.iter().any(|r| r.name == p), "missing preset {p}");
    }
    let cell = rows
        .iter()
        .find(|r| r.name == "grid" && r.max_enc == 0 && r.max_defer == 0)
        .unwrap();
    assert_eq!((cell.vlm_invoc_rate, cell.vlm_defer_rate), (1.0, 0.0));
    // Larger max_enc lowers the invocation rate on average.
    let mean = |m: u32| {
        let v: Vec<f64> = rows
            .iter()
            .filter(|r| r.name == "grid" && r.max_enc == m)
            .map(|r| r.vlm_invoc_rate)
            .collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    assert!(mean(0) >= mean(30));
}

#[test]
fn validation_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("x.toml");

    // No dataset at all.
    std::fs::write(&cfg, "seed = 1\n").unwrap();
    let o = run(&["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("no dataset configured"), "{}", stderr(&o));

    // A dataset path that does not exist.
    std::fs::write(&cfg, "[dataset]\npath = \"missing\"\n").unwrap();
    let o = run(&["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("does not exist"), "{}", stderr(&o));

    for bad in ["[router]\nmax_enk = 1\n", "[dataset.synthetic]\nseed = 4\n", "not toml ="] {
        std::fs::write(&cfg, bad).unwrap();
        let o = run(&["sweep", "--config", cfg.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(1), "{bad}: {}", stderr(&o));
    }
    assert_eq!(run(&["simulate", "--bogus"]).status.code(), Some(1));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(
        run(&["simulate", "--set", "novalue", "-c", fixture().to_str().unwrap()])
            .status
            .code(),
        Some(1)
    );
    assert!(run(&["--help"]).status.success());
}

#[test]
fn runtime_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    // Output path blocked by a regular file.
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "").unwrap();
    let o = run(&[
        "simulate",
        "-c",
        fixture().to_str().unwrap(),
        "--set",
        "dataset.synthetic.streams=2",
        "-o",
        blocker.join("out").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn generate_train_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let o = run(&[
        "gen-synthetic",
        "--set",
        "dataset.synthetic.streams=6",
        "--set",
        "dataset.synthetic.length=80",
        "--set",
        "dataset.synthetic.interference=0.5",
        "--set",
        "scorer.kind=oracle",
        "--set",
        "scorer.flip_prob=0.2",
        "--seed",
        "5",
        "-o",
        root.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let cfg = root.join("experiment.toml");
    let text = std::fs::read_to_string(&cfg).unwrap();
    assert!(text.contains("flip_prob = 0.2"), "{text}");
    assert!(root.join("data/manifest.json").exists());

    // The generated config replays the dataset from any working directory.
    let o = run(&["simulate", "-c", cfg.to_str().unwrap(), "-o", root.join("sim").to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = run(&[
        "evaluate",
        "-c",
        cfg.to_str().unwrap(),
        "--logs",
        root.join("sim/logs").to_str().unwrap(),
        "-o",
        root.join("eval").to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        std::fs::read_to_string(root.join("eval/evaluation.json")).unwrap(),
        std::fs::read_to_string(root.join("sim/metrics.json")).unwrap()
    );

    let o = run(&[
        "train",
        "-c",
        cfg.to_str().unwrap(),
        "--set",
        "train.encoder.epochs=1",
        "--set",
        "train.encoder.hidden=4",
        "--set",
        "train.train_fraction=0.5",
        "-o",
        root.join("model").to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let ckpt = root.join("model/encoder.ckpt");
    assert!(ckpt.exists() && root.join("model/train.json").exists());

    let o = run(&[
        "evaluate",
        "-c",
        cfg.to_str().unwrap(),
        "--set",
        "scorer.kind=checkpoint",
        "--set",
        &format!("scorer.path={:?}", ckpt.to_str().unwrap()),
        "-o",
        root.join("eval2").to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("scorer acc"));
}

#[test]
fn stub_expert_serves_the_protocol() {
    let mut child = bin()
        .args([
            "serve-stub-expert",
            "--addr",
            "127.0.0.1:0",
            "--label",
            "class1",
            "--confidence",
            "0.8",
        ])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let endpoint = line.trim().strip_prefix("listening on ").expect("address line").to_string();
    let remote = RemoteExpert::new(RemoteExpertConfig::new(endpoint));
    let req = ExpertRequest {
        stream_id: "s".into(),
        timestamp: 3,
        text: Vec::new(),
        frame: None,
        labels: vec!["class0".into(), "class1".into()],
        prior_labels: Vec::new(),
    };
    let got = remote.predict(&req);
    child.kill().unwrap();
    let _ = child.wait();
    let got = got.unwrap();
    assert_eq!((got.label, got.confidence, got.model_id.as_str()), (1, 0.8, "stub"));
}
