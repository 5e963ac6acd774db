use std::path::{Path, PathBuf};
use std::process::Command;

use gbnet::cli::run;
use gbnet::data::{pack_read, pack_write};
use gbnet::geometry::PointCloud;

// A narrow network on a small synthetic set, so each invocation is quick.
const TINY: &[&str] = &[
    "points=32",
    "k=4",
    "scales=8,8,8,16",
    "fuse_width=32",
    "head=16,8",
    "train_size=24",
    "test_size=12",
    "epochs=2",
    "batch_size=8",
    "eval_batch=12",
];

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn args(extra: &[&str]) -> Vec<String> {
    let mut v = vec!["gbnet".to_string()];
    v.extend(extra.iter().map(|s| s.to_string()));
    v
}

fn tiny(cmd: &[&str]) -> Vec<String> {
    let mut v = args(cmd);
    for kv in TINY {
        v.push("--set".into());
        v.push(kv.to_string());
    }
    v
}

fn invoke(argv: Vec<String>) -> (i32, String) {
    let mut out = Vec::new();
    let code = run(argv, &mut out);
    (code, String::from_utf8(out).unwrap())
}

fn train_tiny(dir: &Path) -> String {
    let mut argv = tiny(&["train", "--output", dir.to_str().unwrap()]);
    argv.extend(["--seed".into(), "5".into()]);
    let (code, out) = invoke(argv);
    assert_eq!(code, 0, "{out}");
    out
}

fn config_echo(out: &str) -> Vec<&str> {
    let start = out.lines().position(|l| l == "# resolved config").expect("echo start");
    let end = out.lines().position(|l| l == "# end config").expect("echo end");
    out.lines().skip(start + 1).take(end - start - 1).collect()
}

#[test]
fn train_writes_artifacts_and_echoes_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let out = train_tiny(dir.path());
    let echo = config_echo(&out);
    assert!(echo.contains(&"epochs=2"), "{echo:?}");
    assert!(echo.contains(&"seed=5"));
    assert!(echo.contains(&"k=4"));
    for f in ["config.cfg", "metrics.jsonl", "best.gbnc", "last.gbnc", "confusion.csv"] {
        assert!(dir.path().join(f).exists(), "missing {f}");
    }
    let metrics = std::fs::read_to_string(dir.path().join("metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 2);
    for line in metrics.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["loss"].as_f64().unwrap().is_finite());
    }
    let confusion = std::fs::read_to_string(dir.path().join("confusion.csv")).unwrap();
    assert_eq!(confusion.lines().count(), 7);
    let total: u64 = confusion
        .lines()
        .skip(1)
        .flat_map(|l| l.split(',').skip(1).map(|v| v.parse::<u64>().unwrap()).collect::<Vec<_>>())
        .sum();
    assert_eq!(total, 12);
}

#[test]
fn identical_invocations_give_identical_metrics() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    train_tiny(a.path());
    train_tiny(b.path());
    let read = |d: &Path| std::fs::read(d.join("metrics.jsonl")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
    let read = |d: &Path| std::fs::read(d.join("last.gbnc")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
}

#[test]
fn config_file_then_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("desk.cfg");
    std::fs::write(&cfg, "# desk run\nepochs = 7\nk=12\n").unwrap();
    let (code, out) = invoke(args(&["--config", cfg.to_str().unwrap(), "--set", "k=9", "describe", "--input", "none.xyz"]));
    let echo = config_echo(&out);
    assert!(echo.contains(&"epochs=7"));
    assert!(echo.contains(&"k=9"));
    // the echo comes first even when the command itself then fails
    assert_eq!(code, 2);
}

#[test]
fn unknown_or_bad_keys_are_usage_errors() {
    let (code, _) = invoke(args(&["--set", "epocs=3", "train"]));
    assert_eq!(code, 1);
    let (code, _) = invoke(args(&["--set", "epochs=three", "train"]));
    assert_eq!(code, 1);
    let (code, _) = invoke(args(&["--set", "epochs", "train"]));
    assert_eq!(code, 1);
    let (code, _) = invoke(args(&["frobnicate"]));
    assert_eq!(code, 1);
    let (code, _) = invoke(args(&["--help"]));
    assert_eq!(code, 0);
}

#[test]
fn unknown_key_message_names_the_key() {
    let out = Command::new(env!("CARGO_BIN_EXE_gbnet"))
        .args(["--set", "learning_rate=0.1", "train"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate"));
}

#[test]
fn gradcheck_filter_and_fault_hook() {
    let (code, out) = invoke(args(&["gradcheck", "--target", "caa"]));
    assert_eq!(code, 0, "{out}");
    let rows: Vec<&str> = out
        .lines()
        .skip_while(|l| !l.starts_with("target,"))
        .skip(1)
        .filter(|l| l.contains(','))
        .collect();
    assert_eq!(rows.len(), 3, "{rows:?}");
    assert!(rows.iter().all(|r| r.split(',').nth(1) == Some("caa") && r.ends_with(",ok")));

    // the fault hook is process-wide, so it runs in its own process
    let out = Command::new(env!("CARGO_BIN_EXE_gbnet"))
        .args(["gradcheck", "--target", "softmax", "--inject-fault"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));

    let (code, _) = invoke(args(&["gradcheck", "--target", "nonesuch"]));
    assert_eq!(code, 1);
}

#[test]
fn describe_right_triangle() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("tri.xyz");
    std::fs::write(&input, "0 0 0\n1 0 0\n0 1 0\n").unwrap();
    let csv = dir.path().join("d.csv");
    let (code, _) = invoke(args(&[
        "describe",
        "--input",
        input.to_str().unwrap(),
        "--form",
        "6",
        "--out",
        csv.to_str().unwrap(),
    ]));
    assert_eq!(code, 0);
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap().split(',').count(), 15);
    let first: Vec<f64> = lines.next().unwrap().split(',').skip(1).map(|v| v.parse().unwrap()).collect();
    assert_eq!(first, vec![0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0]);

    let (code, out) = invoke(args(&["describe", "--input", input.to_str().unwrap(), "--form", "1"]));
    assert_eq!(code, 0);
    let csv = out.split("# end config\n").nth(1).unwrap();
    assert_eq!(csv.lines().next(), Some("index,x,y,z"));
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn describe_rejects_bad_input_without_partial_csv() {
    let dir = tempfile::tempdir().unwrap();
    let pack = dir.path().join("bad.gbpc");
    pack_write(&pack, &[PointCloud::new(vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], Some(0))]).unwrap();
    let mut bytes = std::fs::read(&pack).unwrap();
    bytes.truncate(bytes.len() - 5);
    std::fs::write(&pack, bytes).unwrap();
    let csv = dir.path().join("d.csv");
    let (code, _) = invoke(args(&["describe", "--input", pack.to_str().unwrap(), "--out", csv.to_str().unwrap()]));
    assert_eq!(code, 2);
    assert!(!csv.exists());

    let two = dir.path().join("two.xyz");
    std::fs::write(&two, "0 0 0\n1 0 0\n").unwrap();
    let (code, _) = invoke(args(&["describe", "--input", two.to_str().unwrap()]));
    assert_eq!(code, 2);

    let (code, _) = invoke(args(&["describe", "--input", two.to_str().unwrap(), "--form", "9"]));
    assert_eq!(code, 1);
}

#[test]
fn eval_features_and_bench_on_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    train_tiny(dir.path());
    let ck = dir.path().join("last.gbnc");
    let ck = ck.to_str().unwrap();

    let eval_dir = dir.path().join("eval");
    let (code, out) = invoke(tiny(&["eval", "--checkpoint", ck, "--output", eval_dir.to_str().unwrap()]));
    assert_eq!(code, 0, "{out}");
    assert!(out.contains("overall_acc="));
    assert!(out.contains("macro_f1="));
    let table = out.split("class,name,acc,f1\n").nth(1).expect("per-class table");
    assert_eq!(table.lines().take_while(|l| l.split(',').count() == 4).count(), 6, "{out}");
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(eval_dir.join("eval.json")).unwrap()).unwrap();
    let acc = json["overall_acc"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));

    // a pack with more classes than the checkpoint
    let pack = dir.path().join("wide.gbpc");
    let cloud = |label| PointCloud::new((0..32).map(|i| [i as f32 / 32.0, (i * i % 7) as f32, 0.5]).collect(), Some(label));
    pack_write(&pack, &[cloud(0), cloud(9)]).unwrap();
    let (code, _) = invoke(args(&["eval", "--checkpoint", ck, "--pack", pack.to_str().unwrap()]));
    assert_eq!(code, 2);

    let feats = dir.path().join("f.csv");
    let (code, out) = invoke(tiny(&[
        "features",
        "--checkpoint",
        ck,
        "--input",
        fixture("pyramid.off").to_str().unwrap(),
        "--out",
        feats.to_str().unwrap(),
    ]));
    assert_eq!(code, 0, "{out}");
    let text = std::fs::read_to_string(&feats).unwrap();
    assert_eq!(text.lines().next(), Some("point,layer,branch,norm"));
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split(',').collect()).collect();
    // f_m and f_a of four modules plus the fused map before and after attention
    assert_eq!(rows.len(), 32 * 10);
    assert!(rows.iter().all(|r| {
        let v: f64 = r[3].parse().unwrap();
        v.is_finite() && v >= 0.0
    }));

    let (code, out) = invoke(args(&["bench", "--checkpoint", ck, "--repeats", "3", "--warmup", "1"]));
    assert_eq!(code, 0, "{out}");
    let get = |key: &str| {
        out.lines()
            .find_map(|l| l.strip_prefix(&format!("{key}=")))
            .unwrap()
            .split_whitespace()
            .next()
            .unwrap()
            .to_string()
    };
    let params: usize = get("parameters").parse().unwrap();
    assert!(params > 0);
    assert_eq!(get("checkpoint_bytes").parse::<u64>().unwrap(), std::fs::metadata(ck).unwrap().len());
    assert!(get("latency_mean_ms").parse::<f64>().unwrap() > 0.0);
}

#[test]
fn untrained_attention_leaves_the_fused_map_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let mut argv = tiny(&["train", "--output", dir.path().to_str().unwrap()]);
    argv.extend(["--set".into(), "epochs=1".into(), "--set".into(), "freeze_alpha=true".into()]);
    let (code, out) = invoke(argv);
    assert_eq!(code, 0, "{out}");
    let (code, out) = invoke(tiny(&[
        "features",
        "--checkpoint",
        dir.path().join("last.gbnc").to_str().unwrap(),
        "--input",
        fixture("cube.off").to_str().unwrap(),
    ]));
    assert_eq!(code, 0);
    let norms = |branch: &str| -> Vec<String> {
        out.lines()
            .filter(|l| l.split(',').nth(2) == Some(branch))
            .map(|l| l.split(',').nth(3).unwrap().to_string())
            .collect()
    };
    assert_eq!(norms("pre_caa").len(), 32);
    assert_eq!(norms("pre_caa"), norms("post_caa"));
}

#[test]
fn synth_and_ingest_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _) = invoke(tiny(&["synth", "--output", dir.path().to_str().unwrap()]));
    assert_eq!(code, 0);
    assert_eq!(pack_read(dir.path().join("train.gbpc")).unwrap().len(), 24);
    assert_eq!(pack_read(dir.path().join("test.gbpc")).unwrap().len(), 12);

    let out_pack = dir.path().join("meshes.gbpc");
    let cube = format!("{}:2", fixture("cube.off").display());
    let (code, out) = invoke(tiny(&["ingest", &cube, fixture("pyramid.off").to_str().unwrap(), "--out", out_pack.to_str().unwrap()]));
    assert_eq!(code, 0, "{out}");
    let clouds = pack_read(&out_pack).unwrap();
    assert_eq!(clouds.len(), 2);
    assert_eq!(clouds[0].label, Some(2));
    assert_eq!(clouds[1].label, Some(0));
    assert!(clouds.iter().all(|c| c.len() == 32 && c.is_normalized(1e-4)));

    let (code, _) = invoke(tiny(&["ingest", fixture("quad.off").to_str().unwrap(), "--out", out_pack.to_str().unwrap()]));
    assert_eq!(code, 2);
}
