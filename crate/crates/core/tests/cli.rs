use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use decayrec::model::{save_checkpoint, ModelConfig, Recommender};
use decayrec::numeric::Matrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tempfile::tempdir;

fn decayrec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_decayrec"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = decayrec(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    decayrec(args).status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn help_file() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("docs/cli-help.txt")
}

#[test]
fn help_matches_documented_interface() {
    let help = decayrec::cli::help_text();
    if std::env::var_os("DECAYREC_UPDATE_HELP").is_some() {
        fs::write(help_file(), &help).unwrap();
    }
    let documented = fs::read_to_string(help_file()).expect("docs/cli-help.txt exists");
    assert_eq!(help, documented, "regenerate with DECAYREC_UPDATE_HELP=1");
    assert!(ok(&["--help"]).contains("plotdata"));
}

#[test]
fn synth_is_reproducible() {
    let dir = tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&["synth", "--users", "100", "--vocab", "50", "--seed", "7", "--out", p(out)]);
    }
    for name in ["dataset.tsv", "vocab.tsv", "split.txt", "synth.json"] {
        let x = fs::read(a.join(name)).unwrap();
        assert!(!x.is_empty(), "{name}");
        assert_eq!(x, fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn exit_codes_follow_error_kinds() {
    let dir = tempdir().unwrap();
    assert_eq!(code(&["frobnicate"]), 1);
    assert_eq!(code(&["train", "--epochs", "x"]), 1);

    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"learning_rate": 1}"#).unwrap();
    assert_eq!(code(&["train", "--config", p(&cfg)]), 2);
    assert_eq!(code(&["train", "--lr", "0.001"]), 2);

    let raw = dir.path().join("raw.tsv");
    fs::write(&raw, "1\t2\n").unwrap();
    assert_eq!(code(&["prep", "--input", p(&raw), "--out", p(&dir.path().join("prep"))]), 3);
    let missing = dir.path().join("missing");
    assert_eq!(code(&["eval", "--checkpoint", p(&missing), "--data", p(&missing)]), 3);

    let data = dir.path().join("data");
    ok(&["synth", "--users", "30", "--vocab", "30", "--out", p(&data)]);
    let run = dir.path().join("run");
    let args = [
        "train", "--data", p(&data), "--run-dir", p(&run), "--max-len", "10", "--hidden", "4", "--ffn-hidden", "8",
        "--negatives", "8", "--epochs", "1", "--lr", "1e300",
    ];
    assert_eq!(code(&args), 4);
}

#[test]
fn prep_writes_dataset_vocab_and_manifest() {
    let dir = tempdir().unwrap();
    let raw = dir.path().join("raw.tsv");
    fs::write(&raw, "7\t100\t50\n7\t300\t10\n7\t200\t90\n9\t300\t5\n").unwrap();
    let out = dir.path().join("prep");
    ok(&["prep", "--input", p(&raw), "--out", p(&out)]);
    assert_eq!(fs::read_to_string(out.join("vocab.tsv")).unwrap(), "100\t1\n200\t2\n300\t3\n");
    assert_eq!(fs::read_to_string(out.join("dataset.tsv")).unwrap(), "7\t3\t10\n7\t1\t50\n7\t2\t90\n9\t3\t5\n");
    let manifest = fs::read_to_string(out.join("split.txt")).unwrap();
    assert!(manifest.contains("7\t3\t1\t1\t2"), "{manifest}");
    assert!(manifest.contains("9\t1\t1\t-\t-"), "{manifest}");
}

#[test]
fn train_eval_prune_pipeline() {
    let dir = tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["synth", "--users", "60", "--vocab", "40", "--seed", "3", "--out", p(&data)]);
    let cfg = dir.path().join("run.json");
    fs::write(
        &cfg,
        r#"{"max_len": 16, "hidden": 8, "ffn_hidden": 16, "layers": 2, "negatives": 10, "batch_size": 16, "epochs": 2}"#,
    )
    .unwrap();
    let run = dir.path().join("run");
    ok(&["train", "--config", p(&cfg), "--data", p(&data), "--run-dir", p(&run), "--epochs", "3"]);

    let echoed: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("config.json")).unwrap()).unwrap();
    assert_eq!(echoed["epochs"], 3);
    assert_eq!(echoed["hidden"], 8);
    assert_eq!(echoed["lr"], 0.001);

    let metrics = fs::read_to_string(run.join("metrics.csv")).unwrap();
    let last: Vec<f64> = metrics.lines().last().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    let ckpt = run.join("checkpoints/epoch_3");
    let csv = ok(&["eval", "--checkpoint", p(&ckpt), "--data", p(&data), "--split", "valid"]);
    let value = |metric: &str, k: &str| -> f64 {
        csv.lines()
            .find_map(|l| l.strip_prefix(&format!("{metric},{k},")))
            .unwrap()
            .parse()
            .unwrap()
    };
    assert_eq!(value("hr", "10"), last[3]);
    assert_eq!(value("ndcg", "10"), last[4]);
    assert_eq!(value("mrr", "all"), last[5]);

    let report = ok(&["prune", "--checkpoint", p(&ckpt), "--stride", "4", "--tau", "0.5"]);
    assert!(report.starts_with("layer,kept_blocks,dense_blocks,reduction_percent\n0,"));
    let masks = run.join("masks");
    for l in 0..2 {
        assert!(masks.join(format!("layer_{l}.mask")).exists());
    }
    let groups = dir.path().join("groups.csv");
    let m0 = masks.join("layer_0.mask");
    let m1 = masks.join("layer_1.mask");
    let pruned = ok(&[
        "eval", "--checkpoint", p(&ckpt), "--data", p(&data), "--mask", p(&m0), "--mask", p(&m1), "--groups", p(&groups),
    ]);
    assert!(pruned.starts_with("metric,K,value\nhr,1,"));
    assert_eq!(fs::read_to_string(&groups).unwrap().lines().count(), 6);
    assert_eq!(
        code(&["eval", "--checkpoint", p(&ckpt), "--data", p(&data), "--mask", p(&m0), "--mask", p(&m1), "--mask", p(&m0)]),
        2
    );
}

#[test]
fn prune_matches_hand_traced_toy_map() {
    let cfg = ModelConfig {
        max_len: 8,
        hidden: 4,
        ffn_hidden: 8,
        layers: 1,
        vocab: 10,
        ..ModelConfig::default()
    };
    let mut model = Recommender::new(cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    model.params.layers[0].pos = Matrix::new(1, 8, vec![5.0, 5.0, 0.01, 0.01, 5.0, 5.0, 0.0, 0.0]).unwrap();
    let dir = tempdir().unwrap();
    let ckpt = dir.path().join("toy");
    save_checkpoint(&ckpt, &model, &BTreeMap::new()).unwrap();
    let out = dir.path().join("masks");
    let report = ok(&["prune", "--checkpoint", p(&ckpt), "--tau", "0.5", "--stride", "2", "--out", p(&out)]);
    assert_eq!(report, "layer,kept_blocks,dense_blocks,reduction_percent\n0,6,10,40.0000\n");
    assert_eq!(fs::read_to_string(out.join("layer_0.mask")).unwrap(), "8 2 0.5\n4\n9\n12\n14\n");
}

#[test]
fn bench_and_plotdata() {
    let dir = tempdir().unwrap();
    let out = dir.path().join("bench");
    ok(&[
        "bench", "--suite", "temporal", "--lengths", "16,32", "--length-batch", "2", "--batches", "1,2",
        "--batch-length", "16", "--out", p(&out),
    ]);
    let csv = fs::read_to_string(out.join("temporal.csv")).unwrap();
    assert!(csv.starts_with("case,n,batch,median_ms,p90_ms,flops_reduction\n"));
    assert_eq!(csv.lines().count(), 1 + 3 * 4);
    ok(&["bench", "--suite", "sparsity", "--sparse-n", "64", "--taus", "0.5", "--out", p(&out)]);
    assert_eq!(code(&["bench", "--reps", "10", "--out", p(&out)]), 2);

    let plots = dir.path().join("plots");
    let temporal = out.join("temporal.csv");
    let sparsity = out.join("sparsity.csv");
    ok(&["plotdata", "--input", p(&temporal), p(&sparsity), "--out", p(&plots)]);
    let series = fs::read_to_string(plots.join("exp_power_batch2.csv")).unwrap();
    assert!(series.starts_with("n,median_ms,p90_ms\n16,"));
    assert!(plots.join("bucket_n16.csv").exists());
    assert!(plots.join("flops_reduction.csv").exists());
}
