//! The binary end to end on a small synthetic MNIST-shaped dataset.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use capsforge::idx::{encode_idx, IdxArray};
use capsforge::pnm::read_image;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_capsforge"));
    c.env_remove("CAPSFORGE_DATA_DIR").env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn ok(o: Output) -> String {
    assert!(
        o.status.success(),
        "status {:?}\nstdout:\n{}\nstderr:\n{}",
        o.status,
        stdout(&o),
        String::from_utf8_lossy(&o.stderr)
    );
    stdout(&o)
}

/// Digit `i % 10` drawn as a bright 6×6 square at a class-specific place.
fn write_split(dir: &Path, stem: &str, n: usize) {
    let mut px = vec![0u8; n * 784];
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let l = i % 10;
        labels.push(l as u8);
        let (r0, c0) = (2 + (l / 5) * 12, 2 + (l % 5) * 5);
        for r in r0..r0 + 6 {
            for c in c0..c0 + 6 {
                px[i * 784 + r * 28 + c] = 200 + ((i * 7 + r + c) % 56) as u8;
            }
        }
    }
    let img = IdxArray {
        dims: vec![n, 28, 28],
        data: px,
    };
    let lab = IdxArray {
        dims: vec![n],
        data: labels,
    };
    std::fs::write(dir.join(format!("{stem}-images-idx3-ubyte")), encode_idx(&img)).unwrap();
    std::fs::write(dir.join(format!("{stem}-labels-idx1-ubyte")), encode_idx(&lab)).unwrap();
}

fn data_dir() -> tempfile::TempDir {
    let d = tempfile::tempdir().unwrap();
    let m = d.path().join("mnist");
    std::fs::create_dir_all(&m).unwrap();
    write_split(&m, "train", 60);
    write_split(&m, "t10k", 30);
    d
}

const SMALL: [&str; 10] = [
    "--scale",
    "desk",
    "--epochs",
    "2",
    "--batch-size",
    "20",
    "--train-subset",
    "60",
    "--test-subset",
    "30",
];

fn train(data: &Path, out: &Path, extra: &[&str]) -> String {
    let mut args = vec!["--data-dir", data.to_str().unwrap(), "train", "--out", out.to_str().unwrap()];
    args.extend(SMALL);
    args.extend(extra);
    ok(run(&args))
}

fn metrics_without_seconds(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.rsplit_once(',').unwrap().0.to_string())
        .collect()
}

#[test]
fn usage_errors_exit_with_2() {
    for args in [
        vec!["train", "--dataset", "svhn"],
        vec!["train", "--routing-iters", "0"],
        vec!["train", "--arch", "cnn", "--routing-iters", "3", "--data-dir", "/nonexistent"],
        vec!["export", "--run", "x", "--pca"],
        vec!["export", "--run", "x", "--per-iteration", "--perturb", "0"],
        vec!["export", "--run", "x"],
        vec!["sweep-routing", "--iters", "0,2"],
    ] {
        let o = run(&args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn missing_inputs_exit_with_3() {
    let empty = tempfile::tempdir().unwrap();
    let out = empty.path().join("out");
    let o = run(&["--data-dir", empty.path().to_str().unwrap(), "train", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("train-images-idx3-ubyte"));
    let o = run(&["export", "--run", out.to_str().unwrap(), "--perturb", "0"]);
    assert_eq!(o.status.code(), Some(3));
    let o = run(&["eval", "--checkpoint", "/nonexistent.cpsn"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn train_eval_export_round() {
    let data = data_dir();
    let runs = tempfile::tempdir().unwrap();
    let out = runs.path().join("r3");
    let text = train(data.path(), &out, &["--routing-iters", "3"]);
    assert!(text.contains("final test accuracy"), "{text}");

    // manifest first, with defaults materialised
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 42);
    assert_eq!(manifest["config"]["model"]["net"]["routing_iterations"], 3);
    assert_eq!(manifest["config"]["batch_size"], 20);
    assert_eq!(manifest["inputs"].as_array().unwrap().len(), 4);
    assert_eq!(manifest["input_hash"].as_str().unwrap().len(), 64);

    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines[0], "epoch,train_loss,train_acc,test_loss,test_acc,seconds");
    assert_eq!(lines.len(), 3);
    assert!(out.join("checkpoints/epoch-002.cpsn").is_file());
    assert!(out.join("checkpoints/final.cpsn").is_file());

    // eval: clean + deformed, twice; same numbers, cached set reused
    let cache = runs.path().join("cache");
    let eval = |extra: &[&str]| {
        let mut a = vec![
            "--data-dir",
            data.path().to_str().unwrap(),
            "eval",
            "--run",
            out.to_str().unwrap(),
            "--cache-dir",
            cache.to_str().unwrap(),
        ];
        a.extend(extra);
        ok(run(&a))
    };
    let first = eval(&["--deform", "--seed", "7"]);
    assert!(first.contains("clean accuracy") && first.contains("deformed accuracy") && first.contains("drop"));
    assert!(cache.join("mnist-test-30-seed7.txt").is_file());
    assert_eq!(eval(&["--deform", "--seed", "7"]), first);
    let confusion = std::fs::read_to_string(out.join("confusion.csv")).unwrap();
    let rows: Vec<Vec<u64>> = confusion
        .lines()
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 10);
    assert!(rows.iter().all(|r| r.len() == 10));
    assert_eq!(rows.iter().flatten().sum::<u64>(), 30);
    assert!(out.join("manifest-eval.json").is_file());

    // wrong dataset geometry
    let o = run(&["eval", "--run", out.to_str().unwrap(), "--dataset", "cifar10"]);
    assert_eq!(o.status.code(), Some(4));

    // exports
    let text = ok(run(&[
        "--data-dir",
        data.path().to_str().unwrap(),
        "export",
        "--run",
        out.to_str().unwrap(),
        "--reconstructions",
        "9",
        "--perturb",
        "0",
        "--errors",
        "3",
        "--embeddings",
        "10",
        "--per-iteration",
        "--pca",
    ]));
    assert!(text.contains("(30 rows)"), "{text}");
    let fig = out.join("figures");
    let perturb = read_image(&fig.join("perturb-0.pgm")).unwrap();
    assert_eq!((perturb.height, perturb.width), (16 * 29 - 1, 11 * 29 - 1));
    for name in ["reconstructions-epoch-002.pgm", "reconstructions-final.pgm", "ground-truth.pgm"] {
        let g = read_image(&fig.join(name)).unwrap();
        assert_eq!((g.height, g.width), (3 * 29 - 1, 3 * 29 - 1), "{name}");
    }
    let emb = std::fs::read_to_string(out.join("embeddings/embeddings.tsv")).unwrap();
    let emb: Vec<&str> = emb.lines().collect();
    assert_eq!(emb.len(), 31);
    assert!(emb[0].starts_with("iter\ttrue\tpred\tv0\t") && emb[0].ends_with("\tv15"));
    assert!(emb[1..].iter().all(|l| l.split('\t').count() == 19));
    let pca = std::fs::read_to_string(out.join("embeddings/pca.tsv")).unwrap();
    assert_eq!(pca.lines().count(), 31);
    let errors = std::fs::read_to_string(fig.join("errors.tsv")).unwrap();
    assert!(errors.starts_with("rank\tindex\ttrue\tpred\tconfidence\n"));

    // replaying the manifest reproduces metrics (timing aside) and checkpoints
    let replay = runs.path().join("replay");
    ok(run(&[
        "--data-dir",
        data.path().to_str().unwrap(),
        "train",
        "--config",
        out.join("manifest.json").to_str().unwrap(),
        "--out",
        replay.to_str().unwrap(),
    ]));
    assert_eq!(
        metrics_without_seconds(&out.join("metrics.csv")),
        metrics_without_seconds(&replay.join("metrics.csv"))
    );
    for c in ["epoch-002.cpsn", "final.cpsn"] {
        let a = std::fs::read(out.join("checkpoints").join(c)).unwrap();
        let b = std::fs::read(replay.join("checkpoints").join(c)).unwrap();
        assert!(a == b, "{c} differs");
    }
}

#[test]
fn cnn_trains_and_rejects_capsule_exports() {
    let data = data_dir();
    let runs = tempfile::tempdir().unwrap();
    let out = runs.path().join("cnn");
    train(data.path(), &out, &["--arch", "cnn"]);
    let o = run(&[
        "--data-dir",
        data.path().to_str().unwrap(),
        "export",
        "--run",
        out.to_str().unwrap(),
        "--perturb",
        "0",
    ]);
    assert_eq!(o.status.code(), Some(4));
    let text = ok(run(&["--data-dir", data.path().to_str().unwrap(), "eval", "--run", out.to_str().unwrap()]));
    assert!(text.contains("clean accuracy"));
}

#[test]
fn sweep_writes_one_row_per_r() {
    let data = data_dir();
    let runs = tempfile::tempdir().unwrap();
    let out = runs.path().join("sweep");
    let mut args = vec![
        "--data-dir",
        data.path().to_str().unwrap(),
        "sweep-routing",
        "--iters",
        "1,2",
        "--out",
        out.to_str().unwrap(),
    ];
    let mut small = SMALL;
    small[3] = "1"; // one epoch
    args.extend(small);
    let text = ok(run(&args));
    let table = std::fs::read_to_string(out.join("routing_sweep.csv")).unwrap();
    assert_eq!(text, table);
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "r,test_acc,seconds_per_epoch");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("1,") && lines[2].starts_with("2,"));
    assert!(out.join("r1/metrics.csv").is_file() && out.join("r2/checkpoints/final.cpsn").is_file());
}

#[test]
fn deform_preview_grid_depends_on_seed() {
    let data = data_dir();
    // preview wants 100 test images
    write_split(&data.path().join("mnist"), "t10k", 100);
    let out = tempfile::tempdir().unwrap();
    let grid = |seed: &str| -> PathBuf {
        let text = ok(bin()
            .env("CAPSFORGE_DATA_DIR", data.path())
            .args(["deform-preview", "--seed", seed, "--out", out.path().to_str().unwrap()])
            .output()
            .unwrap());
        assert!(text.contains("wrote"));
        out.path().join(format!("figures/deform-preview-seed{seed}.pgm"))
    };
    let (a, b) = (grid("1"), grid("2"));
    let img = read_image(&a).unwrap();
    assert_eq!((img.height, img.width), (10 * 29 - 1, 10 * 29 - 1));
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert!(out.path().join("manifest-deform-preview.json").is_file());
}
