use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cdbm::data::{encode_idx, read_pgm, IdxData, IdxTensor};
use cdbm::{checkpoint, Dbm2Params, LayerSizes};
use tempfile::TempDir;

fn write_split(dir: &Path, images: &str, labels: &str, n: usize, salt: u64) {
    let pixels: Vec<u8> = (0..n * 784)
        .map(|i| {
            let h = (i as u64 ^ salt).wrapping_mul(0x9e37_79b9_7f4a_7c15) >> 56;
            if h < 90 {
                0
            } else {
                255
            }
        })
        .collect();
    let imgs = IdxTensor::new(vec![n, 28, 28], IdxData::U8(pixels)).unwrap();
    let labs = IdxTensor::new(vec![n], IdxData::U8((0..n).map(|i| (i % 10) as u8).collect())).unwrap();
    fs::write(dir.join(images), encode_idx(&imgs)).unwrap();
    fs::write(dir.join(labels), encode_idx(&labs)).unwrap();
}

/// Temporary workspace with a small random MNIST look-alike.
struct Fixture {
    tmp: TempDir,
}

impl Fixture {
    fn new() -> Self {
        let tmp = TempDir::new().unwrap();
        let data = tmp.path().join("mnist");
        fs::create_dir(&data).unwrap();
        write_split(&data, "train-images-idx3-ubyte", "train-labels-idx1-ubyte", 60, 1);
        write_split(&data, "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte", 30, 2);
        Self { tmp }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.tmp.path().join(rel)
    }

    fn run(&self, out: &str, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_cdbm"))
            .env_remove("CDBM_DATA_DIR")
            .arg("--data-dir")
            .arg(self.path("mnist"))
            .arg("--out")
            .arg(self.path(out))
            .args(args)
            .output()
            .unwrap()
    }

    fn ok(&self, out: &str, args: &[&str]) -> String {
        let o = self.run(out, args);
        assert!(
            o.status.success(),
            "{args:?} failed: {}",
            String::from_utf8_lossy(&o.stderr)
        );
        String::from_utf8(o.stdout).unwrap()
    }

    fn zero_checkpoint(&self) -> PathBuf {
        let p = self.path("zero.cdbm");
        checkpoint::save(&Dbm2Params::zeros(LayerSizes::new(784, 6, 4)), &p).unwrap();
        p
    }
}

const TINY: &[&str] = &[
    "--hidden1",
    "6",
    "--hidden2",
    "4",
    "--minibatch",
    "10",
    "--particles",
    "5",
];

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn zero_model_loglik_is_uniform() {
    let fx = Fixture::new();
    let ckpt = fx.zero_checkpoint();
    let stdout = fx.ok(
        "gen",
        &[
            "eval-gen",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--ais-k",
            "20",
            "--ais-runs",
            "8",
        ],
    );
    assert!(stdout.contains("-543.4"), "{stdout}");
    let summary = csv_rows(&fx.path("gen/ais_summary.csv"));
    assert_eq!(summary[0][0], "loglik_estimate");
    let ll: f64 = summary[1][0].parse().unwrap();
    assert_eq!(ll, -784.0 * std::f64::consts::LN_2);
    let weights = csv_rows(&fx.path("gen/ais_weights.csv"));
    assert_eq!(weights[0], ["run_id", "kind", "point_id", "log_weight"]);
    assert_eq!(weights.len(), 1 + 8 + 30);
    assert!(weights[1..].iter().all(|r| r[3].parse::<f64>().unwrap() == 0.0));
    assert_eq!(weights[1][2], "");
}

#[test]
fn zero_epochs_writes_only_the_initial_checkpoint() {
    let fx = Fixture::new();
    fx.ok("t0", &[&["train", "--epochs", "0"], TINY].concat());
    let mut names: Vec<String> = fs::read_dir(fx.path("t0"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, ["ckpt_e0.cdbm", "metrics.csv", "run_manifest"]);
    let manifest = fs::read_to_string(fx.path("t0/run_manifest")).unwrap();
    assert!(manifest.contains("status = ok"));
    assert!(manifest.contains("lr = 0.0005"));
    assert!(manifest.contains("reduction = sum"));
}

#[test]
fn training_is_deterministic() {
    let fx = Fixture::new();
    let args = [&["train", "--epochs", "2", "--seed", "7"], TINY].concat();
    fx.ok("a", &args);
    fx.ok("b", &args);
    for f in ["ckpt_e0.cdbm", "ckpt_e1.cdbm", "ckpt_e2.cdbm", "metrics.csv"] {
        assert_eq!(
            fs::read(fx.path("a").join(f)).unwrap(),
            fs::read(fx.path("b").join(f)).unwrap(),
            "{f}"
        );
    }
    fx.ok("c", &[&["train", "--epochs", "2", "--seed", "8"], TINY].concat());
    assert_ne!(
        fs::read(fx.path("a/ckpt_e2.cdbm")).unwrap(),
        fs::read(fx.path("c/ckpt_e2.cdbm")).unwrap()
    );
    let metrics = csv_rows(&fx.path("a/metrics.csv"));
    assert_eq!(
        metrics[0],
        ["update", "epoch", "mean_abs_dW", "mean_abs_dV", "free_energy_proxy"]
    );
}

#[test]
fn grid_trains_one_directory_per_cell() {
    let fx = Fixture::new();
    fx.ok("grid", &[&["train", "--grid", "--epochs", "1"], TINY].concat());
    let summary = csv_rows(&fx.path("grid/grid_summary.csv"));
    assert_eq!(summary.len(), 10);
    for row in &summary[1..] {
        assert_eq!(row[3], "ok");
        assert!(fx.path("grid").join(&row[0]).join("ckpt_e1.cdbm").is_file());
    }
    let m = checkpoint::load(&fx.path("grid/b-2_beta0.881/ckpt_e0.cdbm")).unwrap();
    assert!(m.b().iter().all(|&b| b == -2.0));
    assert!((m.beta()[0] - 0.880_797).abs() < 1e-6);

    fx.ok(
        "diag",
        &[&["train", "--grid", "diagonal", "--epochs", "0"], TINY].concat(),
    );
    assert_eq!(csv_rows(&fx.path("diag/grid_summary.csv")).len(), 4);
}

#[test]
fn config_file_sits_between_flags_and_defaults() {
    let fx = Fixture::new();
    let cfg = fx.path("run.conf");
    fs::write(&cfg, "epochs = 0\nlr = 0.01\nseed = 3\nhidden1 = 6\nhidden2 = 4\n").unwrap();
    fx.ok("cfg", &["--config", cfg.to_str().unwrap(), "train", "--lr", "0.02"]);
    let manifest = fs::read_to_string(fx.path("cfg/run_manifest")).unwrap();
    assert!(manifest.contains("lr = 0.02"));
    assert!(manifest.contains("seed = 3"));
    assert!(manifest.contains("epochs = 0"));
    assert!(manifest.contains("minibatch = 25"));

    // a manifest is itself a valid settings file
    let again = fx.path("cfg/run_manifest");
    fx.ok("cfg2", &["--config", again.to_str().unwrap(), "train"]);
    assert_eq!(
        fs::read(fx.path("cfg/ckpt_e0.cdbm")).unwrap(),
        fs::read(fx.path("cfg2/ckpt_e0.cdbm")).unwrap()
    );
}

#[test]
fn input_errors_exit_with_one() {
    let fx = Fixture::new();
    let o = Command::new(env!("CARGO_BIN_EXE_cdbm"))
        .env_remove("CDBM_DATA_DIR")
        .args(["--data-dir", "/nonexistent", "--out"])
        .arg(fx.path("x"))
        .args(["train", "--epochs", "0"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("not found"));

    let bad = fx.path("bad.cdbm");
    fs::write(&bad, b"CDBM0001 truncated").unwrap();
    let o = fx.run("x", &["filters", "--checkpoint", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));

    assert_eq!(fx.run("x", &["train", "--bogus"]).status.code(), Some(1));
    assert_eq!(fx.run("x", &["train", "--offset", "1.5"]).status.code(), Some(1));
    let cfg = fx.path("bad.conf");
    fs::write(&cfg, "learning_rate = 1\n").unwrap();
    assert_eq!(
        fx.run("x", &["--config", cfg.to_str().unwrap(), "train"]).status.code(),
        Some(1)
    );
    assert_eq!(fx.run("x", &["--help"]).status.code(), Some(0));
}

#[test]
fn divergence_exits_with_two() {
    let fx = Fixture::new();
    let o = fx.run("div", &[&["train", "--epochs", "1", "--lr", "1e308"], TINY].concat());
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = fs::read_to_string(fx.path("div/run_manifest")).unwrap();
    assert!(manifest.contains("status = diverged"));
    assert!(fx.path("div/ckpt_e0.cdbm").is_file());
}

#[test]
fn discriminative_outputs() {
    let fx = Fixture::new();
    let ckpt = fx.zero_checkpoint();
    let stdout = fx.ok(
        "disc",
        &[
            "eval-disc",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--subset-n",
            "12",
            "--sigma2",
            "1,100",
        ],
    );
    assert!(stdout.contains("auc by layer"));
    let res = csv_rows(&fx.path("disc/residuals.csv"));
    assert_eq!(res[0], ["layer", "d", "sigma2", "residual"]);
    assert_eq!(res.len(), 1 + 3 * 13 * 2);
    // d = 0 is the label energy for every layer and scale
    for r in res[1..].iter().filter(|r| r[1] == "0") {
        assert_eq!(r[3], "12");
    }
    let auc = csv_rows(&fx.path("disc/auc.csv"));
    assert_eq!(auc.len(), 4);
    let scatter = csv_rows(&fx.path("disc/kpca2.csv"));
    assert_eq!(scatter[0], ["sample_id", "label", "pc1", "pc2"]);
    assert_eq!(scatter.len(), 13);
}

#[test]
fn conditioning_table() {
    let fx = Fixture::new();
    fx.ok(
        "cond",
        &[
            "conditioning",
            "--units",
            "8",
            "--directions",
            "5",
            "--mc-samples",
            "2000",
        ],
    );
    let rows = csv_rows(&fx.path("cond/conditioning.csv"));
    assert_eq!(
        rows[0],
        ["bias", "offset", "lambda_ratio", "n_dirs", "n_samples", "seed"]
    );
    assert_eq!(rows.len(), 10);
    assert!(rows[1..].iter().all(|r| r[2].parse::<f64>().unwrap() >= 1.0));
}

#[test]
fn zero_model_samples_are_salt_and_pepper() {
    let fx = Fixture::new();
    let ckpt = fx.zero_checkpoint();
    fx.ok(
        "s",
        &[
            "sample",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--count",
            "4",
            "--burn-in",
            "2",
            "--thin",
            "1",
        ],
    );
    let img = read_pgm(&fx.path("s/samples.pgm")).unwrap();
    assert_eq!((img.width, img.height), (57, 57));
    assert!(img.pixels.iter().all(|&p| p == 0 || p == 255));
    assert!(img.pixels.iter().filter(|&&p| p == 0).count() > 1000);

    fx.ok(
        "f",
        &["filters", "--checkpoint", ckpt.to_str().unwrap(), "--count", "3"],
    );
    assert!(fx.path("f/filters_layer1.pgm").is_file());
    assert!(fx.path("f/filters_layer2.pgm").is_file());
}
