use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context as _, Result};
use cdbm::ais::{estimate_loglik, AisConfig};
use cdbm::conditioning::{condition_number_of_kind, DirectionKind, DEFAULT_DIRECTIONS, DEFAULT_MC_SAMPLES};
use cdbm::data::{load_mnist, render_grid, subset, write_atomic, write_csv, BinarizedDataset, MnistSplit};
use cdbm::kpca::{residual_curves, LabelMatrix, DEFAULT_SIGMA_GRID, REPRESENTATION_STEPS};
use cdbm::math::sigm;
use cdbm::model::{Dbm2Params, FlatBmParams};
use cdbm::sampler::{generate_digits, seeded_rng, stream_rng};
use cdbm::trainer::{train_with, GradientReduction, MetricsRow, TrainConfig};
use cdbm::{checkpoint, Error};

use crate::config::{Manifest, Settings};
use crate::{ConditioningArgs, EvalDiscArgs, EvalGenArgs, FiltersArgs, SampleArgs, TrainArgs};

/// Stream of the master seed reserved for drawing data subsets.
const SUBSET_STREAM: u64 = 1 << 32;
const GRID_BIASES: [f64; 3] = [2.0, 0.0, -2.0];

/// 1 for input and I/O errors, 2 when training diverged.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    let diverged = e
        .chain()
        .any(|c| matches!(c.downcast_ref::<Error>(), Some(Error::Diverged { .. })));
    if diverged {
        2
    } else {
        1
    }
}

pub struct Context {
    settings: Settings,
    data_dir: PathBuf,
    out: PathBuf,
    seed: u64,
    jobs: Option<usize>,
}

impl Context {
    pub fn new(
        config: Option<&Path>,
        data_dir: Option<PathBuf>,
        out: Option<PathBuf>,
        seed: Option<u64>,
        jobs: Option<usize>,
    ) -> Result<Self> {
        let settings = match config {
            Some(p) => Settings::load(p)?,
            None => Settings::default(),
        };
        let data_dir = settings.resolve(data_dir, "data-dir", PathBuf::from("data/mnist"))?;
        let out = settings.resolve(out, "out", PathBuf::from("out"))?;
        let seed = settings.resolve(seed, "seed", 0)?;
        let jobs = settings.resolve_opt(jobs, "jobs")?;
        if let Some(n) = jobs {
            if n == 0 {
                bail!("--jobs must be >= 1");
            }
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .context("configuring the worker pool")?;
        }
        Ok(Self {
            settings,
            data_dir,
            out,
            seed,
            jobs,
        })
    }

    fn manifest(&self, command: &str) -> Manifest {
        let mut m = Manifest::new(command);
        m.set("seed", self.seed);
        m.set("data-dir", self.data_dir.display());
        m.set("out", self.out.display());
        if let Some(j) = self.jobs {
            m.set("jobs", j);
        }
        m
    }

    fn out_dir(&self) -> Result<&Path> {
        ensure_dir(&self.out)?;
        Ok(&self.out)
    }

    fn load(&self, split: MnistSplit, n: Option<usize>) -> Result<BinarizedDataset> {
        let (images, labels) = split.paths(&self.data_dir);
        for p in [&images, &labels] {
            if !p.is_file() {
                bail!(
                    "MNIST file {} not found; pass --data-dir or set CDBM_DATA_DIR",
                    p.display()
                );
            }
        }
        let full = load_mnist(&self.data_dir, split)?;
        match n {
            Some(n) => Ok(subset(&full, n, &mut stream_rng(self.seed, SUBSET_STREAM))?),
            None => Ok(full),
        }
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn load_checkpoint(path: &Path) -> Result<Dbm2Params> {
    checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn check_visible(m: &Dbm2Params, data: &BinarizedDataset) -> Result<()> {
    if m.sizes().visible != data.x.ncols() {
        bail!(
            "checkpoint has {} visible units but the images have {} pixels",
            m.sizes().visible,
            data.x.ncols()
        );
    }
    Ok(())
}

/// Which cells of the bias/offset grid to train.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridKind {
    Full,
    Diagonal,
}

impl FromStr for GridKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "full" => Ok(Self::Full),
            "diagonal" => Ok(Self::Diagonal),
            _ => Err(format!("unknown grid `{s}` (expected full or diagonal)")),
        }
    }
}

impl GridKind {
    /// `(b0, beta0)` pairs; offsets are `sigm(±2)` and `sigm(0)`.
    pub fn cells(self) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        for &b in &GRID_BIASES {
            for &o in &GRID_BIASES {
                if self == Self::Full || b == o {
                    out.push((b, sigm(o)));
                }
            }
        }
        out
    }
}

pub fn cell_name(bias: f64, offset: f64) -> String {
    format!("b{bias}_beta{offset:.3}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct SigmaGrid(pub Vec<f64>);

impl FromStr for SigmaGrid {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let values = s
            .split(',')
            .map(|v| {
                let x: f64 = v.trim().parse().map_err(|e| format!("`{v}`: {e}"))?;
                if x > 0.0 && x.is_finite() {
                    Ok(x)
                } else {
                    Err(format!("kernel scale {x} must be > 0"))
                }
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(Self(values))
    }
}

impl std::fmt::Display for SigmaGrid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.0.iter().map(f64::to_string).collect();
        f.write_str(&parts.join(","))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KindArg(pub DirectionKind);

impl FromStr for KindArg {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "gaussian" => Ok(Self(DirectionKind::Gaussian)),
            "non-negative" => Ok(Self(DirectionKind::NonNegative)),
            _ => Err(format!(
                "unknown direction kind `{s}` (expected gaussian or non-negative)"
            )),
        }
    }
}

impl std::fmt::Display for KindArg {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self.0 {
            DirectionKind::Gaussian => "gaussian",
            DirectionKind::NonNegative => "non-negative",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReductionArg(pub GradientReduction);

impl FromStr for ReductionArg {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "sum" => Ok(Self(GradientReduction::Sum)),
            "mean" => Ok(Self(GradientReduction::Mean)),
            _ => Err(format!("unknown reduction `{s}` (expected sum or mean)")),
        }
    }
}

impl std::fmt::Display for ReductionArg {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self.0 {
            GradientReduction::Sum => "sum",
            GradientReduction::Mean => "mean",
        })
    }
}

fn train_config(ctx: &Context, a: &TrainArgs) -> Result<TrainConfig> {
    let s = &ctx.settings;
    let d = TrainConfig::default();
    let bias = s.resolve(a.bias, "bias", d.b0)?;
    let offset = s.resolve(a.offset, "offset", d.beta0)?;
    let cfg = TrainConfig {
        learning_rate: s.resolve(a.lr, "lr", d.learning_rate)?,
        reduction: s.resolve(a.reduction, "reduction", ReductionArg(d.reduction))?.0,
        minibatch_size: s.resolve(a.minibatch, "minibatch", d.minibatch_size)?,
        n_particles: s.resolve(a.particles, "particles", d.n_particles)?,
        data_gibbs_steps: s.resolve(None, "data-gibbs-steps", d.data_gibbs_steps)?,
        model_gibbs_steps: s.resolve(None, "model-gibbs-steps", d.model_gibbs_steps)?,
        epochs: s.resolve(a.epochs, "epochs", d.epochs)?,
        hidden1: s.resolve(a.hidden1, "hidden1", d.hidden1)?,
        hidden2: s.resolve(a.hidden2, "hidden2", d.hidden2)?,
        averaging_kc: s.resolve(None, "averaging-kc", d.averaging_kc)?,
        metrics_interval: s.resolve(None, "metrics-interval", d.metrics_interval)?,
        seed: ctx.seed,
        ..d
    }
    .with_cell(bias, offset);
    cfg.validate()?;
    Ok(cfg)
}

fn record_train_config(m: &mut Manifest, cfg: &TrainConfig) {
    m.set("bias", cfg.b0);
    m.set("offset", cfg.beta0);
    m.set("epochs", cfg.epochs);
    m.set("lr", cfg.learning_rate);
    m.set("reduction", ReductionArg(cfg.reduction));
    m.set("minibatch", cfg.minibatch_size);
    m.set("particles", cfg.n_particles);
    m.set("hidden1", cfg.hidden1);
    m.set("hidden2", cfg.hidden2);
    m.set("data-gibbs-steps", cfg.data_gibbs_steps);
    m.set("model-gibbs-steps", cfg.model_gibbs_steps);
    m.set("averaging-kc", cfg.averaging_kc);
    m.set("metrics-interval", cfg.metrics_interval);
}

/// Trains one model into `dir`, writing checkpoints as they are taken.
/// Returns the number of updates performed.
fn train_into(dir: &Path, data: &BinarizedDataset, cfg: &TrainConfig, mut manifest: Manifest) -> Result<u64> {
    ensure_dir(dir)?;
    record_train_config(&mut manifest, cfg);
    manifest.set("train-checksum", &data.checksum);
    manifest.set("train-n", data.len());
    manifest.set("status", "running");
    manifest.write(dir)?;

    let outcome = train_with(data.x.view(), cfg, |snap| {
        checkpoint::save(&snap.theta_avg, &dir.join(format!("ckpt_e{}.cdbm", snap.tag())))
    });
    let outcome = match outcome {
        Ok(o) => o,
        Err(e) => {
            manifest.set("status", "diverged");
            manifest.write(dir)?;
            return Err(e.into());
        }
    };
    write_csv(
        &dir.join("metrics.csv"),
        &MetricsRow::HEADER,
        outcome.metrics.iter().map(MetricsRow::fields),
    )?;
    manifest.set("status", "ok");
    manifest.set("updates", outcome.state.k);
    manifest.set("updates-per-epoch", outcome.updates_per_epoch);
    manifest.write(dir)?;
    let tags: Vec<String> = outcome.snapshots.iter().map(|s| s.tag()).collect();
    println!(
        "{}: {} updates, checkpoints at epochs {}",
        dir.display(),
        outcome.state.k,
        tags.join(", ")
    );
    Ok(outcome.state.k)
}

pub fn train(ctx: &Context, a: TrainArgs) -> Result<()> {
    let s = &ctx.settings;
    let subset_n = s.resolve_opt(a.subset_n, "subset-n")?;
    let grid = s.resolve_opt(a.grid, "grid")?;
    let cfg = train_config(ctx, &a)?;
    let data = ctx.load(MnistSplit::Train, subset_n)?;
    let out = ctx.out_dir()?;
    let mut manifest = ctx.manifest("train");
    if let Some(n) = subset_n {
        manifest.set("subset-n", n);
    }

    let Some(grid) = grid else {
        train_into(out, &data, &cfg, manifest)?;
        return Ok(());
    };
    let mut rows = Vec::new();
    let mut first_divergence = None;
    for (bias, offset) in grid.cells() {
        let name = cell_name(bias, offset);
        let cell_cfg = cfg.clone().with_cell(bias, offset);
        let (status, updates) = match train_into(&out.join(&name), &data, &cell_cfg, manifest.clone()) {
            Ok(k) => ("ok", k.to_string()),
            Err(e) if exit_code(&e) == 2 => {
                eprintln!("{name}: {e:#}");
                first_divergence.get_or_insert(e.context(format!("grid cell {name}")));
                ("diverged", String::new())
            }
            Err(e) => return Err(e.context(format!("grid cell {name}"))),
        };
        rows.push([name, bias.to_string(), offset.to_string(), status.to_string(), updates]);
    }
    write_csv(
        &out.join("grid_summary.csv"),
        &["cell", "bias", "offset", "status", "updates"],
        rows,
    )?;
    match first_divergence {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

pub fn eval_gen(ctx: &Context, a: EvalGenArgs) -> Result<()> {
    let s = &ctx.settings;
    let d = AisConfig::default();
    let cfg = AisConfig {
        k: s.resolve(a.ais_k, "ais-k", d.k)?,
        n_free_runs: s.resolve(a.ais_runs, "ais-runs", d.n_free_runs)?,
        n_clamped_runs: s.resolve(None, "ais-clamped-runs", d.n_clamped_runs)?,
        batch_size: s.resolve(None, "ais-batch", d.batch_size)?,
        seed: ctx.seed,
    };
    cfg.validate()?;
    let subset_n = s.resolve_opt(a.subset_n, "subset-n")?;
    let m = load_checkpoint(&a.checkpoint)?;
    let test = ctx.load(MnistSplit::Test, subset_n)?;
    check_visible(&m, &test)?;
    let out = ctx.out_dir()?;

    let res = estimate_loglik(&m, test.x.view(), &cfg)?;
    write_csv(
        &out.join("ais_weights.csv"),
        &["run_id", "kind", "point_id", "log_weight"],
        res.rows().into_iter().map(|(run, kind, point, w)| {
            [
                run.to_string(),
                kind.to_string(),
                point.map(|p| p.to_string()).unwrap_or_default(),
                w.to_string(),
            ]
        }),
    )?;
    write_csv(
        &out.join("ais_summary.csv"),
        &[
            "loglik_estimate",
            "log_z_ratio",
            "n_points",
            "n_free_runs",
            "n_clamped_runs",
            "k",
            "seed",
        ],
        [[
            res.loglik_estimate.to_string(),
            res.log_z_ratio_estimate.to_string(),
            test.len().to_string(),
            cfg.n_free_runs.to_string(),
            cfg.n_clamped_runs.to_string(),
            cfg.k.to_string(),
            cfg.seed.to_string(),
        ]],
    )?;
    let mut manifest = ctx.manifest("eval-gen");
    manifest.set("checkpoint", a.checkpoint.display());
    manifest.set("ais-k", cfg.k);
    manifest.set("ais-runs", cfg.n_free_runs);
    manifest.set("ais-clamped-runs", cfg.n_clamped_runs);
    manifest.set("ais-batch", cfg.batch_size);
    manifest.set("test-checksum", &test.checksum);
    manifest.set("test-n", test.len());
    manifest.write(out)?;
    println!(
        "loglik_estimate = {:.4} ({} test points)",
        res.loglik_estimate,
        test.len()
    );
    Ok(())
}

pub fn eval_disc(ctx: &Context, a: EvalDiscArgs) -> Result<()> {
    let s = &ctx.settings;
    let n = s.resolve(a.subset_n, "subset-n", 500)?;
    let grid = s.resolve(a.sigma2, "sigma2", SigmaGrid(DEFAULT_SIGMA_GRID.to_vec()))?;
    if grid.0.is_empty() {
        bail!("the sigma2 grid is empty");
    }
    let m = load_checkpoint(&a.checkpoint)?;
    let test = ctx.load(MnistSplit::Test, Some(n))?;
    check_visible(&m, &test)?;
    let out = ctx.out_dir()?;

    let t = LabelMatrix::from_labels(&test.labels)?;
    let curves = residual_curves(
        &m,
        test.x.view(),
        &t,
        &grid.0,
        REPRESENTATION_STEPS,
        &mut seeded_rng(ctx.seed),
    )?;
    write_csv(
        &out.join("residuals.csv"),
        &["layer", "d", "sigma2", "residual"],
        curves
            .rows()
            .into_iter()
            .map(|(l, d, s2, e)| [l.to_string(), d.to_string(), s2.to_string(), e.to_string()]),
    )?;
    write_csv(
        &out.join("auc.csv"),
        &["layer", "auc"],
        curves
            .layers
            .iter()
            .enumerate()
            .map(|(l, lr)| [l.to_string(), lr.auc.to_string()]),
    )?;
    let top = curves.layers.len() - 1;
    let (emb, best) = curves.kpca2(top)?;
    write_csv(
        &out.join("kpca2.csv"),
        &["sample_id", "label", "pc1", "pc2"],
        emb.rows()
            .into_iter()
            .zip(&test.labels)
            .enumerate()
            .map(|(i, (r, l))| [i.to_string(), l.to_string(), r[0].to_string(), r[1].to_string()]),
    )?;
    let mut manifest = ctx.manifest("eval-disc");
    manifest.set("checkpoint", a.checkpoint.display());
    manifest.set("subset-n", n);
    manifest.set("sigma2", &grid);
    manifest.set("test-checksum", &test.checksum);
    manifest.write(out)?;
    let aucs: Vec<String> = curves.layers.iter().map(|l| format!("{:.4}", l.auc)).collect();
    println!("auc by layer = {} (kpca2 at sigma2 = {best})", aucs.join(" / "));
    Ok(())
}

pub fn conditioning(ctx: &Context, a: ConditioningArgs) -> Result<()> {
    let s = &ctx.settings;
    let units = s.resolve(a.units, "units", 50)?;
    let n_dirs = s.resolve(a.directions, "directions", DEFAULT_DIRECTIONS)?;
    let n_samples = s.resolve(a.mc_samples, "mc-samples", DEFAULT_MC_SAMPLES)?;
    let kind = s.resolve(a.direction_kind, "direction-kind", KindArg(DirectionKind::Gaussian))?;
    let out = ctx.out_dir()?;

    let mut rows = Vec::new();
    println!("condition numbers (rows: bias 2, 0, -2; columns: offset sigm(2), sigm(0), sigm(-2))");
    for &b in &GRID_BIASES {
        let mut line = Vec::new();
        for &o in &GRID_BIASES {
            let offset = sigm(o);
            let m = FlatBmParams::uncoupled(units, b, offset)?;
            let r = condition_number_of_kind(&m, n_dirs, n_samples, ctx.seed, kind.0)?;
            line.push(format!("{:10.2}", r.condition_number));
            rows.push([
                b.to_string(),
                offset.to_string(),
                r.condition_number.to_string(),
                n_dirs.to_string(),
                n_samples.to_string(),
                ctx.seed.to_string(),
            ]);
        }
        println!("{}", line.join(" "));
    }
    write_csv(
        &out.join("conditioning.csv"),
        &["bias", "offset", "lambda_ratio", "n_dirs", "n_samples", "seed"],
        rows,
    )?;
    let mut manifest = ctx.manifest("conditioning");
    manifest.set("units", units);
    manifest.set("directions", n_dirs);
    manifest.set("mc-samples", n_samples);
    manifest.set("direction-kind", kind);
    manifest.write(out)?;
    Ok(())
}

fn square_side(units: usize) -> Result<usize> {
    let side = (units as f64).sqrt().round() as usize;
    if side * side != units {
        bail!("{units} visible units do not form a square image");
    }
    Ok(side)
}

fn write_tiles(tiles: &ndarray::Array2<f64>, path: &Path) -> Result<()> {
    let side = square_side(tiles.ncols())?;
    let cols = (tiles.nrows() as f64).sqrt().ceil() as usize;
    let rows = tiles.nrows().div_ceil(cols);
    let image = render_grid(tiles.view(), side, side, rows, cols)?;
    write_atomic(path, &image.encode())?;
    Ok(())
}

pub fn sample(ctx: &Context, a: SampleArgs) -> Result<()> {
    let s = &ctx.settings;
    let count = s.resolve(a.count, "count", 100)?;
    let burn_in = s.resolve(a.burn_in, "burn-in", 1000)?;
    let thin = s.resolve(a.thin, "thin", 100)?;
    let m = load_checkpoint(&a.checkpoint)?;
    square_side(m.sizes().visible)?;
    let out = ctx.out_dir()?;
    let digits = generate_digits(&m, count, burn_in, thin, &mut seeded_rng(ctx.seed))?;
    let path = out.join("samples.pgm");
    write_tiles(&digits, &path)?;
    let mut manifest = ctx.manifest("sample");
    manifest.set("checkpoint", a.checkpoint.display());
    manifest.set("count", count);
    manifest.set("burn-in", burn_in);
    manifest.set("thin", thin);
    manifest.write(out)?;
    println!("wrote {count} samples to {}", path.display());
    Ok(())
}

pub fn filters(ctx: &Context, a: FiltersArgs) -> Result<()> {
    let count = ctx.settings.resolve(a.count, "count", 100)?;
    if count == 0 {
        return Err(anyhow!("--count must be >= 1"));
    }
    let m = load_checkpoint(&a.checkpoint)?;
    let out = ctx.out_dir()?;
    for (name, f) in [
        ("filters_layer1.pgm", m.layer1_filters()),
        ("filters_layer2.pgm", m.layer2_filters()),
    ] {
        let take = count.min(f.nrows());
        let tiles = f.slice(ndarray::s![..take, ..]).to_owned();
        write_tiles(&tiles, &out.join(name))?;
        println!("wrote {take} filters to {}", out.join(name).display());
    }
    let mut manifest = ctx.manifest("filters");
    manifest.set("checkpoint", a.checkpoint.display());
    manifest.set("count", count);
    manifest.write(out)?;
    Ok(())
}
