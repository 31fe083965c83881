//! Persistent contrastive divergence for two-layer centered DBMs.
//!
//! Each update re-initializes the data-dependent chains from the hidden
//! offsets, runs clamped sweeps on the minibatch, advances the persistent
//! free particles, and moves the weights and biases along the difference of
//! the centered statistics. Offsets are fixed at initialization.

use ndarray::{linalg::general_mat_mul, Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::math::{logit, sigm};
use crate::model::{check_binary_matrix, Dbm2Params};
use crate::sampler::{
    clamped_sweep_scaled, free_sweep_scaled, sample_probabilities, visible_field, ParticleSet, Rng, Streams,
};

/// Epochs at which [`train`] takes snapshots, when within budget.
pub const EPOCH_GRID: [f64; 5] = [1.0, 3.162_277_660_168_379_5, 10.0, 31.622_776_601_683_79, 100.0];

/// How the per-sample update terms of a minibatch are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradientReduction {
    /// One rate-`η` step per (data sample, free particle) pair, as in the
    /// single-sample algorithm: `η · B · (⟨data⟩ − ⟨model⟩)` for a minibatch
    /// of `B` rows.
    #[default]
    Sum,
    /// `η · (⟨data⟩ − ⟨model⟩)`, independent of the minibatch size.
    Mean,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub reduction: GradientReduction,
    pub minibatch_size: usize,
    pub n_particles: usize,
    pub data_gibbs_steps: usize,
    pub model_gibbs_steps: usize,
    /// Training length in epochs; fractional values are honored as
    /// `floor(epochs * updates_per_epoch)` updates.
    pub epochs: f64,
    pub hidden1: usize,
    pub hidden2: usize,
    pub b0: f64,
    pub c0: f64,
    pub beta0: f64,
    pub gamma0: f64,
    pub averaging_kc: f64,
    pub seed: u64,
    /// A metrics row is recorded every this many updates (and after the last).
    pub metrics_interval: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.0005,
            reduction: GradientReduction::Sum,
            minibatch_size: 25,
            n_particles: 25,
            data_gibbs_steps: 5,
            model_gibbs_steps: 1,
            epochs: 10.0,
            hidden1: 400,
            hidden2: 100,
            b0: 0.0,
            c0: 0.0,
            beta0: 0.5,
            gamma0: 0.5,
            averaging_kc: 10.0,
            seed: 0,
            metrics_interval: 100,
        }
    }
}

impl TrainConfig {
    /// Hidden biases and offsets of one cell of the bias/offset grid
    /// (`b0 = c0 = bias`, `beta0 = gamma0 = offset`).
    pub fn with_cell(mut self, bias: f64, offset: f64) -> Self {
        self.b0 = bias;
        self.c0 = bias;
        self.beta0 = offset;
        self.gamma0 = offset;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {} must be finite and >= 0", self.learning_rate));
        }
        for (name, v) in [
            ("minibatch size", self.minibatch_size),
            ("particle count", self.n_particles),
            ("data Gibbs steps", self.data_gibbs_steps),
            ("model Gibbs steps", self.model_gibbs_steps),
            ("hidden1 units", self.hidden1),
            ("hidden2 units", self.hidden2),
        ] {
            if v == 0 {
                return bad(format!("{name} must be >= 1"));
            }
        }
        if !(self.epochs >= 0.0 && self.epochs.is_finite()) {
            return bad(format!("epochs {} must be finite and >= 0", self.epochs));
        }
        if !(self.averaging_kc > 0.0 && self.averaging_kc.is_finite()) {
            return bad(format!("averaging constant {} must be > 0", self.averaging_kc));
        }
        if self.metrics_interval == 0 {
            return bad("metrics interval must be >= 1".into());
        }
        for (name, v) in [("b0", self.b0), ("c0", self.c0)] {
            if !v.is_finite() {
                return bad(format!("{name} must be finite"));
            }
        }
        for (name, v) in [("beta0", self.beta0), ("gamma0", self.gamma0)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} = {v} must lie in [0, 1]"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub theta: Dbm2Params,
    pub theta_avg: Dbm2Params,
    pub particles: ParticleSet,
    /// Number of updates applied so far.
    pub k: u64,
}

/// Visible biases from clamped pixel means, hidden biases and offsets from
/// the config, zero weights, and free particles drawn from the offsets.
pub fn init_model(data: ArrayView2<'_, f64>, cfg: &TrainConfig, rng: &mut Rng) -> Result<TrainState> {
    cfg.validate()?;
    if data.nrows() == 0 || data.ncols() == 0 {
        return Err(Error::Empty("training data"));
    }
    check_binary_matrix(data)?;
    let n = data.nrows() as f64;
    let eps = 1.0 / (n + 2.0);
    let a: Array1<f64> = data
        .mean_axis(Axis(0))
        .expect("non-empty")
        .mapv(|p| logit(p.clamp(eps, 1.0 - eps)));
    let alpha = a.mapv(sigm);
    let (mx, my, mz) = (data.ncols(), cfg.hidden1, cfg.hidden2);
    let theta = Dbm2Params::new(
        Array2::zeros((my, mx)),
        Array2::zeros((mz, my)),
        a,
        Array1::from_elem(my, cfg.b0),
        Array1::from_elem(mz, cfg.c0),
        alpha,
        Array1::from_elem(my, cfg.beta0),
        Array1::from_elem(mz, cfg.gamma0),
    )?;
    let particles = ParticleSet::from_offsets(&theta, cfg.n_particles, rng);
    Ok(TrainState {
        theta_avg: theta.clone(),
        theta,
        particles,
        k: 0,
    })
}

/// Magnitudes of the applied weight changes, plus the mean energy gap
/// between the data-dependent and free chains before the step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateStats {
    pub mean_abs_dw: f64,
    pub mean_abs_dv: f64,
    pub free_energy_proxy: f64,
}

/// Centered sufficient statistics of a batch of joint states, averaged over
/// rows: `⟨(y-β)(x-α)ᵀ⟩`, `⟨(z-γ)(y-β)ᵀ⟩`, `⟨x-α⟩`, `⟨y-β⟩`, `⟨z-γ⟩`.
struct Moments {
    yx: Array2<f64>,
    zy: Array2<f64>,
    x: Array1<f64>,
    y: Array1<f64>,
    z: Array1<f64>,
}

impl Moments {
    fn of(m: &Dbm2Params, xs: ArrayView2<'_, f64>, ys: ArrayView2<'_, f64>, zs: ArrayView2<'_, f64>) -> Self {
        let inv = 1.0 / xs.nrows() as f64;
        let xc = &xs - m.alpha();
        let yc = &ys - m.beta();
        let zc = &zs - m.gamma();
        let mut yx = Array2::zeros((yc.ncols(), xc.ncols()));
        general_mat_mul(inv, &yc.t(), &xc, 0.0, &mut yx);
        let mut zy = Array2::zeros((zc.ncols(), yc.ncols()));
        general_mat_mul(inv, &zc.t(), &yc, 0.0, &mut zy);
        Self {
            yx,
            zy,
            x: xc.sum_axis(Axis(0)) * inv,
            y: yc.sum_axis(Axis(0)) * inv,
            z: zc.sum_axis(Axis(0)) * inv,
        }
    }
}

fn mean_abs(a: &Array2<f64>) -> f64 {
    if a.is_empty() {
        0.0
    } else {
        a.iter().map(|v| v.abs()).sum::<f64>() / a.len() as f64
    }
}

/// One PCD step on `minibatch`. The new parameters (and the energies of the
/// current chains) are checked for non-finite values before the new
/// parameters replace the current ones; on divergence
/// `theta`, `theta_avg` and `k` are left untouched.
pub fn pcd_update(
    state: &mut TrainState,
    minibatch: ArrayView2<'_, f64>,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<UpdateStats> {
    let m = &state.theta;
    let s = m.sizes();
    if minibatch.nrows() == 0 {
        return Err(Error::Empty("minibatch"));
    }
    if minibatch.ncols() != s.visible {
        return Err(Error::Dimension {
            what: "minibatch columns",
            expected: s.visible,
            got: minibatch.ncols(),
        });
    }
    check_binary_matrix(minibatch)?;
    let mut streams = Streams::Shared(rng);

    let rows = minibatch.nrows();
    let mut yd = sample_probabilities(rows, m.beta(), &mut streams);
    let mut zd = sample_probabilities(rows, m.gamma(), &mut streams);
    let x_wt = visible_field(m, minibatch);
    for _ in 0..cfg.data_gibbs_steps {
        clamped_sweep_scaled(m, &x_wt, &mut yd, &mut zd, 1.0, &mut streams);
    }
    for _ in 0..cfg.model_gibbs_steps {
        free_sweep_scaled(m, &mut state.particles, 1.0, &mut streams);
    }

    let p = &state.particles;
    let data = Moments::of(m, minibatch, yd.view(), zd.view());
    let model = Moments::of(m, p.xs.view(), p.ys.view(), p.zs.view());
    let proxy = m.energies(minibatch, yd.view(), zd.view()).mean().expect("rows")
        - m.energies(p.xs.view(), p.ys.view(), p.zs.view())
            .mean()
            .expect("particles");

    let eta = match cfg.reduction {
        GradientReduction::Sum => cfg.learning_rate * rows as f64,
        GradientReduction::Mean => cfg.learning_rate,
    };
    let dw = (data.yx - model.yx) * eta;
    let dv = (data.zy - model.zy) * eta;
    let mut next = m.clone();
    next.w += &dw;
    next.v += &dv;
    next.a.scaled_add(eta, &(data.x - model.x));
    next.b.scaled_add(eta, &(data.y - model.y));
    next.c.scaled_add(eta, &(data.z - model.z));
    let failure = match next.check_finite() {
        Err(e) => Some(e.to_string()),
        Ok(()) if !proxy.is_finite() => Some(format!("free-energy proxy is {proxy}")),
        Ok(()) => None,
    };
    if let Some(detail) = failure {
        return Err(Error::Diverged {
            update: state.k + 1,
            detail,
        });
    }

    let weight_new = cfg.averaging_kc / (state.k as f64 + cfg.averaging_kc);
    state.theta_avg.blend_from(&next, weight_new);
    state.theta = next;
    state.k += 1;
    Ok(UpdateStats {
        mean_abs_dw: mean_abs(&dw),
        mean_abs_dv: mean_abs(&dv),
        free_energy_proxy: proxy,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub update: u64,
    pub epoch: f64,
    pub stats: UpdateStats,
}

impl MetricsRow {
    pub const HEADER: [&'static str; 5] = ["update", "epoch", "mean_abs_dW", "mean_abs_dV", "free_energy_proxy"];

    pub fn fields(&self) -> [String; 5] {
        [
            self.update.to_string(),
            format!("{:.6}", self.epoch),
            format!("{:e}", self.stats.mean_abs_dw),
            format!("{:e}", self.stats.mean_abs_dv),
            format!("{}", self.stats.free_energy_proxy),
        ]
    }
}

/// Averaged parameters captured at a checkpoint epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub epoch: f64,
    pub update: u64,
    pub theta_avg: Dbm2Params,
}

impl Snapshot {
    /// File-name tag: integral epochs print bare, others with two decimals
    /// (`0`, `1`, `3.16`, `10`, `31.62`, `100`).
    pub fn tag(&self) -> String {
        epoch_tag(self.epoch)
    }
}

pub fn epoch_tag(epoch: f64) -> String {
    if epoch.fract() == 0.0 {
        format!("{epoch:.0}")
    } else {
        format!("{epoch:.2}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub metrics: Vec<MetricsRow>,
    /// Epoch 0, each grid epoch below the budget, and the final epoch.
    pub snapshots: Vec<Snapshot>,
    pub updates_per_epoch: u64,
}

pub fn updates_per_epoch(n_samples: usize, minibatch_size: usize) -> u64 {
    n_samples.div_ceil(minibatch_size) as u64
}

/// Update count after which the snapshot for `epoch` is taken.
pub fn updates_for_epochs(epochs: f64, per_epoch: u64) -> u64 {
    (epochs * per_epoch as f64).floor() as u64
}

/// Trains from [`init_model`] on `data` (rows are samples), reshuffling the
/// rows at the start of every epoch. The last minibatch of an epoch may be
/// smaller than the configured size.
pub fn train(data: ArrayView2<'_, f64>, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(data, cfg, |_| Ok(()))
}

/// As [`train`], calling `on_snapshot` as each snapshot is taken (so that
/// callers can persist checkpoints while training continues).
pub fn train_with<F>(data: ArrayView2<'_, f64>, cfg: &TrainConfig, mut on_snapshot: F) -> Result<TrainOutcome>
where
    F: FnMut(&Snapshot) -> Result<()>,
{
    let mut rng = crate::sampler::seeded_rng(cfg.seed);
    let mut state = init_model(data, cfg, &mut rng)?;
    let per_epoch = updates_per_epoch(data.nrows(), cfg.minibatch_size);
    let total = updates_for_epochs(cfg.epochs, per_epoch);

    let mut marks: Vec<(f64, u64)> = vec![(0.0, 0)];
    for &e in EPOCH_GRID.iter().filter(|&&e| e < cfg.epochs) {
        marks.push((e, updates_for_epochs(e, per_epoch)));
    }
    if cfg.epochs > 0.0 {
        marks.push((cfg.epochs, total));
    }
    let mut marks = marks.into_iter().peekable();

    let mut snapshots = Vec::new();
    let mut metrics = Vec::new();
    let mut take_due = |state: &TrainState, snapshots: &mut Vec<Snapshot>| -> Result<()> {
        while let Some(&(epoch, update)) = marks.peek() {
            if update > state.k {
                break;
            }
            marks.next();
            let snap = Snapshot {
                epoch,
                update: state.k,
                theta_avg: state.theta_avg.clone(),
            };
            on_snapshot(&snap)?;
            snapshots.push(snap);
        }
        Ok(())
    };
    take_due(&state, &mut snapshots)?;

    let mut order: Vec<usize> = (0..data.nrows()).collect();
    'epochs: while state.k < total {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.minibatch_size) {
            if state.k >= total {
                break 'epochs;
            }
            let batch = data.select(Axis(0), chunk);
            let stats = pcd_update(&mut state, batch.view(), cfg, &mut rng)?;
            if state.k % cfg.metrics_interval == 0 || state.k == total {
                metrics.push(MetricsRow {
                    update: state.k,
                    epoch: state.k as f64 / per_epoch as f64,
                    stats,
                });
            }
            take_due(&state, &mut snapshots)?;
        }
    }
    Ok(TrainOutcome {
        state,
        metrics,
        snapshots,
        updates_per_epoch: per_epoch,
    })
}
