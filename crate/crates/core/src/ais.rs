//! Annealed importance sampling estimate of the DBM log-likelihood.
//!
//! The annealing path is `θ_k = λ_k θ` with `λ_k = 1 - (1 - k/K)²`; offsets
//! are held fixed, so `θ_0` is the uniform base-rate model and the energy is
//! linear in `λ`. A run starts from uniform random bits and, for
//! `k = 1..K`, accumulates `-(λ_k - λ_{k-1}) E(ξ_{k-1}; θ)` into its log
//! weight before moving the state with one Gibbs sweep at `θ_k`.
//!
//! Free runs estimate `Z(θ)/Z(0)`; runs with the visible layer clamped to a
//! data point estimate `Ψ(θ,x)/Ψ(0,x)`. Since `Ψ(0,x)/Z(0) = 2^-Mx`,
//!
//! ```text
//! ⟨log p(x; θ)⟩ ≈ ⟨log ν(x)⟩ - log ⟨ω⟩ - Mx log 2
//! ```
//!
//! Run `i` draws from its own generator, `stream_rng(seed, i)`: free runs
//! take indices `0..n_free`, clamped run `r` of point `p` takes
//! `n_free + p * n_clamped + r`. Runs are batched row-wise, and batching does
//! not change any run's result.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::math::{log_mean_exp, mean};
use crate::model::{check_binary_matrix, BinaryState, Dbm2Params};
use crate::sampler::{
    clamped_sweep_scaled, free_sweep_scaled, sample_probabilities, stream_rng, visible_field, ParticleSet, Rng, Streams,
};

#[derive(Debug, Clone, PartialEq)]
pub struct AisConfig {
    /// Number of annealing steps `K`.
    pub k: usize,
    pub n_free_runs: usize,
    pub n_clamped_runs: usize,
    pub seed: u64,
    /// Runs advanced together as one matrix; batches are spread over the
    /// rayon thread pool.
    pub batch_size: usize,
}

impl Default for AisConfig {
    fn default() -> Self {
        Self {
            k: 2500,
            n_free_runs: 500,
            n_clamped_runs: 1,
            seed: 0,
            batch_size: 100,
        }
    }
}

impl AisConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("annealing steps", self.k),
            ("free runs", self.n_free_runs),
            ("clamped runs", self.n_clamped_runs),
            ("batch size", self.batch_size),
        ] {
            if v == 0 {
                return Err(Error::InvalidParameter(format!("{name} must be >= 1")));
            }
        }
        Ok(())
    }
}

/// `λ_k = 1 - (1 - k/K)²`.
pub fn anneal_lambda(k: usize, steps: usize) -> f64 {
    let t = 1.0 - k as f64 / steps as f64;
    1.0 - t * t
}

/// Intermediate model `λ_k θ` (offsets unchanged).
pub fn anneal_schedule(theta: &Dbm2Params, k: usize, steps: usize) -> Result<Dbm2Params> {
    if steps == 0 || k > steps {
        return Err(Error::InvalidParameter(format!(
            "annealing step {k} outside 0..={steps}"
        )));
    }
    Ok(theta.scaled(anneal_lambda(k, steps)))
}

/// Row-wise energy from the products a sweep already computed:
/// `y_w = (y-β) W` and `y_vt = (y-β) Vᵀ`.
fn energies_from_fields(
    m: &Dbm2Params,
    xs: ArrayView2<'_, f64>,
    ys: ArrayView2<'_, f64>,
    zs: ArrayView2<'_, f64>,
    y_w: &Array2<f64>,
    y_vt: &Array2<f64>,
) -> Array1<f64> {
    let xc = &xs - m.alpha();
    let yc = &ys - m.beta();
    let zc = &zs - m.gamma();
    let mut out = Array1::zeros(xs.nrows());
    Zip::from(&mut out)
        .and(xc.rows())
        .and(yc.rows())
        .and(zc.rows())
        .and(y_w.rows())
        .and(y_vt.rows())
        .for_each(|e, xc, yc, zc, yw, yvt| {
            *e = -yw.dot(&xc) - yvt.dot(&zc) - xc.dot(m.a()) - yc.dot(m.b()) - zc.dot(m.c());
        });
    out
}

fn check_weights(weights: &Array1<f64>, what: &str) -> Result<()> {
    if weights.iter().all(|w| w.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{what} AIS log weights")))
    }
}

/// Free runs, one per generator in `rngs`.
fn free_batch(m: &Dbm2Params, steps: usize, rngs: &mut [Rng]) -> Result<Array1<f64>> {
    let n = rngs.len();
    let mut streams = Streams::PerRow(rngs);
    let mut p = ParticleSet::uniform_with(m.sizes(), n, &mut streams);
    let mut energy = m.energies(p.xs.view(), p.ys.view(), p.zs.view());
    let mut log_w = Array1::zeros(n);
    for k in 1..=steps {
        let dl = anneal_lambda(k, steps) - anneal_lambda(k - 1, steps);
        log_w.scaled_add(-dl, &energy);
        if k < steps {
            let f = free_sweep_scaled(m, &mut p, anneal_lambda(k, steps), &mut streams);
            energy = energies_from_fields(m, p.xs.view(), p.ys.view(), p.zs.view(), &f.y_w, &f.y_vt);
        }
    }
    check_weights(&log_w, "free")?;
    Ok(log_w)
}

/// Runs with the visible layer clamped to the rows of `xs`, one per
/// generator in `rngs`.
fn clamped_batch(m: &Dbm2Params, xs: ArrayView2<'_, f64>, steps: usize, rngs: &mut [Rng]) -> Result<Array1<f64>> {
    let n = xs.nrows();
    let s = m.sizes();
    let mut streams = Streams::PerRow(rngs);
    let mut ys = sample_probabilities(n, &Array1::from_elem(s.hidden1, 0.5), &mut streams);
    let mut zs = sample_probabilities(n, &Array1::from_elem(s.hidden2, 0.5), &mut streams);
    let x_wt = visible_field(m, xs);
    let mut energy = m.energies(xs, ys.view(), zs.view());
    let mut log_w = Array1::zeros(n);
    for k in 1..=steps {
        let dl = anneal_lambda(k, steps) - anneal_lambda(k - 1, steps);
        log_w.scaled_add(-dl, &energy);
        if k < steps {
            let y_vt = clamped_sweep_scaled(m, &x_wt, &mut ys, &mut zs, anneal_lambda(k, steps), &mut streams);
            // (y-β)ᵀ W (x-α) = rowsum((y-β) ∘ x_wt)
            let yc = &ys - m.beta();
            let zc = &zs - m.gamma();
            let xc = &xs - m.alpha();
            Zip::from(&mut energy)
                .and(xc.rows())
                .and(yc.rows())
                .and(zc.rows())
                .and(x_wt.rows())
                .and(y_vt.rows())
                .for_each(|e, xc, yc, zc, xwt, yvt| {
                    *e = -yc.dot(&xwt) - yvt.dot(&zc) - xc.dot(m.a()) - yc.dot(m.b()) - zc.dot(m.c());
                });
        }
    }
    check_weights(&log_w, "clamped")?;
    Ok(log_w)
}

fn check_model(m: &Dbm2Params) -> Result<()> {
    if m.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite("model parameters".into()))
    }
}

/// One free run driven by `rng`.
pub fn ais_free_run(theta: &Dbm2Params, cfg: &AisConfig, rng: &mut Rng) -> Result<f64> {
    cfg.validate()?;
    check_model(theta)?;
    let out = free_batch(theta, cfg.k, std::slice::from_mut(rng))?;
    Ok(out[0])
}

/// One run with the visible layer clamped to `x`, driven by `rng`.
pub fn ais_clamped_run(theta: &Dbm2Params, x: &BinaryState, cfg: &AisConfig, rng: &mut Rng) -> Result<f64> {
    cfg.validate()?;
    check_model(theta)?;
    if x.len() != theta.sizes().visible {
        return Err(Error::Dimension {
            what: "visible state",
            expected: theta.sizes().visible,
            got: x.len(),
        });
    }
    let xs = x.view().insert_axis(Axis(0));
    let out = clamped_batch(theta, xs, cfg.k, std::slice::from_mut(rng))?;
    Ok(out[0])
}

/// Log weights of `n_runs` free runs using streams `first_stream..`.
pub fn ais_free_runs(
    theta: &Dbm2Params,
    n_runs: usize,
    steps: usize,
    seed: u64,
    first_stream: u64,
    batch_size: usize,
) -> Result<Vec<f64>> {
    check_model(theta)?;
    let mut rngs: Vec<Rng> = (0..n_runs as u64).map(|i| stream_rng(seed, first_stream + i)).collect();
    let batches: Vec<Array1<f64>> = rngs
        .par_chunks_mut(batch_size.max(1))
        .map(|chunk| free_batch(theta, steps, chunk))
        .collect::<Result<_>>()?;
    Ok(batches.into_iter().flatten().collect())
}

/// Log weights of clamped runs: row `i` of `xs` is repeated `runs_per_point`
/// times, and run `r` of point `p` uses stream `first_stream + p *
/// runs_per_point + r`. Output is indexed the same way.
pub fn ais_clamped_runs(
    theta: &Dbm2Params,
    xs: ArrayView2<'_, f64>,
    runs_per_point: usize,
    steps: usize,
    seed: u64,
    first_stream: u64,
    batch_size: usize,
) -> Result<Vec<f64>> {
    check_model(theta)?;
    let s = theta.sizes();
    if xs.ncols() != s.visible {
        return Err(Error::Dimension {
            what: "test data columns",
            expected: s.visible,
            got: xs.ncols(),
        });
    }
    check_binary_matrix(xs)?;
    let total = xs.nrows() * runs_per_point;
    let rows: Vec<usize> = (0..total).map(|i| i / runs_per_point).collect();
    let mut rngs: Vec<Rng> = (0..total as u64).map(|i| stream_rng(seed, first_stream + i)).collect();
    let batch_size = batch_size.max(1);
    let batches: Vec<Array1<f64>> = rngs
        .par_chunks_mut(batch_size)
        .zip(rows.par_chunks(batch_size))
        .map(|(chunk, idx)| {
            let x = xs.select(Axis(0), idx);
            clamped_batch(theta, x.view(), steps, chunk)
        })
        .collect::<Result<_>>()?;
    Ok(batches.into_iter().flatten().collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AisResult {
    pub log_weights_free: Vec<f64>,
    /// One list of clamped log weights per test point.
    pub log_weights_clamped: Vec<Vec<f64>>,
    /// `log ⟨ω⟩`, the estimate of `log Z(θ)/Z(0)`.
    pub log_z_ratio_estimate: f64,
    /// `log ⟨ν(x)⟩` per point, the estimate of `log Ψ(θ,x)/Ψ(0,x)`.
    pub per_point_log_psi_ratio: Vec<f64>,
    pub loglik_estimate: f64,
    pub visible_units: usize,
    pub k: usize,
    pub seed: u64,
}

impl AisResult {
    pub fn from_weights(
        log_weights_free: Vec<f64>,
        log_weights_clamped: Vec<Vec<f64>>,
        visible_units: usize,
        k: usize,
        seed: u64,
    ) -> Result<Self> {
        if log_weights_free.is_empty() {
            return Err(Error::Empty("free AIS runs"));
        }
        if log_weights_clamped.is_empty() || log_weights_clamped.iter().any(Vec::is_empty) {
            return Err(Error::Empty("clamped AIS runs"));
        }
        let log_z_ratio_estimate = log_mean_exp(&log_weights_free);
        let per_point_log_psi_ratio: Vec<f64> = log_weights_clamped.iter().map(|w| log_mean_exp(w)).collect();
        let loglik_estimate =
            mean(&per_point_log_psi_ratio) - log_z_ratio_estimate - visible_units as f64 * std::f64::consts::LN_2;
        if !loglik_estimate.is_finite() {
            return Err(Error::NonFinite("log-likelihood estimate".into()));
        }
        Ok(Self {
            log_weights_free,
            log_weights_clamped,
            log_z_ratio_estimate,
            per_point_log_psi_ratio,
            loglik_estimate,
            visible_units,
            k,
            seed,
        })
    }

    /// Rebuilds the estimate from the stored weights alone.
    pub fn recompute(&self) -> Result<Self> {
        Self::from_weights(
            self.log_weights_free.clone(),
            self.log_weights_clamped.clone(),
            self.visible_units,
            self.k,
            self.seed,
        )
    }

    /// Per-run rows `(run_id, kind, point_id, log_weight)`; free runs have
    /// no point id.
    pub fn rows(&self) -> Vec<(usize, &'static str, Option<usize>, f64)> {
        let mut out: Vec<_> = self
            .log_weights_free
            .iter()
            .enumerate()
            .map(|(i, &w)| (i, "free", None, w))
            .collect();
        for (p, ws) in self.log_weights_clamped.iter().enumerate() {
            for (r, &w) in ws.iter().enumerate() {
                out.push((r, "clamped", Some(p), w));
            }
        }
        out
    }
}

/// Full estimate on the rows of `test_data`.
pub fn estimate_loglik(theta: &Dbm2Params, test_data: ArrayView2<'_, f64>, cfg: &AisConfig) -> Result<AisResult> {
    cfg.validate()?;
    if test_data.nrows() == 0 {
        return Err(Error::Empty("test data"));
    }
    let free = ais_free_runs(theta, cfg.n_free_runs, cfg.k, cfg.seed, 0, cfg.batch_size)?;
    let clamped = ais_clamped_runs(
        theta,
        test_data,
        cfg.n_clamped_runs,
        cfg.k,
        cfg.seed,
        cfg.n_free_runs as u64,
        cfg.batch_size,
    )?;
    let per_point = clamped.chunks(cfg.n_clamped_runs).map(<[f64]>::to_vec).collect();
    AisResult::from_weights(free, per_point, theta.sizes().visible, cfg.k, cfg.seed)
}
