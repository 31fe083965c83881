//! Brute-force enumeration of small models. These are the reference oracles
//! for the gradient, Hessian, sampler and AIS code paths.
//!
//! States are indexed by integers: unit `u` of state `i` is bit `u` of `i`.
//! For a DBM the visible units occupy the low bits, followed by layer 1 and
//! then layer 2.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::math::log_sum_exp;
use crate::model::{check_binary_matrix, Dbm2Params, FlatBmParams};

pub const MAX_ENUMERATION_UNITS: usize = 20;

/// A model whose joint states can be listed exhaustively.
pub trait Enumerable {
    fn n_units(&self) -> usize;
    fn state_energy(&self, state: ArrayView1<'_, f64>) -> f64;
}

impl Enumerable for FlatBmParams {
    fn n_units(&self) -> usize {
        self.units()
    }

    fn state_energy(&self, state: ArrayView1<'_, f64>) -> f64 {
        self.energy_unchecked(state)
    }
}

impl Enumerable for Dbm2Params {
    fn n_units(&self) -> usize {
        self.sizes().total()
    }

    fn state_energy(&self, state: ArrayView1<'_, f64>) -> f64 {
        let s = self.sizes();
        let x = state.slice(ndarray::s![..s.visible]);
        let y = state.slice(ndarray::s![s.visible..s.visible + s.hidden1]);
        let z = state.slice(ndarray::s![s.visible + s.hidden1..]);
        self.energy_unchecked(x, y, z)
    }
}

pub fn state_from_index(index: usize, units: usize) -> Array1<f64> {
    (0..units).map(|u| ((index >> u) & 1) as f64).collect()
}

pub fn index_of_state(state: ArrayView1<'_, f64>) -> usize {
    state
        .iter()
        .enumerate()
        .fold(0, |acc, (u, &v)| acc | (usize::from(v != 0.0) << u))
}

/// Exhaustive Gibbs distribution of a small model.
#[derive(Debug, Clone)]
pub struct ExactEnumeration {
    units: usize,
    log_probs: Vec<f64>,
    log_z: f64,
}

impl ExactEnumeration {
    pub fn units(&self) -> usize {
        self.units
    }

    pub fn log_z(&self) -> f64 {
        self.log_z
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    pub fn probs(&self) -> Vec<f64> {
        self.log_probs.iter().map(|lp| lp.exp()).collect()
    }

    /// Distribution of the `n_low` lowest units (e.g. the visible layer of a
    /// DBM), indexed by their sub-state.
    pub fn marginal_low(&self, n_low: usize) -> Vec<f64> {
        let mask = (1usize << n_low) - 1;
        let mut out = vec![0.0; 1 << n_low];
        for (i, lp) in self.log_probs.iter().enumerate() {
            out[i & mask] += lp.exp();
        }
        out
    }

    /// Distribution of the remaining high units given that the `n_low`
    /// lowest units equal `low_index`.
    pub fn conditional_high(&self, n_low: usize, low_index: usize) -> Vec<f64> {
        let n_high = self.units - n_low;
        let logs: Vec<f64> = (0..1usize << n_high)
            .map(|h| self.log_probs[low_index | (h << n_low)])
            .collect();
        let norm = log_sum_exp(&logs);
        logs.iter().map(|l| (l - norm).exp()).collect()
    }

    /// Expected value of `f(state)`.
    pub fn expectation<F>(&self, mut f: F) -> f64
    where
        F: FnMut(ArrayView1<'_, f64>) -> f64,
    {
        self.log_probs
            .iter()
            .enumerate()
            .map(|(i, lp)| lp.exp() * f(state_from_index(i, self.units).view()))
            .sum()
    }
}

fn check_enumerable(units: usize) -> Result<()> {
    if units > MAX_ENUMERATION_UNITS {
        return Err(Error::TooManyUnits {
            units,
            max: MAX_ENUMERATION_UNITS,
        });
    }
    Ok(())
}

pub fn exact_enumerate<M: Enumerable>(model: &M) -> Result<ExactEnumeration> {
    let units = model.n_units();
    check_enumerable(units)?;
    let neg_energies: Vec<f64> = (0..1usize << units)
        .map(|i| -model.state_energy(state_from_index(i, units).view()))
        .collect();
    let log_z = log_sum_exp(&neg_energies);
    if !log_z.is_finite() {
        return Err(Error::NonFinite("log partition function".into()));
    }
    let log_probs = neg_energies.into_iter().map(|e| e - log_z).collect();
    Ok(ExactEnumeration {
        units,
        log_probs,
        log_z,
    })
}

/// Log-likelihood gradient of a flat machine with respect to the
/// (symmetric, zero-diagonal) couplings and the biases.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatGradient {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

/// `⟨ξξᵀ⟩` (zero diagonal) and `⟨ξ⟩` under a weighted set of states.
fn centered_moments(
    m: &FlatBmParams,
    states: ArrayView2<'_, f64>,
    weights: ArrayView1<'_, f64>,
) -> (Array2<f64>, Array1<f64>) {
    let xi = &states - m.beta();
    let weighted = &xi * &weights.insert_axis(Axis(1));
    let mut second = weighted.t().dot(&xi);
    second.diag_mut().fill(0.0);
    let first = weighted.sum_axis(Axis(0));
    (second, first)
}

fn model_moments(m: &FlatBmParams, exact: &ExactEnumeration) -> (Array2<f64>, Array1<f64>) {
    let n = m.units();
    let states = Array2::from_shape_fn((1 << n, n), |(i, u)| ((i >> u) & 1) as f64);
    let probs = Array1::from(exact.probs());
    centered_moments(m, states.view(), probs.view())
}

/// Exact gradient of the mean data log-likelihood. Data rows are states.
pub fn exact_loglik_gradient(m: &FlatBmParams, data: ArrayView2<'_, f64>) -> Result<FlatGradient> {
    if data.nrows() == 0 {
        return Err(Error::Empty("data"));
    }
    let w = Array1::from_elem(data.nrows(), 1.0 / data.nrows() as f64);
    exact_loglik_gradient_weighted(m, data, w.view())
}

/// As [`exact_loglik_gradient`] with per-state weights summing to one.
pub fn exact_loglik_gradient_weighted(
    m: &FlatBmParams,
    states: ArrayView2<'_, f64>,
    weights: ArrayView1<'_, f64>,
) -> Result<FlatGradient> {
    if states.nrows() == 0 {
        return Err(Error::Empty("data"));
    }
    if states.ncols() != m.units() {
        return Err(Error::Dimension {
            what: "data columns",
            expected: m.units(),
            got: states.ncols(),
        });
    }
    if weights.len() != states.nrows() {
        return Err(Error::Dimension {
            what: "data weights",
            expected: states.nrows(),
            got: weights.len(),
        });
    }
    check_binary_matrix(states)?;
    let exact = exact_enumerate(m)?;
    let (data_second, data_first) = centered_moments(m, states, weights);
    let (model_second, model_first) = model_moments(m, &exact);
    Ok(FlatGradient {
        w: data_second - model_second,
        b: data_first - model_first,
    })
}

/// Mean log-likelihood of the data rows under a flat machine.
pub fn exact_log_likelihood(m: &FlatBmParams, data: ArrayView2<'_, f64>) -> Result<f64> {
    if data.nrows() == 0 {
        return Err(Error::Empty("data"));
    }
    check_enumerable(m.units())?;
    check_binary_matrix(data)?;
    let log_z = exact_enumerate(m)?.log_z();
    let total: f64 = data.rows().into_iter().map(|x| -m.energy_unchecked(x) - log_z).sum();
    Ok(total / data.nrows() as f64)
}

/// `log Ψ(θ, x) = log Σ_{y,z} exp(-E(x, y, z))` for a small DBM.
pub fn dbm_log_psi(m: &Dbm2Params, x: ArrayView1<'_, f64>) -> Result<f64> {
    let s = m.sizes();
    let n_hidden = s.hidden1 + s.hidden2;
    check_enumerable(s.total())?;
    let terms: Vec<f64> = (0..1usize << n_hidden)
        .map(|h| {
            let hs = state_from_index(h, n_hidden);
            let y = hs.slice(ndarray::s![..s.hidden1]);
            let z = hs.slice(ndarray::s![s.hidden1..]);
            -m.energy_unchecked(x, y, z)
        })
        .collect();
    Ok(log_sum_exp(&terms))
}

/// `log Z(θ) - log Z(0)`, where `Z(0) = 2^(Mx+My+Mz)`.
pub fn dbm_log_z_ratio(m: &Dbm2Params) -> Result<f64> {
    let total = m.sizes().total();
    Ok(exact_enumerate(m)?.log_z() - total as f64 * std::f64::consts::LN_2)
}

/// `log Ψ(θ, x) - log Ψ(0, x)`, where `Ψ(0, x) = 2^(My+Mz)`.
pub fn dbm_log_psi_ratio(m: &Dbm2Params, x: ArrayView1<'_, f64>) -> Result<f64> {
    let s = m.sizes();
    Ok(dbm_log_psi(m, x)? - (s.hidden1 + s.hidden2) as f64 * std::f64::consts::LN_2)
}

/// Mean exact `log p(x; θ)` over data rows.
pub fn dbm_average_log_likelihood(m: &Dbm2Params, data: ArrayView2<'_, f64>) -> Result<f64> {
    if data.nrows() == 0 {
        return Err(Error::Empty("data"));
    }
    check_binary_matrix(data)?;
    let log_z = exact_enumerate(m)?.log_z();
    let mut total = 0.0;
    for x in data.rows() {
        total += dbm_log_psi(m, x)? - log_z;
    }
    Ok(total / data.nrows() as f64)
}

/// Exact `E[y | x]` and `E[z | x]` for a small DBM.
pub fn dbm_hidden_conditional_means(m: &Dbm2Params, x: ArrayView1<'_, f64>) -> Result<(Array1<f64>, Array1<f64>)> {
    let s = m.sizes();
    let n_hidden = s.hidden1 + s.hidden2;
    check_enumerable(s.total())?;
    let states: Vec<Array1<f64>> = (0..1usize << n_hidden).map(|h| state_from_index(h, n_hidden)).collect();
    let logs: Vec<f64> = states
        .iter()
        .map(|hs| {
            -m.energy_unchecked(
                x,
                hs.slice(ndarray::s![..s.hidden1]),
                hs.slice(ndarray::s![s.hidden1..]),
            )
        })
        .collect();
    let norm = log_sum_exp(&logs);
    let mut mean = Array1::<f64>::zeros(n_hidden);
    for (hs, l) in states.iter().zip(&logs) {
        mean.scaled_add((l - norm).exp(), hs);
    }
    Ok((
        mean.slice(ndarray::s![..s.hidden1]).to_owned(),
        mean.slice(ndarray::s![s.hidden1..]).to_owned(),
    ))
}
