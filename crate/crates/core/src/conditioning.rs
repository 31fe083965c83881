//! Conditioning of the log-likelihood Hessian of a flat Boltzmann machine.
//!
//! Without hidden units the data-dependent part of the Hessian vanishes and
//! the product with a symmetric direction `V` has the closed form
//!
//! ```text
//! H V = ⟨ξξᵀ⟩ ⟨D⟩ - ⟨ξξᵀ D⟩,    D = ½ ξᵀ V ξ,    ξ = x - β
//! ```
//!
//! with expectations under the model. Stacking `vec(H Vᵢ)` for a random
//! basis `V₁..Vₙ` gives a low-rank projection of `H` whose extreme singular
//! values estimate the condition number.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, Axis};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::exact::{exact_enumerate, state_from_index};
use crate::math::sigm;
use crate::model::FlatBmParams;
use crate::sampler::{flat_gibbs_sweep, stream_rng, Rng};

/// Default number of random directions.
pub const DEFAULT_DIRECTIONS: usize = 20;
/// Default Monte Carlo sample count.
pub const DEFAULT_MC_SAMPLES: usize = 100_000;
/// Gibbs burn-in used when the couplings are non-zero.
pub const GIBBS_BURN_IN: usize = 1000;
/// Smallest singular value treated as non-zero.
pub const SINGULAR_FLOOR: f64 = 1e-12;

fn is_symmetric_hollow(v: &Array2<f64>) -> bool {
    let n = v.nrows();
    if v.ncols() != n {
        return false;
    }
    let tol = 1e-12 * v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    (0..n).all(|i| v[[i, i]].abs() <= tol && ((i + 1)..n).all(|j| (v[[i, j]] - v[[j, i]]).abs() <= tol))
}

/// Distribution of the entries of random directions (before mirroring and
/// normalization).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DirectionKind {
    /// Standard normal entries.
    #[default]
    Gaussian,
    /// Uniform entries on `[0, 1)`.
    NonNegative,
}

/// Symmetric, zero-diagonal, unit-Frobenius-norm directions that are
/// linearly independent.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionBasis {
    directions: Vec<Array2<f64>>,
}

impl DirectionBasis {
    /// Normalizes each direction and checks the set for independence.
    pub fn new(directions: Vec<Array2<f64>>) -> Result<Self> {
        if directions.len() < 2 {
            return Err(Error::InvalidParameter("need at least two directions".into()));
        }
        let m = directions[0].nrows();
        let mut normalized = Vec::with_capacity(directions.len());
        for d in directions {
            if d.nrows() != m {
                return Err(Error::Dimension {
                    what: "direction size",
                    expected: m,
                    got: d.nrows(),
                });
            }
            if !is_symmetric_hollow(&d) {
                return Err(Error::AsymmetricDirection);
            }
            let norm = d.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !(norm > 0.0 && norm.is_finite()) {
                return Err(Error::InvalidParameter("direction has zero or non-finite norm".into()));
            }
            normalized.push(d / norm);
        }
        let stacked = stack_columns(&normalized);
        let sv = sorted_singular_values(stacked);
        let (hi, lo) = (sv[0], *sv.last().expect("non-empty"));
        if lo <= 1e-8 * hi {
            return Err(Error::DependentDirections(lo));
        }
        Ok(Self { directions: normalized })
    }

    /// `n` random directions on `units` units: entries of the strict upper
    /// triangle drawn from `kind`, mirrored, then normalized.
    pub fn random(units: usize, n: usize, kind: DirectionKind, rng: &mut Rng) -> Result<Self> {
        let dirs = (0..n)
            .map(|_| {
                let mut d = Array2::zeros((units, units));
                for i in 0..units {
                    for j in (i + 1)..units {
                        let g = match kind {
                            DirectionKind::Gaussian => StandardNormal.sample(rng),
                            DirectionKind::NonNegative => rng.random::<f64>(),
                        };
                        d[[i, j]] = g;
                        d[[j, i]] = g;
                    }
                }
                d
            })
            .collect();
        Self::new(dirs)
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    pub fn units(&self) -> usize {
        self.directions[0].nrows()
    }

    pub fn directions(&self) -> &[Array2<f64>] {
        &self.directions
    }
}

/// Where model expectations come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExpectationSource {
    /// Exhaustive enumeration (small models only).
    Exact,
    /// `n_samples` model samples: independent Bernoulli draws when the
    /// couplings vanish, otherwise one Gibbs chain after
    /// [`GIBBS_BURN_IN`] sweeps.
    MonteCarlo { n_samples: usize, seed: u64 },
}

/// Centered states with probability weights, reused across directions.
#[derive(Debug, Clone)]
pub struct ModelSamples {
    xi: Array2<f64>,
    weights: Array1<f64>,
    /// `⟨ξξᵀ⟩`, with the diagonal zeroed.
    second: Array2<f64>,
}

impl ModelSamples {
    pub fn draw(m: &FlatBmParams, source: ExpectationSource) -> Result<Self> {
        let units = m.units();
        let (states, weights) = match source {
            ExpectationSource::Exact => {
                let probs = exact_enumerate(m)?.probs();
                let n = probs.len();
                let mut states = Array2::zeros((n, units));
                for (i, mut row) in states.rows_mut().into_iter().enumerate() {
                    row.assign(&state_from_index(i, units));
                }
                (states, Array1::from(probs))
            }
            ExpectationSource::MonteCarlo { n_samples, seed } => {
                if n_samples == 0 {
                    return Err(Error::InvalidParameter("need at least one sample".into()));
                }
                let mut rng = stream_rng(seed, 1);
                let states = if m.w().iter().all(|&w| w == 0.0) {
                    let p = m.b().mapv(sigm);
                    Array2::from_shape_fn((n_samples, units), |(_, u)| {
                        f64::from(u8::from(rng.random::<f64>() < p[u]))
                    })
                } else {
                    let mut x = Array1::zeros(units);
                    for _ in 0..GIBBS_BURN_IN {
                        flat_gibbs_sweep(m, &mut x, &mut rng)?;
                    }
                    let mut states = Array2::zeros((n_samples, units));
                    for mut row in states.rows_mut() {
                        flat_gibbs_sweep(m, &mut x, &mut rng)?;
                        row.assign(&x);
                    }
                    states
                };
                (states, Array1::from_elem(n_samples, 1.0 / n_samples as f64))
            }
        };
        let xi = &states - m.beta();
        let mut second = weighted_gram(&xi, &weights);
        second.diag_mut().fill(0.0);
        Ok(Self { xi, weights, second })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// `H V` for a symmetric, zero-diagonal `v`; the output diagonal is zero.
    pub fn hessian_vector_product(&self, v: &Array2<f64>) -> Result<Array2<f64>> {
        let units = self.xi.ncols();
        if v.nrows() != units || v.ncols() != units {
            return Err(Error::Dimension {
                what: "direction size",
                expected: units,
                got: v.nrows(),
            });
        }
        if !is_symmetric_hollow(v) {
            return Err(Error::AsymmetricDirection);
        }
        // D = ½ ξᵀVξ per state
        let d: Array1<f64> = (self.xi.dot(v) * &self.xi).sum_axis(Axis(1)) * 0.5;
        let mean_d = d.dot(&self.weights);
        let mut out = &self.second * mean_d - weighted_gram(&self.xi, &(&self.weights * &d));
        out.diag_mut().fill(0.0);
        Ok(out)
    }
}

/// `Σ_s w_s ξ_s ξ_sᵀ`.
fn weighted_gram(xi: &Array2<f64>, w: &Array1<f64>) -> Array2<f64> {
    let scaled = xi * &w.view().insert_axis(Axis(1));
    scaled.t().dot(xi)
}

pub fn hessian_vector_product(m: &FlatBmParams, v: &Array2<f64>, source: ExpectationSource) -> Result<Array2<f64>> {
    ModelSamples::draw(m, source)?.hessian_vector_product(v)
}

fn stack_columns(mats: &[Array2<f64>]) -> DMatrix<f64> {
    let rows = mats[0].len();
    // nalgebra fills column-major, so each matrix becomes one column
    DMatrix::from_iterator(rows, mats.len(), mats.iter().flat_map(|m| m.iter().copied()))
}

fn sorted_singular_values(m: DMatrix<f64>) -> Vec<f64> {
    let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// Column `i` is `vec(H Vᵢ)` (row-major flattening, `M² × n`).
pub fn projected_hessian(samples: &ModelSamples, basis: &DirectionBasis) -> Result<Array2<f64>> {
    let units = basis.units();
    let mut out = Array2::zeros((units * units, basis.len()));
    for (mut col, v) in out.columns_mut().into_iter().zip(basis.directions()) {
        let hv = samples.hessian_vector_product(v)?;
        col.assign(&Array1::from_iter(hv.iter().copied()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningResult {
    /// Singular values of the projected Hessian, descending.
    pub singular_values: Vec<f64>,
    /// Largest over smallest singular value; infinite when the smallest is
    /// below [`SINGULAR_FLOOR`].
    pub condition_number: f64,
    /// Monte Carlo sample count, or `None` for exact expectations.
    pub n_mc_samples: Option<usize>,
    pub seed: u64,
}

impl ConditioningResult {
    pub fn is_singular(&self) -> bool {
        self.condition_number.is_infinite()
    }
}

pub fn condition_number_with(
    m: &FlatBmParams,
    basis: &DirectionBasis,
    source: ExpectationSource,
) -> Result<ConditioningResult> {
    if basis.units() != m.units() {
        return Err(Error::Dimension {
            what: "direction size",
            expected: m.units(),
            got: basis.units(),
        });
    }
    let samples = ModelSamples::draw(m, source)?;
    let ph = projected_hessian(&samples, basis)?;
    let dm = DMatrix::from_fn(ph.nrows(), ph.ncols(), |r, c| ph[[r, c]]);
    let singular_values = sorted_singular_values(dm);
    let (hi, lo) = (singular_values[0], *singular_values.last().expect("n >= 2"));
    let condition_number = if lo < SINGULAR_FLOOR { f64::INFINITY } else { hi / lo };
    let (n_mc_samples, seed) = match source {
        ExpectationSource::Exact => (None, 0),
        ExpectationSource::MonteCarlo { n_samples, seed } => (Some(n_samples), seed),
    };
    Ok(ConditioningResult {
        singular_values,
        condition_number,
        n_mc_samples,
        seed,
    })
}

/// Condition-number estimate with `n_directions` Gaussian directions (drawn
/// from stream 0 of `seed`) and `n_mc_samples` model samples (stream 1).
pub fn condition_number(
    m: &FlatBmParams,
    n_directions: usize,
    n_mc_samples: usize,
    seed: u64,
) -> Result<ConditioningResult> {
    condition_number_of_kind(m, n_directions, n_mc_samples, seed, DirectionKind::Gaussian)
}

pub fn condition_number_of_kind(
    m: &FlatBmParams,
    n_directions: usize,
    n_mc_samples: usize,
    seed: u64,
    kind: DirectionKind,
) -> Result<ConditioningResult> {
    let basis = DirectionBasis::random(m.units(), n_directions, kind, &mut stream_rng(seed, 0))?;
    condition_number_with(
        m,
        &basis,
        ExpectationSource::MonteCarlo {
            n_samples: n_mc_samples,
            seed,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::exact_loglik_gradient;
    use crate::sampler::seeded_rng;

    fn rel_err(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        let diff = (a - b).iter().map(|x| x * x).sum::<f64>().sqrt();
        let scale = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        diff / scale
    }

    fn random_direction(units: usize, rng: &mut Rng) -> Array2<f64> {
        DirectionBasis::random(units, 2, DirectionKind::Gaussian, rng)
            .unwrap()
            .directions()[0]
            .clone()
    }

    #[test]
    fn zero_direction_gives_zero_product() {
        let mut rng = seeded_rng(1);
        let m = FlatBmParams::random(5, 0.5, 0.5, &mut rng);
        let hv = hessian_vector_product(&m, &Array2::zeros((5, 5)), ExpectationSource::Exact).unwrap();
        assert!(hv.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn asymmetric_direction_is_rejected() {
        let m = FlatBmParams::uncoupled(3, 0.0, 0.5).unwrap();
        let mut v = Array2::zeros((3, 3));
        v[[0, 1]] = 1.0;
        assert!(matches!(
            hessian_vector_product(&m, &v, ExpectationSource::Exact),
            Err(Error::AsymmetricDirection)
        ));
        v[[1, 0]] = 1.0;
        v[[2, 2]] = 1.0;
        assert!(matches!(
            hessian_vector_product(&m, &v, ExpectationSource::Exact),
            Err(Error::AsymmetricDirection)
        ));
    }

    #[test]
    fn exact_product_matches_finite_difference_of_gradient() {
        let mut rng = seeded_rng(2);
        for units in [4, 7, 10] {
            let m = FlatBmParams::random(units, 0.6, 0.6, &mut rng);
            let v = random_direction(units, &mut rng);
            let data = Array2::from_shape_fn((8, units), |_| f64::from(u8::from(rng.random::<bool>())));
            let h = 1e-4;
            let plus = exact_loglik_gradient(&m.with_weights_shifted(&v, h).unwrap(), data.view()).unwrap();
            let minus = exact_loglik_gradient(&m.with_weights_shifted(&v, -h).unwrap(), data.view()).unwrap();
            let fd = (plus.w - minus.w) / (2.0 * h);
            let hv = hessian_vector_product(&m, &v, ExpectationSource::Exact).unwrap();
            assert!(rel_err(&hv, &fd) < 1e-3, "M={units}: {}", rel_err(&hv, &fd));
        }
    }

    #[test]
    fn exact_product_is_linear_and_symmetric() {
        let mut rng = seeded_rng(3);
        let m = FlatBmParams::random(6, 0.7, 0.5, &mut rng);
        let s = ModelSamples::draw(&m, ExpectationSource::Exact).unwrap();
        let (v1, v2) = (random_direction(6, &mut rng), random_direction(6, &mut rng));
        let combo = &v1 * 2.5 - &v2 * 0.75;
        let lhs = s.hessian_vector_product(&combo).unwrap();
        let rhs = s.hessian_vector_product(&v1).unwrap() * 2.5 - s.hessian_vector_product(&v2).unwrap() * 0.75;
        assert!((&lhs - &rhs).iter().all(|d| d.abs() < 1e-10));
        assert!((&lhs - &lhs.t()).iter().all(|d| d.abs() < 1e-10));
    }

    #[test]
    fn monte_carlo_matches_independent_moment_formula() {
        // W = 0, b = 0, β = ½: ξ_i = ±½ independently, so ⟨ξξᵀ⟩ vanishes off
        // the diagonal and ⟨ξ_iξ_j D⟩ = V_ij/16, giving H V = -V/16
        let units = 6;
        let m = FlatBmParams::uncoupled(units, 0.0, 0.5).unwrap();
        let v = random_direction(units, &mut seeded_rng(4));
        let n = 100_000;
        let samples = ModelSamples::draw(&m, ExpectationSource::MonteCarlo { n_samples: n, seed: 5 }).unwrap();
        let hv = samples.hessian_vector_product(&v).unwrap();
        let expected = &v * (-1.0 / 16.0);
        // per-entry standard error: ξ_iξ_j D has variance (Σ_{k<l} V_kl²)/256 = 1/512
        let se = (1.0 / 512.0 / n as f64).sqrt();
        let mut sum_z2 = 0.0;
        let mut count = 0.0;
        for i in 0..units {
            for j in (i + 1)..units {
                let z = (hv[[i, j]] - expected[[i, j]]) / se;
                assert!(z.abs() < 3.0, "entry ({i},{j}) off by {z} standard errors");
                sum_z2 += z * z;
                count += 1.0;
            }
        }
        assert!(sum_z2 / count < 3.0);
        let exact = hessian_vector_product(&m, &v, ExpectationSource::Exact).unwrap();
        assert!((&exact - &expected).iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn gibbs_source_tracks_exact_source() {
        let mut rng = seeded_rng(6);
        let m = FlatBmParams::random(5, 0.5, 0.5, &mut rng);
        let v = random_direction(5, &mut rng);
        let exact = hessian_vector_product(&m, &v, ExpectationSource::Exact).unwrap();
        let mc = hessian_vector_product(
            &m,
            &v,
            ExpectationSource::MonteCarlo {
                n_samples: 200_000,
                seed: 7,
            },
        )
        .unwrap();
        assert!(rel_err(&mc, &exact) < 0.1, "{}", rel_err(&mc, &exact));
    }

    #[test]
    fn duplicate_direction_is_rejected() {
        let v = random_direction(4, &mut seeded_rng(8));
        assert!(matches!(
            DirectionBasis::new(vec![v.clone(), v.clone() * 3.0]),
            Err(Error::DependentDirections(_))
        ));
    }

    #[test]
    fn random_basis_is_normalized_symmetric_and_hollow() {
        for kind in [DirectionKind::Gaussian, DirectionKind::NonNegative] {
            let b = DirectionBasis::random(7, 5, kind, &mut seeded_rng(9)).unwrap();
            for d in b.directions() {
                assert!((d.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
                assert!(is_symmetric_hollow(d));
                assert_eq!(d.diag().sum(), 0.0);
            }
        }
    }

    #[test]
    fn projected_columns_are_individual_products() {
        let mut rng = seeded_rng(10);
        let m = FlatBmParams::random(5, 0.5, 0.5, &mut rng);
        let basis = DirectionBasis::random(5, 3, DirectionKind::Gaussian, &mut rng).unwrap();
        let s = ModelSamples::draw(&m, ExpectationSource::Exact).unwrap();
        let ph = projected_hessian(&s, &basis).unwrap();
        assert_eq!(ph.dim(), (25, 3));
        for (c, v) in basis.directions().iter().enumerate() {
            let hv = s.hessian_vector_product(v).unwrap();
            assert_eq!(ph.column(c).to_vec(), hv.iter().copied().collect::<Vec<_>>());
        }
    }

    #[test]
    fn condition_number_is_scale_free_and_at_least_one() {
        let mut rng = seeded_rng(11);
        let m = FlatBmParams::random(6, 0.5, 0.5, &mut rng);
        let basis = DirectionBasis::random(6, 4, DirectionKind::Gaussian, &mut rng).unwrap();
        let r = condition_number_with(&m, &basis, ExpectationSource::Exact).unwrap();
        assert!(r.condition_number >= 1.0);
        assert!(r.singular_values.windows(2).all(|w| w[0] >= w[1]));
        assert!(r.singular_values.iter().all(|&s| s >= 0.0));
        // same directions scaled by a common factor: singular values scale,
        // their ratio does not
        let s = ModelSamples::draw(&m, ExpectationSource::Exact).unwrap();
        let svs = |scale: f64| {
            let cols: Vec<Array2<f64>> = basis
                .directions()
                .iter()
                .map(|v| s.hessian_vector_product(&(v * scale)).unwrap())
                .collect();
            sorted_singular_values(stack_columns(&cols))
        };
        let (a, b) = (svs(1.0), svs(7.0));
        assert!(((a[0] / a[3]) - (b[0] / b[3])).abs() < 1e-8 * (a[0] / a[3]));
        assert!((a[0] / a[3] - r.condition_number).abs() < 1e-8 * r.condition_number);
    }

    #[test]
    fn degenerate_model_reports_infinite_condition() {
        // β at a pixel that never fires: every ξ is constant, the Hessian is 0
        let m = FlatBmParams::uncoupled(4, -1e6, 0.0).unwrap();
        let r = condition_number(&m, 3, 1000, 12).unwrap();
        assert!(r.is_singular());
    }
}
