//! Gibbs samplers for flat and two-layer machines.
//!
//! Randomness comes from [`Rng`], a ChaCha8 stream cipher generator
//! (`rand_chacha::ChaCha8Rng`). Independent streams for parallel chains or
//! AIS runs are derived with [`stream_rng`]: stream `i` of master seed `s`
//! is `ChaCha8Rng::seed_from_u64(s + i)` (wrapping).

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::math::sigm;
use crate::model::{check_binary, check_binary_matrix, BinaryState, Dbm2Params, FlatBmParams, LayerSizes};

pub type Rng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn stream_rng(master_seed: u64, index: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(master_seed.wrapping_add(index))
}

/// Source of uniforms: one generator for the whole batch, or one per row.
pub(crate) enum Streams<'a> {
    Shared(&'a mut Rng),
    PerRow(&'a mut [Rng]),
}

impl Streams<'_> {
    #[inline]
    fn uniform(&mut self, row: usize) -> f64 {
        match self {
            Streams::Shared(rng) => rng.random::<f64>(),
            Streams::PerRow(rngs) => rngs[row].random::<f64>(),
        }
    }
}

/// Overwrites `out` with Bernoulli draws of `sigm(scale * field + scale * bias)`.
fn sample_layer(out: &mut Array2<f64>, field: &Array2<f64>, bias: &Array1<f64>, scale: f64, streams: &mut Streams<'_>) {
    for (r, (mut out_row, field_row)) in out.rows_mut().into_iter().zip(field.rows()).enumerate() {
        for ((o, &f), &b) in out_row.iter_mut().zip(field_row).zip(bias) {
            let p = sigm(scale * (f + b));
            *o = if streams.uniform(r) < p { 1.0 } else { 0.0 };
        }
    }
}

/// Bernoulli draws with per-column probabilities.
pub(crate) fn sample_probabilities(rows: usize, probs: &Array1<f64>, streams: &mut Streams<'_>) -> Array2<f64> {
    let mut out = Array2::zeros((rows, probs.len()));
    for (r, mut row) in out.rows_mut().into_iter().enumerate() {
        for (o, &p) in row.iter_mut().zip(probs) {
            *o = if streams.uniform(r) < p { 1.0 } else { 0.0 };
        }
    }
    out
}

/// Persistent chain states, one particle per row.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSet {
    pub(crate) xs: Array2<f64>,
    pub(crate) ys: Array2<f64>,
    pub(crate) zs: Array2<f64>,
}

impl ParticleSet {
    pub fn new(xs: Array2<f64>, ys: Array2<f64>, zs: Array2<f64>) -> Result<Self> {
        if ys.nrows() != xs.nrows() || zs.nrows() != xs.nrows() {
            return Err(Error::Dimension {
                what: "particle rows",
                expected: xs.nrows(),
                got: if ys.nrows() != xs.nrows() {
                    ys.nrows()
                } else {
                    zs.nrows()
                },
            });
        }
        check_binary_matrix(xs.view())?;
        check_binary_matrix(ys.view())?;
        check_binary_matrix(zs.view())?;
        Ok(Self { xs, ys, zs })
    }

    /// Particles drawn as Bernoulli samples of the model offsets.
    pub fn from_offsets(m: &Dbm2Params, n: usize, rng: &mut Rng) -> Self {
        let mut s = Streams::Shared(rng);
        Self {
            xs: sample_probabilities(n, m.alpha(), &mut s),
            ys: sample_probabilities(n, m.beta(), &mut s),
            zs: sample_probabilities(n, m.gamma(), &mut s),
        }
    }

    /// Uniformly random bits.
    pub fn uniform(sizes: LayerSizes, n: usize, rng: &mut Rng) -> Self {
        Self::uniform_with(sizes, n, &mut Streams::Shared(rng))
    }

    pub(crate) fn uniform_with(sizes: LayerSizes, n: usize, streams: &mut Streams<'_>) -> Self {
        Self {
            xs: sample_probabilities(n, &Array1::from_elem(sizes.visible, 0.5), streams),
            ys: sample_probabilities(n, &Array1::from_elem(sizes.hidden1, 0.5), streams),
            zs: sample_probabilities(n, &Array1::from_elem(sizes.hidden2, 0.5), streams),
        }
    }

    pub fn len(&self) -> usize {
        self.xs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.nrows() == 0
    }

    pub fn xs(&self) -> &Array2<f64> {
        &self.xs
    }
    pub fn ys(&self) -> &Array2<f64> {
        &self.ys
    }
    pub fn zs(&self) -> &Array2<f64> {
        &self.zs
    }

    fn check_against(&self, m: &Dbm2Params) -> Result<()> {
        let s = m.sizes();
        for (what, expected, got) in [
            ("visible particle width", s.visible, self.xs.ncols()),
            ("hidden1 particle width", s.hidden1, self.ys.ncols()),
            ("hidden2 particle width", s.hidden2, self.zs.ncols()),
        ] {
            if expected != got {
                return Err(Error::Dimension { what, expected, got });
            }
        }
        Ok(())
    }
}

/// Products that a sweep computes anyway and that make the energy of the
/// post-sweep state cheap: `(y-β) W` and `(y-β) Vᵀ`, both unscaled.
pub(crate) struct SweepFields {
    pub(crate) y_w: Array2<f64>,
    pub(crate) y_vt: Array2<f64>,
}

/// One free alternation at parameters `scale * θ`: layer 1 first, then the
/// visible layer and layer 2 from the fresh layer-1 states.
pub(crate) fn free_sweep_scaled(
    m: &Dbm2Params,
    p: &mut ParticleSet,
    scale: f64,
    streams: &mut Streams<'_>,
) -> SweepFields {
    let xc = &p.xs - m.alpha();
    let zc = &p.zs - m.gamma();
    let mut y_field = xc.dot(&m.w().t());
    ndarray::linalg::general_mat_mul(1.0, &zc, m.v(), 1.0, &mut y_field);
    sample_layer(&mut p.ys, &y_field, m.b(), scale, streams);

    let yc = &p.ys - m.beta();
    let y_w = yc.dot(m.w());
    sample_layer(&mut p.xs, &y_w, m.a(), scale, streams);
    let y_vt = yc.dot(&m.v().t());
    sample_layer(&mut p.zs, &y_vt, m.c(), scale, streams);
    SweepFields { y_w, y_vt }
}

/// One clamped alternation (layer 1, then layer 2). `x_wt` is the constant
/// `(x-α) Wᵀ` of the clamped rows. Returns the unscaled `(y-β) Vᵀ`.
pub(crate) fn clamped_sweep_scaled(
    m: &Dbm2Params,
    x_wt: &Array2<f64>,
    ys: &mut Array2<f64>,
    zs: &mut Array2<f64>,
    scale: f64,
    streams: &mut Streams<'_>,
) -> Array2<f64> {
    let zc = &*zs - m.gamma();
    let mut y_field = x_wt.clone();
    ndarray::linalg::general_mat_mul(1.0, &zc, m.v(), 1.0, &mut y_field);
    sample_layer(ys, &y_field, m.b(), scale, streams);
    let yc = &*ys - m.beta();
    let y_vt = yc.dot(&m.v().t());
    sample_layer(zs, &y_vt, m.c(), scale, streams);
    y_vt
}

pub(crate) fn visible_field(m: &Dbm2Params, x_data: ArrayView2<'_, f64>) -> Array2<f64> {
    (&x_data - m.alpha()).dot(&m.w().t())
}

/// `p(x_i = 1 | x_{-i}) = sigm(b_i + Σ_{j≠i} W_ij (x_j - β_j))`.
pub fn conditional_flat(m: &FlatBmParams, x: &BinaryState, i: usize) -> Result<f64> {
    let n = m.units();
    if x.len() != n {
        return Err(Error::Dimension {
            what: "flat state",
            expected: n,
            got: x.len(),
        });
    }
    if i >= n {
        return Err(Error::IndexOutOfRange { index: i, len: n });
    }
    Ok(conditional_flat_unchecked(m, x.view(), i))
}

fn conditional_flat_unchecked(m: &FlatBmParams, x: ndarray::ArrayView1<'_, f64>, i: usize) -> f64 {
    // the zero diagonal removes the j = i term
    let field: f64 = m
        .w()
        .row(i)
        .iter()
        .zip(x.iter().zip(m.beta()))
        .map(|(w, (x, beta))| w * (x - beta))
        .sum();
    sigm(m.b()[i] + field)
}

/// One in-place systematic-scan Gibbs sweep over all units of a flat machine.
pub fn flat_gibbs_sweep(m: &FlatBmParams, x: &mut Array1<f64>, rng: &mut Rng) -> Result<()> {
    if x.len() != m.units() {
        return Err(Error::Dimension {
            what: "flat state",
            expected: m.units(),
            got: x.len(),
        });
    }
    check_binary(x.view())?;
    for i in 0..m.units() {
        let p = conditional_flat_unchecked(m, x.view(), i);
        x[i] = if rng.random::<f64>() < p { 1.0 } else { 0.0 };
    }
    Ok(())
}

/// One full free alternation of every particle.
pub fn dbm_gibbs_free(m: &Dbm2Params, p: &mut ParticleSet, rng: &mut Rng) -> Result<()> {
    p.check_against(m)?;
    free_sweep_scaled(m, p, 1.0, &mut Streams::Shared(rng));
    Ok(())
}

/// `steps` clamped alternations; `x_data` is never written.
pub fn dbm_gibbs_clamped(
    m: &Dbm2Params,
    x_data: ArrayView2<'_, f64>,
    ys: &mut Array2<f64>,
    zs: &mut Array2<f64>,
    steps: usize,
    rng: &mut Rng,
) -> Result<()> {
    if steps == 0 {
        return Err(Error::InvalidParameter("clamped sampler needs steps >= 1".into()));
    }
    check_clamped_shapes(m, x_data, ys, zs)?;
    let x_wt = visible_field(m, x_data);
    let mut streams = Streams::Shared(rng);
    for _ in 0..steps {
        clamped_sweep_scaled(m, &x_wt, ys, zs, 1.0, &mut streams);
    }
    Ok(())
}

fn check_clamped_shapes(m: &Dbm2Params, x_data: ArrayView2<'_, f64>, ys: &Array2<f64>, zs: &Array2<f64>) -> Result<()> {
    let s = m.sizes();
    for (what, expected, got) in [
        ("visible width", s.visible, x_data.ncols()),
        ("hidden1 width", s.hidden1, ys.ncols()),
        ("hidden2 width", s.hidden2, zs.ncols()),
        ("hidden1 rows", x_data.nrows(), ys.nrows()),
        ("hidden2 rows", x_data.nrows(), zs.nrows()),
    ] {
        if expected != got {
            return Err(Error::Dimension { what, expected, got });
        }
    }
    check_binary_matrix(x_data)
}

/// Per-sample mean of the sampled layer-1 and layer-2 states over `steps`
/// clamped sweeps. Hidden chains start from Bernoulli draws of the offsets.
pub fn mean_representation(
    m: &Dbm2Params,
    x_data: ArrayView2<'_, f64>,
    steps: usize,
    rng: &mut Rng,
) -> Result<(Array2<f64>, Array2<f64>)> {
    if steps == 0 {
        return Err(Error::InvalidParameter("mean representation needs steps >= 1".into()));
    }
    let n = x_data.nrows();
    let mut streams = Streams::Shared(rng);
    let mut ys = sample_probabilities(n, m.beta(), &mut streams);
    let mut zs = sample_probabilities(n, m.gamma(), &mut streams);
    check_clamped_shapes(m, x_data, &ys, &zs)?;
    let x_wt = visible_field(m, x_data);
    let mut sum_y = Array2::<f64>::zeros(ys.raw_dim());
    let mut sum_z = Array2::<f64>::zeros(zs.raw_dim());
    for _ in 0..steps {
        clamped_sweep_scaled(m, &x_wt, &mut ys, &mut zs, 1.0, &mut streams);
        sum_y += &ys;
        sum_z += &zs;
    }
    let inv = 1.0 / steps as f64;
    Ok((sum_y * inv, sum_z * inv))
}

/// Runs one free chain from the offsets and emits the visible state every
/// `thin` sweeps after `burn_in` sweeps. Rows of the result are samples.
pub fn generate_digits(m: &Dbm2Params, n: usize, burn_in: usize, thin: usize, rng: &mut Rng) -> Result<Array2<f64>> {
    if n == 0 {
        return Err(Error::InvalidParameter("need at least one sample".into()));
    }
    if thin == 0 {
        return Err(Error::InvalidParameter("thinning interval must be >= 1".into()));
    }
    let mut chain = ParticleSet::from_offsets(m, 1, rng);
    let mut streams = Streams::Shared(rng);
    for _ in 0..burn_in {
        free_sweep_scaled(m, &mut chain, 1.0, &mut streams);
    }
    let mut out = Array2::zeros((n, m.sizes().visible));
    for mut row in out.axis_iter_mut(Axis(0)) {
        for _ in 0..thin {
            free_sweep_scaled(m, &mut chain, 1.0, &mut streams);
        }
        row.assign(&chain.xs.row(0));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::{dbm_hidden_conditional_means, exact_enumerate, index_of_state, state_from_index};
    use ndarray::{array, concatenate};

    fn total_variation(p: &[f64], q: &[f64]) -> f64 {
        0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
    }

    #[test]
    fn conditional_of_decoupled_unit_is_sigmoid_of_bias() {
        let m = FlatBmParams::uncoupled(3, 0.7, 0.4).unwrap();
        let x = BinaryState::from_bits(&[1, 0, 1]).unwrap();
        assert!((conditional_flat(&m, &x, 1).unwrap() - sigm(0.7)).abs() < 1e-15);
        let zero = FlatBmParams::uncoupled(3, 0.0, 0.4).unwrap();
        assert_eq!(conditional_flat(&zero, &x, 2).unwrap(), 0.5);
        assert!(matches!(
            conditional_flat(&m, &x, 3),
            Err(Error::IndexOutOfRange { index: 3, len: 3 })
        ));
    }

    #[test]
    fn conditional_matches_enumerated_gibbs_chain() {
        let mut rng = seeded_rng(21);
        let m = FlatBmParams::random(5, 0.8, 0.8, &mut rng);
        let probs = exact_enumerate(&m).unwrap().probs();
        // empirical p(x_0 = 1 | rest) from a long chain against enumeration
        let mut x = Array1::zeros(5);
        let mut hits = vec![[0usize; 2]; 16];
        for sweep in 0..1_000_000 {
            flat_gibbs_sweep(&m, &mut x, &mut rng).unwrap();
            if sweep >= 100 {
                let rest = index_of_state(x.view()) >> 1;
                hits[rest][x[0] as usize] += 1;
            }
        }
        let mut checked = 0;
        for (rest, h) in hits.iter().enumerate() {
            let total = h[0] + h[1];
            let p1 = probs[(rest << 1) | 1];
            let p0 = probs[rest << 1];
            let analytic = conditional_flat(&m, &BinaryState::new(state_from_index(rest << 1, 5)).unwrap(), 0).unwrap();
            assert!((analytic - p1 / (p0 + p1)).abs() < 1e-12);
            if total >= 20_000 {
                let empirical = h[1] as f64 / total as f64;
                assert!((empirical - analytic).abs() < 0.01, "{empirical} vs {analytic}");
                checked += 1;
            }
        }
        assert!(checked >= 4);
    }

    #[test]
    fn zero_model_sampler_is_fair() {
        let m = Dbm2Params::zeros(LayerSizes::new(5, 4, 3));
        let mut rng = seeded_rng(1);
        let mut p = ParticleSet::uniform(m.sizes(), 1, &mut rng);
        let mut sums = [0.0; 3];
        let steps = 10_000;
        for _ in 0..steps {
            dbm_gibbs_free(&m, &mut p, &mut rng).unwrap();
            sums[0] += p.xs.sum() / 5.0;
            sums[1] += p.ys.sum() / 4.0;
            sums[2] += p.zs.sum() / 3.0;
        }
        for s in sums {
            let mean = s / steps as f64;
            assert!((0.47..=0.53).contains(&mean), "{mean}");
        }
    }

    #[test]
    fn free_sampler_is_deterministic() {
        let mut rng = seeded_rng(2);
        let m = Dbm2Params::random(LayerSizes::new(6, 4, 3), 1.0, &mut rng);
        let run = || {
            let mut rng = seeded_rng(77);
            let mut p = ParticleSet::uniform(m.sizes(), 4, &mut rng);
            for _ in 0..50 {
                dbm_gibbs_free(&m, &mut p, &mut rng).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn free_sampler_matches_enumeration() {
        let mut rng = seeded_rng(3);
        let m = Dbm2Params::random(LayerSizes::new(4, 3, 2), 0.8, &mut rng);
        let exact = exact_enumerate(&m).unwrap().probs();
        let chains = 100;
        let mut p = ParticleSet::uniform(m.sizes(), chains, &mut rng);
        for _ in 0..100 {
            dbm_gibbs_free(&m, &mut p, &mut rng).unwrap();
        }
        let mut counts = vec![0usize; exact.len()];
        let sweeps = 10_000;
        for _ in 0..sweeps {
            dbm_gibbs_free(&m, &mut p, &mut rng).unwrap();
            let joint = concatenate![Axis(1), p.xs, p.ys, p.zs];
            for row in joint.rows() {
                counts[index_of_state(row)] += 1;
            }
        }
        let n = (chains * sweeps) as f64;
        let empirical: Vec<f64> = counts.iter().map(|&c| c as f64 / n).collect();
        assert!(total_variation(&empirical, &exact) < 0.02);
    }

    #[test]
    fn decoupled_clamped_sampler_ignores_data() {
        let mut m = Dbm2Params::zeros(LayerSizes::new(3, 2, 2));
        m.b = array![1.5, -0.5];
        m.beta = array![0.3, 0.6];
        let x = array![[1.0, 1.0, 0.0]];
        let mut rng = seeded_rng(4);
        let (mean_y, _) = mean_representation(&m, x.view(), 40_000, &mut rng).unwrap();
        for j in 0..2 {
            assert!((mean_y[[0, j]] - sigm(m.b[j])).abs() < 0.02);
        }
    }

    #[test]
    fn clamped_sampler_leaves_data_untouched() {
        let mut rng = seeded_rng(5);
        let m = Dbm2Params::random(LayerSizes::new(5, 3, 2), 1.0, &mut rng);
        let x = array![[1.0, 0.0, 1.0, 1.0, 0.0], [0.0, 0.0, 1.0, 0.0, 1.0]];
        let before = x.clone();
        let mut ys = Array2::zeros((2, 3));
        let mut zs = Array2::zeros((2, 2));
        dbm_gibbs_clamped(&m, x.view(), &mut ys, &mut zs, 10, &mut rng).unwrap();
        assert_eq!(x, before);
        assert!(ys.iter().chain(zs.iter()).all(|&v| v == 0.0 || v == 1.0));
        assert!(dbm_gibbs_clamped(&m, x.view(), &mut ys, &mut zs, 0, &mut rng).is_err());
    }

    #[test]
    fn clamped_sampler_matches_enumerated_conditional() {
        let mut rng = seeded_rng(6);
        let m = Dbm2Params::random(LayerSizes::new(4, 3, 3), 1.0, &mut rng);
        let exact = exact_enumerate(&m).unwrap();
        let x_index = 0b1011;
        let target = exact.conditional_high(4, x_index);
        let chains = 100;
        let x = Array2::from_shape_fn((chains, 4), |(_, u)| ((x_index >> u) & 1) as f64);
        let mut ys = Array2::zeros((chains, 3));
        let mut zs = Array2::zeros((chains, 3));
        dbm_gibbs_clamped(&m, x.view(), &mut ys, &mut zs, 50, &mut rng).unwrap();
        let mut counts = vec![0usize; target.len()];
        let sweeps = 10_000;
        for _ in 0..sweeps {
            dbm_gibbs_clamped(&m, x.view(), &mut ys, &mut zs, 1, &mut rng).unwrap();
            let hidden = concatenate![Axis(1), ys, zs];
            for row in hidden.rows() {
                counts[index_of_state(row)] += 1;
            }
        }
        let n = (chains * sweeps) as f64;
        let empirical: Vec<f64> = counts.iter().map(|&c| c as f64 / n).collect();
        assert!(total_variation(&empirical, &target) < 0.02);
    }

    #[test]
    fn mean_representation_matches_exact_conditional_means() {
        let mut rng = seeded_rng(7);
        let m = Dbm2Params::random(LayerSizes::new(4, 3, 2), 1.0, &mut rng);
        let x = array![[1.0, 0.0, 0.0, 1.0], [0.0, 1.0, 1.0, 1.0]];
        let (my, mz) = mean_representation(&m, x.view(), 10_000, &mut rng).unwrap();
        assert!(my.iter().chain(mz.iter()).all(|&v| (0.0..=1.0).contains(&v)));
        for r in 0..2 {
            let (ey, ez) = dbm_hidden_conditional_means(&m, x.row(r)).unwrap();
            for j in 0..3 {
                assert!((my[[r, j]] - ey[j]).abs() < 0.02);
            }
            for k in 0..2 {
                assert!((mz[[r, k]] - ez[k]).abs() < 0.02);
            }
        }
    }

    #[test]
    fn generated_digits_from_zero_model_are_fair_coins() {
        let m = Dbm2Params::zeros(LayerSizes::new(16, 4, 2));
        let mut rng = seeded_rng(8);
        let samples = generate_digits(&m, 1000, 10, 2, &mut rng).unwrap();
        let mean = samples.mean().unwrap();
        assert!((0.47..=0.53).contains(&mean));
        let again = generate_digits(&m, 1000, 10, 2, &mut seeded_rng(8)).unwrap();
        assert_eq!(samples, again);
    }

    #[test]
    fn generated_digit_marginal_matches_enumeration() {
        let mut rng = seeded_rng(9);
        let m = Dbm2Params::random(LayerSizes::new(4, 3, 2), 0.8, &mut rng);
        let target = exact_enumerate(&m).unwrap().marginal_low(4);
        let samples = generate_digits(&m, 20_000, 100, 3, &mut rng).unwrap();
        let mut counts = [0usize; 16];
        for row in samples.rows() {
            counts[index_of_state(row)] += 1;
        }
        let empirical: Vec<f64> = counts.iter().map(|&c| c as f64 / 20_000.0).collect();
        assert!(total_variation(&empirical, &target) < 0.05);
    }
}
