//! Parameter containers and energy functions for flat and two-layer
//! centered Boltzmann machines.
//!
//! All energies are written in terms of centered states `x - offset`.
//! The flat machine counts each symmetric pair once:
//!
//! ```text
//! E(x) = -1/2 (x-β)ᵀ W (x-β) - (x-β)ᵀ b
//! ```
//!
//! so that the single-site conditional is `sigm(b_i + Σ_j W_ij (x_j - β_j))`.
//! The bipartite DBM energy needs no such factor.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Zip};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// A vector of `{0,1}` values stored as `f64` so it can take part in
/// matrix products directly.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryState(Array1<f64>);

impl BinaryState {
    pub fn new(values: Array1<f64>) -> Result<Self> {
        check_binary(values.view())?;
        Ok(Self(values))
    }

    pub fn from_bits(bits: &[u8]) -> Result<Self> {
        Self::new(bits.iter().map(|&b| b as f64).collect())
    }

    pub fn zeros(len: usize) -> Self {
        Self(Array1::zeros(len))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn view(&self) -> ArrayView1<'_, f64> {
        self.0.view()
    }

    pub fn into_inner(self) -> Array1<f64> {
        self.0
    }
}

pub(crate) fn check_binary(values: ArrayView1<'_, f64>) -> Result<()> {
    for (index, &value) in values.iter().enumerate() {
        if value != 0.0 && value != 1.0 {
            return Err(Error::NotBinary { index, value });
        }
    }
    Ok(())
}

pub(crate) fn check_binary_matrix(values: ArrayView2<'_, f64>) -> Result<()> {
    for (index, &value) in values.iter().enumerate() {
        if value != 0.0 && value != 1.0 {
            return Err(Error::NotBinary { index, value });
        }
    }
    Ok(())
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension { what, expected, got });
    }
    Ok(())
}

fn check_finite<'a>(what: &str, values: impl IntoIterator<Item = &'a f64>) -> Result<()> {
    if values.into_iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// Offsets must be probabilities. The closed interval is accepted so that
/// the uncentered (zero-offset) parameterization stays representable; the
/// trainer only ever produces offsets strictly inside `(0, 1)`.
fn check_offsets(what: &str, offsets: &Array1<f64>) -> Result<()> {
    if offsets.iter().all(|&o| (0.0..=1.0).contains(&o)) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{what} offsets must lie in [0, 1]")))
    }
}

/// Fully connected (flat) Boltzmann machine `{W, b, β}`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatBmParams {
    w: Array2<f64>,
    b: Array1<f64>,
    beta: Array1<f64>,
}

impl FlatBmParams {
    /// Requires `w` exactly symmetric with a zero diagonal.
    pub fn new(w: Array2<f64>, b: Array1<f64>, beta: Array1<f64>) -> Result<Self> {
        let m = b.len();
        check_len("flat W rows", m, w.nrows())?;
        check_len("flat W cols", m, w.ncols())?;
        check_len("flat offsets", m, beta.len())?;
        for i in 0..m {
            if w[[i, i]] != 0.0 {
                return Err(Error::InvalidParameter(format!("W has a self-connection at unit {i}")));
            }
            for j in (i + 1)..m {
                if w[[i, j]] != w[[j, i]] {
                    return Err(Error::InvalidParameter(format!("W is not symmetric at ({i}, {j})")));
                }
            }
        }
        check_finite("flat W", w.iter())?;
        check_finite("flat b", b.iter())?;
        check_offsets("flat", &beta)?;
        Ok(Self { w, b, beta })
    }

    /// Builds W from its strict upper triangle, mirroring it and zeroing the
    /// diagonal. Whatever sits on or below the diagonal of `w` is ignored.
    pub fn from_upper_triangle(w: Array2<f64>, b: Array1<f64>, beta: Array1<f64>) -> Result<Self> {
        let m = w.nrows();
        check_len("flat W cols", m, w.ncols())?;
        let mut sym = Array2::zeros((m, m));
        for i in 0..m {
            for j in (i + 1)..m {
                sym[[i, j]] = w[[i, j]];
                sym[[j, i]] = w[[i, j]];
            }
        }
        Self::new(sym, b, beta)
    }

    /// Uncoupled machine with every bias equal to `bias` and every offset
    /// equal to `offset`.
    pub fn uncoupled(units: usize, bias: f64, offset: f64) -> Result<Self> {
        Self::new(
            Array2::zeros((units, units)),
            Array1::from_elem(units, bias),
            Array1::from_elem(units, offset),
        )
    }

    /// Random machine with `N(0, weight_scale²)` couplings, `N(0, bias_scale²)`
    /// biases and uniform offsets in `(0.05, 0.95)`.
    pub fn random<R: Rng + ?Sized>(units: usize, weight_scale: f64, bias_scale: f64, rng: &mut R) -> Self {
        let mut w = Array2::zeros((units, units));
        for i in 0..units {
            for j in (i + 1)..units {
                let g: f64 = StandardNormal.sample(rng);
                w[[i, j]] = weight_scale * g;
                w[[j, i]] = weight_scale * g;
            }
        }
        let b = (0..units)
            .map(|_| bias_scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
            .collect();
        let beta = (0..units).map(|_| rng.random_range(0.05..0.95)).collect();
        Self { w, b, beta }
    }

    pub fn units(&self) -> usize {
        self.b.len()
    }

    pub fn w(&self) -> &Array2<f64> {
        &self.w
    }

    pub fn b(&self) -> &Array1<f64> {
        &self.b
    }

    pub fn beta(&self) -> &Array1<f64> {
        &self.beta
    }

    pub fn energy(&self, x: &BinaryState) -> Result<f64> {
        check_len("flat state", self.units(), x.len())?;
        Ok(self.energy_unchecked(x.view()))
    }

    pub(crate) fn energy_unchecked(&self, x: ArrayView1<'_, f64>) -> f64 {
        let xi = &x - &self.beta;
        -0.5 * xi.dot(&self.w.dot(&xi)) - xi.dot(&self.b)
    }

    /// Equivalent machine with zero offsets: `b' = b - Wβ`. Energies differ
    /// from the centered ones by a state-independent constant, so the Gibbs
    /// distribution is unchanged.
    pub fn uncenter(&self) -> FlatBmParams {
        let b = &self.b - &self.w.dot(&self.beta);
        FlatBmParams {
            w: self.w.clone(),
            b,
            beta: Array1::zeros(self.units()),
        }
    }

    /// Copy with `W` shifted by `step * direction`. The direction must be
    /// symmetric with a zero diagonal.
    pub fn with_weights_shifted(&self, direction: &Array2<f64>, step: f64) -> Result<Self> {
        Self::new(&self.w + &(direction * step), self.b.clone(), self.beta.clone())
    }

    pub fn with_bias_shifted(&self, direction: &Array1<f64>, step: f64) -> Result<Self> {
        Self::new(self.w.clone(), &self.b + &(direction * step), self.beta.clone())
    }
}

/// Two-layer deep Boltzmann machine `{W, V, a, b, c, α, β, γ}`.
///
/// `W` is `My × Mx` and `V` is `Mz × My`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dbm2Params {
    pub(crate) w: Array2<f64>,
    pub(crate) v: Array2<f64>,
    pub(crate) a: Array1<f64>,
    pub(crate) b: Array1<f64>,
    pub(crate) c: Array1<f64>,
    pub(crate) alpha: Array1<f64>,
    pub(crate) beta: Array1<f64>,
    pub(crate) gamma: Array1<f64>,
}

/// Layer widths `(Mx, My, Mz)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSizes {
    pub visible: usize,
    pub hidden1: usize,
    pub hidden2: usize,
}

impl LayerSizes {
    pub const fn new(visible: usize, hidden1: usize, hidden2: usize) -> Self {
        Self {
            visible,
            hidden1,
            hidden2,
        }
    }

    pub fn total(&self) -> usize {
        self.visible + self.hidden1 + self.hidden2
    }
}

impl Dbm2Params {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        w: Array2<f64>,
        v: Array2<f64>,
        a: Array1<f64>,
        b: Array1<f64>,
        c: Array1<f64>,
        alpha: Array1<f64>,
        beta: Array1<f64>,
        gamma: Array1<f64>,
    ) -> Result<Self> {
        let (mx, my, mz) = (a.len(), b.len(), c.len());
        check_len("W rows", my, w.nrows())?;
        check_len("W cols", mx, w.ncols())?;
        check_len("V rows", mz, v.nrows())?;
        check_len("V cols", my, v.ncols())?;
        check_len("visible offsets", mx, alpha.len())?;
        check_len("hidden1 offsets", my, beta.len())?;
        check_len("hidden2 offsets", mz, gamma.len())?;
        let params = Self {
            w,
            v,
            a,
            b,
            c,
            alpha,
            beta,
            gamma,
        };
        params.check_finite()?;
        check_offsets("visible", &params.alpha)?;
        check_offsets("hidden1", &params.beta)?;
        check_offsets("hidden2", &params.gamma)?;
        Ok(params)
    }

    /// All weights, biases and offsets zero.
    pub fn zeros(sizes: LayerSizes) -> Self {
        let LayerSizes {
            visible: mx,
            hidden1: my,
            hidden2: mz,
        } = sizes;
        Self {
            w: Array2::zeros((my, mx)),
            v: Array2::zeros((mz, my)),
            a: Array1::zeros(mx),
            b: Array1::zeros(my),
            c: Array1::zeros(mz),
            alpha: Array1::zeros(mx),
            beta: Array1::zeros(my),
            gamma: Array1::zeros(mz),
        }
    }

    /// Random model: weights and biases `N(0, scale²)`, offsets uniform in
    /// `(0.05, 0.95)`.
    pub fn random<R: Rng + ?Sized>(sizes: LayerSizes, scale: f64, rng: &mut R) -> Self {
        let mut normal = |n: usize| -> Array1<f64> {
            (0..n)
                .map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut *rng))
                .collect()
        };
        let w = normal(sizes.hidden1 * sizes.visible)
            .into_shape_with_order((sizes.hidden1, sizes.visible))
            .expect("shape");
        let v = normal(sizes.hidden2 * sizes.hidden1)
            .into_shape_with_order((sizes.hidden2, sizes.hidden1))
            .expect("shape");
        let a = normal(sizes.visible);
        let b = normal(sizes.hidden1);
        let c = normal(sizes.hidden2);
        let mut offsets = |n: usize| -> Array1<f64> { (0..n).map(|_| rng.random_range(0.05..0.95)).collect() };
        Self {
            w,
            v,
            a,
            b,
            c,
            alpha: offsets(sizes.visible),
            beta: offsets(sizes.hidden1),
            gamma: offsets(sizes.hidden2),
        }
    }

    pub fn sizes(&self) -> LayerSizes {
        LayerSizes::new(self.a.len(), self.b.len(), self.c.len())
    }

    pub fn w(&self) -> &Array2<f64> {
        &self.w
    }
    pub fn v(&self) -> &Array2<f64> {
        &self.v
    }
    pub fn a(&self) -> &Array1<f64> {
        &self.a
    }
    pub fn b(&self) -> &Array1<f64> {
        &self.b
    }
    pub fn c(&self) -> &Array1<f64> {
        &self.c
    }
    pub fn alpha(&self) -> &Array1<f64> {
        &self.alpha
    }
    pub fn beta(&self) -> &Array1<f64> {
        &self.beta
    }
    pub fn gamma(&self) -> &Array1<f64> {
        &self.gamma
    }

    pub(crate) fn check_finite(&self) -> Result<()> {
        check_finite("W", self.w.iter())?;
        check_finite("V", self.v.iter())?;
        check_finite("a", self.a.iter())?;
        check_finite("b", self.b.iter())?;
        check_finite("c", self.c.iter())?;
        check_finite("offsets", self.alpha.iter().chain(&self.beta).chain(&self.gamma))
    }

    pub fn is_finite(&self) -> bool {
        self.check_finite().is_ok()
    }

    pub fn energy(&self, x: &BinaryState, y: &BinaryState, z: &BinaryState) -> Result<f64> {
        let s = self.sizes();
        check_len("visible state", s.visible, x.len())?;
        check_len("hidden1 state", s.hidden1, y.len())?;
        check_len("hidden2 state", s.hidden2, z.len())?;
        Ok(self.energy_unchecked(x.view(), y.view(), z.view()))
    }

    pub(crate) fn energy_unchecked(
        &self,
        x: ArrayView1<'_, f64>,
        y: ArrayView1<'_, f64>,
        z: ArrayView1<'_, f64>,
    ) -> f64 {
        let xc = &x - &self.alpha;
        let yc = &y - &self.beta;
        let zc = &z - &self.gamma;
        -yc.dot(&self.w.dot(&xc)) - zc.dot(&self.v.dot(&yc)) - xc.dot(&self.a) - yc.dot(&self.b) - zc.dot(&self.c)
    }

    /// Row-wise energies of a batch of states (one state per row).
    pub fn energies(&self, xs: ArrayView2<'_, f64>, ys: ArrayView2<'_, f64>, zs: ArrayView2<'_, f64>) -> Array1<f64> {
        let xc = &xs - &self.alpha;
        let yc = &ys - &self.beta;
        let zc = &zs - &self.gamma;
        // (y-β)ᵀ W (x-α) per row = rowsum(((y-β) W) ∘ (x-α))
        let yw = yc.dot(&self.w);
        let zv = zc.dot(&self.v);
        let mut out = Array1::zeros(xs.nrows());
        Zip::from(&mut out)
            .and(yw.rows())
            .and(xc.rows())
            .and(zv.rows())
            .and(yc.rows())
            .and(zc.rows())
            .for_each(|e, yw, xc, zv, yc, zc| {
                *e = -yw.dot(&xc) - zv.dot(&yc) - xc.dot(&self.a) - yc.dot(&self.b) - zc.dot(&self.c);
            });
        out
    }

    /// Copy with every weight and bias multiplied by `lambda`; offsets kept.
    pub fn scaled(&self, lambda: f64) -> Self {
        Self {
            w: &self.w * lambda,
            v: &self.v * lambda,
            a: &self.a * lambda,
            b: &self.b * lambda,
            c: &self.c * lambda,
            alpha: self.alpha.clone(),
            beta: self.beta.clone(),
            gamma: self.gamma.clone(),
        }
    }

    /// Element-wise `k_new * other + k_old * self` over weights and biases.
    /// Offsets are taken from `other`.
    pub(crate) fn blend_from(&mut self, other: &Dbm2Params, weight_new: f64) {
        let weight_old = 1.0 - weight_new;
        let blend = |dst: &mut Array1<f64>, src: &Array1<f64>| {
            Zip::from(dst)
                .and(src)
                .for_each(|d, &s| *d = weight_new * s + weight_old * *d);
        };
        Zip::from(&mut self.w)
            .and(&other.w)
            .for_each(|d, &s| *d = weight_new * s + weight_old * *d);
        Zip::from(&mut self.v)
            .and(&other.v)
            .for_each(|d, &s| *d = weight_new * s + weight_old * *d);
        blend(&mut self.a, &other.a);
        blend(&mut self.b, &other.b);
        blend(&mut self.c, &other.c);
        self.alpha.assign(&other.alpha);
        self.beta.assign(&other.beta);
        self.gamma.assign(&other.gamma);
    }

    /// Linear backprojection of layer-1 units onto the input space: row `j`
    /// of `W`.
    pub fn layer1_filters(&self) -> Array2<f64> {
        self.w.clone()
    }

    /// Linear backprojection of layer-2 units onto the input space: rows of
    /// `V · W`.
    pub fn layer2_filters(&self) -> Array2<f64> {
        self.v.dot(&self.w)
    }
}
