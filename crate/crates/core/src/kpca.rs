//! Kernel-PCA analysis of layer representations.
//!
//! For layer `l` (raw input, mean layer-1 activity, mean layer-2 activity)
//! and RBF scale `σ²`, the labels `T` are projected on the `d` leading
//! eigenvectors of the empirical kernel and the residual
//! `e(l,d,σ) = ‖T - U_d U_dᵀ T‖²_F` is recorded for every `d = 0..n`. The
//! per-layer summary is the mean over `d = 1..n` of the σ-minimized curve.
//! Eigenvectors come from the raw (uncentered) kernel.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::model::Dbm2Params;
use crate::sampler::{mean_representation, Rng};

pub const DEFAULT_SIGMA_GRID: [f64; 5] = [1.0, 10.0, 100.0, 1000.0, 10000.0];
/// Clamped sweeps used to build the hidden-layer representations.
pub const REPRESENTATION_STEPS: usize = 100;
pub const N_CLASSES: usize = 10;

/// One-hot labels, `n × 10`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMatrix {
    t: Array2<f64>,
}

impl LabelMatrix {
    pub fn from_labels(labels: &[u8]) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Empty("labels"));
        }
        let mut t = Array2::zeros((labels.len(), N_CLASSES));
        for (i, &l) in labels.iter().enumerate() {
            if l as usize >= N_CLASSES {
                return Err(Error::InvalidParameter(format!("label {l} outside 0..=9")));
            }
            t[[i, l as usize]] = 1.0;
        }
        Ok(Self { t })
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.t
    }

    pub fn len(&self) -> usize {
        self.t.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.t.nrows() == 0
    }
}

/// `K_ij = exp(-‖f_i - f_j‖² / (2σ²))` over the rows of `features`.
pub fn rbf_kernel_matrix(features: ArrayView2<'_, f64>, sigma2: f64) -> Result<Array2<f64>> {
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(Error::InvalidParameter(format!("kernel scale {sigma2} must be > 0")));
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("kernel features".into()));
    }
    let n = features.nrows();
    let mut k = Array2::zeros((n, n));
    for i in 0..n {
        k[[i, i]] = 1.0;
        let fi = features.row(i);
        for j in (i + 1)..n {
            let d2: f64 = fi.iter().zip(features.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            let v = (-d2 / (2.0 * sigma2)).exp();
            k[[i, j]] = v;
            k[[j, i]] = v;
        }
    }
    Ok(k)
}

/// Eigen-decomposition with eigenvalues in decreasing order (ties keep
/// their original order). Column `i` of `vectors` pairs with `values[i]`.
#[derive(Debug, Clone)]
pub struct KernelEigen {
    pub values: Array1<f64>,
    pub vectors: Array2<f64>,
}

pub fn eigen_decompose(k: &Array2<f64>) -> Result<KernelEigen> {
    let n = k.nrows();
    if k.ncols() != n {
        return Err(Error::Dimension {
            what: "kernel columns",
            expected: n,
            got: k.ncols(),
        });
    }
    if n == 0 {
        return Err(Error::Empty("kernel"));
    }
    let dm = DMatrix::from_fn(n, n, |r, c| k[[r, c]]);
    let eig = SymmetricEigen::new(dm);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = Array2::from_shape_fn((n, n), |(r, c)| eig.eigenvectors[(r, order[c])]);
    Ok(KernelEigen { values, vectors })
}

/// `e(d)` for `d = 0..=n`: `‖T‖²_F` minus the cumulative captured energy,
/// floored at zero.
pub fn residual_curve(eig: &KernelEigen, t: &Array2<f64>) -> Result<Array1<f64>> {
    let n = eig.vectors.nrows();
    if t.nrows() != n {
        return Err(Error::Dimension {
            what: "label rows",
            expected: n,
            got: t.nrows(),
        });
    }
    let total: f64 = t.iter().map(|v| v * v).sum();
    // row i of Uᵀ T is the label content along eigenvector i
    let captured = eig.vectors.t().dot(t);
    let mut out = Array1::zeros(n + 1);
    out[0] = total;
    let mut acc = 0.0;
    for (i, row) in captured.rows().into_iter().enumerate() {
        acc += row.iter().map(|v| v * v).sum::<f64>();
        out[i + 1] = (total - acc).max(0.0);
    }
    Ok(out)
}

/// `‖T - U_d U_dᵀ T‖²_F` for the `d` leading eigenvectors of `k`.
pub fn projection_residual(k: &Array2<f64>, t: &LabelMatrix, d: usize) -> Result<f64> {
    projection_residual_of(k, t.matrix(), d)
}

/// As [`projection_residual`] for an arbitrary target matrix.
pub fn projection_residual_of(k: &Array2<f64>, t: &Array2<f64>, d: usize) -> Result<f64> {
    if d > k.nrows() {
        return Err(Error::InvalidParameter(format!(
            "d = {d} exceeds the sample count {}",
            k.nrows()
        )));
    }
    Ok(residual_curve(&eigen_decompose(k)?, t)?[d])
}

/// Features of the three layers: raw inputs, then the mean layer-1 and
/// layer-2 activity over `steps` clamped sweeps.
pub fn layer_features(m: &Dbm2Params, x: ArrayView2<'_, f64>, steps: usize, rng: &mut Rng) -> Result<[Array2<f64>; 3]> {
    let (y, z) = mean_representation(m, x, steps, rng)?;
    Ok([x.to_owned(), y, z])
}

/// Kernels `[layer][σ]` for the three layers.
pub fn deep_kernels(
    m: &Dbm2Params,
    x: ArrayView2<'_, f64>,
    sigma_grid: &[f64],
    steps: usize,
    rng: &mut Rng,
) -> Result<Vec<Vec<Array2<f64>>>> {
    layer_features(m, x, steps, rng)?
        .iter()
        .map(|f| sigma_grid.iter().map(|&s2| rbf_kernel_matrix(f.view(), s2)).collect())
        .collect()
}

/// Residual curves of one layer across the σ grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerResiduals {
    /// `(n+1) × |σ grid|`; entry `(d, s)` is `e(l, d, σ_s)`.
    pub e: Array2<f64>,
    /// `min_σ e(l, d, σ)` for `d = 0..=n`.
    pub e_min: Array1<f64>,
    /// Mean of `e_min` over `d = 1..=n`.
    pub auc_raw: f64,
    /// `auc_raw / ‖T‖²_F`, comparable across sample sizes.
    pub auc: f64,
    /// Two leading eigenvalues per σ, `|σ grid| × 2`.
    pub leading_values: Array2<f64>,
    /// Two leading eigenvectors per σ, each `n × 2`.
    pub leading_vectors: Vec<Array2<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualCurves {
    pub layers: Vec<LayerResiduals>,
    pub sigma_grid: Vec<f64>,
    /// `‖T‖²_F`.
    pub label_energy: f64,
}

impl ResidualCurves {
    pub fn n_samples(&self) -> usize {
        self.layers[0].e.nrows() - 1
    }

    /// Rows `(layer, d, σ², residual)` in layer, d, σ order.
    pub fn rows(&self) -> Vec<(usize, usize, f64, f64)> {
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            for (d, row) in layer.e.rows().into_iter().enumerate() {
                for (&s2, &e) in self.sigma_grid.iter().zip(row) {
                    out.push((l, d, s2, e));
                }
            }
        }
        out
    }

    /// 2-component kernel PCA embedding `(√λ₁ u₁, √λ₂ u₂)` of `layer`, at
    /// the σ with the smallest residual at `d = 2`. Returns the embedding
    /// (`n × 2`) and the chosen σ².
    pub fn kpca2(&self, layer: usize) -> Result<(Array2<f64>, f64)> {
        let lr = self.layers.get(layer).ok_or(Error::IndexOutOfRange {
            index: layer,
            len: self.layers.len(),
        })?;
        if lr.e.nrows() < 3 {
            return Err(Error::InvalidParameter("2-component embedding needs n >= 2".into()));
        }
        let best = (0..self.sigma_grid.len())
            .min_by(|&a, &b| lr.e[[2, a]].total_cmp(&lr.e[[2, b]]))
            .expect("non-empty grid");
        let mut emb = lr.leading_vectors[best].clone();
        for (mut col, &lam) in emb.columns_mut().into_iter().zip(lr.leading_values.row(best)) {
            col *= lam.max(0.0).sqrt();
        }
        Ok((emb, self.sigma_grid[best]))
    }
}

/// Residual analysis of precomputed per-layer features.
pub fn residual_curves_from_features(
    features: &[Array2<f64>],
    t: &LabelMatrix,
    sigma_grid: &[f64],
) -> Result<ResidualCurves> {
    if sigma_grid.is_empty() {
        return Err(Error::Empty("sigma grid"));
    }
    let n = t.len();
    let label_energy: f64 = t.matrix().iter().map(|v| v * v).sum();
    let mut layers = Vec::with_capacity(features.len());
    for f in features {
        if f.nrows() != n {
            return Err(Error::Dimension {
                what: "feature rows",
                expected: n,
                got: f.nrows(),
            });
        }
        let mut e = Array2::zeros((n + 1, sigma_grid.len()));
        let mut leading_values = Array2::zeros((sigma_grid.len(), 2));
        let mut leading_vectors = Vec::with_capacity(sigma_grid.len());
        for (s, &s2) in sigma_grid.iter().enumerate() {
            let eig = eigen_decompose(&rbf_kernel_matrix(f.view(), s2)?)?;
            e.column_mut(s).assign(&residual_curve(&eig, t.matrix())?);
            let lead = n.min(2);
            let mut vecs = Array2::zeros((n, 2));
            for c in 0..lead {
                leading_values[[s, c]] = eig.values[c];
                vecs.column_mut(c).assign(&eig.vectors.column(c));
            }
            leading_vectors.push(vecs);
        }
        let e_min = e.map_axis(Axis(1), |row| row.iter().copied().fold(f64::INFINITY, f64::min));
        let auc_raw = e_min.iter().skip(1).sum::<f64>() / n as f64;
        layers.push(LayerResiduals {
            e,
            e_min,
            auc_raw,
            auc: auc_raw / label_energy,
            leading_values,
            leading_vectors,
        });
    }
    Ok(ResidualCurves {
        layers,
        sigma_grid: sigma_grid.to_vec(),
        label_energy,
    })
}

/// Full analysis of a model on inputs `x` with labels `t`.
pub fn residual_curves(
    m: &Dbm2Params,
    x: ArrayView2<'_, f64>,
    t: &LabelMatrix,
    sigma_grid: &[f64],
    steps: usize,
    rng: &mut Rng,
) -> Result<ResidualCurves> {
    let features = layer_features(m, x, steps, rng)?;
    residual_curves_from_features(&features, t, sigma_grid)
}
