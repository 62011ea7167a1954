//! PCA by thin SVD of the (weighted, centered) data matrix.
//!
//! `D = T Pᵀ` with loadings `P = V` and scores `T = U Σ`; component variances
//! are `λ = s² / (m − 1)`.

use faer::Mat;
use ndarray::{Array1, Array2, Axis};

use crate::containers::{fmt_f64, write_csv, DataMatrix};
use crate::error::{Error, Result};
use crate::preprocess::{CenterModel, Prepared, WeightModel};

/// The SVD splits its work into this many tasks whatever the size of the
/// worker pool, so results are bit-identical for any thread count.
const SVD_TASKS: usize = 8;

#[derive(Debug, Clone)]
pub struct PcaModel {
    /// n × r, orthonormal columns.
    pub loadings: Array2<f64>,
    /// m × r.
    pub scores: Array2<f64>,
    /// Non-increasing, length r.
    pub variances: Array1<f64>,
    pub singular_values: Array1<f64>,
    pub center: CenterModel,
    pub weights: WeightModel,
}

impl PcaModel {
    pub fn m(&self) -> usize {
        self.scores.nrows()
    }

    pub fn n(&self) -> usize {
        self.loadings.nrows()
    }

    pub fn r(&self) -> usize {
        self.variances.len()
    }

    /// Model restricted to the leading `k` components.
    pub fn leading(&self, k: usize) -> Result<Self> {
        if k > self.r() {
            return Err(Error::KOutOfRange { k, r: self.r() });
        }
        Ok(Self {
            loadings: self.loadings.slice(ndarray::s![.., ..k]).to_owned(),
            scores: self.scores.slice(ndarray::s![.., ..k]).to_owned(),
            variances: self.variances.slice(ndarray::s![..k]).to_owned(),
            singular_values: self.singular_values.slice(ndarray::s![..k]).to_owned(),
            center: self.center.clone(),
            weights: self.weights.clone(),
        })
    }
}

/// Decompose an already weighted and centered matrix.
///
/// The attached center/weight models are neutral; use [`decompose`] to carry
/// the preprocessing along for reconstruction.
pub fn pca_decompose(matrix: &DataMatrix) -> Result<PcaModel> {
    let (m, n) = matrix.values.dim();
    svd_model(&matrix.values, CenterModel::zeros(n), WeightModel::identity(m, n))
}

pub fn decompose(prep: &Prepared) -> Result<PcaModel> {
    svd_model(&prep.input.values, prep.center.clone(), prep.weights.clone())
}

fn svd_model(values: &Array2<f64>, center: CenterModel, weights: WeightModel) -> Result<PcaModel> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("PCA input"));
    }
    let (m, n) = values.dim();
    if m < 2 || n == 0 {
        return Err(Error::DimensionMismatch(format!("PCA needs m ≥ 2 and n ≥ 1, got {m}x{n}")));
    }
    static FIXED_SPLIT: std::sync::Once = std::sync::Once::new();
    FIXED_SPLIT.call_once(|| faer::set_global_parallelism(faer::Par::rayon(SVD_TASKS)));
    let a = Mat::<f64>::from_fn(m, n, |i, j| values[[i, j]]);
    let svd = a.thin_svd().map_err(|e| Error::InvalidParameter(format!("SVD did not converge: {e:?}")))?;
    let (u, v) = (svd.U(), svd.V());
    let s = svd.S().column_vector();
    let r = m.min(n);

    // faer returns singular values in non-increasing order already
    let singular_values = Array1::from_shape_fn(r, |k| s[k]);
    let mut loadings = Array2::from_shape_fn((n, r), |(i, k)| v[(i, k)]);
    let mut scores = Array2::from_shape_fn((m, r), |(i, k)| u[(i, k)] * s[k]);
    for k in 0..r {
        let col = loadings.column(k);
        let peak = col.iter().copied().fold(0.0f64, |best, x| if x.abs() > best.abs() { x } else { best });
        if peak < 0.0 {
            loadings.column_mut(k).mapv_inplace(|x| -x);
            scores.column_mut(k).mapv_inplace(|x| -x);
        }
    }
    let variances = singular_values.mapv(|s| s * s / (m - 1) as f64);
    Ok(PcaModel { loadings, scores, variances, singular_values, center, weights })
}

/// `(index, λ)` pairs with 1-based indices.
pub fn scree(model: &PcaModel) -> Vec<(usize, f64)> {
    model.variances.iter().enumerate().map(|(i, &l)| (i + 1, l)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProximitySeries {
    /// Reference component (0-based).
    pub k: usize,
    /// `phi[l]` = squared projection of test loading `l` on reference loading `k`.
    pub phi: Vec<f64>,
    /// True when the test loadings span the whole channel space.
    pub complete: bool,
}

impl ProximitySeries {
    pub fn sum(&self) -> f64 {
        self.phi.iter().sum()
    }

    pub fn argmax(&self) -> usize {
        self.phi.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i).unwrap_or(0)
    }

    pub fn max(&self) -> f64 {
        self.phi.iter().copied().fold(0.0, f64::max)
    }
}

pub fn proximity(test: &PcaModel, reference: &PcaModel, k: usize) -> Result<ProximitySeries> {
    if test.n() != reference.n() {
        return Err(Error::ChannelMismatch { test: test.n(), reference: reference.n() });
    }
    if k >= reference.r() {
        return Err(Error::KOutOfRange { k, r: reference.r().saturating_sub(1) });
    }
    let target = reference.loadings.column(k);
    let phi = test.loadings.axis_iter(Axis(1)).map(|p| p.dot(&target).powi(2)).collect();
    Ok(ProximitySeries { k, phi, complete: test.r() == test.n() })
}

pub fn write_scree_csv(path: impl AsRef<std::path::Path>, model: &PcaModel) -> Result<()> {
    write_csv(path, "index,variance", scree(model).into_iter().map(|(i, l)| vec![i.to_string(), fmt_f64(l)]))
}
