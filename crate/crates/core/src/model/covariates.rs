//! Min-max normalization followed by a scaled thin QR of the design matrix.
//!
//! Coefficients are sampled on `Q* = Q √(n−1)`; `β = R*⁻¹ θ̃` maps them back to
//! the normalized covariate scale, with `R* = R / √(n−1)`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CovariatePreprocess {
    pub column_mins: Vec<f64>,
    pub column_ranges: Vec<f64>,
    pub q_star: DMatrix<f64>,
    pub r_star: DMatrix<f64>,
    pub r_star_inverse: DMatrix<f64>,
}

impl CovariatePreprocess {
    pub fn p(&self) -> usize {
        self.column_mins.len()
    }

    /// Applies the stored min-max map to `x`.
    pub fn normalize(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.p() {
            return Err(Error::DimensionMismatch(format!(
                "design has {} columns, preprocessing expects {}",
                x.ncols(),
                self.p()
            )));
        }
        let mut out = x.clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            col.apply(|v| *v = (*v - self.column_mins[j]) / self.column_ranges[j]);
        }
        Ok(out)
    }

    /// `β = R*⁻¹ θ̃`.
    pub fn recover_beta(&self, theta_tilde: &[f64]) -> Result<Vec<f64>> {
        self.check_len(theta_tilde.len())?;
        Ok(mat_vec(&self.r_star_inverse, theta_tilde))
    }

    /// `θ̃ = R* β`, the inverse of [`recover_beta`](Self::recover_beta).
    pub fn theta_from_beta(&self, beta: &[f64]) -> Result<Vec<f64>> {
        self.check_len(beta.len())?;
        Ok(mat_vec(&self.r_star, beta))
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.p() {
            return Err(Error::DimensionMismatch(format!(
                "coefficient vector has length {len}, expected {}",
                self.p()
            )));
        }
        Ok(())
    }
}

fn mat_vec(m: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)] * v[j]).sum())
        .collect()
}

pub fn preprocess_covariates(x: &DMatrix<f64>) -> Result<CovariatePreprocess> {
    let (n, p) = x.shape();
    if p == 0 {
        return Err(Error::InvalidParameter("design matrix has no columns".into()));
    }
    if n <= p {
        return Err(Error::RankDeficient);
    }
    let mut column_mins = Vec::with_capacity(p);
    let mut column_ranges = Vec::with_capacity(p);
    for (j, col) in x.column_iter().enumerate() {
        let lo = col.min();
        let hi = col.max();
        let range = hi - lo;
        if !(range > 0.0) {
            return Err(Error::ConstantColumn(j));
        }
        column_mins.push(lo);
        column_ranges.push(range);
    }

    let mut normalized = x.clone();
    for (j, mut col) in normalized.column_iter_mut().enumerate() {
        col.apply(|v| *v = (*v - column_mins[j]) / column_ranges[j]);
    }

    let qr = normalized.qr();
    let mut q = qr.q();
    let mut r = qr.r();
    // Fix signs so that diag(R) > 0.
    for k in 0..p {
        if r[(k, k)] < 0.0 {
            r.row_mut(k).neg_mut();
            q.column_mut(k).neg_mut();
        }
    }
    let max_diag = (0..p).map(|k| r[(k, k)]).fold(0.0, f64::max);
    if (0..p).any(|k| r[(k, k)] <= 1e-10 * max_diag) {
        return Err(Error::RankDeficient);
    }

    let scale = ((n - 1) as f64).sqrt();
    let q_star = q * scale;
    let r_star = r / scale;
    let r_star_inverse = r_star
        .clone()
        .try_inverse()
        .ok_or(Error::RankDeficient)?;

    Ok(CovariatePreprocess {
        column_mins,
        column_ranges,
        q_star,
        r_star,
        r_star_inverse,
    })
}

pub fn recover_beta(theta_tilde: &[f64], preproc: &CovariatePreprocess) -> Result<Vec<f64>> {
    preproc.recover_beta(theta_tilde)
}
