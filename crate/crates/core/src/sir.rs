//! Sliced inverse regression of the imputed contrast on the covariates.

use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{csv_io, TrialDataset};
use crate::error::{Error, Result};
use crate::linalg::symmetric_eigen;

/// Smallest admissible eigenvalue of the (ridged) covariance.
const EIGEN_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct Whitening {
    pub mu: Vec<f64>,
    /// Symmetric (Σ̂ + ridge·I)^{-1/2}.
    pub whitener: DMatrix<f64>,
    /// Rows are the whitened covariates.
    pub ztilde: DMatrix<f64>,
}

/// Sample covariance with divisor n − 1.
pub fn sample_covariance(z: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = z.nrows();
    let p = z.ncols();
    let mu: Vec<f64> = (0..p).map(|j| z.column(j).sum() / n as f64).collect();
    let mut cov = DMatrix::zeros(p, p);
    for i in 0..n {
        for a in 0..p {
            let da = z[(i, a)] - mu[a];
            for b in a..p {
                cov[(a, b)] += da * (z[(i, b)] - mu[b]);
            }
        }
    }
    let denom = (n - 1) as f64;
    for a in 0..p {
        for b in a..p {
            cov[(a, b)] /= denom;
            cov[(b, a)] = cov[(a, b)];
        }
    }
    (mu, cov)
}

/// 1e-8 · trace(Σ̂) / p.
pub fn default_ridge(z: &DMatrix<f64>) -> f64 {
    let (_, cov) = sample_covariance(z);
    1e-8 * cov.trace() / z.ncols() as f64
}

/// Centers and whitens the rows of `z`: Z̃ᵢ = (Σ̂ + ridge·I)^{-1/2}(Zᵢ − μ̂).
pub fn whiten(z: &DMatrix<f64>, ridge: f64) -> Result<Whitening> {
    let n = z.nrows();
    let p = z.ncols();
    if n < 2 || p == 0 {
        return Err(Error::InvalidArgument(format!(
            "whitening needs n ≥ 2 and p ≥ 1 (got n = {n}, p = {p})"
        )));
    }
    if !(ridge >= 0.0) || !ridge.is_finite() {
        return Err(Error::InvalidArgument(format!("ridge must be ≥ 0, got {ridge}")));
    }
    let (mu, mut cov) = sample_covariance(z);
    for a in 0..p {
        cov[(a, a)] += ridge;
    }
    let eig = symmetric_eigen(&cov)?;
    let smallest = eig.values[p - 1];
    if smallest < EIGEN_FLOOR {
        return Err(Error::Singular(format!(
            "covariance has eigenvalue {smallest:e} < {EIGEN_FLOOR:e}; increase the ridge"
        )));
    }
    let inv_sqrt = DMatrix::from_fn(p, p, |k, k2| {
        if k == k2 {
            1.0 / eig.values[k].sqrt()
        } else {
            0.0
        }
    });
    let whitener = &eig.vectors * inv_sqrt * eig.vectors.transpose();
    let centered = DMatrix::from_fn(n, p, |i, j| z[(i, j)] - mu[j]);
    // whitener is symmetric, so rows transform as (W·c)ᵀ = cᵀ·W
    let ztilde = centered * &whitener;
    Ok(Whitening {
        mu,
        whitener,
        ztilde,
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SliceAssignment {
    /// Slice index per subject, in subject order.
    pub labels: Vec<usize>,
    /// Members per slice; slices ordered by increasing contrast.
    pub sizes: Vec<usize>,
}

/// Sorts contrasts ascending (stable, ties by original index) and cuts them
/// into `d` near-equal slices; the first n mod d slices get one extra member.
pub fn slice(contrast: &[f64], d: usize) -> Result<SliceAssignment> {
    let n = contrast.len();
    if d < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 slices, got {d}")));
    }
    if d > n {
        return Err(Error::InvalidArgument(format!(
            "number of slices {d} exceeds number of subjects {n}"
        )));
    }
    if contrast.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("contrasts must be finite".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| contrast[a].total_cmp(&contrast[b]));
    let base = n / d;
    let extra = n % d;
    let sizes: Vec<usize> = (0..d).map(|j| base + usize::from(j < extra)).collect();
    let mut labels = vec![0; n];
    let mut pos = 0;
    for (j, &size) in sizes.iter().enumerate() {
        for &i in &order[pos..pos + size] {
            labels[i] = j;
        }
        pos += size;
    }
    Ok(SliceAssignment { labels, sizes })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SirConfig {
    pub slices: usize,
    /// `None` selects 1e-8 · trace(Σ̂)/p.
    pub ridge: Option<f64>,
}

impl Default for SirConfig {
    fn default() -> Self {
        SirConfig {
            slices: 10,
            ridge: None,
        }
    }
}

/// Fitted SIR: whitening transform, slice-mean covariance Θ̂ and its
/// eigen-directions mapped back to covariate coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionModel {
    pub covariate_names: Vec<String>,
    pub mu: Vec<f64>,
    pub whitener: DMatrix<f64>,
    pub theta: DMatrix<f64>,
    /// Non-increasing.
    pub eigenvalues: Vec<f64>,
    /// Unit-norm directions in original covariate coordinates; the largest-
    /// magnitude component of each is positive.
    pub directions: Vec<Vec<f64>>,
    pub n_slices: usize,
}

impl DirectionModel {
    pub fn p(&self) -> usize {
        self.mu.len()
    }

    pub fn leading_direction(&self) -> &[f64] {
        &self.directions[0]
    }

    /// Writes one row per direction: covariate coefficients then the eigenvalue.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(writer);
        let mut header: Vec<String> = self.covariate_names.clone();
        header.push("eigenvalue".into());
        wtr.write_record(&header).map_err(csv_io)?;
        for (dir, value) in self.directions.iter().zip(&self.eigenvalues) {
            let mut row: Vec<String> = dir.iter().map(f64::to_string).collect();
            row.push(value.to_string());
            wtr.write_record(&row).map_err(csv_io)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Θ̂ = Σ_j (n_j/n) Z̄_j Z̄_jᵀ from whitened rows and a slice assignment.
pub fn slice_mean_covariance(ztilde: &DMatrix<f64>, slices: &SliceAssignment) -> DMatrix<f64> {
    let n = ztilde.nrows();
    let p = ztilde.ncols();
    let d = slices.sizes.len();
    let mut sums = DMatrix::<f64>::zeros(d, p);
    for i in 0..n {
        let j = slices.labels[i];
        for k in 0..p {
            sums[(j, k)] += ztilde[(i, k)];
        }
    }
    let mut theta = DMatrix::zeros(p, p);
    for j in 0..d {
        let nj = slices.sizes[j] as f64;
        let weight = nj / n as f64;
        for a in 0..p {
            let ma = sums[(j, a)] / nj;
            for b in a..p {
                theta[(a, b)] += weight * ma * (sums[(j, b)] / nj);
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            theta[(a, b)] = theta[(b, a)];
        }
    }
    theta
}

fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for (k, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = k;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

pub fn fit_sir(data: &TrialDataset, contrast: &[f64], config: &SirConfig) -> Result<DirectionModel> {
    fit_sir_matrix(&data.covariates(), data.covariate_names().to_vec(), contrast, config)
}

pub fn fit_sir_matrix(
    z: &DMatrix<f64>,
    covariate_names: Vec<String>,
    contrast: &[f64],
    config: &SirConfig,
) -> Result<DirectionModel> {
    if contrast.len() != z.nrows() {
        return Err(Error::DimensionMismatch {
            expected: z.nrows(),
            found: contrast.len(),
        });
    }
    if covariate_names.len() != z.ncols() {
        return Err(Error::DimensionMismatch {
            expected: z.ncols(),
            found: covariate_names.len(),
        });
    }
    let ridge = config.ridge.unwrap_or_else(|| default_ridge(z));
    let w = whiten(z, ridge)?;
    let slices = slice(contrast, config.slices)?;
    let theta = slice_mean_covariance(&w.ztilde, &slices);
    let eig = symmetric_eigen(&theta)?;
    let p = z.ncols();
    let directions = (0..p)
        .map(|k| {
            let v = &w.whitener * eig.vectors.column(k);
            let norm = v.norm();
            if !(norm > 0.0) {
                return Err(Error::Numerical("degenerate SIR direction".into()));
            }
            let mut dir: Vec<f64> = v.iter().map(|x| x / norm).collect();
            fix_sign(&mut dir);
            Ok(dir)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DirectionModel {
        covariate_names,
        mu: w.mu,
        whitener: w.whitener,
        theta,
        eigenvalues: eig.values,
        directions,
        n_slices: config.slices,
    })
}

/// Risk score `direction[which] · z` in original covariate coordinates.
pub fn score_linear(model: &DirectionModel, z: &[f64], which: usize) -> Result<f64> {
    let dir = model.directions.get(which).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "direction index {which} out of range ({} directions)",
            model.directions.len()
        ))
    })?;
    if z.len() != dir.len() {
        return Err(Error::DimensionMismatch {
            expected: dir.len(),
            found: z.len(),
        });
    }
    Ok(dir.iter().zip(z).map(|(a, b)| a * b).sum())
}
