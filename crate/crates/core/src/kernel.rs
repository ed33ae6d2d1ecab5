//! Radial kernels and the closed-form kernel machine.
//!
//! Every kernel here depends on its inputs only through d = ‖z − z*‖ and is
//! normalized so that K(z, z) = 1. The fitted values at the design points are
//! ĥ = λ⁻¹K(I + λ⁻¹K)⁻¹ỹ_c, where ỹ_c is the mean-centered response; the mean
//! is kept as the intercept and added back when scoring.

use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::csv_io;
use crate::error::{Error, Result};
use crate::linalg::{mat_vec, sq_dist, Cholesky};

const SOLVE_JITTER: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaternSmoothness {
    Half,
    ThreeHalves,
    FiveHalves,
}

impl MaternSmoothness {
    pub fn nu(&self) -> f64 {
        match self {
            MaternSmoothness::Half => 0.5,
            MaternSmoothness::ThreeHalves => 1.5,
            MaternSmoothness::FiveHalves => 2.5,
        }
    }

    pub fn from_nu(nu: f64) -> Result<Self> {
        match nu {
            0.5 => Ok(MaternSmoothness::Half),
            1.5 => Ok(MaternSmoothness::ThreeHalves),
            2.5 => Ok(MaternSmoothness::FiveHalves),
            _ => Err(Error::InvalidArgument(format!(
                "Matérn smoothness must be 0.5, 1.5 or 2.5 (got {nu})"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum KernelSpec {
    /// exp(−d²/ρ)
    Gaussian { rho: f64 },
    /// (2^{1−ν}/Γ(ν)) (d/c)^ν K_ν(d/c), half-integer ν only.
    Matern { c: f64, nu: MaternSmoothness },
    /// [1 + (d/c)^α]^{−τ/α}
    GeneralizedCauchy { c: f64, alpha: f64, tau: f64 },
    /// exp(−(d/c)^α)
    PoweredExponential { c: f64, alpha: f64 },
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} must be > 0, got {v}")))
    }
}

fn shape(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 2.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("alpha must lie in (0, 2], got {alpha}")))
    }
}

impl KernelSpec {
    pub fn gaussian(rho: f64) -> Result<Self> {
        positive("rho", rho)?;
        Ok(KernelSpec::Gaussian { rho })
    }

    pub fn matern(c: f64, nu: f64) -> Result<Self> {
        positive("c", c)?;
        Ok(KernelSpec::Matern {
            c,
            nu: MaternSmoothness::from_nu(nu)?,
        })
    }

    pub fn generalized_cauchy(c: f64, alpha: f64, tau: f64) -> Result<Self> {
        positive("c", c)?;
        positive("tau", tau)?;
        shape(alpha)?;
        Ok(KernelSpec::GeneralizedCauchy { c, alpha, tau })
    }

    pub fn powered_exponential(c: f64, alpha: f64) -> Result<Self> {
        positive("c", c)?;
        shape(alpha)?;
        Ok(KernelSpec::PoweredExponential { c, alpha })
    }

    /// Re-checks parameter ranges; specs built from public fields bypass the
    /// constructors.
    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Gaussian { rho } => positive("rho", rho),
            KernelSpec::Matern { c, .. } => positive("c", c),
            KernelSpec::GeneralizedCauchy { c, alpha, tau } => {
                positive("c", c)?;
                positive("tau", tau)?;
                shape(alpha)
            }
            KernelSpec::PoweredExponential { c, alpha } => {
                positive("c", c)?;
                shape(alpha)
            }
        }
    }

    pub fn family_name(&self) -> &'static str {
        match self {
            KernelSpec::Gaussian { .. } => "gaussian",
            KernelSpec::Matern { .. } => "matern",
            KernelSpec::GeneralizedCauchy { .. } => "generalized_cauchy",
            KernelSpec::PoweredExponential { .. } => "powered_exponential",
        }
    }

    /// Kernel value as a function of the squared distance.
    pub fn eval_sq_dist(&self, d2: f64) -> f64 {
        match *self {
            KernelSpec::Gaussian { rho } => (-d2 / rho).exp(),
            KernelSpec::Matern { c, nu } => {
                let r = d2.sqrt() / c;
                match nu {
                    MaternSmoothness::Half => (-r).exp(),
                    MaternSmoothness::ThreeHalves => (1.0 + r) * (-r).exp(),
                    MaternSmoothness::FiveHalves => (1.0 + r + r * r / 3.0) * (-r).exp(),
                }
            }
            KernelSpec::GeneralizedCauchy { c, alpha, tau } => {
                let r = d2.sqrt() / c;
                (1.0 + r.powf(alpha)).powf(-tau / alpha)
            }
            KernelSpec::PoweredExponential { c, alpha } => {
                let r = d2.sqrt() / c;
                (-r.powf(alpha)).exp()
            }
        }
    }
}

impl std::fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            KernelSpec::Gaussian { rho } => write!(f, "gaussian(rho={rho})"),
            KernelSpec::Matern { c, nu } => write!(f, "matern(c={c},nu={})", nu.nu()),
            KernelSpec::GeneralizedCauchy { c, alpha, tau } => {
                write!(f, "generalized_cauchy(c={c},alpha={alpha},tau={tau})")
            }
            KernelSpec::PoweredExponential { c, alpha } => {
                write!(f, "powered_exponential(c={c},alpha={alpha})")
            }
        }
    }
}

pub fn kernel_eval(spec: &KernelSpec, z: &[f64], zstar: &[f64]) -> Result<f64> {
    if z.len() != zstar.len() {
        return Err(Error::DimensionMismatch {
            expected: z.len(),
            found: zstar.len(),
        });
    }
    Ok(spec.eval_sq_dist(sq_dist(z, zstar)))
}

fn rows_of(z: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..z.nrows())
        .map(|i| z.row(i).iter().copied().collect())
        .collect()
}

/// Gram matrix G_ij = K(Z_i, Z_j). Each pair is evaluated once and mirrored,
/// so G is bit-exactly symmetric with unit diagonal.
pub fn gram(spec: &KernelSpec, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    spec.validate()?;
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("kernel inputs must be finite".into()));
    }
    let rows = rows_of(z);
    let n = rows.len();
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            ((i + 1)..n)
                .map(|j| spec.eval_sq_dist(sq_dist(&rows[i], &rows[j])))
                .collect()
        })
        .collect();
    let mut g = DMatrix::identity(n, n);
    for (i, row) in upper.iter().enumerate() {
        for (k, &v) in row.iter().enumerate() {
            let j = i + 1 + k;
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    Ok(g)
}

/// Median of the squared pairwise distances between rows (i < j).
pub fn median_heuristic_rho(z: &DMatrix<f64>) -> Result<f64> {
    let rows = rows_of(z);
    let n = rows.len();
    if n < 2 {
        return Err(Error::InvalidArgument("median heuristic needs at least 2 rows".into()));
    }
    let mut d2: Vec<f64> = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            d2.push(sq_dist(&rows[i], &rows[j]));
        }
    }
    let m = d2.len();
    d2.sort_by(f64::total_cmp);
    let median = if m % 2 == 1 {
        d2[m / 2]
    } else {
        0.5 * (d2[m / 2 - 1] + d2[m / 2])
    };
    if median > 0.0 {
        Ok(median)
    } else {
        Err(Error::Numerical(
            "median squared distance is zero; rows are mostly duplicates".into(),
        ))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelModel {
    pub spec: KernelSpec,
    /// n×p training covariates.
    pub training_inputs: DMatrix<f64>,
    /// Dual coefficients; ĥ = K·alpha.
    pub alpha: Vec<f64>,
    pub intercept: f64,
    pub lambda: f64,
    /// ĥ at the design points.
    pub fitted: Vec<f64>,
}

impl KernelModel {
    pub fn p(&self) -> usize {
        self.training_inputs.ncols()
    }

    pub fn n(&self) -> usize {
        self.training_inputs.nrows()
    }
}

/// Solves (I + λ⁻¹K)u = ỹ_c with a Cholesky factorization (retried once with
/// 1e-10 diagonal jitter), then ĥ = λ⁻¹K u and alpha = λ⁻¹u.
pub fn fit_kernel_machine_gram(
    k: &DMatrix<f64>,
    contrast: &[f64],
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    let n = k.nrows();
    if contrast.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: contrast.len(),
        });
    }
    if n < 2 {
        return Err(Error::InvalidArgument(format!("kernel machine needs n ≥ 2, got {n}")));
    }
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!("lambda must be > 0, got {lambda}")));
    }
    if contrast.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("response must be finite".into()));
    }
    let intercept = contrast.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = contrast.iter().map(|y| y - intercept).collect();
    let mut system = k / lambda;
    for i in 0..n {
        system[(i, i)] += 1.0;
    }
    let chol = match Cholesky::factor(&system) {
        Some(c) => c,
        None => {
            for i in 0..n {
                system[(i, i)] += SOLVE_JITTER;
            }
            Cholesky::factor(&system).ok_or_else(|| {
                Error::Numerical("kernel system is not positive definite after jitter".into())
            })?
        }
    };
    let u = chol.solve(&centered);
    let alpha: Vec<f64> = u.iter().map(|v| v / lambda).collect();
    let fitted = mat_vec(k, &alpha);
    if fitted.iter().chain(&alpha).any(|v| !v.is_finite()) {
        return Err(Error::Numerical("kernel solve produced non-finite values".into()));
    }
    Ok((alpha, fitted, intercept))
}

pub fn fit_kernel_machine(
    z: &DMatrix<f64>,
    contrast: &[f64],
    spec: KernelSpec,
    lambda: f64,
) -> Result<KernelModel> {
    if contrast.len() != z.nrows() {
        return Err(Error::DimensionMismatch {
            expected: z.nrows(),
            found: contrast.len(),
        });
    }
    let k = gram(&spec, z)?;
    let (alpha, fitted, intercept) = fit_kernel_machine_gram(&k, contrast, lambda)?;
    Ok(KernelModel {
        spec,
        training_inputs: z.clone(),
        alpha,
        intercept,
        lambda,
        fitted,
    })
}

/// intercept + Σ_i alpha_i K(Z_i, z).
pub fn score_nonlinear(model: &KernelModel, z: &[f64]) -> Result<f64> {
    if z.len() != model.p() {
        return Err(Error::DimensionMismatch {
            expected: model.p(),
            found: z.len(),
        });
    }
    let x = &model.training_inputs;
    let mut row = vec![0.0; x.ncols()];
    let mut s = 0.0;
    for i in 0..x.nrows() {
        for (j, r) in row.iter_mut().enumerate() {
            *r = x[(i, j)];
        }
        s += model.alpha[i] * model.spec.eval_sq_dist(sq_dist(&row, z));
    }
    Ok(model.intercept + s)
}

/// Writes `id,score` rows.
pub fn write_scores_csv<W: Write>(ids: &[&str], scores: &[f64], writer: W) -> Result<()> {
    if ids.len() != scores.len() {
        return Err(Error::DimensionMismatch {
            expected: ids.len(),
            found: scores.len(),
        });
    }
    let mut wtr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    wtr.write_record(["id", "score"]).map_err(csv_io)?;
    for (id, s) in ids.iter().zip(scores) {
        wtr.write_record([id.to_string(), s.to_string()]).map_err(csv_io)?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_at_zero_distance() {
        let specs = [
            KernelSpec::gaussian(0.7).unwrap(),
            KernelSpec::matern(1.3, 0.5).unwrap(),
            KernelSpec::matern(1.3, 1.5).unwrap(),
            KernelSpec::matern(1.3, 2.5).unwrap(),
            KernelSpec::generalized_cauchy(2.0, 1.0, 3.0).unwrap(),
            KernelSpec::powered_exponential(0.4, 1.5).unwrap(),
        ];
        let z = [0.3, -2.0, 5.5];
        for s in specs {
            assert_eq!(kernel_eval(&s, &z, &z).unwrap(), 1.0, "{s}");
        }
    }

    #[test]
    fn powered_exponential_two_is_gaussian() {
        let rho: f64 = 2.7;
        let g = KernelSpec::gaussian(rho).unwrap();
        let pe = KernelSpec::powered_exponential(rho.sqrt(), 2.0).unwrap();
        let a = [0.1, 0.9, -1.2];
        let b = [1.4, -0.3, 0.0];
        let l = kernel_eval(&g, &a, &b).unwrap();
        let r = kernel_eval(&pe, &a, &b).unwrap();
        assert!((l - r).abs() < 1e-14, "{l} vs {r}");
    }

    #[test]
    fn parameter_ranges_enforced() {
        assert!(KernelSpec::gaussian(0.0).is_err());
        assert!(KernelSpec::matern(1.0, 1.0).is_err());
        assert!(KernelSpec::matern(-1.0, 0.5).is_err());
        assert!(KernelSpec::generalized_cauchy(1.0, 2.5, 1.0).is_err());
        assert!(KernelSpec::generalized_cauchy(1.0, 2.0, 0.0).is_err());
        assert!(KernelSpec::powered_exponential(1.0, 0.0).is_err());
        assert!(KernelSpec::powered_exponential(1.0, 2.0).is_ok());
        assert!(KernelSpec::Gaussian { rho: -1.0 }.validate().is_err());
    }

    #[test]
    fn dimension_mismatch() {
        let g = KernelSpec::gaussian(1.0).unwrap();
        assert!(kernel_eval(&g, &[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn gram_is_symmetric_with_unit_diagonal() {
        let z = DMatrix::from_fn(7, 2, |i, j| ((i * 5 + j * 3) % 7) as f64 * 0.3);
        let g = gram(&KernelSpec::matern(0.8, 1.5).unwrap(), &z).unwrap();
        assert_eq!(g, g.transpose());
        assert!(g.diagonal().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn identity_kernel_shrinks_by_one_plus_lambda() {
        // K = I: ĥ = ỹ_c / (1 + λ)
        let k = DMatrix::identity(4, 4);
        let y = [1.0, 3.0, -2.0, 6.0];
        let lambda = 0.5;
        let (_, fitted, intercept) = fit_kernel_machine_gram(&k, &y, lambda).unwrap();
        assert_eq!(intercept, 2.0);
        for (h, yi) in fitted.iter().zip(&y) {
            assert!((h - (yi - 2.0) / 1.5).abs() < 1e-14);
        }
    }

    #[test]
    fn huge_lambda_shrinks_to_intercept() {
        let z = DMatrix::from_fn(10, 2, |i, j| (i as f64) * 0.1 + j as f64);
        let y: Vec<f64> = (0..10).map(|i| (i as f64).cos()).collect();
        let m = fit_kernel_machine(&z, &y, KernelSpec::gaussian(1.0).unwrap(), 1e12).unwrap();
        assert!(m.fitted.iter().all(|h| h.abs() < 1e-9));
        let s = score_nonlinear(&m, &[0.33, 1.2]).unwrap();
        assert!((s - m.intercept).abs() < 1e-9);
    }

    #[test]
    fn zero_alpha_scores_intercept() {
        let m = KernelModel {
            spec: KernelSpec::gaussian(1.0).unwrap(),
            training_inputs: DMatrix::from_fn(3, 2, |i, j| (i + j) as f64),
            alpha: vec![0.0; 3],
            intercept: -0.75,
            lambda: 1.0,
            fitted: vec![0.0; 3],
        };
        assert_eq!(score_nonlinear(&m, &[9.0, -9.0]).unwrap(), -0.75);
        assert!(score_nonlinear(&m, &[9.0]).is_err());
    }

    #[test]
    fn rejects_bad_lambda() {
        let z = DMatrix::from_fn(3, 1, |i, _| i as f64);
        let spec = KernelSpec::gaussian(1.0).unwrap();
        assert!(fit_kernel_machine(&z, &[1.0, 2.0, 3.0], spec, 0.0).is_err());
        assert!(fit_kernel_machine(&z, &[1.0, 2.0], spec, 1.0).is_err());
    }

    #[test]
    fn median_heuristic_small() {
        // squared distances: 1, 4, 9 → median 4
        let z = DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 3.0]);
        assert_eq!(median_heuristic_rho(&z).unwrap(), 4.0);
    }
}
