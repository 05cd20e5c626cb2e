//! Fréchet distance between Gaussian fits, posterior KL and inception score.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub const COV_REG: f64 = 1e-6;
pub const PROB_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianStats {
    pub fn new(mean: Vec<f64>, cov: Vec<f64>) -> Result<Self> {
        let d = mean.len();
        if cov.len() != d * d {
            return Err(Error::shape("gaussian stats", format!("mean dim {d}, covariance has {} entries", cov.len())));
        }
        Ok(Self { mean: DVector::from_vec(mean), cov: DMatrix::from_row_slice(d, d, &cov) })
    }

    /// Sample mean and unbiased covariance (zero covariance for one row).
    pub fn from_samples(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::Empty("embedding set"));
        }
        let d = rows[0].len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::shape("gaussian stats", "ragged embedding rows"));
        }
        let mut mean = DVector::zeros(d);
        for r in rows {
            mean += DVector::from_column_slice(r);
        }
        mean /= n as f64;
        let mut cov = DMatrix::zeros(d, d);
        if n > 1 {
            for r in rows {
                let c = DVector::from_column_slice(r) - &mean;
                cov += &c * c.transpose();
            }
            cov /= (n - 1) as f64;
        }
        Ok(Self { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

fn regularized(cov: &DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let d = cov.nrows();
    let sym = (cov + cov.transpose()) * 0.5 + DMatrix::identity(d, d) * COV_REG;
    let eig = SymmetricEigen::new(sym);
    if let Some(&min) = eig.eigenvalues.iter().min_by(|a, b| a.total_cmp(b)) {
        if min < 0.0 {
            return Err(Error::InvalidArgument(format!("covariance not PSD after regularization (eigenvalue {min:e})")));
        }
    }
    Ok(eig)
}

fn sqrt_psd(eig: &SymmetricEigen<f64, nalgebra::Dyn>) -> DMatrix<f64> {
    let s = eig.eigenvalues.map(|x| x.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&s) * eig.eigenvectors.transpose()
}

/// `‖μa−μb‖² + Tr(Σa + Σb − 2(ΣaΣb)^{1/2})`. The trace of the product root
/// is taken from the symmetric form `Σa^{1/2} Σb Σa^{1/2}`.
pub fn frechet(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::shape("frechet", format!("dims {} vs {}", a.dim(), b.dim())));
    }
    let ea = regularized(&a.cov)?;
    let eb = regularized(&b.cov)?;
    let sa = sqrt_psd(&ea);
    let cb = &eb.eigenvectors * DMatrix::from_diagonal(&eb.eigenvalues) * eb.eigenvectors.transpose();
    let inner = &sa * cb * &sa;
    let inner = (&inner + inner.transpose()) * 0.5;
    let tr_sqrt: f64 = SymmetricEigen::new(inner).eigenvalues.iter().map(|x| x.max(0.0).sqrt()).sum();
    let tr_a: f64 = ea.eigenvalues.iter().sum();
    let tr_b: f64 = eb.eigenvalues.iter().sum();
    let diff = (&a.mean - &b.mean).norm_squared();
    Ok((diff + tr_a + tr_b - 2.0 * tr_sqrt).max(0.0))
}

fn check_rows(p: &[Vec<f64>], what: &'static str) -> Result<()> {
    for (i, r) in p.iter().enumerate() {
        let s: f64 = r.iter().sum();
        if (s - 1.0).abs() > 1e-5 || r.iter().any(|&x| x < 0.0 || !x.is_finite()) {
            return Err(Error::InvalidArgument(format!("{what} row {i} is not a distribution (sum {s})")));
        }
    }
    Ok(())
}

fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi.max(PROB_FLOOR).ln() - qi.max(PROB_FLOOR).ln()))
        .sum()
}

/// Mean over paired rows of `KL(ref_i ‖ gen_i)`.
pub fn kl_metric(gen: &[Vec<f64>], reference: &[Vec<f64>]) -> Result<f64> {
    if gen.len() != reference.len() || gen.is_empty() {
        return Err(Error::shape("kl_metric", format!("{} generated vs {} reference rows", gen.len(), reference.len())));
    }
    check_rows(gen, "generated posterior")?;
    check_rows(reference, "reference posterior")?;
    let total: f64 = gen.iter().zip(reference).map(|(g, r)| kl(r, g)).sum();
    Ok((total / gen.len() as f64).max(0.0))
}

/// `exp(mean_i KL(p_i ‖ p̄))`.
pub fn inception_score(p: &[Vec<f64>]) -> Result<f64> {
    if p.is_empty() {
        return Err(Error::Empty("posterior set"));
    }
    check_rows(p, "posterior")?;
    let c = p[0].len();
    let mut mean = vec![0.0; c];
    for r in p {
        for (m, &x) in mean.iter_mut().zip(r) {
            *m += x / p.len() as f64;
        }
    }
    let avg: f64 = p.iter().map(|r| kl(r, &mean)).sum::<f64>() / p.len() as f64;
    Ok(avg.max(0.0).exp())
}
