//! Asymptotic regret expressions, leading-order rates and Fisher block algebra.

use std::f64::consts::{E, PI};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::family::FamilySpec;

/// Fisher blocks for a parameter split into `j` shared coordinates followed by
/// `d - j` domain-specific ones.
#[derive(Debug, Clone, PartialEq)]
pub struct FisherBlocks {
    pub j: usize,
    pub i_cs: DMatrix<f64>,
    pub i_ct: DMatrix<f64>,
    pub i_s: DMatrix<f64>,
    pub i_t: DMatrix<f64>,
    pub i_cs_cross: DMatrix<f64>,
    pub i_ct_cross: DMatrix<f64>,
    pub delta_s: DMatrix<f64>,
    pub delta_t: DMatrix<f64>,
}

fn schur(c: &DMatrix<f64>, cross: &DMatrix<f64>, own: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if own.nrows() == 0 {
        return Ok(c.clone());
    }
    let chol = own.clone().cholesky().ok_or(Error::SchurUndefined("singular block"))?;
    let solved = chol.solve(&cross.transpose());
    Ok(c - cross * solved)
}

impl FisherBlocks {
    /// Splits full source and target Fisher matrices at `j`.
    pub fn from_matrices(source: &DMatrix<f64>, target: &DMatrix<f64>, j: usize) -> Result<Self> {
        let d = source.nrows();
        if source.ncols() != d || target.shape() != (d, d) {
            return Err(Error::Invalid("Fisher matrices must be square and of equal size".into()));
        }
        if j > d {
            return Err(Error::Invalid(format!("shared count {j} exceeds dimension {d}")));
        }
        let r = d - j;
        let i_cs = source.view((0, 0), (j, j)).into_owned();
        let i_ct = target.view((0, 0), (j, j)).into_owned();
        let i_s = source.view((j, j), (r, r)).into_owned();
        let i_t = target.view((j, j), (r, r)).into_owned();
        let i_cs_cross = source.view((0, j), (j, r)).into_owned();
        let i_ct_cross = target.view((0, j), (j, r)).into_owned();
        let delta_s = schur(&i_cs, &i_cs_cross, &i_s)?;
        let delta_t = schur(&i_ct, &i_ct_cross, &i_t)?;
        Ok(Self { j, i_cs, i_ct, i_s, i_t, i_cs_cross, i_ct_cross, delta_s, delta_t })
    }

    pub fn dim(&self) -> usize {
        self.j + self.i_t.nrows()
    }

    /// Fisher information of `m` source and `n` target samples for
    /// `(θc, θs-specific, θt-specific)`.
    pub fn joint_information(&self, n: f64, m: f64) -> DMatrix<f64> {
        let (j, r) = (self.j, self.i_t.nrows());
        let mut out = DMatrix::zeros(j + 2 * r, j + 2 * r);
        out.view_mut((0, 0), (j, j)).copy_from(&(&self.i_cs * m + &self.i_ct * n));
        out.view_mut((0, j), (j, r)).copy_from(&(&self.i_cs_cross * m));
        out.view_mut((j, 0), (r, j)).copy_from(&(self.i_cs_cross.transpose() * m));
        out.view_mut((0, j + r), (j, r)).copy_from(&(&self.i_ct_cross * n));
        out.view_mut((j + r, 0), (r, j)).copy_from(&(self.i_ct_cross.transpose() * n));
        out.view_mut((j, j), (r, r)).copy_from(&(&self.i_s * m));
        out.view_mut((j + r, j + r), (r, r)).copy_from(&(&self.i_t * n));
        out
    }

    /// Fisher information of `m` source samples for `(θc, θs-specific)`.
    pub fn source_information(&self, m: f64) -> DMatrix<f64> {
        let (j, r) = (self.j, self.i_t.nrows());
        let mut out = DMatrix::zeros(j + r, j + r);
        out.view_mut((0, 0), (j, j)).copy_from(&(&self.i_cs * m));
        out.view_mut((0, j), (j, r)).copy_from(&(&self.i_cs_cross * m));
        out.view_mut((j, 0), (r, j)).copy_from(&(self.i_cs_cross.transpose() * m));
        out.view_mut((j, j), (r, r)).copy_from(&(&self.i_s * m));
        out
    }

    /// `½ log det(I_j + (n/m) Δt Δs⁻¹)`; zero when `m` is infinite or `j = 0`.
    pub fn source_correction(&self, n: f64, m: f64) -> Result<f64> {
        if self.j == 0 || m.is_infinite() {
            return Ok(0.0);
        }
        let inv = self.delta_s.clone().try_inverse().ok_or(Error::SchurUndefined("singular block"))?;
        let mat = DMatrix::identity(self.j, self.j) + &self.delta_t * inv * (n / m);
        Ok(0.5 * log_det(&mat)?)
    }
}

/// Log-determinant via LU; the determinant must be positive.
pub fn log_det(m: &DMatrix<f64>) -> Result<f64> {
    if m.nrows() == 0 {
        return Ok(0.0);
    }
    let det = m.clone().lu().determinant();
    if det > 0.0 && det.is_finite() {
        Ok(det.ln())
    } else {
        Err(Error::NonFinite(format!("determinant {det} is not positive")))
    }
}

/// Blocks from the family's Fisher information at `θs*` and `θt*`, whose
/// first `j` coordinates are shared.
pub fn fisher_blocks(family: &FamilySpec, theta_s: &[f64], theta_t: &[f64], j: usize) -> Result<FisherBlocks> {
    let s = family.fisher_information(theta_s)?;
    let t = family.fisher_information(theta_t)?;
    FisherBlocks::from_matrices(&s, &t, j)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AsymptoticEstimate {
    pub n: f64,
    pub log_n_coefficient: f64,
    pub constant_term: f64,
    /// `-log ω(θt* | θs*)`.
    pub prior_term: f64,
    pub source_correction: f64,
    pub total: f64,
    /// Prior density vanishes at the truth.
    pub improper: bool,
}

impl AsymptoticEstimate {
    fn assemble(n: f64, log_n_coefficient: f64, constant_term: f64, density: f64, source_correction: f64) -> Self {
        if density <= 0.0 {
            return Self { n, log_n_coefficient, constant_term, prior_term: f64::INFINITY, source_correction, total: f64::INFINITY, improper: true };
        }
        let prior_term = -density.ln();
        let total = log_n_coefficient * n.ln() + constant_term + prior_term + source_correction;
        Self { n, log_n_coefficient, constant_term, prior_term, source_correction, total, improper: false }
    }
}

fn check_n(n: f64) -> Result<()> {
    if n >= 1.0 && n.is_finite() {
        Ok(())
    } else {
        Err(Error::Invalid(format!("sample size must be at least 1, got {n}")))
    }
}

/// `½ log(n / 2πe) + ½ log I_t - log ω(θt* | θs*)`.
pub fn otl_asymptote_scalar(n: f64, fisher: f64, prior_density: f64) -> Result<AsymptoticEstimate> {
    check_n(n)?;
    if !(fisher > 0.0 && fisher.is_finite()) {
        return Err(Error::Invalid(format!("Fisher information must be positive, got {fisher}")));
    }
    Ok(AsymptoticEstimate::assemble(n, 0.5, 0.5 * (fisher / (2.0 * PI * E)).ln(), prior_density, 0.0))
}

/// General asymptote with `j` shared coordinates and `m` source samples
/// (`m` may be infinite).
pub fn otl_asymptote_general(n: f64, m: f64, blocks: &FisherBlocks, d: usize, j: usize, prior_density: f64) -> Result<AsymptoticEstimate> {
    check_n(n)?;
    if blocks.j != j || blocks.dim() != d {
        return Err(Error::Invalid(format!("blocks have (d, j) = ({}, {}), expected ({d}, {j})", blocks.dim(), blocks.j)));
    }
    if !(m > 0.0) {
        return Err(Error::Invalid(format!("source size must be positive, got {m}")));
    }
    let r = (d - j) as f64;
    let constant = 0.5 * log_det(&blocks.i_t)? - 0.5 * r * (2.0 * PI * E).ln();
    let correction = blocks.source_correction(n, m)?;
    Ok(AsymptoticEstimate::assemble(n, 0.5 * r, constant, prior_density, correction))
}

/// Leading-order OTL regret with `m ≍ n^p`. Below `p = 1` the shared term
/// `j (1 - p) log n` is floored at its `p = 1` value `j`.
pub fn otl_rate(d: usize, j: usize, p: f64, n: f64) -> f64 {
    let (d, j) = (d as f64, j as f64);
    let shared = if p < 1.0 { j * ((1.0 - p) * n.ln()).max(1.0) } else { j / n.powf(p - 1.0) };
    shared + (d - j) * n.ln()
}

/// Leading-order ITL excess risk `(d - j)/n + j/(n ∨ n^p)`.
pub fn itl_rate(d: usize, j: usize, p: f64, n: f64) -> f64 {
    (d - j) as f64 / n + j as f64 / n.max(n.powf(p))
}

/// One episode of a time-variant target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TvtlTerm {
    pub n: f64,
    /// Coordinates shared with the source.
    pub j: usize,
    /// Coordinates shared with the previous episode.
    pub c: usize,
    pub prior_density: f64,
}

/// Time-variant bound with unit constant; `+∞` when any prior density vanishes.
pub fn tvtl_bound(episodes: &[TvtlTerm], d: usize, p: f64) -> Result<f64> {
    let l = episodes.len() as f64;
    let mut sum = 0.0;
    for e in episodes {
        check_n(e.n)?;
        if e.j + e.c > d {
            return Err(Error::Invalid(format!("j + c = {} exceeds dimension {d}", e.j + e.c)));
        }
        if e.prior_density <= 0.0 {
            return Ok(f64::INFINITY);
        }
        let rest = (d - e.j - e.c) as f64;
        sum += e.n * (e.j as f64 * e.n.powf(1.0 - p).min(1.0) + e.c as f64 + rest * e.n.ln() + 2.0 / e.prior_density);
    }
    Ok((l * sum).sqrt())
}

/// `n · KL(P_θt* ‖ P_θ̃t)`.
pub fn negative_floor(n: f64, kl: f64) -> Result<f64> {
    if kl < 0.0 || kl.is_nan() {
        return Err(Error::Invalid(format!("divergence must be nonnegative, got {kl}")));
    }
    Ok(n * kl)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_sharing_schur_is_block() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let b = FisherBlocks::from_matrices(&m, &m, 2).unwrap();
        assert_eq!(b.delta_s, m);
        assert_eq!(b.i_t.nrows(), 0);
    }

    #[test]
    fn rate_examples() {
        assert!((otl_rate(2, 1, 2.0, 100.0) - (0.01 + 100f64.ln())).abs() < 1e-12);
        assert!((itl_rate(3, 1, 0.5, 100.0) - 0.03).abs() < 1e-15);
        assert_eq!(otl_rate(3, 2, 1.0, 50.0), 2.0 + 50f64.ln());
    }
}
