//! Dense linear-algebra kernel: SVD with fixed conventions, Schatten norms,
//! projectors, scalar penalty functions and singular-value soft-thresholding.
//!
//! Everything downstream (objectives, estimators, tuning, diagnostics) is
//! built on these primitives. All functions are pure.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative tolerance used for numerical rank decisions: a singular value
/// counts as nonzero when it exceeds `max(N, T) * s_1 * RANK_RTOL`.
pub const RANK_RTOL: f64 = 1e-12;

fn check_finite(a: &DMatrix<f64>, what: &str) -> Result<()> {
    if a.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// Thin singular value decomposition with deterministic conventions:
/// singular values sorted nonincreasing, and each left singular vector's
/// first entry of magnitude above 1e-12 made nonnegative (the paired right
/// vector is flipped with it).
#[derive(Debug, Clone)]
pub struct Spectrum {
    values: Vec<f64>,
    left: DMatrix<f64>,
    right: DMatrix<f64>,
}

impl Spectrum {
    pub fn compute(a: &DMatrix<f64>) -> Result<Self> {
        if a.nrows() == 0 || a.ncols() == 0 {
            return Err(Error::InvalidArgument(
                "svd requires min(N, T) >= 1".into(),
            ));
        }
        check_finite(a, "svd input")?;
        let svd = a.clone().svd(true, true);
        let values: Vec<f64> = svd.singular_values.iter().copied().collect();
        let mut left = svd.u.expect("svd requested u");
        let v_t = svd.v_t.expect("svd requested v_t");
        let mut right = v_t.transpose();
        // nalgebra returns values sorted nonincreasing; fix the sign
        // convention so results are reproducible across inputs that differ
        // only by singular-vector sign flips.
        for r in 0..values.len() {
            let mut flip = false;
            for i in 0..left.nrows() {
                let v = left[(i, r)];
                if v.abs() > 1e-12 {
                    flip = v < 0.0;
                    break;
                }
            }
            if flip {
                for i in 0..left.nrows() {
                    left[(i, r)] = -left[(i, r)];
                }
                for j in 0..right.nrows() {
                    right[(j, r)] = -right[(j, r)];
                }
            }
        }
        Ok(Spectrum {
            values,
            left,
            right,
        })
    }

    /// Singular values, nonincreasing.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// N x q block of left singular vectors.
    pub fn left_vectors(&self) -> &DMatrix<f64> {
        &self.left
    }

    /// T x q block of right singular vectors.
    pub fn right_vectors(&self) -> &DMatrix<f64> {
        &self.right
    }

    /// U diag(s) V'.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let s = DMatrix::from_diagonal(&DVector::from_row_slice(&self.values));
        &self.left * s * self.right.transpose()
    }

    /// Numerical rank with tolerance `max(N, T) * s_1 * 1e-12`.
    pub fn rank(&self) -> usize {
        self.values
            .iter()
            .filter(|&&s| s > self.rank_tolerance())
            .count()
    }

    /// The absolute threshold below which singular values are treated as zero.
    pub fn rank_tolerance(&self) -> f64 {
        let s1 = self.values.first().copied().unwrap_or(0.0);
        self.left.nrows().max(self.right.nrows()) as f64 * s1 * RANK_RTOL
    }
}

/// Sorted (nonincreasing) singular values without vectors. Cheaper than
/// [`Spectrum::compute`]; used on solver hot paths.
pub fn singular_values(a: &DMatrix<f64>) -> Result<Vec<f64>> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Err(Error::InvalidArgument(
            "svd requires min(N, T) >= 1".into(),
        ));
    }
    check_finite(a, "svd input")?;
    Ok(a.clone().singular_values().iter().copied().collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchattenOrder {
    /// Sum of singular values.
    Nuclear,
    /// Root of the sum of squared singular values.
    Frobenius,
    /// Largest singular value.
    Spectral,
}

pub fn schatten_norm(a: &DMatrix<f64>, order: SchattenOrder) -> Result<f64> {
    check_finite(a, "schatten_norm input")?;
    match order {
        SchattenOrder::Frobenius => Ok(a.norm()),
        SchattenOrder::Nuclear => Ok(singular_values(a)?.iter().sum()),
        SchattenOrder::Spectral => Ok(singular_values(a)?.first().copied().unwrap_or(0.0)),
    }
}

pub fn nuclear_norm(a: &DMatrix<f64>) -> Result<f64> {
    schatten_norm(a, SchattenOrder::Nuclear)
}

pub fn spectral_norm(a: &DMatrix<f64>) -> Result<f64> {
    schatten_norm(a, SchattenOrder::Spectral)
}

/// The pair (P_A, M_A): orthogonal projector onto the column span of `A`,
/// and its complement I - P_A.
#[derive(Debug, Clone)]
pub struct Projectors {
    pub onto: DMatrix<f64>,
    pub orthogonal: DMatrix<f64>,
}

/// P_A = A (A'A)^+ A' via the SVD of `A`; a zero-column `A` yields P = 0 and
/// M = I.
pub fn projector_pair(a: &DMatrix<f64>) -> Result<Projectors> {
    let n = a.nrows();
    if a.ncols() == 0 {
        return Ok(Projectors {
            onto: DMatrix::zeros(n, n),
            orthogonal: DMatrix::identity(n, n),
        });
    }
    let spec = Spectrum::compute(a)?;
    let tol = spec.rank_tolerance();
    let cols: Vec<usize> = (0..spec.values.len())
        .filter(|&r| spec.values[r] > tol)
        .collect();
    let mut onto = DMatrix::zeros(n, n);
    if !cols.is_empty() {
        let u = spec.left.select_columns(cols.iter());
        onto = &u * u.transpose();
    }
    let orthogonal = DMatrix::identity(n, n) - &onto;
    Ok(Projectors { onto, orthogonal })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PenaltyKind {
    /// Hard-threshold penalty: s^2/2 below psi, 0 above.
    Ell,
    /// Its convex continuation: s^2/2 below psi, psi*s - psi^2/2 above.
    Q,
    /// q rescaled by 1/psi, with g_0(s) = s.
    G,
}

/// Scalar penalty applied to one singular value.
pub fn penalty_scalar(s: f64, psi: f64, kind: PenaltyKind) -> Result<f64> {
    if !(s.is_finite() && psi.is_finite()) || s < 0.0 || psi < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "penalty requires s >= 0 and psi >= 0, got s={s}, psi={psi}"
        )));
    }
    match kind {
        PenaltyKind::Ell => {
            if psi == 0.0 {
                return Err(Error::InvalidArgument(
                    "ell penalty requires psi > 0".into(),
                ));
            }
            Ok(if s < psi { 0.5 * s * s } else { 0.0 })
        }
        PenaltyKind::Q => {
            if psi == 0.0 {
                return Err(Error::InvalidArgument("q penalty requires psi > 0".into()));
            }
            Ok(if s < psi {
                0.5 * s * s
            } else {
                psi * s - 0.5 * psi * psi
            })
        }
        PenaltyKind::G => {
            if psi == 0.0 {
                Ok(s)
            } else if s < psi {
                Ok(0.5 * s * s / psi)
            } else {
                Ok(s - 0.5 * psi)
            }
        }
    }
}

/// Matrix penalty: the scalar penalty summed over all singular values.
pub fn penalty_matrix(a: &DMatrix<f64>, psi: f64, kind: PenaltyKind) -> Result<f64> {
    let values = singular_values(a)?;
    let mut acc = 0.0;
    for s in values {
        acc += penalty_scalar(s, psi, kind)?;
    }
    Ok(acc)
}

/// Same as [`penalty_matrix`] but applied to precomputed singular values.
pub fn penalty_of_values(values: &[f64], psi: f64, kind: PenaltyKind) -> Result<f64> {
    let mut acc = 0.0;
    for &s in values {
        acc += penalty_scalar(s, psi, kind)?;
    }
    Ok(acc)
}

/// Singular-value soft-thresholding U diag((s_r - psi)+) V': the proximal
/// operator of psi * nuclear norm, i.e. the argmin over G of
/// (1/2) ||A - G||_F^2 + psi ||G||_*.
pub fn soft_threshold(a: &DMatrix<f64>, psi: f64) -> Result<DMatrix<f64>> {
    Ok(soft_threshold_with_values(a, psi)?.0)
}

/// Soft-thresholding that also returns the shrunken singular values, so
/// callers can reuse ||G||_* and rank(G) without a second decomposition.
pub fn soft_threshold_with_values(a: &DMatrix<f64>, psi: f64) -> Result<(DMatrix<f64>, Vec<f64>)> {
    if !(psi.is_finite() && psi > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "soft_threshold requires psi > 0, got {psi}"
        )));
    }
    let spec = Spectrum::compute(a)?;
    let shrunk: Vec<f64> = spec.values.iter().map(|&s| (s - psi).max(0.0)).collect();
    let kept = shrunk.iter().filter(|&&s| s > 0.0).count();
    if kept == 0 {
        return Ok((DMatrix::zeros(a.nrows(), a.ncols()), shrunk));
    }
    let u = spec.left.columns(0, kept);
    let v = spec.right.columns(0, kept);
    let s = DMatrix::from_diagonal(&DVector::from_row_slice(&shrunk[..kept]));
    Ok((u * s * v.transpose(), shrunk))
}
