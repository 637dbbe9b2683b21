//! The profile objective functions evaluated from the residual spectrum:
//! the rank-R least-squares profile L_R, its nuclear-norm-penalized convex
//! relaxation Q_psi, and the pure nuclear-norm objective together with its
//! subgradient.
//!
//! All three are functions of the singular values of (Y - beta.X)/sqrt(NT):
//!   L_R(beta)    = (1/2) sum_{r>R} s_r^2
//!   Q_psi(beta)  = sum_r q_psi(s_r)
//!   N(beta)      = sum_r s_r

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::kernel::{self, PenaltyKind, Spectrum};
use crate::panel::PanelData;

/// An objective evaluation plus the scaled residual spectrum it was computed
/// from. `implied_rank` is populated for the penalized objective only: the
/// number of singular values of the residual strictly above sqrt(NT)*psi,
/// which is the rank of the implied low-rank component.
#[derive(Debug, Clone)]
pub struct ObjectiveValue {
    pub value: f64,
    /// Singular values of (Y - beta.X)/sqrt(NT), nonincreasing.
    pub residual_spectrum: Vec<f64>,
    pub implied_rank: Option<usize>,
}

fn scaled_residual_values(data: &PanelData, beta: &DVector<f64>) -> Result<Vec<f64>> {
    let r = data.residual(beta)? / data.nt().sqrt();
    kernel::singular_values(&r)
}

/// L_R(beta): trailing squared singular values of the scaled residual,
/// halved. Equals the rank-R least-squares profile objective.
pub fn profile_ls(data: &PanelData, beta: &DVector<f64>, rank: usize) -> Result<ObjectiveValue> {
    let min_dim = data.n().min(data.t());
    if rank > min_dim {
        return Err(Error::InvalidArgument(format!(
            "profile rank {rank} exceeds min(N, T) = {min_dim}"
        )));
    }
    let values = scaled_residual_values(data, beta)?;
    let value = 0.5 * values.iter().skip(rank).map(|s| s * s).sum::<f64>();
    Ok(ObjectiveValue {
        value,
        residual_spectrum: values,
        implied_rank: None,
    })
}

/// Q_psi(beta) = q_psi((Y - beta.X)/sqrt(NT)), the convex relaxation of the
/// profile objective; equals the joint minimization over the low-rank
/// component in closed form.
pub fn penalized_profile(
    data: &PanelData,
    beta: &DVector<f64>,
    psi: f64,
) -> Result<ObjectiveValue> {
    if !(psi.is_finite() && psi > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "penalized profile requires psi > 0, got {psi}"
        )));
    }
    let values = scaled_residual_values(data, beta)?;
    let value = kernel::penalty_of_values(&values, psi, PenaltyKind::Q)?;
    let implied_rank = values.iter().filter(|&&s| s > psi).count();
    Ok(ObjectiveValue {
        value,
        residual_spectrum: values,
        implied_rank: Some(implied_rank),
    })
}

/// ||Y - beta.X||_* / sqrt(NT).
pub fn nuclear_objective(data: &PanelData, beta: &DVector<f64>) -> Result<f64> {
    Ok(scaled_residual_values(data, beta)?.iter().sum())
}

/// A subgradient of the scaled nuclear-norm objective:
/// g_k = -tr(X_k' U V')/sqrt(NT), with UV' taken over the numerically
/// nonzero singular block of the residual. At residuals with full-rank,
/// distinct spectrum this is the exact gradient. A zero residual returns the
/// zero vector (any subgradient is valid there).
pub fn nuclear_subgradient(data: &PanelData, beta: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(nuclear_value_subgradient(data, beta)?.1)
}

/// Objective value and subgradient from one decomposition; also reports
/// whether the residual spectrum was numerically rank-deficient.
pub(crate) fn nuclear_value_subgradient(
    data: &PanelData,
    beta: &DVector<f64>,
) -> Result<(f64, DVector<f64>, bool)> {
    let sqrt_nt = data.nt().sqrt();
    let resid = data.residual(beta)?;
    let spec = Spectrum::compute(&resid)?;
    let value = spec.values().iter().sum::<f64>() / sqrt_nt;
    let rank = spec.rank();
    let degenerate = rank < spec.values().len();
    let mut grad = DVector::zeros(data.k());
    if rank > 0 {
        let u = spec.left_vectors().columns(0, rank);
        let v = spec.right_vectors().columns(0, rank);
        let uvt = u * v.transpose();
        for k in 0..data.k() {
            grad[k] = -(data.x_k(k).transpose() * &uvt).trace() / sqrt_nt;
        }
    }
    Ok((value, grad, degenerate))
}
