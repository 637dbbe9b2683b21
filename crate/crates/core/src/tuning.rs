//! The finite post-estimation iteration (principal components plus a
//! projected least-squares coefficient update) and the data-dependent tuning
//! rules for the penalty level and the factor count.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::estimators::{self, EstimationResult, SolverConfig};
use crate::kernel::{self, Spectrum, RANK_RTOL};
use crate::panel::PanelData;

/// Estimated loadings (N x R) and factors (T x R), normalized so that
/// f'f/T = I and lambda'lambda is diagonal with nonincreasing entries.
#[derive(Debug, Clone)]
pub struct FactorPair {
    pub loadings: DMatrix<f64>,
    pub factors: DMatrix<f64>,
}

impl FactorPair {
    pub fn rank(&self) -> usize {
        self.loadings.ncols()
    }

    /// lambda f', the fitted low-rank matrix.
    pub fn product(&self) -> DMatrix<f64> {
        &self.loadings * self.factors.transpose()
    }
}

/// Output of the penalty-selection procedure.
#[derive(Debug, Clone)]
pub struct TuningReport {
    pub psi_hat: f64,
    /// Estimated factor count from thresholding the residual spectrum.
    pub r_hat: usize,
    /// Singular values of the nuclear-norm-minimizer residual.
    pub residual_spectrum: Vec<f64>,
    /// Singular values after removing `r_max` principal components.
    pub cleaned_spectrum: Vec<f64>,
    pub r_max: usize,
    /// sqrt(N*T) of the panel the report was computed from.
    pub sqrt_nt: f64,
}

/// Top-R principal components of a residual matrix, repackaged as a
/// normalized loading/factor pair; lambda f' is the best rank-R Frobenius
/// approximation.
pub fn pca_factors(residual: &DMatrix<f64>, rank: usize) -> Result<FactorPair> {
    let (n, t) = (residual.nrows(), residual.ncols());
    if rank > n.min(t) {
        return Err(Error::InvalidArgument(format!(
            "factor rank {rank} exceeds min(N, T) = {}",
            n.min(t)
        )));
    }
    if rank == 0 {
        return Ok(FactorPair {
            loadings: DMatrix::zeros(n, 0),
            factors: DMatrix::zeros(t, 0),
        });
    }
    let spec = Spectrum::compute(residual)?;
    let u = spec.left_vectors().columns(0, rank);
    let v = spec.right_vectors().columns(0, rank);
    let sqrt_t = (t as f64).sqrt();
    let s = DMatrix::from_diagonal(&DVector::from_fn(rank, |r, _| spec.values()[r] / sqrt_t));
    Ok(FactorPair {
        loadings: u * s,
        factors: v * sqrt_t,
    })
}

/// The projected least-squares coefficient update
/// beta = (x'(M_f (x) M_lambda) x)^{-1} x'(M_f (x) M_lambda) y, computed
/// without forming the NT x NT Kronecker operator by applying
/// M_lambda Z M_f matrix-wise.
pub fn beta_step(data: &PanelData, factors: &FactorPair) -> Result<DVector<f64>> {
    let k = data.k();
    if factors.loadings.nrows() != data.n() || factors.factors.nrows() != data.t() {
        return Err(Error::DimensionMismatch(
            "factor pair dimensions do not match the panel".into(),
        ));
    }
    let m_lambda = kernel::projector_pair(&factors.loadings)?.orthogonal;
    let m_f = kernel::projector_pair(&factors.factors)?.orthogonal;
    let nt = data.nt();

    // projected regressors M_lambda X_k M_f
    let projected: Vec<DMatrix<f64>> = (0..k)
        .map(|j| &m_lambda * data.x_k(j) * &m_f)
        .collect();
    let mut w = DMatrix::zeros(k, k);
    let mut v = DVector::zeros(k);
    for a in 0..k {
        for b in a..k {
            // tr(X_a' M_lambda X_b M_f) / NT; projecting one side twice is
            // harmless because the projectors are idempotent
            let val = projected[a].dot(data.x_k(b)) / nt;
            w[(a, b)] = val;
            w[(b, a)] = val;
        }
        v[a] = projected[a].dot(data.y()) / nt;
    }
    if k == 0 {
        return Ok(v);
    }
    let eig = w.clone().symmetric_eigen();
    let max_e = eig.eigenvalues.max();
    let min_e = eig.eigenvalues.min();
    if !(min_e > 0.0) || max_e / min_e > 1e12 {
        return Err(Error::Collinear(format!(
            "projected design x'(M_f (x) M_lambda)x is numerically singular \
             (eigenvalue range [{min_e:.3e}, {max_e:.3e}])"
        )));
    }
    nalgebra::Cholesky::new(w)
        .map(|c| c.solve(&v))
        .ok_or_else(|| Error::Collinear("projected design not positive definite".into()))
}

/// One run of the finite iteration with its full coefficient path.
#[derive(Debug, Clone)]
pub struct PostIteration {
    /// beta^(0) .. beta^(steps); entry 0 is the start value.
    pub trajectory: Vec<DVector<f64>>,
    pub result: EstimationResult,
}

/// Alternates `pca_factors` on Y - beta.X and `beta_step`, for a fixed
/// number of steps, recording the whole trajectory.
pub fn post_iterate(
    data: &PanelData,
    rank: usize,
    beta0: &DVector<f64>,
    steps: usize,
) -> Result<PostIteration> {
    if steps == 0 {
        return Err(Error::InvalidArgument("post_iterate requires steps >= 1".into()));
    }
    if beta0.len() != data.k() {
        return Err(Error::DimensionMismatch("beta0 must have length K".into()));
    }
    let mut trajectory = vec![beta0.clone()];
    let mut trace = Vec::new();
    let mut beta = beta0.clone();
    let mut factors = None;
    for _ in 0..steps {
        let resid = data.residual(&beta)?;
        let pair = pca_factors(&resid, rank)?;
        trace.push(crate::objective::profile_ls(data, &beta, rank)?.value);
        beta = beta_step(data, &pair)?;
        trajectory.push(beta.clone());
        factors = Some(pair);
    }
    trace.push(crate::objective::profile_ls(data, &beta, rank)?.value);
    let gamma = factors.map(|p| p.product());
    Ok(PostIteration {
        result: EstimationResult {
            beta,
            gamma,
            objective_trace: trace,
            iterations: steps,
            converged: true,
            gamma_rank: rank,
            degenerate_spectrum: false,
        },
        trajectory,
    })
}

/// Data-dependent penalty choice: fit the nuclear-norm minimizer, strip
/// `r_max` principal components from its residual, and set
/// psi_hat = 2 ||cleaned residual||_inf / sqrt(NT). With no regressors the
/// raw outcome matrix plays the role of the residual.
pub fn select_psi(data: &PanelData, r_max: usize, config: &SolverConfig) -> Result<TuningReport> {
    let beta_star = if data.k() == 0 {
        DVector::zeros(0)
    } else {
        estimators::fit_nn_min(data, config)?.beta
    };
    select_psi_from(data, &beta_star, r_max)
}

/// Same as [`select_psi`] but reusing an already-computed nuclear-norm
/// minimizer.
pub fn select_psi_from(
    data: &PanelData,
    beta_star: &DVector<f64>,
    r_max: usize,
) -> Result<TuningReport> {
    let resid = data.residual(beta_star)?;
    let residual_spectrum = kernel::singular_values(&resid)?;
    let pair = pca_factors(&resid, r_max.min(data.n().min(data.t())))?;
    let cleaned = &resid - pair.product();
    let cleaned_spectrum = kernel::singular_values(&cleaned)?;
    let sqrt_nt = data.nt().sqrt();
    let psi_hat = 2.0 * cleaned_spectrum.first().copied().unwrap_or(0.0) / sqrt_nt;
    let mut report = TuningReport {
        psi_hat,
        r_hat: 0,
        residual_spectrum,
        cleaned_spectrum,
        r_max,
        sqrt_nt,
    };
    report.r_hat = estimate_rank(&report, 2.0);
    Ok(report)
}

/// Counts the residual singular values at or above
/// `threshold_factor * sqrt(NT) * psi_hat`. The threshold is floored at the
/// numerical-rank tolerance so a noiseless panel (psi_hat = 0) reports
/// rank(Gamma_0) rather than min(N, T).
pub fn estimate_rank(report: &TuningReport, threshold_factor: f64) -> usize {
    let s1 = report.residual_spectrum.first().copied().unwrap_or(0.0);
    let numerical_floor = report.sqrt_nt * s1 * RANK_RTOL;
    let threshold = (threshold_factor * report.sqrt_nt * report.psi_hat).max(numerical_floor);
    report
        .residual_spectrum
        .iter()
        .filter(|&&s| s >= threshold)
        .count()
}
