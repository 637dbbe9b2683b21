//! Coefficient estimators: pooled OLS, the nuclear-norm penalized estimator
//! (exact block-coordinate descent on the jointly convex objective), the
//! nuclear-norm minimizing estimator (subgradient descent plus golden-section
//! polish), and the locally iterated least-squares estimator.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernel;
use crate::objective::{self, nuclear_value_subgradient};
use crate::panel::PanelData;
use crate::tuning;

/// Condition-number ceiling for the vectorized design's Gram matrix.
const COND_LIMIT: f64 = 1e12;

#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Relative objective-decrease threshold for convergence.
    pub tol_rel: f64,
    /// Iteration cap (block sweeps / subgradient steps).
    pub max_iter: usize,
    /// Initial relative step for subgradient descent; the calibrated step is
    /// then decayed as a/(1+k).
    pub step_init: f64,
    /// Subgradient iterations without incumbent improvement before switching
    /// to the polish phase.
    pub stall_window: usize,
    /// Relative beta-movement threshold certifying a block-descent fixed
    /// point.
    pub fixed_point_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol_rel: 1e-10,
            max_iter: 10_000,
            step_init: 0.5,
            stall_window: 25,
            fixed_point_tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EstimationResult {
    pub beta: DVector<f64>,
    /// Fitted low-rank component, when the estimator defines one.
    pub gamma: Option<DMatrix<f64>>,
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub gamma_rank: usize,
    /// Set when a numerically rank-deficient residual spectrum was
    /// encountered during nuclear-norm minimization.
    pub degenerate_spectrum: bool,
}

impl EstimationResult {
    pub fn final_objective(&self) -> f64 {
        self.objective_trace.last().copied().unwrap_or(f64::NAN)
    }
}

/// Vectorized design with a cached Cholesky factor of Z'Z.
struct Design {
    z: DMatrix<f64>,
    chol: Option<nalgebra::Cholesky<f64, nalgebra::Dyn>>,
}

impl Design {
    fn build(data: &PanelData) -> Result<Self> {
        let z = data.design();
        if data.k() == 0 {
            return Ok(Design { z, chol: None });
        }
        let gram = z.transpose() * &z;
        let eig = gram.clone().symmetric_eigen();
        let max_e = eig.eigenvalues.max();
        let min_e = eig.eigenvalues.min();
        if !(min_e > 0.0) || max_e / min_e > COND_LIMIT {
            return Err(Error::Collinear(format!(
                "design Gram matrix condition number exceeds {COND_LIMIT:.0e} \
                 (eigenvalue range [{min_e:.3e}, {max_e:.3e}])"
            )));
        }
        let chol = nalgebra::Cholesky::new(gram).ok_or_else(|| {
            Error::Collinear("design Gram matrix is not positive definite".into())
        })?;
        Ok(Design { z, chol: Some(chol) })
    }

    /// Solves (Z'Z) beta = Z'rhs.
    fn regress(&self, rhs: &DVector<f64>) -> DVector<f64> {
        match &self.chol {
            Some(chol) => chol.solve(&(self.z.transpose() * rhs)),
            None => DVector::zeros(0),
        }
    }

    /// Solves (Z'Z) beta = Z'rhs - shift.
    fn regress_shifted(&self, rhs: &DVector<f64>, shift: &DVector<f64>) -> DVector<f64> {
        match &self.chol {
            Some(chol) => chol.solve(&(self.z.transpose() * rhs - shift)),
            None => DVector::zeros(0),
        }
    }
}

/// Pooled OLS on the vectorized panel; the factor structure is ignored and
/// the fitted low-rank component is zero.
pub fn pooled_ols(data: &PanelData) -> Result<EstimationResult> {
    let design = Design::build(data)?;
    let y = data.vec_y();
    let beta = design.regress(&y);
    let resid = data.residual(&beta)?;
    let obj = resid.norm_squared() / (2.0 * data.nt());
    Ok(EstimationResult {
        beta,
        gamma: Some(DMatrix::zeros(data.n(), data.t())),
        objective_trace: vec![obj],
        iterations: 1,
        converged: true,
        gamma_rank: 0,
        degenerate_spectrum: false,
    })
}

/// Anderson extrapolation over a short history of (beta, residual) pairs of
/// the block-descent fixed-point map. Returns `None` when the history is too
/// short or the least-squares step is degenerate.
fn anderson_candidate(hist: &[(DVector<f64>, DVector<f64>)]) -> Option<DVector<f64>> {
    let m = hist.len();
    if m < 2 {
        return None;
    }
    let k = hist[0].0.len();
    let cols = m - 1;
    let mut dg = DMatrix::zeros(k, cols);
    let mut db = DMatrix::zeros(k, cols);
    for j in 0..cols {
        dg.set_column(j, &(&hist[j + 1].1 - &hist[j].1));
        db.set_column(j, &(&hist[j + 1].0 - &hist[j].0));
    }
    let (b_last, g_last) = (&hist[m - 1].0, &hist[m - 1].1);
    let svd = dg.clone().svd(true, true);
    let theta = svd.solve(g_last, 1e-13).ok()?;
    let cand = b_last + g_last - (&db + &dg) * theta;
    if cand.iter().all(|v| v.is_finite()) {
        Some(cand)
    } else {
        None
    }
}

/// Nuclear-norm penalized estimation by exact block-coordinate descent:
/// alternate the closed-form beta step (least squares of Y - Gamma on X) and
/// the Gamma step (singular-value soft-thresholding of the residual at level
/// sqrt(NT) psi) until the objective stalls at a fixed point.
pub fn fit_nn_penalized(data: &PanelData, psi: f64, config: &SolverConfig) -> Result<EstimationResult> {
    fit_nn_penalized_tilted(data, psi, None, config)
}

/// Block-coordinate descent with an optional linear tilt
/// psi * (beta - beta_ref)'b added to the objective; `tilt = None` is plain
/// penalized estimation. The tilt only shifts the beta step, so the joint
/// problem stays convex.
pub fn fit_nn_penalized_tilted(
    data: &PanelData,
    psi: f64,
    tilt: Option<(&DVector<f64>, &DVector<f64>)>,
    config: &SolverConfig,
) -> Result<EstimationResult> {
    if !(psi.is_finite() && psi > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "fit_nn_penalized requires psi > 0, got {psi}"
        )));
    }
    if let Some((beta_ref, b)) = tilt {
        if beta_ref.len() != data.k() || b.len() != data.k() {
            return Err(Error::DimensionMismatch(
                "tilt vectors must have length K".into(),
            ));
        }
    }
    let nt = data.nt();
    let tau = nt.sqrt() * psi;
    let y = data.vec_y();

    let tilt_term = |beta: &DVector<f64>| -> f64 {
        match tilt {
            Some((beta_ref, b)) => psi * (beta - beta_ref).dot(b),
            None => 0.0,
        }
    };
    // Q_psi(beta) + tilt: the profiled objective used to vet extrapolated
    // candidates without forming Gamma.
    let profile = |beta: &DVector<f64>| -> Result<f64> {
        Ok(objective::penalized_profile(data, beta, psi)?.value + tilt_term(beta))
    };

    if data.k() == 0 {
        // no regressors: a single Gamma step solves the problem exactly
        let (gamma, shrunk) = kernel::soft_threshold_with_values(data.y(), tau)?;
        let gamma_rank = shrunk.iter().filter(|&&s| s > 0.0).count();
        let obj = (data.y() - &gamma).norm_squared() / (2.0 * nt)
            + psi / nt.sqrt() * shrunk.iter().sum::<f64>();
        return Ok(EstimationResult {
            beta: DVector::zeros(0),
            gamma: Some(gamma),
            objective_trace: vec![obj],
            iterations: 1,
            converged: true,
            gamma_rank,
            degenerate_spectrum: false,
        });
    }

    let design = Design::build(data)?;
    let shift = match tilt {
        Some((_, b)) => b * (nt * psi),
        None => DVector::zeros(data.k()),
    };
    let mut beta = pooled_ols(data)?.beta;
    let mut trace: Vec<f64> = Vec::new();
    let mut hist: Vec<(DVector<f64>, DVector<f64>)> = Vec::new();
    let hist_cap = (data.k() + 2).min(4);
    let mut converged = false;
    let mut iterations = 0;

    for iter in 0..config.max_iter {
        iterations = iter + 1;
        let resid = data.residual(&beta)?;
        let (gamma, shrunk) = kernel::soft_threshold_with_values(&resid, tau)?;
        let gamma_vec = DVector::from_column_slice(gamma.as_slice());
        let beta_next = design.regress_shifted(&(&y - &gamma_vec), &shift);
        let fit = data.residual(&beta_next)? - &gamma;
        let obj = fit.norm_squared() / (2.0 * nt)
            + psi / nt.sqrt() * shrunk.iter().sum::<f64>()
            + tilt_term(&beta_next);

        let step = &beta_next - &beta;
        hist.push((beta.clone(), step.clone()));
        if hist.len() > hist_cap {
            hist.remove(0);
        }

        let stalled = trace.last().is_some_and(|&prev| {
            (prev - obj).abs() <= config.tol_rel * prev.abs().max(1e-300)
        });
        trace.push(obj);
        let at_fixed_point = step.norm() <= config.fixed_point_tol * (1.0 + beta_next.norm());
        beta = beta_next;
        if stalled && at_fixed_point {
            converged = true;
            break;
        }

        // Extrapolate the fixed-point sequence; accept only candidates that
        // strictly lower the profiled objective, which keeps the trace
        // monotone and the fixed points unchanged.
        if hist.len() >= 2 {
            if let Some(cand) = anderson_candidate(&hist) {
                let current = trace.last().copied().unwrap_or(f64::INFINITY);
                if let Ok(f_cand) = profile(&cand) {
                    if f_cand < current - 1e-16 * (1.0 + current.abs()) {
                        beta = cand;
                    }
                }
            }
        }
    }

    // leave Gamma exactly equal to the soft-thresholded residual at the
    // returned beta
    let resid = data.residual(&beta)?;
    let (gamma, shrunk) = kernel::soft_threshold_with_values(&resid, tau)?;
    let gamma_rank = shrunk.iter().filter(|&&s| s > 0.0).count();
    Ok(EstimationResult {
        beta,
        gamma: Some(gamma),
        objective_trace: trace,
        iterations,
        converged,
        gamma_rank,
        degenerate_spectrum: false,
    })
}

/// Golden-section minimization of a unimodal slice. Returns the best point
/// and value found once the bracket width drops below `tol_x`.
fn golden_min<F: FnMut(f64) -> f64>(mut f: F, mut a: f64, mut b: f64, tol_x: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..200 {
        if (b - a).abs() <= tol_x {
            break;
        }
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = f(x2);
        }
    }
    if f1 <= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Coordinate-wise golden-section refinement of a convex objective. Each
/// coordinate is bracketed by doubling expansion around the incumbent and
/// then searched; sweeps repeat until no coordinate improves.
fn coordinate_polish<F>(mut eval: F, beta: &mut DVector<f64>, mut best: f64, max_sweeps: usize) -> f64
where
    F: FnMut(&DVector<f64>) -> f64,
{
    let k = beta.len();
    let mut scratch = beta.clone();
    for _ in 0..max_sweeps {
        let mut improved = false;
        for j in 0..k {
            let x0 = beta[j];
            let mut f_of = |x: f64| {
                scratch.copy_from(beta);
                scratch[j] = x;
                eval(&scratch)
            };
            // expand a bracket around the incumbent
            let mut delta = 1e-4 * (1.0 + x0.abs());
            let (lo, hi);
            let f_plus = f_of(x0 + delta);
            let f_minus = f_of(x0 - delta);
            if f_plus >= best && f_minus >= best {
                lo = x0 - delta;
                hi = x0 + delta;
            } else {
                let dir = if f_plus < f_minus { 1.0 } else { -1.0 };
                let mut f_prev = best;
                let mut x_prev = x0;
                loop {
                    let x_new = x0 + dir * delta;
                    let f_new = f_of(x_new);
                    if f_new >= f_prev || delta > 1e8 * (1.0 + x0.abs()) {
                        lo = (x_prev - dir * delta).min(x_new);
                        hi = (x_prev - dir * delta).max(x_new);
                        break;
                    }
                    x_prev = x_new;
                    f_prev = f_new;
                    delta *= 2.0;
                }
            }
            let tol_x = 1e-11 * (1.0 + x0.abs());
            let (x_star, f_star) = golden_min(&mut f_of, lo, hi, tol_x);
            if f_star < best - 1e-16 * (1.0 + best.abs()) {
                beta[j] = x_star;
                best = f_star;
                improved = true;
            }
        }
        if !improved {
            break;
        }
    }
    best
}

/// Nuclear-norm minimizing estimation: subgradient descent with a
/// backtracking-calibrated a/(1+k) step schedule, followed by coordinate-wise
/// golden-section polish of the convex objective. The low-rank component is
/// not reported (its psi -> 0 limit is the full residual).
pub fn fit_nn_min(data: &PanelData, config: &SolverConfig) -> Result<EstimationResult> {
    if data.k() == 0 {
        return Err(Error::InvalidArgument(
            "fit_nn_min requires at least one regressor".into(),
        ));
    }
    let mut beta = match pooled_ols(data) {
        Ok(r) => r.beta,
        Err(_) => DVector::zeros(data.k()),
    };
    let objective = |b: &DVector<f64>| objective::nuclear_objective(data, b);
    let (fval, mut grad, mut degenerate) = nuclear_value_subgradient(data, &beta)?;
    let mut best_beta = beta.clone();
    let mut best_f = fval;
    let mut trace = vec![best_f];
    let mut iterations = 1usize;
    let mut hit_max_iter = false;

    let grad_norm = grad.norm();
    if grad_norm > 1e-14 {
        // calibrate the base step by backtracking at the start point
        let mut a = config.step_init * (1.0 + beta.norm()) / grad_norm;
        for _ in 0..60 {
            let cand = &beta - &grad * a;
            if objective(&cand)? < fval - 1e-4 * a * grad_norm * grad_norm {
                break;
            }
            a *= 0.5;
        }

        let mut since_improvement = 0usize;
        for k in 1..=config.max_iter {
            iterations = k + 1;
            let step = a / (1.0 + k as f64);
            beta -= &grad * step;
            let (f_new, g_new, deg) = nuclear_value_subgradient(data, &beta)?;
            degenerate |= deg;
            if f_new < best_f - config.tol_rel * (1.0 + best_f.abs()) {
                since_improvement = 0;
            } else {
                since_improvement += 1;
            }
            if f_new < best_f {
                best_f = f_new;
                best_beta = beta.clone();
            }
            trace.push(best_f);
            grad = g_new;
            let gnorm = grad.norm();
            if step * gnorm <= 1e-12 * (1.0 + best_beta.norm())
                || since_improvement >= config.stall_window
            {
                break;
            }
            if k == config.max_iter {
                hit_max_iter = true;
            }
        }
    }

    let mut polished = best_beta.clone();
    let best = coordinate_polish(
        |b| objective(b).unwrap_or(f64::INFINITY),
        &mut polished,
        best_f,
        8,
    );
    if best < best_f {
        trace.push(best);
    }
    Ok(EstimationResult {
        beta: polished,
        gamma: None,
        objective_trace: trace,
        iterations,
        converged: !hit_max_iter,
        gamma_rank: 0,
        degenerate_spectrum: degenerate,
    })
}

/// The locally iterated least-squares estimator: principal-components and
/// projected-least-squares updates repeated from `beta_start` until the
/// coefficient stops moving. Converges to the local minimizer of the rank-R
/// profile objective whose basin contains the start.
pub fn fit_ls_local(
    data: &PanelData,
    rank: usize,
    beta_start: &DVector<f64>,
    config: &SolverConfig,
) -> Result<EstimationResult> {
    if rank > data.n().min(data.t()) {
        return Err(Error::InvalidArgument(format!(
            "factor rank {rank} exceeds min(N, T)"
        )));
    }
    if beta_start.len() != data.k() {
        return Err(Error::DimensionMismatch(
            "beta_start must have length K".into(),
        ));
    }
    let nt = data.nt();
    let mut beta = beta_start.clone();
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut factors = None;

    for iter in 1..=config.max_iter {
        iterations = iter;
        let resid = data.residual(&beta)?;
        let pair = tuning::pca_factors(&resid, rank)?;
        let ls_value = objective::profile_ls(data, &beta, rank)?.value;
        trace.push(ls_value);
        let beta_next = tuning::beta_step(data, &pair).map_err(|e| match e {
            Error::Collinear(msg) => {
                Error::Collinear(format!("{msg} (local LS iteration {iter})"))
            }
            other => other,
        })?;
        let moved = (&beta_next - &beta).norm();
        beta = beta_next;
        factors = Some(pair);
        if moved <= config.tol_rel * (1.0 + beta.norm()) {
            converged = true;
            break;
        }
    }
    // record the objective at the accepted point
    trace.push(objective::profile_ls(data, &beta, rank)?.value);
    let gamma = factors.map(|p| p.product());
    let _ = nt;
    Ok(EstimationResult {
        beta,
        gamma,
        objective_trace: trace,
        iterations,
        converged,
        gamma_rank: rank,
        degenerate_spectrum: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn rand_matrix(rng: &mut ChaCha12Rng, n: usize, t: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, t, |_, _| rng.random::<f64>() * 2.0 - 1.0)
    }

    #[test]
    fn pooled_ols_exact_cases() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let x1 = rand_matrix(&mut rng, 4, 5);
        let panel = PanelData::new(x1.clone() * 3.0, vec![x1], vec![], vec![]).unwrap();
        let fit = pooled_ols(&panel).unwrap();
        assert!((fit.beta[0] - 3.0).abs() < 1e-12);
        assert_eq!(fit.gamma_rank, 0);

        let ones = DMatrix::from_element(3, 3, 1.0);
        let panel = PanelData::new(ones.clone() * -2.5, vec![ones], vec![], vec![]).unwrap();
        let fit = pooled_ols(&panel).unwrap();
        assert!((fit.beta[0] + 2.5).abs() < 1e-12);
    }

    #[test]
    fn pooled_ols_recovers_noiseless_coefficients() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let x1 = rand_matrix(&mut rng, 6, 7);
        let x2 = rand_matrix(&mut rng, 6, 7);
        let y = &x1 * 1.25 - &x2 * 0.75;
        let panel = PanelData::new(y, vec![x1, x2], vec![], vec![]).unwrap();
        let fit = pooled_ols(&panel).unwrap();
        assert!((fit.beta[0] - 1.25).abs() < 1e-10);
        assert!((fit.beta[1] + 0.75).abs() < 1e-10);
    }

    #[test]
    fn pooled_ols_rejects_collinear_design() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let x1 = rand_matrix(&mut rng, 4, 4);
        let x2 = &x1 * 2.0;
        let panel = PanelData::new(rand_matrix(&mut rng, 4, 4), vec![x1, x2], vec![], vec![])
            .unwrap();
        assert!(matches!(pooled_ols(&panel), Err(Error::Collinear(_))));
    }

    #[test]
    fn nn_penalized_large_psi_degenerates_to_pooled_ols() {
        // with Gamma_0 = 0 and psi above the top scaled singular value of the
        // pooled-OLS residual, the Gamma step shrinks to exactly zero and the
        // estimator collapses to pooled OLS
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let x1 = rand_matrix(&mut rng, 6, 6);
        let noise = rand_matrix(&mut rng, 6, 6) * 0.1;
        let y = &x1 * 2.0 + &noise;
        let panel = PanelData::new(y, vec![x1], vec![], vec![]).unwrap();
        let pols = pooled_ols(&panel).unwrap();
        let resid = panel.residual(&pols.beta).unwrap();
        let psi = kernel::spectral_norm(&resid).unwrap() / panel.nt().sqrt() * 1.05;
        let fit = fit_nn_penalized(&panel, psi, &SolverConfig::default()).unwrap();
        assert_eq!(fit.gamma.as_ref().unwrap().norm(), 0.0);
        assert_eq!(fit.gamma_rank, 0);
        assert!((&fit.beta - &pols.beta).norm() < 1e-10);
        assert!(fit.converged);
    }

    #[test]
    fn nn_penalized_without_regressors_is_one_prox_step() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let y = rand_matrix(&mut rng, 5, 4);
        let panel = PanelData::new(y.clone(), vec![], vec![], vec![]).unwrap();
        let psi = 0.2;
        let fit = fit_nn_penalized(&panel, psi, &SolverConfig::default()).unwrap();
        let expect = kernel::soft_threshold(&y, panel.nt().sqrt() * psi).unwrap();
        assert!((fit.gamma.as_ref().unwrap() - expect).norm() < 1e-12);
        assert_eq!(fit.iterations, 1);
    }

    #[test]
    fn nn_penalized_beats_profile_grid() {
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let x1 = rand_matrix(&mut rng, 8, 8);
        let lam = rand_matrix(&mut rng, 8, 1);
        let f = rand_matrix(&mut rng, 8, 1);
        let y = &x1 * 1.0 + &lam * f.transpose() + rand_matrix(&mut rng, 8, 8) * 0.3;
        let panel = PanelData::new(y, vec![x1], vec![], vec![]).unwrap();
        let psi = 0.25;
        let fit = fit_nn_penalized(&panel, psi, &SolverConfig::default()).unwrap();
        let final_obj = fit.final_objective();
        let mut grid_best = f64::INFINITY;
        for i in 0..400 {
            let b = -1.0 + 4.0 * (i as f64) / 399.0;
            let v = objective::penalized_profile(&panel, &DVector::from_row_slice(&[b]), psi)
                .unwrap()
                .value;
            grid_best = grid_best.min(v);
        }
        assert!(final_obj <= grid_best + 1e-8);
    }

    #[test]
    fn nn_penalized_trace_monotone_and_certificate() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let x1 = rand_matrix(&mut rng, 10, 9);
        let lam = rand_matrix(&mut rng, 10, 2);
        let f = rand_matrix(&mut rng, 9, 2);
        let y = &x1 * 0.5 + &lam * f.transpose() + rand_matrix(&mut rng, 10, 9) * 0.2;
        let panel = PanelData::new(y, vec![x1], vec![], vec![]).unwrap();
        let psi = 0.15;
        let fit = fit_nn_penalized(&panel, psi, &SolverConfig::default()).unwrap();
        assert!(fit.converged);
        for w in fit.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
        // stationarity of the beta block at the returned pair
        let gamma = fit.gamma.as_ref().unwrap();
        let z = panel.design();
        let resid_vec = panel.vec_y()
            - &z * &fit.beta
            - DVector::from_column_slice(gamma.as_slice());
        let station = (z.transpose() * resid_vec).norm() / panel.nt();
        assert!(station <= 1e-8, "stationarity residual {station}");
        // Gamma equals the prox of the residual exactly
        let expect =
            kernel::soft_threshold(&panel.residual(&fit.beta).unwrap(), panel.nt().sqrt() * psi)
                .unwrap();
        assert_eq!((gamma - expect).norm(), 0.0);
    }

    #[test]
    fn nn_penalized_scale_equivariance() {
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let x1 = rand_matrix(&mut rng, 7, 7);
        let lam = rand_matrix(&mut rng, 7, 1);
        let f = rand_matrix(&mut rng, 7, 1);
        let y = &x1 * 0.8 + &lam * f.transpose() + rand_matrix(&mut rng, 7, 7) * 0.25;
        let c = 3.7;
        let panel = PanelData::new(y.clone(), vec![x1.clone()], vec![], vec![]).unwrap();
        let scaled = PanelData::new(y * c, vec![x1 * c], vec![], vec![]).unwrap();
        let psi = 0.2;
        let cfg = SolverConfig::default();
        let base = fit_nn_penalized(&panel, psi, &cfg).unwrap();
        let resc = fit_nn_penalized(&scaled, psi * c, &cfg).unwrap();
        assert!((&base.beta - &resc.beta).norm() < 1e-8);
    }

    #[test]
    fn nn_min_exact_fit_and_grid_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let x1 = rand_matrix(&mut rng, 6, 6);
        let panel = PanelData::new(&x1 * 1.7, vec![x1.clone()], vec![], vec![]).unwrap();
        let fit = fit_nn_min(&panel, &SolverConfig::default()).unwrap();
        assert!((fit.beta[0] - 1.7).abs() < 1e-8);
        assert!(fit.final_objective() < 1e-8);
        assert!(fit.gamma.is_none());

        // noisy instance: matches a 1e-3 grid argmin within grid resolution
        let lam = rand_matrix(&mut rng, 6, 1);
        let f = rand_matrix(&mut rng, 6, 1);
        let y = &x1 * 0.9 + &lam * f.transpose() * 1.5 + rand_matrix(&mut rng, 6, 6) * 0.2;
        let panel = PanelData::new(y, vec![x1], vec![], vec![]).unwrap();
        let fit = fit_nn_min(&panel, &SolverConfig::default()).unwrap();
        let mut best = (f64::INFINITY, f64::NAN);
        let mut b = -1.0;
        while b <= 3.0 {
            let v = objective::nuclear_objective(&panel, &DVector::from_row_slice(&[b])).unwrap();
            if v < best.0 {
                best = (v, b);
            }
            b += 1e-3;
        }
        assert!(
            (fit.beta[0] - best.1).abs() <= 1e-3,
            "solver {} vs grid argmin {}",
            fit.beta[0],
            best.1
        );
        assert!(fit.final_objective() <= best.0 + 1e-9);
    }

    #[test]
    fn nn_min_psi_continuity() {
        // beta_psi approaches beta_* as psi -> 0, monotonically in distance
        let mut rng = ChaCha12Rng::seed_from_u64(10);
        let x1 = rand_matrix(&mut rng, 8, 8);
        let lam = rand_matrix(&mut rng, 8, 1);
        let f = rand_matrix(&mut rng, 8, 1);
        let y = &x1 * 1.1 + &lam * f.transpose() + rand_matrix(&mut rng, 8, 8) * 0.3;
        let panel = PanelData::new(y, vec![x1], vec![], vec![]).unwrap();
        let cfg = SolverConfig::default();
        let star = fit_nn_min(&panel, &cfg).unwrap().beta;
        let mut prev = f64::INFINITY;
        for &psi in &[1e-2, 1e-3] {
            let b = fit_nn_penalized(&panel, psi, &cfg).unwrap().beta;
            let d = (&b - &star).norm();
            assert!(d < prev, "distance should shrink: {d} vs {prev}");
            prev = d;
        }
    }

    #[test]
    fn nn_min_scale_invariance() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let x1 = rand_matrix(&mut rng, 6, 6);
        let lam = rand_matrix(&mut rng, 6, 1);
        let f = rand_matrix(&mut rng, 6, 1);
        let y = &x1 * 0.4 + &lam * f.transpose() + rand_matrix(&mut rng, 6, 6) * 0.2;
        let c = 5.0;
        let base = PanelData::new(y.clone(), vec![x1.clone()], vec![], vec![]).unwrap();
        let scaled = PanelData::new(y * c, vec![x1 * c], vec![], vec![]).unwrap();
        let cfg = SolverConfig::default();
        let b0 = fit_nn_min(&base, &cfg).unwrap().beta;
        let b1 = fit_nn_min(&scaled, &cfg).unwrap().beta;
        assert!((&b0 - &b1).norm() < 1e-6);
    }

    #[test]
    fn ls_local_rank_zero_equals_pooled_ols() {
        let mut rng = ChaCha12Rng::seed_from_u64(12);
        let x1 = rand_matrix(&mut rng, 5, 6);
        let y = &x1 * 0.3 + rand_matrix(&mut rng, 5, 6) * 0.5;
        let panel = PanelData::new(y, vec![x1], vec![], vec![]).unwrap();
        let pols = pooled_ols(&panel).unwrap();
        let fit = fit_ls_local(&panel, 0, &DVector::from_row_slice(&[5.0]), &SolverConfig::default())
            .unwrap();
        assert!((&fit.beta - &pols.beta).norm() < 1e-12);
        assert!(fit.converged);
    }

    #[test]
    fn ls_local_noiseless_fixed_point() {
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        let x1 = rand_matrix(&mut rng, 7, 7);
        let lam = rand_matrix(&mut rng, 7, 2);
        let f = rand_matrix(&mut rng, 7, 2);
        let y = &x1 * 1.4 + &lam * f.transpose();
        let panel = PanelData::new(y, vec![x1], vec![], vec![]).unwrap();
        let start = DVector::from_row_slice(&[1.4]);
        let fit = fit_ls_local(&panel, 2, &start, &SolverConfig::default()).unwrap();
        assert!((fit.beta[0] - 1.4).abs() < 1e-10);
        assert!(fit.converged);
        assert_eq!(fit.gamma_rank, 2);
    }
}
