//! Identification and regularity diagnostics: the nuclear-norm margin that
//! certifies unique separation of the regression part from the factor
//! structure, the restricted-strong-convexity lower bound schedule, and
//! objective landscape scans.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::kernel::{self, Projectors};
use crate::objective;
use crate::panel::PanelData;

/// Result of minimizing
/// (||M_l (a.X) M_f||_* - ||P_l (a.X) P_f||_*) / sqrt(NT) over unit vectors
/// `a`. A positive margin certifies identification of the coefficients.
#[derive(Debug, Clone)]
pub struct IdentificationReport {
    pub margin: f64,
    pub argmin_alpha: DVector<f64>,
    pub grid_resolution: usize,
}

fn margin_at(
    x: &[DMatrix<f64>],
    alpha: &DVector<f64>,
    pl: &Projectors,
    pf: &Projectors,
    sqrt_nt: f64,
) -> Result<f64> {
    let (n, t) = (x[0].nrows(), x[0].ncols());
    let mut combo = DMatrix::zeros(n, t);
    for (k, xk) in x.iter().enumerate() {
        combo += xk * alpha[k];
    }
    let unexplained = &pl.orthogonal * &combo * &pf.orthogonal;
    let absorbed = &pl.onto * &combo * &pf.onto;
    Ok((kernel::nuclear_norm(&unexplained)? - kernel::nuclear_norm(&absorbed)?) / sqrt_nt)
}

/// Deterministic low-discrepancy points on the unit sphere in R^K: a
/// Kronecker sequence pushed through the standard normal quantile and
/// normalized. For K = 2 a uniform angular grid is used instead.
fn sphere_grid(k: usize, count: usize) -> Vec<DVector<f64>> {
    if k == 2 {
        return (0..count)
            .map(|i| {
                let theta = std::f64::consts::PI * (i as f64) / (count as f64);
                DVector::from_row_slice(&[theta.cos(), theta.sin()])
            })
            .collect();
    }
    let normal = Normal::new(0.0, 1.0).unwrap();
    // irrational strides from successive square roots of primes
    let primes = [2.0f64, 3.0, 5.0, 7.0, 11.0, 13.0, 17.0, 19.0, 23.0, 29.0];
    let mut points = Vec::with_capacity(count);
    for i in 0..count {
        let mut v = DVector::zeros(k);
        for j in 0..k {
            let stride = primes[j % primes.len()].sqrt();
            let u = ((i as f64 + 0.5) * stride).fract().clamp(1e-12, 1.0 - 1e-12);
            v[j] = normal.inverse_cdf(u);
        }
        let norm = v.norm();
        if norm > 1e-12 {
            points.push(v / norm);
        }
    }
    points
}

/// Minimizes the identification margin over the unit sphere. K = 1 is exact
/// (the margin is even in alpha); K > 1 uses a low-discrepancy grid of
/// `grid` points followed by coordinate refinement.
pub fn identification_margin(
    x: &[DMatrix<f64>],
    lambda0: &DMatrix<f64>,
    f0: &DMatrix<f64>,
    grid: usize,
) -> Result<IdentificationReport> {
    let k = x.len();
    if k == 0 {
        return Err(Error::InvalidArgument(
            "identification margin requires K >= 1".into(),
        ));
    }
    let (n, t) = (x[0].nrows(), x[0].ncols());
    if lambda0.nrows() != n || f0.nrows() != t {
        return Err(Error::DimensionMismatch(
            "factor matrices do not match the regressors".into(),
        ));
    }
    let pl = kernel::projector_pair(lambda0)?;
    let pf = kernel::projector_pair(f0)?;
    let sqrt_nt = ((n * t) as f64).sqrt();

    if k == 1 {
        let alpha = DVector::from_row_slice(&[1.0]);
        let margin = margin_at(x, &alpha, &pl, &pf, sqrt_nt)?;
        return Ok(IdentificationReport {
            margin,
            argmin_alpha: alpha,
            grid_resolution: 2,
        });
    }

    let grid = grid.max(8);
    let mut best_alpha = DVector::zeros(k);
    best_alpha[0] = 1.0;
    let mut best = margin_at(x, &best_alpha, &pl, &pf, sqrt_nt)?;
    for alpha in sphere_grid(k, grid) {
        let m = margin_at(x, &alpha, &pl, &pf, sqrt_nt)?;
        if m < best {
            best = m;
            best_alpha = alpha;
        }
    }
    // coordinate refinement with shrinking perturbation
    let mut delta = 2.0 / (grid as f64).sqrt();
    for _ in 0..60 {
        let mut improved = false;
        for j in 0..k {
            for sign in [-1.0, 1.0] {
                let mut cand = best_alpha.clone();
                cand[j] += sign * delta;
                let norm = cand.norm();
                if norm < 1e-12 {
                    continue;
                }
                cand /= norm;
                let m = margin_at(x, &cand, &pl, &pf, sqrt_nt)?;
                if m < best - 1e-14 {
                    best = m;
                    best_alpha = cand;
                    improved = true;
                }
            }
        }
        if !improved {
            delta *= 0.6;
            if delta < 1e-8 {
                break;
            }
        }
    }
    Ok(IdentificationReport {
        margin: best,
        argmin_alpha: best_alpha,
        grid_resolution: grid,
    })
}

/// Restricted-strong-convexity lower bound for a single regressor: the
/// (a(q), b(q)) schedule built from the singular values of M_l X M_f, with
/// mu = min_q [ a(q) + max(0, b(q))^2 ].
#[derive(Debug, Clone)]
pub struct RscReport {
    pub mu_bound: f64,
    /// (q, a(q), b(q)) for q = 1 .. min(N,T) - R0.
    pub q_schedule: Vec<(usize, f64, f64)>,
    pub r0_used: usize,
}

pub fn rsc_lower_bound(
    x: &DMatrix<f64>,
    lambda0: &DMatrix<f64>,
    f0: &DMatrix<f64>,
) -> Result<RscReport> {
    if lambda0.ncols() != f0.ncols() {
        return Err(Error::DimensionMismatch(
            "lambda0 and f0 must have the same number of columns".into(),
        ));
    }
    let r0 = lambda0.ncols();
    if r0 == 0 {
        // the cone degenerates to {0}; any curvature constant works
        return Ok(RscReport {
            mu_bound: f64::INFINITY,
            q_schedule: Vec::new(),
            r0_used: 0,
        });
    }
    let (n, t) = (x.nrows(), x.ncols());
    if lambda0.nrows() != n || f0.nrows() != t {
        return Err(Error::DimensionMismatch(
            "factor matrices do not match the regressor".into(),
        ));
    }
    let nt = (n * t) as f64;
    let pl = kernel::projector_pair(lambda0)?;
    let pf = kernel::projector_pair(f0)?;
    let projected = &pl.orthogonal * x * &pf.orthogonal;
    let s = kernel::singular_values(&projected)?;
    let spillover = (x - &projected).norm();

    let min_dim = n.min(t);
    let q_max = min_dim.saturating_sub(r0).max(1).min(min_dim);
    let suffix_sq = {
        // suffix_sq[i] = sum_{r >= i} s_r^2 (0-based)
        let mut acc = vec![0.0; s.len() + 1];
        for i in (0..s.len()).rev() {
            acc[i] = acc[i + 1] + s[i] * s[i];
        }
        acc
    };
    let mut prefix = vec![0.0; s.len() + 1];
    for i in 0..s.len() {
        prefix[i + 1] = prefix[i] + s[i];
    }

    let mut schedule = Vec::with_capacity(q_max);
    let mut mu = f64::INFINITY;
    for q in 1..=q_max {
        let s_q = s[q - 1];
        let a = ((q as f64 - 1.0) * s_q * s_q + suffix_sq[q - 1]) / nt;
        let gap_sum = if q >= 3 {
            // sum_{r=1}^{q-2} (s_r - s_q)
            prefix[q - 2] - (q as f64 - 2.0) * s_q
        } else {
            0.0
        };
        let b = (gap_sum / (3.0 * (2.0 * r0 as f64).sqrt()) - spillover) / nt.sqrt();
        schedule.push((q, a, b));
        mu = mu.min(a + b.max(0.0).powi(2));
    }
    Ok(RscReport {
        mu_bound: mu,
        q_schedule: schedule,
        r0_used: r0,
    })
}

/// One grid point of an objective landscape scan.
#[derive(Debug, Clone)]
pub struct ScanRow {
    pub beta: Vec<f64>,
    pub ls_value: f64,
    pub penalized_value: f64,
}

#[derive(Debug, Clone)]
pub struct ScanTable {
    pub rows: Vec<ScanRow>,
    /// Indices of strict interior local minima of L_R (K = 1 grids only).
    pub ls_local_minima: Vec<usize>,
    /// Indices of strict interior local minima of Q_psi (K = 1 grids only).
    pub penalized_local_minima: Vec<usize>,
    /// Interior plateau points (ties with a neighbor); reported, not counted.
    pub plateau_ties: usize,
}

/// Strict three-point local minima of a sampled curve; ties with either
/// neighbor are excluded and tallied separately.
fn interior_local_minima(values: &[f64]) -> (Vec<usize>, usize) {
    let mut minima = Vec::new();
    let mut ties = 0;
    for i in 1..values.len().saturating_sub(1) {
        if values[i] < values[i - 1] && values[i] < values[i + 1] {
            minima.push(i);
        } else if values[i] == values[i - 1] || values[i] == values[i + 1] {
            ties += 1;
        }
    }
    (minima, ties)
}

/// Evaluates L_R and Q_psi on a beta grid; both come from one spectrum per
/// grid point. Local-minima bookkeeping applies to one-dimensional grids.
pub fn objective_scan(
    data: &PanelData,
    beta_grid: &[DVector<f64>],
    rank: usize,
    psi: f64,
) -> Result<ScanTable> {
    if beta_grid.is_empty() {
        return Err(Error::InvalidArgument("empty scan grid".into()));
    }
    let mut rows = Vec::with_capacity(beta_grid.len());
    for beta in beta_grid {
        let ls = objective::profile_ls(data, beta, rank)?;
        let pen_value =
            kernel::penalty_of_values(&ls.residual_spectrum, psi, kernel::PenaltyKind::Q)?;
        rows.push(ScanRow {
            beta: beta.iter().copied().collect(),
            ls_value: ls.value,
            penalized_value: pen_value,
        });
    }
    let (ls_min, ties_a) = if data.k() == 1 {
        let v: Vec<f64> = rows.iter().map(|r| r.ls_value).collect();
        interior_local_minima(&v)
    } else {
        (Vec::new(), 0)
    };
    let (pen_min, ties_b) = if data.k() == 1 {
        let v: Vec<f64> = rows.iter().map(|r| r.penalized_value).collect();
        interior_local_minima(&v)
    } else {
        (Vec::new(), 0)
    };
    Ok(ScanTable {
        rows,
        ls_local_minima: ls_min,
        penalized_local_minima: pen_min,
        plateau_ties: ties_a + ties_b,
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

    fn randn_matrix(rng: &mut ChaCha12Rng, n: usize, t: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, t, |_, _| {
            rand_distr::Distribution::sample(&rand_distr::StandardNormal, rng)
        })
    }

    #[test]
    fn margin_negative_for_fully_absorbed_regressor() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let lam0 = rand_matrix(&mut rng, 8, 2);
        let f0 = rand_matrix(&mut rng, 7, 2);
        // X = v w' with v in span(lambda0), w in span(f0)
        let v = &lam0 * DVector::from_row_slice(&[1.0, -0.5]);
        let w = &f0 * DVector::from_row_slice(&[0.3, 0.9]);
        let x = &v * w.transpose();
        let report = identification_margin(&[x], &lam0, &f0, 64).unwrap();
        let expect = -v.norm() * w.norm() / (56f64).sqrt();
        assert!((report.margin - expect).abs() < 1e-10);
        assert!(report.margin < 0.0);
        assert!((report.argmin_alpha.norm() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn margin_positive_for_orthogonal_regressor() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let lam0 = rand_matrix(&mut rng, 8, 2);
        let f0 = rand_matrix(&mut rng, 7, 2);
        let pl = kernel::projector_pair(&lam0).unwrap();
        let pf = kernel::projector_pair(&f0).unwrap();
        let v = &pl.orthogonal * rand_matrix(&mut rng, 8, 1);
        let w = &pf.orthogonal * rand_matrix(&mut rng, 7, 1);
        let x = &v * w.transpose();
        let report = identification_margin(&[x], &lam0, &f0, 64).unwrap();
        let expect = v.norm() * w.norm() / (56f64).sqrt();
        assert!((report.margin - expect).abs() < 1e-10);
    }

    #[test]
    fn margin_homogeneity_in_scale() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let lam0 = rand_matrix(&mut rng, 6, 1);
        let f0 = rand_matrix(&mut rng, 6, 1);
        let x = rand_matrix(&mut rng, 6, 6);
        let c = 7.5;
        let base = identification_margin(&[x.clone()], &lam0, &f0, 32).unwrap();
        let scaled = identification_margin(&[&x * c], &lam0, &f0, 32).unwrap();
        assert!((scaled.margin - c * base.margin).abs() < 1e-9 * (1.0 + base.margin.abs() * c));
    }

    #[test]
    fn margin_positive_for_noise_regressors_multi_k() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let mut positives = 0;
        let total = 20;
        for _ in 0..total {
            let lam0 = randn_matrix(&mut rng, 30, 2);
            let f0 = randn_matrix(&mut rng, 30, 2);
            let x1 = randn_matrix(&mut rng, 30, 30);
            let x2 = randn_matrix(&mut rng, 30, 30);
            let report = identification_margin(&[x1, x2], &lam0, &f0, 128).unwrap();
            if report.margin > 0.0 {
                positives += 1;
            }
        }
        assert!(positives >= 19, "only {positives}/{total} positive margins");
    }

    #[test]
    fn rsc_rank_one_collapses_to_two_term_formula() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let lam0 = rand_matrix(&mut rng, 8, 2);
        let f0 = rand_matrix(&mut rng, 8, 2);
        let v = rand_matrix(&mut rng, 8, 1);
        let w = rand_matrix(&mut rng, 8, 1);
        let x = &v * w.transpose(); // rank 1
        let report = rsc_lower_bound(&x, &lam0, &f0).unwrap();
        let (_, a1, _) = report.q_schedule[0];
        let b3 = report
            .q_schedule
            .iter()
            .find(|(q, _, _)| *q == 3)
            .map(|(_, _, b)| *b)
            .unwrap();
        let expect = a1.min(b3.max(0.0).powi(2));
        assert!((report.mu_bound - expect).abs() < 1e-12);
    }

    #[test]
    fn rsc_zero_when_regressor_inside_spans() {
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let lam0 = rand_matrix(&mut rng, 6, 2);
        let f0 = rand_matrix(&mut rng, 6, 2);
        // X built entirely from the spans: M X M = 0
        let x = &lam0 * rand_matrix(&mut rng, 2, 6)
            + rand_matrix(&mut rng, 6, 2) * f0.transpose();
        let report = rsc_lower_bound(&x, &lam0, &f0).unwrap();
        assert!(report.mu_bound.abs() < 1e-20);
    }

    #[test]
    fn rsc_r0_zero_sentinel() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let x = rand_matrix(&mut rng, 5, 5);
        let lam0 = DMatrix::<f64>::zeros(5, 0);
        let f0 = DMatrix::<f64>::zeros(5, 0);
        let report = rsc_lower_bound(&x, &lam0, &f0).unwrap();
        assert!(report.mu_bound.is_infinite());
        assert!(report.q_schedule.is_empty());
    }

    #[test]
    fn rsc_schedule_monotonicity() {
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        for _ in 0..20 {
            let n = rng.random_range(5..12usize);
            let t = rng.random_range(5..12usize);
            let r0 = rng.random_range(1..3usize);
            let x = rand_matrix(&mut rng, n, t);
            let lam0 = rand_matrix(&mut rng, n, r0);
            let f0 = rand_matrix(&mut rng, t, r0);
            let report = rsc_lower_bound(&x, &lam0, &f0).unwrap();
            for w in report.q_schedule.windows(2) {
                assert!(w[1].1 <= w[0].1 + 1e-12, "a(q) must be nonincreasing");
                assert!(w[1].2 >= w[0].2 - 1e-12, "b(q) must be nondecreasing");
            }
        }
    }

    #[test]
    fn scan_quadratic_case_is_unimodal() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let x1 = rand_matrix(&mut rng, 6, 6);
        let panel = PanelData::new(&x1 * 1.5, vec![x1], vec![], vec![]).unwrap();
        let grid: Vec<DVector<f64>> = (0..61)
            .map(|i| DVector::from_row_slice(&[i as f64 * 0.1 - 1.5]))
            .collect();
        let table = objective_scan(&panel, &grid, 0, 0.5).unwrap();
        assert_eq!(table.ls_local_minima.len(), 1);
        assert_eq!(table.penalized_local_minima.len(), 1);
        let idx = table.ls_local_minima[0];
        assert!((table.rows[idx].beta[0] - 1.5).abs() <= 0.1 + 1e-12);
    }

    #[test]
    fn scan_large_psi_equals_pooled_quadratic() {
        let mut rng = ChaCha12Rng::seed_from_u64(10);
        let x1 = rand_matrix(&mut rng, 5, 5);
        let y = &x1 * 0.5 + rand_matrix(&mut rng, 5, 5) * 0.3;
        let panel = PanelData::new(y, vec![x1], vec![], vec![]).unwrap();
        let grid: Vec<DVector<f64>> = (0..21)
            .map(|i| DVector::from_row_slice(&[i as f64 * 0.1 - 0.5]))
            .collect();
        // psi above the top scaled singular value over the whole grid
        let mut psi = 0.0f64;
        for b in &grid {
            let v = objective::profile_ls(&panel, b, 0).unwrap();
            psi = psi.max(v.residual_spectrum[0]);
        }
        psi *= 1.01;
        let table = objective_scan(&panel, &grid, 0, psi).unwrap();
        for (row, b) in table.rows.iter().zip(&grid) {
            let quad = panel.residual(b).unwrap().norm_squared() / (2.0 * panel.nt());
            assert!((row.penalized_value - quad).abs() < 1e-12);
        }
    }

    #[test]
    fn scan_consistency_bounds() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let x1 = rand_matrix(&mut rng, 6, 6);
        let y = rand_matrix(&mut rng, 6, 6);
        let panel = PanelData::new(y, vec![x1], vec![], vec![]).unwrap();
        let grid: Vec<DVector<f64>> = (0..41)
            .map(|i| DVector::from_row_slice(&[i as f64 * 0.05 - 1.0]))
            .collect();
        let table = objective_scan(&panel, &grid, 2, 0.3).unwrap();
        for (row, b) in table.rows.iter().zip(&grid) {
            assert!(row.penalized_value >= 0.0);
            let frob = panel.residual(b).unwrap().norm_squared() / (2.0 * panel.nt());
            assert!(row.ls_value <= frob + 1e-12);
        }
    }

    #[test]
    fn local_minima_plateaus_reported_not_counted() {
        let values = [3.0, 1.0, 1.0, 2.0, 0.5, 2.0];
        let (minima, ties) = interior_local_minima(&values);
        assert_eq!(minima, vec![4]);
        assert!(ties > 0);
    }
}
