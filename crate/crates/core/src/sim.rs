//! Data-generating processes and the Monte Carlo experiment runner.
//!
//! Two named designs are built in: the two-regressor factor design used for
//! the estimator comparison tables, and the one-regressor design whose
//! least-squares profile objective has two local minima. Replication streams
//! are independent functions of (seed, replication index), so aggregates do
//! not depend on execution order.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bias;
use crate::error::{Error, Result};
use crate::estimators::{self, SolverConfig};
use crate::panel::PanelData;
use crate::tuning;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CustomDgp {
    pub k: usize,
    pub r0: usize,
    /// Rank of the factor part of each regressor.
    pub regressor_factor_rank: usize,
    pub regressor_noise_sd: f64,
    pub noise_sd: f64,
}

impl Default for CustomDgp {
    fn default() -> Self {
        CustomDgp {
            k: 1,
            r0: 2,
            regressor_factor_rank: 1,
            regressor_noise_sd: 1.0,
            noise_sd: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DgpKind {
    /// Two regressors (intercept and a factor-correlated regressor with a
    /// lagged-factor term), two factors, all innovations standard normal and
    /// loadings centered at one.
    McDesign,
    /// One regressor mixing a small high-rank part with two low-rank terms;
    /// produces a bimodal least-squares profile objective.
    NonconvexDemo,
    Custom(CustomDgp),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DgpSpec {
    pub kind: DgpKind,
    pub n: usize,
    pub t: usize,
    pub beta0: Vec<f64>,
    pub seed: u64,
}

impl DgpSpec {
    pub fn expected_k(&self) -> usize {
        match &self.kind {
            DgpKind::McDesign => 2,
            DgpKind::NonconvexDemo => 1,
            DgpKind::Custom(c) => c.k,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedPanel {
    pub data: PanelData,
    pub beta0: DVector<f64>,
    pub gamma0: DMatrix<f64>,
    pub noise: DMatrix<f64>,
}

fn draw_matrix<D, F>(rng: &mut ChaCha12Rng, n: usize, t: usize, dist: D, map: F) -> DMatrix<f64>
where
    D: Distribution<f64> + Copy,
    F: Fn(f64) -> f64,
{
    // column-major fill order, part of the determinism contract
    let mut m = DMatrix::zeros(n, t);
    for j in 0..t {
        for i in 0..n {
            m[(i, j)] = map(dist.sample(rng));
        }
    }
    m
}

fn standard_normal_matrix(rng: &mut ChaCha12Rng, n: usize, t: usize) -> DMatrix<f64> {
    draw_matrix(rng, n, t, StandardNormal, |z| z)
}

/// Deterministic generation from the spec's seed (stream 0).
pub fn generate(spec: &DgpSpec) -> Result<GeneratedPanel> {
    generate_stream(spec, 0)
}

/// Generation on an explicit replication stream; streams are mutually
/// independent for a fixed seed.
pub fn generate_stream(spec: &DgpSpec, stream: u64) -> Result<GeneratedPanel> {
    if spec.n < 2 || spec.t < 2 {
        return Err(Error::InvalidArgument("designs require N, T >= 2".into()));
    }
    if spec.beta0.len() != spec.expected_k() {
        return Err(Error::DimensionMismatch(format!(
            "beta0 has length {}, design expects {}",
            spec.beta0.len(),
            spec.expected_k()
        )));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    rng.set_stream(stream);
    let (n, t) = (spec.n, spec.t);
    let beta0 = DVector::from_row_slice(&spec.beta0);

    match &spec.kind {
        DgpKind::McDesign => {
            let lam0 = draw_matrix(&mut rng, n, 2, StandardNormal, |z| 1.0 + z);
            let lam_x = draw_matrix(&mut rng, n, 2, StandardNormal, |z| 1.0 + z);
            // rows 0..=T: row 0 is the presample factor value
            let f0_ext = standard_normal_matrix(&mut rng, t + 1, 2);
            let e_x = standard_normal_matrix(&mut rng, n, t);
            let noise = standard_normal_matrix(&mut rng, n, t);

            let f0 = f0_ext.rows(1, t).into_owned();
            let mut x2 = DMatrix::from_element(n, t, 1.0) + &e_x;
            for r in 0..2 {
                for tt in 0..t {
                    let f_sum = f0_ext[(tt + 1, r)] + f0_ext[(tt, r)];
                    for i in 0..n {
                        x2[(i, tt)] += (lam0[(i, r)] + lam_x[(i, r)]) * f_sum;
                    }
                }
            }
            let gamma0 = &lam0 * f0.transpose();
            let x1 = DMatrix::from_element(n, t, 1.0);
            let y = &x1 * beta0[0] + &x2 * beta0[1] + &gamma0 + &noise;
            let data = PanelData::new(y, vec![x1, x2], vec![], vec![])?;
            Ok(GeneratedPanel {
                data,
                beta0,
                gamma0,
                noise,
            })
        }
        DgpKind::NonconvexDemo => {
            // bivariate normals with off-diagonal correlation 0.5
            let chol_off = 0.5;
            let chol_diag = (1.0 - 0.25f64).sqrt();
            let mut lam0 = DMatrix::zeros(n, 2);
            for i in 0..n {
                let z1: f64 = StandardNormal.sample(&mut rng);
                let z2: f64 = StandardNormal.sample(&mut rng);
                lam0[(i, 0)] = z1;
                lam0[(i, 1)] = chol_off * z1 + chol_diag * z2;
            }
            let mut f0 = DMatrix::zeros(t, 2);
            for tt in 0..t {
                let z1: f64 = StandardNormal.sample(&mut rng);
                let z2: f64 = StandardNormal.sample(&mut rng);
                f0[(tt, 0)] = z1;
                f0[(tt, 1)] = chol_off * z1 + chol_diag * z2;
            }
            // lambda_x, f_x ~ 2 chi^2(1), i.e. twice a squared standard normal
            let lam_x = draw_matrix(&mut rng, n, 1, StandardNormal, |z| 2.0 * z * z);
            let f_x = draw_matrix(&mut rng, t, 1, StandardNormal, |z| 2.0 * z * z);
            let e_x = standard_normal_matrix(&mut rng, n, t);
            let noise = standard_normal_matrix(&mut rng, n, t);

            let mut x = e_x * 0.04;
            x += lam0.column(0) * f0.column(1).transpose();
            x += &lam_x * f_x.transpose();
            let gamma0 = &lam0 * f0.transpose();
            let y = &x * beta0[0] + &gamma0 + &noise;
            let data = PanelData::new(y, vec![x], vec![], vec![])?;
            Ok(GeneratedPanel {
                data,
                beta0,
                gamma0,
                noise,
            })
        }
        DgpKind::Custom(custom) => {
            let r0 = custom.r0.min(n.min(t));
            let lam0 = standard_normal_matrix(&mut rng, n, r0);
            let f0 = standard_normal_matrix(&mut rng, t, r0);
            let mut xs = Vec::with_capacity(custom.k);
            for _ in 0..custom.k {
                let rank = custom.regressor_factor_rank.min(n.min(t));
                let lx = standard_normal_matrix(&mut rng, n, rank);
                let fx = standard_normal_matrix(&mut rng, t, rank);
                let ex = standard_normal_matrix(&mut rng, n, t);
                xs.push(&lx * fx.transpose() + ex * custom.regressor_noise_sd);
            }
            let noise = standard_normal_matrix(&mut rng, n, t) * custom.noise_sd;
            let gamma0 = &lam0 * f0.transpose();
            let mut y = &gamma0 + &noise;
            for (k, xk) in xs.iter().enumerate() {
                y += xk * beta0[k];
            }
            let data = PanelData::new(y, xs, vec![], vec![])?;
            Ok(GeneratedPanel {
                data,
                beta0,
                gamma0,
                noise,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    PooledOls,
    NuclearMin,
    NuclearPenalized,
    LocalLeastSquares,
    PostIteration,
    AltBiasCorrection,
}

impl EstimatorKind {
    pub fn all() -> Vec<EstimatorKind> {
        vec![
            EstimatorKind::PooledOls,
            EstimatorKind::NuclearMin,
            EstimatorKind::NuclearPenalized,
            EstimatorKind::LocalLeastSquares,
            EstimatorKind::PostIteration,
            EstimatorKind::AltBiasCorrection,
        ]
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub dgp: DgpSpec,
    pub replications: usize,
    pub estimators: Vec<EstimatorKind>,
    pub r_max: usize,
    pub post_steps: usize,
    pub alt_steps: usize,
    /// Factor count for the local least-squares benchmark column.
    pub ls_rank: usize,
    pub solver: SolverConfig,
}

impl ExperimentConfig {
    pub fn new(dgp: DgpSpec, replications: usize) -> Self {
        ExperimentConfig {
            dgp,
            replications,
            estimators: EstimatorKind::all(),
            r_max: 8,
            post_steps: 3,
            alt_steps: 3,
            ls_rank: 2,
            solver: SolverConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ReplicationRecord {
    pub replication: usize,
    /// (estimator label, coefficient estimate) pairs.
    pub estimates: Vec<(String, Vec<f64>)>,
    pub psi_hat: Option<f64>,
    pub r_hat: Option<usize>,
    pub failures: Vec<(String, String)>,
}

impl ReplicationRecord {
    pub fn estimate(&self, label: &str) -> Option<&[f64]> {
        self.estimates
            .iter()
            .find(|(l, _)| l == label)
            .map(|(_, b)| b.as_slice())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimatorSummary {
    pub label: String,
    pub bias: Vec<f64>,
    pub std_dev: Vec<f64>,
    pub rmse: Vec<f64>,
    pub replications_used: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentResult {
    pub beta0: Vec<f64>,
    pub replications: usize,
    pub summaries: Vec<EstimatorSummary>,
    pub r_hat_counts: BTreeMap<usize, usize>,
    pub failed_fits: usize,
    pub records: Vec<ReplicationRecord>,
}

impl ExperimentResult {
    pub fn summary(&self, label: &str) -> Option<&EstimatorSummary> {
        self.summaries.iter().find(|s| s.label == label)
    }
}

/// Numerical floor below which a selected penalty is treated as zero and the
/// penalized estimators fall back to the nuclear-norm minimizer (their
/// psi -> 0 limit).
fn psi_floor(report: &tuning::TuningReport) -> f64 {
    let s1 = report.residual_spectrum.first().copied().unwrap_or(0.0);
    1e-12 * (1.0 + s1 / report.sqrt_nt)
}

fn run_one_replication(config: &ExperimentConfig, rep: usize) -> Result<ReplicationRecord> {
    let generated = generate_stream(&config.dgp, rep as u64 + 1)?;
    let data = &generated.data;
    let mut record = ReplicationRecord {
        replication: rep,
        estimates: Vec::new(),
        psi_hat: None,
        r_hat: None,
        failures: Vec::new(),
    };
    let push = |record: &mut ReplicationRecord, label: &str, beta: &DVector<f64>| {
        record
            .estimates
            .push((label.to_string(), beta.iter().copied().collect()));
    };

    let wants = |kind: EstimatorKind| config.estimators.contains(&kind);
    let needs_star = wants(EstimatorKind::NuclearMin)
        || wants(EstimatorKind::NuclearPenalized)
        || wants(EstimatorKind::LocalLeastSquares)
        || wants(EstimatorKind::PostIteration)
        || wants(EstimatorKind::AltBiasCorrection);

    if wants(EstimatorKind::PooledOls) {
        match estimators::pooled_ols(data) {
            Ok(fit) => push(&mut record, "POLS", &fit.beta),
            Err(e) => record.failures.push(("POLS".into(), e.to_string())),
        }
    }

    let beta_star = if needs_star {
        match estimators::fit_nn_min(data, &config.solver) {
            Ok(fit) => {
                if wants(EstimatorKind::NuclearMin) {
                    push(&mut record, "NN*", &fit.beta);
                }
                Some(fit.beta)
            }
            Err(e) => {
                record.failures.push(("NN*".into(), e.to_string()));
                None
            }
        }
    } else {
        None
    };

    let Some(beta_star) = beta_star else {
        return Ok(record);
    };

    if wants(EstimatorKind::LocalLeastSquares) {
        match estimators::fit_ls_local(data, config.ls_rank, &beta_star, &config.solver) {
            Ok(fit) => push(&mut record, "LS", &fit.beta),
            Err(e) => record.failures.push(("LS".into(), e.to_string())),
        }
    }

    let needs_tuning = wants(EstimatorKind::NuclearPenalized)
        || wants(EstimatorKind::PostIteration)
        || wants(EstimatorKind::AltBiasCorrection);
    if !needs_tuning {
        return Ok(record);
    }
    let report = match tuning::select_psi_from(data, &beta_star, config.r_max) {
        Ok(r) => r,
        Err(e) => {
            record.failures.push(("tuning".into(), e.to_string()));
            return Ok(record);
        }
    };
    record.psi_hat = Some(report.psi_hat);
    record.r_hat = Some(report.r_hat);
    let degenerate_psi = report.psi_hat <= psi_floor(&report);

    let beta_pen = if wants(EstimatorKind::NuclearPenalized) || wants(EstimatorKind::AltBiasCorrection)
    {
        if degenerate_psi {
            Some(beta_star.clone())
        } else {
            match estimators::fit_nn_penalized(data, report.psi_hat, &config.solver) {
                Ok(fit) => Some(fit.beta),
                Err(e) => {
                    record.failures.push(("NNpen".into(), e.to_string()));
                    None
                }
            }
        }
    } else {
        None
    };
    if wants(EstimatorKind::NuclearPenalized) {
        if let Some(b) = &beta_pen {
            push(&mut record, "NNpen", b);
        }
    }

    if wants(EstimatorKind::PostIteration) {
        match tuning::post_iterate(data, report.r_hat, &beta_star, config.post_steps) {
            Ok(run) => {
                for s in 1..=config.post_steps {
                    push(&mut record, &format!("POST({s})"), &run.trajectory[s]);
                }
            }
            Err(e) => record.failures.push(("POST".into(), e.to_string())),
        }
    }

    if wants(EstimatorKind::AltBiasCorrection) {
        if let Some(beta_pen) = &beta_pen {
            if degenerate_psi {
                for s in 1..=config.alt_steps {
                    push(&mut record, &format!("ALT({s})"), beta_pen);
                }
            } else {
                match bias::alt_bc_iterate(
                    data,
                    report.psi_hat,
                    report.r_hat,
                    beta_pen,
                    config.alt_steps,
                    &config.solver,
                ) {
                    Ok(run) => {
                        for s in 1..=config.alt_steps {
                            push(&mut record, &format!("ALT({s})"), &run.trajectory[s]);
                        }
                    }
                    Err(e) => record.failures.push(("ALT".into(), e.to_string())),
                }
            }
        }
    }

    Ok(record)
}

/// Runs the replication loop and aggregates bias, standard deviation and
/// RMSE per estimator and coefficient, plus the frequency table of estimated
/// factor counts.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    if config.replications == 0 {
        return Err(Error::InvalidArgument("replications must be >= 1".into()));
    }
    let beta0 = config.dgp.beta0.clone();
    let k = beta0.len();
    let mut records = Vec::with_capacity(config.replications);
    for rep in 0..config.replications {
        records.push(run_one_replication(config, rep)?);
    }

    let mut label_order: Vec<String> = Vec::new();
    for record in &records {
        for (label, _) in &record.estimates {
            if !label_order.iter().any(|l| l == label) {
                label_order.push(label.clone());
            }
        }
    }

    let mut summaries = Vec::new();
    for label in &label_order {
        let draws: Vec<&[f64]> = records
            .iter()
            .filter_map(|r| r.estimate(label))
            .collect();
        let m = draws.len();
        let mut bias = vec![0.0; k];
        let mut std_dev = vec![0.0; k];
        let mut rmse = vec![0.0; k];
        if m > 0 {
            for j in 0..k {
                let mean = draws.iter().map(|d| d[j]).sum::<f64>() / m as f64;
                bias[j] = mean - beta0[j];
                let mut ss = 0.0;
                let mut sq_err = 0.0;
                for d in &draws {
                    ss += (d[j] - mean).powi(2);
                    sq_err += (d[j] - beta0[j]).powi(2);
                }
                std_dev[j] = if m > 1 { (ss / (m as f64 - 1.0)).sqrt() } else { 0.0 };
                rmse[j] = (sq_err / m as f64).sqrt();
            }
        }
        summaries.push(EstimatorSummary {
            label: label.clone(),
            bias,
            std_dev,
            rmse,
            replications_used: m,
        });
    }

    let mut r_hat_counts = BTreeMap::new();
    for record in &records {
        if let Some(r) = record.r_hat {
            *r_hat_counts.entry(r).or_insert(0) += 1;
        }
    }
    let failed_fits = records.iter().map(|r| r.failures.len()).sum();
    Ok(ExperimentResult {
        beta0,
        replications: config.replications,
        summaries,
        r_hat_counts,
        failed_fits,
        records,
    })
}
