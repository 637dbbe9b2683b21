//! Balanced panel container: an N x T outcome matrix and K regressor
//! matrices of the same shape, with unit/time labels.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct PanelData {
    y: DMatrix<f64>,
    x: Vec<DMatrix<f64>>,
    unit_ids: Vec<String>,
    time_ids: Vec<String>,
}

impl PanelData {
    /// Builds a panel, validating shared dimensions and finiteness. Empty
    /// label vectors are filled with 1-based indices.
    pub fn new(
        y: DMatrix<f64>,
        x: Vec<DMatrix<f64>>,
        unit_ids: Vec<String>,
        time_ids: Vec<String>,
    ) -> Result<Self> {
        let (n, t) = (y.nrows(), y.ncols());
        if n == 0 || t == 0 {
            return Err(Error::InvalidArgument("panel must be at least 1 x 1".into()));
        }
        for (k, xk) in x.iter().enumerate() {
            if xk.nrows() != n || xk.ncols() != t {
                return Err(Error::DimensionMismatch(format!(
                    "regressor x{} is {}x{}, expected {}x{}",
                    k + 1,
                    xk.nrows(),
                    xk.ncols(),
                    n,
                    t
                )));
            }
            if !xk.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite(format!("regressor x{}", k + 1)));
            }
        }
        if !y.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("outcome matrix".into()));
        }
        let unit_ids = if unit_ids.is_empty() {
            (1..=n).map(|i| i.to_string()).collect()
        } else {
            unit_ids
        };
        let time_ids = if time_ids.is_empty() {
            (1..=t).map(|i| i.to_string()).collect()
        } else {
            time_ids
        };
        if unit_ids.len() != n || time_ids.len() != t {
            return Err(Error::DimensionMismatch(format!(
                "labels ({} units, {} times) do not match panel {}x{}",
                unit_ids.len(),
                time_ids.len(),
                n,
                t
            )));
        }
        Ok(PanelData {
            y,
            x,
            unit_ids,
            time_ids,
        })
    }

    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    pub fn t(&self) -> usize {
        self.y.ncols()
    }

    pub fn k(&self) -> usize {
        self.x.len()
    }

    /// N*T as a float, the normalization used throughout the objectives.
    pub fn nt(&self) -> f64 {
        (self.n() * self.t()) as f64
    }

    pub fn y(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub fn x(&self) -> &[DMatrix<f64>] {
        &self.x
    }

    pub fn x_k(&self, k: usize) -> &DMatrix<f64> {
        &self.x[k]
    }

    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    pub fn time_ids(&self) -> &[String] {
        &self.time_ids
    }

    /// Y - sum_k beta_k X_k, the residual every objective is built from.
    pub fn residual(&self, beta: &DVector<f64>) -> Result<DMatrix<f64>> {
        if beta.len() != self.k() {
            return Err(Error::DimensionMismatch(format!(
                "beta has length {}, expected {}",
                beta.len(),
                self.k()
            )));
        }
        let mut r = self.y.clone();
        for (k, xk) in self.x.iter().enumerate() {
            r -= xk * beta[k];
        }
        Ok(r)
    }

    /// Column-major vectorization of Y.
    pub fn vec_y(&self) -> DVector<f64> {
        DVector::from_column_slice(self.y.as_slice())
    }

    /// NT x K design matrix whose k-th column is vec(X_k).
    pub fn design(&self) -> DMatrix<f64> {
        let nt = self.n() * self.t();
        let mut z = DMatrix::zeros(nt, self.k());
        for (k, xk) in self.x.iter().enumerate() {
            z.column_mut(k).copy_from_slice(xk.as_slice());
        }
        z
    }
}
