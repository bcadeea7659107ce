use nalgebra::{DMatrix, DVector};

use crate::dynamics::{PSI, S, THETA};
use crate::error::{Error, Result};

/// Azimuth/elevation from the optical sensor, plus range when the active
/// range finder fired.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub psi: f64,
    pub theta: f64,
    pub range: Option<f64>,
}

impl Measurement {
    pub fn bearings(psi: f64, theta: f64) -> Self {
        Self {
            psi,
            theta,
            range: None,
        }
    }

    pub fn with_range(psi: f64, theta: f64, range: f64) -> Self {
        Self {
            psi,
            theta,
            range: Some(range),
        }
    }

    pub fn dim(&self) -> usize {
        if self.range.is_some() {
            3
        } else {
            2
        }
    }

    pub fn to_vector(&self) -> DVector<f64> {
        match self.range {
            Some(r) => DVector::from_row_slice(&[self.psi, self.theta, r]),
            None => DVector::from_row_slice(&[self.psi, self.theta]),
        }
    }
}

/// Diagonal measurement covariance, truncated to the bearings when `dim == 2`.
pub fn measurement_covariance(sigma_psi: f64, sigma_theta: f64, sigma_r: f64, dim: usize) -> DMatrix<f64> {
    let diag = [sigma_psi * sigma_psi, sigma_theta * sigma_theta, sigma_r * sigma_r];
    DMatrix::from_diagonal(&DVector::from_row_slice(&diag[..dim]))
}

/// Measurement function on a raw MSC vector: `[psi, theta]` or `[psi, theta, 1/s]`.
pub fn observe(x: &DVector<f64>, dim: usize) -> Result<DVector<f64>> {
    match dim {
        2 => Ok(DVector::from_row_slice(&[x[PSI], x[THETA]])),
        3 => {
            if !(x[S] > 0.0) {
                return Err(Error::NonpositiveInverseRange(x[S]));
            }
            Ok(DVector::from_row_slice(&[x[PSI], x[THETA], 1.0 / x[S]]))
        }
        d => Err(Error::MeasurementDimension(d)),
    }
}
