//! System description and validation.
//!
//! The model is
//!
//! ```text
//! dx(t) = A x(t) dt + B1 u(t) dt + B2 u(t-h) dt + G dW(t) + σ1 dW^{H1}(t)
//!  y(t) = D x(t) + σ2 W^{H2}(t),        u(t) = 0 for t ∈ [-h, 0],
//! ```
//!
//! with state dimension `n`, input dimension `p` and output dimension
//! `p_out` (rows of `D`). The input and output dimensions are kept distinct
//! even where a square `D` would allow conflating them.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matcore::{self, expm, MatError};
use crate::{real, Real};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("{0} must be square, got {1}x{2}")]
    NotSquare(&'static str, usize, usize),
    #[error("{0} must be {1}x{2}, got {3}x{4}")]
    BadShape(&'static str, usize, usize, usize, usize),
    #[error("{0} has non-finite entries")]
    NonFinite(&'static str),
    #[error("delay h must be positive")]
    DelayNotPositive,
    #[error("T must exceed h")]
    HorizonNotAfterDelay,
    #[error("state Hurst must be in (1/2,1), component {0} is {1}")]
    StateHurstOutOfRange(usize, f64),
    #[error("output Hurst must be in (0,1), component {0} is {1}")]
    OutputHurstOutOfRange(usize, f64),
    #[error("Cx0 must be symmetric")]
    InitialCovarianceNotSymmetric,
    #[error("Cx0 must be positive semidefinite (eigenvalue {0:e})")]
    InitialCovarianceNotPsd(f64),
    #[error(transparent)]
    Mat(#[from] MatError),
}

/// Full description of one delayed stochastic system.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound(serialize = "T: serde::Serialize", deserialize = "T: serde::de::DeserializeOwned"))]
pub struct SystemSpec<T: Real = f64> {
    /// Drift matrix A, n×n.
    pub a: DMatrix<T>,
    /// Instantaneous input matrix B1, n×p.
    pub b1: DMatrix<T>,
    /// Delayed input matrix B2, n×p.
    pub b2: DMatrix<T>,
    /// White-noise gain G, n×n.
    pub g: DMatrix<T>,
    /// State fBm gain σ1, n×n.
    pub sigma1: DMatrix<T>,
    /// Output matrix D, p_out×n.
    pub d: DMatrix<T>,
    /// Output fBm gain σ2, p_out×p_out.
    pub sigma2: DMatrix<T>,
    /// State Hurst exponents H1, length n, each in (1/2, 1).
    pub h1: DVector<T>,
    /// Output Hurst exponents H2, length p_out, each in (0, 1).
    pub h2: DVector<T>,
    /// Initial state covariance Cx0, n×n symmetric PSD.
    pub cx0: DMatrix<T>,
    /// Control delay h > 0.
    pub delay: T,
    /// Final time T > h.
    pub horizon: T,
}

impl<T: Real> SystemSpec<T> {
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn p(&self) -> usize {
        self.b1.ncols()
    }

    pub fn p_out(&self) -> usize {
        self.d.nrows()
    }

    /// Checks every structural invariant, naming the first violated one.
    pub fn check(&self) -> Result<(), ModelError> {
        let n = self.a.nrows();
        if self.a.ncols() != n {
            return Err(ModelError::NotSquare("A", self.a.nrows(), self.a.ncols()));
        }
        let p = self.b1.ncols();
        let q = self.d.nrows();
        let shape = |name, m: &DMatrix<T>, r, c| {
            if m.nrows() != r || m.ncols() != c {
                Err(ModelError::BadShape(name, r, c, m.nrows(), m.ncols()))
            } else {
                Ok(())
            }
        };
        shape("B1", &self.b1, n, p)?;
        shape("B2", &self.b2, n, p)?;
        shape("G", &self.g, n, n)?;
        shape("SIGMA1", &self.sigma1, n, n)?;
        shape("D", &self.d, q, n)?;
        shape("SIGMA2", &self.sigma2, q, q)?;
        shape("CX0", &self.cx0, n, n)?;
        if self.h1.len() != n {
            return Err(ModelError::BadShape("H1", n, 1, self.h1.len(), 1));
        }
        if self.h2.len() != q {
            return Err(ModelError::BadShape("H2", q, 1, self.h2.len(), 1));
        }
        for (name, m) in [
            ("A", &self.a),
            ("B1", &self.b1),
            ("B2", &self.b2),
            ("G", &self.g),
            ("SIGMA1", &self.sigma1),
            ("D", &self.d),
            ("SIGMA2", &self.sigma2),
            ("CX0", &self.cx0),
        ] {
            if m.iter().any(|x| !x.is_finite()) {
                return Err(ModelError::NonFinite(name));
            }
        }
        if !(self.delay > T::zero()) || !self.delay.is_finite() {
            return Err(ModelError::DelayNotPositive);
        }
        if !(self.horizon > self.delay) || !self.horizon.is_finite() {
            return Err(ModelError::HorizonNotAfterDelay);
        }
        let half = real::<T>(0.5);
        for (i, &h) in self.h1.iter().enumerate() {
            if !(h > half && h < T::one()) {
                return Err(ModelError::StateHurstOutOfRange(i, h.to_f64().unwrap_or(f64::NAN)));
            }
        }
        for (i, &h) in self.h2.iter().enumerate() {
            if !(h > T::zero() && h < T::one()) {
                return Err(ModelError::OutputHurstOutOfRange(i, h.to_f64().unwrap_or(f64::NAN)));
            }
        }
        if matcore::relative_asymmetry(&self.cx0) > real::<T>(1e-10) {
            return Err(ModelError::InitialCovarianceNotSymmetric);
        }
        let eig = matcore::sym_eig(&self.cx0)?;
        let lmax = eig.eigenvalues[0].max(T::one());
        let min = eig.eigenvalues[eig.eigenvalues.len() - 1];
        if min < -real::<T>(1e-10) * lmax {
            return Err(ModelError::InitialCovarianceNotPsd(min.to_f64().unwrap_or(f64::NAN)));
        }
        Ok(())
    }
}

/// Power budgets for the two control segments: `early` bounds the total
/// variance of the expansion on [0, T-h], `late` the one on (T-h, T].
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PowerBudget<T: Real = f64> {
    pub early: T,
    pub late: T,
}

impl<T: Real> PowerBudget<T> {
    pub fn check(&self) -> Result<(), ModelError> {
        if !(self.early >= T::zero() && self.early.is_finite()) {
            return Err(ModelError::NonFinite("M1"));
        }
        if !(self.late >= T::zero() && self.late.is_finite()) {
            return Err(ModelError::NonFinite("M2"));
        }
        Ok(())
    }
}

/// Validates the spec, returning it unchanged iff every invariant holds.
pub fn validate<T: Real>(spec: SystemSpec<T>) -> Result<SystemSpec<T>, ModelError> {
    spec.check()?;
    Ok(spec)
}

/// Effective input matrix on the early segment: B = B1 + e^{-Ah} B2.
pub fn effective_b<T: Real>(spec: &SystemSpec<T>) -> Result<DMatrix<T>, ModelError> {
    let e = expm(&(-&spec.a * spec.delay))?;
    Ok(&spec.b1 + e * &spec.b2)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct KalmanReport {
    pub controllable: bool,
    pub rank: usize,
}

/// Kalman-style rank test for the delayed pair: numerical rank of
/// `[B1, B2, AB1, AB2, …, A^{n-1}B1, A^{n-1}B2]`, with singular values below
/// `1e-9 · σ_max` counted as zero.
pub fn kalman_rank<T: Real>(spec: &SystemSpec<T>) -> Result<KalmanReport, ModelError> {
    let n = spec.n();
    let p = spec.p();
    let mut blocks: Vec<DMatrix<T>> = Vec::with_capacity(2 * n);
    let mut pb1 = spec.b1.clone();
    let mut pb2 = spec.b2.clone();
    for _ in 0..n {
        blocks.push(pb1.clone());
        blocks.push(pb2.clone());
        pb1 = &spec.a * pb1;
        pb2 = &spec.a * pb2;
    }
    let mut ctrl = DMatrix::<T>::zeros(n, 2 * n * p);
    for (bi, b) in blocks.iter().enumerate() {
        ctrl.view_mut((0, bi * p), (n, p)).copy_from(b);
    }
    let sv = ctrl.svd(false, false).singular_values;
    let smax = sv.iter().fold(T::zero(), |acc, &v| if v > acc { v } else { acc });
    let thresh = real::<T>(1e-9) * smax;
    let rank = if smax == T::zero() {
        0
    } else {
        sv.iter().filter(|&&v| v > thresh).count()
    };
    Ok(KalmanReport {
        controllable: rank == n,
        rank,
    })
}
