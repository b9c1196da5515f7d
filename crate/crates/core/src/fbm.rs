//! Fractional Brownian motion:
//!
//! covariance  E[W^H(t) W^H(s)] = ½ (t^{2H} + s^{2H} - |t-s|^{2H}),
//!
//! the fractional-Gaussian-noise kernel H(2H-1)|t-s|^{2H-2} valid for
//! H ∈ (½, 1), and exact path sampling by factorizing the covariance matrix
//! on the requested grid. Sampling is deterministic given a seed; parallel
//! consumers derive independent seeds with [`derive_seed`].

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::{real, Real};

#[derive(Debug, Error)]
pub enum FbmError {
    #[error("Hurst exponent {0} outside (0, 1)")]
    HurstOutOfRange(f64),
    #[error("Hurst exponent {0} outside (1/2, 1); the fGn kernel needs H > 1/2")]
    HurstNotLongRange(f64),
    #[error("negative time argument")]
    NegativeTime,
    #[error("fGn kernel is singular on the diagonal t1 = t2")]
    SingularKernel,
    #[error("grid must be strictly increasing and nonnegative")]
    BadGrid,
    #[error("covariance factorization failed; the grid is too fine for floating point")]
    FactorizationFailed,
}

fn check_hurst<T: Real>(h: T) -> Result<(), FbmError> {
    if h <= T::zero() || h >= T::one() {
        return Err(FbmError::HurstOutOfRange(h.to_f64().unwrap_or(f64::NAN)));
    }
    Ok(())
}

/// fBm covariance ½(t^{2H} + s^{2H} - |t-s|^{2H}).
pub fn fbm_cov<T: Real>(t: T, s: T, hurst: T) -> Result<T, FbmError> {
    check_hurst(hurst)?;
    if t < T::zero() || s < T::zero() {
        return Err(FbmError::NegativeTime);
    }
    let two_h = hurst * real::<T>(2.0);
    let pow = |x: T| if x == T::zero() { T::zero() } else { nalgebra::ComplexField::powf(x, two_h) };
    Ok(real::<T>(0.5) * (pow(t) + pow(s) - pow((t - s).abs())))
}

/// fGn second-moment kernel H(2H-1)|t1-t2|^{2H-2}; integrably singular on
/// the diagonal, so callers must keep quadrature nodes off t1 = t2.
pub fn fgn_kernel<T: Real>(t1: T, t2: T, hurst: T) -> Result<T, FbmError> {
    if hurst <= real::<T>(0.5) || hurst >= T::one() {
        return Err(FbmError::HurstNotLongRange(hurst.to_f64().unwrap_or(f64::NAN)));
    }
    let diff = (t1 - t2).abs();
    if diff == T::zero() {
        return Err(FbmError::SingularKernel);
    }
    let two = real::<T>(2.0);
    Ok(hurst * (two * hurst - T::one()) * nalgebra::ComplexField::powf(diff, two * hurst - two))
}

/// Output-noise covariance σ2 · diag(T^{2h̃_k}) · σ2ᵀ.
pub fn output_fbm_cov<T: Real>(
    horizon: T,
    hurst: &DVector<T>,
    sigma2: &DMatrix<T>,
) -> Result<DMatrix<T>, FbmError> {
    if horizon < T::zero() {
        return Err(FbmError::NegativeTime);
    }
    for &h in hurst.iter() {
        check_hurst(h)?;
    }
    let two = real::<T>(2.0);
    let diag = DMatrix::from_diagonal(&DVector::from_iterator(
        hurst.len(),
        hurst.iter().map(|&h| {
            if horizon == T::zero() {
                T::zero()
            } else {
                nalgebra::ComplexField::powf(horizon, two * h)
            }
        }),
    ));
    Ok(sigma2 * diag * sigma2.transpose())
}

/// SplitMix64-style seed derivation for independent parallel streams.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master.wrapping_add(stream.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// One exact fBm path on the given grid: zero mean, covariance
/// `fbm_cov(t_i, t_j)`, generated by Cholesky factorization of that matrix.
///
/// The grid must be strictly increasing; a leading 0 is allowed and maps to
/// the pinned value W(0) = 0.
pub fn sample_fbm<T: Real>(hurst: T, grid: &[T], seed: u64) -> Result<DVector<T>, FbmError>
where
    StandardNormal: Distribution<T>,
{
    check_hurst(hurst)?;
    if grid.is_empty() {
        return Err(FbmError::BadGrid);
    }
    if grid[0] < T::zero() || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(FbmError::BadGrid);
    }
    let pinned_origin = grid[0] == T::zero();
    let free: &[T] = if pinned_origin { &grid[1..] } else { grid };
    let m = free.len();
    let mut out = DVector::zeros(grid.len());
    if m == 0 {
        return Ok(out);
    }
    let cov = DMatrix::from_fn(m, m, |i, j| fbm_cov(free[i], free[j], hurst).expect("valid grid"));
    let chol = nalgebra::Cholesky::new(cov).ok_or(FbmError::FactorizationFailed)?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let z = DVector::from_iterator(m, (0..m).map(|_| StandardNormal.sample(&mut rng)));
    let path = chol.l() * z;
    let offset = usize::from(pinned_origin);
    for i in 0..m {
        out[i + offset] = path[i];
    }
    Ok(out)
}

/// Precomputed factor for exact fGn increments on a uniform grid; the
/// factorization is done once and reused across Monte-Carlo paths.
#[derive(Debug, Clone)]
pub struct FgnIncrements<T: Real> {
    factor: DMatrix<T>,
    steps: usize,
}

impl<T: Real> FgnIncrements<T> {
    /// Increments of W^H over `steps` intervals of width `delta`.
    pub fn new(hurst: T, steps: usize, delta: T) -> Result<Self, FbmError> {
        check_hurst(hurst)?;
        if steps == 0 || delta <= T::zero() {
            return Err(FbmError::BadGrid);
        }
        let two_h = hurst * real::<T>(2.0);
        let pow = |x: T| {
            if x == T::zero() {
                T::zero()
            } else {
                nalgebra::ComplexField::powf(x, two_h)
            }
        };
        let scale = pow(delta);
        // Stationary autocovariance γ(d) = ½δ^{2H}(|d+1|^{2H} - 2|d|^{2H} + |d-1|^{2H}).
        let gamma: Vec<T> = (0..steps)
            .map(|d| {
                let df = real::<T>(d as f64);
                real::<T>(0.5)
                    * scale
                    * (pow(df + T::one()) - real::<T>(2.0) * pow(df) + pow((df - T::one()).abs()))
            })
            .collect();
        let cov = DMatrix::from_fn(steps, steps, |i, j| gamma[i.abs_diff(j)]);
        let chol = nalgebra::Cholesky::new(cov).ok_or(FbmError::FactorizationFailed)?;
        Ok(Self {
            factor: chol.unpack(),
            steps,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Draws one increment vector into `out` using the caller's RNG.
    pub fn sample_into<R: rand::Rng>(&self, rng: &mut R, out: &mut [T])
    where
        StandardNormal: Distribution<T>,
    {
        debug_assert_eq!(out.len(), self.steps);
        let z = DVector::from_iterator(self.steps, (0..self.steps).map(|_| StandardNormal.sample(rng)));
        let v = &self.factor * z;
        out.copy_from_slice(v.as_slice());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    #[test]
    fn cov_examples() {
        assert_relative_eq!(fbm_cov(1.0, 1.0, 0.62).unwrap(), 1.0, epsilon = 1e-14);
        // ½(2^{1.5} + 1 - 1)
        assert_relative_eq!(fbm_cov(2.0, 1.0, 0.75).unwrap(), 1.414214, epsilon = 1e-6);
        // Wiener case: min(t, s).
        assert_relative_eq!(fbm_cov(2.0, 1.0, 0.5).unwrap(), 1.0, epsilon = 1e-14);
        assert!(matches!(fbm_cov(-1.0, 1.0, 0.7), Err(FbmError::NegativeTime)));
    }

    #[test]
    fn kernel_examples() {
        assert_relative_eq!(fgn_kernel(2.0, 1.0, 0.75).unwrap(), 0.375, epsilon = 1e-14);
        assert_relative_eq!(fgn_kernel(5.0, 1.0, 0.75).unwrap(), 0.1875, epsilon = 1e-14);
        assert!(matches!(fgn_kernel(1.0, 1.0, 0.75), Err(FbmError::SingularKernel)));
        assert!(matches!(fgn_kernel(1.0, 2.0, 0.4), Err(FbmError::HurstNotLongRange(_))));
    }

    #[test]
    fn output_cov_examples() {
        let eye = DMatrix::<f64>::identity(2, 2);
        let h = DVector::from_vec(vec![0.75, 0.75]);
        let zero = output_fbm_cov(0.0, &h, &eye).unwrap();
        assert_relative_eq!(zero, DMatrix::zeros(2, 2), epsilon = 1e-15);
        let two = output_fbm_cov(2.0, &h, &eye).unwrap();
        assert_relative_eq!(two[(0, 0)], 2.828427, epsilon = 1e-6);
        let none = output_fbm_cov(2.0, &h, &DMatrix::zeros(2, 2)).unwrap();
        assert_relative_eq!(none, DMatrix::zeros(2, 2), epsilon = 1e-15);
    }

    #[test]
    fn grid_covariance_is_psd() {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(11);
        for _ in 0..20 {
            let m = rng.gen_range(2..=64);
            let hurst: f64 = rng.gen_range(0.05..0.95);
            let mut grid: Vec<f64> = (0..m).map(|_| rng.gen_range(0.01..5.0)).collect();
            grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
            grid.dedup_by(|a, b| (*a - *b).abs() < 1e-6);
            let k = grid.len();
            let cov = DMatrix::from_fn(k, k, |i, j| fbm_cov(grid[i], grid[j], hurst).unwrap());
            let eig = crate::matcore::sym_eig(&cov).unwrap();
            let min = eig.eigenvalues[k - 1];
            assert!(min >= -1e-10, "min eigenvalue {min}");
        }
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let grid: Vec<f64> = (1..=32).map(|i| i as f64 / 16.0).collect();
        let a = sample_fbm(0.75, &grid, 42).unwrap();
        let b = sample_fbm(0.75, &grid, 42).unwrap();
        assert_eq!(a, b);
        let c = sample_fbm(0.75, &grid, 43).unwrap();
        assert!(a != c);
    }

    #[test]
    fn sampled_variance_matches_definition() {
        let grid = [1.0f64];
        let paths = 20_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for p in 0..paths {
            let w = sample_fbm(0.7, &grid, derive_seed(7, p)).unwrap()[0];
            sum += w;
            sumsq += w * w;
        }
        let n = paths as f64;
        let var = (sumsq - sum * sum / n) / (n - 1.0);
        // Var(W_H(1)) = 1; se of the sample variance ≈ sqrt(2/(n-1)).
        let se = (2.0 / (n - 1.0)).sqrt();
        assert!((var - 1.0).abs() <= 3.0 * se, "var {var} se {se}");
    }

    #[test]
    fn wiener_case_has_independent_increments() {
        // Disjoint increments of W^{1/2} must be uncorrelated.
        let grid = [0.5f64, 1.0, 1.5, 2.0];
        let paths = 20_000;
        let (mut s1, mut s2, mut s12, mut q1, mut q2) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for p in 0..paths {
            let w = sample_fbm(0.5, &grid, derive_seed(99, p)).unwrap();
            let d1 = w[1] - w[0];
            let d2 = w[3] - w[2];
            s1 += d1;
            s2 += d2;
            s12 += d1 * d2;
            q1 += d1 * d1;
            q2 += d2 * d2;
        }
        let n = paths as f64;
        let corr = (s12 - s1 * s2 / n) / ((q1 - s1 * s1 / n).sqrt() * (q2 - s2 * s2 / n).sqrt());
        assert!(corr.abs() <= 3.0 / n.sqrt(), "corr {corr}");
    }

    #[test]
    fn increments_are_stationary() {
        // Var(W(t+δ) - W(t)) = δ^{2H} regardless of t.
        let hurst = 0.8f64;
        let delta = 0.25;
        let grid: Vec<f64> = (1..=8).map(|i| i as f64 * delta).collect();
        let paths = 20_000;
        let mut acc = vec![(0.0f64, 0.0f64); grid.len() - 1];
        for p in 0..paths {
            let w = sample_fbm(hurst, &grid, derive_seed(3, p)).unwrap();
            for (k, slot) in acc.iter_mut().enumerate() {
                let d = w[k + 1] - w[k];
                slot.0 += d;
                slot.1 += d * d;
            }
        }
        let n = paths as f64;
        let expected = delta.powf(2.0 * hurst);
        let se = expected * (2.0 / (n - 1.0)).sqrt();
        for (sum, sumsq) in acc {
            let var = (sumsq - sum * sum / n) / (n - 1.0);
            assert!((var - expected).abs() <= 3.0 * se, "var {var} expected {expected}");
        }
    }

    #[test]
    fn fgn_increment_factor_matches_path_sampler() {
        // Summed exact increments must reproduce Var(W^H(T)) = T^{2H}.
        let hurst = 0.75f64;
        let steps = 16;
        let delta = 1.0 / steps as f64;
        let inc = FgnIncrements::new(hurst, steps, delta).unwrap();
        let mut buf = vec![0.0f64; steps];
        let paths = 20_000;
        let (mut sum, mut sumsq) = (0.0, 0.0);
        for p in 0..paths {
            let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(17, p));
            inc.sample_into(&mut rng, &mut buf);
            let w: f64 = buf.iter().sum();
            sum += w;
            sumsq += w * w;
        }
        let n = paths as f64;
        let var = (sumsq - sum * sum / n) / (n - 1.0);
        let se = (2.0 / (n - 1.0)).sqrt();
        assert!((var - 1.0).abs() <= 3.0 * se, "var {var}");
    }
}
