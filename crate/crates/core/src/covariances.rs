//! Deterministic integrals of the pipeline: controllability Gramians split
//! at `T-h`, white-noise and fractional-noise state covariances, the total
//! uncontrolled covariance `S_Total(T)`, and controlled covariances built
//! from an allocation.
//!
//! One-dimensional integrals use composite Gauss–Legendre with a
//! node-doubling error estimate. The fractional double integral
//!
//! ```text
//! ∫∫ e^{A(T-t1)} σ1 R(t1,t2) σ1ᵀ e^{Aᵀ(T-t2)} dt1 dt2,
//! R_kk = H_k(2H_k-1)|t1-t2|^{2H_k-2}
//! ```
//!
//! is evaluated on the triangle t1 < t2 with the power-law substitution
//! u = (t2-t1)^{2H-1}, which absorbs the integrable singularity on the
//! diagonal; the opposite triangle is its transpose.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matcore::{self, expm, MatError, SymEig};
use crate::model::{effective_b, ModelError, SystemSpec};
use crate::quad;
use crate::{fbm, real, Real};

#[derive(Debug, Error)]
pub enum CovError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Mat(#[from] MatError),
    #[error(transparent)]
    Fbm(#[from] fbm::FbmError),
    #[error("column index {0} out of range (p = {1})")]
    ColumnOutOfRange(usize, usize),
    #[error("S_Total is numerically singular; every noise channel is zero")]
    SingularTotalCovariance,
    #[error("allocation has a negative entry at ({0}, {1})")]
    NegativeAllocation(usize, usize),
    #[error("allocation must be p x n = {0} x {1}, got {2} x {3}")]
    AllocationShape(usize, usize, usize, usize),
}

/// Quadrature resolution. `panels`/`degree` drive the one-dimensional
/// Gramian and white-noise integrals; the `fbm_*` fields drive the outer and
/// inner rules of the fractional double integral. Results are refined by
/// doubling until the relative change drops below the targets (bounded by
/// `max_refinements`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuadConfig {
    pub panels: usize,
    pub degree: usize,
    pub fbm_outer_panels: usize,
    pub fbm_inner_panels: usize,
    pub fbm_degree: usize,
    pub target_rel_1d: f64,
    pub target_rel_fbm: f64,
    pub max_refinements: usize,
}

impl Default for QuadConfig {
    fn default() -> Self {
        Self {
            panels: 64,
            degree: 12,
            fbm_outer_panels: 16,
            fbm_inner_panels: 8,
            fbm_degree: 10,
            target_rel_1d: 1e-8,
            target_rel_fbm: 1e-6,
            max_refinements: 3,
        }
    }
}

/// Node counts actually used plus the doubling-based error estimate.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct QuadratureMeta<T: Real = f64> {
    pub panels: usize,
    pub degree: usize,
    pub est_rel_error: T,
}

/// Per-column Gramians with their eigendecompositions, the full G_T, and
/// quadrature metadata.
#[derive(Debug, Clone)]
pub struct GramianSet<T: Real = f64> {
    /// G1(b_k) over [0, T-h] with the effective column b_k.
    pub g1: Vec<DMatrix<T>>,
    /// G2(b1_k) over [T-h, T] with the instantaneous column b1_k.
    pub g2: Vec<DMatrix<T>>,
    pub g1_eig: Vec<SymEig<T>>,
    pub g2_eig: Vec<SymEig<T>>,
    /// Full controllability operator G_T.
    pub g_t: DMatrix<T>,
    pub meta: QuadratureMeta<T>,
}

impl<T: Real> GramianSet<T> {
    pub fn n(&self) -> usize {
        self.g_t.nrows()
    }

    pub fn p(&self) -> usize {
        self.g1.len()
    }

    /// Builds a set directly from per-column Gramian matrices (used by the
    /// asymptotic pipelines, where the matrices come from Lyapunov solves).
    pub fn from_matrices(g1: Vec<DMatrix<T>>, g2: Vec<DMatrix<T>>, meta: QuadratureMeta<T>) -> Result<Self, CovError> {
        let g1_eig = g1.iter().map(matcore::sym_eig).collect::<Result<Vec<_>, _>>()?;
        let g2_eig = g2.iter().map(matcore::sym_eig).collect::<Result<Vec<_>, _>>()?;
        let n = g1.first().map(|m| m.nrows()).unwrap_or(0);
        let mut g_t = DMatrix::zeros(n, n);
        for m in g1.iter().chain(g2.iter()) {
            g_t += m;
        }
        Ok(Self {
            g1,
            g2,
            g1_eig,
            g2_eig,
            g_t,
            meta,
        })
    }
}

/// All uncontrolled covariances entering S_Total(T).
#[derive(Debug, Clone)]
pub struct NoiseCovariances<T: Real = f64> {
    /// e^{AT} Cx0 e^{AᵀT}, n×n.
    pub s_x0: DMatrix<T>,
    /// Wiener-driven state covariance, n×n.
    pub s_dw: DMatrix<T>,
    /// Fractional-noise state covariance, n×n.
    pub s_dwh1: DMatrix<T>,
    /// Output fBm covariance σ2 diag(T^{2h̃}) σ2ᵀ, p_out×p_out.
    pub s_wh2_out: DMatrix<T>,
    /// D (S_x0 + S_dW + S_dWH1) Dᵀ + S_WH2, p_out×p_out, positive definite.
    pub s_total: DMatrix<T>,
}

impl<T: Real> NoiseCovariances<T> {
    /// Assembles S_Total from the state-space parts and checks definiteness.
    pub fn assemble(
        spec_d: &DMatrix<T>,
        s_x0: DMatrix<T>,
        s_dw: DMatrix<T>,
        s_dwh1: DMatrix<T>,
        s_wh2_out: DMatrix<T>,
    ) -> Result<Self, CovError> {
        let state_sum = &s_x0 + &s_dw + &s_dwh1;
        let s_total = matcore::symmetrize(&(spec_d * state_sum * spec_d.transpose() + &s_wh2_out));
        if nalgebra::Cholesky::new(s_total.clone()).is_none() {
            return Err(CovError::SingularTotalCovariance);
        }
        Ok(Self {
            s_x0,
            s_dw,
            s_dwh1,
            s_wh2_out,
            s_total,
        })
    }
}

/// Raw integral ∫_{lo}^{hi} e^{A(horizon-t)} M Mᵀ e^{Aᵀ(horizon-t)} dt.
pub fn gramian_interval<T: Real>(
    a: &DMatrix<T>,
    input: &DMatrix<T>,
    lo: T,
    hi: T,
    horizon: T,
    panels: usize,
    degree: usize,
) -> DMatrix<T> {
    let n = a.nrows();
    if hi <= lo {
        return DMatrix::zeros(n, n);
    }
    let f = |t: T| -> DMatrix<T> {
        let phi = expm(&(a * (horizon - t))).expect("finite square drift") * input;
        &phi * phi.transpose()
    };
    let raw = quad::integrate_matrix(f, lo, hi, panels, degree);
    matcore::symmetrize(&raw)
}

fn refined_gramian<T: Real>(
    a: &DMatrix<T>,
    input: &DMatrix<T>,
    lo: T,
    hi: T,
    horizon: T,
    quad_cfg: &QuadConfig,
) -> (DMatrix<T>, QuadratureMeta<T>) {
    let mut panels = quad_cfg.panels;
    let mut coarse = gramian_interval(a, input, lo, hi, horizon, panels, quad_cfg.degree);
    let target = real::<T>(quad_cfg.target_rel_1d);
    let mut last_err = T::zero();
    for _ in 0..=quad_cfg.max_refinements {
        let fine = gramian_interval(a, input, lo, hi, horizon, panels * 2, quad_cfg.degree);
        let scale = matcore::frobenius(&fine);
        let err = if scale == T::zero() {
            T::zero()
        } else {
            matcore::frobenius(&(&fine - &coarse)) / scale
        };
        panels *= 2;
        coarse = fine;
        last_err = err;
        if err <= target {
            break;
        }
    }
    let meta = QuadratureMeta {
        panels,
        degree: quad_cfg.degree,
        est_rel_error: last_err,
    };
    (coarse, meta)
}

/// G1(b_k) = ∫₀^{T-h} e^{A(T-t)} b_k b_kᵀ e^{Aᵀ(T-t)} dt with b_k the k-th
/// column of the effective input matrix B = B1 + e^{-Ah} B2.
pub fn gramian_g1<T: Real>(
    spec: &SystemSpec<T>,
    k: usize,
    quad_cfg: &QuadConfig,
) -> Result<DMatrix<T>, CovError> {
    spec.check()?;
    if k >= spec.p() {
        return Err(CovError::ColumnOutOfRange(k, spec.p()));
    }
    let b = effective_b(spec)?;
    let col = DMatrix::from_column_slice(spec.n(), 1, b.column(k).clone_owned().as_slice());
    let upper = spec.horizon - spec.delay;
    Ok(refined_gramian(&spec.a, &col, T::zero(), upper, spec.horizon, quad_cfg).0)
}

/// G2(b1_k) = ∫_{T-h}^{T} e^{A(T-t)} b1_k b1_kᵀ e^{Aᵀ(T-t)} dt.
pub fn gramian_g2<T: Real>(
    spec: &SystemSpec<T>,
    k: usize,
    quad_cfg: &QuadConfig,
) -> Result<DMatrix<T>, CovError> {
    spec.check()?;
    if k >= spec.p() {
        return Err(CovError::ColumnOutOfRange(k, spec.p()));
    }
    let col = DMatrix::from_column_slice(spec.n(), 1, spec.b1.column(k).clone_owned().as_slice());
    Ok(refined_gramian(
        &spec.a,
        &col,
        spec.horizon - spec.delay,
        spec.horizon,
        spec.horizon,
        quad_cfg,
    )
    .0)
}

/// Full controllability operator
/// G_T = ∫₀^{T-h} e^{A(T-t)} B Bᵀ e^{Aᵀ(T-t)} dt + ∫_{T-h}^T e^{A(T-t)} B1 B1ᵀ e^{Aᵀ(T-t)} dt.
pub fn gramian_gt<T: Real>(spec: &SystemSpec<T>, quad_cfg: &QuadConfig) -> Result<DMatrix<T>, CovError> {
    spec.check()?;
    let b = effective_b(spec)?;
    let split = spec.horizon - spec.delay;
    let early = refined_gramian(&spec.a, &b, T::zero(), split, spec.horizon, quad_cfg).0;
    let late = refined_gramian(&spec.a, &spec.b1, split, spec.horizon, spec.horizon, quad_cfg).0;
    Ok(early + late)
}

/// Builds every per-column Gramian, its eigendecomposition, and G_T.
pub fn gramians<T: Real>(spec: &SystemSpec<T>, quad_cfg: &QuadConfig) -> Result<GramianSet<T>, CovError> {
    spec.check()?;
    let p = spec.p();
    let b = effective_b(spec)?;
    let split = spec.horizon - spec.delay;
    let mut g1 = Vec::with_capacity(p);
    let mut g2 = Vec::with_capacity(p);
    let mut meta = QuadratureMeta {
        panels: quad_cfg.panels,
        degree: quad_cfg.degree,
        est_rel_error: T::zero(),
    };
    let mut bump = |m: QuadratureMeta<T>, meta: &mut QuadratureMeta<T>| {
        meta.panels = meta.panels.max(m.panels);
        if m.est_rel_error > meta.est_rel_error {
            meta.est_rel_error = m.est_rel_error;
        }
    };
    for k in 0..p {
        let col = DMatrix::from_column_slice(spec.n(), 1, b.column(k).clone_owned().as_slice());
        let (m1, meta1) = refined_gramian(&spec.a, &col, T::zero(), split, spec.horizon, quad_cfg);
        bump(meta1, &mut meta);
        g1.push(m1);
        let col1 = DMatrix::from_column_slice(spec.n(), 1, spec.b1.column(k).clone_owned().as_slice());
        let (m2, meta2) =
            refined_gramian(&spec.a, &col1, split, spec.horizon, spec.horizon, quad_cfg);
        bump(meta2, &mut meta);
        g2.push(m2);
    }
    let g1_eig = g1.iter().map(matcore::sym_eig).collect::<Result<Vec<_>, _>>()?;
    let g2_eig = g2.iter().map(matcore::sym_eig).collect::<Result<Vec<_>, _>>()?;
    let g_t = gramian_gt(spec, quad_cfg)?;
    Ok(GramianSet {
        g1,
        g2,
        g1_eig,
        g2_eig,
        g_t,
        meta,
    })
}

/// S_dW(T) = ∫₀^T e^{A(T-t)} G Gᵀ e^{Aᵀ(T-t)} dt (Itô isometry form).
pub fn white_noise_cov<T: Real>(spec: &SystemSpec<T>, quad_cfg: &QuadConfig) -> Result<DMatrix<T>, CovError> {
    spec.check()?;
    Ok(refined_gramian(&spec.a, &spec.g, T::zero(), spec.horizon, spec.horizon, quad_cfg).0)
}

/// Panel intervals over [a, b]: `base` uniform panels whose end panel
/// (at `b` when `grade_at_end`, else at `a`) is subdivided geometrically
/// `levels` times. The grading restores fast convergence against algebraic
/// endpoint singularities.
fn graded_panels<T: Real>(a: T, b: T, base: usize, levels: usize, grade_at_end: bool) -> Vec<(T, T)> {
    let width = (b - a) / real::<T>(base as f64);
    let mut panels = Vec::with_capacity(base + levels);
    if grade_at_end {
        for i in 0..base - 1 {
            let lo = a + width * real::<T>(i as f64);
            panels.push((lo, lo + width));
        }
        let mut lo = b - width;
        let mut w = width;
        for _ in 0..levels {
            w *= real::<T>(0.5);
            panels.push((lo, lo + w));
            lo += w;
        }
        panels.push((lo, b));
    } else {
        let mut hi = a + width;
        let mut w = width;
        let mut head = Vec::with_capacity(levels + 1);
        for _ in 0..levels {
            w *= real::<T>(0.5);
            head.push((hi - w, hi));
            hi -= w;
        }
        head.push((a, hi));
        head.reverse();
        panels.extend(head);
        for i in 1..base {
            let lo = a + width * real::<T>(i as f64);
            panels.push((lo, lo + width));
        }
    }
    panels
}

/// One triangle of the fractional double integral for a single column `c`
/// of σ1 with Hurst exponent `hurst`:
///
/// N = H ∫₀ᵀ f(t1) [∫₀^{(T-t1)^{2H-1}} f(t1 + u^{1/(2H-1)})ᵀ du] dt1,
/// f(t) = e^{A(T-t)} c. The full symmetric term is N + Nᵀ.
fn fbm_triangle<T: Real>(
    a: &DMatrix<T>,
    c: &DVector<T>,
    hurst: T,
    horizon: T,
    outer_panels: usize,
    inner_panels: usize,
    degree: usize,
) -> DMatrix<T> {
    let n = a.nrows();
    let two = real::<T>(2.0);
    let alpha = two * hurst - T::one(); // in (0, 1)
    let inv_alpha = T::one() / alpha;
    let f = |t: T| -> DVector<T> { expm(&(a * (horizon - t))).expect("finite drift") * c };

    let (nodes, weights) = quad::gauss_legendre::<T>(degree);
    // The outer integrand carries a (T-t1)^α factor: grade toward t1 = T.
    let outer = graded_panels(T::zero(), horizon, outer_panels, 24, true);

    let panel_results: Vec<DMatrix<T>> = outer
        .into_par_iter()
        .map(|(lo, hi)| {
            let outer_half = (hi - lo) * real::<T>(0.5);
            let mid = (hi + lo) * real::<T>(0.5);
            let mut acc = DMatrix::<T>::zeros(n, n);
            for (xo, wo) in nodes.iter().zip(weights.iter()) {
                let t1 = mid + outer_half * *xo;
                let f1 = f(t1);
                let upper = nalgebra::ComplexField::powf(horizon - t1, alpha);
                // The stretched inner variable loses smoothness at u = 0.
                let mut inner = DVector::<T>::zeros(n);
                for (ilo, ihi) in graded_panels(T::zero(), upper, inner_panels, 24, false) {
                    let inner_half = (ihi - ilo) * real::<T>(0.5);
                    let imid = (ihi + ilo) * real::<T>(0.5);
                    for (xi, wi) in nodes.iter().zip(weights.iter()) {
                        let u = imid + inner_half * *xi;
                        let t2 = t1 + nalgebra::ComplexField::powf(u, inv_alpha);
                        inner += f(t2) * (*wi * inner_half);
                    }
                }
                acc += (&f1 * inner.transpose()) * (*wo * outer_half);
            }
            acc
        })
        .collect();
    let tri = quad::pairwise_sum(panel_results, n, n) * hurst;
    &tri + tri.transpose()
}

/// S_dWH1(T): fractional state covariance with singularity-aware quadrature,
/// summed over the independent fGn channels of σ1.
pub fn state_fbm_cov<T: Real>(spec: &SystemSpec<T>, quad_cfg: &QuadConfig) -> Result<DMatrix<T>, CovError> {
    spec.check()?;
    Ok(state_fbm_cov_at(spec, spec.horizon, quad_cfg))
}

/// Same integral evaluated at an arbitrary horizon (the asymptotic checks
/// evaluate it away from the spec's own `T`).
pub fn state_fbm_cov_at<T: Real>(spec: &SystemSpec<T>, horizon: T, quad_cfg: &QuadConfig) -> DMatrix<T> {
    let n = spec.n();
    if spec.sigma1.iter().all(|x| *x == T::zero()) {
        return DMatrix::zeros(n, n);
    }
    let target = real::<T>(quad_cfg.target_rel_fbm);
    let mut total = DMatrix::<T>::zeros(n, n);
    // Each fGn channel converges at its own rate, so refine per column.
    for k in 0..n {
        let c = spec.sigma1.column(k).into_owned();
        if c.iter().all(|x| *x == T::zero()) {
            continue;
        }
        let mut outer = quad_cfg.fbm_outer_panels;
        let mut inner = quad_cfg.fbm_inner_panels;
        let mut coarse = fbm_triangle(&spec.a, &c, spec.h1[k], horizon, outer, inner, quad_cfg.fbm_degree);
        for _ in 0..=quad_cfg.max_refinements {
            let fine =
                fbm_triangle(&spec.a, &c, spec.h1[k], horizon, outer * 2, inner * 2, quad_cfg.fbm_degree);
            let scale = matcore::frobenius(&fine);
            let err = if scale == T::zero() {
                T::zero()
            } else {
                matcore::frobenius(&(&fine - &coarse)) / scale
            };
            coarse = fine;
            if err <= target {
                break;
            }
            outer *= 2;
            inner *= 2;
        }
        total += coarse;
    }
    matcore::symmetrize(&total)
}

/// Assembles every uncontrolled covariance and
/// S_Total = D (S_x0 + S_dW + S_dWH1) Dᵀ + σ2 diag(T^{2h̃}) σ2ᵀ,
/// verifying that the result is positive definite.
pub fn total_cov<T: Real>(spec: &SystemSpec<T>, quad_cfg: &QuadConfig) -> Result<NoiseCovariances<T>, CovError> {
    spec.check()?;
    let e_at = expm(&(&spec.a * spec.horizon))?;
    let s_x0 = &e_at * &spec.cx0 * e_at.transpose();
    let s_dw = white_noise_cov(spec, quad_cfg)?;
    let s_dwh1 = state_fbm_cov(spec, quad_cfg)?;
    let s_wh2_out = fbm::output_fbm_cov(spec.horizon, &spec.h2, &spec.sigma2)?;
    NoiseCovariances::assemble(&spec.d, s_x0, s_dw, s_dwh1, s_wh2_out)
}

/// Controlled covariances from mode weights:
/// S_u(T-h) = Σ σ_kj v_jk v_jkᵀ and S_u(T) = Σ ω_kj z_jk z_jkᵀ, where
/// v_jk = √g_jk s_jk and z_jk = √d_jk r_jk come from the Gramian
/// eigendecompositions. Weight matrices are p×n, rows indexed by input
/// column k and columns by mode j.
pub fn controlled_cov<T: Real>(
    gramians: &GramianSet<T>,
    sigma: &DMatrix<T>,
    omega: &DMatrix<T>,
) -> Result<(DMatrix<T>, DMatrix<T>), CovError> {
    let p = gramians.p();
    let n = gramians.n();
    for m in [sigma, omega] {
        if m.nrows() != p || m.ncols() != n {
            return Err(CovError::AllocationShape(p, n, m.nrows(), m.ncols()));
        }
        for k in 0..p {
            for j in 0..n {
                if m[(k, j)] < T::zero() {
                    return Err(CovError::NegativeAllocation(k, j));
                }
            }
        }
    }
    let mut early = DMatrix::<T>::zeros(n, n);
    let mut late = DMatrix::<T>::zeros(n, n);
    for k in 0..p {
        let e1 = &gramians.g1_eig[k];
        let e2 = &gramians.g2_eig[k];
        for j in 0..n {
            let g = e1.eigenvalues[j].max(T::zero());
            if sigma[(k, j)] > T::zero() && g > T::zero() {
                let v = e1.eigenvectors.column(j) * g.sqrt();
                early += &v * v.transpose() * sigma[(k, j)];
            }
            let d = e2.eigenvalues[j].max(T::zero());
            if omega[(k, j)] > T::zero() && d > T::zero() {
                let z = e2.eigenvectors.column(j) * d.sqrt();
                late += &z * z.transpose() * omega[(k, j)];
            }
        }
    }
    Ok((early, late))
}
