//! Composite Gauss–Legendre quadrature.
//!
//! Nodes and weights on [-1, 1] come from Newton iteration on the Legendre
//! recurrence. Panel results are combined by pairwise summation so that the
//! value does not depend on any parallel evaluation schedule.

use nalgebra::DMatrix;

use crate::{real, Real};

/// Gauss–Legendre rule of the given degree on [-1, 1].
pub fn gauss_legendre<T: Real>(degree: usize) -> (Vec<T>, Vec<T>) {
    assert!(degree >= 1);
    let n = degree;
    let mut nodes = vec![T::zero(); n];
    let mut weights = vec![T::zero(); n];
    let nf = real::<T>(n as f64);
    for i in 0..n {
        // Chebyshev-flavored initial guess, then Newton on P_n.
        let guess = (real::<T>(std::f64::consts::PI) * (real::<T>(i as f64) + real::<T>(0.75))
            / (nf + real::<T>(0.5)))
        .cos();
        let mut x = guess;
        let mut dp = T::zero();
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative::<T>(n, x);
            dp = d;
            let step = p / d;
            x -= step;
            if step.abs() <= real::<T>(1e-16) * (T::one() + x.abs()) {
                let (p2, d2) = legendre_with_derivative::<T>(n, x);
                dp = d2;
                x -= p2 / d2;
                break;
            }
        }
        nodes[i] = x;
        weights[i] = real::<T>(2.0) / ((T::one() - x * x) * dp * dp);
    }
    (nodes, weights)
}

fn legendre_with_derivative<T: Real>(n: usize, x: T) -> (T, T) {
    let mut p0 = T::one();
    let mut p1 = x;
    for k in 2..=n {
        let kf = real::<T>(k as f64);
        let p2 = ((real::<T>(2.0) * kf - T::one()) * x * p1 - (kf - T::one()) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = real::<T>(n as f64) * (x * p1 - p0) / (x * x - T::one());
    (p1, d)
}

/// Sums a list of matrices pairwise (schedule-independent reduction order).
pub fn pairwise_sum<T: Real>(mut terms: Vec<DMatrix<T>>, rows: usize, cols: usize) -> DMatrix<T> {
    if terms.is_empty() {
        return DMatrix::zeros(rows, cols);
    }
    while terms.len() > 1 {
        let mut next = Vec::with_capacity(terms.len().div_ceil(2));
        let mut it = terms.into_iter();
        while let Some(a) = it.next() {
            match it.next() {
                Some(b) => next.push(a + b),
                None => next.push(a),
            }
        }
        terms = next;
    }
    terms.pop().unwrap()
}

/// Integrates a matrix-valued function over `[a, b]` with `panels` composite
/// Gauss–Legendre panels of the given degree.
pub fn integrate_matrix<T, F>(f: F, a: T, b: T, panels: usize, degree: usize) -> DMatrix<T>
where
    T: Real,
    F: Fn(T) -> DMatrix<T>,
{
    assert!(panels >= 1);
    let (nodes, weights) = gauss_legendre::<T>(degree);
    let width = (b - a) / real::<T>(panels as f64);
    let half = width * real::<T>(0.5);
    let mut panel_results: Vec<DMatrix<T>> = Vec::with_capacity(panels);
    let mut shape = (0usize, 0usize);
    for p in 0..panels {
        let mid = a + width * real::<T>(p as f64) + half;
        let mut acc: Option<DMatrix<T>> = None;
        for (x, w) in nodes.iter().zip(weights.iter()) {
            let t = mid + half * *x;
            let val = f(t) * (*w * half);
            acc = Some(match acc {
                Some(s) => s + val,
                None => val,
            });
        }
        let m = acc.expect("degree >= 1");
        shape = (m.nrows(), m.ncols());
        panel_results.push(m);
    }
    pairwise_sum(panel_results, shape.0, shape.1)
}

/// Scalar convenience wrapper around [`integrate_matrix`].
pub fn integrate_scalar<T, F>(f: F, a: T, b: T, panels: usize, degree: usize) -> T
where
    T: Real,
    F: Fn(T) -> T,
{
    integrate_matrix(|t| DMatrix::from_element(1, 1, f(t)), a, b, panels, degree)[(0, 0)]
}
