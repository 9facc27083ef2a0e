//! Small dense helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::scalar::{lit, Real};

/// `(A + Aᵀ) / 2`.
pub fn symmetrize<T: Real>(a: &DMatrix<T>) -> DMatrix<T> {
    (a + a.transpose()) * lit::<T>(0.5)
}

/// Largest absolute asymmetry `max |a_ij - a_ji|`.
pub fn asymmetry<T: Real>(a: &DMatrix<T>) -> T {
    let mut worst = T::zero();
    for i in 0..a.nrows() {
        for j in 0..i {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn sym_eigenvalues<T: Real>(a: &DMatrix<T>) -> Vec<T> {
    if a.nrows() == 0 {
        return Vec::new();
    }
    let eig = SymmetricEigen::new(symmetrize(a));
    let mut values: Vec<T> = eig.eigenvalues.iter().copied().collect();
    values.sort_by(|x, y| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal));
    values
}

pub fn lambda_min<T: Real>(a: &DMatrix<T>) -> T {
    sym_eigenvalues(a).first().copied().unwrap_or_else(T::zero)
}

pub fn lambda_max<T: Real>(a: &DMatrix<T>) -> T {
    sym_eigenvalues(a).last().copied().unwrap_or_else(T::zero)
}

/// Spectral condition number of a symmetric positive-definite matrix;
/// infinite when the smallest eigenvalue is not positive.
pub fn spd_condition<T: Real>(a: &DMatrix<T>) -> T {
    let ev = sym_eigenvalues(a);
    match (ev.first(), ev.last()) {
        (Some(&lo), Some(&hi)) if lo > T::zero() => hi / lo,
        _ => lit(f64::INFINITY),
    }
}

/// Quadratic form `vᵀ A v`.
pub fn quad_form<T: Real>(a: &DMatrix<T>, v: &DVector<T>) -> T {
    v.dot(&(a * v))
}

pub fn all_finite<T: Real>(values: &[T]) -> bool {
    values.iter().all(|v| v.is_finite())
}

/// Index of the first non-finite entry, if any.
pub fn first_non_finite<T: Real>(values: &[T]) -> Option<usize> {
    values.iter().position(|v| !v.is_finite())
}

/// Uniform grid of `count` points on `[lo, hi]`, endpoints included.
pub fn linspace<T: Real>(lo: T, hi: T, count: usize) -> Vec<T> {
    match count {
        0 => Vec::new(),
        1 => vec![(lo + hi) * lit::<T>(0.5)],
        _ => {
            let step = (hi - lo) / T::from_usize(count - 1).unwrap();
            (0..count)
                .map(|k| {
                    if k + 1 == count {
                        hi
                    } else {
                        lo + step * T::from_usize(k).unwrap()
                    }
                })
                .collect()
        }
    }
}

/// Cartesian product of per-axis grids, first axis varying slowest.
pub fn tensor_grid<T: Real>(axes: &[Vec<T>]) -> Vec<DVector<T>> {
    let mut points = vec![Vec::with_capacity(axes.len())];
    for axis in axes {
        let mut next = Vec::with_capacity(points.len() * axis.len());
        for prefix in &points {
            for &v in axis {
                let mut p = prefix.clone();
                p.push(v);
                next.push(p);
            }
        }
        points = next;
    }
    points
        .into_iter()
        .map(|p| DVector::from_vec(p))
        .collect()
}

pub fn to_f64_matrix<T: Real>(a: &DMatrix<T>) -> DMatrix<f64> {
    a.map(|v| v.to_f64_lossy())
}

pub fn from_f64_matrix<T: Real>(a: &DMatrix<f64>) -> DMatrix<T> {
    a.map(lit::<T>)
}

pub fn to_f64_vector<T: Real>(v: &DVector<T>) -> DVector<f64> {
    v.map(|x| x.to_f64_lossy())
}

pub fn from_f64_vector<T: Real>(v: &DVector<f64>) -> DVector<T> {
    v.map(lit::<T>)
}

/// Row-major nested vectors, the layout used by every JSON document.
pub fn matrix_rows(a: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..a.nrows())
        .map(|i| a.row(i).iter().copied().collect())
        .collect()
}

pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Option<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return None;
    }
    Some(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}
