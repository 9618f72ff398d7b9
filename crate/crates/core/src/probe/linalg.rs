//! Small dense kernels for the reductions: symmetric eigensolver and
//! Gram–Schmidt.

use crate::scalar::Scalar;

/// Eigen-decomposition of a symmetric `n x n` row-major matrix by cyclic
/// Jacobi rotations. Returns eigenvalues in descending order and the matching
/// eigenvectors as rows.
pub fn symmetric_eigen<T: Scalar>(matrix: &[T], n: usize) -> (Vec<T>, Vec<Vec<T>>) {
    assert_eq!(matrix.len(), n * n, "matrix must be n x n");
    let mut a = matrix.to_vec();
    let mut v = vec![T::zero(); n * n];
    for i in 0..n {
        v[i * n + i] = T::one();
    }
    let scale = a
        .iter()
        .map(|x| x.abs())
        .fold(T::zero(), T::max)
        .max(T::min_positive_value());
    let tol = T::epsilon() * scale * T::lit(1e-2);
    for _sweep in 0..100 {
        let off: T = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j].abs())
            .fold(T::zero(), T::max);
        if off <= tol {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() <= tol {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (T::lit(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        a[j * n + j]
            .partial_cmp(&a[i * n + i])
            .expect("finite eigenvalues")
    });
    let values = order.iter().map(|&i| a[i * n + i]).collect();
    let vectors = order
        .iter()
        .map(|&i| (0..n).map(|k| v[k * n + i]).collect())
        .collect();
    (values, vectors)
}

/// Orthonormalize the rows of `rows` in place (modified Gram–Schmidt).
/// Rows that collapse numerically are replaced by zero.
pub fn orthonormalize_rows<T: Scalar>(rows: &mut [Vec<T>]) {
    for i in 0..rows.len() {
        for j in 0..i {
            let (head, tail) = rows.split_at_mut(i);
            let proj = dot(&tail[0], &head[j]);
            for (x, &y) in tail[0].iter_mut().zip(&head[j]) {
                *x -= proj * y;
            }
        }
        let norm = dot(&rows[i], &rows[i]).sqrt();
        if norm > T::epsilon() {
            rows[i].iter_mut().for_each(|x| *x /= norm);
        } else {
            rows[i].iter_mut().for_each(|x| *x = T::zero());
        }
    }
}

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Flip `v` so its largest-magnitude entry (first on ties) is positive.
pub fn fix_sign<T: Scalar>(v: &mut [T]) {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if v.get(best).is_some_and(|&x| x < T::zero()) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonalizes_a_known_matrix() {
        // eigenvalues of [[2,1],[1,2]] are 3 and 1
        let (vals, vecs) = symmetric_eigen(&[2.0f64, 1.0, 1.0, 2.0], 2);
        assert!((vals[0] - 3.0).abs() < 1e-12 && (vals[1] - 1.0).abs() < 1e-12);
        let r = 0.5f64.sqrt();
        assert!((vecs[0][0].abs() - r).abs() < 1e-12 && (vecs[0][1].abs() - r).abs() < 1e-12);
    }

    #[test]
    fn gram_schmidt_yields_orthonormal_rows() {
        let mut rows = vec![
            vec![1.0f64, 1.0, 0.0],
            vec![1.0, 0.0, 1.0],
            vec![0.0, 1.0, 1.0],
        ];
        orthonormalize_rows(&mut rows);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot(&rows[i], &rows[j]) - want).abs() < 1e-12);
            }
        }
    }
}
