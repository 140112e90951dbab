//! Small dense linear algebra kernels generic over [`Scalar`].
//!
//! Only what the analysis needs: LU solves for Newton corrections, minimum-norm
//! solves for underdetermined correctors, and a symmetric eigensolver
//! (Householder tridiagonalisation followed by implicit QL).

use crate::scalar::Scalar;
use std::ops::{Index, IndexMut};

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Mat<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Mat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn mul_vec(&self, v: &[T]) -> Vec<T> {
        debug_assert_eq!(v.len(), self.cols);
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(&a, &b)| a * b).sum())
            .collect()
    }

    pub fn mul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows);
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == T::zero() {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.data[k * other.cols + j];
                }
            }
        }
        out
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
    }

    pub fn is_symmetric(&self, tol: T) -> bool {
        self.rows == self.cols && (0..self.rows).all(|i| (0..i).all(|j| (self[(i, j)] - self[(j, i)]).abs() <= tol))
    }
}

impl<T> Index<(usize, usize)> for Mat<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Mat<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

/// LU factorisation with partial pivoting of a square matrix.
#[derive(Clone, Debug)]
pub struct Lu<T> {
    lu: Mat<T>,
    perm: Vec<usize>,
}

impl<T: Scalar> Lu<T> {
    /// Factorises `a`; returns `None` when a pivot falls below
    /// `n * eps * max|a|`, i.e. the matrix is numerically singular.
    pub fn new(mut a: Mat<T>) -> Option<Self> {
        let n = a.rows;
        assert_eq!(n, a.cols, "LU needs a square matrix");
        let scale = a.max_abs();
        let tiny = T::epsilon() * T::of(n.max(1) as f64) * scale;
        if scale == T::zero() {
            return None;
        }
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (p, pv) = (k..n)
                .map(|i| (i, a[(i, k)].abs()))
                .fold((k, -T::one()), |b, c| if c.1 > b.1 { c } else { b });
            if pv <= tiny {
                return None;
            }
            if p != k {
                for j in 0..n {
                    a.data.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
            }
            let piv = a[(k, k)];
            for i in k + 1..n {
                let f = a[(i, k)] / piv;
                a[(i, k)] = f;
                if f != T::zero() {
                    for j in k + 1..n {
                        let akj = a.data[k * n + j];
                        a.data[i * n + j] -= f * akj;
                    }
                }
            }
        }
        Some(Self { lu: a, perm })
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.lu.rows;
        let mut x: Vec<T> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let row = self.lu.row(i);
            let mut s = x[i];
            for j in 0..i {
                s -= row[j] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let row = self.lu.row(i);
            let mut s = x[i];
            for j in i + 1..n {
                s -= row[j] * x[j];
            }
            x[i] = s / row[i];
        }
        x
    }
}

/// Solves the square system `a x = b`, or `None` if `a` is singular.
pub fn solve<T: Scalar>(a: Mat<T>, b: &[T]) -> Option<Vec<T>> {
    Lu::new(a).map(|lu| lu.solve(b))
}

/// Minimum-norm solution of the full-row-rank underdetermined system
/// `a x = b` (`a` is m×n with m < n) via the normal equations of `a aᵀ`.
pub fn solve_min_norm<T: Scalar>(a: &Mat<T>, b: &[T]) -> Option<Vec<T>> {
    let at = a.transpose();
    let y = solve(a.mul(&at), b)?;
    Some(at.mul_vec(&y))
}

/// Eigen-decomposition of a real symmetric matrix.
#[derive(Clone, Debug)]
pub struct SymmetricEigen<T> {
    /// Eigenvalues in descending order.
    pub values: Vec<T>,
    /// Column `k` holds the unit eigenvector for `values[k]`; empty when
    /// only eigenvalues were requested.
    pub vectors: Option<Mat<T>>,
}

impl<T: Scalar> SymmetricEigen<T> {
    pub fn new(a: &Mat<T>) -> Self {
        Self::compute(a, true)
    }

    pub fn values_only(a: &Mat<T>) -> Vec<T> {
        Self::compute(a, false).values
    }

    /// Eigenvector paired with `values[k]`.
    pub fn vector(&self, k: usize) -> Option<Vec<T>> {
        let v = self.vectors.as_ref()?;
        Some((0..v.rows()).map(|i| v[(i, k)]).collect())
    }

    fn compute(a: &Mat<T>, want_vectors: bool) -> Self {
        let n = a.rows();
        assert_eq!(n, a.cols(), "symmetric eigensolver needs a square matrix");
        if n == 0 {
            return Self {
                values: vec![],
                vectors: want_vectors.then(|| Mat::zeros(0, 0)),
            };
        }
        let mut v = a.clone();
        let mut d = vec![T::zero(); n];
        let mut e = vec![T::zero(); n];
        tred2(&mut v, &mut d, &mut e, want_vectors);
        tql2(&mut v, &mut d, &mut e, want_vectors);

        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| d[j].partial_cmp(&d[i]).unwrap_or(std::cmp::Ordering::Equal));
        let values = order.iter().map(|&i| d[i]).collect();
        let vectors = want_vectors.then(|| Mat::from_fn(n, n, |r, c| v[(r, order[c])]));
        Self { values, vectors }
    }
}

// Householder reduction to tridiagonal form (after the EISPACK tred2 routine).
fn tred2<T: Scalar>(v: &mut Mat<T>, d: &mut [T], e: &mut [T], want_vectors: bool) {
    let n = d.len();
    let zero = T::zero();
    for j in 0..n {
        d[j] = v[(n - 1, j)];
    }
    for i in (1..n).rev() {
        let mut scale = zero;
        let mut h = zero;
        for k in 0..i {
            scale += d[k].abs();
        }
        if scale == zero {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[(i - 1, j)];
                v[(i, j)] = zero;
                v[(j, i)] = zero;
            }
        } else {
            for k in 0..i {
                d[k] /= scale;
                h += d[k] * d[k];
            }
            let mut f = d[i - 1];
            let mut g = h.sqrt();
            if f > zero {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for ej in e.iter_mut().take(i) {
                *ej = zero;
            }
            for j in 0..i {
                f = d[j];
                v[(j, i)] = f;
                g = e[j] + v[(j, j)] * f;
                for k in j + 1..i {
                    g += v[(k, j)] * d[k];
                    e[k] += v[(k, j)] * f;
                }
                e[j] = g;
            }
            f = zero;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                g = e[j];
                for k in j..i {
                    let upd = f * e[k] + g * d[k];
                    v[(k, j)] -= upd;
                }
                d[j] = v[(i - 1, j)];
                v[(i, j)] = zero;
            }
        }
        d[i] = h;
    }

    if !want_vectors {
        for j in 0..n {
            d[j] = if j + 1 < n { v[(j, j)] } else { v[(n - 1, n - 1)] };
        }
        e[0] = zero;
        return;
    }

    for i in 0..n - 1 {
        v[(n - 1, i)] = v[(i, i)];
        v[(i, i)] = T::one();
        let h = d[i + 1];
        if h != zero {
            for k in 0..=i {
                d[k] = v[(k, i + 1)] / h;
            }
            for j in 0..=i {
                let mut g = zero;
                for k in 0..=i {
                    g += v[(k, i + 1)] * v[(k, j)];
                }
                for k in 0..=i {
                    let upd = g * d[k];
                    v[(k, j)] -= upd;
                }
            }
        }
        for k in 0..=i {
            v[(k, i + 1)] = zero;
        }
    }
    for j in 0..n {
        d[j] = v[(n - 1, j)];
        v[(n - 1, j)] = zero;
    }
    v[(n - 1, n - 1)] = T::one();
    e[0] = zero;
}

// Implicit QL iterations on the tridiagonal form (after the EISPACK tql2 routine).
fn tql2<T: Scalar>(v: &mut Mat<T>, d: &mut [T], e: &mut [T], want_vectors: bool) {
    let n = d.len();
    let zero = T::zero();
    let one = T::one();
    let two = T::of(2.0);
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = zero;

    let mut f = zero;
    let mut tst1 = zero;
    let eps = T::epsilon();
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        if m == n {
            m = n - 1;
        }
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (two * e[l]);
                let mut r = p.hypot(one);
                if p < zero {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in d.iter_mut().take(n).skip(l + 2) {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = one;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = zero;
                let mut s2 = zero;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    if want_vectors {
                        for k in 0..n {
                            let vk1 = v[(k, i + 1)];
                            let vk = v[(k, i)];
                            v[(k, i + 1)] = s * vk + c * vk1;
                            v[(k, i)] = c * vk - s * vk1;
                        }
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 || iter > 60 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = zero;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_symmetric(n: usize, rng: &mut ChaCha8Rng) -> Mat<f64> {
        let mut a = Mat::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let x: f64 = rng.gen_range(-1.0..1.0);
                a[(i, j)] = x;
                a[(j, i)] = x;
            }
        }
        a
    }

    #[test]
    fn lu_solves_random_systems() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [1, 2, 5, 17] {
            let a = Mat::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
            let x: Vec<f64> = (0..n).map(|i| i as f64 - 2.0).collect();
            let b = a.mul_vec(&x);
            let got = solve(a, &b).unwrap();
            for (g, e) in got.iter().zip(&x) {
                assert!((g - e).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn lu_rejects_singular() {
        let a = Mat::from_fn(3, 3, |i, j| (i + j) as f64);
        assert!(Lu::new(a).is_none());
        assert!(Lu::new(Mat::<f64>::zeros(2, 2)).is_none());
    }

    #[test]
    fn min_norm_solution_is_orthogonal_to_kernel() {
        let a: Mat<f64> = Mat::from_fn(1, 2, |_, _| 1.0);
        let x = solve_min_norm(&a, &[2.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn eigen_reconstructs_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [1, 2, 3, 8, 30] {
            let a = random_symmetric(n, &mut rng);
            let eig = SymmetricEigen::new(&a);
            let v = eig.vectors.as_ref().unwrap();
            for k in 0..n {
                let col = eig.vector(k).unwrap();
                let av = a.mul_vec(&col);
                for i in 0..n {
                    assert!((av[i] - eig.values[k] * col[i]).abs() < 1e-10, "n={n}");
                }
            }
            let vtv = v.transpose().mul(v);
            for i in 0..n {
                for j in 0..n {
                    let e = if i == j { 1.0 } else { 0.0 };
                    assert!((vtv[(i, j)] - e).abs() < 1e-10);
                }
            }
            assert!(eig.values.windows(2).all(|w| w[0] >= w[1]));
            let only = SymmetricEigen::values_only(&a);
            for (x, y) in only.iter().zip(&eig.values) {
                assert!((x - y).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn eigen_agrees_with_nalgebra() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 12;
        let a = random_symmetric(n, &mut rng);
        let na = nalgebra::DMatrix::from_fn(n, n, |i, j| a[(i, j)]);
        let mut reference: Vec<f64> = na.symmetric_eigenvalues().iter().copied().collect();
        reference.sort_by(|x, y| y.partial_cmp(x).unwrap());
        let ours = SymmetricEigen::values_only(&a);
        for (x, y) in ours.iter().zip(&reference) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn eigen_handles_diagonal_and_f32() {
        let a = Mat::from_fn(3, 3, |i, j| if i == j { [3.0f32, -1.0, 2.0][i] } else { 0.0 });
        let vals = SymmetricEigen::values_only(&a);
        assert_eq!(vals, vec![3.0, 2.0, -1.0]);
    }
}
