//! Small dense matrices for the normal equations and sandwich products.

use crate::scalar::Scalar;

/// Row-major square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Square<T> {
    n: usize,
    data: Vec<T>,
}

impl<T: Scalar> Square<T> {
    pub fn zeros(n: usize) -> Self {
        Square { n, data: vec![T::zero(); n * n] }
    }

    pub fn from_rows(rows: &[&[T]]) -> Self {
        let n = rows.len();
        let mut m = Square::zeros(n);
        for (i, r) in rows.iter().enumerate() {
            assert_eq!(r.len(), n, "matrix is not square");
            m.data[i * n..(i + 1) * n].copy_from_slice(r);
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.n + j] = v;
    }

    /// Adds `w · x xᵀ`.
    pub fn add_outer(&mut self, x: &[T], w: T) {
        for i in 0..self.n {
            let wi = w * x[i];
            if wi == T::zero() {
                continue;
            }
            for j in 0..self.n {
                self.data[i * self.n + j] = self.data[i * self.n + j] + wi * x[j];
            }
        }
    }

    pub fn mul(&self, other: &Square<T>) -> Square<T> {
        assert_eq!(self.n, other.n);
        let n = self.n;
        let mut out = Square::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.get(i, k);
                if a == T::zero() {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] = out.data[i * n + j] + a * other.get(k, j);
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        (0..self.n).map(|i| (0..self.n).map(|j| self.get(i, j) * x[j]).sum()).collect()
    }

    /// Inverse by Gauss-Jordan elimination with partial pivoting; `None` when
    /// a pivot is zero or negligible relative to the matrix scale.
    pub fn inverse(&self) -> Option<Square<T>> {
        let n = self.n;
        let scale = self.data.iter().fold(T::zero(), |m, &v| m.max(v.abs()));
        if scale == T::zero() {
            return None;
        }
        let tiny = scale * T::epsilon() * T::of_usize(n.max(1)) * T::of(16.0);
        let mut a = self.clone();
        let mut inv = Square::zeros(n);
        for i in 0..n {
            inv.set(i, i, T::one());
        }
        for col in 0..n {
            let (piv, pval) = (col..n)
                .map(|r| (r, a.get(r, col).abs()))
                .fold((col, T::zero()), |best, cur| if cur.1 > best.1 { cur } else { best });
            if pval <= tiny {
                return None;
            }
            if piv != col {
                for j in 0..n {
                    a.data.swap(piv * n + j, col * n + j);
                    inv.data.swap(piv * n + j, col * n + j);
                }
            }
            let p = a.get(col, col);
            for j in 0..n {
                a.set(col, j, a.get(col, j) / p);
                inv.set(col, j, inv.get(col, j) / p);
            }
            for r in 0..n {
                if r == col {
                    continue;
                }
                let f = a.get(r, col);
                if f == T::zero() {
                    continue;
                }
                for j in 0..n {
                    a.set(r, j, a.get(r, j) - f * a.get(col, j));
                    inv.set(r, j, inv.get(r, j) - f * inv.get(col, j));
                }
            }
        }
        Some(inv)
    }

    /// `A⁻¹ Ω A⁻¹` for symmetric `A` (self) and `Ω`.
    pub fn sandwich(&self, omega: &Square<T>) -> Option<Square<T>> {
        let inv = self.inverse()?;
        Some(inv.mul(omega).mul(&inv))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_of_known_matrix() {
        let m = Square::from_rows(&[&[4.0f64, 7.0], &[2.0, 6.0]]);
        let inv = m.inverse().unwrap();
        let expect = [0.6, -0.7, -0.2, 0.4];
        for (a, b) in inv.data.iter().zip(expect) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn singular_detected() {
        let m = Square::from_rows(&[&[1.0f32, 2.0], &[2.0, 4.0]]);
        assert!(m.inverse().is_none());
        assert!(Square::<f64>::zeros(3).inverse().is_none());
    }

    #[test]
    fn inverse_times_matrix_is_identity() {
        let m = Square::from_rows(&[&[2.0f64, 1.0, 0.5, 0.0], &[1.0, 3.0, 0.0, 1.0], &[0.5, 0.0, 1.0, 0.2], &[0.0, 1.0, 0.2, 5.0]]);
        let p = m.mul(&m.inverse().unwrap());
        for i in 0..4 {
            for j in 0..4 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((p.get(i, j) - e).abs() < 1e-12);
            }
        }
    }
}
