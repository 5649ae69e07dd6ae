//! Dense linear algebra helpers shared by the solver and the differentiation paths.

use nalgebra::{DMatrix, DVector, Dyn, LU};

/// Pivot ratio below which an LU factorization is treated as singular.
pub const SINGULAR_PIVOT_RATIO: f64 = 1e-13;

/// LU factorization with partial pivoting that refuses numerically singular inputs.
#[derive(Debug, Clone)]
pub struct DenseLu {
    lu: LU<f64, Dyn, Dyn>,
    dim: usize,
}

impl DenseLu {
    pub fn new(m: DMatrix<f64>) -> Option<Self> {
        assert!(m.is_square(), "LU of a non-square matrix");
        let dim = m.nrows();
        if dim == 0 {
            return Some(DenseLu {
                lu: LU::new(m),
                dim,
            });
        }
        let lu = LU::new(m);
        let u_diag = lu.u().diagonal();
        let max = u_diag.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let min = u_diag.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
        if !max.is_finite() || max == 0.0 || min <= SINGULAR_PIVOT_RATIO * max {
            return None;
        }
        Some(DenseLu { lu, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn solve(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        if self.dim == 0 {
            return DMatrix::zeros(0, rhs.ncols());
        }
        self.lu
            .solve(rhs)
            .expect("factorization checked at construction")
    }

    /// Overwrites `rhs` with the solution.
    pub fn solve_in_place(&self, rhs: &mut DMatrix<f64>) {
        if self.dim > 0 {
            assert!(
                self.lu.solve_mut(rhs),
                "factorization checked at construction"
            );
        }
    }

    pub fn solve_vec(&self, rhs: &DVector<f64>) -> DVector<f64> {
        if self.dim == 0 {
            return DVector::zeros(0);
        }
        self.lu
            .solve(rhs)
            .expect("factorization checked at construction")
    }
}

/// `L D Lᵀ` factorization without pivoting for symmetric quasi-definite matrices
/// (positive definite leading block, negative definite trailing block).
pub struct QuasiDefiniteLdl {
    n: usize,
    /// Row-major unit lower triangle; the diagonal slot holds `D`.
    l: Vec<f64>,
}

impl QuasiDefiniteLdl {
    pub fn new(k: &DMatrix<f64>) -> Option<Self> {
        let n = k.nrows();
        let mut l = vec![0.0; n * n];
        let mut w = vec![0.0; n];
        for j in 0..n {
            let (done, rest) = l.split_at_mut(j * n);
            let row_j = &mut rest[..n];
            let mut dj = k[(j, j)];
            for p in 0..j {
                let dp = done[p * n + p];
                w[p] = row_j[p] * dp;
                dj -= row_j[p] * w[p];
            }
            if !dj.is_finite() || dj == 0.0 {
                return None;
            }
            row_j[j] = dj;
            for i in (j + 1)..n {
                let row_i = &mut rest[(i - j) * n..(i - j + 1) * n];
                let dot: f64 = row_i[..j].iter().zip(&w[..j]).map(|(a, b)| a * b).sum();
                row_i[j] = (k[(i, j)] - dot) / dj;
            }
        }
        Some(QuasiDefiniteLdl { n, l })
    }

    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let n = self.n;
        let l = &self.l;
        let mut x: Vec<f64> = rhs.iter().copied().collect();
        for i in 0..n {
            let row = &l[i * n..i * n + i];
            let dot: f64 = row.iter().zip(&x[..i]).map(|(a, b)| a * b).sum();
            x[i] -= dot;
        }
        for i in 0..n {
            x[i] /= l[i * n + i];
        }
        for i in (0..n).rev() {
            let xi = x[i];
            let row = &l[i * n..i * n + i];
            for (xp, lp) in x[..i].iter_mut().zip(row) {
                *xp -= lp * xi;
            }
        }
        DVector::from_vec(x)
    }
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

pub fn max_abs_vec(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0f64, |a, x| a.max(x.abs()))
}

/// Rows `rows` and columns `cols` of `m`, in the given order.
pub fn submatrix(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

pub fn select_rows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), m.ncols(), |i, j| m[(rows[i], j)])
}

/// Orthonormal basis of the null space of `a` (rows are constraint gradients).
///
/// Uses a full Householder QR of the zero-padded `aᵀ`; assumes `a` has full row rank,
/// which the caller reports separately through the LICQ witness.
pub fn null_space(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.ncols();
    let r = a.nrows();
    if r == 0 {
        return DMatrix::identity(n, n);
    }
    if r >= n {
        return DMatrix::zeros(n, 0);
    }
    let mut padded = DMatrix::<f64>::zeros(n, n);
    padded.view_mut((0, 0), (n, r)).copy_from(&a.transpose());
    let q = padded.qr().q();
    q.columns(r, n - r).into_owned()
}

/// Smallest eigenvalue of a symmetric matrix; `+inf` for an empty matrix.
pub fn min_eigenvalue_sym(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues()
        .iter()
        .fold(f64::INFINITY, |a, v| a.min(*v))
}

/// Largest and smallest singular values; `(0, 0)` for an empty matrix.
pub fn extreme_singular_values(m: &DMatrix<f64>) -> (f64, f64) {
    if m.nrows() == 0 || m.ncols() == 0 {
        return (0.0, 0.0);
    }
    let sv = m.singular_values();
    let hi = sv.iter().fold(0.0f64, |a, v| a.max(*v));
    let lo = sv.iter().fold(f64::INFINITY, |a, v| a.min(*v));
    (hi, lo)
}

/// Smallest singular value of a (possibly wide) matrix, counting only `min(rows, cols)` values.
pub fn min_singular_value(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    if m.nrows() > m.ncols() {
        return 0.0;
    }
    extreme_singular_values(m).1
}

/// Serde adapter writing a `DVector` as a plain JSON array.
pub mod serde_vec {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
        Vec::<f64>::deserialize(d).map(DVector::from_vec)
    }
}

/// Serde adapter for a list of vectors.
pub mod serde_vecs {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[DVector<f64>], s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<&[f64]> = v.iter().map(|x| x.as_slice()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<DVector<f64>>, D::Error> {
        Vec::<Vec<f64>>::deserialize(d).map(|v| v.into_iter().map(DVector::from_vec).collect())
    }
}

/// Serde adapter writing a `DMatrix` as row-major nested arrays.
pub mod serde_mat {
    use nalgebra::DMatrix;
    use serde::{de::Error, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        (m.ncols(), rows).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let (ncols, rows) = <(usize, Vec<Vec<f64>>)>::deserialize(d)?;
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(D::Error::custom("ragged matrix rows"));
        }
        Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
    }
}
