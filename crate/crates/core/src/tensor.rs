//! Dense complex tensors and the handful of linear-algebra kernels the rest of
//! the crate is built on.
//!
//! Entries are stored in row-major order: the last axis varies fastest. Every
//! reshape is therefore free, and permutations materialize a new buffer. All
//! contractions are lowered onto a single complex GEMM so their results are
//! bit-stable for a fixed input.

use std::fmt;

use faer::{Mat, MatRef, Side};
use num_complex::Complex64 as C64;
use thiserror::Error;

/// Default relative cutoff for singular values, in units of the largest one.
pub const DEFAULT_SVD_CUTOFF: f64 = 1e-14;

/// Relative gap below which two singular values count as degenerate.
const DEGENERACY_GAP: f64 = 1e-12;

/// Tolerance used when checking that a matrix is Hermitian.
pub const HERMITIAN_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("argument error: {0}")]
    Argument(String),

    #[error("numerical error: {0}")]
    Numerical(String),
}

pub type TensorResult<T> = Result<T, TensorError>;

#[derive(Clone, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<C64>,
}

impl fmt::Debug for DenseTensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DenseTensor{:?}", self.shape)
    }
}

fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for k in (0..shape.len().saturating_sub(1)).rev() {
        strides[k] = strides[k + 1] * shape[k + 1];
    }
    strides
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, data: Vec<C64>) -> TensorResult<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(TensorError::Argument(format!("zero extent in shape {shape:?}")));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(TensorError::Dimension(format!(
                "shape {shape:?} needs {len} entries, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![C64::new(0.0, 0.0); len] }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> C64) -> Self {
        let mut out = Self::zeros(shape);
        let mut idx = vec![0; shape.len()];
        for k in 0..out.data.len() {
            out.data[k] = f(&idx);
            for ax in (0..shape.len()).rev() {
                idx[ax] += 1;
                if idx[ax] < shape[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        out
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(&[n, n], |ix| if ix[0] == ix[1] { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) })
    }

    /// Real diagonal matrix.
    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        let mut out = Self::zeros(&[n, n]);
        for (k, &v) in values.iter().enumerate() {
            out.data[k * n + k] = C64::new(v, 0.0);
        }
        out
    }

    pub fn from_rows(rows: &[&[C64]]) -> TensorResult<Self> {
        let ncols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(TensorError::Dimension("ragged rows".into()));
        }
        Self::new(vec![rows.len(), ncols], rows.iter().flat_map(|r| r.iter().copied()).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<C64> {
        self.data
    }

    fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.shape.len());
        idx.iter().zip(&self.shape).fold(0, |acc, (&i, &d)| {
            debug_assert!(i < d);
            acc * d + i
        })
    }

    pub fn get(&self, idx: &[usize]) -> C64 {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], value: C64) {
        let k = self.offset(idx);
        self.data[k] = value;
    }

    pub fn reshape(mut self, shape: &[usize]) -> TensorResult<Self> {
        let len: usize = shape.iter().product();
        if len != self.data.len() || shape.contains(&0) {
            return Err(TensorError::Dimension(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Reorders axes so that output axis `k` is input axis `axes[k]`.
    pub fn permute(&self, axes: &[usize]) -> TensorResult<Self> {
        let n = self.rank();
        if axes.len() != n {
            return Err(TensorError::Argument(format!("permutation {axes:?} for rank {n}")));
        }
        let mut seen = vec![false; n];
        for &a in axes {
            if a >= n || seen[a] {
                return Err(TensorError::Argument(format!("invalid permutation {axes:?}")));
            }
            seen[a] = true;
        }
        if axes.iter().enumerate().all(|(k, &a)| k == a) {
            return Ok(self.clone());
        }
        let in_strides = row_major_strides(&self.shape);
        let out_shape: Vec<usize> = axes.iter().map(|&a| self.shape[a]).collect();
        let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
        let mut out = Vec::with_capacity(self.data.len());
        // the innermost axis is unrolled into a strided copy
        let last = n - 1;
        let inner_len = out_shape[last];
        let inner_stride = src_strides[last];
        let mut idx = vec![0usize; n];
        let mut base = 0usize;
        let outer: usize = out_shape[..last].iter().product();
        for _ in 0..outer {
            for j in 0..inner_len {
                out.push(self.data[base + j * inner_stride]);
            }
            for ax in (0..last).rev() {
                idx[ax] += 1;
                base += src_strides[ax];
                if idx[ax] < out_shape[ax] {
                    break;
                }
                base -= src_strides[ax] * out_shape[ax];
                idx[ax] = 0;
            }
        }
        Ok(Self { shape: out_shape, data: out })
    }

    pub fn conj(&self) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|z| z.conj()).collect() }
    }

    pub fn scale(mut self, factor: C64) -> Self {
        self.data.iter_mut().for_each(|z| *z *= factor);
        self
    }

    pub fn scale_real(mut self, factor: f64) -> Self {
        self.data.iter_mut().for_each(|z| *z *= factor);
        self
    }

    pub fn add(&self, other: &Self) -> TensorResult<Self> {
        if self.shape != other.shape {
            return Err(TensorError::Dimension(format!("{:?} + {:?}", self.shape, other.shape)));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(Self { shape: self.shape.clone(), data })
    }

    pub fn sub(&self, other: &Self) -> TensorResult<Self> {
        self.add(&other.clone().scale_real(-1.0))
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Scalar multiplication of axis `axis` by `weights`, entry by entry.
    pub fn scale_axis(&mut self, axis: usize, weights: &[f64]) -> TensorResult<()> {
        if axis >= self.rank() || self.shape[axis] != weights.len() {
            return Err(TensorError::Dimension(format!(
                "axis {axis} of {:?} against {} weights",
                self.shape,
                weights.len()
            )));
        }
        let inner: usize = self.shape[axis + 1..].iter().product();
        let d = self.shape[axis];
        for (k, z) in self.data.iter_mut().enumerate() {
            *z *= weights[(k / inner) % d];
        }
        Ok(())
    }

    pub fn trace(&self) -> TensorResult<C64> {
        let n = self.square_dim()?;
        Ok((0..n).map(|k| self.data[k * n + k]).sum())
    }

    fn square_dim(&self) -> TensorResult<usize> {
        match self.shape.as_slice() {
            [r, c] if r == c => Ok(*r),
            s => Err(TensorError::Dimension(format!("expected a square matrix, got {s:?}"))),
        }
    }

    fn matrix_dims(&self) -> TensorResult<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            s => Err(TensorError::Dimension(format!("expected a matrix, got {s:?}"))),
        }
    }

    /// Conjugate transpose of a matrix.
    pub fn adjoint(&self) -> TensorResult<Self> {
        self.matrix_dims()?;
        Ok(self.permute(&[1, 0])?.conj())
    }

    pub fn matmul(&self, other: &Self) -> TensorResult<Self> {
        contract(self, other, &[(1, 0)])
    }

    /// Kronecker product of two matrices, `self` being the major factor.
    pub fn kron(&self, other: &Self) -> TensorResult<Self> {
        let (r1, c1) = self.matrix_dims()?;
        let (r2, c2) = other.matrix_dims()?;
        Ok(Self::from_fn(&[r1 * r2, c1 * c2], |ix| {
            self.data[(ix[0] / r2) * c1 + ix[1] / c2] * other.data[(ix[0] % r2) * c2 + ix[1] % c2]
        }))
    }

    /// Largest entrywise deviation from Hermiticity.
    pub fn hermiticity_error(&self) -> TensorResult<f64> {
        let n = self.square_dim()?;
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in i..n {
                worst = worst.max((self.data[i * n + j] - self.data[j * n + i].conj()).norm());
            }
        }
        Ok(worst)
    }

    /// Largest entrywise deviation of `U U†` from the identity.
    pub fn unitarity_error(&self) -> TensorResult<f64> {
        let n = self.square_dim()?;
        let prod = self.matmul(&self.adjoint()?)?;
        let id = Self::identity(n);
        Ok(prod.sub(&id)?.max_abs())
    }

    pub(crate) fn to_faer(&self) -> TensorResult<Mat<C64>> {
        let (r, c) = self.matrix_dims()?;
        Ok(Mat::from_fn(r, c, |i, j| self.data[i * c + j]))
    }

    pub(crate) fn from_faer(m: MatRef<'_, C64>) -> Self {
        let (r, c) = (m.nrows(), m.ncols());
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                data.push(m[(i, j)]);
            }
        }
        Self { shape: vec![r, c], data }
    }
}

/// Row-major complex GEMM, `c = a · b` with `a: m×k`, `b: k×n`.
fn gemm(m: usize, k: usize, n: usize, a: &[C64], b: &[C64]) -> Vec<C64> {
    let mut c = vec![C64::new(0.0, 0.0); m * n];
    if m == 0 || n == 0 || k == 0 {
        return c;
    }
    // SAFETY: Complex64 is repr(C) with layout [re, im], identical to
    // matrixmultiply's c64; all pointers cover exactly m*k, k*n and m*n entries
    // with the row-major strides passed alongside.
    unsafe {
        matrixmultiply::zgemm(
            matrixmultiply::CGemmOption::Standard,
            matrixmultiply::CGemmOption::Standard,
            m,
            k,
            n,
            [1.0, 0.0],
            a.as_ptr() as *const [f64; 2],
            k as isize,
            1,
            b.as_ptr() as *const [f64; 2],
            n as isize,
            1,
            [0.0, 0.0],
            c.as_mut_ptr() as *mut [f64; 2],
            n as isize,
            1,
        );
    }
    c
}

/// Contracts `a` with `b` over the listed `(axis of a, axis of b)` pairs.
///
/// The result carries the free axes of `a` followed by the free axes of `b`,
/// each group in its original order.
pub fn contract(a: &DenseTensor, b: &DenseTensor, pairs: &[(usize, usize)]) -> TensorResult<DenseTensor> {
    let mut used_a = vec![false; a.rank()];
    let mut used_b = vec![false; b.rank()];
    for &(ia, ib) in pairs {
        if ia >= a.rank() || ib >= b.rank() {
            return Err(TensorError::Argument(format!(
                "axis pair ({ia}, {ib}) out of range for ranks {} and {}",
                a.rank(),
                b.rank()
            )));
        }
        if used_a[ia] || used_b[ib] {
            return Err(TensorError::Argument(format!("repeated axis in pairs {pairs:?}")));
        }
        used_a[ia] = true;
        used_b[ib] = true;
        if a.shape[ia] != b.shape[ib] {
            return Err(TensorError::Dimension(format!(
                "contracting axis {ia} of {:?} with axis {ib} of {:?}",
                a.shape, b.shape
            )));
        }
    }
    let free_a: Vec<usize> = (0..a.rank()).filter(|&k| !used_a[k]).collect();
    let free_b: Vec<usize> = (0..b.rank()).filter(|&k| !used_b[k]).collect();

    let perm_a: Vec<usize> = free_a.iter().copied().chain(pairs.iter().map(|p| p.0)).collect();
    let perm_b: Vec<usize> = pairs.iter().map(|p| p.1).chain(free_b.iter().copied()).collect();
    let pa = a.permute(&perm_a)?;
    let pb = b.permute(&perm_b)?;

    let m: usize = free_a.iter().map(|&k| a.shape[k]).product();
    let n: usize = free_b.iter().map(|&k| b.shape[k]).product();
    let k: usize = pairs.iter().map(|p| a.shape[p.0]).product();

    let mut shape: Vec<usize> = free_a.iter().map(|&x| a.shape[x]).collect();
    shape.extend(free_b.iter().map(|&x| b.shape[x]));
    let data = gemm(m, k, n, &pa.data, &pb.data);
    if shape.is_empty() {
        shape.push(1);
    }
    Ok(DenseTensor { shape, data })
}

/// Truncated singular value decomposition of a tensor viewed as a matrix.
#[derive(Clone, Debug)]
pub struct SvdResult {
    /// Shape `[row axes..., kept]`.
    pub left_isometry: DenseTensor,
    /// Descending, nonnegative.
    pub singular_values: Vec<f64>,
    /// Shape `[kept, column axes...]`.
    pub right_isometry: DenseTensor,
    /// Squared norm of the dropped singular values over the total.
    pub discarded_weight: f64,
    /// The cut fell inside a degenerate multiplet that did not fit in `max_rank`.
    pub split_multiplet: bool,
}

/// Number of singular values to keep out of `sv` (descending).
fn kept_rank(sv: &[f64], max_rank: usize, cutoff: f64) -> (usize, bool) {
    let smax = sv.first().copied().unwrap_or(0.0);
    let above = sv.iter().take_while(|&&s| s > cutoff * smax).count();
    let mut keep = above.min(max_rank).max(1).min(sv.len());
    if keep < sv.len() {
        // Extend over a degenerate multiplet only while it still fits.
        let degenerate = |i: usize| (sv[i - 1] - sv[i]).abs() <= DEGENERACY_GAP * smax.max(f64::MIN_POSITIVE);
        let mut end = keep;
        while end < sv.len() && degenerate(end) {
            end += 1;
        }
        if end > keep {
            if end <= max_rank && sv[end - 1] > cutoff * smax {
                keep = end;
            } else {
                return (keep, true);
            }
        }
    }
    (keep, false)
}

/// Splits `t` into `U · diag(s) · V` with `row_axes` on the left.
pub fn svd_split(t: &DenseTensor, row_axes: &[usize], max_rank: usize, cutoff: f64) -> TensorResult<SvdResult> {
    if t.is_empty() {
        return Err(TensorError::Argument("svd of an empty tensor".into()));
    }
    if max_rank == 0 {
        return Err(TensorError::Argument("max_rank must be positive".into()));
    }
    if row_axes.is_empty() || row_axes.len() >= t.rank() {
        return Err(TensorError::Argument(format!(
            "row axes {row_axes:?} must be a proper nonempty subset of {} axes",
            t.rank()
        )));
    }
    let mut is_row = vec![false; t.rank()];
    for &a in row_axes {
        if a >= t.rank() || is_row[a] {
            return Err(TensorError::Argument(format!("invalid row axes {row_axes:?}")));
        }
        is_row[a] = true;
    }
    let col_axes: Vec<usize> = (0..t.rank()).filter(|&k| !is_row[k]).collect();
    let perm: Vec<usize> = row_axes.iter().chain(&col_axes).copied().collect();
    let row_shape: Vec<usize> = row_axes.iter().map(|&k| t.shape[k]).collect();
    let col_shape: Vec<usize> = col_axes.iter().map(|&k| t.shape[k]).collect();
    let rows: usize = row_shape.iter().product();
    let cols: usize = col_shape.iter().product();

    let mat = t.permute(&perm)?.reshape(&[rows, cols])?;
    let (u, sv, vt) = matrix_svd(&mat)?;

    let total: f64 = sv.iter().map(|s| s * s).sum();
    let (keep, split_multiplet) = kept_rank(&sv, max_rank, cutoff);
    let dropped: f64 = sv[keep..].iter().map(|s| s * s).sum();
    let discarded_weight = if total > 0.0 { (dropped / total).clamp(0.0, 1.0) } else { 0.0 };

    let full = sv.len();
    let mut left = Vec::with_capacity(rows * keep);
    for i in 0..rows {
        left.extend_from_slice(&u.data[i * full..i * full + keep]);
    }
    let right = vt.data[..keep * cols].to_vec();

    let mut left_shape = row_shape;
    left_shape.push(keep);
    let mut right_shape = vec![keep];
    right_shape.extend(col_shape);
    Ok(SvdResult {
        left_isometry: DenseTensor::new(left_shape, left)?,
        singular_values: sv[..keep].to_vec(),
        right_isometry: DenseTensor::new(right_shape, right)?,
        discarded_weight,
        split_multiplet,
    })
}

/// Thin SVD of a matrix with singular values sorted descending:
/// returns `(U: m×r, s, V†: r×n)` with `r = min(m, n)`.
pub fn matrix_svd(mat: &DenseTensor) -> TensorResult<(DenseTensor, Vec<f64>, DenseTensor)> {
    let (rows, cols) = mat.matrix_dims()?;
    if !mat.is_finite() {
        return Err(TensorError::Numerical("svd input has non-finite entries".into()));
    }
    let m = mat.to_faer()?;
    let svd = m
        .thin_svd()
        .map_err(|e| TensorError::Numerical(format!("svd of {rows}x{cols} matrix failed: {e:?}")))?;
    let r = rows.min(cols);
    let s = svd.S().column_vector();
    let sv: Vec<f64> = (0..r).map(|k| s[k].re.max(0.0)).collect();
    let mut u = DenseTensor::from_faer(svd.U());
    let v = svd.V();
    let mut vh = DenseTensor::from_fn(&[r, cols], |ix| v[(ix[1], ix[0])].conj());
    // Phase convention: the leading entry of every left vector is real positive.
    for k in 0..r {
        let col: Vec<f64> = (0..rows).map(|i| u.data[i * r + k].norm()).collect();
        let top = col.iter().copied().fold(0.0, f64::max);
        let Some(i) = col.iter().position(|&x| x >= top * (1.0 - 1e-8)) else { continue };
        if top == 0.0 {
            continue;
        }
        let phase = u.data[i * r + k] / top;
        for i in 0..rows {
            u.data[i * r + k] *= phase.conj();
        }
        for j in 0..cols {
            vh.data[k * cols + j] *= phase;
        }
    }
    Ok((u, sv, vh))
}

/// Thin QR decomposition `mat = Q R` with `Q: m×r`, `R: r×n`, `r = min(m, n)`.
pub fn matrix_qr(mat: &DenseTensor) -> TensorResult<(DenseTensor, DenseTensor)> {
    mat.matrix_dims()?;
    let qr = mat.to_faer()?.qr();
    Ok((DenseTensor::from_faer(qr.compute_thin_Q().as_ref()), DenseTensor::from_faer(qr.thin_R())))
}

/// Eigen-decomposition of a Hermitian matrix: eigenvalues ascending and the
/// matching eigenvectors as columns.
pub fn hermitian_eigh(h: &DenseTensor) -> TensorResult<(Vec<f64>, DenseTensor)> {
    let n = h.square_dim()?;
    let err = h.hermiticity_error()?;
    if err > HERMITIAN_TOL * h.max_abs().max(1.0) {
        return Err(TensorError::Argument(format!("matrix is not Hermitian (deviation {err:.3e})")));
    }
    // symmetrize so the solver sees an exactly Hermitian input
    let sym = h.add(&h.adjoint()?)?.scale_real(0.5);
    let eig = sym
        .to_faer()?
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| TensorError::Numerical(format!("eigensolver failed on {n}x{n} matrix: {e:?}")))?;
    let s = eig.S().column_vector();
    let values = (0..n).map(|k| s[k].re).collect();
    Ok((values, DenseTensor::from_faer(eig.U())))
}

/// `exp(scale · h)` for Hermitian `h`.
pub fn hermitian_exponential(h: &DenseTensor, scale: C64) -> TensorResult<DenseTensor> {
    let n = h.square_dim()?;
    let (values, vecs) = hermitian_eigh(h)?;
    let phases: Vec<C64> = values.iter().map(|&l| (scale * l).exp()).collect();
    let mut scaled = vecs.clone();
    for i in 0..n {
        for j in 0..n {
            scaled.data[i * n + j] *= phases[j];
        }
    }
    scaled.matmul(&vecs.adjoint()?)
}
