//! Dense linear algebra helpers, a finite-difference oracle and the seeded
//! random stream shared by the rest of the crate.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-6;

/// A square matrix that is exactly symmetric.
///
/// Construction averages the matrix with its transpose, so `P[(i, j)]` and
/// `P[(j, i)]` are bitwise equal afterwards. Positive definiteness is only
/// checked when the matrix is used as a solve operand.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix(Matrix);

impl SpdMatrix {
    pub fn new(m: Matrix) -> Result<Self> {
        symmetrize(&m)
    }

    pub fn identity(n: usize) -> Self {
        SpdMatrix(Matrix::identity(n, n))
    }

    pub fn scaled_identity(n: usize, s: f64) -> Self {
        SpdMatrix(Matrix::identity(n, n) * s)
    }

    pub fn zeros(n: usize) -> Self {
        SpdMatrix(Matrix::zeros(n, n))
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        SpdMatrix(Matrix::from_diagonal(&Vector::from_column_slice(d)))
    }

    /// Block-diagonal assembly `diag(a, b)`.
    pub fn block_diag(a: &SpdMatrix, b: &SpdMatrix) -> Self {
        let (na, nb) = (a.dim(), b.dim());
        let mut m = Matrix::zeros(na + nb, na + nb);
        m.view_mut((0, 0), (na, na)).copy_from(&a.0);
        m.view_mut((na, na), (nb, nb)).copy_from(&b.0);
        SpdMatrix(m)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    /// Inverse via Cholesky.
    pub fn inverse(&self) -> Result<SpdMatrix> {
        let n = self.dim();
        let inv = spd_solve(self, &Matrix::identity(n, n))?;
        symmetrize(&inv)
    }
}

/// Returns `(P + Pᵀ) / 2`.
pub fn symmetrize(p: &Matrix) -> Result<SpdMatrix> {
    if !p.is_square() {
        return Err(Error::dims(format!(
            "symmetrize needs a square matrix, got {}x{}",
            p.nrows(),
            p.ncols()
        )));
    }
    let n = p.nrows();
    let mut s = p.clone();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (p[(i, j)] + p[(j, i)]);
            s[(i, j)] = v;
            s[(j, i)] = v;
        }
    }
    Ok(SpdMatrix(s))
}

/// Solves `A X = B` for symmetric positive definite `A` by Cholesky
/// factorization. A 1x1 operand is a plain division.
pub fn spd_solve(a: &SpdMatrix, b: &Matrix) -> Result<Matrix> {
    let n = a.dim();
    if b.nrows() != n {
        return Err(Error::dims(format!(
            "spd_solve: A is {n}x{n}, B has {} rows",
            b.nrows()
        )));
    }
    if n == 0 {
        return Ok(Matrix::zeros(0, b.ncols()));
    }
    if n == 1 {
        let a00 = a.0[(0, 0)];
        if !(a00 > 0.0) || !a00.is_finite() {
            return Err(Error::NotPositiveDefinite);
        }
        return Ok(b.map(|v| v / a00));
    }
    let chol = Cholesky::new(a.0.clone()).ok_or(Error::NotPositiveDefinite)?;
    let x = chol.solve(b);
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotPositiveDefinite);
    }
    Ok(x)
}

/// Central-difference Jacobian of `f` at `x`:
/// `J[i][j] = (f_i(x + h e_j) - f_i(x - h e_j)) / (2h)`.
pub fn finite_diff_jacobian<F>(f: F, x: &Vector, h: f64) -> Result<Matrix>
where
    F: Fn(&Vector) -> Vector,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    let f0 = f(x);
    if f0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteEvaluation);
    }
    let m = f0.len();
    let mut jac = Matrix::zeros(m, x.len());
    let mut xp = x.clone();
    for j in 0..x.len() {
        let xj = x[j];
        xp[j] = xj + h;
        let fp = f(&xp);
        xp[j] = xj - h;
        let fm = f(&xp);
        xp[j] = xj;
        if fp.len() != m || fm.len() != m {
            return Err(Error::dims("finite_diff_jacobian: output length changed"));
        }
        for i in 0..m {
            let d = (fp[i] - fm[i]) / (2.0 * h);
            if !d.is_finite() {
                return Err(Error::NonFiniteEvaluation);
            }
            jac[(i, j)] = d;
        }
    }
    Ok(jac)
}

/// Central-difference gradient of a scalar function.
pub fn finite_diff_gradient<F>(f: F, x: &Vector, h: f64) -> Result<Vector>
where
    F: Fn(&Vector) -> f64,
{
    let jac = finite_diff_jacobian(|v| Vector::from_element(1, f(v)), x, h)?;
    Ok(jac.row(0).transpose())
}

/// Largest relative deviation `|a - b| / max(|a|, |b|, floor)` between two
/// equally shaped matrices.
pub fn max_rel_error(a: &Matrix, b: &Matrix, floor: f64) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// A sampled multichannel signal stored row-major: one row per time step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Signal {
    width: usize,
    len: usize,
    data: Vec<f64>,
}

impl Signal {
    pub fn new(width: usize) -> Self {
        Signal {
            width,
            len: 0,
            data: Vec::new(),
        }
    }

    pub fn from_rows<R: AsRef<[f64]>>(width: usize, rows: &[R]) -> Result<Self> {
        let mut s = Signal::new(width);
        for r in rows {
            s.push(r.as_ref())?;
        }
        Ok(s)
    }

    /// Builds a single-channel signal.
    pub fn scalar(values: &[f64]) -> Self {
        Signal {
            width: 1,
            len: values.len(),
            data: values.to_vec(),
        }
    }

    pub fn zeros(width: usize, len: usize) -> Self {
        Signal {
            width,
            len,
            data: vec![0.0; width * len],
        }
    }

    pub fn push(&mut self, row: &[f64]) -> Result<()> {
        if row.len() != self.width {
            return Err(Error::dims(format!(
                "signal row has {} entries, expected {}",
                row.len(),
                self.width
            )));
        }
        self.data.extend_from_slice(row);
        self.len += 1;
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.data[k * self.width..(k + 1) * self.width]
    }

    pub fn row_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.data[k * self.width..(k + 1) * self.width]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.len()).map(move |k| self.row(k))
    }

    /// Rows `start..end`.
    pub fn slice(&self, start: usize, end: usize) -> Signal {
        Signal {
            width: self.width,
            len: end - start,
            data: self.data[start * self.width..end * self.width].to_vec(),
        }
    }

    pub fn channel(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn concat(&self, other: &Signal) -> Result<Signal> {
        if self.width != other.width {
            return Err(Error::dims("cannot concatenate signals of different widths"));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Signal {
            width: self.width,
            len: self.len + other.len,
            data,
        })
    }
}

/// Deterministic random stream. Equal seeds give identical draws on every
/// platform (ChaCha8 core).
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform draw on `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.inner.random::<f64>()
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.inner.random::<f64>() < p
    }

    /// Independent child stream, e.g. for one run in a seed sweep.
    pub fn fork(&mut self) -> SeededRng {
        SeededRng::new(self.inner.next_u64())
    }
}

impl RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}
