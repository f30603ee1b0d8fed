//! Dense complex linear algebra on qubit registers.
//!
//! A register is a sorted list of qubit ids. Bit `k` of a basis index refers
//! to `register[k]`.

use faer::{Mat, Side};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

/// Default cap on dense matrix dimension.
pub const DEFAULT_DENSE_DIM: usize = 1 << 13;
/// Default cap on matrix-free vector dimension.
pub const DEFAULT_SPARSE_DIM: usize = 1 << 26;

/// Dense dimension cap, overridable through `TQO_MAX_DENSE_DIM`.
pub fn dense_cap() -> usize {
    std::env::var("TQO_MAX_DENSE_DIM")
        .ok()
        .and_then(|s| s.trim().parse().ok())
        .unwrap_or(DEFAULT_DENSE_DIM)
}

pub fn check_dense(what: &str, dim: usize) -> Result<()> {
    let cap = dense_cap();
    if dim > cap {
        return Err(Error::ResourceCap { what: what.to_string(), dim, cap });
    }
    Ok(())
}

pub fn check_sparse(what: &str, dim: usize) -> Result<()> {
    let cap = DEFAULT_SPARSE_DIM.max(dense_cap());
    if dim > cap {
        return Err(Error::ResourceCap { what: what.to_string(), dim, cap });
    }
    Ok(())
}

fn to_faer(m: &CMat) -> Mat<C64> {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

fn from_faer(m: &Mat<C64>) -> CMat {
    CMat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// Matrix product; large products go through faer's blocked kernels.
pub fn matmul(a: &CMat, b: &CMat) -> CMat {
    if a.nrows().max(a.ncols()).max(b.ncols()) < 96 {
        return a * b;
    }
    from_faer(&(to_faer(a) * to_faer(b)))
}

/// `a * b * c`.
pub fn matmul3(a: &CMat, b: &CMat, c: &CMat) -> CMat {
    matmul(&matmul(a, b), c)
}

pub fn commutator(a: &CMat, b: &CMat) -> CMat {
    matmul(a, b) - matmul(b, a)
}

pub fn anticommutator(a: &CMat, b: &CMat) -> CMat {
    matmul(a, b) + matmul(b, a)
}

/// Largest entry modulus of `a - b`.
pub fn max_abs_diff(a: &CMat, b: &CMat) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

pub fn hermiticity_defect(m: &CMat) -> f64 {
    max_abs_diff(m, &m.adjoint())
}

pub fn antihermiticity_defect(m: &CMat) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            worst = worst.max((m[(i, j)] + m[(j, i)].conj()).norm());
        }
    }
    worst
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues ascending.
pub fn eigh(m: &CMat) -> (Vec<f64>, CMat) {
    let n = m.nrows();
    if n == 0 {
        return (vec![], CMat::zeros(0, 0));
    }
    let a = Mat::<C64>::from_fn(n, n, |i, j| (m[(i, j)] + m[(j, i)].conj()) * 0.5);
    let eig = a.self_adjoint_eigen(Side::Lower).expect("hermitian eigendecomposition");
    let s = eig.S().column_vector();
    let u = eig.U();
    // faer returns eigenvalues in ascending order
    let vals = (0..n).map(|k| s[k].re).collect();
    let vecs = CMat::from_fn(n, n, |i, j| u[(i, j)]);
    (vals, vecs)
}

/// Eigenvalues of a Hermitian matrix, ascending.
pub fn eigvalsh(m: &CMat) -> Vec<f64> {
    let n = m.nrows();
    if n == 0 {
        return vec![];
    }
    let a = Mat::<C64>::from_fn(n, n, |i, j| (m[(i, j)] + m[(j, i)].conj()) * 0.5);
    let mut v = a.self_adjoint_eigenvalues(Side::Lower).expect("hermitian eigenvalues");
    v.sort_by(f64::total_cmp);
    v
}

/// Eigen-decomposition of a real symmetric matrix, ascending.
pub fn eigh_real(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    if n == 0 {
        return (vec![], DMatrix::zeros(0, 0));
    }
    let a = Mat::<f64>::from_fn(n, n, |i, j| 0.5 * (m[(i, j)] + m[(j, i)]));
    let eig = a.self_adjoint_eigen(Side::Lower).expect("symmetric eigendecomposition");
    let s = eig.S().column_vector();
    let u = eig.U();
    let vals = (0..n).map(|k| s[k]).collect();
    let vecs = DMatrix::from_fn(n, n, |i, j| u[(i, j)]);
    (vals, vecs)
}

/// Singular values, descending.
pub fn singular_values(m: &CMat) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return vec![];
    }
    let a = Mat::<C64>::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)]);
    let mut v = a.singular_values().expect("singular values");
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

/// Dimensions up to this use an exact singular value decomposition for norms.
pub const EXACT_NORM_DIM: usize = 512;

/// Operator (spectral) norm.
pub fn op_norm(m: &CMat) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    if m.nrows().max(m.ncols()) <= EXACT_NORM_DIM {
        return singular_values(m)[0];
    }
    let adj = m.adjoint();
    lanczos_norm(m.ncols(), |v| &adj * (m * v), 1e-8).sqrt()
}

/// Operator norm of a Hermitian (or anti-Hermitian) matrix from its spectrum.
pub fn normal_norm(m: &CMat) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    let anti = antihermiticity_defect(m) < hermiticity_defect(m);
    let h = if anti { m * I } else { m.clone() };
    eigvalsh(&h).iter().fold(0.0f64, |a, &x| a.max(x.abs()))
}

/// Power iteration on `A^dagger A`, stopping at the given relative tolerance.
pub fn power_norm<F, G>(dim: usize, apply: F, apply_adj: G, tol: f64) -> f64
where
    F: Fn(&CVec) -> CVec,
    G: Fn(&CVec) -> CVec,
{
    if dim == 0 {
        return 0.0;
    }
    // deterministic start vector with no special structure
    let mut v = CVec::from_fn(dim, |i, _| {
        let t = (i as f64 + 1.0) * 0.618_033_988_749_895;
        C64::new(1.0 + (t - t.floor()), 0.25 * (3.0 * t).sin())
    });
    let nv = v.norm();
    v /= C64::new(nv, 0.0);
    let mut prev = 0.0;
    for _ in 0..5000 {
        let w = apply_adj(&apply(&v));
        let lam = w.norm();
        if lam == 0.0 {
            return 0.0;
        }
        v = w / C64::new(lam, 0.0);
        if (lam - prev).abs() <= tol * lam {
            return lam.sqrt();
        }
        prev = lam;
    }
    prev.sqrt()
}

/// Largest |eigenvalue| of a Hermitian operator given as a matrix-vector
/// product, by Lanczos with full reorthogonalisation.
pub fn lanczos_norm<F>(dim: usize, apply: F, tol: f64) -> f64
where
    F: Fn(&CVec) -> CVec,
{
    if dim == 0 {
        return 0.0;
    }
    let mut v = CVec::from_fn(dim, |i, _| {
        let t = (i as f64 + 1.0) * 0.618_033_988_749_895;
        C64::new(1.0 + (t - t.floor()), 0.25 * (3.0 * t).sin())
    });
    let nv = v.norm();
    v /= C64::new(nv, 0.0);
    let mut basis: Vec<CVec> = vec![];
    let mut alpha: Vec<f64> = vec![];
    let mut beta: Vec<f64> = vec![];
    let mut prev = f64::NAN;
    let mut stable = 0;
    for k in 0..dim.min(300) {
        let mut w = apply(&v);
        let a = v.dotc(&w).re;
        basis.push(v.clone());
        alpha.push(a);
        for _ in 0..2 {
            for b in &basis {
                let c = b.dotc(&w);
                w -= b * c;
            }
        }
        let bnext = w.norm();
        let m = alpha.len();
        let t = DMatrix::<f64>::from_fn(m, m, |i, j| {
            if i == j {
                alpha[i]
            } else if i + 1 == j {
                beta[i]
            } else if j + 1 == i {
                beta[j]
            } else {
                0.0
            }
        });
        let theta = eigh_real(&t).0.iter().fold(0.0f64, |acc, &x| acc.max(x.abs()));
        if bnext <= 1e-13 * theta.max(1e-300) || k + 1 == dim {
            return theta;
        }
        if (theta - prev).abs() <= tol * theta {
            stable += 1;
            if stable >= 2 {
                return theta;
            }
        } else {
            stable = 0;
        }
        prev = theta;
        beta.push(bnext);
        v = w / C64::new(bnext, 0.0);
    }
    prev
}

/// Pseudoinverse of a Hermitian matrix with eigenvalues below `rel_cut * max|eig|` dropped.
pub fn pinv_hermitian(m: &CMat, rel_cut: f64) -> CMat {
    let (vals, vecs) = eigh(m);
    let top = vals.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
    let n = m.nrows();
    let mut scaled = vecs.clone();
    for (k, &lam) in vals.iter().enumerate() {
        let f = if top > 0.0 && lam.abs() > rel_cut * top { 1.0 / lam } else { 0.0 };
        for i in 0..n {
            scaled[(i, k)] *= f;
        }
    }
    matmul(&scaled, &vecs.adjoint())
}

/// Matrix exponential by scaling and squaring with a degree-13 Pade approximant.
pub fn expm(m: &CMat) -> CMat {
    m.clone().exp()
}

/// `exp(s)` for anti-Hermitian `s`, through the spectrum of the Hermitian `i s`.
pub fn expm_antihermitian(s: &CMat) -> CMat {
    let h = s * I;
    let (vals, vecs) = eigh(&h);
    let n = s.nrows();
    let mut scaled = vecs.clone();
    for (k, &lam) in vals.iter().enumerate() {
        let ph = C64::from_polar(1.0, -lam);
        for i in 0..n {
            scaled[(i, k)] *= ph;
        }
    }
    matmul(&scaled, &vecs.adjoint())
}

/// Projector onto the span of eigenvectors with eigenvalue in `[lo, hi]`.
pub fn spectral_projector(vals: &[f64], vecs: &CMat, lo: f64, hi: f64) -> CMat {
    let cols: Vec<usize> = (0..vals.len()).filter(|&k| vals[k] >= lo && vals[k] <= hi).collect();
    let n = vecs.nrows();
    let mut sub = CMat::zeros(n, cols.len());
    for (j, &k) in cols.iter().enumerate() {
        sub.set_column(j, &vecs.column(k));
    }
    matmul(&sub, &sub.adjoint())
}

/// Orthonormal basis of the range of a positive semidefinite matrix, with rank
/// decided by eigenvalues above `rel_cut * largest`.
pub fn psd_range(m: &CMat, rel_cut: f64) -> CMat {
    let (vals, vecs) = eigh(m);
    let top = vals.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
    let cols: Vec<usize> = (0..vals.len()).filter(|&k| vals[k] > rel_cut * top).collect();
    let mut sub = CMat::zeros(m.nrows(), cols.len());
    for (j, &k) in cols.iter().enumerate() {
        sub.set_column(j, &vecs.column(k));
    }
    sub
}

/// Largest principal angle between the column spans of two orthonormal bases
/// of equal dimension.
pub fn max_principal_angle(a: &CMat, b: &CMat) -> f64 {
    if a.ncols() != b.ncols() {
        return std::f64::consts::FRAC_PI_2;
    }
    if a.ncols() == 0 {
        return 0.0;
    }
    // sin θ_max = ‖(I - AA†)B‖; acos of the overlap loses half the digits near 0
    let residual = b - a * (a.adjoint() * b);
    singular_values(&residual)[0].min(1.0).asin()
}

pub fn identity(dim: usize) -> CMat {
    CMat::identity(dim, dim)
}

/// Position of each qubit of `sub` inside `full`, both sorted.
pub fn positions(sub: &[usize], full: &[usize]) -> Result<Vec<usize>> {
    sub.iter()
        .map(|q| {
            full.binary_search(q)
                .map_err(|_| Error::Invalid(format!("qubit {q} is outside the target register")))
        })
        .collect()
}

/// For each local index over the bits at `pos`, the corresponding register index.
pub fn scatter_table(pos: &[usize]) -> Vec<usize> {
    let k = pos.len();
    let mut table = vec![0usize; 1 << k];
    for (idx, slot) in table.iter_mut().enumerate() {
        let mut out = 0usize;
        for (b, &p) in pos.iter().enumerate() {
            if idx >> b & 1 == 1 {
                out |= 1 << p;
            }
        }
        *slot = out;
    }
    table
}

fn complement_positions(pos: &[usize], n: usize) -> Vec<usize> {
    (0..n).filter(|p| !pos.contains(p)).collect()
}

pub fn union_register(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut u: Vec<usize> = a.iter().chain(b.iter()).copied().collect();
    u.sort_unstable();
    u.dedup();
    u
}

/// Extends an operator on register `sub` by the identity to register `full`.
pub fn embed(mat: &CMat, sub: &[usize], full: &[usize]) -> Result<CMat> {
    if sub == full {
        return Ok(mat.clone());
    }
    let pos = positions(sub, full)?;
    let rest = complement_positions(&pos, full.len());
    let inner = scatter_table(&pos);
    let outer = scatter_table(&rest);
    let dim = 1usize << full.len();
    let mut out = CMat::zeros(dim, dim);
    for &r in &outer {
        for (j, &cj) in inner.iter().enumerate() {
            for (i, &ci) in inner.iter().enumerate() {
                let v = mat[(i, j)];
                if v != ZERO {
                    out[(ci | r, cj | r)] = v;
                }
            }
        }
    }
    Ok(out)
}

/// Partial trace of an operator on `full` down to `keep`.
pub fn partial_trace(mat: &CMat, full: &[usize], keep: &[usize]) -> Result<CMat> {
    let pos = positions(keep, full)?;
    let rest = complement_positions(&pos, full.len());
    let inner = scatter_table(&pos);
    let outer = scatter_table(&rest);
    let d = inner.len();
    let mut out = CMat::zeros(d, d);
    for j in 0..d {
        for i in 0..d {
            let mut acc = ZERO;
            for &r in &outer {
                acc += mat[(inner[i] | r, inner[j] | r)];
            }
            out[(i, j)] = acc;
        }
    }
    Ok(out)
}

/// Maps each local index of `pos` bits and each rest index into a register of
/// `n` bits; used to apply a local block to a state vector.
pub struct LocalAction {
    inner: Vec<usize>,
    outer: Vec<usize>,
}

impl LocalAction {
    pub fn new(pos: &[usize], n: usize) -> Self {
        let rest = complement_positions(pos, n);
        LocalAction { inner: scatter_table(pos), outer: scatter_table(&rest) }
    }

    /// `out += mat ⊗ I` applied to `v`.
    pub fn apply_add(&self, mat: &CMat, v: &[C64], out: &mut [C64]) {
        let d = self.inner.len();
        let mut buf = vec![ZERO; d];
        for &r in &self.outer {
            for (i, &ci) in self.inner.iter().enumerate() {
                buf[i] = v[ci | r];
            }
            for (i, &ci) in self.inner.iter().enumerate() {
                let mut acc = ZERO;
                for j in 0..d {
                    acc += mat[(i, j)] * buf[j];
                }
                out[ci | r] += acc;
            }
        }
    }
}

/// Dense operator supported on a sorted register of qubits.
#[derive(Clone, Debug)]
pub struct LocalOperator {
    pub qubits: Vec<usize>,
    pub mat: CMat,
}

impl LocalOperator {
    pub fn new(mut qubits: Vec<usize>, mat: CMat) -> Result<Self> {
        let sorted = qubits.windows(2).all(|w| w[0] < w[1]);
        if !sorted {
            qubits.sort_unstable();
            qubits.dedup();
            return Err(Error::Invalid("register must be strictly increasing".into()));
        }
        let dim = 1usize << qubits.len();
        if mat.nrows() != dim || mat.ncols() != dim {
            return Err(Error::Invalid(format!(
                "block is {}x{}, register needs {dim}",
                mat.nrows(),
                mat.ncols()
            )));
        }
        Ok(LocalOperator { qubits, mat })
    }

    pub fn zero(qubits: Vec<usize>) -> Self {
        let d = 1usize << qubits.len();
        LocalOperator { qubits, mat: CMat::zeros(d, d) }
    }

    pub fn identity(qubits: Vec<usize>) -> Self {
        let d = 1usize << qubits.len();
        LocalOperator { qubits, mat: CMat::identity(d, d) }
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn on(&self, full: &[usize]) -> Result<CMat> {
        embed(&self.mat, &self.qubits, full)
    }

    pub fn extend(&self, full: &[usize]) -> Result<LocalOperator> {
        Ok(LocalOperator { qubits: full.to_vec(), mat: self.on(full)? })
    }

    pub fn add(&self, other: &LocalOperator) -> Result<LocalOperator> {
        let reg = union_register(&self.qubits, &other.qubits);
        Ok(LocalOperator { mat: self.on(&reg)? + other.on(&reg)?, qubits: reg })
    }

    pub fn mul(&self, other: &LocalOperator) -> Result<LocalOperator> {
        let reg = union_register(&self.qubits, &other.qubits);
        Ok(LocalOperator { mat: matmul(&self.on(&reg)?, &other.on(&reg)?), qubits: reg })
    }

    pub fn commutator(&self, other: &LocalOperator) -> Result<LocalOperator> {
        let reg = union_register(&self.qubits, &other.qubits);
        let a = self.on(&reg)?;
        let b = other.on(&reg)?;
        Ok(LocalOperator { mat: commutator(&a, &b), qubits: reg })
    }

    pub fn scale(&self, c: C64) -> LocalOperator {
        LocalOperator { qubits: self.qubits.clone(), mat: &self.mat * c }
    }

    pub fn adjoint(&self) -> LocalOperator {
        LocalOperator { qubits: self.qubits.clone(), mat: self.mat.adjoint() }
    }

    pub fn norm(&self) -> f64 {
        op_norm(&self.mat)
    }

    pub fn is_zero(&self, tol: f64) -> bool {
        self.mat.iter().all(|x| x.norm() <= tol)
    }

    /// Applies `self ⊗ I` to a state on `n` qubits, accumulating into `out`.
    pub fn apply_add(&self, n: usize, v: &[C64], out: &mut [C64]) {
        LocalAction::new(&self.qubits, n).apply_add(&self.mat, v, out);
    }
}
