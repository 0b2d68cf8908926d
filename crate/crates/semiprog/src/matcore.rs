//! Dense complex-matrix primitives.
//!
//! Vectorization is row-major throughout the crate: `vec(|i><j|) = |i>|j>`,
//! so `vec(A B C) = (A ⊗ Cᵀ) vec(B)`.

use nalgebra::{DMatrix, DVector, Schur, SymmetricEigen, SVD};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

#[inline]
pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn identity(n: usize) -> CMatrix {
    CMatrix::identity(n, n)
}

pub fn zeros(rows: usize, cols: usize) -> CMatrix {
    CMatrix::zeros(rows, cols)
}

/// Builds a matrix from real row-major entries.
pub fn real_matrix(rows: usize, cols: usize, entries: &[f64]) -> CMatrix {
    CMatrix::from_fn(rows, cols, |i, j| c(entries[i * cols + j], 0.0))
}

/// Computational basis ket `|i>` in dimension `d`.
pub fn ket(d: usize, i: usize) -> CVector {
    let mut v = CVector::zeros(d);
    v[i] = ONE;
    v
}

/// `|i><j|` in dimension `d`.
pub fn ketbra(d: usize, i: usize, j: usize) -> CMatrix {
    let mut m = zeros(d, d);
    m[(i, j)] = ONE;
    m
}

pub fn projector(v: &CVector) -> CMatrix {
    v * v.adjoint()
}

pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

/// Kronecker product of a sequence of matrices, left to right.
pub fn kron_all(ms: &[CMatrix]) -> CMatrix {
    let mut out = identity(1);
    for m in ms {
        out = out.kronecker(m);
    }
    out
}

pub fn trace(m: &CMatrix) -> C64 {
    m.trace()
}

pub fn frobenius(m: &CMatrix) -> f64 {
    m.norm()
}

pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

pub fn hermitize(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()) * c(0.5, 0.0)
}

pub fn is_hermitian(m: &CMatrix, tol: f64) -> bool {
    m.is_square() && max_abs(&(m - m.adjoint())) <= tol
}

pub fn is_unitary(m: &CMatrix, tol: f64) -> bool {
    m.is_square() && max_abs(&(m.adjoint() * m - identity(m.nrows()))) <= tol
}

pub fn commutator(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a * b - b * a
}

pub fn anticommutator(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a * b + b * a
}

/// Row-major stacking of the entries of `m`.
pub fn vectorize(m: &CMatrix) -> CVector {
    let (r, cols) = m.shape();
    CVector::from_fn(r * cols, |k, _| m[(k / cols, k % cols)])
}

pub fn devectorize(v: &CVector, rows: usize, cols: usize) -> Result<CMatrix> {
    if v.len() != rows * cols {
        return Err(Error::Dimension(format!(
            "vector of length {} cannot be reshaped to {}x{}",
            v.len(),
            rows,
            cols
        )));
    }
    Ok(CMatrix::from_fn(rows, cols, |i, j| v[i * cols + j]))
}

fn require_square(m: &CMatrix) -> Result<usize> {
    if !m.is_square() {
        return Err(Error::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    Ok(m.nrows())
}

/// Matrix exponential.
///
/// Normal matrices go through a Schur diagonalization; everything else uses
/// Padé scaling-and-squaring.
pub fn expm(m: &CMatrix) -> Result<CMatrix> {
    let n = require_square(m)?;
    if n == 0 {
        return Ok(zeros(0, 0));
    }
    let md = m.adjoint();
    if max_abs(&(m * &md - &md * m)) < 1e-12 {
        if let Some(schur) = Schur::try_new(m.clone(), f64::EPSILON, 10_000) {
            let (q, t) = schur.unpack();
            let mut off = 0.0f64;
            for i in 0..n {
                for j in (i + 1)..n {
                    off = off.max(t[(i, j)].norm());
                }
            }
            if off <= 1e-10 * (1.0 + max_abs(m)) {
                let d = CMatrix::from_diagonal(&CVector::from_fn(n, |i, _| t[(i, i)].exp()));
                return Ok(&q * d * q.adjoint());
            }
        }
    }
    Ok(m.exp())
}

/// Ordered subsystem dimensions of a composite space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SystemDims {
    factors: Vec<usize>,
}

impl SystemDims {
    pub fn new(factors: &[usize]) -> Result<Self> {
        if factors.is_empty() || factors.contains(&0) {
            return Err(Error::Dimension(format!(
                "invalid subsystem dimensions {:?}",
                factors
            )));
        }
        Ok(Self {
            factors: factors.to_vec(),
        })
    }

    pub fn factors(&self) -> &[usize] {
        &self.factors
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn total(&self) -> usize {
        self.factors.iter().product()
    }

    fn check(&self, m: &CMatrix) -> Result<()> {
        let n = require_square(m)?;
        if n != self.total() {
            return Err(Error::Dimension(format!(
                "matrix dimension {} does not match subsystems {:?}",
                n, self.factors
            )));
        }
        Ok(())
    }

    fn check_index(&self, index: usize) -> Result<()> {
        if index >= self.factors.len() {
            return Err(Error::Subsystem {
                index,
                count: self.factors.len(),
            });
        }
        Ok(())
    }
}

fn decode(dims: &[usize], mut index: usize) -> Vec<usize> {
    let mut out = vec![0; dims.len()];
    for k in (0..dims.len()).rev() {
        out[k] = index % dims[k];
        index /= dims[k];
    }
    out
}

fn encode(dims: &[usize], digits: &[usize]) -> usize {
    digits.iter().zip(dims).fold(0, |acc, (&x, &d)| acc * d + x)
}

/// Traces out every subsystem not listed in `keep`. Kept subsystems stay in
/// their original order.
pub fn partial_trace(m: &CMatrix, dims: &SystemDims, keep: &[usize]) -> Result<CMatrix> {
    dims.check(m)?;
    for &k in keep {
        dims.check_index(k)?;
    }
    let mut kept: Vec<usize> = keep.to_vec();
    kept.sort_unstable();
    kept.dedup();
    let traced: Vec<usize> = (0..dims.len()).filter(|k| !kept.contains(k)).collect();
    let kdims: Vec<usize> = kept.iter().map(|&k| dims.factors[k]).collect();
    let tdims: Vec<usize> = traced.iter().map(|&k| dims.factors[k]).collect();
    let dk: usize = kdims.iter().product();
    let dt: usize = tdims.iter().product();

    // full[k * dt + t] is the composite index with kept part k and traced part t
    let mut full = vec![0usize; dk * dt];
    let mut digits = vec![0usize; dims.len()];
    for ki in 0..dk {
        let kd = decode(&kdims, ki);
        for ti in 0..dt {
            let td = decode(&tdims, ti);
            for (p, &s) in kept.iter().enumerate() {
                digits[s] = kd[p];
            }
            for (p, &s) in traced.iter().enumerate() {
                digits[s] = td[p];
            }
            full[ki * dt + ti] = encode(&dims.factors, &digits);
        }
    }
    let mut out = zeros(dk, dk);
    for a in 0..dk {
        for b in 0..dk {
            let mut acc = ZERO;
            for t in 0..dt {
                acc += m[(full[a * dt + t], full[b * dt + t])];
            }
            out[(a, b)] = acc;
        }
    }
    Ok(out)
}

/// Transposes the indices of one subsystem.
pub fn partial_transpose(m: &CMatrix, dims: &SystemDims, subsystem: usize) -> Result<CMatrix> {
    dims.check(m)?;
    dims.check_index(subsystem)?;
    let n = dims.total();
    let stride: usize = dims.factors[subsystem + 1..].iter().product();
    let d = dims.factors[subsystem];
    let digit = |x: usize| (x / stride) % d;
    Ok(CMatrix::from_fn(n, n, |r, col| {
        let (dr, dc) = (digit(r), digit(col));
        let r2 = r - dr * stride + dc * stride;
        let c2 = col - dc * stride + dr * stride;
        m[(r2, c2)]
    }))
}

/// Reorders subsystems: subsystem `k` of the result is subsystem `perm[k]`
/// of the input.
pub fn permute_subsystems(m: &CMatrix, dims: &SystemDims, perm: &[usize]) -> Result<CMatrix> {
    dims.check(m)?;
    let mut seen = vec![false; dims.len()];
    if perm.len() != dims.len() {
        return Err(Error::Dimension(format!(
            "permutation {:?} for {} subsystems",
            perm,
            dims.len()
        )));
    }
    for &p in perm {
        dims.check_index(p)?;
        if seen[p] {
            return Err(Error::Invalid(format!("{:?} is not a permutation", perm)));
        }
        seen[p] = true;
    }
    let new_dims: Vec<usize> = perm.iter().map(|&p| dims.factors[p]).collect();
    let n = dims.total();
    let map: Vec<usize> = (0..n)
        .map(|idx| {
            let nd = decode(&new_dims, idx);
            let mut old = vec![0; dims.len()];
            for (k, &p) in perm.iter().enumerate() {
                old[p] = nd[k];
            }
            encode(&dims.factors, &old)
        })
        .collect();
    Ok(CMatrix::from_fn(n, n, |r, col| m[(map[r], map[col])]))
}

/// Eigendecomposition of a Hermitian matrix, eigenvalues ascending.
pub fn eigh(m: &CMatrix) -> (Vec<f64>, CMatrix) {
    let n = m.nrows();
    let eig = SymmetricEigen::new(hermitize(m));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = CMatrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])]);
    (values, vectors)
}

pub fn eigvalsh(m: &CMatrix) -> Vec<f64> {
    eigh(m).0
}

pub fn min_eigenvalue(m: &CMatrix) -> f64 {
    eigvalsh(m).first().copied().unwrap_or(0.0)
}

pub fn singular_values(m: &CMatrix) -> Vec<f64> {
    SVD::new(m.clone(), false, false)
        .singular_values
        .iter()
        .copied()
        .collect()
}

/// (trace norm, operator norm).
pub fn schatten_norms(m: &CMatrix) -> (f64, f64) {
    let s = singular_values(m);
    (s.iter().sum(), s.iter().cloned().fold(0.0, f64::max))
}

pub fn trace_norm(m: &CMatrix) -> f64 {
    schatten_norms(m).0
}

pub fn operator_norm(m: &CMatrix) -> f64 {
    schatten_norms(m).1
}

/// Applies `f` to the spectrum of a Hermitian matrix.
pub fn hermitian_fn(m: &CMatrix, f: impl Fn(f64) -> f64) -> CMatrix {
    let (vals, vecs) = eigh(m);
    let d = CMatrix::from_diagonal(&CVector::from_iterator(
        vals.len(),
        vals.iter().map(|&x| c(f(x), 0.0)),
    ));
    &vecs * d * vecs.adjoint()
}

/// Checks that `rho` is a density matrix within `tol`.
pub fn check_state(rho: &CMatrix, tol: f64) -> Result<()> {
    require_square(rho)?;
    if !is_hermitian(rho, tol) {
        return Err(Error::NotAState("not Hermitian".into()));
    }
    let tr = rho.trace();
    if (tr.re - 1.0).abs() > tol || tr.im.abs() > tol {
        return Err(Error::NotAState(format!("trace {}", tr)));
    }
    let lmin = min_eigenvalue(rho);
    if lmin < -tol {
        return Err(Error::NotAState(format!("negative eigenvalue {:e}", lmin)));
    }
    Ok(())
}

/// Uhlmann fidelity `(tr sqrt(sqrt(rho) sigma sqrt(rho)))^2`.
pub fn fidelity(rho: &CMatrix, sigma: &CMatrix) -> Result<f64> {
    check_state(rho, 1e-9)?;
    check_state(sigma, 1e-9)?;
    if rho.nrows() != sigma.nrows() {
        return Err(Error::Dimension(
            "fidelity of states of different dimension".into(),
        ));
    }
    let clip = |x: f64| if x > 0.0 { x } else { 0.0 };
    let sr = hermitian_fn(rho, |x| clip(x).sqrt());
    let ss = hermitian_fn(sigma, |x| clip(x).sqrt());
    // ‖√ρ √σ‖₁ avoids square roots of round-off eigenvalues
    let f: f64 = singular_values(&(sr * ss)).iter().sum();
    Ok((f * f).clamp(0.0, 1.0))
}

/// Orthonormal basis of the kernel of a square matrix. Singular values at or
/// below `tol · σ_max` count as zero.
pub fn null_space(m: &CMatrix, tol: f64) -> Vec<CVector> {
    let n = m.nrows();
    if n == 0 || !m.is_square() {
        return Vec::new();
    }
    let svd = SVD::new(m.clone(), false, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let v_t = svd.v_t.expect("requested V");
    let mut out = Vec::new();
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s <= tol * smax || smax == 0.0 {
            out.push(v_t.row(k).adjoint());
        }
    }
    out
}

/// Single-qubit Pauli matrices I, X, Y, Z.
pub fn pauli(k: usize) -> CMatrix {
    match k {
        0 => identity(2),
        1 => real_matrix(2, 2, &[0.0, 1.0, 1.0, 0.0]),
        2 => CMatrix::from_row_slice(2, 2, &[ZERO, -I, I, ZERO]),
        3 => real_matrix(2, 2, &[1.0, 0.0, 0.0, -1.0]),
        _ => panic!("Pauli index {} out of range", k),
    }
}

/// Normalized maximally entangled projector `|Φ><Φ|` on `d ⊗ d`.
pub fn max_entangled(d: usize) -> CMatrix {
    let mut v = CVector::zeros(d * d);
    for i in 0..d {
        v[i * d + i] = c(1.0 / (d as f64).sqrt(), 0.0);
    }
    projector(&v)
}

/// The two-qubit SWAP operator.
pub fn swap_operator(d: usize) -> CMatrix {
    let mut s = zeros(d * d, d * d);
    for i in 0..d {
        for j in 0..d {
            s[(i * d + j, j * d + i)] = ONE;
        }
    }
    s
}
