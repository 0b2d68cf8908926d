//! Lindbladians, Liouville superoperators, semigroups and Choi operators.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcore::{
    self, c, check_state, devectorize, expm, identity, is_hermitian, kron, max_abs, vectorize,
    zeros, CMatrix, SystemDims,
};

/// A jump operator with its rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Jump {
    pub op: CMatrix,
    pub rate: f64,
}

/// Time-independent generator `L(ρ) = -i[H, ρ] + Σ γ_j (L_j ρ L_j† - ½{L_j†L_j, ρ})`.
#[derive(Debug, Clone, PartialEq)]
pub struct Lindbladian {
    dim: usize,
    hamiltonian: CMatrix,
    jumps: Vec<Jump>,
}

impl Lindbladian {
    /// Validates the data and drops zero-rate jumps.
    pub fn new(hamiltonian: CMatrix, jumps: Vec<(CMatrix, f64)>) -> Result<Self> {
        let d = hamiltonian.nrows();
        if !hamiltonian.is_square() {
            return Err(Error::NotSquare {
                rows: hamiltonian.nrows(),
                cols: hamiltonian.ncols(),
            });
        }
        if !is_hermitian(&hamiltonian, 1e-12) {
            return Err(Error::Invalid("Hamiltonian is not Hermitian".into()));
        }
        let mut kept = Vec::new();
        for (k, (op, rate)) in jumps.into_iter().enumerate() {
            if op.shape() != (d, d) {
                return Err(Error::Dimension(format!(
                    "jump {} has shape {:?}, expected {}x{}",
                    k,
                    op.shape(),
                    d,
                    d
                )));
            }
            if !(rate >= 0.0) || !rate.is_finite() {
                return Err(Error::Invalid(format!("jump {} has rate {}", k, rate)));
            }
            if rate > 0.0 {
                kept.push(Jump { op, rate });
            }
        }
        Ok(Self {
            dim: d,
            hamiltonian,
            jumps: kept,
        })
    }

    pub fn zero(d: usize) -> Self {
        Self {
            dim: d,
            hamiltonian: zeros(d, d),
            jumps: Vec::new(),
        }
    }

    /// Purely coherent generator `-i[H, ·]`.
    pub fn coherent(h: CMatrix) -> Result<Self> {
        Self::new(h, Vec::new())
    }

    /// Qubit spontaneous emission with jump `√γ |0><1|`.
    pub fn emission(gamma: f64) -> Result<Self> {
        Self::new(zeros(2, 2), vec![(matcore::ketbra(2, 0, 1), gamma)])
    }

    /// Qubit dephasing with jump `Z` at rate `γ`.
    pub fn dephasing(gamma: f64) -> Result<Self> {
        Self::new(zeros(2, 2), vec![(matcore::pauli(3), gamma)])
    }

    /// Qubit depolarizing generator with X, Y, Z jumps at a common rate.
    pub fn isotropic_depolarizing(gamma: f64) -> Result<Self> {
        Self::new(
            zeros(2, 2),
            (1..4).map(|k| (matcore::pauli(k), gamma)).collect(),
        )
    }

    /// Two-qubit generator `i[S, ρ] + λ(D_B(ρ) - ρ)` where `S` is SWAP and
    /// `D_B` dephases in the Bell basis.
    pub fn swap_dephasing(lambda: f64) -> Result<Self> {
        let s = matcore::swap_operator(2);
        let jumps = bell_basis()
            .iter()
            .map(|v| (matcore::projector(v), lambda))
            .collect();
        Self::new(-s, jumps)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hamiltonian(&self) -> &CMatrix {
        &self.hamiltonian
    }

    pub fn jumps(&self) -> &[Jump] {
        &self.jumps
    }

    /// Adds a Hamiltonian term.
    pub fn with_hamiltonian(&self, h: &CMatrix) -> Result<Self> {
        Self::new(
            &self.hamiltonian + h,
            self.jumps.iter().map(|j| (j.op.clone(), j.rate)).collect(),
        )
    }

    /// Direct evaluation of the master-equation right-hand side.
    pub fn apply(&self, rho: &CMatrix) -> CMatrix {
        let h = &self.hamiltonian;
        let mut out = (h * rho - rho * h) * c(0.0, -1.0);
        for j in &self.jumps {
            let l = &j.op;
            let ld = l.adjoint();
            let ldl = &ld * l;
            out += (l * rho * &ld - (&ldl * rho + rho * &ldl) * c(0.5, 0.0)) * c(j.rate, 0.0);
        }
        out
    }

    /// Generator acting on `d1 ⊗ d2` as `L ⊗ I` (`first = true`) or `I ⊗ L`.
    pub fn embed(&self, other_dim: usize, first: bool) -> Result<Self> {
        let id = identity(other_dim);
        let lift = |m: &CMatrix| if first { kron(m, &id) } else { kron(&id, m) };
        Self::new(
            lift(&self.hamiltonian),
            self.jumps.iter().map(|j| (lift(&j.op), j.rate)).collect(),
        )
    }

    /// Sum of two generators on the same space.
    pub fn sum(&self, other: &Lindbladian) -> Result<Self> {
        if self.dim != other.dim {
            return Err(Error::Dimension(
                "generators act on different spaces".into(),
            ));
        }
        let mut jumps: Vec<(CMatrix, f64)> =
            self.jumps.iter().map(|j| (j.op.clone(), j.rate)).collect();
        jumps.extend(other.jumps.iter().map(|j| (j.op.clone(), j.rate)));
        Self::new(&self.hamiltonian + &other.hamiltonian, jumps)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: LindbladianJson = serde_json::from_str(text).map_err(|e| {
            Error::Parse(format!("line {}, column {}: {}", e.line(), e.column(), e))
        })?;
        spec.build()
    }

    pub fn to_json(&self) -> String {
        let enc = |m: &CMatrix| -> Vec<[f64; 2]> {
            let d = m.nrows();
            (0..d * d)
                .map(|k| [m[(k / d, k % d)].re, m[(k / d, k % d)].im])
                .collect()
        };
        let spec = LindbladianJson {
            dim: self.dim,
            hamiltonian: enc(&self.hamiltonian),
            jumps: self
                .jumps
                .iter()
                .map(|j| JumpJson {
                    rate: j.rate,
                    op: enc(&j.op),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&spec).expect("serializable")
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JumpJson {
    rate: f64,
    op: Vec<[f64; 2]>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LindbladianJson {
    dim: usize,
    hamiltonian: Vec<[f64; 2]>,
    #[serde(default)]
    jumps: Vec<JumpJson>,
}

impl LindbladianJson {
    fn build(self) -> Result<Lindbladian> {
        let d = self.dim;
        if d == 0 {
            return Err(Error::Invalid("field `dim` must be positive".into()));
        }
        let dec = |field: &str, entries: &[[f64; 2]]| -> Result<CMatrix> {
            if entries.len() != d * d {
                return Err(Error::Dimension(format!(
                    "field `{}` has {} entries, expected {}",
                    field,
                    entries.len(),
                    d * d
                )));
            }
            Ok(CMatrix::from_fn(d, d, |i, j| {
                let [re, im] = entries[i * d + j];
                c(re, im)
            }))
        };
        let h = dec("hamiltonian", &self.hamiltonian)?;
        let mut jumps = Vec::new();
        for (k, j) in self.jumps.iter().enumerate() {
            jumps.push((dec(&format!("jumps[{}].op", k), &j.op)?, j.rate));
        }
        Lindbladian::new(h, jumps)
    }
}

/// Orthonormal Bell basis Φ+, Φ-, Ψ+, Ψ-.
pub fn bell_basis() -> Vec<matcore::CVector> {
    let r = 1.0 / 2f64.sqrt();
    let v = |a: [f64; 4]| matcore::CVector::from_iterator(4, a.iter().map(|&x| c(x * r, 0.0)));
    vec![
        v([1.0, 0.0, 0.0, 1.0]),
        v([1.0, 0.0, 0.0, -1.0]),
        v([0.0, 1.0, 1.0, 0.0]),
        v([0.0, 1.0, -1.0, 0.0]),
    ]
}

/// Liouville (superoperator) matrix acting on row-major vectorizations.
#[derive(Debug, Clone, PartialEq)]
pub struct LiouvilleOperator {
    pub dim: usize,
    pub matrix: CMatrix,
}

impl LiouvilleOperator {
    pub fn new(matrix: CMatrix) -> Result<Self> {
        let n = matrix.nrows();
        let d = (n as f64).sqrt().round() as usize;
        if !matrix.is_square() || d * d != n {
            return Err(Error::Dimension(format!(
                "Liouville matrix must be d²×d², got {:?}",
                matrix.shape()
            )));
        }
        Ok(Self { dim: d, matrix })
    }

    pub fn apply(&self, rho: &CMatrix) -> CMatrix {
        devectorize(&(&self.matrix * vectorize(rho)), self.dim, self.dim).expect("square")
    }

    pub fn to_choi(&self) -> Choi {
        Choi::from_liouville(&self.matrix, self.dim, self.dim).expect("square")
    }

    pub fn eigenvalues(&self) -> Vec<matcore::C64> {
        let (_, t) = nalgebra::Schur::new(self.matrix.clone()).unpack();
        (0..t.nrows()).map(|k| t[(k, k)]).collect()
    }
}

/// Builds the Liouville matrix. With row-major vectorization
/// `vec(AXB) = (A ⊗ Bᵀ) vec(X)`, which fixes where the transposes go.
pub fn build_liouville(l: &Lindbladian) -> LiouvilleOperator {
    let d = l.dim;
    let id = identity(d);
    let h = &l.hamiltonian;
    let mut m = (kron(h, &id) - kron(&id, &h.transpose())) * c(0.0, -1.0);
    for j in &l.jumps {
        let op = &j.op;
        let ldl = op.adjoint() * op;
        let conj = op.map(|z| z.conj());
        m += (kron(op, &conj)
            - kron(&ldl, &id) * c(0.5, 0.0)
            - kron(&id, &ldl.transpose()) * c(0.5, 0.0))
            * c(j.rate, 0.0);
    }
    LiouvilleOperator { dim: d, matrix: m }
}

/// `e^{tL}` in Liouville form.
pub fn semigroup_liouville(l: &Lindbladian, t: f64) -> Result<CMatrix> {
    if !(t >= 0.0) {
        return Err(Error::Invalid(format!(
            "time must be nonnegative, got {}",
            t
        )));
    }
    expm(&(build_liouville(l).matrix * c(t, 0.0)))
}

pub fn evolve_state(l: &Lindbladian, rho0: &CMatrix, t: f64) -> Result<CMatrix> {
    if rho0.nrows() != l.dim {
        return Err(Error::Dimension(format!(
            "state of dimension {} for a generator on dimension {}",
            rho0.nrows(),
            l.dim
        )));
    }
    check_state(rho0, 1e-9)?;
    let k = semigroup_liouville(l, t)?;
    devectorize(&(k * vectorize(rho0)), l.dim, l.dim)
}

pub fn semigroup_choi(l: &Lindbladian, t: f64) -> Result<Choi> {
    Choi::from_liouville(&semigroup_liouville(l, t)?, l.dim, l.dim)
}

/// Choi operator `J = Σ |i><j| ⊗ N(|i><j|)`, input factor first. Trace equals
/// `dim_in` for trace-preserving maps.
#[derive(Debug, Clone, PartialEq)]
pub struct Choi {
    pub dim_in: usize,
    pub dim_out: usize,
    pub matrix: CMatrix,
}

impl Choi {
    pub fn new(dim_in: usize, dim_out: usize, matrix: CMatrix) -> Result<Self> {
        let n = dim_in * dim_out;
        if matrix.shape() != (n, n) {
            return Err(Error::Dimension(format!(
                "Choi matrix for {}→{} must be {}x{}, got {:?}",
                dim_in,
                dim_out,
                n,
                n,
                matrix.shape()
            )));
        }
        Ok(Self {
            dim_in,
            dim_out,
            matrix,
        })
    }

    pub fn identity(d: usize) -> Self {
        Self {
            dim_in: d,
            dim_out: d,
            matrix: matcore::max_entangled(d) * c(d as f64, 0.0),
        }
    }

    /// Choi operator of an arbitrary linear map given as a closure.
    pub fn from_map(dim_in: usize, dim_out: usize, map: impl Fn(&CMatrix) -> CMatrix) -> Self {
        let mut j = zeros(dim_in * dim_out, dim_in * dim_out);
        for i in 0..dim_in {
            for k in 0..dim_in {
                let out = map(&matcore::ketbra(dim_in, i, k));
                for a in 0..dim_out {
                    for b in 0..dim_out {
                        j[(i * dim_out + a, k * dim_out + b)] = out[(a, b)];
                    }
                }
            }
        }
        Self {
            dim_in,
            dim_out,
            matrix: j,
        }
    }

    /// Reshuffles a `dout² × din²` Liouville matrix into a Choi operator.
    pub fn from_liouville(k: &CMatrix, dim_in: usize, dim_out: usize) -> Result<Self> {
        if k.shape() != (dim_out * dim_out, dim_in * dim_in) {
            return Err(Error::Dimension(format!(
                "Liouville matrix for {}→{} must be {}x{}, got {:?}",
                dim_in,
                dim_out,
                dim_out * dim_out,
                dim_in * dim_in,
                k.shape()
            )));
        }
        let n = dim_in * dim_out;
        let matrix = CMatrix::from_fn(n, n, |r, col| {
            let (i, a) = (r / dim_out, r % dim_out);
            let (j, b) = (col / dim_out, col % dim_out);
            k[(a * dim_out + b, i * dim_in + j)]
        });
        Ok(Self {
            dim_in,
            dim_out,
            matrix,
        })
    }

    pub fn to_liouville(&self) -> CMatrix {
        let (di, dout) = (self.dim_in, self.dim_out);
        CMatrix::from_fn(dout * dout, di * di, |r, col| {
            let (a, b) = (r / dout, r % dout);
            let (i, j) = (col / di, col % di);
            self.matrix[(i * dout + a, j * dout + b)]
        })
    }

    /// Choi operator of the generator itself, `J(L)`.
    pub fn of_generator(l: &Lindbladian) -> Self {
        build_liouville(l).to_choi()
    }

    pub fn apply(&self, rho: &CMatrix) -> Result<CMatrix> {
        crate::channels::apply(self, rho)
    }

    /// `tr_out J`.
    pub fn trace_out(&self) -> CMatrix {
        let dims = SystemDims::new(&[self.dim_in, self.dim_out]).expect("positive dims");
        matcore::partial_trace(&self.matrix, &dims, &[0]).expect("consistent dims")
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            dim_in: self.dim_in,
            dim_out: self.dim_out,
            matrix: &self.matrix * c(s, 0.0),
        }
    }

    pub fn add(&self, other: &Choi) -> Result<Self> {
        self.same_dims(other)?;
        Ok(Self {
            dim_in: self.dim_in,
            dim_out: self.dim_out,
            matrix: &self.matrix + &other.matrix,
        })
    }

    pub fn distance(&self, other: &Choi) -> Result<f64> {
        self.same_dims(other)?;
        Ok((&self.matrix - &other.matrix).norm())
    }

    fn same_dims(&self, other: &Choi) -> Result<()> {
        if (self.dim_in, self.dim_out) != (other.dim_in, other.dim_out) {
            return Err(Error::Dimension(format!(
                "Choi {}→{} vs {}→{}",
                self.dim_in, self.dim_out, other.dim_in, other.dim_out
            )));
        }
        Ok(())
    }
}

fn tp_defect(j: &Choi) -> f64 {
    max_abs(&(j.trace_out() - identity(j.dim_in)))
}

pub fn is_hptp(j: &Choi, tol: f64) -> bool {
    is_hermitian(&j.matrix, tol) && tp_defect(j) <= tol
}

pub fn is_cptp(j: &Choi, tol: f64) -> bool {
    is_hptp(j, tol) && matcore::min_eigenvalue(&j.matrix) >= -tol
}

/// Trace-nonincreasing CP check: `J ⪰ 0` and `tr_out J ⪯ I`.
pub fn is_cptn(j: &Choi, tol: f64) -> bool {
    is_hermitian(&j.matrix, tol)
        && matcore::min_eigenvalue(&j.matrix) >= -tol
        && matcore::min_eigenvalue(&(identity(j.dim_in) - j.trace_out())) >= -tol
}

/// Stationary states of a generator.
#[derive(Debug, Clone)]
pub struct SteadyStates {
    /// Linearly independent density matrices spanning the state part of the kernel.
    pub states: Vec<CMatrix>,
    /// Complex dimension of the kernel of the Liouville matrix.
    pub kernel_dim: usize,
    /// Number of kernel directions with no density-matrix representative.
    pub non_state_elements: usize,
}

impl SteadyStates {
    pub fn is_unique(&self) -> bool {
        self.kernel_dim == 1 && self.states.len() == 1
    }
}

/// Extracts steady states from the kernel of the Liouvillian. Every returned
/// state satisfies `‖L(ρ)‖₁ ≤ tol`.
pub fn steady_states(l: &Lindbladian, tol: f64) -> SteadyStates {
    let d = l.dim;
    let liou = build_liouville(l);
    let kernel = matcore::null_space(&liou.matrix, 1e-9);
    let kernel_dim = kernel.len();
    if kernel_dim == d * d {
        return SteadyStates {
            states: vec![identity(d) * c(1.0 / d as f64, 0.0)],
            kernel_dim,
            non_state_elements: 0,
        };
    }
    let mut candidates = Vec::new();
    for v in &kernel {
        let x = devectorize(v, d, d).expect("d² vector");
        let re = matcore::hermitize(&x);
        let im = matcore::hermitize(&(&x * c(0.0, -1.0)));
        for h in [re, im] {
            if h.norm() < 1e-12 {
                continue;
            }
            let pos = matcore::hermitian_fn(&h, |x| x.max(0.0));
            let neg = matcore::hermitian_fn(&h, |x| (-x).max(0.0));
            candidates.push(pos);
            candidates.push(neg);
        }
    }
    // keep linearly independent, verified states
    let mut basis: Vec<matcore::CVector> = Vec::new();
    let mut states = Vec::new();
    for p in candidates {
        let tr = p.trace().re;
        if tr <= 1e-10 {
            continue;
        }
        let rho = hermitize_unit(&p);
        if matcore::trace_norm(&l.apply(&rho)) > tol {
            continue;
        }
        let mut v = vectorize(&rho);
        for b in &basis {
            let proj = b.dotc(&v);
            v -= b * proj;
        }
        let n = v.norm();
        if n > 1e-6 {
            basis.push(v / c(n, 0.0));
            states.push(rho);
        }
        if states.len() == kernel_dim {
            break;
        }
    }
    let non_state_elements = kernel_dim - states.len();
    SteadyStates {
        states,
        kernel_dim,
        non_state_elements,
    }
}

fn hermitize_unit(p: &CMatrix) -> CMatrix {
    let h = matcore::hermitize(p);
    let tr = h.trace().re;
    h * c(1.0 / tr, 0.0)
}

/// Identity channel Liouville matrix on dimension `d`.
pub fn identity_liouville(d: usize) -> CMatrix {
    identity(d * d)
}

/// Conjugation channel `ρ ↦ U ρ U†` as a Choi operator.
pub fn unitary_choi(u: &CMatrix) -> Choi {
    let ubar = u.map(|z| z.conj());
    let k = kron(u, &ubar);
    Choi::from_liouville(&k, u.ncols(), u.nrows()).expect("consistent")
}
