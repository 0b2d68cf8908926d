//! Quasi-probability programming protocols and their Monte-Carlo estimation.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::channels::{
    self, compose_serial, heralded_extension, tensor, KrausChannel, ProcessorMap,
};
use crate::dynamics::{self, bell_basis, is_cptp, semigroup_choi, unitary_choi, Choi, Lindbladian};
use crate::error::{Error, Result};
use crate::matcore::{self, c, identity, kron, zeros, CMatrix, CVector, ONE, ZERO};

type StateFn = dyn Fn(f64) -> CMatrix + Send + Sync;
type ScalarFn = dyn Fn(f64) -> f64 + Send + Sync;
type TargetFn = dyn Fn(f64) -> Result<Choi> + Send + Sync;

/// A one-parameter family of program states `t ↦ π_t`.
#[derive(Clone)]
pub struct ProgramStateFamily {
    pub dim: usize,
    pub label: String,
    eval: Arc<StateFn>,
}

impl fmt::Debug for ProgramStateFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProgramStateFamily")
            .field("dim", &self.dim)
            .field("label", &self.label)
            .finish()
    }
}

impl ProgramStateFamily {
    pub fn new(
        dim: usize,
        label: &str,
        eval: impl Fn(f64) -> CMatrix + Send + Sync + 'static,
    ) -> Self {
        Self {
            dim,
            label: label.to_string(),
            eval: Arc::new(eval),
        }
    }

    pub fn constant(state: CMatrix, label: &str) -> Self {
        let dim = state.nrows();
        Self::new(dim, label, move |_| state.clone())
    }

    pub fn at(&self, t: f64) -> CMatrix {
        (self.eval)(t)
    }

    pub fn tensor(&self, other: &ProgramStateFamily) -> Self {
        let (a, b) = (self.clone(), other.clone());
        Self::new(
            self.dim * other.dim,
            &format!("{}⊗{}", self.label, other.label),
            move |t| kron(&a.at(t), &b.at(t)),
        )
    }

    /// Conjugates every program state by a fixed unitary.
    pub fn rotated(&self, u: &CMatrix) -> Self {
        let (a, u) = (self.clone(), u.clone());
        Self::new(self.dim, &format!("U·{}", self.label), move |t| {
            &u * a.at(t) * u.adjoint()
        })
    }

    /// Port-based family `J(e^{tL})/d`.
    pub fn port_based(l: &Lindbladian) -> Self {
        let l = l.clone();
        let d = l.dim();
        Self::new(d * d, "choi", move |t| {
            semigroup_choi(&l, t).expect("t ≥ 0").matrix * c(1.0 / d as f64, 0.0)
        })
    }
}

/// One signed term `α · y(t) · P(ρ ⊗ π(t))` of a quasi-protocol. `y` is the
/// success probability of a heralded program preparation (1 when absent).
#[derive(Clone)]
pub struct QuasiBranch {
    pub coefficient: f64,
    pub processor: Arc<ProcessorMap>,
    pub program: ProgramStateFamily,
    yield_fn: Option<Arc<ScalarFn>>,
}

impl fmt::Debug for QuasiBranch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("QuasiBranch")
            .field("coefficient", &self.coefficient)
            .field("program", &self.program)
            .finish()
    }
}

impl QuasiBranch {
    pub fn new(
        coefficient: f64,
        processor: ProcessorMap,
        program: ProgramStateFamily,
    ) -> Result<Self> {
        if processor.dim_p != program.dim {
            return Err(Error::Dimension(format!(
                "program dimension {} for processor program space {}",
                program.dim, processor.dim_p
            )));
        }
        Ok(Self {
            coefficient,
            processor: Arc::new(processor),
            program,
            yield_fn: None,
        })
    }

    pub fn with_yield(mut self, y: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.yield_fn = Some(Arc::new(y));
        self
    }

    pub fn yield_at(&self, t: f64) -> f64 {
        self.yield_fn.as_ref().map_or(1.0, |y| y(t))
    }

    /// Reduced channel `ρ ↦ P(ρ ⊗ π(t))`.
    pub fn reduced(&self, t: f64) -> Result<Choi> {
        self.processor.reduce(&self.program.at(t))
    }

    /// True when the branch is physical: a CPTP processor, or a CP
    /// trace-nonincreasing one whose heralded extension is CPTP.
    pub fn is_physical(&self, tol: f64) -> bool {
        let j = &self.processor.choi;
        is_cptp(j, tol) || (dynamics::is_cptn(j, tol) && is_cptp(&heralded_extension(j), tol))
    }
}

#[derive(Clone)]
enum Node {
    Leaf(Vec<QuasiBranch>),
    Serial(Box<QuasiProtocol>, Box<QuasiProtocol>),
    Tensor(Box<QuasiProtocol>, Box<QuasiProtocol>),
    Trotter(Box<QuasiProtocol>, Box<QuasiProtocol>, usize),
}

/// Signed mixture of physical branches reproducing a target channel family.
/// Composite protocols are kept as a tree; their branch set is the product of
/// the children's.
#[derive(Clone)]
pub struct QuasiProtocol {
    pub label: String,
    pub dim_in: usize,
    pub dim_out: usize,
    node: Node,
    target: Arc<TargetFn>,
}

impl fmt::Debug for QuasiProtocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("QuasiProtocol")
            .field("label", &self.label)
            .field("dim_in", &self.dim_in)
            .field("dim_out", &self.dim_out)
            .field("kappa", &self.kappa())
            .finish()
    }
}

impl QuasiProtocol {
    pub fn from_branches(
        label: &str,
        branches: Vec<QuasiBranch>,
        target: impl Fn(f64) -> Result<Choi> + Send + Sync + 'static,
    ) -> Result<Self> {
        let first = branches
            .first()
            .ok_or_else(|| Error::Invalid("protocol without branches".into()))?;
        let (ds, dout) = (first.processor.dim_s, first.processor.dim_out);
        if branches
            .iter()
            .any(|b| (b.processor.dim_s, b.processor.dim_out) != (ds, dout))
        {
            return Err(Error::Dimension("branches act on different systems".into()));
        }
        Ok(Self {
            label: label.to_string(),
            dim_in: ds,
            dim_out: dout,
            node: Node::Leaf(branches),
            target: Arc::new(target),
        })
    }

    /// Branches of a leaf protocol; empty for composites.
    pub fn branches(&self) -> &[QuasiBranch] {
        match &self.node {
            Node::Leaf(b) => b,
            _ => &[],
        }
    }

    /// Sampling overhead `Σ|α_j|`, multiplicative under composition.
    pub fn kappa(&self) -> f64 {
        match &self.node {
            Node::Leaf(b) => b.iter().map(|x| x.coefficient.abs()).sum(),
            Node::Serial(a, b) | Node::Tensor(a, b) => a.kappa() * b.kappa(),
            Node::Trotter(a, b, n) => (a.kappa() * b.kappa()).powi(*n as i32),
        }
    }

    pub fn target(&self, t: f64) -> Result<Choi> {
        (self.target)(t)
    }

    /// `Σ α_j y_j(t) J(branch_j)` assembled through the protocol tree.
    pub fn effective_choi(&self, t: f64) -> Result<Choi> {
        self.prepare(t)?.effective()
    }

    /// Frobenius distance between the effective and the target Choi operators.
    pub fn exactness_error(&self, t: f64) -> Result<f64> {
        self.effective_choi(t)?.distance(&self.target(t)?)
    }

    /// Whether every leaf branch is physical.
    pub fn branches_physical(&self, tol: f64) -> bool {
        match &self.node {
            Node::Leaf(b) => b.iter().all(|x| x.is_physical(tol)),
            Node::Serial(a, b) | Node::Tensor(a, b) | Node::Trotter(a, b, _) => {
                a.branches_physical(tol) && b.branches_physical(tol)
            }
        }
    }

    /// Program state `Σ_j (|α_j|/κ) π_j(t) ⊗ |j><j|` of a leaf protocol whose
    /// branches share a program dimension.
    pub fn sampling_program(&self, t: f64) -> Result<CMatrix> {
        let b = match &self.node {
            Node::Leaf(b) => b,
            _ => {
                return Err(Error::Invalid(
                    "sampling program of a composite protocol".into(),
                ))
            }
        };
        let dp = b[0].program.dim;
        if b.iter().any(|x| x.program.dim != dp) {
            return Err(Error::Dimension(
                "branch programs differ in dimension".into(),
            ));
        }
        let k = self.kappa();
        let n = b.len();
        let mut out = zeros(dp * n, dp * n);
        for (j, br) in b.iter().enumerate() {
            out += kron(&br.program.at(t), &matcore::ketbra(n, j, j))
                * c(br.coefficient.abs() / k, 0.0);
        }
        Ok(out)
    }

    fn prepare(&self, t: f64) -> Result<Prepared> {
        Ok(match &self.node {
            Node::Leaf(branches) => {
                let kappa: f64 = branches.iter().map(|b| b.coefficient.abs()).sum();
                let mut cdf = Vec::with_capacity(branches.len());
                let mut acc = 0.0;
                for b in branches {
                    acc += b.coefficient.abs() / kappa;
                    cdf.push(acc);
                }
                let weights = branches
                    .iter()
                    .map(|b| kappa * b.coefficient.signum() * b.yield_at(t))
                    .collect();
                let chois = branches
                    .iter()
                    .map(|b| b.reduced(t))
                    .collect::<Result<Vec<_>>>()?;
                let coefficients = branches
                    .iter()
                    .map(|b| b.coefficient * b.yield_at(t))
                    .collect();
                Prepared::Leaf {
                    cdf,
                    weights,
                    coefficients,
                    chois,
                }
            }
            Node::Serial(a, b) => {
                Prepared::Serial(Box::new(a.prepare(t)?), Box::new(b.prepare(t)?))
            }
            Node::Tensor(a, b) => {
                Prepared::Tensor(Box::new(a.prepare(t)?), Box::new(b.prepare(t)?))
            }
            Node::Trotter(a, b, n) => {
                let s = t / *n as f64;
                Prepared::Trotter(Box::new(a.prepare(s)?), Box::new(b.prepare(s)?), *n)
            }
        })
    }
}

enum Prepared {
    Leaf {
        cdf: Vec<f64>,
        weights: Vec<f64>,
        coefficients: Vec<f64>,
        chois: Vec<Choi>,
    },
    Serial(Box<Prepared>, Box<Prepared>),
    Tensor(Box<Prepared>, Box<Prepared>),
    Trotter(Box<Prepared>, Box<Prepared>, usize),
}

impl Prepared {
    fn effective(&self) -> Result<Choi> {
        match self {
            Prepared::Leaf {
                coefficients,
                chois,
                ..
            } => {
                let mut acc = chois[0].scale(coefficients[0]);
                for (a, j) in coefficients.iter().zip(chois).skip(1) {
                    acc = acc.add(&j.scale(*a))?;
                }
                Ok(acc)
            }
            Prepared::Serial(a, b) => compose_serial(&a.effective()?, &b.effective()?),
            Prepared::Tensor(a, b) => Ok(tensor(&a.effective()?, &b.effective()?)),
            Prepared::Trotter(a, b, n) => {
                let step = compose_serial(&a.effective()?, &b.effective()?)?;
                let mut acc = step.clone();
                for _ in 1..*n {
                    acc = compose_serial(&acc, &step)?;
                }
                Ok(acc)
            }
        }
    }

    /// Draws one branch index per leaf visit; returns the estimator weight.
    fn sample(&self, rng: &mut ChaCha8Rng, path: &mut Vec<usize>) -> f64 {
        match self {
            Prepared::Leaf { cdf, weights, .. } => {
                let u: f64 = rng.gen();
                let j = cdf.iter().position(|&x| u < x).unwrap_or(cdf.len() - 1);
                path.push(j);
                weights[j]
            }
            Prepared::Serial(a, b) | Prepared::Tensor(a, b) => {
                a.sample(rng, path) * b.sample(rng, path)
            }
            Prepared::Trotter(a, b, n) => {
                let mut w = 1.0;
                for _ in 0..*n {
                    w *= a.sample(rng, path);
                    w *= b.sample(rng, path);
                }
                w
            }
        }
    }

    fn channel(&self, path: &[usize], pos: &mut usize) -> Result<Choi> {
        match self {
            Prepared::Leaf { chois, .. } => {
                let j = path[*pos];
                *pos += 1;
                Ok(chois[j].clone())
            }
            Prepared::Serial(a, b) => {
                let ca = a.channel(path, pos)?;
                let cb = b.channel(path, pos)?;
                compose_serial(&ca, &cb)
            }
            Prepared::Tensor(a, b) => {
                let ca = a.channel(path, pos)?;
                let cb = b.channel(path, pos)?;
                Ok(tensor(&ca, &cb))
            }
            Prepared::Trotter(a, b, n) => {
                let mut acc: Option<Choi> = None;
                for _ in 0..*n {
                    for sub in [a, b] {
                        let ch = sub.channel(path, pos)?;
                        acc = Some(match acc {
                            None => ch,
                            Some(prev) => compose_serial(&prev, &ch)?,
                        });
                    }
                }
                Ok(acc.expect("n ≥ 1"))
            }
        }
    }
}

/// Monte-Carlo estimate of `tr(O · target(ρ0))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub estimate: f64,
    pub stderr: f64,
    pub n_samples: usize,
}

const CHUNK: usize = 4096;

/// Quasi-probability sampling: draw a branch with probability `|α_j|/κ`,
/// evaluate its output exactly and reweight by `κ·sign(α_j)`. Samples are
/// drawn in fixed-size chunks, chunk `k` using stream `k` of a ChaCha8
/// generator seeded with `seed`, so the result does not depend on the number
/// of worker threads.
pub fn mc_estimate(
    protocol: &QuasiProtocol,
    rho0: &CMatrix,
    observable: &CMatrix,
    t: f64,
    n_samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    mc_estimate_threads(protocol, rho0, observable, t, n_samples, seed, None)
}

pub fn mc_estimate_threads(
    protocol: &QuasiProtocol,
    rho0: &CMatrix,
    observable: &CMatrix,
    t: f64,
    n_samples: usize,
    seed: u64,
    threads: Option<usize>,
) -> Result<McEstimate> {
    if n_samples == 0 {
        return Err(Error::Invalid("n_samples must be at least 1".into()));
    }
    if !matcore::is_hermitian(observable, 1e-10) {
        return Err(Error::Invalid("observable is not Hermitian".into()));
    }
    if rho0.shape() != (protocol.dim_in, protocol.dim_in)
        || observable.shape() != (protocol.dim_out, protocol.dim_out)
    {
        return Err(Error::Dimension(
            "state or observable does not match the protocol".into(),
        ));
    }
    let prepared = protocol.prepare(t)?;
    let n_chunks = n_samples.div_ceil(CHUNK);
    // per chunk: (count, mean, sum of squared deviations), merged in chunk order
    let run_chunk = |k: usize| -> Result<(f64, f64, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);
        let count = CHUNK.min(n_samples - k * CHUNK);
        let mut memo: HashMap<Vec<usize>, f64> = HashMap::new();
        let (mut mean, mut m2) = (0.0, 0.0);
        let mut path = Vec::new();
        for i in 0..count {
            path.clear();
            let w = prepared.sample(&mut rng, &mut path);
            let v = match memo.get(&path) {
                Some(&v) => v,
                None => {
                    let mut pos = 0;
                    let ch = prepared.channel(&path, &mut pos)?;
                    let out = channels::apply(&ch, rho0)?;
                    let v = (observable * out).trace().re;
                    memo.insert(path.clone(), v);
                    v
                }
            };
            let x = w * v;
            let delta = x - mean;
            mean += delta / (i + 1) as f64;
            m2 += delta * (x - mean);
        }
        Ok((count as f64, mean, m2))
    };
    let parts: Vec<Result<(f64, f64, f64)>> = match threads {
        Some(1) => (0..n_chunks).map(run_chunk).collect(),
        Some(nt) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(nt)
                .build()
                .map_err(|e| Error::Invalid(e.to_string()))?;
            pool.install(|| (0..n_chunks).into_par_iter().map(run_chunk).collect())
        }
        None => (0..n_chunks).into_par_iter().map(run_chunk).collect(),
    };
    let (mut n, mut mean, mut m2) = (0.0, 0.0, 0.0);
    for p in parts {
        let (nb, mb, m2b) = p?;
        let total = n + nb;
        let delta = mb - mean;
        mean += delta * nb / total;
        m2 += m2b + delta * delta * n * nb / total;
        n = total;
    }
    let stderr = if n_samples > 1 {
        (m2.max(0.0) / (n - 1.0)).sqrt() / n.sqrt()
    } else {
        0.0
    };
    Ok(McEstimate {
        estimate: mean,
        stderr,
        n_samples,
    })
}

/// Exact `tr(O · target_t(ρ0))`.
pub fn exact_expectation(
    protocol: &QuasiProtocol,
    rho0: &CMatrix,
    observable: &CMatrix,
    t: f64,
) -> Result<f64> {
    let out = channels::apply(&protocol.target(t)?, rho0)?;
    Ok((observable * out).trace().re)
}

/// One row of a sampled trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPoint {
    pub t: f64,
    pub exact: f64,
    pub estimate: f64,
    pub stderr: f64,
    pub n_samples: usize,
    pub seed: u64,
}

/// Samples the protocol on a time grid. Point `k` uses seed `seed + k`.
pub fn sample_trajectory(
    protocol: &QuasiProtocol,
    rho0: &CMatrix,
    observable: &CMatrix,
    times: &[f64],
    n_samples: usize,
    seed: u64,
    threads: Option<usize>,
) -> Result<Vec<TrajectoryPoint>> {
    times
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let s = seed.wrapping_add(k as u64);
            let est = mc_estimate_threads(protocol, rho0, observable, t, n_samples, s, threads)?;
            Ok(TrajectoryPoint {
                t,
                exact: exact_expectation(protocol, rho0, observable, t)?,
                estimate: est.estimate,
                stderr: est.stderr,
                n_samples,
                seed: s,
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Coherent generators

/// Eigenvalue clusters of a Hermitian matrix (descending) with their
/// spectral projectors. Eigenvalues within `tol` are merged transitively.
pub fn spectral_clusters(h: &CMatrix, tol: f64) -> Result<(Vec<f64>, Vec<CMatrix>)> {
    if !matcore::is_hermitian(h, 1e-10) {
        return Err(Error::Invalid("Hamiltonian is not Hermitian".into()));
    }
    let (vals, vecs) = matcore::eigh(h);
    let n = vals.len();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for k in (0..n).rev() {
        match groups.last_mut() {
            Some(g) if (vals[*g.last().expect("nonempty")] - vals[k]).abs() <= tol => g.push(k),
            _ => groups.push(vec![k]),
        }
    }
    let mut centers = Vec::new();
    let mut projs = Vec::new();
    for g in groups {
        centers.push(g.iter().map(|&k| vals[k]).sum::<f64>() / g.len() as f64);
        let mut p = zeros(n, n);
        for &k in &g {
            let v = vecs.column(k).into_owned();
            p += &v * v.adjoint();
        }
        projs.push(p);
    }
    Ok((centers, projs))
}

/// Processor `ρ ⊗ Q ↦ tr(Q)·Δ(ρ) + s·Σ_{a≠b} Q_ab Π_a ρ Π_b` with
/// `Δ(ρ) = Σ Π_a ρ Π_a`.
fn block_processor(projs: &[CMatrix], s: f64) -> Choi {
    let d = projs[0].nrows();
    let k = projs.len();
    Choi::from_map(d * k, d, |x| {
        let mut out = zeros(d, d);
        for a in 0..k {
            for b in 0..k {
                let block = CMatrix::from_fn(d, d, |i, j| x[(i * k + a, j * k + b)]);
                if a == b {
                    for p in projs {
                        out += p * &block * p;
                    }
                } else {
                    out += &projs[a] * block * &projs[b] * c(s, 0.0);
                }
            }
        }
        out
    })
}

fn phase_program(centers: &[f64]) -> ProgramStateFamily {
    let centers = centers.to_vec();
    let k = centers.len();
    ProgramStateFamily::new(k, "phase", move |t| {
        let v = CVector::from_iterator(
            k,
            centers
                .iter()
                .map(|&l| c((l * t).cos(), (l * t).sin()) * c(1.0 / (k as f64).sqrt(), 0.0)),
        );
        matcore::projector(&v)
    })
}

/// HPTP processor and program family reproducing `ρ ↦ e^{iHt} ρ e^{−iHt}`.
pub fn coherent_protocol(
    h: &CMatrix,
    degeneracy_tol: f64,
) -> Result<(ProcessorMap, ProgramStateFamily)> {
    let (centers, projs) = spectral_clusters(h, degeneracy_tol)?;
    let k = projs.len();
    let d = h.nrows();
    let processor = ProcessorMap::new(block_processor(&projs, k as f64), d, k)?;
    Ok((processor, phase_program(&centers)))
}

/// Splits the coherent processor into CPTP parts: `P = (1+μ)A − μB` with
/// off-diagonal weights 1 for `A` and `−1/(K−1)` for `B`, `μ = (K−1)²/K`.
pub fn coherent_quasi_protocol(h: &CMatrix, degeneracy_tol: f64) -> Result<QuasiProtocol> {
    let (centers, projs) = spectral_clusters(h, degeneracy_tol)?;
    let k = projs.len();
    let d = h.nrows();
    let program = phase_program(&centers);
    let mut branches = vec![];
    if k == 1 {
        branches.push(QuasiBranch::new(
            1.0,
            ProcessorMap::new(block_processor(&projs, 0.0), d, 1)?,
            program,
        )?);
    } else {
        let kf = k as f64;
        let mu = (kf - 1.0).powi(2) / kf;
        let a = ProcessorMap::new(block_processor(&projs, 1.0), d, k)?;
        let b = ProcessorMap::new(block_processor(&projs, -1.0 / (kf - 1.0)), d, k)?;
        branches.push(QuasiBranch::new(1.0 + mu, a, program.clone())?);
        branches.push(QuasiBranch::new(-mu, b, program)?);
    }
    let h = h.clone();
    QuasiProtocol::from_branches("coherent", branches, move |t| {
        Ok(unitary_choi(&matcore::expm(&(&h * c(0.0, t)))?))
    })
}

// ---------------------------------------------------------------------------
// SWAP with Bell dephasing

/// Bell-basis dephasing channel on two qubits.
pub fn bell_dephasing_choi() -> Choi {
    let projs: Vec<CMatrix> = bell_basis().iter().map(matcore::projector).collect();
    KrausChannel::new(projs)
        .expect("complete projectors")
        .to_choi()
}

/// `E_t = e^{−λt} e^{itS}(·)e^{−itS} + (1 − e^{−λt}) D_B`.
pub fn swap_dephasing_exact(lambda: f64, t: f64) -> Result<Choi> {
    if !(lambda >= 0.0) || !(t >= 0.0) {
        return Err(Error::Invalid("λ and t must be nonnegative".into()));
    }
    let s = matcore::swap_operator(2);
    let u = matcore::expm(&(s * c(0.0, t)))?;
    let w = (-lambda * t).exp();
    unitary_choi(&u)
        .scale(w)
        .add(&bell_dephasing_choi().scale(1.0 - w))
}

/// Processor on S ⊗ (R ⊗ C): measures the control C; outcome 0 runs `inner`
/// on S ⊗ R, outcome 1 discards R and applies `other`.
fn controlled_processor(inner: &Choi, other: &Choi, ds: usize, dr: usize) -> Choi {
    let dout = inner.dim_out;
    let dp = dr * 2;
    Choi::from_map(ds * dp, dout, |x| {
        let idx = |s: usize, r: usize, cbit: usize| s * dp + r * 2 + cbit;
        let x0 = CMatrix::from_fn(ds * dr, ds * dr, |i, j| {
            x[(idx(i / dr, i % dr, 0), idx(j / dr, j % dr, 0))]
        });
        let x1 = CMatrix::from_fn(ds, ds, |i, j| {
            (0..dr).fold(ZERO, |acc, r| acc + x[(idx(i, r, 1), idx(j, r, 1))])
        });
        channels::apply(inner, &x0).expect("dims") + channels::apply(other, &x1).expect("dims")
    })
}

/// Two-branch protocol for the SWAP–dephasing semigroup with program
/// `θ_t ⊗ σ_t`, `σ_t = √e^{−λt}|0> + √(1−e^{−λt})|1>`.
pub fn swap_dephasing_protocol(lambda: f64) -> Result<QuasiProtocol> {
    if !(lambda >= 0.0) {
        return Err(Error::Invalid("λ must be nonnegative".into()));
    }
    let s = matcore::swap_operator(2);
    let coherent = coherent_quasi_protocol(&s, 1e-9)?;
    let db = bell_dephasing_choi();
    let theta = coherent.branches()[0].program.clone();
    let control = ProgramStateFamily::new(2, "control", move |t| {
        let w = (-lambda * t).exp();
        let v = CVector::from_vec(vec![c(w.sqrt(), 0.0), c((1.0 - w).max(0.0).sqrt(), 0.0)]);
        matcore::projector(&v)
    });
    let program = theta.tensor(&control);
    let branches = coherent
        .branches()
        .iter()
        .map(|b| {
            let choi = controlled_processor(&b.processor.choi, &db, 4, 2);
            QuasiBranch::new(
                b.coefficient,
                ProcessorMap::new(choi, 4, 4)?,
                program.clone(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    QuasiProtocol::from_branches("swap-dephasing", branches, move |t| {
        swap_dephasing_exact(lambda, t)
    })
}

// ---------------------------------------------------------------------------
// Amplitude damping

/// Amplitude-damping channel with decay probability `γ`.
pub fn amplitude_damping_choi(gamma: f64) -> Result<Choi> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::Invalid(format!(
            "damping parameter {} outside [0, 1]",
            gamma
        )));
    }
    let e0 = matcore::real_matrix(2, 2, &[1.0, 0.0, 0.0, (1.0 - gamma).sqrt()]);
    let e1 = matcore::real_matrix(2, 2, &[0.0, gamma.sqrt(), 0.0, 0.0]);
    Ok(KrausChannel::new(vec![e0, e1])?.to_choi())
}

fn ry(angle: f64) -> CMatrix {
    let (s, co) = ((angle / 2.0).sin(), (angle / 2.0).cos());
    matcore::real_matrix(2, 2, &[co, -s, s, co])
}

fn hadamard() -> CMatrix {
    let r = 1.0 / 2f64.sqrt();
    matcore::real_matrix(2, 2, &[r, r, r, -r])
}

fn phase_gate() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[ONE, ZERO, ZERO, matcore::I])
}

/// CNOT with control on the first factor.
fn cnot(control_first: bool) -> CMatrix {
    let p0 = matcore::ketbra(2, 0, 0);
    let p1 = matcore::ketbra(2, 1, 1);
    let x = matcore::pauli(1);
    if control_first {
        kron(&p0, &identity(2)) + kron(&p1, &x)
    } else {
        kron(&identity(2), &p0) + kron(&x, &p1)
    }
}

/// Local terms of the CNOT quasi-decomposition: coefficient, system operator,
/// ancilla operator. Each term acts by conjugation.
pub fn cnot_cut_terms() -> Vec<(f64, CMatrix, CMatrix)> {
    let h = hadamard();
    let s = phase_gate();
    let sd = s.adjoint();
    let plus = matcore::projector(&(CVector::from_vec(vec![ONE, ONE]) * c(1.0 / 2f64.sqrt(), 0.0)));
    let minus =
        matcore::projector(&(CVector::from_vec(vec![ONE, -ONE]) * c(1.0 / 2f64.sqrt(), 0.0)));
    vec![
        (1.0, matcore::ketbra(2, 0, 0), identity(2)),
        (1.0, matcore::ketbra(2, 1, 1), matcore::pauli(1)),
        (1.0, identity(2), plus),
        (1.0, matcore::pauli(3), minus),
        (-0.5, s.clone(), &h * &sd * &h),
        (-0.5, sd, &h * &s * &h),
    ]
}

/// CNOT-cut protocol for amplitude damping with a time-dependent angle.
fn ad_protocol_with_angle(
    label: &str,
    theta: Arc<ScalarFn>,
    target: impl Fn(f64) -> Result<Choi> + Send + Sync + 'static,
) -> Result<QuasiProtocol> {
    let cx_sa = cnot(true);
    let cx_as = cnot(false);
    let mut branches = Vec::new();
    for (coef, a_op, b_op) in cnot_cut_terms() {
        let local = kron(&a_op, &identity(2));
        let u = &cx_as * &cx_sa;
        let dims = matcore::SystemDims::new(&[2, 2])?;
        let choi = Choi::from_map(4, 2, |x| {
            let y = &u * &local * x * local.adjoint() * u.adjoint();
            matcore::partial_trace(&y, &dims, &[0]).expect("dims")
        });
        let processor = if dynamics::is_cptp(&choi, 1e-9) {
            ProcessorMap::new(choi, 2, 2)?
        } else {
            ProcessorMap::new_trace_nonincreasing(choi, 2, 2)?
        };
        let (th1, th2) = (theta.clone(), theta.clone());
        let (b1, b2) = (b_op.clone(), b_op);
        let unnormalized = move |th: f64, b: &CMatrix| -> CMatrix {
            let start = ry(th / 2.0) * matcore::ket(2, 0);
            let v = ry(-th / 2.0) * b * start;
            matcore::projector(&v)
        };
        let program = ProgramStateFamily::new(2, "ancilla", move |t| {
            let s = unnormalized(th1(t), &b1);
            let w = s.trace().re;
            if w > 1e-15 {
                s * c(1.0 / w, 0.0)
            } else {
                matcore::ketbra(2, 0, 0)
            }
        });
        let branch = QuasiBranch::new(coef, processor, program)?
            .with_yield(move |t| unnormalized(th2(t), &b2).trace().re);
        branches.push(branch);
    }
    QuasiProtocol::from_branches(label, branches, target)
}

/// Six-branch protocol for `AD_γ`, `θ = 2 arcsin √γ`, `κ = 5`.
pub fn ad_quasi_protocol(gamma: f64) -> Result<QuasiProtocol> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::Invalid(format!(
            "damping parameter {} outside [0, 1]",
            gamma
        )));
    }
    let theta = 2.0 * gamma.sqrt().asin();
    ad_protocol_with_angle("amplitude-damping", Arc::new(move |_| theta), move |_| {
        amplitude_damping_choi(gamma)
    })
}

/// Binds the AD protocol to the emission semigroup of `l`:
/// `θ(t) = 2 arcsin √(1 − e^{−γt})`.
pub fn semigroup_family(l: &Lindbladian) -> Result<QuasiProtocol> {
    let unsupported =
        || Error::Unsupported("expected a single-jump qubit emission generator".into());
    if l.dim() != 2 || l.jumps().len() != 1 {
        return Err(unsupported());
    }
    let h = l.hamiltonian();
    if matcore::max_abs(&(h - identity(2) * (h.trace() * c(0.5, 0.0)))) > 1e-12 {
        return Err(unsupported());
    }
    let op = &l.jumps()[0].op;
    if op[(0, 0)].norm() > 1e-12 || op[(1, 0)].norm() > 1e-12 || op[(1, 1)].norm() > 1e-12 {
        return Err(unsupported());
    }
    let rate = l.jumps()[0].rate * op[(0, 1)].norm_sqr();
    let l = l.clone();
    ad_protocol_with_angle(
        "emission-semigroup",
        Arc::new(move |t| 2.0 * (1.0 - (-rate * t).exp()).max(0.0).sqrt().asin()),
        move |t| semigroup_choi(&l, t),
    )
}

// ---------------------------------------------------------------------------
// Composition

/// Identity protocol on dimension `d` (κ = 1).
pub fn identity_protocol(d: usize) -> Result<QuasiProtocol> {
    let processor = ProcessorMap::new(Choi::identity(d), d, 1)?;
    let program = ProgramStateFamily::constant(identity(1), "trivial");
    QuasiProtocol::from_branches(
        "identity",
        vec![QuasiBranch::new(1.0, processor, program)?],
        move |_| Ok(Choi::identity(d)),
    )
}

/// Single-branch protocol from a CPTP processor and its program family.
pub fn physical_protocol(
    label: &str,
    processor: ProcessorMap,
    program: ProgramStateFamily,
    l: &Lindbladian,
) -> Result<QuasiProtocol> {
    let l = l.clone();
    QuasiProtocol::from_branches(
        label,
        vec![QuasiBranch::new(1.0, processor, program)?],
        move |t| semigroup_choi(&l, t),
    )
}

/// `B ∘ A` at each time.
pub fn compose_serial_protocols(a: &QuasiProtocol, b: &QuasiProtocol) -> Result<QuasiProtocol> {
    if a.dim_out != b.dim_in {
        return Err(Error::Dimension(format!(
            "cannot compose protocols {}→{} and {}→{}",
            a.dim_in, a.dim_out, b.dim_in, b.dim_out
        )));
    }
    let (ta, tb) = (a.target.clone(), b.target.clone());
    Ok(QuasiProtocol {
        label: format!("{}∘{}", b.label, a.label),
        dim_in: a.dim_in,
        dim_out: b.dim_out,
        node: Node::Serial(Box::new(a.clone()), Box::new(b.clone())),
        target: Arc::new(move |t| compose_serial(&ta(t)?, &tb(t)?)),
    })
}

/// `A ⊗ B` at each time.
pub fn compose_tensor_protocols(a: &QuasiProtocol, b: &QuasiProtocol) -> QuasiProtocol {
    let (ta, tb) = (a.target.clone(), b.target.clone());
    QuasiProtocol {
        label: format!("{}⊗{}", a.label, b.label),
        dim_in: a.dim_in * b.dim_in,
        dim_out: a.dim_out * b.dim_out,
        node: Node::Tensor(Box::new(a.clone()), Box::new(b.clone())),
        target: Arc::new(move |t| Ok(tensor(&ta(t)?, &tb(t)?))),
    }
}

/// `n` Trotter steps of `A(t/n)` followed by `B(t/n)`. The target is the
/// Trotter product of the two targets; `κ = (κ_A κ_B)ⁿ`.
pub fn trotter_compose(
    a: &QuasiProtocol,
    b: &QuasiProtocol,
    n_steps: usize,
) -> Result<QuasiProtocol> {
    if n_steps == 0 {
        return Err(Error::Invalid("n_steps must be at least 1".into()));
    }
    if a.dim_in != a.dim_out || b.dim_in != b.dim_out || a.dim_in != b.dim_in {
        return Err(Error::Dimension(
            "Trotter composition needs endomorphisms on one space".into(),
        ));
    }
    let (ta, tb) = (a.target.clone(), b.target.clone());
    Ok(QuasiProtocol {
        label: format!("trotter({},{};{})", a.label, b.label, n_steps),
        dim_in: a.dim_in,
        dim_out: a.dim_out,
        node: Node::Trotter(Box::new(a.clone()), Box::new(b.clone()), n_steps),
        target: Arc::new(move |t| {
            let s = t / n_steps as f64;
            let step = compose_serial(&ta(s)?, &tb(s)?)?;
            let mut acc = step.clone();
            for _ in 1..n_steps {
                acc = compose_serial(&acc, &step)?;
            }
            Ok(acc)
        }),
    })
}

/// Liouville matrix of `(e^{L_B t/n} e^{L_A t/n})ⁿ`.
pub fn trotter_product(
    la: &Lindbladian,
    lb: &Lindbladian,
    n_steps: usize,
    t: f64,
) -> Result<CMatrix> {
    let s = t / n_steps as f64;
    let step = dynamics::semigroup_liouville(lb, s)? * dynamics::semigroup_liouville(la, s)?;
    let mut acc = identity(step.nrows());
    for _ in 0..n_steps {
        acc = &step * acc;
    }
    Ok(acc)
}

/// Half the diamond distance between the Trotter product and `e^{t(L_A+L_B)}`.
pub fn trotter_error(la: &Lindbladian, lb: &Lindbladian, n_steps: usize, t: f64) -> Result<f64> {
    let d = la.dim();
    let prod = trotter_product(la, lb, n_steps, t)?;
    let exact = dynamics::semigroup_liouville(&la.sum(lb)?, t)?;
    let diff = Choi::from_liouville(&(prod - exact), d, d)?;
    Ok(0.5 * crate::conic::diamond_norm(&diff)?)
}
