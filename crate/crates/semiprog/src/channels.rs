//! Channel algebra on Choi operators: application, Kraus forms, link product,
//! composition, tensoring and processor assembly.

use crate::dynamics::{is_cptn, is_cptp, is_hptp, Choi};
use crate::error::{Error, Result};
use crate::matcore::{self, c, identity, kron, zeros, CMatrix, SystemDims, ZERO};

/// `N(X) = tr_in[(Xᵀ ⊗ I) J]`.
pub fn apply(j: &Choi, x: &CMatrix) -> Result<CMatrix> {
    let (di, dout) = (j.dim_in, j.dim_out);
    if x.shape() != (di, di) {
        return Err(Error::Dimension(format!(
            "input of shape {:?} for a channel on dimension {}",
            x.shape(),
            di
        )));
    }
    let mut out = zeros(dout, dout);
    for i in 0..di {
        for k in 0..di {
            let xik = x[(i, k)];
            if xik == ZERO {
                continue;
            }
            for a in 0..dout {
                for b in 0..dout {
                    out[(a, b)] += xik * j.matrix[(i * dout + a, k * dout + b)];
                }
            }
        }
    }
    Ok(out)
}

/// Channel in Kraus form; each operator is `dim_out × dim_in`.
#[derive(Debug, Clone)]
pub struct KrausChannel {
    pub dim_in: usize,
    pub dim_out: usize,
    pub kraus_ops: Vec<CMatrix>,
}

impl KrausChannel {
    /// Requires `Σ K†K = I` to 1e-10.
    pub fn new(kraus_ops: Vec<CMatrix>) -> Result<Self> {
        let ch = Self::new_unchecked(kraus_ops)?;
        let s = ch
            .kraus_ops
            .iter()
            .fold(zeros(ch.dim_in, ch.dim_in), |acc, k| acc + k.adjoint() * k);
        if matcore::max_abs(&(s - identity(ch.dim_in))) > 1e-10 {
            return Err(Error::NotCptp(
                "Kraus operators do not sum to identity".into(),
            ));
        }
        Ok(ch)
    }

    /// Accepts trace-nonincreasing families.
    pub fn new_unchecked(kraus_ops: Vec<CMatrix>) -> Result<Self> {
        let first = kraus_ops
            .first()
            .ok_or_else(|| Error::Invalid("empty Kraus family".into()))?;
        let (dout, di) = first.shape();
        if kraus_ops.iter().any(|k| k.shape() != (dout, di)) {
            return Err(Error::Dimension("Kraus operators of unequal shape".into()));
        }
        Ok(Self {
            dim_in: di,
            dim_out: dout,
            kraus_ops,
        })
    }

    pub fn apply(&self, rho: &CMatrix) -> CMatrix {
        self.kraus_ops
            .iter()
            .fold(zeros(self.dim_out, self.dim_out), |acc, k| {
                acc + k * rho * k.adjoint()
            })
    }

    pub fn to_choi(&self) -> Choi {
        Choi::from_map(self.dim_in, self.dim_out, |x| self.apply(x))
    }
}

/// Kraus operators from the spectral decomposition of a CP Choi operator.
/// Eigenvalues below 1e-10 are dropped.
pub fn choi_to_kraus(j: &Choi) -> Result<KrausChannel> {
    let (vals, vecs) = matcore::eigh(&j.matrix);
    if vals.first().copied().unwrap_or(0.0) < -1e-9 {
        return Err(Error::NotCptp("Choi operator is not positive".into()));
    }
    let (di, dout) = (j.dim_in, j.dim_out);
    let mut ops = Vec::new();
    for (k, &lam) in vals.iter().enumerate() {
        if lam <= 1e-10 {
            continue;
        }
        let s = lam.sqrt();
        ops.push(CMatrix::from_fn(dout, di, |a, i| {
            vecs[(i * dout + a, k)] * c(s, 0.0)
        }));
    }
    if ops.is_empty() {
        ops.push(zeros(dout, di));
    }
    KrausChannel::new_unchecked(ops)
}

pub fn kraus_to_choi(k: &KrausChannel) -> Choi {
    k.to_choi()
}

/// An operator on a labeled list of subsystems.
#[derive(Debug, Clone)]
pub struct Labeled {
    pub matrix: CMatrix,
    pub systems: Vec<(String, usize)>,
}

impl Labeled {
    pub fn new(matrix: CMatrix, systems: &[(&str, usize)]) -> Result<Self> {
        let systems: Vec<(String, usize)> =
            systems.iter().map(|(s, d)| (s.to_string(), *d)).collect();
        for (k, (name, _)) in systems.iter().enumerate() {
            if systems[..k].iter().any(|(n, _)| n == name) {
                return Err(Error::Invalid(format!(
                    "duplicate subsystem label `{}`",
                    name
                )));
            }
        }
        let total: usize = systems.iter().map(|s| s.1).product();
        if matrix.shape() != (total, total) {
            return Err(Error::Dimension(format!(
                "matrix {:?} for subsystems {:?}",
                matrix.shape(),
                systems
            )));
        }
        Ok(Self { matrix, systems })
    }

    fn dims(&self) -> Vec<usize> {
        self.systems.iter().map(|s| s.1).collect()
    }

    fn position(&self, label: &str) -> Option<usize> {
        self.systems.iter().position(|(n, _)| n == label)
    }

    /// Reorders to the given label order.
    pub fn reordered(&self, labels: &[&str]) -> Result<Self> {
        if labels.len() != self.systems.len() {
            return Err(Error::Dimension(format!(
                "reorder to {:?} from {:?}",
                labels, self.systems
            )));
        }
        let perm = labels
            .iter()
            .map(|l| {
                self.position(l)
                    .ok_or_else(|| Error::Invalid(format!("unknown subsystem label `{}`", l)))
            })
            .collect::<Result<Vec<_>>>()?;
        if self.systems.is_empty() {
            return Ok(self.clone());
        }
        let m = matcore::permute_subsystems(&self.matrix, &SystemDims::new(&self.dims())?, &perm)?;
        Ok(Self {
            matrix: m,
            systems: perm.iter().map(|&p| self.systems[p].clone()).collect(),
        })
    }
}

/// Link product `tr_B[(A^{T_B} ⊗ I)(I ⊗ B)]` contracting every label shared
/// by both operands. The result carries A's private systems followed by B's.
pub fn link_product(a: &Labeled, b: &Labeled) -> Result<Labeled> {
    let shared: Vec<(String, usize)> = a
        .systems
        .iter()
        .filter(|(n, _)| b.position(n).is_some())
        .cloned()
        .collect();
    for (name, d) in &shared {
        let db = b.systems[b.position(name).expect("shared")].1;
        if *d != db {
            return Err(Error::Dimension(format!(
                "shared subsystem `{}` has dimension {} vs {}",
                name, d, db
            )));
        }
    }
    let is_shared = |n: &str| shared.iter().any(|(s, _)| s == n);
    let a_only: Vec<(String, usize)> = a
        .systems
        .iter()
        .filter(|(n, _)| !is_shared(n))
        .cloned()
        .collect();
    let b_only: Vec<(String, usize)> = b
        .systems
        .iter()
        .filter(|(n, _)| !is_shared(n))
        .cloned()
        .collect();

    let names = |v: &[(String, usize)]| v.iter().map(|(n, _)| n.clone()).collect::<Vec<_>>();
    let a_order: Vec<String> = names(&a_only).into_iter().chain(names(&shared)).collect();
    let b_order: Vec<String> = names(&shared).into_iter().chain(names(&b_only)).collect();
    let a_p = a.reordered(&a_order.iter().map(|s| s.as_str()).collect::<Vec<_>>())?;
    let b_p = b.reordered(&b_order.iter().map(|s| s.as_str()).collect::<Vec<_>>())?;

    let da: usize = a_only.iter().map(|s| s.1).product();
    let ds: usize = shared.iter().map(|s| s.1).product();
    let db: usize = b_only.iter().map(|s| s.1).product();
    let (am, bm) = (&a_p.matrix, &b_p.matrix);
    let n = da * db;
    let mut out = zeros(n, n);
    for al in 0..da {
        for al2 in 0..da {
            for be in 0..ds {
                for be2 in 0..ds {
                    let av = am[(al * ds + be2, al2 * ds + be)];
                    if av == ZERO {
                        continue;
                    }
                    for ga in 0..db {
                        for ga2 in 0..db {
                            out[(al * db + ga, al2 * db + ga2)] +=
                                av * bm[(be2 * db + ga, be * db + ga2)];
                        }
                    }
                }
            }
        }
    }
    let mut systems = a_only;
    systems.extend(b_only);
    Ok(Labeled {
        matrix: out,
        systems,
    })
}

/// Choi operator of `second ∘ first`.
pub fn compose_serial(first: &Choi, second: &Choi) -> Result<Choi> {
    if first.dim_out != second.dim_in {
        return Err(Error::Dimension(format!(
            "cannot compose {}→{} with {}→{}",
            first.dim_in, first.dim_out, second.dim_in, second.dim_out
        )));
    }
    let a = Labeled::new(
        first.matrix.clone(),
        &[("in", first.dim_in), ("mid", first.dim_out)],
    )?;
    let b = Labeled::new(
        second.matrix.clone(),
        &[("mid", second.dim_in), ("out", second.dim_out)],
    )?;
    Choi::new(first.dim_in, second.dim_out, link_product(&a, &b)?.matrix)
}

/// Choi operator of `A ⊗ B` with input factors first: (A_in, B_in, A_out, B_out).
pub fn tensor(a: &Choi, b: &Choi) -> Choi {
    let m = kron(&a.matrix, &b.matrix);
    let dims = SystemDims::new(&[a.dim_in, a.dim_out, b.dim_in, b.dim_out]).expect("positive");
    let m = matcore::permute_subsystems(&m, &dims, &[0, 2, 1, 3]).expect("valid permutation");
    Choi {
        dim_in: a.dim_in * b.dim_in,
        dim_out: a.dim_out * b.dim_out,
        matrix: m,
    }
}

/// A map from system ⊗ program to an output system, in Choi form with
/// subsystem order (S, P, S').
#[derive(Debug, Clone)]
pub struct ProcessorMap {
    pub choi: Choi,
    pub dim_s: usize,
    pub dim_p: usize,
    pub dim_out: usize,
}

impl ProcessorMap {
    /// Requires a Hermitian-preserving, trace-preserving map.
    pub fn new(choi: Choi, dim_s: usize, dim_p: usize) -> Result<Self> {
        let p = Self::new_unchecked(choi, dim_s, dim_p)?;
        if !is_hptp(&p.choi, 1e-9) {
            return Err(Error::NotHptp("processor is not HPTP".into()));
        }
        Ok(p)
    }

    /// Completely positive, trace-nonincreasing processors (heralded branches).
    pub fn new_trace_nonincreasing(choi: Choi, dim_s: usize, dim_p: usize) -> Result<Self> {
        let p = Self::new_unchecked(choi, dim_s, dim_p)?;
        if !is_cptn(&p.choi, 1e-9) {
            return Err(Error::NotCptp(
                "processor is not CP trace-nonincreasing".into(),
            ));
        }
        Ok(p)
    }

    fn new_unchecked(choi: Choi, dim_s: usize, dim_p: usize) -> Result<Self> {
        if choi.dim_in != dim_s * dim_p {
            return Err(Error::Dimension(format!(
                "processor input {} is not {}·{}",
                choi.dim_in, dim_s, dim_p
            )));
        }
        let dim_out = choi.dim_out;
        Ok(Self {
            choi,
            dim_s,
            dim_p,
            dim_out,
        })
    }

    pub fn from_map(
        dim_s: usize,
        dim_p: usize,
        dim_out: usize,
        map: impl Fn(&CMatrix) -> CMatrix,
    ) -> Choi {
        Choi::from_map(dim_s * dim_p, dim_out, map)
    }

    pub fn is_cptp(&self, tol: f64) -> bool {
        is_cptp(&self.choi, tol)
    }

    pub fn is_hptp(&self, tol: f64) -> bool {
        is_hptp(&self.choi, tol)
    }

    /// Output on a joint system–program input.
    pub fn apply(&self, joint: &CMatrix) -> Result<CMatrix> {
        apply(&self.choi, joint)
    }

    pub fn apply_product(&self, rho: &CMatrix, program: &CMatrix) -> Result<CMatrix> {
        apply(&self.choi, &kron(rho, program))
    }

    /// Choi operator of `ρ ↦ P(ρ ⊗ π)`, i.e. `tr_P[J (I ⊗ πᵀ ⊗ I)]`.
    pub fn reduce(&self, program: &CMatrix) -> Result<Choi> {
        let (ds, dp, dout) = (self.dim_s, self.dim_p, self.dim_out);
        if program.shape() != (dp, dp) {
            return Err(Error::Dimension(format!(
                "program of shape {:?} for program dimension {}",
                program.shape(),
                dp
            )));
        }
        let j = &self.choi.matrix;
        let idx = |s: usize, p: usize, o: usize| (s * dp + p) * dout + o;
        let mut out = zeros(ds * dout, ds * dout);
        for s in 0..ds {
            for t in 0..ds {
                for p in 0..dp {
                    for q in 0..dp {
                        let w = program[(p, q)];
                        if w == ZERO {
                            continue;
                        }
                        for a in 0..dout {
                            for b in 0..dout {
                                out[(s * dout + a, t * dout + b)] +=
                                    w * j[(idx(s, p, a), idx(t, q, b))];
                            }
                        }
                    }
                }
            }
        }
        Choi::new(ds, dout, out)
    }

    /// `tr_P`-structured linear map of `reduce`, exposed for SDP assembly:
    /// returns `tr_P[X (I ⊗ πᵀ ⊗ I)]` for an arbitrary matrix `X` on (S, P, S').
    pub fn reduce_matrix(
        x: &CMatrix,
        ds: usize,
        dp: usize,
        dout: usize,
        program: &CMatrix,
    ) -> CMatrix {
        let p = ProcessorMap {
            choi: Choi {
                dim_in: ds * dp,
                dim_out: dout,
                matrix: x.clone(),
            },
            dim_s: ds,
            dim_p: dp,
            dim_out: dout,
        };
        p.reduce(program).expect("consistent dims").matrix
    }
}

/// Measures the program in the computational basis and applies channel `j`
/// on outcome `j`.
pub fn measure_and_prepare_processor(channels: &[Choi]) -> Result<ProcessorMap> {
    let first = channels
        .first()
        .ok_or_else(|| Error::Invalid("empty channel list".into()))?;
    let (ds, dout) = (first.dim_in, first.dim_out);
    for (k, ch) in channels.iter().enumerate() {
        if (ch.dim_in, ch.dim_out) != (ds, dout) {
            return Err(Error::Dimension(format!(
                "channel {} has different dimensions",
                k
            )));
        }
        if !is_cptp(ch, 1e-9) {
            return Err(Error::NotCptp(format!("channel {} is not CPTP", k)));
        }
    }
    let dp = channels.len();
    let mut j = zeros(ds * dp * dout, ds * dp * dout);
    for (p, ch) in channels.iter().enumerate() {
        for s in 0..ds {
            for t in 0..ds {
                for a in 0..dout {
                    for b in 0..dout {
                        j[((s * dp + p) * dout + a, (t * dp + p) * dout + b)] =
                            ch.matrix[(s * dout + a, t * dout + b)];
                    }
                }
            }
        }
    }
    ProcessorMap::new(Choi::new(ds * dp, dout, j)?, ds, dp)
}

/// CPTP extension of a CP trace-nonincreasing map with a classical flag:
/// `X ↦ N(X) ⊗ |0><0| + tr(D X) ω ⊗ |1><1|` where `D = I - (tr_out J)ᵀ` and
/// `ω` is the maximally mixed output state.
pub fn heralded_extension(j: &Choi) -> Choi {
    let (di, dout) = (j.dim_in, j.dim_out);
    let defect = (identity(di) - j.trace_out()).transpose();
    let omega = identity(dout) * c(1.0 / dout as f64, 0.0);
    let f0 = matcore::ketbra(2, 0, 0);
    let f1 = matcore::ketbra(2, 1, 1);
    Choi::from_map(di, dout * 2, |x| {
        let n = apply(j, x).expect("dims");
        let lost = (&defect * x).trace();
        kron(&n, &f0) + kron(&omega, &f1) * lost
    })
}
