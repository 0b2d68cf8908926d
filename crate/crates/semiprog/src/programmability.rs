//! CPTP programmability: Q-matrices for Pauli Lindbladians, polytope
//! membership, the `α(E − I)` structural test, covariance and the port-based
//! obstruction.

use nalgebra::{DMatrix, DVector, SVD};

use crate::channels::{measure_and_prepare_processor, ProcessorMap};
use crate::dynamics::{build_liouville, is_cptp, steady_states, unitary_choi, Choi, Lindbladian};
use crate::error::{Error, Result};
use crate::matcore::{self, c, is_unitary, kron, CMatrix};
use crate::protocols::ProgramStateFamily;

/// Column-generator rate matrix: nonnegative off-diagonals, zero column sums.
#[derive(Debug, Clone, PartialEq)]
pub struct QMatrix {
    pub q: DMatrix<f64>,
}

impl QMatrix {
    pub fn new(q: DMatrix<f64>) -> Result<Self> {
        let m = Self { q };
        if !m.is_valid(1e-10) {
            return Err(Error::Invalid("not a Q-matrix".into()));
        }
        Ok(m)
    }

    pub fn size(&self) -> usize {
        self.q.nrows()
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        let k = self.q.nrows();
        if self.q.ncols() != k {
            return false;
        }
        let scale = 1.0 + self.q.amax();
        for j in 0..k {
            let mut sum = 0.0;
            for i in 0..k {
                let v = self.q[(i, j)];
                if !v.is_finite() || (i != j && v < -tol) {
                    return false;
                }
                sum += v;
            }
            if sum.abs() > tol * scale {
                return false;
            }
        }
        true
    }
}

/// Matrix of the `n`-qubit Pauli string with label index `k`. Labels are
/// lexicographic over {I, X, Y, Z}ⁿ with the first qubit most significant.
pub fn pauli_string(n: usize, k: usize) -> CMatrix {
    let mut out = matcore::identity(1);
    for q in 0..n {
        let digit = (k / 4usize.pow((n - 1 - q) as u32)) % 4;
        out = kron(&out, &matcore::pauli(digit));
    }
    out
}

pub fn pauli_label(n: usize, k: usize) -> String {
    (0..n)
        .map(|q| ['I', 'X', 'Y', 'Z'][(k / 4usize.pow((n - 1 - q) as u32)) % 4])
        .collect()
}

/// Label of `P_j P_k` up to phase.
fn pauli_product_label(n: usize, j: usize, k: usize) -> usize {
    let mut out = 0;
    for q in 0..n {
        let p = 4usize.pow((n - 1 - q) as u32);
        let (a, b) = ((j / p) % 4, (k / p) % 4);
        let r = if a == 0 {
            b
        } else if b == 0 {
            a
        } else if a == b {
            0
        } else {
            6 - a - b
        };
        out += r * p;
    }
    out
}

fn qubit_count(d: usize) -> Result<usize> {
    if d == 0 || !d.is_power_of_two() {
        return Err(Error::Unsupported(format!(
            "dimension {} is not a power of two",
            d
        )));
    }
    Ok(d.trailing_zeros() as usize)
}

/// Q-matrix of a Pauli Lindbladian over the 4ⁿ Pauli conjugation channels.
pub fn pauli_qmatrix(l: &Lindbladian) -> Result<QMatrix> {
    let d = l.dim();
    let n = qubit_count(d)?;
    let h = l.hamiltonian();
    let traceless = h - matcore::identity(d) * (h.trace() / c(d as f64, 0.0));
    if matcore::max_abs(&traceless) > 1e-12 {
        return Err(Error::NonzeroHamiltonian);
    }
    let k = 4usize.pow(n as u32);
    let strings: Vec<CMatrix> = (0..k).map(|j| pauli_string(n, j)).collect();
    let mut rates = vec![0.0; k];
    for (idx, jump) in l.jumps().iter().enumerate() {
        let coeffs: Vec<matcore::C64> = strings
            .iter()
            .map(|p| (p * &jump.op).trace() / c(d as f64, 0.0))
            .collect();
        let norm = coeffs.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let support: Vec<usize> = (0..k)
            .filter(|&j| coeffs[j].norm() > 1e-12 * norm.max(1.0))
            .collect();
        if support.len() != 1 {
            return Err(Error::NonPauliJump(idx));
        }
        let j = support[0];
        rates[j] += jump.rate * coeffs[j].norm_sqr();
    }
    let mut q = DMatrix::<f64>::zeros(k, k);
    for col in 0..k {
        for (j, &g) in rates.iter().enumerate().skip(1) {
            if g == 0.0 {
                continue;
            }
            let row = pauli_product_label(n, j, col);
            q[(row, col)] += g;
            q[(col, col)] -= g;
        }
    }
    QMatrix::new(q)
}

/// `p(t) = e^{Qt} p0`.
pub fn classical_propagate(q: &QMatrix, p0: &[f64], t: f64) -> Result<Vec<f64>> {
    if p0.len() != q.size() {
        return Err(Error::Dimension(format!(
            "probability vector of length {} for a {}-level Q-matrix",
            p0.len(),
            q.size()
        )));
    }
    if p0.iter().any(|&x| !(x >= -1e-12)) || (p0.iter().sum::<f64>() - 1.0).abs() > 1e-10 {
        return Err(Error::Invalid(
            "initial vector is not a probability vector".into(),
        ));
    }
    if !(t >= 0.0) {
        return Err(Error::Invalid(format!(
            "time must be nonnegative, got {}",
            t
        )));
    }
    let e = (&q.q * t).exp();
    Ok((e * DVector::from_column_slice(p0))
        .iter()
        .copied()
        .collect())
}

/// Pauli conjugation channels in label order.
pub fn pauli_channels(n: usize) -> Vec<Choi> {
    (0..4usize.pow(n as u32))
        .map(|k| unitary_choi(&pauli_string(n, k)))
        .collect()
}

/// Measure-and-prepare protocol over the Pauli conjugations with program
/// `π_t = Σ p_j(t) |j><j|`, `p(t) = e^{Qt} e_I`.
pub fn pauli_program_protocol(l: &Lindbladian) -> Result<(ProcessorMap, ProgramStateFamily)> {
    let q = pauli_qmatrix(l)?;
    let n = qubit_count(l.dim())?;
    let processor = measure_and_prepare_processor(&pauli_channels(n))?;
    let family = diagonal_family(q, "pauli-mixture")?;
    Ok((processor, family))
}

fn diagonal_family(q: QMatrix, label: &str) -> Result<ProgramStateFamily> {
    let k = q.size();
    let mut p0 = vec![0.0; k];
    p0[0] = 1.0;
    Ok(ProgramStateFamily::new(k, label, move |t| {
        let p = classical_propagate(&q, &p0, t).expect("validated Q-matrix");
        CMatrix::from_diagonal(&matcore::CVector::from_iterator(
            k,
            p.iter().map(|&x| c(x, 0.0)),
        ))
    }))
}

fn choi_to_real(j: &Choi) -> Vec<f64> {
    j.matrix
        .iter()
        .map(|z| z.re)
        .chain(j.matrix.iter().map(|z| z.im))
        .collect()
}

fn channel_matrix(channels: &[Choi]) -> Result<DMatrix<f64>> {
    let first = channels
        .first()
        .ok_or_else(|| Error::Invalid("empty channel list".into()))?;
    for ch in channels {
        if (ch.dim_in, ch.dim_out) != (first.dim_in, first.dim_out) {
            return Err(Error::Dimension("channels of different dimensions".into()));
        }
    }
    let cols: Vec<Vec<f64>> = channels.iter().map(choi_to_real).collect();
    let rows = cols[0].len();
    let m = DMatrix::from_fn(rows, cols.len(), |i, j| cols[j][i]);
    let s = SVD::new(m.clone(), false, false).singular_values;
    let smax = s.max();
    let rank = s.iter().filter(|&&x| x > 1e-10 * smax.max(1e-300)).count();
    if rank < channels.len() {
        return Err(Error::DependentChannels {
            rank,
            count: channels.len(),
        });
    }
    Ok(m)
}

fn least_squares(m: &DMatrix<f64>, target: &[f64]) -> (Vec<f64>, f64) {
    let b = DVector::from_column_slice(target);
    let svd = SVD::new(m.clone(), true, true);
    let x = svd.solve(&b, 1e-13).expect("U and V computed");
    let res = (m * &x - &b).norm();
    (x.iter().copied().collect(), res)
}

/// Finds a Q-matrix with `L ∘ E_i = Σ_j q_ji E_j`, or `None` when the
/// expansion fails or violates the sign constraints.
pub fn polytope_membership_qmatrix(l: &Lindbladian, channels: &[Choi]) -> Result<Option<QMatrix>> {
    let m = channel_matrix(channels)?;
    let d = l.dim();
    if channels[0].dim_in != d || channels[0].dim_out != d {
        return Err(Error::Dimension(
            "channels do not act on the generator's space".into(),
        ));
    }
    let liou = build_liouville(l).matrix;
    let k = channels.len();
    let mut q = DMatrix::<f64>::zeros(k, k);
    for (i, ch) in channels.iter().enumerate() {
        let composed = Choi::from_liouville(&(&liou * ch.to_liouville()), d, d)?;
        let target = choi_to_real(&composed);
        let scale = target.iter().map(|x| x * x).sum::<f64>().sqrt().max(1.0);
        let (x, res) = least_squares(&m, &target);
        if res > 1e-9 * scale {
            return Ok(None);
        }
        for (j, v) in x.into_iter().enumerate() {
            q[(j, i)] = v;
        }
    }
    for i in 0..k {
        for j in 0..k {
            if i != j && q[(i, j)] < 0.0 && q[(i, j)] >= -1e-10 {
                q[(i, j)] = 0.0;
            }
        }
    }
    let out = QMatrix { q };
    if !out.is_valid(1e-9) {
        return Ok(None);
    }
    Ok(Some(out))
}

/// Convex weights expressing the identity channel over `channels`, if any.
pub fn identity_weights(channels: &[Choi]) -> Result<Option<Vec<f64>>> {
    let m = channel_matrix(channels)?;
    let target = choi_to_real(&Choi::identity(channels[0].dim_in));
    let (x, res) = least_squares(&m, &target);
    let ok = res <= 1e-9 * (channels[0].dim_in as f64)
        && x.iter().all(|&w| w >= -1e-10)
        && (x.iter().sum::<f64>() - 1.0).abs() <= 1e-9;
    Ok(ok.then_some(x))
}

/// `L(ρ) = α (E(ρ) − ρ)` with `E` CPTP.
#[derive(Debug, Clone)]
pub struct CptpForm {
    pub alpha: f64,
    pub channel_choi: Choi,
}

impl CptpForm {
    /// Largest deviation of `α(E(ρ) − ρ)` from `L(ρ)` on the given states.
    pub fn deviation(&self, l: &Lindbladian, states: &[CMatrix]) -> f64 {
        states
            .iter()
            .map(|rho| {
                let e = crate::channels::apply(&self.channel_choi, rho).expect("dims");
                matcore::max_abs(&((e - rho) * c(self.alpha, 0.0) - l.apply(rho)))
            })
            .fold(0.0, f64::max)
    }
}

/// Searches the minimal `α > 0` with `J(I) + J(L)/α ⪰ −1e-9`. Returns `None`
/// when no `α` up to `10³·‖L‖` works.
pub fn cptp_form_check(l: &Lindbladian) -> Option<CptpForm> {
    let d = l.dim();
    let liou = build_liouville(l).matrix;
    let norm = matcore::operator_norm(&liou);
    let j_id = Choi::identity(d).matrix;
    if norm < 1e-14 {
        return Some(CptpForm {
            alpha: 0.0,
            channel_choi: Choi::identity(d),
        });
    }
    let j_l = Choi::from_liouville(&liou, d, d).expect("square").matrix;
    let feasible =
        |alpha: f64| matcore::min_eigenvalue(&(&j_id + &j_l * c(1.0 / alpha, 0.0))) >= -1e-9;
    let alpha_max = 1e3 * norm;
    if !feasible(alpha_max) {
        return None;
    }
    let (mut lo, mut hi) = (0.0, alpha_max);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if feasible(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let channel = Choi::new(d, d, &j_id + &j_l * c(1.0 / hi, 0.0)).expect("dims");
    if !is_cptp(&channel, 1e-9) {
        return None;
    }
    Some(CptpForm {
        alpha: hi,
        channel_choi: channel,
    })
}

/// Constructive direction: if `L ∘ E` stays in span{I, E}, the form yields a
/// measure-and-prepare protocol with a two-level program.
pub fn cptp_form_protocol(
    l: &Lindbladian,
    form: &CptpForm,
) -> Result<Option<(ProcessorMap, ProgramStateFamily)>> {
    let d = l.dim();
    if form.alpha == 0.0 {
        let processor = measure_and_prepare_processor(&[Choi::identity(d)])?;
        return Ok(Some((
            processor,
            ProgramStateFamily::constant(matcore::identity(1), "trivial"),
        )));
    }
    let channels = vec![Choi::identity(d), form.channel_choi.clone()];
    let q = match polytope_membership_qmatrix(l, &channels)? {
        Some(q) => q,
        None => return Ok(None),
    };
    let processor = measure_and_prepare_processor(&channels)?;
    Ok(Some((processor, diagonal_family(q, "two-level")?)))
}

/// Checks `‖[L, U ⊗ Ū]‖_F ≤ tol` for every supplied unitary.
pub fn covariance_check(l: &Lindbladian, unitaries: &[CMatrix], tol: f64) -> Result<bool> {
    let liou = build_liouville(l).matrix;
    for (k, u) in unitaries.iter().enumerate() {
        if u.shape() != (l.dim(), l.dim()) {
            return Err(Error::Dimension(format!(
                "unitary {} has shape {:?}",
                k,
                u.shape()
            )));
        }
        if !is_unitary(u, 1e-10) {
            return Err(Error::Invalid(format!("matrix {} is not unitary", k)));
        }
        let sup = kron(u, &u.map(|z| z.conj()));
        if matcore::commutator(&liou, &sup).norm() > tol {
            return Ok(false);
        }
    }
    Ok(true)
}

#[derive(Debug, Clone, PartialEq)]
pub enum PortVerdict {
    /// Unique steady state with an eigenvalue below `1/d²`.
    Obstructed {
        min_eigenvalue: f64,
    },
    Inconclusive,
}

impl PortVerdict {
    pub fn is_obstructed(&self) -> bool {
        matches!(self, PortVerdict::Obstructed { .. })
    }
}

pub fn port_obstruction_check(l: &Lindbladian, tol: f64) -> PortVerdict {
    let d = l.dim() as f64;
    let ss = steady_states(l, 1e-8);
    if !ss.is_unique() {
        return PortVerdict::Inconclusive;
    }
    let lmin = matcore::min_eigenvalue(&ss.states[0]);
    if lmin < 1.0 / (d * d) - tol {
        PortVerdict::Obstructed {
            min_eigenvalue: lmin,
        }
    } else {
        PortVerdict::Inconclusive
    }
}
