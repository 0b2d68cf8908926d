#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semiprog::channels::KrausChannel;
use semiprog::dynamics::{Choi, Lindbladian};
use semiprog::matcore::{self, c, identity, CMatrix};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> CMatrix {
    CMatrix::from_fn(rows, cols, |_, _| {
        c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
    })
}

pub fn random_hermitian(rng: &mut impl Rng, d: usize) -> CMatrix {
    matcore::hermitize(&random_matrix(rng, d, d))
}

pub fn random_state(rng: &mut impl Rng, d: usize) -> CMatrix {
    let g = random_matrix(rng, d, d);
    let rho = &g * g.adjoint();
    let tr = matcore::trace(&rho);
    rho / tr
}

pub fn random_unitary(rng: &mut impl Rng, d: usize) -> CMatrix {
    random_matrix(rng, d, d).qr().q()
}

/// Kraus operators `A_k S^{-1/2}` with `S = Σ A_k†A_k`.
pub fn random_channel(rng: &mut impl Rng, din: usize, dout: usize, rank: usize) -> KrausChannel {
    let ops: Vec<CMatrix> = (0..rank).map(|_| random_matrix(rng, dout, din)).collect();
    let s = ops
        .iter()
        .fold(CMatrix::zeros(din, din), |acc, a| acc + a.adjoint() * a);
    let inv_sqrt = matcore::hermitian_fn(&s, |x| 1.0 / x.sqrt());
    KrausChannel::new(ops.iter().map(|a| a * &inv_sqrt).collect()).unwrap()
}

pub fn random_choi(rng: &mut impl Rng, din: usize, dout: usize) -> Choi {
    random_channel(rng, din, dout, 2).to_choi()
}

pub fn random_lindbladian(rng: &mut impl Rng, d: usize, n_jumps: usize) -> Lindbladian {
    let h = random_hermitian(rng, d);
    let jumps = (0..n_jumps)
        .map(|_| (random_matrix(rng, d, d), rng.gen_range(0.05..1.0)))
        .collect();
    Lindbladian::new(h, jumps).unwrap()
}

pub fn diag(entries: &[f64]) -> CMatrix {
    let mut m = CMatrix::zeros(entries.len(), entries.len());
    for (i, &x) in entries.iter().enumerate() {
        m[(i, i)] = c(x, 0.0);
    }
    m
}

pub fn dist(a: &CMatrix, b: &CMatrix) -> f64 {
    matcore::frobenius(&(a - b))
}

pub fn scaled_identity(d: usize, s: f64) -> CMatrix {
    identity(d) * c(s, 0.0)
}
