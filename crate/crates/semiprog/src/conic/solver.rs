//! Operator-splitting solver for Hermitian semidefinite programs
//!
//! ```text
//! minimize    cᵀx
//! subject to  A x = b,  x ∈ K
//! ```
//!
//! where `x` stacks real coordinates of Hermitian blocks (in an orthonormal
//! basis, so Euclidean and Frobenius inner products agree), nonnegative
//! scalars and free scalars. ADMM alternates an exact projection onto the
//! affine set with a projection onto `K`.

use crate::error::{Error, Result};
use crate::matcore::{self, c, CMatrix};

const SQRT2: f64 = std::f64::consts::SQRT_2;

/// Real coordinates of a Hermitian matrix: diagonal entries, then for each
/// `i < j` the pair `(√2 Re H_ij, √2 Im H_ij)`.
pub fn herm_to_coords(h: &CMatrix) -> Vec<f64> {
    let n = h.nrows();
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        out.push(h[(i, i)].re);
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let z = (h[(i, j)] + h[(j, i)].conj()) * 0.5;
            out.push(SQRT2 * z.re);
            out.push(SQRT2 * z.im);
        }
    }
    out
}

pub fn coords_to_herm(x: &[f64], n: usize) -> CMatrix {
    let mut h = CMatrix::zeros(n, n);
    for i in 0..n {
        h[(i, i)] = c(x[i], 0.0);
    }
    let mut k = n;
    for i in 0..n {
        for j in (i + 1)..n {
            let z = c(x[k] / SQRT2, x[k + 1] / SQRT2);
            h[(i, j)] = z;
            h[(j, i)] = z.conj();
            k += 2;
        }
    }
    h
}

/// Basis element `k` of the Hermitian coordinate system.
fn herm_basis(n: usize, k: usize) -> CMatrix {
    let mut x = vec![0.0; n * n];
    x[k] = 1.0;
    coords_to_herm(&x, n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cone {
    /// Hermitian PSD block of the given size.
    Psd(usize),
    Nonneg,
    Free,
}

impl Cone {
    fn len(&self) -> usize {
        match self {
            Cone::Psd(n) => n * n,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VarId(usize);

#[derive(Debug, Clone)]
struct Block {
    name: String,
    cone: Cone,
    offset: usize,
}

/// A term of a matrix-valued equality constraint.
pub enum Term<'a> {
    /// `map(X)` for a Hermitian block `X`; the map must preserve Hermiticity.
    Map(VarId, Box<dyn Fn(&CMatrix) -> CMatrix + 'a>),
    /// `s · M` for a scalar variable `s`.
    Scalar(VarId, CMatrix),
}

impl<'a> Term<'a> {
    pub fn map(var: VarId, f: impl Fn(&CMatrix) -> CMatrix + 'a) -> Self {
        Term::Map(var, Box::new(f))
    }

    /// `coef · X`.
    pub fn scaled(var: VarId, coef: f64) -> Self {
        Term::Map(var, Box::new(move |x: &CMatrix| x * c(coef, 0.0)))
    }
}

/// Hermitian-cone program with affine equality constraints.
#[derive(Debug, Clone, Default)]
pub struct SdpProblem {
    blocks: Vec<Block>,
    n: usize,
    objective: Vec<f64>,
    rows: Vec<Vec<(usize, f64)>>,
    rhs: Vec<f64>,
}

impl SdpProblem {
    pub fn new() -> Self {
        Self::default()
    }

    fn add_block(&mut self, name: &str, cone: Cone) -> VarId {
        let id = VarId(self.blocks.len());
        self.blocks.push(Block {
            name: name.to_string(),
            cone,
            offset: self.n,
        });
        self.n += cone.len();
        self.objective.resize(self.n, 0.0);
        id
    }

    pub fn add_psd(&mut self, name: &str, n: usize) -> VarId {
        self.add_block(name, Cone::Psd(n))
    }

    pub fn add_nonneg(&mut self, name: &str) -> VarId {
        self.add_block(name, Cone::Nonneg)
    }

    pub fn add_free(&mut self, name: &str) -> VarId {
        self.add_block(name, Cone::Free)
    }

    pub fn num_variables(&self) -> usize {
        self.n
    }

    pub fn num_constraints(&self) -> usize {
        self.rows.len()
    }

    pub fn name(&self, var: VarId) -> &str {
        &self.blocks[var.0].name
    }

    fn block_dim(&self, var: VarId) -> Result<usize> {
        match self.blocks[var.0].cone {
            Cone::Psd(n) => Ok(n),
            _ => Err(Error::Invalid(format!(
                "`{}` is not a matrix block",
                self.blocks[var.0].name
            ))),
        }
    }

    /// Adds `⟨C, X⟩` to the objective.
    pub fn objective_matrix(&mut self, var: VarId, cmat: &CMatrix) -> Result<()> {
        let n = self.block_dim(var)?;
        if cmat.shape() != (n, n) || !matcore::is_hermitian(cmat, 1e-12) {
            return Err(Error::Dimension(
                "objective matrix must be Hermitian of block size".into(),
            ));
        }
        let off = self.blocks[var.0].offset;
        for (k, v) in herm_to_coords(cmat).into_iter().enumerate() {
            self.objective[off + k] += v;
        }
        Ok(())
    }

    /// Adds `coef · s` to the objective.
    pub fn objective_scalar(&mut self, var: VarId, coef: f64) -> Result<()> {
        if matches!(self.blocks[var.0].cone, Cone::Psd(_)) {
            return Err(Error::Invalid("objective_scalar on a matrix block".into()));
        }
        let off = self.blocks[var.0].offset;
        self.objective[off] += coef;
        Ok(())
    }

    /// Adds `Σ terms = rhs` for a Hermitian right-hand side.
    pub fn add_equality(&mut self, terms: Vec<Term<'_>>, rhs: &CMatrix) -> Result<()> {
        let m = rhs.nrows();
        if !matcore::is_hermitian(rhs, 1e-10) {
            return Err(Error::Invalid(
                "constraint right-hand side is not Hermitian".into(),
            ));
        }
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); m * m];
        for term in terms {
            match term {
                Term::Map(var, f) => {
                    let n = self.block_dim(var)?;
                    let off = self.blocks[var.0].offset;
                    for k in 0..n * n {
                        let img = f(&herm_basis(n, k));
                        if img.shape() != (m, m) {
                            return Err(Error::Dimension(format!(
                                "term on `{}` maps to {:?}, constraint is {}x{}",
                                self.blocks[var.0].name,
                                img.shape(),
                                m,
                                m
                            )));
                        }
                        if !matcore::is_hermitian(&img, 1e-9 * (1.0 + matcore::max_abs(&img))) {
                            return Err(Error::Invalid(
                                "constraint map is not Hermitian-preserving".into(),
                            ));
                        }
                        for (r, v) in herm_to_coords(&img).into_iter().enumerate() {
                            if v != 0.0 {
                                rows[r].push((off + k, v));
                            }
                        }
                    }
                }
                Term::Scalar(var, mat) => {
                    if matches!(self.blocks[var.0].cone, Cone::Psd(_)) {
                        return Err(Error::Invalid("scalar term on a matrix block".into()));
                    }
                    if mat.shape() != (m, m) || !matcore::is_hermitian(&mat, 1e-12) {
                        return Err(Error::Dimension(
                            "scalar coefficient must be Hermitian of constraint size".into(),
                        ));
                    }
                    let off = self.blocks[var.0].offset;
                    for (r, v) in herm_to_coords(&mat).into_iter().enumerate() {
                        if v != 0.0 {
                            rows[r].push((off, v));
                        }
                    }
                }
            }
        }
        for (r, v) in herm_to_coords(rhs).into_iter().enumerate() {
            let mut row = std::mem::take(&mut rows[r]);
            row.sort_by_key(|e| e.0);
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(row.len());
            for (col, val) in row {
                match merged.last_mut() {
                    Some(last) if last.0 == col => last.1 += val,
                    _ => merged.push((col, val)),
                }
            }
            merged.retain(|e| e.1.abs() > 1e-15);
            self.rows.push(merged);
            self.rhs.push(v);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    pub tol: f64,
    pub max_iter: usize,
    pub rho: f64,
    pub alpha: f64,
    pub check_every: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            max_iter: 200_000,
            rho: 1.0,
            alpha: 1.6,
            check_every: 25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdpStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

impl SdpStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SdpStatus::Optimal => "optimal",
            SdpStatus::Infeasible => "infeasible",
            SdpStatus::MaxIter => "max_iter",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub status: SdpStatus,
    pub objective_value: f64,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
    values: Vec<f64>,
    blocks: Vec<Block>,
}

impl SdpSolution {
    pub fn matrix(&self, var: VarId) -> CMatrix {
        let b = &self.blocks[var.0];
        match b.cone {
            Cone::Psd(n) => coords_to_herm(&self.values[b.offset..b.offset + n * n], n),
            _ => CMatrix::from_element(1, 1, c(self.values[b.offset], 0.0)),
        }
    }

    pub fn scalar(&self, var: VarId) -> f64 {
        self.values[self.blocks[var.0].offset]
    }
}

/// Sparse rows with a factorization of `A_S A_Sᵀ` over a maximal independent
/// row subset `S`.
struct AffineProjector {
    rows: Vec<Vec<(usize, f64)>>,
    b: Vec<f64>,
    n: usize,
    /// independent rows in pivot order
    active: Vec<usize>,
    /// lower-triangular factor of the Gram matrix restricted to `active`
    l: Vec<f64>,
}

impl AffineProjector {
    fn new(rows: Vec<Vec<(usize, f64)>>, b: Vec<f64>, n: usize) -> Self {
        let m = rows.len();
        // Gram matrix through column lists
        let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for (r, row) in rows.iter().enumerate() {
            for &(j, v) in row {
                cols[j].push((r, v));
            }
        }
        let mut g = vec![0.0; m * m];
        for col in &cols {
            for &(r1, v1) in col {
                for &(r2, v2) in col {
                    g[r1 * m + r2] += v1 * v2;
                }
            }
        }
        // pivoted Cholesky; rows with negligible pivots are dependent
        let maxdiag = (0..m).map(|i| g[i * m + i]).fold(0.0, f64::max);
        let thresh = 1e-11 * maxdiag.max(1e-300);
        let mut perm: Vec<usize> = (0..m).collect();
        let mut diag: Vec<f64> = (0..m).map(|i| g[i * m + i]).collect();
        // columns of L stored per pivot: lcols[k][i] for original row i
        let mut lcols: Vec<Vec<f64>> = Vec::new();
        let mut rank = 0;
        while rank < m {
            let (p, &best) = perm[rank..]
                .iter()
                .enumerate()
                .map(|(k, &i)| (k + rank, &diag[i]))
                .max_by(|a, b| a.1.total_cmp(b.1))
                .expect("nonempty");
            if best <= thresh {
                break;
            }
            perm.swap(rank, p);
            let piv = perm[rank];
            let lpp = best.sqrt();
            let mut col = vec![0.0; m];
            col[piv] = lpp;
            for &i in &perm[rank + 1..] {
                let mut s = g[i * m + piv];
                for prev in &lcols {
                    s -= prev[i] * prev[piv];
                }
                col[i] = s / lpp;
                diag[i] -= col[i] * col[i];
            }
            lcols.push(col);
            rank += 1;
        }
        let active: Vec<usize> = perm[..rank].to_vec();
        let mut l = vec![0.0; rank * rank];
        for (k, col) in lcols.iter().enumerate() {
            for (i, &r) in active.iter().enumerate().skip(k) {
                l[i * rank + k] = col[r];
            }
        }
        Self {
            rows,
            b,
            n,
            active,
            l,
        }
    }

    fn apply_a(&self, x: &[f64], which: &[usize]) -> Vec<f64> {
        which
            .iter()
            .map(|&r| self.rows[r].iter().map(|&(j, v)| v * x[j]).sum())
            .collect()
    }

    fn apply_at(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (k, &r) in self.active.iter().enumerate() {
            for &(j, v) in &self.rows[r] {
                out[j] += v * y[k];
            }
        }
        out
    }

    /// Solves `(A_S A_Sᵀ) w = r`.
    fn solve_gram(&self, r: &[f64]) -> Vec<f64> {
        let k = self.active.len();
        let mut w = r.to_vec();
        for i in 0..k {
            let mut s = w[i];
            for (j, wj) in w.iter().enumerate().take(i) {
                s -= self.l[i * k + j] * wj;
            }
            w[i] = s / self.l[i * k + i];
        }
        for i in (0..k).rev() {
            let mut s = w[i];
            for (j, wj) in w.iter().enumerate().skip(i + 1) {
                s -= self.l[j * k + i] * wj;
            }
            w[i] = s / self.l[i * k + i];
        }
        w
    }

    /// Least-squares multipliers `y` with `A_Sᵀ y ≈ v`.
    fn multipliers(&self, v: &[f64]) -> Vec<f64> {
        self.solve_gram(&self.apply_a(v, &self.active))
    }

    /// Euclidean projection onto `{x : A x = b}`.
    fn project(&self, v: &[f64]) -> Vec<f64> {
        let mut r = self.apply_a(v, &self.active);
        for (k, &row) in self.active.iter().enumerate() {
            r[k] -= self.b[row];
        }
        let w = self.solve_gram(&r);
        let corr = self.apply_at(&w);
        v.iter().zip(corr).map(|(a, b)| a - b).collect()
    }

    /// Component of `v` orthogonal to the row space.
    fn null_component(&self, v: &[f64]) -> Vec<f64> {
        let y = self.multipliers(v);
        let corr = self.apply_at(&y);
        v.iter().zip(corr).map(|(a, b)| a - b).collect()
    }

    fn max_violation(&self, x: &[f64]) -> f64 {
        let all: Vec<usize> = (0..self.rows.len()).collect();
        self.apply_a(x, &all)
            .iter()
            .zip(&self.b)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

fn project_cone(blocks: &[Block], x: &mut [f64]) {
    for b in blocks {
        match b.cone {
            Cone::Free => {}
            Cone::Nonneg => {
                if x[b.offset] < 0.0 {
                    x[b.offset] = 0.0;
                }
            }
            Cone::Psd(n) => {
                let seg = &mut x[b.offset..b.offset + n * n];
                let h = coords_to_herm(seg, n);
                let (vals, vecs) = matcore::eigh(&h);
                if vals.first().copied().unwrap_or(0.0) >= 0.0 {
                    continue;
                }
                let mut p = CMatrix::zeros(n, n);
                for (k, &lam) in vals.iter().enumerate() {
                    if lam > 0.0 {
                        let v = vecs.column(k);
                        p += v * v.adjoint() * c(lam, 0.0);
                    }
                }
                seg.copy_from_slice(&herm_to_coords(&p));
            }
        }
    }
}

/// Distance from `x` to the dual cone `K*` (PSD and nonnegative blocks are
/// self-dual, free blocks have dual `{0}`).
fn dual_cone_distance(blocks: &[Block], x: &[f64]) -> f64 {
    let mut p = x.to_vec();
    for b in blocks {
        if b.cone == Cone::Free {
            p[b.offset] = 0.0;
        }
    }
    project_cone(blocks, &mut p);
    x.iter()
        .zip(&p)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves the program; never fails silently on iteration exhaustion.
pub fn solve(problem: &SdpProblem, settings: &SolverSettings) -> Result<SdpSolution> {
    let n = problem.n;
    if n == 0 {
        return Err(Error::Solver("problem has no variables".into()));
    }
    // row normalization
    let mut rows = Vec::with_capacity(problem.rows.len());
    let mut b = Vec::with_capacity(problem.rows.len());
    for (row, &rhs) in problem.rows.iter().zip(&problem.rhs) {
        let nr = row.iter().map(|e| e.1 * e.1).sum::<f64>().sqrt();
        if nr == 0.0 {
            if rhs.abs() > 1e-12 {
                return Ok(infeasible(problem, 0));
            }
            continue;
        }
        rows.push(row.iter().map(|&(j, v)| (j, v / nr)).collect::<Vec<_>>());
        b.push(rhs / nr);
    }
    let proj = AffineProjector::new(rows, b, n);
    let x0 = proj.project(&vec![0.0; n]);
    let bnorm = norm(&proj.b);
    if proj.max_violation(&x0) > 1e-8 * (1.0 + bnorm) {
        return Ok(infeasible(problem, 0));
    }

    let cvec = &problem.objective;
    let cnorm = norm(cvec);
    let mut rho = settings.rho;
    let alpha = settings.alpha;
    let mut z = x0.clone();
    project_cone(&problem.blocks, &mut z);
    let mut u = vec![0.0; n];
    let mut u_prev = u.clone();
    let mut du_prev: Option<Vec<f64>> = None;
    let (mut rp, mut rd, mut gap) = (f64::INFINITY, f64::INFINITY, f64::INFINITY);

    for it in 1..=settings.max_iter {
        let v: Vec<f64> = (0..n).map(|i| z[i] - u[i] - cvec[i] / rho).collect();
        let x = proj.project(&v);
        let z_old = z.clone();
        let xh: Vec<f64> = (0..n)
            .map(|i| alpha * x[i] + (1.0 - alpha) * z_old[i])
            .collect();
        z = (0..n).map(|i| xh[i] + u[i]).collect();
        project_cone(&problem.blocks, &mut z);
        for i in 0..n {
            u[i] += xh[i] - z[i];
        }

        if it % settings.check_every != 0 && it != settings.max_iter {
            continue;
        }
        let diff: Vec<f64> = (0..n).map(|i| x[i] - z[i]).collect();
        rp = norm(&diff) / (1.0 + norm(&x).max(norm(&z)));
        let lam: Vec<f64> = (0..n).map(|i| cvec[i] + rho * u[i]).collect();
        rd = norm(&proj.null_component(&lam)) / (1.0 + cnorm);
        let y = proj.multipliers(&lam);
        let primal_obj = dot(cvec, &z);
        let dual_obj: f64 = proj
            .active
            .iter()
            .zip(&y)
            .map(|(&r, yv)| proj.b[r] * yv)
            .sum();
        gap = (primal_obj - dual_obj).abs() / (1.0 + primal_obj.abs() + dual_obj.abs());
        if rp <= settings.tol && rd <= settings.tol && gap <= settings.tol {
            return Ok(SdpSolution {
                status: SdpStatus::Optimal,
                objective_value: primal_obj,
                iterations: it,
                primal_residual: rp,
                dual_residual: rd,
                gap,
                values: z,
                blocks: problem.blocks.clone(),
            });
        }

        // infeasibility: the scaled dual drifts by a constant gap vector
        let du: Vec<f64> = (0..n)
            .map(|i| (u[i] - u_prev[i]) / settings.check_every as f64)
            .collect();
        u_prev = u.clone();
        if let Some(prev) = &du_prev {
            let dn = norm(&du);
            let drift = norm(&du.iter().zip(prev).map(|(a, b)| a - b).collect::<Vec<_>>());
            if dn > 1e-7 && drift <= 1e-3 * dn && rp > settings.tol {
                let yv = proj.multipliers(&du);
                let w: Vec<f64> = proj.apply_at(&yv).iter().map(|x| -x).collect();
                let wn = norm(&w);
                if wn > 0.0 {
                    let wn_vec: Vec<f64> = w.iter().map(|x| x / wn).collect();
                    let by: f64 = -proj
                        .active
                        .iter()
                        .zip(&yv)
                        .map(|(&r, yk)| proj.b[r] * yk)
                        .sum::<f64>()
                        / wn;
                    if dual_cone_distance(&problem.blocks, &wn_vec) < 1e-6 && by < -1e-7 {
                        return Ok(infeasible(problem, it));
                    }
                }
            }
        }
        du_prev = Some(du);

        // residual balancing
        if it % (settings.check_every * 4) == 0 {
            let dz = norm(&(0..n).map(|i| z[i] - z_old[i]).collect::<Vec<_>>());
            let rd_proxy = rho * dz / (1.0 + norm(&lam));
            let scale = if rp > 10.0 * rd_proxy && rho < 1e6 {
                2.0
            } else if rd_proxy > 10.0 * rp && rho > 1e-6 {
                0.5
            } else {
                1.0
            };
            if scale != 1.0 {
                rho *= scale;
                for ui in u.iter_mut() {
                    *ui /= scale;
                }
                u_prev = u.clone();
                du_prev = None;
            }
        }
    }
    Ok(SdpSolution {
        status: SdpStatus::MaxIter,
        objective_value: dot(cvec, &z),
        iterations: settings.max_iter,
        primal_residual: rp,
        dual_residual: rd,
        gap,
        values: z,
        blocks: problem.blocks.clone(),
    })
}

fn infeasible(problem: &SdpProblem, iterations: usize) -> SdpSolution {
    SdpSolution {
        status: SdpStatus::Infeasible,
        objective_value: f64::INFINITY,
        iterations,
        primal_residual: f64::NAN,
        dual_residual: f64::NAN,
        gap: f64::NAN,
        values: vec![0.0; problem.n],
        blocks: problem.blocks.clone(),
    }
}
