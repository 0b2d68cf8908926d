//! Semidefinite formulations: diamond norm of Hermitian-preserving maps,
//! HPTP implementability, and the programming cost of a semigroup.

pub mod solver;

pub use solver::{
    coords_to_herm, herm_to_coords, solve, Cone, SdpProblem, SdpSolution, SdpStatus,
    SolverSettings, Term, VarId,
};

use crate::channels::ProcessorMap;
use crate::dynamics::{self, is_hptp, Choi, Lindbladian};
use crate::error::{Error, Result};
use crate::matcore::{self, c, identity, CMatrix, SystemDims};
use crate::protocols::ProgramStateFamily;

fn trace_out_last(m: &CMatrix, d_keep: usize, d_out: usize) -> CMatrix {
    let dims = SystemDims::new(&[d_keep, d_out]).expect("positive dims");
    matcore::partial_trace(m, &dims, &[0]).expect("consistent dims")
}

fn require_optimal(sol: &SdpSolution, what: &str) -> Result<f64> {
    match sol.status {
        SdpStatus::Optimal => Ok(sol.objective_value),
        SdpStatus::Infeasible => Err(Error::Solver(format!("{what}: reported infeasible"))),
        SdpStatus::MaxIter => Err(Error::Solver(format!(
            "{what}: iteration limit after {} iterations (primal {:.2e}, dual {:.2e})",
            sol.iterations, sol.primal_residual, sol.dual_residual
        ))),
    }
}

/// Diamond norm of a Hermitian-preserving map:
/// `min ‖tr_out(P + N)‖_∞` over `P, N ⪰ 0` with `P − N = J`.
pub fn diamond_norm(j: &Choi) -> Result<f64> {
    diamond_norm_with(j, &SolverSettings::default())
}

pub fn diamond_norm_with(j: &Choi, settings: &SolverSettings) -> Result<f64> {
    if !matcore::is_hermitian(&j.matrix, 1e-9 * (1.0 + matcore::max_abs(&j.matrix))) {
        return Err(Error::Invalid(
            "diamond norm needs a Hermitian Choi operator".into(),
        ));
    }
    if matcore::max_abs(&j.matrix) == 0.0 {
        return Ok(0.0);
    }
    let (din, dout) = (j.dim_in, j.dim_out);
    let n = din * dout;
    let mut prob = SdpProblem::new();
    let p = prob.add_psd("P", n);
    let q = prob.add_psd("N", n);
    let s = prob.add_psd("slack", din);
    let t = prob.add_free("t");
    prob.objective_scalar(t, 1.0)?;
    prob.add_equality(
        vec![Term::scaled(p, 1.0), Term::scaled(q, -1.0)],
        &matcore::hermitize(&j.matrix),
    )?;
    let tr = move |x: &CMatrix| trace_out_last(x, din, dout);
    prob.add_equality(
        vec![
            Term::map(p, tr),
            Term::map(q, tr),
            Term::scaled(s, 1.0),
            Term::Scalar(t, -identity(din)),
        ],
        &matcore::zeros(din, din),
    )?;
    let sol = solve(&prob, settings)?;
    require_optimal(&sol, "diamond norm")
}

/// `ν = log₂ min{p₁ + p₂ : J = J₁ − J₂, J_i ⪰ 0, tr_out J_i = p_i I}`.
pub fn implementability_nu(j: &Choi) -> Result<f64> {
    implementability_nu_with(j, &SolverSettings::default())
}

pub fn implementability_nu_with(j: &Choi, settings: &SolverSettings) -> Result<f64> {
    if !is_hptp(j, 1e-8) {
        return Err(Error::NotHptp("implementability needs an HPTP map".into()));
    }
    let (din, dout) = (j.dim_in, j.dim_out);
    let n = din * dout;
    let mut prob = SdpProblem::new();
    let j1 = prob.add_psd("J1", n);
    let j2 = prob.add_psd("J2", n);
    let p1 = prob.add_nonneg("p1");
    let p2 = prob.add_nonneg("p2");
    prob.objective_scalar(p1, 1.0)?;
    prob.objective_scalar(p2, 1.0)?;
    prob.add_equality(
        vec![Term::scaled(j1, 1.0), Term::scaled(j2, -1.0)],
        &matcore::hermitize(&j.matrix),
    )?;
    for (ji, pi) in [(j1, p1), (j2, p2)] {
        prob.add_equality(
            vec![
                Term::map(ji, move |x: &CMatrix| trace_out_last(x, din, dout)),
                Term::Scalar(pi, -identity(din)),
            ],
            &matcore::zeros(din, din),
        )?;
    }
    let sol = solve(&prob, settings)?;
    Ok(require_optimal(&sol, "implementability")?.log2())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostStatus {
    /// Optimal point found; `gamma` is finite.
    Programmable,
    /// Certified infeasible: no HPTP processor reproduces the semigroup on the grid.
    NotProgrammable,
    /// Iteration limit reached without a verdict.
    SolverFailure,
}

impl CostStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            CostStatus::Programmable => "optimal",
            CostStatus::NotProgrammable => "infeasible",
            CostStatus::SolverFailure => "max_iter",
        }
    }
}

#[derive(Debug, Clone)]
pub struct CostResult {
    pub status: CostStatus,
    /// `log₂(p₁ + p₂)`; infinite unless programmable.
    pub gamma: f64,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    /// Choi of the optimal processor `J₁ − J₂` on (S, P, S').
    pub processor: Option<CMatrix>,
}

impl CostResult {
    pub fn is_programmable(&self) -> bool {
        self.status == CostStatus::Programmable
    }
}

/// Uniform grid of `n` points on `[0, t_max]`, including both ends.
pub fn time_grid(t_max: f64, n: usize) -> Result<Vec<f64>> {
    if !(t_max > 0.0) || n < 2 {
        return Err(Error::Invalid(format!(
            "time grid needs T > 0 and n ≥ 2 (got T={t_max}, n={n})"
        )));
    }
    Ok((0..n).map(|k| t_max * k as f64 / (n - 1) as f64).collect())
}

/// `γ_ε` on a uniform grid of `n_time_samples` points over `[0, T]`.
pub fn programming_cost(
    l: &Lindbladian,
    family: &ProgramStateFamily,
    t_max: f64,
    epsilon: f64,
    n_time_samples: usize,
) -> Result<CostResult> {
    let grid = time_grid(t_max, n_time_samples)?;
    programming_cost_on_grid(l, family, &grid, epsilon, &SolverSettings::default())
}

/// `γ_ε` with the semigroup constraint imposed at the given times.
pub fn programming_cost_on_grid(
    l: &Lindbladian,
    family: &ProgramStateFamily,
    times: &[f64],
    epsilon: f64,
    settings: &SolverSettings,
) -> Result<CostResult> {
    if !(epsilon >= 0.0) {
        return Err(Error::Invalid(format!(
            "epsilon must be ≥ 0, got {epsilon}"
        )));
    }
    if times.is_empty() || times.iter().any(|&t| !(t >= 0.0)) {
        return Err(Error::Invalid(
            "time grid must be nonempty with t ≥ 0".into(),
        ));
    }
    let d = l.dim();
    let dp = family.dim;
    let n = d * dp * d;
    let mut prob = SdpProblem::new();
    let j1 = prob.add_psd("J1", n);
    let j2 = prob.add_psd("J2", n);
    let p1 = prob.add_nonneg("p1");
    let p2 = prob.add_nonneg("p2");
    prob.objective_scalar(p1, 1.0)?;
    prob.objective_scalar(p2, 1.0)?;
    for (ji, pi) in [(j1, p1), (j2, p2)] {
        prob.add_equality(
            vec![
                Term::map(ji, move |x: &CMatrix| trace_out_last(x, d * dp, d)),
                Term::Scalar(pi, -identity(d * dp)),
            ],
            &matcore::zeros(d * dp, d * dp),
        )?;
    }
    // trace preservation of J1 − J2; implied by the exact constraints, not by the ε-ball
    prob.add_equality(
        vec![
            Term::Scalar(p1, identity(1)),
            Term::Scalar(p2, -identity(1)),
        ],
        &identity(1),
    )?;
    for (k, &t) in times.iter().enumerate() {
        let program = family.at(t);
        if program.shape() != (dp, dp) {
            return Err(Error::Dimension(format!(
                "program family returned {:?}, expected {dp}x{dp}",
                program.shape()
            )));
        }
        let target = dynamics::semigroup_choi(l, t)?.matrix;
        let red = |sign: f64| {
            let program = program.clone();
            move |x: &CMatrix| ProcessorMap::reduce_matrix(x, d, dp, d, &program) * c(sign, 0.0)
        };
        let mut terms = vec![Term::map(j1, red(1.0)), Term::map(j2, red(-1.0))];
        if epsilon == 0.0 {
            prob.add_equality(terms, &matcore::hermitize(&target))?;
        } else {
            let pt = prob.add_psd(&format!("P{k}"), d * d);
            let nt = prob.add_psd(&format!("N{k}"), d * d);
            let st = prob.add_psd(&format!("S{k}"), d);
            terms.push(Term::scaled(pt, -1.0));
            terms.push(Term::scaled(nt, 1.0));
            prob.add_equality(terms, &matcore::hermitize(&target))?;
            let tr = move |x: &CMatrix| trace_out_last(x, d, d);
            prob.add_equality(
                vec![Term::map(pt, tr), Term::map(nt, tr), Term::scaled(st, 1.0)],
                &(identity(d) * c(2.0 * epsilon, 0.0)),
            )?;
        }
    }
    let sol = solve(&prob, settings)?;
    let status = match sol.status {
        SdpStatus::Optimal => CostStatus::Programmable,
        SdpStatus::Infeasible => CostStatus::NotProgrammable,
        SdpStatus::MaxIter => CostStatus::SolverFailure,
    };
    let (gamma, processor) = if status == CostStatus::Programmable {
        (
            sol.objective_value.log2(),
            Some(sol.matrix(j1) - sol.matrix(j2)),
        )
    } else {
        (f64::INFINITY, None)
    };
    Ok(CostResult {
        status,
        gamma,
        iterations: sol.iterations,
        primal_residual: sol.primal_residual,
        dual_residual: sol.dual_residual,
        processor,
    })
}

/// `γ_ε` with port-based programs `π_t = J(e^{tL})/d`.
pub fn port_based_cost(
    l: &Lindbladian,
    t_max: f64,
    epsilon: f64,
    n_time_samples: usize,
) -> Result<CostResult> {
    programming_cost(
        l,
        &ProgramStateFamily::port_based(l),
        t_max,
        epsilon,
        n_time_samples,
    )
}

/// Solves on `n` and `2n − 1` grid points (the refined grid contains the
/// coarse one) and returns both results; a change above `1e-4` signals an
/// inadequate grid.
pub fn grid_refinement_check(
    l: &Lindbladian,
    family: &ProgramStateFamily,
    t_max: f64,
    epsilon: f64,
    n_time_samples: usize,
) -> Result<(CostResult, CostResult)> {
    let coarse = programming_cost(l, family, t_max, epsilon, n_time_samples)?;
    let fine = programming_cost(l, family, t_max, epsilon, 2 * n_time_samples - 1)?;
    Ok((coarse, fine))
}
