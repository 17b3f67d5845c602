//! Model-based ground truth: Riccati/Lyapunov solvers and the structured
//! optimal gain. Used exclusively by tests and baseline curves — the
//! learner never consults anything in this module.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::graph::{compound_cost, subgraph_cost, CommGraph};
use crate::linalg;
use crate::lti::AgentModel;
use crate::patterned::{pattern_project, PatternedMatrix};
use crate::scalar::{fp, Scalar};
use crate::spe::HEstimate;

/// Fixed-point tolerance for [`dare_solve`].
const DARE_TOL: f64 = 1e-12;
const DARE_MAX_ITERS: usize = 100_000;

/// Cost-to-go of a patterned policy: P̃ = I_d ⊗ (P₁ − P₂) + 𝟙𝟙ᵀ ⊗ P₂.
#[derive(Debug, Clone)]
pub struct CostToGo<T: Scalar> {
    pub p1: DMatrix<T>,
    pub p2: DMatrix<T>,
    pub d: usize,
}

impl<T: Scalar> CostToGo<T> {
    pub fn delta_p(&self) -> DMatrix<T> {
        &self.p1 - &self.p2
    }

    pub fn patterned(&self) -> Result<PatternedMatrix<T>> {
        PatternedMatrix::from_blocks(self.d, self.p1.clone(), self.p2.clone())
    }

    pub fn to_dense(&self) -> Result<DMatrix<T>> {
        Ok(self.patterned()?.to_dense())
    }
}

/// Solves the discrete algebraic Riccati equation
/// P = Q + AᵀPA − AᵀPB(R + BᵀPB)⁻¹BᵀPA by plain fixed-point iteration
/// from P₀ = Q, to max-abs increment below 1e−12.
pub fn dare_solve<T: Scalar>(
    a: &DMatrix<T>,
    b: &DMatrix<T>,
    q: &DMatrix<T>,
    r: &DMatrix<T>,
) -> Result<DMatrix<T>> {
    let n = a.nrows();
    if !a.is_square() || b.nrows() != n || q.shape() != (n, n) || r.shape() != (b.ncols(), b.ncols())
    {
        return Err(Error::DimensionMismatch("dare_solve operand shapes".into()));
    }
    let mut p = q.clone();
    let tol = fp::<T>(DARE_TOL) * (T::one() + q.norm());
    for _ in 0..DARE_MAX_ITERS {
        let btp = b.transpose() * &p;
        let s = r + &btp * b;
        let s_inv = linalg::try_inverse(&s, "R + BᵀPB")?;
        let btpa = &btp * a;
        let next =
            q + a.transpose() * &p * a - btpa.transpose() * s_inv * &btpa;
        let next = linalg::sym_part(&next);
        let delta = (&next - &p).amax();
        p = next;
        if delta < tol {
            if !p.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite("DARE iterate".into()));
            }
            return Ok(p);
        }
    }
    Err(Error::NonConvergence {
        context: "DARE fixed-point iteration".into(),
        iterations: DARE_MAX_ITERS,
    })
}

/// LQR gain K = −(R + BᵀPB)⁻¹BᵀPA for the [`dare_solve`] solution P.
pub fn lqr_gain<T: Scalar>(
    a: &DMatrix<T>,
    b: &DMatrix<T>,
    p: &DMatrix<T>,
    r: &DMatrix<T>,
) -> Result<DMatrix<T>> {
    let s = r + b.transpose() * p * b;
    let s_inv = linalg::try_inverse(&s, "R + BᵀPB")?;
    Ok(-(s_inv * b.transpose() * p * a))
}

/// The structured optimum of the subgraph problem: solves the d·n DARE for
/// (Ã, B̃, Q̃_c, R̃_c), extracts the patterned gain components and cost-to-go.
/// The dense path is authoritative; a structure-projection residual above
/// 1e−6 is treated as an error.
pub fn structured_optimal<T: Scalar>(
    agent: &AgentModel<T>,
    q1: &DMatrix<T>,
    q2: &DMatrix<T>,
    r: &DMatrix<T>,
    d: usize,
) -> Result<(DMatrix<T>, DMatrix<T>, CostToGo<T>)> {
    if d < 2 {
        return Err(Error::InvalidInput(format!("structured_optimal needs d >= 2, got {d}")));
    }
    let eye = DMatrix::<T>::identity(d, d);
    let a_t = linalg::kron(&eye, agent.a());
    let b_t = linalg::kron(&eye, agent.b());
    let (q_c, r_c) = subgraph_cost(d, q1, q2, r)?;
    let p_t = dare_solve(&a_t, &b_t, &q_c.to_dense(), &r_c.to_dense())?;
    let k_t = lqr_gain(&a_t, &b_t, &p_t, &r_c.to_dense())?;

    let structure_tol = fp::<T>(1e-6);
    let (k_diag, l_star, k_res) = pattern_project(&k_t, d)?;
    let (p1, p2, p_res) = pattern_project(&p_t, d)?;
    let worst = if k_res > p_res { k_res } else { p_res };
    if worst > structure_tol * (T::one() + k_t.norm() + p_t.norm()) {
        return Err(Error::StructureViolation(worst.to_subset().unwrap_or(f64::NAN)));
    }
    // K̃ = I⊗(K−L) + 𝟙𝟙ᵀ⊗L carries K on the diagonal blocks, L off
    Ok((k_diag, l_star, CostToGo { p1, p2, d }))
}

/// Network cost index for a compound gain K̂: trace of P̂ solving
/// P̂ = (Â + B̂K̂)ᵀ P̂ (Â + B̂K̂) + Q̂ + K̂ᵀR̂K̂ (identity-covariance initial
/// states).
pub fn evaluate_policy_cost<T: Scalar>(
    k_hat: &DMatrix<T>,
    g: &CommGraph,
    agent: &AgentModel<T>,
    q1: &DMatrix<T>,
    q2: &DMatrix<T>,
    r: &DMatrix<T>,
) -> Result<T> {
    let big_n = g.node_count();
    let eye = DMatrix::<T>::identity(big_n, big_n);
    let a_hat = linalg::kron(&eye, agent.a());
    let b_hat = linalg::kron(&eye, agent.b());
    if k_hat.nrows() != b_hat.ncols() || k_hat.ncols() != a_hat.nrows() {
        return Err(Error::DimensionMismatch("evaluate_policy_cost gain shape".into()));
    }
    let acl = &a_hat + &b_hat * k_hat;
    let (q_hat, r_hat) = compound_cost(g, q1, q2, r)?;
    let q_cl = q_hat + k_hat.transpose() * r_hat * k_hat;
    let p_hat = linalg::dlyap_doubling(&acl, &q_cl)?;
    Ok(p_hat.trace())
}

/// Exact model-based H̃ for the policy K̃ on the subgraph problem:
/// H = [[Q̃_c + ÃᵀP̃Ã, ÃᵀP̃B̃], [B̃ᵀP̃Ã, R̃_c + B̃ᵀP̃B̃]] with P̃ the
/// closed-loop Lyapunov solution for K̃. This is the SPE oracle.
pub fn assemble_h<T: Scalar>(
    agent: &AgentModel<T>,
    q_c: &DMatrix<T>,
    r_c: &DMatrix<T>,
    k_t: &DMatrix<T>,
    d: usize,
) -> Result<HEstimate<T>> {
    let n = agent.state_dim();
    let m = agent.input_dim();
    let eye = DMatrix::<T>::identity(d, d);
    let a_t = linalg::kron(&eye, agent.a());
    let b_t = linalg::kron(&eye, agent.b());
    if k_t.shape() != (d * m, d * n) || q_c.shape() != (d * n, d * n) || r_c.shape() != (d * m, d * m)
    {
        return Err(Error::DimensionMismatch("assemble_h operand shapes".into()));
    }
    let acl = &a_t + &b_t * k_t;
    let q_cl = q_c + k_t.transpose() * r_c * k_t;
    let p_t = linalg::dlyap_doubling(&acl, &linalg::sym_part(&q_cl))?;

    let p_dim = d * (n + m);
    let mut h = DMatrix::<T>::zeros(p_dim, p_dim);
    let h11 = q_c + a_t.transpose() * &p_t * &a_t;
    let h12 = a_t.transpose() * &p_t * &b_t;
    let h22 = r_c + b_t.transpose() * &p_t * &b_t;
    h.view_mut((0, 0), (d * n, d * n)).copy_from(&h11);
    h.view_mut((0, d * n), (d * n, d * m)).copy_from(&h12);
    h.view_mut((d * n, 0), (d * m, d * n)).copy_from(&h12.transpose());
    h.view_mut((d * n, d * n), (d * m, d * m)).copy_from(&h22);
    HEstimate::new(linalg::sym_part(&h), d, n, m)
}
