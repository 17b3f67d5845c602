//! The outer policy-iteration loop: block recovery from the estimated H̃,
//! structured gain updates through the patterned inverse components F and
//! G, the stability margin (Ξ, γ, τ), and final policy emission on the
//! original topology.

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{q_tilde, subgraph_cost, CommGraph};
use crate::linalg;
use crate::lti::{build_policy_final, build_policy_learning, LearnableNetwork};
use crate::patterned::PatternedMatrix;
use crate::scalar::{fp, Scalar};
use crate::spe::{run_spe, HEstimate, SpeConfig};

/// Snapshot of one outer iteration.
#[derive(Debug, Clone)]
pub struct GainState<T: Scalar> {
    /// Outer iteration index (1-based).
    pub k: usize,
    pub k_mat: DMatrix<T>,
    pub l_mat: DMatrix<T>,
    pub gamma: T,
    pub tau: T,
    /// Not available for the initial state.
    pub xi: Option<DMatrix<T>>,
    /// SPE steps spent producing this iterate (0 for the initial state).
    pub spe_steps: usize,
}

impl<T: Scalar> GainState<T> {
    pub fn delta_k(&self) -> DMatrix<T> {
        &self.k_mat - &self.l_mat
    }
}

/// The six sub-blocks read out of an H̃ estimate, plus their differences.
#[derive(Debug, Clone)]
pub struct BlockSet<T: Scalar> {
    pub x1: DMatrix<T>,
    pub x2: DMatrix<T>,
    pub y1: DMatrix<T>,
    pub y2: DMatrix<T>,
    pub z1: DMatrix<T>,
    pub z2: DMatrix<T>,
}

impl<T: Scalar> BlockSet<T> {
    pub fn delta_x(&self) -> DMatrix<T> {
        &self.x1 - &self.x2
    }

    pub fn delta_y(&self) -> DMatrix<T> {
        &self.y1 - &self.y2
    }

    pub fn delta_z(&self) -> DMatrix<T> {
        &self.z1 - &self.z2
    }
}

/// Which Ξ assembly to use; the two published forms differ by a +Q₂ term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum XiVariant {
    /// Ξ = ΔX − Q̃ + Q₂ + ΔKᵀΔZ + ΔZᵀΔK + ΔKᵀ(ΔY−R)ΔK.
    #[default]
    WithQ2,
    /// Same without the +Q₂ term.
    WithoutQ2,
}

/// Configuration of one full run.
#[derive(Debug, Clone)]
pub struct D3piConfig<T: Scalar> {
    pub q1: DMatrix<T>,
    pub q2: DMatrix<T>,
    pub r: DMatrix<T>,
    /// Initial stabilizing decoupled gain (m×n).
    pub k1: DMatrix<T>,
    /// Outer convergence: max(‖K⁺−K‖_F, ‖L⁺−L‖_F) < tol.
    pub outer_tol: T,
    pub max_outer_iters: usize,
    pub spe: SpeConfig<T>,
    pub xi_variant: XiVariant,
}

impl<T: Scalar> D3piConfig<T> {
    pub fn new(
        q1: DMatrix<T>,
        q2: DMatrix<T>,
        r: DMatrix<T>,
        k1: DMatrix<T>,
        spe: SpeConfig<T>,
    ) -> Self {
        Self {
            q1,
            q2,
            r,
            k1,
            outer_tol: fp(1e-4),
            max_outer_iters: 50,
            spe,
            xi_variant: XiVariant::default(),
        }
    }
}

/// Result of a converged run.
#[derive(Debug)]
pub struct D3piResult<T: Scalar> {
    pub k_star: DMatrix<T>,
    pub l_star: DMatrix<T>,
    pub gamma_star: T,
    pub tau_star: T,
    /// One entry per outer iterate, the initial state included.
    pub history: Vec<GainState<T>>,
    /// Distributed compound gain on the original topology.
    pub final_policy: DMatrix<T>,
    pub h_final: HEstimate<T>,
}

/// Reads the six named sub-blocks out of an H̃ estimate. With structure
/// projection on, these single reads equal the block-averaged values.
pub fn recover_blocks<T: Scalar>(
    h: &HEstimate<T>,
    d: usize,
    n: usize,
    m: usize,
) -> Result<BlockSet<T>> {
    if d < 2 {
        return Err(Error::InvalidInput(format!(
            "block recovery needs d >= 2, got {d}"
        )));
    }
    if h.dims() != (d, n, m) {
        return Err(Error::DimensionMismatch(format!(
            "H dims {:?} vs requested ({d}, {n}, {m})",
            h.dims()
        )));
    }
    let h11 = h.h11();
    let h21 = h.h21();
    let h22 = h.h22();
    Ok(BlockSet {
        x1: h11.view((0, 0), (n, n)).into_owned(),
        x2: h11.view((0, n), (n, n)).into_owned(),
        y1: h22.view((0, 0), (m, m)).into_owned(),
        y2: h22.view((0, m), (m, m)).into_owned(),
        z1: h21.view((0, 0), (m, n)).into_owned(),
        z2: h21.view((0, n), (m, n)).into_owned(),
    })
}

/// Components of the structured inverse of H̃₂₂ = I_d⊗(Y₁−Y₂) + 𝟙𝟙ᵀ⊗Y₂:
/// F = (Y₁ − (d−1)Y₂(Y₁+(d−2)Y₂)⁻¹Y₂)⁻¹ and G = (Y₁+(d−1)Y₂)⁻¹Y₂(Y₁−Y₂)⁻¹,
/// so that dense H̃₂₂⁻¹ = I_d⊗(F+G) − 𝟙𝟙ᵀ⊗G (diagonal block F,
/// off-diagonal block −G).
pub fn compute_fg<T: Scalar>(
    y1: &DMatrix<T>,
    y2: &DMatrix<T>,
    d: usize,
) -> Result<(DMatrix<T>, DMatrix<T>)> {
    let h22 = PatternedMatrix::from_blocks(d, y1.clone(), y2.clone())?;
    if !h22.is_posdef() {
        return Err(Error::NotPositiveDefinite(
            "H22 estimate (bad policy evaluation)".into(),
        ));
    }
    let inv = h22.inverse()?;
    Ok((inv.diag_block().clone(), -inv.off_block()))
}

/// Structured policy update; the patterned factorization of
/// K̃⁺ = −H̃₂₂⁻¹H̃₂₁.
pub fn update_gains<T: Scalar>(
    f: &DMatrix<T>,
    g: &DMatrix<T>,
    z1: &DMatrix<T>,
    z2: &DMatrix<T>,
    d: usize,
) -> Result<(DMatrix<T>, DMatrix<T>)> {
    if f.ncols() != z1.nrows() || g.ncols() != z2.nrows() || z1.shape() != z2.shape() {
        return Err(Error::DimensionMismatch("update_gains operand shapes".into()));
    }
    let dm1 = fp::<T>((d - 1) as f64);
    let dm2 = fp::<T>(d as f64 - 2.0);
    let k_next = -(f * z1) + g * z2 * dm1;
    let l_next = -(f * z2) + g * z1 + g * z2 * dm2;
    Ok((k_next, l_next))
}

/// Ξ⁺ = ΔX − Q̃ [+ Q₂] + ΔKᵀΔZ + ΔZᵀΔK + ΔKᵀ(ΔY−R)ΔK, symmetrized.
pub fn compute_xi<T: Scalar>(
    blocks: &BlockSet<T>,
    delta_k_next: &DMatrix<T>,
    q_tilde: &DMatrix<T>,
    q2: &DMatrix<T>,
    r: &DMatrix<T>,
    variant: XiVariant,
) -> DMatrix<T> {
    let dz = blocks.delta_z();
    let dy = blocks.delta_y();
    let cross = delta_k_next.transpose() * &dz;
    let mut xi = blocks.delta_x() - q_tilde
        + &cross
        + cross.transpose()
        + delta_k_next.transpose() * (dy - r) * delta_k_next;
    if variant == XiVariant::WithQ2 {
        xi += q2;
    }
    linalg::sym_part(&xi)
}

/// τ = sqrt(γ²/(1+γ)); always strictly below γ for γ > 0.
pub fn tau_from_gamma<T: Scalar>(gamma: T) -> T {
    (gamma * gamma / (T::one() + gamma)).sqrt()
}

/// γ⁺ = σ_min(ΔKᵀRΔK + Q̃) / σ_max(Ξ + Lᵀ(ΔY−R)L) and the induced τ.
/// A vanishing denominator degenerates to (0, 0).
pub fn compute_margin<T: Scalar>(
    xi_next: &DMatrix<T>,
    delta_k_next: &DMatrix<T>,
    l_next: &DMatrix<T>,
    delta_y: &DMatrix<T>,
    r: &DMatrix<T>,
    q_tilde: &DMatrix<T>,
) -> (T, T) {
    let numer = linalg::sigma_min(&(delta_k_next.transpose() * r * delta_k_next + q_tilde));
    let denom = linalg::sigma_max(&(xi_next + l_next.transpose() * (delta_y - r) * l_next));
    if denom <= T::zero() {
        return (T::zero(), T::zero());
    }
    let gamma = numer / denom;
    (gamma, tau_from_gamma(gamma))
}

/// Runs the full outer loop against a closed-loop simulator. `g` is the
/// original communication topology; the learning subgraph and its frozen
/// member order come from the simulator's selection.
pub fn run_d3pi<T: Scalar, S: LearnableNetwork<T>, R: Rng>(
    sim: &mut S,
    g: &CommGraph,
    cfg: &D3piConfig<T>,
    rng: &mut R,
) -> Result<D3piResult<T>> {
    let d = sim.selection().len();
    if d < 2 {
        return Err(Error::InvalidInput(format!("need a subgraph of size >= 2, got {d}")));
    }
    let (m, n) = cfg.k1.shape();
    let (q_c, r_c) = subgraph_cost(d, &cfg.q1, &cfg.q2, &cfg.r)?;
    let (q_c, r_c) = (q_c.to_dense(), r_c.to_dense());
    let q_t = q_tilde(d, &cfg.q1, &cfg.q2);

    let mut k_mat = cfg.k1.clone();
    let mut l_mat = DMatrix::<T>::zeros(m, n);
    let mut tau = T::zero();
    let mut gamma = T::zero();
    let mut h_prev = HEstimate::new(DMatrix::zeros(d * (n + m), d * (n + m)), d, n, m)?;

    let mut history = vec![GainState {
        k: 1,
        k_mat: k_mat.clone(),
        l_mat: l_mat.clone(),
        gamma,
        tau,
        xi: None,
        spe_steps: 0,
    }];

    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..cfg.max_outer_iters {
        iterations += 1;
        let learning_gain = build_policy_learning(&k_mat, &l_mat, tau, g, sim.selection())?;
        sim.install_gain(learning_gain)?;

        // A budget-exhausted SPE estimate is still usable: the recursive
        // estimator returns its best fit, and block recovery rejects it if
        // the implied quadratic form is not positive definite. Only that
        // structural failure triggers a retry (once, with a doubled budget,
        // warm-started from the partial estimate) before aborting.
        let recover =
            |outcome: &crate::spe::SpeOutcome<T>| -> Result<(BlockSet<T>, DMatrix<T>, DMatrix<T>)> {
                let blocks = recover_blocks(&outcome.estimate, d, n, m)?;
                let (f, g_inv) = compute_fg(&blocks.y1, &blocks.y2, d)?;
                let (k_next, l_next) = update_gains(&f, &g_inv, &blocks.z1, &blocks.z2, d)?;
                Ok((blocks, k_next, l_next))
            };

        let mut outcome = run_spe(sim, &k_mat, &l_mat, d, &q_c, &r_c, &h_prev, &cfg.spe, rng)?;
        let mut recovered = recover(&outcome);
        if recovered.is_err() {
            let mut retry_cfg = cfg.spe.clone();
            let base = retry_cfg
                .max_steps
                .unwrap_or(5 * (d * (n + m)) * (d * (n + m) + 1) / 2);
            retry_cfg.max_steps = Some(2 * base);
            outcome = run_spe(
                sim,
                &k_mat,
                &l_mat,
                d,
                &q_c,
                &r_c,
                &outcome.estimate,
                &retry_cfg,
                rng,
            )?;
            recovered = recover(&outcome);
        }
        let (blocks, k_next, l_next) = recovered?;
        let dk_next = &k_next - &l_next;
        let xi = compute_xi(&blocks, &dk_next, &q_t, &cfg.q2, &cfg.r, cfg.xi_variant);
        let (gamma_next, tau_next) =
            compute_margin(&xi, &dk_next, &l_next, &blocks.delta_y(), &cfg.r, &q_t);

        let step_k = (&k_next - &k_mat).norm();
        let step_l = (&l_next - &l_mat).norm();

        history.push(GainState {
            k: iterations + 1,
            k_mat: k_next.clone(),
            l_mat: l_next.clone(),
            gamma: gamma_next,
            tau: tau_next,
            xi: Some(xi),
            spe_steps: outcome.steps,
        });

        k_mat = k_next;
        l_mat = l_next;
        gamma = gamma_next;
        tau = tau_next;
        h_prev = outcome.estimate;

        if step_k < cfg.outer_tol && step_l < cfg.outer_tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NonConvergence {
            context: "outer policy iteration".into(),
            iterations,
        });
    }

    let final_policy = build_policy_final(&k_mat, &l_mat, tau, d, g)?;
    Ok(D3piResult {
        k_star: k_mat,
        l_star: l_mat,
        gamma_star: gamma,
        tau_star: tau,
        history,
        final_policy,
        h_final: h_prev,
    })
}
