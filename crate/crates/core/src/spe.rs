//! Subgraph Policy Evaluation: recursive least squares on excited subgraph
//! trajectories, estimating the quadratic cost matrix H̃ of the current
//! policy while the full network runs closed loop.
//!
//! The regression target is the one-step local cost and the regressor is
//! the difference of quadratic feature vectors of consecutive measurement
//! stacks z = [x̃; ũ], which makes the Bellman identity exact on the
//! decoupled agent dynamics.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::lti::BlackBoxNetwork;
use crate::patterned::{pattern_expand, pattern_project};
use crate::scalar::{fp, Scalar};

/// Quadratic feature vector of z, ordered as the row-major upper triangle:
/// [z₁², z₁z₂, …, z₁z_p, z₂², …, z_p²]. Paired with the doubled
/// off-diagonal parameterization of [`vech2`], zᵀHz = features(z)ᵀ·vech2(H).
pub fn quad_features<T: Scalar>(z: &DVector<T>) -> DVector<T> {
    let p = z.len();
    let mut out = DVector::<T>::zeros(p * (p + 1) / 2);
    let mut idx = 0;
    for i in 0..p {
        for j in i..p {
            out[idx] = z[i] * z[j];
            idx += 1;
        }
    }
    out
}

/// Half-vectorization with off-diagonal entries stored as 2·H_ij.
pub fn vech2<T: Scalar>(h: &DMatrix<T>) -> DVector<T> {
    let p = h.nrows();
    let mut out = DVector::<T>::zeros(p * (p + 1) / 2);
    let mut idx = 0;
    for i in 0..p {
        for j in i..p {
            out[idx] = if i == j {
                h[(i, j)]
            } else {
                h[(i, j)] + h[(j, i)]
            };
            idx += 1;
        }
    }
    out
}

/// Inverse of [`vech2`]: rebuilds the symmetric matrix, halving the stored
/// off-diagonal coefficients.
pub fn unvech2<T: Scalar>(theta: &DVector<T>, p: usize) -> Result<DMatrix<T>> {
    if theta.len() != p * (p + 1) / 2 {
        return Err(Error::DimensionMismatch(format!(
            "theta length {} does not match p = {p}",
            theta.len()
        )));
    }
    let half = fp::<T>(0.5);
    let mut h = DMatrix::<T>::zeros(p, p);
    let mut idx = 0;
    for i in 0..p {
        for j in i..p {
            if i == j {
                h[(i, j)] = theta[idx];
            } else {
                h[(i, j)] = theta[idx] * half;
                h[(j, i)] = theta[idx] * half;
            }
            idx += 1;
        }
    }
    Ok(h)
}

/// Bellman regressor ζ_t = features(z_t) − features(z_{t+1}); satisfies
/// ℛ(x̃,ũ) = ζᵀθ* exactly for the true coefficient vector.
pub fn regressor<T: Scalar>(z_t: &DVector<T>, z_next: &DVector<T>) -> Result<DVector<T>> {
    if z_t.len() != z_next.len() {
        return Err(Error::DimensionMismatch(format!(
            "regressor: {} vs {}",
            z_t.len(),
            z_next.len()
        )));
    }
    Ok(quad_features(z_t) - quad_features(z_next))
}

/// The transcription found in some write-ups: quadratic features of the
/// raw difference φ = z_t − z_{t+1}. Does not satisfy the Bellman identity
/// in general; kept only for comparison.
pub fn regressor_literal<T: Scalar>(z_t: &DVector<T>, z_next: &DVector<T>) -> Result<DVector<T>> {
    if z_t.len() != z_next.len() {
        return Err(Error::DimensionMismatch(format!(
            "regressor: {} vs {}",
            z_t.len(),
            z_next.len()
        )));
    }
    Ok(quad_features(&(z_t - z_next)))
}

/// One-step local cost x̃ᵀQ̃_c x̃ + ũᵀR̃_c ũ.
pub fn local_cost<T: Scalar>(
    x: &DVector<T>,
    u: &DVector<T>,
    q_c: &DMatrix<T>,
    r_c: &DMatrix<T>,
) -> Result<T> {
    if x.len() != q_c.nrows() || u.len() != r_c.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "local_cost: x len {}, Q {}x{}, u len {}, R {}x{}",
            x.len(),
            q_c.nrows(),
            q_c.ncols(),
            u.len(),
            r_c.nrows(),
            r_c.ncols()
        )));
    }
    Ok((x.transpose() * q_c * x)[(0, 0)] + (u.transpose() * r_c * u)[(0, 0)])
}

/// Recursive least-squares state: coefficient vector θ and gain factor 𝒫.
#[derive(Debug, Clone)]
pub struct RlsState<T: Scalar> {
    pub theta: DVector<T>,
    pub pmat: DMatrix<T>,
    pub step_count: usize,
}

impl<T: Scalar> RlsState<T> {
    /// Fresh state with θ = θ₀ and 𝒫 = β·I.
    pub fn new(theta0: DVector<T>, beta: T) -> Self {
        let q = theta0.len();
        Self {
            theta: theta0,
            pmat: DMatrix::identity(q, q) * beta,
            step_count: 0,
        }
    }

    /// θ ← θ + 𝒫ζ(target − ζᵀθ)/(1 + ζᵀ𝒫ζ), 𝒫 ← 𝒫 − 𝒫ζζᵀ𝒫/(1 + ζᵀ𝒫ζ),
    /// with 𝒫 symmetrized afterwards.
    pub fn update(&mut self, zeta: &DVector<T>, target: T) -> Result<()> {
        if zeta.len() != self.theta.len() {
            return Err(Error::DimensionMismatch(format!(
                "rls_step: regressor len {} vs theta len {}",
                zeta.len(),
                self.theta.len()
            )));
        }
        let pz = &self.pmat * zeta;
        let denom = T::one() + zeta.dot(&pz);
        let innovation = target - zeta.dot(&self.theta);
        self.theta += &pz * (innovation / denom);
        // in-place symmetric rank-1 downdate 𝒫 ← 𝒫 − (𝒫ζ)(𝒫ζ)ᵀ/denom;
        // writing both triangles from one product keeps 𝒫 exactly
        // symmetric without allocating q×q temporaries
        let inv_denom = T::one() / denom;
        let q = pz.len();
        for j in 0..q {
            let pzj = pz[j] * inv_denom;
            for i in 0..=j {
                let v = self.pmat[(i, j)] - pz[i] * pzj;
                self.pmat[(i, j)] = v;
                self.pmat[(j, i)] = v;
            }
        }
        self.step_count += 1;
        if !self.theta.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("RLS coefficient update".into()));
        }
        Ok(())
    }

    /// Condition number of 𝒫; excitation diagnostic only.
    pub fn pmat_condition(&self) -> T {
        let rc = crate::linalg::rcond(&self.pmat);
        if rc == T::zero() {
            T::max_value().unwrap()
        } else {
            T::one() / rc
        }
    }
}

/// Gaussian exploration on the stacked subgraph inputs: e ~ N(0, Σ).
#[derive(Debug, Clone)]
pub struct ExplorationSpec<T: Scalar> {
    chol: DMatrix<T>,
}

impl<T: Scalar> ExplorationSpec<T> {
    pub fn new(sigma: DMatrix<T>) -> Result<Self> {
        if !sigma.is_square() {
            return Err(Error::DimensionMismatch("exploration covariance".into()));
        }
        // PSD: allow zero covariance via a tiny jitter-free special case
        if sigma.iter().all(|v| *v == T::zero()) {
            return Ok(Self { chol: sigma });
        }
        let chol = sigma
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite("exploration covariance".into()))?
            .l();
        Ok(Self { chol })
    }

    pub fn isotropic(dim: usize, variance: T) -> Self {
        Self {
            chol: DMatrix::identity(dim, dim) * variance.sqrt(),
        }
    }

    pub fn dim(&self) -> usize {
        self.chol.nrows()
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> DVector<T> {
        let w = DVector::<T>::from_iterator(
            self.dim(),
            (0..self.dim()).map(|_| fp::<T>(StandardNormal.sample(rng))),
        );
        &self.chol * w
    }
}

/// Estimated quadratic cost matrix of the subgraph Q-function, with the
/// block views the policy update reads.
#[derive(Debug, Clone)]
pub struct HEstimate<T: Scalar> {
    h: DMatrix<T>,
    d: usize,
    n: usize,
    m: usize,
}

impl<T: Scalar> HEstimate<T> {
    pub fn new(h: DMatrix<T>, d: usize, n: usize, m: usize) -> Result<Self> {
        let p = d * (n + m);
        if h.nrows() != p || h.ncols() != p {
            return Err(Error::DimensionMismatch(format!(
                "H must be {p}x{p}, got {}x{}",
                h.nrows(),
                h.ncols()
            )));
        }
        Ok(Self { h, d, n, m })
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.h
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.d, self.n, self.m)
    }

    /// State-state block (dn × dn).
    pub fn h11(&self) -> DMatrix<T> {
        self.h.view((0, 0), (self.d * self.n, self.d * self.n)).into_owned()
    }

    /// Input-state block (dm × dn).
    pub fn h21(&self) -> DMatrix<T> {
        self.h
            .view((self.d * self.n, 0), (self.d * self.m, self.d * self.n))
            .into_owned()
    }

    /// Input-input block (dm × dm).
    pub fn h22(&self) -> DMatrix<T> {
        self.h
            .view(
                (self.d * self.n, self.d * self.n),
                (self.d * self.m, self.d * self.m),
            )
            .into_owned()
    }

    /// Projects each block onto the patterned subspace (average diagonal
    /// blocks, average off-diagonal blocks) and reassembles symmetrically.
    pub fn project_structure(&self) -> Result<Self> {
        let (d11, o11, _) = pattern_project(&self.h11(), self.d)?;
        let (d21, o21, _) = pattern_project(&self.h21(), self.d)?;
        let (d22, o22, _) = pattern_project(&self.h22(), self.d)?;
        let h11 = pattern_expand(self.d, &d11, &o11);
        let h21 = pattern_expand(self.d, &d21, &o21);
        let h22 = pattern_expand(self.d, &d22, &o22);
        let p = self.h.nrows();
        let dn = self.d * self.n;
        let mut h = DMatrix::<T>::zeros(p, p);
        h.view_mut((0, 0), (dn, dn)).copy_from(&h11);
        h.view_mut((dn, 0), (p - dn, dn)).copy_from(&h21);
        h.view_mut((0, dn), (dn, p - dn)).copy_from(&h21.transpose());
        h.view_mut((dn, dn), (p - dn, p - dn)).copy_from(&h22);
        let h = (&h + h.transpose()) * fp::<T>(0.5);
        Self::new(h, self.d, self.n, self.m)
    }
}

/// Configuration of one SPE invocation.
#[derive(Debug, Clone)]
pub struct SpeConfig<T: Scalar> {
    /// 𝒫° = β·I initialization.
    pub beta: T,
    /// Exploration covariance on the stacked subgraph inputs.
    pub exploration: ExplorationSpec<T>,
    /// Convergence: ‖θ_t − θ_{t−window}‖∞ < tol.
    pub tol: T,
    pub window: usize,
    /// Hard step cap; `None` picks 5·q with q the number of unknowns.
    pub max_steps: Option<usize>,
    /// Use the literal φ-product regressor instead of the feature
    /// difference (comparison only).
    pub literal_regressor: bool,
    /// Project the recovered blocks onto the patterned subspace.
    pub project_structure: bool,
    /// Record per-step diagnostics.
    pub record_trace: bool,
}

impl<T: Scalar> SpeConfig<T> {
    pub fn default_for(d: usize, m: usize) -> Self {
        Self {
            beta: fp(1e6),
            exploration: ExplorationSpec::isotropic(d * m, fp(0.01)),
            tol: fp(1e-6),
            window: 10,
            max_steps: None,
            literal_regressor: false,
            project_structure: true,
            record_trace: false,
        }
    }
}

/// One diagnostic row per RLS step.
#[derive(Debug, Clone)]
pub struct SpeTraceRow<T: Scalar> {
    pub t: usize,
    pub residual: T,
    pub theta_norm: T,
}

/// Result of an SPE run.
#[derive(Debug)]
pub struct SpeOutcome<T: Scalar> {
    pub estimate: HEstimate<T>,
    /// False when the step budget ran out before the θ window settled.
    pub converged: bool,
    pub steps: usize,
    pub rls: RlsState<T>,
    pub trace: Vec<SpeTraceRow<T>>,
}

/// Runs Subgraph Policy Evaluation against a black-box network.
///
/// `k`/`l` are the current gain components; the learner reconstructs the
/// subgraph policy ũ = K̃x̃, i.e. uᵢ = Kxᵢ + L·Σ_{j≠i}xⱼ, itself (the
/// learning policy is unidirectional, so subgraph inputs depend on subgraph
/// states only).
/// `q_c`/`r_c` are the dense subgraph cost matrices.
#[allow(clippy::too_many_arguments)]
pub fn run_spe<T: Scalar, S: BlackBoxNetwork<T> + ?Sized, R: Rng>(
    sim: &mut S,
    k: &DMatrix<T>,
    l: &DMatrix<T>,
    d: usize,
    q_c: &DMatrix<T>,
    r_c: &DMatrix<T>,
    h_prev: &HEstimate<T>,
    cfg: &SpeConfig<T>,
    rng: &mut R,
) -> Result<SpeOutcome<T>> {
    // gains are m×n: rows = inputs
    let (m, n) = k.shape();
    let p = d * (n + m);
    let q_unknowns = p * (p + 1) / 2;
    let max_steps = cfg.max_steps.unwrap_or(5 * q_unknowns);

    let theta0 = vech2(h_prev.matrix());
    let mut rls = RlsState::new(theta0, cfg.beta);

    let mut history: Vec<DVector<T>> = Vec::with_capacity(max_steps + 1);
    history.push(rls.theta.clone());
    let mut trace = Vec::new();
    let mut informative_steps = 0usize;
    let mut converged = false;

    let delta_k = k - l;
    let subgraph_policy = |x: &DVector<T>| -> DVector<T> {
        let mut sum = DVector::<T>::zeros(n);
        for i in 0..d {
            sum += x.rows(i * n, n);
        }
        let mut u = DVector::<T>::zeros(d * m);
        for i in 0..d {
            let xi = x.rows(i * n, n).into_owned();
            // K̃ row: (K−L)xᵢ + L·Σ_j xⱼ (sum includes i) = Kxᵢ + L·Σ_{j≠i}xⱼ
            u.rows_mut(i * m, m).copy_from(&(&delta_k * xi + l * &sum));
        }
        u
    };

    let mut x_t = sim.subgraph_state();
    let eps = fp::<T>(1e-14);
    for _ in 0..max_steps {
        let e_t = cfg.exploration.sample(rng);
        let u_applied = sim.step_with_exploration(&e_t)?;
        let x_next = sim.subgraph_state();
        let u_next = subgraph_policy(&x_next);

        let z_t = stack(&x_t, &u_applied);
        let z_next = stack(&x_next, &u_next);
        let zeta = if cfg.literal_regressor {
            regressor_literal(&z_t, &z_next)?
        } else {
            regressor(&z_t, &z_next)?
        };
        let target = local_cost(&x_t, &u_applied, q_c, r_c)?;

        if zeta.amax() > eps {
            informative_steps += 1;
        }
        // Row normalization: the Bellman identity is exactly consistent, so
        // rescaling an equation leaves the solution untouched, but it keeps
        // the influence of the 𝒫° = βI prior independent of the feature
        // scale (quartic in the state, hence easily 1e-4 or smaller).
        let scale = zeta.norm();
        if scale > eps {
            rls.update(&(&zeta * (T::one() / scale)), target / scale)?;
        } else {
            rls.update(&zeta, target)?;
        }
        if cfg.record_trace {
            trace.push(SpeTraceRow {
                t: rls.step_count,
                residual: target - zeta.dot(&rls.theta),
                theta_norm: rls.theta.norm(),
            });
        }
        history.push(rls.theta.clone());

        if rls.step_count >= cfg.window && informative_steps >= q_unknowns {
            let prev = &history[rls.step_count - cfg.window];
            let diff = (&rls.theta - prev).amax();
            // scale-aware: an absolute drift bound on θ is meaningless
            // across cost scales, so the tolerance is relative to ‖θ‖∞
            if diff < cfg.tol * (T::one() + rls.theta.amax()) {
                converged = true;
                break;
            }
        }
        x_t = x_next;
    }

    let h = unvech2(&rls.theta, p)?;
    let mut estimate = HEstimate::new(h, d, n, m)?;
    if cfg.project_structure {
        estimate = estimate.project_structure()?;
    }
    let steps = rls.step_count;
    Ok(SpeOutcome {
        estimate,
        converged,
        steps,
        rls,
        trace,
    })
}

fn stack<T: Scalar>(x: &DVector<T>, u: &DVector<T>) -> DVector<T> {
    let mut z = DVector::<T>::zeros(x.len() + u.len());
    z.rows_mut(0, x.len()).copy_from(x);
    z.rows_mut(x.len(), u.len()).copy_from(u);
    z
}
