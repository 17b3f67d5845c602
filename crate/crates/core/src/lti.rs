//! The networked plant: identical decoupled LTI agents, compound feedback
//! gains for the learning and post-learning phases, and the black-box
//! simulation channel the learner is restricted to.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::graph::{CommGraph, SubgraphSelection};
use crate::linalg;
use crate::scalar::{fp, Scalar};

/// Any state entry beyond this magnitude aborts a run as divergent.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

/// A single agent's dynamics x⁺ = A x + B u. Controllability of (A, B) is
/// validated at construction.
#[derive(Debug, Clone)]
pub struct AgentModel<T: Scalar> {
    a: DMatrix<T>,
    b: DMatrix<T>,
}

impl<T: Scalar> AgentModel<T> {
    pub fn new(a: DMatrix<T>, b: DMatrix<T>) -> Result<Self> {
        if !a.is_square() || b.nrows() != a.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "A is {}x{}, B is {}x{}",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols()
            )));
        }
        if !linalg::is_controllable(&a, &b) {
            return Err(Error::NotControllable);
        }
        Ok(Self { a, b })
    }

    pub fn a(&self) -> &DMatrix<T> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<T> {
        &self.b
    }

    /// State dimension n.
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    /// Input dimension m.
    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    /// Rescales the states by the square root of the diagonal of the
    /// n-step controllability Gramian: A ← T⁻¹AT, B ← T⁻¹B with
    /// T = diag(√W_ii). Off by default in the benchmarks.
    pub fn normalized(&self) -> Result<Self> {
        let n = self.state_dim();
        let mut gram = DMatrix::<T>::zeros(n, n);
        let mut block = self.b.clone();
        for _ in 0..n {
            gram += &block * block.transpose();
            block = &self.a * &block;
        }
        let mut scale = DVector::<T>::zeros(n);
        for i in 0..n {
            let w = gram[(i, i)];
            if w <= T::zero() {
                return Err(Error::InvalidInput(
                    "controllability Gramian has a nonpositive diagonal entry".into(),
                ));
            }
            scale[i] = w.sqrt();
        }
        let t = DMatrix::from_diagonal(&scale);
        let t_inv = DMatrix::from_diagonal(&scale.map(|s| T::one() / s));
        Self::new(&t_inv * &self.a * &t, t_inv * &self.b)
    }
}

/// Zero-order-hold discretization of (Ac, Bc) at step `dt` via the
/// augmented matrix exponential exp([[Ac, Bc], [0, 0]]·dt).
pub fn discretize<T: Scalar>(ac: &DMatrix<T>, bc: &DMatrix<T>, dt: T) -> Result<AgentModel<T>> {
    if dt <= T::zero() {
        return Err(Error::InvalidInput("dt must be positive".into()));
    }
    if !ac.is_square() || bc.nrows() != ac.nrows() {
        return Err(Error::DimensionMismatch("discretize: Ac/Bc shapes".into()));
    }
    let n = ac.nrows();
    let m = bc.ncols();
    let mut aug = DMatrix::<T>::zeros(n + m, n + m);
    aug.view_mut((0, 0), (n, n)).copy_from(&(ac * dt));
    aug.view_mut((0, n), (n, m)).copy_from(&(bc * dt));
    let e = aug.exp();
    let ad = e.view((0, 0), (n, n)).into_owned();
    let bd = e.view((0, n), (n, m)).into_owned();
    AgentModel::new(ad, bd)
}

/// The network-lifted system: N copies of one agent. The Kronecker lifts
/// are never materialized for stepping.
#[derive(Debug, Clone)]
pub struct CompoundSystem<T: Scalar> {
    agent: AgentModel<T>,
    n_agents: usize,
}

impl<T: Scalar> CompoundSystem<T> {
    pub fn new(agent: AgentModel<T>, n_agents: usize) -> Result<Self> {
        if n_agents == 0 {
            return Err(Error::InvalidInput("need at least one agent".into()));
        }
        Ok(Self { agent, n_agents })
    }

    pub fn agent(&self) -> &AgentModel<T> {
        &self.agent
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn state_dim(&self) -> usize {
        self.n_agents * self.agent.state_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.n_agents * self.agent.input_dim()
    }

    /// Dense network lift (I_N ⊗ A, I_N ⊗ B); test/diagnostic use only.
    pub fn dense_lift(&self) -> (DMatrix<T>, DMatrix<T>) {
        let eye = DMatrix::<T>::identity(self.n_agents, self.n_agents);
        (
            linalg::kron(&eye, self.agent.a()),
            linalg::kron(&eye, self.agent.b()),
        )
    }

    /// Subgraph lift (I_d ⊗ A, I_d ⊗ B).
    pub fn subgraph_lift(&self, d: usize) -> (DMatrix<T>, DMatrix<T>) {
        let eye = DMatrix::<T>::identity(d, d);
        (
            linalg::kron(&eye, self.agent.a()),
            linalg::kron(&eye, self.agent.b()),
        )
    }
}

/// Stacked network state at a time index.
#[derive(Debug, Clone)]
pub struct NetworkState<T: Scalar> {
    pub t: usize,
    pub x: DVector<T>,
}

impl<T: Scalar> NetworkState<T> {
    pub fn new(x: DVector<T>) -> Self {
        Self { t: 0, x }
    }
}

/// Advances the whole network one step, agent by agent.
pub fn step<T: Scalar>(
    sys: &CompoundSystem<T>,
    state: &NetworkState<T>,
    u: &DVector<T>,
) -> Result<NetworkState<T>> {
    let n = sys.agent.state_dim();
    let m = sys.agent.input_dim();
    if u.len() != sys.input_dim() || state.x.len() != sys.state_dim() {
        return Err(Error::DimensionMismatch(format!(
            "step: state len {}, input len {}",
            state.x.len(),
            u.len()
        )));
    }
    let mut next = DVector::<T>::zeros(state.x.len());
    for i in 0..sys.n_agents {
        let xi = state.x.rows(i * n, n);
        let ui = u.rows(i * m, m);
        next.rows_mut(i * n, n)
            .copy_from(&(sys.agent.a() * xi + sys.agent.b() * ui));
    }
    let inf = next.amax();
    if inf > fp(DIVERGENCE_LIMIT) || !inf.is_finite() {
        return Err(Error::Divergence(inf.to_subset().unwrap_or(f64::NAN)));
    }
    Ok(NetworkState {
        t: state.t + 1,
        x: next,
    })
}

/// Stacks the states of the subgraph members in their frozen order.
pub fn observe<T: Scalar>(
    sys: &CompoundSystem<T>,
    state: &NetworkState<T>,
    sel: &SubgraphSelection,
) -> DVector<T> {
    let n = sys.agent.state_dim();
    let mut out = DVector::<T>::zeros(sel.len() * n);
    for (slot, &node) in sel.members().iter().enumerate() {
        out.rows_mut(slot * n, n).copy_from(&state.x.rows(node * n, n));
    }
    out
}

/// Learning-phase compound gain. Agents in the completed subgraph feed back
/// on every other subgraph member; the rest of the network applies the
/// margin-scaled cooperative term over its original neighbors. Information
/// flow into the subgraph is blocked: subgraph rows only reference subgraph
/// members.
pub fn build_policy_learning<T: Scalar>(
    k: &DMatrix<T>,
    l: &DMatrix<T>,
    tau: T,
    g: &CommGraph,
    sel: &SubgraphSelection,
) -> Result<DMatrix<T>> {
    check_gain_dims(k, l)?;
    let (m, n) = k.shape();
    let big_n = g.node_count();
    let d = sel.len();
    if d < 2 || d > big_n {
        return Err(Error::InvalidInput(format!(
            "subgraph size {d} invalid for {big_n} nodes"
        )));
    }
    let delta_k = k - l;
    let coop = l * (tau / fp::<T>((d - 1) as f64));
    let mut gain = DMatrix::<T>::zeros(m * big_n, n * big_n);
    for i in 0..big_n {
        gain.view_mut((i * m, i * n), (m, n)).copy_from(&delta_k);
        if sel.contains(i) {
            // restriction to the learning subgraph must equal the patterned
            // K̃ = I⊗(K−L) + 𝟙𝟙ᵀ⊗L exactly (its 𝟙𝟙ᵀ term contributes L on
            // the diagonal too), otherwise policy evaluation estimates the
            // Q-function of a different policy than the update assumes
            gain.view_mut((i * m, i * n), (m, n)).copy_from(k);
            for &j in sel.members() {
                if j != i {
                    gain.view_mut((i * m, j * n), (m, n)).copy_from(l);
                }
            }
        } else {
            for j in g.neighbors(i) {
                gain.view_mut((i * m, j * n), (m, n)).copy_from(&coop);
            }
        }
    }
    Ok(gain)
}

/// Post-learning distributed gain on the original topology:
/// uᵢ = (K−L)xᵢ + (τ/(d−1))·L·Σ_{j∈𝒩ᵢ} xⱼ. Structural zeros are exact.
pub fn build_policy_final<T: Scalar>(
    k: &DMatrix<T>,
    l: &DMatrix<T>,
    tau: T,
    d: usize,
    g: &CommGraph,
) -> Result<DMatrix<T>> {
    check_gain_dims(k, l)?;
    if d < 2 {
        return Err(Error::InvalidInput(format!("need d >= 2, got {d}")));
    }
    let (m, n) = k.shape();
    let big_n = g.node_count();
    let delta_k = k - l;
    let coop = l * (tau / fp::<T>((d - 1) as f64));
    let mut gain = DMatrix::<T>::zeros(m * big_n, n * big_n);
    for i in 0..big_n {
        gain.view_mut((i * m, i * n), (m, n)).copy_from(&delta_k);
        for j in g.neighbors(i) {
            gain.view_mut((i * m, j * n), (m, n)).copy_from(&coop);
        }
    }
    Ok(gain)
}

fn check_gain_dims<T: Scalar>(k: &DMatrix<T>, l: &DMatrix<T>) -> Result<()> {
    if k.shape() != l.shape() {
        return Err(Error::DimensionMismatch(format!(
            "K is {:?}, L is {:?}",
            k.shape(),
            l.shape()
        )));
    }
    Ok(())
}

/// The only channel the learning code may use: step the closed-loop network
/// with optional exploration on the subgraph inputs, and read subgraph
/// states back.
pub trait BlackBoxNetwork<T: Scalar> {
    /// Stacked states of the subgraph members at the current time.
    fn subgraph_state(&self) -> DVector<T>;

    /// Applies the installed policy plus `exploration` added to the subgraph
    /// members' inputs, then advances one step. Returns the inputs actually
    /// applied to the subgraph members (stacked in subgraph order).
    fn step_with_exploration(&mut self, exploration: &DVector<T>) -> Result<DVector<T>>;
}

/// What the outer learning loop needs on top of the black-box channel:
/// the frozen subgraph selection and the ability to swap the installed
/// compound policy between iterations.
pub trait LearnableNetwork<T: Scalar>: BlackBoxNetwork<T> {
    fn selection(&self) -> &SubgraphSelection;

    fn install_gain(&mut self, gain: DMatrix<T>) -> Result<()>;
}

/// Closed-loop simulator owning the plant, the installed compound gain and
/// the evolving state.
pub struct ClosedLoopSim<T: Scalar> {
    sys: CompoundSystem<T>,
    sel: SubgraphSelection,
    gain: DMatrix<T>,
    state: NetworkState<T>,
}

impl<T: Scalar> ClosedLoopSim<T> {
    pub fn new(
        sys: CompoundSystem<T>,
        sel: SubgraphSelection,
        gain: DMatrix<T>,
        x0: DVector<T>,
    ) -> Result<Self> {
        if gain.nrows() != sys.input_dim() || gain.ncols() != sys.state_dim() {
            return Err(Error::DimensionMismatch("compound gain shape".into()));
        }
        if x0.len() != sys.state_dim() {
            return Err(Error::DimensionMismatch("initial state length".into()));
        }
        Ok(Self {
            sys,
            sel,
            gain,
            state: NetworkState::new(x0),
        })
    }

    pub fn install_gain(&mut self, gain: DMatrix<T>) -> Result<()> {
        if gain.shape() != self.gain.shape() {
            return Err(Error::DimensionMismatch("compound gain shape".into()));
        }
        self.gain = gain;
        Ok(())
    }

    pub fn system(&self) -> &CompoundSystem<T> {
        &self.sys
    }

    pub fn selection(&self) -> &SubgraphSelection {
        &self.sel
    }

    pub fn state(&self) -> &NetworkState<T> {
        &self.state
    }

    /// Full policy output for the current state (before exploration).
    pub fn policy_output(&self) -> DVector<T> {
        &self.gain * &self.state.x
    }

    /// Steps with a full-network input vector; used by the harness variants.
    pub fn step_with_input(&mut self, u: &DVector<T>) -> Result<()> {
        self.state = step(&self.sys, &self.state, u)?;
        Ok(())
    }
}

impl<T: Scalar> LearnableNetwork<T> for ClosedLoopSim<T> {
    fn selection(&self) -> &SubgraphSelection {
        &self.sel
    }

    fn install_gain(&mut self, gain: DMatrix<T>) -> Result<()> {
        ClosedLoopSim::install_gain(self, gain)
    }
}

impl<T: Scalar> BlackBoxNetwork<T> for ClosedLoopSim<T> {
    fn subgraph_state(&self) -> DVector<T> {
        observe(&self.sys, &self.state, &self.sel)
    }

    fn step_with_exploration(&mut self, exploration: &DVector<T>) -> Result<DVector<T>> {
        let m = self.sys.agent().input_dim();
        let mut u = self.policy_output();
        for (slot, &node) in self.sel.members().iter().enumerate() {
            let add = exploration.rows(slot * m, m).into_owned();
            let mut target = u.rows_mut(node * m, m);
            target += add;
        }
        let mut applied = DVector::<T>::zeros(self.sel.len() * m);
        for (slot, &node) in self.sel.members().iter().enumerate() {
            applied.rows_mut(slot * m, m).copy_from(&u.rows(node * m, m));
        }
        self.state = step(&self.sys, &self.state, &u)?;
        Ok(applied)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{select_subgraph, sparsity_member};
    use nalgebra::{dmatrix, dvector};

    fn scalar_agent(a: f64, b: f64) -> AgentModel<f64> {
        AgentModel::new(dmatrix![a], dmatrix![b]).unwrap()
    }

    #[test]
    fn step_identity_cancel() {
        let sys = CompoundSystem::new(scalar_agent(1.0, 1.0), 1).unwrap();
        let s = NetworkState::new(dvector![1.0]);
        let next = step(&sys, &s, &dvector![-1.0]).unwrap();
        assert_eq!(next.x, dvector![0.0]);
        assert_eq!(next.t, 1);
    }

    #[test]
    fn nilpotent_reaches_zero_in_two_steps() {
        let a = dmatrix![0.0, 1.0; 0.0, 0.0];
        let b = dmatrix![0.0; 1.0];
        let sys = CompoundSystem::new(AgentModel::new(a, b).unwrap(), 1).unwrap();
        let mut s = NetworkState::new(dvector![3.0, -2.0]);
        let u = dvector![0.0];
        s = step(&sys, &s, &u).unwrap();
        s = step(&sys, &s, &u).unwrap();
        assert_eq!(s.x, dvector![0.0, 0.0]);
    }

    #[test]
    fn divergence_flagged() {
        let sys = CompoundSystem::new(scalar_agent(2.0, 1.0), 1).unwrap();
        let mut s = NetworkState::new(dvector![1.0]);
        let u = dvector![0.0];
        let mut diverged = false;
        for _ in 0..60 {
            match step(&sys, &s, &u) {
                Ok(next) => s = next,
                Err(Error::Divergence(_)) => {
                    diverged = true;
                    break;
                }
                Err(e) => panic!("unexpected error {e}"),
            }
        }
        assert!(diverged);
    }

    #[test]
    fn observe_frozen_order() {
        let sys = CompoundSystem::new(scalar_agent(1.0, 1.0), 5).unwrap();
        let state = NetworkState::new(dvector![10.0, 20.0, 30.0, 40.0, 50.0]);
        let sel = select_subgraph(&CommGraph::path(5)); // members [1, 0, 2]
        assert_eq!(observe(&sys, &state, &sel), dvector![20.0, 10.0, 30.0]);
    }

    #[test]
    fn learning_policy_zero_l_is_block_diag() {
        let g = CommGraph::path(5);
        let sel = select_subgraph(&g);
        let k = dmatrix![-0.4];
        let l = dmatrix![0.0];
        let gain = build_policy_learning(&k, &l, 0.3, &g, &sel).unwrap();
        assert_eq!(gain, DMatrix::identity(5, 5) * -0.4);
    }

    #[test]
    fn learning_policy_whole_graph_is_patterned() {
        let g = CommGraph::complete(3);
        let sel = select_subgraph(&g);
        let k = dmatrix![-0.4];
        let l = dmatrix![0.1];
        let gain = build_policy_learning(&k, &l, 0.3, &g, &sel).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                // patterned K̃: diagonal block K, off-diagonal block L
                let want: f64 = if i == j { -0.4 } else { 0.1 };
                assert!((gain[(i, j)] - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn learning_policy_two_case_formula() {
        // path 0-1-2-3-4, subgraph {1,0,2}, scalar gains
        let g = CommGraph::path(5);
        let sel = select_subgraph(&g);
        let (k, l, tau) = (0.7f64, 0.2f64, 0.4f64);
        let gain =
            build_policy_learning(&dmatrix![k], &dmatrix![l], tau, &g, &sel).unwrap();
        let c = tau / 2.0 * l;
        let dk = k - l;
        #[rustfmt::skip]
        let want = dmatrix![
            k,   l,   l,   0.0, 0.0;
            l,   k,   l,   0.0, 0.0;
            l,   l,   k,   0.0, 0.0;
            0.0, 0.0, c,   dk,  c;
            0.0, 0.0, 0.0, c,   dk
        ];
        assert!((gain - want).norm() < 1e-14);
    }

    #[test]
    fn final_policy_edgeless_and_sparsity() {
        let g = CommGraph::edgeless(3);
        let gain = build_policy_final(&dmatrix![0.7], &dmatrix![0.2], 0.4, 3, &g).unwrap();
        assert!((gain - DMatrix::identity(3, 3) * 0.5).amax() < 1e-15);

        let g = CommGraph::path(4);
        let gain = build_policy_final(&dmatrix![0.7], &dmatrix![0.2], 0.4, 3, &g).unwrap();
        assert!(sparsity_member(&gain, &g, 1, 1, 0.0).unwrap());
        // edge block value (τ/(d−1))·L
        assert!((gain[(0, 1)] - 0.4f64 / 2.0 * 0.2).abs() < 1e-15);
    }

    #[test]
    fn discretize_integrator_and_scalar() {
        let ad = discretize(&DMatrix::<f64>::zeros(2, 2), &DMatrix::identity(2, 2), 0.1).unwrap();
        assert!((ad.a() - DMatrix::identity(2, 2)).norm() < 1e-12);
        assert!((ad.b() - DMatrix::identity(2, 2) * 0.1).norm() < 1e-12);

        let s = discretize(&dmatrix![-1.0], &dmatrix![1.0], 1.0).unwrap();
        assert!((s.a()[(0, 0)] - (-1.0f64).exp()).abs() < 1e-12);
        assert!((s.b()[(0, 0)] - (1.0 - (-1.0f64).exp())).abs() < 1e-12);
    }
}
