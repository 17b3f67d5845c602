//! Benchmark execution: variant orchestration (learning, frozen-network
//! comparison, LQR baseline), realized-cost tracking, CSV emission and the
//! agent-count sweep.

use std::fs;
use std::io::Write as _;
use std::time::Instant;

use anyhow::{Context, Result};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use d3pi_core::d3pi::{run_d3pi, D3piConfig, XiVariant};
use d3pi_core::graph::{compound_cost, select_subgraph, sparsity_member, CommGraph};
use d3pi_core::linalg::spectral_radius;
use d3pi_core::lti::{
    build_policy_final, discretize, AgentModel, BlackBoxNetwork, ClosedLoopSim,
    LearnableNetwork,
};
use d3pi_core::oracle::{dare_solve, evaluate_policy_cost, lqr_gain};
use d3pi_core::patterned::pattern_expand;
use d3pi_core::spe::{ExplorationSpec, SpeConfig};
use d3pi_core::Error as CoreError;
use d3pi_core::graph::SubgraphSelection;

use crate::config::{AgentSource, GraphKind, RunConfig, Variant};
use crate::engine::engine_agent;

/// 17 significant digits: round-trippable doubles, diff-able goldens.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Builds the per-agent model from the configuration.
pub fn build_agent(cfg: &RunConfig) -> Result<AgentModel<f64>> {
    match cfg.agent_source {
        AgentSource::Engine => engine_agent(cfg.dt, cfg.normalize),
        AgentSource::Files => {
            let a = crate::config::read_matrix_file(cfg.a_file.as_ref().unwrap())?;
            let b = crate::config::read_matrix_file(cfg.b_file.as_ref().unwrap())?;
            let agent = if cfg.discrete {
                AgentModel::new(a, b)?
            } else {
                discretize(&a, &b, cfg.dt)?
            };
            Ok(if cfg.normalize { agent.normalized()? } else { agent })
        }
    }
}

pub fn build_graph(cfg: &RunConfig) -> Result<CommGraph> {
    Ok(match cfg.graph_kind {
        GraphKind::Path => CommGraph::path(cfg.n_agents),
        GraphKind::Star => CommGraph::star(cfg.n_agents),
        GraphKind::Complete => CommGraph::complete(cfg.n_agents),
        GraphKind::EdgeList => {
            let g = CommGraph::from_edge_list_file(cfg.edge_file.as_ref().unwrap())?;
            if g.node_count() != cfg.n_agents {
                anyhow::bail!(
                    "edge list declares {} nodes but graph.n_agents = {}",
                    g.node_count(),
                    cfg.n_agents
                );
            }
            g
        }
    })
}

/// Closed-loop simulator wrapper that accumulates the realized network
/// cost x̂ᵀQ̂x̂ + ûᵀR̂û and keeps the full state trajectory. For the
/// frozen-network comparison variant it also pins the rows of every
/// installed learning gain outside the subgraph to the initial decoupled
/// feedback.
pub struct RecordingSim {
    inner: ClosedLoopSim<f64>,
    q_hat: DMatrix<f64>,
    r_hat: DMatrix<f64>,
    /// `Some(ΔK₁)`: replace non-subgraph rows of installed gains with this
    /// frozen block-diagonal feedback.
    frozen_outside: Option<DMatrix<f64>>,
    pub cum_cost: f64,
    /// Cumulative cost after each completed step.
    pub cost_trace: Vec<f64>,
    /// Full network state at t = 0, 1, ….
    pub state_trace: Vec<DVector<f64>>,
}

impl RecordingSim {
    pub fn new(
        inner: ClosedLoopSim<f64>,
        q_hat: DMatrix<f64>,
        r_hat: DMatrix<f64>,
        frozen_outside: Option<DMatrix<f64>>,
    ) -> Self {
        let x0 = inner.state().x.clone();
        Self {
            inner,
            q_hat,
            r_hat,
            frozen_outside,
            cum_cost: 0.0,
            cost_trace: Vec::new(),
            state_trace: vec![x0],
        }
    }

    /// Installs a gain verbatim, bypassing the frozen-network override;
    /// used once learn mode ends.
    pub fn install_raw(&mut self, gain: DMatrix<f64>) -> Result<(), CoreError> {
        self.inner.install_gain(gain)
    }

    pub fn steps_taken(&self) -> usize {
        self.state_trace.len() - 1
    }

    pub fn system_agent(&self) -> &AgentModel<f64> {
        self.inner.system().agent()
    }

    pub fn members(&self) -> &[usize] {
        self.inner.selection().members()
    }
}

impl BlackBoxNetwork<f64> for RecordingSim {
    fn subgraph_state(&self) -> DVector<f64> {
        self.inner.subgraph_state()
    }

    fn step_with_exploration(&mut self, exploration: &DVector<f64>) -> Result<DVector<f64>, CoreError> {
        let m = self.inner.system().agent().input_dim();
        let mut u = self.inner.policy_output();
        for (slot, &node) in self.inner.selection().members().iter().enumerate() {
            let add = exploration.rows(slot * m, m).into_owned();
            let mut target = u.rows_mut(node * m, m);
            target += add;
        }
        let x = &self.inner.state().x;
        self.cum_cost += (x.transpose() * &self.q_hat * x)[(0, 0)]
            + (u.transpose() * &self.r_hat * &u)[(0, 0)];

        let d = self.inner.selection().len();
        let mut applied = DVector::<f64>::zeros(d * m);
        for (slot, &node) in self.inner.selection().members().iter().enumerate() {
            applied.rows_mut(slot * m, m).copy_from(&u.rows(node * m, m));
        }
        self.inner.step_with_input(&u)?;
        self.cost_trace.push(self.cum_cost);
        self.state_trace.push(self.inner.state().x.clone());
        Ok(applied)
    }
}

impl LearnableNetwork<f64> for RecordingSim {
    fn selection(&self) -> &SubgraphSelection {
        self.inner.selection()
    }

    fn install_gain(&mut self, mut gain: DMatrix<f64>) -> Result<(), CoreError> {
        if let Some(dk1) = &self.frozen_outside {
            let (m, n) = dk1.shape();
            let big_n = self.inner.system().n_agents();
            for i in 0..big_n {
                if self.inner.selection().contains(i) {
                    continue;
                }
                gain.view_mut((i * m, 0), (m, n * big_n)).fill(0.0);
                gain.view_mut((i * m, i * n), (m, n)).copy_from(dk1);
            }
        }
        self.inner.install_gain(gain)
    }
}

/// Key numbers extracted from one run; the sweep aggregates these.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub variant: Variant,
    pub n_agents: usize,
    pub final_cum_cost: f64,
    pub learning_steps: usize,
    pub spe_wall_secs: f64,
    pub outer_iterations: usize,
    pub sparsity_ok: bool,
    pub final_gain: DMatrix<f64>,
}

/// Executes the configured variant and writes states.csv, costs.csv,
/// gains.csv and meta.txt into `cfg.out_dir`.
pub fn run_benchmark(cfg: &RunConfig) -> Result<RunSummary> {
    let agent = build_agent(cfg)?;
    let g = build_graph(cfg)?;
    let sel = select_subgraph(&g);
    let d = sel.len();
    let (n, m) = (agent.state_dim(), agent.input_dim());
    let big_n = g.node_count();

    let q1 = cfg.q1.build(n)?;
    let q2 = cfg.q2.build(n)?;
    let r = cfg.r.build(m)?;
    let (q_hat, r_hat) = compound_cost(&g, &q1, &q2, &r)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut x0 = DVector::<f64>::zeros(big_n * n);
    for v in x0.iter_mut() {
        *v = rng.gen_range(-1.0..1.0) * cfg.x0_scale;
    }

    // model knowledge is used only here: a deliberately detuned stabilizing
    // initialization (inflated input penalty)
    let p1 = dare_solve(agent.a(), agent.b(), &q1, &(&r * cfg.k1_r_scale))?;
    let k1 = lqr_gain(agent.a(), agent.b(), &p1, &(&r * cfg.k1_r_scale))?;

    let sys = d3pi_core::lti::CompoundSystem::new(agent.clone(), big_n)?;
    let mut gains_rows: Vec<GainRow> = Vec::new();

    let (summary, sim) = match cfg.variant {
        Variant::LqrBaseline => {
            let eye = DMatrix::<f64>::identity(big_n, big_n);
            let a_hat = d3pi_core::linalg::kron(&eye, agent.a());
            let b_hat = d3pi_core::linalg::kron(&eye, agent.b());
            let p_hat = dare_solve(&a_hat, &b_hat, &q_hat, &r_hat)?;
            let k_hat = lqr_gain(&a_hat, &b_hat, &p_hat, &r_hat)?;
            let sim0 = ClosedLoopSim::new(sys, sel.clone(), k_hat.clone(), x0)?;
            let mut sim = RecordingSim::new(sim0, q_hat.clone(), r_hat.clone(), None);
            let zero_e = DVector::<f64>::zeros(d * m);
            for _ in 0..cfg.horizon {
                sim.step_with_exploration(&zero_e)?;
            }
            let summary = RunSummary {
                variant: cfg.variant,
                n_agents: big_n,
                final_cum_cost: sim.cum_cost,
                learning_steps: 0,
                spe_wall_secs: 0.0,
                outer_iterations: 0,
                // the unstructured gain is dense; sparsity applies to the
                // distributed variants only
                sparsity_ok: true,
                final_gain: k_hat,
            };
            (summary, sim)
        }
        Variant::D3piOn | Variant::D3piOff => {
            let initial_gain = build_policy_final(&k1, &DMatrix::zeros(m, n), 0.0, d, &g)?;
            let frozen = if cfg.variant == Variant::D3piOff {
                Some(k1.clone())
            } else {
                None
            };
            let sim0 = ClosedLoopSim::new(sys, sel.clone(), initial_gain, x0)?;
            let mut sim = RecordingSim::new(sim0, q_hat.clone(), r_hat.clone(), frozen);

            let mut spe = SpeConfig::default_for(d, m);
            spe.beta = cfg.beta;
            spe.exploration = ExplorationSpec::isotropic(d * m, cfg.exploration_var);
            spe.tol = cfg.spe_tol;
            spe.window = cfg.spe_window;
            spe.max_steps = cfg.spe_max_steps;
            let mut d3cfg = D3piConfig::new(q1.clone(), q2.clone(), r.clone(), k1.clone(), spe);
            d3cfg.outer_tol = cfg.outer_tol;
            d3cfg.max_outer_iters = cfg.max_outer;
            d3cfg.xi_variant = if cfg.xi_with_q2 {
                XiVariant::WithQ2
            } else {
                XiVariant::WithoutQ2
            };

            let started = Instant::now();
            let result = run_d3pi(&mut sim, &g, &d3cfg, &mut rng)?;
            let spe_wall_secs = started.elapsed().as_secs_f64();
            let learning_steps = sim.steps_taken();

            for state in &result.history {
                let dk = state.delta_k();
                let rho_dk = spectral_radius(&(agent.a() + agent.b() * &dk));
                let k_hat_k = build_policy_final(&state.k_mat, &state.l_mat, state.tau, d, &g)?;
                let eye = DMatrix::<f64>::identity(big_n, big_n);
                let acl = d3pi_core::linalg::kron(&eye, agent.a())
                    + d3pi_core::linalg::kron(&eye, agent.b()) * &k_hat_k;
                let rho_net = spectral_radius(&acl);
                gains_rows.push(GainRow {
                    iter: state.k,
                    gamma: state.gamma,
                    tau: state.tau,
                    rho_delta_k: rho_dk,
                    rho_network: rho_net,
                    k_mat: state.k_mat.clone(),
                    l_mat: state.l_mat.clone(),
                });
            }

            sim.install_raw(result.final_policy.clone())?;
            let zero_e = DVector::<f64>::zeros(d * m);
            for _ in learning_steps..cfg.horizon {
                sim.step_with_exploration(&zero_e)?;
            }

            let sparsity_ok = sparsity_member(&result.final_policy, &g, m, n, 0.0)?;
            let summary = RunSummary {
                variant: cfg.variant,
                n_agents: big_n,
                final_cum_cost: sim.cum_cost,
                learning_steps,
                spe_wall_secs,
                outer_iterations: result.history.len() - 1,
                sparsity_ok,
                final_gain: result.final_policy,
            };
            (summary, sim)
        }
    };

    write_outputs(cfg, &summary, &sim, &gains_rows, &agent, &g, &q1, &q2, &r)?;
    Ok(summary)
}

struct GainRow {
    iter: usize,
    gamma: f64,
    tau: f64,
    rho_delta_k: f64,
    rho_network: f64,
    k_mat: DMatrix<f64>,
    l_mat: DMatrix<f64>,
}

#[allow(clippy::too_many_arguments)]
fn write_outputs(
    cfg: &RunConfig,
    summary: &RunSummary,
    sim: &RecordingSim,
    gains_rows: &[GainRow],
    agent: &AgentModel<f64>,
    g: &CommGraph,
    q1: &DMatrix<f64>,
    q2: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<()> {
    let out = &cfg.out_dir;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let n = agent.state_dim();
    let m = agent.input_dim();
    let big_n = g.node_count();

    // states.csv: one row per agent per time step
    let mut f = fs::File::create(out.join("states.csv"))?;
    let mut header = String::from("t,agent_id");
    for i in 1..=n {
        header.push_str(&format!(",x{i}"));
    }
    writeln!(f, "{header}")?;
    for (t, x) in sim.state_trace.iter().enumerate() {
        for a in 0..big_n {
            let mut row = format!("{t},{a}");
            for i in 0..n {
                row.push(',');
                row.push_str(&fmt_f64(x[a * n + i]));
            }
            writeln!(f, "{row}")?;
        }
    }

    // costs.csv: cumulative realized network cost
    let mut f = fs::File::create(out.join("costs.csv"))?;
    writeln!(f, "t,cumulative_cost")?;
    for (i, c) in sim.cost_trace.iter().enumerate() {
        writeln!(f, "{},{}", i + 1, fmt_f64(*c))?;
    }

    // gains.csv: one row per outer iterate
    let mut f = fs::File::create(out.join("gains.csv"))?;
    let mut header = String::from("iter,gamma,tau,rho_delta_k,rho_network");
    for i in 0..m {
        for j in 0..n {
            header.push_str(&format!(",K_{i}_{j}"));
        }
    }
    for i in 0..m {
        for j in 0..n {
            header.push_str(&format!(",L_{i}_{j}"));
        }
    }
    writeln!(f, "{header}")?;
    for row in gains_rows {
        let mut line = format!(
            "{},{},{},{},{}",
            row.iter,
            fmt_f64(row.gamma),
            fmt_f64(row.tau),
            fmt_f64(row.rho_delta_k),
            fmt_f64(row.rho_network)
        );
        for i in 0..m {
            for j in 0..n {
                line.push(',');
                line.push_str(&fmt_f64(row.k_mat[(i, j)]));
            }
        }
        for i in 0..m {
            for j in 0..n {
                line.push(',');
                line.push_str(&fmt_f64(row.l_mat[(i, j)]));
            }
        }
        writeln!(f, "{line}")?;
    }

    // meta.txt: effective config + derived quantities
    let mut f = fs::File::create(out.join("meta.txt"))?;
    for (k, v) in cfg.echo() {
        writeln!(f, "{k} = {v}")?;
    }
    writeln!(f, "derived.subgraph_members = {:?}", sim.members())?;
    writeln!(f, "derived.learning_steps = {}", summary.learning_steps)?;
    writeln!(f, "derived.outer_iterations = {}", summary.outer_iterations)?;
    writeln!(f, "derived.spe_wall_secs = {}", fmt_f64(summary.spe_wall_secs))?;
    writeln!(f, "derived.sparsity_ok = {}", summary.sparsity_ok)?;
    writeln!(
        f,
        "derived.realized_cumulative_cost = {}",
        fmt_f64(summary.final_cum_cost)
    )?;
    // the Lyapunov-based index assumes identity initial-state covariance
    // and no exploration; labeled separately from the realized cost above
    match evaluate_policy_cost(&summary.final_gain, g, agent, q1, q2, r) {
        Ok(idx) => writeln!(f, "derived.lyapunov_cost_index = {}", fmt_f64(idx))?,
        Err(e) => writeln!(f, "derived.lyapunov_cost_index = unavailable ({e})")?,
    }
    writeln!(f, "derived.converged = true")?;
    Ok(())
}

/// Runs all three variants for each agent count and writes `sweep.csv`.
/// Entries run as independent threads, each with its own output
/// subdirectory; the summary is merged in ascending N order.
pub fn sweep_agents(cfg: &RunConfig, n_list: &[usize]) -> Result<Vec<SweepRow>> {
    let variants = [Variant::LqrBaseline, Variant::D3piOn, Variant::D3piOff];
    let mut handles = Vec::new();
    for &n_agents in n_list {
        let base = cfg.clone();
        handles.push((
            n_agents,
            std::thread::spawn(move || -> Result<SweepRow> {
                let mut row = SweepRow {
                    n_agents,
                    cost_lqr_baseline: 0.0,
                    cost_d3pi_on: 0.0,
                    cost_d3pi_off: 0.0,
                    spe_wall_secs: 0.0,
                };
                for variant in variants {
                    let mut c = base.clone();
                    c.n_agents = n_agents;
                    c.variant = variant;
                    c.out_dir = base
                        .out_dir
                        .join(format!("n{n_agents:02}"))
                        .join(variant.as_str());
                    let s = run_benchmark(&c)?;
                    match variant {
                        Variant::LqrBaseline => row.cost_lqr_baseline = s.final_cum_cost,
                        Variant::D3piOn => {
                            row.cost_d3pi_on = s.final_cum_cost;
                            row.spe_wall_secs = s.spe_wall_secs;
                        }
                        Variant::D3piOff => row.cost_d3pi_off = s.final_cum_cost,
                    }
                }
                Ok(row)
            }),
        ));
    }
    let mut rows = Vec::new();
    for (n_agents, h) in handles {
        let row = h
            .join()
            .map_err(|_| anyhow::anyhow!("sweep worker for N={n_agents} panicked"))??;
        rows.push(row);
    }
    rows.sort_by_key(|r| r.n_agents);

    fs::create_dir_all(&cfg.out_dir)?;
    let mut f = fs::File::create(cfg.out_dir.join("sweep.csv"))?;
    writeln!(
        f,
        "n_agents,cost_lqr_baseline,cost_d3pi_on,cost_d3pi_off,spe_wall_secs"
    )?;
    for row in &rows {
        writeln!(
            f,
            "{},{},{},{},{}",
            row.n_agents,
            fmt_f64(row.cost_lqr_baseline),
            fmt_f64(row.cost_d3pi_on),
            fmt_f64(row.cost_d3pi_off),
            fmt_f64(row.spe_wall_secs)
        )?;
    }
    Ok(rows)
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub n_agents: usize,
    pub cost_lqr_baseline: f64,
    pub cost_d3pi_on: f64,
    pub cost_d3pi_off: f64,
    pub spe_wall_secs: f64,
}

/// Parses an agent-count specification: `5..30` (inclusive) or a
/// comma-separated list.
pub fn parse_agent_list(spec: &str) -> Result<Vec<usize>> {
    if let Some((lo, hi)) = spec.split_once("..") {
        let lo: usize = lo.trim().parse().context("sweep range start")?;
        let hi: usize = hi.trim().parse().context("sweep range end")?;
        anyhow::ensure!(lo <= hi, "empty sweep range {spec}");
        return Ok((lo..=hi).collect());
    }
    spec.split(',')
        .map(|s| s.trim().parse::<usize>().context("agent count"))
        .collect()
}

/// Oracle-equivalence self checks; returns a list of (name, passed).
pub fn selftest() -> Vec<(&'static str, bool)> {
    let mut results = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1234);

    // patterned inverse vs dense inverse on random PD patterned matrices
    let mut ok = true;
    for _ in 0..20 {
        let r_blocks = rng.gen_range(2..=5usize);
        let nb = rng.gen_range(1..=3usize);
        let raw = DMatrix::<f64>::from_fn(nb, nb, |_, _| rng.gen_range(-1.0..1.0));
        let off = (&raw + raw.transpose()) * 0.5;
        // diagonally dominant so both eigenspace blocks are PD
        let diag = DMatrix::<f64>::identity(nb, nb) * (off.norm() * (r_blocks as f64) + 1.0);
        let pm = d3pi_core::patterned::PatternedMatrix::new(r_blocks, diag, off).unwrap();
        let dense_inv = pm.to_dense().try_inverse().unwrap();
        let structured = pm.inverse().unwrap().to_dense();
        if (dense_inv - structured).norm() > 1e-9 {
            ok = false;
        }
    }
    results.push(("patterned_inverse_vs_dense", ok));

    // scalar Riccati fixed point with a known closed form
    let p = dare_solve(
        &DMatrix::from_element(1, 1, 1.0),
        &DMatrix::from_element(1, 1, 1.0),
        &DMatrix::from_element(1, 1, 1.0),
        &DMatrix::from_element(1, 1, 1.0),
    );
    let golden = (1.0 + 5.0f64.sqrt()) / 2.0;
    results.push((
        "dare_scalar_fixed_point",
        p.map(|p| (p[(0, 0)] - golden).abs() < 1e-9).unwrap_or(false),
    ));

    // model-based policy-iteration sweep reaches the structured optimum
    let agent = AgentModel::new(
        DMatrix::from_element(1, 1, 0.9),
        DMatrix::from_element(1, 1, 1.0),
    )
    .unwrap();
    let q = DMatrix::from_element(1, 1, 1.0);
    let ok = model_based_shadow_check(&agent, &q, &q, &q, 3, 1e-8).unwrap_or(false);
    results.push(("model_based_policy_iteration_fixed_point", ok));

    results
}

/// Runs the noise-free policy-iteration shadow (exact H each sweep) and
/// compares its fixed point to the structured optimum.
pub fn model_based_shadow_check(
    agent: &AgentModel<f64>,
    q1: &DMatrix<f64>,
    q2: &DMatrix<f64>,
    r: &DMatrix<f64>,
    d: usize,
    tol: f64,
) -> Result<bool> {
    use d3pi_core::d3pi::{compute_fg, recover_blocks, update_gains};
    use d3pi_core::graph::subgraph_cost;
    use d3pi_core::oracle::{assemble_h, structured_optimal};

    let (n, m) = (agent.state_dim(), agent.input_dim());
    let (q_c, r_c) = subgraph_cost(d, q1, q2, r)?;
    let (q_c, r_c) = (q_c.to_dense(), r_c.to_dense());
    let p1 = dare_solve(agent.a(), agent.b(), q1, &(r * 10.0))?;
    let mut k = lqr_gain(agent.a(), agent.b(), &p1, &(r * 10.0))?;
    let mut l = DMatrix::<f64>::zeros(m, n);
    for _ in 0..60 {
        let k_t = pattern_expand(d, &k, &l);
        let h = assemble_h(agent, &q_c, &r_c, &k_t, d)?;
        let blocks = recover_blocks(&h, d, n, m)?;
        let (f, g) = compute_fg(&blocks.y1, &blocks.y2, d)?;
        let (k_next, l_next) = update_gains(&f, &g, &blocks.z1, &blocks.z2, d)?;
        let step = (&k_next - &k).norm() + (&l_next - &l).norm();
        k = k_next;
        l = l_next;
        if step < tol {
            break;
        }
    }
    let (k_star, l_star, _) = structured_optimal(agent, q1, q2, r, d)?;
    Ok((&k - &k_star).norm() < 1e-6 && (&l - &l_star).norm() < 1e-6)
}
