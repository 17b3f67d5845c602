//! Acceptance suite for the core library. Each test covers one numbered
//! criterion and prints a single pass line on success (failures panic with
//! context).

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use d3pi_core::d3pi::{compute_fg, recover_blocks, run_d3pi, update_gains, D3piConfig};
use d3pi_core::graph::{select_subgraph, sparsity_member, subgraph_cost, CommGraph};
use d3pi_core::linalg::{is_posdef, kron, sigma_max, spectral_radius, sym_part};
use d3pi_core::lti::{AgentModel, BlackBoxNetwork, ClosedLoopSim, CompoundSystem};
use d3pi_core::oracle::{assemble_h, dare_solve, lqr_gain, structured_optimal};
use d3pi_core::patterned::{pattern_expand, PatternedMatrix};
use d3pi_core::spe::{run_spe, vech2, HEstimate, SpeConfig};

fn random_symmetric(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DMatrix<f64> {
    let raw = DMatrix::<f64>::from_fn(n, n, |_, _| rng.gen_range(-scale..scale));
    sym_part(&raw)
}

/// Random patterned matrix whose eigenspace blocks are both PD.
fn random_pd_patterned(rng: &mut ChaCha8Rng, r: usize, n: usize) -> PatternedMatrix<f64> {
    let off = random_symmetric(rng, n, 1.0);
    let shift = sigma_max(&off) * (r as f64) + rng.gen_range(0.5..2.0);
    let w = DMatrix::<f64>::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let diag = &w * w.transpose() + DMatrix::identity(n, n) * shift;
    PatternedMatrix::new(r, diag, off).unwrap()
}

/// Reference discrete Lyapunov solver: plain fixed-point iteration,
/// independent of the production kron/doubling paths.
fn dlyap_fixed_point(a: &DMatrix<f64>, q: &DMatrix<f64>) -> DMatrix<f64> {
    let mut p = q.clone();
    for _ in 0..200_000 {
        let next = a.transpose() * &p * a + q;
        if (&next - &p).amax() < 1e-14 * (1.0 + p.amax()) {
            return next;
        }
        p = next;
    }
    panic!("fixed-point Lyapunov oracle failed to converge");
}

fn rel_err(got: &DMatrix<f64>, want: &DMatrix<f64>) -> f64 {
    (got - want).norm() / (1.0 + want.norm())
}

/// Criterion 1: structured determinant, inverse, product, PD test and
/// Lyapunov solve match dense oracles over 200 random trials per op.
#[test]
fn criterion_1_patterned_oracle_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC1);
    for trial in 0..200 {
        let r = rng.gen_range(2..=6usize);
        let n = rng.gen_range(1..=4usize);
        let p = random_pd_patterned(&mut rng, r, n);
        let dense = p.to_dense();

        // determinant
        let det_rel = (p.det() - dense.determinant()).abs()
            / (1.0 + dense.determinant().abs());
        assert!(det_rel <= 1e-9, "trial {trial}: det rel err {det_rel}");

        // inverse
        let inv = p.inverse().unwrap().to_dense();
        let dense_inv = dense.clone().try_inverse().unwrap();
        let e = rel_err(&inv, &dense_inv);
        assert!(e <= 1e-8, "trial {trial}: inverse rel err {e}");

        // product (second factor need not be PD, only patterned symmetric)
        let q = PatternedMatrix::new(
            r,
            random_symmetric(&mut rng, n, 2.0),
            random_symmetric(&mut rng, n, 2.0),
        )
        .unwrap();
        let prod = p.mul(&q).unwrap().to_dense();
        let e = rel_err(&prod, &(&dense * q.to_dense()));
        assert!(e <= 1e-8, "trial {trial}: product rel err {e}");

        // PD test agreement with a dense Cholesky, on both a PD and a
        // generally indefinite sample
        assert_eq!(p.is_posdef(), is_posdef(&dense), "trial {trial}: PD flag");
        assert_eq!(
            q.is_posdef(),
            is_posdef(&q.to_dense()),
            "trial {trial}: PD flag (indefinite sample)"
        );

        // Lyapunov solve against the fixed-point oracle on a stabilized
        // patterned closed loop
        let mut acl = PatternedMatrix::from_blocks(
            r,
            DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0)),
            DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0)),
        )
        .unwrap();
        let rho: f64 = spectral_radius(&acl.to_dense());
        acl = acl.scale(rng.gen_range(0.3..0.9) / rho.max(1e-6));
        let sol = PatternedMatrix::lyapunov_solve(&acl, &p).unwrap().to_dense();
        let want = dlyap_fixed_point(&acl.to_dense(), &dense);
        let e = rel_err(&sol, &want);
        assert!(e <= 1e-8, "trial {trial}: lyapunov rel err {e}");
    }
    println!("criterion 1 (patterned-algebra oracle equivalence): pass");
}

fn random_controllable_agent(rng: &mut ChaCha8Rng) -> AgentModel<f64> {
    loop {
        let n = rng.gen_range(1..=4usize);
        let m = rng.gen_range(1..=2usize);
        let mut a = DMatrix::<f64>::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let rho = spectral_radius(&a);
        if rho > 1.2 {
            a *= 1.2 / rho;
        }
        let b = DMatrix::<f64>::from_fn(n, m, |_, _| rng.gen_range(-1.0..1.0));
        if let Ok(agent) = AgentModel::new(a, b) {
            return agent;
        }
    }
}

struct LearnedRun {
    result: d3pi_core::d3pi::D3piResult<f64>,
    g: CommGraph,
    d: usize,
}

fn learn_on_path(agent: &AgentModel<f64>, seed: u64, n_agents: usize) -> LearnedRun {
    let g = CommGraph::path(n_agents);
    let sel = select_subgraph(&g);
    let d = sel.len();
    let (n, m) = (agent.state_dim(), agent.input_dim());
    let q1 = DMatrix::<f64>::identity(n, n);
    let q2 = DMatrix::<f64>::identity(n, n);
    let r = DMatrix::<f64>::identity(m, m);

    let p1 = dare_solve(agent.a(), agent.b(), &q1, &(&r * 10.0)).unwrap();
    let k1 = lqr_gain(agent.a(), agent.b(), &p1, &(&r * 10.0)).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x0 = DVector::<f64>::zeros(n_agents * n);
    for v in x0.iter_mut() {
        *v = rng.gen_range(-1.0..1.0);
    }
    let initial = d3pi_core::lti::build_policy_final(&k1, &DMatrix::zeros(m, n), 0.0, d, &g).unwrap();
    let sys = CompoundSystem::new(agent.clone(), n_agents).unwrap();
    let mut sim = ClosedLoopSim::new(sys, sel, initial, x0).unwrap();

    let spe = SpeConfig::default_for(d, m);
    let cfg = D3piConfig::new(q1, q2, r, k1, spe);
    let result = run_d3pi(&mut sim, &g, &cfg, &mut rng).expect("run_d3pi");
    LearnedRun { result, g, d }
}

/// Criterion 2: ten random controllable agents on a path of 8 converge to
/// the structured Riccati optimum within 1e−2 relative Frobenius.
#[test]
fn criterion_2_convergence_to_structured_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC2);
    for trial in 0..10 {
        let agent = random_controllable_agent(&mut rng);
        let run = learn_on_path(&agent, 100 + trial, 8);
        let (n, m) = (agent.state_dim(), agent.input_dim());
        let q = DMatrix::<f64>::identity(n, n);
        let rm = DMatrix::<f64>::identity(m, m);
        let (k_star, l_star, _) = structured_optimal(&agent, &q, &q, &rm, run.d).unwrap();
        let k_tilde = pattern_expand(run.d, &run.result.k_star, &run.result.l_star);
        let k_tilde_star = pattern_expand(run.d, &k_star, &l_star);
        let rel = (&k_tilde - &k_tilde_star).norm() / k_tilde_star.norm();
        assert!(
            rel <= 1e-2,
            "trial {trial}: relative gain error {rel} (n={n}, m={m})"
        );
    }
    println!("criterion 2 (convergence to the structured optimum): pass");
}

/// Criterion 3: every outer iterate of criterion-2-style runs is
/// stabilizing, both per agent and on the lifted network, across the whole
/// (1−τ, 1+τ) margin interval.
#[test]
fn criterion_3_per_iteration_stability() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC3);
    for trial in 0..10 {
        let agent = random_controllable_agent(&mut rng);
        let run = learn_on_path(&agent, 300 + trial, 8);
        let big_n = run.g.node_count();
        let eye = DMatrix::<f64>::identity(big_n, big_n);
        let a_hat = kron(&eye, agent.a());
        let b_hat = kron(&eye, agent.b());
        for state in &run.result.history {
            let dk = state.delta_k();
            let rho_dk = spectral_radius(&(agent.a() + agent.b() * &dk));
            assert!(rho_dk < 1.0, "trial {trial} iter {}: rho(A+B dK) = {rho_dk}", state.k);

            let k_hat = d3pi_core::lti::build_policy_final(
                &state.k_mat,
                &state.l_mat,
                state.tau,
                run.d,
                &run.g,
            )
            .unwrap();
            let rho_net = spectral_radius(&(&a_hat + &b_hat * &k_hat));
            assert!(rho_net < 1.0, "trial {trial} iter {}: network rho = {rho_net}", state.k);

            for s in 0..20 {
                // strictly interior samples of the margin interval
                let alpha = 1.0 - state.tau + (2.0 * state.tau) * (s as f64 + 0.5) / 20.0;
                let gain = &state.k_mat - &state.l_mat * alpha;
                let rho = spectral_radius(&(agent.a() + agent.b() * &gain));
                assert!(
                    rho < 1.0,
                    "trial {trial} iter {}: rho(A+B(K-aL)) = {rho} at alpha {alpha}",
                    state.k
                );
            }
        }
    }
    println!("criterion 3 (per-iteration stability and gain margin): pass");
}

/// Criterion 4: SPE exactness on a known d=2 scalar system — zero
/// residual without exploration noise, 1e−3 estimation error with it.
#[test]
fn criterion_4_spe_exactness() {
    let agent = AgentModel::new(
        DMatrix::from_element(1, 1, 0.8),
        DMatrix::from_element(1, 1, 1.0),
    )
    .unwrap();
    let d = 2;
    let (q1, q2, r) = (
        DMatrix::from_element(1, 1, 1.0),
        DMatrix::from_element(1, 1, 1.0),
        DMatrix::from_element(1, 1, 1.0),
    );
    let (q_c, r_c) = subgraph_cost(d, &q1, &q2, &r).unwrap();
    let (q_c, r_c) = (q_c.to_dense(), r_c.to_dense());

    let k = DMatrix::from_element(1, 1, -0.5);
    let l = DMatrix::from_element(1, 1, 0.1);
    let k_t = pattern_expand(d, &k, &l);
    let h_star = assemble_h(&agent, &q_c, &r_c, &k_t, d).unwrap();
    let theta_star = vech2(h_star.matrix());

    // noise-free rollout: the Bellman residual against the exact θ* must
    // vanish at every step
    let g = CommGraph::complete(d);
    let sel = select_subgraph(&g);
    let sys = CompoundSystem::new(agent.clone(), d).unwrap();
    let x0 = DVector::from_vec(vec![1.0, -0.7]);
    let mut sim = ClosedLoopSim::new(sys, sel, k_t.clone(), x0).unwrap();
    for _ in 0..50 {
        let x_t = sim.subgraph_state();
        let u_t = sim.policy_output();
        let mut z_t = DVector::<f64>::zeros(4);
        z_t.rows_mut(0, 2).copy_from(&x_t);
        z_t.rows_mut(2, 2).copy_from(&u_t);
        sim.step_with_input(&u_t.clone()).unwrap();
        let x_n = sim.subgraph_state();
        let u_n = sim.policy_output();
        let mut z_n = DVector::<f64>::zeros(4);
        z_n.rows_mut(0, 2).copy_from(&x_n);
        z_n.rows_mut(2, 2).copy_from(&u_n);
        let zeta = d3pi_core::spe::regressor(&z_t, &z_n).unwrap();
        let target = d3pi_core::spe::local_cost(&x_t, &u_t, &q_c, &r_c).unwrap();
        let residual = (target - zeta.dot(&theta_star)).abs();
        assert!(residual <= 1e-10, "noise-free residual {residual}");
    }

    // noisy estimation with the default budget
    let sys = CompoundSystem::new(agent.clone(), d).unwrap();
    let sel = select_subgraph(&g);
    let x0 = DVector::from_vec(vec![0.4, -0.2]);
    let mut sim = ClosedLoopSim::new(sys, sel, k_t.clone(), x0).unwrap();
    let cfg = SpeConfig::default_for(d, 1);
    let h_prev = HEstimate::new(DMatrix::zeros(4, 4), d, 1, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let outcome = run_spe(&mut sim, &k, &l, d, &q_c, &r_c, &h_prev, &cfg, &mut rng).unwrap();
    assert!(outcome.converged, "SPE did not converge");
    let err = (outcome.estimate.matrix() - h_star.matrix()).norm();
    assert!(err <= 1e-3, "H estimation error {err}");

    println!("criterion 4 (SPE exactness against the model-based oracle): pass");
}

/// Criterion 5: the noise-free policy-iteration shadow reaches the
/// structured optimum within 1e−8 in at most 60 sweeps with a monotone
/// cost-to-go trace.
#[test]
fn criterion_5_model_based_policy_iteration_shadow() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC5);
    for trial in 0..5 {
        let agent = random_controllable_agent(&mut rng);
        let (n, m) = (agent.state_dim(), agent.input_dim());
        let d = rng.gen_range(2..=4usize);
        let q1 = DMatrix::<f64>::identity(n, n);
        let q2 = DMatrix::<f64>::identity(n, n);
        let r = DMatrix::<f64>::identity(m, m);
        let (q_c, r_c) = subgraph_cost(d, &q1, &q2, &r).unwrap();
        let (q_c, r_c) = (q_c.to_dense(), r_c.to_dense());

        let p1 = dare_solve(agent.a(), agent.b(), &q1, &(&r * 10.0)).unwrap();
        let mut k = lqr_gain(agent.a(), agent.b(), &p1, &(&r * 10.0)).unwrap();
        let mut l = DMatrix::<f64>::zeros(m, n);
        let eye = DMatrix::<f64>::identity(d, d);
        let a_t = kron(&eye, agent.a());
        let b_t = kron(&eye, agent.b());

        let mut prev_trace = f64::INFINITY;
        let mut converged_at = None;
        for sweep in 0..60 {
            let k_t = pattern_expand(d, &k, &l);
            // model-based cost-to-go of the current policy
            let acl = &a_t + &b_t * &k_t;
            let q_cl = &q_c + k_t.transpose() * &r_c * &k_t;
            let p_t = d3pi_core::linalg::dlyap_doubling(&acl, &sym_part(&q_cl)).unwrap();
            let tr = p_t.trace();
            assert!(
                tr <= prev_trace + 1e-9 * (1.0 + prev_trace.abs()),
                "trial {trial} sweep {sweep}: trace increased {prev_trace} -> {tr}"
            );
            prev_trace = tr;

            let h = assemble_h(&agent, &q_c, &r_c, &k_t, d).unwrap();
            let blocks = recover_blocks(&h, d, n, m).unwrap();
            let (f, gm) = compute_fg(&blocks.y1, &blocks.y2, d).unwrap();
            let (k_next, l_next) = update_gains(&f, &gm, &blocks.z1, &blocks.z2, d).unwrap();
            let step = (&k_next - &k).norm() + (&l_next - &l).norm();
            k = k_next;
            l = l_next;
            if step < 1e-8 {
                converged_at = Some(sweep);
                break;
            }
        }
        let sweep = converged_at.unwrap_or_else(|| panic!("trial {trial}: no fixed point in 60 sweeps"));
        let (k_star, l_star, _) = structured_optimal(&agent, &q1, &q2, &r, d).unwrap();
        let err = (&k - &k_star).norm() + (&l - &l_star).norm();
        assert!(err <= 1e-6, "trial {trial}: fixed point off by {err} (at sweep {sweep})");
    }
    println!("criterion 5 (model-based policy-iteration shadow): pass");
}

/// Criterion 7: emitted final gains have exact structural zeros outside
/// the communication graph.
#[test]
fn criterion_7_final_gain_sparsity() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC7);
    for trial in 0..3 {
        let agent = random_controllable_agent(&mut rng);
        let run = learn_on_path(&agent, 700 + trial, 8);
        let (n, m) = (agent.state_dim(), agent.input_dim());
        assert!(
            sparsity_member(&run.result.final_policy, &run.g, m, n, 0.0).unwrap(),
            "trial {trial}: final policy violates the sparsity pattern"
        );
    }
    println!("criterion 7 (exact structural sparsity of emitted gains): pass");
}
