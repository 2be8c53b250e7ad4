//! Independent-oracle checks for the solver: projected-gradient equivalence,
//! random-restart joint minimization, stationarity of every closed-form
//! update, and the M-matrix guarantee behind the clamped y-update.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use segtrack::solver::{
    self, Fidelity, Problem, SolverConfig, SolverState,
};
use segtrack::testsupport::{
    fd_gradient, fd_scalar, pgd_joint_min, pgd_y_min, random_graph, random_problem,
    reference_loss, symmetric_eigenvalues, y_objective,
};

fn fresh_state(problem: &Problem) -> SolverState {
    SolverState {
        w: DVector::zeros(problem.dim()),
        b: 0.0,
        y: problem.f_padded(),
        loss_trace: Vec::new(),
        converged: false,
    }
}

/// Replicate the alternation with public updates, checking every y-update
/// against the projected-gradient oracle.
#[test]
fn every_y_update_matches_pgd_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xA1);
    let config = SolverConfig::default();
    for _ in 0..10 {
        let (problem, _) = random_problem(&mut rng, 6, 20, 3, true);
        let lam_max = symmetric_eigenvalues(problem.laplacian())
            .into_iter()
            .fold(0.0f64, f64::max);
        let mut state = fresh_state(&problem);
        for _ in 0..8 {
            state.w = solver::update_w(&problem, &state, config.ridge).unwrap();
            state.b = solver::update_b(&problem, &state);
            state.y = solver::update_y(&problem, &state, &config).unwrap();

            let p = problem.s() * &state.w + DVector::from_element(problem.n(), state.b);
            let oracle = pgd_y_min(
                &p,
                problem.laplacian(),
                problem.f(),
                problem.n_prev(),
                config.alpha,
                config.beta,
                lam_max,
                30_000,
            );
            let diff = (&state.y - &oracle).amax();
            assert!(diff < 1e-6, "y-update deviates from oracle by {diff}");
        }
    }
}

#[test]
fn final_loss_beats_random_restart_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xA2);
    let config = SolverConfig::default();
    for _ in 0..10 {
        let (problem, _) = random_problem(&mut rng, 6, 20, 3, true);
        let state = solver::solve(&problem, &config).unwrap();
        let final_loss = state.final_loss();

        let mut best = f64::INFINITY;
        for _ in 0..10 {
            let w0 = DVector::from_fn(problem.dim(), |_, _| rng.random_range(-1.0..1.0f64));
            let b0 = rng.random_range(-1.0..1.0);
            let y0 = DVector::from_fn(problem.n(), |_, _| rng.random_range(0.0..1.0f64));
            let v = pgd_joint_min(
                problem.s(),
                problem.laplacian(),
                problem.f(),
                problem.n_prev(),
                config.alpha,
                config.beta,
                w0,
                b0,
                y0,
                20_000,
            );
            best = best.min(v);
        }
        assert!(
            final_loss <= best * (1.0 + 1e-4) + 1e-12,
            "solver loss {final_loss} worse than oracle best {best}"
        );
    }
}

/// After each closed-form update the corresponding partial gradient
/// vanishes: analytically at tight tolerances, by central differences at the
/// f64 noise floor of differencing.
#[test]
fn updates_are_stationary_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xA3);
    let config = SolverConfig {
        ridge: 0.0,
        ..SolverConfig::default()
    };
    for _ in 0..20 {
        let (problem, _) = random_problem(&mut rng, 8, 24, 3, true);
        let mut state = fresh_state(&problem);
        // A couple of alternations to land in a generic spot.
        for _ in 0..3 {
            state.w = solver::update_w(&problem, &state, config.ridge).unwrap();
            state.b = solver::update_b(&problem, &state);
            state.y = solver::update_y(&problem, &state, &config).unwrap();
        }

        let y_norm = state.y.norm();

        // W: gradient of the data term, analytic then central differences.
        state.w = solver::update_w(&problem, &state, config.ridge).unwrap();
        let residual =
            problem.s() * &state.w + DVector::from_element(problem.n(), state.b) - &state.y;
        let grad_w_analytic = problem.s().transpose() * &residual * 2.0;
        assert!(grad_w_analytic.norm() <= 1e-8 * (1.0 + y_norm));
        let data_term = |w: &DVector<f64>| {
            (problem.s() * w + DVector::from_element(problem.n(), state.b) - &state.y)
                .norm_squared()
        };
        let grad_w_fd = fd_gradient(data_term, &state.w, 1e-6);
        assert!(grad_w_fd.norm() <= 1e-6 * (1.0 + y_norm));

        // b: derivative of the data term.
        state.b = solver::update_b(&problem, &state);
        let residual =
            problem.s() * &state.w + DVector::from_element(problem.n(), state.b) - &state.y;
        let grad_b_analytic = 2.0 * residual.sum();
        assert!(grad_b_analytic.abs() <= 1e-10 * (1.0 + y_norm).max(problem.n() as f64));
        let b_term = |b: f64| {
            (problem.s() * &state.w + DVector::from_element(problem.n(), b) - &state.y)
                .norm_squared()
        };
        let grad_b_fd = fd_scalar(b_term, state.b, 1e-6);
        assert!(grad_b_fd.abs() <= 1e-6 * (1.0 + y_norm));

        // y: KKT residual of the constrained subproblem. Free coordinates
        // need a vanishing gradient, clamped ones a non-negative one.
        state.y = solver::update_y(&problem, &state, &config).unwrap();
        let p = problem.s() * &state.w + DVector::from_element(problem.n(), state.b);
        let y_obj = |y: &DVector<f64>| {
            y_objective(
                y,
                &p,
                problem.laplacian(),
                problem.f(),
                problem.n_prev(),
                config.alpha,
                config.beta,
            )
        };
        let grad_y_fd = fd_gradient(y_obj, &state.y, 1e-6);
        let scale = 1e-6 * (1.0 + y_norm);
        let mut free_sq = 0.0;
        for i in 0..problem.n() {
            if state.y[i] > 0.0 {
                free_sq += grad_y_fd[i] * grad_y_fd[i];
            } else {
                assert!(
                    grad_y_fd[i] >= -scale,
                    "clamped coordinate {i} has descent direction {}",
                    grad_y_fd[i]
                );
            }
        }
        assert!(free_sq.sqrt() <= scale, "free gradient norm {}", free_sq.sqrt());
    }
}

/// (I + alpha L)^{-1} is entrywise non-negative, so the literal clamped
/// update keeps y non-negative.
#[test]
fn smoothing_inverse_is_nonnegative() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xA4);
    for _ in 0..20 {
        let n = rng.random_range(2..=50);
        let sparsity = rng.random_range(0.1..0.9);
        let g = random_graph(&mut rng, n, sparsity);
        let l = segtrack::graph::combinatorial_laplacian(&g);
        let m = DMatrix::identity(n, n) + &l * 0.001;
        let inv = m.try_inverse().expect("I + alpha L is invertible");
        let min_entry = inv.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(min_entry >= -1e-12, "inverse entry {min_entry}");
    }
}

/// The paper-literal path produces non-negative y from clamped inputs on the
/// same instances.
#[test]
fn literal_update_nonnegative_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xA5);
    let config = SolverConfig {
        fidelity: Fidelity::PaperLiteral,
        ..SolverConfig::default()
    };
    for _ in 0..25 {
        let (problem, _) = random_problem(&mut rng, 6, 30, 3, true);
        let state = solver::solve(&problem, &config).unwrap();
        assert!(state.y.min() >= 0.0);
    }
}

/// The duplicate-expression loss oracle agrees along an entire solve path.
#[test]
fn loss_trace_matches_reference_expression() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xA6);
    let config = SolverConfig::default();
    let (problem, _) = random_problem(&mut rng, 10, 25, 3, true);
    let mut state = fresh_state(&problem);
    for _ in 0..6 {
        state.w = solver::update_w(&problem, &state, config.ridge).unwrap();
        state.b = solver::update_b(&problem, &state);
        state.y = solver::update_y(&problem, &state, &config).unwrap();
        let got = solver::loss(&problem, &state, &config);
        let want = reference_loss(
            problem.s(),
            problem.laplacian(),
            problem.f(),
            problem.n_prev(),
            config.alpha,
            config.beta,
            &state.w,
            state.b,
            &state.y,
        );
        assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0));
    }
}
