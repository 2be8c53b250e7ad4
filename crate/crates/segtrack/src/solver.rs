//! Alternating closed-form optimization of the linearized propagation model.
//!
//! Minimizes, over the weight vector W, bias b and non-negative label vector
//! y,
//!
//! ```text
//! ||S W + 1 b - y||^2  +  alpha * y' L y  +  beta * ||y_prev - f||^2
//! ```
//!
//! where S is the propagated feature matrix, L the combinatorial Laplacian of
//! the two-frame graph and f the indicator of the target superpixels in the
//! previous frame. Each block update is closed-form: W by ridge-stabilized
//! least squares, b by the residual mean, y by a symmetric positive definite
//! solve with non-negativity handled either exactly (active-set refinement)
//! or by the literal masked-clamp formula, selectable per [`Fidelity`].

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::str::FromStr;

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::graph::{PropagationMode, PropagationOperator};

/// Which y-update to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fidelity {
    /// Exact minimizer of the y subproblem under y >= 0.
    ExactMinimizer,
    /// The printed masked-clamp update: q restricted to previous-frame
    /// entries, clamped, then one smoothing solve.
    PaperLiteral,
}

impl Fidelity {
    pub fn as_str(&self) -> &'static str {
        match self {
            Fidelity::ExactMinimizer => "exact-minimizer",
            Fidelity::PaperLiteral => "paper-literal",
        }
    }
}

impl FromStr for Fidelity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact-minimizer" => Ok(Fidelity::ExactMinimizer),
            "paper-literal" => Ok(Fidelity::PaperLiteral),
            other => Err(Error::InvalidParameter {
                name: "fidelity",
                reason: format!("unknown fidelity {other:?}"),
            }),
        }
    }
}

/// Solver parameters. Defaults are the operating values.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Smoothness weight on y' L y.
    pub alpha: f64,
    /// Fitting weight on the previous-frame indicator.
    pub beta: f64,
    /// Stop once the relative loss change drops below this.
    pub min_error: f64,
    /// Iteration cap.
    pub max_iter: usize,
    /// Propagation mode the problem was built with (recorded for reports).
    pub mode: PropagationMode,
    /// y-update variant.
    pub fidelity: Fidelity,
    /// Ridge added to S'S in the W update.
    pub ridge: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            alpha: 0.001,
            beta: 50.0,
            min_error: 1e-4,
            max_iter: 100,
            mode: PropagationMode::Mixed,
            fidelity: Fidelity::ExactMinimizer,
            ridge: 1e-8,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 {
            return Err(Error::InvalidParameter {
                name: "alpha",
                reason: format!("must be non-negative, got {}", self.alpha),
            });
        }
        if self.beta < 0.0 {
            return Err(Error::InvalidParameter {
                name: "beta",
                reason: format!("must be non-negative, got {}", self.beta),
            });
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidParameter {
                name: "max_iter",
                reason: "must be at least 1".into(),
            });
        }
        Ok(())
    }
}

/// One frame-pair labeling problem, ready for the solver.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    s: DMatrix<f64>,
    laplacian: DMatrix<f64>,
    f: DVector<f64>,
    n_prev: usize,
    n_curr: usize,
}

impl Problem {
    pub fn new(
        s: DMatrix<f64>,
        laplacian: DMatrix<f64>,
        f: DVector<f64>,
        n_prev: usize,
        n_curr: usize,
    ) -> Result<Self> {
        let n = n_prev + n_curr;
        if s.nrows() != n {
            return Err(Error::DimensionMismatch {
                context: "problem S rows",
                expected: n.to_string(),
                got: s.nrows().to_string(),
            });
        }
        if laplacian.nrows() != n || laplacian.ncols() != n {
            return Err(Error::DimensionMismatch {
                context: "problem Laplacian",
                expected: format!("{n}x{n}"),
                got: format!("{}x{}", laplacian.nrows(), laplacian.ncols()),
            });
        }
        if f.len() != n_prev {
            return Err(Error::DimensionMismatch {
                context: "problem indicator f",
                expected: n_prev.to_string(),
                got: f.len().to_string(),
            });
        }
        for &v in f.iter() {
            if v != 0.0 && v != 1.0 {
                return Err(Error::InvalidInput(format!(
                    "indicator entries must be 0 or 1, got {v}"
                )));
            }
        }
        Ok(Problem {
            s,
            laplacian,
            f,
            n_prev,
            n_curr,
        })
    }

    pub fn s(&self) -> &DMatrix<f64> {
        &self.s
    }

    pub fn laplacian(&self) -> &DMatrix<f64> {
        &self.laplacian
    }

    pub fn f(&self) -> &DVector<f64> {
        &self.f
    }

    pub fn n_prev(&self) -> usize {
        self.n_prev
    }

    pub fn n_curr(&self) -> usize {
        self.n_curr
    }

    pub fn n(&self) -> usize {
        self.n_prev + self.n_curr
    }

    pub fn dim(&self) -> usize {
        self.s.ncols()
    }

    /// f padded with zeros over the current frame's entries.
    pub fn f_padded(&self) -> DVector<f64> {
        let mut p = DVector::zeros(self.n());
        p.rows_mut(0, self.n_prev).copy_from(&self.f);
        p
    }

    /// Plain-text serialization: a dimension header, then S, L and f blocks
    /// with 17-significant-digit floats.
    pub fn write_text<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{} {} {}", self.n_prev, self.n_curr, self.dim())?;
        let write_rows = |w: &mut W, m: &DMatrix<f64>| -> std::io::Result<()> {
            for i in 0..m.nrows() {
                let mut line = String::new();
                for j in 0..m.ncols() {
                    if j > 0 {
                        line.push(' ');
                    }
                    let _ = write!(line, "{:.16e}", m[(i, j)]);
                }
                writeln!(w, "{line}")?;
            }
            Ok(())
        };
        write_rows(&mut w, &self.s)?;
        write_rows(&mut w, &self.laplacian)?;
        let mut line = String::new();
        for (j, v) in self.f.iter().enumerate() {
            if j > 0 {
                line.push(' ');
            }
            let _ = write!(line, "{:.16e}", v);
        }
        writeln!(w, "{line}")?;
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Problem> {
        let mut tokens = Vec::new();
        for line in r.lines() {
            let line = line?;
            for tok in line.split_whitespace() {
                tokens.push(tok.to_string());
            }
        }
        let mut it = tokens.into_iter();
        let mut next_usize = |name: &str| -> Result<usize> {
            it.next()
                .ok_or_else(|| Error::Format(format!("missing {name}")))?
                .parse::<usize>()
                .map_err(|e| Error::Format(format!("bad {name}: {e}")))
        };
        let n_prev = next_usize("n_prev")?;
        let n_curr = next_usize("n_curr")?;
        let d = next_usize("d")?;
        let n = n_prev + n_curr;
        let needed = n * d + n * n + n_prev;
        let values: Vec<f64> = it
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|e| Error::Format(format!("bad float {t:?}: {e}")))
            })
            .collect::<Result<_>>()?;
        if values.len() != needed {
            return Err(Error::Format(format!(
                "expected {needed} values after header, got {}",
                values.len()
            )));
        }
        let s = DMatrix::from_row_slice(n, d, &values[..n * d]);
        let l = DMatrix::from_row_slice(n, n, &values[n * d..n * d + n * n]);
        let f = DVector::from_column_slice(&values[n * d + n * n..]);
        Problem::new(s, l, f, n_prev, n_curr)
    }
}

/// Trainable parameters and the label variable, with the per-iteration loss.
#[derive(Debug, Clone)]
pub struct SolverState {
    pub w: DVector<f64>,
    pub b: f64,
    pub y: DVector<f64>,
    pub loss_trace: Vec<f64>,
    pub converged: bool,
}

impl SolverState {
    pub fn iterations(&self) -> usize {
        self.loss_trace.len().saturating_sub(1)
    }

    pub fn final_loss(&self) -> f64 {
        *self.loss_trace.last().unwrap_or(&f64::NAN)
    }
}

/// Apply a propagation operator to stacked features: S = op * X.
pub fn propagate(op: &PropagationOperator, features: &FeatureMatrix) -> Result<DMatrix<f64>> {
    if op.order() != features.n() {
        return Err(Error::DimensionMismatch {
            context: "propagate",
            expected: op.order().to_string(),
            got: features.n().to_string(),
        });
    }
    Ok(op.matrix() * features.values())
}

fn predictions(problem: &Problem, w: &DVector<f64>, b: f64) -> DVector<f64> {
    &problem.s * w + DVector::from_element(problem.n(), b)
}

/// Objective value at the given state.
pub fn loss(problem: &Problem, state: &SolverState, config: &SolverConfig) -> f64 {
    loss_at(problem, &state.w, state.b, &state.y, config)
}

fn loss_at(
    problem: &Problem,
    w: &DVector<f64>,
    b: f64,
    y: &DVector<f64>,
    config: &SolverConfig,
) -> f64 {
    let residual = predictions(problem, w, b) - y;
    let data = residual.norm_squared();
    let smooth = (y.transpose() * &problem.laplacian * y)[(0, 0)];
    let fit = (y.rows(0, problem.n_prev) - &problem.f).norm_squared();
    data + config.alpha * smooth + config.beta * fit
}

/// Least-squares W update: argmin over W of ||S W + 1 b - y||^2, solved via
/// Cholesky of S'S + ridge * I.
pub fn update_w(problem: &Problem, state: &SolverState, ridge: f64) -> Result<DVector<f64>> {
    let target = &state.y - DVector::from_element(problem.n(), state.b);
    solve_w(&problem.s, &target, ridge)
}

fn solve_w(s: &DMatrix<f64>, target: &DVector<f64>, ridge: f64) -> Result<DVector<f64>> {
    let d = s.ncols();
    let mut normal = s.transpose() * s;
    for i in 0..d {
        normal[(i, i)] += ridge;
    }
    let chol = Cholesky::new(normal).ok_or_else(|| {
        Error::Numerical("normal matrix S'S is singular; use a positive ridge".into())
    })?;
    Ok(chol.solve(&(s.transpose() * target)))
}

/// Bias update: mean of (y - S W).
pub fn update_b(problem: &Problem, state: &SolverState) -> f64 {
    let r = &state.y - &problem.s * &state.w;
    r.sum() / r.len() as f64
}

/// Non-negativity active-set / masked-clamp machinery for the y update.
///
/// The system matrix is constant across solver iterations, so its Cholesky
/// factor is computed once and reused.
struct YUpdater {
    m: DMatrix<f64>,
    chol: Cholesky<f64, nalgebra::Dyn>,
    rhs_base: DVector<f64>,
    fidelity: Fidelity,
    n_prev: usize,
}

impl YUpdater {
    fn new(problem: &Problem, config: &SolverConfig) -> Result<YUpdater> {
        let n = problem.n();
        let m = match config.fidelity {
            Fidelity::ExactMinimizer => {
                // Lambda + alpha L with Lambda = diag(1 + beta | 1).
                let mut m = &problem.laplacian * config.alpha;
                for i in 0..n {
                    m[(i, i)] += if i < problem.n_prev {
                        1.0 + config.beta
                    } else {
                        1.0
                    };
                }
                m
            }
            Fidelity::PaperLiteral => {
                // I + alpha L.
                let mut m = &problem.laplacian * config.alpha;
                for i in 0..n {
                    m[(i, i)] += 1.0;
                }
                m
            }
        };
        let chol = Cholesky::new(m.clone())
            .ok_or_else(|| Error::Numerical("y-update system is not positive definite".into()))?;
        Ok(YUpdater {
            m,
            chol,
            rhs_base: problem.f_padded() * config.beta,
            fidelity: config.fidelity,
            n_prev: problem.n_prev,
        })
    }

    fn update(&self, p: &DVector<f64>) -> Result<DVector<f64>> {
        match self.fidelity {
            Fidelity::ExactMinimizer => self.exact(p),
            Fidelity::PaperLiteral => self.literal(p),
        }
    }

    /// Exact minimizer of ||p - y||^2 + alpha y'Ly + beta ||y_prev - f||^2
    /// subject to y >= 0: the unconstrained SPD solve, then an active-set
    /// refinement whenever clamping binds.
    fn exact(&self, p: &DVector<f64>) -> Result<DVector<f64>> {
        let rhs = p + &self.rhs_base;
        let mut y = self.chol.solve(&rhs);
        if y.iter().all(|&v| v >= 0.0) {
            return Ok(y);
        }

        let n = y.len();
        let scale = 1.0 + rhs.amax();
        let mut clamped = vec![false; n];
        // M has non-positive off-diagonals, so growing the clamp set
        // converges; the release branch guards round-off corner cases.
        for _ in 0..2 * n + 10 {
            let mut changed = false;
            for i in 0..n {
                if !clamped[i] && y[i] < 0.0 {
                    clamped[i] = true;
                    changed = true;
                }
            }
            if !changed {
                // Feasible point: verify the complementary slackness side.
                let grad = &self.m * &y - &rhs;
                let mut released = false;
                for i in 0..n {
                    if clamped[i] && grad[i] < -1e-10 * scale {
                        clamped[i] = false;
                        released = true;
                    }
                }
                if !released {
                    for v in y.iter_mut() {
                        if *v < 0.0 {
                            *v = 0.0;
                        }
                    }
                    return Ok(y);
                }
            }

            let free: Vec<usize> = (0..n).filter(|&i| !clamped[i]).collect();
            y = DVector::zeros(n);
            if !free.is_empty() {
                let m_ff = DMatrix::from_fn(free.len(), free.len(), |a, b| {
                    self.m[(free[a], free[b])]
                });
                let rhs_f = DVector::from_fn(free.len(), |a, _| rhs[free[a]]);
                let chol = Cholesky::new(m_ff).ok_or_else(|| {
                    Error::Numerical("active-set subsystem lost positive definiteness".into())
                })?;
                let y_f = chol.solve(&rhs_f);
                for (a, &i) in free.iter().enumerate() {
                    y[i] = y_f[a];
                }
            }
        }
        Err(Error::Numerical(
            "active-set y-update failed to settle".into(),
        ))
    }

    /// Literal masked-clamp update: q = Gamma (p + beta f~), q^ = max(q, 0),
    /// y = (I + alpha L)^{-1} q^.
    fn literal(&self, p: &DVector<f64>) -> Result<DVector<f64>> {
        let mut q = p + &self.rhs_base;
        for i in self.n_prev..q.len() {
            q[i] = 0.0;
        }
        for v in q.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        let mut y = self.chol.solve(&q);
        // (I + alpha L)^{-1} is entrywise non-negative; zero out round-off.
        for v in y.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        Ok(y)
    }
}

/// Single y update from the current state.
pub fn update_y(
    problem: &Problem,
    state: &SolverState,
    config: &SolverConfig,
) -> Result<DVector<f64>> {
    config.validate()?;
    let updater = YUpdater::new(problem, config)?;
    updater.update(&predictions(problem, &state.w, state.b))
}

/// Alternate the three closed-form updates until the relative loss change
/// drops below `min_error` or `max_iter` is reached.
///
/// W and b start at zero, y at the padded indicator. In exact-minimizer mode
/// every update minimizes its block exactly, so the loss trace is
/// non-increasing.
pub fn solve(problem: &Problem, config: &SolverConfig) -> Result<SolverState> {
    config.validate()?;
    let updater = YUpdater::new(problem, config)?;

    let mut state = SolverState {
        w: DVector::zeros(problem.dim()),
        b: 0.0,
        y: problem.f_padded(),
        loss_trace: Vec::with_capacity(config.max_iter + 1),
        converged: false,
    };
    state
        .loss_trace
        .push(loss_at(problem, &state.w, state.b, &state.y, config));

    for _ in 0..config.max_iter {
        state.w = solve_w(
            &problem.s,
            &(&state.y - DVector::from_element(problem.n(), state.b)),
            config.ridge,
        )?;
        state.b = update_b(problem, &state);
        state.y = updater.update(&predictions(problem, &state.w, state.b))?;

        let l = loss_at(problem, &state.w, state.b, &state.y, config);
        let prev = *state.loss_trace.last().unwrap();
        state.loss_trace.push(l);
        let rel = (l - prev).abs() / prev.abs().max(1e-30);
        if rel < config.min_error {
            state.converged = true;
            break;
        }
    }
    Ok(state)
}
