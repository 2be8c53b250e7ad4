//! Fixtures and independent oracles for the test suites.
//!
//! Everything here exists so tests (including the acceptance suite in the
//! CLI crate) can cross-check the production code against separately coded
//! reference computations. The oracles deliberately avoid the implementation
//! paths they verify: losses are evaluated with explicit loops, minimizers
//! with projected gradient descent, spectra with a general symmetric
//! eigensolver.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;

use crate::common::LabImage;
use crate::features::FeatureMatrix;
use crate::graph::{self, PropagationMode, SpatioTemporalGraph};
use crate::solver::Problem;
use crate::superpixel::SuperpixelMap;

/// Solid-color LAB region.
pub fn uniform_lab(width: u32, height: u32, lab: [f64; 3]) -> LabImage {
    LabImage::new(width, height, vec![lab; (width * height) as usize])
}

/// Validate a superpixel map independently: complete partition, dense labels,
/// every superpixel one 4-connected component.
pub fn check_superpixel_map(map: &SuperpixelMap) -> std::result::Result<(), String> {
    let (w, h, k) = (map.width(), map.height(), map.k());
    if k == 0 {
        return Err("no labels".into());
    }
    let mut seen = vec![false; k];
    for &l in map.labels() {
        let l = l as usize;
        if l >= k {
            return Err(format!("label {l} out of range {k}"));
        }
        seen[l] = true;
    }
    if let Some(missing) = seen.iter().position(|&s| !s) {
        return Err(format!("label {missing} unused"));
    }

    // One BFS per label, then verify it reached every pixel of that label.
    let mut component = vec![u32::MAX; (w * h) as usize];
    for start_label in 0..k as u32 {
        let start = match map.labels().iter().position(|&l| l == start_label) {
            Some(p) => p,
            None => unreachable!(),
        };
        let mut queue = vec![start];
        component[start] = start_label;
        while let Some(p) = queue.pop() {
            let (x, y) = ((p as u32) % w, (p as u32) / w);
            let mut visit = |q: usize| {
                if component[q] == u32::MAX && map.labels()[q] == start_label {
                    component[q] = start_label;
                    queue.push(q);
                }
            };
            if x > 0 {
                visit(p - 1);
            }
            if x + 1 < w {
                visit(p + 1);
            }
            if y > 0 {
                visit(p - w as usize);
            }
            if y + 1 < h {
                visit(p + w as usize);
            }
        }
    }
    for (p, (&c, &l)) in component.iter().zip(map.labels()).enumerate() {
        if c != l {
            return Err(format!(
                "pixel {p} of label {l} not reachable from the label's first pixel"
            ));
        }
    }
    Ok(())
}

/// Random symmetric two-frame graph: Bernoulli(`sparsity`) edges with uniform
/// weights, zero diagonal, isolated nodes repaired. `n >= 2`.
pub fn random_graph<R: Rng>(rng: &mut R, n: usize, sparsity: f64) -> SpatioTemporalGraph {
    assert!(n >= 2);
    let n_prev = (n / 2).max(1);
    let n_curr = n - n_prev;
    let mut full = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.random_range(0.0..1.0) < sparsity {
                let w = rng.random_range(0.05..1.0);
                full[(i, j)] = w;
                full[(j, i)] = w;
            }
        }
    }
    let spatial_prev = full.view((0, 0), (n_prev, n_prev)).into_owned();
    let spatial_curr = full.view((n_prev, n_prev), (n_curr, n_curr)).into_owned();
    let temporal = full.view((0, n_prev), (n_prev, n_curr)).into_owned();
    let mut g = graph::assemble(spatial_prev, spatial_curr, temporal).unwrap();
    g.repair_zero_degrees();
    g
}

/// Random solver problem over a random graph with LAB-scale features.
/// Returns the problem and the graph it came from.
///
/// Keep `n_min` comfortably above d + 1 when a test needs the alternation to
/// converge quickly: near-interpolating problems (n close to the model's
/// degrees of freedom) plateau with tiny absolute but non-vanishing relative
/// loss changes.
pub fn random_problem<R: Rng>(
    rng: &mut R,
    n_min: usize,
    n_max: usize,
    d: usize,
    nonzero_f: bool,
) -> (Problem, SpatioTemporalGraph) {
    let n = rng.random_range(n_min.max(4)..=n_max.max(n_min).max(4));
    let sparsity = rng.random_range(0.2..0.8);
    let g = random_graph(rng, n, sparsity);
    let x = FeatureMatrix::from_matrix(DMatrix::from_fn(n, d, |_, _| {
        rng.random_range(-40.0..90.0)
    }));
    let op = graph::propagation_operator(&g, PropagationMode::Mixed, 0.01, 0.07).unwrap();
    let s = crate::solver::propagate(&op, &x).unwrap();
    let l = graph::combinatorial_laplacian(&g);
    let mut f = DVector::from_fn(g.n_prev(), |_, _| {
        if nonzero_f && rng.random_range(0.0..1.0) < 0.5 {
            1.0
        } else {
            0.0
        }
    });
    if nonzero_f {
        // A realistic indicator mixes target and background superpixels; an
        // all-ones f is a constant target the bias fits exactly.
        if f.sum() == 0.0 {
            f[0] = 1.0;
        }
        if g.n_prev() >= 2 && f.sum() == g.n_prev() as f64 {
            let last = g.n_prev() - 1;
            f[last] = 0.0;
        }
    }
    let n_prev = g.n_prev();
    let n_curr = g.n_curr();
    (Problem::new(s, l, f, n_prev, n_curr).unwrap(), g)
}

/// Eigenvalues of a symmetric matrix.
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().collect()
}

/// Loss of the joint objective, written with explicit loops.
#[allow(clippy::too_many_arguments)]
pub fn reference_loss(
    s: &DMatrix<f64>,
    laplacian: &DMatrix<f64>,
    f: &DVector<f64>,
    n_prev: usize,
    alpha: f64,
    beta: f64,
    w: &DVector<f64>,
    b: f64,
    y: &DVector<f64>,
) -> f64 {
    let n = s.nrows();
    let d = s.ncols();
    let mut data = 0.0;
    for i in 0..n {
        let mut pred = b;
        for j in 0..d {
            pred += s[(i, j)] * w[j];
        }
        data += (pred - y[i]) * (pred - y[i]);
    }
    let mut smooth = 0.0;
    for i in 0..n {
        for j in 0..n {
            smooth += y[i] * laplacian[(i, j)] * y[j];
        }
    }
    let mut fit = 0.0;
    for i in 0..n_prev {
        fit += (y[i] - f[i]) * (y[i] - f[i]);
    }
    data + alpha * smooth + beta * fit
}

/// Gradient of the y subproblem's objective
/// ||p - y||^2 + alpha y'Ly + beta ||y_prev - f||^2.
fn y_objective_grad(
    y: &DVector<f64>,
    p: &DVector<f64>,
    laplacian: &DMatrix<f64>,
    f: &DVector<f64>,
    n_prev: usize,
    alpha: f64,
    beta: f64,
) -> DVector<f64> {
    let mut grad = (y - p) * 2.0 + laplacian * y * (2.0 * alpha);
    for i in 0..n_prev {
        grad[i] += 2.0 * beta * (y[i] - f[i]);
    }
    grad
}

/// Value of the y subproblem's objective.
pub fn y_objective(
    y: &DVector<f64>,
    p: &DVector<f64>,
    laplacian: &DMatrix<f64>,
    f: &DVector<f64>,
    n_prev: usize,
    alpha: f64,
    beta: f64,
) -> f64 {
    let mut v = (p - y).norm_squared();
    v += alpha * (y.transpose() * laplacian * y)[(0, 0)];
    for i in 0..n_prev {
        v += beta * (y[i] - f[i]) * (y[i] - f[i]);
    }
    v
}

/// Projected gradient descent on the y subproblem with the conservative step
/// 1 / (2(1 + beta) + 2 alpha lambda_max); converges to the constrained
/// minimizer of a strictly convex quadratic.
#[allow(clippy::too_many_arguments)]
pub fn pgd_y_min(
    p: &DVector<f64>,
    laplacian: &DMatrix<f64>,
    f: &DVector<f64>,
    n_prev: usize,
    alpha: f64,
    beta: f64,
    lambda_max: f64,
    iters: usize,
) -> DVector<f64> {
    let step = 1.0 / (2.0 * (1.0 + beta) + 2.0 * alpha * lambda_max);
    let mut y = DVector::zeros(p.len());
    for _ in 0..iters {
        let grad = y_objective_grad(&y, p, laplacian, f, n_prev, alpha, beta);
        y -= grad * step;
        for v in y.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
    }
    y
}

/// Projected gradient descent with Armijo backtracking on the joint
/// objective over (w, b, y >= 0). Used as a random-restart oracle.
#[allow(clippy::too_many_arguments)]
pub fn pgd_joint_min(
    s: &DMatrix<f64>,
    laplacian: &DMatrix<f64>,
    f: &DVector<f64>,
    n_prev: usize,
    alpha: f64,
    beta: f64,
    w0: DVector<f64>,
    b0: f64,
    y0: DVector<f64>,
    iters: usize,
) -> f64 {
    let n = s.nrows();
    let obj = |w: &DVector<f64>, b: f64, y: &DVector<f64>| -> f64 {
        reference_loss(s, laplacian, f, n_prev, alpha, beta, w, b, y)
    };

    let mut w = w0;
    let mut b = b0;
    let mut y = y0;
    for v in y.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let mut value = obj(&w, b, &y);

    for _ in 0..iters {
        let pred = s * &w + DVector::from_element(n, b);
        let residual = &pred - &y;
        let grad_w = s.transpose() * &residual * 2.0;
        let grad_b = 2.0 * residual.sum();
        let mut grad_y = (&y - &pred) * 2.0 + laplacian * &y * (2.0 * alpha);
        for i in 0..n_prev {
            grad_y[i] += 2.0 * beta * (y[i] - f[i]);
        }

        let sq_norm = grad_w.norm_squared() + grad_b * grad_b + grad_y.norm_squared();
        if sq_norm.sqrt() < 1e-12 {
            break;
        }

        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let w_t = &w - &grad_w * step;
            let b_t = b - grad_b * step;
            let mut y_t = &y - &grad_y * step;
            for v in y_t.iter_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
            let v_t = obj(&w_t, b_t, &y_t);
            if v_t <= value - 1e-4 * step * sq_norm {
                w = w_t;
                b = b_t;
                y = y_t;
                value = v_t;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    value
}

/// Central finite-difference gradient of a scalar function.
pub fn fd_gradient(f: impl Fn(&DVector<f64>) -> f64, x: &DVector<f64>, h: f64) -> DVector<f64> {
    let mut grad = DVector::zeros(x.len());
    for i in 0..x.len() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        grad[i] = (f(&xp) - f(&xm)) / (2.0 * h);
    }
    grad
}

/// Central finite-difference derivative of a scalar-argument function.
pub fn fd_scalar(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}
