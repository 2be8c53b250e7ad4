//! Spatio-temporal superpixel graph and its propagation operators.
//!
//! The graph couples the superpixels of two consecutive frames: spatial
//! edges inside each frame carry exp(-||x_i - x_j|| / sigma) color affinity,
//! temporal edges carry flow-warped overlap fractions. From the symmetric
//! adjacency A the module builds the smoothing operator
//! A_m = I - lambda1 * (I - D^{-1/2} A D^{-1/2}) and the sharpening operator
//! A_h = I + lambda2 * (I - D^{-1/2} A D^{-1/2}); the mixed convolution is
//! their product.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

/// Self-loop weight added to isolated nodes so degree normalization stays
/// defined.
pub const ZERO_DEGREE_SELF_LOOP: f64 = 1e-6;

/// Symmetric weighted adjacency over the superpixels of two frames.
///
/// Nodes 0..n_prev belong to frame t-1, nodes n_prev..n to frame t.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatioTemporalGraph {
    n_prev: usize,
    n_curr: usize,
    adjacency: DMatrix<f64>,
}

impl SpatioTemporalGraph {
    pub fn n_prev(&self) -> usize {
        self.n_prev
    }

    pub fn n_curr(&self) -> usize {
        self.n_curr
    }

    pub fn n(&self) -> usize {
        self.n_prev + self.n_curr
    }

    pub fn adjacency(&self) -> &DMatrix<f64> {
        &self.adjacency
    }

    /// Row sums of the adjacency.
    pub fn degrees(&self) -> DVector<f64> {
        let n = self.n();
        DVector::from_fn(n, |i, _| self.adjacency.row(i).sum())
    }

    /// Add a tiny self-loop to every zero-degree node so that D is
    /// invertible. Idempotent for already-repaired graphs.
    pub fn repair_zero_degrees(&mut self) {
        let degrees = self.degrees();
        for (i, &d) in degrees.iter().enumerate() {
            if d == 0.0 {
                self.adjacency[(i, i)] = ZERO_DEGREE_SELF_LOOP;
            }
        }
    }
}

/// Pairwise affinity of Eq-style exp(-||x_i - x_j||_2 / sigma).
pub fn spatial_edge_weight(x_i: &[f64], x_j: &[f64], sigma: f64) -> Result<f64> {
    if x_i.len() != x_j.len() {
        return Err(Error::DimensionMismatch {
            context: "spatial_edge_weight",
            expected: x_i.len().to_string(),
            got: x_j.len().to_string(),
        });
    }
    if sigma <= 0.0 {
        return Err(Error::InvalidParameter {
            name: "sigma",
            reason: format!("must be positive, got {sigma}"),
        });
    }
    let dist = x_i
        .iter()
        .zip(x_j)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok((-dist / sigma).exp())
}

/// Within-frame adjacency: affinity on the listed node pairs, zero elsewhere.
pub fn build_spatial_adjacency(
    features: &FeatureMatrix,
    neighbors: &[(u32, u32)],
    sigma: f64,
) -> Result<DMatrix<f64>> {
    let n = features.n();
    let mut a = DMatrix::zeros(n, n);
    for &(i, j) in neighbors {
        let (i, j) = (i as usize, j as usize);
        if i == j {
            return Err(Error::InvalidInput(format!("self-pair ({i}, {j})")));
        }
        if i >= n || j >= n {
            return Err(Error::InvalidInput(format!(
                "pair ({i}, {j}) out of range for {n} nodes"
            )));
        }
        let w = spatial_edge_weight(&features.node(i), &features.node(j), sigma)?;
        a[(i, j)] = w;
        a[(j, i)] = w;
    }
    Ok(a)
}

/// Assemble the two-frame block adjacency [[A_prev, B], [B^T, A_curr]].
pub fn assemble(
    spatial_prev: DMatrix<f64>,
    spatial_curr: DMatrix<f64>,
    temporal: DMatrix<f64>,
) -> Result<SpatioTemporalGraph> {
    let n_prev = spatial_prev.nrows();
    let n_curr = spatial_curr.nrows();
    if spatial_prev.ncols() != n_prev || spatial_curr.ncols() != n_curr {
        return Err(Error::InvalidInput("spatial blocks must be square".into()));
    }
    if temporal.nrows() != n_prev || temporal.ncols() != n_curr {
        return Err(Error::DimensionMismatch {
            context: "assemble temporal block",
            expected: format!("{n_prev}x{n_curr}"),
            got: format!("{}x{}", temporal.nrows(), temporal.ncols()),
        });
    }
    for &v in temporal.iter() {
        if v < 0.0 {
            return Err(Error::InvalidInput(format!(
                "negative temporal weight {v}"
            )));
        }
    }
    debug_assert!(
        n_prev == 0 || (&spatial_prev - spatial_prev.transpose()).abs().max() <= 1e-12
    );
    debug_assert!(
        n_curr == 0 || (&spatial_curr - spatial_curr.transpose()).abs().max() <= 1e-12
    );

    let n = n_prev + n_curr;
    let mut adjacency = DMatrix::zeros(n, n);
    adjacency
        .view_mut((0, 0), (n_prev, n_prev))
        .copy_from(&spatial_prev);
    adjacency
        .view_mut((n_prev, n_prev), (n_curr, n_curr))
        .copy_from(&spatial_curr);
    adjacency
        .view_mut((0, n_prev), (n_prev, n_curr))
        .copy_from(&temporal);
    adjacency
        .view_mut((n_prev, 0), (n_curr, n_prev))
        .copy_from(&temporal.transpose());
    Ok(SpatioTemporalGraph {
        n_prev,
        n_curr,
        adjacency,
    })
}

/// Diagonal degree matrix D with D_ii = sum_j A_ij.
pub fn degree_matrix(g: &SpatioTemporalGraph) -> DMatrix<f64> {
    DMatrix::from_diagonal(&g.degrees())
}

/// How features propagate over the graph before the linear read-out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PropagationMode {
    /// Smoothing followed by sharpening (the full model).
    Mixed,
    /// Laplacian smoothing only.
    OnlySmoothing,
    /// No graph convolution; features pass through unchanged.
    None,
}

impl PropagationMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            PropagationMode::Mixed => "mixed",
            PropagationMode::OnlySmoothing => "only-smoothing",
            PropagationMode::None => "none",
        }
    }
}

impl FromStr for PropagationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mixed" => Ok(PropagationMode::Mixed),
            "only-smoothing" | "smoothing-only" => Ok(PropagationMode::OnlySmoothing),
            "none" | "identity" => Ok(PropagationMode::None),
            other => Err(Error::InvalidParameter {
                name: "mode",
                reason: format!("unknown propagation mode {other:?}"),
            }),
        }
    }
}

/// Dense propagation operator applied to the stacked feature matrix.
#[derive(Debug, Clone)]
pub struct PropagationOperator {
    matrix: DMatrix<f64>,
    mode: PropagationMode,
    lambda1: f64,
    lambda2: f64,
}

impl PropagationOperator {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn mode(&self) -> PropagationMode {
        self.mode
    }

    pub fn lambda1(&self) -> f64 {
        self.lambda1
    }

    pub fn lambda2(&self) -> f64 {
        self.lambda2
    }

    pub fn order(&self) -> usize {
        self.matrix.nrows()
    }
}

/// Symmetric-normalized Laplacian I - D^{-1/2} A D^{-1/2}.
fn normalized_laplacian(g: &SpatioTemporalGraph) -> Result<DMatrix<f64>> {
    let n = g.n();
    let degrees = g.degrees();
    for (i, &d) in degrees.iter().enumerate() {
        if d <= 0.0 {
            return Err(Error::Numerical(format!(
                "zero-degree node {i}: repair the graph before normalizing"
            )));
        }
    }
    let inv_sqrt: Vec<f64> = degrees.iter().map(|&d| 1.0 / d.sqrt()).collect();
    let mut l = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let norm = inv_sqrt[i] * g.adjacency[(i, j)] * inv_sqrt[j];
            l[(i, j)] = if i == j { 1.0 - norm } else { -norm };
        }
    }
    Ok(l)
}

/// Build the smoothing operator, sharpening operator, or their product.
///
/// A_m = I - lambda1 * L_sym has spectrum in [1 - 2*lambda1, 1];
/// A_h = I + lambda2 * L_sym has spectrum in [1, 1 + 2*lambda2].
pub fn propagation_operator(
    g: &SpatioTemporalGraph,
    mode: PropagationMode,
    lambda1: f64,
    lambda2: f64,
) -> Result<PropagationOperator> {
    if lambda1 < 0.0 || lambda2 < 0.0 {
        return Err(Error::InvalidParameter {
            name: "lambda",
            reason: format!("lambda1 = {lambda1}, lambda2 = {lambda2} must be non-negative"),
        });
    }
    let n = g.n();
    let matrix = match mode {
        PropagationMode::None => DMatrix::identity(n, n),
        PropagationMode::OnlySmoothing => {
            let l_sym = normalized_laplacian(g)?;
            DMatrix::identity(n, n) - l_sym * lambda1
        }
        PropagationMode::Mixed => {
            let l_sym = normalized_laplacian(g)?;
            let a_m = DMatrix::identity(n, n) - &l_sym * lambda1;
            let a_h = DMatrix::identity(n, n) + &l_sym * lambda2;
            a_m * a_h
        }
    };
    Ok(PropagationOperator {
        matrix,
        mode,
        lambda1,
        lambda2,
    })
}

/// Smoothing operator A_m alone (used by spectrum checks).
pub fn smoothing_operator(g: &SpatioTemporalGraph, lambda1: f64) -> Result<DMatrix<f64>> {
    let n = g.n();
    Ok(DMatrix::identity(n, n) - normalized_laplacian(g)? * lambda1)
}

/// Sharpening operator A_h alone (used by spectrum checks).
pub fn sharpening_operator(g: &SpatioTemporalGraph, lambda2: f64) -> Result<DMatrix<f64>> {
    let n = g.n();
    Ok(DMatrix::identity(n, n) + normalized_laplacian(g)? * lambda2)
}

/// Normalized adjacency D^{-1/2} A D^{-1/2} (spectrum inside [-1, 1]).
pub fn normalized_adjacency(g: &SpatioTemporalGraph) -> Result<DMatrix<f64>> {
    let n = g.n();
    Ok(DMatrix::identity(n, n) - normalized_laplacian(g)?)
}

/// Combinatorial Laplacian L_S = D - A: symmetric PSD with zero row sums.
pub fn combinatorial_laplacian(g: &SpatioTemporalGraph) -> DMatrix<f64> {
    let mut l = -g.adjacency.clone();
    let degrees = g.degrees();
    for i in 0..g.n() {
        l[(i, i)] += degrees[i];
    }
    l
}

/// Write a matrix as plain text: one row per line, space-separated, 12
/// significant digits.
pub fn write_matrix<W: Write>(mut w: W, m: &DMatrix<f64>) -> std::io::Result<()> {
    for i in 0..m.nrows() {
        let mut line = String::new();
        for j in 0..m.ncols() {
            if j > 0 {
                line.push(' ');
            }
            let _ = write!(line, "{:.11e}", m[(i, j)]);
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

/// Debug dump of a matrix to a text file.
pub fn dump_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_matrix(std::io::BufWriter::new(file), m)?;
    Ok(())
}
