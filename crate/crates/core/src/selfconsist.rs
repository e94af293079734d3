//! Velocity averaging and closure of the cavity field equation.
//!
//! The forward map sends an intracavity field `x` to the drive `y` that
//! sustains it:
//!
//! ```text
//! y = x − (NC₀/√γ̃) Σᵢ wᵢ [x₁⁽⁻¹⁾(δᵢ) + x₁⁽⁺¹⁾(δᵢ)]
//! ```
//!
//! It is single-valued, so bistability shows up only when inverting it.
//! [`newton_solve`] performs that inversion on `(Re x, Im x)`.

use std::num::NonZeroUsize;

use gauss_quad::legendre::GaussLegendre;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::floquet::{l0_standing_wave_response, ring_cavity_response, ClassSolver, C64};
use crate::params::ScaledParams;

/// Below this many nodes the forward map runs on the calling thread.
const PAR_THRESHOLD: usize = 256;

/// Panel layout of the composite velocity quadrature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Half-extent of the grid in units of δ₀.
    pub extent_sigmas: f64,
    /// Panel width (γp) inside the dense patches.
    pub inner_panel: f64,
    /// Panel width (γp) elsewhere.
    pub outer_panel: f64,
    /// Smallest half-width of a dense patch; grows as 3|x|.
    pub min_patch: f64,
    /// Gauss–Legendre nodes per panel.
    pub nodes_per_panel: usize,
}

impl GridSpec {
    pub fn for_params(scaled: &ScaledParams) -> Self {
        GridSpec {
            extent_sigmas: 7.0,
            inner_panel: 1.0,
            outer_panel: 4.0,
            min_patch: 10.0,
            nodes_per_panel: scaled.vel_nodes,
        }
    }
}

/// Dense patch of the grid, on the positive half-axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Patch {
    pub lo: f64,
    pub hi: f64,
}

/// Symmetric quadrature for ∫dδ P(δ)(·) with P a unit-normalized Gaussian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VelocityGrid {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    /// Dense patches, empty for hand-made or single-node grids.
    pub refinement: Vec<Patch>,
}

impl VelocityGrid {
    /// Zero temperature: one class at rest.
    pub fn at_rest() -> Self {
        VelocityGrid {
            nodes: vec![0.0],
            weights: vec![1.0],
            refinement: Vec::new(),
        }
    }

    /// Grid for the given parameters, with a dense patch around δ = 0 sized
    /// for an intracavity field of magnitude `x_est`, and further patches
    /// around each of `centers` (typically ±Δ, the classes resonant with one
    /// of the running waves).
    pub fn build(delta0: f64, spec: &GridSpec, x_est: f64, centers: &[f64]) -> Self {
        if delta0 == 0.0 {
            return Self::at_rest();
        }
        let extent = spec.extent_sigmas * delta0;
        let half = spec.min_patch.max(3.0 * x_est.abs());
        let mut fine: Vec<(f64, f64)> = vec![(0.0, half.min(extent))];
        for &c in centers {
            let c = c.abs();
            if c - half < extent {
                fine.push(((c - half).max(0.0), (c + half).min(extent)));
            }
        }
        fine.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut merged: Vec<(f64, f64)> = Vec::new();
        for (lo, hi) in fine {
            match merged.last_mut() {
                Some(last) if lo <= last.1 => last.1 = last.1.max(hi),
                _ => merged.push((lo, hi)),
            }
        }

        let mut segments: Vec<(f64, f64, f64)> = Vec::new();
        let mut at = 0.0;
        for &(lo, hi) in &merged {
            if lo > at {
                segments.push((at, lo, spec.outer_panel));
            }
            segments.push((lo, hi, spec.inner_panel));
            at = hi;
        }
        if at < extent {
            segments.push((at, extent, spec.outer_panel));
        }

        let n = NonZeroUsize::new(spec.nodes_per_panel.max(1)).unwrap_or(NonZeroUsize::MIN);
        let rule = GaussLegendre::new(n);
        let gl = rule.as_node_weight_pairs();
        let mut pos_nodes = Vec::new();
        let mut pos_weights = Vec::new();
        for (a, b, width) in segments {
            // Never coarser than half a standard deviation of the Gaussian.
            let width = width.min(0.5 * delta0);
            let panels = ((b - a) / width).ceil().max(1.0) as usize;
            let h = (b - a) / panels as f64;
            for p in 0..panels {
                let mid = a + (p as f64 + 0.5) * h;
                for &(t, w) in gl {
                    let d = mid + 0.5 * h * t;
                    pos_nodes.push(d);
                    pos_weights.push(0.5 * h * w * (-0.5 * (d / delta0).powi(2)).exp());
                }
            }
        }
        let mut order: Vec<usize> = (0..pos_nodes.len()).collect();
        order.sort_by(|&i, &j| pos_nodes[i].total_cmp(&pos_nodes[j]));
        let pos: Vec<(f64, f64)> = order
            .into_iter()
            .map(|i| (pos_nodes[i], pos_weights[i]))
            .collect();

        let mut nodes: Vec<f64> = pos.iter().rev().map(|&(d, _)| -d).collect();
        let mut weights: Vec<f64> = pos.iter().rev().map(|&(_, w)| w).collect();
        nodes.extend(pos.iter().map(|&(d, _)| d));
        weights.extend(pos.iter().map(|&(_, w)| w));
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        VelocityGrid {
            nodes,
            weights,
            refinement: merged
                .into_iter()
                .map(|(lo, hi)| Patch { lo, hi })
                .collect(),
        }
    }

    /// Default grid for a solve at `scaled`: the field estimate is |y| (the
    /// intracavity field never exceeds the drive) and a patch is added
    /// around |Δ| off resonance.
    pub fn for_params(scaled: &ScaledParams) -> Self {
        let det = scaled.detuning_over_gp.abs();
        let centers: &[f64] = if det > 0.0 { &[det] } else { &[] };
        Self::build(
            scaled.delta0_over_gp,
            &GridSpec::for_params(scaled),
            scaled.y_sq.sqrt(),
            centers,
        )
    }

    /// Midpoint grid of `n_half` equal bins per side on ±`extent_sigmas`·δ₀.
    /// Coarse but cheap; both solvers can share it when only the identical
    /// discrete measure matters.
    pub fn uniform(delta0: f64, n_half: usize, extent_sigmas: f64) -> Self {
        if delta0 == 0.0 || n_half == 0 {
            return Self::at_rest();
        }
        let h = extent_sigmas * delta0 / n_half as f64;
        let pos: Vec<f64> = (0..n_half).map(|k| (k as f64 + 0.5) * h).collect();
        let mut nodes: Vec<f64> = pos.iter().rev().map(|d| -d).collect();
        nodes.extend(&pos);
        let mut weights: Vec<f64> = nodes
            .iter()
            .map(|d| (-0.5 * (d / delta0).powi(2)).exp())
            .collect();
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        VelocityGrid {
            nodes,
            weights,
            refinement: Vec::new(),
        }
    }

    /// Grid from explicit nodes and weights; weights are renormalized.
    pub fn from_nodes(nodes: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if nodes.len() != weights.len() || nodes.is_empty() {
            return Err(Error::InvalidParams(
                "grid needs matching, non-empty nodes and weights".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidParams(
                "grid weights must be non-negative with positive sum".into(),
            ));
        }
        let weights = weights.into_iter().map(|w| w / total).collect();
        Ok(VelocityGrid {
            nodes,
            weights,
            refinement: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Σ wᵢ f(δᵢ), summed sequentially in node order.
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&d, &w)| w * f(d))
            .sum()
    }

    pub fn is_symmetric(&self) -> bool {
        let n = self.len();
        (0..n).all(|i| {
            self.nodes[i] == -self.nodes[n - 1 - i] && self.weights[i] == self.weights[n - 1 - i]
        })
    }
}

/// Σ wᵢ (x₁⁽⁻¹⁾ + x₁⁽⁺¹⁾) over the grid.
///
/// Per-class values are collected in node order and summed sequentially, so
/// the result does not depend on the number of worker threads.
pub fn averaged_dipole_source(
    x: C64,
    detuning: f64,
    scaled: &ScaledParams,
    grid: &VelocityGrid,
) -> Result<C64> {
    let gamma = scaled.gamma_over_gp;
    let l_max = scaled.l_max;
    let terms: Vec<C64> = if grid.len() < PAR_THRESHOLD {
        let mut solver = ClassSolver::new(l_max);
        grid.nodes
            .iter()
            .zip(&grid.weights)
            .map(|(&d, &w)| solver.dipole_source(x, d, detuning, gamma).map(|s| s * w))
            .collect::<Result<_>>()?
    } else {
        grid.nodes
            .par_iter()
            .zip(grid.weights.par_iter())
            .map_init(
                || ClassSolver::new(l_max),
                |solver, (&d, &w)| solver.dipole_source(x, d, detuning, gamma).map(|s| s * w),
            )
            .collect::<Result<_>>()?
    };
    Ok(terms.into_iter().sum())
}

/// Drive `y` that sustains intracavity field `x` at the given detuning.
pub fn forward_map(
    x: C64,
    detuning: f64,
    scaled: &ScaledParams,
    grid: &VelocityGrid,
) -> Result<C64> {
    if scaled.nc0 == 0.0 {
        return Ok(x);
    }
    let source = averaged_dipole_source(x, detuning, scaled, grid)?;
    Ok(x - source * (scaled.nc0 / scaled.gamma_over_gp.sqrt()))
}

/// Forward map of a ring cavity, where each atom sees a single running wave.
pub fn forward_map_ring(x: C64, detuning: f64, scaled: &ScaledParams, grid: &VelocityGrid) -> C64 {
    let sum: C64 = grid
        .nodes
        .iter()
        .zip(&grid.weights)
        .map(|(&d, &w)| ring_cavity_response(x, detuning, d) * w)
        .sum();
    x * (1.0 + 0.5 * scaled.nc0 * sum)
}

/// Forward map from the lowest-order closed form, independent of the chain.
pub fn forward_map_lowest_order(
    x: C64,
    detuning: f64,
    scaled: &ScaledParams,
    grid: &VelocityGrid,
) -> C64 {
    let sum: C64 = grid
        .nodes
        .iter()
        .zip(&grid.weights)
        .map(|(&d, &w)| l0_standing_wave_response(x, detuning, d) * w)
        .sum();
    x * (1.0 + 0.25 * scaled.nc0 * sum)
}

/// Relative change of the forward map between truncations `l_max` and
/// `l_max − 2` at field `x`.
pub fn truncation_increment(
    x: C64,
    detuning: f64,
    scaled: &ScaledParams,
    grid: &VelocityGrid,
) -> Result<f64> {
    if scaled.l_max == 0 || scaled.nc0 == 0.0 {
        return Ok(0.0);
    }
    let hi = forward_map(x, detuning, scaled, grid)?;
    let lo = forward_map(x, detuning, &scaled.with_l_max(scaled.l_max - 2), grid)?;
    Ok((hi - lo).norm() / hi.norm().max(f64::MIN_POSITIVE))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Low,
    High,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteadyState {
    pub x: C64,
    pub y: C64,
    /// |x/y|²; NaN at zero drive.
    pub transmission: f64,
    /// arg(x/y); NaN at zero drive.
    pub phase: f64,
    pub newton_iters: usize,
    /// |forward_map(x) − y|.
    pub residual: f64,
    pub converged: bool,
    pub branch_tag: Branch,
}

impl SteadyState {
    fn new(x: C64, y: C64, newton_iters: usize, residual: f64, converged: bool) -> Self {
        let (transmission, phase) = if y == C64::default() {
            (f64::NAN, f64::NAN)
        } else {
            let r = x / y;
            (r.norm_sqr(), r.arg())
        };
        SteadyState {
            x,
            y,
            transmission,
            phase,
            newton_iters,
            residual,
            converged,
            branch_tag: Branch::Unknown,
        }
    }

    pub fn x_sq(&self) -> f64 {
        self.x.norm_sqr()
    }
}

/// Convergence threshold on |forward_map(x) − y|.
pub fn residual_threshold(y: C64, tol: f64) -> f64 {
    tol * y.norm().max(1.0)
}

/// Newton iteration that always returns its best iterate, with
/// `converged = false` when the tolerance was not met.
pub fn newton_best_effort(
    y: C64,
    detuning: f64,
    scaled: &ScaledParams,
    grid: &VelocityGrid,
    x0: Option<C64>,
) -> Result<SteadyState> {
    let threshold = residual_threshold(y, scaled.newton_tol);
    let f = |x: C64| forward_map(x, detuning, scaled, grid).map(|v| v - y);
    let mut x = x0.unwrap_or(y);
    let mut r = f(x)?;
    let mut iters = 0;
    while r.norm() >= threshold && iters < scaled.max_newton_iters {
        iters += 1;
        let h = 1e-6 * x.norm().max(1.0);
        let dre = (f(x + h)? - f(x - h)?) / (2.0 * h);
        let dim = (f(x + C64::new(0.0, h))? - f(x - C64::new(0.0, h))?) / (2.0 * h);
        // [dre.re dim.re; dre.im dim.im] · (u, v) = −(r.re, r.im)
        let det = dre.re * dim.im - dim.re * dre.im;
        if !(det.abs() > 0.0) || !det.is_finite() {
            break;
        }
        let u = (-r.re * dim.im + dim.re * r.im) / det;
        let v = (-dre.re * r.im + dre.im * r.re) / det;
        let step = C64::new(u, v);
        let mut lambda = 1.0;
        let mut accepted = false;
        while lambda >= 1.0 / 1024.0 {
            let xn = x + step * lambda;
            let rn = f(xn)?;
            if rn.norm() < r.norm() {
                x = xn;
                r = rn;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let res = r.norm();
    Ok(SteadyState::new(x, y, iters, res, res < threshold))
}

/// Finds `x` with `forward_map(x) = y`, seeded from `x0` or the empty-cavity
/// value `y`. Without an explicit seed a stalled iteration is retried once
/// from the linear-response field, which reaches the weak-field branch when
/// the saturated seed gets trapped behind a fold.
pub fn newton_solve(
    y: C64,
    detuning: f64,
    scaled: &ScaledParams,
    grid: &VelocityGrid,
    x0: Option<C64>,
) -> Result<SteadyState> {
    let mut ss = newton_best_effort(y, detuning, scaled, grid, x0)?;
    if !ss.converged && x0.is_none() {
        let seed = linear_response_seed(y, detuning, scaled, grid)?;
        let retry = newton_best_effort(y, detuning, scaled, grid, Some(seed))?;
        if retry.converged || retry.residual < ss.residual {
            ss = retry;
        }
    }
    if ss.converged {
        Ok(ss)
    } else {
        Err(Error::NonConvergence {
            iterations: ss.newton_iters,
            best_residual: ss.residual,
            best_x: (ss.x.re, ss.x.im),
        })
    }
}

/// `y/χ` with `χ = forward_map(ε)/ε`, the field of an unsaturated medium.
pub fn linear_response_seed(
    y: C64,
    detuning: f64,
    scaled: &ScaledParams,
    grid: &VelocityGrid,
) -> Result<C64> {
    let eps = C64::new(1e-6, 0.0);
    let chi = forward_map(eps, detuning, scaled, grid)? / eps;
    Ok(y / chi)
}

/// Solutions reached from a weak-field seed and from a saturated seed.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchPair {
    pub low: SteadyState,
    pub high: SteadyState,
    /// The two seeds converged to distinct fields: the input is bistable.
    pub multi_branch: bool,
}

/// Solves from both ends of the response curve: from the linear-response
/// field and from the empty-cavity value `y`. A seed that stalls means its
/// branch does not exist at this drive; the pair then holds the other
/// solution twice.
pub fn solve_branches(
    y: C64,
    detuning: f64,
    scaled: &ScaledParams,
    grid: &VelocityGrid,
) -> Result<BranchPair> {
    let low_seed = linear_response_seed(y, detuning, scaled, grid)?;
    let a = newton_best_effort(y, detuning, scaled, grid, Some(low_seed))?;
    let b = newton_best_effort(y, detuning, scaled, grid, Some(y))?;
    let (mut low, mut high) = match (a.converged, b.converged) {
        (true, true) => (a, b),
        (true, false) => (a.clone(), a),
        (false, true) => (b.clone(), b),
        (false, false) => {
            let best = if a.residual <= b.residual { a } else { b };
            return Err(Error::NonConvergence {
                iterations: best.newton_iters,
                best_residual: best.residual,
                best_x: (best.x.re, best.x.im),
            });
        }
    };
    if low.x.norm() > high.x.norm() {
        std::mem::swap(&mut low, &mut high);
    }
    let multi_branch = (high.x - low.x).norm() > 1e-6 * high.x.norm().max(1e-300);
    if multi_branch {
        low.branch_tag = Branch::Low;
        high.branch_tag = Branch::High;
        log::warn!(
            "input |y|² = {:.6e} is bistable: |x|² = {:.6e} or {:.6e}",
            y.norm_sqr(),
            low.x_sq(),
            high.x_sq()
        );
    }
    Ok(BranchPair {
        low,
        high,
        multi_branch,
    })
}
