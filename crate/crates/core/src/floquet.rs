//! Steady-state Floquet chain for a single velocity class.
//!
//! An atom moving with Doppler shift δ sees the standing-wave coupling
//! `g₀cos(δt)`. Expanding σ⁻, σ⁺ and σᶻ in harmonics `e^{ilδt}` and
//! eliminating the dipole amplitudes leaves a three-term recurrence for the
//! inversion harmonics that links only even `l`:
//!
//! ```text
//! a_l x₃⁽ˡ⁾ + d_l x₃⁽ˡ⁺²⁾ + b_l x₃⁽ˡ⁻²⁾ = −γ δ_{l,0}
//! ```
//!
//! Everything here is in units of γp, with the field in units of √n₀, so
//! `g₀²|α|²/2 = (γ/8)|x|²`.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::params::ScaledParams;

pub type C64 = Complex64;

const I: C64 = C64 { re: 0.0, im: 1.0 };

/// P_m = i(mδ + Δ) + 1.
#[inline]
fn p_prop(m: f64, delta: f64, detuning: f64) -> C64 {
    C64::new(1.0, m * delta + detuning)
}

/// Q_m = i(mδ − Δ) + 1.
#[inline]
fn q_prop(m: f64, delta: f64, detuning: f64) -> C64 {
    C64::new(1.0, m * delta - detuning)
}

/// Tridiagonal coefficients over the even orders `−l_max..=l_max`.
///
/// Slot `j` holds order `l = 2j − l_max`. `upper[j]` multiplies x₃⁽ˡ⁺²⁾ and
/// `lower[j]` multiplies x₃⁽ˡ⁻²⁾; the end entries that would reach outside
/// the truncation are kept but never used.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainCoeffs {
    pub l_max: usize,
    pub diag: Vec<C64>,
    pub upper: Vec<C64>,
    pub lower: Vec<C64>,
}

impl ChainCoeffs {
    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn slot(&self, l: i64) -> Option<usize> {
        slot_of(self.l_max, l)
    }

    pub fn order(&self, slot: usize) -> i64 {
        2 * slot as i64 - self.l_max as i64
    }

    /// a_l
    pub fn a(&self, l: i64) -> Option<C64> {
        self.slot(l).map(|j| self.diag[j])
    }

    /// d_l, the coupling of order l to l+2.
    pub fn d(&self, l: i64) -> Option<C64> {
        self.slot(l).map(|j| self.upper[j])
    }

    /// b_l, the coupling of order l to l−2.
    pub fn b(&self, l: i64) -> Option<C64> {
        self.slot(l).map(|j| self.lower[j])
    }

    /// Applies the tridiagonal operator to `v`; used for residual checks.
    pub fn apply(&self, v: &[C64]) -> Vec<C64> {
        let n = self.len();
        (0..n)
            .map(|j| {
                let mut acc = self.diag[j] * v[j];
                if j + 1 < n {
                    acc += self.upper[j] * v[j + 1];
                }
                if j > 0 {
                    acc += self.lower[j] * v[j - 1];
                }
                acc
            })
            .collect()
    }
}

fn slot_of(l_max: usize, l: i64) -> Option<usize> {
    let shifted = l + l_max as i64;
    if l.abs() > l_max as i64 || shifted % 2 != 0 {
        None
    } else {
        Some((shifted / 2) as usize)
    }
}

/// Assembles the chain for field `x`, Doppler shift `delta` and detuning
/// `detuning` (both in units of γp). Only `gamma_over_gp` and `l_max` are
/// read from `scaled`.
pub fn build_chain(x: C64, delta: f64, detuning: f64, scaled: &ScaledParams) -> ChainCoeffs {
    let n = scaled.l_max + 1;
    let mut chain = ChainCoeffs {
        l_max: scaled.l_max,
        diag: vec![C64::default(); n],
        upper: vec![C64::default(); n],
        lower: vec![C64::default(); n],
    };
    fill_chain(
        x,
        delta,
        detuning,
        scaled.gamma_over_gp,
        scaled.l_max,
        &mut chain.diag,
        &mut chain.upper,
        &mut chain.lower,
    );
    chain
}

#[allow(clippy::too_many_arguments)]
fn fill_chain(
    x: C64,
    delta: f64,
    detuning: f64,
    gamma: f64,
    l_max: usize,
    diag: &mut [C64],
    upper: &mut [C64],
    lower: &mut [C64],
) {
    let g = gamma * x.norm_sqr() / 8.0;
    // s(m) = G (1/Q_m + 1/P_m) for odd m; slot j sits between m = l−1 and l+1.
    let s = |m: i64| -> C64 {
        let m = m as f64;
        g * (q_prop(m, delta, detuning).inv() + p_prop(m, delta, detuning).inv())
    };
    let l0 = -(l_max as i64);
    let mut below = s(l0 - 1);
    for j in 0..=l_max {
        let l = l0 + 2 * j as i64;
        let above = s(l + 1);
        upper[j] = above;
        lower[j] = below;
        diag[j] = I * (l as f64 * delta) + gamma + above + below;
        below = above;
    }
}

/// Thomas forward sweep and back substitution on a tridiagonal system.
/// `rhs` is overwritten with the solution; `scratch` holds the modified
/// super-diagonal and must be at least as long as `diag`.
pub fn thomas_in_place(
    lower: &[C64],
    diag: &[C64],
    upper: &[C64],
    rhs: &mut [C64],
    scratch: &mut [C64],
) -> Result<()> {
    let n = diag.len();
    debug_assert!(lower.len() >= n && upper.len() >= n && rhs.len() >= n && scratch.len() >= n);
    if n == 0 {
        return Ok(());
    }
    let mut pivot = diag[0];
    check_pivot(pivot, 0)?;
    scratch[0] = upper[0] / pivot;
    rhs[0] /= pivot;
    for j in 1..n {
        pivot = diag[j] - lower[j] * scratch[j - 1];
        check_pivot(pivot, j)?;
        scratch[j] = if j + 1 < n {
            upper[j] / pivot
        } else {
            C64::default()
        };
        rhs[j] = (rhs[j] - lower[j] * rhs[j - 1]) / pivot;
    }
    for j in (0..n - 1).rev() {
        let next = rhs[j + 1];
        rhs[j] -= scratch[j] * next;
    }
    Ok(())
}

#[inline]
fn check_pivot(pivot: C64, slot: usize) -> Result<()> {
    let m = pivot.norm();
    if m.is_normal() {
        Ok(())
    } else {
        Err(Error::Breakdown { slot, pivot: m })
    }
}

/// Solves `chain · v = rhs`.
pub fn thomas_solve(chain: &ChainCoeffs, rhs: &[C64]) -> Result<Vec<C64>> {
    if rhs.len() != chain.len() {
        return Err(Error::InvalidParams(format!(
            "rhs has {} entries, chain has {}",
            rhs.len(),
            chain.len()
        )));
    }
    let mut out = rhs.to_vec();
    let mut scratch = vec![C64::default(); chain.len()];
    thomas_in_place(
        &chain.lower,
        &chain.diag,
        &chain.upper,
        &mut out,
        &mut scratch,
    )?;
    Ok(out)
}

/// Steady state of one velocity class.
#[derive(Debug, Clone, PartialEq)]
pub struct FloquetState {
    pub delta: f64,
    pub l_max: usize,
    /// x₃⁽ˡ⁾ for even l, slot `j` ↔ `l = 2j − l_max`.
    pub x3: Vec<C64>,
    /// x₁⁽⁻¹⁾
    pub x1_minus: C64,
    /// x₁⁽⁺¹⁾
    pub x1_plus: C64,
}

impl FloquetState {
    pub fn x3_at(&self, l: i64) -> C64 {
        slot_of(self.l_max, l).map_or(C64::default(), |j| self.x3[j])
    }

    /// Population inversion of the class (the l = 0 harmonic).
    pub fn inversion(&self) -> C64 {
        self.x3_at(0)
    }

    /// x₁⁽⁻¹⁾ + x₁⁽⁺¹⁾, the component of σ⁻ that radiates into the cavity mode.
    pub fn dipole_source(&self) -> C64 {
        self.x1_minus + self.x1_plus
    }
}

/// x₁⁽ᵐ⁾ = (g₀α/2P_m)(x₃⁽ᵐ⁺¹⁾ + x₃⁽ᵐ⁻¹⁾) in scaled units, m = ±1.
#[inline]
fn odd_dipoles(
    x: C64,
    delta: f64,
    detuning: f64,
    gamma: f64,
    x3m2: C64,
    x30: C64,
    x3p2: C64,
) -> (C64, C64) {
    let scale = x * (gamma.sqrt() / 4.0);
    let minus = scale * (x30 + x3m2) / p_prop(-1.0, delta, detuning);
    let plus = scale * (x3p2 + x30) / p_prop(1.0, delta, detuning);
    (minus, plus)
}

pub fn solve_class(
    x: C64,
    delta: f64,
    detuning: f64,
    scaled: &ScaledParams,
) -> Result<FloquetState> {
    let chain = build_chain(x, delta, detuning, scaled);
    let center = scaled.l_max / 2;
    let mut rhs = vec![C64::default(); chain.len()];
    rhs[center] = C64::new(-scaled.gamma_over_gp, 0.0);
    let x3 = thomas_solve(&chain, &rhs)?;
    let at = |l: i64| slot_of(scaled.l_max, l).map_or(C64::default(), |j| x3[j]);
    let (x1_minus, x1_plus) = odd_dipoles(
        x,
        delta,
        detuning,
        scaled.gamma_over_gp,
        at(-2),
        at(0),
        at(2),
    );
    Ok(FloquetState {
        delta,
        l_max: scaled.l_max,
        x3,
        x1_minus,
        x1_plus,
    })
}

/// Reusable buffers for solving many classes at the same truncation order.
#[derive(Debug, Clone)]
pub struct ClassSolver {
    l_max: usize,
    diag: Vec<C64>,
    upper: Vec<C64>,
    lower: Vec<C64>,
    rhs: Vec<C64>,
    scratch: Vec<C64>,
}

impl ClassSolver {
    pub fn new(l_max: usize) -> Self {
        let n = l_max + 1;
        ClassSolver {
            l_max,
            diag: vec![C64::default(); n],
            upper: vec![C64::default(); n],
            lower: vec![C64::default(); n],
            rhs: vec![C64::default(); n],
            scratch: vec![C64::default(); n],
        }
    }

    /// x₁⁽⁻¹⁾ + x₁⁽⁺¹⁾ for one class, without allocating.
    pub fn dipole_source(&mut self, x: C64, delta: f64, detuning: f64, gamma: f64) -> Result<C64> {
        let l_max = self.l_max;
        fill_chain(
            x,
            delta,
            detuning,
            gamma,
            l_max,
            &mut self.diag,
            &mut self.upper,
            &mut self.lower,
        );
        self.rhs.iter_mut().for_each(|v| *v = C64::default());
        let center = l_max / 2;
        self.rhs[center] = C64::new(-gamma, 0.0);
        thomas_in_place(
            &self.lower,
            &self.diag,
            &self.upper,
            &mut self.rhs,
            &mut self.scratch,
        )?;
        let x30 = self.rhs[center];
        let (x3m2, x3p2) = if l_max > 0 {
            (self.rhs[center - 1], self.rhs[center + 1])
        } else {
            (C64::default(), C64::default())
        };
        let (m, p) = odd_dipoles(x, delta, detuning, gamma, x3m2, x30, x3p2);
        Ok(m + p)
    }
}

/// The two-term lowest-order integrand of the standing-wave field equation,
/// including the cross-saturation factors ξ±. Summed over the velocity
/// distribution with weight NC₀/4 it gives `y/x − 1`.
pub fn l0_standing_wave_response(x: C64, detuning: f64, delta: f64) -> C64 {
    let s = x.norm_sqr();
    let up = detuning + delta;
    let um = detuning - delta;
    let xi_plus = (1.0 + up * up) / (1.0 + um * um);
    let xi_minus = 1.0 / xi_plus;
    let plus = C64::new(1.0, -up) / (1.0 + up * up + 0.25 * s * (1.0 + xi_plus));
    let minus = C64::new(1.0, -um) / (1.0 + um * um + 0.25 * s * (1.0 + xi_minus));
    plus + minus
}

/// Single traveling-wave counterpart of [`l0_standing_wave_response`];
/// enters the field equation with weight NC₀/2.
pub fn ring_cavity_response(x: C64, detuning: f64, delta: f64) -> C64 {
    let u = detuning + delta;
    C64::new(1.0, -u) / (1.0 + u * u + 0.5 * x.norm_sqr())
}

/// |Δ(x₁⁽⁻¹⁾ + x₁⁽⁺¹⁾)| between truncations `l_max` and `l_max − 2`.
pub fn truncation_increment(
    x: C64,
    delta: f64,
    detuning: f64,
    scaled: &ScaledParams,
) -> Result<f64> {
    if scaled.l_max == 0 {
        return Ok(0.0);
    }
    let hi = solve_class(x, delta, detuning, scaled)?.dipole_source();
    let lo = solve_class(x, delta, detuning, &scaled.with_l_max(scaled.l_max - 2))?.dipole_source();
    Ok((hi - lo).norm())
}
