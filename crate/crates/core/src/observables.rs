//! Transmission, phase, resonance phase slope and shot-noise linewidth.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::floquet::C64;
use crate::params::{PhysicalParams, ScaledParams, HBAR};
use crate::scans;
use crate::selfconsist::{newton_solve, SteadyState, VelocityGrid};
use std::f64::consts::PI;

/// Finite-difference step in Δ/γp for the phase slope.
pub const SLOPE_STEP: f64 = 1e-3;

/// Newton tolerance used for the solves behind a phase slope. The phase
/// differences are O(h·slope), so the default tolerance would leave only a
/// few significant digits.
const SLOPE_NEWTON_TOL: f64 = 1e-12;

/// Points per decade in the coarse scan of [`optimal_power`].
const BRACKET_PER_DECADE: usize = 16;

pub fn transmission_phase(ss: &SteadyState) -> Result<(f64, f64)> {
    if ss.y == C64::default() {
        return Err(Error::ZeroDrive);
    }
    let r = ss.x / ss.y;
    Ok((r.norm_sqr(), r.arg()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeEstimate {
    /// dφ/d(Δ/γp) at Δ = 0, five-point stencil with step h.
    pub slope: f64,
    /// Same stencil with step h/2.
    pub slope_half_step: f64,
    /// |slope − slope_half_step| / |slope|.
    pub richardson_discrepancy: f64,
    /// Solution at Δ = 0.
    pub resonant: SteadyState,
}

/// Phase slope at Δ = 0 for drive |y|² = `y_sq`.
pub fn phase_slope_at_resonance(
    y_sq: f64,
    scaled: &ScaledParams,
    grid: &VelocityGrid,
) -> Result<SlopeEstimate> {
    phase_slope_seeded(y_sq, scaled, grid, None)
}

/// [`phase_slope_at_resonance`] with an optional seed for the resonant solve.
pub fn phase_slope_seeded(
    y_sq: f64,
    scaled: &ScaledParams,
    grid: &VelocityGrid,
    seed: Option<C64>,
) -> Result<SlopeEstimate> {
    if !(y_sq > 0.0) {
        return Err(Error::ZeroDrive);
    }
    let tight = ScaledParams {
        newton_tol: scaled.newton_tol.min(SLOPE_NEWTON_TOL),
        ..scaled.clone()
    };
    let y = C64::new(y_sq.sqrt(), 0.0);
    let resonant = newton_solve(y, 0.0, &tight, grid, seed)?;
    if scaled.nc0 == 0.0 {
        return Ok(SlopeEstimate {
            slope: 0.0,
            slope_half_step: 0.0,
            richardson_discrepancy: 0.0,
            resonant,
        });
    }
    let h = SLOPE_STEP;
    let offsets = [-2.0 * h, -h, -0.5 * h, 0.5 * h, h, 2.0 * h];
    let phases: Vec<f64> = offsets
        .par_iter()
        .map(|&d| newton_solve(y, d, &tight, grid, Some(resonant.x)).map(|ss| ss.phase))
        .collect::<Result<_>>()?;
    let [m2, m1, mh, ph, p1, p2] = [
        phases[0], phases[1], phases[2], phases[3], phases[4], phases[5],
    ];
    let phi0 = resonant.phase;
    let five_point = |f_m2: f64, f_m1: f64, f_p1: f64, f_p2: f64, step: f64| {
        (-f_p2 + 8.0 * f_p1 - 8.0 * f_m1 + f_m2) / (12.0 * step)
    };
    let slope = five_point(m2, m1, p1, p2, h);
    let slope_half_step = five_point(m1, mh, ph, p1, 0.5 * h);
    let richardson_discrepancy = if slope != 0.0 {
        (slope - slope_half_step).abs() / slope.abs()
    } else {
        0.0
    };
    if richardson_discrepancy > 0.01 {
        log::warn!(
            "phase slope at |y|² = {y_sq:.6e} is step-size sensitive: {slope:.6e} (h) vs {slope_half_step:.6e} (h/2)"
        );
    }
    // φ(0) should vanish on a symmetric grid; anything else skews the stencil.
    if phi0.abs() > 1e-9 {
        log::warn!("phase at resonance is {phi0:.3e}, not 0");
    }
    Ok(SlopeEstimate {
        slope,
        slope_half_step,
        richardson_discrepancy,
        resonant,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinewidthResult {
    /// Δν in Hz from signal power and SI slope, sideband multiplier included.
    pub delta_nu: f64,
    /// Δν from the scaled form `m·C₀γp²/(2πεγ|x|²s²)`; equals `delta_nu`.
    pub delta_nu_scaled_form: f64,
    /// The scaled form with 4π in the denominator, as it is usually quoted;
    /// half of `delta_nu`.
    pub delta_nu_quoted_form: f64,
    /// dφ/dΔ in s/rad.
    pub slope: f64,
    /// dφ/d(Δ/γp).
    pub slope_scaled: f64,
    pub x_sq: f64,
    pub y_sq: f64,
    pub transmission: f64,
    /// Input power (W) for this |y|².
    pub p_in: f64,
    /// Detected signal power T·P_in (W).
    pub p_sig: f64,
    pub sideband_multiplier: f64,
    pub richardson_discrepancy: f64,
}

/// Shot-noise-limited linewidth at drive |y|² = `y_sq`.
pub fn linewidth(
    y_sq: f64,
    scaled: &ScaledParams,
    phys: &PhysicalParams,
    grid: &VelocityGrid,
) -> Result<LinewidthResult> {
    linewidth_seeded(y_sq, scaled, phys, grid, None)
}

pub fn linewidth_seeded(
    y_sq: f64,
    scaled: &ScaledParams,
    phys: &PhysicalParams,
    grid: &VelocityGrid,
    seed: Option<C64>,
) -> Result<LinewidthResult> {
    let est = phase_slope_seeded(y_sq, scaled, grid, seed)?;
    linewidth_from_slope(&est, y_sq, phys)
}

/// Converts a slope estimate into a linewidth.
pub fn linewidth_from_slope(
    est: &SlopeEstimate,
    y_sq: f64,
    phys: &PhysicalParams,
) -> Result<LinewidthResult> {
    let x_sq = est.resonant.x_sq();
    if est.slope == 0.0 || x_sq == 0.0 {
        return Err(Error::ZeroSlope);
    }
    if !(phys.epsilon > 0.0) {
        return Err(Error::InvalidParams("epsilon must be positive".into()));
    }
    let m = phys.sideband_multiplier();
    let slope_si = est.slope / phys.gamma_p;
    let p_in = phys.power_for_y_sq(y_sq)?;
    let transmission = est.resonant.transmission;
    let p_sig = transmission * p_in;
    let delta_nu =
        m * HBAR * phys.omega() / (8.0 * PI * phys.epsilon * p_sig * slope_si * slope_si);
    let prefactor = phys.scaled_linewidth_prefactor()?;
    let s2 = est.slope * est.slope;
    let delta_nu_scaled_form = prefactor / (x_sq * s2);
    Ok(LinewidthResult {
        delta_nu,
        delta_nu_scaled_form,
        delta_nu_quoted_form: 0.5 * delta_nu_scaled_form,
        slope: slope_si,
        slope_scaled: est.slope,
        x_sq,
        y_sq,
        transmission,
        p_in,
        p_sig,
        sideband_multiplier: m,
        richardson_discrepancy: est.richardson_discrepancy,
    })
}

/// Minimizes Δν over |y|² in `y_sq_range`: a log-spaced scan brackets the
/// minimum, golden-section search refines it in log |y|².
///
/// The range is first checked for bistability at resonance. `grid` must be
/// fine enough for the largest drive in the range.
pub fn optimal_power(
    scaled: &ScaledParams,
    phys: &PhysicalParams,
    grid: &VelocityGrid,
    y_sq_range: (f64, f64),
) -> Result<(f64, LinewidthResult)> {
    let (lo, hi) = y_sq_range;
    if !(lo > 0.0 && hi > lo && hi.is_finite()) {
        return Err(Error::InvalidParams(format!(
            "invalid |y|² range [{lo}, {hi}]"
        )));
    }
    if let Some((w_lo, w_hi)) = scans::bistable_window_in(scaled, grid, y_sq_range)? {
        return Err(Error::BistableRange {
            lo,
            hi,
            window_lo: w_lo,
            window_hi: w_hi,
        });
    }

    let decades = (hi / lo).log10();
    let n = ((decades * BRACKET_PER_DECADE as f64).ceil() as usize).max(2) + 1;
    let log_pts: Vec<f64> = (0..n)
        .map(|k| lo.log10() + decades * k as f64 / (n - 1) as f64)
        .collect();
    // Continuation upward in power keeps every solve on the branch the
    // previous one found.
    let mut scan: Vec<LinewidthResult> = Vec::with_capacity(n);
    for &lp in &log_pts {
        let y_sq = 10f64.powf(lp);
        let seed = scan
            .last()
            .map(|r| C64::new((r.x_sq * y_sq / r.y_sq).sqrt(), 0.0));
        scan.push(linewidth_seeded(y_sq, scaled, phys, grid, seed)?);
    }
    let best = (0..n)
        .min_by(|&a, &b| scan[a].delta_nu.total_cmp(&scan[b].delta_nu))
        .unwrap_or(0);
    if best == 0 || best == n - 1 {
        log::warn!("linewidth minimum lies at the edge of the |y|² range");
    }
    let mut a = log_pts[best.saturating_sub(1)];
    let mut b = log_pts[(best + 1).min(n - 1)];
    let seed = C64::new(scan[best].x_sq.sqrt(), 0.0);
    let eval = |lp: f64| -> Result<LinewidthResult> {
        linewidth_seeded(10f64.powf(lp), scaled, phys, grid, Some(seed))
    };

    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = eval(c)?;
    let mut fd = eval(d)?;
    // Stop at a relative |y|² resolution of about 1e-4.
    while (b - a) > 4e-5 {
        if fc.delta_nu < fd.delta_nu {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = eval(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = eval(d)?;
        }
    }
    let mut result = if fc.delta_nu < fd.delta_nu { fc } else { fd };
    if scan[best].delta_nu < result.delta_nu {
        result = scan[best].clone();
    }
    Ok((result.y_sq, result))
}
