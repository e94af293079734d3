//! Sweeps over detuning, drive, truncation order, cooperativity and
//! temperature, plus the element survey.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::floquet::C64;
use crate::observables::{linewidth_seeded, optimal_power, phase_slope_at_resonance};
use crate::params::{PhysicalParams, ScaledParams, SurveyRow};
use crate::selfconsist::{
    forward_map, newton_best_effort, truncation_increment, GridSpec, SteadyState, VelocityGrid,
};

/// Default density of the input-output curve.
pub const CURVE_POINTS_PER_DECADE: usize = 256;

/// Default |y|² search range for the optimum, as multiples of NC₀.
pub const OPTIMUM_RANGE_FACTORS: (f64, f64) = (0.1, 10.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub axis_value: f64,
    pub x_sq: f64,
    pub y_sq: f64,
    pub transmission: f64,
    pub phi: f64,
    pub slope: Option<f64>,
    pub delta_nu: Option<f64>,
    /// Δν relative to the lowest-order (l_max = 0) value.
    pub ratio: Option<f64>,
    pub converged: bool,
    pub newton_iters: usize,
    /// Relative change of the forward map between l_max and l_max − 2.
    pub l_increment: f64,
}

impl SweepPoint {
    fn from_state(axis_value: f64, ss: &SteadyState, l_increment: f64) -> Self {
        SweepPoint {
            axis_value,
            x_sq: ss.x_sq(),
            y_sq: ss.y.norm_sqr(),
            transmission: ss.transmission,
            phi: ss.phase,
            slope: None,
            delta_nu: None,
            ratio: None,
            converged: ss.converged,
            newton_iters: ss.newton_iters,
            l_increment,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis_name: String,
    pub points: Vec<SweepPoint>,
    pub metadata: ScaledParams,
    /// Why the sweep stopped before its last axis value, if it did.
    pub termination: Option<String>,
}

impl SweepResult {
    pub fn failures(&self) -> usize {
        self.points.iter().filter(|p| !p.converged).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BistabilityReport {
    /// (|x|², |y|²) where d|y|²/d|x|² changes sign.
    pub turning_points: Vec<(f64, f64)>,
    pub bistable: bool,
    /// (lowest, highest) turning-point |y|² when bistable.
    pub window: Option<(f64, f64)>,
}

impl BistabilityReport {
    fn from_turning_points(turning_points: Vec<(f64, f64)>) -> Self {
        let bistable = turning_points.len() >= 2;
        let window = bistable.then(|| {
            let lo = turning_points
                .iter()
                .map(|t| t.1)
                .fold(f64::INFINITY, f64::min);
            let hi = turning_points
                .iter()
                .map(|t| t.1)
                .fold(f64::NEG_INFINITY, f64::max);
            (lo, hi)
        });
        BistabilityReport {
            turning_points,
            bistable,
            window,
        }
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64)
            .collect(),
    }
}

fn logspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    linspace(lo.log10(), hi.log10(), n)
        .into_iter()
        .map(|e| 10f64.powf(e))
        .collect()
}

/// Number of log-spaced points for `per_decade` density on [lo, hi].
pub fn points_for_range(lo: f64, hi: f64, per_decade: usize) -> usize {
    ((hi / lo).log10() * per_decade as f64).ceil() as usize + 1
}

/// T(Δ) and φ(Δ) at fixed drive, continuation-seeded left to right.
///
/// Each point uses its own velocity grid with a dense patch around |Δ|;
/// grids for ±Δ are mirror images, so the spectrum keeps its symmetry.
/// Points that fail to converge are recorded and the sweep carries on.
pub fn sweep_detuning(
    scaled: &ScaledParams,
    y_sq: f64,
    range: (f64, f64),
    n_points: usize,
) -> Result<SweepResult> {
    if !(range.1 > range.0) {
        return Err(Error::InvalidParams(format!(
            "detuning range [{}, {}] is empty",
            range.0, range.1
        )));
    }
    let base = scaled.with_y_sq(y_sq);
    let y = C64::new(y_sq.sqrt(), 0.0);
    let mut seed = None;
    let mut points = Vec::with_capacity(n_points);
    for det in linspace(range.0, range.1, n_points) {
        let grid = VelocityGrid::for_params(&base.with_detuning(det));
        let ss = newton_best_effort(y, det, &base, &grid, seed)?;
        let ss = if ss.converged || seed.is_none() {
            ss
        } else {
            // Continuation can carry a stale seed across a sharp feature.
            let fresh = newton_best_effort(y, det, &base, &grid, None)?;
            if fresh.residual < ss.residual {
                fresh
            } else {
                ss
            }
        };
        if !ss.converged {
            log::warn!(
                "no convergence at Δ/γp = {det}: residual {:.3e}",
                ss.residual
            );
        }
        seed = ss.converged.then_some(ss.x);
        let inc = truncation_increment(ss.x, det, &base, &grid)?;
        points.push(SweepPoint::from_state(det, &ss, inc));
    }
    Ok(SweepResult {
        axis_name: "delta_over_gp".into(),
        points,
        metadata: base,
        termination: None,
    })
}

/// |y|²(|x|²) on resonance for real x on a log grid, with turning points.
///
/// Uses the forward map only, so the curve has no hysteresis and needs no
/// seeds. Turning points are bracketed by sign changes of the discrete
/// slope and refined by bisection on a centred derivative.
pub fn input_output_curve(
    scaled: &ScaledParams,
    x_sq_range: (f64, f64),
    n_points: usize,
) -> Result<(SweepResult, BistabilityReport)> {
    let grid = VelocityGrid::build(
        scaled.delta0_over_gp,
        &GridSpec::for_params(scaled),
        x_sq_range.1.sqrt(),
        &[],
    );
    curve_on_grid(scaled, &grid, x_sq_range, n_points, true)
}

/// [`input_output_curve`] on a caller-supplied grid, without the
/// truncation diagnostic.
pub fn input_output_curve_on(
    scaled: &ScaledParams,
    grid: &VelocityGrid,
    x_sq_range: (f64, f64),
    n_points: usize,
) -> Result<(SweepResult, BistabilityReport)> {
    curve_on_grid(scaled, grid, x_sq_range, n_points, false)
}

fn curve_on_grid(
    scaled: &ScaledParams,
    grid: &VelocityGrid,
    x_sq_range: (f64, f64),
    n_points: usize,
    diagnostics: bool,
) -> Result<(SweepResult, BistabilityReport)> {
    let (lo, hi) = x_sq_range;
    if !(lo > 0.0 && hi > lo) || n_points < 3 {
        return Err(Error::InvalidParams(format!(
            "invalid |x|² range [{lo}, {hi}] with {n_points} points"
        )));
    }
    if !grid.is_symmetric() {
        return Err(Error::InvalidParams(
            "resonant curves need a symmetric velocity grid".into(),
        ));
    }
    let base = scaled.with_detuning(0.0);
    let x_sq = logspace(lo, hi, n_points);
    let y_sq_of = |xs: f64| -> Result<f64> {
        let x = xs.sqrt();
        let y = forward_map(C64::new(x, 0.0), 0.0, &base, grid)?;
        // Real x gives real y on a symmetric grid at Δ = 0.
        debug_assert!(y.im.abs() <= 1e-9 * y.norm().max(1.0), "y = {y}");
        Ok(y.norm_sqr())
    };
    let y_sq: Vec<f64> = x_sq
        .par_iter()
        .map(|&xs| y_sq_of(xs))
        .collect::<Result<_>>()?;

    let slope_sign = |i: usize| (y_sq[i + 1] - y_sq[i]).signum();
    let mut turning = Vec::new();
    for i in 1..n_points - 1 {
        if slope_sign(i - 1) != slope_sign(i) {
            turning.push(refine_turning_point(&y_sq_of, x_sq[i - 1], x_sq[i + 1])?);
        }
    }
    let report = BistabilityReport::from_turning_points(turning);
    let increments: Vec<f64> = if diagnostics {
        x_sq.par_iter()
            .map(|&xs| truncation_increment(C64::new(xs.sqrt(), 0.0), 0.0, &base, grid))
            .collect::<Result<_>>()?
    } else {
        vec![0.0; n_points]
    };
    let points: Vec<SweepPoint> = x_sq
        .iter()
        .zip(&y_sq)
        .zip(&increments)
        .map(|((&xs, &ys), &inc)| SweepPoint {
            axis_value: xs,
            x_sq: xs,
            y_sq: ys,
            transmission: xs / ys,
            phi: 0.0,
            slope: None,
            delta_nu: None,
            ratio: None,
            converged: true,
            newton_iters: 0,
            l_increment: inc,
        })
        .collect();
    Ok((
        SweepResult {
            axis_name: "x_sq".into(),
            points,
            metadata: base,
            termination: None,
        },
        report,
    ))
}

/// Bisection on the sign of d|y|²/d|x|² inside [a, b] (in |x|²).
fn refine_turning_point(
    y_sq_of: &(impl Fn(f64) -> Result<f64> + Sync),
    a: f64,
    b: f64,
) -> Result<(f64, f64)> {
    let deriv = |xs: f64| -> Result<f64> {
        let h = 1e-7 * xs;
        Ok(y_sq_of(xs + h)? - y_sq_of(xs - h)?)
    };
    let (mut a, mut b) = (a, b);
    let da = deriv(a)?;
    let db = deriv(b)?;
    if da.signum() == db.signum() {
        // The discrete slope changed sign but the endpoints disagree; fall
        // back to the sampled extremum.
        let m = (a * b).sqrt();
        return Ok((m, y_sq_of(m)?));
    }
    while (b - a) > 1e-10 * b {
        let m = 0.5 * (a + b);
        if deriv(m)?.signum() == da.signum() {
            a = m;
        } else {
            b = m;
        }
    }
    let m = 0.5 * (a + b);
    Ok((m, y_sq_of(m)?))
}

/// Bistable window at resonance if it overlaps `y_sq_range`.
pub fn bistable_window_in(
    scaled: &ScaledParams,
    grid: &VelocityGrid,
    y_sq_range: (f64, f64),
) -> Result<Option<(f64, f64)>> {
    if scaled.nc0 == 0.0 {
        return Ok(None);
    }
    let eps = C64::new(1e-6, 0.0);
    let chi = forward_map(eps, 0.0, &scaled.with_detuning(0.0), grid)? / eps;
    // |x| ≤ |y| always, and |x| ≥ |y|/|χ| on the weak-field branch.
    let lo = 0.5 * y_sq_range.0 / chi.norm_sqr();
    let hi = y_sq_range.1;
    let n = points_for_range(lo, hi, CURVE_POINTS_PER_DECADE);
    let (_, report) = input_output_curve_on(scaled, grid, (lo, hi), n)?;
    Ok(report
        .window
        .filter(|&(w_lo, w_hi)| w_lo < y_sq_range.1 && w_hi > y_sq_range.0))
}

/// Resonant bistability predicate used for the temperature bisection.
pub fn is_bistable(scaled: &ScaledParams) -> Result<bool> {
    let hi = 10.0 * scaled.nc0.max(1.0);
    let lo = 1e-2;
    let n = points_for_range(lo, hi, CURVE_POINTS_PER_DECADE);
    Ok(input_output_curve(scaled, (lo, hi), n)?.1.bistable)
}

/// Δν(l_max)/Δν(0) at fixed drive. Δν ∝ 1/(|x|²s²), so the ratio needs no
/// physical scales; with `phys` the absolute Δν is filled in as well.
pub fn doppleron_convergence(
    scaled: &ScaledParams,
    y_sq: f64,
    l_values: &[usize],
    phys: Option<&PhysicalParams>,
) -> Result<SweepResult> {
    if l_values.iter().any(|l| l % 2 != 0) {
        return Err(Error::InvalidParams(
            "truncation orders must be even".into(),
        ));
    }
    let base = scaled.with_y_sq(y_sq).with_detuning(0.0);
    let grid = VelocityGrid::for_params(&base);
    let mut orders: Vec<usize> = l_values.to_vec();
    orders.sort_unstable();
    orders.dedup();
    let with_ref: Vec<usize> = std::iter::once(0)
        .chain(orders.iter().cloned().filter(|&l| l != 0))
        .collect();
    let solved: Vec<(usize, f64, crate::observables::SlopeEstimate)> = with_ref
        .par_iter()
        .map(|&l| {
            let s = base.with_l_max(l);
            let est = phase_slope_at_resonance(y_sq, &s, &grid)?;
            let inc = truncation_increment(est.resonant.x, 0.0, &s, &grid)?;
            Ok((l, inc, est))
        })
        .collect::<Result<_>>()?;
    let merit = |est: &crate::observables::SlopeEstimate| {
        1.0 / (est.resonant.x_sq() * est.slope * est.slope)
    };
    let reference = merit(&solved[0].2);
    let mut points = Vec::new();
    for (l, inc, est) in &solved {
        if !orders.contains(l) {
            continue;
        }
        let mut p = SweepPoint::from_state(*l as f64, &est.resonant, *inc);
        p.slope = Some(est.slope);
        p.ratio = Some(merit(est) / reference);
        p.delta_nu = match phys {
            Some(ph) => Some(crate::observables::linewidth_from_slope(est, y_sq, ph)?.delta_nu),
            None => None,
        };
        points.push(p);
    }
    Ok(SweepResult {
        axis_name: "l_max".into(),
        points,
        metadata: base,
        termination: None,
    })
}

/// Smallest truncation order in `l_values` beyond which successive ratios
/// change by less than `rel_tol`.
pub fn convergence_knee(result: &SweepResult, rel_tol: f64) -> Option<usize> {
    let ratios: Vec<(f64, f64)> = result
        .points
        .iter()
        .filter_map(|p| p.ratio.map(|r| (p.axis_value, r)))
        .collect();
    (0..ratios.len()).find_map(|i| {
        let settled = ratios[i..]
            .windows(2)
            .all(|w| ((w[1].1 - w[0].1) / w[0].1).abs() < rel_tol);
        settled.then_some(ratios[i].0 as usize)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DrivePolicy {
    /// |y|² = 4NC₀, zero temperature only.
    FixedYLower,
    /// |y|² = (NC₀)²/4, zero temperature only.
    FixedYUpper,
    /// Optimum over [`OPTIMUM_RANGE_FACTORS`]·NC₀.
    Optimal,
}

/// One Δν(NC₀) curve per Doppler width in `delta0s`.
///
/// NC₀ is varied through the atom number at the single-atom cooperativity
/// of `phys`, so the cavity stays fixed along a curve. Finite-temperature
/// curves stop at the first NC₀ whose search range is
/// bistable; the cause is stored in `termination`.
pub fn linewidth_vs_nc0(
    phys: &PhysicalParams,
    scaled: &ScaledParams,
    delta0s: &[f64],
    nc0s: &[f64],
    policy: DrivePolicy,
) -> Result<Vec<SweepResult>> {
    if policy != DrivePolicy::Optimal && delta0s.iter().any(|&d| d != 0.0) {
        return Err(Error::InvalidParams(
            "fixed-drive policies apply to zero temperature only".into(),
        ));
    }
    delta0s
        .par_iter()
        .map(|&d0| {
            let base = scaled.with_delta0(d0).with_detuning(0.0);
            let mut points = Vec::new();
            let mut termination = None;
            for &nc0 in nc0s {
                let s = base.with_nc0(nc0);
                let mut ph = phys.clone();
                if phys.nc0 > 0.0 {
                    ph.n_atoms = phys.n_atoms * nc0 / phys.nc0;
                }
                ph.nc0 = nc0;
                let point = match policy {
                    DrivePolicy::FixedYLower | DrivePolicy::FixedYUpper => {
                        let y_sq = if policy == DrivePolicy::FixedYLower { 4.0 * nc0 } else { 0.25 * nc0 * nc0 };
                        if y_sq == 0.0 {
                            termination = Some(format!("no drive at NC0 = {nc0}"));
                            break;
                        }
                        let grid = VelocityGrid::for_params(&s.with_y_sq(y_sq));
                        // Upper branch: seed from the empty cavity.
                        let y = C64::new(y_sq.sqrt(), 0.0);
                        linewidth_seeded(y_sq, &s, &ph, &grid, Some(y)).map(|r| (y_sq, r))
                    }
                    DrivePolicy::Optimal => {
                        let range = (OPTIMUM_RANGE_FACTORS.0 * nc0, OPTIMUM_RANGE_FACTORS.1 * nc0);
                        let grid = VelocityGrid::build(d0, &GridSpec::for_params(&s), range.1.sqrt(), &[]);
                        optimal_power(&s, &ph, &grid, range)
                    }
                };
                match point {
                    Ok((y_sq, r)) => {
                        let ss_like = SweepPoint {
                            axis_value: nc0,
                            x_sq: r.x_sq,
                            y_sq,
                            transmission: r.transmission,
                            phi: 0.0,
                            slope: Some(r.slope_scaled),
                            delta_nu: Some(r.delta_nu),
                            ratio: None,
                            converged: true,
                            newton_iters: 0,
                            l_increment: 0.0,
                        };
                        points.push(ss_like);
                    }
                    Err(Error::BistableRange { window_lo, window_hi, .. }) => {
                        termination = Some(format!(
                            "bistable at NC0 = {nc0}: window |y|^2 in [{window_lo:.6e}, {window_hi:.6e}]"
                        ));
                        break;
                    }
                    Err(Error::ZeroSlope) => {
                        termination = Some(format!("zero phase slope at NC0 = {nc0}"));
                        break;
                    }
                    Err(Error::NonConvergence { best_residual, .. }) => {
                        termination = Some(format!("no convergence at NC0 = {nc0} (residual {best_residual:.3e})"));
                        break;
                    }
                    Err(e) => return Err(e),
                }
            }
            Ok(SweepResult { axis_name: "nc0".into(), points, metadata: base, termination })
        })
        .collect()
}

/// δ₀/γp at which resonant bistability disappears, by bisection on
/// [`is_bistable`] to 1% of the bracket's upper end.
pub fn critical_temperature(
    nc0: f64,
    scaled_base: &ScaledParams,
    bracket: (f64, f64),
) -> Result<f64> {
    let base = scaled_base.with_nc0(nc0).with_detuning(0.0);
    let pred = |d0: f64| is_bistable(&base.with_delta0(d0));
    let (mut lo, mut hi) = bracket;
    let at_lo = pred(lo)?;
    let at_hi = pred(hi)?;
    if at_lo == at_hi {
        return Err(Error::BracketInvalid(at_lo));
    }
    if !at_lo {
        std::mem::swap(&mut lo, &mut hi);
    }
    while (hi - lo).abs() > 0.01 * hi.abs().max(lo.abs()) {
        let mid = 0.5 * (lo + hi);
        if pred(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub element: String,
    pub finesse: Option<f64>,
    pub nc0: f64,
    pub y_sq_opt: f64,
    pub p_in_opt: f64,
    pub delta_nu: f64,
    pub published_p_in_opt: Option<f64>,
    pub published_delta_nu: Option<f64>,
}

/// Optimum drive and linewidth for one physical configuration.
pub fn optimum_for(
    phys: &PhysicalParams,
    l_max: usize,
    vel_nodes: usize,
) -> Result<(f64, crate::observables::LinewidthResult)> {
    let scaled = ScaledParams {
        l_max,
        vel_nodes,
        ..phys.to_scaled()?
    };
    let range = (
        OPTIMUM_RANGE_FACTORS.0 * scaled.nc0,
        OPTIMUM_RANGE_FACTORS.1 * scaled.nc0,
    );
    let grid = VelocityGrid::build(
        scaled.delta0_over_gp,
        &GridSpec::for_params(&scaled),
        range.1.sqrt(),
        &[],
    );
    optimal_power(&scaled, phys, &grid, range)
}

/// Optimal input power and linewidth for each survey row.
pub fn reproduce_table(
    rows: &[SurveyRow],
    l_max: usize,
    vel_nodes: usize,
) -> Result<Vec<TableRow>> {
    rows.par_iter()
        .map(|row| {
            let (y_sq_opt, r) = optimum_for(&row.physical, l_max, vel_nodes)?;
            Ok(TableRow {
                element: row.element.to_string(),
                finesse: row.physical.finesse,
                nc0: row.physical.nc0,
                y_sq_opt,
                p_in_opt: r.p_in,
                delta_nu: r.delta_nu,
                published_p_in_opt: Some(row.published_p_in_opt),
                published_delta_nu: Some(row.published_delta_nu),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spacing_helpers() {
        assert_eq!(linspace(-1.0, 1.0, 3), vec![-1.0, 0.0, 1.0]);
        let l = logspace(1.0, 100.0, 3);
        assert!((l[1] - 10.0).abs() < 1e-12);
        assert_eq!(points_for_range(1.0, 100.0, 256), 513);
    }

    #[test]
    fn empty_cavity_spectrum_is_flat() {
        let s = ScaledParams {
            nc0: 0.0,
            delta0_over_gp: 26.0,
            ..Default::default()
        };
        let r = sweep_detuning(&s, 10.0, (-50.0, 50.0), 11).unwrap();
        for p in &r.points {
            assert_eq!(p.transmission, 1.0);
            assert_eq!(p.phi, 0.0);
        }
    }

    #[test]
    fn curve_has_no_hysteresis() {
        let s = ScaledParams {
            nc0: 800.0,
            delta0_over_gp: 0.0,
            ..Default::default()
        };
        let (up, rep) = input_output_curve(&s, (1e-2, 1e4), 200).unwrap();
        assert!(rep.bistable);
        // Walking the same |x|² values downward gives identical |y|².
        let grid = VelocityGrid::at_rest();
        for p in up.points.iter().rev() {
            let y = forward_map(C64::new(p.x_sq.sqrt(), 0.0), 0.0, &s, &grid).unwrap();
            assert_eq!(y.norm_sqr(), p.y_sq);
        }
        let (w_lo, w_hi) = rep.window.unwrap();
        assert!(w_lo < w_hi);
    }

    #[test]
    fn trivial_convergence_ratio() {
        let s = ScaledParams {
            nc0: 60.0,
            delta0_over_gp: 26.0,
            ..Default::default()
        };
        let r = doppleron_convergence(&s, 60.0, &[0], None).unwrap();
        assert_eq!(r.points.len(), 1);
        assert_eq!(r.points[0].ratio, Some(1.0));
    }

    #[test]
    fn fixed_policies_need_zero_temperature() {
        let phys = crate::params::strontium_reference();
        let s = phys.to_scaled().unwrap();
        let e = linewidth_vs_nc0(&phys, &s, &[30.0], &[100.0], DrivePolicy::FixedYUpper);
        assert!(matches!(e, Err(Error::InvalidParams(_))));
    }
}
