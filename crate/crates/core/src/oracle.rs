//! Brute-force time-domain integration of the mean-field equations, used to
//! check the Floquet solver.
//!
//! Time is in units of 1/γp. Each velocity class of the grid is represented
//! by several atoms spread over the standing wave, `g(t) = cos(δt + θ_k)` with
//! `θ_k = πk/K`. Their field harmonics at 2δ, 4δ, … cancel up to order
//! 2(K−1), so the field settles to a constant as it does in the Floquet
//! picture; for δ = 0 the phases sample positions along the wave.
//!
//! ```text
//! ẋ = κ̃ [−x + y + (2NC₀/√γ̃) Σ w c s]
//! ṡ = −(1 + iΔ) s + (√γ̃/2) c x z
//! ż = −γ̃ (z + 1) − 2√γ̃ c Re(x* s)
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::floquet::C64;
use crate::params::ScaledParams;
use crate::selfconsist::{newton_solve, truncation_increment, VelocityGrid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeDomainConfig {
    /// Fixed step; `None` picks one from the fastest rates in the problem.
    pub dt: Option<f64>,
    /// Horizon of [`integrate`].
    pub t_end: f64,
    /// Cavity decay κ/γp. The steady state does not depend on it.
    pub kappa_over_gp: f64,
    /// Standing-wave phases per velocity class for moving classes.
    pub phases_per_bin: usize,
    /// Standing-wave phases for a class at rest, which sample position.
    pub phases_at_rest: usize,
    /// Bins per side of the shared uniform grid.
    pub vel_bins: usize,
    /// Grid half-extent in units of δ₀.
    pub extent_sigmas: f64,
    /// Averaging window for steady-state observables.
    pub average_window: f64,
    /// Largest relative change of ⟨|x|⟩ between the last two windows.
    pub drift_tol: f64,
    /// Horizon at which [`settle`] gives up.
    pub t_max: f64,
    /// Any |x| or |s| above this aborts the run.
    pub divergence_guard: f64,
}

impl Default for TimeDomainConfig {
    fn default() -> Self {
        TimeDomainConfig {
            dt: None,
            t_end: 40.0,
            kappa_over_gp: 10.0,
            phases_per_bin: 8,
            phases_at_rest: 256,
            vel_bins: 40,
            extent_sigmas: 3.0,
            average_window: 4.0,
            drift_tol: 1e-6,
            t_max: 2000.0,
            divergence_guard: 1e8,
        }
    }
}

impl TimeDomainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.t_end > 0.0
            && self.kappa_over_gp > 0.0
            && self.phases_per_bin >= 1
            && self.phases_at_rest >= 1
            && self.average_window > 0.0
            && self.average_window < self.t_end
            && self.drift_tol > 0.0
            && self.dt.is_none_or(|dt| dt > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParams(format!(
                "invalid time-domain settings: {self:?}"
            )))
        }
    }

    pub fn grid(&self, delta0: f64) -> VelocityGrid {
        VelocityGrid::uniform(delta0, self.vel_bins, self.extent_sigmas)
    }

    /// Step bounded by a twentieth of the shortest time scale: the drive
    /// period 2π/δ_max, 1/γ̃, 1/γp, the cavity and collective-coupling times
    /// and the Rabi period at the empty-cavity field.
    pub fn step_for(&self, scaled: &ScaledParams, grid: &VelocityGrid, y: C64) -> f64 {
        if let Some(dt) = self.dt {
            return dt;
        }
        let delta_max = grid.nodes.iter().fold(0.0f64, |m, d| m.max(d.abs()));
        let g = scaled.gamma_over_gp;
        let mut t = (1.0f64).min(1.0 / g).min(1.0 / self.kappa_over_gp);
        if delta_max > 0.0 {
            t = t.min(2.0 * std::f64::consts::PI / delta_max);
        }
        let collective = (2.0 * self.kappa_over_gp * scaled.nc0).sqrt();
        if collective > 0.0 {
            t = t.min(1.0 / collective);
        }
        t = t.min(1.0 / (g.sqrt() * y.norm() + 1.0));
        t / 20.0
    }
}

struct Atom {
    delta: f64,
    theta: f64,
    /// (2NC₀/√γ̃)·w/K
    feedback: f64,
}

/// Integration state; advances in fixed RK4 steps.
pub struct Integrator {
    atoms: Vec<Atom>,
    gamma: f64,
    sqrt_gamma: f64,
    kappa: f64,
    detuning: f64,
    y: C64,
    dt: f64,
    guard: f64,
    t: f64,
    x: C64,
    s: Vec<C64>,
    z: Vec<f64>,
    ks: [Vec<C64>; 4],
    kz: [Vec<f64>; 4],
    s_tmp: Vec<C64>,
    z_tmp: Vec<f64>,
    /// Field after every step, starting with the initial value.
    pub field: Vec<C64>,
    pub z_range: (f64, f64),
}

impl Integrator {
    pub fn new(
        scaled: &ScaledParams,
        y: C64,
        detuning: f64,
        cfg: &TimeDomainConfig,
        grid: &VelocityGrid,
    ) -> Result<Self> {
        cfg.validate()?;
        let sqrt_gamma = scaled.gamma_over_gp.sqrt();
        let mut atoms = Vec::new();
        for (&d, &w) in grid.nodes.iter().zip(&grid.weights) {
            let k = if d == 0.0 {
                cfg.phases_at_rest
            } else {
                cfg.phases_per_bin
            };
            for j in 0..k {
                atoms.push(Atom {
                    delta: d,
                    theta: std::f64::consts::PI * j as f64 / k as f64,
                    feedback: 2.0 * scaled.nc0 / sqrt_gamma * w / k as f64,
                });
            }
        }
        let n = atoms.len();
        let zeros_c = || vec![C64::default(); n];
        let zeros_r = || vec![0.0; n];
        Ok(Integrator {
            atoms,
            gamma: scaled.gamma_over_gp,
            sqrt_gamma,
            kappa: cfg.kappa_over_gp,
            detuning,
            y,
            dt: cfg.step_for(scaled, grid, y),
            guard: cfg.divergence_guard,
            t: 0.0,
            x: C64::default(),
            s: zeros_c(),
            z: vec![-1.0; n],
            ks: [zeros_c(), zeros_c(), zeros_c(), zeros_c()],
            kz: [zeros_r(), zeros_r(), zeros_r(), zeros_r()],
            s_tmp: zeros_c(),
            z_tmp: zeros_r(),
            field: vec![C64::default()],
            z_range: (-1.0, -1.0),
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn atom_count(&self) -> usize {
        self.atoms.len()
    }

    pub fn dipoles(&self) -> &[C64] {
        &self.s
    }

    pub fn inversions(&self) -> &[f64] {
        &self.z
    }

    /// Derivatives at time `t` for state (x, s, z); atom derivatives go to
    /// `ds`, `dz`, the field derivative is returned.
    #[allow(clippy::too_many_arguments)]
    fn rhs(&self, t: f64, x: C64, s: &[C64], z: &[f64], ds: &mut [C64], dz: &mut [f64]) -> C64 {
        let decay = C64::new(1.0, self.detuning);
        let half_g = 0.5 * self.sqrt_gamma;
        let mut source = C64::default();
        for (i, a) in self.atoms.iter().enumerate() {
            let c = (a.delta * t + a.theta).cos();
            let si = s[i];
            ds[i] = -decay * si + x * (half_g * c * z[i]);
            dz[i] = -self.gamma * (z[i] + 1.0) - 2.0 * self.sqrt_gamma * c * (x.conj() * si).re;
            source += si * (a.feedback * c);
        }
        self.kappa * (self.y - x + source)
    }

    fn step(&mut self) -> Result<()> {
        let dt = self.dt;
        let t = self.t;
        let n = self.atoms.len();
        let mut ks = std::mem::take(&mut self.ks);
        let mut kz = std::mem::take(&mut self.kz);
        let mut s_tmp = std::mem::take(&mut self.s_tmp);
        let mut z_tmp = std::mem::take(&mut self.z_tmp);

        let kx1 = self.rhs(t, self.x, &self.s, &self.z, &mut ks[0], &mut kz[0]);
        for i in 0..n {
            s_tmp[i] = self.s[i] + ks[0][i] * (0.5 * dt);
            z_tmp[i] = self.z[i] + kz[0][i] * (0.5 * dt);
        }
        let kx2 = self.rhs(
            t + 0.5 * dt,
            self.x + kx1 * (0.5 * dt),
            &s_tmp,
            &z_tmp,
            &mut ks[1],
            &mut kz[1],
        );
        for i in 0..n {
            s_tmp[i] = self.s[i] + ks[1][i] * (0.5 * dt);
            z_tmp[i] = self.z[i] + kz[1][i] * (0.5 * dt);
        }
        let kx3 = self.rhs(
            t + 0.5 * dt,
            self.x + kx2 * (0.5 * dt),
            &s_tmp,
            &z_tmp,
            &mut ks[2],
            &mut kz[2],
        );
        for i in 0..n {
            s_tmp[i] = self.s[i] + ks[2][i] * dt;
            z_tmp[i] = self.z[i] + kz[2][i] * dt;
        }
        let kx4 = self.rhs(
            t + dt,
            self.x + kx3 * dt,
            &s_tmp,
            &z_tmp,
            &mut ks[3],
            &mut kz[3],
        );

        let sixth = dt / 6.0;
        self.x += (kx1 + kx2 * 2.0 + kx3 * 2.0 + kx4) * sixth;
        let (mut z_lo, mut z_hi) = self.z_range;
        let mut s_max: f64 = 0.0;
        for i in 0..n {
            self.s[i] += (ks[0][i] + ks[1][i] * 2.0 + ks[2][i] * 2.0 + ks[3][i]) * sixth;
            self.z[i] += (kz[0][i] + 2.0 * kz[1][i] + 2.0 * kz[2][i] + kz[3][i]) * sixth;
            z_lo = z_lo.min(self.z[i]);
            z_hi = z_hi.max(self.z[i]);
            s_max = s_max.max(self.s[i].norm());
        }
        self.z_range = (z_lo, z_hi);
        self.t = t + dt;
        self.ks = ks;
        self.kz = kz;
        self.s_tmp = s_tmp;
        self.z_tmp = z_tmp;
        self.field.push(self.x);
        if !(self.x.norm() < self.guard && s_max < self.guard) {
            return Err(Error::StepUnstable { t: self.t });
        }
        Ok(())
    }

    /// Advances by `duration`, rounded to whole steps.
    pub fn advance(&mut self, duration: f64) -> Result<()> {
        let steps = (duration / self.dt).round().max(1.0) as usize;
        for _ in 0..steps {
            self.step()?;
        }
        Ok(())
    }

    /// Number of recorded field samples in an averaging window of at least
    /// `window`, stretched to whole periods of the slowest class.
    fn window_len(&self, window: f64) -> usize {
        let slowest = self
            .atoms
            .iter()
            .map(|a| a.delta.abs())
            .filter(|d| *d > 0.0)
            .fold(f64::INFINITY, f64::min);
        ((averaging_window(window, slowest) / self.dt).round() as usize).max(1)
    }
}

/// Recorded run: field after every step and the final atomic state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub dt: f64,
    /// Averaging window actually used, whole drive periods.
    pub window: f64,
    pub field: Vec<C64>,
    pub y: C64,
    pub final_dipoles: Vec<C64>,
    pub final_inversions: Vec<f64>,
    /// Smallest and largest inversion seen on any atom.
    pub z_range: (f64, f64),
}

impl TimeSeries {
    fn from_integrator(it: Integrator, window: f64) -> Self {
        let w = it.window_len(window);
        TimeSeries {
            dt: it.dt,
            window: w as f64 * it.dt,
            y: it.y,
            final_dipoles: it.s,
            final_inversions: it.z,
            z_range: it.z_range,
            field: it.field,
        }
    }
}

/// Integrates from the empty cavity with ground-state atoms up to `cfg.t_end`.
pub fn integrate(
    scaled: &ScaledParams,
    y: C64,
    detuning: f64,
    cfg: &TimeDomainConfig,
    grid: &VelocityGrid,
) -> Result<TimeSeries> {
    let mut it = Integrator::new(scaled, y, detuning, cfg, grid)?;
    it.advance(cfg.t_end)?;
    Ok(TimeSeries::from_integrator(it, cfg.average_window))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteadyObservables {
    pub x_avg: C64,
    pub transmission: f64,
    pub phase: f64,
    /// Relative change of ⟨|x|⟩ between the last two averaging windows.
    pub drift: f64,
}

/// `window` rounded up to a whole number of periods 2π/δ_min. On a midpoint
/// grid every node is an odd multiple of the smallest one, so this period is
/// common to all classes and the residual micromotion averages out.
pub fn averaging_window(window: f64, delta_min: f64) -> f64 {
    if !(delta_min.is_finite() && delta_min > 0.0) {
        return window;
    }
    let period = 2.0 * std::f64::consts::PI / delta_min;
    (window / period).ceil().max(1.0) * period
}

fn window_mean(field: &[C64]) -> C64 {
    field.iter().sum::<C64>() / field.len() as f64
}

/// Averages the field over the last `cfg.average_window` and checks that
/// the preceding window agrees to `cfg.drift_tol`.
pub fn steady_observables(
    series: &TimeSeries,
    cfg: &TimeDomainConfig,
) -> Result<SteadyObservables> {
    let w = ((series.window / series.dt).round() as usize).max(1);
    let n = series.field.len();
    if n < 2 * w + 1 {
        return Err(Error::InvalidParams(
            "series shorter than two averaging windows".into(),
        ));
    }
    let last = window_mean(&series.field[n - w..]);
    let prev = window_mean(&series.field[n - 2 * w..n - w]);
    observables_from_windows(last, prev, series.y, cfg.drift_tol)
}

fn observables_from_windows(last: C64, prev: C64, y: C64, tol: f64) -> Result<SteadyObservables> {
    let scale = last.norm().max(1e-300);
    let drift = (last.norm() - prev.norm()).abs() / scale;
    if drift > tol {
        return Err(Error::TransientNotSettled { drift });
    }
    let (transmission, phase) = if y == C64::default() {
        (f64::NAN, f64::NAN)
    } else {
        let r = last / y;
        (r.norm_sqr(), r.arg())
    };
    Ok(SteadyObservables {
        x_avg: last,
        transmission,
        phase,
        drift,
    })
}

/// Integrates window by window until the drift guard passes, up to
/// `cfg.t_max`. Returns the observables and the step used.
pub fn settle(
    scaled: &ScaledParams,
    y: C64,
    detuning: f64,
    cfg: &TimeDomainConfig,
    grid: &VelocityGrid,
) -> Result<(SteadyObservables, f64)> {
    let mut it = Integrator::new(scaled, y, detuning, cfg, grid)?;
    it.advance(cfg.t_end)?;
    let w = it.window_len(cfg.average_window);
    loop {
        let n = it.field.len();
        let last = window_mean(&it.field[n - w..]);
        let prev = window_mean(&it.field[n - 2 * w..n - w]);
        match observables_from_windows(last, prev, y, cfg.drift_tol) {
            Ok(obs) => return Ok((obs, it.dt)),
            Err(e) if it.time() >= cfg.t_max => return Err(e),
            Err(_) => it.advance(w as f64 * it.dt)?,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleComparison {
    pub nc0: f64,
    pub delta0_over_gp: f64,
    pub y_sq: f64,
    pub transmission_floquet: f64,
    pub phase_floquet: f64,
    pub transmission_time: f64,
    pub phase_time: f64,
    /// |T_time/T_floquet − 1|
    pub transmission_rel_dev: f64,
    /// |φ_time − φ_floquet| (rad)
    pub phase_dev: f64,
    /// Truncation order at which the Floquet solve converged.
    pub l_max: usize,
    pub dt: f64,
    /// Relative change of ⟨|x|⟩ when the step is halved, if checked.
    pub halving_change: Option<f64>,
}

/// Largest truncation order tried when converging the Floquet side.
pub const MAX_ORACLE_L: usize = 1024;

/// Floquet steady state on `grid`, raising l_max until the forward map
/// changes by less than `tol` between successive orders.
pub fn converged_floquet(
    scaled: &ScaledParams,
    y: C64,
    detuning: f64,
    grid: &VelocityGrid,
    seed: Option<C64>,
    tol: f64,
) -> Result<(crate::selfconsist::SteadyState, usize)> {
    let mut l_max = scaled.l_max.max(16);
    loop {
        let s = scaled.with_l_max(l_max);
        let ss = newton_solve(y, detuning, &s, grid, seed)?;
        let inc = truncation_increment(ss.x, detuning, &s, grid)?;
        if inc < tol || l_max >= MAX_ORACLE_L {
            if inc >= tol {
                log::warn!("truncation increment {inc:.3e} at l_max = {l_max}");
            }
            return Ok((ss, l_max));
        }
        l_max *= 2;
    }
}

/// Time-domain and Floquet steady states at one parameter point, on the
/// shared uniform grid.
pub fn compare(
    scaled: &ScaledParams,
    y_sq: f64,
    detuning: f64,
    cfg: &TimeDomainConfig,
    check_halving: bool,
) -> Result<OracleComparison> {
    let grid = cfg.grid(scaled.delta0_over_gp);
    let y = C64::new(y_sq.sqrt(), 0.0);
    let (td, dt) = settle(scaled, y, detuning, cfg, &grid)?;
    let halving_change = if check_halving {
        let half = TimeDomainConfig {
            dt: Some(0.5 * dt),
            ..cfg.clone()
        };
        let (td2, _) = settle(scaled, y, detuning, &half, &grid)?;
        Some((td2.x_avg.norm() - td.x_avg.norm()).abs() / td.x_avg.norm().max(1e-300))
    } else {
        None
    };
    let tight = ScaledParams {
        newton_tol: 1e-12,
        ..scaled.clone()
    };
    let (fl, l_max) = converged_floquet(&tight, y, detuning, &grid, Some(td.x_avg), 1e-8)?;
    Ok(OracleComparison {
        nc0: scaled.nc0,
        delta0_over_gp: scaled.delta0_over_gp,
        y_sq,
        transmission_floquet: fl.transmission,
        phase_floquet: fl.phase,
        transmission_time: td.transmission,
        phase_time: td.phase,
        transmission_rel_dev: (td.transmission / fl.transmission - 1.0).abs(),
        phase_dev: (td.phase - fl.phase).abs(),
        l_max,
        dt,
        halving_change,
    })
}
