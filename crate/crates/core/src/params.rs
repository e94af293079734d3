//! Physical (SI) and scaled parameter sets.
//!
//! All solvers work in scaled units: rates are measured in units of the
//! dipole decay rate γp, the intracavity field is `x = α/√n₀` and the drive
//! is `y = η/(κ√n₀)` with `n₀ = γγp/(4g₀²)` the saturation photon number.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

pub const HBAR: f64 = 1.054_571_817e-34;
pub const K_B: f64 = 1.380_649e-23;
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
pub const AMU: f64 = 1.660_539_066_60e-27;

/// Decay rate of the dipole assumed when the scaled set is built without
/// physical input: the ⁸⁸Sr intercombination line with a 2 kHz probe laser,
/// γ/γp = 7.6 / (3.8 + 2.0).
pub const SR_GAMMA_OVER_GP: f64 = 7.6 / 5.8;

pub const DEFAULT_L_MAX: usize = 16;
pub const DEFAULT_VEL_NODES: usize = 8;
pub const DEFAULT_NEWTON_TOL: f64 = 1e-9;
pub const DEFAULT_MAX_NEWTON_ITERS: usize = 100;

/// SI description of atoms, cavity, drive and detection.
///
/// Rates are angular (rad/s).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    pub gamma: f64,
    pub gamma_p: f64,
    pub gamma_laser: f64,
    pub kappa: f64,
    pub lambda: f64,
    pub atom_mass: f64,
    pub n_atoms: f64,
    pub temperature: f64,
    pub p_in: f64,
    pub epsilon: f64,
    pub sideband_ratio: f64,
    pub finesse: Option<f64>,
    pub nc0: f64,
}

impl PhysicalParams {
    /// Dipole decay rate built from the radiative limit plus probe-laser
    /// dephasing.
    pub fn default_gamma_p(gamma: f64, gamma_laser: f64) -> f64 {
        gamma / 2.0 + gamma_laser
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("gamma", self.gamma),
            ("gamma_p", self.gamma_p),
            ("kappa", self.kappa),
            ("lambda", self.lambda),
            ("atom_mass", self.atom_mass),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParams(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        let non_negative = [
            ("gamma_laser", self.gamma_laser),
            ("n_atoms", self.n_atoms),
            ("temperature", self.temperature),
            ("p_in", self.p_in),
            ("sideband_ratio", self.sideband_ratio),
            ("nc0", self.nc0),
        ];
        for (name, v) in non_negative {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidParams(format!(
                    "{name} must be non-negative, got {v}"
                )));
            }
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(Error::InvalidParams(format!(
                "epsilon must lie in (0, 1], got {}",
                self.epsilon
            )));
        }
        // Relative slack so γp = γ/2 built in floating point is accepted.
        if self.gamma_p < 0.5 * self.gamma * (1.0 - 1e-12) {
            return Err(Error::InvalidParams(format!(
                "gamma_p = {} is below the radiative limit gamma/2 = {}",
                self.gamma_p,
                self.gamma / 2.0
            )));
        }
        if self.nc0 > 0.0 && self.n_atoms == 0.0 {
            return Err(Error::InvalidParams(
                "nc0 > 0 requires a non-zero atom number".into(),
            ));
        }
        if let Some(f) = self.finesse {
            if !(f > 0.0) {
                return Err(Error::InvalidParams(format!(
                    "finesse must be positive, got {f}"
                )));
            }
        }
        Ok(())
    }

    pub fn wavenumber(&self) -> f64 {
        2.0 * PI / self.lambda
    }

    pub fn omega(&self) -> f64 {
        2.0 * PI * SPEED_OF_LIGHT / self.lambda
    }

    /// RMS one-dimensional Doppler shift k·√(k_B T/m), rad/s.
    pub fn doppler_width(&self) -> f64 {
        self.wavenumber() * (K_B * self.temperature / self.atom_mass).sqrt()
    }

    /// Single-atom cooperativity C₀ = NC₀/N.
    pub fn cooperativity(&self) -> Result<f64> {
        if self.n_atoms > 0.0 && self.nc0 > 0.0 {
            Ok(self.nc0 / self.n_atoms)
        } else {
            Err(Error::InvalidParams(
                "per-atom quantities need nc0 > 0 and n_atoms > 0".into(),
            ))
        }
    }

    /// g₀² = C₀ κ γp.
    pub fn coupling_sq(&self) -> Result<f64> {
        Ok(self.cooperativity()? * self.kappa * self.gamma_p)
    }

    pub fn saturation_photon_number(&self) -> Result<f64> {
        Ok(self.gamma * self.gamma_p / (4.0 * self.coupling_sq()?))
    }

    pub fn sideband_multiplier(&self) -> f64 {
        1.0 + self.sideband_ratio
    }

    /// |y|² produced by an input power (W). Zero when there are no atoms,
    /// since the saturation scale is then infinite.
    pub fn y_sq_for_power(&self, p_in: f64) -> f64 {
        if self.n_atoms > 0.0 {
            4.0 * (self.nc0 / self.n_atoms) * p_in / (HBAR * self.omega() * self.gamma)
        } else {
            0.0
        }
    }

    /// Input power (W) needed for a scaled drive |y|².
    pub fn power_for_y_sq(&self, y_sq: f64) -> Result<f64> {
        Ok(HBAR * self.omega() * self.gamma * y_sq / (4.0 * self.cooperativity()?))
    }

    pub fn to_scaled(&self) -> Result<ScaledParams> {
        self.validate()?;
        Ok(ScaledParams {
            nc0: self.nc0,
            delta0_over_gp: self.doppler_width() / self.gamma_p,
            detuning_over_gp: 0.0,
            y_sq: self.y_sq_for_power(self.p_in),
            gamma_over_gp: self.gamma / self.gamma_p,
            ..ScaledParams::default()
        })
    }

    /// Conversion factor `A` (Hz) such that the shot-noise linewidth is
    /// `Δν = A / (|x|² s²)` with `s = dφ/d(Δ/γp)`.
    ///
    /// Takes the detected signal to be the transmitted carrier
    /// `P_sig = T·P_in = ħωκn₀|x|²` and includes the sideband multiplier.
    pub fn scaled_linewidth_prefactor(&self) -> Result<f64> {
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidParams("epsilon must be positive".into()));
        }
        let c0 = self.cooperativity()?;
        Ok(
            self.sideband_multiplier() * c0 * self.gamma_p * self.gamma_p
                / (2.0 * PI * self.epsilon * self.gamma),
        )
    }

    /// Rebuilds a physical set from scaled values plus the scales that the
    /// scaled set does not carry.
    pub fn from_scaled(scaled: &ScaledParams, reference: &ReferenceScales) -> Result<Self> {
        let k = 2.0 * PI / reference.lambda;
        let delta0 = scaled.delta0_over_gp * reference.gamma_p;
        let gamma = scaled.gamma_over_gp * reference.gamma_p;
        let omega = 2.0 * PI * SPEED_OF_LIGHT / reference.lambda;
        let temperature = reference.atom_mass / K_B * (delta0 / k).powi(2);
        let p_in = if scaled.nc0 > 0.0 {
            HBAR * omega * gamma * scaled.y_sq * reference.n_atoms / (4.0 * scaled.nc0)
        } else {
            0.0
        };
        let p = PhysicalParams {
            gamma,
            gamma_p: reference.gamma_p,
            gamma_laser: reference.gamma_laser,
            kappa: reference.kappa,
            lambda: reference.lambda,
            atom_mass: reference.atom_mass,
            n_atoms: reference.n_atoms,
            temperature,
            p_in,
            epsilon: reference.epsilon,
            sideband_ratio: reference.sideband_ratio,
            finesse: reference.finesse,
            nc0: scaled.nc0,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn reference_scales(&self) -> ReferenceScales {
        ReferenceScales {
            gamma_p: self.gamma_p,
            gamma_laser: self.gamma_laser,
            kappa: self.kappa,
            lambda: self.lambda,
            atom_mass: self.atom_mass,
            n_atoms: self.n_atoms,
            epsilon: self.epsilon,
            sideband_ratio: self.sideband_ratio,
            finesse: self.finesse,
        }
    }

    /// Temperature (K) whose Doppler width equals `delta0_over_gp` γp.
    pub fn temperature_for_width(&self, delta0_over_gp: f64) -> f64 {
        let delta0 = delta0_over_gp * self.gamma_p;
        self.atom_mass / K_B * (delta0 / self.wavenumber()).powi(2)
    }
}

/// Scales lost when going from physical to scaled parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceScales {
    pub gamma_p: f64,
    pub gamma_laser: f64,
    pub kappa: f64,
    pub lambda: f64,
    pub atom_mass: f64,
    pub n_atoms: f64,
    pub epsilon: f64,
    pub sideband_ratio: f64,
    pub finesse: Option<f64>,
}

/// Dimensionless working set shared by every solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaledParams {
    /// Collective cooperativity NC₀.
    pub nc0: f64,
    /// RMS Doppler width δ₀/γp.
    pub delta0_over_gp: f64,
    /// Atom–cavity detuning Δ/γp.
    pub detuning_over_gp: f64,
    /// Scaled input intensity |y|².
    pub y_sq: f64,
    pub gamma_over_gp: f64,
    /// Even truncation order of the Floquet chain.
    pub l_max: usize,
    /// Gauss–Legendre nodes per velocity panel.
    pub vel_nodes: usize,
    pub newton_tol: f64,
    pub max_newton_iters: usize,
}

impl Default for ScaledParams {
    fn default() -> Self {
        ScaledParams {
            nc0: 0.0,
            delta0_over_gp: 0.0,
            detuning_over_gp: 0.0,
            y_sq: 0.0,
            gamma_over_gp: SR_GAMMA_OVER_GP,
            l_max: DEFAULT_L_MAX,
            vel_nodes: DEFAULT_VEL_NODES,
            newton_tol: DEFAULT_NEWTON_TOL,
            max_newton_iters: DEFAULT_MAX_NEWTON_ITERS,
        }
    }
}

impl ScaledParams {
    pub fn validate(&self) -> Result<()> {
        if self.l_max % 2 != 0 {
            return Err(Error::InvalidParams(format!(
                "l_max must be even, got {}",
                self.l_max
            )));
        }
        if !(self.nc0.is_finite() && self.nc0 >= 0.0) {
            return Err(Error::InvalidParams(format!(
                "nc0 must be non-negative, got {}",
                self.nc0
            )));
        }
        if !(self.y_sq.is_finite() && self.y_sq >= 0.0) {
            return Err(Error::InvalidParams(format!(
                "y_sq must be non-negative, got {}",
                self.y_sq
            )));
        }
        if !(self.delta0_over_gp.is_finite() && self.delta0_over_gp >= 0.0) {
            return Err(Error::InvalidParams(format!(
                "delta0_over_gp must be non-negative, got {}",
                self.delta0_over_gp
            )));
        }
        if !self.detuning_over_gp.is_finite() {
            return Err(Error::InvalidParams(
                "detuning_over_gp must be finite".into(),
            ));
        }
        if !(self.gamma_over_gp > 0.0 && self.gamma_over_gp <= 2.0 * (1.0 + 1e-12)) {
            return Err(Error::InvalidParams(format!(
                "gamma_over_gp must lie in (0, 2], got {}",
                self.gamma_over_gp
            )));
        }
        if self.vel_nodes == 0 {
            return Err(Error::InvalidParams("vel_nodes must be at least 1".into()));
        }
        if !(self.newton_tol > 0.0) || self.max_newton_iters == 0 {
            return Err(Error::InvalidParams(
                "Newton tolerance and iteration cap must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn with_y_sq(&self, y_sq: f64) -> Self {
        ScaledParams {
            y_sq,
            ..self.clone()
        }
    }

    pub fn with_detuning(&self, detuning_over_gp: f64) -> Self {
        ScaledParams {
            detuning_over_gp,
            ..self.clone()
        }
    }

    pub fn with_l_max(&self, l_max: usize) -> Self {
        ScaledParams {
            l_max,
            ..self.clone()
        }
    }

    pub fn with_delta0(&self, delta0_over_gp: f64) -> Self {
        ScaledParams {
            delta0_over_gp,
            ..self.clone()
        }
    }

    pub fn with_nc0(&self, nc0: f64) -> Self {
        ScaledParams {
            nc0,
            ..self.clone()
        }
    }
}

/// One line of the intercombination-line survey, with the published
/// optimum power and linewidth kept for comparison.
#[derive(Debug, Clone)]
pub struct SurveyRow {
    pub element: &'static str,
    pub physical: PhysicalParams,
    pub published_p_in_opt: f64,
    pub published_delta_nu: f64,
}

/// ¹S₀→³P₁ survey: Yb, Ca, Mg and Sr at finesse 250 and 1000.
pub fn intercombination_survey() -> Vec<SurveyRow> {
    let two_pi = 2.0 * PI;
    let gamma_laser = two_pi * 2.0e3;
    // (element, λ, γ/2π, mass u, T, [(F, N, NC₀, P_opt, Δν)])
    let species: [(&str, f64, f64, f64, f64, [(f64, f64, f64, f64, f64); 2]); 4] = [
        (
            "Yb171",
            556e-9,
            182e3,
            170.936_323,
            6.5e-3,
            [
                (250.0, 2.5e7, 374.0, 128e-6, 3.3),
                (1000.0, 5.0e7, 2991.0, 312e-6, 207e-3),
            ],
        ),
        (
            "Ca40",
            657e-9,
            400.0,
            39.962_591,
            1.7e-3,
            [
                (250.0, 2.5e7, 522.0, 5.5e-9, 322e-3),
                (1000.0, 5.0e7, 4176.0, 2.2e-9, 20e-3),
            ],
        ),
        (
            "Mg24",
            457e-9,
            34.0,
            23.985_042,
            3.0e-3,
            [
                (250.0, 2.5e7, 253.0, 0.5e-9, 8.1),
                (1000.0, 5.0e7, 2021.0, 0.2e-9, 500e-3),
            ],
        ),
        (
            "Sr88",
            689e-9,
            7.6e3,
            87.905_612,
            3.0e-3,
            [
                (250.0, 2.5e7, 574.0, 47e-9, 102e-3),
                (1000.0, 5.0e7, 4593.0, 84e-9, 6.8e-3),
            ],
        ),
    ];
    let mut rows = Vec::new();
    for (element, lambda, gamma_hz, mass_u, temperature, cavities) in species {
        for (finesse, n_atoms, nc0, p_opt, delta_nu) in cavities {
            let gamma = two_pi * gamma_hz;
            // κ/2π = 2 MHz at F = 250, scaling as 1/F.
            let kappa = two_pi * 2.0e6 * 250.0 / finesse;
            rows.push(SurveyRow {
                element,
                physical: PhysicalParams {
                    gamma,
                    gamma_p: PhysicalParams::default_gamma_p(gamma, gamma_laser),
                    gamma_laser,
                    kappa,
                    lambda,
                    atom_mass: mass_u * AMU,
                    n_atoms,
                    temperature,
                    p_in: p_opt,
                    epsilon: 1.0,
                    sideband_ratio: 1.0,
                    finesse: Some(finesse),
                    nc0,
                },
                published_p_in_opt: p_opt,
                published_delta_nu: delta_nu,
            });
        }
    }
    rows
}

/// The ⁸⁸Sr, F = 250 line of the survey.
pub fn strontium_reference() -> PhysicalParams {
    intercombination_survey()
        .into_iter()
        .find(|r| r.element == "Sr88" && r.physical.finesse == Some(250.0))
        .map(|r| r.physical)
        .expect("survey contains Sr88 F=250")
}
