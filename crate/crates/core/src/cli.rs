//! Run configuration, mode dispatch and output serialization.
//!
//! A run is described by a TOML document with `[physical]`, `[scaled]`,
//! `[sweep]` and `[output]` tables. Physical rates are given as ordinary
//! frequencies (Hz, i.e. divided by 2π). When both parameter tables are
//! present the scaled values override the ones derived from the physical
//! description.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::observables::{linewidth, optimal_power};
use crate::oracle::{compare, TimeDomainConfig};
use crate::params::{intercombination_survey, PhysicalParams, ScaledParams, AMU};
use crate::scans::{
    critical_temperature, doppleron_convergence, input_output_curve, optimum_for, points_for_range,
    sweep_detuning, CURVE_POINTS_PER_DECADE, OPTIMUM_RANGE_FACTORS,
};
use crate::selfconsist::{GridSpec, VelocityGrid};

/// Environment variable holding the default worker count.
pub const WORKERS_ENV: &str = "DOPPLER_CQED_WORKERS";

/// Relative T and absolute φ (rad) agreement demanded by `oracle-check`.
pub const ORACLE_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Spectrum,
    PowerCurve,
    Converge,
    Linewidth,
    OptimalPower,
    CriticalTemp,
    Table,
    OracleCheck,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Spectrum => "spectrum",
            Mode::PowerCurve => "power-curve",
            Mode::Converge => "converge",
            Mode::Linewidth => "linewidth",
            Mode::OptimalPower => "optimal-power",
            Mode::CriticalTemp => "critical-temp",
            Mode::Table => "table",
            Mode::OracleCheck => "oracle-check",
        }
    }

    fn needs_physical(self) -> bool {
        matches!(self, Mode::Linewidth | Mode::OptimalPower)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

/// `[physical]` as written in the file. With `preset` the matching survey
/// entry supplies every value that is not given explicitly.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicalSection {
    pub preset: Option<String>,
    pub finesse: Option<f64>,
    pub lambda_nm: Option<f64>,
    pub gamma_hz: Option<f64>,
    pub gamma_laser_hz: Option<f64>,
    pub gamma_p_hz: Option<f64>,
    pub kappa_hz: Option<f64>,
    pub mass_u: Option<f64>,
    pub n_atoms: Option<f64>,
    pub temperature_k: Option<f64>,
    pub p_in_w: Option<f64>,
    pub epsilon: Option<f64>,
    pub sideband_ratio: Option<f64>,
    pub nc0: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScaledSection {
    pub nc0: Option<f64>,
    pub delta0_over_gp: Option<f64>,
    pub detuning_over_gp: Option<f64>,
    pub y_sq: Option<f64>,
    pub gamma_over_gp: Option<f64>,
    pub l_max: Option<usize>,
    pub vel_nodes: Option<usize>,
    pub newton_tol: Option<f64>,
    pub max_newton_iters: Option<usize>,
}

/// `[sweep]`. Which keys apply depends on the mode.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// Axis range: Δ/γp (spectrum), |x|² (power-curve), |y|² (optimal-power)
    /// or δ₀/γp bracket (critical-temp).
    pub range: Option<[f64; 2]>,
    pub points: Option<usize>,
    /// Truncation orders for `converge`.
    pub l_values: Option<Vec<usize>>,
    /// Grid axes for `oracle-check`.
    pub nc0: Option<Vec<f64>>,
    pub delta0_over_gp: Option<Vec<f64>>,
    pub y_sq: Option<Vec<f64>>,
    /// Survey elements for `table`; all when absent.
    pub elements: Option<Vec<String>>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OutputSection {
    path: Option<PathBuf>,
    format: Option<Format>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    mode: Option<Mode>,
    physical: Option<PhysicalSection>,
    scaled: Option<ScaledSection>,
    sweep: Option<SweepSpec>,
    output: Option<OutputSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputSpec {
    pub path: PathBuf,
    pub format: Format,
}

/// Fully resolved and validated run description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub mode: Mode,
    /// Physical description after scaled overrides, when one was given.
    pub physical: Option<PhysicalParams>,
    pub scaled: ScaledParams,
    pub sweep: SweepSpec,
    pub output: OutputSpec,
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub mode: Option<Mode>,
    pub out: Option<PathBuf>,
    pub l_max: Option<usize>,
    pub vel_nodes: Option<usize>,
}

/// 1-based line of `key` inside `[section]`, or of the section header.
fn locate(text: &str, section: &str, key: Option<&str>) -> Option<usize> {
    let mut current = String::new();
    let mut header = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.split(']').next()) {
            current = name.trim().to_string();
            if current == section {
                header = Some(i + 1);
            }
            continue;
        }
        if current != section {
            continue;
        }
        if let Some(k) = key {
            let lhs = line.split('=').next().unwrap_or("").trim();
            if line.contains('=') && lhs == k {
                return Some(i + 1);
            }
        }
    }
    header
}

fn config_error(
    text: &str,
    section: &str,
    key: Option<&str>,
    msg: impl std::fmt::Display,
) -> Error {
    match locate(text, section, key) {
        Some(line) => Error::Config(format!("line {line}: {msg}")),
        None => Error::Config(msg.to_string()),
    }
}

fn check_sign(text: &str, section: &str, key: &str, v: Option<f64>, strict: bool) -> Result<()> {
    if let Some(v) = v {
        let ok = v.is_finite() && if strict { v > 0.0 } else { v >= 0.0 };
        if !ok {
            let what = if strict { "positive" } else { "non-negative" };
            return Err(config_error(
                text,
                section,
                Some(key),
                format!("[{section}] {key} must be {what}, got {v}"),
            ));
        }
    }
    Ok(())
}

fn physical_from_section(text: &str, p: &PhysicalSection) -> Result<PhysicalParams> {
    for (key, v) in [
        ("lambda_nm", p.lambda_nm),
        ("gamma_hz", p.gamma_hz),
        ("gamma_p_hz", p.gamma_p_hz),
        ("kappa_hz", p.kappa_hz),
        ("mass_u", p.mass_u),
        ("finesse", p.finesse),
        ("epsilon", p.epsilon),
    ] {
        check_sign(text, "physical", key, v, true)?;
    }
    for (key, v) in [
        ("gamma_laser_hz", p.gamma_laser_hz),
        ("n_atoms", p.n_atoms),
        ("temperature_k", p.temperature_k),
        ("p_in_w", p.p_in_w),
        ("sideband_ratio", p.sideband_ratio),
        ("nc0", p.nc0),
    ] {
        check_sign(text, "physical", key, v, false)?;
    }

    let base = match &p.preset {
        Some(name) => {
            let finesse = p.finesse.unwrap_or(250.0);
            let row = intercombination_survey()
                .into_iter()
                .find(|r| {
                    r.element.eq_ignore_ascii_case(name) && r.physical.finesse == Some(finesse)
                })
                .ok_or_else(|| {
                    config_error(
                        text,
                        "physical",
                        Some("preset"),
                        format!("no survey entry for {name} at finesse {finesse}"),
                    )
                })?;
            Some(row.physical)
        }
        None => None,
    };
    let two_pi = 2.0 * PI;
    let need = |key: &str, v: Option<f64>, from_base: Option<f64>| -> Result<f64> {
        v.or(from_base).ok_or_else(|| {
            config_error(
                text,
                "physical",
                None,
                format!("[physical] {key} is required without a preset"),
            )
        })
    };
    let b = base.as_ref();
    let gamma = need(
        "gamma_hz",
        p.gamma_hz.map(|v| two_pi * v),
        b.map(|b| b.gamma),
    )?;
    let gamma_laser = p
        .gamma_laser_hz
        .map(|v| two_pi * v)
        .or(b.map(|b| b.gamma_laser))
        .unwrap_or(0.0);
    let gamma_p = match p.gamma_p_hz {
        Some(v) => two_pi * v,
        None if p.gamma_hz.is_some() || p.gamma_laser_hz.is_some() || b.is_none() => {
            PhysicalParams::default_gamma_p(gamma, gamma_laser)
        }
        None => b.map(|b| b.gamma_p).unwrap_or_default(),
    };
    let phys = PhysicalParams {
        gamma,
        gamma_p,
        gamma_laser,
        kappa: need(
            "kappa_hz",
            p.kappa_hz.map(|v| two_pi * v),
            b.map(|b| b.kappa),
        )?,
        lambda: need(
            "lambda_nm",
            p.lambda_nm.map(|v| v * 1e-9),
            b.map(|b| b.lambda),
        )?,
        atom_mass: need("mass_u", p.mass_u.map(|v| v * AMU), b.map(|b| b.atom_mass))?,
        n_atoms: need("n_atoms", p.n_atoms, b.map(|b| b.n_atoms))?,
        temperature: need("temperature_k", p.temperature_k, b.map(|b| b.temperature))?,
        p_in: p.p_in_w.or(b.map(|b| b.p_in)).unwrap_or(0.0),
        epsilon: p.epsilon.or(b.map(|b| b.epsilon)).unwrap_or(1.0),
        sideband_ratio: p
            .sideband_ratio
            .or(b.map(|b| b.sideband_ratio))
            .unwrap_or(0.0),
        finesse: p.finesse.or(b.and_then(|b| b.finesse)),
        nc0: need("nc0", p.nc0, b.map(|b| b.nc0))?,
    };
    phys.validate()
        .map_err(|e| config_error(text, "physical", None, e))?;
    Ok(phys)
}

fn apply_scaled(text: &str, s: &ScaledSection, mut base: ScaledParams) -> Result<ScaledParams> {
    for (key, v) in [
        ("nc0", s.nc0),
        ("delta0_over_gp", s.delta0_over_gp),
        ("y_sq", s.y_sq),
    ] {
        check_sign(text, "scaled", key, v, false)?;
    }
    check_sign(text, "scaled", "gamma_over_gp", s.gamma_over_gp, true)?;
    check_sign(text, "scaled", "newton_tol", s.newton_tol, true)?;
    if let Some(l) = s.l_max {
        if l % 2 != 0 {
            return Err(config_error(
                text,
                "scaled",
                Some("l_max"),
                format!("[scaled] l_max must be even, got {l}"),
            ));
        }
    }
    if s.gamma_over_gp.is_some_and(|g| g > 2.0) {
        return Err(config_error(
            text,
            "scaled",
            Some("gamma_over_gp"),
            "[scaled] gamma_over_gp cannot exceed 2 (gamma_p >= gamma/2)",
        ));
    }
    base.nc0 = s.nc0.unwrap_or(base.nc0);
    base.delta0_over_gp = s.delta0_over_gp.unwrap_or(base.delta0_over_gp);
    base.detuning_over_gp = s.detuning_over_gp.unwrap_or(base.detuning_over_gp);
    base.y_sq = s.y_sq.unwrap_or(base.y_sq);
    base.gamma_over_gp = s.gamma_over_gp.unwrap_or(base.gamma_over_gp);
    base.l_max = s.l_max.unwrap_or(base.l_max);
    base.vel_nodes = s.vel_nodes.unwrap_or(base.vel_nodes);
    base.newton_tol = s.newton_tol.unwrap_or(base.newton_tol);
    base.max_newton_iters = s.max_newton_iters.unwrap_or(base.max_newton_iters);
    Ok(base)
}

fn check_sweep(text: &str, mode: Mode, sweep: &SweepSpec) -> Result<()> {
    let err = |key: &str, msg: String| config_error(text, "sweep", Some(key), msg);
    if let Some([lo, hi]) = sweep.range {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(err(
                "range",
                format!("[sweep] range [{lo}, {hi}] is not increasing"),
            ));
        }
        let positive = matches!(
            mode,
            Mode::PowerCurve | Mode::OptimalPower | Mode::CriticalTemp
        );
        if positive && lo <= 0.0 && !(mode == Mode::CriticalTemp && lo == 0.0) {
            return Err(err(
                "range",
                format!("[sweep] range must be positive for {}", mode.name()),
            ));
        }
    }
    if sweep.points == Some(0) {
        return Err(err("points", "[sweep] points must be at least 1".into()));
    }
    if let Some(ls) = &sweep.l_values {
        if ls.is_empty() || ls.iter().any(|l| l % 2 != 0) {
            return Err(err(
                "l_values",
                "[sweep] l_values must be a non-empty list of even orders".into(),
            ));
        }
    }
    for (key, vals) in [
        ("nc0", &sweep.nc0),
        ("delta0_over_gp", &sweep.delta0_over_gp),
        ("y_sq", &sweep.y_sq),
    ] {
        if let Some(v) = vals {
            if v.is_empty() || v.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                return Err(err(
                    key,
                    format!("[sweep] {key} must be a non-empty list of non-negative values"),
                ));
            }
        }
    }
    match mode {
        Mode::Spectrum if sweep.range.is_none() => {
            Err(err("range", "spectrum needs [sweep] range".into()))
        }
        Mode::CriticalTemp if sweep.range.is_none() => Err(err(
            "range",
            "critical-temp needs a [sweep] range bracketing delta0_over_gp".into(),
        )),
        Mode::Converge if sweep.l_values.is_none() => {
            Err(err("l_values", "converge needs [sweep] l_values".into()))
        }
        _ => Ok(()),
    }
}

/// Parses a config whose mode is given in the file.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    parse_config_with(text, &Overrides::default())
}

/// Parses and validates a config, applying command-line overrides.
pub fn parse_config_with(text: &str, over: &Overrides) -> Result<RunConfig> {
    // toml's own messages already carry line and column.
    let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    let mode = match (raw.mode, over.mode) {
        (Some(a), Some(b)) if a != b => {
            return Err(config_error(
                text,
                "",
                Some("mode"),
                format!(
                    "config says mode = {} but {} was requested",
                    a.name(),
                    b.name()
                ),
            ))
        }
        (_, Some(m)) | (Some(m), None) => m,
        (None, None) => return Err(Error::Config("no mode given".into())),
    };
    if raw.physical.is_none() && raw.scaled.is_none() && mode != Mode::Table {
        return Err(Error::Config(
            "either [physical] or [scaled] is required".into(),
        ));
    }
    let physical = raw
        .physical
        .as_ref()
        .map(|p| physical_from_section(text, p))
        .transpose()?;
    let derived = match &physical {
        Some(p) => p.to_scaled()?,
        None => ScaledParams::default(),
    };
    let mut scaled = apply_scaled(text, &raw.scaled.unwrap_or_default(), derived)?;
    if let Some(l) = over.l_max {
        if l % 2 != 0 {
            return Err(Error::Config(format!("--l-max must be even, got {l}")));
        }
        scaled.l_max = l;
    }
    if let Some(n) = over.vel_nodes {
        scaled.vel_nodes = n;
    }
    scaled
        .validate()
        .map_err(|e| Error::Config(e.to_string()))?;
    // Keep the physical description consistent with the scaled overrides.
    let physical = match physical {
        Some(p) => Some(
            PhysicalParams::from_scaled(&scaled, &p.reference_scales())
                .map_err(|e| Error::Config(e.to_string()))?,
        ),
        None => None,
    };
    if mode.needs_physical() && physical.is_none() {
        return Err(Error::Config(format!(
            "{} needs a [physical] section for absolute units",
            mode.name()
        )));
    }
    let sweep = raw.sweep.unwrap_or_default();
    check_sweep(text, mode, &sweep)?;
    let out = raw.output.unwrap_or_default();
    let output = OutputSpec {
        path: over
            .out
            .clone()
            .or(out.path)
            .unwrap_or_else(|| PathBuf::from(format!("{}.csv", mode.name()))),
        format: out.format.unwrap_or_default(),
    };
    Ok(RunConfig {
        mode,
        physical,
        scaled,
        sweep,
        output,
    })
}

/// SHA-256 of the canonical JSON form of the resolved config.
pub fn config_hash(cfg: &RunConfig) -> String {
    let canonical = serde_json::to_string(cfg).expect("config serializes");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

/// Fixed-width scientific form with 12 significant digits.
pub fn fmt_num(v: f64) -> String {
    format!("{v:.11e}")
}

struct Table {
    header: &'static [&'static str],
    rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &'static [&'static str]) -> Self {
        Table {
            header,
            rows: Vec::new(),
        }
    }

    fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.header.join(","));
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.join(","));
            out.push('\n');
        }
        out
    }

    fn to_json(&self) -> Value {
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|r| {
                Value::Object(
                    self.header
                        .iter()
                        .zip(r)
                        .map(|(h, v)| (h.to_string(), Value::String(v.clone())))
                        .collect(),
                )
            })
            .collect();
        Value::Array(rows)
    }
}

/// Result of a run before anything is written.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub csv: String,
    pub summary: Value,
    /// Points or rows that failed; a non-zero count makes the run fail.
    pub failures: usize,
}

fn grid_for(scaled: &ScaledParams, y_sq: f64) -> VelocityGrid {
    VelocityGrid::for_params(&scaled.with_y_sq(y_sq))
}

fn run_spectrum(cfg: &RunConfig) -> Result<(Table, Value, usize)> {
    let [lo, hi] = cfg.sweep.range.expect("checked");
    let n = cfg.sweep.points.unwrap_or(801);
    let res = sweep_detuning(&cfg.scaled, cfg.scaled.y_sq, (lo, hi), n)?;
    let mut t = Table::new(&["delta_over_gp", "T", "phi", "converged", "newton_iters"]);
    for p in &res.points {
        t.rows.push(vec![
            fmt_num(p.axis_value),
            fmt_num(p.transmission),
            fmt_num(p.phi),
            p.converged.to_string(),
            p.newton_iters.to_string(),
        ]);
    }
    let max_inc = res.points.iter().map(|p| p.l_increment).fold(0.0, f64::max);
    let diag = json!({ "failures": res.failures(), "max_l_increment": max_inc, "termination": res.termination });
    Ok((t, diag, res.failures()))
}

fn run_power_curve(cfg: &RunConfig) -> Result<(Table, Value, usize)> {
    let [lo, hi] = cfg
        .sweep
        .range
        .unwrap_or([1e-2, 10.0 * cfg.scaled.nc0.max(1.0)]);
    let n = cfg
        .sweep
        .points
        .unwrap_or_else(|| points_for_range(lo, hi, CURVE_POINTS_PER_DECADE));
    let (res, report) = input_output_curve(&cfg.scaled.with_detuning(0.0), (lo, hi), n)?;
    // Flag the sampled point closest (in log |x|²) to each refined turning point.
    let mut flags = vec![false; res.points.len()];
    for &(x_sq, _) in &report.turning_points {
        if let Some((i, _)) = res
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| (i, (p.x_sq.ln() - x_sq.ln()).abs()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
        {
            flags[i] = true;
        }
    }
    let mut t = Table::new(&["x_sq", "y_sq", "turning_point_flag"]);
    for (p, f) in res.points.iter().zip(&flags) {
        t.rows.push(vec![
            fmt_num(p.x_sq),
            fmt_num(p.y_sq),
            u8::from(*f).to_string(),
        ]);
    }
    let max_inc = res.points.iter().map(|p| p.l_increment).fold(0.0, f64::max);
    let diag = json!({
        "turning_points": report.turning_points,
        "bistable": report.bistable,
        "window": report.window,
        "max_l_increment": max_inc,
    });
    Ok((t, diag, 0))
}

fn run_converge(cfg: &RunConfig) -> Result<(Table, Value, usize)> {
    let ls = cfg.sweep.l_values.as_deref().expect("checked");
    let res = doppleron_convergence(&cfg.scaled, cfg.scaled.y_sq, ls, cfg.physical.as_ref())?;
    let mut t = Table::new(&["l_max", "delta_nu", "ratio_to_l0"]);
    for p in &res.points {
        t.rows.push(vec![
            (p.axis_value as usize).to_string(),
            fmt_num(p.delta_nu.unwrap_or(f64::NAN)),
            fmt_num(p.ratio.unwrap_or(f64::NAN)),
        ]);
    }
    let knee = crate::scans::convergence_knee(&res, 0.01);
    let diag = json!({
        "knee_1pct": knee,
        "l_increments": res.points.iter().map(|p| p.l_increment).collect::<Vec<_>>(),
        "delta_nu_units": if cfg.physical.is_some() { "Hz" } else { "unavailable without [physical]" },
    });
    Ok((t, diag, res.failures()))
}

fn linewidth_table(y_sq: f64, r: &crate::observables::LinewidthResult) -> Table {
    let mut t = Table::new(&["y_sq", "x_sq", "slope_scaled", "delta_nu_hz"]);
    t.rows.push(vec![
        fmt_num(y_sq),
        fmt_num(r.x_sq),
        fmt_num(r.slope_scaled),
        fmt_num(r.delta_nu),
    ]);
    t
}

fn run_linewidth(cfg: &RunConfig) -> Result<(Table, Value, usize)> {
    let phys = cfg.physical.as_ref().expect("checked");
    let y_sq = cfg.scaled.y_sq;
    let r = linewidth(y_sq, &cfg.scaled, phys, &grid_for(&cfg.scaled, y_sq))?;
    Ok((
        linewidth_table(y_sq, &r),
        serde_json::to_value(&r).expect("serializable"),
        0,
    ))
}

fn run_optimal_power(cfg: &RunConfig) -> Result<(Table, Value, usize)> {
    let phys = cfg.physical.as_ref().expect("checked");
    let s = &cfg.scaled;
    let [lo, hi] = cfg.sweep.range.unwrap_or([
        OPTIMUM_RANGE_FACTORS.0 * s.nc0,
        OPTIMUM_RANGE_FACTORS.1 * s.nc0,
    ]);
    let grid = VelocityGrid::build(s.delta0_over_gp, &GridSpec::for_params(s), hi.sqrt(), &[]);
    let (y_sq, r) = optimal_power(s, phys, &grid, (lo, hi))?;
    Ok((
        linewidth_table(y_sq, &r),
        serde_json::to_value(&r).expect("serializable"),
        0,
    ))
}

fn run_critical_temp(cfg: &RunConfig) -> Result<(Table, Value, usize)> {
    let [lo, hi] = cfg.sweep.range.expect("checked");
    let d0 = critical_temperature(cfg.scaled.nc0, &cfg.scaled, (lo, hi))?;
    let temperature = cfg
        .physical
        .as_ref()
        .map_or(f64::NAN, |p| p.temperature_for_width(d0));
    let mut t = Table::new(&["nc0", "delta0_over_gp", "temperature_k"]);
    t.rows.push(vec![
        fmt_num(cfg.scaled.nc0),
        fmt_num(d0),
        fmt_num(temperature),
    ]);
    Ok((t, json!({ "bracket": [lo, hi], "resolution": 0.01 }), 0))
}

fn run_table(cfg: &RunConfig) -> Result<(Table, Value, usize)> {
    let rows: Vec<_> = intercombination_survey()
        .into_iter()
        .filter(|r| {
            cfg.sweep
                .elements
                .as_ref()
                .is_none_or(|els| els.iter().any(|e| e.eq_ignore_ascii_case(r.element)))
        })
        .collect();
    let results: Vec<_> = rows
        .par_iter()
        .map(|r| optimum_for(&r.physical, cfg.scaled.l_max, cfg.scaled.vel_nodes))
        .collect();
    let mut t = Table::new(&["element", "nc0", "p_in_opt_w", "delta_nu_hz"]);
    let mut failures = 0;
    let mut notes = Vec::new();
    for (row, res) in rows.iter().zip(results) {
        let (p, dnu) = match res {
            Ok((_, r)) => (r.p_in, r.delta_nu),
            Err(e) => {
                failures += 1;
                notes.push(format!("{} NC0={}: {e}", row.element, row.physical.nc0));
                (f64::NAN, f64::NAN)
            }
        };
        t.rows.push(vec![
            row.element.to_string(),
            fmt_num(row.physical.nc0),
            fmt_num(p),
            fmt_num(dnu),
        ]);
    }
    let published: Vec<Value> = rows
        .iter()
        .map(|r| json!({ "element": r.element, "finesse": r.physical.finesse, "p_in_opt_w": r.published_p_in_opt, "delta_nu_hz": r.published_delta_nu }))
        .collect();
    Ok((
        t,
        json!({ "errors": notes, "published": published }),
        failures,
    ))
}

fn run_oracle_check(cfg: &RunConfig) -> Result<(Table, Value, usize)> {
    let sw = &cfg.sweep;
    let nc0s = sw.nc0.clone().unwrap_or_else(|| vec![0.0, 60.0, 600.0]);
    let d0s = sw
        .delta0_over_gp
        .clone()
        .unwrap_or_else(|| vec![0.0, 26.0, 260.0]);
    let ys = sw.y_sq.clone().unwrap_or_else(|| vec![0.5, 60.0, 900.0]);
    let mut cases = Vec::new();
    for &n in &nc0s {
        for &d in &d0s {
            cases.extend(ys.iter().map(|&y| (n, d, y)));
        }
    }
    let td = TimeDomainConfig::default();
    let det = cfg.scaled.detuning_over_gp;
    let results: Vec<_> = cases
        .par_iter()
        .map(|&(n, d, y)| compare(&cfg.scaled.with_nc0(n).with_delta0(d), y, det, &td, false))
        .collect();
    let mut t = Table::new(&[
        "nc0",
        "delta0_over_gp",
        "y_sq",
        "T_floquet",
        "T_time",
        "T_rel_dev",
        "phi_dev",
        "l_max",
    ]);
    let (mut max_t, mut max_phi, mut failures) = (0.0f64, 0.0f64, 0);
    let mut errors = Vec::new();
    for (&(n, d, y), r) in cases.iter().zip(results) {
        match r {
            Ok(c) => {
                max_t = max_t.max(c.transmission_rel_dev);
                max_phi = max_phi.max(c.phase_dev);
                if !(c.transmission_rel_dev <= ORACLE_TOLERANCE && c.phase_dev <= ORACLE_TOLERANCE)
                {
                    failures += 1;
                }
                t.rows.push(vec![
                    fmt_num(n),
                    fmt_num(d),
                    fmt_num(y),
                    fmt_num(c.transmission_floquet),
                    fmt_num(c.transmission_time),
                    fmt_num(c.transmission_rel_dev),
                    fmt_num(c.phase_dev),
                    c.l_max.to_string(),
                ]);
            }
            Err(e) => {
                failures += 1;
                errors.push(format!("NC0={n} delta0={d} y_sq={y}: {e}"));
                let nan = fmt_num(f64::NAN);
                t.rows.push(vec![
                    fmt_num(n),
                    fmt_num(d),
                    fmt_num(y),
                    nan.clone(),
                    nan.clone(),
                    nan.clone(),
                    nan,
                    "0".into(),
                ]);
            }
        }
    }
    let diag = json!({
        "cases": cases.len(),
        "max_T_rel_dev": max_t,
        "max_phi_dev": max_phi,
        "tolerance": ORACLE_TOLERANCE,
        "time_domain": td,
        "errors": errors,
    });
    Ok((t, diag, failures))
}

/// Runs the configured computation without touching the file system.
pub fn execute(cfg: &RunConfig) -> Result<RunOutcome> {
    let (table, diagnostics, failures) = match cfg.mode {
        Mode::Spectrum => run_spectrum(cfg),
        Mode::PowerCurve => run_power_curve(cfg),
        Mode::Converge => run_converge(cfg),
        Mode::Linewidth => run_linewidth(cfg),
        Mode::OptimalPower => run_optimal_power(cfg),
        Mode::CriticalTemp => run_critical_temp(cfg),
        Mode::Table => run_table(cfg),
        Mode::OracleCheck => run_oracle_check(cfg),
    }?;
    let mut summary = json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "mode": cfg.mode.name(),
        "config_hash": config_hash(cfg),
        "config": cfg,
        "failures": failures,
        "diagnostics": diagnostics,
    });
    if cfg.output.format == Format::Json {
        summary["rows"] = table.to_json();
    }
    Ok(RunOutcome {
        csv: table.to_csv(),
        summary,
        failures,
    })
}

/// Path of the JSON summary that accompanies `path`.
pub fn summary_path(path: &Path) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into());
    path.with_file_name(format!("{stem}.summary.json"))
}

/// Executes `cfg` and writes its artifacts. Returns the outcome and the
/// files written.
pub fn run(cfg: &RunConfig) -> Result<(RunOutcome, Vec<PathBuf>)> {
    let outcome = execute(cfg)?;
    let mut written = Vec::new();
    if let Some(dir) = cfg
        .output
        .path
        .parent()
        .filter(|d| !d.as_os_str().is_empty())
    {
        std::fs::create_dir_all(dir)?;
    }
    if cfg.output.format == Format::Csv {
        std::fs::write(&cfg.output.path, &outcome.csv)?;
        written.push(cfg.output.path.clone());
    }
    let spath = if cfg.output.format == Format::Json {
        cfg.output.path.clone()
    } else {
        summary_path(&cfg.output.path)
    };
    let mut text = serde_json::to_string_pretty(&outcome.summary).expect("summary serializes");
    text.push('\n');
    std::fs::write(&spath, text)?;
    written.push(spath);
    Ok((outcome, written))
}

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidParams(_) => 2,
        Error::Io(_) => 3,
        _ => 4,
    }
}

/// Exit code for a run that finished with `failures` failed points.
pub fn failure_exit_code(failures: usize) -> i32 {
    if failures == 0 {
        0
    } else {
        1
    }
}

/// One-line human summary printed after a run.
pub fn describe(outcome: &RunOutcome, written: &[PathBuf]) -> String {
    let mut s = String::new();
    let files: Vec<String> = written.iter().map(|p| p.display().to_string()).collect();
    let _ = write!(s, "wrote {}", files.join(", "));
    if outcome.failures > 0 {
        let _ = write!(s, "; {} point(s) failed", outcome.failures);
    }
    s
}
