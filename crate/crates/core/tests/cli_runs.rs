//! Config parsing and end-to-end runs through the library front end and the
//! compiled binary.

use std::f64::consts::PI;
use std::process::Command;

use doppler_cqed::cli::{self, config_hash, parse_config, parse_config_with, Overrides};
use serde_json::Value;

const SR_PHYSICAL: &str = r#"
mode = "optimal-power"

[physical]
lambda_nm = 689.0
gamma_hz = 7.6e3
gamma_laser_hz = 2.0e3
kappa_hz = 2.0e6
finesse = 250.0
mass_u = 87.905612
n_atoms = 2.5e7
nc0 = 574.0
temperature_k = 3.0e-3
p_in_w = 47e-9
epsilon = 1.0
sideband_ratio = 1.0
"#;

#[test]
fn physical_section_derives_scaled_values() {
    let cfg = parse_config(SR_PHYSICAL).unwrap();
    // Hand-evaluated reference values.
    let (kb, amu, hbar, c): (f64, f64, f64, f64) = (
        1.380649e-23,
        1.66053906660e-27,
        1.054571817e-34,
        299792458.0,
    );
    let gamma_p = 2.0 * PI * (3.8e3 + 2.0e3);
    let k = 2.0 * PI / 689e-9;
    let delta0 = k * (kb * 3.0e-3 / (87.905612 * amu)).sqrt() / gamma_p;
    let omega = 2.0 * PI * c / 689e-9;
    let y_sq = 4.0 * (574.0 / 2.5e7) * 47e-9 / (hbar * omega * 2.0 * PI * 7.6e3);
    let s = &cfg.scaled;
    assert!(
        (s.delta0_over_gp / delta0 - 1.0).abs() < 1e-9,
        "{} vs {delta0}",
        s.delta0_over_gp
    );
    assert!((130.0..136.0).contains(&s.delta0_over_gp));
    assert!((s.y_sq / y_sq - 1.0).abs() < 1e-9);
    assert!((s.gamma_over_gp - 7.6 / 5.8).abs() < 1e-12);
    assert_eq!(s.nc0, 574.0);
}

#[test]
fn preset_matches_explicit_physical_section() {
    let explicit = parse_config(SR_PHYSICAL).unwrap();
    let preset = parse_config("mode = \"optimal-power\"\n[physical]\npreset = \"Sr88\"\n").unwrap();
    assert!((explicit.scaled.delta0_over_gp / preset.scaled.delta0_over_gp - 1.0).abs() < 1e-12);
    assert!((explicit.scaled.y_sq / preset.scaled.y_sq - 1.0).abs() < 1e-12);
}

#[test]
fn scaled_section_overrides_derived_values() {
    let text = format!("{SR_PHYSICAL}\n[scaled]\ny_sq = 1270.0\ndelta0_over_gp = 260.0\n");
    let cfg = parse_config(&text).unwrap();
    assert_eq!(cfg.scaled.y_sq, 1270.0);
    assert_eq!(cfg.scaled.delta0_over_gp, 260.0);
    // The physical description follows the override.
    let phys = cfg.physical.unwrap();
    assert!((phys.temperature / 3.0e-3 - (260.0f64 / 133.0).powi(2)).abs() < 0.2);
    assert!((phys.y_sq_for_power(phys.p_in) / 1270.0 - 1.0).abs() < 1e-9);
}

fn rows(csv: &str) -> Vec<Vec<String>> {
    csv.lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn spectrum_csv_shows_central_dispersive_feature() {
    let text = "mode = \"spectrum\"\n[scaled]\nnc0 = 600.0\ndelta0_over_gp = 260.0\ny_sq = 900.0\n[sweep]\nrange = [-20.0, 20.0]\npoints = 41\n";
    let out = cli::execute(&parse_config(text).unwrap()).unwrap();
    assert_eq!(
        out.csv.lines().next().unwrap(),
        "delta_over_gp,T,phi,converged,newton_iters"
    );
    let r = rows(&out.csv);
    assert_eq!(r.len(), 41);
    let phi: Vec<f64> = r.iter().map(|row| row[2].parse().unwrap()).collect();
    assert!(r.iter().all(|row| row[3] == "true"));
    assert!(phi[19] * phi[21] < 0.0, "no sign change at resonance");
    let centre = (phi[21] - phi[19]).abs() / 2.0;
    let edge = (phi[40] - phi[38]).abs() / 2.0;
    assert!(centre > 3.0 * edge, "centre slope {centre} vs edge {edge}");
}

#[test]
fn table_mode_writes_one_row_per_survey_entry() {
    let text = "mode = \"table\"\n[scaled]\nl_max = 0\nvel_nodes = 2\n";
    let out = cli::execute(&parse_config(text).unwrap()).unwrap();
    assert_eq!(
        out.csv.lines().next().unwrap(),
        "element,nc0,p_in_opt_w,delta_nu_hz"
    );
    let r = rows(&out.csv);
    assert_eq!(r.len(), 8);
    for el in ["Yb171", "Ca40", "Mg24", "Sr88"] {
        assert_eq!(r.iter().filter(|row| row[0] == el).count(), 2);
    }
    assert_eq!(
        out.summary["diagnostics"]["published"]
            .as_array()
            .unwrap()
            .len(),
        8
    );
}

#[test]
fn oracle_check_reports_maximum_deviations() {
    let text = "mode = \"oracle-check\"\n[scaled]\n[sweep]\nnc0 = [60.0]\ndelta0_over_gp = [26.0]\ny_sq = [60.0]\n";
    let out = cli::execute(&parse_config(text).unwrap()).unwrap();
    let d = &out.summary["diagnostics"];
    assert_eq!(d["cases"], 1);
    assert!(d["max_T_rel_dev"].as_f64().unwrap() < 1e-3);
    assert!(d["max_phi_dev"].as_f64().unwrap() < 1e-3);
    assert_eq!(out.failures, 0);
}

#[test]
fn json_format_embeds_rows() {
    let dir = tempfile::tempdir().unwrap();
    let text = "mode = \"power-curve\"\n[scaled]\nnc0 = 50.0\n[sweep]\nrange = [0.1, 500.0]\npoints = 20\n[output]\nformat = \"json\"\n";
    let over = Overrides {
        out: Some(dir.path().join("curve.json")),
        ..Default::default()
    };
    let cfg = parse_config_with(text, &over).unwrap();
    let (_, written) = cli::run(&cfg).unwrap();
    assert_eq!(written, vec![dir.path().join("curve.json")]);
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&written[0]).unwrap()).unwrap();
    assert_eq!(v["rows"].as_array().unwrap().len(), 20);
    assert_eq!(v["config_hash"], config_hash(&cfg));
}

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_doppler-cqed"))
}

#[test]
fn binary_rejects_bad_config_with_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "[scaled]\nnc0 = 600.0\ndelta0_over_gp = -3.0\n").unwrap();
    let out = binary()
        .arg("spectrum")
        .arg("--config")
        .arg(&path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.contains("line 3") && err.contains("delta0_over_gp"),
        "{err}"
    );
}

#[test]
fn binary_runs_and_records_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("ct.toml");
    std::fs::write(
        &cfg_path,
        "[scaled]\nnc0 = 800.0\n[sweep]\nrange = [0.0, 100.0]\n",
    )
    .unwrap();
    let csv = dir.path().join("nested/ct.csv");
    let out = binary()
        .args([
            "critical-temp",
            "--l-max",
            "0",
            "--workers",
            "1",
            "--config",
        ])
        .arg(&cfg_path)
        .arg("--out")
        .arg(&csv)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("nc0,delta0_over_gp,temperature_k\n"));
    let summary: Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("nested/ct.summary.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(summary["config"]["scaled"]["l_max"], 0);
    assert_eq!(summary["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(summary["version"], env!("CARGO_PKG_VERSION"));
}

#[test]
fn worker_count_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("c.toml");
    std::fs::write(
        &cfg_path,
        "[scaled]\nnc0 = 50.0\n[sweep]\nrange = [0.1, 500.0]\npoints = 10\n",
    )
    .unwrap();
    let out = binary()
        .env(cli::WORKERS_ENV, "not-a-number")
        .arg("power-curve")
        .arg("--config")
        .arg(&cfg_path)
        .arg("--out")
        .arg(dir.path().join("c.csv"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    let out = binary()
        .env(cli::WORKERS_ENV, "2")
        .arg("power-curve")
        .arg("--config")
        .arg(&cfg_path)
        .arg("--out")
        .arg(dir.path().join("c.csv"))
        .output()
        .unwrap();
    assert!(out.status.success());
}
