use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;
use stm_didz_cli::{EXIT_APPROACH, EXIT_CONFIG, EXIT_CRASH, EXIT_FAILURE, EXIT_OK};

const BASE: &str = "schema_version = 1\nsurface_extent_x_nm = 6.0\nsurface_extent_y_nm = 6.0\n";

fn run(dir: &Path, cmd: &str, body: &str) -> (i32, PathBuf) {
    let cfg = dir.join(format!("{cmd}.toml"));
    fs::write(&cfg, body).unwrap();
    let out = dir.join(format!("out_{cmd}"));
    let status = Command::new(env!("CARGO_BIN_EXE_stm-didz"))
        .arg(cmd)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    (status.status.code().unwrap(), out)
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn small_scan(mode: &str) -> String {
    format!(
        "{BASE}loop_mode = \"{mode}\"\nscan_width_nm = 4.0\nscan_height_nm = 4.0\nscan_pixels_x = 24\nscan_pixels_y = 24\nscan_speed_nm_per_s = 100.0\n"
    )
}

#[test]
fn scan_writes_images_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    for mode in ["constant_current", "constant_didz"] {
        let (code, out) = run(dir.path(), "scan", &small_scan(mode));
        assert_eq!(code, EXIT_OK, "{mode}");
        let meta = json(out.join("scan.json"));
        assert_eq!(meta["metadata"]["mode"], mode);
        assert_eq!(meta["config_hash"].as_str().unwrap().len(), 64);
        let pgm = fs::read(out.join("topography.pgm")).unwrap();
        assert!(pgm.starts_with(b"P5\n24 24\n65535\n"));
        assert_eq!(pgm.len(), b"P5\n24 24\n65535\n".len() + 2 * 24 * 24);
        let csv = fs::read_to_string(out.join("topography.csv")).unwrap();
        assert_eq!(csv.lines().count(), 1 + 24 * 24);
        assert!(csv.starts_with("ix,iy,x_nm,y_nm,value\n"));
    }
}

#[test]
fn identical_configs_give_identical_files() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let body = small_scan("constant_didz");
    let (ca, oa) = run(a.path(), "scan", &body);
    let (cb, ob) = run(b.path(), "scan", &body);
    assert_eq!((ca, cb), (EXIT_OK, EXIT_OK));
    let mut names: Vec<_> = fs::read_dir(&oa).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() >= 7);
    for n in names {
        assert_eq!(fs::read(oa.join(&n)).unwrap(), fs::read(ob.join(&n)).unwrap(), "{n:?}");
    }
}

#[test]
fn config_errors_exit_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _) = run(dir.path(), "scan", "schema_version = 1\n");
    assert_eq!(code, EXIT_CONFIG);
    let (code, _) = run(dir.path(), "scan", &format!("{BASE}scan_speed = 3.0\n"));
    assert_eq!(code, EXIT_CONFIG);
    let (code, _) = run(dir.path(), "scan", "surface_extent_x_nm = 6.0\nsurface_extent_y_nm = 6.0\n");
    assert_eq!(code, EXIT_CONFIG);
    // scan larger than the surface
    let (code, _) = run(dir.path(), "scan", &small_scan("constant_current").replace("scan_width_nm = 4.0", "scan_width_nm = 9.0"));
    assert_eq!(code, EXIT_CONFIG);
    let status = Command::new(env!("CARGO_BIN_EXE_stm-didz")).arg("nonsense").output().unwrap();
    assert_eq!(status.status.code(), Some(EXIT_CONFIG));
}

#[test]
fn failed_approach_has_its_own_code() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _) = run(dir.path(), "scan", &format!("{}approach_max_steps = 0\napproach_start_gap_nm = 100.0\n", small_scan("constant_current")));
    assert_eq!(code, EXIT_APPROACH);
}

#[test]
fn tip_crash_has_its_own_code_and_keeps_partial_output() {
    let dir = tempfile::tempdir().unwrap();
    let (code, out) = run(dir.path(), "scan", &format!("{}loop_ki = 5000000.0\n", small_scan("constant_current")));
    assert_eq!(code, EXIT_CRASH);
    let meta = json(out.join("scan.json"));
    assert_eq!(meta["failure"]["crash"], true);
}

#[test]
fn switchover_logs_capture_window_and_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!("{BASE}switchover_x_nm = 3.0\nswitchover_y_nm = 3.0\nswitchover_at_s = 0.15\nswitchover_hold_s = 0.2\n");
    let (code, out) = run(dir.path(), "switchover", &body);
    assert_eq!(code, EXIT_OK);
    let meta = json(out.join("switchover.json"));
    let sw = meta["switches"].as_array().unwrap();
    assert_eq!(sw.len(), 2);
    for s in sw {
        let w = s["capture_end_s"].as_f64().unwrap() - s["capture_start_s"].as_f64().unwrap();
        assert!((w - 1.0).abs() < 1e-6);
        assert!(s["transient_nm"].as_f64().unwrap() < 0.02);
    }
    assert!(meta["round_trip_rel_error"].as_f64().unwrap() < 0.01);
    let csv = fs::read_to_string(out.join("timeseries.csv")).unwrap();
    let captured = csv.lines().skip(1).filter(|l| l.ends_with(",1")).count();
    // two 1 s windows at 100 kHz, decimated by 10
    assert_eq!(captured, 20_000);
}

#[test]
fn unsettled_lock_in_refuses_switchover() {
    let dir = tempfile::tempdir().unwrap();
    // a 2 Hz low-pass is still climbing right after engagement
    let body = format!("{BASE}switchover_at_s = 0.0\nlia_lpf_hz = 2.0\n");
    let (code, out) = run(dir.path(), "switchover", &body);
    assert_eq!(code, EXIT_FAILURE);
    let meta = json(out.join("switchover.json"));
    assert!(meta["refused"].as_str().unwrap().contains("not settled"));
}

#[test]
fn sysid_campaign_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!("{BASE}loop_mode = \"constant_didz\"\nsysid_freq_min_hz = 1.0\nsysid_freq_max_hz = 3000.0\nsysid_points = 20\n");
    let (code, out) = run(dir.path(), "sysid", &body);
    assert_eq!(code, EXIT_OK);
    let meta = json(out.join("sysid.json"));
    assert_eq!(meta["freq_range_hz"], serde_json::json!([5.0, 1500.0]));
    assert_eq!(meta["warnings"].as_array().unwrap().len(), 2);
    assert!(meta["fit"]["vs_discrete_plant_db"].as_f64().unwrap() < 0.5);
    assert!(meta["fit"]["vs_continuous_model_db"].as_f64().unwrap() < 0.5);
    assert!(meta["tuning"]["feasible_points"].as_u64().unwrap() > 0);
    assert_eq!(meta["tuning"]["configured_gains"]["feasible"], true);
    let frf = fs::read_to_string(out.join("frf.csv")).unwrap();
    assert_eq!(frf.lines().count(), 21);
    assert!(frf.lines().skip(1).all(|l| l.split(',').filter(|c| !c.is_empty()).count() == 9));
    let model = fs::read_to_string(out.join("plant_fit.txt")).unwrap();
    let sys = stm_didz::io::read_model(&model).unwrap();
    assert_eq!(sys.order(), 7);
}

#[test]
fn tune_reads_a_model_file() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("plant.txt"), "domain continuous\nnum 5000\nden 1 500\n").unwrap();
    let body = format!("{BASE}tune_model_file = \"plant.txt\"\ntune_omega_c_points = 3\ntune_ki_points = 5\n");
    let (code, out) = run(dir.path(), "tune", &body);
    assert_eq!(code, EXIT_OK);
    let meta = json(out.join("tune.json"));
    assert_eq!(meta["model"], "plant.txt");
    assert_eq!(fs::read_to_string(out.join("tuning.csv")).unwrap().lines().count(), 16);
    let (code, _) = run(dir.path(), "tune", &format!("{BASE}tune_model_file = \"missing.txt\"\n"));
    assert_eq!(code, EXIT_CONFIG);
}

#[test]
fn dot_array_job_and_out_of_extent_pattern() {
    let dir = tempfile::tempdir().unwrap();
    let body = "schema_version = 1\nsurface_extent_x_nm = 16.0\nsurface_extent_y_nm = 16.0\nsurface_corrugation_nm = 0.0\n\
        litho_pattern = \"dots\"\nlitho_bias_v = 3.5\nlitho_setpoint_na_per_nm = 3.0\nlitho_speed_nm_per_s = 7.5\n\
        litho_start_row = 6.0\nlitho_start_dimer = 12.5\nlitho_image_pixels = 48\n";
    let (code, out) = run(dir.path(), "litho", body);
    assert_eq!(code, EXIT_OK);
    let meta = json(out.join("litho.json"));
    assert_eq!(meta["clusters"], 9);
    assert!(out.join("before.pgm").exists() && out.join("after.pgm").exists());
    let events = fs::read_to_string(out.join("events.csv")).unwrap();
    assert!(events.lines().skip(1).filter(|l| l.ends_with(",1")).count() >= 9);

    let far = body.replace("litho_start_row = 6.0", "litho_start_row = 40.0");
    let other = tempfile::tempdir().unwrap();
    let (code, out) = run(other.path(), "litho", &far);
    assert_eq!(code, EXIT_CONFIG);
    assert!(!out.join("before.pgm").exists());
    let (code, _) = run(dir.path(), "litho", &body.replace("litho_bias_v = 3.5", "litho_bias_v = 5.0"));
    assert_eq!(code, EXIT_CONFIG);
}

#[test]
fn surface_gen_writes_site_table() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!("{BASE}seed = 3\nsurface_initial_db_fraction = 0.05\n");
    let (code, out) = run(dir.path(), "surface-gen", &body);
    assert_eq!(code, EXIT_OK);
    let meta = json(out.join("surface.json"));
    let sites = meta["sites"].as_u64().unwrap() as usize;
    let csv = fs::read_to_string(out.join("surface.csv")).unwrap();
    assert_eq!(csv.lines().count(), sites + 1);
    assert!(csv.starts_with("x_nm,y_nm,h_nm,sigma_na_per_v,phi_ev,hydrogenated\n"));
    let bare = csv.lines().skip(1).filter(|l| l.ends_with(",0")).count();
    assert_eq!(bare as u64, meta["dangling_bonds"].as_u64().unwrap());
}
