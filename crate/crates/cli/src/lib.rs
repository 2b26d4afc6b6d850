//! Command-line front end: each subcommand reads a run configuration,
//! drives the simulator and writes its outputs to a directory.

pub mod config;

use std::f64::consts::TAU;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};
use stm_didz::control::{coarse_approach, switchover, LoopRecord, LoopState};
use stm_didz::imaging::{
    lattice_point, line_profile, raster_scan, run_lithography, spectroscopic_maps, square_spiral, Image,
    LatticePoint, LithoJob, LithoPattern, ScanConfig, ScanResult,
};
use stm_didz::io;
use stm_didz::junction::FeedbackMode;
use stm_didz::lti::{log_grid, LinearSystem};
use stm_didz::surface::SurfaceMap;
use stm_didz::sysid::{
    compare, estimate_controller, estimate_plant, fit_rational_model, pi_tuning_region, run_frf_experiment,
    FitOptions, FrfConfig, Injection, LinearLoop, TuningCriteria, TuningRegion,
};
use stm_didz::Error;

pub use config::{ConfigError, RunConfig, SCHEMA_VERSION};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_CRASH: i32 = 3;
pub const EXIT_APPROACH: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "stm-didz", version, about = "STM z-axis control simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Approach, raster-scan and write images.
    Scan(RunArgs),
    /// Switch from current to gradient regulation and log the transient.
    Switchover(RunArgs),
    /// Identify plant and controller, fit a model, compute the tuning region.
    Sysid(RunArgs),
    /// PI tuning region of a model file or the default plant.
    Tune(RunArgs),
    /// Lithography job with before and after images.
    Litho(RunArgs),
    /// Write the configured surface as a site table.
    SurfaceGen(RunArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Run configuration file.
    #[arg(short, long)]
    pub config: PathBuf,
    /// Output directory; overrides `output_dir`.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Crash(String),
    Approach(String),
    Failure(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Crash(_) => EXIT_CRASH,
            CliError::Approach(_) => EXIT_APPROACH,
            CliError::Failure(_) => EXIT_FAILURE,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Crash(m) => write!(f, "crash: {m}"),
            CliError::Approach(m) => write!(f, "approach failed: {m}"),
            CliError::Failure(m) => write!(f, "{m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let m = e.to_string();
        match e {
            Error::Config(_) | Error::Parse(_) | Error::OutOfExtent { .. } | Error::Surface(_) => CliError::Config(m),
            Error::TipCrash { .. } => CliError::Crash(m),
            Error::ApproachFailure(_) => CliError::Approach(m),
            _ => CliError::Failure(m),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.0)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Failure(e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parses arguments, runs the command and returns the process exit code.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match run(&cli.command) {
        Ok(out) => {
            println!("wrote {}", out.display());
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Runs one command; returns the output directory.
pub fn run(cmd: &Command) -> CliResult<PathBuf> {
    let (args, f): (&RunArgs, fn(&RunConfig, &Path, &Path) -> CliResult<()>) = match cmd {
        Command::Scan(a) => (a, cmd_scan),
        Command::Switchover(a) => (a, cmd_switchover),
        Command::Sysid(a) => (a, cmd_sysid),
        Command::Tune(a) => (a, cmd_tune),
        Command::Litho(a) => (a, cmd_litho),
        Command::SurfaceGen(a) => (a, cmd_surface_gen),
    };
    let cfg = RunConfig::load(&args.config)?;
    let base = args.config.parent().unwrap_or(Path::new("."));
    let out = args.out.clone().unwrap_or_else(|| base.join(&cfg.output_dir));
    std::fs::create_dir_all(&out)?;
    f(&cfg, &out, base)?;
    Ok(out)
}

fn create(dir: &Path, name: &str) -> CliResult<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_json(dir: &Path, name: &str, v: &Value) -> CliResult<()> {
    io::write_json(create(dir, name)?, v)?;
    Ok(())
}

/// PGM plus full-precision CSV; returns the sidecar entry.
fn write_image(dir: &Path, name: &str, img: &Image, unit: &str) -> CliResult<Value> {
    let scale = io::write_pgm(create(dir, &format!("{name}.pgm"))?, img)?;
    io::write_image_csv(create(dir, &format!("{name}.csv"))?, img)?;
    Ok(json!({
        "pgm": format!("{name}.pgm"),
        "csv": format!("{name}.csv"),
        "unit": unit,
        "pgm_min": scale.min,
        "pgm_max": scale.max,
        "width": img.width,
        "height": img.height,
        "origin_nm": [img.origin_nm.0, img.origin_nm.1],
        "pixel_nm": [img.pixel_nm.0, img.pixel_nm.1],
    }))
}

fn surface(cfg: &RunConfig) -> CliResult<SurfaceMap> {
    SurfaceMap::new(cfg.surface_spec()).map_err(|e| CliError::Config(e.to_string()))
}

fn engage(cfg: &RunConfig, lc: stm_didz::control::LoopConfig, s: &SurfaceMap, x: f64, y: f64) -> CliResult<(LoopState, Value)> {
    let (st, rep) = coarse_approach(lc, s, x, y, &cfg.approach_config())?;
    Ok((st, serde_json::to_value(rep).unwrap_or(Value::Null)))
}

fn scan_images(dir: &Path, r: &ScanResult) -> CliResult<Value> {
    let mut images = serde_json::Map::new();
    let list: [(&str, Option<&Image>, &str); 6] = [
        ("topography", Some(&r.topography), "nm"),
        ("current", Some(&r.current), "nA"),
        ("didz", r.didz.as_ref(), "nA/nm"),
        ("barrier_height", r.lbh.as_ref(), "eV"),
        ("didv", r.didv.as_ref(), "nA/V"),
        ("conductivity", r.conductivity.as_ref(), "nA/V"),
    ];
    for (name, img, unit) in list {
        if let Some(img) = img {
            images.insert(name.into(), write_image(dir, name, img, unit)?);
        }
    }
    Ok(Value::Object(images))
}

fn failure_result(f: &Option<stm_didz::imaging::ScanFailure>) -> CliResult<()> {
    match f {
        Some(f) if f.crash => Err(CliError::Crash(f.message.clone())),
        Some(f) => Err(CliError::Failure(f.message.clone())),
        None => Ok(()),
    }
}

fn cmd_scan(cfg: &RunConfig, out: &Path, _: &Path) -> CliResult<()> {
    let s = surface(cfg)?;
    let mode = cfg.loop_mode;
    let mut lc = cfg.loop_config(mode);
    if cfg.scan_spectroscopy {
        if mode != FeedbackMode::ConstantCurrent {
            return Err(CliError::Config("key `scan_spectroscopy`: needs loop_mode = \"constant_current\"".into()));
        }
        lc.z_mod.enabled = true;
        lc.bias_mod.enabled = true;
    }
    let sc = ScanConfig {
        origin_x_nm: cfg.scan_origin_x_nm,
        origin_y_nm: cfg.scan_origin_y_nm,
        width_nm: cfg.scan_width_nm,
        height_nm: cfg.scan_height_nm,
        pixels_x: cfg.scan_pixels_x,
        pixels_y: cfg.scan_pixels_y,
        speed_nm_s: cfg.scan_speed_nm_per_s,
        retrace_speed_nm_s: cfg.scan_speed_nm_per_s,
        bias_v: cfg.bias_v,
        mode,
        setpoint: cfg.setpoint(mode),
        settle_s: cfg.scan_settle_s,
        reference_sigma_na_per_v: cfg.surface_sigma_h_na_per_v,
        keep_raw: false,
    };
    sc.validate(lc.sample_rate_hz())?;
    let (mut st, approach) = engage(cfg, lc, &s, cfg.scan_origin_x_nm, cfg.scan_origin_y_nm)?;
    let r = if cfg.scan_spectroscopy { spectroscopic_maps(&s, &mut st, &sc)?.scan } else { raster_scan(&s, &mut st, &sc)? };
    let images = scan_images(out, &r)?;

    // profile along the dimer row nearest the image centre
    let lat = s.lattice();
    let xc = ((sc.origin_x_nm + 0.5 * sc.width_nm) / lat.row_pitch_nm).floor() * lat.row_pitch_nm + 0.5 * lat.row_pitch_nm;
    let (_, ylo) = r.topography.pixel_center(0, 0);
    let (_, yhi) = r.topography.pixel_center(0, r.topography.height - 1);
    if let Ok(p) = line_profile(&r.topography, (xc, ylo), (xc, yhi), 4 * r.topography.height) {
        io::write_profile_csv(create(out, "profile.csv")?, &p)?;
    }
    write_json(
        out,
        "scan.json",
        &json!({
            "schema_version": SCHEMA_VERSION,
            "config_hash": cfg.hash(),
            "command": "scan",
            "metadata": r.metadata,
            "approach": approach,
            "images": images,
            "profile": { "file": "profile.csv", "x_nm": xc },
            "failure": r.failure,
        }),
    )?;
    failure_result(&r.failure)
}

fn cmd_switchover(cfg: &RunConfig, out: &Path, _: &Path) -> CliResult<()> {
    let s = surface(cfg)?;
    let mut lc = cfg.loop_config(FeedbackMode::ConstantCurrent);
    lc.z_mod.enabled = true;
    let sp0 = lc.setpoint;
    let (mut st, approach) = engage(cfg, lc, &s, cfg.switchover_x_nm, cfg.switchover_y_nm)?;
    let mut records: Vec<LoopRecord> = Vec::new();
    let mut switches = Vec::new();
    let mut refusal = None;
    let mut crash = None;

    let mut body = |st: &mut LoopState, records: &mut Vec<LoopRecord>| -> stm_didz::Result<()> {
        st.run(&s, cfg.switchover_at_s, |r| records.push(*r))?;
        let legs: &[FeedbackMode] = if cfg.switchover_round_trip {
            &[FeedbackMode::ConstantDidz, FeedbackMode::ConstantCurrent]
        } else {
            &[FeedbackMode::ConstantDidz]
        };
        for &to in legs {
            let rep = switchover(st, &s, to, cfg.switchover_capture_s)?;
            records.extend_from_slice(&rep.records);
            // tip height averaged over whole dither periods, against the
            // level just before the new set-point took over
            let period = (st.config().sample_rate_hz() / cfg.z_mod_freq_hz).round().max(1.0) as usize;
            let mean_z = |rs: &[LoopRecord]| rs.iter().map(|r| r.z_t_nm).sum::<f64>() / rs.len() as f64;
            let before = mean_z(&rep.records[rep.records.len().saturating_sub(40 * period)..]);
            let hold = st.run_collect(&s, cfg.switchover_hold_s)?;
            let settle_window = ((0.1 * st.config().sample_rate_hz()) as usize).min(hold.len());
            let transient = hold[..settle_window]
                .chunks(period)
                .filter(|w| w.len() == period)
                .map(|w| (mean_z(w) - before).abs())
                .fold(0.0, f64::max);
            records.extend_from_slice(&hold);
            switches.push(json!({
                "from": rep.from,
                "to": rep.to,
                "new_setpoint_ln": rep.new_setpoint,
                "settle_rel_std": rep.settle_rel_std,
                "capture_start_s": rep.capture_start_s,
                "capture_end_s": rep.capture_end_s,
                "transient_nm": transient,
            }));
        }
        Ok(())
    };
    match body(&mut st, &mut records) {
        Ok(()) => {}
        Err(e @ Error::SwitchoverRefused(_)) => refusal = Some(e.to_string()),
        Err(e) if e.is_crash() => crash = Some(e.to_string()),
        Err(e) => return Err(e.into()),
    }

    // regulation after the last hold, relative to the starting set-point
    let tail = &records[records.len() - records.len().min(1000)..];
    let round_trip_error = (cfg.switchover_round_trip && refusal.is_none() && crash.is_none()).then(|| {
        let mean = tail.iter().map(|r| r.ln_ri).sum::<f64>() / tail.len() as f64;
        ((mean - sp0).exp() - 1.0).abs()
    });
    let decimated: Vec<LoopRecord> = records.iter().step_by(cfg.switchover_decimate).copied().collect();
    io::write_records_csv(create(out, "timeseries.csv")?, &decimated)?;
    write_json(
        out,
        "switchover.json",
        &json!({
            "schema_version": SCHEMA_VERSION,
            "config_hash": cfg.hash(),
            "command": "switchover",
            "approach": approach,
            "timeseries": "timeseries.csv",
            "decimation": cfg.switchover_decimate,
            "initial_setpoint_ln": sp0,
            "switches": switches,
            "round_trip_rel_error": round_trip_error,
            "refused": refusal,
            "crash": crash,
        }),
    )?;
    if let Some(c) = crash {
        return Err(CliError::Crash(c));
    }
    if let Some(r) = refusal {
        return Err(CliError::Failure(r));
    }
    Ok(())
}

fn tuning_criteria(cfg: &RunConfig) -> TuningCriteria {
    TuningCriteria {
        min_bandwidth_hz: cfg.tune_min_bandwidth_hz,
        max_inf_norm_db: cfg.tune_max_inf_norm_db,
        ..TuningCriteria::default()
    }
}

fn tuning(cfg: &RunConfig, g: &LinearSystem) -> CliResult<(TuningRegion, bool)> {
    let n = |k: usize, key: &str| {
        if k >= 2 {
            Ok(k)
        } else {
            Err(CliError::Config(format!("key `{key}`: needs at least 2 points")))
        }
    };
    let wc = log_grid(
        cfg.tune_omega_c_min_rad_per_s,
        cfg.tune_omega_c_max_rad_per_s,
        n(cfg.tune_omega_c_points, "tune_omega_c_points")?,
    );
    let ki = log_grid(cfg.tune_ki_min, cfg.tune_ki_max, n(cfg.tune_ki_points, "tune_ki_points")?);
    let crit = tuning_criteria(cfg);
    let region = pi_tuning_region(g, &wc, &ki, &crit)?;
    let current = pi_tuning_region(g, &[cfg.loop_omega_c_rad_per_s], &[cfg.loop_ki], &crit)?;
    Ok((region, current.points[0].feasible))
}

fn tuning_json(region: &TuningRegion, current_feasible: bool, cfg: &RunConfig) -> Value {
    json!({
        "file": "tuning.csv",
        "criteria": region.criteria,
        "points": region.points.len(),
        "feasible_points": region.feasible_count(),
        "rows": region.rows,
        "recommended": region.recommended.map(|(w, k)| json!({ "omega_c_rad_per_s": w, "ki": k })),
        "configured_gains": {
            "omega_c_rad_per_s": cfg.loop_omega_c_rad_per_s,
            "ki": cfg.loop_ki,
            "feasible": current_feasible,
        },
    })
}

fn cmd_sysid(cfg: &RunConfig, out: &Path, _: &Path) -> CliResult<()> {
    let mode = cfg.loop_mode;
    let lc = cfg.loop_config(mode);
    let decay = lc.junction.decay_rate(cfg.surface_phi_h_ev);
    let (lp, truth) = LinearLoop::from_spec(&lc.plant, mode, decay, &lc.lia, lc.ki, lc.omega_c)?;
    let lp = if cfg.sysid_noise_std > 0.0 { lp.with_noise(cfg.sysid_noise_std, cfg.seed)? } else { lp };

    let mut warnings = Vec::new();
    let (mut lo, mut hi) = (cfg.sysid_freq_min_hz, cfg.sysid_freq_max_hz);
    if !(lo < hi) || cfg.sysid_points < 2 {
        return Err(CliError::Config("keys `sysid_freq_min_hz` < `sysid_freq_max_hz` and `sysid_points` >= 2 required".into()));
    }
    if lo < 5.0 {
        warnings.push(format!("sysid_freq_min_hz = {lo} below 5 Hz; clamped"));
        lo = 5.0;
    }
    if hi > 1500.0 {
        warnings.push(format!("sysid_freq_max_hz = {hi} above 1500 Hz; clamped"));
        hi = 1500.0;
    }
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let grid = log_grid(lo, hi, cfg.sysid_points);
    let experiment = |inj: Injection, amplitude: f64| {
        let fc = FrfConfig {
            freqs_hz: grid.clone(),
            amplitude,
            cycles: cfg.sysid_cycles,
            averages: cfg.sysid_averages,
            ..FrfConfig::new(inj)
        };
        run_frf_experiment(&lp, &fc, inj)
    };
    let de = experiment(Injection::Setpoint, cfg.sysid_setpoint_amplitude)?;
    let du = experiment(Injection::ControllerOutput, cfg.sysid_output_amplitude)?;
    io::write_frf_csv(create(out, "frf.csv")?, Some(&de), Some(&du))?;
    if let Some(f) = de.failure.as_ref().or(du.failure.as_ref()) {
        return Err(CliError::Failure(format!("experiment aborted: {f}")));
    }

    let g = estimate_plant(&de)?;
    let k = estimate_controller(&de, &du)?;
    io::write_response_csv(create(out, "plant_estimate.csv")?, &g.freqs_hz, &g.values)?;
    io::write_response_csv(create(out, "controller_estimate.csv")?, &k.freqs_hz, &k.values)?;
    let fit = fit_rational_model(&g.freqs_hz, &g.values, &FitOptions { order: cfg.sysid_fit_order, ..FitOptions::default() })?;
    warnings.extend(fit.warnings.iter().cloned());
    io::write_model(create(out, "plant_fit.txt")?, &fit.model)?;
    io::write_model(create(out, "plant_truth.txt")?, &truth)?;

    let dense = log_grid(lo, hi, 200);
    let fit_vs_truth = dense.iter().fold((0.0f64, 0.0f64), |(db, deg), &f| {
        let r = fit.model.response(TAU * f) / truth.response(TAU * f);
        (db.max((20.0 * r.norm().log10()).abs()), deg.max(r.arg().to_degrees().abs()))
    });
    let (g_db, g_deg) = compare(&g, &truth);
    let (gd_db, gd_deg) = compare(&g, lp.plant_model());
    let fit_vs_discrete = dense.iter().fold((0.0f64, 0.0f64), |(db, deg), &f| {
        let r = fit.model.response(TAU * f) / lp.plant_model().response(TAU * f);
        (db.max((20.0 * r.norm().log10()).abs()), deg.max(r.arg().to_degrees().abs()))
    });
    let (k_db, k_deg) = compare(&k, &LinearSystem::pi(lc.ki, lc.omega_c));

    let (region, current) = tuning(cfg, &fit.model)?;
    io::write_tuning_csv(create(out, "tuning.csv")?, &region)?;
    write_json(
        out,
        "sysid.json",
        &json!({
            "schema_version": SCHEMA_VERSION,
            "config_hash": cfg.hash(),
            "command": "sysid",
            "mode": mode,
            "frf": "frf.csv",
            "freq_range_hz": [lo, hi],
            "dropped_hz": g.dropped_hz,
            "plant_vs_continuous_model": { "max_db": g_db, "max_deg": g_deg },
            "plant_vs_discrete_plant": { "max_db": gd_db, "max_deg": gd_deg },
            "controller_vs_truth": { "max_db": k_db, "max_deg": k_deg },
            "fit": {
                "model": "plant_fit.txt",
                "truth": "plant_truth.txt",
                "order": fit.order,
                "iterations": fit.iterations,
                "max_error_db": fit.max_error_db,
                "max_error_deg": fit.max_error_deg,
                "vs_continuous_model_db": fit_vs_truth.0,
                "vs_continuous_model_deg": fit_vs_truth.1,
                "vs_discrete_plant_db": fit_vs_discrete.0,
                "vs_discrete_plant_deg": fit_vs_discrete.1,
                "stable": fit.model.is_stable(),
            },
            "tuning": tuning_json(&region, current, cfg),
            "warnings": warnings,
        }),
    )
}

fn cmd_tune(cfg: &RunConfig, out: &Path, base: &Path) -> CliResult<()> {
    let lc = cfg.loop_config(cfg.loop_mode);
    let (g, source) = match &cfg.tune_model_file {
        Some(f) => {
            let text = std::fs::read_to_string(base.join(f))
                .map_err(|e| CliError::Config(format!("key `tune_model_file`: {f}: {e}")))?;
            (io::read_model(&text).map_err(|e| CliError::Config(format!("key `tune_model_file`: {e}")))?, f.clone())
        }
        None => {
            let decay = lc.junction.decay_rate(cfg.surface_phi_h_ev);
            (lc.plant.linear_model(cfg.loop_mode, decay, &lc.lia)?, "default plant".into())
        }
    };
    let (region, current) = tuning(cfg, &g)?;
    io::write_tuning_csv(create(out, "tuning.csv")?, &region)?;
    write_json(
        out,
        "tune.json",
        &json!({
            "schema_version": SCHEMA_VERSION,
            "config_hash": cfg.hash(),
            "command": "tune",
            "model": source,
            "tuning": tuning_json(&region, current, cfg),
        }),
    )
}

fn litho_job(cfg: &RunConfig) -> LithoJob {
    let start = LatticePoint { row: cfg.litho_start_row, dimer: cfg.litho_start_dimer };
    let pattern = match cfg.litho_pattern {
        config::PatternKind::Spiral => {
            LithoPattern::Polyline(square_spiral(start, cfg.litho_spiral_loops, cfg.litho_spiral_pitch_rows))
        }
        config::PatternKind::Line => LithoPattern::Polyline(vec![
            start,
            LatticePoint { row: start.row, dimer: start.dimer + cfg.litho_line_length_dimers },
        ]),
        config::PatternKind::Dots => {
            let n = cfg.litho_dots_per_side;
            LithoPattern::Dots(
                (0..n)
                    .flat_map(|i| {
                        (0..n).map(move |j| LatticePoint {
                            row: start.row + i as f64 * cfg.litho_dot_spacing_rows,
                            dimer: start.dimer + j as f64 * cfg.litho_dot_spacing_dimers,
                        })
                    })
                    .collect(),
            )
        }
    };
    let mut job = LithoJob::new(pattern, cfg.litho_regime, cfg.litho_bias_v, cfg.litho_setpoint_na_per_nm, cfg.litho_speed_nm_per_s);
    job.transit_speed_nm_s = cfg.litho_transit_speed_nm_per_s;
    job.seed = cfg.seed;
    job
}

fn cmd_litho(cfg: &RunConfig, out: &Path, _: &Path) -> CliResult<()> {
    let mut s = surface(cfg)?;
    let job = litho_job(cfg);
    job.validate()?;
    let lat = *s.lattice();
    let pts: Vec<(f64, f64)> = match &job.pattern {
        LithoPattern::Polyline(v) | LithoPattern::Dots(v) => v.iter().map(|&p| lattice_point(&lat, p)).collect(),
    };
    if let Some(&(x, y)) = pts.iter().find(|&&(x, y)| !s.contains(x, y)) {
        return Err(CliError::Config(format!("pattern point ({x:.3}, {y:.3}) nm lies outside the surface")));
    }
    // image the pattern's bounding box with a margin, clipped to the surface
    let (ex, ey) = s.extent();
    let margin = 2.0;
    let (mut x0, mut y0, mut x1, mut y1) = pts.iter().fold((f64::MAX, f64::MAX, f64::MIN, f64::MIN), |b, &(x, y)| {
        (b.0.min(x), b.1.min(y), b.2.max(x), b.3.max(y))
    });
    x0 = (x0 - margin).max(0.0);
    y0 = (y0 - margin).max(0.0);
    x1 = (x1 + margin).min(ex);
    y1 = (y1 + margin).min(ey);
    let side = (x1 - x0).max(y1 - y0);
    let (x1, y1) = ((x0 + side).min(ex), (y0 + side).min(ey));
    let sc = ScanConfig {
        origin_x_nm: x0,
        origin_y_nm: y0,
        width_nm: x1 - x0,
        height_nm: y1 - y0,
        pixels_x: cfg.litho_image_pixels,
        pixels_y: cfg.litho_image_pixels,
        speed_nm_s: cfg.litho_image_speed_nm_per_s,
        retrace_speed_nm_s: cfg.litho_image_speed_nm_per_s,
        bias_v: cfg.bias_v,
        mode: job.mode,
        setpoint: cfg.setpoint(job.mode),
        settle_s: cfg.scan_settle_s,
        reference_sigma_na_per_v: cfg.surface_sigma_h_na_per_v,
        keep_raw: false,
    };
    let lc = cfg.loop_config(job.mode);
    sc.validate(lc.sample_rate_hz())?;
    let (mut st, approach) = engage(cfg, lc, &s, x0, y0)?;

    let before = raster_scan(&s, &mut st, &sc)?;
    failure_result(&before.failure)?;
    let before_img = write_image(out, "before", &before.topography, "nm")?;
    let report = run_lithography(&mut s, &mut st, &job, &cfg.dose_model())?;
    if let Some(f) = &report.failure {
        io::write_surface_csv(create(out, "surface_after.csv")?, &s)?;
        return Err(if f.contains("crash") { CliError::Crash(f.clone()) } else { CliError::Failure(f.clone()) });
    }
    let after = raster_scan(&s, &mut st, &sc)?;
    let after_img = write_image(out, "after", &after.topography, "nm")?;
    io::write_surface_csv(create(out, "surface_after.csv")?, &s)?;

    io::write_events_csv(create(out, "events.csv")?, &report.events)?;

    let clusters = s.db_clusters();
    write_json(
        out,
        "litho.json",
        &json!({
            "schema_version": SCHEMA_VERSION,
            "config_hash": cfg.hash(),
            "command": "litho",
            "approach": approach,
            "job": job,
            "dose_model": cfg.dose_model(),
            "exposed_sites": report.events.len(),
            "depassivated_sites": report.depassivated.len(),
            "clusters": clusters.len(),
            "exposure_ticks": report.exposure_ticks,
            "mean_current_na": report.mean_current_na,
            "duration_s": report.duration_s,
            "images": { "before": before_img, "after": after_img },
            "events": "events.csv",
            "surface": "surface_after.csv",
        }),
    )?;
    failure_result(&after.failure)
}

fn cmd_surface_gen(cfg: &RunConfig, out: &Path, _: &Path) -> CliResult<()> {
    let s = surface(cfg)?;
    io::write_surface_csv(create(out, "surface.csv")?, &s)?;
    write_json(
        out,
        "surface.json",
        &json!({
            "schema_version": SCHEMA_VERSION,
            "config_hash": cfg.hash(),
            "command": "surface-gen",
            "spec": s.spec(),
            "rows": s.rows(),
            "dimers_per_row": s.dimers_per_row(),
            "sites": s.site_count(),
            "dangling_bonds": s.dangling_bonds().count(),
            "file": "surface.csv",
        }),
    )
}
