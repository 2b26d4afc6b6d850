//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion.

use std::f64::consts::TAU;
use std::time::Instant;

use stm_didz::control::{switchover, LoopConfig, LoopRecord, LoopState};
use stm_didz::dsp::{LiaChannel, LiaConfig};
use stm_didz::imaging::*;
use stm_didz::io;
use stm_didz::junction::{
    didz_analytic, log_current, steady_state_gap, tunneling_current, FeedbackMode, JunctionParams,
    TipSampleState,
};
use stm_didz::lti::{log_grid, LinearSystem, PlantSpec};
use stm_didz::surface::{SurfaceMap, SurfaceSpec};
use stm_didz::sysid::*;
use stm_didz::SAMPLE_RATE_HZ;

const ROW: f64 = 0.768;
const DIMER: f64 = 0.384;
const KI: f64 = 1.625e4;
const WC: f64 = 1e4;

type Outcome = (bool, String);

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

fn tail(r: &[LoopRecord], frac: f64) -> &[LoopRecord] {
    &r[(r.len() as f64 * (1.0 - frac)) as usize..]
}

fn flat(extent: f64) -> SurfaceMap {
    SurfaceMap::new(SurfaceSpec::square(extent).flat()).unwrap()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn inside_outside(img: &Image, lo: (f64, f64), hi: (f64, f64), guard: f64) -> (f64, f64) {
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for iy in 0..img.height {
        for ix in 0..img.width {
            let (x, y) = img.pixel_center(ix, iy);
            let v = img.get(ix, iy);
            if x > lo.0 + guard && x < hi.0 - guard && y > lo.1 + guard && y < hi.1 - guard {
                a.push(v);
            } else if x < lo.0 - guard || x > hi.0 + guard || y < lo.1 - guard || y > hi.1 + guard {
                b.push(v);
            }
        }
    }
    (median(a), median(b))
}

fn log_linearity() -> Outcome {
    let p = JunctionParams::default();
    let mut worst = 0.0f64;
    for phi in [2.25, 4.5] {
        let ds: Vec<f64> = (0..71).map(|k| 0.3 + 0.01 * k as f64).collect();
        let ys: Vec<f64> = ds
            .iter()
            .map(|&d| log_current(tunneling_current(&TipSampleState::at_gap(d, 1e4, phi), &p).unwrap(), &p))
            .collect();
        let (mx, my) = (mean(ds.iter().copied()), mean(ys.iter().copied()));
        let sxy: f64 = ds.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = ds.iter().map(|x| (x - mx).powi(2)).sum();
        let want = -10.25 * phi.sqrt();
        worst = worst.max((sxy / sxx / want - 1.0).abs());
    }
    (worst < 1e-9, format!("max slope rel err {worst:.2e}"))
}

fn derivative_identity() -> Outcome {
    let p = JunctionParams::default();
    let mut worst = 0.0f64;
    let mut n = 0;
    for d in [0.1, 0.5, 1.0, 1.5, 2.0] {
        for phi in [1.0, 2.25, 3.5, 4.5, 6.0] {
            for sigma in [1e2, 1e3, 1e4, 2e4] {
                let i = |x: f64| tunneling_current(&TipSampleState::at_gap(x, sigma, phi), &p).unwrap();
                let h = 1e-5;
                let fd = (i(d + h) - i(d - h)) / (2.0 * h);
                let an = didz_analytic(&TipSampleState::at_gap(d, sigma, phi), &p).unwrap();
                worst = worst.max(((fd - an) / an).abs());
                n += 1;
            }
        }
    }
    (n == 100 && worst < 1e-6, format!("{n} points, max rel err {worst:.2e}"))
}

fn lock_in() -> Outcome {
    let mut ok = true;
    let mut detail = Vec::new();
    for lpf in [300.0, 500.0, 700.0] {
        let cfg = LiaConfig::default().with_lpf(lpf);
        let n = ((5.0 * cfg.time_constant() + cfg.sync_window_s()) * SAMPLE_RATE_HZ).ceil() as usize;
        let tone = |f: f64, a: f64| -> Vec<f64> {
            (0..n).map(|k| a * (TAU * f * k as f64 / SAMPLE_RATE_HZ + 0.3).sin()).collect()
        };
        let amp = LiaChannel::new(cfg).unwrap().run(&tone(2000.0, 0.1)).last().unwrap().amplitude;
        let err = (amp / 0.1 - 1.0).abs();
        // steady-state leakage, once the start-up transient has decayed
        let long: Vec<f64> = (0..4 * n).map(|k| 0.1 * (TAU * 3000.0 * k as f64 / SAMPLE_RATE_HZ).sin()).collect();
        let rej = LiaChannel::new(cfg)
            .unwrap()
            .run(&long)
            .iter()
            .skip(3 * n)
            .map(|o| o.amplitude)
            .fold(0.0, f64::max)
            / 0.1;
        ok &= err < 0.01 && rej < 0.02;
        detail.push(format!("{lpf} Hz: err {:.3}% leak {:.3}%", 100.0 * err, 100.0 * rej));
    }
    (ok, detail.join(", "))
}

fn gradient_fidelity() -> Outcome {
    let s = flat(5.0);
    let cfg = LoopConfig::for_mode(FeedbackMode::ConstantDidz);
    let (jp, phi, gain) = (cfg.junction, 4.5, cfg.junction.gain_v_per_na);
    let preamp = PlantSpec::default();
    let mut st = LoopState::new(cfg, &s, 2.5, 2.5).unwrap();
    let rec = st.run_collect(&s, 0.2).unwrap();
    let end = tail(&rec, 0.25);
    let (lo, hi) = end.iter().fold((f64::MAX, f64::MIN), |(lo, hi), r| (lo.min(r.z_t_nm), hi.max(r.z_t_nm)));
    let swing = (hi - lo) / 2.0;
    let didz = jp.decay_rate(phi) * mean(end.iter().map(|r| r.i_na.abs()));
    let wz = TAU * 2000.0;
    let pre = 1.0 / (1.0 + (wz / (TAU * preamp.preamp_bandwidth_hz)).powi(2)).sqrt();
    let amp = mean(end.iter().map(|r| r.lia_amp_v)) / (gain * pre);
    let err = (amp / (swing * didz) - 1.0).abs();
    (
        err < 0.02 && swing <= 0.1,
        format!("LIA {amp:.4e} vs swing×|di/dz| {:.4e} ({:.2}%), swing {swing:.4} nm", swing * didz, 100.0 * err),
    )
}

fn regulation() -> Outcome {
    let mut ok = true;
    let mut detail = Vec::new();
    for mode in [FeedbackMode::ConstantCurrent, FeedbackMode::ConstantDidz] {
        let s = flat(5.0);
        let mut st = LoopState::new(LoopConfig::for_mode(mode), &s, 2.5, 2.5).unwrap();
        let rec = st.run_collect(&s, 0.3).unwrap();
        let e = mean(tail(&rec, 0.3).iter().map(|r| r.error));

        let mut spec = SurfaceSpec::square(5.0).flat();
        spec.step_edges_x_nm = vec![2.5];
        let s = SurfaceMap::new(spec).unwrap();
        let cfg = LoopConfig::for_mode(mode);
        let mut st = LoopState::new(cfg.clone(), &s, 2.4, 2.5).unwrap();
        st.run(&s, 0.05, |_| {}).unwrap();
        st.set_position(2.6, 2.5);
        let rec = st.run_collect(&s, 0.3).unwrap();
        let site = s.sample(2.6, 2.5).unwrap();
        let want = steady_state_gap(cfg.setpoint, mode, site.sigma, site.phi, &cfg.junction).unwrap();
        let gap = mean(tail(&rec, 0.2).iter().map(|r| r.delta_nm));
        let step_ok = (site.h - 0.136).abs() < 1e-12 && (gap - want).abs() < 0.005;
        ok &= e.abs() < 1e-3 && step_ok;
        detail.push(format!("{}: mean err {e:.1e}, step gap err {:.1e} nm", mode.as_str(), (gap - want).abs()));
    }
    (ok, detail.join("; "))
}

fn linear_loop() -> (LinearLoop, LinearSystem) {
    let decay = JunctionParams::default().decay_rate(4.5);
    LinearLoop::from_spec(&PlantSpec::default(), FeedbackMode::ConstantDidz, decay, &LiaConfig::default(), KI, WC)
        .unwrap()
}

fn sysid_round_trip() -> Outcome {
    let (lp, continuous) = linear_loop();
    let grid = FrfConfig::default_grid(30);
    let run = |inj| {
        let cfg = FrfConfig { freqs_hz: grid.clone(), ..FrfConfig::new(inj) };
        run_frf_experiment(&lp, &cfg, inj).unwrap()
    };
    let (de, du) = (run(Injection::Setpoint), run(Injection::ControllerOutput));
    let g = estimate_plant(&de).unwrap();
    let k = estimate_controller(&de, &du).unwrap();
    let truth = lp.plant_model();
    let (g_db, g_deg) = compare(&g, truth);
    let (k_db, k_deg) = compare(&k, &LinearSystem::pi(KI, WC));
    let (c_db, c_deg) = compare(&g, &continuous);
    let fit = fit_rational_model(&g.freqs_hz, &g.values, &FitOptions::default()).unwrap();
    let (mut f_db, mut f_deg) = (0.0f64, 0.0f64);
    for f in log_grid(5.0, 1500.0, 300) {
        let r = fit.model.response(TAU * f) / truth.response(TAU * f);
        f_db = f_db.max((20.0 * r.norm().log10()).abs());
        f_deg = f_deg.max(r.arg().to_degrees().abs());
    }
    let ok = g_db < 0.5 && g_deg < 3.0 && k_db < 0.5 && k_deg < 3.0 && fit.order == 7 && f_db < 0.5 && f_deg < 3.0;
    (
        ok,
        format!(
            "G {g_db:.1e} dB/{g_deg:.1e}°, K {k_db:.1e} dB/{k_deg:.1e}°, fit order {} {f_db:.1e} dB/{f_deg:.1e}° (vs continuous model G {c_db:.3} dB/{c_deg:.2}°)",
            fit.order
        ),
    )
}

fn tuning() -> Outcome {
    let (lp, truth) = linear_loop();
    let wc = log_grid(2e3, 5e4, 10);
    let ki = log_grid(1e3, 1e6, 24);
    let r = pi_tuning_region(&truth, &wc, &ki, &TuningCriteria::default()).unwrap();
    let false_feasible = r
        .points
        .iter()
        .filter(|p| p.feasible && !simulate_linear_loop(&lp.with_gains(p.ki, p.omega_c), 1.0))
        .count();
    let p = pi_tuning_region(&truth, &[WC], &[KI], &TuningCriteria::default()).unwrap().points[0];
    let ok = r.points.len() >= 200
        && r.feasible_count() > 0
        && false_feasible == 0
        && p.feasible
        && p.bandwidth_hz >= 35.0
        && p.inf_norm_db < 3.0;
    (
        ok,
        format!(
            "{} points, {} feasible, {false_feasible} false-feasible; nominal gains bw {:.1} Hz, |T|∞ {:.2} dB",
            r.points.len(),
            r.feasible_count(),
            p.bandwidth_hz,
            p.inf_norm_db
        ),
    )
}

fn didz_scan(surface: &SurfaceMap, extent: f64, pixels: usize, speed: f64) -> ScanResult {
    let cfg = LoopConfig::for_mode(FeedbackMode::ConstantDidz);
    let mut st = LoopState::new(cfg, surface, 0.0, 0.0).unwrap();
    let sc = ScanConfig::square(extent, pixels, speed, FeedbackMode::ConstantDidz, 0.25);
    raster_scan(surface, &mut st, &sc).unwrap()
}

fn imaging_geometry() -> Outcome {
    let s = SurfaceMap::new(SurfaceSpec::square(12.0)).unwrap();
    let r = didz_scan(&s, 12.0, 128, 200.0);
    let img = &r.topography;
    let x = 7.5 * ROW;
    let mut counts = Vec::new();
    for len in [4.224, 8.064] {
        let y0 = 2.0 * DIMER;
        let p = line_profile(img, (x, y0), (x, y0 + len), 400).unwrap();
        let (lo, hi) = p.values.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        counts.push(count_peaks(&p.values, 0.3 * (hi - lo)));
    }
    let f = lattice_frequency(img, Axis::Y, 1.0).unwrap();
    let err = (f * DIMER - 1.0).abs();
    (
        r.failure.is_none() && counts == [11, 21] && err < 0.01,
        format!("peaks {counts:?}, lattice {f:.4} nm⁻¹ ({:.2}% off)", 100.0 * err),
    )
}

fn disturbance_attenuation() -> Outcome {
    let mut s = flat(8.0);
    for i in 3..8 {
        for j in 8..18 {
            let idx = s.site_index(i, j);
            s.depassivate_site(idx).unwrap();
        }
    }
    let (lo, hi) = ((3.0 * ROW, 8.0 * DIMER), (8.0 * ROW, 18.0 * DIMER));
    let mut cfg = LoopConfig::for_mode(FeedbackMode::ConstantCurrent);
    cfg.z_mod.enabled = true;
    let jp = cfg.junction;
    let mut st = LoopState::new(cfg, &s, 0.5, 0.5).unwrap();
    st.run(&s, 0.05, |_| {}).unwrap();
    let sc = ScanConfig::square(8.0, 32, 20.0, FeedbackMode::ConstantCurrent, 0.5);
    let cur = raster_scan(&s, &mut st, &sc).unwrap();
    st.set_position(0.5, 0.5);
    st.run(&s, 0.05, |_| {}).unwrap();
    let rep = switchover(&mut st, &s, FeedbackMode::ConstantDidz, 1.0).unwrap();
    let g = rep.new_setpoint.exp() / jp.gain_v_per_na;
    let did = raster_scan(&s, &mut st, &ScanConfig { mode: FeedbackMode::ConstantDidz, setpoint: g, ..sc }).unwrap();

    let h = *s.site(s.site_index(0, 0));
    let db = *s.site(s.site_index(4, 12));
    let oracle = |mode, sp: f64| {
        let sp = (jp.gain_v_per_na * sp).ln();
        steady_state_gap(sp, mode, db.sigma, db.phi, &jp).unwrap() - steady_state_gap(sp, mode, h.sigma, h.phi, &jp).unwrap()
    };
    let (oc, od) = (oracle(FeedbackMode::ConstantCurrent, 0.5), oracle(FeedbackMode::ConstantDidz, g));
    let art = |r: &ScanResult| {
        let (a, b) = inside_outside(&r.topography, lo, hi, 0.5);
        a - b
    };
    let (ac, ad) = (art(&cur), art(&did));
    let (ic, _) = inside_outside(&cur.current, lo, hi, 0.5);
    let (id, _) = inside_outside(&did.current, lo, hi, 0.5);
    // at matched tip heights over hydrogen, the gradient loop settles where i ∝ √φ_H/√φ_DB
    let predicted = (h.phi / db.phi).sqrt();
    let ok = ad < ac
        && (ac / oc - 1.0).abs() < 0.05
        && (ad / od - 1.0).abs() < 0.05
        && (id - ic).signum() == (predicted - 1.0).signum();
    (
        ok,
        format!(
            "artifact current {ac:.4} (oracle {oc:.4}), di/dz {ad:.4} (oracle {od:.4}) nm; |i| over DB {ic:.3} -> {id:.3} nA, oracle ratio {predicted:.3}"
        ),
    )
}

fn litho_state(surface: &SurfaceMap) -> LoopState {
    let mut st = LoopState::new(LoopConfig::for_mode(FeedbackMode::ConstantDidz), surface, 1.0, 1.0).unwrap();
    st.run(surface, 0.02, |_| {}).unwrap();
    st
}

fn lithography() -> Outcome {
    let blank = |e: f64| flat(e);
    let dose = DoseModel::default();

    let mut s = blank(24.0);
    let mut st = litho_state(&s);
    let path = square_spiral(LatticePoint { row: 15.0, dimer: 30.0 }, 3, 3.0);
    let job = LithoJob::new(LithoPattern::Polyline(path.clone()), LithoRegime::AtomicallyPrecise, 4.0, 4.0, 10.0);
    run_lithography(&mut s, &mut st, &job, &dose).unwrap();
    let lat = *s.lattice();
    let pts: Vec<_> = path.iter().map(|&p| lattice_point(&lat, p)).collect();
    let widths: Vec<f64> =
        pts.windows(2).skip(2).map(|w| line_width_nm(&s, w[0], w[1], 0.6, 1.2) / lat.row_pitch_nm).collect();
    let mean_w = mean(widths.iter().copied());
    let spiral_ok = s.db_clusters().len() == 1 && (2.0..=3.0).contains(&mean_w);

    let mut s = blank(24.0);
    let mut st = litho_state(&s);
    let line = vec![LatticePoint { row: 8.0, dimer: 15.0 }, LatticePoint { row: 8.0, dimer: 45.0 }];
    let job = LithoJob::new(LithoPattern::Polyline(line.clone()), LithoRegime::FieldEmission, 8.0, 4.0, 1000.0);
    run_lithography(&mut s, &mut st, &job, &dose).unwrap();
    let fe = line_width_nm(&s, lattice_point(&lat, line[0]), lattice_point(&lat, line[1]), 2.0, 8.0);

    let mut s = blank(24.0);
    let mut st = litho_state(&s);
    let dots: Vec<_> = (0..3)
        .flat_map(|i| (0..3).map(move |j| LatticePoint { row: 10.0 + 4.0 * i as f64, dimer: 20.5 + 8.0 * j as f64 }))
        .collect();
    let job = LithoJob::new(LithoPattern::Dots(dots), LithoRegime::AtomicallyPrecise, 3.5, 3.0, 7.5);
    run_lithography(&mut s, &mut st, &job, &dose).unwrap();
    let clusters = s.db_clusters().len();

    let mut s = blank(12.0);
    let before = s.sites().to_vec();
    let mut st = litho_state(&s);
    let path = square_spiral(LatticePoint { row: 7.0, dimer: 15.0 }, 1, 2.0);
    let job = LithoJob::new(LithoPattern::Polyline(path), LithoRegime::AtomicallyPrecise, 4.0, 4.0, f64::INFINITY);
    run_lithography(&mut s, &mut st, &job, &dose).unwrap();
    let untouched = s.sites() == &before[..];

    (
        spiral_ok && (4.0..=5.0).contains(&fe) && clusters == 9 && untouched,
        format!(
            "spiral width {mean_w:.2} rows (legs {:.2}..{:.2}), FE {fe:.2} nm, {clusters} dot clusters, zero dose untouched {untouched}",
            widths.iter().copied().fold(f64::MAX, f64::min),
            widths.iter().copied().fold(f64::MIN, f64::max)
        ),
    )
}

fn switchover_check() -> Outcome {
    let s = flat(5.0);
    let mut cfg = LoopConfig::for_mode(FeedbackMode::ConstantCurrent);
    cfg.z_mod.enabled = true;
    let mut st = LoopState::new(cfg, &s, 2.5, 2.5).unwrap();
    st.run(&s, 0.1, |_| {}).unwrap();
    let sp0 = st.setpoint();
    let rep = switchover(&mut st, &s, FeedbackMode::ConstantDidz, 1.0).unwrap();
    let window = rep.capture_end_s - rep.capture_start_s;
    let captured = rep.records.iter().filter(|r| r.capture).count();
    // dither-period averages remove the modulation itself
    let period = (SAMPLE_RATE_HZ / 2000.0).round() as usize;
    let ref_z = mean(rep.records[rep.records.len() - 40 * period..].iter().map(|r| r.z_t_nm));
    let after = st.run_collect(&s, 0.05).unwrap();
    let transient = after
        .chunks(period)
        .map(|w| (mean(w.iter().map(|r| r.z_t_nm)) - ref_z).abs())
        .fold(0.0, f64::max);
    st.run(&s, 0.1, |_| {}).unwrap();
    let back = switchover(&mut st, &s, FeedbackMode::ConstantCurrent, 1.0).unwrap();
    let rec = st.run_collect(&s, 0.2).unwrap();
    let i = mean(tail(&rec, 0.5).iter().map(|r| r.i_na.abs()));
    let i0 = (sp0.exp() / st.config().junction.gain_v_per_na).abs();
    let rt = (i / i0 - 1.0).abs();
    let ok = transient < 0.02 && (window - 1.0).abs() < 1e-9 && captured == 100_000 && rt < 0.01;
    (
        ok,
        format!(
            "transient {transient:.2e} nm, capture {window:.3} s ({captured} ticks), round trip |i| {i:.4} vs {i0:.4} nA, set-point drift {:.1e}",
            (back.new_setpoint - sp0).abs()
        ),
    )
}

fn bytes<F: FnOnce(&mut Vec<u8>)>(f: F) -> Vec<u8> {
    let mut v = Vec::new();
    f(&mut v);
    v
}

fn determinism() -> Outcome {
    let run = || {
        let s = SurfaceMap::new(SurfaceSpec { initial_db_fraction: 0.03, seed: 11, ..SurfaceSpec::square(4.0) }).unwrap();
        let r = didz_scan(&s, 4.0, 24, 100.0);
        let mut s2 = flat(12.0);
        let mut st = litho_state(&s2);
        let line = vec![LatticePoint { row: 5.0, dimer: 6.0 }, LatticePoint { row: 5.0, dimer: 24.0 }];
        let mut job = LithoJob::new(LithoPattern::Polyline(line), LithoRegime::FieldEmission, 8.0, 4.0, 1000.0);
        job.seed = 5;
        let rep = run_lithography(&mut s2, &mut st, &job, &DoseModel::default()).unwrap();
        vec![
            bytes(|w| {
                io::write_pgm(w, &r.topography).unwrap();
            }),
            bytes(|w| io::write_image_csv(w, &r.topography).unwrap()),
            bytes(|w| io::write_image_csv(w, &r.current).unwrap()),
            bytes(|w| io::write_events_csv(w, &rep.events).unwrap()),
            bytes(|w| io::write_surface_csv(w, &s2).unwrap()),
        ]
    };
    let (a, b) = (run(), run());
    let same = a == b;
    (same, format!("{} files, {} bytes, identical {same}", a.len(), a.iter().map(Vec::len).sum::<usize>()))
}

#[test]
fn acceptance() {
    let criteria: [(&str, f64, fn() -> Outcome); 12] = [
        ("log-linearity", 1.0, log_linearity),
        ("derivative identity", 1.0, derivative_identity),
        ("lock-in correctness", 5.0, lock_in),
        ("demodulated gradient", 10.0, gradient_fidelity),
        ("closed-loop regulation", 10.0, regulation),
        ("sysid round trip", 120.0, sysid_round_trip),
        ("tuning region", 300.0, tuning),
        ("imaging geometry", 60.0, imaging_geometry),
        ("disturbance attenuation", 60.0, disturbance_attenuation),
        ("lithography", 120.0, lithography),
        ("switchover", 30.0, switchover_check),
        ("determinism", 60.0, determinism),
    ];
    let mut failed = Vec::new();
    for (k, (name, budget, check)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let (ok, detail) = check();
        let secs = t.elapsed().as_secs_f64();
        let pass = ok && secs < *budget;
        println!("{} {:>2} {name}: {detail} [{secs:.2} s / {budget} s]", if pass { "PASS" } else { "FAIL" }, k + 1);
        if !pass {
            failed.push(k + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
