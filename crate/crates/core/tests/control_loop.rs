use stm_didz::control::{
    coarse_approach, switchover, ApproachConfig, LoopConfig, LoopRecord, LoopState,
};
use stm_didz::junction::{steady_state_gap, FeedbackMode};
use stm_didz::surface::{SurfaceMap, SurfaceSpec};
use stm_didz::Error;

fn flat(extent: f64) -> SurfaceMap {
    SurfaceMap::new(SurfaceSpec::square(extent).flat()).unwrap()
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

fn tail(r: &[LoopRecord], frac: f64) -> &[LoopRecord] {
    &r[(r.len() as f64 * (1.0 - frac)) as usize..]
}

#[test]
fn current_mode_holds_half_nanoamp() {
    let s = flat(5.0);
    let mut st = LoopState::new(
        LoopConfig::for_mode(FeedbackMode::ConstantCurrent),
        &s,
        2.5,
        2.5,
    )
    .unwrap();
    // start away from equilibrium
    st.set_setpoint((0.6f64).ln());
    st.run(&s, 0.05, |_| {}).unwrap();
    st.set_setpoint((0.5f64).ln());
    let rec = st.run_collect(&s, 0.3).unwrap();
    let end = tail(&rec, 0.3);
    let i = mean(end.iter().map(|r| r.i_na.abs()));
    assert!((i / 0.5 - 1.0).abs() < 0.01, "{i}");
    let e = mean(end.iter().map(|r| r.error));
    assert!(e.abs() < 1e-3, "{e}");
}

#[test]
fn didz_mode_holds_quarter_nanoamp_per_nm() {
    let s = flat(5.0);
    let cfg = LoopConfig::for_mode(FeedbackMode::ConstantDidz);
    let mut st = LoopState::new(cfg, &s, 2.5, 2.5).unwrap();
    let rec = st.run_collect(&s, 0.3).unwrap();
    let end = tail(&rec, 0.3);
    let g = mean(end.iter().map(|r| r.didz_na_per_nm));
    assert!((g / 0.25 - 1.0).abs() < 0.02, "{g}");
    let e = mean(end.iter().map(|r| r.error));
    assert!(e.abs() < 1e-3, "{e}");
}

#[test]
fn tip_oscillation_stays_below_tenth_nanometre() {
    let s = flat(5.0);
    let mut st = LoopState::new(
        LoopConfig::for_mode(FeedbackMode::ConstantDidz),
        &s,
        2.5,
        2.5,
    )
    .unwrap();
    let rec = st.run_collect(&s, 0.1).unwrap();
    let end = tail(&rec, 0.5);
    let (lo, hi) = end.iter().fold((f64::MAX, f64::MIN), |(lo, hi), r| {
        (lo.min(r.z_t_nm), hi.max(r.z_t_nm))
    });
    assert!((hi - lo) / 2.0 <= 0.1, "{}", (hi - lo) / 2.0);
    assert!(st.swing_nm() <= 0.1);
}

fn step_retrack(mode: FeedbackMode) {
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
    assert!((site.h - 0.136).abs() < 1e-12);
    assert!((gap - want).abs() < 0.005, "{mode:?}: {gap} vs {want}");
}

#[test]
fn step_disturbance_is_retracked_in_current_mode() {
    step_retrack(FeedbackMode::ConstantCurrent);
}

#[test]
fn step_disturbance_is_retracked_in_didz_mode() {
    step_retrack(FeedbackMode::ConstantDidz);
}

#[test]
fn approach_from_fifty_nanometres() {
    let s = flat(5.0);
    let (mut st, rep) = coarse_approach(
        LoopConfig::default(),
        &s,
        2.5,
        2.5,
        &ApproachConfig::default(),
    )
    .unwrap();
    assert!(rep.coarse_steps <= 6, "{rep:?}");
    assert_eq!(rep.coarse_steps, 5);
    let rec = st.run_collect(&s, 0.1).unwrap();
    let i = mean(tail(&rec, 0.3).iter().map(|r| r.i_na.abs()));
    assert!((i / 0.5 - 1.0).abs() < 0.01);
}

#[test]
fn approach_in_range_takes_no_coarse_steps() {
    let s = flat(5.0);
    let ac = ApproachConfig {
        start_gap_nm: 3.0,
        ..ApproachConfig::default()
    };
    let (_, rep) = coarse_approach(LoopConfig::default(), &s, 2.5, 2.5, &ac).unwrap();
    assert_eq!(rep.coarse_steps, 0);
}

#[test]
fn unreachable_threshold_fails_approach() {
    let s = flat(5.0);
    let ac = ApproachConfig {
        threshold_na: 1e9,
        ..ApproachConfig::default()
    };
    let e = coarse_approach(LoopConfig::default(), &s, 2.5, 2.5, &ac).unwrap_err();
    assert!(matches!(e, Error::ApproachFailure(_)), "{e}");
}

fn modulated_current_loop(s: &SurfaceMap) -> LoopState {
    let mut cfg = LoopConfig::for_mode(FeedbackMode::ConstantCurrent);
    cfg.z_mod.enabled = true;
    LoopState::new(cfg, s, 2.5, 2.5).unwrap()
}

#[test]
fn switchover_is_bumpless() {
    let s = flat(5.0);
    let mut st = modulated_current_loop(&s);
    st.run(&s, 0.1, |_| {}).unwrap();
    let rep = switchover(&mut st, &s, FeedbackMode::ConstantDidz, 1.0).unwrap();
    assert_eq!(st.mode(), FeedbackMode::ConstantDidz);
    let captured = rep.records.iter().filter(|r| r.capture).count();
    assert_eq!(captured, 100_000);
    assert!(((rep.capture_end_s - rep.capture_start_s) - 1.0).abs() < 1e-9);
    let z0 = rep.records.last().unwrap().z_t_nm;
    let after = st.run_collect(&s, 0.05).unwrap();
    let dev = after
        .iter()
        .map(|r| (r.z_t_nm - z0).abs())
        .fold(0.0, f64::max);
    // the dither alone moves the tip by the swing; measure the envelope
    assert!(dev < 0.02 + st.swing_nm(), "{dev}");
    let zc = |rs: &[LoopRecord]| mean(rs.iter().map(|r| r.z_t_nm));
    let before_mean = zc(&rep.records[rep.records.len() - 2000..]);
    for w in after.chunks(50) {
        assert!((zc(w) - before_mean).abs() < 0.02);
    }
}

#[test]
fn reverse_switchover_restores_current() {
    let s = flat(5.0);
    let mut st = modulated_current_loop(&s);
    st.run(&s, 0.1, |_| {}).unwrap();
    let sp0 = st.setpoint();
    switchover(&mut st, &s, FeedbackMode::ConstantDidz, 1.0).unwrap();
    st.run(&s, 0.1, |_| {}).unwrap();
    let rep = switchover(&mut st, &s, FeedbackMode::ConstantCurrent, 1.0).unwrap();
    assert!((rep.new_setpoint - sp0).abs() < 0.01);
    let rec = st.run_collect(&s, 0.2).unwrap();
    let i = mean(tail(&rec, 0.5).iter().map(|r| r.i_na.abs()));
    assert!((i / 0.5 - 1.0).abs() < 0.01, "{i}");
}

#[test]
fn lower_didz_setpoint_retracts_tip() {
    let s = flat(5.0);
    let mut st = LoopState::new(
        LoopConfig::for_mode(FeedbackMode::ConstantDidz),
        &s,
        2.5,
        2.5,
    )
    .unwrap();
    let rec = st.run_collect(&s, 0.1).unwrap();
    let gap0 = mean(tail(&rec, 0.3).iter().map(|r| r.delta_nm));
    st.set_setpoint(st.setpoint() - 0.5);
    let rec = st.run_collect(&s, 0.2).unwrap();
    let gap1 = mean(tail(&rec, 0.3).iter().map(|r| r.delta_nm));
    assert!(gap1 > gap0 + 0.02, "{gap0} -> {gap1}");
}

#[test]
fn switch_refused_when_modulation_off() {
    let s = flat(5.0);
    let mut st = LoopState::new(LoopConfig::default(), &s, 2.5, 2.5).unwrap();
    assert!(matches!(
        switchover(&mut st, &s, FeedbackMode::ConstantDidz, 1.0),
        Err(Error::SwitchoverRefused(_))
    ));
}

#[test]
fn runaway_gain_crashes_the_tip() {
    let s = flat(5.0);
    let mut cfg = LoopConfig::default();
    cfg.ki = 5e6;
    let mut st = LoopState::new(cfg, &s, 2.5, 2.5).unwrap();
    st.set_setpoint(st.setpoint() + 0.5);
    let e = st.run(&s, 0.2, |_| {}).unwrap_err();
    assert!(e.is_crash(), "{e}");
    assert!(st.last().delta_nm < 0.0);
}

#[test]
fn identical_runs_are_bit_identical() {
    let s = flat(5.0);
    let run = || {
        let mut st = LoopState::new(
            LoopConfig::for_mode(FeedbackMode::ConstantDidz),
            &s,
            2.5,
            2.5,
        )
        .unwrap();
        st.run_collect(&s, 0.02).unwrap()
    };
    assert_eq!(run(), run());
}
