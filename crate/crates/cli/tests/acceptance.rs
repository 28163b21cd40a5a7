//! End-to-end acceptance checks on the reference scenario.
//!
//! Every check writes one `criterion N: PASS|FAIL ...` line straight to
//! stderr, bypassing the test harness's output capture, then asserts.
//! The long sweeps are shared between checks and run once.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};
use std::fs;
use std::io::Write;
use std::sync::OnceLock;

use doic_cli::preset::{CSI_ERROR, DELAY_TOLERANCE, LAMBDA_GRID, UNCONSTRAINED_BOUND, V_GRID};
use doic_cli::{run_preset, ConfigFile, ExperimentPreset, RunSettings, SweepSpec};
use doic_core::channel::{policy_rate, sample_channel};
use doic_core::doic::{update_auxiliary, AuxiliarySolver};
use doic_core::engine::{NoTrace, DEFAULT_HORIZON};
use doic_core::metrics::curve_from_sweep;
use doic_core::rng::{stream, Purpose};
use doic_core::{
    run_with, sweep, ControlParams, CostFunction, CurvePoint, Scenario, SweepAxis, SweepPoint,
    VirtualQueue,
};
use rand::Rng;
use rand_distr::{Distribution, Poisson};

const REPLICATES: usize = 5;

fn report(criterion: u32, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(
        std::io::stderr(),
        "criterion {criterion}: {verdict} {detail}"
    );
}

fn workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

struct Sweep {
    points: Vec<SweepPoint>,
    curve: Vec<CurvePoint>,
}

fn run_sweep(base: &Scenario, axis: SweepAxis, values: &[f64]) -> Sweep {
    let points = sweep(base, axis, values, REPLICATES, workers()).expect("sweep setup");
    for p in &points {
        if let Err(e) = &p.outcome {
            panic!("x = {}, replicate {}: {e}", p.x, p.replicate);
        }
    }
    let curve = curve_from_sweep(&points, &base.costs());
    Sweep { points, curve }
}

fn constrained_base() -> Scenario {
    let mut s = Scenario::table_one();
    s.horizon_slots = DEFAULT_HORIZON;
    s
}

fn constrained() -> &'static Sweep {
    static S: OnceLock<Sweep> = OnceLock::new();
    S.get_or_init(|| run_sweep(&constrained_base(), SweepAxis::Lambda, &LAMBDA_GRID))
}

fn unconstrained() -> &'static Sweep {
    static S: OnceLock<Sweep> = OnceLock::new();
    S.get_or_init(|| {
        let mut s = constrained_base();
        s.set_delay_bounds(&[UNCONSTRAINED_BOUND, UNCONSTRAINED_BOUND]);
        run_sweep(&s, SweepAxis::Lambda, &LAMBDA_GRID)
    })
}

fn imperfect() -> &'static Sweep {
    static S: OnceLock<Sweep> = OnceLock::new();
    S.get_or_init(|| {
        run_sweep(
            &constrained_base().with_imperfect_csi(CSI_ERROR),
            SweepAxis::Lambda,
            &LAMBDA_GRID,
        )
    })
}

fn v_sweep() -> &'static Sweep {
    static S: OnceLock<Sweep> = OnceLock::new();
    S.get_or_init(|| {
        let mut s = constrained_base();
        s.set_arrival_rate(0.5);
        run_sweep(&s, SweepAxis::V, &V_GRID)
    })
}

fn delay_limit(s: &Scenario) -> f64 {
    s.users[0].delay_bound * (1.0 + DELAY_TOLERANCE)
}

#[test]
fn criterion_01_interference_never_exceeds_cap() {
    let cap = constrained_base().radio.interference_cap;
    let mut detail = String::new();
    let mut pass = true;
    for (mode, s) in [("perfect", constrained()), ("imperfect", imperfect())] {
        let worst = s
            .points
            .iter()
            .map(|p| p.outcome.as_ref().unwrap().max_interference_seen)
            .fold(0.0, f64::max);
        pass &= worst <= cap;
        detail.push_str(&format!("{mode}: max interference {worst} (cap {cap}); "));
    }
    report(1, pass, &detail);
    assert!(pass, "{detail}");
}

#[test]
fn criterion_02_tight_bound_is_enforced() {
    let limit = delay_limit(&constrained_base());
    let worst = constrained()
        .curve
        .iter()
        .map(|p| (p.x, p.per_user_delay[0]))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    let pass = constrained()
        .curve
        .iter()
        .all(|p| p.per_user_delay[0] <= limit);
    let detail = format!(
        "largest mean W1 = {:.4} at lambda = {} (limit {limit:.4})",
        worst.1, worst.0
    );
    report(2, pass, &detail);
    assert!(pass, "{detail}");
}

#[test]
fn criterion_03_unconstrained_gap_favours_user_two() {
    let mut failures = Vec::new();
    for p in &unconstrained().curve {
        let gap = p.per_user_delay[0] - p.per_user_delay[1];
        let ci = p.ci_halfwidth[0] + p.ci_halfwidth[1];
        if gap <= ci {
            failures.push(format!("lambda = {}: gap {gap:.4} <= ci {ci:.4}", p.x));
        }
    }
    let min_gap = unconstrained()
        .curve
        .iter()
        .map(|p| p.per_user_delay[0] - p.per_user_delay[1])
        .fold(f64::INFINITY, f64::min);
    let pass = failures.is_empty();
    let detail = if pass {
        format!("W1 > W2 at every lambda, smallest gap {min_gap:.4}")
    } else {
        failures.join("; ")
    };
    report(3, pass, &detail);
    assert!(pass, "{detail}");
}

#[test]
fn criterion_04_constraint_costs_at_high_load() {
    let mut lines = Vec::new();
    let mut pass = true;
    for (c, u) in constrained().curve.iter().zip(&unconstrained().curve) {
        if c.x < 0.6 - 1e-9 {
            continue;
        }
        let slack = c.sum_cost_ci + u.sum_cost_ci;
        let ok = c.sum_cost >= u.sum_cost - slack;
        pass &= ok;
        lines.push(format!(
            "lambda = {}: constrained {:.4} vs unconstrained {:.4} (ci {slack:.4}){}",
            c.x,
            c.sum_cost,
            u.sum_cost,
            if ok { "" } else { " <-" }
        ));
    }
    let detail = lines.join("; ");
    report(4, pass, &detail);
    assert!(pass, "{detail}");
}

#[test]
fn criterion_05_constrained_virtual_queues_are_mean_rate_stable() {
    let limit = delay_limit(&constrained_base());
    let mut checked = 0;
    let mut failures = Vec::new();
    for p in &constrained().points {
        let r = p.outcome.as_ref().unwrap();
        if r.per_user_delay[0] > limit {
            continue;
        }
        checked += 1;
        for (i, d) in r.stability.iter().enumerate() {
            if !d.stable {
                failures.push(format!(
                    "lambda = {} rep {} user {}: Y/K = {:.3e}, scale {:.3e}, slope {:.3e}",
                    p.x,
                    p.replicate,
                    i + 1,
                    d.terminal_ratio,
                    d.y_scale,
                    d.final_quarter_slope
                ));
            }
        }
    }
    let pass = failures.is_empty() && checked > 0;
    let detail = if failures.is_empty() {
        format!("{checked} runs stable")
    } else {
        failures.join("; ")
    };
    report(5, pass, &detail);
    assert!(pass, "{detail}");
}

#[test]
fn criterion_06_sum_cost_does_not_grow_with_v() {
    let curve = &v_sweep().curve;
    let mut lines: Vec<String> = curve
        .iter()
        .map(|p| format!("V = {}: {:.4}", p.x, p.sum_cost))
        .collect();
    let mut pass = true;
    for w in curve.windows(2) {
        let slack = w[0].sum_cost_ci + w[1].sum_cost_ci;
        if w[1].sum_cost > w[0].sum_cost + slack {
            pass = false;
            lines.push(format!(
                "rise {} -> {} exceeds ci {slack:.4}",
                w[0].x, w[1].x
            ));
        }
    }
    let last = curve.last().unwrap();
    let base = constrained_base();
    let cap_ok = last.max_interference <= base.radio.interference_cap;
    let bound_ok = last.per_user_delay[0] <= delay_limit(&base);
    if !(cap_ok && bound_ok) {
        pass = false;
        lines.push(format!(
            "largest V: W1 = {:.4}, max interference {}",
            last.per_user_delay[0], last.max_interference
        ));
    }
    let detail = lines.join("; ");
    report(6, pass, &detail);
    assert!(pass, "{detail}");
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Event {
    Service { t: u64, capacity: usize },
    Arrival { t: f64 },
}

impl Event {
    fn key(&self) -> (f64, u8) {
        match *self {
            Event::Service { t, .. } => (t as f64, 0),
            Event::Arrival { t } => (t, 1),
        }
    }
}

impl Eq for Event {}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        let (a, b) = (self.key(), other.key());
        b.0.total_cmp(&a.0).then(b.1.cmp(&a.1))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[test]
fn criterion_07_single_user_matches_event_driven_queue() {
    let mut s = Scenario::table_one();
    let mut u = s.users[1];
    u.mean_interference_gain = 1e-3;
    u.arrival_rate = 0.3;
    s.users = vec![u];
    s.horizon_slots = 1_000_000;
    let engine = run_with(&s, None, &mut NoTrace).unwrap().per_user_delay[0];

    let profile = u.profile();
    let mut arrivals = stream(s.seed, 0, Purpose::Arrivals);
    let mut channel = stream(s.seed, 0, Purpose::Channel);
    let mut csi = stream(s.seed, 0, Purpose::CsiError);
    let poisson = Poisson::new(u.arrival_rate).unwrap();
    let mut heap = BinaryHeap::new();
    for t in 0..s.horizon_slots {
        let (_, rate) = policy_rate(
            &sample_channel(&profile, &s.radio, &mut channel, &mut csi),
            &s.radio,
        );
        heap.push(Event::Service {
            t,
            capacity: rate.floor() as usize,
        });
        for _ in 0..poisson.sample(&mut arrivals) as usize {
            heap.push(Event::Arrival {
                t: t as f64 + arrivals.random::<f64>(),
            });
        }
    }
    let warmup = s.options.warmup_fraction * s.horizon_slots as f64;
    let mut queue = VecDeque::new();
    let (mut sum, mut n) = (0.0, 0u64);
    while let Some(ev) = heap.pop() {
        match ev {
            Event::Arrival { t } => queue.push_back(t),
            Event::Service { t, capacity } => {
                for a in queue.drain(..capacity.min(queue.len())) {
                    if a >= warmup {
                        sum += t as f64 - a;
                        n += 1;
                    }
                }
            }
        }
    }
    let oracle = sum / n as f64;
    let rel = (engine - oracle).abs() / oracle;
    let pass = rel <= 0.03;
    let detail =
        format!("engine W = {engine:.5}, event-driven W = {oracle:.5}, rel diff {rel:.2e}");
    report(7, pass, &detail);
    assert!(pass, "{detail}");
}

#[test]
fn criterion_08_golden_section_matches_closed_form() {
    const EPS: f64 = 1e-2;
    let mut rng = stream(2024, 0, Purpose::Auxiliary);
    let mut worst_r = 0.0f64;
    let mut worst_grid = f64::NEG_INFINITY;
    for _ in 0..1_000 {
        let y = rng.random_range(0.0..5_000.0);
        let lambda = rng.random_range(0.05..1.0);
        let v = 10f64.powf(rng.random_range(1.0..4.0));
        let d = rng.random_range(0.5..5.0);
        let mut vq = VirtualQueue::new(d, lambda, CostFunction::QuadraticHalf);
        vq.y = y;
        let params = ControlParams {
            v,
            tolerance: EPS,
            solver: AuxiliarySolver::GoldenSection,
        };
        let r = update_auxiliary(&vq, &params).r;
        let closed = (y * lambda / v).clamp(0.0, d);
        worst_r = worst_r.max((r - closed).abs());

        let objective = |x: f64| v * CostFunction::QuadraticHalf.eval(x) - y * lambda * x;
        let grid_best = (0..100)
            .map(|k| objective(d * k as f64 / 99.0))
            .fold(f64::INFINITY, f64::min);
        worst_grid = worst_grid.max(objective(r) - grid_best);
    }
    let pass = worst_r <= EPS && worst_grid <= EPS;
    let detail =
        format!("max |r - closed form| = {worst_r:.2e}, max excess over grid = {worst_grid:.2e}");
    report(8, pass, &detail);
    assert!(pass, "{detail}");
}

#[test]
fn criterion_09_presets_are_byte_reproducible() {
    let config = ConfigFile {
        sweep: Some(SweepSpec {
            axis: SweepAxis::Lambda,
            values: vec![0.3, 0.9],
            replicates: 2,
        }),
        ..ConfigFile::from_scenario(&Scenario::table_one())
    };
    let presets = [
        ExperimentPreset::Fig2,
        ExperimentPreset::Fig3,
        ExperimentPreset::Vsweep,
        ExperimentPreset::Csi,
        ExperimentPreset::Custom,
    ];
    let mut mismatches = Vec::new();
    let mut compared = 0;
    for preset in presets {
        let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
        for d in &dirs {
            let mut settings = RunSettings::new(d.path());
            settings.horizon = Some(20_000);
            settings.replicates = Some(2);
            settings.workers = workers();
            settings.config = Some(config.clone());
            let outcome = run_preset(preset, settings).unwrap();
            assert!(
                outcome.hard_failures.is_empty(),
                "{preset:?}: {:?}",
                outcome.hard_failures
            );
        }
        let mut names: Vec<_> = fs::read_dir(dirs[0].path())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .filter(|n| n.to_string_lossy().ends_with(".csv"))
            .collect();
        names.sort();
        assert!(!names.is_empty());
        for name in names {
            let a = fs::read(dirs[0].path().join(&name)).unwrap();
            let b = fs::read(dirs[1].path().join(&name)).unwrap();
            compared += 1;
            if a != b {
                mismatches.push(format!("{preset:?}/{}", name.to_string_lossy()));
            }
        }
    }
    let pass = mismatches.is_empty();
    let detail = if pass {
        format!("{compared} CSVs identical across reruns")
    } else {
        format!("differing: {}", mismatches.join(", "))
    };
    report(9, pass, &detail);
    assert!(pass, "{detail}");
}

#[test]
fn criterion_10_frame_length_is_finite_and_logged() {
    let point = constrained()
        .points
        .iter()
        .find(|p| (p.x - 0.2).abs() < 1e-9 && p.replicate == 0)
        .unwrap();
    let r = point.outcome.as_ref().unwrap();
    let empirical = r.mean_frame_length.unwrap_or(f64::NAN);
    let predicted = r.predicted_frame_length.unwrap_or(f64::NAN);
    let pass = empirical.is_finite() && empirical > 0.0;
    let detail = format!(
        "lambda = 0.2: mean frame {empirical:.4} slots over {} frames, formula {predicted:.4} (ratio {:.3})",
        r.frames_closed,
        empirical / predicted
    );
    report(10, pass, &detail);
    assert!(pass, "{detail}");
}
