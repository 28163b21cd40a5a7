//! Single-user runs checked against an event-driven queue that replays the
//! same arrival and service sample paths.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use doic_core::channel::{policy_rate, sample_channel};
use doic_core::engine::NoTrace;
use doic_core::rng::{stream, Purpose};
use doic_core::{run_with, FadingKind, Scenario, UserConfig};
use rand::Rng;
use rand_distr::{Distribution, Poisson};

#[derive(Debug, Clone, Copy, PartialEq)]
enum Event {
    /// Transmission opportunity at integer time `t` with `capacity` packets.
    Service {
        t: u64,
        capacity: usize,
    },
    Arrival {
        t: f64,
    },
}

impl Event {
    fn time(&self) -> f64 {
        match *self {
            Event::Service { t, .. } => t as f64,
            Event::Arrival { t } => t,
        }
    }

    /// At equal times the transmission happens first: a packet is only
    /// eligible once it arrived strictly before the slot starts.
    fn rank(&self) -> u8 {
        match self {
            Event::Service { .. } => 0,
            Event::Arrival { .. } => 1,
        }
    }
}

impl Eq for Event {}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        // Min-heap on (time, rank).
        other
            .time()
            .total_cmp(&self.time())
            .then_with(|| other.rank().cmp(&self.rank()))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Mean waiting time of packets arriving after `warmup`, from a plain FIFO
/// single-server queue driven by events.
fn event_driven_mean_delay(s: &Scenario, warmup: f64) -> f64 {
    let user = s.users[0];
    let profile = user.profile();
    let mut arrivals = stream(s.seed, 0, Purpose::Arrivals);
    let mut channel = stream(s.seed, 0, Purpose::Channel);
    let mut csi = stream(s.seed, 0, Purpose::CsiError);
    let poisson = Poisson::new(user.arrival_rate).unwrap();

    let mut heap = BinaryHeap::new();
    for t in 0..s.horizon_slots {
        let draw = sample_channel(&profile, &s.radio, &mut channel, &mut csi);
        let (_, rate) = policy_rate(&draw, &s.radio);
        heap.push(Event::Service {
            t,
            capacity: rate.floor() as usize,
        });
        let n = poisson.sample(&mut arrivals) as usize;
        for _ in 0..n {
            let u: f64 = arrivals.random();
            heap.push(Event::Arrival { t: t as f64 + u });
        }
    }

    let mut waiting: VecDeque<f64> = VecDeque::new();
    let (mut sum, mut count) = (0.0, 0u64);
    while let Some(ev) = heap.pop() {
        match ev {
            Event::Arrival { t } => waiting.push_back(t),
            Event::Service { t, capacity } => {
                for _ in 0..capacity {
                    let Some(a) = waiting.pop_front() else { break };
                    if a >= warmup {
                        sum += t as f64 - a;
                        count += 1;
                    }
                }
            }
        }
    }
    sum / count as f64
}

fn single_user(lambda: f64, mean_interference_gain: f64, horizon: u64) -> Scenario {
    let mut s = Scenario::table_one();
    let mut u: UserConfig = s.users[1];
    u.mean_interference_gain = mean_interference_gain;
    u.arrival_rate = lambda;
    u.fading = FadingKind::Exponential;
    s.users = vec![u];
    s.horizon_slots = horizon;
    s.options.service_rate_samples = 20_000;
    s
}

#[test]
fn engine_matches_event_driven_queue_with_nonbinding_interference() {
    let s = single_user(0.3, 1e-3, 1_000_000);
    let report = run_with(&s, None, &mut NoTrace).unwrap();
    let warmup = s.options.warmup_fraction * s.horizon_slots as f64;
    let oracle = event_driven_mean_delay(&s, warmup);
    let rel = (report.per_user_delay[0] - oracle).abs() / oracle;
    println!(
        "engine W = {:.5}, event-driven W = {oracle:.5}",
        report.per_user_delay[0]
    );
    assert!(rel < 0.03, "relative gap {rel}");
}

#[test]
fn engine_matches_event_driven_queue_under_binding_interference() {
    let s = single_user(0.8, 2.0, 300_000);
    let report = run_with(&s, None, &mut NoTrace).unwrap();
    let warmup = s.options.warmup_fraction * s.horizon_slots as f64;
    let oracle = event_driven_mean_delay(&s, warmup);
    let rel = (report.per_user_delay[0] - oracle).abs() / oracle;
    assert!(
        rel < 0.03,
        "engine {} vs oracle {oracle}",
        report.per_user_delay[0]
    );
}
