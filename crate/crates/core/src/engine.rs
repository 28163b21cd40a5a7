//! Slot-level simulation driver and parameter sweeps.
//!
//! Each slot runs, in order: channel draws for every user, scheduling from
//! the frozen priority list, power allocation and service for the scheduled
//! user, arrivals, and frame bookkeeping. When a frame closes the virtual
//! queues, auxiliary targets and priority list are updated.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{
    allocate_power, estimate_service_rate, policy_rate, sample_channel, ChannelDraw, FadingKind,
    FadingProfile, RadioParams, DEFAULT_DIRECT_GAIN_FLOOR,
};
use crate::doic::{
    auxiliary_target, build_priority_list, expected_frame_length, lyapunov_snapshot, schedule_slot,
    ControlParams, PriorityList, VirtualQueue,
};
use crate::error::{ensure_positive, Error, Result};
use crate::metrics::CostFunction;
use crate::queueing::{
    ArrivalProcess, ClosedFrame, FrameState, Packet, ServedPacket, ServiceModel, UserQueue,
};
use crate::rng::{replicate_seed, stream, Purpose, SimRng};

/// Horizon used when none is given.
pub const DEFAULT_HORIZON: u64 = 2_000_000;
/// Smallest horizon accepted for reported runs.
pub const MIN_REPORTED_HORIZON: u64 = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CsiMode {
    #[default]
    Perfect,
    Imperfect,
}

/// What happens when the top user's rate rounds to zero packets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroRatePolicy {
    /// The slot stays with the top user and carries nothing.
    #[default]
    Hold,
    /// The slot passes down the list to the first user that can send.
    SkipToNext,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServiceRateMode {
    /// μ estimated once per scenario by Monte Carlo.
    #[default]
    Offline,
    /// μ re-estimated at every frame boundary from the draws seen so far.
    PerFrame,
}

/// Knobs that change how the model is simulated rather than the system itself.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimOptions {
    /// Packets arriving in this leading fraction of the horizon are left out
    /// of reported delays.
    pub warmup_fraction: f64,
    /// Busy periods longer than this are closed by force.
    pub max_frame_slots: u64,
    pub service_model: ServiceModel,
    pub zero_rate_policy: ZeroRatePolicy,
    pub service_rate_mode: ServiceRateMode,
    pub service_rate_samples: usize,
    /// Terminal `Y/K` must fall below this fraction of `V·d/λ` to count as stable.
    pub stability_threshold: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            warmup_fraction: 0.1,
            max_frame_slots: 100_000,
            service_model: ServiceModel::Floor,
            zero_rate_policy: ZeroRatePolicy::Hold,
            service_rate_mode: ServiceRateMode::Offline,
            service_rate_samples: 1_000_000,
            stability_threshold: 1e-2,
        }
    }
}

impl SimOptions {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::invalid("warmup_fraction", "in [0, 1)"));
        }
        if self.max_frame_slots == 0 {
            return Err(Error::invalid("max_frame_slots", "positive"));
        }
        if self.service_rate_samples < crate::channel::MIN_SERVICE_RATE_SAMPLES {
            return Err(Error::invalid("service_rate_samples", "at least 10000"));
        }
        ensure_positive("stability_threshold", self.stability_threshold)
    }
}

fn default_floor() -> f64 {
    DEFAULT_DIRECT_GAIN_FLOOR
}

/// Everything that describes one user.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserConfig {
    pub mean_direct_gain: f64,
    pub mean_interference_gain: f64,
    #[serde(default = "default_floor")]
    pub direct_gain_floor: f64,
    #[serde(default)]
    pub fading: FadingKind,
    /// Packets per slot.
    pub arrival_rate: f64,
    /// Average-delay bound in slots.
    pub delay_bound: f64,
    #[serde(default)]
    pub cost: CostFunction,
}

impl UserConfig {
    pub fn new(profile: FadingProfile, arrival_rate: f64, delay_bound: f64) -> Self {
        Self {
            mean_direct_gain: profile.mean_direct_gain,
            mean_interference_gain: profile.mean_interference_gain,
            direct_gain_floor: profile.direct_gain_floor,
            fading: profile.kind,
            arrival_rate,
            delay_bound,
            cost: CostFunction::QuadraticHalf,
        }
    }

    pub fn profile(&self) -> FadingProfile {
        FadingProfile {
            mean_direct_gain: self.mean_direct_gain,
            mean_interference_gain: self.mean_interference_gain,
            direct_gain_floor: self.direct_gain_floor,
            kind: self.fading,
        }
    }

    fn validate(&self) -> Result<()> {
        self.profile().validate()?;
        if !(self.arrival_rate >= 0.0 && self.arrival_rate.is_finite()) {
            return Err(Error::invalid("arrival_rate", "non-negative"));
        }
        ensure_positive("delay_bound", self.delay_bound)?;
        self.cost.validate(self.delay_bound)
    }
}

/// A complete, runnable experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub users: Vec<UserConfig>,
    pub radio: RadioParams,
    pub control: ControlParams,
    pub horizon_slots: u64,
    pub seed: u64,
    pub mode: CsiMode,
    pub options: SimOptions,
}

impl Scenario {
    /// Two users with the reference fading statistics: γ̄ = (1, 1),
    /// ḡ = (4, 2), I = 5, P_max = 10, V = 10³, d = (1.25, 3), λ = 0.5.
    pub fn table_one() -> Self {
        let user = |mean_g: f64, d: f64| UserConfig {
            mean_direct_gain: 1.0,
            mean_interference_gain: mean_g,
            direct_gain_floor: DEFAULT_DIRECT_GAIN_FLOOR,
            fading: FadingKind::Exponential,
            arrival_rate: 0.5,
            delay_bound: d,
            cost: CostFunction::QuadraticHalf,
        };
        Self {
            users: vec![user(4.0, 1.25), user(2.0, 3.0)],
            radio: RadioParams::default(),
            control: ControlParams::default(),
            horizon_slots: DEFAULT_HORIZON,
            seed: 1,
            mode: CsiMode::Perfect,
            options: SimOptions::default(),
        }
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn set_arrival_rate(&mut self, lambda: f64) {
        for u in &mut self.users {
            u.arrival_rate = lambda;
        }
    }

    pub fn set_delay_bounds(&mut self, bounds: &[f64]) {
        for (u, d) in self.users.iter_mut().zip(bounds) {
            u.delay_bound = *d;
        }
    }

    /// Switches to imperfect CSI with relative error `eps` and backoff `1 + eps`.
    pub fn with_imperfect_csi(mut self, eps: f64) -> Self {
        self.mode = CsiMode::Imperfect;
        self.radio = self.radio.with_csi_error(eps);
        self
    }

    pub fn costs(&self) -> Vec<CostFunction> {
        self.users.iter().map(|u| u.cost).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.users.is_empty() {
            return Err(Error::invalid("users", "non-empty"));
        }
        for u in &self.users {
            u.validate()?;
        }
        self.radio.validate()?;
        self.control.validate()?;
        self.options.validate()?;
        if self.horizon_slots == 0 {
            return Err(Error::invalid("horizon_slots", "positive"));
        }
        if self.mode == CsiMode::Perfect && self.radio.csi_error_bound != 0.0 {
            return Err(Error::invalid("csi_error_bound", "0 in perfect CSI mode"));
        }
        Ok(())
    }
}

/// Per-user stability diagnostic for the virtual queue.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StabilityDiagnostic {
    /// `Y(K) / K` after the last closed frame.
    pub terminal_ratio: f64,
    /// `V·d/λ`: the debt at which the auxiliary target reaches the bound.
    pub y_scale: f64,
    /// Least-squares slope of `Y(k)/k` against `k` over the last quarter of frames.
    pub final_quarter_slope: f64,
    pub stable: bool,
}

/// Outcome of one simulation run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReport {
    /// Mean delay in slots; 0 for a user with no reported packets.
    pub per_user_delay: Vec<f64>,
    pub per_user_cost: Vec<f64>,
    pub sum_cost: f64,
    pub served_packets: Vec<u64>,
    pub arrived_packets: Vec<u64>,
    /// Packets still buffered at the horizon; not part of any delay average.
    pub residual_queue: Vec<u64>,
    pub max_interference_seen: f64,
    pub delay_bound_violations: Vec<bool>,
    pub service_rates: Vec<f64>,
    pub frames_closed: u64,
    pub forced_closes: u64,
    pub mean_frame_length: Option<f64>,
    /// Mean frame length predicted from the arrival and service rates, when
    /// the load is inside the region where the formula applies.
    pub predicted_frame_length: Option<f64>,
    /// Mean over closed frames of `drift + penalty`.
    pub mean_drift_plus_penalty: Option<f64>,
    pub y_terminal: Vec<f64>,
    pub y_over_k_terminal: Vec<f64>,
    pub stability: Vec<StabilityDiagnostic>,
    pub slots_simulated: u64,
    pub seed: u64,
}

/// Per-slot record passed to a [`TraceSink`].
#[derive(Debug, Clone, Copy)]
pub struct SlotRecord<'a> {
    pub slot: u64,
    pub frame: u64,
    /// Buffer lengths at the start of the slot.
    pub queue_before: &'a [usize],
    pub arrivals: &'a [usize],
    pub scheduled: Option<usize>,
    pub served: usize,
    pub power: f64,
    pub interference: f64,
}

/// Per-frame control record.
#[derive(Debug, Clone)]
pub struct FrameRecord<'a> {
    pub frame: &'a ClosedFrame,
    /// Priority list in force during the frame.
    pub priority: &'a PriorityList,
    /// Virtual queues after the update.
    pub y: &'a [f64],
    /// Auxiliary targets for the next frame.
    pub r: &'a [f64],
    pub lyapunov: f64,
    pub drift: f64,
    pub penalty: f64,
}

/// Observer of a run. All methods default to no-ops.
pub trait TraceSink {
    fn on_slot(&mut self, _rec: &SlotRecord<'_>) {}
    fn on_packet(&mut self, _user: usize, _packet: &ServedPacket) {}
    fn on_frame(&mut self, _rec: &FrameRecord<'_>) {}
}

/// Sink that records nothing.
pub struct NoTrace;
impl TraceSink for NoTrace {}

/// Offline μ for every user, from the `ServiceRate` streams of `seed`.
pub fn service_rates(scenario: &Scenario, seed: u64) -> Result<Vec<f64>> {
    scenario
        .users
        .iter()
        .enumerate()
        .map(|(i, u)| {
            let mut rng = stream(seed, i, Purpose::ServiceRate);
            estimate_service_rate(
                &u.profile(),
                &scenario.radio,
                scenario.options.service_rate_samples,
                &mut rng,
            )
        })
        .collect()
}

pub fn run(scenario: &Scenario) -> Result<SimReport> {
    run_with(scenario, None, &mut NoTrace)
}

/// Runs `scenario`, optionally with precomputed service rates, reporting to `sink`.
pub fn run_with<S: TraceSink>(
    scenario: &Scenario,
    rates: Option<&[f64]>,
    sink: &mut S,
) -> Result<SimReport> {
    scenario.validate()?;
    let mu = match rates {
        Some(r) if r.len() == scenario.n_users() => r.to_vec(),
        Some(_) => return Err(Error::invalid("service_rates", "one per user")),
        None => service_rates(scenario, scenario.seed)?,
    };
    Simulation::new(scenario, mu)?.run(sink)
}

/// Thinned `(k, Y(k))` history with a bounded footprint: whenever the buffer
/// fills, every other sample is dropped and the stride doubles.
#[derive(Debug, Clone)]
struct FrameHistory {
    stride: u64,
    samples: Vec<(u64, Vec<f64>)>,
}

const HISTORY_CAP: usize = 4096;

impl FrameHistory {
    fn new() -> Self {
        Self {
            stride: 1,
            samples: Vec::new(),
        }
    }

    fn record(&mut self, k: u64, y: &[f64]) {
        if k % self.stride != 0 {
            return;
        }
        self.samples.push((k, y.to_vec()));
        if self.samples.len() >= HISTORY_CAP {
            self.stride *= 2;
            let stride = self.stride;
            self.samples.retain(|(k, _)| k % stride == 0);
        }
    }

    /// Slope of `Y_i(k)/k` over samples with `k ≥ 0.75·K`.
    fn final_quarter_slope(&self, user: usize, total_frames: u64) -> f64 {
        let cutoff = total_frames as f64 * 0.75;
        let pts: Vec<(f64, f64)> = self
            .samples
            .iter()
            .filter(|(k, _)| *k > 0 && *k as f64 >= cutoff)
            .map(|(k, y)| (*k as f64, y[user] / *k as f64))
            .collect();
        least_squares_slope(&pts)
    }
}

pub(crate) fn least_squares_slope(pts: &[(f64, f64)]) -> f64 {
    if pts.len() < 2 {
        return 0.0;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return 0.0;
    }
    pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx
}

struct UserState {
    config: UserConfig,
    profile: FadingProfile,
    arrivals: ArrivalProcess,
    queue: UserQueue,
    vq: VirtualQueue,
    arrival_rng: SimRng,
    channel_rng: SimRng,
    csi_rng: SimRng,
    inv_rate_sum: f64,
    rate_samples: u64,
}

struct Simulation<'a> {
    scenario: &'a Scenario,
    users: Vec<UserState>,
    mu: Vec<f64>,
    frame: FrameState,
    list: PriorityList,
    history: FrameHistory,
    max_interference: f64,
    frames_closed: u64,
    forced_closes: u64,
    closed_slots: u64,
    dpp_sum: f64,
}

impl<'a> Simulation<'a> {
    fn new(scenario: &'a Scenario, mu: Vec<f64>) -> Result<Self> {
        let warmup_until = scenario.options.warmup_fraction * scenario.horizon_slots as f64;
        let seed = scenario.seed;
        let users = scenario
            .users
            .iter()
            .enumerate()
            .map(|(i, u)| {
                Ok(UserState {
                    config: *u,
                    profile: u.profile(),
                    arrivals: ArrivalProcess::new(u.arrival_rate)?,
                    queue: UserQueue::with_warmup(warmup_until),
                    vq: VirtualQueue::new(u.delay_bound, u.arrival_rate, u.cost),
                    arrival_rng: stream(seed, i, Purpose::Arrivals),
                    channel_rng: stream(seed, i, Purpose::Channel),
                    csi_rng: stream(seed, i, Purpose::CsiError),
                    inv_rate_sum: 0.0,
                    rate_samples: 0,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let y: Vec<f64> = users.iter().map(|u| u.vq.y).collect();
        let list = build_priority_list(&y, &mu, 0);
        Ok(Self {
            scenario,
            users,
            mu,
            frame: FrameState::new(),
            list,
            history: FrameHistory::new(),
            max_interference: 0.0,
            frames_closed: 0,
            forced_closes: 0,
            closed_slots: 0,
            dpp_sum: 0.0,
        })
    }

    fn run<S: TraceSink>(mut self, sink: &mut S) -> Result<SimReport> {
        let n = self.users.len();
        let radio = self.scenario.radio;
        let opts = self.scenario.options;
        let cap = radio.interference_cap;
        let per_frame_mu = opts.service_rate_mode == ServiceRateMode::PerFrame;

        let mut draws: Vec<ChannelDraw> = Vec::with_capacity(n);
        let mut lens = vec![0usize; n];
        let mut arrivals = vec![0usize; n];
        let mut served: Vec<ServedPacket> = Vec::new();
        let mut incoming: Vec<Packet> = Vec::new();

        for t in 0..self.scenario.horizon_slots {
            draws.clear();
            for u in &mut self.users {
                let d = sample_channel(&u.profile, &radio, &mut u.channel_rng, &mut u.csi_rng);
                if per_frame_mu {
                    let (_, rate) = policy_rate(&d, &radio);
                    u.inv_rate_sum += 1.0 / rate;
                    u.rate_samples += 1;
                }
                draws.push(d);
            }
            for (len, u) in lens.iter_mut().zip(&self.users) {
                *len = u.queue.len();
            }

            let mut scheduled = schedule_slot(&self.list, &lens);
            let mut rate = 0.0;
            let mut power = 0.0;
            if let Some(top) = scheduled {
                (power, rate) = policy_rate(&draws[top], &radio);
                if opts.zero_rate_policy == ZeroRatePolicy::SkipToNext
                    && self.users[top]
                        .queue
                        .slot_capacity(rate, opts.service_model)
                        == 0
                {
                    let alt = self
                        .list
                        .order
                        .iter()
                        .copied()
                        .filter(|&i| lens[i] > 0)
                        .find(|&i| {
                            let (_, r) = policy_rate(&draws[i], &radio);
                            self.users[i].queue.slot_capacity(r, opts.service_model) > 0
                        });
                    if let Some(i) = alt {
                        scheduled = Some(i);
                        (power, rate) = policy_rate(&draws[i], &radio);
                    }
                }
            }

            let mut served_count = 0;
            let mut interference = 0.0;
            if let Some(i) = scheduled {
                debug_assert_eq!(
                    power,
                    allocate_power(draws[i].estimated_interference_gain, &radio)
                );
                interference = power * draws[i].interference_gain;
                if interference > cap {
                    return Err(Error::InvariantViolated {
                        slot: t,
                        detail: format!("user {i} interference {interference} exceeds cap {cap}"),
                    });
                }
                self.max_interference = self.max_interference.max(interference);
                served.clear();
                served_count = self.users[i].queue.serve_slot(
                    rate,
                    opts.service_model,
                    t,
                    self.frame.frame_index,
                    &mut served,
                );
                for p in &served {
                    sink.on_packet(i, p);
                }
            }

            let frame_index = self.frame.frame_index;
            for (i, u) in self.users.iter_mut().enumerate() {
                incoming.clear();
                arrivals[i] =
                    u.arrivals
                        .sample_into(i, t, frame_index, &mut u.arrival_rng, &mut incoming);
                for p in &incoming {
                    u.queue.push(*p);
                }
            }

            sink.on_slot(&SlotRecord {
                slot: t,
                frame: frame_index,
                queue_before: &lens,
                arrivals: &arrivals,
                scheduled,
                served: served_count,
                power,
                interference,
            });

            let total: usize = self.users.iter().map(|u| u.queue.len()).sum();
            let in_busy = self.frame.phase == crate::queueing::Phase::Busy;
            let forced_pending =
                in_busy && total > 0 && self.frame.slots_in_frame + 1 >= opts.max_frame_slots;
            if forced_pending {
                let now = (t + 1) as f64;
                let mut snapshotted = 0;
                for u in &mut self.users {
                    snapshotted += u.queue.snapshot_unserved(frame_index, now);
                }
                log::warn!(
                    "frame {frame_index} force-closed after {} slots; {snapshotted} unserved delays taken as lower bounds",
                    opts.max_frame_slots
                );
            }
            if let Some(closed) = self.frame.update(total, t, opts.max_frame_slots) {
                self.close_frame(&closed, t, sink)?;
            }
        }

        Ok(self.report())
    }

    fn close_frame<S: TraceSink>(
        &mut self,
        closed: &ClosedFrame,
        slot: u64,
        sink: &mut S,
    ) -> Result<()> {
        let control = self.scenario.control;
        let y_prev: Vec<f64> = self.users.iter().map(|u| u.vq.y).collect();
        let r_used: Vec<f64> = self.users.iter().map(|u| u.vq.r).collect();

        for u in &mut self.users {
            let (delay_sum, count) = u.queue.take_frame_ledger();
            // The target for the next frame is set from the debt at the start of this one.
            let r_next = auxiliary_target(&u.vq, &control);
            u.vq.apply_frame(delay_sum, count);
            u.vq.r = r_next;
            if u.vq.y.is_nan() || u.vq.y < 0.0 || !(0.0..=u.vq.delay_bound).contains(&u.vq.r) {
                return Err(Error::InvariantViolated {
                    slot,
                    detail: format!("virtual queue out of range: y = {}, r = {}", u.vq.y, u.vq.r),
                });
            }
            let conserved = u.queue.arrivals_count() - u.queue.served_count();
            if conserved != u.queue.len() as u64 {
                return Err(Error::InvariantViolated {
                    slot,
                    detail: format!(
                        "buffer holds {} packets, expected {conserved}",
                        u.queue.len()
                    ),
                });
            }
        }

        if self.scenario.options.service_rate_mode == ServiceRateMode::PerFrame {
            for (m, u) in self.mu.iter_mut().zip(&self.users) {
                if u.rate_samples > 0 {
                    *m = u.rate_samples as f64 / u.inv_rate_sum;
                }
            }
        }

        let y_next: Vec<f64> = self.users.iter().map(|u| u.vq.y).collect();
        let r_next: Vec<f64> = self.users.iter().map(|u| u.vq.r).collect();
        let costs = self.scenario.costs();
        let snap = lyapunov_snapshot(&y_prev, &y_next, &r_used, &costs, closed.len(), &control);
        self.dpp_sum += snap.drift_estimate + snap.penalty;

        sink.on_frame(&FrameRecord {
            frame: closed,
            priority: &self.list,
            y: &y_next,
            r: &r_next,
            lyapunov: snap.l,
            drift: snap.drift_estimate,
            penalty: snap.penalty,
        });

        self.frames_closed += 1;
        self.closed_slots += closed.len();
        if closed.forced {
            self.forced_closes += 1;
        }
        self.history.record(self.frames_closed, &y_next);
        self.list = build_priority_list(&y_next, &self.mu, closed.index + 1);
        Ok(())
    }

    fn report(self) -> SimReport {
        let scenario = self.scenario;
        let k = self.frames_closed;
        let mut per_user_delay = Vec::new();
        let mut per_user_cost = Vec::new();
        let mut stability = Vec::new();
        for (i, u) in self.users.iter().enumerate() {
            let w = u.queue.average_delay().unwrap_or(0.0);
            per_user_delay.push(w);
            per_user_cost.push(u.config.cost.eval(w));
            let terminal_ratio = if k > 0 { u.vq.y / k as f64 } else { 0.0 };
            let y_scale = if u.config.arrival_rate > 0.0 {
                scenario.control.v * u.config.delay_bound / u.config.arrival_rate
            } else {
                f64::INFINITY
            };
            let slope = self.history.final_quarter_slope(i, k);
            stability.push(StabilityDiagnostic {
                terminal_ratio,
                y_scale,
                final_quarter_slope: slope,
                stable: terminal_ratio < scenario.options.stability_threshold * y_scale
                    && slope <= 0.0,
            });
        }
        let lambda: Vec<f64> = scenario.users.iter().map(|u| u.arrival_rate).collect();
        SimReport {
            sum_cost: per_user_cost.iter().sum(),
            delay_bound_violations: per_user_delay
                .iter()
                .zip(&scenario.users)
                .map(|(w, u)| *w > u.delay_bound)
                .collect(),
            per_user_delay,
            per_user_cost,
            served_packets: self
                .users
                .iter()
                .map(|u| u.queue.reported_served())
                .collect(),
            arrived_packets: self
                .users
                .iter()
                .map(|u| u.queue.arrivals_count())
                .collect(),
            residual_queue: self.users.iter().map(|u| u.queue.len() as u64).collect(),
            max_interference_seen: self.max_interference,
            predicted_frame_length: expected_frame_length(&lambda, &self.mu).ok(),
            service_rates: self.mu,
            frames_closed: k,
            forced_closes: self.forced_closes,
            mean_frame_length: (k > 0).then(|| self.closed_slots as f64 / k as f64),
            mean_drift_plus_penalty: (k > 0).then(|| self.dpp_sum / k as f64),
            y_terminal: self.users.iter().map(|u| u.vq.y).collect(),
            y_over_k_terminal: stability.iter().map(|s| s.terminal_ratio).collect(),
            stability,
            slots_simulated: scenario.horizon_slots,
            seed: scenario.seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Common arrival rate of all users.
    Lambda,
    /// Control weight V.
    V,
}

impl SweepAxis {
    pub fn apply(self, scenario: &mut Scenario, value: f64) {
        match self {
            SweepAxis::Lambda => scenario.set_arrival_rate(value),
            SweepAxis::V => scenario.control.v = value,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub x: f64,
    pub replicate: usize,
    pub seed: u64,
    pub outcome: Result<SimReport>,
}

/// Runs `base` at every `(value, replicate)` pair on a pool of `workers`
/// threads. Results come back in input order.
///
/// Replicate `r` uses the same derived seed at every value. The service
/// rates are estimated once from the base seed and shared by all points.
pub fn sweep(
    base: &Scenario,
    axis: SweepAxis,
    values: &[f64],
    replicates: usize,
    workers: usize,
) -> Result<Vec<SweepPoint>> {
    if values.is_empty() {
        return Err(Error::invalid("values", "non-empty"));
    }
    if replicates == 0 {
        return Err(Error::invalid("replicates", "at least 1"));
    }
    base.validate()?;
    let mu = service_rates(base, base.seed)?;
    let jobs: Vec<(f64, usize)> = values
        .iter()
        .flat_map(|&x| (0..replicates).map(move |r| (x, r)))
        .collect();
    let exec = |&(x, r): &(f64, usize)| {
        let mut scenario = base.clone();
        axis.apply(&mut scenario, x);
        scenario.seed = replicate_seed(base.seed, r);
        let outcome = run_with(&scenario, Some(&mu), &mut NoTrace);
        if let Err(e) = &outcome {
            log::error!("sweep point x = {x}, replicate {r} failed: {e}");
        }
        SweepPoint {
            x,
            replicate: r,
            seed: scenario.seed,
            outcome,
        }
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::invalid("workers", format!("a usable thread count ({e})")))?;
    Ok(pool.install(|| jobs.par_iter().map(exec).collect()))
}
