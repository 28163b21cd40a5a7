//! Packet arrivals, per-user FIFO buffers and the idle/busy frame structure.
//!
//! Time is measured in slots. Packets arrive at continuous times inside a
//! slot and can be transmitted from the next slot boundary on. The delay of
//! a packet is the time from its arrival to the start of the slot in which it
//! is transmitted; the transmission slot itself is not counted.

use std::collections::VecDeque;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Packet {
    /// Arrival instant in slot units.
    pub arrival_time: f64,
    pub user: usize,
    /// Frame during which the packet arrived.
    pub frame: u64,
}

/// A packet removed from a buffer by [`UserQueue::serve_slot`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServedPacket {
    pub packet: Packet,
    pub served_slot: u64,
    pub delay: f64,
}

/// Poisson packet source for one user.
#[derive(Debug, Clone)]
pub struct ArrivalProcess {
    rate: f64,
    poisson: Option<Poisson<f64>>,
}

impl ArrivalProcess {
    /// A zero rate is accepted and never produces packets.
    pub fn new(rate: f64) -> Result<Self> {
        if !(rate >= 0.0 && rate.is_finite()) {
            return Err(Error::invalid("arrival_rate", "non-negative"));
        }
        let poisson = if rate > 0.0 {
            Some(
                Poisson::new(rate)
                    .map_err(|_| Error::invalid("arrival_rate", "a valid Poisson mean"))?,
            )
        } else {
            None
        };
        Ok(Self { rate, poisson })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    /// Appends the packets arriving during `slot` to `out`, in time order.
    /// Returns how many were appended.
    pub fn sample_into<R: Rng + ?Sized>(
        &self,
        user: usize,
        slot: u64,
        frame: u64,
        rng: &mut R,
        out: &mut Vec<Packet>,
    ) -> usize {
        let Some(poisson) = &self.poisson else {
            return 0;
        };
        let count = poisson.sample(rng) as usize;
        let start = out.len();
        for _ in 0..count {
            let offset: f64 = rng.random();
            out.push(Packet {
                arrival_time: slot as f64 + offset,
                user,
                frame,
            });
        }
        out[start..].sort_by(|a, b| a.arrival_time.total_cmp(&b.arrival_time));
        count
    }
}

/// Packets arriving at `user` during `slot`, sorted by arrival time.
pub fn generate_arrivals<R: Rng + ?Sized>(
    rate: f64,
    user: usize,
    slot: u64,
    rng: &mut R,
) -> Result<Vec<Packet>> {
    if rate.is_nan() || rate <= 0.0 {
        return Err(Error::invalid("arrival_rate", "positive"));
    }
    let mut out = Vec::new();
    ArrivalProcess::new(rate)?.sample_into(user, slot, 0, rng, &mut out);
    Ok(out)
}

/// How a per-slot rate turns into a packet count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServiceModel {
    /// `floor(rate)` whole packets per slot.
    #[default]
    Floor,
    /// The fractional part of the rate carries over to the user's next
    /// transmission while it stays backlogged, so long-run service tracks the
    /// unrounded rate.
    Fractional,
}

/// Packet buffer of one user plus its delay bookkeeping.
#[derive(Debug, Clone, Default)]
pub struct UserQueue {
    buffer: VecDeque<Packet>,
    /// Packets arriving before this instant are left out of reported averages.
    warmup_until: f64,
    cumulative_delay: f64,
    reported_served: u64,
    arrivals_count: u64,
    served_count: u64,
    frame_delay_sum: f64,
    frame_arrivals: u64,
    carry: f64,
}

impl UserQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_warmup(warmup_until: f64) -> Self {
        Self {
            warmup_until,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffer.is_empty()
    }

    /// Buffered packets that may be sent in `slot` (arrived strictly before it).
    pub fn servable_len(&self, slot: u64) -> usize {
        let boundary = slot as f64;
        self.buffer.partition_point(|p| p.arrival_time < boundary)
    }

    pub fn arrivals_count(&self) -> u64 {
        self.arrivals_count
    }

    pub fn served_count(&self) -> u64 {
        self.served_count
    }

    /// Served packets that count toward the reported average.
    pub fn reported_served(&self) -> u64 {
        self.reported_served
    }

    pub fn cumulative_delay(&self) -> f64 {
        self.cumulative_delay
    }

    pub fn packets(&self) -> impl Iterator<Item = &Packet> {
        self.buffer.iter()
    }

    /// Appends an arrival. Arrivals must come in time order.
    pub fn push(&mut self, packet: Packet) {
        debug_assert!(self
            .buffer
            .back()
            .is_none_or(|last| last.arrival_time <= packet.arrival_time));
        self.buffer.push_back(packet);
        self.arrivals_count += 1;
        self.frame_arrivals += 1;
    }

    /// Packet count the rate allows in one slot, before the queue-length cap.
    pub fn slot_capacity(&self, rate_packets: f64, model: ServiceModel) -> usize {
        match model {
            ServiceModel::Floor => rate_packets.floor() as usize,
            ServiceModel::Fractional => (rate_packets + self.carry).floor() as usize,
        }
    }

    /// Transmits `min(capacity, servable)` head-of-line packets in `slot`.
    ///
    /// Served packets are appended to `out`. Delays of packets that arrived
    /// in `current_frame` go into the frame ledger; packets from earlier
    /// frames were already accounted for when that frame was force-closed.
    pub fn serve_slot(
        &mut self,
        rate_packets: f64,
        model: ServiceModel,
        slot: u64,
        current_frame: u64,
        out: &mut Vec<ServedPacket>,
    ) -> usize {
        let capacity = self.slot_capacity(rate_packets, model);
        let count = capacity.min(self.servable_len(slot));
        let now = slot as f64;
        for packet in self.buffer.drain(..count) {
            let delay = now - packet.arrival_time;
            if packet.frame == current_frame {
                self.frame_delay_sum += delay;
            }
            if packet.arrival_time >= self.warmup_until {
                self.cumulative_delay += delay;
                self.reported_served += 1;
            }
            out.push(ServedPacket {
                packet,
                served_slot: slot,
                delay,
            });
        }
        self.served_count += count as u64;
        if model == ServiceModel::Fractional {
            self.carry = if self.buffer.is_empty() {
                0.0
            } else {
                (rate_packets + self.carry - count as f64).max(0.0).fract()
            };
        }
        count
    }

    /// Delay-so-far of still-buffered packets from `frame`, measured up to
    /// `now`, added to the frame ledger. Used when a frame is force-closed.
    pub fn snapshot_unserved(&mut self, frame: u64, now: f64) -> usize {
        let mut n = 0;
        for p in self.buffer.iter().filter(|p| p.frame == frame) {
            self.frame_delay_sum += now - p.arrival_time;
            n += 1;
        }
        n
    }

    /// Returns `(Σ delays, arrival count)` for the frame just closed and resets both.
    pub fn take_frame_ledger(&mut self) -> (f64, u64) {
        let ledger = (self.frame_delay_sum, self.frame_arrivals);
        self.frame_delay_sum = 0.0;
        self.frame_arrivals = 0;
        ledger
    }

    /// Mean delay of reported served packets, in slots.
    pub fn average_delay(&self) -> Result<f64> {
        average_delay(self.cumulative_delay, self.reported_served, 0)
    }
}

/// `cumulative_delay / served`, failing when nothing was served.
pub fn average_delay(cumulative_delay: f64, served: u64, user: usize) -> Result<f64> {
    if served == 0 {
        Err(Error::NoPacketsServed { user })
    } else {
        Ok(cumulative_delay / served as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Phase {
    Idle,
    Busy,
}

/// Summary of a frame at the moment it closes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClosedFrame {
    pub index: u64,
    pub start_slot: u64,
    pub idle_slots: u64,
    pub busy_slots: u64,
    /// Closed by the length cap rather than by the system emptying.
    pub forced: bool,
}

impl ClosedFrame {
    pub fn len(&self) -> u64 {
        self.idle_slots + self.busy_slots
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Tracks which frame the current slot belongs to.
///
/// A frame is one idle period (all buffers empty) followed by one busy
/// period. It closes at the end of the slot after which the system is empty
/// again.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameState {
    pub frame_index: u64,
    /// Phase of the slot currently being simulated.
    pub phase: Phase,
    pub frame_start_slot: u64,
    pub slots_in_frame: u64,
    pub idle_slots: u64,
}

impl Default for FrameState {
    fn default() -> Self {
        Self::new()
    }
}

impl FrameState {
    /// Frame 0, idle, at slot 0.
    pub fn new() -> Self {
        Self {
            frame_index: 0,
            phase: Phase::Idle,
            frame_start_slot: 0,
            slots_in_frame: 0,
            idle_slots: 0,
        }
    }

    /// Accounts for `slot`, given the number of packets queued at the start
    /// of the next slot. Returns the frame that ended with `slot`, if any.
    ///
    /// A busy period lasting `max_slots` slots is closed by force.
    pub fn update(
        &mut self,
        total_queued_next: usize,
        slot: u64,
        max_slots: u64,
    ) -> Option<ClosedFrame> {
        self.slots_in_frame += 1;
        match self.phase {
            Phase::Idle => {
                self.idle_slots += 1;
                if total_queued_next > 0 {
                    self.phase = Phase::Busy;
                }
                None
            }
            Phase::Busy => {
                if total_queued_next == 0 {
                    Some(self.close(slot, false, Phase::Idle))
                } else if self.slots_in_frame >= max_slots {
                    Some(self.close(slot, true, Phase::Busy))
                } else {
                    None
                }
            }
        }
    }

    fn close(&mut self, slot: u64, forced: bool, next_phase: Phase) -> ClosedFrame {
        let closed = ClosedFrame {
            index: self.frame_index,
            start_slot: self.frame_start_slot,
            idle_slots: self.idle_slots,
            busy_slots: self.slots_in_frame - self.idle_slots,
            forced,
        };
        self.frame_index += 1;
        self.phase = next_phase;
        self.frame_start_slot = slot + 1;
        self.slots_in_frame = 0;
        self.idle_slots = 0;
        closed
    }
}
