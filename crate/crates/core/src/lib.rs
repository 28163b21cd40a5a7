//! Slotted simulator of an uplink cognitive-radio cell in which secondary
//! users share one channel under a per-slot interference cap toward a
//! primary receiver and per-user average-delay bounds.
//!
//! Scheduling follows a frame-based strict priority list driven by virtual
//! delay queues (a drift-plus-penalty controller); power follows the
//! interference-limited rule `min(I / g, P_max)`.
//!
//! Module map:
//! - [`channel`]: fading draws, rate function, power rule, CSI error, μ estimate
//! - [`queueing`]: arrivals, FIFO buffers, frame boundaries
//! - [`doic`]: virtual queues, auxiliary targets, priority lists, Lyapunov diagnostics
//! - [`engine`]: the slot loop and parameter sweeps
//! - [`metrics`]: cost functions, replicate aggregation, curve comparison, CSV

pub mod channel;
pub mod doic;
pub mod engine;
mod error;
pub mod metrics;
pub mod queueing;
pub mod rng;

pub use channel::{ChannelDraw, FadingKind, FadingProfile, RadioParams};
pub use doic::{ControlParams, LyapunovSnapshot, PriorityList, VirtualQueue};
pub use engine::{
    run, run_with, sweep, CsiMode, Scenario, SimOptions, SimReport, SweepAxis, SweepPoint,
    TraceSink, UserConfig,
};
pub use error::{Error, Result};
pub use metrics::{CostFunction, CurvePoint};
pub use queueing::{FrameState, Packet, UserQueue};
