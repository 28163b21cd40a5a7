//! Named experiments and their outputs.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use doic_core::channel::{allocate_power, sample_channel};
use doic_core::engine::{FrameRecord, MIN_REPORTED_HORIZON};
use doic_core::metrics::{compare_curves, curve_from_sweep, write_curve_csv};
use doic_core::queueing::ServedPacket;
use doic_core::rng::{stream, Purpose};
use doic_core::{run_with, sweep, CsiMode, CurvePoint, Scenario, SweepAxis, SweepPoint, TraceSink};
use serde::Serialize;

use crate::config::{ConfigFile, SweepSpec};
use crate::CliError;

/// Arrival rates of the reference λ-sweeps.
pub const LAMBDA_GRID: [f64; 10] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];
/// Control weights of the V-sweep.
pub const V_GRID: [f64; 4] = [10.0, 100.0, 1_000.0, 10_000.0];
/// Delay bound given to every user in the unconstrained scenario.
pub const UNCONSTRAINED_BOUND: f64 = 3.0;
/// Relative channel-estimation error of the imperfect-CSI runs.
pub const CSI_ERROR: f64 = 0.1;
/// Statistical slack on a delay bound before a soft check fails.
pub const DELAY_TOLERANCE: f64 = 0.04;
/// Channel draws per user and mode in the exhaustive interference check.
pub const CSI_CHECK_DRAWS: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentPreset {
    /// Constrained and unconstrained λ-sweeps.
    Fig2,
    /// `fig2` plus the imperfect-CSI constrained sweep.
    Fig3,
    /// Sum of costs against V at λ = 0.5.
    Vsweep,
    /// Interference-cap check over raw channel draws and full sweeps.
    Csi,
    /// Whatever the config file describes.
    Custom,
}

/// Everything a preset needs besides its name.
#[derive(Debug, Clone)]
pub struct RunSettings {
    pub out_dir: PathBuf,
    pub workers: usize,
    /// Base configuration; presets other than `custom` fall back to the
    /// reference scenario when absent.
    pub config: Option<ConfigFile>,
    pub seed: Option<u64>,
    pub horizon: Option<u64>,
    pub replicates: Option<usize>,
    pub trace: bool,
}

impl RunSettings {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        Self {
            out_dir: out_dir.into(),
            workers: 1,
            config: None,
            seed: None,
            horizon: None,
            replicates: None,
            trace: false,
        }
    }
}

/// Result of a preset that ran to completion.
#[derive(Debug, Clone, Default, Serialize)]
pub struct PresetOutcome {
    /// Statistical checks outside tolerance.
    pub soft_failures: Vec<String>,
    /// Broken hard invariants (interference cap, failed runs).
    pub hard_failures: Vec<String>,
    pub files: Vec<String>,
}

impl PresetOutcome {
    /// 0 = all good, 2 = only soft checks failed, 1 = hard failure.
    pub fn exit_code(&self) -> i32 {
        if !self.hard_failures.is_empty() {
            1
        } else if !self.soft_failures.is_empty() {
            2
        } else {
            0
        }
    }
}

#[derive(Debug, Serialize)]
struct SweepRecord {
    name: String,
    axis: SweepAxis,
    values: Vec<f64>,
    replicates: usize,
    seeds: Vec<u64>,
    service_rates: Vec<f64>,
    config: ConfigFile,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    preset: ExperimentPreset,
    version: &'static str,
    git_describe: &'static str,
    workers: usize,
    config: &'a ConfigFile,
    sweeps: &'a [SweepRecord],
    outcome: &'a PresetOutcome,
}

struct Runner {
    preset: ExperimentPreset,
    settings: RunSettings,
    base: ConfigFile,
    replicates: usize,
    sweeps: Vec<SweepRecord>,
    outcome: PresetOutcome,
}

/// Runs `preset`, writing CSVs and `manifest.json` into `settings.out_dir`.
///
/// On a hard failure the outputs written so far are kept and a `FAILED`
/// marker is added next to them.
pub fn run_preset(
    preset: ExperimentPreset,
    settings: RunSettings,
) -> Result<PresetOutcome, CliError> {
    let mut base = match (&settings.config, preset) {
        (Some(cfg), _) => cfg.clone(),
        (None, ExperimentPreset::Custom) => {
            return Err(CliError::Config("the custom preset needs --config".into()));
        }
        (None, _) => ConfigFile::from_scenario(&Scenario::table_one()),
    };
    if let Some(seed) = settings.seed {
        base.seed = seed;
    }
    if let Some(h) = settings.horizon {
        base.horizon_slots = h;
    }
    if base.horizon_slots < MIN_REPORTED_HORIZON {
        return Err(CliError::Config(format!(
            "horizon_slots must be at least {MIN_REPORTED_HORIZON} for reported runs"
        )));
    }
    base.scenario().validate()?;
    let replicates = settings
        .replicates
        .or(base.sweep.as_ref().map(|s| s.replicates))
        .unwrap_or(5);
    fs::create_dir_all(&settings.out_dir).map_err(|e| io_err(&settings.out_dir, e))?;
    let stale = settings.out_dir.join("FAILED");
    if stale.exists() {
        fs::remove_file(&stale).map_err(|e| io_err(&stale, e))?;
    }

    let mut runner = Runner {
        preset,
        settings,
        base,
        replicates,
        sweeps: Vec::new(),
        outcome: PresetOutcome::default(),
    };
    let result = runner.execute();
    let manifest_result = runner.write_manifest();
    if let Err(e) = &result {
        runner.mark_failed(&e.to_string());
    } else if !runner.outcome.hard_failures.is_empty() {
        let reason = runner.outcome.hard_failures.join("\n");
        runner.mark_failed(&reason);
    }
    result?;
    manifest_result?;
    Ok(runner.outcome)
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(path.display().to_string(), e)
}

impl Runner {
    fn execute(&mut self) -> Result<(), CliError> {
        if self.settings.trace {
            self.trace()?;
        }
        match self.preset {
            ExperimentPreset::Fig2 => self.fig2().map(|_| ()),
            ExperimentPreset::Fig3 => self.fig3(),
            ExperimentPreset::Vsweep => self.vsweep(),
            ExperimentPreset::Csi => self.csi(),
            ExperimentPreset::Custom => self.custom(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.settings.out_dir.join(name)
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<File>, CliError> {
        let path = self.path(name);
        let file = File::create(&path).map_err(|e| io_err(&path, e))?;
        self.outcome.files.push(name.to_string());
        Ok(BufWriter::new(file))
    }

    /// Runs one sweep, records it in the manifest and writes its curve.
    fn run_sweep(
        &mut self,
        name: &str,
        cfg: &ConfigFile,
        axis: SweepAxis,
        values: &[f64],
        replicates: usize,
    ) -> Result<Vec<CurvePoint>, CliError> {
        let scenario = cfg.scenario();
        log::info!("{name}: {} values x {replicates} replicates", values.len());
        let points = sweep(&scenario, axis, values, replicates, self.settings.workers)?;
        self.record_failures(name, &points);
        let curve = curve_from_sweep(&points, &scenario.costs());
        let out = self.create(&format!("{name}.csv"))?;
        write_curve_csv(out, &curve).map_err(|e| io_err(&self.path(name), e))?;

        let cap = scenario.radio.interference_cap;
        for p in &curve {
            if p.max_interference > cap {
                self.outcome.hard_failures.push(format!(
                    "{name}: interference {} above cap {cap} at x = {}",
                    p.max_interference, p.x
                ));
            }
        }
        self.sweeps.push(SweepRecord {
            name: name.to_string(),
            axis,
            values: values.to_vec(),
            replicates,
            seeds: points.iter().take(replicates).map(|p| p.seed).collect(),
            service_rates: points
                .iter()
                .find_map(|p| p.outcome.as_ref().ok().map(|r| r.service_rates.clone()))
                .unwrap_or_default(),
            config: cfg.clone(),
        });
        Ok(curve)
    }

    fn record_failures(&mut self, name: &str, points: &[SweepPoint]) {
        for p in points {
            if let Err(e) = &p.outcome {
                self.outcome.hard_failures.push(format!(
                    "{name}: x = {}, replicate {} failed: {e}",
                    p.x, p.replicate
                ));
            }
        }
    }

    fn soft(&mut self, ok: bool, message: impl FnOnce() -> String) {
        if !ok {
            let m = message();
            log::warn!("soft check failed: {m}");
            self.outcome.soft_failures.push(m);
        }
    }

    fn with_bounds(&self, bounds: Option<&[f64]>) -> ConfigFile {
        let mut cfg = self.base.clone();
        cfg.sweep = None;
        if let Some(b) = bounds {
            for (u, d) in cfg.users.iter_mut().zip(b) {
                u.delay_bound = *d;
            }
        }
        cfg
    }

    fn check_delay_bounds(&mut self, name: &str, cfg: &ConfigFile, curve: &[CurvePoint]) {
        for p in curve {
            for (i, (w, u)) in p.per_user_delay.iter().zip(&cfg.users).enumerate() {
                let limit = u.delay_bound * (1.0 + DELAY_TOLERANCE);
                self.soft(*w <= limit, || {
                    format!(
                        "{name}: user {} delay {w:.4} above {limit:.4} at x = {}",
                        i + 1,
                        p.x
                    )
                });
            }
        }
    }

    fn fig2(&mut self) -> Result<Vec<CurvePoint>, CliError> {
        let constrained_cfg = self.with_bounds(None);
        let constrained = self.run_sweep(
            "fig2_constrained",
            &constrained_cfg,
            SweepAxis::Lambda,
            &LAMBDA_GRID,
            self.replicates,
        )?;
        self.check_delay_bounds("fig2_constrained", &constrained_cfg, &constrained);

        let bounds: Vec<f64> = constrained_cfg
            .users
            .iter()
            .map(|_| UNCONSTRAINED_BOUND)
            .collect();
        let unconstrained_cfg = self.with_bounds(Some(&bounds));
        let unconstrained = self.run_sweep(
            "fig2_unconstrained",
            &unconstrained_cfg,
            SweepAxis::Lambda,
            &LAMBDA_GRID,
            self.replicates,
        )?;

        for p in &unconstrained {
            if p.per_user_delay.len() >= 2 {
                let gap = p.per_user_delay[0] - p.per_user_delay[1];
                let ci = p.ci_halfwidth[0] + p.ci_halfwidth[1];
                self.soft(gap > ci, || {
                    format!("fig2_unconstrained: user 1 not significantly slower at λ = {} (gap {gap:.4}, ci {ci:.4})", p.x)
                });
            }
        }
        for (c, u) in constrained.iter().zip(&unconstrained) {
            if c.x >= 0.6 - 1e-9 {
                let slack = c.sum_cost_ci + u.sum_cost_ci;
                self.soft(c.sum_cost >= u.sum_cost - slack, || {
                    format!(
                        "fig2: constrained sum of costs {:.4} below unconstrained {:.4} at λ = {}",
                        c.sum_cost, u.sum_cost, c.x
                    )
                });
            }
        }
        Ok(constrained)
    }

    fn fig3(&mut self) -> Result<(), CliError> {
        let perfect = self.fig2()?;
        let mut cfg = self.with_bounds(None);
        cfg.csi_mode = CsiMode::Imperfect;
        cfg.radio = cfg.radio.with_csi_error(CSI_ERROR);
        let imperfect = self.run_sweep(
            "fig3_imperfect",
            &cfg,
            SweepAxis::Lambda,
            &LAMBDA_GRID,
            self.replicates,
        )?;
        self.check_delay_bounds("fig3_imperfect", &cfg, &imperfect);

        let cmp = compare_curves(&imperfect, &perfect)?;
        let mut out = csv::Writer::from_writer(self.create("fig3_csi_gap.csv")?);
        let write = |out: &mut csv::Writer<_>| -> csv::Result<()> {
            out.write_record(["x", "sum_cost_imperfect", "sum_cost_perfect", "gap_pct"])?;
            for ((p, i), q) in cmp.points.iter().zip(&imperfect).zip(&perfect) {
                out.write_record([
                    p.x.to_string(),
                    i.sum_cost.to_string(),
                    q.sum_cost.to_string(),
                    p.relative_pct.to_string(),
                ])?;
            }
            out.flush()?;
            Ok(())
        };
        write(&mut out).map_err(|e| CliError::Output(e.to_string()))?;
        for p in &cmp.points {
            log::info!("imperfect CSI costs {:+.1}% at λ = {}", p.relative_pct, p.x);
        }
        Ok(())
    }

    fn vsweep(&mut self) -> Result<(), CliError> {
        let mut cfg = self.with_bounds(None);
        for u in &mut cfg.users {
            u.arrival_rate = 0.5;
        }
        let curve = self.run_sweep("vsweep", &cfg, SweepAxis::V, &V_GRID, self.replicates)?;
        for pair in curve.windows(2) {
            let slack = pair[0].sum_cost_ci + pair[1].sum_cost_ci;
            self.soft(pair[1].sum_cost <= pair[0].sum_cost + slack, || {
                format!(
                    "vsweep: sum of costs rises from {:.4} at V = {} to {:.4} at V = {}",
                    pair[0].sum_cost, pair[0].x, pair[1].sum_cost, pair[1].x
                )
            });
        }
        if let Some(last) = curve.last() {
            self.check_delay_bounds("vsweep", &cfg, std::slice::from_ref(last));
        }
        Ok(())
    }

    fn csi(&mut self) -> Result<(), CliError> {
        let perfect = self.with_bounds(None);
        let mut imperfect = perfect.clone();
        imperfect.csi_mode = CsiMode::Imperfect;
        imperfect.radio = imperfect.radio.with_csi_error(CSI_ERROR);

        let mut rows = Vec::new();
        for (mode, cfg) in [("perfect", &perfect), ("imperfect", &imperfect)] {
            let cap = cfg.radio.interference_cap;
            for (i, u) in cfg.users.iter().enumerate() {
                let profile = u.profile();
                let mut channel = stream(cfg.seed, i, Purpose::Auxiliary);
                let mut errors = stream(cfg.seed, i + cfg.users.len(), Purpose::Auxiliary);
                let (mut worst, mut violations) = (0.0f64, 0u64);
                for _ in 0..CSI_CHECK_DRAWS {
                    let d = sample_channel(&profile, &cfg.radio, &mut channel, &mut errors);
                    let interference = allocate_power(d.estimated_interference_gain, &cfg.radio)
                        * d.interference_gain;
                    worst = worst.max(interference);
                    violations += u64::from(interference > cap);
                }
                if violations > 0 {
                    self.outcome.hard_failures.push(format!(
                        "csi: {violations} draws above the cap for user {} ({mode})",
                        i + 1
                    ));
                }
                rows.push([
                    mode.to_string(),
                    (i + 1).to_string(),
                    CSI_CHECK_DRAWS.to_string(),
                    worst.to_string(),
                    violations.to_string(),
                ]);
            }
        }
        let mut out = csv::Writer::from_writer(self.create("csi_draws.csv")?);
        let write = |out: &mut csv::Writer<_>| -> csv::Result<()> {
            out.write_record(["mode", "user", "draws", "max_interference", "violations"])?;
            for r in &rows {
                out.write_record(r)?;
            }
            out.flush()?;
            Ok(())
        };
        write(&mut out).map_err(|e| CliError::Output(e.to_string()))?;

        self.run_sweep(
            "csi_perfect",
            &perfect,
            SweepAxis::Lambda,
            &LAMBDA_GRID,
            self.replicates,
        )?;
        self.run_sweep(
            "csi_imperfect",
            &imperfect,
            SweepAxis::Lambda,
            &LAMBDA_GRID,
            self.replicates,
        )?;
        Ok(())
    }

    fn custom(&mut self) -> Result<(), CliError> {
        let cfg = self.with_bounds(None);
        // Without a sweep, replicate the scenario as is: re-applying its own V changes nothing.
        let spec = self.base.sweep.clone().unwrap_or(SweepSpec {
            axis: SweepAxis::V,
            values: vec![cfg.control.v],
            replicates: self.replicates,
        });
        let replicates = self.settings.replicates.unwrap_or(spec.replicates);
        let curve = self.run_sweep("custom", &cfg, spec.axis, &spec.values, replicates)?;
        self.check_delay_bounds("custom", &cfg, &curve);
        Ok(())
    }

    /// Packet and frame logs of one run of the base scenario.
    fn trace(&mut self) -> Result<(), CliError> {
        let scenario = self.with_bounds(None).scenario();
        let packets = self.create("trace_packets.csv")?;
        let frames = self.create("trace_frames.csv")?;
        let n = scenario.n_users();
        let mut sink =
            CsvTrace::new(packets, frames, n).map_err(|e| CliError::Output(e.to_string()))?;
        run_with(&scenario, None, &mut sink)?;
        sink.finish().map_err(|e| CliError::Output(e.to_string()))
    }

    fn write_manifest(&mut self) -> Result<(), CliError> {
        let manifest = Manifest {
            preset: self.preset,
            version: env!("CARGO_PKG_VERSION"),
            git_describe: crate::GIT_DESCRIBE,
            workers: self.settings.workers,
            config: &self.base,
            sweeps: &self.sweeps,
            outcome: &self.outcome,
        };
        let path = self.path("manifest.json");
        let json =
            serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Output(e.to_string()))?;
        fs::write(&path, json + "\n").map_err(|e| io_err(&path, e))
    }

    fn mark_failed(&self, reason: &str) {
        let path = self.path("FAILED");
        if let Err(e) = fs::write(&path, format!("{reason}\n")) {
            log::error!("could not write {}: {e}", path.display());
        }
    }
}

/// Streams packet and frame records to CSV.
struct CsvTrace<W: Write> {
    packets: csv::Writer<W>,
    frames: csv::Writer<W>,
    error: Option<csv::Error>,
}

impl<W: Write> CsvTrace<W> {
    fn new(packets: W, frames: W, n_users: usize) -> csv::Result<Self> {
        let mut packets = csv::Writer::from_writer(packets);
        packets.write_record(["user", "arrival_time", "served_slot", "delay"])?;
        let mut frames = csv::Writer::from_writer(frames);
        let mut header = vec!["k".to_string(), "length".to_string()];
        header.extend((1..=n_users).map(|i| format!("y_{i}")));
        header.extend((1..=n_users).map(|i| format!("r_{i}")));
        header.push("priority".into());
        header.push("lyapunov".into());
        frames.write_record(&header)?;
        Ok(Self {
            packets,
            frames,
            error: None,
        })
    }

    fn keep(&mut self, r: csv::Result<()>) {
        if let (Err(e), None) = (r, &self.error) {
            self.error = Some(e);
        }
    }

    fn finish(mut self) -> csv::Result<()> {
        if let Some(e) = self.error.take() {
            return Err(e);
        }
        self.packets.flush()?;
        self.frames.flush()?;
        Ok(())
    }
}

impl<W: Write> TraceSink for CsvTrace<W> {
    fn on_packet(&mut self, user: usize, p: &ServedPacket) {
        let r = self.packets.write_record([
            (user + 1).to_string(),
            p.packet.arrival_time.to_string(),
            p.served_slot.to_string(),
            p.delay.to_string(),
        ]);
        self.keep(r);
    }

    fn on_frame(&mut self, rec: &FrameRecord<'_>) {
        let mut row = vec![rec.frame.index.to_string(), rec.frame.len().to_string()];
        row.extend(rec.y.iter().map(f64::to_string));
        row.extend(rec.r.iter().map(f64::to_string));
        let order: Vec<String> = rec
            .priority
            .order
            .iter()
            .map(|i| (i + 1).to_string())
            .collect();
        row.push(order.join(" "));
        row.push(rec.lyapunov.to_string());
        let r = self.frames.write_record(&row);
        self.keep(r);
    }
}
