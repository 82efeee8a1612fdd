//! Wide-area measurement layer.
//!
//! Frequency sensors at buses, a center-of-inertia speed estimate from their
//! reports, and an emulated datagram channel with delay, jitter and loss.
//! Delivery times are a pure function of `(seed, sensor_id, seq)`, so a
//! schedule is reproducible regardless of the order datagrams are queued.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::NetworkCase;

/// Default staleness cutoff for last-value hold, s.
pub const STALENESS_CUTOFF: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorChannel {
    pub sensor_id: usize,
    pub bus: usize,
    pub weight: f64,
    #[serde(default)]
    pub delay_mean: f64,
    #[serde(default)]
    pub jitter_std: f64,
    #[serde(default)]
    pub drop_prob: f64,
    #[serde(default = "default_period")]
    pub report_period: f64,
}

fn default_period() -> f64 {
    0.03
}

impl SensorChannel {
    pub fn ideal(sensor_id: usize, bus: usize, weight: f64) -> Self {
        Self { sensor_id, bus, weight, delay_mean: 0.0, jitter_std: 0.0, drop_prob: 0.0, report_period: default_period() }
    }

    /// Same sensor behind a link with the given delay statistics.
    pub fn with_link(self, delay_mean: f64, jitter_std: f64, drop_prob: f64) -> Self {
        Self { delay_mean, jitter_std, drop_prob, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.weight >= 0.0) {
            return Err(Error::Domain(format!("sensor {} weight must be >= 0", self.sensor_id)));
        }
        if !(self.report_period > 0.0) {
            return Err(Error::Domain(format!("sensor {} report_period must be > 0", self.sensor_id)));
        }
        if !(0.0..=1.0).contains(&self.drop_prob) {
            return Err(Error::Domain(format!("sensor {} drop_prob must lie in [0, 1]", self.sensor_id)));
        }
        if !(self.delay_mean >= 0.0) || !(self.jitter_std >= 0.0) {
            return Err(Error::Domain(format!("sensor {} delay parameters must be >= 0", self.sensor_id)));
        }
        Ok(())
    }
}

/// How sensor weights are assigned when sensors are placed automatically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// Arithmetic mean.
    #[default]
    Equal,
    /// Proportional to the inertia of the unit at the sensor bus.
    Inertia,
}

/// One ideal sensor per generator bus, in generator order.
pub fn sensors_at_generators(case: &NetworkCase, weighting: Weighting) -> Vec<SensorChannel> {
    let n = case.generators.len();
    let raw: Vec<f64> = case
        .generators
        .iter()
        .map(|g| match weighting {
            Weighting::Equal => 1.0,
            Weighting::Inertia => g.machine.h * g.machine.mva_base,
        })
        .collect();
    let total: f64 = raw.iter().sum();
    (0..n).map(|k| SensorChannel::ideal(k + 1, case.generators[k].bus, raw[k] / total)).collect()
}

/// Check a channel set: each channel valid, unique ids, weights summing to 1.
pub fn validate_channels(channels: &[SensorChannel]) -> Result<()> {
    if channels.is_empty() {
        return Err(Error::Domain("at least one sensor channel is required".into()));
    }
    let mut seen = std::collections::HashSet::new();
    for c in channels {
        c.validate()?;
        if !seen.insert(c.sensor_id) {
            return Err(Error::Domain(format!("duplicate sensor id {}", c.sensor_id)));
        }
    }
    let sum: f64 = channels.iter().map(|c| c.weight).sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Domain(format!("sensor weights sum to {sum}, expected 1")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Datagram {
    pub sensor_id: usize,
    pub sample_time: f64,
    /// Frequency, Hz.
    pub value: f64,
    pub seq: u64,
}

/// Time constants of the continuous sensor model used inside the simulator
/// and of the discrete cascade in [`bus_frequency`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyFilter {
    /// Derivative filter time constant, s.
    pub t1: f64,
    /// Output smoothing time constant, s.
    pub t2: f64,
}

impl Default for FrequencyFilter {
    fn default() -> Self {
        Self { t1: 0.01, t2: 0.02 }
    }
}

/// Bus frequency from a sampled, unwrapped angle series: backward
/// difference, then two first-order low-pass stages discretized exactly
/// for a piecewise-constant input. One output per input sample; the first
/// sample reports `f0`.
pub fn bus_frequency(angles: &[f64], dt: f64, filter: &FrequencyFilter, f0: f64) -> Result<Vec<f64>> {
    if !(dt > 0.0) {
        return Err(Error::Domain("sample step must be > 0".into()));
    }
    let a1 = (-dt / filter.t1).exp();
    let a2 = (-dt / filter.t2).exp();
    let mut out = Vec::with_capacity(angles.len());
    let (mut y1, mut y2) = (0.0, 0.0);
    for (n, &theta) in angles.iter().enumerate() {
        if n == 0 {
            out.push(f0);
            continue;
        }
        let d = (theta - angles[n - 1]) / dt;
        if n == 1 {
            // Warm start at the first available derivative.
            y1 = d;
            y2 = d;
        } else {
            y1 = a1 * y1 + (1.0 - a1) * d;
            y2 = a2 * y2 + (1.0 - a2) * y1;
        }
        out.push(f0 + y2 / (2.0 * PI));
    }
    Ok(out)
}

/// Inertia-weighted mean speed of the online set.
pub fn coi_speed_exact(speeds: &[f64], inertias: &[f64]) -> Result<f64> {
    if speeds.is_empty() || speeds.len() != inertias.len() {
        return Err(Error::Domain("center-of-inertia speed needs a nonempty matched set".into()));
    }
    if inertias.iter().any(|&h| !(h > 0.0)) {
        return Err(Error::Domain("inertias must be > 0".into()));
    }
    let total: f64 = inertias.iter().sum();
    Ok(speeds.iter().zip(inertias).map(|(w, h)| w * h).sum::<f64>() / total)
}

/// Weighted per-unit average of frequency reports. Weights are renormalized
/// over the supplied set.
pub fn coi_speed_estimate(values_hz: &[f64], weights: &[f64], f0: f64) -> Result<f64> {
    if values_hz.is_empty() || values_hz.len() != weights.len() {
        return Err(Error::Domain("estimate needs a nonempty matched set".into()));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Domain("included weights sum to zero".into()));
    }
    Ok(values_hz.iter().zip(weights).map(|(f, a)| a / total * f).sum::<f64>() / f0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoiReading {
    /// Estimate, pu.
    pub value: f64,
    pub stale: bool,
    /// Number of sensors contributing.
    pub included: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Held {
    sample_time: f64,
    value: f64,
}

/// Receiver side: last value per sensor keyed by newest sample time.
#[derive(Debug, Clone)]
pub struct CoiEstimator {
    f0: f64,
    cutoff: f64,
    weights: BTreeMap<usize, f64>,
    held: BTreeMap<usize, Held>,
    last: f64,
    stale: bool,
}

impl CoiEstimator {
    /// Every sensor starts holding `f0` sampled at `t0`.
    pub fn new(channels: &[SensorChannel], f0: f64, t0: f64) -> Self {
        let weights = channels.iter().map(|c| (c.sensor_id, c.weight)).collect();
        let held = channels.iter().map(|c| (c.sensor_id, Held { sample_time: t0, value: f0 })).collect();
        Self { f0, cutoff: STALENESS_CUTOFF, weights, held, last: 1.0, stale: false }
    }

    pub fn with_cutoff(mut self, cutoff: f64) -> Self {
        self.cutoff = cutoff;
        self
    }

    /// Accept a datagram unless an equal or newer sample is already held.
    /// Returns whether it was accepted.
    pub fn receive(&mut self, d: &Datagram) -> bool {
        match self.held.get_mut(&d.sensor_id) {
            Some(h) if d.sample_time > h.sample_time => {
                *h = Held { sample_time: d.sample_time, value: d.value };
                true
            }
            _ => false,
        }
    }

    /// Current estimate. Sensors whose held sample is at least `cutoff` old
    /// are excluded and the remaining weights renormalized; with nothing
    /// left the previous estimate is held and flagged stale.
    pub fn estimate(&mut self, now: f64) -> CoiReading {
        let mut vals = Vec::new();
        let mut ws = Vec::new();
        for (id, h) in &self.held {
            if now - h.sample_time < self.cutoff {
                vals.push(h.value);
                ws.push(self.weights[id]);
            }
        }
        match coi_speed_estimate(&vals, &ws, self.f0) {
            Ok(v) => {
                self.last = v;
                self.stale = false;
            }
            Err(_) => self.stale = true,
        }
        CoiReading { value: self.last, stale: self.stale, included: vals.len() }
    }

    /// Weights in use at `now` after stale exclusion and renormalization.
    pub fn effective_weights(&self, now: f64) -> BTreeMap<usize, f64> {
        let live: Vec<_> = self.held.iter().filter(|(_, h)| now - h.sample_time < self.cutoff).map(|(id, _)| *id).collect();
        let total: f64 = live.iter().map(|id| self.weights[id]).sum();
        live.into_iter().map(|id| (id, self.weights[&id] / total)).collect()
    }

    /// Held `(sample_time, value)` for a sensor.
    pub fn held(&self, sensor_id: usize) -> Option<(f64, f64)> {
        self.held.get(&sensor_id).map(|h| (h.sample_time, h.value))
    }
}

fn datagram_rng(seed: u64, sensor_id: usize, seq: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((sensor_id as u64) << 40) ^ seq);
    rng
}

/// Delivery time of one datagram, or `None` when it is dropped.
pub fn delivery_time(channel: &SensorChannel, d: &Datagram, seed: u64) -> Option<f64> {
    let mut rng = datagram_rng(seed, d.sensor_id, d.seq);
    let u: f64 = rng.random();
    if u < channel.drop_prob {
        return None;
    }
    let delay = if channel.jitter_std > 0.0 {
        Normal::new(channel.delay_mean, channel.jitter_std).expect("finite jitter").sample(&mut rng)
    } else {
        channel.delay_mean
    };
    Some(d.sample_time + delay.max(0.0))
}

/// Datagrams from `outgoing` that have arrived by `now`, ordered by delivery
/// time. Arrived and dropped datagrams are removed from the queue.
pub fn channel_step(channel: &SensorChannel, now: f64, outgoing: &mut Vec<Datagram>, seed: u64) -> Vec<Datagram> {
    let mut arrived = Vec::new();
    outgoing.retain(|d| match delivery_time(channel, d, seed) {
        None => false,
        Some(t) if t <= now + 1e-9 => {
            arrived.push((t, *d));
            false
        }
        Some(_) => true,
    });
    arrived.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.seq.cmp(&b.1.seq)));
    arrived.into_iter().map(|(_, d)| d).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub sensor_id: usize,
    pub seq: u64,
    pub sample_time: f64,
    pub delivery_time: Option<f64>,
    pub dropped: bool,
}

/// Sender and channel for a set of sensors.
#[derive(Debug, Clone)]
pub struct ChannelEmulator {
    channels: Vec<SensorChannel>,
    seed: u64,
    next_seq: Vec<u64>,
    next_sample: Vec<f64>,
    pending: Vec<(f64, Datagram)>,
    audit: Vec<AuditEntry>,
}

impl ChannelEmulator {
    pub fn new(channels: Vec<SensorChannel>, seed: u64, t0: f64) -> Self {
        let n = channels.len();
        Self { channels, seed, next_seq: vec![0; n], next_sample: vec![t0; n], pending: Vec::new(), audit: Vec::new() }
    }

    pub fn channels(&self) -> &[SensorChannel] {
        &self.channels
    }

    /// Sensors due to report at `now` (sample instants on each sensor's own
    /// cadence, compared with a small tolerance).
    pub fn due(&self, now: f64) -> Vec<usize> {
        (0..self.channels.len()).filter(|&k| self.next_sample[k] <= now + 1e-9).collect()
    }

    /// Queue a report from sensor position `k`.
    pub fn send(&mut self, k: usize, now: f64, value_hz: f64) {
        let ch = &self.channels[k];
        let d = Datagram { sensor_id: ch.sensor_id, sample_time: now, value: value_hz, seq: self.next_seq[k] };
        self.next_seq[k] += 1;
        let steps = ((now - self.next_sample[k]) / ch.report_period).floor().max(0.0) + 1.0;
        self.next_sample[k] += steps * ch.report_period;
        let t = delivery_time(ch, &d, self.seed);
        self.audit.push(AuditEntry {
            sensor_id: d.sensor_id,
            seq: d.seq,
            sample_time: d.sample_time,
            delivery_time: t,
            dropped: t.is_none(),
        });
        if let Some(t) = t {
            self.pending.push((t, d));
        }
    }

    /// Deliver everything that has arrived by `now`, in delivery order.
    pub fn deliver(&mut self, now: f64) -> Vec<Datagram> {
        let mut arrived: Vec<(f64, Datagram)> = Vec::new();
        self.pending.retain(|&(t, d)| {
            if t <= now + 1e-9 {
                arrived.push((t, d));
                false
            } else {
                true
            }
        });
        arrived.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.sensor_id.cmp(&b.1.sensor_id)).then(a.1.seq.cmp(&b.1.seq)));
        arrived.into_iter().map(|(_, d)| d).collect()
    }

    pub fn audit(&self) -> &[AuditEntry] {
        &self.audit
    }
}

/// Audit log as CSV.
pub fn write_audit_csv<W: Write>(mut w: W, audit: &[AuditEntry]) -> std::io::Result<()> {
    writeln!(w, "sensor_id,seq,sample_time,delivery_time,dropped")?;
    for a in audit {
        let delivered = a.delivery_time.map(|t| format!("{t:.6}")).unwrap_or_default();
        writeln!(w, "{},{},{:.6},{},{}", a.sensor_id, a.seq, a.sample_time, delivered, a.dropped as u8)?;
    }
    Ok(())
}
