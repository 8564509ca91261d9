//! Simulated battery-powered wireless sensor device.
//!
//! A node samples a deterministic synthetic 9-DoF signal, fuses orientation,
//! and pushes each full window through the encode pipeline: per channel
//! compressed sensing, quantization, optional syndrome coding, then the
//! whole window framed into one RLNC generation. Relay nodes buffer coded
//! packets and recode them onward without decoding.

use crate::cs::{BasisKind, CsError, MeasurementMatrix};
use crate::dsc::{self, BitReader, BitWriter, DscBlock, DscError, Quantizer, SyndromeCode};
use crate::rlnc::{self, CodedPacket, Generation, RlncError};
use crate::time::SimTime;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CHANNELS: usize = 9;

#[derive(Debug, Error, PartialEq)]
pub enum NodeError {
    #[error("battery depleted: drawn {drawn_uj} uJ of {capacity_uj} uJ")]
    BatteryDepleted { drawn_uj: f64, capacity_uj: f64 },
    #[error("window holds {got} frames, pipeline expects {want}")]
    WindowSize { want: usize, got: usize },
    #[error("average power must be positive")]
    ZeroDuty,
    #[error("payload framing is malformed")]
    MalformedPayload,
    #[error(transparent)]
    Cs(#[from] CsError),
    #[error(transparent)]
    Dsc(#[from] DscError),
    #[error(transparent)]
    Rlnc(#[from] RlncError),
}

/// One 9-DoF sample: 3-axis accelerometer, gyroscope, and unit-normalized
/// magnetometer field direction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SensorFrame {
    pub t: SimTime,
    pub accel: [f64; 3],
    pub gyro: [f64; 3],
    pub mag: [f64; 3],
}

impl SensorFrame {
    pub fn channel(&self, c: usize) -> f64 {
        match c {
            0..=2 => self.accel[c],
            3..=5 => self.gyro[c - 3],
            _ => self.mag[c - 6],
        }
    }

    pub fn channels(&self) -> [f64; CHANNELS] {
        std::array::from_fn(|c| self.channel(c))
    }
}

/// One sinusoidal component of a channel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tone {
    pub freq_hz: f64,
    pub amplitude: f64,
    #[serde(default)]
    pub phase: f64,
}

/// A step disturbance on one channel for a span of windows; drives anomaly
/// injection in scenarios.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Burst {
    pub window: u32,
    pub channel: usize,
    pub offset: f64,
}

/// Deterministic synthetic signal: per-channel sinusoid mixtures over a
/// baseline, plus seeded Gaussian noise. The magnetometer triple is
/// renormalized to keep it a direction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalSpec {
    #[serde(default = "SignalSpec::default_baseline")]
    pub baseline: [f64; CHANNELS],
    #[serde(default)]
    pub tones: Vec<Vec<Tone>>,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub bursts: Vec<Burst>,
}

impl SignalSpec {
    pub fn default_baseline() -> [f64; CHANNELS] {
        // Rest frame: gravity reaction up, magnetic north.
        [0.0, 0.0, 9.81, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0]
    }

    pub fn quiet() -> Self {
        SignalSpec {
            baseline: Self::default_baseline(),
            tones: Vec::new(),
            noise_sigma: 0.0,
            bursts: Vec::new(),
        }
    }

    /// Evaluate the analytic (noise-free) channel values at `t`.
    pub fn analytic(&self, t: SimTime, window: u32) -> [f64; CHANNELS] {
        let ts = t.as_secs_f64();
        let mut out = self.baseline;
        for (c, tones) in self.tones.iter().enumerate().take(CHANNELS) {
            for tone in tones {
                out[c] +=
                    tone.amplitude * (2.0 * std::f64::consts::PI * tone.freq_hz * ts + tone.phase).sin();
            }
        }
        for b in &self.bursts {
            if b.window == window && b.channel < CHANNELS {
                out[b.channel] += b.offset;
            }
        }
        out
    }
}

/// Energy bookkeeping. Draw is monotone; a dead node transmits nothing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatteryState {
    pub capacity_uj: f64,
    #[serde(default)]
    pub drawn_uj: f64,
    pub tx_cost_uj_per_byte: f64,
    pub sample_cost_uj: f64,
    pub idle_cost_uj_per_s: f64,
}

impl Default for BatteryState {
    fn default() -> Self {
        BatteryState {
            capacity_uj: 3.1536e10, // 31,536 J
            drawn_uj: 0.0,
            tx_cost_uj_per_byte: 0.2,
            sample_cost_uj: 5.0,
            idle_cost_uj_per_s: 10.0,
        }
    }
}

impl BatteryState {
    pub fn is_dead(&self) -> bool {
        self.drawn_uj >= self.capacity_uj
    }

    pub fn draw(&mut self, uj: f64) {
        debug_assert!(uj >= 0.0);
        self.drawn_uj += uj;
    }

    pub fn remaining_uj(&self) -> f64 {
        (self.capacity_uj - self.drawn_uj).max(0.0)
    }
}

/// Active workload of a node: sampling and transmit rates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DutyCycle {
    pub sample_rate_hz: f64,
    pub tx_bytes_per_s: f64,
}

impl DutyCycle {
    pub fn scaled(&self, factor: f64) -> DutyCycle {
        DutyCycle {
            sample_rate_hz: self.sample_rate_hz * factor,
            tx_bytes_per_s: self.tx_bytes_per_s * factor,
        }
    }

    pub fn average_power_uw(&self, b: &BatteryState) -> f64 {
        b.idle_cost_uj_per_s
            + self.sample_rate_hz * b.sample_cost_uj
            + self.tx_bytes_per_s * b.tx_cost_uj_per_byte
    }
}

/// Remaining lifetime in seconds under the duty cycle's average power.
pub fn project_lifetime(b: &BatteryState, duty: &DutyCycle) -> Result<f64, NodeError> {
    let power_uw = duty.average_power_uw(b);
    if power_uw <= 0.0 {
        return Err(NodeError::ZeroDuty);
    }
    // uJ / uW = seconds; the micro factors cancel.
    Ok(b.remaining_uj() / power_uw)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsCfg {
    pub m: usize,
    pub seed: u64,
    pub basis: BasisKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DscCfg {
    /// Stream whose reconstructed measurements serve as side information.
    pub side_info: String,
    #[serde(default = "default_correctable")]
    pub correctable: u8,
    /// Probability that a sample's LSB is flipped before syndrome forming;
    /// models the bounded discrepancy between correlated neighbours as a
    /// persistent calibration offset: the mask is drawn from `flip_seed`
    /// and is identical for every window. With more than 7 bits per sample
    /// at most one LSB lands in any chunk.
    #[serde(default)]
    pub lsb_flip_rate: f64,
    #[serde(default)]
    pub flip_seed: u64,
}

fn default_correctable() -> u8 {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RlncCfg {
    pub k: usize,
    #[serde(default = "default_redundancy")]
    pub redundancy: f64,
}

fn default_redundancy() -> f64 {
    1.25
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineCfg {
    pub window_n: usize,
    /// None disables compressed sensing (identity sampling).
    pub cs: Option<CsCfg>,
    pub quantizer: Quantizer,
    /// None ships raw quantized measurements (reference streams do this).
    pub dsc: Option<DscCfg>,
    pub rlnc: RlncCfg,
}

impl PipelineCfg {
    pub fn packets_per_window(&self) -> usize {
        ((self.rlnc.k as f64 * self.rlnc.redundancy).ceil() as usize).max(self.rlnc.k)
    }

    pub fn syndrome_code(&self) -> SyndromeCode {
        let correctable = self.dsc.as_ref().map_or(1, |d| d.correctable);
        SyndromeCode::with_correctable(correctable)
    }
}

/// One channel of a framed window.
#[derive(Clone, Debug, PartialEq)]
pub enum ChannelBlock {
    /// Bit-packed quantized measurements.
    Raw {
        quantizer: Quantizer,
        samples: Vec<u16>,
    },
    Dsc(DscBlock),
}

/// What one generation carries: every channel of one window.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowPayload {
    pub window: u32,
    pub blocks: Vec<ChannelBlock>,
}

impl WindowPayload {
    /// Framing: window u32 BE, channel count u8, then per channel a tag
    /// byte (0 raw, 1 dsc), a u16 BE length, and the block bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.window.to_be_bytes());
        out.push(self.blocks.len() as u8);
        for block in &self.blocks {
            match block {
                ChannelBlock::Raw { quantizer, samples } => {
                    let mut body = Vec::new();
                    body.push(quantizer.bits_per_sample);
                    body.extend_from_slice(&quantizer.clip_min.to_be_bytes());
                    body.extend_from_slice(&quantizer.clip_max.to_be_bytes());
                    body.extend_from_slice(&(samples.len() as u16).to_be_bytes());
                    let mut bits = BitWriter::new();
                    for &s in samples {
                        bits.push(u32::from(s), quantizer.bits_per_sample as usize);
                    }
                    body.extend_from_slice(&bits.finish());
                    out.push(0);
                    out.extend_from_slice(&(body.len() as u16).to_be_bytes());
                    out.extend_from_slice(&body);
                }
                ChannelBlock::Dsc(block) => {
                    let body = block.to_bytes();
                    out.push(1);
                    out.extend_from_slice(&(body.len() as u16).to_be_bytes());
                    out.extend_from_slice(&body);
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NodeError> {
        if bytes.len() < 5 {
            return Err(NodeError::MalformedPayload);
        }
        let window = u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
        let count = bytes[4] as usize;
        let mut blocks = Vec::with_capacity(count);
        let mut at = 5;
        for _ in 0..count {
            if bytes.len() < at + 3 {
                return Err(NodeError::MalformedPayload);
            }
            let tag = bytes[at];
            let len = u16::from_be_bytes([bytes[at + 1], bytes[at + 2]]) as usize;
            at += 3;
            if bytes.len() < at + len {
                return Err(NodeError::MalformedPayload);
            }
            let body = &bytes[at..at + len];
            at += len;
            match tag {
                0 => {
                    if body.len() < 19 {
                        return Err(NodeError::MalformedPayload);
                    }
                    let bits_per_sample = body[0];
                    let clip_min =
                        f64::from_be_bytes(body[1..9].try_into().expect("8 bytes"));
                    let clip_max =
                        f64::from_be_bytes(body[9..17].try_into().expect("8 bytes"));
                    let n = u16::from_be_bytes([body[17], body[18]]) as usize;
                    let quantizer = Quantizer::new(bits_per_sample, clip_min, clip_max)?;
                    let bit_bytes = &body[19..];
                    if bit_bytes.len() != (n * bits_per_sample as usize).div_ceil(8) {
                        return Err(NodeError::MalformedPayload);
                    }
                    let mut reader = BitReader::new(bit_bytes);
                    let samples = (0..n)
                        .map(|_| reader.take(bits_per_sample as usize) as u16)
                        .collect();
                    blocks.push(ChannelBlock::Raw { quantizer, samples });
                }
                1 => blocks.push(ChannelBlock::Dsc(
                    DscBlock::from_bytes(body).map_err(|_| NodeError::MalformedPayload)?,
                )),
                _ => return Err(NodeError::MalformedPayload),
            }
        }
        if at != bytes.len() {
            return Err(NodeError::MalformedPayload);
        }
        Ok(WindowPayload { window, blocks })
    }
}

/// Output of one pipeline run: the coded packets plus the exact quantized
/// measurements the node committed to (post flip injection), which the run
/// harness keeps as ground truth for reconstruction-quality records.
pub struct EncodedWindow {
    pub packets: Vec<CodedPacket>,
    pub committed_measurements: Vec<Vec<u16>>,
    pub payload_bytes: usize,
}

/// Run one window through CS -> quantize -> (DSC) -> RLNC framing.
///
/// The pipeline reads only this node's own frames; side information enters
/// at the decoder, never here.
pub fn pipeline_encode(
    frames: &[SensorFrame],
    cfg: &PipelineCfg,
    window: u32,
    battery: &mut BatteryState,
    rng: &mut ChaCha8Rng,
) -> Result<EncodedWindow, NodeError> {
    if battery.is_dead() {
        return Err(NodeError::BatteryDepleted {
            drawn_uj: battery.drawn_uj,
            capacity_uj: battery.capacity_uj,
        });
    }
    if frames.len() != cfg.window_n {
        return Err(NodeError::WindowSize {
            want: cfg.window_n,
            got: frames.len(),
        });
    }
    let n = cfg.window_n;
    let matrix = match &cfg.cs {
        Some(cs_cfg) => MeasurementMatrix::seeded(cs_cfg.m, n, cs_cfg.seed)?,
        None => MeasurementMatrix::identity(n),
    };
    let code = cfg.syndrome_code();
    let mut flip_rng = cfg
        .dsc
        .as_ref()
        .filter(|d| d.lsb_flip_rate > 0.0)
        .map(|d| ChaCha8Rng::seed_from_u64(d.flip_seed));

    let mut blocks = Vec::with_capacity(CHANNELS);
    let mut committed = Vec::with_capacity(CHANNELS);
    for c in 0..CHANNELS {
        let signal: Vec<f64> = frames.iter().map(|f| f.channel(c)).collect();
        let measurements = matrix.apply(&signal)?;
        let mut quantized: Vec<u16> = measurements
            .iter()
            .map(|&x| cfg.quantizer.quantize(x))
            .collect();
        if let Some(dsc_cfg) = &cfg.dsc {
            if let Some(flips) = flip_rng.as_mut() {
                for s in quantized.iter_mut() {
                    if flips.random::<f64>() < dsc_cfg.lsb_flip_rate {
                        *s ^= 1;
                    }
                }
            }
            blocks.push(ChannelBlock::Dsc(dsc::encode_quantized(
                &quantized,
                &cfg.quantizer,
                &code,
            )));
        } else {
            blocks.push(ChannelBlock::Raw {
                quantizer: cfg.quantizer,
                samples: quantized.clone(),
            });
        }
        committed.push(quantized);
    }

    let payload = WindowPayload { window, blocks }.to_bytes();
    let generation = Generation::pack(window, &payload, cfg.rlnc.k)?;
    let packets: Vec<CodedPacket> = (0..cfg.packets_per_window())
        .map(|_| rlnc::encode(&generation, rng))
        .collect();
    let tx_bytes: usize = packets.iter().map(CodedPacket::wire_len).sum();
    battery.draw(tx_bytes as f64 * battery.tx_cost_uj_per_byte);
    Ok(EncodedWindow {
        packets,
        committed_measurements: committed,
        payload_bytes: payload.len(),
    })
}

/// Mesh relay state: buffers coded packets per (stream, generation) and
/// emits one recoded packet every `recode_every` receipts. Generations never
/// mix; the buffers are keyed by both identifiers.
pub struct Relay {
    pub recode_every: usize,
    buffers: std::collections::BTreeMap<(String, u32), Vec<CodedPacket>>,
    receipts: std::collections::BTreeMap<(String, u32), usize>,
}

impl Relay {
    pub fn new(recode_every: usize) -> Self {
        Relay {
            recode_every: recode_every.max(1),
            buffers: Default::default(),
            receipts: Default::default(),
        }
    }

    pub fn forward(
        &mut self,
        stream: &str,
        packet: CodedPacket,
        rng: &mut ChaCha8Rng,
    ) -> Option<CodedPacket> {
        let key = (stream.to_string(), packet.generation_id);
        self.buffers.entry(key.clone()).or_default().push(packet);
        let seen = self.receipts.entry(key.clone()).or_insert(0);
        *seen += 1;
        if (*seen).is_multiple_of(self.recode_every) {
            let buffer = &self.buffers[&key];
            Some(rlnc::recode(buffer, rng).expect("buffer is non-empty and single-generation"))
        } else {
            None
        }
    }
}

/// Sampling front end shared by the world and tests: evaluates the spec and
/// charges the battery.
pub fn sample(
    spec: &SignalSpec,
    t: SimTime,
    window: u32,
    battery: &mut BatteryState,
    noise_rng: &mut ChaCha8Rng,
) -> Result<SensorFrame, NodeError> {
    if battery.is_dead() {
        return Err(NodeError::BatteryDepleted {
            drawn_uj: battery.drawn_uj,
            capacity_uj: battery.capacity_uj,
        });
    }
    battery.draw(battery.sample_cost_uj);
    let mut ch = spec.analytic(t, window);
    if spec.noise_sigma > 0.0 {
        for v in ch.iter_mut() {
            let n: f64 = StandardNormal.sample(noise_rng);
            *v += spec.noise_sigma * n;
        }
    }
    // Keep the magnetometer a direction.
    let mnorm = (ch[6] * ch[6] + ch[7] * ch[7] + ch[8] * ch[8]).sqrt();
    if mnorm > 0.0 {
        ch[6] /= mnorm;
        ch[7] /= mnorm;
        ch[8] /= mnorm;
    }
    Ok(SensorFrame {
        t,
        accel: [ch[0], ch[1], ch[2]],
        gyro: [ch[3], ch[4], ch[5]],
        mag: [ch[6], ch[7], ch[8]],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rlnc::{Decoder, Insert};
    use crate::rng::stream_rng;

    fn test_battery() -> BatteryState {
        BatteryState {
            capacity_uj: 1e9,
            drawn_uj: 0.0,
            tx_cost_uj_per_byte: 0.2,
            sample_cost_uj: 5.0,
            idle_cost_uj_per_s: 10.0,
        }
    }

    fn flat_spec() -> SignalSpec {
        let mut tones = vec![Vec::new(); CHANNELS];
        tones[3] = vec![Tone {
            freq_hz: 2.0,
            amplitude: 0.5,
            phase: 0.0,
        }];
        SignalSpec {
            baseline: SignalSpec::default_baseline(),
            tones,
            noise_sigma: 0.0,
            bursts: Vec::new(),
        }
    }

    fn window_frames(spec: &SignalSpec, n: usize, battery: &mut BatteryState) -> Vec<SensorFrame> {
        let mut rng = stream_rng(1, "noise");
        (0..n)
            .map(|i| {
                sample(
                    spec,
                    SimTime::from_micros(i as u64 * 1_000),
                    0,
                    battery,
                    &mut rng,
                )
                .unwrap()
            })
            .collect()
    }

    #[test]
    fn noiseless_sample_equals_analytic_signal() {
        let spec = flat_spec();
        let mut b = test_battery();
        let mut rng = stream_rng(2, "noise");
        let t = SimTime::from_micros(125_000);
        let frame = sample(&spec, t, 0, &mut b, &mut rng).unwrap();
        let expect = spec.analytic(t, 0);
        for (c, &want) in expect.iter().enumerate() {
            assert_eq!(frame.channel(c), want, "channel {c}");
        }
    }

    #[test]
    fn identical_spec_and_seed_give_identical_frames() {
        let mut spec = flat_spec();
        spec.noise_sigma = 0.05;
        let mut b1 = test_battery();
        let mut b2 = test_battery();
        let mut r1 = stream_rng(9, "a");
        let mut r2 = stream_rng(9, "a");
        for i in 0..32 {
            let t = SimTime::from_micros(i * 500);
            let f1 = sample(&spec, t, 0, &mut b1, &mut r1).unwrap();
            let f2 = sample(&spec, t, 0, &mut b2, &mut r2).unwrap();
            assert_eq!(f1, f2);
        }
    }

    #[test]
    fn energy_counter_is_closed_form() {
        let spec = flat_spec();
        let mut b = test_battery();
        let mut rng = stream_rng(3, "noise");
        let n = 200;
        for i in 0..n {
            sample(&spec, SimTime::from_micros(i * 100), 0, &mut b, &mut rng).unwrap();
        }
        // Idle draw is charged by the world per elapsed time; sampling alone
        // is exactly N * sample_cost.
        assert_eq!(b.drawn_uj, n as f64 * b.sample_cost_uj);
    }

    #[test]
    fn dead_battery_stops_sampling_and_encoding() {
        let spec = flat_spec();
        let mut b = test_battery();
        b.drawn_uj = b.capacity_uj;
        let mut rng = stream_rng(4, "noise");
        assert!(matches!(
            sample(&spec, SimTime::ZERO, 0, &mut b, &mut rng),
            Err(NodeError::BatteryDepleted { .. })
        ));
        let cfg = passthrough_cfg(4);
        assert!(matches!(
            pipeline_encode(&[], &cfg, 0, &mut b, &mut rng),
            Err(NodeError::BatteryDepleted { .. })
        ));
    }

    fn passthrough_cfg(n: usize) -> PipelineCfg {
        PipelineCfg {
            window_n: n,
            cs: None,
            quantizer: Quantizer::new(16, -12.0, 12.0).unwrap(),
            dsc: None,
            rlnc: RlncCfg {
                k: 1,
                redundancy: 1.0,
            },
        }
    }

    /// Decode a window payload back to per-channel quantized samples using
    /// raw blocks only (the pass-through case).
    fn decode_raw_payload(packets: &[CodedPacket], k: usize) -> WindowPayload {
        let mut dec = Decoder::new(packets[0].generation_id, k, packets[0].payload.len());
        let mut gen = None;
        for p in packets {
            if let Insert::Complete(g) = dec.insert(p).unwrap() {
                gen = Some(g);
            }
        }
        WindowPayload::from_bytes(&gen.expect("complete").unpack().unwrap()).unwrap()
    }

    #[test]
    fn passthrough_pipeline_round_trips_quantized_input() {
        // CS disabled, DSC disabled, K=1: the cloud-visible payload is the
        // quantized window verbatim; dequantized error stays within step/2.
        let spec = flat_spec();
        let mut b = test_battery();
        let n = 16;
        let frames = window_frames(&spec, n, &mut b);
        let cfg = passthrough_cfg(n);
        let mut rng = stream_rng(5, "pipe");
        let out = pipeline_encode(&frames, &cfg, 0, &mut b, &mut rng).unwrap();
        assert_eq!(out.packets.len(), 1);
        let payload = decode_raw_payload(&out.packets, 1);
        assert_eq!(payload.blocks.len(), CHANNELS);
        let step = cfg.quantizer.step();
        for (c, block) in payload.blocks.iter().enumerate() {
            let ChannelBlock::Raw { quantizer, samples } = block else {
                panic!("expected raw block");
            };
            assert_eq!(samples, &out.committed_measurements[c]);
            for (i, &s) in samples.iter().enumerate() {
                let got = quantizer.dequantize(s);
                let want = frames[i].channel(c);
                assert!((got - want).abs() <= step / 2.0 + 1e-12);
            }
        }
    }

    #[test]
    fn packet_count_is_redundancy_times_k() {
        let spec = flat_spec();
        let mut b = test_battery();
        let n = 8;
        let frames = window_frames(&spec, n, &mut b);
        let cfg = PipelineCfg {
            window_n: n,
            cs: None,
            quantizer: Quantizer::new(8, -12.0, 12.0).unwrap(),
            dsc: None,
            rlnc: RlncCfg {
                k: 4,
                redundancy: 1.5,
            },
        };
        let mut rng = stream_rng(6, "pipe");
        let out = pipeline_encode(&frames, &cfg, 0, &mut b, &mut rng).unwrap();
        assert_eq!(out.packets.len(), 6);
    }

    #[test]
    fn pipeline_charges_tx_energy_per_byte() {
        let spec = flat_spec();
        let mut b = test_battery();
        let n = 8;
        let frames = window_frames(&spec, n, &mut b);
        let before = b.drawn_uj;
        let cfg = passthrough_cfg(n);
        let mut rng = stream_rng(7, "pipe");
        let out = pipeline_encode(&frames, &cfg, 0, &mut b, &mut rng).unwrap();
        let wire: usize = out.packets.iter().map(CodedPacket::wire_len).sum();
        assert_eq!(b.drawn_uj - before, wire as f64 * b.tx_cost_uj_per_byte);
    }

    #[test]
    fn window_payload_wire_round_trip() {
        let q = Quantizer::new(12, -3.0, 3.0).unwrap();
        let payload = WindowPayload {
            window: 42,
            blocks: vec![
                ChannelBlock::Raw {
                    quantizer: q,
                    samples: vec![0, 4095, 17, 2048],
                },
                ChannelBlock::Dsc(dsc::encode(&[0.5, -0.5, 1.0], &q, &SyndromeCode::hamming74())),
            ],
        };
        let bytes = payload.to_bytes();
        assert_eq!(WindowPayload::from_bytes(&bytes).unwrap(), payload);
        assert!(WindowPayload::from_bytes(&bytes[..bytes.len() - 2]).is_err());
    }

    #[test]
    fn relay_recode_every_receipt_forwards_each_time() {
        let gen = Generation::pack(3, &[1, 2, 3, 4, 5, 6, 7, 8], 3).unwrap();
        let mut rng = stream_rng(8, "relay");
        let mut relay = Relay::new(1);
        for _ in 0..4 {
            let pkt = rlnc::encode(&gen, &mut rng);
            assert!(relay.forward("s", pkt, &mut rng).is_some());
        }
    }

    #[test]
    fn relay_respects_generation_boundaries() {
        let gen_a = Generation::pack(1, &[9u8; 12], 3).unwrap();
        let gen_b = Generation::pack(2, &[7u8; 12], 3).unwrap();
        let mut rng = stream_rng(10, "relay");
        let mut relay = Relay::new(1);
        for _ in 0..3 {
            let out = relay
                .forward("s", rlnc::encode(&gen_a, &mut rng), &mut rng)
                .unwrap();
            assert_eq!(out.generation_id, 1);
            let out = relay
                .forward("s", rlnc::encode(&gen_b, &mut rng), &mut rng)
                .unwrap();
            assert_eq!(out.generation_id, 2);
        }
    }

    #[test]
    fn source_behind_relay_decodes_end_to_end() {
        let k = 3;
        let gen = Generation::pack(0, b"mesh forwarding works", k).unwrap();
        let mut rng = stream_rng(11, "relay");
        let mut relay = Relay::new(1);
        let mut dec = Decoder::new(0, k, gen.symbol_len());
        let mut complete = None;
        for _ in 0..k + 2 {
            let pkt = rlnc::encode(&gen, &mut rng);
            if let Some(recoded) = relay.forward("s", pkt, &mut rng) {
                if let Insert::Complete(g) = dec.insert(&recoded).unwrap() {
                    complete = Some(g);
                }
            }
        }
        let got = complete.expect("k+2 recoded packets complete in practice");
        assert_eq!(got.unpack().unwrap(), b"mesh forwarding works");
    }

    #[test]
    fn lifetime_projection_matches_hand_arithmetic() {
        // 31,536 J at 100 uW -> 3.1536e8 s (ten 365-day years).
        let b = BatteryState::default();
        let duty = DutyCycle {
            sample_rate_hz: 10.0,
            tx_bytes_per_s: 200.0,
        };
        assert_eq!(duty.average_power_uw(&b), 100.0);
        let secs = project_lifetime(&b, &duty).unwrap();
        assert!((secs - 3.1536e8).abs() < 1e-3, "{secs}");
    }

    #[test]
    fn empty_battery_projects_zero() {
        let mut b = BatteryState::default();
        b.drawn_uj = b.capacity_uj;
        let duty = DutyCycle {
            sample_rate_hz: 1.0,
            tx_bytes_per_s: 0.0,
        };
        assert_eq!(project_lifetime(&b, &duty).unwrap(), 0.0);
    }

    #[test]
    fn doubling_duty_halves_lifetime() {
        let b = BatteryState {
            idle_cost_uj_per_s: 0.0,
            ..BatteryState::default()
        };
        let duty = DutyCycle {
            sample_rate_hz: 4.0,
            tx_bytes_per_s: 50.0,
        };
        let one = project_lifetime(&b, &duty).unwrap();
        let two = project_lifetime(&b, &duty.scaled(2.0)).unwrap();
        assert!((one / two - 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_duty_rejected() {
        let b = BatteryState {
            idle_cost_uj_per_s: 0.0,
            ..BatteryState::default()
        };
        let duty = DutyCycle {
            sample_rate_hz: 0.0,
            tx_bytes_per_s: 0.0,
        };
        assert_eq!(project_lifetime(&b, &duty).unwrap_err(), NodeError::ZeroDuty);
    }
}
