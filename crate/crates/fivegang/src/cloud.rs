//! Device-cloud stage: topic pub/sub with at-least-once delivery and
//! dedup, the three-stage reconstruction pipeline (network decode, then
//! distributed source decode, then CS conversion), baseline training, and
//! threshold anomaly detection.

use crate::cs::{self, CsCodeword, MatrixKind};
use crate::dsc::{self, ChunkedDecode, Quantizer};
use crate::node::{ChannelBlock, CsCfg, DscCfg, NodeError, WindowPayload};
use crate::rlnc::{CodedPacket, Decoder, Insert, RlncError};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, VecDeque};
use thiserror::Error;

pub const SIGMA_FLOOR: f64 = 1e-9;
pub const DEDUP_WINDOW: u64 = 1 << 16;

#[derive(Debug, Error, PartialEq)]
pub enum CloudError {
    #[error("malformed topic {0:?}: {1}")]
    MalformedTopic(String, &'static str),
    #[error("training needs at least two windows, got {0}")]
    InsufficientTraining(usize),
    #[error("training windows must share one shape")]
    RaggedTraining,
    #[error("window length {got} does not match model length {want}")]
    ShapeMismatch { want: usize, got: usize },
    #[error("packet framing disagrees with stream config: {0}")]
    ConfigMismatch(String),
    #[error(transparent)]
    Rlnc(#[from] RlncError),
}

/// A concrete publish path: non-empty `/`-separated segments, no wildcards.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Topic(String);

impl Topic {
    pub fn parse(path: &str) -> Result<Self, CloudError> {
        if path.is_empty() {
            return Err(CloudError::MalformedTopic(path.into(), "empty topic"));
        }
        for seg in path.split('/') {
            if seg.is_empty() {
                return Err(CloudError::MalformedTopic(path.into(), "empty segment"));
            }
            if seg == "+" {
                return Err(CloudError::MalformedTopic(
                    path.into(),
                    "wildcard in publish topic",
                ));
            }
        }
        Ok(Topic(path.to_string()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

/// Subscription filter: exact segments or single-level `+` wildcards.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TopicFilter {
    segments: Vec<Option<String>>, // None = `+`
}

impl TopicFilter {
    pub fn parse(filter: &str) -> Result<Self, CloudError> {
        if filter.is_empty() {
            return Err(CloudError::MalformedTopic(filter.into(), "empty filter"));
        }
        let segments = filter
            .split('/')
            .map(|seg| {
                if seg.is_empty() {
                    Err(CloudError::MalformedTopic(filter.into(), "empty segment"))
                } else if seg == "+" {
                    Ok(None)
                } else {
                    Ok(Some(seg.to_string()))
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(TopicFilter { segments })
    }

    pub fn matches(&self, topic: &Topic) -> bool {
        let parts: Vec<&str> = topic.0.split('/').collect();
        if parts.len() != self.segments.len() {
            return false;
        }
        self.segments
            .iter()
            .zip(parts)
            .all(|(filter, part)| filter.as_deref().is_none_or(|f| f == part))
    }
}

/// Per-publisher sliding window of seen sequence numbers.
#[derive(Debug, Default)]
struct SeenWindow {
    max_seq: u64,
    seen: std::collections::BTreeSet<u64>,
}

impl SeenWindow {
    /// True when the sequence number is new. Sequences older than the
    /// window are treated as already seen; retransmissions are recent by
    /// contract.
    fn observe(&mut self, seq: u64) -> bool {
        if !self.seen.is_empty() && seq + DEDUP_WINDOW <= self.max_seq {
            return false;
        }
        if !self.seen.insert(seq) {
            return false;
        }
        self.max_seq = self.max_seq.max(seq);
        let floor = self.max_seq.saturating_sub(DEDUP_WINDOW - 1);
        while let Some(&low) = self.seen.first() {
            if low >= floor {
                break;
            }
            self.seen.remove(&low);
        }
        true
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Delivery {
    pub topic: String,
    pub publisher: String,
    pub seq: u64,
    pub payload: Vec<u8>,
}

struct Subscription {
    subscriber: String,
    filter: TopicFilter,
    queue: VecDeque<Delivery>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct SubId(pub usize);

/// Topic broker with at-least-once semantics: retransmissions carry the
/// same (publisher, seq) and are deduplicated before fan-out, so each
/// matching subscription sees each unique message exactly once.
#[derive(Default)]
pub struct Broker {
    subscriptions: Vec<Subscription>,
    seen: BTreeMap<String, SeenWindow>,
    pub published: u64,
    pub dedup_dropped: u64,
}

impl Broker {
    pub fn new() -> Self {
        Broker::default()
    }

    pub fn subscribe(&mut self, subscriber: &str, filter: &str) -> Result<SubId, CloudError> {
        let filter = TopicFilter::parse(filter)?;
        self.subscriptions.push(Subscription {
            subscriber: subscriber.to_string(),
            filter,
            queue: VecDeque::new(),
        });
        Ok(SubId(self.subscriptions.len() - 1))
    }

    /// Returns how many subscription queues received the message; zero for
    /// a deduplicated retransmission or an unmatched topic.
    pub fn publish(
        &mut self,
        topic: &str,
        payload: &[u8],
        publisher: &str,
        seq: u64,
    ) -> Result<usize, CloudError> {
        let topic = Topic::parse(topic)?;
        let fresh = self
            .seen
            .entry(publisher.to_string())
            .or_default()
            .observe(seq);
        if !fresh {
            self.dedup_dropped += 1;
            return Ok(0);
        }
        self.published += 1;
        let mut delivered = 0;
        for sub in self.subscriptions.iter_mut() {
            if sub.filter.matches(&topic) {
                sub.queue.push_back(Delivery {
                    topic: topic.as_str().to_string(),
                    publisher: publisher.to_string(),
                    seq,
                    payload: payload.to_vec(),
                });
                delivered += 1;
            }
        }
        Ok(delivered)
    }

    pub fn drain(&mut self, sub: SubId) -> Vec<Delivery> {
        self.subscriptions
            .get_mut(sub.0)
            .map(|s| s.queue.drain(..).collect())
            .unwrap_or_default()
    }

    pub fn subscriber_of(&self, sub: SubId) -> Option<&str> {
        self.subscriptions.get(sub.0).map(|s| s.subscriber.as_str())
    }

    pub fn subscription_count(&self) -> usize {
        self.subscriptions.len()
    }
}

/// Everything the cloud must know to rebuild one stream's windows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamCfg {
    pub stream: String,
    pub channels: usize,
    pub window_n: usize,
    pub cs: Option<CsCfg>,
    pub quantizer: Quantizer,
    pub dsc: Option<DscCfg>,
    pub rlnc_k: usize,
    #[serde(default = "default_sparsity")]
    pub sparsity_k: usize,
    #[serde(default = "default_residual_tol")]
    pub residual_tol: f64,
}

fn default_sparsity() -> usize {
    8
}

fn default_residual_tol() -> f64 {
    1e-9
}

/// Stage-2 output for one window: dequantized measurement-domain samples
/// per channel, plus which chunks were substituted from side info.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementWindow {
    pub window: u32,
    pub channels: Vec<Vec<f64>>,
    pub degraded_chunks: Vec<(usize, u16)>,
}

/// Fully reconstructed signal window (basis domain).
#[derive(Clone, Debug, PartialEq)]
pub struct ReconstructedWindow {
    pub stream: String,
    pub window: u32,
    pub channels: Vec<Vec<f64>>,
    pub degraded_chunks: Vec<(usize, u16)>,
}

impl ReconstructedWindow {
    /// Channel-major flattening used by the anomaly model.
    pub fn flatten(&self) -> Vec<f64> {
        self.channels.iter().flatten().copied().collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ReconstructOutcome {
    Signal(ReconstructedWindow),
    Degraded(ReconstructedWindow),
    Incomplete { rank: usize },
}

/// Stage counters proving the gate ordering (stage 2 never before stage 1
/// completes, stage 3 never on unsubstituted chunks).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StageCounters {
    pub rlnc_completions: u64,
    pub dsc_windows: u64,
    pub cs_channels: u64,
}

/// Decode stages 2 and 3 for a window payload that stage 1 already
/// recovered. `side_info` carries the paired stream's measurement-domain
/// channels when the config demands them.
fn decode_window_payload(
    cfg: &StreamCfg,
    payload: &WindowPayload,
    side_info: Option<&MeasurementWindow>,
    counters: &mut StageCounters,
) -> Result<(MeasurementWindow, ReconstructedWindow), CloudError> {
    if payload.blocks.len() != cfg.channels {
        return Err(CloudError::ConfigMismatch(format!(
            "{} channels framed, config says {}",
            payload.blocks.len(),
            cfg.channels
        )));
    }
    let expect_m = cfg.cs.as_ref().map_or(cfg.window_n, |c| c.m);
    let code = dsc::SyndromeCode::with_correctable(
        cfg.dsc.as_ref().map_or(1, |d| d.correctable),
    );

    let mut measurement_channels = Vec::with_capacity(cfg.channels);
    let mut degraded = Vec::new();
    counters.dsc_windows += 1;
    for (c, block) in payload.blocks.iter().enumerate() {
        match block {
            ChannelBlock::Raw { quantizer, samples } => {
                if samples.len() != expect_m {
                    return Err(CloudError::ConfigMismatch(format!(
                        "channel {c}: {} raw samples, expected {expect_m}",
                        samples.len()
                    )));
                }
                let values: Vec<f64> = samples.iter().map(|&s| quantizer.dequantize(s)).collect();
                measurement_channels.push(values);
            }
            ChannelBlock::Dsc(dsc_block) => {
                if cfg.dsc.is_none() {
                    return Err(CloudError::ConfigMismatch(format!(
                        "channel {c}: syndrome block on a stream configured without DSC"
                    )));
                }
                if dsc_block.sample_count() != expect_m {
                    return Err(CloudError::ConfigMismatch(format!(
                        "channel {c}: {} syndrome samples, expected {expect_m}",
                        dsc_block.sample_count()
                    )));
                }
                let side = side_info.ok_or_else(|| {
                    CloudError::ConfigMismatch(format!(
                        "channel {c}: side information stream unavailable"
                    ))
                })?;
                let side_channel = side.channels.get(c).ok_or_else(|| {
                    CloudError::ConfigMismatch(format!("side info lacks channel {c}"))
                })?;
                let ChunkedDecode {
                    samples,
                    violated_chunks,
                    ..
                } = dsc::decode_with_substitution(dsc_block, side_channel, &cfg.quantizer, &code)
                    .map_err(|e| CloudError::ConfigMismatch(e.to_string()))?;
                degraded.extend(violated_chunks.into_iter().map(|chunk| (c, chunk)));
                measurement_channels.push(samples);
            }
        }
    }
    let measurements = MeasurementWindow {
        window: payload.window,
        channels: measurement_channels,
        degraded_chunks: degraded.clone(),
    };

    // Stage 3: CS conversion back to the regularly sampled signal.
    let mut signal_channels = Vec::with_capacity(cfg.channels);
    for ch in &measurements.channels {
        counters.cs_channels += 1;
        match &cfg.cs {
            Some(cs_cfg) => {
                let cw = CsCodeword {
                    measurements: ch.clone(),
                    m: cs_cfg.m,
                    n: cfg.window_n,
                    seed: cs_cfg.seed,
                    matrix_kind: MatrixKind::Seeded,
                    basis: cs_cfg.basis,
                };
                let sparsity = cfg.sparsity_k.min(cs_cfg.m).max(1);
                let recovered = cs::decode(&cw, sparsity, cfg.residual_tol)
                    .map_err(|e| CloudError::ConfigMismatch(e.to_string()))?;
                signal_channels.push(recovered);
            }
            None => signal_channels.push(ch.clone()),
        }
    }
    let reconstructed = ReconstructedWindow {
        stream: cfg.stream.clone(),
        window: payload.window,
        channels: signal_channels,
        degraded_chunks: degraded,
    };
    Ok((measurements, reconstructed))
}

/// The spec-level one-shot operation: feed a generation's packets, then run
/// the remaining stages. Stage 2 and 3 run only once stage 1 completes.
pub fn reconstruct(
    cfg: &StreamCfg,
    coded_packets: &[CodedPacket],
    side_info: Option<&MeasurementWindow>,
) -> Result<ReconstructOutcome, CloudError> {
    let mut counters = StageCounters::default();
    let Some(first) = coded_packets.first() else {
        return Ok(ReconstructOutcome::Incomplete { rank: 0 });
    };
    let mut decoder = Decoder::new(first.generation_id, cfg.rlnc_k, first.payload.len());
    let mut complete = None;
    for pkt in coded_packets {
        if let Insert::Complete(gen) = decoder.insert(pkt)? {
            complete = Some(gen);
            break;
        }
    }
    let Some(generation) = complete else {
        return Ok(ReconstructOutcome::Incomplete {
            rank: decoder.rank(),
        });
    };
    counters.rlnc_completions += 1;
    let payload_bytes = generation.unpack()?;
    let payload = WindowPayload::from_bytes(&payload_bytes)
        .map_err(|e: NodeError| CloudError::ConfigMismatch(e.to_string()))?;
    let (_, reconstructed) = decode_window_payload(cfg, &payload, side_info, &mut counters)?;
    if reconstructed.degraded_chunks.is_empty() {
        Ok(ReconstructOutcome::Signal(reconstructed))
    } else {
        Ok(ReconstructOutcome::Degraded(reconstructed))
    }
}

/// Incremental per-stream pipeline driven by packet arrivals; windows whose
/// side information has not arrived yet are parked and replayed once the
/// paired stream reconstructs.
pub struct StreamPipeline {
    pub cfg: StreamCfg,
    decoders: BTreeMap<u32, Decoder>,
    finished: BTreeMap<u32, bool>,
    parked: BTreeMap<u32, WindowPayload>,
    pub counters: StageCounters,
}

/// A window that fully reconstructed during an insert, plus bookkeeping.
pub struct PipelineYield {
    pub measurements: MeasurementWindow,
    pub reconstructed: ReconstructedWindow,
}

impl StreamPipeline {
    pub fn new(cfg: StreamCfg) -> Self {
        StreamPipeline {
            cfg,
            decoders: BTreeMap::new(),
            finished: BTreeMap::new(),
            parked: BTreeMap::new(),
            counters: StageCounters::default(),
        }
    }

    /// Feed one coded packet; if its generation just completed and side
    /// info is available (or unneeded), the window decodes now.
    pub fn insert(
        &mut self,
        pkt: &CodedPacket,
        side_info: impl Fn(u32) -> Option<MeasurementWindow>,
    ) -> Result<Option<PipelineYield>, CloudError> {
        let gen_id = pkt.generation_id;
        if self.finished.contains_key(&gen_id) {
            return Ok(None);
        }
        let decoder = self
            .decoders
            .entry(gen_id)
            .or_insert_with(|| Decoder::new(gen_id, self.cfg.rlnc_k, pkt.payload.len()));
        let Insert::Complete(generation) = decoder.insert(pkt)? else {
            return Ok(None);
        };
        self.counters.rlnc_completions += 1;
        self.decoders.remove(&gen_id);
        self.finished.insert(gen_id, true);
        let payload_bytes = generation.unpack()?;
        let payload = WindowPayload::from_bytes(&payload_bytes)
            .map_err(|e: NodeError| CloudError::ConfigMismatch(e.to_string()))?;
        self.try_decode(payload, side_info)
    }

    fn needs_side_info(&self) -> bool {
        self.cfg.dsc.is_some()
    }

    fn try_decode(
        &mut self,
        payload: WindowPayload,
        side_info: impl Fn(u32) -> Option<MeasurementWindow>,
    ) -> Result<Option<PipelineYield>, CloudError> {
        let side = if self.needs_side_info() {
            match side_info(payload.window) {
                Some(side) => Some(side),
                None => {
                    self.parked.insert(payload.window, payload);
                    return Ok(None);
                }
            }
        } else {
            None
        };
        let (measurements, reconstructed) =
            decode_window_payload(&self.cfg, &payload, side.as_ref(), &mut self.counters)?;
        Ok(Some(PipelineYield {
            measurements,
            reconstructed,
        }))
    }

    /// Replay a parked window once its side information exists.
    pub fn unpark(
        &mut self,
        window: u32,
        side_info: impl Fn(u32) -> Option<MeasurementWindow>,
    ) -> Result<Option<PipelineYield>, CloudError> {
        match self.parked.remove(&window) {
            Some(payload) => self.try_decode(payload, side_info),
            None => Ok(None),
        }
    }

    pub fn pending_rank(&self, window: u32) -> Option<usize> {
        self.decoders.get(&window).map(Decoder::rank)
    }

    pub fn open_generations(&self) -> Vec<(u32, usize)> {
        self.decoders.iter().map(|(w, d)| (*w, d.rank())).collect()
    }

    pub fn parked_windows(&self) -> Vec<u32> {
        self.parked.keys().copied().collect()
    }
}

/// Per-index baseline statistics, frozen after training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnomalyModel {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub trained_on: usize,
    pub threshold_k: f64,
}

/// Train per-index mean and unbiased standard deviation; sigma is floored
/// so constant channels cannot blow the score up to infinity.
pub fn train(windows: &[Vec<f64>], threshold_k: f64) -> Result<AnomalyModel, CloudError> {
    if windows.len() < 2 {
        return Err(CloudError::InsufficientTraining(windows.len()));
    }
    let len = windows[0].len();
    if windows.iter().any(|w| w.len() != len) {
        return Err(CloudError::RaggedTraining);
    }
    // Summing in a canonical order keeps training bit-exact under window
    // permutation, not just approximately symmetric.
    let sorted_sum = |mut vals: Vec<f64>| -> f64 {
        vals.sort_by(f64::total_cmp);
        vals.iter().sum()
    };
    let n = windows.len() as f64;
    let mut mean = vec![0.0; len];
    let mut std = vec![0.0; len];
    for i in 0..len {
        let column: Vec<f64> = windows.iter().map(|w| w[i]).collect();
        let m = sorted_sum(column.clone()) / n;
        let deviations: Vec<f64> = column.iter().map(|&x| (x - m) * (x - m)).collect();
        mean[i] = m;
        std[i] = (sorted_sum(deviations) / (n - 1.0)).sqrt().max(SIGMA_FLOOR);
    }
    Ok(AnomalyModel {
        mean,
        std,
        trained_on: windows.len(),
        threshold_k,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Alarm {
    pub stream: String,
    pub t_us: u64,
    pub score: f64,
    pub threshold_k: f64,
}

/// Scoring interface so other detectors can slot in behind the same gate.
pub trait Detector {
    fn score(&self, window: &[f64]) -> Result<f64, CloudError>;
    fn threshold(&self) -> f64;

    fn detect(&self, stream: &str, t_us: u64, window: &[f64]) -> Result<Option<Alarm>, CloudError> {
        let score = self.score(window)?;
        Ok((score > self.threshold()).then(|| Alarm {
            stream: stream.to_string(),
            t_us,
            score,
            threshold_k: self.threshold(),
        }))
    }
}

impl Detector for AnomalyModel {
    /// Max absolute per-index z-score over the window.
    fn score(&self, window: &[f64]) -> Result<f64, CloudError> {
        if window.len() != self.mean.len() {
            return Err(CloudError::ShapeMismatch {
                want: self.mean.len(),
                got: window.len(),
            });
        }
        Ok(window
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(&x, (&m, &s))| (x - m).abs() / s)
            .fold(0.0, f64::max))
    }

    fn threshold(&self) -> f64 {
        self.threshold_k
    }
}
