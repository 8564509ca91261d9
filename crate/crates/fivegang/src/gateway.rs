//! IIoT edge gateway: ingress adapters, bounded on-site buffering, the
//! three transmission modes, lossless batch compression, and transfer-cost
//! accounting.
//!
//! Batches sort buffered readings by (adapter, channel, t) and encode each
//! field as a zig-zag varint delta against the previous record; values are
//! delta-coded on their raw f64 bit patterns so decompression is exact.
//! Security (the gateway's crypto stack) appears only as a fixed per-batch
//! byte overhead.

use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use thiserror::Error;

/// Fixed-width footprint of one reading, used for buffer bounds and the
/// compression-ratio baseline: t u64 + adapter u32 + channel u32 + value f64.
pub const RAW_READING_BYTES: usize = 24;

/// Batch wire header: gateway id u32, seq u32, created_at u64, record count
/// u32, flags u8.
pub const BATCH_HEADER_BYTES: usize = 21;

/// Flag bit set when the configured security overhead was added to the
/// batch's accounted size.
pub const FLAG_SECURED: u8 = 0b0000_0001;

#[derive(Debug, Error, PartialEq)]
pub enum GatewayError {
    #[error("unknown adapter {0}")]
    UnknownAdapter(u32),
    #[error("no providers available")]
    NoProviders,
    #[error("batch wire data truncated or inconsistent")]
    MalformedWire,
}

/// Abstract ingress technology; behaviourally identical, kept as metadata.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdapterKind {
    Analog420ma,
    Fieldbus,
    Ethernet,
    Ble,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reading {
    pub adapter: u32,
    pub channel: u32,
    pub t_us: u64,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GatewayMode {
    /// Flush on every ingest.
    Online,
    /// Flush at fixed multiples of the period since mode entry.
    Interval { period_us: u64 },
    /// Flush only when the wake predicate holds.
    Sleep {
        #[serde(default)]
        wake_buffered_bytes: Option<u64>,
        #[serde(default)]
        wake_on_alarm: bool,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tariff {
    pub provider: u32,
    pub cost_per_byte: f64,
    pub cost_per_connection_event: f64,
    pub signal_strength: f64,
}

/// Pick the provider with the strongest signal; ties go to the lowest
/// provider id (unsteered roaming).
pub fn select_provider(tariffs: &[Tariff]) -> Result<&Tariff, GatewayError> {
    tariffs
        .iter()
        .min_by(|a, b| {
            b.signal_strength
                .total_cmp(&a.signal_strength)
                .then(a.provider.cmp(&b.provider))
        })
        .ok_or(GatewayError::NoProviders)
}

/// bytes * cost_per_byte + one connection event.
pub fn transfer_cost(batch: &Batch, tariff: &Tariff) -> f64 {
    batch.byte_size as f64 * tariff.cost_per_byte + tariff.cost_per_connection_event
}

// Zig-zag LEB128 varints.

fn zigzag(v: i64) -> u64 {
    ((v << 1) ^ (v >> 63)) as u64
}

fn unzigzag(v: u64) -> i64 {
    ((v >> 1) as i64) ^ -((v & 1) as i64)
}

pub fn write_varint(out: &mut Vec<u8>, mut v: u64) {
    loop {
        let byte = (v & 0x7f) as u8;
        v >>= 7;
        if v == 0 {
            out.push(byte);
            return;
        }
        out.push(byte | 0x80);
    }
}

pub fn read_varint(bytes: &[u8], pos: &mut usize) -> Result<u64, GatewayError> {
    let mut out = 0u64;
    let mut shift = 0;
    loop {
        let &byte = bytes.get(*pos).ok_or(GatewayError::MalformedWire)?;
        *pos += 1;
        if shift >= 64 {
            return Err(GatewayError::MalformedWire);
        }
        out |= u64::from(byte & 0x7f) << shift;
        if byte & 0x80 == 0 {
            return Ok(out);
        }
        shift += 7;
    }
}

fn write_signed(out: &mut Vec<u8>, v: i64) {
    write_varint(out, zigzag(v));
}

fn read_signed(bytes: &[u8], pos: &mut usize) -> Result<i64, GatewayError> {
    Ok(unzigzag(read_varint(bytes, pos)?))
}

/// A compressed shipment of readings.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub gateway_id: u32,
    pub seq: u32,
    pub created_at_us: u64,
    pub record_count: u32,
    pub flags: u8,
    pub payload: Vec<u8>,
    /// Accounted wire size: header + payload + security overhead.
    pub byte_size: usize,
}

impl Batch {
    fn compress(records: &[Reading]) -> Vec<u8> {
        let mut out = Vec::new();
        let mut prev = Reading {
            adapter: 0,
            channel: 0,
            t_us: 0,
            value: 0.0,
        };
        for r in records {
            write_signed(&mut out, i64::from(r.adapter) - i64::from(prev.adapter));
            write_signed(&mut out, i64::from(r.channel) - i64::from(prev.channel));
            write_signed(&mut out, r.t_us.wrapping_sub(prev.t_us) as i64);
            let bits = r.value.to_bits().wrapping_sub(prev.value.to_bits());
            write_signed(&mut out, bits as i64);
            prev = *r;
        }
        out
    }

    /// Exact inverse of the flush-side compression.
    pub fn decompress(&self) -> Result<Vec<Reading>, GatewayError> {
        let mut out = Vec::with_capacity(self.record_count as usize);
        let mut pos = 0;
        let mut prev = Reading {
            adapter: 0,
            channel: 0,
            t_us: 0,
            value: 0.0,
        };
        for _ in 0..self.record_count {
            let adapter = i64::from(prev.adapter) + read_signed(&self.payload, &mut pos)?;
            let channel = i64::from(prev.channel) + read_signed(&self.payload, &mut pos)?;
            let t_us = prev.t_us.wrapping_add(read_signed(&self.payload, &mut pos)? as u64);
            let bits = prev
                .value
                .to_bits()
                .wrapping_add(read_signed(&self.payload, &mut pos)? as u64);
            let r = Reading {
                adapter: u32::try_from(adapter).map_err(|_| GatewayError::MalformedWire)?,
                channel: u32::try_from(channel).map_err(|_| GatewayError::MalformedWire)?,
                t_us,
                value: f64::from_bits(bits),
            };
            out.push(r);
            prev = r;
        }
        if pos != self.payload.len() {
            return Err(GatewayError::MalformedWire);
        }
        Ok(out)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(BATCH_HEADER_BYTES + self.payload.len());
        out.extend_from_slice(&self.gateway_id.to_be_bytes());
        out.extend_from_slice(&self.seq.to_be_bytes());
        out.extend_from_slice(&self.created_at_us.to_be_bytes());
        out.extend_from_slice(&self.record_count.to_be_bytes());
        out.push(self.flags);
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn from_bytes(bytes: &[u8], security_overhead: usize) -> Result<Self, GatewayError> {
        if bytes.len() < BATCH_HEADER_BYTES {
            return Err(GatewayError::MalformedWire);
        }
        let gateway_id = u32::from_be_bytes(bytes[0..4].try_into().expect("4 bytes"));
        let seq = u32::from_be_bytes(bytes[4..8].try_into().expect("4 bytes"));
        let created_at_us = u64::from_be_bytes(bytes[8..16].try_into().expect("8 bytes"));
        let record_count = u32::from_be_bytes(bytes[16..20].try_into().expect("4 bytes"));
        let flags = bytes[20];
        let payload = bytes[BATCH_HEADER_BYTES..].to_vec();
        let secured = flags & FLAG_SECURED != 0;
        let byte_size = bytes.len() + if secured { security_overhead } else { 0 };
        Ok(Batch {
            gateway_id,
            seq,
            created_at_us,
            record_count,
            flags,
            payload,
            byte_size,
        })
    }
}

/// One gateway instance.
pub struct Gateway {
    pub id: u32,
    pub name: String,
    adapters: Vec<u32>,
    buffer: VecDeque<Reading>,
    pub mode: GatewayMode,
    pub mode_entered_at_us: u64,
    pub max_buffer_bytes: usize,
    pub security_overhead_bytes: usize,
    pub alarm_flag: bool,
    pub evictions: u64,
    pub ingested: u64,
    next_seq: u32,
}

impl Gateway {
    pub fn new(id: u32, name: &str, mode: GatewayMode, max_buffer_bytes: usize) -> Self {
        Gateway {
            id,
            name: name.to_string(),
            adapters: Vec::new(),
            buffer: VecDeque::new(),
            mode,
            mode_entered_at_us: 0,
            max_buffer_bytes,
            security_overhead_bytes: 0,
            alarm_flag: false,
            evictions: 0,
            ingested: 0,
            next_seq: 0,
        }
    }

    pub fn register_adapter(&mut self, adapter: u32, _kind: AdapterKind) {
        if !self.adapters.contains(&adapter) {
            self.adapters.push(adapter);
        }
    }

    pub fn buffered_count(&self) -> usize {
        self.buffer.len()
    }

    pub fn buffered_bytes(&self) -> usize {
        self.buffer.len() * RAW_READING_BYTES
    }

    /// Append a reading; the buffer is bounded, oldest-first eviction.
    pub fn ingest(&mut self, adapter: u32, reading: Reading) -> Result<usize, GatewayError> {
        if !self.adapters.contains(&adapter) {
            return Err(GatewayError::UnknownAdapter(adapter));
        }
        self.buffer.push_back(reading);
        self.ingested += 1;
        while self.buffered_bytes() > self.max_buffer_bytes {
            self.buffer.pop_front();
            self.evictions += 1;
        }
        Ok(self.buffer.len())
    }

    /// Does the active mode call for a flush at `now`? `ingest_edge` marks
    /// that this poll rides an ingest event (the Online trigger).
    pub fn should_flush(&self, now_us: u64, ingest_edge: bool) -> bool {
        if self.buffer.is_empty() {
            return false;
        }
        match &self.mode {
            GatewayMode::Online => ingest_edge,
            GatewayMode::Interval { period_us } => {
                *period_us > 0
                    && now_us >= self.mode_entered_at_us
                    && (now_us - self.mode_entered_at_us).is_multiple_of(*period_us)
            }
            GatewayMode::Sleep {
                wake_buffered_bytes,
                wake_on_alarm,
            } => {
                let bytes_hit =
                    wake_buffered_bytes.is_some_and(|t| self.buffered_bytes() as u64 >= t);
                let alarm_hit = *wake_on_alarm && self.alarm_flag;
                bytes_hit || alarm_hit
            }
        }
    }

    /// Drain the buffer into one compressed batch. Empty buffer yields none.
    pub fn flush(&mut self, now_us: u64) -> Option<Batch> {
        if self.buffer.is_empty() {
            return None;
        }
        let mut records: Vec<Reading> = self.buffer.drain(..).collect();
        records.sort_by_key(|r| (r.adapter, r.channel, r.t_us));
        let payload = Batch::compress(&records);
        let secured = self.security_overhead_bytes > 0;
        let flags = if secured { FLAG_SECURED } else { 0 };
        let byte_size = BATCH_HEADER_BYTES + payload.len() + self.security_overhead_bytes;
        let batch = Batch {
            gateway_id: self.id,
            seq: self.next_seq,
            created_at_us: now_us,
            record_count: records.len() as u32,
            flags,
            payload,
            byte_size,
        };
        self.next_seq += 1;
        self.alarm_flag = false;
        Some(batch)
    }
}
