// SPDX-License-Identifier: Apache-2.0

use thiserror::Error;

/// Simulated time in picoseconds.
pub type Time = u64;

pub const PS_PER_NS: Time = 1_000;

pub const DEFAULT_MIN_SIZE: u32 = 64;
pub const DEFAULT_MAX_SIZE: u32 = 1518;

/// Time to clock `bytes` onto a wire of `gbps`.
pub fn serialization_ps(bytes: u32, gbps: f64) -> Time {
    (f64::from(bytes) * 8_000.0 / gbps).round() as Time
}

#[derive(Debug, Clone, Copy, Error, PartialEq, Eq)]
#[error("packet size {size} outside {min}..={max}")]
pub struct SizeError {
    pub size: u32,
    pub min: u32,
    pub max: u32,
}

/// A packet in flight. Only the header stack is materialized; the payload
/// is represented by its length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Packet {
    pub id: u64,
    pub bytes: Vec<u8>,
    pub payload_len: u32,
    /// Time the packet was completely received at its ingress port.
    pub arrival: Time,
    /// Earliest time the packet may leave its current queue.
    pub ready: Time,
    pub departure: Option<Time>,
    pub pcp: u8,
    pub ingress_port: u16,
    /// Identifies packets that must stay in order relative to each other.
    pub flow: u64,
}

impl Packet {
    pub fn new(
        id: u64,
        headers: Vec<u8>,
        size: u32,
        arrival: Time,
        ingress_port: u16,
        flow: u64,
        bounds: (u32, u32),
    ) -> Result<Packet, SizeError> {
        let (min, max) = bounds;
        if size < min || size > max || (size as usize) < headers.len() {
            return Err(SizeError { size, min, max });
        }
        Ok(Packet {
            id,
            payload_len: size - headers.len() as u32,
            bytes: headers,
            arrival,
            ready: arrival,
            departure: None,
            pcp: 0,
            ingress_port,
            flow,
        })
    }

    /// Bytes on the wire in the packet's current form.
    pub fn size(&self) -> u32 {
        self.bytes.len() as u32 + self.payload_len
    }

    pub fn latency(&self) -> Option<Time> {
        self.departure.map(|d| d - self.arrival)
    }
}
