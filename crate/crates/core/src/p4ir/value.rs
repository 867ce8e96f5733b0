// SPDX-License-Identifier: Apache-2.0

use std::fmt;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// An unsigned literal of up to 64 bits.
///
/// Accepts JSON numbers and strings in decimal, `0x` hex, dotted IPv4
/// (`10.0.0.1`) or colon-separated MAC (`02:00:00:00:00:0c`) notation.
/// Always serializes as a JSON number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Value(pub u64);

impl From<u64> for Value {
    fn from(v: u64) -> Self {
        Value(v)
    }
}

impl Serialize for Value {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(self.0)
    }
}

impl<'de> Deserialize<'de> for Value {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = Value;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("an unsigned integer or a literal string (hex, IPv4, MAC)")
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Value, E> {
                Ok(Value(v))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Value, E> {
                u64::try_from(v).map(Value).map_err(|_| E::custom(format!("negative literal {v}")))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<Value, E> {
                parse_literal(v).map(Value).map_err(E::custom)
            }
        }
        d.deserialize_any(V)
    }
}

/// Parses a literal in any of the notations accepted by [`Value`].
pub fn parse_literal(s: &str) -> Result<u64, String> {
    let bad = || format!("`{s}` is not a valid literal");
    if let Some(hex) = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        return u64::from_str_radix(&hex.replace('_', ""), 16).map_err(|_| bad());
    }
    if s.contains(':') {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 6 {
            return Err(bad());
        }
        let mut v = 0u64;
        for p in parts {
            if p.is_empty() || p.len() > 2 {
                return Err(bad());
            }
            v = (v << 8) | u64::from(u8::from_str_radix(p, 16).map_err(|_| bad())?);
        }
        return Ok(v);
    }
    if s.contains('.') {
        let addr: std::net::Ipv4Addr = s.parse().map_err(|_| bad())?;
        return Ok(u64::from(u32::from(addr)));
    }
    s.parse::<u64>().map_err(|_| bad())
}

/// Formats a 48-bit value as a MAC address.
pub fn format_mac(v: u64) -> String {
    let b = v.to_be_bytes();
    format!("{:02x}:{:02x}:{:02x}:{:02x}:{:02x}:{:02x}", b[2], b[3], b[4], b[5], b[6], b[7])
}
