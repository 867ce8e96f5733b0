// SPDX-License-Identifier: Apache-2.0

//! MAC-in-MAC framing used on the fabric: an outer Ethernet header whose
//! source and destination MACs carry the switch ingress and egress ports.

use thiserror::Error;

use super::topology::MAX_GLOBAL_PORT;

/// IEEE local-experimental EtherType.
pub const DEFAULT_INTERNAL_ETHERTYPE: u16 = 0x88b5;
/// Locally administered prefix of encoded port MACs.
pub const PORT_MAC_PREFIX: u64 = 0x0200_0000_0000;
pub const OUTER_LEN: usize = 14;

#[derive(Debug, Clone, Copy, Error, PartialEq, Eq)]
pub enum EncapError {
    #[error("invariant violated: packet is already encapsulated")]
    DoubleEncapsulation,
    #[error("port {0} cannot be encoded in a MAC (max {MAX_GLOBAL_PORT})")]
    PortOutOfRange(u16),
    #[error("fabric misdelivery: packet does not carry the internal EtherType")]
    Misdelivery,
    #[error("truncated outer header: {0} byte(s)")]
    Truncated(usize),
    #[error("outer MAC {0:#014x} does not encode a port")]
    BadMac(u64),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decapsulated {
    pub bytes: Vec<u8>,
    pub orig_ingress: u16,
    pub egress: u16,
}

pub fn mac_encode(port: u16) -> Result<u64, EncapError> {
    if port > MAX_GLOBAL_PORT {
        return Err(EncapError::PortOutOfRange(port));
    }
    Ok(PORT_MAC_PREFIX | u64::from(port))
}

pub fn mac_decode(mac: u64) -> Result<u16, EncapError> {
    if mac & !0xff != PORT_MAC_PREFIX {
        return Err(EncapError::BadMac(mac));
    }
    Ok((mac & 0xff) as u16)
}

/// True when the frame's first EtherType is `ethertype`.
pub fn is_internal(bytes: &[u8], ethertype: u16) -> bool {
    bytes.len() >= OUTER_LEN && u16::from_be_bytes([bytes[12], bytes[13]]) == ethertype
}

pub fn encapsulate(bytes: &[u8], ingress: u16, egress: u16, ethertype: u16) -> Result<Vec<u8>, EncapError> {
    if is_internal(bytes, ethertype) {
        return Err(EncapError::DoubleEncapsulation);
    }
    let src = mac_encode(ingress)?;
    let dst = mac_encode(egress)?;
    let mut out = Vec::with_capacity(bytes.len() + OUTER_LEN);
    out.extend_from_slice(&dst.to_be_bytes()[2..]);
    out.extend_from_slice(&src.to_be_bytes()[2..]);
    out.extend_from_slice(&ethertype.to_be_bytes());
    out.extend_from_slice(bytes);
    Ok(out)
}

pub fn decapsulate(bytes: &[u8], ethertype: u16) -> Result<Decapsulated, EncapError> {
    if bytes.len() >= 14 && !is_internal(bytes, ethertype) {
        return Err(EncapError::Misdelivery);
    }
    if bytes.len() < OUTER_LEN {
        return Err(EncapError::Truncated(bytes.len()));
    }
    let egress = mac_decode(crate::frame::mac_at(bytes, 0))?;
    let orig_ingress = mac_decode(crate::frame::mac_at(bytes, 6))?;
    Ok(Decapsulated { bytes: bytes[OUTER_LEN..].to_vec(), orig_ingress, egress })
}

#[cfg(test)]
mod tests {
    use super::*;

    const INNER: &[u8] = &[1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 0x08, 0x00, 0x45];

    #[test]
    fn worked_example() {
        let e = encapsulate(INNER, 3, 12, DEFAULT_INTERNAL_ETHERTYPE).unwrap();
        assert_eq!(&e[..6], &[0x02, 0, 0, 0, 0, 0x0c]);
        assert_eq!(&e[6..12], &[0x02, 0, 0, 0, 0, 0x03]);
        assert_eq!(&e[12..14], &[0x88, 0xb5]);
        assert_eq!(e.len(), INNER.len() + 14);
        assert_eq!(&e[14..], INNER);
    }

    #[test]
    fn zero_port() {
        let e = encapsulate(INNER, 0, 0, DEFAULT_INTERNAL_ETHERTYPE).unwrap();
        assert_eq!(&e[..6], &[0x02, 0, 0, 0, 0, 0]);
        assert_eq!(decapsulate(&e, DEFAULT_INTERNAL_ETHERTYPE).unwrap().egress, 0);
    }

    #[test]
    fn errors() {
        let t = DEFAULT_INTERNAL_ETHERTYPE;
        let e = encapsulate(INNER, 1, 2, t).unwrap();
        assert_eq!(encapsulate(&e, 1, 2, t), Err(EncapError::DoubleEncapsulation));
        assert_eq!(encapsulate(INNER, 256, 2, t), Err(EncapError::PortOutOfRange(256)));
        assert_eq!(decapsulate(INNER, t), Err(EncapError::Misdelivery));
        assert_eq!(decapsulate(&e[..10], t), Err(EncapError::Truncated(10)));
        let mut bad = e.clone();
        bad[0] = 0x04;
        assert!(matches!(decapsulate(&bad, t), Err(EncapError::BadMac(_))));
    }

    #[test]
    fn configurable_ethertype() {
        let e = encapsulate(INNER, 1, 2, 0x9999).unwrap();
        assert!(is_internal(&e, 0x9999));
        assert_eq!(decapsulate(&e, DEFAULT_INTERNAL_ETHERTYPE), Err(EncapError::Misdelivery));
    }
}
