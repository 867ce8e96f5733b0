// SPDX-License-Identifier: Apache-2.0

//! Builds Ethernet / VLAN / IPv4 header stacks as raw bytes.

pub const ETHERTYPE_IPV4: u16 = 0x0800;
pub const ETHERTYPE_VLAN: u16 = 0x8100;

pub const ETH_LEN: usize = 14;
pub const VLAN_LEN: usize = 4;
pub const IPV4_LEN: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Vlan {
    pub pcp: u8,
    pub dei: bool,
    pub vid: u16,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ipv4 {
    pub src: u32,
    pub dst: u32,
    pub ttl: u8,
    pub protocol: u8,
    pub total_len: u16,
    pub identification: u16,
}

impl Ipv4 {
    pub fn new(src: u32, dst: u32) -> Self {
        Ipv4 { src, dst, ttl: 64, protocol: 17, total_len: IPV4_LEN as u16, identification: 0 }
    }
}

/// A header stack description. `ether_type` is used for the innermost
/// EtherType when no IPv4 header follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Frame {
    pub dst_mac: u64,
    pub src_mac: u64,
    pub vlan: Option<Vlan>,
    pub ipv4: Option<Ipv4>,
    pub ether_type: u16,
}

impl Frame {
    pub fn ipv4(src_mac: u64, dst_mac: u64, ip: Ipv4) -> Self {
        Frame { dst_mac, src_mac, vlan: None, ipv4: Some(ip), ether_type: ETHERTYPE_IPV4 }
    }

    pub fn with_vlan(mut self, pcp: u8, vid: u16) -> Self {
        self.vlan = Some(Vlan { pcp, dei: false, vid });
        self
    }

    pub fn header_len(&self) -> usize {
        ETH_LEN + self.vlan.map_or(0, |_| VLAN_LEN) + self.ipv4.map_or(0, |_| IPV4_LEN)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.header_len());
        out.extend_from_slice(&self.dst_mac.to_be_bytes()[2..]);
        out.extend_from_slice(&self.src_mac.to_be_bytes()[2..]);
        let inner = if self.ipv4.is_some() { ETHERTYPE_IPV4 } else { self.ether_type };
        if let Some(v) = self.vlan {
            out.extend_from_slice(&ETHERTYPE_VLAN.to_be_bytes());
            let tci = (u16::from(v.pcp & 7) << 13) | (u16::from(v.dei) << 12) | (v.vid & 0x0fff);
            out.extend_from_slice(&tci.to_be_bytes());
        }
        out.extend_from_slice(&inner.to_be_bytes());
        if let Some(ip) = self.ipv4 {
            out.push(0x45);
            out.push(0);
            out.extend_from_slice(&ip.total_len.to_be_bytes());
            out.extend_from_slice(&ip.identification.to_be_bytes());
            out.extend_from_slice(&[0, 0]);
            out.push(ip.ttl);
            out.push(ip.protocol);
            out.extend_from_slice(&[0, 0]);
            out.extend_from_slice(&ip.src.to_be_bytes());
            out.extend_from_slice(&ip.dst.to_be_bytes());
        }
        out
    }
}

/// Reads the 6-byte MAC address at `at`.
pub fn mac_at(bytes: &[u8], at: usize) -> u64 {
    bytes[at..at + 6].iter().fold(0, |acc, b| (acc << 8) | u64::from(*b))
}

pub fn ipv4_addr(a: u8, b: u8, c: u8, d: u8) -> u32 {
    u32::from_be_bytes([a, b, c, d])
}
