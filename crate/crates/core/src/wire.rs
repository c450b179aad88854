//! Byte layout of AnonBoot messages carried in `OP_RETURN` outputs.
//!
//! Every message is wrapped in a three byte script prefix
//! (`OP_RETURN`, `OP_PUSHDATA1`, payload length) followed by the payload:
//!
//! ```text
//! advertisement (80 bytes)                request (28 bytes)
//!  0..2   magic "AB"                       0..2   magic "AB"
//!  2      version                          2      version
//!  3      type << 4 | reserved             3      type << 4 | reserved
//!  4      D << 7 | IP << 6 | reserved      4..6   service id (BE)
//!  5..38  connector public key            6..20  capabilities
//! 38..54  address (IPv6 / v4-mapped)      20..28  nonce
//! 54..56  port (BE)
//! 56..58  service id (BE)
//! 58..72  capabilities
//! 72..80  nonce
//! ```
//!
//! Multi-byte integers are big-endian throughout.

use std::fmt;
use std::net::{IpAddr, Ipv4Addr, Ipv6Addr, SocketAddr};

use thiserror::Error;

pub const MAGIC: [u8; 2] = *b"AB";
pub const PROTOCOL_VERSION: u8 = 1;

pub const OP_RETURN: u8 = 0x6a;
pub const OP_PUSHDATA1: u8 = 0x4c;
pub const SCRIPT_PREFIX_LEN: usize = 3;
/// Largest payload a standard `OP_RETURN` output relays.
pub const MAX_PAYLOAD_LEN: usize = 80;

pub const ADVERTISEMENT_LEN: usize = 80;
pub const REQUEST_LEN: usize = 28;

pub const CONNECTOR_KEY_LEN: usize = 33;
pub const CAPABILITIES_LEN: usize = 14;
pub const NONCE_LEN: usize = 8;

const HEADER_LEN: usize = 4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WireError {
    #[error("invalid field `{field}`: {reason}")]
    InvalidField { field: &'static str, reason: &'static str },
    #[error("not an AnonBoot script")]
    NotAnonBoot,
    #[error("unsupported protocol version {0}")]
    UnsupportedVersion(u8),
    #[error("unknown message type {0}")]
    UnknownType(u8),
    #[error("length mismatch: expected {expected} bytes, found {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("payload of {0} bytes exceeds the OP_RETURN limit")]
    PayloadTooLarge(usize),
    #[error("invalid hex: {0}")]
    Hex(#[from] hex::FromHexError),
}

fn invalid(field: &'static str, reason: &'static str) -> WireError {
    WireError::InvalidField { field, reason }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum MessageType {
    Advertisement = 1,
    Request = 2,
}

impl MessageType {
    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(MessageType::Advertisement),
            2 => Some(MessageType::Request),
            _ => None,
        }
    }

    pub fn payload_len(self) -> usize {
        match self {
            MessageType::Advertisement => ADVERTISEMENT_LEN,
            MessageType::Request => REQUEST_LEN,
        }
    }
}

/// Version and reserved nibble of the four byte AnonBoot header. The magic
/// and the type nibble are implied by the message kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Header {
    pub version: u8,
    /// Low nibble of byte 3. Zero for messages built locally, preserved when decoded.
    pub reserved: u8,
}

impl Default for Header {
    fn default() -> Self {
        Header {
            version: PROTOCOL_VERSION,
            reserved: 0,
        }
    }
}

impl Header {
    fn validate(&self) -> Result<(), WireError> {
        if self.version != PROTOCOL_VERSION {
            return Err(invalid("version", "only version 1 is defined"));
        }
        if self.reserved > 0x0f {
            return Err(invalid("reserved", "reserved bits must fit in a nibble"));
        }
        Ok(())
    }

    fn write(&self, msg_type: MessageType, out: &mut Vec<u8>) {
        out.extend_from_slice(&MAGIC);
        out.push(self.version);
        out.push(((msg_type as u8) << 4) | self.reserved);
    }
}

/// Compressed elliptic-curve public key of a peer's connector.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ConnectorKey(pub [u8; CONNECTOR_KEY_LEN]);

impl ConnectorKey {
    /// Checks the compressed-point prefix byte only; curve membership is
    /// verified when a signature is checked.
    pub fn is_well_formed(&self) -> bool {
        matches!(self.0[0], 0x02 | 0x03)
    }

    pub fn as_bytes(&self) -> &[u8; CONNECTOR_KEY_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, WireError> {
        let mut out = [0u8; CONNECTOR_KEY_LEN];
        hex::decode_to_slice(s, &mut out)?;
        Ok(ConnectorKey(out))
    }
}

impl fmt::Debug for ConnectorKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ConnectorKey({})", self.to_hex())
    }
}

/// Fourteen capability bytes. In requests bytes 0..2 carry the requested
/// committee size; bytes 2..14 are service specific.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Capabilities(pub [u8; CAPABILITIES_LEN]);

impl Capabilities {
    pub const SERVICE_SPECIFIC: std::ops::Range<usize> = 2..CAPABILITIES_LEN;

    /// Request capabilities asking for a committee of `k` peers with no
    /// further requirements.
    pub fn for_committee(k: u16) -> Self {
        Capabilities::default().with_committee_size(k)
    }

    pub fn committee_size(&self) -> u16 {
        u16::from_be_bytes([self.0[0], self.0[1]])
    }

    pub fn with_committee_size(mut self, k: u16) -> Self {
        self.0[..2].copy_from_slice(&k.to_be_bytes());
        self
    }

    pub fn service_specific(&self) -> &[u8] {
        &self.0[Self::SERVICE_SPECIFIC]
    }

    /// Element-wise `offered >= required` over the service-specific bytes.
    pub fn satisfies(&self, required: &Capabilities) -> bool {
        self.service_specific()
            .iter()
            .zip(required.service_specific())
            .all(|(offered, needed)| offered >= needed)
    }

    /// Element-wise maximum over all fourteen bytes.
    pub fn merge(&self, other: &Capabilities) -> Capabilities {
        let mut out = self.0;
        for (dst, src) in out.iter_mut().zip(other.0) {
            *dst = (*dst).max(src);
        }
        Capabilities(out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PeerAdvertisement {
    pub header: Header,
    /// D-flag: the endpoint is the service itself and the connector can be bypassed.
    pub direct: bool,
    /// IP-flag: the address is IPv6 rather than IPv4.
    pub ipv6: bool,
    /// Low six bits of the flags byte.
    pub reserved_flags: u8,
    pub connector_key: ConnectorKey,
    pub address: [u8; 16],
    pub port: u16,
    pub service_id: u16,
    pub capabilities: Capabilities,
    pub nonce: [u8; NONCE_LEN],
}

impl PeerAdvertisement {
    /// Builds an advertisement for `endpoint`, with a zero nonce to be
    /// replaced by a PoW solution.
    pub fn new(connector_key: ConnectorKey, endpoint: SocketAddr, service_id: u16, capabilities: Capabilities) -> Self {
        let (ipv6, address) = match endpoint.ip() {
            IpAddr::V4(v4) => (false, v4.to_ipv6_mapped().octets()),
            IpAddr::V6(v6) => (true, v6.octets()),
        };
        PeerAdvertisement {
            header: Header::default(),
            direct: false,
            ipv6,
            reserved_flags: 0,
            connector_key,
            address,
            port: endpoint.port(),
            service_id,
            capabilities,
            nonce: [0u8; NONCE_LEN],
        }
    }

    pub fn endpoint(&self) -> SocketAddr {
        let ip = if self.ipv6 {
            IpAddr::V6(Ipv6Addr::from(self.address))
        } else {
            let [a, b, c, d] = [self.address[12], self.address[13], self.address[14], self.address[15]];
            IpAddr::V4(Ipv4Addr::new(a, b, c, d))
        };
        SocketAddr::new(ip, self.port)
    }

    pub fn validate(&self) -> Result<(), WireError> {
        self.header.validate()?;
        if self.reserved_flags > 0x3f {
            return Err(invalid("reserved_flags", "reserved flags must fit in six bits"));
        }
        if !self.connector_key.is_well_formed() {
            return Err(invalid("connector_key", "compressed point prefix must be 0x02 or 0x03"));
        }
        if !self.ipv6 && !is_ipv4_mapped(&self.address) {
            return Err(invalid("address", "IPv4 addresses must use the v4-mapped form"));
        }
        Ok(())
    }

    pub fn to_payload(&self) -> Result<Vec<u8>, WireError> {
        self.validate()?;
        let mut out = Vec::with_capacity(ADVERTISEMENT_LEN);
        self.header.write(MessageType::Advertisement, &mut out);
        out.push(((self.direct as u8) << 7) | ((self.ipv6 as u8) << 6) | self.reserved_flags);
        out.extend_from_slice(&self.connector_key.0);
        out.extend_from_slice(&self.address);
        out.extend_from_slice(&self.port.to_be_bytes());
        out.extend_from_slice(&self.service_id.to_be_bytes());
        out.extend_from_slice(&self.capabilities.0);
        out.extend_from_slice(&self.nonce);
        debug_assert_eq!(out.len(), ADVERTISEMENT_LEN);
        Ok(out)
    }

    fn from_payload(header: Header, p: &[u8]) -> Self {
        let flags = p[4];
        PeerAdvertisement {
            header,
            direct: flags & 0x80 != 0,
            ipv6: flags & 0x40 != 0,
            reserved_flags: flags & 0x3f,
            connector_key: ConnectorKey(array(&p[5..38])),
            address: array(&p[38..54]),
            port: u16::from_be_bytes([p[54], p[55]]),
            service_id: u16::from_be_bytes([p[56], p[57]]),
            capabilities: Capabilities(array(&p[58..72])),
            nonce: array(&p[72..80]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ServiceRequest {
    pub header: Header,
    pub service_id: u16,
    pub capabilities: Capabilities,
    /// User-chosen entropy mixed into the election seed.
    pub nonce: [u8; NONCE_LEN],
}

impl ServiceRequest {
    pub fn new(service_id: u16, capabilities: Capabilities, nonce: [u8; NONCE_LEN]) -> Self {
        ServiceRequest {
            header: Header::default(),
            service_id,
            capabilities,
            nonce,
        }
    }

    pub fn committee_size(&self) -> u16 {
        self.capabilities.committee_size()
    }

    pub fn validate(&self) -> Result<(), WireError> {
        self.header.validate()?;
        if self.committee_size() == 0 {
            return Err(invalid("capabilities", "requested committee size must be at least 1"));
        }
        Ok(())
    }

    pub fn to_payload(&self) -> Result<Vec<u8>, WireError> {
        self.validate()?;
        let mut out = Vec::with_capacity(REQUEST_LEN);
        self.header.write(MessageType::Request, &mut out);
        out.extend_from_slice(&self.service_id.to_be_bytes());
        out.extend_from_slice(&self.capabilities.0);
        out.extend_from_slice(&self.nonce);
        debug_assert_eq!(out.len(), REQUEST_LEN);
        Ok(out)
    }

    fn from_payload(header: Header, p: &[u8]) -> Self {
        ServiceRequest {
            header,
            service_id: u16::from_be_bytes([p[4], p[5]]),
            capabilities: Capabilities(array(&p[6..20])),
            nonce: array(&p[20..28]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Message {
    Advertisement(PeerAdvertisement),
    Request(ServiceRequest),
}

impl Message {
    pub fn encode(&self) -> Result<OpReturnScript, WireError> {
        match self {
            Message::Advertisement(ad) => encode_peer_advertisement(ad),
            Message::Request(req) => encode_service_request(req),
        }
    }
}

impl From<PeerAdvertisement> for Message {
    fn from(ad: PeerAdvertisement) -> Self {
        Message::Advertisement(ad)
    }
}

impl From<ServiceRequest> for Message {
    fn from(req: ServiceRequest) -> Self {
        Message::Request(req)
    }
}

/// An `OP_RETURN OP_PUSHDATA1 <len> <payload>` output script.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct OpReturnScript {
    payload: Vec<u8>,
}

impl OpReturnScript {
    pub fn new(payload: Vec<u8>) -> Result<Self, WireError> {
        if payload.len() > MAX_PAYLOAD_LEN {
            return Err(WireError::PayloadTooLarge(payload.len()));
        }
        Ok(OpReturnScript { payload })
    }

    pub fn payload(&self) -> &[u8] {
        &self.payload
    }

    /// Total script length including the three byte prefix.
    pub fn encoded_len(&self) -> usize {
        SCRIPT_PREFIX_LEN + self.payload.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.push(OP_RETURN);
        out.push(OP_PUSHDATA1);
        out.push(self.payload.len() as u8);
        out.extend_from_slice(&self.payload);
        out
    }

    /// Parses raw script bytes. Anything that is not a single
    /// `OP_PUSHDATA1` push behind `OP_RETURN` is [`WireError::NotAnonBoot`].
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WireError> {
        if bytes.len() < SCRIPT_PREFIX_LEN || bytes[0] != OP_RETURN || bytes[1] != OP_PUSHDATA1 {
            return Err(WireError::NotAnonBoot);
        }
        let declared = bytes[2] as usize;
        if declared > MAX_PAYLOAD_LEN {
            return Err(WireError::NotAnonBoot);
        }
        let actual = bytes.len() - SCRIPT_PREFIX_LEN;
        if declared != actual {
            return Err(WireError::LengthMismatch {
                expected: declared,
                actual,
            });
        }
        Ok(OpReturnScript {
            payload: bytes[SCRIPT_PREFIX_LEN..].to_vec(),
        })
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.to_bytes())
    }

    pub fn from_hex(s: &str) -> Result<Self, WireError> {
        Self::from_bytes(&hex::decode(s.trim())?)
    }
}

pub fn encode_peer_advertisement(ad: &PeerAdvertisement) -> Result<OpReturnScript, WireError> {
    Ok(OpReturnScript {
        payload: ad.to_payload()?,
    })
}

pub fn encode_service_request(req: &ServiceRequest) -> Result<OpReturnScript, WireError> {
    Ok(OpReturnScript {
        payload: req.to_payload()?,
    })
}

/// Decodes a script into an AnonBoot message.
///
/// Only framing is checked here (magic, version, type, length). Field-level
/// invariants such as the public key prefix are left to
/// [`PeerAdvertisement::validate`] so that malformed but framed messages can
/// be reported as such by the state derivation.
pub fn decode_message(script: &OpReturnScript) -> Result<Message, WireError> {
    let p = script.payload();
    if p.len() < MAGIC.len() || p[..2] != MAGIC {
        return Err(WireError::NotAnonBoot);
    }
    if p.len() < HEADER_LEN {
        return Err(WireError::LengthMismatch {
            expected: HEADER_LEN,
            actual: p.len(),
        });
    }
    let version = p[2];
    if version != PROTOCOL_VERSION {
        return Err(WireError::UnsupportedVersion(version));
    }
    let type_code = p[3] >> 4;
    let msg_type = MessageType::from_code(type_code).ok_or(WireError::UnknownType(type_code))?;
    let expected = msg_type.payload_len();
    if p.len() != expected {
        return Err(WireError::LengthMismatch {
            expected,
            actual: p.len(),
        });
    }
    let header = Header {
        version,
        reserved: p[3] & 0x0f,
    };
    Ok(match msg_type {
        MessageType::Advertisement => Message::Advertisement(PeerAdvertisement::from_payload(header, p)),
        MessageType::Request => Message::Request(ServiceRequest::from_payload(header, p)),
    })
}

/// Decodes raw script bytes, see [`decode_message`].
pub fn decode_script_bytes(bytes: &[u8]) -> Result<Message, WireError> {
    decode_message(&OpReturnScript::from_bytes(bytes)?)
}

fn is_ipv4_mapped(address: &[u8; 16]) -> bool {
    address[..10].iter().all(|b| *b == 0) && address[10] == 0xff && address[11] == 0xff
}

fn array<const N: usize>(slice: &[u8]) -> [u8; N] {
    let mut out = [0u8; N];
    out.copy_from_slice(slice);
    out
}
