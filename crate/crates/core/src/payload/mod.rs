//! Payload formats and the bundle that carries a record's payloads through
//! the encryption node.

pub mod imu;
pub mod questionnaire;

use crate::model::PayloadKind;

pub const BUNDLE_MAGIC: &[u8; 4] = b"LHSB";
pub const BUNDLE_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BundlePart {
    pub payload_id: String,
    pub kind: PayloadKind,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BundleError {
    #[error("bundle truncated")]
    Truncated,
    #[error("bad bundle magic or version")]
    BadHeader,
    #[error("unknown payload kind tag {0}")]
    UnknownKind(u8),
    #[error("payload id is not UTF-8")]
    BadId,
    #[error("trailing bytes after bundle")]
    Trailing,
}

fn kind_tag(kind: PayloadKind) -> u8 {
    match kind {
        PayloadKind::ImuStream => 1,
        PayloadKind::QuestionnaireItems => 2,
        PayloadKind::AudioBlob => 3,
        PayloadKind::VideoBlob => 4,
        PayloadKind::ManualScores => 5,
    }
}

/// Layout: magic, version u8, part count u32 BE, then per part: kind u8,
/// id length u16 BE, id bytes, payload length u64 BE, payload bytes.
pub fn encode_bundle(parts: &[BundlePart]) -> Vec<u8> {
    let total: usize = parts.iter().map(|p| 11 + p.payload_id.len() + p.bytes.len()).sum();
    let mut out = Vec::with_capacity(9 + total);
    out.extend_from_slice(BUNDLE_MAGIC);
    out.push(BUNDLE_VERSION);
    out.extend_from_slice(&(parts.len() as u32).to_be_bytes());
    for p in parts {
        out.push(kind_tag(p.kind));
        out.extend_from_slice(&(p.payload_id.len() as u16).to_be_bytes());
        out.extend_from_slice(p.payload_id.as_bytes());
        out.extend_from_slice(&(p.bytes.len() as u64).to_be_bytes());
        out.extend_from_slice(&p.bytes);
    }
    out
}

pub fn decode_bundle(bytes: &[u8]) -> Result<Vec<BundlePart>, BundleError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != BUNDLE_MAGIC || r.take(1)?[0] != BUNDLE_VERSION {
        return Err(BundleError::BadHeader);
    }
    let count = u32::from_be_bytes(r.take(4)?.try_into().unwrap());
    let mut parts = Vec::with_capacity(count.min(64) as usize);
    for _ in 0..count {
        let tag = r.take(1)?[0];
        let kind = PayloadKind::ALL
            .into_iter()
            .find(|k| kind_tag(*k) == tag)
            .ok_or(BundleError::UnknownKind(tag))?;
        let id_len = u16::from_be_bytes(r.take(2)?.try_into().unwrap()) as usize;
        let payload_id = std::str::from_utf8(r.take(id_len)?).map_err(|_| BundleError::BadId)?.to_string();
        let len = u64::from_be_bytes(r.take(8)?.try_into().unwrap());
        let len = usize::try_from(len).map_err(|_| BundleError::Truncated)?;
        let bytes = r.take(len)?.to_vec();
        parts.push(BundlePart { payload_id, kind, bytes });
    }
    if r.pos != bytes.len() {
        return Err(BundleError::Trailing);
    }
    Ok(parts)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], BundleError> {
        let end = self.pos.checked_add(n).ok_or(BundleError::Truncated)?;
        let s = self.buf.get(self.pos..end).ok_or(BundleError::Truncated)?;
        self.pos = end;
        Ok(s)
    }
}
