//! QR payload codec: `PLV1:<batch_id>:<block_no>:<digest16>`.
//!
//! `digest16` is the first 16 lowercase hex characters of
//! `H(batch_id || header_hash)` for the anchored block on the main channel.

use std::fmt;
use std::str::FromStr;

use crate::hash::{hash_parts, Hash};

use super::types::valid_id;

pub const QR_PREFIX: &str = "PLV1";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QrPayload {
    pub batch_id: String,
    pub block_no: u64,
    pub digest16: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed QR payload: {0}")]
pub struct MalformedPayload(pub &'static str);

pub fn qr_digest(batch_id: &str, header_hash: &Hash) -> String {
    let mut hex = hash_parts(&[batch_id.as_bytes(), &header_hash.0]).to_hex();
    hex.truncate(16);
    hex
}

impl QrPayload {
    pub fn new(batch_id: &str, block_no: u64, header_hash: &Hash) -> Self {
        QrPayload { batch_id: batch_id.to_string(), block_no, digest16: qr_digest(batch_id, header_hash) }
    }

    pub fn text(&self) -> String {
        self.to_string()
    }

    pub fn matches(&self, header_hash: &Hash) -> bool {
        qr_digest(&self.batch_id, header_hash) == self.digest16
    }
}

impl fmt::Display for QrPayload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{QR_PREFIX}:{}:{}:{}", self.batch_id, self.block_no, self.digest16)
    }
}

impl FromStr for QrPayload {
    type Err = MalformedPayload;

    fn from_str(s: &str) -> Result<Self, MalformedPayload> {
        let parts: Vec<&str> = s.split(':').collect();
        let [prefix, batch_id, block, digest] = parts[..] else {
            return Err(MalformedPayload("expected four ':'-separated fields"));
        };
        if prefix != QR_PREFIX {
            return Err(MalformedPayload("unknown prefix"));
        }
        if !valid_id(batch_id) {
            return Err(MalformedPayload("bad batch id"));
        }
        let canonical = !block.is_empty()
            && block.bytes().all(|b| b.is_ascii_digit())
            && (block == "0" || !block.starts_with('0'));
        let block_no = match block.parse::<u64>() {
            Ok(n) if canonical => n,
            _ => return Err(MalformedPayload("bad block number")),
        };
        if digest.len() != 16 || !digest.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f')) {
            return Err(MalformedPayload("digest must be 16 lowercase hex characters"));
        }
        Ok(QrPayload { batch_id: batch_id.to_string(), block_no, digest16: digest.to_string() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hash::hash_payload;

    #[test]
    fn digest_oracle() {
        // Python: hashlib.sha256(b"milk-1" + hashlib.sha256(b"hdr").digest()).hexdigest()[:16]
        let header = hash_payload(b"hdr");
        assert_eq!(qr_digest("milk-1", &header), "c27900df5aa9cbe9");
    }

    #[test]
    fn round_trip_text() {
        let p = QrPayload::new("milk-1", 12, &hash_payload(b"hdr"));
        let text = p.text();
        assert!(text.starts_with("PLV1:milk-1:12:"));
        assert_eq!(text.parse::<QrPayload>().unwrap(), p);
    }

    #[test]
    fn grammar_rejections() {
        let good = QrPayload::new("milk-1", 12, &hash_payload(b"hdr")).text();
        for bad in [
            good.replacen(':', "", 1),
            good.replace("PLV1", "PLV2"),
            good.replace(":12:", ":012:"),
            good.replace(":12:", ":+12:"),
            good.replace(":12:", "::"),
            good.to_uppercase(),
            format!("{good}0"),
            format!("{good}:x"),
            "PLV1:bad id:1:0000000000000000".to_string(),
            String::new(),
        ] {
            assert!(bad.parse::<QrPayload>().is_err(), "{bad}");
        }
        assert!("PLV1:b:0:0123456789abcdef".parse::<QrPayload>().is_ok());
    }
}
