//! SHA-256 digests and the block Merkle root.

use std::fmt;

use sha2::{Digest, Sha256};

/// A 32-byte SHA-256 digest.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Hash(pub [u8; 32]);

impl Hash {
    pub const LEN: usize = 32;
    pub const ZERO: Hash = Hash([0u8; 32]);

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Hash> {
        let bytes = hex::decode(s).ok()?;
        let arr: [u8; 32] = bytes.try_into().ok()?;
        Some(Hash(arr))
    }
}

impl fmt::Debug for Hash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Hash({})", &self.to_hex()[..16])
    }
}

impl fmt::Display for Hash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

pub fn hash_payload(data: &[u8]) -> Hash {
    Hash(Sha256::digest(data).into())
}

/// Digest of the concatenation of `parts`, without materializing it.
pub fn hash_parts(parts: &[&[u8]]) -> Hash {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update(part);
    }
    Hash(hasher.finalize().into())
}

/// Merkle root over a list of transaction ids.
///
/// Leaves are `H(id)`, interior nodes `H(left || right)`. An odd node at any
/// level is paired with itself. The root of the empty list is `H("")`.
pub fn merkle_root(ids: &[Hash]) -> Hash {
    if ids.is_empty() {
        return hash_payload(&[]);
    }
    let mut level: Vec<Hash> = ids.iter().map(|id| hash_payload(&id.0)).collect();
    while level.len() > 1 {
        level = level
            .chunks(2)
            .map(|pair| {
                let right = pair.get(1).unwrap_or(&pair[0]);
                hash_parts(&[&pair[0].0, &right.0])
            })
            .collect();
    }
    level[0]
}
