//! Named sub-seed derivation so every component draws from its own stream.

use sha2::{Digest, Sha256};

/// Derives an independent seed from `base`, a component label and an index.
pub fn derive(base: u64, label: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update(label.as_bytes());
    h.update([0u8]);
    h.update(index.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("sha256 digest has 32 bytes"))
}
