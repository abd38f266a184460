//! Master-seed fan-out.
//!
//! A component seed is `master + H(label)` (wrapping), where `H` is the first
//! eight bytes of SHA-256 over the UTF-8 label, read little-endian. The
//! derivation never depends on the order in which components ask for seeds.

use sha2::{Digest, Sha256};

pub fn derive_seed(master: u64, label: &str) -> u64 {
    let digest = Sha256::digest(label.as_bytes());
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    master.wrapping_add(u64::from_le_bytes(bytes))
}

/// Seed for component `label` of stage `index`.
pub fn stage_seed(master: u64, label: &str, index: usize) -> u64 {
    derive_seed(master, &format!("{label}/{index}"))
}
