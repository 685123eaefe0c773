//! Bit-vector popularity with periodic decay.
//!
//! A vector of length ℓ keeps the most recent request history in its most
//! significant bits. A request shifts right by one and sets the MSB; a decay
//! tick only shifts. The popcount is the key's popularity, and the
//! thresholds in [`SystemConfig`] turn it into suspend/resume and cache
//! insert/evict decisions.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::{SystemConfig, MAX_ELL};

#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PopularityVector {
    bits: u64,
    len: u32,
}

impl PopularityVector {
    /// All-zero vector of length `len` (1..=64).
    pub fn new(len: u32) -> Self {
        assert!(
            (1..=MAX_ELL).contains(&len),
            "vector length {len} out of range"
        );
        PopularityVector { bits: 0, len }
    }

    /// Parses an MSB-first bit string such as `"1100"`.
    pub fn from_bit_str(s: &str) -> Option<Self> {
        let len = u32::try_from(s.len()).ok()?;
        if !(1..=MAX_ELL).contains(&len) {
            return None;
        }
        let mut bits = 0u64;
        for c in s.chars() {
            bits = (bits << 1)
                | match c {
                    '0' => 0,
                    '1' => 1,
                    _ => return None,
                };
        }
        Some(PopularityVector { bits, len })
    }

    pub fn len(&self) -> u32 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.bits == 0
    }

    fn msb(&self) -> u64 {
        1u64 << (self.len - 1)
    }

    #[must_use]
    pub fn record_request(self) -> Self {
        PopularityVector {
            bits: (self.bits >> 1) | self.msb(),
            len: self.len,
        }
    }

    #[must_use]
    pub fn decay(self) -> Self {
        PopularityVector {
            bits: self.bits >> 1,
            len: self.len,
        }
    }

    pub fn popcount(&self) -> u32 {
        self.bits.count_ones()
    }
}

impl fmt::Display for PopularityVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in (0..self.len).rev() {
            f.write_str(if self.bits >> i & 1 == 1 { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for PopularityVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PopularityVector({self})")
    }
}

/// Index/cache status of a key as seen by the classifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KeyStatus {
    Available,
    Suspended,
    /// Available in the index and held in at least one gateway cache.
    Cached,
}

/// Outcome of [`classify`]. Several flags may be set at once (a cached key
/// falling to the suspend threshold is both evicted and suspended).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Actions {
    pub resume: bool,
    pub suspend: bool,
    pub cache_insert: bool,
    pub cache_evict: bool,
}

impl Actions {
    pub fn none(&self) -> bool {
        *self == Actions::default()
    }
}

pub fn classify(v: PopularityVector, cfg: &SystemConfig, status: KeyStatus) -> Actions {
    let pc = v.popcount();
    let available = matches!(status, KeyStatus::Available | KeyStatus::Cached);
    Actions {
        resume: status == KeyStatus::Suspended && pc >= cfg.b_res,
        suspend: available && pc <= cfg.b_susp,
        cache_insert: status == KeyStatus::Available && pc >= cfg.c_ins,
        cache_evict: status == KeyStatus::Cached && pc <= cfg.c_del,
    }
}
