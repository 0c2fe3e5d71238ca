//! FNV-1a content digests.
//!
//! Datasets and model bundles are fingerprinted by hashing a canonical byte
//! stream: strings as UTF-8 with a length prefix, integers little-endian,
//! floats as their IEEE-754 bit patterns. Reports carry these digests so any
//! number in a table can be traced back to the exact inputs that produced it.

use alloc::string::String;
use core::fmt::Write as _;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

#[derive(Debug, Clone)]
pub struct Fnv1a {
    state: u64,
}

impl Default for Fnv1a {
    fn default() -> Self {
        Self::new()
    }
}

impl Fnv1a {
    pub fn new() -> Self {
        Fnv1a { state: FNV_OFFSET }
    }

    pub fn update(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.state ^= b as u64;
            self.state = self.state.wrapping_mul(FNV_PRIME);
        }
    }

    pub fn update_u64(&mut self, x: u64) {
        self.update(&x.to_le_bytes());
    }

    /// Hashes the bit pattern, so -0.0 and 0.0 are distinct and NaNs are
    /// whatever bits they are. Canonical streams never contain NaN.
    pub fn update_f64(&mut self, x: f64) {
        self.update_u64(x.to_bits());
    }

    /// Length-prefixed so "ab","c" and "a","bc" hash differently.
    pub fn update_str(&mut self, s: &str) {
        self.update_u64(s.len() as u64);
        self.update(s.as_bytes());
    }

    pub fn finish(&self) -> u64 {
        self.state
    }

    pub fn finish_hex(&self) -> String {
        let mut s = String::with_capacity(16);
        write!(s, "{:016x}", self.state).expect("write to String");
        s
    }
}
