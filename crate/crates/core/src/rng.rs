//! Named, splittable random streams.
//!
//! Every stream is identified by a 64-bit key derived from the session seed
//! and a label. Draws are a pure function of `(key, counter)`, so deriving a
//! new stream never perturbs an existing one, and a stream can be keyed by
//! `(tick, robot id)` to make per-robot draws independent of update order.

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngStream {
    key: u64,
    counter: u64,
}

impl RngStream {
    /// Stream for `label` under `seed`.
    pub fn named(seed: u64, label: &str) -> Self {
        let key = mix64(seed.wrapping_mul(0xA076_1D64_78BD_642F) ^ fnv1a64(label.as_bytes()));
        Self { key, counter: 0 }
    }

    /// Child stream keyed by a label. Does not advance `self`.
    pub fn derive(&self, label: &str) -> Self {
        self.derive_u64(fnv1a64(label.as_bytes()))
    }

    /// Child stream keyed by an integer (tick, robot id, ...). Does not advance `self`.
    pub fn derive_u64(&self, label: u64) -> Self {
        let key = mix64(self.key ^ mix64(label ^ 0x94D0_49BB_1331_11EB));
        Self { key, counter: 0 }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.key ^ mix64(self.counter.wrapping_mul(0x9E37_79B9_7F4A_7C15)))
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        const SCALE: f64 = (1u64 << 53) as f64;
        (self.next_u64() >> 11) as f64 / SCALE
    }

    /// Uniform in the closed interval `[lo, hi]` (degenerate when `lo == hi`).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            return lo;
        }
        let u = (self.next_u64() >> 11) as f64 / ((1u64 << 53) - 1) as f64;
        lo + (hi - lo) * u
    }

    /// Uniform integer in `[0, n)`. `n` must be nonzero.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "empty range");
        let n = n as u64;
        // Lemire-style rejection keeps the draw unbiased.
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.next_u64();
            if v < zone {
                return (v % n) as usize;
            }
        }
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Standard normal draw (Box-Muller).
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    pub fn choose<'a, T>(&mut self, items: &'a [T]) -> Option<&'a T> {
        if items.is_empty() {
            None
        } else {
            Some(&items[self.below(items.len())])
        }
    }
}

/// FNV-1a over a byte slice.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = Fnv64::new();
    hash.write(bytes);
    hash.finish()
}

/// Incremental FNV-1a 64. Any single-byte substitution changes the digest,
/// which is what the log chain relies on.
#[derive(Clone, Copy, Debug)]
pub struct Fnv64(u64);

impl Fnv64 {
    pub const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01B3;

    pub fn new() -> Self {
        Self(Self::OFFSET)
    }

    pub fn with_state(state: u64) -> Self {
        Self(state)
    }

    pub fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(Self::PRIME);
        }
    }

    pub fn write_u64(&mut self, v: u64) {
        self.write(&v.to_le_bytes());
    }

    pub fn write_f64(&mut self, v: f64) {
        self.write_u64(v.to_bits());
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

impl Default for Fnv64 {
    fn default() -> Self {
        Self::new()
    }
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_label_same_sequence() {
        let mut a = RngStream::named(7, "swarm");
        let mut b = RngStream::named(7, "swarm");
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn labels_and_seeds_separate_streams() {
        let mut a = RngStream::named(7, "swarm");
        let mut b = RngStream::named(7, "hazard");
        let mut c = RngStream::named(8, "swarm");
        let x = a.next_u64();
        assert_ne!(x, b.next_u64());
        assert_ne!(x, c.next_u64());
    }

    #[test]
    fn derive_does_not_advance_parent() {
        let mut parent = RngStream::named(1, "p");
        let snapshot = parent.clone();
        let _child = parent.derive_u64(3).next_u64();
        assert_eq!(parent, snapshot);
        assert_eq!(parent.next_u64(), snapshot.clone().next_u64());
    }

    #[test]
    fn unit_draws_in_range() {
        let mut s = RngStream::named(3, "u");
        for _ in 0..10_000 {
            let v = s.next_f64();
            assert!((0.0..1.0).contains(&v));
            let w = s.uniform(2.0, 3.0);
            assert!((2.0..=3.0).contains(&w));
            assert!(s.below(7) < 7);
        }
        assert_eq!(s.uniform(5.0, 5.0), 5.0);
    }

    #[test]
    fn uniform_mean_is_centered() {
        let mut s = RngStream::named(11, "mean");
        let n = 200_000;
        let mean: f64 = (0..n).map(|_| s.next_f64()).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.005, "mean {mean}");
    }

    #[test]
    fn fnv_detects_single_byte_flip() {
        let base = b"tick=42 payload".to_vec();
        let h = fnv1a64(&base);
        for i in 0..base.len() {
            for bit in 0..8 {
                let mut m = base.clone();
                m[i] ^= 1 << bit;
                assert_ne!(fnv1a64(&m), h);
            }
        }
    }
}
