//! Blocked-free bloom filters for probe-side filtering, plus the seeded
//! hash shared with the join hash tables.

use crate::value::Value;

/// Filter width in bits. Fixed so fill fractions are comparable across
/// joins.
pub const BLOOM_BITS: u32 = 1 << 16;
/// Probes per key; the one 64-bit hash is split into two 32-bit halves.
pub const BLOOM_HASHES: u32 = 2;
/// A filter denser than this rejects too little to pay for itself and is
/// discarded at build time.
pub const BLOOM_FILL_LIMIT: f64 = 0.34;

pub const DEFAULT_HASH_SEED: u64 = 0xa076_1d64_78bd_642f;

/// Streaming seeded mixing hash. Used both for hash-table buckets and
/// bloom probes so a key is hashed once per scan.
#[derive(Clone, Copy)]
pub struct Mix(u64);

impl Mix {
    pub fn new(seed: u64) -> Self {
        Mix(seed ^ 0x9e37_79b9_7f4a_7c15)
    }

    #[inline]
    pub fn feed(&mut self, b: u8) {
        self.0 ^= b as u64;
        self.0 = self.0.wrapping_mul(0xbf58_476d_1ce4_e5b9);
        self.0 ^= self.0 >> 27;
    }

    #[inline]
    pub fn feed_all(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.feed(b);
        }
    }

    pub fn finish(self) -> u64 {
        let mut h = self.0;
        h ^= h >> 33;
        h = h.wrapping_mul(0x94d0_49bb_1331_11eb);
        h ^ (h >> 31)
    }
}

pub fn hash_bytes(seed: u64, bytes: &[u8]) -> u64 {
    let mut m = Mix::new(seed);
    m.feed_all(bytes);
    m.finish()
}

pub fn hash_int(seed: u64, i: i64) -> u64 {
    let mut m = Mix::new(seed);
    m.feed(1);
    m.feed_all(&i.to_le_bytes());
    m.finish()
}

pub fn hash_str(seed: u64, s: &str) -> u64 {
    let mut m = Mix::new(seed);
    m.feed(2);
    m.feed_all(s.as_bytes());
    m.finish()
}

/// Hash of one value, with a type tag so Int(1) and Str("1") differ. NULL
/// gets its own tag; rows with NULL keys never match a join anyway.
pub fn hash_value(seed: u64, value: &Value) -> u64 {
    match value {
        Value::Null => hash_bytes(seed, &[0]),
        Value::Int(i) => hash_int(seed, *i),
        Value::Str(s) => hash_str(seed, s),
    }
}

/// Order-sensitive combiner for composite join keys.
pub fn combine_hashes(a: u64, b: u64) -> u64 {
    hash_bytes(a, &b.to_le_bytes())
}

#[derive(Debug, Clone)]
pub struct BloomFilter {
    words: Vec<u64>,
    inserted: u64,
}

impl BloomFilter {
    pub fn new() -> Self {
        BloomFilter { words: vec![0u64; (BLOOM_BITS as usize) / 64], inserted: 0 }
    }

    /// Maps a 32-bit lane onto the bit range without division, as
    /// (x * m) >> 32.
    #[inline]
    fn position(x: u32) -> usize {
        ((x as u64 * BLOOM_BITS as u64) >> 32) as usize
    }

    #[inline]
    fn lanes(hash: u64) -> [usize; BLOOM_HASHES as usize] {
        [Self::position(hash as u32), Self::position((hash >> 32) as u32)]
    }

    pub fn insert(&mut self, hash: u64) {
        for pos in Self::lanes(hash) {
            self.words[pos / 64] |= 1u64 << (pos % 64);
        }
        self.inserted += 1;
    }

    pub fn contains(&self, hash: u64) -> bool {
        Self::lanes(hash)
            .iter()
            .all(|pos| self.words[pos / 64] & (1u64 << (pos % 64)) != 0)
    }

    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    /// Fraction of bits set.
    pub fn fill(&self) -> f64 {
        let ones: u32 = self.words.iter().map(|w| w.count_ones()).sum();
        ones as f64 / BLOOM_BITS as f64
    }

    pub fn overfull(&self) -> bool {
        self.fill() > BLOOM_FILL_LIMIT
    }
}

impl Default for BloomFilter {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn filter_with_keys(n: i64) -> BloomFilter {
        let mut f = BloomFilter::new();
        for i in 0..n {
            f.insert(hash_value(DEFAULT_HASH_SEED, &Value::Int(i)));
        }
        f
    }

    #[test]
    fn no_false_negatives() {
        let f = filter_with_keys(5000);
        for i in 0..5000 {
            assert!(f.contains(hash_value(DEFAULT_HASH_SEED, &Value::Int(i))));
        }
    }

    #[test]
    fn five_thousand_keys_give_a_few_percent_false_positives() {
        let f = filter_with_keys(5000);
        assert!(!f.overfull(), "fill {} should stay usable", f.fill());
        let mut hits = 0u32;
        let probes = 20_000;
        for i in 0..probes {
            if f.contains(hash_value(DEFAULT_HASH_SEED, &Value::Int(1_000_000 + i as i64))) {
                hits += 1;
            }
        }
        let rate = hits as f64 / probes as f64;
        assert!(
            (0.01..=0.03).contains(&rate),
            "false positive rate {rate} outside [0.01, 0.03]"
        );
    }

    #[test]
    fn thirty_thousand_keys_overfill() {
        let f = filter_with_keys(30_000);
        assert!(f.overfull(), "fill {} should exceed {}", f.fill(), BLOOM_FILL_LIMIT);
    }

    #[test]
    fn hash_distinguishes_types_and_seeds() {
        let a = hash_value(1, &Value::Int(1));
        let b = hash_value(1, &Value::Str("1".into()));
        let c = hash_value(2, &Value::Int(1));
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_ne!(hash_value(1, &Value::Null), a);
    }
}
