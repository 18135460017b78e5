//! Byte-cluster fingerprints for substring filtering.
//!
//! A byte partition assigns each of the 256 byte values to one of `pbw`
//! clusters. The fingerprint of a string sets the bit of every cluster that
//! one of its UTF-8 bytes falls into, so a fingerprint is a `pbw`-bit mask
//! and concatenation ORs fingerprints. A LIKE pattern reduces to the mask of
//! its literal characters; any string matching the pattern must contain all
//! of them, so the subset check `fp & pmask == pmask` never rejects a true
//! match.

use serde::{Deserialize, Serialize};

use crate::like::strip_wildcards;

/// Assignment of the 256 byte values to clusters `0..pbw`.
///
/// Partitions may use up to 256 clusters, but fingerprints are stored as
/// 64-bit masks, so only partitions with `pbw <= 64` can be fingerprinted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "BytePartitionSerde", into = "BytePartitionSerde")]
pub struct BytePartition {
    pbw: u32,
    cluster_of: Vec<u8>,
}

#[derive(Serialize, Deserialize)]
struct BytePartitionSerde {
    pbw: u32,
    clusters: Vec<u8>,
}

impl TryFrom<BytePartitionSerde> for BytePartition {
    type Error = String;
    fn try_from(raw: BytePartitionSerde) -> Result<Self, String> {
        BytePartition::new(raw.pbw, raw.clusters)
    }
}

impl From<BytePartition> for BytePartitionSerde {
    fn from(p: BytePartition) -> Self {
        BytePartitionSerde { pbw: p.pbw, clusters: p.cluster_of }
    }
}

impl BytePartition {
    /// Validates a full cluster assignment: 256 entries, every entry below
    /// `pbw`, and every cluster inhabited by at least one byte.
    pub fn new(pbw: u32, cluster_of: Vec<u8>) -> Result<Self, String> {
        if !(1..=256).contains(&pbw) {
            return Err(format!("pbw must be in 1..=256, got {pbw}"));
        }
        if cluster_of.len() != 256 {
            return Err(format!("expected 256 cluster entries, got {}", cluster_of.len()));
        }
        let mut used = vec![false; pbw as usize];
        for (byte, &c) in cluster_of.iter().enumerate() {
            if (c as u32) >= pbw {
                return Err(format!("byte {byte} assigned to cluster {c}, pbw is {pbw}"));
            }
            used[c as usize] = true;
        }
        if let Some(empty) = used.iter().position(|u| !*u) {
            return Err(format!("cluster {empty} has no bytes"));
        }
        Ok(BytePartition { pbw, cluster_of })
    }

    pub fn pbw(&self) -> u32 {
        self.pbw
    }

    pub fn cluster(&self, byte: u8) -> u8 {
        self.cluster_of[byte as usize]
    }

    pub fn clusters(&self) -> &[u8] {
        &self.cluster_of
    }

    /// True when every ASCII letter shares a cluster with its case pair, so
    /// case folding cannot change a fingerprint. Holds for round-robin
    /// partitions whenever `pbw` divides 32.
    pub fn case_pairs_co_cluster(&self) -> bool {
        (b'a'..=b'z').all(|c| self.cluster_of[c as usize] == self.cluster_of[(c - 32) as usize])
    }
}

/// `cluster_of[b] = b mod pbw`.
pub fn round_robin_partition(pbw: u32) -> BytePartition {
    assert!((1..=256).contains(&pbw));
    let cluster_of = (0u32..256).map(|b| (b % pbw) as u8).collect();
    BytePartition { pbw, cluster_of }
}

/// Pluggable cluster-assignment policy.
pub trait PartitionStrategy {
    fn build(&self, pbw: u32) -> BytePartition;
}

/// The default strategy.
pub struct RoundRobin;

impl PartitionStrategy for RoundRobin {
    fn build(&self, pbw: u32) -> BytePartition {
        round_robin_partition(pbw)
    }
}

/// A `pbw`-bit mask; bit `i` means some byte of the string fell into
/// cluster `i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Fingerprint(pub u64);

impl Fingerprint {
    /// Renders the mask as `pbw` binary digits, cluster 0 leftmost.
    pub fn to_bit_string(self, pbw: u32) -> String {
        (0..pbw)
            .map(|i| if self.0 >> i & 1 == 1 { '1' } else { '0' })
            .collect()
    }
}

/// ORs the cluster bit of every byte of `s`; the empty string maps to 0.
pub fn fingerprint(partition: &BytePartition, s: &str) -> Fingerprint {
    assert!(partition.pbw <= 64, "fingerprints are 64-bit masks");
    let mut mask = 0u64;
    for b in s.bytes() {
        mask |= 1u64 << partition.cluster(b);
    }
    Fingerprint(mask)
}

/// Mask a stored fingerprint must cover for the row to possibly match the
/// LIKE `pattern`: the fingerprint of the pattern with `%` and `_` removed.
///
/// For ILIKE the pattern is checked in both cases and the masks are ORed,
/// which is only sound when case pairs co-cluster; callers gate on
/// [`BytePartition::case_pairs_co_cluster`] before translating ILIKE.
pub fn pattern_mask(partition: &BytePartition, pattern: &str, case_insensitive: bool) -> Fingerprint {
    let literals = strip_wildcards(pattern);
    if case_insensitive {
        let lower = fingerprint(partition, &literals.to_ascii_lowercase());
        let upper = fingerprint(partition, &literals.to_ascii_uppercase());
        Fingerprint(lower.0 | upper.0)
    } else {
        fingerprint(partition, &literals)
    }
}

/// Subset check: every cluster demanded by the pattern is present.
pub fn mask_matches(fp: Fingerprint, pmask: Fingerprint) -> bool {
    fp.0 & pmask.0 == pmask.0
}
