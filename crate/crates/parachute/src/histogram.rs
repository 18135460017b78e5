//! Equi-depth histograms over join-induced value distributions.
//!
//! The builder minimizes the maximum bin weight over contiguous partitions of
//! the sorted distinct values: a binary search over the candidate maximum
//! weight with a greedy feasibility check, which also yields the fewest bins
//! among optimal solutions. When the number of distinct values fits the bin
//! budget, every value gets its own bin instead, which keeps bins value-exact
//! and enables exact set translations.
//!
//! NULL, when present, occupies bin 0; value bins then start at 1 and at most
//! `2^pbw - 1` of them are available. String histograms group values in
//! frequency order (heaviest first) and route unseen values to the globally
//! heaviest bin.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::storage::{sample_rows, TableData};
use crate::value::Value;

/// Distinct values with join frequencies, drawn from a sample of FK rows
/// joined to their PK partners.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedSample {
    /// Distinct non-null values, sorted ascending, with their frequencies.
    pub values: Vec<(Value, u64)>,
    pub total_weight: u64,
    pub null_weight: u64,
    pub contains_null: bool,
    /// True when the sample covered every FK row, i.e. the frequencies are
    /// the exact full-join frequencies.
    pub complete: bool,
}

impl WeightedSample {
    pub fn from_counts(counts: BTreeMap<Value, u64>, null_weight: u64, complete: bool) -> Self {
        let mut values: Vec<(Value, u64)> = counts.into_iter().collect();
        values.sort_by(|a, b| a.0.sort_cmp(&b.0));
        let total_weight = values.iter().map(|(_, w)| *w).sum();
        WeightedSample {
            values,
            total_weight,
            null_weight,
            contains_null: null_weight > 0,
            complete,
        }
    }
}

/// Samples `m` FK rows, joins each through `fk_column -> pk_column`, and
/// tallies the PK-side `source_column` values. In strict mode an FK value
/// with no partner is an error; in relaxed mode such rows are skipped and
/// every partner of a multi-match contributes.
///
/// `source_nullable` forces `contains_null` even when the sample happens to
/// miss every NULL, so the built histogram can always absorb NULL input.
#[allow(clippy::too_many_arguments)]
pub fn estimate_distribution(
    fk: &TableData,
    fk_column: &str,
    pk: &TableData,
    pk_column: &str,
    source_column: &str,
    source_nullable: bool,
    m: usize,
    seed: u64,
    strict: bool,
) -> Result<WeightedSample> {
    let index = pk.key_index(pk_column, strict)?;
    let fk_col = fk.column(fk_column)?;
    let source = pk.column(source_column)?;
    let rows = sample_rows(fk, m, seed);
    let complete = rows.len() == fk.row_count;

    let mut counts: BTreeMap<Value, u64> = BTreeMap::new();
    let mut null_weight = 0u64;
    for row in rows {
        let key = fk_col.value(row);
        if key.is_null() {
            continue;
        }
        let partners = index.rows_for(&key);
        if partners.is_empty() {
            if strict {
                return Err(Error::DanglingKey {
                    fk_table: fk.name.clone(),
                    fk_column: fk_column.to_string(),
                    pk_table: pk.name.clone(),
                    row,
                    key: key.to_string(),
                });
            }
            continue;
        }
        for &p in partners {
            let v = source.value(p);
            if v.is_null() {
                null_weight += 1;
            } else {
                *counts.entry(v).or_insert(0) += 1;
            }
        }
    }
    let mut sample = WeightedSample::from_counts(counts, null_weight, complete);
    if source_nullable {
        sample.contains_null = true;
    }
    Ok(sample)
}

/// Minimizes the maximum part weight over contiguous partitions of `weights`
/// into at most `max_parts` parts. Returns the optimum and the exclusive end
/// index of each part; among optimal partitions the greedy packing uses the
/// fewest parts.
pub fn min_max_partition(weights: &[u64], max_parts: usize) -> (u64, Vec<usize>) {
    assert!(max_parts >= 1);
    if weights.is_empty() {
        return (0, Vec::new());
    }
    let parts_needed = |cap: u64| -> usize {
        let mut parts = 1usize;
        let mut acc = 0u64;
        for &w in weights {
            if acc + w > cap {
                parts += 1;
                acc = w;
            } else {
                acc += w;
            }
        }
        parts
    };
    let mut lo = *weights.iter().max().unwrap();
    let mut hi: u64 = weights.iter().sum();
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if parts_needed(mid) <= max_parts {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    let cap = lo;
    let mut ends = Vec::new();
    let mut acc = 0u64;
    for (i, &w) in weights.iter().enumerate() {
        if acc + w > cap {
            ends.push(i);
            acc = w;
        } else {
            acc += w;
        }
    }
    ends.push(weights.len());
    (cap, ends)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum HistogramData {
    Numeric {
        /// Sorted upper-inclusive bounds of all value bins except the last,
        /// which is unbounded. `n` boundaries mean `n + 1` value bins.
        boundaries: Vec<i64>,
    },
    Strings {
        /// Distinct value to final bin index (NULL shift already applied).
        bins: BTreeMap<String, u32>,
        /// Bin receiving values unseen at build time: the globally heaviest
        /// bin, so forced inclusions cost the least pruning.
        overflow_bin: u32,
        value_bin_count: u32,
        /// True when built from a complete sample: the stored value list
        /// enumerates every value present on the FK side at build time.
        complete: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquiDepthHistogram {
    #[serde(flatten)]
    data: HistogramData,
    /// Bin index reserved for NULL (always 0 when present).
    pub null_bin: Option<u32>,
    /// True when every value bin held exactly one distinct value at build.
    pub value_exact: bool,
}

impl EquiDepthHistogram {
    pub fn from_numeric_boundaries(boundaries: Vec<i64>, nullable: bool) -> Self {
        EquiDepthHistogram {
            data: HistogramData::Numeric { boundaries },
            null_bin: nullable.then_some(0),
            value_exact: false,
        }
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self.data, HistogramData::Numeric { .. })
    }

    fn shift(&self) -> u32 {
        if self.null_bin.is_some() {
            1
        } else {
            0
        }
    }

    pub fn value_bins(&self) -> u32 {
        match &self.data {
            HistogramData::Numeric { boundaries } => boundaries.len() as u32 + 1,
            HistogramData::Strings { value_bin_count, .. } => *value_bin_count,
        }
    }

    pub fn total_bins(&self) -> u32 {
        self.shift() + self.value_bins()
    }

    /// Smallest and largest value bin index.
    pub fn value_bin_range(&self) -> (u32, u32) {
        (self.shift(), self.shift() + self.value_bins() - 1)
    }

    pub fn boundaries(&self) -> Option<&[i64]> {
        match &self.data {
            HistogramData::Numeric { boundaries } => Some(boundaries),
            _ => None,
        }
    }

    pub fn string_bins(&self) -> Option<&BTreeMap<String, u32>> {
        match &self.data {
            HistogramData::Strings { bins, .. } => Some(bins),
            _ => None,
        }
    }

    pub fn overflow_bin(&self) -> Option<u32> {
        match &self.data {
            HistogramData::Strings { overflow_bin, .. } => Some(*overflow_bin),
            _ => None,
        }
    }

    /// For string histograms: whether the stored value list is exhaustive.
    pub fn complete(&self) -> bool {
        match &self.data {
            HistogramData::Strings { complete, .. } => *complete,
            HistogramData::Numeric { .. } => true,
        }
    }

    /// True when `bin` held exactly one distinct value at build time and is
    /// not the overflow target, i.e. bin membership implies value equality.
    pub fn string_bin_is_singleton(&self, bin: u32) -> bool {
        match &self.data {
            HistogramData::Strings { bins, overflow_bin, .. } => {
                // The overflow alias also receives values unseen at build
                // (sampled builds, later inserts), so it never certifies
                // equality even when the build was exhaustive.
                bin != *overflow_bin && bins.values().filter(|b| **b == bin).count() == 1
            }
            _ => false,
        }
    }

    /// Maps a value to its bin. Out-of-range numeric values clamp to the
    /// first or last bin; unseen strings go to the overflow bin; NULL goes
    /// to the NULL bin and is an error when there is none.
    pub fn bin(&self, value: &Value) -> Result<u32> {
        match value {
            Value::Null => self.null_bin.ok_or(Error::NullWithoutNullBin),
            Value::Int(v) => match &self.data {
                HistogramData::Numeric { boundaries } => {
                    let rank = boundaries.partition_point(|b| b < v) as u32;
                    Ok(self.shift() + rank)
                }
                _ => Err(Error::Histogram("integer fed to a string histogram".into())),
            },
            Value::Str(s) => match &self.data {
                HistogramData::Strings { bins, overflow_bin, .. } => {
                    Ok(bins.get(s).copied().unwrap_or(*overflow_bin))
                }
                _ => Err(Error::Histogram("string fed to a numeric histogram".into())),
            },
        }
    }
}

/// Builds an equi-depth histogram from a weighted sample. Integer samples
/// yield boundary histograms over value order; string samples yield explicit
/// value-to-bin maps over frequency order. A NULL-bearing sample reserves
/// bin 0 for NULL, leaving `2^pbw - 1` value bins.
pub fn build_equidepth(sample: &WeightedSample, pbw: u32) -> Result<EquiDepthHistogram> {
    if pbw == 0 {
        return Err(Error::Histogram("pbw must be at least 1".into()));
    }
    let shift: u32 = if sample.contains_null { 1 } else { 0 };
    let capacity = (1u128 << pbw.min(31)) as u64;
    let available = capacity - shift as u64;
    if available == 0 {
        return Err(Error::Histogram(
            "pbw=1 with NULL present leaves no value bins".into(),
        ));
    }

    let is_string = sample.values.first().map(|(v, _)| v.as_str().is_some());
    match is_string {
        Some(false) => {
            let mut pairs: Vec<(i64, u64)> = Vec::with_capacity(sample.values.len());
            for (v, w) in &sample.values {
                let x = v.as_int().ok_or_else(|| {
                    Error::Histogram("mixed value types in sample".into())
                })?;
                pairs.push((x, *w));
            }
            let groups = group_values(&pairs, available as usize);
            let value_exact = groups.iter().all(|g| g.len() == 1);
            let mut boundaries: Vec<i64> = groups
                .iter()
                .map(|g| g.last().unwrap().0)
                .collect();
            boundaries.pop();
            Ok(EquiDepthHistogram {
                data: HistogramData::Numeric { boundaries },
                null_bin: sample.contains_null.then_some(0),
                value_exact,
            })
        }
        Some(true) => {
            let mut pairs: Vec<(String, u64)> = Vec::with_capacity(sample.values.len());
            for (v, w) in &sample.values {
                let s = v.as_str().ok_or_else(|| {
                    Error::Histogram("mixed value types in sample".into())
                })?;
                pairs.push((s.to_string(), *w));
            }
            // Frequency order, heaviest first; ties by value for determinism.
            pairs.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            let groups = group_values(&pairs, available as usize);
            let value_exact = groups.iter().all(|g| g.len() == 1);
            let mut bins = BTreeMap::new();
            let mut heaviest = (0u64, shift);
            for (i, group) in groups.iter().enumerate() {
                let bin = shift + i as u32;
                let weight: u64 = group.iter().map(|(_, w)| *w).sum();
                for (v, _) in group.iter() {
                    bins.insert(v.clone(), bin);
                }
                if weight > heaviest.0 {
                    heaviest = (weight, bin);
                }
            }
            Ok(EquiDepthHistogram {
                data: HistogramData::Strings {
                    bins,
                    overflow_bin: heaviest.1,
                    value_bin_count: groups.len().max(1) as u32,
                    complete: sample.complete,
                },
                null_bin: sample.contains_null.then_some(0),
                value_exact,
            })
        }
        None => {
            // Degenerate: no non-null values at all. Keep one catch-all bin.
            Ok(EquiDepthHistogram {
                data: if sample.null_weight > 0 || sample.contains_null {
                    HistogramData::Numeric { boundaries: Vec::new() }
                } else {
                    HistogramData::Numeric { boundaries: Vec::new() }
                },
                null_bin: sample.contains_null.then_some(0),
                value_exact: false,
            })
        }
    }
}

fn group_values<T: Clone>(pairs: &[(T, u64)], available: usize) -> Vec<Vec<(T, u64)>> {
    if pairs.is_empty() {
        return Vec::new();
    }
    if pairs.len() <= available {
        return pairs.iter().map(|p| vec![p.clone()]).collect();
    }
    let weights: Vec<u64> = pairs.iter().map(|(_, w)| *w).collect();
    let (_, ends) = min_max_partition(&weights, available);
    let mut groups = Vec::with_capacity(ends.len());
    let mut start = 0;
    for end in ends {
        groups.push(pairs[start..end].to_vec());
        start = end;
    }
    groups
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::storage::Column;
    use crate::value::Value;

    fn int_sample(freqs: &[(i64, u64)], null_weight: u64, complete: bool) -> WeightedSample {
        let counts: BTreeMap<Value, u64> =
            freqs.iter().map(|(v, w)| (Value::Int(*v), *w)).collect();
        WeightedSample::from_counts(counts, null_weight, complete)
    }

    fn str_sample(freqs: &[(&str, u64)], null_weight: u64, complete: bool) -> WeightedSample {
        let counts: BTreeMap<Value, u64> = freqs
            .iter()
            .map(|(v, w)| (Value::Str(v.to_string()), *w))
            .collect();
        WeightedSample::from_counts(counts, null_weight, complete)
    }

    // Exhaustive contiguous-partition oracle used to pin the solver.
    fn brute_force_min_max(weights: &[u64], max_parts: usize) -> u64 {
        fn rec(weights: &[u64], parts_left: usize) -> u64 {
            if weights.is_empty() {
                return 0;
            }
            if parts_left == 1 {
                return weights.iter().sum();
            }
            let mut best = u64::MAX;
            for cut in 1..=weights.len() {
                let head: u64 = weights[..cut].iter().sum();
                let rest = rec(&weights[cut..], parts_left - 1);
                best = best.min(head.max(rest));
            }
            best
        }
        rec(weights, max_parts)
    }

    #[test]
    fn solver_matches_exhaustive_enumeration() {
        let cases: Vec<(Vec<u64>, usize)> = vec![
            (vec![1, 1, 1, 1, 1, 1, 1, 1], 4),
            (vec![5, 1, 1, 1, 5], 3),
            (vec![9], 4),
            (vec![2, 2, 2], 1),
            (vec![7, 3, 6, 4, 1, 1, 8], 3),
            (vec![1, 100, 1, 100, 1], 2),
        ];
        for (weights, parts) in cases {
            let (opt, ends) = min_max_partition(&weights, parts);
            assert_eq!(opt, brute_force_min_max(&weights, parts), "weights {weights:?}");
            assert!(ends.len() <= parts);
            let mut start = 0;
            let mut observed_max = 0;
            for &end in &ends {
                observed_max = observed_max.max(weights[start..end].iter().sum());
                start = end;
            }
            assert_eq!(start, weights.len());
            assert_eq!(observed_max, opt);
        }
    }

    #[test]
    fn eight_equal_values_fill_four_bins_evenly() {
        let pairs: Vec<(i64, u64)> = (0..8).map(|i| (i, 1)).collect();
        let sample = int_sample(&pairs, 0, true);
        let weights: Vec<u64> = vec![1; 8];
        let (opt, _) = min_max_partition(&weights, 4);
        assert_eq!(opt, 2);
        let hist = build_equidepth(&sample, 2).unwrap();
        assert_eq!(hist.total_bins(), 4);
        assert!(!hist.value_exact);
    }

    #[test]
    fn single_distinct_value_yields_one_bin() {
        let sample = int_sample(&[(42, 10)], 0, true);
        for pbw in [1, 2, 8, 16] {
            let hist = build_equidepth(&sample, pbw).unwrap();
            assert_eq!(hist.total_bins(), 1);
            assert_eq!(hist.bin(&Value::Int(42)).unwrap(), 0);
            assert_eq!(hist.bin(&Value::Int(-5)).unwrap(), 0);
        }
    }

    #[test]
    fn null_reserves_bin_zero() {
        let sample = int_sample(&[(1997, 2), (2001, 1)], 3, false);
        let hist = build_equidepth(&sample, 2).unwrap();
        assert_eq!(hist.null_bin, Some(0));
        assert_eq!(hist.bin(&Value::Null).unwrap(), 0);
        assert_eq!(hist.bin(&Value::Int(1997)).unwrap(), 1);
        assert_eq!(hist.bin(&Value::Int(2001)).unwrap(), 2);
        assert!(hist.value_exact);
    }

    #[test]
    fn null_without_null_bin_is_an_error() {
        let sample = int_sample(&[(1, 1)], 0, true);
        let hist = build_equidepth(&sample, 2).unwrap();
        assert!(matches!(hist.bin(&Value::Null), Err(Error::NullWithoutNullBin)));
    }

    #[test]
    fn fixed_boundaries_clamp_out_of_range() {
        let hist = EquiDepthHistogram::from_numeric_boundaries(vec![2000, 2004, 2020], false);
        assert_eq!(hist.total_bins(), 4);
        assert_eq!(hist.bin(&Value::Int(1995)).unwrap(), 0);
        assert_eq!(hist.bin(&Value::Int(2000)).unwrap(), 0);
        assert_eq!(hist.bin(&Value::Int(2001)).unwrap(), 1);
        assert_eq!(hist.bin(&Value::Int(2015)).unwrap(), 2);
        assert_eq!(hist.bin(&Value::Int(2020)).unwrap(), 2);
        assert_eq!(hist.bin(&Value::Int(3000)).unwrap(), 3);
    }

    #[test]
    fn numeric_bins_are_monotone() {
        let sample = int_sample(
            &[(1, 3), (5, 1), (9, 4), (12, 2), (20, 2), (33, 7), (40, 1)],
            0,
            true,
        );
        let hist = build_equidepth(&sample, 2).unwrap();
        let mut last = 0;
        for v in -5..50 {
            let b = hist.bin(&Value::Int(v)).unwrap();
            assert!(b >= last, "bin must not decrease at {v}");
            last = b;
        }
    }

    #[test]
    fn unseen_strings_go_to_the_heaviest_bin() {
        let sample = str_sample(
            &[("drama", 50), ("comedy", 10), ("horror", 5), ("noir", 1), ("war", 1)],
            0,
            true,
        );
        let hist = build_equidepth(&sample, 1).unwrap();
        assert_eq!(hist.total_bins(), 2);
        let drama_bin = hist.bin(&Value::Str("drama".into())).unwrap();
        assert_eq!(hist.overflow_bin().unwrap(), drama_bin);
        assert_eq!(hist.bin(&Value::Str("unseen".into())).unwrap(), drama_bin);
    }

    #[test]
    fn per_value_bins_when_cardinality_fits() {
        let sample = str_sample(&[("a", 5), ("b", 3), ("c", 1)], 0, true);
        let hist = build_equidepth(&sample, 2).unwrap();
        assert_eq!(hist.total_bins(), 3);
        assert!(hist.value_exact);
        let a = hist.bin(&Value::Str("a".into())).unwrap();
        let b = hist.bin(&Value::Str("b".into())).unwrap();
        let c = hist.bin(&Value::Str("c".into())).unwrap();
        assert_eq!(hist.overflow_bin().unwrap(), a);
        assert!(hist.string_bin_is_singleton(b));
        assert!(hist.string_bin_is_singleton(c));
        // The overflow alias never certifies equality; unseen values
        // inserted after even an exhaustive build share it.
        assert!(!hist.string_bin_is_singleton(a));
    }

    #[test]
    fn overflow_alias_is_never_singleton() {
        let sample = str_sample(&[("a", 5), ("b", 3)], 0, false);
        let hist = build_equidepth(&sample, 2).unwrap();
        let a = hist.bin(&Value::Str("a".into())).unwrap();
        assert_eq!(hist.overflow_bin().unwrap(), a);
        assert!(!hist.string_bin_is_singleton(a));
        assert!(hist.string_bin_is_singleton(hist.bin(&Value::Str("b".into())).unwrap()));
    }

    fn join_fixture() -> (TableData, TableData) {
        let mut pk = TableData::new("title");
        pk.columns.insert("id".into(), Column::new_int64());
        pk.columns.insert("production_year".into(), Column::new_int64());
        for (id, year) in [(1, Some(1997)), (2, Some(1997)), (3, Some(2001)), (4, None)] {
            pk.push_row(&[
                ("id", Value::Int(id)),
                ("production_year", year.map(Value::Int).unwrap_or(Value::Null)),
            ])
            .unwrap();
        }
        let mut fk = TableData::new("cast_info");
        fk.columns.insert("movie_id".into(), Column::new_int64());
        for movie in [1, 1, 2, 3, 4] {
            fk.push_row(&[("movie_id", Value::Int(movie))]).unwrap();
        }
        (fk, pk)
    }

    #[test]
    fn estimate_counts_joined_frequencies() {
        let (fk, pk) = join_fixture();
        let sample =
            estimate_distribution(&fk, "movie_id", &pk, "id", "production_year", true, 100, 1, true)
                .unwrap();
        assert!(sample.complete);
        assert_eq!(
            sample.values,
            vec![(Value::Int(1997), 3), (Value::Int(2001), 1)]
        );
        assert_eq!(sample.null_weight, 1);
        assert!(sample.contains_null);
    }

    #[test]
    fn estimate_strict_rejects_dangling() {
        let (mut fk, pk) = join_fixture();
        fk.push_row(&[("movie_id", Value::Int(99))]).unwrap();
        let err = estimate_distribution(
            &fk, "movie_id", &pk, "id", "production_year", true, 100, 1, true,
        )
        .unwrap_err();
        assert!(matches!(err, Error::DanglingKey { .. }));
        let relaxed = estimate_distribution(
            &fk, "movie_id", &pk, "id", "production_year", true, 100, 1, false,
        )
        .unwrap();
        assert_eq!(relaxed.total_weight, 4);
    }

    #[test]
    fn all_null_source_still_builds() {
        let counts: BTreeMap<Value, u64> = BTreeMap::new();
        let sample = WeightedSample::from_counts(counts, 5, true);
        assert!(sample.contains_null);
        assert!(sample.values.is_empty());
        let hist = build_equidepth(&sample, 2).unwrap();
        assert_eq!(hist.bin(&Value::Null).unwrap(), 0);
        assert_eq!(hist.bin(&Value::Int(7)).unwrap(), 1);
    }

    #[test]
    fn histogram_serde_round_trip() {
        let sample = str_sample(&[("a", 5), ("b", 3), ("c", 1)], 2, false);
        let hist = build_equidepth(&sample, 2).unwrap();
        let j = serde_json::to_string(&hist).unwrap();
        let back: EquiDepthHistogram = serde_json::from_str(&j).unwrap();
        assert_eq!(back, hist);

        let hist = EquiDepthHistogram::from_numeric_boundaries(vec![2000, 2004, 2020], true);
        let j = serde_json::to_string(&hist).unwrap();
        assert!(j.contains("\"boundaries\":[2000,2004,2020]"), "{j}");
        let back: EquiDepthHistogram = serde_json::from_str(&j).unwrap();
        assert_eq!(back, hist);
    }
}
