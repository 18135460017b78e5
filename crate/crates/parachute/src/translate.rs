//! Translation of base predicates onto parachute columns.
//!
//! A translated predicate runs against the condensed column and may pass
//! rows the original predicate rejects, but never the reverse: whenever the
//! base predicate holds for a row's joined source value, the translated
//! predicate holds for the row's stored parachute value. Predicates that
//! cannot be translated soundly report [`NotTranslatable`] instead.

use std::collections::{BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::catalog::{ParachuteDescriptor, ParachuteKind, Representation};
use crate::error::{Error, Result};
use crate::fingerprint::{fingerprint, mask_matches, pattern_mask, Fingerprint};
use crate::histogram::EquiDepthHistogram;
use crate::like::{ilike_match, like_match};
use crate::value::{CmpOp, Value};

/// Largest finite language [`enumerate_regex`] will expand.
pub const REGEX_ENUMERATION_CAP: usize = 1024;

/// Per-column filter in a query, evaluated against source values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "kebab-case")]
pub enum BasePredicate {
    Compare { cmp: CmpOp, value: Value },
    Between { lo: Value, hi: Value },
    In { values: Vec<Value> },
    IsNull,
    Like { pattern: String },
    #[serde(rename = "ilike")]
    ILike { pattern: String },
    /// Full-string match against the finite language of a restricted regex.
    EnumerableRegex { pattern: String },
    /// Membership in a caller-enumerated qualifying value set.
    EnumeratedUdf { values: Vec<Value> },
}

/// Predicate over stored parachute values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "kebab-case")]
pub enum TranslatedPredicate {
    BinCompare { cmp: CmpOp, bin: u32 },
    BinBetween { lo: u32, hi: u32 },
    BinIn { bins: BTreeSet<u32> },
    MaskSubset { mask: u64 },
    AlwaysTrue,
    AlwaysFalse,
}

/// Soft refusal: the predicate has no sound translation on this descriptor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NotTranslatable {
    pub reason: String,
}

impl fmt::Display for NotTranslatable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "not translatable: {}", self.reason)
    }
}

fn refuse<T>(reason: impl Into<String>) -> std::result::Result<T, NotTranslatable> {
    Err(NotTranslatable { reason: reason.into() })
}

/// Translates `pred` onto the parachute column described by `desc`.
pub fn translate(
    pred: &BasePredicate,
    desc: &ParachuteDescriptor,
) -> std::result::Result<TranslatedPredicate, NotTranslatable> {
    match (&desc.representation, desc.kind) {
        (Representation::EquiDepthHistogram(hist), ParachuteKind::NumericHistogram) => {
            translate_numeric(pred, hist)
        }
        (Representation::EquiDepthHistogram(hist), ParachuteKind::LowcardString) => {
            translate_lowcard(pred, hist)
        }
        (Representation::BytePartition(partition), ParachuteKind::StringFingerprint) => {
            translate_fingerprint(pred, partition)
        }
        _ => refuse("descriptor representation does not match its kind"),
    }
}

fn bin_of(hist: &EquiDepthHistogram, v: &Value) -> std::result::Result<u32, NotTranslatable> {
    hist.bin(v).map_err(|e| NotTranslatable { reason: e.to_string() })
}

fn translate_numeric(
    pred: &BasePredicate,
    hist: &EquiDepthHistogram,
) -> std::result::Result<TranslatedPredicate, NotTranslatable> {
    use BasePredicate::*;
    match pred {
        Compare { cmp, value } => {
            let Value::Int(_) = value else {
                return refuse("non-integer constant on a numeric histogram");
            };
            let bin = bin_of(hist, value)?;
            match cmp {
                CmpOp::Eq => Ok(TranslatedPredicate::BinCompare { cmp: CmpOp::Eq, bin }),
                CmpOp::Ne => Ok(TranslatedPredicate::AlwaysTrue),
                CmpOp::Lt | CmpOp::Le => match hist.null_bin {
                    // `<=` alone would sweep the NULL bin in; NULL never
                    // satisfies a comparison, so pin the lower end.
                    Some(_) => Ok(TranslatedPredicate::BinBetween {
                        lo: hist.value_bin_range().0,
                        hi: bin,
                    }),
                    None => Ok(TranslatedPredicate::BinCompare { cmp: CmpOp::Le, bin }),
                },
                CmpOp::Gt | CmpOp::Ge => {
                    Ok(TranslatedPredicate::BinCompare { cmp: CmpOp::Ge, bin })
                }
            }
        }
        Between { lo, hi } => {
            if lo.as_int().is_none() || hi.as_int().is_none() {
                return refuse("non-integer bound on a numeric histogram");
            }
            Ok(TranslatedPredicate::BinBetween {
                lo: bin_of(hist, lo)?,
                hi: bin_of(hist, hi)?,
            })
        }
        In { values } => {
            let mut bins = BTreeSet::new();
            for v in values {
                match v {
                    Value::Null => {}
                    Value::Int(_) => {
                        bins.insert(bin_of(hist, v)?);
                    }
                    Value::Str(_) => return refuse("string constant on a numeric histogram"),
                }
            }
            Ok(TranslatedPredicate::BinIn { bins })
        }
        IsNull => Ok(match hist.null_bin {
            Some(b) => TranslatedPredicate::BinCompare { cmp: CmpOp::Eq, bin: b },
            None => TranslatedPredicate::AlwaysFalse,
        }),
        Like { .. } | ILike { .. } | EnumerableRegex { .. } => {
            refuse("pattern predicate on a numeric histogram")
        }
        EnumeratedUdf { values } => {
            if !hist.value_exact {
                return refuse("numeric UDF needs per-value bins");
            }
            let mut bins = BTreeSet::new();
            for v in values {
                match v {
                    Value::Null => {}
                    Value::Int(_) => {
                        bins.insert(bin_of(hist, v)?);
                    }
                    Value::Str(_) => return refuse("string constant on a numeric histogram"),
                }
            }
            Ok(TranslatedPredicate::BinIn { bins })
        }
    }
}

fn translate_lowcard(
    pred: &BasePredicate,
    hist: &EquiDepthHistogram,
) -> std::result::Result<TranslatedPredicate, NotTranslatable> {
    use BasePredicate::*;
    let str_bins = |values: &[Value]| -> std::result::Result<BTreeSet<u32>, NotTranslatable> {
        let mut bins = BTreeSet::new();
        for v in values {
            match v {
                Value::Null => {}
                Value::Str(_) => {
                    bins.insert(bin_of(hist, v)?);
                }
                Value::Int(_) => return refuse("integer constant on a string histogram"),
            }
        }
        Ok(bins)
    };
    match pred {
        Compare { cmp: CmpOp::Eq, value: v @ Value::Str(_) } => {
            Ok(TranslatedPredicate::BinCompare { cmp: CmpOp::Eq, bin: bin_of(hist, v)? })
        }
        Compare { cmp: CmpOp::Ne, value: v @ Value::Str(_) } => {
            let bin = bin_of(hist, v)?;
            if hist.string_bin_is_singleton(bin) {
                Ok(TranslatedPredicate::BinCompare { cmp: CmpOp::Ne, bin })
            } else {
                Ok(TranslatedPredicate::AlwaysTrue)
            }
        }
        Compare { .. } => refuse("order comparison on frequency-grouped string bins"),
        Between { .. } => refuse("range predicate on frequency-grouped string bins"),
        In { values } => Ok(TranslatedPredicate::BinIn { bins: str_bins(values)? }),
        IsNull => Ok(match hist.null_bin {
            Some(b) => TranslatedPredicate::BinCompare { cmp: CmpOp::Eq, bin: b },
            None => TranslatedPredicate::AlwaysFalse,
        }),
        Like { pattern } | ILike { pattern } => {
            let ci = matches!(pred, ILike { .. });
            let Some(bins_map) = hist.string_bins() else {
                return refuse("numeric histogram under a string predicate");
            };
            let mut bins = BTreeSet::new();
            for (value, bin) in bins_map {
                let hit = if ci { ilike_match(pattern, value) } else { like_match(pattern, value) };
                if hit {
                    bins.insert(*bin);
                }
            }
            // Values unseen at build (sampled builds, later inserts) may
            // match the pattern; they all live in the overflow bin.
            bins.insert(hist.overflow_bin().unwrap());
            Ok(TranslatedPredicate::BinIn { bins })
        }
        EnumerableRegex { pattern } => {
            let language = enumerate_regex(pattern, REGEX_ENUMERATION_CAP)
                .map_err(|e| NotTranslatable { reason: e.to_string() })?;
            let values: Vec<Value> = language.into_iter().map(Value::Str).collect();
            Ok(TranslatedPredicate::BinIn { bins: str_bins(&values)? })
        }
        EnumeratedUdf { values } => Ok(TranslatedPredicate::BinIn { bins: str_bins(values)? }),
    }
}

fn translate_fingerprint(
    pred: &BasePredicate,
    partition: &crate::fingerprint::BytePartition,
) -> std::result::Result<TranslatedPredicate, NotTranslatable> {
    use BasePredicate::*;
    // A disjunction of equalities can only demand the clusters common to
    // every alternative, so candidate sets fold by mask intersection.
    let common_mask = |values: &[Value]| -> std::result::Result<TranslatedPredicate, NotTranslatable> {
        let mut mask: Option<u64> = None;
        for v in values {
            match v {
                Value::Null => {}
                Value::Str(s) => {
                    let fp = fingerprint(partition, s).0;
                    mask = Some(mask.map_or(fp, |m| m & fp));
                }
                Value::Int(_) => return refuse("integer constant on a fingerprint column"),
            }
        }
        Ok(match mask {
            Some(m) => TranslatedPredicate::MaskSubset { mask: m },
            None => TranslatedPredicate::AlwaysFalse,
        })
    };
    match pred {
        Like { pattern } => Ok(TranslatedPredicate::MaskSubset {
            mask: pattern_mask(partition, pattern, false).0,
        }),
        ILike { pattern } => {
            if !partition.case_pairs_co_cluster() {
                return refuse("case pairs split across clusters; ILIKE mask would be unsound");
            }
            Ok(TranslatedPredicate::MaskSubset {
                mask: pattern_mask(partition, pattern, true).0,
            })
        }
        Compare { cmp: CmpOp::Eq, value: Value::Str(s) } => Ok(TranslatedPredicate::MaskSubset {
            mask: fingerprint(partition, s).0,
        }),
        Compare { cmp: CmpOp::Ne, value: Value::Str(_) } => Ok(TranslatedPredicate::AlwaysTrue),
        Compare { .. } => refuse("order comparison on a fingerprint column"),
        Between { .. } => refuse("range predicate on a fingerprint column"),
        In { values } => common_mask(values),
        IsNull => refuse("fingerprints cannot separate NULL from the empty string"),
        EnumerableRegex { pattern } => {
            let language = enumerate_regex(pattern, REGEX_ENUMERATION_CAP)
                .map_err(|e| NotTranslatable { reason: e.to_string() })?;
            let values: Vec<Value> = language.into_iter().map(Value::Str).collect();
            common_mask(&values)
        }
        EnumeratedUdf { values } => common_mask(values),
    }
}

/// Translates every predicate in a conjunction, splitting results from
/// refusals.
pub fn translate_all(
    preds: &[BasePredicate],
    desc: &ParachuteDescriptor,
) -> (Vec<TranslatedPredicate>, Vec<NotTranslatable>) {
    let mut ok = Vec::new();
    let mut refused = Vec::new();
    for p in preds {
        match translate(p, desc) {
            Ok(t) => ok.push(t),
            Err(n) => refused.push(n),
        }
    }
    (ok, refused)
}

/// Evaluates a translated predicate against a stored parachute value.
pub fn evaluate_translated(pred: &TranslatedPredicate, stored: u64) -> bool {
    match pred {
        TranslatedPredicate::BinCompare { cmp, bin } => cmp.matches(stored.cmp(&(*bin as u64))),
        TranslatedPredicate::BinBetween { lo, hi } => {
            (*lo as u64) <= stored && stored <= (*hi as u64)
        }
        TranslatedPredicate::BinIn { bins } => {
            u32::try_from(stored).map(|s| bins.contains(&s)).unwrap_or(false)
        }
        TranslatedPredicate::MaskSubset { mask } => {
            mask_matches(Fingerprint(stored), Fingerprint(*mask))
        }
        TranslatedPredicate::AlwaysTrue => true,
        TranslatedPredicate::AlwaysFalse => false,
    }
}

/// Expands a restricted regex into its exact finite language. Supported
/// constructs: literal characters, alternation, grouping, and `?` on a
/// literal or group. Anything else, or a language larger than `cap`,
/// is unsupported.
pub fn enumerate_regex(pattern: &str, cap: usize) -> Result<BTreeSet<String>> {
    struct Parser<'a> {
        pattern: &'a str,
        chars: Vec<char>,
        pos: usize,
        cap: usize,
    }
    impl Parser<'_> {
        fn fail(&self, reason: impl Into<String>) -> Error {
            Error::UnsupportedRegex { pattern: self.pattern.to_string(), reason: reason.into() }
        }
        fn peek(&self) -> Option<char> {
            self.chars.get(self.pos).copied()
        }
        fn alternation(&mut self) -> Result<BTreeSet<String>> {
            let mut language = self.concatenation()?;
            while self.peek() == Some('|') {
                self.pos += 1;
                language.extend(self.concatenation()?);
                if language.len() > self.cap {
                    return Err(self.fail(format!("language exceeds {} strings", self.cap)));
                }
            }
            Ok(language)
        }
        fn concatenation(&mut self) -> Result<BTreeSet<String>> {
            let mut acc: BTreeSet<String> = BTreeSet::from([String::new()]);
            loop {
                let atom = match self.peek() {
                    None | Some(')') | Some('|') => break,
                    Some('(') => {
                        self.pos += 1;
                        let inner = self.alternation()?;
                        if self.peek() != Some(')') {
                            return Err(self.fail("unclosed group"));
                        }
                        self.pos += 1;
                        inner
                    }
                    Some('?') => return Err(self.fail("'?' with nothing to repeat")),
                    Some(c) if "*+.[]{}^$\\".contains(c) => {
                        return Err(self.fail(format!("construct '{c}'")))
                    }
                    Some(c) => {
                        self.pos += 1;
                        BTreeSet::from([c.to_string()])
                    }
                };
                let optional = self.peek() == Some('?');
                if optional {
                    self.pos += 1;
                }
                let mut next = BTreeSet::new();
                for prefix in &acc {
                    if optional {
                        next.insert(prefix.clone());
                    }
                    for suffix in &atom {
                        next.insert(format!("{prefix}{suffix}"));
                    }
                }
                if next.len() > self.cap {
                    return Err(self.fail(format!("language exceeds {} strings", self.cap)));
                }
                acc = next;
            }
            Ok(acc)
        }
    }
    let mut p = Parser { pattern, chars: pattern.chars().collect(), pos: 0, cap };
    let language = p.alternation()?;
    if p.pos != p.chars.len() {
        return Err(p.fail("unbalanced ')'"));
    }
    Ok(language)
}

/// A base predicate with regex and UDF sets pre-expanded, ready for exact
/// per-row evaluation.
#[derive(Debug, Clone)]
pub enum PreparedPredicate {
    Compare { cmp: CmpOp, value: Value },
    Between { lo: Value, hi: Value },
    InSet { values: HashSet<Value> },
    IsNull,
    Like { pattern: String },
    ILike { pattern: String },
}

impl BasePredicate {
    pub fn prepare(&self) -> Result<PreparedPredicate> {
        Ok(match self {
            BasePredicate::Compare { cmp, value } => {
                PreparedPredicate::Compare { cmp: *cmp, value: value.clone() }
            }
            BasePredicate::Between { lo, hi } => {
                PreparedPredicate::Between { lo: lo.clone(), hi: hi.clone() }
            }
            BasePredicate::In { values } | BasePredicate::EnumeratedUdf { values } => {
                PreparedPredicate::InSet { values: values.iter().cloned().collect() }
            }
            BasePredicate::IsNull => PreparedPredicate::IsNull,
            BasePredicate::Like { pattern } => PreparedPredicate::Like { pattern: pattern.clone() },
            BasePredicate::ILike { pattern } => {
                PreparedPredicate::ILike { pattern: pattern.clone() }
            }
            BasePredicate::EnumerableRegex { pattern } => {
                let language = enumerate_regex(pattern, REGEX_ENUMERATION_CAP)?;
                PreparedPredicate::InSet {
                    values: language.into_iter().map(Value::Str).collect(),
                }
            }
        })
    }
}

impl PreparedPredicate {
    /// Exact SQL-style evaluation; NULL satisfies only `IsNull`.
    pub fn eval(&self, value: &Value) -> bool {
        match self {
            PreparedPredicate::Compare { cmp, value: rhs } => match value.compare_non_null(rhs) {
                Some(ord) => cmp.matches(ord),
                None => false,
            },
            PreparedPredicate::Between { lo, hi } => {
                let ge = matches!(value.compare_non_null(lo), Some(o) if o != std::cmp::Ordering::Less);
                let le = matches!(value.compare_non_null(hi), Some(o) if o != std::cmp::Ordering::Greater);
                ge && le
            }
            PreparedPredicate::InSet { values } => !value.is_null() && values.contains(value),
            PreparedPredicate::IsNull => value.is_null(),
            PreparedPredicate::Like { pattern } => match value.as_str() {
                Some(s) => like_match(pattern, s),
                None => false,
            },
            PreparedPredicate::ILike { pattern } => match value.as_str() {
                Some(s) => ilike_match(pattern, s),
                None => false,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{helper_column_name, parachute_column_name};
    use crate::fingerprint::round_robin_partition;
    use crate::histogram::{build_equidepth, WeightedSample};
    use std::collections::BTreeMap;

    fn desc_with(kind: ParachuteKind, representation: Representation, nullable: bool) -> ParachuteDescriptor {
        ParachuteDescriptor {
            id: 0,
            fk_table: "fk".into(),
            fk_column: "ref_id".into(),
            pk_table: "pk".into(),
            pk_column: "id".into(),
            source_column: "src".into(),
            pbw: match &representation {
                Representation::BytePartition(p) => p.pbw(),
                _ => 3,
            },
            kind,
            representation,
            parachute_column: parachute_column_name("pk", "src"),
            helper_column: matches!(kind, ParachuteKind::StringFingerprint)
                .then(|| helper_column_name("src")),
            nullable_source: nullable,
            transitive: false,
            attached: true,
        }
    }

    fn numeric_desc(boundaries: Vec<i64>, nullable: bool) -> ParachuteDescriptor {
        desc_with(
            ParachuteKind::NumericHistogram,
            Representation::EquiDepthHistogram(EquiDepthHistogram::from_numeric_boundaries(
                boundaries, nullable,
            )),
            nullable,
        )
    }

    fn lowcard_desc(freqs: &[(&str, u64)], complete: bool) -> ParachuteDescriptor {
        let counts: BTreeMap<Value, u64> =
            freqs.iter().map(|(v, w)| (Value::Str(v.to_string()), *w)).collect();
        let sample = WeightedSample::from_counts(counts, 0, complete);
        desc_with(
            ParachuteKind::LowcardString,
            Representation::EquiDepthHistogram(build_equidepth(&sample, 3).unwrap()),
            false,
        )
    }

    fn fingerprint_desc(pbw: u32) -> ParachuteDescriptor {
        desc_with(
            ParachuteKind::StringFingerprint,
            Representation::BytePartition(round_robin_partition(pbw)),
            false,
        )
    }

    #[test]
    fn less_than_maps_to_le_on_the_bin() {
        // Eight bins; 2025 lands in the last one.
        let desc = numeric_desc(vec![1950, 1960, 1970, 1980, 1990, 2000, 2010], false);
        let t = translate(
            &BasePredicate::Compare { cmp: CmpOp::Lt, value: Value::Int(2025) },
            &desc,
        )
        .unwrap();
        assert_eq!(t, TranslatedPredicate::BinCompare { cmp: CmpOp::Le, bin: 7 });
    }

    #[test]
    fn nullable_range_excludes_the_null_bin() {
        let desc = numeric_desc(vec![2000, 2004], true);
        let t = translate(
            &BasePredicate::Compare { cmp: CmpOp::Le, value: Value::Int(2002) },
            &desc,
        )
        .unwrap();
        assert_eq!(t, TranslatedPredicate::BinBetween { lo: 1, hi: 2 });
        assert!(!evaluate_translated(&t, 0));
        assert!(evaluate_translated(&t, 1));
        let t = translate(
            &BasePredicate::Compare { cmp: CmpOp::Ge, value: Value::Int(2002) },
            &desc,
        )
        .unwrap();
        assert!(!evaluate_translated(&t, 0));
    }

    #[test]
    fn between_and_in_map_to_bins() {
        let desc = numeric_desc(vec![2000, 2004, 2020], false);
        let t = translate(
            &BasePredicate::Between { lo: Value::Int(2001), hi: Value::Int(2010) },
            &desc,
        )
        .unwrap();
        assert_eq!(t, TranslatedPredicate::BinBetween { lo: 1, hi: 2 });
        let t = translate(
            &BasePredicate::In { values: vec![Value::Int(1995), Value::Int(2019)] },
            &desc,
        )
        .unwrap();
        assert_eq!(t, TranslatedPredicate::BinIn { bins: BTreeSet::from([0, 2]) });
    }

    #[test]
    fn inequality_is_always_true_on_numeric() {
        let desc = numeric_desc(vec![2000], false);
        let t = translate(
            &BasePredicate::Compare { cmp: CmpOp::Ne, value: Value::Int(1999) },
            &desc,
        )
        .unwrap();
        assert_eq!(t, TranslatedPredicate::AlwaysTrue);
    }

    #[test]
    fn is_null_translation() {
        let desc = numeric_desc(vec![2000], true);
        assert_eq!(
            translate(&BasePredicate::IsNull, &desc).unwrap(),
            TranslatedPredicate::BinCompare { cmp: CmpOp::Eq, bin: 0 }
        );
        let desc = numeric_desc(vec![2000], false);
        assert_eq!(
            translate(&BasePredicate::IsNull, &desc).unwrap(),
            TranslatedPredicate::AlwaysFalse
        );
    }

    #[test]
    fn like_on_numeric_is_refused() {
        let desc = numeric_desc(vec![2000], false);
        assert!(translate(&BasePredicate::Like { pattern: "%x%".into() }, &desc).is_err());
    }

    #[test]
    fn numeric_udf_needs_per_value_bins() {
        let counts: BTreeMap<Value, u64> = (0..4).map(|i| (Value::Int(i), 1)).collect();
        let exact = desc_with(
            ParachuteKind::NumericHistogram,
            Representation::EquiDepthHistogram(
                build_equidepth(&WeightedSample::from_counts(counts, 0, true), 2).unwrap(),
            ),
            false,
        );
        let t = translate(
            &BasePredicate::EnumeratedUdf { values: vec![Value::Int(0), Value::Int(3)] },
            &exact,
        )
        .unwrap();
        assert_eq!(t, TranslatedPredicate::BinIn { bins: BTreeSet::from([0, 3]) });

        let counts: BTreeMap<Value, u64> = (0..40).map(|i| (Value::Int(i), 1)).collect();
        let coarse = desc_with(
            ParachuteKind::NumericHistogram,
            Representation::EquiDepthHistogram(
                build_equidepth(&WeightedSample::from_counts(counts, 0, true), 2).unwrap(),
            ),
            false,
        );
        assert!(translate(
            &BasePredicate::EnumeratedUdf { values: vec![Value::Int(0)] },
            &coarse
        )
        .is_err());
    }

    #[test]
    fn lowcard_equality_and_singleton_inequality() {
        let desc = lowcard_desc(&[("drama", 9), ("comedy", 3), ("noir", 1)], true);
        let hist = desc.histogram().unwrap();
        let noir_bin = hist.bin(&Value::Str("noir".into())).unwrap();
        let t = translate(
            &BasePredicate::Compare { cmp: CmpOp::Eq, value: Value::Str("noir".into()) },
            &desc,
        )
        .unwrap();
        assert_eq!(t, TranslatedPredicate::BinCompare { cmp: CmpOp::Eq, bin: noir_bin });
        let t = translate(
            &BasePredicate::Compare { cmp: CmpOp::Ne, value: Value::Str("noir".into()) },
            &desc,
        )
        .unwrap();
        assert_eq!(t, TranslatedPredicate::BinCompare { cmp: CmpOp::Ne, bin: noir_bin });
    }

    #[test]
    fn lowcard_inequality_on_shared_or_overflow_bin_stays_true() {
        // pbw=1 leaves two bins: "big" alone in the heaviest (the overflow
        // alias), "y" and "z" squeezed together in the other.
        let counts: BTreeMap<Value, u64> = [("big", 10u64), ("y", 1), ("z", 1)]
            .iter()
            .map(|(v, w)| (Value::Str(v.to_string()), *w))
            .collect();
        let sample = WeightedSample::from_counts(counts, 0, true);
        let desc = desc_with(
            ParachuteKind::LowcardString,
            Representation::EquiDepthHistogram(build_equidepth(&sample, 1).unwrap()),
            false,
        );
        let hist = desc.histogram().unwrap();
        assert_eq!(hist.bin(&Value::Str("big".into())).unwrap(), hist.overflow_bin().unwrap());
        // Shared bin: excluding it would also drop rows bound to "z".
        let t = translate(
            &BasePredicate::Compare { cmp: CmpOp::Ne, value: Value::Str("y".into()) },
            &desc,
        )
        .unwrap();
        assert_eq!(t, TranslatedPredicate::AlwaysTrue);
        // Overflow alias: rows with unseen values land there too.
        let t = translate(
            &BasePredicate::Compare { cmp: CmpOp::Ne, value: Value::Str("big".into()) },
            &desc,
        )
        .unwrap();
        assert_eq!(t, TranslatedPredicate::AlwaysTrue);
    }

    #[test]
    fn lowcard_like_enumerates_matches() {
        let desc = lowcard_desc(&[("drama", 9), ("dark comedy", 3), ("noir", 1)], true);
        let hist = desc.histogram().unwrap();
        let t = translate(&BasePredicate::Like { pattern: "d%".into() }, &desc).unwrap();
        let expected: BTreeSet<u32> = [
            hist.bin(&Value::Str("drama".into())).unwrap(),
            hist.bin(&Value::Str("dark comedy".into())).unwrap(),
        ]
        .into();
        assert_eq!(t, TranslatedPredicate::BinIn { bins: expected });
    }

    #[test]
    fn lowcard_like_always_keeps_overflow() {
        // Later inserts can carry values no build ever saw; they sit in the
        // overflow bin, so a pattern may never exclude it. This holds even
        // for builds that were exhaustive at attach time.
        for complete in [false, true] {
            let desc = lowcard_desc(&[("drama", 9), ("noir", 1)], complete);
            let hist = desc.histogram().unwrap();
            let t = translate(&BasePredicate::Like { pattern: "zzz%".into() }, &desc).unwrap();
            assert_eq!(
                t,
                TranslatedPredicate::BinIn { bins: BTreeSet::from([hist.overflow_bin().unwrap()]) }
            );
        }
    }

    #[test]
    fn fingerprint_like_and_equality() {
        let desc = fingerprint_desc(4);
        let p = round_robin_partition(4);
        let t = translate(&BasePredicate::Like { pattern: "%utn%".into() }, &desc).unwrap();
        assert_eq!(t, TranslatedPredicate::MaskSubset { mask: pattern_mask(&p, "%utn%", false).0 });
        let t = translate(
            &BasePredicate::Compare { cmp: CmpOp::Eq, value: Value::Str("nut".into()) },
            &desc,
        )
        .unwrap();
        assert_eq!(t, TranslatedPredicate::MaskSubset { mask: fingerprint(&p, "nut").0 });
    }

    #[test]
    fn fingerprint_ilike_gate() {
        let ok = fingerprint_desc(4);
        assert!(translate(&BasePredicate::ILike { pattern: "%Nut%".into() }, &ok).is_ok());
        let bad = fingerprint_desc(5);
        assert!(translate(&BasePredicate::ILike { pattern: "%Nut%".into() }, &bad).is_err());
        // Plain LIKE does not need the gate.
        assert!(translate(&BasePredicate::Like { pattern: "%nut%".into() }, &bad).is_ok());
    }

    #[test]
    fn fingerprint_in_list_takes_common_clusters() {
        let desc = fingerprint_desc(4);
        let p = round_robin_partition(4);
        let t = translate(
            &BasePredicate::In {
                values: vec![Value::Str("nut".into()), Value::Str("net".into())],
            },
            &desc,
        )
        .unwrap();
        let expected = fingerprint(&p, "nut").0 & fingerprint(&p, "net").0;
        assert_eq!(t, TranslatedPredicate::MaskSubset { mask: expected });
        assert_eq!(
            translate(&BasePredicate::In { values: vec![] }, &desc).unwrap(),
            TranslatedPredicate::AlwaysFalse
        );
    }

    #[test]
    fn regex_enumeration_examples() {
        let lang = enumerate_regex("house(keeping|work)?", 1024).unwrap();
        assert_eq!(
            lang,
            BTreeSet::from(["house".to_string(), "housekeeping".into(), "housework".into()])
        );
        let lang = enumerate_regex("colou?r", 1024).unwrap();
        assert_eq!(lang, BTreeSet::from(["color".to_string(), "colour".into()]));
        let lang = enumerate_regex("a(b|c)(d|e)", 1024).unwrap();
        assert_eq!(lang.len(), 4);
        assert!(enumerate_regex("a*", 1024).is_err());
        assert!(enumerate_regex("a[bc]", 1024).is_err());
        assert!(enumerate_regex("(ab", 1024).is_err());
        assert!(enumerate_regex("?a", 1024).is_err());
        // Optional repeats of one letter collapse after dedup.
        assert_eq!(enumerate_regex("a?a?a?", 16).unwrap().len(), 4);
        // Eleven two-way choices give 2048 distinct strings, over a 1024 cap.
        assert!(enumerate_regex(&"(a|b)".repeat(11), 1024).is_err());
    }

    #[test]
    fn regex_translates_as_value_set() {
        let desc = lowcard_desc(&[("house", 5), ("housework", 2), ("barn", 1)], true);
        let hist = desc.histogram().unwrap();
        let t = translate(
            &BasePredicate::EnumerableRegex { pattern: "house(keeping|work)?".into() },
            &desc,
        )
        .unwrap();
        // "housekeeping" is unseen: its bin is the overflow bin.
        let mut expected = BTreeSet::from([
            hist.bin(&Value::Str("house".into())).unwrap(),
            hist.bin(&Value::Str("housework".into())).unwrap(),
        ]);
        expected.insert(hist.overflow_bin().unwrap());
        assert_eq!(t, TranslatedPredicate::BinIn { bins: expected });
    }

    #[test]
    fn prepared_eval_matches_sql_semantics() {
        let p = BasePredicate::Compare { cmp: CmpOp::Lt, value: Value::Int(10) }.prepare().unwrap();
        assert!(p.eval(&Value::Int(5)));
        assert!(!p.eval(&Value::Int(10)));
        assert!(!p.eval(&Value::Null));
        let p = BasePredicate::IsNull.prepare().unwrap();
        assert!(p.eval(&Value::Null));
        assert!(!p.eval(&Value::Int(0)));
        let p = BasePredicate::EnumerableRegex { pattern: "ab?".into() }.prepare().unwrap();
        assert!(p.eval(&Value::Str("ab".into())));
        assert!(p.eval(&Value::Str("a".into())));
        assert!(!p.eval(&Value::Str("abb".into())));
    }

    #[test]
    fn predicate_serde_shapes() {
        let p = BasePredicate::Compare { cmp: CmpOp::Lt, value: Value::Int(2025) };
        assert_eq!(
            serde_json::to_string(&p).unwrap(),
            r#"{"op":"compare","cmp":"lt","value":2025}"#
        );
        let p: BasePredicate =
            serde_json::from_str(r#"{"op":"like","pattern":"%seq%"}"#).unwrap();
        assert_eq!(p, BasePredicate::Like { pattern: "%seq%".into() });
        let t = TranslatedPredicate::BinCompare { cmp: CmpOp::Le, bin: 7 };
        let j = serde_json::to_string(&t).unwrap();
        let back: TranslatedPredicate = serde_json::from_str(&j).unwrap();
        assert_eq!(back, t);
    }

    // Randomized soundness: base predicate true on the source value implies
    // the translated predicate true on the stored parachute value.
    #[test]
    fn translation_never_rejects_qualifying_rows() {
        let mut state = 0xDEADBEEFu64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            state >> 33
        };
        let words = ["ara", "bel", "cor", "dun", "eli", "fay", "gor", "hix", "ivo", "jun"];
        for trial in 0..400 {
            let pbw = [1u32, 2, 4, 8, 16][(next() % 5) as usize];
            match next() % 3 {
                0 => {
                    // Numeric: build from a subsample, probe a wider domain.
                    let nullable = next() % 2 == 0;
                    let mut counts: BTreeMap<Value, u64> = BTreeMap::new();
                    for _ in 0..(2 + next() % 12) {
                        *counts.entry(Value::Int((next() % 60) as i64)).or_insert(0) += 1 + next() % 5;
                    }
                    let mut sample = WeightedSample::from_counts(counts, 0, false);
                    sample.contains_null = nullable;
                    if pbw == 1 && nullable {
                        continue;
                    }
                    let hist = build_equidepth(&sample, pbw).unwrap();
                    let desc = desc_with(
                        ParachuteKind::NumericHistogram,
                        Representation::EquiDepthHistogram(hist.clone()),
                        nullable,
                    );
                    let a = (next() % 80) as i64 - 10;
                    let b = a + (next() % 20) as i64;
                    let pred = match next() % 5 {
                        0 => BasePredicate::Compare {
                            cmp: [CmpOp::Eq, CmpOp::Ne, CmpOp::Lt, CmpOp::Le, CmpOp::Gt, CmpOp::Ge]
                                [(next() % 6) as usize],
                            value: Value::Int(a),
                        },
                        1 => BasePredicate::Between { lo: Value::Int(a), hi: Value::Int(b) },
                        2 => BasePredicate::In {
                            values: (0..next() % 4).map(|_| Value::Int((next() % 80) as i64 - 10)).collect(),
                        },
                        3 => BasePredicate::IsNull,
                        _ => BasePredicate::EnumeratedUdf {
                            values: (0..next() % 4).map(|_| Value::Int((next() % 80) as i64 - 10)).collect(),
                        },
                    };
                    let Ok(translated) = translate(&pred, &desc) else { continue };
                    let prepared = pred.prepare().unwrap();
                    for _ in 0..40 {
                        let value = if nullable && next() % 5 == 0 {
                            Value::Null
                        } else {
                            Value::Int((next() % 90) as i64 - 15)
                        };
                        let stored = hist.bin(&value).unwrap() as u64;
                        if prepared.eval(&value) {
                            assert!(
                                evaluate_translated(&translated, stored),
                                "trial {trial}: {pred:?} true on {value:?} but bin {stored} rejected"
                            );
                        }
                    }
                }
                1 => {
                    // Low-cardinality strings, possibly incomplete build.
                    let complete = next() % 2 == 0;
                    let seen = 2 + (next() % 6) as usize;
                    let mut counts: BTreeMap<Value, u64> = BTreeMap::new();
                    for w in words.iter().take(seen) {
                        counts.insert(Value::Str(w.to_string()), 1 + next() % 9);
                    }
                    let sample = WeightedSample::from_counts(counts, 0, complete);
                    let hist = build_equidepth(&sample, pbw).unwrap();
                    let desc = desc_with(
                        ParachuteKind::LowcardString,
                        Representation::EquiDepthHistogram(hist.clone()),
                        false,
                    );
                    let pick = |next: &mut dyn FnMut() -> u64| {
                        Value::Str(words[(next() % words.len() as u64) as usize].to_string())
                    };
                    let pred = match next() % 5 {
                        0 => BasePredicate::Compare {
                            cmp: if next() % 2 == 0 { CmpOp::Eq } else { CmpOp::Ne },
                            value: pick(&mut next),
                        },
                        1 => BasePredicate::In {
                            values: (0..next() % 4).map(|_| pick(&mut next)).collect(),
                        },
                        2 => BasePredicate::Like { pattern: format!("%{}%", ["a", "o", "un", "el"][(next() % 4) as usize]) },
                        3 => BasePredicate::ILike { pattern: format!("%{}%", ["A", "O", "UN"][(next() % 3) as usize]) },
                        _ => BasePredicate::EnumeratedUdf {
                            values: (0..next() % 4).map(|_| pick(&mut next)).collect(),
                        },
                    };
                    let Ok(translated) = translate(&pred, &desc) else { continue };
                    let prepared = pred.prepare().unwrap();
                    for w in &words {
                        // Rows whose value was unseen at build carry the
                        // overflow bin, exactly like a late attach would.
                        let value = Value::Str(w.to_string());
                        let stored = hist.bin(&value).unwrap() as u64;
                        if prepared.eval(&value) {
                            assert!(
                                evaluate_translated(&translated, stored),
                                "trial {trial}: {pred:?} true on {value:?} but bin {stored} rejected"
                            );
                        }
                    }
                }
                _ => {
                    // Fingerprints.
                    let desc = fingerprint_desc(pbw);
                    let partition = round_robin_partition(pbw);
                    let pick = |next: &mut dyn FnMut() -> u64| {
                        let n = 1 + next() % 3;
                        let mut s = String::new();
                        for _ in 0..n {
                            s.push_str(words[(next() % words.len() as u64) as usize]);
                        }
                        s
                    };
                    let pred = match next() % 4 {
                        0 => BasePredicate::Like { pattern: format!("%{}%", pick(&mut next)) },
                        1 => BasePredicate::ILike {
                            pattern: format!("%{}%", pick(&mut next).to_ascii_uppercase()),
                        },
                        2 => BasePredicate::Compare { cmp: CmpOp::Eq, value: Value::Str(pick(&mut next)) },
                        _ => BasePredicate::In {
                            values: (0..1 + next() % 3).map(|_| Value::Str(pick(&mut next))).collect(),
                        },
                    };
                    let Ok(translated) = translate(&pred, &desc) else { continue };
                    let prepared = pred.prepare().unwrap();
                    for _ in 0..40 {
                        let value = Value::Str(pick(&mut next));
                        let stored = fingerprint(&partition, value.as_str().unwrap()).0;
                        if prepared.eval(&value) {
                            assert!(
                                evaluate_translated(&translated, stored),
                                "trial {trial}: {pred:?} true on {value:?} but mask {stored:b} rejected"
                            );
                        }
                    }
                }
            }
        }
    }
}
