//! Release gate: ten checks covering soundness, mode equivalence, flow
//! analysis goldens, fingerprint and bin goldens, bloom behavior, the
//! partition optimizer, trend ordering, maintenance equivalence, and the
//! space formula. Each check prints one PASS or FAIL line; run with
//! `cargo test --test acceptance -- --nocapture` to see them all.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::catch_unwind;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use parachute::attach::{
    attach_registered, build_and_attach, maintain_insert, maintain_update, AttachOptions,
};
use parachute::bench::{attach_snowflake, bench_queries, generate_snowflake, sweep, SweepOptions};
use parachute::catalog::{
    ColumnDef, ForeignKey, ParachuteKind, Representation, Schema, TableDef,
};
use parachute::db::Database;
use parachute::engine::bloom::{hash_int, BloomFilter, BLOOM_BITS, BLOOM_HASHES, DEFAULT_HASH_SEED};
use parachute::engine::{run_query, ExecMode, ExecOptions};
use parachute::fingerprint::{fingerprint, mask_matches, pattern_mask, BytePartition};
use parachute::histogram::{min_max_partition, EquiDepthHistogram};
use parachute::oracle::yannakakis_reduce;
use parachute::planner::{
    analyze_flow, blocked_pairs, decompose_pipelines, FilterSpec, FlowMode, JoinEdge, PlanNode,
    Query, QueryAlias,
};
use parachute::translate::BasePredicate;
use parachute::value::{CmpOp, LogicalType, Value};

fn int(name: &str, nullable: bool) -> ColumnDef {
    ColumnDef { name: name.into(), column_type: LogicalType::Int64, nullable }
}

fn text(name: &str, nullable: bool) -> ColumnDef {
    ColumnDef { name: name.into(), column_type: LogicalType::String, nullable }
}

fn scan(alias: &str) -> PlanNode {
    PlanNode::Scan { alias: alias.into() }
}

fn join(build: PlanNode, probe: PlanNode) -> PlanNode {
    PlanNode::Join { build: Box::new(build), probe: Box::new(probe) }
}

fn two_table_query(filter: BasePredicate) -> Query {
    Query {
        aliases: vec![
            QueryAlias { alias: "f".into(), table: "fact".into() },
            QueryAlias { alias: "d".into(), table: "dim".into() },
        ],
        joins: vec![JoinEdge {
            left: "f".into(),
            left_column: "dim_id".into(),
            right: "d".into(),
            right_column: "id".into(),
        }],
        filters: vec![FilterSpec { alias: "d".into(), column: "v".into(), predicate: filter }],
        parachute_filters: vec![],
    }
}

// ---------------------------------------------------------------- check 1

const WORDS: [&str; 12] = [
    "sequel", "sequence", "dark", "darkness", "tone", "stone", "nut", "nutella", "ghost",
    "gloom", "utn", "river",
];

fn random_numeric_predicate(rng: &mut ChaCha8Rng) -> BasePredicate {
    let value = || Value::Int(1985);
    let _ = value;
    let pivot = |rng: &mut ChaCha8Rng| Value::Int(1985 + rng.random_range(0..50));
    match rng.random_range(0..10) {
        0..=4 => {
            let cmp = [CmpOp::Lt, CmpOp::Le, CmpOp::Gt, CmpOp::Ge, CmpOp::Eq, CmpOp::Ne]
                [rng.random_range(0..6)];
            BasePredicate::Compare { cmp, value: pivot(rng) }
        }
        5 | 6 => {
            let mut a = 1985 + rng.random_range(0..50);
            let mut b = 1985 + rng.random_range(0..50);
            if a > b {
                std::mem::swap(&mut a, &mut b);
            }
            BasePredicate::Between { lo: Value::Int(a), hi: Value::Int(b) }
        }
        7 | 8 => {
            let n = 2 + rng.random_range(0..3);
            BasePredicate::In { values: (0..n).map(|_| pivot(rng)).collect() }
        }
        _ => BasePredicate::IsNull,
    }
}

fn random_string_predicate(rng: &mut ChaCha8Rng) -> BasePredicate {
    let word = |rng: &mut ChaCha8Rng| WORDS[rng.random_range(0..WORDS.len())].to_string();
    match rng.random_range(0..12) {
        0 | 1 => BasePredicate::Compare { cmp: CmpOp::Eq, value: Value::Str(word(rng)) },
        2 => BasePredicate::Compare { cmp: CmpOp::Ne, value: Value::Str(word(rng)) },
        3 | 4 => {
            let n = 2 + rng.random_range(0..3);
            BasePredicate::In { values: (0..n).map(|_| Value::Str(word(rng))).collect() }
        }
        5 | 6 => {
            let w = word(rng);
            let cut = 1 + rng.random_range(0..w.len());
            BasePredicate::Like { pattern: format!("{}%", &w[..cut]) }
        }
        7 | 8 => {
            let w = word(rng);
            let start = rng.random_range(0..w.len());
            let end = start + 1 + rng.random_range(0..(w.len() - start));
            BasePredicate::ILike { pattern: format!("%{}%", &w[start..end]).to_uppercase() }
        }
        9 => BasePredicate::EnumerableRegex { pattern: "(nut|tone|dark)".into() },
        10 => {
            let n = 2 + rng.random_range(0..2);
            BasePredicate::EnumeratedUdf {
                values: (0..n).map(|_| Value::Str(word(rng))).collect(),
            }
        }
        _ => BasePredicate::IsNull,
    }
}

/// Random fixtures over every descriptor kind: whatever the engine prunes,
/// the exact reducer's survivors must still be emitted.
fn soundness_suite() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x50_AB_17);
    let modes = [ExecMode::Psf, ExecMode::Parachute, ExecMode::Both];
    for trial in 0..10_000usize {
        let kind = [
            ParachuteKind::NumericHistogram,
            ParachuteKind::LowcardString,
            ParachuteKind::StringFingerprint,
        ][trial % 3];
        let numeric = kind == ParachuteKind::NumericHistogram;
        let pbw = [2u32, 3, 4, 8][rng.random_range(0..4)];
        let mode = modes[(trial / 3) % 3];

        let schema = Schema::new(
            vec![
                TableDef {
                    name: "dim".into(),
                    columns: vec![
                        int("id", false),
                        if numeric { int("v", true) } else { text("v", true) },
                    ],
                },
                TableDef {
                    name: "fact".into(),
                    columns: vec![int("id", false), int("dim_id", true)],
                },
            ],
            vec![ForeignKey {
                fk_table: "fact".into(),
                fk_column: "dim_id".into(),
                pk_table: "dim".into(),
                pk_column: "id".into(),
            }],
        )
        .unwrap();
        let mut db = Database::new(schema);
        let n_dim = 10 + rng.random_range(0..8) as i64;
        for id in 1..=n_dim {
            let v = if rng.random_bool(0.1) {
                Value::Null
            } else if numeric {
                Value::Int(1990 + rng.random_range(0..40))
            } else {
                Value::Str(WORDS[rng.random_range(0..WORDS.len())].into())
            };
            db.table_mut("dim").unwrap().push_row(&[("id", Value::Int(id)), ("v", v)]).unwrap();
        }
        let n_fact = 30 + rng.random_range(0..10) as i64;
        for id in 1..=n_fact {
            let key = match rng.random_range(0..10) {
                0 => Value::Null,
                1 => Value::Int(n_dim + 1 + rng.random_range(0..5)),
                _ => Value::Int(1 + rng.random_range(0..n_dim as u64) as i64),
            };
            db.table_mut("fact")
                .unwrap()
                .push_row(&[("id", Value::Int(id)), ("dim_id", key)])
                .unwrap();
        }
        build_and_attach(&mut db, "fact", "dim", "v", pbw, kind, &AttachOptions::default())
            .unwrap();

        let predicate = if numeric {
            random_numeric_predicate(&mut rng)
        } else {
            random_string_predicate(&mut rng)
        };
        let query = two_table_query(predicate.clone());
        // The dimension scans last, so its filter cannot reach the fact
        // scan and must ride the parachute column.
        let plan = join(scan("f"), scan("d"));
        let (metrics, _, _) =
            run_query(&db, &query, Some(&plan), &ExecOptions::with_mode(mode)).unwrap();
        let oracle = yannakakis_reduce(&db, &query).unwrap();
        for (i, alias) in oracle.aliases.iter().enumerate() {
            let emitted = &metrics.alias(alias).unwrap().emitted;
            if let Some(missing) = oracle.sets[i].difference(emitted).next() {
                panic!(
                    "trial {trial}: row {missing} of alias '{alias}' was wrongly pruned \
                     (kind {kind:?}, pbw {pbw}, mode {mode}, predicate {predicate:?})"
                );
            }
        }
    }
}

// ---------------------------------------------------------------- check 2

/// All four execution modes must return the same result multiset on the
/// seeded workload.
fn modes_agree_on_seeded_queries() {
    let mut db = generate_snowflake(7, 1).unwrap();
    attach_snowflake(&mut db, 8, &AttachOptions::default()).unwrap();
    let queries = bench_queries(7, 5);
    assert!(queries.len() >= 50, "suite too small: {}", queries.len());
    for (qi, query) in queries[..50].iter().enumerate() {
        let mut baseline = None;
        for mode in ExecMode::ALL {
            let (m, _, _) =
                run_query(&db, query, None, &ExecOptions::with_mode(mode)).unwrap();
            match &baseline {
                None => baseline = Some((m.result_rows, m.result_checksum)),
                Some((rows, sum)) => {
                    assert_eq!(
                        (*rows, *sum),
                        (m.result_rows, m.result_checksum),
                        "query {qi} differs under mode {mode}"
                    );
                }
            }
        }
    }
}

// ---------------------------------------------------------------- check 3

/// Five-alias star-chain fixture with the movie-rating-by-keyword shape:
/// two filters sit above fact tables their effect cannot reach.
fn movie_fixture() -> (Database, Query, PlanNode) {
    let schema = Schema::new(
        vec![
            TableDef {
                name: "title".into(),
                columns: vec![int("id", false), int("production_year", true)],
            },
            TableDef {
                name: "info_type".into(),
                columns: vec![int("id", false), text("info", false)],
            },
            TableDef {
                name: "keyword".into(),
                columns: vec![int("id", false), text("keyword", false)],
            },
            TableDef {
                name: "movie_info_idx".into(),
                columns: vec![
                    int("id", false),
                    int("movie_id", false),
                    int("info_type_id", false),
                    text("info", false),
                ],
            },
            TableDef {
                name: "movie_keyword".into(),
                columns: vec![int("id", false), int("movie_id", false), int("keyword_id", false)],
            },
        ],
        vec![
            ForeignKey {
                fk_table: "movie_info_idx".into(),
                fk_column: "movie_id".into(),
                pk_table: "title".into(),
                pk_column: "id".into(),
            },
            ForeignKey {
                fk_table: "movie_info_idx".into(),
                fk_column: "info_type_id".into(),
                pk_table: "info_type".into(),
                pk_column: "id".into(),
            },
            ForeignKey {
                fk_table: "movie_keyword".into(),
                fk_column: "movie_id".into(),
                pk_table: "title".into(),
                pk_column: "id".into(),
            },
            ForeignKey {
                fk_table: "movie_keyword".into(),
                fk_column: "keyword_id".into(),
                pk_table: "keyword".into(),
                pk_column: "id".into(),
            },
        ],
    )
    .unwrap();
    let mut db = Database::new(schema);
    for (id, year) in [(1, 1994), (2, 2001), (3, 2008), (4, 2013), (5, 2016), (6, 2019)] {
        db.table_mut("title")
            .unwrap()
            .push_row(&[("id", Value::Int(id)), ("production_year", Value::Int(year))])
            .unwrap();
    }
    for (id, info) in [(1, "rating"), (2, "votes"), (3, "budget")] {
        db.table_mut("info_type")
            .unwrap()
            .push_row(&[("id", Value::Int(id)), ("info", Value::Str(info.into()))])
            .unwrap();
    }
    for (id, kw) in [(1, "sequel"), (2, "murder"), (3, "dark"), (4, "love")] {
        db.table_mut("keyword")
            .unwrap()
            .push_row(&[("id", Value::Int(id)), ("keyword", Value::Str(kw.into()))])
            .unwrap();
    }
    for (id, movie, it, info) in [
        (1, 1, 1, "5.5"),
        (2, 2, 1, "7.1"),
        (3, 3, 2, "901"),
        (4, 4, 1, "6.2"),
        (5, 5, 3, "40000"),
        (6, 6, 1, "8.0"),
        (7, 2, 2, "4455"),
        (8, 4, 3, "91000"),
    ] {
        db.table_mut("movie_info_idx")
            .unwrap()
            .push_row(&[
                ("id", Value::Int(id)),
                ("movie_id", Value::Int(movie)),
                ("info_type_id", Value::Int(it)),
                ("info", Value::Str(info.into())),
            ])
            .unwrap();
    }
    for (id, movie, kw) in
        [(1, 1, 1), (2, 2, 1), (3, 3, 2), (4, 4, 3), (5, 5, 4), (6, 6, 1), (7, 3, 3), (8, 1, 4)]
    {
        db.table_mut("movie_keyword")
            .unwrap()
            .push_row(&[
                ("id", Value::Int(id)),
                ("movie_id", Value::Int(movie)),
                ("keyword_id", Value::Int(kw)),
            ])
            .unwrap();
    }
    build_and_attach(
        &mut db,
        "movie_info_idx",
        "title",
        "production_year",
        4,
        ParachuteKind::NumericHistogram,
        &AttachOptions::default(),
    )
    .unwrap();
    build_and_attach(
        &mut db,
        "movie_keyword",
        "keyword",
        "keyword",
        4,
        ParachuteKind::StringFingerprint,
        &AttachOptions::default(),
    )
    .unwrap();

    let query = Query {
        aliases: vec![
            QueryAlias { alias: "t".into(), table: "title".into() },
            QueryAlias { alias: "mi_idx".into(), table: "movie_info_idx".into() },
            QueryAlias { alias: "it".into(), table: "info_type".into() },
            QueryAlias { alias: "mk".into(), table: "movie_keyword".into() },
            QueryAlias { alias: "k".into(), table: "keyword".into() },
        ],
        joins: vec![
            JoinEdge {
                left: "mi_idx".into(),
                left_column: "movie_id".into(),
                right: "t".into(),
                right_column: "id".into(),
            },
            JoinEdge {
                left: "mi_idx".into(),
                left_column: "info_type_id".into(),
                right: "it".into(),
                right_column: "id".into(),
            },
            JoinEdge {
                left: "mk".into(),
                left_column: "movie_id".into(),
                right: "t".into(),
                right_column: "id".into(),
            },
            JoinEdge {
                left: "mk".into(),
                left_column: "keyword_id".into(),
                right: "k".into(),
                right_column: "id".into(),
            },
        ],
        filters: vec![
            FilterSpec {
                alias: "it".into(),
                column: "info".into(),
                predicate: BasePredicate::Compare {
                    cmp: CmpOp::Eq,
                    value: Value::Str("rating".into()),
                },
            },
            FilterSpec {
                alias: "mi_idx".into(),
                column: "info".into(),
                predicate: BasePredicate::Compare {
                    cmp: CmpOp::Gt,
                    value: Value::Str("5.0".into()),
                },
            },
            FilterSpec {
                alias: "t".into(),
                column: "production_year".into(),
                predicate: BasePredicate::Compare { cmp: CmpOp::Gt, value: Value::Int(2005) },
            },
            FilterSpec {
                alias: "k".into(),
                column: "keyword".into(),
                predicate: BasePredicate::Compare {
                    cmp: CmpOp::Eq,
                    value: Value::Str("sequel".into()),
                },
            },
        ],
        parachute_filters: vec![],
    };
    // Left-deep: the info_type build feeds the mi_idx probe, then each
    // later table is probed against the accumulated result.
    let plan = join(join(join(join(scan("it"), scan("mi_idx")), scan("t")), scan("mk")), scan("k"));
    (db, query, plan)
}

/// Pipeline decomposition, one- and two-step flows, and the exact blocked
/// pair set on the five-alias plan.
fn pipeline_flow_goldens() {
    let (db, query, plan) = movie_fixture();
    let pipes = decompose_pipelines(&plan);
    assert_eq!(pipes.count, 4, "expected four probe pipelines");
    assert_eq!(pipes.pipeline_of_alias["it"], pipes.pipeline_of_alias["mi_idx"]);
    assert!(pipes.is_probe("mi_idx") && !pipes.is_probe("it"));

    let analysis = analyze_flow(&db.catalog.schema, &query, &plan, FlowMode::Psf).unwrap();
    assert!(analysis.flows_between("mi_idx", "t").unwrap(), "one-step flow to the title scan");
    assert!(!analysis.flows_between("it", "t").unwrap(), "no direct flow from info_type");
    assert!(analysis.reaches("it", "t").unwrap(), "two-step flow through mi_idx");
    assert!(!analysis.reaches("t", "mi_idx").unwrap());
    assert!(!analysis.reaches("k", "mk").unwrap());

    let report = blocked_pairs(&query, &analysis, &db.catalog).unwrap();
    let got: BTreeSet<(String, String)> = report
        .pairs
        .iter()
        .map(|p| (p.source_table.clone(), p.target_table.clone()))
        .collect();
    let want: BTreeSet<(String, String)> = [
        ("title".to_string(), "movie_info_idx".to_string()),
        ("keyword".to_string(), "movie_keyword".to_string()),
    ]
    .into();
    assert_eq!(got, want, "blocked pairs must match exactly");
    assert!(report.refusals.is_empty(), "unexpected refusals: {:?}", report.refusals);
}

// ---------------------------------------------------------------- check 4

/// Bit-level goldens: the four-cluster example word and the substring
/// pattern decided purely from character sets.
fn fingerprint_goldens() {
    // a, e, u share the first cluster; l, n, t the third. Remaining bytes
    // fill clusters 1 and 3 so the partition is total.
    let mut clusters = vec![1u8; 256];
    for b in [b'a', b'e', b'u'] {
        clusters[b as usize] = 0;
    }
    for b in [b'l', b'n', b't'] {
        clusters[b as usize] = 2;
    }
    clusters[b'z' as usize] = 3;
    let p4 = BytePartition::new(4, clusters).unwrap();
    assert_eq!(fingerprint(&p4, "nutella").to_bit_string(4), "1010");

    // One cluster per letter: the mask check degenerates to character-set
    // containment.
    let mut per_letter = vec![0u8; 256];
    for b in b'a'..=b'z' {
        per_letter[b as usize] = b - b'a';
    }
    let p26 = BytePartition::new(26, per_letter).unwrap();
    let mask = pattern_mask(&p26, "%utn%", false);
    assert!(mask_matches(fingerprint(&p26, "utn"), mask));
    assert!(mask_matches(fingerprint(&p26, "nutella"), mask));
    assert!(!mask_matches(fingerprint(&p26, "tone"), mask), "'tone' lacks the 'u' cluster");
}

// ---------------------------------------------------------------- check 5

/// Attach stores the histogram bin of the joined value; in-range years hit
/// their bin, larger ones clamp to the last.
fn attach_bin_goldens() {
    let schema = Schema::new(
        vec![
            TableDef {
                name: "title".into(),
                columns: vec![int("id", false), int("production_year", false)],
            },
            TableDef {
                name: "cast_info".into(),
                columns: vec![int("id", false), int("movie_id", false)],
            },
        ],
        vec![ForeignKey {
            fk_table: "cast_info".into(),
            fk_column: "movie_id".into(),
            pk_table: "title".into(),
            pk_column: "id".into(),
        }],
    )
    .unwrap();
    let mut db = Database::new(schema);
    for (id, year) in [(123, 1999), (456, 2015), (789, 3000)] {
        db.table_mut("title")
            .unwrap()
            .push_row(&[("id", Value::Int(id)), ("production_year", Value::Int(year))])
            .unwrap();
    }
    for (id, movie) in [(1, 123), (2, 456), (3, 789)] {
        db.table_mut("cast_info")
            .unwrap()
            .push_row(&[("id", Value::Int(id)), ("movie_id", Value::Int(movie))])
            .unwrap();
    }
    let id = db
        .catalog
        .register_parachute(
            "cast_info",
            "title",
            "production_year",
            2,
            ParachuteKind::NumericHistogram,
            Representation::EquiDepthHistogram(EquiDepthHistogram::from_numeric_boundaries(
                vec![2000, 2004, 2020],
                false,
            )),
            false,
        )
        .unwrap();
    attach_registered(&mut db, id, &AttachOptions::default()).unwrap();
    let col = db.table("cast_info").unwrap().column("parachute_title_production_year").unwrap();
    let packed = col.as_packed().unwrap();
    assert_eq!(packed.get(0), 0, "1999 sits below the first boundary");
    assert_eq!(packed.get(1), 2, "2015 sits in the third bin");
    assert_eq!(packed.get(2), 3, "3000 clamps to the last bin");
}

// ---------------------------------------------------------------- check 6

/// False-positive band of the fixed-size filter, the fill cutoff at build,
/// and runtime disabling of useless filters.
fn bloom_band_and_cutoffs() {
    assert_eq!(BLOOM_BITS, 1 << 16);
    assert_eq!(BLOOM_HASHES, 2);

    let mut filter = BloomFilter::new();
    for k in 0..5000i64 {
        filter.insert(hash_int(DEFAULT_HASH_SEED, k));
    }
    let mut false_positives = 0u64;
    for k in 1_000_000..1_100_000i64 {
        if filter.contains(hash_int(DEFAULT_HASH_SEED, k)) {
            false_positives += 1;
        }
    }
    let fpr = false_positives as f64 / 100_000.0;
    assert!((0.01..=0.03).contains(&fpr), "false-positive rate {fpr:.4} outside [0.01, 0.03]");

    let build_db = |n_dim: i64, n_fact: i64, spread: i64| {
        let schema = Schema::new(
            vec![
                TableDef { name: "dim".into(), columns: vec![int("id", false), int("v", true)] },
                TableDef {
                    name: "fact".into(),
                    columns: vec![int("id", false), int("dim_id", true)],
                },
            ],
            vec![ForeignKey {
                fk_table: "fact".into(),
                fk_column: "dim_id".into(),
                pk_table: "dim".into(),
                pk_column: "id".into(),
            }],
        )
        .unwrap();
        let mut db = Database::new(schema);
        for id in 1..=n_dim {
            db.table_mut("dim")
                .unwrap()
                .push_row(&[("id", Value::Int(id)), ("v", Value::Int(id % 7))])
                .unwrap();
        }
        for id in 1..=n_fact {
            db.table_mut("fact")
                .unwrap()
                .push_row(&[("id", Value::Int(id)), ("dim_id", Value::Int(1 + id % spread))])
                .unwrap();
        }
        db
    };
    let query = Query {
        aliases: vec![
            QueryAlias { alias: "f".into(), table: "fact".into() },
            QueryAlias { alias: "d".into(), table: "dim".into() },
        ],
        joins: vec![JoinEdge {
            left: "f".into(),
            left_column: "dim_id".into(),
            right: "d".into(),
            right_column: "id".into(),
        }],
        filters: vec![],
        parachute_filters: vec![],
    };
    let plan = join(scan("d"), scan("f"));
    let opts = ExecOptions::with_mode(ExecMode::Psf);

    // 14500 distinct build keys push the fill past the cutoff.
    let wide = build_db(14_500, 60, 14_500);
    let (m, _, _) = run_query(&wide, &query, Some(&plan), &opts).unwrap();
    assert_eq!(m.blooms.len(), 1);
    assert!(m.blooms[0].fill > 0.34, "fill {:.3}", m.blooms[0].fill);
    assert!(m.blooms[0].discarded, "overfull filter must be dropped at build");

    // Every probe key is a member, so the filter passes far more than 60%
    // of its first 4000 rows and gets switched off.
    let useless = build_db(120, 4_600, 120);
    let (m, _, _) = run_query(&useless, &query, Some(&plan), &opts).unwrap();
    assert_eq!(m.blooms.len(), 1);
    assert!(!m.blooms[0].discarded);
    let target = &m.blooms[0].targets[0];
    assert!(target.disabled, "pass-through filter must disable itself");
    assert_eq!(target.processed, 4_000, "counting stops once disabled");
}

// ---------------------------------------------------------------- check 7

fn exhaustive_min_max(weights: &[u64], parts_left: usize) -> u64 {
    if weights.is_empty() {
        return 0;
    }
    if parts_left == 1 {
        return weights.iter().sum();
    }
    let mut best = u64::MAX;
    for cut in 1..=weights.len() {
        let head: u64 = weights[..cut].iter().sum();
        let rest = exhaustive_min_max(&weights[cut..], parts_left - 1);
        best = best.min(head.max(rest));
    }
    best
}

/// The partition optimizer must equal brute force on every small instance.
fn partition_matches_exhaustive() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xB1_2E);
    for instance in 0..200 {
        let n = 1 + rng.random_range(0..20);
        let parts = 1 + rng.random_range(0..4);
        let weights: Vec<u64> = (0..n).map(|_| rng.random_range(0..=50)).collect();
        let (got, ends) = min_max_partition(&weights, parts);
        let want = exhaustive_min_max(&weights, parts);
        assert_eq!(
            got, want,
            "instance {instance}: weights {weights:?} into {parts} parts"
        );
        assert!(ends.len() <= parts, "used more parts than allowed");
        // The returned cut points must realize the reported optimum.
        let mut start = 0;
        let mut realized = 0u64;
        for &end in &ends {
            realized = realized.max(weights[start..end].iter().sum());
            start = end;
        }
        assert_eq!(start, weights.len());
        assert_eq!(realized, got);
    }
}

// ---------------------------------------------------------------- check 8

/// More filter stages and wider parachute columns may only shrink the
/// remaining dangling fraction.
fn dangling_ordering() {
    let report = sweep(&SweepOptions {
        seed: 7,
        scale: 1,
        pbws: vec![2, 4, 8, 16],
        modes: ExecMode::ALL.to_vec(),
        per_template: 1,
        attach: AttachOptions::default(),
    })
    .unwrap();
    let cell = |pbw: u32, mode: ExecMode| {
        report
            .cells
            .iter()
            .find(|c| c.pbw == pbw && c.mode == mode)
            .unwrap_or_else(|| panic!("missing cell {pbw}/{mode}"))
            .dangling_fraction
    };
    let eps = 1e-9;
    for &pbw in &[2u32, 4, 8, 16] {
        let off = cell(pbw, ExecMode::Off);
        let psf = cell(pbw, ExecMode::Psf);
        let both = cell(pbw, ExecMode::Both);
        assert!(off >= psf - eps, "pbw {pbw}: off {off} < psf {psf}");
        assert!(psf >= both - eps, "pbw {pbw}: psf {psf} < both {both}");
    }
    let both2 = cell(2, ExecMode::Both);
    let both16 = cell(16, ExecMode::Both);
    let off16 = cell(16, ExecMode::Off);
    assert!(both16 <= both2 + eps, "wider columns must not prune less: {both16} vs {both2}");
    assert!(both16 <= 0.5 * off16 + eps, "both at width 16 must halve off: {both16} vs {off16}");
}

// ---------------------------------------------------------------- check 9

/// Ten insert batches and five source-value updates, then a fresh attach
/// over the same final rows with the original histograms: bit-identical
/// parachute state.
fn maintenance_matches_fresh_attach() {
    let opts = AttachOptions::default();
    let mut maintained = generate_snowflake(7, 1).unwrap();
    attach_snowflake(&mut maintained, 8, &opts).unwrap();
    let mut base = generate_snowflake(7, 1).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(4242);
    let mut next_id = maintained.table("tag_map").unwrap().row_count as i64 + 1;
    for _ in 0..10 {
        let rows = 5 + rng.random_range(0..15);
        let batch: Vec<BTreeMap<String, Value>> = (0..rows)
            .map(|_| {
                let item_id = if rng.random_bool(0.1) {
                    901 + rng.random_range(0..900)
                } else {
                    1 + rng.random_range(0..900)
                };
                let tag_id = if rng.random_bool(0.1) {
                    41 + rng.random_range(0..40)
                } else {
                    1 + rng.random_range(0..40)
                };
                let row = BTreeMap::from([
                    ("id".to_string(), Value::Int(next_id)),
                    ("item_id".to_string(), Value::Int(item_id)),
                    ("tag_id".to_string(), Value::Int(tag_id)),
                ]);
                next_id += 1;
                row
            })
            .collect();
        maintain_insert(&mut maintained, "tag_map", &batch, &opts).unwrap();
        for row in &batch {
            let pairs: Vec<(&str, Value)> =
                row.iter().map(|(k, v)| (k.as_str(), v.clone())).collect();
            base.table_mut("tag_map").unwrap().push_row(&pairs).unwrap();
        }
    }

    for u in 0..5 {
        let (table, column, row, value) = match u % 3 {
            0 => (
                "detail",
                "year",
                rng.random_range(0..150),
                Value::Int(1900 + rng.random_range(0..130)),
            ),
            1 => ("tag", "word", rng.random_range(0..40), Value::Str(format!("edited{u}"))),
            _ => ("dtype", "name", rng.random_range(0..8), Value::Str(format!("renamed{u}"))),
        };
        maintain_update(&mut maintained, table, row, column, &value, &opts).unwrap();
        base.table_mut(table).unwrap().column_mut(column).unwrap().set_value(row, &value).unwrap();
    }

    let descriptors = maintained.catalog.descriptors.clone();
    for d in &descriptors {
        let id = base
            .catalog
            .register_parachute(
                &d.fk_table,
                &d.pk_table,
                &d.source_column,
                d.pbw,
                d.kind,
                d.representation.clone(),
                d.nullable_source,
            )
            .unwrap();
        attach_registered(&mut base, id, &opts).unwrap();
    }
    for d in &descriptors {
        let lhs = maintained.table(&d.fk_table).unwrap().column(&d.parachute_column).unwrap();
        let rhs = base.table(&d.fk_table).unwrap().column(&d.parachute_column).unwrap();
        assert_eq!(lhs, rhs, "column '{}' diverged from a fresh attach", d.parachute_column);
        if let Some(helper) = &d.helper_column {
            let lh = maintained.table(&d.pk_table).unwrap().column(helper).unwrap();
            let rh = base.table(&d.pk_table).unwrap().column(helper).unwrap();
            assert_eq!(lh, rh, "helper '{helper}' diverged from a fresh attach");
        }
    }
    assert_eq!(maintained.catalog.pending_keys, base.catalog.pending_keys);
}

// ---------------------------------------------------------------- check 10

/// Reported bytes per descriptor follow ceil(rows * pbw / 8) plus one
/// fixed metadata constant; total space grows strictly with pbw.
fn space_formula() {
    let mut totals = Vec::new();
    let mut meta: Option<u64> = None;
    for pbw in [2u32, 4, 8, 16] {
        let mut db = generate_snowflake(7, 1).unwrap();
        let stats = attach_snowflake(&mut db, pbw, &AttachOptions::default()).unwrap();
        for s in &stats {
            let rows = db.table(&s.fk_table).unwrap().row_count as u64;
            let payload = (rows * pbw as u64).div_ceil(8);
            let constant = s
                .reported_bytes
                .checked_sub(payload)
                .unwrap_or_else(|| panic!("descriptor {} under the payload", s.descriptor_id));
            match meta {
                None => meta = Some(constant),
                Some(m) => assert_eq!(
                    constant, m,
                    "metadata constant differs for descriptor {} at pbw {pbw}",
                    s.descriptor_id
                ),
            }
        }
        totals.push(db.extra_bytes());
    }
    for pair in totals.windows(2) {
        assert!(pair[0] < pair[1], "space must grow strictly with pbw: {totals:?}");
    }
}

// ---------------------------------------------------------------- harness

fn run_check(
    n: usize,
    label: &str,
    budget_secs: Option<f64>,
    f: fn(),
    failures: &mut Vec<String>,
) {
    let start = Instant::now();
    let result = catch_unwind(f);
    let seconds = start.elapsed().as_secs_f64();
    let mut problem = match result {
        Ok(()) => None,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic without message".to_string());
            Some(msg)
        }
    };
    if problem.is_none() {
        if let Some(budget) = budget_secs {
            if seconds > budget {
                problem = Some(format!("took {seconds:.1} s, budget {budget:.0} s"));
            }
        }
    }
    match problem {
        None => println!("[criterion {n}] PASS ({seconds:.1} s) {label}"),
        Some(msg) => {
            println!("[criterion {n}] FAIL ({seconds:.1} s) {label}: {msg}");
            failures.push(format!("criterion {n}: {msg}"));
        }
    }
}

#[test]
fn acceptance() {
    let mut failures = Vec::new();
    run_check(1, "randomized soundness, 10000 trials", Some(60.0), soundness_suite, &mut failures);
    run_check(2, "four modes agree on 50 seeded queries", Some(60.0), modes_agree_on_seeded_queries, &mut failures);
    run_check(3, "pipelines, flows, and blocked pairs on the five-alias plan", None, pipeline_flow_goldens, &mut failures);
    run_check(4, "fingerprint bits and character-set pattern mask", None, fingerprint_goldens, &mut failures);
    run_check(5, "stored bins at attach, including the clamp", None, attach_bin_goldens, &mut failures);
    run_check(6, "bloom false-positive band, fill cutoff, self-disable", Some(5.0), bloom_band_and_cutoffs, &mut failures);
    run_check(7, "bin partition optimizer equals brute force", Some(10.0), partition_matches_exhaustive, &mut failures);
    run_check(8, "dangling fraction ordering across modes and widths", Some(120.0), dangling_ordering, &mut failures);
    run_check(9, "insert and update maintenance equals fresh attach", Some(30.0), maintenance_matches_fresh_attach, &mut failures);
    run_check(10, "space formula and strict growth in pbw", None, space_formula, &mut failures);
    assert!(
        failures.is_empty(),
        "{} of 10 checks failed:\n{}",
        failures.len(),
        failures.join("\n")
    );
}
