//! Synthetic snowflake workload: a seeded generator, a query suite, a
//! pbw-by-mode sweep, and an insert maintenance benchmark.
//!
//! The schema is a two-branch snowflake. Facts reference dimensions with a
//! skewed key distribution and clean referential integrity; the dangling
//! tuples the sweep measures come from query filters, not broken keys:
//!
//! ```text
//! tag_map -> tag
//! tag_map -> item -> detail -> dtype
//! ```

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};
use serde::{Deserialize, Serialize};

use crate::attach::{
    build_and_attach, condense_one, fold_partners, no_partner_marker, AttachOptions, AttachStats,
};
use crate::catalog::{
    ColumnDef, ForeignKey, ParachuteDescriptor, ParachuteKind, Schema, TableDef,
};
use crate::db::Database;
use crate::engine::{run_query, ExecMode, ExecOptions};
use crate::error::{Error, Result};
use crate::oracle::{dangling_report, yannakakis_reduce};
use crate::planner::{FilterSpec, JoinEdge, Query, QueryAlias};
use crate::storage::packed_column_bytes;
use crate::translate::BasePredicate;
use crate::value::{CmpOp, LogicalType, Value};

pub const DTYPE_NAMES: [&str; 8] =
    ["movie", "series", "short", "video", "game", "episode", "special", "pilot"];
pub const TAG_STEMS: [&str; 16] = [
    "sequel", "murder", "house", "dark", "night", "love", "space", "war", "dream", "blood",
    "light", "storm", "ghost", "city", "river", "fire",
];
pub const TAG_SUFFIXES: [&str; 8] = ["", "work", "time", "land", "fall", "song", "keeper", "born"];

pub fn snowflake_schema() -> Schema {
    let int = |n: &str, nullable: bool| ColumnDef {
        name: n.into(),
        column_type: LogicalType::Int64,
        nullable,
    };
    let text = |n: &str| ColumnDef {
        name: n.into(),
        column_type: LogicalType::String,
        nullable: false,
    };
    Schema::new(
        vec![
            TableDef { name: "dtype".into(), columns: vec![int("id", false), text("name")] },
            TableDef { name: "tag".into(), columns: vec![int("id", false), text("word")] },
            TableDef {
                name: "detail".into(),
                columns: vec![int("id", false), int("year", true), int("dtype_id", false)],
            },
            TableDef {
                name: "item".into(),
                columns: vec![int("id", false), int("detail_id", false)],
            },
            TableDef {
                name: "tag_map".into(),
                columns: vec![int("id", false), int("item_id", false), int("tag_id", false)],
            },
        ],
        vec![
            ForeignKey { fk_table: "detail".into(), fk_column: "dtype_id".into(), pk_table: "dtype".into(), pk_column: "id".into() },
            ForeignKey { fk_table: "item".into(), fk_column: "detail_id".into(), pk_table: "detail".into(), pk_column: "id".into() },
            ForeignKey { fk_table: "tag_map".into(), fk_column: "item_id".into(), pk_table: "item".into(), pk_column: "id".into() },
            ForeignKey { fk_table: "tag_map".into(), fk_column: "tag_id".into(), pk_table: "tag".into(), pk_column: "id".into() },
        ],
    )
    .expect("snowflake schema is well formed")
}

fn zipf_id(rng: &mut ChaCha8Rng, n: usize) -> i64 {
    let z = Zipf::new(n as f64, 1.1).expect("valid zipf parameters");
    (z.sample(rng) as i64).clamp(1, n as i64)
}

/// A key guaranteed to miss: above every generated id.
fn dangling_id(rng: &mut ChaCha8Rng, n: usize) -> i64 {
    n as i64 + 1 + rng.random_range(0..n as i64)
}

/// Deterministic snowflake instance. Same seed and scale, same bytes.
pub fn generate_snowflake(seed: u64, scale: usize) -> Result<Database> {
    let scale = scale.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut db = Database::new(snowflake_schema());

    let n_dtype = DTYPE_NAMES.len();
    let n_tag = 40 * scale;
    let n_detail = 150 * scale;
    let n_item = 900 * scale;
    let n_tag_map = 1800 * scale;

    for (i, name) in DTYPE_NAMES.iter().enumerate() {
        db.table_mut("dtype")?
            .push_row(&[("id", Value::Int(i as i64 + 1)), ("name", Value::Str((*name).into()))])?;
    }
    for i in 0..n_tag {
        let stem = TAG_STEMS[rng.random_range(0..TAG_STEMS.len())];
        let suffix = TAG_SUFFIXES[rng.random_range(0..TAG_SUFFIXES.len())];
        db.table_mut("tag")?.push_row(&[
            ("id", Value::Int(i as i64 + 1)),
            ("word", Value::Str(format!("{stem}{suffix}"))),
        ])?;
    }
    for i in 0..n_detail {
        let year = if rng.random_bool(0.1) {
            Value::Null
        } else {
            // Recent years are common, old ones rare.
            Value::Int(2025 - (zipf_id(&mut rng, 120) - 1))
        };
        let dtype_id = Value::Int(zipf_id(&mut rng, n_dtype));
        db.table_mut("detail")?.push_row(&[
            ("id", Value::Int(i as i64 + 1)),
            ("year", year),
            ("dtype_id", dtype_id),
        ])?;
    }
    for i in 0..n_item {
        let detail_id = zipf_id(&mut rng, n_detail);
        db.table_mut("item")?
            .push_row(&[("id", Value::Int(i as i64 + 1)), ("detail_id", Value::Int(detail_id))])?;
    }
    for i in 0..n_tag_map {
        let item_id = zipf_id(&mut rng, n_item);
        let tag_id = zipf_id(&mut rng, n_tag);
        db.table_mut("tag_map")?.push_row(&[
            ("id", Value::Int(i as i64 + 1)),
            ("item_id", Value::Int(item_id)),
            ("tag_id", Value::Int(tag_id)),
        ])?;
    }
    Ok(db)
}

/// Builds and attaches the workload's four parachute columns at one width:
/// dtype names onto detail, years onto item, tag words onto tag_map, and
/// the year column copied one hop further onto tag_map.
pub fn attach_snowflake(
    db: &mut Database,
    pbw: u32,
    opts: &AttachOptions,
) -> Result<Vec<AttachStats>> {
    let mut stats = Vec::new();
    stats.push(build_and_attach(db, "detail", "dtype", "name", pbw, ParachuteKind::LowcardString, opts)?);
    stats.push(build_and_attach(db, "item", "detail", "year", pbw, ParachuteKind::NumericHistogram, opts)?);
    stats.push(build_and_attach(db, "tag_map", "tag", "word", pbw, ParachuteKind::StringFingerprint, opts)?);
    stats.push(build_and_attach(
        db,
        "tag_map",
        "item",
        "parachute_detail_year",
        pbw,
        ParachuteKind::NumericHistogram,
        opts,
    )?);
    Ok(stats)
}

/// Bytes the attached parachute state should occupy, from the closed form:
/// each packed column costs ceil(rows * pbw / 8) plus fixed metadata, one
/// column per descriptor on its FK table and one helper per fingerprint
/// descriptor on its PK table.
pub fn predicted_extra_bytes(db: &Database) -> Result<u64> {
    let mut total = 0u64;
    let mut helpers_seen: Vec<(String, String)> = Vec::new();
    for d in &db.catalog.descriptors {
        if !d.attached {
            continue;
        }
        total += packed_column_bytes(db.table(&d.fk_table)?.row_count as u64, d.pbw);
        if let Some(helper) = &d.helper_column {
            let key = (d.pk_table.clone(), helper.clone());
            if !helpers_seen.contains(&key) {
                total += packed_column_bytes(db.table(&d.pk_table)?.row_count as u64, d.pbw);
                helpers_seen.push(key);
            }
        }
    }
    Ok(total)
}

fn alias(a: &str) -> QueryAlias {
    QueryAlias { alias: a.into(), table: a.into() }
}

fn edge(l: &str, lc: &str, r: &str, rc: &str) -> JoinEdge {
    JoinEdge { left: l.into(), left_column: lc.into(), right: r.into(), right_column: rc.into() }
}

fn filter(a: &str, c: &str, predicate: BasePredicate) -> FilterSpec {
    FilterSpec { alias: a.into(), column: c.into(), predicate }
}

fn item_detail(filters: Vec<FilterSpec>) -> Query {
    Query {
        aliases: vec![alias("item"), alias("detail")],
        joins: vec![edge("item", "detail_id", "detail", "id")],
        filters,
        parachute_filters: vec![],
    }
}

/// Twelve query templates instantiated with seeded constants. Every query
/// is a join tree, so the exact reducer accepts all of them.
pub fn bench_queries(seed: u64, per_template: usize) -> Vec<Query> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for _ in 0..per_template.max(1) {
        let year = |rng: &mut ChaCha8Rng| 1960 + rng.random_range(0..46);
        let stem = |rng: &mut ChaCha8Rng| TAG_STEMS[rng.random_range(0..TAG_STEMS.len())];
        let name = |rng: &mut ChaCha8Rng| DTYPE_NAMES[rng.random_range(0..DTYPE_NAMES.len())];

        out.push(item_detail(vec![filter(
            "detail",
            "year",
            BasePredicate::Compare { cmp: CmpOp::Lt, value: Value::Int(year(&mut rng)) },
        )]));

        let lo = year(&mut rng);
        out.push(item_detail(vec![filter(
            "detail",
            "year",
            BasePredicate::Between { lo: Value::Int(lo), hi: Value::Int(lo + 8) },
        )]));

        out.push(Query {
            aliases: vec![alias("item"), alias("detail"), alias("dtype")],
            joins: vec![
                edge("item", "detail_id", "detail", "id"),
                edge("detail", "dtype_id", "dtype", "id"),
            ],
            filters: vec![
                filter(
                    "dtype",
                    "name",
                    BasePredicate::Compare {
                        cmp: CmpOp::Eq,
                        value: Value::Str(name(&mut rng).into()),
                    },
                ),
                filter(
                    "detail",
                    "year",
                    BasePredicate::Compare { cmp: CmpOp::Ge, value: Value::Int(2020) },
                ),
            ],
            parachute_filters: vec![],
        });

        out.push(Query {
            aliases: vec![alias("tag_map"), alias("tag")],
            joins: vec![edge("tag_map", "tag_id", "tag", "id")],
            filters: vec![filter(
                "tag",
                "word",
                BasePredicate::Like { pattern: format!("%{}%", stem(&mut rng)) },
            )],
            parachute_filters: vec![],
        });

        out.push(Query {
            aliases: vec![alias("tag_map"), alias("tag"), alias("item")],
            joins: vec![
                edge("tag_map", "tag_id", "tag", "id"),
                edge("tag_map", "item_id", "item", "id"),
            ],
            filters: vec![filter(
                "tag",
                "word",
                BasePredicate::Compare {
                    cmp: CmpOp::Eq,
                    value: Value::Str(format!("{}{}", stem(&mut rng), "work")),
                },
            )],
            parachute_filters: vec![],
        });

        out.push(Query {
            aliases: vec![alias("tag_map"), alias("item"), alias("detail")],
            joins: vec![
                edge("tag_map", "item_id", "item", "id"),
                edge("item", "detail_id", "detail", "id"),
            ],
            filters: vec![filter(
                "detail",
                "year",
                BasePredicate::Compare { cmp: CmpOp::Lt, value: Value::Int(year(&mut rng)) },
            )],
            parachute_filters: vec![],
        });

        out.push(item_detail(vec![filter("detail", "year", BasePredicate::IsNull)]));

        out.push(Query {
            aliases: vec![alias("item"), alias("detail"), alias("dtype")],
            joins: vec![
                edge("item", "detail_id", "detail", "id"),
                edge("detail", "dtype_id", "dtype", "id"),
            ],
            filters: vec![filter(
                "dtype",
                "name",
                BasePredicate::In {
                    values: vec![
                        Value::Str(name(&mut rng).into()),
                        Value::Str(name(&mut rng).into()),
                    ],
                },
            )],
            parachute_filters: vec![],
        });

        out.push(Query {
            aliases: vec![alias("tag_map"), alias("tag")],
            joins: vec![edge("tag_map", "tag_id", "tag", "id")],
            filters: vec![filter(
                "tag",
                "word",
                BasePredicate::ILike { pattern: format!("%{}%", stem(&mut rng).to_uppercase()) },
            )],
            parachute_filters: vec![],
        });

        out.push(Query {
            aliases: vec![alias("tag_map"), alias("tag"), alias("item"), alias("detail"), alias("dtype")],
            joins: vec![
                edge("tag_map", "tag_id", "tag", "id"),
                edge("tag_map", "item_id", "item", "id"),
                edge("item", "detail_id", "detail", "id"),
                edge("detail", "dtype_id", "dtype", "id"),
            ],
            filters: vec![
                filter(
                    "tag",
                    "word",
                    BasePredicate::Like { pattern: format!("{}%", stem(&mut rng)) },
                ),
                filter(
                    "detail",
                    "year",
                    BasePredicate::Compare { cmp: CmpOp::Lt, value: Value::Int(year(&mut rng)) },
                ),
            ],
            parachute_filters: vec![],
        });

        out.push(Query {
            aliases: vec![alias("detail"), alias("dtype")],
            joins: vec![edge("detail", "dtype_id", "dtype", "id")],
            filters: vec![filter(
                "dtype",
                "name",
                BasePredicate::EnumerableRegex { pattern: "(movie|series|short)".into() },
            )],
            parachute_filters: vec![],
        });

        let base = year(&mut rng);
        out.push(item_detail(vec![filter(
            "detail",
            "year",
            BasePredicate::EnumeratedUdf {
                values: vec![
                    Value::Int(base),
                    Value::Int(base + 2),
                    Value::Int(base + 40),
                ],
            },
        )]));
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepCell {
    pub pbw: u32,
    pub mode: ExecMode,
    pub queries: usize,
    /// Mean over the query suite of the remaining dangling fraction.
    pub dangling_fraction: f64,
    /// Total wall-clock execution time over the suite.
    pub exec_seconds: f64,
    /// Bytes of packed parachute state the mode actually reads; zero for
    /// modes that ignore parachute columns.
    pub extra_space_bytes: u64,
    /// Closed-form prediction for the attached state, mode independent.
    pub formula_bytes: u64,
    /// XOR of per-query result checksums; equal across modes when result
    /// multisets agree.
    pub checksum: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepReport {
    pub seed: u64,
    pub scale: usize,
    pub cells: Vec<SweepCell>,
}

#[derive(Debug, Clone)]
pub struct SweepOptions {
    pub seed: u64,
    pub scale: usize,
    pub pbws: Vec<u32>,
    pub modes: Vec<ExecMode>,
    pub per_template: usize,
    pub attach: AttachOptions,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            seed: 7,
            scale: 1,
            pbws: vec![2, 4, 8, 16],
            modes: ExecMode::ALL.to_vec(),
            per_template: 1,
            attach: AttachOptions::default(),
        }
    }
}

/// Regenerates the snowflake at each width, attaches, and runs the query
/// suite under every mode, measuring the mean remaining dangling fraction
/// against the exact reducer.
pub fn sweep(opts: &SweepOptions) -> Result<SweepReport> {
    let queries = bench_queries(opts.seed, opts.per_template);
    let mut cells = Vec::new();
    for &pbw in &opts.pbws {
        let mut db = generate_snowflake(opts.seed, opts.scale)?;
        attach_snowflake(&mut db, pbw, &opts.attach)?;
        let measured = db.extra_bytes();
        let formula = predicted_extra_bytes(&db)?;
        let mut oracles = Vec::with_capacity(queries.len());
        for q in &queries {
            oracles.push(yannakakis_reduce(&db, q)?);
        }
        for &mode in &opts.modes {
            let exec = ExecOptions::with_mode(mode);
            let mut fractions = 0f64;
            let mut micros = 0u64;
            let mut checksum = 0u64;
            for (q, oracle) in queries.iter().zip(&oracles) {
                let (metrics, _, _) = run_query(&db, q, None, &exec)?;
                let report = dangling_report(&metrics, oracle)?;
                fractions += report.fraction;
                micros += metrics.micros;
                checksum ^= metrics.result_checksum;
            }
            cells.push(SweepCell {
                pbw,
                mode,
                queries: queries.len(),
                dangling_fraction: fractions / queries.len() as f64,
                exec_seconds: micros as f64 / 1e6,
                extra_space_bytes: if mode.uses_parachute() { measured } else { 0 },
                formula_bytes: formula,
                checksum,
            });
        }
    }
    Ok(SweepReport { seed: opts.seed, scale: opts.scale, cells })
}

/// Timing split for one batch fraction: the join-lookup phase resolves each
/// new FK key and folds its partners' condensed values, the write phase
/// appends the folded values to the packed column. Measured separately for
/// the numeric descriptor and the fingerprint descriptor (which condenses
/// through its precomputed helper masks) on the same batch.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InsertBenchRow {
    pub fraction: f64,
    pub batch_rows: usize,
    pub numeric_lookup_nanos: u64,
    pub numeric_write_nanos: u64,
    pub string_lookup_nanos: u64,
    pub string_write_nanos: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InsertBenchReport {
    pub seed: u64,
    pub scale: usize,
    pub pbw: u32,
    pub repeats: usize,
    pub rows: Vec<InsertBenchRow>,
}

#[derive(Debug, Clone)]
pub struct InsertBenchOptions {
    pub seed: u64,
    pub scale: usize,
    pub pbw: u32,
    /// Batch sizes as fractions of the fact table's row count.
    pub fractions: Vec<f64>,
    pub repeats: usize,
}

impl Default for InsertBenchOptions {
    fn default() -> Self {
        InsertBenchOptions {
            seed: 7,
            scale: 1,
            pbw: 8,
            fractions: vec![0.001, 0.005, 0.01],
            repeats: 5,
        }
    }
}

fn median(mut xs: Vec<u64>) -> u64 {
    xs.sort_unstable();
    xs[xs.len() / 2]
}

fn fresh_tag_map_rows(
    rng: &mut ChaCha8Rng,
    start_id: i64,
    count: usize,
    n_item: usize,
    n_tag: usize,
) -> Vec<BTreeMap<String, Value>> {
    (0..count)
        .map(|i| {
            let item_id = if rng.random_bool(0.12) {
                dangling_id(rng, n_item)
            } else {
                zipf_id(rng, n_item)
            };
            BTreeMap::from([
                ("id".to_string(), Value::Int(start_id + i as i64)),
                ("item_id".to_string(), Value::Int(item_id)),
                ("tag_id".to_string(), Value::Int(zipf_id(rng, n_tag))),
            ])
        })
        .collect()
}

/// Times batch inserts into tag_map at several batch fractions, splitting
/// each descriptor's maintenance cost into join lookups and column writes.
/// Key indexes are prepared outside the timed regions; times are medians
/// over repeats of the same seeded batch.
pub fn insert_bench(opts: &InsertBenchOptions) -> Result<InsertBenchReport> {
    let attach_opts = AttachOptions::default();
    let mut base = generate_snowflake(opts.seed, opts.scale)?;
    attach_snowflake(&mut base, opts.pbw, &attach_opts)?;
    let n_item = base.table("item")?.row_count;
    let n_tag = base.table("tag")?.row_count;
    let n_fact = base.table("tag_map")?.row_count;

    let descriptor = |kind: ParachuteKind| -> Result<ParachuteDescriptor> {
        base.catalog
            .descriptors
            .iter()
            .find(|d| d.fk_table == "tag_map" && d.kind == kind)
            .cloned()
            .ok_or_else(|| Error::Catalog(format!("no {kind:?} descriptor on tag_map")))
    };
    let numeric = descriptor(ParachuteKind::NumericHistogram)?;
    let string = descriptor(ParachuteKind::StringFingerprint)?;

    let mut rows_out = Vec::new();
    for (fi, &fraction) in opts.fractions.iter().enumerate() {
        let batch_rows = (n_fact as f64 * fraction).round() as usize;
        if batch_rows == 0 {
            rows_out.push(InsertBenchRow {
                fraction,
                batch_rows: 0,
                numeric_lookup_nanos: 0,
                numeric_write_nanos: 0,
                string_lookup_nanos: 0,
                string_write_nanos: 0,
            });
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ (fi as u64 + 1));
        let batch =
            fresh_tag_map_rows(&mut rng, n_fact as i64 + 1, batch_rows, n_item, n_tag);

        let mut timings = [Vec::new(), Vec::new(), Vec::new(), Vec::new()];
        for _ in 0..opts.repeats.max(1) {
            for (slot, desc) in [(0usize, &numeric), (2, &string)] {
                let pk = base.table(&desc.pk_table)?;
                let index = pk.key_index(&desc.pk_column, false)?;
                let marker = no_partner_marker(desc.pbw);

                let start = std::time::Instant::now();
                let mut stored = Vec::with_capacity(batch.len());
                for (i, row) in batch.iter().enumerate() {
                    let partners = index.rows_for(&row[&desc.fk_column]);
                    if partners.is_empty() {
                        stored.push(marker);
                        continue;
                    }
                    let condensed: Vec<u64> = partners
                        .iter()
                        .map(|p| condense_one(desc, pk, *p))
                        .collect::<Result<_>>()?;
                    stored.push(fold_partners(desc, &condensed, n_fact + i)?);
                }
                timings[slot].push(start.elapsed().as_nanos() as u64);

                let mut column = base
                    .table(&desc.fk_table)?
                    .column(&desc.parachute_column)?
                    .as_packed()
                    .ok_or_else(|| {
                        Error::Catalog(format!("'{}' is not packed", desc.parachute_column))
                    })?
                    .clone();
                let start = std::time::Instant::now();
                for v in &stored {
                    column.push(*v);
                }
                timings[slot + 1].push(start.elapsed().as_nanos() as u64);
            }
        }
        rows_out.push(InsertBenchRow {
            fraction,
            batch_rows,
            numeric_lookup_nanos: median(std::mem::take(&mut timings[0])),
            numeric_write_nanos: median(std::mem::take(&mut timings[1])),
            string_lookup_nanos: median(std::mem::take(&mut timings[2])),
            string_write_nanos: median(std::mem::take(&mut timings[3])),
        });
    }
    Ok(InsertBenchReport {
        seed: opts.seed,
        scale: opts.scale,
        pbw: opts.pbw,
        repeats: opts.repeats,
        rows: rows_out,
    })
}
