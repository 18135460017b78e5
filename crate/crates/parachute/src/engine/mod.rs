//! Batched in-memory execution of join plans with probe-side filtering.
//!
//! Scans stream their table in fixed-size batches and run three filter
//! stages in order: declared base predicates, translated predicates on
//! parachute columns, and bloom filters pushed down from already built hash
//! tables. Joins hash the build side and verify every candidate match by
//! value, so bloom and parachute stages can only remove rows that would
//! never reach the result; all four modes return the same result multiset.

pub mod bloom;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::catalog::ClassId;
use crate::db::Database;
use crate::error::{Error, Result};
use crate::planner::{
    check_plan_matches, decompose_pipelines, drop_parachutes, greedy_plan, query_id, PipelineSet,
    PlanNode, Query,
};
use crate::storage::Column;
use crate::translate::{evaluate_translated, PreparedPredicate, TranslatedPredicate};
use bloom::{BloomFilter, Mix};

/// Which filter stages run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecMode {
    /// Base predicates only.
    Off,
    /// Base predicates plus pushed bloom filters.
    Psf,
    /// Base predicates plus parachute-column predicates.
    Parachute,
    /// All three stages.
    Both,
}

impl ExecMode {
    pub const ALL: [ExecMode; 4] = [ExecMode::Off, ExecMode::Psf, ExecMode::Parachute, ExecMode::Both];

    pub fn uses_parachute(self) -> bool {
        matches!(self, ExecMode::Parachute | ExecMode::Both)
    }

    pub fn uses_bloom(self) -> bool {
        matches!(self, ExecMode::Psf | ExecMode::Both)
    }
}

impl std::str::FromStr for ExecMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "off" => Ok(ExecMode::Off),
            "psf" => Ok(ExecMode::Psf),
            "parachute" => Ok(ExecMode::Parachute),
            "both" => Ok(ExecMode::Both),
            other => Err(Error::Query(format!("unknown mode '{other}'"))),
        }
    }
}

impl std::fmt::Display for ExecMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ExecMode::Off => "off",
            ExecMode::Psf => "psf",
            ExecMode::Parachute => "parachute",
            ExecMode::Both => "both",
        })
    }
}

#[derive(Debug, Clone)]
pub struct ExecOptions {
    pub mode: ExecMode,
    pub batch_size: usize,
    pub hash_seed: u64,
    /// A bloom filter is dropped at build time above this fill fraction.
    pub bloom_fill_limit: f64,
    /// Rows of a target scan to watch before deciding whether a pushed
    /// filter earns its keep.
    pub disable_after: u64,
    /// Pushed filters letting more than this fraction of watched rows
    /// through are switched off for the rest of the scan.
    pub disable_pass_fraction: f64,
}

impl Default for ExecOptions {
    fn default() -> Self {
        ExecOptions {
            mode: ExecMode::Off,
            batch_size: 2048,
            hash_seed: bloom::DEFAULT_HASH_SEED,
            bloom_fill_limit: bloom::BLOOM_FILL_LIMIT,
            disable_after: 4000,
            disable_pass_fraction: 0.6,
        }
    }
}

impl ExecOptions {
    pub fn with_mode(mode: ExecMode) -> Self {
        ExecOptions { mode, ..ExecOptions::default() }
    }
}

/// Scan counters for one alias. The four counts are a funnel: each stage
/// sees what the previous one let through.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AliasMetrics {
    pub alias: String,
    pub table: String,
    pub scanned: u64,
    pub after_base: u64,
    pub after_parachute: u64,
    pub after_bloom: u64,
    #[serde(skip)]
    pub emitted: BTreeSet<u32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BloomTargetReport {
    pub alias: String,
    pub processed: u64,
    pub passed: u64,
    pub disabled: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BloomReport {
    /// Preorder index of the join whose build side fed the filter.
    pub join_node: usize,
    pub build_alias: String,
    pub build_column: String,
    pub class: Option<ClassId>,
    pub keys: u64,
    pub fill: f64,
    pub discarded: bool,
    pub targets: Vec<BloomTargetReport>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExecMetrics {
    pub query_id: u64,
    pub mode: ExecMode,
    pub result_rows: u64,
    /// Order-independent digest of the result's row-id tuples; equal
    /// checksums mean equal result multisets.
    pub result_checksum: u64,
    pub batches: u64,
    pub micros: u64,
    pub per_alias: Vec<AliasMetrics>,
    pub blooms: Vec<BloomReport>,
}

impl ExecMetrics {
    pub fn alias(&self, name: &str) -> Option<&AliasMetrics> {
        self.per_alias.iter().find(|a| a.alias == name)
    }
}

/// Plan tree with resolved alias indexes and preorder join ids.
enum ENode {
    Scan { alias: usize },
    Join { id: usize, build: Box<ENode>, probe: Box<ENode> },
}

fn lower(plan: &PlanNode, query: &Query, next: &mut usize) -> Result<ENode> {
    match plan {
        PlanNode::Scan { alias } => Ok(ENode::Scan { alias: query.alias_index(alias)? }),
        PlanNode::Join { build, probe } => {
            let id = *next;
            *next += 1;
            let b = lower(build, query, next)?;
            let p = lower(probe, query, next)?;
            Ok(ENode::Join { id, build: Box::new(b), probe: Box::new(p) })
        }
    }
}

/// Materialized subtree output: one u32 row id per alias and result row.
struct Mat {
    aliases: Vec<usize>,
    rows: Vec<Vec<u32>>,
}

struct TargetState {
    processed: u64,
    passed: u64,
    disabled: bool,
}

struct RegisteredBloom {
    filter: BloomFilter,
    class: Option<ClassId>,
    /// Fallback when the build column belongs to no attribute class: only
    /// the direct counterpart of the join pair is checked.
    explicit_target: Option<(usize, usize)>,
    source_pipeline: usize,
    join_node: usize,
    build_alias: usize,
    build_column: String,
    keys: u64,
    fill: f64,
    discarded: bool,
    targets: BTreeMap<usize, TargetState>,
}

struct ExecState<'a> {
    db: &'a Database,
    query: &'a Query,
    opts: &'a ExecOptions,
    pipelines: &'a PipelineSet,
    tables: Vec<&'a crate::storage::TableData>,
    pipe_of: Vec<usize>,
    probe_flag: Vec<bool>,
    base: Vec<Vec<(usize, PreparedPredicate)>>,
    para: Vec<Vec<(usize, TranslatedPredicate)>>,
    /// Join columns per alias: (column index, class), deduplicated.
    join_cols: Vec<Vec<(usize, Option<ClassId>)>>,
    registry: Vec<RegisteredBloom>,
    metrics: Vec<AliasMetrics>,
    batches: u64,
}

fn column_index(table: &crate::storage::TableData, name: &str) -> Result<usize> {
    table.columns.get_index_of(name).ok_or_else(|| Error::UnknownColumn {
        table: table.name.clone(),
        column: name.to_string(),
    })
}

fn hash_cell(col: &Column, row: usize, seed: u64) -> Option<u64> {
    match col {
        Column::Int64 { values, nulls } => {
            nulls.is_valid(row).then(|| bloom::hash_int(seed, values[row]))
        }
        Column::Str { values, nulls } => {
            nulls.is_valid(row).then(|| bloom::hash_str(seed, values[row].as_str()))
        }
        Column::Packed(p) => Some(bloom::hash_int(seed, p.get(row) as i64)),
    }
}

fn cells_equal(a: &Column, ra: usize, b: &Column, rb: usize) -> bool {
    match (a, b) {
        (Column::Int64 { .. }, Column::Int64 { .. }) => a.int_at(ra) == b.int_at(rb),
        (Column::Str { .. }, Column::Str { .. }) => a.str_at(ra) == b.str_at(rb),
        _ => a.value(ra) == b.value(rb),
    }
}

impl<'a> ExecState<'a> {
    fn exec(&mut self, node: &ENode) -> Result<Mat> {
        match node {
            ENode::Scan { alias } => self.exec_scan(*alias),
            ENode::Join { id, build, probe } => self.exec_join(*id, build, probe),
        }
    }

    fn exec_scan(&mut self, alias: usize) -> Result<Mat> {
        let table = self.tables[alias];
        let rows = table.row_count;
        let cols: Vec<&Column> = table.columns.values().collect();

        // Pushed filters applicable to this scan, resolved once.
        let mut applications: Vec<(usize, usize)> = Vec::new();
        if self.opts.mode.uses_bloom() {
            for (gi, g) in self.registry.iter().enumerate() {
                if g.discarded || !self.probe_flag[alias] {
                    continue;
                }
                if let Some((target_alias, target_col)) = g.explicit_target {
                    if target_alias == alias {
                        applications.push((gi, target_col));
                    }
                    continue;
                }
                if !self.pipelines.leq(g.source_pipeline, self.pipe_of[alias]) {
                    continue;
                }
                for (col, class) in &self.join_cols[alias] {
                    if class.is_some() && *class == g.class {
                        applications.push((gi, *col));
                    }
                }
            }
            for (gi, _) in &applications {
                self.registry[*gi]
                    .targets
                    .entry(alias)
                    .or_insert(TargetState { processed: 0, passed: 0, disabled: false });
            }
        }

        let base = std::mem::take(&mut self.base[alias]);
        let para = std::mem::take(&mut self.para[alias]);
        let use_para = self.opts.mode.uses_parachute();
        let m = &mut self.metrics[alias];
        let mut out = Vec::new();

        let mut start = 0usize;
        while start < rows {
            let end = rows.min(start + self.opts.batch_size);
            self.batches += 1;
            'row: for row in start..end {
                m.scanned += 1;
                for (col, pred) in &base {
                    if !pred.eval(&cols[*col].value(row)) {
                        continue 'row;
                    }
                }
                m.after_base += 1;
                if use_para {
                    for (col, pred) in &para {
                        let stored = match cols[*col] {
                            Column::Packed(p) => p.get(row),
                            _ => unreachable!("checked at setup"),
                        };
                        if !evaluate_translated(pred, stored) {
                            continue 'row;
                        }
                    }
                }
                m.after_parachute += 1;
                for (gi, col) in &applications {
                    let g = &mut self.registry[*gi];
                    let state = g.targets.get_mut(&alias).expect("registered above");
                    if state.disabled {
                        continue;
                    }
                    state.processed += 1;
                    let hash = hash_cell(cols[*col], row, self.opts.hash_seed)
                        .unwrap_or_else(|| bloom::hash_bytes(self.opts.hash_seed, &[0]));
                    let pass = g.filter.contains(hash);
                    if pass {
                        state.passed += 1;
                    }
                    if state.processed == self.opts.disable_after
                        && state.passed as f64
                            > self.opts.disable_pass_fraction * state.processed as f64
                    {
                        state.disabled = true;
                    }
                    if !pass {
                        continue 'row;
                    }
                }
                m.after_bloom += 1;
                m.emitted.insert(row as u32);
                out.push(vec![row as u32]);
            }
            start = end;
        }
        self.base[alias] = base;
        self.para[alias] = para;
        Ok(Mat { aliases: vec![alias], rows: out })
    }

    fn exec_join(&mut self, id: usize, build: &ENode, probe: &ENode) -> Result<Mat> {
        let bmat = self.exec(build)?;
        let build_set: BTreeSet<usize> = bmat.aliases.iter().copied().collect();

        // Equality pairs resolved at this join: edges whose two aliases
        // first meet here. Normalized as (build alias, probe alias).
        let probe_aliases = probe_alias_set(probe);
        let mut pairs: Vec<(usize, usize, usize, usize)> = Vec::new();
        for j in &self.query.joins {
            let l = self.query.alias_index(&j.left)?;
            let r = self.query.alias_index(&j.right)?;
            let (b, bcol_name, p, pcol_name) = if build_set.contains(&l) && probe_aliases.contains(&r)
            {
                (l, &j.left_column, r, &j.right_column)
            } else if build_set.contains(&r) && probe_aliases.contains(&l) {
                (r, &j.right_column, l, &j.left_column)
            } else {
                continue;
            };
            let bcol = column_index(self.tables[b], bcol_name)?;
            let pcol = column_index(self.tables[p], pcol_name)?;
            pairs.push((b, bcol, p, pcol));
        }
        if pairs.is_empty() {
            return Err(Error::Plan(
                "join without an equality condition; cross joins are not supported".into(),
            ));
        }

        // Position of each pair's build alias inside the build tuples.
        let slot_of: HashMap<usize, usize> =
            bmat.aliases.iter().enumerate().map(|(i, a)| (*a, i)).collect();

        if self.opts.mode.uses_bloom() {
            for (b, bcol, p, pcol) in &pairs {
                let col = &self.tables[*b].columns[*bcol];
                let slot = slot_of[b];
                let mut filter = BloomFilter::new();
                for tuple in &bmat.rows {
                    if let Some(h) = hash_cell(col, tuple[slot] as usize, self.opts.hash_seed) {
                        filter.insert(h);
                    }
                }
                let fill = filter.fill();
                let (bcol_name, _) = self.tables[*b].columns.get_index(*bcol).unwrap();
                let class = self.db.catalog.schema.attribute_class(
                    &self.tables[*b].name,
                    bcol_name,
                );
                self.registry.push(RegisteredBloom {
                    keys: filter.inserted(),
                    fill,
                    discarded: fill > self.opts.bloom_fill_limit,
                    filter,
                    explicit_target: class.is_none().then_some((*p, *pcol)),
                    class,
                    source_pipeline: self.pipelines.join_pipeline[id],
                    join_node: id,
                    build_alias: *b,
                    build_column: bcol_name.clone(),
                    targets: BTreeMap::new(),
                });
            }
        }

        // Hash table over the build side, keyed by the combined pair hash.
        let mut ht: HashMap<u64, Vec<u32>> = HashMap::new();
        'build: for (ti, tuple) in bmat.rows.iter().enumerate() {
            let mut mix = Mix::new(self.opts.hash_seed);
            for (b, bcol, _, _) in &pairs {
                let col = &self.tables[*b].columns[*bcol];
                match hash_cell(col, tuple[slot_of[b]] as usize, self.opts.hash_seed) {
                    Some(h) => mix.feed_all(&h.to_le_bytes()),
                    None => continue 'build,
                }
            }
            ht.entry(mix.finish()).or_default().push(ti as u32);
        }

        let pmat = self.exec(probe)?;
        let pslot_of: HashMap<usize, usize> =
            pmat.aliases.iter().enumerate().map(|(i, a)| (*a, i)).collect();

        let mut out_rows = Vec::new();
        'probe: for ptuple in &pmat.rows {
            let mut mix = Mix::new(self.opts.hash_seed);
            for (_, _, p, pcol) in &pairs {
                let col = &self.tables[*p].columns[*pcol];
                match hash_cell(col, ptuple[pslot_of[p]] as usize, self.opts.hash_seed) {
                    Some(h) => mix.feed_all(&h.to_le_bytes()),
                    None => continue 'probe,
                }
            }
            let Some(candidates) = ht.get(&mix.finish()) else { continue };
            for &ti in candidates {
                let btuple = &bmat.rows[ti as usize];
                let exact = pairs.iter().all(|(b, bcol, p, pcol)| {
                    cells_equal(
                        &self.tables[*b].columns[*bcol],
                        btuple[slot_of[b]] as usize,
                        &self.tables[*p].columns[*pcol],
                        ptuple[pslot_of[p]] as usize,
                    )
                });
                if exact {
                    let mut joined = btuple.clone();
                    joined.extend_from_slice(ptuple);
                    out_rows.push(joined);
                }
            }
        }
        let mut aliases = bmat.aliases;
        aliases.extend_from_slice(&pmat.aliases);
        Ok(Mat { aliases, rows: out_rows })
    }
}

fn probe_alias_set(node: &ENode) -> BTreeSet<usize> {
    match node {
        ENode::Scan { alias } => BTreeSet::from([*alias]),
        ENode::Join { build, probe, .. } => {
            let mut s = probe_alias_set(build);
            s.extend(probe_alias_set(probe));
            s
        }
    }
}

/// Runs a plan over the database and reports per-scan funnels, bloom
/// activity, and an order-independent result digest. The query passed here
/// should already carry any parachute filters it is meant to use.
pub fn execute(
    db: &Database,
    query: &Query,
    plan: &PlanNode,
    opts: &ExecOptions,
) -> Result<ExecMetrics> {
    let started = Instant::now();
    query.validate(&db.catalog.schema)?;
    check_plan_matches(query, plan)?;
    let pipelines = decompose_pipelines(plan);

    let n = query.aliases.len();
    let mut tables = Vec::with_capacity(n);
    for a in &query.aliases {
        tables.push(db.table(&a.table)?);
    }
    let pipe_of: Vec<usize> = query
        .aliases
        .iter()
        .map(|a| pipelines.pipeline_of_alias[&a.alias])
        .collect();
    let probe_flag: Vec<bool> =
        query.aliases.iter().map(|a| pipelines.is_probe(&a.alias)).collect();

    let mut base: Vec<Vec<(usize, PreparedPredicate)>> = vec![Vec::new(); n];
    for f in &query.filters {
        let alias = query.alias_index(&f.alias)?;
        let col = column_index(tables[alias], &f.column)?;
        base[alias].push((col, f.predicate.prepare()?));
    }
    let mut para: Vec<Vec<(usize, TranslatedPredicate)>> = vec![Vec::new(); n];
    if opts.mode.uses_parachute() {
        for p in &query.parachute_filters {
            let alias = query.alias_index(&p.alias)?;
            let col = column_index(tables[alias], &p.column)?;
            if !matches!(tables[alias].columns[col], Column::Packed(_)) {
                return Err(Error::Exec(format!(
                    "'{}.{}' is not a parachute column",
                    tables[alias].name, p.column
                )));
            }
            para[alias].push((col, p.predicate.clone()));
        }
    }
    let mut join_cols: Vec<Vec<(usize, Option<ClassId>)>> = vec![Vec::new(); n];
    for j in &query.joins {
        for (alias, column) in [(&j.left, &j.left_column), (&j.right, &j.right_column)] {
            let ai = query.alias_index(alias)?;
            let col = column_index(tables[ai], column)?;
            if !join_cols[ai].iter().any(|(c, _)| *c == col) {
                let class = db.catalog.schema.attribute_class(&tables[ai].name, column);
                join_cols[ai].push((col, class));
            }
        }
    }

    let metrics = query
        .aliases
        .iter()
        .map(|a| AliasMetrics {
            alias: a.alias.clone(),
            table: a.table.clone(),
            scanned: 0,
            after_base: 0,
            after_parachute: 0,
            after_bloom: 0,
            emitted: BTreeSet::new(),
        })
        .collect();

    let mut next = 0usize;
    let root = lower(plan, query, &mut next)?;
    let mut state = ExecState {
        db,
        query,
        opts,
        pipelines: &pipelines,
        tables,
        pipe_of,
        probe_flag,
        base,
        para,
        join_cols,
        registry: Vec::new(),
        metrics,
        batches: 0,
    };
    let result = state.exec(&root)?;

    // Digest tuples in query alias order so equal result multisets hash
    // equally regardless of plan shape.
    let mut pos_of = vec![0usize; n];
    for (slot, alias) in result.aliases.iter().enumerate() {
        pos_of[*alias] = slot;
    }
    let mut sum = 0u64;
    for tuple in &result.rows {
        let mut mix = Mix::new(0x7265_7375_6c74_7321);
        for p in &pos_of {
            mix.feed_all(&tuple[*p].to_le_bytes());
        }
        sum = sum.wrapping_add(mix.finish());
    }
    let result_rows = result.rows.len() as u64;
    let result_checksum = sum ^ result_rows.wrapping_mul(0x9e37_79b9_7f4a_7c15);

    let blooms = state
        .registry
        .iter()
        .map(|g| BloomReport {
            join_node: g.join_node,
            build_alias: query.aliases[g.build_alias].alias.clone(),
            build_column: g.build_column.clone(),
            class: g.class,
            keys: g.keys,
            fill: g.fill,
            discarded: g.discarded,
            targets: g
                .targets
                .iter()
                .map(|(alias, s)| BloomTargetReport {
                    alias: query.aliases[*alias].alias.clone(),
                    processed: s.processed,
                    passed: s.passed,
                    disabled: s.disabled,
                })
                .collect(),
        })
        .collect();

    Ok(ExecMetrics {
        query_id: query_id(query),
        mode: opts.mode,
        result_rows,
        result_checksum,
        batches: state.batches,
        micros: started.elapsed().as_micros() as u64,
        per_alias: state.metrics,
        blooms,
    })
}

/// Plans (if needed), rewrites blocked filters onto parachute columns, and
/// executes. Returns the metrics, the blocked-pair report, and the plan
/// that ran.
pub fn run_query(
    db: &Database,
    query: &Query,
    plan: Option<&PlanNode>,
    opts: &ExecOptions,
) -> Result<(ExecMetrics, crate::planner::BlockedReport, PlanNode)> {
    let plan = match plan {
        Some(p) => p.clone(),
        None => greedy_plan(query, db)?,
    };
    let analysis =
        crate::planner::analyze_flow(&db.catalog.schema, query, &plan, crate::planner::FlowMode::Psf)?;
    let (rewritten, report) = drop_parachutes(query, &analysis, &db.catalog)?;
    let metrics = execute(db, &rewritten, &plan, opts)?;
    Ok((metrics, report, plan))
}
