//! Exact reference for dangling-tuple measurement.
//!
//! For an acyclic join query, two semi-join sweeps over the join tree (leaf
//! to root, then root to leaf) leave in each table exactly the rows that
//! appear in at least one full join result. Those sets are the ground truth
//! scans are compared against: a sound executor may emit extra rows, never
//! fewer.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::db::Database;
use crate::engine::{ExecMetrics, ExecMode};
use crate::error::{Error, Result};
use crate::planner::{query_id, Query};
use crate::value::Value;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleSets {
    pub query_id: u64,
    pub aliases: Vec<String>,
    /// Row ids per alias, aligned with `aliases`, that survive full
    /// semi-join reduction under the query's base filters.
    pub sets: Vec<BTreeSet<u32>>,
}

impl OracleSets {
    pub fn set_for(&self, alias: &str) -> Option<&BTreeSet<u32>> {
        self.aliases.iter().position(|a| a == alias).map(|i| &self.sets[i])
    }
}

/// Join tree edge: parallel query edges between one alias pair fold into a
/// composite key.
struct TreeEdge {
    a: usize,
    b: usize,
    /// Column index pairs (on a's table, on b's table).
    pairs: Vec<(usize, usize)>,
}

/// Computes the exact non-dangling row sets for an acyclic query.
pub fn yannakakis_reduce(db: &Database, query: &Query) -> Result<OracleSets> {
    query.validate(&db.catalog.schema)?;
    let n = query.aliases.len();
    let mut tables = Vec::with_capacity(n);
    for a in &query.aliases {
        tables.push(db.table(&a.table)?);
    }

    // Group parallel edges by unordered alias pair.
    let mut grouped: BTreeMap<(usize, usize), Vec<(usize, usize)>> = BTreeMap::new();
    for j in &query.joins {
        let l = query.alias_index(&j.left)?;
        let r = query.alias_index(&j.right)?;
        let lcol = tables[l].columns.get_index_of(&j.left_column).ok_or_else(|| {
            Error::UnknownColumn { table: tables[l].name.clone(), column: j.left_column.clone() }
        })?;
        let rcol = tables[r].columns.get_index_of(&j.right_column).ok_or_else(|| {
            Error::UnknownColumn { table: tables[r].name.clone(), column: j.right_column.clone() }
        })?;
        if l < r {
            grouped.entry((l, r)).or_default().push((lcol, rcol));
        } else {
            grouped.entry((r, l)).or_default().push((rcol, lcol));
        }
    }
    // A connected graph on n nodes is a tree iff it has n - 1 edges.
    if grouped.len() != n.saturating_sub(1) {
        return Err(Error::CyclicQuery(format!(
            "{} aliases joined by {} distinct edges",
            n,
            grouped.len()
        )));
    }
    let edges: Vec<TreeEdge> = grouped
        .into_iter()
        .map(|((a, b), pairs)| TreeEdge { a, b, pairs })
        .collect();

    // Base filters decide the starting sets.
    let mut preds: Vec<Vec<(usize, crate::translate::PreparedPredicate)>> = vec![Vec::new(); n];
    for f in &query.filters {
        let alias = query.alias_index(&f.alias)?;
        let col = tables[alias].columns.get_index_of(&f.column).ok_or_else(|| {
            Error::UnknownColumn { table: tables[alias].name.clone(), column: f.column.clone() }
        })?;
        preds[alias].push((col, f.predicate.prepare()?));
    }
    let mut sets: Vec<BTreeSet<u32>> = Vec::with_capacity(n);
    for (alias, table) in tables.iter().enumerate() {
        let cols: Vec<&crate::storage::Column> = table.columns.values().collect();
        let mut set = BTreeSet::new();
        'row: for row in 0..table.row_count {
            for (col, pred) in &preds[alias] {
                if !pred.eval(&cols[*col].value(row)) {
                    continue 'row;
                }
            }
            set.insert(row as u32);
        }
        sets.push(set);
    }

    // Root the tree at alias 0 and order parents before children.
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (ei, e) in edges.iter().enumerate() {
        adj[e.a].push(ei);
        adj[e.b].push(ei);
    }
    let mut order: Vec<(usize, usize)> = Vec::new(); // (edge, child)
    let mut visited = vec![false; n];
    let mut stack = vec![0usize];
    visited[0] = true;
    while let Some(node) = stack.pop() {
        for &ei in &adj[node] {
            let other = if edges[ei].a == node { edges[ei].b } else { edges[ei].a };
            if !visited[other] {
                visited[other] = true;
                order.push((ei, other));
                stack.push(other);
            }
        }
    }

    // Leaf-to-root, then root-to-leaf.
    for &(ei, child) in order.iter().rev() {
        let parent = if edges[ei].a == child { edges[ei].b } else { edges[ei].a };
        let reduced = semijoin(db, query, &sets, &edges[ei], parent, child)?;
        sets[parent] = reduced;
    }
    for &(ei, child) in &order {
        let parent = if edges[ei].a == child { edges[ei].b } else { edges[ei].a };
        let reduced = semijoin(db, query, &sets, &edges[ei], child, parent)?;
        sets[child] = reduced;
    }

    Ok(OracleSets {
        query_id: query_id(query),
        aliases: query.aliases.iter().map(|a| a.alias.clone()).collect(),
        sets,
    })
}

/// Rows of `keep` with at least one composite-key partner among `against`'s
/// surviving rows. NULL keys never match.
fn semijoin(
    db: &Database,
    query: &Query,
    sets: &[BTreeSet<u32>],
    edge: &TreeEdge,
    keep: usize,
    against: usize,
) -> Result<BTreeSet<u32>> {
    let keep_table = db.table(&query.aliases[keep].table)?;
    let against_table = db.table(&query.aliases[against].table)?;
    let key_cols = |side: usize| -> Vec<usize> {
        edge.pairs
            .iter()
            .map(|(ca, cb)| if side == edge.a { *ca } else { *cb })
            .collect()
    };
    let against_cols = key_cols(against);
    let keep_cols = key_cols(keep);

    let mut partner_keys: HashSet<Vec<Value>> = HashSet::new();
    'row: for &row in &sets[against] {
        let mut key = Vec::with_capacity(against_cols.len());
        for &c in &against_cols {
            let v = against_table.columns[c].value(row as usize);
            if v.is_null() {
                continue 'row;
            }
            key.push(v);
        }
        partner_keys.insert(key);
    }

    let mut out = BTreeSet::new();
    'row: for &row in &sets[keep] {
        let mut key = Vec::with_capacity(keep_cols.len());
        for &c in &keep_cols {
            let v = keep_table.columns[c].value(row as usize);
            if v.is_null() {
                continue 'row;
            }
            key.push(v);
        }
        if partner_keys.contains(&key) {
            out.insert(row);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AliasCheck {
    pub alias: String,
    pub emitted: u64,
    pub nondangling: u64,
    /// Oracle rows the scan failed to emit; any value above zero is a
    /// soundness violation.
    pub missing: u64,
    /// Emitted rows the oracle proves dangling.
    pub extra: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifyReport {
    pub query_id: u64,
    pub mode: ExecMode,
    pub sound: bool,
    pub full_reduction: bool,
    pub per_alias: Vec<AliasCheck>,
}

/// Compares a run's emitted row sets against the oracle. Sound means no
/// oracle row was filtered away; full reduction means nothing else was
/// emitted either.
pub fn verify_no_false_negatives(
    oracle: &OracleSets,
    metrics: &ExecMetrics,
) -> Result<VerifyReport> {
    if oracle.query_id != metrics.query_id {
        return Err(Error::QueryIdMismatch { expected: oracle.query_id, got: metrics.query_id });
    }
    let mut per_alias = Vec::with_capacity(oracle.aliases.len());
    for (i, alias) in oracle.aliases.iter().enumerate() {
        let m = metrics
            .alias(alias)
            .ok_or_else(|| Error::Exec(format!("metrics missing alias '{alias}'")))?;
        let want = &oracle.sets[i];
        let missing = want.difference(&m.emitted).count() as u64;
        let extra = m.emitted.difference(want).count() as u64;
        per_alias.push(AliasCheck {
            alias: alias.clone(),
            emitted: m.emitted.len() as u64,
            nondangling: want.len() as u64,
            missing,
            extra,
        });
    }
    let sound = per_alias.iter().all(|a| a.missing == 0);
    let full_reduction = sound && per_alias.iter().all(|a| a.extra == 0);
    Ok(VerifyReport { query_id: oracle.query_id, mode: metrics.mode, sound, full_reduction, per_alias })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DanglingAlias {
    pub alias: String,
    pub after_base: u64,
    pub emitted: u64,
    pub nondangling: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DanglingReport {
    pub query_id: u64,
    pub mode: ExecMode,
    pub per_alias: Vec<DanglingAlias>,
    /// Share of avoidable dangling rows still emitted: emitted minus
    /// necessary, over base-filtered minus necessary. 1.0 when scans filter
    /// nothing beyond base predicates, 0.0 at full reduction (or when
    /// nothing was avoidable).
    pub fraction: f64,
}

pub fn dangling_report(metrics: &ExecMetrics, oracle: &OracleSets) -> Result<DanglingReport> {
    if oracle.query_id != metrics.query_id {
        return Err(Error::QueryIdMismatch { expected: oracle.query_id, got: metrics.query_id });
    }
    let mut per_alias = Vec::new();
    let mut num = 0f64;
    let mut den = 0f64;
    for (i, alias) in oracle.aliases.iter().enumerate() {
        let m = metrics
            .alias(alias)
            .ok_or_else(|| Error::Exec(format!("metrics missing alias '{alias}'")))?;
        let nondangling = oracle.sets[i].len() as u64;
        per_alias.push(DanglingAlias {
            alias: alias.clone(),
            after_base: m.after_base,
            emitted: m.after_bloom,
            nondangling,
        });
        num += m.after_bloom as f64 - nondangling as f64;
        den += m.after_base as f64 - nondangling as f64;
    }
    let fraction = if den == 0.0 { 0.0 } else { num / den };
    Ok(DanglingReport { query_id: oracle.query_id, mode: metrics.mode, per_alias, fraction })
}
