//! Queries, join plans, pipeline decomposition, and information-flow
//! analysis.
//!
//! Plans are binary hash-join trees; the left child of a join is the build
//! side, the right child the probe side. A pipeline is a maximal chain of
//! probe edges ending at a scan, so every join belongs to the pipeline of
//! its probe chain; a build side that is itself a join is materialized and
//! forms its own pipeline, while a bare scan on the build side only feeds a
//! hash table and joins the consuming pipeline. Pipeline ids are assigned in
//! execution order (materialized inputs first).
//!
//! Flow analysis asks where a filter's effect can travel. A filter on alias
//! R reaches alias S in one step when R's pipeline runs no later than S's,
//! the two tables share a join attribute class, and S is scanned on a probe
//! side; the transitive closure of that relation tells which scans a filter
//! can never reach. For each unreachable scan sitting one foreign-key hop
//! below a filtered table with an attached parachute column, the filter is
//! translated and applied to the parachute column at scan time instead.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, Schema};
use crate::db::Database;
use crate::error::{Error, Result};
use crate::translate::{translate, BasePredicate, NotTranslatable, TranslatedPredicate};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryAlias {
    pub alias: String,
    pub table: String,
}

/// Equality join edge between two alias columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JoinEdge {
    pub left: String,
    pub left_column: String,
    pub right: String,
    pub right_column: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub alias: String,
    pub column: String,
    pub predicate: BasePredicate,
}

/// A translated predicate pinned to a parachute column, produced by
/// [`drop_parachutes`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParachuteFilterSpec {
    pub alias: String,
    pub column: String,
    pub predicate: TranslatedPredicate,
    pub descriptor_id: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub aliases: Vec<QueryAlias>,
    #[serde(default)]
    pub joins: Vec<JoinEdge>,
    #[serde(default)]
    pub filters: Vec<FilterSpec>,
    #[serde(default)]
    pub parachute_filters: Vec<ParachuteFilterSpec>,
}

impl Query {
    pub fn alias_index(&self, alias: &str) -> Result<usize> {
        self.aliases
            .iter()
            .position(|a| a.alias == alias)
            .ok_or_else(|| Error::Query(format!("unknown alias '{alias}'")))
    }

    pub fn table_of(&self, alias: &str) -> Result<&str> {
        Ok(&self.aliases[self.alias_index(alias)?].table)
    }

    /// Structural checks against a schema: aliases unique and over known
    /// tables, filter and join columns declared, join graph connected.
    pub fn validate(&self, schema: &Schema) -> Result<()> {
        if self.aliases.is_empty() {
            return Err(Error::Query("query has no aliases".into()));
        }
        let mut seen = BTreeSet::new();
        for a in &self.aliases {
            if !seen.insert(a.alias.clone()) {
                return Err(Error::Query(format!("duplicate alias '{}'", a.alias)));
            }
            schema.table(&a.table)?;
        }
        let column_exists = |alias: &str, column: &str| -> Result<()> {
            let table = self.table_of(alias)?;
            let def = schema.table(table)?;
            if def.column(column).is_none() {
                return Err(Error::Query(format!(
                    "alias '{alias}' ({table}) has no column '{column}'"
                )));
            }
            Ok(())
        };
        for j in &self.joins {
            column_exists(&j.left, &j.left_column)?;
            column_exists(&j.right, &j.right_column)?;
            if j.left == j.right {
                return Err(Error::Query(format!("join edge loops on alias '{}'", j.left)));
            }
        }
        for f in &self.filters {
            column_exists(&f.alias, &f.column)?;
        }
        // Parachute filter columns are checked at execution; the packed
        // columns live outside the declared schema.
        for p in &self.parachute_filters {
            self.alias_index(&p.alias)?;
        }

        // Connectivity over the join graph.
        if self.aliases.len() > 1 {
            let mut reach = BTreeSet::from([self.aliases[0].alias.clone()]);
            let mut grew = true;
            while grew {
                grew = false;
                for j in &self.joins {
                    let l = reach.contains(&j.left);
                    let r = reach.contains(&j.right);
                    if l != r {
                        reach.insert(if l { j.right.clone() } else { j.left.clone() });
                        grew = true;
                    }
                }
            }
            if reach.len() != self.aliases.len() {
                return Err(Error::Query("join graph is disconnected".into()));
            }
        }
        Ok(())
    }
}

/// Stable identity of a query's semantics: aliases, join edges, and base
/// filters, each canonically ordered. Parachute filters are rewrites of the
/// same query and do not participate.
pub fn query_id(query: &Query) -> u64 {
    let mut aliases: Vec<(String, String)> = query
        .aliases
        .iter()
        .map(|a| (a.alias.clone(), a.table.clone()))
        .collect();
    aliases.sort();
    let mut joins: Vec<(String, String, String, String)> = query
        .joins
        .iter()
        .map(|j| {
            let a = (j.left.clone(), j.left_column.clone());
            let b = (j.right.clone(), j.right_column.clone());
            if a <= b {
                (a.0, a.1, b.0, b.1)
            } else {
                (b.0, b.1, a.0, a.1)
            }
        })
        .collect();
    joins.sort();
    let mut filters: Vec<(String, String, String)> = query
        .filters
        .iter()
        .map(|f| {
            (
                f.alias.clone(),
                f.column.clone(),
                serde_json::to_string(&f.predicate).expect("predicate serializes"),
            )
        })
        .collect();
    filters.sort();
    let canonical = serde_json::to_string(&(aliases, joins, filters)).expect("canonical form");
    let mut h = 0xcbf29ce484222325u64;
    for b in canonical.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Join plan shape. Build and probe roles follow tree position, so the
/// serialized form needs no equality conditions; every query join edge is
/// applied at the join where its two sides first meet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum PlanNode {
    Scan { alias: String },
    Join { build: Box<PlanNode>, probe: Box<PlanNode> },
}

impl PlanNode {
    pub fn aliases(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_aliases(&mut out);
        out
    }

    fn collect_aliases(&self, out: &mut Vec<String>) {
        match self {
            PlanNode::Scan { alias } => out.push(alias.clone()),
            PlanNode::Join { build, probe } => {
                build.collect_aliases(out);
                probe.collect_aliases(out);
            }
        }
    }
}

/// Checks that a plan covers exactly the query's aliases, once each.
pub fn check_plan_matches(query: &Query, plan: &PlanNode) -> Result<()> {
    let mut in_plan = plan.aliases();
    in_plan.sort();
    for w in in_plan.windows(2) {
        if w[0] == w[1] {
            return Err(Error::Plan(format!("alias '{}' appears twice in the plan", w[0])));
        }
    }
    let mut in_query: Vec<String> = query.aliases.iter().map(|a| a.alias.clone()).collect();
    in_query.sort();
    if in_plan != in_query {
        return Err(Error::Plan(
            "plan aliases do not match the query's aliases".into(),
        ));
    }
    Ok(())
}

/// Pipelines of a plan, in execution order.
#[derive(Debug, Clone)]
pub struct PipelineSet {
    pub count: usize,
    pub pipeline_of_alias: BTreeMap<String, usize>,
    /// The scan each pipeline streams; every other member feeds a hash
    /// table.
    pub probe_leaf: Vec<String>,
    pub members: Vec<Vec<String>>,
    /// Pipeline id of each join node, in preorder (node, build, probe).
    pub join_pipeline: Vec<usize>,
    strictly_before: Vec<Vec<bool>>,
}

impl PipelineSet {
    pub fn is_probe(&self, alias: &str) -> bool {
        match self.pipeline_of_alias.get(alias) {
            Some(p) => self.probe_leaf[*p] == alias,
            None => false,
        }
    }

    /// Strict partial order: the output of `p` is (transitively) the build
    /// input of a join in `q`.
    pub fn before(&self, p: usize, q: usize) -> bool {
        self.strictly_before[p][q]
    }

    pub fn leq(&self, p: usize, q: usize) -> bool {
        p == q || self.before(p, q)
    }
}

/// Splits a plan into pipelines. Ids count upward in execution order.
pub fn decompose_pipelines(plan: &PlanNode) -> PipelineSet {
    struct Walker {
        next_id: usize,
        probe_leaf: Vec<String>,
        members: Vec<Vec<String>>,
        direct: Vec<(usize, usize)>,
        // Pipeline per join node, keyed by preorder position.
        join_pipeline: BTreeMap<usize, usize>,
    }

    // Preorder numbering of join nodes, for engine alignment.
    fn number_joins(node: &PlanNode, next: &mut usize, out: &mut Vec<*const PlanNode>) {
        if let PlanNode::Join { build, probe } = node {
            out.push(node as *const PlanNode);
            *next += 1;
            number_joins(build, next, out);
            number_joins(probe, next, out);
        }
    }

    impl Walker {
        fn walk(&mut self, root: &PlanNode, join_order: &[*const PlanNode]) -> usize {
            let mut chain_members: Vec<String> = Vec::new();
            let mut chain_joins: Vec<usize> = Vec::new();
            let mut subs: Vec<usize> = Vec::new();
            let mut cur = root;
            loop {
                match cur {
                    PlanNode::Scan { alias } => {
                        let id = self.next_id;
                        self.next_id += 1;
                        chain_members.push(alias.clone());
                        self.probe_leaf.push(alias.clone());
                        self.members.push(chain_members);
                        for s in subs {
                            self.direct.push((s, id));
                        }
                        for j in chain_joins {
                            self.join_pipeline.insert(j, id);
                        }
                        return id;
                    }
                    PlanNode::Join { build, probe } => {
                        let pos = join_order
                            .iter()
                            .position(|p| std::ptr::eq(*p, cur))
                            .expect("join node numbered");
                        chain_joins.push(pos);
                        match build.as_ref() {
                            PlanNode::Scan { alias } => chain_members.push(alias.clone()),
                            sub @ PlanNode::Join { .. } => {
                                subs.push(self.walk(sub, join_order));
                            }
                        }
                        cur = probe;
                    }
                }
            }
        }
    }

    let mut join_order = Vec::new();
    let mut n = 0usize;
    number_joins(plan, &mut n, &mut join_order);

    let mut w = Walker {
        next_id: 0,
        probe_leaf: Vec::new(),
        members: Vec::new(),
        direct: Vec::new(),
        join_pipeline: BTreeMap::new(),
    };
    w.walk(plan, &join_order);

    let count = w.next_id;
    let mut strictly_before = vec![vec![false; count]; count];
    for (a, b) in &w.direct {
        strictly_before[*a][*b] = true;
    }
    // Transitive closure over the materialization order.
    for k in 0..count {
        for i in 0..count {
            if strictly_before[i][k] {
                for j in 0..count {
                    if strictly_before[k][j] {
                        strictly_before[i][j] = true;
                    }
                }
            }
        }
    }

    let mut pipeline_of_alias = BTreeMap::new();
    for (id, members) in w.members.iter().enumerate() {
        for m in members {
            pipeline_of_alias.insert(m.clone(), id);
        }
    }
    PipelineSet {
        count,
        pipeline_of_alias,
        probe_leaf: w.probe_leaf,
        members: w.members,
        join_pipeline: w.join_pipeline.into_values().collect(),
        strictly_before,
    }
}

/// Which one-step relation to close over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlowMode {
    /// Probe-side filtering: information moves with materialization order
    /// and lands on probe scans.
    Psf,
    /// Filters travel only within one pipeline, onto its probe scan.
    Lip,
    /// Like `Psf` without the probe-side restriction, modelling engines
    /// that can also filter hash-table builds.
    BuildPush,
}

/// Alias-level information-flow matrices for one plan.
#[derive(Debug, Clone)]
pub struct FlowAnalysis {
    pub mode: FlowMode,
    pub aliases: Vec<String>,
    pub tables: Vec<String>,
    pub pipelines: PipelineSet,
    pub precedes: Vec<Vec<bool>>,
    pub joinable: Vec<Vec<bool>>,
    pub flows: Vec<Vec<bool>>,
    /// Reachability through one or more flow steps; irreflexive.
    pub closure: Vec<Vec<bool>>,
}

/// One application of boolean matrix composition: `(a ∘ b)[i][j]` is true
/// when some k links `a[i][k]` and `b[k][j]`.
pub fn compose(a: &[Vec<bool>], b: &[Vec<bool>]) -> Vec<Vec<bool>> {
    let n = a.len();
    let mut out = vec![vec![false; n]; n];
    for i in 0..n {
        for k in 0..n {
            if a[i][k] {
                for j in 0..n {
                    if b[k][j] {
                        out[i][j] = true;
                    }
                }
            }
        }
    }
    out
}

/// Union of `flows^n` for all n >= 1.
pub fn transitive_closure(flows: &[Vec<bool>]) -> Vec<Vec<bool>> {
    let n = flows.len();
    let mut closure = flows.to_vec();
    loop {
        let step = compose(&closure, flows);
        let mut changed = false;
        for i in 0..n {
            for j in 0..n {
                if step[i][j] && !closure[i][j] {
                    closure[i][j] = true;
                    changed = true;
                }
            }
        }
        if !changed {
            return closure;
        }
    }
}

pub fn analyze_flow(
    schema: &Schema,
    query: &Query,
    plan: &PlanNode,
    mode: FlowMode,
) -> Result<FlowAnalysis> {
    query.validate(schema)?;
    check_plan_matches(query, plan)?;
    let pipelines = decompose_pipelines(plan);

    let aliases: Vec<String> = query.aliases.iter().map(|a| a.alias.clone()).collect();
    let tables: Vec<String> = query.aliases.iter().map(|a| a.table.clone()).collect();
    let n = aliases.len();
    let pipe: Vec<usize> = aliases.iter().map(|a| pipelines.pipeline_of_alias[a]).collect();
    let probe: Vec<bool> = aliases.iter().map(|a| pipelines.is_probe(a)).collect();
    let classes: Vec<BTreeSet<usize>> =
        tables.iter().map(|t| schema.table_classes(t)).collect();

    let mut precedes = vec![vec![false; n]; n];
    let mut joinable = vec![vec![false; n]; n];
    let mut flows = vec![vec![false; n]; n];
    for i in 0..n {
        for j in 0..n {
            precedes[i][j] =
                pipelines.before(pipe[i], pipe[j]) || (pipe[i] == pipe[j] && probe[j]);
            joinable[i][j] = classes[i].intersection(&classes[j]).next().is_some();
            if i == j {
                continue;
            }
            flows[i][j] = match mode {
                FlowMode::Psf => precedes[i][j] && joinable[i][j] && probe[j],
                FlowMode::Lip => pipe[i] == pipe[j] && joinable[i][j] && probe[j],
                FlowMode::BuildPush => precedes[i][j] && joinable[i][j],
            };
        }
    }
    let closure = transitive_closure(&flows);
    Ok(FlowAnalysis { mode, aliases, tables, pipelines, precedes, joinable, flows, closure })
}

impl FlowAnalysis {
    fn idx(&self, alias: &str) -> Result<usize> {
        self.aliases
            .iter()
            .position(|a| a == alias)
            .ok_or_else(|| Error::Query(format!("unknown alias '{alias}'")))
    }

    pub fn flows_between(&self, from: &str, to: &str) -> Result<bool> {
        Ok(self.flows[self.idx(from)?][self.idx(to)?])
    }

    pub fn reaches(&self, from: &str, to: &str) -> Result<bool> {
        Ok(self.closure[self.idx(from)?][self.idx(to)?])
    }
}

/// A filter whose effect cannot reach a scan one foreign-key hop below it,
/// though a parachute column there could carry it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockedPair {
    pub source_alias: String,
    pub source_table: String,
    pub target_alias: String,
    pub target_table: String,
    pub descriptor_id: usize,
    pub filter_index: usize,
    pub column: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TranslationRefusal {
    pub filter_index: usize,
    pub descriptor_id: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct BlockedReport {
    pub pairs: Vec<BlockedPair>,
    pub refusals: Vec<TranslationRefusal>,
}

/// Finds every (filtered alias, unreachable FK alias) pair served by an
/// attached descriptor whose translation succeeds. A transitive descriptor
/// serves filters on the declared column at the top of its copy chain.
/// Pairs are ordered by the target's pipeline id.
pub fn blocked_pairs(
    query: &Query,
    analysis: &FlowAnalysis,
    catalog: &Catalog,
) -> Result<BlockedReport> {
    let mut report = BlockedReport::default();
    for (filter_index, f) in query.filters.iter().enumerate() {
        let source_idx = analysis.idx(&f.alias)?;
        let source_table = &analysis.tables[source_idx];
        for d in &catalog.descriptors {
            if !d.attached {
                continue;
            }
            let (origin_table, origin_column) = catalog.origin_of(d);
            if origin_table != *source_table || origin_column != f.column {
                continue;
            }
            match translate(&f.predicate, d) {
                Ok(_) => {}
                Err(NotTranslatable { reason }) => {
                    report.refusals.push(TranslationRefusal {
                        filter_index,
                        descriptor_id: d.id,
                        reason,
                    });
                    continue;
                }
            }
            for (target_idx, target_table) in analysis.tables.iter().enumerate() {
                if *target_table != d.fk_table || analysis.closure[source_idx][target_idx] {
                    continue;
                }
                report.pairs.push(BlockedPair {
                    source_alias: f.alias.clone(),
                    source_table: source_table.clone(),
                    target_alias: analysis.aliases[target_idx].clone(),
                    target_table: target_table.clone(),
                    descriptor_id: d.id,
                    filter_index,
                    column: f.column.clone(),
                });
            }
        }
    }
    report.pairs.sort_by_key(|p| {
        (
            analysis.pipelines.pipeline_of_alias[&p.target_alias],
            p.target_alias.clone(),
            p.descriptor_id,
            p.filter_index,
        )
    });
    Ok(report)
}

/// Rewrites the query so each blocked pair's filter also runs, translated,
/// on the target's parachute column. Base filters stay in place; the
/// translated forms are additional prefilters.
pub fn drop_parachutes(
    query: &Query,
    analysis: &FlowAnalysis,
    catalog: &Catalog,
) -> Result<(Query, BlockedReport)> {
    let report = blocked_pairs(query, analysis, catalog)?;
    let mut rewritten = query.clone();
    for pair in &report.pairs {
        let desc = catalog.descriptor(pair.descriptor_id)?;
        let filter = &query.filters[pair.filter_index];
        let translated = translate(&filter.predicate, desc)
            .expect("blocked pairs only contain translatable filters");
        let spec = ParachuteFilterSpec {
            alias: pair.target_alias.clone(),
            column: desc.parachute_column.clone(),
            predicate: translated,
            descriptor_id: desc.id,
        };
        if !rewritten.parachute_filters.contains(&spec) {
            rewritten.parachute_filters.push(spec);
        }
    }
    for refusal in &report.refusals {
        log::warn!(
            "filter {} cannot ride descriptor {}: {}",
            refusal.filter_index,
            refusal.descriptor_id,
            refusal.reason
        );
    }
    Ok((rewritten, report))
}

fn filter_selectivity(pred: &BasePredicate) -> f64 {
    use crate::value::CmpOp;
    match pred {
        BasePredicate::Compare { cmp: CmpOp::Eq, .. } => 0.1,
        BasePredicate::Compare { cmp: CmpOp::Ne, .. } => 0.9,
        BasePredicate::Compare { .. } => 0.3,
        BasePredicate::Between { .. } => 0.25,
        BasePredicate::In { .. } | BasePredicate::EnumeratedUdf { .. } => 0.2,
        BasePredicate::IsNull => 0.05,
        BasePredicate::Like { .. } | BasePredicate::ILike { .. } => 0.25,
        BasePredicate::EnumerableRegex { .. } => 0.15,
    }
}

/// Greedy left-deep planner: start from the alias with the smallest
/// filtered-size estimate, then repeatedly probe the connected alias with
/// the smallest estimate. Estimates are row counts scaled by fixed
/// per-predicate factors; ties break on alias name.
pub fn greedy_plan(query: &Query, db: &Database) -> Result<PlanNode> {
    query.validate(&db.catalog.schema)?;
    let estimate = |alias: &str| -> Result<f64> {
        let table = query.table_of(alias)?;
        let mut est = db.table(table)?.row_count as f64;
        for f in &query.filters {
            if f.alias == alias {
                est *= filter_selectivity(&f.predicate);
            }
        }
        Ok(est)
    };

    let mut remaining: BTreeSet<String> =
        query.aliases.iter().map(|a| a.alias.clone()).collect();
    let mut best: Option<(f64, String)> = None;
    for a in &remaining {
        let e = estimate(a)?;
        if best.as_ref().is_none_or(|(be, ba)| e < *be || (e == *be && *a < *ba)) {
            best = Some((e, a.clone()));
        }
    }
    let (_, first) = best.unwrap();
    remaining.remove(&first);
    let mut joined: BTreeSet<String> = BTreeSet::from([first.clone()]);
    let mut plan = PlanNode::Scan { alias: first };

    while !remaining.is_empty() {
        let mut best: Option<(f64, String)> = None;
        for a in &remaining {
            let connected = query.joins.iter().any(|j| {
                (j.left == *a && joined.contains(&j.right))
                    || (j.right == *a && joined.contains(&j.left))
            });
            if !connected {
                continue;
            }
            let e = estimate(a)?;
            if best.as_ref().is_none_or(|(be, ba)| e < *be || (e == *be && *a < *ba)) {
                best = Some((e, a.clone()));
            }
        }
        let Some((_, next)) = best else {
            return Err(Error::Query("join graph is disconnected".into()));
        };
        remaining.remove(&next);
        joined.insert(next.clone());
        plan = PlanNode::Join {
            build: Box::new(plan),
            probe: Box::new(PlanNode::Scan { alias: next }),
        };
    }
    Ok(plan)
}

/// Convenience map from alias to table for a query.
pub fn alias_tables(query: &Query) -> HashMap<String, String> {
    query
        .aliases
        .iter()
        .map(|a| (a.alias.clone(), a.table.clone()))
        .collect()
}
