//! Attaching parachute columns and keeping them fresh under writes.
//!
//! Attach works one FK table at a time: every descriptor targeting the table
//! is computed in a single scan of its rows. For each row the PK partner is
//! looked up, the source value condensed through the descriptor's
//! representation, and the result written into a packed column.
//!
//! Strict mode demands full join integrity: a dangling foreign key aborts
//! with the offending row. Relaxed mode stores a marker (`2^pbw - 1`) for
//! rows without a partner, remembers the missing keys, and patches those rows
//! as soon as a later insert or update supplies the partner. Rows with
//! several partners fold fingerprint masks by OR; histogram partners must all
//! share one bin.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::time::Instant;

use serde::Serialize;

use crate::catalog::{Catalog, ParachuteDescriptor, ParachuteKind, Representation};
use crate::db::Database;
use crate::error::{Error, Result};
use crate::fingerprint::{fingerprint, round_robin_partition};
use crate::histogram::{build_equidepth, estimate_distribution};
use crate::storage::{Column, KeyIndex, PackedColumn, TableData};
use crate::value::{LogicalType, Value};

/// Stored value for FK rows with no PK partner (relaxed mode only). Such
/// rows are join-dangling, so any stored value is sound; the top of the
/// range keeps them out of ordinary bins.
pub fn no_partner_marker(pbw: u32) -> u64 {
    if pbw == 64 {
        u64::MAX
    } else {
        (1u64 << pbw) - 1
    }
}

#[derive(Debug, Clone)]
pub struct AttachOptions {
    /// FK rows sampled when estimating the joined distribution.
    pub sample_size: usize,
    pub seed: u64,
    /// Fail on dangling keys and duplicate PK keys instead of marking.
    pub strict: bool,
    /// Max-to-mean bin occupancy above this is logged as a warning at
    /// attach and flagged by `skew_check`.
    pub skew_limit: f64,
}

impl Default for AttachOptions {
    fn default() -> Self {
        AttachOptions { sample_size: 20_000, seed: 0, strict: false, skew_limit: 4.0 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AttachStats {
    pub descriptor_id: usize,
    pub fk_table: String,
    pub parachute_column: String,
    pub rows_written: usize,
    pub join_lookups: u64,
    pub no_partner_rows: usize,
    pub reported_bytes: u64,
    pub build_micros: u64,
    /// Scan time of the shared pass this descriptor was computed in.
    pub join_micros: u64,
    pub write_micros: u64,
    pub skew_ratio: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MaintainStats {
    pub table: String,
    pub rows_inserted: usize,
    pub updates_applied: usize,
    pub join_lookups: u64,
    pub parachute_rows_refreshed: u64,
    pub pending_patched: usize,
    pub micros: u64,
}

/// Max-to-mean occupancy over `total_bins`, ignoring out-of-range markers.
/// `None` when nothing countable was stored.
pub fn skew_ratio(values: &[u64], total_bins: u32) -> Option<f64> {
    if total_bins == 0 {
        return None;
    }
    let mut counts = vec![0u64; total_bins as usize];
    for &v in values {
        if v < total_bins as u64 {
            counts[v as usize] += 1;
        }
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return None;
    }
    let max = *counts.iter().max().unwrap();
    Some(max as f64 * total_bins as f64 / total as f64)
}

/// True when an attached histogram descriptor has lost its equi-depth
/// guarantee: max stored bin occupancy strictly exceeds `threshold` times
/// the mean. Exactly at the threshold still passes. Fingerprint columns
/// have no bins and never trip this.
pub fn skew_check(db: &Database, descriptor_id: usize, threshold: f64) -> Result<bool> {
    let desc = db.catalog.descriptor(descriptor_id)?;
    if !desc.attached {
        return Err(Error::Catalog(format!("descriptor {descriptor_id} is not attached")));
    }
    if desc.kind == ParachuteKind::StringFingerprint {
        return Ok(false);
    }
    let column = db.table(&desc.fk_table)?.column(&desc.parachute_column)?;
    let packed = column.as_packed().ok_or_else(|| {
        Error::Catalog(format!("column '{}' is not packed", desc.parachute_column))
    })?;
    let values: Vec<u64> = (0..packed.len()).map(|i| packed.get(i)).collect();
    let bins = desc.histogram().map(|h| h.total_bins()).unwrap_or(0);
    Ok(skew_ratio(&values, bins).is_some_and(|r| r > threshold))
}

/// Builds the representation for a prospective descriptor. Histogram kinds
/// estimate the joined distribution by sampling FK rows; fingerprints use a
/// fixed byte partition; transitive sources copy the representation of the
/// descriptor that produced the source column.
pub fn build_representation(
    db: &Database,
    fk_table: &str,
    pk_table: &str,
    source_column: &str,
    pbw: u32,
    kind: ParachuteKind,
    opts: &AttachOptions,
) -> Result<(Representation, bool)> {
    let edge = db.catalog.schema.fk_edge(fk_table, pk_table).ok_or_else(|| {
        Error::Catalog(format!("no foreign key from '{fk_table}' to '{pk_table}'"))
    })?;
    let pk_def = db.catalog.schema.table(pk_table)?;
    if let Some(col) = pk_def.column(source_column) {
        let want = match kind {
            ParachuteKind::NumericHistogram => LogicalType::Int64,
            ParachuteKind::LowcardString | ParachuteKind::StringFingerprint => LogicalType::String,
        };
        if col.column_type != want {
            return Err(Error::Catalog(format!(
                "column '{pk_table}.{source_column}' is {:?}, kind {} needs {:?}",
                col.column_type,
                kind.as_str(),
                want
            )));
        }
        match kind {
            ParachuteKind::StringFingerprint => {
                Ok((Representation::BytePartition(round_robin_partition(pbw)), col.nullable))
            }
            _ => {
                let sample = estimate_distribution(
                    db.table(fk_table)?,
                    &edge.fk_column,
                    db.table(pk_table)?,
                    &edge.pk_column,
                    source_column,
                    col.nullable,
                    opts.sample_size,
                    opts.seed,
                    opts.strict,
                )?;
                Ok((
                    Representation::EquiDepthHistogram(build_equidepth(&sample, pbw)?),
                    col.nullable,
                ))
            }
        }
    } else {
        let dep = db
            .catalog
            .descriptors
            .iter()
            .find(|d| d.fk_table == pk_table && d.parachute_column == source_column)
            .ok_or_else(|| {
                Error::Catalog(format!(
                    "source column '{pk_table}.{source_column}' is neither declared nor a parachute column"
                ))
            })?;
        if dep.kind != kind {
            return Err(Error::Catalog(format!(
                "transitive source '{source_column}' has kind {}, requested {}",
                dep.kind.as_str(),
                kind.as_str()
            )));
        }
        if dep.pbw != pbw {
            return Err(Error::Catalog(format!(
                "transitive source '{source_column}' is {} bits wide, requested {pbw}",
                dep.pbw
            )));
        }
        // Packed columns are never NULL.
        Ok((dep.representation.clone(), false))
    }
}

/// Builds a representation, registers the descriptor, and attaches it.
pub fn build_and_attach(
    db: &mut Database,
    fk_table: &str,
    pk_table: &str,
    source_column: &str,
    pbw: u32,
    kind: ParachuteKind,
    opts: &AttachOptions,
) -> Result<AttachStats> {
    let start = Instant::now();
    let (representation, nullable) =
        build_representation(db, fk_table, pk_table, source_column, pbw, kind, opts)?;
    let build_micros = start.elapsed().as_micros() as u64;
    let id = db.catalog.register_parachute(
        fk_table,
        pk_table,
        source_column,
        pbw,
        kind,
        representation,
        nullable,
    )?;
    let mut stats = attach_registered(db, id, opts)?;
    stats.build_micros += build_micros;
    Ok(stats)
}

/// Attaches one registered descriptor.
pub fn attach_registered(db: &mut Database, id: usize, opts: &AttachOptions) -> Result<AttachStats> {
    let fk_table = db.catalog.descriptor(id)?.fk_table.clone();
    let mut stats = attach_table(db, &fk_table, &[id], opts)?;
    Ok(stats.pop().unwrap())
}

/// Attaches all requested descriptors in dependency order, scanning each FK
/// table once per consecutive run in the order.
pub fn attach_many(db: &mut Database, ids: &[usize], opts: &AttachOptions) -> Result<Vec<AttachStats>> {
    let order = attach_order(&db.catalog, ids)?;
    let mut stats = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let table = db.catalog.descriptor(order[i])?.fk_table.clone();
        let mut j = i;
        while j < order.len() && db.catalog.descriptor(order[j])?.fk_table == table {
            j += 1;
        }
        stats.extend(attach_table(db, &table, &order[i..j], opts)?);
        i = j;
    }
    Ok(stats)
}

/// Dependency-respecting order over `requested` plus any unattached
/// descriptors their transitive sources rely on. Descriptors producing a
/// source column come before descriptors copying it.
pub fn attach_order(catalog: &Catalog, requested: &[usize]) -> Result<Vec<usize>> {
    let dep_of = |d: &ParachuteDescriptor| -> Result<Option<usize>> {
        if !d.transitive {
            return Ok(None);
        }
        catalog
            .descriptors
            .iter()
            .find(|e| e.fk_table == d.pk_table && e.parachute_column == d.source_column)
            .map(|e| Some(e.id))
            .ok_or_else(|| {
                Error::Catalog(format!(
                    "descriptor {} copies '{}' which no registered descriptor produces",
                    d.id, d.source_column
                ))
            })
    };

    let mut include: BTreeSet<usize> = BTreeSet::new();
    let mut stack: Vec<usize> = requested.to_vec();
    while let Some(id) = stack.pop() {
        if !include.insert(id) {
            continue;
        }
        let d = catalog.descriptor(id)?;
        if let Some(dep) = dep_of(d)? {
            if !catalog.descriptor(dep)?.attached {
                stack.push(dep);
            }
        }
    }

    let mut order = Vec::new();
    let mut placed: BTreeSet<usize> = BTreeSet::new();
    while placed.len() < include.len() {
        let mut progressed = false;
        for &id in &include {
            if placed.contains(&id) {
                continue;
            }
            let d = catalog.descriptor(id)?;
            let ready = match dep_of(d)? {
                None => true,
                Some(dep) => {
                    catalog.descriptor(dep)?.attached
                        || placed.contains(&dep)
                        || !include.contains(&dep)
                }
            };
            if ready {
                order.push(id);
                placed.insert(id);
                progressed = true;
            }
        }
        if !progressed {
            return Err(Error::Catalog("attach order contains a dependency cycle".into()));
        }
    }
    Ok(order)
}

/// True when every transitive descriptor in `order` is preceded by the
/// descriptor producing its source column (or that descriptor is already
/// attached).
pub fn attach_order_is_valid(catalog: &Catalog, order: &[usize]) -> bool {
    for (pos, &id) in order.iter().enumerate() {
        let Ok(d) = catalog.descriptor(id) else { return false };
        if !d.transitive {
            continue;
        }
        let Some(dep) = catalog
            .descriptors
            .iter()
            .find(|e| e.fk_table == d.pk_table && e.parachute_column == d.source_column)
        else {
            return false;
        };
        if !dep.attached && !order[..pos].contains(&dep.id) {
            return false;
        }
    }
    true
}

fn set_pending(catalog: &mut Catalog, edge: String, mut keys: Vec<i64>) {
    keys.sort_unstable();
    keys.dedup();
    if keys.is_empty() {
        catalog.pending_keys.remove(&edge);
    } else {
        catalog.pending_keys.insert(edge, keys);
    }
}

/// Condenses the source value of one PK row through a descriptor.
pub(crate) fn condense_one(desc: &ParachuteDescriptor, pk: &TableData, partner: usize) -> Result<u64> {
    if desc.transitive {
        let col = pk.column(&desc.source_column)?;
        return col.as_packed().map(|p| p.get(partner)).ok_or_else(|| {
            Error::Catalog(format!(
                "'{}.{}' is not attached yet; attach it before '{}'",
                desc.pk_table, desc.source_column, desc.parachute_column
            ))
        });
    }
    match desc.kind {
        ParachuteKind::StringFingerprint => {
            let helper = desc.helper_column.as_ref().unwrap();
            let col = pk.column(helper)?;
            col.as_packed().map(|p| p.get(partner)).ok_or_else(|| {
                Error::Catalog(format!("helper column '{}' is not packed", helper))
            })
        }
        ParachuteKind::NumericHistogram | ParachuteKind::LowcardString => {
            let hist = desc.histogram().ok_or_else(|| {
                Error::Catalog("histogram kind without a histogram representation".into())
            })?;
            let value = pk.column(&desc.source_column)?.value(partner);
            Ok(hist.bin(&value)? as u64)
        }
    }
}

/// Folds per-partner condensed values: masks union by OR, bins must agree.
pub(crate) fn fold_partners(desc: &ParachuteDescriptor, values: &[u64], fk_row: usize) -> Result<u64> {
    debug_assert!(!values.is_empty());
    match desc.kind {
        ParachuteKind::StringFingerprint => Ok(values.iter().fold(0, |a, b| a | b)),
        _ => {
            let first = values[0];
            if values.iter().any(|v| *v != first) {
                return Err(Error::NotAttachable {
                    fk_table: desc.fk_table.clone(),
                    pk_table: desc.pk_table.clone(),
                    row: fk_row,
                });
            }
            Ok(first)
        }
    }
}

/// Builds (or rebuilds, idempotently) the PK-side fingerprint helper.
fn build_helper(db: &mut Database, desc: &ParachuteDescriptor) -> Result<()> {
    let Some(helper_name) = desc.helper_column.clone() else { return Ok(()) };
    let partition = desc
        .partition()
        .ok_or_else(|| Error::Catalog("fingerprint kind without a byte partition".into()))?
        .clone();
    let pk = db.table(&desc.pk_table)?;
    let source = pk.column(&desc.source_column)?;
    let mut packed = PackedColumn::new(desc.pbw);
    for row in 0..pk.row_count {
        let mask = match source.str_at(row) {
            Some(s) => fingerprint(&partition, s).0,
            None => 0,
        };
        packed.push(mask);
    }
    db.table_mut(&desc.pk_table)?.add_column(&helper_name, Column::Packed(packed))?;
    Ok(())
}

/// One scan of `fk_table` computing every listed descriptor.
fn attach_table(
    db: &mut Database,
    fk_table: &str,
    ids: &[usize],
    opts: &AttachOptions,
) -> Result<Vec<AttachStats>> {
    struct Ctx {
        desc: ParachuteDescriptor,
        index: KeyIndex,
        stored: Vec<u64>,
        lookups: u64,
        no_partner: usize,
        pending: Vec<i64>,
        build_micros: u64,
    }

    let mut ctxs: Vec<Ctx> = Vec::new();
    for &id in ids {
        let desc = db.catalog.descriptor(id)?.clone();
        if desc.fk_table != fk_table {
            return Err(Error::Catalog(format!(
                "descriptor {id} targets '{}', not '{fk_table}'",
                desc.fk_table
            )));
        }
        let helper_start = Instant::now();
        build_helper(db, &desc)?;
        let build_micros = helper_start.elapsed().as_micros() as u64;
        let index = db.table(&desc.pk_table)?.key_index(&desc.pk_column, opts.strict)?;
        ctxs.push(Ctx {
            index,
            stored: Vec::new(),
            lookups: 0,
            no_partner: 0,
            pending: Vec::new(),
            build_micros,
            desc,
        });
    }

    let join_start = Instant::now();
    {
        let fk = db.table(fk_table)?;
        for ctx in &mut ctxs {
            let pk = db.table(&ctx.desc.pk_table)?;
            let fk_col = fk.column(&ctx.desc.fk_column)?;
            let marker = no_partner_marker(ctx.desc.pbw);
            ctx.stored.reserve(fk.row_count);
            for row in 0..fk.row_count {
                let key = fk_col.value(row);
                ctx.lookups += 1;
                if key.is_null() {
                    // A NULL key can never join; it is not a dangling
                    // reference, so even strict mode only marks it.
                    ctx.stored.push(marker);
                    ctx.no_partner += 1;
                    continue;
                }
                let partners = ctx.index.rows_for(&key);
                if partners.is_empty() {
                    if opts.strict {
                        return Err(Error::DanglingKey {
                            fk_table: fk_table.to_string(),
                            fk_column: ctx.desc.fk_column.clone(),
                            pk_table: ctx.desc.pk_table.clone(),
                            row,
                            key: key.to_string(),
                        });
                    }
                    ctx.stored.push(marker);
                    ctx.no_partner += 1;
                    if let Some(k) = key.as_int() {
                        ctx.pending.push(k);
                    }
                    continue;
                }
                let condensed: Vec<u64> = partners
                    .iter()
                    .map(|p| condense_one(&ctx.desc, pk, *p))
                    .collect::<Result<_>>()?;
                ctx.stored.push(fold_partners(&ctx.desc, &condensed, row)?);
            }
        }
    }
    let join_micros = join_start.elapsed().as_micros() as u64;

    // Record bin occupancy skew. A single heavy value cannot be split
    // across bins, so a fresh attach can already exceed the threshold;
    // that only means re-attaching later will not rebalance it, so it is
    // reported, never fatal.
    let mut skews: Vec<Option<f64>> = Vec::new();
    for ctx in &ctxs {
        let skew = match ctx.desc.kind {
            ParachuteKind::StringFingerprint => None,
            _ => {
                let bins = ctx.desc.histogram().map(|h| h.total_bins()).unwrap_or(0);
                skew_ratio(&ctx.stored, bins)
            }
        };
        if let Some(ratio) = skew {
            if ratio > opts.skew_limit {
                log::warn!(
                    "bin occupancy of '{}' is skewed: max/mean {ratio:.2} exceeds {:.2}",
                    ctx.desc.parachute_column,
                    opts.skew_limit
                );
            }
        }
        skews.push(skew);
    }

    let mut out = Vec::new();
    for (ctx, skew) in ctxs.into_iter().zip(skews) {
        let write_start = Instant::now();
        let mut packed = PackedColumn::new(ctx.desc.pbw);
        for v in &ctx.stored {
            packed.push(*v);
        }
        let reported_bytes = packed.reported_bytes();
        let rows_written = packed.len();
        db.table_mut(fk_table)?.add_column(&ctx.desc.parachute_column, Column::Packed(packed))?;
        let write_micros = write_start.elapsed().as_micros() as u64;

        let edge = Catalog::pending_edge_key(&ctx.desc.fk_table, &ctx.desc.pk_table);
        set_pending(&mut db.catalog, edge, ctx.pending);
        db.catalog.descriptors[ctx.desc.id].attached = true;

        out.push(AttachStats {
            descriptor_id: ctx.desc.id,
            fk_table: fk_table.to_string(),
            parachute_column: ctx.desc.parachute_column.clone(),
            rows_written,
            join_lookups: ctx.lookups,
            no_partner_rows: ctx.no_partner,
            reported_bytes,
            build_micros: ctx.build_micros,
            join_micros,
            write_micros,
            skew_ratio: skew,
        });
    }
    Ok(out)
}

/// Recomputes the stored parachute values of FK rows whose key is in `keys`,
/// then cascades into descriptors that copy this descriptor's column.
/// Returns (rows refreshed, join lookups).
fn recompute_rows_for_keys(
    db: &mut Database,
    id: usize,
    keys: &BTreeSet<i64>,
    pending_fixups: bool,
) -> Result<(u64, u64)> {
    if keys.is_empty() {
        return Ok((0, 0));
    }
    let desc = db.catalog.descriptor(id)?.clone();
    let marker = no_partner_marker(desc.pbw);

    let mut updates: Vec<(usize, u64)> = Vec::new();
    let mut still_missing: Vec<i64> = Vec::new();
    let mut lookups = 0u64;
    {
        let fk = db.table(&desc.fk_table)?;
        let pk = db.table(&desc.pk_table)?;
        let index = pk.key_index(&desc.pk_column, false)?;
        let fk_col = fk.column(&desc.fk_column)?;
        for row in 0..fk.row_count {
            let Some(k) = fk_col.int_at(row) else { continue };
            if !keys.contains(&k) {
                continue;
            }
            lookups += 1;
            let partners = index.rows_for(&Value::Int(k));
            let stored = if partners.is_empty() {
                still_missing.push(k);
                marker
            } else {
                let condensed: Vec<u64> = partners
                    .iter()
                    .map(|p| condense_one(&desc, pk, *p))
                    .collect::<Result<_>>()?;
                fold_partners(&desc, &condensed, row)?
            };
            updates.push((row, stored));
        }
    }

    let refreshed = updates.len() as u64;
    let table = db.table_mut(&desc.fk_table)?;
    let col = table
        .column_mut(&desc.parachute_column)?
        .as_packed_mut()
        .ok_or_else(|| Error::Catalog(format!("'{}' is not packed", desc.parachute_column)))?;
    let mut changed_rows: Vec<usize> = Vec::with_capacity(updates.len());
    for (row, stored) in updates {
        col.set(row, stored);
        changed_rows.push(row);
    }

    if pending_fixups {
        let edge = Catalog::pending_edge_key(&desc.fk_table, &desc.pk_table);
        let mut pending = db.catalog.pending_keys.get(&edge).cloned().unwrap_or_default();
        pending.retain(|k| !keys.contains(k));
        pending.extend(still_missing);
        set_pending(&mut db.catalog, edge, pending);
    }

    // Cascade into transitive copies of this column.
    let mut total = (refreshed, lookups);
    if !changed_rows.is_empty() {
        let downstream: Vec<usize> = db
            .catalog
            .descriptors
            .iter()
            .filter(|e| {
                e.attached
                    && e.pk_table == desc.fk_table
                    && e.source_column == desc.parachute_column
            })
            .map(|e| e.id)
            .collect();
        for down_id in downstream {
            let down_pk_column = db.catalog.descriptor(down_id)?.pk_column.clone();
            let key_col = db.table(&desc.fk_table)?.column(&down_pk_column)?;
            let next_keys: BTreeSet<i64> =
                changed_rows.iter().filter_map(|r| key_col.int_at(*r)).collect();
            let (r, l) = recompute_rows_for_keys(db, down_id, &next_keys, pending_fixups)?;
            total.0 += r;
            total.1 += l;
        }
    }
    Ok(total)
}

/// Re-checks pending keys against the current contents of `pk_table` and
/// refreshes FK rows whose partner has appeared.
fn patch_pending(db: &mut Database, pk_table: &str) -> Result<(usize, u64, u64)> {
    let edges: Vec<(String, Vec<usize>)> = {
        let mut by_edge: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for d in &db.catalog.descriptors {
            if d.attached && d.pk_table == pk_table {
                by_edge
                    .entry(Catalog::pending_edge_key(&d.fk_table, &d.pk_table))
                    .or_default()
                    .push(d.id);
            }
        }
        by_edge.into_iter().collect()
    };

    let mut patched = 0usize;
    let mut refreshed = 0u64;
    let mut lookups = 0u64;
    for (edge, ids) in edges {
        let Some(pending) = db.catalog.pending_keys.get(&edge).cloned() else { continue };
        if pending.is_empty() {
            continue;
        }
        let pk_column = db.catalog.descriptor(ids[0])?.pk_column.clone();
        let found: BTreeSet<i64> = {
            let index = db.table(pk_table)?.key_index(&pk_column, false)?;
            pending
                .iter()
                .copied()
                .filter(|k| index.contains(&Value::Int(*k)))
                .collect()
        };
        if found.is_empty() {
            continue;
        }
        patched += found.len();
        for id in ids {
            let (r, l) = recompute_rows_for_keys(db, id, &found, false)?;
            refreshed += r;
            lookups += l;
        }
        let mut remaining = pending;
        remaining.retain(|k| !found.contains(k));
        set_pending(&mut db.catalog, edge, remaining);
    }
    Ok((patched, refreshed, lookups))
}

/// Appends a batch of rows, computing parachute and helper values for the
/// new rows and refolding FK rows whose key the batch supplies, whether it
/// was pending or already bound. Each row must supply exactly the table's
/// declared columns.
pub fn maintain_insert(
    db: &mut Database,
    table: &str,
    rows: &[BTreeMap<String, Value>],
    opts: &AttachOptions,
) -> Result<MaintainStats> {
    let start = Instant::now();
    let def = db.catalog.schema.table(table)?.clone();
    let declared: BTreeSet<&str> = def.columns.iter().map(|c| c.name.as_str()).collect();
    for (i, row) in rows.iter().enumerate() {
        let provided: BTreeSet<&str> = row.keys().map(|k| k.as_str()).collect();
        if provided != declared {
            return Err(Error::Schema(format!(
                "insert row {i} into '{table}' must supply exactly the declared columns"
            )));
        }
        for c in &def.columns {
            let v = &row[&c.name];
            if v.is_null() && !c.nullable {
                return Err(Error::Schema(format!(
                    "insert row {i}: NULL in non-nullable column '{table}.{}'",
                    c.name
                )));
            }
            if let Some(t) = v.logical_type() {
                if t != c.column_type {
                    return Err(Error::Schema(format!(
                        "insert row {i}: value {v} does not fit '{table}.{}'",
                        c.name
                    )));
                }
            }
        }
    }

    // FK side: condensed values for each attached descriptor on this table.
    let fk_descs: Vec<ParachuteDescriptor> = db
        .catalog
        .descriptors
        .iter()
        .filter(|d| d.attached && d.fk_table == table)
        .cloned()
        .collect();
    let mut lookups = 0u64;
    let mut parachute_values: Vec<(String, Vec<u64>)> = Vec::new();
    let mut new_pending: Vec<(String, Vec<i64>)> = Vec::new();
    for desc in &fk_descs {
        let pk = db.table(&desc.pk_table)?;
        let index = pk.key_index(&desc.pk_column, opts.strict)?;
        let marker = no_partner_marker(desc.pbw);
        let mut stored = Vec::with_capacity(rows.len());
        let mut pending = Vec::new();
        for (i, row) in rows.iter().enumerate() {
            let key = &row[&desc.fk_column];
            lookups += 1;
            if key.is_null() {
                stored.push(marker);
                continue;
            }
            let partners = index.rows_for(key);
            if partners.is_empty() {
                if opts.strict {
                    return Err(Error::DanglingKey {
                        fk_table: table.to_string(),
                        fk_column: desc.fk_column.clone(),
                        pk_table: desc.pk_table.clone(),
                        row: db.table(table)?.row_count + i,
                        key: key.to_string(),
                    });
                }
                stored.push(marker);
                if let Some(k) = key.as_int() {
                    pending.push(k);
                }
                continue;
            }
            let condensed: Vec<u64> = partners
                .iter()
                .map(|p| condense_one(desc, pk, *p))
                .collect::<Result<_>>()?;
            stored.push(fold_partners(desc, &condensed, db.table(table)?.row_count + i)?);
        }
        parachute_values.push((desc.parachute_column.clone(), stored));
        if !pending.is_empty() {
            new_pending.push((
                Catalog::pending_edge_key(&desc.fk_table, &desc.pk_table),
                pending,
            ));
        }
    }

    // PK side: helper masks for fingerprint descriptors sourced here.
    let mut helper_values: BTreeMap<String, Vec<u64>> = BTreeMap::new();
    for d in db.catalog.descriptors.iter().filter(|d| d.attached && d.pk_table == table) {
        let Some(helper) = d.helper_column.clone() else { continue };
        if helper_values.contains_key(&helper) {
            continue;
        }
        let partition = d.partition().unwrap();
        let mut masks = Vec::with_capacity(rows.len());
        for row in rows {
            let mask = match &row[&d.source_column] {
                Value::Str(s) => fingerprint(partition, s).0,
                _ => 0,
            };
            masks.push(mask);
        }
        helper_values.insert(helper, masks);
    }

    // Append, covering every column the table currently has.
    {
        let data = db.table_mut(table)?;
        let known: HashSet<String> = def
            .columns
            .iter()
            .map(|c| c.name.clone())
            .chain(parachute_values.iter().map(|(n, _)| n.clone()))
            .chain(helper_values.keys().cloned())
            .collect();
        for name in data.columns.keys() {
            if !known.contains(name.as_str()) {
                return Err(Error::Catalog(format!(
                    "column '{table}.{name}' has no descriptor; cannot compute inserted values"
                )));
            }
        }
        for (i, row) in rows.iter().enumerate() {
            for c in &def.columns {
                data.columns.get_mut(&c.name).unwrap().push_value(&row[&c.name])?;
            }
            for (name, stored) in &parachute_values {
                let col = data.columns.get_mut(name).unwrap().as_packed_mut().ok_or_else(|| {
                    Error::Catalog(format!("'{table}.{name}' is not packed"))
                })?;
                col.push(stored[i]);
            }
            for (name, masks) in &helper_values {
                let col = data.columns.get_mut(name).unwrap().as_packed_mut().ok_or_else(|| {
                    Error::Catalog(format!("'{table}.{name}' is not packed"))
                })?;
                col.push(masks[i]);
            }
            data.row_count += 1;
        }
    }

    for (edge, pending) in new_pending {
        let mut all = db.catalog.pending_keys.get(&edge).cloned().unwrap_or_default();
        all.extend(pending);
        set_pending(&mut db.catalog, edge, all);
    }

    // New PK rows may satisfy keys other tables were waiting for, or hand
    // an extra partner to keys that were already bound; FK rows on either
    // kind of key need their condensed values refolded.
    let mut patched = 0usize;
    let mut refreshed = 0u64;
    let mut patch_lookups = 0u64;
    let by_edge: Vec<(String, Vec<usize>)> = {
        let mut edges: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for d in db.catalog.descriptors.iter().filter(|d| d.attached && d.pk_table == table) {
            edges
                .entry(Catalog::pending_edge_key(&d.fk_table, &d.pk_table))
                .or_default()
                .push(d.id);
        }
        edges.into_iter().collect()
    };
    for (edge, ids) in by_edge {
        let pk_column = db.catalog.descriptor(ids[0])?.pk_column.clone();
        let keys: BTreeSet<i64> = rows.iter().filter_map(|r| r[&pk_column].as_int()).collect();
        if keys.is_empty() {
            continue;
        }
        if let Some(pending) = db.catalog.pending_keys.get(&edge) {
            patched += pending.iter().filter(|k| keys.contains(k)).count();
        }
        for id in ids {
            let (r, l) = recompute_rows_for_keys(db, id, &keys, true)?;
            refreshed += r;
            patch_lookups += l;
        }
    }

    Ok(MaintainStats {
        table: table.to_string(),
        rows_inserted: rows.len(),
        updates_applied: 0,
        join_lookups: lookups + patch_lookups,
        parachute_rows_refreshed: refreshed,
        pending_patched: patched,
        micros: start.elapsed().as_micros() as u64,
    })
}

/// Appends rows without maintaining parachute state: attached parachute
/// columns on the table are padded with the no-partner marker, helper
/// columns with the empty mask. The padding is a placeholder, so affected
/// descriptors must be re-attached before their pruning can be trusted.
/// This is the from-scratch baseline an incremental insert is timed against.
pub fn append_unmaintained(
    db: &mut Database,
    table: &str,
    rows: &[BTreeMap<String, Value>],
) -> Result<()> {
    let def = db.catalog.schema.table(table)?.clone();
    let declared: BTreeSet<&str> = def.columns.iter().map(|c| c.name.as_str()).collect();
    for (i, row) in rows.iter().enumerate() {
        let provided: BTreeSet<&str> = row.keys().map(|k| k.as_str()).collect();
        if provided != declared {
            return Err(Error::Schema(format!(
                "insert row {i} into '{table}' must supply exactly the declared columns"
            )));
        }
    }
    let mut pads: BTreeMap<String, u64> = BTreeMap::new();
    for d in db.catalog.descriptors.iter().filter(|d| d.attached) {
        if d.fk_table == table {
            pads.insert(d.parachute_column.clone(), no_partner_marker(d.pbw));
        }
        if d.pk_table == table {
            if let Some(h) = &d.helper_column {
                pads.insert(h.clone(), 0);
            }
        }
    }
    let data = db.table_mut(table)?;
    for name in data.columns.keys() {
        if !declared.contains(name.as_str()) && !pads.contains_key(name.as_str()) {
            return Err(Error::Catalog(format!(
                "column '{table}.{name}' has no descriptor; cannot pad inserted rows"
            )));
        }
    }
    for row in rows {
        for c in &def.columns {
            data.columns.get_mut(&c.name).unwrap().push_value(&row[&c.name])?;
        }
        for (name, pad) in &pads {
            let col = data.columns.get_mut(name).unwrap().as_packed_mut().ok_or_else(|| {
                Error::Catalog(format!("'{table}.{name}' is not packed"))
            })?;
            col.push(*pad);
        }
        data.row_count += 1;
    }
    Ok(())
}

/// Point update of one plain column value, refreshing helper columns, every
/// parachute column condensing it (direct and transitive), and pending keys.
/// Key columns cannot be updated.
pub fn maintain_update(
    db: &mut Database,
    table: &str,
    row: usize,
    column: &str,
    value: &Value,
    _opts: &AttachOptions,
) -> Result<MaintainStats> {
    let start = Instant::now();
    let def = db.catalog.schema.table(table)?;
    let col_def = def
        .column(column)
        .ok_or_else(|| Error::UnknownColumn { table: table.to_string(), column: column.to_string() })?
        .clone();
    let is_key = db.catalog.schema.foreign_keys.iter().any(|fk| {
        (fk.fk_table == table && fk.fk_column == column)
            || (fk.pk_table == table && fk.pk_column == column)
    });
    if is_key {
        return Err(Error::Catalog(format!(
            "'{table}.{column}' is a join key; key updates are not supported"
        )));
    }
    if value.is_null() && !col_def.nullable {
        return Err(Error::Schema(format!(
            "NULL update to non-nullable column '{table}.{column}'"
        )));
    }
    if let Some(t) = value.logical_type() {
        if t != col_def.column_type {
            return Err(Error::Schema(format!(
                "value {value} does not fit '{table}.{column}'"
            )));
        }
    }
    if row >= db.table(table)?.row_count {
        return Err(Error::Exec(format!(
            "row {row} is out of range for '{table}'"
        )));
    }

    db.table_mut(table)?.column_mut(column)?.set_value(row, value)?;

    // Refresh helper masks sourced from this column.
    let mut refreshed_helpers: BTreeSet<String> = BTreeSet::new();
    let helper_updates: Vec<(String, u64)> = db
        .catalog
        .descriptors
        .iter()
        .filter(|d| d.attached && d.pk_table == table && d.source_column == column)
        .filter_map(|d| {
            let helper = d.helper_column.clone()?;
            let mask = match value {
                Value::Str(s) => fingerprint(d.partition().unwrap(), s).0,
                _ => 0,
            };
            Some((helper, mask))
        })
        .collect();
    for (helper, mask) in helper_updates {
        if refreshed_helpers.insert(helper.clone()) {
            db.table_mut(table)?
                .column_mut(&helper)?
                .as_packed_mut()
                .ok_or_else(|| Error::Catalog(format!("'{helper}' is not packed")))?
                .set(row, mask);
        }
    }

    // Refresh FK rows referencing this row through each direct descriptor.
    let direct: Vec<(usize, String)> = db
        .catalog
        .descriptors
        .iter()
        .filter(|d| d.attached && d.pk_table == table && d.source_column == column)
        .map(|d| (d.id, d.pk_column.clone()))
        .collect();
    let mut refreshed = 0u64;
    let mut lookups = 0u64;
    for (id, pk_column) in direct {
        let Some(key) = db.table(table)?.column(&pk_column)?.int_at(row) else { continue };
        let keys: BTreeSet<i64> = BTreeSet::from([key]);
        let (r, l) = recompute_rows_for_keys(db, id, &keys, false)?;
        refreshed += r;
        lookups += l;
    }

    let (patched, patch_refreshed, patch_lookups) = patch_pending(db, table)?;

    Ok(MaintainStats {
        table: table.to_string(),
        rows_inserted: 0,
        updates_applied: 1,
        join_lookups: lookups + patch_lookups,
        parachute_rows_refreshed: refreshed + patch_refreshed,
        pending_patched: patched,
        micros: start.elapsed().as_micros() as u64,
    })
}
