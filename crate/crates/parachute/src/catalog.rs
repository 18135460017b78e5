//! Schema and parachute metadata.
//!
//! A [`Schema`] declares tables, typed columns, and foreign keys. Key columns
//! connected by foreign-key edges form attribute equivalence classes; the
//! foreign-key graph must be a DAG. The [`Catalog`] adds parachute
//! descriptors: which FK-table column condenses which PK-table source column,
//! at what width, and with which representation.
//!
//! Bin index 0 is reserved for NULL wherever a histogram carries a NULL bin;
//! the convention is recorded in the persisted catalog as `null_bin_index`.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fingerprint::BytePartition;
use crate::histogram::EquiDepthHistogram;
use crate::value::LogicalType;

/// Attribute equivalence class id; key columns share a class exactly when
/// they are connected through foreign-key edges.
pub type ClassId = usize;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnDef {
    pub name: String,
    #[serde(rename = "type")]
    pub column_type: LogicalType,
    #[serde(default)]
    pub nullable: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableDef {
    pub name: String,
    pub columns: Vec<ColumnDef>,
}

impl TableDef {
    pub fn column(&self, name: &str) -> Option<&ColumnDef> {
        self.columns.iter().find(|c| c.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForeignKey {
    pub fk_table: String,
    pub fk_column: String,
    pub pk_table: String,
    pub pk_column: String,
}

/// Validated schema with derived attribute classes.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "SchemaSerde", into = "SchemaSerde")]
pub struct Schema {
    pub tables: Vec<TableDef>,
    pub foreign_keys: Vec<ForeignKey>,
    classes: HashMap<(String, String), ClassId>,
}

#[derive(Serialize, Deserialize)]
struct SchemaSerde {
    tables: Vec<TableDef>,
    #[serde(default)]
    foreign_keys: Vec<ForeignKey>,
}

impl TryFrom<SchemaSerde> for Schema {
    type Error = Error;
    fn try_from(raw: SchemaSerde) -> Result<Schema> {
        Schema::new(raw.tables, raw.foreign_keys)
    }
}

impl From<Schema> for SchemaSerde {
    fn from(s: Schema) -> SchemaSerde {
        SchemaSerde { tables: s.tables, foreign_keys: s.foreign_keys }
    }
}

impl Schema {
    pub fn new(tables: Vec<TableDef>, foreign_keys: Vec<ForeignKey>) -> Result<Schema> {
        let mut names = BTreeSet::new();
        for t in &tables {
            if !names.insert(t.name.clone()) {
                return Err(Error::Schema(format!("duplicate table '{}'", t.name)));
            }
            let mut cols = BTreeSet::new();
            for c in &t.columns {
                if !cols.insert(c.name.clone()) {
                    return Err(Error::Schema(format!(
                        "duplicate column '{}' in table '{}'",
                        c.name, t.name
                    )));
                }
            }
        }
        let find = |table: &str, column: &str| -> Result<()> {
            let def = tables
                .iter()
                .find(|t| t.name == table)
                .ok_or_else(|| Error::Schema(format!("foreign key references unknown table '{table}'")))?;
            def.column(column).ok_or_else(|| {
                Error::Schema(format!("foreign key references unknown column '{table}.{column}'"))
            })?;
            Ok(())
        };
        for fk in &foreign_keys {
            find(&fk.fk_table, &fk.fk_column)?;
            find(&fk.pk_table, &fk.pk_column)?;
        }

        let schema = Schema {
            classes: derive_classes(&foreign_keys),
            tables,
            foreign_keys,
        };
        schema.check_dag()?;
        Ok(schema)
    }

    pub fn table(&self, name: &str) -> Result<&TableDef> {
        self.tables
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::UnknownTable(name.to_string()))
    }

    /// Class of a key column, or `None` for columns outside every
    /// foreign-key edge.
    pub fn attribute_class(&self, table: &str, column: &str) -> Option<ClassId> {
        self.classes.get(&(table.to_string(), column.to_string())).copied()
    }

    /// All classes present on a table.
    pub fn table_classes(&self, table: &str) -> BTreeSet<ClassId> {
        self.classes
            .iter()
            .filter(|((t, _), _)| t == table)
            .map(|(_, c)| *c)
            .collect()
    }

    /// Columns of `table` belonging to `class`.
    pub fn columns_in_class(&self, table: &str, class: ClassId) -> Vec<String> {
        let mut cols: Vec<String> = self
            .classes
            .iter()
            .filter(|((t, _), c)| t == table && **c == class)
            .map(|((_, col), _)| col.clone())
            .collect();
        cols.sort();
        cols
    }

    /// First declared FK edge from `fk_table` to `pk_table`.
    pub fn fk_edge(&self, fk_table: &str, pk_table: &str) -> Option<&ForeignKey> {
        self.foreign_keys
            .iter()
            .find(|fk| fk.fk_table == fk_table && fk.pk_table == pk_table)
    }

    fn check_dag(&self) -> Result<()> {
        // Depth-first search over fk_table -> pk_table edges.
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            White,
            Grey,
            Black,
        }
        let idx: HashMap<&str, usize> = self
            .tables
            .iter()
            .enumerate()
            .map(|(i, t)| (t.name.as_str(), i))
            .collect();
        let mut marks = vec![Mark::White; self.tables.len()];
        let mut stack_names: Vec<String> = Vec::new();

        fn visit(
            node: usize,
            tables: &[TableDef],
            edges: &[ForeignKey],
            idx: &HashMap<&str, usize>,
            marks: &mut Vec<Mark>,
            stack: &mut Vec<String>,
        ) -> Result<()> {
            marks[node] = Mark::Grey;
            stack.push(tables[node].name.clone());
            for fk in edges.iter().filter(|fk| fk.fk_table == tables[node].name) {
                let next = idx[fk.pk_table.as_str()];
                match marks[next] {
                    Mark::Grey => {
                        let start = stack.iter().position(|n| *n == fk.pk_table).unwrap();
                        let mut cycle = stack[start..].to_vec();
                        cycle.push(fk.pk_table.clone());
                        return Err(Error::SchemaCycle(cycle));
                    }
                    Mark::White => visit(next, tables, edges, idx, marks, stack)?,
                    Mark::Black => {}
                }
            }
            stack.pop();
            marks[node] = Mark::Black;
            Ok(())
        }

        for i in 0..self.tables.len() {
            if marks[i] == Mark::White {
                visit(i, &self.tables, &self.foreign_keys, &idx, &mut marks, &mut stack_names)?;
            }
        }
        Ok(())
    }
}

fn derive_classes(foreign_keys: &[ForeignKey]) -> HashMap<(String, String), ClassId> {
    // Union-find over (table, column) nodes linked by FK edges.
    let mut parent: Vec<usize> = Vec::new();
    let mut node_of: HashMap<(String, String), usize> = HashMap::new();
    let node = |key: (String, String), parent: &mut Vec<usize>, map: &mut HashMap<(String, String), usize>| {
        *map.entry(key).or_insert_with(|| {
            parent.push(parent.len());
            parent.len() - 1
        })
    };
    fn root(parent: &mut Vec<usize>, mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for fk in foreign_keys {
        let a = node((fk.fk_table.clone(), fk.fk_column.clone()), &mut parent, &mut node_of);
        let b = node((fk.pk_table.clone(), fk.pk_column.clone()), &mut parent, &mut node_of);
        let (ra, rb) = (root(&mut parent, a), root(&mut parent, b));
        if ra != rb {
            parent[ra] = rb;
        }
    }
    // Dense class ids in deterministic key order.
    let mut keys: Vec<_> = node_of.keys().cloned().collect();
    keys.sort();
    let mut class_of_root: BTreeMap<usize, ClassId> = BTreeMap::new();
    let mut out = HashMap::new();
    for key in keys {
        let r = root(&mut parent, node_of[&key]);
        let next = class_of_root.len();
        let class = *class_of_root.entry(r).or_insert(next);
        out.insert(key, class);
    }
    out
}

/// What a parachute column condenses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParachuteKind {
    #[serde(rename = "numeric-histogram")]
    NumericHistogram,
    #[serde(rename = "lowcard-string")]
    LowcardString,
    #[serde(rename = "string-fingerprint")]
    StringFingerprint,
}

impl ParachuteKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ParachuteKind::NumericHistogram => "numeric-histogram",
            ParachuteKind::LowcardString => "lowcard-string",
            ParachuteKind::StringFingerprint => "string-fingerprint",
        }
    }
}

/// Condensing function carried by a descriptor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum Representation {
    #[serde(rename = "equi-depth-histogram")]
    EquiDepthHistogram(EquiDepthHistogram),
    #[serde(rename = "byte-partition")]
    BytePartition(BytePartition),
}

/// One parachute column: metadata plus its representation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParachuteDescriptor {
    pub id: usize,
    pub fk_table: String,
    pub fk_column: String,
    pub pk_table: String,
    pub pk_column: String,
    pub source_column: String,
    pub pbw: u32,
    pub kind: ParachuteKind,
    pub representation: Representation,
    /// Name of the packed column materialized on the FK table.
    pub parachute_column: String,
    /// PK-side fingerprint column, for string-fingerprint descriptors.
    pub helper_column: Option<String>,
    pub nullable_source: bool,
    /// True when `source_column` is itself a parachute column on the PK
    /// table, copied through one more edge.
    pub transitive: bool,
    pub attached: bool,
}

impl ParachuteDescriptor {
    pub fn histogram(&self) -> Option<&EquiDepthHistogram> {
        match &self.representation {
            Representation::EquiDepthHistogram(h) => Some(h),
            _ => None,
        }
    }

    pub fn partition(&self) -> Option<&BytePartition> {
        match &self.representation {
            Representation::BytePartition(p) => Some(p),
            _ => None,
        }
    }
}

pub fn parachute_column_name(pk_table: &str, source_column: &str) -> String {
    format!("parachute_{pk_table}_{source_column}")
}

pub fn helper_column_name(source_column: &str) -> String {
    format!("parachute_helper_{source_column}")
}

/// Schema plus descriptor registry plus the pending no-partner key sets
/// accumulated by relaxed attaches.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Catalog {
    pub schema: Schema,
    /// Reserved bin index for NULL in every nullable histogram.
    pub null_bin_index: u32,
    pub descriptors: Vec<ParachuteDescriptor>,
    /// Keys seen on the FK side with no PK partner during a relaxed attach,
    /// grouped by `fk_table -> pk_table` edge, awaiting a partner.
    #[serde(default)]
    pub pending_keys: BTreeMap<String, Vec<i64>>,
}

impl Catalog {
    pub fn new(schema: Schema) -> Catalog {
        Catalog {
            schema,
            null_bin_index: 0,
            descriptors: Vec::new(),
            pending_keys: BTreeMap::new(),
        }
    }

    /// Registers a descriptor. At most one descriptor exists per
    /// `(fk_table, pk_table, source_column)` triple; re-registration replaces
    /// the old entry in place, keeping its id. New triples get the next dense
    /// id.
    pub fn register_parachute(
        &mut self,
        fk_table: &str,
        pk_table: &str,
        source_column: &str,
        pbw: u32,
        kind: ParachuteKind,
        representation: Representation,
        nullable_source: bool,
    ) -> Result<usize> {
        if pbw == 0 {
            return Err(Error::Catalog("pbw must be at least 1".to_string()));
        }
        let edge = self.schema.fk_edge(fk_table, pk_table).ok_or_else(|| {
            Error::Catalog(format!(
                "no foreign key from '{fk_table}' to '{pk_table}'"
            ))
        })?;
        let (fk_column, pk_column) = (edge.fk_column.clone(), edge.pk_column.clone());

        // The source is either a declared column of the PK table or one of
        // its own parachute columns (transitive propagation).
        let pk_def = self.schema.table(pk_table)?;
        let transitive = if pk_def.column(source_column).is_some() {
            false
        } else if self
            .descriptors
            .iter()
            .any(|d| d.fk_table == pk_table && d.parachute_column == source_column)
        {
            true
        } else {
            return Err(Error::Catalog(format!(
                "source column '{pk_table}.{source_column}' is neither declared nor a parachute column"
            )));
        };

        match (&representation, kind) {
            (Representation::EquiDepthHistogram(h), ParachuteKind::NumericHistogram)
            | (Representation::EquiDepthHistogram(h), ParachuteKind::LowcardString) => {
                let cap = 1u64 << pbw.min(63);
                if (h.total_bins() as u64) > cap {
                    return Err(Error::Catalog(format!(
                        "histogram has {} bins, more than 2^{pbw}",
                        h.total_bins()
                    )));
                }
            }
            (Representation::BytePartition(p), ParachuteKind::StringFingerprint) => {
                if p.pbw() != pbw {
                    return Err(Error::Catalog(format!(
                        "byte partition has {} clusters, descriptor expects {pbw}",
                        p.pbw()
                    )));
                }
                if pbw > 64 {
                    return Err(Error::Catalog(
                        "fingerprint descriptors store 64-bit masks; pbw above 64 is not supported"
                            .to_string(),
                    ));
                }
            }
            _ => {
                return Err(Error::Catalog(format!(
                    "representation does not match kind {}",
                    kind.as_str()
                )))
            }
        }

        // Transitive descriptors copy an already-condensed packed column;
        // only direct fingerprint descriptors need a PK-side helper.
        let helper_column = match kind {
            ParachuteKind::StringFingerprint if !transitive => {
                Some(helper_column_name(source_column))
            }
            _ => None,
        };
        let descriptor = ParachuteDescriptor {
            id: 0,
            fk_table: fk_table.to_string(),
            fk_column,
            pk_table: pk_table.to_string(),
            pk_column,
            source_column: source_column.to_string(),
            pbw,
            kind,
            representation,
            parachute_column: parachute_column_name(pk_table, source_column),
            helper_column,
            nullable_source,
            transitive,
            attached: false,
        };

        if let Some(existing) = self.descriptors.iter_mut().find(|d| {
            d.fk_table == fk_table && d.pk_table == pk_table && d.source_column == source_column
        }) {
            let id = existing.id;
            *existing = ParachuteDescriptor { id, ..descriptor };
            Ok(id)
        } else {
            let id = self.descriptors.len();
            self.descriptors.push(ParachuteDescriptor { id, ..descriptor });
            Ok(id)
        }
    }

    pub fn descriptor(&self, id: usize) -> Result<&ParachuteDescriptor> {
        self.descriptors
            .get(id)
            .ok_or_else(|| Error::Catalog(format!("no descriptor with id {id}")))
    }

    pub fn find_descriptor(
        &self,
        fk_table: &str,
        pk_table: &str,
        source_column: &str,
    ) -> Option<&ParachuteDescriptor> {
        self.descriptors.iter().find(|d| {
            d.fk_table == fk_table && d.pk_table == pk_table && d.source_column == source_column
        })
    }

    pub fn descriptors_on(&self, fk_table: &str) -> Vec<&ParachuteDescriptor> {
        self.descriptors.iter().filter(|d| d.fk_table == fk_table).collect()
    }

    /// The declared (table, column) a descriptor ultimately condenses.
    /// Direct descriptors answer for themselves; transitive ones walk up
    /// through the descriptors whose parachute columns they copy.
    pub fn origin_of(&self, descriptor: &ParachuteDescriptor) -> (String, String) {
        let mut cur = descriptor;
        loop {
            if !cur.transitive {
                return (cur.pk_table.clone(), cur.source_column.clone());
            }
            match self.descriptors.iter().find(|e| {
                e.fk_table == cur.pk_table && e.parachute_column == cur.source_column
            }) {
                Some(producer) => cur = producer,
                // A dangling transitive link cannot occur through
                // registration, but a hand-edited catalog should not loop.
                None => return (cur.pk_table.clone(), cur.source_column.clone()),
            }
        }
    }

    pub fn pending_edge_key(fk_table: &str, pk_table: &str) -> String {
        format!("{fk_table}->{pk_table}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::histogram::EquiDepthHistogram;

    pub(crate) fn imdb_schema() -> Schema {
        let t = |name: &str, cols: Vec<(&str, LogicalType, bool)>| TableDef {
            name: name.to_string(),
            columns: cols
                .into_iter()
                .map(|(n, ty, nullable)| ColumnDef { name: n.into(), column_type: ty, nullable })
                .collect(),
        };
        let fk = |ft: &str, fc: &str, pt: &str, pc: &str| ForeignKey {
            fk_table: ft.into(),
            fk_column: fc.into(),
            pk_table: pt.into(),
            pk_column: pc.into(),
        };
        Schema::new(
            vec![
                t("kind_type", vec![("id", LogicalType::Int64, false), ("kind", LogicalType::String, false)]),
                t(
                    "title",
                    vec![
                        ("id", LogicalType::Int64, false),
                        ("title", LogicalType::String, false),
                        ("production_year", LogicalType::Int64, true),
                        ("kind_id", LogicalType::Int64, false),
                    ],
                ),
                t(
                    "cast_info",
                    vec![("id", LogicalType::Int64, false), ("movie_id", LogicalType::Int64, false)],
                ),
            ],
            vec![
                fk("title", "kind_id", "kind_type", "id"),
                fk("cast_info", "movie_id", "title", "id"),
            ],
        )
        .unwrap()
    }

    #[test]
    fn classes_follow_fk_edges() {
        let s = imdb_schema();
        let title_id = s.attribute_class("title", "id").unwrap();
        assert_eq!(s.attribute_class("cast_info", "movie_id"), Some(title_id));
        let kind_id = s.attribute_class("kind_type", "id").unwrap();
        assert_eq!(s.attribute_class("title", "kind_id"), Some(kind_id));
        assert_ne!(title_id, kind_id);
        assert_eq!(s.attribute_class("title", "production_year"), None);
    }

    #[test]
    fn fk_must_reference_known_columns() {
        let bad = Schema::new(
            vec![TableDef {
                name: "a".into(),
                columns: vec![ColumnDef { name: "id".into(), column_type: LogicalType::Int64, nullable: false }],
            }],
            vec![ForeignKey {
                fk_table: "a".into(),
                fk_column: "id".into(),
                pk_table: "missing".into(),
                pk_column: "id".into(),
            }],
        );
        assert!(bad.is_err());
    }

    #[test]
    fn cyclic_fk_graph_is_rejected() {
        let col = |n: &str| ColumnDef { name: n.into(), column_type: LogicalType::Int64, nullable: false };
        let err = Schema::new(
            vec![
                TableDef { name: "a".into(), columns: vec![col("id"), col("b_id")] },
                TableDef { name: "b".into(), columns: vec![col("id"), col("a_id")] },
            ],
            vec![
                ForeignKey { fk_table: "a".into(), fk_column: "b_id".into(), pk_table: "b".into(), pk_column: "id".into() },
                ForeignKey { fk_table: "b".into(), fk_column: "a_id".into(), pk_table: "a".into(), pk_column: "id".into() },
            ],
        )
        .unwrap_err();
        match err {
            Error::SchemaCycle(cycle) => assert!(cycle.len() >= 3),
            other => panic!("unexpected error {other:?}"),
        }
    }

    fn year_histogram() -> Representation {
        Representation::EquiDepthHistogram(EquiDepthHistogram::from_numeric_boundaries(
            vec![2000, 2004, 2020],
            false,
        ))
    }

    #[test]
    fn register_replaces_same_triple() {
        let mut c = Catalog::new(imdb_schema());
        let id = c
            .register_parachute(
                "cast_info",
                "title",
                "production_year",
                2,
                ParachuteKind::NumericHistogram,
                year_histogram(),
                true,
            )
            .unwrap();
        assert_eq!(id, 0);
        assert_eq!(c.descriptor(id).unwrap().pbw, 2);
        let id2 = c
            .register_parachute(
                "cast_info",
                "title",
                "production_year",
                4,
                ParachuteKind::NumericHistogram,
                year_histogram(),
                true,
            )
            .unwrap();
        assert_eq!(id2, id);
        assert_eq!(c.descriptors.len(), 1);
        assert_eq!(c.descriptor(id).unwrap().pbw, 4);
        assert_eq!(
            c.descriptor(id).unwrap().parachute_column,
            "parachute_title_production_year"
        );
    }

    #[test]
    fn register_rejects_pbw_zero_and_missing_edge() {
        let mut c = Catalog::new(imdb_schema());
        assert!(c
            .register_parachute(
                "cast_info",
                "title",
                "production_year",
                0,
                ParachuteKind::NumericHistogram,
                year_histogram(),
                true,
            )
            .is_err());
        assert!(c
            .register_parachute(
                "cast_info",
                "kind_type",
                "kind",
                2,
                ParachuteKind::NumericHistogram,
                year_histogram(),
                false,
            )
            .is_err());
    }

    #[test]
    fn transitive_source_must_be_registered_first() {
        let mut c = Catalog::new(imdb_schema());
        assert!(c
            .register_parachute(
                "cast_info",
                "title",
                "parachute_kind_type_kind",
                2,
                ParachuteKind::LowcardString,
                year_histogram(),
                false,
            )
            .is_err());
        c.register_parachute(
            "title",
            "kind_type",
            "kind",
            2,
            ParachuteKind::LowcardString,
            year_histogram(),
            false,
        )
        .unwrap();
        let id = c
            .register_parachute(
                "cast_info",
                "title",
                "parachute_kind_type_kind",
                2,
                ParachuteKind::LowcardString,
                year_histogram(),
                false,
            )
            .unwrap();
        assert!(c.descriptor(id).unwrap().transitive);
    }

    #[test]
    fn schema_round_trips_through_json() {
        let s = imdb_schema();
        let j = serde_json::to_string(&s).unwrap();
        let back: Schema = serde_json::from_str(&j).unwrap();
        assert_eq!(back.tables, s.tables);
        assert_eq!(back.foreign_keys, s.foreign_keys);
        assert_eq!(
            back.attribute_class("cast_info", "movie_id"),
            s.attribute_class("cast_info", "movie_id")
        );
    }
}
