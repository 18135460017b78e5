//! Database container and on-disk bundles.
//!
//! A bundle is a directory: `catalog.json` (schema, descriptors, pending
//! keys), `manifest.json` (table and column order plus row counts), and one
//! binary file per column under `columns/<table>/<column>.bin`. All binary
//! fields are little-endian and writes are deterministic, so two databases
//! with equal state produce byte-identical bundles.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, Schema};
use crate::error::{Error, Result};
use crate::storage::{ingest_csv, Column, NullBitmap, PackedColumn, TableData};

const COLUMN_MAGIC: &[u8; 8] = b"PCHCOL1\0";

#[derive(Debug, Clone)]
pub struct Database {
    pub catalog: Catalog,
    pub tables: IndexMap<String, TableData>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    tables: Vec<TableEntry>,
}

#[derive(Serialize, Deserialize)]
struct TableEntry {
    name: String,
    row_count: usize,
    columns: Vec<String>,
}

impl Database {
    /// Empty database: one empty table per schema declaration.
    pub fn new(schema: Schema) -> Database {
        let tables = schema
            .tables
            .iter()
            .map(|def| (def.name.clone(), TableData::from_def(def)))
            .collect();
        Database { catalog: Catalog::new(schema), tables }
    }

    pub fn table(&self, name: &str) -> Result<&TableData> {
        self.tables
            .get(name)
            .ok_or_else(|| Error::UnknownTable(name.to_string()))
    }

    pub fn table_mut(&mut self, name: &str) -> Result<&mut TableData> {
        self.tables
            .get_mut(name)
            .ok_or_else(|| Error::UnknownTable(name.to_string()))
    }

    /// Replaces the named table's contents with rows read from a CSV file.
    pub fn load_csv(&mut self, table: &str, path: &Path) -> Result<usize> {
        let data = ingest_csv(&self.catalog.schema, table, path)?;
        let rows = data.row_count;
        self.tables.insert(table.to_string(), data);
        Ok(rows)
    }

    /// Total reported bytes of every packed column across all tables; this
    /// is exactly the space added by parachute and helper columns.
    pub fn extra_bytes(&self) -> u64 {
        self.tables
            .values()
            .flat_map(|t| t.columns.values())
            .filter_map(|c| c.as_packed())
            .map(|p| p.reported_bytes())
            .sum()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        write_atomic(&dir.join("catalog.json"), &serde_json::to_vec_pretty(&self.catalog)?)?;
        let manifest = Manifest {
            tables: self
                .tables
                .values()
                .map(|t| TableEntry {
                    name: t.name.clone(),
                    row_count: t.row_count,
                    columns: t.columns.keys().cloned().collect(),
                })
                .collect(),
        };
        write_atomic(&dir.join("manifest.json"), &serde_json::to_vec_pretty(&manifest)?)?;

        let columns_dir = dir.join("columns");
        // Drop stale column files from a previous save of this bundle.
        if columns_dir.exists() {
            fs::remove_dir_all(&columns_dir)?;
        }
        for table in self.tables.values() {
            let table_dir = columns_dir.join(&table.name);
            fs::create_dir_all(&table_dir)?;
            for (name, column) in &table.columns {
                write_atomic(&table_dir.join(format!("{name}.bin")), &encode_column(column))?;
            }
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Database> {
        let catalog: Catalog = serde_json::from_slice(&fs::read(dir.join("catalog.json"))?)?;
        let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)?;
        let mut tables = IndexMap::new();
        for entry in manifest.tables {
            let mut table = TableData::new(&entry.name);
            table.row_count = entry.row_count;
            for name in entry.columns {
                let path = dir.join("columns").join(&entry.name).join(format!("{name}.bin"));
                let column = decode_column(&fs::read(&path)?, &entry.name, &name)?;
                if column.len() != entry.row_count {
                    return Err(Error::Bundle(format!(
                        "column '{}.{name}' holds {} rows, manifest says {}",
                        entry.name,
                        column.len(),
                        entry.row_count
                    )));
                }
                table.columns.insert(name, column);
            }
            tables.insert(entry.name.clone(), table);
        }
        Ok(Database { catalog, tables })
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(bytes)?;
    Ok(())
}

fn encode_column(column: &Column) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(COLUMN_MAGIC);
    match column {
        Column::Int64 { values, nulls } => {
            out.push(0u8);
            out.extend_from_slice(&(values.len() as u64).to_le_bytes());
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
            encode_words(&mut out, nulls.words());
        }
        Column::Str { values, nulls } => {
            out.push(1u8);
            out.extend_from_slice(&(values.len() as u64).to_le_bytes());
            for v in values {
                out.extend_from_slice(&(v.len() as u32).to_le_bytes());
                out.extend_from_slice(v.as_bytes());
            }
            encode_words(&mut out, nulls.words());
        }
        Column::Packed(p) => {
            out.push(2u8);
            out.extend_from_slice(&(p.len() as u64).to_le_bytes());
            out.extend_from_slice(&p.pbw().to_le_bytes());
            encode_words(&mut out, p.words());
        }
    }
    out
}

fn encode_words(out: &mut Vec<u8>, words: &[u64]) {
    out.extend_from_slice(&(words.len() as u64).to_le_bytes());
    for w in words {
        out.extend_from_slice(&w.to_le_bytes());
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    table: &'a str,
    column: &'a str,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Bundle(format!(
                "column '{}.{}' is truncated",
                self.table, self.column
            )));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn i64(&mut self) -> Result<i64> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn words(&mut self) -> Result<Vec<u64>> {
        let n = self.u64()? as usize;
        (0..n).map(|_| self.u64()).collect()
    }
}

fn decode_column(bytes: &[u8], table: &str, column: &str) -> Result<Column> {
    let mut c = Cursor { bytes, pos: 0, table, column };
    if c.take(8)? != COLUMN_MAGIC {
        return Err(Error::Bundle(format!(
            "column '{table}.{column}' has an unrecognized header"
        )));
    }
    let tag = c.u8()?;
    let len = c.u64()? as usize;
    let col = match tag {
        0 => {
            let values: Vec<i64> = (0..len).map(|_| c.i64()).collect::<Result<_>>()?;
            let nulls = NullBitmap::from_words(c.words()?, len);
            Column::Int64 { values, nulls }
        }
        1 => {
            let mut values = Vec::with_capacity(len);
            for _ in 0..len {
                let n = c.u32()? as usize;
                let s = std::str::from_utf8(c.take(n)?).map_err(|_| {
                    Error::Bundle(format!("column '{table}.{column}' holds invalid UTF-8"))
                })?;
                values.push(s.to_string());
            }
            let nulls = NullBitmap::from_words(c.words()?, len);
            Column::Str { values, nulls }
        }
        2 => {
            let pbw = c.u32()?;
            if !(1..=64).contains(&pbw) {
                return Err(Error::Bundle(format!(
                    "column '{table}.{column}' declares packed width {pbw}"
                )));
            }
            Column::Packed(PackedColumn::from_words(pbw, len, c.words()?))
        }
        other => {
            return Err(Error::Bundle(format!(
                "column '{table}.{column}' has unknown type tag {other}"
            )))
        }
    };
    if c.pos != bytes.len() {
        return Err(Error::Bundle(format!(
            "column '{table}.{column}' has {} trailing bytes",
            bytes.len() - c.pos
        )));
    }
    Ok(col)
}

/// Order-independent digest of a bundle directory: a 64-bit FNV-1a hash over
/// every file's relative path and contents, folded in sorted path order.
pub fn bundle_digest(dir: &Path) -> Result<u64> {
    fn collect(dir: &Path, prefix: &Path, out: &mut Vec<(String, Vec<u8>)>) -> Result<()> {
        let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<std::io::Result<_>>()?;
        entries.sort_by_key(|e| e.file_name());
        for entry in entries {
            let path = entry.path();
            let rel = prefix.join(entry.file_name());
            if path.is_dir() {
                collect(&path, &rel, out)?;
            } else {
                out.push((rel.to_string_lossy().into_owned(), fs::read(&path)?));
            }
        }
        Ok(())
    }
    let mut files = Vec::new();
    collect(dir, Path::new(""), &mut files)?;
    let mut hash = 0xcbf29ce484222325u64;
    let mut feed = |bytes: &[u8]| {
        for b in bytes {
            hash ^= *b as u64;
            hash = hash.wrapping_mul(0x100000001b3);
        }
    };
    for (path, contents) in &files {
        feed(path.as_bytes());
        feed(&[0]);
        feed(&(contents.len() as u64).to_le_bytes());
        feed(contents);
    }
    Ok(hash)
}
