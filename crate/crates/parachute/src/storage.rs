//! In-memory columnar storage.
//!
//! Tables hold either plain columns (`int64` / `string`, each with a NULL
//! bitmap) or non-nullable bit-packed columns of a fixed width `pbw` used for
//! parachute and helper data. Ingestion reads comma-separated, double-quoted
//! UTF-8 CSV files with a header row; an empty field is NULL.

use std::collections::HashMap;
use std::path::Path;

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::{Schema, TableDef};
use crate::error::{Error, Result};
use crate::value::{LogicalType, Value};

/// Bookkeeping overhead reported per packed column on top of the packed
/// payload: width tag plus row count.
pub const PACKED_COLUMN_METADATA_BYTES: u64 = 16;

/// Reported size of a packed column: `ceil(rows * pbw / 8)` payload bytes
/// plus the fixed metadata overhead.
pub fn packed_column_bytes(rows: u64, pbw: u32) -> u64 {
    (rows * pbw as u64).div_ceil(8) + PACKED_COLUMN_METADATA_BYTES
}

/// Validity bitmap; bit set means the row is non-NULL.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NullBitmap {
    words: Vec<u64>,
    len: usize,
}

impl NullBitmap {
    pub fn new() -> Self {
        NullBitmap { words: Vec::new(), len: 0 }
    }

    pub fn all_valid(len: usize) -> Self {
        let mut b = NullBitmap::new();
        for _ in 0..len {
            b.push(true);
        }
        b
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn push(&mut self, valid: bool) {
        let word = self.len / 64;
        if word >= self.words.len() {
            self.words.push(0);
        }
        if valid {
            self.words[word] |= 1u64 << (self.len % 64);
        }
        self.len += 1;
    }

    pub fn is_valid(&self, idx: usize) -> bool {
        debug_assert!(idx < self.len);
        self.words[idx / 64] >> (idx % 64) & 1 == 1
    }

    pub fn set(&mut self, idx: usize, valid: bool) {
        debug_assert!(idx < self.len);
        let mask = 1u64 << (idx % 64);
        if valid {
            self.words[idx / 64] |= mask;
        } else {
            self.words[idx / 64] &= !mask;
        }
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn from_words(words: Vec<u64>, len: usize) -> Self {
        NullBitmap { words, len }
    }
}

impl Default for NullBitmap {
    fn default() -> Self {
        Self::new()
    }
}

/// Fixed-width packed column. Every stored value is an unsigned integer
/// strictly below `2^pbw`; widths from 1 to 64 bits are supported.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackedColumn {
    pbw: u32,
    len: usize,
    words: Vec<u64>,
}

impl PackedColumn {
    pub fn new(pbw: u32) -> Self {
        assert!((1..=64).contains(&pbw), "packed width must be in 1..=64");
        PackedColumn { pbw, len: 0, words: Vec::new() }
    }

    pub fn pbw(&self) -> u32 {
        self.pbw
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    fn value_mask(&self) -> u64 {
        if self.pbw == 64 {
            u64::MAX
        } else {
            (1u64 << self.pbw) - 1
        }
    }

    pub fn push(&mut self, value: u64) {
        assert!(
            value <= self.value_mask(),
            "value {value} does not fit in {} bits",
            self.pbw
        );
        let bit = self.len * self.pbw as usize;
        let need_words = (bit + self.pbw as usize).div_ceil(64);
        while self.words.len() < need_words {
            self.words.push(0);
        }
        let word = bit / 64;
        let shift = bit % 64;
        self.words[word] |= value << shift;
        let spill = 64 - shift;
        if (self.pbw as usize) > spill {
            self.words[word + 1] |= value >> spill;
        }
        self.len += 1;
    }

    pub fn get(&self, idx: usize) -> u64 {
        debug_assert!(idx < self.len);
        let bit = idx * self.pbw as usize;
        let word = bit / 64;
        let shift = bit % 64;
        let mut v = self.words[word] >> shift;
        let spill = 64 - shift;
        if (self.pbw as usize) > spill {
            v |= self.words[word + 1] << spill;
        }
        v & self.value_mask()
    }

    pub fn set(&mut self, idx: usize, value: u64) {
        debug_assert!(idx < self.len);
        assert!(value <= self.value_mask());
        let bit = idx * self.pbw as usize;
        let word = bit / 64;
        let shift = bit % 64;
        let mask = self.value_mask();
        self.words[word] &= !(mask << shift);
        self.words[word] |= value << shift;
        let spill = 64 - shift;
        if (self.pbw as usize) > spill {
            self.words[word + 1] &= !(mask >> spill);
            self.words[word + 1] |= value >> spill;
        }
    }

    /// Reported size per the space formula.
    pub fn reported_bytes(&self) -> u64 {
        packed_column_bytes(self.len as u64, self.pbw)
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn from_words(pbw: u32, len: usize, words: Vec<u64>) -> Self {
        PackedColumn { pbw, len, words }
    }
}

/// One column of a table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Column {
    Int64 { values: Vec<i64>, nulls: NullBitmap },
    Str { values: Vec<String>, nulls: NullBitmap },
    Packed(PackedColumn),
}

impl Column {
    pub fn new_int64() -> Self {
        Column::Int64 { values: Vec::new(), nulls: NullBitmap::new() }
    }

    pub fn new_str() -> Self {
        Column::Str { values: Vec::new(), nulls: NullBitmap::new() }
    }

    pub fn len(&self) -> usize {
        match self {
            Column::Int64 { values, .. } => values.len(),
            Column::Str { values, .. } => values.len(),
            Column::Packed(p) => p.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn logical_type(&self) -> Option<LogicalType> {
        match self {
            Column::Int64 { .. } => Some(LogicalType::Int64),
            Column::Str { .. } => Some(LogicalType::String),
            Column::Packed(_) => None,
        }
    }

    pub fn is_null(&self, idx: usize) -> bool {
        match self {
            Column::Int64 { nulls, .. } | Column::Str { nulls, .. } => !nulls.is_valid(idx),
            Column::Packed(_) => false,
        }
    }

    pub fn value(&self, idx: usize) -> Value {
        match self {
            Column::Int64 { values, nulls } => {
                if nulls.is_valid(idx) {
                    Value::Int(values[idx])
                } else {
                    Value::Null
                }
            }
            Column::Str { values, nulls } => {
                if nulls.is_valid(idx) {
                    Value::Str(values[idx].clone())
                } else {
                    Value::Null
                }
            }
            Column::Packed(p) => Value::Int(p.get(idx) as i64),
        }
    }

    pub fn int_at(&self, idx: usize) -> Option<i64> {
        match self {
            Column::Int64 { values, nulls } => nulls.is_valid(idx).then(|| values[idx]),
            _ => None,
        }
    }

    pub fn str_at(&self, idx: usize) -> Option<&str> {
        match self {
            Column::Str { values, nulls } => nulls.is_valid(idx).then(|| values[idx].as_str()),
            _ => None,
        }
    }

    pub fn push_value(&mut self, v: &Value) -> Result<()> {
        match (self, v) {
            (Column::Int64 { values, nulls }, Value::Int(x)) => {
                values.push(*x);
                nulls.push(true);
            }
            (Column::Int64 { values, nulls }, Value::Null) => {
                values.push(0);
                nulls.push(false);
            }
            (Column::Str { values, nulls }, Value::Str(s)) => {
                values.push(s.clone());
                nulls.push(true);
            }
            (Column::Str { values, nulls }, Value::Null) => {
                values.push(String::new());
                nulls.push(false);
            }
            (Column::Packed(p), Value::Int(x)) if *x >= 0 => {
                p.push(*x as u64);
            }
            _ => {
                return Err(Error::Schema(format!(
                    "value {v} does not fit the column type"
                )))
            }
        }
        Ok(())
    }

    pub fn set_value(&mut self, idx: usize, v: &Value) -> Result<()> {
        match (self, v) {
            (Column::Int64 { values, nulls }, Value::Int(x)) => {
                values[idx] = *x;
                nulls.set(idx, true);
            }
            (Column::Int64 { values, nulls }, Value::Null) => {
                values[idx] = 0;
                nulls.set(idx, false);
            }
            (Column::Str { values, nulls }, Value::Str(s)) => {
                values[idx] = s.clone();
                nulls.set(idx, true);
            }
            (Column::Str { values, nulls }, Value::Null) => {
                values[idx] = String::new();
                nulls.set(idx, false);
            }
            (Column::Packed(p), Value::Int(x)) if *x >= 0 => {
                p.set(idx, *x as u64);
            }
            _ => {
                return Err(Error::Schema(format!(
                    "value {v} does not fit the column type"
                )))
            }
        }
        Ok(())
    }

    pub fn as_packed(&self) -> Option<&PackedColumn> {
        match self {
            Column::Packed(p) => Some(p),
            _ => None,
        }
    }

    pub fn as_packed_mut(&mut self) -> Option<&mut PackedColumn> {
        match self {
            Column::Packed(p) => Some(p),
            _ => None,
        }
    }
}

/// Index over a key column. Strict construction fails on duplicates;
/// the relaxed variant keeps every row per key.
#[derive(Debug, Clone)]
pub enum KeyIndex {
    Unique(HashMap<Value, usize>),
    Multi(HashMap<Value, Vec<usize>>),
}

impl KeyIndex {
    pub fn rows_for<'a>(&'a self, key: &Value) -> &'a [usize] {
        match self {
            KeyIndex::Unique(m) => m
                .get(key)
                .map(std::slice::from_ref)
                .unwrap_or(&[]),
            KeyIndex::Multi(m) => m.get(key).map(|v| v.as_slice()).unwrap_or(&[]),
        }
    }

    pub fn contains(&self, key: &Value) -> bool {
        !self.rows_for(key).is_empty()
    }
}

/// A named table: ordered columns plus a row count shared by all of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableData {
    pub name: String,
    pub columns: IndexMap<String, Column>,
    pub row_count: usize,
}

impl TableData {
    pub fn new(name: &str) -> Self {
        TableData {
            name: name.to_string(),
            columns: IndexMap::new(),
            row_count: 0,
        }
    }

    /// Creates an empty table with the plain columns declared in `def`.
    pub fn from_def(def: &TableDef) -> Self {
        let mut t = TableData::new(&def.name);
        for col in &def.columns {
            let c = match col.column_type {
                LogicalType::Int64 => Column::new_int64(),
                LogicalType::String => Column::new_str(),
            };
            t.columns.insert(col.name.clone(), c);
        }
        t
    }

    pub fn column(&self, name: &str) -> Result<&Column> {
        self.columns.get(name).ok_or_else(|| Error::UnknownColumn {
            table: self.name.clone(),
            column: name.to_string(),
        })
    }

    pub fn column_mut(&mut self, name: &str) -> Result<&mut Column> {
        let table = self.name.clone();
        self.columns.get_mut(name).ok_or_else(|| Error::UnknownColumn {
            table,
            column: name.to_string(),
        })
    }

    pub fn add_column(&mut self, name: &str, column: Column) -> Result<()> {
        if column.len() != self.row_count {
            return Err(Error::Schema(format!(
                "column '{name}' has {} rows, table '{}' has {}",
                column.len(),
                self.name,
                self.row_count
            )));
        }
        self.columns.insert(name.to_string(), column);
        Ok(())
    }

    pub fn drop_column(&mut self, name: &str) {
        self.columns.shift_remove(name);
    }

    /// Appends one row given values for a subset of columns; the row must
    /// cover every column of the table.
    pub fn push_row(&mut self, row: &[(&str, Value)]) -> Result<()> {
        for (name, value) in row {
            self.column_mut(name)?.push_value(value)?;
        }
        self.row_count += 1;
        for (name, col) in &self.columns {
            if col.len() != self.row_count {
                return Err(Error::Schema(format!(
                    "row push left column '{name}' of '{}' at {} rows, expected {}",
                    self.name,
                    col.len(),
                    self.row_count
                )));
            }
        }
        Ok(())
    }

    /// Builds a key index over `column`. `strict` rejects duplicate keys and
    /// names the first offender; NULL keys are rejected in both modes.
    pub fn key_index(&self, column: &str, strict: bool) -> Result<KeyIndex> {
        let col = self.column(column)?;
        if strict {
            let mut map: HashMap<Value, usize> = HashMap::with_capacity(self.row_count);
            for row in 0..self.row_count {
                let key = col.value(row);
                if key.is_null() {
                    return Err(Error::Schema(format!(
                        "NULL key in row {row} of '{}.{column}'",
                        self.name
                    )));
                }
                if let Some(_prev) = map.insert(key.clone(), row) {
                    return Err(Error::DuplicateKey {
                        table: self.name.clone(),
                        column: column.to_string(),
                        key: key.to_string(),
                    });
                }
            }
            Ok(KeyIndex::Unique(map))
        } else {
            let mut map: HashMap<Value, Vec<usize>> = HashMap::with_capacity(self.row_count);
            for row in 0..self.row_count {
                let key = col.value(row);
                if key.is_null() {
                    return Err(Error::Schema(format!(
                        "NULL key in row {row} of '{}.{column}'",
                        self.name
                    )));
                }
                map.entry(key).or_default().push(row);
            }
            Ok(KeyIndex::Multi(map))
        }
    }
}

/// Draws `min(m, row_count)` distinct row indices uniformly without
/// replacement. The result is sorted ascending and is a pure function of
/// `(seed, m, row_count)`.
pub fn sample_rows(table: &TableData, m: usize, seed: u64) -> Vec<usize> {
    let n = table.row_count;
    let amount = m.min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, n, amount).into_vec();
    picked.sort_unstable();
    picked
}

/// Reads `path` as CSV into a fresh table shaped by `def`. The header row
/// must name exactly the declared columns (any order). An empty field is
/// NULL for nullable columns and an error otherwise. Data rows are numbered
/// from 1.
pub fn ingest_csv(schema: &Schema, table: &str, path: &Path) -> Result<TableData> {
    let def = schema.table(table)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)
        .map_err(|e| Error::CsvRead { table: table.to_string(), message: e.to_string() })?;

    let headers = reader
        .headers()
        .map_err(|e| Error::CsvRead { table: table.to_string(), message: e.to_string() })?
        .clone();
    let mut slot_of = vec![usize::MAX; def.columns.len()];
    for (pos, header) in headers.iter().enumerate() {
        let idx = def
            .columns
            .iter()
            .position(|c| c.name == header)
            .ok_or_else(|| Error::CsvRead {
                table: table.to_string(),
                message: format!("header names unknown column '{header}'"),
            })?;
        if slot_of[idx] != usize::MAX {
            return Err(Error::CsvRead {
                table: table.to_string(),
                message: format!("header repeats column '{header}'"),
            });
        }
        slot_of[idx] = pos;
    }
    if let Some(missing) = slot_of.iter().position(|s| *s == usize::MAX) {
        return Err(Error::CsvRead {
            table: table.to_string(),
            message: format!("header is missing column '{}'", def.columns[missing].name),
        });
    }

    let mut data = TableData::from_def(def);
    for (i, record) in reader.records().enumerate() {
        let row_no = i + 1;
        let record = record.map_err(|e| Error::CsvRead {
            table: table.to_string(),
            message: format!("row {row_no}: {e}"),
        })?;
        for (col_idx, col_def) in def.columns.iter().enumerate() {
            let field = &record[slot_of[col_idx]];
            let value = if field.is_empty() {
                if !col_def.nullable {
                    return Err(Error::Ingest {
                        table: table.to_string(),
                        row: row_no,
                        column: col_def.name.clone(),
                        message: "empty field in non-nullable column".to_string(),
                    });
                }
                Value::Null
            } else {
                match col_def.column_type {
                    LogicalType::Int64 => {
                        let v: i64 = field.parse().map_err(|_| Error::Ingest {
                            table: table.to_string(),
                            row: row_no,
                            column: col_def.name.clone(),
                            message: format!("cannot parse '{field}' as int64"),
                        })?;
                        Value::Int(v)
                    }
                    LogicalType::String => Value::Str(field.to_string()),
                }
            };
            data.columns[col_idx].push_value(&value)?;
        }
        data.row_count += 1;
    }
    Ok(data)
}
