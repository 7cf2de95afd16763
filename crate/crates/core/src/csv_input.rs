//! CSV ingestion.
//!
//! A first pass over the file validates every used cell and fixes the column
//! layout: which columns are categorical and in which order their levels were
//! first seen. Categorical columns become indicator columns with the
//! first-seen level dropped as reference.
//!
//! In [`StorageMode::InMemory`] a second pass materializes the whole design.
//! In [`StorageMode::Indexed`] only the byte offset of every record is kept;
//! rows are read back on demand, so memory stays proportional to the rows a
//! single subsample needs.

use std::collections::HashMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use csv::{Position, ReaderBuilder, StringRecord};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, RowSource};
use crate::error::{Error, Result};

pub const INTERCEPT_NAME: &str = "(intercept)";
const BLOCK_ROWS: usize = 16_384;

#[derive(Debug, Clone, PartialEq)]
pub enum Covariates {
    /// Every column except the response.
    AllOthers,
    Named(Vec<String>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsvSchema {
    pub response: String,
    pub covariates: Covariates,
    /// Columns treated as categorical even if their values parse as numbers.
    pub categorical: Vec<String>,
    /// Prepend a constant column named `(intercept)`.
    pub intercept: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StorageMode {
    #[default]
    InMemory,
    Indexed,
}

/// Level order of one categorical column; the first level is the reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalLevels {
    pub column: String,
    pub levels: Vec<String>,
}

#[derive(Debug, Clone)]
enum Kind {
    Numeric,
    Categorical {
        levels: Vec<String>,
        codes: HashMap<String, usize>,
    },
}

#[derive(Debug, Clone)]
struct Column {
    index: usize,
    name: String,
    kind: Kind,
}

#[derive(Debug, Clone)]
struct Layout {
    n_fields: usize,
    response: usize,
    response_name: String,
    columns: Vec<Column>,
    intercept: bool,
    names: Vec<String>,
}

fn parse_number(cell: &str, row: usize, column: &str) -> Result<f64> {
    let cell_err = |message: String| Error::Cell {
        row,
        column: column.to_string(),
        message,
    };
    let t = cell.trim();
    if t.is_empty() {
        return Err(cell_err("missing value".into()));
    }
    match t.parse::<f64>() {
        Ok(v) if v.is_nan() => Err(cell_err("NaN value".into())),
        Ok(v) if !v.is_finite() => Err(cell_err(format!("non-finite value {t:?}"))),
        Ok(v) => Ok(v),
        Err(_) => Err(cell_err(format!("cannot parse {t:?} as a number"))),
    }
}

impl Layout {
    fn from_header(header: &StringRecord, schema: &CsvSchema) -> Result<Self> {
        let position = |name: &str| {
            header
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| Error::config(format!("column {name:?} not found in header")))
        };
        let response = position(&schema.response)?;
        let chosen: Vec<usize> = match &schema.covariates {
            Covariates::AllOthers => (0..header.len()).filter(|&i| i != response).collect(),
            Covariates::Named(names) => {
                let mut idx = Vec::with_capacity(names.len());
                for n in names {
                    let i = position(n)?;
                    if i == response {
                        return Err(Error::config(format!("{n:?} is the response column")));
                    }
                    if idx.contains(&i) {
                        return Err(Error::config(format!("covariate {n:?} listed twice")));
                    }
                    idx.push(i);
                }
                idx
            }
        };
        for c in &schema.categorical {
            let i = position(c)?;
            if !chosen.contains(&i) {
                return Err(Error::config(format!(
                    "categorical column {c:?} is not a covariate"
                )));
            }
        }
        if chosen.is_empty() && !schema.intercept {
            return Err(Error::config("no covariates selected"));
        }
        let columns = chosen
            .into_iter()
            .map(|index| {
                let name = header[index].trim().to_string();
                let kind = if schema.categorical.contains(&name) {
                    Kind::Categorical {
                        levels: Vec::new(),
                        codes: HashMap::new(),
                    }
                } else {
                    Kind::Numeric
                };
                Column { index, name, kind }
            })
            .collect();
        Ok(Self {
            n_fields: header.len(),
            response,
            response_name: header[response].trim().to_string(),
            columns,
            intercept: schema.intercept,
            names: Vec::new(),
        })
    }

    /// Validates one record during the scan, growing level lists. A column
    /// whose first value is not numeric is treated as categorical.
    fn scan(&mut self, rec: &StringRecord, row: usize) -> Result<()> {
        self.check_width(rec, row)?;
        parse_number(&rec[self.response], row, &self.response_name)?;
        for col in &mut self.columns {
            let cell = rec[col.index].trim();
            if row == 0
                && matches!(col.kind, Kind::Numeric)
                && !cell.is_empty()
                && cell.parse::<f64>().is_err()
            {
                col.kind = Kind::Categorical {
                    levels: Vec::new(),
                    codes: HashMap::new(),
                };
            }
            match &mut col.kind {
                Kind::Numeric => {
                    parse_number(cell, row, &col.name)?;
                }
                Kind::Categorical { levels, codes } => {
                    if cell.is_empty() {
                        return Err(Error::Cell {
                            row,
                            column: col.name.clone(),
                            message: "missing value".into(),
                        });
                    }
                    if !codes.contains_key(cell) {
                        codes.insert(cell.to_string(), levels.len());
                        levels.push(cell.to_string());
                    }
                }
            }
        }
        Ok(())
    }

    fn check_width(&self, rec: &StringRecord, row: usize) -> Result<()> {
        if rec.len() != self.n_fields {
            return Err(Error::data(format!(
                "row {row} has {} fields, header has {}",
                rec.len(),
                self.n_fields
            )));
        }
        Ok(())
    }

    fn finish(&mut self) {
        let mut names = Vec::new();
        if self.intercept {
            names.push(INTERCEPT_NAME.to_string());
        }
        for col in &self.columns {
            match &col.kind {
                Kind::Numeric => names.push(col.name.clone()),
                Kind::Categorical { levels, .. } => {
                    names.extend(levels.iter().skip(1).map(|l| format!("{}={l}", col.name)));
                }
            }
        }
        self.names = names;
    }

    fn p(&self) -> usize {
        self.names.len()
    }

    /// Appends the encoded row to `x` and returns the response.
    fn encode(&self, rec: &StringRecord, row: usize, x: &mut Vec<f64>) -> Result<f64> {
        self.check_width(rec, row)?;
        let y = parse_number(&rec[self.response], row, &self.response_name)?;
        if self.intercept {
            x.push(1.0);
        }
        for col in &self.columns {
            let cell = rec[col.index].trim();
            match &col.kind {
                Kind::Numeric => x.push(parse_number(cell, row, &col.name)?),
                Kind::Categorical { levels, codes } => {
                    let code = *codes.get(cell).ok_or_else(|| Error::Cell {
                        row,
                        column: col.name.clone(),
                        message: format!(
                            "level {cell:?} was not present when the file was indexed"
                        ),
                    })?;
                    let start = x.len();
                    x.resize(start + levels.len() - 1, 0.0);
                    if code > 0 {
                        x[start + code - 1] = 1.0;
                    }
                }
            }
        }
        Ok(y)
    }

    fn levels(&self) -> Vec<CategoricalLevels> {
        self.columns
            .iter()
            .filter_map(|c| match &c.kind {
                Kind::Categorical { levels, .. } => Some(CategoricalLevels {
                    column: c.name.clone(),
                    levels: levels.clone(),
                }),
                Kind::Numeric => None,
            })
            .collect()
    }
}

#[derive(Debug)]
enum Storage {
    Memory(Dataset),
    Indexed { path: PathBuf, offsets: Vec<u64> },
}

/// A loaded CSV file, either materialized or indexed on disk.
#[derive(Debug)]
pub struct CsvData {
    layout: Layout,
    storage: Storage,
}

fn reader(path: &Path) -> Result<csv::Reader<BufReader<File>>> {
    let file = File::open(path)?;
    Ok(ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(BufReader::with_capacity(1 << 16, file)))
}

/// Reads the header and validates every row; in indexed mode also records
/// where each row starts.
pub fn load_csv(path: &Path, schema: &CsvSchema, mode: StorageMode) -> Result<CsvData> {
    let mut rdr = reader(path)?;
    let header = rdr.headers()?.clone();
    let mut layout = Layout::from_header(&header, schema)?;
    let mut offsets = Vec::new();
    let mut rec = StringRecord::new();
    let mut row = 0usize;
    loop {
        let pos = rdr.position().clone();
        if !rdr.read_record(&mut rec)? {
            break;
        }
        layout.scan(&rec, row)?;
        if mode == StorageMode::Indexed {
            offsets.push(pos.byte());
        }
        row += 1;
    }
    if row == 0 {
        return Err(Error::data("no data rows"));
    }
    layout.finish();
    let storage = match mode {
        StorageMode::Indexed => Storage::Indexed {
            path: path.to_path_buf(),
            offsets,
        },
        StorageMode::InMemory => {
            let mut rdr = reader(path)?;
            let p = layout.p();
            let mut y = Vec::with_capacity(row);
            let mut x = Vec::with_capacity(row * p);
            for (i, r) in rdr.records().enumerate() {
                y.push(layout.encode(&r?, i, &mut x)?);
            }
            if y.len() != row {
                return Err(Error::data("file changed while it was being read"));
            }
            Storage::Memory(Dataset::with_names(y, x, layout.names.clone())?)
        }
    };
    Ok(CsvData { layout, storage })
}

impl CsvData {
    pub fn levels(&self) -> Vec<CategoricalLevels> {
        self.layout.levels()
    }

    /// Position of the intercept column, if one was added.
    pub fn intercept_position(&self) -> Option<usize> {
        self.layout.intercept.then_some(0)
    }

    pub fn is_indexed(&self) -> bool {
        matches!(self.storage, Storage::Indexed { .. })
    }

    /// The materialized data (in-memory mode only).
    pub fn dataset(&self) -> Option<&Dataset> {
        match &self.storage {
            Storage::Memory(d) => Some(d),
            Storage::Indexed { .. } => None,
        }
    }
}

impl RowSource for CsvData {
    fn n_rows(&self) -> usize {
        match &self.storage {
            Storage::Memory(d) => d.len(),
            Storage::Indexed { offsets, .. } => offsets.len(),
        }
    }

    fn n_covariates(&self) -> usize {
        self.layout.p()
    }

    fn covariate_names(&self) -> Vec<String> {
        self.layout.names.clone()
    }

    fn gather(&self, rows: &[usize]) -> Result<Dataset> {
        let (path, offsets) = match &self.storage {
            Storage::Memory(d) => return d.gather(rows),
            Storage::Indexed { path, offsets } => (path, offsets),
        };
        let file = File::open(path)?;
        let mut rdr = ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(BufReader::with_capacity(1 << 13, file));
        let p = self.layout.p();
        let mut y = Vec::with_capacity(rows.len());
        let mut x = Vec::with_capacity(rows.len() * p);
        let mut rec = StringRecord::new();
        for &r in rows {
            let offset = *offsets
                .get(r)
                .ok_or_else(|| Error::data(format!("row {r} out of range")))?;
            let mut pos = Position::new();
            pos.set_byte(offset);
            rdr.seek(pos)?;
            if !rdr.read_record(&mut rec)? {
                return Err(Error::data(format!("row {r} vanished from the file")));
            }
            y.push(self.layout.encode(&rec, r, &mut x)?);
        }
        Dataset::with_names(y, x, self.layout.names.clone())
    }

    fn for_each_block(&self, f: &mut dyn FnMut(&Dataset) -> Result<()>) -> Result<()> {
        if let Storage::Memory(d) = &self.storage {
            return f(d);
        }
        let mut rdr = reader(match &self.storage {
            Storage::Indexed { path, .. } => path,
            Storage::Memory(_) => unreachable!(),
        })?;
        let p = self.layout.p();
        let mut y = Vec::with_capacity(BLOCK_ROWS);
        let mut x = Vec::with_capacity(BLOCK_ROWS * p);
        let mut rec = StringRecord::new();
        let mut row = 0;
        while rdr.read_record(&mut rec)? {
            y.push(self.layout.encode(&rec, row, &mut x)?);
            row += 1;
            if y.len() == BLOCK_ROWS {
                f(&Dataset::with_names(
                    std::mem::take(&mut y),
                    std::mem::take(&mut x),
                    self.layout.names.clone(),
                )?)?;
            }
        }
        if !y.is_empty() {
            f(&Dataset::with_names(y, x, self.layout.names.clone())?)?;
        }
        Ok(())
    }
}
