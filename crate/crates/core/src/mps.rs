//! MPS / QPS reader and writer.
//!
//! The reader keeps the file's rows and columns as they are ([`MpsProblem`]);
//! conversion to the solver's standard form lives in [`crate::model`].

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::MultiGzDecoder;
use thiserror::Error;

use crate::model::QpModel;
use crate::sparse::CscMatrix;

#[derive(Debug, Error)]
pub enum MpsError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: malformed section header `{header}`")]
    MalformedSection { line: usize, header: String },
    #[error("line {line}: column `{col}` appears twice in row `{row}`")]
    DuplicateEntry { line: usize, row: String, col: String },
    #[error("line {line}: unknown bound key `{key}`")]
    UnknownBoundKey { line: usize, key: String },
    #[error("line {line}: unknown row type `{kind}`")]
    UnknownRowType { line: usize, kind: String },
    #[error("line {line}: unknown row `{name}`")]
    UnknownRow { line: usize, name: String },
    #[error("line {line}: unknown column `{name}`")]
    UnknownColumn { line: usize, name: String },
    #[error("line {line}: invalid number `{text}`")]
    BadNumber { line: usize, text: String },
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("quadratic matrix is not symmetric at ({row}, {col})")]
    NonSymmetric { row: String, col: String },
    #[error("no objective row")]
    NoObjective,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    Eq,
    Le,
    Ge,
    Free,
}

/// A problem exactly as stated in the file.
#[derive(Debug, Clone)]
pub struct MpsProblem {
    pub name: String,
    pub objective_name: String,
    pub maximize: bool,
    pub row_names: Vec<String>,
    pub row_kinds: Vec<RowKind>,
    pub col_names: Vec<String>,
    /// Constraint matrix without the objective row.
    pub a: CscMatrix,
    pub c: Vec<f64>,
    /// Constant term of the objective.
    pub obj_constant: f64,
    pub rhs: Vec<f64>,
    pub ranges: Vec<Option<f64>>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Quadratic term as (i, j, v) with i >= j; the objective carries ½·xᵀQx.
    pub q_lower: Vec<(usize, usize, f64)>,
}

impl MpsProblem {
    pub fn nrows(&self) -> usize {
        self.row_names.len()
    }
    pub fn ncols(&self) -> usize {
        self.col_names.len()
    }

    /// Row activity bounds `[lo, hi]` after applying RANGES.
    pub fn row_bounds(&self, i: usize) -> (f64, f64) {
        let r = self.rhs[i];
        let inf = f64::INFINITY;
        match (self.row_kinds[i], self.ranges[i]) {
            (RowKind::Free, _) => (-inf, inf),
            (RowKind::Eq, None) => (r, r),
            (RowKind::Eq, Some(v)) if v >= 0.0 => (r, r + v),
            (RowKind::Eq, Some(v)) => (r + v, r),
            (RowKind::Le, None) => (-inf, r),
            (RowKind::Le, Some(v)) => (r - v.abs(), r),
            (RowKind::Ge, None) => (r, inf),
            (RowKind::Ge, Some(v)) => (r, r + v.abs()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Section {
    None,
    Rows,
    Columns,
    Rhs,
    Ranges,
    Bounds,
    QuadObj,
    QMatrix,
    ObjSense,
    End,
}

fn parse_num(line: usize, s: &str) -> Result<f64, MpsError> {
    let t = s.trim();
    let v: f64 = t.parse().map_err(|_| MpsError::BadNumber {
        line,
        text: t.to_string(),
    })?;
    if v.is_nan() {
        return Err(MpsError::BadNumber {
            line,
            text: t.to_string(),
        });
    }
    // Common sentinels for infinity.
    Ok(if v >= 1e30 {
        f64::INFINITY
    } else if v <= -1e30 {
        f64::NEG_INFINITY
    } else {
        v
    })
}

fn fixed_field(line: &str, start: usize, end: usize) -> &str {
    let len = line.len();
    if start >= len {
        return "";
    }
    line.get(start..end.min(len)).unwrap_or("").trim()
}

fn fixed_fields(line: &str) -> Vec<&str> {
    [(1, 3), (4, 12), (14, 22), (24, 36), (39, 47), (49, 61)]
        .iter()
        .map(|&(a, b)| fixed_field(line, a, b))
        .collect()
}

/// Decides from a COLUMNS card whether the file uses fixed column positions,
/// which matters only when names contain blanks.
fn looks_fixed(line: &str) -> bool {
    let f = fixed_fields(line);
    let fixed: Vec<&str> = f[1..].iter().copied().filter(|s| !s.is_empty()).collect();
    let free: Vec<&str> = line.split_whitespace().collect();
    if fixed == free || !line.is_ascii() {
        return false;
    }
    let blanks = |a: usize, b: usize| line.get(a..b.min(line.len())).is_none_or(|s| s.trim().is_empty());
    blanks(0, 4) && blanks(12, 14) && blanks(22, 24) && f[3].parse::<f64>().is_ok()
}

struct Parser {
    name: String,
    objective_name: Option<String>,
    maximize: bool,
    row_names: Vec<String>,
    row_kinds: Vec<RowKind>,
    row_map: HashMap<String, usize>,
    col_names: Vec<String>,
    col_map: HashMap<String, usize>,
    entries: HashMap<(usize, usize), f64>,
    triplets: Vec<(usize, usize, f64)>,
    c: Vec<f64>,
    obj_constant: f64,
    rhs: Vec<f64>,
    ranges: Vec<Option<f64>>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    lower_set: Vec<bool>,
    quad: HashMap<(usize, usize), f64>,
    rhs_set: Option<String>,
    range_set: Option<String>,
    bound_set: Option<String>,
    fixed: Option<bool>,
    warned_integer: bool,
}

/// Row reference inside COLUMNS / RHS / RANGES: objective or constraint index.
enum RowRef {
    Objective,
    Row(usize),
    Ignored,
}

impl Parser {
    fn new() -> Self {
        Parser {
            name: String::new(),
            objective_name: None,
            maximize: false,
            row_names: Vec::new(),
            row_kinds: Vec::new(),
            row_map: HashMap::new(),
            col_names: Vec::new(),
            col_map: HashMap::new(),
            entries: HashMap::new(),
            triplets: Vec::new(),
            c: Vec::new(),
            obj_constant: 0.0,
            rhs: Vec::new(),
            ranges: Vec::new(),
            lower: Vec::new(),
            upper: Vec::new(),
            lower_set: Vec::new(),
            quad: HashMap::new(),
            rhs_set: None,
            range_set: None,
            bound_set: None,
            fixed: None,
            warned_integer: false,
        }
    }

    fn row_ref(&self, line: usize, name: &str) -> Result<RowRef, MpsError> {
        if Some(name) == self.objective_name.as_deref() {
            return Ok(RowRef::Objective);
        }
        match self.row_map.get(name) {
            Some(&i) if self.row_kinds[i] == RowKind::Free => Ok(RowRef::Ignored),
            Some(&i) => Ok(RowRef::Row(i)),
            None => Err(MpsError::UnknownRow {
                line,
                name: name.to_string(),
            }),
        }
    }

    fn col_index(&self, line: usize, name: &str) -> Result<usize, MpsError> {
        self.col_map.get(name).copied().ok_or_else(|| MpsError::UnknownColumn {
            line,
            name: name.to_string(),
        })
    }

    fn fields<'a>(&self, raw: &'a str) -> Vec<&'a str> {
        if self.fixed == Some(true) {
            fixed_fields(raw)[1..].iter().copied().filter(|s| !s.is_empty()).collect()
        } else {
            raw.split_whitespace().collect()
        }
    }

    fn header(&mut self, line: usize, raw: &str) -> Result<Section, MpsError> {
        let mut it = raw.split_whitespace();
        let key = it.next().unwrap_or("");
        let rest: Vec<&str> = it.collect();
        let bad = || MpsError::MalformedSection {
            line,
            header: raw.trim_end().to_string(),
        };
        Ok(match key {
            "NAME" => {
                self.name = raw[4..].trim().to_string();
                Section::None
            }
            "ROWS" => Section::Rows,
            "COLUMNS" => Section::Columns,
            "RHS" => Section::Rhs,
            "RANGES" => Section::Ranges,
            "BOUNDS" => Section::Bounds,
            "QUADOBJ" => Section::QuadObj,
            "QMATRIX" | "QSECTION" => Section::QMatrix,
            "OBJSENSE" => match rest.first() {
                Some(s) => {
                    self.set_sense(line, s)?;
                    Section::None
                }
                None => Section::ObjSense,
            },
            "ENDATA" => Section::End,
            _ => return Err(bad()),
        })
    }

    fn set_sense(&mut self, line: usize, s: &str) -> Result<(), MpsError> {
        self.maximize = match s {
            "MAX" | "MAXIMIZE" => true,
            "MIN" | "MINIMIZE" => false,
            _ => {
                return Err(MpsError::Syntax {
                    line,
                    msg: format!("unknown objective sense `{s}`"),
                })
            }
        };
        Ok(())
    }

    fn rows_card(&mut self, line: usize, f: &[&str]) -> Result<(), MpsError> {
        if f.len() < 2 {
            return Err(MpsError::Syntax {
                line,
                msg: "row card needs a type and a name".into(),
            });
        }
        let kind = match f[0] {
            "E" | "e" => RowKind::Eq,
            "L" | "l" => RowKind::Le,
            "G" | "g" => RowKind::Ge,
            "N" | "n" => RowKind::Free,
            k => {
                return Err(MpsError::UnknownRowType {
                    line,
                    kind: k.to_string(),
                })
            }
        };
        let name = f[1].to_string();
        if kind == RowKind::Free && self.objective_name.is_none() {
            self.objective_name = Some(name);
            return Ok(());
        }
        if self.row_map.contains_key(&name) || Some(&name) == self.objective_name.as_ref() {
            return Err(MpsError::Syntax {
                line,
                msg: format!("row `{name}` declared twice"),
            });
        }
        self.row_map.insert(name.clone(), self.row_names.len());
        self.row_names.push(name);
        self.row_kinds.push(kind);
        self.rhs.push(0.0);
        self.ranges.push(None);
        Ok(())
    }

    fn columns_card(&mut self, line: usize, raw: &str) -> Result<(), MpsError> {
        if raw.contains("'MARKER'") {
            if !self.warned_integer {
                log::warn!("integer markers ignored; variables are treated as continuous");
                self.warned_integer = true;
            }
            return Ok(());
        }
        if self.fixed.is_none() {
            self.fixed = Some(looks_fixed(raw));
        }
        let f = self.fields(raw);
        if f.len() != 3 && f.len() != 5 {
            return Err(MpsError::Syntax {
                line,
                msg: "column card needs 3 or 5 fields".into(),
            });
        }
        let col = match self.col_map.get(f[0]) {
            Some(&j) => j,
            None => {
                let j = self.col_names.len();
                self.col_map.insert(f[0].to_string(), j);
                self.col_names.push(f[0].to_string());
                self.c.push(0.0);
                self.lower.push(0.0);
                self.upper.push(f64::INFINITY);
                self.lower_set.push(false);
                j
            }
        };
        for pair in f[1..].chunks(2) {
            let v = parse_num(line, pair[1])?;
            let dup = || MpsError::DuplicateEntry {
                line,
                row: pair[0].to_string(),
                col: f[0].to_string(),
            };
            match self.row_ref(line, pair[0])? {
                RowRef::Objective => {
                    // Reuse the entry map with a sentinel row to catch duplicates.
                    if self.entries.insert((usize::MAX, col), v).is_some() {
                        return Err(dup());
                    }
                    self.c[col] = v;
                }
                RowRef::Row(i) => {
                    if self.entries.insert((i, col), v).is_some() {
                        return Err(dup());
                    }
                    self.triplets.push((i, col, v));
                }
                RowRef::Ignored => {}
            }
        }
        Ok(())
    }

    /// RHS and RANGES cards: optional set name followed by (row, value) pairs.
    fn vector_card(&mut self, line: usize, f: &[&str], ranges: bool) -> Result<(), MpsError> {
        let (set, pairs) = if f.len() % 2 == 1 { (Some(f[0]), &f[1..]) } else { (None, f) };
        if pairs.is_empty() {
            return Err(MpsError::Syntax {
                line,
                msg: "expected row/value pairs".into(),
            });
        }
        let chosen = if ranges { &mut self.range_set } else { &mut self.rhs_set };
        let set = set.unwrap_or("").to_string();
        match chosen {
            None => *chosen = Some(set),
            Some(s) if *s != set => return Ok(()),
            _ => {}
        }
        for pair in pairs.chunks(2) {
            let v = parse_num(line, pair[1])?;
            match self.row_ref(line, pair[0])? {
                RowRef::Objective if !ranges => self.obj_constant = -v,
                RowRef::Objective | RowRef::Ignored => {}
                RowRef::Row(i) => {
                    if ranges {
                        self.ranges[i] = Some(v);
                    } else {
                        self.rhs[i] = v;
                    }
                }
            }
        }
        Ok(())
    }

    fn bounds_card(&mut self, line: usize, f: &[&str]) -> Result<(), MpsError> {
        if f.len() < 2 {
            return Err(MpsError::Syntax {
                line,
                msg: "bound card needs a key and a column".into(),
            });
        }
        let key = f[0].to_ascii_uppercase();
        let needs_value = match key.as_str() {
            "UP" | "LO" | "FX" | "LI" | "UI" => true,
            "FR" | "MI" | "PL" | "BV" => false,
            _ => {
                return Err(MpsError::UnknownBoundKey {
                    line,
                    key: f[0].to_string(),
                })
            }
        };
        let rest = &f[1..];
        let (set, col, value) = if needs_value {
            match rest.len() {
                3 => (rest[0], rest[1], Some(rest[2])),
                2 => ("", rest[0], Some(rest[1])),
                _ => {
                    return Err(MpsError::Syntax {
                        line,
                        msg: format!("bound `{key}` needs a value"),
                    })
                }
            }
        } else {
            match rest.len() {
                1 => ("", rest[0], None),
                _ => (rest[0], rest[1], None),
            }
        };
        match &self.bound_set {
            None => self.bound_set = Some(set.to_string()),
            Some(s) if s != set => return Ok(()),
            _ => {}
        }
        let j = self.col_index(line, col)?;
        let v = value.map(|s| parse_num(line, s)).transpose()?;
        match key.as_str() {
            "UP" | "UI" => {
                let v = v.unwrap();
                if v < 0.0 && !self.lower_set[j] && self.lower[j] == 0.0 {
                    log::warn!("line {line}: negative upper bound on `{col}` with default lower bound; lower bound set to -inf");
                    self.lower[j] = f64::NEG_INFINITY;
                }
                self.upper[j] = v;
            }
            "LO" | "LI" => {
                self.lower[j] = v.unwrap();
                self.lower_set[j] = true;
            }
            "FX" => {
                self.lower[j] = v.unwrap();
                self.upper[j] = v.unwrap();
                self.lower_set[j] = true;
            }
            "FR" => {
                self.lower[j] = f64::NEG_INFINITY;
                self.upper[j] = f64::INFINITY;
                self.lower_set[j] = true;
            }
            "MI" => {
                self.lower[j] = f64::NEG_INFINITY;
                self.lower_set[j] = true;
            }
            "PL" => self.upper[j] = f64::INFINITY,
            "BV" => {
                log::warn!("line {line}: binary column `{col}` relaxed to [0, 1]");
                self.lower[j] = 0.0;
                self.upper[j] = 1.0;
                self.lower_set[j] = true;
            }
            _ => unreachable!(),
        }
        Ok(())
    }

    fn quad_card(&mut self, line: usize, f: &[&str], full: bool) -> Result<(), MpsError> {
        if f.len() != 3 {
            return Err(MpsError::Syntax {
                line,
                msg: "quadratic card needs two columns and a value".into(),
            });
        }
        let i = self.col_index(line, f[0])?;
        let j = self.col_index(line, f[1])?;
        let v = parse_num(line, f[2])?;
        let key = (i.max(j), i.min(j));
        if full && i != j {
            // Both triangles are listed: the second copy must agree with the first.
            if let Some(&prev) = self.quad.get(&key) {
                if (prev - v).abs() > 1e-12 * prev.abs().max(v.abs()).max(1.0) {
                    return Err(MpsError::NonSymmetric {
                        row: f[0].to_string(),
                        col: f[1].to_string(),
                    });
                }
                return Ok(());
            }
        }
        if self.quad.insert(key, v).is_some() {
            return Err(MpsError::DuplicateEntry {
                line,
                row: f[0].to_string(),
                col: f[1].to_string(),
            });
        }
        Ok(())
    }

    fn finish(self) -> Result<MpsProblem, MpsError> {
        let objective_name = self.objective_name.ok_or(MpsError::NoObjective)?;
        let m = self.row_names.len();
        let n = self.col_names.len();
        let a = CscMatrix::from_triplets(m, n, &self.triplets).expect("indices from name maps");
        let mut q_lower: Vec<_> = self.quad.into_iter().map(|((i, j), v)| (i, j, v)).collect();
        q_lower.sort_by_key(|&(i, j, _)| (j, i));
        Ok(MpsProblem {
            name: self.name,
            objective_name,
            maximize: self.maximize,
            row_names: self.row_names,
            row_kinds: self.row_kinds,
            col_names: self.col_names,
            a,
            c: self.c,
            obj_constant: self.obj_constant,
            rhs: self.rhs,
            ranges: self.ranges,
            lower: self.lower,
            upper: self.upper,
            q_lower,
        })
    }
}

fn first_columns_card(text: &str) -> Option<&str> {
    let mut in_columns = false;
    for raw in text.lines() {
        let raw = raw.trim_end_matches('\r');
        if raw.trim().is_empty() || raw.starts_with('*') {
            continue;
        }
        if !raw.starts_with([' ', '\t']) {
            in_columns = raw.split_whitespace().next() == Some("COLUMNS");
        } else if in_columns && !raw.contains("'MARKER'") {
            return Some(raw);
        }
    }
    None
}

/// Parses MPS text. Fixed and free formats are both accepted.
pub fn parse_mps_str(text: &str) -> Result<MpsProblem, MpsError> {
    let mut p = Parser::new();
    p.fixed = first_columns_card(text).map(looks_fixed);
    let mut section = Section::None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let raw = raw.trim_end_matches('\r');
        if raw.trim().is_empty() || raw.starts_with('*') {
            continue;
        }
        if !raw.starts_with([' ', '\t']) {
            section = p.header(line, raw)?;
            if section == Section::End {
                break;
            }
            continue;
        }
        match section {
            Section::None | Section::End => {
                return Err(MpsError::Syntax {
                    line,
                    msg: "data card outside of a section".into(),
                })
            }
            Section::ObjSense => {
                let s = raw.trim().to_string();
                p.set_sense(line, &s)?;
            }
            Section::Rows => {
                let f: Vec<&str> = if p.fixed == Some(true) {
                    fixed_fields(raw)[..2].iter().copied().filter(|s| !s.is_empty()).collect()
                } else {
                    raw.split_whitespace().collect()
                };
                p.rows_card(line, &f)?;
            }
            Section::Columns => p.columns_card(line, raw)?,
            Section::Rhs | Section::Ranges => {
                let f = p.fields(raw);
                p.vector_card(line, &f, section == Section::Ranges)?;
            }
            Section::Bounds => {
                let f = if p.fixed == Some(true) {
                    fixed_fields(raw).into_iter().filter(|s| !s.is_empty()).collect()
                } else {
                    raw.split_whitespace().collect::<Vec<_>>()
                };
                p.bounds_card(line, &f)?;
            }
            Section::QuadObj | Section::QMatrix => {
                let f = p.fields(raw);
                p.quad_card(line, &f, section == Section::QMatrix)?;
            }
        }
    }
    p.finish()
}

/// Parses raw bytes; gzip input is recognised by its magic number.
pub fn parse_mps_bytes(bytes: &[u8]) -> Result<MpsProblem, MpsError> {
    let text = if bytes.starts_with(&[0x1f, 0x8b]) {
        let mut s = String::new();
        MultiGzDecoder::new(bytes).read_to_string(&mut s)?;
        s
    } else {
        String::from_utf8_lossy(bytes).into_owned()
    };
    parse_mps_str(&text)
}

pub fn read_mps(path: impl AsRef<Path>) -> Result<MpsProblem, MpsError> {
    let bytes = std::fs::read(path.as_ref())?;
    parse_mps_bytes(&bytes)
}

fn fmt_num(v: f64) -> String {
    format!("{v:e}")
}

/// Writes a standard-form model as free MPS: equality rows, nonnegative or free
/// columns, QUADOBJ lower triangle. Reading it back gives the same model.
pub fn write_mps(model: &QpModel, mut w: impl Write) -> std::io::Result<()> {
    let name = if model.name.is_empty() { "MODEL" } else { model.name.as_str() };
    writeln!(w, "NAME {name}")?;
    writeln!(w, "ROWS")?;
    writeln!(w, " N OBJ")?;
    for i in 0..model.m() {
        writeln!(w, " E R{i}")?;
    }
    writeln!(w, "COLUMNS")?;
    for j in 0..model.d() {
        let (rows, vals) = model.a.col(j);
        if model.g[j] != 0.0 {
            writeln!(w, "    X{j} OBJ {}", fmt_num(model.g[j]))?;
        }
        for (&i, &v) in rows.iter().zip(vals) {
            writeln!(w, "    X{j} R{i} {}", fmt_num(v))?;
        }
        if model.g[j] == 0.0 && rows.is_empty() {
            writeln!(w, "    X{j} OBJ 0")?;
        }
    }
    writeln!(w, "RHS")?;
    if model.obj_offset != 0.0 {
        writeln!(w, "    RHS OBJ {}", fmt_num(-model.obj_offset))?;
    }
    for (i, &v) in model.b.iter().enumerate() {
        if v != 0.0 {
            writeln!(w, "    RHS R{i} {}", fmt_num(v))?;
        }
    }
    if model.cone.iter().any(|&c| !c) {
        writeln!(w, "BOUNDS")?;
        for (j, &c) in model.cone.iter().enumerate() {
            if !c {
                writeln!(w, " FR BND X{j}")?;
            }
        }
    }
    if model.h.nnz() > 0 {
        writeln!(w, "QUADOBJ")?;
        for (i, j, v) in model.h.triplets() {
            if i >= j {
                writeln!(w, "    X{j} X{i} {}", fmt_num(v))?;
            }
        }
    }
    writeln!(w, "ENDATA")
}
