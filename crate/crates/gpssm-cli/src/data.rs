//! CSV ingestion with a small named-column schema: `t` (optional
//! timestamps), `u*` (inputs), `y*` (outputs). Unrecognized columns are
//! ignored but recorded. Every parse failure names the offending line.

use std::fs;
use std::path::Path;

use nalgebra::DVector;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} is empty")]
    Empty { path: String },
    #[error("no output (y) columns in header {header:?}")]
    NoOutputs { header: String },
    #[error("duplicate column name {name:?}")]
    DuplicateColumn { name: String },
    #[error("line {line}: expected {expected} fields, found {found}")]
    Ragged {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}, column {column:?}: cannot parse {value:?} as a number")]
    NonNumeric {
        line: usize,
        column: String,
        value: String,
    },
    #[error("line {line}, column {column:?}: non-finite value")]
    NonFinite { line: usize, column: String },
    #[error("expected {expected} {what} columns, found {found}")]
    WrongColumnCount {
        what: &'static str,
        expected: usize,
        found: usize,
    },
}

/// Column-count expectations, checked after parsing when set.
#[derive(Debug, Clone, Copy, Default)]
pub struct CsvSchema {
    pub expect_inputs: Option<usize>,
    pub expect_outputs: Option<usize>,
}

/// A rectangular, finite dataset.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub time: Option<Vec<f64>>,
    pub inputs: Option<Vec<DVector<f64>>>,
    pub observations: Vec<DVector<f64>>,
    pub input_names: Vec<String>,
    pub output_names: Vec<String>,
    /// Header names that matched no schema column.
    pub ignored_columns: Vec<String>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_names.len()
    }

    pub fn obs_dim(&self) -> usize {
        self.output_names.len()
    }

    /// Writes the dataset back out in the same schema.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        let mut header: Vec<String> = Vec::new();
        if self.time.is_some() {
            header.push("t".to_string());
        }
        header.extend(self.input_names.iter().cloned());
        header.extend(self.output_names.iter().cloned());
        writeln!(w, "{}", header.join(","))?;
        for i in 0..self.len() {
            let mut fields: Vec<String> = Vec::new();
            if let Some(time) = &self.time {
                fields.push(format!("{:?}", time[i]));
            }
            if let Some(inputs) = &self.inputs {
                fields.extend(inputs[i].iter().map(|v| format!("{v:?}")));
            }
            fields.extend(self.observations[i].iter().map(|v| format!("{v:?}")));
            writeln!(w, "{}", fields.join(","))?;
        }
        Ok(())
    }
}

enum ColumnKind {
    Time,
    Input(usize),
    Output(usize),
    Ignored,
}

fn classify(name: &str) -> ColumnKind {
    let trimmed = name.trim();
    if trimmed == "t" {
        return ColumnKind::Time;
    }
    for (prefix, make) in [
        ("u", ColumnKind::Input as fn(usize) -> ColumnKind),
        ("y", ColumnKind::Output as fn(usize) -> ColumnKind),
    ] {
        if let Some(rest) = trimmed.strip_prefix(prefix) {
            if rest.is_empty() {
                return make(1);
            }
            if rest.chars().all(|c| c.is_ascii_digit()) {
                if let Ok(k) = rest.parse::<usize>() {
                    if k >= 1 {
                        return make(k);
                    }
                }
            }
        }
    }
    ColumnKind::Ignored
}

/// Parses a CSV file against the `t, u*, y*` schema.
pub fn load_csv(path: &Path, schema: CsvSchema) -> Result<Dataset, DataError> {
    let text = fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_csv(&text, schema, &path.display().to_string())
}

fn parse_csv(text: &str, schema: CsvSchema, path: &str) -> Result<Dataset, DataError> {
    let mut lines = text.lines();
    let header_line = lines.next().ok_or_else(|| DataError::Empty {
        path: path.to_string(),
    })?;
    let names: Vec<String> = header_line.split(',').map(|s| s.trim().to_string()).collect();

    let mut time_col: Option<usize> = None;
    let mut input_cols: Vec<(usize, usize, String)> = Vec::new(); // (order key, col idx, name)
    let mut output_cols: Vec<(usize, usize, String)> = Vec::new();
    let mut ignored: Vec<String> = Vec::new();
    for (idx, name) in names.iter().enumerate() {
        match classify(name) {
            ColumnKind::Time => {
                if time_col.is_some() {
                    return Err(DataError::DuplicateColumn { name: name.clone() });
                }
                time_col = Some(idx);
            }
            ColumnKind::Input(k) => input_cols.push((k, idx, name.clone())),
            ColumnKind::Output(k) => output_cols.push((k, idx, name.clone())),
            ColumnKind::Ignored => ignored.push(name.clone()),
        }
    }
    for cols in [&mut input_cols, &mut output_cols] {
        cols.sort_by_key(|(k, _, _)| *k);
        for w in cols.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(DataError::DuplicateColumn {
                    name: w[1].2.clone(),
                });
            }
        }
    }
    if output_cols.is_empty() {
        return Err(DataError::NoOutputs {
            header: header_line.to_string(),
        });
    }
    if let Some(expected) = schema.expect_inputs {
        if input_cols.len() != expected {
            return Err(DataError::WrongColumnCount {
                what: "input",
                expected,
                found: input_cols.len(),
            });
        }
    }
    if let Some(expected) = schema.expect_outputs {
        if output_cols.len() != expected {
            return Err(DataError::WrongColumnCount {
                what: "output",
                expected,
                found: output_cols.len(),
            });
        }
    }

    let mut time = time_col.map(|_| Vec::new());
    let mut inputs: Vec<DVector<f64>> = Vec::new();
    let mut observations: Vec<DVector<f64>> = Vec::new();
    for (i, raw) in lines.enumerate() {
        let line_no = i + 2;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != names.len() {
            return Err(DataError::Ragged {
                line: line_no,
                expected: names.len(),
                found: fields.len(),
            });
        }
        let parse = |idx: usize, column: &str| -> Result<f64, DataError> {
            let value = fields[idx].trim();
            let parsed: f64 = value.parse().map_err(|_| DataError::NonNumeric {
                line: line_no,
                column: column.to_string(),
                value: value.to_string(),
            })?;
            if !parsed.is_finite() {
                return Err(DataError::NonFinite {
                    line: line_no,
                    column: column.to_string(),
                });
            }
            Ok(parsed)
        };
        if let (Some(t), Some(idx)) = (&mut time, time_col) {
            t.push(parse(idx, "t")?);
        }
        if !input_cols.is_empty() {
            let mut u = DVector::zeros(input_cols.len());
            for (slot, (_, idx, name)) in input_cols.iter().enumerate() {
                u[slot] = parse(*idx, name)?;
            }
            inputs.push(u);
        }
        let mut y = DVector::zeros(output_cols.len());
        for (slot, (_, idx, name)) in output_cols.iter().enumerate() {
            y[slot] = parse(*idx, name)?;
        }
        observations.push(y);
    }
    if observations.is_empty() {
        return Err(DataError::Empty {
            path: path.to_string(),
        });
    }
    Ok(Dataset {
        time,
        inputs: if input_cols.is_empty() {
            None
        } else {
            Some(inputs)
        },
        observations,
        input_names: input_cols.into_iter().map(|(_, _, n)| n).collect(),
        output_names: output_cols.into_iter().map(|(_, _, n)| n).collect(),
        ignored_columns: ignored,
    })
}
