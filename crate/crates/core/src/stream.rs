//! Data instances, masks, tumbling-window chunking and record ingestion.

use std::io::{BufRead, BufReader, Read};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One D-dimensional sensor reading. `None` marks a missing attribute.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataInstance {
    pub values: Vec<Option<f64>>,
    pub stream_id: Option<String>,
    pub timestamp: Option<f64>,
}

impl DataInstance {
    pub fn new(values: Vec<Option<f64>>) -> Self {
        Self {
            values,
            stream_id: None,
            timestamp: None,
        }
    }

    pub fn with_timestamp(mut self, t: f64) -> Self {
        self.timestamp = Some(t);
        self
    }

    pub fn with_stream(mut self, id: impl Into<String>) -> Self {
        self.stream_id = Some(id.into());
        self
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn mask(&self) -> Vec<bool> {
        self.values.iter().map(Option::is_some).collect()
    }

    pub fn observed_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_some()).count()
    }
}

/// Binary observed/missing indicator for a chunk: `true` = observed.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskChunk {
    pub bits: Array2<bool>,
}

impl MaskChunk {
    pub fn new(bits: Array2<bool>) -> Self {
        Self { bits }
    }

    /// Observed wherever the value is not NaN.
    pub fn from_values(values: &Array2<f64>) -> Self {
        Self {
            bits: values.mapv(|v| !v.is_nan()),
        }
    }

    pub fn rows(&self) -> usize {
        self.bits.nrows()
    }

    pub fn dim(&self) -> usize {
        self.bits.ncols()
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn row_count(&self, i: usize) -> usize {
        self.bits.row(i).iter().filter(|&&b| b).count()
    }

    pub fn get(&self, i: usize, d: usize) -> bool {
        self.bits[[i, d]]
    }
}

/// All instances that fall into one tumbling window, merged across streams.
#[derive(Clone, Debug, PartialEq)]
pub struct DataChunk {
    pub window_index: u64,
    pub rows: Vec<DataInstance>,
    pub dim: usize,
    /// Fully-missing instances discarded while this chunk was assembled.
    pub dropped: usize,
}

impl DataChunk {
    pub fn new(window_index: u64, dim: usize, rows: Vec<DataInstance>) -> Result<Self> {
        if let Some(bad) = rows.iter().find(|r| r.dim() != dim) {
            return Err(Error::Schema(format!(
                "instance has {} values, chunk dimensionality is {dim}",
                bad.dim()
            )));
        }
        Ok(Self {
            window_index,
            rows,
            dim,
            dropped: 0,
        })
    }

    /// Builds a chunk from a dense matrix where NaN marks a missing entry.
    pub fn from_matrix(window_index: u64, values: &Array2<f64>) -> Self {
        let rows = values
            .rows()
            .into_iter()
            .map(|r| DataInstance::new(r.iter().map(|&v| (!v.is_nan()).then_some(v)).collect()))
            .collect();
        Self {
            window_index,
            rows,
            dim: values.ncols(),
            dropped: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Dense |V|×D matrix with NaN at missing entries.
    pub fn values(&self) -> Array2<f64> {
        let mut out = Array2::from_elem((self.rows.len(), self.dim), f64::NAN);
        for (i, row) in self.rows.iter().enumerate() {
            for (d, v) in row.values.iter().enumerate() {
                if let Some(v) = v {
                    out[[i, d]] = *v;
                }
            }
        }
        out
    }

    pub fn mask(&self) -> MaskChunk {
        let mut bits = Array2::from_elem((self.rows.len(), self.dim), false);
        for (i, row) in self.rows.iter().enumerate() {
            for (d, v) in row.values.iter().enumerate() {
                bits[[i, d]] = v.is_some();
            }
        }
        MaskChunk { bits }
    }

    pub fn observed_count(&self) -> usize {
        self.rows.iter().map(DataInstance::observed_count).sum()
    }

    pub fn missing_count(&self) -> usize {
        self.rows.len() * self.dim - self.observed_count()
    }

    /// Same metadata, values replaced from a NaN-encoded matrix.
    pub fn with_values(&self, values: &Array2<f64>) -> Result<Self> {
        if values.dim() != (self.rows.len(), self.dim) {
            return Err(Error::shape(format!(
                "matrix is {:?}, chunk is {}x{}",
                values.dim(),
                self.rows.len(),
                self.dim
            )));
        }
        let rows = self
            .rows
            .iter()
            .zip(values.rows())
            .map(|(inst, r)| DataInstance {
                values: r.iter().map(|&v| (!v.is_nan()).then_some(v)).collect(),
                stream_id: inst.stream_id.clone(),
                timestamp: inst.timestamp,
            })
            .collect();
        Ok(Self {
            window_index: self.window_index,
            rows,
            dim: self.dim,
            dropped: self.dropped,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordFormat {
    Csv,
    Ndjson,
}

/// Which CSV columns hold values and metadata.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Schema {
    pub value_columns: Vec<String>,
    pub stream_id: Option<String>,
    pub timestamp: Option<String>,
}

pub const STREAM_ID_COLUMN: &str = "stream_id";
pub const TIMESTAMP_COLUMN: &str = "timestamp";

impl Schema {
    pub fn new(value_columns: Vec<String>) -> Self {
        Self {
            value_columns,
            stream_id: None,
            timestamp: None,
        }
    }

    /// `stream_id` and `timestamp` are metadata; every other header is a value column.
    pub fn from_header<S: AsRef<str>>(header: &[S]) -> Self {
        let mut schema = Schema::new(Vec::new());
        for name in header {
            let name = name.as_ref().trim();
            match name {
                STREAM_ID_COLUMN => schema.stream_id = Some(name.to_string()),
                TIMESTAMP_COLUMN => schema.timestamp = Some(name.to_string()),
                _ => schema.value_columns.push(name.to_string()),
            }
        }
        schema
    }

    pub fn dim(&self) -> usize {
        self.value_columns.len()
    }

    /// CSV header line matching this schema: metadata first, then values.
    pub fn header(&self) -> Vec<String> {
        self.stream_id
            .iter()
            .chain(self.timestamp.iter())
            .chain(self.value_columns.iter())
            .cloned()
            .collect()
    }
}

/// Empty, "NaN" and "null" (any case) all denote a missing value.
pub fn is_missing_token(cell: &str) -> bool {
    let t = cell.trim();
    t.is_empty() || t.eq_ignore_ascii_case("nan") || t.eq_ignore_ascii_case("null")
}

fn parse_value(cell: &str, line: u64) -> Result<Option<f64>> {
    if is_missing_token(cell) {
        return Ok(None);
    }
    let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
        line,
        message: format!("not a number: {cell:?}"),
    })?;
    if v.is_nan() {
        Ok(None)
    } else if !v.is_finite() {
        Err(Error::Parse {
            line,
            message: format!("non-finite value {cell:?}"),
        })
    } else {
        Ok(Some(v))
    }
}

/// Parses every record of `source`. For CSV the schema columns are resolved
/// against the header row; for NDJSON only the schema's dimensionality is used.
pub fn parse_records<R: Read>(
    source: R,
    format: RecordFormat,
    schema: &Schema,
) -> Result<Vec<DataInstance>> {
    match format {
        RecordFormat::Csv => CsvRecords::new(source, schema)?.collect(),
        RecordFormat::Ndjson => NdjsonRecords::new(source, schema.dim()).collect(),
    }
}

/// Streaming CSV reader yielding one instance per record.
pub struct CsvRecords<R: Read> {
    reader: csv::Reader<R>,
    value_idx: Vec<usize>,
    stream_idx: Option<usize>,
    time_idx: Option<usize>,
    width: usize,
    record: csv::StringRecord,
}

impl<R: Read> CsvRecords<R> {
    pub fn new(source: R, schema: &Schema) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(source);
        let header = reader
            .headers()
            .map_err(|e| Error::Parse {
                line: 1,
                message: e.to_string(),
            })?
            .clone();
        let find = |name: &str| -> Result<usize> {
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Schema(format!("column {name:?} not in header")))
        };
        let value_idx = schema
            .value_columns
            .iter()
            .map(|c| find(c))
            .collect::<Result<Vec<_>>>()?;
        let stream_idx = schema.stream_id.as_deref().map(find).transpose()?;
        let time_idx = schema.timestamp.as_deref().map(find).transpose()?;
        Ok(Self {
            width: header.len(),
            reader,
            value_idx,
            stream_idx,
            time_idx,
            record: csv::StringRecord::new(),
        })
    }

    /// Opens a CSV source and derives the schema from its header row.
    pub fn with_header_schema(source: R) -> Result<(Self, Schema)>
    where
        R: Read,
    {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(source);
        let header = reader
            .headers()
            .map_err(|e| Error::Parse {
                line: 1,
                message: e.to_string(),
            })?
            .clone();
        let names: Vec<&str> = header.iter().collect();
        let schema = Schema::from_header(&names);
        if schema.dim() == 0 {
            return Err(Error::Schema("header names no value columns".into()));
        }
        let pos = |name: &Option<String>| {
            name.as_ref()
                .and_then(|n| header.iter().position(|h| h == n))
        };
        let value_idx = schema
            .value_columns
            .iter()
            .map(|c| header.iter().position(|h| h == c).unwrap())
            .collect();
        let this = Self {
            width: header.len(),
            value_idx,
            stream_idx: pos(&schema.stream_id),
            time_idx: pos(&schema.timestamp),
            reader,
            record: csv::StringRecord::new(),
        };
        Ok((this, schema))
    }
}

impl<R: Read> Iterator for CsvRecords<R> {
    type Item = Result<DataInstance>;

    fn next(&mut self) -> Option<Self::Item> {
        match self.reader.read_record(&mut self.record) {
            Ok(false) => None,
            Err(e) => Some(Err(Error::Parse {
                line: e.position().map_or(0, |p| p.line()),
                message: e.to_string(),
            })),
            Ok(true) => {
                let line = self.record.position().map_or(0, |p| p.line());
                if self.record.len() != self.width {
                    return Some(Err(Error::Schema(format!(
                        "line {line}: {} fields, header has {}",
                        self.record.len(),
                        self.width
                    ))));
                }
                Some(self.decode(line))
            }
        }
    }
}

impl<R: Read> CsvRecords<R> {
    fn decode(&self, line: u64) -> Result<DataInstance> {
        let values = self
            .value_idx
            .iter()
            .map(|&i| parse_value(&self.record[i], line))
            .collect::<Result<Vec<_>>>()?;
        let stream_id = self
            .stream_idx
            .map(|i| self.record[i].to_string())
            .filter(|s| !s.is_empty());
        let timestamp = match self.time_idx {
            None => None,
            Some(i) => Some(parse_value(&self.record[i], line)?.ok_or_else(|| Error::Parse {
                line,
                message: "missing timestamp".into(),
            })?),
        };
        Ok(DataInstance {
            values,
            stream_id,
            timestamp,
        })
    }
}

/// Streaming NDJSON reader: `{"values": [..], "stream_id": .., "timestamp": ..}` per line.
pub struct NdjsonRecords<R: Read> {
    lines: std::io::Lines<BufReader<R>>,
    line: u64,
    dim: usize,
}

impl<R: Read> NdjsonRecords<R> {
    pub fn new(source: R, dim: usize) -> Self {
        Self {
            lines: BufReader::new(source).lines(),
            line: 0,
            dim,
        }
    }
}

impl<R: Read> Iterator for NdjsonRecords<R> {
    type Item = Result<DataInstance>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let text = match self.lines.next()? {
                Ok(t) => t,
                Err(e) => return Some(Err(e.into())),
            };
            self.line += 1;
            if text.trim().is_empty() {
                continue;
            }
            return Some(decode_json_line(&text, self.line, self.dim));
        }
    }
}

fn decode_json_line(text: &str, line: u64, dim: usize) -> Result<DataInstance> {
    use serde_json::Value;
    let parse_err = |message: String| Error::Parse { line, message };
    let obj: Value = serde_json::from_str(text).map_err(|e| parse_err(e.to_string()))?;
    let arr = obj
        .get("values")
        .and_then(Value::as_array)
        .ok_or_else(|| parse_err("missing `values` array".into()))?;
    if arr.len() != dim {
        return Err(Error::Schema(format!(
            "line {line}: {} values, schema has {dim}",
            arr.len()
        )));
    }
    let values = arr
        .iter()
        .map(|v| match v {
            Value::Null => Ok(None),
            Value::Number(n) => Ok(n.as_f64()),
            Value::String(s) => parse_value(s, line),
            other => Err(parse_err(format!("unexpected value {other}"))),
        })
        .collect::<Result<Vec<_>>>()?;
    let stream_id = match obj.get("stream_id") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(other) => Some(other.to_string()),
    };
    let timestamp = match obj.get("timestamp") {
        None | Some(Value::Null) => None,
        Some(v) => Some(
            v.as_f64()
                .ok_or_else(|| parse_err(format!("bad timestamp {v}")))?,
        ),
    };
    Ok(DataInstance {
        values,
        stream_id,
        timestamp,
    })
}

/// Writes instances under `schema`'s header; missing entries become empty
/// cells and metadata columns are written only when the schema names them.
pub fn write_csv<W: std::io::Write>(instances: &[DataInstance], schema: &Schema, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(schema.header()).map_err(csv_err)?;
    for inst in instances {
        if inst.dim() != schema.dim() {
            return Err(Error::Schema(format!(
                "instance has {} values, schema has {}",
                inst.dim(),
                schema.dim()
            )));
        }
        let mut record = Vec::with_capacity(inst.dim() + 2);
        if schema.stream_id.is_some() {
            record.push(inst.stream_id.clone().unwrap_or_default());
        }
        if schema.timestamp.is_some() {
            record.push(inst.timestamp.map(|t| t.to_string()).unwrap_or_default());
        }
        record.extend(inst.values.iter().map(|v| v.map(|x| x.to_string()).unwrap_or_default()));
        w.write_record(&record).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Lazily groups a time-ordered instance sequence into tumbling windows
/// `[a·T, (a+1)·T)`. Windows without instances come out as empty chunks.
///
/// Instances without a timestamp take their position in the sequence
/// (0, 1, 2, ...) as time; mixing timestamped and untimestamped instances is
/// an ingestion error.
pub struct TumblingWindows<I: Iterator> {
    source: std::iter::Peekable<I>,
    window_length: f64,
    dim: Option<usize>,
    next_window: u64,
    seq: u64,
    last_time: f64,
    timed: Option<bool>,
    dropped_total: usize,
    failed: bool,
}

impl<I> TumblingWindows<I>
where
    I: Iterator<Item = Result<DataInstance>>,
{
    pub fn new(source: I, window_length: f64) -> Result<Self> {
        if !(window_length > 0.0 && window_length.is_finite()) {
            return Err(Error::config(format!(
                "window length must be positive, got {window_length}"
            )));
        }
        Ok(Self {
            source: source.peekable(),
            window_length,
            dim: None,
            next_window: 0,
            seq: 0,
            last_time: f64::NEG_INFINITY,
            timed: None,
            dropped_total: 0,
            failed: false,
        })
    }

    /// Total fully-missing instances dropped so far.
    pub fn dropped(&self) -> usize {
        self.dropped_total
    }

    /// Validates the instance's time against the stream so far without consuming it.
    fn time_of(&mut self, inst: &DataInstance) -> Result<f64> {
        let timed = inst.timestamp.is_some();
        match self.timed {
            None => self.timed = Some(timed),
            Some(t) if t != timed => {
                return Err(Error::Ingestion(
                    "some instances carry timestamps and others do not".into(),
                ))
            }
            _ => {}
        }
        let t = inst.timestamp.unwrap_or(self.seq as f64);
        if t < 0.0 || !t.is_finite() {
            return Err(Error::Ingestion(format!("invalid timestamp {t}")));
        }
        if t < self.last_time {
            return Err(Error::Ingestion(format!(
                "timestamps out of order: {t} after {}",
                self.last_time
            )));
        }
        Ok(t)
    }

    fn window_of(&self, t: f64) -> u64 {
        (t / self.window_length).floor() as u64
    }
}

impl<I> Iterator for TumblingWindows<I>
where
    I: Iterator<Item = Result<DataInstance>>,
{
    type Item = Result<DataChunk>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        self.source.peek()?;
        let current = self.next_window;
        let mut rows = Vec::new();
        let mut dropped = 0;
        while let Some(item) = self.source.peek() {
            let inst = match item {
                Ok(inst) => inst.clone(),
                Err(_) => {
                    self.failed = true;
                    return match self.source.next() {
                        Some(Err(e)) => Some(Err(e)),
                        _ => None,
                    };
                }
            };
            let result = self.time_of(&inst).and_then(|t| {
                let dim = *self.dim.get_or_insert(inst.dim());
                if inst.dim() != dim {
                    return Err(Error::Schema(format!(
                        "instance has {} values, stream dimensionality is {dim}",
                        inst.dim()
                    )));
                }
                Ok(t)
            });
            let t = match result {
                Ok(t) => t,
                Err(e) => {
                    self.failed = true;
                    return Some(Err(e));
                }
            };
            if self.window_of(t) > current {
                break;
            }
            self.source.next();
            self.seq += 1;
            self.last_time = t;
            if inst.observed_count() == 0 {
                dropped += 1;
            } else {
                rows.push(inst);
            }
        }
        if dropped > 0 {
            log::info!("window {current}: dropped {dropped} fully-missing instances");
        }
        self.dropped_total += dropped;
        self.next_window += 1;
        Some(Ok(DataChunk {
            window_index: current,
            rows,
            dim: self.dim.unwrap_or(0),
            dropped,
        }))
    }
}

/// Collects [`TumblingWindows`] over an in-memory sequence.
pub fn tumbling_windows(instances: &[DataInstance], window_length: f64) -> Result<Vec<DataChunk>> {
    TumblingWindows::new(instances.iter().cloned().map(Ok), window_length)?.collect()
}

/// Reads a whole file in the given format, deriving the CSV schema from the header.
pub fn read_file(path: &std::path::Path, format: RecordFormat, dim: Option<usize>) -> Result<(Vec<DataInstance>, Schema)> {
    let file = std::fs::File::open(path)?;
    match format {
        RecordFormat::Csv => {
            let (records, schema) = CsvRecords::with_header_schema(file)?;
            if let Some(d) = dim {
                if d != schema.dim() {
                    return Err(Error::Schema(format!(
                        "expected {d} value columns, header has {}",
                        schema.dim()
                    )));
                }
            }
            Ok((records.collect::<Result<Vec<_>>>()?, schema))
        }
        RecordFormat::Ndjson => {
            let dim = match dim {
                Some(d) => d,
                None => sniff_ndjson_dim(path)?,
            };
            let schema = Schema {
                value_columns: (0..dim).map(|d| format!("v{d}")).collect(),
                stream_id: Some(STREAM_ID_COLUMN.into()),
                timestamp: Some(TIMESTAMP_COLUMN.into()),
            };
            let records = NdjsonRecords::new(file, dim).collect::<Result<Vec<_>>>()?;
            Ok((records, schema))
        }
    }
}

fn sniff_ndjson_dim(path: &std::path::Path) -> Result<usize> {
    let file = std::fs::File::open(path)?;
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v: serde_json::Value = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: n as u64 + 1,
            message: e.to_string(),
        })?;
        return v
            .get("values")
            .and_then(|a| a.as_array())
            .map(|a| a.len())
            .ok_or_else(|| Error::Parse {
                line: n as u64 + 1,
                message: "missing `values` array".into(),
            });
    }
    Err(Error::Schema("empty NDJSON input".into()))
}
