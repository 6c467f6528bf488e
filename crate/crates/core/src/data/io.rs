use std::fs::File;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{parse_label, FieldSchema, Instance};
use crate::error::{Error, Result};

/// On-disk record layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataFormat {
    /// Tab-separated, no header: label, 13 integers, 26 hex categoricals.
    CriteoTsv,
    /// Comma-separated with header: id (ignored), click, 22 categoricals.
    AvazuCsv,
    /// Comma-separated with header naming `label` and every schema field.
    GenericCsv,
}

impl std::str::FromStr for DataFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "criteo_tsv" => Ok(DataFormat::CriteoTsv),
            "avazu_csv" => Ok(DataFormat::AvazuCsv),
            "generic_csv" => Ok(DataFormat::GenericCsv),
            other => Err(Error::InvalidArgument(format!("unknown data format `{other}`"))),
        }
    }
}

/// Where the label and each field's value sit in a raw row.
#[derive(Debug, Clone)]
struct Layout {
    width: usize,
    label: usize,
    fields: Vec<usize>,
}

/// Streaming reader yielding one encoded instance (or record error) per row.
pub struct RecordReader<R: Read> {
    rows: csv::StringRecordsIntoIter<R>,
    schema: FieldSchema,
    layout: Layout,
    values: Vec<String>,
}

impl RecordReader<File> {
    pub fn open(path: &Path, format: DataFormat, schema: &FieldSchema) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        RecordReader::new(file, format, schema)
    }
}

impl<R: Read> RecordReader<R> {
    pub fn new(source: R, format: DataFormat, schema: &FieldSchema) -> Result<Self> {
        let n = schema.n_fields();
        let mut builder = csv::ReaderBuilder::new();
        builder.flexible(true).has_headers(false);
        if format == DataFormat::CriteoTsv {
            builder.delimiter(b'\t').quoting(false);
        }
        let mut reader = builder.from_reader(source);
        let layout = match format {
            DataFormat::CriteoTsv => Layout {
                width: n + 1,
                label: 0,
                fields: (1..=n).collect(),
            },
            DataFormat::AvazuCsv => {
                // header row is skipped; its names are not interpreted
                let mut header = csv::StringRecord::new();
                read_header(&mut reader, &mut header)?;
                Layout {
                    width: n + 2,
                    label: 1,
                    fields: (2..n + 2).collect(),
                }
            }
            DataFormat::GenericCsv => {
                let mut header = csv::StringRecord::new();
                if read_header(&mut reader, &mut header)? {
                    generic_layout(&header, schema)?
                } else {
                    Layout {
                        width: n + 1,
                        label: 0,
                        fields: (1..=n).collect(),
                    }
                }
            }
        };
        Ok(RecordReader {
            rows: reader.into_records(),
            schema: schema.clone(),
            layout,
            values: vec![String::new(); n],
        })
    }
}

fn read_header<R: Read>(reader: &mut csv::Reader<R>, header: &mut csv::StringRecord) -> Result<bool> {
    reader
        .read_record(header)
        .map_err(|e| Error::Data(format!("reading header: {e}")))
}

fn generic_layout(header: &csv::StringRecord, schema: &FieldSchema) -> Result<Layout> {
    let position = |name: &str| header.iter().position(|h| h.trim() == name);
    let label = position("label")
        .ok_or_else(|| Error::Data("generic_csv header has no `label` column".into()))?;
    let fields = schema
        .fields()
        .iter()
        .map(|f| {
            position(&f.name).ok_or_else(|| {
                Error::Data(format!("generic_csv header has no column for field `{}`", f.name))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Layout {
        width: header.len(),
        label,
        fields,
    })
}

impl<R: Read> Iterator for RecordReader<R> {
    type Item = Result<Instance>;

    fn next(&mut self) -> Option<Self::Item> {
        let row = self.rows.next()?;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line() as usize);
                return Some(match e.kind() {
                    csv::ErrorKind::Io(_) => Err(Error::Data(e.to_string())),
                    _ => Err(Error::Record {
                        line,
                        message: e.to_string(),
                    }),
                });
            }
        };
        let line = row.position().map_or(0, |p| p.line() as usize);
        if row.len() != self.layout.width {
            return Some(Err(Error::Record {
                line,
                message: format!("expected {} columns, got {}", self.layout.width, row.len()),
            }));
        }
        let label = match parse_label(&row[self.layout.label], line) {
            Ok(l) => l,
            Err(e) => return Some(Err(e)),
        };
        for (slot, &col) in self.values.iter_mut().zip(&self.layout.fields) {
            slot.clear();
            slot.push_str(&row[col]);
        }
        Some(self.schema.encode_record(&self.values, label, line))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ReadOptions {
    /// Highest tolerated fraction of malformed rows.
    pub max_malformed_ratio: f64,
}

impl Default for ReadOptions {
    fn default() -> Self {
        ReadOptions {
            max_malformed_ratio: 0.01,
        }
    }
}

/// A fully read file: instances in file order plus malformed-row counts.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub instances: Vec<Instance>,
    pub malformed: usize,
    pub rows: usize,
}

/// Reads a whole file, skipping malformed rows; fails when too many are bad.
pub fn read_dataset(
    path: &Path,
    format: DataFormat,
    schema: &FieldSchema,
    opts: ReadOptions,
) -> Result<Dataset> {
    let reader = RecordReader::open(path, format, schema)?;
    collect_records(reader, opts)
}

pub(crate) fn collect_records<R: Read>(reader: RecordReader<R>, opts: ReadOptions) -> Result<Dataset> {
    let mut out = Dataset::default();
    let mut first_error = None;
    for item in reader {
        out.rows += 1;
        match item {
            Ok(inst) => out.instances.push(inst),
            Err(e @ Error::Record { .. }) => {
                out.malformed += 1;
                first_error.get_or_insert(e);
            }
            Err(e) => return Err(e),
        }
    }
    if out.rows > 0 && out.malformed as f64 / out.rows as f64 > opts.max_malformed_ratio {
        return Err(Error::Data(format!(
            "{} of {} rows malformed (limit {:.2}%); first: {}",
            out.malformed,
            out.rows,
            opts.max_malformed_ratio * 100.0,
            first_error.map(|e| e.to_string()).unwrap_or_default()
        )));
    }
    Ok(out)
}

/// Writes raw rows as generic_csv: a `label` column followed by one column
/// per schema field.
pub fn write_generic_csv<S: AsRef<str>>(
    path: &Path,
    schema: &FieldSchema,
    rows: &[(Vec<S>, u8)],
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    let to_err = |e: csv::Error| Error::Data(format!("{}: {e}", path.display()));
    let mut header = vec!["label"];
    header.extend(schema.fields().iter().map(|f| f.name.as_str()));
    w.write_record(&header).map_err(to_err)?;
    let mut record = Vec::with_capacity(schema.n_fields() + 1);
    for (values, label) in rows {
        record.clear();
        record.push(label.to_string());
        record.extend(values.iter().map(|v| v.as_ref().to_string()));
        w.write_record(&record).map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
