//! On-disk bank formats.
//!
//! JSON lines: a header object
//! `{"format":"ebank","version":1,"modality":"visual"|"text","dim":D}`
//! followed by one `{"task_id": "...", "v": [D numbers]}` object per line.
//!
//! Binary (little-endian):
//!
//! | field    | type                                   |
//! |----------|----------------------------------------|
//! | magic    | `b"EBNK"`                              |
//! | version  | `u8` = 1                               |
//! | modality | `u8` (0 = visual, 1 = text)            |
//! | dim      | `u32`                                  |
//! | count    | `u64`                                  |
//! | values   | `count * dim` x `f32`, row-major       |
//! | task ids | `count` x (`u16` length, UTF-8 bytes)  |
//!
//! Values are narrowed to `f32` on save.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingBank, Modality};
use crate::error::{Error, FormatLocation, Result};

pub const BANK_MAGIC: &[u8; 4] = b"EBNK";
pub const BANK_VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BankFormat {
    JsonLines,
    Binary,
}

impl BankFormat {
    /// `.jsonl` / `.json` / `.ndjson` are JSON lines, everything else is binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl" | "json" | "ndjson") => BankFormat::JsonLines,
            _ => BankFormat::Binary,
        }
    }
}

impl std::str::FromStr for BankFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" | "jsonlines" | "json" => Ok(BankFormat::JsonLines),
            "bin" | "binary" => Ok(BankFormat::Binary),
            other => Err(Error::Parameter(format!("unknown bank format {other:?}"))),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonHeader {
    format: String,
    version: u32,
    modality: Modality,
    dim: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonRow {
    task_id: String,
    v: Vec<f64>,
}

pub fn load_bank(path: impl AsRef<Path>, format: BankFormat) -> Result<EmbeddingBank> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    match format {
        BankFormat::JsonLines => read_json_lines(path, reader),
        BankFormat::Binary => read_binary(path, reader),
    }
}

pub fn save_bank(bank: &EmbeddingBank, path: impl AsRef<Path>, format: BankFormat) -> Result<()> {
    let path = path.as_ref();
    let bytes = match format {
        BankFormat::JsonLines => encode_json_lines(bank)?,
        BankFormat::Binary => encode_binary(bank)?,
    };
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn encode_json_lines(bank: &EmbeddingBank) -> Result<Vec<u8>> {
    let header = JsonHeader {
        format: "ebank".into(),
        version: 1,
        modality: bank.modality(),
        dim: bank.dim(),
    };
    let mut out = serde_json::to_vec(&header).expect("header serializes");
    out.push(b'\n');
    for (id, row) in bank.rows() {
        let line = JsonRow {
            task_id: id.to_owned(),
            v: row.to_vec(),
        };
        serde_json::to_writer(&mut out, &line).expect("row serializes");
        out.push(b'\n');
    }
    Ok(out)
}

fn read_json_lines(path: &Path, reader: impl BufRead) -> Result<EmbeddingBank> {
    let format_err = |line: usize, message: String| Error::Format {
        path: path.to_owned(),
        location: FormatLocation::Line(line),
        message,
    };
    let mut lines = reader.lines().enumerate();
    let header: JsonHeader = loop {
        match lines.next() {
            None => return Err(format_err(1, "missing header".into())),
            Some((i, line)) => {
                let line = line.map_err(|e| Error::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                break serde_json::from_str(&line)
                    .map_err(|e| format_err(i + 1, format!("bad header: {e}")))?;
            }
        }
    };
    if header.format != "ebank" || header.version != 1 {
        return Err(format_err(
            1,
            format!(
                "unsupported format {:?} version {}",
                header.format, header.version
            ),
        ));
    }
    let mut bank = EmbeddingBank::new(header.modality, header.dim)?;
    for (i, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: JsonRow =
            serde_json::from_str(&line).map_err(|e| format_err(i + 1, format!("bad row: {e}")))?;
        let row_no = bank.len() + 1;
        if row.v.len() != header.dim {
            return Err(Error::Dimension(format!(
                "{}: row {row_no} (line {}): expected {} values, got {}",
                path.display(),
                i + 1,
                header.dim,
                row.v.len()
            )));
        }
        bank.push(row.task_id, &row.v)
            .map_err(|e| format_err(i + 1, format!("row {row_no}: {e}")))?;
    }
    Ok(bank)
}

pub fn encode_binary(bank: &EmbeddingBank) -> Result<Vec<u8>> {
    let dim = u32::try_from(bank.dim())
        .map_err(|_| Error::Dimension("dimension does not fit in u32".into()))?;
    let mut out = Vec::with_capacity(18 + bank.as_flat().len() * 4);
    out.extend_from_slice(BANK_MAGIC);
    out.push(BANK_VERSION);
    out.push(match bank.modality() {
        Modality::Visual => 0,
        Modality::Text => 1,
    });
    out.extend_from_slice(&dim.to_le_bytes());
    out.extend_from_slice(&(bank.len() as u64).to_le_bytes());
    for (i, &x) in bank.as_flat().iter().enumerate() {
        let narrowed = x as f32;
        if !narrowed.is_finite() {
            return Err(Error::Parameter(format!(
                "row {}: value {x} overflows f32",
                i / bank.dim() + 1
            )));
        }
        out.extend_from_slice(&narrowed.to_le_bytes());
    }
    for id in bank.task_ids() {
        let len = u16::try_from(id.len())
            .map_err(|_| Error::Parameter(format!("task_id longer than 65535 bytes: {id:.32}")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(id.as_bytes());
    }
    Ok(out)
}

/// Reader that tracks its byte offset for error reporting.
struct Cursor<'a, R> {
    inner: R,
    offset: u64,
    path: &'a Path,
}

impl<R: Read> Cursor<'_, R> {
    fn take<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| self.err(format!("reading {what}: {e}")))?;
        self.offset += N as u64;
        Ok(buf)
    }

    fn take_vec(&mut self, n: usize, what: &str) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| self.err(format!("reading {what}: {e}")))?;
        self.offset += n as u64;
        Ok(buf)
    }

    fn err(&self, message: String) -> Error {
        Error::Format {
            path: self.path.to_owned(),
            location: FormatLocation::Offset(self.offset),
            message,
        }
    }
}

fn read_binary(path: &Path, reader: impl Read) -> Result<EmbeddingBank> {
    let mut cur = Cursor {
        inner: reader,
        offset: 0,
        path,
    };
    if &cur.take::<4>("magic")? != BANK_MAGIC {
        cur.offset = 0;
        return Err(cur.err("bad magic, expected EBNK".into()));
    }
    let [version] = cur.take::<1>("version")?;
    if version != BANK_VERSION {
        return Err(cur.err(format!("unsupported version {version}")));
    }
    let modality = match cur.take::<1>("modality")? {
        [0] => Modality::Visual,
        [1] => Modality::Text,
        [m] => return Err(cur.err(format!("unknown modality byte {m}"))),
    };
    let dim = u32::from_le_bytes(cur.take::<4>("dim")?) as usize;
    if dim == 0 {
        return Err(cur.err("dim must be positive".into()));
    }
    let count = u64::from_le_bytes(cur.take::<8>("count")?);
    let count = usize::try_from(count).map_err(|_| cur.err("count too large".into()))?;

    let mut values = Vec::with_capacity(count.saturating_mul(dim).min(1 << 24));
    for _ in 0..count.saturating_mul(dim) {
        let v = f32::from_le_bytes(cur.take::<4>("values")?);
        if !v.is_finite() {
            return Err(cur.err("non-finite value".into()));
        }
        values.push(f64::from(v));
    }
    let mut bank = EmbeddingBank::new(modality, dim)?;
    for row in 0..count {
        let len = u16::from_le_bytes(cur.take::<2>("task_id length")?) as usize;
        let bytes = cur.take_vec(len, "task_id")?;
        let id = String::from_utf8(bytes)
            .map_err(|_| cur.err(format!("row {}: task_id is not UTF-8", row + 1)))?;
        bank.push(id, &values[row * dim..(row + 1) * dim])
            .map_err(|e| cur.err(format!("row {}: {e}", row + 1)))?;
    }
    let mut trailing = [0u8; 1];
    if cur
        .inner
        .read(&mut trailing)
        .map_err(|e| Error::io(path, e))?
        != 0
    {
        return Err(cur.err("trailing bytes after last task_id".into()));
    }
    Ok(bank)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bank() -> EmbeddingBank {
        EmbeddingBank::from_rows(
            Modality::Text,
            4,
            [
                ("a", vec![1.0, 2.0, 3.0, 4.0]),
                ("b", vec![0.5, -0.25, 0.0, 8.0]),
                ("a", vec![-1.0, 0.0, 1.0, 0.125]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn json_lines_parse_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.jsonl");
        save_bank(&bank(), &p, BankFormat::JsonLines).unwrap();
        let loaded = load_bank(&p, BankFormat::JsonLines).unwrap();
        assert_eq!(loaded.len(), 3);
        assert_eq!(loaded.dim(), 4);
        assert_eq!(loaded, bank());
    }

    #[test]
    fn json_dimension_error_names_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.jsonl");
        std::fs::write(
            &p,
            "{\"format\":\"ebank\",\"version\":1,\"modality\":\"visual\",\"dim\":4}\n\
             {\"task_id\":\"a\",\"v\":[1,2,3,4]}\n\
             {\"task_id\":\"b\",\"v\":[1,2,3,4,5]}\n",
        )
        .unwrap();
        match load_bank(&p, BankFormat::JsonLines) {
            Err(Error::Dimension(msg)) => assert!(msg.contains("row 2"), "{msg}"),
            other => panic!("expected dimension error, got {other:?}"),
        }
    }

    #[test]
    fn json_malformed_row_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.jsonl");
        std::fs::write(
            &p,
            "{\"format\":\"ebank\",\"version\":1,\"modality\":\"text\",\"dim\":2}\n{\"task_id\":\"a\",\"v\":[1,\n",
        )
        .unwrap();
        match load_bank(&p, BankFormat::JsonLines) {
            Err(Error::Format { location, .. }) => assert_eq!(location, FormatLocation::Line(2)),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn binary_layout() {
        let bytes = encode_binary(&bank()).unwrap();
        assert_eq!(&bytes[..4], b"EBNK");
        assert_eq!(bytes[4], 1);
        assert_eq!(bytes[5], 1);
        assert_eq!(u32::from_le_bytes(bytes[6..10].try_into().unwrap()), 4);
        assert_eq!(u64::from_le_bytes(bytes[10..18].try_into().unwrap()), 3);
        assert_eq!(f32::from_le_bytes(bytes[18..22].try_into().unwrap()), 1.0);
        // 3 rows * 4 floats, then (u16 len + 1 byte) per id
        assert_eq!(bytes.len(), 18 + 48 + 3 * 3);
        assert_eq!(&bytes[66..69], &[1, 0, b'a']);
    }

    #[test]
    fn empty_bank_binary() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("empty.ebank");
        let empty = EmbeddingBank::new(Modality::Visual, 8).unwrap();
        save_bank(&empty, &p, BankFormat::Binary).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(bytes.len(), 18);
        assert_eq!(load_bank(&p, BankFormat::Binary).unwrap(), empty);
    }

    #[test]
    fn binary_save_is_deterministic_and_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let (p1, p2) = (dir.path().join("1.ebank"), dir.path().join("2.ebank"));
        save_bank(&bank(), &p1, BankFormat::Binary).unwrap();
        save_bank(&bank(), &p2, BankFormat::Binary).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        assert_eq!(load_bank(&p1, BankFormat::Binary).unwrap(), bank());
    }

    #[test]
    fn binary_rejects_truncation_and_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.ebank");
        let bytes = encode_binary(&bank()).unwrap();
        std::fs::write(&p, &bytes[..30]).unwrap();
        assert!(matches!(
            load_bank(&p, BankFormat::Binary),
            Err(Error::Format { .. })
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        std::fs::write(&p, &bad).unwrap();
        match load_bank(&p, BankFormat::Binary) {
            Err(Error::Format { location, .. }) => assert_eq!(location, FormatLocation::Offset(0)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn f32_overflow_is_rejected() {
        let b = EmbeddingBank::from_rows(Modality::Visual, 2, [("a", vec![1e300, 0.0])]).unwrap();
        assert!(encode_binary(&b).is_err());
    }

    #[test]
    fn missing_file_names_path() {
        let err = load_bank("/nonexistent/x.ebank", BankFormat::Binary).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/x.ebank"));
    }
}
