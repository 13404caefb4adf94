//! JSON document persistence.
//!
//! Matrices are written as `{rows, cols, data}` with `data` in row-major
//! order. Floats use shortest round-trip formatting, so a save/load cycle
//! reproduces every parameter bit-for-bit.

use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

pub mod matrix {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(deny_unknown_fields)]
    struct RowMajor {
        rows: usize,
        cols: usize,
        data: Vec<f64>,
    }

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let data = m.transpose().as_slice().to_vec();
        RowMajor {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let raw = RowMajor::deserialize(d)?;
        if raw.data.len() != raw.rows * raw.cols {
            return Err(serde::de::Error::custom(format!(
                "matrix data has {} entries, expected {}x{}",
                raw.data.len(),
                raw.rows,
                raw.cols
            )));
        }
        Ok(DMatrix::from_row_slice(raw.rows, raw.cols, &raw.data))
    }
}

pub mod vector {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
        Ok(DVector::from_vec(Vec::<f64>::deserialize(d)?))
    }
}

/// Document kinds written by this crate.
pub const KIND_PREDICTOR: &str = "predictor";
pub const KIND_CHART: &str = "control_chart";
pub const KIND_TUNE_REPORT: &str = "tune_report";

/// Envelope carried by every persisted document.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Document<T> {
    pub format_version: u32,
    pub kind: String,
    pub body: T,
}

#[derive(Deserialize)]
struct Header {
    format_version: u32,
    kind: String,
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let start: usize = text
        .split_inclusive('\n')
        .take(line - 1)
        .map(str::len)
        .sum();
    (start + column.saturating_sub(1)).min(text.len())
}

fn parse_error(text: &str, e: serde_json::Error) -> Error {
    Error::Parse {
        offset: byte_offset(text, e.line(), e.column()),
        message: e.to_string(),
    }
}

pub fn to_json<T: Serialize>(kind: &str, body: &T) -> Result<String> {
    let doc = Document {
        format_version: FORMAT_VERSION,
        kind: kind.to_string(),
        body,
    };
    serde_json::to_string_pretty(&doc).map_err(|e| Error::Schema(e.to_string()))
}

/// Parses a document, checking its version and kind before the body.
pub fn from_json<T: DeserializeOwned>(kind: &str, text: &str) -> Result<T> {
    let header: Header = serde_json::from_str::<serde_json::Value>(text)
        .map_err(|e| parse_error(text, e))
        .and_then(|v| serde_json::from_value(v).map_err(|e| Error::Schema(e.to_string())))?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::Version {
            found: header.format_version,
            expected: FORMAT_VERSION,
        });
    }
    if header.kind != kind {
        return Err(Error::Schema(format!(
            "expected a `{kind}` document, found `{}`",
            header.kind
        )));
    }
    let doc: Document<T> = serde_json::from_str(text).map_err(|e| match e.classify() {
        serde_json::error::Category::Syntax | serde_json::error::Category::Eof => {
            parse_error(text, e)
        }
        _ => Error::Schema(e.to_string()),
    })?;
    Ok(doc.body)
}

/// Parses a bare JSON document such as a run configuration. Syntax errors
/// carry a byte offset; unknown or mistyped fields are schema errors.
pub fn from_plain_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| match e.classify() {
        serde_json::error::Category::Syntax | serde_json::error::Category::Eof => parse_error(text, e),
        _ => Error::Schema(e.to_string()),
    })
}

/// Writes to a sibling temp file then renames into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        std::fs::create_dir_all(dir)?;
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("not a file path: {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", file_name.to_string_lossy()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn save<T: Serialize>(path: &Path, kind: &str, body: &T) -> Result<()> {
    write_atomic(path, to_json(kind, body)?.as_bytes())
}

pub fn load<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<T> {
    from_json(kind, &std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Holder {
        #[serde(with = "matrix")]
        m: DMatrix<f64>,
    }

    #[test]
    fn matrices_are_row_major_and_exact() {
        let m = DMatrix::from_row_slice(2, 3, &[0.1, 1.0 / 3.0, -2.5e-300, 4.0, 5.0, 6.0]);
        let text = to_json("holder", &Holder { m: m.clone() }).unwrap();
        assert!(text.contains("0.1,") || text.contains("0.1\n") || text.contains("0.1"));
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["body"]["m"]["data"][1].as_f64().unwrap(), 1.0 / 3.0);
        let back: Holder = from_json("holder", &text).unwrap();
        assert_eq!(back.m, m);
    }

    #[test]
    fn truncated_document_reports_offset() {
        let text = to_json("holder", &Holder { m: DMatrix::zeros(2, 2) }).unwrap();
        let cut = &text[..text.len() / 2];
        match from_json::<Holder>("holder", cut) {
            Err(Error::Parse { offset, .. }) => assert!(offset <= cut.len()),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn version_and_kind_are_checked() {
        let text = to_json("holder", &Holder { m: DMatrix::zeros(1, 1) }).unwrap();
        let bumped = text.replace("\"format_version\": 1", "\"format_version\": 99");
        assert!(matches!(
            from_json::<Holder>("holder", &bumped),
            Err(Error::Version { found: 99, .. })
        ));
        assert!(matches!(from_json::<Holder>("chart", &text), Err(Error::Schema(_))));
    }
}
