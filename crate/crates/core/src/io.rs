//! The on-disk archive convention shared by checkpoints and data pools:
//! a UTF-8 manifest (magic line, `key: value` fields, a tensor directory
//! with name/dtype/shape/offset/length per tensor) followed by the raw
//! little-endian IEEE-754 payloads in directory order. Round-trips are
//! bit-exact.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::tensor::{DType, Scalar, Tensor};

pub const FORMAT_VERSION: &str = "v1";

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic line {found:?}, expected {expected:?}")]
    BadMagic { expected: String, found: String },
    #[error("manifest line {line}: {detail}")]
    BadManifest { line: usize, detail: String },
    #[error("manifest is missing the {0:?} field")]
    MissingField(&'static str),
    #[error("archive holds {found} tensors, expected {expected}")]
    WrongDtype { expected: DType, found: String },
    #[error("payload truncated at byte offset {offset}: wanted {wanted} more bytes, found {found}")]
    Truncated {
        offset: usize,
        wanted: usize,
        found: usize,
    },
}

fn io_err(path: &Path, source: std::io::Error) -> ArchiveError {
    ArchiveError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes an archive. Header fields keep their given order; tensors are
/// laid out in entry order.
pub fn write_archive<T: Scalar>(
    path: &Path,
    magic: &str,
    fields: &[(&str, String)],
    entries: &[(String, &Tensor<T>)],
) -> Result<(), ArchiveError> {
    let mut manifest = String::new();
    manifest.push_str(magic);
    manifest.push(' ');
    manifest.push_str(FORMAT_VERSION);
    manifest.push('\n');
    manifest.push_str(&format!("dtype: {}\n", T::DTYPE.name()));
    for (key, value) in fields {
        manifest.push_str(&format!("{key}: {value}\n"));
    }
    manifest.push_str(&format!("tensors: {}\n", entries.len()));

    let mut payload: Vec<u8> = Vec::new();
    for (name, tensor) in entries {
        let offset = payload.len();
        let bytes = tensor.to_le_bytes();
        let dims = if tensor.shape().is_empty() {
            "-".to_string()
        } else {
            tensor
                .shape()
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        manifest.push_str(&format!(
            "tensor: {name} {} {dims} {offset} {}\n",
            T::DTYPE.name(),
            bytes.len()
        ));
        payload.extend_from_slice(&bytes);
    }
    manifest.push_str(&format!("payload: {}\n", payload.len()));

    let mut file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    file.write_all(manifest.as_bytes())
        .map_err(|e| io_err(path, e))?;
    file.write_all(&payload).map_err(|e| io_err(path, e))?;
    file.sync_all().map_err(|e| io_err(path, e))?;
    Ok(())
}

/// Parsed manifest plus decoded tensors, in directory order.
#[derive(Debug)]
pub struct Archive<T: Scalar> {
    pub fields: BTreeMap<String, String>,
    pub entries: Vec<(String, Tensor<T>)>,
}

impl<T: Scalar> Archive<T> {
    pub fn field(&self, name: &'static str) -> Result<&str, ArchiveError> {
        self.fields
            .get(name)
            .map(|s| s.as_str())
            .ok_or(ArchiveError::MissingField(name))
    }
}

pub fn read_archive<T: Scalar>(path: &Path, magic: &str) -> Result<Archive<T>, ArchiveError> {
    let raw = fs::read(path).map_err(|e| io_err(path, e))?;
    let (fields, directory, payload) = split_archive(&raw, magic)?;

    let dtype = fields
        .get("dtype")
        .ok_or(ArchiveError::MissingField("dtype"))?;
    if DType::parse(dtype) != Some(T::DTYPE) {
        return Err(ArchiveError::WrongDtype {
            expected: T::DTYPE,
            found: dtype.clone(),
        });
    }

    let mut entries = Vec::with_capacity(directory.len());
    for entry in directory {
        let end = entry.offset + entry.len;
        if end > payload.len() {
            return Err(ArchiveError::Truncated {
                offset: entry.offset,
                wanted: entry.len,
                found: payload.len().saturating_sub(entry.offset),
            });
        }
        let tensor = Tensor::<T>::from_le_bytes(entry.shape.clone(), &payload[entry.offset..end])
            .map_err(|e| ArchiveError::BadManifest {
                line: entry.line,
                detail: e.to_string(),
            })?;
        entries.push((entry.name, tensor));
    }
    Ok(Archive { fields, entries })
}

/// Reads just the dtype field, so callers can dispatch on precision before
/// decoding payloads.
pub fn peek_dtype(path: &Path, magic: &str) -> Result<DType, ArchiveError> {
    let raw = fs::read(path).map_err(|e| io_err(path, e))?;
    let (fields, _, _) = split_archive(&raw, magic)?;
    let dtype = fields
        .get("dtype")
        .ok_or(ArchiveError::MissingField("dtype"))?;
    DType::parse(dtype).ok_or_else(|| ArchiveError::WrongDtype {
        expected: DType::F64,
        found: dtype.clone(),
    })
}

struct DirEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
    line: usize,
}

type SplitResult<'a> = (BTreeMap<String, String>, Vec<DirEntry>, &'a [u8]);

fn split_archive<'a>(raw: &'a [u8], magic: &str) -> Result<SplitResult<'a>, ArchiveError> {
    let mut fields = BTreeMap::new();
    let mut directory = Vec::new();
    let mut pos = 0usize;
    let mut line_no = 0usize;
    let mut expected_magic = true;
    loop {
        let rest = &raw[pos..];
        let nl = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or(ArchiveError::BadManifest {
                line: line_no + 1,
                detail: "manifest ended before the payload marker".to_string(),
            })?;
        let line = std::str::from_utf8(&rest[..nl]).map_err(|_| ArchiveError::BadManifest {
            line: line_no + 1,
            detail: "manifest is not UTF-8".to_string(),
        })?;
        pos += nl + 1;
        line_no += 1;

        if expected_magic {
            let expected = format!("{magic} {FORMAT_VERSION}");
            if line != expected {
                return Err(ArchiveError::BadMagic {
                    expected,
                    found: line.to_string(),
                });
            }
            expected_magic = false;
            continue;
        }
        if let Some(spec) = line.strip_prefix("tensor: ") {
            directory.push(parse_dir_entry(spec, line_no)?);
            continue;
        }
        if let Some(total) = line.strip_prefix("payload: ") {
            let total: usize = total.parse().map_err(|_| ArchiveError::BadManifest {
                line: line_no,
                detail: format!("bad payload size {total:?}"),
            })?;
            let payload = &raw[pos..];
            if payload.len() < total {
                return Err(ArchiveError::Truncated {
                    offset: 0,
                    wanted: total,
                    found: payload.len(),
                });
            }
            return Ok((fields, directory, payload));
        }
        match line.split_once(": ") {
            Some((key, value)) => {
                fields.insert(key.to_string(), value.to_string());
            }
            None => {
                return Err(ArchiveError::BadManifest {
                    line: line_no,
                    detail: format!("unparseable line {line:?}"),
                })
            }
        }
    }
}

fn parse_dir_entry(spec: &str, line: usize) -> Result<DirEntry, ArchiveError> {
    let bad = |detail: String| ArchiveError::BadManifest { line, detail };
    let parts: Vec<&str> = spec.split(' ').collect();
    if parts.len() != 5 {
        return Err(bad(format!("tensor entry needs 5 fields, got {}", parts.len())));
    }
    let shape = if parts[2] == "-" {
        Vec::new()
    } else {
        parts[2]
            .split(',')
            .map(|d| d.parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| bad(format!("bad shape {:?}", parts[2])))?
    };
    Ok(DirEntry {
        name: parts[0].to_string(),
        shape,
        offset: parts[3]
            .parse()
            .map_err(|_| bad(format!("bad offset {:?}", parts[3])))?,
        len: parts[4]
            .parse()
            .map_err(|_| bad(format!("bad length {:?}", parts[4])))?,
        line,
    })
}
