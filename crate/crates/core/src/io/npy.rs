//! Reader/writer for the NPY 1.0 subset used here: little-endian `f4`, `f8`
//! and `i8` arrays in C order.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{MessiError, Result};
use crate::linalg::Matrix;

const MAGIC: &[u8; 6] = b"\x93NUMPY";
/// Header (magic + version + length + dict) is padded to this alignment.
const ALIGN: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub enum NpyData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    I64(Vec<i64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NpyArray {
    pub shape: Vec<usize>,
    pub data: NpyData,
}

fn format_err(path: &Path, msg: impl std::fmt::Display) -> MessiError {
    MessiError::Format(format!("{}: {msg}", path.display()))
}

/// Parses an NPY 1.0 file from memory. `path` is only used in messages.
pub fn parse_npy(bytes: &[u8], path: &Path) -> Result<NpyArray> {
    if bytes.len() < 10 || &bytes[..6] != MAGIC {
        return Err(format_err(path, "bad magic: not an NPY file"));
    }
    if bytes[6] != 1 || bytes[7] != 0 {
        return Err(format_err(
            path,
            format!("unsupported version {}.{} (only 1.0)", bytes[6], bytes[7]),
        ));
    }
    let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let body_start = 10 + header_len;
    if bytes.len() < body_start {
        return Err(format_err(path, "header length runs past end of file"));
    }
    let header = std::str::from_utf8(&bytes[10..body_start])
        .map_err(|_| format_err(path, "header is not ASCII"))?;
    let header = Header::parse(header).map_err(|e| format_err(path, e))?;
    if header.fortran_order {
        return Err(format_err(path, "fortran_order True is not supported"));
    }
    let count: usize = header.shape.iter().product();
    let body = &bytes[body_start..];
    let width = match header.descr.as_str() {
        "<f4" => 4,
        "<f8" | "<i8" => 8,
        other => {
            return Err(format_err(
                path,
                format!("unsupported descr '{other}' (expected '<f4', '<f8' or '<i8')"),
            ))
        }
    };
    if body.len() != count * width {
        return Err(format_err(
            path,
            format!(
                "shape {:?} needs {} data bytes, found {}",
                header.shape,
                count * width,
                body.len()
            ),
        ));
    }
    let data = match header.descr.as_str() {
        "<f4" => NpyData::F32(
            body.chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect(),
        ),
        "<f8" => NpyData::F64(
            body.chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect(),
        ),
        _ => NpyData::I64(
            body.chunks_exact(8)
                .map(|c| i64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect(),
        ),
    };
    Ok(NpyArray {
        shape: header.shape,
        data,
    })
}

pub fn read_npy(path: &Path) -> Result<NpyArray> {
    let bytes = fs::read(path).map_err(|e| MessiError::io(path, e))?;
    parse_npy(&bytes, path)
}

/// Serializes an array as NPY 1.0.
pub fn encode_npy(shape: &[usize], data: &NpyData) -> Vec<u8> {
    let descr = match data {
        NpyData::F32(_) => "<f4",
        NpyData::F64(_) => "<f8",
        NpyData::I64(_) => "<i8",
    };
    let shape_txt = match shape {
        [one] => format!("({one},)"),
        dims => format!(
            "({})",
            dims.iter().map(usize::to_string).collect::<Vec<_>>().join(", ")
        ),
    };
    let mut header = format!("{{'descr': '{descr}', 'fortran_order': False, 'shape': {shape_txt}, }}");
    let unpadded = 10 + header.len() + 1;
    header.push_str(&" ".repeat((ALIGN - unpadded % ALIGN) % ALIGN));
    header.push('\n');

    let mut out = Vec::with_capacity(10 + header.len() + 8 * shape.iter().product::<usize>());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(header.len() as u16).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    match data {
        NpyData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        NpyData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        NpyData::I64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
    }
    out
}

/// Writes `bytes` to `path` through a temporary file in the same directory,
/// so readers never observe a half-written file.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| MessiError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| MessiError::io(path, e))?;
    tmp.persist(path).map_err(|e| MessiError::io(path, e.error))?;
    Ok(())
}

pub fn write_npy(path: &Path, shape: &[usize], data: &NpyData) -> Result<()> {
    write_atomic(path, &encode_npy(shape, data))
}

/// Loads a 2-D `<f4`/`<f8` array as a matrix; `f4` values are widened exactly.
pub fn load_matrix(path: &Path) -> Result<Matrix> {
    let arr = read_npy(path)?;
    matrix_from_npy(arr, path)
}

pub(crate) fn matrix_from_npy(arr: NpyArray, path: &Path) -> Result<Matrix> {
    let [rows, cols] = arr.shape[..] else {
        return Err(format_err(
            path,
            format!("shape {:?} is not 2-dimensional", arr.shape),
        ));
    };
    let data = match arr.data {
        NpyData::F64(v) => v,
        NpyData::F32(v) => v.into_iter().map(f64::from).collect(),
        NpyData::I64(_) => {
            return Err(format_err(path, "descr '<i8' is not a real matrix (expected '<f4' or '<f8')"))
        }
    };
    Matrix::new(rows, cols, data).map_err(|e| match e {
        MessiError::Input(msg) => MessiError::Input(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Writes a matrix as `<f8`.
pub fn save_matrix(m: &Matrix, path: &Path) -> Result<()> {
    write_npy(path, &[m.rows(), m.cols()], &NpyData::F64(m.data().to_vec()))
}

/// Reads a 1-D `<i8` array of non-negative ids.
pub fn load_ids(path: &Path) -> Result<Vec<usize>> {
    let arr = read_npy(path)?;
    if arr.shape.len() != 1 {
        return Err(format_err(path, format!("shape {:?} is not 1-dimensional", arr.shape)));
    }
    let NpyData::I64(v) = arr.data else {
        return Err(format_err(path, "expected descr '<i8' for an id array"));
    };
    v.into_iter()
        .map(|x| usize::try_from(x).map_err(|_| format_err(path, format!("negative id {x}"))))
        .collect()
}

pub fn save_ids(ids: &[usize], path: &Path) -> Result<()> {
    write_npy(
        path,
        &[ids.len()],
        &NpyData::I64(ids.iter().map(|&x| x as i64).collect()),
    )
}

#[derive(Debug)]
struct Header {
    descr: String,
    fortran_order: bool,
    shape: Vec<usize>,
}

impl Header {
    /// Parses the Python dict literal of an NPY header.
    fn parse(text: &str) -> std::result::Result<Self, String> {
        let body = text
            .trim_end_matches(['\n', ' ', '\0'])
            .trim()
            .strip_prefix('{')
            .and_then(|s| s.strip_suffix('}'))
            .ok_or("header is not a dict literal")?;
        let mut descr = None;
        let mut fortran = None;
        let mut shape = None;
        let mut rest = body.trim();
        while !rest.is_empty() {
            let (key, after) = take_quoted(rest).ok_or("malformed header key")?;
            let after = after.trim_start().strip_prefix(':').ok_or("missing ':' in header")?.trim_start();
            let (value, after) = match key {
                "descr" => {
                    let (v, a) = take_quoted(after).ok_or("field 'descr' is not a string")?;
                    descr = Some(v.to_string());
                    (v, a)
                }
                "fortran_order" => {
                    if let Some(a) = after.strip_prefix("False") {
                        fortran = Some(false);
                        ("False", a)
                    } else if let Some(a) = after.strip_prefix("True") {
                        fortran = Some(true);
                        ("True", a)
                    } else {
                        return Err("field 'fortran_order' is not a boolean".into());
                    }
                }
                "shape" => {
                    let inner = after.strip_prefix('(').ok_or("field 'shape' is not a tuple")?;
                    let close = inner.find(')').ok_or("field 'shape' is not closed")?;
                    let dims = inner[..close]
                        .split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(|s| s.parse::<usize>().map_err(|_| format!("bad shape entry '{s}'")))
                        .collect::<std::result::Result<Vec<_>, _>>()?;
                    shape = Some(dims);
                    ("", &inner[close + 1..])
                }
                other => return Err(format!("unexpected header key '{other}'")),
            };
            let _ = value;
            rest = after.trim_start();
            rest = rest.strip_prefix(',').unwrap_or(rest).trim_start();
        }
        Ok(Header {
            descr: descr.ok_or("header lacks 'descr'")?,
            fortran_order: fortran.ok_or("header lacks 'fortran_order'")?,
            shape: shape.ok_or("header lacks 'shape'")?,
        })
    }
}

fn take_quoted(s: &str) -> Option<(&str, &str)> {
    let quote = s.chars().next().filter(|c| *c == '\'' || *c == '"')?;
    let inner = &s[1..];
    let end = inner.find(quote)?;
    Some((&inner[..end], &inner[end + 1..]))
}
