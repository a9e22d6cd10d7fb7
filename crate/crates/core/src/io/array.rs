//! Raw array files: one UTF-8 JSON header line, then little-endian values
//! in row-major order.
//!
//! ```text
//! {"shape":[8,32,32],"dtype":"f64","byte_order":"LE","role":"scene"}\n
//! <8*32*32*8 bytes>
//! ```

use std::fs;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementType {
    F32,
    F64,
}

impl ElementType {
    pub fn size(self) -> usize {
        match self {
            ElementType::F32 => 4,
            ElementType::F64 => 8,
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(ElementType::F32),
            "f64" => Ok(ElementType::F64),
            other => Err(Error::UnsupportedElementType(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrayHeader {
    pub shape: Vec<usize>,
    pub dtype: ElementType,
    pub byte_order: String,
    #[serde(default)]
    pub role: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawHeader {
    shape: Vec<usize>,
    dtype: String,
    byte_order: String,
    #[serde(default)]
    role: String,
}

impl ArrayHeader {
    pub fn payload_len(&self) -> usize {
        self.shape.iter().product::<usize>() * self.dtype.size()
    }
}

/// Writes `array` as f64.
pub fn save_array(path: &Path, array: &ArrayD<f64>, role: &str) -> Result<()> {
    save_array_as(path, array, role, ElementType::F64)
}

pub fn save_array_as(path: &Path, array: &ArrayD<f64>, role: &str, dtype: ElementType) -> Result<()> {
    let header = ArrayHeader {
        shape: array.shape().to_vec(),
        dtype,
        byte_order: "LE".into(),
        role: role.into(),
    };
    let mut bytes = serde_json::to_vec(&header).expect("header serialises");
    bytes.push(b'\n');
    bytes.reserve(header.payload_len());
    for &v in array.iter() {
        match dtype {
            ElementType::F32 => bytes.extend_from_slice(&(v as f32).to_le_bytes()),
            ElementType::F64 => bytes.extend_from_slice(&v.to_le_bytes()),
        }
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_array(path: &Path) -> Result<(ArrayHeader, ArrayD<f64>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let malformed = |message: String| Error::MalformedHeader {
        path: path.to_path_buf(),
        message,
    };
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| malformed("no newline after header".into()))?;
    let text = std::str::from_utf8(&bytes[..newline]).map_err(|e| malformed(e.to_string()))?;
    let raw: RawHeader = serde_json::from_str(text).map_err(|e| malformed(e.to_string()))?;
    if raw.byte_order != "LE" {
        return Err(malformed(format!("byte order `{}` (only LE is supported)", raw.byte_order)));
    }
    let header = ArrayHeader {
        shape: raw.shape,
        dtype: ElementType::parse(&raw.dtype)?,
        byte_order: raw.byte_order,
        role: raw.role,
    };
    let payload = &bytes[newline + 1..];
    let expected = header.payload_len();
    if payload.len() < expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected,
            actual: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(malformed(format!(
            "payload has {} bytes but the header implies {expected}",
            payload.len()
        )));
    }
    let values: Vec<f64> = match header.dtype {
        ElementType::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        ElementType::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };
    let array = ArrayD::from_shape_vec(IxDyn(&header.shape), values).map_err(|e| malformed(e.to_string()))?;
    Ok((header, array))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use rand::Rng;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cube.arr");
        let mut rng = crate::rng::seeded(3);
        let cube = Array3::from_shape_fn((8, 8, 3), |_| rng.random::<f64>() * 2.0 - 0.5).into_dyn();
        save_array(&path, &cube, "scene").unwrap();
        let (header, back) = load_array(&path).unwrap();
        assert_eq!(header.shape, vec![8, 8, 3]);
        assert_eq!(header.role, "scene");
        assert!(cube.iter().zip(back.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn header_line_is_plain_json() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.arr");
        save_array(&path, &ArrayD::zeros(IxDyn(&[2, 3])), "y").unwrap();
        let bytes = fs::read(&path).unwrap();
        let line = String::from_utf8(bytes[..bytes.iter().position(|&b| b == b'\n').unwrap()].to_vec()).unwrap();
        assert_eq!(line, r#"{"shape":[2,3],"dtype":"f64","byte_order":"LE","role":"y"}"#);
        assert_eq!(bytes.len(), line.len() + 1 + 48);
    }

    #[test]
    fn f32_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.arr");
        let a = ArrayD::from_shape_vec(IxDyn(&[3]), vec![0.5, -1.25, 3.0]).unwrap();
        save_array_as(&path, &a, "", ElementType::F32).unwrap();
        let (h, b) = load_array(&path).unwrap();
        assert_eq!(h.dtype, ElementType::F32);
        assert_eq!(b, a);
    }

    #[test]
    fn truncation_names_byte_counts() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.arr");
        save_array(&path, &ArrayD::zeros(IxDyn(&[4, 4])), "").unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        let err = load_array(&path).unwrap_err();
        assert!(matches!(err, Error::Truncated { expected: 128, actual: 123, .. }), "{err}");
        assert!(err.to_string().contains("128") && err.to_string().contains("123"));
    }

    #[test]
    fn empty_shape_loads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.arr");
        fs::write(&path, b"{\"shape\":[0],\"dtype\":\"f64\",\"byte_order\":\"LE\",\"role\":\"\"}\n").unwrap();
        let (_, a) = load_array(&path).unwrap();
        assert_eq!(a.shape(), &[0]);
    }

    #[test]
    fn bad_headers_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.arr");
        let cases: [(&[u8], fn(&Error) -> bool); 5] = [
            (b"not json\n", |e| matches!(e, Error::MalformedHeader { .. })),
            (b"{\"shape\":[1],\"dtype\":\"f64\",\"byte_order\":\"LE\"}", |e| {
                matches!(e, Error::MalformedHeader { .. })
            }),
            (b"{\"shape\":[1],\"dtype\":\"i16\",\"byte_order\":\"LE\"}\n\0\0", |e| {
                matches!(e, Error::UnsupportedElementType(t) if t == "i16")
            }),
            (b"{\"shape\":[1],\"dtype\":\"f64\",\"byte_order\":\"BE\"}\n\0\0\0\0\0\0\0\0", |e| {
                matches!(e, Error::MalformedHeader { .. })
            }),
            (b"{\"shape\":[1],\"dtype\":\"f64\",\"byte_order\":\"LE\",\"extra\":1}\n\0\0\0\0\0\0\0\0", |e| {
                matches!(e, Error::MalformedHeader { .. })
            }),
        ];
        for (bytes, check) in cases {
            fs::write(&path, bytes).unwrap();
            let err = load_array(&path).unwrap_err();
            assert!(check(&err), "{err}");
        }
    }
}
