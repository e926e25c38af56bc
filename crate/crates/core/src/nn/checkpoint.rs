use std::io::{Read, Write};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{ParamStore, Real};
use crate::error::{Error, Result};

pub const PARAM_FILE_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"CCATPRM\0";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamShape {
    pub name: String,
    pub shape: [usize; 2],
}

/// JSON header of a parameter file. `extra` carries whatever the caller wants
/// to persist next to the tensors (schema, config, ...).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamFileHeader {
    pub format_version: u32,
    pub schema_hash: String,
    pub params: Vec<ParamShape>,
    #[serde(default)]
    pub extra: serde_json::Value,
}

/// Layout: 8-byte magic, little-endian `u64` header length, UTF-8 JSON header,
/// then every parameter as little-endian `f32` in header order (row-major).
pub fn write_param_file<T: Real, W: Write>(
    mut out: W,
    store: &ParamStore<T>,
    schema_hash: &str,
    extra: serde_json::Value,
) -> Result<()> {
    let header = ParamFileHeader {
        format_version: PARAM_FILE_VERSION,
        schema_hash: schema_hash.to_string(),
        params: store
            .iter()
            .map(|p| ParamShape {
                name: p.name.clone(),
                shape: [p.value.nrows(), p.value.ncols()],
            })
            .collect(),
        extra,
    };
    let json = serde_json::to_vec(&header)?;
    out.write_all(MAGIC)?;
    out.write_all(&(json.len() as u64).to_le_bytes())?;
    out.write_all(&json)?;
    let mut buf = Vec::with_capacity(store.count() * 4);
    for p in store.iter() {
        for v in p.value.iter() {
            buf.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_param_file<T: Real, R: Read>(mut input: R) -> Result<(ParamFileHeader, ParamStore<T>)> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("not a parameter file (bad magic)".into()));
    }
    let mut len = [0u8; 8];
    input.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len) as usize;
    let mut json = vec![0u8; len];
    input.read_exact(&mut json)?;
    let header: ParamFileHeader = serde_json::from_slice(&json)?;
    if header.format_version != PARAM_FILE_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported parameter file version {}",
            header.format_version
        )));
    }
    let mut store = ParamStore::new();
    for ps in &header.params {
        let [r, c] = ps.shape;
        let mut bytes = vec![0u8; r * c * 4];
        input.read_exact(&mut bytes).map_err(|_| {
            Error::Checkpoint(format!("truncated payload for parameter {}", ps.name))
        })?;
        let values: Vec<T> = bytes
            .chunks_exact(4)
            .map(|b| T::lit(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64))
            .collect();
        let arr =
            Array2::from_shape_vec((r, c), values).map_err(|e| Error::Checkpoint(e.to_string()))?;
        store.add(ps.name.clone(), arr);
    }
    let mut rest = Vec::new();
    input.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after payload",
            rest.len()
        )));
    }
    Ok((header, store))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Rng;

    #[test]
    fn roundtrip_is_bit_exact_for_f32() {
        let mut rng = Rng::new(3);
        let mut store = ParamStore::<f32>::new();
        store.add("a", Array2::from_shape_fn((3, 2), |_| rng.normal() as f32));
        store.add("b", Array2::from_shape_fn((1, 5), |_| rng.normal() as f32));
        let mut buf = Vec::new();
        write_param_file(&mut buf, &store, "abc", serde_json::json!({"k": 1})).unwrap();
        let (header, back) = read_param_file::<f32, _>(buf.as_slice()).unwrap();
        assert_eq!(header.schema_hash, "abc");
        assert_eq!(header.extra["k"], 1);
        assert_eq!(header.params[0].shape, [3, 2]);
        for (x, y) in store.iter().zip(back.iter()) {
            assert_eq!(x.name, y.name);
            assert_eq!(x.value, y.value);
        }
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let mut store = ParamStore::<f32>::new();
        store.add("a", Array2::zeros((2, 2)));
        let mut buf = Vec::new();
        write_param_file(&mut buf, &store, "h", serde_json::Value::Null).unwrap();
        assert!(read_param_file::<f32, _>(&buf[..buf.len() - 1]).is_err());
        let mut longer = buf.clone();
        longer.push(0);
        assert!(read_param_file::<f32, _>(longer.as_slice()).is_err());
        buf[0] = b'X';
        assert!(read_param_file::<f32, _>(buf.as_slice()).is_err());
    }
}
