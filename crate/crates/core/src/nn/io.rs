//! Model file layout:
//!
//! ```text
//! b"MEFCAST1" | u64 LE length of the model spec JSON | model spec JSON |
//! parameter tensors in path-sorted order, each as contiguous f64 LE
//! ```
//!
//! Tensor shapes are recomputed from the model spec on load.

use std::io::{Read, Write};

use super::{ModelParams, ModelSpec, NnError, Result, Tensor};

pub const MODEL_MAGIC: &[u8; 8] = b"MEFCAST1";

pub fn save_model<W: Write>(spec: &ModelSpec, params: &ModelParams, mut out: W) -> Result<()> {
    params.check_against(spec)?;
    let json = serde_json::to_vec(spec).map_err(|e| NnError::Format(e.to_string()))?;
    out.write_all(MODEL_MAGIC)?;
    out.write_all(&(json.len() as u64).to_le_bytes())?;
    out.write_all(&json)?;
    for t in params.tensors.values() {
        for v in t.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn load_model<R: Read>(mut input: R) -> Result<(ModelSpec, ModelParams)> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MODEL_MAGIC {
        return Err(NnError::Format("bad magic".into()));
    }
    let mut len = [0u8; 8];
    input.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len) as usize;
    if len > 1 << 24 {
        return Err(NnError::Format(format!("spec header of {len} bytes")));
    }
    let mut json = vec![0u8; len];
    input.read_exact(&mut json)?;
    let spec: ModelSpec = serde_json::from_slice(&json).map_err(|e| NnError::Format(e.to_string()))?;

    let mut shapes = spec.param_shapes()?;
    shapes.sort_by(|a, b| a.0.cmp(&b.0));
    let mut params = ModelParams { tensors: Default::default() };
    for (path, shape) in shapes {
        let n: usize = shape.iter().product();
        let mut buf = vec![0u8; n * 8];
        input.read_exact(&mut buf).map_err(|e| NnError::Format(format!("{path}: {e}")))?;
        let data = buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        params.tensors.insert(path, Tensor::new(shape, data)?);
    }
    let mut rest = Vec::new();
    input.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(NnError::Format(format!("{} trailing bytes", rest.len())));
    }
    Ok((spec, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init_params;

    #[test]
    fn save_load_bit_identical() {
        let spec = ModelSpec::default_architecture(11);
        let params = init_params(&spec).unwrap();
        let mut buf = Vec::new();
        save_model(&spec, &params, &mut buf).unwrap();
        assert_eq!(&buf[..8], b"MEFCAST1");
        let (s2, p2) = load_model(buf.as_slice()).unwrap();
        assert_eq!(s2, spec);
        assert_eq!(p2, params);

        let mut again = Vec::new();
        save_model(&s2, &p2, &mut again).unwrap();
        assert_eq!(again, buf);
    }

    #[test]
    fn truncated_or_foreign_files_fail() {
        let spec = ModelSpec::default_architecture(1);
        let params = init_params(&spec).unwrap();
        let mut buf = Vec::new();
        save_model(&spec, &params, &mut buf).unwrap();
        assert!(load_model(&buf[..buf.len() - 8]).is_err());
        let mut longer = buf.clone();
        longer.push(0);
        assert!(load_model(longer.as_slice()).is_err());
        assert!(load_model(&b"PK\x03\x04xxxxxxxxxxx"[..]).is_err());
    }
}
