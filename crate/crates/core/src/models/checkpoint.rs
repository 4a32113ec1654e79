//! Model checkpoint container.
//!
//! ```text
//! magic      b"HYFC"
//! version    u16                       (currently 1)
//! header     u32 length + UTF-8 text   one `key=value` line per spec field, keys sorted
//! tensors    u32 count, then per tensor:
//!              u16 length + UTF-8 name
//!              u8 rank, rank × u32 dims
//!              prod(dims) × f32
//! ```
//!
//! All integers and floats are little-endian.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::{FusionOrder, ModelError, ModelParams, ModelSpec, Result};
use crate::autodiff::Tensor;
use crate::binio::{put_f32s, put_str16, put_u16, put_u32, Reader};
use crate::hypergeom::PoincareConfig;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"HYFC";
pub const CHECKPOINT_VERSION: u16 = 1;

fn header_lines(spec: &ModelSpec) -> BTreeMap<&'static str, String> {
    let join = |v: &[usize]| {
        v.iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join(",")
    };
    BTreeMap::from([
        ("ball_epsilon", spec.poincare.ball_epsilon.to_string()),
        (
            "conv_filters",
            join(&[spec.conv_filters.0, spec.conv_filters.1]),
        ),
        ("curvature", spec.poincare.curvature.to_string()),
        ("dropout_rate", spec.dropout_rate.to_string()),
        ("fusion_order", spec.fusion_order.as_str().to_string()),
        ("fusion_width", spec.fusion_width.to_string()),
        ("hidden_units", spec.hidden_units.to_string()),
        ("input_dims", join(&spec.input_dims)),
        ("kernel_size", spec.kernel_size.to_string()),
        ("kind", spec.kind.as_str().to_string()),
        ("num_classes", spec.num_classes.to_string()),
    ])
}

/// Canonical `key=value` rendering of a spec (sorted keys, one per line).
pub fn spec_header(spec: &ModelSpec) -> String {
    header_lines(spec)
        .into_iter()
        .map(|(k, v)| format!("{k}={v}\n"))
        .collect()
}

fn bad(msg: impl Into<String>) -> ModelError {
    ModelError::Checkpoint(msg.into())
}

fn parse_spec(text: &str) -> Result<ModelSpec> {
    let mut kv = BTreeMap::new();
    for line in text.lines().filter(|l| !l.is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| bad(format!("malformed header line {line:?}")))?;
        kv.insert(k, v);
    }
    let get = |k: &str| kv.get(k).copied().ok_or_else(|| bad(format!("header misses {k}")));
    let num = |k: &str| -> Result<usize> {
        get(k)?
            .parse()
            .map_err(|_| bad(format!("header field {k} is not an integer")))
    };
    let float = |k: &str| -> Result<f64> {
        get(k)?
            .parse()
            .map_err(|_| bad(format!("header field {k} is not a number")))
    };
    let list = |k: &str| -> Result<Vec<usize>> {
        get(k)?
            .split(',')
            .map(|s| s.parse().map_err(|_| bad(format!("header field {k} is malformed"))))
            .collect()
    };
    let filters = list("conv_filters")?;
    let [f1, f2] = filters[..] else {
        return Err(bad("conv_filters needs two entries"));
    };
    let spec = ModelSpec {
        kind: get("kind")?.parse()?,
        input_dims: list("input_dims")?,
        num_classes: num("num_classes")?,
        hidden_units: num("hidden_units")?,
        conv_filters: (f1, f2),
        kernel_size: num("kernel_size")?,
        dropout_rate: float("dropout_rate")?,
        fusion_width: num("fusion_width")?,
        fusion_order: get("fusion_order")?.parse::<FusionOrder>()?,
        poincare: PoincareConfig {
            curvature: float("curvature")?,
            ball_epsilon: float("ball_epsilon")?,
        },
    };
    spec.validate()?;
    Ok(spec)
}

pub fn encode_checkpoint(spec: &ModelSpec, params: &ModelParams<f32>) -> Result<Vec<u8>> {
    params.check_against(spec)?;
    let header = spec_header(spec);
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u16(&mut out, CHECKPOINT_VERSION);
    put_u32(&mut out, header.len() as u32);
    out.extend_from_slice(header.as_bytes());
    put_u32(&mut out, params.len() as u32);
    for (name, t) in params.iter() {
        put_str16(&mut out, name);
        out.push(t.shape().len() as u8);
        for &d in t.shape() {
            put_u32(&mut out, d as u32);
        }
        put_f32s(&mut out, t.data());
    }
    Ok(out)
}

pub fn decode_checkpoint(buf: &[u8]) -> Result<(ModelSpec, ModelParams<f32>)> {
    let truncated = || bad("truncated checkpoint");
    let mut r = Reader::new(buf);
    if r.bytes(4).ok_or_else(truncated)? != CHECKPOINT_MAGIC {
        return Err(bad("bad magic, not a checkpoint"));
    }
    let version = r.u16().ok_or_else(truncated)?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    let header_len = r.u32().ok_or_else(truncated)? as usize;
    let header = std::str::from_utf8(r.bytes(header_len).ok_or_else(truncated)?)
        .map_err(|_| bad("header is not UTF-8"))?;
    let spec = parse_spec(header)?;

    let count = r.u32().ok_or_else(truncated)?;
    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let name_len = r.u16().ok_or_else(truncated)? as usize;
        let name = std::str::from_utf8(r.bytes(name_len).ok_or_else(truncated)?)
            .map_err(|_| bad("tensor name is not UTF-8"))?
            .to_string();
        let rank = r.u8().ok_or_else(truncated)? as usize;
        let shape = (0..rank)
            .map(|_| r.u32().map(|d| d as usize).ok_or_else(truncated))
            .collect::<Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        if len.saturating_mul(4) > r.remaining() {
            return Err(truncated());
        }
        let data = (0..len)
            .map(|_| r.f32().ok_or_else(truncated))
            .collect::<Result<Vec<_>>>()?;
        tensors.insert(name, Tensor::new(shape, data)?);
    }
    if r.remaining() != 0 {
        return Err(bad(format!("{} trailing bytes", r.remaining())));
    }
    let params = ModelParams::from_map(tensors);
    params.check_against(&spec)?;
    Ok((spec, params))
}

pub fn save_checkpoint(path: impl AsRef<Path>, spec: &ModelSpec, params: &ModelParams<f32>) -> Result<()> {
    fs::write(path, encode_checkpoint(spec, params)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(ModelSpec, ModelParams<f32>)> {
    decode_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::build;

    #[test]
    fn roundtrip_is_bit_exact() {
        let mut spec = ModelSpec::hyfuse(20, 12, 3);
        spec.poincare.curvature = 0.37;
        spec.dropout_rate = 0.125;
        spec.fusion_order = FusionOrder::BFirst;
        let params = build::<f32>(&spec, 5).unwrap();
        let bytes = encode_checkpoint(&spec, &params).unwrap();
        let (spec2, params2) = decode_checkpoint(&bytes).unwrap();
        assert_eq!(spec, spec2);
        assert_eq!(encode_checkpoint(&spec2, &params2).unwrap(), bytes);
    }

    #[test]
    fn header_is_sorted_key_value() {
        let h = spec_header(&ModelSpec::fcn(8, 2));
        let keys: Vec<&str> = h.lines().map(|l| l.split('=').next().unwrap()).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
        assert!(h.contains("kind=fcn\n"));
    }

    #[test]
    fn corrupt_inputs_rejected() {
        let spec = ModelSpec::fcn(8, 2);
        let params = build::<f32>(&spec, 0).unwrap();
        let bytes = encode_checkpoint(&spec, &params).unwrap();
        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(decode_checkpoint(&bad_magic).is_err());
        assert!(decode_checkpoint(&bytes[..bytes.len() - 3]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_checkpoint(&extra).is_err());
    }
}
