//! Checkpoint layout (little-endian):
//!
//! ```text
//! "AUNN" | u8 version | u32 len | header JSON | u32 tensor count
//! per tensor: u32 len | name | u8 rank | u32 extents[rank] | f32 data
//! ```
//!
//! The header JSON is the architecture descriptor with two extra keys:
//! `rng_seed` and, when supplied, `provenance`.

use serde_json::{Map, Value};

use super::descriptor::ArchitectureDescriptor;
use super::network::{NamedTensor, Network};
use super::tensor::{Scalar, Tensor};
use super::NetError;

pub const MAGIC: &[u8; 4] = b"AUNN";
pub const VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointHeader {
    pub descriptor: ArchitectureDescriptor,
    pub rng_seed: u64,
    pub provenance: Option<Value>,
}

/// Serialize with parameters stored as f32.
pub fn save_checkpoint<T: Scalar>(net: &Network<T>, provenance: Option<&Value>) -> Vec<u8> {
    let mut header = match serde_json::to_value(net.descriptor()) {
        Ok(Value::Object(m)) => m,
        _ => Map::new(),
    };
    header.insert("rng_seed".into(), Value::from(net.seed()));
    if let Some(p) = provenance {
        header.insert("provenance".into(), p.clone());
    }
    let json = serde_json::to_vec(&Value::Object(header)).expect("JSON values serialize");

    let mut out = Vec::with_capacity(64 + json.len() + 4 * net.param_count());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(net.params().len() as u32).to_le_bytes());
    for p in net.params() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.push(p.tensor.dims().len() as u8);
        for &d in p.tensor.dims() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in p.tensor.data() {
            out.extend_from_slice(&(v.f64() as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NetError> {
        let end = self.pos.checked_add(n).ok_or(NetError::Truncated)?;
        let s = self.bytes.get(self.pos..end).ok_or(NetError::Truncated)?;
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, NetError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, NetError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Parse a checkpoint; nothing is returned unless every byte checks out.
pub fn load_checkpoint(bytes: &[u8]) -> Result<(Network<f32>, CheckpointHeader), NetError> {
    let n = bytes.len().min(4);
    if bytes[..n] != MAGIC[..n] {
        return Err(NetError::BadMagic);
    }
    let mut r = Reader { bytes, pos: 0 };
    r.take(4)?;
    let version = r.u8()?;
    if version != VERSION {
        return Err(NetError::VersionMismatch(version));
    }
    let hlen = r.u32()? as usize;
    let mut header: Map<String, Value> =
        serde_json::from_slice(r.take(hlen)?).map_err(|e| NetError::BadHeader(e.to_string()))?;
    let rng_seed = match header.remove("rng_seed") {
        Some(v) => v.as_u64().ok_or_else(|| NetError::BadHeader("rng_seed is not an integer".into()))?,
        None => 0,
    };
    let provenance = header.remove("provenance");
    let descriptor: ArchitectureDescriptor =
        serde_json::from_value(Value::Object(header)).map_err(|e| NetError::BadHeader(e.to_string()))?;
    descriptor.validate()?;

    let count = r.u32()? as usize;
    let mut params = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let nlen = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(nlen)?)
            .map_err(|_| NetError::BadHeader("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u8()? as usize;
        let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let len = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or(NetError::Truncated)?;
        let raw = r.take(len.checked_mul(4).ok_or(NetError::Truncated)?)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        params.push(NamedTensor { name, tensor: Tensor::from_vec(&dims, data)? });
    }
    if r.pos != bytes.len() {
        return Err(NetError::BadHeader(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let net = Network::from_parts(descriptor.clone(), params, rng_seed)?;
    Ok((net, CheckpointHeader { descriptor, rng_seed, provenance }))
}

/// Load and require the given architecture.
pub fn load_checkpoint_as(
    bytes: &[u8],
    expected: &ArchitectureDescriptor,
) -> Result<(Network<f32>, CheckpointHeader), NetError> {
    let (net, header) = load_checkpoint(bytes)?;
    if &header.descriptor != expected {
        return Err(NetError::ShapeMismatch(format!(
            "checkpoint holds a {} network, expected {}",
            header.descriptor.variant.name(),
            expected.variant.name()
        )));
    }
    Ok((net, header))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuralnet::descriptor::Variant;

    #[test]
    fn round_trip_is_bit_exact() {
        let d = ArchitectureDescriptor::small(Variant::ThreeClass);
        let net = Network::<f32>::init(&d, 42).unwrap();
        let prov = serde_json::json!({"tool": "test", "epochs": 3});
        let bytes = save_checkpoint(&net, Some(&prov));
        let (back, header) = load_checkpoint(&bytes).unwrap();
        assert_eq!(back, net);
        assert_eq!(header.rng_seed, 42);
        assert_eq!(header.provenance, Some(prov.clone()));
        assert_eq!(save_checkpoint(&back, Some(&prov)), bytes);
    }

    #[test]
    fn every_truncation_fails_cleanly() {
        let net = Network::<f32>::init(&ArchitectureDescriptor::small(Variant::Binary), 1).unwrap();
        let bytes = save_checkpoint(&net, None);
        for cut in 0..bytes.len() {
            match load_checkpoint(&bytes[..cut]) {
                Err(NetError::Truncated) | Err(NetError::BadMagic) | Err(NetError::BadHeader(_)) => {}
                other => panic!("cut {cut}: {other:?}"),
            }
        }
    }

    #[test]
    fn header_errors() {
        let net = Network::<f32>::init(&ArchitectureDescriptor::small(Variant::Binary), 1).unwrap();
        let mut bytes = save_checkpoint(&net, None);
        assert!(matches!(load_checkpoint(b"NOPE...."), Err(NetError::BadMagic)));
        bytes[4] = 2;
        assert!(matches!(load_checkpoint(&bytes), Err(NetError::VersionMismatch(2))));
    }

    #[test]
    fn variant_mismatch() {
        let net = Network::<f32>::init(&ArchitectureDescriptor::small(Variant::Binary), 1).unwrap();
        let bytes = save_checkpoint(&net, None);
        let want = ArchitectureDescriptor::small(Variant::ThreeClass);
        assert!(matches!(load_checkpoint_as(&bytes, &want), Err(NetError::ShapeMismatch(_))));
    }
}
