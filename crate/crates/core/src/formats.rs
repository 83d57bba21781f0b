//! Little-endian binary artifacts, each closed by a CRC32 (IEEE) of every
//! preceding byte.
//!
//! | magic  | contents                                   |
//! |--------|--------------------------------------------|
//! | `FMDL` | toy network weights                        |
//! | `FMAP` | per-row rewiring directives of one layer   |
//! | `FSHD` | pre-scaled shadow weights of one layer     |

use crate::compiler::{FarAction, FarMap, FarMapEntry, ShadowStore};
use crate::error::{BlobError, ModelError};
use crate::half::Fp16;
use crate::model::{Activation, LinearLayer, ToyNetwork};

pub const FORMAT_VERSION: u8 = 1;
pub const FMDL_MAGIC: &[u8; 4] = b"FMDL";
pub const FMAP_MAGIC: &[u8; 4] = b"FMAP";
pub const FSHD_MAGIC: &[u8; 4] = b"FSHD";

/// Size of one serialized FaRMap entry.
pub const FMAP_ENTRY_BYTES: usize = 2 + 2 + 1 + 2 + 1 + 2;
/// Magic, version, layer id, fan-in, fan-out, entry count, CRC.
pub const FMAP_FIXED_BYTES: usize = 4 + 1 + 2 + 2 + 2 + 4 + 4;
/// Magic, version, count, CRC.
pub const FSHD_FIXED_BYTES: usize = 4 + 1 + 4 + 4;

pub fn fmap_size(entries: usize) -> usize {
    FMAP_FIXED_BYTES + entries * FMAP_ENTRY_BYTES
}

pub fn fshd_size(values: usize) -> usize {
    FSHD_FIXED_BYTES + values * 2
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new(magic: &[u8; 4]) -> Self {
        let mut buf = Vec::new();
        buf.extend_from_slice(magic);
        buf.push(FORMAT_VERSION);
        Self { buf }
    }
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn finish(mut self) -> Vec<u8> {
        let crc = crc32fast::hash(&self.buf);
        self.buf.extend_from_slice(&crc.to_le_bytes());
        self.buf
    }
}

struct Reader<'a> {
    body: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    /// Checks magic, CRC and version, in that order.
    fn open(bytes: &'a [u8], magic: &'static [u8; 4], name: &'static str) -> Result<Self, BlobError> {
        if bytes.len() < 4 + 1 + 4 {
            return Err(BlobError::Truncated);
        }
        if &bytes[..4] != magic {
            return Err(BlobError::Magic { expected: name });
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(BlobError::Crc { stored, computed });
        }
        if body[4] != FORMAT_VERSION {
            return Err(BlobError::Version(body[4]));
        }
        Ok(Self { body, pos: 5 })
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8], BlobError> {
        let end = self.pos.checked_add(n).ok_or(BlobError::Truncated)?;
        if end > self.body.len() {
            return Err(BlobError::Truncated);
        }
        let s = &self.body[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, BlobError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, BlobError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }
    fn u32(&mut self) -> Result<u32, BlobError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn remaining(&self) -> usize {
        self.body.len() - self.pos
    }
    fn done(&self) -> Result<(), BlobError> {
        if self.pos == self.body.len() {
            Ok(())
        } else {
            Err(BlobError::Trailing)
        }
    }
}

pub fn encode_fmdl(net: &ToyNetwork) -> Vec<u8> {
    let mut w = Writer::new(FMDL_MAGIC);
    w.u16(net.layers().len() as u16);
    for l in net.layers() {
        w.u32(l.fan_in() as u32);
        w.u32(l.fan_out() as u32);
        w.u8(l.activation().code());
        for v in l.weights() {
            w.u16(v.0);
        }
        for v in l.bias() {
            w.u16(v.0);
        }
    }
    w.finish()
}

pub fn decode_fmdl(bytes: &[u8]) -> Result<ToyNetwork, ModelError> {
    let mut r = Reader::open(bytes, FMDL_MAGIC, "FMDL")?;
    let count = r.u16()? as usize;
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let fan_in = r.u32()? as usize;
        let fan_out = r.u32()? as usize;
        let code = r.u8()?;
        let activation = Activation::from_code(code)
            .ok_or_else(|| BlobError::Field(format!("activation code {code}")))?;
        let n = fan_in.checked_mul(fan_out).ok_or(BlobError::Truncated)?;
        if n.checked_mul(2).is_none_or(|b| b > r.remaining()) {
            return Err(BlobError::Truncated.into());
        }
        let weights = (0..n).map(|_| r.u16().map(Fp16)).collect::<Result<Vec<_>, _>>()?;
        let bias = (0..fan_out).map(|_| r.u16().map(Fp16)).collect::<Result<Vec<_>, _>>()?;
        layers.push(LinearLayer::new(fan_in, fan_out, weights, bias, activation)?);
    }
    r.done()?;
    ToyNetwork::new(layers)
}

pub fn encode_fmap(map: &FarMap) -> Vec<u8> {
    let mut w = Writer::new(FMAP_MAGIC);
    w.u16(map.layer_id);
    w.u16(map.fan_in as u16);
    w.u16(map.fan_out as u16);
    w.u32(map.entries.len() as u32);
    for e in &map.entries {
        w.u16(e.row as u16);
        w.u16(e.lane as u16);
        match e.action {
            FarAction::Skip => {
                w.u8(0);
                w.u16(0);
                w.u8(0);
                w.u16(0);
            }
            FarAction::Rewire { donor, div, shadow_addr } => {
                w.u8(1);
                w.u16(donor as u16);
                w.u8(div);
                w.u16(shadow_addr as u16);
            }
        }
    }
    w.finish()
}

/// Decodes the container only; semantic checks live in
/// [`FarMap::validate`](crate::compiler::FarMap::validate).
pub fn decode_fmap(bytes: &[u8]) -> Result<FarMap, BlobError> {
    let mut r = Reader::open(bytes, FMAP_MAGIC, "FMAP")?;
    let layer_id = r.u16()?;
    let fan_in = r.u16()? as usize;
    let fan_out = r.u16()? as usize;
    let count = r.u32()? as usize;
    if count.checked_mul(FMAP_ENTRY_BYTES).is_none_or(|b| b != r.remaining()) {
        return Err(if count.saturating_mul(FMAP_ENTRY_BYTES) > r.remaining() {
            BlobError::Truncated
        } else {
            BlobError::Trailing
        });
    }
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let row = r.u16()? as usize;
        let lane = r.u16()? as usize;
        let action = r.u8()?;
        let donor = r.u16()? as usize;
        let div = r.u8()?;
        let shadow_addr = r.u16()? as usize;
        let action = match action {
            0 => {
                if donor != 0 || div != 0 || shadow_addr != 0 {
                    return Err(BlobError::Field(format!(
                        "SKIP entry at row {row}, lane {lane} carries a donor reference"
                    )));
                }
                FarAction::Skip
            }
            1 => FarAction::Rewire { donor, div, shadow_addr },
            other => return Err(BlobError::Field(format!("action code {other}"))),
        };
        entries.push(FarMapEntry { row, lane, action });
    }
    r.done()?;
    Ok(FarMap { layer_id, fan_in, fan_out, entries })
}

pub fn encode_fshd(store: &ShadowStore) -> Vec<u8> {
    let mut w = Writer::new(FSHD_MAGIC);
    w.u32(store.values.len() as u32);
    for v in &store.values {
        w.u16(v.0);
    }
    w.finish()
}

pub fn decode_fshd(bytes: &[u8]) -> Result<ShadowStore, BlobError> {
    let mut r = Reader::open(bytes, FSHD_MAGIC, "FSHD")?;
    let count = r.u32()? as usize;
    if count.checked_mul(2).is_none_or(|b| b != r.remaining()) {
        return Err(if count.saturating_mul(2) > r.remaining() {
            BlobError::Truncated
        } else {
            BlobError::Trailing
        });
    }
    let values = (0..count).map(|_| r.u16().map(Fp16)).collect::<Result<Vec<_>, _>>()?;
    r.done()?;
    Ok(ShadowStore { values })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net() -> ToyNetwork {
        ToyNetwork::random(&[5, 7, 3], Activation::Gelu, 11).unwrap()
    }

    #[test]
    fn fmdl_roundtrip() {
        let n = net();
        let bytes = encode_fmdl(&n);
        assert_eq!(&bytes[..4], b"FMDL");
        assert_eq!(bytes.len(), 4 + 1 + 2 + (9 + 35 * 2 + 7 * 2) + (9 + 21 * 2 + 3 * 2) + 4);
        assert_eq!(decode_fmdl(&bytes).unwrap(), n);
    }

    #[test]
    fn fmdl_rejects_corruption() {
        let mut bytes = encode_fmdl(&net());
        bytes[20] ^= 0x40;
        assert!(matches!(decode_fmdl(&bytes), Err(ModelError::Blob(BlobError::Crc { .. }))));
        assert!(matches!(
            decode_fmdl(&bytes[..3]),
            Err(ModelError::Blob(BlobError::Truncated))
        ));
        let mut bad_magic = encode_fmdl(&net());
        bad_magic[0] = b'X';
        assert!(matches!(decode_fmdl(&bad_magic), Err(ModelError::Blob(BlobError::Magic { .. }))));
    }

    #[test]
    fn fmdl_rejects_bad_version_with_valid_crc() {
        let bytes = encode_fmdl(&net());
        let mut body = bytes[..bytes.len() - 4].to_vec();
        body[4] = 9;
        let crc = crc32fast::hash(&body);
        body.extend_from_slice(&crc.to_le_bytes());
        assert_eq!(decode_fmdl(&body), Err(ModelError::Blob(BlobError::Version(9))));
    }

    #[test]
    fn fshd_layout_is_exact() {
        let store = ShadowStore { values: vec![Fp16(0x3800), Fp16(0xB555)] };
        let bytes = encode_fshd(&store);
        assert_eq!(&bytes[..9], &[b'F', b'S', b'H', b'D', 1, 2, 0, 0, 0]);
        assert_eq!(&bytes[9..13], &[0x00, 0x38, 0x55, 0xB5]);
        assert_eq!(bytes.len(), fshd_size(2));
        assert_eq!(decode_fshd(&bytes).unwrap(), store);
    }

    #[test]
    fn fmap_layout_is_exact() {
        let map = FarMap {
            layer_id: 3,
            fan_in: 40,
            fan_out: 2,
            entries: vec![
                FarMapEntry { row: 1, lane: 4, action: FarAction::Rewire { donor: 4, div: 2, shadow_addr: 0 } },
                FarMapEntry { row: 1, lane: 9, action: FarAction::Skip },
            ],
        };
        let bytes = encode_fmap(&map);
        assert_eq!(bytes.len(), fmap_size(2));
        assert_eq!(&bytes[4..15], &[1, 3, 0, 40, 0, 2, 0, 2, 0, 0, 0]);
        assert_eq!(&bytes[15..25], &[1, 0, 4, 0, 1, 4, 0, 2, 0, 0]);
        assert_eq!(decode_fmap(&bytes).unwrap(), map);
    }
}
