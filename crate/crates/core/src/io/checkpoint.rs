//! Binary checkpoint format.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! "CNPK"  u32 version (1)
//! u8 model kind  u32 levels  u32 transform layers  u32 features  u32 embed
//! u32 input channels  u32 output channels  u8 fusion  u8 downsample
//! u8 residual  u32 residual channel  u32 kind argument
//! u32 metadata length  metadata (UTF-8)
//! u32 tensor count
//!   per tensor: u32 name length, name (UTF-8), u32 rank, rank × u32 dims,
//!               u8 dtype (0 = f32, 1 = f64), raw values
//! u32 CRC-32 of every preceding byte
//! ```

use std::path::Path;

use crate::autodiff::FuseMode;
use crate::error::{Error, Result};
use crate::io::{atomic_write, read_file};
use crate::model::{rebuild, CnpConfig, DownsampleMode, ModelGraph, ModelKind};
use crate::tensor::{Real, Tensor};

pub const MAGIC: &[u8; 4] = b"CNPK";
pub const VERSION: u32 = 1;

/// A loaded checkpoint: the rebuilt model and its metadata string.
#[derive(Clone, Debug)]
pub struct Checkpoint<T: Real = f32> {
    pub graph: ModelGraph<T>,
    pub metadata: String,
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("value fits in u32").to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len());
    out.extend_from_slice(s.as_bytes());
}

pub fn encode<T: Real>(graph: &ModelGraph<T>, metadata: &str) -> Vec<u8> {
    let c = &graph.arch.config;
    let (kind, arg) = match graph.arch.kind {
        ModelKind::Cnp => (0u8, 0),
        ModelKind::SingleLevel { layers } => (1, layers),
        ModelKind::SimpleMultiscale { branch_channels } => (2, branch_channels),
    };
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(kind);
    for v in [
        c.levels,
        c.transform_layers,
        c.feature_channels,
        c.embed_channels,
        c.input_channels,
        c.output_channels,
    ] {
        put_u32(&mut out, v);
    }
    out.push(match c.fusion {
        FuseMode::Sum => 0,
        FuseMode::Concat => 1,
    });
    out.push(match c.downsample {
        DownsampleMode::MaxPool => 0,
        DownsampleMode::StridedConv => 1,
    });
    out.push(c.residual as u8);
    put_u32(&mut out, c.residual_channel);
    put_u32(&mut out, arg);
    put_str(&mut out, metadata);

    put_u32(&mut out, graph.params.len());
    for p in graph.params.iter() {
        put_str(&mut out, &p.name);
        let dims = p.value.shape().dims();
        put_u32(&mut out, dims.len());
        for d in dims {
            put_u32(&mut out, d);
        }
        out.push(T::DTYPE);
        for &v in p.value.data() {
            if T::DTYPE == 0 {
                out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
            } else {
                out.extend_from_slice(&v.as_f64().to_le_bytes());
            }
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Truncated(format!("{what} at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)?;
        let b = self.take(n, what)?;
        String::from_utf8(b.to_vec()).map_err(|_| Error::Malformed(format!("{what} is not UTF-8")))
    }
}

pub fn decode<T: Real>(bytes: &[u8]) -> Result<Checkpoint<T>> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < 12 {
        return Err(Error::Truncated(format!("{} bytes", bytes.len())));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Version(version));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }

    let mut r = Cursor { bytes: body, pos: 8 };
    let kind = r.u8("model kind")?;
    let mut next = |what| r.u32(what);
    let levels = next("levels")?;
    let transform_layers = next("transform layers")?;
    let feature_channels = next("feature channels")?;
    let embed_channels = next("embed channels")?;
    let input_channels = next("input channels")?;
    let output_channels = next("output channels")?;
    let fusion = match r.u8("fusion")? {
        0 => FuseMode::Sum,
        1 => FuseMode::Concat,
        v => return Err(Error::Malformed(format!("fusion code {v}"))),
    };
    let downsample = match r.u8("downsample")? {
        0 => DownsampleMode::MaxPool,
        1 => DownsampleMode::StridedConv,
        v => return Err(Error::Malformed(format!("downsample code {v}"))),
    };
    let residual = match r.u8("residual")? {
        0 => false,
        1 => true,
        v => return Err(Error::Malformed(format!("residual flag {v}"))),
    };
    let residual_channel = r.u32("residual channel")?;
    let arg = r.u32("model argument")?;
    let metadata = r.string("metadata")?;
    let config = CnpConfig {
        levels,
        transform_layers,
        feature_channels,
        embed_channels,
        input_channels,
        output_channels,
        fusion,
        downsample,
        residual,
        residual_channel,
    };
    let kind = match kind {
        0 => ModelKind::Cnp,
        1 => ModelKind::SingleLevel { layers: arg },
        2 => ModelKind::SimpleMultiscale { branch_channels: arg },
        v => return Err(Error::Malformed(format!("model kind {v}"))),
    };
    let mut graph: ModelGraph<T> = rebuild(&kind, &config)
        .map_err(|e| Error::Malformed(format!("stored configuration is invalid: {e}")))?
        .cast();

    let count = r.u32("tensor count")?;
    if count != graph.params.len() {
        return Err(Error::Malformed(format!(
            "{count} tensors stored, architecture has {}",
            graph.params.len()
        )));
    }
    for _ in 0..count {
        let name = r.string("tensor name")?;
        let rank = r.u32("tensor rank")?;
        if rank != 4 {
            return Err(Error::Malformed(format!("{name}: rank {rank}")));
        }
        let mut dims = [0usize; 4];
        for d in &mut dims {
            *d = r.u32("tensor dims")?;
        }
        let param = graph
            .params
            .by_name_mut(&name)
            .ok_or_else(|| Error::Malformed(format!("unknown tensor {name}")))?;
        if param.value.shape().dims() != dims {
            return Err(Error::Malformed(format!(
                "{name}: stored shape {dims:?}, expected {}",
                param.value.shape()
            )));
        }
        let n = param.value.numel();
        let data: Vec<T> = match r.u8("dtype")? {
            0 => r
                .take(4 * n, "tensor data")?
                .chunks_exact(4)
                .map(|c| T::from_f64(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
                .collect(),
            1 => r
                .take(8 * n, "tensor data")?
                .chunks_exact(8)
                .map(|c| T::from_f64(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
                .collect(),
            v => return Err(Error::Malformed(format!("{name}: dtype {v}"))),
        };
        param.value = Tensor::from_vec(param.value.shape(), data)?;
    }
    if r.pos != body.len() {
        return Err(Error::Malformed(format!("{} trailing bytes", body.len() - r.pos)));
    }
    Ok(Checkpoint { graph, metadata })
}

pub fn save_checkpoint<T: Real>(graph: &ModelGraph<T>, metadata: &str, path: impl AsRef<Path>) -> Result<()> {
    atomic_write(path.as_ref(), &encode(graph, metadata))
}

pub fn load_checkpoint<T: Real>(path: impl AsRef<Path>) -> Result<Checkpoint<T>> {
    decode(&read_file(path.as_ref())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_cnp, build_single_level};

    fn small(levels: usize) -> ModelGraph {
        let cfg = CnpConfig::default().with_levels(levels).with_width(6, 3);
        let mut g = build_cnp(&cfg).unwrap();
        g.init_params(3);
        g
    }

    #[test]
    fn round_trip_is_exact() {
        let g = small(3);
        let bytes = encode(&g, "optimizer=adam");
        let ck: Checkpoint = decode(&bytes).unwrap();
        assert_eq!(ck.metadata, "optimizer=adam");
        assert_eq!(ck.graph.arch, g.arch);
        for (a, b) in ck.graph.params.iter().zip(g.params.iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.value, b.value);
        }
        assert_eq!(encode(&ck.graph, "optimizer=adam"), bytes);
    }

    #[test]
    fn single_level_kind_survives() {
        let mut g = build_single_level(4, &CnpConfig::default().with_width(5, 2)).unwrap();
        g.init_params(1);
        let ck: Checkpoint = decode(&encode(&g, "")).unwrap();
        assert_eq!(ck.graph.arch.kind, ModelKind::SingleLevel { layers: 4 });
    }

    #[test]
    fn distinct_failures() {
        let bytes = encode(&small(2), "");
        let mut flipped = bytes.clone();
        flipped[40] ^= 1;
        assert!(matches!(decode::<f32>(&flipped), Err(Error::Checksum { .. })));
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(matches!(decode::<f32>(&magic), Err(Error::BadMagic)));
        let mut version = bytes.clone();
        version[4] = 2;
        assert!(matches!(decode::<f32>(&version), Err(Error::Version(2))));
        assert!(matches!(decode::<f32>(&bytes[..10]), Err(Error::Truncated(_))));
    }

    #[test]
    fn truncated_body_with_valid_crc() {
        let bytes = encode(&small(1), "");
        let mut cut = bytes[..bytes.len() - 40].to_vec();
        let crc = crc32fast::hash(&cut);
        cut.extend_from_slice(&crc.to_le_bytes());
        assert!(matches!(decode::<f32>(&cut), Err(Error::Truncated(_))));
    }
}
