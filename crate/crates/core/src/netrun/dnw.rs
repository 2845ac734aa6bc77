//! DNW1 weight files.
//!
//! Little-endian layout:
//!
//! ```text
//! "DNW1"  u16 version=1  u16 layer_count
//! per layer:
//!   u16 name_len, name (UTF-8)
//!   u8 kind (0 conv, 1 fc), u8 ndims, u32 dims[ndims]
//!   f32 weights[product(dims)]            row-major
//!   u32 bias_len, f32 bias[bias_len]
//! u32 CRC-32 (IEEE) of every preceding byte
//! ```
//!
//! Convolution dims are `[filters, channels, rows, cols]`, FC dims
//! `[outputs, inputs]`.

use std::path::Path;

use crate::error::{Error, Result};

use super::spec::NetworkSpec;

pub const MAGIC: &[u8; 4] = b"DNW1";
pub const VERSION: u16 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightKind {
    Conv,
    Fc,
}

impl WeightKind {
    fn tag(self) -> u8 {
        match self {
            WeightKind::Conv => 0,
            WeightKind::Fc => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerWeights {
    pub name: String,
    pub kind: WeightKind,
    pub dims: Vec<u32>,
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

/// FP32 weights of every weighted layer, in network order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NetworkWeights {
    pub layers: Vec<LayerWeights>,
}

impl NetworkWeights {
    pub fn layer(&self, name: &str) -> Option<&LayerWeights> {
        self.layers.iter().find(|l| l.name == name)
    }

    /// Checks that layer names, kinds and dimensions match `spec`.
    pub fn validate(&self, spec: &NetworkSpec) -> Result<()> {
        let expected = spec.weight_dims();
        if expected.len() != self.layers.len() {
            return Err(Error::Shape(format!(
                "file has {} weighted layers, {} expects {}",
                self.layers.len(),
                spec.name,
                expected.len()
            )));
        }
        for ((name, dims, bias), layer) in expected.iter().zip(&self.layers) {
            let kind = if dims.len() == 4 { WeightKind::Conv } else { WeightKind::Fc };
            if &layer.name != name || layer.kind != kind || &layer.dims != dims || layer.bias.len() != *bias {
                return Err(Error::Shape(format!(
                    "layer `{}` {:?} {:?} (bias {}) does not match `{name}` {kind:?} {dims:?} (bias {bias})",
                    layer.name,
                    layer.kind,
                    layer.dims,
                    layer.bias.len()
                )));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let count = u16::try_from(self.layers.len())
            .map_err(|_| Error::Config("too many layers for DNW1".into()))?;
        out.extend_from_slice(&count.to_le_bytes());
        for l in &self.layers {
            let n: usize = l.dims.iter().map(|&d| d as usize).product();
            if n != l.weights.len() {
                return Err(Error::Shape(format!(
                    "layer `{}`: dims {:?} but {} weights",
                    l.name,
                    l.dims,
                    l.weights.len()
                )));
            }
            let name = l.name.as_bytes();
            let name_len = u16::try_from(name.len())
                .map_err(|_| Error::Config("layer name too long".into()))?;
            out.extend_from_slice(&name_len.to_le_bytes());
            out.extend_from_slice(name);
            out.push(l.kind.tag());
            out.push(l.dims.len() as u8);
            for d in &l.dims {
                out.extend_from_slice(&d.to_le_bytes());
            }
            for w in &l.weights {
                out.extend_from_slice(&w.to_le_bytes());
            }
            out.extend_from_slice(&(l.bias.len() as u32).to_le_bytes());
            for b in &l.bias {
                out.extend_from_slice(&b.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != MAGIC {
            return Err(Error::format(0, "bad magic, expected DNW1"));
        }
        let version = r.u16("version")?;
        if version != VERSION {
            return Err(Error::format(4, format!("unsupported version {version}")));
        }
        let count = r.u16("layer count")?;
        let mut layers = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let at = r.pos;
            let name_len = r.u16("name length")? as usize;
            let name = std::str::from_utf8(r.take(name_len, "layer name")?)
                .map_err(|_| Error::format(at as u64 + 2, "layer name is not UTF-8"))?
                .to_string();
            let kind_at = r.pos;
            let kind = match r.u8("kind")? {
                0 => WeightKind::Conv,
                1 => WeightKind::Fc,
                t => return Err(Error::format(kind_at as u64, format!("unknown layer kind {t}"))),
            };
            let ndims = r.u8("ndims")? as usize;
            let want = if kind == WeightKind::Conv { 4 } else { 2 };
            if ndims != want {
                return Err(Error::format(
                    kind_at as u64 + 1,
                    format!("{kind:?} layer `{name}` needs {want} dims, found {ndims}"),
                ));
            }
            let mut dims = Vec::with_capacity(ndims);
            for _ in 0..ndims {
                dims.push(r.u32("dimension")?);
            }
            let n = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
                .ok_or_else(|| Error::format(r.pos as u64, "dimension product overflows"))?;
            let weights = r.f32s(n, "weights")?;
            let bias_len = r.u32("bias length")? as usize;
            let bias = r.f32s(bias_len, "bias")?;
            layers.push(LayerWeights {
                name,
                kind,
                dims,
                weights,
                bias,
            });
        }
        let body_end = r.pos;
        let stored = r.u32("checksum")?;
        if r.pos != bytes.len() {
            return Err(Error::format(
                r.pos as u64,
                format!("{} trailing bytes", bytes.len() - r.pos),
            ));
        }
        let actual = crc32fast::hash(&bytes[..body_end]);
        if stored != actual {
            return Err(Error::format(
                body_end as u64,
                format!("checksum {stored:08x} does not match payload {actual:08x}"),
            ));
        }
        Ok(NetworkWeights { layers })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }
}

/// Reads and structurally checks a DNW1 file.
pub fn load_weights(path: impl AsRef<Path>) -> Result<NetworkWeights> {
    NetworkWeights::from_bytes(&std::fs::read(path)?)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::format(
                self.pos as u64,
                format!("file ends inside {what} ({n} bytes wanted, {} left)", self.bytes.len() - self.pos),
            )),
        }
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let bytes = n
            .checked_mul(4)
            .ok_or_else(|| Error::format(self.pos as u64, format!("{what} length overflows")))?;
        let raw = self.take(bytes, what)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}
