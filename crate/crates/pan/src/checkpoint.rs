//! Binary checkpoints.
//!
//! Layout, all integers `u32` little-endian:
//! `"PANW"`, version, entry count, then per entry the name length, the UTF-8
//! name, the rank, one extent per axis and the row-major `f32` LE payload.
//!
//! A model checkpoint stores every network's parameters under its prefix
//! (`lite`, or `rgb` and `motion`) plus a `{prefix}.arch` record of the
//! architecture codes; Full models add `full.fusion`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use pan_core::model::{Architecture, Network, NetworkSpec, PanModel};
use pan_core::{ParamSet, Tensor};

use crate::error::{io_err, Error, Result};

pub const MAGIC: &[u8; 4] = b"PANW";
pub const VERSION: u32 = 1;

/// Named tensors in file order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub entries: Vec<(String, Tensor<f32>)>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, t) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &e in t.shape() {
                out.extend_from_slice(&(e as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(bad("missing PANW magic"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::UnsupportedVersion {
                found: version,
                supported: VERSION,
            });
        }
        let count = r.u32()? as usize;
        let mut entries = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| bad("entry name is not UTF-8"))?
                .to_string();
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|e| e as usize)).collect::<Result<Vec<_>>>()?;
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &e| acc.checked_mul(e))
                .ok_or_else(|| bad(format!("{name}: extents overflow")))?;
            let payload = r.take(n.checked_mul(4).ok_or_else(|| bad(format!("{name}: payload overflow")))?)?;
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            entries.push((name.clone(), Tensor::new(&shape, data).map_err(|e| bad(format!("{name}: {e}")))?));
        }
        if r.pos != bytes.len() {
            return Err(bad(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self { entries })
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(&self.to_bytes())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes).map_err(io_err("<reader>"))?;
        Self::from_bytes(&bytes)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(io_err(path))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| bad(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn params_to_checkpoint(params: &ParamSet<f32>) -> Checkpoint {
    Checkpoint {
        entries: params.iter().map(|p| (p.name.clone(), p.value.clone())).collect(),
    }
}

fn push_network(ck: &mut Checkpoint, net: &Network) {
    ck.entries.extend(net.params.iter().map(|p| (p.name.clone(), p.value.clone())));
    let codes = net.spec().to_codes();
    ck.entries
        .push((format!("{}.arch", net.prefix), Tensor::from_slice(&codes)));
}

pub fn model_to_checkpoint(model: &PanModel) -> Checkpoint {
    let mut ck = Checkpoint::default();
    match model {
        PanModel::Lite(n) => push_network(&mut ck, n),
        PanModel::Full { rgb, motion, fusion } => {
            push_network(&mut ck, rgb);
            push_network(&mut ck, motion);
            ck.entries.push(("full.fusion".into(), Tensor::from_slice(fusion)));
        }
    }
    ck
}

fn network_from(ck: &Checkpoint, prefix: &str) -> Result<Network> {
    let arch_name = format!("{prefix}.arch");
    let codes = ck.get(&arch_name).ok_or_else(|| bad(format!("missing {arch_name}")))?;
    let mut params = ParamSet::new();
    let dot = format!("{prefix}.");
    for (name, t) in &ck.entries {
        if name.starts_with(&dot) && *name != arch_name {
            params.register(name.clone(), t.clone())?;
        }
    }
    let widths = pan_core::backbone::ToyBackbone::bind(&params, &format!("{prefix}.backbone"))?
        .widths()
        .to_vec();
    let spec = NetworkSpec::from_codes(codes.data(), widths)?;
    let arch = Architecture::bind(spec, &params, prefix)?;
    Ok(Network {
        arch,
        params,
        prefix: prefix.into(),
    })
}

pub fn model_from_checkpoint(ck: &Checkpoint) -> Result<PanModel> {
    if ck.get("lite.arch").is_some() {
        return Ok(PanModel::Lite(network_from(ck, "lite")?));
    }
    if ck.get("rgb.arch").is_some() && ck.get("motion.arch").is_some() {
        let fusion = ck.get("full.fusion").ok_or_else(|| bad("missing full.fusion"))?;
        if fusion.len() != 2 {
            return Err(bad("full.fusion must hold two weights"));
        }
        pan_core::model::fuse_scores(&[Tensor::<f32>::zeros(&[1]), Tensor::zeros(&[1])], fusion.data())?;
        return Ok(PanModel::Full {
            rgb: network_from(ck, "rgb")?,
            motion: network_from(ck, "motion")?,
            fusion: [fusion.data()[0], fusion.data()[1]],
        });
    }
    Err(bad("no lite.arch or rgb.arch/motion.arch record: not a model checkpoint"))
}

pub fn save_model(model: &PanModel, path: &Path) -> Result<()> {
    model_to_checkpoint(model).save(path)
}

pub fn load_model(path: &Path) -> Result<PanModel> {
    model_from_checkpoint(&Checkpoint::load(path)?)
}
