//! Binary model file.
//!
//! All integers and floats are little-endian; floats are IEEE-754 binary64.
//!
//! ```text
//! magic           8 bytes  "PCFLOW\0\0"
//! major, minor    u32, u32
//! flags           u32      bit 0: PCA block present
//! [PCA block]     D u64, M u64, cev f64, mean[D], singular_values[D],
//!                 components[D*M] (row-major D × M)
//! standardizer    dim u64, shift[dim], scale[dim]
//! K               u64
//! K × layer       parity u8 (0 even, 1 odd), s-net, t-net
//! net             n_widths u64, widths[n] u64, bound u8 (0 none, 1 tanh),
//!                 cap f64, n_params u64, params[n_params]
//! ```
//!
//! Readers accept any minor version of their own major version.

use std::fs;
use std::path::Path;

use crate::conditioner::{DenseNet, OutputBound};
use crate::error::{Error, Result};
use crate::flow::{CouplingLayer, FlowModel, Parity, Standardizer};
use crate::pca::PcaMap;

pub const MAGIC: &[u8; 8] = b"PCFLOW\0\0";
pub const FORMAT_MAJOR: u32 = 1;
pub const FORMAT_MINOR: u32 = 0;

const FLAG_PCA: u32 = 1;
/// Upper bound on any length field, to reject garbage before allocating.
const MAX_LEN: u64 = 1 << 32;

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        v.iter().for_each(|&x| self.f64(x));
    }

    fn net(&mut self, net: &DenseNet) {
        self.u64(net.widths().len() as u64);
        for &w in net.widths() {
            self.u64(w as u64);
        }
        match net.bound() {
            OutputBound::None => {
                self.u8(0);
                self.f64(0.0);
            }
            OutputBound::Tanh(cap) => {
                self.u8(1);
                self.f64(cap);
            }
        }
        self.u64(net.n_params() as u64);
        self.f64s(net.params());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::Format(format!(
                "file truncated at byte {} (wanted {n} more)",
                self.pos
            )));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn len(&mut self) -> Result<usize> {
        let v = self.u64()?;
        if v > MAX_LEN {
            return Err(Error::Format(format!("implausible length {v}")));
        }
        Ok(v as usize)
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("length overflow".into()))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn net(&mut self) -> Result<DenseNet> {
        let n = self.len()?;
        let widths = (0..n).map(|_| self.len()).collect::<Result<Vec<_>>>()?;
        let kind = self.u8()?;
        let cap = self.f64()?;
        let bound = match kind {
            0 => OutputBound::None,
            1 => OutputBound::Tanh(cap),
            k => return Err(Error::Format(format!("unknown output bound kind {k}"))),
        };
        let n_params = self.len()?;
        let params = self.f64s(n_params)?;
        DenseNet::from_params(&widths, params, bound)
    }
}

/// Serializes a model; the result is a pure function of the parameters.
pub fn to_bytes(model: &FlowModel) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(FORMAT_MAJOR);
    w.u32(FORMAT_MINOR);
    w.u32(if model.pca().is_some() { FLAG_PCA } else { 0 });
    if let Some(p) = model.pca() {
        w.u64(p.dim() as u64);
        w.u64(p.latent_dim() as u64);
        w.f64(p.cev());
        w.f64s(p.mean());
        w.f64s(p.singular_values());
        w.f64s(p.components());
    }
    let st = model.standardizer();
    w.u64(st.dim() as u64);
    w.f64s(st.shift());
    w.f64s(st.scale());
    w.u64(model.layers().len() as u64);
    for layer in model.layers() {
        w.u8(match layer.parity() {
            Parity::Even => 0,
            Parity::Odd => 1,
        });
        w.net(layer.s_net());
        w.net(layer.t_net());
    }
    w.0
}

pub fn from_bytes(bytes: &[u8]) -> Result<FlowModel> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8).ok() != Some(&MAGIC[..]) {
        return Err(Error::Format("not a model file (bad magic)".into()));
    }
    let major = r.u32()?;
    let _minor = r.u32()?;
    if major != FORMAT_MAJOR {
        return Err(Error::Version {
            found: major,
            supported: FORMAT_MAJOR,
        });
    }
    let flags = r.u32()?;
    if flags & !FLAG_PCA != 0 {
        return Err(Error::Format(format!("unknown flags {flags:#x}")));
    }
    let pca = if flags & FLAG_PCA != 0 {
        let d = r.len()?;
        let m = r.len()?;
        let cev = r.f64()?;
        let mean = r.f64s(d)?;
        let sv = r.f64s(d)?;
        let comps = r.f64s(d.checked_mul(m).ok_or_else(|| Error::Format("length overflow".into()))?)?;
        Some(PcaMap::from_parts(mean, comps, sv, m, cev)?)
    } else {
        None
    };
    let dim = r.len()?;
    let shift = r.f64s(dim)?;
    let scale = r.f64s(dim)?;
    let standardizer = Standardizer::new(shift, scale)?;
    let k = r.len()?;
    let mut layers = Vec::with_capacity(k.min(1024));
    for _ in 0..k {
        let parity = match r.u8()? {
            0 => Parity::Even,
            1 => Parity::Odd,
            p => return Err(Error::Format(format!("unknown parity tag {p}"))),
        };
        let s = r.net()?;
        let t = r.net()?;
        layers.push(CouplingLayer::new(dim, parity, s, t)?);
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after model",
            bytes.len() - r.pos
        )));
    }
    FlowModel::from_parts(pca, standardizer, layers)
}

pub fn save(model: &FlowModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<FlowModel> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
