//! Model files: magic `LCMD1`, `u32` version, length-prefixed JSON spec, target
//! scaling, then either named `f32` tensors or serialized trees.

use std::fs;
use std::path::Path;

use super::forest::{Forest, Tree, TreeNode};
use super::{Decoder, DecoderSpec, DecoderState, NetParams, TargetScaling};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::util::write_atomic;

pub const MODEL_MAGIC: &[u8; 5] = b"LCMD1";
pub const MODEL_VERSION: u32 = 1;

const KIND_TENSORS: u8 = 0;
const KIND_FOREST: u8 = 1;

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
    fn f32(&mut self, v: f32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn bytes(&mut self, b: &[u8]) {
        self.u32(b.len() as u32);
        self.0.extend_from_slice(b);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Load(format!("truncated model file at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8")))
    }
    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8")))
    }
    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()? as usize;
        self.take(n)
    }
}

fn exact_f32(name: &str, v: f64) -> Result<f32> {
    let f = v as f32;
    if f as f64 != v && !(v.is_nan() && f.is_nan()) {
        return Err(Error::Argument(format!(
            "parameter {name} holds {v}, which is not representable as f32"
        )));
    }
    Ok(f)
}

/// Serializes a decoder. Tensor values must be exactly representable as `f32`.
pub fn encode(dec: &Decoder) -> Result<Vec<u8>> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MODEL_MAGIC);
    w.u32(MODEL_VERSION);
    let spec = serde_json::to_vec(&dec.spec).map_err(|e| Error::Argument(e.to_string()))?;
    w.bytes(&spec);
    w.f32(exact_f32("target.shift", dec.target.shift)?);
    w.f32(exact_f32("target.scale", dec.target.scale)?);
    match &dec.state {
        DecoderState::Net(p) => {
            w.u8(KIND_TENSORS);
            w.u32(p.tensors.len() as u32);
            for (name, t) in &p.tensors {
                w.bytes(name.as_bytes());
                w.u32(t.shape().len() as u32);
                t.shape().iter().for_each(|d| w.u64(*d as u64));
                for v in t.data() {
                    w.f32(exact_f32(name, *v)?);
                }
            }
        }
        DecoderState::Forest(f) => {
            w.u8(KIND_FOREST);
            w.u64(f.n_features as u64);
            w.u32(f.trees.len() as u32);
            for t in &f.trees {
                w.u32(t.nodes.len() as u32);
                for n in &t.nodes {
                    w.u32(n.feature);
                    w.f64(n.threshold);
                    w.u32(n.left);
                    w.u32(n.right);
                    w.f64(n.value);
                }
            }
        }
    }
    Ok(w.0)
}

pub fn decode(buf: &[u8]) -> Result<Decoder> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(5)? != MODEL_MAGIC {
        return Err(Error::Load("not a model file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != MODEL_VERSION {
        return Err(Error::Load(format!(
            "model file version {version}, this build reads {MODEL_VERSION}"
        )));
    }
    let spec: DecoderSpec =
        serde_json::from_slice(r.bytes()?).map_err(|e| Error::Load(format!("bad spec blob: {e}")))?;
    let target = TargetScaling {
        shift: r.f32()? as f64,
        scale: r.f32()? as f64,
    };
    let state = match r.u8()? {
        KIND_TENSORS => {
            let n = r.u32()? as usize;
            let mut tensors = Vec::with_capacity(n);
            for _ in 0..n {
                let name = String::from_utf8(r.bytes()?.to_vec())
                    .map_err(|_| Error::Load("tensor name is not UTF-8".into()))?;
                let nd = r.u32()? as usize;
                let shape: Vec<usize> = (0..nd).map(|_| r.u64().map(|d| d as usize)).collect::<Result<_>>()?;
                let numel: usize = shape.iter().product();
                if numel > (buf.len() - r.pos) / 4 {
                    return Err(Error::Load(format!("truncated tensor {name}")));
                }
                let data: Vec<f64> = (0..numel).map(|_| r.f32().map(f64::from)).collect::<Result<_>>()?;
                tensors.push((name, Tensor::new(&shape, data).map_err(|e| Error::Load(e.to_string()))?));
            }
            DecoderState::Net(NetParams { tensors })
        }
        KIND_FOREST => {
            let n_features = r.u64()? as usize;
            let nt = r.u32()? as usize;
            let mut trees = Vec::with_capacity(nt.min(1 << 16));
            for _ in 0..nt {
                let nn = r.u32()? as usize;
                let mut nodes = Vec::with_capacity(nn.min(1 << 20));
                for _ in 0..nn {
                    nodes.push(TreeNode {
                        feature: r.u32()?,
                        threshold: r.f64()?,
                        left: r.u32()?,
                        right: r.u32()?,
                        value: r.f64()?,
                    });
                }
                trees.push(Tree { nodes });
            }
            DecoderState::Forest(Forest { n_features, trees })
        }
        k => return Err(Error::Load(format!("unknown state kind {k}"))),
    };
    if r.pos != buf.len() {
        return Err(Error::Load("trailing bytes after model".into()));
    }
    let dec = Decoder { spec, state, target };
    if let DecoderState::Net(p) = &dec.state {
        let fresh = super::nets::init(&dec.spec);
        let same = fresh.tensors.len() == p.tensors.len()
            && fresh
                .tensors
                .iter()
                .zip(&p.tensors)
                .all(|((a, ta), (b, tb))| a == b && ta.shape() == tb.shape());
        if !same {
            return Err(Error::Load("tensor layout does not match the embedded spec".into()));
        }
    }
    Ok(dec)
}

pub fn save_state(dec: &Decoder, path: &Path) -> Result<()> {
    write_atomic(path, &encode(dec)?)
}

pub fn load_state(path: &Path) -> Result<Decoder> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&buf)
}

/// Loads and checks that the file holds the expected family and input width.
pub fn load_state_as(path: &Path, expected: &DecoderSpec) -> Result<Decoder> {
    let dec = load_state(path)?;
    if dec.spec.family != expected.family || dec.spec.input_channels != expected.input_channels {
        return Err(Error::SpecMismatch(format!(
            "file holds a {} decoder over {} channels, expected {} over {}",
            dec.spec.family, dec.spec.input_channels, expected.family, expected.input_channels
        )));
    }
    Ok(dec)
}
