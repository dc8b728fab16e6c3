//! Plain-text parameter checkpoints.
//!
//! ```text
//! ADVIMITATE-CKPT-1
//! meta <key> <value>
//! tensor <key> <ndim> <dim0> ... <dimN>
//! <row-major values, space separated>
//! ```
//!
//! Network parameters are stored under `<net>.layer{i}.weight` and
//! `<net>.layer{i}.bias`; the output activation under meta `<net>.output`.
//! Values use Rust's shortest round-trip float formatting, so a save/load
//! cycle is bit-exact.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{Activation, Layer, Mlp};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &str = "ADVIMITATE-CKPT-1";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub tensors: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_mlp(&mut self, name: &str, net: &Mlp) {
        self.meta.insert(
            format!("{name}.output"),
            net.output_activation().tag().to_string(),
        );
        self.meta
            .insert(format!("{name}.layers"), net.layers().len().to_string());
        for (key, t) in net.named_params() {
            self.tensors.insert(format!("{name}.{key}"), t.clone());
        }
    }

    pub fn mlp(&self, name: &str) -> Result<Mlp> {
        let output = self
            .meta
            .get(&format!("{name}.output"))
            .ok_or_else(|| Error::format(format!("checkpoint has no network {name:?}")))?;
        let n: usize = self
            .meta
            .get(&format!("{name}.layers"))
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format(format!("{name}: missing layer count")))?;
        let get = |k: String| {
            self.tensors
                .get(&k)
                .cloned()
                .ok_or_else(|| Error::format(format!("missing tensor {k}")))
        };
        let layers = (0..n)
            .map(|i| {
                Ok(Layer {
                    weight: get(format!("{name}.layer{i}.weight"))?,
                    bias: get(format!("{name}.layer{i}.bias"))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Mlp::from_layers(layers, Activation::from_tag(output)?)
            .map_err(|e| Error::format(format!("{name}: {e}")))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(CHECKPOINT_MAGIC);
        s.push('\n');
        for (k, v) in &self.meta {
            let _ = writeln!(s, "meta {k} {v}");
        }
        for (k, t) in &self.tensors {
            let _ = write!(s, "tensor {k} {}", t.shape().len());
            for d in t.shape() {
                let _ = write!(s, " {d}");
            }
            s.push('\n');
            let mut first = true;
            for x in t.data() {
                if !first {
                    s.push(' ');
                }
                first = false;
                let _ = write!(s, "{x:?}");
            }
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(CHECKPOINT_MAGIC) {
            return Err(Error::format("missing ADVIMITATE-CKPT-1 header"));
        }
        let mut ck = Checkpoint::new();
        while let Some(line) = lines.next() {
            if line.is_empty() {
                continue;
            }
            let mut parts = line.splitn(3, ' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some("meta"), Some(k), v) => {
                    ck.meta.insert(k.to_string(), v.unwrap_or("").to_string());
                }
                (Some("tensor"), Some(k), Some(rest)) => {
                    let dims: Vec<usize> = rest
                        .split(' ')
                        .map(|d| d.parse())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| Error::format(format!("bad dims for {k}")))?;
                    let (ndim, shape) = dims
                        .split_first()
                        .ok_or_else(|| Error::format(format!("bad dims for {k}")))?;
                    if *ndim != shape.len() {
                        return Err(Error::format(format!("rank mismatch for {k}")));
                    }
                    let body = lines
                        .next()
                        .ok_or_else(|| Error::format(format!("truncated data for {k}")))?;
                    let data: Vec<f64> = if body.is_empty() {
                        Vec::new()
                    } else {
                        body.split(' ')
                            .map(|x| x.parse())
                            .collect::<std::result::Result<_, _>>()
                            .map_err(|_| Error::format(format!("bad value in {k}")))?
                    };
                    let t = Tensor::new(shape.to_vec(), data)
                        .map_err(|e| Error::format(format!("{k}: {e}")))?;
                    ck.tensors.insert(k.to_string(), t);
                }
                _ => return Err(Error::format(format!("unrecognised line {line:?}"))),
            }
        }
        Ok(ck)
    }

    /// Write atomically: a temp file next to `path`, then rename.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_text())?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}
