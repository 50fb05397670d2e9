//! Binary model container:
//!
//! ```text
//! "MCL1" | version u16 | meta_len u32 | meta (UTF-8 "key=value\n" lines) |
//! count u32 | count × (name_len u16 | name | rank u8 | rank × extent u32 |
//! dtype u8 | values f64) | crc32 u32
//! ```
//!
//! All integers are little-endian and the crc covers every preceding byte.
//! No timestamps are stored, so equal models give equal files.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use mcl_core::mcs::{SensingOperatorSet, SynthesisOperatorSet};
use mcl_core::model::{MclModel, ModelMeta};
use mcl_core::nn::{format_layers, parse_layers, TaskNetwork};
use mcl_core::rng::StreamRng;
use mcl_core::train::RateModel;
use mcl_core::{MaskDims, MaskSpec, Matrix, Tensor};
use mcl_sim::ServerModel;

use crate::error::{CliError, Result};

pub const MAGIC: [u8; 4] = *b"MCL1";
pub const VERSION: u16 = 1;
const DTYPE_F64: u8 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Raw container contents: ordered metadata plus named tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelContainer {
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<TensorRecord>,
}

fn format_err(msg: impl Into<String>) -> CliError {
    CliError::Format(msg.into())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| format_err(format!("container truncated at byte {}", self.at)))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

impl ModelContainer {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let mut meta = String::new();
        for (k, v) in &self.meta {
            if k.contains(['=', '\n']) || v.contains('\n') {
                return Err(format_err(format!("metadata entry {k:?} is not representable")));
            }
            meta.push_str(&format!("{k}={v}\n"));
        }
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(meta.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        let mut seen = HashSet::new();
        for t in &self.tensors {
            if !seen.insert(&t.name) {
                return Err(format_err(format!("duplicate tensor name {}", t.name)));
            }
            let name = t.name.as_bytes();
            let name_len = u16::try_from(name.len()).map_err(|_| format_err("tensor name too long"))?;
            if t.shape.iter().product::<usize>() != t.values.len() || t.shape.len() > u8::MAX as usize {
                return Err(format_err(format!("tensor {} has inconsistent shape", t.name)));
            }
            out.extend_from_slice(&name_len.to_le_bytes());
            out.extend_from_slice(name);
            out.push(t.shape.len() as u8);
            for &e in &t.shape {
                let e = u32::try_from(e).map_err(|_| format_err("extent too large"))?;
                out.extend_from_slice(&e.to_le_bytes());
            }
            out.push(DTYPE_F64);
            for v in &t.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 + 2 + 4 + 4 + 4 {
            return Err(format_err("container too short"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().unwrap());
        let mut c = Cursor { bytes: body, at: 0 };
        if c.take(4)? != MAGIC {
            return Err(format_err("not a model container (bad magic)"));
        }
        let version = c.u16()?;
        if version != VERSION {
            return Err(format_err(format!("unsupported container version {version}")));
        }
        if crc32fast::hash(body) != stored {
            return Err(format_err("container checksum mismatch"));
        }
        let meta_len = c.u32()? as usize;
        let meta_text = std::str::from_utf8(c.take(meta_len)?).map_err(|_| format_err("metadata is not UTF-8"))?;
        let mut meta = BTreeMap::new();
        for line in meta_text.lines() {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format_err(format!("bad metadata line {line:?}")))?;
            meta.insert(k.to_string(), v.to_string());
        }
        let count = c.u32()?;
        let mut tensors = Vec::new();
        let mut seen = HashSet::new();
        for _ in 0..count {
            let name_len = c.u16()? as usize;
            let name = String::from_utf8(c.take(name_len)?.to_vec()).map_err(|_| format_err("tensor name is not UTF-8"))?;
            if !seen.insert(name.clone()) {
                return Err(format_err(format!("duplicate tensor name {name}")));
            }
            let rank = c.u8()? as usize;
            let shape = (0..rank).map(|_| c.u32().map(|e| e as usize)).collect::<Result<Vec<_>>>()?;
            let dtype = c.u8()?;
            if dtype != DTYPE_F64 {
                return Err(format_err(format!("tensor {name}: unsupported dtype {dtype}")));
            }
            let n: usize = shape.iter().product();
            let raw = c.take(n.checked_mul(8).ok_or_else(|| format_err("tensor too large"))?)?;
            let values = raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
            tensors.push(TensorRecord { name, shape, values });
        }
        if c.at != body.len() {
            return Err(format_err("trailing bytes after tensor records"));
        }
        Ok(Self { meta, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()?).map_err(|e| CliError::Io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| CliError::Io(path.display().to_string(), e))?;
        Self::decode(&bytes)
    }

    fn get(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| format_err(format!("metadata key {key} missing")))
    }

    fn tensor(&self, name: &str) -> Result<&TensorRecord> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| format_err(format!("tensor {name} missing")))
    }
}

fn dims_text(d: &[usize]) -> String {
    d.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("x")
}

fn parse_dims(s: &str) -> Result<Vec<usize>> {
    s.parse::<MaskDims>()
        .map(|d| d.to_vec())
        .map_err(|e| format_err(format!("bad dims {s:?}: {e}")))
}

fn push_matrix(c: &mut ModelContainer, name: String, m: &Matrix) {
    c.tensors.push(TensorRecord {
        name,
        shape: vec![m.rows(), m.cols()],
        values: m.data().to_vec(),
    });
}

fn push_synthesis_and_net(c: &mut ModelContainer, prefix: &str, synthesis: &SynthesisOperatorSet, net: &TaskNetwork) {
    for (k, theta) in synthesis.thetas().iter().enumerate() {
        push_matrix(c, format!("{prefix}theta.{k}"), theta);
    }
    for ((name, _), t) in net.param_info().into_iter().zip(net.params()) {
        c.tensors.push(TensorRecord {
            name: format!("{prefix}{name}"),
            shape: t.shape().to_vec(),
            values: t.data().to_vec(),
        });
    }
}

fn matrix(c: &ModelContainer, name: &str, rows: usize, cols: usize) -> Result<Matrix> {
    let t = c.tensor(name)?;
    if t.shape != [rows, cols] {
        return Err(format_err(format!("tensor {name} has shape {:?}, expected [{rows}, {cols}]", t.shape)));
    }
    Ok(Matrix::new(rows, cols, t.values.clone())?)
}

fn load_synthesis(c: &ModelContainer, prefix: &str, input: &[usize], meas: &[usize]) -> Result<SynthesisOperatorSet> {
    let thetas = input
        .iter()
        .zip(meas)
        .enumerate()
        .map(|(k, (&i, &m))| matrix(c, &format!("{prefix}theta.{k}"), i, m))
        .collect::<Result<Vec<_>>>()?;
    Ok(SynthesisOperatorSet::new(thetas)?)
}

fn load_network(c: &ModelContainer, prefix: &str, input: &[usize], classes: usize) -> Result<TaskNetwork> {
    let layers = parse_layers(c.get("layers")?)?;
    // Initial values are overwritten below; the generator only fixes the layout.
    let mut net = TaskNetwork::new(input, &layers, classes, &mut StreamRng::new(0, 0))?;
    let info = net.param_info();
    for ((name, shape), slot) in info.into_iter().zip(net.params_mut()) {
        let t = c.tensor(&format!("{prefix}{name}"))?;
        if t.shape != shape {
            return Err(format_err(format!("tensor {prefix}{name} has shape {:?}, expected {shape:?}", t.shape)));
        }
        *slot = Tensor::new(shape, t.values.clone())?;
    }
    Ok(net)
}

impl From<&ServerModel> for ModelContainer {
    fn from(model: &ServerModel) -> Self {
        let base = model.base();
        let meta = &base.meta;
        let mut c = ModelContainer::default();
        let mut put = |k: &str, v: String| {
            c.meta.insert(k.to_string(), v);
        };
        put("input_shape", dims_text(&meta.input_shape));
        put("measurement_shape", dims_text(&meta.measurement_shape));
        put("class_count", meta.class_count.to_string());
        put("training_mode", meta.mode.to_string());
        put("seed", meta.seed.to_string());
        put(
            "mask_spec",
            meta.mask_spec
                .as_ref()
                .map_or("none".into(), |s| format!("{}..{}", s.min_dims(), s.max_dims())),
        );
        put("layers", format_layers(base.network.specs()));
        for (k, phi) in base.sensing.phis().iter().enumerate() {
            push_matrix(&mut c, format!("phi.{k}"), phi);
        }
        push_synthesis_and_net(&mut c, "", &base.synthesis, &base.network);
        match model {
            ServerModel::Single(_) => {
                c.meta.insert("kind".into(), "model".into());
            }
            ServerModel::Table { rates, .. } => {
                c.meta.insert("kind".into(), "table".into());
                c.meta.insert(
                    "rates".into(),
                    rates.iter().map(|r| r.dims.to_string()).collect::<Vec<_>>().join(","),
                );
                for r in rates {
                    push_synthesis_and_net(&mut c, &format!("rate/{}/", r.dims), &r.synthesis, &r.network);
                }
            }
        }
        c
    }
}

impl TryFrom<&ModelContainer> for ServerModel {
    type Error = CliError;

    fn try_from(c: &ModelContainer) -> Result<Self> {
        let input = parse_dims(c.get("input_shape")?)?;
        let meas = parse_dims(c.get("measurement_shape")?)?;
        let classes: usize = c.get("class_count")?.parse().map_err(|_| format_err("bad class_count"))?;
        let seed: u64 = c.get("seed")?.parse().map_err(|_| format_err("bad seed"))?;
        let mode = c.get("training_mode")?.parse()?;
        let mask_spec = match c.get("mask_spec")? {
            "none" => None,
            s => {
                let (lo, hi) = s.split_once("..").ok_or_else(|| format_err(format!("bad mask_spec {s:?}")))?;
                Some(MaskSpec::new(parse_dims(lo)?, parse_dims(hi)?)?)
            }
        };
        if input.len() != meas.len() {
            return Err(format_err("input and measurement ranks differ"));
        }
        let phis = input
            .iter()
            .zip(&meas)
            .enumerate()
            .map(|(k, (&i, &m))| matrix(c, &format!("phi.{k}"), m, i))
            .collect::<Result<Vec<_>>>()?;
        let base = MclModel::new(
            ModelMeta {
                input_shape: input.clone(),
                measurement_shape: meas.clone(),
                class_count: classes,
                seed,
                mode,
                mask_spec,
            },
            SensingOperatorSet::new(phis)?,
            load_synthesis(c, "", &input, &meas)?,
            load_network(c, "", &input, classes)?,
        )?;
        let model = match c.get("kind")? {
            "model" => ServerModel::Single(base),
            "table" => {
                let rates = c
                    .get("rates")?
                    .split(',')
                    .filter(|s| !s.is_empty())
                    .map(|d| {
                        let dims = MaskDims::new(parse_dims(d)?)?;
                        let prefix = format!("rate/{dims}/");
                        Ok(RateModel {
                            synthesis: load_synthesis(c, &prefix, &input, &meas)?,
                            network: load_network(c, &prefix, &input, classes)?,
                            dims,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                ServerModel::Table { base, rates }
            }
            other => return Err(format_err(format!("unknown container kind {other:?}"))),
        };
        let expected = ModelContainer::from(&model).tensors.len();
        if expected != c.tensors.len() {
            return Err(format_err("container holds unexpected tensors"));
        }
        Ok(model)
    }
}

pub fn save_model(model: &ServerModel, path: &Path) -> Result<()> {
    ModelContainer::from(model).save(path)
}

pub fn load_model(path: &Path) -> Result<ServerModel> {
    ServerModel::try_from(&ModelContainer::load(path)?)
}
