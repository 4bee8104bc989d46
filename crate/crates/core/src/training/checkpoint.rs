use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::optim::TrainState;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams, TaskKind};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MCCK";
pub const CHECKPOINT_VERSION: u32 = 1;

const MAX_NAME_LEN: usize = 1 << 12;
const MAX_DIMS: usize = 8;

/// Element type of stored parameter payloads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn code(self) -> u8 {
        match self {
            Dtype::F32 => 1,
            Dtype::F64 => 2,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        match c {
            1 => Ok(Dtype::F32),
            2 => Ok(Dtype::F64),
            _ => Err(Error::Format(format!("unknown dtype code {c}"))),
        }
    }

    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

/// Model configuration, parameters and optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ModelParams,
    pub state: TrainState,
}

impl Checkpoint {
    /// Freshly initialized parameters, drawn from a stream seeded by `seed`.
    pub fn initial(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = ModelParams::init(&config, &mut ChaCha8Rng::seed_from_u64(seed))?;
        Ok(Checkpoint { config, params, state: TrainState::new(seed) })
    }
}

struct Writer<W> {
    inner: W,
}

impl<W: Write> Writer<W> {
    fn bytes(&mut self, b: &[u8]) -> Result<()> {
        Ok(self.inner.write_all(b)?)
    }
    fn u8(&mut self, v: u8) -> Result<()> {
        self.bytes(&[v])
    }
    fn u32(&mut self, v: u32) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    fn u64(&mut self, v: u64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    fn len(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| Error::invalid(format!("value {v} does not fit in 32 bits")))?;
        self.u32(v)
    }
    fn f64s(&mut self, values: &[f64]) -> Result<()> {
        for v in values {
            self.bytes(&v.to_le_bytes())?;
        }
        Ok(())
    }
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.inner.read_exact(&mut b).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => Error::Format(format!("truncated checkpoint while reading {what}")),
            _ => Error::Io(e),
        })?;
        Ok(b)
    }
    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.array::<1>(what)?[0])
    }
    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }
    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array(what)?))
    }
    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array(what)?))
    }
    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64(what)).collect()
    }
    fn len(&mut self, what: &str) -> Result<usize> {
        Ok(self.u32(what)? as usize)
    }
}

fn task_code(kind: Option<TaskKind>) -> (u8, usize) {
    match kind {
        None => (0, 0),
        Some(TaskKind::Classify { n_classes }) => (1, n_classes),
        Some(TaskKind::Tag { n_tags }) => (2, n_tags),
    }
}

/// Serializes `ck` with parameter payloads stored as `dtype`. Optimizer
/// moments are always written as f64.
pub fn write_checkpoint<W: Write>(w: W, ck: &Checkpoint, dtype: Dtype) -> Result<()> {
    let mut w = Writer { inner: w };
    w.bytes(CHECKPOINT_MAGIC)?;
    w.u32(CHECKPOINT_VERSION)?;
    let tensors = ck.params.tensors();
    w.len(tensors.len())?;
    for t in &tensors {
        w.len(t.name.len())?;
        w.bytes(t.name.as_bytes())?;
        w.len(t.shape.len())?;
        for &d in &t.shape {
            w.u64(d as u64)?;
        }
        w.u8(dtype.code())?;
    }
    for t in &tensors {
        match dtype {
            Dtype::F64 => w.f64s(t.data)?,
            Dtype::F32 => {
                for &v in t.data {
                    w.bytes(&(v as f32).to_le_bytes())?;
                }
            }
        }
    }

    let c = &ck.config;
    for v in [c.n_layers, c.hidden_dim, c.n_heads, c.ffn_dim, c.input_dim, c.max_positions] {
        w.len(v)?;
    }
    w.f64s(&[c.dropout_rate])?;
    let (code, n) = task_code(ck.params.task_head.as_ref().map(|h| h.kind));
    w.u8(code)?;
    w.len(n)?;

    let s = &ck.state;
    w.u64(s.step)?;
    w.u64(s.seed)?;
    let has_moments = !s.first_moments.is_empty();
    w.u8(has_moments as u8)?;
    if has_moments {
        if s.first_moments.len() != tensors.len() || s.second_moments.len() != tensors.len() {
            return Err(Error::invalid("optimizer moments do not match the parameter tensors"));
        }
        for moments in [&s.first_moments, &s.second_moments] {
            for (m, t) in moments.iter().zip(&tensors) {
                if m.len() != t.data.len() {
                    return Err(Error::invalid(format!("moment length mismatch for `{}`", t.name)));
                }
                w.f64s(m)?;
            }
        }
    }
    w.inner.flush()?;
    Ok(())
}

struct Header {
    name: String,
    shape: Vec<usize>,
    dtype: Dtype,
}

pub fn read_checkpoint<R: Read>(r: R) -> Result<Checkpoint> {
    let mut r = Reader { inner: r };
    let magic: [u8; 4] = r.array("magic")?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!("bad checkpoint magic {magic:?}")));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let n_tensors = r.len("tensor count")?;
    let mut headers = Vec::with_capacity(n_tensors.min(4096));
    for _ in 0..n_tensors {
        let name_len = r.len("name length")?;
        if name_len > MAX_NAME_LEN {
            return Err(Error::Format(format!("tensor name of {name_len} bytes")));
        }
        let mut name = vec![0u8; name_len];
        r.inner.read_exact(&mut name).map_err(|_| Error::Format("truncated tensor name".into()))?;
        let name = String::from_utf8(name).map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let ndim = r.len("rank")?;
        if ndim > MAX_DIMS {
            return Err(Error::Format(format!("tensor `{name}` has rank {ndim}")));
        }
        let shape = (0..ndim).map(|_| r.u64("shape").map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let dtype = Dtype::from_code(r.u8("dtype")?)?;
        headers.push(Header { name, shape, dtype });
    }
    let mut payloads = Vec::with_capacity(headers.len());
    for h in &headers {
        let n: usize = h.shape.iter().product();
        let mut raw = Vec::new();
        (&mut r.inner).take((n * h.dtype.width()) as u64).read_to_end(&mut raw)?;
        if raw.len() != n * h.dtype.width() {
            return Err(Error::Format(format!("truncated payload for `{}`", h.name)));
        }
        let values: Vec<f64> = match h.dtype {
            Dtype::F64 => raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect(),
            Dtype::F32 => raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64).collect(),
        };
        payloads.push(values);
    }

    let mut dims = [0usize; 6];
    for d in &mut dims {
        *d = r.len("model config")?;
    }
    let config = ModelConfig {
        n_layers: dims[0],
        hidden_dim: dims[1],
        n_heads: dims[2],
        ffn_dim: dims[3],
        input_dim: dims[4],
        max_positions: dims[5],
        dropout_rate: r.f64("model config")?,
    };
    config.validate().map_err(|e| Error::Format(format!("stored model config is invalid: {e}")))?;
    let task = match (r.u8("task kind")?, r.len("task outputs")?) {
        (0, _) => None,
        (1, n) => Some(TaskKind::Classify { n_classes: n }),
        (2, n) => Some(TaskKind::Tag { n_tags: n }),
        (c, _) => return Err(Error::Format(format!("unknown task kind code {c}"))),
    };

    let mut params = ModelParams::zeros(&config, task)?;
    {
        let views = params.tensors_mut();
        if views.len() != headers.len() {
            return Err(Error::Format(format!(
                "checkpoint holds {} tensors but its config implies {}",
                headers.len(),
                views.len()
            )));
        }
        for ((view, h), data) in views.into_iter().zip(&headers).zip(&payloads) {
            if view.name != h.name || view.shape != h.shape {
                return Err(Error::Format(format!(
                    "tensor `{}` {:?} does not match expected `{}` {:?}",
                    h.name, h.shape, view.name, view.shape
                )));
            }
            view.data.copy_from_slice(data);
        }
    }

    let step = r.u64("train state")?;
    let seed = r.u64("train state")?;
    let mut state = TrainState::new(seed);
    state.step = step;
    match r.u8("moment flag")? {
        0 => {}
        1 => {
            let lens: Vec<usize> = payloads.iter().map(Vec::len).collect();
            state.first_moments = lens.iter().map(|&n| r.f64s(n, "moments")).collect::<Result<_>>()?;
            state.second_moments = lens.iter().map(|&n| r.f64s(n, "moments")).collect::<Result<_>>()?;
        }
        f => return Err(Error::Format(format!("bad moment flag {f}"))),
    }
    let mut trailing = [0u8; 1];
    if r.inner.read(&mut trailing)? != 0 {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    Ok(Checkpoint { config, params, state })
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint, dtype: Dtype) -> Result<()> {
    write_checkpoint(BufWriter::new(File::create(path)?), ck, dtype)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
