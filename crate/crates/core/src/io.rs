//! Bit-exact binary artifacts.
//!
//! Every file is `magic[8] | version u32 | body_len u64 | body | fnv1a64(body) u64`,
//! all little-endian. Velocity payloads are the three face components in
//! order, each as `n³` values at index `(i·n + j)·n + k`.

use std::fs;
use std::hash::Hasher;
use std::path::Path;

use fnv::FnvHasher;
use rand_chacha::ChaCha8Rng;

use crate::error::{DpmError, Result};
use crate::filter::CoarseTarget;
use crate::grid::{GridSpec, VectorField};
use crate::neural::{DerivativeSet, FeatureConfig, NetDims, NetParams, NeuralClosure, OutputMode};
use crate::train::{IterationRecord, RngState, TrainState};

pub const SNAPSHOT_MAGIC: &[u8; 8] = b"DPMSNAP1";
pub const MODEL_MAGIC: &[u8; 8] = b"DPMMODEL";
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DPMCKPT1";
const VERSION: u32 = 1;

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

/// Hash identifying the configuration text that produced an artifact.
pub fn config_hash(text: &str) -> u64 {
    fnv1a(text.as_bytes())
}

#[derive(Default)]
struct Enc(Vec<u8>);

impl Enc {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u128(&mut self, v: u128) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        self.u64(v.len() as u64);
        for x in v {
            self.f64(*x);
        }
    }
    fn field(&mut self, u: &VectorField) {
        for c in &u.comp {
            for x in c {
                self.f64(*x);
            }
        }
    }

    fn finish(self, magic: &[u8; 8]) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.0.len() + 28);
        out.extend_from_slice(magic);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.0.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.0);
        out.extend_from_slice(&fnv1a(&self.0).to_le_bytes());
        out
    }
}

struct Dec<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Dec<'a> {
    /// Validates the frame and returns a decoder over the body.
    fn open(bytes: &'a [u8], magic: &[u8; 8]) -> Result<Self> {
        if bytes.len() < 28 || &bytes[..8] != magic {
            return Err(DpmError::Format(format!(
                "not a {} file",
                String::from_utf8_lossy(magic)
            )));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(DpmError::Format(format!("unsupported version {version}")));
        }
        let len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        if bytes.len() != 28 + len {
            return Err(DpmError::Format(format!(
                "body length {len} does not match file size {}",
                bytes.len()
            )));
        }
        let body = &bytes[20..20 + len];
        let sum = u64::from_le_bytes(bytes[20 + len..].try_into().unwrap());
        if fnv1a(body) != sum {
            return Err(DpmError::Format("checksum mismatch".into()));
        }
        Ok(Self { buf: body, pos: 0 })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(DpmError::Format("truncated body".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
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
    fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.take(16)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| DpmError::Format(e.to_string()))
    }
    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.u64()? as usize;
        if n > self.buf.len() / 8 {
            return Err(DpmError::Format("array length exceeds body".into()));
        }
        (0..n).map(|_| self.f64()).collect()
    }
    fn field(&mut self, grid: GridSpec) -> Result<VectorField> {
        let mut comp: [Vec<f64>; 3] = Default::default();
        for c in comp.iter_mut() {
            *c = (0..grid.len()).map(|_| self.f64()).collect::<Result<_>>()?;
        }
        VectorField::from_components(grid, comp)
    }
    fn done(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(DpmError::Format("trailing bytes after body".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SnapshotKind {
    Dns,
    Filtered,
    /// Two fields: `Ū` then its projection `w`.
    CoarseTarget,
    Les,
}

impl SnapshotKind {
    fn tag(self) -> u8 {
        self as u8
    }

    fn from_tag(t: u8) -> Result<Self> {
        Ok(match t {
            0 => SnapshotKind::Dns,
            1 => SnapshotKind::Filtered,
            2 => SnapshotKind::CoarseTarget,
            3 => SnapshotKind::Les,
            _ => return Err(DpmError::Format(format!("unknown snapshot kind {t}"))),
        })
    }

    fn field_count(self) -> usize {
        if self == SnapshotKind::CoarseTarget {
            2
        } else {
            1
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotHeader {
    pub kind: SnapshotKind,
    pub n: usize,
    pub domain_length: f64,
    pub time: f64,
    pub viscosity: f64,
    pub density: f64,
    pub case_id: String,
    pub seed: u64,
    pub u_rms0: f64,
    pub t_eddy0: f64,
    pub epsilon0: f64,
    pub config_hash: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub header: SnapshotHeader,
    pub fields: Vec<VectorField>,
}

impl Snapshot {
    pub fn new(header: SnapshotHeader, fields: Vec<VectorField>) -> Result<Self> {
        if fields.len() != header.kind.field_count() {
            return Err(DpmError::Shape(format!(
                "{:?} snapshot holds {} fields, got {}",
                header.kind,
                header.kind.field_count(),
                fields.len()
            )));
        }
        let grid = header.grid()?;
        if fields.iter().any(|f| !f.grid.same_geometry(&grid)) {
            return Err(DpmError::Shape("snapshot field grid differs from header".into()));
        }
        Ok(Self { header, fields })
    }

    pub fn velocity(&self) -> &VectorField {
        &self.fields[0]
    }

    pub fn to_coarse_target(&self) -> Result<CoarseTarget> {
        if self.header.kind != SnapshotKind::CoarseTarget {
            return Err(DpmError::Format("snapshot is not a coarse target".into()));
        }
        Ok(CoarseTarget {
            u_bar: self.fields[0].clone(),
            w: self.fields[1].clone(),
            time: self.header.time,
            source: self.header.case_id.clone(),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let h = &self.header;
        let mut e = Enc::default();
        e.u8(h.kind.tag());
        e.u32(h.n as u32);
        e.f64(h.domain_length);
        e.f64(h.time);
        e.f64(h.viscosity);
        e.f64(h.density);
        e.str(&h.case_id);
        e.u64(h.seed);
        e.f64(h.u_rms0);
        e.f64(h.t_eddy0);
        e.f64(h.epsilon0);
        e.u64(h.config_hash);
        for f in &self.fields {
            e.field(f);
        }
        e.finish(SNAPSHOT_MAGIC)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut d = Dec::open(bytes, SNAPSHOT_MAGIC)?;
        let header = SnapshotHeader {
            kind: SnapshotKind::from_tag(d.u8()?)?,
            n: d.u32()? as usize,
            domain_length: d.f64()?,
            time: d.f64()?,
            viscosity: d.f64()?,
            density: d.f64()?,
            case_id: d.str()?,
            seed: d.u64()?,
            u_rms0: d.f64()?,
            t_eddy0: d.f64()?,
            epsilon0: d.f64()?,
            config_hash: d.u64()?,
        };
        let grid = header.grid()?;
        let fields = (0..header.kind.field_count())
            .map(|_| d.field(grid))
            .collect::<Result<Vec<_>>>()?;
        d.done()?;
        Self::new(header, fields)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_bytes(path, &self.to_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

impl SnapshotHeader {
    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::new(self.n, self.domain_length)
    }
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(path, bytes)?;
    Ok(())
}

fn encode_model(e: &mut Enc, m: &NeuralClosure) {
    let d = m.params.dims();
    e.u8(m.mode.tag());
    e.u8(m.features.set.tag());
    e.f64(m.output_scale);
    e.u32(d.inputs as u32);
    e.u32(d.hidden as u32);
    e.u32(d.outputs as u32);
    e.f64s(&m.features.scales);
    e.f64s(m.params.as_slice());
}

fn decode_model(d: &mut Dec) -> Result<NeuralClosure> {
    let mode = OutputMode::from_tag(d.u8()?)?;
    let set = DerivativeSet::from_tag(d.u8()?)?;
    let scale = d.f64()?;
    let dims = NetDims::new(d.u32()? as usize, d.u32()? as usize, d.u32()? as usize)?;
    let features = FeatureConfig::new(set, d.f64s()?)?;
    let params = NetParams::from_vec(dims, d.f64s()?)?;
    NeuralClosure::new(params, features, mode, scale)
}

/// Trained closure plus the hash of the configuration that produced it.
pub fn model_to_bytes(m: &NeuralClosure, config_hash: u64) -> Vec<u8> {
    let mut e = Enc::default();
    e.u64(config_hash);
    encode_model(&mut e, m);
    e.finish(MODEL_MAGIC)
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<(NeuralClosure, u64)> {
    let mut d = Dec::open(bytes, MODEL_MAGIC)?;
    let hash = d.u64()?;
    let m = decode_model(&mut d)?;
    d.done()?;
    Ok((m, hash))
}

pub fn write_model(path: &Path, m: &NeuralClosure, config_hash: u64) -> Result<()> {
    write_bytes(path, &model_to_bytes(m, config_hash))
}

pub fn read_model(path: &Path) -> Result<(NeuralClosure, u64)> {
    model_from_bytes(&fs::read(path)?)
}

/// Model, RMSprop accumulators, iteration counter, RNG position and loss
/// history.
pub fn checkpoint_to_bytes(s: &TrainState<NeuralClosure>, config_hash: u64) -> Vec<u8> {
    let mut e = Enc::default();
    e.u64(config_hash);
    encode_model(&mut e, &s.model);
    e.f64s(&s.accum);
    e.u64(s.iteration);
    let r = RngState::capture(&s.rng);
    e.0.extend_from_slice(&r.seed);
    e.u64(r.stream);
    e.u128(r.word_pos);
    e.u64(s.history.len() as u64);
    for h in &s.history {
        e.u64(h.iteration);
        e.u64(h.case as u64);
        e.u64(h.start as u64);
        e.f64(h.loss);
        e.u64(h.skipped as u64);
    }
    e.finish(CHECKPOINT_MAGIC)
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<(TrainState<NeuralClosure>, u64)> {
    let mut d = Dec::open(bytes, CHECKPOINT_MAGIC)?;
    let hash = d.u64()?;
    let model = decode_model(&mut d)?;
    let accum = d.f64s()?;
    if accum.len() != model.params.len() {
        return Err(DpmError::Format("accumulator length differs from parameter count".into()));
    }
    let iteration = d.u64()?;
    let seed: [u8; 32] = d.take(32)?.try_into().unwrap();
    let rng: ChaCha8Rng = RngState { seed, stream: d.u64()?, word_pos: d.u128()? }.restore();
    let n = d.u64()? as usize;
    let mut history = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        history.push(IterationRecord {
            iteration: d.u64()?,
            case: d.u64()? as usize,
            start: d.u64()? as usize,
            loss: d.f64()?,
            skipped: d.u64()? as usize,
        });
    }
    d.done()?;
    Ok((TrainState { model, accum, iteration, rng, history }, hash))
}

pub fn write_checkpoint(path: &Path, s: &TrainState<NeuralClosure>, config_hash: u64) -> Result<()> {
    write_bytes(path, &checkpoint_to_bytes(s, config_hash))
}

pub fn read_checkpoint(path: &Path) -> Result<(TrainState<NeuralClosure>, u64)> {
    checkpoint_from_bytes(&fs::read(path)?)
}
