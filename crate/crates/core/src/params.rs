//! Named parameter slices, their binary checkpoint format and the momentum
//! optimiser.
//!
//! Checkpoint layout (little-endian):
//!
//! ```text
//! b"MSNM"  u32 version
//! u32 slice count
//! repeated: u32 name length, UTF-8 name, u32 value count, f32 values
//! ```

use crate::autodiff::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::Rng;
use std::io::{Read, Write};
use std::path::Path;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MSNM";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Ordered collection of named real vectors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    entries: Vec<(String, Vec<f64>)>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a slice, replacing an existing one with the same name.
    pub fn insert(&mut self, name: impl Into<String>, values: Vec<f64>) {
        let name = name.into();
        match self.entries.iter_mut().find(|(n, _)| *n == name) {
            Some((_, v)) => *v = values,
            None => self.entries.push((name, values)),
        }
    }

    pub fn get(&self, name: &str) -> Result<&[f64]> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
            .ok_or_else(|| Error::format(name, "parameter slice missing"))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Vec<f64>> {
        self.entries
            .iter_mut()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v)
            .ok_or_else(|| Error::format(name, "parameter slice missing"))
    }

    /// Like [`get`](Self::get) but also checks the length.
    pub fn expect(&self, name: &str, len: usize) -> Result<&[f64]> {
        let v = self.get(name)?;
        if v.len() != len {
            return Err(Error::format(
                name,
                format!("expected {len} values, found {}", v.len()),
            ));
        }
        Ok(v)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.iter().any(|(n, _)| n == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.entries.iter().map(|(n, v)| (n.as_str(), v.as_slice()))
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.iter().map(|(n, _)| n.as_str()).collect()
    }

    /// Total number of scalars.
    pub fn total_len(&self) -> usize {
        self.entries.iter().map(|(_, v)| v.len()).sum()
    }

    /// Rounds every value through `f32`, as a checkpoint roundtrip would.
    pub fn quantize_f32(&mut self) {
        for (_, v) in &mut self.entries {
            v.iter_mut().for_each(|x| *x = *x as f32 as f64);
        }
    }

    /// Registers every slice on the tape, as leaves when `trainable(name)`
    /// holds and as constants otherwise.
    pub fn bind(&self, tape: &mut Tape, trainable: impl Fn(&str) -> bool) -> Bound {
        let vars = self
            .entries
            .iter()
            .map(|(n, v)| {
                let var = if trainable(n) {
                    tape.leaf(v.clone())
                } else {
                    tape.constant(v.clone())
                };
                (n.clone(), var)
            })
            .collect();
        Bound { vars }
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_u32::<LittleEndian>(CHECKPOINT_VERSION)?;
        w.write_u32::<LittleEndian>(self.entries.len() as u32)?;
        for (name, values) in &self.entries {
            w.write_u32::<LittleEndian>(name.len() as u32)?;
            w.write_all(name.as_bytes())?;
            w.write_u32::<LittleEndian>(values.len() as u32)?;
            for v in values {
                w.write_f32::<LittleEndian>(*v as f32)?;
            }
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| Error::format("magic", "file too short"))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::format("magic", format!("expected MSNM, found {magic:?}")));
        }
        let version = r
            .read_u32::<LittleEndian>()
            .map_err(|_| Error::format("version", "truncated"))?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::format("version", format!("unsupported version {version}")));
        }
        let count = r
            .read_u32::<LittleEndian>()
            .map_err(|_| Error::format("slice count", "truncated"))?;
        let mut store = ParamStore::new();
        for i in 0..count {
            let trunc = |what: &str| Error::format(format!("slice {i} {what}"), "truncated");
            let len = r.read_u32::<LittleEndian>().map_err(|_| trunc("name length"))? as usize;
            if len > 4096 {
                return Err(Error::format(format!("slice {i} name length"), format!("{len} is implausible")));
            }
            let mut name = vec![0u8; len];
            r.read_exact(&mut name).map_err(|_| trunc("name"))?;
            let name = String::from_utf8(name)
                .map_err(|_| Error::format(format!("slice {i} name"), "not UTF-8"))?;
            let n = r.read_u32::<LittleEndian>().map_err(|_| trunc("length"))? as usize;
            let mut values = Vec::with_capacity(n.min(1 << 24));
            for _ in 0..n {
                let v = r
                    .read_f32::<LittleEndian>()
                    .map_err(|_| Error::format(name.clone(), "truncated values"))?;
                if !v.is_finite() {
                    return Err(Error::format(name.clone(), "non-finite value"));
                }
                values.push(v as f64);
            }
            if store.contains(&name) {
                return Err(Error::format(name, "duplicate slice"));
            }
            store.insert(name, values);
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(Error::format("checkpoint", format!("{} trailing bytes", rest.len())));
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::read_from(bytes.as_slice())
    }
}

/// Tape handles for the slices of a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<(String, Var)>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Var {
        self.vars
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
            .unwrap_or_else(|| panic!("parameter `{name}` was not bound"))
    }

    /// Gradient of every bound slice, zeros where none flowed.
    pub fn gradients(&self, store: &ParamStore, grads: &Gradients) -> ParamStore {
        let mut out = ParamStore::new();
        for ((name, var), (_, values)) in self.vars.iter().zip(store.iter()) {
            out.insert(name.clone(), grads.get_or_zeros(*var, values.len()));
        }
        out
    }
}

/// Uniform Xavier/Glorot initialisation of a `fan_in × fan_out` matrix.
pub fn xavier_uniform(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Vec<f64> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..fan_in * fan_out).map(|_| rng.gen_range(-a..a)).collect()
}

/// Gradient descent with heavy-ball momentum: `v ← βv + g; θ ← θ − lr·v`.
#[derive(Debug, Clone)]
pub struct Momentum {
    pub lr: f64,
    pub beta: f64,
    velocity: ParamStore,
}

impl Momentum {
    pub fn new(lr: f64, beta: f64) -> Self {
        Self {
            lr,
            beta,
            velocity: ParamStore::new(),
        }
    }

    /// Updates every slice of `params` that has a gradient in `grads`.
    pub fn step(&mut self, params: &mut ParamStore, grads: &ParamStore) -> Result<()> {
        for (name, g) in grads.iter() {
            if !self.velocity.contains(name) {
                self.velocity.insert(name, vec![0.0; g.len()]);
            }
            let v = self.velocity.get_mut(name)?;
            let p = params.get_mut(name)?;
            if p.len() != g.len() {
                return Err(Error::Shape(format!(
                    "gradient for `{name}` has {} values, parameter has {}",
                    g.len(),
                    p.len()
                )));
            }
            for ((p, v), g) in p.iter_mut().zip(v.iter_mut()).zip(g) {
                *v = self.beta * *v + g;
                *p -= self.lr * *v;
            }
        }
        Ok(())
    }
}
