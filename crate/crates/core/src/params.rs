//! Named parameter sets, their initialisation and the `PMCN` checkpoint
//! container.
//!
//! Checkpoint layout (all integers little-endian):
//!
//! ```text
//! "PMCN" | version: u32 | count: u32 |
//!   count × ( path_len: u16 | path: UTF-8 | shape: 4 × u32 | data: f32 × len )
//! ```
//!
//! Records appear in lexicographic path order.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng;

use crate::error::{format_err, invalid, io_at, Result};
use crate::graph::{Graph, Var};
use crate::rng;
use crate::tensor::{Shape, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PMCN";
pub const CHECKPOINT_VERSION: u32 = 1;

/// How a parameter tensor is initialised.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
    Glorot { fan_in: usize, fan_out: usize },
    Zeros,
    Ones,
}

/// Declared parameter: path, shape and initialiser.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub path: String,
    pub shape: Shape,
    pub init: Init,
}

impl ParamSpec {
    /// Conv kernel `(cout, cin, k, k)` with Glorot fans `cin·k²` / `cout·k²`.
    pub fn conv(path: impl Into<String>, cout: usize, cin: usize, k: usize) -> Self {
        ParamSpec {
            path: path.into(),
            shape: Shape::new(cout, cin, k, k),
            init: Init::Glorot {
                fan_in: cin * k * k,
                fan_out: cout * k * k,
            },
        }
    }

    /// Depthwise kernel `(c, 1, 3, 3)`.
    pub fn depthwise(path: impl Into<String>, c: usize) -> Self {
        ParamSpec {
            path: path.into(),
            shape: Shape::new(c, 1, 3, 3),
            init: Init::Glorot {
                fan_in: 9,
                fan_out: 9,
            },
        }
    }

    pub fn vector(path: impl Into<String>, len: usize, init: Init) -> Self {
        ParamSpec {
            path: path.into(),
            shape: Shape::new(len, 1, 1, 1),
            init,
        }
    }
}

/// Parameters keyed by dot-separated path, iterated in lexicographic order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Parameters {
    map: BTreeMap<String, Tensor>,
}

impl Parameters {
    pub fn new() -> Self {
        Parameters::default()
    }

    /// Draws every declared tensor from the stream keyed by `(seed, path)`.
    pub fn init(specs: &[ParamSpec], seed: u64) -> Result<Self> {
        let mut p = Parameters::new();
        for spec in specs {
            let t = match spec.init {
                Init::Zeros => Tensor::zeros(spec.shape),
                Init::Ones => Tensor::ones(spec.shape),
                Init::Glorot { fan_in, fan_out } => {
                    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    let mut r = rng::stream(seed, &format!("init:{}", spec.path), &[]);
                    Tensor::from_fn(spec.shape, |_, _, _, _| r.gen_range(-a..a))
                }
            };
            p.insert(spec.path.clone(), t)?;
        }
        Ok(p)
    }

    pub fn insert(&mut self, path: String, t: Tensor) -> Result<()> {
        if path.is_empty() || path.len() > u16::MAX as usize {
            return Err(invalid(format!("parameter path length {} out of range", path.len())));
        }
        if self.map.contains_key(&path) {
            return Err(invalid(format!("duplicate parameter path `{path}`")));
        }
        self.map.insert(path, t);
        Ok(())
    }

    pub fn get(&self, path: &str) -> Option<&Tensor> {
        self.map.get(path)
    }

    pub fn get_mut(&mut self, path: &str) -> Option<&mut Tensor> {
        self.map.get_mut(path)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.map.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.map.iter_mut()
    }

    pub fn paths(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.map.values().map(Tensor::len).sum()
    }

    /// Rounds every value through `f32`, the checkpoint storage precision.
    pub fn quantized(&self) -> Parameters {
        Parameters {
            map: self
                .map
                .iter()
                .map(|(k, t)| (k.clone(), t.map(|v| v as f32 as f64)))
                .collect(),
        }
    }

    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.map.len() as u32).to_le_bytes());
        for (path, t) in &self.map {
            out.extend_from_slice(&(path.len() as u16).to_le_bytes());
            out.extend_from_slice(path.as_bytes());
            for d in t.shape().dims() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(format_err("checkpoint", "bad magic (expected PMCN)"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(format_err("checkpoint", format!("unsupported version {version}")));
        }
        let count = r.u32()?;
        let mut p = Parameters::new();
        for _ in 0..count {
            let len = r.u16()? as usize;
            let path = std::str::from_utf8(r.take(len)?)
                .map_err(|e| format_err("checkpoint", format!("path is not UTF-8: {e}")))?
                .to_string();
            let mut dims = [0usize; 4];
            for d in &mut dims {
                *d = r.u32()? as usize;
            }
            let shape = Shape::from_dims(dims);
            let mut data = Vec::with_capacity(shape.len());
            for _ in 0..shape.len() {
                data.push(f32::from_le_bytes(r.array()?) as f64);
            }
            p.insert(path, Tensor::new(shape, data)?)
                .map_err(|e| format_err("checkpoint", e.to_string()))?;
        }
        if r.pos != bytes.len() {
            return Err(format_err(
                "checkpoint",
                format!("{} trailing bytes", bytes.len() - r.pos),
            ));
        }
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_checkpoint_bytes()).map_err(io_at(path))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Parameters::from_checkpoint_bytes(&fs::read(path).map_err(io_at(path))?)
    }

    /// Checks that the set holds exactly the declared paths and shapes.
    pub fn check_matches(&self, specs: &[ParamSpec]) -> Result<()> {
        if specs.len() != self.map.len() {
            return Err(invalid(format!(
                "parameter set has {} tensors, model declares {}",
                self.map.len(),
                specs.len()
            )));
        }
        for s in specs {
            match self.map.get(&s.path) {
                None => return Err(invalid(format!("missing parameter `{}`", s.path))),
                Some(t) if t.shape() != s.shape => {
                    return Err(invalid(format!(
                        "parameter `{}` has shape {}, expected {}",
                        s.path,
                        t.shape(),
                        s.shape
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(format_err("checkpoint", "truncated"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut a = [0u8; N];
        a.copy_from_slice(self.take(N)?);
        Ok(a)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }
}

/// Parameters bound as trainable leaves on a graph.
#[derive(Clone, Debug, Default)]
pub struct ParamVars {
    vars: BTreeMap<String, Var>,
}

impl ParamVars {
    pub fn bind(g: &mut Graph, params: &Parameters) -> Self {
        ParamVars {
            vars: params
                .iter()
                .map(|(k, t)| (k.clone(), g.leaf(t.clone())))
                .collect(),
        }
    }

    /// Binds already-created vars, paired with `paths` in order.
    pub fn from_vars<'a>(paths: impl IntoIterator<Item = &'a String>, vars: &[Var]) -> Self {
        ParamVars {
            vars: paths.into_iter().cloned().zip(vars.iter().copied()).collect(),
        }
    }

    pub fn get(&self, path: &str) -> Result<Var> {
        self.vars
            .get(path)
            .copied()
            .ok_or_else(|| invalid(format!("missing parameter `{path}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_specs() -> Vec<ParamSpec> {
        vec![
            ParamSpec::conv("b.weight", 4, 3, 3),
            ParamSpec::vector("b.bias", 4, Init::Zeros),
            ParamSpec::vector("a.gamma", 2, Init::Ones),
        ]
    }

    #[test]
    fn init_is_order_independent() {
        let specs = sample_specs();
        let mut rev = specs.clone();
        rev.reverse();
        let a = Parameters::init(&specs, 11).unwrap();
        let b = Parameters::init(&rev, 11).unwrap();
        assert_eq!(a, b);
        let c = Parameters::init(&specs, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn glorot_bound_holds() {
        let p = Parameters::init(&sample_specs(), 3).unwrap();
        let a = (6.0f64 / (27.0 + 36.0)).sqrt();
        assert!(p.get("b.weight").unwrap().data().iter().all(|v| v.abs() < a));
        assert!(p.get("b.bias").unwrap().data().iter().all(|&v| v == 0.0));
        assert!(p.get("a.gamma").unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn iteration_is_lexicographic() {
        let p = Parameters::init(&sample_specs(), 3).unwrap();
        let paths: Vec<&String> = p.paths().collect();
        assert_eq!(paths, ["a.gamma", "b.bias", "b.weight"]);
    }

    #[test]
    fn checkpoint_layout() {
        let mut p = Parameters::new();
        p.insert("w".into(), Tensor::vector(&[1.0, -2.0])).unwrap();
        let bytes = p.to_checkpoint_bytes();
        let mut expected = b"PMCN".to_vec();
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&1u16.to_le_bytes());
        expected.push(b'w');
        for d in [2u32, 1, 1, 1] {
            expected.extend_from_slice(&d.to_le_bytes());
        }
        expected.extend_from_slice(&1.0f32.to_le_bytes());
        expected.extend_from_slice(&(-2.0f32).to_le_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn checkpoint_rejects_corruption() {
        let p = Parameters::init(&sample_specs(), 1).unwrap();
        let bytes = p.to_checkpoint_bytes();
        assert!(Parameters::from_checkpoint_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Parameters::from_checkpoint_bytes(&bad).is_err());
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(Parameters::from_checkpoint_bytes(&bad).is_err());
        let mut long = bytes;
        long.push(0);
        assert!(Parameters::from_checkpoint_bytes(&long).is_err());
    }

    #[test]
    fn checkpoint_roundtrip_is_quantized_identity() {
        let p = Parameters::init(&sample_specs(), 5).unwrap();
        let back = Parameters::from_checkpoint_bytes(&p.to_checkpoint_bytes()).unwrap();
        assert_eq!(back, p.quantized());
        assert_eq!(back.to_checkpoint_bytes(), p.to_checkpoint_bytes());
    }

    #[test]
    fn duplicate_paths_rejected() {
        let mut p = Parameters::new();
        p.insert("x".into(), Tensor::scalar(1.0)).unwrap();
        assert!(p.insert("x".into(), Tensor::scalar(2.0)).is_err());
    }
}
