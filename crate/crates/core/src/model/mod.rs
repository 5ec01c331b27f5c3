//! The generator, its Mamba blocks, the multi-scale discriminator and the
//! checkpoint format.

mod checkpoint;
mod config;
mod discriminator;
mod generator;
mod mamba;

use std::cell::RefCell;
use std::collections::{HashMap, HashSet};
use std::fmt;

use rand::Rng;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use checkpoint::{fnv1a64, Checkpoint, CheckpointTensor, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{DiscLayer, DiscriminatorConfig, GeneratorConfig};
pub use discriminator::{DiscOutput, Discriminator, ScaleOutput};
pub use generator::{Generator, GeneratorState};
pub use mamba::{MambaBlock, MambaState};

/// Uniform in `±1/sqrt(fan_in)`, where `fan_in` is the product of all
/// dimensions after the first.
pub(crate) fn uniform_tensor<T: Scalar, R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor<T> {
    let fan_in: usize = shape[1..].iter().product::<usize>().max(1);
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::from_f64_lossy(rng.random_range(-bound..bound))).collect();
    Tensor::param(data, shape).expect("length matches shape")
}

/// Named parameters being bound to a network; every name must be used
/// exactly once with the expected shape.
pub(crate) struct ParamMap<T: Scalar> {
    map: HashMap<String, Tensor<T>>,
    used: RefCell<HashSet<String>>,
}

impl<T: Scalar> ParamMap<T> {
    pub fn new(named: Vec<(String, Tensor<T>)>) -> Self {
        Self {
            map: named.into_iter().collect(),
            used: RefCell::new(HashSet::new()),
        }
    }

    pub fn take(&self, name: &str, shape: &[usize]) -> Result<Tensor<T>> {
        let t = self
            .map
            .get(name)
            .ok_or_else(|| Error::contract(format!("missing parameter {name}")))?;
        if t.shape() != shape {
            return Err(Error::contract(format!(
                "parameter {name} has shape {:?}, expected {shape:?}",
                t.shape()
            )));
        }
        self.used.borrow_mut().insert(name.to_string());
        Ok(t.clone())
    }

    pub fn finish(&self) -> Result<()> {
        let used = self.used.borrow();
        let mut extra: Vec<&String> = self.map.keys().filter(|k| !used.contains(*k)).collect();
        extra.sort();
        match extra.first() {
            Some(name) => Err(Error::contract(format!("unexpected parameter {name}"))),
            None => Ok(()),
        }
    }
}

/// One line of a parameter count.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamReport {
    pub entries: Vec<ParamEntry>,
    pub total: usize,
}

impl ParamReport {
    pub fn from_shapes(shapes: Vec<(String, Vec<usize>)>) -> Self {
        let entries: Vec<ParamEntry> = shapes
            .into_iter()
            .map(|(name, shape)| ParamEntry {
                count: shape.iter().product(),
                name,
                shape,
            })
            .collect();
        let total = entries.iter().map(|e| e.count).sum();
        Self { entries, total }
    }
}

impl fmt::Display for ParamReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.entries.iter().map(|e| e.name.len()).max().unwrap_or(0);
        for e in &self.entries {
            writeln!(f, "{:<width$}  {:>16}  {:>10}", e.name, format!("{:?}", e.shape), e.count)?;
        }
        write!(f, "{:<width$}  {:>16}  {:>10}", "total", "", self.total)
    }
}

/// Exact number of scalar parameters of a generator, itemised.
pub fn param_count(config: &GeneratorConfig) -> ParamReport {
    ParamReport::from_shapes(config.param_shapes())
}
