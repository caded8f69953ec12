use std::collections::HashMap;

use super::Tensor;
use crate::error::{ensure_arg, Error, Result};
use crate::textio::{fmt_f64, Lines};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named parameter tensors. Names are unique and shapes fixed once added.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Tensor) -> Result<ParamId> {
        ensure_arg!(
            !self.index.contains_key(name),
            "duplicate parameter name {name:?}"
        );
        ensure_arg!(
            !name.is_empty() && !name.contains(char::is_whitespace),
            "parameter names must be non-empty without whitespace: {name:?}"
        );
        let id = ParamId(self.tensors.len());
        self.names.push(name.to_string());
        self.tensors.push(value);
        self.index.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    /// Mutable access to the values only; the shape cannot change.
    pub fn values_mut(&mut self, id: ParamId) -> &mut [f64] {
        self.tensors[id.0].data_mut()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Appends a `params` section: a count line, then per tensor a
    /// `name rank d0 d1 ...` line and a line of values.
    pub fn write_text(&self, out: &mut String) {
        out.push_str(&format!("params {}\n", self.len()));
        for (name, t) in self.names.iter().zip(&self.tensors) {
            out.push_str(name);
            out.push_str(&format!(" {}", t.shape().len()));
            for d in t.shape() {
                out.push_str(&format!(" {d}"));
            }
            out.push('\n');
            write_values(out, t.data());
        }
    }

    pub(crate) fn read_text(lines: &mut Lines<'_>) -> Result<Self> {
        let count: usize = lines.keyed("params")?;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let (lineno, header) = lines.next_line()?;
            let fields: Vec<&str> = header.split_whitespace().collect();
            let bad = || Error::Format(format!("line {lineno}: bad parameter header {header:?}"));
            let name = fields.first().ok_or_else(bad)?;
            let rank: usize = fields.get(1).and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            if fields.len() != 2 + rank {
                return Err(bad());
            }
            let shape = fields[2..]
                .iter()
                .map(|s| s.parse::<usize>().map_err(|_| bad()))
                .collect::<Result<Vec<_>>>()?;
            let values = lines.values(shape.iter().product())?;
            let t = Tensor::new(shape, values).map_err(|e| Error::Format(e.to_string()))?;
            store
                .add(name, t)
                .map_err(|e| Error::Format(e.to_string()))?;
        }
        Ok(store)
    }

    /// Copies values from `other`, which must hold the same names with the same
    /// shapes in the same order.
    pub fn load_values_from(&mut self, other: &ParamStore) -> Result<()> {
        if self.names != other.names {
            return Err(Error::Format(format!(
                "parameter set mismatch: expected {} tensors {:?}.., found {} tensors",
                self.len(),
                self.names.first(),
                other.len()
            )));
        }
        for (i, (mine, theirs)) in self.tensors.iter().zip(&other.tensors).enumerate() {
            if mine.shape() != theirs.shape() {
                return Err(Error::Format(format!(
                    "shape mismatch for {}: expected {:?}, found {:?}",
                    self.names[i],
                    mine.shape(),
                    theirs.shape()
                )));
            }
        }
        self.tensors.clone_from(&other.tensors);
        Ok(())
    }
}

pub(crate) fn write_values(out: &mut String, values: &[f64]) {
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(&fmt_f64(*v));
    }
    out.push('\n');
}

/// One gradient tensor per parameter, aligned with [`ParamStore`] ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    grads: Vec<Tensor>,
}

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Gradients {
            grads: store.tensors.iter().map(|t| Tensor::zeros(t.shape())).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.grads[id.0]
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub(crate) fn accumulate(&mut self, id: ParamId, g: &Tensor) {
        self.grads[id.0].add_assign(g);
    }

    /// Adds `other` into `self`, parameter by parameter in id order.
    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            a.add_assign(b);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .flat_map(|t| t.data().iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, c: f64) {
        for t in &mut self.grads {
            t.data_mut().iter_mut().for_each(|v| *v *= c);
        }
    }
}
