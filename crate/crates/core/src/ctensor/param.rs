use super::matrix::ComplexMatrix;
use crate::error::{Result, SpectfError};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// A named complex parameter and its accumulated gradient.
///
/// Real and imaginary planes are independent trainable coordinates.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: ComplexMatrix,
    pub grad: ComplexMatrix,
    pub trainable: bool,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: ComplexMatrix) -> Self {
        let grad = ComplexMatrix::zeros(value.rows(), value.cols());
        Self { name: name.into(), value, grad, trainable: true }
    }

    /// Real scalars held by this parameter (both planes).
    pub fn scalar_count(&self) -> usize {
        2 * self.value.len()
    }
}

/// Ordered registry of every parameter of a model.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: ComplexMatrix) -> ParamId {
        let name = name.into();
        debug_assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        self.params.push(Parameter::new(name, value));
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill_zero();
        }
    }

    /// Total trainable real scalars.
    pub fn trainable_scalars(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(Parameter::scalar_count).sum()
    }

    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.grad.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    /// Copy values from `other`, matching by name and shape.
    pub fn load_values(&mut self, entries: &[(String, ComplexMatrix)]) -> Result<()> {
        if entries.len() != self.params.len() {
            return Err(SpectfError::invalid(format!(
                "checkpoint holds {} parameters, model expects {}",
                entries.len(),
                self.params.len()
            )));
        }
        for (name, value) in entries {
            let id = self
                .find(name)
                .ok_or_else(|| SpectfError::invalid(format!("unknown parameter '{name}'")))?;
            let p = &mut self.params[id.0];
            if p.value.shape() != value.shape() {
                return Err(SpectfError::invalid(format!(
                    "parameter '{name}' has shape {:?}, checkpoint has {:?}",
                    p.value.shape(),
                    value.shape()
                )));
            }
            p.value = value.clone();
        }
        Ok(())
    }

    pub fn snapshot(&self) -> Vec<(String, ComplexMatrix)> {
        self.params.iter().map(|p| (p.name.clone(), p.value.clone())).collect()
    }
}
