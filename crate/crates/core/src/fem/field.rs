use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::mesh::Mesh;

/// Nodal coefficients of a P1 function, component-blocked: all node values of
/// component 0, then all node values of component 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodalField {
    values: Vec<f64>,
    components: usize,
}

impl NodalField {
    pub fn new(values: Vec<f64>, components: usize) -> Result<Self> {
        if components == 0 || values.len() % components != 0 {
            return Err(Error::invalid(format!(
                "{} values cannot be split into {components} components",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Range(format!("non-finite nodal value at index {i}")));
        }
        Ok(Self { values, components })
    }

    pub fn scalar(values: Vec<f64>) -> Result<Self> {
        Self::new(values, 1)
    }

    pub fn constant(mesh: &Mesh, value: f64) -> Self {
        Self { values: vec![value; mesh.node_count()], components: 1 }
    }

    pub fn zeros(mesh: &Mesh, components: usize) -> Self {
        Self { values: vec![0.0; mesh.node_count() * components], components }
    }

    /// Samples `f` at every mesh node.
    pub fn from_fn(mesh: &Mesh, f: impl Fn(f64, f64) -> f64) -> Self {
        let values = mesh.nodes().iter().map(|p| f(p[0], p[1])).collect();
        Self { values, components: 1 }
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn node_count(&self) -> usize {
        self.values.len() / self.components
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn component(&self, c: usize) -> &[f64] {
        let n = self.node_count();
        &self.values[c * n..(c + 1) * n]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Errors unless this field lives on `mesh` with `components` components.
    pub fn check(&self, mesh: &Mesh, components: usize) -> Result<()> {
        if self.components != components || self.node_count() != mesh.node_count() {
            return Err(Error::invalid(format!(
                "expected a {components}-component field on {} nodes, got {} components on {} nodes",
                mesh.node_count(),
                self.components,
                self.node_count()
            )));
        }
        Ok(())
    }
}
