//! Standardized generative models `θ = f(ξ)` built from a chain of stages.

pub mod harmonic;
pub mod special;
pub mod spectrum;
pub mod stages;

use std::sync::Arc;

use crate::error::{check_len, Error, Result};
use crate::latent::{LatentVector, Layout};
use crate::linop::{LinearOperator, Operator, OperatorKind};

pub use stages::{Linear, MatrixProduct, Pointwise, ScalarFn, ScaleBlock, SpectralField, Stage};

#[derive(Debug, Clone)]
pub struct StandardizedModel {
    layout: Arc<Layout>,
    stages: Vec<Arc<dyn Stage>>,
    output_dim: usize,
}

impl StandardizedModel {
    pub fn new(layout: Arc<Layout>, stages: Vec<Arc<dyn Stage>>) -> Result<Self> {
        if stages.is_empty() {
            return Err(Error::Config("model needs at least one stage".into()));
        }
        let mut dim = layout.total_dim();
        for stage in &stages {
            check_len("model stage input", dim, stage.input_dim())?;
            dim = stage.output_dim();
        }
        Ok(Self {
            layout,
            stages,
            output_dim: dim,
        })
    }

    /// Starts a chain; stages are appended with [`ModelBuilder::then`].
    pub fn builder(layout: Arc<Layout>) -> ModelBuilder {
        ModelBuilder {
            layout,
            stages: Vec::new(),
        }
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn input_dim(&self) -> usize {
        self.layout.total_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn stages(&self) -> &[Arc<dyn Stage>] {
        &self.stages
    }

    /// Input followed by the output of every stage.
    pub fn activations(&self, xi: &[f64]) -> Result<Vec<Vec<f64>>> {
        check_len("model input", self.input_dim(), xi.len())?;
        let mut acts = Vec::with_capacity(self.stages.len() + 1);
        acts.push(xi.to_vec());
        for stage in &self.stages {
            let next = stage.forward(acts.last().expect("non-empty"))?;
            acts.push(next);
        }
        Ok(acts)
    }

    pub fn forward_values(&self, xi: &[f64]) -> Result<Vec<f64>> {
        check_len("model input", self.input_dim(), xi.len())?;
        let mut x = xi.to_vec();
        for stage in &self.stages {
            x = stage.forward(&x)?;
        }
        Ok(x)
    }

    pub fn forward(&self, xi: &LatentVector) -> Result<Vec<f64>> {
        xi.check_layout(&self.layout)?;
        self.forward_values(xi.as_slice())
    }

    pub fn jvp(&self, xi: &LatentVector, tangent: &LatentVector) -> Result<Vec<f64>> {
        xi.check_layout(&self.layout)?;
        tangent.check_layout(&self.layout)?;
        Ok(self.linearize(xi.as_slice())?.jacobian.matvec(tangent.as_slice()))
    }

    pub fn vjp(&self, xi: &LatentVector, cotangent: &[f64]) -> Result<LatentVector> {
        xi.check_layout(&self.layout)?;
        check_len("model cotangent", self.output_dim, cotangent.len())?;
        let back = self.linearize(xi.as_slice())?.jacobian.rmatvec(cotangent);
        LatentVector::from_values(&self.layout, back)
    }

    /// Forward value together with the frozen Jacobian at `xi`.
    pub fn linearize(&self, xi: &[f64]) -> Result<Linearization> {
        let acts = self.activations(xi)?;
        let value = acts.last().expect("non-empty").clone();
        let jac = ModelJacobian {
            stages: self.stages.clone(),
            acts,
            domain: self.input_dim(),
            codomain: self.output_dim,
        };
        Ok(Linearization {
            value,
            jacobian: Arc::new(jac),
        })
    }

    pub fn jacobian_operator(&self, xi: &LatentVector) -> Result<Operator> {
        xi.check_layout(&self.layout)?;
        Ok(self.linearize(xi.as_slice())?.jacobian)
    }
}

pub struct ModelBuilder {
    layout: Arc<Layout>,
    stages: Vec<Arc<dyn Stage>>,
}

impl ModelBuilder {
    pub fn then(mut self, stage: impl Stage + 'static) -> Self {
        self.stages.push(Arc::new(stage));
        self
    }

    pub fn build(self) -> Result<StandardizedModel> {
        StandardizedModel::new(self.layout, self.stages)
    }
}

#[derive(Debug, Clone)]
pub struct Linearization {
    pub value: Vec<f64>,
    pub jacobian: Operator,
}

/// Jacobian of a stage chain at a captured point.
#[derive(Debug)]
struct ModelJacobian {
    stages: Vec<Arc<dyn Stage>>,
    acts: Vec<Vec<f64>>,
    domain: usize,
    codomain: usize,
}

impl LinearOperator for ModelJacobian {
    fn domain_dim(&self) -> usize {
        self.domain
    }

    fn codomain_dim(&self) -> usize {
        self.codomain
    }

    fn kind(&self) -> OperatorKind {
        OperatorKind::ModelJacobian
    }

    fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut t = x.to_vec();
        for (i, stage) in self.stages.iter().enumerate() {
            t = stage.jvp(&self.acts[i], &self.acts[i + 1], &t);
        }
        t
    }

    fn rmatvec(&self, y: &[f64]) -> Vec<f64> {
        let mut c = y.to_vec();
        for (i, stage) in self.stages.iter().enumerate().rev() {
            c = stage.vjp(&self.acts[i], &self.acts[i + 1], &c);
        }
        c
    }
}
