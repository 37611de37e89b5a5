//! Named parameter arrays shared by models, optimizers and checkpoints.

use rand::Rng;

use crate::tensor::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    values: Vec<Vec<Real>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a parameter. Panics if the name is taken or the value length
    /// does not match the shape; both are programming errors in model setup.
    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], values: Vec<Real>) -> ParamId {
        let name = name.into();
        assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        assert_eq!(shape.iter().product::<usize>(), values.len(), "parameter {name}");
        self.names.push(name);
        self.shapes.push(shape.to_vec());
        self.values.push(values);
        ParamId(self.names.len() - 1)
    }

    /// Uniform Xavier/Glorot initialisation for a fan_in×fan_out matrix.
    pub fn add_xavier<R: Rng>(&mut self, name: impl Into<String>, shape: &[usize], rng: &mut R) -> ParamId {
        let fan_in = shape[0] as Real;
        let fan_out = *shape.last().unwrap_or(&1) as Real;
        let bound = (6.0 / (fan_in + fan_out)).sqrt();
        let n = shape.iter().product();
        let values = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
        self.add(name, shape, values)
    }

    pub fn add_normal<R: Rng>(&mut self, name: impl Into<String>, shape: &[usize], std: Real, rng: &mut R) -> ParamId {
        let n = shape.iter().product();
        // Box-Muller; keeps the dependency list to rand itself.
        let values = (0..n)
            .map(|_| {
                let u1: Real = rng.gen_range(Real::EPSILON..1.0);
                let u2: Real = rng.gen();
                std * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI as Real * u2).cos()
            })
            .collect();
        self.add(name, shape, values)
    }

    pub fn add_const(&mut self, name: impl Into<String>, shape: &[usize], c: Real) -> ParamId {
        let n = shape.iter().product();
        self.add(name, shape, vec![c; n])
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn shape(&self, id: ParamId) -> &[usize] {
        &self.shapes[id.0]
    }

    pub fn value(&self, id: ParamId) -> &[Real] {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut [Real] {
        &mut self.values[id.0]
    }

    /// Total number of scalars.
    pub fn numel(&self) -> usize {
        self.values.iter().map(Vec::len).sum()
    }

    /// True when both stores have the same names and shapes in the same order.
    pub fn same_layout(&self, other: &ParamStore) -> bool {
        self.names == other.names && self.shapes == other.shapes
    }

    /// A store with identical layout and all values zero.
    pub fn zeros_like(&self) -> ParamStore {
        ParamStore {
            names: self.names.clone(),
            shapes: self.shapes.clone(),
            values: self.values.iter().map(|v| vec![0.0; v.len()]).collect(),
        }
    }
}
