use crate::error::{Error, Result};
use crate::numerics::graph::{Graph, Var};
use crate::numerics::scalar::Scalar;
use crate::numerics::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;

/// How a parameter tensor is filled at initialization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform in `(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    UniformFanIn(usize),
    Constant(f64),
}

/// Declaration of one named parameter tensor. The full list of defs is the
/// single source of truth for initialization, parameter counting,
/// checkpoint layout, and graph construction.
#[derive(Clone, Debug)]
pub struct ParamDef {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
    pub trainable: bool,
}

impl ParamDef {
    pub fn new(name: impl Into<String>, shape: impl Into<Vec<usize>>, init: Init) -> Self {
        ParamDef {
            name: name.into(),
            shape: shape.into(),
            init,
            trainable: true,
        }
    }

    pub fn frozen(mut self) -> Self {
        self.trainable = false;
        self
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Named parameter tensors in declaration order.
pub struct ParamStore<T: Scalar> {
    defs: Vec<ParamDef>,
    values: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    /// Initialize every tensor from one seeded stream, in declaration order.
    /// Draws are made in f64 regardless of `T`, so f32 and f64 stores built
    /// from the same seed hold the same values (up to rounding).
    pub fn init(defs: Vec<ParamDef>, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = Vec::with_capacity(defs.len());
        for def in &defs {
            let n = def.numel();
            let data: Vec<T> = match def.init {
                Init::UniformFanIn(fan_in) => {
                    if fan_in == 0 {
                        return Err(Error::Config(format!("{}: zero fan-in", def.name)));
                    }
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    (0..n)
                        .map(|_| T::from_f64(rng.gen_range(-bound..bound)))
                        .collect()
                }
                Init::Constant(c) => vec![T::from_f64(c); n],
            };
            values.push(Tensor::from_vec(def.shape.clone(), data)?);
        }
        Self::assemble(defs, values)
    }

    /// Wrap existing tensors (checkpoint load); shapes must match the defs.
    pub fn from_values(defs: Vec<ParamDef>, values: Vec<Tensor<T>>) -> Result<Self> {
        if defs.len() != values.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, got {}",
                defs.len(),
                values.len()
            )));
        }
        for (d, v) in defs.iter().zip(&values) {
            if d.shape != v.shape() {
                return Err(Error::Checkpoint(format!(
                    "{}: expected shape {:?}, got {:?}",
                    d.name,
                    d.shape,
                    v.shape()
                )));
            }
        }
        Self::assemble(defs, values)
    }

    fn assemble(defs: Vec<ParamDef>, values: Vec<Tensor<T>>) -> Result<Self> {
        let mut index = HashMap::with_capacity(defs.len());
        for (i, d) in defs.iter().enumerate() {
            if index.insert(d.name.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate parameter name {}", d.name)));
            }
        }
        Ok(ParamStore {
            defs,
            values,
            index,
        })
    }

    pub fn defs(&self) -> &[ParamDef] {
        &self.defs
    }

    pub fn len(&self) -> usize {
        self.defs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.defs.is_empty()
    }

    pub fn get(&self, name: &str) -> &Tensor<T> {
        let i = self.index[name];
        &self.values[i]
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor<T> {
        let i = self.index[name];
        &mut self.values[i]
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ParamDef, &Tensor<T>)> {
        self.defs.iter().zip(&self.values)
    }

    /// Total scalar count across all tensors (frozen included).
    pub fn total_elements(&self) -> u64 {
        self.defs.iter().map(|d| d.numel() as u64).sum()
    }

    /// Load every tensor into a graph: trainable defs as differentiable
    /// leaves, frozen ones as constants.
    pub fn load_into(&self, g: &mut Graph<T>) -> ParamVars {
        let mut map = HashMap::with_capacity(self.defs.len());
        for (def, value) in self.iter() {
            let var = if def.trainable {
                g.param(value.clone())
            } else {
                g.constant(value.clone())
            };
            map.insert(def.name.clone(), var);
        }
        ParamVars { map }
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            defs: self.defs.clone(),
            values: self.values.iter().map(|t| t.cast()).collect(),
            index: self.index.clone(),
        }
    }
}

/// Name-to-`Var` map for one graph build.
pub struct ParamVars {
    map: HashMap<String, Var>,
}

impl ParamVars {
    /// Panics on unknown names: model code asking for a parameter that the
    /// layout did not declare is a bug, not a runtime condition.
    pub fn var(&self, name: &str) -> Var {
        match self.map.get(name) {
            Some(v) => *v,
            None => panic!("parameter {name} not declared in layout"),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.map.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_and_bounded() {
        let defs = vec![
            ParamDef::new("w", vec![4, 9], Init::UniformFanIn(9)),
            ParamDef::new("g", vec![4], Init::Constant(1.0)),
        ];
        let a = ParamStore::<f64>::init(defs.clone(), 7).unwrap();
        let b = ParamStore::<f64>::init(defs, 7).unwrap();
        assert_eq!(a.get("w"), b.get("w"));
        assert!(a.get("w").as_slice().iter().all(|v| v.abs() < 1.0 / 3.0));
        assert_eq!(a.get("g").as_slice(), &[1.0; 4]);
        assert_eq!(a.total_elements(), 40);
    }

    #[test]
    fn duplicate_names_rejected() {
        let defs = vec![
            ParamDef::new("w", vec![1], Init::Constant(0.0)),
            ParamDef::new("w", vec![1], Init::Constant(0.0)),
        ];
        assert!(ParamStore::<f32>::init(defs, 0).is_err());
    }

    #[test]
    fn frozen_defs_become_constants() {
        let defs = vec![
            ParamDef::new("a", vec![2], Init::Constant(1.0)),
            ParamDef::new("b", vec![2], Init::Constant(2.0)).frozen(),
        ];
        let store = ParamStore::<f64>::init(defs, 0).unwrap();
        let mut g = Graph::new();
        let vars = store.load_into(&mut g);
        let a = vars.var("a");
        let b = vars.var("b");
        let s1 = g.mul(a, b).unwrap();
        let root = g.sum(s1);
        g.backward(root).unwrap();
        assert!(g.grad(a).is_some());
        assert!(g.grad(b).is_none());
    }
}
