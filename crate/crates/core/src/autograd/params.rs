use crate::rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Uniform in ±sqrt(6 / fan_in).
    HeUniform { fan_in: usize },
    Constant(f64),
    /// Square identity plus uniform noise in ±jitter.
    IdentityJitter(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    /// Non-trainable entries hold buffers such as batchnorm running
    /// statistics; they are checkpointed but never optimised.
    pub trainable: bool,
}

/// Named parameters and buffers of one model.
///
/// Initial values depend only on the store seed and the parameter name,
/// so two models that share parameter names start from identical values
/// regardless of construction order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    seed: u64,
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        ParamStore {
            seed,
            params: Vec::new(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], init: Init) -> ParamId {
        let name = name.into();
        let value = match init {
            Init::HeUniform { fan_in } => {
                let bound = (6.0 / fan_in.max(1) as f64).sqrt();
                let mut r = rng::substream(self.seed, &format!("init/{name}"));
                Tensor::uniform(shape.to_vec(), bound, &mut r)
            }
            Init::Constant(c) => Tensor::full(shape.to_vec(), c),
            Init::IdentityJitter(j) => {
                assert!(shape.len() == 2 && shape[0] == shape[1], "identity init needs a square shape");
                let mut r = rng::substream(self.seed, &format!("init/{name}"));
                let mut t = Tensor::uniform(shape.to_vec(), j, &mut r);
                for i in 0..shape[0] {
                    t.data[i * shape[0] + i] += 1.0;
                }
                t
            }
        };
        self.insert(name, value.with_grad(), true)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, shape: &[usize], fill: f64) -> ParamId {
        self.insert(name.into(), Tensor::full(shape.to_vec(), fill), false)
    }

    fn insert(&mut self, name: String, value: Tensor, trainable: bool) -> ParamId {
        assert!(
            self.find(&name).is_none(),
            "duplicate parameter name `{name}`"
        );
        self.params.push(Parameter {
            name,
            value,
            trainable,
        });
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

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Number of trainable scalars.
    pub fn trainable_scalars(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.value.numel())
            .sum()
    }

    pub fn zero_grads(&mut self) {
        self.params.iter_mut().for_each(|p| p.value.zero_grad());
    }

    /// Mutable access to two distinct entries at once.
    pub fn pair_mut(&mut self, a: ParamId, b: ParamId) -> (&mut Parameter, &mut Parameter) {
        assert_ne!(a, b);
        if a.0 < b.0 {
            let (lo, hi) = self.params.split_at_mut(b.0);
            (&mut lo[a.0], &mut hi[0])
        } else {
            let (lo, hi) = self.params.split_at_mut(a.0);
            (&mut hi[0], &mut lo[b.0])
        }
    }
}
