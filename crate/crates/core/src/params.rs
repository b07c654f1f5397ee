//! Named parameter tensors with gradient accumulators, partitioned into groups.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{bail, Error, Result};
use crate::tensor::Tensor;

/// Parameter group tags. Every parameter belongs to exactly one group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Group {
    Lm,
    Encoder,
    TdVae,
    Discriminator,
    Psa,
}

impl Group {
    pub const ALL: [Group; 5] = [Group::Lm, Group::Encoder, Group::TdVae, Group::Discriminator, Group::Psa];

    pub fn as_str(self) -> &'static str {
        match self {
            Group::Lm => "lm",
            Group::Encoder => "encoder",
            Group::TdVae => "tdvae",
            Group::Discriminator => "discriminator",
            Group::Psa => "psa",
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Group> {
        Group::ALL.get(code as usize).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub group: Group,
    pub value: Tensor,
    pub grad: Tensor,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterStore {
    params: Vec<Param>,
    by_name: BTreeMap<String, ParamId>,
}

/// How a freshly registered tensor is initialized.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Const(f64),
    Normal(f64),
    /// Normal with std `1/sqrt(rows)`, i.e. fan-in scaling for `x · W`.
    FanIn,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(
        &mut self,
        name: &str,
        group: Group,
        rows: usize,
        cols: usize,
        init: Init,
        rng: &mut impl Rng,
    ) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            bail!(InvalidArgument, "duplicate parameter name {name}");
        }
        let mut value = Tensor::zeros(rows, cols);
        match init {
            Init::Zeros => {}
            Init::Const(c) => value.fill(c),
            Init::Normal(std) => value.data_mut().iter_mut().for_each(|v| *v = std * sample_normal(rng)),
            Init::FanIn => {
                let std = 1.0 / num_traits::Float::sqrt(rows.max(1) as f64);
                value.data_mut().iter_mut().for_each(|v| *v = std * sample_normal(rng));
            }
        }
        let id = ParamId(self.params.len());
        self.params.push(Param { name: name.to_string(), group, grad: Tensor::zeros(rows, cols), value });
        self.by_name.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].grad
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.by_name.get(name).copied().ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn group_ids(&self, group: Group) -> impl Iterator<Item = ParamId> + '_ {
        self.ids().filter(move |id| self.params[id.0].group == group)
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    /// Adds a gradient set produced by [`crate::Graph::backward`].
    pub fn accumulate(&mut self, grads: &Gradients) {
        for (i, g) in grads.slots.iter().enumerate() {
            if let Some(g) = g {
                self.params[i].grad.add_assign(g);
            }
        }
    }

    /// Largest absolute gradient entry in a group.
    pub fn group_grad_max(&self, group: Group) -> f64 {
        self.params
            .iter()
            .filter(|p| p.group == group)
            .flat_map(|p| p.grad.data().iter())
            .fold(0.0, |m, v| if v.abs() > m { v.abs() } else { m })
    }

    pub fn grad_norm(&self) -> f64 {
        let ss: f64 = self.params.iter().flat_map(|p| p.grad.data().iter()).map(|v| v * v).sum();
        num_traits::Float::sqrt(ss)
    }

    pub fn scale_grads(&mut self, s: f64) {
        for p in &mut self.params {
            p.grad.scale_assign(s);
        }
    }

    pub fn group_grad_norm(&self, group: Group) -> f64 {
        let ss: f64 =
            self.params.iter().filter(|p| p.group == group).flat_map(|p| p.grad.data().iter()).map(|v| v * v).sum();
        num_traits::Float::sqrt(ss)
    }

    pub fn scale_group_grads(&mut self, group: Group, s: f64) {
        for p in self.params.iter_mut().filter(|p| p.group == group) {
            p.grad.scale_assign(s);
        }
    }

    /// Overwrites a parameter value by name; shapes must agree.
    pub fn load_value(&mut self, name: &str, value: Tensor) -> Result<()> {
        let id = self.id(name)?;
        let slot = &mut self.params[id.0].value;
        if !slot.same_shape(&value) {
            bail!(DimensionMismatch, "parameter {name}: stored {:?}, loaded {:?}", slot.shape(), value.shape());
        }
        *slot = value;
        Ok(())
    }
}

/// Gradient tensors indexed by parameter, as produced by one backward pass.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    pub(crate) slots: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn new(n: usize) -> Self {
        Self { slots: alloc::vec![None; n] }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.slots.get(id.0).and_then(Option::as_ref)
    }

    pub(crate) fn add(&mut self, id: ParamId, g: &Tensor) {
        match &mut self.slots[id.0] {
            Some(acc) => acc.add_assign(g),
            slot @ None => *slot = Some(g.clone()),
        }
    }
}

pub(crate) fn sample_normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}
