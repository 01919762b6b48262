use indexmap::IndexMap;
use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use super::tape::{Gradients, Tape, Var};
use crate::error::{Error, Result};

/// Which optimizer target a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    /// Weights of the manifold-defining transformation `f`.
    Manifold,
    /// Weights of the latent density transformation `h`.
    Density,
    /// Weights of a separate encoder (Me-flow).
    Encoder,
}

impl ParamGroup {
    pub fn as_str(self) -> &'static str {
        match self {
            ParamGroup::Manifold => "manifold",
            ParamGroup::Density => "density",
            ParamGroup::Encoder => "encoder",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug)]
pub struct Param {
    pub value: Array2<f64>,
    pub group: ParamGroup,
}

/// Named trainable arrays in insertion order. Names are stable identifiers
/// used by checkpoints.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: IndexMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array2<f64>, group: ParamGroup) -> ParamId {
        let name = name.into();
        let (idx, old) = self.entries.insert_full(name.clone(), Param { value, group });
        assert!(old.is_none(), "duplicate parameter name {name}");
        ParamId(idx)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|p| p.value.len()).sum()
    }

    pub fn get(&self, id: ParamId) -> &Array2<f64> {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.entries[id.0].value
    }

    pub fn group(&self, id: ParamId) -> ParamGroup {
        self.entries[id.0].group
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.entries.get_index_of(name).map(ParamId)
    }

    pub fn by_name(&self, name: &str) -> Option<&Array2<f64>> {
        self.entries.get(name).map(|p| &p.value)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Param)> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, (k, v))| (ParamId(i), k.as_str(), v))
    }

    pub fn ids_in(&self, groups: &[ParamGroup]) -> Vec<ParamId> {
        self.iter()
            .filter(|(_, _, p)| groups.contains(&p.group))
            .map(|(id, _, _)| id)
            .collect()
    }

    /// Replaces a value by name, checking the shape.
    pub fn set(&mut self, name: &str, value: Array2<f64>) -> Result<()> {
        let p = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter {name}")))?;
        if p.value.dim() != value.dim() {
            return Err(Error::InvalidArgument(format!(
                "shape mismatch for {name}: {:?} vs {:?}",
                p.value.dim(),
                value.dim()
            )));
        }
        p.value = value;
        Ok(())
    }

    /// Binds every parameter to `tape`; parameters whose group is not
    /// selected by `track` enter as constants.
    pub fn bind(&self, tape: &Tape, track: impl Fn(ParamGroup) -> bool) -> Bound {
        let vars = self
            .entries
            .values()
            .map(|p| {
                if track(p.group) {
                    tape.leaf(p.value.clone())
                } else {
                    Var::constant(p.value.clone())
                }
            })
            .collect();
        Bound { vars }
    }

    /// Binds everything as constants (pure evaluation).
    pub fn frozen(&self) -> Bound {
        Bound {
            vars: self.entries.values().map(|p| Var::constant(p.value.clone())).collect(),
        }
    }

    /// Adds N(0, scale²) noise to every entry. Used to move a freshly
    /// initialized (identity) model somewhere generic.
    pub fn perturb<R: Rng>(&mut self, rng: &mut R, scale: f64) {
        for p in self.entries.values_mut() {
            p.value.mapv_inplace(|v| v + scale * rng.sample::<f64, _>(StandardNormal));
        }
    }
}

/// Parameters bound to a tape for one evaluation.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn get(&self, id: ParamId) -> &Var {
        &self.vars[id.0]
    }

    /// Gradient for every parameter, in store order. Parameters that did not
    /// participate get zeros.
    pub fn collect(&self, grads: &Gradients) -> Vec<Array2<f64>> {
        self.vars.iter().map(|v| grads.wrt(v)).collect()
    }
}

/// `d loss / d param` for every parameter of `store`, in store order.
pub fn grad(tape: &Tape, loss: &Var, bound: &Bound) -> Result<Vec<Array2<f64>>> {
    let g = tape.gradients(loss)?;
    Ok(bound.collect(&g))
}
