//! Named parameter storage with aliasing.
//!
//! A [`ParamStore`] is the model graph shared by every task of a joint run.
//! Parameters are addressed by dotted names (`kge.encoder.fwd.w_x`). An alias
//! rule rewrites one name prefix to another before lookup, so two task models
//! that register `lm.cell.w_x` and `kge.encoder.fwd.w_x` under the rule
//! `kge.encoder.fwd -> lm.cell` receive the same [`ParamId`] and therefore the
//! same storage.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
struct Slot<R> {
    name: String,
    value: Tensor<R>,
    trainable: bool,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore<R> {
    slots: Vec<Slot<R>>,
    names: BTreeMap<String, ParamId>,
    aliases: Vec<(String, String)>,
}

fn rewrite(name: &str, from: &str, to: &str) -> Option<String> {
    if name == from {
        Some(to.to_string())
    } else {
        name.strip_prefix(from)
            .filter(|rest| rest.starts_with('.'))
            .map(|rest| format!("{to}{rest}"))
    }
}

impl<R: Real> ParamStore<R> {
    pub fn new() -> Self {
        ParamStore {
            slots: Vec::new(),
            names: BTreeMap::new(),
            aliases: Vec::new(),
        }
    }

    /// Route every name under `from` to the same name under `to`.
    ///
    /// Must be installed before either side registers its parameters.
    pub fn alias_prefix(&mut self, from: &str, to: &str) -> Result<()> {
        if from == to {
            return Err(Error::Config(format!("alias {from} onto itself")));
        }
        if self.names.keys().any(|n| rewrite(n, from, to).is_some()) {
            return Err(Error::Config(format!(
                "alias {from} -> {to} installed after {from} was registered"
            )));
        }
        self.aliases.push((from.to_string(), to.to_string()));
        Ok(())
    }

    /// Canonical storage name after alias rewriting.
    pub fn resolve(&self, name: &str) -> String {
        let mut cur = name.to_string();
        // Alias chains are short; bound the walk to the number of rules.
        for _ in 0..=self.aliases.len() {
            let next = self
                .aliases
                .iter()
                .find_map(|(from, to)| rewrite(&cur, from, to));
            match next {
                Some(n) => cur = n,
                None => break,
            }
        }
        cur
    }

    /// Register a parameter, or return the existing storage its canonical
    /// name already points at. A shape disagreement across an alias is a
    /// configuration error.
    pub fn register(&mut self, name: &str, init: Tensor<R>, trainable: bool) -> Result<ParamId> {
        let canonical = self.resolve(name);
        if let Some(&id) = self.names.get(&canonical) {
            let slot = &mut self.slots[id.0];
            if slot.value.shape() != init.shape() {
                return Err(Error::Config(format!(
                    "parameter {name} (as {canonical}) has shape {:?}, existing storage has {:?}",
                    init.shape(),
                    slot.value.shape()
                )));
            }
            slot.trainable = trainable;
            self.names.insert(name.to_string(), id);
            return Ok(id);
        }
        let id = ParamId(self.slots.len());
        self.slots.push(Slot {
            name: canonical.clone(),
            value: init,
            trainable,
        });
        self.names.insert(canonical, id);
        self.names.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names
            .get(name)
            .or_else(|| self.names.get(&self.resolve(name)))
            .copied()
    }

    pub fn value(&self, id: ParamId) -> &Tensor<R> {
        &self.slots[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<R> {
        &mut self.slots[id.0].value
    }

    pub fn set(&mut self, id: ParamId, value: Tensor<R>) -> Result<()> {
        let slot = &mut self.slots[id.0];
        if slot.value.shape() != value.shape() {
            return Err(Error::shape(
                "set_param",
                format!("{}: expected {:?}, got {:?}", slot.name, slot.value.shape(), value.shape()),
            ));
        }
        slot.value = value;
        Ok(())
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.slots[id.0].name
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.slots[id.0].trainable
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Storage entries in registration order, one per distinct tensor.
    pub fn entries(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<R>)> {
        self.slots
            .iter()
            .enumerate()
            .map(|(i, s)| (ParamId(i), s.name.as_str(), &s.value))
    }

    /// Every registered name (including alias names) and the id it maps to.
    pub fn all_names(&self) -> impl Iterator<Item = (&str, ParamId)> {
        self.names.iter().map(|(n, &id)| (n.as_str(), id))
    }

    /// All ids whose registered names start with `prefix.` (or equal it).
    pub fn ids_with_prefix(&self, prefix: &str) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = self
            .names
            .iter()
            .filter(|(n, _)| rewrite(n, prefix, prefix).is_some())
            .map(|(_, &id)| id)
            .collect();
        ids.sort();
        ids.dedup();
        ids
    }

    /// Total number of scalar values held.
    pub fn num_values(&self) -> usize {
        self.slots.iter().map(|s| s.value.len()).sum()
    }

    /// Sum of squared parameter values over trainable storage.
    pub fn l2_norm_sq(&self) -> R {
        self.slots
            .iter()
            .filter(|s| s.trainable)
            .flat_map(|s| s.value.data().iter())
            .map(|&v| v * v)
            .sum()
    }
}

/// Xavier-uniform matrix: U(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
pub fn xavier<R: Real>(rng: &mut Rng, rows: usize, cols: usize) -> Tensor<R> {
    let a = libm::sqrt(6.0 / (rows + cols) as f64);
    uniform(rng, &[rows, cols], a)
}

/// U(-a, a) draws in row-major order.
pub fn uniform<R: Real>(rng: &mut Rng, shape: &[usize], a: f64) -> Tensor<R> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| R::of(rng.gen_range(-a..a))).collect();
    Tensor::new(shape.to_vec(), data).expect("shape is non-empty")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn alias_shares_storage() {
        let mut s = ParamStore::<f32>::new();
        s.alias_prefix("kge.encoder.fwd", "lm.cell").unwrap();
        let a = s.register("lm.cell.w_x", Tensor::zeros(&[2, 8]), true).unwrap();
        let b = s
            .register("kge.encoder.fwd.w_x", Tensor::zeros(&[2, 8]), true)
            .unwrap();
        assert_eq!(a, b);
        assert_eq!(s.len(), 1);
        s.value_mut(a).data_mut()[0] = 3.5;
        assert_eq!(s.value(b).data()[0], 3.5);
    }

    #[test]
    fn alias_registered_from_either_side_first() {
        let mut s = ParamStore::<f32>::new();
        s.alias_prefix("et.embed", "kge.embed").unwrap();
        let a = s.register("et.embed", Tensor::zeros(&[4, 2]), true).unwrap();
        let b = s.register("kge.embed", Tensor::zeros(&[4, 2]), true).unwrap();
        assert_eq!(a, b);
        assert_eq!(s.name(a), "kge.embed");
    }

    #[test]
    fn alias_shape_mismatch_is_config_error() {
        let mut s = ParamStore::<f32>::new();
        s.alias_prefix("kge.encoder.fwd", "lm.cell").unwrap();
        s.register("lm.cell.w_h", Tensor::zeros(&[4, 16]), true).unwrap();
        let err = s
            .register("kge.encoder.fwd.w_h", Tensor::zeros(&[3, 12]), true)
            .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn prefix_does_not_match_partial_segment() {
        let mut s = ParamStore::<f32>::new();
        s.alias_prefix("kge.enc", "lm.cell").unwrap();
        s.register("kge.encoder.w", Tensor::zeros(&[1]), true).unwrap();
        assert_eq!(s.resolve("kge.encoder.w"), "kge.encoder.w");
    }

    #[test]
    fn late_alias_rejected() {
        let mut s = ParamStore::<f32>::new();
        s.register("kge.embed", Tensor::zeros(&[1]), true).unwrap();
        assert!(s.alias_prefix("kge.embed", "lm.embed").is_err());
    }

    #[test]
    fn xavier_bounds() {
        let mut rng = seeded(3);
        let t: Tensor<f64> = xavier(&mut rng, 10, 20);
        let a = (6.0f64 / 30.0).sqrt();
        assert!(t.data().iter().all(|v| v.abs() < a));
    }
}
