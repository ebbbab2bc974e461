//! Named parameters and their gradients.

use sha2::{Digest, Sha256};

use crate::autodiff::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter<T> {
    pub id: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub trainable: bool,
}

impl<T: Scalar> Parameter<T> {
    pub fn new(id: impl Into<String>, value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Parameter {
            id: id.into(),
            value,
            grad,
            trainable: true,
        }
    }
}

/// Index of a parameter inside its [`ParameterSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Parameters with unique ids.
///
/// A [`ParamId`] is the insertion index and never changes; iteration and
/// serialization go through the id-sorted view.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterSet<T> {
    params: Vec<Parameter<T>>,
    sorted: Vec<usize>,
}

/// Tape variables for every parameter of a set, in set order.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl std::ops::Index<ParamId> for Bound {
    type Output = Var;
    fn index(&self, p: ParamId) -> &Var {
        &self.vars[p.0]
    }
}

impl Bound {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl<T: Scalar> ParameterSet<T> {
    pub fn new() -> Self {
        ParameterSet {
            params: Vec::new(),
            sorted: Vec::new(),
        }
    }

    fn search(&self, id: &str) -> std::result::Result<usize, usize> {
        self.sorted
            .binary_search_by(|&i| self.params[i].id.as_str().cmp(id))
    }

    pub fn insert(&mut self, p: Parameter<T>) -> Result<ParamId> {
        match self.search(&p.id) {
            Ok(_) => Err(Error::Config(format!("duplicate parameter id {}", p.id))),
            Err(pos) => {
                let idx = self.params.len();
                self.params.push(p);
                self.sorted.insert(pos, idx);
                Ok(ParamId(idx))
            }
        }
    }

    pub fn add(&mut self, id: &str, value: Tensor<T>) -> Result<ParamId> {
        self.insert(Parameter::new(id, value))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Parameters in id order.
    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.sorted.iter().map(|&i| &self.params[i])
    }

    /// Parameters in insertion (`ParamId`) order.
    pub fn iter_insertion(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    /// Parameters in insertion (`ParamId`) order.
    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    pub fn index_of(&self, id: &str) -> Result<ParamId> {
        self.search(id)
            .map(|pos| ParamId(self.sorted[pos]))
            .map_err(|_| Error::Config(format!("no parameter named {id}")))
    }

    pub fn get(&self, p: ParamId) -> &Parameter<T> {
        &self.params[p.0]
    }

    pub fn get_mut(&mut self, p: ParamId) -> &mut Parameter<T> {
        &mut self.params[p.0]
    }

    pub fn by_id(&self, id: &str) -> Option<&Parameter<T>> {
        self.index_of(id).ok().map(|p| &self.params[p.0])
    }

    pub fn value(&self, p: ParamId) -> &Tensor<T> {
        &self.params[p.0].value
    }

    pub fn set_trainable(&mut self, trainable: bool) {
        for p in &mut self.params {
            p.trainable = trainable;
        }
    }

    /// Total number of scalar elements.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad = Tensor::zeros(p.value.shape());
        }
    }

    /// Puts every parameter on `tape`: trainable ones as differentiable
    /// leaves, frozen ones as constants. `slot_base` offsets the slot tags so
    /// several sets can share a tape.
    pub fn bind(&self, tape: &Tape<T>, slot_base: usize) -> Bound {
        self.bind_with(tape, slot_base, |_, v| v.clone())
    }

    /// Puts every parameter on `tape` as a constant, whatever its flag.
    pub fn bind_frozen(&self, tape: &Tape<T>) -> Bound {
        Bound {
            vars: self
                .params
                .iter()
                .map(|p| tape.constant(p.value.clone()))
                .collect(),
        }
    }

    /// Like [`bind`](Self::bind) with `values[i]` standing in for the value
    /// of `ParamId(i)`.
    pub fn bind_values(&self, tape: &Tape<T>, slot_base: usize, values: &[Tensor<T>]) -> Bound {
        let vars = self
            .params
            .iter()
            .zip(values)
            .enumerate()
            .map(|(i, (p, v))| {
                if p.trainable {
                    tape.param(slot_base + i, v.clone())
                } else {
                    tape.constant(v.clone())
                }
            })
            .collect();
        Bound { vars }
    }

    /// Like [`bind`](Self::bind) but lets the caller substitute the value
    /// placed on the tape (weight noise is applied this way).
    pub fn bind_with(
        &self,
        tape: &Tape<T>,
        slot_base: usize,
        mut value: impl FnMut(&Parameter<T>, &Tensor<T>) -> Tensor<T>,
    ) -> Bound {
        let vars = self
            .params
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let v = value(p, &p.value);
                if p.trainable {
                    tape.param(slot_base + i, v)
                } else {
                    tape.constant(v)
                }
            })
            .collect();
        Bound { vars }
    }

    /// Adds the gradients found on `bound`'s variables into `grad`, scaled by
    /// `weight`. Frozen parameters are skipped.
    pub fn accumulate(&mut self, grads: &Gradients<T>, bound: &Bound, weight: T) {
        for (p, &v) in self.params.iter_mut().zip(&bound.vars) {
            if !p.trainable {
                continue;
            }
            if let Some(g) = grads.raw(v) {
                let dst = p.grad.data_mut();
                for (d, &s) in dst.iter_mut().zip(g) {
                    *d += weight * s;
                }
            }
        }
    }

    /// Global L2 norm of the trainable gradients.
    pub fn grad_norm(&self) -> T {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .fold(T::zero(), |acc, p| acc + p.grad.sq_norm())
            .sqrt()
    }

    /// Copies values from `other` for every id present in both sets.
    pub fn copy_values_from(&mut self, other: &ParameterSet<T>) {
        for p in &mut self.params {
            if let Some(q) = other.by_id(&p.id) {
                if q.value.shape() == p.value.shape() {
                    p.value = q.value.clone();
                }
            }
        }
    }

    /// SHA-256 over ids, shapes and the little-endian `f64` encoding of the
    /// values of parameters accepted by `filter`.
    pub fn digest_where(&self, filter: impl Fn(&str) -> bool) -> String {
        let mut h = Sha256::new();
        for p in self.iter().filter(|p| filter(&p.id)) {
            h.update(p.id.as_bytes());
            h.update([0u8]);
            for &d in p.value.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for &v in p.value.data() {
                h.update(v.as_f64().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn digest(&self) -> String {
        self.digest_where(|_| true)
    }

    /// Same parameters converted to another scalar type.
    pub fn cast<U: Scalar>(&self) -> ParameterSet<U> {
        ParameterSet {
            sorted: self.sorted.clone(),
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    id: p.id.clone(),
                    value: Tensor::from_parts(
                        p.value.shape().to_vec(),
                        p.value.data().iter().map(|v| U::of(v.as_f64())).collect(),
                    ),
                    grad: Tensor::zeros(p.value.shape()),
                    trainable: p.trainable,
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sorted_unique_ids() {
        let mut s = ParameterSet::<f64>::new();
        s.add("b", Tensor::zeros(&[2])).unwrap();
        s.add("a", Tensor::zeros(&[1])).unwrap();
        s.add("c.x", Tensor::zeros(&[1])).unwrap();
        assert!(s.add("a", Tensor::zeros(&[1])).is_err());
        let ids: Vec<_> = s.iter().map(|p| p.id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c.x"]);
        assert_eq!(s.index_of("b").unwrap(), ParamId(0));
        assert_eq!(s.index_of("a").unwrap(), ParamId(1));
        assert_eq!(s.numel(), 4);
    }

    #[test]
    fn frozen_params_get_no_gradient() {
        let mut s = ParameterSet::<f64>::new();
        s.add("w", Tensor::vector(vec![1.0, 2.0])).unwrap();
        s.add("z", Tensor::vector(vec![3.0, 4.0])).unwrap();
        s.get_mut(ParamId(1)).trainable = false;
        assert_eq!(s.by_id("z").map(|p| p.trainable), Some(false));
        let tape = Tape::<f64>::new();
        let b = s.bind(&tape, 0);
        let d = tape.dot(b[ParamId(0)], b[ParamId(1)]).unwrap();
        let g = tape.backward(d).unwrap();
        s.accumulate(&g, &b, 1.0);
        assert_eq!(s.get(ParamId(0)).grad.data(), &[3.0, 4.0]);
        assert_eq!(s.get(ParamId(1)).grad.data(), &[0.0, 0.0]);
    }

    #[test]
    fn digest_tracks_values() {
        let mut s = ParameterSet::<f64>::new();
        s.add("w", Tensor::vector(vec![1.0, 2.0])).unwrap();
        let d0 = s.digest();
        s.get_mut(ParamId(0)).value.data_mut()[1] = 2.0 + 1e-15;
        assert_ne!(d0, s.digest());
        assert_eq!(
            s.digest_where(|id| id != "w"),
            ParameterSet::<f64>::new().digest()
        );
    }
}
