use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

/// Named parameters in insertion order, each with a gradient slot.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum L2Mode {
    /// λ·‖α‖₂
    Norm,
    /// λ·‖α‖₂²
    #[default]
    Squared,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    /// Adds a parameter; panics on a duplicate name.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(
            self.params.iter().all(|p| p.name != name),
            "duplicate parameter {name}"
        );
        let grad = Tensor::zeros(value.shape());
        self.params.push(Param { name, value, grad });
        ParamId(self.params.len() - 1)
    }

    /// He-style uniform init in ±sqrt(6 / fan_in).
    pub fn add_he_uniform<R: Rng>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut R,
    ) -> ParamId {
        let bound = (6.0 / fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| T::lit(rng.gen_range(-bound..bound)))
            .collect();
        self.add(name, Tensor::from_vec(shape, data).unwrap())
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    /// Value (read) and gradient (write) of one parameter.
    pub fn value_and_grad(&mut self, id: ParamId) -> (&Tensor<T>, &mut [T]) {
        let p = &mut self.params[id.0];
        (&p.value, p.grad.data_mut())
    }

    /// Weight value plus weight and bias gradient slots.
    pub(crate) fn weight_and_grads(
        &mut self,
        weight: ParamId,
        bias: ParamId,
    ) -> (&Tensor<T>, &mut [T], &mut [T]) {
        assert!(weight.0 < bias.0);
        let (lo, hi) = self.params.split_at_mut(bias.0);
        let w = &mut lo[weight.0];
        (&w.value, w.grad.data_mut(), hi[0].grad.data_mut())
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(T::zero());
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.grad.sum_squares().to_f64().unwrap())
            .sum::<f64>()
            .sqrt()
    }

    pub fn grad_max_abs(&self) -> f64 {
        self.params
            .iter()
            .flat_map(|p| p.grad.data().iter())
            .map(|g| g.abs().to_f64().unwrap())
            .fold(0.0, f64::max)
    }

    /// Regularizer Ω(α) over every parameter.
    pub fn l2_penalty(&self, mode: L2Mode) -> T {
        let sq: T = self.params.iter().map(|p| p.value.sum_squares()).sum();
        match mode {
            L2Mode::Squared => sq,
            L2Mode::Norm => sq.sqrt(),
        }
    }

    /// Adds λ·∇Ω to every gradient. The norm's gradient at α = 0 is taken
    /// as zero.
    pub fn add_l2_grad(&mut self, lambda: T, mode: L2Mode) {
        if lambda == T::zero() {
            return;
        }
        let scale = match mode {
            L2Mode::Squared => T::lit(2.0) * lambda,
            L2Mode::Norm => {
                let norm = self.l2_penalty(L2Mode::Norm);
                if norm == T::zero() {
                    return;
                }
                lambda / norm
            }
        };
        for p in &mut self.params {
            for (g, &v) in p.grad.data_mut().iter_mut().zip(p.value.data()) {
                *g += scale * v;
            }
        }
    }

    /// α ← α − δ·∇α for every parameter.
    pub fn sgd_step(&mut self, lr: T) {
        for p in &mut self.params {
            for (v, &g) in p.value.data_mut().iter_mut().zip(p.grad.data()) {
                *v -= lr * g;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.all_finite())
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: p.grad.cast(),
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_arithmetic() {
        let mut ps = ParamStore::<f64>::new();
        let id = ps.add("p", Tensor::from_vec(&[1], vec![1.0]).unwrap());
        ps.get_mut(id).grad.data_mut()[0] = 2.0;
        ps.sgd_step(0.0);
        assert_eq!(ps.value(id).data(), &[1.0]);
        ps.sgd_step(0.1);
        assert!((ps.value(id).data()[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn successive_steps_differ_from_one_summed_step() {
        // f(p) = p², gradient 2p. Two steps of δ from p0 vs one step with
        // the two gradients summed, each taken at p0.
        let (p0, lr) = (1.0f64, 0.1);
        let mut ps = ParamStore::<f64>::new();
        let id = ps.add("p", Tensor::from_vec(&[1], vec![p0]).unwrap());
        for _ in 0..2 {
            let p = ps.value(id).data()[0];
            ps.get_mut(id).grad.data_mut()[0] = 2.0 * p;
            ps.sgd_step(lr);
        }
        let two_steps = ps.value(id).data()[0];
        let summed = p0 - lr * (2.0 * p0 + 2.0 * p0);
        assert!((two_steps - 0.64).abs() < 1e-12);
        assert!((summed - 0.6).abs() < 1e-12);
        assert!((two_steps - summed).abs() > 1e-3);
    }

    #[test]
    fn l2_modes() {
        let mut ps = ParamStore::<f64>::new();
        ps.add("a", Tensor::from_vec(&[2], vec![3.0, 4.0]).unwrap());
        assert_eq!(ps.l2_penalty(L2Mode::Squared), 25.0);
        assert_eq!(ps.l2_penalty(L2Mode::Norm), 5.0);
        ps.add_l2_grad(0.5, L2Mode::Norm);
        let g = ps.iter().next().unwrap().grad.data().to_vec();
        assert!((g[0] - 0.3).abs() < 1e-15 && (g[1] - 0.4).abs() < 1e-15);
        let mut z = ParamStore::<f64>::new();
        z.add_zeros("z", &[3]);
        z.add_l2_grad(1.0, L2Mode::Norm);
        assert!(z.iter().all(|p| p.grad.data().iter().all(|&g| g == 0.0)));
    }

    #[test]
    #[should_panic(expected = "duplicate")]
    fn duplicate_names_rejected() {
        let mut ps = ParamStore::<f32>::new();
        ps.add_zeros("x", &[1]);
        ps.add_zeros("x", &[1]);
    }
}
