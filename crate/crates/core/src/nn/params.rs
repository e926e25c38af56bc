use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use super::Real;
use crate::error::{Error, Result};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// One named trainable tensor plus its gradient and Adam state.
#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub value: Array2<T>,
    pub grad: Array2<T>,
    m: Array2<T>,
    v: Array2<T>,
    step: u64,
}

impl<T: Real> Param<T> {
    fn new(name: String, value: Array2<T>) -> Self {
        let dim = value.dim();
        Self {
            name,
            value,
            grad: Array2::zeros(dim),
            m: Array2::zeros(dim),
            v: Array2::zeros(dim),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Ordered collection of parameters.
///
/// `version` increases whenever parameter values change, which lets a
/// recorded [`super::Tape`] detect that it no longer describes the store.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    version: u64,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            version: 0,
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array2<T>) -> ParamId {
        let name = name.into();
        debug_assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        self.params.push(Param::new(name, value));
        self.version += 1;
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Array2<T> {
        &self.params[id.0].value
    }

    /// Mutable access to a value; bumps the version.
    pub fn value_mut(&mut self, id: ParamId) -> &mut Array2<T> {
        self.version += 1;
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Array2<T> {
        &self.params[id.0].grad
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(T::zero());
        }
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, g: &Array2<T>) {
        let p = &mut self.params[id.0];
        debug_assert_eq!(p.grad.dim(), g.dim());
        p.grad += g;
    }

    /// One bias-corrected Adam update over every parameter.
    ///
    /// All gradients are checked before anything is modified, so a non-finite
    /// gradient leaves the store untouched.
    pub fn adam_step(&mut self, lr: f64, cfg: &AdamConfig) -> Result<()> {
        if !(lr > 0.0 && cfg.beta1 > 0.0 && cfg.beta2 > 0.0 && cfg.epsilon > 0.0) {
            return Err(Error::Usage(format!(
                "adam hyperparameters must be positive (lr={lr}, {cfg:?})"
            )));
        }
        if let Some(p) = self
            .params
            .iter()
            .find(|p| p.grad.iter().any(|g| !g.is_finite()))
        {
            return Err(Error::NonFinite(format!(
                "gradient of parameter '{}'",
                p.name
            )));
        }
        let b1 = T::lit(cfg.beta1);
        let b2 = T::lit(cfg.beta2);
        let one = T::one();
        let eps = T::lit(cfg.epsilon);
        let lr = T::lit(lr);
        for p in &mut self.params {
            p.step += 1;
            let t = p.step as i32;
            let c1 = one - T::lit(cfg.beta1.powi(t));
            let c2 = one - T::lit(cfg.beta2.powi(t));
            Zip::from(&mut p.value)
                .and(&mut p.m)
                .and(&mut p.v)
                .and(&p.grad)
                .for_each(|w, m, v, &g| {
                    *m = b1 * *m + (one - b1) * g;
                    *v = b2 * *v + (one - b2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *w -= lr * m_hat / (v_hat.sqrt() + eps);
                });
        }
        self.version += 1;
        Ok(())
    }

    /// Copy of this store in another precision. Optimiser state is reset.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        let mut out = ParamStore::new();
        for p in &self.params {
            out.add(p.name.clone(), p.value.mapv(|v| U::lit(v.to_f64_lossy())));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn first_step_with_unit_gradient_moves_by_lr() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("w", array![[1.0, -2.0], [0.5, 0.0]]);
        store.params[id.0].grad.fill(1.0);
        let lr = 0.01;
        store.adam_step(lr, &AdamConfig::default()).unwrap();
        // m_hat = 1, v_hat = 1 after bias correction
        let expected = array![[1.0, -2.0], [0.5, 0.0]] - lr / (1.0 + 1e-8);
        for (a, b) in store.value(id).iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(store.get(id).step_count(), 1);
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut store = ParamStore::<f32>::new();
        let id = store.add("w", array![[0.25f32, -1.5]]);
        for _ in 0..5 {
            store.adam_step(0.1, &AdamConfig::default()).unwrap();
        }
        assert_eq!(store.value(id), &array![[0.25f32, -1.5]]);
    }

    #[test]
    fn non_finite_gradient_aborts_without_update() {
        let mut store = ParamStore::<f64>::new();
        let a = store.add("a", array![[1.0]]);
        let b = store.add("b", array![[2.0]]);
        store.params[a.0].grad.fill(1.0);
        store.params[b.0].grad.fill(f64::NAN);
        let err = store.adam_step(0.1, &AdamConfig::default()).unwrap_err();
        assert!(matches!(err, Error::NonFinite(ref m) if m.contains("'b'")));
        assert_eq!(store.value(a)[[0, 0]], 1.0);
        assert_eq!(store.get(a).step_count(), 0);
    }

    #[test]
    fn rejects_non_positive_hyperparameters() {
        let mut store = ParamStore::<f64>::new();
        store.add("a", array![[1.0]]);
        assert!(store.adam_step(0.0, &AdamConfig::default()).is_err());
        let cfg = AdamConfig {
            beta1: -0.1,
            ..AdamConfig::default()
        };
        assert!(store.adam_step(0.1, &cfg).is_err());
    }
}
