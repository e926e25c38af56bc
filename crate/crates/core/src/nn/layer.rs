use ndarray::{Array1, Array2};

use super::{ParamId, ParamStore, Real, Rng, Tape, Var};
use crate::error::{Error, Result};

/// Fully connected layer `y = x W + b` whose weights live in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DenseLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

/// Half-width of the uniform fan-based initialisation range.
pub fn glorot_limit(d_in: usize, d_out: usize) -> f64 {
    (6.0 / (d_in + d_out) as f64).sqrt()
}

impl DenseLayer {
    /// Registers `{name}.w` (uniform in +-sqrt(6/(d_in+d_out))) and a zero
    /// `{name}.b`.
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut Rng,
    ) -> Self {
        let lim = glorot_limit(d_in, d_out);
        let w = Array2::from_shape_fn((d_in, d_out), |_| T::lit(rng.uniform_range(-lim, lim)));
        let weight = store.add(format!("{name}.w"), w);
        let bias = store.add(format!("{name}.b"), Array2::zeros((1, d_out)));
        Self {
            weight,
            bias,
            d_in,
            d_out,
        }
    }

    /// Re-binds a layer to parameters already present in `store`.
    pub fn bind<T: Real>(store: &ParamStore<T>, name: &str) -> Result<Self> {
        let find = |suffix: &str| {
            store
                .find(&format!("{name}.{suffix}"))
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}.{suffix}")))
        };
        let weight = find("w")?;
        let bias = find("b")?;
        let (d_in, d_out) = store.value(weight).dim();
        if store.value(bias).dim() != (1, d_out) {
            return Err(Error::Checkpoint(format!("bias shape of {name}")));
        }
        Ok(Self {
            weight,
            bias,
            d_in,
            d_out,
        })
    }

    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
    ) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let y = tape.matmul(x, w)?;
        tape.add_row(y, b)
    }

    pub fn param_count(&self) -> usize {
        self.d_in * self.d_out + self.d_out
    }
}

/// Untaped `x W + b`.
pub fn dense_forward<T: Real>(
    x: &Array2<T>,
    weight: &Array2<T>,
    bias: &Array1<T>,
) -> Result<Array2<T>> {
    if x.ncols() != weight.nrows() || weight.ncols() != bias.len() {
        return Err(Error::shape(format!(
            "dense_forward: x {:?}, W {:?}, b {}",
            x.dim(),
            weight.dim(),
            bias.len()
        )));
    }
    Ok(x.dot(weight) + bias)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_weights_give_zero_output() {
        let x = array![[1.0f64, 2.0], [3.0, 4.0]];
        let y = dense_forward(&x, &Array2::zeros((2, 3)), &Array1::zeros(3)).unwrap();
        assert_eq!(y, Array2::<f64>::zeros((2, 3)));
    }

    #[test]
    fn identity_weights_pass_through() {
        let x = array![[1.0f64, -2.0], [0.5, 4.0]];
        let y = dense_forward(&x, &Array2::eye(2), &Array1::zeros(2)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn matches_naive_triple_loop() {
        let mut rng = Rng::new(9);
        let x = Array2::from_shape_fn((3, 4), |_| rng.normal());
        let w = Array2::from_shape_fn((4, 5), |_| rng.normal());
        let b = Array1::from_shape_fn(5, |_| rng.normal());
        let y = dense_forward(&x, &w, &b).unwrap();
        for i in 0..3 {
            for j in 0..5 {
                let mut acc = b[j];
                for k in 0..4 {
                    acc += x[[i, k]] * w[[k, j]];
                }
                assert!((y[[i, j]] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let x = Array2::<f64>::zeros((2, 3));
        assert!(dense_forward(&x, &Array2::zeros((2, 3)), &Array1::zeros(3)).is_err());
        assert!(dense_forward(&x, &Array2::zeros((3, 3)), &Array1::zeros(2)).is_err());
    }

    #[test]
    fn init_respects_fan_limit_and_zero_bias() {
        let mut store = ParamStore::<f32>::new();
        let mut rng = Rng::new(1);
        let layer = DenseLayer::new(&mut store, "fc", 10, 6, &mut rng);
        let lim = glorot_limit(10, 6) as f32;
        assert!(store.value(layer.weight).iter().all(|v| v.abs() <= lim));
        assert!(store.value(layer.bias).iter().all(|&v| v == 0.0));
        assert_eq!(layer.param_count(), 66);
        assert_eq!(DenseLayer::bind(&store, "fc").unwrap(), layer);
    }
}
