//! Learnable parameter blocks and their deterministic initialization.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// A named, shaped block of learnable values.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
}

impl Param {
    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            value: vec![0.0; n],
        }
    }

    /// Uniform fan-in scaled initialization, `U(-sqrt(6/fan_in), sqrt(6/fan_in))`.
    pub fn kaiming_uniform(
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let bound = (6.0 / fan_in.max(1) as f64).sqrt();
        let n = shape.iter().product();
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            value: (0..n).map(|_| rng.gen_range(-bound..bound)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn fill(&mut self, v: f64) {
        self.value.iter_mut().for_each(|x| *x = v);
    }

    /// Rounds every value to the nearest 32-bit float so that a checkpoint round trip is exact.
    pub fn round_to_f32(&mut self) {
        for v in &mut self.value {
            *v = *v as f32 as f64;
        }
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.value.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(format!("parameter {}", self.name)))
        }
    }

    /// Replaces the values, requiring an identical shape.
    pub fn assign(&mut self, shape: &[usize], value: &[f64]) -> Result<()> {
        if shape != self.shape.as_slice() || value.len() != self.value.len() {
            return Err(Error::shape(format!(
                "parameter {} expects shape {:?}, got {:?}",
                self.name, self.shape, shape
            )));
        }
        self.value.copy_from_slice(value);
        Ok(())
    }
}

/// Anything that owns an ordered list of parameters.
///
/// The order is stable and shared with the gradient vectors produced by the owner's backward pass.
pub trait HasParams {
    fn params(&self) -> Vec<&Param>;
    fn params_mut(&mut self) -> Vec<&mut Param>;

    fn num_values(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    fn flatten(&self) -> Vec<f64> {
        self.params()
            .iter()
            .flat_map(|p| p.value.iter().copied())
            .collect()
    }

    fn unflatten(&mut self, flat: &[f64]) {
        let mut offset = 0;
        for p in self.params_mut() {
            let n = p.len();
            p.value.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        assert_eq!(offset, flat.len(), "flat parameter length mismatch");
    }

    fn round_to_f32(&mut self) {
        for p in self.params_mut() {
            p.round_to_f32();
        }
    }

    fn zero_biases(&mut self) {
        for p in self.params_mut() {
            if p.name.ends_with(".bias") {
                p.fill(0.0);
            }
        }
    }
}

/// Gradient buffers for one weight/bias layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LayerGrad {
    pub fn zeros(weight: usize, bias: usize) -> Self {
        Self {
            weight: vec![0.0; weight],
            bias: vec![0.0; bias],
        }
    }

    pub fn add_assign(&mut self, other: &LayerGrad) {
        add_into(&mut self.weight, &other.weight);
        add_into(&mut self.bias, &other.bias);
    }
}

pub(crate) fn add_into(acc: &mut [f64], x: &[f64]) {
    debug_assert_eq!(acc.len(), x.len());
    for (a, b) in acc.iter_mut().zip(x) {
        *a += b;
    }
}
