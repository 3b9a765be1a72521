use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Adam hyper-parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, beta1: default_beta1(), beta2: default_beta2(), eps: default_eps() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self::with_lr(1e-3)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamGroup {
    pub name: String,
    pub start: usize,
    pub len: usize,
}

impl ParamGroup {
    pub fn range(&self) -> Range<usize> {
        self.start..self.start + self.len
    }
}

/// Flat parameter vector with named groups and Adam moment state.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore {
    values: Vec<f64>,
    groups: Vec<ParamGroup>,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self { values: Vec::new(), groups: Vec::new(), m: Vec::new(), v: Vec::new(), step: 0 }
    }

    /// Append a named group, returning its range in the flat vector.
    pub fn push_group(&mut self, name: &str, values: &[f64]) -> Range<usize> {
        let start = self.values.len();
        self.values.extend_from_slice(values);
        self.m.resize(self.values.len(), 0.0);
        self.v.resize(self.values.len(), 0.0);
        self.groups.push(ParamGroup { name: name.to_string(), start, len: values.len() });
        start..start + values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn groups(&self) -> &[ParamGroup] {
        &self.groups
    }

    pub fn group(&self, name: &str) -> Option<&[f64]> {
        self.groups.iter().find(|g| g.name == name).map(|g| &self.values[g.range()])
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[f64], &[f64]) {
        (&self.m, &self.v)
    }

    /// Restore optimizer state, e.g. when resuming from a checkpoint.
    pub fn set_state(&mut self, m: Vec<f64>, v: Vec<f64>, step: u64) -> Result<()> {
        if m.len() != self.values.len() || v.len() != self.values.len() {
            return Err(Error::Shape { expected: self.values.len(), got: m.len().min(v.len()) });
        }
        self.m = m;
        self.v = v;
        self.step = step;
        Ok(())
    }

    /// One bias-corrected Adam update.
    pub fn adam_step(&mut self, grads: &[f64], cfg: &AdamConfig) -> Result<()> {
        if grads.len() != self.values.len() {
            return Err(Error::Shape { expected: self.values.len(), got: grads.len() });
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for (((w, m), v), &g) in
            self.values.iter_mut().zip(&mut self.m).zip(&mut self.v).zip(grads)
        {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *w -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut s = ParamStore::new();
        s.push_group("w", &[0.3, -1.2]);
        s.adam_step(&[0.0, 0.0], &AdamConfig::default()).unwrap();
        assert_eq!(s.values(), &[0.3, -1.2]);
        assert_eq!(s.moments(), (&[0.0, 0.0][..], &[0.0, 0.0][..]));
        assert_eq!(s.step(), 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m̂ = g, v̂ = g², so Δ = -lr·g/(|g| + eps)
        let mut s = ParamStore::new();
        s.push_group("w", &[0.0]);
        let cfg = AdamConfig::with_lr(0.1);
        s.adam_step(&[1.0], &cfg).unwrap();
        let expected = -0.1 * 1.0 / (1.0 + 1e-8);
        assert!((s.values()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn converges_on_quadratic() {
        let mut s = ParamStore::new();
        s.push_group("w", &[1.0]);
        let cfg = AdamConfig::with_lr(1e-2);
        for _ in 0..1000 {
            let g = 2.0 * s.values()[0];
            s.adam_step(&[g], &cfg).unwrap();
        }
        assert!(s.values()[0].abs() < 1e-2, "w = {}", s.values()[0]);
        assert_eq!(s.step(), 1000);
    }

    #[test]
    fn length_mismatch() {
        let mut s = ParamStore::new();
        s.push_group("w", &[1.0, 2.0]);
        assert!(matches!(
            s.adam_step(&[1.0], &AdamConfig::default()),
            Err(Error::Shape { expected: 2, got: 1 })
        ));
        assert_eq!(s.step(), 0);
    }

    #[test]
    fn groups_are_addressable() {
        let mut s = ParamStore::new();
        let a = s.push_group("branch", &[1.0, 2.0]);
        let b = s.push_group("trunk", &[3.0]);
        assert_eq!(a, 0..2);
        assert_eq!(b, 2..3);
        assert_eq!(s.group("trunk"), Some(&[3.0][..]));
        assert_eq!(s.moments().0.len(), s.len());
    }
}
