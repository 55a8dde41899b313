use std::sync::Arc;

use indexmap::IndexMap;

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            weight_decay: 1e-8,
            betas: (0.9, 0.999),
            eps: 1e-8,
        }
    }
}

/// AdamW with decoupled weight decay. Moment buffers are keyed by parameter
/// name and persist across calls.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub config: AdamWConfig,
    step: u64,
    first: IndexMap<String, Vec<f64>>,
    second: IndexMap<String, Vec<f64>>,
}

impl AdamW {
    /// `trainable` fixes the parameter set every later `step` must cover.
    pub fn new<'a>(config: AdamWConfig, trainable: impl IntoIterator<Item = (&'a str, usize)>) -> Self {
        let mut first = IndexMap::new();
        let mut second = IndexMap::new();
        for (name, numel) in trainable {
            first.insert(name.to_string(), vec![0.0; numel]);
            second.insert(name.to_string(), vec![0.0; numel]);
        }
        Self {
            config,
            step: 0,
            first,
            second,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn trainable(&self) -> impl Iterator<Item = &str> {
        self.first.keys().map(String::as_str)
    }

    pub fn step(
        &mut self,
        params: &mut IndexMap<String, Arc<Tensor<f64>>>,
        grads: &IndexMap<String, Tensor<f64>>,
        lr: f64,
    ) -> Result<()> {
        for name in self.first.keys() {
            if !grads.contains_key(name) {
                return Err(Error::contract(format!("missing gradient for trainable parameter `{name}`")));
            }
        }
        if let Some(extra) = grads.keys().find(|k| !self.first.contains_key(*k)) {
            return Err(Error::contract(format!("gradient supplied for non-trainable parameter `{extra}`")));
        }
        self.step += 1;
        let t = self.step as i32;
        let AdamWConfig { weight_decay, betas: (b1, b2), eps } = self.config;
        let bias1 = 1.0 - b1.powi(t);
        let bias2 = 1.0 - b2.powi(t);
        for (name, m) in self.first.iter_mut() {
            let v = self.second.get_mut(name).expect("moment buffers share keys");
            let g = grads[name].data();
            let param = params
                .get_mut(name)
                .ok_or_else(|| Error::contract(format!("unknown parameter `{name}`")))?;
            let w = Arc::make_mut(param).data_mut();
            if g.len() != w.len() {
                return Err(Error::Shape {
                    op: "adamw_step",
                    lhs: vec![w.len()],
                    rhs: vec![g.len()],
                });
            }
            for i in 0..w.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                w[i] -= lr * (weight_decay * w[i] + m_hat / (v_hat.sqrt() + eps));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(w: f64) -> IndexMap<String, Arc<Tensor<f64>>> {
        let mut p = IndexMap::new();
        p.insert("w".to_string(), Arc::new(Tensor::scalar(w)));
        p
    }

    fn grad(g: f64) -> IndexMap<String, Tensor<f64>> {
        let mut m = IndexMap::new();
        m.insert("w".to_string(), Tensor::scalar(g));
        m
    }

    fn no_decay() -> AdamWConfig {
        AdamWConfig { weight_decay: 0.0, ..Default::default() }
    }

    #[test]
    fn zero_gradient_without_decay_is_a_fixed_point() {
        let mut p = single(1.5);
        let mut opt = AdamW::new(no_decay(), [("w", 1)]);
        for _ in 0..5 {
            opt.step(&mut p, &grad(0.0), 0.1).unwrap();
        }
        assert_eq!(p["w"].item(), 1.5);
    }

    #[test]
    fn positive_gradient_decreases_weight() {
        let mut p = single(1.0);
        let mut opt = AdamW::new(no_decay(), [("w", 1)]);
        opt.step(&mut p, &grad(1.0), 0.1).unwrap();
        assert!(p["w"].item() < 1.0);
    }

    #[test]
    fn quadratic_distance_to_optimum_shrinks_every_step() {
        // f(w) = (w-3)^2, simulated step by step
        let mut p = single(0.0);
        let mut opt = AdamW::new(no_decay(), [("w", 1)]);
        let mut prev = 3.0;
        for _ in 0..10 {
            let w = p["w"].item();
            opt.step(&mut p, &grad(2.0 * (w - 3.0)), 0.1).unwrap();
            let dist = (p["w"].item() - 3.0).abs();
            assert!(dist < prev, "{dist} !< {prev}");
            prev = dist;
        }
    }

    #[test]
    fn missing_gradient_is_rejected() {
        let mut p = single(1.0);
        let mut opt = AdamW::new(no_decay(), [("w", 1)]);
        let err = opt.step(&mut p, &IndexMap::new(), 0.1).unwrap_err();
        assert!(err.to_string().contains("missing gradient"));
    }
}
