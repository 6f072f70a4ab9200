use std::collections::BTreeMap;

use candle_core::backprop::GradStore;
use candle_core::{Tensor, Var};

use crate::error::{Error, Result};

/// Adam with bias correction. Moment buffers are keyed by parameter name so
/// they can be checkpointed alongside the parameters.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Updates applied so far.
    pub t: u64,
    first: BTreeMap<String, Tensor>,
    second: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps: 1e-8,
            t: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    /// Apply one update at rate `lr` to every var in `vars` that has a
    /// gradient in `grads`. Vars without a gradient are left untouched.
    pub fn step(&mut self, vars: &BTreeMap<String, Var>, grads: &GradStore, lr: f64) -> Result<()> {
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (name, var) in vars {
            let Some(g) = grads.get(var.as_tensor()) else {
                continue;
            };
            // Leaf gradients can still reference the forward graph.
            let g = &g.detach();
            let m = match self.first.get(name) {
                Some(m) => ((m * self.beta1)? + (g * (1.0 - self.beta1))?)?,
                None => (g * (1.0 - self.beta1))?,
            };
            let v = match self.second.get(name) {
                Some(v) => ((v * self.beta2)? + (g.sqr()? * (1.0 - self.beta2))?)?,
                None => (g.sqr()? * (1.0 - self.beta2))?,
            };
            let update = ((&m / c1)? / ((&v / c2)?.sqrt()? + self.eps)?)?;
            var.set(&(var.as_tensor() - (update * lr)?)?)?;
            self.first.insert(name.clone(), m);
            self.second.insert(name.clone(), v);
        }
        Ok(())
    }

    /// Moment buffers as `"<prefix>m.<name>"` / `"<prefix>v.<name>"`.
    pub fn state_tensors(&self, prefix: &str) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        for (n, t) in &self.first {
            out.insert(format!("{prefix}m.{n}"), t.clone());
        }
        for (n, t) in &self.second {
            out.insert(format!("{prefix}v.{n}"), t.clone());
        }
        out
    }

    pub fn load_state(
        &mut self,
        prefix: &str,
        tensors: &BTreeMap<String, Tensor>,
        t: u64,
    ) -> Result<()> {
        self.first.clear();
        self.second.clear();
        for (key, tensor) in tensors {
            let Some(rest) = key.strip_prefix(prefix) else {
                continue;
            };
            if let Some(n) = rest.strip_prefix("m.") {
                self.first.insert(n.to_string(), tensor.clone());
            } else if let Some(n) = rest.strip_prefix("v.") {
                self.second.insert(n.to_string(), tensor.clone());
            } else {
                return Err(Error::Checkpoint(format!(
                    "unexpected optimizer entry `{key}`"
                )));
            }
        }
        self.t = t;
        Ok(())
    }
}
