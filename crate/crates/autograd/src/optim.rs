use crate::error::{Error, Result};
use crate::param::ParamSet;
use crate::scalar::{lit, Scalar};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(lr: f64, beta1: f64, beta2: f64) -> Self {
        AdamConfig { lr, beta1, beta2, eps: 1e-8 }
    }
}

/// Adam with bias correction. Moment buffers align with a [`ParamSet`];
/// buffers of non-trainable entries stay empty.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, params: &ParamSet<T>) -> Self {
        let zeros = |id| {
            if params.is_trainable(id) {
                Tensor::zeros(params.get(id).shape())
            } else {
                Tensor::zeros(&[0])
            }
        };
        Adam {
            config,
            step: 0,
            m: params.ids().map(zeros).collect(),
            v: params.ids().map(zeros).collect(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update. `grads[i]` belongs to parameter `i`; missing gradients are
    /// treated as zero.
    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &[Option<Tensor<T>>]) {
        assert_eq!(grads.len(), params.len(), "gradient list does not match parameters");
        self.step += 1;
        let c = &self.config;
        let (b1, b2): (T, T) = (lit(c.beta1), lit(c.beta2));
        let bc1: T = lit(1.0 - c.beta1.powi(self.step as i32));
        let bc2: T = lit(1.0 - c.beta2.powi(self.step as i32));
        let (lr, eps): (T, T) = (lit(c.lr), lit(c.eps));
        for id in params.ids() {
            if !params.is_trainable(id) {
                continue;
            }
            let i = id.index();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let p = params.get_mut(id).data_mut();
            let gdata = grads[i].as_ref().map(|g| g.data());
            for j in 0..p.len() {
                let gj = gdata.map_or(T::zero(), |g| g[j]);
                let mj = &mut m.data_mut()[j];
                *mj = b1 * *mj + (T::one() - b1) * gj;
                let vj = &mut v.data_mut()[j];
                *vj = b2 * *vj + (T::one() - b2) * gj * gj;
                let mhat = m.data()[j] / bc1;
                let vhat = v.data()[j] / bc2;
                p[j] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }

    /// Serializable state, named after the owning parameters.
    pub fn state(&self, params: &ParamSet<T>) -> Vec<(String, Tensor<T>)> {
        let mut out = vec![("adam.step".to_string(), Tensor::scalar(lit(self.step as f64)))];
        for id in params.ids() {
            if params.is_trainable(id) {
                out.push((format!("adam.m.{}", params.name(id)), self.m[id.index()].clone()));
                out.push((format!("adam.v.{}", params.name(id)), self.v[id.index()].clone()));
            }
        }
        out
    }

    pub fn load_state(&mut self, params: &ParamSet<T>, state: &[(String, Tensor<T>)]) -> Result<()> {
        let lookup = |name: &str| {
            state
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t)
                .ok_or_else(|| Error::Param(format!("optimizer state lacks {name}")))
        };
        let step = lookup("adam.step")?.item().to_f64().unwrap_or(0.0);
        for id in params.ids() {
            if !params.is_trainable(id) {
                continue;
            }
            let m = lookup(&format!("adam.m.{}", params.name(id)))?;
            let v = lookup(&format!("adam.v.{}", params.name(id)))?;
            if m.shape() != params.get(id).shape() || v.shape() != params.get(id).shape() {
                return Err(Error::Param(format!("optimizer state shape for {}", params.name(id))));
            }
            self.m[id.index()] = m.clone();
            self.v[id.index()] = v.clone();
        }
        self.step = step as u64;
        Ok(())
    }
}
