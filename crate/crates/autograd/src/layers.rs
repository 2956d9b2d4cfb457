//! Parameterized layers built on [`Graph`] ops.

use rand::Rng;

use crate::graph::{Graph, Var};
use crate::param::{Bound, Mode, ParamId, ParamSet};
use crate::scalar::{lit, Scalar};
use crate::spectral;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct ConvSpec {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub bias: bool,
    pub spectral: bool,
}

impl ConvSpec {
    /// Stride-1 convolution with "same" padding.
    pub fn same(cin: usize, cout: usize, kernel: usize) -> Self {
        ConvSpec { cin, cout, kernel, stride: 1, pad: kernel / 2, bias: true, spectral: false }
    }

    pub fn stride(mut self, stride: usize, pad: usize) -> Self {
        self.stride = stride;
        self.pad = pad;
        self
    }

    pub fn spectral(mut self, on: bool) -> Self {
        self.spectral = on;
        self
    }

    pub fn bias(mut self, on: bool) -> Self {
        self.bias = on;
        self
    }
}

/// 2-D convolution, optionally spectrally normalized.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub spec: ConvSpec,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    /// Left singular-vector estimate, present when spectrally normalized.
    pub sn_u: Option<ParamId>,
}

impl Conv2d {
    pub fn new<T: Scalar, R: Rng + ?Sized>(ps: &mut ParamSet<T>, name: &str, spec: ConvSpec, rng: &mut R) -> Self {
        let fan_in = spec.cin * spec.kernel * spec.kernel;
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weight = ps.add_weight(
            &format!("{name}.weight"),
            Tensor::rand_uniform(&[spec.cout, spec.cin, spec.kernel, spec.kernel], bound, rng),
        );
        let bias = spec
            .bias
            .then(|| ps.add_weight(&format!("{name}.bias"), Tensor::rand_uniform(&[spec.cout], bound, rng)));
        let sn_u = spec.spectral.then(|| {
            let mut u = Tensor::randn(&[spec.cout], 1.0, rng);
            let n = u.data().iter().map(|&x| x * x).sum::<T>().sqrt();
            u.data_mut().iter_mut().for_each(|x| *x /= n);
            ps.add_buffer(&format!("{name}.sn_u"), u)
        });
        Conv2d { spec, weight, bias, sn_u }
    }

    /// The weight actually applied: spectrally normalized when enabled.
    pub fn effective_weight<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound<'_, T>) -> Var {
        let w = p.var(self.weight);
        match self.sn_u {
            None => w,
            Some(u_id) => {
                let mut u = p.tensor(u_id).data().to_vec();
                let wt = g.value(w);
                let rows = self.spec.cout;
                let cols = wt.numel() / rows;
                let (v, _) = spectral::power_iteration(wt.data(), rows, cols, &mut u, 0);
                g.spectral_norm(w, &u, &v)
            }
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound<'_, T>, x: Var) -> Var {
        let w = self.effective_weight(g, p);
        let b = self.bias.map(|b| p.var(b));
        g.conv2d(x, w, b, self.spec.stride, self.spec.pad)
    }

    /// Advances the persistent power-iteration vector by `iters` steps.
    pub fn power_iterate<T: Scalar>(&self, ps: &mut ParamSet<T>, iters: usize) {
        if let Some(u_id) = self.sn_u {
            let w = ps.get(self.weight).clone();
            let rows = self.spec.cout;
            let u = ps.get_mut(u_id);
            spectral::power_iteration(w.data(), rows, w.numel() / rows, u.data_mut(), iters);
        }
    }

    /// Current `sigma` estimate of the raw weight.
    pub fn sigma_estimate<T: Scalar>(&self, ps: &ParamSet<T>) -> Option<T> {
        let u_id = self.sn_u?;
        let w = ps.get(self.weight);
        let rows = self.spec.cout;
        let mut u = ps.get(u_id).data().to_vec();
        Some(spectral::power_iteration(w.data(), rows, w.numel() / rows, &mut u, 0).1)
    }
}

/// Batch normalization over `(N, H, W)` with running statistics.
#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm2d {
    pub fn new<T: Scalar>(ps: &mut ParamSet<T>, name: &str, channels: usize) -> Self {
        BatchNorm2d {
            gamma: ps.add_weight(&format!("{name}.gamma"), Tensor::ones(&[channels])),
            beta: ps.add_weight(&format!("{name}.beta"), Tensor::zeros(&[channels])),
            running_mean: ps.add_buffer(&format!("{name}.running_mean"), Tensor::zeros(&[channels])),
            running_var: ps.add_buffer(&format!("{name}.running_var"), Tensor::ones(&[channels])),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound<'_, T>, x: Var) -> Var {
        let (gamma, beta) = (p.var(self.gamma), p.var(self.beta));
        match p.mode() {
            Mode::Eval => {
                let rm = p.tensor(self.running_mean).data();
                let rv = p.tensor(self.running_var).data();
                g.batch_norm(x, gamma, beta, Some((rm, rv)), lit(self.eps)).0
            }
            Mode::Train => {
                let (y, stats) = g.batch_norm(x, gamma, beta, None, lit(self.eps));
                let stats = stats.expect("training batch norm yields statistics");
                let m: T = lit(self.momentum);
                let blend = |old: &Tensor<T>, new: &[T]| {
                    let data = old.data().iter().zip(new).map(|(&o, &n)| o * (T::one() - m) + n * m).collect();
                    Tensor::from_vec(old.shape(), data).expect("running stat shape")
                };
                p.push_update(self.running_mean, blend(p.tensor(self.running_mean), &stats.mean));
                p.push_update(self.running_var, blend(p.tensor(self.running_var), &stats.var));
                y
            }
        }
    }
}
