//! Independent reference computations used by the test and acceptance
//! suites: central finite differences and small random convolutional
//! networks to differentiate.

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::{Support, Tape, Tensor, Var};

/// Central differences of `f` with respect to every entry of every tensor
/// in `params`.
pub fn central_difference(
    params: &[Tensor],
    h: f64,
    mut f: impl FnMut(&[Tensor]) -> f64,
) -> Vec<Tensor> {
    let mut work = params.to_vec();
    let mut grads = Vec::with_capacity(params.len());
    for p in 0..params.len() {
        let mut g = Tensor::zeros(params[p].shape());
        for i in 0..params[p].len() {
            let orig = work[p].data()[i];
            work[p].data_mut()[i] = orig + h;
            let up = f(&work);
            work[p].data_mut()[i] = orig - h;
            let down = f(&work);
            work[p].data_mut()[i] = orig;
            g.data_mut()[i] = (up - down) / (2.0 * h);
        }
        grads.push(g);
    }
    grads
}

/// `max_i |a_i - b_i| / max(|a_i|, |b_i|, floor)` over all tensors.
pub fn max_relative_error(a: &[Tensor], b: &[Tensor], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.data().iter().zip(y.data()))
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample::<f64, _>(rand_distr::StandardNormal)
}

/// Random stack of masked temporal convolutions with leaky-ReLU between
/// layers, ending in a patch-mean.
#[derive(Debug, Clone)]
pub struct RandomConvNet {
    pub input: Tensor,
    /// `[kernel, bias]` pairs, flattened.
    pub params: Vec<Tensor>,
    pub masks: Vec<(Rc<Tensor>, Rc<Support>)>,
    pub slope: f64,
}

impl RandomConvNet {
    pub fn sample(seed: u64, max_layers: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = rng.random_range(1..=max_layers);
        let mut channels = vec![rng.random_range(1..=3usize)];
        for _ in 0..layers {
            channels.push(rng.random_range(1..=3usize));
        }
        *channels.last_mut().unwrap() = 1;
        let t = rng.random_range(3..=8usize);
        let k = [1usize, 3, 5][rng.random_range(0..3usize)];
        let input_data = (0..channels[0] * t).map(|_| normal(&mut rng)).collect();
        let input = Tensor::matrix(channels[0], t, input_data).unwrap();
        let mut params = Vec::new();
        let mut masks = Vec::new();
        for l in 0..layers {
            let (ci, co) = (channels[l], channels[l + 1]);
            let mut mask: Vec<bool> = (0..co * ci).map(|_| rng.random_bool(0.7)).collect();
            mask[0] = true;
            let kernel_mask = Tensor::new(
                vec![co, ci, k],
                mask.iter()
                    .flat_map(|&m| std::iter::repeat_n(if m { 1.0 } else { 0.0 }, k))
                    .collect(),
            )
            .unwrap();
            let w: Vec<f64> = (0..co * ci * k).map(|_| 0.7 * normal(&mut rng)).collect();
            params.push(Tensor::new(vec![co, ci, k], w).unwrap());
            params.push(Tensor::matrix(co, 1, (0..co).map(|_| 0.3 * normal(&mut rng)).collect()).unwrap());
            masks.push((Rc::new(kernel_mask), Rc::new(Support::from_mask(co, ci, &mask))));
        }
        Self {
            input,
            params,
            masks,
            slope: 0.2,
        }
    }

    /// Records the network on `tape`; returns the scalar output and the
    /// leaky-ReLU pre-activations.
    pub fn forward(&self, tape: &mut Tape, x: Var, params: &[Var]) -> (Var, Vec<Var>) {
        let mut h = x;
        let mut pre = Vec::new();
        let n = self.masks.len();
        for (l, mask) in self.masks.iter().enumerate() {
            h = tape.temporal_conv(h, params[2 * l], params[2 * l + 1], Some(mask.clone()));
            if l + 1 < n {
                pre.push(h);
                h = tape.leaky_relu(h, self.slope);
            }
        }
        (tape.mean(h), pre)
    }

    pub fn eval(&self, input: &Tensor, params: &[Tensor]) -> f64 {
        let mut tape = Tape::new();
        let x = tape.leaf(input.clone());
        let p: Vec<Var> = params.iter().map(|t| tape.leaf(t.clone())).collect();
        let (out, _) = self.forward(&mut tape, x, &p);
        tape.value(out).item()
    }

    /// Smallest |pre-activation|; finite differences straddle a kink when
    /// this is comparable to the step.
    pub fn kink_margin(&self) -> f64 {
        let mut tape = Tape::new();
        let x = tape.leaf(self.input.clone());
        let p: Vec<Var> = self.params.iter().map(|t| tape.leaf(t.clone())).collect();
        let (_, pre) = self.forward(&mut tape, x, &p);
        pre.iter()
            .flat_map(|v| tape.value(*v).data().to_vec())
            .map(f64::abs)
            .fold(f64::INFINITY, f64::min)
    }
}
