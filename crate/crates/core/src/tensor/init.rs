//! Seeded, deterministic parameter initialization.
//!
//! All parameters come from one ChaCha stream in construction order, so a
//! (config, seed) pair fixes every weight bit-for-bit across runs.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Scalar, Tensor};

pub struct Initializer {
    rng: ChaCha8Rng,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Initializer {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn normal_vec<T: Scalar>(&mut self, n: usize, std: f64) -> Vec<T> {
        (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                T::from_f64(z * std)
            })
            .collect()
    }

    /// He fan-in initialization for a [cout, cin, k, k] convolution weight.
    pub fn he_conv<T: Scalar>(&mut self, cout: usize, cin: usize, k: usize) -> Tensor<T> {
        let fan_in = (cin * k * k) as f64;
        let std = (2.0 / fan_in).sqrt();
        let data = self.normal_vec(cout * cin * k * k, std);
        Tensor::param(data, &[cout, cin, k, k]).expect("init shape")
    }

    /// Narrow normal initialization (used for head output layers, where a
    /// tight logit distribution around the bias is required at startup).
    pub fn normal_conv<T: Scalar>(
        &mut self,
        cout: usize,
        cin: usize,
        k: usize,
        std: f64,
    ) -> Tensor<T> {
        let data = self.normal_vec(cout * cin * k * k, std);
        Tensor::param(data, &[cout, cin, k, k]).expect("init shape")
    }

    pub fn normal_vec_param<T: Scalar>(&mut self, n: usize, std: f64) -> Tensor<T> {
        let data = self.normal_vec(n, std);
        Tensor::param(data, &[n]).expect("init shape")
    }

    pub fn zeros_param<T: Scalar>(&mut self, shape: &[usize]) -> Tensor<T> {
        let n = shape.iter().product();
        Tensor::param(vec![T::zero(); n], shape).expect("init shape")
    }

    pub fn const_param<T: Scalar>(&mut self, shape: &[usize], value: f64) -> Tensor<T> {
        let n = shape.iter().product();
        Tensor::param(vec![T::from_f64(value); n], shape).expect("init shape")
    }

    /// Uniform sample in [lo, hi); exposed for data synthesis reuse.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.rng.gen_range(lo..hi)
    }
}
