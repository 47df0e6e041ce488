//! Small building blocks shared by the network modules.

use crate::error::Result;
use crate::tensor::init::Initializer;
use crate::tensor::{ops, Scalar, Tensor};

/// A convolution layer: weight, bias, and its fixed geometry.
pub struct Conv2d<T: Scalar> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub stride: usize,
    pub padding: usize,
}

impl<T: Scalar> Conv2d<T> {
    /// He fan-in initialized convolution with zero bias.
    pub fn he(
        init: &mut Initializer,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        Conv2d {
            weight: init.he_conv(cout, cin, k),
            bias: init.zeros_param(&[cout]),
            stride,
            padding,
        }
    }

    /// Narrow-normal weights with a constant bias; used for head output
    /// layers where the initial logit distribution must sit near the bias.
    pub fn head_output(
        init: &mut Initializer,
        cin: usize,
        cout: usize,
        k: usize,
        weight_std: f64,
        bias_value: f64,
    ) -> Self {
        Conv2d {
            weight: init.normal_conv(cout, cin, k, weight_std),
            bias: init.const_param(&[cout], bias_value),
            stride: 1,
            padding: k / 2,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        ops::conv2d(x, &self.weight, &self.bias, self.stride, self.padding)
    }

    pub fn collect_params<'a>(
        &'a mut self,
        prefix: &str,
        out: &mut Vec<(String, &'a mut Tensor<T>)>,
    ) {
        out.push((format!("{prefix}.weight"), &mut self.weight));
        out.push((format!("{prefix}.bias"), &mut self.bias));
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}
