//! Detection losses: focal loss over per-anchor class logits and smooth-L1
//! box regression over positive anchors.
//!
//! Both are custom graph operations with hand-derived gradients; everything
//! is formulated on logits through log-sigmoid identities so no intermediate
//! probability underflows.

use crate::error::{Error, Result};
use crate::tensor::{ops::sigmoid_scalar, Scalar, Tensor};

/// Anchor label stream for the classification loss.
pub const LABEL_POSITIVE: i8 = 1;
pub const LABEL_NEGATIVE: i8 = 0;
pub const LABEL_IGNORE: i8 = -1;

#[inline]
fn softplus<T: Scalar>(x: T) -> T {
    // ln(1 + e^x), stable on both tails
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Focal loss over sigmoid logits: FL(p_t) = -alpha_t (1-p_t)^gamma ln(p_t)
/// with p_t = p for positives and 1-p for negatives, summed over all
/// non-ignored anchors and divided by `normalizer` (callers pass the
/// positive count clamped to at least 1).
///
/// With gamma = 0 and alpha = 0.5 this is exactly half the binary
/// cross-entropy.
pub fn focal_loss<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[i8],
    alpha: f64,
    gamma: f64,
    normalizer: f64,
) -> Result<Tensor<T>> {
    if labels.len() != logits.len() {
        return Err(Error::shape(
            "focal_loss",
            format!("{} labels for {} logits", labels.len(), logits.len()),
        ));
    }
    if normalizer <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "focal loss normalizer must be positive, got {normalizer}"
        )));
    }
    let a = T::from_f64(alpha);
    let g = T::from_f64(gamma);
    let inv_norm = T::from_f64(1.0 / normalizer);

    let mut total = T::zero();
    for (&x, &label) in logits.data().iter().zip(labels) {
        match label {
            LABEL_POSITIVE => {
                let p = sigmoid_scalar(x);
                let log_p = -softplus(-x);
                total += -a * (T::one() - p).powf(g) * log_p;
            }
            LABEL_NEGATIVE => {
                let p = sigmoid_scalar(x);
                let log_q = -softplus(x); // ln(1-p)
                total += -(T::one() - a) * p.powf(g) * log_q;
            }
            _ => {}
        }
    }
    total *= inv_norm;

    let logits_c = logits.clone();
    let labels = labels.to_vec();
    Ok(Tensor::from_op(
        vec![total],
        vec![1],
        vec![logits.clone()],
        move |grad| {
            let upstream = grad[0] * inv_norm;
            let gx: Vec<T> = logits_c
                .data()
                .iter()
                .zip(&labels)
                .map(|(&x, &label)| {
                    let p = sigmoid_scalar(x);
                    match label {
                        LABEL_POSITIVE => {
                            let log_p = -softplus(-x);
                            // d/dx [-a (1-p)^g ln p] = -a (1-p)^g ((1-p) - g p ln p)
                            -a * (T::one() - p).powf(g)
                                * ((T::one() - p) - g * p * log_p)
                                * upstream
                        }
                        LABEL_NEGATIVE => {
                            let log_q = -softplus(x);
                            (T::one() - a)
                                * p.powf(g)
                                * (p - g * (T::one() - p) * log_q)
                                * upstream
                        }
                        _ => T::zero(),
                    }
                })
                .collect();
            logits_c.accumulate_grad(&gx);
        },
    ))
}

/// Smooth-L1 (Huber) regression over positive anchors. `pred` holds the flat
/// per-anchor deltas (4 per anchor); `targets` pairs each positive anchor id
/// with its encoded target. The sum is divided by `normalizer`. With no
/// positives the loss is zero (and contributes zero gradient).
pub fn smooth_l1<T: Scalar>(
    pred: &Tensor<T>,
    targets: &[(usize, [f64; 4])],
    beta: f64,
    normalizer: f64,
) -> Result<Tensor<T>> {
    if normalizer <= 0.0 || beta <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "smooth_l1 needs positive beta and normalizer, got {beta} and {normalizer}"
        )));
    }
    for &(anchor, _) in targets {
        if (anchor + 1) * 4 > pred.len() {
            return Err(Error::shape(
                "smooth_l1",
                format!("anchor {anchor} outside {} predictions", pred.len() / 4),
            ));
        }
    }
    let b = T::from_f64(beta);
    let inv_norm = T::from_f64(1.0 / normalizer);
    let half = T::from_f64(0.5);

    let mut total = T::zero();
    for &(anchor, target) in targets {
        for j in 0..4 {
            let x = pred.data()[anchor * 4 + j] - T::from_f64(target[j]);
            total += if x.abs() < b {
                half * x * x / b
            } else {
                x.abs() - half * b
            };
        }
    }
    total *= inv_norm;

    let pred_c = pred.clone();
    let targets = targets.to_vec();
    Ok(Tensor::from_op(
        vec![total],
        vec![1],
        vec![pred.clone()],
        move |grad| {
            let upstream = grad[0] * inv_norm;
            let mut gx = vec![T::zero(); pred_c.len()];
            for &(anchor, target) in &targets {
                for j in 0..4 {
                    let x = pred_c.data()[anchor * 4 + j] - T::from_f64(target[j]);
                    let d = if x.abs() < b { x / b } else { x.signum() };
                    gx[anchor * 4 + j] += d * upstream;
                }
            }
            pred_c.accumulate_grad(&gx);
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::grad_check;
    use crate::tensor::ops;

    fn logit_of(p: f64) -> f64 {
        (p / (1.0 - p)).ln()
    }

    /// Independent binary cross-entropy, summed and normalized the same way.
    fn bce_oracle(logits: &[f64], labels: &[i8], normalizer: f64) -> f64 {
        let mut total = 0.0;
        for (&x, &l) in logits.iter().zip(labels) {
            let p = 1.0 / (1.0 + (-x).exp());
            match l {
                LABEL_POSITIVE => total += -(p.ln()),
                LABEL_NEGATIVE => total += -((1.0 - p).ln()),
                _ => {}
            }
        }
        total / normalizer
    }

    #[test]
    fn gamma_zero_alpha_half_is_half_bce() {
        let logits = vec![1.7, -0.3, 0.02, -2.5, 4.0];
        let labels = vec![1i8, 0, -1, 0, 1];
        let t = Tensor::from_vec(logits.clone(), &[5]).unwrap();
        let fl = focal_loss(&t, &labels, 0.5, 0.0, 2.0).unwrap().item();
        let bce = bce_oracle(&logits, &labels, 2.0);
        assert!((fl - 0.5 * bce).abs() < 1e-9, "{fl} vs {}", 0.5 * bce);
    }

    #[test]
    fn single_positive_hand_value() {
        // p = 0.9, gamma 2, alpha 0.25: 0.25 * 0.1^2 * (-ln 0.9)
        let t = Tensor::from_vec(vec![logit_of(0.9)], &[1]).unwrap();
        let fl = focal_loss(&t, &[LABEL_POSITIVE], 0.25, 2.0, 1.0).unwrap().item();
        let expect = 0.25 * 0.01 * -(0.9f64.ln());
        assert!((fl - expect).abs() < 1e-10, "{fl} vs {expect}");
        assert!((fl - 2.634e-4).abs() < 1e-6);
    }

    #[test]
    fn easy_negative_is_modulated_away() {
        // modulating factor (1-p_t)^2 = p^2 = 1e-4 at p = 0.01
        let x = logit_of(0.01);
        let t = Tensor::from_vec(vec![x], &[1]).unwrap();
        let focal = focal_loss(&t, &[LABEL_NEGATIVE], 0.25, 2.0, 1.0).unwrap().item();
        let plain = 0.75 * -((1.0 - 0.01f64).ln());
        assert!(focal <= plain * 1.01e-4, "focal {focal} vs plain-weighted {plain}");
    }

    #[test]
    fn ignored_anchors_contribute_nothing() {
        let t = Tensor::from_vec(vec![3.0, -1.0], &[2]).unwrap();
        let all = focal_loss(&t, &[1, -1], 0.25, 2.0, 1.0).unwrap().item();
        let only = focal_loss(
            &Tensor::from_vec(vec![3.0], &[1]).unwrap(),
            &[1],
            0.25,
            2.0,
            1.0,
        )
        .unwrap()
        .item();
        assert_eq!(all, only);
    }

    #[test]
    fn focal_gradient_matches_finite_differences() {
        let labels = vec![1i8, 0, 0, 1, -1, 0];
        let point = Tensor::from_vec(vec![0.8, -1.2, 2.0, -0.4, 1.0, 0.3], &[6]).unwrap();
        let r = grad_check(
            &|x: &Tensor<f64>| focal_loss(x, &labels, 0.25, 2.0, 2.0),
            &point,
            1e-4,
        )
        .unwrap();
        assert!(r.max_rel_err <= 1e-3, "{}", r.max_rel_err);
    }

    #[test]
    fn smooth_l1_values() {
        let beta = 1.0 / 9.0;
        let zero = smooth_l1(
            &Tensor::from_vec(vec![0.1, 0.2, 0.3, 0.4], &[4]).unwrap(),
            &[(0, [0.1, 0.2, 0.3, 0.4])],
            beta,
            1.0,
        )
        .unwrap()
        .item();
        assert_eq!(zero, 0.0);

        // knee continuity: |x| = beta gives beta/2 from either piece
        let at_knee = smooth_l1(
            &Tensor::from_vec(vec![beta, 0.0, 0.0, 0.0], &[4]).unwrap(),
            &[(0, [0.0; 4])],
            beta,
            1.0,
        )
        .unwrap()
        .item();
        assert!((at_knee - beta / 2.0).abs() < 1e-12);

        // x = 1 on the linear side: 1 - beta/2
        let linear = smooth_l1(
            &Tensor::from_vec(vec![1.0, 0.0, 0.0, 0.0], &[4]).unwrap(),
            &[(0, [0.0; 4])],
            beta,
            1.0,
        )
        .unwrap()
        .item();
        assert!((linear - (1.0 - beta / 2.0)).abs() < 1e-12);
    }

    #[test]
    fn smooth_l1_no_positives_is_zero_with_zero_gradient() {
        let pred = Tensor::param(vec![0.5, -0.5, 1.0, 2.0], &[4]).unwrap();
        let loss = smooth_l1(&pred, &[], 1.0 / 9.0, 1.0).unwrap();
        assert_eq!(loss.item(), 0.0);
        loss.backward().unwrap();
        assert_eq!(pred.grad().unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn smooth_l1_gradient_matches_finite_differences() {
        let targets = vec![(0usize, [0.1, -0.2, 0.4, 0.0]), (2usize, [1.0, 1.0, -1.0, 0.5])];
        let point = Tensor::from_vec(
            vec![0.3, -0.6, 0.9, 0.2, 9.0, 9.0, 9.0, 9.0, -0.8, 1.4, -1.2, 0.65],
            &[12],
        )
        .unwrap();
        let r = grad_check(
            &|x: &Tensor<f64>| smooth_l1(x, &targets, 1.0 / 9.0, 2.0),
            &point,
            1e-5,
        )
        .unwrap();
        assert!(r.max_rel_err <= 1e-3, "{}", r.max_rel_err);
    }

    #[test]
    fn losses_combine_through_the_graph() {
        let logits = Tensor::param(vec![0.4, -0.6], &[2]).unwrap();
        let deltas = Tensor::param(vec![0.2, 0.0, 0.0, 0.0, 0.1, 0.1, 0.1, 0.1], &[8]).unwrap();
        let cls = focal_loss(&logits, &[1, 0], 0.25, 2.0, 1.0).unwrap();
        let reg = smooth_l1(&deltas, &[(0, [0.0; 4])], 1.0 / 9.0, 1.0).unwrap();
        let total = ops::add(&cls, &reg).unwrap();
        total.backward().unwrap();
        assert!(logits.grad().unwrap().iter().any(|&g| g != 0.0));
        let dg = deltas.grad().unwrap();
        assert!(dg[..4].iter().any(|&g| g != 0.0));
        assert!(dg[4..].iter().all(|&g| g == 0.0));
    }
}
