//! Central finite-difference verification of gradient rules.
//!
//! The checker treats backward as the hypothesis and the symmetric difference
//! quotient as the oracle: for a deterministic scalar function f it perturbs
//! each coordinate by ±h and compares (f(x+h·e_i) − f(x−h·e_i)) / 2h against
//! the accumulated gradient, with relative error measured against
//! max(|analytic|, |numeric|, 1e-8).

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct GradReport {
    pub max_rel_err: f64,
    pub mean_rel_err: f64,
    pub coords: usize,
}

/// Compares backward's gradient of `f` at `point` against central finite
/// differences with step `h`, coordinate by coordinate.
pub fn grad_check<T: Scalar>(
    f: &dyn Fn(&Tensor<T>) -> Result<Tensor<T>>,
    point: &Tensor<T>,
    h: f64,
) -> Result<GradReport> {
    let x = Tensor::param(point.data().to_vec(), point.shape())?;
    let y = f(&x)?;
    if y.len() != 1 {
        return Err(Error::NonScalarLoss(y.shape().to_vec()));
    }
    y.backward()?;
    let analytic = x
        .grad()
        .ok_or_else(|| Error::GradCheck("no gradient reached the checked input".to_string()))?;

    let step = T::from_f64(h);
    let mut max_rel = 0.0f64;
    let mut sum_rel = 0.0f64;
    let n = point.len();
    for i in 0..n {
        let mut plus = point.data().to_vec();
        plus[i] = plus[i] + step;
        let mut minus = point.data().to_vec();
        minus[i] = minus[i] - step;
        let fp = f(&Tensor::from_vec(plus, point.shape())?)?.item().as_f64();
        let fm = f(&Tensor::from_vec(minus, point.shape())?)?.item().as_f64();
        let numeric = (fp - fm) / (2.0 * h);
        let a = analytic[i].as_f64();
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        max_rel = max_rel.max(rel);
        sum_rel += rel;
    }
    Ok(GradReport {
        max_rel_err: max_rel,
        mean_rel_err: sum_rel / n as f64,
        coords: n,
    })
}

/// One line of the verification table.
pub struct SuiteEntry {
    pub name: String,
    pub report: GradReport,
    pub tolerance: f64,
    /// Negative controls are expected to exceed the tolerance.
    pub expect_fail: bool,
    pub passed: bool,
}

impl SuiteEntry {
    fn judge(name: &str, report: GradReport, tolerance: f64, expect_fail: bool) -> Self {
        let exceeded = report.max_rel_err > tolerance;
        SuiteEntry {
            name: name.to_string(),
            report,
            tolerance,
            expect_fail,
            passed: exceeded == expect_fail,
        }
    }
}

pub const SUITE_TOLERANCE: f64 = 1e-3;
pub const SUITE_STEP: f64 = 1e-4;
const POINTS_PER_OP: usize = 10;

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::from_vec(data, shape).expect("random tensor shape")
}

fn check_many(
    name: &str,
    entries: &mut Vec<SuiteEntry>,
    points: Vec<Tensor<f64>>,
    f: impl Fn(&Tensor<f64>) -> Result<Tensor<f64>>,
) -> Result<()> {
    let mut worst = GradReport {
        max_rel_err: 0.0,
        mean_rel_err: 0.0,
        coords: 0,
    };
    for p in &points {
        let r = grad_check(&f, p, SUITE_STEP)?;
        if r.max_rel_err >= worst.max_rel_err {
            worst = r;
        }
    }
    entries.push(SuiteEntry::judge(name, worst, SUITE_TOLERANCE, false));
    Ok(())
}

/// Runs the double-precision finite-difference suite over every kernel in
/// the closed op set, plus a composite chain and a fault-injected negative
/// control. Each op is checked at 10 random points.
pub fn run_suite(seed: u64) -> Result<Vec<SuiteEntry>> {
    use super::ops;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::new();

    // conv2d wrt input, weight, bias. Fixed co-operands are untracked.
    let weight = random_tensor(&mut rng, &[3, 2, 3, 3], -0.5, 0.5);
    let bias = random_tensor(&mut rng, &[3], -0.5, 0.5);
    let points: Vec<_> = (0..POINTS_PER_OP)
        .map(|_| random_tensor(&mut rng, &[1, 2, 5, 5], -1.0, 1.0))
        .collect();
    {
        let (w, b) = (weight.clone(), bias.clone());
        check_many("conv2d/input", &mut entries, points, move |x| {
            Ok(ops::sum_all(&ops::conv2d(x, &w, &b, 2, 1)?))
        })?;
    }
    let image = random_tensor(&mut rng, &[1, 2, 5, 5], -1.0, 1.0);
    let points: Vec<_> = (0..POINTS_PER_OP)
        .map(|_| random_tensor(&mut rng, &[3, 2, 3, 3], -0.5, 0.5))
        .collect();
    {
        let (img, b) = (image.clone(), bias.clone());
        check_many("conv2d/weight", &mut entries, points, move |w| {
            Ok(ops::sum_all(&ops::conv2d(&img, w, &b, 1, 1)?))
        })?;
    }
    let points: Vec<_> = (0..POINTS_PER_OP)
        .map(|_| random_tensor(&mut rng, &[3], -0.5, 0.5))
        .collect();
    {
        let (img, w) = (image.clone(), weight.clone());
        check_many("conv2d/bias", &mut entries, points, move |b| {
            Ok(ops::sum_all(&ops::conv2d(&img, &w, b, 1, 0)?))
        })?;
    }

    // relu, checked away from the kink at 0.
    let points: Vec<_> = (0..POINTS_PER_OP)
        .map(|_| {
            let t = random_tensor(&mut rng, &[12], 0.05, 1.0);
            let data = t
                .data()
                .iter()
                .enumerate()
                .map(|(i, &v)| if i % 2 == 0 { v } else { -v })
                .collect();
            Tensor::from_vec(data, &[12]).unwrap()
        })
        .collect();
    check_many("relu", &mut entries, points, |x| {
        Ok(ops::sum_all(&ops::relu(x)))
    })?;

    // add / mul against a fixed co-operand; scale by a constant.
    let other = random_tensor(&mut rng, &[10], -1.0, 1.0);
    let points: Vec<_> = (0..POINTS_PER_OP)
        .map(|_| random_tensor(&mut rng, &[10], -1.0, 1.0))
        .collect();
    {
        let o = other.clone();
        check_many("add", &mut entries, points.clone(), move |x| {
            Ok(ops::sum_all(&ops::add(x, &o)?))
        })?;
        let o = other.clone();
        check_many("mul", &mut entries, points.clone(), move |x| {
            Ok(ops::sum_all(&ops::mul(x, &o)?))
        })?;
        check_many("scale", &mut entries, points, |x| {
            Ok(ops::sum_all(&ops::scale(x, -1.75)))
        })?;
    }

    // upsample_nearest2x
    let points: Vec<_> = (0..POINTS_PER_OP)
        .map(|_| random_tensor(&mut rng, &[1, 2, 3, 3], -1.0, 1.0))
        .collect();
    check_many("upsample_nearest2x", &mut entries, points, |x| {
        Ok(ops::sum_all(&ops::upsample_nearest2x(x)?))
    })?;

    // softmax Jacobian directions and sigmoid, via random contractions.
    let coeffs: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let points: Vec<_> = (0..POINTS_PER_OP)
        .map(|_| random_tensor(&mut rng, &[6], -2.0, 2.0))
        .collect();
    {
        let c = coeffs.clone();
        check_many("softmax1d", &mut entries, points.clone(), move |x| {
            ops::weighted_sum(&ops::softmax1d(x)?, &c)
        })?;
        let c = coeffs.clone();
        check_many("sigmoid", &mut entries, points, move |x| {
            ops::weighted_sum(&ops::sigmoid(x), &c)
        })?;
    }

    // global_avg_pool and mean_rows.
    let coeffs: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let points: Vec<_> = (0..POINTS_PER_OP)
        .map(|_| random_tensor(&mut rng, &[2, 3, 4, 4], -1.0, 1.0))
        .collect();
    {
        let c = coeffs.clone();
        check_many("global_avg_pool", &mut entries, points, move |x| {
            ops::weighted_sum(&ops::global_avg_pool(x)?, &c)
        })?;
    }
    let coeffs: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let points: Vec<_> = (0..POINTS_PER_OP)
        .map(|_| random_tensor(&mut rng, &[3, 4], -1.0, 1.0))
        .collect();
    {
        let c = coeffs.clone();
        check_many("mean_rows", &mut entries, points, move |x| {
            ops::weighted_sum(&ops::mean_rows(x)?, &c)
        })?;
    }

    // sum_all and weighted_sum (linear, so errors sit at machine precision).
    let points: Vec<_> = (0..POINTS_PER_OP)
        .map(|_| random_tensor(&mut rng, &[9], -1.0, 1.0))
        .collect();
    check_many("sum_all", &mut entries, points.clone(), |x| {
        Ok(ops::sum_all(x))
    })?;
    let coeffs: Vec<f64> = (0..9).map(|_| rng.gen_range(-2.0..2.0)).collect();
    {
        let c = coeffs.clone();
        check_many("weighted_sum", &mut entries, points, move |x| {
            ops::weighted_sum(x, &c)
        })?;
    }

    // dot_bias wrt each operand.
    let u = random_tensor(&mut rng, &[7], -1.0, 1.0);
    let b1 = random_tensor(&mut rng, &[1], -1.0, 1.0);
    let points: Vec<_> = (0..POINTS_PER_OP)
        .map(|_| random_tensor(&mut rng, &[7], -1.0, 1.0))
        .collect();
    {
        let (uu, bb) = (u.clone(), b1.clone());
        check_many("dot_bias/vector", &mut entries, points.clone(), move |d| {
            ops::dot_bias(d, &uu, &bb)
        })?;
        let (dd, bb) = (points[0].clone(), b1.clone());
        check_many("dot_bias/projection", &mut entries, points, move |uu| {
            ops::dot_bias(&dd, uu, &bb)
        })?;
    }

    // concat_flat and flatten_anchor_major (pure permutations).
    let tail = random_tensor(&mut rng, &[5], -1.0, 1.0);
    let coeffs: Vec<f64> = (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let points: Vec<_> = (0..POINTS_PER_OP)
        .map(|_| random_tensor(&mut rng, &[4], -1.0, 1.0))
        .collect();
    {
        let (t, c) = (tail.clone(), coeffs.clone());
        check_many("concat_flat", &mut entries, points, move |x| {
            ops::weighted_sum(&ops::concat_flat(&[x.clone(), t.clone()])?, &c)
        })?;
    }
    let coeffs: Vec<f64> = (0..24).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let points: Vec<_> = (0..POINTS_PER_OP)
        .map(|_| random_tensor(&mut rng, &[1, 6, 2, 2], -1.0, 1.0))
        .collect();
    {
        let c = coeffs.clone();
        check_many("flatten_anchor_major", &mut entries, points, move |x| {
            ops::weighted_sum(&ops::flatten_anchor_major(x, 2)?, &c)
        })?;
    }

    // residual_weighted_sum wrt base, branches, and the weight vector.
    let branches: Vec<Tensor<f64>> = (0..3)
        .map(|_| random_tensor(&mut rng, &[1, 2, 3, 3], -1.0, 1.0))
        .collect();
    let wvec = random_tensor(&mut rng, &[3], -1.0, 1.0);
    let points: Vec<_> = (0..POINTS_PER_OP)
        .map(|_| random_tensor(&mut rng, &[1, 2, 3, 3], -1.0, 1.0))
        .collect();
    {
        let (br, wv) = (branches.clone(), wvec.clone());
        check_many("residual_weighted_sum/base", &mut entries, points, move |h| {
            Ok(ops::sum_all(&ops::residual_weighted_sum(h, &br, &wv)?))
        })?;
        let base = random_tensor(&mut rng, &[1, 2, 3, 3], -1.0, 1.0);
        let (br, bs) = (branches.clone(), base.clone());
        let points: Vec<_> = (0..POINTS_PER_OP)
            .map(|_| random_tensor(&mut rng, &[3], -1.0, 1.0))
            .collect();
        check_many(
            "residual_weighted_sum/weights",
            &mut entries,
            points,
            move |w| Ok(ops::sum_all(&ops::residual_weighted_sum(&bs, &br, w)?)),
        )?;
        let (bs, wv) = (base.clone(), wvec.clone());
        let others = [branches[1].clone(), branches[2].clone()];
        let points: Vec<_> = (0..POINTS_PER_OP)
            .map(|_| random_tensor(&mut rng, &[1, 2, 3, 3], -1.0, 1.0))
            .collect();
        check_many(
            "residual_weighted_sum/branch",
            &mut entries,
            points,
            move |e| {
                let br = [e.clone(), others[0].clone(), others[1].clone()];
                Ok(ops::sum_all(&ops::residual_weighted_sum(&bs, &br, &wv)?))
            },
        )?;
    }

    // Composite chain: conv -> relu -> upsample -> conv -> sum.
    let w1 = random_tensor(&mut rng, &[3, 2, 3, 3], -0.5, 0.5);
    let b1 = random_tensor(&mut rng, &[3], 0.1, 0.4);
    let w2 = random_tensor(&mut rng, &[2, 3, 1, 1], -0.5, 0.5);
    let b2 = random_tensor(&mut rng, &[2], -0.2, 0.2);
    let points: Vec<_> = (0..POINTS_PER_OP)
        .map(|_| random_tensor(&mut rng, &[1, 2, 4, 4], -1.0, 1.0))
        .collect();
    {
        check_many("chain/conv-relu-upsample-conv", &mut entries, points, move |x| {
            let y = ops::relu(&ops::conv2d(x, &w1, &b1, 1, 1)?);
            let y = ops::upsample_nearest2x(&y)?;
            let y = ops::conv2d(&y, &w2, &b2, 1, 0)?;
            Ok(ops::sum_all(&y))
        })?;
    }

    // Negative control: a deliberately corrupted gradient rule (scales the
    // true gradient by 1.5). The checker must flag it.
    let points: Vec<_> = (0..POINTS_PER_OP)
        .map(|_| random_tensor(&mut rng, &[8], 0.5, 1.5))
        .collect();
    let mut worst = GradReport {
        max_rel_err: 0.0,
        mean_rel_err: 0.0,
        coords: 0,
    };
    for p in &points {
        let r = grad_check(
            &|x: &Tensor<f64>| Ok(ops::sum_all(&corrupted_identity(x))),
            p,
            SUITE_STEP,
        )?;
        if r.max_rel_err >= worst.max_rel_err {
            worst = r;
        }
    }
    entries.push(SuiteEntry::judge(
        "negative-control/corrupted-rule",
        worst,
        0.1,
        true,
    ));

    Ok(entries)
}

/// Identity forward whose backward multiplies the gradient by 1.5 — a fault
/// injection used as the suite's negative control.
fn corrupted_identity<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let x_c = x.clone();
    Tensor::from_op(
        x.data().to_vec(),
        x.shape().to_vec(),
        vec![x.clone()],
        move |grad| {
            let bad: Vec<T> = grad
                .iter()
                .map(|&g| g * T::from_f64(1.5))
                .collect();
            x_c.accumulate_grad(&bad);
        },
    )
}
