//! Central finite differences for verifying analytic gradients.

use ndarray::{Array2, ArrayView2};

use super::loss::LossKind;
use super::network::{Layer, Network};

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Central difference of a scalar function of one coordinate.
pub fn central_difference(mut f: impl FnMut(f64) -> f64, x: f64, step: f64) -> f64 {
    (f(x + step) - f(x - step)) / (2.0 * step)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_relative_error: f64,
    pub parameters_checked: usize,
}

/// Central difference of a sum of terms, differenced term by term so the
/// rounding of the (large) total does not swamp small derivatives.
pub fn central_difference_terms(mut f: impl FnMut(f64) -> Array2<f64>, x: f64, step: f64) -> f64 {
    let hi = f(x + step);
    let lo = f(x - step);
    (hi - lo).sum() / (2.0 * step)
}

fn loss_terms(net: &mut Network, x: ArrayView2<f64>, y: ArrayView2<f64>, kind: LossKind) -> Array2<f64> {
    let pass = net.forward(x).expect("shapes checked by caller");
    kind.elementwise(pass.logits.view(), y)
}

/// Compares every parameter gradient (and the input gradient) from
/// [`Network::backward`] with central differences of the loss, using the
/// network's current mode.
pub fn check_network(
    net: &mut Network,
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    kind: LossKind,
    step: f64,
    floor: f64,
) -> GradCheck {
    let pass = net.forward(x).expect("input width matches");
    let grad_out = kind.evaluate(pass.logits.view(), y).grad;
    let grad_in = net.backward(grad_out.view()).expect("cache present");
    let analytic: Vec<Vec<f64>> = net
        .layers()
        .iter()
        .flat_map(|l| match l {
            Layer::Linear(l) => vec![
                l.grad_weight.iter().copied().collect(),
                l.grad_bias.to_vec(),
            ],
            Layer::BatchNorm(b) => vec![b.grad_gamma.to_vec(), b.grad_beta.to_vec()],
            Layer::Activation(_) => vec![],
        })
        .collect();

    let mut worst = 0.0f64;
    let mut checked = 0usize;
    let mut tensor = 0usize;
    for li in 0..net.layers().len() {
        let count = match &net.layers()[li] {
            Layer::Activation(_) => 0,
            _ => 2,
        };
        for which in 0..count {
            let len = analytic[tensor].len();
            for i in 0..len {
                let base = param(net, li, which, i);
                let numeric = central_difference_terms(
                    |v| {
                        set_param(net, li, which, i, v);
                        loss_terms(net, x, y, kind)
                    },
                    base,
                    step,
                );
                set_param(net, li, which, i, base);
                worst = worst.max(relative_error(analytic[tensor][i], numeric, floor));
                checked += 1;
            }
            tensor += 1;
        }
    }

    let mut xs: Array2<f64> = x.to_owned();
    for idx in 0..xs.len() {
        let (r, c) = (idx / xs.ncols(), idx % xs.ncols());
        let base = xs[[r, c]];
        let numeric = central_difference_terms(
            |v| {
                xs[[r, c]] = v;
                let out = loss_terms(net, xs.view(), y, kind);
                xs[[r, c]] = base;
                out
            },
            base,
            step,
        );
        worst = worst.max(relative_error(grad_in[[r, c]], numeric, floor));
        checked += 1;
    }
    net.clear_caches();
    GradCheck {
        max_relative_error: worst,
        parameters_checked: checked,
    }
}

fn param(net: &Network, layer: usize, which: usize, i: usize) -> f64 {
    match &net.layers()[layer] {
        Layer::Linear(l) => {
            if which == 0 {
                l.weight.as_slice().expect("standard layout")[i]
            } else {
                l.bias[i]
            }
        }
        Layer::BatchNorm(b) => {
            if which == 0 {
                b.gamma[i]
            } else {
                b.beta[i]
            }
        }
        Layer::Activation(_) => unreachable!("activations have no parameters"),
    }
}

fn set_param(net: &mut Network, layer: usize, which: usize, i: usize, v: f64) {
    match &mut net.layers_mut()[layer] {
        Layer::Linear(l) => {
            if which == 0 {
                l.weight.as_slice_mut().expect("standard layout")[i] = v;
            } else {
                l.bias[i] = v;
            }
        }
        Layer::BatchNorm(b) => {
            if which == 0 {
                b.gamma[i] = v;
            } else {
                b.beta[i] = v;
            }
        }
        Layer::Activation(_) => unreachable!("activations have no parameters"),
    }
}
