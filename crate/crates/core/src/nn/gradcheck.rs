//! Central finite-difference checks of the analytic gradients.
//!
//! Everything here uses forward passes only, so it is independent of the
//! backward code it checks.

use rand::distributions::{Distribution, Uniform};
use rand::Rng as _;

use super::{init_network, Activation, GradientSet, LayerSpec, Network, NetworkSpec, Shape};
use crate::error::Result;
use crate::rng::{stream, Rng};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-5;

/// Overwrites every parameter with `U[-scale, scale]`.
pub fn randomize(net: &mut Network, rng: &mut Rng, scale: f64) {
    let dist = Uniform::new_inclusive(-scale, scale);
    net.for_each_param_mut(|p| p.iter_mut().for_each(|v| *v = dist.sample(rng)));
}

/// `||a - b|| / max(||a||, ||b||)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Central difference of a scalar function over every coordinate of `x`.
pub fn central_difference(x: &[f64], step: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + step;
            let plus = f(&probe);
            probe[i] = orig - step;
            let minus = f(&probe);
            probe[i] = orig;
            (plus - minus) / (2.0 * step)
        })
        .collect()
}

fn weighted_output(net: &Network, input: &[f64], aux: &[f64], upstream: &[f64]) -> f64 {
    net.predict(input, aux)
        .expect("shapes validated by caller")
        .iter()
        .zip(upstream)
        .map(|(o, u)| o * u)
        .sum()
}

/// Finite-difference gradients of `upstream . net(input, aux)`.
pub fn numeric_gradients(
    net: &Network,
    input: &[f64],
    aux: &[f64],
    upstream: &[f64],
    step: f64,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut probe = net.clone();
    let params = net.flat_params();
    let dparams = central_difference(&params, step, |p| {
        probe.set_flat_params(p).expect("same length");
        weighted_output(&probe, input, aux, upstream)
    });
    let dinput = central_difference(input, step, |x| weighted_output(net, x, aux, upstream));
    let daux = central_difference(aux, step, |a| weighted_output(net, input, a, upstream));
    (dparams, dinput, daux)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub label: String,
    pub params: f64,
    pub input: f64,
    pub aux: f64,
}

impl GradReport {
    pub fn worst(&self) -> f64 {
        self.params.max(self.input).max(self.aux)
    }

    pub fn passed(&self) -> bool {
        self.worst() < TOLERANCE
    }
}

/// Relative error per parameter tensor, reporting the worst tensor.
fn tensorwise_error(net: &Network, analytic: &GradientSet, numeric: &[f64]) -> f64 {
    let mut offset = 0;
    let mut worst: f64 = 0.0;
    for g in &analytic.layers {
        for t in [&g.weights, &g.bias] {
            if t.is_empty() {
                continue;
            }
            worst = worst.max(relative_error(t, &numeric[offset..offset + t.len()]));
            offset += t.len();
        }
    }
    debug_assert_eq!(offset, net.param_count());
    worst
}

pub fn check_network(
    label: &str,
    net: &Network,
    input: &[f64],
    aux: &[f64],
    upstream: &[f64],
) -> Result<GradReport> {
    let (_, cache) = net.forward(input, aux)?;
    let analytic = net.backward(&cache, upstream)?;
    let (dp, di, da) = numeric_gradients(net, input, aux, upstream, STEP);
    Ok(GradReport {
        label: label.to_string(),
        params: tensorwise_error(net, &analytic, &dp),
        input: relative_error(&analytic.input, &di),
        aux: relative_error(&analytic.aux, &da),
    })
}

const ACTIVATIONS: [Activation; 4] = [
    Activation::Relu,
    Activation::Tanh,
    Activation::Sigmoid,
    Activation::Linear,
];

/// A random small network exercising dense, conv, flatten and concat layers.
pub fn random_network(rng: &mut Rng, case: usize) -> Result<Network> {
    let act = |rng: &mut Rng| ACTIVATIONS[rng.gen_range(0..ACTIVATIONS.len())];
    let aux_width = [0, 1, 2, 3][case % 4];
    let spec = if case.is_multiple_of(2) {
        let side = rng.gen_range(4..=6);
        let mut layers = vec![LayerSpec::Conv2d {
            filters: rng.gen_range(1..=3),
            kernel: rng.gen_range(2..=3),
            activation: act(rng),
        }];
        if rng.gen_bool(0.5) {
            layers.push(LayerSpec::Conv2d {
                filters: rng.gen_range(1..=2),
                kernel: 2,
                activation: act(rng),
            });
        }
        layers.push(LayerSpec::Flatten);
        if aux_width > 0 {
            layers.push(LayerSpec::ConcatInput);
        }
        layers.push(LayerSpec::Dense {
            outputs: rng.gen_range(2..=5),
            activation: act(rng),
        });
        layers.push(LayerSpec::Dense {
            outputs: rng.gen_range(1..=3),
            activation: act(rng),
        });
        NetworkSpec {
            input: Shape::Grid {
                channels: 1,
                height: side,
                width: side,
            },
            aux_width,
            layers,
            small_final: true,
        }
    } else {
        let inputs = rng.gen_range(1..=6);
        let mut layers = Vec::new();
        if aux_width > 0 {
            layers.push(LayerSpec::ConcatInput);
        }
        for _ in 0..rng.gen_range(1..=3) {
            layers.push(LayerSpec::Dense {
                outputs: rng.gen_range(1..=6),
                activation: act(rng),
            });
        }
        NetworkSpec {
            input: Shape::Flat(inputs),
            aux_width,
            layers,
            small_final: true,
        }
    };
    let mut net = init_network(&spec, rng)?;
    randomize(&mut net, rng, 0.8);
    Ok(net)
}

/// Runs `cases` random network configurations through [`check_network`].
pub fn network_suite(cases: usize, seed: u64) -> Result<Vec<GradReport>> {
    let mut rng = stream(seed, 0);
    (0..cases)
        .map(|case| {
            let net = random_network(&mut rng, case)?;
            let dist = Uniform::new_inclusive(-1.0, 1.0);
            let input: Vec<f64> = (0..net.input_shape().size()).map(|_| dist.sample(&mut rng)).collect();
            let aux: Vec<f64> = (0..net.aux_width()).map(|_| dist.sample(&mut rng)).collect();
            let upstream: Vec<f64> = (0..net.output_size()).map(|_| dist.sample(&mut rng)).collect();
            let kinds: Vec<&str> = net
                .layers()
                .iter()
                .map(|l| match l {
                    super::Layer::Dense(d) => d.activation.name(),
                    super::Layer::Conv2d(_) => "conv",
                    super::Layer::Flatten => "flatten",
                    super::Layer::ConcatInput { .. } => "concat",
                })
                .collect();
            check_network(&format!("net#{case} [{}]", kinds.join(",")), &net, &input, &aux, &upstream)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn central_difference_of_quadratic() {
        let g = central_difference(&[1.0, -2.0], 1e-4, |x| x[0] * x[0] + 3.0 * x[1]);
        assert!((g[0] - 2.0).abs() < 1e-8);
        assert!((g[1] - 3.0).abs() < 1e-8);
    }

    #[test]
    fn relative_error_basics() {
        assert_eq!(relative_error(&[0.0], &[0.0]), 0.0);
        assert_eq!(relative_error(&[1.0, 0.0], &[1.0, 0.0]), 0.0);
        assert!((relative_error(&[1.0], &[0.5]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn small_suite_passes() {
        for r in network_suite(12, 99).unwrap() {
            assert!(r.passed(), "{r:?}");
        }
    }
}
