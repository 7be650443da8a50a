//! Lipschitz upper bounds for feedforward networks.
//!
//! A layer `x -> act(Wx + b)` is `lip(act) * ||W||_p`-Lipschitz in the
//! p-norm, and a composition is bounded by the product of its layers.

use super::{Layer, Network};

/// Size above which conv layers fall back to `sqrt(||A||_1 ||A||_inf)`
/// instead of the exact spectral norm of their unrolled matrix.
const UNROLL_LIMIT: usize = 1 << 22;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormOrder {
    One,
    Two,
    Inf,
}

/// Induced operator norm of a row-major `rows x cols` matrix.
pub fn induced_norm(rows: usize, cols: usize, m: &[f64], p: NormOrder) -> f64 {
    match p {
        NormOrder::One => (0..cols)
            .map(|c| (0..rows).map(|r| m[r * cols + c].abs()).sum::<f64>())
            .fold(0.0, f64::max),
        NormOrder::Inf => m
            .chunks(cols.max(1))
            .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max),
        NormOrder::Two => spectral_norm(rows, cols, m),
    }
}

/// Largest singular value, from the eigenvalues of the smaller Gram matrix
/// computed with cyclic Jacobi rotations.
pub fn spectral_norm(rows: usize, cols: usize, m: &[f64]) -> f64 {
    if rows == 0 || cols == 0 {
        return 0.0;
    }
    let n = rows.min(cols);
    let mut g = vec![0.0; n * n];
    for a in 0..n {
        for b in a..n {
            let v: f64 = if cols <= rows {
                (0..rows).map(|r| m[r * cols + a] * m[r * cols + b]).sum()
            } else {
                (0..cols).map(|c| m[a * cols + c] * m[b * cols + c]).sum()
            };
            g[a * n + b] = v;
            g[b * n + a] = v;
        }
    }
    jacobi_max_eigenvalue(n, &mut g).max(0.0).sqrt()
}

fn jacobi_max_eigenvalue(n: usize, a: &mut [f64]) -> f64 {
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum();
        let diag: f64 = (0..n).map(|i| a[i * n + i] * a[i * n + i]).sum();
        if off <= 1e-30 * diag.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i * n + i]).fold(f64::NEG_INFINITY, f64::max)
}

fn layer_norm(layer: &Layer, p: NormOrder) -> f64 {
    match layer {
        Layer::Dense(d) => induced_norm(d.outputs, d.inputs, &d.weights, p),
        Layer::Conv2d(c) => {
            let area = c.kernel_h * c.kernel_w;
            // every output row sees the full kernel of its filter
            let inf = (0..c.out_channels)
                .map(|oc| {
                    c.weights[oc * c.in_channels * area..(oc + 1) * c.in_channels * area]
                        .iter()
                        .map(|v| v.abs())
                        .sum::<f64>()
                })
                .fold(0.0, f64::max);
            // an input pixel is touched by at most every tap of every filter
            let one = (0..c.in_channels)
                .map(|ic| {
                    (0..c.out_channels)
                        .map(|oc| {
                            let s = (oc * c.in_channels + ic) * area;
                            c.weights[s..s + area].iter().map(|v| v.abs()).sum::<f64>()
                        })
                        .sum::<f64>()
                })
                .fold(0.0, f64::max);
            match p {
                NormOrder::Inf => inf,
                NormOrder::One => one,
                NormOrder::Two => {
                    let rows = c.out_channels * c.out_h() * c.out_w();
                    let cols = c.in_channels * c.in_h * c.in_w;
                    if rows.min(cols).pow(2) <= UNROLL_LIMIT && rows * cols <= UNROLL_LIMIT {
                        let (r, cl, m) = c.unrolled();
                        spectral_norm(r, cl, &m)
                    } else {
                        (one * inf).sqrt()
                    }
                }
            }
        }
        Layer::Flatten | Layer::ConcatInput { .. } => 1.0,
    }
}

fn activation_lipschitz(layer: &Layer) -> f64 {
    match layer {
        Layer::Dense(d) => d.activation.lipschitz(),
        Layer::Conv2d(c) => c.activation.lipschitz(),
        _ => 1.0,
    }
}

/// Product over layers of activation slope times induced weight norm.
///
/// The bound holds jointly in the primary and auxiliary inputs.
pub fn lipschitz_bound(net: &Network, p: NormOrder) -> f64 {
    net.layers()
        .iter()
        .map(|l| activation_lipschitz(l) * layer_norm(l, p))
        .product()
}

/// Closed-form metric-entropy bounds for a Lipschitz policy class and for the
/// descriptor-based class that covers it:
/// `c1 (L/eps)^d + logN` and `c2 (L/eps)^d * logN_half`.
pub fn entropy_bounds(
    eps: f64,
    lipschitz: f64,
    dim: u32,
    log_n: f64,
    log_n_half: f64,
    c1: f64,
    c2: f64,
) -> (f64, f64) {
    let ratio = (lipschitz / eps).powi(dim as i32);
    (c1 * ratio + log_n, c2 * ratio * log_n_half)
}

#[cfg(test)]
mod tests {
    use super::super::{init_network, Activation, Dense, NetworkSpec, Shape};
    use super::*;
    use crate::rng::stream;

    fn dense(w: Vec<f64>, rows: usize, cols: usize, act: Activation) -> Layer {
        Layer::Dense(Dense {
            inputs: cols,
            outputs: rows,
            weights: w,
            bias: vec![0.0; rows],
            activation: act,
            decay: false,
        })
    }

    #[test]
    fn single_layer_bound() {
        let net = Network::new(Shape::Flat(1), 0, vec![dense(vec![3.0], 1, 1, Activation::Linear)])
            .unwrap();
        assert_eq!(lipschitz_bound(&net, NormOrder::Two), 3.0);
    }

    #[test]
    fn composition_multiplies() {
        let net = Network::new(
            Shape::Flat(2),
            0,
            vec![
                dense(vec![2.0, 0.0, 0.0, 1.0], 2, 2, Activation::Relu),
                dense(vec![3.0, 4.0], 1, 2, Activation::Linear),
            ],
        )
        .unwrap();
        assert!((lipschitz_bound(&net, NormOrder::Two) - 10.0).abs() < 1e-12);
        let sig = Network::new(Shape::Flat(1), 0, vec![dense(vec![2.0], 1, 1, Activation::Sigmoid)])
            .unwrap();
        assert_eq!(lipschitz_bound(&sig, NormOrder::Two), 0.5);
    }

    #[test]
    fn matrix_norms() {
        // [[1, -2], [3, 4]]
        let m = [1.0, -2.0, 3.0, 4.0];
        assert_eq!(induced_norm(2, 2, &m, NormOrder::One), 6.0);
        assert_eq!(induced_norm(2, 2, &m, NormOrder::Inf), 7.0);
        // singular values of [[3, 0], [4, 5]] are 3*sqrt(5) and sqrt(5)
        let m = [3.0, 0.0, 4.0, 5.0];
        assert!((spectral_norm(2, 2, &m) - 3.0 * 5f64.sqrt()).abs() < 1e-12);
        // rectangular: [[1, 1, 1]] has norm sqrt(3)
        assert!((spectral_norm(1, 3, &[1.0, 1.0, 1.0]) - 3f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn conv_norm_bounds_are_consistent() {
        let spec = NetworkSpec::conv(6, 0, &[(2, 3)], &[], 1, Activation::Linear);
        let net = init_network(&spec, &mut stream(3, 0)).unwrap();
        let Layer::Conv2d(c) = &net.layers()[0] else { panic!() };
        let (r, cl, m) = c.unrolled();
        let exact_inf = induced_norm(r, cl, &m, NormOrder::Inf);
        let exact_one = induced_norm(r, cl, &m, NormOrder::One);
        assert!((layer_norm(&net.layers()[0], NormOrder::Inf) - exact_inf).abs() < 1e-12);
        assert!(layer_norm(&net.layers()[0], NormOrder::One) >= exact_one - 1e-12);
        let two = layer_norm(&net.layers()[0], NormOrder::Two);
        assert!(two <= (exact_one * exact_inf).sqrt() + 1e-12);
    }

    #[test]
    fn entropy_bound_spot_values() {
        let (a, _) = entropy_bounds(1.0, 2.0, 2, 3.0, 0.0, 1.0, 0.0);
        assert_eq!(a, 7.0);
        let (_, b) = entropy_bounds(1.0, 2.0, 2, 0.0, 3.0, 0.0, 1.0);
        assert_eq!(b, 12.0);
    }

    #[test]
    fn entropy_bound_ordering_sweep() {
        for &l in &[1.0f64, 1.5, 2.0, 4.0] {
            for &eps in &[0.25, 0.5, 1.0] {
                for d in 1..4u32 {
                    for &log_n in &[1.0, 2.0, 5.0] {
                        for &extra in &[0.0, 0.5, 3.0] {
                            let log_half = log_n + extra;
                            let ratio = (l / eps).powi(d as i32);
                            if ratio < 1.0 {
                                continue;
                            }
                            let (pl, pbar) = entropy_bounds(eps, l, d, log_n, log_half, 1.0, 1.0);
                            if ratio * (log_half - 1.0) >= log_n {
                                assert!(pbar >= pl, "l={l} eps={eps} d={d}");
                            }
                        }
                    }
                }
            }
        }
    }
}
