use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Grid, NnError, Params};

/// Weights `(c_out, c_in, kernel)` and bias `(c_out)` of a dilated causal convolution.
///
/// Tap `j` of the kernel reads `x[t - j * dilation]`; positions before the
/// start of the sequence read zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvParams {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub dilation: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvParams {
    pub fn zeros(c_in: usize, c_out: usize, kernel: usize, dilation: usize) -> Result<Self, NnError> {
        if c_in == 0 || c_out == 0 {
            return Err(NnError::Config("conv channels must be positive".into()));
        }
        if kernel == 0 || dilation == 0 {
            return Err(NnError::Config(format!(
                "kernel ({kernel}) and dilation ({dilation}) must be positive"
            )));
        }
        Ok(Self {
            c_in,
            c_out,
            kernel,
            dilation,
            weight: vec![0.0; c_out * c_in * kernel],
            bias: vec![0.0; c_out],
        })
    }

    /// He-style uniform init: `U(-b, b)` with `b = sqrt(6 / fan_in)`; zero bias.
    pub fn he_uniform<R: Rng>(
        c_in: usize,
        c_out: usize,
        kernel: usize,
        dilation: usize,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        let mut p = Self::zeros(c_in, c_out, kernel, dilation)?;
        let bound = (6.0 / (c_in * kernel) as f64).sqrt();
        for w in &mut p.weight {
            *w = rng.random_range(-bound..bound);
        }
        Ok(p)
    }

    /// Identity 1x1 map (`c_in == c_out`).
    pub fn identity(channels: usize) -> Self {
        let mut p = Self::zeros(channels, channels, 1, 1).expect("positive channels");
        for c in 0..channels {
            p.weight[c * channels + c] = 1.0;
        }
        p
    }

    #[inline]
    pub fn w(&self, o: usize, i: usize, j: usize) -> f64 {
        self.weight[(o * self.c_in + i) * self.kernel + j]
    }

    /// How far into the past one application reaches.
    pub fn lookback(&self) -> usize {
        (self.kernel - 1) * self.dilation
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            weight: vec![0.0; self.weight.len()],
            bias: vec![0.0; self.bias.len()],
            ..self.clone()
        }
    }
}

impl Params for ConvParams {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![&self.weight, &self.bias]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.weight, &mut self.bias]
    }
}

pub fn conv1d_causal(x: &Grid, p: &ConvParams) -> Result<Grid, NnError> {
    if x.channels() != p.c_in {
        return Err(NnError::Shape(format!(
            "conv input has {} channels, layer expects {}",
            x.channels(),
            p.c_in
        )));
    }
    Ok(forward(x, p))
}

pub(crate) fn forward(x: &Grid, p: &ConvParams) -> Grid {
    let t_len = x.time();
    let mut y = Grid::zeros(p.c_out, t_len);
    for o in 0..p.c_out {
        let out = y.row_mut(o);
        out.fill(p.bias[o]);
        for i in 0..p.c_in {
            let inp = x.row(i);
            for j in 0..p.kernel {
                let w = p.w(o, i, j);
                let shift = j * p.dilation;
                if w == 0.0 || shift >= t_len {
                    continue;
                }
                for (yo, xi) in out[shift..].iter_mut().zip(&inp[..t_len - shift]) {
                    *yo += w * xi;
                }
            }
        }
    }
    y.debug_check("conv forward");
    y
}

/// Accumulates parameter gradients into `grads` and returns the input gradient.
pub(crate) fn backward(x: &Grid, p: &ConvParams, up: &Grid, grads: &mut ConvParams) -> Grid {
    let t_len = x.time();
    let mut gx = Grid::zeros(p.c_in, t_len);
    for o in 0..p.c_out {
        let g = up.row(o);
        grads.bias[o] += g.iter().sum::<f64>();
        for i in 0..p.c_in {
            let inp = x.row(i);
            for j in 0..p.kernel {
                let shift = j * p.dilation;
                if shift >= t_len {
                    continue;
                }
                let idx = (o * p.c_in + i) * p.kernel + j;
                let mut acc = 0.0;
                for (gv, xv) in g[shift..].iter().zip(&inp[..t_len - shift]) {
                    acc += gv * xv;
                }
                grads.weight[idx] += acc;
                let w = p.weight[idx];
                if w != 0.0 {
                    let gxi = gx.row_mut(i);
                    for (gxv, gv) in gxi[..t_len - shift].iter_mut().zip(&g[shift..]) {
                        *gxv += w * gv;
                    }
                }
            }
        }
    }
    gx.debug_check("conv backward");
    gx
}

/// Returns `(grad_x, grads)` where `grads` holds weight and bias gradients.
pub fn conv1d_causal_grad(x: &Grid, p: &ConvParams, upstream: &Grid) -> Result<(Grid, ConvParams), NnError> {
    x.expect_shape(p.c_in, x.time(), "conv grad input")?;
    upstream.expect_shape(p.c_out, x.time(), "conv grad upstream")?;
    let mut grads = p.zeros_like();
    let gx = backward(x, p, upstream, &mut grads);
    Ok((gx, grads))
}

#[cfg(test)]
mod tests {
    use super::super::{grad_check, Params};
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_kernel() {
        let x = Grid::from_rows(&[vec![1.0, -2.0, 3.0], vec![0.5, 0.0, 4.0]]).unwrap();
        let y = conv1d_causal(&x, &ConvParams::identity(2)).unwrap();
        assert_eq!(y, x);
    }

    /// Direct index arithmetic: y[t] = sum_j w[j] * x[t - j d].
    fn oracle(x: &[f64], w: &[f64], d: usize) -> Vec<f64> {
        (0..x.len())
            .map(|t| {
                (0..w.len())
                    .filter(|&j| j * d <= t)
                    .map(|j| w[j] * x[t - j * d])
                    .sum()
            })
            .collect()
    }

    #[test]
    fn dilated_hand_example() {
        let x = Grid::from_rows(&[vec![1.0, 2.0, 3.0, 4.0]]).unwrap();
        let mut p = ConvParams::zeros(1, 1, 2, 2).unwrap();
        p.weight = vec![1.0, 1.0];
        let y = conv1d_causal(&x, &p).unwrap();
        assert_eq!(y.row(0), &[1.0, 2.0, 4.0, 6.0]);
        assert_eq!(oracle(&[1.0, 2.0, 3.0, 4.0], &[1.0, 1.0], 2), vec![1.0, 2.0, 4.0, 6.0]);
        // asymmetric taps against the oracle
        p.weight = vec![0.5, -3.0];
        let y = conv1d_causal(&x, &p).unwrap();
        assert_eq!(y.row(0), oracle(&[1.0, 2.0, 3.0, 4.0], &[0.5, -3.0], 2).as_slice());
    }

    #[test]
    fn future_perturbation_leaves_past() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = ConvParams::he_uniform(3, 4, 3, 2, &mut rng).unwrap();
        let x = Grid::from_vec(3, 12, (0..36).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let base = conv1d_causal(&x, &p).unwrap();
        for t in 0..11 {
            let mut xp = x.clone();
            for c in 0..3 {
                xp.set(c, t + 1, xp.get(c, t + 1) + 10.0);
            }
            let y = conv1d_causal(&xp, &p).unwrap();
            for c in 0..4 {
                assert_eq!(&y.row(c)[..=t], &base.row(c)[..=t]);
            }
        }
    }

    #[test]
    fn shape_errors() {
        let p = ConvParams::zeros(2, 1, 2, 1).unwrap();
        assert!(conv1d_causal(&Grid::zeros(3, 4), &p).is_err());
        assert!(conv1d_causal_grad(&Grid::zeros(2, 4), &p, &Grid::zeros(1, 5)).is_err());
        assert!(ConvParams::zeros(1, 1, 0, 1).is_err());
        assert!(ConvParams::zeros(1, 1, 1, 0).is_err());
    }

    #[test]
    fn zero_upstream_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = ConvParams::he_uniform(2, 3, 3, 2, &mut rng).unwrap();
        let x = Grid::from_vec(2, 8, (0..16).map(|i| i as f64).collect()).unwrap();
        let (gx, g) = conv1d_causal_grad(&x, &p, &Grid::zeros(3, 8)).unwrap();
        assert!(gx.data().iter().all(|&v| v == 0.0));
        assert!(g.flat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bias_grad_is_upstream_row_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = ConvParams::he_uniform(2, 3, 2, 1, &mut rng).unwrap();
        let x = Grid::from_vec(2, 5, (0..10).map(|i| i as f64 * 0.1).collect()).unwrap();
        let up = Grid::from_vec(3, 5, (0..15).map(|i| (i as f64).cos()).collect()).unwrap();
        let (_, g) = conv1d_causal_grad(&x, &p, &up).unwrap();
        for o in 0..3 {
            let s: f64 = up.row(o).iter().sum();
            assert!((g.bias[o] - s).abs() < 1e-12);
        }
    }

    #[test]
    fn finite_difference_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = ConvParams::he_uniform(2, 2, 3, 2, &mut rng).unwrap();
        let x = Grid::from_vec(2, 8, (0..16).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let r: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let up = Grid::from_vec(2, 8, r.clone()).unwrap();
        let loss = |y: &Grid| y.data().iter().zip(&r).map(|(a, b)| a * b).sum::<f64>();

        let (gx, gp) = conv1d_causal_grad(&x, &p, &up).unwrap();
        let rep = grad_check(x.data(), gx.data(), |v| {
            loss(&conv1d_causal(&Grid::from_vec(2, 8, v.to_vec()).unwrap(), &p).unwrap())
        }, 1e-5, 1e-4);
        assert!(rep.passed, "{rep:?}");
        let rep = grad_check(&p.flat(), &gp.flat(), |v| {
            let mut q = p.clone();
            q.set_flat(v).unwrap();
            loss(&conv1d_causal(&x, &q).unwrap())
        }, 1e-5, 1e-4);
        assert!(rep.passed, "{rep:?}");
    }
}
