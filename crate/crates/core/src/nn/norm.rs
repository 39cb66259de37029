use serde::{Deserialize, Serialize};

use super::{Grid, NnError, Params};

/// Per-time-step normalisation across channels with per-channel gain and offset.
///
/// Each time step is normalised on its own, so the layer is causal and does
/// not widen the receptive field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelNorm {
    pub gain: Vec<f64>,
    pub offset: Vec<f64>,
    pub eps: f64,
}

pub const NORM_EPS: f64 = 1e-5;

impl ChannelNorm {
    pub fn new(channels: usize) -> Self {
        Self {
            gain: vec![1.0; channels],
            offset: vec![0.0; channels],
            eps: NORM_EPS,
        }
    }

    pub fn channels(&self) -> usize {
        self.gain.len()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            gain: vec![0.0; self.gain.len()],
            offset: vec![0.0; self.offset.len()],
            eps: self.eps,
        }
    }
}

impl Params for ChannelNorm {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![&self.gain, &self.offset]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.gain, &mut self.offset]
    }
}

/// Normalised activations and per-step inverse deviations kept for backward.
#[derive(Debug, Clone)]
pub struct NormCache {
    pub xhat: Grid,
    pub inv_std: Vec<f64>,
}

pub fn channel_norm(x: &Grid, n: &ChannelNorm) -> Result<(Grid, NormCache), NnError> {
    if x.channels() != n.channels() {
        return Err(NnError::Shape(format!(
            "norm input has {} channels, layer expects {}",
            x.channels(),
            n.channels()
        )));
    }
    Ok(forward(x, n))
}

pub(crate) fn forward(x: &Grid, n: &ChannelNorm) -> (Grid, NormCache) {
    let (c_len, t_len) = x.shape();
    let inv_c = 1.0 / c_len as f64;
    let mut mean = vec![0.0; t_len];
    for c in 0..c_len {
        for (m, v) in mean.iter_mut().zip(x.row(c)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m *= inv_c);
    let mut var = vec![0.0; t_len];
    for c in 0..c_len {
        for ((s, v), m) in var.iter_mut().zip(x.row(c)).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let inv_std: Vec<f64> = var.iter().map(|s| 1.0 / (s * inv_c + n.eps).sqrt()).collect();
    let mut xhat = Grid::zeros(c_len, t_len);
    let mut y = Grid::zeros(c_len, t_len);
    for c in 0..c_len {
        let (g, b) = (n.gain[c], n.offset[c]);
        let xr = x.row(c);
        let hr = xhat.row_mut(c);
        for t in 0..t_len {
            hr[t] = (xr[t] - mean[t]) * inv_std[t];
        }
        for (yv, h) in y.row_mut(c).iter_mut().zip(xhat.row(c)) {
            *yv = g * h + b;
        }
    }
    y.debug_check("channel norm");
    (y, NormCache { xhat, inv_std })
}

/// Accumulates gain/offset gradients into `grads`; returns the input gradient.
pub(crate) fn backward(cache: &NormCache, n: &ChannelNorm, up: &Grid, grads: &mut ChannelNorm) -> Grid {
    let (c_len, t_len) = up.shape();
    let inv_c = 1.0 / c_len as f64;
    let mut sum_d = vec![0.0; t_len];
    let mut sum_dx = vec![0.0; t_len];
    for c in 0..c_len {
        let g = n.gain[c];
        let ur = up.row(c);
        let hr = cache.xhat.row(c);
        let mut dg = 0.0;
        let mut db = 0.0;
        for t in 0..t_len {
            dg += ur[t] * hr[t];
            db += ur[t];
            let d = ur[t] * g;
            sum_d[t] += d;
            sum_dx[t] += d * hr[t];
        }
        grads.gain[c] += dg;
        grads.offset[c] += db;
    }
    let mut gx = Grid::zeros(c_len, t_len);
    for c in 0..c_len {
        let g = n.gain[c];
        let ur = up.row(c);
        let hr = cache.xhat.row(c);
        let out = gx.row_mut(c);
        for t in 0..t_len {
            let d = ur[t] * g;
            out[t] = cache.inv_std[t] * (d - inv_c * sum_d[t] - hr[t] * inv_c * sum_dx[t]);
        }
    }
    gx.debug_check("channel norm backward");
    gx
}

/// Returns `(grad_x, grads)` for a forward pass cached in `cache`.
pub fn channel_norm_grad(cache: &NormCache, n: &ChannelNorm, upstream: &Grid) -> Result<(Grid, ChannelNorm), NnError> {
    upstream.expect_shape(cache.xhat.channels(), cache.xhat.time(), "norm grad upstream")?;
    let mut grads = n.zeros_like();
    let gx = backward(cache, n, upstream, &mut grads);
    Ok((gx, grads))
}

pub fn relu(x: &Grid) -> Grid {
    let mut y = x.clone();
    y.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    y
}

/// Gradient through ReLU given its output (or input; the sign test is the same).
pub fn relu_grad(activated: &Grid, upstream: &Grid) -> Grid {
    let mut g = upstream.clone();
    for (gv, a) in g.data_mut().iter_mut().zip(activated.data()) {
        if *a <= 0.0 {
            *gv = 0.0;
        }
    }
    g
}

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Derivative of [`softplus`], the logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::super::grad_check;
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn relu_values() {
        let x = Grid::from_rows(&[vec![-1.0, 0.0, 2.0]]).unwrap();
        assert_eq!(relu(&x).row(0), &[0.0, 0.0, 2.0]);
        let g = relu_grad(&relu(&x), &Grid::from_rows(&[vec![5.0, 5.0, 5.0]]).unwrap());
        assert_eq!(g.row(0), &[0.0, 0.0, 5.0]);
    }

    #[test]
    fn constant_channel_vector_normalises_to_zero() {
        let x = Grid::from_rows(&[vec![3.0, -1.0], vec![3.0, -1.0], vec![3.0, -1.0]]).unwrap();
        let (y, cache) = channel_norm(&x, &ChannelNorm::new(3)).unwrap();
        assert!(cache.xhat.data().iter().all(|&v| v == 0.0));
        assert!(y.data().iter().all(|&v| v == 0.0));
        let mut n = ChannelNorm::new(3);
        n.offset = vec![1.0, 2.0, 3.0];
        let (y, _) = channel_norm(&x, &n).unwrap();
        assert_eq!(y.row(2), &[3.0, 3.0]);
    }

    #[test]
    fn steps_are_independent() {
        let x = Grid::from_rows(&[vec![1.0, 10.0], vec![2.0, -4.0]]).unwrap();
        let (y, _) = channel_norm(&x, &ChannelNorm::new(2)).unwrap();
        let mut x2 = x.clone();
        x2.set(0, 1, 99.0);
        let (y2, _) = channel_norm(&x2, &ChannelNorm::new(2)).unwrap();
        assert_eq!(y.get(0, 0), y2.get(0, 0));
        assert_eq!(y.get(1, 0), y2.get(1, 0));
    }

    #[test]
    fn norm_grad_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (c, t) = (4, 6);
        let x = Grid::from_vec(c, t, (0..c * t).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
        let mut n = ChannelNorm::new(c);
        for g in &mut n.gain {
            *g = rng.random_range(0.5..1.5);
        }
        for b in &mut n.offset {
            *b = rng.random_range(-0.5..0.5);
        }
        let r: Vec<f64> = (0..c * t).map(|_| rng.random_range(-1.0..1.0)).collect();
        let up = Grid::from_vec(c, t, r.clone()).unwrap();
        let loss = |y: &Grid| y.data().iter().zip(&r).map(|(a, b)| a * b).sum::<f64>();
        let (_, cache) = channel_norm(&x, &n).unwrap();
        let (gx, gn) = channel_norm_grad(&cache, &n, &up).unwrap();
        let rep = grad_check(x.data(), gx.data(), |v| {
            loss(&channel_norm(&Grid::from_vec(c, t, v.to_vec()).unwrap(), &n).unwrap().0)
        }, 1e-5, 1e-4);
        assert!(rep.passed, "{rep:?}");
        let rep = grad_check(&n.flat(), &gn.flat(), |v| {
            let mut m = n.clone();
            m.set_flat(v).unwrap();
            loss(&channel_norm(&x, &m).unwrap().0)
        }, 1e-5, 1e-4);
        assert!(rep.passed, "{rep:?}");
    }

    #[test]
    fn softplus_is_positive_and_stable() {
        for x in [-100.0, -5.0, 0.0, 5.0, 100.0] {
            assert!(softplus(x) > 0.0 && softplus(x).is_finite());
        }
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
    }
}
