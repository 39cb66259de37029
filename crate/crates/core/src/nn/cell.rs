use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{conv, norm, ChannelNorm, ConvParams, Grid, NnError, Params};

/// Two stacked `conv -> norm -> ReLU` stages plus a residual path.
///
/// `y = stack(x) + skip(x)` where `skip` is the identity when channel counts
/// match and a 1x1 projection otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualCell {
    pub conv1: ConvParams,
    pub norm1: ChannelNorm,
    pub conv2: ConvParams,
    pub norm2: ChannelNorm,
    pub skip: Option<ConvParams>,
}

impl ResidualCell {
    pub fn new<R: Rng>(
        c_in: usize,
        c_out: usize,
        kernel: usize,
        dilation: usize,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        Self::with_dilations(c_in, c_out, kernel, (dilation, dilation), rng)
    }

    /// Cell whose two convolutions use different dilations.
    pub fn with_dilations<R: Rng>(
        c_in: usize,
        c_out: usize,
        kernel: usize,
        (d1, d2): (usize, usize),
        rng: &mut R,
    ) -> Result<Self, NnError> {
        let conv1 = ConvParams::he_uniform(c_in, c_out, kernel, d1, rng)?;
        let conv2 = ConvParams::he_uniform(c_out, c_out, kernel, d2, rng)?;
        let skip = if c_in != c_out {
            Some(ConvParams::he_uniform(c_in, c_out, 1, 1, rng)?)
        } else {
            None
        };
        Ok(Self {
            conv1,
            norm1: ChannelNorm::new(c_out),
            conv2,
            norm2: ChannelNorm::new(c_out),
            skip,
        })
    }

    /// Checks internal shape consistency and the skip-projection rule.
    pub fn validate(&self) -> Result<(), NnError> {
        let c_in = self.conv1.c_in;
        let c_out = self.conv1.c_out;
        let bad = |m: String| Err(NnError::Config(m));
        if self.conv2.c_in != c_out || self.conv2.c_out != c_out {
            return bad(format!(
                "second conv is {}->{}, expected {c_out}->{c_out}",
                self.conv2.c_in, self.conv2.c_out
            ));
        }
        if self.norm1.channels() != c_out || self.norm2.channels() != c_out {
            return bad("norm width differs from conv output".into());
        }
        match (&self.skip, c_in == c_out) {
            (None, true) => Ok(()),
            (Some(s), false) if s.c_in == c_in && s.c_out == c_out && s.kernel == 1 => Ok(()),
            (Some(_), true) => bad("skip projection present although channels match".into()),
            _ => bad(format!("cell {c_in}->{c_out} needs a 1x1 skip projection")),
        }
    }

    pub fn c_in(&self) -> usize {
        self.conv1.c_in
    }

    pub fn c_out(&self) -> usize {
        self.conv1.c_out
    }

    pub fn dilation(&self) -> usize {
        self.conv1.dilation
    }

    /// Past positions one application of the cell can reach.
    pub fn lookback(&self) -> usize {
        self.conv1.lookback() + self.conv2.lookback()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            conv1: self.conv1.zeros_like(),
            norm1: self.norm1.zeros_like(),
            conv2: self.conv2.zeros_like(),
            norm2: self.norm2.zeros_like(),
            skip: self.skip.as_ref().map(ConvParams::zeros_like),
        }
    }
}

impl Params for ResidualCell {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut v = self.conv1.tensors();
        v.extend(self.norm1.tensors());
        v.extend(self.conv2.tensors());
        v.extend(self.norm2.tensors());
        if let Some(s) = &self.skip {
            v.extend(s.tensors());
        }
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.conv1.tensors_mut();
        v.extend(self.norm1.tensors_mut());
        v.extend(self.conv2.tensors_mut());
        v.extend(self.norm2.tensors_mut());
        if let Some(s) = &mut self.skip {
            v.extend(s.tensors_mut());
        }
        v
    }
}

/// Intermediate activations of one cell application.
#[derive(Debug, Clone)]
pub struct CellCache {
    x: Grid,
    n1: norm::NormCache,
    a1: Grid,
    n2: norm::NormCache,
    a2: Grid,
}

pub fn residual_cell_forward(x: &Grid, cell: &ResidualCell) -> Result<(Grid, CellCache), NnError> {
    if x.channels() != cell.c_in() {
        return Err(NnError::Shape(format!(
            "cell input has {} channels, cell expects {}",
            x.channels(),
            cell.c_in()
        )));
    }
    Ok(forward(x, cell))
}

pub(crate) fn forward(x: &Grid, cell: &ResidualCell) -> (Grid, CellCache) {
    let c1 = conv::forward(x, &cell.conv1);
    let (h1, n1) = norm::forward(&c1, &cell.norm1);
    let a1 = norm::relu(&h1);
    let c2 = conv::forward(&a1, &cell.conv2);
    let (h2, n2) = norm::forward(&c2, &cell.norm2);
    let a2 = norm::relu(&h2);
    let mut y = match &cell.skip {
        Some(s) => conv::forward(x, s),
        None => x.clone(),
    };
    y.add_assign(&a2);
    y.debug_check("residual cell");
    (
        y,
        CellCache {
            x: x.clone(),
            n1,
            a1,
            n2,
            a2,
        },
    )
}

pub(crate) fn backward(cache: &CellCache, cell: &ResidualCell, up: &Grid, grads: &mut ResidualCell) -> Grid {
    let d_h2 = norm::relu_grad(&cache.a2, up);
    let d_c2 = norm::backward(&cache.n2, &cell.norm2, &d_h2, &mut grads.norm2);
    let d_a1 = conv::backward(&cache.a1, &cell.conv2, &d_c2, &mut grads.conv2);
    let d_h1 = norm::relu_grad(&cache.a1, &d_a1);
    let d_c1 = norm::backward(&cache.n1, &cell.norm1, &d_h1, &mut grads.norm1);
    let mut dx = conv::backward(&cache.x, &cell.conv1, &d_c1, &mut grads.conv1);
    match (&cell.skip, &mut grads.skip) {
        (Some(s), Some(gs)) => dx.add_assign(&conv::backward(&cache.x, s, up, gs)),
        _ => dx.add_assign(up),
    }
    dx
}

/// Returns `(grad_x, grads)` for a forward pass cached in `cache`.
pub fn residual_cell_grad(cache: &CellCache, cell: &ResidualCell, upstream: &Grid) -> Result<(Grid, ResidualCell), NnError> {
    upstream.expect_shape(cell.c_out(), cache.x.time(), "cell grad upstream")?;
    let mut grads = cell.zeros_like();
    let dx = backward(cache, cell, upstream, &mut grads);
    Ok((dx, grads))
}

#[cfg(test)]
mod tests {
    use super::super::grad_check;
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_grid(rng: &mut ChaCha8Rng, c: usize, t: usize) -> Grid {
        Grid::from_vec(c, t, (0..c * t).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn perturb_norms(cell: &mut ResidualCell, rng: &mut ChaCha8Rng) {
        for n in [&mut cell.norm1, &mut cell.norm2] {
            for g in &mut n.gain {
                *g = rng.random_range(0.5..1.5);
            }
            for b in &mut n.offset {
                *b = rng.random_range(-0.3..0.3);
            }
        }
    }

    #[test]
    fn zero_stack_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut cell = ResidualCell::new(3, 3, 2, 2, &mut rng).unwrap();
        cell.conv1 = cell.conv1.zeros_like();
        cell.conv2 = cell.conv2.zeros_like();
        let x = random_grid(&mut rng, 3, 9);
        let (y, _) = residual_cell_forward(&x, &cell).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn skip_projection_rule() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let same = ResidualCell::new(4, 4, 2, 1, &mut rng).unwrap();
        assert!(same.skip.is_none());
        same.validate().unwrap();
        let wider = ResidualCell::new(2, 4, 2, 1, &mut rng).unwrap();
        assert!(wider.skip.is_some());
        wider.validate().unwrap();
        let mut broken = wider.clone();
        broken.skip = None;
        assert!(broken.validate().is_err());
        let mut broken = same.clone();
        broken.skip = Some(ConvParams::identity(4));
        assert!(broken.validate().is_err());
        assert!(residual_cell_forward(&Grid::zeros(3, 5), &same).is_err());
    }

    #[test]
    fn gradient_check_with_and_without_projection() {
        for (c_in, c_out, seed) in [(3, 3, 11u64), (2, 3, 12)] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut cell = ResidualCell::new(c_in, c_out, 2, 2, &mut rng).unwrap();
            perturb_norms(&mut cell, &mut rng);
            let t = 10;
            let x = random_grid(&mut rng, c_in, t);
            let r = random_grid(&mut rng, c_out, t);
            let loss = |y: &Grid| y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum::<f64>();
            let (_, cache) = residual_cell_forward(&x, &cell).unwrap();
            let (gx, gc) = residual_cell_grad(&cache, &cell, &r).unwrap();

            let rep = grad_check(x.data(), gx.data(), |v| {
                let xv = Grid::from_vec(c_in, t, v.to_vec()).unwrap();
                loss(&residual_cell_forward(&xv, &cell).unwrap().0)
            }, 1e-5, 1e-4);
            assert!(rep.passed, "input grads {rep:?}");
            let rep = grad_check(&cell.flat(), &gc.flat(), |v| {
                let mut c = cell.clone();
                c.set_flat(v).unwrap();
                loss(&residual_cell_forward(&x, &c).unwrap().0)
            }, 1e-5, 1e-4);
            assert!(rep.passed, "param grads {rep:?}");
        }
    }

    #[test]
    fn future_inputs_do_not_reach_past_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cell = ResidualCell::new(3, 3, 2, 4, &mut rng).unwrap();
        let x = random_grid(&mut rng, 3, 16);
        let (base, _) = residual_cell_forward(&x, &cell).unwrap();
        for t in 0..15 {
            let mut xp = x.clone();
            xp.set(1, t + 1, 5.0);
            let (y, _) = residual_cell_forward(&xp, &cell).unwrap();
            for c in 0..3 {
                assert_eq!(&y.row(c)[..=t], &base.row(c)[..=t]);
            }
        }
        assert_eq!(cell.lookback(), 8);
    }
}
