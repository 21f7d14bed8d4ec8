use rand::Rng;

use super::{gemm, Mode, Real, Strides, Tensor};
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.99;

/// Stride-1 "same" 1-D convolution over time, cross-correlation convention
/// (no kernel flip). Pads `ceil((k-1)/2)` zeros on the left and
/// `floor((k-1)/2)` on the right.
///
/// `weight` is `[out][in][k]`, i.e. row `o` of an `out x (in*k)` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d<F> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub weight: Vec<F>,
    pub bias: Vec<F>,
}

#[derive(Debug, Clone)]
pub struct Conv1dCache<F> {
    col: Vec<F>,
    batch: usize,
    len: usize,
}

impl<F: Real> Conv1d<F> {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize) -> Result<Self> {
        if kernel == 0 || in_channels == 0 || out_channels == 0 {
            return Err(Error::Shape(format!(
                "conv {in_channels}->{out_channels} kernel {kernel}"
            )));
        }
        Ok(Self {
            in_channels,
            out_channels,
            kernel,
            weight: vec![F::zero(); out_channels * in_channels * kernel],
            bias: vec![F::zero(); out_channels],
        })
    }

    pub fn pad_left(&self) -> usize {
        self.kernel / 2
    }

    fn patch_rows(&self) -> usize {
        self.in_channels * self.kernel
    }

    /// `[in*k, batch*len]` patch matrix.
    fn im2col(&self, x: &[F], batch: usize, len: usize) -> Vec<F> {
        let n = batch * len;
        let pl = self.pad_left() as isize;
        let mut col = vec![F::zero(); self.patch_rows() * n];
        for ci in 0..self.in_channels {
            for kk in 0..self.kernel {
                let shift = kk as isize - pl;
                let row = &mut col[(ci * self.kernel + kk) * n..][..n];
                for b in 0..batch {
                    let src = &x[(ci * batch + b) * len..][..len];
                    let dst = &mut row[b * len..][..len];
                    // dst[t] = src[t + shift] where in range
                    let t0 = (-shift).max(0) as usize;
                    let t1 = (len as isize - shift).min(len as isize).max(0) as usize;
                    if t0 < t1 {
                        let s0 = (t0 as isize + shift) as usize;
                        dst[t0..t1].copy_from_slice(&src[s0..s0 + (t1 - t0)]);
                    }
                }
            }
        }
        col
    }

    fn check_input(&self, x: &Tensor<F>) -> Result<(usize, usize)> {
        let (c, b, t) = x.dims3()?;
        if c != self.in_channels {
            return Err(Error::Shape(format!(
                "conv expects {} input channels, got {c}",
                self.in_channels
            )));
        }
        Ok((b, t))
    }

    pub fn forward(&self, x: &Tensor<F>) -> Result<(Tensor<F>, Conv1dCache<F>)> {
        let (batch, len) = self.check_input(x)?;
        let n = batch * len;
        let col = self.im2col(x.data(), batch, len);
        let mut y = vec![F::zero(); self.out_channels * n];
        for (o, row) in y.chunks_mut(n.max(1)).enumerate().take(self.out_channels) {
            row.fill(self.bias[o]);
        }
        let pr = self.patch_rows();
        gemm(
            self.out_channels,
            pr,
            n,
            &self.weight,
            Strides::rm(pr),
            &col,
            Strides::rm(n),
            &mut y,
            Strides::rm(n),
            true,
        );
        Ok((
            Tensor::new(vec![self.out_channels, batch, len], y)?,
            Conv1dCache { col, batch, len },
        ))
    }

    fn check_grad(&self, cache: &Conv1dCache<F>, dy: &Tensor<F>) -> Result<(usize, usize)> {
        let (c, b, t) = dy.dims3()?;
        if c != self.out_channels || b != cache.batch || t != cache.len {
            return Err(Error::Shape(format!(
                "conv backward: gradient {:?} does not match forward",
                dy.shape()
            )));
        }
        Ok((b, t))
    }

    /// Parameter gradients only: `(d_weight, d_bias)`.
    pub fn backward_params(
        &self,
        cache: &Conv1dCache<F>,
        dy: &Tensor<F>,
    ) -> Result<(Vec<F>, Vec<F>)> {
        let (b, t) = self.check_grad(cache, dy)?;
        let n = b * t;
        let pr = self.patch_rows();
        let dyv = dy.data();
        let mut dw = vec![F::zero(); self.weight.len()];
        gemm(
            self.out_channels,
            n,
            pr,
            dyv,
            Strides::rm(n),
            &cache.col,
            Strides::tr(n),
            &mut dw,
            Strides::rm(pr),
            false,
        );
        let db: Vec<F> = dyv.chunks(n.max(1)).map(|r| r.iter().copied().sum()).collect();
        Ok((dw, db))
    }

    /// Returns `(d_input, d_weight, d_bias)`.
    pub fn backward(
        &self,
        cache: &Conv1dCache<F>,
        dy: &Tensor<F>,
    ) -> Result<(Tensor<F>, Vec<F>, Vec<F>)> {
        let (dw, db) = self.backward_params(cache, dy)?;
        let (b, t) = self.check_grad(cache, dy)?;
        let n = b * t;
        let pr = self.patch_rows();
        let dyv = dy.data();
        let mut dcol = vec![F::zero(); pr * n];
        gemm(
            pr,
            self.out_channels,
            n,
            &self.weight,
            Strides::tr(pr),
            dyv,
            Strides::rm(n),
            &mut dcol,
            Strides::rm(n),
            false,
        );

        let pl = self.pad_left() as isize;
        let mut dx = vec![F::zero(); self.in_channels * n];
        for ci in 0..self.in_channels {
            for kk in 0..self.kernel {
                let shift = kk as isize - pl;
                let row = &dcol[(ci * self.kernel + kk) * n..][..n];
                for bi in 0..b {
                    let src = &row[bi * t..][..t];
                    let dst = &mut dx[(ci * b + bi) * t..][..t];
                    let t0 = (-shift).max(0) as usize;
                    let t1 = (t as isize - shift).min(t as isize).max(0) as usize;
                    for tt in t0..t1 {
                        dst[(tt as isize + shift) as usize] += src[tt];
                    }
                }
            }
        }
        Ok((Tensor::new(vec![self.in_channels, b, t], dx)?, dw, db))
    }
}

/// Per-channel batch normalization over `(batch, time)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm1d<F> {
    pub gamma: Vec<F>,
    pub beta: Vec<F>,
    pub running_mean: Vec<F>,
    pub running_var: Vec<F>,
    pub eps: f64,
    pub momentum: f64,
}

#[derive(Debug, Clone)]
pub struct BatchNormCache<F> {
    xhat: Vec<F>,
    inv_std: Vec<F>,
    mode: Mode,
    batch_stats: Vec<(F, F)>,
}

impl<F: Real> BatchNorm1d<F> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: vec![F::one(); channels],
            beta: vec![F::zero(); channels],
            running_mean: vec![F::zero(); channels],
            running_var: vec![F::one(); channels],
            eps: BN_EPS,
            momentum: BN_MOMENTUM,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn check(&self, x: &Tensor<F>) -> Result<(usize, usize, usize)> {
        let (c, b, t) = x.dims3()?;
        if c != self.channels() {
            return Err(Error::Shape(format!(
                "batch norm has {} channels, input {c}",
                self.channels()
            )));
        }
        Ok((c, b, t))
    }

    /// Train mode normalizes with batch statistics, infer mode with the
    /// running estimates. Running estimates are not touched here; see
    /// [`BatchNorm1d::update_running`].
    pub fn forward(&self, x: &Tensor<F>, mode: Mode) -> Result<(Tensor<F>, BatchNormCache<F>)> {
        let (c, b, t) = self.check(x)?;
        let n = b * t;
        let eps = F::lit(self.eps);
        let mut y = vec![F::zero(); x.len()];
        let mut xhat = vec![F::zero(); x.len()];
        let mut inv_std = vec![F::zero(); c];
        let mut batch_stats = Vec::new();
        if mode == Mode::Train && b < 2 {
            return Err(Error::BatchTooSmall(b));
        }
        let nf = F::from_usize(n).expect("count");
        for ch in 0..c {
            let row = &x.data()[ch * n..][..n];
            let (mean, var) = match mode {
                Mode::Train => {
                    let mean = row.iter().copied().sum::<F>() / nf;
                    let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / nf;
                    batch_stats.push((mean, var * nf / (nf - F::one())));
                    (mean, var)
                }
                Mode::Infer => (self.running_mean[ch], self.running_var[ch]),
            };
            let is = F::one() / (var + eps).sqrt();
            inv_std[ch] = is;
            for i in 0..n {
                let h = (row[i] - mean) * is;
                xhat[ch * n + i] = h;
                y[ch * n + i] = self.gamma[ch] * h + self.beta[ch];
            }
        }
        Ok((
            Tensor::new(x.shape().to_vec(), y)?,
            BatchNormCache {
                xhat,
                inv_std,
                mode,
                batch_stats,
            },
        ))
    }

    /// Fold a train-mode batch's mean and unbiased variance into the running
    /// estimates with the configured momentum.
    pub fn update_running(&mut self, cache: &BatchNormCache<F>) {
        let mom = F::lit(self.momentum);
        for (ch, &(mean, var)) in cache.batch_stats.iter().enumerate() {
            self.running_mean[ch] = mom * self.running_mean[ch] + (F::one() - mom) * mean;
            self.running_var[ch] = mom * self.running_var[ch] + (F::one() - mom) * var;
        }
    }

    /// Returns `(d_input, d_gamma, d_beta)`.
    pub fn backward(
        &self,
        cache: &BatchNormCache<F>,
        dy: &Tensor<F>,
    ) -> Result<(Tensor<F>, Vec<F>, Vec<F>)> {
        let (c, b, t) = self.check(dy)?;
        let n = b * t;
        if cache.xhat.len() != dy.len() {
            return Err(Error::Shape("batch norm backward: cache mismatch".into()));
        }
        let nf = F::from_usize(n).expect("count");
        let mut dx = vec![F::zero(); dy.len()];
        let mut dgamma = vec![F::zero(); c];
        let mut dbeta = vec![F::zero(); c];
        for ch in 0..c {
            let g = &dy.data()[ch * n..][..n];
            let h = &cache.xhat[ch * n..][..n];
            let sum_g: F = g.iter().copied().sum();
            let sum_gh: F = g.iter().zip(h).map(|(&a, &b)| a * b).sum();
            dgamma[ch] = sum_gh;
            dbeta[ch] = sum_g;
            let scale = self.gamma[ch] * cache.inv_std[ch];
            let out = &mut dx[ch * n..][..n];
            match cache.mode {
                Mode::Train => {
                    for i in 0..n {
                        out[i] = scale / nf * (nf * g[i] - sum_g - h[i] * sum_gh);
                    }
                }
                Mode::Infer => {
                    for i in 0..n {
                        out[i] = scale * g[i];
                    }
                }
            }
        }
        Ok((Tensor::new(dy.shape().to_vec(), dx)?, dgamma, dbeta))
    }
}

pub fn relu<F: Real>(x: &Tensor<F>) -> Tensor<F> {
    x.map(|v| v.max(F::zero()))
}

/// Gradient of ReLU given its input; the subgradient at 0 is 0.
pub fn relu_backward<F: Real>(x: &Tensor<F>, dy: &Tensor<F>) -> Result<Tensor<F>> {
    if x.shape() != dy.shape() {
        return Err(Error::Shape("relu backward shape mismatch".into()));
    }
    let data = x
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&xv, &g)| if xv > F::zero() { g } else { F::zero() })
        .collect();
    Tensor::new(dy.shape().to_vec(), data)
}

/// Non-overlapping max over time. Trailing frames that do not fill a whole
/// window are dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaxPool1d {
    width: usize,
}

#[derive(Debug, Clone)]
pub struct MaxPoolCache {
    argmax: Vec<usize>,
    in_shape: Vec<usize>,
}

impl MaxPool1d {
    pub fn new(width: usize) -> Result<Self> {
        if width < 1 {
            return Err(Error::InvalidPool(width));
        }
        Ok(Self { width })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn forward<F: Real>(&self, x: &Tensor<F>) -> Result<(Tensor<F>, MaxPoolCache)> {
        let (c, b, t) = x.dims3()?;
        let out_t = t / self.width;
        if out_t == 0 {
            return Err(Error::Shape(format!(
                "pool width {} exceeds {t} frames",
                self.width
            )));
        }
        let rows = c * b;
        let mut y = Vec::with_capacity(rows * out_t);
        let mut argmax = Vec::with_capacity(rows * out_t);
        for r in 0..rows {
            let row = &x.data()[r * t..][..t];
            for o in 0..out_t {
                let start = o * self.width;
                let mut best = start;
                for i in start + 1..start + self.width {
                    if row[i] > row[best] {
                        best = i;
                    }
                }
                y.push(row[best]);
                argmax.push(r * t + best);
            }
        }
        Ok((
            Tensor::new(vec![c, b, out_t], y)?,
            MaxPoolCache {
                argmax,
                in_shape: x.shape().to_vec(),
            },
        ))
    }

    pub fn backward<F: Real>(&self, cache: &MaxPoolCache, dy: &Tensor<F>) -> Result<Tensor<F>> {
        if dy.len() != cache.argmax.len() {
            return Err(Error::Shape("pool backward: gradient size mismatch".into()));
        }
        let mut dx = Tensor::zeros(cache.in_shape.clone());
        for (&idx, &g) in cache.argmax.iter().zip(dy.data()) {
            dx.data_mut()[idx] += g;
        }
        Ok(dx)
    }
}

/// Affine map on `[in_features, batch]` columns; `weight` is `[out][in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<F> {
    pub in_features: usize,
    pub out_features: usize,
    pub weight: Vec<F>,
    pub bias: Vec<F>,
}

#[derive(Debug, Clone)]
pub struct DenseCache<F> {
    input: Tensor<F>,
}

impl<F: Real> Dense<F> {
    pub fn new(in_features: usize, out_features: usize) -> Self {
        Self {
            in_features,
            out_features,
            weight: vec![F::zero(); in_features * out_features],
            bias: vec![F::zero(); out_features],
        }
    }

    pub fn forward(&self, x: &Tensor<F>) -> Result<(Tensor<F>, DenseCache<F>)> {
        let batch = match *x.shape() {
            [i, b] if i == self.in_features => b,
            _ => {
                return Err(Error::Shape(format!(
                    "dense expects [{}, batch], got {:?}",
                    self.in_features,
                    x.shape()
                )))
            }
        };
        let mut y = vec![F::zero(); self.out_features * batch];
        for (o, row) in y.chunks_mut(batch.max(1)).enumerate().take(self.out_features) {
            row.fill(self.bias[o]);
        }
        gemm(
            self.out_features,
            self.in_features,
            batch,
            &self.weight,
            Strides::rm(self.in_features),
            x.data(),
            Strides::rm(batch),
            &mut y,
            Strides::rm(batch),
            true,
        );
        Ok((
            Tensor::new(vec![self.out_features, batch], y)?,
            DenseCache { input: x.clone() },
        ))
    }

    /// Returns `(d_input, d_weight, d_bias)`.
    pub fn backward(
        &self,
        cache: &DenseCache<F>,
        dy: &Tensor<F>,
    ) -> Result<(Tensor<F>, Vec<F>, Vec<F>)> {
        let batch = cache.input.shape()[1];
        if dy.shape() != [self.out_features, batch] {
            return Err(Error::Shape(format!(
                "dense backward: gradient {:?}",
                dy.shape()
            )));
        }
        let mut dw = vec![F::zero(); self.weight.len()];
        gemm(
            self.out_features,
            batch,
            self.in_features,
            dy.data(),
            Strides::rm(batch),
            cache.input.data(),
            Strides::tr(batch),
            &mut dw,
            Strides::rm(self.in_features),
            false,
        );
        let db = dy
            .data()
            .chunks(batch.max(1))
            .map(|r| r.iter().copied().sum())
            .collect();
        let mut dx = vec![F::zero(); self.in_features * batch];
        gemm(
            self.in_features,
            self.out_features,
            batch,
            &self.weight,
            Strides::tr(self.in_features),
            dy.data(),
            Strides::rm(batch),
            &mut dx,
            Strides::rm(batch),
            false,
        );
        Ok((Tensor::new(vec![self.in_features, batch], dx)?, dw, db))
    }
}

/// Inverted dropout: survivors are scaled by `1/(1-p)` in train mode; infer
/// mode is the identity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dropout {
    p: f64,
}

impl Dropout {
    pub fn new(p: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout rate {p} outside [0, 1)")));
        }
        Ok(Self { p })
    }

    pub fn rate(&self) -> f64 {
        self.p
    }

    /// Per-element multiplier drawn from `rng`: `0` or `1/(1-p)`.
    pub fn mask<F: Real, R: Rng + ?Sized>(&self, len: usize, rng: &mut R) -> Vec<F> {
        let keep = 1.0 - self.p;
        let scale = F::lit(1.0 / keep);
        (0..len)
            .map(|_| {
                if rng.random::<f64>() < keep {
                    scale
                } else {
                    F::zero()
                }
            })
            .collect()
    }

    /// Returns the output and the mask applied (`None` in infer mode).
    pub fn forward<F: Real, R: Rng + ?Sized>(
        &self,
        x: &Tensor<F>,
        mode: Mode,
        rng: &mut R,
    ) -> (Tensor<F>, Option<Vec<F>>) {
        match mode {
            Mode::Infer => (x.clone(), None),
            Mode::Train => {
                let mask = self.mask::<F, R>(x.len(), rng);
                (Self::apply_mask(x, &mask), Some(mask))
            }
        }
    }

    pub fn apply_mask<F: Real>(x: &Tensor<F>, mask: &[F]) -> Tensor<F> {
        let data = x.data().iter().zip(mask).map(|(&a, &m)| a * m).collect();
        Tensor::new(x.shape().to_vec(), data).expect("mask length matches")
    }

    pub fn backward<F: Real>(dy: &Tensor<F>, mask: Option<&[F]>) -> Tensor<F> {
        match mask {
            None => dy.clone(),
            Some(m) => Self::apply_mask(dy, m),
        }
    }
}
