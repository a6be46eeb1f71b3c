//! The per-region style network: a small U-Net with explicit forward and
//! backward passes over im2col + GEMM.
//!
//! Layout (channels `[16, 32, 64]`, three stages):
//!
//! ```text
//! stem   3x3   3 -> 16   @ H     IN + LeakyReLU            (skip e0)
//! down1  3x3/2 16 -> 32  @ H/2   IN + LeakyReLU            (skip e1)
//! down2  3x3/2 32 -> 64  @ H/4   IN + LeakyReLU            (skip e2)
//! down3  3x3/2 64 -> 64  @ H/8   IN + LeakyReLU
//! up1    3x3   64 -> 64  @ H/8   IN + LeakyReLU, x2 nearest, + e2
//! up2    3x3   64 -> 32  @ H/4   IN + LeakyReLU, x2 nearest, + e1
//! up3    3x3   32 -> 16  @ H/2   IN + LeakyReLU, x2 nearest, + e0
//! head   1x1   16 -> 3   @ H     sigmoid
//! ```
//!
//! Up-stage convolutions run before upsampling, at the lower resolution.

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LEAKY_SLOPE: f64 = 0.2;
const NORM_EPS: f64 = 1e-5;

/// Floating point element the network can run in.
pub trait Scalar: Float + Default + Send + Sync + std::fmt::Debug + 'static {
    /// `C = alpha * A · B + beta * C` on strided matrices.
    ///
    /// # Safety
    /// Pointers and strides must describe valid `m x k`, `k x n` and `m x n` matrices.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn lit(v: f64) -> Self {
        Self::from(v).expect("literal fits")
    }
}

impl Scalar for f32 {
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Scalar for f64 {
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Row-major `C (m x n) = op(A) · op(B) + beta * C`, where `op` optionally transposes.
/// `a` is stored as `m x k` (or `k x m` when `ta`), `b` as `k x n` (or `n x k` when `tb`).
#[allow(clippy::too_many_arguments)]
fn matmul<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    ta: bool,
    b: &[T],
    tb: bool,
    c: &mut [T],
    beta: T,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above bound every index the strides can reach.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        )
    }
}

/// Channel-major feature map for a single image.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap<T> {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> FeatureMap<T> {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![T::zero(); channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), channels * height * width);
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    fn area(&self) -> usize {
        self.height * self.width
    }
}

/// Architecture of the style network.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StyleNetworkSpec {
    pub downsample_stages: usize,
    pub upsample_stages: usize,
    pub channels: Vec<usize>,
}

impl Default for StyleNetworkSpec {
    fn default() -> Self {
        Self {
            downsample_stages: 3,
            upsample_stages: 3,
            channels: vec![16, 32, 64],
        }
    }
}

impl StyleNetworkSpec {
    pub fn validate(&self) -> Result<()> {
        if self.downsample_stages == 0 || self.downsample_stages != self.upsample_stages {
            return Err(Error::Config(format!(
                "U-Net needs matching non-zero stage counts, got {} down / {} up",
                self.downsample_stages, self.upsample_stages
            )));
        }
        if self.channels.is_empty() || self.channels.contains(&0) {
            return Err(Error::Config("channel list must be non-empty and positive".into()));
        }
        Ok(())
    }

    /// Input side lengths must be divisible by this.
    pub fn stride(&self) -> usize {
        1 << self.downsample_stages
    }

    /// Channels of encoder level `i` (0 = full resolution).
    fn level_channels(&self, i: usize) -> usize {
        self.channels[i.min(self.channels.len() - 1)]
    }
}

#[derive(Clone, Copy, Debug)]
struct ConvSlot {
    cin: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    weight: usize,
    bias: usize,
}

impl ConvSlot {
    fn fan_in(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.k) / self.stride + 1,
            (w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }
}

/// Style network with its parameters in one flat buffer.
#[derive(Clone, Debug)]
pub struct StyleNetwork<T> {
    spec: StyleNetworkSpec,
    convs: Vec<ConvSlot>,
    params: Vec<T>,
}

struct ConvCache<T> {
    cols: Vec<T>,
    in_dims: (usize, usize, usize),
    out_dims: (usize, usize),
}

struct NormCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
}

/// Activations kept from a forward pass for the backward pass.
pub struct Tape<T> {
    convs: Vec<ConvCache<T>>,
    norms: Vec<NormCache<T>>,
    output: FeatureMap<T>,
}

impl<T> Tape<T> {
    pub fn output(&self) -> &FeatureMap<T> {
        &self.output
    }
}

impl<T: Scalar> StyleNetwork<T> {
    /// Fresh network with PyTorch-style uniform fan-in initialization.
    pub fn new(spec: StyleNetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let n = spec.downsample_stages;
        let mut convs = Vec::new();
        let mut offset = 0;
        let mut push = |cin, cout, k, stride, pad| {
            let weight = offset;
            let bias = weight + cout * cin * k * k;
            offset = bias + cout;
            convs.push(ConvSlot {
                cin,
                cout,
                k,
                stride,
                pad,
                weight,
                bias,
            });
        };
        push(3, spec.level_channels(0), 3, 1, 1);
        for i in 1..=n {
            push(spec.level_channels(i - 1), spec.level_channels(i), 3, 2, 1);
        }
        for i in (0..n).rev() {
            push(spec.level_channels(i + 1), spec.level_channels(i), 3, 1, 1);
        }
        push(spec.level_channels(0), 3, 1, 1, 0);

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![T::zero(); offset];
        for slot in &convs {
            let bound = 1.0 / (slot.fan_in() as f64).sqrt();
            for p in &mut params[slot.weight..slot.bias + slot.cout] {
                *p = T::lit(rng.random_range(-bound..bound));
            }
        }
        Ok(Self {
            spec,
            convs,
            params,
        })
    }

    pub fn spec(&self) -> &StyleNetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn check_input(&self, x: &FeatureMap<T>) -> Result<()> {
        let s = self.spec.stride();
        if x.channels != 3 || x.height % s != 0 || x.width % s != 0 || x.height == 0 || x.width == 0 {
            return Err(Error::Config(format!(
                "style network input must be 3-channel with sides divisible by {s}, got {}x{}x{}",
                x.channels, x.height, x.width
            )));
        }
        Ok(())
    }

    /// Output only.
    pub fn forward(&self, x: &FeatureMap<T>) -> Result<FeatureMap<T>> {
        Ok(self.forward_tape(x)?.output)
    }

    /// Forward pass recording what the backward pass needs.
    pub fn forward_tape(&self, x: &FeatureMap<T>) -> Result<Tape<T>> {
        self.check_input(x)?;
        let n = self.spec.downsample_stages;
        let mut tape = Tape {
            convs: Vec::with_capacity(self.convs.len()),
            norms: Vec::with_capacity(self.convs.len() - 1),
            output: FeatureMap::zeros(0, 0, 0),
        };
        let mut skips = Vec::with_capacity(n + 1);
        let mut h = self.conv_norm(0, x, &mut tape);
        for i in 1..=n {
            skips.push(h);
            h = self.conv_norm(i, skips.last().expect("pushed"), &mut tape);
        }
        for j in 0..n {
            let a = self.conv_norm(n + 1 + j, &h, &mut tape);
            let mut up = upsample2(&a);
            let skip = &skips[n - 1 - j];
            for (u, s) in up.data.iter_mut().zip(&skip.data) {
                *u = *u + *s;
            }
            h = up;
        }
        let mut y = conv_forward(&self.params, &self.convs[2 * n + 1], &h, &mut tape.convs);
        for v in &mut y.data {
            *v = T::one() / (T::one() + (-*v).exp());
        }
        tape.output = y;
        Ok(tape)
    }

    fn conv_norm(&self, idx: usize, x: &FeatureMap<T>, tape: &mut Tape<T>) -> FeatureMap<T> {
        let z = conv_forward(&self.params, &self.convs[idx], x, &mut tape.convs);
        norm_act_forward(z, &mut tape.norms)
    }

    /// Gradient of the loss with respect to every parameter, given the
    /// gradient with respect to the network output.
    pub fn backward(&self, tape: &Tape<T>, grad_output: &[T]) -> Vec<T> {
        self.backward_inner(tape, grad_output, false).0
    }

    /// Parameter gradient and input gradient.
    pub fn backward_full(&self, tape: &Tape<T>, grad_output: &[T]) -> (Vec<T>, FeatureMap<T>) {
        self.backward_inner(tape, grad_output, true)
    }

    fn backward_inner(
        &self,
        tape: &Tape<T>,
        grad_output: &[T],
        need_input: bool,
    ) -> (Vec<T>, FeatureMap<T>) {
        let n = self.spec.downsample_stages;
        assert_eq!(grad_output.len(), tape.output.data.len());
        let mut grads = vec![T::zero(); self.params.len()];

        // sigmoid
        let mut g = FeatureMap::from_vec(
            3,
            tape.output.height,
            tape.output.width,
            grad_output
                .iter()
                .zip(&tape.output.data)
                .map(|(&d, &y)| d * y * (T::one() - y))
                .collect(),
        );
        let head = 2 * n + 1;
        g = conv_backward(&self.params, &self.convs[head], &tape.convs[head], &g, &mut grads, true);

        // Decoder, last stage first. `skip_grads[i]` collects gradient flowing into encoder level i.
        let mut skip_grads: Vec<Option<FeatureMap<T>>> = (0..n).map(|_| None).collect();
        for j in (0..n).rev() {
            skip_grads[n - 1 - j] = Some(g.clone());
            let down = downsample2_sum(&g);
            g = self.conv_norm_backward(n + 1 + j, tape, &down, &mut grads, true);
        }
        // Encoder.
        for i in (1..=n).rev() {
            let mut gi = self.conv_norm_backward(i, tape, &g, &mut grads, true);
            if let Some(s) = skip_grads[i - 1].take() {
                for (a, b) in gi.data.iter_mut().zip(&s.data) {
                    *a = *a + *b;
                }
            }
            g = gi;
        }
        let dx = self.conv_norm_backward(0, tape, &g, &mut grads, need_input);
        (grads, dx)
    }

    fn conv_norm_backward(
        &self,
        idx: usize,
        tape: &Tape<T>,
        grad: &FeatureMap<T>,
        grads: &mut [T],
        need_input: bool,
    ) -> FeatureMap<T> {
        let dz = norm_act_backward(&tape.norms[idx], grad);
        conv_backward(&self.params, &self.convs[idx], &tape.convs[idx], &dz, grads, need_input)
    }
}

fn im2col<T: Scalar>(x: &FeatureMap<T>, slot: &ConvSlot) -> (Vec<T>, usize, usize) {
    let (ho, wo) = slot.out_dims(x.height, x.width);
    let (k, s, p) = (slot.k, slot.stride, slot.pad as isize);
    let plane = ho * wo;
    let mut cols = vec![T::zero(); slot.cin * k * k * plane];
    for ci in 0..slot.cin {
        let src = &x.data[ci * x.area()..(ci + 1) * x.area()];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..ho {
                    let iy = (oy * s) as isize + ky as isize - p;
                    if iy < 0 || iy >= x.height as isize {
                        continue;
                    }
                    let src_row = &src[iy as usize * x.width..(iy as usize + 1) * x.width];
                    let dst_row = &mut dst[oy * wo..(oy + 1) * wo];
                    for (ox, d) in dst_row.iter_mut().enumerate() {
                        let ix = (ox * s) as isize + kx as isize - p;
                        if ix >= 0 && (ix as usize) < x.width {
                            *d = src_row[ix as usize];
                        }
                    }
                }
            }
        }
    }
    (cols, ho, wo)
}

fn col2im<T: Scalar>(
    cols: &[T],
    slot: &ConvSlot,
    (c, h, w): (usize, usize, usize),
    (ho, wo): (usize, usize),
) -> FeatureMap<T> {
    let (k, s, p) = (slot.k, slot.stride, slot.pad as isize);
    let plane = ho * wo;
    let mut x = FeatureMap::zeros(c, h, w);
    for ci in 0..c {
        let dst = &mut x.data[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..ho {
                    let iy = (oy * s) as isize + ky as isize - p;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_row = &mut dst[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, &v) in src[oy * wo..(oy + 1) * wo].iter().enumerate() {
                        let ix = (ox * s) as isize + kx as isize - p;
                        if ix >= 0 && (ix as usize) < w {
                            dst_row[ix as usize] = dst_row[ix as usize] + v;
                        }
                    }
                }
            }
        }
    }
    x
}

fn conv_forward<T: Scalar>(
    params: &[T],
    slot: &ConvSlot,
    x: &FeatureMap<T>,
    caches: &mut Vec<ConvCache<T>>,
) -> FeatureMap<T> {
    debug_assert_eq!(x.channels, slot.cin);
    let (cols, ho, wo) = im2col(x, slot);
    let plane = ho * wo;
    let mut out = vec![T::zero(); slot.cout * plane];
    for (co, chunk) in out.chunks_mut(plane).enumerate() {
        chunk.fill(params[slot.bias + co]);
    }
    let kk = slot.fan_in();
    matmul(
        slot.cout,
        kk,
        plane,
        &params[slot.weight..slot.weight + slot.cout * kk],
        false,
        &cols,
        false,
        &mut out,
        T::one(),
    );
    caches.push(ConvCache {
        cols,
        in_dims: (x.channels, x.height, x.width),
        out_dims: (ho, wo),
    });
    FeatureMap::from_vec(slot.cout, ho, wo, out)
}

fn same3x3(cin: usize, cout: usize) -> ConvSlot {
    ConvSlot {
        cin,
        cout,
        k: 3,
        stride: 1,
        pad: 1,
        weight: 0,
        bias: 0,
    }
}

/// Same-padded 3x3 convolution of one `cin x h x w` image with fixed weights
/// (`cout x cin x 3 x 3`, row-major) plus bias.
pub(crate) fn conv3x3<T: Scalar>(
    x: &[T],
    (cin, h, w): (usize, usize, usize),
    weight: &[T],
    bias: &[T],
) -> Vec<T> {
    let cout = bias.len();
    let slot = same3x3(cin, cout);
    let (cols, ho, wo) = im2col(&FeatureMap::from_vec(cin, h, w, x.to_vec()), &slot);
    let plane = ho * wo;
    let mut out = vec![T::zero(); cout * plane];
    for (chunk, &b) in out.chunks_mut(plane).zip(bias) {
        chunk.fill(b);
    }
    matmul(cout, slot.fan_in(), plane, weight, false, &cols, false, &mut out, T::one());
    out
}

/// Input gradient of [`conv3x3`] given the output gradient.
pub(crate) fn conv3x3_input_grad<T: Scalar>(
    dy: &[T],
    (cin, h, w): (usize, usize, usize),
    weight: &[T],
    cout: usize,
) -> Vec<T> {
    let slot = same3x3(cin, cout);
    let plane = h * w;
    let kk = slot.fan_in();
    let mut dcols = vec![T::zero(); kk * plane];
    matmul(kk, cout, plane, weight, true, dy, false, &mut dcols, T::zero());
    col2im(&dcols, &slot, (cin, h, w), (h, w)).data
}

fn conv_backward<T: Scalar>(
    params: &[T],
    slot: &ConvSlot,
    cache: &ConvCache<T>,
    dy: &FeatureMap<T>,
    grads: &mut [T],
    need_input: bool,
) -> FeatureMap<T> {
    let plane = cache.out_dims.0 * cache.out_dims.1;
    let kk = slot.fan_in();
    debug_assert_eq!(dy.data.len(), slot.cout * plane);
    // dW += dY · colsᵀ
    matmul(
        slot.cout,
        plane,
        kk,
        &dy.data,
        false,
        &cache.cols,
        true,
        &mut grads[slot.weight..slot.weight + slot.cout * kk],
        T::one(),
    );
    for co in 0..slot.cout {
        let s = dy.data[co * plane..(co + 1) * plane]
            .iter()
            .fold(T::zero(), |a, &b| a + b);
        grads[slot.bias + co] = grads[slot.bias + co] + s;
    }
    if !need_input {
        let (c, h, w) = cache.in_dims;
        return FeatureMap::zeros(c, h, w);
    }
    // dcols = Wᵀ · dY
    let mut dcols = vec![T::zero(); kk * plane];
    matmul(
        kk,
        slot.cout,
        plane,
        &params[slot.weight..slot.weight + slot.cout * kk],
        true,
        &dy.data,
        false,
        &mut dcols,
        T::zero(),
    );
    col2im(&dcols, slot, cache.in_dims, cache.out_dims)
}

fn norm_act_forward<T: Scalar>(mut z: FeatureMap<T>, caches: &mut Vec<NormCache<T>>) -> FeatureMap<T> {
    let area = z.area();
    let inv_n = T::lit(1.0 / area as f64);
    let slope = T::lit(LEAKY_SLOPE);
    let eps = T::lit(NORM_EPS);
    let mut xhat = vec![T::zero(); z.data.len()];
    let mut inv_std = Vec::with_capacity(z.channels);
    for c in 0..z.channels {
        let src = &mut z.data[c * area..(c + 1) * area];
        let mean = src.iter().fold(T::zero(), |a, &b| a + b) * inv_n;
        let var = src.iter().fold(T::zero(), |a, &b| a + (b - mean) * (b - mean)) * inv_n;
        let is = T::one() / (var + eps).sqrt();
        inv_std.push(is);
        let xh = &mut xhat[c * area..(c + 1) * area];
        for (v, h) in src.iter_mut().zip(xh.iter_mut()) {
            *h = (*v - mean) * is;
            *v = if *h > T::zero() { *h } else { *h * slope };
        }
    }
    caches.push(NormCache { xhat, inv_std });
    z
}

fn norm_act_backward<T: Scalar>(cache: &NormCache<T>, dy: &FeatureMap<T>) -> FeatureMap<T> {
    let area = dy.area();
    let inv_n = T::lit(1.0 / area as f64);
    let slope = T::lit(LEAKY_SLOPE);
    let mut dz = vec![T::zero(); dy.data.len()];
    for c in 0..dy.channels {
        let xh = &cache.xhat[c * area..(c + 1) * area];
        let g = &dy.data[c * area..(c + 1) * area];
        let out = &mut dz[c * area..(c + 1) * area];
        let (mut sum_g, mut sum_gx) = (T::zero(), T::zero());
        for ((o, &gv), &x) in out.iter_mut().zip(g).zip(xh) {
            let d = if x > T::zero() { gv } else { gv * slope };
            *o = d;
            sum_g = sum_g + d;
            sum_gx = sum_gx + d * x;
        }
        let (mg, mgx) = (sum_g * inv_n, sum_gx * inv_n);
        let is = cache.inv_std[c];
        for (o, &x) in out.iter_mut().zip(xh) {
            *o = is * (*o - mg - x * mgx);
        }
    }
    FeatureMap::from_vec(dy.channels, dy.height, dy.width, dz)
}

fn upsample2<T: Scalar>(x: &FeatureMap<T>) -> FeatureMap<T> {
    let (h, w) = (x.height * 2, x.width * 2);
    let mut out = FeatureMap::zeros(x.channels, h, w);
    for c in 0..x.channels {
        let src = &x.data[c * x.area()..(c + 1) * x.area()];
        let dst = &mut out.data[c * h * w..(c + 1) * h * w];
        for y in 0..h {
            let srow = &src[(y / 2) * x.width..(y / 2 + 1) * x.width];
            for (xx, d) in dst[y * w..(y + 1) * w].iter_mut().enumerate() {
                *d = srow[xx / 2];
            }
        }
    }
    out
}

fn downsample2_sum<T: Scalar>(g: &FeatureMap<T>) -> FeatureMap<T> {
    let (h, w) = (g.height / 2, g.width / 2);
    let mut out = FeatureMap::zeros(g.channels, h, w);
    for c in 0..g.channels {
        let src = &g.data[c * g.area()..(c + 1) * g.area()];
        let dst = &mut out.data[c * h * w..(c + 1) * h * w];
        for y in 0..g.height {
            for x in 0..g.width {
                let d = &mut dst[(y / 2) * w + x / 2];
                *d = *d + src[y * g.width + x];
            }
        }
    }
    out
}
