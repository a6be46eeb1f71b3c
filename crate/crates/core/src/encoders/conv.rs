//! Fixed-weight 3x3 convolution as a candle custom op.
//!
//! Only the input gradient is produced, which skips the kernel gradient that
//! candle's generic `conv2d` backward computes and then throws away here.

use std::sync::Arc;

use candle_core::backend::BackendStorage;
use candle_core::{CpuStorage, CustomOp1, DType, Layout, Shape, Tensor};

use crate::engine::network::{conv3x3, conv3x3_input_grad, Scalar};

#[derive(Debug)]
struct Weights {
    cin: usize,
    cout: usize,
    w32: Vec<f32>,
    b32: Vec<f32>,
    w64: Vec<f64>,
    b64: Vec<f64>,
}

/// Same-padded, stride-1 3x3 convolution with frozen weights and bias.
#[derive(Debug, Clone)]
pub(crate) struct FixedConv3x3 {
    inner: Arc<Weights>,
}

impl FixedConv3x3 {
    /// `weight` is `(cout, cin, 3, 3)`, `bias` is `(cout,)`.
    pub(crate) fn new(weight: &Tensor, bias: &Tensor) -> candle_core::Result<Self> {
        let (cout, cin, kh, kw) = weight.dims4()?;
        if kh != 3 || kw != 3 || bias.dims() != [cout] {
            candle_core::bail!("fixed conv expects a 3x3 kernel, got {:?}", weight.dims());
        }
        let flat = |t: &Tensor, dt: DType| t.to_dtype(dt)?.flatten_all();
        Ok(Self {
            inner: Arc::new(Weights {
                cin,
                cout,
                w32: flat(weight, DType::F32)?.to_vec1()?,
                b32: flat(bias, DType::F32)?.to_vec1()?,
                w64: flat(weight, DType::F64)?.to_vec1()?,
                b64: flat(bias, DType::F64)?.to_vec1()?,
            }),
        })
    }

    pub(crate) fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        x.apply_op1(self.clone())
    }
}

fn batched<T: Scalar>(
    data: &[T],
    layout: &Layout,
    cin: usize,
    cout: usize,
    f: impl Fn(&[T], (usize, usize, usize)) -> Vec<T>,
) -> candle_core::Result<(Vec<T>, Shape)> {
    let (n, c, h, w) = layout.shape().dims4()?;
    if c != cin {
        candle_core::bail!("fixed conv expects {cin} channels, got {c}");
    }
    let Some((start, end)) = layout.contiguous_offsets() else {
        candle_core::bail!("fixed conv needs a contiguous input");
    };
    let data = &data[start..end];
    let per = cin * h * w;
    let mut out = Vec::with_capacity(n * cout * h * w);
    for item in data.chunks(per.max(1)).take(n) {
        out.extend(f(item, (cin, h, w)));
    }
    Ok((out, Shape::from((n, cout, h, w))))
}

impl CustomOp1 for FixedConv3x3 {
    fn name(&self) -> &'static str {
        "fixed-conv3x3"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let k = &self.inner;
        match storage {
            CpuStorage::F32(v) => {
                let (o, s) = batched(v, layout, k.cin, k.cout, |x, d| conv3x3(x, d, &k.w32, &k.b32))?;
                Ok((CpuStorage::F32(o), s))
            }
            CpuStorage::F64(v) => {
                let (o, s) = batched(v, layout, k.cin, k.cout, |x, d| conv3x3(x, d, &k.w64, &k.b64))?;
                Ok((CpuStorage::F64(o), s))
            }
            other => candle_core::bail!("fixed conv does not support {:?}", other.dtype()),
        }
    }

    fn bwd(&self, _arg: &Tensor, _res: &Tensor, grad_res: &Tensor) -> candle_core::Result<Option<Tensor>> {
        let grad = grad_res
            .contiguous()?
            .apply_op1(InputGrad { inner: self.inner.clone() })?;
        Ok(Some(grad))
    }
}

#[derive(Debug)]
struct InputGrad {
    inner: Arc<Weights>,
}

impl CustomOp1 for InputGrad {
    fn name(&self) -> &'static str {
        "fixed-conv3x3-input-grad"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let k = &self.inner;
        let (cout, cin) = (k.cout, k.cin);
        match storage {
            CpuStorage::F32(v) => {
                let (o, s) = batched(v, layout, cout, cin, |dy, (_, h, w)| {
                    conv3x3_input_grad(dy, (cin, h, w), &k.w32, cout)
                })?;
                Ok((CpuStorage::F32(o), s))
            }
            CpuStorage::F64(v) => {
                let (o, s) = batched(v, layout, cout, cin, |dy, (_, h, w)| {
                    conv3x3_input_grad(dy, (cin, h, w), &k.w64, cout)
                })?;
                Ok((CpuStorage::F64(o), s))
            }
            other => candle_core::bail!("fixed conv does not support {:?}", other.dtype()),
        }
    }
}
