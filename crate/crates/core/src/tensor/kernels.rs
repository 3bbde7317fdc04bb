//! Raw forward/backward kernels used by the tape. Convolution is lowered to
//! im2col + GEMM per sample; batch samples run as independent parallel jobs.

use super::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::parallel;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl ConvGeom {
    pub const fn new(stride: usize, padding: usize, dilation: usize) -> Self {
        ConvGeom {
            stride,
            padding,
            dilation,
        }
    }

    /// Output extent for an input extent and kernel size.
    pub fn out_extent(&self, input: usize, kernel: usize) -> Result<usize> {
        if self.stride == 0 || self.dilation == 0 {
            return Err(Error::config("stride and dilation must be >= 1"));
        }
        let span = self.dilation * (kernel - 1) + 1;
        let padded = input + 2 * self.padding;
        if padded < span {
            return Err(Error::config(format!(
                "kernel span {span} exceeds padded input {padded}"
            )));
        }
        Ok((padded - span) / self.stride + 1)
    }
}

struct ConvDims {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
}

impl ConvDims {
    fn cols_rows(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn out_plane(&self) -> usize {
        self.oh * self.ow
    }
}

fn conv_dims<S: Scalar>(input: &Tensor<S>, weight: &Tensor<S>, g: ConvGeom) -> Result<ConvDims> {
    let (n, cin, h, w) = input.dims4()?;
    let (cout, wcin, kh, kw) = weight.dims4()?;
    if wcin != cin {
        return Err(Error::dim(format!(
            "conv2d: weight expects {wcin} input channels, input has {cin}"
        )));
    }
    let oh = g.out_extent(h, kh)?;
    let ow = g.out_extent(w, kw)?;
    Ok(ConvDims {
        n,
        cin,
        h,
        w,
        cout,
        kh,
        kw,
        oh,
        ow,
    })
}

fn im2col<S: Scalar>(x: &[S], d: &ConvDims, g: ConvGeom, cols: &mut [S]) {
    let p = d.out_plane();
    for c in 0..d.cin {
        for ky in 0..d.kh {
            for kx in 0..d.kw {
                let row = (c * d.kh + ky) * d.kw + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..d.oh {
                    let iy = (oy * g.stride + ky * g.dilation) as isize - g.padding as isize;
                    let line = &mut dst[oy * d.ow..(oy + 1) * d.ow];
                    if iy < 0 || iy >= d.h as isize {
                        line.fill(S::zero());
                        continue;
                    }
                    let src = &x[(c * d.h + iy as usize) * d.w..][..d.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx * g.dilation) as isize - g.padding as isize;
                        *v = if ix < 0 || ix >= d.w as isize {
                            S::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<S: Scalar>(cols: &[S], d: &ConvDims, g: ConvGeom, dx: &mut [S]) {
    let p = d.out_plane();
    for c in 0..d.cin {
        for ky in 0..d.kh {
            for kx in 0..d.kw {
                let row = (c * d.kh + ky) * d.kw + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..d.oh {
                    let iy = (oy * g.stride + ky * g.dilation) as isize - g.padding as isize;
                    if iy < 0 || iy >= d.h as isize {
                        continue;
                    }
                    let dst = &mut dx[(c * d.h + iy as usize) * d.w..][..d.w];
                    for ox in 0..d.ow {
                        let ix = (ox * g.stride + kx * g.dilation) as isize - g.padding as isize;
                        if ix >= 0 && ix < d.w as isize {
                            dst[ix as usize] += src[oy * d.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward<S: Scalar>(
    input: &Tensor<S>,
    weight: &Tensor<S>,
    bias: Option<&Tensor<S>>,
    g: ConvGeom,
) -> Result<Tensor<S>> {
    let d = conv_dims(input, weight, g)?;
    if let Some(b) = bias {
        if b.len() != d.cout {
            return Err(Error::dim(format!(
                "conv2d: bias has {} entries for {} output channels",
                b.len(),
                d.cout
            )));
        }
    }
    let in_len = d.cin * d.h * d.w;
    let out_len = d.cout * d.out_plane();
    let k = d.cols_rows();
    let p = d.out_plane();
    let x = input.data();
    let wt = weight.data();
    let mut out = vec![S::zero(); d.n * out_len];
    parallel::for_each_chunk_mut(&mut out, out_len, |i, o| {
        let mut cols = vec![S::zero(); k * p];
        im2col(&x[i * in_len..(i + 1) * in_len], &d, g, &mut cols);
        if let Some(b) = bias {
            for (c, plane) in o.chunks_mut(p).enumerate() {
                plane.fill(b.data()[c]);
            }
        }
        let beta = if bias.is_some() { S::one() } else { S::zero() };
        S::gemm(
            d.cout,
            k,
            p,
            S::one(),
            wt,
            k as isize,
            1,
            &cols,
            p as isize,
            1,
            beta,
            o,
            p as isize,
            1,
        );
    });
    Tensor::new(&[d.n, d.cout, d.oh, d.ow], out)
}

pub struct ConvGrads<S> {
    pub input: Option<Vec<S>>,
    pub weight: Option<Vec<S>>,
    pub bias: Option<Vec<S>>,
}

pub fn conv2d_backward<S: Scalar>(
    input: &Tensor<S>,
    weight: &Tensor<S>,
    grad_out: &[S],
    g: ConvGeom,
    need: [bool; 3],
) -> Result<ConvGrads<S>> {
    let d = conv_dims(input, weight, g)?;
    let in_len = d.cin * d.h * d.w;
    let out_len = d.cout * d.out_plane();
    let k = d.cols_rows();
    let p = d.out_plane();
    let x = input.data();
    let wt = weight.data();

    // Per-sample partials; weight/bias partials are reduced in sample order.
    let partials = parallel::map_indexed(d.n, |i| {
        let go = &grad_out[i * out_len..(i + 1) * out_len];
        let mut dw = None;
        if need[1] {
            let mut cols = vec![S::zero(); k * p];
            im2col(&x[i * in_len..(i + 1) * in_len], &d, g, &mut cols);
            let mut acc = vec![S::zero(); d.cout * k];
            // dW[cout, k] = dY[cout, p] · cols^T[p, k]
            S::gemm(
                d.cout,
                p,
                k,
                S::one(),
                go,
                p as isize,
                1,
                &cols,
                1,
                p as isize,
                S::zero(),
                &mut acc,
                k as isize,
                1,
            );
            dw = Some(acc);
        }
        let mut dx = None;
        if need[0] {
            let mut dcols = vec![S::zero(); k * p];
            // dcols[k, p] = W^T[k, cout] · dY[cout, p]
            S::gemm(
                k,
                d.cout,
                p,
                S::one(),
                wt,
                1,
                k as isize,
                go,
                p as isize,
                1,
                S::zero(),
                &mut dcols,
                p as isize,
                1,
            );
            let mut acc = vec![S::zero(); in_len];
            col2im(&dcols, &d, g, &mut acc);
            dx = Some(acc);
        }
        let db = need[2].then(|| {
            go.chunks(p)
                .map(|plane| plane.iter().copied().sum::<S>())
                .collect::<Vec<S>>()
        });
        (dx, dw, db)
    });

    let mut grads = ConvGrads {
        input: need[0].then(|| Vec::with_capacity(d.n * in_len)),
        weight: need[1].then(|| vec![S::zero(); d.cout * k]),
        bias: need[2].then(|| vec![S::zero(); d.cout]),
    };
    for (dx, dw, db) in partials {
        if let (Some(acc), Some(v)) = (grads.input.as_mut(), dx) {
            acc.extend_from_slice(&v);
        }
        if let (Some(acc), Some(v)) = (grads.weight.as_mut(), dw) {
            acc.iter_mut().zip(v).for_each(|(a, b)| *a += b);
        }
        if let (Some(acc), Some(v)) = (grads.bias.as_mut(), db) {
            acc.iter_mut().zip(v).for_each(|(a, b)| *a += b);
        }
    }
    Ok(grads)
}

/// Source taps for one axis of an align-corners-false bilinear resize.
#[derive(Clone, Copy, Debug)]
struct Tap<S> {
    lo: usize,
    hi: usize,
    frac: S,
}

fn taps<S: Scalar>(input: usize, output: usize) -> Vec<Tap<S>> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|i| {
            let src = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(input - 1);
            let hi = (lo + 1).min(input - 1);
            Tap {
                lo,
                hi,
                frac: S::lit(src - lo as f64),
            }
        })
        .collect()
}

pub fn upsample_check(h: usize, w: usize, th: usize, tw: usize) -> Result<()> {
    if th < h || tw < w {
        return Err(Error::config(format!(
            "bilinear upsample target {th}x{tw} smaller than input {h}x{w}"
        )));
    }
    if h == 0 || w == 0 {
        return Err(Error::config("bilinear upsample of an empty plane"));
    }
    Ok(())
}

pub fn upsample_forward<S: Scalar>(input: &Tensor<S>, th: usize, tw: usize) -> Result<Tensor<S>> {
    let (n, c, h, w) = input.dims4()?;
    upsample_check(h, w, th, tw)?;
    let ty = taps::<S>(h, th);
    let tx = taps::<S>(w, tw);
    let x = input.data();
    let mut out = vec![S::zero(); n * c * th * tw];
    parallel::for_each_chunk_mut(&mut out, th * tw, |plane, o| {
        let src = &x[plane * h * w..(plane + 1) * h * w];
        for (oy, ry) in ty.iter().enumerate() {
            let r0 = &src[ry.lo * w..(ry.lo + 1) * w];
            let r1 = &src[ry.hi * w..(ry.hi + 1) * w];
            for (ox, rx) in tx.iter().enumerate() {
                let top = r0[rx.lo] + (r0[rx.hi] - r0[rx.lo]) * rx.frac;
                let bot = r1[rx.lo] + (r1[rx.hi] - r1[rx.lo]) * rx.frac;
                o[oy * tw + ox] = top + (bot - top) * ry.frac;
            }
        }
    });
    Tensor::new(&[n, c, th, tw], out)
}

pub fn upsample_backward<S: Scalar>(
    in_shape: (usize, usize, usize, usize),
    grad_out: &[S],
    th: usize,
    tw: usize,
) -> Vec<S> {
    let (n, c, h, w) = in_shape;
    let ty = taps::<S>(h, th);
    let tx = taps::<S>(w, tw);
    let mut dx = vec![S::zero(); n * c * h * w];
    parallel::for_each_chunk_mut(&mut dx, h * w, |plane, d| {
        let go = &grad_out[plane * th * tw..(plane + 1) * th * tw];
        for (oy, ry) in ty.iter().enumerate() {
            for (ox, rx) in tx.iter().enumerate() {
                let gv = go[oy * tw + ox];
                let gy0 = gv * (S::one() - ry.frac);
                let gy1 = gv * ry.frac;
                d[ry.lo * w + rx.lo] += gy0 * (S::one() - rx.frac);
                d[ry.lo * w + rx.hi] += gy0 * rx.frac;
                d[ry.hi * w + rx.lo] += gy1 * (S::one() - rx.frac);
                d[ry.hi * w + rx.hi] += gy1 * rx.frac;
            }
        }
    });
    dx
}
