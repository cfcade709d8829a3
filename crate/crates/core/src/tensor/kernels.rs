//! Raw numeric kernels behind the differentiable ops. All kernels take plain
//! slices/tensors and never touch the tape.

use crate::error::{contract, Result};
use crate::par::Exec;
use crate::tensor::{ConvSpec, Tensor};

/// `c[m×n] = a[m×k] · b[k×n] (+ c if accumulate)`, all row-major unless the
/// transpose flags say otherwise.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: slice lengths cover m*k, k*n and m*n with the strides above.
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
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
        );
    }
}

/// Geometry shared by im2col/col2im: an image of `channels × h × w` convolved
/// with `spec` yields an `out_h × out_w` grid.
#[derive(Clone, Copy, Debug)]
struct Patches {
    channels: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    out_h: usize,
    out_w: usize,
}

impl Patches {
    fn rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Input coordinate touched by output `(oy, ox)` at kernel offset `(ky, kx)`.
    #[inline]
    fn source(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<(usize, usize)> {
        let y = (oy * self.stride + ky) as isize - self.pad as isize;
        let x = (ox * self.stride + kx) as isize - self.pad as isize;
        if y < 0 || x < 0 || y >= self.h as isize || x >= self.w as isize {
            None
        } else {
            Some((y as usize, x as usize))
        }
    }

    fn im2col(&self, image: &[f64]) -> Vec<f64> {
        let mut cols = vec![0.0; self.rows() * self.cols()];
        let ncols = self.cols();
        for c in 0..self.channels {
            let plane = &image[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (c * self.kh + ky) * self.kw + kx;
                    let dst = &mut cols[row * ncols..(row + 1) * ncols];
                    for oy in 0..self.out_h {
                        for ox in 0..self.out_w {
                            if let Some((y, x)) = self.source(oy, ox, ky, kx) {
                                dst[oy * self.out_w + ox] = plane[y * self.w + x];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[f64]) -> Vec<f64> {
        let mut image = vec![0.0; self.channels * self.h * self.w];
        let ncols = self.cols();
        for c in 0..self.channels {
            let plane = &mut image[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (c * self.kh + ky) * self.kw + kx;
                    let src = &cols[row * ncols..(row + 1) * ncols];
                    for oy in 0..self.out_h {
                        for ox in 0..self.out_w {
                            if let Some((y, x)) = self.source(oy, ox, ky, kx) {
                                plane[y * self.w + x] += src[oy * self.out_w + ox];
                            }
                        }
                    }
                }
            }
        }
        image
    }
}

fn check_conv_shapes(x: &Tensor, w: &Tensor, spec: &ConvSpec) -> Result<(usize, usize, usize, usize)> {
    spec.validate()?;
    let (n, c, h, wd) = x.dims4()?;
    contract!(
        c == spec.in_channels,
        "conv2d input has {c} channels, spec expects {}",
        spec.in_channels
    );
    contract!(
        w.shape() == [spec.out_channels, spec.in_channels, spec.kernel_h, spec.kernel_w],
        "conv2d weight shape {:?} inconsistent with spec {:?} (want OIHW)",
        w.shape(),
        spec
    );
    Ok((n, c, h, wd))
}

fn sum_in_order(parts: impl IntoIterator<Item = Vec<f64>>, len: usize) -> Vec<f64> {
    let mut acc = vec![0.0; len];
    for p in parts {
        for (a, v) in acc.iter_mut().zip(p) {
            *a += v;
        }
    }
    acc
}

/// Forward cross-correlation, NCHW input, OIHW weight.
pub fn conv2d_forward(x: &Tensor, w: &Tensor, b: &Tensor, spec: &ConvSpec, exec: Exec) -> Result<Tensor> {
    let (n, c, h, wd) = check_conv_shapes(x, w, spec)?;
    contract!(
        b.shape() == [spec.out_channels],
        "conv2d bias shape {:?}, want [{}]",
        b.shape(),
        spec.out_channels
    );
    let geo = Patches {
        channels: c,
        h,
        w: wd,
        kh: spec.kernel_h,
        kw: spec.kernel_w,
        stride: spec.stride,
        pad: spec.padding,
        out_h: spec.conv_out(h, spec.kernel_h)?,
        out_w: spec.conv_out(wd, spec.kernel_w)?,
    };
    let o = spec.out_channels;
    let xin = x.data();
    let per = exec.map(n, |i| {
        let cols = geo.im2col(&xin[i * c * h * wd..(i + 1) * c * h * wd]);
        let mut out = vec![0.0; o * geo.cols()];
        for (oc, row) in out.chunks_mut(geo.cols()).enumerate() {
            row.fill(b.data()[oc]);
        }
        gemm(o, geo.rows(), geo.cols(), w.data(), false, &cols, false, &mut out, true);
        out
    });
    Ok(Tensor::from_parts(vec![n, o, geo.out_h, geo.out_w], per.concat()))
}

/// Gradients of [`conv2d_forward`] w.r.t. input, weight and bias.
pub fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    spec: &ConvSpec,
    grad_out: &Tensor,
    exec: Exec,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, c, h, wd) = check_conv_shapes(x, w, spec)?;
    let (_, o, oh, ow) = grad_out.dims4()?;
    let geo = Patches {
        channels: c,
        h,
        w: wd,
        kh: spec.kernel_h,
        kw: spec.kernel_w,
        stride: spec.stride,
        pad: spec.padding,
        out_h: oh,
        out_w: ow,
    };
    let xin = x.data();
    let g = grad_out.data();
    let per = exec.map(n, |i| {
        let cols = geo.im2col(&xin[i * c * h * wd..(i + 1) * c * h * wd]);
        let go = &g[i * o * oh * ow..(i + 1) * o * oh * ow];
        let mut dw = vec![0.0; o * geo.rows()];
        gemm(o, geo.cols(), geo.rows(), go, false, &cols, true, &mut dw, false);
        let db: Vec<f64> = go.chunks(geo.cols()).map(|r| r.iter().sum()).collect();
        let mut dcols = vec![0.0; geo.rows() * geo.cols()];
        gemm(geo.rows(), o, geo.cols(), w.data(), true, go, false, &mut dcols, false);
        (geo.col2im(&dcols), dw, db)
    });
    let mut dx = Vec::with_capacity(n * c * h * wd);
    let mut dws = Vec::with_capacity(n);
    let mut dbs = Vec::with_capacity(n);
    for (a, b_, c_) in per {
        dx.extend(a);
        dws.push(b_);
        dbs.push(c_);
    }
    Ok((
        Tensor::from_parts(x.shape().to_vec(), dx),
        Tensor::from_parts(w.shape().to_vec(), sum_in_order(dws, w.len())),
        Tensor::from_parts(vec![o], sum_in_order(dbs, o)),
    ))
}

fn check_transpose_shapes(x: &Tensor, w: &Tensor, spec: &ConvSpec) -> Result<(usize, usize, usize, usize)> {
    spec.validate()?;
    let (n, c, h, wd) = x.dims4()?;
    contract!(
        c == spec.in_channels,
        "up_conv2d input has {c} channels, spec expects {}",
        spec.in_channels
    );
    contract!(
        w.shape() == [spec.in_channels, spec.out_channels, spec.kernel_h, spec.kernel_w],
        "up_conv2d weight shape {:?} inconsistent with spec {:?} (want IOHW)",
        w.shape(),
        spec
    );
    Ok((n, c, h, wd))
}

fn transpose_geometry(spec: &ConvSpec, h: usize, w: usize) -> Result<Patches> {
    Ok(Patches {
        channels: spec.out_channels,
        h: spec.conv_transpose_out(h, spec.kernel_h)?,
        w: spec.conv_transpose_out(w, spec.kernel_w)?,
        kh: spec.kernel_h,
        kw: spec.kernel_w,
        stride: spec.stride,
        pad: spec.padding,
        out_h: h,
        out_w: w,
    })
}

/// Transposed convolution (the adjoint of [`conv2d_forward`] with the same
/// geometry), IOHW weight, optional per-output-channel bias.
pub fn conv_transpose2d_forward(
    x: &Tensor,
    w: &Tensor,
    b: Option<&Tensor>,
    spec: &ConvSpec,
    exec: Exec,
) -> Result<Tensor> {
    let (n, c, h, wd) = check_transpose_shapes(x, w, spec)?;
    if let Some(b) = b {
        contract!(
            b.shape() == [spec.out_channels],
            "up_conv2d bias shape {:?}, want [{}]",
            b.shape(),
            spec.out_channels
        );
    }
    let geo = transpose_geometry(spec, h, wd)?;
    let xin = x.data();
    let plane = geo.h * geo.w;
    let per = exec.map(n, |i| {
        let xs = &xin[i * c * h * wd..(i + 1) * c * h * wd];
        let mut cols = vec![0.0; geo.rows() * geo.cols()];
        gemm(geo.rows(), c, geo.cols(), w.data(), true, xs, false, &mut cols, false);
        let mut img = geo.col2im(&cols);
        if let Some(b) = b {
            for (oc, p) in img.chunks_mut(plane).enumerate() {
                let bias = b.data()[oc];
                p.iter_mut().for_each(|v| *v += bias);
            }
        }
        img
    });
    Ok(Tensor::from_parts(vec![n, spec.out_channels, geo.h, geo.w], per.concat()))
}

/// Gradients of [`conv_transpose2d_forward`] w.r.t. input, weight and bias.
pub fn conv_transpose2d_backward(
    x: &Tensor,
    w: &Tensor,
    spec: &ConvSpec,
    grad_out: &Tensor,
    exec: Exec,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, c, h, wd) = check_transpose_shapes(x, w, spec)?;
    let geo = transpose_geometry(spec, h, wd)?;
    let o = spec.out_channels;
    let xin = x.data();
    let g = grad_out.data();
    let plane = geo.h * geo.w;
    let per = exec.map(n, |i| {
        let xs = &xin[i * c * h * wd..(i + 1) * c * h * wd];
        let go = &g[i * o * plane..(i + 1) * o * plane];
        let gcols = geo.im2col(go);
        let mut dx = vec![0.0; c * h * wd];
        gemm(c, geo.rows(), geo.cols(), w.data(), false, &gcols, false, &mut dx, false);
        let mut dw = vec![0.0; c * geo.rows()];
        gemm(c, geo.cols(), geo.rows(), xs, false, &gcols, true, &mut dw, false);
        let db: Vec<f64> = go.chunks(plane).map(|p| p.iter().sum()).collect();
        (dx, dw, db)
    });
    let mut dx = Vec::with_capacity(x.len());
    let mut dws = Vec::with_capacity(n);
    let mut dbs = Vec::with_capacity(n);
    for (a, b_, c_) in per {
        dx.extend(a);
        dws.push(b_);
        dbs.push(c_);
    }
    Ok((
        Tensor::from_parts(x.shape().to_vec(), dx),
        Tensor::from_parts(w.shape().to_vec(), sum_in_order(dws, w.len())),
        Tensor::from_parts(vec![o], sum_in_order(dbs, o)),
    ))
}

/// 2×2 / stride-2 max pooling. Returns the pooled tensor and, per output
/// element, the flat input index it was taken from (first maximum in
/// row-major window order).
pub fn max_pool2x2_forward(x: &Tensor, exec: Exec) -> Result<(Tensor, Vec<usize>)> {
    let (n, c, h, w) = x.dims4()?;
    contract!(
        h % 2 == 0 && w % 2 == 0,
        "max_pool2d needs even spatial extents, got {h}x{w}"
    );
    let (oh, ow) = (h / 2, w / 2);
    let xin = x.data();
    let per = exec.map(n * c, |p| {
        let base = p * h * w;
        let mut vals = Vec::with_capacity(oh * ow);
        let mut idx = Vec::with_capacity(oh * ow);
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let j = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if xin[j] > xin[best] {
                        best = j;
                    }
                }
                vals.push(xin[best]);
                idx.push(best);
            }
        }
        (vals, idx)
    });
    let mut vals = Vec::with_capacity(n * c * oh * ow);
    let mut idx = Vec::with_capacity(n * c * oh * ow);
    for (v, i) in per {
        vals.extend(v);
        idx.extend(i);
    }
    Ok((Tensor::from_parts(vec![n, c, oh, ow], vals), idx))
}

pub fn max_pool2x2_backward(input_shape: &[usize], argmax: &[usize], grad_out: &Tensor) -> Tensor {
    let mut dx = vec![0.0; input_shape.iter().product()];
    for (&j, &g) in argmax.iter().zip(grad_out.data()) {
        dx[j] += g;
    }
    Tensor::from_parts(input_shape.to_vec(), dx)
}
