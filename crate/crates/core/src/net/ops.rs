//! Forward and backward kernels for single samples stored as flat
//! row-major `C×T×H×W` buffers.

use super::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Vol {
    pub c: usize,
    pub t: usize,
    pub h: usize,
    pub w: usize,
}

impl Vol {
    pub fn of(shape: &[usize]) -> Self {
        Vol { c: shape[0], t: shape[1], h: shape[2], w: shape[3] }
    }

    pub fn spatial(&self) -> usize {
        self.t * self.h * self.w
    }

    pub fn len(&self) -> usize {
        self.c * self.spatial()
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub input: Vol,
    pub output: Vol,
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

impl ConvGeom {
    pub fn patch(&self) -> usize {
        self.input.c * self.kernel.iter().product::<usize>()
    }
}

/// Valid output range `[lo, hi)` along one axis for kernel offset `k`:
/// the outputs `o` for which `o*s + k - p` lands in `[0, n)`.
fn valid_range(n_in: usize, n_out: usize, k: usize, s: usize, p: usize) -> (usize, usize) {
    let lo = if p > k { (p - k).div_ceil(s) } else { 0 };
    // o*s + k - p <= n_in - 1  ⇔  o <= (n_in - 1 + p - k) / s
    let hi = if n_in + p > k { ((n_in - 1 + p - k) / s + 1).min(n_out) } else { 0 };
    (lo.min(hi), hi)
}

/// Unfolds the input into a `patch × positions` matrix.
pub(crate) fn im2col<T: Real>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let (i, o) = (g.input, g.output);
    let p_len = o.spatial();
    let [kt, kh, kw] = g.kernel;
    let [st, sh, sw] = g.stride;
    let [pt, ph, pw] = g.padding;
    cols.fill(T::zero());
    let mut row = 0;
    for c in 0..i.c {
        let xc = &x[c * i.spatial()..(c + 1) * i.spatial()];
        for dt in 0..kt {
            let (t_lo, t_hi) = valid_range(i.t, o.t, dt, st, pt);
            for dh in 0..kh {
                let (h_lo, h_hi) = valid_range(i.h, o.h, dh, sh, ph);
                for dw in 0..kw {
                    let (w_lo, w_hi) = valid_range(i.w, o.w, dw, sw, pw);
                    let dst = &mut cols[row * p_len..(row + 1) * p_len];
                    for ot in t_lo..t_hi {
                        let it = ot * st + dt - pt;
                        for oh in h_lo..h_hi {
                            let ih = oh * sh + dh - ph;
                            let src = &xc[(it * i.h + ih) * i.w..];
                            let out = &mut dst[(ot * o.h + oh) * o.w..];
                            for ow in w_lo..w_hi {
                                out[ow] = src[ow * sw + dw - pw];
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input.
pub(crate) fn col2im<T: Real>(cols: &[T], g: &ConvGeom, dx: &mut [T]) {
    let (i, o) = (g.input, g.output);
    let p_len = o.spatial();
    let [kt, kh, kw] = g.kernel;
    let [st, sh, sw] = g.stride;
    let [pt, ph, pw] = g.padding;
    let mut row = 0;
    for c in 0..i.c {
        let dxc = &mut dx[c * i.spatial()..(c + 1) * i.spatial()];
        for dt in 0..kt {
            let (t_lo, t_hi) = valid_range(i.t, o.t, dt, st, pt);
            for dh in 0..kh {
                let (h_lo, h_hi) = valid_range(i.h, o.h, dh, sh, ph);
                for dw in 0..kw {
                    let (w_lo, w_hi) = valid_range(i.w, o.w, dw, sw, pw);
                    let src = &cols[row * p_len..(row + 1) * p_len];
                    for ot in t_lo..t_hi {
                        let it = ot * st + dt - pt;
                        for oh in h_lo..h_hi {
                            let ih = oh * sh + dh - ph;
                            let base = (it * i.h + ih) * i.w;
                            let s = &src[(ot * o.h + oh) * o.w..];
                            for ow in w_lo..w_hi {
                                dxc[base + ow * sw + dw - pw] += s[ow];
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

pub(crate) fn conv_forward<T: Real>(x: &[T], weight: &[T], bias: &[T], g: &ConvGeom, cols: &mut Vec<T>) -> Vec<T> {
    let k = g.patch();
    let p = g.output.spatial();
    let f = g.output.c;
    cols.resize(k * p, T::zero());
    im2col(x, g, cols);
    let mut out = vec![T::zero(); f * p];
    for (fi, row) in out.chunks_exact_mut(p).enumerate() {
        row.fill(bias[fi]);
    }
    T::gemm(f, k, p, T::one(), weight, k as isize, 1, cols, p as isize, 1, T::one(), &mut out, p as isize, 1);
    out
}

/// Accumulates weight and bias gradients and optionally returns the input gradient.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward<T: Real>(
    x: &[T],
    weight: &[T],
    dout: &[T],
    g: &ConvGeom,
    dweight: Option<(&mut [T], &mut [T])>,
    want_input: bool,
    cols: &mut Vec<T>,
) -> Option<Vec<T>> {
    let k = g.patch();
    let p = g.output.spatial();
    let f = g.output.c;
    if let Some((dw, db)) = dweight {
        cols.resize(k * p, T::zero());
        im2col(x, g, cols);
        // dW[f×k] += dout[f×p] · colsᵀ
        T::gemm(f, p, k, T::one(), dout, p as isize, 1, cols, 1, p as isize, T::one(), dw, k as isize, 1);
        for (fi, row) in dout.chunks_exact(p).enumerate() {
            db[fi] += row.iter().copied().sum::<T>();
        }
    }
    if !want_input {
        return None;
    }
    cols.resize(k * p, T::zero());
    // dcols[k×p] = Wᵀ[k×f] · dout[f×p]
    T::gemm(k, f, p, T::one(), weight, 1, k as isize, dout, p as isize, 1, T::zero(), cols, p as isize, 1);
    let mut dx = vec![T::zero(); g.input.len()];
    col2im(cols, g, &mut dx);
    Some(dx)
}

pub(crate) fn pool_out(input: Vol, kernel: [usize; 3], stride: [usize; 3]) -> Vol {
    Vol {
        c: input.c,
        t: (input.t - kernel[0]) / stride[0] + 1,
        h: (input.h - kernel[1]) / stride[1] + 1,
        w: (input.w - kernel[2]) / stride[2] + 1,
    }
}

/// Max pooling; returns outputs and the flat input index of each winner.
/// Ties resolve to the first element in scan order.
pub(crate) fn max_pool_forward<T: Real>(x: &[T], input: Vol, kernel: [usize; 3], stride: [usize; 3]) -> (Vec<T>, Vec<u32>) {
    let o = pool_out(input, kernel, stride);
    let mut out = Vec::with_capacity(o.len());
    let mut arg = Vec::with_capacity(o.len());
    for c in 0..o.c {
        let base = c * input.spatial();
        for ot in 0..o.t {
            for oh in 0..o.h {
                for ow in 0..o.w {
                    let mut best = T::neg_infinity();
                    let mut best_i = 0usize;
                    for dt in 0..kernel[0] {
                        for dh in 0..kernel[1] {
                            let row = base + ((ot * stride[0] + dt) * input.h + oh * stride[1] + dh) * input.w;
                            for dw in 0..kernel[2] {
                                let idx = row + ow * stride[2] + dw;
                                if x[idx] > best {
                                    best = x[idx];
                                    best_i = idx;
                                }
                            }
                        }
                    }
                    out.push(best);
                    arg.push(best_i as u32);
                }
            }
        }
    }
    (out, arg)
}

pub(crate) fn max_pool_backward<T: Real>(dout: &[T], arg: &[u32], input_len: usize) -> Vec<T> {
    let mut dx = vec![T::zero(); input_len];
    for (&g, &i) in dout.iter().zip(arg) {
        dx[i as usize] += g;
    }
    dx
}

pub(crate) fn avg_pool_forward<T: Real>(x: &[T], input: Vol, kernel: [usize; 3], stride: [usize; 3]) -> Vec<T> {
    let o = pool_out(input, kernel, stride);
    let scale = T::one() / T::of(kernel.iter().product::<usize>() as f64);
    let mut out = Vec::with_capacity(o.len());
    for c in 0..o.c {
        let base = c * input.spatial();
        for ot in 0..o.t {
            for oh in 0..o.h {
                for ow in 0..o.w {
                    let mut acc = T::zero();
                    for dt in 0..kernel[0] {
                        for dh in 0..kernel[1] {
                            let row = base + ((ot * stride[0] + dt) * input.h + oh * stride[1] + dh) * input.w;
                            for dw in 0..kernel[2] {
                                acc += x[row + ow * stride[2] + dw];
                            }
                        }
                    }
                    out.push(acc * scale);
                }
            }
        }
    }
    out
}

pub(crate) fn avg_pool_backward<T: Real>(dout: &[T], input: Vol, kernel: [usize; 3], stride: [usize; 3]) -> Vec<T> {
    let o = pool_out(input, kernel, stride);
    let scale = T::one() / T::of(kernel.iter().product::<usize>() as f64);
    let mut dx = vec![T::zero(); input.len()];
    let mut n = 0;
    for c in 0..o.c {
        let base = c * input.spatial();
        for ot in 0..o.t {
            for oh in 0..o.h {
                for ow in 0..o.w {
                    let g = dout[n] * scale;
                    n += 1;
                    for dt in 0..kernel[0] {
                        for dh in 0..kernel[1] {
                            let row = base + ((ot * stride[0] + dt) * input.h + oh * stride[1] + dh) * input.w;
                            for dw in 0..kernel[2] {
                                dx[row + ow * stride[2] + dw] += g;
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}

pub(crate) fn relu_forward<T: Real>(x: &[T]) -> Vec<T> {
    x.iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect()
}

/// Subgradient at exactly zero is zero.
pub(crate) fn relu_backward<T: Real>(out: &[T], dout: &[T]) -> Vec<T> {
    out.iter().zip(dout).map(|(&y, &g)| if y > T::zero() { g } else { T::zero() }).collect()
}

pub(crate) fn global_avg_forward<T: Real>(x: &[T], input: Vol) -> Vec<T> {
    let n = input.spatial();
    let scale = T::one() / T::of(n as f64);
    x.chunks_exact(n).map(|ch| ch.iter().copied().sum::<T>() * scale).collect()
}

pub(crate) fn global_avg_backward<T: Real>(dout: &[T], input: Vol) -> Vec<T> {
    let n = input.spatial();
    let scale = T::one() / T::of(n as f64);
    dout.iter().flat_map(|&g| std::iter::repeat(g * scale).take(n)).collect()
}

pub(crate) fn linear_forward<T: Real>(x: &[T], weight: &[T], bias: &[T]) -> Vec<T> {
    let n = x.len();
    weight
        .chunks_exact(n)
        .zip(bias)
        .map(|(row, &b)| row.iter().zip(x).fold(b, |acc, (&w, &v)| acc + w * v))
        .collect()
}

pub(crate) fn linear_backward<T: Real>(
    x: &[T],
    weight: &[T],
    dout: &[T],
    dweight: Option<(&mut [T], &mut [T])>,
) -> Vec<T> {
    let n = x.len();
    if let Some((dw, db)) = dweight {
        for (o, &g) in dout.iter().enumerate() {
            db[o] += g;
            for (d, &v) in dw[o * n..(o + 1) * n].iter_mut().zip(x) {
                *d += g * v;
            }
        }
    }
    let mut dx = vec![T::zero(); n];
    for (row, &g) in weight.chunks_exact(n).zip(dout) {
        for (d, &w) in dx.iter_mut().zip(row) {
            *d += g * w;
        }
    }
    dx
}
