//! Forward and backward kernels over raw row-major buffers.
//!
//! Image tensors are `[N, C, H, W]`. Every backward kernel returns (or
//! accumulates) the gradients of its forward counterpart given the output
//! gradient `g`.

use super::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImageDims {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl ImageDims {
    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn example(&self) -> usize {
        self.c * self.h * self.w
    }
}

/// Unfolds one `[C, H, W]` example into `[C * 9, H * W]` columns for a
/// 3×3 kernel with zero padding 1.
fn im2col3x3<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, col: &mut [T]) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut col[((ci * 9) + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let out = &mut row[y * w..(y + 1) * w];
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        out.fill(T::zero());
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => {
                            out[0] = T::zero();
                            out[1..].copy_from_slice(&src[..w - 1]);
                        }
                        1 => out.copy_from_slice(src),
                        _ => {
                            out[..w - 1].copy_from_slice(&src[1..]);
                            out[w - 1] = T::zero();
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col3x3`]: accumulates columns back into `dx`.
fn col2im3x3<T: Scalar>(col: &[T], c: usize, h: usize, w: usize, dx: &mut [T]) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut dx[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &col[((ci * 9) + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &row[y * w..(y + 1) * w];
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => {
                            for (d, &s) in dst[..w - 1].iter_mut().zip(&src[1..]) {
                                *d = *d + s;
                            }
                        }
                        1 => {
                            for (d, &s) in dst.iter_mut().zip(src) {
                                *d = *d + s;
                            }
                        }
                        _ => {
                            for (d, &s) in dst[1..].iter_mut().zip(&src[..w - 1]) {
                                *d = *d + s;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Same-padded 3×3 cross-correlation. `weight` is `[C_out, C_in, 3, 3]`.
pub fn conv3x3_forward<T: Scalar>(x: &[T], dims: ImageDims, weight: &[T], bias: &[T], c_out: usize) -> Vec<T> {
    let hw = dims.plane();
    let k = dims.c * 9;
    let mut col = vec![T::zero(); k * hw];
    let mut out = vec![T::zero(); dims.n * c_out * hw];
    for n in 0..dims.n {
        im2col3x3(
            &x[n * dims.example()..][..dims.example()],
            dims.c,
            dims.h,
            dims.w,
            &mut col,
        );
        let y = &mut out[n * c_out * hw..][..c_out * hw];
        for (co, plane) in y.chunks_exact_mut(hw).enumerate() {
            plane.fill(bias[co]);
        }
        T::gemm(
            c_out,
            k,
            hw,
            T::one(),
            weight,
            (k as isize, 1),
            &col,
            (hw as isize, 1),
            T::one(),
            y,
            (hw as isize, 1),
        );
    }
    out
}

/// Returns `(dx, dweight, dbias)`.
pub fn conv3x3_backward<T: Scalar>(
    x: &[T],
    dims: ImageDims,
    weight: &[T],
    c_out: usize,
    g: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let hw = dims.plane();
    let k = dims.c * 9;
    let mut col = vec![T::zero(); k * hw];
    let mut dcol = vec![T::zero(); k * hw];
    let mut dx = vec![T::zero(); x.len()];
    let mut dw = vec![T::zero(); c_out * k];
    let mut db = vec![T::zero(); c_out];
    for n in 0..dims.n {
        let gy = &g[n * c_out * hw..][..c_out * hw];
        for (co, plane) in gy.chunks_exact(hw).enumerate() {
            db[co] = db[co] + plane.iter().copied().sum::<T>();
        }
        im2col3x3(
            &x[n * dims.example()..][..dims.example()],
            dims.c,
            dims.h,
            dims.w,
            &mut col,
        );
        // dW += gY · colᵀ
        T::gemm(
            c_out,
            hw,
            k,
            T::one(),
            gy,
            (hw as isize, 1),
            &col,
            (1, hw as isize),
            T::one(),
            &mut dw,
            (k as isize, 1),
        );
        // dcol = Wᵀ · gY
        T::gemm(
            k,
            c_out,
            hw,
            T::one(),
            weight,
            (1, k as isize),
            gy,
            (hw as isize, 1),
            T::zero(),
            &mut dcol,
            (hw as isize, 1),
        );
        col2im3x3(
            &dcol,
            dims.c,
            dims.h,
            dims.w,
            &mut dx[n * dims.example()..][..dims.example()],
        );
    }
    (dx, dw, db)
}

/// Stride-2 2×2 transposed convolution. `weight` is `[C_in, C_out, 2, 2]`.
/// The output is `[N, C_out, out_h, out_w]` with `out_h >= 2H`, `out_w >= 2W`;
/// positions beyond `2H × 2W` receive only the bias.
pub fn tconv2x2_forward<T: Scalar>(
    x: &[T],
    dims: ImageDims,
    weight: &[T],
    bias: &[T],
    c_out: usize,
    out_hw: (usize, usize),
) -> Vec<T> {
    let hw = dims.plane();
    let (oh, ow) = out_hw;
    let rows = c_out * 4;
    let mut cols = vec![T::zero(); rows * hw];
    let mut out = vec![T::zero(); dims.n * c_out * oh * ow];
    for n in 0..dims.n {
        let xs = &x[n * dims.example()..][..dims.example()];
        // cols[co*4 + ky*2 + kx, p] = Σ_ci w[ci, co, ky, kx] · x[ci, p]
        T::gemm(
            rows,
            dims.c,
            hw,
            T::one(),
            weight,
            (1, rows as isize),
            xs,
            (hw as isize, 1),
            T::zero(),
            &mut cols,
            (hw as isize, 1),
        );
        let y = &mut out[n * c_out * oh * ow..][..c_out * oh * ow];
        for co in 0..c_out {
            let plane = &mut y[co * oh * ow..][..oh * ow];
            plane.fill(bias[co]);
            for ky in 0..2 {
                for kx in 0..2 {
                    let src = &cols[(co * 4 + ky * 2 + kx) * hw..][..hw];
                    for i in 0..dims.h {
                        let orow = &mut plane[(2 * i + ky) * ow..][..ow];
                        for j in 0..dims.w {
                            orow[2 * j + kx] = orow[2 * j + kx] + src[i * dims.w + j];
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn tconv2x2_backward<T: Scalar>(
    x: &[T],
    dims: ImageDims,
    weight: &[T],
    c_out: usize,
    out_hw: (usize, usize),
    g: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let hw = dims.plane();
    let (oh, ow) = out_hw;
    let rows = c_out * 4;
    let mut gcols = vec![T::zero(); rows * hw];
    let mut dx = vec![T::zero(); x.len()];
    let mut dw = vec![T::zero(); dims.c * rows];
    let mut db = vec![T::zero(); c_out];
    for n in 0..dims.n {
        let gy = &g[n * c_out * oh * ow..][..c_out * oh * ow];
        for co in 0..c_out {
            let plane = &gy[co * oh * ow..][..oh * ow];
            db[co] = db[co] + plane.iter().copied().sum::<T>();
            for ky in 0..2 {
                for kx in 0..2 {
                    let dst = &mut gcols[(co * 4 + ky * 2 + kx) * hw..][..hw];
                    for i in 0..dims.h {
                        let grow = &plane[(2 * i + ky) * ow..][..ow];
                        for j in 0..dims.w {
                            dst[i * dims.w + j] = grow[2 * j + kx];
                        }
                    }
                }
            }
        }
        let xs = &x[n * dims.example()..][..dims.example()];
        // dx = W · gcols   (W viewed as [C_in, C_out*4])
        T::gemm(
            dims.c,
            rows,
            hw,
            T::one(),
            weight,
            (rows as isize, 1),
            &gcols,
            (hw as isize, 1),
            T::zero(),
            &mut dx[n * dims.example()..][..dims.example()],
            (hw as isize, 1),
        );
        // dW += x · gcolsᵀ
        T::gemm(
            dims.c,
            hw,
            rows,
            T::one(),
            xs,
            (hw as isize, 1),
            &gcols,
            (1, hw as isize),
            T::one(),
            &mut dw,
            (rows as isize, 1),
        );
    }
    (dx, dw, db)
}

/// 2×2 max pooling with stride 2; a trailing odd row/column is dropped.
/// Returns the pooled values and the flat input index of each maximum.
pub fn maxpool2x2_forward<T: Scalar>(x: &[T], dims: ImageDims) -> (Vec<T>, Vec<u32>) {
    let (oh, ow) = (dims.h / 2, dims.w / 2);
    let mut out = Vec::with_capacity(dims.n * dims.c * oh * ow);
    let mut arg = Vec::with_capacity(out.capacity());
    for plane_idx in 0..dims.n * dims.c {
        let base = plane_idx * dims.plane();
        for i in 0..oh {
            for j in 0..ow {
                let mut best = base + 2 * i * dims.w + 2 * j;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * i + dy) * dims.w + 2 * j + dx;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                arg.push(best as u32);
            }
        }
    }
    (out, arg)
}

pub fn maxpool2x2_backward<T: Scalar>(input_len: usize, argmax: &[u32], g: &[T]) -> Vec<T> {
    let mut dx = vec![T::zero(); input_len];
    for (&idx, &gv) in argmax.iter().zip(g) {
        dx[idx as usize] = dx[idx as usize] + gv;
    }
    dx
}

/// Source coordinate and interpolation weight for corner-aligned resizing.
fn resize_taps(out_len: usize, in_len: usize) -> Vec<(usize, usize, f64)> {
    (0..out_len)
        .map(|o| {
            let src = if out_len > 1 {
                o as f64 * (in_len - 1) as f64 / (out_len - 1) as f64
            } else {
                0.0
            };
            let lo = (src.floor() as usize).min(in_len - 1);
            let hi = (lo + 1).min(in_len - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

/// Bilinear resize with corner alignment (endpoints map exactly).
pub fn resize_bilinear_forward<T: Scalar>(x: &[T], dims: ImageDims, out_hw: (usize, usize)) -> Vec<T> {
    let (oh, ow) = out_hw;
    let ty = resize_taps(oh, dims.h);
    let tx = resize_taps(ow, dims.w);
    let mut out = Vec::with_capacity(dims.n * dims.c * oh * ow);
    for p in 0..dims.n * dims.c {
        let plane = &x[p * dims.plane()..][..dims.plane()];
        for &(y0, y1, wy) in &ty {
            let wy = T::from_f64_lossy(wy);
            for &(x0, x1, wx) in &tx {
                let wx = T::from_f64_lossy(wx);
                let top = plane[y0 * dims.w + x0] * (T::one() - wx) + plane[y0 * dims.w + x1] * wx;
                let bot = plane[y1 * dims.w + x0] * (T::one() - wx) + plane[y1 * dims.w + x1] * wx;
                out.push(top * (T::one() - wy) + bot * wy);
            }
        }
    }
    out
}

pub fn resize_bilinear_backward<T: Scalar>(dims: ImageDims, out_hw: (usize, usize), g: &[T]) -> Vec<T> {
    let (oh, ow) = out_hw;
    let ty = resize_taps(oh, dims.h);
    let tx = resize_taps(ow, dims.w);
    let mut dx = vec![T::zero(); dims.n * dims.example()];
    for p in 0..dims.n * dims.c {
        let plane = &mut dx[p * dims.plane()..][..dims.plane()];
        let gp = &g[p * oh * ow..][..oh * ow];
        for (oy, &(y0, y1, wy)) in ty.iter().enumerate() {
            let wy = T::from_f64_lossy(wy);
            for (ox, &(x0, x1, wx)) in tx.iter().enumerate() {
                let wx = T::from_f64_lossy(wx);
                let gv = gp[oy * ow + ox];
                let top = gv * (T::one() - wy);
                let bot = gv * wy;
                plane[y0 * dims.w + x0] = plane[y0 * dims.w + x0] + top * (T::one() - wx);
                plane[y0 * dims.w + x1] = plane[y0 * dims.w + x1] + top * wx;
                plane[y1 * dims.w + x0] = plane[y1 * dims.w + x0] + bot * (T::one() - wx);
                plane[y1 * dims.w + x1] = plane[y1 * dims.w + x1] + bot * wx;
            }
        }
    }
    dx
}

/// `y[m, o] = Σ_i x[m, i] w[o, i] + b[o]`.
pub fn linear_forward<T: Scalar>(
    x: &[T],
    rows: usize,
    in_f: usize,
    weight: &[T],
    bias: Option<&[T]>,
    out_f: usize,
) -> Vec<T> {
    let mut y = vec![T::zero(); rows * out_f];
    if let Some(b) = bias {
        for row in y.chunks_exact_mut(out_f) {
            row.copy_from_slice(b);
        }
    }
    T::gemm(
        rows,
        in_f,
        out_f,
        T::one(),
        x,
        (in_f as isize, 1),
        weight,
        (1, in_f as isize),
        T::one(),
        &mut y,
        (out_f as isize, 1),
    );
    y
}

pub fn linear_backward<T: Scalar>(
    x: &[T],
    rows: usize,
    in_f: usize,
    weight: &[T],
    out_f: usize,
    g: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let mut dx = vec![T::zero(); rows * in_f];
    T::gemm(
        rows,
        out_f,
        in_f,
        T::one(),
        g,
        (out_f as isize, 1),
        weight,
        (in_f as isize, 1),
        T::zero(),
        &mut dx,
        (in_f as isize, 1),
    );
    let mut dw = vec![T::zero(); out_f * in_f];
    T::gemm(
        out_f,
        rows,
        in_f,
        T::one(),
        g,
        (1, out_f as isize),
        x,
        (in_f as isize, 1),
        T::zero(),
        &mut dw,
        (in_f as isize, 1),
    );
    let mut db = vec![T::zero(); out_f];
    for row in g.chunks_exact(out_f) {
        for (d, &v) in db.iter_mut().zip(row) {
            *d = *d + v;
        }
    }
    (dx, dw, db)
}

/// Batched matrix product `c[g] = a[g] · b[g]` (or `a[g] · b[g]ᵀ`).
pub fn bmm_forward<T: Scalar>(
    a: &[T],
    b: &[T],
    groups: usize,
    m: usize,
    k: usize,
    n: usize,
    transpose_b: bool,
) -> Vec<T> {
    let mut c = vec![T::zero(); groups * m * n];
    let b_strides = if transpose_b { (1, k as isize) } else { (n as isize, 1) };
    for g in 0..groups {
        T::gemm(
            m,
            k,
            n,
            T::one(),
            &a[g * m * k..][..m * k],
            (k as isize, 1),
            &b[g * k * n..][..k * n],
            b_strides,
            T::zero(),
            &mut c[g * m * n..][..m * n],
            (n as isize, 1),
        );
    }
    c
}

pub fn bmm_backward<T: Scalar>(
    a: &[T],
    b: &[T],
    groups: usize,
    m: usize,
    k: usize,
    n: usize,
    transpose_b: bool,
    gc: &[T],
) -> (Vec<T>, Vec<T>) {
    let mut da = vec![T::zero(); a.len()];
    let mut db = vec![T::zero(); b.len()];
    for g in 0..groups {
        let ag = &a[g * m * k..][..m * k];
        let bg = &b[g * k * n..][..k * n];
        let gg = &gc[g * m * n..][..m * n];
        let da_g = &mut da[g * m * k..][..m * k];
        if transpose_b {
            // b is [n, k]; da = gc · b ; db = gcᵀ · a
            T::gemm(
                m,
                n,
                k,
                T::one(),
                gg,
                (n as isize, 1),
                bg,
                (k as isize, 1),
                T::zero(),
                da_g,
                (k as isize, 1),
            );
            T::gemm(
                n,
                m,
                k,
                T::one(),
                gg,
                (1, n as isize),
                ag,
                (k as isize, 1),
                T::zero(),
                &mut db[g * k * n..][..k * n],
                (k as isize, 1),
            );
        } else {
            // b is [k, n]; da = gc · bᵀ ; db = aᵀ · gc
            T::gemm(
                m,
                n,
                k,
                T::one(),
                gg,
                (n as isize, 1),
                bg,
                (1, n as isize),
                T::zero(),
                da_g,
                (k as isize, 1),
            );
            T::gemm(
                k,
                m,
                n,
                T::one(),
                ag,
                (1, k as isize),
                gg,
                (n as isize, 1),
                T::zero(),
                &mut db[g * k * n..][..k * n],
                (n as isize, 1),
            );
        }
    }
    (da, db)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &[f64], d: ImageDims, w: &[f64], b: &[f64], c_out: usize) -> Vec<f64> {
        let mut out = vec![0.0; d.n * c_out * d.plane()];
        for n in 0..d.n {
            for co in 0..c_out {
                for y in 0..d.h as isize {
                    for xx in 0..d.w as isize {
                        let mut acc = b[co];
                        for ci in 0..d.c {
                            for ky in 0..3isize {
                                for kx in 0..3isize {
                                    let (sy, sx) = (y + ky - 1, xx + kx - 1);
                                    if sy < 0 || sx < 0 || sy >= d.h as isize || sx >= d.w as isize {
                                        continue;
                                    }
                                    acc += w[((co * d.c + ci) * 3 + ky as usize) * 3 + kx as usize]
                                        * x[((n * d.c + ci) * d.h + sy as usize) * d.w + sx as usize];
                                }
                            }
                        }
                        out[((n * c_out + co) * d.h + y as usize) * d.w + xx as usize] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_loops() {
        let d = ImageDims { n: 2, c: 3, h: 5, w: 4 };
        let x: Vec<f64> = (0..d.n * d.example()).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let w: Vec<f64> = (0..2 * 3 * 9).map(|i| ((i * 13) % 7) as f64 * 0.1 - 0.3).collect();
        let b = [0.5, -0.25];
        let got = conv3x3_forward(&x, d, &w, &b, 2);
        for (g, e) in got.iter().zip(naive_conv(&x, d, &w, &b, 2)) {
            assert!((g - e).abs() < 1e-12, "{g} vs {e}");
        }
    }

    #[test]
    fn conv_hand_sum_all_ones_kernel() {
        let d = ImageDims { n: 1, c: 1, h: 2, w: 2 };
        let out = conv3x3_forward(&[1.0f64, 2.0, 3.0, 4.0], d, &[1.0; 9], &[0.0], 1);
        assert_eq!(out, vec![10.0; 4]);
    }

    #[test]
    fn tconv_single_value() {
        let d = ImageDims { n: 1, c: 1, h: 1, w: 1 };
        let out = tconv2x2_forward(&[3.0f64], d, &[1.0, 2.0, 3.0, 4.0], &[0.0], 1, (2, 2));
        assert_eq!(out, vec![3.0, 6.0, 9.0, 12.0]);
        let padded = tconv2x2_forward(&[3.0f64], d, &[1.0, 2.0, 3.0, 4.0], &[0.5], 1, (3, 2));
        assert_eq!(padded, vec![3.5, 6.5, 9.5, 12.5, 0.5, 0.5]);
    }

    #[test]
    fn maxpool_picks_maximum_and_floors() {
        let d = ImageDims { n: 1, c: 1, h: 3, w: 3 };
        let x = [1.0f64, 2.0, 9.0, 3.0, 4.0, 9.0, 9.0, 9.0, 9.0];
        let (out, arg) = maxpool2x2_forward(&x, d);
        assert_eq!(out, vec![4.0]);
        assert_eq!(arg, vec![4]);
    }

    #[test]
    fn resize_keeps_corners() {
        let d = ImageDims { n: 1, c: 1, h: 1, w: 2 };
        let out = resize_bilinear_forward(&[0.0f64, 1.0], d, (1, 4));
        assert_eq!(out[0], 0.0);
        assert_eq!(out[3], 1.0);
        assert!((out[1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn bmm_transpose_variants_agree() {
        let a: Vec<f64> = (0..2 * 2 * 3).map(|i| i as f64).collect();
        let b: Vec<f64> = (0..2 * 3 * 4).map(|i| (i as f64) * 0.5 - 3.0).collect();
        // bᵀ stored explicitly
        let mut bt = vec![0.0; b.len()];
        for g in 0..2 {
            for r in 0..3 {
                for c in 0..4 {
                    bt[g * 12 + c * 3 + r] = b[g * 12 + r * 4 + c];
                }
            }
        }
        assert_eq!(
            bmm_forward(&a, &b, 2, 2, 3, 4, false),
            bmm_forward(&a, &bt, 2, 2, 3, 4, true)
        );
    }
}
