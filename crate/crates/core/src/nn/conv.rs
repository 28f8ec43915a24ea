//! 3x3 convolution (padding 1) on top of dgemm: shifted GEMMs for stride 1, im2col for stride 2.

use super::tensor::FeatureMap;

pub(crate) const TAPS: usize = 9;

pub(crate) fn out_dim(n: usize, stride: usize) -> usize {
    (n - 1) / stride + 1
}

fn im2col(input: &FeatureMap, stride: usize, oh: usize, ow: usize) -> Vec<f64> {
    let (h, w) = (input.height as isize, input.width as isize);
    let n = oh * ow;
    let mut col = vec![0.0; input.channels * TAPS * n];
    for ci in 0..input.channels {
        let plane = input.channel(ci);
        for ky in 0..3isize {
            for kx in 0..3isize {
                let row = (ci * TAPS + (ky * 3 + kx) as usize) * n;
                let dst = &mut col[row..row + n];
                for oy in 0..oh {
                    let iy = (oy * stride) as isize + ky - 1;
                    if iy < 0 || iy >= h {
                        continue;
                    }
                    let src = &plane[(iy * w) as usize..((iy + 1) * w) as usize];
                    let out = &mut dst[oy * ow..(oy + 1) * ow];
                    if stride == 1 {
                        // Contiguous shifted copy with the borders left zero.
                        let lo = if kx == 0 { 1 } else { 0 };
                        let hi = if kx == 2 { ow - 1 } else { ow };
                        for ox in lo..hi {
                            out[ox] = src[(ox as isize + kx - 1) as usize];
                        }
                    } else {
                        for (ox, o) in out.iter_mut().enumerate() {
                            let ix = (ox * stride) as isize + kx - 1;
                            if ix >= 0 && ix < w {
                                *o = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    col
}

fn col2im(col: &[f64], grad_in: &mut FeatureMap, stride: usize, oh: usize, ow: usize) {
    let (h, w) = (grad_in.height as isize, grad_in.width as isize);
    let n = oh * ow;
    for ci in 0..grad_in.channels {
        let plane = grad_in.channel_mut(ci);
        for ky in 0..3isize {
            for kx in 0..3isize {
                let row = (ci * TAPS + (ky * 3 + kx) as usize) * n;
                let src = &col[row..row + n];
                for oy in 0..oh {
                    let iy = (oy * stride) as isize + ky - 1;
                    if iy < 0 || iy >= h {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * stride) as isize + kx - 1;
                        if ix >= 0 && ix < w {
                            plane[(iy * w + ix) as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// `C += A·B` where row `i` of `C` starts at `i * rsc`.
#[allow(clippy::too_many_arguments)]
fn gemm_into(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    c: &mut [f64],
    rsc: usize,
) {
    debug_assert!(m == 0 || c.len() >= (m - 1) * rsc + n);
    // SAFETY: as for `gemm`; row i of C spans [i*rsc, i*rsc + n) within `c`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            1.0,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        );
    }
}

/// `C = A·B` (or `C += A·B` with `accumulate`) for row-major operands whose
/// strides are passed explicitly so transposed views cost nothing.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    c: &mut [f64],
    accumulate: bool,
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: every index the kernel touches, `(i*rs + j*cs)` for i < rows and
    // j < cols, lies inside the slices passed here; callers size them exactly.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            if accumulate { 1.0 } else { 0.0 },
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Zero-padded copy of `input` with planes of `(h + 2) x (w + 2)` and two
/// slack entries at the end, so every tap is a contiguous offset view.
fn pad(input: &FeatureMap) -> Vec<f64> {
    let (h, w) = (input.height, input.width);
    let pw = w + 2;
    let plane = (h + 2) * pw;
    let mut out = vec![0.0; input.channels * plane + 2];
    for c in 0..input.channels {
        let src = input.channel(c);
        let dst = &mut out[c * plane..(c + 1) * plane];
        for y in 0..h {
            dst[(y + 1) * pw + 1..(y + 1) * pw + 1 + w].copy_from_slice(&src[y * w..(y + 1) * w]);
        }
    }
    out
}

/// Tap weights `W[:, :, tap]` gathered into a contiguous `cout x cin` block.
fn tap_weights(weights: &[f64], cin: usize, cout: usize) -> Vec<Vec<f64>> {
    (0..TAPS)
        .map(|tap| {
            let mut m = Vec::with_capacity(cout * cin);
            for co in 0..cout {
                for ci in 0..cin {
                    m.push(weights[(co * cin + ci) * TAPS + tap]);
                }
            }
            m
        })
        .collect()
}

// Stride-1 convolution as nine GEMMs over shifted views of the padded
// input. Outputs are computed on an `h x (w + 2)` grid whose last two
// columns are discarded.
fn forward_stride1(input: &FeatureMap, weights: &[f64], cout: usize) -> FeatureMap {
    let (cin, h, w) = (input.channels, input.height, input.width);
    let pw = w + 2;
    let plane = (h + 2) * pw;
    let n = h * pw;
    let padded = pad(input);
    let taps = tap_weights(weights, cin, cout);
    let mut wide = vec![0.0; cout * n];
    for (tap, wt) in taps.iter().enumerate() {
        let off = (tap / 3) * pw + tap % 3;
        gemm(
            cout,
            cin,
            n,
            wt,
            cin,
            1,
            &padded[off..],
            plane,
            1,
            &mut wide,
            tap > 0,
        );
    }
    let mut out = FeatureMap::zeros(cout, h, w);
    for co in 0..cout {
        let dst = out.channel_mut(co);
        for y in 0..h {
            dst[y * w..(y + 1) * w].copy_from_slice(&wide[co * n + y * pw..co * n + y * pw + w]);
        }
    }
    out
}

fn backward_stride1(
    input: &FeatureMap,
    weights: &[f64],
    grad_out: &FeatureMap,
    grad_w: &mut [f64],
) -> FeatureMap {
    let (cin, h, w) = (input.channels, input.height, input.width);
    let cout = grad_out.channels;
    let pw = w + 2;
    let plane = (h + 2) * pw;
    let n = h * pw;
    let padded = pad(input);
    // Output gradient on the wide grid; the discarded columns stay zero.
    let mut wide = vec![0.0; cout * n];
    for co in 0..cout {
        let src = grad_out.channel(co);
        for y in 0..h {
            wide[co * n + y * pw..co * n + y * pw + w].copy_from_slice(&src[y * w..(y + 1) * w]);
        }
    }
    let taps = tap_weights(weights, cin, cout);
    let mut grad_pad = vec![0.0; cin * plane + 2];
    let mut gw = vec![0.0; cout * cin];
    for (tap, wt) in taps.iter().enumerate() {
        let off = (tap / 3) * pw + tap % 3;
        // dW_tap (cout x cin) = dOut (cout x n) · view_tapᵀ (n x cin)
        gemm(
            cout,
            n,
            cin,
            &wide,
            n,
            1,
            &padded[off..],
            1,
            plane,
            &mut gw,
            false,
        );
        for co in 0..cout {
            for ci in 0..cin {
                grad_w[(co * cin + ci) * TAPS + tap] += gw[co * cin + ci];
            }
        }
        // view_tap(dIn) (cin x n) += W_tapᵀ (cin x cout) · dOut (cout x n)
        gemm_into(
            cin,
            cout,
            n,
            wt,
            1,
            cin,
            &wide,
            n,
            1,
            &mut grad_pad[off..],
            plane,
        );
    }
    let mut grad_in = FeatureMap::zeros(cin, h, w);
    for c in 0..cin {
        let dst = grad_in.channel_mut(c);
        for y in 0..h {
            let row = c * plane + (y + 1) * pw + 1;
            dst[y * w..(y + 1) * w].copy_from_slice(&grad_pad[row..row + w]);
        }
    }
    grad_in
}

pub(crate) fn forward(
    input: &FeatureMap,
    weights: &[f64],
    cout: usize,
    stride: usize,
) -> FeatureMap {
    if stride == 1 {
        return forward_stride1(input, weights, cout);
    }
    let oh = out_dim(input.height, stride);
    let ow = out_dim(input.width, stride);
    let k = input.channels * TAPS;
    let n = oh * ow;
    let col = im2col(input, stride, oh, ow);
    let mut out = FeatureMap::zeros(cout, oh, ow);
    gemm(cout, k, n, weights, k, 1, &col, n, 1, &mut out.data, false);
    out
}

/// Accumulates the weight gradient into `grad_w` and returns the input gradient.
pub(crate) fn backward(
    input: &FeatureMap,
    weights: &[f64],
    grad_out: &FeatureMap,
    stride: usize,
    grad_w: &mut [f64],
) -> FeatureMap {
    if stride == 1 {
        return backward_stride1(input, weights, grad_out, grad_w);
    }
    let (oh, ow) = (grad_out.height, grad_out.width);
    let cout = grad_out.channels;
    let k = input.channels * TAPS;
    let n = oh * ow;
    let col = im2col(input, stride, oh, ow);
    // dW (cout x k) += dOut (cout x n) · colᵀ (n x k)
    gemm(cout, n, k, &grad_out.data, n, 1, &col, 1, n, grad_w, true);
    // dcol (k x n) = Wᵀ (k x cout) · dOut (cout x n)
    let mut dcol = vec![0.0; k * n];
    gemm(
        k,
        cout,
        n,
        weights,
        1,
        k,
        &grad_out.data,
        n,
        1,
        &mut dcol,
        false,
    );
    let mut grad_in = FeatureMap::zeros(input.channels, input.height, input.width);
    col2im(&dcol, &mut grad_in, stride, oh, ow);
    grad_in
}

pub(crate) fn upsample2x(input: &FeatureMap) -> FeatureMap {
    let (h, w) = (input.height, input.width);
    let mut out = FeatureMap::zeros(input.channels, 2 * h, 2 * w);
    for c in 0..input.channels {
        let src = input.channel(c);
        let dst = out.channel_mut(c);
        for y in 0..2 * h {
            for x in 0..2 * w {
                dst[y * 2 * w + x] = src[(y / 2) * w + x / 2];
            }
        }
    }
    out
}

/// Adjoint of [`upsample2x`]: sums each 2x2 block.
pub(crate) fn upsample2x_adjoint(grad: &FeatureMap) -> FeatureMap {
    let (h, w) = (grad.height / 2, grad.width / 2);
    let mut out = FeatureMap::zeros(grad.channels, h, w);
    for c in 0..grad.channels {
        let src = grad.channel(c);
        let dst = out.channel_mut(c);
        for y in 0..2 * h {
            for x in 0..2 * w {
                dst[(y / 2) * w + x / 2] += src[y * 2 * w + x];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    // Direct nested-loop convolution used as an independent reference.
    fn naive(input: &FeatureMap, weights: &[f64], cout: usize, stride: usize) -> FeatureMap {
        let oh = out_dim(input.height, stride);
        let ow = out_dim(input.width, stride);
        let mut out = FeatureMap::zeros(cout, oh, ow);
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for ci in 0..input.channels {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let iy = (oy * stride + ky) as isize - 1;
                                let ix = (ox * stride + kx) as isize - 1;
                                if iy >= 0
                                    && ix >= 0
                                    && (iy as usize) < input.height
                                    && (ix as usize) < input.width
                                {
                                    acc += weights[co * input.channels * 9 + ci * 9 + ky * 3 + kx]
                                        * input.channel(ci)
                                            [iy as usize * input.width + ix as usize];
                                }
                            }
                        }
                    }
                    out.data[co * oh * ow + oy * ow + ox] = acc;
                }
            }
        }
        out
    }

    fn pseudo(n: usize, seed: u64) -> Vec<f64> {
        let mut s = seed;
        (0..n)
            .map(|_| {
                s = s
                    .wrapping_mul(6364136223846793005)
                    .wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
            })
            .collect()
    }

    #[test]
    fn gemm_conv_matches_naive() {
        for &(cin, cout, h, w, stride) in &[
            (1, 1, 5, 5, 1),
            (3, 4, 7, 6, 1),
            (2, 3, 8, 8, 2),
            (2, 2, 7, 5, 2),
        ] {
            let input = FeatureMap {
                channels: cin,
                height: h,
                width: w,
                data: pseudo(cin * h * w, 1),
            };
            let weights = pseudo(cout * cin * 9, 2);
            let a = forward(&input, &weights, cout, stride);
            let b = naive(&input, &weights, cout, stride);
            assert_eq!((a.height, a.width), (b.height, b.width));
            for (x, y) in a.data.iter().zip(&b.data) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn upsample_adjoint_identity() {
        // <U x, y> = <x, Uᵀ y>
        let x = FeatureMap {
            channels: 2,
            height: 3,
            width: 4,
            data: pseudo(24, 3),
        };
        let y = FeatureMap {
            channels: 2,
            height: 6,
            width: 8,
            data: pseudo(96, 4),
        };
        let ux = upsample2x(&x);
        let uty = upsample2x_adjoint(&y);
        let lhs: f64 = ux.data.iter().zip(&y.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data.iter().zip(&uty.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn backward_is_the_adjoint_of_forward() {
        // <conv(x; W), g> = <x, dx> and, since conv is linear in W, = <W, dW>.
        for &(cin, cout, h, w, stride) in &[(2, 3, 6, 5, 1), (3, 2, 8, 8, 2), (1, 4, 4, 7, 1)] {
            let input = FeatureMap {
                channels: cin,
                height: h,
                width: w,
                data: pseudo(cin * h * w, 5),
            };
            let weights = pseudo(cout * cin * 9, 6);
            let out = forward(&input, &weights, cout, stride);
            let g = FeatureMap {
                channels: cout,
                height: out.height,
                width: out.width,
                data: pseudo(out.data.len(), 7),
            };
            let mut gw = vec![0.0; weights.len()];
            let gx = backward(&input, &weights, &g, stride, &mut gw);
            let lhs: f64 = out.data.iter().zip(&g.data).map(|(a, b)| a * b).sum();
            let via_x: f64 = input.data.iter().zip(&gx.data).map(|(a, b)| a * b).sum();
            let via_w: f64 = weights.iter().zip(&gw).map(|(a, b)| a * b).sum();
            assert!((lhs - via_x).abs() < 1e-12, "{lhs} vs {via_x}");
            assert!((lhs - via_w).abs() < 1e-12, "{lhs} vs {via_w}");
        }
    }
}
