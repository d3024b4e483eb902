//! Layer kernels. Tensors are channel-major (C, H, W); sums accumulate in f64.

use super::weights::{ConvGeometry, Layer};

pub(crate) fn dense(inputs: usize, outputs: usize, w: &[f32], b: &[f32], x: &[f32]) -> Vec<f32> {
    debug_assert_eq!(x.len(), inputs);
    (0..outputs)
        .map(|o| {
            let row = &w[o * inputs..(o + 1) * inputs];
            let acc: f64 = row
                .iter()
                .zip(x)
                .map(|(&wi, &xi)| wi as f64 * xi as f64)
                .sum();
            (acc + b[o] as f64) as f32
        })
        .collect()
}

pub(crate) fn conv(g: &ConvGeometry, w: &[f32], b: &[f32], x: &[f32]) -> Vec<f32> {
    let (h, wd) = (g.in_height as isize, g.in_width as isize);
    let oh = (g.in_height + 2 * g.padding - g.kernel) / g.stride + 1;
    let ow = (g.in_width + 2 * g.padding - g.kernel) / g.stride + 1;
    let k = g.kernel;
    let (s, p) = (g.stride as isize, g.padding as isize);
    let mut out = vec![0f32; g.out_channels * oh * ow];
    let mut acc = vec![0f64; oh * ow];
    for oc in 0..g.out_channels {
        acc.fill(b[oc] as f64);
        for ic in 0..g.in_channels {
            let plane = &x[ic * g.in_height * g.in_width..(ic + 1) * g.in_height * g.in_width];
            for ky in 0..k {
                for kx in 0..k {
                    let wv = w[((oc * g.in_channels + ic) * k + ky) * k + kx] as f64;
                    if wv == 0.0 {
                        continue;
                    }
                    for oy in 0..oh {
                        let iy = oy as isize * s - p + ky as isize;
                        if iy < 0 || iy >= h {
                            continue;
                        }
                        let row = &plane[iy as usize * g.in_width..(iy as usize + 1) * g.in_width];
                        let acc_row = &mut acc[oy * ow..(oy + 1) * ow];
                        for (ox, a) in acc_row.iter_mut().enumerate() {
                            let ix = ox as isize * s - p + kx as isize;
                            if ix >= 0 && ix < wd {
                                *a += wv * row[ix as usize] as f64;
                            }
                        }
                    }
                }
            }
        }
        for (o, a) in out[oc * oh * ow..(oc + 1) * oh * ow].iter_mut().zip(&acc) {
            *o = *a as f32;
        }
    }
    out
}

/// Transposed convolution, scattering each input pixel through the kernel.
pub(crate) fn deconv(g: &ConvGeometry, w: &[f32], b: &[f32], x: &[f32]) -> Vec<f32> {
    let k = g.kernel;
    let oh = (g.in_height - 1) * g.stride + k - 2 * g.padding;
    let ow = (g.in_width - 1) * g.stride + k - 2 * g.padding;
    let (s, p) = (g.stride as isize, g.padding as isize);
    let mut acc = vec![0f64; g.out_channels * oh * ow];
    for oc in 0..g.out_channels {
        acc[oc * oh * ow..(oc + 1) * oh * ow].fill(b[oc] as f64);
    }
    for ic in 0..g.in_channels {
        for iy in 0..g.in_height {
            for ix in 0..g.in_width {
                let v = x[(ic * g.in_height + iy) * g.in_width + ix] as f64;
                if v == 0.0 {
                    continue;
                }
                for oc in 0..g.out_channels {
                    let kernel = &w[((ic * g.out_channels + oc) * k * k)..((ic * g.out_channels + oc + 1) * k * k)];
                    let plane = &mut acc[oc * oh * ow..(oc + 1) * oh * ow];
                    for ky in 0..k {
                        let oy = iy as isize * s - p + ky as isize;
                        if oy < 0 || oy >= oh as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ox = ix as isize * s - p + kx as isize;
                            if ox < 0 || ox >= ow as isize {
                                continue;
                            }
                            plane[oy as usize * ow + ox as usize] += v * kernel[ky * k + kx] as f64;
                        }
                    }
                }
            }
        }
    }
    acc.into_iter().map(|a| a as f32).collect()
}

pub(crate) fn apply(layer: &Layer, x: &[f32]) -> Vec<f32> {
    match layer {
        Layer::Dense {
            inputs,
            outputs,
            weights,
            bias,
        } => dense(*inputs, *outputs, weights, bias, x),
        Layer::Conv {
            geometry,
            weights,
            bias,
        } => conv(geometry, weights, bias, x),
        Layer::Deconv {
            geometry,
            weights,
            bias,
        } => deconv(geometry, weights, bias, x),
    }
}

/// Runs every layer with ReLU between them; the last layer's raw output is
/// returned for the caller's head activation.
pub(crate) fn run(layers: &[Layer], input: &[f32]) -> Vec<f32> {
    let mut x = input.to_vec();
    let last = layers.len() - 1;
    for (i, layer) in layers.iter().enumerate() {
        x = apply(layer, &x);
        if i != last {
            x.iter_mut().for_each(|v| *v = v.max(0.0));
        }
    }
    x
}
