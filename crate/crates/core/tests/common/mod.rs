//! Test-only reference implementations shared by the integration tests.
//!
//! The forward pass here parses weight files on its own and evaluates each
//! layer with plain nested loops in f64, storing activations as f32.

#![allow(dead_code)]

use std::path::PathBuf;

pub fn fixture(name: &str) -> Vec<u8> {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name);
    std::fs::read(p).unwrap()
}

pub enum RefLayer {
    Dense { n_in: usize, n_out: usize, w: Vec<f64>, b: Vec<f64> },
    Conv { g: [usize; 7], w: Vec<f64>, b: Vec<f64>, transposed: bool },
}

struct Cursor<'a>(&'a [u8], usize);

impl Cursor<'_> {
    fn u32(&mut self) -> usize {
        let v = u32::from_le_bytes(self.0[self.1..self.1 + 4].try_into().unwrap());
        self.1 += 4;
        v as usize
    }
    fn f32s(&mut self, n: usize) -> Vec<f64> {
        (0..n)
            .map(|_| {
                let v = f32::from_le_bytes(self.0[self.1..self.1 + 4].try_into().unwrap());
                self.1 += 4;
                v as f64
            })
            .collect()
    }
}

pub fn parse(bytes: &[u8]) -> Vec<RefLayer> {
    assert_eq!(&bytes[..4], b"L2VW");
    let mut c = Cursor(bytes, 4);
    assert_eq!(c.u32(), 1);
    let _role = c.u32();
    let count = c.u32();
    let mut layers = Vec::new();
    for _ in 0..count {
        match c.u32() {
            2 => {
                let (n_in, n_out) = (c.u32(), c.u32());
                let w = c.f32s(n_in * n_out);
                let b = c.f32s(n_out);
                layers.push(RefLayer::Dense { n_in, n_out, w, b });
            }
            kind => {
                let g: [usize; 7] = std::array::from_fn(|_| c.u32());
                let w = c.f32s(g[0] * g[1] * g[4] * g[4]);
                let b = c.f32s(g[1]);
                layers.push(RefLayer::Conv { g, w, b, transposed: kind == 1 });
            }
        }
    }
    assert_eq!(c.1, bytes.len());
    layers
}

fn layer(l: &RefLayer, x: &[f64]) -> Vec<f64> {
    match l {
        RefLayer::Dense { n_in, n_out, w, b } => (0..*n_out)
            .map(|o| b[o] + (0..*n_in).map(|i| w[o * n_in + i] * x[i]).sum::<f64>())
            .collect(),
        RefLayer::Conv { g, w, b, transposed: false } => {
            let [cin, cout, h, wd, k, s, p] = *g;
            let oh = (h + 2 * p - k) / s + 1;
            let ow = (wd + 2 * p - k) / s + 1;
            let mut out = Vec::new();
            for oc in 0..cout {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = b[oc];
                        for ic in 0..cin {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * s + ky) as isize - p as isize;
                                    let ix = (ox * s + kx) as isize - p as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                        acc += w[((oc * cin + ic) * k + ky) * k + kx]
                                            * x[(ic * h + iy as usize) * wd + ix as usize];
                                    }
                                }
                            }
                        }
                        out.push(acc);
                    }
                }
            }
            out
        }
        // gather form: each output pixel collects the inputs whose stride
        // grid lands on it, independent of the library's scatter loop
        RefLayer::Conv { g, w, b, transposed: true } => {
            let [cin, cout, h, wd, k, s, p] = *g;
            let oh = (h - 1) * s + k - 2 * p;
            let ow = (wd - 1) * s + k - 2 * p;
            let mut out = Vec::new();
            for oc in 0..cout {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = b[oc];
                        for ic in 0..cin {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let ny = (oy + p) as isize - ky as isize;
                                    let nx = (ox + p) as isize - kx as isize;
                                    if ny < 0 || nx < 0 || ny % s as isize != 0 || nx % s as isize != 0 {
                                        continue;
                                    }
                                    let (iy, ix) = (ny as usize / s, nx as usize / s);
                                    if iy < h && ix < wd {
                                        acc += w[((ic * cout + oc) * k + ky) * k + kx] * x[(ic * h + iy) * wd + ix];
                                    }
                                }
                            }
                        }
                        out.push(acc);
                    }
                }
            }
            out
        }
    }
}

pub fn reference(layers: &[RefLayer], input: &[f64]) -> Vec<f64> {
    let mut x = input.to_vec();
    for (i, l) in layers.iter().enumerate() {
        // activations are stored as f32 between layers, as in the format
        x = layer(l, &x).into_iter().map(|v| v as f32 as f64).collect();
        if i + 1 < layers.len() {
            x.iter_mut().for_each(|v| *v = v.max(0.0));
        }
    }
    x
}

pub fn assert_close(got: &[f64], want: &[f64]) {
    assert_eq!(got.len(), want.len());
    for (i, (&g, &w)) in got.iter().zip(want).enumerate() {
        let rel = (g - w).abs() / w.abs().max(1e-3);
        assert!(rel <= 1e-6, "element {i}: got {g}, reference {w}, relative error {rel:e}");
    }
}

/// Largest relative error between two equal-length outputs.
pub fn max_relative_error(got: &[f64], want: &[f64]) -> f64 {
    assert_eq!(got.len(), want.len());
    got.iter()
        .zip(want)
        .map(|(&g, &w)| (g - w).abs() / w.abs().max(1e-3))
        .fold(0.0, f64::max)
}
