//! Per-layer kernels. Activations are channel-major `[c][h][w]` vectors.

use super::Layer;

pub(super) fn conv_forward(layer: &Layer, p: &[f64], x: &[f64]) -> Vec<f64> {
    let (ic, ih, iw) = (layer.input.c, layer.input.h, layer.input.w);
    let (oc, oh, ow) = (layer.output.c, layer.output.h, layer.output.w);
    let (weights, biases) = p.split_at(layer.weights);
    let mut out = vec![0.0; oc * oh * ow];
    for o in 0..oc {
        let plane = &mut out[o * oh * ow..(o + 1) * oh * ow];
        plane.iter_mut().for_each(|v| *v = biases[o]);
        for i in 0..ic {
            let k = &weights[(o * ic + i) * 9..(o * ic + i) * 9 + 9];
            let src = &x[i * ih * iw..(i + 1) * ih * iw];
            for r in 0..oh {
                let dst = &mut plane[r * ow..(r + 1) * ow];
                for kr in 0..3 {
                    let row = &src[(r + kr) * iw..(r + kr) * iw + iw];
                    let (k0, k1, k2) = (k[kr * 3], k[kr * 3 + 1], k[kr * 3 + 2]);
                    for (c, d) in dst.iter_mut().enumerate() {
                        *d += k0 * row[c] + k1 * row[c + 1] + k2 * row[c + 2];
                    }
                }
            }
        }
    }
    out
}

/// Accumulates parameter gradients into `gp`; returns the input gradient
/// (empty when `need_input` is false).
pub(super) fn conv_backward(
    layer: &Layer,
    p: &[f64],
    x: &[f64],
    g: &[f64],
    gp: &mut [f64],
    need_input: bool,
) -> Vec<f64> {
    let (ic, ih, iw) = (layer.input.c, layer.input.h, layer.input.w);
    let (oc, oh, ow) = (layer.output.c, layer.output.h, layer.output.w);
    let weights = &p[..layer.weights];
    let (gw, gb) = gp.split_at_mut(layer.weights);
    let mut gx = if need_input {
        vec![0.0; ic * ih * iw]
    } else {
        Vec::new()
    };
    for o in 0..oc {
        let gplane = &g[o * oh * ow..(o + 1) * oh * ow];
        gb[o] += gplane.iter().sum::<f64>();
        for i in 0..ic {
            let base = (o * ic + i) * 9;
            let src = &x[i * ih * iw..(i + 1) * ih * iw];
            for kr in 0..3 {
                for kc in 0..3 {
                    let mut acc = 0.0;
                    for r in 0..oh {
                        let row = &src[(r + kr) * iw + kc..(r + kr) * iw + kc + ow];
                        let grow = &gplane[r * ow..(r + 1) * ow];
                        acc += row.iter().zip(grow).map(|(a, b)| a * b).sum::<f64>();
                    }
                    gw[base + kr * 3 + kc] += acc;
                }
            }
            if need_input {
                let k = &weights[base..base + 9];
                let dst = &mut gx[i * ih * iw..(i + 1) * ih * iw];
                for r in 0..oh {
                    let grow = &gplane[r * ow..(r + 1) * ow];
                    for kr in 0..3 {
                        let drow = &mut dst[(r + kr) * iw..(r + kr) * iw + iw];
                        let (k0, k1, k2) = (k[kr * 3], k[kr * 3 + 1], k[kr * 3 + 2]);
                        for (c, &gv) in grow.iter().enumerate() {
                            drow[c] += k0 * gv;
                            drow[c + 1] += k1 * gv;
                            drow[c + 2] += k2 * gv;
                        }
                    }
                }
            }
        }
    }
    gx
}

pub(super) fn dense_forward(layer: &Layer, p: &[f64], x: &[f64]) -> Vec<f64> {
    let n_in = layer.input.len();
    let (weights, biases) = p.split_at(layer.weights);
    biases
        .iter()
        .enumerate()
        .map(|(u, &b)| {
            let row = &weights[u * n_in..(u + 1) * n_in];
            b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
        })
        .collect()
}

pub(super) fn dense_backward(
    layer: &Layer,
    p: &[f64],
    x: &[f64],
    g: &[f64],
    gp: &mut [f64],
    need_input: bool,
) -> Vec<f64> {
    let n_in = layer.input.len();
    let weights = &p[..layer.weights];
    let (gw, gb) = gp.split_at_mut(layer.weights);
    let mut gx = if need_input { vec![0.0; n_in] } else { Vec::new() };
    for (u, &gu) in g.iter().enumerate() {
        gb[u] += gu;
        if gu == 0.0 {
            continue;
        }
        let grow = &mut gw[u * n_in..(u + 1) * n_in];
        for (gwv, &xv) in grow.iter_mut().zip(x) {
            *gwv += gu * xv;
        }
        if need_input {
            let row = &weights[u * n_in..(u + 1) * n_in];
            for (gxv, &w) in gx.iter_mut().zip(row) {
                *gxv += gu * w;
            }
        }
    }
    gx
}

pub(super) fn pool_forward(layer: &Layer, x: &[f64]) -> (Vec<f64>, Vec<u32>) {
    let (ih, iw) = (layer.input.h, layer.input.w);
    let (c, oh, ow) = (layer.output.c, layer.output.h, layer.output.w);
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut idx = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let base = ch * ih * iw;
        for r in 0..oh {
            for col in 0..ow {
                let mut best = base + 2 * r * iw + 2 * col;
                for (dr, dc) in [(0, 1), (1, 0), (1, 1)] {
                    let j = base + (2 * r + dr) * iw + 2 * col + dc;
                    if x[j] > x[best] {
                        best = j;
                    }
                }
                out.push(x[best]);
                idx.push(best as u32);
            }
        }
    }
    (out, idx)
}

pub(super) fn pool_backward(layer: &Layer, idx: &[u32], g: &[f64]) -> Vec<f64> {
    let mut gx = vec![0.0; layer.input.len()];
    for (&j, &gv) in idx.iter().zip(g) {
        gx[j as usize] += gv;
    }
    gx
}

pub(super) fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Gradient with respect to the logits given one with respect to the
/// probabilities: `p * (g - <g, p>)`.
pub(super) fn softmax_backward(p: &[f64], g: &[f64]) -> Vec<f64> {
    let dot: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
    p.iter().zip(g).map(|(pv, gv)| pv * (gv - dot)).collect()
}
