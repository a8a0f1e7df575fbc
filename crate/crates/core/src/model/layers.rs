//! Single-example layers over row-major `Vec<f64>` activations.
//!
//! 1-D maps are `C x T`, 2-D maps are `C x F x T`. Each `backward` adds
//! parameter gradients into a full-size gradient buffer and returns the
//! gradient with respect to the layer input.

use super::params::{ParamId, ParamStore};

/// 1-D convolution over time with zero padding.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Conv1d {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        Conv1d {
            c_in,
            c_out,
            kernel,
            stride,
            pad,
            weight: store.add(format!("{name}.weight"), &[c_out, c_in, kernel]),
            bias: store.add(format!("{name}.bias"), &[c_out]),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.c_in * self.kernel
    }

    pub fn out_len(&self, t_in: usize) -> Option<usize> {
        let padded = t_in + 2 * self.pad;
        (padded >= self.kernel).then(|| (padded - self.kernel) / self.stride + 1)
    }

    pub fn forward(&self, p: &ParamStore, x: &[f64], t_in: usize) -> Vec<f64> {
        let t_out = self.out_len(t_in).expect("caller checks sequence length");
        let w = p.get(self.weight);
        let b = p.get(self.bias);
        let k = self.kernel;
        let mut y = vec![0.0; self.c_out * t_out];
        for o in 0..self.c_out {
            let yo = &mut y[o * t_out..(o + 1) * t_out];
            yo.fill(b[o]);
            for i in 0..self.c_in {
                let xi = &x[i * t_in..(i + 1) * t_in];
                let wk = &w[(o * self.c_in + i) * k..(o * self.c_in + i + 1) * k];
                for (t, yv) in yo.iter_mut().enumerate() {
                    let base = (t * self.stride) as isize - self.pad as isize;
                    let mut acc = 0.0;
                    for (j, &wv) in wk.iter().enumerate() {
                        let src = base + j as isize;
                        if src >= 0 && (src as usize) < t_in {
                            acc += wv * xi[src as usize];
                        }
                    }
                    *yv += acc;
                }
            }
        }
        y
    }

    pub fn backward(&self, p: &ParamStore, grad: &mut [f64], x: &[f64], t_in: usize, dy: &[f64]) -> Vec<f64> {
        let t_out = self.out_len(t_in).expect("caller checks sequence length");
        let w = p.get(self.weight);
        let k = self.kernel;
        let mut dx = vec![0.0; self.c_in * t_in];
        {
            let gb = p.grad(self.bias, grad);
            for o in 0..self.c_out {
                gb[o] += dy[o * t_out..(o + 1) * t_out].iter().sum::<f64>();
            }
        }
        let gw = p.grad(self.weight, grad);
        for o in 0..self.c_out {
            let dyo = &dy[o * t_out..(o + 1) * t_out];
            for i in 0..self.c_in {
                let xi = &x[i * t_in..(i + 1) * t_in];
                let dxi = &mut dx[i * t_in..(i + 1) * t_in];
                let widx = (o * self.c_in + i) * k;
                for (t, &g) in dyo.iter().enumerate() {
                    if g == 0.0 {
                        continue;
                    }
                    let base = (t * self.stride) as isize - self.pad as isize;
                    for j in 0..k {
                        let src = base + j as isize;
                        if src >= 0 && (src as usize) < t_in {
                            let s = src as usize;
                            gw[widx + j] += g * xi[s];
                            dxi[s] += g * w[widx + j];
                        }
                    }
                }
            }
        }
        dx
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub n_in: usize,
    pub n_out: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, n_in: usize, n_out: usize) -> Self {
        Linear {
            n_in,
            n_out,
            weight: store.add(format!("{name}.weight"), &[n_out, n_in]),
            bias: store.add(format!("{name}.bias"), &[n_out]),
        }
    }

    pub fn forward(&self, p: &ParamStore, x: &[f64]) -> Vec<f64> {
        let w = p.get(self.weight);
        let b = p.get(self.bias);
        (0..self.n_out)
            .map(|o| {
                b[o] + w[o * self.n_in..(o + 1) * self.n_in]
                    .iter()
                    .zip(x)
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
            })
            .collect()
    }

    pub fn backward(&self, p: &ParamStore, grad: &mut [f64], x: &[f64], dy: &[f64]) -> Vec<f64> {
        let w = p.get(self.weight);
        let mut dx = vec![0.0; self.n_in];
        for (o, &g) in dy.iter().enumerate() {
            for i in 0..self.n_in {
                dx[i] += g * w[o * self.n_in + i];
            }
        }
        {
            let gw = p.grad(self.weight, grad);
            for (o, &g) in dy.iter().enumerate() {
                for i in 0..self.n_in {
                    gw[o * self.n_in + i] += g * x[i];
                }
            }
        }
        let gb = p.grad(self.bias, grad);
        for (o, &g) in dy.iter().enumerate() {
            gb[o] += g;
        }
        dx
    }
}

/// Single-input-channel 3x3 convolution over a `F x T` map, zero padded, to `C x F x T`.
#[derive(Debug, Clone)]
pub struct Stem2d {
    pub channels: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Stem2d {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        Stem2d {
            channels,
            weight: store.add(format!("{name}.weight"), &[channels, 3, 3]),
            bias: store.add(format!("{name}.bias"), &[channels]),
        }
    }

    pub fn forward(&self, p: &ParamStore, x: &[f64], f: usize, t: usize) -> Vec<f64> {
        let w = p.get(self.weight);
        let b = p.get(self.bias);
        let mut y = vec![0.0; self.channels * f * t];
        for c in 0..self.channels {
            let wc = &w[c * 9..c * 9 + 9];
            for fi in 0..f {
                for ti in 0..t {
                    let mut acc = b[c];
                    for a in 0..3 {
                        let ff = fi as isize + a as isize - 1;
                        if ff < 0 || ff as usize >= f {
                            continue;
                        }
                        for bb in 0..3 {
                            let tt = ti as isize + bb as isize - 1;
                            if tt < 0 || tt as usize >= t {
                                continue;
                            }
                            acc += wc[a * 3 + bb] * x[ff as usize * t + tt as usize];
                        }
                    }
                    y[(c * f + fi) * t + ti] = acc;
                }
            }
        }
        y
    }

    /// Input gradient is not needed (the stem sees raw features).
    pub fn backward(&self, p: &ParamStore, grad: &mut [f64], x: &[f64], f: usize, t: usize, dy: &[f64]) {
        {
            let gb = p.grad(self.bias, grad);
            for c in 0..self.channels {
                gb[c] += dy[c * f * t..(c + 1) * f * t].iter().sum::<f64>();
            }
        }
        let gw = p.grad(self.weight, grad);
        for c in 0..self.channels {
            for fi in 0..f {
                for ti in 0..t {
                    let g = dy[(c * f + fi) * t + ti];
                    if g == 0.0 {
                        continue;
                    }
                    for a in 0..3 {
                        let ff = fi as isize + a as isize - 1;
                        if ff < 0 || ff as usize >= f {
                            continue;
                        }
                        for bb in 0..3 {
                            let tt = ti as isize + bb as isize - 1;
                            if tt < 0 || tt as usize >= t {
                                continue;
                            }
                            gw[c * 9 + a * 3 + bb] += g * x[ff as usize * t + tt as usize];
                        }
                    }
                }
            }
        }
    }
}

/// Per-channel 3-tap convolution along frequency with edge-replicate padding.
#[derive(Debug, Clone)]
pub struct FreqDepthwise {
    pub channels: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl FreqDepthwise {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        FreqDepthwise {
            channels,
            weight: store.add(format!("{name}.weight"), &[channels, 3]),
            bias: store.add(format!("{name}.bias"), &[channels]),
        }
    }

    fn tap(f: usize, j: usize, n_f: usize) -> usize {
        (f as isize + j as isize - 1).clamp(0, n_f as isize - 1) as usize
    }

    pub fn forward(&self, p: &ParamStore, x: &[f64], n_f: usize, n_t: usize) -> Vec<f64> {
        let w = p.get(self.weight);
        let b = p.get(self.bias);
        let mut y = vec![0.0; x.len()];
        for c in 0..self.channels {
            for f in 0..n_f {
                let out = &mut y[(c * n_f + f) * n_t..(c * n_f + f + 1) * n_t];
                out.fill(b[c]);
                for j in 0..3 {
                    let src = Self::tap(f, j, n_f);
                    let xs = &x[(c * n_f + src) * n_t..(c * n_f + src + 1) * n_t];
                    let wv = w[c * 3 + j];
                    for (o, &v) in out.iter_mut().zip(xs) {
                        *o += wv * v;
                    }
                }
            }
        }
        y
    }

    pub fn backward(
        &self,
        p: &ParamStore,
        grad: &mut [f64],
        x: &[f64],
        n_f: usize,
        n_t: usize,
        dy: &[f64],
    ) -> Vec<f64> {
        let w = p.get(self.weight);
        let mut dx = vec![0.0; x.len()];
        let mut gw = vec![0.0; self.channels * 3];
        let mut gb = vec![0.0; self.channels];
        for c in 0..self.channels {
            for f in 0..n_f {
                let g = &dy[(c * n_f + f) * n_t..(c * n_f + f + 1) * n_t];
                gb[c] += g.iter().sum::<f64>();
                for j in 0..3 {
                    let src = Self::tap(f, j, n_f);
                    let base = (c * n_f + src) * n_t;
                    let wv = w[c * 3 + j];
                    let mut acc = 0.0;
                    for (ti, &gv) in g.iter().enumerate() {
                        acc += gv * x[base + ti];
                        dx[base + ti] += gv * wv;
                    }
                    gw[c * 3 + j] += acc;
                }
            }
        }
        for (d, s) in p.grad(self.weight, grad).iter_mut().zip(&gw) {
            *d += s;
        }
        for (d, s) in p.grad(self.bias, grad).iter_mut().zip(&gb) {
            *d += s;
        }
        dx
    }
}

/// Per-channel 3-tap convolution along time on a `C x T` map, zero padded.
#[derive(Debug, Clone)]
pub struct TimeDepthwise {
    pub channels: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl TimeDepthwise {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        TimeDepthwise {
            channels,
            weight: store.add(format!("{name}.weight"), &[channels, 3]),
            bias: store.add(format!("{name}.bias"), &[channels]),
        }
    }

    pub fn forward(&self, p: &ParamStore, x: &[f64], n_t: usize) -> Vec<f64> {
        let w = p.get(self.weight);
        let b = p.get(self.bias);
        let mut y = vec![0.0; x.len()];
        for c in 0..self.channels {
            for t in 0..n_t {
                let mut acc = b[c];
                for j in 0..3 {
                    let s = t as isize + j as isize - 1;
                    if s >= 0 && (s as usize) < n_t {
                        acc += w[c * 3 + j] * x[c * n_t + s as usize];
                    }
                }
                y[c * n_t + t] = acc;
            }
        }
        y
    }

    pub fn backward(&self, p: &ParamStore, grad: &mut [f64], x: &[f64], n_t: usize, dy: &[f64]) -> Vec<f64> {
        let w = p.get(self.weight);
        let mut dx = vec![0.0; x.len()];
        let mut gw = vec![0.0; self.channels * 3];
        let mut gb = vec![0.0; self.channels];
        for c in 0..self.channels {
            for t in 0..n_t {
                let g = dy[c * n_t + t];
                gb[c] += g;
                for j in 0..3 {
                    let s = t as isize + j as isize - 1;
                    if s >= 0 && (s as usize) < n_t {
                        gw[c * 3 + j] += g * x[c * n_t + s as usize];
                        dx[c * n_t + s as usize] += g * w[c * 3 + j];
                    }
                }
            }
        }
        for (d, s) in p.grad(self.weight, grad).iter_mut().zip(&gw) {
            *d += s;
        }
        for (d, s) in p.grad(self.bias, grad).iter_mut().zip(&gb) {
            *d += s;
        }
        dx
    }
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

/// `dy` masked by `pre > 0`.
pub fn relu_backward(pre: &[f64], dy: &[f64]) -> Vec<f64> {
    pre.iter()
        .zip(dy)
        .map(|(&p, &g)| if p > 0.0 { g } else { 0.0 })
        .collect()
}

/// Mean over the last axis of a `rows x n` map.
pub fn mean_last(x: &[f64], rows: usize, n: usize) -> Vec<f64> {
    (0..rows)
        .map(|r| x[r * n..(r + 1) * n].iter().sum::<f64>() / n as f64)
        .collect()
}

pub fn mean_last_backward(dy: &[f64], n: usize) -> Vec<f64> {
    dy.iter().flat_map(|&g| std::iter::repeat_n(g / n as f64, n)).collect()
}

/// Frequency average of `C x F x T` into `C x T`.
pub fn freq_avgpool(x: &[f64], c: usize, n_f: usize, n_t: usize) -> Vec<f64> {
    let mut y = vec![0.0; c * n_t];
    for ci in 0..c {
        for f in 0..n_f {
            let row = &x[(ci * n_f + f) * n_t..(ci * n_f + f + 1) * n_t];
            for (o, &v) in y[ci * n_t..(ci + 1) * n_t].iter_mut().zip(row) {
                *o += v;
            }
        }
    }
    let inv = 1.0 / n_f as f64;
    y.iter_mut().for_each(|v| *v *= inv);
    y
}

/// Gradient of [`freq_avgpool`]; also the adjoint of broadcasting scaled by `1/F`.
pub fn freq_avgpool_backward(dy: &[f64], c: usize, n_f: usize, n_t: usize) -> Vec<f64> {
    let mut dx = vec![0.0; c * n_f * n_t];
    let inv = 1.0 / n_f as f64;
    for ci in 0..c {
        for f in 0..n_f {
            for t in 0..n_t {
                dx[(ci * n_f + f) * n_t + t] = dy[ci * n_t + t] * inv;
            }
        }
    }
    dx
}

/// `x[c, f, t] + r[c, t]` for every `f`.
pub fn broadcast_add(x: &[f64], r: &[f64], c: usize, n_f: usize, n_t: usize) -> Vec<f64> {
    let mut y = x.to_vec();
    for ci in 0..c {
        let rr = &r[ci * n_t..(ci + 1) * n_t];
        for f in 0..n_f {
            for (o, &v) in y[(ci * n_f + f) * n_t..(ci * n_f + f + 1) * n_t].iter_mut().zip(rr) {
                *o += v;
            }
        }
    }
    y
}

/// Sum over frequency: the adjoint of broadcasting.
pub fn broadcast_backward(dy: &[f64], c: usize, n_f: usize, n_t: usize) -> Vec<f64> {
    let mut dr = vec![0.0; c * n_t];
    for ci in 0..c {
        for f in 0..n_f {
            for (o, &g) in dr[ci * n_t..(ci + 1) * n_t]
                .iter_mut()
                .zip(&dy[(ci * n_f + f) * n_t..(ci * n_f + f + 1) * n_t])
            {
                *o += g;
            }
        }
    }
    dr
}
