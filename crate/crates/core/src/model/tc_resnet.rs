//! TC-ResNet-style classifier: MFCC coefficients are input channels and all
//! convolutions run along time.
//!
//! conv(D -> c0, k=first_kernel, valid) -> 3 x [residual block, stride 2]
//! -> mean over time -> linear.

use rand::Rng;

use super::layers::{mean_last, mean_last_backward, relu, relu_backward, Conv1d, Linear};
use super::params::ParamStore;
use super::ModelConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
struct Block {
    conv_a: Conv1d,
    conv_b: Conv1d,
    shortcut: Conv1d,
}

struct BlockCache {
    x: Vec<f64>,
    t_in: usize,
    a_pre: Vec<f64>,
    a: Vec<f64>,
    t_out: usize,
    sum: Vec<f64>,
}

impl Block {
    fn forward(&self, p: &ParamStore, x: Vec<f64>, t_in: usize) -> (Vec<f64>, BlockCache) {
        let a_pre = self.conv_a.forward(p, &x, t_in);
        let t_out = self.conv_a.out_len(t_in).unwrap();
        let a = relu(&a_pre);
        let b = self.conv_b.forward(p, &a, t_out);
        let s = self.shortcut.forward(p, &x, t_in);
        let sum: Vec<f64> = b.iter().zip(&s).map(|(u, v)| u + v).collect();
        let out = relu(&sum);
        (
            out,
            BlockCache {
                x,
                t_in,
                a_pre,
                a,
                t_out,
                sum,
            },
        )
    }

    fn backward(&self, p: &ParamStore, grad: &mut [f64], c: &BlockCache, dy: &[f64]) -> Vec<f64> {
        let d_sum = relu_backward(&c.sum, dy);
        let d_a = self.conv_b.backward(p, grad, &c.a, c.t_out, &d_sum);
        let d_a_pre = relu_backward(&c.a_pre, &d_a);
        let mut dx = self.conv_a.backward(p, grad, &c.x, c.t_in, &d_a_pre);
        let dx_s = self.shortcut.backward(p, grad, &c.x, c.t_in, &d_sum);
        for (d, s) in dx.iter_mut().zip(&dx_s) {
            *d += s;
        }
        dx
    }
}

#[derive(Debug, Clone)]
pub struct TcResNet {
    input_dim: usize,
    first: Conv1d,
    blocks: Vec<Block>,
    head: Linear,
}

pub(super) struct Cache {
    x: Vec<f64>,
    t: usize,
    blocks: Vec<BlockCache>,
    t_last: usize,
    pooled: Vec<f64>,
}

impl TcResNet {
    pub fn build(cfg: &ModelConfig, store: &mut ParamStore) -> Result<Self> {
        if cfg.channels.len() < 2 {
            return Err(Error::Config(
                "tc_resnet8 needs a stem width plus at least one block width".into(),
            ));
        }
        let k = cfg.block_kernel;
        let first = Conv1d::new(store, "stem", cfg.input_dim, cfg.channels[0], cfg.first_kernel, 1, 0);
        let blocks = cfg
            .channels
            .windows(2)
            .enumerate()
            .map(|(i, w)| Block {
                conv_a: Conv1d::new(store, &format!("block{i}.conv_a"), w[0], w[1], k, 2, k / 2),
                conv_b: Conv1d::new(store, &format!("block{i}.conv_b"), w[1], w[1], k, 1, k / 2),
                shortcut: Conv1d::new(store, &format!("block{i}.shortcut"), w[0], w[1], 1, 2, 0),
            })
            .collect();
        let head = Linear::new(store, "head", *cfg.channels.last().unwrap(), cfg.n_classes);
        Ok(TcResNet {
            input_dim: cfg.input_dim,
            first,
            blocks,
            head,
        })
    }

    pub fn init<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) {
        let he = |fan_in: usize| (6.0 / fan_in as f64).sqrt();
        store.init_uniform(self.first.weight, he(self.first.fan_in()), rng);
        for b in &self.blocks {
            for conv in [&b.conv_a, &b.conv_b, &b.shortcut] {
                store.init_uniform(conv.weight, he(conv.fan_in()), rng);
            }
        }
        store.init_uniform(self.head.weight, 1.0 / (self.head.n_in as f64).sqrt(), rng);
    }

    /// Frames left after the stem; the blocks keep at least one frame from there.
    pub fn check_frames(&self, t: usize) -> Result<()> {
        if self.first.out_len(t).is_none() {
            return Err(Error::Shape(format!(
                "{t} frames is shorter than the {}-frame stem kernel",
                self.first.kernel
            )));
        }
        Ok(())
    }

    /// `x` is `D x T` (coefficients as channels).
    pub(super) fn forward(&self, p: &ParamStore, x: Vec<f64>, t: usize) -> Result<(Vec<f64>, Cache)> {
        self.check_frames(t)?;
        debug_assert_eq!(x.len(), self.input_dim * t);
        let mut h = self.first.forward(p, &x, t);
        let mut t_cur = self.first.out_len(t).unwrap();
        let mut caches = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (out, c) = b.forward(p, h, t_cur);
            t_cur = c.t_out;
            caches.push(c);
            h = out;
        }
        let c_last = self.head.n_in;
        let pooled = mean_last(&h, c_last, t_cur);
        let logits = self.head.forward(p, &pooled);
        Ok((
            logits,
            Cache {
                x,
                t,
                blocks: caches,
                t_last: t_cur,
                pooled,
            },
        ))
    }

    pub(super) fn backward(&self, p: &ParamStore, grad: &mut [f64], cache: &Cache, d_logits: &[f64]) {
        let d_pooled = self.head.backward(p, grad, &cache.pooled, d_logits);
        let mut dh = mean_last_backward(&d_pooled, cache.t_last);
        for (b, c) in self.blocks.iter().zip(&cache.blocks).rev() {
            dh = b.backward(p, grad, c, &dh);
        }
        self.first.backward(p, grad, &cache.x, cache.t, &dh);
    }
}
