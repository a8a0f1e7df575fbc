//! Broadcasted-residual network.
//!
//! Each block computes `y = x + BC(f1(avgpool_F(f2(x))))` on a `C x F x T`
//! map: `f2` is a per-channel frequency convolution, the pool averages out
//! frequency, `f1` is a temporal depthwise conv + ReLU + pointwise conv, and
//! `BC` broadcasts the `C x T` result back over every frequency row.

use ndarray::Array3;
use rand::Rng;

use super::layers::{
    broadcast_add, broadcast_backward, freq_avgpool, freq_avgpool_backward, mean_last, mean_last_backward, relu,
    relu_backward, Conv1d, FreqDepthwise, Linear, Stem2d, TimeDepthwise,
};
use super::params::ParamStore;
use super::ModelConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct BcBlock {
    pub channels: usize,
    f2: FreqDepthwise,
    f1_time: TimeDepthwise,
    f1_point: Conv1d,
}

pub(super) struct BlockCache {
    x: Vec<f64>,
    pooled: Vec<f64>,
    q_pre: Vec<f64>,
    q: Vec<f64>,
}

impl BcBlock {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        BcBlock {
            channels,
            f2: FreqDepthwise::new(store, &format!("{name}.f2_freq"), channels),
            f1_time: TimeDepthwise::new(store, &format!("{name}.f1_time"), channels),
            f1_point: Conv1d::new(store, &format!("{name}.f1_point"), channels, channels, 1, 1, 0),
        }
    }

    pub fn init<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) {
        store.init_uniform(self.f2.weight, (6.0f64 / 3.0).sqrt(), rng);
        store.init_uniform(self.f1_time.weight, (6.0f64 / 3.0).sqrt(), rng);
        store.init_uniform(self.f1_point.weight, (3.0 / self.channels as f64).sqrt(), rng);
    }

    /// Zero every parameter of both branches; the block becomes the identity.
    pub fn zero_branches(&self, store: &mut ParamStore) {
        for id in [
            self.f2.weight,
            self.f2.bias,
            self.f1_time.weight,
            self.f1_time.bias,
            self.f1_point.weight,
            self.f1_point.bias,
        ] {
            store.get_mut(id).fill(0.0);
        }
    }

    pub(super) fn forward_raw(&self, p: &ParamStore, x: Vec<f64>, n_f: usize, n_t: usize) -> (Vec<f64>, BlockCache) {
        let c = self.channels;
        let z = self.f2.forward(p, &x, n_f, n_t);
        let pooled = freq_avgpool(&z, c, n_f, n_t);
        let q_pre = self.f1_time.forward(p, &pooled, n_t);
        let q = relu(&q_pre);
        let r = self.f1_point.forward(p, &q, n_t);
        let y = broadcast_add(&x, &r, c, n_f, n_t);
        (y, BlockCache { x, pooled, q_pre, q })
    }

    pub(super) fn backward_raw(
        &self,
        p: &ParamStore,
        grad: &mut [f64],
        cache: &BlockCache,
        n_f: usize,
        n_t: usize,
        dy: &[f64],
    ) -> Vec<f64> {
        let c = self.channels;
        let dr = broadcast_backward(dy, c, n_f, n_t);
        let dq = self.f1_point.backward(p, grad, &cache.q, n_t, &dr);
        let dq_pre = relu_backward(&cache.q_pre, &dq);
        let d_pooled = self.f1_time.backward(p, grad, &cache.pooled, n_t, &dq_pre);
        let dz = freq_avgpool_backward(&d_pooled, c, n_f, n_t);
        let mut dx = self.f2.backward(p, grad, &cache.x, n_f, n_t, &dz);
        for (d, g) in dx.iter_mut().zip(dy) {
            *d += g;
        }
        dx
    }

    /// Apply the block to a `C x F x T` map.
    pub fn apply(&self, store: &ParamStore, x: &Array3<f64>) -> Result<Array3<f64>> {
        let (c, n_f, n_t) = x.dim();
        if c != self.channels {
            return Err(Error::Shape(format!(
                "block has {} channels, input has {c}",
                self.channels
            )));
        }
        if n_f == 0 || n_t == 0 {
            return Err(Error::Shape("empty feature map".into()));
        }
        let flat: Vec<f64> = x.iter().copied().collect();
        let (y, _) = self.forward_raw(store, flat, n_f, n_t);
        Array3::from_shape_vec((c, n_f, n_t), y).map_err(|e| Error::Shape(e.to_string()))
    }
}

#[derive(Debug, Clone)]
pub struct BcNet {
    input_dim: usize,
    stem: Stem2d,
    pub blocks: Vec<BcBlock>,
    head: Linear,
}

pub(super) struct Cache {
    x: Vec<f64>,
    t: usize,
    stem_pre: Vec<f64>,
    blocks: Vec<(BlockCache, Vec<f64>)>,
    pooled: Vec<f64>,
}

impl BcNet {
    pub fn build(cfg: &ModelConfig, store: &mut ParamStore) -> Result<Self> {
        let c = *cfg
            .channels
            .first()
            .ok_or_else(|| Error::Config("bc_block_net needs a channel width".into()))?;
        let stem = Stem2d::new(store, "stem", c);
        let blocks = (0..cfg.bc_blocks)
            .map(|i| BcBlock::new(store, &format!("block{i}"), c))
            .collect();
        let head = Linear::new(store, "head", c, cfg.n_classes);
        Ok(BcNet {
            input_dim: cfg.input_dim,
            stem,
            blocks,
            head,
        })
    }

    pub fn init<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) {
        store.init_uniform(self.stem.weight, (6.0f64 / 9.0).sqrt(), rng);
        for b in &self.blocks {
            b.init(store, rng);
        }
        store.init_uniform(self.head.weight, 1.0 / (self.head.n_in as f64).sqrt(), rng);
    }

    /// `x` is `D x T` (frequency rows).
    pub(super) fn forward(&self, p: &ParamStore, x: Vec<f64>, t: usize) -> Result<(Vec<f64>, Cache)> {
        if t == 0 {
            return Err(Error::Shape("zero frames".into()));
        }
        let (c, n_f) = (self.stem.channels, self.input_dim);
        let stem_pre = self.stem.forward(p, &x, n_f, t);
        let mut h = relu(&stem_pre);
        let mut caches = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (y_pre, bc) = b.forward_raw(p, h, n_f, t);
            h = relu(&y_pre);
            caches.push((bc, y_pre));
        }
        let pooled = mean_last(&h, c, n_f * t);
        let logits = self.head.forward(p, &pooled);
        Ok((
            logits,
            Cache {
                x,
                t,
                stem_pre,
                blocks: caches,
                pooled,
            },
        ))
    }

    pub(super) fn backward(&self, p: &ParamStore, grad: &mut [f64], cache: &Cache, d_logits: &[f64]) {
        let (n_f, t) = (self.input_dim, cache.t);
        let d_pooled = self.head.backward(p, grad, &cache.pooled, d_logits);
        let mut dh = mean_last_backward(&d_pooled, n_f * t);
        for (b, (bc, y_pre)) in self.blocks.iter().zip(&cache.blocks).rev() {
            let d_pre = relu_backward(y_pre, &dh);
            dh = b.backward_raw(p, grad, bc, n_f, t, &d_pre);
        }
        let d_stem = relu_backward(&cache.stem_pre, &dh);
        self.stem.backward(p, grad, &cache.x, n_f, t, &d_stem);
    }
}
