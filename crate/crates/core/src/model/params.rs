use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::tensor::Tensor;
use super::{ModelConfig, PositionalEncoding};

/// Learnable parameters of one encoder block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub ln1_gain: Tensor,
    pub ln1_bias: Tensor,
    pub wq: Tensor,
    pub bq: Tensor,
    pub wk: Tensor,
    pub bk: Tensor,
    pub wv: Tensor,
    pub bv: Tensor,
    pub wo: Tensor,
    pub bo: Tensor,
    pub ln2_gain: Tensor,
    pub ln2_bias: Tensor,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

/// Every learnable tensor of the classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub input_w: Tensor,
    pub input_b: Tensor,
    /// Present only with learned positional embeddings.
    pub pos: Option<Tensor>,
    pub blocks: Vec<BlockParams>,
    pub final_gain: Tensor,
    pub final_bias: Tensor,
    pub head_w: Tensor,
    pub head_b: Tensor,
}

macro_rules! block_fields {
    ($m:ident) => {
        $m!(ln1_gain, ln1_bias, wq, bq, wk, bk, wv, bv, wo, bo, ln2_gain, ln2_bias, w1, b1, w2, b2)
    };
}

impl BlockParams {
    fn zeros(cfg: &ModelConfig) -> Self {
        let (d, m) = (cfg.model_dim, cfg.mlp_dim);
        Self {
            ln1_gain: Tensor::zeros(&[d]),
            ln1_bias: Tensor::zeros(&[d]),
            wq: Tensor::zeros(&[d, d]),
            bq: Tensor::zeros(&[d]),
            wk: Tensor::zeros(&[d, d]),
            bk: Tensor::zeros(&[d]),
            wv: Tensor::zeros(&[d, d]),
            bv: Tensor::zeros(&[d]),
            wo: Tensor::zeros(&[d, d]),
            bo: Tensor::zeros(&[d]),
            ln2_gain: Tensor::zeros(&[d]),
            ln2_bias: Tensor::zeros(&[d]),
            w1: Tensor::zeros(&[d, m]),
            b1: Tensor::zeros(&[m]),
            w2: Tensor::zeros(&[m, d]),
            b2: Tensor::zeros(&[d]),
        }
    }

    fn named(&self) -> Vec<(&'static str, &Tensor)> {
        macro_rules! list {
            ($($f:ident),*) => { vec![$((stringify!($f), &self.$f)),*] };
        }
        block_fields!(list)
    }

    fn named_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        macro_rules! list {
            ($($f:ident),*) => { vec![$((stringify!($f), &mut self.$f)),*] };
        }
        block_fields!(list)
    }
}

impl Params {
    /// All-zero parameters with the shapes `cfg` implies.
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let d = cfg.model_dim;
        Self {
            input_w: Tensor::zeros(&[cfg.input_dim, d]),
            input_b: Tensor::zeros(&[d]),
            pos: (cfg.positional == PositionalEncoding::Learned).then(|| Tensor::zeros(&[cfg.seq_len, d])),
            blocks: (0..cfg.depth).map(|_| BlockParams::zeros(cfg)).collect(),
            final_gain: Tensor::zeros(&[d]),
            final_bias: Tensor::zeros(&[d]),
            head_w: Tensor::zeros(&[d, cfg.num_classes]),
            head_b: Tensor::zeros(&[cfg.num_classes]),
        }
    }

    /// Seeded initialization.
    ///
    /// Projections draw from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`, biases are
    /// zero, layer-norm gains one, learned positions `N(0, 0.02^2)`. The
    /// classification head starts at zero so the first-step loss is exactly
    /// `ln(num_classes)`.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(cfg);
        let uniform = |t: &mut Tensor, rng: &mut ChaCha8Rng| {
            let bound = 1.0 / (t.shape[0] as f64).sqrt();
            t.data.iter_mut().for_each(|v| *v = rng.gen_range(-bound..bound));
        };
        uniform(&mut p.input_w, &mut rng);
        if let Some(pos) = p.pos.as_mut() {
            let normal = Normal::new(0.0, 0.02).expect("valid std");
            pos.data.iter_mut().for_each(|v| *v = normal.sample(&mut rng));
        }
        for b in &mut p.blocks {
            b.ln1_gain.data.fill(1.0);
            b.ln2_gain.data.fill(1.0);
            for w in [&mut b.wq, &mut b.wk, &mut b.wv, &mut b.wo, &mut b.w1, &mut b.w2] {
                uniform(w, &mut rng);
            }
        }
        p.final_gain.data.fill(1.0);
        p
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.tensors_mut().into_iter().for_each(|(_, t)| t.data.fill(0.0));
        z
    }

    /// `(name, tensor)` pairs in the fixed serialization order.
    pub fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = vec![
            ("input.weight".into(), &self.input_w),
            ("input.bias".into(), &self.input_b),
        ];
        if let Some(pos) = &self.pos {
            out.push(("pos_embedding".into(), pos));
        }
        for (i, b) in self.blocks.iter().enumerate() {
            out.extend(b.named().into_iter().map(|(n, t)| (format!("blocks.{i}.{n}"), t)));
        }
        out.push(("final_norm.gain".into(), &self.final_gain));
        out.push(("final_norm.bias".into(), &self.final_bias));
        out.push(("head.weight".into(), &self.head_w));
        out.push(("head.bias".into(), &self.head_b));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = vec![
            ("input.weight".into(), &mut self.input_w),
            ("input.bias".into(), &mut self.input_b),
        ];
        if let Some(pos) = self.pos.as_mut() {
            out.push(("pos_embedding".into(), pos));
        }
        for (i, b) in self.blocks.iter_mut().enumerate() {
            out.extend(b.named_mut().into_iter().map(|(n, t)| (format!("blocks.{i}.{n}"), t)));
        }
        out.push(("final_norm.gain".into(), &mut self.final_gain));
        out.push(("final_norm.bias".into(), &mut self.final_bias));
        out.push(("head.weight".into(), &mut self.head_w));
        out.push(("head.bias".into(), &mut self.head_b));
        out
    }

    pub fn count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// `self += other`, tensor by tensor.
    pub fn add_assign(&mut self, other: &Params) {
        for ((_, a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.data.iter_mut().zip(&b.data).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, k: f64) {
        for (_, t) in self.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v *= k);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_unique_and_ordered() {
        let cfg = ModelConfig::tiny();
        let p = Params::init(&cfg, 1);
        let names: Vec<String> = p.tensors().into_iter().map(|(n, _)| n).collect();
        let mut dedup = names.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), names.len());
        assert_eq!(names.first().unwrap(), "input.weight");
        assert_eq!(names.last().unwrap(), "head.bias");
    }

    #[test]
    fn init_is_seeded() {
        let cfg = ModelConfig::tiny();
        assert_eq!(Params::init(&cfg, 3), Params::init(&cfg, 3));
        assert_ne!(Params::init(&cfg, 3), Params::init(&cfg, 4));
    }
}
