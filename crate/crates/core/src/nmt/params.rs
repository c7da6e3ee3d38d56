use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::config::ModelConfig;

/// Named trainable arrays, iterated in name order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterSet<T: Scalar> {
    entries: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> ParameterSet<T> {
    pub fn from_entries(entries: BTreeMap<String, Tensor<T>>) -> Self {
        ParameterSet { entries }
    }

    /// Expected names and shapes for a configuration.
    pub fn layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
        let (e, h, a) = (cfg.embedding, cfg.hidden, cfg.attention);
        let d = cfg.annotation_size();
        let mut out = vec![
            ("src_emb".to_string(), vec![cfg.src_vocab, e]),
            ("tgt_emb".to_string(), vec![cfg.tgt_vocab, e]),
            ("att.w".to_string(), vec![h, a]),
            ("att.u".to_string(), vec![d, a]),
            ("att.v".to_string(), vec![a, 1]),
            ("read.w".to_string(), vec![e + h + d, h]),
            ("read.b".to_string(), vec![h]),
            ("out.w".to_string(), vec![h, cfg.tgt_vocab]),
            ("out.b".to_string(), vec![cfg.tgt_vocab]),
        ];
        let dirs: &[&str] = if cfg.bidirectional { &["fwd", "bwd"] } else { &["fwd"] };
        for l in 0..cfg.encoder_layers {
            let input = if l == 0 { e } else { d };
            for dir in dirs {
                out.push((format!("enc.{dir}.{l}.w"), vec![input + h, 4 * h]));
                out.push((format!("enc.{dir}.{l}.b"), vec![4 * h]));
            }
        }
        for l in 0..cfg.decoder_layers {
            let input = if l == 0 { e + d } else { h };
            out.push((format!("dec.{l}.w"), vec![input + h, 4 * h]));
            out.push((format!("dec.{l}.b"), vec![4 * h]));
            out.push((format!("init.{l}.w"), vec![d, h]));
            out.push((format!("init.{l}.b"), vec![h]));
        }
        out.sort();
        out
    }

    /// Uniform(−0.1, 0.1) weights; recurrent forget-gate biases start at 1, other biases at 0.
    pub fn init<R: Rng>(cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let mut entries = BTreeMap::new();
        for (name, shape) in Self::layout(cfg) {
            let n: usize = shape.iter().product();
            let vals: Vec<T> = if name.ends_with(".b") {
                let mut v = vec![T::zero(); n];
                if name.starts_with("enc.") || name.starts_with("dec.") {
                    let h = n / 4;
                    v[h..2 * h].iter_mut().for_each(|x| *x = T::one());
                }
                v
            } else {
                (0..n).map(|_| T::from_f64_lossy(rng.gen_range(-0.1..0.1))).collect()
            };
            entries.insert(name, Tensor::new(shape, vals)?);
        }
        Ok(ParameterSet { entries })
    }

    /// All parameters set to one constant (handy for tests).
    pub fn constant(cfg: &ModelConfig, v: T) -> Self {
        let entries = Self::layout(cfg).into_iter().map(|(n, s)| (n, Tensor::full(&s, v))).collect();
        ParameterSet { entries }
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.entries.get(name).ok_or_else(|| Error::Contract(format!("missing parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.entries.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.entries.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.entries.values().all(Tensor::is_finite)
    }

    /// Checks names and shapes against a configuration.
    pub fn check_layout(&self, cfg: &ModelConfig) -> Result<()> {
        let layout = Self::layout(cfg);
        if layout.len() != self.entries.len() {
            return Err(Error::Contract(format!("expected {} parameters, found {}", layout.len(), self.entries.len())));
        }
        for (name, shape) in layout {
            let t = self.get(&name)?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Dimension { op: "parameter layout", left: shape, right: t.shape().to_vec() });
            }
        }
        Ok(())
    }

    /// Same names and shapes.
    pub fn same_layout(&self, other: &Self) -> bool {
        self.entries.len() == other.entries.len()
            && self.entries.iter().zip(&other.entries).all(|((na, a), (nb, b))| na == nb && a.shape() == b.shape())
    }
}
