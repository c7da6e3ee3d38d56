use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Architecture of the attention encoder-decoder.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub src_vocab: usize,
    pub tgt_vocab: usize,
    pub embedding: usize,
    pub hidden: usize,
    pub attention: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub bidirectional: bool,
    pub dropout: f64,
    /// Hard cap on decode length; the per-sentence limit is `min(2·len + 5, cap)`.
    pub max_decode_len: usize,
}

impl ModelConfig {
    pub fn new(src_vocab: usize, tgt_vocab: usize) -> Self {
        ModelConfig {
            src_vocab,
            tgt_vocab,
            embedding: 32,
            hidden: 64,
            attention: 64,
            encoder_layers: 1,
            decoder_layers: 1,
            bidirectional: true,
            dropout: 0.3,
            max_decode_len: 200,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("src_vocab", self.src_vocab),
            ("tgt_vocab", self.tgt_vocab),
            ("embedding", self.embedding),
            ("hidden", self.hidden),
            ("attention", self.attention),
            ("encoder_layers", self.encoder_layers),
            ("decoder_layers", self.decoder_layers),
            ("max_decode_len", self.max_decode_len),
        ];
        for (name, v) in sizes {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// Width of one encoder annotation.
    pub fn annotation_size(&self) -> usize {
        if self.bidirectional {
            2 * self.hidden
        } else {
            self.hidden
        }
    }

    pub fn decode_limit(&self, source_len: usize) -> usize {
        (2 * source_len + 5).min(self.max_decode_len)
    }

    pub fn to_pairs(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert("model.src_vocab".into(), self.src_vocab.to_string());
        m.insert("model.tgt_vocab".into(), self.tgt_vocab.to_string());
        m.insert("model.embedding".into(), self.embedding.to_string());
        m.insert("model.hidden".into(), self.hidden.to_string());
        m.insert("model.attention".into(), self.attention.to_string());
        m.insert("model.encoder_layers".into(), self.encoder_layers.to_string());
        m.insert("model.decoder_layers".into(), self.decoder_layers.to_string());
        m.insert("model.bidirectional".into(), self.bidirectional.to_string());
        // shortest round-trip representation
        m.insert("model.dropout".into(), format!("{:?}", self.dropout));
        m.insert("model.max_decode_len".into(), self.max_decode_len.to_string());
        m
    }

    pub fn from_pairs(m: &BTreeMap<String, String>) -> Result<Self> {
        fn get<V: std::str::FromStr>(m: &BTreeMap<String, String>, k: &str) -> Result<V> {
            let raw = m.get(k).ok_or_else(|| Error::Config(format!("missing {k}")))?;
            raw.parse().map_err(|_| Error::Config(format!("bad value for {k}: {raw}")))
        }
        let c = ModelConfig {
            src_vocab: get(m, "model.src_vocab")?,
            tgt_vocab: get(m, "model.tgt_vocab")?,
            embedding: get(m, "model.embedding")?,
            hidden: get(m, "model.hidden")?,
            attention: get(m, "model.attention")?,
            encoder_layers: get(m, "model.encoder_layers")?,
            decoder_layers: get(m, "model.decoder_layers")?,
            bidirectional: get(m, "model.bidirectional")?,
            dropout: get(m, "model.dropout")?,
            max_decode_len: get(m, "model.max_decode_len")?,
        };
        c.validate()?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairs_round_trip() {
        let mut c = ModelConfig::new(40, 50);
        c.dropout = 0.1;
        c.bidirectional = false;
        assert_eq!(ModelConfig::from_pairs(&c.to_pairs()).unwrap(), c);
    }

    #[test]
    fn rejects_bad_dropout_and_zero_sizes() {
        let mut c = ModelConfig::new(10, 10);
        c.dropout = 1.0;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::new(10, 10);
        c.hidden = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn decode_limit_rule() {
        let c = ModelConfig::new(10, 10);
        assert_eq!(c.decode_limit(3), 11);
    }
}
