//! Attention encoder-decoder expressed on the autodiff tape.
//!
//! Shapes use row vectors: a batch of `B` sentences is a `B×width` matrix
//! and weights multiply from the right. Encoder annotations for a batch are
//! stored as a `(B·T)×D` matrix whose row `b·T + j` is `h_j` of sentence `b`.

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{log_softmax_row, Tensor};
use crate::vocab::{BOS, EOS, PAD};

use super::config::ModelConfig;
use super::params::ParameterSet;

/// Bias added to attention energies of padded source positions.
const MASKED_ENERGY: f64 = -1e30;

#[derive(Clone, Copy, Debug)]
pub(crate) struct Cell {
    w: Var,
    b: Var,
}

/// Parameters placed on a tape.
#[derive(Clone, Debug)]
pub struct Bound {
    src_emb: Var,
    tgt_emb: Var,
    enc_fwd: Vec<Cell>,
    enc_bwd: Vec<Cell>,
    init: Vec<Cell>,
    att_w: Var,
    att_u: Var,
    att_v: Var,
    dec: Vec<Cell>,
    read_w: Var,
    read_b: Var,
    out_w: Var,
    out_b: Var,
    /// Every parameter leaf with its name, in name order.
    pub vars: Vec<(String, Var)>,
}

impl Bound {
    /// Put `params` on `tape`, as trainable leaves when `trainable`.
    pub fn bind<T: Scalar>(tape: &mut Tape<T>, cfg: &ModelConfig, params: &ParameterSet<T>, trainable: bool) -> Result<Self> {
        params.check_layout(cfg)?;
        let mut vars = Vec::with_capacity(params.len());
        for (name, t) in params.iter() {
            let v = if trainable { tape.param(t.clone()) } else { tape.constant(t.clone()) };
            vars.push((name.clone(), v));
        }
        let find = |name: &str| -> Var {
            let i = vars.binary_search_by(|(n, _)| n.as_str().cmp(name)).expect("layout checked");
            vars[i].1
        };
        let cell = |prefix: String| Cell { w: find(&format!("{prefix}.w")), b: find(&format!("{prefix}.b")) };
        Ok(Bound {
            src_emb: find("src_emb"),
            tgt_emb: find("tgt_emb"),
            enc_fwd: (0..cfg.encoder_layers).map(|l| cell(format!("enc.fwd.{l}"))).collect(),
            enc_bwd: if cfg.bidirectional { (0..cfg.encoder_layers).map(|l| cell(format!("enc.bwd.{l}"))).collect() } else { Vec::new() },
            init: (0..cfg.decoder_layers).map(|l| cell(format!("init.{l}"))).collect(),
            att_w: find("att.w"),
            att_u: find("att.u"),
            att_v: find("att.v"),
            dec: (0..cfg.decoder_layers).map(|l| cell(format!("dec.{l}"))).collect(),
            read_w: find("read.w"),
            read_b: find("read.b"),
            out_w: find("out.w"),
            out_b: find("out.b"),
            vars,
        })
    }
}

/// Optional dropout source for a forward pass.
pub struct Dropout<'a, R: Rng> {
    pub rate: f64,
    pub rng: &'a mut R,
}

pub(crate) fn maybe_dropout<T: Scalar, R: Rng>(tape: &mut Tape<T>, x: Var, drop: &mut Option<Dropout<'_, R>>) -> Result<Var> {
    match drop {
        Some(d) if d.rate > 0.0 => tape.dropout(x, d.rate, d.rng),
        _ => Ok(x),
    }
}

/// One step of the four-gate recurrent cell; gates are ordered input, forget, candidate, output.
pub(crate) fn cell_step<T: Scalar>(tape: &mut Tape<T>, cell: Cell, hidden: usize, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
    let xh = tape.concat(&[x, h])?;
    let z = tape.matmul(xh, cell.w)?;
    let z = tape.add_bias(z, cell.b)?;
    let i = tape.slice_cols(z, 0, hidden)?;
    let f = tape.slice_cols(z, hidden, 2 * hidden)?;
    let g = tape.slice_cols(z, 2 * hidden, 3 * hidden)?;
    let o = tape.slice_cols(z, 3 * hidden, 4 * hidden)?;
    let (i, f, g, o) = (tape.sigmoid(i), tape.sigmoid(f), tape.tanh(g), tape.sigmoid(o));
    let fc = tape.mul(f, c)?;
    let ig = tape.mul(i, g)?;
    let c_new = tape.add(fc, ig)?;
    let tc = tape.tanh(c_new);
    let h_new = tape.mul(o, tc)?;
    Ok((h_new, c_new))
}

/// Encoder output for a batch, ready for attention.
#[derive(Clone, Debug)]
pub struct Encoded {
    /// `(B·T)×D` annotations.
    pub annotations: Var,
    /// `(B·T)×A` projected annotations `U h_j`.
    pub keys: Var,
    /// `B×T` additive mask for padded positions.
    pub mask: Var,
    pub batch: usize,
    pub steps: usize,
    pub lengths: Vec<usize>,
    /// For each row, `b` repeated `T` times; used to broadcast `W s` over positions.
    repeat: Vec<usize>,
}

impl Encoded {
    /// Restrict to (and possibly repeat) batch rows.
    pub fn select_rows<T: Scalar>(&self, tape: &mut Tape<T>, rows: &[usize]) -> Result<Encoded> {
        let t = self.steps;
        let idx: Vec<usize> = rows.iter().flat_map(|&r| r * t..(r + 1) * t).collect();
        let annotations = tape.gather_rows(self.annotations, &idx)?;
        let keys = tape.gather_rows(self.keys, &idx)?;
        let mask = tape.gather_rows(self.mask, rows)?;
        Ok(Encoded {
            annotations,
            keys,
            mask,
            batch: rows.len(),
            steps: t,
            lengths: rows.iter().map(|&r| self.lengths[r]).collect(),
            repeat: (0..rows.len()).flat_map(|b| std::iter::repeat_n(b, t)).collect(),
        })
    }
}

/// Recurrent decoder state, one entry per layer.
#[derive(Clone, Debug)]
pub struct DecoderState {
    pub h: Vec<Var>,
    pub c: Vec<Var>,
}

impl DecoderState {
    pub fn top(&self) -> Var {
        *self.h.last().expect("at least one decoder layer")
    }

    pub fn select_rows<T: Scalar>(&self, tape: &mut Tape<T>, rows: &[usize]) -> Result<DecoderState> {
        let h = self.h.iter().map(|&v| tape.gather_rows(v, rows)).collect::<Result<_>>()?;
        let c = self.c.iter().map(|&v| tape.gather_rows(v, rows)).collect::<Result<_>>()?;
        Ok(DecoderState { h, c })
    }
}

fn zeros<T: Scalar>(tape: &mut Tape<T>, rows: usize, cols: usize) -> Var {
    tape.constant(Tensor::zeros(&[rows, cols]))
}

/// Runs the encoder over a batch of source id sequences.
pub fn encode<T: Scalar, R: Rng>(
    tape: &mut Tape<T>,
    w: &Bound,
    cfg: &ModelConfig,
    sources: &[Vec<usize>],
    drop: &mut Option<Dropout<'_, R>>,
) -> Result<Encoded> {
    if sources.is_empty() || sources.iter().any(Vec::is_empty) {
        return Err(Error::Input("cannot encode an empty source sentence".into()));
    }
    let b = sources.len();
    let steps = sources.iter().map(Vec::len).max().unwrap();
    let lengths: Vec<usize> = sources.iter().map(Vec::len).collect();
    let hsz = cfg.hidden;

    let mut inputs = Vec::with_capacity(steps);
    for t in 0..steps {
        let ids: Vec<usize> = sources.iter().map(|s| s.get(t).copied().unwrap_or(PAD)).collect();
        let x = tape.embedding(w.src_emb, &ids)?;
        inputs.push(maybe_dropout(tape, x, drop)?);
    }
    let masks: Vec<Option<Var>> = (0..steps)
        .map(|t| {
            if lengths.iter().all(|&l| t < l) {
                return None;
            }
            let vals = lengths.iter().flat_map(|&l| std::iter::repeat_n(if t < l { T::one() } else { T::zero() }, hsz)).collect();
            Some(tape.constant(Tensor::from_parts(vec![b, hsz], vals)))
        })
        .collect();

    let mut layer_out = Vec::new();
    for layer in 0..cfg.encoder_layers {
        let (mut h, mut c) = (zeros(tape, b, hsz), zeros(tape, b, hsz));
        let mut fwd = Vec::with_capacity(steps);
        for x in &inputs {
            (h, c) = cell_step(tape, w.enc_fwd[layer], hsz, *x, h, c)?;
            fwd.push(h);
        }
        layer_out = if cfg.bidirectional {
            let (mut h, mut c) = (zeros(tape, b, hsz), zeros(tape, b, hsz));
            let mut bwd = vec![h; steps];
            for t in (0..steps).rev() {
                let (hn, cn) = cell_step(tape, w.enc_bwd[layer], hsz, inputs[t], h, c)?;
                // padded positions keep a zero state so each sentence starts clean
                (h, c) = match masks[t] {
                    Some(m) => (tape.mul(hn, m)?, tape.mul(cn, m)?),
                    None => (hn, cn),
                };
                bwd[t] = h;
            }
            fwd.iter().zip(&bwd).map(|(&f, &bk)| tape.concat(&[f, bk])).collect::<Result<Vec<_>>>()?
        } else {
            fwd
        };
        if layer + 1 < cfg.encoder_layers {
            inputs = layer_out.iter().map(|&v| maybe_dropout(tape, v, drop)).collect::<Result<_>>()?;
        }
    }

    let d = cfg.annotation_size();
    let wide = tape.concat(&layer_out)?;
    let annotations = tape.reshape(wide, &[b * steps, d])?;
    let keys = tape.matmul(annotations, w.att_u)?;
    let mask_vals = lengths
        .iter()
        .flat_map(|&l| (0..steps).map(move |t| if t < l { T::zero() } else { T::from_f64_lossy(MASKED_ENERGY) }))
        .collect();
    let mask = tape.constant(Tensor::from_parts(vec![b, steps], mask_vals));
    Ok(Encoded {
        annotations,
        keys,
        mask,
        batch: b,
        steps,
        lengths,
        repeat: (0..b).flat_map(|r| std::iter::repeat_n(r, steps)).collect(),
    })
}

/// Initial decoder state from the mean annotation of each sentence.
pub fn initial_state<T: Scalar>(tape: &mut Tape<T>, w: &Bound, cfg: &ModelConfig, enc: &Encoded) -> Result<DecoderState> {
    let vals = enc
        .lengths
        .iter()
        .flat_map(|&l| {
            let inv = T::one() / T::from_usize(l).unwrap();
            (0..enc.steps).map(move |t| if t < l { inv } else { T::zero() })
        })
        .collect();
    let avg = tape.constant(Tensor::from_parts(vec![enc.batch, enc.steps], vals));
    let mean = tape.weighted_rows(avg, enc.annotations)?;
    let mut h = Vec::with_capacity(cfg.decoder_layers);
    let mut c = Vec::with_capacity(cfg.decoder_layers);
    for cell in &w.init {
        let z = tape.matmul(mean, cell.w)?;
        let z = tape.add_bias(z, cell.b)?;
        h.push(tape.tanh(z));
        c.push(zeros(tape, enc.batch, cfg.hidden));
    }
    Ok(DecoderState { h, c })
}

/// Additive attention: energies `v_a·tanh(W s + U h_j)`, softmax weights, weighted context.
///
/// Returns `(context B×D, weights B×T)`.
pub fn attention<T: Scalar>(tape: &mut Tape<T>, w: &Bound, enc: &Encoded, prev: Var) -> Result<(Var, Var)> {
    let ws = tape.matmul(prev, w.att_w)?;
    let ws = tape.gather_rows(ws, &enc.repeat)?;
    let pre = tape.add(ws, enc.keys)?;
    let act = tape.tanh(pre);
    let energy = tape.matmul(act, w.att_v)?;
    let energy = tape.reshape(energy, &[enc.batch, enc.steps])?;
    let energy = tape.add(energy, enc.mask)?;
    let weights = tape.softmax(energy)?;
    let context = tape.weighted_rows(weights, enc.annotations)?;
    Ok((context, weights))
}

/// Output of one decoder step.
#[derive(Clone, Debug)]
pub struct Step {
    pub state: DecoderState,
    pub logits: Var,
    pub attention: Var,
}

/// One decoder step: attend with `s_{i-1}`, update the recurrent state, project to the vocabulary.
pub fn decoder_step<T: Scalar, R: Rng>(
    tape: &mut Tape<T>,
    w: &Bound,
    cfg: &ModelConfig,
    enc: &Encoded,
    prev_tokens: &[usize],
    state: &DecoderState,
    drop: &mut Option<Dropout<'_, R>>,
) -> Result<Step> {
    let emb = tape.embedding(w.tgt_emb, prev_tokens)?;
    let emb = maybe_dropout(tape, emb, drop)?;
    let (context, weights) = attention(tape, w, enc, state.top())?;
    let mut input = tape.concat(&[emb, context])?;
    let mut h = Vec::with_capacity(state.h.len());
    let mut c = Vec::with_capacity(state.c.len());
    for (l, cell) in w.dec.iter().enumerate() {
        let (hn, cn) = cell_step(tape, *cell, cfg.hidden, input, state.h[l], state.c[l])?;
        h.push(hn);
        c.push(cn);
        if l + 1 < w.dec.len() {
            input = maybe_dropout(tape, hn, drop)?;
        }
    }
    let top = *h.last().unwrap();
    let feats = tape.concat(&[emb, top, context])?;
    let r = tape.matmul(feats, w.read_w)?;
    let r = tape.add_bias(r, w.read_b)?;
    let r = tape.tanh(r);
    let r = maybe_dropout(tape, r, drop)?;
    let logits = tape.matmul(r, w.out_w)?;
    let logits = tape.add_bias(logits, w.out_b)?;
    Ok(Step { state: DecoderState { h, c }, logits, attention: weights })
}

/// Teacher-forced pass over a batch.
pub struct Forced<T: Scalar> {
    /// Summed token cross-entropy, including the EOS of each target.
    pub loss: Var,
    pub tokens: usize,
    /// Per sentence, log-probability of each reference token followed by EOS.
    pub token_logprobs: Vec<Vec<T>>,
}

pub fn teacher_forced<T: Scalar, R: Rng>(
    tape: &mut Tape<T>,
    w: &Bound,
    cfg: &ModelConfig,
    sources: &[Vec<usize>],
    targets: &[Vec<usize>],
    drop: &mut Option<Dropout<'_, R>>,
) -> Result<Forced<T>> {
    if sources.len() != targets.len() {
        return Err(Error::Dimension { op: "teacher_forced", left: vec![sources.len()], right: vec![targets.len()] });
    }
    for t in targets.iter().flatten() {
        if *t >= cfg.tgt_vocab {
            return Err(Error::Index { what: "target vocabulary", index: *t, len: cfg.tgt_vocab });
        }
    }
    let enc = encode(tape, w, cfg, sources, drop)?;
    let mut state = initial_state(tape, w, cfg, &enc)?;
    let steps = targets.iter().map(Vec::len).max().unwrap_or(0) + 1;
    let mut token_logprobs: Vec<Vec<T>> = targets.iter().map(|t| Vec::with_capacity(t.len() + 1)).collect();
    let mut loss: Option<Var> = None;
    let mut tokens = 0;
    let mut row = vec![T::zero(); cfg.tgt_vocab];
    for i in 0..steps {
        let prev: Vec<usize> = targets.iter().map(|t| if i == 0 { BOS } else { t.get(i - 1).copied().unwrap_or(PAD) }).collect();
        let gold: Vec<Option<usize>> = targets
            .iter()
            .map(|t| match i.cmp(&t.len()) {
                std::cmp::Ordering::Less => Some(t[i]),
                std::cmp::Ordering::Equal => Some(EOS),
                std::cmp::Ordering::Greater => None,
            })
            .collect();
        let step = decoder_step(tape, w, cfg, &enc, &prev, &state, drop)?;
        let xent = tape.softmax_cross_entropy(step.logits, &gold)?;
        let lv = tape.value(step.logits).values();
        for (b, g) in gold.iter().enumerate() {
            if let Some(g) = *g {
                log_softmax_row(&lv[b * cfg.tgt_vocab..(b + 1) * cfg.tgt_vocab], &mut row);
                token_logprobs[b].push(row[g]);
                tokens += 1;
            }
        }
        loss = Some(match loss {
            None => xent,
            Some(acc) => tape.add(acc, xent)?,
        });
        state = step.state;
    }
    Ok(Forced { loss: loss.expect("at least one step"), tokens, token_logprobs })
}

/// A model: configuration plus parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Seq2Seq<T: Scalar> {
    pub config: ModelConfig,
    pub params: ParameterSet<T>,
}

type NoRng = rand_chacha::ChaCha8Rng;

impl<T: Scalar> Seq2Seq<T> {
    pub fn new(config: ModelConfig, params: ParameterSet<T>) -> Result<Self> {
        config.validate()?;
        params.check_layout(&config)?;
        Ok(Seq2Seq { config, params })
    }

    pub fn init<R: Rng>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        let params = ParameterSet::init(&config, rng)?;
        Ok(Seq2Seq { config, params })
    }

    fn bind(&self, tape: &mut Tape<T>) -> Result<Bound> {
        Bound::bind(tape, &self.config, &self.params, false)
    }

    /// Annotations `T_x × D` for one source sentence.
    pub fn encode(&self, source: &[usize]) -> Result<Tensor<T>> {
        self.check_source(source)?;
        let mut tape = Tape::new();
        let w = self.bind(&mut tape)?;
        let enc = encode::<T, NoRng>(&mut tape, &w, &self.config, &[source.to_vec()], &mut None)?;
        Ok(tape.value(enc.annotations).clone())
    }

    pub(crate) fn check_source(&self, source: &[usize]) -> Result<()> {
        if source.is_empty() {
            return Err(Error::Input("empty source sentence".into()));
        }
        if let Some(&bad) = source.iter().find(|&&id| id >= self.config.src_vocab) {
            return Err(Error::Index { what: "source vocabulary", index: bad, len: self.config.src_vocab });
        }
        Ok(())
    }

    /// Per-token log-probabilities of `target` (then EOS) given `source`, without dropout.
    pub fn forced_logprobs(&self, source: &[usize], target: &[usize]) -> Result<Vec<T>> {
        Ok(self.forced_logprobs_batch(&[source.to_vec()], &[target.to_vec()])?.pop().unwrap())
    }

    pub fn forced_logprobs_batch(&self, sources: &[Vec<usize>], targets: &[Vec<usize>]) -> Result<Vec<Vec<T>>> {
        for s in sources {
            self.check_source(s)?;
        }
        let mut tape = Tape::new();
        let w = self.bind(&mut tape)?;
        let f = teacher_forced::<T, NoRng>(&mut tape, &w, &self.config, sources, targets, &mut None)?;
        Ok(f.token_logprobs)
    }

    /// Summed teacher-forced cross-entropy over pairs, without dropout.
    pub fn loss(&self, sources: &[Vec<usize>], targets: &[Vec<usize>]) -> Result<T> {
        let mut tape = Tape::new();
        let w = self.bind(&mut tape)?;
        let f = teacher_forced::<T, NoRng>(&mut tape, &w, &self.config, sources, targets, &mut None)?;
        Ok(tape.value(f.loss).values()[0])
    }

    /// Single-sentence decoder step from explicit state values.
    ///
    /// `prev_h`/`prev_c` hold one `1×hidden` row per decoder layer. Returns the
    /// new state and the next-token distribution.
    pub fn decoder_step(
        &self,
        source: &[usize],
        prev_token: usize,
        prev_h: &[Tensor<T>],
        prev_c: &[Tensor<T>],
    ) -> Result<(Vec<Tensor<T>>, Vec<Tensor<T>>, Tensor<T>)> {
        self.check_source(source)?;
        if prev_token >= self.config.tgt_vocab {
            return Err(Error::Index { what: "target vocabulary", index: prev_token, len: self.config.tgt_vocab });
        }
        let mut tape = Tape::new();
        let w = self.bind(&mut tape)?;
        let enc = encode::<T, NoRng>(&mut tape, &w, &self.config, &[source.to_vec()], &mut None)?;
        let state = DecoderState {
            h: prev_h.iter().map(|t| tape.constant(t.clone())).collect(),
            c: prev_c.iter().map(|t| tape.constant(t.clone())).collect(),
        };
        let step = decoder_step::<T, NoRng>(&mut tape, &w, &self.config, &enc, &[prev_token], &state, &mut None)?;
        let dist = tape.softmax(step.logits)?;
        let h = step.state.h.iter().map(|&v| tape.value(v).clone()).collect();
        let c = step.state.c.iter().map(|&v| tape.value(v).clone()).collect();
        Ok((h, c, tape.value(dist).clone()))
    }

    /// Decoder state before the first target token.
    pub fn initial_state(&self, source: &[usize]) -> Result<(Vec<Tensor<T>>, Vec<Tensor<T>>)> {
        self.check_source(source)?;
        let mut tape = Tape::new();
        let w = self.bind(&mut tape)?;
        let enc = encode::<T, NoRng>(&mut tape, &w, &self.config, &[source.to_vec()], &mut None)?;
        let st = initial_state(&mut tape, &w, &self.config, &enc)?;
        Ok((st.h.iter().map(|&v| tape.value(v).clone()).collect(), st.c.iter().map(|&v| tape.value(v).clone()).collect()))
    }

    /// Attention context and weights for one source and a given previous top-layer state.
    pub fn attention(&self, source: &[usize], prev_state: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        self.check_source(source)?;
        let mut tape = Tape::new();
        let w = self.bind(&mut tape)?;
        let enc = encode::<T, NoRng>(&mut tape, &w, &self.config, &[source.to_vec()], &mut None)?;
        let s = tape.constant(prev_state.clone());
        let (ctx, a) = attention(&mut tape, &w, &enc, s)?;
        Ok((tape.value(ctx).clone(), tape.value(a).clone()))
    }
}
