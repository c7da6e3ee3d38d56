//! Teacher-forced training with periodic checkpoints and dev-BLEU stopping.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::eval::StopState;
use crate::optim::{AdamConfig, AdamState};
use crate::scalar::Scalar;
use crate::seed;

use super::checkpoint::Checkpoint;
use super::model::{teacher_forced, Bound, Dropout, Seq2Seq};

/// Source and target id sequences (target without BOS/EOS).
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct EncodedPair {
    pub src: Vec<usize>,
    pub tgt: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// A checkpoint (and dev evaluation, when an evaluator is given) every this many steps.
    pub eval_interval: u64,
    /// Hard budget per training call.
    pub max_steps: u64,
    pub stop_threshold: f64,
    pub stop_window: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            adam: AdamConfig::default(),
            eval_interval: 5000,
            max_steps: 200_000,
            stop_threshold: 0.2,
            stop_window: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalPoint {
    pub step: u64,
    pub bleu: f64,
}

/// Everything one training call produced.
#[derive(Clone, Debug)]
pub struct TrainLog<T: Scalar> {
    pub checkpoints: Vec<Checkpoint<T>>,
    pub evals: Vec<EvalPoint>,
    /// `(step, mean token loss)` for every update.
    pub losses: Vec<(u64, f64)>,
    pub model: Seq2Seq<T>,
    pub first_step: u64,
    pub last_step: u64,
}

impl<T: Scalar> TrainLog<T> {
    pub fn last_checkpoints(&self, k: usize) -> Vec<&Checkpoint<T>> {
        let n = self.checkpoints.len();
        self.checkpoints[n.saturating_sub(k)..].iter().collect()
    }
}

/// Dev-set scorer used by the stop rule.
pub type Evaluator<'a, T> = dyn FnMut(&Seq2Seq<T>) -> Result<f64> + 'a;

fn batches<R: Rng>(n: usize, batch: usize, data: &[EncodedPair], rng: &mut R) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    // length-sorted pools cut padding
    let pool = batch * 16;
    let mut out = Vec::new();
    for chunk in order.chunks(pool) {
        let mut c = chunk.to_vec();
        c.sort_by_key(|&i| (data[i].src.len(), data[i].tgt.len(), i));
        out.extend(c.chunks(batch).map(<[usize]>::to_vec));
    }
    out.shuffle(rng);
    out
}

/// Minimizes teacher-forced cross-entropy on `data`, starting from `model`.
///
/// Step numbers continue from `start_step`. With an evaluator, training ends
/// when the stop rule fires or at `max_steps`; without one it runs exactly
/// `max_steps` updates. `phase` is recorded in checkpoint metadata.
pub fn train<T: Scalar>(
    model: Seq2Seq<T>,
    data: &[EncodedPair],
    cfg: &TrainConfig,
    seed_value: u64,
    start_step: u64,
    phase: &str,
    mut evaluator: Option<&mut Evaluator<'_, T>>,
) -> Result<TrainLog<T>> {
    if data.is_empty() {
        return Err(Error::Input("no training pairs".into()));
    }
    if cfg.batch_size == 0 || cfg.eval_interval == 0 {
        return Err(Error::Config("batch size and eval interval must be positive".into()));
    }
    let mut shuffle_rng = seed::stream(seed_value, &format!("shuffle.{phase}"));
    let mut dropout_rng = seed::stream(seed_value, &format!("dropout.{phase}"));
    let mut model = model;
    let cfg_model = model.config.clone();
    let mut adam = {
        let refs: Vec<_> = model.params.iter().map(|(_, t)| t).collect();
        AdamState::new(cfg.adam, &refs)
    };
    let mut log = TrainLog {
        checkpoints: Vec::new(),
        evals: Vec::new(),
        losses: Vec::new(),
        model: model.clone(),
        first_step: start_step,
        last_step: start_step,
    };
    let mut stop = StopState::new(cfg.stop_threshold, cfg.stop_window);
    let mut step = start_step;
    let mut queue: Vec<Vec<usize>> = Vec::new();
    let mut taken = 0u64;
    'outer: while taken < cfg.max_steps {
        if queue.is_empty() {
            queue = batches(data.len(), cfg.batch_size, data, &mut shuffle_rng);
            queue.reverse();
        }
        let idx = queue.pop().unwrap();
        let srcs: Vec<Vec<usize>> = idx.iter().map(|&i| data[i].src.clone()).collect();
        let tgts: Vec<Vec<usize>> = idx.iter().map(|&i| data[i].tgt.clone()).collect();

        let mut tape = Tape::new();
        let bound = Bound::bind(&mut tape, &cfg_model, &model.params, true)?;
        let mut drop = Some(Dropout { rate: cfg_model.dropout, rng: &mut dropout_rng });
        let forced = teacher_forced(&mut tape, &bound, &cfg_model, &srcs, &tgts, &mut drop)?;
        let scale = T::one() / T::from_usize(forced.tokens).unwrap();
        let loss = tape.scale(forced.loss, scale);
        let loss_value = tape.value(loss).values()[0];
        step += 1;
        taken += 1;
        if !loss_value.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        let mut grads = tape.backward(loss)?;
        let gs: Vec<_> = bound.vars.iter().map(|(_, v)| grads.take(*v)).collect();
        let mut ps: Vec<_> = model.params.iter_mut().map(|(_, t)| t).collect();
        adam.step(&mut ps, &gs)?;
        log.losses.push((step, loss_value.to_f64_lossy()));

        if taken.is_multiple_of(cfg.eval_interval) || taken == cfg.max_steps {
            let mut ck = Checkpoint::new(cfg_model.clone(), model.params.clone(), step);
            ck.meta.insert("phase".into(), phase.to_string());
            log.checkpoints.push(ck);
            if let Some(eval) = evaluator.as_mut() {
                let bleu = eval(&model)?;
                log.evals.push(EvalPoint { step, bleu });
                stop.record(step, bleu)?;
                if stop.should_stop() {
                    break 'outer;
                }
            }
        }
    }
    log.last_step = step;
    log.model = model;
    Ok(log)
}

/// Two-phase curriculum output.
#[derive(Clone, Debug)]
pub struct CurriculumLog<T: Scalar> {
    pub pretrain: TrainLog<T>,
    pub finetune: TrainLog<T>,
    /// Last step of the synthetic phase.
    pub boundary_step: u64,
}

/// Pre-train on `synthetic`, then continue on `authentic` with fresh optimizer moments.
///
/// Step numbering is cumulative; every checkpoint records its phase and the
/// boundary step.
pub fn pretrain_finetune<T: Scalar>(
    model: Seq2Seq<T>,
    synthetic: &[EncodedPair],
    authentic: &[EncodedPair],
    pre_cfg: &TrainConfig,
    fine_cfg: &TrainConfig,
    seed_value: u64,
    mut evaluator: Option<&mut Evaluator<'_, T>>,
) -> Result<CurriculumLog<T>> {
    if synthetic.is_empty() || authentic.is_empty() {
        return Err(Error::Input("pre-train/fine-tune needs synthetic and authentic pairs".into()));
    }
    let mut pretrain = train(model, synthetic, pre_cfg, seed_value, 0, "pretrain", evaluator.as_deref_mut())?;
    let boundary = pretrain.last_step;
    let start = pretrain.model.clone();
    let mut finetune = train(start, authentic, fine_cfg, seed_value, boundary, "finetune", evaluator)?;
    for ck in pretrain.checkpoints.iter_mut().chain(finetune.checkpoints.iter_mut()) {
        ck.meta.insert("phase_boundary".into(), boundary.to_string());
    }
    Ok(CurriculumLog { pretrain, finetune, boundary_step: boundary })
}
