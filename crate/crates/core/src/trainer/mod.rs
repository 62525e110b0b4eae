//! Optimization loop: Adam with warmup/decay, masked-LM + next-sentence
//! pretraining, recall classification, metric logging.

mod metrics;
mod optim;

pub use metrics::{MetricLog, MetricRow, HEADER as METRIC_HEADER};
pub use optim::{adam_step, clip_global_norm, learning_rate_at, AdamConfig, AdamState};

use std::path::PathBuf;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::model::{save_checkpoint, Bound, EncoderInput, HeadKind, Model, ModelConfig};
use crate::numerics::{child_rng, derive_seed, Mode, Rng, Tape, Tensor, Var};
use crate::tasks::{
    generate_corpus, mlm_example_at, recall_example_at, Document, Grammar, MaskConfig, RecallAlphabet, ToyVocab,
};

const TRAIN_STREAM: u64 = 1;
const EVAL_STREAM: u64 = 2;
const DROPOUT_STREAM: u64 = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub total_steps: usize,
    pub learning_rate: f64,
    pub warmup_steps: usize,
    pub adam: AdamConfig,
    /// Global gradient-norm ceiling; 0 disables clipping.
    pub clip_norm: f64,
    pub eval_every: usize,
    pub eval_batches: usize,
    /// Checkpoint cadence in steps; 0 disables intermediate checkpoints.
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            total_steps: 3000,
            learning_rate: 1e-3,
            warmup_steps: 300,
            adam: AdamConfig::default(),
            clip_norm: 1.0,
            eval_every: 100,
            eval_batches: 10,
            checkpoint_every: 0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.batch_size == 0 || self.eval_every == 0 || self.eval_batches == 0 {
            return bad("batch_size, eval_every and eval_batches must be positive".into());
        }
        if self.warmup_steps > self.total_steps {
            return bad(format!(
                "warmup_steps {} exceeds total_steps {}",
                self.warmup_steps, self.total_steps
            ));
        }
        let positive = |v: f64| v > 0.0;
        if !positive(self.learning_rate) || !positive(self.adam.epsilon) || self.adam.weight_decay < 0.0 {
            return bad("learning rate and epsilon must be positive, weight decay non-negative".into());
        }
        if !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) {
            return bad("Adam betas must lie in [0, 1)".into());
        }
        if self.clip_norm < 0.0 {
            return bad("clip_norm must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainTask {
    pub grammar: Grammar,
    pub num_docs: usize,
    pub sentences_per_doc: usize,
    pub corpus_seed: u64,
    pub mask: MaskConfig,
}

impl Default for PretrainTask {
    fn default() -> Self {
        PretrainTask {
            grammar: Grammar::default(),
            num_docs: 2000,
            sentences_per_doc: 8,
            corpus_seed: 0,
            mask: MaskConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RecallTask {
    pub num_kv_pairs: usize,
    pub alphabet: RecallAlphabet,
}

impl Default for RecallTask {
    fn default() -> Self {
        RecallTask {
            num_kv_pairs: 4,
            alphabet: RecallAlphabet::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Task {
    Pretrain(PretrainTask),
    Recall(RecallTask),
}

impl Task {
    pub fn name(&self) -> &'static str {
        match self {
            Task::Pretrain(_) => "pretrain",
            Task::Recall(_) => "recall",
        }
    }

    /// Sets the head the task needs and, for recall, a vocabulary that
    /// holds its alphabet.
    pub fn configure(&self, cfg: &mut ModelConfig) {
        match self {
            Task::Pretrain(_) => cfg.head = HeadKind::Pretrain,
            Task::Recall(r) => {
                cfg.head = HeadKind::Classify {
                    num_classes: r.alphabet.num_values,
                };
                cfg.vocab_size = cfg.vocab_size.max(r.alphabet.vocab_size());
            }
        }
    }

    fn check(&self, cfg: &ModelConfig) -> Result<()> {
        let ok = match self {
            Task::Pretrain(_) => cfg.head == HeadKind::Pretrain,
            Task::Recall(r) => {
                cfg.head
                    == HeadKind::Classify {
                        num_classes: r.alphabet.num_values,
                    }
                    && cfg.vocab_size >= r.alphabet.vocab_size()
            }
        };
        if !ok {
            return Err(Error::InvalidArgument(format!(
                "model head {} / vocab {} does not fit the {} task",
                cfg.head,
                cfg.vocab_size,
                self.name()
            )));
        }
        Ok(())
    }
}

/// Task data shared by training and evaluation.
enum Data {
    Pretrain {
        docs: Vec<Document>,
        vocab: ToyVocab,
        mask: MaskConfig,
    },
    Recall(RecallTask),
}

impl Data {
    fn new(task: &Task, cfg: &ModelConfig) -> Result<Self> {
        Ok(match task {
            Task::Pretrain(p) => {
                let vocab = ToyVocab::new(cfg.vocab_size)?;
                let docs = generate_corpus(p.corpus_seed, p.num_docs, p.sentences_per_doc, &p.grammar, &vocab)?;
                Data::Pretrain {
                    docs,
                    vocab,
                    mask: p.mask,
                }
            }
            Task::Recall(r) => Data::Recall(*r),
        })
    }

    fn batch(&self, n: usize, batch: usize, seed: u64, first: u64) -> Result<Batch> {
        let mut ids = Vec::with_capacity(batch * n);
        let mut type_ids = Vec::with_capacity(batch * n);
        let mut labels = Vec::with_capacity(batch);
        let mut masked_rows = Vec::new();
        let mut masked_labels = Vec::new();
        for j in 0..batch {
            let index = first + j as u64;
            match self {
                Data::Pretrain { docs, vocab, mask } => {
                    let ex = mlm_example_at(docs, vocab, n, mask, seed, index)?;
                    masked_rows.extend(ex.mask_positions.iter().map(|p| j * n + p));
                    masked_labels.extend(&ex.mask_labels);
                    ids.extend(ex.input_ids);
                    type_ids.extend(ex.type_ids);
                    labels.push(ex.nsp_label);
                }
                Data::Recall(r) => {
                    let ex = recall_example_at(seed, index, n, r.num_kv_pairs, &r.alphabet)?;
                    ids.extend(ex.input_ids);
                    type_ids.extend(std::iter::repeat_n(0, n));
                    labels.push(ex.target_class);
                }
            }
        }
        Ok(Batch {
            input: EncoderInput::new(ids, type_ids, batch, n)?,
            labels,
            masked_rows,
            masked_labels,
        })
    }
}

struct Batch {
    input: EncoderInput,
    /// Next-sentence labels or recall classes.
    labels: Vec<usize>,
    masked_rows: Vec<usize>,
    masked_labels: Vec<usize>,
}

/// Loss parts and correct-prediction counts of one batch.
#[derive(Clone, Copy, Debug, Default)]
struct Tally {
    loss: f64,
    mlm_loss: f64,
    task_loss: f64,
    mlm_correct: usize,
    mlm_total: usize,
    task_correct: usize,
    task_total: usize,
}

fn correct(logits: &Tensor, labels: &[usize]) -> usize {
    let c = logits.last_dim();
    labels
        .iter()
        .enumerate()
        .filter(|(i, &y)| {
            let row = &logits.data()[i * c..(i + 1) * c];
            let best = row
                .iter()
                .enumerate()
                .fold(0, |b, (j, &v)| if v > row[b] { j } else { b });
            best == y
        })
        .count()
}

fn batch_loss(model: &Model, tape: &mut Tape, batch: &Batch, mode: Mode, rng: &mut Rng) -> Result<(Var, Tally, Bound)> {
    let b = model.bind(tape);
    let out = model.forward(tape, &b, &batch.input, mode, rng)?;
    let mut t = Tally::default();
    let loss = if model.num_classes().is_some() {
        let logits = model.classify(tape, &b, out)?;
        let loss = tape.cross_entropy(logits, &batch.labels)?;
        t.task_loss = tape.value(loss).data()[0];
        t.task_correct = correct(tape.value(logits), &batch.labels);
        loss
    } else {
        let (mlm, nsp) = model.pretrain_heads(tape, &b, out, &batch.masked_rows)?;
        let nsp_loss = tape.cross_entropy(nsp, &batch.labels)?;
        t.task_loss = tape.value(nsp_loss).data()[0];
        t.task_correct = correct(tape.value(nsp), &batch.labels);
        if batch.masked_rows.is_empty() {
            nsp_loss
        } else {
            let mlm_loss = tape.cross_entropy(mlm, &batch.masked_labels)?;
            t.mlm_loss = tape.value(mlm_loss).data()[0];
            t.mlm_correct = correct(tape.value(mlm), &batch.masked_labels);
            t.mlm_total = batch.masked_labels.len();
            tape.add(mlm_loss, nsp_loss)?
        }
    };
    t.task_total = batch.labels.len();
    t.loss = tape.value(loss).data()[0];
    Ok((loss, t, b))
}

/// Eval-mode metrics averaged over batches.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalMetrics {
    pub loss: f64,
    pub mlm_loss: Option<f64>,
    pub nsp_loss: Option<f64>,
    pub mlm_acc: Option<f64>,
    pub task_acc: f64,
}

fn evaluate_data(model: &Model, data: &Data, batch_size: usize, num_batches: usize, seed: u64) -> Result<EvalMetrics> {
    let mut sum = Tally::default();
    let mut rng = child_rng(seed, 0);
    for i in 0..num_batches {
        let batch = data.batch(model.config().seq_len, batch_size, seed, (i * batch_size) as u64)?;
        let mut tape = Tape::new();
        let (_, t, _) = batch_loss(model, &mut tape, &batch, Mode::Eval, &mut rng)?;
        sum.loss += t.loss;
        sum.mlm_loss += t.mlm_loss;
        sum.task_loss += t.task_loss;
        sum.mlm_correct += t.mlm_correct;
        sum.mlm_total += t.mlm_total;
        sum.task_correct += t.task_correct;
        sum.task_total += t.task_total;
    }
    let k = num_batches.max(1) as f64;
    let pretrain = model.num_classes().is_none();
    Ok(EvalMetrics {
        loss: sum.loss / k,
        mlm_loss: pretrain.then(|| sum.mlm_loss / k),
        nsp_loss: pretrain.then(|| sum.task_loss / k),
        mlm_acc: pretrain.then(|| sum.mlm_correct as f64 / sum.mlm_total.max(1) as f64),
        task_acc: sum.task_correct as f64 / sum.task_total.max(1) as f64,
    })
}

/// Deterministic eval-mode metrics on `num_batches` batches drawn from `seed`.
pub fn evaluate(model: &Model, task: &Task, batch_size: usize, num_batches: usize, seed: u64) -> Result<EvalMetrics> {
    task.check(model.config())?;
    let data = Data::new(task, model.config())?;
    evaluate_data(model, &data, batch_size, num_batches, seed)
}

pub type LogHook<'a> = Box<dyn FnMut(&MetricRow) + 'a>;

/// Side channels of a run.
#[derive(Default)]
pub struct TrainOptions<'a> {
    /// Called with every logged row.
    pub on_log: Option<LogHook<'a>>,
    /// Receives `step<N>.fnt1` every `checkpoint_every` steps.
    pub checkpoint_dir: Option<PathBuf>,
    /// Worker threads for Fourier mixing.
    pub threads: usize,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub log: MetricLog,
    /// Training-batch loss of every step.
    pub step_losses: Vec<f64>,
}

/// Trains a freshly initialized model (seeded by `model_cfg.seed`) on `task`.
///
/// Data come from streams derived from `train_cfg.seed`; a row is logged
/// before the first step, every `eval_every` steps and after the last one.
pub fn train(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    task: &Task,
    opts: TrainOptions<'_>,
) -> Result<TrainOutcome> {
    train_cfg.validate()?;
    task.check(model_cfg)?;
    let model = Model::new(model_cfg.clone())?.with_threads(opts.threads.max(1))?;
    train_model(model, train_cfg, task, opts)
}

/// [`train`] starting from an existing model.
pub fn train_model(
    mut model: Model,
    cfg: &TrainConfig,
    task: &Task,
    mut opts: TrainOptions<'_>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    task.check(model.config())?;
    let data = Data::new(task, model.config())?;
    let n = model.config().seq_len;
    let train_seed = derive_seed(cfg.seed, TRAIN_STREAM);
    let eval_seed = derive_seed(cfg.seed, EVAL_STREAM);
    let mut dropout_rng = child_rng(cfg.seed, DROPOUT_STREAM);
    let mut state = AdamState::new(model.params());
    let mut log = MetricLog::default();
    let mut step_losses = Vec::with_capacity(cfg.total_steps);
    let mut elapsed_ms = 0.0;
    let mut since_log = 0usize;

    let mut record = |model: &Model, step: usize, ms: f64, log: &mut MetricLog| -> Result<()> {
        let m = evaluate_data(model, &data, cfg.batch_size, cfg.eval_batches, eval_seed)?;
        let row = MetricRow {
            step,
            total_loss: m.loss,
            mlm_loss: m.mlm_loss,
            nsp_loss: m.nsp_loss,
            mlm_acc: m.mlm_acc,
            task_acc: m.task_acc,
            ms_per_step: ms,
        };
        if !row.total_loss.is_finite() {
            return Err(Error::Diverged {
                step,
                detail: format!("non-finite evaluation loss; last finite row: {:?}", log.last()),
            });
        }
        if let Some(f) = opts.on_log.as_mut() {
            f(&row);
        }
        log.push(row)
    };
    record(&model, 0, 0.0, &mut log)?;

    for step in 0..cfg.total_steps {
        let start = Instant::now();
        let batch = data.batch(n, cfg.batch_size, train_seed, (step * cfg.batch_size) as u64)?;
        let mut tape = Tape::new();
        let (loss, tally, bound) = batch_loss(&model, &mut tape, &batch, Mode::Train, &mut dropout_rng)?;
        if !tally.loss.is_finite() {
            return Err(Error::Diverged {
                step,
                detail: format!("non-finite training loss; last finite row: {:?}", log.last()),
            });
        }
        step_losses.push(tally.loss);
        let mut grads = tape.backward(loss)?;
        let mut g: Vec<Option<Tensor>> = bound.vars().iter().map(|&v| grads.take(v)).collect();
        clip_global_norm(&mut g, cfg.clip_norm);
        let lr = learning_rate_at(step, cfg.learning_rate, cfg.warmup_steps, cfg.total_steps);
        adam_step(model.params_mut(), &g, &mut state, lr, &cfg.adam)?;
        elapsed_ms += start.elapsed().as_secs_f64() * 1e3;
        since_log += 1;

        let done = step + 1;
        if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 {
            if let Some(dir) = &opts.checkpoint_dir {
                save_checkpoint(&model, dir.join(format!("step{done}.fnt1")))?;
            }
        }
        if done % cfg.eval_every == 0 || done == cfg.total_steps {
            record(&model, done, elapsed_ms / since_log as f64, &mut log)?;
            elapsed_ms = 0.0;
            since_log = 0;
        }
    }
    Ok(TrainOutcome {
        model,
        log,
        step_losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Variant;

    fn recall_cfg(variant: Variant) -> (ModelConfig, Task) {
        let task = Task::Recall(RecallTask {
            num_kv_pairs: 2,
            ..RecallTask::default()
        });
        let mut cfg = ModelConfig::small(8, 16, 1, variant);
        cfg.ff_dim = 32;
        cfg.vocab_size = 0;
        task.configure(&mut cfg);
        (cfg, task)
    }

    #[test]
    fn zero_steps_keep_initialization() {
        let (cfg, task) = recall_cfg(Variant::FnetFft);
        let tc = TrainConfig {
            total_steps: 0,
            warmup_steps: 0,
            eval_batches: 1,
            ..TrainConfig::default()
        };
        let out = train(&cfg, &tc, &task, TrainOptions::default()).unwrap();
        assert_eq!(out.model.params(), Model::new(cfg).unwrap().params());
        assert_eq!(out.log.rows.len(), 1);
    }

    #[test]
    fn runs_are_reproducible_and_frozen_stays_frozen() {
        let (cfg, task) = recall_cfg(Variant::Random);
        let tc = TrainConfig {
            total_steps: 20,
            warmup_steps: 2,
            eval_every: 5,
            eval_batches: 2,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let a = train(&cfg, &tc, &task, TrainOptions::default()).unwrap();
        let b = train(&cfg, &tc, &task, TrainOptions::default()).unwrap();
        assert_eq!(a.step_losses, b.step_losses);
        let strip = |l: &MetricLog| {
            let mut v = Vec::new();
            l.write_csv_untimed(&mut v).unwrap();
            v
        };
        assert_eq!(strip(&a.log), strip(&b.log));
        assert_eq!(
            a.log.rows.iter().map(|r| r.step).collect::<Vec<_>>(),
            [0, 5, 10, 15, 20]
        );
        let init = Model::new(cfg).unwrap();
        for name in ["layer0.mixing.seq", "layer0.mixing.hidden_kernel"] {
            assert_eq!(a.model.params().by_name(name), init.params().by_name(name));
        }
        assert_ne!(
            a.model.params().by_name("layer0.ff.output.kernel"),
            init.params().by_name("layer0.ff.output.kernel")
        );
    }

    #[test]
    fn evaluation_is_deterministic_and_near_chance_untrained() {
        let mut cfg = ModelConfig::small(16, 32, 2, Variant::FnetFft);
        let task = Task::Recall(RecallTask::default());
        task.configure(&mut cfg);
        let model = Model::new(cfg).unwrap();
        let a = evaluate(&model, &task, 50, 20, 4).unwrap();
        assert_eq!(a, evaluate(&model, &task, 50, 20, 4).unwrap());
        assert!((a.task_acc - 1.0 / 16.0).abs() < 0.03, "{}", a.task_acc);
    }

    #[test]
    fn mismatched_head_is_rejected() {
        let (mut cfg, task) = recall_cfg(Variant::FnetFft);
        cfg.head = HeadKind::Pretrain;
        assert!(train(&cfg, &TrainConfig::default(), &task, TrainOptions::default()).is_err());
        let bad = TrainConfig {
            warmup_steps: 10,
            total_steps: 5,
            ..TrainConfig::default()
        };
        let (cfg, task) = recall_cfg(Variant::FnetFft);
        assert!(train(&cfg, &bad, &task, TrainOptions::default()).is_err());
    }

    #[test]
    fn divergence_is_reported_with_step() {
        let (cfg, task) = recall_cfg(Variant::Linear);
        let tc = TrainConfig {
            total_steps: 50,
            warmup_steps: 0,
            learning_rate: 1e300,
            clip_norm: 0.0,
            eval_every: 1000,
            batch_size: 4,
            eval_batches: 1,
            ..TrainConfig::default()
        };
        match train(&cfg, &tc, &task, TrainOptions::default()) {
            Err(Error::Diverged { step, detail }) => {
                assert!(step < 50);
                assert!(detail.contains("last finite"));
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
