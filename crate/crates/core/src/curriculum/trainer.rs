use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{mask_for_task, stage_loss, HeadLosses, MaskedModelInput, StageConfig, TaskKind, TrainItem};
use crate::dual_lm::LmModel;
use crate::error::{Error, Result};
use crate::frontend::Bpe;
use crate::harness::checkpoint::{Checkpoint, CheckpointHeader};
use crate::numerics::{cosine_lr, Adam, AdamConfig, Graph};

/// Seeded task picker over a stage's mixing weights.
#[derive(Debug, Clone)]
pub struct TaskSampler {
    tasks: Vec<TaskKind>,
    dist: WeightedIndex<f64>,
    rng: ChaCha8Rng,
}

impl TaskSampler {
    pub fn new(weights: &BTreeMap<TaskKind, f64>, seed: u64) -> Result<Self> {
        let tasks: Vec<_> = weights.keys().copied().collect();
        let dist = WeightedIndex::new(weights.values().copied())
            .map_err(|e| Error::InvalidArgument(format!("mixing weights: {e}")))?;
        Ok(Self { tasks, dist, rng: ChaCha8Rng::seed_from_u64(seed) })
    }

    pub fn next_task(&mut self) -> TaskKind {
        self.tasks[self.dist.sample(&mut self.rng)]
    }
}

/// Training pools keyed by task. Items may be shared between pools.
#[derive(Debug, Clone, Default)]
pub struct StageData {
    pub pools: BTreeMap<TaskKind, Vec<TrainItem>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub task: TaskKind,
    pub lr: f64,
    pub loss: f64,
    pub heads: HeadLosses,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageLog {
    pub stage: u8,
    pub steps: Vec<StepLog>,
}

impl StageLog {
    pub fn curve(&self, task: TaskKind) -> Vec<f64> {
        self.steps.iter().filter(|s| s.task == task).map(|s| s.loss).collect()
    }
}

#[derive(Debug, Clone)]
pub struct StageOutcome {
    pub checkpoint: Checkpoint,
    pub log: StageLog,
}

fn snapshot(model: &LmModel, stage: u8, config_hash: &str, step: usize, seed: u64) -> Checkpoint {
    let header = CheckpointHeader { stage: format!("stage{stage}"), config_hash: config_hash.to_string(), step: step as u64, seed };
    Checkpoint::from_store(header, &model.store)
}

/// Trains `model` for one stage. Stages after the first start from the
/// prior stage's checkpoint and fail without it. A non-finite loss or
/// gradient aborts with the last parameters that produced a finite loss.
#[allow(clippy::too_many_arguments)]
pub fn run_stage(
    model: &mut LmModel,
    cfg: &StageConfig,
    prior: Option<&Checkpoint>,
    data: &StageData,
    tok: &Bpe,
    config_hash: &str,
    seed: u64,
) -> Result<StageOutcome> {
    cfg.validate()?;
    if cfg.stage > 1 {
        let prior = prior.ok_or(Error::MissingCheckpoint { stage: cfg.stage })?;
        prior.apply_to(&mut model.store)?;
    }
    for (task, w) in &cfg.weights {
        if *w > 0.0 && data.pools.get(task).is_none_or(Vec::is_empty) {
            return Err(Error::Empty("training pool for a weighted task"));
        }
    }
    let (d_v, d_mel) = (model.cfg().d_v, model.cfg().d_mel);
    let mut sampler = TaskSampler::new(&cfg.weights, seed ^ cfg.stage as u64)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(31).wrapping_add(cfg.stage as u64));
    let mut adam = Adam::new(AdamConfig::default());
    let mut log = StageLog { stage: cfg.stage, steps: Vec::with_capacity(cfg.steps) };
    let mut last_good = snapshot(model, cfg.stage, config_hash, 0, seed);

    for step in 0..cfg.steps {
        let task = sampler.next_task();
        let pool = &data.pools[&task];
        let idx: Vec<usize> = if pool.len() >= cfg.batch {
            sample(&mut rng, pool.len(), cfg.batch).into_vec()
        } else {
            (0..cfg.batch).map(|_| rng.random_range(0..pool.len())).collect()
        };
        let batch = idx
            .iter()
            .map(|&i| mask_for_task(&pool[i], task, tok, d_v, d_mel, Some(&mut rng)))
            .collect::<Result<Vec<MaskedModelInput>>>()?;
        let lr = cosine_lr(step + 1, cfg.warmup, cfg.lr_min, cfg.lr_max, cfg.steps);

        let (loss, heads, grads) = {
            let mut g = Graph::new(&model.store);
            let (loss, heads) = stage_loss(model, &mut g, &batch)?;
            let v = g.scalar(loss) as f64;
            (v, heads, v.is_finite().then(|| g.backward(loss)))
        };
        let Some(grads) = grads else {
            return Err(Error::Divergence { step, last_good: Box::new(last_good) });
        };
        last_good = snapshot(model, cfg.stage, config_hash, step, seed);
        model.store.zero_grad();
        grads.accumulate_into(&mut model.store);
        match adam.step(&mut model.store, lr as f32) {
            Err(Error::NonFiniteGradient { .. }) => {
                return Err(Error::Divergence { step, last_good: Box::new(last_good) });
            }
            r => r?,
        }
        log::debug!("stage {} step {step} {task} loss {loss:.4} lr {lr:.2e}", cfg.stage);
        log.steps.push(StepLog { step, task, lr, loss, heads });
    }
    model.store.zero_grad();
    model.stage = Some(format!("stage{}", cfg.stage));
    Ok(StageOutcome { checkpoint: snapshot(model, cfg.stage, config_hash, cfg.steps, seed), log })
}

/// Mean per-head teacher-forced CE of each held-out task set. Uses the
/// deterministic speaker crop and never touches the parameters.
pub fn forgetting_probe(
    model: &LmModel,
    sets: &BTreeMap<TaskKind, Vec<TrainItem>>,
    tok: &Bpe,
) -> Result<BTreeMap<TaskKind, f64>> {
    let (d_v, d_mel) = (model.cfg().d_v, model.cfg().d_mel);
    let mut out = BTreeMap::new();
    for (&task, items) in sets {
        if items.is_empty() {
            return Err(Error::Empty("held-out probe set"));
        }
        let mut sum = 0.0;
        for item in items {
            let m = mask_for_task(item, task, tok, d_v, d_mel, None)?;
            let mut g = Graph::new(&model.store);
            let (_, heads) = stage_loss(model, &mut g, std::slice::from_ref(&m))?;
            let parts: Vec<f64> = [heads.audio, heads.speech].into_iter().flatten().collect();
            sum += parts.iter().sum::<f64>() / parts.len() as f64;
        }
        out.insert(task, sum / items.len() as f64);
    }
    Ok(out)
}
