//! Two-phase optimization of the agent: supervised clone learning on states
//! drawn from episodes, then REINFORCE over full episodes with per-step
//! token-F1 rewards.
//!
//! Both phases reduce their objectives to gradients on the two heads' logit
//! rows (`coeff * (p - onehot)`), which `Agent::backward` propagates through
//! the network. Clone learning uses Adam by default; the policy-gradient
//! phase defaults to plain SGD so a single update is exactly
//! `lr * advantage * grad(log pi)` (up to clipping).

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{image_to_patches, Agent, AgentParams, ForwardMode, TagDistributions};
use crate::corpus::{align_labels, AlignedLabels, AspectTag, Sample, SentimentTag};
use crate::decompose::SequenceEventSet;
use crate::env::{
    compute_reward, episode_len, reset, reward_from_tags, step, EnvConfig, EpisodeTrace, State,
    TraceStep,
};
use crate::error::{Error, Result};
use crate::metrics::{
    decode_tags, extract_pairs, gold_pairs, gold_tag_sequence, pair_micro_f1, EvalReport,
    SamplePairs, TagSequence,
};
use crate::tensor::{clip_global_norm, Mat, Optimizer};

/// Supervised clone-learning phase configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CloneConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Optional hard cap on optimizer steps (useful for smoke runs).
    pub max_steps: Option<u64>,
    pub dropout: f64,
    pub loss_weight_aspect: f64,
    pub loss_weight_sentiment: f64,
    /// Draw training states from random episode steps; `false` trains on the
    /// raw text only (the plain-agent ablation).
    pub events_enabled: bool,
    /// Dev evaluation cadence in optimizer steps (also at each epoch end).
    pub eval_every_steps: u64,
    /// Early-stop patience in epochs without dev improvement.
    pub patience: usize,
    pub grad_clip: f64,
    pub optimizer: OptimizerKind,
}

impl Default for CloneConfig {
    fn default() -> Self {
        CloneConfig {
            learning_rate: 2e-5,
            batch_size: 8,
            max_epochs: 20,
            max_steps: None,
            dropout: 0.1,
            loss_weight_aspect: 0.5,
            loss_weight_sentiment: 0.5,
            events_enabled: true,
            eval_every_steps: 200,
            patience: 3,
            grad_clip: 1.0,
            optimizer: OptimizerKind::Adam,
        }
    }
}

impl CloneConfig {
    pub fn validate(&self) -> Result<()> {
        if (self.loss_weight_aspect + self.loss_weight_sentiment - 1.0).abs() > 1e-9 {
            return Err(Error::Config("clone loss weights must sum to 1".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("clone learning rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl OptimizerKind {
    fn build(self, lr: f64) -> Optimizer {
        match self {
            OptimizerKind::Sgd => Optimizer::sgd(lr),
            OptimizerKind::Adam => Optimizer::adam(lr),
        }
    }
}

/// Baseline subtracted from returns in the policy-gradient update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Baseline {
    None,
    /// Per-step-index exponential moving average of observed returns.
    MovingAverage { decay: f64 },
}

/// Reinforcement phase configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RLConfig {
    pub learning_rate: f64,
    pub gamma: f64,
    pub baseline: Baseline,
    /// Weight of an entropy bonus added to the objective (0 disables).
    pub entropy_bonus: f64,
    pub episodes_per_update: usize,
    pub epochs: usize,
    /// Score episodes with argmax-decoded predictions (default) or with the
    /// sampled action itself.
    pub reward_from: RewardFrom,
    /// Optional auxiliary clone-loss weight mixed into the RL update.
    pub aux_clone_weight: f64,
    pub grad_clip: f64,
    pub optimizer: OptimizerKind,
    /// Dev evaluation cadence in episodes (also at each epoch end).
    pub eval_every_episodes: u64,
}

impl Default for RLConfig {
    fn default() -> Self {
        RLConfig {
            learning_rate: 1e-5,
            gamma: 0.99,
            baseline: Baseline::None,
            entropy_bonus: 0.0,
            episodes_per_update: 1,
            epochs: 1,
            reward_from: RewardFrom::Argmax,
            aux_clone_weight: 0.0,
            grad_clip: 1.0,
            optimizer: OptimizerKind::Sgd,
            eval_every_episodes: 200,
        }
    }
}

impl RLConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("rl learning rate must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config("gamma must be in [0, 1]".into()));
        }
        if self.episodes_per_update == 0 {
            return Err(Error::Config("episodes_per_update must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardFrom {
    Argmax,
    Sampled,
}

/// One line of the training metrics stream.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub phase: String,
    pub step: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reward: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dev_precision: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dev_recall: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dev_f1: Option<f64>,
    pub wall_time: f64,
}

/// JSONL metrics sink; records are also kept in memory for inspection.
pub struct MetricsStream {
    out: Option<BufWriter<File>>,
    start: Instant,
    pub history: Vec<MetricsRecord>,
}

impl MetricsStream {
    pub fn to_file(path: &Path) -> Result<MetricsStream> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(MetricsStream {
            out: Some(BufWriter::new(file)),
            start: Instant::now(),
            history: Vec::new(),
        })
    }

    pub fn in_memory() -> MetricsStream {
        MetricsStream {
            out: None,
            start: Instant::now(),
            history: Vec::new(),
        }
    }

    pub fn emit(&mut self, mut record: MetricsRecord) {
        record.wall_time = self.start.elapsed().as_secs_f64();
        if let Some(out) = &mut self.out {
            if let Ok(line) = serde_json::to_string(&record) {
                let _ = out.write_all(line.as_bytes());
                let _ = out.write_all(b"\n");
                let _ = out.flush();
            }
        }
        self.history.push(record);
    }
}

/// Per-sample image patch cache; decode and patchify happen once per path.
pub struct ImageStore {
    cache: HashMap<PathBuf, Mat>,
}

impl ImageStore {
    pub fn new() -> ImageStore {
        ImageStore {
            cache: HashMap::new(),
        }
    }

    pub fn get(&mut self, path: &Path, agent: &Agent) -> Result<Mat> {
        if let Some(m) = self.cache.get(path) {
            return Ok(m.clone());
        }
        let patches = image_to_patches(path, &agent.cfg)?;
        self.cache.insert(path.to_path_buf(), patches.clone());
        Ok(patches)
    }
}

impl Default for ImageStore {
    fn default() -> Self {
        Self::new()
    }
}

/// Cross-entropy clone loss: mean over supervised positions of the
/// per-token losses of both heads, combined with the configured weights.
pub fn clone_loss(
    dists: &TagDistributions,
    gold: &AlignedLabels,
    w_aspect: f64,
    w_sentiment: f64,
) -> Result<f64> {
    Ok(clone_loss_grad(dists, gold, w_aspect, w_sentiment)?.0)
}

/// Clone loss together with its gradient on both heads' logits.
pub fn clone_loss_grad(
    dists: &TagDistributions,
    gold: &AlignedLabels,
    w_aspect: f64,
    w_sentiment: f64,
) -> Result<(f64, Mat, Mat)> {
    if dists.len() != gold.subtoken_count() {
        return Err(Error::Shape(format!(
            "clone loss: {} distribution rows vs {} gold positions",
            dists.len(),
            gold.subtoken_count()
        )));
    }
    let positions = gold.supervised_positions();
    if positions.is_empty() {
        return Err(Error::Train("clone loss: every position is masked".into()));
    }
    let m = positions.len() as f64;
    let mut loss = 0.0;
    let mut d_la = Mat::zeros((dists.len(), 3));
    let mut d_ls = Mat::zeros((dists.len(), 4));
    for &i in &positions {
        let ga = gold.aspect_tags[i].index();
        let gs = gold.sentiment_tags[i].index();
        loss -= w_aspect * dists.aspect[[i, ga]].max(f64::MIN_POSITIVE).ln();
        loss -= w_sentiment * dists.sentiment[[i, gs]].max(f64::MIN_POSITIVE).ln();
        for c in 0..3 {
            let onehot = if c == ga { 1.0 } else { 0.0 };
            d_la[[i, c]] = w_aspect / m * (dists.aspect[[i, c]] - onehot);
        }
        for c in 0..4 {
            let onehot = if c == gs { 1.0 } else { 0.0 };
            d_ls[[i, c]] = w_sentiment / m * (dists.sentiment[[i, c]] - onehot);
        }
    }
    Ok((loss / m, d_la, d_ls))
}

/// A sampled discrete action: one class per supervised position and head.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledAction {
    /// Row indices the action covers (supervised positions).
    pub positions: Vec<usize>,
    pub aspect: Vec<usize>,
    pub sentiment: Vec<usize>,
    pub log_prob: f64,
}

/// Independent per-token categorical sampling on both heads over the given
/// rows; the log-probability is the sum over rows and heads of the chosen
/// class's log-probability.
pub fn sample_action(
    dists: &TagDistributions,
    positions: &[usize],
    rng: &mut ChaCha8Rng,
) -> SampledAction {
    let mut aspect = Vec::with_capacity(positions.len());
    let mut sentiment = Vec::with_capacity(positions.len());
    let mut log_prob = 0.0;
    for &i in positions {
        let a = sample_row(dists.aspect.row(i), rng);
        let s = sample_row(dists.sentiment.row(i), rng);
        log_prob += dists.aspect[[i, a]].max(f64::MIN_POSITIVE).ln();
        log_prob += dists.sentiment[[i, s]].max(f64::MIN_POSITIVE).ln();
        aspect.push(a);
        sentiment.push(s);
    }
    SampledAction {
        positions: positions.to_vec(),
        aspect,
        sentiment,
        log_prob,
    }
}

fn sample_row(row: ndarray::ArrayView1<'_, f64>, rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    row.len() - 1
}

/// Gradient of `-advantage * log pi` w.r.t. one softmax row's logits.
pub fn policy_logit_grad(p_row: &[f64], sampled: usize, advantage: f64) -> Vec<f64> {
    p_row
        .iter()
        .enumerate()
        .map(|(c, &p)| {
            let onehot = if c == sampled { 1.0 } else { 0.0 };
            advantage * (p - onehot)
        })
        .collect()
}

/// Running baseline keyed by step index.
#[derive(Debug, Clone, Default)]
pub struct BaselineState {
    values: Vec<Option<f64>>,
}

impl BaselineState {
    pub fn advantage(&self, cfg: &Baseline, t: usize, g: f64) -> f64 {
        match cfg {
            Baseline::None => g,
            Baseline::MovingAverage { .. } => {
                g - self.values.get(t).copied().flatten().unwrap_or(0.0)
            }
        }
    }

    pub fn absorb(&mut self, cfg: &Baseline, t: usize, g: f64) {
        if let Baseline::MovingAverage { decay } = cfg {
            if self.values.len() <= t {
                self.values.resize(t + 1, None);
            }
            let updated = match self.values[t] {
                Some(old) => decay * old + (1.0 - decay) * g,
                None => g,
            };
            self.values[t] = Some(updated);
        }
    }
}

fn state_at(sample: &Sample, events: &SequenceEventSet, t: usize) -> Result<State> {
    let mut state = reset(sample, events);
    for _ in 0..t {
        state = step(&state, events)?;
    }
    Ok(state)
}

/// Which state final predictions are read from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalState {
    /// The raw text, no events appended.
    Original,
    /// The last state of the episode, all events appended.
    Final,
}

/// Evaluation output: the report plus per-sample predictions for dumps.
#[derive(Debug, Clone)]
pub struct EvalOutput {
    pub report: EvalReport,
    pub predictions: Vec<SamplePairs>,
}

/// Run inference over a dataset and score extracted pairs against gold.
pub fn evaluate_agent(
    agent: &Agent,
    data: &[(Sample, SequenceEventSet)],
    images: &mut ImageStore,
    env_cfg: &EnvConfig,
    eval_state: EvalState,
) -> Result<EvalOutput> {
    let mut predictions = Vec::with_capacity(data.len());
    let mut gold = Vec::with_capacity(data.len());
    let mut confusion_pairs: Vec<(TagSequence, TagSequence)> = Vec::with_capacity(data.len());
    for (sample, events) in data {
        let t = match eval_state {
            EvalState::Original => 0,
            EvalState::Final => episode_len(events, env_cfg),
        };
        let state = state_at(sample, events, t)?;
        let patches = images.get(&sample.image_ref, agent)?;
        let (dists, cache) = agent.forward(
            state.text_view(),
            &patches,
            &mut ForwardMode::Inference,
        )?;
        let labels = align_labels(sample, &cache.text.tok)?;
        let pred_tags = decode_tags(&dists, &labels.subtoken_to_word);
        let pairs = extract_pairs(&pred_tags);
        confusion_pairs.push((pred_tags, gold_tag_sequence(&labels)));
        predictions.push(SamplePairs {
            id: sample.id.clone(),
            pairs,
        });
        gold.push(gold_pairs(sample));
    }
    let mut report = pair_micro_f1(&predictions, &gold);
    for (pred, gold_seq) in &confusion_pairs {
        report.add_token_confusion(pred, gold_seq);
    }
    Ok(EvalOutput {
        report,
        predictions,
    })
}

/// Result of the clone-learning phase. The agent is left at the best-dev
/// parameters.
#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub best_dev: EvalReport,
    pub best_step: u64,
    pub steps: u64,
    pub epochs_run: usize,
}

/// Supervised clone learning: per sample and epoch, draw a state at a
/// uniformly random episode step and minimize the weighted cross-entropy
/// against gold on original-text positions. Keeps the best-dev checkpoint.
pub fn pretrain(
    dataset: &[(Sample, SequenceEventSet)],
    dev: &[(Sample, SequenceEventSet)],
    agent: &mut Agent,
    cfg: &CloneConfig,
    env_cfg: &EnvConfig,
    images: &mut ImageStore,
    metrics: &mut MetricsStream,
    rng: &mut ChaCha8Rng,
) -> Result<PretrainOutcome> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Train("empty training set".into()));
    }
    agent.cfg.dropout = cfg.dropout;
    let eval_state = if cfg.events_enabled {
        EvalState::Final
    } else {
        EvalState::Original
    };
    let mut opt = cfg.optimizer.build(cfg.learning_rate);
    let mut best_params = agent.params.clone();
    let mut best_report = EvalReport::default();
    let mut best_f1 = -1.0;
    let mut best_step = 0u64;
    let mut global_step = 0u64;
    let mut epochs_run = 0usize;
    let mut epochs_without_improvement = 0usize;

    'training: for epoch in 0..cfg.max_epochs {
        epochs_run = epoch + 1;
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(rng);
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = agent.params.zeros_like();
            let mut batch_loss = 0.0;
            for &idx in batch {
                let (sample, events) = &dataset[idx];
                let l = if cfg.events_enabled {
                    episode_len(events, env_cfg)
                } else {
                    0
                };
                let t = if l > 0 { rng.random_range(0..=l) } else { 0 };
                let state = state_at(sample, events, t)?;
                let patches = images.get(&sample.image_ref, agent)?;
                let (dists, cache) =
                    agent.forward(state.text_view(), &patches, &mut ForwardMode::Train(rng))?;
                let labels = align_labels(sample, &cache.text.tok)?;
                let (loss, d_la, d_ls) = clone_loss_grad(
                    &dists,
                    &labels,
                    cfg.loss_weight_aspect,
                    cfg.loss_weight_sentiment,
                )?;
                if !loss.is_finite() {
                    return Err(Error::Train(format!(
                        "non-finite clone loss at step {global_step} on sample {} (epoch {epoch})",
                        sample.id
                    )));
                }
                batch_loss += loss / batch.len() as f64;
                let g = agent.backward(&cache, &d_la, &d_ls);
                grads.add_scaled(&g, 1.0 / batch.len() as f64);
            }
            apply_step(agent, &grads, &mut opt, cfg.grad_clip);
            global_step += 1;
            metrics.emit(MetricsRecord {
                phase: "clone".into(),
                step: global_step,
                loss: Some(batch_loss),
                reward: None,
                dev_precision: None,
                dev_recall: None,
                dev_f1: None,
                wall_time: 0.0,
            });
            let step_cap_hit = cfg.max_steps.is_some_and(|cap| global_step >= cap);
            if global_step % cfg.eval_every_steps == 0 || step_cap_hit {
                let out = evaluate_agent(agent, dev, images, env_cfg, eval_state)?;
                emit_dev(metrics, "clone", global_step, &out.report);
                if out.report.f1 > best_f1 {
                    best_f1 = out.report.f1;
                    best_params = agent.params.clone();
                    best_report = out.report;
                    best_step = global_step;
                }
            }
            if step_cap_hit {
                break 'training;
            }
        }
        // Epoch-end evaluation drives early stopping.
        let out = evaluate_agent(agent, dev, images, env_cfg, eval_state)?;
        emit_dev(metrics, "clone", global_step, &out.report);
        if out.report.f1 > best_f1 {
            best_f1 = out.report.f1;
            best_params = agent.params.clone();
            best_report = out.report;
            best_step = global_step;
            epochs_without_improvement = 0;
        } else {
            epochs_without_improvement += 1;
            if epochs_without_improvement >= cfg.patience {
                log::info!("early stop after {} epochs without dev improvement", cfg.patience);
                break;
            }
        }
    }
    agent.params = best_params;
    agent.version += 1;
    Ok(PretrainOutcome {
        best_dev: best_report,
        best_step,
        steps: global_step,
        epochs_run,
    })
}

fn emit_dev(metrics: &mut MetricsStream, phase: &str, step: u64, report: &EvalReport) {
    metrics.emit(MetricsRecord {
        phase: format!("{phase}-eval"),
        step,
        loss: None,
        reward: None,
        dev_precision: Some(report.precision),
        dev_recall: Some(report.recall),
        dev_f1: Some(report.f1),
        wall_time: 0.0,
    });
}

fn apply_step(agent: &mut Agent, grads: &AgentParams, opt: &mut Optimizer, clip: f64) -> f64 {
    let mut clipped = grads.clone();
    let norm = {
        let mut tensors = clipped.tensors_mut();
        clip_global_norm(&mut tensors, clip)
    };
    let grad_refs: Vec<&Mat> = clipped.named().into_iter().map(|(_, m)| m).collect();
    // Pair parameters with gradients positionally; both listings share the
    // same fixed order.
    let pairs: Vec<(&mut Mat, &Mat)> = agent
        .params
        .tensors_mut()
        .into_iter()
        .zip(grad_refs)
        .collect();
    opt.step(pairs);
    agent.version += 1;
    norm
}

/// Roll one episode under the current policy: evaluate the initial state
/// (when configured), then append events one at a time, sampling an action
/// and recording reward at every evaluated state.
pub fn run_episode(
    agent: &Agent,
    sample: &Sample,
    events: &SequenceEventSet,
    env_cfg: &EnvConfig,
    rl_cfg: &RLConfig,
    images: &mut ImageStore,
    rng: &mut ChaCha8Rng,
) -> Result<EpisodeTrace> {
    let mut trace = EpisodeTrace::new(
        sample.id.clone(),
        sample.image_ref.clone(),
        rl_cfg.gamma,
        agent.version,
    );
    let l = episode_len(events, env_cfg);
    let patches = images.get(&sample.image_ref, agent)?;
    let mut state = reset(sample, events);
    for t in 0..=l {
        if t > 0 {
            state = step(&state, events)?;
        }
        if t == 0 && !env_cfg.score_s0 {
            continue;
        }
        let (dists, cache) =
            agent.forward(state.text_view(), &patches, &mut ForwardMode::Inference)?;
        let labels = align_labels(sample, &cache.text.tok)?;
        let positions = labels.supervised_positions();
        let action = sample_action(&dists, &positions, rng);
        let pred_tags = decode_tags(&dists, &labels.subtoken_to_word);
        let gold_seq = gold_tag_sequence(&labels);
        let reward = match rl_cfg.reward_from {
            RewardFrom::Argmax => compute_reward(&dists, &labels)?,
            RewardFrom::Sampled => {
                let sampled_tags = TagSequence {
                    aspect: action.aspect.iter().map(|&c| AspectTag::from_index(c)).collect(),
                    sentiment: action
                        .sentiment
                        .iter()
                        .map(|&c| SentimentTag::from_index(c))
                        .collect(),
                    word_index: pred_tags.word_index.clone(),
                };
                reward_from_tags(&sampled_tags, &gold_seq)
            }
        };
        trace.steps.push(TraceStep {
            t: state.t,
            state_tokens: state.tokens.clone(),
            n_original: state.n_original,
            sampled_aspect: action.aspect,
            sampled_sentiment: action.sentiment,
            gold_aspect: gold_seq.aspect.iter().map(|t| t.index()).collect(),
            gold_sentiment: gold_seq.sentiment.iter().map(|t| t.index()).collect(),
            log_prob: action.log_prob,
            reward,
            decoded_pairs: extract_pairs(&pred_tags),
        });
    }
    trace.finalize()?;
    Ok(trace)
}

/// Statistics of one policy-gradient update.
#[derive(Debug, Clone, Copy, Default)]
pub struct UpdateStats {
    pub mean_return: f64,
    pub mean_advantage: f64,
    pub grad_norm: f64,
    /// True when the step was skipped because of a non-finite gradient.
    pub skipped: bool,
}

/// One REINFORCE update from on-policy traces: gradient ascent on
/// `sum_t log pi(A_t|S_t) * (G_t - baseline)`, accumulated per episode.
pub fn reinforce_update(
    traces: &[EpisodeTrace],
    agent: &mut Agent,
    cfg: &RLConfig,
    baseline: &mut BaselineState,
    opt: &mut Optimizer,
    images: &mut ImageStore,
) -> Result<UpdateStats> {
    cfg.validate()?;
    if traces.is_empty() {
        return Ok(UpdateStats::default());
    }
    for trace in traces {
        if trace.agent_version != agent.version {
            return Err(Error::Train(format!(
                "off-policy trace: recorded under parameter version {} but agent is at {}",
                trace.agent_version, agent.version
            )));
        }
    }
    let mut grads = agent.params.zeros_like();
    let mut sum_return = 0.0;
    let mut sum_advantage = 0.0;
    let mut n_steps = 0usize;
    let episode_scale = 1.0 / traces.len() as f64;
    for trace in traces {
        for (step_record, &g) in trace.steps.iter().zip(trace.returns.iter()) {
            let advantage = baseline.advantage(&cfg.baseline, step_record.t, g);
            sum_return += g;
            sum_advantage += advantage;
            n_steps += 1;
            let state_text = crate::agent::StateText {
                words: &step_record.state_tokens,
                n_original: step_record.n_original,
            };
            let patches = images.get(&trace.image_ref, agent)?;
            let (dists, cache) =
                agent.forward(state_text, &patches, &mut ForwardMode::Inference)?;
            let labels_positions: Vec<usize> = cache
                .text
                .tok
                .subtoken_to_word
                .iter()
                .enumerate()
                .filter_map(|(i, w)| w.map(|_| i))
                .collect();
            if labels_positions.len() != step_record.sampled_aspect.len() {
                return Err(Error::Train(
                    "trace/state mismatch: sampled action length differs".into(),
                ));
            }
            // On-policy sanity: the recomputed log-prob of the recorded
            // action must match what the rollout logged.
            let mut log_prob = 0.0;
            for (k, &i) in labels_positions.iter().enumerate() {
                log_prob += dists.aspect[[i, step_record.sampled_aspect[k]]]
                    .max(f64::MIN_POSITIVE)
                    .ln();
                log_prob += dists.sentiment[[i, step_record.sampled_sentiment[k]]]
                    .max(f64::MIN_POSITIVE)
                    .ln();
            }
            if (log_prob - step_record.log_prob).abs() > 1e-6 {
                return Err(Error::Train(format!(
                    "off-policy trace: log-prob drifted from {} to {}",
                    step_record.log_prob, log_prob
                )));
            }
            let mut d_la = Mat::zeros((dists.len(), 3));
            let mut d_ls = Mat::zeros((dists.len(), 4));
            for (k, &i) in labels_positions.iter().enumerate() {
                let row: Vec<f64> = dists.aspect.row(i).to_vec();
                for (c, v) in policy_logit_grad(&row, step_record.sampled_aspect[k], advantage)
                    .into_iter()
                    .enumerate()
                {
                    d_la[[i, c]] += v;
                }
                let row: Vec<f64> = dists.sentiment.row(i).to_vec();
                for (c, v) in
                    policy_logit_grad(&row, step_record.sampled_sentiment[k], advantage)
                        .into_iter()
                        .enumerate()
                {
                    d_ls[[i, c]] += v;
                }
                if cfg.entropy_bonus > 0.0 {
                    add_entropy_grad(&mut d_la, &dists.aspect, i, cfg.entropy_bonus);
                    add_entropy_grad(&mut d_ls, &dists.sentiment, i, cfg.entropy_bonus);
                }
            }
            let g_step = agent.backward(&cache, &d_la, &d_ls);
            grads.add_scaled(&g_step, episode_scale);
            if cfg.aux_clone_weight > 0.0 {
                // Mix a supervised term on the same state, with gold taken
                // from the trace.
                let mut aspect_tags = vec![AspectTag::O; dists.len()];
                let mut sentiment_tags = vec![SentimentTag::O; dists.len()];
                for (k, &i) in labels_positions.iter().enumerate() {
                    aspect_tags[i] = AspectTag::from_index(step_record.gold_aspect[k]);
                    sentiment_tags[i] = SentimentTag::from_index(step_record.gold_sentiment[k]);
                }
                let labels = AlignedLabels {
                    aspect_tags,
                    sentiment_tags,
                    subtoken_to_word: cache.text.tok.subtoken_to_word.clone(),
                };
                let (_, aux_la, aux_ls) = clone_loss_grad(&dists, &labels, 0.5, 0.5)?;
                let g_aux = agent.backward(&cache, &aux_la, &aux_ls);
                grads.add_scaled(&g_aux, cfg.aux_clone_weight * episode_scale);
            }
        }
    }
    let finite = grads.named().iter().all(|(_, m)| m.iter().all(|v| v.is_finite()));
    let stats = if finite {
        let norm = apply_step(agent, &grads, opt, cfg.grad_clip);
        UpdateStats {
            mean_return: sum_return / n_steps.max(1) as f64,
            mean_advantage: sum_advantage / n_steps.max(1) as f64,
            grad_norm: norm,
            skipped: false,
        }
    } else {
        log::warn!("skipping policy-gradient step: non-finite gradient");
        UpdateStats {
            mean_return: sum_return / n_steps.max(1) as f64,
            mean_advantage: sum_advantage / n_steps.max(1) as f64,
            grad_norm: f64::NAN,
            skipped: true,
        }
    };
    // Absorb observed returns after the update decision.
    for trace in traces {
        for (step_record, &g) in trace.steps.iter().zip(trace.returns.iter()) {
            baseline.absorb(&cfg.baseline, step_record.t, g);
        }
    }
    Ok(stats)
}

fn add_entropy_grad(d: &mut Mat, p: &Mat, row: usize, weight: f64) {
    let mut entropy = 0.0;
    for c in 0..p.ncols() {
        let v = p[[row, c]].max(f64::MIN_POSITIVE);
        entropy -= v * v.ln();
    }
    for c in 0..p.ncols() {
        let v = p[[row, c]].max(f64::MIN_POSITIVE);
        d[[row, c]] += weight * v * (v.ln() + entropy);
    }
}

/// Result of the reinforcement phase. The agent is left at the best-dev
/// parameters; `final_dev` is the score before that restore.
#[derive(Debug, Clone)]
pub struct RlOutcome {
    pub initial_dev: EvalReport,
    pub best_dev: EvalReport,
    pub final_dev: EvalReport,
    pub episodes: u64,
    pub updates: u64,
    pub skipped_updates: u64,
}

/// REINFORCE over episodes: per sample, roll an episode under the current
/// policy, compute returns, and apply one policy-gradient update per
/// `episodes_per_update` episodes. The agent must already carry the
/// clone-learning parameters.
#[allow(clippy::too_many_arguments)]
pub fn train_rl(
    dataset: &[(Sample, SequenceEventSet)],
    dev: &[(Sample, SequenceEventSet)],
    agent: &mut Agent,
    cfg: &RLConfig,
    env_cfg: &EnvConfig,
    images: &mut ImageStore,
    metrics: &mut MetricsStream,
    rng: &mut ChaCha8Rng,
) -> Result<RlOutcome> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Train("empty training set".into()));
    }
    let mut opt = cfg.optimizer.build(cfg.learning_rate);
    let mut baseline = BaselineState::default();
    let initial = evaluate_agent(agent, dev, images, env_cfg, EvalState::Final)?.report;
    emit_dev(metrics, "rl", 0, &initial);
    let mut best_report = initial.clone();
    let mut best_params = agent.params.clone();
    let mut episodes = 0u64;
    let mut updates = 0u64;
    let mut skipped = 0u64;
    let mut reward_step = 0u64;
    let mut pending: Vec<EpisodeTrace> = Vec::new();
    for _epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(rng);
        for idx in order {
            let (sample, events) = &dataset[idx];
            let trace = run_episode(agent, sample, events, env_cfg, cfg, images, rng)?;
            episodes += 1;
            for step_record in &trace.steps {
                reward_step += 1;
                metrics.emit(MetricsRecord {
                    phase: "rl".into(),
                    step: reward_step,
                    loss: None,
                    reward: Some(step_record.reward),
                    dev_precision: None,
                    dev_recall: None,
                    dev_f1: None,
                    wall_time: 0.0,
                });
            }
            pending.push(trace);
            if pending.len() >= cfg.episodes_per_update {
                let stats = reinforce_update(&pending, agent, cfg, &mut baseline, &mut opt, images)?;
                pending.clear();
                updates += 1;
                if stats.skipped {
                    skipped += 1;
                }
            }
            if episodes % cfg.eval_every_episodes == 0 {
                let out = evaluate_agent(agent, dev, images, env_cfg, EvalState::Final)?;
                emit_dev(metrics, "rl", episodes, &out.report);
                if out.report.f1 > best_report.f1 {
                    best_report = out.report;
                    best_params = agent.params.clone();
                }
            }
        }
        if !pending.is_empty() {
            let stats = reinforce_update(&pending, agent, cfg, &mut baseline, &mut opt, images)?;
            pending.clear();
            updates += 1;
            if stats.skipped {
                skipped += 1;
            }
        }
        let out = evaluate_agent(agent, dev, images, env_cfg, EvalState::Final)?;
        emit_dev(metrics, "rl", episodes, &out.report);
        if out.report.f1 > best_report.f1 {
            best_report = out.report;
            best_params = agent.params.clone();
        }
    }
    let final_dev = evaluate_agent(agent, dev, images, env_cfg, EvalState::Final)?.report;
    agent.params = best_params;
    agent.version += 1;
    Ok(RlOutcome {
        initial_dev: initial,
        best_dev: best_report,
        final_dev,
        episodes,
        updates,
        skipped_updates: skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::ModelConfig;
    use crate::corpus::{AspectAnnotation, Sentiment, Split};
    use crate::decompose::fallback_decompose;
    use crate::metrics::one_hot_distributions;
    use rand::SeedableRng;

    fn test_cfg() -> ModelConfig {
        let mut cfg = ModelConfig::toy();
        cfg.d = 16;
        cfg.ff_dim = 16;
        cfg.tokenizer.vocab_size = 512;
        cfg.tokenizer.max_len = 64;
        cfg.dropout = 0.0;
        cfg
    }

    fn labels(
        aspect: &[AspectTag],
        sentiment: &[SentimentTag],
        masked_tail: usize,
    ) -> AlignedLabels {
        let mut a = aspect.to_vec();
        let mut s = sentiment.to_vec();
        let mut map: Vec<Option<usize>> = (0..aspect.len()).map(Some).collect();
        for _ in 0..masked_tail {
            a.push(AspectTag::O);
            s.push(SentimentTag::O);
            map.push(None);
        }
        AlignedLabels {
            aspect_tags: a,
            sentiment_tags: s,
            subtoken_to_word: map,
        }
    }

    #[test]
    fn clone_loss_perfect_prediction_is_zero() {
        use AspectTag as A;
        use SentimentTag as S;
        let gold = labels(&[A::B, A::O], &[S::Pos, S::O], 1);
        let dists = one_hot_distributions(&gold.aspect_tags, &gold.sentiment_tags);
        let loss = clone_loss(&dists, &gold, 0.5, 0.5).unwrap();
        assert!(loss.abs() < 1e-12);
    }

    #[test]
    fn clone_loss_uniform_rows_value() {
        use AspectTag as A;
        use SentimentTag as S;
        let gold = labels(&[A::B, A::I, A::O], &[S::Pos, S::Pos, S::O], 0);
        let dists = TagDistributions {
            aspect: Mat::from_elem((3, 3), 1.0 / 3.0),
            sentiment: Mat::from_elem((3, 4), 0.25),
        };
        let loss = clone_loss(&dists, &gold, 0.5, 0.5).unwrap();
        let expect = 0.5 * 3f64.ln() + 0.5 * 4f64.ln();
        assert!((loss - expect).abs() < 1e-12, "loss {loss} vs {expect}");
    }

    #[test]
    fn clone_loss_matches_scalar_oracle() {
        use AspectTag as A;
        use SentimentTag as S;
        let gold = labels(&[A::B, A::O, A::I], &[S::Neg, S::O, S::Neg], 1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 4;
        let mut aspect = Mat::from_shape_fn((n, 3), |_| rng.random_range(0.05..1.0));
        let mut sentiment = Mat::from_shape_fn((n, 4), |_| rng.random_range(0.05..1.0));
        for mut row in aspect.rows_mut() {
            let s = row.sum();
            row.mapv_inplace(|v| v / s);
        }
        for mut row in sentiment.rows_mut() {
            let s = row.sum();
            row.mapv_inplace(|v| v / s);
        }
        let dists = TagDistributions { aspect: aspect.clone(), sentiment: sentiment.clone() };
        let loss = clone_loss(&dists, &gold, 0.5, 0.5).unwrap();
        // Straight-line re-computation.
        let golds_a = [0usize, 2, 1];
        let golds_s = [2usize, 3, 2];
        let mut oracle = 0.0;
        for i in 0..3 {
            oracle -= 0.5 * aspect[[i, golds_a[i]]].ln();
            oracle -= 0.5 * sentiment[[i, golds_s[i]]].ln();
        }
        oracle /= 3.0;
        assert!((loss - oracle).abs() < 1e-6);
    }

    #[test]
    fn clone_loss_is_symmetric_in_head_losses() {
        use AspectTag as A;
        use SentimentTag as S;
        let gold = labels(&[A::B], &[S::Pos], 0);
        let mk = |pa: f64, ps: f64| {
            let mut aspect = Mat::from_elem((1, 3), (1.0 - pa) / 2.0);
            aspect[[0, 0]] = pa;
            let mut sentiment = Mat::from_elem((1, 4), (1.0 - ps) / 3.0);
            sentiment[[0, 0]] = ps;
            TagDistributions { aspect, sentiment }
        };
        let l1 = clone_loss(&mk(0.3, 0.7), &gold, 0.5, 0.5).unwrap();
        let l2 = clone_loss(&mk(0.7, 0.3), &gold, 0.5, 0.5).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
    }

    #[test]
    fn clone_loss_all_masked_errors() {
        use AspectTag as A;
        use SentimentTag as S;
        let gold = labels(&[], &[], 3);
        let _ = A::O;
        let _ = S::O;
        let dists = TagDistributions {
            aspect: Mat::from_elem((3, 3), 1.0 / 3.0),
            sentiment: Mat::from_elem((3, 4), 0.25),
        };
        assert!(clone_loss(&dists, &gold, 0.5, 0.5).is_err());
    }

    #[test]
    fn masked_positions_do_not_affect_loss_or_grads() {
        use AspectTag as A;
        use SentimentTag as S;
        let gold = labels(&[A::B, A::O], &[S::Neu, S::O], 2);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut aspect = Mat::from_shape_fn((4, 3), |_| rng.random_range(0.05..1.0));
        let mut sentiment = Mat::from_shape_fn((4, 4), |_| rng.random_range(0.05..1.0));
        for mut row in aspect.rows_mut() {
            let s = row.sum();
            row.mapv_inplace(|v| v / s);
        }
        for mut row in sentiment.rows_mut() {
            let s = row.sum();
            row.mapv_inplace(|v| v / s);
        }
        let dists = TagDistributions { aspect, sentiment };
        let (loss, d_la, d_ls) = clone_loss_grad(&dists, &gold, 0.5, 0.5).unwrap();
        // Perturb gold labels at masked positions: nothing changes.
        let mut perturbed = gold.clone();
        perturbed.aspect_tags[2] = A::B;
        perturbed.sentiment_tags[2] = S::Neg;
        perturbed.aspect_tags[3] = A::I;
        perturbed.sentiment_tags[3] = S::Pos;
        let (loss2, d_la2, d_ls2) = clone_loss_grad(&dists, &perturbed, 0.5, 0.5).unwrap();
        assert_eq!(loss, loss2);
        assert_eq!(d_la, d_la2);
        assert_eq!(d_ls, d_ls2);
        // Masked rows carry zero logit gradient.
        for i in 2..4 {
            assert!(d_la.row(i).iter().all(|v| *v == 0.0));
            assert!(d_ls.row(i).iter().all(|v| *v == 0.0));
        }
        assert!(loss.is_finite());
    }

    #[test]
    fn sample_action_one_hot_is_argmax_with_zero_log_prob() {
        use AspectTag as A;
        use SentimentTag as S;
        let dists = one_hot_distributions(&[A::B, A::O], &[S::Neg, S::O]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let action = sample_action(&dists, &[0, 1], &mut rng);
        assert_eq!(action.aspect, vec![A::B.index(), A::O.index()]);
        assert_eq!(action.sentiment, vec![S::Neg.index(), S::O.index()]);
        assert!(action.log_prob.abs() < 1e-12);
    }

    #[test]
    fn sample_action_uniform_aspect_log_prob() {
        use SentimentTag as S;
        // Uniform aspect rows over 5 tokens; one-hot sentiment rows so the
        // aspect head contributes the entire log-prob.
        let n = 5;
        let aspect = Mat::from_elem((n, 3), 1.0 / 3.0);
        let sent_tags = vec![S::Pos; n];
        let sentiment = one_hot_distributions(&vec![AspectTag::O; n], &sent_tags).sentiment;
        let dists = TagDistributions { aspect, sentiment };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let positions: Vec<usize> = (0..n).collect();
        let action = sample_action(&dists, &positions, &mut rng);
        let expect = 5.0 * (1.0f64 / 3.0).ln();
        assert!((action.log_prob - expect).abs() < 1e-12);
    }

    #[test]
    fn sample_action_frequencies_match_distribution() {
        let probs = [0.6, 0.3, 0.1];
        let mut aspect = Mat::zeros((1, 3));
        for (c, p) in probs.iter().enumerate() {
            aspect[[0, c]] = *p;
        }
        let mut sentiment = Mat::zeros((1, 4));
        sentiment[[0, 0]] = 1.0;
        let dists = TagDistributions { aspect, sentiment };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 10_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            let action = sample_action(&dists, &[0], &mut rng);
            counts[action.aspect[0]] += 1;
        }
        for (c, p) in probs.iter().enumerate() {
            let expected = n as f64 * p;
            let sigma = (n as f64 * p * (1.0 - p)).sqrt();
            let diff = (counts[c] as f64 - expected).abs();
            assert!(
                diff <= 3.0 * sigma,
                "class {c}: observed {} expected {expected} (3 sigma {})",
                counts[c],
                3.0 * sigma
            );
        }
    }

    #[test]
    fn two_parameter_policy_update_matches_finite_differences() {
        // Softmax policy over two actions with two logit parameters.
        let theta = [0.3f64, -0.5];
        let softmax2 = |t: &[f64; 2]| {
            let m = t[0].max(t[1]);
            let e0 = (t[0] - m).exp();
            let e1 = (t[1] - m).exp();
            [e0 / (e0 + e1), e1 / (e0 + e1)]
        };
        let sampled = 0usize;
        let g_return = 0.7;
        let lr = 0.05;
        let p = softmax2(&theta);
        // The library's logit gradient is for descent on -G*log pi, so the
        // SGD parameter delta is -lr * that.
        let d = policy_logit_grad(&p, sampled, g_return);
        let delta: Vec<f64> = d.iter().map(|v| -lr * v).collect();
        let h = 1e-5;
        for c in 0..2 {
            let mut tp = theta;
            tp[c] += h;
            let mut tm = theta;
            tm[c] -= h;
            let fp = softmax2(&tp)[sampled].ln() * g_return;
            let fm = softmax2(&tm)[sampled].ln() * g_return;
            let fd = (fp - fm) / (2.0 * h);
            assert!(
                (delta[c] - lr * fd).abs() < 1e-6,
                "param {c}: delta {} vs lr*fd {}",
                delta[c],
                lr * fd
            );
        }
    }

    fn tiny_dataset(
        dir: &std::path::Path,
        specs: &[(&[&str], &[(usize, usize, Sentiment)])],
    ) -> Vec<(Sample, SequenceEventSet)> {
        std::fs::create_dir_all(dir).unwrap();
        let img_path = dir.join("img.png");
        image::RgbImage::from_pixel(16, 16, image::Rgb([10, 150, 60]))
            .save(&img_path)
            .unwrap();
        specs
            .iter()
            .enumerate()
            .map(|(i, (tokens, anns))| {
                let tokens: Vec<String> = tokens.iter().map(|s| s.to_string()).collect();
                let annotations = anns
                    .iter()
                    .map(|&(s, e, sent)| AspectAnnotation {
                        span_start: s,
                        span_end: e,
                        surface: tokens[s..e].join(" "),
                        sentiment: sent,
                    })
                    .collect();
                let text = tokens.join(" ");
                let sample = Sample {
                    id: format!("t{i}"),
                    tokens,
                    image_ref: img_path.clone(),
                    annotations,
                    split: Split::Train,
                };
                let events = fallback_decompose(&text).unwrap();
                (sample, events)
            })
            .collect()
    }

    fn dataset_two_sentences(dir: &std::path::Path) -> Vec<(Sample, SequenceEventSet)> {
        tiny_dataset(
            dir,
            &[
                (
                    &["i", "love", "alice", ".", "i", "hate", "rain", "."],
                    &[(2, 3, Sentiment::Pos), (6, 7, Sentiment::Neg)],
                ),
                (
                    &["saw", "paris", "today", "."],
                    &[(1, 2, Sentiment::Neu)],
                ),
            ],
        )
    }

    #[test]
    fn run_episode_rewards_in_bounds_and_length() {
        let dir = tempfile::tempdir().unwrap();
        let data = dataset_two_sentences(dir.path());
        let agent = Agent::new(test_cfg(), 11).unwrap();
        let mut images = ImageStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let env_cfg = EnvConfig::default();
        let rl_cfg = RLConfig::default();
        let (sample, events) = &data[0];
        let trace =
            run_episode(&agent, sample, events, &env_cfg, &rl_cfg, &mut images, &mut rng)
                .unwrap();
        // score_s0 default: l + 1 evaluation points.
        assert_eq!(trace.steps.len(), events.events.len() + 1);
        for s in &trace.steps {
            assert!((0.0..=1.0).contains(&s.reward));
        }
        assert_eq!(trace.returns.len(), trace.steps.len());
        // Without initial-state scoring there are exactly l points.
        let env_cfg2 = EnvConfig {
            score_s0: false,
            ..Default::default()
        };
        let trace2 =
            run_episode(&agent, sample, events, &env_cfg2, &rl_cfg, &mut images, &mut rng)
                .unwrap();
        assert_eq!(trace2.steps.len(), events.events.len());
    }

    #[test]
    fn zero_reward_episodes_leave_parameters_unchanged() {
        let dir = tempfile::tempdir().unwrap();
        let data = dataset_two_sentences(dir.path());
        let mut agent = Agent::new(test_cfg(), 13).unwrap();
        let mut images = ImageStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let env_cfg = EnvConfig::default();
        let cfg = RLConfig::default();
        let mut opt = cfg.optimizer.build(cfg.learning_rate);
        let mut baseline = BaselineState::default();
        let before = agent.params.clone();
        for _ in 0..20 {
            let (sample, events) = &data[0];
            let mut trace =
                run_episode(&agent, sample, events, &env_cfg, &cfg, &mut images, &mut rng)
                    .unwrap();
            for s in &mut trace.steps {
                s.reward = 0.0;
            }
            trace.finalize().unwrap();
            reinforce_update(&[trace], &mut agent, &cfg, &mut baseline, &mut opt, &mut images)
                .unwrap();
        }
        assert_eq!(agent.params, before, "zero returns must produce zero updates");
    }

    #[test]
    fn off_policy_traces_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let data = dataset_two_sentences(dir.path());
        let mut agent = Agent::new(test_cfg(), 15).unwrap();
        let mut images = ImageStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let env_cfg = EnvConfig::default();
        let cfg = RLConfig::default();
        let mut opt = cfg.optimizer.build(cfg.learning_rate);
        let mut baseline = BaselineState::default();
        let (sample, events) = &data[0];
        let trace =
            run_episode(&agent, sample, events, &env_cfg, &cfg, &mut images, &mut rng).unwrap();
        agent.version += 1;
        let err = reinforce_update(&[trace], &mut agent, &cfg, &mut baseline, &mut opt, &mut images);
        assert!(matches!(err, Err(Error::Train(_))));
    }

    #[test]
    fn moving_average_baseline_kills_drift_under_constant_rewards() {
        let dir = tempfile::tempdir().unwrap();
        let data = dataset_two_sentences(dir.path());
        let mut agent = Agent::new(test_cfg(), 17).unwrap();
        let mut images = ImageStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let env_cfg = EnvConfig::default();
        let cfg = RLConfig {
            baseline: Baseline::MovingAverage { decay: 0.5 },
            learning_rate: 1e-3,
            ..Default::default()
        };
        let mut opt = cfg.optimizer.build(cfg.learning_rate);
        let mut baseline = BaselineState::default();
        let mut drifts = Vec::new();
        for _ in 0..40 {
            let (sample, events) = &data[1];
            let mut trace =
                run_episode(&agent, sample, events, &env_cfg, &cfg, &mut images, &mut rng)
                    .unwrap();
            for s in &mut trace.steps {
                s.reward = 1.0;
            }
            trace.finalize().unwrap();
            let before = agent.params.clone();
            reinforce_update(&[trace], &mut agent, &cfg, &mut baseline, &mut opt, &mut images)
                .unwrap();
            let mut drift: f64 = 0.0;
            let after = agent.params.named();
            for ((_, b), (_, a)) in before.named().iter().zip(after.iter()) {
                drift += b.iter().zip(a.iter()).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
            }
            drifts.push(drift.sqrt());
        }
        // Advantages decay geometrically, so late updates are vanishing.
        assert!(drifts[0] > 0.0, "first update should move parameters");
        let last = *drifts.last().unwrap();
        assert!(
            last < drifts[0] * 1e-6 || last < 1e-12,
            "drift did not vanish: first {} last {last}",
            drifts[0]
        );
    }

    #[test]
    fn pretrain_descends_and_improves_loss() {
        let dir = tempfile::tempdir().unwrap();
        let data = dataset_two_sentences(dir.path());
        let mut agent = Agent::new(test_cfg(), 19).unwrap();
        let mut images = ImageStore::new();
        let mut metrics = MetricsStream::in_memory();
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let cfg = CloneConfig {
            learning_rate: 5e-3,
            batch_size: 2,
            max_epochs: 6,
            max_steps: None,
            dropout: 0.0,
            eval_every_steps: 1000,
            patience: 10,
            ..Default::default()
        };
        let env_cfg = EnvConfig::default();
        pretrain(
            &data,
            &data,
            &mut agent,
            &cfg,
            &env_cfg,
            &mut images,
            &mut metrics,
            &mut rng,
        )
        .unwrap();
        let losses: Vec<f64> = metrics
            .history
            .iter()
            .filter(|r| r.phase == "clone")
            .filter_map(|r| r.loss)
            .collect();
        assert!(losses.len() >= 4);
        let first = losses[0];
        let last_mean: f64 =
            losses[losses.len() - 2..].iter().sum::<f64>() / 2.0;
        assert!(
            last_mean < first,
            "training loss should descend: first {first} late {last_mean}"
        );
    }

    #[test]
    fn pretrain_rejects_bad_weights() {
        let cfg = CloneConfig {
            loss_weight_aspect: 0.7,
            loss_weight_sentiment: 0.5,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
