//! Episodic environment over a sample and its sequence event set.
//!
//! The state at step `t` is the original text plus the first `t` events,
//! each introduced by the `</event>` separator, together with the sample's
//! (constant) image. Transitions are action-independent; the per-step reward
//! is the mean of token-level micro-F1 of the two heads' argmax decodes
//! against gold on original-text positions only.

use std::io::Write;
use std::path::PathBuf;

use serde::Serialize;

use crate::agent::{StateText, TagDistributions};
use crate::corpus::{AlignedLabels, AspectTag, Sample, SentimentTag};
use crate::decompose::SequenceEventSet;
use crate::error::{Error, Result};
use crate::metrics::{decode_tags, gold_tag_sequence, PairPrediction, TagSequence};
use crate::tokenizer::EVENT_SEPARATOR;

/// Environment knobs independent of the RL optimizer.
#[derive(Debug, Clone, PartialEq, serde::Deserialize, Serialize)]
#[serde(default)]
pub struct EnvConfig {
    /// Score the initial state in addition to each post-transition state.
    pub score_s0: bool,
    /// Cap on consumed events per episode (`None` = use all).
    pub max_events: Option<usize>,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            score_s0: true,
            max_events: None,
        }
    }
}

/// Text-and-image state at a step of an episode.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    /// Number of events consumed so far.
    pub t: usize,
    /// Original words followed by `</event>`-prefixed event words.
    pub tokens: Vec<String>,
    /// Length of the original-text prefix of `tokens`.
    pub n_original: usize,
    pub image_ref: PathBuf,
    pub sample_id: String,
}

impl State {
    pub fn text_view(&self) -> StateText<'_> {
        StateText {
            words: &self.tokens,
            n_original: self.n_original,
        }
    }
}

/// Outcome of one transition.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next_state: State,
    pub reward: f64,
    pub done: bool,
}

impl StepOutcome {
    /// Assemble an outcome, deriving `done` from the episode length.
    pub fn new(next_state: State, reward: f64, total_events: usize) -> StepOutcome {
        let done = next_state.t >= total_events;
        StepOutcome {
            next_state,
            reward,
            done,
        }
    }
}

/// Number of events an episode will consume under `cfg`.
pub fn episode_len(events: &SequenceEventSet, cfg: &EnvConfig) -> usize {
    match cfg.max_events {
        Some(cap) => events.events.len().min(cap),
        None => events.events.len(),
    }
}

/// Initial state: the raw sample text, zero events consumed.
pub fn reset(sample: &Sample, _events: &SequenceEventSet) -> State {
    State {
        t: 0,
        tokens: sample.tokens.clone(),
        n_original: sample.tokens.len(),
        image_ref: sample.image_ref.clone(),
        sample_id: sample.id.clone(),
    }
}

/// Append the next event (separator plus its whitespace-split words) and
/// advance the step counter.
pub fn step(state: &State, events: &SequenceEventSet) -> Result<State> {
    let next_event = events
        .events
        .get(state.t)
        .ok_or_else(|| Error::Train(format!(
            "step beyond episode end: t={} with {} events",
            state.t,
            events.events.len()
        )))?;
    let mut tokens = state.tokens.clone();
    tokens.push(EVENT_SEPARATOR.to_string());
    tokens.extend(next_event.split_whitespace().map(str::to_string));
    Ok(State {
        t: state.t + 1,
        tokens,
        n_original: state.n_original,
        image_ref: state.image_ref.clone(),
        sample_id: state.sample_id.clone(),
    })
}

/// Token-level micro-F1 over the positive classes of one head.
///
/// When both the predicted and the gold positive sets are empty the score is
/// 1 (correct abstention); when exactly one is empty it is 0.
fn token_micro_f1(pred: &[usize], gold: &[usize], positive: &[usize]) -> f64 {
    debug_assert_eq!(pred.len(), gold.len());
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for c in positive {
        for (p, g) in pred.iter().zip(gold.iter()) {
            match (p == c, g == c) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
    }
    let pred_pos = tp + fp;
    let gold_pos = tp + fn_;
    if pred_pos == 0 && gold_pos == 0 {
        return 1.0;
    }
    if pred_pos == 0 || gold_pos == 0 {
        return 0.0;
    }
    if tp == 0 {
        return 0.0;
    }
    let p = tp as f64 / pred_pos as f64;
    let r = tp as f64 / gold_pos as f64;
    2.0 * p * r / (p + r)
}

/// Reward for a state's predictions: restrict to original-text positions,
/// argmax-decode both heads, and average their token-level micro-F1 against
/// gold. Always in `[0, 1]`.
pub fn compute_reward(dists: &TagDistributions, gold: &AlignedLabels) -> Result<f64> {
    if dists.len() != gold.subtoken_count() {
        return Err(Error::Shape(format!(
            "reward: distributions cover {} positions, state has {}",
            dists.len(),
            gold.subtoken_count()
        )));
    }
    let pred = decode_tags(dists, &gold.subtoken_to_word);
    let gold_seq = gold_tag_sequence(gold);
    Ok(reward_from_tags(&pred, &gold_seq))
}

/// Reward from already-decoded tag sequences on the same positions.
pub fn reward_from_tags(pred: &TagSequence, gold: &TagSequence) -> f64 {
    let pa: Vec<usize> = pred.aspect.iter().map(|t| t.index()).collect();
    let ga: Vec<usize> = gold.aspect.iter().map(|t| t.index()).collect();
    let ps: Vec<usize> = pred.sentiment.iter().map(|t| t.index()).collect();
    let gs: Vec<usize> = gold.sentiment.iter().map(|t| t.index()).collect();
    let f1_a = token_micro_f1(
        &pa,
        &ga,
        &[AspectTag::B.index(), AspectTag::I.index()],
    );
    let f1_s = token_micro_f1(
        &ps,
        &gs,
        &[
            SentimentTag::Pos.index(),
            SentimentTag::Neu.index(),
            SentimentTag::Neg.index(),
        ],
    );
    (f1_a + f1_s) / 2.0
}

/// Discounted suffix sums `G_t = sum_{k>=t} gamma^{k-t} R_k`, computed by the
/// reverse recurrence `G_t = R_t + gamma * G_{t+1}`.
pub fn discounted_returns(rewards: &[f64], gamma: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::Config(format!(
            "discount factor must be in [0, 1], got {gamma}"
        )));
    }
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (i, r) in rewards.iter().enumerate().rev() {
        acc = r + gamma * acc;
        out[i] = acc;
    }
    Ok(out)
}

/// One evaluated step of an episode, as recorded during a rollout.
#[derive(Debug, Clone)]
pub struct TraceStep {
    /// Events consumed when this state was evaluated.
    pub t: usize,
    pub state_tokens: Vec<String>,
    pub n_original: usize,
    /// Sampled class index per supervised position, aspect head.
    pub sampled_aspect: Vec<usize>,
    /// Sampled class index per supervised position, sentiment head.
    pub sampled_sentiment: Vec<usize>,
    /// Gold class index per supervised position, aspect head.
    pub gold_aspect: Vec<usize>,
    /// Gold class index per supervised position, sentiment head.
    pub gold_sentiment: Vec<usize>,
    /// Total log-probability of the sampled action under the rollout policy.
    pub log_prob: f64,
    pub reward: f64,
    /// Pairs decoded from the argmax prediction at this step.
    pub decoded_pairs: Vec<PairPrediction>,
}

/// Per-step log of one episode plus its discounted returns.
#[derive(Debug, Clone)]
pub struct EpisodeTrace {
    pub sample_id: String,
    /// The episode's (constant) image.
    pub image_ref: PathBuf,
    pub gamma: f64,
    pub steps: Vec<TraceStep>,
    pub returns: Vec<f64>,
    /// Parameter version of the policy that produced the log-probs.
    pub agent_version: u64,
}

impl EpisodeTrace {
    pub fn new(
        sample_id: String,
        image_ref: PathBuf,
        gamma: f64,
        agent_version: u64,
    ) -> EpisodeTrace {
        EpisodeTrace {
            sample_id,
            image_ref,
            gamma,
            steps: Vec::new(),
            returns: Vec::new(),
            agent_version,
        }
    }

    /// Compute returns from the recorded rewards.
    pub fn finalize(&mut self) -> Result<()> {
        let rewards: Vec<f64> = self.steps.iter().map(|s| s.reward).collect();
        self.returns = discounted_returns(&rewards, self.gamma)?;
        Ok(())
    }

    /// Append one JSON line per step for debugging.
    pub fn dump_jsonl(&self, w: &mut impl Write) -> Result<()> {
        #[derive(Serialize)]
        struct Line<'a> {
            sample_id: &'a str,
            t: usize,
            reward: f64,
            #[serde(rename = "return")]
            ret: f64,
            decoded_pairs: &'a [PairPrediction],
        }
        for (step, ret) in self.steps.iter().zip(self.returns.iter()) {
            let line = Line {
                sample_id: &self.sample_id,
                t: step.t,
                reward: step.reward,
                ret: *ret,
                decoded_pairs: &step.decoded_pairs,
            };
            serde_json::to_writer(&mut *w, &line)?;
            w.write_all(b"\n")
                .map_err(|e| Error::io("trace dump", e))?;
        }
        Ok(())
    }
}
