//! Synthetic dataset generator for desk-scale runs and the acceptance suite.
//!
//! Sentences are built from templated clauses with 1-3 aspect slots; each
//! aspect entity has a fixed sentiment and each clause's cue word agrees
//! with it, so the task is unambiguous and a small agent can overfit it.
//! Images are solid colors keyed to the first aspect's sentiment. Clauses
//! end with a period, so the deterministic fallback decomposition yields one
//! event per clause.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{dataset_stats, write_jsonl, AspectAnnotation, Sample, Sentiment, Split, StatsReport};
use crate::decompose::{fallback_decompose, SequenceEventSet};
use crate::error::{Error, Result};

/// Aspect entities with their fixed sentiments. Multi-word entities
/// exercise span tagging.
const ENTITIES: [(&str, Sentiment); 6] = [
    ("alice", Sentiment::Pos),
    ("bob marley", Sentiment::Pos),
    ("paris", Sentiment::Neu),
    ("old bridge", Sentiment::Neu),
    ("malfoy", Sentiment::Neg),
    ("rainy monday", Sentiment::Neg),
];

/// Clause templates per sentiment; `{}` marks the aspect slot.
fn templates(sentiment: Sentiment) -> &'static [&'static str] {
    match sentiment {
        Sentiment::Pos => &["i really love {} .", "{} is amazing ."],
        Sentiment::Neu => &["i saw {} today .", "{} was there ."],
        Sentiment::Neg => &["i really hate {} .", "{} is awful ."],
    }
}

fn image_color(sentiment: Sentiment) -> [u8; 3] {
    match sentiment {
        Sentiment::Pos => [60, 170, 80],
        Sentiment::Neu => [128, 128, 128],
        Sentiment::Neg => [180, 60, 50],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
    pub seed: u64,
    /// Maximum clauses (= aspects) per sentence, capped at 3.
    pub max_aspects: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_train: 16,
            n_dev: 16,
            n_test: 16,
            seed: 7,
            max_aspects: 2,
        }
    }
}

/// What the generator wrote, per split; the stats acceptance check compares
/// loads against this.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthManifest {
    pub seed: u64,
    pub splits: BTreeMap<String, StatsReport>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Generate JSONL splits, images, and the manifest into `dir`.
pub fn generate(dir: &Path, cfg: &SynthConfig) -> Result<SynthManifest> {
    std::fs::create_dir_all(dir.join("images")).map_err(|e| Error::io(dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut manifest = SynthManifest {
        seed: cfg.seed,
        splits: BTreeMap::new(),
    };
    for (split, count) in [
        (Split::Train, cfg.n_train),
        (Split::Dev, cfg.n_dev),
        (Split::Test, cfg.n_test),
    ] {
        let samples = generate_split(dir, split, count, cfg, &mut rng)?;
        write_jsonl(&samples, &dir.join(split.file_name()))?;
        manifest
            .splits
            .insert(split.to_string(), dataset_stats(&samples));
    }
    let manifest_json = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(dir.join(MANIFEST_FILE), manifest_json).map_err(|e| Error::io(dir, e))?;
    Ok(manifest)
}

fn generate_split(
    dir: &Path,
    split: Split,
    count: usize,
    cfg: &SynthConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Sample>> {
    let max_aspects = cfg.max_aspects.clamp(1, 3);
    let mut samples = Vec::with_capacity(count);
    for i in 0..count {
        let id = format!("{split}-{i:04}");
        // Cycle 1..=max_aspects deterministically so every size appears.
        let n_aspects = 1 + (i % max_aspects);
        let mut tokens: Vec<String> = Vec::new();
        let mut annotations = Vec::new();
        let mut used: Vec<usize> = Vec::new();
        for _ in 0..n_aspects {
            // Entities within one sentence are distinct.
            let choices: Vec<usize> = (0..ENTITIES.len())
                .filter(|e| !used.contains(e))
                .collect();
            let entity_idx = *choices.choose(rng).expect("entity pool exhausted");
            used.push(entity_idx);
            let (entity, sentiment) = ENTITIES[entity_idx];
            let template = templates(sentiment).choose(rng).unwrap();
            let entity_words: Vec<&str> = entity.split_whitespace().collect();
            let offset = tokens.len();
            let mut span = (0, 0);
            for word in template.split_whitespace() {
                if word == "{}" {
                    span = (tokens.len(), tokens.len() + entity_words.len());
                    tokens.extend(entity_words.iter().map(|w| w.to_string()));
                } else {
                    tokens.push(word.to_string());
                }
            }
            debug_assert!(span.1 > span.0, "template must contain a slot");
            debug_assert!(span.0 >= offset);
            annotations.push(AspectAnnotation {
                span_start: span.0,
                span_end: span.1,
                surface: tokens[span.0..span.1].join(" "),
                sentiment,
            });
        }
        let image_name = format!("{id}.png");
        let color = image_color(annotations[0].sentiment);
        let img = image::RgbImage::from_pixel(16, 16, image::Rgb(color));
        let image_path = dir.join("images").join(&image_name);
        img.save(&image_path).map_err(|e| Error::Image {
            path: image_path.clone(),
            message: e.to_string(),
        })?;
        samples.push(Sample {
            id,
            tokens,
            image_ref: image_path,
            annotations,
            split,
        });
    }
    Ok(samples)
}

/// Pair samples with their deterministic fallback decompositions.
pub fn with_fallback_events(samples: &[Sample]) -> Result<Vec<(Sample, SequenceEventSet)>> {
    samples
        .iter()
        .map(|s| {
            let events = fallback_decompose(&s.tokens.join(" "))?;
            Ok((s.clone(), events))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{load_split, VerifyImages};
    use crate::metrics::{extract_pairs, gold_tag_sequence, PairPrediction};

    #[test]
    fn generated_stats_match_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig::default();
        let manifest = generate(dir.path(), &cfg).unwrap();
        for split in Split::ALL {
            let samples = load_split(dir.path(), split).unwrap();
            let stats = dataset_stats(&samples);
            assert_eq!(stats, manifest.splits[&split.to_string()]);
            assert_eq!(samples.len(), 16);
        }
    }

    #[test]
    fn regeneration_is_deterministic() {
        let cfg = SynthConfig::default();
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        generate(dir_a.path(), &cfg).unwrap();
        generate(dir_b.path(), &cfg).unwrap();
        for split in Split::ALL {
            let a = std::fs::read(dir_a.path().join(split.file_name())).unwrap();
            let b = std::fs::read(dir_b.path().join(split.file_name())).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn gold_layers_round_trip_for_every_sample() {
        let dir = tempfile::tempdir().unwrap();
        generate(dir.path(), &SynthConfig::default()).unwrap();
        let tok = crate::tokenizer::Tokenizer::new(Default::default());
        for split in Split::ALL {
            for sample in load_split_with_images_skipped(dir.path(), split) {
                let t = tok.tokenize_words(&sample.tokens).unwrap();
                let labels = crate::corpus::align_labels(&sample, &t).unwrap();
                let pairs = extract_pairs(&gold_tag_sequence(&labels));
                let expected: Vec<PairPrediction> =
                    sample.annotations.iter().map(PairPrediction::from).collect();
                assert_eq!(pairs, expected, "round trip failed for {}", sample.id);
            }
        }
    }

    fn load_split_with_images_skipped(dir: &Path, split: Split) -> Vec<Sample> {
        crate::corpus::load_split_with(dir, split, VerifyImages::Skip).unwrap()
    }

    #[test]
    fn fallback_events_one_per_clause() {
        let dir = tempfile::tempdir().unwrap();
        generate(dir.path(), &SynthConfig::default()).unwrap();
        let samples = load_split_with_images_skipped(dir.path(), Split::Train);
        let paired = with_fallback_events(&samples).unwrap();
        for (sample, events) in paired {
            assert_eq!(
                events.events.len(),
                sample.annotations.len(),
                "each clause should become one event for {}",
                sample.id
            );
        }
    }
}
