//! Data model and loading for the normalized multimodal ABSA datasets.
//!
//! The on-disk interchange format is one JSON object per line:
//! `{"id", "tokens", "image", "annotations": [{"start", "end", "sentiment"}], "split"}`
//! with word-level half-open spans. Images are referenced relative to the
//! dataset directory.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::Tokenization;

/// Sentiment polarity of an aspect. Class indices follow declaration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sentiment {
    #[serde(rename = "POS")]
    Pos,
    #[serde(rename = "NEU")]
    Neu,
    #[serde(rename = "NEG")]
    Neg,
}

impl Sentiment {
    pub const ALL: [Sentiment; 3] = [Sentiment::Pos, Sentiment::Neu, Sentiment::Neg];

    pub fn index(self) -> usize {
        match self {
            Sentiment::Pos => 0,
            Sentiment::Neu => 1,
            Sentiment::Neg => 2,
        }
    }
}

impl fmt::Display for Sentiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Sentiment::Pos => "POS",
            Sentiment::Neu => "NEU",
            Sentiment::Neg => "NEG",
        };
        f.write_str(s)
    }
}

/// Per-subtoken aspect tag. Class indices follow declaration order, so a
/// uniform distribution argmax-decodes to `B`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AspectTag {
    B,
    I,
    O,
}

impl AspectTag {
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        match self {
            AspectTag::B => 0,
            AspectTag::I => 1,
            AspectTag::O => 2,
        }
    }

    pub fn from_index(i: usize) -> AspectTag {
        match i {
            0 => AspectTag::B,
            1 => AspectTag::I,
            2 => AspectTag::O,
            _ => panic!("aspect tag index out of range: {i}"),
        }
    }
}

/// Per-subtoken sentiment tag; `O` marks non-aspect positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SentimentTag {
    Pos,
    Neu,
    Neg,
    O,
}

impl SentimentTag {
    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        match self {
            SentimentTag::Pos => 0,
            SentimentTag::Neu => 1,
            SentimentTag::Neg => 2,
            SentimentTag::O => 3,
        }
    }

    pub fn from_index(i: usize) -> SentimentTag {
        match i {
            0 => SentimentTag::Pos,
            1 => SentimentTag::Neu,
            2 => SentimentTag::Neg,
            3 => SentimentTag::O,
            _ => panic!("sentiment tag index out of range: {i}"),
        }
    }

    pub fn from_sentiment(s: Sentiment) -> SentimentTag {
        match s {
            Sentiment::Pos => SentimentTag::Pos,
            Sentiment::Neu => SentimentTag::Neu,
            Sentiment::Neg => SentimentTag::Neg,
        }
    }

    pub fn to_sentiment(self) -> Option<Sentiment> {
        match self {
            SentimentTag::Pos => Some(Sentiment::Pos),
            SentimentTag::Neu => Some(Sentiment::Neu),
            SentimentTag::Neg => Some(Sentiment::Neg),
            SentimentTag::O => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn file_name(self) -> &'static str {
        match self {
            Split::Train => "train.jsonl",
            Split::Dev => "dev.jsonl",
            Split::Test => "test.jsonl",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        };
        f.write_str(s)
    }
}

/// One gold (aspect span, sentiment) pair, word-indexed and half-open.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AspectAnnotation {
    pub span_start: usize,
    pub span_end: usize,
    /// Joined tokens of the span; derived at load time.
    pub surface: String,
    pub sentiment: Sentiment,
}

/// One annotated instance: tokenized text, image reference, gold pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub tokens: Vec<String>,
    /// Image path resolved against the dataset directory.
    pub image_ref: PathBuf,
    pub annotations: Vec<AspectAnnotation>,
    pub split: Split,
}

/// Gold tag layers aligned to a tokenized state. Positions that map to no
/// original word (specials, appended events) carry `O` in both layers.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedLabels {
    pub aspect_tags: Vec<AspectTag>,
    pub sentiment_tags: Vec<SentimentTag>,
    pub subtoken_to_word: Vec<Option<usize>>,
}

impl AlignedLabels {
    pub fn subtoken_count(&self) -> usize {
        self.aspect_tags.len()
    }

    /// Indices of subtokens that carry gold supervision.
    pub fn supervised_positions(&self) -> Vec<usize> {
        self.subtoken_to_word
            .iter()
            .enumerate()
            .filter_map(|(i, w)| w.map(|_| i))
            .collect()
    }
}

/// Count summary for a set of samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StatsReport {
    pub sentences: usize,
    pub aspects: usize,
    pub positive: usize,
    pub neutral: usize,
    pub negative: usize,
}

impl StatsReport {
    pub fn new(sentences: usize, aspects: usize, pos: usize, neu: usize, neg: usize) -> Self {
        StatsReport {
            sentences,
            aspects,
            positive: pos,
            neutral: neu,
            negative: neg,
        }
    }
}

/// How thoroughly `load_split` checks referenced images.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VerifyImages {
    /// Decode every image and require 3 color channels.
    #[default]
    Decode,
    /// Require the file to exist.
    Exists,
    /// No filesystem checks (stats-only workflows).
    Skip,
}

#[derive(Debug, Serialize, Deserialize)]
struct RecordAnnotation {
    start: usize,
    end: usize,
    sentiment: Sentiment,
}

#[derive(Debug, Serialize, Deserialize)]
struct Record {
    id: String,
    tokens: Vec<String>,
    image: String,
    annotations: Vec<RecordAnnotation>,
    split: Split,
}

/// Load and validate one split from a dataset directory in file order.
pub fn load_split(dir: &Path, split: Split) -> Result<Vec<Sample>> {
    load_split_with(dir, split, VerifyImages::Decode)
}

pub fn load_split_with(dir: &Path, split: Split, verify: VerifyImages) -> Result<Vec<Sample>> {
    let path = dir.join(split.file_name());
    if !path.exists() {
        return Err(Error::MissingFile(path));
    }
    let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
    let reader = BufReader::new(file);
    let mut samples = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(&path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(&line).map_err(|e| {
            Error::record(format!("line {}", lineno + 1), "json", e.to_string())
        })?;
        samples.push(validate_record(record, dir, verify)?);
    }
    Ok(samples)
}

fn validate_record(record: Record, dir: &Path, verify: VerifyImages) -> Result<Sample> {
    let id = record.id.clone();
    if record.tokens.is_empty() {
        return Err(Error::record(&id, "tokens", "must be non-empty"));
    }
    if let Some(pos) = record.tokens.iter().position(|t| t.is_empty()) {
        return Err(Error::record(
            &id,
            "tokens",
            format!("empty token at index {pos}"),
        ));
    }
    let n = record.tokens.len();
    let mut annotations: Vec<AspectAnnotation> = Vec::with_capacity(record.annotations.len());
    let mut sorted = record.annotations;
    sorted.sort_by_key(|a| (a.start, a.end));
    let mut prev_end = 0usize;
    for a in sorted {
        if a.start >= a.end || a.end > n {
            return Err(Error::record(
                &id,
                "annotations",
                format!("span ({}, {}) out of range for {} tokens", a.start, a.end, n),
            ));
        }
        if a.start < prev_end {
            return Err(Error::record(
                &id,
                "annotations",
                format!("span starting at {} overlaps the previous span", a.start),
            ));
        }
        prev_end = a.end;
        annotations.push(AspectAnnotation {
            span_start: a.start,
            span_end: a.end,
            surface: record.tokens[a.start..a.end].join(" "),
            sentiment: a.sentiment,
        });
    }
    let image_ref = dir.join(&record.image);
    match verify {
        VerifyImages::Skip => {}
        VerifyImages::Exists => {
            if !image_ref.exists() {
                return Err(Error::MissingImage(image_ref));
            }
        }
        VerifyImages::Decode => {
            if !image_ref.exists() {
                return Err(Error::MissingImage(image_ref));
            }
            decode_rgb_dims(&image_ref)?;
        }
    }
    Ok(Sample {
        id,
        tokens: record.tokens,
        image_ref,
        annotations,
        split: record.split,
    })
}

/// Decode an image and require an RGB color layout. Returns (height, width).
pub fn decode_rgb_dims(path: &Path) -> Result<(u32, u32)> {
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    match img.color() {
        image::ColorType::Rgb8 | image::ColorType::Rgb16 | image::ColorType::Rgb32F => {}
        other => {
            return Err(Error::Image {
                path: path.to_path_buf(),
                message: format!("expected a 3-channel RGB image, got {other:?}"),
            })
        }
    }
    Ok((img.height(), img.width()))
}

/// Serialize samples back to the normalized line format.
pub fn write_jsonl(samples: &[Sample], path: &Path) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    for s in samples {
        let record = Record {
            id: s.id.clone(),
            tokens: s.tokens.clone(),
            image: s
                .image_ref
                .file_name()
                .map(|f| format!("images/{}", f.to_string_lossy()))
                .unwrap_or_default(),
            annotations: s
                .annotations
                .iter()
                .map(|a| RecordAnnotation {
                    start: a.span_start,
                    end: a.span_end,
                    sentiment: a.sentiment,
                })
                .collect(),
            split: s.split,
        };
        serde_json::to_writer(&mut out, &record).map_err(Error::Json)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Project gold word-level annotations onto a tokenized state.
///
/// The first subtoken of a span's first word gets `B`, every other subtoken
/// inside the span gets `I`, and all remaining positions (including specials
/// and appended events) get `O`. The sentiment layer mirrors the span with
/// the annotation's sentiment.
pub fn align_labels(sample: &Sample, tok: &Tokenization) -> Result<AlignedLabels> {
    let n = tok.len();
    let mut aspect = vec![AspectTag::O; n];
    let mut sentiment = vec![SentimentTag::O; n];
    // Subtoken indices per original word.
    let mut word_subtokens: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, w) in tok.subtoken_to_word.iter().enumerate() {
        if let Some(w) = w {
            word_subtokens.entry(*w).or_default().push(i);
        }
    }
    for ann in &sample.annotations {
        let mut first = true;
        for word in ann.span_start..ann.span_end {
            let subs = word_subtokens.get(&word).ok_or_else(|| {
                Error::record(
                    &sample.id,
                    "tokens",
                    format!("tokenizer dropped content for word {word}"),
                )
            })?;
            for &i in subs {
                aspect[i] = if first { AspectTag::B } else { AspectTag::I };
                sentiment[i] = SentimentTag::from_sentiment(ann.sentiment);
                first = false;
            }
        }
    }
    Ok(AlignedLabels {
        aspect_tags: aspect,
        sentiment_tags: sentiment,
        subtoken_to_word: tok.subtoken_to_word.clone(),
    })
}

/// Count sentences, aspects, and sentiment occurrences.
pub fn dataset_stats(samples: &[Sample]) -> StatsReport {
    let mut report = StatsReport::default();
    report.sentences = samples.len();
    for s in samples {
        report.aspects += s.annotations.len();
        for a in &s.annotations {
            match a.sentiment {
                Sentiment::Pos => report.positive += 1,
                Sentiment::Neu => report.neutral += 1,
                Sentiment::Neg => report.negative += 1,
            }
        }
    }
    report
}

/// Published per-split statistics for the two Twitter benchmarks, used by the
/// converter and `stats` subcommand to flag discrepancies.
pub fn benchmark_expected_stats(dataset: &str) -> Option<[(Split, StatsReport); 3]> {
    match dataset {
        "twitter2015" => Some([
            (Split::Train, StatsReport::new(2101, 3179, 928, 1883, 368)),
            (Split::Dev, StatsReport::new(727, 1122, 303, 670, 149)),
            (Split::Test, StatsReport::new(674, 1037, 317, 607, 113)),
        ]),
        "twitter2017" => Some([
            (Split::Train, StatsReport::new(1746, 3562, 1508, 1638, 416)),
            (Split::Dev, StatsReport::new(577, 1176, 515, 517, 144)),
            (Split::Test, StatsReport::new(587, 1234, 493, 573, 168)),
        ]),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::{Tokenizer, TokenizerConfig};
    use std::io::Write;

    fn write_lines(dir: &Path, split: Split, lines: &[&str]) {
        let mut f = File::create(dir.join(split.file_name())).unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
    }

    fn put_image(dir: &Path, name: &str) {
        std::fs::create_dir_all(dir.join("images")).unwrap();
        let img = image::RgbImage::from_pixel(4, 4, image::Rgb([10, 200, 30]));
        img.save(dir.join("images").join(name)).unwrap();
    }

    #[test]
    fn empty_file_loads_empty_list() {
        let dir = tempfile::tempdir().unwrap();
        write_lines(dir.path(), Split::Train, &[]);
        let samples = load_split(dir.path(), Split::Train).unwrap();
        assert!(samples.is_empty());
    }

    #[test]
    fn missing_file_is_fatal() {
        let dir = tempfile::tempdir().unwrap();
        match load_split(dir.path(), Split::Dev) {
            Err(Error::MissingFile(p)) => assert!(p.ends_with("dev.jsonl")),
            other => panic!("expected MissingFile, got {other:?}"),
        }
    }

    #[test]
    fn fixture_round_trips_spans_exactly() {
        let dir = tempfile::tempdir().unwrap();
        put_image(dir.path(), "a.png");
        // Oracle spans authored by hand before the loader existed.
        let lines = [
            r#"{"id":"s1","tokens":["great","day","with","Jarrod","Smith"],"image":"images/a.png","annotations":[{"start":3,"end":5,"sentiment":"POS"}],"split":"train"}"#,
            r#"{"id":"s2","tokens":["nothing","here"],"image":"images/a.png","annotations":[],"split":"train"}"#,
            r#"{"id":"s3","tokens":["bad","food","good","view"],"image":"images/a.png","annotations":[{"start":1,"end":2,"sentiment":"NEG"},{"start":3,"end":4,"sentiment":"POS"}],"split":"train"}"#,
        ];
        write_lines(dir.path(), Split::Train, &lines);
        let samples = load_split(dir.path(), Split::Train).unwrap();
        assert_eq!(samples.len(), 3);
        assert_eq!(samples[0].annotations[0].span_start, 3);
        assert_eq!(samples[0].annotations[0].span_end, 5);
        assert_eq!(samples[0].annotations[0].surface, "Jarrod Smith");
        assert_eq!(samples[2].annotations.len(), 2);
        assert_eq!(samples[2].annotations[0].surface, "food");
        assert_eq!(samples[2].annotations[1].surface, "view");
        // Deterministic: a second load yields an identical sequence.
        let again = load_split(dir.path(), Split::Train).unwrap();
        assert_eq!(samples, again);
    }

    #[test]
    fn malformed_record_names_id_and_field() {
        let dir = tempfile::tempdir().unwrap();
        put_image(dir.path(), "a.png");
        let lines = [
            r#"{"id":"bad1","tokens":["a","b"],"image":"images/a.png","annotations":[{"start":1,"end":5,"sentiment":"POS"}],"split":"train"}"#,
        ];
        write_lines(dir.path(), Split::Train, &lines);
        match load_split(dir.path(), Split::Train) {
            Err(Error::Record { id, field, .. }) => {
                assert_eq!(id, "bad1");
                assert_eq!(field, "annotations");
            }
            other => panic!("expected Record error, got {other:?}"),
        }
    }

    #[test]
    fn overlapping_spans_rejected() {
        let dir = tempfile::tempdir().unwrap();
        put_image(dir.path(), "a.png");
        let lines = [
            r#"{"id":"ov","tokens":["a","b","c"],"image":"images/a.png","annotations":[{"start":0,"end":2,"sentiment":"POS"},{"start":1,"end":3,"sentiment":"NEG"}],"split":"train"}"#,
        ];
        write_lines(dir.path(), Split::Train, &lines);
        assert!(load_split(dir.path(), Split::Train).is_err());
    }

    #[test]
    fn missing_image_names_path() {
        let dir = tempfile::tempdir().unwrap();
        let lines = [
            r#"{"id":"m","tokens":["a"],"image":"images/gone.png","annotations":[],"split":"train"}"#,
        ];
        write_lines(dir.path(), Split::Train, &lines);
        match load_split(dir.path(), Split::Train) {
            Err(Error::MissingImage(p)) => assert!(p.ends_with("images/gone.png")),
            other => panic!("expected MissingImage, got {other:?}"),
        }
    }

    #[test]
    fn non_rgb_image_rejected() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(dir.path().join("images")).unwrap();
        let gray = image::GrayImage::from_pixel(4, 4, image::Luma([128]));
        gray.save(dir.path().join("images/g.png")).unwrap();
        let lines = [
            r#"{"id":"g","tokens":["a"],"image":"images/g.png","annotations":[],"split":"train"}"#,
        ];
        write_lines(dir.path(), Split::Train, &lines);
        match load_split(dir.path(), Split::Train) {
            Err(Error::Image { .. }) => {}
            other => panic!("expected Image error, got {other:?}"),
        }
    }

    #[test]
    fn stats_empty_is_all_zero() {
        assert_eq!(dataset_stats(&[]), StatsReport::default());
    }

    #[test]
    fn stats_counts_by_sentiment() {
        let dir = tempfile::tempdir().unwrap();
        put_image(dir.path(), "a.png");
        let lines = [
            r#"{"id":"s1","tokens":["x","y"],"image":"images/a.png","annotations":[{"start":0,"end":1,"sentiment":"POS"},{"start":1,"end":2,"sentiment":"NEG"}],"split":"dev"}"#,
            r#"{"id":"s2","tokens":["z"],"image":"images/a.png","annotations":[{"start":0,"end":1,"sentiment":"NEU"}],"split":"dev"}"#,
        ];
        write_lines(dir.path(), Split::Dev, &lines);
        let samples = load_split(dir.path(), Split::Dev).unwrap();
        let report = dataset_stats(&samples);
        assert_eq!(report, StatsReport::new(2, 3, 1, 1, 1));
    }

    #[test]
    fn benchmark_tables_are_internally_consistent() {
        for ds in ["twitter2015", "twitter2017"] {
            for (_, r) in benchmark_expected_stats(ds).unwrap() {
                assert_eq!(r.positive + r.neutral + r.negative, r.aspects);
            }
        }
        let t15 = benchmark_expected_stats("twitter2015").unwrap();
        assert_eq!(t15[0].1, StatsReport::new(2101, 3179, 928, 1883, 368));
        let t17 = benchmark_expected_stats("twitter2017").unwrap();
        assert_eq!(t17[2].1.sentences, 587);
        assert_eq!(t17[2].1.aspects, 1234);
        assert_eq!(t17[1].1, StatsReport::new(577, 1176, 515, 517, 144));
    }

    fn sample(tokens: &[&str], anns: &[(usize, usize, Sentiment)]) -> Sample {
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
        Sample {
            id: "t".into(),
            tokens,
            image_ref: PathBuf::from("unused.png"),
            annotations,
            split: Split::Train,
        }
    }

    #[test]
    fn align_no_annotations_is_all_o() {
        let tok = Tokenizer::new(TokenizerConfig::default());
        let s = sample(&["just", "words"], &[]);
        let t = tok.tokenize_words(&s.tokens).unwrap();
        let labels = align_labels(&s, &t).unwrap();
        assert!(labels.aspect_tags.iter().all(|t| *t == AspectTag::O));
        assert!(labels.sentiment_tags.iter().all(|t| *t == SentimentTag::O));
    }

    #[test]
    fn align_multiword_aspect_spans_subtokens() {
        // Chunk width 4 splits both words of the aspect into two subtokens:
        // jarrod -> jarr|od, smith -> smit|h, expected tags B,I,I,I.
        let tok = Tokenizer::new(TokenizerConfig {
            max_subtoken_len: 4,
            ..Default::default()
        });
        let s = sample(&["met", "Jarrod", "Smith"], &[(1, 3, Sentiment::Pos)]);
        let t = tok.tokenize_words(&s.tokens).unwrap();
        let labels = align_labels(&s, &t).unwrap();
        // [CLS], met, jarr, od, smit, h, [SEP]
        assert_eq!(labels.aspect_tags.len(), 7);
        assert_eq!(
            &labels.aspect_tags[2..6],
            &[AspectTag::B, AspectTag::I, AspectTag::I, AspectTag::I]
        );
        assert!(labels.sentiment_tags[2..6]
            .iter()
            .all(|t| *t == SentimentTag::Pos));
        assert_eq!(labels.aspect_tags[0], AspectTag::O);
        assert_eq!(labels.aspect_tags[6], AspectTag::O);
    }

    #[test]
    fn align_sentence_final_word() {
        let tok = Tokenizer::new(TokenizerConfig::default());
        let s = sample(&["we", "love", "paris"], &[(2, 3, Sentiment::Pos)]);
        let t = tok.tokenize_words(&s.tokens).unwrap();
        let labels = align_labels(&s, &t).unwrap();
        let n = labels.aspect_tags.len();
        // Last content subtoken tagged, trailing [SEP] stays O.
        assert_eq!(labels.aspect_tags[n - 2], AspectTag::B);
        assert_eq!(labels.aspect_tags[n - 1], AspectTag::O);
    }

    #[test]
    fn align_event_positions_stay_o() {
        let tok = Tokenizer::new(TokenizerConfig::default());
        let s = sample(&["love", "paris"], &[(1, 2, Sentiment::Pos)]);
        let mut state_words = s.tokens.clone();
        state_words.push(crate::tokenizer::EVENT_SEPARATOR.to_string());
        state_words.push("paris".to_string());
        let t = tok.tokenize_state(&state_words, 2).unwrap();
        let labels = align_labels(&s, &t).unwrap();
        // The appended "paris" repeats the aspect string but gets no labels.
        let orig: Vec<usize> = t.original_positions();
        for i in 0..t.len() {
            if !orig.contains(&i) {
                assert_eq!(labels.aspect_tags[i], AspectTag::O);
                assert_eq!(labels.sentiment_tags[i], SentimentTag::O);
            }
        }
        assert_eq!(labels.aspect_tags[2], AspectTag::B);
    }
}
