//! Converter from the raw Twitter-2015/2017 distribution layout to the
//! normalized JSONL format.
//!
//! The raw layout is one file per split (`train.txt`, `dev.txt`,
//! `test.txt`) made of 4-line groups: the sentence with the aspect replaced
//! by the `$T$` placeholder, the aspect term, the polarity (`-1`/`0`/`1`),
//! and the image file name. Groups that reconstruct to the same
//! (sentence, image) pair are merged into one sample with several
//! annotations.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::corpus::{
    benchmark_expected_stats, dataset_stats, write_jsonl, AspectAnnotation, Sample, Sentiment,
    Split, StatsReport,
};
use crate::error::{Error, Result};

pub const PLACEHOLDER: &str = "$T$";

#[derive(Debug, Clone, Serialize)]
pub struct ConvertReport {
    pub per_split: BTreeMap<String, StatsReport>,
    /// Human-readable descriptions of groups that could not be converted.
    pub skipped: Vec<String>,
    /// Mismatches against the published statistics, when a benchmark name
    /// was given.
    pub discrepancies: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct ConvertOptions {
    /// Benchmark name (`twitter2015`/`twitter2017`) to compare stats against.
    pub dataset: Option<String>,
    /// Skip malformed groups instead of failing.
    pub lenient: bool,
    /// Subdirectory (under the output dir) that image paths point into.
    pub image_subdir: String,
}

impl Default for ConvertOptions {
    fn default() -> Self {
        ConvertOptions {
            dataset: None,
            lenient: false,
            image_subdir: "images".into(),
        }
    }
}

/// Convert every split file present in `raw_dir` into `out_dir`.
pub fn convert_raw_dir(raw_dir: &Path, out_dir: &Path, opts: &ConvertOptions) -> Result<ConvertReport> {
    let mut found_any = false;
    let mut report = ConvertReport {
        per_split: BTreeMap::new(),
        skipped: Vec::new(),
        discrepancies: Vec::new(),
    };
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    for split in Split::ALL {
        let raw_path = raw_dir.join(format!("{split}.txt"));
        if !raw_path.exists() {
            continue;
        }
        found_any = true;
        let samples = convert_split(&raw_path, split, opts, &mut report.skipped)?;
        write_jsonl(&samples, &out_dir.join(split.file_name()))?;
        report
            .per_split
            .insert(split.to_string(), dataset_stats(&samples));
    }
    if !found_any {
        return Err(Error::MissingFile(raw_dir.join("train.txt")));
    }
    if let Some(dataset) = &opts.dataset {
        let expected = benchmark_expected_stats(dataset)
            .ok_or_else(|| Error::Config(format!("unknown benchmark {dataset:?}")))?;
        for (split, want) in expected {
            match report.per_split.get(&split.to_string()) {
                Some(got) if *got == want => {}
                Some(got) => report.discrepancies.push(format!(
                    "{split}: expected {want:?}, converted {got:?}"
                )),
                None => report
                    .discrepancies
                    .push(format!("{split}: expected {want:?}, no raw file found")),
            }
        }
    }
    Ok(report)
}

fn convert_split(
    raw_path: &Path,
    split: Split,
    opts: &ConvertOptions,
    skipped: &mut Vec<String>,
) -> Result<Vec<Sample>> {
    let text = std::fs::read_to_string(raw_path).map_err(|e| Error::io(raw_path, e))?;
    let lines: Vec<&str> = text.lines().collect();
    // Trailing blank lines are tolerated; interior structure is strict
    // 4-line groups.
    let mut effective = lines.len();
    while effective > 0 && lines[effective - 1].trim().is_empty() {
        effective -= 1;
    }
    if effective % 4 != 0 {
        return Err(Error::record(
            raw_path.display().to_string(),
            "layout",
            format!("{effective} lines is not a multiple of 4"),
        ));
    }
    let mut samples: Vec<Sample> = Vec::new();
    // Key of the sample currently being extended (consecutive merge only).
    let mut open_key: Option<(Vec<String>, String)> = None;
    for (group_idx, group) in lines[..effective].chunks(4).enumerate() {
        let describe = |msg: &str| format!("{}: group {}: {msg}", raw_path.display(), group_idx + 1);
        match parse_group(group, opts) {
            Ok((tokens, annotation, image)) => {
                let key = (tokens.clone(), image.clone());
                if open_key.as_ref() == Some(&key) {
                    let sample = samples.last_mut().expect("open sample exists");
                    insert_annotation(sample, annotation).map_err(|msg| {
                        Error::record(&sample.id, "annotations", msg)
                    })?;
                } else {
                    let id = format!("{split}-{:05}", samples.len());
                    let mut sample = Sample {
                        id,
                        tokens,
                        image_ref: PathBuf::from(&image),
                        annotations: Vec::new(),
                        split,
                    };
                    insert_annotation(&mut sample, annotation)
                        .map_err(|msg| Error::record(&sample.id, "annotations", msg))?;
                    samples.push(sample);
                    open_key = Some(key);
                }
            }
            Err(msg) => {
                if opts.lenient {
                    skipped.push(describe(&msg));
                    open_key = None;
                } else {
                    return Err(Error::record(
                        raw_path.display().to_string(),
                        format!("group {}", group_idx + 1),
                        msg,
                    ));
                }
            }
        }
    }
    Ok(samples)
}

type ParsedGroup = (Vec<String>, AspectAnnotation, String);

fn parse_group(group: &[&str], opts: &ConvertOptions) -> std::result::Result<ParsedGroup, String> {
    let sentence = group[0].trim();
    let aspect = group[1].trim();
    let polarity = group[2].trim();
    let image = group[3].trim();
    if sentence.is_empty() || aspect.is_empty() || image.is_empty() {
        return Err("empty sentence, aspect, or image line".into());
    }
    let sentiment = match polarity {
        "1" => Sentiment::Pos,
        "0" => Sentiment::Neu,
        "-1" => Sentiment::Neg,
        other => return Err(format!("unknown polarity {other:?}")),
    };
    let words: Vec<&str> = sentence.split_whitespace().collect();
    let slot = words
        .iter()
        .position(|w| *w == PLACEHOLDER)
        .ok_or_else(|| format!("sentence has no {PLACEHOLDER} placeholder"))?;
    if words.iter().filter(|w| **w == PLACEHOLDER).count() > 1 {
        return Err(format!("sentence has multiple {PLACEHOLDER} placeholders"));
    }
    let aspect_words: Vec<String> = aspect.split_whitespace().map(str::to_string).collect();
    if aspect_words.is_empty() {
        return Err("aspect term has no words".into());
    }
    let mut tokens: Vec<String> = Vec::with_capacity(words.len() + aspect_words.len() - 1);
    tokens.extend(words[..slot].iter().map(|w| w.to_string()));
    let span_start = tokens.len();
    tokens.extend(aspect_words.iter().cloned());
    let span_end = tokens.len();
    tokens.extend(words[slot + 1..].iter().map(|w| w.to_string()));
    let annotation = AspectAnnotation {
        span_start,
        span_end,
        surface: aspect_words.join(" "),
        sentiment,
    };
    Ok((tokens, annotation, format!("{}/{image}", opts.image_subdir)))
}

fn insert_annotation(
    sample: &mut Sample,
    annotation: AspectAnnotation,
) -> std::result::Result<(), String> {
    for existing in &sample.annotations {
        let overlap = annotation.span_start < existing.span_end
            && existing.span_start < annotation.span_end;
        if overlap {
            return Err(format!(
                "span ({}, {}) overlaps existing ({}, {})",
                annotation.span_start,
                annotation.span_end,
                existing.span_start,
                existing.span_end
            ));
        }
    }
    sample.annotations.push(annotation);
    sample.annotations.sort_by_key(|a| a.span_start);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const RAW_TRAIN: &str = "\
RT @user : $T$ is everything tonight
Chuck Bass
1
16_05_01_1.jpg
RT @user : Chuck Bass is everything $T$
tonight
0
16_05_01_1.jpg
bad day at $T$ today
the office
-1
17_06_190.jpg
";

    #[test]
    fn converts_and_merges_consecutive_groups() {
        let raw = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        std::fs::write(raw.path().join("train.txt"), RAW_TRAIN).unwrap();
        let report =
            convert_raw_dir(raw.path(), out.path(), &ConvertOptions::default()).unwrap();
        let stats = &report.per_split["train"];
        assert_eq!(stats.sentences, 2);
        assert_eq!(stats.aspects, 3);
        assert_eq!(
            (stats.positive, stats.neutral, stats.negative),
            (1, 1, 1)
        );
        let text = std::fs::read_to_string(out.path().join("train.jsonl")).unwrap();
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(first["tokens"][3], "Chuck");
        assert_eq!(first["tokens"][4], "Bass");
        assert_eq!(first["annotations"][0]["start"], 3);
        assert_eq!(first["annotations"][0]["end"], 5);
        assert_eq!(first["annotations"][1]["sentiment"], "NEU");
        assert_eq!(first["image"], "images/16_05_01_1.jpg");
    }

    #[test]
    fn reconversion_is_byte_identical() {
        let raw = tempfile::tempdir().unwrap();
        std::fs::write(raw.path().join("train.txt"), RAW_TRAIN).unwrap();
        let out_a = tempfile::tempdir().unwrap();
        let out_b = tempfile::tempdir().unwrap();
        convert_raw_dir(raw.path(), out_a.path(), &ConvertOptions::default()).unwrap();
        convert_raw_dir(raw.path(), out_b.path(), &ConvertOptions::default()).unwrap();
        let a = std::fs::read(out_a.path().join("train.jsonl")).unwrap();
        let b = std::fs::read(out_b.path().join("train.jsonl")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_raw_dir_is_an_error() {
        let raw = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        assert!(matches!(
            convert_raw_dir(raw.path(), out.path(), &ConvertOptions::default()),
            Err(Error::MissingFile(_))
        ));
    }

    #[test]
    fn malformed_group_fails_unless_lenient() {
        let raw = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        let bad = "no placeholder here\naspect\n1\nimg.jpg\n";
        std::fs::write(raw.path().join("dev.txt"), bad).unwrap();
        assert!(convert_raw_dir(raw.path(), out.path(), &ConvertOptions::default()).is_err());
        let report = convert_raw_dir(
            raw.path(),
            out.path(),
            &ConvertOptions {
                lenient: true,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(report.skipped.len(), 1);
        assert_eq!(report.per_split["dev"].sentences, 0);
    }

    #[test]
    fn benchmark_comparison_lists_discrepancies() {
        let raw = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        std::fs::write(raw.path().join("train.txt"), RAW_TRAIN).unwrap();
        let report = convert_raw_dir(
            raw.path(),
            out.path(),
            &ConvertOptions {
                dataset: Some("twitter2015".into()),
                ..Default::default()
            },
        )
        .unwrap();
        // The tiny fixture cannot match the published counts.
        assert!(!report.discrepancies.is_empty());
    }
}
