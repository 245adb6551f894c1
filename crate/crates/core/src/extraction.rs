//! Mapping completion text onto a polarity label.
//!
//! Matching is a case-insensitive substring scan over a keyword table. Under
//! [`Occurrence::LastMention`] the keyword starting furthest into the text
//! decides; under [`Occurrence::FirstMention`] the earliest one does. Two
//! keywords starting at the same offset (only possible with overlapping
//! custom keywords) resolve to the smaller label in
//! `Negative < Neutral < Positive`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::PolarityLabel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Occurrence {
    #[default]
    LastMention,
    FirstMention,
}

/// What to do with a completion that names no label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Fallback {
    /// Keep it as a "none" prediction, wrong against any gold label.
    #[default]
    CountAsWrong,
    AssignNeutral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Extracted {
    Label(PolarityLabel),
    Unparseable,
}

impl Extracted {
    pub fn label(self) -> Option<PolarityLabel> {
        match self {
            Extracted::Label(l) => Some(l),
            Extracted::Unparseable => None,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum PolicyError {
    #[error("keyword {keyword:?} is listed under both {first} and {second}")]
    OverlappingKeywords {
        keyword: String,
        first: PolarityLabel,
        second: PolarityLabel,
    },
    #[error("empty keyword for {0}")]
    EmptyKeyword(PolarityLabel),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractionPolicy {
    #[serde(default = "default_keywords")]
    pub keywords: BTreeMap<PolarityLabel, Vec<String>>,
    #[serde(default)]
    pub occurrence: Occurrence,
    #[serde(default)]
    pub fallback: Fallback,
}

fn default_keywords() -> BTreeMap<PolarityLabel, Vec<String>> {
    PolarityLabel::ALL
        .into_iter()
        .map(|l| (l, vec![l.as_str().to_string()]))
        .collect()
}

impl Default for ExtractionPolicy {
    fn default() -> Self {
        ExtractionPolicy {
            keywords: default_keywords(),
            occurrence: Occurrence::LastMention,
            fallback: Fallback::CountAsWrong,
        }
    }
}

impl ExtractionPolicy {
    /// Keyword sets must be disjoint across labels (compared
    /// case-insensitively) and contain no empty strings.
    pub fn validate(&self) -> Result<(), PolicyError> {
        let mut owner: BTreeMap<String, PolarityLabel> = BTreeMap::new();
        for (&label, words) in &self.keywords {
            for w in words {
                if w.is_empty() {
                    return Err(PolicyError::EmptyKeyword(label));
                }
                let key = w.to_uppercase().to_lowercase();
                if let Some(&first) = owner.get(&key) {
                    if first != label {
                        return Err(PolicyError::OverlappingKeywords {
                            keyword: w.clone(),
                            first,
                            second: label,
                        });
                    }
                }
                owner.insert(key, label);
            }
        }
        Ok(())
    }
}

pub fn extract_polarity(text: &str, policy: &ExtractionPolicy) -> Extracted {
    // Upper-then-lower folds characters such as 'ſ' onto their ASCII
    // counterparts, so text and its uppercase form always agree.
    let haystack = text.to_uppercase().to_lowercase();
    // (offset, label); labels iterate in ascending order so ties keep the
    // smaller label.
    let mut best: Option<(usize, PolarityLabel)> = None;
    for (&label, words) in &policy.keywords {
        for word in words {
            let needle = word.to_uppercase().to_lowercase();
            if needle.is_empty() {
                continue;
            }
            let found = match policy.occurrence {
                Occurrence::LastMention => haystack.rfind(&needle),
                Occurrence::FirstMention => haystack.find(&needle),
            };
            let Some(pos) = found else { continue };
            let better = match (best, policy.occurrence) {
                (None, _) => true,
                (Some((b, bl)), Occurrence::LastMention) => pos > b || (pos == b && label < bl),
                (Some((b, bl)), Occurrence::FirstMention) => pos < b || (pos == b && label < bl),
            };
            if better {
                best = Some((pos, label));
            }
        }
    }
    match best {
        Some((_, label)) => Extracted::Label(label),
        None => Extracted::Unparseable,
    }
}

/// Prediction to score for an unparseable completion; `None` is the
/// explicit "none" column of the confusion matrix.
pub fn resolve_unparseable(fallback: Fallback) -> Option<PolarityLabel> {
    match fallback {
        Fallback::CountAsWrong => None,
        Fallback::AssignNeutral => Some(PolarityLabel::Neutral),
    }
}

/// Extraction followed by the policy's fallback. Returns the prediction and
/// whether the raw text was unparseable.
pub fn predict(text: &str, policy: &ExtractionPolicy) -> (Option<PolarityLabel>, bool) {
    match extract_polarity(text, policy) {
        Extracted::Label(l) => (Some(l), false),
        Extracted::Unparseable => (resolve_unparseable(policy.fallback), true),
    }
}
