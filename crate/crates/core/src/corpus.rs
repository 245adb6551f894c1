//! Aspect-sentiment datasets: parsing, implicit-flag overlay and accounting.
//!
//! Two input formats are supported. The SemEval-2014 ABSA XML test files
//! are the upstream source; they carry no implicit-sentiment flag, so flags
//! are applied afterwards from an overlay file of `{"id", "is_implicit"}`
//! lines. The canonical interchange format is one JSON object per line and
//! carries the flag directly.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::percent::Percent;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("malformed XML at line {line}, column {column}: {message}")]
    Xml {
        line: u32,
        column: u32,
        message: String,
    },
    #[error("line {line}: {message}")]
    Line {
        line: usize,
        key: Option<String>,
        message: String,
    },
    #[error("duplicate instance id {0:?}")]
    DuplicateId(String),
    #[error("implicit flags reference unknown instance ids: {}", .0.join(", "))]
    UnknownFlagIds(Vec<String>),
    #[error("input is not valid UTF-8: {0}")]
    Utf8(#[from] std::str::Utf8Error),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CorpusError {
    fn at(line: usize, key: &str, message: impl Into<String>) -> Self {
        CorpusError::Line {
            line,
            key: Some(key.to_string()),
            message: message.into(),
        }
    }
}

/// Three-way sentiment polarity. The derived order
/// (`Negative < Neutral < Positive`) is used wherever a deterministic
/// tie-break is needed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolarityLabel {
    Negative,
    Neutral,
    Positive,
}

impl PolarityLabel {
    pub const ALL: [PolarityLabel; 3] = [
        PolarityLabel::Negative,
        PolarityLabel::Neutral,
        PolarityLabel::Positive,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PolarityLabel::Negative => "negative",
            PolarityLabel::Neutral => "neutral",
            PolarityLabel::Positive => "positive",
        }
    }

    /// Position in [`PolarityLabel::ALL`].
    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for PolarityLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolarityLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "positive" => Ok(PolarityLabel::Positive),
            "negative" => Ok(PolarityLabel::Negative),
            "neutral" => Ok(PolarityLabel::Neutral),
            other => Err(format!("unknown polarity {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetName {
    Restaurant,
    Laptop,
}

impl DatasetName {
    pub const ALL: [DatasetName; 2] = [DatasetName::Restaurant, DatasetName::Laptop];

    pub fn as_str(self) -> &'static str {
        match self {
            DatasetName::Restaurant => "restaurant",
            DatasetName::Laptop => "laptop",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            DatasetName::Restaurant => "Restaurant",
            DatasetName::Laptop => "Laptop",
        }
    }
}

impl fmt::Display for DatasetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "restaurant" => Ok(DatasetName::Restaurant),
            "laptop" => Ok(DatasetName::Laptop),
            other => Err(format!("unknown dataset {other:?}")),
        }
    }
}

/// One (sentence, aspect target) pair with its gold polarity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentimentInstance {
    pub id: String,
    pub text: String,
    /// Empty only when the source record carries a null target.
    pub target: String,
    pub gold: PolarityLabel,
    pub is_implicit: bool,
    pub dataset: DatasetName,
}

/// A record dropped during parsing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedRecord {
    pub sentence_id: String,
    pub term: String,
    pub polarity: String,
}

#[derive(Debug, Clone, Default)]
pub struct ParseOutcome {
    pub instances: Vec<SentimentInstance>,
    pub skipped: Vec<SkippedRecord>,
}

/// Parses a SemEval-2014 ABSA XML file (`<sentences>/<sentence>/<aspectTerms>`).
///
/// Each aspect term becomes one instance with id `<sentence id>#<k>`, where
/// `k` is the term's zero-based position inside its sentence. Terms with a
/// polarity outside the three labels (SemEval uses `conflict`) are skipped
/// and reported in [`ParseOutcome::skipped`]. An `implicit_sentiment`
/// attribute on the term, where an annotated release provides one, seeds
/// `is_implicit`; otherwise the flag is `false` until an overlay is applied.
pub fn parse_semeval_xml(bytes: &[u8], dataset: DatasetName) -> Result<ParseOutcome, CorpusError> {
    let text = std::str::from_utf8(bytes)?;
    let doc = roxmltree::Document::parse(text).map_err(|e| {
        let pos = e.pos();
        CorpusError::Xml {
            line: pos.row,
            column: pos.col,
            message: e.to_string(),
        }
    })?;

    let xml_err = |node: roxmltree::Node, message: String| {
        let pos = doc.text_pos_at(node.range().start);
        CorpusError::Xml {
            line: pos.row,
            column: pos.col,
            message,
        }
    };

    let mut outcome = ParseOutcome::default();
    let mut seen = HashSet::new();
    for sentence in doc.descendants().filter(|n| n.has_tag_name("sentence")) {
        let sid = sentence
            .attribute("id")
            .ok_or_else(|| xml_err(sentence, "<sentence> without id attribute".into()))?;
        let text = sentence
            .children()
            .find(|n| n.has_tag_name("text"))
            .and_then(|n| n.text())
            .unwrap_or("")
            .trim()
            .to_string();
        let terms = sentence
            .children()
            .filter(|n| n.has_tag_name("aspectTerms"))
            .flat_map(|n| n.children().filter(|c| c.has_tag_name("aspectTerm")));
        for (k, term) in terms.enumerate() {
            let term_text = term
                .attribute("term")
                .ok_or_else(|| xml_err(term, "<aspectTerm> without term attribute".into()))?;
            let polarity = term
                .attribute("polarity")
                .ok_or_else(|| xml_err(term, "<aspectTerm> without polarity attribute".into()))?;
            let gold = match polarity.parse::<PolarityLabel>() {
                Ok(label) => label,
                Err(_) => {
                    tracing::warn!(sentence = sid, term = term_text, polarity, "skipping aspect term");
                    outcome.skipped.push(SkippedRecord {
                        sentence_id: sid.to_string(),
                        term: term_text.to_string(),
                        polarity: polarity.to_string(),
                    });
                    continue;
                }
            };
            if text.is_empty() {
                return Err(xml_err(sentence, format!("sentence {sid:?} has empty text")));
            }
            let id = format!("{sid}#{k}");
            if !seen.insert(id.clone()) {
                return Err(CorpusError::DuplicateId(id));
            }
            let is_implicit = term
                .attribute("implicit_sentiment")
                .map(|v| v.eq_ignore_ascii_case("true"))
                .unwrap_or(false);
            let target = if term_text == "NULL" { "" } else { term_text };
            outcome.instances.push(SentimentInstance {
                id,
                text: text.clone(),
                target: target.to_string(),
                gold,
                is_implicit,
                dataset,
            });
        }
    }
    Ok(outcome)
}

fn lines(bytes: &[u8]) -> Result<impl Iterator<Item = (usize, &str)>, CorpusError> {
    let text = std::str::from_utf8(bytes)?;
    Ok(text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty()))
}

fn parse_object(line_no: usize, line: &str) -> Result<Map<String, Value>, CorpusError> {
    match serde_json::from_str::<Value>(line) {
        Ok(Value::Object(map)) => Ok(map),
        Ok(_) => Err(CorpusError::Line {
            line: line_no,
            key: None,
            message: "expected a JSON object".into(),
        }),
        Err(e) => Err(CorpusError::Line {
            line: line_no,
            key: None,
            message: e.to_string(),
        }),
    }
}

fn str_field<'a>(obj: &'a Map<String, Value>, line: usize, key: &str) -> Result<&'a str, CorpusError> {
    match obj.get(key) {
        Some(Value::String(s)) => Ok(s),
        Some(_) => Err(CorpusError::at(line, key, format!("key {key:?} must be a string"))),
        None => Err(CorpusError::at(line, key, format!("missing key {key:?}"))),
    }
}

fn bool_field(obj: &Map<String, Value>, line: usize, key: &str) -> Result<bool, CorpusError> {
    match obj.get(key) {
        Some(Value::Bool(b)) => Ok(*b),
        Some(_) => Err(CorpusError::at(line, key, format!("key {key:?} must be a boolean"))),
        None => Err(CorpusError::at(line, key, format!("missing key {key:?}"))),
    }
}

/// Parses the instance JSONL format. Blank lines are ignored; duplicate ids
/// are rejected.
pub fn parse_jsonl(bytes: &[u8]) -> Result<Vec<SentimentInstance>, CorpusError> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (line_no, line) in lines(bytes)? {
        let obj = parse_object(line_no, line)?;
        let id = str_field(&obj, line_no, "id")?;
        if id.is_empty() {
            return Err(CorpusError::at(line_no, "id", "key \"id\" must be non-empty"));
        }
        let text = str_field(&obj, line_no, "text")?;
        if text.is_empty() {
            return Err(CorpusError::at(line_no, "text", "key \"text\" must be non-empty"));
        }
        let target = match obj.get("target") {
            Some(Value::Null) => "",
            Some(Value::String(s)) if s.is_empty() => {
                return Err(CorpusError::at(
                    line_no,
                    "target",
                    "key \"target\" is empty; use null for a null target",
                ))
            }
            _ => str_field(&obj, line_no, "target")?,
        };
        let gold = str_field(&obj, line_no, "gold")?
            .parse::<PolarityLabel>()
            .map_err(|e| CorpusError::at(line_no, "gold", format!("key \"gold\": {e}")))?;
        let is_implicit = bool_field(&obj, line_no, "is_implicit")?;
        let dataset = str_field(&obj, line_no, "dataset")?
            .parse::<DatasetName>()
            .map_err(|e| CorpusError::at(line_no, "dataset", format!("key \"dataset\": {e}")))?;
        if !seen.insert(id.to_string()) {
            return Err(CorpusError::DuplicateId(id.to_string()));
        }
        out.push(SentimentInstance {
            id: id.to_string(),
            text: text.to_string(),
            target: target.to_string(),
            gold,
            is_implicit,
            dataset,
        });
    }
    Ok(out)
}

/// Writes instances in the JSONL interchange format (LF line endings).
/// A null target is written as JSON `null`.
pub fn serialize_jsonl(instances: &[SentimentInstance]) -> String {
    let mut out = String::new();
    for inst in instances {
        let target = if inst.target.is_empty() {
            Value::Null
        } else {
            Value::String(inst.target.clone())
        };
        let line = serde_json::json!({
            "id": inst.id,
            "text": inst.text,
            "target": target,
            "gold": inst.gold.as_str(),
            "is_implicit": inst.is_implicit,
            "dataset": inst.dataset.as_str(),
        });
        out.push_str(&line.to_string());
        out.push('\n');
    }
    out
}

/// Parses an implicit-flag overlay file: one `{"id": .., "is_implicit": ..}`
/// object per line.
pub fn parse_flags(bytes: &[u8]) -> Result<BTreeMap<String, bool>, CorpusError> {
    let mut flags = BTreeMap::new();
    for (line_no, line) in lines(bytes)? {
        let obj = parse_object(line_no, line)?;
        let id = str_field(&obj, line_no, "id")?;
        let flag = bool_field(&obj, line_no, "is_implicit")?;
        if flags.insert(id.to_string(), flag).is_some() {
            return Err(CorpusError::DuplicateId(id.to_string()));
        }
    }
    Ok(flags)
}

/// Sets `is_implicit` on every instance named in `flags`. Every key must
/// match an instance id.
pub fn overlay_implicit_flags(
    mut instances: Vec<SentimentInstance>,
    flags: &BTreeMap<String, bool>,
) -> Result<Vec<SentimentInstance>, CorpusError> {
    let known: HashSet<&str> = instances.iter().map(|i| i.id.as_str()).collect();
    let unknown: Vec<String> = flags
        .keys()
        .filter(|id| !known.contains(id.as_str()))
        .cloned()
        .collect();
    if !unknown.is_empty() {
        return Err(CorpusError::UnknownFlagIds(unknown));
    }
    for inst in &mut instances {
        if let Some(&flag) = flags.get(&inst.id) {
            inst.is_implicit = flag;
        }
    }
    Ok(instances)
}

/// Label counts and implicit-sentiment share of a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub negative: u64,
    pub positive: u64,
    pub neutral: u64,
    pub total: u64,
    pub isa_count: u64,
    /// `100 * isa_count / total`, truncated to two decimals.
    pub isa_percent: Percent,
}

impl DatasetSummary {
    /// Published test-split distribution for each dataset.
    pub fn published(dataset: DatasetName) -> Self {
        match dataset {
            DatasetName::Restaurant => DatasetSummary {
                negative: 196,
                positive: 728,
                neutral: 196,
                total: 1120,
                isa_count: 267,
                isa_percent: Percent::from_hundredths(2383),
            },
            DatasetName::Laptop => DatasetSummary {
                negative: 128,
                positive: 341,
                neutral: 169,
                total: 638,
                isa_count: 175,
                isa_percent: Percent::from_hundredths(2742),
            },
        }
    }

    fn fields(&self) -> [(&'static str, String); 6] {
        [
            ("negative", self.negative.to_string()),
            ("positive", self.positive.to_string()),
            ("neutral", self.neutral.to_string()),
            ("total", self.total.to_string()),
            ("isa_count", self.isa_count.to_string()),
            ("isa_percent", self.isa_percent.to_string()),
        ]
    }
}

impl fmt::Display for DatasetSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "negative={} positive={} neutral={} total={} isa={} isa%={}",
            self.negative, self.positive, self.neutral, self.total, self.isa_count, self.isa_percent
        )
    }
}

pub fn summarize(instances: &[SentimentInstance]) -> DatasetSummary {
    let mut s = DatasetSummary::default();
    for inst in instances {
        match inst.gold {
            PolarityLabel::Negative => s.negative += 1,
            PolarityLabel::Positive => s.positive += 1,
            PolarityLabel::Neutral => s.neutral += 1,
        }
        if inst.is_implicit {
            s.isa_count += 1;
        }
    }
    s.total = instances.len() as u64;
    if s.total == 0 {
        tracing::warn!("summarizing an empty dataset; isa_percent reported as 0.00");
    }
    s.isa_percent = Percent::truncated_ratio(s.isa_count, s.total);
    s
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FieldCheck {
    pub field: &'static str,
    pub expected: String,
    pub actual: String,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<FieldCheck>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.ok)
    }

    pub fn mismatched_fields(&self) -> Vec<&'static str> {
        self.checks.iter().filter(|c| !c.ok).map(|c| c.field).collect()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            let mark = if c.ok { "ok" } else { "MISMATCH" };
            writeln!(f, "  {:<12} expected {:>8}  actual {:>8}  {mark}", c.field, c.expected, c.actual)?;
        }
        write!(f, "  {}", if self.passed() { "PASS" } else { "FAIL" })
    }
}

pub fn validate_expected(summary: &DatasetSummary, expected: &DatasetSummary) -> ValidationReport {
    let checks = summary
        .fields()
        .into_iter()
        .zip(expected.fields())
        .map(|((field, actual), (_, expected))| FieldCheck {
            field,
            ok: actual == expected,
            expected,
            actual,
        })
        .collect();
    ValidationReport { checks }
}

/// Source format of a dataset file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetFormat {
    #[default]
    Jsonl,
    SemevalXml,
}

fn read(path: &Path) -> Result<Vec<u8>, CorpusError> {
    std::fs::read(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Reads a dataset file and applies an optional flag overlay.
pub fn load_dataset(
    path: &Path,
    format: DatasetFormat,
    dataset: DatasetName,
    flags: Option<&Path>,
) -> Result<Vec<SentimentInstance>, CorpusError> {
    let bytes = read(path)?;
    let instances = match format {
        DatasetFormat::Jsonl => parse_jsonl(&bytes)?,
        DatasetFormat::SemevalXml => {
            let outcome = parse_semeval_xml(&bytes, dataset)?;
            if !outcome.skipped.is_empty() {
                tracing::warn!(count = outcome.skipped.len(), path = %path.display(), "skipped aspect terms with unsupported polarity");
            }
            outcome.instances
        }
    };
    match flags {
        Some(p) => overlay_implicit_flags(instances, &parse_flags(&read(p)?)?),
        None => Ok(instances),
    }
}
