//! Labeled homework corpus with taxonomy metadata.
//!
//! Stored as JSON Lines. Each line is either a question metadata record
//! (`"kind":"question"`) or a response record (`"kind":"response"`).

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Minimum character count for the `min250` flavor.
pub const MIN_CHARS: usize = 250;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Human,
    Ai,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Human => "human",
            Source::Ai => "ai",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

string_enum!(
    /// Knowledge dimension of a question; exactly one per question.
    KnowledgeDim {
        Conceptual => "conceptual",
        Factual => "factual",
        Procedural => "procedural",
        Metacognitive => "metacognitive",
    }
);

string_enum!(
    /// Cognitive process dimension; a question may carry several.
    CognitiveDim {
        Remember => "remember",
        Understand => "understand",
        Apply => "apply",
        Analyze => "analyze",
        Evaluate => "evaluate",
        Create => "create",
    }
);

string_enum!(
    /// Named corpus filters.
    DatasetFlavor {
        Orig => "orig",
        Min250 => "min250",
        NoMath => "no_math",
        NoCode => "no_code",
        NoMathNoCode => "no_math_no_code",
    }
);

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IncludeFlags {
    pub math: bool,
    pub code: bool,
    pub author_book: bool,
    pub trick: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuestionMeta {
    pub question_id: String,
    pub knowledge: KnowledgeDim,
    pub cognitive: BTreeSet<CognitiveDim>,
    pub flags: IncludeFlags,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabeledResponse {
    pub id: String,
    pub question_id: String,
    pub course: String,
    pub text: String,
    pub source: Source,
    /// Cached perplexities keyed by scorer/engine cache key.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub ppl_cache: BTreeMap<String, f64>,
}

impl LabeledResponse {
    pub fn cached_perplexity(&self, key: &str) -> Option<f64> {
        self.ppl_cache.get(key).copied()
    }

    pub fn char_count(&self) -> usize {
        self.text.chars().count()
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Record {
    Question(QuestionMeta),
    Response(LabeledResponse),
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read corpus {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: {field}: {reason}")]
    Validation {
        line: usize,
        field: String,
        reason: String,
    },
    #[error("cannot stratify: class {class} has {count} responses, at least 2 required")]
    Stratification { class: Source, count: usize },
    #[error("train fraction must lie strictly between 0 and 1, got {0}")]
    Fraction(f64),
}

fn invalid(line: usize, field: &str, reason: impl Into<String>) -> CorpusError {
    CorpusError::Validation {
        line,
        field: field.to_string(),
        reason: reason.into(),
    }
}

/// Responses plus the metadata of the questions they answer.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    questions: BTreeMap<String, QuestionMeta>,
    responses: Vec<LabeledResponse>,
}

impl Corpus {
    /// Validates and assembles a corpus from already-parsed parts.
    pub fn new(questions: Vec<QuestionMeta>, responses: Vec<LabeledResponse>) -> Result<Self, CorpusError> {
        let mut corpus = Corpus::default();
        for (i, q) in questions.into_iter().enumerate() {
            corpus.add_question(q, i + 1)?;
        }
        let mut seen = HashSet::new();
        for (i, r) in responses.into_iter().enumerate() {
            corpus.check_response(&r, i + 1, &mut seen)?;
            corpus.responses.push(r);
        }
        Ok(corpus)
    }

    fn add_question(&mut self, q: QuestionMeta, line: usize) -> Result<(), CorpusError> {
        if q.question_id.is_empty() {
            return Err(invalid(line, "question_id", "must not be empty"));
        }
        if self.questions.contains_key(&q.question_id) {
            return Err(invalid(line, "question_id", format!("duplicate question id {:?}", q.question_id)));
        }
        self.questions.insert(q.question_id.clone(), q);
        Ok(())
    }

    fn check_response(
        &self,
        r: &LabeledResponse,
        line: usize,
        seen: &mut HashSet<String>,
    ) -> Result<(), CorpusError> {
        if r.id.is_empty() {
            return Err(invalid(line, "id", "must not be empty"));
        }
        if !seen.insert(r.id.clone()) {
            return Err(invalid(line, "id", format!("duplicate response id {:?}", r.id)));
        }
        if r.text.is_empty() {
            return Err(invalid(line, "text", format!("response {:?} has empty text", r.id)));
        }
        if !self.questions.contains_key(&r.question_id) {
            return Err(invalid(
                line,
                "question_id",
                format!("response {:?} references unknown question {:?}", r.id, r.question_id),
            ));
        }
        if let Some((key, v)) = r.ppl_cache.iter().find(|(_, v)| !(v.is_finite() && **v > 0.0)) {
            return Err(invalid(line, "ppl_cache", format!("entry {key:?} is not a positive number: {v}")));
        }
        Ok(())
    }

    /// Parses JSON Lines. Question records may appear anywhere in the file.
    pub fn parse_jsonl(text: &str) -> Result<Self, CorpusError> {
        let mut corpus = Corpus::default();
        let mut pending = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            if raw.trim().is_empty() {
                continue;
            }
            let value: serde_json::Value = serde_json::from_str(raw)
                .map_err(|e| invalid(line, "record", format!("invalid JSON: {e}")))?;
            precheck(line, &value)?;
            let record: Record =
                serde_json::from_value(value).map_err(|e| invalid(line, "record", e.to_string()))?;
            match record {
                Record::Question(q) => corpus.add_question(q, line)?,
                Record::Response(r) => pending.push((line, r)),
            }
        }
        let mut seen = HashSet::new();
        for (line, r) in pending {
            corpus.check_response(&r, line, &mut seen)?;
            corpus.responses.push(r);
        }
        Ok(corpus)
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse_jsonl(&text)
    }

    /// Questions first (sorted by id), then responses in corpus order.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for q in self.questions.values() {
            out.push_str(&serde_json::to_string(&Record::Question(q.clone())).expect("serializes"));
            out.push('\n');
        }
        for r in &self.responses {
            out.push_str(&serde_json::to_string(&Record::Response(r.clone())).expect("serializes"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_jsonl())
    }

    pub fn responses(&self) -> &[LabeledResponse] {
        &self.responses
    }

    pub fn responses_mut(&mut self) -> &mut [LabeledResponse] {
        &mut self.responses
    }

    pub fn questions(&self) -> impl Iterator<Item = &QuestionMeta> {
        self.questions.values()
    }

    pub fn question(&self, question_id: &str) -> Option<&QuestionMeta> {
        self.questions.get(question_id)
    }

    /// Metadata of the question a response answers.
    pub fn meta_of(&self, response: &LabeledResponse) -> &QuestionMeta {
        &self.questions[&response.question_id]
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn count(&self, source: Source) -> usize {
        self.responses.iter().filter(|r| r.source == source).count()
    }

    fn with_responses(&self, responses: Vec<LabeledResponse>) -> Corpus {
        Corpus {
            questions: self.questions.clone(),
            responses,
        }
    }

    /// Keeps the responses matching `keep`, preserving order and metadata.
    pub fn select(&self, mut keep: impl FnMut(&LabeledResponse, &QuestionMeta) -> bool) -> Corpus {
        let kept = self
            .responses
            .iter()
            .filter(|r| keep(r, self.meta_of(r)))
            .cloned()
            .collect();
        self.with_responses(kept)
    }

    pub fn apply_flavor(&self, flavor: DatasetFlavor) -> Corpus {
        match flavor {
            DatasetFlavor::Orig => self.clone(),
            DatasetFlavor::Min250 => self.select(|r, _| r.char_count() >= MIN_CHARS),
            DatasetFlavor::NoMath => self.select(|_, q| !q.flags.math),
            DatasetFlavor::NoCode => self.select(|_, q| !q.flags.code),
            DatasetFlavor::NoMathNoCode => self.select(|_, q| !q.flags.math && !q.flags.code),
        }
    }

    /// Stratified, seeded split into (train, test).
    ///
    /// Each class contributes `round(n * train_fraction)` responses to train,
    /// clamped so both halves keep at least one of every class.
    pub fn split(&self, train_fraction: f64, seed: u64) -> Result<(Corpus, Corpus), CorpusError> {
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(CorpusError::Fraction(train_fraction));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut in_train = vec![false; self.responses.len()];
        for class in [Source::Human, Source::Ai] {
            let mut members: Vec<usize> = (0..self.responses.len())
                .filter(|&i| self.responses[i].source == class)
                .collect();
            if members.len() < 2 {
                return Err(CorpusError::Stratification {
                    class,
                    count: members.len(),
                });
            }
            members.shuffle(&mut rng);
            let n_train = ((members.len() as f64 * train_fraction).round() as usize).clamp(1, members.len() - 1);
            for &i in &members[..n_train] {
                in_train[i] = true;
            }
        }
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for (r, t) in self.responses.iter().zip(in_train) {
            if t {
                train.push(r.clone());
            } else {
                test.push(r.clone());
            }
        }
        Ok((self.with_responses(train), self.with_responses(test)))
    }
}

/// Checks the enumerated fields up front so errors can name the field.
fn precheck(line: usize, value: &serde_json::Value) -> Result<(), CorpusError> {
    let obj = value
        .as_object()
        .ok_or_else(|| invalid(line, "record", "expected a JSON object"))?;
    let str_field = |name: &str| obj.get(name).and_then(|v| v.as_str());
    match str_field("kind") {
        Some("question") => {
            if let Some(k) = str_field("knowledge") {
                k.parse::<KnowledgeDim>().map_err(|e| invalid(line, "knowledge", e))?;
            }
            if let Some(items) = obj.get("cognitive").and_then(|v| v.as_array()) {
                for item in items {
                    let s = item
                        .as_str()
                        .ok_or_else(|| invalid(line, "cognitive", "entries must be strings"))?;
                    s.parse::<CognitiveDim>().map_err(|e| invalid(line, "cognitive", e))?;
                }
            }
        }
        Some("response") => {
            if let Some(s) = str_field("source") {
                s.parse::<SourceName>().map_err(|e| invalid(line, "source", e))?;
            }
        }
        Some(other) => {
            return Err(invalid(line, "kind", format!("unknown record kind {other:?}")));
        }
        None => return Err(invalid(line, "kind", "missing record kind")),
    }
    Ok(())
}

struct SourceName;

impl FromStr for SourceName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "human" | "ai" => Ok(SourceName),
            _ => Err(format!("unknown source {s:?}; expected human or ai")),
        }
    }
}
