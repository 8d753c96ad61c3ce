//! Knowledge-base and mention records, their validation, and JSON-lines
//! persistence.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};
use crate::text::{char_len, char_slice};
use crate::vecfile::write_atomic;

/// A hyperlinked span inside a page body.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Anchor {
    pub surface: String,
    pub target_id: u64,
    /// Char offset into the body.
    pub offset: usize,
}

impl Anchor {
    pub fn end(&self) -> usize {
        self.offset + char_len(&self.surface)
    }
}

/// A titled knowledge-base page.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KbEntry {
    pub id: u64,
    pub title: String,
    pub body: String,
    #[serde(default)]
    pub anchors: Vec<Anchor>,
    #[serde(rename = "types", default)]
    pub type_tags: BTreeSet<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PosClass {
    Verb,
    Nominal,
}

impl fmt::Display for PosClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PosClass::Verb => "verb",
            PosClass::Nominal => "nominal",
        })
    }
}

/// The 18 OntoNotes named-entity labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EntityType {
    Person,
    Norp,
    Fac,
    Org,
    Gpe,
    Loc,
    Product,
    Event,
    WorkOfArt,
    Law,
    Language,
    Date,
    Time,
    Percent,
    Money,
    Quantity,
    Ordinal,
    Cardinal,
}

impl EntityType {
    pub const ALL: [EntityType; 18] = [
        EntityType::Person,
        EntityType::Norp,
        EntityType::Fac,
        EntityType::Org,
        EntityType::Gpe,
        EntityType::Loc,
        EntityType::Product,
        EntityType::Event,
        EntityType::WorkOfArt,
        EntityType::Law,
        EntityType::Language,
        EntityType::Date,
        EntityType::Time,
        EntityType::Percent,
        EntityType::Money,
        EntityType::Quantity,
        EntityType::Ordinal,
        EntityType::Cardinal,
    ];

    pub fn label(self) -> &'static str {
        match self {
            EntityType::Person => "PERSON",
            EntityType::Norp => "NORP",
            EntityType::Fac => "FAC",
            EntityType::Org => "ORG",
            EntityType::Gpe => "GPE",
            EntityType::Loc => "LOC",
            EntityType::Product => "PRODUCT",
            EntityType::Event => "EVENT",
            EntityType::WorkOfArt => "WORK_OF_ART",
            EntityType::Law => "LAW",
            EntityType::Language => "LANGUAGE",
            EntityType::Date => "DATE",
            EntityType::Time => "TIME",
            EntityType::Percent => "PERCENT",
            EntityType::Money => "MONEY",
            EntityType::Quantity => "QUANTITY",
            EntityType::Ordinal => "ORDINAL",
            EntityType::Cardinal => "CARDINAL",
        }
    }
}

impl FromStr for EntityType {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        EntityType::ALL
            .into_iter()
            .find(|t| t.label() == s)
            .ok_or_else(|| format!("unknown entity type {s:?}"))
    }
}

impl fmt::Display for EntityType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitySpan {
    pub surface: String,
    #[serde(rename = "type")]
    pub etype: EntityType,
    pub span: (usize, usize),
}

/// Evaluation category of a dev/test mention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitLabel {
    SeenEvent,
    UnseenForm,
    UnseenEvent,
    NominalHard,
    NominalEasy,
    Nil,
}

impl SplitLabel {
    pub fn allowed_for(self, pos: PosClass) -> bool {
        match self {
            SplitLabel::Nil => true,
            SplitLabel::SeenEvent | SplitLabel::UnseenForm | SplitLabel::UnseenEvent => {
                pos == PosClass::Verb
            }
            SplitLabel::NominalHard | SplitLabel::NominalEasy => pos == PosClass::Nominal,
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            SplitLabel::SeenEvent => "Seen Event",
            SplitLabel::UnseenForm => "Unseen Form",
            SplitLabel::UnseenEvent => "Unseen Event",
            SplitLabel::NominalHard => "Hard",
            SplitLabel::NominalEasy => "Easy",
            SplitLabel::Nil => "Nil",
        }
    }
}

/// An event mention in its document, with an optional gold title
/// (`None` is Nil).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventMention {
    pub mention_id: u64,
    pub doc_text: String,
    pub span: (usize, usize),
    pub surface: String,
    pub pos: PosClass,
    pub gold_id: Option<u64>,
    pub entities: Vec<EntitySpan>,
    pub split_label: Option<SplitLabel>,
}

#[derive(Debug, Serialize, Deserialize)]
struct MentionRecord {
    mention_id: u64,
    doc_text: String,
    span: (usize, usize),
    #[serde(default, skip_serializing_if = "Option::is_none")]
    surface: Option<String>,
    pos: PosClass,
    gold_id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    entities: Option<Vec<EntitySpan>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split: Option<SplitLabel>,
}

impl EventMention {
    /// Builds a mention from its document and span, deriving the surface.
    pub fn new(
        mention_id: u64,
        doc_text: impl Into<String>,
        span: (usize, usize),
        pos: PosClass,
        gold_id: Option<u64>,
    ) -> Result<Self> {
        let doc_text = doc_text.into();
        let surface = char_slice(&doc_text, span.0, span.1)
            .ok_or(Error::SpanOutOfBounds {
                mention_id,
                start: span.0,
                end: span.1,
                len: char_len(&doc_text),
            })?
            .to_string();
        Ok(Self {
            mention_id,
            doc_text,
            span,
            surface,
            pos,
            gold_id,
            entities: Vec::new(),
            split_label: None,
        })
    }

    pub fn is_nil(&self) -> bool {
        self.gold_id.is_none()
    }

    /// Span, surface, entity and label checks; gold resolution when a KB
    /// is supplied.
    pub fn validate(&self, kb: Option<&Kb>) -> Result<()> {
        let len = char_len(&self.doc_text);
        let check_span = |span: (usize, usize)| {
            if span.0 > span.1 || span.1 > len {
                Err(Error::SpanOutOfBounds {
                    mention_id: self.mention_id,
                    start: span.0,
                    end: span.1,
                    len,
                })
            } else {
                Ok(())
            }
        };
        check_span(self.span)?;
        let found = char_slice(&self.doc_text, self.span.0, self.span.1).unwrap_or_default();
        if found != self.surface {
            return Err(Error::SurfaceMismatch {
                mention_id: self.mention_id,
                surface: self.surface.clone(),
                found: found.to_string(),
            });
        }
        for ent in &self.entities {
            check_span(ent.span)?;
        }
        if let (Some(kb), Some(gold_id)) = (kb, self.gold_id) {
            if !kb.contains(gold_id) {
                return Err(Error::UnknownGoldId {
                    mention_id: self.mention_id,
                    gold_id,
                });
            }
        }
        if let Some(label) = self.split_label {
            if !label.allowed_for(self.pos) {
                return Err(Error::Config(format!(
                    "mention {}: label {:?} not allowed for {} mentions",
                    self.mention_id, label, self.pos
                )));
            }
        }
        Ok(())
    }

    fn from_record(rec: MentionRecord) -> Self {
        let surface = rec.surface.unwrap_or_else(|| {
            char_slice(&rec.doc_text, rec.span.0, rec.span.1)
                .unwrap_or_default()
                .to_string()
        });
        Self {
            mention_id: rec.mention_id,
            doc_text: rec.doc_text,
            span: rec.span,
            surface,
            pos: rec.pos,
            gold_id: rec.gold_id,
            entities: rec.entities.unwrap_or_default(),
            split_label: rec.split,
        }
    }

    fn to_record(&self) -> MentionRecord {
        MentionRecord {
            mention_id: self.mention_id,
            doc_text: self.doc_text.clone(),
            span: self.span,
            surface: Some(self.surface.clone()),
            pos: self.pos,
            gold_id: self.gold_id,
            entities: Some(self.entities.clone()),
            split: self.split_label,
        }
    }
}

/// An id-keyed, immutable collection of pages.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Kb {
    entries: BTreeMap<u64, KbEntry>,
    title_index: HashMap<String, u64>,
}

/// What `load_kb` dropped while validating.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub dropped_anchors: usize,
}

impl Kb {
    /// Validates entries: ids must be unique; anchors that fall outside the
    /// body, disagree with the body text, or point at unknown ids are
    /// dropped and counted.
    pub fn from_entries(entries: Vec<KbEntry>) -> Result<(Self, LoadReport)> {
        let mut ids = HashSet::with_capacity(entries.len());
        for e in &entries {
            if !ids.insert(e.id) {
                return Err(Error::DuplicateId(e.id));
            }
        }
        let mut report = LoadReport::default();
        let mut map = BTreeMap::new();
        for mut e in entries {
            let before = e.anchors.len();
            e.anchors.retain(|a| {
                char_slice(&e.body, a.offset, a.end()) == Some(a.surface.as_str())
                    && ids.contains(&a.target_id)
            });
            report.dropped_anchors += before - e.anchors.len();
            map.insert(e.id, e);
        }
        if report.dropped_anchors > 0 {
            log::warn!("dropped {} malformed or dangling anchors", report.dropped_anchors);
        }
        Ok((Self::from_validated(map), report))
    }

    fn from_validated(entries: BTreeMap<u64, KbEntry>) -> Self {
        let mut title_index = HashMap::with_capacity(entries.len());
        // ascending id order: the first id wins on duplicate titles
        for e in entries.values() {
            title_index.entry(e.title.clone()).or_insert(e.id);
        }
        Self {
            entries,
            title_index,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, id: u64) -> bool {
        self.entries.contains_key(&id)
    }

    pub fn get(&self, id: u64) -> Option<&KbEntry> {
        self.entries.get(&id)
    }

    pub fn id_for_title(&self, title: &str) -> Option<u64> {
        self.title_index.get(title).copied()
    }

    /// Entries in ascending id order.
    pub fn iter(&self) -> impl Iterator<Item = &KbEntry> {
        self.entries.values()
    }

    pub fn ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.entries.keys().copied()
    }

    /// Ids of entries tagged with `event_tag`.
    pub fn event_titles(&self, event_tag: &str) -> BTreeSet<u64> {
        self.entries
            .values()
            .filter(|e| e.type_tags.contains(event_tag))
            .map(|e| e.id)
            .collect()
    }
}

pub fn event_titles(kb: &Kb, event_tag: &str) -> BTreeSet<u64> {
    kb.event_titles(event_tag)
}

fn read_lines(path: &Path) -> Result<impl Iterator<Item = (usize, std::io::Result<String>)>> {
    let file = File::open(path).io_context(|| format!("opening {}", path.display()))?;
    Ok(BufReader::new(file)
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l)))
}

fn parse_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (line_no, line) in read_lines(path)? {
        let line = line.io_context(|| format!("reading {}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

fn write_jsonl<T: Serialize>(path: &Path, records: impl IntoIterator<Item = T>) -> Result<()> {
    let mut buf = Vec::new();
    for rec in records {
        serde_json::to_writer(&mut buf, &rec)?;
        buf.push(b'\n');
    }
    write_atomic(path, &buf)
}

pub fn load_kb(path: &Path) -> Result<(Kb, LoadReport)> {
    Kb::from_entries(parse_jsonl(path)?)
}

pub fn write_kb(path: &Path, kb: &Kb) -> Result<()> {
    write_jsonl(path, kb.iter())
}

/// Reads and validates mention records. With `kb`, every gold id must
/// resolve.
pub fn load_mentions(path: &Path, kb: Option<&Kb>) -> Result<Vec<EventMention>> {
    let records: Vec<MentionRecord> = parse_jsonl(path)?;
    let mut out = Vec::with_capacity(records.len());
    for rec in records {
        let m = EventMention::from_record(rec);
        m.validate(kb)?;
        out.push(m);
    }
    Ok(out)
}

/// Reads mention records without validating them, for diagnostics.
pub fn read_mentions_unchecked(path: &Path) -> Result<Vec<EventMention>> {
    let records: Vec<MentionRecord> = parse_jsonl(path)?;
    Ok(records.into_iter().map(EventMention::from_record).collect())
}

pub fn write_mentions(path: &Path, mentions: &[EventMention]) -> Result<()> {
    write_jsonl(path, mentions.iter().map(EventMention::to_record))
}

/// Serialized form of one mention, as written by `write_mentions`.
pub fn mention_to_json(m: &EventMention) -> String {
    serde_json::to_string(&m.to_record()).expect("mention records always serialize")
}
