//! Marked-up token sequences for mentions and titles.
//!
//! A mention becomes
//!
//! ```text
//! [CLS] left-context [M_s] mention [M_e] right-context [SEP] [GPE_s] Boston [GPE_e] ... [SEP]
//! ```
//!
//! and a title becomes
//!
//! ```text
//! [CLS] title [TITLE] description [SEP] anchor1 [SEP] anchor2 ... [SEP] anchorN [SEP]
//! ```
//!
//! Sequences keep their parts so they can be truncated to a token budget
//! without ever cutting the mention block or the title.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kb::{EntitySpan, EntityType, EventMention, KbEntry};
use crate::text::char_slice;

pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const MENTION_START: &str = "[M_s]";
pub const MENTION_END: &str = "[M_e]";
pub const TITLE_SEP: &str = "[TITLE]";
/// Untyped entity markers, used when entity types are ablated away.
pub const ENTITY_START: &str = "[ENT_s]";
pub const ENTITY_END: &str = "[ENT_e]";

pub fn entity_start(t: EntityType) -> String {
    format!("[{}_s]", t.label())
}

pub fn entity_end(t: EntityType) -> String {
    format!("[{}_e]", t.label())
}

/// Every special token, in a fixed order.
pub fn special_tokens() -> Vec<String> {
    let mut out: Vec<String> = [CLS, SEP, MENTION_START, MENTION_END, TITLE_SEP, ENTITY_START, ENTITY_END]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for t in EntityType::ALL {
        out.push(entity_start(t));
        out.push(entity_end(t));
    }
    out
}

pub fn is_special(token: &str) -> bool {
    token.starts_with('[') && token.ends_with(']') && special_tokens().iter().any(|s| s == token)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReprConfig {
    /// Context characters on each side of the mention.
    pub window_chars: usize,
    pub max_anchors: usize,
    pub description_chars: usize,
    pub max_len: usize,
    pub include_entity_types: bool,
    pub include_entities: bool,
}

impl Default for ReprConfig {
    fn default() -> Self {
        Self {
            window_chars: 500,
            max_anchors: 10,
            description_chars: 2000,
            max_len: 256,
            include_entity_types: true,
            include_entities: true,
        }
    }
}

/// Smallest budget that fits the fixed markers of a joint sequence.
pub const MIN_MAX_LEN: usize = 10;

impl ReprConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_chars == 0 || self.max_anchors == 0 || self.description_chars == 0 {
            return Err(Error::Config("representation counts must be positive".into()));
        }
        if self.max_len < MIN_MAX_LEN {
            return Err(Error::Config(format!("max_len must be at least {MIN_MAX_LEN}")));
        }
        Ok(())
    }
}

fn push_word(out: &mut Vec<String>, word: &mut String) {
    if !word.is_empty() {
        out.push(std::mem::take(word));
    }
}

fn tokenize_impl(text: &str, pass_through: bool) -> Vec<String> {
    let specials = if pass_through { special_tokens() } else { Vec::new() };
    let mut out = Vec::new();
    let mut word = String::new();
    let mut rest = text;
    while let Some(c) = rest.chars().next() {
        if c == '[' {
            if let Some(s) = specials.iter().find(|s| rest.starts_with(s.as_str())) {
                push_word(&mut out, &mut word);
                out.push(s.clone());
                rest = &rest[s.len()..];
                continue;
            }
        }
        if c.is_alphanumeric() {
            word.extend(c.to_lowercase());
        } else {
            push_word(&mut out, &mut word);
            if !c.is_whitespace() {
                out.push(c.to_string());
            }
        }
        rest = &rest[c.len_utf8()..];
    }
    push_word(&mut out, &mut word);
    out
}

/// Lowercases and splits on whitespace and punctuation; punctuation marks
/// become tokens of their own. Special tokens appearing verbatim pass
/// through unsplit.
pub fn tokenize(text: &str) -> Vec<String> {
    tokenize_impl(text, true)
}

/// Like [`tokenize`] but never yields a special token, so document text
/// cannot inject markers.
pub fn tokenize_plain(text: &str) -> Vec<String> {
    tokenize_impl(text, false)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextWindow {
    pub left: String,
    pub right: String,
    /// Char offsets of the window in the document.
    pub start: usize,
    pub end: usize,
}

/// Up to `window_chars` characters each side of `span`, widened so the
/// outermost words are whole.
pub fn context_window(doc_text: &str, span: (usize, usize), cfg: &ReprConfig) -> ContextWindow {
    let chars: Vec<char> = doc_text.chars().collect();
    let len = chars.len();
    let (s, e) = (span.0.min(len), span.1.min(len));
    let mut start = s.saturating_sub(cfg.window_chars);
    while start > 0 && !chars[start - 1].is_whitespace() && !chars[start].is_whitespace() {
        start -= 1;
    }
    let mut end = (e + cfg.window_chars).min(len);
    while end < len && end > 0 && !chars[end - 1].is_whitespace() && !chars[end].is_whitespace() {
        end += 1;
    }
    ContextWindow {
        left: chars[start..s].iter().collect(),
        right: chars[e..end].iter().collect(),
        start,
        end,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct MentionParts {
    left: Vec<String>,
    mention: Vec<String>,
    right: Vec<String>,
    /// Each entity with its markers.
    entities: Vec<Vec<String>>,
}

impl MentionParts {
    fn len(&self) -> usize {
        5 + self.left.len() + self.mention.len() + self.right.len() + self.entities.iter().map(Vec::len).sum::<usize>()
    }

    fn render(&self, out: &mut Vec<String>) -> usize {
        out.push(CLS.into());
        out.extend(self.left.iter().cloned());
        out.push(MENTION_START.into());
        out.extend(self.mention.iter().cloned());
        out.push(MENTION_END.into());
        out.extend(self.right.iter().cloned());
        let boundary = out.len();
        out.push(SEP.into());
        for e in &self.entities {
            out.extend(e.iter().cloned());
        }
        out.push(SEP.into());
        boundary
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct TitleParts {
    title: Vec<String>,
    description: Vec<String>,
    anchors: Vec<Vec<String>>,
}

impl TitleParts {
    fn len(&self) -> usize {
        // [CLS] title [TITLE] description, then one separator after r_3 and
        // one after each anchor (at least one closing [SEP])
        3 + self.title.len()
            + self.description.len()
            + self.anchors.iter().map(Vec::len).sum::<usize>()
            + self.anchors.len().max(1)
    }

    fn render(&self, out: &mut Vec<String>, with_cls: bool) -> usize {
        if with_cls {
            out.push(CLS.into());
        }
        out.extend(self.title.iter().cloned());
        out.push(TITLE_SEP.into());
        out.extend(self.description.iter().cloned());
        let boundary = out.len();
        out.push(SEP.into());
        for (i, h) in self.anchors.iter().enumerate() {
            if i > 0 {
                out.push(SEP.into());
            }
            out.extend(h.iter().cloned());
        }
        out.push(SEP.into());
        boundary
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Layout {
    Mention(MentionParts),
    Title(TitleParts),
    Joint(MentionParts, TitleParts),
    Opaque,
}

/// A rendered token sequence plus the index of its first `[SEP]`, which
/// separates the text part (r_1 or r_3) from the entity part (r_2 or r_4).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    tokens: Vec<String>,
    boundary: usize,
    title_start: Option<usize>,
    layout: Layout,
}

/// One truncation step; returns false when the part is exhausted.
type Trim<P> = fn(&mut P) -> bool;

fn shrink_to<P>(parts: &mut P, len: fn(&P) -> usize, max_len: usize, steps: &[Trim<P>]) {
    for step in steps {
        while len(parts) > max_len {
            if !step(parts) {
                break;
            }
        }
    }
}

fn pop_back(v: &mut Vec<String>) -> bool {
    v.pop().is_some()
}

fn pop_front(v: &mut Vec<String>) -> bool {
    if v.is_empty() {
        return false;
    }
    v.remove(0);
    true
}

fn pop_keep_one(v: &mut Vec<String>) -> bool {
    v.len() > 1 && v.pop().is_some()
}

fn pop_group(v: &mut Vec<Vec<String>>) -> bool {
    v.pop().is_some()
}

impl TokenSequence {
    fn from_mention(mut parts: MentionParts, max_len: usize) -> Self {
        shrink_to(
            &mut parts,
            MentionParts::len,
            max_len,
            &[
                |p| pop_back(&mut p.right),
                |p| pop_front(&mut p.left),
                |p| pop_group(&mut p.entities),
                |p| pop_keep_one(&mut p.mention),
            ],
        );
        let mut tokens = Vec::with_capacity(parts.len());
        let boundary = parts.render(&mut tokens);
        Self {
            tokens,
            boundary,
            title_start: None,
            layout: Layout::Mention(parts),
        }
    }

    fn from_title(mut parts: TitleParts, max_len: usize) -> Self {
        shrink_to(
            &mut parts,
            TitleParts::len,
            max_len,
            &[
                |p| pop_back(&mut p.description),
                |p| pop_group(&mut p.anchors),
                |p| pop_keep_one(&mut p.title),
            ],
        );
        let mut tokens = Vec::with_capacity(parts.len());
        let boundary = parts.render(&mut tokens, true);
        Self {
            tokens,
            boundary,
            title_start: Some(1),
            layout: Layout::Title(parts),
        }
    }

    fn from_joint(m: MentionParts, t: TitleParts, max_len: usize) -> Self {
        // the title's [CLS] is dropped
        let len = |p: &(MentionParts, TitleParts)| p.0.len() + p.1.len() - 1;
        let mut pair = (m, t);
        shrink_to(
            &mut pair,
            len,
            max_len,
            &[
                |p| pop_back(&mut p.0.right),
                |p| pop_front(&mut p.0.left),
                |p| pop_back(&mut p.1.description),
                |p| pop_group(&mut p.0.entities),
                |p| pop_group(&mut p.1.anchors),
                |p| pop_keep_one(&mut p.1.title),
                |p| pop_keep_one(&mut p.0.mention),
            ],
        );
        let mut tokens = Vec::with_capacity(len(&pair));
        let (m, t) = pair;
        let boundary = m.render(&mut tokens);
        let title_start = tokens.len();
        t.render(&mut tokens, false);
        Self {
            tokens,
            boundary,
            title_start: Some(title_start),
            layout: Layout::Joint(m, t),
        }
    }

    /// Wraps an arbitrary token list (e.g. vectors produced elsewhere).
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let boundary = tokens.iter().position(|t| t == SEP).unwrap_or(tokens.len());
        Self {
            tokens,
            boundary,
            title_start: None,
            layout: Layout::Opaque,
        }
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Index of the `[SEP]` closing the text part.
    pub fn boundary(&self) -> usize {
        self.boundary
    }

    /// Where the title tokens begin, for title and joint sequences.
    pub fn title_start(&self) -> Option<usize> {
        self.title_start
    }

    /// Newline-joined tokens, the golden-file dump format.
    pub fn dump(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }
}

/// Entities that lie inside the window, do not touch the mention, and do
/// not overlap an earlier (or, on equal start, longer) entity. Returned in
/// document order.
fn select_entities<'a>(entities: &'a [EntitySpan], mention: (usize, usize), window: &ContextWindow) -> Vec<&'a EntitySpan> {
    let mut candidates: Vec<&EntitySpan> = entities
        .iter()
        .filter(|e| e.span.0 < e.span.1)
        .filter(|e| e.span.0 >= window.start && e.span.1 <= window.end)
        .filter(|e| e.span.1 <= mention.0 || e.span.0 >= mention.1)
        .collect();
    candidates.sort_by_key(|e| (e.span.0, std::cmp::Reverse(e.span.1)));
    let mut kept: Vec<&EntitySpan> = Vec::new();
    for e in candidates {
        if kept.last().is_none_or(|k| e.span.0 >= k.span.1) {
            kept.push(e);
        }
    }
    kept
}

pub fn build_mention_repr(mention: &EventMention, entities: &[EntitySpan], cfg: &ReprConfig) -> TokenSequence {
    let window = context_window(&mention.doc_text, mention.span, cfg);
    let mut mention_tokens = tokenize_plain(&mention.surface);
    if mention_tokens.is_empty() {
        // whitespace-only surface: keep the block non-empty
        mention_tokens.push(mention.surface.clone());
    }
    let entities = if cfg.include_entities {
        select_entities(entities, mention.span, &window)
            .into_iter()
            .map(|e| {
                let (start, end) = if cfg.include_entity_types {
                    (entity_start(e.etype), entity_end(e.etype))
                } else {
                    (ENTITY_START.to_string(), ENTITY_END.to_string())
                };
                let surface = char_slice(&mention.doc_text, e.span.0, e.span.1).unwrap_or(&e.surface);
                let mut group = vec![start];
                group.extend(tokenize_plain(surface));
                group.push(end);
                group
            })
            .collect()
    } else {
        Vec::new()
    };
    TokenSequence::from_mention(
        MentionParts {
            left: tokenize_plain(&window.left),
            mention: mention_tokens,
            right: tokenize_plain(&window.right),
            entities,
        },
        cfg.max_len,
    )
}

/// The first `n` chars of `body`, extended to the end of the word it
/// lands in.
pub fn description(body: &str, n: usize) -> &str {
    let mut end = None;
    let mut prev_ws = true;
    for (count, (b, c)) in body.char_indices().enumerate() {
        if count >= n && (c.is_whitespace() || prev_ws) {
            end = Some(b);
            break;
        }
        prev_ws = c.is_whitespace();
    }
    &body[..end.unwrap_or(body.len())]
}

pub fn build_title_repr(entry: &KbEntry, cfg: &ReprConfig) -> TokenSequence {
    let mut title = tokenize_plain(&entry.title);
    if title.is_empty() {
        title.push(entry.title.clone());
    }
    let anchors = entry
        .anchors
        .iter()
        .take(cfg.max_anchors)
        .map(|a| tokenize_plain(&a.surface))
        .filter(|t| !t.is_empty())
        .collect();
    TokenSequence::from_title(
        TitleParts {
            title,
            description: tokenize_plain(description(&entry.body, cfg.description_chars)),
            anchors,
        },
        cfg.max_len,
    )
}

/// Mention sequence followed by the title sequence minus its `[CLS]`,
/// truncated to `max_len`: contexts first, then description, then entity
/// groups. The mention block and the title are kept.
pub fn joint_repr(mention: &TokenSequence, title: &TokenSequence, max_len: usize) -> TokenSequence {
    match (&mention.layout, &title.layout) {
        (Layout::Mention(m), Layout::Title(t)) => TokenSequence::from_joint(m.clone(), t.clone(), max_len),
        _ => {
            let mut tokens = mention.tokens.clone();
            let skip = usize::from(title.tokens.first().is_some_and(|t| t == CLS));
            let title_start = tokens.len();
            tokens.extend(title.tokens[skip..].iter().cloned());
            tokens.truncate(max_len);
            let mut seq = TokenSequence::from_tokens(tokens);
            seq.title_start = Some(title_start);
            seq
        }
    }
}
