//! Seeded generators for test data: a small task where only entity names
//! tell titles apart, and a wiki-style fixture with event, entity and host
//! pages plus mention records.

use std::collections::{BTreeSet, HashMap};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dataset::{extract_event_links, TrainSplit};
use crate::encoder::TrainConfig;
use crate::kb::{Anchor, EntitySpan, EntityType, EventMention, Kb, KbEntry, PosClass};
use crate::rerank::RerankTrainConfig;
use crate::text::{char_len, hash_str};

const SYLLABLES: &[&str] = &[
    "ka", "lor", "ven", "mi", "tar", "bel", "os", "run", "dra", "fen", "ix", "sol", "mar", "quen", "thal", "bri", "zo",
    "nev", "hal", "cor", "wen", "dul", "pra", "gis", "ob", "tem", "yr", "ash", "lu", "rok",
];

/// Unique capitalized pseudo-words.
struct Names {
    rng: ChaCha8Rng,
    used: BTreeSet<String>,
}

impl Names {
    fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            used: BTreeSet::new(),
        }
    }

    fn next(&mut self) -> String {
        loop {
            let n = self.rng.random_range(2..=3);
            let word: String = (0..n).map(|_| *SYLLABLES.choose(&mut self.rng).unwrap()).collect();
            let mut chars = word.chars();
            let name: String = chars.next().unwrap().to_uppercase().chain(chars).collect();
            if self.used.insert(name.to_lowercase()) {
                return name;
            }
        }
    }
}

/// Text under construction, tracking char offsets of marked spans.
#[derive(Default)]
struct Doc {
    text: String,
    len: usize,
}

impl Doc {
    fn push(&mut self, s: &str) {
        if !self.text.is_empty() && !s.starts_with([' ', '.', ',']) && !self.text.ends_with(' ') {
            self.text.push(' ');
            self.len += 1;
        }
        self.text.push_str(s);
        self.len += char_len(s);
    }

    /// Appends `s` and returns its char span.
    fn mark(&mut self, s: &str) -> (usize, usize) {
        if !self.text.is_empty() && !self.text.ends_with(' ') {
            self.text.push(' ');
            self.len += 1;
        }
        let start = self.len;
        self.text.push_str(s);
        self.len += char_len(s);
        (start, self.len)
    }
}

const FILLER: &[&str] = &[
    "According to several reports from the period,",
    "Witnesses described the scene in some detail and",
    "Local newspapers followed the story for weeks while",
    "Historians still debate the sequence of events, but",
    "As officials later confirmed in a statement,",
    "During the long season that followed,",
];

const CLOSERS: &[&str] = &[
    "and the news spread quickly across the region.",
    "before the crowds finally went home.",
    "which surprised many observers at the time.",
    "as the weather turned cold.",
];

const TRIGGERS: &[&str] = &["attacked", "gathered", "protested", "marched", "clashed"];

const EVENT_NOUNS: &[&str] = &["uprising", "summit", "accord", "revolt", "festival"];

/// A KB with labeled mentions; every mention is treated as training data.
#[derive(Debug, Clone)]
pub struct SynthTask {
    pub kb: Kb,
    pub mentions: Vec<EventMention>,
}

impl SynthTask {
    pub fn train(&self) -> TrainSplit {
        TrainSplit::from_mentions(self.mentions.clone())
    }
}

/// `n_titles` event titles with `per_title` mentions each. Mention
/// contexts draw filler and trigger words from pools shared by every
/// title; the only title-specific tokens are the names of the entities
/// taking part, which also appear in the gold title's page.
pub fn entity_overlap_task(n_titles: usize, per_title: usize, seed: u64) -> SynthTask {
    let mut names = Names::new(seed ^ 0x7a5c);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::with_capacity(n_titles);
    let mut participants = Vec::with_capacity(n_titles);
    for i in 0..n_titles {
        let (person, org, place) = (names.next(), names.next(), names.next());
        let noun = EVENT_NOUNS[i % EVENT_NOUNS.len()];
        let title = format!("{place} {noun}");
        let body = format!(
            "The {title} was a {noun} in {place} involving {person} and the {org} group. {}",
            CLOSERS[i % CLOSERS.len()]
        );
        entries.push(KbEntry {
            id: i as u64 + 1,
            title,
            body,
            anchors: Vec::new(),
            type_tags: BTreeSet::from(["Event".to_string()]),
        });
        participants.push([(person, EntityType::Person), (org, EntityType::Org), (place, EntityType::Gpe)]);
    }
    let (kb, _) = Kb::from_entries(entries).expect("generated ids are unique");

    let mut mentions = Vec::with_capacity(n_titles * per_title);
    for (t, parts) in participants.iter().enumerate() {
        for j in 0..per_title {
            // two of the three participants, rotating which one is left out
            let picked: Vec<&(String, EntityType)> =
                parts.iter().enumerate().filter(|(k, _)| *k != j % 3).map(|(_, p)| p).collect();
            let mut doc = Doc::default();
            let mut entities = Vec::new();
            doc.push(FILLER.choose(&mut rng).unwrap());
            let span0 = doc.mark(&picked[0].0);
            entities.push(EntitySpan {
                surface: picked[0].0.clone(),
                etype: picked[0].1,
                span: span0,
            });
            let trig = doc.mark(TRIGGERS.choose(&mut rng).unwrap());
            doc.push("near");
            let span1 = doc.mark(&picked[1].0);
            entities.push(EntitySpan {
                surface: picked[1].0.clone(),
                etype: picked[1].1,
                span: span1,
            });
            doc.push(CLOSERS.choose(&mut rng).unwrap());
            let mut m = EventMention::new(
                mentions.len() as u64,
                doc.text,
                trig,
                PosClass::Verb,
                Some(t as u64 + 1),
            )
            .expect("generated span is in bounds");
            m.entities = entities;
            mentions.push(m);
        }
    }
    SynthTask { kb, mentions }
}

/// Event kinds for the wiki fixture: head noun and trigger verbs.
const KINDS: &[(&str, &[&str])] = &[
    ("siege", &["besieged", "encircled", "blockaded"]),
    ("battle", &["fought", "clashed", "attacked"]),
    ("election", &["elected", "voted", "campaigned"]),
    ("strike", &["struck", "picketed", "protested"]),
    ("treaty", &["signed", "ratified", "negotiated"]),
    ("bombing", &["bombed", "detonated", "exploded"]),
    ("earthquake", &["shook", "devastated", "struck"]),
    ("flood", &["flooded", "inundated", "submerged"]),
    ("coronation", &["crowned", "enthroned", "anointed"]),
    ("riot", &["rioted", "looted", "rampaged"]),
];

/// Nominal aliases with little character overlap with any title.
const HARD_ALIASES: &[&str] = &["the troubles", "that upheaval", "the unrest", "those days", "the affair"];

/// Generated KB pages and mention records.
#[derive(Debug, Clone)]
pub struct WikiFixture {
    pub entries: Vec<KbEntry>,
    /// Anchor-derived mentions with producer part-of-speech, followed by
    /// Nil mentions from documents outside the KB.
    pub mentions: Vec<EventMention>,
}

struct Event {
    id: u64,
    kind: usize,
    title: String,
    place: u64,
    person: u64,
    year: u32,
    verbs: usize,
    nominals: usize,
}

/// A fixture of exactly `n_titles` pages (at least 20): 30% events, 30%
/// entities and the rest host articles whose sentences link to both.
pub fn wiki_fixture(n_titles: usize, seed: u64) -> WikiFixture {
    let n_titles = n_titles.max(20);
    let n_events = n_titles * 3 / 10;
    let n_entities = n_titles * 3 / 10;
    let n_hosts = n_titles - n_events - n_entities;
    let mut names = Names::new(seed ^ 0x91c1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // entities: even ids people, odd ids places
    let mut entries: Vec<KbEntry> = Vec::with_capacity(n_titles);
    let entity_base = 1 + n_events as u64;
    let mut entity_names: HashMap<u64, String> = HashMap::new();
    for k in 0..n_entities as u64 {
        let id = entity_base + k;
        let person = k % 2 == 0;
        let name = if person { format!("{} {}", names.next(), names.next()) } else { names.next() };
        entity_names.insert(id, name.clone());
        let (tag, body) = if person {
            ("Person", format!("{name} was a public figure known across the provinces."))
        } else {
            ("city", format!("{name} is a city on the river plain with an old market."))
        };
        entries.push(KbEntry {
            id,
            title: name,
            body,
            anchors: Vec::new(),
            type_tags: BTreeSet::from([tag.to_string()]),
        });
    }
    let people: Vec<u64> = (0..n_entities as u64).filter(|k| k % 2 == 0).map(|k| entity_base + k).collect();
    let places: Vec<u64> = (0..n_entities as u64).filter(|k| k % 2 == 1).map(|k| entity_base + k).collect();

    let mut events = Vec::with_capacity(n_events);
    for i in 0..n_events {
        let kind = i % KINDS.len();
        let place = places[(i + i / places.len()) % places.len()];
        let person = *people.choose(&mut rng).unwrap();
        let year = rng.random_range(1800..2000);
        let noun = KINDS[kind].0;
        let mut title_noun = noun.to_string();
        title_noun[..1].make_ascii_uppercase();
        let title = if i % 2 == 0 {
            format!("{title_noun} of {}", entity_names[&place])
        } else {
            format!("{year} {} {noun}", entity_names[&place])
        };
        // a third of the events have few verb mentions and get held out
        let verbs = if i % 3 == 0 { rng.random_range(1..=4) } else { rng.random_range(6..=10) };
        let nominals = rng.random_range(4..=10);
        events.push(Event {
            id: 1 + i as u64,
            kind,
            title,
            place,
            person,
            year,
            verbs,
            nominals,
        });
    }
    for e in &events {
        let mut doc = Doc::default();
        let mut anchors = Vec::new();
        doc.push(&format!("The {} was a {} in", e.title, KINDS[e.kind].0));
        let place = &entity_names[&e.place];
        let span = doc.mark(place);
        anchors.push(Anchor {
            surface: place.clone(),
            target_id: e.place,
            offset: span.0,
        });
        doc.push(&format!("in {} led by", e.year));
        let person = &entity_names[&e.person];
        let span = doc.mark(person);
        anchors.push(Anchor {
            surface: person.clone(),
            target_id: e.person,
            offset: span.0,
        });
        doc.push(". It is remembered in local histories.");
        entries.push(KbEntry {
            id: e.id,
            title: e.title.clone(),
            body: doc.text,
            anchors,
            type_tags: BTreeSet::from(["Event".to_string()]),
        });
    }

    // one sentence per mention; an event's sentences stay together and the
    // blocks are cut into consecutive runs, one run per host page
    #[derive(Clone, Copy)]
    enum Form {
        Verb,
        Easy,
        Hard,
    }
    let mut blocks: Vec<Vec<(usize, Form)>> = Vec::new();
    for (i, e) in events.iter().enumerate() {
        let mut block = vec![(i, Form::Verb); e.verbs];
        for j in 0..e.nominals {
            block.push((i, if j % 2 == 0 { Form::Easy } else { Form::Hard }));
        }
        block.shuffle(&mut rng);
        blocks.push(block);
    }
    blocks.shuffle(&mut rng);
    let sentences: Vec<(usize, Form)> = blocks.concat();
    let host_base = entity_base + n_entities as u64;
    let mut pos_of: HashMap<(u64, usize), PosClass> = HashMap::new();
    for h in 0..n_hosts {
        let id = host_base + h as u64;
        let mut doc = Doc::default();
        let mut anchors = Vec::new();
        let link = |doc: &mut Doc, anchors: &mut Vec<Anchor>, surface: &str, target: u64| {
            let span = doc.mark(surface);
            anchors.push(Anchor {
                surface: surface.to_string(),
                target_id: target,
                offset: span.0,
            });
            span.0
        };
        doc.push(FILLER[h % FILLER.len()]);
        doc.push("this chronicle records the following.");
        let run = &sentences[h * sentences.len() / n_hosts..(h + 1) * sentences.len() / n_hosts];
        for &(i, form) in run {
            let e = &events[i];
            match form {
                Form::Verb => {
                    doc.push(&format!("In {} ,", e.year));
                    link(&mut doc, &mut anchors, &entity_names[&e.person], e.person);
                    let verb = *KINDS[e.kind].1.choose(&mut rng).unwrap();
                    let at = link(&mut doc, &mut anchors, verb, e.id);
                    pos_of.insert((id, at), PosClass::Verb);
                    doc.push("near");
                    link(&mut doc, &mut anchors, &entity_names[&e.place], e.place);
                    doc.push(".");
                }
                Form::Easy | Form::Hard => {
                    doc.push("Many still recall");
                    let surface = match form {
                        Form::Easy => format!("the {} of {}", KINDS[e.kind].0, entity_names[&e.place]),
                        _ => HARD_ALIASES.choose(&mut rng).unwrap().to_string(),
                    };
                    let at = link(&mut doc, &mut anchors, &surface, e.id);
                    pos_of.insert((id, at), PosClass::Nominal);
                    doc.push("and the role of");
                    link(&mut doc, &mut anchors, &entity_names[&e.person], e.person);
                    doc.push(".");
                }
            }
        }
        entries.push(KbEntry {
            id,
            title: format!("Chronicle of {}", names.next()),
            body: doc.text,
            anchors,
            type_tags: BTreeSet::from(["Article".to_string()]),
        });
    }
    entries.sort_by_key(|e| e.id);

    let (kb, _) = Kb::from_entries(entries.clone()).expect("generated ids are unique");
    let page_of: HashMap<&str, u64> = kb.iter().map(|e| (e.body.as_str(), e.id)).collect();
    let mut mentions: Vec<EventMention> = extract_event_links(&kb, "Event")
        .into_iter()
        .map(|mut m| {
            if let Some(&pos) = page_of.get(m.doc_text.as_str()).and_then(|p| pos_of.get(&(*p, m.span.0))) {
                m.pos = pos;
            }
            m
        })
        .collect();

    // Nil mentions: events without a page, in documents outside the KB
    let n_nil = (n_events / 3).max(2);
    for j in 0..n_nil {
        let kind = &KINDS[j % KINDS.len()];
        let place = names.next();
        let mut doc = Doc::default();
        doc.push(FILLER[j % FILLER.len()]);
        let (span, pos) = if j % 2 == 0 {
            doc.push(&format!("a crowd in {place}"));
            (doc.mark(kind.1.choose(&mut rng).unwrap()), PosClass::Verb)
        } else {
            doc.push("people spoke of");
            (doc.mark(&format!("the {} of {place}", kind.0)), PosClass::Nominal)
        };
        doc.push("that year.");
        let id = mentions.len() as u64;
        mentions.push(EventMention::new(id, doc.text, span, pos, None).expect("generated span is in bounds"));
    }
    WikiFixture { entries, mentions }
}

/// Bi-encoder settings that fit the small synthetic tasks in well under a
/// second. The library defaults barely move at this scale.
pub fn small_encoder_config(seed: u64) -> TrainConfig {
    TrainConfig {
        batch_size: 16,
        epochs: 200,
        learning_rate: 0.5,
        seed,
        init_scale: 0.5,
        vocab_size: 4096,
        dim: 32,
    }
}

/// Reranker counterpart of [`small_encoder_config`].
pub fn small_reranker_config(seed: u64) -> RerankTrainConfig {
    RerankTrainConfig {
        candidates_per_mention: 20,
        batch_size: 16,
        epochs: 100,
        learning_rate: 0.5,
        seed,
        init_scale: 1.0,
        vocab_size: 4096,
        dim: 32,
    }
}

/// A word-vector file in "word v1 .. vd" form for `words`, each vector
/// drawn from a generator seeded by the word, so the same word always gets
/// the same vector.
pub fn word_vectors<'a>(words: impl IntoIterator<Item = &'a str>, dim: usize, seed: u64) -> String {
    let words: BTreeSet<String> = words.into_iter().map(str::to_lowercase).collect();
    let mut out = String::new();
    for w in words {
        let mut rng = ChaCha8Rng::seed_from_u64(hash_str(&w) ^ seed);
        out.push_str(&w);
        for _ in 0..dim {
            let x: f64 = rng.sample(StandardNormal);
            out.push_str(&format!(" {x:.5}"));
        }
        out.push('\n');
    }
    out
}
