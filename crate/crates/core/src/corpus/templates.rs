//! Template grammar for synthetic utterances.
//!
//! A template is a whitespace-separated list of pieces:
//!
//! * `{Keyword}` expands to one of the intent's keyword phrases, every word
//!   labelled `IntentKeyword`;
//! * `{Label}` expands to a lexicon phrase for slot `Label`, every word
//!   labelled `Label`;
//! * `word/Label` is a literal word with an explicit label;
//! * any other word is a literal labelled `None`.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{CorpusError, Result, SlotInventory, KEYWORD_LABEL, NONE_LABEL};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Piece {
    Keyword,
    Slot(String),
    Literal { word: String, label: String },
}

pub fn parse_template(t: &str) -> Vec<Piece> {
    t.split_whitespace()
        .map(|w| {
            if let Some(inner) = w.strip_prefix('{').and_then(|r| r.strip_suffix('}')) {
                if inner == "Keyword" {
                    Piece::Keyword
                } else {
                    Piece::Slot(inner.to_string())
                }
            } else if let Some((word, label)) = w.split_once('/') {
                Piece::Literal {
                    word: word.to_string(),
                    label: label.to_string(),
                }
            } else {
                Piece::Literal {
                    word: w.to_string(),
                    label: NONE_LABEL.to_string(),
                }
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntentTemplates {
    pub keywords: Vec<String>,
    pub templates: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateSet {
    pub intents: BTreeMap<String, IntentTemplates>,
    /// Phrases per slot label.
    pub lexicon: BTreeMap<String, Vec<String>>,
    /// Intent-neutral templates without keywords.
    #[serde(default)]
    pub ambiguous: Vec<String>,
    /// `None`-labelled phrases used to pad utterances.
    #[serde(default)]
    pub fillers: Vec<String>,
}

/// Words and labels of one expanded template.
pub type Expansion = (Vec<String>, Vec<String>);

fn phrase(words: &str, label: &str, toks: &mut Vec<String>, labels: &mut Vec<String>) {
    for w in words.split_whitespace() {
        toks.push(w.to_string());
        labels.push(label.to_string());
    }
}

impl TemplateSet {
    /// Checks every placeholder and label against `inv`, and that each of
    /// `intents` has keywords and templates.
    pub fn validate<'a>(&self, inv: &SlotInventory, intents: impl IntoIterator<Item = &'a str>) -> Result<()> {
        for intent in intents {
            let t = self
                .intents
                .get(intent)
                .ok_or_else(|| CorpusError::MissingTemplates(intent.to_string()))?;
            if t.templates.is_empty() || t.keywords.is_empty() {
                return Err(CorpusError::MissingTemplates(intent.to_string()));
            }
        }
        for (label, phrases) in &self.lexicon {
            if !inv.contains(label) {
                return Err(CorpusError::InvalidSpec(format!(
                    "lexicon label {label:?} not in slot inventory"
                )));
            }
            if phrases.iter().all(|p| p.trim().is_empty()) {
                return Err(CorpusError::InvalidSpec(format!("lexicon for {label:?} is empty")));
            }
        }
        let all = self
            .intents
            .values()
            .flat_map(|t| t.templates.iter().map(|s| (s, true)))
            .chain(self.ambiguous.iter().map(|s| (s, false)));
        for (t, keyword_ok) in all {
            let pieces = parse_template(t);
            if pieces.is_empty() {
                return Err(CorpusError::InvalidSpec("empty template".into()));
            }
            for p in pieces {
                match p {
                    Piece::Keyword if !keyword_ok => {
                        return Err(CorpusError::InvalidSpec(format!(
                            "ambiguous template {t:?} uses {{Keyword}}"
                        )));
                    }
                    Piece::Keyword => {}
                    Piece::Slot(l) if !self.lexicon.contains_key(&l) => {
                        return Err(CorpusError::InvalidSpec(format!(
                            "template {t:?} uses unknown slot {l:?}"
                        )));
                    }
                    Piece::Slot(_) => {}
                    Piece::Literal { label, .. } if !inv.contains(&label) => {
                        return Err(CorpusError::InvalidSpec(format!(
                            "template {t:?} uses unknown label {label:?}"
                        )));
                    }
                    Piece::Literal { .. } => {}
                }
            }
        }
        Ok(())
    }

    /// Expands `template` for `intent` with random lexicon choices.
    pub fn expand<R: Rng>(&self, intent: &str, template: &str, rng: &mut R) -> Expansion {
        let mut toks = Vec::new();
        let mut labels = Vec::new();
        for p in parse_template(template) {
            match p {
                Piece::Keyword => {
                    let kw = self.intents[intent].keywords.choose(rng).expect("validated keywords");
                    phrase(kw, KEYWORD_LABEL, &mut toks, &mut labels);
                }
                Piece::Slot(l) => {
                    let ph = self.lexicon[&l].choose(rng).expect("validated lexicon");
                    phrase(ph, &l, &mut toks, &mut labels);
                }
                Piece::Literal { word, label } => {
                    toks.push(word);
                    labels.push(label);
                }
            }
        }
        (toks, labels)
    }
}

fn strs(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

impl Default for TemplateSet {
    fn default() -> Self {
        let mut intents = BTreeMap::new();
        let mut add = |name: &str, keywords: &[&str], templates: &[&str]| {
            intents.insert(
                name.to_string(),
                IntentTemplates {
                    keywords: strs(keywords),
                    templates: strs(templates),
                },
            );
        };
        add(
            "SetDestination",
            &["take me to", "drive to", "go to", "head to", "bring me to"],
            &[
                "{Keyword} {Location}",
                "can you {Keyword} {Location} {TimeGuidance}",
                "{Keyword} {Location} with {Person}",
                "{Person} wants you to {Keyword} {Location}",
                "{Keyword} {Location} {PositionDirection}",
            ],
        );
        add(
            "SetRoute",
            &[
                "turn",
                "take the route",
                "go through",
                "change the route",
                "take a shortcut",
            ],
            &[
                "{Keyword} {PositionDirection}",
                "{Keyword} {PositionDirection} at {Location}",
                "can you {Keyword} {PositionDirection} {TimeGuidance}",
                "{Keyword} {GestureGaze} {PositionDirection}",
                "{Keyword} past {Location} {PositionDirection}",
            ],
        );
        add(
            "Park",
            &["park", "find a parking spot", "park the car", "find a spot"],
            &[
                "{Keyword} {PositionDirection}",
                "{Keyword} at {Location}",
                "can you {Keyword} {GestureGaze} {TimeGuidance}",
                "{Keyword} near {Location} for {Person}",
            ],
        );
        add(
            "PullOver",
            &["pull over", "pull up", "pull aside"],
            &[
                "{Keyword} {TimeGuidance}",
                "{Keyword} {PositionDirection} {TimeGuidance}",
                "{Keyword} at {Location}",
                "{Keyword} {GestureGaze} for {Person}",
            ],
        );
        add(
            "Stop",
            &["stop", "halt", "stop the car", "brake"],
            &[
                "{Keyword} {TimeGuidance}",
                "{Keyword} {GestureGaze}",
                "{Keyword} before {Location}",
                "you need to {Keyword} {TimeGuidance}",
            ],
        );
        add(
            "GoFaster",
            &["speed up", "go faster", "hurry up", "accelerate"],
            &[
                "{Keyword} {TimeGuidance}",
                "can you {Keyword} a bit",
                "{Keyword} we are late for {Location}",
                "{Keyword} {Person} is waiting",
            ],
        );
        add(
            "GoSlower",
            &["slow down", "go slower", "decelerate", "ease off"],
            &[
                "{Keyword} {TimeGuidance}",
                "{Keyword} near {Location}",
                "{Keyword} a little for {Person}",
                "can you {Keyword} {PositionDirection}",
            ],
        );
        add(
            "OpenDoor",
            &["open", "unlock", "pop open"],
            &[
                "{Keyword} {Object}",
                "{Keyword} {Object} for {Person}",
                "can you {Keyword} {Object} {PositionDirection}",
                "{Keyword} {Object} {TimeGuidance}",
            ],
        );
        add(
            "Other",
            &["turn on", "play", "turn off", "switch on", "lower"],
            &[
                "{Keyword} {Object}",
                "{Keyword} {Object} {TimeGuidance}",
                "{Keyword} {Object} for {Person}",
                "could you {Keyword} {Object}",
            ],
        );

        let mut lexicon = BTreeMap::new();
        let mut lex = |label: &str, phrases: &[&str]| {
            lexicon.insert(label.to_string(), strs(phrases));
        };
        lex(
            "Location",
            &[
                "the airport",
                "home",
                "the office",
                "the mall",
                "downtown",
                "the train station",
                "the hotel",
                "the gas station",
                "the hospital",
                "the corner",
                "the parking lot",
                "main street",
                "the bank",
                "the school",
                "the coffee shop",
            ],
        );
        lex(
            "PositionDirection",
            &[
                "left",
                "right",
                "straight ahead",
                "on the left",
                "on the right",
                "behind",
                "in front",
                "ahead",
                "next to it",
            ],
        );
        lex(
            "Person",
            &["me", "my wife", "my friend", "us", "the kids", "him", "her", "my boss"],
        );
        lex(
            "TimeGuidance",
            &[
                "now",
                "right now",
                "immediately",
                "soon",
                "in five minutes",
                "quickly",
                "asap",
            ],
        );
        lex(
            "GestureGaze",
            &["this", "that", "there", "that one", "this way", "over here"],
        );
        lex(
            "Object",
            &[
                "the door",
                "the music",
                "the window",
                "the radio",
                "the air conditioning",
                "the trunk",
                "my bag",
            ],
        );

        TemplateSet {
            intents,
            lexicon,
            ambiguous: strs(&[
                "{Location} {TimeGuidance}",
                "um {GestureGaze} {PositionDirection}",
                "what about {Location}",
                "{PositionDirection} {GestureGaze} please",
                "okay {Person} {TimeGuidance}",
                "hmm {Object} {PositionDirection}",
                "you know {Location} with {Person}",
                "{GestureGaze} {TimeGuidance} i guess",
            ]),
            fillers: strs(&[
                "please",
                "okay",
                "hey amie",
                "um",
                "so",
                "could you",
                "hey",
                "alright",
                "thanks",
                "i think",
                "you know",
                "well",
                "for me",
                "if you can",
            ]),
        }
    }
}
