//! Caption templates, the text-side temporal operators and tokenization.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Category names in the spirit of a 50-class environmental sound corpus.
/// Multi-word names are joined with underscores so each class is one token.
const BASE_CLASS_NAMES: [&str; 50] = [
    "dog",
    "rooster",
    "pig",
    "cow",
    "frog",
    "cat",
    "hen",
    "insects",
    "sheep",
    "crow",
    "rain",
    "sea_waves",
    "crackling_fire",
    "crickets",
    "chirping_birds",
    "water_drops",
    "wind",
    "pouring_water",
    "toilet_flush",
    "thunderstorm",
    "crying_baby",
    "sneezing",
    "clapping",
    "breathing",
    "coughing",
    "footsteps",
    "laughing",
    "brushing_teeth",
    "snoring",
    "drinking_sipping",
    "mouse_click",
    "keyboard_typing",
    "door_wood_knock",
    "can_opening",
    "washing_machine",
    "vacuum_cleaner",
    "clock_alarm",
    "clock_tick",
    "glass_breaking",
    "helicopter",
    "chainsaw",
    "siren",
    "car_horn",
    "engine",
    "train",
    "church_bells",
    "airplane",
    "fireworks",
    "hand_saw",
    "door_wood_creaks",
];

pub const TASK1_PROMPT: &str = "the sound of a {class}";
pub const TASK1_PROMPT_ALT: &str = "this is a sound of {class}";
pub const FIRST_SOUND_PROMPT: &str = "in this concatenated sound, the first sound is {class}";
pub const SECOND_SOUND_PROMPT: &str = "in this concatenated sound, the second sound is {class}";
pub const SIMULTANEOUS_PROMPT: &str = "simultaneous sound of {class1} and {class2}";

/// Every fixed word that can appear in a training caption or evaluation prompt.
const TEMPLATE_WORDS: &[&str] = &[
    "single",
    "sound",
    "of",
    "combined",
    "and",
    "before",
    "after",
    "while",
    "the",
    "a",
    "this",
    "is",
    "in",
    "concatenated",
    "first",
    "second",
    "simultaneous",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassNames {
    names: Vec<String>,
}

impl ClassNames {
    /// The first `k` default names; classes beyond the built-in list are
    /// named `class_<index>`.
    pub fn default_for(k: usize) -> Self {
        let names = (0..k)
            .map(|i| {
                BASE_CLASS_NAMES
                    .get(i)
                    .map(|s| (*s).to_string())
                    .unwrap_or_else(|| format!("class_{i}"))
            })
            .collect();
        Self { names }
    }

    pub fn new(names: Vec<String>) -> Result<Self> {
        for (i, n) in names.iter().enumerate() {
            if n.is_empty() || n.split_whitespace().count() != 1 || n.to_lowercase() != *n {
                return Err(Error::InvalidArgument(format!(
                    "class name {n:?} must be a single lowercase token"
                )));
            }
            if names[..i].contains(n) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate class name {n:?}"
                )));
            }
        }
        Ok(Self { names })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, class: usize) -> Result<&str> {
        self.names
            .get(class)
            .map(String::as_str)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown class {class}")))
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaptionRelation {
    Single,
    Dual,
    Before,
    After,
    While,
    Prompt,
}

impl CaptionRelation {
    pub fn keyword(self) -> Option<&'static str> {
        match self {
            CaptionRelation::Before => Some("before"),
            CaptionRelation::After => Some("after"),
            CaptionRelation::While => Some("while"),
            _ => None,
        }
    }

    pub fn from_keyword(kw: &str) -> Result<Self> {
        match kw {
            "before" => Ok(CaptionRelation::Before),
            "after" => Ok(CaptionRelation::After),
            "while" => Ok(CaptionRelation::While),
            other => Err(Error::InvalidArgument(format!(
                "temporal relation must be before/after/while, got {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Caption {
    pub text: String,
    pub relation: CaptionRelation,
    pub class_ids: Vec<usize>,
}

fn distinct(i: usize, j: usize) -> Result<()> {
    if i == j {
        return Err(Error::InvalidArgument(format!(
            "composite caption needs two distinct classes, got {i} twice"
        )));
    }
    Ok(())
}

pub fn single_caption(classes: &ClassNames, class: usize) -> Result<Caption> {
    Ok(Caption {
        text: format!("single sound of {}", classes.name(class)?),
        relation: CaptionRelation::Single,
        class_ids: vec![class],
    })
}

pub fn dual_caption(classes: &ClassNames, i: usize, j: usize) -> Result<Caption> {
    distinct(i, j)?;
    Ok(Caption {
        text: format!(
            "combined sound of {} and {}",
            classes.name(i)?,
            classes.name(j)?
        ),
        relation: CaptionRelation::Dual,
        class_ids: vec![i, j],
    })
}

/// `"{i} before {j}"`, `"{i} after {j}"` or `"{i} while {j}"`.
pub fn temporal_caption(
    classes: &ClassNames,
    i: usize,
    j: usize,
    relation: CaptionRelation,
) -> Result<Caption> {
    distinct(i, j)?;
    let kw = relation.keyword().ok_or_else(|| {
        Error::InvalidArgument(format!("{relation:?} is not a temporal relation"))
    })?;
    Ok(Caption {
        text: format!("{} {kw} {}", classes.name(i)?, classes.name(j)?),
        relation,
        class_ids: vec![i, j],
    })
}

/// Text-side temporal inversion: the two classes trade places, the relation
/// keyword stays. Defined for `before`/`after` captions only.
pub fn invert_caption(cap: &Caption) -> Result<Caption> {
    if !matches!(
        cap.relation,
        CaptionRelation::Before | CaptionRelation::After
    ) {
        return Err(Error::InvalidArgument(format!(
            "cannot invert a {:?} caption",
            cap.relation
        )));
    }
    let words: Vec<&str> = cap.text.split_whitespace().collect();
    if words.len() != 3 || cap.class_ids.len() != 2 {
        return Err(Error::InvalidArgument(format!(
            "malformed temporal caption {:?}",
            cap.text
        )));
    }
    Ok(Caption {
        text: format!("{} {} {}", words[2], words[1], words[0]),
        relation: cap.relation,
        class_ids: vec![cap.class_ids[1], cap.class_ids[0]],
    })
}

pub fn fill_class(template: &str, classes: &ClassNames, class: usize) -> Result<String> {
    Ok(template.replace("{class}", classes.name(class)?))
}

pub fn fill_pair(template: &str, classes: &ClassNames, i: usize, j: usize) -> Result<String> {
    Ok(template
        .replace("{class1}", classes.name(i)?)
        .replace("{class2}", classes.name(j)?))
}

/// Recover relation and class ids from a training caption's text.
pub fn parse_caption(text: &str, classes: &ClassNames) -> Option<Caption> {
    let words: Vec<&str> = text.split_whitespace().collect();
    let class = |w: &str| classes.index_of(w);
    let (relation, class_ids) = match words.as_slice() {
        ["single", "sound", "of", c] => (CaptionRelation::Single, vec![class(c)?]),
        ["combined", "sound", "of", a, "and", b] => {
            (CaptionRelation::Dual, vec![class(a)?, class(b)?])
        }
        [a, kw, b] => (
            CaptionRelation::from_keyword(kw).ok()?,
            vec![class(a)?, class(b)?],
        ),
        _ => return None,
    };
    Some(Caption {
        text: text.to_string(),
        relation,
        class_ids,
    })
}

pub const UNKNOWN_TOKEN: &str = "<unk>";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl Vocabulary {
    /// Id 0 is the unknown token, then template words, then class names.
    pub fn build(classes: &ClassNames) -> Self {
        let mut tokens = vec![UNKNOWN_TOKEN.to_string()];
        for w in TEMPLATE_WORDS
            .iter()
            .map(|s| (*s).to_string())
            .chain(classes.names().iter().cloned())
        {
            if !tokens.contains(&w) {
                tokens.push(w);
            }
        }
        Self::from_tokens(tokens)
    }

    fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn unknown_id(&self) -> usize {
        0
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(0)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// JSON object mapping token to id.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.index)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let map: BTreeMap<String, usize> = serde_json::from_str(json)?;
        let mut tokens = vec![String::new(); map.len()];
        for (tok, id) in map {
            let slot = tokens
                .get_mut(id)
                .ok_or_else(|| Error::Config(format!("vocabulary id {id} outside dense range")))?;
            *slot = tok;
        }
        if tokens.iter().any(String::is_empty) || tokens[0] != UNKNOWN_TOKEN {
            return Err(Error::Config(
                "vocabulary ids must be dense with <unk> = 0".into(),
            ));
        }
        Ok(Self::from_tokens(tokens))
    }
}

impl From<Vec<String>> for Vocabulary {
    fn from(tokens: Vec<String>) -> Self {
        Self::from_tokens(tokens)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

/// Lowercase, drop punctuation other than `_`, split on whitespace, map to ids.
pub fn tokenize(text: &str, vocab: &Vocabulary) -> Vec<usize> {
    text.to_lowercase()
        .chars()
        .map(|c| {
            if c.is_ascii_punctuation() && c != '_' {
                ' '
            } else {
                c
            }
        })
        .collect::<String>()
        .split_whitespace()
        .map(|w| vocab.id(w))
        .collect()
}
