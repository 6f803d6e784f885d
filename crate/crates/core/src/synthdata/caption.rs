use crate::error::{Error, Result};

use super::{Color, Position, SceneSpec, Shape, Size};

pub const PAD: usize = 0;
pub const NUM_TEMPLATES: usize = 3;
/// Token sequence length for every caption.
pub const CAPTION_LEN: usize = 8;

/// Caption templates; `{size}`, `{color}`, `{shape}`, `{position}` are
/// substituted with the spec's words.
pub const TEMPLATES: [&str; NUM_TEMPLATES] = [
    "a {size} {color} {shape} in the {position}",
    "a {color} {size} {shape} in the {position}",
    "in the {position} a {size} {color} {shape}",
];

/// Fixed-length token sequence, right-padded with [`PAD`].
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CaptionTokens {
    pub ids: Vec<usize>,
}

impl CaptionTokens {
    /// Number of non-pad tokens.
    pub fn len_unpadded(&self) -> usize {
        self.ids.iter().filter(|&&t| t != PAD).count()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    words: Vec<String>,
    max_len: usize,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocab {
    /// Closed vocabulary: `<pad>` followed by every template and attribute
    /// word in sorted order.
    pub fn new() -> Self {
        let mut words: Vec<String> = Vec::new();
        for t in TEMPLATES {
            for w in t.split_whitespace() {
                if !w.starts_with('{') {
                    words.push(w.to_string());
                }
            }
        }
        words.extend(Shape::ALL.iter().map(|s| s.word().to_string()));
        words.extend(Color::ALL.iter().map(|s| s.word().to_string()));
        words.extend(Size::ALL.iter().map(|s| s.word().to_string()));
        words.extend(Position::ALL.iter().map(|s| s.word().to_string()));
        words.sort();
        words.dedup();
        words.insert(0, "<pad>".to_string());
        Self {
            words,
            max_len: CAPTION_LEN,
        }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Token sequence length used for every caption.
    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.words
            .iter()
            .position(|w| w == word)
            .filter(|&i| i != PAD)
    }

    /// Tokenises free text. Words are lower-cased and split on whitespace.
    pub fn encode(&self, text: &str) -> Result<CaptionTokens> {
        let mut ids = Vec::with_capacity(self.max_len);
        for raw in text.split_whitespace() {
            let w = raw.to_lowercase();
            let id = self.id(&w).ok_or_else(|| Error::Vocab(w.clone()))?;
            ids.push(id);
        }
        if ids.is_empty() {
            return Err(Error::EmptyText);
        }
        if ids.len() > self.max_len {
            return Err(Error::Config(format!(
                "text has {} words, at most {} are supported",
                ids.len(),
                self.max_len
            )));
        }
        ids.resize(self.max_len, PAD);
        Ok(CaptionTokens { ids })
    }

    pub fn decode(&self, tokens: &CaptionTokens) -> String {
        tokens
            .ids
            .iter()
            .filter(|&&t| t != PAD)
            .filter_map(|&t| self.word(t))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

fn fill_template(spec: &SceneSpec, template: usize) -> String {
    TEMPLATES[template]
        .replace("{size}", spec.size.word())
        .replace("{color}", spec.color.word())
        .replace("{shape}", spec.shape.word())
        .replace("{position}", spec.position.word())
}

/// Caption text for `spec` under template `template`.
pub fn caption(spec: &SceneSpec, template: usize) -> Result<String> {
    if template >= NUM_TEMPLATES {
        return Err(Error::Index(format!(
            "template {template} of {NUM_TEMPLATES}"
        )));
    }
    Ok(fill_template(spec, template))
}
