//! Fixed toy vocabulary shared by the episode generator and the planted model.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::TokenId;

/// Reserved id of the "Yes" token.
pub const YES: TokenId = 0;
/// Reserved id of the "No" token.
pub const NO: TokenId = 1;

const TEXT_WORDS: &[&str] = &[
    "Which", "object", "did", "the", "person", "in", "video", "?", "The", "is", "Is", "there", "a",
    "an", "this",
];

const VERBS: &[&str] = &[
    "touch", "hold", "take", "put", "throw", "open", "close", "tidy",
];

const OBJECT_LABELS: &[&str] = &[
    "towel", "cup", "book", "bag", "box", "laptop", "phone", "pillow", "shoe", "blanket", "dish",
    "sandwich",
];

const ACTIONS: &[&str] = &["sitting", "standing", "walking", "lying"];

/// Token used as the direction of planted register outliers.
pub const REGISTER_WORD: &str = "<reg>";

/// Whitespace tokenizer over a closed word list. Ids past the named words are
/// filler tokens `<tN>`.
#[derive(Debug, Clone)]
pub struct Vocab {
    words: Vec<String>,
    index: BTreeMap<String, TokenId>,
    labels: Vec<TokenId>,
    verbs: Vec<TokenId>,
    actions: Vec<TokenId>,
}

impl Vocab {
    /// Number of named words; `vocab_size` must be at least this.
    pub fn named_len() -> usize {
        2 + TEXT_WORDS.len() + VERBS.len() + OBJECT_LABELS.len() + ACTIONS.len() + 1
    }

    pub fn toy(vocab_size: usize) -> Result<Self> {
        if vocab_size < Self::named_len() {
            return Err(Error::config(
                "model.vocab_size",
                format!(
                    "toy vocabulary needs at least {} tokens, got {vocab_size}",
                    Self::named_len()
                ),
            ));
        }
        let mut words: Vec<String> = vec!["Yes".into(), "No".into()];
        words.extend(TEXT_WORDS.iter().map(|s| s.to_string()));
        let verb_start = words.len();
        words.extend(VERBS.iter().map(|s| s.to_string()));
        let label_start = words.len();
        words.extend(OBJECT_LABELS.iter().map(|s| s.to_string()));
        let action_start = words.len();
        words.extend(ACTIONS.iter().map(|s| s.to_string()));
        words.push(REGISTER_WORD.to_string());
        for i in words.len()..vocab_size {
            words.push(format!("<t{i}>"));
        }
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as TokenId))
            .collect();
        let ids = |start: usize, n: usize| (start..start + n).map(|i| i as TokenId).collect();
        Ok(Self {
            index,
            labels: ids(label_start, OBJECT_LABELS.len()),
            verbs: ids(verb_start, VERBS.len()),
            actions: ids(action_start, ACTIONS.len()),
            words,
        })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> Result<TokenId> {
        self.index
            .get(word)
            .copied()
            .ok_or_else(|| Error::Input(format!("unknown word `{word}`")))
    }

    pub fn word(&self, id: TokenId) -> &str {
        self.words
            .get(id as usize)
            .map(String::as_str)
            .unwrap_or("<oov>")
    }

    pub fn encode(&self, text: &str) -> Result<Vec<TokenId>> {
        text.split_whitespace().map(|w| self.id(w)).collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .map(|&i| self.word(i))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Object label token ids.
    pub fn labels(&self) -> &[TokenId] {
        &self.labels
    }

    pub fn verbs(&self) -> &[TokenId] {
        &self.verbs
    }

    pub fn actions(&self) -> &[TokenId] {
        &self.actions
    }

    pub fn register_token(&self) -> TokenId {
        self.index[REGISTER_WORD]
    }

    pub fn is_label(&self, id: TokenId) -> bool {
        self.labels.contains(&id)
    }
}
