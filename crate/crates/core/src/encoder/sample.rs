use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    User,
    Agent,
}

impl Speaker {
    /// Token prepended to every turn of this speaker.
    pub fn tag(self) -> &'static str {
        match self {
            Speaker::User => "user:",
            Speaker::Agent => "agent:",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub text: String,
}

impl Turn {
    pub fn user(text: impl Into<String>) -> Self {
        Turn {
            speaker: Speaker::User,
            text: text.into(),
        }
    }

    pub fn agent(text: impl Into<String>) -> Self {
        Turn {
            speaker: Speaker::Agent,
            text: text.into(),
        }
    }
}

/// One input `⟨h, u⟩`: the prior turns, oldest first, and the current user
/// utterance. `label` is a 0-based class index where `k` (the number of IND
/// intents) denotes OOD; `None` marks an unlabeled sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueSample {
    pub id: String,
    pub history: Vec<Turn>,
    pub utterance: String,
    pub label: Option<usize>,
}

impl DialogueSample {
    pub fn new(id: impl Into<String>, history: Vec<Turn>, utterance: impl Into<String>, label: Option<usize>) -> Self {
        DialogueSample {
            id: id.into(),
            history,
            utterance: utterance.into(),
            label,
        }
    }

    /// Copy with the label removed.
    pub fn unlabeled(&self) -> Self {
        DialogueSample {
            label: None,
            ..self.clone()
        }
    }

    /// Keeps only the most recent `max_turns` history turns.
    pub fn truncated(&self, max_turns: usize) -> Self {
        let skip = self.history.len().saturating_sub(max_turns);
        DialogueSample {
            history: self.history[skip..].to_vec(),
            ..self.clone()
        }
    }
}

/// Lowercased words, splitting on whitespace and punctuation.
pub fn normalize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}
