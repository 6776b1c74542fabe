//! Instruction to grounded sub-action sequence.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{forward, ModelError, SequenceModel};
use crate::corpus::{decode_actions, ActionKind, SubAction, TaskKind, TemplateConfig, Vocab};
use crate::embed::{normalize_tokens, tile_embedding, EmbedError, EmbeddingProvider};

/// Words that name objects and destinations, with the scene label each maps to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lexicon {
    pub objects: Vec<String>,
    /// `(phrase, label)` pairs.
    pub destinations: Vec<(String, String)>,
}

impl Default for Lexicon {
    fn default() -> Self {
        Lexicon::from_templates(&TemplateConfig::default())
    }
}

/// Lexicon words that are also common function words; they only count as
/// mentions after a determiner.
const AMBIGUOUS: &[&str] = &["can", "stand", "stick"];
const DETERMINERS: &[&str] = &["the", "a", "an", "that", "this", "some", "my", "your"];

#[derive(Debug, Clone, PartialEq)]
struct Mention {
    label: String,
    object: bool,
    destination: bool,
}

impl Lexicon {
    pub fn from_templates(cfg: &TemplateConfig) -> Self {
        Lexicon { objects: cfg.object_lexicon(), destinations: cfg.destination_lexicon() }
    }

    /// Phrase entries as token lists, longest first.
    fn entries(&self) -> Vec<(Vec<String>, Mention)> {
        let mut out: Vec<(Vec<String>, Mention)> = Vec::new();
        for o in &self.objects {
            let dest = self.destinations.iter().find(|(p, _)| p == o);
            out.push((
                normalize_tokens(o),
                Mention { label: o.clone(), object: true, destination: dest.is_some() },
            ));
        }
        for (phrase, label) in &self.destinations {
            if self.objects.contains(phrase) {
                continue;
            }
            out.push((
                normalize_tokens(phrase),
                Mention { label: label.clone(), object: false, destination: true },
            ));
        }
        out.retain(|(t, _)| !t.is_empty());
        out.sort_by(|a, b| b.0.len().cmp(&a.0.len()));
        out
    }

    fn mentions(&self, tokens: &[String]) -> Vec<Mention> {
        let entries = self.entries();
        let mut out = Vec::new();
        let mut i = 0;
        while i < tokens.len() {
            let hit = entries.iter().find(|(phrase, _)| {
                tokens[i..].starts_with(phrase)
                    && !(phrase.len() == 1
                        && AMBIGUOUS.contains(&phrase[0].as_str())
                        && !(i > 0 && DETERMINERS.contains(&tokens[i - 1].as_str())))
            });
            match hit {
                Some((phrase, m)) => {
                    out.push(m.clone());
                    i += phrase.len();
                }
                None => i += 1,
            }
        }
        out
    }
}

/// Splits an instruction into clause texts in execution order. Phrasings such
/// as "X after you Y" and "before you X, Y" run their clauses in reverse.
fn clauses_in_order(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    if let Some(pos) = lower.find(" after you ") {
        return vec![lower[pos + 11..].to_string(), lower[..pos].to_string()];
    }
    if let Some(rest) = lower.trim_start().strip_prefix("before you ") {
        if let Some(comma) = rest.find(',') {
            return vec![rest[comma + 1..].to_string(), rest[..comma].to_string()];
        }
    }
    vec![lower]
}

/// Object and destination for one clause, or `None` where nothing fits.
fn assign(window: &[Mention], need_obj: bool, need_dest: bool) -> (Option<String>, Option<String>) {
    let mut used = vec![false; window.len()];
    let pick = |pred: &dyn Fn(&Mention) -> bool, used: &mut Vec<bool>| -> Option<String> {
        let i = (0..window.len()).find(|&i| !used[i] && pred(&window[i]))?;
        used[i] = true;
        Some(window[i].label.clone())
    };
    let mut obj = None;
    let mut dest = None;
    if need_dest {
        dest = pick(&|m| m.destination && !m.object, &mut used);
    }
    if need_obj {
        obj = pick(&|m| m.object && !m.destination, &mut used).or_else(|| pick(&|m| m.object, &mut used));
    }
    if need_dest && dest.is_none() {
        dest = pick(&|m| m.destination, &mut used);
    }
    (obj, dest)
}

/// Grounds a bare kind sequence against the instruction text.
///
/// Clauses start at every `reach` after the first step. Mentions are read in
/// execution order and consumed clause by clause.
pub fn ground(kinds: &[ActionKind], instruction: &str, lexicon: &Lexicon) -> Vec<SubAction> {
    let mut mentions = Vec::new();
    for clause in clauses_in_order(instruction) {
        mentions.extend(lexicon.mentions(&normalize_tokens(&clause)));
    }
    let mut clauses: Vec<&[ActionKind]> = Vec::new();
    let mut start = 0;
    for i in 1..=kinds.len() {
        if i == kinds.len() || kinds[i] == ActionKind::Reach {
            if i > start {
                clauses.push(&kinds[start..i]);
            }
            start = i;
        }
    }
    let n_clauses = clauses.len();
    let mut out = Vec::with_capacity(kinds.len());
    let mut cursor = 0;
    for (ci, clause) in clauses.iter().enumerate() {
        let need_obj = clause.iter().any(|k| k.takes_object());
        let need_dest = clause.iter().any(|k| k.takes_destination());
        let want = usize::from(need_obj) + usize::from(need_dest);
        // The last clause sees every remaining mention.
        let end = if ci + 1 == n_clauses { mentions.len() } else { (cursor + want).min(mentions.len()) };
        let window = &mentions[cursor.min(mentions.len())..end];
        let (obj, dest) = assign(window, need_obj, need_dest);
        cursor = end;
        out.extend(clause.iter().map(|&kind| SubAction {
            kind,
            object: if kind.takes_object() { obj.clone() } else { None },
            destination: if kind.takes_destination() { dest.clone() } else { None },
        }));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub instruction: String,
    pub actions: Vec<SubAction>,
    /// Indices of steps with a missing object or destination.
    pub unresolved: Vec<usize>,
    /// Task kinds the plan decomposes into, when it matches known patterns.
    pub tasks: Option<Vec<TaskKind>>,
    #[serde(with = "duration_secs")]
    pub latency: Duration,
}

mod duration_secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let v = f64::deserialize(d)?;
        Duration::try_from_secs_f64(v).map_err(serde::de::Error::custom)
    }
}

/// A trained model bundled with everything needed to parse free text.
pub struct Predictor {
    pub model: SequenceModel,
    pub provider: Box<dyn EmbeddingProvider>,
    pub vocab: Vocab,
    pub lexicon: Lexicon,
}

impl Predictor {
    pub fn predict(&self, instruction: &str) -> Result<Prediction, ModelError> {
        let start = Instant::now();
        if normalize_tokens(instruction).is_empty() {
            return Err(ModelError::Embed(EmbedError::EmptyInput));
        }
        let e = self.provider.embed(instruction)?;
        let out = forward(&self.model, &tile_embedding(&e, self.model.dims.seq_len))?;
        let bare = decode_actions(out.probs.view(), &self.vocab, &Default::default())?;
        let kinds: Vec<ActionKind> = bare.iter().map(|a| a.kind).collect();
        let actions = ground(&kinds, instruction, &self.lexicon);
        let unresolved = actions.iter().enumerate().filter(|(_, a)| !a.is_grounded()).map(|(i, _)| i).collect();
        Ok(Prediction {
            instruction: instruction.to_string(),
            tasks: crate::corpus::segment_plan(&kinds),
            actions,
            unresolved,
            latency: start.elapsed(),
        })
    }
}
