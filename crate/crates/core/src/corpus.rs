//! Instruction corpus: sub-action vocabulary, synthetic instruction generation,
//! template-withholding splits and one-hot sequence encoding.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Padded sequence length used throughout the model.
pub const SEQ_LEN: usize = 12;
/// Number of output classes (eleven sub-actions plus padding).
pub const NUM_CLASSES: usize = 12;

const FORMAT_NAME: &str = "ran-corpus";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("sequence of length {len} exceeds padded length {max}")]
    Length { len: usize, max: usize },
    #[error("sub-action kind `{0}` is not in the vocabulary")]
    Vocabulary(String),
    #[error("row {row} sums to {sum}, expected 1")]
    RowSum { row: usize, sum: f64 },
    #[error("invalid split: {0}")]
    Split(String),
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Sub-action primitive. Declaration order is the class index order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionKind {
    Reach,
    Grasp,
    Lift,
    Move,
    Tilt,
    Give,
    Release,
    Place,
    Wipe,
    Stir,
    Retract,
    Pad,
}

impl ActionKind {
    pub const ALL: [ActionKind; NUM_CLASSES] = [
        ActionKind::Reach,
        ActionKind::Grasp,
        ActionKind::Lift,
        ActionKind::Move,
        ActionKind::Tilt,
        ActionKind::Give,
        ActionKind::Release,
        ActionKind::Place,
        ActionKind::Wipe,
        ActionKind::Stir,
        ActionKind::Retract,
        ActionKind::Pad,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ActionKind::Reach => "reach",
            ActionKind::Grasp => "grasp",
            ActionKind::Lift => "lift",
            ActionKind::Move => "move",
            ActionKind::Tilt => "tilt",
            ActionKind::Give => "give",
            ActionKind::Release => "release",
            ActionKind::Place => "place",
            ActionKind::Wipe => "wipe",
            ActionKind::Stir => "stir",
            ActionKind::Retract => "retract",
            ActionKind::Pad => "pad",
        }
    }

    /// Kinds that carry an object argument.
    pub fn takes_object(self) -> bool {
        !matches!(self, ActionKind::Retract | ActionKind::Pad)
    }

    /// Kinds that carry a destination, container, surface or recipient argument.
    pub fn takes_destination(self) -> bool {
        matches!(
            self,
            ActionKind::Move
                | ActionKind::Tilt
                | ActionKind::Give
                | ActionKind::Place
                | ActionKind::Wipe
                | ActionKind::Stir
        )
    }
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ActionKind {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ActionKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| CorpusError::Vocabulary(s.to_string()))
    }
}

/// One step of a task plan, e.g. `move(bottle, tray)`.
///
/// Argument slots are `None` when the instruction did not name them; such
/// slots are resolved later by querying the user.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SubAction {
    pub kind: ActionKind,
    pub object: Option<String>,
    pub destination: Option<String>,
}

impl SubAction {
    pub fn new(kind: ActionKind, object: Option<&str>, destination: Option<&str>) -> Self {
        SubAction {
            kind,
            object: object.map(str::to_string),
            destination: destination.map(str::to_string),
        }
    }

    pub fn bare(kind: ActionKind) -> Self {
        SubAction { kind, object: None, destination: None }
    }

    pub fn pad() -> Self {
        SubAction::bare(ActionKind::Pad)
    }

    /// True when every slot the kind requires is filled and no extra slot is set.
    pub fn is_grounded(&self) -> bool {
        self.kind.takes_object() == self.object.is_some()
            && self.kind.takes_destination() == self.destination.is_some()
    }
}

impl fmt::Display for SubAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let obj = self.object.as_deref().unwrap_or("{object}");
        let dst = self.destination.as_deref().unwrap_or("{destination}");
        match (self.kind.takes_object(), self.kind.takes_destination()) {
            (false, _) => write!(f, "{}()", self.kind),
            (true, false) => write!(f, "{}({})", self.kind, obj),
            (true, true) => write!(f, "{}({}, {})", self.kind, obj, dst),
        }
    }
}

impl FromStr for SubAction {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || CorpusError::Vocabulary(s.to_string());
        let s = s.trim();
        let open = s.find('(').ok_or_else(bad)?;
        if !s.ends_with(')') {
            return Err(bad());
        }
        let kind: ActionKind = s[..open].trim().parse()?;
        let inner = &s[open + 1..s.len() - 1];
        let slot = |a: &str| {
            let a = a.trim();
            if a.is_empty() || (a.starts_with('{') && a.ends_with('}')) {
                None
            } else {
                Some(a.to_string())
            }
        };
        let mut parts = inner.split(',');
        let object = parts.next().and_then(slot);
        let destination = parts.next().and_then(slot);
        if parts.next().is_some() {
            return Err(bad());
        }
        Ok(SubAction { kind, object, destination })
    }
}

/// Task families, one per plan pattern plus two-clause compositions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    PickPlace,
    PickPour,
    Stir,
    Cleaning,
    PickGive,
    PickUp,
    Compositional,
}

impl TaskKind {
    pub const SINGLE: [TaskKind; 6] = [
        TaskKind::PickPlace,
        TaskKind::PickPour,
        TaskKind::Stir,
        TaskKind::Cleaning,
        TaskKind::PickGive,
        TaskKind::PickUp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::PickPlace => "pick_place",
            TaskKind::PickPour => "pick_pour",
            TaskKind::Stir => "stir",
            TaskKind::Cleaning => "cleaning",
            TaskKind::PickGive => "pick_give",
            TaskKind::PickUp => "pick_up",
            TaskKind::Compositional => "compositional",
        }
    }

    /// Sub-action kinds of a single-clause task, in execution order.
    /// Empty for [`TaskKind::Compositional`].
    pub fn pattern(self) -> &'static [ActionKind] {
        use ActionKind::*;
        match self {
            TaskKind::PickPlace => &[Reach, Grasp, Lift, Move, Place, Release],
            TaskKind::PickPour => &[Reach, Grasp, Lift, Move, Tilt, Release, Retract],
            TaskKind::Stir => &[Reach, Grasp, Lift, Move, Stir, Release, Retract],
            TaskKind::Cleaning => &[Reach, Grasp, Wipe, Release, Retract],
            TaskKind::PickGive => &[Reach, Grasp, Lift, Move, Give, Release, Retract],
            TaskKind::PickUp => &[Reach, Grasp, Lift],
            TaskKind::Compositional => &[],
        }
    }

    /// Builds the grounded plan for a single-clause task.
    pub fn plan(self, object: &str, destination: &str) -> Vec<SubAction> {
        self.pattern()
            .iter()
            .map(|&k| {
                SubAction::new(
                    k,
                    k.takes_object().then_some(object),
                    k.takes_destination().then_some(destination),
                )
            })
            .collect()
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskKind {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TaskKind::SINGLE
            .iter()
            .copied()
            .chain(std::iter::once(TaskKind::Compositional))
            .find(|k| k.name() == s)
            .ok_or_else(|| CorpusError::Config(format!("unknown task kind `{s}`")))
    }
}

/// Splits a kind sequence into consecutive single-task clauses.
///
/// Returns `None` when the sequence is not a concatenation of known patterns.
pub fn segment_plan(kinds: &[ActionKind]) -> Option<Vec<TaskKind>> {
    if kinds.is_empty() {
        return None;
    }
    // Longest pattern first so that pick-up never shadows a longer task.
    let mut by_len: Vec<TaskKind> = TaskKind::SINGLE.to_vec();
    by_len.sort_by_key(|k| std::cmp::Reverse(k.pattern().len()));
    let mut out = Vec::new();
    let mut rest = kinds;
    while !rest.is_empty() {
        let found = by_len.iter().copied().find(|task| {
            let p = task.pattern();
            rest.len() >= p.len() && &rest[..p.len()] == p && {
                let tail = &rest[p.len()..];
                tail.is_empty() || segment_plan(tail).is_some()
            }
        })?;
        out.push(found);
        rest = &rest[found.pattern().len()..];
    }
    Some(out)
}

/// Ordered class vocabulary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    kinds: Vec<ActionKind>,
}

impl Default for Vocab {
    fn default() -> Self {
        Vocab { kinds: ActionKind::ALL.to_vec() }
    }
}

impl Vocab {
    pub fn new(kinds: Vec<ActionKind>) -> Result<Self, CorpusError> {
        let distinct: BTreeSet<_> = kinds.iter().collect();
        if distinct.len() != kinds.len() {
            return Err(CorpusError::Config("duplicate vocabulary entry".into()));
        }
        if !kinds.contains(&ActionKind::Pad) {
            return Err(CorpusError::Config("vocabulary must contain pad".into()));
        }
        Ok(Vocab { kinds })
    }

    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }

    pub fn kinds(&self) -> &[ActionKind] {
        &self.kinds
    }

    pub fn index_of(&self, kind: ActionKind) -> Option<usize> {
        self.kinds.iter().position(|&k| k == kind)
    }

    pub fn kind(&self, index: usize) -> ActionKind {
        self.kinds[index]
    }

    pub fn pad_index(&self) -> usize {
        self.index_of(ActionKind::Pad).expect("vocab always contains pad")
    }
}

/// Padded one-hot label matrix, `L × C`.
#[derive(Debug, Clone, PartialEq)]
pub struct OneHotSequence {
    pub matrix: Array2<f64>,
}

impl OneHotSequence {
    pub fn len(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.nrows() == 0
    }

    /// Class index of every row.
    pub fn classes(&self) -> Vec<usize> {
        self.matrix
            .rows()
            .into_iter()
            .map(|r| r.iter().position(|&v| v == 1.0).unwrap_or(0))
            .collect()
    }
}

pub fn encode_actions(
    actions: &[SubAction],
    len: usize,
    vocab: &Vocab,
) -> Result<OneHotSequence, CorpusError> {
    if actions.len() > len {
        return Err(CorpusError::Length { len: actions.len(), max: len });
    }
    let mut matrix = Array2::zeros((len, vocab.len()));
    let pad = vocab.pad_index();
    for t in 0..len {
        let class = match actions.get(t) {
            Some(a) => vocab
                .index_of(a.kind)
                .ok_or_else(|| CorpusError::Vocabulary(a.kind.to_string()))?,
            None => pad,
        };
        matrix[[t, class]] = 1.0;
    }
    Ok(OneHotSequence { matrix })
}

/// Object and destination mentions extracted from an instruction, in order
/// of first occurrence.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slots {
    pub objects: Vec<String>,
    pub destinations: Vec<String>,
}

/// Per-step argmax decoding. Lowest class index wins ties; decoding stops at
/// the first pad. The k-th clause of the decoded plan takes the k-th object
/// and destination mention (falling back to the last one available).
pub fn decode_actions(
    probs: ArrayView2<'_, f64>,
    vocab: &Vocab,
    slots: &Slots,
) -> Result<Vec<SubAction>, CorpusError> {
    for (row, r) in probs.rows().into_iter().enumerate() {
        let sum: f64 = r.sum();
        if !sum.is_finite() || (sum - 1.0).abs() > 1e-6 {
            return Err(CorpusError::RowSum { row, sum });
        }
    }
    let mut kinds = Vec::new();
    for r in probs.rows() {
        let mut best = 0;
        for (c, &p) in r.iter().enumerate() {
            if p > r[best] {
                best = c;
            }
        }
        let kind = vocab.kind(best);
        if kind == ActionKind::Pad {
            break;
        }
        kinds.push(kind);
    }
    Ok(fill_slots(&kinds, slots))
}

/// Attaches argument slots to a bare kind sequence.
pub fn fill_slots(kinds: &[ActionKind], slots: &Slots) -> Vec<SubAction> {
    let pick = |list: &[String], clause: usize| -> Option<String> {
        list.get(clause).or_else(|| list.last()).cloned()
    };
    let mut clause = 0usize;
    kinds
        .iter()
        .enumerate()
        .map(|(i, &kind)| {
            if i > 0 && kind == ActionKind::Reach {
                clause += 1;
            }
            SubAction {
                kind,
                object: if kind.takes_object() { pick(&slots.objects, clause) } else { None },
                destination: if kind.takes_destination() {
                    pick(&slots.destinations, clause)
                } else {
                    None
                },
            }
        })
        .collect()
}

/// One labeled instruction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionExample {
    pub instruction: String,
    #[serde(with = "action_strings")]
    pub actions: Vec<SubAction>,
    pub task_kind: TaskKind,
    /// Identifier of the phrasing frame; splits withhold whole frames.
    pub template: String,
}

mod action_strings {
    use super::SubAction;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[SubAction], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|a| a.to_string()))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<SubAction>, D::Error> {
        let raw = Vec::<String>::deserialize(d)?;
        raw.iter()
            .map(|s| s.parse().map_err(serde::de::Error::custom))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub examples: Vec<InstructionExample>,
    pub vocab: Vocab,
    pub object_lexicon: Vec<String>,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct CorpusHeader {
    format: String,
    version: u32,
    seed: u64,
    vocab: Vec<ActionKind>,
    object_lexicon: Vec<String>,
    count: usize,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    fn with_examples(&self, examples: Vec<InstructionExample>) -> Corpus {
        Corpus {
            examples,
            vocab: self.vocab.clone(),
            object_lexicon: self.object_lexicon.clone(),
            seed: self.seed,
        }
    }

    /// Line-delimited JSON: a header record followed by one example per line.
    pub fn to_jsonl(&self) -> String {
        let header = CorpusHeader {
            format: FORMAT_NAME.into(),
            version: FORMAT_VERSION,
            seed: self.seed,
            vocab: self.vocab.kinds.clone(),
            object_lexicon: self.object_lexicon.clone(),
            count: self.examples.len(),
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for ex in &self.examples {
            out.push_str(&serde_json::to_string(ex).expect("example serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Corpus, CorpusError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines
            .next()
            .ok_or(CorpusError::Parse { line: 1, msg: "missing header".into() })?;
        let header: CorpusHeader = serde_json::from_str(first)
            .map_err(|e| CorpusError::Parse { line: 1, msg: e.to_string() })?;
        if header.format != FORMAT_NAME || header.version != FORMAT_VERSION {
            return Err(CorpusError::Parse {
                line: 1,
                msg: format!("unsupported format {} v{}", header.format, header.version),
            });
        }
        let vocab = Vocab::new(header.vocab)?;
        let mut examples = Vec::with_capacity(header.count);
        for (i, line) in lines {
            let ex: InstructionExample = serde_json::from_str(line)
                .map_err(|e| CorpusError::Parse { line: i + 1, msg: e.to_string() })?;
            examples.push(ex);
        }
        if examples.len() != header.count {
            return Err(CorpusError::Parse {
                line: 1,
                msg: format!("header declares {} records, found {}", header.count, examples.len()),
            });
        }
        Ok(Corpus { examples, vocab, object_lexicon: header.object_lexicon, seed: header.seed })
    }
}

/// Phrasing templates and lexicons for the synthetic corpus.
///
/// Templates use `{slot}` placeholders (`object`, `pourable`, `container`,
/// `stirrer`, `tool`, `surface`, `location`, `person`) and `[set]`
/// placeholders that draw a word from `synonyms[set]`. Connector templates
/// join two clauses through `{first}` and `{second}`; the plan always
/// executes `{first}` before `{second}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TemplateConfig {
    pub templates: BTreeMap<TaskKind, Vec<String>>,
    pub connectors: Vec<String>,
    pub synonyms: BTreeMap<String, Vec<String>>,
    pub objects: Vec<String>,
    pub pourables: Vec<String>,
    pub containers: Vec<String>,
    pub stirrers: Vec<String>,
    pub tools: Vec<String>,
    pub surfaces: Vec<String>,
    pub locations: Vec<String>,
    /// Phrases that refer to the hand-over recipient (grounded as `person`).
    pub recipients: Vec<String>,
    pub compositional_fraction: f64,
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

impl Default for TemplateConfig {
    fn default() -> Self {
        let mut templates = BTreeMap::new();
        templates.insert(
            TaskKind::PickPlace,
            strings(&[
                "[pick] the {object} and [place] it on the {location}",
                "[place] the {object} on the {location}",
                "could you [pick] the {object} and [place] it onto the {location}",
                "[move] the {object} over to the {location} and set it down",
                "please [place] the {object} on top of the {location}",
                "get the {object} and leave it on the {location}",
                "the {object} should go on the {location}, please [move] it there",
                "[pick] the {object}, then [place] it on the {location}",
                "i want the {object} on the {location}",
            ]),
        );
        templates.insert(
            TaskKind::PickPour,
            strings(&[
                "[pick] the {pourable} and [pour] it into the {container}",
                "[pour] the {pourable} into the {container}",
                "fill the {container} with the {pourable}",
                "could you [pour] some of the {pourable} into the {container}",
                "take the {pourable} and empty it into the {container}",
                "[pour] from the {pourable} into the {container} please",
                "grab the {pourable}, tilt it over the {container} and [pour]",
                "i would like you to [pour] the {pourable} into the {container}",
            ]),
        );
        templates.insert(
            TaskKind::Stir,
            strings(&[
                "[stir] the {container} with the {stirrer}",
                "use the {stirrer} to [stir] the {container}",
                "[pick] the {stirrer} and [stir] the drink in the {container}",
                "could you [stir] the contents of the {container} using the {stirrer}",
                "take the {stirrer} and [stir] what is in the {container}",
                "the {container} needs stirring, use the {stirrer}",
                "please [stir] the {container} with a {stirrer}",
            ]),
        );
        templates.insert(
            TaskKind::Cleaning,
            strings(&[
                "[wipe] the {surface} with the {tool}",
                "use the {tool} to [wipe] the {surface}",
                "the {surface} is dirty, [wipe] it with the {tool}",
                "could you [wipe] down the {surface} with a {tool}",
                "grab the {tool} and [wipe] the {surface}",
                "please tidy the {surface} by wiping it with the {tool}",
                "take the {tool} and [wipe] the {surface} clean",
                "[wipe] the {surface} using the {tool}",
            ]),
        );
        templates.insert(
            TaskKind::PickGive,
            strings(&[
                "[pick] the {object} and [give] it to {person}",
                "[give] the {object} to {person}",
                "could you [give] {person} the {object}",
                "i need the {object}, please [give] it to {person}",
                "bring the {object} over to {person}",
                "take the {object} and [give] it to {person}",
                "can {person} have the {object}",
                "[pick] the {object} and [give] it over to {person}",
            ]),
        );
        templates.insert(
            TaskKind::PickUp,
            strings(&[
                "[pick] the {object}",
                "[pick] the {object} and hold it",
                "lift the {object} off the surface",
                "could you [pick] the {object} please",
                "raise the {object}",
                "grab hold of the {object} and keep it up",
                "[pick] the {object} and hold it up",
            ]),
        );
        let mut synonyms = BTreeMap::new();
        synonyms.insert("pick".to_string(), strings(&["pick up", "grab", "take", "get", "fetch"]));
        synonyms.insert("place".to_string(), strings(&["put", "place", "set", "drop"]));
        synonyms.insert("move".to_string(), strings(&["move", "bring", "carry", "transfer"]));
        synonyms.insert("pour".to_string(), strings(&["pour", "tip"]));
        synonyms.insert("stir".to_string(), strings(&["stir", "mix", "swirl"]));
        synonyms.insert("wipe".to_string(), strings(&["wipe", "clean", "scrub"]));
        synonyms.insert("give".to_string(), strings(&["give", "hand", "pass"]));
        TemplateConfig {
            templates,
            connectors: strings(&[
                "{first} and then {second}",
                "first {first}, then {second}",
                "{first}. after that, {second}",
                "{first}, and once done {second}",
                "{second} after you {first}",
                "before you {second}, {first}",
            ]),
            synonyms,
            objects: strings(&[
                "bottle", "can", "apple", "box", "banana", "mug", "cup", "jar", "glass", "book",
                "marker", "orange",
            ]),
            pourables: strings(&["bottle", "pitcher", "jar", "can", "kettle", "carton"]),
            containers: strings(&["cup", "bowl", "glass", "mug", "pot"]),
            stirrers: strings(&["spoon", "ladle", "whisk", "stick"]),
            tools: strings(&["sponge", "cloth", "towel", "rag"]),
            surfaces: strings(&["table", "counter", "desk"]),
            locations: strings(&["tray", "shelf", "plate", "basket", "stand"]),
            recipients: strings(&["me", "the person", "the user", "the nurse", "the patient"]),
            compositional_fraction: 0.15,
        }
    }
}

impl TemplateConfig {
    /// Every labelled thing an instruction can name as the grasped object.
    pub fn object_lexicon(&self) -> Vec<String> {
        let mut set = BTreeSet::new();
        for list in [&self.objects, &self.pourables, &self.containers, &self.stirrers, &self.tools] {
            set.extend(list.iter().cloned());
        }
        set.into_iter().collect()
    }

    /// Every labelled thing an instruction can name as a destination.
    /// Recipient phrases map to the scene label `person`.
    pub fn destination_lexicon(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = Vec::new();
        for list in [&self.locations, &self.containers, &self.surfaces] {
            for w in list {
                if !out.iter().any(|(p, _)| p == w) {
                    out.push((w.clone(), w.clone()));
                }
            }
        }
        for r in &self.recipients {
            out.push((r.clone(), "person".to_string()));
        }
        out.push(("person".to_string(), "person".to_string()));
        out
    }

    fn validate(&self) -> Result<(), CorpusError> {
        for kind in TaskKind::SINGLE {
            if self.templates.get(&kind).is_none_or(|t| t.is_empty()) {
                return Err(CorpusError::Config(format!("no templates for task kind {kind}")));
            }
        }
        if self.compositional_fraction > 0.0 && self.connectors.is_empty() {
            return Err(CorpusError::Config("no templates for task kind compositional".into()));
        }
        if !(0.0..=1.0).contains(&self.compositional_fraction) {
            return Err(CorpusError::Config("compositional_fraction must be in [0,1]".into()));
        }
        for (name, list) in [
            ("objects", &self.objects),
            ("pourables", &self.pourables),
            ("containers", &self.containers),
            ("stirrers", &self.stirrers),
            ("tools", &self.tools),
            ("surfaces", &self.surfaces),
            ("locations", &self.locations),
            ("recipients", &self.recipients),
        ] {
            if list.is_empty() {
                return Err(CorpusError::Config(format!("empty lexicon `{name}`")));
            }
        }
        if self.object_lexicon().len() < 10 {
            return Err(CorpusError::Config("object lexicon needs at least ten entries".into()));
        }
        Ok(())
    }
}

struct Clause {
    text: String,
    actions: Vec<SubAction>,
}

fn render_clause(
    cfg: &TemplateConfig,
    kind: TaskKind,
    template: &str,
    rng: &mut ChaCha8Rng,
) -> Result<Clause, CorpusError> {
    let choose = |list: &[String], rng: &mut ChaCha8Rng| list.choose(rng).cloned().unwrap_or_default();
    let (object, destination, person_phrase) = match kind {
        TaskKind::PickPlace => (choose(&cfg.objects, rng), choose(&cfg.locations, rng), None),
        TaskKind::PickPour => {
            let src = choose(&cfg.pourables, rng);
            let candidates: Vec<String> =
                cfg.containers.iter().filter(|c| **c != src).cloned().collect();
            let dst = choose(if candidates.is_empty() { &cfg.containers } else { &candidates }, rng);
            (src, dst, None)
        }
        TaskKind::Stir => (choose(&cfg.stirrers, rng), choose(&cfg.containers, rng), None),
        TaskKind::Cleaning => (choose(&cfg.tools, rng), choose(&cfg.surfaces, rng), None),
        TaskKind::PickGive => {
            (choose(&cfg.objects, rng), "person".to_string(), Some(choose(&cfg.recipients, rng)))
        }
        TaskKind::PickUp => (choose(&cfg.objects, rng), String::new(), None),
        TaskKind::Compositional => unreachable!("clauses are single-task"),
    };
    let mut text = String::with_capacity(template.len() + 16);
    let mut rest = template;
    while let Some(pos) = rest.find(['{', '[']) {
        text.push_str(&rest[..pos]);
        let close = if rest.as_bytes()[pos] == b'{' { '}' } else { ']' };
        let end = rest[pos..]
            .find(close)
            .map(|e| pos + e)
            .ok_or_else(|| CorpusError::Config(format!("unterminated placeholder in `{template}`")))?;
        let name = &rest[pos + 1..end];
        if close == '}' {
            let value = match name {
                "object" | "pourable" | "stirrer" | "tool" => object.clone(),
                "container" | "surface" | "location" => destination.clone(),
                "person" => person_phrase.clone().unwrap_or_else(|| "the person".into()),
                other => {
                    return Err(CorpusError::Config(format!("unknown slot `{other}` in `{template}`")))
                }
            };
            text.push_str(&value);
        } else {
            let set = cfg
                .synonyms
                .get(name)
                .filter(|s| !s.is_empty())
                .ok_or_else(|| CorpusError::Config(format!("unknown synonym set `{name}`")))?;
            text.push_str(&choose(set, rng));
        }
        rest = &rest[end + 1..];
    }
    text.push_str(rest);
    Ok(Clause { text, actions: kind.plan(&object, &destination) })
}

/// Generates `n_examples` labeled instructions, deterministic in `seed`.
///
/// Task kinds cycle so that every kind is represented; the remaining choices
/// (template, synonyms, lexicon entries, composition partners) are drawn from
/// a seeded generator.
pub fn generate_corpus(
    cfg: &TemplateConfig,
    n_examples: usize,
    seed: u64,
) -> Result<Corpus, CorpusError> {
    if n_examples == 0 {
        return Err(CorpusError::Config("n_examples must be at least 1".into()));
    }
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs: Vec<(TaskKind, TaskKind)> = TaskKind::SINGLE
        .iter()
        .flat_map(|&a| TaskKind::SINGLE.iter().map(move |&b| (a, b)))
        .filter(|(a, b)| a.pattern().len() + b.pattern().len() <= SEQ_LEN)
        .collect();
    let mut examples = Vec::with_capacity(n_examples);
    let mut single_cursor = 0usize;
    for i in 0..n_examples {
        let compositional =
            rng.random_bool(cfg.compositional_fraction) && i >= TaskKind::SINGLE.len();
        if compositional {
            let c_idx = rng.random_range(0..cfg.connectors.len());
            let (ka, kb) = *pairs.choose(&mut rng).expect("pairs non-empty");
            let ta = cfg.templates[&ka].choose(&mut rng).expect("validated");
            let tb = cfg.templates[&kb].choose(&mut rng).expect("validated");
            let a = render_clause(cfg, ka, ta, &mut rng)?;
            let b = render_clause(cfg, kb, tb, &mut rng)?;
            let text = cfg.connectors[c_idx].replace("{first}", &a.text).replace("{second}", &b.text);
            let mut actions = a.actions;
            actions.extend(b.actions);
            examples.push(InstructionExample {
                instruction: text,
                actions,
                task_kind: TaskKind::Compositional,
                template: format!("compositional/{c_idx}"),
            });
        } else {
            let kind = TaskKind::SINGLE[single_cursor % TaskKind::SINGLE.len()];
            single_cursor += 1;
            let list = &cfg.templates[&kind];
            let t_idx = rng.random_range(0..list.len());
            let clause = render_clause(cfg, kind, &list[t_idx], &mut rng)?;
            examples.push(InstructionExample {
                instruction: clause.text,
                actions: clause.actions,
                task_kind: kind,
                template: format!("{}/{t_idx}", kind.name()),
            });
        }
    }
    Ok(Corpus {
        examples,
        vocab: Vocab::default(),
        object_lexicon: cfg.object_lexicon(),
        seed,
    })
}

/// Fractions of the corpus assigned to train, validation and test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitRatios {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self, CorpusError> {
        let r = SplitRatios { train, val, test };
        if [train, val, test].iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(CorpusError::Split("ratios must be non-negative".into()));
        }
        if (train + val + test - 1.0).abs() > 1e-9 {
            return Err(CorpusError::Split(format!(
                "ratios sum to {}, expected 1",
                train + val + test
            )));
        }
        Ok(r)
    }

    /// The 1792 / 448 / 570 proportions of the reference corpus.
    pub fn reference() -> Self {
        let total = 1792.0 + 448.0 + 570.0;
        SplitRatios { train: 1792.0 / total, val: 448.0 / total, test: 570.0 / total }
    }
}

impl FromStr for SplitRatios {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| CorpusError::Split(format!("bad ratio list `{s}`: {e}")))?;
        match parts[..] {
            [a, b, c] => SplitRatios::new(a, b, c),
            _ => Err(CorpusError::Split(format!("expected three ratios, got `{s}`"))),
        }
    }
}

/// Largest-remainder apportionment of `total` items over `weights`.
fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    if sum <= 0.0 {
        return vec![0; weights.len()];
    }
    let exact: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut out: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut rem = total - out.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.partial_cmp(&fa).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if rem == 0 {
            break;
        }
        out[i] += 1;
        rem -= 1;
    }
    out
}

/// Chooses a subset of `sizes` whose sum is as close as possible to `target`
/// (exact when reachable). Returns chosen indices.
fn subset_closest(sizes: &[usize], target: usize) -> Vec<usize> {
    let cap: usize = sizes.iter().sum::<usize>().min(target * 2 + 1);
    // reach[s] = Some((item, prev_sum)) for the first way found to reach s.
    let mut reach: Vec<Option<(usize, usize)>> = vec![None; cap + 1];
    let mut reachable = vec![false; cap + 1];
    reachable[0] = true;
    for (i, &w) in sizes.iter().enumerate() {
        for s in (w..=cap).rev() {
            if !reachable[s] && reachable[s - w] {
                reachable[s] = true;
                reach[s] = Some((i, s - w));
            }
        }
    }
    let best = (0..=cap)
        .filter(|&s| reachable[s])
        .min_by_key(|&s| (s.abs_diff(target), s))
        .unwrap_or(0);
    let mut out = Vec::new();
    let mut s = best;
    while s > 0 {
        let (i, prev) = reach[s].expect("reachable sums have a predecessor");
        out.push(i);
        s = prev;
    }
    out
}

/// Candidate subsets of one kind's groups as (sum, indices).
fn group_options(sizes: &[usize], quota: usize) -> Vec<(usize, Vec<usize>)> {
    if sizes.len() <= 16 {
        (0u32..1 << sizes.len())
            .map(|mask| {
                let idx: Vec<usize> = (0..sizes.len()).filter(|&i| mask >> i & 1 == 1).collect();
                (idx.iter().map(|&i| sizes[i]).sum(), idx)
            })
            .collect()
    } else {
        let idx = subset_closest(sizes, quota);
        vec![(0, Vec::new()), (idx.iter().map(|&i| sizes[i]).sum(), idx)]
    }
}

/// Picks one subset of groups per kind so the total is as close to `target`
/// as possible, preferring per-kind sums near their quotas.
fn choose_groups(sizes: &[Vec<usize>], quotas: &[usize], target: usize) -> Vec<Vec<usize>> {
    let options: Vec<_> = sizes.iter().zip(quotas).map(|(s, &q)| group_options(s, q)).collect();
    let cap: usize = sizes.iter().flatten().sum();
    // best[k][s]: minimal quota deviation over the first k kinds summing to s.
    let mut best = vec![vec![None::<(usize, usize)>; cap + 1]; options.len() + 1];
    best[0][0] = Some((0, 0));
    for (k, opts) in options.iter().enumerate() {
        for s in 0..=cap {
            let Some((cost, _)) = best[k][s] else { continue };
            for (o, (sum, _)) in opts.iter().enumerate() {
                let t = s + sum;
                let c = cost + sum.abs_diff(quotas[k]);
                if best[k + 1][t].is_none_or(|(bc, _)| c < bc) {
                    best[k + 1][t] = Some((c, o));
                }
            }
        }
    }
    let last = &best[options.len()];
    let mut s = (0..=cap)
        .filter(|&s| last[s].is_some())
        .min_by_key(|&s| (s.abs_diff(target), last[s].map(|(c, _)| c), s))
        .unwrap_or(0);
    let mut out = vec![Vec::new(); options.len()];
    for k in (0..options.len()).rev() {
        let (_, o) = best[k + 1][s].expect("path exists");
        out[k] = options[k][o].1.clone();
        s -= options[k][o].0;
    }
    out
}

/// Partitions the corpus into train / validation / test.
///
/// The test split is built from whole phrasing templates that never appear in
/// train or validation; each task kind contributes in proportion to its share
/// of the corpus and always keeps its first template for training.
pub fn split_corpus(
    corpus: &Corpus,
    ratios: SplitRatios,
    seed: u64,
) -> Result<(Corpus, Corpus, Corpus), CorpusError> {
    let ratios = SplitRatios::new(ratios.train, ratios.val, ratios.test)?;
    let n = corpus.len();
    if n == 0 {
        return Err(CorpusError::Split("corpus is empty".into()));
    }
    let counts = apportion(n, &[ratios.train, ratios.val, ratios.test]);
    let (n_val, n_test) = (counts[1], counts[2]);
    let needed = [ratios.train, ratios.val, ratios.test].iter().filter(|r| **r > 0.0).count();
    if n < needed || counts.iter().zip([ratios.train, ratios.val, ratios.test]).any(|(c, r)| r > 0.0 && *c == 0)
    {
        return Err(CorpusError::Split(format!("{n} examples cannot populate every requested split")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Group example indices by task kind, then by template.
    let mut by_kind: BTreeMap<TaskKind, BTreeMap<&str, Vec<usize>>> = BTreeMap::new();
    for (i, ex) in corpus.examples.iter().enumerate() {
        by_kind.entry(ex.task_kind).or_default().entry(ex.template.as_str()).or_default().push(i);
    }
    let kinds: Vec<TaskKind> = by_kind.keys().copied().collect();
    let kind_sizes: Vec<f64> =
        kinds.iter().map(|k| by_kind[k].values().map(Vec::len).sum::<usize>() as f64).collect();
    let test_quota = apportion(n_test, &kind_sizes);

    let mut is_test = vec![false; n];
    let mut test_total = 0usize;
    let mut candidates_per_kind = Vec::with_capacity(kinds.len());
    for kind in &kinds {
        let groups = &by_kind[kind];
        let mut names: Vec<&str> = groups.keys().copied().collect();
        // The lowest-numbered template of every kind stays in training.
        names.sort_by_key(|name| template_number(name));
        let mut candidates: Vec<&str> = names.into_iter().skip(1).collect();
        candidates.shuffle(&mut rng);
        candidates_per_kind.push(candidates);
    }
    let sizes: Vec<Vec<usize>> = kinds
        .iter()
        .zip(&candidates_per_kind)
        .map(|(k, c)| c.iter().map(|g| by_kind[k][g].len()).collect())
        .collect();
    let chosen = choose_groups(&sizes, &test_quota, n_test);
    for ((kind, candidates), picked) in kinds.iter().zip(&candidates_per_kind).zip(chosen) {
        for i in picked {
            for &ex in &by_kind[kind][candidates[i]] {
                is_test[ex] = true;
                test_total += 1;
            }
        }
    }
    if n_test > 0 && test_total == 0 {
        return Err(CorpusError::Split("no template could be withheld for the test split".into()));
    }

    let mut rest: Vec<usize> = (0..n).filter(|&i| !is_test[i]).collect();
    rest.shuffle(&mut rng);
    let n_val = n_val.min(rest.len());
    let mut val_idx: Vec<usize> = rest[..n_val].to_vec();
    let mut train_idx: Vec<usize> = rest[n_val..].to_vec();
    val_idx.sort_unstable();
    train_idx.sort_unstable();
    let test_idx: Vec<usize> = (0..n).filter(|&i| is_test[i]).collect();
    if (ratios.train > 0.0 && train_idx.is_empty()) || (ratios.val > 0.0 && val_idx.is_empty()) {
        return Err(CorpusError::Split(format!("{n} examples cannot populate every requested split")));
    }
    let take = |idx: &[usize]| corpus.with_examples(idx.iter().map(|&i| corpus.examples[i].clone()).collect());
    Ok((take(&train_idx), take(&val_idx), take(&test_idx)))
}

fn template_number(name: &str) -> usize {
    name.rsplit('/').next().and_then(|n| n.parse().ok()).unwrap_or(usize::MAX)
}
