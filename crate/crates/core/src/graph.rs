//! Typed directed conversation graphs.
//!
//! Nodes are utterances. An edge `src -> dst` delivers a message from `src`
//! into `dst`; its relation type is read from the receiving node's point of
//! view: `(speaker(dst), speaker(src), Past | Future)`, where `Past` covers
//! earlier utterances and the self-loop, and `Future` covers later ones.
//! Node `i` receives from every `j` with `i - P <= j <= i + F`.
//!
//! Relation ids are `direction * M^2 + central_speaker * M + other_speaker`,
//! giving `2 M^2` types for `M` speakers.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{Corpus, Dialogue, TaskMode};
use crate::error::{ErcError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    Past = 0,
    Future = 1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RelationType {
    /// Speaker of the receiving (central) utterance.
    pub src_speaker: usize,
    /// Speaker of the utterance the relation points to.
    pub dst_speaker: usize,
    pub direction: Direction,
}

impl RelationType {
    pub fn is_intra(&self) -> bool {
        self.src_speaker == self.dst_speaker
    }
}

pub fn relation_count(num_speakers: usize) -> usize {
    2 * num_speakers * num_speakers
}

pub fn relation_type_id(
    src_speaker: usize,
    dst_speaker: usize,
    direction: Direction,
    num_speakers: usize,
) -> Result<usize> {
    for s in [src_speaker, dst_speaker] {
        if s >= num_speakers {
            return Err(ErcError::SpeakerOutOfRange {
                speaker: s,
                num_speakers,
            });
        }
    }
    let m = num_speakers;
    Ok(direction as usize * m * m + src_speaker * m + dst_speaker)
}

pub fn relation_from_id(id: usize, num_speakers: usize) -> Result<RelationType> {
    let m = num_speakers;
    if id >= relation_count(m) {
        return Err(ErcError::RelationOutOfRange {
            relation: id,
            relation_count: relation_count(m),
        });
    }
    let direction = if id < m * m {
        Direction::Past
    } else {
        Direction::Future
    };
    let rest = id % (m * m);
    Ok(RelationType {
        src_speaker: rest / m,
        dst_speaker: rest % m,
        direction,
    })
}

/// Number of neighbouring utterances on one side of a node, or unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Window {
    Bounded(usize),
    Unbounded,
}

impl Window {
    pub fn covers(&self, distance: usize) -> bool {
        match self {
            Window::Bounded(w) => distance <= *w,
            Window::Unbounded => true,
        }
    }
}

impl fmt::Display for Window {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Window::Bounded(w) => write!(f, "{w}"),
            Window::Unbounded => f.write_str("inf"),
        }
    }
}

impl FromStr for Window {
    type Err = ErcError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "inf" | "unbounded" | "all" => Ok(Window::Unbounded),
            other => other
                .parse()
                .map(Window::Bounded)
                .map_err(|_| ErcError::InvalidArgument(format!("bad window \"{other}\""))),
        }
    }
}

impl From<Window> for String {
    fn from(w: Window) -> String {
        w.to_string()
    }
}

impl TryFrom<String> for Window {
    type Error = ErcError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeMode {
    /// Every in-window ordered pair delivers a message, so past and future
    /// context both reach each node.
    BothDirections,
    /// Each in-window pair is materialised once, as the past relation of the
    /// later utterance; messages only flow forward in time.
    SingleDirection,
}

impl FromStr for EdgeMode {
    type Err = ErcError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "both_directions" | "both" => Ok(EdgeMode::BothDirections),
            "single_direction" | "single" => Ok(EdgeMode::SingleDirection),
            other => Err(ErcError::InvalidArgument(format!("unknown edge mode \"{other}\""))),
        }
    }
}

impl fmt::Display for EdgeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EdgeMode::BothDirections => "both_directions",
            EdgeMode::SingleDirection => "single_direction",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphOptions {
    pub past: Window,
    pub future: Window,
    pub edge_mode: EdgeMode,
    pub self_loops: bool,
    /// Speaker count `M` defining the relation space.
    pub num_speakers: usize,
}

impl GraphOptions {
    pub fn new(past: Window, future: Window, num_speakers: usize) -> Self {
        GraphOptions {
            past,
            future,
            edge_mode: EdgeMode::BothDirections,
            self_loops: true,
            num_speakers,
        }
    }

    pub fn unbounded(num_speakers: usize) -> Self {
        GraphOptions::new(Window::Unbounded, Window::Unbounded, num_speakers)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub relation: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConversationGraph {
    pub num_nodes: usize,
    pub edges: Vec<Edge>,
    pub relation_count: usize,
}

#[derive(Serialize, Deserialize)]
struct GraphJson {
    n: usize,
    edges: Vec<[usize; 3]>,
    relation_count: usize,
}

impl ConversationGraph {
    pub fn in_edges(&self, node: usize) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(move |e| e.dst == node)
    }

    pub fn to_json(&self) -> serde_json::Value {
        let g = GraphJson {
            n: self.num_nodes,
            edges: self.edges.iter().map(|e| [e.src, e.dst, e.relation]).collect(),
            relation_count: self.relation_count,
        };
        serde_json::to_value(g).expect("graph json")
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let g: GraphJson = serde_json::from_value(value.clone())?;
        Ok(ConversationGraph {
            num_nodes: g.n,
            edges: g
                .edges
                .into_iter()
                .map(|[src, dst, relation]| Edge { src, dst, relation })
                .collect(),
            relation_count: g.relation_count,
        })
    }

    /// Permutes node ids: old node `i` becomes `perm[i]`.
    pub fn relabel(&self, perm: &[usize]) -> ConversationGraph {
        ConversationGraph {
            num_nodes: self.num_nodes,
            edges: self
                .edges
                .iter()
                .map(|e| Edge {
                    src: perm[e.src],
                    dst: perm[e.dst],
                    relation: e.relation,
                })
                .collect(),
            relation_count: self.relation_count,
        }
    }
}

/// Builds the relation graph over an utterance sequence given by speaker id.
pub fn build_graph(speakers: &[usize], opts: &GraphOptions) -> Result<ConversationGraph> {
    let m = opts.num_speakers;
    if let Some(&s) = speakers.iter().find(|&&s| s >= m) {
        return Err(ErcError::SpeakerOutOfRange {
            speaker: s,
            num_speakers: m,
        });
    }
    let n = speakers.len();
    let mut edges = Vec::new();
    for dst in 0..n {
        let lo = match opts.past {
            Window::Bounded(p) => dst.saturating_sub(p),
            Window::Unbounded => 0,
        };
        let hi = match (opts.edge_mode, opts.future) {
            (EdgeMode::SingleDirection, _) => dst,
            (_, Window::Bounded(f)) => (dst + f).min(n - 1),
            (_, Window::Unbounded) => n - 1,
        };
        for src in lo..=hi {
            if src == dst && !opts.self_loops {
                continue;
            }
            let direction = if src <= dst {
                Direction::Past
            } else {
                Direction::Future
            };
            let relation = relation_type_id(speakers[dst], speakers[src], direction, m)?;
            edges.push(Edge { src, dst, relation });
        }
    }
    Ok(ConversationGraph {
        num_nodes: n,
        edges,
        relation_count: relation_count(m),
    })
}

pub fn build_dialogue_graph(d: &Dialogue, opts: &GraphOptions) -> Result<ConversationGraph> {
    build_graph(&d.speakers(), opts)
}

/// Maps every edge onto a single relation type.
pub fn collapse_relations(g: &ConversationGraph) -> ConversationGraph {
    ConversationGraph {
        num_nodes: g.num_nodes,
        edges: g
            .edges
            .iter()
            .map(|e| Edge {
                relation: 0,
                ..*e
            })
            .collect(),
        relation_count: 1,
    }
}

/// A relation as listed for one central node: the other utterance's index
/// and the typed relation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct NodeRelation {
    pub other: usize,
    pub relation: RelationType,
}

/// Relations of `node` split into (intra-speaker, inter-speaker), sorted by
/// the other utterance's index.
pub fn node_relations(
    g: &ConversationGraph,
    node: usize,
    num_speakers: usize,
) -> Result<(Vec<NodeRelation>, Vec<NodeRelation>)> {
    let mut intra = Vec::new();
    let mut inter = Vec::new();
    for e in g.in_edges(node) {
        let relation = relation_from_id(e.relation, num_speakers)?;
        let r = NodeRelation {
            other: e.src,
            relation,
        };
        if relation.is_intra() {
            intra.push(r);
        } else {
            inter.push(r);
        }
    }
    intra.sort();
    inter.sort();
    Ok((intra, inter))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransitionLevel {
    /// Consecutive utterances regardless of speaker.
    Utterance,
    /// Consecutive utterances of the same speaker.
    Speaker,
}

impl FromStr for TransitionLevel {
    type Err = ErcError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "utterance" => Ok(TransitionLevel::Utterance),
            "speaker" => Ok(TransitionLevel::Speaker),
            other => Err(ErcError::InvalidArgument(format!("unknown level \"{other}\""))),
        }
    }
}

/// For each utterance, the index of its reference predecessor at `level`.
pub fn previous_reference(speakers: &[usize], level: TransitionLevel) -> Vec<Option<usize>> {
    match level {
        TransitionLevel::Utterance => (0..speakers.len()).map(|i| i.checked_sub(1)).collect(),
        TransitionLevel::Speaker => {
            let mut last: std::collections::HashMap<usize, usize> = Default::default();
            speakers
                .iter()
                .enumerate()
                .map(|(i, s)| last.insert(*s, i))
                .collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionStats {
    pub level: TransitionLevel,
    /// `counts[from][to]`.
    pub counts: Vec<Vec<u64>>,
    /// Row-normalised counts; all-zero rows stay zero.
    pub normalized: Vec<Vec<f64>>,
}

pub fn transition_stats(corpus: &Corpus, level: TransitionLevel) -> Result<TransitionStats> {
    if corpus.task_mode != TaskMode::Single {
        return Err(ErcError::InvalidArgument(
            "transition statistics need a single-label corpus".into(),
        ));
    }
    let c = corpus.num_classes();
    let mut counts = vec![vec![0u64; c]; c];
    for d in &corpus.dialogues {
        let labels = d.classes()?;
        for (i, prev) in previous_reference(&d.speakers(), level).into_iter().enumerate() {
            if let Some(p) = prev {
                counts[labels[p]][labels[i]] += 1;
            }
        }
    }
    let normalized = counts
        .iter()
        .map(|row| {
            let total: u64 = row.iter().sum();
            row.iter()
                .map(|&v| if total == 0 { 0.0 } else { v as f64 / total as f64 })
                .collect()
        })
        .collect();
    Ok(TransitionStats {
        level,
        counts,
        normalized,
    })
}
