//! Conversation corpora: per-utterance modality features, speakers, labels.
//!
//! On disk a corpus is JSONL. The first line is a header
//! `{"label_names": [...], "dims": {"a": .., "t": .., "v": ..}, "task_mode": "single"|"multi"}`
//! and every following line is one dialogue:
//! `{"dialogue_id", "num_speakers", "split", "utterances": [{"speaker", "label", "audio"?, "text"?, "video"?, "raw_text"?}]}`.
//! A modality with dimension 0 is absent from the corpus; any other declared
//! modality must be present on every utterance.

use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{ErcError, Result};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Modality {
    Audio,
    Text,
    Video,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Audio, Modality::Text, Modality::Video];

    pub fn letter(self) -> char {
        match self {
            Modality::Audio => 'a',
            Modality::Text => 't',
            Modality::Video => 'v',
        }
    }
}

/// A subset of modalities. Fusion order is always audio, text, video.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModalitySet {
    pub audio: bool,
    pub text: bool,
    pub video: bool,
}

impl ModalitySet {
    pub const ATV: ModalitySet = ModalitySet {
        audio: true,
        text: true,
        video: true,
    };

    pub fn contains(&self, m: Modality) -> bool {
        match m {
            Modality::Audio => self.audio,
            Modality::Text => self.text,
            Modality::Video => self.video,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = Modality> + '_ {
        Modality::ALL.into_iter().filter(|m| self.contains(*m))
    }

    pub fn is_empty(&self) -> bool {
        !(self.audio || self.text || self.video)
    }
}

impl FromStr for ModalitySet {
    type Err = ErcError;

    /// Parses letters such as `"atv"`, `"ta"` or `"t"`, in any order.
    fn from_str(s: &str) -> Result<Self> {
        let mut set = ModalitySet {
            audio: false,
            text: false,
            video: false,
        };
        for c in s.trim().chars() {
            match c {
                'a' => set.audio = true,
                't' => set.text = true,
                'v' => set.video = true,
                '+' | ',' => {}
                _ => {
                    return Err(ErcError::InvalidArgument(format!(
                        "unknown modality '{c}' in \"{s}\""
                    )))
                }
            }
        }
        if set.is_empty() {
            return Err(ErcError::InvalidArgument("empty modality set".into()));
        }
        Ok(set)
    }
}

impl fmt::Display for ModalitySet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for m in self.iter() {
            write!(f, "{}", m.letter())?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModalityDims {
    pub a: usize,
    pub t: usize,
    pub v: usize,
}

impl ModalityDims {
    pub fn get(&self, m: Modality) -> usize {
        match m {
            Modality::Audio => self.a,
            Modality::Text => self.t,
            Modality::Video => self.v,
        }
    }

    pub fn fused_width(&self, active: ModalitySet) -> usize {
        active.iter().map(|m| self.get(m)).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskMode {
    Single,
    Multi,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Label {
    Single(usize),
    Multi(Vec<u8>),
}

impl Label {
    pub fn class(&self) -> Option<usize> {
        match self {
            Label::Single(c) => Some(*c),
            Label::Multi(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl FromStr for Split {
    type Err = ErcError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(ErcError::InvalidArgument(format!("unknown split \"{other}\""))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub speaker: usize,
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub video: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_text: Option<String>,
}

impl Utterance {
    pub fn modality(&self, m: Modality) -> Option<&[f64]> {
        match m {
            Modality::Audio => self.audio.as_deref(),
            Modality::Text => self.text.as_deref(),
            Modality::Video => self.video.as_deref(),
        }
    }

    fn modality_mut(&mut self, m: Modality) -> &mut Option<Vec<f64>> {
        match m {
            Modality::Audio => &mut self.audio,
            Modality::Text => &mut self.text,
            Modality::Video => &mut self.video,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dialogue {
    pub dialogue_id: String,
    pub num_speakers: usize,
    pub split: Split,
    pub utterances: Vec<Utterance>,
}

impl Dialogue {
    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn speakers(&self) -> Vec<usize> {
        self.utterances.iter().map(|u| u.speaker).collect()
    }

    /// Gold classes of a single-label dialogue.
    pub fn classes(&self) -> Result<Vec<usize>> {
        self.utterances
            .iter()
            .map(|u| {
                u.label.class().ok_or_else(|| {
                    ErcError::InvalidArgument(format!(
                        "dialogue {} carries multi-label targets",
                        self.dialogue_id
                    ))
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CorpusHeader {
    label_names: Vec<String>,
    dims: ModalityDims,
    task_mode: TaskMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub label_names: Vec<String>,
    pub dims: ModalityDims,
    pub task_mode: TaskMode,
    pub dialogues: Vec<Dialogue>,
}

impl Corpus {
    pub fn num_classes(&self) -> usize {
        self.label_names.len()
    }

    pub fn max_speakers(&self) -> usize {
        self.dialogues.iter().map(|d| d.num_speakers).max().unwrap_or(1).max(1)
    }

    pub fn num_utterances(&self) -> usize {
        self.dialogues.iter().map(Dialogue::len).sum()
    }

    /// Modalities declared by the corpus header (non-zero dimension).
    pub fn available_modalities(&self) -> ModalitySet {
        ModalitySet {
            audio: self.dims.a > 0,
            text: self.dims.t > 0,
            video: self.dims.v > 0,
        }
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Dialogue> {
        self.dialogues.iter().filter(move |d| d.split == split)
    }

    pub fn find(&self, dialogue_id: &str) -> Option<&Dialogue> {
        self.dialogues.iter().find(|d| d.dialogue_id == dialogue_id)
    }

    /// Corpus restricted to one split, keeping header data.
    pub fn subset(&self, split: Split) -> Corpus {
        Corpus {
            label_names: self.label_names.clone(),
            dims: self.dims,
            task_mode: self.task_mode,
            dialogues: self.split(split).cloned().collect(),
        }
    }

    /// Checks every structural invariant; called by the loader and usable on
    /// in-memory corpora.
    pub fn validate(&self) -> Result<()> {
        if self.label_names.is_empty() {
            return Err(ErcError::InvalidArgument("corpus has no label names".into()));
        }
        let declared = self.available_modalities();
        for d in &self.dialogues {
            validate_dialogue(d, self, declared)?;
        }
        Ok(())
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        let header = CorpusHeader {
            label_names: self.label_names.clone(),
            dims: self.dims,
            task_mode: self.task_mode,
        };
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n")?;
        for d in &self.dialogues {
            serde_json::to_writer(&mut out, d)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf)?;
        Ok(buf)
    }

    /// SHA-256 of the canonical JSONL serialisation, hex encoded.
    pub fn fingerprint(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_jsonl()?)))
    }

    pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Corpus> {
        let mut header: Option<CorpusHeader> = None;
        let mut dialogues = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line_no = idx + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            if header.is_none() {
                let h: CorpusHeader = serde_json::from_str(&line).map_err(|e| ErcError::Parse {
                    line: line_no,
                    msg: format!("corpus header: {e}"),
                })?;
                header = Some(h);
                continue;
            }
            let d: Dialogue = serde_json::from_str(&line).map_err(|e| ErcError::Parse {
                line: line_no,
                msg: e.to_string(),
            })?;
            dialogues.push(d);
        }
        let header = header.ok_or(ErcError::Parse {
            line: 1,
            msg: "missing corpus header".into(),
        })?;
        let corpus = Corpus {
            label_names: header.label_names,
            dims: header.dims,
            task_mode: header.task_mode,
            dialogues,
        };
        corpus.validate()?;
        Ok(corpus)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_jsonl(&mut w)?;
        w.flush()?;
        Ok(())
    }
}

fn validate_dialogue(d: &Dialogue, corpus: &Corpus, declared: ModalitySet) -> Result<()> {
    let err = |utterance: usize, msg: String| ErcError::Corpus {
        dialogue: d.dialogue_id.clone(),
        utterance,
        msg,
    };
    if d.utterances.is_empty() {
        return Err(err(0, "dialogue has no utterances".into()));
    }
    if d.num_speakers == 0 {
        return Err(err(0, "num_speakers must be positive".into()));
    }
    let c = corpus.num_classes();
    for (i, u) in d.utterances.iter().enumerate() {
        if u.speaker >= d.num_speakers {
            return Err(err(
                i,
                format!(
                    "unknown speaker index {} (num_speakers = {})",
                    u.speaker, d.num_speakers
                ),
            ));
        }
        let mut present = 0;
        for m in Modality::ALL {
            let dim = corpus.dims.get(m);
            match (u.modality(m), declared.contains(m)) {
                (Some(v), true) => {
                    if v.len() != dim {
                        return Err(err(
                            i,
                            format!(
                                "dimension mismatch for modality '{}': expected {dim}, got {}",
                                m.letter(),
                                v.len()
                            ),
                        ));
                    }
                    if v.iter().any(|x| !x.is_finite()) {
                        return Err(err(i, format!("non-finite value in modality '{}'", m.letter())));
                    }
                    present += 1;
                }
                (None, true) => {
                    return Err(err(i, format!("missing modality '{}'", m.letter())));
                }
                (Some(_), false) => {
                    return Err(err(
                        i,
                        format!("modality '{}' present but not declared", m.letter()),
                    ));
                }
                (None, false) => {}
            }
        }
        if present == 0 {
            return Err(err(i, "no modality features present".into()));
        }
        match (&u.label, corpus.task_mode) {
            (Label::Single(l), TaskMode::Single) => {
                if *l >= c {
                    return Err(err(i, format!("label {l} out of range for {c} classes")));
                }
            }
            (Label::Multi(v), TaskMode::Multi) => {
                if v.len() != c || v.iter().any(|&b| b > 1) {
                    return Err(err(
                        i,
                        format!("multi-label target must be a 0/1 vector of length {c}"),
                    ));
                }
            }
            _ => return Err(err(i, "label kind does not match task mode".into())),
        }
    }
    Ok(())
}

pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let file = std::fs::File::open(path).map_err(|e| {
        ErcError::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })?;
    Corpus::read_jsonl(BufReader::new(file))
}

pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    corpus.save(path)
}

/// Concatenates the active modality vectors of `u` in the fixed order audio,
/// text, video.
pub fn fuse_features(u: &Utterance, active: ModalitySet) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for m in active.iter() {
        let v = u.modality(m).ok_or_else(|| {
            ErcError::InvalidArgument(format!("requested modality '{}' is missing", m.letter()))
        })?;
        out.extend_from_slice(v);
    }
    Ok(out)
}

/// Fused `n×d` feature matrix of a dialogue.
pub fn dialogue_features(d: &Dialogue, active: ModalitySet) -> Result<Tensor> {
    let rows = d
        .utterances
        .iter()
        .map(|u| fuse_features(u, active))
        .collect::<Result<Vec<_>>>()?;
    Tensor::from_rows(&rows)
}

/// Splits every dialogue into consecutive chunks of at most `n` utterances,
/// each becoming an independent dialogue `"{id}#{k}"`.
pub fn truncate_context(corpus: &Corpus, n: usize) -> Result<Corpus> {
    if n == 0 {
        return Err(ErcError::InvalidArgument("context length must be >= 1".into()));
    }
    let mut dialogues = Vec::new();
    for d in &corpus.dialogues {
        if d.len() <= n {
            dialogues.push(d.clone());
            continue;
        }
        for (k, chunk) in d.utterances.chunks(n).enumerate() {
            dialogues.push(Dialogue {
                dialogue_id: format!("{}#{k}", d.dialogue_id),
                num_speakers: d.num_speakers,
                split: d.split,
                utterances: chunk.to_vec(),
            });
        }
    }
    Ok(Corpus {
        label_names: corpus.label_names.clone(),
        dims: corpus.dims,
        task_mode: corpus.task_mode,
        dialogues,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dependency {
    /// Label is the utterance's own feature cluster.
    None,
    /// Label is the previous utterance's cluster (own cluster for the first).
    Neighbor,
}

impl FromStr for Dependency {
    type Err = ErcError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Dependency::None),
            "neighbor" => Ok(Dependency::Neighbor),
            other => Err(ErcError::InvalidArgument(format!(
                "unknown dependency \"{other}\""
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub num_dialogues: usize,
    pub utterances_per_dialogue: usize,
    pub num_speakers: usize,
    pub num_classes: usize,
    pub dims: ModalityDims,
    pub dependency: Dependency,
    pub seed: u64,
    /// Half-width of the uniform noise added to cluster centroids.
    pub noise: f64,
}

impl SynthSpec {
    pub fn new(dependency: Dependency, seed: u64) -> Self {
        SynthSpec {
            num_dialogues: 200,
            utterances_per_dialogue: 8,
            num_speakers: 2,
            num_classes: 4,
            dims: ModalityDims { a: 8, t: 16, v: 8 },
            dependency,
            seed,
            noise: 0.1,
        }
    }
}

/// Generates a labelled corpus whose labels are a known function of feature
/// clusters. Speakers take turns round-robin. Dialogue `i` goes to the
/// valid split when `i % 10 == 8`, test when `i % 10 == 9`, train otherwise.
pub fn synth_corpus(spec: &SynthSpec) -> Result<Corpus> {
    if spec.num_dialogues == 0
        || spec.utterances_per_dialogue == 0
        || spec.num_speakers == 0
        || spec.num_classes == 0
    {
        return Err(ErcError::InvalidArgument("synthetic corpus sizes must be positive".into()));
    }
    if spec.dims.a + spec.dims.t + spec.dims.v == 0 {
        return Err(ErcError::InvalidArgument("synthetic corpus needs a modality".into()));
    }
    let mut rng = rng::stream(spec.seed, rng::STREAM_DATA);
    let centroids: Vec<Vec<Vec<f64>>> = (0..spec.num_classes)
        .map(|_| {
            Modality::ALL
                .iter()
                .map(|&m| (0..spec.dims.get(m)).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect()
        })
        .collect();

    let mut dialogues = Vec::with_capacity(spec.num_dialogues);
    for di in 0..spec.num_dialogues {
        let n = spec.utterances_per_dialogue;
        let clusters: Vec<usize> = (0..n).map(|_| rng.gen_range(0..spec.num_classes)).collect();
        let mut utterances = Vec::with_capacity(n);
        for (i, &cluster) in clusters.iter().enumerate() {
            let label = match spec.dependency {
                Dependency::None => cluster,
                Dependency::Neighbor => {
                    if i == 0 {
                        cluster
                    } else {
                        clusters[i - 1]
                    }
                }
            };
            let mut u = Utterance {
                speaker: i % spec.num_speakers,
                label: Label::Single(label),
                audio: None,
                text: None,
                video: None,
                raw_text: None,
            };
            for (mi, &m) in Modality::ALL.iter().enumerate() {
                if spec.dims.get(m) == 0 {
                    continue;
                }
                let v = centroids[cluster][mi]
                    .iter()
                    .map(|c| c + rng.gen_range(-spec.noise..=spec.noise))
                    .collect();
                *u.modality_mut(m) = Some(v);
            }
            utterances.push(u);
        }
        let split = match di % 10 {
            8 => Split::Valid,
            9 => Split::Test,
            _ => Split::Train,
        };
        dialogues.push(Dialogue {
            dialogue_id: format!("synth-{di:04}"),
            num_speakers: spec.num_speakers,
            split,
            utterances,
        });
    }
    Ok(Corpus {
        label_names: (0..spec.num_classes).map(|c| format!("c{c}")).collect(),
        dims: spec.dims,
        task_mode: TaskMode::Single,
        dialogues,
    })
}
