//! Batch studies: ablation matrix, context truncation, window sweep and
//! embedding dumps. Each grid cell is retrained from scratch per seed and
//! scored by test-split weighted F1.

use std::fmt::Write as _;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Ablation, TrainConfig};
use crate::dataset::{self, Corpus, Label, ModalitySet, Split};
use crate::error::{ErcError, Result};
use crate::graph::{self, EdgeMode, GraphOptions, Window};
use crate::model::{self, ModelParams};
use crate::train;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum StudyGrid {
    Ablation {
        variants: Vec<Ablation>,
        modalities: Vec<ModalitySet>,
    },
    /// `None` keeps whole dialogues.
    Context(Vec<Option<usize>>),
    /// `(past, future)` pairs.
    Window(Vec<(Window, Window)>),
}

impl StudyGrid {
    pub fn kind(&self) -> &'static str {
        match self {
            StudyGrid::Ablation { .. } => "ablation",
            StudyGrid::Context(_) => "context",
            StudyGrid::Window(_) => "window",
        }
    }

    /// Parses a grid description for `kind`:
    /// - ablation: `full,no_gnn,no_relations` optionally followed by
    ///   `;atv,at,t` (defaults to every corpus modality)
    /// - context: `all,10,3`
    /// - window: `0:0,1:1,inf:inf`
    pub fn parse(kind: &str, grid: &str) -> Result<Self> {
        let items = |s: &str| -> Vec<String> {
            s.split(',')
                .map(str::trim)
                .filter(|t| !t.is_empty())
                .map(String::from)
                .collect()
        };
        let bad = |msg: String| ErcError::InvalidArgument(msg);
        match kind {
            "ablation" => {
                let (v, m) = grid.split_once(';').unwrap_or((grid, ""));
                let variants = items(v)
                    .iter()
                    .map(|s| Ablation::from_str(s))
                    .collect::<Result<Vec<_>>>()?;
                let modalities = items(m)
                    .iter()
                    .map(|s| ModalitySet::from_str(s))
                    .collect::<Result<Vec<_>>>()?;
                Ok(StudyGrid::Ablation {
                    variants,
                    modalities,
                })
            }
            "context" => items(grid)
                .iter()
                .map(|s| match s.as_str() {
                    "all" | "inf" => Ok(None),
                    n => n
                        .parse()
                        .map(Some)
                        .map_err(|_| bad(format!("bad context length \"{n}\""))),
                })
                .collect::<Result<Vec<_>>>()
                .map(StudyGrid::Context),
            "window" => items(grid)
                .iter()
                .map(|s| {
                    let (p, f) = s
                        .split_once(':')
                        .ok_or_else(|| bad(format!("window cell \"{s}\" is not P:F")))?;
                    Ok((Window::from_str(p)?, Window::from_str(f)?))
                })
                .collect::<Result<Vec<_>>>()
                .map(StudyGrid::Window),
            other => Err(bad(format!("unknown study kind \"{other}\""))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySpec {
    pub grid: StudyGrid,
    pub base: TrainConfig,
    pub seeds: Vec<u64>,
}

impl StudySpec {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(ErcError::InvalidArgument("a study needs at least one seed".into()));
        }
        let empty = match &self.grid {
            StudyGrid::Ablation { variants, .. } => variants.is_empty(),
            StudyGrid::Context(v) => v.is_empty(),
            StudyGrid::Window(v) => v.is_empty(),
        };
        if empty {
            return Err(ErcError::InvalidArgument("study grid is empty".into()));
        }
        if let StudyGrid::Context(v) = &self.grid {
            if v.contains(&Some(0)) {
                return Err(ErcError::InvalidArgument("context length must be >= 1".into()));
            }
        }
        self.base.validate()
    }

    pub fn run(&self, corpus: &Corpus) -> Result<StudyTable> {
        self.validate()?;
        match &self.grid {
            StudyGrid::Ablation {
                variants,
                modalities,
            } => run_ablation(corpus, &self.base, variants, modalities, &self.seeds),
            StudyGrid::Context(ns) => run_context_sweep(corpus, &self.base, ns, &self.seeds),
            StudyGrid::Window(pf) => run_window_sweep(corpus, &self.base, pf, &self.seeds),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub cell: String,
    /// Aligned with [`StudyTable::seeds`].
    pub per_seed: Vec<f64>,
    pub median: f64,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyTable {
    pub study: String,
    pub seeds: Vec<u64>,
    pub rows: Vec<StudyRow>,
}

/// Quotes a CSV field that contains a separator, quote or newline.
fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        (v[mid - 1] + v[mid]) / 2.0
    }
}

impl StudyTable {
    pub fn row(&self, cell: &str) -> Option<&StudyRow> {
        self.rows.iter().find(|r| r.cell == cell)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("cell");
        for s in &self.seeds {
            let _ = write!(out, ",seed_{s}");
        }
        out.push_str(",median,mean\n");
        for r in &self.rows {
            out.push_str(&csv_field(&r.cell));
            for v in &r.per_seed {
                let _ = write!(out, ",{v}");
            }
            let _ = writeln!(out, ",{},{}", r.median, r.mean);
        }
        out
    }

    /// Weighted F1 as percentages in aligned columns.
    pub fn to_pretty(&self) -> String {
        let mut header = vec!["cell".to_string()];
        header.extend(self.seeds.iter().map(|s| format!("seed {s}")));
        header.push("median".into());
        header.push("mean".into());
        let mut rows = vec![header];
        for r in &self.rows {
            let mut cells = vec![r.cell.clone()];
            cells.extend(r.per_seed.iter().map(|v| format!("{:.2}", v * 100.0)));
            cells.push(format!("{:.2}", r.median * 100.0));
            cells.push(format!("{:.2}", r.mean * 100.0));
            rows.push(cells);
        }
        let cols = rows[0].len();
        let widths: Vec<usize> = (0..cols)
            .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = format!("{} study\n", self.study);
        for (i, r) in rows.iter().enumerate() {
            let line: Vec<String> = r
                .iter()
                .enumerate()
                .map(|(c, s)| {
                    let w = widths[c];
                    if c == 0 {
                        format!("{s:<w$}")
                    } else {
                        format!("{s:>w$}")
                    }
                })
                .collect();
            let _ = writeln!(out, "{}", line.join("  "));
            if i == 0 {
                let total = widths.iter().sum::<usize>() + 2 * (cols - 1);
                let _ = writeln!(out, "{}", "-".repeat(total));
            }
        }
        out
    }
}

/// Trains on `corpus` with `config` and returns test-split weighted F1 of
/// the best-validation parameters.
pub fn train_and_score(corpus: &Corpus, config: &TrainConfig) -> Result<f64> {
    let outcome = train::train(corpus, config)?;
    Ok(train::split_metrics(corpus, &outcome.params, Split::Test)?.weighted_f1)
}

struct Cell {
    label: String,
    corpus: Corpus,
    config: TrainConfig,
}

fn run_cells(study: &str, cells: Vec<Cell>, seeds: &[u64]) -> Result<StudyTable> {
    if seeds.is_empty() {
        return Err(ErcError::InvalidArgument("a study needs at least one seed".into()));
    }
    let jobs: Vec<(usize, u64)> = (0..cells.len())
        .flat_map(|c| seeds.iter().map(move |&s| (c, s)))
        .collect();
    let scores = jobs
        .par_iter()
        .map(|&(c, seed)| {
            let cfg = TrainConfig {
                seed,
                ..cells[c].config.clone()
            };
            train_and_score(&cells[c].corpus, &cfg)
        })
        .collect::<Result<Vec<f64>>>()?;
    let rows = cells
        .iter()
        .enumerate()
        .map(|(c, cell)| {
            let per_seed = scores[c * seeds.len()..(c + 1) * seeds.len()].to_vec();
            StudyRow {
                cell: cell.label.clone(),
                median: median(&per_seed),
                mean: per_seed.iter().sum::<f64>() / per_seed.len() as f64,
                per_seed,
            }
        })
        .collect();
    Ok(StudyTable {
        study: study.to_string(),
        seeds: seeds.to_vec(),
        rows,
    })
}

/// Cells are `variant/modalities`, variants outermost. An empty
/// `modalities` list uses the corpus's own modality set.
pub fn run_ablation(
    corpus: &Corpus,
    base: &TrainConfig,
    variants: &[Ablation],
    modalities: &[ModalitySet],
    seeds: &[u64],
) -> Result<StudyTable> {
    let sets: Vec<ModalitySet> = if modalities.is_empty() {
        vec![base.modalities.unwrap_or_else(|| corpus.available_modalities())]
    } else {
        modalities.to_vec()
    };
    let mut cells = Vec::new();
    for &v in variants {
        for &m in &sets {
            cells.push(Cell {
                label: format!("{v}/{m}"),
                corpus: corpus.clone(),
                config: TrainConfig {
                    ablation: v,
                    modalities: Some(m),
                    ..base.clone()
                },
            });
        }
    }
    run_cells("ablation", cells, seeds)
}

/// Cells are `n=all` or `n=<len>`, in the requested order.
pub fn run_context_sweep(
    corpus: &Corpus,
    base: &TrainConfig,
    n_values: &[Option<usize>],
    seeds: &[u64],
) -> Result<StudyTable> {
    let cells = n_values
        .iter()
        .map(|n| {
            let (label, c) = match n {
                None => ("n=all".to_string(), corpus.clone()),
                Some(k) => (format!("n={k}"), dataset::truncate_context(corpus, *k)?),
            };
            Ok(Cell {
                label,
                corpus: c,
                config: base.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    run_cells("context", cells, seeds)
}

/// Edge count by direct enumeration of ordered pairs `(src, dst)`.
pub fn brute_force_edge_count(n: usize, opts: &GraphOptions) -> usize {
    let mut count = 0;
    for dst in 0..n {
        for src in 0..n {
            let keep = if src == dst {
                opts.self_loops
            } else if src < dst {
                opts.past.covers(dst - src)
            } else {
                opts.edge_mode == EdgeMode::BothDirections && opts.future.covers(src - dst)
            };
            count += usize::from(keep);
        }
    }
    count
}

/// Cells are `P=<p>,F=<f>`. Every dialogue's graph is checked against the
/// enumeration oracle before any training starts.
pub fn run_window_sweep(
    corpus: &Corpus,
    base: &TrainConfig,
    pf_values: &[(Window, Window)],
    seeds: &[u64],
) -> Result<StudyTable> {
    let num_speakers = base.num_speakers.unwrap_or_else(|| corpus.max_speakers());
    let mut cells = Vec::new();
    for &(p, f) in pf_values {
        let mut opts = GraphOptions::new(p, f, num_speakers);
        opts.edge_mode = base.edge_mode;
        opts.self_loops = base.self_loops;
        for d in &corpus.dialogues {
            let g = graph::build_graph(&d.speakers(), &opts)?;
            let expect = brute_force_edge_count(d.len(), &opts);
            if g.edges.len() != expect {
                return Err(ErcError::InvalidArgument(format!(
                    "dialogue {}: graph has {} edges, enumeration gives {expect}",
                    d.dialogue_id,
                    g.edges.len()
                )));
            }
        }
        cells.push(Cell {
            label: format!("P={p},F={f}"),
            corpus: corpus.clone(),
            config: TrainConfig {
                window_past: p,
                window_future: f,
                ..base.clone()
            },
        });
    }
    run_cells("window", cells, seeds)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    BeforeGnn,
    AfterGnn,
}

impl FromStr for Stage {
    type Err = ErcError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "before_gnn" => Ok(Stage::BeforeGnn),
            "after_gnn" => Ok(Stage::AfterGnn),
            other => Err(ErcError::InvalidArgument(format!("unknown stage \"{other}\""))),
        }
    }
}

/// One CSV row per utterance of `split`:
/// `dialogue_id,utterance_idx,gold,v0,...`. Multi-label gold is written as
/// `;`-joined bits.
pub fn dump_embeddings(corpus: &Corpus, params: &ModelParams, split: Split, stage: Stage) -> Result<String> {
    let dialogues: Vec<_> = corpus.split(split).collect();
    let stages = dialogues
        .par_iter()
        .map(|d| model::stage_features(d, params))
        .collect::<Result<Vec<_>>>()?;
    let width = params.arch.input_width;
    let mut out = String::from("dialogue_id,utterance_idx,gold");
    for k in 0..width {
        let _ = write!(out, ",v{k}");
    }
    out.push('\n');
    for (d, (before, after)) in dialogues.iter().zip(&stages) {
        let t = match stage {
            Stage::BeforeGnn => before,
            Stage::AfterGnn => after,
        };
        for (i, u) in d.utterances.iter().enumerate() {
            let gold = match &u.label {
                Label::Single(c) => c.to_string(),
                Label::Multi(bits) => bits.iter().map(u8::to_string).collect::<Vec<_>>().join(";"),
            };
            let _ = write!(out, "{},{i},{gold}", d.dialogue_id);
            for v in t.row(i) {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
    }
    Ok(out)
}
