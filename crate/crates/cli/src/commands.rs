use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use erc_core::analysis::{self, Stage, StudyGrid, StudySpec};
use erc_core::dataset::{self, ModalityDims};
use erc_core::graph::{self, GraphOptions};
use erc_core::train::{self, Checkpoint};
use erc_core::{Corpus, Dependency, ErcError, Split, SynthSpec, TaskMode, TrainConfig, TransitionLevel};

use crate::manifest::RunManifest;
use crate::{CliError, CliResult, ConfigArgs};

fn file_err(path: &Path) -> impl FnOnce(ErcError) -> CliError + '_ {
    move |source| CliError::File {
        path: path.display().to_string(),
        source,
    }
}

fn load_corpus(path: &Path) -> CliResult<(Corpus, String)> {
    let file = File::open(path).map_err(|e| file_err(path)(e.into()))?;
    let corpus = Corpus::read_jsonl(BufReader::new(file)).map_err(file_err(path))?;
    let fingerprint = corpus.fingerprint()?;
    Ok((corpus, fingerprint))
}

fn load_checkpoint(path: &Path) -> CliResult<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| file_err(path)(e.into()))?;
    Checkpoint::from_json_bytes(&bytes).map_err(file_err(path))
}

/// Rejects a checkpoint trained on a different corpus.
fn check_fingerprint(ckpt: &Checkpoint, corpus_fp: &str) -> CliResult<()> {
    if ckpt.corpus_fingerprint != corpus_fp {
        return Err(CliError::Usage(format!(
            "corpus fingerprint mismatch: checkpoint {} vs corpus {}",
            ckpt.corpus_fingerprint, corpus_fp
        )));
    }
    Ok(())
}

/// File config first, then `--set` overrides, then `--seed`.
fn resolve_config(args: &ConfigArgs) -> CliResult<TrainConfig> {
    let mut cfg = TrainConfig::default();
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path).map_err(|e| file_err(path)(e.into()))?;
        cfg.apply_kv(&text).map_err(file_err(path))?;
    }
    for kv in &args.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got \"{kv}\"")))?;
        cfg.set(k, v)?;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn find_dialogue<'a>(corpus: &'a Corpus, id: &str) -> CliResult<&'a erc_core::Dialogue> {
    corpus
        .find(id)
        .ok_or_else(|| CliError::Usage(format!("unknown dialogue id \"{id}\"")))
}

fn parse<T: std::str::FromStr<Err = ErcError>>(s: &str) -> CliResult<T> {
    Ok(s.parse()?)
}

/// Keeps file names portable whatever the dialogue id contains.
fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

struct Output {
    dir: PathBuf,
    manifest: RunManifest,
}

impl Output {
    fn new(dir: &Path, manifest: RunManifest) -> CliResult<Self> {
        std::fs::create_dir_all(dir).map_err(|e| file_err(dir)(e.into()))?;
        Ok(Output {
            dir: dir.to_path_buf(),
            manifest,
        })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> CliResult<PathBuf> {
        let path = self.dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| file_err(&path)(e.into()))?;
        self.manifest.artifacts.push(path.clone());
        Ok(path)
    }

    fn write_json<T: serde::Serialize>(&mut self, name: &str, value: &T) -> CliResult<PathBuf> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(ErcError::from)?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }

    fn finish(self) -> CliResult<()> {
        let name = format!("{}_manifest.json", self.manifest.command);
        self.manifest.write(&self.dir.join(name))
    }
}

pub fn train(corpus_path: &Path, args: &ConfigArgs, out: &Path) -> CliResult<()> {
    let cfg = resolve_config(args)?;
    let (corpus, fp) = load_corpus(corpus_path)?;
    let manifest = RunManifest::new("train")
        .with_config(&cfg)
        .with_corpus(corpus_path, &fp);
    let mut output = Output::new(out, manifest)?;
    let outcome = train::train(&corpus, &cfg)?;
    output.write("checkpoint.json", &outcome.checkpoint.to_json_bytes()?)?;
    output.write("history.csv", train::history_csv(&outcome.history).as_bytes())?;
    let valid = outcome.checkpoint.valid_metrics;
    println!(
        "best epoch {} of {}: valid wF1 {:.2}, acc {:.2}",
        outcome.best_epoch,
        outcome.history.len(),
        valid.weighted_f1 * 100.0,
        valid.accuracy * 100.0
    );
    output.finish()
}

pub fn eval(corpus_path: &Path, ckpt_path: &Path, split: &str, level: &str, out: &Path) -> CliResult<()> {
    let split: Split = parse(split)?;
    let level: TransitionLevel = parse(level)?;
    let (corpus, fp) = load_corpus(corpus_path)?;
    let ckpt = load_checkpoint(ckpt_path)?;
    check_fingerprint(&ckpt, &fp)?;
    let params = ckpt.model()?;
    let split_name = split_name(split);
    let manifest = RunManifest::new("eval")
        .with_config(&ckpt.config)
        .with_corpus(corpus_path, &fp)
        .arg("checkpoint", ckpt_path.display())
        .arg("split", split_name)
        .arg("shift_level", level_name(level));
    let mut output = Output::new(out, manifest)?;
    let name = format!("eval_{split_name}.json");
    match corpus.task_mode {
        TaskMode::Single => {
            let report = train::evaluate(&corpus, &params, split, level)?;
            print!("{}", report.to_table());
            output.write_json(&name, &report)?;
        }
        TaskMode::Multi => {
            let report = train::evaluate_multilabel(&corpus, &params, split)?;
            for (label, f1) in report.label_names.iter().zip(&report.per_class_f1) {
                println!("{label:<12} {:>6.2}", f1 * 100.0);
            }
            println!("{:<12} {:>6.2}", "mean", report.mean_f1 * 100.0);
            output.write_json(&name, &report)?;
        }
    }
    output.finish()
}

pub struct GraphFlags {
    pub past: String,
    pub future: String,
    pub edge_mode: String,
    pub self_loops: bool,
    pub num_speakers: Option<usize>,
}

pub fn graph(corpus_path: &Path, id: &str, flags: GraphFlags, out: &Path) -> CliResult<()> {
    let (corpus, fp) = load_corpus(corpus_path)?;
    let d = find_dialogue(&corpus, id)?;
    let opts = GraphOptions {
        past: parse(&flags.past)?,
        future: parse(&flags.future)?,
        edge_mode: parse(&flags.edge_mode)?,
        self_loops: flags.self_loops,
        num_speakers: flags.num_speakers.unwrap_or_else(|| corpus.max_speakers()),
    };
    let g = graph::build_dialogue_graph(d, &opts)?;
    let manifest = RunManifest::new("graph")
        .with_corpus(corpus_path, &fp)
        .arg("dialogue_id", id)
        .arg("past", opts.past)
        .arg("future", opts.future)
        .arg("edge_mode", opts.edge_mode)
        .arg("self_loops", opts.self_loops)
        .arg("num_speakers", opts.num_speakers);
    let mut output = Output::new(out, manifest)?;
    let path = output.write_json(&format!("graph_{}.json", file_stem(id)), &g.to_json())?;
    println!("{} nodes, {} edges -> {}", g.num_nodes, g.edges.len(), path.display());
    output.finish()
}

pub fn mask(corpus_path: &Path, ckpt_path: &Path, id: &str, out: &Path) -> CliResult<()> {
    let (corpus, fp) = load_corpus(corpus_path)?;
    let ckpt = load_checkpoint(ckpt_path)?;
    check_fingerprint(&ckpt, &fp)?;
    let d = find_dialogue(&corpus, id)?;
    let result = train::mask_importance(d, &ckpt.model()?)?;
    let manifest = RunManifest::new("mask")
        .with_config(&ckpt.config)
        .with_corpus(corpus_path, &fp)
        .arg("checkpoint", ckpt_path.display())
        .arg("dialogue_id", id);
    let mut output = Output::new(out, manifest)?;
    let csv = train::mask_csv(&result);
    output.write(&format!("mask_{}.csv", file_stem(id)), csv.as_bytes())?;
    print!("{csv}");
    output.finish()
}

pub fn study(
    corpus_path: &Path,
    kind: &str,
    grid: &str,
    seeds: &str,
    args: &ConfigArgs,
    out: &Path,
) -> CliResult<()> {
    let base = resolve_config(args)?;
    let seeds = seeds
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<u64>()
                .map_err(|_| CliError::Usage(format!("invalid seed \"{s}\"")))
        })
        .collect::<CliResult<Vec<u64>>>()?;
    let spec = StudySpec {
        grid: StudyGrid::parse(kind, grid)?,
        base,
        seeds,
    };
    spec.validate()?;
    let (corpus, fp) = load_corpus(corpus_path)?;
    let manifest = RunManifest::new("study")
        .with_config(&spec.base)
        .with_corpus(corpus_path, &fp)
        .arg("kind", spec.grid.kind())
        .arg("grid", grid)
        .arg("seeds", spec.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(","));
    let mut output = Output::new(out, manifest)?;
    let table = spec.run(&corpus)?;
    output.write(&format!("study_{}.csv", spec.grid.kind()), table.to_csv().as_bytes())?;
    print!("{}", table.to_pretty());
    output.finish()
}

pub fn embed(corpus_path: &Path, ckpt_path: &Path, stage: &str, split: &str, out: &Path) -> CliResult<()> {
    let stage: Stage = parse(stage)?;
    let split: Split = parse(split)?;
    let (corpus, fp) = load_corpus(corpus_path)?;
    let ckpt = load_checkpoint(ckpt_path)?;
    check_fingerprint(&ckpt, &fp)?;
    let csv = analysis::dump_embeddings(&corpus, &ckpt.model()?, split, stage)?;
    let stage_name = match stage {
        Stage::BeforeGnn => "before_gnn",
        Stage::AfterGnn => "after_gnn",
    };
    let manifest = RunManifest::new("embed")
        .with_config(&ckpt.config)
        .with_corpus(corpus_path, &fp)
        .arg("checkpoint", ckpt_path.display())
        .arg("stage", stage_name)
        .arg("split", split_name(split));
    let mut output = Output::new(out, manifest)?;
    let path = output.write(&format!("embed_{stage_name}_{}.csv", split_name(split)), csv.as_bytes())?;
    println!("{} rows -> {}", csv.lines().count().saturating_sub(1), path.display());
    output.finish()
}

pub fn transitions(corpus_path: &Path, level: &str, out: &Path) -> CliResult<()> {
    let level: TransitionLevel = parse(level)?;
    let (corpus, fp) = load_corpus(corpus_path)?;
    let stats = graph::transition_stats(&corpus, level)?;
    let manifest = RunManifest::new("transitions")
        .with_corpus(corpus_path, &fp)
        .arg("level", level_name(level));
    let mut output = Output::new(out, manifest)?;
    output.write_json(&format!("transitions_{}.json", level_name(level)), &stats)?;
    let width = corpus.label_names.iter().map(String::len).max().unwrap_or(0).max(6);
    print!("{:<width$}", "");
    for name in &corpus.label_names {
        print!(" {name:>width$}");
    }
    println!();
    for (name, row) in corpus.label_names.iter().zip(&stats.normalized) {
        print!("{name:<width$}");
        for v in row {
            print!(" {:>width$.3}", v);
        }
        println!();
    }
    output.finish()
}

pub struct SynthFlags {
    pub dependency: String,
    pub seed: u64,
    pub dialogues: usize,
    pub utterances: usize,
    pub speakers: usize,
    pub classes: usize,
    pub dims: String,
    pub name: String,
}

pub fn synth(flags: SynthFlags, out: &Path) -> CliResult<()> {
    let dependency: Dependency = parse(&flags.dependency)?;
    let dims: Vec<usize> = flags
        .dims
        .split(',')
        .map(|s| s.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::Usage(format!("--dims expects a,t,v widths, got \"{}\"", flags.dims)))?;
    let [a, t, v] = dims[..] else {
        return Err(CliError::Usage(format!("--dims expects three widths, got \"{}\"", flags.dims)));
    };
    if flags.name.contains(['/', '\\']) || flags.name.is_empty() || flags.name == ".." {
        return Err(CliError::Usage(format!("--name must be a plain file name, got \"{}\"", flags.name)));
    }
    let mut spec = SynthSpec::new(dependency, flags.seed);
    spec.num_dialogues = flags.dialogues;
    spec.utterances_per_dialogue = flags.utterances;
    spec.num_speakers = flags.speakers;
    spec.num_classes = flags.classes;
    spec.dims = ModalityDims { a, t, v };
    let corpus = dataset::synth_corpus(&spec)?;
    let bytes = corpus.to_jsonl()?;
    let mut manifest = RunManifest::new("synth")
        .arg("dependency", &flags.dependency)
        .arg("dialogues", spec.num_dialogues)
        .arg("utterances", spec.utterances_per_dialogue)
        .arg("speakers", spec.num_speakers)
        .arg("classes", spec.num_classes)
        .arg("dims", &flags.dims);
    manifest.seed = Some(spec.seed);
    let mut output = Output::new(out, manifest)?;
    let path = output.write(&flags.name, &bytes)?;
    output.manifest.corpus = Some(path.clone());
    output.manifest.corpus_fingerprint = Some(corpus.fingerprint()?);
    println!("{} dialogues -> {}", corpus.dialogues.len(), path.display());
    output.finish()
}

fn split_name(split: Split) -> &'static str {
    match split {
        Split::Train => "train",
        Split::Valid => "valid",
        Split::Test => "test",
    }
}

fn level_name(level: TransitionLevel) -> &'static str {
    match level {
        TransitionLevel::Utterance => "utterance",
        TransitionLevel::Speaker => "speaker",
    }
}
