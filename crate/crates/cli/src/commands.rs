use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use hyfuse_core::autodiff::Tensor;
use hyfuse_core::data::{
    lookup_representation, make_folds_for_labels, pair_datasets, read_embedding_file, synth_generate,
    write_embedding_file, EmbeddingSet, Family, Sample, EMBEDDING_VERSION, REGISTRY,
};
use hyfuse_core::models::{self, load_checkpoint, save_checkpoint, ModelKind, ModelSpec};
use hyfuse_core::train::{cross_validate, to_canonical_json, train_holdout, CvReport, Dataset, FoldReport, TrainConfig};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::config::{self, FileConfig, Globals};
use crate::{
    Cli, CliError, Command, CrossValidateArgs, ExportArgs, InspectArgs, ModelFlags, PairMatrixArgs, Result,
    RunManifest, SynthArgs, TrainArgs,
};

pub const CHECKPOINT_FILE: &str = "model.hyfc";
pub const REPORT_FILE: &str = "report.json";
pub const MATRIX_FILE: &str = "matrix.json";
pub const MATRIX_REPORTS_FILE: &str = "reports.json";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const FEATURES_FILE: &str = "features.hyfe";

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Train(_) => "train",
        Command::CrossValidate(_) => "cross-validate",
        Command::PairMatrix(_) => "pair-matrix",
        Command::Synth(_) => "synth",
        Command::ExportFeatures(_) => "export-features",
        Command::Inspect(_) => "inspect",
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    if let Command::Inspect(args) = &cli.command {
        return inspect(args);
    }
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let name = command_name(&cli.command);
    let g = config::globals(cli.seed, cli.jobs, cli.out.clone(), &file, name)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(g.jobs)
        .build()
        .map_err(|e| CliError::Config(format!("cannot start {} worker threads: {e}", g.jobs)))?;

    let start = Instant::now();
    let mut manifest = pool.install(|| match &cli.command {
        Command::Train(a) => train(a, &file, &g),
        Command::CrossValidate(a) => cross_validate_cmd(a, &file, &g),
        Command::PairMatrix(a) => pair_matrix(a, &file, &g),
        Command::Synth(a) => synth(a, &file, &g),
        Command::ExportFeatures(a) => export_features(a, &g),
        Command::Inspect(_) => unreachable!("handled above"),
    })?;
    if let Some(p) = &cli.config {
        manifest.add_input(p)?;
    }
    manifest.wall_seconds = start.elapsed().as_secs_f64();
    manifest.write(&g.out)?;
    Ok(())
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

fn create_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = to_canonical_json(value).map_err(|e| io_err(path, e))?;
    write_text(path, &text)
}

/// Reads an embedding file and checks it against the registry when its
/// name is a known representation.
fn load_set(path: &Path) -> Result<EmbeddingSet> {
    let set = read_embedding_file(path).map_err(|e| io_err(path, e))?;
    if let Some(rep) = lookup_representation(&set.name) {
        set.check_representation(&set.name).map_err(|e| io_err(path, e))?;
        if let Some(f) = set.family.filter(|&f| f != rep.family) {
            return Err(io_err(
                path,
                format!("tagged {f} but {} is a {} representation", rep.name, rep.family),
            ));
        }
    }
    Ok(set)
}

struct Loaded {
    data: Dataset,
    names: Vec<String>,
    paths: Vec<PathBuf>,
}

fn load_inputs(rep_a: Option<&Path>, rep_b: Option<&Path>, kind: ModelKind) -> Result<Loaded> {
    let rep_a = rep_a.ok_or_else(|| CliError::Config("--rep-a is required".into()))?;
    match (kind.is_fusion(), rep_b) {
        (true, None) => Err(CliError::Config(format!("--rep-b is required for model {kind}"))),
        (false, Some(_)) => Err(CliError::Config(format!(
            "--rep-b is only used by fusion models, not {kind}"
        ))),
        (false, None) => {
            let a = load_set(rep_a)?;
            Ok(Loaded {
                data: Dataset::single(&a)?,
                names: vec![a.name.clone()],
                paths: vec![rep_a.to_path_buf()],
            })
        }
        (true, Some(rep_b)) => {
            let a = load_set(rep_a)?;
            let b = load_set(rep_b)?;
            let pair = pair_datasets(&a, &b)?;
            Ok(Loaded {
                data: Dataset::paired(&pair)?,
                names: vec![a.name.clone(), b.name.clone()],
                paths: vec![rep_a.to_path_buf(), rep_b.to_path_buf()],
            })
        }
    }
}

fn require_kind(flags: &ModelFlags, file: &FileConfig) -> Result<ModelKind> {
    config::model_kind(flags, file)?.ok_or_else(|| CliError::Config("--model is required".into()))
}

#[derive(Debug, Serialize)]
struct TrainReport<'a> {
    model: &'a ModelSpec,
    train_config: &'a TrainConfig,
    seed: u64,
    representations: &'a [String],
    num_samples: usize,
    class_names: &'a [String],
    holdout: &'a FoldReport,
}

fn train(args: &TrainArgs, file: &FileConfig, g: &Globals) -> Result<RunManifest> {
    let kind = require_kind(&args.model, file)?;
    let cfg = config::train_config(&args.train, file, g.seed)?;
    let loaded = load_inputs(args.rep_a.as_deref(), args.rep_b.as_deref(), kind)?;
    let ds = &loaded.data;
    let spec = config::model_spec(kind, ds.input_dims(), ds.num_classes(), &args.model, file)?;
    create_out(&g.out)?;

    let (params, report) = train_holdout(ds, &spec, &cfg)?;
    let ckpt = g.out.join(CHECKPOINT_FILE);
    save_checkpoint(&ckpt, &spec, &params)?;
    write_json(
        &g.out.join(REPORT_FILE),
        &TrainReport {
            model: &spec,
            train_config: &cfg,
            seed: g.seed,
            representations: &loaded.names,
            num_samples: ds.len(),
            class_names: &ds.class_names,
            holdout: &report,
        },
    )?;

    let mut m = RunManifest::new(
        "train",
        json!({
            "globals": g,
            "model": spec,
            "train": cfg,
            "rep_a": loaded.paths[0],
            "rep_b": loaded.paths.get(1),
        }),
    );
    for p in &loaded.paths {
        m.add_input(p)?;
    }
    m.artifacts = vec![CHECKPOINT_FILE.into(), REPORT_FILE.into()];
    Ok(m)
}

fn cross_validate_cmd(args: &CrossValidateArgs, file: &FileConfig, g: &Globals) -> Result<RunManifest> {
    let d = &args.data;
    let kind = require_kind(&d.model, file)?;
    let cfg = config::train_config(&d.train, file, g.seed)?;
    let (k, stratified) = config::fold_settings(args.folds, args.unstratified, file);
    let loaded = load_inputs(d.rep_a.as_deref(), d.rep_b.as_deref(), kind)?;
    let ds = &loaded.data;
    let spec = config::model_spec(kind, ds.input_dims(), ds.num_classes(), &d.model, file)?;
    let plan = make_folds_for_labels(&ds.ids, &ds.labels, k, g.seed, stratified)?;
    create_out(&g.out)?;

    let report = cross_validate(ds, &spec, &cfg, &plan)?;
    write_json(&g.out.join(REPORT_FILE), &report)?;

    let mut m = RunManifest::new(
        "cross-validate",
        json!({
            "globals": g,
            "model": spec,
            "train": cfg,
            "folds": k,
            "stratified": stratified,
            "rep_a": loaded.paths[0],
            "rep_b": loaded.paths.get(1),
        }),
    );
    for p in &loaded.paths {
        m.add_input(p)?;
    }
    m.artifacts = vec![REPORT_FILE.into()];
    Ok(m)
}

fn parse_combination(s: &str) -> Result<(Family, Family)> {
    let parts: Vec<&str> = s.split('+').map(str::trim).collect();
    match parts.as_slice() {
        [a, b] => {
            let fa: Family = a.parse().map_err(|e| CliError::Config(format!("{e}")))?;
            let fb: Family = b.parse().map_err(|e| CliError::Config(format!("{e}")))?;
            if fa == Family::Cbr && fb == Family::Rlr {
                return Err(CliError::Config("use rlr+cbr rather than cbr+rlr".into()));
            }
            Ok((fa, fb))
        }
        _ => Err(CliError::Config(format!(
            "combination must be rlr+cbr, rlr+rlr or cbr+cbr, got {s:?}"
        ))),
    }
}

struct Tagged {
    set: EmbeddingSet,
    family: Family,
    label: String,
    path: PathBuf,
}

fn registry_rank(name: &str) -> usize {
    lookup_representation(name)
        .and_then(|r| REGISTRY.iter().position(|x| x.name == r.name))
        .unwrap_or(usize::MAX)
}

fn load_tagged_dir(dir: &Path) -> Result<Vec<Tagged>> {
    let entries = fs::read_dir(dir).map_err(|e| io_err(dir, e))?;
    let mut paths = Vec::new();
    for e in entries {
        let p = e.map_err(|e| io_err(dir, e))?.path();
        if p.extension().is_some_and(|x| x == "hyfe") {
            paths.push(p);
        }
    }
    paths.sort();
    let mut out = Vec::new();
    for path in paths {
        let set = load_set(&path)?;
        let rep = lookup_representation(&set.name);
        let family = set
            .family
            .or(rep.map(|r| r.family))
            .ok_or_else(|| io_err(&path, "no family tag in the sidecar and not a known representation"))?;
        let label = rep.map_or_else(|| set.name.clone(), |r| r.short.to_string());
        out.push(Tagged { set, family, label, path });
    }
    out.sort_by(|x, y| {
        (registry_rank(&x.set.name), &x.set.name).cmp(&(registry_rank(&y.set.name), &y.set.name))
    });
    Ok(out)
}

#[derive(Debug, Clone, Copy, Serialize)]
struct Cell {
    #[serde(rename = "Acc")]
    acc: f64,
    #[serde(rename = "F1")]
    f1: f64,
}

impl Cell {
    fn of(r: &CvReport) -> Self {
        Self {
            acc: 100.0 * r.mean_accuracy,
            f1: 100.0 * r.mean_macro_f1,
        }
    }
}

#[derive(Debug, Serialize)]
struct MatrixRow {
    pair: String,
    rep_a: String,
    rep_b: String,
    family_a: Family,
    family_b: Family,
    concat: Cell,
    hyfuse: Cell,
}

#[derive(Debug, Serialize)]
struct Best {
    pair: String,
    method: ModelKind,
    #[serde(flatten)]
    cell: Cell,
}

#[derive(Debug, Serialize)]
struct Matrix {
    combination: String,
    num_folds: usize,
    seed: u64,
    methods: [ModelKind; 2],
    rows: Vec<MatrixRow>,
    best: Best,
}

const METHODS: [ModelKind; 2] = [ModelKind::Concat, ModelKind::Hyfuse];

fn pair_matrix(args: &PairMatrixArgs, file: &FileConfig, g: &Globals) -> Result<RunManifest> {
    if args.model.model.is_some() {
        return Err(CliError::Config("--model does not apply to pair-matrix".into()));
    }
    let (fa, fb) = parse_combination(&args.combination)?;
    let combination = format!("{fa}+{fb}");
    let cfg = config::train_config(&args.train, file, g.seed)?;
    let (k, stratified) = config::fold_settings(args.folds, args.unstratified, file);
    let files = load_tagged_dir(&args.dir)?;

    let mut pairs = Vec::new();
    for (i, a) in files.iter().enumerate() {
        for (j, b) in files.iter().enumerate() {
            let wanted = if fa == fb { i < j } else { i != j };
            if wanted && a.family == fa && b.family == fb {
                pairs.push((a, b));
            }
        }
    }
    if pairs.is_empty() {
        return Err(CliError::Data(format!(
            "no {combination} pairs among the {} files in {}",
            files.len(),
            args.dir.display()
        )));
    }

    let mut jobs = Vec::new();
    for (a, b) in &pairs {
        let ds = Dataset::paired(&pair_datasets(&a.set, &b.set)?)?;
        let plan = make_folds_for_labels(&ds.ids, &ds.labels, k, g.seed, stratified)?;
        for kind in METHODS {
            let spec = config::model_spec(kind, ds.input_dims(), ds.num_classes(), &args.model, file)?;
            jobs.push((ds.clone(), plan.clone(), spec));
        }
    }
    create_out(&g.out)?;

    let reports: Vec<CvReport> = jobs
        .par_iter()
        .map(|(ds, plan, spec)| cross_validate(ds, spec, &cfg, plan).map_err(CliError::from))
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    let mut by_cell = BTreeMap::new();
    let mut best: Option<Best> = None;
    for ((a, b), cells) in pairs.iter().zip(reports.chunks(METHODS.len())) {
        let pair = format!("{} + {}", a.label, b.label);
        for (kind, r) in METHODS.iter().zip(cells) {
            let c = Cell::of(r);
            let better = best
                .as_ref()
                .is_none_or(|bst| (c.acc, c.f1) > (bst.cell.acc, bst.cell.f1));
            if better {
                best = Some(Best {
                    pair: pair.clone(),
                    method: *kind,
                    cell: c,
                });
            }
            by_cell.insert(format!("{pair} / {kind}"), r);
        }
        rows.push(MatrixRow {
            pair,
            rep_a: a.set.name.clone(),
            rep_b: b.set.name.clone(),
            family_a: a.family,
            family_b: b.family,
            concat: Cell::of(&cells[0]),
            hyfuse: Cell::of(&cells[1]),
        });
    }
    let matrix = Matrix {
        combination: combination.clone(),
        num_folds: k,
        seed: g.seed,
        methods: METHODS,
        rows,
        best: best.expect("at least one pair"),
    };
    write_json(&g.out.join(MATRIX_FILE), &matrix)?;
    write_json(&g.out.join(MATRIX_REPORTS_FILE), &by_cell)?;
    write_text(&g.out.join(SUMMARY_FILE), &summary(&matrix))?;

    let mut m = RunManifest::new(
        "pair-matrix",
        json!({
            "globals": g,
            "combination": combination,
            "dir": args.dir,
            "train": cfg,
            "folds": k,
            "stratified": stratified,
            "models": jobs.iter().map(|j| &j.2).collect::<Vec<_>>(),
        }),
    );
    for f in &files {
        m.add_input(&f.path)?;
    }
    m.artifacts = vec![MATRIX_FILE.into(), MATRIX_REPORTS_FILE.into(), SUMMARY_FILE.into()];
    Ok(m)
}

fn summary(m: &Matrix) -> String {
    let width = m.rows.iter().map(|r| r.pair.len()).max().unwrap_or(4).max(4);
    let mut s = format!("{}, {}-fold, seed {}\n", m.combination, m.num_folds, m.seed);
    s += &format!(
        "{:width$}  {:>10}  {:>9}  {:>10}  {:>9}\n",
        "pair", "concat Acc", "concat F1", "hyfuse Acc", "hyfuse F1"
    );
    for r in &m.rows {
        s += &format!(
            "{:width$}  {:>10.2}  {:>9.2}  {:>10.2}  {:>9.2}\n",
            r.pair, r.concat.acc, r.concat.f1, r.hyfuse.acc, r.hyfuse.f1
        );
    }
    s += &format!(
        "best pair: {} ({}, Acc {:.2}, F1 {:.2})\n",
        m.best.pair, m.best.method, m.best.cell.acc, m.best.cell.f1
    );
    s
}

fn synth(args: &SynthArgs, file: &FileConfig, g: &Globals) -> Result<RunManifest> {
    let settings = config::synth_settings(args, file, g.seed)?;
    let (mut a, mut b) = synth_generate(&settings.spec)?;
    a.name = settings.name_a.clone();
    b.name = settings.name_b.clone();
    a.family = Some(settings.family_a);
    b.family = Some(settings.family_b);
    create_out(&g.out)?;

    let mut artifacts = Vec::new();
    for set in [&a, &b] {
        let file_name = format!("{}.hyfe", set.name);
        let path = g.out.join(&file_name);
        write_embedding_file(set, &path).map_err(|e| io_err(&path, e))?;
        artifacts.push(file_name);
        artifacts.push(format!("{}.json", set.name));
    }
    let mut m = RunManifest::new("synth", json!({ "globals": g, "synth": settings }));
    m.artifacts = artifacts;
    Ok(m)
}

const EXPORT_BATCH: usize = 256;

fn export_features(args: &ExportArgs, g: &Globals) -> Result<RunManifest> {
    let (spec, params) = load_checkpoint(&args.checkpoint).map_err(|e| io_err(&args.checkpoint, e))?;
    let a = load_set(&args.rep_a)?;
    let b = match (spec.kind.is_fusion(), &args.rep_b) {
        (true, None) => {
            return Err(CliError::Config(format!(
                "--rep-b is required for the {} checkpoint",
                spec.kind
            )))
        }
        (false, Some(_)) => {
            return Err(CliError::Config(format!(
                "--rep-b is only used by fusion models, not {}",
                spec.kind
            )))
        }
        (true, Some(p)) => Some(load_set(p)?),
        (false, None) => None,
    };
    let ds = match &b {
        Some(b) => Dataset::paired(&pair_datasets(&a, b)?)?,
        None => Dataset::single(&a)?,
    };
    if ds.input_dims() != spec.input_dims {
        return Err(CliError::Data(format!(
            "inputs have dims {:?}, checkpoint expects {:?}",
            ds.input_dims(),
            spec.input_dims
        )));
    }
    create_out(&g.out)?;

    let all: Vec<usize> = (0..ds.len()).collect();
    let mut rows: Vec<Vec<f32>> = Vec::with_capacity(ds.len());
    for chunk in all.chunks(EXPORT_BATCH) {
        let (xa, xb, _) = ds.batch(chunk)?;
        let feats: Tensor<f32> = models::penultimate_features(&spec, &params, &xa, xb.as_ref())?;
        rows.extend((0..chunk.len()).map(|r| feats.row(r).to_vec()));
    }
    // back to the storage order of rep-a
    let pos: BTreeMap<&str, usize> = ds.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let mut out = EmbeddingSet::new("features", spec.hidden_units, a.class_names.clone());
    for s in &a.samples {
        let i = pos[s.id.as_str()];
        out.samples.push(Sample {
            id: s.id.clone(),
            label: s.label,
            vector: rows[i].clone(),
        });
    }
    let path = g.out.join(FEATURES_FILE);
    write_embedding_file(&out, &path).map_err(|e| io_err(&path, e))?;

    let mut m = RunManifest::new(
        "export-features",
        json!({
            "globals": g,
            "checkpoint": args.checkpoint,
            "model": spec,
            "rep_a": args.rep_a,
            "rep_b": args.rep_b,
        }),
    );
    m.add_input(&args.checkpoint)?;
    m.add_input(&args.rep_a)?;
    if let Some(p) = &args.rep_b {
        m.add_input(p)?;
    }
    m.artifacts = vec![FEATURES_FILE.into(), "features.json".into()];
    Ok(m)
}

fn inspect(args: &InspectArgs) -> Result<()> {
    let set = load_set(&args.file)?;
    let mut counts = vec![0usize; set.num_classes()];
    for s in &set.samples {
        counts[s.label] += 1;
    }
    println!("file: {}", args.file.display());
    println!("name: {}", set.name);
    println!("family: {}", set.family.map_or("untagged".to_string(), |f| f.to_string()));
    println!("format version: {EMBEDDING_VERSION}");
    println!("dim: {}", set.dim);
    println!("samples: {}", set.len());
    println!("classes: {}", set.num_classes());
    for (name, n) in set.class_names.iter().zip(&counts) {
        println!("  {name}: {n}");
    }
    match lookup_representation(&set.name) {
        Some(r) => println!("registry: {} ({}, {}, dim {})", r.name, r.short, r.family, r.dim),
        None => println!("registry: not a known representation"),
    }
    Ok(())
}
