use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{Paths, RunConfig};
use super::dataset::{read_dataset, write_dataset, Dataset, Manifest};
use super::plot::recall_plot_svg;
use super::HarnessError;
use crate::checkpoint::Checkpoint;
use crate::detection::{mean_average_precision, Detection};
use crate::eval::{EvalConfig, EvalReport, Task};
use crate::geometry::BoxMode;
use crate::model::CategoryVocabulary;
use crate::pipeline::{
    evaluate_corpus, positive_pair_features, training_scene, Cascade, DetectorStage, FrequencyBaseline, Method, ObjectDetector, ObjectView,
    PairProposer, PairSource, PpgStage, RpcmStage,
};
use crate::ppg::ranking_auc;
use crate::rpcm::{EmbeddingTable, RpcmModel};
use crate::synth::{bundled_recipes, generate_corpus, SceneRecipe, SyntheticScene};

/// K grid of the recall curves.
pub const CURVE_KS: [usize; 12] = [1, 2, 5, 10, 20, 50, 100, 200, 500, 1000, 1500, 2000];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub k: usize,
    pub mr: f64,
    pub mmr: f64,
    pub hmr: f64,
}

/// Everything `report` needs from one evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub run: String,
    pub method: String,
    pub split: String,
    pub deviations: Vec<String>,
    pub report: EvalReport,
    pub curve: Vec<CurvePoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Ppg,
    Rpcm,
    Detector,
    All,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Ppg => "ppg",
            Stage::Rpcm => "rpcm",
            Stage::Detector => "detector",
            Stage::All => "all",
        }
    }
}

impl std::str::FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ppg" => Ok(Stage::Ppg),
            "rpcm" => Ok(Stage::Rpcm),
            "detector" => Ok(Stage::Detector),
            "all" => Ok(Stage::All),
            _ => Err(format!("unknown stage `{s}` (expected ppg, rpcm, detector or all)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainOptions {
    pub stage: Stage,
    /// Continue from an existing checkpoint instead of starting over.
    pub resume: bool,
    /// Stop after this epoch; the configured count when absent.
    pub until_epoch: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub stage: &'static str,
    pub epochs_done: u64,
    pub final_loss: Option<f64>,
    pub checkpoint: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluateOptions {
    pub tasks: Vec<Task>,
    pub methods: Vec<Method>,
    /// `val` or `test`.
    pub split: String,
}

impl Default for EvaluateOptions {
    fn default() -> Self {
        Self { tasks: vec![Task::PredCls], methods: vec![Method::Rpcm], split: "test".into() }
    }
}

fn write(path: &Path, text: &str) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(HarnessError::io(dir))?;
    }
    std::fs::write(path, text).map_err(HarnessError::io(path))
}

fn read_text(path: &Path) -> Result<String, HarnessError> {
    std::fs::read_to_string(path).map_err(HarnessError::io(path))
}

fn load_vocabulary(cfg: &RunConfig) -> Result<CategoryVocabulary, HarnessError> {
    match &cfg.vocabulary {
        Some(p) => CategoryVocabulary::from_text(&read_text(p)?).map_err(|e| HarnessError::Config(format!("{}: {e}", p.display()))),
        None => Ok(CategoryVocabulary::toy()),
    }
}

fn load_recipes(cfg: &RunConfig) -> Result<Vec<SceneRecipe>, HarnessError> {
    if cfg.recipes.is_empty() {
        return Ok(bundled_recipes());
    }
    cfg.recipes
        .iter()
        .map(|p| SceneRecipe::from_toml(&read_text(p)?).map_err(|e| HarnessError::Config(format!("{}: {e}", p.display()))))
        .collect()
}

fn load_table(cfg: &RunConfig) -> Result<EmbeddingTable, HarnessError> {
    match &cfg.word_vectors {
        Some(p) => EmbeddingTable::from_text(&read_text(p)?).map_err(|e| HarnessError::Config(format!("{}: {e}", p.display()))),
        None => Ok(EmbeddingTable::bundled()),
    }
}

/// Generates the corpus, splits it and writes it to `paths.data_dir`.
pub fn cmd_generate(cfg: &RunConfig) -> Result<Manifest, HarnessError> {
    let vocab = load_vocabulary(cfg)?;
    let recipes = load_recipes(cfg)?;
    for r in &recipes {
        r.validate(&vocab).map_err(|e| HarnessError::Config(format!("recipe `{}`: {e}", r.name)))?;
    }
    let corpus = generate_corpus(&recipes, &vocab, cfg.scenes, cfg.seed).map_err(|e| HarnessError::Config(e.to_string()))?;
    let [train, val, test] = cfg.splits.split(&corpus)?;
    write_dataset(&cfg.paths.data_dir, &vocab, [&train, &val, &test], cfg.seed, recipes.iter().map(|r| r.name.clone()).collect())
}

fn checkpoint_path(cfg: &RunConfig, stage: &str) -> PathBuf {
    cfg.paths.checkpoint_dir.join(format!("{stage}.ckpt"))
}

fn load_checkpoint(cfg: &RunConfig, stage: &str) -> Result<Checkpoint, HarnessError> {
    let path = checkpoint_path(cfg, stage);
    if !path.is_file() {
        return Err(HarnessError::Missing {
            stage: stage.into(),
            what: format!("a trained checkpoint (run `train --stage {stage}` first)"),
            path,
        });
    }
    Ok(Checkpoint::load(&path).map_err(crate::pipeline::PipelineError::from)?)
}

/// Checkpoint to resume from, if asked for and present.
fn resume_from(cfg: &RunConfig, stage: &str, resume: bool) -> Result<Option<Checkpoint>, HarnessError> {
    if resume && checkpoint_path(cfg, stage).is_file() {
        load_checkpoint(cfg, stage).map(Some)
    } else {
        Ok(None)
    }
}

fn save_stage(cfg: &RunConfig, stage: &'static str, ckpt: &Checkpoint, history: &[f64], epochs_done: u64) -> Result<TrainSummary, HarnessError> {
    let path = checkpoint_path(cfg, stage);
    std::fs::create_dir_all(&cfg.paths.checkpoint_dir).map_err(HarnessError::io(&cfg.paths.checkpoint_dir))?;
    ckpt.save(&path).map_err(crate::pipeline::PipelineError::from)?;
    let mut log = String::from("epoch,loss\n");
    for (i, l) in history.iter().enumerate() {
        let _ = writeln!(log, "{},{l:.8}", i + 1);
    }
    write(&cfg.paths.checkpoint_dir.join(format!("{stage}.log.csv")), &log)?;
    Ok(TrainSummary { stage, epochs_done, final_loss: history.last().copied(), checkpoint: path })
}

fn gt_views(cfg: &RunConfig, scenes: &[SyntheticScene], classes: usize) -> Vec<ObjectView> {
    scenes.iter().map(|s| ObjectView::ground_truth(s, &cfg.pipeline.features, classes)).collect()
}

fn ppg_positives(cfg: &RunConfig, data: &Dataset) -> Result<crate::autodiff::Mat, HarnessError> {
    let views = gt_views(cfg, &data.train, data.vocab.num_objects());
    let pairs: Vec<_> = data.train.iter().zip(&views).map(|(s, v)| (&s.graph, &v.semantic)).collect();
    Ok(positive_pair_features(&pairs)?)
}

fn load_proposer(cfg: &RunConfig) -> Result<Option<PairProposer>, HarnessError> {
    match cfg.pipeline.pairs {
        PairSource::All => Ok(None),
        PairSource::Proposer => {
            let stage = PpgStage::from_checkpoint(&load_checkpoint(cfg, "ppg")?, &cfg.pipeline.ppg)?;
            Ok(Some(stage.proposer(cfg.pipeline.ppg.k1)))
        }
    }
}

fn train_ppg_stage(cfg: &RunConfig, data: &Dataset, opts: &TrainOptions) -> Result<TrainSummary, HarnessError> {
    let pos = ppg_positives(cfg, data)?;
    let mut stage = match resume_from(cfg, "ppg", opts.resume)? {
        Some(c) => PpgStage::from_checkpoint(&c, &cfg.pipeline.ppg)?,
        None => PpgStage::init(&pos, &cfg.pipeline.ppg, cfg.seed)?,
    };
    stage.train_until(&pos, &cfg.pipeline.ppg, opts.until_epoch.unwrap_or(u64::MAX), cfg.seed)?;
    save_stage(cfg, "ppg", &stage.to_checkpoint(), &stage.history, stage.epochs_done)
}

fn train_rpcm_stage(cfg: &RunConfig, data: &Dataset, opts: &TrainOptions) -> Result<TrainSummary, HarnessError> {
    let classes = data.vocab.num_objects();
    let proposer = load_proposer(cfg)?;
    let cascade = Cascade { features: cfg.pipeline.features, object_classes: classes, proposer: proposer.as_ref(), rpcm: None, baseline: None, detector: None };
    let scenes = data
        .train
        .iter()
        .zip(gt_views(cfg, &data.train, classes))
        .map(|(s, v)| Ok(training_scene(&s.graph, &v, &cascade.candidate_pairs(&v)?)?))
        .collect::<Result<Vec<_>, HarnessError>>()?;
    let rc = &cfg.pipeline.rpcm;
    let mut stage = match resume_from(cfg, "rpcm", opts.resume)? {
        Some(c) => RpcmStage::from_checkpoint(&c, rc)?,
        None => RpcmStage::init(rc, classes, cfg.pipeline.features.dim, data.vocab.relation_classes(), &load_table(cfg)?, cfg.seed)?,
    };
    stage.train_until(&scenes, rc, opts.until_epoch.unwrap_or(u64::MAX), cfg.seed)?;
    save_stage(cfg, "rpcm", &stage.to_checkpoint(), &stage.history, stage.epochs_done)
}

fn train_detector_stage(cfg: &RunConfig, data: &Dataset, opts: &TrainOptions) -> Result<TrainSummary, HarnessError> {
    let classes = data.vocab.num_objects();
    let dc = &cfg.pipeline.detector;
    let proposals = DetectorStage::training_proposals(&data.train, &cfg.pipeline.features, classes, dc)?;
    let mut stage = match resume_from(cfg, "detector", opts.resume)? {
        Some(c) => DetectorStage::from_checkpoint(&c, dc)?,
        None => DetectorStage::init(dc, classes, cfg.pipeline.features.dim, cfg.seed)?,
    };
    stage.train_until(&proposals, opts.until_epoch.unwrap_or(u64::MAX), cfg.seed)?;
    save_stage(cfg, "detector", &stage.to_checkpoint(), &stage.history, stage.epochs_done)
}

/// Trains one stage, or all of them in dependency order.
pub fn cmd_train(cfg: &RunConfig, opts: &TrainOptions) -> Result<Vec<TrainSummary>, HarnessError> {
    let data = read_dataset(&cfg.paths.data_dir)?;
    match opts.stage {
        Stage::Ppg => Ok(vec![train_ppg_stage(cfg, &data, opts)?]),
        Stage::Rpcm => Ok(vec![train_rpcm_stage(cfg, &data, opts)?]),
        Stage::Detector => Ok(vec![train_detector_stage(cfg, &data, opts)?]),
        Stage::All => {
            let mut out = Vec::new();
            if cfg.pipeline.pairs == PairSource::Proposer {
                out.push(train_ppg_stage(cfg, &data, opts)?);
            }
            out.push(train_detector_stage(cfg, &data, opts)?);
            out.push(train_rpcm_stage(cfg, &data, opts)?);
            Ok(out)
        }
    }
}

fn split_of<'a>(data: &'a Dataset, split: &str) -> Result<&'a [SyntheticScene], HarnessError> {
    match split {
        "val" => Ok(&data.val),
        "test" => Ok(&data.test),
        "train" => Ok(&data.train),
        other => Err(HarnessError::Usage(format!("unknown split `{other}` (expected train, val or test)"))),
    }
}

/// Trained stages loaded for evaluation.
struct Loaded {
    proposer: Option<PairProposer>,
    rpcm: Option<RpcmModel>,
    baseline: FrequencyBaseline,
    detector: Option<ObjectDetector>,
}

impl Loaded {
    fn load(cfg: &RunConfig, data: &Dataset, opts: &EvaluateOptions) -> Result<Self, HarnessError> {
        let learned = opts.methods.iter().any(|&m| m != Method::Oracle);
        let proposer = if learned { load_proposer(cfg)? } else { None };
        let rpcm = if opts.methods.contains(&Method::Rpcm) {
            Some(RpcmStage::from_checkpoint(&load_checkpoint(cfg, "rpcm")?, &cfg.pipeline.rpcm)?.trainer.model)
        } else {
            None
        };
        let detector = if learned && opts.tasks.iter().any(|&t| t != Task::PredCls) {
            Some(DetectorStage::from_checkpoint(&load_checkpoint(cfg, "detector")?, &cfg.pipeline.detector)?.detector)
        } else {
            None
        };
        let baseline = FrequencyBaseline::fit(data.train.iter().map(|s| &s.graph), data.vocab.num_objects(), data.vocab.num_relations());
        Ok(Self { proposer, rpcm, baseline, detector })
    }

    fn cascade(&self, cfg: &RunConfig, classes: usize) -> Cascade<'_> {
        Cascade {
            features: cfg.pipeline.features,
            object_classes: classes,
            proposer: self.proposer.as_ref(),
            rpcm: self.rpcm.as_ref(),
            baseline: Some(&self.baseline),
            detector: self.detector.as_ref(),
        }
    }
}

fn report_stem(run: &str, task: Task, method: &str) -> String {
    format!("{run}_{}_{method}", task.name())
}

/// Evaluates every task and method pair on one split and writes
/// `<run>_<task>_<method>.{csv,txt,json}` plus a `.curve.csv` into the
/// report directory. Returns the JSON paths.
pub fn cmd_evaluate(cfg: &RunConfig, opts: &EvaluateOptions) -> Result<Vec<PathBuf>, HarnessError> {
    if opts.tasks.is_empty() || opts.methods.is_empty() {
        return Err(HarnessError::Usage("evaluate needs at least one task and one method".into()));
    }
    let data = read_dataset(&cfg.paths.data_dir)?;
    let scenes = split_of(&data, &opts.split)?;
    let loaded = Loaded::load(cfg, &data, opts)?;
    let cascade = loaded.cascade(cfg, data.vocab.num_objects());
    let deviations = cfg.deviations();
    let mut written = Vec::new();
    for &task in &opts.tasks {
        for &method in &opts.methods {
            let preds = cascade.predict_all(task, method, scenes, cfg.workers)?;
            let eval = EvalConfig { task, ..cfg.eval.clone() };
            let report = evaluate_corpus(scenes, &preds, &data.vocab, &eval)?;
            let curve_cfg = EvalConfig { ks: CURVE_KS.to_vec(), ..eval };
            let curve = evaluate_corpus(scenes, &preds, &data.vocab, &curve_cfg)?
                .metrics
                .iter()
                .map(|m| CurvePoint { k: m.k, mr: m.mr, mmr: m.mmr, hmr: m.hmr })
                .collect::<Vec<_>>();
            let run = RunReport { run: cfg.name.clone(), method: method.name().into(), split: opts.split.clone(), deviations: deviations.clone(), report, curve };
            written.push(write_run_report(&cfg.paths.report_dir, &run)?);
        }
    }
    Ok(written)
}

fn write_run_report(dir: &Path, run: &RunReport) -> Result<PathBuf, HarnessError> {
    let stem = report_stem(&run.run, run.report.config.task, &run.method);
    let notes: String = run.deviations.iter().map(|d| format!("# deviation: {d}\n")).collect();
    write(&dir.join(format!("{stem}.csv")), &format!("{notes}{}", run.report.to_csv(&format!("{}/{}", run.run, run.method))))?;
    write(&dir.join(format!("{stem}.txt")), &format!("{notes}run={} method={} split={}\n{}", run.run, run.method, run.split, run.report.to_text()))?;
    let mut curve = String::from("k,mr,mmr,hmr\n");
    for p in &run.curve {
        let _ = writeln!(curve, "{},{:.4},{:.4},{:.4}", p.k, p.mr, p.mmr, p.hmr);
    }
    write(&dir.join(format!("{stem}.curve.csv")), &curve)?;
    let json_path = dir.join(format!("{stem}.json"));
    write(&json_path, &(serde_json::to_string_pretty(run).expect("reports serialise") + "\n"))?;
    Ok(json_path)
}

fn collect_report_files(inputs: &[PathBuf]) -> Result<Vec<PathBuf>, HarnessError> {
    let mut files = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(HarnessError::io(p))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "json"))
                .collect();
            found.sort();
            files.extend(found);
        } else if p.is_file() {
            files.push(p.clone());
        } else {
            return Err(HarnessError::Missing { stage: "report".into(), what: "an evaluation report".into(), path: p.clone() });
        }
    }
    if files.is_empty() {
        return Err(HarnessError::Usage("no evaluation reports found".into()));
    }
    Ok(files)
}

fn metric_cell(r: &EvalReport, f: impl Fn(&crate::eval::KMetrics) -> f64) -> String {
    r.metrics.iter().map(|m| format!("{:.2}", f(m))).collect::<Vec<_>>().join("/")
}

/// Merges evaluation JSONs (files or directories) into `comparison.csv` and
/// `comparison.txt`, one row per run and method with PredCls, SGCls and SGDet
/// columns, and draws one recall-vs-K plot per row.
pub fn cmd_report(inputs: &[PathBuf], out_dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let mut rows: BTreeMap<(String, String), BTreeMap<usize, RunReport>> = BTreeMap::new();
    let mut ks: Option<Vec<usize>> = None;
    let mut deviations = BTreeSet::new();
    for f in collect_report_files(inputs)? {
        let run: RunReport = serde_json::from_str(&read_text(&f)?).map_err(|e| HarnessError::Malformed(format!("{}: {e}", f.display())))?;
        let these: Vec<usize> = run.report.metrics.iter().map(|m| m.k).collect();
        match &ks {
            Some(k) if *k != these => {
                return Err(HarnessError::Malformed(format!("{}: K values {these:?} differ from {k:?}", f.display())));
            }
            _ => ks = Some(these),
        }
        deviations.extend(run.deviations.iter().cloned());
        let task = Task::ALL.iter().position(|&t| t == run.report.config.task).expect("known task");
        let slot = rows.entry((run.run.clone(), run.method.clone())).or_default();
        if slot.insert(task, run).is_some() {
            return Err(HarnessError::Malformed(format!("{}: duplicate report for the same run, method and task", f.display())));
        }
    }
    let ks = ks.expect("at least one report").iter().map(|k| k.to_string()).collect::<Vec<_>>().join("/");
    let mut header = vec!["method".to_string()];
    for t in Task::ALL {
        for m in ["MR", "mMR", "HMR"] {
            header.push(format!("{t} {m}@{ks}"));
        }
    }
    let mut table: Vec<Vec<String>> = Vec::new();
    for ((run, method), tasks) in &rows {
        let mut row = vec![format!("{run}/{method}")];
        for t in 0..Task::ALL.len() {
            match tasks.get(&t) {
                Some(r) => {
                    row.push(metric_cell(&r.report, |m| m.mr));
                    row.push(metric_cell(&r.report, |m| m.mmr));
                    row.push(metric_cell(&r.report, |m| m.hmr));
                }
                None => row.extend(std::iter::repeat("-".to_string()).take(3)),
            }
        }
        table.push(row);
    }
    let notes: String = deviations.iter().map(|d| format!("# deviation: {d}\n")).collect();
    let mut csv = notes.clone();
    for r in std::iter::once(&header).chain(&table) {
        csv.push_str(&r.join(","));
        csv.push('\n');
    }
    let widths: Vec<usize> =
        (0..header.len()).map(|c| std::iter::once(&header).chain(&table).map(|r| r[c].len()).max().unwrap_or(0)).collect();
    let mut txt = notes;
    for r in std::iter::once(&header).chain(&table) {
        let cells: Vec<String> = r.iter().zip(&widths).map(|(v, w)| format!("{v:<w$}")).collect();
        txt.push_str(cells.join("  ").trim_end());
        txt.push('\n');
    }
    let mut written = vec![out_dir.join("comparison.csv"), out_dir.join("comparison.txt")];
    write(&written[0], &csv)?;
    write(&written[1], &txt)?;
    for ((run, method), tasks) in &rows {
        let series: Vec<(String, Vec<CurvePoint>)> = tasks.values().map(|r| (r.report.config.task.to_string(), r.curve.clone())).collect();
        let path = out_dir.join(format!("recall_{run}_{method}.svg"));
        write(&path, &recall_plot_svg(&format!("{run} / {method}"), &series))?;
        written.push(path);
    }
    Ok(written)
}

/// Overrides of the quick self-test profile; user overrides are applied
/// after these.
pub fn selftest_profile() -> Vec<String> {
    [
        "name=\"selftest\"",
        "scenes=30",
        "eval.ks=[20, 50, 100]",
        "pipeline.ppg.train.epochs=4",
        "pipeline.rpcm.epochs=6",
        "pipeline.detector.epochs=6",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

fn ppg_auc(cfg: &RunConfig, proposer: &PairProposer, scenes: &[SyntheticScene], classes: usize) -> Result<f64, HarnessError> {
    let (mut pos, mut neg) = (Vec::new(), Vec::new());
    for (s, v) in scenes.iter().zip(gt_views(cfg, scenes, classes)) {
        let annotated: BTreeSet<(u32, u32)> = s.graph.annotated_pairs().into_iter().collect();
        for p in proposer.score(&v.graph, &v.semantic)? {
            if annotated.contains(&p.pair) {
                pos.push(p.score);
            } else {
                neg.push(p.score);
            }
        }
    }
    Ok(ranking_auc(&pos, &neg))
}

fn detector_map(cfg: &RunConfig, detector: &ObjectDetector, scenes: &[SyntheticScene]) -> Result<f64, HarnessError> {
    let mut images = Vec::new();
    for s in scenes {
        let v = detector.detect(s, &cfg.pipeline.features)?;
        let dets = v
            .graph
            .objects
            .iter()
            .zip(&v.confidence)
            .map(|(o, &confidence)| Detection { id: o.id, bbox: o.bbox, class_index: o.class_index, confidence, window: 0 })
            .collect();
        images.push((dets, s.graph.objects.clone()));
    }
    Ok(mean_average_precision(&images, 0.5, BoxMode::Obb))
}

fn f4(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else {
        format!("{x:.4}")
    }
}

/// End-to-end run in `<report_dir>/selftest`: generate, train every stage,
/// evaluate all tasks with every method, merge, then write
/// `selftest_report.txt`. The report holds no timestamps or absolute paths,
/// so equal configs give byte-identical files.
pub fn cmd_selftest(cfg: &RunConfig) -> Result<(PathBuf, String), HarnessError> {
    let work = cfg.paths.report_dir.join("selftest");
    let mut cfg = cfg.clone();
    cfg.paths = Paths { data_dir: work.join("data"), checkpoint_dir: work.join("checkpoints"), report_dir: work.join("reports") };
    let manifest = cmd_generate(&cfg)?;
    let trained = cmd_train(&cfg, &TrainOptions { stage: Stage::All, resume: false, until_epoch: None })?;
    let opts = EvaluateOptions { tasks: Task::ALL.to_vec(), methods: vec![Method::Rpcm, Method::Frequency, Method::Oracle], split: "test".into() };
    let jsons = cmd_evaluate(&cfg, &opts)?;
    cmd_report(&jsons, &work.join("merged"))?;

    let data = read_dataset(&cfg.paths.data_dir)?;
    let classes = data.vocab.num_objects();
    let mut s = String::new();
    let _ = writeln!(s, "selftest run={} seed={} scenes={}", cfg.name, cfg.seed, manifest.scenes);
    let _ = writeln!(s, "\n[dataset]");
    let _ = writeln!(s, "vocabulary sha256={}", manifest.vocabulary_sha256);
    for (name, e) in &manifest.splits {
        let _ = writeln!(s, "{name:<5} scenes={:<4} sha256={}", e.count, e.sha256);
    }
    let _ = writeln!(s, "\n[training]");
    for t in &trained {
        let _ = writeln!(s, "{:<8} epochs={} final_loss={}", t.stage, t.epochs_done, t.final_loss.map_or("-".into(), f4));
        let bytes = std::fs::read(&t.checkpoint).map_err(HarnessError::io(&t.checkpoint))?;
        let _ = writeln!(s, "{:<8} checkpoint sha256={}", t.stage, super::sha256_hex(&bytes));
    }
    let _ = writeln!(s, "\n[diagnostics]");
    if let Some(p) = load_proposer(&cfg)? {
        let _ = writeln!(s, "ppg test AUC={}", f4(ppg_auc(&cfg, &p, &data.test, classes)?));
    }
    let det = DetectorStage::from_checkpoint(&load_checkpoint(&cfg, "detector")?, &cfg.pipeline.detector)?.detector;
    let _ = writeln!(s, "detector test mAP@0.5={}", f4(detector_map(&cfg, &det, &data.test)?));
    let _ = writeln!(s, "\n[metrics]");
    for j in &jsons {
        let run: RunReport = serde_json::from_str(&read_text(j)?).map_err(|e| HarnessError::Internal(e.to_string()))?;
        let r = &run.report;
        let _ = writeln!(
            s,
            "{:<7} {:<9} MR={} mMR={} HMR={}",
            r.config.task.name(),
            run.method,
            metric_cell(r, |m| m.mr),
            metric_cell(r, |m| m.mmr),
            metric_cell(r, |m| m.hmr)
        );
    }
    let deviations = cfg.deviations();
    if !deviations.is_empty() {
        let _ = writeln!(s, "\n[deviations]");
        for d in deviations {
            let _ = writeln!(s, "{d}");
        }
    }
    let path = work.join("selftest_report.txt");
    write(&path, &s)?;
    Ok((path, s))
}
