use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use mimicry_core::classifier::{
    cross_validate, train_forest, ClassifierError, CvPrediction, FoldReport, ForestModel, LabeledSample,
    MetricsReport,
};
use mimicry_core::embedder::{self, EmbedderError, EncoderDecoderModel};
use mimicry_core::exec::Execution;
use mimicry_core::harness::{self, failset, FailSet, MutantResult, TestStatus};
use mimicry_core::lex::{default_idioms, UnitDocument};
use mimicry_core::mutate::{
    generate_all, CommandValidator, GenerateConfig, LexicalValidator, ManifestEntry, SourceUnit, Validator,
};
use mimicry_core::predictor::{PredictorSpec, RemotePredictor};
use mimicry_core::semantics::{self, Label, MutantLabel};
use serde::{Deserialize, Serialize};

use crate::artifacts::{self as art, upstream};
use crate::config::RunConfig;
use crate::error::{CliError, ItemFailure};
use crate::report::{self, ClassifierSummary, CountsFile, Histogram, ProjectCounts};

pub struct Context {
    pub cfg: RunConfig,
    pub exec: Execution,
}

impl Context {
    pub fn out(&self) -> &Path {
        &self.cfg.out_dir
    }
}

/// Items a stage could not process. Empty means full success.
#[derive(Debug, Default)]
pub struct Outcome {
    pub failures: Vec<ItemFailure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitLine {
    pub file: String,
    #[serde(flatten)]
    pub unit: UnitDocument,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceLine {
    pub mutant_id: String,
    pub tokens: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineDoc {
    pub outcomes: BTreeMap<String, TestStatus>,
    pub fail_tests: Vec<String>,
    pub exit_code: i32,
    pub timed_out: bool,
    pub parser_failure: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultLine {
    pub mutant_id: String,
    pub fail_tests: Vec<String>,
    pub statuses: BTreeMap<String, TestStatus>,
    pub exit_code: i32,
}

impl From<&MutantResult> for ResultLine {
    fn from(r: &MutantResult) -> Self {
        ResultLine {
            mutant_id: r.mutant_id.clone(),
            fail_tests: r.fail_tests.clone(),
            statuses: r.statuses.clone(),
            exit_code: r.exit_code,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub baseline_s: f64,
    pub mutants: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSummary {
    pub vulnerability: String,
    pub total: usize,
    pub counts: BTreeMap<Label, usize>,
    pub mimicked: bool,
    pub ochiai_positive: usize,
    /// Tests already failing on the clean project; ignored when labeling.
    pub baseline_failures: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorLine {
    pub mutant_id: String,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    pub folds: Vec<FoldReport>,
    pub pooled: MetricsReport,
    pub mean_precision: f64,
    pub mean_recall: f64,
    pub mean_mcc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsDoc {
    pub samples: usize,
    pub positives: usize,
    pub groups: usize,
    pub folds: usize,
    pub fold_seed: u64,
    pub forest_seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cv: Option<CvSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cv_skipped: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub headline: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub mutant_id: String,
    pub score: f64,
    pub label: bool,
    pub truth: Option<bool>,
}

fn classifier_err(e: ClassifierError) -> CliError {
    match e {
        ClassifierError::Io(e) => CliError::Fatal(e.to_string()),
        ClassifierError::Format(m) => CliError::Fatal(m),
        e => CliError::InvalidInput(e.to_string()),
    }
}

fn embedder_err(e: EmbedderError) -> CliError {
    match e {
        EmbedderError::Io(e) => CliError::Fatal(e.to_string()),
        e => CliError::InvalidInput(e.to_string()),
    }
}

fn read_source(root: &Path, file: &str) -> Result<String, CliError> {
    let path = root.join(file);
    fs::read_to_string(&path).map_err(CliError::io(&path))
}

pub fn abstract_stage(ctx: &Context) -> Result<Outcome, CliError> {
    let project = ctx.cfg.project()?;
    art::ensure_dir(ctx.out())?;
    let idioms = default_idioms();
    let mut lines = Vec::new();
    let mut failures = Vec::new();
    for file in &project.target_files {
        let src = read_source(&project.root, file)?;
        match SourceUnit::new(file, &src, &idioms) {
            Ok(u) => lines.push(UnitLine {
                file: file.clone(),
                unit: u.abstracted.to_document(),
            }),
            Err(e) => failures.push(ItemFailure {
                item: file.clone(),
                error: e.to_string(),
            }),
        }
    }
    art::write_jsonl(&ctx.out().join(art::UNITS), &lines)?;
    Ok(Outcome { failures })
}

fn check_predictor(spec: &PredictorSpec, ctx: &Context) -> Result<(), CliError> {
    if let PredictorSpec::Remote(url) = spec {
        RemotePredictor::new(url, ctx.cfg.predictor_timeout())
            .health()
            .map_err(|e| CliError::PredictorUnavailable(format!("{url}: {e}")))?;
    }
    Ok(())
}

pub fn mutate_stage(ctx: &Context) -> Result<Outcome, CliError> {
    let project = ctx.cfg.project()?;
    let units_path = upstream(ctx.out(), art::UNITS, "abstract")?;
    let units: BTreeMap<String, UnitDocument> = art::read_jsonl::<UnitLine>(&units_path)?
        .into_iter()
        .map(|l| (l.file, l.unit))
        .collect();
    check_predictor(&ctx.cfg.predictor, ctx)?;
    let predictor = ctx.cfg.predictor.build(ctx.cfg.predictor_timeout());
    let validator: Box<dyn Validator> = match &project.validator {
        Some(cmd) => Box::new(CommandValidator { command: cmd.clone() }),
        None => Box::new(LexicalValidator),
    };
    let gen = GenerateConfig {
        k: ctx.cfg.generator.k,
        idioms: default_idioms(),
        max_len: ctx.cfg.generator.max_len,
        mask_on_abstracted: ctx.cfg.generator.mask_on_abstracted,
    };

    let mut mutants = Vec::new();
    let mut failures = Vec::new();
    for file in &project.target_files {
        let Some(doc) = units.get(file) else {
            failures.push(ItemFailure {
                item: file.clone(),
                error: "no abstracted unit".into(),
            });
            continue;
        };
        let src = read_source(&project.root, file)?;
        let unit = SourceUnit::new(file, &src, &gen.idioms).map_err(|e| CliError::StaleUpstreamArtifact {
            path: units_path.clone(),
            reason: format!("{file} no longer lexes: {e}"),
        })?;
        if unit.abstracted.to_document() != *doc {
            return Err(CliError::StaleUpstreamArtifact {
                path: units_path,
                reason: format!("{file} changed since `abstract` ran"),
            });
        }
        let (ms, fails) = generate_all(&unit, predictor.as_ref(), validator.as_ref(), &gen, ctx.exec);
        mutants.extend(ms);
        failures.extend(fails.into_iter().map(|f| ItemFailure {
            item: format!("{}#{}", f.file, f.token_index),
            error: f.error,
        }));
    }
    mutants.sort_by(|a, b| a.id.cmp(&b.id));

    let dir = ctx.out().join(art::MUTANTS_DIR);
    if dir.exists() {
        fs::remove_dir_all(&dir).map_err(CliError::io(&dir))?;
    }
    for m in &mutants {
        let path = dir.join(&m.id).join(&m.file);
        if let Some(parent) = path.parent() {
            art::ensure_dir(parent)?;
        }
        fs::write(&path, &m.patched_source).map_err(CliError::io(&path))?;
    }
    let manifest: Vec<ManifestEntry> = mutants.iter().map(|m| m.manifest_entry()).collect();
    let sequences: Vec<SequenceLine> = mutants
        .iter()
        .filter(|m| m.valid)
        .map(|m| SequenceLine {
            mutant_id: m.id.clone(),
            tokens: m.annotated_sequence.clone(),
        })
        .collect();
    art::write_jsonl(&ctx.out().join(art::MANIFEST), &manifest)?;
    art::write_jsonl(&ctx.out().join(art::SEQUENCES), &sequences)?;
    Ok(Outcome { failures })
}

pub fn run_stage(ctx: &Context) -> Result<Outcome, CliError> {
    let project = ctx.cfg.project()?;
    let manifest: Vec<ManifestEntry> = art::read_jsonl(&upstream(ctx.out(), art::MANIFEST, "mutate")?)?;
    let valid: Vec<ManifestEntry> = manifest.into_iter().filter(|m| m.valid).collect();
    let baseline = harness::run_baseline(project).map_err(|e| CliError::Fatal(format!("baseline run: {e}")))?;
    let (results, skipped) = harness::run_mutants(project, &valid, ctx.exec);

    art::write_json(
        &ctx.out().join(art::BASELINE),
        &BaselineDoc {
            fail_tests: failset(&baseline).0.into_iter().collect(),
            outcomes: baseline.outcomes.clone(),
            exit_code: baseline.exit_code,
            timed_out: baseline.timed_out,
            parser_failure: baseline.parser_failure,
        },
    )?;
    let lines: Vec<ResultLine> = results.iter().map(ResultLine::from).collect();
    art::write_jsonl(&ctx.out().join(art::RESULTS), &lines)?;
    art::write_json(
        &ctx.out().join(art::TIMINGS),
        &Timings {
            baseline_s: baseline.wall_time_s,
            mutants: results.iter().map(|r| (r.mutant_id.clone(), r.wall_time_s)).collect(),
        },
    )?;
    Ok(Outcome {
        failures: skipped
            .into_iter()
            .map(|s| ItemFailure {
                item: s.mutant_id,
                error: s.error,
            })
            .collect(),
    })
}

pub fn label_stage(ctx: &Context) -> Result<Outcome, CliError> {
    let vuln = ctx.cfg.vulnerability()?;
    let baseline: BaselineDoc = art::read_json(&upstream(ctx.out(), art::BASELINE, "run")?)?;
    let results: Vec<ResultLine> = art::read_jsonl(&upstream(ctx.out(), art::RESULTS, "run")?)?;
    let broken: BTreeSet<&String> = baseline.fail_tests.iter().collect();
    if let Some(t) = vuln.pov.iter().find(|t| broken.contains(t)) {
        return Err(CliError::InvalidInput(format!(
            "PoV test {t} already fails on the clean project"
        )));
    }
    let mut labels = Vec::with_capacity(results.len());
    for r in &results {
        let fs = FailSet::new(r.fail_tests.iter().filter(|t| !broken.contains(t)).cloned());
        labels.push(semantics::label(&r.mutant_id, &fs, vuln).map_err(|e| CliError::ConfigInvalid(e.to_string()))?);
    }
    let mut counts: BTreeMap<Label, usize> = [Label::Mimicking, Label::Coupled, Label::KilledUnrelated, Label::Survived]
        .into_iter()
        .map(|l| (l, 0))
        .collect();
    for l in &labels {
        *counts.entry(l.label).or_default() += 1;
    }
    let summary = LabelSummary {
        vulnerability: vuln.id.clone(),
        total: labels.len(),
        mimicked: counts[&Label::Mimicking] > 0,
        ochiai_positive: labels.iter().filter(|l| l.ochiai > 0.0).count(),
        counts,
        baseline_failures: baseline.fail_tests.clone(),
    };
    art::write_jsonl(&ctx.out().join(art::LABELS), &labels)?;
    art::write_json(&ctx.out().join(art::LABEL_SUMMARY), &summary)?;
    Ok(Outcome::default())
}

pub fn embed_train_stage(ctx: &Context) -> Result<Outcome, CliError> {
    let seqs: Vec<SequenceLine> = art::read_jsonl(&upstream(ctx.out(), art::SEQUENCES, "mutate")?)?;
    let corpus: Vec<Vec<String>> = seqs.into_iter().map(|s| s.tokens).collect();
    let model = embedder::train(&corpus, &ctx.cfg.embedder).map_err(embedder_err)?;
    let path = ctx.out().join(art::EMBED_MODEL);
    let file = fs::File::create(&path).map_err(CliError::io(&path))?;
    model.write_to(std::io::BufWriter::new(file)).map_err(embedder_err)?;
    Ok(Outcome::default())
}

fn load_embedder(dir: &Path) -> Result<EncoderDecoderModel, CliError> {
    let path = upstream(dir, art::EMBED_MODEL, "embed-train")?;
    let file = fs::File::open(&path).map_err(CliError::io(&path))?;
    EncoderDecoderModel::read_from(std::io::BufReader::new(file)).map_err(|e| CliError::StaleUpstreamArtifact {
        path,
        reason: e.to_string(),
    })
}

pub fn embed_stage(ctx: &Context) -> Result<Outcome, CliError> {
    let seqs: Vec<SequenceLine> = art::read_jsonl(&upstream(ctx.out(), art::SEQUENCES, "mutate")?)?;
    let model = load_embedder(ctx.out())?;
    let embedded = ctx.exec.map(&seqs, |s| model.embed(&s.tokens));
    let mut vectors = Vec::with_capacity(seqs.len());
    let mut failures = Vec::new();
    for (s, v) in seqs.iter().zip(embedded) {
        match v {
            Ok(vector) => vectors.push(VectorLine {
                mutant_id: s.mutant_id.clone(),
                vector,
            }),
            Err(e) => failures.push(ItemFailure {
                item: s.mutant_id.clone(),
                error: e.to_string(),
            }),
        }
    }
    art::write_jsonl(&ctx.out().join(art::VECTORS), &vectors)?;
    Ok(Outcome { failures })
}

/// Labeled feature vectors of one output directory, grouped by its
/// vulnerability id.
pub fn load_samples(dir: &Path) -> Result<Vec<LabeledSample>, CliError> {
    let summary: LabelSummary = art::read_json(&upstream(dir, art::LABEL_SUMMARY, "label")?)?;
    let labels: Vec<MutantLabel> = art::read_jsonl(&upstream(dir, art::LABELS, "label")?)?;
    let vectors_path = upstream(dir, art::VECTORS, "embed")?;
    let vectors: BTreeMap<String, Vec<f64>> = art::read_jsonl::<VectorLine>(&vectors_path)?
        .into_iter()
        .map(|v| (v.mutant_id, v.vector))
        .collect();
    labels
        .into_iter()
        .map(|l| {
            let features = vectors.get(&l.mutant_id).cloned().ok_or_else(|| CliError::StaleUpstreamArtifact {
                path: vectors_path.clone(),
                reason: format!("no vector for labeled mutant {}", l.mutant_id),
            })?;
            Ok(LabeledSample {
                mutant_id: l.mutant_id,
                group_id: summary.vulnerability.clone(),
                features,
                truth: l.label == Label::Mimicking,
            })
        })
        .collect()
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |e| CliError::Fatal(format!("{}: {e}", path.display()))
}

fn write_csv<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<(), CliError> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(csv_err(path))?;
    w.write_record(header).map_err(csv_err(path))?;
    for r in rows {
        w.serialize(r).map_err(csv_err(path))?;
    }
    w.flush().map_err(CliError::io(path))
}

pub fn train_stage(ctx: &Context, from: &[PathBuf]) -> Result<Outcome, CliError> {
    let dirs: Vec<PathBuf> = if from.is_empty() {
        vec![ctx.out().to_path_buf()]
    } else {
        from.to_vec()
    };
    let mut data = Vec::new();
    for d in &dirs {
        data.extend(load_samples(d)?);
    }
    data.sort_by(|a, b| (&a.group_id, &a.mutant_id).cmp(&(&b.group_id, &b.mutant_id)));
    let groups: BTreeSet<&str> = data.iter().map(|s| s.group_id.as_str()).collect();
    let k = ctx.cfg.eval.folds;
    let mut doc = MetricsDoc {
        samples: data.len(),
        positives: data.iter().filter(|s| s.truth).count(),
        groups: groups.len(),
        folds: k,
        fold_seed: ctx.cfg.eval.seed,
        forest_seed: ctx.cfg.forest.seed,
        cv: None,
        cv_skipped: None,
        headline: None,
    };
    let mut predictions: Vec<CvPrediction> = Vec::new();
    if groups.len() >= k {
        let cv = cross_validate(&data, k, ctx.cfg.eval.seed, &ctx.cfg.forest, ctx.exec).map_err(classifier_err)?;
        doc.headline = Some(report::headline(&cv.pooled));
        doc.cv = Some(CvSummary {
            folds: cv.folds,
            pooled: cv.pooled,
            mean_precision: cv.mean.precision,
            mean_recall: cv.mean.recall,
            mean_mcc: cv.mean.mcc,
        });
        predictions = cv.predictions;
    } else {
        let reason = format!("{} group(s) is fewer than {k} folds", groups.len());
        log::warn!("skipping cross-validation: {reason}");
        doc.cv_skipped = Some(reason);
    }
    let model = train_forest(&data, &ctx.cfg.forest, ctx.exec).map_err(classifier_err)?;

    art::ensure_dir(ctx.out())?;
    let path = ctx.out().join(art::FOREST);
    let file = fs::File::create(&path).map_err(CliError::io(&path))?;
    model.write_to(std::io::BufWriter::new(file)).map_err(classifier_err)?;
    art::write_json(&ctx.out().join(art::METRICS), &doc)?;
    write_csv(
        &ctx.out().join(art::CV_PREDICTIONS),
        &["mutant_id", "group_id", "fold", "score", "label", "truth"],
        &predictions,
    )?;
    Ok(Outcome::default())
}

pub fn predict_stage(ctx: &Context) -> Result<Outcome, CliError> {
    let path = upstream(ctx.out(), art::FOREST, "train")?;
    let file = fs::File::open(&path).map_err(CliError::io(&path))?;
    let model = ForestModel::read_from(std::io::BufReader::new(file)).map_err(|e| CliError::StaleUpstreamArtifact {
        path: path.clone(),
        reason: e.to_string(),
    })?;
    let vectors: Vec<VectorLine> = art::read_jsonl(&upstream(ctx.out(), art::VECTORS, "embed")?)?;
    let truths: BTreeMap<String, bool> = match ctx.out().join(art::LABELS) {
        p if p.is_file() => art::read_jsonl::<MutantLabel>(&p)?
            .into_iter()
            .map(|l| (l.mutant_id, l.label == Label::Mimicking))
            .collect(),
        _ => BTreeMap::new(),
    };
    let mut rows = Vec::with_capacity(vectors.len());
    for v in &vectors {
        let (label, score) = model.predict(&v.vector).map_err(classifier_err)?;
        rows.push(PredictionRow {
            mutant_id: v.mutant_id.clone(),
            score,
            label,
            truth: truths.get(&v.mutant_id).copied(),
        });
    }
    write_csv(
        &ctx.out().join(art::PREDICTIONS),
        &["mutant_id", "score", "label", "truth"],
        &rows,
    )?;
    Ok(Outcome::default())
}

pub fn report_stage(ctx: &Context, from: &[PathBuf], counts: Option<&Path>) -> Result<Outcome, CliError> {
    let dirs: Vec<PathBuf> = if from.is_empty() && counts.is_none() {
        vec![ctx.out().to_path_buf()]
    } else {
        from.to_vec()
    };
    let mut projects = Vec::new();
    let mut histogram = None;
    for d in &dirs {
        let summary: LabelSummary = art::read_json(&upstream(d, art::LABEL_SUMMARY, "label")?)?;
        let labels: Vec<MutantLabel> = art::read_jsonl(&upstream(d, art::LABELS, "label")?)?;
        let h = histogram.get_or_insert_with(Histogram::default);
        for l in &labels {
            h.add(l.ochiai);
        }
        projects.push(ProjectCounts::from_labels(&summary.vulnerability, &labels));
    }
    if let Some(p) = counts {
        let file: CountsFile = art::read_json(p).map_err(|e| CliError::InvalidInput(e.to_string()))?;
        for c in &file.projects {
            if c.mimicking > c.total || c.ochiai_positive > c.total || c.mimicking > c.ochiai_positive {
                return Err(CliError::InvalidInput(format!("inconsistent counts for {}", c.project)));
            }
        }
        projects.extend(file.projects);
    }
    let metrics_path = ctx.out().join(art::METRICS);
    let classifier = if metrics_path.is_file() {
        let doc: MetricsDoc = art::read_json(&metrics_path)?;
        doc.cv.map(|cv| ClassifierSummary {
            headline: report::headline(&cv.pooled),
            folds: cv.folds.len(),
            pooled: cv.pooled,
            mean_precision: cv.mean_precision,
            mean_recall: cv.mean_recall,
            mean_mcc: cv.mean_mcc,
        })
    } else {
        None
    };
    let r = report::build(&projects, histogram, classifier);
    art::ensure_dir(ctx.out())?;
    let md = ctx.out().join(art::REPORT_MD);
    fs::write(&md, report::render_markdown(&r)).map_err(CliError::io(&md))?;
    art::write_json(&ctx.out().join(art::REPORT_JSON), &r)?;
    Ok(Outcome::default())
}
