//! End-to-end stages: generate, ensemble and score, ablate, RAFT export.
//!
//! Output directory layout:
//!
//! ```text
//! exemplars.jsonl            retrieved exemplars per eval question
//! prompts.jsonl              prompts, when prompt.archive is set
//! predictions/<model>.json   id -> SQL or "null", in question order
//! generations/<model>.jsonl  raw outputs and extraction per question
//! manifest/<model>.jsonl     cache hits, latency and errors per question
//! ensembles/<label>.json     ensemble predictions
//! ensembles/<label>.decisions.jsonl
//! reports/report.{txt,json}
//! ablation/...               same files per ablation row
//! raft.jsonl
//! ```
//!
//! Everything except the manifests is a pure function of the inputs when
//! the backends are replay or mock.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use ehrsql_core::ensemble::{
    self, candidates_for, subset_label, validate, EnsembleDecision, ModelPredictions, VoteRule,
};
use ehrsql_core::exec::compare_to_ground_truth;
use ehrsql_core::prompt::{build_prompt_with_block, raft_records, PromptBundle, PromptOptions, TrainIndex};
use ehrsql_core::retrieval::{retrieve, ModelVectors};
use ehrsql_core::scoring::{render_report, summarize, ScoreMode, ScoreReport};
use ehrsql_core::{Answer, ExecStatus, ExecutionOutcome, Executor, ExemplarSet, Label, Question, Split, Verdict};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::Value;

use crate::config::{PromptConfig, RunConfig};
use crate::dataset::{answers_to_json, load_answers, load_questions, load_split};
use crate::embed::{self, EmbeddingProviderConfig};
use crate::error::{Error, Result};
use crate::llm::{self, GenerationResult, Generator};
use crate::schema::introspect;
use crate::sqlite::SqliteExecutor;

pub const PREDICTIONS_DIR: &str = "predictions";

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn jsonl<T: Serialize>(items: impl IntoIterator<Item = T>) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(&item).expect("record serializes"));
        out.push('\n');
    }
    out
}

fn pool(parallelism: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new().num_threads(parallelism.max(1)).build().map_err(|e| Error::Config(e.to_string()))
}

/// Inputs shared by every stage.
pub struct Workspace {
    pub train_questions: Vec<Question>,
    pub train_labels: Vec<Label>,
    pub train: TrainIndex,
    pub eval_questions: Vec<Question>,
    pub eval_labels: Vec<Label>,
}

impl Workspace {
    pub fn load(config: &RunConfig) -> Result<Self> {
        let p = &config.paths;
        let (train_questions, train_labels) = load_split(&p.train_questions, Some(&p.train_labels), Split::Train)?;
        let (eval_questions, eval_labels) = load_split(&p.eval_questions, p.eval_labels.as_deref(), p.eval_split)?;
        let train = TrainIndex::new(&train_questions, &train_labels)?;
        Ok(Self { train_questions, train_labels, train, eval_questions, eval_labels })
    }

    pub fn eval_ids(&self) -> Vec<String> {
        self.eval_questions.iter().map(|q| q.id.clone()).collect()
    }

    /// Ground truth aligned with the eval questions.
    pub fn ground_truth(&self) -> Result<Vec<Answer>> {
        let by_id: BTreeMap<&str, &Answer> = self.eval_labels.iter().map(|l| (l.id.as_str(), &l.answer)).collect();
        self.eval_questions
            .iter()
            .map(|q| {
                by_id
                    .get(q.id.as_str())
                    .map(|a| (*a).clone())
                    .ok_or_else(|| Error::Config(format!("eval question {} has no label", q.id)))
            })
            .collect()
    }
}

/// Retrieves exemplars for `queries` from the labeled train questions.
pub fn retrieve_exemplars(
    providers: &[EmbeddingProviderConfig],
    train: &[Question],
    queries: &[Question],
    n: usize,
    exclude_self: bool,
) -> Result<Vec<ExemplarSet>> {
    if n == 0 || providers.is_empty() {
        return Ok(queries.iter().map(|q| ExemplarSet::empty(q.id.clone(), n)).collect());
    }
    let mut stores = Vec::with_capacity(providers.len());
    for cfg in providers {
        let provider = embed::build(cfg)?;
        let train_store = embed::question_store(provider.as_ref(), train)?;
        let query_store =
            if exclude_self { train_store.clone() } else { embed::question_store(provider.as_ref(), queries)? };
        stores.push((train_store, query_store));
    }
    let models: Vec<ModelVectors<'_>> = stores.iter().map(|(train, test)| ModelVectors { train, test }).collect();
    let ids: Vec<String> = queries.iter().map(|q| q.id.clone()).collect();
    Ok(retrieve(&ids, &models, n, exclude_self)?)
}

/// Train questions that carry a label, the only usable exemplars.
fn labeled(ws: &Workspace) -> Vec<Question> {
    let ids: HashSet<&str> = ws.train_labels.iter().map(|l| l.id.as_str()).collect();
    ws.train_questions.iter().filter(|q| ids.contains(q.id.as_str())).cloned().collect()
}

pub struct PromptSet {
    pub exemplars: Vec<ExemplarSet>,
    pub prompts: Vec<PromptBundle>,
}

pub fn build_prompts(
    config: &RunConfig,
    ws: &Workspace,
    providers: &[EmbeddingProviderConfig],
    prompt: &PromptConfig,
) -> Result<PromptSet> {
    let schema = introspect(&config.paths.db, &prompt.schema_options())?;
    let block = schema.render();
    let exemplars = retrieve_exemplars(providers, &labeled(ws), &ws.eval_questions, config.retrieval.n, false)?;
    let options = prompt.options();
    let prompts = ws
        .eval_questions
        .iter()
        .zip(&exemplars)
        .map(|(q, set)| build_prompt_with_block(q, set, &ws.train, &block, &options))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(PromptSet { exemplars, prompts })
}

#[derive(Serialize)]
struct ManifestEntry<'a> {
    question_id: &'a str,
    model_id: &'a str,
    from_cache: bool,
    latency_ms: u64,
    error: Option<String>,
}

#[derive(Serialize)]
struct GenerationRecord<'a> {
    question_id: &'a str,
    raw_output: &'a str,
    extracted: &'a str,
    from_cache: bool,
}

/// One question's generation, or the error that turned it into Null.
type Outcome = (GenerationResult, Option<String>);

fn generate_all(generator: &dyn Generator, prompts: &[PromptBundle], parallelism: usize) -> Result<Vec<Outcome>> {
    let results = pool(parallelism)?.install(|| {
        prompts
            .par_iter()
            .map(|p| match llm::generate(generator, &p.question_id, &p.text) {
                Ok(g) => Ok((g, None)),
                Err(e) if e.is_fatal_for_run() => Err(e),
                Err(e) => {
                    log::warn!("{} {}: {e}; recorded as null", generator.model_id(), p.question_id);
                    let g = GenerationResult {
                        question_id: p.question_id.clone(),
                        model_id: generator.model_id().to_owned(),
                        raw_output: String::new(),
                        extracted: Answer::Null,
                        latency_ms: 0,
                        from_cache: false,
                    };
                    Ok((g, Some(e.to_string())))
                }
            })
            .collect::<Result<Vec<_>>>()
    });
    // keep whatever was recorded, even when the run aborts
    let flushed = generator.finish();
    let results = results?;
    flushed?;
    Ok(results)
}

pub struct ModelRun {
    pub model_id: String,
    pub outcomes: Vec<Outcome>,
}

impl ModelRun {
    pub fn answers(&self) -> impl Iterator<Item = (&str, &Answer)> {
        self.outcomes.iter().map(|(g, _)| (g.question_id.as_str(), &g.extracted))
    }
}

fn write_model_run(dir: &Path, run: &ModelRun) -> Result<()> {
    let id = &run.model_id;
    write(&dir.join(PREDICTIONS_DIR).join(format!("{id}.json")), answers_to_json(run.answers()) + "\n")?;
    write(
        &dir.join("generations").join(format!("{id}.jsonl")),
        jsonl(run.outcomes.iter().map(|(g, _)| GenerationRecord {
            question_id: &g.question_id,
            raw_output: &g.raw_output,
            extracted: g.extracted.as_file_str(),
            from_cache: g.from_cache,
        })),
    )?;
    write(
        &dir.join("manifest").join(format!("{id}.jsonl")),
        jsonl(run.outcomes.iter().map(|(g, err)| ManifestEntry {
            question_id: &g.question_id,
            model_id: &g.model_id,
            from_cache: g.from_cache,
            latency_ms: g.latency_ms,
            error: err.clone(),
        })),
    )
}

fn write_prompt_set(dir: &Path, set: &PromptSet, archive: bool) -> Result<()> {
    write(&dir.join("exemplars.jsonl"), jsonl(&set.exemplars))?;
    if archive {
        write(&dir.join("prompts.jsonl"), jsonl(&set.prompts))?;
    }
    Ok(())
}

fn generate_models(config: &RunConfig, model_ids: &[&str], prompts: &[PromptBundle]) -> Result<Vec<ModelRun>> {
    // build every backend up front so configuration errors surface before any request
    let generators =
        model_ids.iter().map(|id| llm::build(config.model(id)?, config.retry.policy())).collect::<Result<Vec<_>>>()?;
    generators
        .iter()
        .map(|g| {
            log::info!("generating {} prompts with {}", prompts.len(), g.model_id());
            Ok(ModelRun {
                model_id: g.model_id().to_owned(),
                outcomes: generate_all(g.as_ref(), prompts, config.parallelism)?,
            })
        })
        .collect()
}

/// Generates predictions for every configured model. Nothing is written
/// unless every model completes.
pub fn run_generate(config: &RunConfig) -> Result<Vec<ModelRun>> {
    config.validate()?;
    let ws = Workspace::load(config)?;
    let set = build_prompts(config, &ws, &config.retrieval.providers, &config.prompt)?;
    let ids: Vec<&str> = config.models.iter().map(|m| m.model_id.as_str()).collect();
    let runs = generate_models(config, &ids, &set.prompts)?;
    let out = &config.paths.output_dir;
    write_prompt_set(out, &set, config.prompt.archive)?;
    for run in &runs {
        write_model_run(out, run)?;
    }
    Ok(runs)
}

/// Reads one model's prediction file and checks it covers exactly `ids`.
pub fn load_predictions(path: &Path, model_id: &str, ids: &[String]) -> Result<BTreeMap<String, Answer>> {
    let answers: BTreeMap<String, Answer> = load_answers(path)?.into_iter().collect();
    if let Some(missing) = ids.iter().find(|id| !answers.contains_key(*id)) {
        return Err(Error::MissingPrediction { model_id: model_id.to_owned(), question_id: missing.clone() });
    }
    let known: HashSet<&str> = ids.iter().map(String::as_str).collect();
    if let Some(extra) = answers.keys().find(|id| !known.contains(id.as_str())) {
        return Err(Error::malformed(path, format!("prediction for unknown question {extra}")));
    }
    Ok(answers)
}

/// Judges aligned predictions and summarizes them.
pub fn score_answers<E: Executor + Sync>(
    predictions: &[Answer],
    truth: &[Answer],
    executor: &E,
    costs: &[f64],
    mode: ScoreMode,
    parallelism: usize,
) -> Result<(ScoreReport, Vec<Verdict>)> {
    let judged = pool(parallelism)?.install(|| {
        predictions
            .par_iter()
            .zip(truth)
            .map(|(p, t)| compare_to_ground_truth(p, t, executor))
            .collect::<std::result::Result<Vec<_>, _>>()
    })?;
    let verdicts: Vec<Verdict> = judged.iter().map(|j| j.verdict).collect();
    let statuses: Vec<Option<ExecStatus>> = judged.iter().map(|j| j.prediction_status).collect();
    Ok((summarize(&verdicts, predictions, &statuses, costs, mode)?, verdicts))
}

pub fn open_executor(config: &RunConfig) -> Result<SqliteExecutor> {
    Ok(SqliteExecutor::open(&config.paths.db, config.exec.timeout())?
        .with_current_time(config.exec.current_time.clone()))
}

fn write_reports(dir: &Path, reports: &[(String, ScoreReport)], costs: &[f64]) -> Result<String> {
    let table = render_report(reports, costs);
    let map: serde_json::Map<String, Value> =
        reports.iter().map(|(label, r)| (label.clone(), serde_json::to_value(r).expect("report serializes"))).collect();
    write(&dir.join("report.txt"), &table)?;
    write(&dir.join("report.json"), serde_json::to_string_pretty(&map).expect("report serializes") + "\n")?;
    Ok(table)
}

#[derive(Serialize)]
struct MemberRecord<'a> {
    model_id: &'a str,
    answer: &'a str,
    status: Option<ExecStatus>,
    rows: Option<usize>,
    error: Option<&'a str>,
}

#[derive(Serialize)]
struct DecisionRecord<'a> {
    question_id: &'a str,
    final_answer: &'a str,
    agreement: ensemble::Agreement,
    members: Vec<MemberRecord<'a>>,
}

fn decision_record(d: &EnsembleDecision) -> DecisionRecord<'_> {
    DecisionRecord {
        question_id: &d.question_id,
        final_answer: d.final_answer.as_file_str(),
        agreement: d.agreement,
        members: d
            .member_outputs
            .iter()
            .map(|m| {
                let outcome: Option<&ExecutionOutcome> = m.outcome.as_ref();
                MemberRecord {
                    model_id: &m.model_id,
                    answer: &m.answer,
                    status: outcome.map(|o| o.status),
                    rows: outcome.and_then(|o| o.rows.as_ref()).map(Vec::len),
                    error: outcome.and_then(|o| o.error_text.as_deref()),
                }
            })
            .collect(),
    }
}

/// Subsets named in the config, or every subset of at least `min_size` models.
pub fn ensemble_subsets(config: &RunConfig) -> Vec<Vec<String>> {
    match &config.ensemble.subsets {
        Some(s) => s.clone(),
        None => {
            let ids: Vec<String> = config.models.iter().map(|m| m.model_id.clone()).collect();
            ensemble::subsets(&ids, config.ensemble.min_size.max(2))
        }
    }
}

pub fn validate_all<E: Executor + Sync>(
    ids: &[String],
    subset: &[String],
    predictions: &BTreeMap<String, ModelPredictions>,
    executor: &E,
    rule: VoteRule,
    parallelism: usize,
) -> Result<Vec<EnsembleDecision>> {
    pool(parallelism)?.install(|| {
        ids.par_iter()
            .map(|qid| Ok(validate(qid, &candidates_for(qid, subset, predictions)?, executor, rule)))
            .collect()
    })
}

/// Scores every model, builds every ensemble, and writes the combined report.
/// Rows: individual models in config order, then ensembles smallest first.
pub fn run_ensemble_and_score(
    config: &RunConfig,
    predictions_dir: Option<&Path>,
) -> Result<Vec<(String, ScoreReport)>> {
    config.validate()?;
    let ws = Workspace::load(config)?;
    let truth = ws.ground_truth()?;
    let ids = ws.eval_ids();
    let dir: PathBuf = predictions_dir.map_or_else(|| config.paths.output_dir.join(PREDICTIONS_DIR), Path::to_path_buf);
    let executor = open_executor(config)?;

    let mut predictions = BTreeMap::new();
    for model in &config.models {
        let answers = load_predictions(&dir.join(format!("{}.json", model.model_id)), &model.model_id, &ids)?;
        predictions.insert(model.model_id.clone(), ModelPredictions { priority: model.priority, answers });
    }
    let aligned =
        |answers: &BTreeMap<String, Answer>| -> Vec<Answer> { ids.iter().map(|id| answers[id].clone()).collect() };

    let mut reports = Vec::new();
    for model in &config.models {
        let preds = aligned(&predictions[&model.model_id].answers);
        let (report, _) =
            score_answers(&preds, &truth, &executor, &config.costs, config.scoring_mode, config.parallelism)?;
        reports.push((model.model_id.clone(), report));
    }

    let out = &config.paths.output_dir;
    for subset in ensemble_subsets(config) {
        let label = subset_label(&subset);
        let decisions = validate_all(&ids, &subset, &predictions, &executor, config.ensemble.rule, config.parallelism)?;
        let finals: Vec<Answer> = decisions.iter().map(|d| d.final_answer.clone()).collect();
        write(
            &out.join("ensembles").join(format!("{label}.json")),
            answers_to_json(ids.iter().map(String::as_str).zip(&finals)) + "\n",
        )?;
        write(
            &out.join("ensembles").join(format!("{label}.decisions.jsonl")),
            jsonl(decisions.iter().map(decision_record)),
        )?;
        let (report, _) =
            score_answers(&finals, &truth, &executor, &config.costs, config.scoring_mode, config.parallelism)?;
        reports.push((label, report));
    }
    write_reports(&out.join("reports"), &reports, &config.costs)?;
    Ok(reports)
}

/// Scores a single prediction file against the eval labels.
pub fn run_score(config: &RunConfig, predictions: &Path, label: &str) -> Result<(String, ScoreReport)> {
    config.validate()?;
    let ws = Workspace::load(config)?;
    let truth = ws.ground_truth()?;
    let ids = ws.eval_ids();
    let answers = load_predictions(predictions, label, &ids)?;
    let preds: Vec<Answer> = ids.iter().map(|id| answers[id].clone()).collect();
    let executor = open_executor(config)?;
    let (report, _) = score_answers(&preds, &truth, &executor, &config.costs, config.scoring_mode, config.parallelism)?;
    Ok((label.to_owned(), report))
}

pub const ABLATION_ROWS: [&str; 4] =
    ["No Few-shot", "1 embedding model", "2 embedding models", "2 embedding models + column values"];

fn slug(label: &str) -> String {
    let mut s: String =
        label.chars().map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '-' }).collect();
    while s.contains("--") {
        s = s.replace("--", "-");
    }
    s.trim_matches('-').to_owned()
}

/// Runs the four prompt configurations for one model and scores each.
pub fn run_ablation(config: &RunConfig) -> Result<Vec<(String, ScoreReport)>> {
    config.validate()?;
    let model_id = match &config.ablation.model {
        Some(m) => m.clone(),
        None => config
            .models
            .first()
            .map(|m| m.model_id.clone())
            .ok_or_else(|| Error::Config("no models configured".into()))?,
    };
    if config.retrieval.providers.len() < 2 {
        return Err(Error::Config("the ablation needs two embedding providers".into()));
    }
    let ws = Workspace::load(config)?;
    let truth = ws.ground_truth()?;
    let executor = open_executor(config)?;
    let providers = &config.retrieval.providers;
    let plain = PromptConfig { with_samples: false, ..config.prompt.clone() };
    let with_values = PromptConfig { with_samples: true, ..config.prompt.clone() };
    let rows: [(usize, &[EmbeddingProviderConfig], &PromptConfig); 4] = [
        (0, &[], &plain),
        (config.retrieval.n, &providers[..1], &plain),
        (config.retrieval.n, &providers[..2], &plain),
        (config.retrieval.n, &providers[..2], &with_values),
    ];

    let mut reports = Vec::with_capacity(rows.len());
    let mut outputs = Vec::with_capacity(rows.len());
    for (label, (n, row_providers, prompt)) in ABLATION_ROWS.iter().zip(rows) {
        let mut row_config = config.clone();
        row_config.retrieval.n = n;
        let set = build_prompts(&row_config, &ws, row_providers, prompt)?;
        let run = generate_models(config, &[model_id.as_str()], &set.prompts)?.remove(0);
        let preds: Vec<Answer> = run.outcomes.iter().map(|(g, _)| g.extracted.clone()).collect();
        let (report, _) =
            score_answers(&preds, &truth, &executor, &config.costs, config.scoring_mode, config.parallelism)?;
        reports.push((label.to_string(), report));
        outputs.push((slug(label), set, run));
    }
    let root = config.paths.output_dir.join("ablation");
    for (dir, set, run) in &outputs {
        write_prompt_set(&root.join(dir), set, config.prompt.archive)?;
        write_model_run(&root.join(dir), run)?;
    }
    write_reports(&root, &reports, &config.costs)?;
    Ok(reports)
}

/// Writes one fine-tuning record per labeled train question, with exemplars
/// retrieved from the rest of the train set.
pub fn export_raft(config: &RunConfig, out: Option<&Path>) -> Result<(PathBuf, usize)> {
    config.validate()?;
    let p = &config.paths;
    let (questions, labels) = load_split(&p.train_questions, Some(&p.train_labels), Split::Train)?;
    let train = TrainIndex::new(&questions, &labels)?;
    let ws = Workspace {
        train_questions: questions,
        train_labels: labels,
        train,
        eval_questions: Vec::new(),
        eval_labels: Vec::new(),
    };
    let records_for = labeled(&ws);
    let schema = introspect(&p.db, &config.prompt.schema_options())?;
    let exemplars =
        retrieve_exemplars(&config.retrieval.providers, &records_for, &records_for, config.retrieval.n, true)?;
    let options: PromptOptions = config.prompt.options();
    let records = raft_records(&records_for, &ws.train, &schema, &exemplars, &options)?;
    let path = out.map_or_else(|| p.output_dir.join("raft.jsonl"), Path::to_path_buf);
    write(&path, jsonl(&records))?;
    Ok((path, records.len()))
}

/// Embeds the questions of every file with `provider` and writes a vector file keyed by text hash.
pub fn embed_index(provider: &dyn embed::EmbeddingProvider, question_files: &[PathBuf], out: &Path) -> Result<usize> {
    let mut questions = Vec::new();
    for f in question_files {
        questions.extend(load_questions(f, Split::Train)?);
    }
    let texts: Vec<&str> = questions.iter().map(|q| q.text.as_str()).collect();
    let store = embed::text_store(provider, &texts)?;
    if let Some(parent) = out.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    crate::vector_file::write(&store, out)?;
    Ok(store.len())
}
