//! The pipeline stages. Each stage reads its inputs from disk and writes
//! its outputs to disk, so any stage can be re-run on its own.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use argmine::artifact::{read_ndjson, write_ndjson, Header};
use argmine::corpus::{read_corpus, validate, write_corpus};
use argmine::dataset::{max_component_len, PairDataset, PairKey};
use argmine::embeddings::{build_table, load_vectors, EmbeddingTable, PretrainedVectors};
use argmine::ensemble::{agreement, ensemble_predict, evaluate as score, ComponentVote, EnsemblePrediction, PairVote};
use argmine::gradcheck::{gradcheck as run_gradcheck, GradcheckConfig, GradcheckReport};
use argmine::metrics::{confusion_csv, render_text, AgreementReport, EvaluationReport};
use argmine::neural::{count_params, init_params, load_checkpoint, save_checkpoint, Model, ParamCount};
use argmine::pairing::enumerate_pairs;
use argmine::training::train_ensemble;
use argmine::{CorpusSchema, Document, PairInstance, SplitTag, Variant};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{StageError, StageExt};
use crate::layout::{self, Layout};
use crate::sources::{assign_splits, load_corpus};

type StageResult<T> = Result<T, StageError>;

pub const SPLITS: [&str; 3] = ["train", "valid", "test"];

/// A parsed config with its provenance hash.
#[derive(Debug, Clone)]
pub struct Context {
    pub cfg: RunConfig,
    pub hash: String,
    pub layout: Layout,
}

impl Context {
    pub fn new(cfg: RunConfig) -> Self {
        let hash = cfg.hash();
        let layout = Layout::new(&cfg.out_dir);
        Context { cfg, hash, layout }
    }

    pub fn header(&self, kind: &str) -> Header {
        Header::new(kind, &self.hash)
    }

    fn schema(&self) -> &CorpusSchema {
        &self.cfg.schema
    }

    /// Warns when an input was produced under another configuration.
    fn note_provenance(&self, what: &Path, hash: Option<&str>) {
        match hash {
            Some(h) if h != self.hash => log::warn!(
                "stage=provenance input={} config_hash={h} current={}",
                what.display(),
                self.hash
            ),
            None => log::warn!("stage=provenance input={} config_hash=missing", what.display()),
            _ => {}
        }
    }

    fn read_docs(&self, path: &Path, stage: &'static str) -> StageResult<Vec<Document>> {
        let file = read_corpus(path, Some(self.schema())).stage(stage)?;
        self.note_provenance(path, file.config_hash.as_deref());
        Ok(file.documents)
    }

    fn read_pairs(&self, path: &Path, stage: &'static str) -> StageResult<Vec<PairInstance>> {
        let (header, pairs) = read_ndjson(path).stage(stage)?;
        self.note_provenance(path, header.as_ref().map(|h| h.config_hash.as_str()));
        Ok(pairs)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub documents: usize,
    pub components: usize,
    pub pairs: usize,
    pub links: usize,
}

/// Reads the configured corpus, checks it, assigns splits and writes the
/// normalized corpus to `out`.
pub fn ingest(ctx: &Context, out: &Path) -> StageResult<Vec<Document>> {
    let mut docs = load_corpus(&ctx.cfg.corpus, ctx.schema()).stage("ingest")?;
    for d in &docs {
        d.check_schema(ctx.schema()).stage("ingest")?;
        let v = validate(d);
        if !v.is_empty() {
            return Err(StageError::data("ingest", format!("document {}: {}", d.doc_id, v[0])));
        }
    }
    assign_splits(&mut docs, &ctx.cfg.splits);
    write_corpus(out, &docs, &ctx.hash).stage("ingest")?;
    for tag in [SplitTag::Train, SplitTag::Valid, SplitTag::Test] {
        let n = docs.iter().filter(|d| d.split_tag == tag).count();
        log::info!("stage=ingest split={tag} documents={n}");
    }
    Ok(docs)
}

/// Checks every document of a normalized corpus file. Returns one line
/// per violation; an empty list means the file is valid.
pub fn validate_file(path: &Path, schema: Option<&CorpusSchema>) -> StageResult<(usize, Vec<String>)> {
    let file = read_corpus(path, schema).stage("validate")?;
    let mut lines = Vec::new();
    for d in &file.documents {
        for v in validate(d) {
            lines.push(format!("{}\t{v}", d.doc_id));
        }
    }
    Ok((file.documents.len(), lines))
}

/// Enumerates the pairs of every split and writes `<out>/<split>.jsonl`.
pub fn pairs(ctx: &Context, corpus: &Path, out: &Path) -> StageResult<BTreeMap<String, SplitCounts>> {
    let docs = ctx.read_docs(corpus, "pairs")?;
    let mut counts = BTreeMap::new();
    for split in SPLITS {
        let in_split: Vec<&Document> = docs.iter().filter(|d| d.split_tag.to_string() == split).collect();
        let pairs: Vec<PairInstance> = in_split
            .iter()
            .flat_map(|d| enumerate_pairs(d, &ctx.cfg.pairs, ctx.schema()))
            .collect();
        let c = SplitCounts {
            documents: in_split.len(),
            components: in_split.iter().map(|d| d.components.len()).sum(),
            pairs: pairs.len(),
            links: pairs.iter().filter(|p| p.link && !p.is_self_pair).count(),
        };
        log::info!(
            "stage=pairs split={split} documents={} pairs={} links={}",
            c.documents,
            c.pairs,
            c.links
        );
        write_ndjson(&out.join(format!("{split}.jsonl")), &ctx.header("pairs"), &pairs).stage("pairs")?;
        counts.insert(split.to_string(), c);
    }
    Ok(counts)
}

/// The frozen embedding table over every corpus token.
pub fn embedding_table(ctx: &Context, docs: &[Document]) -> StageResult<EmbeddingTable> {
    let e = &ctx.cfg.embeddings;
    let pretrained = match &e.path {
        Some(p) => load_vectors(p, e.dim).stage("embeddings")?,
        None => PretrainedVectors::empty(e.dim),
    };
    let table = build_table(
        docs.iter()
            .flat_map(|d| d.components.iter().flat_map(|c| c.tokens.iter().map(String::as_str))),
        &pretrained,
        e.seed,
    );
    log::info!(
        "stage=embeddings vocab={} oov={} dim={}",
        table.vocab_len(),
        table.oov_rows.len(),
        table.dim()
    );
    Ok(table)
}

/// Trains one model per `(seed, directory)` target and writes each
/// checkpoint and `history.csv`. At most `jobs` members train at once.
pub fn train(
    ctx: &Context,
    corpus: &Path,
    train_pairs: &Path,
    valid_pairs: &Path,
    targets: &[(u64, PathBuf)],
    jobs: usize,
) -> StageResult<ParamCount> {
    let docs = ctx.read_docs(corpus, "train")?;
    let table = Arc::new(embedding_table(ctx, &docs)?);
    let max_len = max_component_len(&docs);
    let arch = ctx.cfg.arch.resolve(max_len, table.dim(), ctx.schema());
    arch.check().stage("train")?;
    let build = |path: &Path| -> StageResult<PairDataset> {
        let pairs = ctx.read_pairs(path, "train")?;
        PairDataset::build(&pairs, &docs, &table, ctx.schema(), max_len).stage("train")
    };
    let train_set = build(train_pairs)?;
    let valid = build(valid_pairs)?;
    if train_set.is_empty() {
        return Err(StageError::data("train", "training split has no pairs"));
    }
    if valid.positive_links() == 0 {
        return Err(StageError::data("train", "validation split has no positive links"));
    }
    let counts = count_params(&init_params(&arch, 0), Some(&table));
    log::info!(
        "stage=train variant={} max_len={max_len} trainable={} total={} train_pairs={} valid_pairs={}",
        arch.variant,
        counts.trainable,
        counts.total,
        train_set.len(),
        valid.len()
    );
    let seeds: Vec<u64> = targets.iter().map(|t| t.0).collect();
    let init = |seed: u64| Model::new(arch.clone(), init_params(&arch, seed), table.clone());
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .stage("train")?;
    let trained = pool
        .install(|| train_ensemble(&seeds, init, &train_set, &valid, &ctx.cfg.train))
        .stage("train")?;
    for ((seed, dir), (model, history)) in targets.iter().zip(trained) {
        save_checkpoint(dir, &model, ctx.schema(), &ctx.hash).stage("train")?;
        layout::write_text(&dir.join(layout::HISTORY), &ctx.header("history"), &history.to_csv()).stage("train")?;
        log::info!(
            "stage=train seed={seed} best_epoch={} stopped_epoch={} best_valid_link_f1={:.4}",
            history.best_epoch,
            history.stopped_epoch,
            history.epochs[history.best_epoch].valid_link_f1
        );
    }
    Ok(counts)
}

fn load_models(ctx: &Context, dirs: &[PathBuf]) -> StageResult<Vec<Model>> {
    let mut models = Vec::with_capacity(dirs.len());
    for dir in dirs {
        let (model, manifest) = load_checkpoint(dir).stage("predict")?;
        ctx.note_provenance(dir, Some(&manifest.config_hash));
        if &manifest.schema != ctx.schema() {
            return Err(StageError::config("predict", format!("{} was trained on another schema", dir.display())));
        }
        models.push(model);
    }
    let first = models.first().ok_or_else(|| StageError::config("predict", "no models given"))?;
    if models.iter().any(|m| m.embeddings.matrix != first.embeddings.matrix) {
        return Err(StageError::config("predict", "ensemble members use different embedding tables"));
    }
    Ok(models)
}

/// Ensemble predictions for `pairs`: writes the pair and component votes
/// to `out` and, with two or more members, the agreement report to `reports`.
pub fn predict(
    ctx: &Context,
    corpus: &Path,
    pairs: &Path,
    model_dirs: &[PathBuf],
    out: &Path,
    reports: &Path,
) -> StageResult<Option<AgreementReport>> {
    let models = load_models(ctx, model_dirs)?;
    let docs = ctx.read_docs(corpus, "predict")?;
    let instances = ctx.read_pairs(pairs, "predict")?;
    let first = &models[0];
    let data = PairDataset::build(&instances, &docs, &first.embeddings, ctx.schema(), first.config.max_len)
        .stage("predict")?;
    let (pred, per_model) =
        ensemble_predict(&models, &data, ctx.schema(), ctx.cfg.link_rule, false).stage("predict")?;
    write_ndjson(&out.join(layout::PAIR_PREDICTIONS), &ctx.header("pair_predictions"), &pred.pairs)
        .stage("predict")?;
    write_ndjson(
        &out.join(layout::COMPONENT_PREDICTIONS),
        &ctx.header("component_predictions"),
        &pred.components,
    )
    .stage("predict")?;
    log::info!(
        "stage=predict models={} pairs={} components={}",
        models.len(),
        pred.pairs.len(),
        pred.components.len()
    );
    if models.len() < 2 || data.pairs.iter().all(|p| p.is_self_pair) {
        return Ok(None);
    }
    let keys: Vec<PairKey> = data.pairs.iter().map(|p| p.key.clone()).collect();
    let self_pairs: Vec<bool> = data.pairs.iter().map(|p| p.is_self_pair).collect();
    let report = agreement(&keys, &self_pairs, &per_model, ctx.schema().n_forward(), ctx.cfg.link_rule)
        .stage("predict")?;
    layout::write_json(&reports.join(layout::AGREEMENT), &ctx.header("agreement"), &report).stage("predict")?;
    log::info!(
        "stage=predict alpha_component={:.4} alpha_link={:.4} alpha_relation={:.4}",
        report.component,
        report.link,
        report.relation
    );
    Ok(Some(report))
}

/// Scores stored predictions against the gold labels of `pairs` and
/// writes the metrics files to `reports`.
pub fn evaluate(
    ctx: &Context,
    corpus: &Path,
    pairs: &Path,
    predictions: &Path,
    reports: &Path,
) -> StageResult<EvaluationReport> {
    let docs = ctx.read_docs(corpus, "evaluate")?;
    let instances = ctx.read_pairs(pairs, "evaluate")?;
    let pair_path = predictions.join(layout::PAIR_PREDICTIONS);
    let comp_path = predictions.join(layout::COMPONENT_PREDICTIONS);
    let (h1, votes): (_, Vec<PairVote>) = read_ndjson(&pair_path).stage("evaluate")?;
    let (h2, components): (_, Vec<ComponentVote>) = read_ndjson(&comp_path).stage("evaluate")?;
    ctx.note_provenance(&pair_path, h1.as_ref().map(|h| h.config_hash.as_str()));
    ctx.note_provenance(&comp_path, h2.as_ref().map(|h| h.config_hash.as_str()));
    // only gold labels and true lengths are needed here
    let table = build_table(
        docs.iter()
            .flat_map(|d| d.components.iter().flat_map(|c| c.tokens.iter().map(String::as_str))),
        &PretrainedVectors::empty(1),
        0,
    );
    let data = PairDataset::build(&instances, &docs, &table, ctx.schema(), max_component_len(&docs))
        .stage("evaluate")?;
    let aligned = votes.len() == data.len()
        && votes.iter().zip(&data.pairs).all(|(v, p)| {
            v.doc_id == p.key.doc_id && v.source_id == p.key.source_id && v.target_id == p.key.target_id
        });
    if !aligned {
        return Err(StageError::data(
            "evaluate",
            format!("{} does not match the pairs in {}", pair_path.display(), pairs.display()),
        ));
    }
    let report = score(
        &EnsemblePrediction {
            pairs: votes,
            components,
        },
        &data,
        ctx.schema(),
    )
    .stage("evaluate")?;
    let h = ctx.header("metrics");
    layout::write_json(&reports.join(layout::METRICS_JSON), &h, &report).stage("evaluate")?;
    layout::write_text(&reports.join(layout::METRICS_TXT), &h, &render_text(&report)).stage("evaluate")?;
    layout::write_text(
        &reports.join(layout::CONFUSION_COMPONENTS),
        &h,
        &confusion_csv(&report.components),
    )
    .stage("evaluate")?;
    layout::write_text(
        &reports.join(layout::CONFUSION_RELATIONS),
        &h,
        &confusion_csv(&report.relations),
    )
    .stage("evaluate")?;
    log::info!(
        "stage=evaluate components_macro_f1={:.4} link_f1={:.4} relations_macro_f1={:.4} average={:.4}",
        report.components.macro_f1,
        report.link.f1,
        report.relations.macro_f1,
        report.average
    );
    Ok(report)
}

/// Collects the config hash of every artifact under the output directory.
fn artifact_hashes(ctx: &Context) -> StageResult<Vec<(PathBuf, Option<String>)>> {
    let l = &ctx.layout;
    let mut files = vec![l.corpus()];
    files.extend(SPLITS.iter().map(|s| l.pairs(s)));
    files.extend(ctx.cfg.seeds.iter().map(|&s| l.model(s).join(layout::HISTORY)));
    files.push(l.predictions().join(layout::PAIR_PREDICTIONS));
    files.push(l.predictions().join(layout::COMPONENT_PREDICTIONS));
    for name in [
        layout::METRICS_JSON,
        layout::METRICS_TXT,
        layout::CONFUSION_COMPONENTS,
        layout::CONFUSION_RELATIONS,
        layout::AGREEMENT,
    ] {
        files.push(l.reports().join(name));
    }
    let mut out = Vec::new();
    for f in files.into_iter().filter(|f| f.exists()) {
        let h = layout::read_header(&f).stage("report")?;
        out.push((f, h.map(|h| h.config_hash)));
    }
    for &seed in &ctx.cfg.seeds {
        let dir = l.model(seed);
        if dir.join("manifest.json").exists() {
            let raw = std::fs::read_to_string(dir.join("manifest.json")).stage("report")?;
            let v: serde_json::Value = serde_json::from_str(&raw).stage("report")?;
            out.push((dir.join("manifest.json"), v["config_hash"].as_str().map(str::to_string)));
        }
    }
    Ok(out)
}

/// Checks that every input shares one config hash and writes `summary.txt`.
pub fn report(ctx: &Context) -> StageResult<String> {
    let reports = ctx.layout.reports();
    let (h, metrics): (Header, EvaluationReport) =
        layout::read_json(&reports.join(layout::METRICS_JSON)).stage("report")?;
    let hashes = artifact_hashes(ctx)?;
    let mismatched: Vec<String> = hashes
        .iter()
        .filter(|(_, x)| x.as_deref() != Some(h.config_hash.as_str()))
        .map(|(p, x)| format!("{} ({})", p.display(), x.as_deref().unwrap_or("no hash")))
        .collect();
    if !mismatched.is_empty() {
        let more = mismatched.len().saturating_sub(3);
        let mut list = mismatched[..mismatched.len().min(3)].join(", ");
        if more > 0 {
            list.push_str(&format!(" and {more} more"));
        }
        return Err(StageError::check(
            "report",
            format!("{} inputs disagree with config hash {}: {list}", mismatched.len(), h.config_hash),
        ));
    }
    let mut text = render_text(&metrics);
    let agreement = reports.join(layout::AGREEMENT);
    if agreement.exists() {
        let (_, a): (Header, AgreementReport) = layout::read_json(&agreement).stage("report")?;
        text.push_str(&format!(
            "Agreement among {} models (Krippendorff's alpha)\n  component {:.4}\n  link      {:.4}\n  relation  {:.4}\n",
            a.n_models, a.component, a.link, a.relation
        ));
    }
    text.push_str(&format!("Inputs ({} files, config {})\n", hashes.len(), h.config_hash));
    layout::write_text(&reports.join(layout::SUMMARY), &ctx.header("summary"), &text).stage("report")?;
    Ok(text)
}

pub fn gradcheck(variant: Variant, seed: u64, corrupt: bool) -> StageResult<GradcheckReport> {
    let cfg = GradcheckConfig {
        corrupt,
        ..GradcheckConfig::new(variant, seed)
    };
    run_gradcheck(&cfg).stage("gradcheck")
}

pub fn render_gradcheck(r: &GradcheckReport) -> String {
    let mut out = String::new();
    for b in &r.blocks {
        let status = if b.max_rel_error < r.threshold { "ok" } else { "FAIL" };
        out.push_str(&format!(
            "variant={} block={} max_rel_error={:.3e} checked={} {status}\n",
            r.variant, b.block, b.max_rel_error, b.checked
        ));
    }
    out
}

#[derive(Debug, Serialize)]
struct RunRecord<'a> {
    config: &'a RunConfig,
    splits: BTreeMap<String, SplitCounts>,
    parameters: ParamCount,
    metrics: &'a EvaluationReport,
    agreement: Option<AgreementReport>,
}

/// Every stage in order on the layout of `ctx`.
pub fn pipeline(ctx: &Context, jobs: usize) -> StageResult<EvaluationReport> {
    ctx.cfg.check().map_err(|(stage, msg)| StageError::config(stage, msg))?;
    let l = &ctx.layout;
    std::fs::create_dir_all(&l.root).stage("config")?;
    ingest(ctx, &l.corpus())?;
    let counts = pairs(ctx, &l.corpus(), &l.root.join("pairs"))?;
    let targets: Vec<(u64, PathBuf)> = ctx.cfg.seeds.iter().map(|&s| (s, l.model(s))).collect();
    let parameters = train(ctx, &l.corpus(), &l.pairs("train"), &l.pairs("valid"), &targets, jobs)?;
    let dirs: Vec<PathBuf> = targets.into_iter().map(|t| t.1).collect();
    let agreement = predict(ctx, &l.corpus(), &l.pairs("test"), &dirs, &l.predictions(), &l.reports())?;
    let metrics = evaluate(ctx, &l.corpus(), &l.pairs("test"), &l.predictions(), &l.reports())?;
    report(ctx)?;
    let record = RunRecord {
        config: &ctx.cfg,
        splits: counts,
        parameters,
        metrics: &metrics,
        agreement,
    };
    layout::write_json(&l.run(), &ctx.header("run"), &record).stage("report")?;
    Ok(metrics)
}
