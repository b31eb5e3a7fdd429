use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use sdoh_core::corpus::{
    compute_kappa, load_corpus, read_manifest, select_docs, split_corpus, validate_corpus, write_corpus,
    AnnotatedDoc, Domain, SplitRatios, MANIFEST_FILE,
};
use sdoh_core::linker::{train_linker, LinkerConfig, PairClassifierModel, DEFAULT_MAX_SENTENCE_DISTANCE};
use sdoh_core::pipeline::{
    aggregate_rates, compare_strategies, read_records, render_rate_tables, run_batch, write_records, AdaptConfig,
    Models, RawDocument, Strategy,
};
use sdoh_core::schema::Schema;
use sdoh_core::scorer::{render_table, score_end_to_end, score_relations, EndpointAlignment, EvalReport, Mode};
use sdoh_core::selector::{select_notes, stratified_sample, KeywordLexicon, SelectOptions};
use sdoh_core::synth::{generate_corpus, separability_check, SynthOptions, TemplateSet};
use sdoh_core::tagger::{train_tagger, TokenClassifierModel, TrainConfig};
use sdoh_core::textproc::{encode_bio, tokenize};
use tracing::{info, warn};

use crate::config::{pick, RunConfig};
use crate::{
    fail, AdaptArgs, AggregateArgs, Categorize, Category, Cli, CmdResult, Command, CorpusArg, DataArgs, Failure,
    IngestArgs, KappaArgs, PredictArgs, ScoreArgs, ScoreMode, SelectArgs, SplitArgs, SynthArgs, TrainNerArgs,
    TrainReArgs, TrainingArgs,
};

use Category::{Data, Model, Usage};

struct Ctx {
    config: RunConfig,
    schema: Schema,
}

pub fn run(cli: Cli) -> CmdResult {
    let config = match &cli.config {
        Some(path) => {
            require(path)?;
            RunConfig::load(path).or_fail(Usage, format!("config {}", path.display()))?
        }
        None => RunConfig::default(),
    };
    let schema = match cli.schema.as_ref().or(config.schema.as_ref()) {
        Some(path) => {
            require(path)?;
            Schema::load(path).or_fail(Data, format!("schema {}", path.display()))?
        }
        None => Schema::default_sdoh(),
    };
    let ctx = Ctx { config, schema };
    match cli.command {
        Command::Ingest(a) => ingest(&ctx, a),
        Command::Validate(a) => validate(&ctx, a),
        Command::Split(a) => split(&ctx, a),
        Command::Select(a) => select(&ctx, a),
        Command::Synth(a) => synth(&ctx, a),
        Command::TrainNer(a) => train_ner(&ctx, a),
        Command::TrainRe(a) => train_re(&ctx, a),
        Command::Predict(a) => predict(&ctx, a),
        Command::Score(a) => score(&ctx, a),
        Command::Adapt(a) => adapt(&ctx, a),
        Command::Aggregate(a) => aggregate(&ctx, a),
        Command::Kappa(a) => kappa(&ctx, a),
    }
}

fn require(path: &Path) -> Result<(), Failure> {
    if path.exists() {
        Ok(())
    } else {
        Err(fail(Usage, format!("{} does not exist", path.display())))
    }
}

fn required(flag: Option<PathBuf>, config: Option<&PathBuf>, what: &str) -> Result<PathBuf, Failure> {
    let path = flag
        .or_else(|| config.cloned())
        .ok_or_else(|| fail(Usage, format!("no {what} given by flag or config")))?;
    require(&path)?;
    Ok(path)
}

fn emit(output: Option<&Path>, content: &str) -> CmdResult {
    match output {
        Some(path) => fs::write(path, content).or_fail(Data, format!("writing {}", path.display())),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn load(ctx: &Ctx, dir: &Path) -> Result<Vec<AnnotatedDoc>, Failure> {
    require(dir)?;
    let docs = load_corpus(dir, &ctx.schema).or_fail(Data, format!("loading {}", dir.display()))?;
    info!(dir = %dir.display(), documents = docs.len(), "corpus loaded");
    Ok(docs)
}

fn load_ner(path: &Path) -> Result<TokenClassifierModel, Failure> {
    TokenClassifierModel::load(path).or_fail(Model, format!("tagger model {}", path.display()))
}

fn load_re(path: &Path) -> Result<PairClassifierModel, Failure> {
    PairClassifierModel::load(path).or_fail(Model, format!("linker model {}", path.display()))
}

fn ingest(ctx: &Ctx, a: IngestArgs) -> CmdResult {
    let mut docs = load(ctx, &a.input)?;
    if let Some(domain) = &a.domain {
        let domain: Domain = domain.parse().unwrap();
        for d in &mut docs {
            d.document.domain = domain.clone();
        }
    }
    write_corpus(&a.output, &docs).or_fail(Data, format!("writing {}", a.output.display()))?;
    let entities: usize = docs.iter().map(|d| d.entities.len()).sum();
    let relations: usize = docs.iter().map(|d| d.relations.len()).sum();
    println!("{} documents\t{entities} entities\t{relations} relations", docs.len());
    Ok(())
}

fn validate(ctx: &Ctx, a: CorpusArg) -> CmdResult {
    let docs = load(ctx, &a.corpus)?;
    let report = validate_corpus(&docs, &ctx.schema);
    for v in &report.violations {
        println!("error\t{v}");
    }
    for w in &report.warnings {
        println!("warning\t{w}");
    }
    if report.is_clean() {
        println!("{} documents, no violations, {} warnings", docs.len(), report.warnings.len());
        Ok(())
    } else {
        Err(fail(Data, format!("{} violations", report.violations.len())))
    }
}

fn doc_ids(corpus: Option<&Path>, manifest: Option<&Path>) -> Result<Vec<String>, Failure> {
    let manifest = match (corpus, manifest) {
        (_, Some(m)) => m.to_path_buf(),
        (Some(dir), None) => {
            require(dir)?;
            let m = dir.join(MANIFEST_FILE);
            if !m.exists() {
                let mut ids: Vec<String> = fs::read_dir(dir)
                    .or_fail(Data, format!("listing {}", dir.display()))?
                    .filter_map(|e| e.ok())
                    .map(|e| e.path())
                    .filter(|p| p.extension().is_some_and(|x| x == "txt"))
                    .filter_map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()))
                    .collect();
                ids.sort();
                return Ok(ids);
            }
            m
        }
        (None, None) => return Err(fail(Usage, "give --corpus or --manifest")),
    };
    require(&manifest)?;
    let rows = read_manifest(&manifest).or_fail(Data, "reading manifest")?;
    Ok(rows.into_iter().map(|r| r.doc_id).collect())
}

fn split(ctx: &Ctx, a: SplitArgs) -> CmdResult {
    let ids = doc_ids(a.corpus.as_deref(), a.manifest.as_deref())?;
    let c = &ctx.config.split;
    let ratios = SplitRatios::new(pick(a.ratio, c.train, 0.8), pick(a.val, c.val, 0.10));
    let seed = pick(a.seed, c.seed, 7);
    let s = split_corpus(&ids, ratios, seed).or_fail(Usage, "split")?;
    let part: BTreeMap<&str, &str> = [(&s.train, "train"), (&s.validation, "validation"), (&s.test, "test")]
        .into_iter()
        .flat_map(|(list, name)| list.iter().map(move |id| (id.as_str(), name)))
        .collect();
    let mut out = String::from("doc_id\tsplit\n");
    for id in &ids {
        out.push_str(&format!("{id}\t{}\n", part[id.as_str()]));
    }
    emit(a.output.as_deref(), &out)?;
    eprintln!("train {}\tvalidation {}\ttest {}", s.train.len(), s.validation.len(), s.test.len());
    Ok(())
}

/// Documents of `corpus` assigned to `which` in a split file.
fn split_part(ctx: &Ctx, corpus: &Path, split: &Path, which: &str) -> Result<Vec<AnnotatedDoc>, Failure> {
    require(split)?;
    let docs = load(ctx, corpus)?;
    let content = fs::read_to_string(split).or_fail(Data, format!("reading {}", split.display()))?;
    let ids: Vec<String> = content
        .lines()
        .skip(1)
        .filter_map(|l| l.split_once('\t'))
        .filter(|(_, part)| *part == which)
        .map(|(id, _)| id.to_string())
        .collect();
    let picked = select_docs(&docs, &ids);
    if picked.len() != ids.len() {
        return Err(fail(Data, format!("split file names documents missing from {}", corpus.display())));
    }
    Ok(picked.into_iter().cloned().collect())
}

fn train_and_val(ctx: &Ctx, d: &DataArgs) -> Result<(Vec<AnnotatedDoc>, Vec<AnnotatedDoc>), Failure> {
    match (&d.corpus, &d.split, &d.train, &d.val) {
        (Some(corpus), Some(split), _, _) => Ok((
            split_part(ctx, corpus, split, "train")?,
            split_part(ctx, corpus, split, "validation")?,
        )),
        (_, _, Some(train), Some(val)) => Ok((load(ctx, train)?, load(ctx, val)?)),
        _ => Err(fail(Usage, "give --train and --val, or --corpus and --split")),
    }
}

fn train_config(ctx: &Ctx, t: &TrainingArgs) -> TrainConfig {
    let c = &ctx.config.training;
    let d = TrainConfig::default();
    TrainConfig {
        max_epochs: pick(t.max_epochs, c.max_epochs, d.max_epochs),
        patience: pick(t.patience, c.patience, d.patience),
        seed: pick(t.train_seed, c.seed, d.seed),
        learning_rate: pick(t.learning_rate, c.learning_rate, d.learning_rate),
        feature_window: pick(t.feature_window, c.feature_window, d.feature_window),
    }
}

fn output_path(flag: Option<PathBuf>, config: Option<&PathBuf>, what: &str) -> Result<PathBuf, Failure> {
    flag.or_else(|| config.cloned())
        .ok_or_else(|| fail(Usage, format!("no {what} output path given by flag or config")))
}

fn train_ner(ctx: &Ctx, a: TrainNerArgs) -> CmdResult {
    let out = output_path(a.output, ctx.config.ner_model.as_ref(), "tagger model")?;
    let (train, val) = train_and_val(ctx, &a.data)?;
    let config = train_config(ctx, &a.training);
    let model = train_tagger(&train, &val, &ctx.schema, &config).or_fail(Data, "training tagger")?;
    model.save(&out).or_fail(Data, format!("writing {}", out.display()))?;
    let meta = model.training_meta();
    println!(
        "{}\tepochs {}\tvalidation F1 {:.4}",
        out.display(),
        meta.epochs_run,
        meta.best_val_f1
    );
    Ok(())
}

fn linker_config(ctx: &Ctx, t: &TrainingArgs, max_sd: Option<usize>) -> LinkerConfig {
    LinkerConfig {
        train: train_config(ctx, t),
        max_sentence_distance: pick(max_sd, ctx.config.max_sentence_distance, DEFAULT_MAX_SENTENCE_DISTANCE),
    }
}

fn train_re(ctx: &Ctx, a: TrainReArgs) -> CmdResult {
    let out = output_path(a.output, ctx.config.re_model.as_ref(), "linker model")?;
    let (train, val) = train_and_val(ctx, &a.data)?;
    let config = linker_config(ctx, &a.training, a.max_sentence_distance);
    let fit = train_linker(&train, &val, &ctx.schema, &config).or_fail(Data, "training linker")?;
    for w in &fit.warnings {
        warn!("{w:?}");
    }
    fit.model.save(&out).or_fail(Data, format!("writing {}", out.display()))?;
    let meta = fit.model.training_meta();
    println!(
        "{}\tepochs {}\tvalidation F1 {:.4}",
        out.display(),
        meta.epochs_run,
        meta.best_val_f1
    );
    Ok(())
}

/// Raw note bytes so that undecodable files fail per document.
fn raw_documents(dir: &Path) -> Result<Vec<RawDocument>, Failure> {
    require(dir)?;
    let manifest = dir.join(MANIFEST_FILE);
    let rows: Vec<(String, String, Domain)> = if manifest.exists() {
        read_manifest(&manifest)
            .or_fail(Data, "reading manifest")?
            .into_iter()
            .map(|r| (r.doc_id, r.patient_id, r.domain))
            .collect()
    } else {
        doc_ids(Some(dir), None)?
            .into_iter()
            .map(|id| (id.clone(), id, Domain::Other("unspecified".into())))
            .collect()
    };
    rows.into_iter()
        .map(|(doc_id, patient_id, domain)| {
            let path = dir.join(format!("{doc_id}.txt"));
            let bytes = fs::read(&path).or_fail(Data, format!("reading {}", path.display()))?;
            Ok(RawDocument {
                doc_id,
                patient_id,
                domain,
                bytes,
            })
        })
        .collect()
}

fn predict(ctx: &Ctx, a: PredictArgs) -> CmdResult {
    let re = load_re(&required(a.re, ctx.config.re_model.as_ref(), "linker model")?)?;
    if a.link_only {
        let docs = load(ctx, &a.input)?;
        let linked = re.link_docs(&docs, &ctx.schema).or_fail(Model, "linking")?;
        write_corpus(&a.output, &linked).or_fail(Data, format!("writing {}", a.output.display()))?;
        let n: usize = linked.iter().map(|d| d.relations.len()).sum();
        println!("{} documents\t{n} relations", linked.len());
        return Ok(());
    }
    let ner = load_ner(&required(a.ner, ctx.config.ner_model.as_ref(), "tagger model")?)?;
    let models = Models::new(ner, re, ctx.schema.clone()).or_fail(Model, "loading models")?;
    let raw = raw_documents(&a.input)?;
    let parallelism = pick(a.parallelism, ctx.config.parallelism, 0);
    let out = run_batch(&models, &raw, parallelism);
    write_corpus(&a.output, &out.annotations).or_fail(Data, format!("writing {}", a.output.display()))?;
    let records = a.output.join("records.tsv");
    fs::write(&records, write_records(&out.records)).or_fail(Data, format!("writing {}", records.display()))?;
    let diagnostics: String = out.diagnostics.iter().map(|d| format!("{d}\n")).collect();
    let diag_path = a.output.join("diagnostics.tsv");
    fs::write(&diag_path, diagnostics).or_fail(Data, format!("writing {}", diag_path.display()))?;
    for d in &out.diagnostics {
        warn!("{d}");
    }
    info!(
        documents = out.timing.documents,
        failed = out.timing.failed,
        threads = out.timing.threads,
        wall_ms = out.timing.wall.as_millis() as u64,
        "batch finished"
    );
    println!(
        "{} documents\t{} failed\t{} records\t{} diagnostics",
        out.timing.documents,
        out.timing.failed,
        out.records.len(),
        out.diagnostics.len()
    );
    Ok(())
}

fn single_mode_table(rows: &[(String, &EvalReport)]) -> String {
    let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(4).max(4);
    let mut out = format!("{:<width$}  {:>8} {:>8} {:>9}\n", "Task", "Prec.", "Rec.", "F(b=1)");
    for (label, r) in rows {
        let s = r.micro;
        out.push_str(&format!(
            "{label:<width$}  {:>8.4} {:>8.4} {:>9.4}\n",
            s.precision, s.recall, s.f1
        ));
    }
    out
}

fn score(ctx: &Ctx, a: ScoreArgs) -> CmdResult {
    let gold = load(ctx, &a.gold)?;
    let pred = load(ctx, &a.pred)?;
    let linked = a.linked.as_deref().map(|p| load(ctx, p)).transpose()?;
    let modes = match a.mode {
        ScoreMode::Strict => vec![Mode::Strict],
        ScoreMode::Lenient => vec![Mode::Lenient],
        ScoreMode::Both => vec![Mode::Strict, Mode::Lenient],
    };
    // per mode: (concept, relation on gold concepts, end to end)
    let mut reports = Vec::new();
    for &mode in &modes {
        let (concept, end_to_end) = score_end_to_end(&gold, &pred, mode).or_fail(Data, "scoring")?;
        let relation = linked
            .as_ref()
            .map(|l| score_relations(&gold, l, mode, EndpointAlignment::Matching))
            .transpose()
            .or_fail(Data, "scoring relations")?;
        reports.push((concept, relation, end_to_end));
    }
    let label = |r: &EvalReport| r.task.to_string();
    let table = if reports.len() == 2 {
        let (s, l) = (&reports[0], &reports[1]);
        let mut rows = vec![(label(&s.0), &s.0, &l.0)];
        if let (Some(sr), Some(lr)) = (&s.1, &l.1) {
            rows.push((label(sr), sr, lr));
        }
        rows.push((label(&s.2), &s.2, &l.2));
        render_table(&rows)
    } else {
        let r = &reports[0];
        let mut rows = vec![(label(&r.0), &r.0)];
        if let Some(rel) = &r.1 {
            rows.push((label(rel), rel));
        }
        rows.push((label(&r.2), &r.2));
        single_mode_table(&rows)
    };
    print!("{table}");
    if let Some(path) = &a.json {
        let all: Vec<&EvalReport> = reports
            .iter()
            .flat_map(|(c, r, e)| [Some(c), r.as_ref(), Some(e)])
            .flatten()
            .collect();
        let json = serde_json::to_string_pretty(&all).or_fail(Data, "encoding reports")?;
        fs::write(path, json).or_fail(Data, format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn adapt(ctx: &Ctx, a: AdaptArgs) -> CmdResult {
    let ner = load_ner(&required(a.ner, ctx.config.ner_model.as_ref(), "tagger model")?)?;
    let re = load_re(&required(a.re, ctx.config.re_model.as_ref(), "linker model")?)?;
    // checks both models against the schema before any training
    Models::new(ner.clone(), re.clone(), ctx.schema.clone()).or_fail(Model, "loading models")?;
    let source = load(ctx, &a.source)?;
    let t_train = load(ctx, &a.target_train)?;
    let t_val = load(ctx, &a.target_val)?;
    let t_test = load(ctx, &a.target_test)?;
    let config = AdaptConfig {
        ner: train_config(ctx, &a.training),
        re: linker_config(ctx, &a.training, a.max_sentence_distance),
    };
    let results = compare_strategies(&ner, &re, &source, &t_train, &t_val, &t_test, &ctx.schema, &config)
        .or_fail(Data, "adapting")?;
    let wanted: BTreeSet<Strategy> = if a.strategies.is_empty() {
        Strategy::ALL.into_iter().collect()
    } else {
        a.strategies.iter().copied().collect()
    };
    let kept: Vec<_> = results.iter().filter(|r| wanted.contains(&r.strategy)).collect();
    let concept: Vec<_> = kept
        .iter()
        .map(|r| (r.strategy.label().to_string(), &r.concept_strict, &r.concept_lenient))
        .collect();
    let end_to_end: Vec<_> = kept
        .iter()
        .map(|r| (r.strategy.label().to_string(), &r.end_to_end_strict, &r.end_to_end_lenient))
        .collect();
    println!("Concept extraction");
    print!("{}", render_table(&concept));
    println!();
    println!("End-to-end");
    print!("{}", render_table(&end_to_end));
    if let Some(path) = &a.json {
        let json = serde_json::to_string_pretty(&kept).or_fail(Data, "encoding results")?;
        fs::write(path, json).or_fail(Data, format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn roster(path: &Path) -> Result<BTreeSet<String>, Failure> {
    require(path)?;
    let content = fs::read_to_string(path).or_fail(Data, format!("reading {}", path.display()))?;
    if content.starts_with("doc_id\tpatient_id") {
        let rows = read_manifest(path).or_fail(Data, "reading roster manifest")?;
        return Ok(rows.into_iter().map(|r| r.patient_id).collect());
    }
    Ok(content
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

fn aggregate(ctx: &Ctx, a: AggregateArgs) -> CmdResult {
    if a.records.len() != a.roster.len() {
        return Err(fail(Usage, "give one --roster per --records"));
    }
    if !a.names.is_empty() && a.names.len() != a.records.len() {
        return Err(fail(Usage, "give one --name per --records, or none"));
    }
    let mut tables = Vec::new();
    for (k, (records, roster_path)) in a.records.iter().zip(&a.roster).enumerate() {
        require(records)?;
        let content = fs::read_to_string(records).or_fail(Data, format!("reading {}", records.display()))?;
        let parsed = read_records(&content).or_fail(Data, format!("parsing {}", records.display()))?;
        let patients = roster(roster_path)?;
        let table = aggregate_rates(&parsed, &patients, &ctx.schema).or_fail(Data, "aggregating")?;
        let name = a.names.get(k).cloned().unwrap_or_else(|| format!("Cohort {}", k + 1));
        tables.push((name, table));
    }
    let refs: Vec<(String, _)> = tables.iter().map(|(n, t)| (n.clone(), t)).collect();
    print!("{}", render_rate_tables(&refs));
    Ok(())
}

fn kappa(ctx: &Ctx, a: KappaArgs) -> CmdResult {
    let first = load(ctx, &a.a)?;
    let second = load(ctx, &a.b)?;
    let by_id: BTreeMap<&str, &AnnotatedDoc> = second.iter().map(|d| (d.doc_id(), d)).collect();
    if by_id.len() != first.len() {
        return Err(fail(Data, "the two corpora hold different documents"));
    }
    let (mut la, mut lb) = (Vec::new(), Vec::new());
    for d in &first {
        let other = by_id
            .get(d.doc_id())
            .ok_or_else(|| fail(Data, format!("document {} only in {}", d.doc_id(), a.a.display())))?;
        if other.document.text != d.document.text {
            return Err(fail(Data, format!("document {} has different text", d.doc_id())));
        }
        let tokens = tokenize(&d.document.text);
        let labels = |doc: &AnnotatedDoc| {
            encode_bio(&tokens, &doc.entities)
                .map(|v| v.into_iter().map(|l| l.to_string()).collect::<Vec<_>>())
                .or_fail(Data, format!("labelling {}", doc.doc_id()))
        };
        la.extend(labels(d)?);
        lb.extend(labels(other)?);
    }
    let report = compute_kappa(&la, &lb).or_fail(Data, "kappa")?;
    println!("units\t{}", report.unit_count);
    println!("observed\t{:.4}", report.observed_agreement);
    println!("expected\t{:.4}", report.expected_agreement);
    println!("kappa\t{:.4}", report.kappa);
    Ok(())
}

fn synth(ctx: &Ctx, a: SynthArgs) -> CmdResult {
    let templates = match a.templates.as_ref().or(ctx.config.templates.as_ref()) {
        Some(path) => {
            require(path)?;
            TemplateSet::load(path).or_fail(Data, format!("templates {}", path.display()))?
        }
        None => TemplateSet::default_sdoh(),
    };
    let report = separability_check(&templates);
    for c in &report.collisions {
        warn!("phrase `{}` shared by {} and {}", c.phrase, c.first, c.second);
    }
    let c = &ctx.config.synth;
    let opts = SynthOptions {
        id_prefix: a.prefix,
        domain: a.domain.parse().unwrap(),
        docs_per_patient: a.docs_per_patient,
        threads: 1,
    };
    let n = pick(a.n, c.n_docs, 100);
    let docs = generate_corpus(
        &ctx.schema,
        &templates,
        n,
        pick(a.seed, c.seed, 1),
        pick(a.shift, c.shift, 0.0),
        &opts,
    )
    .or_fail(Usage, "generating corpus")?;
    write_corpus(&a.output, &docs).or_fail(Data, format!("writing {}", a.output.display()))?;
    println!("{} documents written to {}", docs.len(), a.output.display());
    Ok(())
}

fn select(ctx: &Ctx, a: SelectArgs) -> CmdResult {
    let lexicon = match a.lexicon.as_ref().or(ctx.config.lexicon.as_ref()) {
        Some(path) => {
            require(path)?;
            KeywordLexicon::load(path).or_fail(Data, format!("lexicon {}", path.display()))?
        }
        None => KeywordLexicon::example(),
    };
    let docs = load(ctx, &a.corpus)?;
    let notes: Vec<_> = docs.iter().map(|d| d.document.clone()).collect();
    let opts = SelectOptions {
        mode: a.match_mode,
        uniqueness: a.uniqueness,
    };
    let min_unique = pick(a.min_unique, ctx.config.min_unique, 3);
    let mut selected = select_notes(&notes, &lexicon, min_unique, opts).or_fail(Usage, "selecting")?;
    if let Some(n) = a.sample {
        let domain: BTreeMap<&str, String> = notes.iter().map(|d| (d.doc_id.as_str(), d.domain.to_string())).collect();
        let strata: Vec<_> = selected
            .iter()
            .map(|s| (s.clone(), domain[s.doc_id.as_str()].clone()))
            .collect();
        selected = stratified_sample(&strata, n, pick(a.seed, None, 7)).or_fail(Usage, "sampling")?;
    }
    let mut out = String::from("doc_id\tunique_mentions\ttotal_matches\tphrases\n");
    for s in &selected {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            s.doc_id,
            s.unique_mentions,
            s.total_matches,
            s.phrases.join("; ")
        ));
    }
    emit(a.output.as_deref(), &out)?;
    eprintln!("{} of {} notes selected", selected.len(), notes.len());
    Ok(())
}
