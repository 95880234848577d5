use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, IsTerminal, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use annobias::corpus::{self, corpus_stats, load_corpus, read_texts_csv, write_canonical_csv, write_texts_csv};
use annobias::llm::{
    disagreement_posts, evaluate_base, personalization_sensitivity, target_list, Annotator, BatchOptions,
    HttpChatClient, PromptTemplate, RateLimiter, ResponseCache, SystemClock, TemplateId,
};
use annobias::report::{
    self, emit_findings, heatmap_spec, heatmap_svg, read_findings_json, scatter_from_comparison, scatter_from_findings,
    scatter_svg, FindingsDocument, Manifest, Space,
};
use annobias::synth::{self, Direction, SynthConfig};
use annobias::{compare_biases, Audit, AttributeSchema, BiasFinding, Corpus, Error, MatrixCache, RunConfig, Source};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

#[derive(Parser, Debug)]
#[command(name = "annobias", version, about = "Annotator bias audits for hate-speech corpora")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Canonical corpus (CSV or JSONL); the raw export for `ingest`.
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    /// Family-wise significance level; overrides the config file.
    #[arg(long, global = true, value_parser = parse_alpha)]
    alpha: Option<f64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// RNG seed for persona features and synthetic corpora; overrides the config file
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for the sweeps.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

fn parse_alpha(s: &str) -> Result<f64, String> {
    let a: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if a > 0.0 && a < 1.0 {
        Ok(a)
    } else {
        Err(format!("alpha must lie in (0, 1), got {a}"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
#[allow(clippy::enum_variant_names)]
enum Rq {
    Rq1a,
    Rq1b,
    All,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum OutFormat {
    Csv,
    Json,
    Both,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Template {
    FullPersona,
    SingleAttribute,
    Simplified,
}

impl From<Template> for TemplateId {
    fn from(t: Template) -> Self {
        match t {
            Template::FullPersona => TemplateId::FullPersona,
            Template::SingleAttribute => TemplateId::SingleAttribute,
            Template::Simplified => TemplateId::Simplified,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Convert a raw MHS export into the canonical corpus and a post text table.
    Ingest,
    /// Run the in-group (rq1a) and/or cross (rq1b) bias sweep.
    Audit {
        #[arg(long, value_enum, default_value = "rq1b")]
        rq: Rq,
        /// Findings file format
        #[arg(long, value_enum, default_value = "both")]
        format: OutFormat,
        /// Treat --corpus as an LLM mirror of this human corpus.
        #[arg(long)]
        mirror_of: Option<PathBuf>,
    },
    /// Label every record of --corpus with a persona-conditioned model.
    LlmAnnotate {
        /// Post text table (post_id,text).
        #[arg(long)]
        texts: PathBuf,
        /// Prompt template; overrides the config file
        #[arg(long, value_enum)]
        template: Option<Template>,
        /// Annotate only the first N records.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Base-model scores against the human majority and personalization sensitivity.
    LlmEval {
        /// Post text table (post_id,text).
        #[arg(long)]
        texts: PathBuf,
        /// LLM mirror written by llm-annotate.
        #[arg(long)]
        llm_corpus: Option<PathBuf>,
        /// Prompt template; overrides the config file
        #[arg(long, value_enum)]
        template: Option<Template>,
    },
    /// Correlate significant human and LLM findings.
    Compare {
        /// Human findings (JSON).
        #[arg(long)]
        human: PathBuf,
        /// LLM findings (JSON).
        #[arg(long)]
        llm: PathBuf,
    },
    /// Heatmap and scatter specifications for a findings file.
    Report {
        /// Findings (JSON).
        #[arg(long)]
        findings: PathBuf,
    },
    /// Generate a synthetic corpus with one injected bias and audit it.
    Synth {
        /// Synth settings (TOML); defaults otherwise.
        #[arg(long)]
        settings: Option<PathBuf>,
        /// Probability that an in-group label on a target post is shifted
        #[arg(long)]
        shift: Option<f64>,
        #[arg(long, value_parser = ["over", "under"])]
        direction: Option<String>,
    },
}

type Res<T> = Result<T, Failure>;

/// An error plus the exit code it maps to.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Endpoint(_) => 3,
            Error::Config { .. } => 1,
            _ => 2,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        message: message.into(),
    }
}

fn data(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

struct Ctx {
    cfg: RunConfig,
    schema: Arc<AttributeSchema>,
    corpus: Option<PathBuf>,
    out: PathBuf,
}

impl Ctx {
    fn corpus_path(&self) -> Res<&Path> {
        self.corpus.as_deref().ok_or_else(|| usage("--corpus is required for this command"))
    }

    fn load(&self, path: &Path) -> Res<Corpus> {
        Ok(load_corpus(path, corpus::Format::from_path(path), self.schema.clone())?)
    }

    fn out_file(&self, name: &str) -> Res<PathBuf> {
        std::fs::create_dir_all(&self.out)
            .map_err(|e| data(format!("cannot create {}: {e}", self.out.display())))?;
        Ok(self.out.join(name))
    }

    fn write(&self, name: &str, bytes: &[u8]) -> Res<PathBuf> {
        let path = self.out_file(name)?;
        std::fs::write(&path, bytes).map_err(|e| data(format!("cannot write {}: {e}", path.display())))?;
        tracing::info!("wrote {}", path.display());
        Ok(path)
    }

    fn write_json<T: serde::Serialize>(&self, name: &str, value: &T) -> Res<PathBuf> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| data(e.to_string()))?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }

    fn template(&self, over: Option<Template>) -> Res<PromptTemplate> {
        let id = over.map(TemplateId::from).unwrap_or(self.cfg.llm.template);
        Ok(match (&self.cfg.llm.template_file, over) {
            (Some(path), None) => PromptTemplate::load(id, path)?,
            _ => PromptTemplate::builtin(id),
        })
    }

    fn batch_options(&self, template: Option<Template>, limit: Option<usize>) -> Res<BatchOptions> {
        let mut opts = BatchOptions::new(self.template(template)?, target_list(&self.schema));
        opts.seed = self.cfg.seed;
        opts.parse_attempts = self.cfg.llm.parse_attempts;
        opts.endpoint_retries = self.cfg.endpoint.max_retries;
        opts.max_concurrency = self.cfg.endpoint.max_concurrency;
        opts.limit = limit;
        Ok(opts)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("ANNOBIAS_LOG")
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .with_ansi(std::io::stderr().is_terminal())
        .without_time()
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> Res<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(a) = cli.alpha {
        cfg.audit.alpha = a;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(usage("--jobs must be at least 1"));
        }
        annobias::set_threads(j)?;
    }
    let schema = cfg.attribute_schema()?;
    let ctx = Ctx {
        cfg,
        schema,
        corpus: cli.corpus,
        out: cli.out,
    };
    match cli.command {
        Command::Ingest => ingest(&ctx),
        Command::Audit { rq, format, mirror_of } => audit(&ctx, rq, format, mirror_of.as_deref()),
        Command::LlmAnnotate { texts, template, limit } => llm_annotate(&ctx, &texts, template, limit),
        Command::LlmEval {
            texts,
            llm_corpus,
            template,
        } => llm_eval(&ctx, &texts, llm_corpus, template),
        Command::Compare { human, llm } => compare(&ctx, &human, &llm),
        Command::Report { findings } => report_cmd(&ctx, &findings),
        Command::Synth {
            settings,
            shift,
            direction,
        } => synth_cmd(&ctx, settings.as_deref(), shift, direction.as_deref()),
    }
}

fn ingest(ctx: &Ctx) -> Res<()> {
    let raw = ctx.corpus_path()?;
    let adapter = corpus::MhsAdapter::new(ctx.cfg.column_mapping()?, ctx.schema.clone())?;
    let file = File::open(raw).map_err(|e| data(format!("cannot open {}: {e}", raw.display())))?;
    let out = adapter.ingest(file, &raw.display().to_string())?;

    let mut buf = Vec::new();
    write_canonical_csv(&out.corpus, &mut buf)?;
    ctx.write("corpus.csv", &buf)?;
    let mut buf = Vec::new();
    write_texts_csv(&out.texts, &mut buf)?;
    ctx.write("posts.csv", &buf)?;
    let stats = corpus_stats(&out.corpus);
    ctx.write_json("corpus_stats.json", &stats)?;
    eprintln!(
        "{} records, {} annotators, {} posts ({} raw rows)",
        stats.records, stats.annotators, stats.posts, out.rows
    );
    Ok(())
}

fn manifest(ctx: &Ctx, corpus: &Corpus) -> Manifest {
    Manifest::new(ctx.cfg.hash(), corpus.content_hash())
}

fn emit(ctx: &Ctx, stem: &str, format: OutFormat, doc: &FindingsDocument) -> Res<()> {
    report::verify_findings(&doc.findings)?;
    let formats: &[(report::Format, &str)] = match format {
        OutFormat::Csv => &[(report::Format::Csv, "csv")],
        OutFormat::Json => &[(report::Format::Json, "json")],
        OutFormat::Both => &[(report::Format::Csv, "csv"), (report::Format::Json, "json")],
    };
    for (f, ext) in formats {
        let path = ctx.out_file(&format!("{stem}.{ext}"))?;
        emit_findings(doc, *f, &path)?;
        tracing::info!("wrote {}", path.display());
    }
    let sig = doc.findings.iter().filter(|f| f.significant).count();
    eprintln!("{stem}: {sig} of {} candidates significant at alpha {}", doc.findings.len(), doc.alpha);
    Ok(())
}

fn audit(ctx: &Ctx, rq: Rq, format: OutFormat, mirror_of: Option<&Path>) -> Res<()> {
    let corpus = ctx.load(ctx.corpus_path()?)?;
    let cache = match &ctx.cfg.cache_dir {
        Some(d) => MatrixCache::with_dir(d)?,
        None => MatrixCache::new(),
    };
    let mut audit = Audit::with_cache(&corpus, ctx.cfg.audit.clone(), cache);
    let prefix = match mirror_of {
        Some(h) => {
            let human = ctx.load(h)?;
            annobias::pipelines::check_mirror(&corpus, &human)?;
            audit = audit.tagged(Source::Llm);
            "llm_"
        }
        None => "",
    };
    let doc = |findings: Vec<BiasFinding>| FindingsDocument {
        manifest: manifest(ctx, &corpus),
        alpha: ctx.cfg.audit.alpha,
        findings,
    };
    if matches!(rq, Rq::Rq1a | Rq::All) {
        emit(ctx, &format!("{prefix}rq1a_findings"), format, &doc(audit.in_group()?))?;
    }
    if matches!(rq, Rq::Rq1b | Rq::All) {
        emit(ctx, &format!("{prefix}rq1b_findings"), format, &doc(audit.cross()?))?;
    }
    Ok(())
}

fn http_client(ctx: &Ctx) -> Res<HttpChatClient> {
    Ok(HttpChatClient::new(ctx.cfg.endpoint.clone())?)
}

fn limiter(ctx: &Ctx) -> RateLimiter {
    RateLimiter::per_minute(ctx.cfg.endpoint.requests_per_minute, Arc::new(SystemClock::default()))
}

fn llm_annotate(ctx: &Ctx, texts: &Path, template: Option<Template>, limit: Option<usize>) -> Res<()> {
    let human = ctx.load(ctx.corpus_path()?)?;
    let texts = read_texts_csv(texts)?;
    let client = http_client(ctx)?;
    let limiter = limiter(ctx);
    let cache = ResponseCache::open(&ctx.cfg.llm.cache_dir)?;
    let annotator = Annotator::new(&client, ctx.batch_options(template, limit)?)
        .with_limiter(&limiter)
        .with_cache(&cache);
    let batch = annotator.annotate_corpus(&human, &texts)?;

    let mut buf = Vec::new();
    write_canonical_csv(&batch.corpus, &mut buf)?;
    ctx.write("llm_corpus.csv", &buf)?;

    let path = ctx.out_file("llm_annotations.jsonl")?;
    let file = File::create(&path).map_err(|e| data(format!("cannot write {}: {e}", path.display())))?;
    let mut w = BufWriter::new(file);
    for (record_id, ann) in &batch.annotations {
        let line = json!({ "record_id": record_id, "annotation": ann });
        writeln!(w, "{line}").map_err(|e| data(e.to_string()))?;
    }
    w.flush().map_err(|e| data(e.to_string()))?;

    let mut invalid = batch.invalid.join("\n");
    if !invalid.is_empty() {
        invalid.push('\n');
    }
    ctx.write("llm_invalid.txt", invalid.as_bytes())?;
    ctx.write_json(
        "llm_run.json",
        &json!({
            "endpoint": ctx.cfg.endpoint.endpoint_id(),
            "template": annotator.options.template.id.as_str(),
            "records": batch.annotations.len(),
            "invalid": batch.invalid.len(),
            "invalid_rate": batch.invalid_rate(),
            "network_calls": batch.network_calls,
            "cache_hits": batch.cache_hits,
        }),
    )?;
    eprintln!(
        "{} annotations, {} invalid, {} network calls, {} cache hits",
        batch.annotations.len(),
        batch.invalid.len(),
        batch.network_calls,
        batch.cache_hits
    );
    Ok(())
}

fn llm_eval(ctx: &Ctx, texts: &Path, llm_corpus: Option<PathBuf>, template: Option<Template>) -> Res<()> {
    let human = ctx.load(ctx.corpus_path()?)?;
    let texts = read_texts_csv(texts)?;
    let client = http_client(ctx)?;
    let limiter = limiter(ctx);
    let cache = ResponseCache::open(&ctx.cfg.llm.cache_dir)?;
    let annotator = Annotator::new(&client, ctx.batch_options(template, None)?)
        .with_limiter(&limiter)
        .with_cache(&cache);
    let (scores, base) = evaluate_base(&annotator, &human, &texts)?;
    let base_labels = annobias::llm::valid_labels(&base);

    let llm_path = llm_corpus.unwrap_or_else(|| ctx.out.join("llm_corpus.csv"));
    let sensitivity = if llm_path.exists() {
        let llm = ctx.load(&llm_path)?;
        let posts = disagreement_posts(&human);
        let persona = llm.records().iter().map(|r| (r.post_id.as_str(), r.label));
        match personalization_sensitivity(&base_labels, persona, &posts) {
            Ok(k) => Some(k),
            Err(Error::Undefined(m)) => {
                tracing::warn!("personalization sensitivity undefined: {m}");
                None
            }
            Err(e) => return Err(e.into()),
        }
    } else {
        tracing::warn!("{} not found; skipping personalization sensitivity", llm_path.display());
        None
    };
    let invalid = base.values().filter(|a| !a.is_valid()).count();
    let base_rows: BTreeMap<&String, Option<&str>> =
        base.iter().map(|(p, a)| (p, a.label.map(|l| l.as_str()))).collect();
    ctx.write_json(
        "llm_eval.json",
        &json!({
            "endpoint": ctx.cfg.endpoint.endpoint_id(),
            "template": annotator.options.template.id.as_str(),
            "scores": scores,
            "base_invalid": invalid,
            "personalization_sensitivity": sensitivity,
            "base_labels": base_rows,
        }),
    )?;
    eprintln!(
        "macro F1 {:.2}, weighted F1 {:.2}, accuracy {:.2} over {} posts",
        scores.macro_f1, scores.weighted_f1, scores.accuracy, scores.n
    );
    Ok(())
}

fn read_doc(path: &Path, what: &str) -> Res<FindingsDocument> {
    if !path.exists() {
        return Err(data(format!("{what} findings file {} does not exist", path.display())));
    }
    Ok(read_findings_json(path)?)
}

fn write_scatter(ctx: &Ctx, spec: &report::ScatterSpec, stem: &str) -> Res<()> {
    ctx.write_json(&format!("{stem}.json"), spec)?;
    ctx.write(&format!("{stem}.svg"), scatter_svg(spec).as_bytes())?;
    Ok(())
}

fn compare(ctx: &Ctx, human: &Path, llm: &Path) -> Res<()> {
    let h = read_doc(human, "human")?;
    let l = read_doc(llm, "LLM")?;
    let cmp = compare_biases(&h.findings, &l.findings)?;
    ctx.write_json("comparison.json", &cmp)?;
    for (space, stem) in [
        (Space::HumanLlmIntensity, "scatter_human_llm_intensity"),
        (Space::HumanLlmPrevalence, "scatter_human_llm_prevalence"),
        (Space::HumanLlmKappa, "scatter_human_llm_kappa"),
    ] {
        write_scatter(ctx, &scatter_from_comparison(&cmp, space)?, stem)?;
    }
    let fmt = |r: Option<f64>| r.map_or("undefined".to_string(), |v| format!("{v:.3}"));
    eprintln!(
        "{} matched findings; r(I) = {}, r(P) = {}, r(kappa) = {}",
        cmp.records.len(),
        fmt(cmp.r_intensity),
        fmt(cmp.r_prevalence),
        fmt(cmp.r_kappa)
    );
    Ok(())
}

fn report_cmd(ctx: &Ctx, findings: &Path) -> Res<()> {
    let doc = read_doc(findings, "")?;
    report::verify_findings(&doc.findings)?;
    let heat = heatmap_spec(&doc.findings);
    ctx.write_json("heatmap.json", &heat)?;
    ctx.write("heatmap.svg", heatmap_svg(&heat).as_bytes())?;
    write_scatter(ctx, &scatter_from_findings(&doc.findings, Space::IntensityKappa)?, "scatter_intensity_kappa")?;
    write_scatter(
        ctx,
        &scatter_from_findings(&doc.findings, Space::IntensityPrevalence)?,
        "scatter_intensity_prevalence",
    )?;
    Ok(())
}

fn synth_cmd(ctx: &Ctx, settings: Option<&Path>, shift: Option<f64>, direction: Option<&str>) -> Res<()> {
    let mut cfg = match settings {
        Some(p) => {
            let s = std::fs::read_to_string(p).map_err(|e| data(format!("cannot read {}: {e}", p.display())))?;
            SynthConfig::from_toml_str(&s, &p.display().to_string())?
        }
        None => SynthConfig::default(),
    };
    // The run seed wins over any seed in the settings file.
    cfg.seed = ctx.cfg.seed;
    if let Some(s) = shift {
        cfg.injected.shift_probability = s;
    }
    match direction {
        Some("over") => cfg.injected.direction = Direction::Over,
        Some("under") => cfg.injected.direction = Direction::Under,
        _ => {}
    }
    let corpus = synth::generate(&cfg)?;
    let mut buf = Vec::new();
    write_canonical_csv(&corpus, &mut buf)?;
    ctx.write("synth_corpus.csv", &buf)?;
    ctx.write("synth_vocabulary.toml", corpus.schema().vocabulary_toml().as_bytes())?;
    let findings = Audit::new(&corpus, ctx.cfg.audit.clone()).cross()?;
    let doc = FindingsDocument {
        manifest: manifest(ctx, &corpus),
        alpha: ctx.cfg.audit.alpha,
        findings,
    };
    emit(ctx, "synth_findings", OutFormat::Both, &doc)
}
