use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use ivr_route::datagen::{self, Dataset, IntentRecord, NoiseProfile};
use ivr_route::eval::{self, EvalReport, ReportFormat};
use ivr_route::menu::{self, MenuTree, TerminalPath};
use ivr_route::provider::mock::{KeywordBackend, OracleBackend, ScriptedBackend, StubGeneratorBackend};
use ivr_route::provider::{check_role_separation, ChatBackend, PipelineStage, Provider, ProviderConfig};
use ivr_route::router::{self, DatasetFilter, ParseMode, Prediction, RouteAllError, RouteOptions, RoutingContext, RunManifest};
use ivr_route::{fixtures, RoutingCondition};

mod config;

use config::{ConditionArg, FileConfig, FilterArg, ProviderFlags, ProviderKind};

const DEFAULT_OUT: &str = "runs";

#[derive(Debug, Parser)]
#[command(name = "ivr-route", version, about = "LLM-based IVR intent routing experiments")]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output root for datasets, runs and reports.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for randomized choices (paraphrase noise).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Treat role-separation warnings as errors.
    #[arg(long, global = true)]
    strict_roles: bool,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FlattenFormat {
    Tsv,
    PromptLines,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse and validate a menu file; exit 1 on violations, 2 on I/O errors.
    ValidateMenu { menu: PathBuf },
    /// List a menu's terminal paths.
    Flatten {
        menu: PathBuf,
        #[arg(long, value_enum, default_value_t = FlattenFormat::Tsv)]
        format: FlattenFormat,
    },
    /// Generate base intents and paraphrases into a JSONL dataset.
    GenIntents {
        /// Menu file; the built-in AgentNet menu when omitted.
        #[arg(long)]
        menu: Option<PathBuf>,
        #[arg(long, default_value_t = datagen::DEFAULT_PER_NODE)]
        per_node: usize,
        #[arg(long, default_value_t = datagen::DEFAULT_VARIANTS)]
        variants: usize,
        /// Destination; `<out>/intents.jsonl` when omitted.
        #[arg(long, short)]
        output: Option<PathBuf>,
        #[command(flatten)]
        provider: ProviderFlags,
    },
    /// Route a dataset under one condition into `<out>/<run id>/`.
    Route {
        #[arg(long)]
        menu: Option<PathBuf>,
        /// Intent JSONL; the built-in AgentNet dataset when omitted.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, value_enum)]
        condition: Option<ConditionArg>,
        #[arg(long, value_enum)]
        filter: Option<FilterArg>,
        /// Accept a reply holding exactly one path among other text.
        #[arg(long)]
        lenient: bool,
        /// Fraction of provider failures tolerated before aborting.
        #[arg(long)]
        error_budget: Option<f64>,
        /// Overwrite an existing run directory.
        #[arg(long)]
        force: bool,
        #[command(flatten)]
        provider: ProviderFlags,
    },
    /// Score a results file and write report files.
    Eval {
        results: PathBuf,
        /// Menu whose terminal paths are the classes, when the run has no manifest.
        #[arg(long)]
        menu: Option<PathBuf>,
        #[arg(long, value_enum)]
        filter: Option<FilterArg>,
        /// Report destination; the results file's directory when omitted.
        #[arg(long)]
        report_dir: Option<PathBuf>,
    },
    /// Route complaints typed on stdin, one per line.
    Demo {
        #[arg(long)]
        menu: Option<PathBuf>,
        #[arg(long, value_enum)]
        condition: Option<ConditionArg>,
        #[arg(long)]
        lenient: bool,
        #[command(flatten)]
        provider: ProviderFlags,
    },
    /// Report stages that share a model.
    CheckRoles,
}

/// Marks failures that exit with status 2.
#[derive(Debug)]
struct IoFailure(String);

impl std::fmt::Display for IoFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for IoFailure {}

fn io_err(path: &Path, e: io::Error) -> anyhow::Error {
    anyhow!(IoFailure(format!("{}: {e}", path.display())))
}

fn read_file(path: &Path) -> anyhow::Result<String> {
    std::fs::read_to_string(path).map_err(|e| io_err(path, e))
}

fn create_file(path: &Path) -> anyhow::Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| io_err(path, e))
}

struct Ctx {
    file: FileConfig,
    out: PathBuf,
    seed: u64,
    strict_roles: bool,
}

impl Ctx {
    fn load_menu(&self, flag: Option<&PathBuf>) -> anyhow::Result<MenuTree> {
        match flag.or(self.file.menu.as_ref()) {
            Some(path) => menu::parse_menu(&read_file(path)?).with_context(|| format!("invalid menu {}", path.display())),
            None => Ok(fixtures::agentnet_menu()),
        }
    }

    fn load_dataset(&self, flag: Option<&PathBuf>, tree: &MenuTree, paths: &[TerminalPath]) -> anyhow::Result<Dataset> {
        match flag.or(self.file.dataset.as_ref()) {
            Some(path) => {
                let file = File::open(path).map_err(|e| io_err(path, e))?;
                let records = datagen::read_jsonl(BufReader::new(file))
                    .with_context(|| format!("invalid dataset {}", path.display()))?;
                Ok(Dataset::from_records(tree.name.clone(), paths.len(), records))
            }
            None => Ok(fixtures::agentnet_dataset()),
        }
    }

    /// Resolves stage configs and enforces role separation.
    fn configs(&self, stage: Option<(PipelineStage, &ProviderFlags)>) -> anyhow::Result<BTreeMap<PipelineStage, ProviderConfig>> {
        let configs = config::stage_configs(&self.file, stage, &config::process_env)?;
        let warnings = check_role_separation(&configs);
        for w in &warnings {
            eprintln!("warning: {w}");
        }
        if self.strict_roles && !warnings.is_empty() {
            bail!("{} role-separation warning(s) with --strict-roles", warnings.len());
        }
        Ok(configs)
    }
}

fn build_provider(
    config: ProviderConfig,
    flags: &ProviderFlags,
    records: &[IntentRecord],
    paths: &[TerminalPath],
) -> anyhow::Result<Provider> {
    let backend: Arc<dyn ChatBackend> = match flags.provider.unwrap_or(ProviderKind::Http) {
        ProviderKind::Http => return Ok(Provider::http(config)?),
        ProviderKind::Oracle => Arc::new(OracleBackend::new(records)),
        ProviderKind::Keyword => Arc::new(KeywordBackend::new(paths)),
        ProviderKind::Stub => Arc::new(StubGeneratorBackend),
        ProviderKind::Scripted => {
            let path = flags.script.as_ref().ok_or_else(|| anyhow!("--provider scripted needs --script"))?;
            let replies: HashMap<String, String> =
                serde_json::from_str(&read_file(path)?).with_context(|| format!("invalid script {}", path.display()))?;
            Arc::new(ScriptedBackend::keyed(replies))
        }
    };
    Ok(Provider::new(config, backend)?)
}

fn parse_mode(lenient: bool, file: Option<ParseMode>) -> ParseMode {
    if lenient {
        ParseMode::Lenient
    } else {
        file.unwrap_or_default()
    }
}

fn cmd_validate_menu(path: &Path) -> anyhow::Result<ExitCode> {
    let text = read_file(path)?;
    match menu::parse_menu(&text) {
        Ok(tree) => {
            println!("{}: ok ({} terminal paths)", path.display(), tree.action_count());
            Ok(ExitCode::SUCCESS)
        }
        Err(menu::MenuError::Invalid(violations)) => {
            for v in &violations {
                println!("{}: {v}", path.display());
            }
            Ok(ExitCode::FAILURE)
        }
        Err(e) => {
            println!("{}: {e}", path.display());
            Ok(ExitCode::FAILURE)
        }
    }
}

fn cmd_flatten(path: &Path, format: FlattenFormat) -> anyhow::Result<ExitCode> {
    let tree = menu::parse_menu(&read_file(path)?).with_context(|| format!("invalid menu {}", path.display()))?;
    let paths = menu::flatten(&tree);
    let text = match format {
        FlattenFormat::Tsv => menu::render_paths_tsv(&paths),
        FlattenFormat::PromptLines => menu::render_flattened(&paths) + "\n",
    };
    io::stdout().write_all(text.as_bytes())?;
    Ok(ExitCode::SUCCESS)
}

async fn cmd_gen_intents(
    ctx: &Ctx,
    menu_flag: Option<&PathBuf>,
    per_node: usize,
    variants: usize,
    output: Option<&PathBuf>,
    flags: &ProviderFlags,
) -> anyhow::Result<ExitCode> {
    let tree = ctx.load_menu(menu_flag)?;
    let paths = menu::flatten(&tree);
    let mut configs = ctx.configs(Some((PipelineStage::IntentGeneration, flags)))?;
    let config = configs.remove(&PipelineStage::IntentGeneration).expect("every stage resolved");
    let provider = build_provider(config, flags, &[], &paths)?;

    let base = datagen::generate_base_intents(&tree.name, &paths, &provider, per_node).await?;
    let augmented = datagen::augment_intents(&base, &paths, &provider, variants, &NoiseProfile::default(), ctx.seed).await?;
    let records = base.into_iter().chain(augmented).collect();
    let ds = Dataset::assemble(tree.name.clone(), &paths, records);
    let violations = datagen::validate_dataset(&ds, &paths);
    if !violations.is_empty() {
        for v in &violations {
            eprintln!("{v}");
        }
        bail!("generated dataset has {} violation(s)", violations.len());
    }

    let dest = output.cloned().unwrap_or_else(|| ctx.out.join("intents.jsonl"));
    let mut writer = create_file(&dest)?;
    datagen::write_jsonl(&ds.records, &mut writer).and_then(|_| writer.flush()).map_err(|e| io_err(&dest, e))?;
    eprintln!("{} records", ds.records.len());
    println!("{}", dest.display());
    Ok(ExitCode::SUCCESS)
}

struct RouteArgs<'a> {
    menu: Option<&'a PathBuf>,
    dataset: Option<&'a PathBuf>,
    condition: Option<ConditionArg>,
    filter: Option<FilterArg>,
    lenient: bool,
    error_budget: Option<f64>,
    force: bool,
    flags: &'a ProviderFlags,
}

async fn cmd_route(ctx: &Ctx, args: RouteArgs<'_>) -> anyhow::Result<ExitCode> {
    let tree = ctx.load_menu(args.menu)?;
    let paths = menu::flatten(&tree);
    let ds = ctx.load_dataset(args.dataset, &tree, &paths)?;
    let condition = args
        .condition
        .map(RoutingCondition::from)
        .or(ctx.file.condition)
        .ok_or_else(|| anyhow!("--condition is required (descriptive or flattened)"))?;
    let options = RouteOptions {
        filter: args.filter.map(DatasetFilter::from).or(ctx.file.filter).unwrap_or_default(),
        mode: parse_mode(args.lenient, ctx.file.parse_mode),
        error_budget: args.error_budget.or(ctx.file.error_budget).unwrap_or(router::DEFAULT_ERROR_BUDGET),
    };
    let mut configs = ctx.configs(Some((PipelineStage::Routing, args.flags)))?;
    let config = configs.remove(&PipelineStage::Routing).expect("every stage resolved");
    let provider = build_provider(config, args.flags, &ds.records, &paths)?;

    let run = match router::route_all(&ds, condition, &tree, &provider, options).await {
        Ok(run) => run,
        Err(RouteAllError::BudgetExceeded { errors, allowed, last, completed }) => {
            let dest = ctx.out.join("partial_results.jsonl");
            let mut writer = create_file(&dest)?;
            router::write_results_jsonl(&completed, &mut writer).and_then(|_| writer.flush()).map_err(|e| io_err(&dest, e))?;
            bail!(
                "{errors} provider failure(s) exceed the budget of {allowed}; last: {last}; {} completed results in {}",
                completed.len(),
                dest.display()
            );
        }
        Err(e) => return Err(e.into()),
    };

    let dir = ctx.out.join(&run.manifest.id);
    let results_path = dir.join("results.jsonl");
    if results_path.exists() && !args.force {
        bail!("{} already exists; pass --force to overwrite", results_path.display());
    }
    let mut writer = create_file(&results_path)?;
    router::write_results_jsonl(&run.results, &mut writer)
        .and_then(|_| writer.flush())
        .map_err(|e| io_err(&results_path, e))?;
    let manifest_path = dir.join("manifest.json");
    std::fs::write(&manifest_path, serde_json::to_string_pretty(&run.manifest)? + "\n")
        .map_err(|e| io_err(&manifest_path, e))?;

    let correct = run.results.iter().filter(|r| r.correct).count();
    eprintln!("{correct}/{} correct", run.results.len());
    println!("{}", dir.display());
    Ok(ExitCode::SUCCESS)
}

async fn cmd_eval(
    ctx: &Ctx,
    results_path: &Path,
    menu_flag: Option<&PathBuf>,
    filter: Option<FilterArg>,
    report_dir: Option<&PathBuf>,
) -> anyhow::Result<ExitCode> {
    let file = File::open(results_path).map_err(|e| io_err(results_path, e))?;
    let results = router::read_results_jsonl(BufReader::new(file))
        .map_err(|(line, e)| anyhow!("{} line {line}: {e}", results_path.display()))?;
    if results.is_empty() {
        bail!("{} has no results", results_path.display());
    }
    let dir = results_path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let manifest_path = dir.join("manifest.json");
    let manifest: Option<RunManifest> = if manifest_path.exists() {
        Some(serde_json::from_str(&read_file(&manifest_path)?).context("invalid manifest.json")?)
    } else {
        None
    };

    let (classes, condition, dataset_filter, model) = match &manifest {
        Some(m) if menu_flag.is_none() => {
            (m.classes.clone(), m.condition, filter.map(Into::into).unwrap_or(m.filter), m.provider.model_name.clone())
        }
        _ => {
            let tree = ctx.load_menu(menu_flag)?;
            let classes = menu::flatten(&tree).into_iter().map(|p| p.path).collect();
            let filter = filter.map(Into::into).or(manifest.as_ref().map(|m| m.filter)).unwrap_or_default();
            (classes, results[0].condition, filter, results[0].model_name.clone())
        }
    };
    let report = EvalReport::build(&results, &classes, condition, dataset_filter, model)?;
    let dest = report_dir.cloned().unwrap_or_else(|| dir.to_path_buf());
    let formats: BTreeSet<_> = ReportFormat::ALL.into_iter().collect();
    eval::emit_report(&report, &formats, &dest).map_err(|e| match e {
        eval::EvalError::Io { path, source } => io_err(&path, source),
        other => other.into(),
    })?;
    print!("{}", eval::summary_table(std::slice::from_ref(&report)));
    Ok(ExitCode::SUCCESS)
}

async fn cmd_demo(
    ctx: &Ctx,
    menu_flag: Option<&PathBuf>,
    condition: Option<ConditionArg>,
    lenient: bool,
    flags: &ProviderFlags,
) -> anyhow::Result<ExitCode> {
    let tree = ctx.load_menu(menu_flag)?;
    let paths = menu::flatten(&tree);
    let condition = condition.map(RoutingCondition::from).or(ctx.file.condition).unwrap_or(RoutingCondition::FlattenedPaths);
    let mut configs = ctx.configs(Some((PipelineStage::Routing, flags)))?;
    let config = configs.remove(&PipelineStage::Routing).expect("every stage resolved");
    let provider = build_provider(config, flags, &[], &paths)?;
    let context = RoutingContext::new(&tree, condition);
    let mode = parse_mode(lenient, ctx.file.parse_mode);
    let breadcrumbs: HashMap<_, _> = paths.iter().map(|p| (p.path.clone(), p.breadcrumb_text())).collect();

    let stdin = io::stdin();
    let mut stdout = io::stdout();
    let mut turn = 0usize;
    loop {
        eprint!("> ");
        let mut line = String::new();
        if stdin.lock().read_line(&mut line)? == 0 {
            eprintln!();
            return Ok(ExitCode::SUCCESS);
        }
        let query = line.trim();
        if query.is_empty() {
            continue;
        }
        turn += 1;
        match router::route_text(query, &format!("demo-{turn}"), &context, &provider, mode).await {
            Ok((parsed, _)) => {
                let text = match &parsed.outcome {
                    Prediction::Path(p) => match breadcrumbs.get(p) {
                        Some(b) => format!("{p}  {b}"),
                        None => format!("{p}  (not a menu path)"),
                    },
                    Prediction::Invalid => format!("INVALID  (reply: {:?})", parsed.raw_text),
                };
                writeln!(stdout, "{text}")?;
                stdout.flush()?;
            }
            Err(e) => eprintln!("error: {e}"),
        }
    }
}

fn cmd_check_roles(ctx: &Ctx) -> anyhow::Result<ExitCode> {
    let configs = config::stage_configs(&ctx.file, None, &config::process_env)?;
    for (stage, c) in &configs {
        println!("{stage}\t{}", c.model_name);
    }
    let warnings = check_role_separation(&configs);
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    Ok(if ctx.strict_roles && !warnings.is_empty() { ExitCode::FAILURE } else { ExitCode::SUCCESS })
}

async fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let file = FileConfig::load(cli.config.as_deref()).map_err(|e| match e.downcast_ref::<io::Error>() {
        Some(_) => anyhow!(IoFailure(format!("{e:#}"))),
        None => e,
    })?;
    let ctx = Ctx {
        out: cli.out.clone().or_else(|| file.out.clone()).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT)),
        seed: cli.seed.or(file.seed).unwrap_or(0),
        strict_roles: cli.strict_roles || file.strict_roles.unwrap_or(false),
        file,
    };
    match &cli.command {
        Command::ValidateMenu { menu } => cmd_validate_menu(menu),
        Command::Flatten { menu, format } => cmd_flatten(menu, *format),
        Command::GenIntents { menu, per_node, variants, output, provider } => {
            cmd_gen_intents(&ctx, menu.as_ref(), *per_node, *variants, output.as_ref(), provider).await
        }
        Command::Route { menu, dataset, condition, filter, lenient, error_budget, force, provider } => {
            let args = RouteArgs {
                menu: menu.as_ref(),
                dataset: dataset.as_ref(),
                condition: *condition,
                filter: *filter,
                lenient: *lenient,
                error_budget: *error_budget,
                force: *force,
                flags: provider,
            };
            cmd_route(&ctx, args).await
        }
        Command::Eval { results, menu, filter, report_dir } => {
            cmd_eval(&ctx, results, menu.as_ref(), *filter, report_dir.as_ref()).await
        }
        Command::Demo { menu, condition, lenient, provider } => {
            cmd_demo(&ctx, menu.as_ref(), *condition, *lenient, provider).await
        }
        Command::CheckRoles => cmd_check_roles(&ctx),
    }
}

#[tokio::main]
async fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(level)),
        )
        .with_writer(io::stderr)
        .init();

    match run(cli).await {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.chain().any(|c| c.is::<IoFailure>()) {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
