use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use g3d_core::caption::{corpus_stats, read_caption_jsonl, write_caption_jsonl, CaptionPrompts, CorpusStats, GroundedCaption};
use g3d_core::config::Config;
use g3d_core::eval::{
    detection_ap, grounding_accuracy, iou_gated_caption_metrics, multi_grounding_f1, read_jsonl, MetricReport,
};
use g3d_core::instruct::{write_sample_jsonl, GroupingMode, TemplateLibrary};
use g3d_core::llm::{CompletionMode, LlmClient, PromptSpec, ReplayStore};
use g3d_core::pipeline::{
    convert_scene_captions, generate_scene_captions, self_evaluate, ConvertOptions, EmbodiedPrompts, GenerateOptions,
};
use g3d_core::scene::{load_scene_dir, Scene};
use g3d_core::selfcheck::run_checks;
use g3d_core::synthetic::{synthetic_corpus, SyntheticParams};
use g3d_core::tokenize::WordPunct;

type Result<T> = std::result::Result<T, String>;

#[derive(Parser)]
#[command(name = "g3d", version, about = "Grounded 3D scene-text data toolkit")]
struct Cli {
    /// JSON config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate grounded scene captions (JSONL).
    Generate(GenerateArgs),
    /// Convert grounded captions into instruction samples (JSONL).
    Convert(ConvertArgs),
    /// Corpus statistics of a grounded-caption file.
    Stats(StatsArgs),
    /// Score predictions against ground truth.
    Eval(EvalArgs),
    /// Run the invariant and oracle suite.
    Check(CheckArgs),
    /// Write synthetic scene files.
    Synth(SynthArgs),
}

#[derive(Args)]
struct LlmArgs {
    /// Serve model responses from the replay store only.
    #[arg(long, conflicts_with = "live")]
    replay: bool,
    /// Use the deterministic composer; with --replay, only on a miss.
    #[arg(long)]
    fallback: bool,
    /// Call the model endpoint and record every exchange.
    #[arg(long)]
    live: bool,
    /// Replay store directory.
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Prompt directory.
    #[arg(long)]
    prompts: Option<PathBuf>,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    seed: u64,
    /// Directory of scene JSON files.
    #[arg(long, conflicts_with = "synthetic")]
    scenes: Option<PathBuf>,
    /// Generate this many synthetic scenes instead of reading files.
    #[arg(long)]
    synthetic: Option<usize>,
    #[arg(long, short)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long)]
    anchors: Option<usize>,
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long)]
    max_objects: Option<usize>,
    #[arg(long)]
    word_cap: Option<usize>,
    /// Leave out the detection, referring, dense and QA records.
    #[arg(long)]
    no_annotations: bool,
    #[command(flatten)]
    llm: LlmArgs,
}

#[derive(Args)]
struct ConvertArgs {
    #[arg(long)]
    captions: PathBuf,
    #[arg(long, short)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    templates: Option<PathBuf>,
    #[arg(long)]
    grounding_rate: Option<f64>,
    /// One <ref> per object instead of one per phrase.
    #[arg(long)]
    one_to_one: bool,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[command(flatten)]
    llm: LlmArgs,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    captions: PathBuf,
    #[arg(long)]
    json: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalKind {
    Grounding,
    Multi,
    Detection,
    Caption,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, required_unless_present = "self_eval", requires_all = ["pred", "gt"])]
    kind: Option<EvalKind>,
    #[arg(long)]
    pred: Option<PathBuf>,
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Score ground truth built from --scenes and --captions against itself.
    #[arg(long = "self", requires_all = ["scenes", "captions"])]
    self_eval: bool,
    #[arg(long)]
    scenes: Option<PathBuf>,
    #[arg(long)]
    captions: Option<PathBuf>,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    count: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long, short)]
    out: PathBuf,
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    match path {
        Some(p) => Config::load(p).map_err(|e| e.to_string()),
        None => Ok(Config::default()),
    }
}

fn client(args: &LlmArgs, config: &Config) -> Result<LlmClient> {
    let mode = if args.live {
        CompletionMode::Live
    } else if args.replay {
        CompletionMode::Replay {
            fallback_on_miss: args.fallback,
        }
    } else {
        CompletionMode::Fallback
    };
    let cache = args.cache.clone().or_else(|| config.paths.cache.clone());
    let store = match (mode, cache) {
        (CompletionMode::Fallback, _) => None,
        (_, Some(dir)) => Some(ReplayStore::open(dir).map_err(|e| e.to_string())?),
        (_, None) => return Err("--replay and --live need --cache or paths.cache".into()),
    };
    Ok(LlmClient::new(mode, store, config.llm.clone()))
}

fn prompt_dir<'a>(args: &'a LlmArgs, config: &'a Config) -> Option<&'a Path> {
    args.prompts.as_deref().or(config.paths.prompts.as_deref())
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| e.to_string())
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| format!("{}: {e}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(std::io::stdout())),
    })
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| format!("{}: {e}", path.display()))
}

fn read_captions(path: &Path) -> Result<Vec<GroundedCaption>> {
    read_caption_jsonl(open(path)?).map_err(|e| format!("{}: {e}", path.display()))
}

fn load_scenes(dir: &Path) -> Result<Vec<Scene>> {
    load_scene_dir(dir).map_err(|e| e.to_string())
}

fn generate(args: GenerateArgs, mut config: Config) -> Result<()> {
    if let Some(r) = args.radius {
        config.pipeline.selection.radius = r;
    }
    if let Some(m) = args.max_objects {
        config.pipeline.selection.max_objects = m;
    }
    if let Some(w) = args.word_cap {
        config.pipeline.word_cap = w;
    }
    if args.anchors.is_some() {
        config.pipeline.anchors_per_scene = args.anchors;
    }
    config.pipeline.seed = Some(args.seed);
    config.validate().map_err(|e| e.to_string())?;

    let mut scenes = match (args.synthetic, args.scenes.as_ref().or(config.paths.scenes.as_ref())) {
        (Some(n), _) => synthetic_corpus(n, args.seed, &SyntheticParams::default()),
        (None, Some(dir)) => load_scenes(dir)?,
        (None, None) => return Err("no scenes: pass --scenes, --synthetic or set paths.scenes".into()),
    };
    scenes.sort_by(|a, b| a.scene_id().cmp(b.scene_id()));
    let client = client(&args.llm, &config)?;
    let prompts = CaptionPrompts::load(prompt_dir(&args.llm, &config)).map_err(|e| e.to_string())?;
    let opts = GenerateOptions {
        seed: args.seed,
        selection: config.pipeline.selection,
        relations: config.pipeline.relations,
        word_cap: config.pipeline.word_cap,
        anchors_per_scene: config.pipeline.anchors_per_scene,
        annotations: !args.no_annotations,
    };
    let results = pool(args.jobs)?.install(|| {
        scenes
            .par_iter()
            .map(|s| generate_scene_captions(s, &client, &prompts, &opts).map_err(|e| format!("{}: {e}", s.scene_id())))
            .collect::<Vec<_>>()
    });
    let mut out = output(args.out.as_deref().or(config.paths.output.as_deref()))?;
    let mut rejected = 0;
    for r in results {
        let r = r?;
        rejected += r.rejected.len();
        for line in &r.rejected {
            eprintln!("rejected: {line}");
        }
        write_caption_jsonl(&mut out, &r.captions).map_err(|e| e.to_string())?;
    }
    out.flush().map_err(|e| e.to_string())?;
    eprintln!("{} scenes, {rejected} candidates rejected", scenes.len());
    Ok(())
}

fn convert(args: ConvertArgs, mut config: Config) -> Result<()> {
    if let Some(r) = args.grounding_rate {
        config.pipeline.grounding_rate = r;
    }
    config.validate().map_err(|e| e.to_string())?;
    let templates = match args.templates.as_ref().or(config.paths.templates.as_ref()) {
        Some(p) => TemplateLibrary::load(p).map_err(|e| e.to_string())?,
        None => TemplateLibrary::builtin(),
    };
    let dir = prompt_dir(&args.llm, &config);
    let prompts = EmbodiedPrompts {
        dialogue: PromptSpec::load(dir, "embodied_dialogue").map_err(|e| e.to_string())?,
        planning: PromptSpec::load(dir, "embodied_planning").map_err(|e| e.to_string())?,
    };
    let client = client(&args.llm, &config)?;
    let opts = ConvertOptions {
        seed: args.seed.or(config.pipeline.seed).unwrap_or(0),
        grounding_rate: config.pipeline.grounding_rate,
        grouping: if args.one_to_one {
            GroupingMode::OneToOne
        } else {
            GroupingMode::OneToMany
        },
    };
    let mut by_scene: BTreeMap<String, Vec<GroundedCaption>> = BTreeMap::new();
    for c in read_captions(&args.captions)? {
        by_scene.entry(c.scene_id.clone()).or_default().push(c);
    }
    let groups: Vec<(String, Vec<GroundedCaption>)> = by_scene.into_iter().collect();
    let results = pool(args.jobs)?.install(|| {
        groups
            .par_iter()
            .map(|(sid, caps)| {
                convert_scene_captions(caps, &templates, &prompts, &client, &opts).map_err(|e| format!("{sid}: {e}"))
            })
            .collect::<Vec<_>>()
    });
    let mut out = output(args.out.as_deref())?;
    let mut total = 0;
    for r in results {
        let samples = r?;
        total += samples.len();
        write_sample_jsonl(&mut out, &samples).map_err(|e| e.to_string())?;
    }
    out.flush().map_err(|e| e.to_string())?;
    eprintln!("{total} samples");
    Ok(())
}

fn stats_table(rows: &[(String, CorpusStats)]) -> String {
    let mut s = format!(
        "{:<16} {:>8} {:>10} {:>10} {:>8} {:>10}\n",
        "source", "texts", "tokens", "tok/text", "corr", "corr/tok"
    );
    for (name, st) in rows {
        s.push_str(&format!(
            "{:<16} {:>8} {:>10} {:>10.1} {:>8} {:>9.1}%\n",
            name,
            st.texts,
            st.tokens,
            st.tokens_per_text,
            st.correspondences,
            st.corr_per_token_percent()
        ));
    }
    s
}

fn stats(args: StatsArgs) -> Result<()> {
    let captions = read_captions(&args.captions)?;
    let mut by_source: BTreeMap<String, Vec<&GroundedCaption>> = BTreeMap::new();
    for c in &captions {
        let source = c.provenance.source.clone().unwrap_or_else(|| "unknown".into());
        by_source.entry(source).or_default().push(c);
    }
    let mut rows: Vec<(String, CorpusStats)> = by_source
        .iter()
        .map(|(k, v)| (k.clone(), corpus_stats(v.iter().copied(), &WordPunct)))
        .collect();
    rows.push(("all".into(), corpus_stats(&captions, &WordPunct)));
    let mut out = output(None)?;
    if args.json {
        let map: BTreeMap<&str, &CorpusStats> = rows.iter().map(|(k, v)| (k.as_str(), v)).collect();
        writeln!(out, "{}", serde_json::to_string_pretty(&map).map_err(|e| e.to_string())?)
    } else {
        write!(out, "{}", stats_table(&rows))
    }
    .and_then(|_| out.flush())
    .map_err(|e| e.to_string())
}

fn read_records<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    read_jsonl(open(path)?).map_err(|e| format!("{}: {e}", path.display()))
}

fn eval(args: EvalArgs, config: Config) -> Result<()> {
    let t = &config.eval.thresholds;
    let report: MetricReport = if args.self_eval {
        let scenes = load_scenes(args.scenes.as_deref().expect("required by clap"))?;
        let captions = read_captions(args.captions.as_deref().expect("required by clap"))?;
        self_evaluate(&scenes, &captions, t, config.eval.score_filter)
    } else {
        let (pred, gt) = (args.pred.as_deref().unwrap(), args.gt.as_deref().unwrap());
        match args.kind.expect("required by clap") {
            EvalKind::Grounding => grounding_accuracy(&read_records(pred)?, &read_records(gt)?, t),
            EvalKind::Multi => multi_grounding_f1(&read_records(pred)?, &read_records(gt)?, config.eval.score_filter, t),
            EvalKind::Detection => detection_ap(&read_records(pred)?, &read_records(gt)?),
            EvalKind::Caption => iou_gated_caption_metrics(&read_records(pred)?, &read_records(gt)?, t),
        }
    }
    .map_err(|e| e.to_string())?;
    let mut out = output(args.out.as_deref())?;
    writeln!(out, "{}", serde_json::to_string_pretty(&report).map_err(|e| e.to_string())?)
        .and_then(|_| out.flush())
        .map_err(|e| e.to_string())
}

fn check(args: CheckArgs) -> Result<()> {
    let outcomes = run_checks(args.seed);
    let mut failed = 0;
    for o in &outcomes {
        println!("{} {} ({} ms): {}", if o.passed { "PASS" } else { "FAIL" }, o.name, o.millis, o.detail);
        failed += usize::from(!o.passed);
    }
    if failed > 0 {
        return Err(format!("{failed} of {} checks failed", outcomes.len()));
    }
    Ok(())
}

fn synth(args: SynthArgs) -> Result<()> {
    std::fs::create_dir_all(&args.out).map_err(|e| format!("{}: {e}", args.out.display()))?;
    for scene in synthetic_corpus(args.count, args.seed, &SyntheticParams::default()) {
        scene
            .save(&args.out.join(format!("{}.json", scene.scene_id())))
            .map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let config = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Generate(a) => generate(a, config),
        Command::Convert(a) => convert(a, config),
        Command::Stats(a) => stats(a),
        Command::Eval(a) => eval(a, config),
        Command::Check(a) => check(a),
        Command::Synth(a) => synth(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
