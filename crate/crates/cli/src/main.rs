use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use sagi_core::chat::{ChatEndpoint, HttpChatEndpoint};
use sagi_core::eval::{
    compression_sweep, detector_observations, eval_items, evaluate_images, fidelity_rows, load_detector_outputs,
    run_benchmark, split_by_score, write_fidelity_csv, write_report, Codec, DetectorSource, EvalOptions, GroupAxis,
    GroupingSpec, Observation, SplitRule, SweepConfig, DEFAULT_QUALITIES,
};
use sagi_core::gateway::{
    mock_worker_router, run_pipeline, transport_for, MockWorker, PipelineConfig, PipelineWorkers, ProvenanceLog,
    WorkerDescriptor, WorkerHandle, WorkerRole,
};
use sagi_core::human_bench::{human_observations, study_router, Study, StudyConfig, STUDY_FILE};
use sagi_core::manifest::{assign_splits, load_manifest, save_manifest, validate, DatasetManifest, SplitPolicy};
use sagi_core::saor::{select_batch, LlmConfig, MockLlm, PromptStage, SemanticContext};
use sagi_core::synthetic::{generate_dataset, write_synthetic_detector, SyntheticSpec};
use sagi_core::ugda::{assess_manifest, MockVlm, UgdaState, VlmConfig};

#[derive(Parser)]
#[command(name = "sagi", version, about = "Semantically aligned inpainting dataset toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw train/val/test splits from a pool manifest.
    Assemble {
        #[arg(long)]
        pool: PathBuf,
        #[arg(long)]
        policy: PathBuf,
        /// Overrides the policy's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a manifest's references and split closure.
    Validate { manifest: PathBuf },
    /// Ask the chat model for an object and an inpainting prompt per image.
    Saor {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum)]
        stage: Stage,
        /// Chat endpoint URL, or `mock` for the built-in scripted model.
        #[arg(long, default_value = "mock")]
        endpoint: String,
        #[arg(long, default_value_t = 2)]
        retries: usize,
        #[arg(long, default_value_t = 4)]
        concurrency: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Quality prefilter plus two-stage realism assessment of test inpaintings.
    Ugda {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "mock")]
        endpoint: String,
        #[arg(long, default_value_t = 0.5)]
        prefilter_fraction: f64,
        /// JSON object or `id,score` CSV of quality scores.
        #[arg(long)]
        scores: PathBuf,
        #[arg(long, default_value_t = 4)]
        concurrency: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run single and double inpainting rounds through the worker pool.
    Inpaint {
        #[arg(long)]
        manifest: PathBuf,
        /// JSON list of worker descriptors; `mock://` endpoints run in process.
        #[arg(long)]
        workers: PathBuf,
        #[arg(long, default_value_t = 1.0 / 6.0)]
        fraction_double: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "mock")]
        llm_endpoint: String,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 4)]
        concurrency: usize,
        #[arg(long, default_value_t = 300)]
        timeout_secs: u64,
    },
    /// Forensic detector evaluation.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Write a synthetic dataset of authentic images with object masks.
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 600)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write stand-in detector outputs (noisy ground truth) for a manifest's test split.
    SynthDetector {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 0.3)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Serve the deterministic mock worker over HTTP.
    MockWorker {
        #[arg(long, default_value_t = 8900)]
        port: u16,
    },
    /// Create a study directory with a pool drawn from a manifest.
    BenchInit {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        study: PathBuf,
        #[arg(long, default_value = "study")]
        name: String,
        #[arg(long, default_value_t = 50)]
        n_inpainted: usize,
        #[arg(long, default_value_t = 50)]
        n_authentic: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Serve the human study API.
    BenchServe {
        #[arg(long)]
        study: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
    /// Aggregate a study directory into JSON and CSV reports.
    BenchReport {
        #[arg(long)]
        study: PathBuf,
        /// Output prefix; defaults to `<study>/report`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Stage {
    First,
    Second,
    Removal,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitBy {
    Qalign,
    Ugda,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Comma-separated axes: split, preservation, pipeline, rounds, ugda.
    #[arg(long, default_value = "split")]
    group_by: String,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    /// Average IoU over authentic images too.
    #[arg(long)]
    iou_includes_authentic: bool,
    #[arg(long)]
    detector_id: Option<String>,
}

impl EvalArgs {
    fn grouping(&self) -> Result<GroupingSpec> {
        let axes = self
            .group_by
            .split(',')
            .map(|s| s.parse::<GroupAxis>().map_err(anyhow::Error::msg))
            .collect::<Result<Vec<_>>>()?;
        Ok(GroupingSpec::new(axes)?)
    }

    fn options(&self) -> EvalOptions {
        EvalOptions { threshold: self.threshold, iou_includes_authentic: self.iou_includes_authentic, ..Default::default() }
    }
}

#[derive(Subcommand)]
enum EvalCommand {
    /// Grouped localization and detection metrics.
    Run {
        #[command(flatten)]
        common: EvalArgs,
        /// Directory of `<id>.png` (+ `<id>.score`) or a JSONL file.
        #[arg(long, alias = "detector-dir")]
        detector: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Metrics after JPEG/WebP recompression.
    Sweep {
        #[command(flatten)]
        common: EvalArgs,
        #[arg(long, value_delimiter = ',', default_value = "jpeg,webp")]
        codecs: Vec<String>,
        #[arg(long, value_delimiter = ',')]
        qualities: Option<Vec<f64>>,
        #[arg(long)]
        cache_dir: PathBuf,
        /// Shell command with `{input}` and `{output}` placeholders.
        #[arg(long, conflicts_with = "detector_root")]
        detector_cmd: Option<String>,
        /// Precomputed outputs: `<root>/baseline`, `<root>/jpeg_q85`, ...
        #[arg(long)]
        detector_root: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        concurrency: usize,
        #[arg(long)]
        report: PathBuf,
    },
    /// Compare accuracy and IoU between score halves or UGDA classes.
    Split {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum)]
        by: SplitBy,
        /// Quality scores for `--by qalign`.
        #[arg(long)]
        scores: Option<PathBuf>,
        /// Detector outputs to judge ...
        #[arg(long, conflicts_with = "study")]
        detector: Option<PathBuf>,
        /// ... or a human study directory.
        #[arg(long)]
        study: Option<PathBuf>,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// PSNR/MSE/MAE/SSIM of inpaintings against their sources.
    Fidelity {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        fr_only: bool,
        /// Optional perceptual scoring worker URL.
        #[arg(long)]
        perceptual: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn chat_endpoint(spec: &str, mock: impl ChatEndpoint + 'static) -> Result<Box<dyn ChatEndpoint>> {
    if spec == "mock" {
        Ok(Box::new(mock))
    } else {
        Ok(Box::new(HttpChatEndpoint::new(spec)?))
    }
}

fn read_scores(path: &Path) -> Result<HashMap<String, f64>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if text.trim_start().starts_with('{') {
        return serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()));
    }
    let mut out = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.starts_with("id,")) {
            continue;
        }
        let (id, score) = line.split_once(',').with_context(|| format!("{}:{}: expected id,score", path.display(), i + 1))?;
        let score: f64 = score.trim().parse().with_context(|| format!("{}:{}", path.display(), i + 1))?;
        out.insert(id.trim().to_string(), score);
    }
    Ok(out)
}

fn load(path: &Path) -> Result<DatasetManifest> {
    load_manifest(path).with_context(|| format!("loading {}", path.display()))
}

fn write_jsonl<T: serde::Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut text = String::new();
    for r in rows {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn saor(manifest: &Path, stage: Stage, endpoint: &str, retries: usize, concurrency: usize, out: &Path) -> Result<()> {
    let m = load(manifest)?;
    let llm = chat_endpoint(endpoint, MockLlm)?;
    let mut cfg = LlmConfig::default();
    if endpoint != "mock" {
        cfg.endpoint = Some(endpoint.to_string());
    }
    let (stage, ids, contexts): (PromptStage, Vec<String>, Vec<SemanticContext>) = match stage {
        Stage::First | Stage::Removal => {
            let images: Vec<_> = m.images.iter().filter(|i| i.authentic && !m.masks_for_image(&i.id).is_empty()).collect();
            let stage = if matches!(stage, Stage::First) { PromptStage::FirstInpaint } else { PromptStage::Removal };
            (stage, images.iter().map(|i| i.id.clone()).collect(), images.iter().map(|i| SemanticContext::from_manifest(&m, i)).collect())
        }
        Stage::Second => {
            let mut ids = Vec::new();
            let mut contexts = Vec::new();
            for rec in m.inpaints.iter().filter(|r| r.round == 1) {
                let root = m.root_image(rec).context("dangling inpaint record")?;
                let mut ctx = SemanticContext::from_manifest(&m, root);
                let prior = m.mask(&rec.mask_id).map(|mk| mk.object_label.clone()).unwrap_or_default();
                ctx.inventory.retain(|it| !it.object_label.eq_ignore_ascii_case(&prior));
                ctx.prior_edit = Some(sagi_core::saor::PriorEdit {
                    object_label: prior,
                    prompt: rec.prompt.as_ref().map(|p| p.prompt_text.clone()).unwrap_or_default(),
                });
                ids.push(rec.id.clone());
                contexts.push(ctx);
            }
            (PromptStage::SecondInpaint, ids, contexts)
        }
    };
    let results = select_batch(&contexts, stage, llm.as_ref(), &cfg, retries, concurrency);
    let rows: Vec<serde_json::Value> = ids
        .iter()
        .zip(results)
        .map(|(id, r)| match r {
            Ok(spec) => serde_json::json!({ "id": id, "prompt": spec }),
            Err(e) => serde_json::json!({ "id": id, "error": e.to_string() }),
        })
        .collect();
    let failed = rows.iter().filter(|r| r.get("error").is_some()).count();
    write_jsonl(out, &rows)?;
    log::info!("{} prompts, {failed} failures -> {}", rows.len() - failed, out.display());
    Ok(())
}

fn inpaint(
    manifest: &Path,
    workers: &Path,
    fraction_double: f64,
    seed: u64,
    llm_endpoint: &str,
    out_dir: &Path,
    concurrency: usize,
    timeout: Duration,
) -> Result<()> {
    let m = load(manifest)?;
    let text = std::fs::read_to_string(workers).with_context(|| format!("reading {}", workers.display()))?;
    let descriptors: Vec<WorkerDescriptor> = serde_json::from_str(&text).context("parsing worker config")?;
    let pool = PipelineWorkers::from_descriptors(&descriptors, timeout)?;
    let llm = chat_endpoint(llm_endpoint, MockLlm)?;
    let mut cfg = PipelineConfig::new(out_dir, seed);
    cfg.fraction_double = fraction_double;
    cfg.concurrency = concurrency;
    std::fs::create_dir_all(out_dir)?;
    let log = ProvenanceLog::to_file(out_dir.join("provenance.jsonl"));
    let m = if pool.segment.is_some() || pool.caption.is_some() {
        sagi_core::gateway::ingest_semantics(&m, &pool, &cfg, Some(&log))?
    } else {
        m
    };
    let res = run_pipeline(&m, &pool, llm.as_ref(), &cfg, Some(&log))?;
    save_manifest(&res.manifest, out_dir.join("manifest.jsonl"))?;
    std::fs::write(out_dir.join("job_plan.json"), serde_json::to_string_pretty(&res.plan)? + "\n")?;
    if !res.failures.is_empty() {
        write_jsonl(&out_dir.join("failures.jsonl"), &res.failures)?;
    }
    println!(
        "{} inpaintings ({} second-round), {} failures -> {}",
        res.manifest.inpaints.len(),
        res.plan.jobs.len(),
        res.failures.len(),
        out_dir.display()
    );
    Ok(())
}

fn eval_cmd(cmd: EvalCommand) -> Result<()> {
    match cmd {
        EvalCommand::Run { common, detector, report } => {
            let m = load(&common.manifest)?;
            let outputs = load_detector_outputs(&detector)?;
            let id = common.detector_id.clone().unwrap_or_else(|| detector.display().to_string());
            let r = run_benchmark(&m, &outputs, &id, &common.grouping()?, &common.options())?;
            write_report(&r, &report)?;
            print!("{}", r.to_csv());
        }
        EvalCommand::Sweep { common, codecs, qualities, cache_dir, detector_cmd, detector_root, concurrency, report } => {
            let m = load(&common.manifest)?;
            let codecs = codecs.iter().map(|c| c.parse::<Codec>().map_err(anyhow::Error::msg)).collect::<Result<Vec<_>>>()?;
            let source = match (detector_cmd, detector_root) {
                (Some(cmd), None) => DetectorSource::Command(cmd),
                (None, Some(root)) => DetectorSource::Precomputed(root),
                _ => bail!("give exactly one of --detector-cmd or --detector-root"),
            };
            let cfg = SweepConfig {
                codecs,
                qualities: qualities.unwrap_or_else(|| DEFAULT_QUALITIES.to_vec()),
                cache_dir,
                grouping: common.grouping()?,
                options: common.options(),
                detector_id: common.detector_id.clone().unwrap_or_else(|| "detector".into()),
                concurrency,
            };
            let r = compression_sweep(&m, &source, &cfg)?;
            r.write(&report)?;
            print!("{}", r.to_csv());
        }
        EvalCommand::Split { manifest, by, scores, detector, study, threshold, out } => {
            let m = load(&manifest)?;
            let (records, observations): (Vec<String>, Vec<Observation>) = match (detector, study) {
                (Some(dir), None) => {
                    let items: Vec<_> = eval_items(&m).into_iter().filter(|i| i.label.is_inpainted()).collect();
                    let outputs = load_detector_outputs(&dir)?;
                    let opts = EvalOptions { threshold, ..Default::default() };
                    let evals = evaluate_images(&items, &outputs, &opts)?;
                    (items.into_iter().map(|i| i.id).collect(), detector_observations(&evals))
                }
                (None, Some(dir)) => {
                    let study = Study::open(&dir)?;
                    let obs = human_observations(&study.annotations(), study.ground_truth())?;
                    let records = study
                        .config()
                        .images
                        .iter()
                        .filter(|i| i.label.is_inpainted())
                        .map(|i| i.id.clone())
                        .collect();
                    (records, obs)
                }
                _ => bail!("give exactly one of --detector or --study"),
            };
            let rule = match by {
                SplitBy::Qalign => {
                    let path = scores.context("--by qalign needs --scores")?;
                    SplitRule::Score(read_scores(&path)?)
                }
                SplitBy::Ugda => SplitRule::Ugda(
                    m.inpaints
                        .iter()
                        .map(|r| (r.id.clone(), r.ugda.as_ref().map_or(UgdaState::NotAssessed, |u| u.state)))
                        .collect(),
                ),
            };
            let split = split_by_score(&records, &rule, &observations)?;
            std::fs::write(&out, split.to_csv()).with_context(|| format!("writing {}", out.display()))?;
            print!("{}", split.to_csv());
        }
        EvalCommand::Fidelity { manifest, fr_only, perceptual, out } => {
            let m = load(&manifest)?;
            let worker = perceptual
                .map(|url| -> Result<WorkerHandle> {
                    let descriptor = WorkerDescriptor {
                        role: WorkerRole::Perceptual,
                        endpoint: url.clone(),
                        pipeline: None,
                        model: String::new(),
                        supports_preservation: vec![],
                        params: serde_json::Map::from_iter([("kind".to_string(), "perceptual".into())]),
                    };
                    Ok(WorkerHandle::new(descriptor, transport_for(&url, Duration::from_secs(120))?))
                })
                .transpose()?;
            let rows = fidelity_rows(&m, fr_only, worker.as_ref())?;
            write_fidelity_csv(&rows, &out)?;
            println!("{} rows -> {}", rows.len(), out.display());
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Assemble { pool, policy, seed, out } => {
            let m = load(&pool)?;
            let text = std::fs::read_to_string(&policy).with_context(|| format!("reading {}", policy.display()))?;
            let mut policy: SplitPolicy = serde_json::from_str(&text).context("parsing split policy")?;
            if let Some(s) = seed {
                policy.seed = s;
            }
            let assignment = assign_splits(&m.images, &policy)?;
            let assembled = assignment.apply(&m)?;
            save_manifest(&assembled, &out)?;
            for (split, n) in assignment.counts() {
                println!("{}\t{n}", split.as_str());
            }
        }
        Command::Validate { manifest } => {
            let m = load(&manifest)?;
            let report = validate(&m);
            for v in &report.violations {
                println!("{v:?}");
            }
            if !report.is_clean() {
                bail!("{} violations", report.violations.len());
            }
            println!("ok: {} images, {} masks, {} inpaintings", m.images.len(), m.masks.len(), m.inpaints.len());
        }
        Command::Saor { manifest, stage, endpoint, retries, concurrency, out } => {
            saor(&manifest, stage, &endpoint, retries, concurrency, &out)?;
        }
        Command::Ugda { manifest, endpoint, prefilter_fraction, scores, concurrency, out } => {
            let m = load(&manifest)?;
            let vlm = chat_endpoint(&endpoint, MockVlm)?;
            let mut cfg = VlmConfig::default();
            if endpoint != "mock" {
                cfg.endpoint = Some(endpoint.clone());
            }
            let res = assess_manifest(&m, &read_scores(&scores)?, prefilter_fraction, vlm.as_ref(), &cfg, concurrency)?;
            save_manifest(&res.manifest, &out)?;
            for (id, e) in &res.failures {
                log::warn!("{id}: {e}");
            }
            let mut counts: std::collections::BTreeMap<&str, usize> = Default::default();
            for r in res.manifest.inpaints.iter().filter_map(|r| r.ugda.as_ref()) {
                *counts.entry(r.state.as_str()).or_default() += 1;
            }
            for (state, n) in counts {
                println!("{state}\t{n}");
            }
        }
        Command::Inpaint { manifest, workers, fraction_double, seed, llm_endpoint, out_dir, concurrency, timeout_secs } => {
            inpaint(&manifest, &workers, fraction_double, seed, &llm_endpoint, &out_dir, concurrency, Duration::from_secs(timeout_secs))?;
        }
        Command::Eval(cmd) => eval_cmd(cmd)?,
        Command::Synth { out_dir, n, seed } => {
            let m = generate_dataset(&out_dir, &SyntheticSpec { n_images: n, seed, ..Default::default() })?;
            save_manifest(&m, out_dir.join("manifest.jsonl"))?;
            println!("{} images, {} masks -> {}", m.images.len(), m.masks.len(), out_dir.display());
        }
        Command::SynthDetector { manifest, out_dir, noise, seed } => {
            let n = write_synthetic_detector(&load(&manifest)?, &out_dir, noise, seed)?;
            println!("{n} detector outputs -> {}", out_dir.display());
        }
        Command::MockWorker { port } => {
            let server = sagi_core::serve::spawn(mock_worker_router(MockWorker::default()), SocketAddr::from(([127, 0, 0, 1], port)))?;
            println!("mock worker on {}", server.url());
            server.join();
        }
        Command::BenchInit { manifest, study, name, n_inpainted, n_authentic, seed } => {
            let m = load(&manifest)?;
            let cfg = StudyConfig::from_manifest(&m, &name, n_inpainted, n_authentic, seed)?;
            cfg.save(study.join(STUDY_FILE))?;
            println!("{} images -> {}", cfg.images.len(), study.join(STUDY_FILE).display());
        }
        Command::BenchServe { study, port, host } => {
            let study = Arc::new(Study::open(&study)?);
            let addr: SocketAddr = format!("{host}:{port}").parse().context("bad --host/--port")?;
            let server = sagi_core::serve::spawn(study_router(study), addr)?;
            println!("study on {}", server.url());
            server.join();
        }
        Command::BenchReport { study, out } => {
            let s = Study::open(&study)?;
            let report = s.report()?;
            let prefix = out.unwrap_or_else(|| {
                let dir = if study.is_dir() { study.clone() } else { study.parent().map(Path::to_path_buf).unwrap_or_default() };
                dir.join("report")
            });
            let with_ext = |ext: &str| {
                let mut p = prefix.clone().into_os_string();
                p.push(ext);
                PathBuf::from(p)
            };
            std::fs::write(with_ext(".json"), serde_json::to_string_pretty(&report)? + "\n")?;
            std::fs::write(with_ext("_results.csv"), report.results_csv())?;
            std::fs::write(with_ext("_demographics.csv"), report.demographics_csv())?;
            print!("{}", report.results_csv());
            print!("{}", report.demographics_csv());
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    run(Cli::parse())
}
