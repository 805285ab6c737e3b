use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use spatiospectral::audio::{MultichannelAudio, SampleFormat};
use spatiospectral::baseline::spatial_only;
use spatiospectral::config::{EmbedderChoice, PipelineConfig, Preset, Refinement};
use spatiospectral::diarization::Diarization;
use spatiospectral::embedding::{Embedder, ExternalEmbeddings, OracleEmbedder, SpectralEmbedder};
use spatiospectral::pipeline::{diarize_with, write_stage_dumps, PipelineOutput, RunOptions};
use spatiospectral::scoring::{compute_der, DerReport};
use spatiospectral::simulator::{make_semistatic, parse_speaker_map, synthesize, SceneSpec};
use spatiospectral::Error;

/// Multichannel speaker diarization from spatial cues and speaker embeddings.
#[derive(Parser)]
#[command(name = "ssdiar", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a scene description into a WAV, a reference RTTM and a TDOA table.
    Simulate(SimulateArgs),
    /// Diarize a recording of at least four channels.
    Diarize(DiarizeArgs),
    /// Score a hypothesis RTTM against a reference RTTM.
    Score(ScoreArgs),
    /// Simulate a scene, diarize it and score the result and the spatial-only baseline.
    Experiment(ExperimentArgs),
    /// Print the configuration a preset expands to, or compare two configurations.
    Config(ConfigArgs),
}

#[derive(Args)]
struct SimulateArgs {
    scene: PathBuf,
    out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Append a second scene recorded with the same array.
    #[arg(long)]
    then: Option<PathBuf>,
    /// Sources of the second scene continuing first-scene speakers, e.g. "A0=B1,A2=B0".
    #[arg(long, default_value = "", requires = "then")]
    speaker_map: String,
    /// Also write one multichannel WAV per source.
    #[arg(long)]
    stems: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Compact,
    Distributed,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Compact => Preset::Compact,
            PresetArg::Distributed => Preset::Distributed,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum EmbedderArg {
    Default,
    Oracle,
    External,
}

#[derive(Clone, Copy, ValueEnum)]
enum RefinementArg {
    Reassign,
    Cacgmm,
}

#[derive(Args)]
struct PipelineArgs {
    /// JSON configuration document.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from a preset instead of the document's own.
    #[arg(long, value_enum, conflicts_with = "config")]
    preset: Option<PresetArg>,
    #[arg(long, value_enum)]
    refinement: Option<RefinementArg>,
    #[arg(long, value_enum)]
    embedder: Option<EmbedderArg>,
    /// Reference RTTM for the oracle embedder.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Embedding sidecar for the external embedder.
    #[arg(long)]
    embeddings: Option<PathBuf>,
}

#[derive(Args)]
struct DiarizeArgs {
    /// One multichannel WAV, or several WAVs whose channels are stacked in order.
    #[arg(required = true)]
    wavs: Vec<PathBuf>,
    #[arg(short, long)]
    out: PathBuf,
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Write intermediate artifacts into this directory.
    #[arg(long)]
    dump_stages: Option<PathBuf>,
}

#[derive(Args)]
struct ScoreArgs {
    reference: PathBuf,
    hypothesis: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    collar: f64,
    /// Write the report as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    scene: PathBuf,
    out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Single-linkage threshold of the baseline in samples; defaults to the segmentation radius.
    #[arg(long)]
    baseline_threshold: Option<f64>,
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long, value_enum, default_value = "compact")]
    preset: PresetArg,
    /// Print the dotted paths that differ between two configuration documents.
    #[arg(long, num_args = 2, value_names = ["A", "B"])]
    diff: Option<Vec<PathBuf>>,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if !e.is_input_error() => 1,
            _ => 2,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let run = match cli.command {
        Command::Simulate(a) => simulate(&a),
        Command::Diarize(a) => diarize(&a),
        Command::Score(a) => score(&a),
        Command::Experiment(a) => experiment(&a),
        Command::Config(a) => config(&a),
    };
    match run {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn load_scene(args: &SimulateArgs) -> Result<SceneSpec> {
    let a = SceneSpec::read_json(&args.scene)?;
    match &args.then {
        Some(b) => Ok(make_semistatic(&a, &SceneSpec::read_json(b)?, &parse_speaker_map(&args.speaker_map)?)?),
        None => Ok(a),
    }
}

fn render(spec: &SceneSpec, out_dir: &Path, seed: u64, stems: bool) -> Result<Diarization> {
    let out = synthesize(spec, seed)?;
    std::fs::create_dir_all(out_dir).map_err(Error::from)?;
    out.audio.write_wav(out_dir.join("audio.wav"), SampleFormat::Float32)?;
    out.ground_truth.write_rttm(out_dir.join("reference.rttm"), "audio")?;
    std::fs::write(out_dir.join("tdoa.csv"), out.tdoa_table.to_csv()).map_err(Error::from)?;
    if stems {
        let dir = out_dir.join("stems");
        std::fs::create_dir_all(&dir).map_err(Error::from)?;
        for (i, stem) in out.stems.iter().enumerate() {
            stem.write_wav(dir.join(format!("source_{i}.wav")), SampleFormat::Float32)?;
        }
    }
    Ok(out.ground_truth)
}

fn simulate(args: &SimulateArgs) -> Result<()> {
    let spec = load_scene(args)?;
    render(&spec, &args.out_dir, args.seed, args.stems)?;
    println!("wrote {}", args.out_dir.display());
    Ok(())
}

/// `fallback_reference` stands in for a missing `--reference`.
fn load_config(args: &PipelineArgs, fallback_reference: Option<&Path>) -> Result<PipelineConfig> {
    let mut cfg = match (&args.config, args.preset) {
        (Some(path), _) => PipelineConfig::read_json(path)?,
        (None, Some(p)) => PipelineConfig::preset(p.into()),
        (None, None) => PipelineConfig::default(),
    };
    if let Some(r) = args.refinement {
        cfg.refinement = match r {
            RefinementArg::Reassign => Refinement::Reassign,
            RefinementArg::Cacgmm => Refinement::Cacgmm,
        };
    }
    match args.embedder {
        Some(EmbedderArg::Default) => cfg.embedder = EmbedderChoice::Default,
        Some(EmbedderArg::Oracle) => {
            let reference = args
                .reference
                .clone()
                .or_else(|| fallback_reference.map(Path::to_path_buf))
                .ok_or_else(|| CliError::Usage("--embedder oracle needs --reference".into()))?;
            cfg.embedder = EmbedderChoice::Oracle { reference };
        }
        Some(EmbedderArg::External) => {
            let path = args
                .embeddings
                .clone()
                .ok_or_else(|| CliError::Usage("--embedder external needs --embeddings".into()))?;
            cfg.embedder = EmbedderChoice::External { path };
        }
        None => {}
    }
    Ok(cfg)
}

fn build_embedder(choice: &EmbedderChoice) -> Result<Box<dyn Embedder>> {
    Ok(match choice {
        EmbedderChoice::Default => Box::new(SpectralEmbedder::default()),
        EmbedderChoice::Oracle { reference } => Box::new(OracleEmbedder::new(Diarization::read_rttm(reference)?)),
        EmbedderChoice::External { path } => Box::new(ExternalEmbeddings::read_file(path)?),
    })
}

fn load_audio(paths: &[PathBuf]) -> Result<MultichannelAudio> {
    let parts = paths.iter().map(MultichannelAudio::read_wav).collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(MultichannelAudio::zip(parts)?)
}

fn run_pipeline(audio: &MultichannelAudio, cfg: &PipelineConfig, dump: Option<&Path>) -> Result<PipelineOutput> {
    let embedder = build_embedder(&cfg.embedder)?;
    let options = RunOptions {
        keep_masks: dump.is_some(),
    };
    let out = diarize_with(audio, cfg, embedder.as_ref(), options)?;
    for w in &out.warnings {
        eprintln!("warning: {w}");
    }
    if let Some(dir) = dump {
        write_stage_dumps(&out, dir)?;
        std::fs::write(dir.join("config.json"), cfg.to_json()).map_err(Error::from)?;
    }
    Ok(out)
}

fn diarize(args: &DiarizeArgs) -> Result<()> {
    let cfg = load_config(&args.pipeline, None)?;
    let audio = load_audio(&args.wavs)?;
    let out = run_pipeline(&audio, &cfg, args.dump_stages.as_deref())?;
    let file_id = args.wavs[0].file_stem().map_or("audio".into(), |s| s.to_string_lossy().into_owned());
    out.diarization.write_rttm(&args.out, &file_id)?;
    println!(
        "{} segments, {} kept, {} speakers",
        out.segments.len(),
        out.enhanced.len(),
        out.diarization.speakers().len()
    );
    Ok(())
}

fn score(args: &ScoreArgs) -> Result<()> {
    let reference = Diarization::read_rttm(&args.reference)?;
    let hyp = Diarization::read_rttm(&args.hypothesis)?;
    let report = compute_der(&reference, &hyp, args.collar)?;
    print!("{report}");
    if let Some(path) = &args.json {
        std::fs::write(path, serde_json::to_string_pretty(&report).map_err(Error::from)?).map_err(Error::from)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct ExperimentReport {
    config: PipelineConfig,
    segments: usize,
    rejected_as_reflections: usize,
    proposed: DerReport,
    baseline_threshold: f64,
    baseline: DerReport,
}

fn experiment(args: &ExperimentArgs) -> Result<()> {
    let spec = SceneSpec::read_json(&args.scene)?;
    let cfg = load_config(&args.pipeline, Some(&args.out_dir.join("reference.rttm")))?;
    let reference = render(&spec, &args.out_dir, args.seed, false)?;
    let audio = MultichannelAudio::read_wav(args.out_dir.join("audio.wav"))?;
    let out = run_pipeline(&audio, &cfg, Some(&args.out_dir.join("stages")))?;
    out.diarization.write_rttm(args.out_dir.join("hypothesis.rttm"), "audio")?;
    let threshold = args.baseline_threshold.unwrap_or(cfg.segment.max_distance);
    let baseline = spatial_only(&out.segments, &out.clock, threshold);
    baseline.write_rttm(args.out_dir.join("baseline.rttm"), "audio")?;
    let report = ExperimentReport {
        segments: out.segments.len(),
        rejected_as_reflections: out.verdicts.iter().filter(|v| !v.kept).count(),
        proposed: compute_der(&reference, &out.diarization, 0.0)?,
        baseline_threshold: threshold,
        baseline: compute_der(&reference, &baseline, 0.0)?,
        config: cfg,
    };
    std::fs::write(
        args.out_dir.join("report.json"),
        serde_json::to_string_pretty(&report).map_err(Error::from)?,
    )
    .map_err(Error::from)?;
    println!("proposed\n{}", report.proposed);
    println!("spatial-only baseline\n{}", report.baseline);
    Ok(())
}

fn config(args: &ConfigArgs) -> Result<()> {
    match &args.diff {
        Some(paths) => {
            let a = PipelineConfig::read_json(&paths[0])?;
            let b = PipelineConfig::read_json(&paths[1])?;
            for p in a.diff(&b) {
                println!("{p}");
            }
        }
        None => println!("{}", PipelineConfig::preset(args.preset.into()).to_json()),
    }
    Ok(())
}
