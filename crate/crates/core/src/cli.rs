//! `dyntrack gen | train | track | eval | viz`.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dyntrack::eval::{evaluate, DEFAULT_IOU_THRESHOLD};
use dyntrack::nets::{checkpoint, Model, ModelConfig};
use dyntrack::scenegen::{
    frame_path, generate, load_sequence, read_mot, render_overlay, save_sequence, sequence_dirs, write_mot, MotRecord,
    SceneConfig,
};
use dyntrack::tracker::{step_with_responses, train, FrameResult, TrackState, TrackerConfig, TrainConfig};
use dyntrack::Error;

const USAGE_ERROR: u8 = 1;
const DATA_ERROR: u8 = 2;

#[derive(Parser)]
#[command(name = "dyntrack", version, about = "Synthetic multi-object tracking with dynamic searchers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic sequences (frames/*.ppm and gt.csv).
    Gen(GenArgs),
    /// Train a model on generated sequences.
    Train(TrainArgs),
    /// Run the tracker and write MOTChallenge results.
    Track(TrackArgs),
    /// Score results against ground truth.
    Eval(EvalArgs),
    /// Draw ground truth and results onto the frames.
    Viz(VizArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Scene configuration JSON.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in scene: random, crossing, static, uniform-crossing.
    #[arg(long)]
    preset: Option<String>,
    /// Seed for --preset.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of sequences; more than one writes `seq_000`, `seq_001`, ... with consecutive seeds.
    #[arg(long, default_value_t = 1)]
    count: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// A sequence directory or a directory of them.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 4)]
    epochs: usize,
    #[arg(long, default_value_t = 5e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Zero the motion channels of the searcher input.
    #[arg(long)]
    no_motion: bool,
}

#[derive(Args)]
struct TrackArgs {
    #[arg(long)]
    model: PathBuf,
    /// A sequence directory, or a directory of them (then --out is a directory).
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    no_motion: bool,
    /// Write every track's response map as `<frame>_<id>.pgm`.
    #[arg(long)]
    dump_responses: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    results: PathBuf,
    #[arg(long)]
    report: PathBuf,
    #[arg(long, default_value_t = DEFAULT_IOU_THRESHOLD)]
    iou: f64,
}

#[derive(Args)]
struct VizArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    results: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::InvalidArgument(_) => Failure::Usage(e.to_string()),
            e => Failure::Data(e),
        }
    }
}

type CliResult<T = ()> = std::result::Result<T, Failure>;

pub fn main(args: impl IntoIterator<Item = OsString>) -> ExitCode {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { USAGE_ERROR } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match cli.command {
        Command::Gen(a) => gen(a),
        Command::Train(a) => train_cmd(a),
        Command::Track(a) => track(a),
        Command::Eval(a) => eval(a),
        Command::Viz(a) => viz(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(USAGE_ERROR)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(DATA_ERROR)
        }
    }
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| Failure::Data(Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))))
}

fn gen(a: GenArgs) -> CliResult {
    let base = match (&a.config, &a.preset) {
        (Some(path), None) => SceneConfig::from_json(&read_text(path)?).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?,
        (None, Some(name)) => SceneConfig::preset(name, a.seed)?,
        _ => return Err(Failure::Usage("one of --config or --preset is required".into())),
    };
    if a.count == 0 {
        return Err(Failure::Usage("--count must be positive".into()));
    }
    for i in 0..a.count {
        let cfg = SceneConfig { seed: base.seed + i, ..base.clone() };
        let dir = if a.count == 1 { a.out.clone() } else { a.out.join(format!("seq_{i:03}")) };
        save_sequence(&dir, &generate(&cfg)?)?;
        fs::write(dir.join("config.json"), cfg.to_json()).map_err(Error::from)?;
    }
    Ok(())
}

fn train_cmd(a: TrainArgs) -> CliResult {
    if a.epochs == 0 || !(a.lr > 0.0) {
        return Err(Failure::Usage("--epochs and --lr must be positive".into()));
    }
    let sequences = sequence_dirs(&a.data)?.iter().map(|d| load_sequence(d)).collect::<Result<Vec<_>, _>>()?;
    let mut model = Model::new(ModelConfig::default(), a.seed)?;
    let cfg = TrainConfig { epochs: a.epochs, lr: a.lr, seed: a.seed, use_motion: !a.no_motion, ..TrainConfig::default() };
    let report = train(&mut model, &sequences, &cfg, |_, _, _| {})?;
    for (e, l) in report.epoch_losses.iter().enumerate() {
        eprintln!("epoch {}: mean loss {l:.4}", e + 1);
    }
    checkpoint::save(model.params(), &a.out)?;
    Ok(())
}

fn load_model(path: &Path) -> CliResult<Model> {
    Ok(Model::from_params(checkpoint::load(path)?)?)
}

fn track(a: TrackArgs) -> CliResult {
    let model = load_model(&a.model)?;
    let config = TrackerConfig { use_motion: !a.no_motion, ..TrackerConfig::default() };
    let dirs = sequence_dirs(&a.data)?;
    let single = dirs.len() == 1 && dirs[0] == a.data;
    for dir in &dirs {
        let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let seq = load_sequence(dir)?;
        let mut state = TrackState::new();
        let mut records: Vec<MotRecord> = Vec::new();
        for frame in &seq.frames {
            let (result, detail) = step_with_responses(&mut state, frame, &model, &config)?;
            records.extend(result.to_records());
            if let Some(root) = &a.dump_responses {
                let out = if single { root.clone() } else { root.join(&name) };
                fs::create_dir_all(&out).map_err(Error::from)?;
                for (id, r) in &detail.responses {
                    fs::write(out.join(format!("{:06}_{id}.pgm", frame.index() + 1)), r.to_pgm()).map_err(Error::from)?;
                }
            }
        }
        let out = if single { a.out.clone() } else { a.out.join(format!("{name}.csv")) };
        if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(Error::from)?;
        }
        write_mot(&out, &records)?;
    }
    Ok(())
}

fn eval(a: EvalArgs) -> CliResult {
    if !(a.iou > 0.0 && a.iou <= 1.0) {
        return Err(Failure::Usage(format!("--iou {} outside (0, 1]", a.iou)));
    }
    let gt = read_mot(&a.gt)?;
    let results = read_mot(&a.results)?;
    let report = evaluate(&gt, &results, a.iou).map_err(Failure::Data)?;
    let json = serde_json::to_string_pretty(&report).map_err(Error::from)?;
    fs::write(&a.report, json + "\n").map_err(Error::from)?;
    println!(
        "MOTA {:.3}  IDF1 {:.3}  IDSW {}  HOTA@{} {:.3}  DetA {:.3}  AssA {:.3}",
        report.mota, report.idf1, report.idsw, report.iou_threshold, report.hota, report.deta, report.assa
    );
    Ok(())
}

fn viz(a: VizArgs) -> CliResult {
    let seq = load_sequence(&a.data)?;
    let records = read_mot(&a.results)?;
    if let Some(r) = records.iter().find(|r| r.frame > seq.frames.len()) {
        return Err(Failure::Data(Error::Eval(format!("result frame {} beyond the {} frames", r.frame, seq.frames.len()))));
    }
    for (frame, gt) in seq.frames.iter().zip(&seq.gt.frames) {
        let result = FrameResult {
            frame_index: frame.index(),
            tracks: records
                .iter()
                .filter(|r| r.frame == frame.index() + 1)
                .map(|r| dyntrack::tracker::TrackOutput { id: r.id, bbox: r.bbox, score: r.conf })
                .collect(),
        };
        let out = frame_path(&a.out, frame.index());
        let out = a.out.join(out.file_name().expect("frame file name"));
        fs::create_dir_all(&a.out).map_err(Error::from)?;
        fs::write(out, render_overlay(frame, &result, Some(gt))).map_err(Error::from)?;
    }
    Ok(())
}
