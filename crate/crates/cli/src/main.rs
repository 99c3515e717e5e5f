use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use facepad::cascade::{anchor_scales, read_detections, write_jsonl};
use facepad::classify::write_scores;
use facepad::imagecore::load_gray;
use facepad::modelio::ModelFile;
use facepad::pipeline::{
    evaluate, extract_spmt_records, extract_tfbd_records, load_landmarks, predict, predict_cascade, prepare_face,
    read_manifest, template_from_manifest, train_all_with_summary, Mode, ModelBundle, PredictInput, RunConfig,
    ThresholdChoice,
};
use facepad::synth::write_synthetic_dataset;
use facepad::tfbd::CameraCalib;
use facepad::{Error, Result};

/// Face presentation-attack detection with micro-texture and binocular depth cues.
#[derive(Parser, Debug)]
#[command(name = "facepad", version)]
struct Cli {
    /// Master seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file or directory of the subcommand.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train every model component and write a bundle.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        /// Stereo calibration; enables the depth components.
        #[arg(long)]
        calibration: Option<PathBuf>,
        #[arg(long)]
        template_manifest: Option<PathBuf>,
    },
    /// Write SPMT feature vectors as JSON lines.
    ExtractSpmt {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Emit the 21-block vector before PCA.
        #[arg(long)]
        raw: bool,
    },
    /// Write TFBD depth vectors as JSON lines.
    ExtractTfbd {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        model: PathBuf,
    },
    /// Build a template face from genuine stereo captures.
    BuildTemplate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        calibration: PathBuf,
        /// Number of genuine captures; defaults to the config value.
        #[arg(long)]
        captures: Option<usize>,
    },
    /// Score a single face, or decide detector boxes in cascade mode.
    Predict(PredictArgs),
    /// Score a labeled manifest and report metrics.
    Evaluate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "spmt")]
        mode: String,
        /// `operating`, `eer` or a numeric score threshold.
        #[arg(long, default_value = "operating")]
        threshold: String,
        /// Take the threshold at the EER of this development manifest.
        #[arg(long)]
        dev_manifest: Option<PathBuf>,
        /// Per-sample scores file; defaults to --out.
        #[arg(long)]
        scores: Option<PathBuf>,
    },
    /// Write a synthetic two-class dataset with a manifest.
    GenSynthetic {
        #[arg(long, default_value_t = 20)]
        n_per_class: usize,
        /// Also write stereo landmark pairs and a calibration file.
        #[arg(long)]
        stereo: bool,
    },
    /// Print the anchor scales of a detector pyramid.
    AnchorScales {
        #[arg(long, default_value_t = 0.2)]
        min: f64,
        #[arg(long, default_value_t = 0.9)]
        max: f64,
        #[arg(long, default_value_t = 6)]
        layers: usize,
    },
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value = "spmt")]
    mode: String,
    /// Face image, or the full scene in cascade mode.
    #[arg(long)]
    image: Option<PathBuf>,
    /// Eye centres `lx,ly,rx,ry` used to crop the face.
    #[arg(long, value_delimiter = ',', num_args = 4)]
    eyes: Option<Vec<f64>>,
    /// Landmark pair JSON for the depth modes.
    #[arg(long)]
    landmarks: Option<PathBuf>,
    /// Detector records (JSON lines) for cascade mode.
    #[arg(long)]
    detections: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 1 })
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn require_out(out: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    out.clone()
        .ok_or_else(|| Error::Config(format!("--out is required for {what}")))
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("serializable value")
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::Io {
            path: p.to_path_buf(),
            source: e,
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn jsonl<T: serde::Serialize>(items: &[T]) -> String {
    items.iter().map(|i| to_json(i) + "\n").collect()
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    let has_config = cli.config.is_some();
    let out = cli.out.clone();
    match cli.command {
        Command::Train {
            manifest,
            calibration,
            template_manifest,
        } => {
            let mut cfg = cfg;
            if calibration.is_some() {
                cfg.calibration = calibration;
            }
            if template_manifest.is_some() {
                cfg.template_manifest = template_manifest;
            }
            cfg.validate()?;
            let entries = read_manifest(&manifest)?;
            let (bundle, summary) = train_all_with_summary(&entries, &cfg)?;
            let path = out.unwrap_or_else(|| PathBuf::from("model.fpb"));
            bundle.save(&path)?;
            println!("bundle     {}", path.display());
            println!("spmt dim   {}", summary.spmt_dim);
            println!(
                "spmt cv    C={} gamma x{} accuracy {:.4}",
                summary.spmt.c, summary.spmt.gamma_factor, summary.spmt.cv_accuracy
            );
            if let Some(t) = &summary.tfbd {
                println!("tfbd cv    C={} gamma x{} accuracy {:.4}", t.c, t.gamma_factor, t.cv_accuracy);
            }
        }
        Command::ExtractSpmt { manifest, model, raw } => {
            let bundle = ModelBundle::load(&model)?;
            let records = extract_spmt_records(&read_manifest(&manifest)?, &bundle, raw)?;
            emit(out.as_deref(), &jsonl(&records))?;
        }
        Command::ExtractTfbd { manifest, model } => {
            let bundle = ModelBundle::load(&model)?;
            let records = extract_tfbd_records(&read_manifest(&manifest)?, &bundle)?;
            emit(out.as_deref(), &jsonl(&records))?;
        }
        Command::BuildTemplate {
            manifest,
            calibration,
            captures,
        } => {
            let path = require_out(&out, "build-template")?;
            let calib = CameraCalib::load(&calibration)?;
            let n = captures.unwrap_or(cfg.template_captures);
            if n == 0 {
                return Err(Error::Config("--captures must be >= 1".into()));
            }
            let template = template_from_manifest(&read_manifest(&manifest)?, &calib, n)?;
            template.save(&path)?;
            println!("template   {} ({} landmarks)", path.display(), template.landmarks.len());
        }
        Command::Predict(args) => predict_cmd(args, &cfg, has_config, out.as_deref())?,
        Command::Evaluate {
            manifest,
            model,
            mode,
            threshold,
            dev_manifest,
            scores,
        } => {
            let mode: Mode = mode.parse()?;
            let bundle = ModelBundle::load(&model)?;
            let entries = read_manifest(&manifest)?;
            let choice = match dev_manifest {
                Some(dev) => ThresholdChoice::DevSet(read_manifest(&dev)?),
                None => match threshold.as_str() {
                    "operating" => ThresholdChoice::Operating,
                    "eer" => ThresholdChoice::Eer,
                    v => ThresholdChoice::Fixed(
                        v.parse()
                            .map_err(|_| Error::Config(format!("threshold {v:?} is not operating, eer or a number")))?,
                    ),
                },
            };
            let (report, records) = evaluate(&entries, &bundle, mode, &choice, cfg.far_level)?;
            if let Some(p) = scores.or(out) {
                write_scores(&p, &records)?;
            }
            println!("{report}");
            println!("{}", to_json(&report));
        }
        Command::GenSynthetic { n_per_class, stereo } => {
            let dir = require_out(&out, "gen-synthetic")?;
            if n_per_class == 0 {
                return Err(Error::Config("--n-per-class must be >= 1".into()));
            }
            let ds = write_synthetic_dataset(&dir, n_per_class, stereo, cfg.seed)?;
            println!("manifest   {}", ds.manifest.display());
            if let Some(c) = &ds.calibration {
                println!("calib      {}", c.display());
            }
            println!("entries    {}", ds.entries.len());
        }
        Command::AnchorScales { min, max, layers } => {
            let scales = anchor_scales(min, max, layers)?;
            for (k, s) in scales.iter().enumerate() {
                println!("layer {} scale {s:.6}", k + 1);
            }
            println!("{}", to_json(&scales));
        }
    }
    Ok(())
}

/// Cascade settings from --config take precedence over those stored in the bundle.
fn predict_cmd(args: PredictArgs, cfg: &RunConfig, has_config: bool, out: Option<&Path>) -> Result<()> {
    let mode: Mode = args.mode.parse()?;
    let bundle = ModelBundle::load(&args.model)?;
    if mode == Mode::Cascade {
        let image = args
            .image
            .ok_or_else(|| Error::Precondition("cascade mode needs --image".into()))?;
        let det = args
            .detections
            .ok_or_else(|| Error::Precondition("cascade mode needs --detections".into()))?;
        let scene = load_gray(&image)?;
        let records = read_detections(&det)?;
        let cascade = cfg.cascade();
        let decisions = predict_cascade(&scene, &records, &bundle, has_config.then_some(&cascade))?;
        match out {
            Some(p) => write_jsonl(p, &decisions)?,
            None => print!("{}", jsonl(&decisions)),
        }
        return Ok(());
    }
    let eyes = args.eyes.map(|v| [[v[0], v[1]], [v[2], v[3]]]);
    let face = match &args.image {
        Some(p) => Some(prepare_face(&load_gray(p)?, eyes)?),
        None => None,
    };
    let landmarks = match &args.landmarks {
        Some(p) => Some(load_landmarks(p)?),
        None => None,
    };
    let p = predict(&PredictInput { face, landmarks }, &bundle, mode)?;
    let text = to_json(&p) + "\n";
    eprintln!("{} {} score {:.6}", p.mode, p.label, p.score);
    emit(out, &text)
}
