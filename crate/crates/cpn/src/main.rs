use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cpn::config::{ConfigError, RunConfig};
use cpn::dataset::{self, Annotation};
use cpn::driver::{self, DriverError};
use cpn::formats::{DescriptorFile, DetectionFile};
use cpn::pgm::{self, Gray};
use cpn::{bench, checkpoint, read_json, suite, write_json, FormatError};
use cpn_core::data::LabeledImage;
use cpn_core::efd::{fit_descriptor, sample_contour, uniform_ts};
use cpn_core::geometry::rasterize;
use cpn_core::model::{predict, ModelError, Parameters};
use cpn_core::Point;

#[derive(Parser)]
#[command(name = "cpn", version, about = "Contour proposal network toolkit")]
struct Cli {
    /// Run configuration (JSON). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    SynthGen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit descriptors to the instances of an annotation file.
    EfdFit {
        input: PathBuf,
        #[arg(long)]
        order: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rasterize descriptors to a PGM mask.
    EfdRender {
        input: PathBuf,
        #[arg(long)]
        height: Option<usize>,
        #[arg(long)]
        width: Option<usize>,
        #[arg(long, default_value_t = 256)]
        samples: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train, writing checkpoints, loss history and a held-out evaluation.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a checkpoint, or stored detections, against ground truth.
    Eval {
        #[arg(long, conflicts_with = "predictions")]
        checkpoint: Option<PathBuf>,
        /// Directory of `img_NNNNNN.json` detection files.
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write per-image detections.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, conflicts_with = "image")]
        data: Option<PathBuf>,
        #[arg(long)]
        image: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the image with detected contours drawn in.
        #[arg(long)]
        overlay: bool,
    },
    /// Measure inference throughput.
    Bench {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 2)]
        warmup: usize,
        #[arg(long, default_value_t = 10)]
        repeats: usize,
    },
    /// Run the finite-difference gradient suite.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Skip the full-network check.
        #[arg(long)]
        ops_only: bool,
    },
}

enum Failure {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Numeric(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Numeric(m) => m,
        }
    }
}

impl From<FormatError> for Failure {
    fn from(e: FormatError) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Diverged { .. } => Failure::Numeric(e.to_string()),
            ModelError::Config(_) => Failure::Usage(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

impl From<DriverError> for Failure {
    fn from(e: DriverError) -> Self {
        match e {
            DriverError::Format(e) => e.into(),
            DriverError::Model(e) => e.into(),
        }
    }
}

impl From<cpn_core::data::DataError> for Failure {
    fn from(e: cpn_core::data::DataError) -> Self {
        match e {
            cpn_core::data::DataError::Config(_) => Failure::Usage(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn run(cli: Cli) -> Outcome {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::SynthGen { out, count, seed } => {
            if let Some(n) = count {
                cfg.synth.images = n;
            }
            if let Some(s) = seed {
                cfg.synth.seed = s;
            }
            cfg.validate()?;
            let images = cfg.training_images()?;
            dataset::save_dataset(&out, &images)?;
            println!("wrote {} images to {}", images.len(), out.display());
            Ok(())
        }
        Command::EfdFit { input, order, out } => {
            let order = order.unwrap_or(cfg.model.order);
            if order == 0 {
                return Err(Failure::Usage("order must be >= 1".into()));
            }
            let ann: Annotation = read_json(&input)?;
            let descriptors = ann
                .polylines(&input)?
                .iter()
                .enumerate()
                .map(|(k, p)| {
                    fit_descriptor(p, order)
                        .map_err(|e| Failure::Data(format!("{}: instance {k}: {e}", input.display())))
                })
                .collect::<Result<Vec<_>, _>>()?;
            write_json(&out, &DescriptorFile { descriptors })?;
            Ok(())
        }
        Command::EfdRender {
            input,
            height,
            width,
            samples,
            out,
        } => {
            let (h, w) = (height.unwrap_or(cfg.synth.height), width.unwrap_or(cfg.synth.width));
            if h == 0 || w == 0 || samples < 3 {
                return Err(Failure::Usage("height, width must be positive and samples >= 3".into()));
            }
            let file: DescriptorFile = read_json(&input)?;
            let ts = uniform_ts(samples);
            let mut mask = vec![0.0; h * w];
            for (k, d) in file.descriptors.iter().enumerate() {
                d.validate()
                    .map_err(|e| Failure::Data(format!("{}: descriptor {k}: {e}", input.display())))?;
                let pts = sample_contour(d, &ts).map_err(|e| Failure::Data(e.to_string()))?;
                for (m, &on) in mask.iter_mut().zip(rasterize(&pts, h, w).bits()) {
                    if on {
                        *m = 1.0;
                    }
                }
            }
            pgm::write(&out, &Gray::from_unit(h, w, &mask))?;
            Ok(())
        }
        Command::Train {
            data,
            test,
            out,
            epochs,
            lr,
            seed,
        } => {
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            if let Some(lr) = lr {
                cfg.train.learning_rate = lr;
            }
            if let Some(s) = seed {
                cfg.model.seed = s;
            }
            let data = data.or(cfg.paths.data.clone());
            let test = test.or(cfg.paths.test.clone());
            let out = out
                .or(cfg.paths.out.clone())
                .ok_or_else(|| Failure::Usage("train needs --out (or paths.out)".into()))?;
            for p in [&data, &test].into_iter().flatten() {
                require_dir(p)?;
            }
            cfg.validate()?;
            let images = load_or_generate(&cfg, data.as_deref(), false)?;
            let held_out = load_or_generate(&cfg, test.as_deref(), true)?;
            let result = driver::train_run(&images, &cfg, &out)?;
            let report = driver::eval_model(&cfg, &result.params, &held_out)?;
            write_json(&out.join("eval.json"), &report)?;
            println!(
                "trained {} epochs, final loss {}, held-out F1@0.5 {:.4}, F1_avg {:.4}",
                result.history.len(),
                result.history.last().map_or(f64::NAN, |h| h.loss.total),
                report.f1_at(0.5).unwrap_or(f64::NAN),
                report.f1_avg
            );
            Ok(())
        }
        Command::Eval {
            checkpoint,
            predictions,
            data,
            out,
        } => {
            let data = data.or(cfg.paths.test.clone());
            if let Some(d) = &data {
                require_dir(d)?;
            }
            let images = load_or_generate(&cfg, data.as_deref(), true)?;
            let report = match (checkpoint, predictions) {
                (Some(c), None) => {
                    let params = load_params(&cfg, &c)?;
                    driver::eval_model(&cfg, &params, &images)?
                }
                (None, Some(dir)) => {
                    require_dir(&dir)?;
                    let dets = (0..images.len())
                        .map(|i| read_json::<DetectionFile>(&dir.join(format!("{}.json", dataset::stem(i)))))
                        .collect::<Result<Vec<_>, _>>()?;
                    driver::eval_detections(&images, &dets, cfg.hash())?
                }
                _ => return Err(Failure::Usage("eval needs --checkpoint or --predictions".into())),
            };
            write_json(&out, &report)?;
            println!("F1@0.5 {:.4}, F1_avg {:.4}", report.f1_at(0.5).unwrap_or(f64::NAN), report.f1_avg);
            Ok(())
        }
        Command::Infer {
            checkpoint,
            data,
            image,
            out,
            overlay,
        } => {
            let params = load_params(&cfg, &checkpoint)?;
            let images: Vec<(String, LabeledImage)> = match (data, image) {
                (Some(dir), None) => {
                    require_dir(&dir)?;
                    let files = dataset::list(&dir)?;
                    if files.is_empty() {
                        return Err(Failure::Data(format!("{}: no img_NNNNNN.json files", dir.display())));
                    }
                    files
                        .iter()
                        .map(|f| {
                            let name = f.file_stem().unwrap().to_string_lossy().into_owned();
                            dataset::load_image(f).map(|img| (name, img))
                        })
                        .collect::<Result<_, _>>()?
                }
                (None, Some(file)) => {
                    let g = pgm::read(&file)?;
                    let img = LabeledImage::new(g.height, g.width, g.to_unit(), vec![])
                        .map_err(|e| FormatError::invalid(&file, e))?;
                    let name = file.file_stem().map_or("image".into(), |s| s.to_string_lossy().into_owned());
                    vec![(name, img)]
                }
                _ => return Err(Failure::Usage("infer needs --data or --image".into())),
            };
            fs::create_dir_all(&out).map_err(|e| FormatError::io(&out, e))?;
            let mut total = 0;
            for (name, img) in &images {
                let dets = predict(&cfg.model, &params, img)?;
                total += dets.len();
                write_json(&out.join(format!("{name}.json")), &DetectionFile::of(&dets))?;
                if overlay {
                    let mut g = Gray::from_unit(img.height, img.width, &img.pixels);
                    for d in &dets {
                        draw_contour(&mut g, &d.contour);
                    }
                    pgm::write(&out.join(format!("{name}.overlay.pgm")), &g)?;
                }
            }
            println!("{total} detections in {} images", images.len());
            Ok(())
        }
        Command::Bench {
            checkpoint,
            data,
            warmup,
            repeats,
        } => {
            if repeats == 0 {
                return Err(Failure::Usage("repeats must be >= 1".into()));
            }
            let params = match checkpoint {
                Some(c) => load_params(&cfg, &c)?,
                None => Parameters::init(&cfg.model)?,
            };
            if let Some(d) = &data {
                require_dir(d)?;
            }
            let images = load_or_generate(&cfg, data.as_deref(), true)?;
            let report = bench::run(&cfg.model, &params, &images, warmup, repeats)?;
            println!("{}", serde_json::to_string_pretty(&report).expect("serializable"));
            Ok(())
        }
        Command::Gradcheck { seed, ops_only } => {
            let mut results = suite::op_checks(seed).map_err(|e| Failure::Numeric(e.to_string()))?;
            if !ops_only {
                results.push(suite::model_check(&cfg.model, seed).map_err(|e| Failure::Numeric(e.to_string()))?);
            }
            let mut worst: f64 = 0.0;
            for r in &results {
                worst = worst.max(r.max_rel_error);
                println!(
                    "{:<4} {:<36} max rel error {:.3e} ({} components, {} moved off kinks, {:.1}s)",
                    if r.passed() { "ok" } else { "FAIL" },
                    r.name,
                    r.max_rel_error,
                    r.checked,
                    r.nudged,
                    r.seconds
                );
            }
            println!("max relative error {worst:.3e} (tolerance {:.0e})", suite::TOLERANCE);
            if results.iter().all(|r| r.passed()) {
                Ok(())
            } else {
                Err(Failure::Numeric("gradient check failed".into()))
            }
        }
    }
}

fn require_dir(p: &Path) -> Outcome {
    if p.is_dir() {
        Ok(())
    } else {
        Err(Failure::Data(format!("{}: not a directory", p.display())))
    }
}

fn load_params(cfg: &RunConfig, path: &Path) -> Result<Parameters, Failure> {
    let p = checkpoint::load(path)?;
    p.check_layout(&cfg.model)
        .map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    Ok(p)
}

/// Dataset from `dir`, or generated from the config (training or held-out range).
fn load_or_generate(cfg: &RunConfig, dir: Option<&Path>, held_out: bool) -> Result<Vec<LabeledImage>, Failure> {
    match dir {
        Some(d) => Ok(dataset::load_dataset(d)?),
        None if held_out => Ok(cfg.test_set()?),
        None => Ok(cfg.training_images()?),
    }
}

fn draw_contour(g: &mut Gray, pts: &[Point]) {
    let n = pts.len();
    for i in 0..n {
        let (a, b) = (pts[i], pts[(i + 1) % n]);
        let steps = ((b.x - a.x).abs().max((b.y - a.y).abs()) * 4.0).ceil().max(1.0) as usize;
        for s in 0..=steps {
            let u = s as f64 / steps as f64;
            let (x, y) = (a.x + u * (b.x - a.x), a.y + u * (b.y - a.y));
            if x >= 0.0 && y >= 0.0 && (x as usize) < g.width && (y as usize) < g.height {
                g.data[y as usize * g.width + x as usize] = 255;
            }
        }
    }
}
