//! Command-line front end: `train`, `render`, `eval`, `export-cloud` and
//! `make-toy`. Usage errors exit with 2, runtime failures with 1.

use std::ffi::OsString;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::scenedata::{
    generate_toy_scene, load_dataset, write_dataset, Dataset, Image, ToyScene, View,
};
use crate::trainer::{
    export_field_pointcloud, load_checkpoint, render_image, save_checkpoint, train_until,
    StepReport, TrainConfig, TrainState,
};
use crate::voxelgrid::build_ray_index;

/// A run: where the images come from and how to train on them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scene: SceneSource,
    #[serde(default)]
    pub train: TrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SceneSource {
    /// A directory with `transforms_{train,test}.json`; relative paths
    /// resolve against the config file's directory.
    Dataset {
        path: PathBuf,
        #[serde(default)]
        white_background: bool,
    },
    /// The procedural scene, rendered in memory.
    Toy {
        #[serde(default)]
        scene: ToyScene,
        #[serde(default = "default_views")]
        views: usize,
        #[serde(default = "default_size")]
        width: usize,
        #[serde(default = "default_size")]
        height: usize,
    },
}

fn default_views() -> usize {
    3
}

fn default_size() -> usize {
    64
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::data(path, e.to_string()))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if let SceneSource::Dataset { path: p, .. } = &mut cfg.scene {
            if p.is_relative() {
                *p = path.parent().unwrap_or(Path::new(".")).join(&*p);
            }
        }
        cfg.train.validate()?;
        Ok(cfg)
    }

    /// Loads or renders the dataset.
    pub fn dataset(&self) -> Result<Dataset> {
        match &self.scene {
            SceneSource::Dataset {
                path,
                white_background,
            } => load_dataset(path, *white_background),
            SceneSource::Toy {
                scene,
                views,
                width,
                height,
            } => Ok(generate_toy_scene(scene, *views, *height, *width)?.0),
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "cvtrf",
    version,
    about = "Sparse-view radiance fields with in-voxel transformers"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Split {
    Train,
    Test,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train and write checkpoints plus a loss CSV into --out.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        iters: Option<u64>,
        #[arg(long, default_value = "run")]
        out: PathBuf,
        #[arg(long)]
        no_cvt: bool,
        #[arg(long)]
        no_contrast: bool,
        #[arg(long)]
        no_voxel_sampling: bool,
        /// Use only the first N training views.
        #[arg(long)]
        views: Option<usize>,
        /// Continue from this checkpoint instead of a fresh initialization.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Render every view of a split to PNGs.
    Render {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "renders")]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
    },
    /// Score renders of the held-out views and write a metrics report.
    Eval {
        #[arg(long)]
        config: PathBuf,
        /// Render from this checkpoint.
        #[arg(long, conflicts_with = "pred", required_unless_present = "pred")]
        checkpoint: Option<PathBuf>,
        /// Score existing `r_{i}.png` images from this directory instead.
        #[arg(long)]
        pred: Option<PathBuf>,
        #[arg(long, default_value = "metrics.json")]
        out: PathBuf,
    },
    /// Export weighted fine-pass samples as an ASCII PLY point cloud.
    ExportCloud {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "cloud.ply")]
        out: PathBuf,
        #[arg(long, default_value_t = 1e-3)]
        threshold: f32,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
    },
    /// Render the toy scene to a dataset directory with a matching run config.
    MakeToy {
        #[arg(long, default_value = "toy")]
        out: PathBuf,
        /// Training views.
        #[arg(long, default_value_t = 3)]
        views: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// JSON file holding a toy scene description.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn split_views(dataset: &Dataset, split: Split) -> &[View] {
    match split {
        Split::Train => &dataset.train,
        Split::Test => &dataset.test,
    }
}

fn render_split(state: &TrainState, dataset: &Dataset, split: Split) -> Result<Vec<Image>> {
    split_views(dataset, split)
        .iter()
        .map(|v| render_image(state, &v.camera, dataset.near, dataset.far))
        .collect()
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::Train {
            config,
            seed,
            iters,
            out,
            no_cvt,
            no_contrast,
            no_voxel_sampling,
            views,
            resume,
        } => {
            let mut run = RunConfig::load(&config)?;
            let t = &mut run.train;
            if let Some(s) = seed {
                t.seed = s;
            }
            if let Some(i) = iters {
                t.iters = i;
            }
            t.cvt_enabled &= !no_cvt;
            t.loss.contrastive_enabled &= !no_contrast;
            t.voxel_sampling_enabled &= !no_voxel_sampling;
            t.validate()?;
            let mut dataset = run.dataset()?;
            if let Some(n) = views {
                if n == 0 || n > dataset.train.len() {
                    return Err(Error::Config(format!(
                        "--views {n} out of range 1..={}",
                        dataset.train.len()
                    )));
                }
                dataset.train.truncate(n);
            }
            fs::create_dir_all(&out)?;
            fs::write(out.join("config.json"), serde_json::to_string_pretty(&run)?)?;
            let index = build_ray_index(dataset.training_rays()?, &run.train.grid)?;
            let mut state = match resume {
                Some(p) => {
                    let s = load_checkpoint(&p)?;
                    if s.config != run.train {
                        return Err(Error::Config(
                            "checkpoint was trained with a different config".into(),
                        ));
                    }
                    s
                }
                None => TrainState::new(run.train.clone())?,
            };
            let csv_path = out.join("loss.csv");
            let mut csv = if state.iteration > 0 && csv_path.exists() {
                BufWriter::new(fs::OpenOptions::new().append(true).open(&csv_path)?)
            } else {
                let mut w = BufWriter::new(fs::File::create(&csv_path)?);
                writeln!(w, "{}", StepReport::CSV_HEADER)?;
                w
            };
            let every = run.train.checkpoint_every;
            let started = Instant::now();
            train_until(
                &mut state,
                &index,
                run.train.iters,
                Some(&mut csv),
                |s, r| {
                    if (r.iteration + 1) % 500 == 0 {
                        eprintln!(
                            "iter {:>7}  total {:.5}  fine {:.5}  lr {:.2e}  {:.0}s",
                            r.iteration + 1,
                            r.total,
                            r.mse_fine,
                            r.lr,
                            started.elapsed().as_secs_f64()
                        );
                    }
                    if every > 0 && s.iteration % every == 0 {
                        save_checkpoint(
                            s,
                            &out.join(format!("checkpoint_{:07}.bin", s.iteration)),
                        )?;
                    }
                    Ok(())
                },
            )?;
            csv.flush()?;
            save_checkpoint(&state, &out.join("checkpoint.bin"))?;
            println!(
                "trained to iteration {} in {}",
                state.iteration,
                out.display()
            );
            Ok(())
        }
        Command::Render {
            config,
            checkpoint,
            out,
            split,
        } => {
            let run = RunConfig::load(&config)?;
            let dataset = run.dataset()?;
            let state = load_checkpoint(&checkpoint)?;
            fs::create_dir_all(&out)?;
            for (i, img) in render_split(&state, &dataset, split)?.iter().enumerate() {
                img.save_png(&out.join(format!("r_{i}.png")))?;
            }
            println!(
                "rendered {} views to {}",
                split_views(&dataset, split).len(),
                out.display()
            );
            Ok(())
        }
        Command::Eval {
            config,
            checkpoint,
            pred,
            out,
        } => {
            let run = RunConfig::load(&config)?;
            let dataset = run.dataset()?;
            let started = Instant::now();
            let gt: Vec<Image> = dataset.test.iter().map(|v| v.image.clone()).collect();
            let (preds, digest, iteration) = match (checkpoint, pred) {
                (Some(ck), _) => {
                    let state = load_checkpoint(&ck)?;
                    let imgs = render_split(&state, &dataset, Split::Test)?;
                    (imgs, state.config.digest(), state.iteration)
                }
                (None, Some(dir)) => {
                    let imgs = (0..gt.len())
                        .map(|i| {
                            Image::load_png(
                                &dir.join(format!("r_{i}.png")),
                                dataset.white_background,
                            )
                        })
                        .collect::<Result<Vec<_>>>()?;
                    (imgs, run.train.digest(), 0)
                }
                (None, None) => {
                    return Err(Error::Config("eval needs --checkpoint or --pred".into()))
                }
            };
            let report = MetricsReport::evaluate(
                &preds,
                &gt,
                digest,
                iteration,
                started.elapsed().as_secs_f64(),
            )?;
            fs::write(&out, serde_json::to_string_pretty(&report)?)?;
            println!(
                "mean PSNR {:.3} dB  mean SSIM {:.4}",
                report.mean_psnr, report.mean_ssim
            );
            Ok(())
        }
        Command::ExportCloud {
            config,
            checkpoint,
            out,
            threshold,
            split,
        } => {
            let run = RunConfig::load(&config)?;
            let dataset = run.dataset()?;
            let state = load_checkpoint(&checkpoint)?;
            let mut rays = Vec::new();
            for v in split_views(&dataset, split) {
                rays.extend(v.camera.rays(dataset.near, dataset.far)?);
            }
            let n = export_field_pointcloud(&state, &rays, threshold, &out)?;
            println!("retained {n} samples to {}", out.display());
            Ok(())
        }
        Command::MakeToy {
            out,
            views,
            size,
            seed,
            config,
        } => {
            let mut scene: ToyScene = match config {
                Some(p) => {
                    let text =
                        fs::read_to_string(&p).map_err(|e| Error::data(&p, e.to_string()))?;
                    serde_json::from_str(&text)
                        .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
                }
                None => ToyScene::default(),
            };
            if let Some(s) = seed {
                scene.seed = s;
            }
            let (dataset, _) = generate_toy_scene(&scene, views, size, size)?;
            write_dataset(&out, &dataset)?;
            let run = RunConfig {
                scene: SceneSource::Dataset {
                    path: PathBuf::from("."),
                    white_background: scene.white_background,
                },
                train: TrainConfig::toy(),
            };
            fs::write(out.join("run.json"), serde_json::to_string_pretty(&run)?)?;
            println!(
                "wrote {} training and {} test views to {}",
                dataset.train.len(),
                dataset.test.len(),
                out.display()
            );
            Ok(())
        }
    }
}
