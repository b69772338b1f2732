//! Command-line front end.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::error::{Error, Result};
use crate::experiment::{build_map, ground_truth_built, scene_questions, BuiltMap, RunConfig};
use crate::formats::{self, PALETTE};
use crate::imgproc::Raster;
use crate::metrics::{
    eval_navigation, eval_segmentation, format_report, format_tsv, summarize_reports, SegOptions,
    DEFAULT_BF1_TOLERANCE, DEFAULT_BOOTSTRAP_RESAMPLES,
};
use crate::nav::{freespace_from_heights, generate_episodes, run_episode, GroundTruth, PlannerParams, PlanningMaps};
use crate::pipelines::PipelineKind;
use crate::qa::{count_instances, CountMode, CountParams, DEFAULT_MIN_AREA};
use crate::scene::{coverage_trajectory, generate_scene, ground_truth_freespace, ground_truth_map, CoverageParams, SceneParams};

#[derive(Parser, Debug)]
#[command(name = "semmap", version, about = "Top-down semantic mapping from egocentric frames")]
struct Cli {
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, env = "SEMMAP_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Procedural scenes.
    #[command(subcommand)]
    Scene(SceneCmd),
    /// Agent trajectories.
    #[command(subcommand)]
    Traj(TrajCmd),
    /// Map construction.
    #[command(subcommand)]
    Map(MapCmd),
    /// Evaluation.
    #[command(subcommand)]
    Eval(EvalCmd),
    /// Object-goal navigation.
    #[command(subcommand)]
    Nav(NavCmd),
    /// Counting questions.
    #[command(subcommand)]
    Qa(QaCmd),
    /// Render a map file to a PPM image.
    Render {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand, Debug)]
enum SceneCmd {
    Gen {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand, Debug)]
enum TrajCmd {
    /// Coverage trajectory through a scene.
    Record {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PipelineArg {
    Smnet,
    Seg2proj,
    Proj2seg,
}

impl From<PipelineArg> for PipelineKind {
    fn from(p: PipelineArg) -> Self {
        match p {
            PipelineArg::Smnet => PipelineKind::Smnet,
            PipelineArg::Seg2proj => PipelineKind::Seg2Proj,
            PipelineArg::Proj2seg => PipelineKind::Proj2Seg,
        }
    }
}

#[derive(Subcommand, Debug)]
enum MapCmd {
    /// Build a predicted map from rendered frames.
    Build {
        #[arg(long, value_enum)]
        pipeline: PipelineArg,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        traj: PathBuf,
        /// `key = value` run configuration; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Ground-truth map of a scene.
    Gt {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand, Debug)]
enum EvalCmd {
    /// Segmentation metrics on the predicted map's observed cells.
    Seg {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Text report; a tab-separated copy is written next to it.
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value_t = DEFAULT_BF1_TOLERANCE)]
        bf1_tolerance: usize,
        /// Leave void cells out of the pixel accuracy.
        #[arg(long)]
        exclude_void: bool,
        /// Leave classes predicted but absent from ground truth out of
        /// mPrecision instead of counting them as zero.
        #[arg(long)]
        no_penalize_hallucinated: bool,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FreeArg {
    Pred,
    Gt,
}

#[derive(Subcommand, Debug)]
enum NavCmd {
    /// Seeded episodes on a scene's ground truth.
    Episodes {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Plan each episode on the map and execute it against the scene.
    Run {
        #[arg(long)]
        episodes: PathBuf,
        #[arg(long)]
        map: PathBuf,
        #[arg(long, value_enum)]
        free: FreeArg,
        /// Scene providing ground-truth obstacles and targets.
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        results: PathBuf,
        /// Greedy best-first search instead of A*.
        #[arg(long)]
        greedy: bool,
    },
}

#[derive(Subcommand, Debug)]
enum QaCmd {
    /// One counting question per object class.
    Questions {
        #[arg(long)]
        out: PathBuf,
    },
    /// Answer counting questions from a map.
    Run {
        #[arg(long)]
        questions: PathBuf,
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        answers: PathBuf,
        #[arg(long, default_value_t = DEFAULT_MIN_AREA)]
        min_area: usize,
        /// Sum counts over square tiles of this many cells instead of
        /// counting over the whole map.
        #[arg(long)]
        window: Option<usize>,
        #[arg(long)]
        stride: Option<usize>,
    },
}

fn read_map(path: &Path) -> Result<BuiltMap> {
    BuiltMap::from_grid_file(&formats::read_grid(path)?)
}

fn write_map(path: &Path, m: &BuiltMap) -> Result<()> {
    formats::write_grid(path, &m.to_grid_file()?)
}

fn tsv_path(report: &Path) -> PathBuf {
    report.with_extension("tsv")
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Scene(SceneCmd::Gen { seed, out }) => {
            formats::write_scene(&out, &generate_scene(seed, &SceneParams::default())?)
        }
        Command::Traj(TrajCmd::Record { scene, seed, out }) => {
            let s = formats::read_scene(&scene)?;
            formats::write_trajectory(&out, &coverage_trajectory(&s, seed, &CoverageParams::default())?)
        }
        Command::Map(MapCmd::Build {
            pipeline,
            scene,
            traj,
            config,
            out,
        }) => {
            let mut cfg = match config {
                Some(p) => RunConfig::from_file(&p)?,
                None => RunConfig::default(),
            };
            cfg.pipeline.kind = pipeline.into();
            let s = formats::read_scene(&scene)?;
            let t = formats::read_trajectory(&traj)?;
            write_map(&out, &build_map(&s, &t, &cfg, None)?)
        }
        Command::Map(MapCmd::Gt { scene, out }) => {
            let s = formats::read_scene(&scene)?;
            write_map(&out, &ground_truth_built(&s, &s.default_grid()))
        }
        Command::Eval(EvalCmd::Seg {
            pred,
            gt,
            report,
            bf1_tolerance,
            exclude_void,
            no_penalize_hallucinated,
        }) => {
            let p = read_map(&pred)?;
            let g = read_map(&gt)?;
            let opts = SegOptions {
                bf1_tolerance,
                include_void_in_acc: !exclude_void,
                penalize_hallucinated: !no_penalize_hallucinated,
                ..Default::default()
            };
            let r = eval_segmentation(&p.map, &g.map, &p.observed, &opts)?;
            let rows = summarize_reports(&[r], DEFAULT_BOOTSTRAP_RESAMPLES, 0)?;
            std::fs::write(&report, format_report(&rows))?;
            std::fs::write(tsv_path(&report), format_tsv(&rows))?;
            Ok(())
        }
        Command::Nav(NavCmd::Episodes { scene, seed, count, out }) => {
            let s = formats::read_scene(&scene)?;
            let g = s.default_grid();
            let (semantic, _) = ground_truth_map(&s, &g);
            let free = ground_truth_freespace(&s, &g);
            let params = PlannerParams::default();
            let gt = GroundTruth {
                semantic: &semantic,
                free: &free,
            };
            formats::write_episodes(&out, &generate_episodes(&gt, count, seed, params.agent_radius)?)
        }
        Command::Nav(NavCmd::Run {
            episodes,
            map,
            free,
            scene,
            results,
            greedy,
        }) => {
            let eps = formats::read_episodes(&episodes)?;
            let m = read_map(&map)?;
            let s = formats::read_scene(&scene)?;
            let g = m.map.grid;
            let (gt_semantic, _) = ground_truth_map(&s, &g);
            let gt_free = ground_truth_freespace(&s, &g);
            let (plan_free, observed) = match free {
                FreeArg::Pred => (freespace_from_heights(&m.heights.data, &m.observed)?, m.observed.clone()),
                FreeArg::Gt => (gt_free.clone(), Raster::new(g.u_size, g.v_size, true)),
            };
            let maps = PlanningMaps {
                semantic: &m.map,
                free: &plan_free,
                observed: &observed,
            };
            let truth = GroundTruth {
                semantic: &gt_semantic,
                free: &gt_free,
            };
            let params = PlannerParams {
                greedy,
                ..Default::default()
            };
            let out: Vec<_> = eps.iter().map(|e| run_episode(e, &maps, &truth, &params)).collect();
            formats::write_results(&results, &out)?;
            let sum = eval_navigation(&out);
            println!(
                "episodes = {}\nsuccess = {:.4}\nspl = {:.4}\nsoft_spl = {:.4}\ndist_to_goal = {:.4}",
                sum.episodes, sum.success_rate, sum.spl, sum.soft_spl, sum.mean_dist_to_goal
            );
            Ok(())
        }
        Command::Qa(QaCmd::Questions { out }) => formats::write_questions(&out, &scene_questions(0)),
        Command::Qa(QaCmd::Run {
            questions,
            map,
            answers,
            min_area,
            window,
            stride,
        }) => {
            let qs = formats::read_questions(&questions)?;
            let m = read_map(&map)?;
            let mode = match window {
                Some(w) => CountMode::SlidingWindow {
                    window: w,
                    stride: stride.unwrap_or(w),
                },
                None if stride.is_some() => return Err(Error::Invalid("--stride needs --window".into())),
                None => CountMode::Global,
            };
            let params = CountParams {
                min_area,
                mode,
                ..Default::default()
            };
            let out: Vec<(u32, u8)> = qs.iter().map(|q| (q.id, count_instances(&m.map, q.target, &params))).collect();
            formats::write_answers(&answers, &out)
        }
        Command::Render { map, out } => formats::write_ppm(&read_map(&map)?.map.labels, &PALETTE, &out),
    }
}

#[cfg(feature = "parallel")]
fn configure_threads(n: usize) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Invalid(format!("thread pool: {e}")))
}

#[cfg(not(feature = "parallel"))]
fn configure_threads(_n: usize) -> Result<()> {
    Ok(())
}

/// Runs the CLI on `argv` (program name first) and returns the exit code:
/// 0 on success, 2 on usage errors, 1 on runtime errors.
pub fn cli_dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = configure_threads(n) {
            eprintln!("semmap: {e}");
            return 1;
        }
    }
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("semmap: {e}");
            1
        }
    }
}
