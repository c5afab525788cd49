//! Command-line driver: scene generation, texture mapping, reconstruction,
//! evaluation and ablation.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use clothsft::objective::LossWeights;
use clothsft::optimizer::{
    resume_sft_phase, run_sft_phase, run_texture_phase, Ablation, EpochLog, ParamSpec, Schedule, SftResult, SftState,
};
use clothsft::pipeline::Problem;
use clothsft::render::Texture;
use clothsft::scene::{
    evaluate, generate, read_checkpoint, read_ground_truth, read_result, read_scene, summarize, write_checkpoint,
    write_ground_truth, write_result, write_scene, write_texture_log, FrameMetrics, ResultDir, ResultMeta, Scene,
    SceneConfig, SceneMetrics, TextureSource, SCHEMA_VERSION,
};
use clothsft::{Error, Result};

const OUTPUT_ROOT_ENV: &str = "CLOTHSFT_OUTPUT_ROOT";

#[derive(Parser)]
#[command(name = "clothsft", version, about = "Physics-based monocular cloth reconstruction")]
struct Cli {
    /// Root directory for relative output paths.
    #[arg(long, global = true, env = OUTPUT_ROOT_ENV)]
    output_root: Option<PathBuf>,
    /// Suppress progress output.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate and render a synthetic scene with ground truth.
    GenScene(GenSceneArgs),
    /// Fit the texture to the first frame.
    TextureMap(TextureMapArgs),
    /// Texture mapping followed by reconstruction of stiffness and forces.
    Reconstruct(ReconstructArgs),
    /// Compare a result against the scene ground truth.
    Evaluate(EvaluateArgs),
    /// Reconstruct under several loss configurations and tabulate metrics.
    Ablate(AblateArgs),
}

#[derive(Args)]
struct GenSceneArgs {
    #[arg(long)]
    out: PathBuf,
    /// Base configuration: default, camera-axis or crumple.
    #[arg(long, default_value = "default")]
    preset: String,
    /// TOML file with scene configuration fields; overrides the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Grid size as ROWSxCOLS.
    #[arg(long, value_parser = parse_pair)]
    mesh: Option<(usize, usize)>,
    #[arg(long)]
    frames: Option<usize>,
    /// Image size as WIDTHxHEIGHT.
    #[arg(long, value_parser = parse_pair)]
    resolution: Option<(usize, usize)>,
    #[arg(long)]
    focal: Option<f64>,
    #[arg(long)]
    camera_distance: Option<f64>,
    #[arg(long)]
    wind_strength: Option<f64>,
    #[arg(long)]
    log10_stretch: Option<f64>,
    #[arg(long)]
    log10_bend: Option<f64>,
    #[arg(long)]
    log10_shear: Option<f64>,
    /// PNG texture to use instead of the checkerboard.
    #[arg(long)]
    texture: Option<PathBuf>,
    #[arg(long)]
    points_per_frame: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Clone)]
struct WeightArgs {
    #[arg(long, default_value_t = LossWeights::default().texture)]
    lambda_tex: f64,
    #[arg(long, default_value_t = LossWeights::default().silhouette)]
    lambda_sil: f64,
    #[arg(long, default_value_t = LossWeights::default().energy)]
    lambda_energy: f64,
    #[arg(long, default_value_t = LossWeights::default().force)]
    lambda_force: f64,
}

impl WeightArgs {
    fn weights(&self) -> LossWeights {
        LossWeights { texture: self.lambda_tex, silhouette: self.lambda_sil, energy: self.lambda_energy, force: self.lambda_force }
    }
}

#[derive(Args, Clone)]
struct SpecArgs {
    #[arg(long, default_value_t = ParamSpec::default().log10_stretch)]
    init_log10_stretch: f64,
    #[arg(long, default_value_t = ParamSpec::default().log10_bend)]
    init_log10_bend: f64,
    #[arg(long, default_value_t = ParamSpec::default().log10_shear)]
    init_log10_shear: f64,
    /// Initial constant force per unit mass as X,Y,Z.
    #[arg(long, value_parser = parse_vec3, default_value = "0,-1,0", allow_hyphen_values = true)]
    init_constant_force: [f64; 3],
    #[arg(long, default_value_t = ParamSpec::default().texture_init)]
    texture_init: f64,
    /// Texture size as WIDTHxHEIGHT.
    #[arg(long, value_parser = parse_pair, default_value = "64x64")]
    texture_size: (usize, usize),
    #[arg(long, default_value_t = ParamSpec::default().lr_stiffness)]
    lr_stiffness: f64,
    #[arg(long, default_value_t = ParamSpec::default().lr_constant_force)]
    lr_constant_force: f64,
    #[arg(long, default_value_t = ParamSpec::default().lr_dynamic_forces)]
    lr_dynamic_forces: f64,
    #[arg(long, default_value_t = ParamSpec::default().lr_texture)]
    lr_texture: f64,
    #[arg(long, default_value_t = ParamSpec::default().damping)]
    damping: f64,
    #[arg(long, default_value_t = ParamSpec::default().substeps_per_frame)]
    substeps: usize,
    #[arg(long, default_value_t = ParamSpec::default().clip_norm)]
    clip_norm: f64,
    #[arg(long, default_value_t = ParamSpec::default().clip_percentile)]
    clip_percentile: f64,
}

impl SpecArgs {
    /// The time step follows from the scene frame interval and the substep count.
    fn spec(&self, scene: &Scene) -> ParamSpec {
        ParamSpec {
            log10_stretch: self.init_log10_stretch,
            log10_bend: self.init_log10_bend,
            log10_shear: self.init_log10_shear,
            constant_force: self.init_constant_force,
            texture_init: self.texture_init,
            texture_width: self.texture_size.0,
            texture_height: self.texture_size.1,
            lr_stiffness: self.lr_stiffness,
            lr_constant_force: self.lr_constant_force,
            lr_dynamic_forces: self.lr_dynamic_forces,
            lr_texture: self.lr_texture,
            damping: self.damping,
            dt: scene.frame_interval / self.substeps.max(1) as f64,
            substeps_per_frame: self.substeps,
            clip_norm: self.clip_norm,
            clip_percentile: self.clip_percentile,
        }
    }
}

#[derive(Args, Clone)]
struct ScheduleArgs {
    #[arg(long, default_value_t = Schedule::default().initial_frames)]
    initial_frames: usize,
    #[arg(long, default_value_t = Schedule::default().frames_added_every)]
    frames_added_every: usize,
    #[arg(long, default_value_t = Schedule::default().epochs_after_last_frame)]
    epochs_after_last_frame: usize,
    #[arg(long, default_value_t = Schedule::default().texture_phase_epochs)]
    texture_epochs: usize,
}

impl ScheduleArgs {
    fn schedule(&self) -> Schedule {
        Schedule {
            initial_frames: self.initial_frames,
            frames_added_every: self.frames_added_every,
            epochs_after_last_frame: self.epochs_after_last_frame,
            texture_phase_epochs: self.texture_epochs,
        }
    }
}

#[derive(Args, Clone)]
struct OptimArgs {
    #[command(flatten)]
    weights: WeightArgs,
    #[command(flatten)]
    spec: SpecArgs,
    #[command(flatten)]
    schedule: ScheduleArgs,
    /// Use only the first N frames of the scene.
    #[arg(long)]
    max_frames: Option<usize>,
}

#[derive(Args)]
struct TextureMapArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    optim: OptimArgs,
}

#[derive(Args)]
struct ReconstructArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    optim: OptimArgs,
    /// Drop the energy regularizer.
    #[arg(long)]
    no_reg_energy: bool,
    /// Drop the force regularizer.
    #[arg(long)]
    no_reg_force: bool,
    /// Drop the silhouette term.
    #[arg(long)]
    no_silhouette: bool,
    /// Write a checkpoint every K epochs (0 disables).
    #[arg(long, default_value_t = 50)]
    checkpoint_every: usize,
    /// Continue from a checkpoint instead of starting over.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Recorded in the result; the default path draws no random numbers.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    result: PathBuf,
    /// Directory for the metric CSVs; defaults to the result directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    optim: OptimArgs,
    /// Comma-separated subset of full, no-sil, no-reg-force, no-reg-energy, no-both.
    #[arg(long, value_delimiter = ',', default_value = "full,no-sil,no-reg-force,no-reg-energy,no-both")]
    configs: Vec<String>,
}

fn parse_pair(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected AxB, got '{s}'"))?;
    Ok((a.trim().parse().map_err(|_| format!("bad number '{a}'"))?, b.trim().parse().map_err(|_| format!("bad number '{b}'"))?))
}

fn parse_vec3(s: &str) -> std::result::Result<[f64; 3], String> {
    let v: Vec<f64> = s.split(',').map(|c| c.trim().parse::<f64>().map_err(|_| format!("bad number '{c}'"))).collect::<std::result::Result<_, _>>()?;
    v.try_into().map_err(|_| format!("expected X,Y,Z, got '{s}'"))
}

/// Exit status for each error family.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } => 3,
        Error::Schema { .. } => 4,
        Error::DimensionTooSmall { .. }
        | Error::InvalidMesh(_)
        | Error::DegenerateTriangle(_)
        | Error::InvalidParameter(_)
        | Error::DimensionMismatch(_)
        | Error::Empty(_) => 5,
        Error::Solve(_) | Error::NonFiniteGradient { .. } | Error::NonFinite(_) | Error::Diverged(_) => 6,
        Error::EmptyRoi => 7,
    }
}

const USAGE_EXIT: u8 = 2;

fn error_record(kind: &str, message: &str, code: u8) -> String {
    serde_json::json!({ "error": kind, "message": message, "exit_code": code }).to_string()
}

struct Context {
    output_root: Option<PathBuf>,
    quiet: bool,
}

impl Context {
    fn output(&self, path: &Path) -> PathBuf {
        match &self.output_root {
            Some(root) if path.is_relative() => root.join(path),
            _ => path.to_path_buf(),
        }
    }

    fn progress(&self, message: impl FnOnce() -> String) {
        if !self.quiet {
            println!("{}", message());
        }
    }
}

fn load_scene(path: &Path, max_frames: Option<usize>) -> Result<Scene> {
    let mut scene = read_scene(path)?;
    if let Some(n) = max_frames {
        if n < 2 {
            return Err(Error::InvalidParameter("--max-frames must be at least 2".into()));
        }
        scene.truncate(n);
    }
    Ok(scene)
}

fn gen_scene(ctx: &Context, a: &GenSceneArgs) -> Result<()> {
    let mut c = match &a.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::Io { path: path.clone(), source: e })?;
            toml::from_str::<SceneConfig>(&text)
                .map_err(|e| Error::Schema { path: path.clone(), message: e.message().to_string() })?
        }
        None => SceneConfig::preset(&a.preset)?,
    };
    if let Some((r, k)) = a.mesh {
        (c.rows, c.cols) = (r, k);
    }
    if let Some((w, h)) = a.resolution {
        (c.width, c.height) = (w, h);
    }
    macro_rules! set {
        ($($field:ident = $value:expr),*) => { $(if let Some(v) = $value { c.$field = v; })* };
    }
    set!(
        n_frames = a.frames,
        focal = a.focal,
        camera_distance = a.camera_distance,
        log10_stretch = a.log10_stretch,
        log10_bend = a.log10_bend,
        log10_shear = a.log10_shear,
        points_per_frame = a.points_per_frame,
        seed = a.seed
    );
    if let Some(s) = a.wind_strength {
        c.wind.strength = s;
    }
    if let Some(path) = &a.texture {
        c.texture = TextureSource::Image { path: path.clone() };
    }
    if c.seed > i64::MAX as u64 {
        return Err(Error::InvalidParameter("seed must fit in a signed 64-bit integer".into()));
    }
    let (scene, truth) = generate(&c)?;
    let out = ctx.output(&a.out);
    write_scene(&out, &scene)?;
    write_ground_truth(&out, &truth)?;
    ctx.progress(|| format!("wrote {} frames to {}", scene.n_frames(), out.display()));
    Ok(())
}

fn texture_phase(ctx: &Context, problem: &Problem, spec: &ParamSpec, schedule: &Schedule, weights: &LossWeights) -> Result<(Texture, Vec<clothsft::optimizer::TextureLog>)> {
    let r = run_texture_phase(problem, spec, schedule, weights, |l| {
        if l.epoch % 50 == 0 {
            ctx.progress(|| format!("texture epoch {:4} loss {:.6e}", l.epoch, l.loss));
        }
    })?;
    Ok((r.texture, r.log))
}

fn texture_map(ctx: &Context, a: &TextureMapArgs) -> Result<()> {
    let scene = load_scene(&a.scene, a.optim.max_frames)?;
    let problem = scene.problem()?;
    let spec = a.optim.spec.spec(&scene);
    let (texture, log) = texture_phase(ctx, &problem, &spec, &a.optim.schedule.schedule(), &a.optim.weights.weights())?;
    let out = ctx.output(&a.out);
    fs::create_dir_all(&out).map_err(|e| Error::Io { path: out.clone(), source: e })?;
    let img = clothsft::scene::Pixels::from_unit(texture.width, texture.height, texture.channels, &texture.texels)?;
    clothsft::scene::write_png(&out.join("texture.png"), &img)?;
    clothsft::scene::write_array(
        &out.join("texture.arr"),
        &clothsft::scene::Array::new(vec![texture.height, texture.width, texture.channels], texture.texels.clone())?,
    )?;
    write_texture_log(&out.join("texture_log.csv"), &log)
}

fn log_epoch(ctx: &Context, l: &EpochLog) {
    if l.epoch.is_multiple_of(10) {
        ctx.progress(|| {
            format!(
                "epoch {:4} frames {:3} loss {:.6e} log10 k ({:.3}, {:.3}, {:.3})",
                l.epoch, l.active_frames, l.loss, l.log10_stretch, l.log10_bend, l.log10_shear
            )
        });
    }
}

#[allow(clippy::too_many_arguments)]
fn reconstruct_into(
    ctx: &Context,
    scene: &Scene,
    out: &Path,
    optim: &OptimArgs,
    weights: LossWeights,
    ablation: &str,
    seed: u64,
    checkpoint_every: usize,
    resume: Option<&Path>,
) -> Result<ResultDir> {
    let problem = scene.problem()?;
    let spec = optim.spec.spec(scene);
    let schedule = optim.schedule.schedule();
    let checkpoints = out.join("checkpoints");
    if checkpoint_every > 0 {
        fs::create_dir_all(&checkpoints).map_err(|e| Error::Io { path: checkpoints.clone(), source: e })?;
    }
    let (texture, texture_log, state) = match resume {
        Some(path) => {
            let c = read_checkpoint(path)?;
            (c.texture, Vec::new(), Some(c.state))
        }
        None => {
            let (t, l) = texture_phase(ctx, &problem, &spec, &schedule, &weights)?;
            (t, l, None)
        }
    };
    let on_epoch = |l: &EpochLog, s: &SftState| {
        log_epoch(ctx, l);
        if checkpoint_every > 0 && s.epoch.is_multiple_of(checkpoint_every) {
            write_checkpoint(&checkpoints.join(format!("epoch_{:05}.json", s.epoch)), s, &texture)?;
        }
        Ok(())
    };
    let result: SftResult = match state {
        Some(s) => resume_sft_phase(&problem, &texture, &spec, &schedule, &weights, s, on_epoch)?,
        None => run_sft_phase(&problem, &texture, &spec, &schedule, &weights, on_epoch)?,
    };
    let final_loss = result.log.last().map_or(f64::NAN, |l| l.loss);
    let mut params = result.params.clone();
    let dynamic_forces = std::mem::take(&mut params.dynamic_forces);
    let dir = ResultDir {
        meta: ResultMeta {
            schema_version: SCHEMA_VERSION,
            kind: "result".into(),
            ablation: ablation.into(),
            seed,
            epochs: schedule.total_epochs(problem.n_frames()),
            final_loss,
            params,
            weights,
            spec,
            schedule,
        },
        dynamic_forces,
        trajectory: result.trajectory.iter().map(|s| s.positions.clone()).collect(),
        texture,
        log: result.log,
        texture_log,
    };
    write_result(out, &dir)?;
    ctx.progress(|| format!("final loss {final_loss:e}; wrote {}", out.display()));
    Ok(dir)
}

fn reconstruct(ctx: &Context, a: &ReconstructArgs) -> Result<()> {
    let scene = load_scene(&a.scene, a.optim.max_frames)?;
    let mut weights = a.optim.weights.weights();
    let ablation = match (a.no_reg_energy, a.no_reg_force) {
        (true, true) => Ablation::NoBoth,
        (true, false) => Ablation::NoEnergyReg,
        (false, true) => Ablation::NoForceReg,
        (false, false) => Ablation::Full,
    };
    weights = ablation.weights(&weights);
    let name = if a.no_silhouette {
        weights.silhouette = 0.0;
        if ablation == Ablation::Full { "no-sil".to_string() } else { format!("{}+no-sil", ablation.name()) }
    } else {
        ablation.name().to_string()
    };
    let out = ctx.output(&a.out);
    reconstruct_into(ctx, &scene, &out, &a.optim, weights, &name, a.seed, a.checkpoint_every, a.resume.as_deref())?;
    Ok(())
}

fn metrics_row(m: &SceneMetrics) -> Vec<String> {
    vec![m.cd1.to_string(), m.cd2.to_string(), m.p2s1.to_string(), m.p2s2.to_string(), m.depth.map_or(String::new(), |d| d.to_string())]
}

fn write_rows(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut text = header.join(",");
    text.push('\n');
    for r in rows {
        text.push_str(&r.join(","));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

const METRIC_HEADER: [&str; 5] = ["cd1", "cd2", "p2s1", "p2s2", "depth"];

fn score(scene: &Scene, scene_dir: &Path, trajectory: &[Vec<[f64; 3]>]) -> Result<(Vec<FrameMetrics>, SceneMetrics)> {
    let mut truth = read_ground_truth(scene_dir)?;
    let n = scene.n_frames();
    truth.trajectory.truncate(n);
    truth.points.truncate(n);
    truth.depth.truncate(n);
    let frames = evaluate(scene, &truth, trajectory)?;
    let summary = summarize(&frames)?;
    Ok((frames, summary))
}

fn evaluate_cmd(ctx: &Context, a: &EvaluateArgs) -> Result<()> {
    let result = read_result(&a.result)?;
    let scene = load_scene(&a.scene, Some(result.trajectory.len()))?;
    let (frames, summary) = score(&scene, &a.scene, &result.trajectory)?;
    let out = a.out.as_ref().map_or_else(|| a.result.clone(), |o| ctx.output(o));
    fs::create_dir_all(&out).map_err(|e| Error::Io { path: out.clone(), source: e })?;
    let rows: Vec<Vec<String>> = frames
        .iter()
        .map(|f| {
            let mut r = vec![f.frame.to_string()];
            r.extend(metrics_row(&SceneMetrics { cd1: f.cd1, cd2: f.cd2, p2s1: f.p2s1, p2s2: f.p2s2, depth: f.depth }));
            r
        })
        .collect();
    let mut header = vec!["frame"];
    header.extend(METRIC_HEADER);
    write_rows(&out.join("metrics.csv"), &header, &rows)?;
    write_rows(&out.join("summary.csv"), &METRIC_HEADER, &[metrics_row(&summary)])?;
    ctx.progress(|| format!("{summary:?}"));
    Ok(())
}

fn ablate(ctx: &Context, a: &AblateArgs) -> Result<()> {
    let scene = load_scene(&a.scene, a.optim.max_frames)?;
    let configs = a.configs.iter().map(|c| Ablation::parse(c)).collect::<Result<Vec<_>>>()?;
    let out = ctx.output(&a.out);
    let base = a.optim.weights.weights();
    let has_truth = a.scene.join("ground_truth").is_dir();
    let mut rows = Vec::new();
    for config in configs {
        ctx.progress(|| format!("== {}", config.name()));
        let w = config.weights(&base);
        let r = reconstruct_into(ctx, &scene, &out.join(config.name()), &a.optim, w, config.name(), 0, 0, None)?;
        let mut row = vec![
            config.name().to_string(),
            w.silhouette.to_string(),
            w.energy.to_string(),
            w.force.to_string(),
            r.meta.final_loss.to_string(),
        ];
        if has_truth {
            row.extend(metrics_row(&score(&scene, &a.scene, &r.trajectory)?.1));
        }
        rows.push(row);
    }
    let mut header = vec!["config", "lambda_sil", "lambda_energy", "lambda_force", "final_loss"];
    if has_truth {
        header.extend(METRIC_HEADER);
    }
    write_rows(&out.join("ablation.csv"), &header, &rows)
}

fn run(cli: &Cli) -> Result<()> {
    let ctx = Context { output_root: cli.output_root.clone(), quiet: cli.quiet };
    match &cli.command {
        Command::GenScene(a) => gen_scene(&ctx, a),
        Command::TextureMap(a) => texture_map(&ctx, a),
        Command::Reconstruct(a) => reconstruct(&ctx, a),
        Command::Evaluate(a) => evaluate_cmd(&ctx, a),
        Command::Ablate(a) => ablate(&ctx, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{}", error_record("usage", e.to_string().trim(), USAGE_EXIT));
            return ExitCode::from(USAGE_EXIT);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            eprintln!("{}", error_record(e.kind(), &e.to_string(), code));
            ExitCode::from(code)
        }
    }
}
