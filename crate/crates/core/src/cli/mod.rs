//! The `raydistill` command line.
//!
//! Every command merges its settings as flags > `--config` file > defaults and
//! echoes the merged result to `<out>/config.json`. Exit codes: `0` success,
//! `1` usage, `2` format or I/O, `3` numeric failure.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradcheck::{ensure_passed, probes, run_check_with, CheckReport, InstanceConfig, ScaledGradient, Tolerance};
use crate::harness::{
    comparison_csv, evaluate_resilience, metrics_csv, resilience_csv, response_loss_for, run_ablation, train,
    LossSettings, StudentModel, TrainConfig,
};
use crate::io::write_atomic;
use crate::losses::{attention_map, rcd_loss, ray_kl, rwd_loss, src_loss, weight_map, LossWeights, RcdConfig, RwdConfig};
use crate::rng::derive_seed;
use crate::sampling::{build_sample_set, SamplerConfig};
use crate::simulator::{
    generate_scene, generate_scenes, render_scene, scene_seed, CameraModel, CorruptionSpec, SceneGen, SceneRender,
    SceneSpec,
};
use crate::tensor::rtf::{load_tensor, save_tensor};
use crate::tensor::{FeatureMap, ScalarGrid};

#[derive(Debug, Parser)]
#[command(name = "raydistill", version, about = "Ray-based cross-modal distillation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate and render one synthetic scene.
    GenScene(GenSceneArgs),
    /// Evaluate all losses on given tensors.
    Losses(LossesArgs),
    /// Verify analytic loss gradients against central finite differences.
    GradCheck(GradCheckArgs),
    /// Train the toy student on generated or given scenes.
    Train(TrainArgs),
    /// Evaluate a trained student under corruptions.
    Eval(EvalArgs),
}

#[derive(Debug, Clone, Default, Args)]
struct Shared {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_ray: Option<usize>,
    /// Negative-sampling Gaussian width.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    n_neg: Option<usize>,
    /// Pooling window side.
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    s_bg: Option<f64>,
    #[arg(long)]
    xi: Option<f64>,
    #[arg(long)]
    normalize: Option<bool>,
    #[arg(long)]
    detach_weights: Option<bool>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON file with a (partial) run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
struct SceneArgs {
    #[arg(long)]
    h: Option<usize>,
    #[arg(long)]
    w: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    objects: Option<usize>,
    #[arg(long)]
    depth_bias: Option<f64>,
    #[arg(long)]
    smear_sigma: Option<f64>,
    #[arg(long)]
    true_cue: Option<f64>,
    #[arg(long)]
    noise_std: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
struct WeightArgs {
    #[arg(long)]
    w_rcd: Option<f64>,
    #[arg(long)]
    w_rwd: Option<f64>,
    #[arg(long)]
    w_src: Option<f64>,
    #[arg(long)]
    w_res: Option<f64>,
}

#[derive(Debug, Args)]
struct GenSceneArgs {
    #[command(flatten)]
    shared: Shared,
    #[command(flatten)]
    scene: SceneArgs,
    /// Corruption as `kind:severity`, applied in order; repeatable.
    #[arg(long = "corrupt")]
    corrupt: Vec<String>,
}

#[derive(Debug, Args)]
struct LossesArgs {
    #[command(flatten)]
    shared: Shared,
    #[command(flatten)]
    weights: WeightArgs,
    /// SceneSpec JSON giving the grid, origin, rays and objects.
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    teacher: PathBuf,
    #[arg(long)]
    student: PathBuf,
    /// Student occupancy logits `[1, H, W]`; zero logits when omitted.
    #[arg(long)]
    occupancy: Option<PathBuf>,
    /// Also write gradients and the attention / weight maps.
    #[arg(long)]
    dump: bool,
}

#[derive(Debug, Args)]
struct GradCheckArgs {
    #[command(flatten)]
    shared: Shared,
    /// Loss to check; repeatable. Defaults to every registered probe.
    #[arg(long = "loss")]
    loss: Vec<String>,
    #[arg(long, default_value_t = 10)]
    trials: usize,
    #[arg(long, hide = true)]
    perturb_gradient: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
struct TrainFlags {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    optimizer: Option<String>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    shared: Shared,
    #[command(flatten)]
    scene: SceneArgs,
    #[command(flatten)]
    weights: WeightArgs,
    #[command(flatten)]
    train: TrainFlags,
    /// Number of generated scenes.
    #[arg(long)]
    scenes: Option<usize>,
    /// SceneSpec JSON files to train on instead of generated scenes; repeatable.
    #[arg(long = "scene")]
    scene_files: Vec<PathBuf>,
    /// Run the detection-only baseline and the distilled model with the same seed.
    #[arg(long)]
    ablation: bool,
    /// Severity of the corruptions used for the resilience report.
    #[arg(long)]
    severity: Option<f64>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    shared: Shared,
    #[command(flatten)]
    scene: SceneArgs,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    scenes: Option<usize>,
    #[arg(long = "scene")]
    scene_files: Vec<PathBuf>,
    /// Corruption severity; repeatable.
    #[arg(long = "severity")]
    severities: Vec<f64>,
    /// Corruption kind; repeatable. Defaults to every registered kind.
    #[arg(long = "kind")]
    kinds: Vec<String>,
}

/// Merged configuration of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub scene: SceneGen,
    pub camera: CameraModel,
    pub sampler: SamplerConfig,
    pub rcd: RcdConfig,
    pub rwd: RwdConfig,
    pub train: TrainConfig,
    pub severity: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            out: None,
            scene: SceneGen::default(),
            camera: CameraModel::default(),
            sampler: SamplerConfig::default(),
            rcd: RcdConfig::default(),
            rwd: RwdConfig::default(),
            train: TrainConfig::default(),
            severity: 0.5,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.camera.validate()?;
        self.sampler.validate()?;
        self.rcd.validate()?;
        self.rwd.validate()?;
        self.train.validate()?;
        if !(0.0..=1.0).contains(&self.severity) {
            return Err(Error::argument("severity must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn settings(&self) -> LossSettings {
        LossSettings {
            sampler: self.sampler,
            rcd: self.rcd,
            rwd: self.rwd,
        }
    }

    fn seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::argument("--seed is required (or `seed` in the config file)"))
    }

    fn out(&self) -> Result<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| Error::argument("--out is required (or `out` in the config file)"))
    }

    /// Copies the seed into the seeded sub-configurations so the echo is self-contained.
    fn pin_seed(&mut self) {
        if let Some(seed) = self.seed {
            self.sampler.seed = seed;
            self.train.seed = seed;
        }
    }

    fn echo(&self) -> Result<()> {
        let out = self.out()?;
        let json = serde_json::to_string_pretty(self).expect("config serialises");
        write_atomic(&out.join("config.json"), json.as_bytes())
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn merge_shared(shared: &Shared) -> Result<RunConfig> {
    let mut cfg = match &shared.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if shared.seed.is_some() {
        cfg.seed = shared.seed;
    }
    if shared.out.is_some() {
        cfg.out.clone_from(&shared.out);
    }
    set(&mut cfg.scene.n_ray, shared.n_ray);
    set(&mut cfg.sampler.sigma, shared.sigma);
    set(&mut cfg.sampler.n_neg, shared.n_neg);
    set(&mut cfg.sampler.m, shared.m);
    set(&mut cfg.rcd.tau, shared.tau);
    set(&mut cfg.rcd.xi, shared.xi);
    set(&mut cfg.rcd.normalize, shared.normalize);
    set(&mut cfg.rwd.s_bg, shared.s_bg);
    set(&mut cfg.rwd.detach_weights, shared.detach_weights);
    Ok(cfg)
}

fn merge_scene(cfg: &mut RunConfig, s: &SceneArgs) {
    set(&mut cfg.scene.h, s.h);
    set(&mut cfg.scene.w, s.w);
    set(&mut cfg.scene.d, s.d);
    set(&mut cfg.scene.objects, s.objects);
    set(&mut cfg.camera.depth_bias, s.depth_bias);
    set(&mut cfg.camera.smear_sigma, s.smear_sigma);
    set(&mut cfg.camera.true_cue, s.true_cue);
    set(&mut cfg.camera.noise_std, s.noise_std);
}

fn merge_weights(lw: &mut LossWeights, w: &WeightArgs) {
    set(&mut lw.w_rcd, w.w_rcd);
    set(&mut lw.w_rwd, w.w_rwd);
    set(&mut lw.w_src, w.w_src);
    set(&mut lw.w_res, w.w_res);
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Argument(_) => 1,
        Error::Format { .. } | Error::Io { .. } => 2,
        Error::Numeric(_) => 3,
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let result = match cli.command {
        Command::GenScene(a) => cmd_gen_scene(a),
        Command::Losses(a) => cmd_losses(a),
        Command::GradCheck(a) => cmd_grad_check(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn parse_corruption(text: &str, seed: u64) -> Result<CorruptionSpec> {
    let (kind, severity) = text
        .split_once(':')
        .ok_or_else(|| Error::argument(format!("corruption `{text}` is not `kind:severity`")))?;
    let severity: f64 = severity
        .parse()
        .map_err(|_| Error::argument(format!("corruption `{text}`: bad severity")))?;
    let spec = CorruptionSpec::new(kind, severity, seed);
    spec.validate()?;
    Ok(spec)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value).expect("value serialises");
    write_atomic(path, json.as_bytes())
}

fn truth_csv(truth: &[Option<f64>]) -> String {
    let mut out = String::from("ray,depth\n");
    for (ray, t) in truth.iter().enumerate() {
        match t {
            Some(t) => {
                let _ = writeln!(out, "{ray},{t:.8e}");
            }
            None => {
                let _ = writeln!(out, "{ray},");
            }
        }
    }
    out
}

fn cmd_gen_scene(a: GenSceneArgs) -> Result<()> {
    let mut cfg = merge_shared(&a.shared)?;
    merge_scene(&mut cfg, &a.scene);
    let out = cfg.out()?.to_path_buf();
    let seed = cfg.seed()?;
    cfg.pin_seed();
    cfg.validate()?;
    let g = cfg.scene;
    let mut spec = generate_scene(g.h, g.w, g.d, g.n_ray, g.objects, seed)?;
    spec.corruptions = a
        .corrupt
        .iter()
        .enumerate()
        .map(|(k, c)| parse_corruption(c, derive_seed(seed, &[0xc0, k as u64])))
        .collect::<Result<_>>()?;
    let render = render_scene(&spec, &cfg.camera)?;
    write_json(&out.join("scene.json"), &spec)?;
    save_tensor(&render.teacher, &out.join("teacher.rtf"))?;
    save_tensor(&render.camera_clean, &out.join("camera_clean.rtf"))?;
    save_tensor(&render.camera_corrupt, &out.join("camera_corrupt.rtf"))?;
    write_atomic(&out.join("truth.csv"), truth_csv(&render.truth).as_bytes())?;
    cfg.echo()?;
    println!(
        "scene {}x{}x{} with {} objects written to {}",
        g.d,
        g.h,
        g.w,
        spec.objects.len(),
        out.display()
    );
    Ok(())
}

fn load_spec(path: &Path) -> Result<SceneSpec> {
    let text = fs::read(path).map_err(|e| Error::io(path, e))?;
    let spec: SceneSpec = serde_json::from_slice(&text).map_err(|e| Error::format(path, e.to_string()))?;
    spec.validate().map_err(|e| Error::format(path, e.to_string()))?;
    Ok(spec)
}

fn load_checked(path: &Path, spec: &SceneSpec, channels: Option<usize>) -> Result<FeatureMap> {
    let f = load_tensor(path)?;
    if f.height() != spec.h || f.width() != spec.w || channels.is_some_and(|d| d != f.channels()) {
        return Err(Error::format(
            path,
            format!(
                "shape {:?} does not match the scene grid {}x{}",
                [f.channels(), f.height(), f.width()],
                spec.h,
                spec.w
            ),
        ));
    }
    Ok(f)
}

/// Values written by the `losses` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub rcd: f64,
    pub rwd: f64,
    pub src: f64,
    pub res: f64,
    pub total: f64,
    pub active_rays: usize,
}

fn cmd_losses(a: LossesArgs) -> Result<()> {
    let mut cfg = merge_shared(&a.shared)?;
    merge_weights(&mut cfg.train.loss_weights, &a.weights);
    let seed = cfg.seed()?;
    cfg.pin_seed();
    cfg.validate()?;
    let mut spec = load_spec(&a.scene)?;
    if a.shared.n_ray.is_some() {
        spec.n_ray = cfg.scene.n_ray;
    }
    let teacher = load_checked(&a.teacher, &spec, None)?;
    let student = load_checked(&a.student, &spec, Some(teacher.channels()))?;
    let occupancy = match &a.occupancy {
        Some(path) => ScalarGrid::from_feature_map(&load_checked(path, &spec, Some(1))?)
            .map_err(|e| Error::format(path, e.to_string()))?,
        None => ScalarGrid::zeros(spec.h, spec.w),
    };
    let p = spec.partition()?;
    let fg = spec.mask()?;
    let sampler = SamplerConfig { seed, ..cfg.sampler };
    let set = build_sample_set(&student, &teacher, &p, &fg, &sampler)?;
    let rcd = rcd_loss(&student, &teacher, &set, &cfg.rcd)?;
    let rwd = rwd_loss(&student, &teacher, &p, &fg, &cfg.rwd)?;
    let src = src_loss(&occupancy, &fg)?;
    let res = response_loss_for(&fg, &occupancy)?;
    let lw = cfg.train.loss_weights;
    let report = LossReport {
        rcd: rcd.result.value,
        rwd: rwd.value,
        src: src.value,
        res: res.value,
        total: lw.w_rcd * rcd.result.value + lw.w_rwd * rwd.value + lw.w_src * src.value + lw.w_res * res.value,
        active_rays: rcd.active_rays,
    };
    for value in [report.rcd, report.rwd, report.src, report.res] {
        if !value.is_finite() {
            return Err(Error::Numeric("non-finite loss value".into()));
        }
    }
    println!("{}", serde_json::to_string(&report).expect("report serialises"));
    if let Some(out) = &cfg.out {
        write_json(&out.join("losses.json"), &report)?;
        if a.dump {
            save_tensor(&rcd.result.grad, &out.join("grad_rcd.rtf"))?;
            save_tensor(&rwd.grad, &out.join("grad_rwd.rtf"))?;
            save_tensor(&src.grad, &out.join("grad_src.rtf"))?;
            save_tensor(&res.grads[0], &out.join("grad_res.rtf"))?;
            let sc = attention_map(&student);
            let sl = attention_map(&teacher);
            let omega = weight_map(&ray_kl(&sc, &sl, &p, cfg.rwd.eps)?, &p, &fg, &cfg.rwd)?;
            save_tensor(&sc.to_feature_map(), &out.join("attention_student.rtf"))?;
            save_tensor(&sl.to_feature_map(), &out.join("attention_teacher.rtf"))?;
            save_tensor(&omega.grid.to_feature_map(), &out.join("weights.rtf"))?;
        }
        cfg.echo()?;
    }
    Ok(())
}

fn cmd_grad_check(a: GradCheckArgs) -> Result<()> {
    let mut cfg = merge_shared(&a.shared)?;
    let seed = cfg.seed()?;
    cfg.pin_seed();
    cfg.validate()?;
    if a.trials == 0 {
        return Err(Error::argument("--trials must be at least 1"));
    }
    let names: Vec<String> = if a.loss.is_empty() {
        probes().names().map(String::from).collect()
    } else {
        a.loss.clone()
    };
    let instance = InstanceConfig {
        n_ray: a.shared.n_ray.unwrap_or(InstanceConfig::default().n_ray),
        sampler: cfg.sampler,
        rcd: cfg.rcd,
        rwd: cfg.rwd,
        ..InstanceConfig::default()
    };
    let tol = Tolerance::default();
    let mut reports: Vec<CheckReport> = Vec::new();
    for name in &names {
        let report = run_check_with(name, a.trials, seed, &instance, &tol, |p| match a.perturb_gradient {
            Some(factor) => Box::new(ScaledGradient { inner: p, factor }),
            None => p,
        })?;
        let c = &report.comparison;
        println!(
            "{:<9} trials={} checked={} skipped={} failures={} max_rel={:.3e} max_fail_abs={:.2e} noise_floor={:.2e} {}",
            report.loss,
            report.trials,
            c.checked,
            c.skipped,
            c.failures,
            c.max_rel,
            c.max_fail_abs,
            c.noise_floor,
            if c.passed() { "PASS" } else { "FAIL" }
        );
        reports.push(report);
    }
    if cfg.out.is_some() {
        write_json(&cfg.out()?.join("gradcheck.json"), &reports)?;
        cfg.echo()?;
    }
    ensure_passed(&reports)
}

fn scene_set(cfg: &RunConfig, files: &[PathBuf], seed: u64) -> Result<Vec<SceneRender>> {
    if files.is_empty() {
        return generate_scenes(&cfg.scene, &cfg.camera, seed);
    }
    files
        .iter()
        .enumerate()
        .map(|(k, path)| {
            let mut spec = load_spec(path)?;
            spec.seed.get_or_insert(scene_seed(seed, k));
            render_scene(&spec, &cfg.camera)
        })
        .collect()
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let mut cfg = merge_shared(&a.shared)?;
    merge_scene(&mut cfg, &a.scene);
    merge_weights(&mut cfg.train.loss_weights, &a.weights);
    set(&mut cfg.train.epochs, a.train.epochs);
    set(&mut cfg.train.lr, a.train.lr);
    set(&mut cfg.train.optimizer, a.train.optimizer.clone());
    set(&mut cfg.scene.count, a.scenes);
    set(&mut cfg.severity, a.severity);
    let out = cfg.out()?.to_path_buf();
    let seed = cfg.seed()?;
    cfg.pin_seed();
    cfg.validate()?;
    let scenes = scene_set(&cfg, &a.scene_files, seed)?;
    let corruptions = crate::harness::standard_corruptions(cfg.severity, derive_seed(seed, &[0xe7a1]));
    let settings = cfg.settings();
    if a.ablation {
        let ab = run_ablation(&scenes, &cfg.train, &settings, &corruptions)?;
        write_atomic(&out.join("baseline_metrics.csv"), metrics_csv(&ab.baseline.rows).as_bytes())?;
        write_atomic(&out.join("distilled_metrics.csv"), metrics_csv(&ab.distilled.rows).as_bytes())?;
        write_atomic(&out.join("comparison.csv"), comparison_csv(&ab).as_bytes())?;
        write_atomic(
            &out.join("baseline_resilience.csv"),
            resilience_csv(&ab.baseline_resilience).as_bytes(),
        )?;
        write_atomic(
            &out.join("distilled_resilience.csv"),
            resilience_csv(&ab.distilled_resilience).as_bytes(),
        )?;
        write_json(&out.join("baseline_model.json"), &ab.baseline.model)?;
        write_json(&out.join("distilled_model.json"), &ab.distilled.model)?;
        let (b, d) = ab.final_depth_mae();
        println!(
            "final depth_mae baseline {b:.4} distilled {d:.4} ({:+.1}%); resilience baseline {:.4} distilled {:.4}",
            100.0 * ab.relative_change(),
            ab.baseline_resilience.aggregate,
            ab.distilled_resilience.aggregate
        );
    } else {
        let outcome = train(&scenes, &cfg.train, &settings)?;
        let report = evaluate_resilience(&outcome.model, &scenes, &corruptions)?;
        write_atomic(&out.join("metrics.csv"), metrics_csv(&outcome.rows).as_bytes())?;
        write_atomic(&out.join("resilience.csv"), resilience_csv(&report).as_bytes())?;
        write_json(&out.join("model.json"), &outcome.model)?;
        let last = outcome.rows.last().expect("at least one epoch");
        println!(
            "epoch {} total {:.6} depth_mae {:.4} resilience {:.4}",
            last.epoch, last.total, last.depth_mae, report.aggregate
        );
    }
    cfg.echo()
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let mut cfg = merge_shared(&a.shared)?;
    merge_scene(&mut cfg, &a.scene);
    set(&mut cfg.scene.count, a.scenes);
    let out = cfg.out()?.to_path_buf();
    let seed = cfg.seed()?;
    cfg.pin_seed();
    cfg.validate()?;
    let text = fs::read(&a.model).map_err(|e| Error::io(&a.model, e))?;
    let model: StudentModel =
        serde_json::from_slice(&text).map_err(|e| Error::format(&a.model, e.to_string()))?;
    let scenes = scene_set(&cfg, &a.scene_files, seed)?;
    let severities = if a.severities.is_empty() {
        vec![cfg.severity]
    } else {
        a.severities.clone()
    };
    let kinds: Vec<String> = if a.kinds.is_empty() {
        crate::simulator::corruptions().names().map(String::from).collect()
    } else {
        a.kinds.clone()
    };
    let corruption_seed = derive_seed(seed, &[0xe7a1]);
    let mut specs = Vec::new();
    for kind in &kinds {
        for &severity in &severities {
            let spec = CorruptionSpec::new(kind.clone(), severity, corruption_seed);
            spec.validate()?;
            specs.push(spec);
        }
    }
    let report = evaluate_resilience(&model, &scenes, &specs)?;
    write_atomic(&out.join("resilience.csv"), resilience_csv(&report).as_bytes())?;
    println!(
        "clean depth_mae {:.4}, resilience aggregate {:.4}",
        report.clean_depth_mae, report.aggregate
    );
    cfg.echo()
}
