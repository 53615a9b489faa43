use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use mvq_core::dynamics::{read_checkpoint, write_checkpoint, FreeParams};
use mvq_core::flow::{write_flow_file, FlowField, FlowSource};
use mvq_core::mollifier::mollifier_report;
use mvq_core::pipeline::{
    classify, export_features, run_multilayer, save_metrics_csv, train_layer, write_features, FrozenLayer, Preset,
    ResetPolicy, RunConfig, VideoSource,
};
use mvq_core::signal::{load_raw_video, synth_translating_texture, write_raw_video};
use mvq_core::stability::{
    characteristic_coeffs_of, coercivity_check, default_reset_base, energy_positive_definite, prop_coef_check,
    quartic_roots,
};

#[derive(Parser)]
#[command(
    name = "mvq",
    version,
    about = "Online feature learning from video under motion invariance"
)]
struct Cli {
    /// Worker threads for the parallel kernels
    #[arg(long, global = true, env = "MVQ_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the first layer of a config on a raw video
    Train(TrainArgs),
    /// Train every layer of a config in sequence
    RunMultilayer(TrainArgs),
    /// Coercivity, characteristic roots and certification of a parameter set
    AnalyzeStability(StabilityArgs),
    /// Mass, tail and delta-convergence table of the mollifier kernels
    MollifierCheck(MollifierArgs),
    /// Write the concatenated softmax features of trained layers
    ExportFeatures(ExportArgs),
    /// Write a translating synthetic texture clip and its true flow
    Synth(SynthArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// MVQ1 raw video
    #[arg(long)]
    video: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct StabilityArgs {
    /// Named preset; explicit parameters override its fields
    #[arg(long)]
    preset: Option<Preset>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    nu: Option<f64>,
    #[arg(long)]
    gamma1: Option<f64>,
    #[arg(long)]
    gamma2: Option<f64>,
    #[arg(long)]
    k: Option<f64>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct MollifierArgs {
    #[arg(long, default_value_t = 1)]
    m: usize,
    #[arg(long, value_delimiter = ',', default_value = "1,0.1,0.01,0.001")]
    sigmas: Vec<f64>,
    #[arg(long, default_value_t = 0.5)]
    delta: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    /// MVQS checkpoints, lowest layer first
    #[arg(long, value_delimiter = ',', required = true)]
    checkpoints: Vec<PathBuf>,
    #[arg(long)]
    video: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// columns per frame
    #[arg(long, default_value_t = 1.0)]
    vx: f64,
    /// rows per frame
    #[arg(long, default_value_t = 0.0)]
    vy: f64,
    #[arg(long, default_value_t = 32)]
    frames: usize,
    #[arg(long, default_value_t = 32)]
    width: usize,
    #[arg(long, default_value_t = 32)]
    height: usize,
    #[arg(long, default_value_t = 1)]
    channels: usize,
    #[arg(long)]
    out: PathBuf,
    /// also write the ground-truth flow (pixels per second at 25 fps)
    #[arg(long)]
    flow_out: Option<PathBuf>,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("MVQ_THREADS must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    match cli.command {
        Command::Train(a) => train(a, false),
        Command::RunMultilayer(a) => train(a, true),
        Command::AnalyzeStability(a) => analyze(a),
        Command::MollifierCheck(a) => mollifier(a),
        Command::ExportFeatures(a) => export(a),
        Command::Synth(a) => synth(a),
    }
}

fn load_source(cfg: &RunConfig, video: &Path) -> Result<VideoSource> {
    let frames = load_raw_video(video).with_context(|| format!("reading {}", video.display()))?;
    Ok(VideoSource::from_config(cfg, frames, cfg.layers[0].dt)?)
}

fn train(a: TrainArgs, all_layers: bool) -> Result<()> {
    let mut cfg = RunConfig::load(&a.config).with_context(|| format!("reading {}", a.config.display()))?;
    // flow files are resolved against the config's directory
    if let FlowSource::File(p) = &cfg.flow {
        if p.is_relative() {
            let dir = a.config.parent().unwrap_or(Path::new("."));
            cfg.flow = FlowSource::File(dir.join(p));
        }
    }
    if !all_layers {
        cfg.layers.truncate(1);
    }
    let source = load_source(&cfg, &a.video)?;
    fs::create_dir_all(&a.out_dir)?;

    let mut summary = Vec::new();
    if all_layers || cfg.lambda_m_grid.is_some() {
        for (i, out) in run_multilayer(&cfg, &source)?.iter().enumerate() {
            let l = i + 1;
            save_metrics_csv(a.out_dir.join(format!("metrics_layer{l}.csv")), &out.run.metrics)?;
            write_checkpoint(a.out_dir.join(format!("layer{l}.mvqs")), out.run.shape, &out.run.state)?;
            summary.push(json!({
                "layer": l,
                "start_frame": out.start,
                "lambda_m": out.config.lambda_m,
                "batch_mi": out.batch_mi,
                "resets": out.run.resets,
                "sweep": out.sweep,
            }));
        }
    } else {
        let layer = &cfg.layers[0];
        let run = train_layer(
            layer,
            ResetPolicy::of(&cfg),
            &[],
            &source,
            0,
            layer.activation_frames,
            None,
        )?;
        save_metrics_csv(a.out_dir.join("metrics_layer1.csv"), &run.metrics)?;
        write_checkpoint(a.out_dir.join("layer1.mvqs"), run.shape, &run.state)?;
        let mi = mvq_core::pipeline::batch_mi(&[], &run.frozen(), &source)?;
        summary.push(json!({
            "layer": 1,
            "start_frame": 0,
            "lambda_m": layer.lambda_m,
            "batch_mi": mi,
            "resets": run.resets,
        }));
    }
    let text = serde_json::to_string_pretty(&json!({ "layers": summary }))?;
    fs::write(a.out_dir.join("summary.json"), &text)?;
    println!("{text}");
    Ok(())
}

fn analyze(a: StabilityArgs) -> Result<()> {
    let base = a.preset.unwrap_or_default().free_params();
    let p = FreeParams {
        theta: a.theta.unwrap_or(base.theta),
        mu: a.mu.unwrap_or(base.mu),
        nu: a.nu.unwrap_or(base.nu),
        gamma1: a.gamma1.unwrap_or(base.gamma1),
        gamma2: a.gamma2.unwrap_or(base.gamma2),
        k: a.k.unwrap_or(base.k),
    };
    let coeffs = characteristic_coeffs_of(&p)?;
    let roots = quartic_roots(&coeffs);
    let prop = prop_coef_check(&p)?;
    let report = json!({
        "params": p,
        "coercive": coercivity_check(p.mu, p.nu, p.gamma1, p.gamma2, p.k),
        "energy_positive_definite": energy_positive_definite(&p),
        "coefficients": coeffs,
        "roots": roots,
        "classification": classify(&p).map(|c| c.name()),
        "certified": prop.certified,
        "violated": prop.violated,
        "reset_base": default_reset_base(),
    });
    if a.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        println!("params      {p:?}");
        println!("coercive    {}", report["coercive"]);
        println!("roots");
        for r in roots.roots {
            println!("  {:+.6e} {:+.6e}i", r.re, r.im);
        }
        println!("class       {}", classify(&p).map(|c| c.name()).unwrap_or("undefined"));
        println!("certified   {}", prop.certified);
        for v in &prop.violated {
            println!("  violated: {v}");
        }
    }
    Ok(())
}

fn mollifier(a: MollifierArgs) -> Result<()> {
    let rows = mollifier_report(a.m, &a.sigmas, a.delta)?;
    let mut text = String::from("order_m,sigma,mass,tail,gap,sup\n");
    for r in &rows {
        text.push_str(&format!(
            "{},{:e},{:e},{:e},{:e},{:e}\n",
            r.order_m, r.sigma, r.mass, r.tail, r.gap, r.sup
        ));
    }
    match a.out {
        Some(path) => fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn export(a: ExportArgs) -> Result<()> {
    let stack = a
        .checkpoints
        .iter()
        .map(|p| {
            let (shape, state) = read_checkpoint(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(FrozenLayer { shape, q: state.q })
        })
        .collect::<Result<Vec<_>>>()?;
    let frames = load_raw_video(&a.video).with_context(|| format!("reading {}", a.video.display()))?;
    let volume = export_features(&stack, &frames)?;
    write_features(&a.out, &volume)?;
    println!(
        "{} frames, {}x{}, {} features per pixel",
        volume.frames, volume.width, volume.height, volume.features
    );
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    if a.frames == 0 || a.width == 0 || a.height == 0 || a.channels == 0 {
        bail!("frames, width, height and channels must be positive");
    }
    let frames = synth_translating_texture(a.seed, (a.vx, a.vy), a.frames, a.width, a.height, a.channels);
    write_raw_video(&a.out, &frames)?;
    if let Some(path) = a.flow_out {
        let fps = 1.0 / mvq_core::dynamics::DEFAULT_DT;
        let flows = vec![FlowField::uniform(a.width, a.height, a.vx * fps, a.vy * fps); a.frames];
        write_flow_file(path, &flows)?;
    }
    Ok(())
}
