mod analyze;
mod render;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use colorsail::alpha::{fit_rig, fit_rig_with_masks, select_n_alpha, AlphaMasks, RigConfig, RigError, RigFit, RigLoss};
use colorsail::colorimetry::{patchmax_histogram, ColorHistogram, DEFAULT_BINS, DEFAULT_PATCH};
use colorsail::fit::{sweep_subdivision, FitConfig, FitError, FitProblem};
use colorsail::metrics::{combined_loss, r_percent, FitLoss, DEFAULT_DELTA};
use colorsail::raster::{load_gray8, Raster};
use colorsail::rig::{build_mapping, load_rig, parse_edits, recolor, save_rig, RigModelError};
use colorsail::sail::{decode, ColorSail, Rgb};
use serde::{Deserialize, Serialize};

const DEFAULT_SEED: u64 = 0x5A11;

#[derive(Parser)]
#[command(name = "colorsail", version, about = "Fit, rig and recolor images with color sails")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one sail to an image (PNG) or a histogram (JSON).
    Fit(FitArgs),
    /// Decompose an image into alpha masks and sails and write a rig bundle.
    Rig(RigArgs),
    /// Apply an edits file to a rig bundle and write the recolored image.
    Recolor(RecolorArgs),
    /// Draw a sail as a subdivided equilateral triangle.
    Render(RenderArgs),
    /// Colorfulness and patch-entropy statistics for a directory of PNGs.
    Analyze(AnalyzeArgs),
    /// Evaluate the losses of a given sail on an image.
    Metrics(MetricsArgs),
}

#[derive(Args)]
struct FitArgs {
    input: PathBuf,
    /// A level such as `5`, or an inclusive range such as `2..10` to sweep.
    #[arg(long, default_value = "5")]
    subdivision: String,
    #[arg(long, default_value_t = colorsail::metrics::DEFAULT_LAMBDA_KL)]
    lambda_kl: f64,
    #[arg(long, default_value_t = 5)]
    restarts: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Penalty per subdivision level when sweeping.
    #[arg(long, default_value_t = 0.0)]
    complexity_weight: f64,
    /// Write the fitted sail here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct RigArgs {
    input: PathBuf,
    /// Bundle directory.
    #[arg(long)]
    out: PathBuf,
    /// Fixed number of masks (skips selection).
    #[arg(long)]
    n_alpha: Option<usize>,
    #[arg(long, value_delimiter = ',', default_value = "2,3,4,5")]
    candidates: Vec<usize>,
    #[arg(long, default_value_t = colorsail::alpha::DEFAULT_PENALTY)]
    penalty: f64,
    #[arg(long, default_value_t = 6)]
    subdivision: u32,
    /// Alternating optimization epochs per candidate.
    #[arg(long, default_value_t = RigConfig::default().epochs)]
    epochs: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Directory of `alpha_<i>.png` masks; sails are fitted to them directly.
    #[arg(long)]
    alphas: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct RecolorArgs {
    bundle: PathBuf,
    edits: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RenderArgs {
    sail: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 512)]
    size: u32,
}

#[derive(Args)]
struct AnalyzeArgs {
    dir: PathBuf,
    /// CSV destination; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 16)]
    patches: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
}

#[derive(Args)]
struct MetricsArgs {
    image: PathBuf,
    sail: PathBuf,
    #[arg(long, default_value_t = colorsail::metrics::DEFAULT_LAMBDA_KL)]
    lambda_kl: f64,
    #[arg(long)]
    json: bool,
}

enum CliError {
    Input(String),
    Numerical(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Input(m) | CliError::Numerical(m) => m,
        }
    }
}

impl From<FitError> for CliError {
    fn from(e: FitError) -> Self {
        match e {
            FitError::NonFinite => CliError::Numerical(e.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<RigError> for CliError {
    fn from(e: RigError) -> Self {
        match e {
            RigError::NonFinite | RigError::Fit(FitError::NonFinite) => CliError::Numerical(e.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<RigModelError> for CliError {
    fn from(e: RigModelError) -> Self {
        CliError::Input(e.to_string())
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn input_err(e: impl std::fmt::Display) -> CliError {
    CliError::Input(e.to_string())
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> CliResult {
    fs::write(path, bytes).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

/// Fails before any work when the output location cannot exist.
fn check_parent(path: &Path) -> CliResult {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() && !p.is_dir() => {
            Err(CliError::Input(format!("output directory {} does not exist", p.display())))
        }
        _ => Ok(()),
    }
}

fn load_image(path: &Path) -> CliResult<Raster> {
    Raster::load_png(path).map_err(input_err)
}

fn load_sail(path: &Path) -> CliResult<ColorSail> {
    serde_json::from_str(&read_text(path)?).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn pretty(value: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

fn check_finite(loss: &FitLoss) -> CliResult {
    if [loss.e_l2, loss.e_kl, loss.combined].iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(CliError::Numerical("fit produced a non-finite loss".into()))
    }
}

/// `5` or `2..10` (inclusive).
fn parse_levels(text: &str) -> CliResult<Vec<u32>> {
    let bad = || CliError::Input(format!("invalid --subdivision `{text}`"));
    let levels = match text.split_once("..") {
        Some((a, b)) => {
            let b = b.strip_prefix('=').unwrap_or(b);
            let (a, b): (u32, u32) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
            (a..=b).collect::<Vec<_>>()
        }
        None => vec![text.trim().parse().map_err(|_| bad())?],
    };
    if levels.is_empty() || levels.iter().any(|&s| s < 2) {
        return Err(bad());
    }
    Ok(levels)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct HistogramFile {
    n: usize,
    masses: Vec<f64>,
}

/// Targets, KL reference and (for images) pixel votes.
fn fit_input(path: &Path) -> CliResult<(FitProblem, Option<Vec<(Rgb, f64)>>)> {
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_json {
        let file: HistogramFile = serde_json::from_str(&read_text(path)?).map_err(input_err)?;
        if file.n == 0 || file.masses.len() != file.n.pow(3) {
            return Err(CliError::Input(format!("histogram needs n^3 = {} masses", file.n.pow(3))));
        }
        let hist = ColorHistogram::from_masses(file.n, file.masses).map_err(input_err)?;
        Ok((FitProblem::from_histogram(&hist)?, None))
    } else {
        let image = load_image(path)?;
        let votes: Vec<(Rgb, f64)> = image.pixels().iter().map(|&c| (c, 1.0)).collect();
        Ok((FitProblem::from_image(&image, DEFAULT_BINS)?, Some(votes)))
    }
}

#[derive(Serialize, Deserialize)]
struct LevelReport {
    subdivision: u32,
    loss: FitLoss,
}

#[derive(Serialize, Deserialize)]
struct FitReport {
    sail: ColorSail,
    loss: FitLoss,
    /// Share of image pixels within ΔE 10 of a sail color (images only).
    pixel_r_percent: Option<f64>,
    selected_subdivision: u32,
    levels: Vec<LevelReport>,
    config_digest: String,
}

fn cmd_fit(args: FitArgs) -> CliResult {
    let levels = parse_levels(&args.subdivision)?;
    let config = FitConfig {
        subdivision: levels[0],
        sweep: levels.clone(),
        complexity_weight: args.complexity_weight,
        lambda_kl: args.lambda_kl,
        restarts: args.restarts,
        seed: args.seed,
        ..FitConfig::default()
    };
    config.validate()?;
    if let Some(out) = &args.out {
        check_parent(out)?;
    }
    let (problem, votes) = fit_input(&args.input)?;
    let sweep = sweep_subdivision(&problem, &config)?;
    let best = sweep.selected_fit();
    check_finite(&best.loss)?;
    let pixel_r = match &votes {
        Some(v) => Some(r_percent(v, &decode(&best.sail, true, false).colors, DEFAULT_DELTA).map_err(input_err)?),
        None => None,
    };
    let report = FitReport {
        sail: best.sail,
        loss: best.loss,
        pixel_r_percent: pixel_r,
        selected_subdivision: sweep.selected,
        levels: sweep.fits.iter().map(|(s, f)| LevelReport { subdivision: *s, loss: f.loss }).collect(),
        config_digest: config.digest(),
    };
    if let Some(out) = &args.out {
        write_bytes(out, pretty(&best.sail).as_bytes())?;
    }
    if args.json {
        print!("{}", pretty(&report));
    } else {
        let s = &report.sail;
        let v = s.vertices();
        println!("vertices  {:?} {:?} {:?}", v[0], v[1], v[2]);
        println!("focus     {:?}", s.focus());
        println!("wind      {}", s.wind());
        println!("subdiv    {}", s.subdivision());
        if report.levels.len() > 1 {
            println!("s     e_l2        e_kl        r_percent");
            for l in &report.levels {
                println!("{:<5} {:<11.6} {:<11.6} {:.4}", l.subdivision, l.loss.e_l2, l.loss.e_kl, l.loss.r_percent);
            }
        }
        println!("e_l2      {:.6}", report.loss.e_l2);
        println!("e_kl      {:.6}", report.loss.e_kl);
        println!("combined  {:.6}", report.loss.combined);
        match report.pixel_r_percent {
            Some(r) => println!("R%        {r:.4}"),
            None => println!("R%        {:.4}", report.loss.r_percent),
        }
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct CandidateReport {
    n_alpha: usize,
    loss: f64,
    score: f64,
}

#[derive(Serialize, Deserialize)]
struct RigReport {
    n_alpha: usize,
    loss: RigLoss,
    candidates: Vec<CandidateReport>,
    sails: Vec<ColorSail>,
    bundle: String,
}

/// Masks `alpha_0.png`, `alpha_1.png`, ... from `dir`.
fn load_user_masks(dir: &Path, width: usize, height: usize) -> CliResult<AlphaMasks> {
    let mut planes = Vec::new();
    loop {
        let path = dir.join(format!("alpha_{}.png", planes.len()));
        if !path.is_file() {
            break;
        }
        let (w, h, data) = load_gray8(&path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        if (w, h) != (width, height) {
            return Err(CliError::Input(format!(
                "{} is {w}x{h}, expected {width}x{height}",
                path.display()
            )));
        }
        planes.push(data.iter().map(|&a| f64::from(a) / 255.0).collect::<Vec<_>>());
    }
    if planes.is_empty() {
        return Err(CliError::Input(format!("no alpha_0.png in {}", dir.display())));
    }
    let masks = AlphaMasks::from_planes(width, height, &planes)?;
    if (0..width * height).any(|p| masks.pixel(p).iter().sum::<f64>() <= 0.0) {
        return Err(CliError::Input("user masks are zero at some pixel".into()));
    }
    Ok(masks)
}

fn cmd_rig(args: RigArgs) -> CliResult {
    let image = load_image(&args.input)?;
    let config = RigConfig {
        subdivision: args.subdivision,
        epochs: args.epochs,
        penalty: args.penalty,
        seed: args.seed,
        ..RigConfig::default()
    };
    if args.subdivision < 2 || args.epochs == 0 {
        return Err(CliError::Input("--subdivision must be at least 2 and --epochs positive".into()));
    }
    if args.n_alpha == Some(0) || (args.n_alpha.is_none() && args.candidates.iter().any(|&n| n == 0)) {
        return Err(CliError::Input("mask counts must be positive".into()));
    }
    check_parent(&args.out)?;
    let (fit, candidates): (RigFit, Vec<CandidateReport>) = if let Some(dir) = &args.alphas {
        let masks = load_user_masks(dir, image.width(), image.height())?;
        (fit_rig_with_masks(&image, &masks, &config)?, Vec::new())
    } else if let Some(n) = args.n_alpha {
        (fit_rig(&image, n, &config)?, Vec::new())
    } else {
        let sel = select_n_alpha(&image, &args.candidates, &config)?;
        let scores = sel.scores.iter().map(|&(n, l, s)| CandidateReport { n_alpha: n, loss: l, score: s }).collect();
        (sel.fit, scores)
    };
    if !fit.loss.total.is_finite() {
        return Err(CliError::Numerical("rig objective is non-finite".into()));
    }
    let rig = build_mapping(&image, &fit, &config.digest())?;
    save_rig(&rig, &args.out)?;
    let report = RigReport {
        n_alpha: fit.count(),
        loss: fit.loss,
        candidates,
        sails: fit.sails.clone(),
        bundle: args.out.display().to_string(),
    };
    if args.json {
        print!("{}", pretty(&report));
    } else {
        for c in &report.candidates {
            println!("N={} loss={:.4} score={:.4}", c.n_alpha, c.loss, c.score);
        }
        println!("selected {} masks, recon {:.6}, tv {:.6}", report.n_alpha, fit.loss.recon, fit.loss.tv);
        println!("bundle written to {}", report.bundle);
    }
    Ok(())
}

fn cmd_recolor(args: RecolorArgs) -> CliResult {
    check_parent(&args.out)?;
    let rig = load_rig(&args.bundle)?;
    let edits = parse_edits(&read_text(&args.edits)?).map_err(|e| CliError::Input(format!("{}: {e}", args.edits.display())))?;
    let out = recolor(&rig, &edits)?;
    out.save_png(&args.out).map_err(input_err)
}

fn cmd_render(args: RenderArgs) -> CliResult {
    if args.size == 0 {
        return Err(CliError::Input("--size must be positive".into()));
    }
    check_parent(&args.out)?;
    let sail = load_sail(&args.sail)?;
    render::render(&sail, args.size).save(&args.out).map_err(input_err)
}

fn cmd_analyze(args: AnalyzeArgs) -> CliResult {
    let files = analyze::list_pngs(&args.dir).map_err(|e| CliError::Input(format!("{}: {e}", args.dir.display())))?;
    if let Some(out) = &args.out {
        check_parent(out)?;
    }
    let rows: Vec<Result<String, String>> = files
        .par_iter()
        .enumerate()
        .map(|(k, path)| {
            let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            match Raster::load_png(path) {
                Ok(img) => Ok(analyze::csv_row(&analyze::analyze_image(&name, &img, args.patches, args.seed, k as u64))),
                Err(e) => Err(format!("warning: skipping {}: {e}", path.display())),
            }
        })
        .collect();
    let mut csv = analyze::csv_header();
    for row in rows {
        match row {
            Ok(line) => csv.push_str(&line),
            Err(warning) => eprintln!("{warning}"),
        }
    }
    match &args.out {
        Some(out) => write_bytes(out, csv.as_bytes()),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn cmd_metrics(args: MetricsArgs) -> CliResult {
    let image = load_image(&args.image)?;
    let sail = load_sail(&args.sail)?;
    let votes: Vec<(Rgb, f64)> = image.pixels().iter().map(|&c| (c, 1.0)).collect();
    let reference = patchmax_histogram(&image, DEFAULT_PATCH, DEFAULT_BINS).map_err(input_err)?;
    let loss = combined_loss(&votes, &sail, &reference, args.lambda_kl).map_err(input_err)?;
    check_finite(&loss)?;
    if args.json {
        print!("{}", pretty(&loss));
    } else {
        println!("e_l2      {:.6}", loss.e_l2);
        println!("e_kl      {:.6}", loss.e_kl);
        println!("combined  {:.6}", loss.combined);
        println!("R%        {:.4}", loss.r_percent);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Rig(a) => cmd_rig(a),
        Command::Recolor(a) => cmd_recolor(a),
        Command::Render(a) => cmd_render(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Metrics(a) => cmd_metrics(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
