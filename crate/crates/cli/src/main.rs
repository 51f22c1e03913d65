use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use frgan::data::{extract_tumor_cubes, hu_window, normalize, phantom_dataset, IntensityDomain, MaskVolume, Volume};
use frgan::eval::{evaluate_protocol, write_report, ProtocolReport};
use frgan::gradcheck::{audit, AUDIT_TOLERANCE};
use frgan::io::{
    load_checkpoint, load_generator, read_cube_archive, read_history, read_raw, read_volume, summarize_history, write_cube_archive, write_history,
    write_json, write_montage, write_volume, RawDType, RunConfig,
};
use frgan::train::{checkpoint_name, synthesize, train, TrainOptions};
use frgan::Error;

#[derive(Parser)]
#[command(name = "frgan", version, about = "Free-form 3D tumor inpainting for CT volumes")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Forces single-threaded, bit-reproducible execution.
    #[arg(long, global = true)]
    serial: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract tumor cubes from CT volumes and label masks.
    Preprocess(PreprocessArgs),
    /// Generate a procedural phantom cube archive.
    Phantom(PhantomArgs),
    /// Train the inpainting GAN on a cube archive.
    Train(TrainArgs),
    /// Inpaint the masked region of a volume.
    Synth(SynthArgs),
    /// Compare segmentation trained on real versus real plus synthetic cubes.
    Eval(EvalArgs),
    /// Finite-difference audit of every differentiable op.
    Gradcheck(GradcheckArgs),
    /// Summarize a loss history.
    Report(ReportArgs),
}

#[derive(Args)]
struct PreprocessArgs {
    /// CT volumes (VXL1, or raw with --raw-dims).
    #[arg(long, required = true, num_args = 1..)]
    image: Vec<PathBuf>,
    /// Label volumes, one per image.
    #[arg(long, required = true, num_args = 1..)]
    labels: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Dataset profile (kits, lits, luna); overrides the config.
    #[arg(long)]
    profile: Option<String>,
    /// Label value marking tumor; by default any label >= 0.5.
    #[arg(long)]
    tumor_label: Option<f32>,
    /// Reads headerless exports with these extents, e.g. 512,512,90.
    #[arg(long, value_parser = parse_dims)]
    raw_dims: Option<[usize; 3]>,
    #[arg(long, default_value = "i16", value_parser = parse_dtype)]
    raw_dtype: RawDType,
    /// Edge length of the output cubes.
    #[arg(long, default_value_t = 64)]
    side: usize,
}

#[derive(Args)]
struct PhantomArgs {
    #[arg(long, default_value_t = 8)]
    n: usize,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the configured phantom side.
    #[arg(long)]
    side: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    /// Cube archive directory.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Run directory for checkpoints and history.
    #[arg(long)]
    out: PathBuf,
    /// Continues from a checkpoint directory with its stored configuration.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    max_steps: Option<u64>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    volume: PathBuf,
    #[arg(long)]
    mask: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Axial slice montage (.png or .pgm).
    #[arg(long)]
    montage: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Cube archive to split into train / augmentation / test; phantoms if absent.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Generator checkpoint for the synthetic arm; without it both arms match.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Also write the table as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// history.jsonl, or a run or checkpoint directory holding one.
    history: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_dims(s: &str) -> Result<[usize; 3], String> {
    let v: Vec<usize> = s.split(',').map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}"))).collect::<Result<_, _>>()?;
    v.try_into().map_err(|_| format!("expected X,Y,Z, got {s:?}"))
}

fn parse_dtype(s: &str) -> Result<RawDType, String> {
    RawDType::parse(s).ok_or_else(|| format!("unknown raw dtype {s:?} (u8, i16, u16, i32, f32)"))
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NonFinite { .. } | Error::Diverged { .. } | Error::Domain { .. } => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> frgan::Result<u8> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.set_seed(s);
    }
    if cli.serial {
        cfg.train.parallel = false;
    }
    cfg.validate()?;
    frgan::tensor::set_parallel(cfg.train.parallel);
    match cli.command {
        Command::Preprocess(a) => preprocess(&cfg, a),
        Command::Phantom(a) => phantom(&cfg, a),
        Command::Train(a) => train_cmd(&cfg, cli.serial, a),
        Command::Synth(a) => synth(&cfg, a),
        Command::Eval(a) => eval(&cfg, a),
        Command::Gradcheck(a) => gradcheck(&cfg, a),
        Command::Report(a) => report(a),
    }
}

fn load_input(path: &Path, raw: Option<[usize; 3]>, dtype: RawDType) -> frgan::Result<Volume> {
    match raw {
        Some(dims) => read_raw(path, dims, dtype),
        None => read_volume(path),
    }
}

fn preprocess(cfg: &RunConfig, a: PreprocessArgs) -> frgan::Result<u8> {
    if a.image.len() != a.labels.len() {
        return Err(Error::Config(format!("{} images but {} label volumes", a.image.len(), a.labels.len())));
    }
    let mut data = cfg.data.clone();
    if let Some(p) = a.profile {
        data.profile = p;
    }
    let profile = data.profile()?;
    let mut cubes = Vec::new();
    for (img, lab) in a.image.iter().zip(&a.labels) {
        let raw = load_input(img, a.raw_dims, a.raw_dtype)?;
        let labels = load_input(lab, a.raw_dims, a.raw_dtype)?;
        if labels.dims != raw.dims {
            return Err(Error::Format { path: lab.clone(), offset: 4, detail: format!("label extents {:?} differ from image {:?}", labels.dims, raw.dims) });
        }
        let mask = match a.tumor_label {
            Some(t) => MaskVolume::new(labels.dims, labels.data.iter().map(|&v| u8::from(v == t)).collect())?,
            None => MaskVolume::from_volume(&labels),
        };
        let source = img.file_stem().map_or_else(|| img.display().to_string(), |s| s.to_string_lossy().into_owned());
        let found = extract_tumor_cubes(&raw, &mask, &profile, a.side, data.pad, data.boundary, &source)?;
        eprintln!("{}: {} tumor cube(s)", img.display(), found.len());
        cubes.extend(found);
    }
    if cubes.is_empty() {
        return Err(Error::Argument { op: "preprocess", detail: "no tumor component passed the size threshold".into() });
    }
    write_cube_archive(&a.out, &cubes)?;
    println!("wrote {} cubes to {}", cubes.len(), a.out.display());
    Ok(0)
}

fn phantom(cfg: &RunConfig, a: PhantomArgs) -> frgan::Result<u8> {
    let mut pc = cfg.phantom;
    if let Some(s) = a.side {
        pc.side = s;
    }
    let cubes = phantom_dataset(a.n, cfg.seed, &pc)?;
    write_cube_archive(&a.out, &cubes)?;
    println!("wrote {} phantom cubes ({}^3) to {}", cubes.len(), pc.side, a.out.display());
    Ok(0)
}

fn train_cmd(cfg: &RunConfig, serial: bool, a: TrainArgs) -> frgan::Result<u8> {
    let data_dir = a.data.or_else(|| cfg.paths.cubes.clone()).ok_or_else(|| Error::Config("no cube archive: pass --data or set paths.cubes".into()))?;
    let dataset = read_cube_archive(&data_dir)?;
    let (mut tc, resume) = match &a.resume {
        Some(dir) => {
            let (state, stored) = load_checkpoint::<f32>(dir)?;
            eprintln!("resuming from {} at epoch {} step {}", dir.display(), state.epoch, state.step);
            (stored, Some(state))
        }
        None => (cfg.train, None),
    };
    if let Some(e) = a.epochs {
        tc.epochs = e;
        tc.gamma_ramp_epochs = tc.gamma_ramp_epochs.min(e);
    }
    if serial {
        tc.parallel = false;
    }
    let mut log = |r: &frgan::train::HistoryRecord| {
        if r.step % 10 == 1 {
            eprintln!("step {:>6} epoch {:>3} l_d {:.4} l_total {:.4} l_mm {:.4}", r.step, r.epoch, r.l_d, r.losses.l_total, r.losses.l_mm);
        }
    };
    let opts = TrainOptions { checkpoint_dir: Some(a.out.join("checkpoints")), max_steps: a.max_steps, stop_after_epoch: None, on_step: Some(&mut log) };
    let state = train::<f32>(&tc, &dataset, resume, opts)?;
    write_history(&a.out.join("history.jsonl"), &state.history)?;
    println!(
        "trained {} steps over {} epochs; latest checkpoint {}",
        state.step,
        state.epoch,
        a.out.join("checkpoints").join(checkpoint_name(state.epoch)).display()
    );
    Ok(0)
}

fn synth(cfg: &RunConfig, a: SynthArgs) -> frgan::Result<u8> {
    let gen = load_generator::<f32>(&a.checkpoint)?;
    let mut volume = read_volume(&a.volume)?;
    if volume.domain == IntensityDomain::Hu {
        let p = cfg.data.profile()?;
        volume = normalize(&hu_window(&volume, p.hu_lo, p.hu_hi)?);
    }
    let mask_vol = read_volume(&a.mask)?;
    if mask_vol.dims != volume.dims {
        return Err(Error::Format { path: a.mask.clone(), offset: 4, detail: format!("mask extents {:?} differ from volume {:?}", mask_vol.dims, volume.dims) });
    }
    let mask = MaskVolume::from_volume(&mask_vol);
    if mask.is_empty() {
        return Err(Error::Argument { op: "synth", detail: format!("mask {} selects no voxels", a.mask.display()) });
    }
    let out = synthesize(&gen, &volume, &mask, cfg.data.pad)?;
    write_volume(&out, &a.out)?;
    if let Some(m) = &a.montage {
        write_montage(&out, m, 0.0, 1.0)?;
    }
    println!("inpainted {} voxels into {}", mask.count(), a.out.display());
    Ok(0)
}

fn print_report(r: &ProtocolReport) {
    let cell = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x:.4}"));
    println!("{:<16} {:>8} {:>8} {:>8} {:>8} {:>8}", "arm", "Dice", "Jaccard", "VOE", "RVD", "HD");
    for a in [&r.baseline, &r.augmented] {
        println!("{:<16} {:>8.4} {:>8.4} {:>8.4} {:>8} {:>8}", a.arm, a.dice, a.jaccard, a.voe, cell(a.rvd), cell(a.hd));
    }
    let d = &r.delta;
    println!("{:<16} {:>8.4} {:>8.4} {:>8.4} {:>8} {:>8}", "delta", d.dice, d.jaccard, d.voe, cell(d.rvd), cell(d.hd));
}

fn eval(cfg: &RunConfig, a: EvalArgs) -> frgan::Result<u8> {
    let e = cfg.eval;
    let need = e.n_train + e.n_aug + e.n_test;
    let cubes = match &a.data {
        Some(dir) => read_cube_archive(dir)?,
        None => phantom_dataset(need, cfg.seed, &cfg.phantom)?,
    };
    if cubes.len() < need {
        return Err(Error::Argument { op: "eval", detail: format!("{} cubes available, the split needs {need}", cubes.len()) });
    }
    let (train_set, rest) = cubes.split_at(e.n_train);
    let (aug, rest) = rest.split_at(e.n_aug);
    let test = &rest[..e.n_test];
    let gen = a.checkpoint.as_deref().map(load_generator::<f32>).transpose()?;
    let r = evaluate_protocol(&e.segnet, train_set, aug, test, gen.as_ref(), cfg.seed)?;
    write_report(&a.out, &r)?;
    print_report(&r);
    Ok(0)
}

fn gradcheck(cfg: &RunConfig, a: GradcheckArgs) -> frgan::Result<u8> {
    let reports = audit(cfg.seed)?;
    println!("{:<32} {:>14} {:>7}  status", "op", "max rel error", "probes");
    let mut failed = 0;
    for r in &reports {
        let ok = r.max_rel_error < AUDIT_TOLERANCE;
        failed += usize::from(!ok);
        println!("{:<32} {:>14.3e} {:>7}  {}", r.name, r.max_rel_error, r.probes, if ok { "ok" } else { "FAIL" });
    }
    if let Some(p) = &a.out {
        write_json(p, &reports)?;
    }
    if failed > 0 {
        eprintln!("{failed} op(s) exceed the {AUDIT_TOLERANCE:e} tolerance");
        return Ok(3);
    }
    Ok(0)
}

fn report(a: ReportArgs) -> frgan::Result<u8> {
    let path = if a.history.is_dir() { a.history.join("history.jsonl") } else { a.history.clone() };
    let records = read_history(&path)?;
    let s = summarize_history(&records);
    println!("{:>5} {:>6} {:>6} {:>9} {:>9} {:>9} {:>9} {:>9} {:>7} {:>7}", "epoch", "steps", "gamma", "l_d", "l_adv", "l_mm", "l_percep", "l_total", "D(y)", "D(y^)");
    for e in &s.epochs {
        println!(
            "{:>5} {:>6} {:>6.3} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>7.3} {:>7.3}",
            e.epoch, e.steps, e.gamma, e.l_d, e.l_adv, e.l_mm, e.l_percep, e.l_total, e.d_real, e.d_fake
        );
    }
    println!("{} steps, all finite: {}", s.steps, s.all_finite);
    if let Some(p) = &a.out {
        write_json(p, &s)?;
    }
    Ok(if s.all_finite { 0 } else { 3 })
}
