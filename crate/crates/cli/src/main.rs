mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, CommandFactory, Parser, Subcommand};

use spc_core::bench::{benchmark, BenchConfig, MethodSetup};
use spc_core::dataio::{load_directory, load_image_pgm, save_image_pgm, synth_phantoms, write_ppm, Dataset, Split};
use spc_core::imaging::{
    compression_percentage, forward_measure, forward_measure_cube, read_spim, simulate_noise, standardize, write_spim,
    MeasurementSet,
};
use spc_core::metrics::{psnr, ssim};
use spc_core::patterns::{diagnose, read_spip, scrambled_hadamard_subset, write_spip};
use spc_core::reconstruct::{
    read_spcb, reconstruct_multispectral, spectral_ground_truth, spectral_to_srgb, write_spcb, Method, Reconstructor,
};
use spc_core::trainer::{log_csv, read_checkpoint, write_checkpoint, ArchitectureConfig, TrainConfig, Trainer};
use spc_core::tv::TvConfig;
use spc_core::{Error, Image, NoiseSpec, Result, SpectralCube};

use config::{run_file_for, Flags, Resolved};

/// Single-pixel imaging toolkit: patterns, simulation, training, reconstruction and benchmarks.
#[derive(Parser, Debug)]
#[command(name = "spc", version, about)]
struct Cli {
    /// Plain-text key = value file; flags given on the command line win
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate a scrambled-Hadamard pattern set (SPIP)
    GenPatterns(GenArgs),
    /// Fill factor and singular spectrum of a pattern set
    Diagnose(DiagArgs),
    /// Simulate measurements of an image or cube (SPIM)
    Measure(MeasureArgs),
    /// Train an encoder/decoder pair (SPIC)
    Train(TrainArgs),
    /// Reconstruct an image or cube from measurements
    Reconstruct(ReconArgs),
    /// Invert a full pattern basis channel by channel (SPCB)
    GroundTruth(GroundTruthArgs),
    /// Compare reconstruction methods on a test set
    Benchmark(BenchArgs),
    /// Render a spectral cube to sRGB (PPM)
    Spectra(SpectraArgs),
}

#[derive(Args, Debug)]
struct GenArgs {
    /// Pattern family (only `sh`)
    #[arg(long)]
    kind: Option<String>,
    /// Pixels per pattern (power of two, side^2)
    #[arg(long)]
    n: Option<usize>,
    /// Number of patterns kept
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DiagArgs {
    #[arg(long)]
    patterns: Option<PathBuf>,
    /// Write the CSV here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct MeasureArgs {
    #[arg(long)]
    patterns: Option<PathBuf>,
    /// Greyscale PGM
    #[arg(long)]
    image: Option<PathBuf>,
    /// SPCB cube, measured channel by channel
    #[arg(long)]
    cube: Option<PathBuf>,
    /// none | gaussian:SIGMA | pg:GAMMA,SIGMA
    #[arg(long)]
    noise: Option<String>,
    /// Store standardised measurements
    #[arg(long)]
    standardise: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Directory of PGM images, or synth:COUNT for phantoms
    #[arg(long)]
    data: Option<String>,
    #[arg(long)]
    side: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    /// Training noise on standardised measurements
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    base_channels: Option<usize>,
    #[arg(long)]
    levels: Option<usize>,
    /// Cap on images loaded from a directory
    #[arg(long)]
    limit: Option<usize>,
    /// Train only the decoder behind these fixed binary patterns (SPIP)
    #[arg(long)]
    fixed_patterns: Option<PathBuf>,
    /// Continue from a checkpoint that carries optimiser state
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Also write the frozen encoder as SPIP
    #[arg(long)]
    export_patterns: Option<PathBuf>,
    /// Per-epoch CSV log (default: <out>.log.csv)
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReconArgs {
    /// led | tval3 | sh-ld | le-tval3
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    patterns: Option<PathBuf>,
    #[arg(long)]
    measurements: Option<PathBuf>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    /// Reference PGM; adds SSIM and PSNR to the output line
    #[arg(long)]
    truth: Option<PathBuf>,
    /// PGM for one channel, SPCB otherwise
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GroundTruthArgs {
    /// Full square basis (SPIP)
    #[arg(long)]
    patterns: Option<PathBuf>,
    #[arg(long)]
    measurements: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (0 = all cores)
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args, Debug)]
struct SpectraArgs {
    #[arg(long)]
    cube: Option<PathBuf>,
    /// 8 or 16
    #[arg(long)]
    bits: Option<u8>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut flags = Flags::default();
    flags.put("seed", &cli.seed);
    let cfg = cli.config.as_deref();
    match &cli.cmd {
        Cmd::GenPatterns(a) => {
            flags.put("kind", &a.kind).put("n", &a.n).put("m", &a.m).put_path("out", &a.out);
            gen_patterns(Resolved::new(cfg, flags.done())?)
        }
        Cmd::Diagnose(a) => {
            flags.put_path("patterns", &a.patterns).put_path("out", &a.out);
            diagnose_cmd(Resolved::new(cfg, flags.done())?)
        }
        Cmd::Measure(a) => {
            flags
                .put_path("patterns", &a.patterns)
                .put_path("image", &a.image)
                .put_path("cube", &a.cube)
                .put("noise", &a.noise)
                .flag("standardise", a.standardise)
                .put_path("out", &a.out);
            measure(Resolved::new(cfg, flags.done())?)
        }
        Cmd::Train(a) => {
            flags
                .put("data", &a.data)
                .put("side", &a.side)
                .put("m", &a.m)
                .put("sigma_train", &a.sigma)
                .put("epochs", &a.epochs)
                .put("batch_size", &a.batch_size)
                .put("lr", &a.lr)
                .put("base_channels", &a.base_channels)
                .put("unet_levels", &a.levels)
                .put("limit", &a.limit)
                .put_path("fixed_patterns", &a.fixed_patterns)
                .put_path("resume", &a.resume)
                .put_path("export_patterns", &a.export_patterns)
                .put_path("log", &a.log)
                .put_path("out", &a.out);
            train(Resolved::new(cfg, flags.done())?)
        }
        Cmd::Reconstruct(a) => {
            flags
                .put("method", &a.method)
                .put_path("ckpt", &a.ckpt)
                .put_path("patterns", &a.patterns)
                .put_path("measurements", &a.measurements)
                .put("mu", &a.mu)
                .put("beta", &a.beta)
                .put_path("truth", &a.truth)
                .put_path("out", &a.out);
            reconstruct(Resolved::new(cfg, flags.done())?)
        }
        Cmd::GroundTruth(a) => {
            flags.put_path("patterns", &a.patterns).put_path("measurements", &a.measurements).put_path("out", &a.out);
            ground_truth(Resolved::new(cfg, flags.done())?)
        }
        Cmd::Benchmark(a) => {
            flags.put_path("out", &a.out).put("jobs", &a.jobs);
            bench(Resolved::new(cfg, flags.done())?)
        }
        Cmd::Spectra(a) => {
            flags.put_path("cube", &a.cube).put("bits", &a.bits).put_path("out", &a.out);
            spectra(Resolved::new(cfg, flags.done())?)
        }
    }
}

/// Missing or contradictory options: print the subcommand usage, exit 2.
fn usage(sub: &str, msg: &str) -> Error {
    let mut cmd = Cli::command();
    if let Some(s) = cmd.find_subcommand_mut(sub) {
        eprintln!("{}", s.render_help());
    }
    Error::InvalidInput(msg.to_string())
}

fn need_path(r: &Resolved, sub: &str, key: &str) -> Result<PathBuf> {
    r.path(key).ok_or_else(|| usage(sub, &format!("--{} is required", key.replace('_', "-"))))
}

fn gen_patterns(mut r: Resolved) -> Result<()> {
    let out = need_path(&r, "gen-patterns", "out")?;
    let kind = r.or("kind", "sh".to_string())?;
    if kind != "sh" {
        return Err(usage("gen-patterns", &format!("unknown pattern kind {kind:?} (only sh)")));
    }
    let n: usize = r.get("n")?.ok_or_else(|| usage("gen-patterns", "--n is required"))?;
    let m = r.or("m", n)?;
    let seed = r.or("seed", 0u64)?;
    let cp = compression_percentage(m, n)?;
    let p = scrambled_hadamard_subset(n, m, seed)?;
    write_spip(&out, &p)?;
    let d = diagnose(&p)?;
    r.write_run_file(&run_file_for(&out), "gen-patterns")?;
    println!("m,n,cp,fill_factor");
    println!("{m},{n},{cp:.2},{:.6}", d.fill_factor);
    Ok(())
}

fn diagnose_cmd(r: Resolved) -> Result<()> {
    let path = need_path(&r, "diagnose", "patterns")?;
    let d = diagnose(&read_spip(&path)?)?;
    match r.path("out") {
        Some(out) => {
            std::fs::write(&out, d.to_csv())?;
            r.write_run_file(&run_file_for(&out), "diagnose")?;
            println!("fill_factor,{}", d.fill_factor);
        }
        None => print!("{}", d.to_csv()),
    }
    Ok(())
}

fn parse_noise(s: &str, seed: u64) -> Result<NoiseSpec> {
    let bad = || Error::InvalidInput(format!("noise must be none, gaussian:SIGMA or pg:GAMMA,SIGMA, got {s:?}"));
    let num = |v: &str| v.trim().parse::<f64>().map_err(|_| bad());
    match s.split_once(':') {
        None if s == "none" => Ok(NoiseSpec::none()),
        Some(("gaussian", v)) => NoiseSpec::gaussian(num(v)?, seed),
        Some(("pg", v)) => {
            let (g, sg) = v.split_once(',').ok_or_else(bad)?;
            NoiseSpec::poisson_gaussian(num(g)?, num(sg)?, seed)
        }
        _ => Err(bad()),
    }
}

fn measure(mut r: Resolved) -> Result<()> {
    let out = need_path(&r, "measure", "out")?;
    let p = read_spip(&need_path(&r, "measure", "patterns")?)?;
    let seed = r.or("seed", 0u64)?;
    let noise_text = r.or("noise", "none".to_string())?;
    let standardise = r.or("standardise", false)?;
    let (clean, wavelengths) = match (r.path("image"), r.path("cube")) {
        (Some(img), None) => (vec![forward_measure(&p, &load_image_pgm(&img)?)?], None),
        (None, Some(cube)) => {
            let c = read_spcb(&cube)?;
            (forward_measure_cube(&p, &c)?, Some(c.wavelengths().to_vec()))
        }
        _ => return Err(usage("measure", "give exactly one of --image or --cube")),
    };
    let channels = clean
        .iter()
        .enumerate()
        .map(|(c, y)| {
            // each channel draws its own noise
            let spec = parse_noise(&noise_text, seed.wrapping_add(c as u64))?;
            let y = simulate_noise(y, &spec)?;
            if standardise {
                standardize(&y)
            } else {
                Ok(y)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let set = MeasurementSet { wavelengths, channels };
    write_spim(&out, &set)?;
    r.write_run_file(&run_file_for(&out), "measure")?;
    eprintln!("wrote {} channel(s) of {} measurements to {}", set.channels.len(), set.m(), out.display());
    Ok(())
}

fn load_data(spec: &str, side: usize, limit: Option<usize>, seed: u64) -> Result<Dataset> {
    match spec.strip_prefix("synth:") {
        Some(count) => {
            let count: usize = count
                .parse()
                .map_err(|_| Error::InvalidInput(format!("synth:COUNT needs an integer, got {spec:?}")))?;
            synth_phantoms(count, side, seed)
        }
        None => load_directory(Path::new(spec), side, limit, seed),
    }
}

fn train(mut r: Resolved) -> Result<()> {
    let out = need_path(&r, "train", "out")?;
    let data_spec: String = r.get("data")?.ok_or_else(|| usage("train", "--data is required"))?;
    let limit = r.get("limit")?;
    let mut trainer = match r.path("resume") {
        Some(p) => {
            let ck = read_checkpoint(&p)?;
            // the checkpoint owns architecture, seed and training noise
            for (k, v) in ck.arch.to_key_values().iter() {
                r.kv.set(k, v);
            }
            r.kv.set("seed", ck.meta.seed);
            r.kv.set("sigma_train", ck.meta.sigma_train);
            let mut cfg = TrainConfig::default();
            cfg.apply(&r.kv)?;
            Trainer::resume(ck, cfg)?
        }
        None => {
            let side = r.or("side", 64usize)?;
            let m = r.or("m", 409usize)?;
            let mut arch = ArchitectureConfig::new(m, side);
            arch.apply(&r.kv)?;
            let mut cfg = TrainConfig::default();
            cfg.apply(&r.kv)?;
            return train_fresh(r, arch, cfg, &data_spec, limit, &out);
        }
    };
    let arch = *trainer.arch();
    let ds = load_data(&data_spec, arch.side, limit, trainer.config().seed)?;
    let data = training_images(&ds);
    run_training(&mut r, &mut trainer, &data, &out)
}

fn training_images(ds: &Dataset) -> Vec<Image> {
    let train = ds.split_images(Split::Train);
    if train.is_empty() {
        ds.images()
    } else {
        train
    }
}

fn train_fresh(
    mut r: Resolved,
    arch: ArchitectureConfig,
    cfg: TrainConfig,
    data_spec: &str,
    limit: Option<usize>,
    out: &Path,
) -> Result<()> {
    for (k, v) in arch.to_key_values().iter().chain(cfg.to_key_values().iter()) {
        r.kv.set(k, v);
    }
    let ds = load_data(data_spec, arch.side, limit, cfg.seed)?;
    let data = training_images(&ds);
    let mut trainer = match r.path("fixed_patterns") {
        Some(p) => Trainer::with_fixed_encoder(arch, cfg, data.len(), &read_spip(&p)?)?,
        None => Trainer::new(arch, cfg, data.len())?,
    };
    run_training(&mut r, &mut trainer, &data, out)
}

fn run_training(r: &mut Resolved, trainer: &mut Trainer, data: &[Image], out: &Path) -> Result<()> {
    let log_path = r.path("log").unwrap_or_else(|| {
        let mut s = out.as_os_str().to_owned();
        s.push(".log.csv");
        PathBuf::from(s)
    });
    r.kv.set("log", log_path.display());
    r.kv.set("images", data.len());
    r.write_run_file(&run_file_for(out), "train")?;
    let t0 = Instant::now();
    let logs = trainer.fit(data, |l| {
        eprintln!(
            "epoch {:>3}  data {:.5}  binar {:.5}  lambda {:.3}  {}  ssim {:.4}  [{:.0}s]",
            l.epoch,
            l.data_loss,
            l.binar_loss,
            l.lambda,
            l.phase.as_str(),
            l.ssim,
            t0.elapsed().as_secs_f64()
        );
    })?;
    std::fs::write(&log_path, log_csv(&logs))?;
    let ck = trainer.checkpoint(true);
    write_checkpoint(out, &ck)?;
    if let Some(p) = r.path("export_patterns") {
        write_spip(&p, &ck.encoder_patterns()?)?;
    }
    println!("epochs,fill_factor,binarisation_residual,seconds");
    println!(
        "{},{:.6},{},{:.1}",
        ck.meta.epoch,
        ck.encoder.fill_factor(),
        ck.encoder.binarisation_residual(),
        t0.elapsed().as_secs_f64()
    );
    Ok(())
}

fn tv_config(r: &mut Resolved, base: TvConfig) -> Result<TvConfig> {
    let mut c = base;
    c.mu = r.or("mu", c.mu)?;
    c.beta = r.or("beta", c.beta)?;
    Ok(c)
}

fn reconstruct(mut r: Resolved) -> Result<()> {
    const SUB: &str = "reconstruct";
    let method_name: String = r.get("method")?.ok_or_else(|| usage(SUB, "--method is required"))?;
    let method = Method::parse(&method_name).map_err(|e| usage(SUB, &e.to_string()))?;
    let out = need_path(&r, SUB, "out")?;
    let set = read_spim(&need_path(&r, SUB, "measurements")?)?;
    let ckpt = match r.path("ckpt") {
        Some(p) => Some(read_checkpoint(&p)?),
        None if method.is_learned() => {
            return Err(usage(SUB, &format!("--ckpt is required for {}", method.as_str())))
        }
        None => None,
    };
    let patterns = match (r.path("patterns"), method, &ckpt) {
        (Some(p), _, _) => Some(read_spip(&p)?),
        (None, Method::LeTval3, Some(c)) => Some(c.encoder_patterns()?),
        (None, Method::Tval3 | Method::LeTval3, _) => {
            return Err(usage(SUB, &format!("--patterns is required for {}", method.as_str())))
        }
        _ => None,
    };
    let rec = match method {
        Method::Led | Method::ShLd => Reconstructor::Learned(ckpt.as_ref().expect("checked above")),
        Method::Tval3 => {
            let config = tv_config(&mut r, TvConfig::for_sh())?;
            Reconstructor::Tv { patterns: patterns.as_ref().expect("checked above"), config }
        }
        Method::LeTval3 => {
            let config = tv_config(&mut r, TvConfig::for_learned())?;
            Reconstructor::Tv { patterns: patterns.as_ref().expect("checked above"), config }
        }
    };
    if set.m() != rec.m() {
        return Err(Error::InvalidInput(format!("measurements have m={}, {} expects {}", set.m(), method.as_str(), rec.m())));
    }
    let c = set.channels.len();
    let wavelengths = set.wavelengths.clone().unwrap_or_else(|| (1..=c).map(|i| i as f64).collect());
    let t0 = Instant::now();
    let cube = if c == 1 {
        let (img, _) = rec.reconstruct(&set.channels[0])?;
        SpectralCube::new(wavelengths, vec![img])?
    } else {
        reconstruct_multispectral(&rec, &set.channels, wavelengths)?.0
    };
    let ms = t0.elapsed().as_secs_f64() * 1e3;
    write_cube_or_image(&out, &cube)?;
    r.write_run_file(&run_file_for(&out), SUB)?;
    match r.path("truth") {
        Some(t) => {
            let x = load_image_pgm(&t)?;
            let xhat = &cube.planes()[0];
            println!("method,channels,ms,ssim,psnr");
            println!("{},{c},{ms:.3},{:.6},{:.4}", method.as_str(), ssim(&x, xhat)?, psnr(&x, xhat)?);
        }
        None => {
            println!("method,channels,ms");
            println!("{},{c},{ms:.3}", method.as_str());
        }
    }
    Ok(())
}

/// One channel to `.pgm` (16-bit, clamped) unless the name asks for SPCB.
fn write_cube_or_image(out: &Path, cube: &SpectralCube) -> Result<()> {
    let spcb = out.extension().is_some_and(|e| e.eq_ignore_ascii_case("spcb"));
    if cube.channels() == 1 && !spcb {
        let p = &cube.planes()[0];
        save_image_pgm(out, &Image::clamped(p.side(), p.pixels().to_vec())?, 16)
    } else {
        write_spcb(out, cube)
    }
}

fn ground_truth(r: Resolved) -> Result<()> {
    const SUB: &str = "ground-truth";
    let out = need_path(&r, SUB, "out")?;
    let p = read_spip(&need_path(&r, SUB, "patterns")?)?;
    let set = read_spim(&need_path(&r, SUB, "measurements")?)?;
    if set.channels.iter().any(|c| c.is_standardised()) {
        return Err(Error::InvalidInput("ground truth needs raw measurements".into()));
    }
    let c = set.channels.len();
    let wavelengths = set.wavelengths.clone().unwrap_or_else(|| (1..=c).map(|i| i as f64).collect());
    let cube = spectral_ground_truth(&p, &set.channels, wavelengths)?;
    write_cube_or_image(&out, &cube)?;
    r.write_run_file(&run_file_for(&out), SUB)?;
    eprintln!("inverted {c} channel(s) of side {}", cube.side());
    Ok(())
}

fn bench(mut r: Resolved) -> Result<()> {
    const SUB: &str = "benchmark";
    let out = need_path(&r, SUB, "out")?;
    let seed = r.or("seed", 0u64)?;
    let led = r.path("led_ckpt").map(|p| read_checkpoint(&p)).transpose()?;
    let shld = r.path("shld_ckpt").map(|p| read_checkpoint(&p)).transpose()?;
    let side_default = led.as_ref().or(shld.as_ref()).map_or(64, |c| c.arch.side);
    let side = r.or("side", side_default)?;
    let m_default = shld.as_ref().or(led.as_ref()).map_or(409, |c| c.arch.m);
    let sh = match r.path("sh_patterns") {
        Some(p) => read_spip(&p)?,
        None => {
            let m = r.or("m", m_default)?;
            let sh_seed = r.or("sh_seed", seed)?;
            scrambled_hadamard_subset(side * side, m, sh_seed)?
        }
    };
    let le = led.as_ref().map(|c| c.encoder_patterns()).transpose()?;
    let sh_tv = tv_config(&mut r, TvConfig::for_sh())?;
    let mut le_tv = TvConfig::for_learned();
    le_tv.mu = r.or("le_mu", le_tv.mu)?;
    le_tv.beta = r.or("le_beta", le_tv.beta)?;

    let requested: Vec<Method> = match r.str("methods") {
        Some(list) => list.split(',').map(|s| Method::parse(s.trim())).collect::<Result<_>>()?,
        None => {
            let mut v = vec![Method::Tval3];
            if led.is_some() {
                v.extend([Method::LeTval3, Method::Led]);
            }
            if shld.is_some() {
                v.push(Method::ShLd);
            }
            v
        }
    };
    r.kv.set("methods", requested.iter().map(|m| m.as_str()).collect::<Vec<_>>().join(","));
    let mut setups = Vec::new();
    for m in &requested {
        let missing = |what: &str| usage(SUB, &format!("{} needs {what} in the config", m.as_str()));
        setups.push(match m {
            Method::Tval3 => MethodSetup::new(*m, &sh, Reconstructor::Tv { patterns: &sh, config: sh_tv })?,
            Method::ShLd => {
                let c = shld.as_ref().ok_or_else(|| missing("shld_ckpt"))?;
                MethodSetup::new(*m, &sh, Reconstructor::Learned(c))?
            }
            Method::Led => {
                let (c, p) = led.as_ref().zip(le.as_ref()).ok_or_else(|| missing("led_ckpt"))?;
                MethodSetup::new(*m, p, Reconstructor::Learned(c))?
            }
            Method::LeTval3 => {
                let p = le.as_ref().ok_or_else(|| missing("led_ckpt"))?;
                MethodSetup::new(*m, p, Reconstructor::Tv { patterns: p, config: le_tv })?
            }
        });
    }

    let data_spec = r.or("data", "synth:100".to_string())?;
    let count: Option<usize> = r.get("count")?;
    let ds = load_data(&data_spec, side, count, r.or("data_seed", seed.wrapping_add(1))?)?;
    let mut images: Vec<(String, Image)> = ds
        .items()
        .iter()
        .filter(|it| data_spec.starts_with("synth:") || it.split == Split::Test)
        .map(|it| (it.id.clone(), it.image.clone()))
        .collect();
    if let Some(c) = count {
        images.truncate(c);
    }
    let cfg = BenchConfig {
        sigma: r.or("sigma", 0.25)?,
        seed,
        jobs: r.or("jobs", 0usize)?,
        repeats: r.or("repeats", spc_core::bench::TIMING_REPEATS)?,
    };
    let report = benchmark(&images, &setups, &cfg)?;
    report.write(&out)?;
    r.write_run_file(&out.join("run.txt"), SUB)?;
    print!("{}", report.summary_csv());
    if !report.failures.is_empty() {
        eprintln!("{} reconstruction(s) failed; see warnings above", report.failures.len());
    }
    Ok(())
}

fn spectra(mut r: Resolved) -> Result<()> {
    const SUB: &str = "spectra";
    let out = need_path(&r, SUB, "out")?;
    let cube = read_spcb(&need_path(&r, SUB, "cube")?)?;
    let bits = r.or("bits", 8u8)?;
    let rgb = spectral_to_srgb(&cube)?;
    write_ppm(&out, rgb.side, rgb.side, &rgb.interleaved(), bits)?;
    r.write_run_file(&run_file_for(&out), SUB)?;
    let [cr, cg, cb] = rgb.mean();
    println!("r_mean,g_mean,b_mean");
    println!("{cr:.6},{cg:.6},{cb:.6}");
    Ok(())
}
