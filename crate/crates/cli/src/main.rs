mod config;
mod exit;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;
use ssif::acceptance::{run_all, run_quick, Outcome, Protocol};
use ssif::data::{low_res_input, read_cube, write_cube, SceneSet};
use ssif::eval::{
    dump_spectral_basis, sweep_eval, wavelength_grid, write_basis_csv, write_report_csv,
};
use ssif::model::{output_extent, read_checkpoint, write_checkpoint, SsifModel};
use ssif::spectral::WavelengthIntervalMatrix;
use ssif::train::{write_loss_csv, Trainer};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use config::RunConfig;

#[derive(Parser, Debug)]
#[command(
    name = "ssif",
    version,
    about = "Continuous hyperspectral super-resolution with spatial-spectral implicit functions"
)]
struct Cli {
    /// Worker cap. The current build runs single-threaded.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Serialize)]
struct Common {
    /// JSON run config; missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides SSIF_SEED and the config seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Record wall-clock times in the CSV outputs.
    #[arg(long)]
    timing: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render synthetic LR/HR cube pairs.
    GenData(Common),
    /// Train a model on synthetic scenes.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from a checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Sweep scales and band counts on held-out scenes.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
    },
    /// Super-resolve one cube.
    Infer {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        scale: f64,
        #[arg(long)]
        bands: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the learned spectral basis over a wavelength grid.
    DumpBasis {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        lo: Option<f64>,
        #[arg(long)]
        hi: Option<f64>,
        #[arg(long, default_value_t = 301)]
        points: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the acceptance suite and print one line per criterion.
    Selftest {
        /// Include the long training criteria.
        #[arg(long)]
        full: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, Serialize)]
#[serde(rename_all = "snake_case")]
enum SeedSource {
    Flag,
    Env,
    Config,
}

fn resolve_seed(flag: Option<u64>, config: u64) -> Result<(u64, SeedSource)> {
    if let Some(s) = flag {
        return Ok((s, SeedSource::Flag));
    }
    match std::env::var("SSIF_SEED") {
        Ok(v) => {
            let s = v
                .trim()
                .parse()
                .with_context(|| format!("SSIF_SEED must be an unsigned integer, got {v:?}"))?;
            Ok((s, SeedSource::Env))
        }
        Err(std::env::VarError::NotPresent) => Ok((config, SeedSource::Config)),
        Err(e) => bail!("SSIF_SEED: {e}"),
    }
}

struct RunDir {
    path: PathBuf,
}

impl RunDir {
    fn create(path: &Path) -> Result<Self> {
        fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))?;
        Ok(Self {
            path: path.to_path_buf(),
        })
    }

    fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    fn write(&self, name: &str, bytes: &[u8]) -> Result<()> {
        let p = self.file(name);
        fs::write(&p, bytes).with_context(|| format!("writing {}", p.display()))
    }

    fn json(&self, name: &str, value: &impl Serialize) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    fn csv(
        &self,
        name: &str,
        body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
    ) -> Result<()> {
        let p = self.file(name);
        let f = File::create(&p).with_context(|| format!("creating {}", p.display()))?;
        let mut w = BufWriter::new(f);
        body(&mut w)
            .and_then(|_| w.flush())
            .with_context(|| format!("writing {}", p.display()))
    }

    /// Tool version, the invocation, and the seed that drove it.
    fn manifest(&self, command: &str, seed: u64, source: SeedSource, threads: usize) -> Result<()> {
        self.json(
            "run.json",
            &json!({
                "tool": "ssif",
                "version": env!("CARGO_PKG_VERSION"),
                "command": command,
                "args": std::env::args().skip(1).collect::<Vec<_>>(),
                "seed": seed,
                "seed_source": source,
                "threads": threads,
            }),
        )
    }
}

fn gen_data(common: &Common, threads: usize) -> Result<()> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    let (seed, source) = resolve_seed(common.seed, cfg.gen_data.scenes.seed)?;
    cfg.gen_data.scenes.seed = seed;
    let g = &cfg.gen_data;
    let input_bands = WavelengthIntervalMatrix::validate(&g.input_bands)?;
    let target_bands = WavelengthIntervalMatrix::equal_width(g.range.lo, g.range.hi, g.bands)?;
    let mut scenes = SceneSet::generate(g.scenes, g.range)?;
    let dir = RunDir::create(&common.out)?;
    dir.json("config.json", &cfg)?;
    dir.manifest("gen-data", seed, source, threads)?;
    for i in 0..scenes.len() {
        let renderer = scenes.renderer(i);
        let (lr, hr_extent) = low_res_input(
            renderer,
            g.base_extent,
            g.scale,
            &input_bands,
            g.input_response,
        )?;
        let hr = renderer.render(hr_extent, hr_extent, &target_bands, g.target_response)?;
        write_cube(&lr, &dir.file(&format!("lr_{i}.hsc1")))?;
        write_cube(&hr, &dir.file(&format!("hr_{i}.hsc1")))?;
    }
    println!(
        "wrote {} cube pairs to {}",
        scenes.len(),
        common.out.display()
    );
    Ok(())
}

fn train(common: &Common, resume: Option<&Path>, threads: usize) -> Result<()> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    let (seed, source) = resolve_seed(common.seed, cfg.train.seed)?;
    cfg.train.seed = seed;
    cfg.eval.seed = seed;
    let mut trainer = match resume {
        Some(p) => {
            let ck = read_checkpoint(p)?;
            Trainer::resume(cfg.train.clone(), &ck)?
        }
        None => Trainer::new(cfg.train.clone())?,
    };
    let dir = RunDir::create(&common.out)?;
    dir.json("config.json", &cfg)?;
    dir.manifest("train", seed, source, threads)?;
    let every = cfg.train.checkpoint_every;
    let total = cfg.train.steps;
    let curve = trainer.run(|t, r| {
        if every > 0 && t.step % every == 0 && t.step < total {
            write_checkpoint(
                &t.checkpoint(),
                &dir.file(&format!("ckpt_{:06}.hsp1", t.step)),
            )?;
        }
        if r.step % 100 == 0 {
            eprintln!("step {:>6}  loss {:.5}", r.step, r.loss);
        }
        Ok(())
    })?;
    write_checkpoint(&trainer.checkpoint(), &dir.file("model.hsp1"))?;
    dir.csv("loss.csv", |w| write_loss_csv(w, &curve, common.timing))?;
    match curve.last() {
        Some(r) => println!(
            "ran {} steps (now at {}), final loss {:.5}",
            curve.len(),
            trainer.step,
            r.loss
        ),
        None => println!("no steps to run"),
    }
    Ok(())
}

fn load_model(path: &Path) -> Result<SsifModel> {
    Ok(read_checkpoint(path)?.model()?)
}

fn eval(common: &Common, model_path: &Path, threads: usize) -> Result<()> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    let (seed, source) = resolve_seed(common.seed, cfg.eval.seed)?;
    cfg.eval.seed = seed;
    let model = load_model(model_path)?;
    let dir = RunDir::create(&common.out)?;
    dir.json("config.json", &cfg)?;
    dir.manifest("eval", seed, source, threads)?;
    let report = sweep_eval(&model, &cfg.eval)?;
    dir.csv("report.csv", |w| {
        write_report_csv(w, &report, common.timing)
    })?;
    for r in &report.rows {
        println!(
            "p={} C={:<3} {:<3} psnr {:6.2} dB  ssim {:.4}  sam {:5.2} deg",
            r.p,
            r.c,
            if r.ood { "out" } else { "in" },
            r.metrics.psnr_db,
            r.metrics.ssim,
            r.metrics.sam_deg
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct InferConfig<'a> {
    model: &'a Path,
    input: &'a Path,
    scale: f64,
    bands: usize,
}

fn infer(
    model_path: &Path,
    input: &Path,
    scale: f64,
    bands: usize,
    seed: Option<u64>,
    out: &Path,
    threads: usize,
) -> Result<()> {
    if bands == 0 {
        bail!("--bands must be positive");
    }
    let (seed, source) = resolve_seed(seed, 0)?;
    let model = load_model(model_path)?;
    let cube = read_cube(input)?;
    output_extent(&cube, scale)?;
    let range = model.config.range;
    let target = WavelengthIntervalMatrix::equal_width(range.lo, range.hi, bands)?;
    let dir = RunDir::create(out)?;
    dir.json(
        "config.json",
        &InferConfig {
            model: model_path,
            input,
            scale,
            bands,
        },
    )?;
    dir.manifest("infer", seed, source, threads)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sr = model.super_resolve(&cube, scale, &target, &mut rng)?;
    write_cube(&sr, &dir.file("sr.hsc1"))?;
    println!(
        "{}x{}x{} -> {}x{}x{}",
        cube.height(),
        cube.width(),
        cube.band_count(),
        sr.height(),
        sr.width(),
        sr.band_count()
    );
    Ok(())
}

fn dump_basis(
    model_path: &Path,
    lo: Option<f64>,
    hi: Option<f64>,
    points: usize,
    out: &Path,
    threads: usize,
) -> Result<()> {
    let model = load_model(model_path)?;
    let range = model.config.range;
    let (lo, hi) = (lo.unwrap_or(range.lo), hi.unwrap_or(range.hi));
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) || points == 0 {
        bail!("need finite --lo <= --hi and --points > 0");
    }
    let grid = wavelength_grid(lo, hi, points);
    let basis = dump_spectral_basis(&model, &grid)?;
    let dir = RunDir::create(out)?;
    dir.json(
        "config.json",
        &json!({ "model": model_path, "lo": lo, "hi": hi, "points": points }),
    )?;
    dir.manifest("dump-basis", 0, SeedSource::Config, threads)?;
    dir.csv("basis.csv", |w| write_basis_csv(w, &grid, &basis))?;
    println!(
        "wrote {} x {} basis values",
        grid.len(),
        basis.first().map_or(0, Vec::len)
    );
    Ok(())
}

/// Returns whether every criterion passed.
fn selftest(full: bool, out: Option<&Path>, threads: usize) -> Result<bool> {
    let protocol = Protocol::default();
    let print = |o: &Outcome| println!("{o}");
    let outcomes = if full {
        run_all(&protocol, print, |line| eprintln!("{line}"))
    } else {
        run_quick(&protocol, print)
    };
    let passed = outcomes.iter().filter(|o| o.passed).count();
    println!("{passed}/{} criteria passed", outcomes.len());
    if let Some(out) = out {
        let dir = RunDir::create(out)?;
        dir.manifest("selftest", 0, SeedSource::Config, threads)?;
        let text: String = outcomes.iter().map(|o| format!("{o}\n")).collect();
        dir.write("selftest.txt", text.as_bytes())?;
    }
    Ok(passed == outcomes.len())
}

fn run(cli: Cli) -> Result<ExitCode> {
    let threads = cli.threads;
    if threads == 0 {
        bail!("--threads must be positive");
    }
    match cli.command {
        Command::GenData(common) => gen_data(&common, threads)?,
        Command::Train { common, resume } => train(&common, resume.as_deref(), threads)?,
        Command::Eval { common, model } => eval(&common, &model, threads)?,
        Command::Infer {
            model,
            input,
            scale,
            bands,
            seed,
            out,
        } => infer(&model, &input, scale, bands, seed, &out, threads)?,
        Command::DumpBasis {
            model,
            lo,
            hi,
            points,
            out,
        } => dump_basis(&model, lo, hi, points, &out, threads)?,
        Command::Selftest { full, out } => {
            if !selftest(full, out.as_deref(), threads)? {
                return Ok(ExitCode::from(exit::NUMERIC as u8));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { exit::USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit::code(&err) as u8)
        }
    }
}
