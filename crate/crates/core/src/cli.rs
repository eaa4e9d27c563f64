//! Command-line front end. Every subcommand writes its output through a
//! temporary directory, so a failed run leaves nothing behind.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use num_complex::Complex64;

use crate::engine::{toy_gradcheck, ProbeMode, ToyGradcheck, Trainer};
use crate::epie::{epie_reconstruct, gaussian_probe};
use crate::error::{Error, Result};
use crate::field::ComplexField;
use crate::io::{
    field_previews, load_probe, load_reconstruction, read_manifest, recon_container, save_container, DatasetBundle,
    DatasetMetadata, PhysicalMetadata, RunConfig,
};
use crate::metrics::{evaluate, format_report, frc_between};
use crate::physics::probe_fwhm_diameter;
use crate::provenance::{Provenance, VERSION};
use crate::simulate::{build_dataset, make_phantom};

/// Exit status for any failed run.
pub const EXIT_FAILURE: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "ptyinr", version, about = "Ptychographic reconstruction with neural fields")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a phantom and its diffraction dataset.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        write: WriteOpts,
    },
    /// Neural-field reconstruction of object and probe.
    Reconstruct {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// `fixed:PATH` freezes the probe to the one stored at PATH.
        #[arg(long)]
        probe: Option<String>,
        /// Periodic checkpoint file (see `train.checkpoint_every`).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Continue from a checkpoint written by an identical config.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[command(flatten)]
        write: WriteOpts,
    },
    /// ePIE baseline reconstruction.
    Epie {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// `fixed:PATH` keeps the probe at PATH; `init:PATH` starts from it.
        #[arg(long)]
        probe: Option<String>,
        #[command(flatten)]
        write: WriteOpts,
    },
    /// Score a reconstruction against simulated ground truth.
    Evaluate {
        #[arg(long)]
        recon: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Second reconstruction for an FRC curve, written next to the report.
        #[arg(long)]
        frc_with: Option<PathBuf>,
    },
    /// Finite-difference check of the full loss on a toy problem.
    Gradcheck {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 200)]
        samples: usize,
        #[arg(long, default_value_t = 1e-5)]
        h: f64,
    },
}

#[derive(Args, Debug)]
struct WriteOpts {
    /// Replace an existing output directory.
    #[arg(long)]
    force: bool,
    /// Suppress progress output.
    #[arg(long)]
    quiet: bool,
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_FAILURE } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_FAILURE
        }
    }
}

fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Simulate { config, out, write } => simulate(&config, &out, &write).map(|_| 0),
        Command::Reconstruct {
            data,
            config,
            out,
            probe,
            checkpoint,
            resume,
            write,
        } => reconstruct(&data, &config, &out, probe.as_deref(), checkpoint, resume, &write).map(|_| 0),
        Command::Epie {
            data,
            config,
            out,
            probe,
            write,
        } => epie(&data, &config, &out, probe.as_deref(), &write).map(|_| 0),
        Command::Evaluate {
            recon,
            truth,
            report,
            frc_with,
        } => run_evaluate(&recon, &truth, &report, frc_with.as_deref()).map(|_| 0),
        Command::Gradcheck { config, samples, h } => gradcheck(config.as_deref(), samples, h),
    }
}

enum ProbeArg {
    Fixed(PathBuf),
    Init(PathBuf),
}

fn parse_probe(arg: Option<&str>) -> Result<Option<ProbeArg>> {
    let Some(s) = arg else { return Ok(None) };
    if let Some(p) = s.strip_prefix("fixed:") {
        Ok(Some(ProbeArg::Fixed(p.into())))
    } else if let Some(p) = s.strip_prefix("init:") {
        Ok(Some(ProbeArg::Init(p.into())))
    } else {
        Err(Error::InvalidConfig(format!("--probe expects fixed:PATH or init:PATH, got `{s}`")))
    }
}

fn simulate(config: &Path, out: &Path, w: &WriteOpts) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let phantom = make_phantom(&cfg.phantom)?;
    let fwhm = probe_fwhm_diameter(&phantom.probe)?;
    let step = cfg.scan.resolve_step(fwhm)?;
    let sim = build_dataset(&phantom, (step, step), &cfg.noise)?;
    let bundle = DatasetBundle {
        metadata: DatasetMetadata {
            object_shape: cfg.phantom.object_shape,
            probe_shape: cfg.phantom.probe_shape,
            step: (step, step),
            noise: sim.data.noise,
            physical: PhysicalMetadata::default(),
            phantom: Some(phantom.description.clone()),
            eval_margin: Some(cfg.phantom.margin()),
        },
        data: sim.data,
        truth_object: Some(phantom.object.clone()),
        truth_probe: Some(phantom.probe.clone()),
    };
    let mut c = bundle.to_container(cfg.to_value()?, Provenance::new(cfg.hash()?, cfg.phantom.seed))?;
    c.metrics.insert("probe_fwhm_px".into(), fwhm);
    c.files = field_previews("truth_object", &phantom.object)?;
    c.files.extend(field_previews("truth_probe", &phantom.probe)?);
    save_container(out, &c, w.force)?;
    if !w.quiet {
        eprintln!(
            "wrote {} ({} frames, step {step} px, probe FWHM {fwhm:.2} px)",
            out.display(),
            bundle.data.len()
        );
    }
    Ok(())
}

fn reconstruct(
    data: &Path,
    config: &Path,
    out: &Path,
    probe: Option<&str>,
    checkpoint: Option<PathBuf>,
    resume: Option<PathBuf>,
    w: &WriteOpts,
) -> Result<()> {
    let mut cfg = RunConfig::load(config)?;
    let bundle = DatasetBundle::load(data)?;
    let fixed = match parse_probe(probe)? {
        Some(ProbeArg::Fixed(p)) => {
            cfg.train.probe_mode = ProbeMode::Fixed;
            Some(load_probe(&p)?)
        }
        Some(ProbeArg::Init(_)) => {
            return Err(Error::InvalidConfig("reconstruct supports only --probe fixed:PATH".into()))
        }
        None if cfg.train.probe_mode == ProbeMode::Fixed => {
            return Err(Error::InvalidConfig("train.probe_mode is fixed but no --probe fixed:PATH given".into()))
        }
        None => None,
    };
    let mut trainer = Trainer::new(Arc::new(bundle.data), cfg.train.clone(), cfg.networks.clone(), fixed)?;
    if let Some(p) = checkpoint {
        trainer = trainer.with_checkpoint_path(p);
    }
    if let Some(p) = resume {
        trainer.load_checkpoint(&p)?;
    }
    let steps = cfg.train.steps;
    let every = (steps / 10).max(1);
    while trainer.step_index() < steps {
        let loss = trainer.step()?;
        let s = trainer.step_index();
        if !w.quiet && (s % every == 0 || s == steps) {
            eprintln!("step {s}/{steps} loss {loss:.4e}");
        }
    }
    let mut result = trainer.result()?;
    if let Some(&last) = result.loss_history.last() {
        result.metrics.insert("final_loss".into(), last);
    }
    result.metrics.insert("data_loss".into(), trainer.current_loss()?);
    write_recon(out, &result, &cfg, w)
}

fn write_recon(out: &Path, r: &crate::engine::ReconResult, cfg: &RunConfig, w: &WriteOpts) -> Result<()> {
    let mut c = recon_container(r, cfg.to_value()?)?;
    c.files = field_previews("object", &r.object)?;
    c.files.extend(field_previews("probe", &r.probe)?);
    save_container(out, &c, w.force)?;
    if !w.quiet {
        eprintln!("wrote {}", out.display());
    }
    Ok(())
}

fn epie(data: &Path, config: &Path, out: &Path, probe: Option<&str>, w: &WriteOpts) -> Result<()> {
    let mut cfg = RunConfig::load(config)?;
    let bundle = DatasetBundle::load(data)?;
    let (rows, cols) = bundle.metadata.object_shape;
    let (h, pw) = bundle.metadata.probe_shape;
    let init_probe = match parse_probe(probe)? {
        Some(ProbeArg::Fixed(p)) => {
            cfg.epie.probe_mode = ProbeMode::Fixed;
            load_probe(&p)?
        }
        Some(ProbeArg::Init(p)) => load_probe(&p)?,
        None if cfg.epie.probe_mode == ProbeMode::Fixed => {
            return Err(Error::InvalidConfig("epie.probe_mode is fixed but no --probe fixed:PATH given".into()))
        }
        // nominal spot size from the config, flat phase
        None => gaussian_probe((h, pw), cfg.phantom.probe_fwhm_fraction * h.min(pw) as f64),
    };
    let init_object = ComplexField::filled(rows, cols, Complex64::new(1.0, 0.0));
    let out_run = epie_reconstruct(&bundle.data, &init_object, &init_probe, &cfg.epie)?;
    let mut result = out_run.result;
    if let Some(&last) = out_run.fourier_errors.last() {
        result.metrics.insert("final_fourier_error".into(), last);
    }
    write_recon(out, &result, &cfg, w)
}

fn run_evaluate(recon: &Path, truth: &Path, report: &Path, frc_with: Option<&Path>) -> Result<()> {
    // read_manifest refuses any other format_version
    let truth_hash = read_manifest(truth)?.provenance.config_hash;
    let r = load_reconstruction(recon)?;
    let t = DatasetBundle::load(truth)?;
    let (Some(to), Some(tp)) = (&t.truth_object, &t.truth_probe) else {
        return Err(Error::Container(format!("{} carries no ground truth", truth.display())));
    };
    let margin = t
        .metadata
        .eval_margin
        .unwrap_or(t.metadata.probe_shape.0.min(t.metadata.probe_shape.1) / 2);
    let mut m = evaluate(&r.object, &r.probe, to, tp, margin)?;
    let mut extra = Vec::new();
    if let Some(other) = frc_with {
        let o = load_reconstruction(other)?;
        let (curve, res) = frc_between(&r.object, &o.object, margin)?;
        m.insert("frc_half_bit_cycles_per_px".into(), res);
        extra.push((report.with_extension("frc.csv"), curve.to_csv()));
    }
    let mut text = format!(
        "# recon_config_hash = {}\n# truth_config_hash = {}\n# version = {VERSION}\n",
        r.provenance.config_hash, truth_hash
    );
    text.push_str(&format_report(&m));
    write_atomic(report, text.as_bytes())?;
    for (p, body) in extra {
        write_atomic(&p, body.as_bytes())?;
    }
    print!("{}", format_report(&m));
    Ok(())
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("partial");
    let res = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    res.map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

fn gradcheck(config: Option<&Path>, samples: usize, h: f64) -> Result<i32> {
    let seed = match config {
        Some(p) => RunConfig::load(p)?.train.seed,
        None => 0,
    };
    let r = toy_gradcheck(&ToyGradcheck { samples, h, seed })?;
    println!("max_relative_error = {:e}", r.max_relative_error);
    println!("max_relative_error_smooth = {:e}", r.max_relative_error_smooth);
    println!("samples = {}", r.samples.len());
    println!("kinks = {}", r.kink_count());
    Ok(if r.max_relative_error < 1e-4 { 0 } else { 1 })
}
