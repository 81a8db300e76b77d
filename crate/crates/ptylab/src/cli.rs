//! Command-line entry points. Exit status: 0 success, 1 usage error,
//! 2 runtime failure; diagnostics go to standard error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use ptylab_core::evolution::{lineage, technique_timeline, LineageNode};
use ptylab_core::metrics::{evaluate_ground_truth, Aggregation, TierPolicy};
use ptylab_core::pipeline::{canonical_specs, PipelineRunner, PipelineSpec};
use ptylab_core::recon::{reconstruct, ReconConfig, Regularizer};
use ptylab_core::sim::{Archetype, SimSetup};
use serde_json::json;

use crate::config::SessionConfig;
use crate::error::{AppError, AppResult};
use crate::formats;
use crate::session::{Session, StopReason};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ArchetypeArg {
    Ic,
    Multislice,
    Apoferritin,
}

impl From<ArchetypeArg> for Archetype {
    fn from(a: ArchetypeArg) -> Self {
        match a {
            ArchetypeArg::Ic => Archetype::Ic,
            ArchetypeArg::Multislice => Archetype::Multislice,
            ArchetypeArg::Apoferritin => Archetype::Apoferritin,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "ptylab", version, about = "Ptychography regularizer discovery lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a phantom dataset.
    Simulate {
        #[arg(long, value_enum)]
        archetype: ArchetypeArg,
        #[arg(long, default_value_t = 64)]
        size: usize,
        /// Must match the archetype (2 for multislice, 1 otherwise).
        #[arg(long)]
        slices: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Mean photons per pattern; 0 for noiseless data. Defaults per archetype.
        #[arg(long)]
        photons: Option<f64>,
        /// Scan step in pixels. Defaults per archetype.
        #[arg(long)]
        step: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruct a dataset, optionally with a regularizer pipeline.
    Reconstruct {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, conflicts_with = "canonical")]
        pipeline: Option<PathBuf>,
        #[arg(long, value_enum)]
        canonical: Option<ArchetypeArg>,
        #[arg(long, default_value_t = 300)]
        epochs: usize,
        /// Overrides the pipeline's epoch_scale.
        #[arg(long)]
        epoch_scale: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run or resume a discovery session.
    Discover {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print the ancestry of a record and the technique timeline.
    Lineage {
        #[arg(long)]
        history: PathBuf,
        #[arg(long)]
        id: String,
    },
    /// Serve the evaluation API while the session's discovery loop runs.
    Serve {
        /// Directory holding `session.json`.
        #[arg(long)]
        session: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
}

pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn run(cmd: Command) -> AppResult<()> {
    match cmd {
        Command::Simulate {
            archetype,
            size,
            slices,
            seed,
            photons,
            step,
            out,
        } => simulate(archetype.into(), size, slices, seed, photons, step, &out),
        Command::Reconstruct {
            data,
            pipeline,
            canonical,
            epochs,
            epoch_scale,
            out,
        } => cmd_reconstruct(&data, pipeline.as_deref(), canonical.map(Into::into), epochs, epoch_scale, &out),
        Command::Discover { config } => discover(&config),
        Command::Lineage { history, id } => cmd_lineage(&history, &id),
        Command::Serve { session, port, host } => serve(&session, &host, port),
    }
}

fn simulate(
    archetype: Archetype,
    size: usize,
    slices: Option<usize>,
    seed: u64,
    photons: Option<f64>,
    step: Option<f64>,
    out: &Path,
) -> AppResult<()> {
    if let Some(s) = slices {
        if s != archetype.slices() {
            return Err(AppError::Usage(format!(
                "{} phantoms have {} slice(s), not {s}",
                archetype.as_str(),
                archetype.slices()
            )));
        }
    }
    let mut setup = SimSetup::for_archetype(archetype, size, seed);
    if let Some(p) = photons {
        if p < 0.0 {
            return Err(AppError::Usage("photons must be >= 0".into()));
        }
        setup.photons = (p > 0.0).then_some(p);
    }
    if let Some(s) = step {
        setup.step = s;
    }
    let ds = setup.build()?;
    formats::save_dataset(out, &ds)?;
    formats::write_json(&out.join("setup.json"), &setup)?;
    println!(
        "{} dataset: {} positions, overlap {:.3}, written to {}",
        archetype.as_str(),
        ds.scan.len(),
        ds.scan.overlap,
        out.display()
    );
    Ok(())
}

fn cmd_reconstruct(
    data: &Path,
    pipeline: Option<&Path>,
    canonical: Option<Archetype>,
    epochs: usize,
    epoch_scale: Option<f64>,
    out: &Path,
) -> AppResult<()> {
    let ds = formats::load_dataset(data)?;
    let spec: Option<PipelineSpec> = match (pipeline, canonical) {
        (Some(p), _) => {
            let text = std::fs::read_to_string(p).map_err(|e| AppError::io(p, e))?;
            Some(PipelineSpec::from_json(&text)?)
        }
        (None, Some(a)) => Some(canonical_specs().for_archetype(a).clone()),
        (None, None) => None,
    };
    let spec = spec.map(|s| match epoch_scale {
        Some(k) => s.with_epoch_scale(k),
        None => s,
    });
    let cfg = ReconConfig::new(epochs);
    let mut runner = spec.map(|s| PipelineRunner::new(s, ds.seed)).transpose()?;
    let recon = reconstruct(&ds, &cfg, runner.as_mut().map(|r| r as &mut dyn Regularizer))?;
    std::fs::create_dir_all(out).map_err(|e| AppError::io(out, e))?;
    formats::write_complex(&out.join("object.ptyf"), &recon.object)?;
    formats::write_complex(&out.join("probe.ptyf"), &recon.probe)?;
    formats::write_json(&out.join("trace.json"), &recon.trace)?;
    for s in 0..recon.object.shape().slices {
        std::fs::write(out.join(format!("phase-{s}.png")), formats::phase_png(&recon.object, s)?)
            .map_err(|e| AppError::io(out, e))?;
    }
    let final_loss = recon.trace.loss.last().copied().unwrap_or(f64::NAN);
    if ds.reference.is_some() {
        let eval = evaluate_ground_truth(&recon.object, ds.reference.as_ref(), Aggregation::Mean, &TierPolicy::default())?;
        formats::write_json(&out.join("metrics.json"), &eval)?;
        println!(
            "pipeline {}: final loss {final_loss:.4e}, mean SSIM {:.4} ({})",
            recon.trace.pipeline_id.as_deref().unwrap_or("baseline"),
            eval.score,
            eval.tier.as_str()
        );
    } else {
        println!("final loss {final_loss:.4e}");
    }
    Ok(())
}

fn stop_on_signals() -> AppResult<Arc<AtomicBool>> {
    let stop = Arc::new(AtomicBool::new(false));
    for sig in [signal_hook::consts::SIGINT, signal_hook::consts::SIGTERM] {
        signal_hook::flag::register(sig, stop.clone())?;
    }
    Ok(stop)
}

fn report(reason: &StopReason, session: &Session) {
    match reason {
        StopReason::Completed => eprintln!("session complete"),
        StopReason::Interrupted => eprintln!(
            "interrupted at generation {}; checkpoint written, rerun to resume",
            session.state.next_generation
        ),
        StopReason::Paused(m) => eprintln!("paused: {m}; checkpoint written, rerun to resume"),
    }
}

fn discover(config: &Path) -> AppResult<()> {
    let cfg = SessionConfig::load(config)?;
    let mut session = Session::open(cfg)?;
    let stop = stop_on_signals()?;
    let shared_stop = session.shared.stop.clone();
    std::thread::spawn(move || loop {
        if stop.load(std::sync::atomic::Ordering::SeqCst) {
            shared_stop.store(true, std::sync::atomic::Ordering::SeqCst);
            break;
        }
        std::thread::sleep(std::time::Duration::from_millis(100));
    });
    let (reason, summary) = session.run_configured()?;
    print!("{}", summary.table());
    report(&reason, &session);
    match reason {
        StopReason::Paused(m) => Err(AppError::Http(m)),
        _ => Ok(()),
    }
}

fn render_tree(node: &LineageNode, depth: usize, out: &mut String) {
    let pad = "  ".repeat(depth);
    if node.known {
        let score = node.score.map_or("failed".to_string(), |s| format!("{s:.4}"));
        let _ = writeln!(
            out,
            "{pad}{} gen {} {} score {score} [{}]",
            node.id,
            node.generation.unwrap_or(0),
            node.action.map_or("", |a| a.as_str()),
            node.technique_tags.join(", ")
        );
    } else {
        let _ = writeln!(out, "{pad}{} (not in history)", node.id);
    }
    for p in &node.parents {
        render_tree(p, depth + 1, out);
    }
}

fn cmd_lineage(history: &Path, id: &str) -> AppResult<()> {
    let records = formats::read_history(history)?;
    let tree = lineage(&records, id)?;
    let mut text = String::new();
    render_tree(&tree, 0, &mut text);
    print!("{text}");
    let doc = json!({ "lineage": tree, "technique_timeline": technique_timeline(&records) });
    println!("{}", serde_json::to_string_pretty(&doc)?);
    Ok(())
}

fn serve(dir: &Path, host: &str, port: u16) -> AppResult<()> {
    let cfg = SessionConfig::load(&dir.join("session.json"))?;
    let mut session = Session::open(cfg)?;
    let shared = session.shared.clone();
    let signals = stop_on_signals()?;
    let rt = tokio::runtime::Runtime::new()?;
    let listener = rt.block_on(tokio::net::TcpListener::bind((host, port)))?;
    eprintln!("serving on http://{}", listener.local_addr()?);
    let loop_thread = std::thread::spawn(move || {
        let result = session.run_configured();
        if let Ok((reason, _)) = &result {
            report(reason, &session);
        }
        result.map(|_| ())
    });
    let stop = shared.stop.clone();
    std::thread::spawn(move || loop {
        if signals.load(std::sync::atomic::Ordering::SeqCst) {
            stop.store(true, std::sync::atomic::Ordering::SeqCst);
            break;
        }
        std::thread::sleep(std::time::Duration::from_millis(100));
    });
    rt.block_on(crate::server::serve(listener, shared))?;
    loop_thread
        .join()
        .map_err(|_| AppError::Format("discovery thread panicked".into()))?
}
