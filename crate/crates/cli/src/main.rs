//! `mixedfem` — run scenes, write OBJ frames and per-iteration statistics,
//! benchmark, and execute the validation suite.

use anyhow::{bail, Context as _, Result};
use clap::{Args, Parser, Subcommand};
use mixedfem::mesh::write_obj_frame;
use mixedfem::validation::{self, Context};
use mixedfem::{SceneConfig, Simulation, SubstepStats};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

#[derive(Parser)]
#[command(name = "mixedfem", version, about = "Mixed finite-element simulation of elastic volumes, shells and rods")]
struct Cli {
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, env = "MIXEDFEM_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scene, writing `frame_%05d.obj` and `stats.csv` to `--out`.
    Run(RunArgs),
    /// Run the oracle and invariant checks; exits non-zero on any failure.
    Validate(ValidateArgs),
    /// Simulate a scene and print mean per-step timings.
    Bench(BenchArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Scene description (TOML).
    #[arg(long)]
    scene: PathBuf,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Number of timesteps (defaults to the scene's `frames`, else 100).
    #[arg(long)]
    frames: Option<usize>,
    /// Write a frame every `stride` steps.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    stride: u64,
    /// Seed for the scene's random initial perturbation.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write zeros in the timing columns so runs are byte-for-byte comparable.
    #[arg(long)]
    no_timing: bool,
}

#[derive(Args)]
struct ValidateArgs {
    /// A module name (runs that module's checks) or a substring of `module.name` ids.
    #[arg(long)]
    filter: Option<String>,
    /// Seed for randomized checks.
    #[arg(long, default_value_t = Context::default().seed)]
    seed: u64,
    /// Skip the scenario checks that take seconds to minutes.
    #[arg(long)]
    quick: bool,
    /// List the selected checks without running them.
    #[arg(long)]
    list: bool,
    /// Flip the sign of the stretch-gradient term in the global right-hand
    /// side (mutation test: the dense oracle must fail).
    #[arg(long, hide = true)]
    mutate_rhs_sign: bool,
}

#[derive(Args)]
struct BenchArgs {
    /// Scene description (TOML).
    #[arg(long)]
    scene: PathBuf,
    /// Number of timesteps (defaults to the scene's `frames`, else 100).
    #[arg(long)]
    frames: Option<usize>,
    /// Seed for the scene's random initial perturbation.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads(cli.threads).and_then(|()| match cli.command {
        Command::Run(args) => run(&args),
        Command::Validate(args) => validate(&args),
        Command::Bench(args) => bench(&args),
    });
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn configure_threads(threads: Option<usize>) -> Result<()> {
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    Ok(())
}

fn load(scene_path: &Path, seed: u64) -> Result<(SceneConfig, Simulation<f64>)> {
    let config = SceneConfig::from_path(scene_path)?;
    let base = scene_path.parent().unwrap_or(Path::new("."));
    let (scene, step) = config.build::<f64>(base, seed)?;
    let sim = Simulation::new(scene, step)?;
    Ok((config, sim))
}

fn write_frame(dir: &Path, index: usize, sim: &Simulation<f64>, faces: &[[usize; 3]], lines: &[[usize; 2]]) -> Result<()> {
    let path = dir.join(format!("frame_{index:05}.obj"));
    let mut out = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
    write_obj_frame(&mut out, &sim.state().q, faces, lines)?;
    out.flush()?;
    Ok(())
}

fn run(args: &RunArgs) -> Result<bool> {
    let (config, mut sim) = load(&args.scene, args.seed)?;
    let steps = args.frames.or(config.frames).unwrap_or(100);
    let stride = args.stride as usize;
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let (faces, lines) = sim.scene().output_topology();

    let stats_path = args.out.join("stats.csv");
    let mut stats = BufWriter::new(File::create(&stats_path).with_context(|| format!("creating {}", stats_path.display()))?);
    writeln!(stats, "{}", SubstepStats::CSV_HEADER)?;

    write_frame(&args.out, 0, &sim, &faces, &lines)?;
    for k in 1..=steps {
        let step = sim.step().with_context(|| format!("step {k} of {steps}"))?;
        for row in &step.substeps {
            writeln!(stats, "{}", row.csv_row(!args.no_timing))?;
        }
        if step.substeps.iter().any(|r| !r.is_finite()) {
            stats.flush()?;
            bail!("step {k}: non-finite statistics");
        }
        if k % stride == 0 {
            write_frame(&args.out, k / stride, &sim, &faces, &lines)?;
        }
    }
    stats.flush()?;
    eprintln!(
        "{} steps of {} ({} {} elements) -> {}",
        steps,
        args.scene.display(),
        sim.mesh().num_elements(),
        sim.mesh().kind().name(),
        args.out.display()
    );
    Ok(true)
}

fn validate(args: &ValidateArgs) -> Result<bool> {
    let checks: Vec<_> = validation::select(args.filter.as_deref())
        .into_iter()
        .filter(|c| !(args.quick && c.slow))
        .collect();
    if checks.is_empty() {
        bail!("no checks match filter {:?}", args.filter.as_deref().unwrap_or(""));
    }
    if args.list {
        for c in &checks {
            println!("{}{}", c.id(), if c.slow { " (slow)" } else { "" });
        }
        return Ok(true);
    }
    let ctx = Context {
        seed: args.seed,
        mutate_rhs_sign: args.mutate_rhs_sign,
    };
    let mut failed = 0;
    for c in &checks {
        let o = validation::run_check(c, &ctx);
        println!("{} {} ({:.2}s): {}", if o.passed { "PASS" } else { "FAIL" }, o.id, o.seconds, o.detail);
        failed += usize::from(!o.passed);
    }
    println!("{} checks, {} passed, {} failed", checks.len(), checks.len() - failed, failed);
    Ok(failed == 0)
}

fn bench(args: &BenchArgs) -> Result<bool> {
    let start = Instant::now();
    let (config, mut sim) = load(&args.scene, args.seed)?;
    let setup = start.elapsed().as_secs_f64();
    let steps = args.frames.or(config.frames).unwrap_or(100);

    let (mut assembly, mut kkt, mut rotation, mut cg_iters, mut rows) = (0.0, 0.0, 0.0, 0usize, 0usize);
    let t = Instant::now();
    for k in 1..=steps {
        let step = sim.step().with_context(|| format!("step {k} of {steps}"))?;
        for r in &step.substeps {
            assembly += r.assembly_ms;
            kkt += r.kkt_solve_ms;
            rotation += r.rotation_ms;
            cg_iters += r.cg_iters;
            rows += 1;
        }
    }
    let total = t.elapsed().as_secs_f64();
    let per_step = |v: f64| v / steps.max(1) as f64;
    println!("scene            {}", args.scene.display());
    println!("elements         {} {}", sim.mesh().num_elements(), sim.mesh().kind().name());
    println!("vertices         {}", sim.mesh().num_vertices());
    println!("material         {:?}", config.material.model);
    println!("setup            {:.1} ms", setup * 1e3);
    println!("steps            {steps}");
    println!("substeps/step    {:.1}", rows as f64 / steps.max(1) as f64);
    println!("ms/step          {:.2}", per_step(total * 1e3));
    println!("  assembly       {:.2}", per_step(assembly));
    println!("  KKT solve      {:.2}", per_step(kkt));
    println!("  rotations      {:.2}", per_step(rotation));
    println!("CG iters/solve   {:.1}", cg_iters as f64 / rows.max(1) as f64);
    Ok(true)
}
