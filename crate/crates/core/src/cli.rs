//! Command-line entry points.
//!
//! Exit codes: 0 success, 2 worker could not reach (or lost) its master,
//! 3 protocol violation on the wire, 64 usage error. Benchmarks write CSV to
//! stdout (or `--out`), with human-readable progress on stderr.

use std::fs::File;
use std::io::{self, Write};
use std::sync::Arc;
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand};

use crate::backend::local::LocalBackend;
use crate::backend::sim::{SimBackend, SimScript};
use crate::backend::{Backend, ENV_HEARTBEAT_MS, ENV_MASTER_ADDR, ENV_WORKER_ID};
use crate::pool::{Pool, PoolConfig, PoolError};
use crate::task::WorkerId;
use crate::worker::{run_worker, WorkerError, WorkerOptions, DEFAULT_HEARTBEAT_INTERVAL};
use crate::workloads::es::{run_es, run_es_sequential, EsConfig, EsOutcome};
use crate::workloads::overhead::{run_overhead, OverheadConfig};
use crate::workloads::pi::{run_pi, sequential_pi};
use crate::workloads::{builtin_registry, encode_u64, SLEEP_MS};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_WORKER_CONNECT: i32 = 2;
pub const EXIT_PROTOCOL: i32 = 3;
pub const EXIT_USAGE: i32 = 64;

#[derive(Parser)]
#[command(
    name = "taskforge",
    version,
    about = "Master-worker task execution: workers, benchmarks, demos"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a worker; configured entirely through environment variables
    /// (TASKFORGE_MASTER_ADDR, TASKFORGE_WORKER_ID, TASKFORGE_HEARTBEAT_MS).
    Worker,
    /// Measure framework overhead across a sweep of task durations.
    BenchOverhead(BenchOverheadArgs),
    /// Distributed evolution strategies on the sphere objective.
    BenchEs(BenchEsArgs),
    /// Kill workers mid-run and prove no work is lost.
    BenchFault(BenchFaultArgs),
    /// Estimate pi; the answer must not depend on the worker count.
    DemoPi(DemoPiArgs),
}

#[derive(Args)]
struct BenchOverheadArgs {
    /// Worker processes to run (the batch is sized for exactly this many).
    #[arg(long, default_value_t = 5)]
    workers: usize,
    /// Task durations to sweep, in milliseconds.
    #[arg(long, value_delimiter = ',', default_value = "1000,100,10,1")]
    durations_ms: Vec<u64>,
    /// Ideal wall-clock per batch, in milliseconds.
    #[arg(long, default_value_t = 1000)]
    target_ms: u64,
    /// Measured repetitions per duration (plus one warmup).
    #[arg(long, default_value_t = 5)]
    reps: usize,
    /// Per-worker in-flight task window.
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
    /// Write CSV here instead of stdout.
    #[arg(long)]
    out: Option<String>,
    /// Run workers as in-process simulated threads instead of OS processes.
    #[arg(long)]
    sim: bool,
}

#[derive(Args)]
struct BenchEsArgs {
    #[arg(long, default_value_t = 4)]
    workers: usize,
    #[arg(long, default_value_t = 10)]
    dim: usize,
    #[arg(long, default_value_t = 64)]
    population: usize,
    #[arg(long, default_value_t = 0.1)]
    sigma: f64,
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    iterations: usize,
    /// Norm of the starting point.
    #[arg(long, default_value_t = 5.0)]
    theta0_norm: f64,
    /// Extra milliseconds of busy-work per evaluation (models an expensive
    /// rollout; useful for scaling experiments).
    #[arg(long, default_value_t = 0)]
    busy_ms: u64,
    /// Write the trajectory CSV here instead of stdout.
    #[arg(long)]
    out: Option<String>,
    /// Evaluate in-process with no pool at all (the determinism oracle).
    #[arg(long)]
    sequential: bool,
    /// Run workers as in-process simulated threads instead of OS processes.
    #[arg(long)]
    sim: bool,
}

#[derive(Args)]
struct BenchFaultArgs {
    #[arg(long, default_value_t = 4)]
    workers: usize,
    #[arg(long, default_value_t = 200)]
    tasks: usize,
    /// Workers to kill while the batch runs.
    #[arg(long, default_value_t = 2)]
    kills: usize,
    /// Duration of each task, in milliseconds.
    #[arg(long, default_value_t = 10)]
    task_ms: u64,
    /// Run workers as in-process simulated threads with scripted deaths
    /// (deterministic: victims always die holding a task). Without this,
    /// real worker processes are killed mid-run on a timer.
    #[arg(long)]
    sim: bool,
}

#[derive(Args)]
struct DemoPiArgs {
    #[arg(long, default_value_t = 4)]
    workers: usize,
    #[arg(long, default_value_t = 1_000_000)]
    samples: u64,
    #[arg(long, default_value_t = 64)]
    chunks: u64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Run workers as in-process simulated threads instead of OS processes.
    #[arg(long)]
    sim: bool,
}

/// Parses argv and runs; the return value is the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match cli.cmd {
        Command::Worker => worker_main(),
        Command::BenchOverhead(args) => bench_overhead(args),
        Command::BenchEs(args) => bench_es(args),
        Command::BenchFault(args) => bench_fault(args),
        Command::DemoPi(args) => demo_pi(args),
    }
}

fn worker_main() -> i32 {
    let addr = match std::env::var(ENV_MASTER_ADDR) {
        Ok(a) if !a.is_empty() => a,
        _ => {
            eprintln!("taskforge worker: {ENV_MASTER_ADDR} must be set to the master address");
            return EXIT_WORKER_CONNECT;
        }
    };
    let worker_id = match std::env::var(ENV_WORKER_ID).ok().and_then(|s| s.parse::<u32>().ok()) {
        Some(id) => WorkerId::new(id),
        None => {
            eprintln!("taskforge worker: {ENV_WORKER_ID} must be set to a numeric worker id");
            return EXIT_WORKER_CONNECT;
        }
    };
    let heartbeat_interval = std::env::var(ENV_HEARTBEAT_MS)
        .ok()
        .and_then(|s| s.parse::<u64>().ok())
        .map(Duration::from_millis)
        .unwrap_or(DEFAULT_HEARTBEAT_INTERVAL);

    let registry = builtin_registry();
    let opts = WorkerOptions { master_addr: addr, worker_id, heartbeat_interval };
    match run_worker(opts, &registry) {
        Ok(()) => EXIT_OK,
        Err(e @ WorkerError::Connect { .. }) | Err(e @ WorkerError::ConnectionLost(_)) => {
            eprintln!("taskforge worker: {e}");
            EXIT_WORKER_CONNECT
        }
        Err(e @ WorkerError::Protocol(_)) => {
            eprintln!("taskforge worker: {e}");
            EXIT_PROTOCOL
        }
    }
}

/// stdout or a file, as asked.
fn csv_sink(out: &Option<String>) -> io::Result<Box<dyn Write>> {
    Ok(match out {
        Some(path) => Box::new(File::create(path)?),
        None => Box::new(io::stdout()),
    })
}

fn make_backend(sim: bool) -> Arc<dyn Backend> {
    if sim {
        Arc::new(SimBackend::new(Arc::new(builtin_registry()), SimScript::none()))
    } else {
        Arc::new(LocalBackend::new())
    }
}

fn create_pool(workers: usize, batch_size: usize, sim: bool) -> Result<Pool, PoolError> {
    let cfg = PoolConfig { workers, batch_size, ..PoolConfig::default() };
    Pool::create(make_backend(sim), cfg)
}

fn fail(context: &str, e: &dyn std::fmt::Display) -> i32 {
    eprintln!("taskforge {context}: {e}");
    EXIT_FAILURE
}

fn bench_overhead(args: BenchOverheadArgs) -> i32 {
    if args.workers == 0 || args.reps == 0 || args.durations_ms.is_empty() {
        eprintln!("taskforge bench-overhead: workers, reps, and durations must be positive");
        return EXIT_USAGE;
    }
    let mut sink = match csv_sink(&args.out) {
        Ok(s) => s,
        Err(e) => return fail("bench-overhead", &e),
    };
    let pool = match create_pool(args.workers, args.batch_size, args.sim) {
        Ok(p) => p,
        Err(e) => return fail("bench-overhead", &e),
    };

    let mut code = EXIT_OK;
    let _ = writeln!(sink, "duration_ms,workers,batch,ideal_ms,rep,measured_ms,ratio");
    for &duration_ms in &args.durations_ms {
        let cfg = OverheadConfig {
            task_duration: Duration::from_millis(duration_ms),
            workers: args.workers,
            target_total: Duration::from_millis(args.target_ms),
            repetitions: args.reps,
        };
        let report = match run_overhead(&pool, &cfg) {
            Ok(r) => r,
            Err(e) => {
                code = fail("bench-overhead", &e);
                break;
            }
        };
        for (rep, measured) in report.measured.iter().enumerate() {
            let _ = writeln!(
                sink,
                "{},{},{},{},{},{:.3},{:.4}",
                duration_ms,
                report.workers,
                report.batch,
                report.ideal.as_millis(),
                rep,
                measured.as_secs_f64() * 1000.0,
                measured.as_secs_f64() / report.ideal.as_secs_f64(),
            );
        }
        eprintln!(
            "bench-overhead: {duration_ms}ms tasks x{batch}: median {median:.1}ms over ideal {ideal}ms (ratio {ratio:.3})",
            batch = report.batch,
            median = report.median.as_secs_f64() * 1000.0,
            ideal = report.ideal.as_millis(),
            ratio = report.ratio,
        );
    }
    pool.shutdown();
    code
}

fn write_es_csv(sink: &mut dyn Write, outcome: &EsOutcome) {
    let _ = writeln!(sink, "iteration,reward,theta_norm");
    for rec in &outcome.trajectory {
        let _ = writeln!(sink, "{},{},{}", rec.iteration, rec.reward, rec.theta_norm);
    }
}

fn bench_es(args: BenchEsArgs) -> i32 {
    if args.workers == 0 {
        eprintln!("taskforge bench-es: workers must be positive");
        return EXIT_USAGE;
    }
    let cfg = EsConfig {
        dim: args.dim,
        population: args.population,
        sigma: args.sigma,
        alpha: args.alpha,
        seed: args.seed,
        iterations: args.iterations,
        theta0_norm: args.theta0_norm,
        busy_work: Duration::from_millis(args.busy_ms),
        ..EsConfig::default()
    };
    let start = Instant::now();
    let outcome = if args.sequential {
        run_es_sequential(&cfg)
    } else {
        match create_pool(args.workers, 8, args.sim) {
            Ok(pool) => {
                let out = run_es(&pool, &cfg);
                pool.shutdown();
                out
            }
            Err(e) => return fail("bench-es", &e),
        }
    };
    let outcome = match outcome {
        Ok(o) => o,
        Err(e) => return fail("bench-es", &e),
    };
    let mut sink = match csv_sink(&args.out) {
        Ok(s) => s,
        Err(e) => return fail("bench-es", &e),
    };
    write_es_csv(&mut sink, &outcome);
    let last = outcome.trajectory.last().expect("trajectory has the start point");
    eprintln!(
        "bench-es: {} iterations in {:.2}s, final ||theta|| = {:.6}",
        args.iterations,
        start.elapsed().as_secs_f64(),
        last.theta_norm,
    );
    EXIT_OK
}

fn bench_fault(args: BenchFaultArgs) -> i32 {
    if args.workers == 0 || args.tasks == 0 {
        eprintln!("taskforge bench-fault: workers and tasks must be positive");
        return EXIT_USAGE;
    }
    let backend: Arc<dyn Backend> = if args.sim {
        // Victims die while holding a task, staggered through the run.
        let mut script = SimScript::none();
        for k in 0..args.kills {
            let after = (k + 1) * args.tasks / (args.workers * (args.kills + 1));
            script = script.with_fail(k, after);
        }
        Arc::new(SimBackend::new(Arc::new(builtin_registry()), script))
    } else {
        Arc::new(LocalBackend::new())
    };
    let pool = match Pool::create(backend, PoolConfig::with_workers(args.workers)) {
        Ok(p) => p,
        Err(e) => return fail("bench-fault", &e),
    };

    // On real processes, kill on a timer from a side thread.
    let killer = (!args.sim).then(|| {
        let pool = pool.clone();
        let kills = args.kills;
        let spacing = Duration::from_millis(args.task_ms * 4 + 50);
        std::thread::spawn(move || {
            for _ in 0..kills {
                std::thread::sleep(spacing);
                if let Some(victim) = pool.worker_ids().first().copied() {
                    let _ = pool.kill_worker(victim);
                }
            }
        })
    });

    let inputs: Vec<Vec<u8>> = std::iter::repeat(encode_u64(args.task_ms)).take(args.tasks).collect();
    let start = Instant::now();
    let result = pool.map(SLEEP_MS, inputs);
    let elapsed = start.elapsed();
    if let Some(k) = killer {
        let _ = k.join();
    }
    let stats = pool.shutdown();

    let ok = match result {
        Ok(outputs) => {
            let all_echoed = outputs.len() == args.tasks
                && outputs.iter().all(|o| o == &encode_u64(args.task_ms));
            if !all_echoed {
                eprintln!("bench-fault: outputs corrupted");
            }
            all_echoed
        }
        Err(e) => {
            eprintln!("bench-fault: map failed: {e}");
            false
        }
    };

    println!("tasks={}", args.tasks);
    println!("kills={}", args.kills);
    println!("completed={}", stats.completed);
    println!("resubmissions={}", stats.resubmissions);
    println!("failed_attempts={}", stats.failed_attempts);
    println!("poisoned={}", stats.poisoned);
    println!("elapsed_ms={:.1}", elapsed.as_secs_f64() * 1000.0);

    let mut healthy = ok && stats.poisoned == 0 && stats.completed == args.tasks as u64;
    if args.sim && stats.resubmissions < args.kills as u64 {
        eprintln!(
            "bench-fault: expected at least {} resubmissions from scripted deaths, saw {}",
            args.kills, stats.resubmissions
        );
        healthy = false;
    }
    if healthy {
        eprintln!(
            "bench-fault: {} tasks survived {} worker deaths in {:.2}s",
            args.tasks,
            args.kills,
            elapsed.as_secs_f64()
        );
        EXIT_OK
    } else {
        EXIT_FAILURE
    }
}

fn demo_pi(args: DemoPiArgs) -> i32 {
    if args.workers == 0 {
        eprintln!("taskforge demo-pi: workers must be positive");
        return EXIT_USAGE;
    }
    let pool = match create_pool(args.workers, 8, args.sim) {
        Ok(p) => p,
        Err(e) => return fail("demo-pi", &e),
    };
    let distributed = run_pi(&pool, args.seed, args.samples, args.chunks);
    pool.shutdown();
    let distributed = match distributed {
        Ok(v) => v,
        Err(e) => return fail("demo-pi", &e),
    };
    let sequential = match sequential_pi(args.seed, args.samples, args.chunks) {
        Ok(v) => v,
        Err(e) => return fail("demo-pi", &e),
    };
    println!(
        "pi ~= {distributed:.8} ({} samples, {} chunks, seed {}, {} workers)",
        args.samples, args.chunks, args.seed, args.workers
    );
    if distributed.to_bits() == sequential.to_bits() {
        println!("sequential check: identical");
        EXIT_OK
    } else {
        println!("sequential check: MISMATCH (sequential said {sequential:.8})");
        EXIT_FAILURE
    }
}
