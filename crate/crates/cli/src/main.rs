use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use perishable_core::beliefs::Experiment;
use perishable_core::clearing::{
    build_auction_graph, exact_max_weight_matching, greedy_matching, ExactMode, EXHAUSTIVE_LIMIT,
};
use perishable_core::sim::generate::random_book;
use perishable_core::sim::{self, Scenario, Trace};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(name = "perishable", version, about = "Simulate and check a market for expiring goods")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its trace and summary.
    Run {
        scenario: PathBuf,
        /// Overrides the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run a scenario and check every invariant; exits 1 on any failure.
    Verify { scenario: PathBuf },
    /// Summarize a trace file.
    Report { trace: PathBuf },
    /// Run a beliefs experiment and print the honesty table.
    Beliefs {
        experiment: PathBuf,
        /// Also write honesty.csv and density.csv here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare greedy clearing with the exact optimum on random books.
    ClearingBench {
        /// Largest number of units (and of bids) per book.
        #[arg(long, default_value_t = 8)]
        max_size: usize,
        /// Books per size.
        #[arg(long, default_value_t = 1000)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { scenario, seed, out } => run(&scenario, seed, &out),
        Command::Verify { scenario } => verify(&scenario),
        Command::Report { trace } => report(&trace),
        Command::Beliefs { experiment, out } => beliefs(&experiment, out.as_deref()),
        Command::ClearingBench {
            max_size,
            instances,
            seed,
        } => clearing_bench(max_size, instances, seed),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn run(path: &Path, seed: Option<u64>, out: &Path) -> Result<bool> {
    let scenario = Scenario::load(path)?;
    let output = match seed {
        Some(s) => sim::run_with_seed(&scenario, s)?,
        None => sim::run(&scenario)?,
    };
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    output.trace.write_csv(create(&out.join("trace.csv"))?)?;
    output.public_trace().write_csv(create(&out.join("public_trace.csv"))?)?;
    let summary = sim::report(&output.trace)?;
    fs::write(out.join("summary.toml"), summary.to_toml())?;
    println!(
        "{} events, {} units sold, written to {}",
        output.trace.len(),
        summary.volume.total_units(),
        out.display()
    );
    Ok(true)
}

fn verify(path: &Path) -> Result<bool> {
    let scenario = Scenario::load(path)?;
    let report = sim::verify(&scenario)?;
    print!("{report}");
    Ok(report.passed())
}

fn report(path: &Path) -> Result<bool> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let trace = Trace::read_csv(BufReader::new(file))?;
    print!("{}", sim::report(&trace)?.to_toml());
    Ok(true)
}

fn beliefs(path: &Path, out: Option<&Path>) -> Result<bool> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let report = Experiment::from_toml(&text)?.run()?;
    let t = &report.table;
    let mut stdout = io::stdout().lock();
    writeln!(stdout, "replicas = {}", t.replicas)?;
    writeln!(stdout, "mean_c = {}", t.mean_c)?;
    writeln!(stdout, "se_c = {}", t.se_c)?;
    writeln!(stdout, "bias = {}", t.bias)?;
    writeln!(stdout, "geometric_mean_of_means = {}", t.geometric_mean_of_means)?;
    if let Some(d) = &report.density {
        writeln!(stdout, "density_discrepancy = {}", d.discrepancy)?;
    }
    writeln!(stdout)?;
    t.write_csv(&mut stdout)?;

    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        t.write_csv(create(&dir.join("honesty.csv"))?)?;
        if let Some(d) = &report.density {
            let mut w = create(&dir.join("density.csv"))?;
            writeln!(w, "lo,hi,observed,predicted")?;
            for (i, e) in d.edges.windows(2).enumerate() {
                writeln!(w, "{},{},{},{}", e[0], e[1], d.observed[i], d.predicted[i])?;
            }
        }
    }
    Ok(true)
}

fn clearing_bench(max_size: usize, instances: usize, seed: u64) -> Result<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ok = true;
    println!("size,instances,mean_ratio,min_ratio,max_iterations,bound,greedy_us,exact_us,solver");
    for size in 1..=max_size {
        let mode = if 2 * size <= EXHAUSTIVE_LIMIT {
            ExactMode::Exhaustive {
                limit: EXHAUSTIVE_LIMIT,
            }
        } else {
            ExactMode::Hungarian
        };
        let (mut sum, mut min, mut counted) = (0.0, f64::INFINITY, 0usize);
        let mut max_iter = 0;
        let (mut t_greedy, mut t_exact) = (Duration::ZERO, Duration::ZERO);
        for _ in 0..instances {
            let (units, bids) = random_book(&mut rng, size, size, 20);
            let start = Instant::now();
            let g = greedy_matching(&units, &bids);
            t_greedy += start.elapsed();
            let start = Instant::now();
            let exact = exact_max_weight_matching(&build_auction_graph(&units, &bids), mode)?;
            t_exact += start.elapsed();
            max_iter = max_iter.max(g.iterations);
            if exact.weight() > 0.0 {
                let r = g.matching.weight() / exact.weight();
                sum += r;
                min = f64::min(min, r);
                counted += 1;
            }
        }
        let mean = if counted > 0 { sum / counted as f64 } else { 1.0 };
        let min = if counted > 0 { min } else { 1.0 };
        ok &= min >= 0.5 && max_iter <= 2 * size;
        let per = |d: Duration| d.as_secs_f64() * 1e6 / instances.max(1) as f64;
        let solver = match mode {
            ExactMode::Exhaustive { .. } => "exhaustive",
            ExactMode::Hungarian => "hungarian",
        };
        println!(
            "{size},{instances},{mean},{min},{max_iter},{},{:.2},{:.2},{solver}",
            2 * size,
            per(t_greedy),
            per(t_exact)
        );
    }
    Ok(ok)
}
