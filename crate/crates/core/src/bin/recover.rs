use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use dd_sparse::bp::write_trace_csv;
use dd_sparse::harness::{self, selftest, Algorithm, Decoder, ExperimentConfig, Instance};
use dd_sparse::model::{snr_db, NoiseModel};
use dd_sparse::Error;

#[derive(Parser)]
#[command(name = "recover", about = "Detection-directed sparse recovery experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte-Carlo SNR sweep; writes CSV to the configured output or stdout.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the `output` key of the config.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Recover a single instance and print its metrics.
    Once {
        #[arg(long, allow_hyphen_values = true)]
        snr: f64,
        #[arg(long)]
        algo: Algorithm,
        #[arg(long)]
        seed: u64,
        /// Write the per-iteration marginal of this variable as CSV.
        #[arg(long)]
        dump_marginal: Option<usize>,
        /// Destination of the marginal trace (default: stdout).
        #[arg(long)]
        dump_out: Option<PathBuf>,
        /// Model and engine settings; the desk preset when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run the oracle-equivalence suites.
    Selftest {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn load_config(path: &PathBuf) -> Result<ExperimentConfig, Error> {
    let text = fs::read_to_string(path)?;
    ExperimentConfig::parse(&text)
}

fn sweep(config: PathBuf, output: Option<PathBuf>) -> Result<(), Error> {
    let mut cfg = load_config(&config)?;
    if output.is_some() {
        cfg.output = output;
    }
    let rows = harness::run_sweep(&cfg)?;
    for r in rows.iter().filter(|r| r.failed > 0) {
        eprintln!("{} at {} dB: {} trial(s) failed and were excluded", r.algo, r.snr_db, r.failed);
    }
    match &cfg.output {
        Some(path) => harness::write_csv(&rows, BufWriter::new(File::create(path)?)),
        None => harness::write_csv(&rows, io::stdout().lock()),
    }
}

fn once(
    snr: f64,
    algo: Algorithm,
    seed: u64,
    dump: Option<usize>,
    dump_out: Option<PathBuf>,
    config: Option<PathBuf>,
) -> Result<(), Error> {
    let mut cfg = match config {
        Some(p) => load_config(&p)?,
        None => ExperimentConfig::desk(),
    };
    cfg.seed = seed;
    cfg.validate()?;
    let decoder = Decoder::new(&cfg)?;
    let inst = Instance::generate(&cfg, snr, 0)?;
    let result = decoder.recover(algo, &inst)?;
    let realized = snr_db(&inst.matrix, &inst.signal, NoiseModel::new(inst.sigma_n)?)?;
    println!("algo        {algo}");
    println!("snr_db      {snr} (realized {realized:.3})");
    println!("sigma_n     {}", inst.sigma_n);
    println!("k_true      {}", inst.signal.sparsity());
    println!("k_detected  {}", result.s_hat.count());
    println!("ser         {}", result.ser);
    println!("nmse        {}", result.nmse);
    if let Some(i) = dump {
        if i >= cfg.model.n {
            return Err(Error::InvalidParameter(format!("variable {i} out of range")));
        }
        let out = decoder.marginals(&inst, !algo.uses_blind_bp(), Some(i))?;
        let d = out.diagnostics;
        println!("wrapped     {}", d.wrapped_means);
        println!("underflow   {}", d.underflow_fallbacks);
        match dump_out {
            Some(path) => write_trace_csv(&out.trace, BufWriter::new(File::create(path)?))?,
            None => write_trace_csv(&out.trace, io::stdout().lock())?,
        }
    }
    Ok(())
}

fn run_selftest(seed: u64) -> Result<bool, Error> {
    let checks = selftest::run_all(seed)?;
    for c in &checks {
        println!("{c}");
    }
    Ok(checks.iter().all(|c| c.passed))
}

fn exit_code(e: &Error) -> ExitCode {
    match e {
        Error::Numerical(_) => ExitCode::from(2),
        _ => ExitCode::from(1),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => e.exit(),
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    let result = match cli.command {
        Command::Sweep { config, output } => sweep(config, output),
        Command::Once { snr, algo, seed, dump_marginal, dump_out, config } => {
            once(snr, algo, seed, dump_marginal, dump_out, config)
        }
        Command::Selftest { seed } => match run_selftest(seed) {
            Ok(true) => Ok(()),
            Ok(false) => Err(Error::Numerical("self-test failed".into())),
            Err(e) => Err(e),
        },
    };
    match result {
        Ok(()) => {
            let _ = io::stdout().flush();
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
