//! Throughput/latency sweeps over the simulated NIC.
//!
//! `TINYRING_PAGE_SIZE` overrides the simulated page size.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use tinyring::bench::{self, report, Bench, BenchError, LoadPointResult, DEFAULT_LOSS_BOUND};
use tinyring::NetFunction;

const PAGE_SIZE_VAR: &str = "TINYRING_PAGE_SIZE";

#[derive(Debug, Parser)]
#[command(name = "bench", about = "Measure forwarding throughput and latency")]
struct Cli {
    /// identity, macswap, policer or policer:<min-len>
    #[arg(long, default_value = "identity")]
    nf: NetFunction,
    #[arg(long, default_value_t = 256)]
    ring_size: usize,
    #[arg(long, default_value_t = 1)]
    outputs: usize,
    /// Packets per load point.
    #[arg(long, default_value_t = bench::DEFAULT_TRACE_LENGTH)]
    packets: usize,
    #[arg(long, default_value_t = bench::DEFAULT_PACKET_SIZE)]
    packet_size: usize,
    /// Sweep increment, in packets per 1000 steps.
    #[arg(long, default_value_t = 50)]
    step: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file; standard output if absent.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Replay frames from a pcap capture instead of generated traffic.
    #[arg(long)]
    pcap: Option<PathBuf>,
    /// Only report the maximum-throughput load point.
    #[arg(long)]
    max_only: bool,
}

fn page_size() -> Result<Option<u64>, BenchError> {
    match std::env::var(PAGE_SIZE_VAR) {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| {
            BenchError::InvalidArgument(format!("{PAGE_SIZE_VAR}={v:?} is not a number"))
        }),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(BenchError::InvalidArgument(format!("{PAGE_SIZE_VAR}: {e}"))),
    }
}

fn run(cli: Cli) -> Result<(), BenchError> {
    let mut bench = Bench::new(cli.nf, cli.ring_size, cli.outputs)
        .with_packet_size(cli.packet_size)
        .with_trace_length(cli.packets)
        .with_seed(cli.seed);
    if let Some(page) = page_size()? {
        bench = bench.with_page_size(page);
    }
    if let Some(path) = &cli.pcap {
        let frames = bench::parse_pcap(&std::fs::read(path)?)?;
        bench = bench.with_traffic(frames)?;
    } else {
        bench.load_point(1)?;
        bench::gen_traffic(0, cli.packet_size, cli.seed)?;
    }

    let results: Vec<LoadPointResult> = if cli.max_only {
        let lp = bench.find_max_throughput(DEFAULT_LOSS_BOUND)?;
        vec![bench.run_load_point(&lp)?]
    } else {
        bench.run_sweep(cli.step)?
    };

    match &cli.csv {
        Some(path) => {
            report::write_csv(&results, BufWriter::new(File::create(path)?))?;
            if let Some(last) = results.last() {
                eprintln!(
                    "{}: max {} packets/1000 steps (service rate {}), p50 {} p99 {} steps",
                    cli.nf,
                    last.offered_load,
                    bench.service_rate(),
                    last.latency_p50,
                    last.latency_p99
                );
            }
        }
        None => report::write_csv(&results, io::stdout().lock())?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = writeln!(io::stderr(), "bench: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
