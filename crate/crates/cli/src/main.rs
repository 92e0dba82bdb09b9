use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use snpvault_cli::bench::{BenchConfig, Phase};
use snpvault_cli::commands::{self, QueryArgs};

#[derive(Parser)]
#[command(name = "snpvault", version, about = "Encrypted count queries over genomic index trees")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the plaintext index tree of a dataset and dump it.
    Build {
        input: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Generate keys, build and encrypt the tree (certified institution).
    Ci {
        input: PathBuf,
        #[arg(short, long, default_value = "out")]
        out_dir: PathBuf,
        /// Modulus size. Defaults to 1024, or 256 when seeded.
        #[arg(long)]
        key_bits: Option<u64>,
        /// Deterministic, insecure keys and randomness.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Serve queries over an encrypted tree (cloud server).
    Serve {
        #[arg(long, default_value = "127.0.0.1:7878")]
        addr: String,
        #[arg(long)]
        tree: PathBuf,
        /// Exit after this many sessions.
        #[arg(long)]
        max_sessions: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a count query (researcher), e.g. "SNP2=CC,SNP3=TT,SNP5=CC,PHENO=Positive".
    Query {
        #[arg(long, default_value = "127.0.0.1:7878")]
        server: String,
        #[arg(long)]
        key: PathBuf,
        predicate: String,
        /// Number of SNP columns. Read from schema.txt beside the key if omitted.
        #[arg(long)]
        snps: Option<usize>,
        #[arg(long, default_value_t = snpvault_core::secure_compare::DEFAULT_MASK_BITS)]
        mask_bits: u32,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Time read, build, encrypt and query over a synthetic grid; CSV output.
    Bench {
        /// TOML file with any of the fields below.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        records: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        snps: Option<Vec<usize>>,
        #[arg(long, visible_alias = "query-size", value_delimiter = ',')]
        query_sizes: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',', value_parser = parse_phase)]
        phases: Option<Vec<Phase>>,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        key_bits: Option<u64>,
        /// Use 1024-bit keys.
        #[arg(long, conflicts_with = "key_bits")]
        paper_keys: bool,
        #[arg(long)]
        mask_bits: Option<u32>,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

fn parse_phase(s: &str) -> Result<Phase, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "read" => Ok(Phase::Read),
        "build" => Ok(Phase::Build),
        "encrypt" => Ok(Phase::Encrypt),
        "query" => Ok(Phase::Query),
        other => Err(format!("unknown phase {other:?}")),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Build { input, output } => commands::cmd_build(&input, output.as_deref()),
        Command::Ci { input, out_dir, key_bits, seed } => commands::cmd_ci(&input, &out_dir, key_bits, seed),
        Command::Serve { addr, tree, max_sessions, seed } => commands::cmd_serve(&addr, &tree, max_sessions, seed),
        Command::Query { server, key, predicate, snps, mask_bits, seed } => {
            let count = commands::cmd_query(&QueryArgs {
                server: &server,
                key: &key,
                predicate: &predicate,
                snps,
                mask_bits,
                seed,
            })?;
            println!("{count}");
            Ok(())
        }
        Command::Bench {
            config,
            records,
            snps,
            query_sizes,
            phases,
            reps,
            seed,
            key_bits,
            paper_keys,
            mask_bits,
            out,
        } => {
            let mut cfg = match config {
                Some(path) => BenchConfig::load(&path)?,
                None => BenchConfig::default(),
            };
            if let Some(v) = records {
                cfg.records = v;
            }
            if let Some(v) = snps {
                cfg.snps = v;
            }
            if let Some(v) = query_sizes {
                cfg.query_sizes = v;
            }
            if let Some(v) = phases {
                cfg.phases = v;
            }
            if let Some(v) = reps {
                cfg.reps = v;
            }
            if let Some(v) = seed {
                cfg.seed = v;
            }
            if let Some(v) = key_bits {
                cfg.key_bits = v;
            }
            if paper_keys {
                cfg.key_bits = snpvault_core::paillier::DEFAULT_KEY_BITS;
            }
            if let Some(v) = mask_bits {
                cfg.mask_bits = v;
            }
            if out.is_some() {
                cfg.out = out;
            }
            commands::cmd_bench(cfg)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
