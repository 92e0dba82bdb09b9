//! Subcommand implementations.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::thread;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use rand::rngs::OsRng;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use snpvault_core::paillier::DEFAULT_KEY_BITS;
use snpvault_core::protocol::{cs_serve_session, researcher_run_query, EncryptedTree};
use snpvault_core::transport::{self, Endpoint, Party, Transcript};
use snpvault_core::{
    build_tree, ci_encrypt_tree, keygen, keygen_seeded_insecure, parse_dataset, Dataset, Keypair,
    MaskWidth, PublicKey, QueryPredicate, SecretKey,
};

use crate::bench::{self, BenchConfig, SEED_ENV};

pub const PUBLIC_KEY_FILE: &str = "public.key";
pub const SECRET_KEY_FILE: &str = "secret.key";
pub const TREE_FILE: &str = "tree.enc";
pub const SCHEMA_FILE: &str = "schema.txt";

/// Explicit seed, else `SNPVAULT_TEST_SEED`, else none.
pub fn resolve_seed(explicit: Option<u64>) -> Result<Option<u64>> {
    if explicit.is_some() {
        return Ok(explicit);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => Ok(Some(v.trim().parse().with_context(|| format!("{SEED_ENV}={v:?}"))?)),
        Err(_) => Ok(None),
    }
}

fn rng_for(seed: Option<u64>, stream: u64) -> ChaCha20Rng {
    match seed {
        Some(s) => {
            let mut rng = ChaCha20Rng::seed_from_u64(s);
            rng.set_stream(stream);
            rng
        }
        None => ChaCha20Rng::from_rng(OsRng).expect("OS entropy"),
    }
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    parse_dataset(std::io::BufReader::new(file)).with_context(|| format!("parsing {}", path.display()))
}

/// Builds the plaintext index tree and writes its text dump.
pub fn cmd_build(input: &Path, output: Option<&Path>) -> Result<()> {
    let start = Instant::now();
    let data = load_dataset(input)?;
    let read = start.elapsed();
    let start = Instant::now();
    let tree = build_tree(&data)?;
    let build = start.elapsed();
    let dump = tree.to_debug_string();
    match output {
        Some(path) => fs::write(path, &dump).with_context(|| format!("writing {}", path.display()))?,
        None => std::io::stdout().write_all(dump.as_bytes())?,
    }
    eprintln!(
        "{} records, {} SNPs, {} nodes; read {:.3}s, build {:.3}s",
        data.len(),
        data.n_snps(),
        tree.node_count(),
        read.as_secs_f64(),
        build.as_secs_f64()
    );
    Ok(())
}

/// Certified institution: key generation, tree build and encryption.
pub fn cmd_ci(input: &Path, out_dir: &Path, key_bits: Option<u64>, seed: Option<u64>) -> Result<()> {
    let seed = resolve_seed(seed)?;
    let data = load_dataset(input)?;
    let start = Instant::now();
    let keys: Keypair = match seed {
        Some(s) => keygen_seeded_insecure(key_bits.unwrap_or(snpvault_core::paillier::TEST_KEY_BITS), s)?,
        None => keygen(key_bits.unwrap_or(DEFAULT_KEY_BITS))?,
    };
    let t_keys = start.elapsed();
    let start = Instant::now();
    let tree = build_tree(&data)?;
    let t_build = start.elapsed();
    let start = Instant::now();
    let mut rng = rng_for(seed, 1);
    let enc = ci_encrypt_tree(&tree, &keys, &mut rng)?;
    let t_enc = start.elapsed();

    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let bytes = enc.to_bytes();
    fs::write(out_dir.join(PUBLIC_KEY_FILE), keys.public().to_key_file())?;
    fs::write(out_dir.join(SECRET_KEY_FILE), keys.secret().to_key_file())?;
    fs::write(out_dir.join(TREE_FILE), &bytes)?;
    fs::write(out_dir.join(SCHEMA_FILE), format!("n_snps={}\n", data.n_snps()))?;
    eprintln!(
        "{}-bit key in {:.3}s; {} nodes built in {:.3}s, encrypted in {:.3}s ({} bytes)",
        keys.public().bits(),
        t_keys.as_secs_f64(),
        tree.node_count(),
        t_build.as_secs_f64(),
        t_enc.as_secs_f64(),
        bytes.len()
    );
    println!("{}", out_dir.display());
    Ok(())
}

pub fn load_tree(path: &Path) -> Result<EncryptedTree> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    EncryptedTree::from_bytes(&bytes).with_context(|| format!("parsing {}", path.display()))
}

/// Cloud server: answers query sessions, one thread per connection. Returns
/// after `max_sessions` connections when given.
pub fn cmd_serve(addr: &str, tree_path: &Path, max_sessions: Option<usize>, seed: Option<u64>) -> Result<()> {
    let seed = resolve_seed(seed)?;
    let tree = load_tree(tree_path)?;
    let listener = transport::listen(addr)?;
    println!("listening on {}", listener.local_addr()?);
    std::io::stdout().flush()?;
    let tree = &tree;
    thread::scope(|s| -> Result<()> {
        let mut served = 0usize;
        while max_sessions.is_none_or(|m| served < m) {
            let endpoint = Endpoint::new(Party::CloudServer, Party::Researcher, Transcript::new());
            let mut ch = match listener.accept(endpoint) {
                Ok(ch) => ch,
                Err(e) => {
                    eprintln!("accept failed: {e}");
                    continue;
                }
            };
            let mut rng = rng_for(seed, 100 + served as u64);
            s.spawn(move || {
                let peer = ch.peer_addr();
                let start = Instant::now();
                match cs_serve_session(tree, &mut ch, &mut rng) {
                    Ok(out) => eprintln!(
                        "session from {peer:?}: {} comparisons in {:.3}s",
                        out.trace.compared.len(),
                        start.elapsed().as_secs_f64()
                    ),
                    Err(e) => eprintln!("session from {peer:?} failed: {e}"),
                }
            });
            served += 1;
        }
        Ok(())
    })
}

/// Reads `n_snps` from a schema file.
pub fn read_schema(path: &Path) -> Result<usize> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    for line in text.lines() {
        if let Some(v) = line.trim().strip_prefix("n_snps=") {
            return v.trim().parse().with_context(|| format!("bad n_snps in {}", path.display()));
        }
    }
    bail!("{} has no n_snps entry", path.display())
}

pub struct QueryArgs<'a> {
    pub server: &'a str,
    pub key: &'a Path,
    pub predicate: &'a str,
    pub snps: Option<usize>,
    pub mask_bits: u32,
    pub seed: Option<u64>,
}

/// Researcher: runs one count query against a server and returns the count.
pub fn cmd_query(args: &QueryArgs<'_>) -> Result<u64> {
    let seed = resolve_seed(args.seed)?;
    let text = fs::read_to_string(args.key).with_context(|| format!("reading {}", args.key.display()))?;
    let sk = SecretKey::from_key_file(&text).with_context(|| format!("parsing {}", args.key.display()))?;
    let n_snps = match args.snps {
        Some(n) => n,
        None => {
            let schema: PathBuf = args.key.with_file_name(SCHEMA_FILE);
            read_schema(&schema).context("pass --snps or keep schema.txt beside the key")?
        }
    };
    let predicate = QueryPredicate::parse(args.predicate, n_snps)?;
    let pk: PublicKey = sk.public_key();
    let width = MaskWidth::for_key(args.mask_bits, &pk)?;
    let mut rng = rng_for(seed, 7);
    let session = rng.next_u64();
    let endpoint = Endpoint::new(Party::Researcher, Party::CloudServer, Transcript::new());
    let start = Instant::now();
    let mut ch = transport::connect(args.server, endpoint)?;
    let out = researcher_run_query(&sk, &predicate, width, session, &mut ch, &mut rng)?;
    let (sent, received) = ch.wire_bytes();
    eprintln!(
        "{} comparisons, {} bytes sent, {} received, {:.3}s",
        out.deltas.len(),
        sent,
        received,
        start.elapsed().as_secs_f64()
    );
    Ok(out.count)
}

/// Runs the benchmark grid and writes CSV to the configured path or stdout.
pub fn cmd_bench(config: BenchConfig) -> Result<()> {
    let config = config.with_env_seed()?;
    let rows = bench::run_bench_with(&config, |r| {
        eprintln!(
            "{:>7} x {:>3} {:>7} q={:<3} {:.4}s",
            r.n_records, r.n_snps, r.phase, r.query_size, r.seconds
        )
    })?;
    match &config.out {
        Some(path) => {
            let f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
            bench::write_csv(&rows, f)?;
        }
        None => bench::write_csv(&rows, std::io::stdout().lock())?,
    }
    Ok(())
}
