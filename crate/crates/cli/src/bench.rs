//! Benchmark grid runner. Every query is checked against the plaintext scan.

use std::fmt;
use std::path::{Path, PathBuf};
use std::thread;
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use rand::{RngCore, SeedableRng};
use rand_chacha::{ChaCha20Rng, ChaCha8Rng};
use serde::{Deserialize, Serialize};

use snpvault_core::protocol::{ci_encrypt_tree, cs_serve_session, researcher_run_query, EncryptedTree};
use snpvault_core::transport::{memory_pair, Party, Transcript};
use snpvault_core::{
    build_tree, generate_synthetic, keygen_seeded_insecure, naive_count, parse_dataset,
    sample_predicate, Dataset, Keypair, MaskWidth, QueryPredicate,
};

pub const SEED_ENV: &str = "SNPVAULT_TEST_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Read,
    Build,
    Encrypt,
    Query,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Read => "read",
            Phase::Build => "build",
            Phase::Encrypt => "encrypt",
            Phase::Query => "query",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub records: Vec<usize>,
    pub snps: Vec<usize>,
    pub query_sizes: Vec<usize>,
    pub reps: usize,
    pub seed: u64,
    pub key_bits: u64,
    pub mask_bits: u32,
    pub phases: Vec<Phase>,
    /// When set, datasets are resampled from a base of this many independent
    /// rows instead of drawing every row independently.
    pub base_records: Option<usize>,
    pub out: Option<PathBuf>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            records: vec![5000],
            snps: vec![60],
            query_sizes: vec![10, 20, 30, 40],
            reps: 10,
            seed: 42,
            key_bits: snpvault_core::paillier::TEST_KEY_BITS,
            mask_bits: snpvault_core::secure_compare::DEFAULT_MASK_BITS,
            phases: vec![Phase::Read, Phase::Build, Phase::Encrypt, Phase::Query],
            base_records: Some(400),
            out: None,
        }
    }
}

impl BenchConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// Applies `SNPVAULT_TEST_SEED` when set.
    pub fn with_env_seed(mut self) -> Result<Self> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v.trim().parse().with_context(|| format!("{SEED_ENV}={v:?}"))?;
        }
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.reps >= 1, "reps must be at least 1");
        ensure!(!self.records.is_empty(), "records grid is empty");
        ensure!(!self.snps.is_empty(), "snps grid is empty");
        ensure!(!self.phases.is_empty(), "no phases selected");
        ensure!(
            !self.phases.contains(&Phase::Query) || !self.query_sizes.is_empty(),
            "query size grid is empty"
        );
        ensure!(self.records.iter().all(|&r| r > 0), "record counts must be positive");
        ensure!(self.snps.iter().all(|&s| s > 0), "SNP counts must be positive");
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub n_records: usize,
    pub n_snps: usize,
    pub query_size: usize,
    pub phase: Phase,
    pub seconds: f64,
    pub bytes: u64,
    pub count: u64,
    pub oracle_count: u64,
}

/// The synthetic dataset used for one grid cell.
pub fn scenario_dataset(config: &BenchConfig, n_records: usize, n_snps: usize) -> Result<Dataset> {
    let seed = config.seed ^ ((n_snps as u64) << 32);
    Ok(match config.base_records {
        Some(base) if base < n_records => {
            let base = generate_synthetic(base, n_snps, seed, None)?;
            generate_synthetic(n_records, n_snps, seed.wrapping_add(1), Some(&base))?
        }
        _ => generate_synthetic(n_records, n_snps, seed, None)?,
    })
}

/// One query session over in-memory channels. Returns the count and the bytes
/// exchanged.
pub fn timed_query(
    tree: &EncryptedTree,
    keys: &Keypair,
    predicate: &QueryPredicate,
    width: MaskWidth,
    rng: &mut ChaCha20Rng,
) -> Result<(u64, u64)> {
    let transcript = Transcript::new();
    let (mut researcher, mut cs) = memory_pair(Party::Researcher, Party::CloudServer, &transcript);
    let mut cs_rng = ChaCha20Rng::from_rng(&mut *rng)?;
    let session = rng.next_u64();
    let count = thread::scope(|s| {
        let server = s.spawn(move || cs_serve_session(tree, &mut cs, &mut cs_rng));
        let mine = researcher_run_query(keys.secret(), predicate, width, session, &mut researcher, rng);
        drop(researcher);
        let theirs = server.join().expect("server thread panicked");
        match (mine, theirs) {
            (Ok(m), Ok(_)) => Ok(m.count),
            (Err(e), _) | (_, Err(e)) => Err(e),
        }
    })?;
    Ok((count, transcript.total_bytes()))
}

fn mean(total: f64, n: usize) -> f64 {
    total / n as f64
}

/// Runs the grid, calling `progress` after each row.
pub fn run_bench_with(config: &BenchConfig, mut progress: impl FnMut(&BenchRow)) -> Result<Vec<BenchRow>> {
    config.validate()?;
    let mut rows = Vec::new();
    let mut push = |row: BenchRow, rows: &mut Vec<BenchRow>| {
        progress(&row);
        rows.push(row);
    };
    let wants = |p: Phase| config.phases.contains(&p);

    for &n_snps in &config.snps {
        for &n_records in &config.records {
            let data = scenario_dataset(config, n_records, n_snps)?;
            let row = |phase, query_size, seconds, bytes, count, oracle_count| BenchRow {
                n_records,
                n_snps,
                query_size,
                phase,
                seconds,
                bytes,
                count,
                oracle_count,
            };

            if wants(Phase::Read) {
                let csv = data.to_csv_string();
                let mut total = 0.0;
                let mut parsed = 0;
                for _ in 0..config.reps {
                    let start = Instant::now();
                    parsed = parse_dataset(csv.as_bytes())?.len() as u64;
                    total += start.elapsed().as_secs_f64();
                }
                push(row(Phase::Read, 0, mean(total, config.reps), csv.len() as u64, parsed, data.len() as u64), &mut rows);
            }

            let mut total = 0.0;
            let mut tree = None;
            let build_reps = if wants(Phase::Build) { config.reps } else { 1 };
            for _ in 0..build_reps {
                let start = Instant::now();
                let t = build_tree(&data)?;
                total += start.elapsed().as_secs_f64();
                tree = Some(t);
            }
            let tree = tree.expect("at least one build");
            if wants(Phase::Build) {
                push(row(Phase::Build, 0, mean(total, build_reps), 0, tree.level_count(1), data.len() as u64), &mut rows);
            }

            if !wants(Phase::Encrypt) && !wants(Phase::Query) {
                continue;
            }
            let keys = keygen_seeded_insecure(config.key_bits, config.seed)?;
            let width = MaskWidth::for_key(config.mask_bits, keys.public())?;
            let mut rng = ChaCha20Rng::seed_from_u64(config.seed ^ n_records as u64);
            let encrypt_reps = if wants(Phase::Encrypt) { config.reps } else { 1 };
            let mut total = 0.0;
            let mut enc = None;
            for _ in 0..encrypt_reps {
                let start = Instant::now();
                let e = ci_encrypt_tree(&tree, &keys, &mut rng)?;
                total += start.elapsed().as_secs_f64();
                enc = Some(e);
            }
            let enc = enc.expect("at least one encryption");
            if wants(Phase::Encrypt) {
                let bytes = enc.to_bytes().len() as u64;
                push(
                    row(Phase::Encrypt, 0, mean(total, encrypt_reps), bytes, enc.node_count() as u64, tree.node_count() as u64),
                    &mut rows,
                );
            }

            if !wants(Phase::Query) {
                continue;
            }
            let mut qrng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_mul(31) ^ n_records as u64);
            for &size in &config.query_sizes {
                let (mut seconds, mut bytes, mut count, mut oracle) = (0.0, 0u64, 0u64, 0u64);
                for rep in 0..config.reps {
                    let pred = sample_predicate(&data, size, &mut qrng);
                    let expected = naive_count(&data, &pred)?;
                    let start = Instant::now();
                    let (got, b) = timed_query(&enc, &keys, &pred, width, &mut rng)?;
                    seconds += start.elapsed().as_secs_f64();
                    if got != expected {
                        bail!(
                            "oracle mismatch: {n_records}x{n_snps}, size {size}, rep {rep}, {}: protocol {got}, scan {expected}",
                            pred.to_spec(n_snps)
                        );
                    }
                    bytes += b;
                    count += got;
                    oracle += expected;
                }
                push(
                    row(Phase::Query, size, mean(seconds, config.reps), bytes / config.reps as u64, count, oracle),
                    &mut rows,
                );
            }
        }
    }
    Ok(rows)
}

pub fn run_bench(config: &BenchConfig) -> Result<Vec<BenchRow>> {
    run_bench_with(config, |_| {})
}

pub fn write_csv<W: std::io::Write>(rows: &[BenchRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.write_record([
            "n_records", "n_snps", "query_size", "phase", "seconds", "bytes", "count", "oracle_count",
        ])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Coefficient of determination of the least-squares line through the points.
pub fn linear_fit_r2(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if syy == 0.0 {
        return 1.0;
    }
    if sxx == 0.0 {
        return 0.0;
    }
    sxy * sxy / (sxx * syy)
}
