//! Plaintext genomic data: genotype codes, records, CSV ingestion and
//! synthetic dataset generation.
//!
//! A dataset is a table of SNP genotype cells followed by a single phenotype
//! column. Genotype cells are ordered nucleotide pairs (`"AG"`), stored as a
//! code in `1..=16` using the lexicographic rank of the pair over `ACGT`.
//! The phenotype column is addressed like any other column: its [`SnpId`] is
//! `n_snps + 1` and its values are `1` (positive) and `2` (negative).

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Ordered pairs over `ACGT`, indexed by `code - 1`.
const PAIRS: [&str; 16] = [
    "AA", "AC", "AG", "AT", "CA", "CC", "CG", "CT", "GA", "GC", "GG", "GT", "TA", "TC", "TG", "TT",
];

const NUCLEOTIDES: [u8; 4] = *b"ACGT";

/// Per-cell probability that a resampled synthetic row takes a fresh value.
pub const PERTURBATION_RATE: f64 = 0.001;

#[derive(Debug, Error)]
pub enum GenomicsError {
    #[error("invalid nucleotide in genotype {0:?}")]
    InvalidNucleotide(String),
    #[error("genotype must be exactly two nucleotides, got {0:?}")]
    InvalidLength(String),
    #[error("genotype code {0} is outside 1..=16")]
    OutOfRange(u32),
    #[error("invalid phenotype {0:?}, expected Positive or Negative")]
    InvalidPhenotype(String),
    #[error("header must name a case column, at least one SNP and a phenotype column")]
    MalformedHeader,
    #[error("row {row}: expected {expected} cells, found {found}")]
    MalformedRow {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("row {row}: {source}")]
    Cell {
        row: usize,
        #[source]
        source: Box<GenomicsError>,
    },
    #[error("record {index} has {found} genotypes, dataset declares {expected}")]
    RecordLength {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("synthetic datasets need at least one record and one SNP")]
    EmptyShape,
    #[error("base dataset has {base} SNPs and {records} records, cannot resample {requested} SNPs")]
    BaseMismatch {
        base: usize,
        records: usize,
        requested: usize,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl GenomicsError {
    /// The innermost error, unwrapping row context.
    pub fn root(&self) -> &GenomicsError {
        match self {
            GenomicsError::Cell { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T, E = GenomicsError> = std::result::Result<T, E>;

/// A genotype encoded as the lexicographic rank (1-based) of its nucleotide pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GenotypeCode(u8);

impl GenotypeCode {
    pub const MIN: u8 = 1;
    pub const MAX: u8 = 16;

    pub fn new(code: u8) -> Result<Self> {
        if (Self::MIN..=Self::MAX).contains(&code) {
            Ok(Self(code))
        } else {
            Err(GenomicsError::OutOfRange(code.into()))
        }
    }

    pub const fn get(self) -> u8 {
        self.0
    }

    pub fn as_str(self) -> &'static str {
        PAIRS[usize::from(self.0 - 1)]
    }

    /// All sixteen codes in ascending order.
    pub fn all() -> impl Iterator<Item = GenotypeCode> {
        (Self::MIN..=Self::MAX).map(GenotypeCode)
    }
}

impl fmt::Display for GenotypeCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GenotypeCode {
    type Err = GenomicsError;

    fn from_str(s: &str) -> Result<Self> {
        encode_genotype(s)
    }
}

/// Encodes a two-letter nucleotide pair. Pairs keep their written order, so
/// `"AG"` and `"GA"` are distinct codes.
pub fn encode_genotype(pair: &str) -> Result<GenotypeCode> {
    if pair.chars().count() != 2 {
        return Err(GenomicsError::InvalidLength(pair.to_owned()));
    }
    let rank = |b: u8| NUCLEOTIDES.iter().position(|&n| n == b);
    let bytes = pair.as_bytes();
    match (rank(bytes[0]), rank(bytes[1])) {
        (Some(hi), Some(lo)) => Ok(GenotypeCode((hi * 4 + lo + 1) as u8)),
        _ => Err(GenomicsError::InvalidNucleotide(pair.to_owned())),
    }
}

pub fn decode_genotype(code: u32) -> Result<&'static str> {
    u8::try_from(code)
        .ok()
        .and_then(|c| GenotypeCode::new(c).ok())
        .map(GenotypeCode::as_str)
        .ok_or(GenomicsError::OutOfRange(code))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phenotype {
    Positive = 1,
    Negative = 2,
}

impl Phenotype {
    pub const fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(Phenotype::Positive),
            2 => Some(Phenotype::Negative),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Phenotype::Positive => "Positive",
            Phenotype::Negative => "Negative",
        }
    }
}

impl fmt::Display for Phenotype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Phenotype {
    type Err = GenomicsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "Positive" => Ok(Phenotype::Positive),
            "Negative" => Ok(Phenotype::Negative),
            other => Err(GenomicsError::InvalidPhenotype(other.to_owned())),
        }
    }
}

/// 1-based column identifier. SNP columns are `1..=n_snps`; the phenotype
/// column is `n_snps + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SnpId(pub u32);

impl SnpId {
    pub const fn get(self) -> u32 {
        self.0
    }

    /// Zero-based column index, `None` for the invalid id 0.
    pub fn index(self) -> Option<usize> {
        (self.0 as usize).checked_sub(1)
    }
}

impl fmt::Display for SnpId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Record {
    pub genotypes: Vec<GenotypeCode>,
    pub phenotype: Phenotype,
}

impl Record {
    pub fn new(genotypes: Vec<GenotypeCode>, phenotype: Phenotype) -> Self {
        Self {
            genotypes,
            phenotype,
        }
    }

    /// Number of indexed columns, SNPs plus the phenotype.
    pub fn width(&self) -> usize {
        self.genotypes.len() + 1
    }

    /// Encoded value of column `sid`, the phenotype code for the last column.
    pub fn value(&self, sid: SnpId) -> Option<u8> {
        let index = sid.index()?;
        match index.cmp(&self.genotypes.len()) {
            std::cmp::Ordering::Less => Some(self.genotypes[index].get()),
            std::cmp::Ordering::Equal => Some(self.phenotype.code()),
            std::cmp::Ordering::Greater => None,
        }
    }

    /// Encoded cell values in column order, phenotype last.
    pub fn values(&self) -> impl Iterator<Item = u8> + '_ {
        self.genotypes
            .iter()
            .map(|g| g.get())
            .chain(std::iter::once(self.phenotype.code()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    n_snps: usize,
    records: Vec<Record>,
}

impl Dataset {
    pub fn new(n_snps: usize, records: Vec<Record>) -> Result<Self> {
        if let Some((index, r)) = records
            .iter()
            .enumerate()
            .find(|(_, r)| r.genotypes.len() != n_snps)
        {
            return Err(GenomicsError::RecordLength {
                index,
                expected: n_snps,
                found: r.genotypes.len(),
            });
        }
        Ok(Self { n_snps, records })
    }

    pub fn n_snps(&self) -> usize {
        self.n_snps
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn phenotype_sid(&self) -> SnpId {
        SnpId(self.n_snps as u32 + 1)
    }

    /// Number of indexed columns, which is also the index tree height.
    pub fn depth(&self) -> usize {
        self.n_snps + 1
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = Vec::new();
        write_dataset(self, &mut out).expect("writing to a Vec cannot fail");
        String::from_utf8(out).expect("dataset CSV is ASCII")
    }
}

/// Reads the `case,SNP_1,…,SNP_n,phenotype` CSV format. The case column is an
/// opaque row label and is not retained.
pub fn parse_dataset<R: Read>(reader: R) -> Result<Dataset> {
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows = csv.records();

    let header = rows.next().ok_or(GenomicsError::MalformedHeader)??;
    if header.len() < 3 {
        return Err(GenomicsError::MalformedHeader);
    }
    let n_snps = header.len() - 2;

    let mut records = Vec::new();
    for (i, row) in rows.enumerate() {
        let row_no = i + 1;
        let row = row?;
        if row.len() != n_snps + 2 {
            return Err(GenomicsError::MalformedRow {
                row: row_no,
                expected: n_snps + 2,
                found: row.len(),
            });
        }
        let in_row = |source| GenomicsError::Cell {
            row: row_no,
            source: Box::new(source),
        };
        let genotypes = (1..=n_snps)
            .map(|c| encode_genotype(&row[c]))
            .collect::<Result<Vec<_>>>()
            .map_err(in_row)?;
        let phenotype = row[n_snps + 1].parse().map_err(in_row)?;
        records.push(Record::new(genotypes, phenotype));
    }
    Dataset::new(n_snps, records)
}

pub fn write_dataset<W: Write>(dataset: &Dataset, writer: W) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    let mut header = Vec::with_capacity(dataset.n_snps + 2);
    header.push("case".to_owned());
    header.extend((1..=dataset.n_snps).map(|i| format!("SNP_{i}")));
    header.push("phenotype".to_owned());
    csv.write_record(&header)?;

    let mut row: Vec<String> = Vec::with_capacity(dataset.n_snps + 2);
    for (i, record) in dataset.records.iter().enumerate() {
        row.clear();
        row.push((i + 1).to_string());
        row.extend(record.genotypes.iter().map(|g| g.as_str().to_owned()));
        row.push(record.phenotype.as_str().to_owned());
        csv.write_record(&row)?;
    }
    csv.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Deterministically generates a dataset of `n_records × n_snps`.
///
/// Without a base, every SNP column gets its own three-genotype distribution
/// (two homozygotes and the heterozygote of a random allele pair, weighted by
/// Hardy–Weinberg proportions of a random minor-allele frequency) and cells
/// are drawn independently. With a base, each row is a uniformly resampled
/// base row whose cells are independently replaced, with probability
/// [`PERTURBATION_RATE`], by the same column of another random base row.
pub fn generate_synthetic(
    n_records: usize,
    n_snps: usize,
    seed: u64,
    base: Option<&Dataset>,
) -> Result<Dataset> {
    if n_records == 0 || n_snps == 0 {
        return Err(GenomicsError::EmptyShape);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records = match base {
        None => independent_rows(&mut rng, n_records, n_snps),
        Some(base) => {
            if base.n_snps != n_snps || base.is_empty() {
                return Err(GenomicsError::BaseMismatch {
                    base: base.n_snps,
                    records: base.len(),
                    requested: n_snps,
                });
            }
            resampled_rows(&mut rng, n_records, base)
        }
    };
    Dataset::new(n_snps, records)
}

fn independent_rows(rng: &mut ChaCha8Rng, n_records: usize, n_snps: usize) -> Vec<Record> {
    let columns: Vec<([GenotypeCode; 3], WeightedIndex<f64>)> = (0..n_snps)
        .map(|_| {
            let major = rng.gen_range(0..4);
            let minor = (major + rng.gen_range(1..4)) % 4;
            let (lo, hi) = (major.min(minor), major.max(minor));
            let code = |a: usize, b: usize| GenotypeCode((a * 4 + b + 1) as u8);
            let maf: f64 = rng.gen_range(0.05..0.5);
            let support = [code(major, major), code(lo, hi), code(minor, minor)];
            let weights = [
                (1.0 - maf) * (1.0 - maf),
                2.0 * maf * (1.0 - maf),
                maf * maf,
            ];
            (support, WeightedIndex::new(weights).expect("positive weights"))
        })
        .collect();

    (0..n_records)
        .map(|_| {
            let genotypes = columns
                .iter()
                .map(|(support, dist)| support[dist.sample(rng)])
                .collect();
            let phenotype = if rng.gen_bool(0.5) {
                Phenotype::Positive
            } else {
                Phenotype::Negative
            };
            Record::new(genotypes, phenotype)
        })
        .collect()
}

fn resampled_rows(rng: &mut ChaCha8Rng, n_records: usize, base: &Dataset) -> Vec<Record> {
    let rows = base.records();
    (0..n_records)
        .map(|_| {
            let mut record = rows[rng.gen_range(0..rows.len())].clone();
            for col in 0..record.genotypes.len() {
                if rng.gen_bool(PERTURBATION_RATE) {
                    record.genotypes[col] = rows[rng.gen_range(0..rows.len())].genotypes[col];
                }
            }
            if rng.gen_bool(PERTURBATION_RATE) {
                record.phenotype = rows[rng.gen_range(0..rows.len())].phenotype;
            }
            record
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SAMPLE10: &str = include_str!("../../../data/sample10.csv");

    #[test]
    fn encode_examples() {
        assert_eq!(encode_genotype("AA").unwrap().get(), 1);
        assert_eq!(encode_genotype("TT").unwrap().get(), 16);
        assert_eq!(encode_genotype("AG").unwrap().get(), 3);
        assert_eq!(encode_genotype("GA").unwrap().get(), 9);
    }

    #[test]
    fn encode_errors() {
        assert!(matches!(
            encode_genotype("AX"),
            Err(GenomicsError::InvalidNucleotide(_))
        ));
        assert!(matches!(
            encode_genotype("ag"),
            Err(GenomicsError::InvalidNucleotide(_))
        ));
        for bad in ["", "A", "AGT", "Aé"] {
            let err = encode_genotype(bad).unwrap_err();
            if bad == "Aé" {
                assert!(matches!(err, GenomicsError::InvalidNucleotide(_)));
            } else {
                assert!(matches!(err, GenomicsError::InvalidLength(_)), "{bad}");
            }
        }
    }

    #[test]
    fn decode_examples() {
        assert_eq!(decode_genotype(1).unwrap(), "AA");
        assert_eq!(decode_genotype(11).unwrap(), "GG");
        assert!(matches!(decode_genotype(17), Err(GenomicsError::OutOfRange(17))));
        assert!(matches!(decode_genotype(0), Err(GenomicsError::OutOfRange(0))));
        assert!(matches!(decode_genotype(300), Err(GenomicsError::OutOfRange(300))));
    }

    #[test]
    fn round_trip_all_codes() {
        for code in GenotypeCode::all() {
            assert_eq!(encode_genotype(code.as_str()).unwrap(), code);
            assert_eq!(decode_genotype(code.get().into()).unwrap(), code.as_str());
        }
    }

    #[test]
    fn parses_worked_example() {
        let ds = parse_dataset(SAMPLE10.as_bytes()).unwrap();
        assert_eq!(ds.len(), 10);
        assert_eq!(ds.n_snps(), 5);
        let r5 = &ds.records()[4];
        let prefix: Vec<&str> = r5.genotypes.iter().map(|g| g.as_str()).collect();
        assert_eq!(prefix, ["GG", "CT", "TT", "GG", "CC"]);
        assert_eq!(r5.phenotype, Phenotype::Positive);
        assert_eq!(r5.value(ds.phenotype_sid()), Some(1));
        assert_eq!(r5.value(SnpId(7)), None);
        assert_eq!(r5.value(SnpId(0)), None);
    }

    #[test]
    fn header_only_is_empty() {
        let ds = parse_dataset("case,SNP_1,SNP_2,phenotype\n".as_bytes()).unwrap();
        assert!(ds.is_empty());
        assert_eq!(ds.n_snps(), 2);
    }

    #[test]
    fn parse_errors() {
        let bad_cell = "case,SNP_1,SNP_2,phenotype\n1,AA,AX,Positive\n";
        let err = parse_dataset(bad_cell.as_bytes()).unwrap_err();
        assert!(matches!(err.root(), GenomicsError::InvalidNucleotide(_)));
        assert!(matches!(err, GenomicsError::Cell { row: 1, .. }));

        let short = "case,SNP_1,SNP_2,phenotype\n1,AA,Positive\n";
        assert!(matches!(
            parse_dataset(short.as_bytes()),
            Err(GenomicsError::MalformedRow {
                row: 1,
                expected: 4,
                found: 3
            })
        ));

        let pheno = "case,SNP_1,phenotype\n1,AA,Maybe\n";
        let err = parse_dataset(pheno.as_bytes()).unwrap_err();
        assert!(matches!(err.root(), GenomicsError::InvalidPhenotype(_)));

        assert!(matches!(
            parse_dataset("".as_bytes()),
            Err(GenomicsError::MalformedHeader)
        ));
        assert!(matches!(
            parse_dataset("case,phenotype\n".as_bytes()),
            Err(GenomicsError::MalformedHeader)
        ));
    }

    #[test]
    fn serializer_matches_input_format() {
        let ds = parse_dataset(SAMPLE10.as_bytes()).unwrap();
        let text = ds.to_csv_string();
        assert!(text.starts_with("case,SNP_1,SNP_2,SNP_3,SNP_4,SNP_5,phenotype\n"));
        assert!(text.contains("\n5,GG,CT,TT,GG,CC,Positive\n"));
        assert_eq!(parse_dataset(text.as_bytes()).unwrap(), ds);
    }

    #[test]
    fn synthetic_is_deterministic() {
        let a = generate_synthetic(10, 5, 42, None).unwrap();
        let b = generate_synthetic(10, 5, 42, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 10);
        assert_eq!(a.n_snps(), 5);
        assert_ne!(a, generate_synthetic(10, 5, 43, None).unwrap());
    }

    #[test]
    fn synthetic_columns_have_at_most_three_genotypes() {
        let ds = generate_synthetic(2000, 20, 7, None).unwrap();
        for col in 0..20 {
            let mut seen: Vec<u8> = ds.records().iter().map(|r| r.genotypes[col].get()).collect();
            seen.sort_unstable();
            seen.dedup();
            assert!(seen.len() <= 3 && seen.len() >= 2, "column {col}: {seen:?}");
        }
    }

    #[test]
    fn synthetic_bounds() {
        assert!(matches!(
            generate_synthetic(0, 5, 1, None),
            Err(GenomicsError::EmptyShape)
        ));
        assert!(matches!(
            generate_synthetic(5, 0, 1, None),
            Err(GenomicsError::EmptyShape)
        ));
        let base = generate_synthetic(10, 5, 1, None).unwrap();
        assert!(matches!(
            generate_synthetic(5, 6, 1, Some(&base)),
            Err(GenomicsError::BaseMismatch { .. })
        ));
    }

    #[test]
    fn resampling_stays_within_base_support() {
        let base = generate_synthetic(50, 30, 3, None).unwrap();
        let ds = generate_synthetic(5000, 30, 4, Some(&base)).unwrap();
        assert_eq!(ds, generate_synthetic(5000, 30, 4, Some(&base)).unwrap());
        for col in 0..30 {
            let support: std::collections::HashSet<_> =
                base.records().iter().map(|r| r.genotypes[col]).collect();
            assert!(ds.records().iter().all(|r| support.contains(&r.genotypes[col])));
        }
        let exact = ds
            .records()
            .iter()
            .filter(|r| base.records().contains(r))
            .count();
        assert!(exact > 4500, "only {exact} rows unperturbed");
    }

    #[test]
    fn paper_scale_synthetic() {
        let ds = generate_synthetic(50_000, 300, 9, None).unwrap();
        assert_eq!(ds.len(), 50_000);
        assert!(ds.records().iter().all(|r| r.genotypes.len() == 300));
    }

    fn arb_dataset() -> impl Strategy<Value = Dataset> {
        (1usize..8).prop_flat_map(|n_snps| {
            let record = (
                proptest::collection::vec(1u8..=16, n_snps),
                prop::bool::ANY,
            )
                .prop_map(|(codes, pos)| {
                    Record::new(
                        codes.into_iter().map(GenotypeCode).collect(),
                        if pos {
                            Phenotype::Positive
                        } else {
                            Phenotype::Negative
                        },
                    )
                });
            proptest::collection::vec(record, 0..20)
                .prop_map(move |records| Dataset::new(n_snps, records).unwrap())
        })
    }

    proptest! {
        #[test]
        fn csv_round_trip(ds in arb_dataset()) {
            prop_assert_eq!(parse_dataset(ds.to_csv_string().as_bytes()).unwrap(), ds);
        }
    }
}
