//! Reading and writing the graph container directory, synthetic graphs for
//! tests, and the content hash that ties eigen caches to a graph.
//!
//! Container layout:
//!
//! ```text
//! meta.json      {"n_nodes", "n_features", "n_classes", "name"}
//! edges.csv      src,dst header, one undirected edge per row
//! features.csv   N rows of F reals, no header
//! labels.csv     N integers, one per line
//! masks.csv      train,val,test header, N rows of 0/1 flags
//! ```

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dense::Matrix;
use crate::error::{Error, Result};
use crate::graph::GraphDataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub n_nodes: usize,
    pub n_features: usize,
    pub n_classes: usize,
    pub name: String,
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => {
            Error::Format(format!("missing container file {}", path.display()))
        }
        _ => Error::io(path, e),
    })
}

fn csv_reader(text: &str, headers: bool) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .has_headers(headers)
        .flexible(true)
        .trim(csv::Trim::None)
        .from_reader(text.as_bytes())
}

fn parse_field<T: std::str::FromStr>(field: &str, file: &str, row: usize) -> Result<T> {
    field
        .parse()
        .map_err(|_| Error::Format(format!("{file} row {row}: cannot parse {field:?}")))
}

fn parse_real(field: &str, file: &str, row: usize) -> Result<f64> {
    let v: f64 = parse_field(field, file, row)?;
    if !v.is_finite() {
        return Err(Error::Format(format!("{file} row {row}: non-finite value {field:?}")));
    }
    Ok(v)
}

fn parse_flag(field: &str, file: &str, row: usize) -> Result<bool> {
    match field {
        "0" => Ok(false),
        "1" => Ok(true),
        _ => Err(Error::Format(format!("{file} row {row}: expected 0 or 1, got {field:?}"))),
    }
}

fn records(
    text: &str,
    headers: Option<&[&str]>,
    file: &str,
) -> Result<Vec<csv::StringRecord>> {
    let mut rdr = csv_reader(text, headers.is_some());
    if let Some(expected) = headers {
        let got = rdr
            .headers()
            .map_err(|e| Error::Format(format!("{file}: {e}")))?;
        if got.iter().collect::<Vec<_>>() != expected {
            return Err(Error::Format(format!(
                "{file}: header {:?}, expected {:?}",
                got.iter().collect::<Vec<_>>(),
                expected
            )));
        }
    }
    rdr.records()
        .map(|r| r.map_err(|e| Error::Format(format!("{file}: {e}"))))
        .collect()
}

/// Loads and validates a container directory. Edges are symmetrized.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<GraphDataset> {
    let dir = dir.as_ref();
    let meta: Meta = serde_json::from_str(&read_file(&dir.join("meta.json"))?)
        .map_err(|e| Error::Format(format!("meta.json: {e}")))?;
    let n = meta.n_nodes;

    let edge_rows = records(&read_file(&dir.join("edges.csv"))?, Some(&["src", "dst"]), "edges.csv")?;
    let mut edges = Vec::with_capacity(edge_rows.len());
    for (i, rec) in edge_rows.iter().enumerate() {
        if rec.len() != 2 {
            return Err(Error::Format(format!("edges.csv row {i}: expected 2 columns")));
        }
        edges.push((
            parse_field::<usize>(&rec[0], "edges.csv", i)?,
            parse_field::<usize>(&rec[1], "edges.csv", i)?,
        ));
    }

    let feature_rows = records(&read_file(&dir.join("features.csv"))?, None, "features.csv")?;
    if feature_rows.len() != n {
        return Err(Error::Consistency(format!(
            "features.csv has {} rows but meta.json says n_nodes={n}",
            feature_rows.len()
        )));
    }
    let f = meta.n_features;
    let mut features = Vec::with_capacity(n * f);
    for (i, rec) in feature_rows.iter().enumerate() {
        if rec.len() != f {
            return Err(Error::Consistency(format!(
                "features.csv row {i} has {} columns, expected n_features={f}",
                rec.len()
            )));
        }
        for field in rec.iter() {
            features.push(parse_real(field, "features.csv", i)?);
        }
    }

    let labels: Vec<usize> = read_file(&dir.join("labels.csv"))?
        .lines()
        .enumerate()
        .map(|(i, line)| parse_field(line, "labels.csv", i))
        .collect::<Result<_>>()?;
    if labels.len() != n {
        return Err(Error::Consistency(format!(
            "labels.csv has {} rows but meta.json says n_nodes={n}",
            labels.len()
        )));
    }

    let mask_rows = records(
        &read_file(&dir.join("masks.csv"))?,
        Some(&["train", "val", "test"]),
        "masks.csv",
    )?;
    if mask_rows.len() != n {
        return Err(Error::Consistency(format!(
            "masks.csv has {} rows but meta.json says n_nodes={n}",
            mask_rows.len()
        )));
    }
    let mut masks = [Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n)];
    for (i, rec) in mask_rows.iter().enumerate() {
        if rec.len() != 3 {
            return Err(Error::Format(format!("masks.csv row {i}: expected 3 columns")));
        }
        for (m, field) in masks.iter_mut().zip(rec.iter()) {
            m.push(parse_flag(field, "masks.csv", i)?);
        }
    }
    let [train, val, test] = masks;

    GraphDataset::new(
        meta.name,
        n,
        meta.n_classes,
        &edges,
        Matrix::from_vec(n, f, features)?,
        labels,
        train,
        val,
        test,
    )
}

/// Writes `data` as a container directory (created if needed). Reals use
/// the shortest representation that parses back to the same `f64`.
pub fn save_dataset(data: &GraphDataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, body: String| {
        let path = dir.join(name);
        fs::write(&path, body).map_err(|e| Error::io(&path, e))
    };
    let meta = Meta {
        n_nodes: data.n_nodes,
        n_features: data.n_features(),
        n_classes: data.n_classes,
        name: data.name.clone(),
    };
    write(
        "meta.json",
        serde_json::to_string(&meta).expect("meta serializes"),
    )?;

    let mut edges = String::from("src,dst\n");
    for &(u, v) in &data.edges {
        edges.push_str(&format!("{u},{v}\n"));
    }
    write("edges.csv", edges)?;

    let mut features = String::new();
    for r in 0..data.n_nodes {
        let row: Vec<String> = data.features.row(r).iter().map(|v| format!("{v}")).collect();
        features.push_str(&row.join(","));
        features.push('\n');
    }
    write("features.csv", features)?;

    let labels: String = data.labels.iter().map(|y| format!("{y}\n")).collect();
    write("labels.csv", labels)?;

    let mut masks = String::from("train,val,test\n");
    for i in 0..data.n_nodes {
        masks.push_str(&format!(
            "{},{},{}\n",
            u8::from(data.train_mask[i]),
            u8::from(data.val_mask[i]),
            u8::from(data.test_mask[i])
        ));
    }
    write("masks.csv", masks)
}

/// 64-bit content hash over `n_nodes` and the canonical edge list: the first
/// eight bytes (little-endian) of a SHA-256 digest.
pub fn graph_hash(data: &GraphDataset) -> u64 {
    let mut edges = data.edges.clone();
    edges.sort_unstable();
    let mut h = Sha256::new();
    h.update((data.n_nodes as u64).to_le_bytes());
    for (u, v) in edges {
        h.update((u as u64).to_le_bytes());
        h.update((v as u64).to_le_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Rescales every feature row to unit L1 norm; all-zero rows stay zero.
pub fn row_normalize(data: &GraphDataset) -> GraphDataset {
    let mut out = data.clone();
    for r in 0..out.n_nodes {
        let row = out.features.row_mut(r);
        let s: f64 = row.iter().map(|v| v.abs()).sum();
        if s > 0.0 {
            row.iter_mut().for_each(|v| *v /= s);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum GraphKind {
    Path,
    Cycle,
    Complete,
    TwoCliques,
    /// Stochastic block model. Empty `block_sizes` means two halves.
    Sbm {
        #[serde(default)]
        block_sizes: Vec<usize>,
        p_in: f64,
        p_out: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum FeatureMode {
    /// One indicator column per block.
    OneHotBlock,
    RandomGaussian { dim: usize },
}

/// Recipe for a synthetic dataset. Nodes are split into contiguous blocks
/// (the SBM blocks, otherwise two halves with the first one taking the odd
/// node); labels are block ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    #[serde(flatten)]
    pub kind: GraphKind,
    pub n: usize,
    pub features: FeatureMode,
    #[serde(default)]
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(kind: GraphKind, n: usize) -> Self {
        SyntheticSpec {
            kind,
            n,
            features: FeatureMode::OneHotBlock,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_features(mut self, features: FeatureMode) -> Self {
        self.features = features;
        self
    }

    fn block_sizes(&self) -> Result<Vec<usize>> {
        let halves = || {
            if self.n == 1 {
                vec![1]
            } else {
                vec![self.n - self.n / 2, self.n / 2]
            }
        };
        match &self.kind {
            GraphKind::Sbm { block_sizes, .. } if !block_sizes.is_empty() => {
                if block_sizes.iter().sum::<usize>() != self.n || block_sizes.contains(&0) {
                    return Err(Error::Parameter(format!(
                        "block sizes {block_sizes:?} must be positive and sum to n={}",
                        self.n
                    )));
                }
                Ok(block_sizes.clone())
            }
            _ => Ok(halves()),
        }
    }

    fn name(&self) -> &'static str {
        match self.kind {
            GraphKind::Path => "path",
            GraphKind::Cycle => "cycle",
            GraphKind::Complete => "complete",
            GraphKind::TwoCliques => "two_cliques",
            GraphKind::Sbm { .. } => "sbm",
        }
    }
}

/// Builds a synthetic dataset; deterministic for a fixed spec.
///
/// Splits are 60/20/20 within every block: walking a block in node order,
/// positions 0–2 of each run of five go to train, 3 to validation, 4 to test.
pub fn generate(spec: &SyntheticSpec) -> Result<GraphDataset> {
    let n = spec.n;
    if n == 0 {
        return Err(Error::Parameter("synthetic graphs need n ≥ 1".into()));
    }
    let sizes = spec.block_sizes()?;
    let block: Vec<usize> = sizes
        .iter()
        .enumerate()
        .flat_map(|(b, &s)| std::iter::repeat(b).take(s))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut edges = Vec::new();
    match &spec.kind {
        GraphKind::Path => edges.extend((1..n).map(|i| (i - 1, i))),
        GraphKind::Cycle => {
            edges.extend((1..n).map(|i| (i - 1, i)));
            if n > 2 {
                edges.push((0, n - 1));
            }
        }
        GraphKind::Complete => {
            for i in 0..n {
                edges.extend((i + 1..n).map(|j| (i, j)));
            }
        }
        GraphKind::TwoCliques => {
            for i in 0..n {
                edges.extend((i + 1..n).filter(|&j| block[i] == block[j]).map(|j| (i, j)));
            }
        }
        GraphKind::Sbm { p_in, p_out, .. } => {
            if !(0.0..=1.0).contains(p_in) || !(0.0..=1.0).contains(p_out) || p_out > p_in {
                return Err(Error::Parameter(format!(
                    "SBM needs 0 ≤ p_out ≤ p_in ≤ 1, got p_in={p_in}, p_out={p_out}"
                )));
            }
            for i in 0..n {
                for j in i + 1..n {
                    let p = if block[i] == block[j] { *p_in } else { *p_out };
                    // Always draw, so the stream does not depend on p.
                    let u: f64 = rng.gen();
                    if u < p {
                        edges.push((i, j));
                    }
                }
            }
        }
    }

    let n_classes = sizes.len();
    let features = match spec.features {
        FeatureMode::OneHotBlock => {
            let mut x = Matrix::zeros(n, n_classes);
            for (i, &b) in block.iter().enumerate() {
                x.set(i, b, 1.0);
            }
            x
        }
        FeatureMode::RandomGaussian { dim } => {
            let data = (0..n * dim).map(|_| rng.sample(StandardNormal)).collect();
            Matrix::from_vec(n, dim, data)?
        }
    };

    let mut train = vec![false; n];
    let mut val = vec![false; n];
    let mut test = vec![false; n];
    let mut start = 0;
    for &s in &sizes {
        for pos in 0..s {
            let i = start + pos;
            match pos % 5 {
                0..=2 => train[i] = true,
                3 => val[i] = true,
                _ => test[i] = true,
            }
        }
        start += s;
    }

    GraphDataset::new(spec.name(), n, n_classes, &edges, features, block, train, val, test)
}
