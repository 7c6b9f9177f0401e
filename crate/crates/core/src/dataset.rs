//! Label-distribution datasets: loading, validation, synthesis, splitting and corruption.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::simplex::clamp_normalize_rows;
use crate::{Error, Matrix, Result};

/// Row sums of a validated dataset must be this close to one.
pub const ROW_SUM_TOL: f64 = 1e-9;
/// Files whose label rows are off by at most this much are renormalized on load.
pub const LOAD_RENORM_TOL: f64 = 1e-6;

/// Features `X` (n×d) paired with a row-stochastic label-distribution matrix `D` (n×m).
#[derive(Debug, Clone, PartialEq)]
pub struct LdlDataset {
    features: Matrix,
    labels: Matrix,
    names: Option<Vec<String>>,
}

impl LdlDataset {
    /// Builds a dataset, rejecting labels that are not on the simplex within [`ROW_SUM_TOL`].
    pub fn new(features: Matrix, labels: Matrix, names: Option<Vec<String>>) -> Result<Self> {
        check_shapes(&features, &labels, names.as_deref())?;
        check_label_entries(&labels)?;
        for (i, row) in labels.row_iter().enumerate() {
            let s = row.sum();
            if (s - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::Validation(format!(
                    "label row {i} sums to {s}, not 1"
                )));
            }
        }
        Ok(Self { features, labels, names })
    }

    /// Like [`LdlDataset::new`] but renormalizes rows whose sum misses one by more than
    /// [`ROW_SUM_TOL`] and at most [`LOAD_RENORM_TOL`].
    pub fn from_raw(features: Matrix, mut labels: Matrix, names: Option<Vec<String>>) -> Result<Self> {
        check_shapes(&features, &labels, names.as_deref())?;
        check_label_entries(&labels)?;
        for i in 0..labels.nrows() {
            let s = labels.row(i).sum();
            if (s - 1.0).abs() > LOAD_RENORM_TOL {
                return Err(Error::Validation(format!(
                    "label row {i} sums to {s}, not 1"
                )));
            }
            if (s - 1.0).abs() > ROW_SUM_TOL {
                let mut row = labels.row_mut(i);
                row /= s;
            }
        }
        Self::new(features, labels, names)
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &Matrix {
        &self.labels
    }

    pub fn names(&self) -> Option<&[String]> {
        self.names.as_deref()
    }

    /// Number of instances.
    pub fn n(&self) -> usize {
        self.labels.nrows()
    }

    /// Number of labels.
    pub fn m(&self) -> usize {
        self.labels.ncols()
    }

    /// Feature dimension.
    pub fn d(&self) -> usize {
        self.features.ncols()
    }

    /// Replaces the label matrix, keeping features and names.
    pub fn with_labels(&self, labels: Matrix) -> Result<Self> {
        Self::new(self.features.clone(), labels, self.names.clone())
    }

    /// Sub-dataset made of the given rows, in order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            features: self.features.select_rows(rows),
            labels: self.labels.select_rows(rows),
            names: self.names.clone(),
        }
    }
}

fn check_shapes(features: &Matrix, labels: &Matrix, names: Option<&[String]>) -> Result<()> {
    if features.nrows() != labels.nrows() {
        return Err(Error::Validation(format!(
            "features have {} rows but labels have {}",
            features.nrows(),
            labels.nrows()
        )));
    }
    if labels.ncols() == 0 {
        return Err(Error::Validation("label matrix has no columns".into()));
    }
    if let Some(names) = names {
        if names.len() != labels.ncols() {
            return Err(Error::Validation(format!(
                "{} label names for {} label columns",
                names.len(),
                labels.ncols()
            )));
        }
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("features contain non-finite values".into()));
    }
    Ok(())
}

fn check_label_entries(labels: &Matrix) -> Result<()> {
    for i in 0..labels.nrows() {
        for j in 0..labels.ncols() {
            let v = labels[(i, j)];
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Validation(format!(
                    "label entry ({i}, {j}) = {v} is not a nonnegative finite number"
                )));
            }
        }
    }
    Ok(())
}

/// A numeric CSV table with an optional header row.
#[derive(Debug, Clone)]
pub struct CsvMatrix {
    pub header: Option<Vec<String>>,
    pub data: Matrix,
}

/// Reads a comma-separated numeric matrix. A first row that does not parse as numbers is
/// treated as a header.
pub fn read_matrix_csv(path: impl AsRef<Path>) -> Result<CsvMatrix> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let parse_err = |message: String| Error::Parse {
        path: display.clone(),
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => parse_err(format!("{other:?}")),
        })?;

    let mut header = None;
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0usize;
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| parse_err(e.to_string()))?;
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> =
            record.iter().map(|f| f.parse::<f64>()).collect();
        match parsed {
            Ok(row) => {
                match cols {
                    None => cols = Some(row.len()),
                    Some(c) if c != row.len() => {
                        return Err(parse_err(format!(
                            "line {}: expected {c} fields, found {}",
                            line + 1,
                            row.len()
                        )))
                    }
                    _ => {}
                }
                values.extend(row);
                rows += 1;
            }
            Err(_) if line == 0 => {
                header = Some(record.iter().map(str::to_owned).collect::<Vec<_>>());
            }
            Err(e) => return Err(parse_err(format!("line {}: {e}", line + 1))),
        }
    }
    let cols = cols.unwrap_or(0);
    if let Some(h) = &header {
        if rows > 0 && h.len() != cols {
            return Err(parse_err(format!(
                "header has {} fields but rows have {cols}",
                h.len()
            )));
        }
    }
    Ok(CsvMatrix {
        header,
        data: Matrix::from_row_slice(rows, cols, &values),
    })
}

/// Writes a matrix as CSV using the shortest round-trip representation of each value.
pub fn write_matrix_csv(path: impl AsRef<Path>, m: &Matrix, header: Option<&[String]>) -> Result<()> {
    let mut out = String::new();
    if let Some(h) = header {
        out.push_str(&h.join(","));
        out.push('\n');
    }
    for row in m.row_iter() {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Loads a dataset from a features CSV and a labels CSV.
pub fn load_dataset(features_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<LdlDataset> {
    let features = read_matrix_csv(features_path)?;
    let labels = read_matrix_csv(labels_path)?;
    LdlDataset::from_raw(features.data, labels.data, labels.header)
}

/// Additive Gaussian label noise `mean + scale·G`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub mean: f64,
    pub scale: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.scale >= 0.0) || !self.scale.is_finite() || !self.mean.is_finite() {
            return Err(Error::InvalidSpec(format!(
                "noise scale must be finite and nonnegative, mean finite (got mean {}, scale {})",
                self.mean, self.scale
            )));
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.mean == 0.0 && self.scale == 0.0
    }

    /// The `n×m` additive error matrix `mean + scale·G`, drawn row-major from a seeded stream.
    pub fn error_matrix(&self, n: usize, m: usize) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut e = Matrix::zeros(n, m);
        for i in 0..n {
            for j in 0..m {
                let g: f64 = rng.sample(StandardNormal);
                e[(i, j)] = self.mean + self.scale * g;
            }
        }
        e
    }
}

/// Adds seeded Gaussian noise to the labels, clamps negatives to zero and renormalizes each row.
pub fn corrupt(dataset: &LdlDataset, spec: &NoiseSpec) -> Result<LdlDataset> {
    spec.validate()?;
    if spec.is_zero() {
        return Ok(dataset.clone());
    }
    let noise = spec.error_matrix(dataset.n(), dataset.m());
    corrupt_with(dataset, &noise)
}

/// Applies a given additive error matrix with the same clamp-and-renormalize rule as [`corrupt`].
pub fn corrupt_with(dataset: &LdlDataset, noise: &Matrix) -> Result<LdlDataset> {
    if noise.shape() != dataset.labels().shape() {
        return Err(Error::ShapeMismatch(format!(
            "noise is {:?}, labels are {:?}",
            noise.shape(),
            dataset.labels().shape()
        )));
    }
    let mut labels = dataset.labels() + noise;
    clamp_normalize_rows(&mut labels).map_err(|row| Error::DegenerateRow { row })?;
    dataset.with_labels(labels)
}

/// Planted low-rank-plus-sparse generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub rank: usize,
    pub error_fraction: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 || self.d == 0 || self.rank == 0 {
            return Err(Error::InvalidSpec("n, m, d and rank must be positive".into()));
        }
        if self.rank > self.n.min(self.m) {
            return Err(Error::InvalidSpec(format!(
                "rank {} exceeds min(n, m) = {}",
                self.rank,
                self.n.min(self.m)
            )));
        }
        if !(0.0..1.0).contains(&self.error_fraction) {
            return Err(Error::InvalidSpec(format!(
                "error fraction {} is outside [0, 1)",
                self.error_fraction
            )));
        }
        if self.error_fraction > 0.0 && self.m < 2 {
            return Err(Error::InvalidSpec(
                "sparse corruption needs at least two labels per row".into(),
            ));
        }
        Ok(())
    }
}

/// Output of [`synthesize`].
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub clean: LdlDataset,
    pub corrupted: LdlDataset,
    /// `corrupted − clean`, exactly.
    pub planted_error: Matrix,
    /// The nonnegative factor product before row normalization; has rank `spec.rank`.
    pub factor_product: Matrix,
    pub spec: SynthSpec,
}

/// JSON manifest written next to generated data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthManifest {
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub rank: usize,
    pub error_fraction: f64,
    pub seed: u64,
    pub planted_nonzeros: usize,
}

impl SyntheticData {
    pub fn planted_nonzeros(&self) -> usize {
        self.planted_error.iter().filter(|&&v| v != 0.0).count()
    }

    pub fn manifest(&self) -> SynthManifest {
        SynthManifest {
            n: self.spec.n,
            m: self.spec.m,
            d: self.spec.d,
            rank: self.spec.rank,
            error_fraction: self.spec.error_fraction,
            seed: self.spec.seed,
            planted_nonzeros: self.planted_nonzeros(),
        }
    }
}

/// Generates a planted instance: a rank-`r` nonnegative label matrix, features driven by the
/// same latent factors, and a sparse corruption.
///
/// The corruption moves mass between entries of the same row (one receiving entry, one or two
/// donors), so every corrupted row stays on the simplex without renormalization and the planted
/// error is exactly sparse. `⌈error_fraction·n·m⌉` entries are touched; a request for a single
/// entry is rounded up to a pair.
pub fn synthesize(spec: &SynthSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let SynthSpec { n, m, d, rank, .. } = *spec;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // Offset factors keep the singular vectors spread out instead of concentrated on a few
    // labels, which is what lets an ℓ1 term tell the planted entries apart.
    let left = Matrix::from_fn(n, rank, |_, _| 0.5 + rng.random::<f64>());
    let right = Matrix::from_fn(rank, m, |_, _| 0.5 + rng.random::<f64>());
    let factor_product = &left * &right;
    let mut clean_labels = factor_product.clone();
    for i in 0..n {
        let s = clean_labels.row(i).sum();
        let mut row = clean_labels.row_mut(i);
        row /= s;
    }

    let projection = Matrix::from_fn(rank, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut features = &left * &projection;
    for v in features.iter_mut() {
        *v += 0.01 * rng.sample::<f64, _>(StandardNormal);
    }

    let mut corrupted_labels = clean_labels.clone();
    let total = (spec.error_fraction * (n * m) as f64).ceil() as usize;
    if total > 0 {
        plant_sparse_errors(&mut corrupted_labels, total.max(2), &mut rng)?;
    }
    let planted_error = &corrupted_labels - &clean_labels;

    let clean = LdlDataset::new(features.clone(), clean_labels, None)?;
    let corrupted = LdlDataset::new(features, corrupted_labels, None)?;
    Ok(SyntheticData {
        clean,
        corrupted,
        planted_error,
        factor_product,
        spec: *spec,
    })
}

fn plant_sparse_errors(labels: &mut Matrix, total: usize, rng: &mut ChaCha8Rng) -> Result<()> {
    let (n, m) = labels.shape();
    if total > n * m {
        return Err(Error::InvalidSpec("more corrupted entries than matrix entries".into()));
    }
    let mut used = vec![false; n * m];
    let mut group_sizes = vec![2usize; total / 2];
    if total % 2 == 1 {
        match group_sizes.last_mut() {
            Some(last) if m >= 3 => *last = 3,
            _ => return Err(Error::InvalidSpec("odd corruption count needs m ≥ 3".into())),
        }
    }
    let mut rows: Vec<usize> = (0..n).collect();
    rows.shuffle(rng);
    let mut cursor = 0usize;
    for size in group_sizes {
        // Walk the shuffled rows until one has `size` untouched entries.
        let mut attempts = 0;
        let row = loop {
            let r = rows[cursor % n];
            cursor += 1;
            attempts += 1;
            let free = (0..m).filter(|&j| !used[r * m + j]).count();
            if free >= size {
                break r;
            }
            if attempts > n {
                return Err(Error::InvalidSpec("error fraction too large to plant".into()));
            }
        };
        let mut free: Vec<usize> = (0..m).filter(|&j| !used[row * m + j]).collect();
        let receiver = free.swap_remove(rng.random_range(0..free.len()));
        // Donate from the heaviest remaining entries so the moved mass is visible.
        free.sort_by(|&a, &b| labels[(row, b)].total_cmp(&labels[(row, a)]).then(a.cmp(&b)));
        let donors = &free[..size - 1];
        let mut moved = 0.0;
        for &j in donors {
            let take = labels[(row, j)] * rng.random_range(0.6..0.95);
            labels[(row, j)] -= take;
            moved += take;
        }
        labels[(row, receiver)] += moved;
        for &j in std::iter::once(&receiver).chain(donors) {
            used[row * m + j] = true;
        }
    }
    Ok(())
}

/// Seeded row partition. The training part gets `⌊fraction·n⌋` rows, clamped so both parts are
/// nonempty.
pub fn split(dataset: &LdlDataset, train_fraction: f64, seed: u64) -> Result<(LdlDataset, LdlDataset)> {
    let (train_rows, test_rows) = split_indices(dataset.n(), train_fraction, seed)?;
    Ok((dataset.select_rows(&train_rows), dataset.select_rows(&test_rows)))
}

/// Row indices of the partition computed by [`split`].
pub fn split_indices(n: usize, train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidFraction(train_fraction));
    }
    if n < 2 {
        return Err(Error::Validation("cannot split fewer than two rows".into()));
    }
    let train = ((train_fraction * n as f64 + 1e-9).floor() as usize).clamp(1, n - 1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = idx.split_off(train);
    Ok((idx, test))
}
