use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{standard_normal, stream_rng, uniform};
use crate::scalar::Scalar;

/// Noise standard deviation of the wave data-generating process.
pub const WAVE_NOISE_SD: f64 = 0.1;

const SD_FLOOR: f64 = 1e-12;

/// Paired inputs (`N × p`) and targets (`N × q`).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset<T> {
    inputs: Vec<Vec<T>>,
    targets: Vec<Vec<T>>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(inputs: Vec<Vec<T>>, targets: Vec<Vec<T>>) -> Result<Self> {
        if inputs.len() != targets.len() {
            return Err(Error::InvalidInput(format!(
                "{} input rows but {} target rows",
                inputs.len(),
                targets.len()
            )));
        }
        let ragged = |rows: &[Vec<T>]| rows.windows(2).any(|w| w[0].len() != w[1].len());
        if ragged(&inputs) || ragged(&targets) {
            return Err(Error::InvalidInput("ragged dataset rows".into()));
        }
        if inputs.iter().chain(&targets).flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("dataset contains non-finite values".into()));
        }
        Ok(Dataset { inputs, targets })
    }

    pub fn empty() -> Self {
        Dataset {
            inputs: Vec::new(),
            targets: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }

    pub fn target_dim(&self) -> usize {
        self.targets.first().map_or(0, Vec::len)
    }

    pub fn inputs(&self) -> &[Vec<T>] {
        &self.inputs
    }

    pub fn targets(&self) -> &[Vec<T>] {
        &self.targets
    }

    /// Rows reordered by `perm`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Dataset {
            inputs: perm.iter().map(|&i| self.inputs[i].clone()).collect(),
            targets: perm.iter().map(|&i| self.targets[i].clone()).collect(),
        }
    }
}

/// Mean of the wave process, `1.5 sin(2π(x + 2/3)) + 3x + 1`.
pub fn wave_mean<T: Scalar>(x: T) -> T {
    let two_pi = T::of(2.0) * T::PI();
    T::of(1.5) * (two_pi * (x + T::of(2.0 / 3.0))).sin() + T::of(3.0) * x + T::one()
}

/// Evaluation regions of the wave benchmark.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    /// The two training clusters.
    In,
    /// The gap between the clusters.
    Between,
    Entire,
}

impl Region {
    pub const ALL: [Region; 3] = [Region::In, Region::Between, Region::Entire];

    pub fn intervals(self) -> &'static [(f64, f64)] {
        match self {
            Region::In => &[(-1.5, -0.5), (1.3, 1.7)],
            Region::Between => &[(-0.5, 1.3)],
            Region::Entire => &[(-2.0, 2.0)],
        }
    }

    /// Number of evaluation points drawn for the region.
    pub fn eval_size(self) -> usize {
        match self {
            Region::In => 20,
            Region::Between => 60,
            Region::Entire => 120,
        }
    }

    pub fn contains(self, x: f64) -> bool {
        self.intervals().iter().any(|&(a, b)| a <= x && x <= b)
    }

    pub fn name(self) -> &'static str {
        match self {
            Region::In => "in",
            Region::Between => "between",
            Region::Entire => "entire",
        }
    }
}

/// `n` wave points split evenly over the region's intervals.
pub fn generate_wave_region<T: Scalar>(region: Region, n: usize, noise_sd: f64, seed: u64) -> Dataset<T> {
    let mut rng = stream_rng(seed, 0, region as u64);
    let ivs = region.intervals();
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for k in 0..n {
        let (a, b) = ivs[k * ivs.len() / n.max(1)];
        let x: T = uniform(&mut rng, a, b);
        let eps: T = standard_normal(&mut rng);
        ys.push(vec![wave_mean(x) + T::of(noise_sd) * eps]);
        xs.push(vec![x]);
    }
    Dataset::new(xs, ys).expect("generated wave data is well formed")
}

/// Training set: `n_per_cluster` points from each of the two In clusters.
pub fn generate_wave_dataset<T: Scalar>(n_per_cluster: usize, seed: u64) -> Dataset<T> {
    generate_wave_region(Region::In, 2 * n_per_cluster, WAVE_NOISE_SD, seed)
}

/// Read a header-first CSV; `target_column` becomes the single target, every
/// other column an input. Inputs are optionally standardized per column with
/// the population standard deviation.
pub fn load_csv_dataset<T: Scalar>(
    path: impl AsRef<Path>,
    target_column: &str,
    standardize_inputs: bool,
) -> Result<Dataset<T>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path.as_ref())
        .map_err(|e| csv_err(e, 0, ""))?;
    let headers = reader.headers().map_err(|e| csv_err(e, 0, ""))?.clone();
    if headers.is_empty() {
        return Err(Error::Parse {
            row: 0,
            column: String::new(),
            message: "empty file".into(),
        });
    }
    let target_idx = headers
        .iter()
        .position(|h| h == target_column)
        .ok_or_else(|| Error::Parse {
            row: 0,
            column: target_column.to_string(),
            message: "target column not found in header".into(),
        })?;

    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    for (r, rec) in reader.records().enumerate() {
        // header is row 0
        let row = r + 1;
        let rec = rec.map_err(|e| csv_err(e, row, ""))?;
        if rec.len() != headers.len() {
            return Err(Error::Parse {
                row,
                column: String::new(),
                message: format!("expected {} fields, found {}", headers.len(), rec.len()),
            });
        }
        let mut x = Vec::with_capacity(headers.len() - 1);
        let mut y = T::zero();
        for (c, field) in rec.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                row,
                column: headers[c].to_string(),
                message: format!("non-numeric value {field:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    column: headers[c].to_string(),
                    message: "non-finite value".into(),
                });
            }
            if c == target_idx {
                y = T::of(v);
            } else {
                x.push(T::of(v));
            }
        }
        inputs.push(x);
        targets.push(vec![y]);
    }
    if inputs.is_empty() {
        return Err(Error::Parse {
            row: 1,
            column: String::new(),
            message: "no data rows".into(),
        });
    }
    if standardize_inputs {
        standardize_columns(&mut inputs);
    }
    Dataset::new(inputs, targets)
}

fn standardize_columns<T: Scalar>(rows: &mut [Vec<T>]) {
    let n = T::of_usize(rows.len());
    let p = rows[0].len();
    for c in 0..p {
        let mean = rows.iter().map(|r| r[c]).sum::<T>() / n;
        let var = rows.iter().map(|r| (r[c] - mean) * (r[c] - mean)).sum::<T>() / n;
        let sd = var.sqrt().max(T::of(SD_FLOOR));
        for r in rows.iter_mut() {
            r[c] = (r[c] - mean) / sd;
        }
    }
}

fn csv_err(e: csv::Error, row: usize, column: &str) -> Error {
    if let csv::ErrorKind::Io(_) = e.kind() {
        if let csv::ErrorKind::Io(io) = e.into_kind() {
            return Error::Io(io);
        }
        unreachable!()
    }
    let row = e.position().map_or(row, |p| p.line() as usize - 1);
    Error::Parse {
        row,
        column: column.to_string(),
        message: e.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_csv(body: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(body.as_bytes()).unwrap();
        f
    }

    #[test]
    fn wave_mean_values() {
        assert!((wave_mean(0.0_f64) + 0.299038).abs() < 1e-6);
        assert!((wave_mean(0.0_f64) - (1.5 * (4.0 * std::f64::consts::PI / 3.0).sin() + 1.0)).abs() < 1e-15);
        assert!((wave_mean(1.0_f64 / 3.0) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn wave_dataset_lies_in_clusters() {
        let d: Dataset<f64> = generate_wave_dataset(20, 3);
        assert_eq!(d.len(), 40);
        assert!(d.inputs().iter().all(|x| Region::In.contains(x[0])));
        let left = d.inputs().iter().filter(|x| x[0] < 0.0).count();
        assert_eq!(left, 20);
        assert_eq!(d, generate_wave_dataset(20, 3));
        assert_ne!(d, generate_wave_dataset(20, 4));
        for r in Region::ALL {
            let e: Dataset<f64> = generate_wave_region(r, r.eval_size(), WAVE_NOISE_SD, 9);
            assert_eq!(e.len(), r.eval_size());
            assert!(e.inputs().iter().all(|x| r.contains(x[0])));
        }
    }

    #[test]
    fn csv_standardizes_inputs_only() {
        let f = write_csv("a,b,y\n1,5,10\n3,5,20\n");
        let d: Dataset<f64> = load_csv_dataset(f.path(), "y", true).unwrap();
        assert_eq!(d.inputs(), &[vec![-1.0, 0.0], vec![1.0, 0.0]]);
        assert_eq!(d.targets(), &[vec![10.0], vec![20.0]]);
        let raw: Dataset<f64> = load_csv_dataset(f.path(), "y", false).unwrap();
        assert_eq!(raw.inputs(), &[vec![1.0, 5.0], vec![3.0, 5.0]]);
        assert_eq!(raw.targets(), d.targets());
    }

    #[test]
    fn csv_errors_carry_location() {
        let f = write_csv("a,y\n1,2\n3,oops\n");
        match load_csv_dataset::<f64>(f.path(), "y", false) {
            Err(Error::Parse { row, column, .. }) => {
                assert_eq!(row, 2);
                assert_eq!(column, "y");
            }
            other => panic!("unexpected {other:?}"),
        }
        let f = write_csv("a,b\n1,2\n");
        assert!(matches!(
            load_csv_dataset::<f64>(f.path(), "y", false),
            Err(Error::Parse { row: 0, .. })
        ));
        let f = write_csv("");
        assert!(matches!(
            load_csv_dataset::<f64>(f.path(), "y", false),
            Err(Error::Parse { .. })
        ));
        let f = write_csv("a,y\n");
        assert!(matches!(
            load_csv_dataset::<f64>(f.path(), "y", false),
            Err(Error::Parse { .. })
        ));
        assert!(matches!(
            load_csv_dataset::<f64>("/nonexistent/file.csv", "y", false),
            Err(Error::Io(_))
        ));
    }

    #[test]
    fn dataset_validation() {
        assert!(Dataset::new(vec![vec![1.0_f64]], vec![]).is_err());
        assert!(Dataset::new(vec![vec![f64::NAN]], vec![vec![1.0]]).is_err());
        assert!(Dataset::new(vec![vec![1.0_f64], vec![1.0, 2.0]], vec![vec![1.0], vec![1.0]]).is_err());
    }
}
