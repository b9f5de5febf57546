//! Dataset loaders and deterministic synthetic stand-ins.

use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};

use crate::error::{Error, Result};

pub const PIMA_ROWS: usize = 768;
pub const PIMA_COVARIATES: usize = 8;
pub const PINE_POINTS: usize = 126;

/// Raw Pima-style table: covariates and a binary outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryTable {
    pub covariates: DMatrix<f64>,
    pub response: DVector<f64>,
}

impl BinaryTable {
    /// Standardized covariates (zero mean, unit sample variance) with a
    /// leading intercept column.
    pub fn standardized_design(&self) -> Result<DMatrix<f64>> {
        let (m, k) = self.covariates.shape();
        if m < 2 {
            return Err(Error::Data("need at least two rows to standardize".into()));
        }
        let mut design = DMatrix::from_element(m, k + 1, 1.0);
        for j in 0..k {
            let col = self.covariates.column(j);
            let mean = col.mean();
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
            if var <= 0.0 {
                return Err(Error::Data(format!("covariate column {j} is constant")));
            }
            let sd = var.sqrt();
            for i in 0..m {
                design[(i, j + 1)] = (col[i] - mean) / sd;
            }
        }
        Ok(design)
    }
}

/// Parses a comma-separated table whose last column is a 0/1 outcome.
///
/// A first row that does not parse as numbers is treated as a header.
pub fn parse_binary_table<R: Read>(reader: R, n_covariates: usize) -> Result<BinaryTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let width = n_covariates + 1;
    let mut values = Vec::new();
    let mut response = Vec::new();
    for (idx, record) in rdr.records().enumerate() {
        let line = idx + 1;
        let record = record.map_err(|e| Error::Data(format!("row {line}: {e}")))?;
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        let row = match parsed {
            Ok(row) => row,
            Err(_) if idx == 0 => continue,
            Err(_) => return Err(Error::Data(format!("row {line}: non-numeric field"))),
        };
        if row.len() != width {
            return Err(Error::Data(format!(
                "row {line}: expected {width} fields, found {}",
                row.len()
            )));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data(format!("row {line}: non-finite value")));
        }
        let y = row[n_covariates];
        if y != 0.0 && y != 1.0 {
            return Err(Error::Data(format!("row {line}: outcome {y} is not 0 or 1")));
        }
        values.extend_from_slice(&row[..n_covariates]);
        response.push(y);
    }
    if response.is_empty() {
        return Err(Error::Data("no data rows".into()));
    }
    Ok(BinaryTable {
        covariates: DMatrix::from_row_slice(response.len(), n_covariates, &values),
        response: DVector::from_vec(response),
    })
}

pub fn load_pima(path: &Path) -> Result<BinaryTable> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e} (expected Pima CSV, 8 covariates + 0/1 outcome)", path.display())))?;
    parse_binary_table(file, PIMA_COVARIATES)
}

/// Parses (x, y) coordinates in [0, 1]², one point per line, separated by
/// whitespace or commas. Blank lines and lines starting with `#` are skipped;
/// a non-numeric first line is treated as a header.
pub fn parse_points(text: &str) -> Result<Vec<(f64, f64)>> {
    let mut points = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .collect();
        let parsed: std::result::Result<Vec<f64>, _> = fields.iter().map(|f| f.parse::<f64>()).collect();
        let row = match parsed {
            Ok(row) => row,
            Err(_) if points.is_empty() && idx == 0 => continue,
            Err(_) => return Err(Error::Data(format!("line {}: non-numeric field", idx + 1))),
        };
        if row.len() != 2 {
            return Err(Error::Data(format!(
                "line {}: expected 2 coordinates, found {}",
                idx + 1,
                row.len()
            )));
        }
        if row.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Data(format!("line {}: coordinates must lie in [0, 1]", idx + 1)));
        }
        points.push((row[0], row[1]));
    }
    if points.is_empty() {
        return Err(Error::Data("no points".into()));
    }
    Ok(points)
}

pub fn load_points(path: &Path) -> Result<Vec<(f64, f64)>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e} (expected x y coordinates in [0,1])", path.display())))?;
    parse_points(&text)
}

/// Bins points into an n×n grid, row-major with row index from the first
/// coordinate; points on the upper boundary go to the last cell.
pub fn bin_points(points: &[(f64, f64)], n: usize) -> Vec<u32> {
    let mut counts = vec![0u32; n * n];
    let cell = |v: f64| ((v * n as f64).floor() as usize).min(n - 1);
    for &(x, y) in points {
        counts[cell(x) * n + cell(y)] += 1;
    }
    counts
}

/// Synthetic table with the shape and rough marginal scales of the Pima
/// diabetes data (768 rows, 8 covariates), outcomes drawn from a logistic
/// model on the standardized covariates.
pub fn synthetic_pima(seed: u64) -> BinaryTable {
    const MEANS: [f64; 8] = [3.8, 120.9, 69.1, 20.5, 79.8, 32.0, 0.47, 33.2];
    const SDS: [f64; 8] = [3.4, 32.0, 19.4, 16.0, 115.2, 7.9, 0.33, 11.8];
    const COEF: [f64; 9] = [-0.87, 0.41, 1.12, -0.26, 0.01, -0.14, 0.71, 0.31, 0.18];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = PIMA_ROWS;
    let mut cov = DMatrix::zeros(m, 8);
    let mut response = DVector::zeros(m);
    for i in 0..m {
        let shared: f64 = rng.sample(StandardNormal);
        let mut z = [0.0; 8];
        for (j, zj) in z.iter_mut().enumerate() {
            let own: f64 = rng.sample(StandardNormal);
            *zj = if j == 0 || j == 7 { 0.5 * shared + 0.866 * own } else { 0.3 * shared + 0.954 * own };
            cov[(i, j)] = MEANS[j] + SDS[j] * *zj;
        }
        let eta = COEF[0] + COEF[1..].iter().zip(&z).map(|(c, z)| c * z).sum::<f64>();
        let p = 1.0 / (1.0 + (-eta).exp());
        let u: f64 = rng.sample(Uniform::new(0.0, 1.0).expect("valid range"));
        response[i] = if u < p { 1.0 } else { 0.0 };
    }
    BinaryTable { covariates: cov, response }
}

/// Synthetic clustered point pattern on [0, 1]² (126 points, Thomas-type
/// clusters) standing in for the pine-sapling locations.
pub fn synthetic_pine(seed: u64) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Uniform::new(0.0, 1.0).expect("valid range");
    let spread = Normal::new(0.0, 0.06).expect("valid sd");
    let parents: Vec<(f64, f64)> = (0..14).map(|_| (unit.sample(&mut rng), unit.sample(&mut rng))).collect();
    let reflect = |v: f64| {
        let v = v.rem_euclid(2.0);
        if v > 1.0 { 2.0 - v } else { v }
    };
    (0..PINE_POINTS)
        .map(|k| {
            let (px, py) = parents[k % parents.len()];
            (reflect(px + spread.sample(&mut rng)), reflect(py + spread.sample(&mut rng)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_is_detected() {
        let text = "a,b,y\n1,2,0\n3,5,1\n";
        let t = parse_binary_table(text.as_bytes(), 2).unwrap();
        assert_eq!(t.covariates.shape(), (2, 2));
        assert_eq!(t.response.as_slice(), &[0.0, 1.0]);
    }

    #[test]
    fn bad_row_reports_line() {
        let text = "1,2,0\n3,x,1\n";
        let err = parse_binary_table(text.as_bytes(), 2).unwrap_err();
        assert!(err.to_string().contains("row 2"), "{err}");
    }

    #[test]
    fn wrong_width_reports_line() {
        let text = "1,2,0\n3,4\n";
        let err = parse_binary_table(text.as_bytes(), 2).unwrap_err();
        assert!(err.to_string().contains("row 2"), "{err}");
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(parse_binary_table("".as_bytes(), 8).is_err());
        assert!(parse_points("").is_err());
    }

    #[test]
    fn boundary_points_are_clamped() {
        let counts = bin_points(&[(1.0, 1.0), (0.0, 0.0), (0.5, 0.26)], 4);
        assert_eq!(counts[15], 1);
        assert_eq!(counts[0], 1);
        assert_eq!(counts[2 * 4 + 1], 1);
        assert_eq!(counts.iter().sum::<u32>(), 3);
    }

    #[test]
    fn points_accept_mixed_separators() {
        let pts = parse_points("x y\n0.1 0.2\n0.3,0.4\n").unwrap();
        assert_eq!(pts, vec![(0.1, 0.2), (0.3, 0.4)]);
    }

    #[test]
    fn synthetic_shapes() {
        let t = synthetic_pima(1);
        assert_eq!(t.covariates.shape(), (PIMA_ROWS, PIMA_COVARIATES));
        let design = t.standardized_design().unwrap();
        assert_eq!(design.shape(), (PIMA_ROWS, 9));
        let frac = t.response.mean();
        assert!(frac > 0.2 && frac < 0.6, "{frac}");
        assert_eq!(synthetic_pine(3).len(), PINE_POINTS);
        assert_eq!(synthetic_pine(3), synthetic_pine(3));
    }
}
