//! Matrix and pseudosurface file formats.

use serde::{Deserialize, Serialize};
use wavegauge::grassmann::Projector;
use wavegauge::two_space::{PseudoSurface, Skeleton};
use wavegauge::{CMat, C64};

/// Row-major nested `[re, im]` pairs.
pub type MatrixJson = Vec<Vec<[f64; 2]>>;

pub fn to_matrix(rows: &MatrixJson) -> Result<CMat, String> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err("matrix must be a non-empty rectangular array of [re, im] pairs".into());
    }
    Ok(CMat::from_fn(r, c, |i, j| C64::new(rows[i][j][0], rows[i][j][1])))
}

#[cfg(test)]
pub fn from_matrix(a: &CMat) -> MatrixJson {
    (0..a.nrows()).map(|i| (0..a.ncols()).map(|j| [a[(i, j)].re, a[(i, j)].im]).collect()).collect()
}

/// `N + 1` samples on a uniform grid; each sample is a skeleton of `n×m`
/// frames, target first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PseudoSurfaceFile {
    #[serde(rename = "N")]
    pub grid: usize,
    pub n: usize,
    pub m: usize,
    pub samples: Vec<Vec<MatrixJson>>,
}

impl PseudoSurfaceFile {
    pub fn skeletons(&self) -> Result<Vec<Skeleton>, String> {
        if self.samples.len() != self.grid + 1 {
            return Err(format!("expected N + 1 = {} samples, found {}", self.grid + 1, self.samples.len()));
        }
        self.samples
            .iter()
            .enumerate()
            .map(|(k, frames)| {
                let ps = frames
                    .iter()
                    .map(|f| {
                        let z = to_matrix(f)?;
                        if z.nrows() != self.n || z.ncols() != self.m {
                            return Err(format!("sample {k}: frame is {}×{}, expected {}×{}", z.nrows(), z.ncols(), self.n, self.m));
                        }
                        Projector::from_frame(&z).map_err(|e| format!("sample {k}: {e}"))
                    })
                    .collect::<Result<Vec<_>, String>>()?;
                Skeleton::new(ps).map_err(|e| format!("sample {k}: {e}"))
            })
            .collect()
    }

    pub fn pseudosurface(&self) -> Result<PseudoSurface, String> {
        PseudoSurface::sampled(self.skeletons()?).map_err(|e| e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_round_trip() {
        let a = CMat::from_fn(2, 3, |i, j| C64::new(i as f64, j as f64 - 0.5));
        assert_eq!(to_matrix(&from_matrix(&a)).unwrap(), a);
        assert!(to_matrix(&vec![vec![[0.0, 0.0]], vec![]]).is_err());
    }
}
