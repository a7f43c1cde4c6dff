//! Principal component analysis via eigendecomposition of the sample covariance.

use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Result, SamdpError};
use crate::matrix::Matrix;
use crate::textio::{self, Header};

pub const PCA_TAG: &str = "samdp-pca";

/// A fitted projection onto the top principal directions.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// One principal direction per row, ordered by non-increasing variance.
    pub components: Matrix,
    pub explained_variance: Vec<f64>,
}

impl PcaModel {
    pub fn fit(features: &Matrix, d: usize) -> Result<Self> {
        let (n, dim) = (features.rows(), features.cols());
        if d == 0 || d > dim || d > n {
            return Err(SamdpError::invalid(format!(
                "pca dimension {d} must be in 1..=min(N={n}, D={dim})"
            )));
        }
        if !features.is_finite() {
            return Err(SamdpError::invalid("pca input contains non-finite values"));
        }
        let mut mean = vec![0.0; dim];
        for row in features.iter_rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);

        let mut cov = DMatrix::<f64>::zeros(dim, dim);
        let mut centered = vec![0.0; dim];
        for row in features.iter_rows() {
            for (c, (v, m)) in centered.iter_mut().zip(row.iter().zip(&mean)) {
                *c = v - m;
            }
            for a in 0..dim {
                let ca = centered[a];
                if ca == 0.0 {
                    continue;
                }
                for b in a..dim {
                    cov[(a, b)] += ca * centered[b];
                }
            }
        }
        let denom = (n.max(2) - 1) as f64;
        for a in 0..dim {
            for b in a..dim {
                let v = cov[(a, b)] / denom;
                cov[(a, b)] = v;
                cov[(b, a)] = v;
            }
        }

        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

        let mut components = Matrix::zeros(d, dim);
        let mut explained_variance = Vec::with_capacity(d);
        for (row, &idx) in order.iter().take(d).enumerate() {
            let col = eig.eigenvectors.column(idx);
            // sign convention: the largest-magnitude entry is positive
            let mut pivot = 0;
            for k in 1..dim {
                if col[k].abs() > col[pivot].abs() {
                    pivot = k;
                }
            }
            let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
            for k in 0..dim {
                components.set(row, k, sign * col[k]);
            }
            explained_variance.push(eig.eigenvalues[idx].max(0.0));
        }
        Ok(PcaModel {
            mean,
            components,
            explained_variance,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.components.rows()
    }

    pub fn transform_row(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(SamdpError::invalid(format!(
                "feature dimension {} does not match projection input {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(self
            .components
            .iter_rows()
            .map(|c| {
                c.iter()
                    .zip(x.iter().zip(&self.mean))
                    .map(|(w, (v, m))| w * (v - m))
                    .sum()
            })
            .collect())
    }

    pub fn transform(&self, features: &Matrix) -> Result<Matrix> {
        let mut out = Matrix::zeros(features.rows(), self.output_dim());
        for (i, row) in features.iter_rows().enumerate() {
            out.row_mut(i).copy_from_slice(&self.transform_row(row)?);
        }
        Ok(out)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "#{PCA_TAG} v1 D={} d={}\n",
            self.input_dim(),
            self.output_dim()
        );
        textio::push_row(&mut out, &self.mean, false);
        for c in self.components.iter_rows() {
            textio::push_row(&mut out, c, false);
        }
        textio::push_row(&mut out, &self.explained_variance, false);
        out
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = Header::parse(origin, lines.next(), PCA_TAG)?;
        let dim: usize = header.require(origin, "D")?;
        let d: usize = header.require(origin, "d")?;
        let mut next = |line_no: usize, width: usize| -> Result<Vec<f64>> {
            let line = lines.next().ok_or_else(|| SamdpError::Parse {
                path: origin.to_string(),
                line: line_no,
                message: "unexpected end of file".into(),
            })?;
            textio::parse_row(origin, line_no, line, width)
        };
        let mean = next(2, dim)?;
        let mut components = Matrix::zeros(d, dim);
        for r in 0..d {
            components.row_mut(r).copy_from_slice(&next(3 + r, dim)?);
        }
        let explained_variance = next(3 + d, d)?;
        Ok(PcaModel {
            mean,
            components,
            explained_variance,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        textio::write_text(path, &self.to_text())
    }

    pub fn load(path: &Path) -> Result<Self> {
        PcaModel::parse(&textio::read_text(path)?, &path.display().to_string())
    }
}

/// Projects `features` onto their top `d` principal directions.
pub fn pca_reduce(features: &Matrix, d: usize) -> Result<Matrix> {
    PcaModel::fit(features, d)?.transform(features)
}
