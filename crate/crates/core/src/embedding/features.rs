use super::{EmbeddedDataset, ValueScaleMode};
use crate::error::{Result, SamdpError};
use crate::matrix::Matrix;

fn mean_and_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var)
}

fn column(m: &Matrix, c: usize) -> Vec<f64> {
    m.iter_rows().map(|r| r[c]).collect()
}

/// Concatenates 2-D map coordinates with the (optionally rescaled) value estimate.
///
/// With [`ValueScaleMode::Standardize`] the values are standardized and then
/// multiplied by the pooled standard deviation of the two map coordinates, so
/// all three axes carry comparable spread. Constant values map to 0.
pub fn build_feature_vectors(
    map_coords: &Matrix,
    values: &[f64],
    mode: ValueScaleMode,
) -> Result<EmbeddedDataset> {
    let n = map_coords.rows();
    if map_coords.cols() != 2 {
        return Err(SamdpError::invalid("map coordinates must be N x 2"));
    }
    if values.len() != n {
        return Err(SamdpError::invalid(format!(
            "{} values for {n} map points",
            values.len()
        )));
    }
    let third: Vec<f64> = match mode {
        ValueScaleMode::Off => values.to_vec(),
        ValueScaleMode::Standardize if n == 0 => Vec::new(),
        ValueScaleMode::Standardize => {
            let (vm, vv) = mean_and_var(values);
            if vv <= 0.0 {
                log::warn!("value estimates have zero variance; value coordinate set to 0");
                vec![0.0; n]
            } else {
                let (_, var_x) = mean_and_var(&column(map_coords, 0));
                let (_, var_y) = mean_and_var(&column(map_coords, 1));
                let pooled = (0.5 * (var_x + var_y)).sqrt();
                let sd = vv.sqrt();
                values.iter().map(|v| (v - vm) / sd * pooled).collect()
            }
        }
    };
    let mut points = Matrix::zeros(n, 3);
    for i in 0..n {
        let row = points.row_mut(i);
        row[0] = map_coords.get(i, 0);
        row[1] = map_coords.get(i, 1);
        row[2] = third[i];
    }
    EmbeddedDataset::new(points)
}
