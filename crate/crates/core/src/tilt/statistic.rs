use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The declared feature map `T` through which the tilt acts.
///
/// Only pure, explicitly parameterized maps are supported. Learned
/// statistics (market mean and spread, say) are expected to arrive as
/// ordinary feature columns and then be selected with [`Subset`].
///
/// [`Subset`]: SufficientStatistic::Subset
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SufficientStatistic {
    /// `T(x) = x`.
    #[default]
    Identity,
    /// `T(x) = (x[i] for i in indices)`.
    Subset { indices: Vec<usize> },
    /// `T(x) = A x + c`, with `A` given row by row.
    Affine { matrix: Vec<Vec<f64>>, offset: Vec<f64> },
}

impl SufficientStatistic {
    /// Output length `p` for inputs of dimension `d`, or a shape error if the
    /// map cannot accept such inputs.
    pub fn output_dim(&self, d: usize) -> Result<usize> {
        match self {
            Self::Identity => Ok(d),
            Self::Subset { indices } => {
                if indices.is_empty() {
                    return Err(Error::invalid("subset statistic selects no coordinates"));
                }
                if let Some(&bad) = indices.iter().find(|&&i| i >= d) {
                    return Err(Error::Shape {
                        what: "subset statistic index",
                        expected: d,
                        found: bad,
                    });
                }
                Ok(indices.len())
            }
            Self::Affine { matrix, offset } => {
                if matrix.is_empty() {
                    return Err(Error::invalid("affine statistic has no rows"));
                }
                if offset.len() != matrix.len() {
                    return Err(Error::Shape {
                        what: "affine offset",
                        expected: matrix.len(),
                        found: offset.len(),
                    });
                }
                for row in matrix {
                    if row.len() != d {
                        return Err(Error::Shape {
                            what: "affine matrix columns",
                            expected: d,
                            found: row.len(),
                        });
                    }
                }
                if matrix.iter().flatten().chain(offset).any(|v| !v.is_finite()) {
                    return Err(Error::invalid("affine statistic has non-finite entries"));
                }
                Ok(matrix.len())
            }
        }
    }

    /// Evaluates `T(x)` into `out`, which is cleared first.
    pub fn eval_into(&self, x: &[f64], out: &mut Vec<f64>) -> Result<()> {
        out.clear();
        match self {
            Self::Identity => out.extend_from_slice(x),
            Self::Subset { indices } => {
                for &i in indices {
                    let v = x.get(i).ok_or(Error::Shape {
                        what: "subset statistic index",
                        expected: x.len(),
                        found: i,
                    })?;
                    out.push(*v);
                }
            }
            Self::Affine { matrix, offset } => {
                for (row, c) in matrix.iter().zip(offset) {
                    if row.len() != x.len() {
                        return Err(Error::Shape {
                            what: "affine statistic input",
                            expected: row.len(),
                            found: x.len(),
                        });
                    }
                    out.push(row.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() + c);
                }
            }
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = Vec::new();
        self.eval_into(x, &mut out)?;
        Ok(out)
    }

    /// Evaluates `T` on every row of a row-major matrix, returning a flat
    /// `n x p` buffer.
    pub fn eval_rows<'a>(
        &self,
        rows: impl Iterator<Item = &'a [f64]>,
        d: usize,
    ) -> Result<(usize, Vec<f64>)> {
        let p = self.output_dim(d)?;
        let mut flat = Vec::new();
        let mut buf = Vec::with_capacity(p);
        for x in rows {
            self.eval_into(x, &mut buf)?;
            flat.extend_from_slice(&buf);
        }
        Ok((p, flat))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_subset_affine() {
        let id = SufficientStatistic::Identity;
        assert_eq!(id.eval(&[1.5, -2.0]).unwrap(), vec![1.5, -2.0]);

        let sub = SufficientStatistic::Subset { indices: vec![0] };
        assert_eq!(sub.eval(&[3.0, 9.9]).unwrap(), vec![3.0]);

        let aff = SufficientStatistic::Affine {
            matrix: vec![vec![2.0, 0.0], vec![0.0, 1.0]],
            offset: vec![1.0, 0.0],
        };
        assert_eq!(aff.eval(&[1.0, 4.0]).unwrap(), vec![3.0, 4.0]);
    }

    #[test]
    fn dimension_mismatch_is_a_shape_error() {
        let sub = SufficientStatistic::Subset { indices: vec![3] };
        assert!(matches!(sub.eval(&[1.0, 2.0]), Err(Error::Shape { .. })));
        assert!(matches!(sub.output_dim(2), Err(Error::Shape { .. })));

        let aff = SufficientStatistic::Affine {
            matrix: vec![vec![1.0, 1.0]],
            offset: vec![0.0],
        };
        assert!(matches!(aff.eval(&[1.0]), Err(Error::Shape { .. })));
        assert_eq!(aff.output_dim(2).unwrap(), 1);
    }

    #[test]
    fn json_form_is_tagged() {
        let s: SufficientStatistic =
            serde_json::from_str(r#"{"kind":"subset","indices":[1,2]}"#).unwrap();
        assert_eq!(s, SufficientStatistic::Subset { indices: vec![1, 2] });
    }
}
