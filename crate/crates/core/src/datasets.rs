//! Deterministic synthetic distributions for desk-scale experiments.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;
use crate::ot::Assignment;
use crate::rng::train_rng;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetKind {
    StdGaussian,
    GaussianRing {
        modes: usize,
        radius: f64,
        mode_std: f64,
    },
    TwoMoons {
        noise_std: f64,
    },
    Checkerboard {
        cells: usize,
    },
    /// Data points of the polygon instance; see [`polygon_counterexample`].
    PolygonCounterexample {
        offset_angle: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub n: usize,
    pub dim: usize,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn std_gaussian(n: usize, dim: usize, seed: u64) -> Self {
        Self {
            kind: DatasetKind::StdGaussian,
            n,
            dim,
            seed,
        }
    }

    pub fn ring(n: usize, modes: usize, radius: f64, mode_std: f64, seed: u64) -> Self {
        Self {
            kind: DatasetKind::GaussianRing {
                modes,
                radius,
                mode_std,
            },
            n,
            dim: 2,
            seed,
        }
    }

    pub fn with_n(&self, n: usize) -> Self {
        Self { n, ..self.clone() }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.dim == 0 {
            return Err(Error::InvalidParameter("dataset needs n >= 1 and dim >= 1".into()));
        }
        let planar = |name: &str| {
            if self.dim != 2 {
                return Err(Error::InvalidParameter(format!("{name} is two-dimensional")));
            }
            Ok(())
        };
        match &self.kind {
            DatasetKind::StdGaussian => Ok(()),
            DatasetKind::GaussianRing {
                modes,
                radius,
                mode_std,
            } => {
                planar("gaussian_ring")?;
                if *modes == 0 || !(radius.is_finite() && *radius >= 0.0) || !(mode_std.is_finite() && *mode_std >= 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "gaussian_ring(modes={modes}, radius={radius}, mode_std={mode_std})"
                    )));
                }
                Ok(())
            }
            DatasetKind::TwoMoons { noise_std } => {
                planar("two_moons")?;
                if !(noise_std.is_finite() && *noise_std >= 0.0) {
                    return Err(Error::InvalidParameter(format!("two_moons noise_std {noise_std}")));
                }
                Ok(())
            }
            DatasetKind::Checkerboard { cells } => {
                planar("checkerboard")?;
                if *cells < 2 {
                    return Err(Error::InvalidParameter("checkerboard needs >= 2 cells".into()));
                }
                Ok(())
            }
            DatasetKind::PolygonCounterexample { offset_angle } => {
                planar("polygon_counterexample")?;
                check_polygon(self.n, *offset_angle)
            }
        }
    }
}

/// Samples an `n x dim` matrix; a pure function of `spec`.
pub fn generate(spec: &DatasetSpec) -> Result<Matrix> {
    spec.validate()?;
    let mut rng = train_rng(spec.seed);
    let mut out = Matrix::zeros(spec.n, spec.dim);
    match &spec.kind {
        DatasetKind::StdGaussian => {
            for v in out.as_mut_slice() {
                *v = rng.sample(StandardNormal);
            }
        }
        DatasetKind::GaussianRing {
            modes,
            radius,
            mode_std,
        } => {
            for i in 0..spec.n {
                let mode = rng.random_range(0..*modes);
                let angle = 2.0 * PI * mode as f64 / *modes as f64;
                let ex: f64 = rng.sample(StandardNormal);
                let ey: f64 = rng.sample(StandardNormal);
                let row = out.row_mut(i);
                row[0] = radius * angle.cos() + mode_std * ex;
                row[1] = radius * angle.sin() + mode_std * ey;
            }
        }
        DatasetKind::TwoMoons { noise_std } => {
            for i in 0..spec.n {
                let theta = PI * rng.random::<f64>();
                let (x, y) = if rng.random::<bool>() {
                    (theta.cos(), theta.sin())
                } else {
                    (1.0 - theta.cos(), 0.5 - theta.sin())
                };
                let ex: f64 = rng.sample(StandardNormal);
                let ey: f64 = rng.sample(StandardNormal);
                let row = out.row_mut(i);
                // Centre the pair of moons on the origin.
                row[0] = x - 0.5 + noise_std * ex;
                row[1] = y - 0.25 + noise_std * ey;
            }
        }
        DatasetKind::Checkerboard { cells } => {
            let width = 4.0 / *cells as f64;
            let dark: Vec<(usize, usize)> = (0..*cells)
                .flat_map(|a| (0..*cells).map(move |b| (a, b)))
                .filter(|(a, b)| (a + b) % 2 == 0)
                .collect();
            for i in 0..spec.n {
                let (a, b) = dark[rng.random_range(0..dark.len())];
                let row = out.row_mut(i);
                row[0] = -2.0 + width * (a as f64 + rng.random::<f64>());
                row[1] = -2.0 + width * (b as f64 + rng.random::<f64>());
            }
        }
        DatasetKind::PolygonCounterexample { offset_angle } => {
            out = polygon_counterexample(spec.n, *offset_angle)?.data;
        }
    }
    Ok(out)
}

fn check_polygon(n_points: usize, offset_angle: f64) -> Result<()> {
    if n_points < 3 {
        return Err(Error::InvalidParameter(format!(
            "polygon counter-example needs >= 3 points, got {n_points}"
        )));
    }
    let spacing = PI / n_points as f64;
    if !(offset_angle > 0.0 && offset_angle < spacing) {
        return Err(Error::InvalidParameter(format!(
            "offset angle {offset_angle} must lie in (0, {spacing})"
        )));
    }
    Ok(())
}

/// The cyclic instance on which no proper sub-batch can improve a suboptimal matching.
#[derive(Clone, Debug)]
pub struct PolygonInstance {
    pub data: Matrix,
    pub noise: Matrix,
    /// Each data point matched to its counterclockwise noise neighbour.
    pub suboptimal: Assignment,
    /// Each data point matched to its clockwise noise neighbour.
    pub optimal: Assignment,
}

/// Default offset: a fifth of the vertex spacing of the `2n`-gon.
pub fn default_polygon_offset(n_points: usize) -> f64 {
    0.2 * PI / n_points as f64
}

/// Data on the even vertices of a unit regular `2n`-gon, noise on the odd
/// vertices rotated counterclockwise by `offset_angle`.
pub fn polygon_counterexample(n_points: usize, offset_angle: f64) -> Result<PolygonInstance> {
    check_polygon(n_points, offset_angle)?;
    let spacing = PI / n_points as f64;
    let mut data = Matrix::zeros(n_points, 2);
    let mut noise = Matrix::zeros(n_points, 2);
    for i in 0..n_points {
        let a = 2.0 * i as f64 * spacing;
        data.row_mut(i).copy_from_slice(&[a.cos(), a.sin()]);
        let b = (2 * i + 1) as f64 * spacing + offset_angle;
        noise.row_mut(i).copy_from_slice(&[b.cos(), b.sin()]);
    }
    // Noise i sits just counterclockwise of data i; noise i-1 is the next one clockwise.
    let suboptimal = Assignment::identity(n_points);
    let optimal = Assignment::from_mapping((0..n_points).map(|i| (i + n_points - 1) % n_points).collect())?;
    Ok(PolygonInstance {
        data,
        noise,
        suboptimal,
        optimal,
    })
}
