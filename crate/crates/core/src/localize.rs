//! Cell identification over countable continuous partitions.

use std::sync::Arc;

use crate::error::{Result, SdeError, StageTag};
use crate::tes::{Terminal, TerminalRefiner};

pub type CellId = Vec<i64>;
pub type CustomCell = Arc<dyn Fn(&[f64]) -> (CellId, f64) + Send + Sync>;

#[derive(Clone)]
pub enum Partition {
    /// Unit cubes `[i_1, i_1+1) × ... × [i_d, i_d+1)`.
    HypercubeLattice,
    /// `[i, i+1) × ℝ^k` on one coordinate.
    Band { coord: usize },
    /// Half-open intervals cut at sorted `points` on one coordinate; cell `j`
    /// holds values with exactly `j` cut points at or below them.
    Breakpoints { coord: usize, points: Vec<f64> },
    /// Cell 1 is the open ball, cell 0 its complement.
    BallAndComplement { center: Vec<f64>, radius: f64 },
    /// Strictly decreasing radii; the cell is the number of balls containing x.
    NestedBalls { center: Vec<f64>, radii: Vec<f64> },
    /// Test hook returning `(cell, distance to complement)`.
    Custom(CustomCell),
}

impl std::fmt::Debug for Partition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Partition::HypercubeLattice => write!(f, "HypercubeLattice"),
            Partition::Band { coord } => write!(f, "Band({coord})"),
            Partition::Breakpoints { coord, points } => write!(f, "Breakpoints({coord}, {points:?})"),
            Partition::BallAndComplement { center, radius } => write!(f, "Ball({center:?}, {radius})"),
            Partition::NestedBalls { center, radii } => write!(f, "NestedBalls({center:?}, {radii:?})"),
            Partition::Custom(_) => write!(f, "Custom"),
        }
    }
}

fn euclid(x: &[f64], c: &[f64]) -> f64 {
    x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

/// `min_j min(x_j − i_j, i_j + 1 − x_j)`.
pub fn distance_unit_hypercube(x: &[f64], cell: &[i64]) -> Result<f64> {
    let mut d = f64::INFINITY;
    for (xj, ij) in x.iter().zip(cell) {
        let lo = *ij as f64;
        if !(*xj >= lo && *xj < lo + 1.0) {
            return Err(SdeError::Contract(format!("point {x:?} is outside cube {cell:?}")));
        }
        d = d.min((xj - lo).min(lo + 1.0 - xj));
    }
    Ok(d)
}

/// `min(L − a, b − L)` for `L` in `[a, b)`.
pub fn distance_band(l: f64, a: f64, b: f64) -> Result<f64> {
    if !(l >= a && l < b) {
        return Err(SdeError::Contract(format!("{l} is outside band [{a}, {b})")));
    }
    Ok((l - a).min(b - l))
}

impl Partition {
    /// `Ξ(x)`.
    pub fn cell(&self, x: &[f64]) -> CellId {
        match self {
            Partition::HypercubeLattice => x.iter().map(|v| v.floor() as i64).collect(),
            Partition::Band { coord } => vec![x[*coord].floor() as i64],
            Partition::Breakpoints { coord, points } => {
                vec![points.iter().filter(|p| **p <= x[*coord]).count() as i64]
            }
            Partition::BallAndComplement { center, radius } => vec![(euclid(x, center) < *radius) as i64],
            Partition::NestedBalls { center, radii } => {
                let r = euclid(x, center);
                vec![radii.iter().filter(|rk| r < **rk).count() as i64]
            }
            Partition::Custom(f) => f(x).0,
        }
    }

    /// `d(x, G_cell^c)`; zero when `x` sits on the boundary.
    pub fn distance_to_complement(&self, x: &[f64], cell: &[i64]) -> Result<f64> {
        if self.cell(x) != cell {
            return Err(SdeError::Contract(format!("point {x:?} is not in cell {cell:?}")));
        }
        Ok(match self {
            Partition::HypercubeLattice => distance_unit_hypercube(x, cell)?,
            Partition::Band { coord } => {
                let a = cell[0] as f64;
                distance_band(x[*coord], a, a + 1.0)?
            }
            Partition::Breakpoints { coord, points } => points
                .iter()
                .map(|p| (x[*coord] - p).abs())
                .fold(f64::INFINITY, f64::min),
            Partition::BallAndComplement { center, radius } => (radius - euclid(x, center)).abs(),
            Partition::NestedBalls { center, radii } => {
                let r = euclid(x, center);
                radii.iter().map(|rk| (r - rk).abs()).fold(f64::INFINITY, f64::min)
            }
            Partition::Custom(f) => f(x).1,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationOutcome {
    pub cell: CellId,
    pub final_tolerance: f64,
    pub refinement_count: u32,
    pub terminal: Terminal,
}

/// Halvings of ε before giving up even when each refinement is free.
pub const MAX_HALVINGS: u32 = 200;

/// Algorithm 1: start at ε = 1/2 and halve until `d(Y_ε(1), G_i^c) > ε`.
///
/// The refiner is borrowed so the caller keeps refining the same path.
pub fn localize<R: TerminalRefiner + ?Sized>(refiner: &mut R, partition: &Partition) -> Result<LocalizationOutcome> {
    let mut eps = 0.5;
    let mut count = 0;
    loop {
        let t = match refiner.terminal_within(eps) {
            Ok(t) => t,
            Err(SdeError::BudgetExhausted { .. }) => {
                return Err(SdeError::BudgetExhausted {
                    stage: StageTag::Localization,
                    spent: count as u64,
                    last_eps: eps,
                })
            }
            Err(e) => return Err(e),
        };
        let cell = partition.cell(&t.value);
        let dist = partition.distance_to_complement(&t.value, &cell)?;
        if dist > eps {
            return Ok(LocalizationOutcome {
                cell,
                final_tolerance: eps,
                refinement_count: count,
                terminal: t,
            });
        }
        count += 1;
        if count >= MAX_HALVINGS {
            return Err(SdeError::BudgetExhausted {
                stage: StageTag::Localization,
                spent: count as u64,
                last_eps: eps,
            });
        }
        eps *= 0.5;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// A degenerate system with a fixed terminal value and zero certificate.
    pub struct Fixed(pub Vec<f64>);

    impl TerminalRefiner for Fixed {
        fn terminal_within(&mut self, _eps: f64) -> Result<Terminal> {
            Ok(Terminal {
                value: self.0.clone(),
                certificate: 0.0,
                level: 0,
            })
        }
    }

    #[test]
    fn constant_path_lattice_one_iteration() {
        let out = localize(&mut Fixed(vec![0.3]), &Partition::HypercubeLattice).unwrap();
        assert_eq!(out.cell, vec![0]);
        assert_eq!(out.refinement_count, 1);
        assert_eq!(out.final_tolerance, 0.25);
    }

    #[test]
    fn ball_decided_once_eps_below_radius() {
        let p = Partition::BallAndComplement {
            center: vec![1.0, 2.0],
            radius: 0.1,
        };
        let out = localize(&mut Fixed(vec![1.0, 2.0]), &p).unwrap();
        assert_eq!(out.cell, vec![1]);
        assert!(out.final_tolerance < 0.1);
    }

    #[test]
    fn hypercube_distance_examples() {
        assert_eq!(distance_unit_hypercube(&[0.5, 0.5], &[0, 0]).unwrap(), 0.5);
        assert!((distance_unit_hypercube(&[0.1, 0.9], &[0, 0]).unwrap() - 0.1).abs() < 1e-15);
        assert!(distance_unit_hypercube(&[1.5, 0.5], &[0, 0]).is_err());
    }

    #[test]
    fn band_distance_examples() {
        assert_eq!(distance_band(1.25, 1.0, 2.0).unwrap(), 0.25);
        assert_eq!(distance_band(1.0, 1.0, 2.0).unwrap(), 0.0);
    }

    #[test]
    fn boundary_point_exhausts_halvings() {
        let r = localize(&mut Fixed(vec![1.0]), &Partition::Band { coord: 0 });
        assert!(matches!(
            r,
            Err(SdeError::BudgetExhausted {
                stage: StageTag::Localization,
                ..
            })
        ));
    }

    #[test]
    fn nested_balls_count_depth() {
        let p = Partition::NestedBalls {
            center: vec![0.0],
            radii: vec![1.0, 0.5, 0.25],
        };
        assert_eq!(p.cell(&[0.3]), vec![2]);
        assert_eq!(p.cell(&[2.0]), vec![0]);
        assert!((p.distance_to_complement(&[0.3], &[2]).unwrap() - 0.05).abs() < 1e-12);
    }
}
