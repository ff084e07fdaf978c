//! Real unitary harmonic transform on periodic 1-D and 2-D grids.
//!
//! The transform is the discrete Hartley transform `H x = (Re F x − Im F x)/√N`,
//! which is real, symmetric and its own inverse.

use std::fmt;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::linop::{LinearOperator, OperatorKind};

/// Signed integer frequency of index `i` on an axis of length `n`.
pub fn frequency(i: usize, n: usize) -> i64 {
    if i < n.div_ceil(2) {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

#[derive(Clone)]
pub struct HarmonicGrid {
    shape: Vec<usize>,
    plans: Vec<Arc<dyn Fft<f64>>>,
}

impl fmt::Debug for HarmonicGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HarmonicGrid").field("shape", &self.shape).finish()
    }
}

impl HarmonicGrid {
    /// Grid with one or two periodic axes in row-major order.
    pub fn new(shape: &[usize]) -> Result<Self> {
        if shape.is_empty() || shape.len() > 2 || shape.contains(&0) {
            return Err(Error::Config(format!(
                "harmonic grid needs one or two non-empty axes, got {shape:?}"
            )));
        }
        let mut planner = FftPlanner::new();
        let plans = shape.iter().map(|&n| planner.plan_fft_forward(n)).collect();
        Ok(Self {
            shape: shape.to_vec(),
            plans,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Integer wave vector of every grid mode, row-major.
    pub fn mode_vectors(&self) -> Vec<Vec<i64>> {
        match self.shape.as_slice() {
            [n] => (0..*n).map(|i| vec![frequency(i, *n)]).collect(),
            [n0, n1] => (0..n0 * n1)
                .map(|idx| vec![frequency(idx / n1, *n0), frequency(idx % n1, *n1)])
                .collect(),
            _ => unreachable!("grid rank checked at construction"),
        }
    }

    /// Euclidean wave-vector magnitude `|k|` per mode, in units of inverse domain length.
    pub fn mode_magnitudes(&self) -> Vec<f64> {
        self.mode_vectors()
            .iter()
            .map(|k| k.iter().map(|&c| (c * c) as f64).sum::<f64>().sqrt())
            .collect()
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.len());
        let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
        match self.shape.as_slice() {
            [_] => self.plans[0].process(&mut buf),
            [n0, n1] => {
                let (n0, n1) = (*n0, *n1);
                self.plans[1].process(&mut buf);
                let mut cols = vec![Complex::new(0.0, 0.0); n0 * n1];
                for r in 0..n0 {
                    for c in 0..n1 {
                        cols[c * n0 + r] = buf[r * n1 + c];
                    }
                }
                self.plans[0].process(&mut cols);
                for r in 0..n0 {
                    for c in 0..n1 {
                        buf[r * n1 + c] = cols[c * n0 + r];
                    }
                }
            }
            _ => unreachable!("grid rank checked at construction"),
        }
        let norm = 1.0 / (self.len() as f64).sqrt();
        buf.iter().map(|z| (z.re - z.im) * norm).collect()
    }
}

/// The harmonic transform as a self-adjoint linear operator.
#[derive(Debug, Clone)]
pub struct Hartley {
    grid: HarmonicGrid,
}

impl Hartley {
    pub fn new(grid: HarmonicGrid) -> Self {
        Self { grid }
    }
}

impl LinearOperator for Hartley {
    fn domain_dim(&self) -> usize {
        self.grid.len()
    }

    fn codomain_dim(&self) -> usize {
        self.grid.len()
    }

    fn kind(&self) -> OperatorKind {
        OperatorKind::External
    }

    fn matvec(&self, x: &[f64]) -> Vec<f64> {
        self.grid.transform(x)
    }

    fn rmatvec(&self, y: &[f64]) -> Vec<f64> {
        self.grid.transform(y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linop::{adjoint_mismatch, to_dense};
    use crate::vector::norm;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }

    /// Direct O(N²) cas-sum.
    fn naive_1d(x: &[f64]) -> Vec<f64> {
        let n = x.len();
        (0..n)
            .map(|k| {
                x.iter()
                    .enumerate()
                    .map(|(j, v)| {
                        let t = 2.0 * std::f64::consts::PI * (j * k) as f64 / n as f64;
                        v * (t.cos() + t.sin())
                    })
                    .sum::<f64>()
                    / (n as f64).sqrt()
            })
            .collect()
    }

    #[test]
    fn matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in [1, 2, 7, 16] {
            let grid = HarmonicGrid::new(&[n]).unwrap();
            let x = random(&mut rng, n);
            let fast = grid.transform(&x);
            for (a, b) in fast.iter().zip(naive_1d(&x)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn unitary_and_self_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for shape in [vec![32], vec![8, 8], vec![4, 16]] {
            let grid = HarmonicGrid::new(&shape).unwrap();
            let x = random(&mut rng, grid.len());
            let hx = grid.transform(&x);
            assert!((norm(&hx) - norm(&x)).abs() < 1e-12 * norm(&x));
            let back = grid.transform(&hx);
            for (a, b) in back.iter().zip(&x) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dense_form_is_symmetric_orthogonal() {
        let op = Hartley::new(HarmonicGrid::new(&[4, 4]).unwrap());
        let m = to_dense(&op, 64).unwrap();
        assert!((&m - m.transpose()).amax() < 1e-12);
        let eye = &m * &m;
        assert!((eye - nalgebra::DMatrix::identity(16, 16)).amax() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (x, y) = (random(&mut rng, 16), random(&mut rng, 16));
        assert!(adjoint_mismatch(&op, &x, &y).unwrap() < 1e-12);
    }

    #[test]
    fn frequencies_wrap() {
        let f: Vec<i64> = (0..6).map(|i| frequency(i, 6)).collect();
        assert_eq!(f, vec![0, 1, 2, -3, -2, -1]);
        let grid = HarmonicGrid::new(&[4, 4]).unwrap();
        let k = grid.mode_magnitudes();
        assert_eq!(k[0], 0.0);
        assert!((k[5] - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(HarmonicGrid::new(&[]).is_err());
        assert!(HarmonicGrid::new(&[2, 2, 2]).is_err());
        assert!(HarmonicGrid::new(&[0]).is_err());
    }
}
