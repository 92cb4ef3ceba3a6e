//! Power-iteration spectral radius against a dense eigenvalue oracle.

use epic_rc::diffcore::LinearMap;
use epic_rc::reservoir::{spectral_radius, ReservoirSpec, ReservoirWeights};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Dense(DMatrix<f64>);

impl LinearMap for Dense {
    fn rows(&self) -> usize {
        self.0.nrows()
    }
    fn cols(&self) -> usize {
        self.0.ncols()
    }
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = (0..self.0.ncols()).map(|j| self.0[(i, j)] * x[j]).sum();
        }
    }
    fn apply_transpose_add(&self, dy: &[f64], dx: &mut [f64]) {
        for (i, g) in dy.iter().enumerate() {
            for (j, d) in dx.iter_mut().enumerate() {
                *d += g * self.0[(i, j)];
            }
        }
    }
}

fn dense_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

#[test]
fn random_dense_matrix_matches_eigendecomposition() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let m = DMatrix::from_fn(50, 50, |_, _| rng.sample::<f64, _>(StandardNormal));
    let oracle = dense_radius(&m);
    let mut prng = ChaCha8Rng::seed_from_u64(0);
    let est = spectral_radius(&Dense(m), &mut prng).unwrap();
    assert!((est - oracle).abs() < 1e-6, "power {est} vs dense {oracle}");
}

#[test]
fn built_reservoir_has_unit_radius_by_dense_oracle() {
    for (input_dim, seed) in [(5usize, 0u64), (12, 1), (37, 2)] {
        let spec = ReservoirSpec::default();
        let w = ReservoirWeights::build(&spec, input_dim, seed).unwrap();
        let n = w.size();
        let m = DMatrix::from_row_slice(n, n, &w.recurrent().to_dense());
        let oracle = dense_radius(&m);
        assert!((oracle - 1.0).abs() < 1e-6, "N={n}: dense radius {oracle}");
    }
}
