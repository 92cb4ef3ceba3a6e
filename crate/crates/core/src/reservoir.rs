//! Echo state network with a dense-local / sparse-global recurrent topology.
//!
//! Input `i` owns a block of `n_unique` consecutive nodes; neighbouring blocks
//! overlap by `n_shared` nodes, so the blocks form a 1-D chain with stride
//! `n_unique - n_shared`. Recurrent connections between nodes closer than the
//! local radius are drawn with `p_local`, all others with `p_global`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffcore::kernels::dot;
use crate::diffcore::{LinearMap, NodeId, Tape};
use crate::error::{Error, Result};
use crate::seed::{self, Component};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RadiusUnit {
    /// `radius` counts block strides.
    Blocks,
    /// `radius` counts node indices.
    Nodes,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReservoirSpec {
    pub n_unique: usize,
    pub n_shared: usize,
    pub spectral_radius: f64,
    pub p_local: f64,
    pub p_global: f64,
    pub p_input: f64,
    pub radius: usize,
    pub radius_unit: RadiusUnit,
    pub input_scale: f64,
    /// Largest reservoir the builder accepts.
    pub max_size: usize,
}

impl Default for ReservoirSpec {
    fn default() -> Self {
        ReservoirSpec {
            n_unique: 40,
            n_shared: 20,
            spectral_radius: 1.0,
            p_local: 0.5,
            p_global: 0.01,
            p_input: 0.5,
            radius: 10,
            radius_unit: RadiusUnit::Blocks,
            input_scale: 1.0,
            max_size: 4096,
        }
    }
}

impl ReservoirSpec {
    pub fn validate(&self) -> Result<()> {
        for (key, p) in [
            ("reservoir.p_local", self.p_local),
            ("reservoir.p_global", self.p_global),
            ("reservoir.p_input", self.p_input),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(key, "probability must lie in [0, 1]"));
            }
        }
        if self.n_shared >= self.n_unique {
            return Err(Error::config("reservoir.n_shared", "must be smaller than n_unique"));
        }
        if self.radius < 1 {
            return Err(Error::config("reservoir.radius", "must be at least 1"));
        }
        if !(self.spectral_radius > 0.0) {
            return Err(Error::config("reservoir.spectral_radius", "must be positive"));
        }
        if !self.input_scale.is_finite() {
            return Err(Error::config("reservoir.input_scale", "must be finite"));
        }
        Ok(())
    }

    pub fn stride(&self) -> usize {
        self.n_unique - self.n_shared
    }

    /// Reservoir size for `input_dim` chained, overlapping input blocks.
    pub fn size_for(&self, input_dim: usize) -> usize {
        input_dim * self.stride() + self.n_shared
    }

    /// Node range owned by input `i`.
    pub fn block(&self, i: usize) -> std::ops::Range<usize> {
        let start = i * self.stride();
        start..start + self.n_unique
    }

    pub fn local_radius_nodes(&self) -> usize {
        match self.radius_unit {
            RadiusUnit::Blocks => self.radius * self.stride(),
            RadiusUnit::Nodes => self.radius,
        }
    }
}

/// Compressed sparse row matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from row-sorted triplets.
    fn from_rows(rows: usize, cols: usize, entries: Vec<Vec<(usize, f64)>>) -> Self {
        let mut row_ptr = Vec::with_capacity(rows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for row in entries {
            for (c, v) in row {
                col_idx.push(c);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        CsrMatrix {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_entries(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn scale(&mut self, factor: f64) {
        self.values.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.rows * self.cols];
        for r in 0..self.rows {
            for (c, v) in self.row_entries(r) {
                out[r * self.cols + c] = v;
            }
        }
        out
    }

    fn hash_into(&self, h: &mut u64) {
        for &v in &self.values {
            fnv(h, v.to_bits());
        }
        for &c in &self.col_idx {
            fnv(h, c as u64);
        }
    }
}

fn fnv(h: &mut u64, word: u64) {
    for byte in word.to_le_bytes() {
        *h ^= byte as u64;
        *h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
}

impl LinearMap for CsrMatrix {
    fn rows(&self) -> usize {
        self.rows
    }

    fn cols(&self) -> usize {
        self.cols
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            let span = self.row_ptr[r]..self.row_ptr[r + 1];
            let mut acc = 0.0;
            for (c, v) in self.col_idx[span.clone()].iter().zip(&self.values[span]) {
                acc += v * x[*c];
            }
            *o = acc;
        }
    }

    fn apply_transpose_add(&self, dy: &[f64], dx: &mut [f64]) {
        for (r, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let span = self.row_ptr[r]..self.row_ptr[r + 1];
            for (c, v) in self.col_idx[span.clone()].iter().zip(&self.values[span]) {
                dx[*c] += g * v;
            }
        }
    }
}

/// Fixed reservoir weights. Immutable once built.
#[derive(Clone, Debug)]
pub struct ReservoirWeights {
    spec: ReservoirSpec,
    input_dim: usize,
    w_rec: CsrMatrix,
    w_in: CsrMatrix,
    /// Spectral radius of the raw recurrent draw, before rescaling.
    raw_radius: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReservoirState {
    pub h: Vec<f64>,
}

impl ReservoirState {
    pub fn zeros(n: usize) -> Self {
        ReservoirState { h: vec![0.0; n] }
    }
}

impl ReservoirWeights {
    pub fn build(spec: &ReservoirSpec, input_dim: usize, seed: u64) -> Result<Self> {
        spec.validate()?;
        if input_dim < 1 {
            return Err(Error::config("reservoir.input_dim", "must be at least 1"));
        }
        let n = spec.size_for(input_dim);
        if n > spec.max_size {
            return Err(Error::config(
                "reservoir.max_size",
                format!("reservoir of {n} nodes exceeds the configured maximum {}", spec.max_size),
            ));
        }
        let mut rng = seed::rng(seed, 0, Component::Reservoir);

        let mut in_rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for i in 0..input_dim {
            for node in spec.block(i) {
                if rng.random::<f64>() < spec.p_input {
                    let w = rng.random_range(-1.0..1.0) * spec.input_scale;
                    in_rows[node].push((i, w));
                }
            }
        }
        let w_in = CsrMatrix::from_rows(n, input_dim, in_rows);

        let band = spec.local_radius_nodes();
        let rec_rows = (0..n)
            .map(|r| {
                let mut row = Vec::new();
                for c in 0..n {
                    let p = if r.abs_diff(c) <= band {
                        spec.p_local
                    } else {
                        spec.p_global
                    };
                    if rng.random::<f64>() < p {
                        let v: f64 = rng.sample(StandardNormal);
                        row.push((c, v));
                    }
                }
                row
            })
            .collect();
        let mut w_rec = CsrMatrix::from_rows(n, n, rec_rows);

        let raw_radius = spectral_radius(&w_rec, &mut rng)?;
        if raw_radius == 0.0 {
            return Err(Error::Numerical(
                "recurrent matrix is nilpotent or empty; cannot rescale to the target spectral radius"
                    .into(),
            ));
        }
        w_rec.scale(spec.spectral_radius / raw_radius);

        Ok(ReservoirWeights {
            spec: spec.clone(),
            input_dim,
            w_rec,
            w_in,
            raw_radius,
        })
    }

    pub fn spec(&self) -> &ReservoirSpec {
        &self.spec
    }

    pub fn size(&self) -> usize {
        self.w_rec.rows
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn recurrent(&self) -> &CsrMatrix {
        &self.w_rec
    }

    pub fn input(&self) -> &CsrMatrix {
        &self.w_in
    }

    pub fn raw_radius(&self) -> f64 {
        self.raw_radius
    }

    /// `h' = tanh(W_rec h + W_in x)` recorded on the tape; the weights are constants.
    pub fn advance<'a>(&'a self, tape: &mut Tape<'a>, h: NodeId, x: NodeId) -> Result<NodeId> {
        let rec = tape.matvec(&self.w_rec, h)?;
        let inp = tape.matvec(&self.w_in, x)?;
        let pre = tape.add(rec, inp)?;
        Ok(tape.tanh(pre))
    }

    /// Same update without a tape.
    pub fn advance_state(&self, state: &ReservoirState, x: &[f64]) -> Result<ReservoirState> {
        if state.h.len() != self.size() {
            return Err(Error::Dimension {
                op: "reservoir state",
                expected: self.size(),
                got: state.h.len(),
            });
        }
        if x.len() != self.input_dim {
            return Err(Error::Dimension {
                op: "reservoir input",
                expected: self.input_dim,
                got: x.len(),
            });
        }
        let n = self.size();
        let mut pre = vec![0.0; n];
        self.w_rec.apply(&state.h, &mut pre);
        let mut inj = vec![0.0; n];
        self.w_in.apply(x, &mut inj);
        Ok(ReservoirState {
            h: pre.iter().zip(&inj).map(|(a, b)| (a + b).tanh()).collect(),
        })
    }

    /// 64-bit FNV fingerprint of both weight matrices (values and sparsity).
    pub fn fingerprint(&self) -> u64 {
        let mut h = 0xCBF2_9CE4_8422_2325u64;
        self.w_rec.hash_into(&mut h);
        self.w_in.hash_into(&mut h);
        h
    }
}

/// Convergence settings for [`spectral_radius_with`].
#[derive(Clone, Copy, Debug)]
pub struct PowerIteration {
    pub rel_tol: f64,
    pub max_iters: usize,
    pub restarts: usize,
    /// Consecutive iterations the estimate must stay within `rel_tol`.
    pub patience: usize,
}

impl Default for PowerIteration {
    fn default() -> Self {
        PowerIteration {
            rel_tol: 1e-9,
            max_iters: 200_000,
            restarts: 3,
            patience: 25,
        }
    }
}

/// Largest eigenvalue modulus of a square operator.
pub fn spectral_radius(m: &dyn LinearMap, rng: &mut ChaCha8Rng) -> Result<f64> {
    spectral_radius_with(m, rng, PowerIteration::default())
}

/// Power iteration that also resolves a dominant complex-conjugate (or `±λ`)
/// pair: each step fits `A²x ≈ a·Ax + b·x` by least squares and takes the
/// larger root modulus of `z² - a z - b`.
pub fn spectral_radius_with(
    m: &dyn LinearMap,
    rng: &mut ChaCha8Rng,
    opts: PowerIteration,
) -> Result<f64> {
    let n = m.rows();
    if n != m.cols() {
        return Err(Error::Dimension {
            op: "spectral_radius",
            expected: n,
            got: m.cols(),
        });
    }
    if n == 0 {
        return Ok(0.0);
    }
    let mut last = f64::NAN;
    for attempt in 0..=opts.restarts {
        let mut x: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        normalize(&mut x);
        let mut ax = vec![0.0; n];
        let mut aax = vec![0.0; n];
        let mut stable = 0;
        let mut prev = f64::NAN;
        let mut collapsed = false;
        for _ in 0..opts.max_iters {
            m.apply(&x, &mut ax);
            let norm_ax = dot(&ax, &ax).sqrt();
            if norm_ax == 0.0 {
                collapsed = true;
                break;
            }
            m.apply(&ax, &mut aax);
            let est = pair_modulus(&x, &ax, &aax).unwrap_or(norm_ax);
            if (est - prev).abs() <= opts.rel_tol * est.abs().max(f64::MIN_POSITIVE) {
                stable += 1;
                if stable >= opts.patience {
                    return Ok(est);
                }
            } else {
                stable = 0;
            }
            prev = est;
            // Advance two steps at once; keeps x in a stable 2-D subspace when the
            // dominant eigenvalues are a conjugate pair.
            let norm_aax = dot(&aax, &aax).sqrt();
            if norm_aax == 0.0 {
                collapsed = true;
                break;
            }
            x.copy_from_slice(&aax);
            x.iter_mut().for_each(|v| *v /= norm_aax);
        }
        if collapsed {
            // Either the start vector was unlucky or the operator is nilpotent on it.
            if attempt == opts.restarts {
                return Ok(0.0);
            }
            continue;
        }
        last = prev;
    }
    Err(Error::Numerical(format!(
        "power iteration did not reach relative tolerance {:e} in {} iterations \
         ({} restarts); last estimate {last}",
        opts.rel_tol,
        opts.max_iters,
        opts.restarts
    )))
}

fn normalize(x: &mut [f64]) {
    let norm = dot(x, x).sqrt();
    if norm > 0.0 {
        x.iter_mut().for_each(|v| *v /= norm);
    }
}

/// Least-squares fit of `aax = a·ax + b·x`, returning the larger root modulus.
fn pair_modulus(x: &[f64], ax: &[f64], aax: &[f64]) -> Option<f64> {
    let (g11, g12, g22) = (dot(ax, ax), dot(ax, x), dot(x, x));
    let (r1, r2) = (dot(ax, aax), dot(x, aax));
    let det = g11 * g22 - g12 * g12;
    if det <= 1e-14 * g11 * g22 {
        // x and Ax are (nearly) parallel: a single real dominant eigenvalue.
        return None;
    }
    let a = (r1 * g22 - r2 * g12) / det;
    let b = (g11 * r2 - g12 * r1) / det;
    let disc = a * a + 4.0 * b;
    Some(if disc >= 0.0 {
        let s = disc.sqrt();
        ((a + s) / 2.0).abs().max(((a - s) / 2.0).abs())
    } else {
        (-b).sqrt()
    })
}
