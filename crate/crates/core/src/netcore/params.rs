use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::sampling::{fill_gaussian, fill_sphere, norm, rng_from_seed};
use crate::{Error, Result};

/// Trainable blocks of one residual block: `a ∈ R^m`, `B ∈ R^{m×d}` (row
/// major), `C ∈ R^{d×m}` (row major) and `r ∈ R^m`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerBlocks {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub r: Vec<f64>,
}

impl LayerBlocks {
    pub fn zeros(d: usize, m: usize) -> Self {
        LayerBlocks { a: vec![0.0; m], b: vec![0.0; m * d], c: vec![0.0; d * m], r: vec![0.0; m] }
    }

    fn blocks(&self) -> [&Vec<f64>; 4] {
        [&self.a, &self.b, &self.c, &self.r]
    }

    fn blocks_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [&mut self.a, &mut self.b, &mut self.c, &mut self.r]
    }
}

/// Parameters of the skip-connection network.
///
/// A network of depth `L` has `L - 1` residual blocks. Block `k` (0-based)
/// maps `(z_k, y_k)` to `(z_{k+1}, y_{k+1})`. The readout `(0, …, 0, 1)` is
/// fixed and not stored.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub d: usize,
    pub m: usize,
    pub depth: usize,
    pub layers: Vec<LayerBlocks>,
}

/// Per-block maximum deviations from a reference point, the quantities that
/// define the neighborhood `I_c`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BlockDeviation {
    pub a: f64,
    pub r: f64,
    pub b: f64,
    pub c: f64,
}

impl BlockDeviation {
    pub fn max(&self) -> f64 {
        self.a.max(self.r).max(self.b).max(self.c)
    }
}

fn check_dims(d: usize, m: usize, depth: usize) -> Result<()> {
    if d == 0 || m == 0 {
        return Err(Error::Dimension(format!("d and m must be positive (d={d}, m={m})")));
    }
    if depth < 2 {
        return Err(Error::Dimension(format!("depth must be at least 2, got {depth}")));
    }
    Ok(())
}

impl ModelParams {
    pub fn zeros(d: usize, m: usize, depth: usize) -> Result<Self> {
        check_dims(d, m, depth)?;
        Ok(ModelParams { d, m, depth, layers: vec![LayerBlocks::zeros(d, m); depth - 1] })
    }

    pub fn n_blocks(&self) -> usize {
        self.layers.len()
    }

    /// The fixed readout vector `w = (0, …, 0, 1)` of length `d + 1`.
    pub fn readout(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.d + 1];
        w[self.d] = 1.0;
        w
    }

    pub fn n_params(&self) -> usize {
        self.n_blocks() * (2 * self.m + 2 * self.m * self.d)
    }

    /// `a` blocks stacked into one vector of length `m (L-1)`.
    pub fn stacked_a(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.a.iter().copied()).collect()
    }

    pub fn set_stacked_a(&mut self, a: &[f64]) -> Result<()> {
        if a.len() != self.m * self.n_blocks() {
            return Err(Error::Dimension(format!(
                "stacked a has length {}, expected {}",
                a.len(),
                self.m * self.n_blocks()
            )));
        }
        for (layer, chunk) in self.layers.iter_mut().zip(a.chunks(self.m)) {
            layer.a.copy_from_slice(chunk);
        }
        Ok(())
    }

    /// `B` blocks stacked into an `m (L-1) × d` row-major matrix.
    pub fn stacked_b(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.b.iter().copied()).collect()
    }

    pub fn validate_shapes(&self) -> Result<()> {
        check_dims(self.d, self.m, self.depth)?;
        if self.layers.len() != self.depth - 1 {
            return Err(Error::Dimension(format!(
                "depth {} needs {} blocks, found {}",
                self.depth,
                self.depth - 1,
                self.layers.len()
            )));
        }
        let (d, m) = (self.d, self.m);
        for (k, l) in self.layers.iter().enumerate() {
            if l.a.len() != m || l.r.len() != m || l.b.len() != m * d || l.c.len() != d * m {
                return Err(Error::Dimension(format!("block {k} has inconsistent shapes")));
            }
        }
        Ok(())
    }

    pub fn same_shape(&self, other: &ModelParams) -> bool {
        self.d == other.d && self.m == other.m && self.depth == other.depth
    }

    /// Θ ← Θ − η ∇.
    pub fn descend(&mut self, grads: &Gradients, eta: f64) {
        for (p, g) in self.layers.iter_mut().zip(&grads.layers) {
            for (pb, gb) in p.blocks_mut().into_iter().zip(g.blocks()) {
                for (x, dx) in pb.iter_mut().zip(gb) {
                    *x -= eta * dx;
                }
            }
        }
    }

    /// Largest per-block deviation from `reference` over all blocks, using the
    /// Euclidean norm for vectors and Frobenius norm for matrices.
    pub fn deviation_from(&self, reference: &ModelParams) -> BlockDeviation {
        let mut dev = BlockDeviation::default();
        for (p, q) in self.layers.iter().zip(&reference.layers) {
            dev.a = dev.a.max(dist(&p.a, &q.a));
            dev.b = dev.b.max(dist(&p.b, &q.b));
            dev.c = dev.c.max(dist(&p.c, &q.c));
            dev.r = dev.r.max(dist(&p.r, &q.r));
        }
        dev
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ParamsDoc::from(self))?)
    }

    /// Parses the JSON layout `{"d","m","L","layers":[{"a","B","C","r"}]}`.
    /// With `is_init` the initialization invariants (zero `a, C, r` and
    /// `B` rows of norm `1/√m`) are checked too.
    pub fn from_json(s: &str, is_init: bool) -> Result<Self> {
        let doc: ParamsDoc = serde_json::from_str(s)?;
        let params = doc.into_params()?;
        params.validate_shapes()?;
        if is_init {
            params.validate_init()?;
        }
        Ok(params)
    }

    pub fn validate_init(&self) -> Result<()> {
        let radius = 1.0 / (self.m as f64).sqrt();
        for (k, l) in self.layers.iter().enumerate() {
            if l.a.iter().chain(&l.c).chain(&l.r).any(|&v| v != 0.0) {
                return Err(Error::Validation(format!("block {k}: a, C, r must be zero at initialization")));
            }
            for row in l.b.chunks(self.d) {
                let n = norm(row);
                if (n - radius).abs() > 1e-12 {
                    return Err(Error::Validation(format!(
                        "block {k}: B row norm {n} differs from 1/sqrt(m) = {radius}"
                    )));
                }
            }
        }
        Ok(())
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Gradient with the same block layout as [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub d: usize,
    pub m: usize,
    pub depth: usize,
    pub layers: Vec<LayerBlocks>,
}

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Gradients {
            d: params.d,
            m: params.m,
            depth: params.depth,
            layers: vec![LayerBlocks::zeros(params.d, params.m); params.n_blocks()],
        }
    }

    pub fn clear(&mut self) {
        for l in &mut self.layers {
            for b in l.blocks_mut() {
                b.fill(0.0);
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            for b in l.blocks_mut() {
                b.iter_mut().for_each(|v| *v *= s);
            }
        }
    }

    pub fn squared_norm(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.blocks())
            .map(|b| b.iter().map(|v| v * v).sum::<f64>())
            .sum()
    }

    /// Per-block squared norms `(‖∇a‖², ‖∇B‖², ‖∇C‖², ‖∇r‖²)` for each block.
    pub fn block_squared_norms(&self) -> Vec<[f64; 4]> {
        self.layers
            .iter()
            .map(|l| l.blocks().map(|b| b.iter().map(|v| v * v).sum::<f64>()))
            .collect()
    }

    pub fn stacked_a(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.a.iter().copied()).collect()
    }
}

/// Samples the standard initialization: `a = C = r = 0`, and every row of
/// every `B` drawn uniformly from the sphere of radius `1/√m`.
pub fn sample_init(d: usize, m: usize, depth: usize, seed: u64) -> Result<ModelParams> {
    let mut params = ModelParams::zeros(d, m, depth)?;
    let mut rng = rng_from_seed(seed);
    let radius = 1.0 / (m as f64).sqrt();
    for layer in &mut params.layers {
        for row in layer.b.chunks_mut(d) {
            fill_sphere(&mut rng, radius, row);
        }
    }
    Ok(params)
}

/// Samples the wider initialization: Gaussian `B` rows with covariance `I/m`
/// and `a, C, r` entries uniform in `[-scale/L, scale/L]`.
pub fn sample_init_alt(d: usize, m: usize, depth: usize, seed: u64, scale: f64) -> Result<ModelParams> {
    if !(0.0..=1.0).contains(&scale) {
        return Err(Error::Parameter(format!("init scale must lie in [0, 1], got {scale}")));
    }
    let mut params = ModelParams::zeros(d, m, depth)?;
    let mut rng = rng_from_seed(seed);
    let sd = 1.0 / (m as f64).sqrt();
    let half_width = scale / depth as f64;
    for layer in &mut params.layers {
        fill_gaussian(&mut rng, &mut layer.b);
        layer.b.iter_mut().for_each(|v| *v *= sd);
        for block in [&mut layer.a, &mut layer.c, &mut layer.r] {
            for v in block.iter_mut() {
                let u: f64 = rng.random_range(-1.0..=1.0);
                *v = if half_width == 0.0 { 0.0 } else { u * half_width };
            }
        }
    }
    Ok(params)
}

#[derive(Serialize, Deserialize)]
struct LayerDoc {
    a: Vec<f64>,
    #[serde(rename = "B")]
    b: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    c: Vec<Vec<f64>>,
    r: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ParamsDoc {
    d: usize,
    m: usize,
    #[serde(rename = "L")]
    depth: usize,
    layers: Vec<LayerDoc>,
}

impl From<&ModelParams> for ParamsDoc {
    fn from(p: &ModelParams) -> Self {
        let layers = p
            .layers
            .iter()
            .map(|l| LayerDoc {
                a: l.a.clone(),
                b: l.b.chunks(p.d).map(<[f64]>::to_vec).collect(),
                c: l.c.chunks(p.m).map(<[f64]>::to_vec).collect(),
                r: l.r.clone(),
            })
            .collect();
        ParamsDoc { d: p.d, m: p.m, depth: p.depth, layers }
    }
}

impl ParamsDoc {
    fn into_params(self) -> Result<ModelParams> {
        let (d, m) = (self.d, self.m);
        let mut layers = Vec::with_capacity(self.layers.len());
        for (k, l) in self.layers.into_iter().enumerate() {
            if l.b.len() != m || l.b.iter().any(|row| row.len() != d) {
                return Err(Error::Dimension(format!("block {k}: B must be {m}x{d}")));
            }
            if l.c.len() != d || l.c.iter().any(|row| row.len() != m) {
                return Err(Error::Dimension(format!("block {k}: C must be {d}x{m}")));
            }
            layers.push(LayerBlocks { a: l.a, b: l.b.concat(), c: l.c.concat(), r: l.r });
        }
        Ok(ModelParams { d, m, depth: self.depth, layers })
    }
}
