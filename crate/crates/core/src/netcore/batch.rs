use super::params::{Gradients, LayerBlocks, ModelParams};
use crate::activation::ActivationKind;
use crate::data::Dataset;

const W: usize = 8;
/// One value per sample of a chunk, cache-line aligned.
#[derive(Debug, Clone, Copy)]
#[repr(C, align(64))]
struct Lane([f64; W]);
const ZERO: Lane = Lane([0.0; W]);

impl std::ops::Deref for Lane {
    type Target = [f64; W];
    #[inline(always)]
    fn deref(&self) -> &[f64; W] {
        &self.0
    }
}

impl std::ops::DerefMut for Lane {
    #[inline(always)]
    fn deref_mut(&mut self) -> &mut [f64; W] {
        &mut self.0
    }
}

/// Lane arithmetic. [`Portable`] is plain Rust; [`Avx512`] issues one vector
/// instruction per operation so that the compiler cannot re-vectorize the
/// surrounding loops across lanes with gathers. Both round identically.
trait Kernel {
    fn axpy(out: &mut Lane, a: f64, x: &Lane);
    fn mul(a: &Lane, b: &Lane) -> Lane;
    fn scale(a: f64, x: &Lane) -> Lane;
    /// `u` where `u > 0`, else 0.
    fn relu(u: &Lane) -> Lane;
    /// `x` times the ReLU derivative at `u`.
    fn relu_gate(x: &Lane, u: &Lane) -> Lane;
    fn reduce8(v: &[Lane]) -> Lane;
}

struct Portable;

impl Kernel for Portable {
    #[inline(always)]
    fn axpy(out: &mut Lane, a: f64, x: &Lane) {
        for k in 0..W {
            out[k] += a * x[k];
        }
    }

    #[inline(always)]
    fn mul(a: &Lane, b: &Lane) -> Lane {
        let mut o = ZERO;
        for k in 0..W {
            o[k] = a[k] * b[k];
        }
        o
    }

    #[inline(always)]
    fn scale(a: f64, x: &Lane) -> Lane {
        let mut o = ZERO;
        for k in 0..W {
            o[k] = a * x[k];
        }
        o
    }

    #[inline(always)]
    fn relu(u: &Lane) -> Lane {
        let mut o = ZERO;
        for k in 0..W {
            o[k] = ActivationKind::Relu.eval(u[k]);
        }
        o
    }

    #[inline(always)]
    fn relu_gate(x: &Lane, u: &Lane) -> Lane {
        let mut o = ZERO;
        for k in 0..W {
            o[k] = x[k] * ActivationKind::Relu.deriv(u[k]);
        }
        o
    }

    /// Lane sums of eight vectors at once, associated as
    /// `((x0 + x1) + (x2 + x3)) + ((x4 + x5) + (x6 + x7))`.
    #[inline(always)]
    fn reduce8(v: &[Lane]) -> Lane {
        let mut r = [ZERO; 4];
        for p in 0..4 {
            let (a, b) = (&v[2 * p], &v[2 * p + 1]);
            r[p] = Lane([a[0] + a[1], b[0] + b[1], a[2] + a[3], b[2] + b[3], a[4] + a[5], b[4] + b[5], a[6] + a[7], b[6] + b[7]]);
        }
        let mut t = [ZERO; 2];
        for p in 0..2 {
            let (a, b) = (&r[2 * p], &r[2 * p + 1]);
            t[p] = Lane([a[0] + a[2], a[1] + a[3], b[0] + b[2], b[1] + b[3], a[4] + a[6], a[5] + a[7], b[4] + b[6], b[5] + b[7]]);
        }
        let (a, b) = (&t[0], &t[1]);
        Lane([a[0] + a[4], a[1] + a[5], a[2] + a[6], a[3] + a[7], b[0] + b[4], b[1] + b[5], b[2] + b[6], b[3] + b[7]])
    }
}

/// Only instantiated behind a runtime `avx512f` check.
#[cfg(target_arch = "x86_64")]
struct Avx512;

#[cfg(target_arch = "x86_64")]
mod avx {
    use super::{Kernel, Lane, W};
    use std::arch::x86_64::*;

    #[inline(always)]
    fn load(l: &Lane) -> __m512d {
        // SAFETY: Lane is 64-byte aligned and the caller runs with avx512f.
        unsafe { _mm512_load_pd(l.0.as_ptr()) }
    }

    #[inline(always)]
    fn store(v: __m512d) -> Lane {
        let mut o = Lane([0.0; W]);
        // SAFETY: as in `load`.
        unsafe { _mm512_store_pd(o.0.as_mut_ptr(), v) };
        o
    }

    impl Kernel for super::Avx512 {
        #[inline(always)]
        fn axpy(out: &mut Lane, a: f64, x: &Lane) {
            // SAFETY: reached only from avx512f-enabled code.
            *out = store(unsafe { _mm512_add_pd(load(out), _mm512_mul_pd(_mm512_set1_pd(a), load(x))) });
        }

        #[inline(always)]
        fn mul(a: &Lane, b: &Lane) -> Lane {
            // SAFETY: as above.
            store(unsafe { _mm512_mul_pd(load(a), load(b)) })
        }

        #[inline(always)]
        fn scale(a: f64, x: &Lane) -> Lane {
            // SAFETY: as above.
            store(unsafe { _mm512_mul_pd(_mm512_set1_pd(a), load(x)) })
        }

        #[inline(always)]
        fn relu(u: &Lane) -> Lane {
            // SAFETY: as above.
            unsafe {
                let u = load(u);
                let pos = _mm512_cmp_pd_mask::<_CMP_GT_OQ>(u, _mm512_setzero_pd());
                store(_mm512_maskz_mov_pd(pos, u))
            }
        }

        #[inline(always)]
        fn relu_gate(x: &Lane, u: &Lane) -> Lane {
            // SAFETY: as above.
            unsafe {
                let pos = _mm512_cmp_pd_mask::<_CMP_GT_OQ>(load(u), _mm512_setzero_pd());
                let d = _mm512_maskz_mov_pd(pos, _mm512_set1_pd(1.0));
                store(_mm512_mul_pd(load(x), d))
            }
        }

        #[inline(always)]
        fn reduce8(v: &[Lane]) -> Lane {
            // SAFETY: as above.
            unsafe {
                let mut r = [_mm512_setzero_pd(); 4];
                for (p, rp) in r.iter_mut().enumerate() {
                    let (a, b) = (load(&v[2 * p]), load(&v[2 * p + 1]));
                    *rp = _mm512_add_pd(_mm512_unpacklo_pd(a, b), _mm512_unpackhi_pd(a, b));
                }
                let lo = _mm512_set_epi64(13, 12, 5, 4, 9, 8, 1, 0);
                let hi = _mm512_set_epi64(15, 14, 7, 6, 11, 10, 3, 2);
                let mut t = [_mm512_setzero_pd(); 2];
                for (p, tp) in t.iter_mut().enumerate() {
                    let (a, b) = (r[2 * p], r[2 * p + 1]);
                    *tp = _mm512_add_pd(_mm512_permutex2var_pd(a, lo, b), _mm512_permutex2var_pd(a, hi, b));
                }
                let (a, b) = (t[0], t[1]);
                store(_mm512_add_pd(_mm512_shuffle_f64x2::<0x44>(a, b), _mm512_shuffle_f64x2::<0xEE>(a, b)))
            }
        }
    }
}

trait Act {
    fn eval<K: Kernel>(u: &Lane) -> Lane;
    /// `x` times the derivative at `u`.
    fn gate<K: Kernel>(x: &Lane, u: &Lane) -> Lane;
}

struct Relu;
struct Tanh;

impl Act for Relu {
    #[inline(always)]
    fn eval<K: Kernel>(u: &Lane) -> Lane {
        K::relu(u)
    }
    #[inline(always)]
    fn gate<K: Kernel>(x: &Lane, u: &Lane) -> Lane {
        K::relu_gate(x, u)
    }
}

impl Act for Tanh {
    #[inline(always)]
    fn eval<K: Kernel>(u: &Lane) -> Lane {
        let mut o = ZERO;
        for k in 0..W {
            o[k] = ActivationKind::Tanh.eval(u[k]);
        }
        o
    }
    #[inline(always)]
    fn gate<K: Kernel>(x: &Lane, u: &Lane) -> Lane {
        let mut o = ZERO;
        for k in 0..W {
            o[k] = x[k] * ActivationKind::Tanh.deriv(u[k]);
        }
        o
    }
}

/// Forward and backward passes over a whole dataset at once. Samples are
/// packed into fixed-width lanes; each chunk of `W` samples is propagated
/// independently and padding lanes carry zero input and zero weight.
#[derive(Debug, Clone)]
pub struct BatchPropagator {
    n: usize,
    chunks: usize,
    d: usize,
    m: usize,
    blocks: usize,
    /// `[chunk][block + 1][coordinate]`
    z: Vec<Lane>,
    /// `[chunk][block + 1]`
    y: Vec<Lane>,
    /// `[chunk][block][unit]`
    pre: Vec<Lane>,
    g: Vec<Lane>,
    beta: Vec<Lane>,
    beta_next: Vec<Lane>,
    /// Per-sample gradient terms of one block, summed over lanes in groups.
    prod: Vec<Lane>,
    red: Vec<f64>,
    weights: Vec<Lane>,
    out: Vec<f64>,
}

impl BatchPropagator {
    /// Allocates buffers for `params` and loads the inputs of `data`, which
    /// are assumed to be validated unit vectors of matching dimension.
    pub fn new(params: &ModelParams, data: &Dataset) -> Self {
        let (n, d, m, blocks) = (data.n(), params.d, params.m, params.n_blocks());
        let chunks = n.div_ceil(W);
        let mut z = vec![ZERO; chunks * (blocks + 1) * d];
        for (s, x) in data.xs.iter().enumerate() {
            let q = s / W;
            for (j, v) in x.iter().enumerate() {
                z[q * (blocks + 1) * d + j][s % W] = *v;
            }
        }
        BatchPropagator {
            n,
            chunks,
            d,
            m,
            blocks,
            z,
            y: vec![ZERO; chunks * (blocks + 1)],
            pre: vec![ZERO; chunks * blocks * m],
            g: vec![ZERO; chunks * blocks * m],
            beta: vec![ZERO; d],
            beta_next: vec![ZERO; d],
            prod: vec![ZERO; (2 * m + 2 * d * m).div_ceil(W) * W],
            red: vec![0.0; (2 * m + 2 * d * m).div_ceil(W) * W],
            weights: vec![ZERO; chunks],
            out: vec![0.0; n],
        }
    }

    /// Runs the forward pass; returns the outputs `f(x_s)`.
    pub fn forward(&mut self, params: &ModelParams, act: ActivationKind) -> &[f64] {
        match act {
            ActivationKind::Relu => self.forward_dispatch::<Relu>(params),
            ActivationKind::Tanh => self.forward_dispatch::<Tanh>(params),
        }
        let stride = self.blocks + 1;
        for (s, o) in self.out.iter_mut().enumerate() {
            *o = self.y[(s / W) * stride + self.blocks][s % W];
        }
        &self.out
    }

    /// Risk `(1/2n) Σ (f(x_s) − y_s)²` and its gradient, written into `grads`.
    pub fn risk_grad(&mut self, params: &ModelParams, data: &Dataset, act: ActivationKind, grads: &mut Gradients) -> f64 {
        debug_assert!(self.n == data.n() && self.blocks == params.n_blocks());
        self.forward(params, act);
        let n = self.n;
        let mut sq = 0.0;
        self.weights.fill(ZERO);
        for s in 0..n {
            let e = self.out[s] - data.ys[s];
            sq += e * e;
            self.weights[s / W][s % W] = e / n as f64;
        }
        match act {
            ActivationKind::Relu => self.backward_dispatch::<Relu>(params, grads),
            ActivationKind::Tanh => self.backward_dispatch::<Tanh>(params, grads),
        }
        sq / (2.0 * n as f64)
    }

    fn forward_dispatch<A: Act>(&mut self, params: &ModelParams) {
        #[cfg(target_arch = "x86_64")]
        if std::arch::is_x86_feature_detected!("avx512f") {
            // SAFETY: the feature was detected at runtime.
            return unsafe { self.forward_avx512::<A>(params) };
        }
        self.forward_impl::<A, Portable>(params)
    }

    fn backward_dispatch<A: Act>(&mut self, params: &ModelParams, grads: &mut Gradients) {
        #[cfg(target_arch = "x86_64")]
        if std::arch::is_x86_feature_detected!("avx512f") {
            // SAFETY: the feature was detected at runtime.
            return unsafe { self.backward_avx512::<A>(params, grads) };
        }
        self.backward_impl::<A, Portable>(params, grads)
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx512f")]
    unsafe fn forward_avx512<A: Act>(&mut self, params: &ModelParams) {
        self.forward_impl::<A, Avx512>(params)
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx512f")]
    unsafe fn backward_avx512<A: Act>(&mut self, params: &ModelParams, grads: &mut Gradients) {
        self.backward_impl::<A, Avx512>(params, grads)
    }

    #[inline(always)]
    fn forward_impl<A: Act, K: Kernel>(&mut self, params: &ModelParams) {
        let (d, m, blocks) = (self.d, self.m, self.blocks);
        let zs = self.z.chunks_exact_mut((blocks + 1) * d);
        let ys = self.y.chunks_exact_mut(blocks + 1);
        let pres = self.pre.chunks_exact_mut(blocks * m);
        let gs = self.g.chunks_exact_mut(blocks * m);
        for (((zq, yq), preq), gq) in zs.zip(ys).zip(pres).zip(gs) {
            let (x, states) = zq.split_at_mut(d);
            for (k, layer) in params.layers.iter().enumerate() {
                let zk: &[Lane] = if k == 0 { x } else { &states[(k - 1) * d..k * d] };
                let pre = &mut preq[k * m..(k + 1) * m];
                let g = &mut gq[k * m..(k + 1) * m];
                let yk = yq[k];
                forward_block::<A, K>(layer, zk, yk, pre, g, d, m);
                let g = &gq[k * m..(k + 1) * m];
                let znext = &mut states[k * d..(k + 1) * d];
                for (j, zj) in znext.iter_mut().enumerate() {
                    let mut acc = x[j];
                    for (cji, gi) in layer.c[j * m..(j + 1) * m].iter().zip(g) {
                        K::axpy(&mut acc, *cji, gi);
                    }
                    *zj = acc;
                }
                let mut acc = yk;
                for (ai, gi) in layer.a[..m].iter().zip(g) {
                    K::axpy(&mut acc, *ai, gi);
                }
                yq[k + 1] = acc;
            }
        }
    }

    #[inline(always)]
    fn backward_impl<A: Act, K: Kernel>(&mut self, params: &ModelParams, grads: &mut Gradients) {
        let (d, m, blocks) = (self.d, self.m, self.blocks);
        for q in 0..self.chunks {
            let first = q == 0;
            let w = self.weights[q];
            let zq = &self.z[q * (blocks + 1) * d..(q + 1) * (blocks + 1) * d];
            let yq = &self.y[q * (blocks + 1)..(q + 1) * (blocks + 1)];
            let preq = &self.pre[q * blocks * m..(q + 1) * blocks * m];
            let gq = &self.g[q * blocks * m..(q + 1) * blocks * m];
            let mut alpha = Lane([1.0; W]);
            self.beta_next.fill(ZERO);
            for k in (0..blocks).rev() {
                let bufs = Backward {
                    w: &w,
                    g: &gq[k * m..(k + 1) * m],
                    pre: &preq[k * m..(k + 1) * m],
                    z: &zq[k * d..(k + 1) * d],
                    y: &yq[k],
                    beta_next: &self.beta_next,
                    beta: &mut self.beta,
                    prod: &mut self.prod,
                    red: &mut self.red,
                };
                let top = k + 1 == blocks;
                alpha = backward_block::<A, K>(bufs, alpha, &params.layers[k], &mut grads.layers[k], d, m, top, first);
                std::mem::swap(&mut self.beta, &mut self.beta_next);
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
#[inline(always)]
fn forward_block<A: Act, K: Kernel>(
    layer: &LayerBlocks,
    zk: &[Lane],
    yk: Lane,
    pre: &mut [Lane],
    g: &mut [Lane],
    d: usize,
    m: usize,
) {
    let zk = &zk[..d];
    for i in 0..m {
        let mut p = K::scale(layer.r[i], &yk);
        for (bij, zj) in layer.b[i * d..(i + 1) * d].iter().zip(zk) {
            K::axpy(&mut p, *bij, zj);
        }
        g[i] = A::eval::<K>(&p);
        pre[i] = p;
    }
}

struct Backward<'a> {
    w: &'a Lane,
    g: &'a [Lane],
    pre: &'a [Lane],
    z: &'a [Lane],
    y: &'a Lane,
    beta_next: &'a [Lane],
    beta: &'a mut [Lane],
    prod: &'a mut [Lane],
    red: &'a mut [f64],
}

/// One block of the adjoint recursion for one chunk. Returns the new `α`.
#[allow(clippy::too_many_arguments)]
#[inline(always)]
fn backward_block<A: Act, K: Kernel>(
    bufs: Backward<'_>,
    alpha_next: Lane,
    layer: &LayerBlocks,
    gl: &mut LayerBlocks,
    d: usize,
    m: usize,
    top: bool,
    first: bool,
) -> Lane {
    let Backward { w, g, pre, z, y, beta_next, beta, prod, red } = bufs;
    let (g, pre, z, beta_next, beta) = (&g[..m], &pre[..m], &z[..d], &beta_next[..d], &mut beta[..d]);
    let (lb, lc, la, lr) = (&layer.b[..m * d], &layer.c[..d * m], &layer.a[..m], &layer.r[..m]);
    // prod layout: a (m), C (d·m), r (m), B (m·d)
    let (pa, rest) = prod.split_at_mut(m);
    let (pc, rest) = rest.split_at_mut(d * m);
    let (pr, rest) = rest.split_at_mut(m);
    let pb = &mut rest[..m * d];

    let wa = K::mul(w, &alpha_next);
    for (p, gi) in pa.iter_mut().zip(g) {
        *p = K::mul(&wa, gi);
    }
    if !top {
        for (j, bj) in beta_next.iter().enumerate() {
            let wb = K::mul(w, bj);
            for (p, gi) in pc[j * m..(j + 1) * m].iter_mut().zip(g) {
                *p = K::mul(&wb, gi);
            }
        }
    }

    let mut alpha = alpha_next;
    for i in 0..m {
        let mut acc = K::scale(la[i], &alpha_next);
        if !top {
            for (j, bj) in beta_next.iter().enumerate() {
                K::axpy(&mut acc, lc[j * m + i], bj);
            }
        }
        let acc = A::gate::<K>(&acc, &pre[i]);
        let ws = K::mul(w, &acc);
        pr[i] = K::mul(&ws, y);
        for (((p, zj), bij), betaj) in pb[i * d..(i + 1) * d].iter_mut().zip(z).zip(&lb[i * d..(i + 1) * d]).zip(beta.iter_mut()) {
            *p = K::mul(&ws, zj);
            if i == 0 {
                *betaj = K::scale(*bij, &acc);
            } else {
                K::axpy(betaj, *bij, &acc);
            }
        }
        K::axpy(&mut alpha, lr[i], &acc);
    }

    for (lanes, out) in prod.chunks_exact(W).zip(red.chunks_exact_mut(W)) {
        out.copy_from_slice(&K::reduce8(lanes).0);
    }
    let (ra, rest) = red.split_at(m);
    let (rc, rest) = rest.split_at(d * m);
    let (rr, rest) = rest.split_at(m);
    for (dst, src) in [(&mut gl.a[..m], ra), (&mut gl.c[..d * m], rc), (&mut gl.r[..m], rr), (&mut gl.b[..m * d], &rest[..m * d])] {
        for (x, v) in dst.iter_mut().zip(src) {
            *x = if first { 0.0 } else { *x } + v;
        }
    }
    if top {
        gl.c.fill(0.0);
    }
    alpha
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::tests::random_params;
    use crate::sampling::{rng_from_seed, unit_sphere};
    use rand::Rng;

    fn bits(g: &Gradients) -> Vec<u64> {
        g.layers.iter().flat_map(|l| l.a.iter().chain(&l.b).chain(&l.c).chain(&l.r)).map(|v| v.to_bits()).collect()
    }

    #[test]
    fn dispatched_and_portable_kernels_agree_bitwise() {
        let mut rng = rng_from_seed(5);
        for _ in 0..20 {
            let (d, m, depth, n) = (rng.random_range(1..=5), rng.random_range(1..=5), rng.random_range(2..=20), rng.random_range(1..=19));
            let p = random_params(&mut rng, d, m, depth, 0.5);
            let xs: Vec<Vec<f64>> = (0..n).map(|_| unit_sphere(&mut rng, d)).collect();
            let ys: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let ds = Dataset::from_table(xs, ys).unwrap();
            let mut fast = BatchPropagator::new(&p, &ds);
            let mut gf = Gradients::zeros_like(&p);
            fast.risk_grad(&p, &ds, ActivationKind::Relu, &mut gf);
            let mut slow = BatchPropagator::new(&p, &ds);
            slow.forward_impl::<Relu, Portable>(&p);
            slow.weights = fast.weights.clone();
            let mut gs = Gradients::zeros_like(&p);
            slow.backward_impl::<Relu, Portable>(&p, &mut gs);
            assert_eq!(fast.y.iter().map(|l| l.map(f64::to_bits)).collect::<Vec<_>>(), slow.y.iter().map(|l| l.map(f64::to_bits)).collect::<Vec<_>>());
            assert_eq!(bits(&gf), bits(&gs));
        }
    }
}
