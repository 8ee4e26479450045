//! Residual MLP noise estimator `ε_θ(x_t, h_r, t)` with hand-written
//! reverse-mode gradients.
//!
//! Layout, for signal width `n = 2k`, hidden width `H` and embedding width `E`:
//!
//! ```text
//! h_0     = [√n·x_t | h_r]·W_in + b_in
//! e_l     = emb(t)·W_e,l + b_e,l                     (per block)
//! h_{l+1} = h_l + silu(silu(h_l)·W_1,l + b_1,l + e_l)·W_2,l + b_2,l
//! ε̂       = silu(h_L)·W_out + b_out                   (W_out, b_out zero at init)
//! ```
//!
//! All parameters live in one flat `Vec<f64>`; matrices are row-major views
//! into it, which keeps the optimizer and the checkpoint format trivial.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::embedding::timestep_embedding;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    /// Length of `x_t` (= `2k`).
    pub signal_dim: usize,
    pub hidden: usize,
    pub blocks: usize,
    pub embed_dim: usize,
}

impl Architecture {
    pub fn new(signal_dim: usize, hidden: usize, blocks: usize) -> Self {
        Self {
            signal_dim,
            hidden,
            blocks,
            embed_dim: 64,
        }
    }

    /// Factor applied to `x_t` on entry. Blocks have unit norm, so this brings
    /// coordinates to unit scale.
    pub fn input_scale(&self) -> f64 {
        (self.signal_dim as f64).sqrt()
    }

    /// Width of the concatenated `[x_t | h_r]` input.
    pub fn input_dim(&self) -> usize {
        2 * self.signal_dim
    }

    pub fn param_count(&self) -> usize {
        let h = self.hidden;
        let block = self.embed_dim * h + h + 2 * (h * h + h);
        self.input_dim() * h + h + self.blocks * block + h * self.signal_dim + self.signal_dim
    }

    fn validate(&self) -> Result<()> {
        if self.signal_dim == 0 || self.signal_dim % 2 != 0 {
            return Err(Error::Parameter(format!(
                "signal width must be a positive even number, got {}",
                self.signal_dim
            )));
        }
        if self.hidden == 0 || self.embed_dim < 2 {
            return Err(Error::Parameter(
                "hidden width and embedding width must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Dense {
    w: usize,
    b: usize,
    rows: usize,
    cols: usize,
}

impl Dense {
    fn w<'a>(&self, p: &'a [f64]) -> ArrayView2<'a, f64> {
        ArrayView2::from_shape((self.rows, self.cols), &p[self.w..self.w + self.rows * self.cols])
            .expect("layout")
    }

    fn b<'a>(&self, p: &'a [f64]) -> ArrayView1<'a, f64> {
        ArrayView1::from(&p[self.b..self.b + self.cols])
    }

    fn w_mut<'a>(&self, p: &'a mut [f64]) -> ArrayViewMut2<'a, f64> {
        ArrayViewMut2::from_shape(
            (self.rows, self.cols),
            &mut p[self.w..self.w + self.rows * self.cols],
        )
        .expect("layout")
    }

    fn b_mut<'a>(&self, p: &'a mut [f64]) -> ArrayViewMut1<'a, f64> {
        ArrayViewMut1::from(&mut p[self.b..self.b + self.cols])
    }

    /// `x·W + b`
    fn forward(&self, p: &[f64], x: &ArrayView2<f64>) -> Array2<f64> {
        let mut y = Array2::zeros((x.nrows(), self.cols));
        general_mat_mul(1.0, x, &self.w(p), 0.0, &mut y);
        y += &self.b(p);
        y
    }

    /// Accumulate parameter gradients for upstream `dy` given the layer input.
    fn backward_params(&self, grads: &mut [f64], x: &ArrayView2<f64>, dy: &Array2<f64>) {
        general_mat_mul(1.0, &x.t(), dy, 1.0, &mut self.w_mut(grads));
        let mut gb = self.b_mut(grads);
        gb += &dy.sum_axis(Axis(0));
    }

    /// `dy·Wᵀ`
    fn backward_input(&self, p: &[f64], dy: &Array2<f64>) -> Array2<f64> {
        let mut dx = Array2::zeros((dy.nrows(), self.rows));
        general_mat_mul(1.0, dy, &self.w(p).t(), 0.0, &mut dx);
        dx
    }
}

#[derive(Debug, Clone, Copy)]
struct BlockLayout {
    emb: Dense,
    fc1: Dense,
    fc2: Dense,
}

#[derive(Debug, Clone)]
struct Layout {
    input: Dense,
    blocks: Vec<BlockLayout>,
    output: Dense,
    total: usize,
}

impl Layout {
    fn new(arch: &Architecture) -> Self {
        let mut cursor = 0;
        let mut dense = |rows: usize, cols: usize| {
            let d = Dense {
                w: cursor,
                b: cursor + rows * cols,
                rows,
                cols,
            };
            cursor += rows * cols + cols;
            d
        };
        let h = arch.hidden;
        let input = dense(arch.input_dim(), h);
        let blocks = (0..arch.blocks)
            .map(|_| BlockLayout {
                emb: dense(arch.embed_dim, h),
                fc1: dense(h, h),
                fc2: dense(h, h),
            })
            .collect();
        let output = dense(h, arch.signal_dim);
        Self {
            input,
            blocks,
            output,
            total: cursor,
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn silu(a: &Array2<f64>) -> Array2<f64> {
    a.mapv(|x| x * sigmoid(x))
}

/// `dy ⊙ silu'(a)`
fn silu_backward(a: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
    let mut out = dy.clone();
    out.zip_mut_with(a, |d, &x| {
        let s = sigmoid(x);
        *d *= s * (1.0 + x * (1.0 - s));
    });
    out
}

/// A minibatch for the denoising objective. Rows are samples.
#[derive(Debug, Clone)]
pub struct Batch {
    pub x_t: Array2<f64>,
    pub h_r: Array2<f64>,
    pub t: Vec<usize>,
    pub eps: Array2<f64>,
    /// Optional per-coordinate weights `w` giving `‖w ⊙ (ε − ε̂)‖²`; `None` is
    /// the unweighted objective.
    pub weight: Option<Array2<f64>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

struct Cache {
    input: Array2<f64>,
    emb: Array2<f64>,
    /// `h_l` entering each block, then the final `h_L`.
    h: Vec<Array2<f64>>,
    /// Pre-activation `a_l` inside each block.
    a: Vec<Array2<f64>>,
}

/// Network weights plus the architecture they were built for.
#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser {
    arch: Architecture,
    params: Vec<f64>,
}

impl Denoiser {
    /// Scaled-uniform init `U(−1/√fan_in, 1/√fan_in)` for hidden weights, zero
    /// biases, and a zero output layer so the untrained net predicts `ε̂ ≡ 0`.
    pub fn init<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let layout = Layout::new(&arch);
        let mut params = vec![0.0; layout.total];
        let mut fill = |d: &Dense, params: &mut [f64]| {
            let bound = (d.rows as f64).sqrt().recip();
            for w in &mut params[d.w..d.w + d.rows * d.cols] {
                *w = rng.random_range(-bound..bound);
            }
        };
        fill(&layout.input, &mut params);
        for b in &layout.blocks {
            fill(&b.emb, &mut params);
            fill(&b.fc1, &mut params);
            fill(&b.fc2, &mut params);
        }
        Ok(Self { arch, params })
    }

    pub fn from_params(arch: Architecture, params: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if params.len() != arch.param_count() {
            return Err(Error::Dimension(format!(
                "architecture expects {} parameters, got {}",
                arch.param_count(),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("denoiser parameters".into()));
        }
        Ok(Self { arch, params })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn check_inputs(&self, x_t: &ArrayView2<f64>, h_r: &ArrayView2<f64>, t: &[usize]) -> Result<()> {
        let n = self.arch.signal_dim;
        if x_t.ncols() != n || h_r.ncols() != n || x_t.nrows() != h_r.nrows() || x_t.nrows() != t.len()
        {
            return Err(Error::Dimension(format!(
                "denoiser of width {n} got x_t {:?}, h_r {:?}, {} timesteps",
                x_t.dim(),
                h_r.dim(),
                t.len()
            )));
        }
        Ok(())
    }

    fn forward_cached(
        &self,
        x_t: &ArrayView2<f64>,
        h_r: &ArrayView2<f64>,
        t: &[usize],
    ) -> (Array2<f64>, Cache) {
        let p = &self.params;
        let layout = Layout::new(&self.arch);
        let (b, n) = (x_t.nrows(), self.arch.signal_dim);

        let mut input = Array2::zeros((b, 2 * n));
        input.slice_mut(s![.., ..n]).assign(&(x_t * self.arch.input_scale()));
        input.slice_mut(s![.., n..]).assign(h_r);

        let e_dim = self.arch.embed_dim;
        let mut emb = Array2::zeros((b, e_dim));
        for (row, &step) in emb.rows_mut().into_iter().zip(t) {
            timestep_embedding(step, e_dim, row.into_slice().expect("contiguous row"));
        }

        let mut h = layout.input.forward(p, &input.view());
        let mut hs = Vec::with_capacity(layout.blocks.len() + 1);
        let mut pre = Vec::with_capacity(layout.blocks.len());
        for blk in &layout.blocks {
            let z = silu(&h);
            let mut a = blk.fc1.forward(p, &z.view());
            a += &blk.emb.forward(p, &emb.view());
            let u = silu(&a);
            let delta = blk.fc2.forward(p, &u.view());
            hs.push(h.clone());
            pre.push(a);
            h += &delta;
        }
        let out = layout.output.forward(p, &silu(&h).view());
        hs.push(h);
        (
            out,
            Cache {
                input,
                emb,
                h: hs,
                a: pre,
            },
        )
    }

    /// Batched `ε_θ(x_t, h_r, t)`; one row per sample.
    pub fn predict_batch(
        &self,
        x_t: ArrayView2<f64>,
        h_r: ArrayView2<f64>,
        t: &[usize],
    ) -> Result<Array2<f64>> {
        self.check_inputs(&x_t, &h_r, t)?;
        Ok(self.forward_cached(&x_t, &h_r, t).0)
    }

    pub fn predict_epsilon(&self, x_t: &[f64], h_r: &[f64], t: usize) -> Result<Vec<f64>> {
        let n = x_t.len();
        if h_r.len() != n {
            return Err(Error::Dimension(format!("x_t {n} vs h_r {}", h_r.len())));
        }
        let xv = ArrayView2::from_shape((1, n), x_t).expect("row");
        let hv = ArrayView2::from_shape((1, n), h_r).expect("row");
        Ok(self.predict_batch(xv, hv, &[t])?.into_raw_vec_and_offset().0)
    }

    /// Mean over the batch of `‖w ⊙ (ε − ε_θ(x_t, h_r, t))‖²`.
    pub fn loss(&self, batch: &Batch) -> Result<f64> {
        self.check_batch(batch)?;
        let (pred, _) = self.forward_cached(&batch.x_t.view(), &batch.h_r.view(), &batch.t);
        Ok(batch_loss(&pred, batch))
    }

    /// Mean batch loss and its gradient with respect to every parameter.
    pub fn grad_loss(&self, batch: &Batch) -> Result<(f64, Vec<f64>)> {
        self.check_batch(batch)?;
        let p = &self.params;
        let layout = Layout::new(&self.arch);
        let (pred, cache) = self.forward_cached(&batch.x_t.view(), &batch.h_r.view(), &batch.t);
        let loss = batch_loss(&pred, batch);

        // dL/dε̂ = −(2/B)·w²·(ε − ε̂)
        let scale = -2.0 / batch.len() as f64;
        let mut dy = &batch.eps - &pred;
        if let Some(w) = &batch.weight {
            dy.zip_mut_with(w, |d, &wi| *d *= wi * wi);
        }
        dy.mapv_inplace(|v| v * scale);

        let mut grads = vec![0.0; layout.total];
        let h_last = cache.h.last().expect("final hidden state");
        layout
            .output
            .backward_params(&mut grads, &silu(h_last).view(), &dy);
        let mut dh = silu_backward(h_last, &layout.output.backward_input(p, &dy));

        for (l, blk) in layout.blocks.iter().enumerate().rev() {
            let h_in = &cache.h[l];
            let a = &cache.a[l];
            let u = silu(a);
            blk.fc2.backward_params(&mut grads, &u.view(), &dh);
            let da = silu_backward(a, &blk.fc2.backward_input(p, &dh));
            blk.emb.backward_params(&mut grads, &cache.emb.view(), &da);
            let z = silu(h_in);
            blk.fc1.backward_params(&mut grads, &z.view(), &da);
            let dz = blk.fc1.backward_input(p, &da);
            dh += &silu_backward(h_in, &dz);
        }
        layout
            .input
            .backward_params(&mut grads, &cache.input.view(), &dh);
        Ok((loss, grads))
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::Parameter("empty batch".into()));
        }
        self.check_inputs(&batch.x_t.view(), &batch.h_r.view(), &batch.t)?;
        if batch.eps.dim() != batch.x_t.dim() {
            return Err(Error::Dimension("eps shape differs from x_t".into()));
        }
        if let Some(w) = &batch.weight {
            if w.dim() != batch.x_t.dim() {
                return Err(Error::Dimension("weight shape differs from x_t".into()));
            }
        }
        Ok(())
    }
}

fn batch_loss(pred: &Array2<f64>, batch: &Batch) -> f64 {
    let mut sq = 0.0;
    match &batch.weight {
        None => ndarray::Zip::from(pred).and(&batch.eps).for_each(|p, e| {
            sq += (e - p) * (e - p);
        }),
        Some(w) => ndarray::Zip::from(pred)
            .and(&batch.eps)
            .and(w)
            .for_each(|p, e, wi| {
                let d = wi * (e - p);
                sq += d * d;
            }),
    }
    sq / batch.len() as f64
}

/// Single-block objective `‖ε − ε_θ(√ᾱ_t·x_0 + √(1−ᾱ_t)·W_n ε, h_r, t)‖²`,
/// optionally weighted by `W_n` inside the norm.
#[allow(clippy::too_many_arguments)]
pub fn loss_cddm(
    net: &Denoiser,
    schedule: &crate::schedule::DiffusionSchedule,
    x0: &[f64],
    w_n_diag: &[f64],
    h_r: &[f64],
    t: usize,
    eps: &[f64],
    weighted: bool,
) -> Result<f64> {
    let x_t = schedule.forward_diffuse(x0, t, w_n_diag, eps)?;
    let n = x_t.len();
    let row = |v: &[f64]| Array2::from_shape_vec((1, n), v.to_vec()).expect("row");
    let batch = Batch {
        x_t: row(&x_t),
        h_r: row(h_r),
        t: vec![t],
        eps: row(eps),
        weight: weighted.then(|| row(w_n_diag)),
    };
    net.loss(&batch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{fill_normal, stream};
    use crate::schedule::DiffusionSchedule;

    fn random_batch(arch: &Architecture, b: usize, seed: u64) -> Batch {
        let mut rng = stream(seed, 0);
        let n = arch.signal_dim;
        let mut v = vec![0.0; b * n];
        let mut mat = |rng: &mut _| {
            fill_normal(rng, &mut v);
            Array2::from_shape_vec((b, n), v.clone()).unwrap()
        };
        let x_t = mat(&mut rng);
        let h_r = mat(&mut rng).mapv(f64::abs);
        let eps = mat(&mut rng);
        let t = (0..b).map(|_| rng.random_range(1..=1000)).collect();
        Batch {
            x_t,
            h_r,
            t,
            eps,
            weight: None,
        }
    }

    /// Give the zero-initialized output layer random weights so every
    /// gradient path is exercised.
    fn perturbed(arch: Architecture, seed: u64) -> Denoiser {
        let mut rng = stream(seed, 1);
        let mut net = Denoiser::init(arch, &mut rng).unwrap();
        for p in net.params_mut() {
            *p += 0.1 * crate::rng::normal(&mut rng);
        }
        net
    }

    #[test]
    fn param_count_matches_layout() {
        let arch = Architecture::new(8, 16, 2);
        assert_eq!(Layout::new(&arch).total, arch.param_count());
    }

    #[test]
    fn zero_output_layer_predicts_zero() {
        let arch = Architecture::new(8, 16, 2);
        let net = Denoiser::init(arch, &mut stream(0, 0)).unwrap();
        let out = net.predict_epsilon(&[0.3; 8], &[1.0; 8], 17).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn prediction_is_deterministic() {
        let net = perturbed(Architecture::new(8, 16, 2), 3);
        let a = net.predict_epsilon(&[0.1; 8], &[0.5; 8], 40).unwrap();
        let b = net.predict_epsilon(&[0.1; 8], &[0.5; 8], 40).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn batched_matches_single() {
        let arch = Architecture::new(8, 16, 2);
        let net = perturbed(arch, 4);
        let batch = random_batch(&arch, 5, 9);
        let out = net
            .predict_batch(batch.x_t.view(), batch.h_r.view(), &batch.t)
            .unwrap();
        for i in 0..5 {
            let single = net
                .predict_epsilon(
                    batch.x_t.row(i).as_slice().unwrap(),
                    batch.h_r.row(i).as_slice().unwrap(),
                    batch.t[i],
                )
                .unwrap();
            for (a, b) in out.row(i).iter().zip(&single) {
                assert!((a - b).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let net = Denoiser::init(Architecture::new(8, 16, 1), &mut stream(0, 0)).unwrap();
        assert!(matches!(
            net.predict_epsilon(&[0.0; 6], &[1.0; 6], 1),
            Err(Error::Dimension(_))
        ));
        assert!(Denoiser::from_params(Architecture::new(8, 16, 1), vec![0.0; 3]).is_err());
    }

    #[test]
    fn perfect_prediction_has_zero_loss_and_gradient() {
        let arch = Architecture::new(4, 8, 1);
        let net = Denoiser::init(arch, &mut stream(1, 0)).unwrap();
        let mut batch = random_batch(&arch, 3, 2);
        batch.eps.fill(0.0); // zero-init net predicts exactly zero
        let (loss, grads) = net.grad_loss(&batch).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn weighted_loss_reduces_to_plain_with_unit_weights() {
        let arch = Architecture::new(4, 8, 1);
        let net = perturbed(arch, 5);
        let mut batch = random_batch(&arch, 3, 6);
        let plain = net.loss(&batch).unwrap();
        batch.weight = Some(Array2::ones(batch.x_t.dim()));
        assert!((net.loss(&batch).unwrap() - plain).abs() < 1e-14);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let arch = Architecture::new(4, 16, 2);
        let mut net = perturbed(arch, 7);
        let batch = random_batch(&arch, 4, 8);
        let (_, analytic) = net.grad_loss(&batch).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for (i, g) in analytic.iter().enumerate() {
            let orig = net.params[i];
            net.params[i] = orig + h;
            let up = net.loss(&batch).unwrap();
            net.params[i] = orig - h;
            let down = net.loss(&batch).unwrap();
            net.params[i] = orig;
            worst = worst.max((g - (up - down) / (2.0 * h)).abs());
        }
        let scale = analytic.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        assert!(worst / scale < 1e-5, "relative error {}", worst / scale);
    }

    #[test]
    fn gradient_is_linear_in_loss_weight() {
        let arch = Architecture::new(4, 8, 1);
        let net = perturbed(arch, 10);
        let mut batch = random_batch(&arch, 3, 11);
        let (l1, g1) = net.grad_loss(&batch).unwrap();
        batch.weight = Some(Array2::from_elem(batch.x_t.dim(), 2.0));
        let (l4, g4) = net.grad_loss(&batch).unwrap();
        assert!((l4 - 4.0 * l1).abs() < 1e-10 * l4.abs());
        for (a, b) in g1.iter().zip(&g4) {
            assert!((4.0 * a - b).abs() < 1e-10 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn zero_net_expected_loss_is_signal_width() {
        // E‖ε‖² = 2k for ε ~ N(0, I_2k).
        let arch = Architecture::new(16, 8, 1);
        let net = Denoiser::init(arch, &mut stream(0, 0)).unwrap();
        let schedule = DiffusionSchedule::default();
        let mut rng = stream(12, 0);
        let n = 4000;
        let mut total = 0.0;
        let mut eps = vec![0.0; 16];
        for _ in 0..n {
            fill_normal(&mut rng, &mut eps);
            total += loss_cddm(&net, &schedule, &[0.1; 16], &[1.0; 16], &[1.0; 16], 50, &eps, false)
                .unwrap();
        }
        let mean = total / n as f64;
        // Var‖ε‖² = 2·16, so the standard error is √(32/4000) ≈ 0.09.
        assert!((mean - 16.0).abs() < 0.5, "mean loss {mean}");
    }
}
