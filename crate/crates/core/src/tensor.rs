//! Dense row-major tensors of 64-bit floats.
//!
//! `Tensor` is the universal value type: network inputs, parameters,
//! gradients, saliency maps and perturbations are all tensors. Scalars are
//! rank-0 tensors. The kernels here are deterministic: identical inputs
//! produce bitwise-identical outputs.

use crate::error::{Error, Result};

/// Dense n-dimensional array of `f64` values in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor from a shape and row-major data.
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; numel],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    /// Rank-0 tensor holding a single value.
    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![value],
        }
    }

    /// 1-D tensor from a slice.
    pub fn vector(values: &[f64]) -> Self {
        Tensor {
            shape: vec![values.len()],
            data: values.to_vec(),
        }
    }

    /// Row-major matrix from nested slices; all rows must share a length.
    pub fn matrix(rows: &[&[f64]]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::shape("ragged rows in matrix literal"));
            }
            data.extend_from_slice(row);
        }
        Tensor::from_vec(vec![r, c], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Value of a rank-0 or single-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1, "item() on tensor with >1 element");
        self.data[0]
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn reshaped(&self, shape: Vec<usize>) -> Result<Tensor> {
        Tensor::from_vec(shape, self.data.clone())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Euclidean norm of the flattened tensor.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Inner product of two tensors flattened row-major.
    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        if self.numel() != other.numel() {
            return Err(Error::shape(format!(
                "dot: {} vs {} elements",
                self.numel(),
                other.numel()
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a * b)
            .sum())
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "mul", |a, b| a * b)
    }

    pub fn neg(&self) -> Tensor {
        self.map(|v| -v)
    }

    pub fn scale(&self, factor: f64) -> Tensor {
        self.map(|v| v * factor)
    }

    pub fn exp(&self) -> Tensor {
        self.map(f64::exp)
    }

    pub fn relu(&self) -> Tensor {
        self.map(|v| if v > 0.0 { v } else { 0.0 })
    }

    /// 1 where the entry is strictly positive, else 0 (0 at exactly 0).
    pub fn relu_mask(&self) -> Tensor {
        self.map(|v| if v > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn leaky_relu(&self, slope: f64) -> Tensor {
        self.map(|v| if v > 0.0 { v } else { slope * v })
    }

    pub fn leaky_mask(&self, slope: f64) -> Tensor {
        self.map(|v| if v > 0.0 { 1.0 } else { slope })
    }

    /// `self + t * other`, flattened elementwise.
    pub fn axpy(&self, t: f64, other: &Tensor) -> Result<Tensor> {
        if self.numel() != other.numel() {
            return Err(Error::shape("axpy: element count mismatch"));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + t * b)
            .collect();
        Tensor::from_vec(self.shape.clone(), data)
    }

    /// Normalized copy; error if the norm is below `floor`.
    pub fn normalized(&self, floor: f64) -> Result<Tensor> {
        let n = self.norm();
        if n < floor {
            return Err(Error::DegenerateSaliency(format!(
                "norm {n:.3e} below floor {floor:.1e}"
            )));
        }
        Ok(self.scale(1.0 / n))
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn zip_with(&self, other: &Tensor, op: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "{op}: shape {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }
}

// ---------------------------------------------------------------------------
// Linear-algebra and network kernels. These operate on concrete values and
// back the graph ops in `autodiff`; shapes are validated by the callers that
// build graph nodes, so kernels only debug-assert.
// ---------------------------------------------------------------------------

/// `w (m,n) · x (n) -> (m)`.
pub fn matvec(w: &Tensor, x: &Tensor) -> Tensor {
    let (m, n) = (w.shape[0], w.shape[1]);
    debug_assert_eq!(x.numel(), n);
    let mut out = vec![0.0; m];
    for i in 0..m {
        let row = &w.data[i * n..(i + 1) * n];
        out[i] = row.iter().zip(&x.data).map(|(a, b)| a * b).sum();
    }
    Tensor {
        shape: vec![m],
        data: out,
    }
}

/// `wᵀ (n,m) · y (m) -> (n)` for `w` of shape (m,n).
pub fn tmatvec(w: &Tensor, y: &Tensor) -> Tensor {
    let (m, n) = (w.shape[0], w.shape[1]);
    debug_assert_eq!(y.numel(), m);
    let mut out = vec![0.0; n];
    for i in 0..m {
        let yi = y.data[i];
        let row = &w.data[i * n..(i + 1) * n];
        for j in 0..n {
            out[j] += row[j] * yi;
        }
    }
    Tensor {
        shape: vec![n],
        data: out,
    }
}

/// Outer product `a (m) ⊗ b (n) -> (m,n)`.
pub fn outer(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, n) = (a.numel(), b.numel());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let ai = a.data[i];
        for j in 0..n {
            out[i * n + j] = ai * b.data[j];
        }
    }
    Tensor {
        shape: vec![m, n],
        data: out,
    }
}

/// Tiles a channel vector `(c)` over a channels-last shape `(..., c)`.
pub fn channel_broadcast(b: &Tensor, shape: &[usize]) -> Tensor {
    let c = *shape.last().expect("channel_broadcast on rank-0 shape");
    debug_assert_eq!(b.numel(), c);
    let numel: usize = shape.iter().product();
    let mut out = vec![0.0; numel];
    for (i, slot) in out.iter_mut().enumerate() {
        *slot = b.data[i % c];
    }
    Tensor {
        shape: shape.to_vec(),
        data: out,
    }
}

/// Sums a channels-last tensor over all but the trailing axis, yielding `(c)`.
pub fn channel_sum(x: &Tensor) -> Tensor {
    let c = *x.shape.last().expect("channel_sum on rank-0 tensor");
    let mut out = vec![0.0; c];
    for (i, v) in x.data.iter().enumerate() {
        out[i % c] += v;
    }
    Tensor {
        shape: vec![c],
        data: out,
    }
}

/// 2-D convolution, stride 1, zero-padded so the spatial size is preserved.
///
/// `x` is `(h, w, c_in)` channels-last, `k` is `(kh, kw, c_in, c_out)` with
/// odd `kh`, `kw`. Output is `(h, w, c_out)`.
pub fn conv2d(x: &Tensor, k: &Tensor) -> Tensor {
    let (h, w, cin) = (x.shape[0], x.shape[1], x.shape[2]);
    let (kh, kw, _, cout) = (k.shape[0], k.shape[1], k.shape[2], k.shape[3]);
    debug_assert_eq!(k.shape[2], cin);
    let (ph, pw) = (kh / 2, kw / 2);
    let mut out = vec![0.0; h * w * cout];
    for i in 0..h {
        for j in 0..w {
            for di in 0..kh {
                let ii = i as isize + di as isize - ph as isize;
                if ii < 0 || ii >= h as isize {
                    continue;
                }
                for dj in 0..kw {
                    let jj = j as isize + dj as isize - pw as isize;
                    if jj < 0 || jj >= w as isize {
                        continue;
                    }
                    let xbase = ((ii as usize * w) + jj as usize) * cin;
                    let kbase = ((di * kw) + dj) * cin * cout;
                    let obase = (i * w + j) * cout;
                    for ci in 0..cin {
                        let xv = x.data[xbase + ci];
                        let krow = &k.data[kbase + ci * cout..kbase + (ci + 1) * cout];
                        let orow = &mut out[obase..obase + cout];
                        for (o, kv) in orow.iter_mut().zip(krow) {
                            *o += xv * kv;
                        }
                    }
                }
            }
        }
    }
    Tensor {
        shape: vec![h, w, cout],
        data: out,
    }
}

/// Adjoint of [`conv2d`] with respect to the input: scatters `g (h,w,c_out)`
/// back through kernel `k`, producing `(h, w, c_in)`.
pub fn conv2d_back_input(g: &Tensor, k: &Tensor) -> Tensor {
    let (h, w, cout) = (g.shape[0], g.shape[1], g.shape[2]);
    let (kh, kw, cin, _) = (k.shape[0], k.shape[1], k.shape[2], k.shape[3]);
    debug_assert_eq!(k.shape[3], cout);
    let (ph, pw) = (kh / 2, kw / 2);
    let mut out = vec![0.0; h * w * cin];
    for i in 0..h {
        for j in 0..w {
            for di in 0..kh {
                let ii = i as isize + di as isize - ph as isize;
                if ii < 0 || ii >= h as isize {
                    continue;
                }
                for dj in 0..kw {
                    let jj = j as isize + dj as isize - pw as isize;
                    if jj < 0 || jj >= w as isize {
                        continue;
                    }
                    let xbase = ((ii as usize * w) + jj as usize) * cin;
                    let kbase = ((di * kw) + dj) * cin * cout;
                    let gbase = (i * w + j) * cout;
                    for ci in 0..cin {
                        let krow = &k.data[kbase + ci * cout..kbase + (ci + 1) * cout];
                        let grow = &g.data[gbase..gbase + cout];
                        out[xbase + ci] += krow.iter().zip(grow).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
            }
        }
    }
    Tensor {
        shape: vec![h, w, cin],
        data: out,
    }
}

/// Adjoint of [`conv2d`] with respect to the kernel: correlates input
/// `x (h,w,c_in)` with `g (h,w,c_out)` into `(kh, kw, c_in, c_out)`.
pub fn conv2d_back_kernel(x: &Tensor, g: &Tensor, kh: usize, kw: usize) -> Tensor {
    let (h, w, cin) = (x.shape[0], x.shape[1], x.shape[2]);
    let cout = g.shape[2];
    let (ph, pw) = (kh / 2, kw / 2);
    let mut out = vec![0.0; kh * kw * cin * cout];
    for i in 0..h {
        for j in 0..w {
            let gbase = (i * w + j) * cout;
            for di in 0..kh {
                let ii = i as isize + di as isize - ph as isize;
                if ii < 0 || ii >= h as isize {
                    continue;
                }
                for dj in 0..kw {
                    let jj = j as isize + dj as isize - pw as isize;
                    if jj < 0 || jj >= w as isize {
                        continue;
                    }
                    let xbase = ((ii as usize * w) + jj as usize) * cin;
                    let kbase = ((di * kw) + dj) * cin * cout;
                    for ci in 0..cin {
                        let xv = x.data[xbase + ci];
                        let orow = &mut out[kbase + ci * cout..kbase + (ci + 1) * cout];
                        let grow = &g.data[gbase..gbase + cout];
                        for (o, gv) in orow.iter_mut().zip(grow) {
                            *o += xv * gv;
                        }
                    }
                }
            }
        }
    }
    Tensor {
        shape: vec![kh, kw, cin, cout],
        data: out,
    }
}

/// Flat index of the maximum entry of each 2×2 window (ties: first in
/// row-major scan order).
fn pool_argmax(x: &Tensor, oi: usize, oj: usize, c: usize) -> usize {
    let (w, ch) = (x.shape[1], x.shape[2]);
    let mut best_idx = ((2 * oi) * w + 2 * oj) * ch + c;
    let mut best = x.data[best_idx];
    for di in 0..2 {
        for dj in 0..2 {
            let idx = ((2 * oi + di) * w + 2 * oj + dj) * ch + c;
            if x.data[idx] > best {
                best = x.data[idx];
                best_idx = idx;
            }
        }
    }
    best_idx
}

/// 2×2 max pooling with stride 2; trailing odd rows/columns are dropped.
pub fn maxpool2(x: &Tensor) -> Tensor {
    let (h, w, c) = (x.shape[0], x.shape[1], x.shape[2]);
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; oh * ow * c];
    for oi in 0..oh {
        for oj in 0..ow {
            for ci in 0..c {
                out[(oi * ow + oj) * c + ci] = x.data[pool_argmax(x, oi, oj, ci)];
            }
        }
    }
    Tensor {
        shape: vec![oh, ow, c],
        data: out,
    }
}

/// Scatters `g (h/2, w/2, c)` into the argmax positions of `x`'s 2×2 windows.
pub fn max_unpool2(g: &Tensor, x: &Tensor) -> Tensor {
    let (h, w, c) = (x.shape[0], x.shape[1], x.shape[2]);
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; h * w * c];
    for oi in 0..oh {
        for oj in 0..ow {
            for ci in 0..c {
                out[pool_argmax(x, oi, oj, ci)] += g.data[(oi * ow + oj) * c + ci];
            }
        }
    }
    Tensor {
        shape: vec![h, w, c],
        data: out,
    }
}

/// Gathers `a (h,w,c)` at the argmax positions of `x`'s 2×2 windows.
pub fn max_select2(a: &Tensor, x: &Tensor) -> Tensor {
    let (oh, ow, c) = (x.shape[0] / 2, x.shape[1] / 2, x.shape[2]);
    let mut out = vec![0.0; oh * ow * c];
    for oi in 0..oh {
        for oj in 0..ow {
            for ci in 0..c {
                out[(oi * ow + oj) * c + ci] = a.data[pool_argmax(x, oi, oj, ci)];
            }
        }
    }
    Tensor {
        shape: vec![oh, ow, c],
        data: out,
    }
}

/// Numerically stable log-sum-exp of all entries.
pub fn logsumexp(x: &Tensor) -> f64 {
    let m = x.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = x.data.iter().map(|v| (v - m).exp()).sum();
    m + s.ln()
}

/// Index of the maximum entry, ties broken by lowest index.
pub fn argmax(x: &Tensor) -> usize {
    let mut best = 0;
    for (i, v) in x.data.iter().enumerate() {
        if *v > x.data[best] {
            best = i;
        }
    }
    best
}
