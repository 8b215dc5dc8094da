//! Input-convex neural network regularizer.
//!
//! The network follows the standard ICNN recipe: every layer sees the raw
//! input through a free weight `W_x`, the previous state through a
//! nonnegative weight `W_z`, and a convex nondecreasing activation. A
//! nonnegative readout over the (pooled) last state yields the scalar
//! penalty, so `psi` is convex in `x` by construction whenever the
//! feasibility constraint (`W_z >= 0`, readout `>= 0`) holds.
//!
//! All derivatives are hand-rolled and exact:
//! * [`psi_input_grad`] is reverse mode to the input,
//! * [`psi_param_grad`] is reverse mode to the parameters,
//! * [`input_grad_vjp`] computes the mixed second-order quantity
//!   `d<grad_x psi(x), v>/d theta` by differentiating the tangent program
//!   (forward mode in direction `v`) in reverse.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::ImageTensor;
use crate::rng::RngStream;

use super::Regularizer;

/// Convex nondecreasing activation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    /// `softplus(t) = ln(1 + exp(beta t)) / beta`, smooth for any beta > 0.
    Softplus { beta: f64 },
    /// Identity activation; keeps the network linear (used by tests).
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(&self, t: f64) -> f64 {
        match self {
            Activation::Softplus { beta } => {
                let u = beta * t;
                if u > 0.0 {
                    t + (-u).exp().ln_1p() / beta
                } else {
                    u.exp().ln_1p() / beta
                }
            }
            Activation::Identity => t,
        }
    }

    /// First derivative (sigmoid of the scaled input for softplus).
    #[inline]
    pub fn d1(&self, t: f64) -> f64 {
        match self {
            Activation::Softplus { beta } => {
                let u = beta * t;
                if u >= 0.0 {
                    1.0 / (1.0 + (-u).exp())
                } else {
                    let e = u.exp();
                    e / (1.0 + e)
                }
            }
            Activation::Identity => 1.0,
        }
    }

    #[inline]
    pub fn d2(&self, t: f64) -> f64 {
        match self {
            Activation::Softplus { beta } => {
                let s = self.d1(t);
                beta * s * (1.0 - s)
            }
            Activation::Identity => 0.0,
        }
    }
}

/// Layer family: dense (flat states) or 2-D convolution with same padding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    Dense { width: usize },
    Conv { channels: usize, kernel: usize },
}

/// Architecture metadata: input shape, layer chain, activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcnnArch {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerKind>,
    pub activation: Activation,
}

impl IcnnArch {
    /// Default convolutional regularizer for `side x side` images: three
    /// 5x5 conv layers of 16 channels, softplus(5), global-average readout.
    pub fn conv_default(side: usize) -> Self {
        IcnnArch {
            input_shape: vec![side, side],
            layers: vec![
                LayerKind::Conv { channels: 16, kernel: 5 },
                LayerKind::Conv { channels: 16, kernel: 5 },
                LayerKind::Conv { channels: 16, kernel: 5 },
            ],
            activation: Activation::Softplus { beta: 5.0 },
        }
    }

    /// Small dense variant used by the derivative oracle tests.
    pub fn dense_small(input_shape: &[usize]) -> Self {
        IcnnArch {
            input_shape: input_shape.to_vec(),
            layers: vec![LayerKind::Dense { width: 64 }, LayerKind::Dense { width: 64 }],
            activation: Activation::Softplus { beta: 5.0 },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::invalid("architecture needs at least one layer"));
        }
        if self.input_shape.is_empty() || self.input_shape.iter().any(|&e| e == 0) {
            return Err(Error::invalid(format!(
                "bad input shape {:?}",
                self.input_shape
            )));
        }
        let any_conv = self.layers.iter().any(|l| matches!(l, LayerKind::Conv { .. }));
        let any_dense = self.layers.iter().any(|l| matches!(l, LayerKind::Dense { .. }));
        if any_conv && any_dense {
            return Err(Error::invalid("mixing dense and conv layers is not supported"));
        }
        if any_conv {
            if self.input_shape.len() != 2 {
                return Err(Error::invalid(
                    "conv architectures need a 2-D input shape",
                ));
            }
            for l in &self.layers {
                if let LayerKind::Conv { kernel, channels } = l {
                    if *kernel % 2 == 0 || *kernel == 0 || *channels == 0 {
                        return Err(Error::invalid(format!(
                            "conv layers need odd kernel and positive channels, got {l:?}"
                        )));
                    }
                    if *kernel > self.input_shape[0] || *kernel > self.input_shape[1] {
                        return Err(Error::invalid("conv kernel larger than the image"));
                    }
                }
            }
        }
        if let Activation::Softplus { beta } = self.activation {
            if !(beta > 0.0) {
                return Err(Error::invalid(format!("softplus beta must be positive, got {beta}")));
            }
        }
        Ok(())
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    fn spatial(&self) -> (usize, usize) {
        (self.input_shape[0], self.input_shape[1])
    }

    /// Length of the state vector produced by layer `k`.
    pub fn state_len(&self, k: usize) -> usize {
        match self.layers[k] {
            LayerKind::Dense { width } => width,
            LayerKind::Conv { channels, .. } => {
                let (h, w) = self.spatial();
                channels * h * w
            }
        }
    }

    /// Number of readout weights (channels for conv, width for dense).
    pub fn readout_len(&self) -> usize {
        match *self.layers.last().unwrap() {
            LayerKind::Dense { width } => width,
            LayerKind::Conv { channels, .. } => channels,
        }
    }

    fn wx_len(&self, k: usize) -> usize {
        match self.layers[k] {
            LayerKind::Dense { width } => width * self.input_len(),
            LayerKind::Conv { channels, kernel } => channels * kernel * kernel,
        }
    }

    fn wz_len(&self, k: usize) -> usize {
        if k == 0 {
            return 0;
        }
        match (self.layers[k - 1], self.layers[k]) {
            (LayerKind::Dense { width: prev }, LayerKind::Dense { width }) => width * prev,
            (LayerKind::Conv { channels: prev, .. }, LayerKind::Conv { channels, kernel }) => {
                channels * prev * kernel * kernel
            }
            _ => unreachable!("validated homogeneous layer kinds"),
        }
    }

    fn bias_len(&self, k: usize) -> usize {
        match self.layers[k] {
            LayerKind::Dense { width } => width,
            LayerKind::Conv { channels, .. } => channels,
        }
    }

    pub fn param_count(&self) -> usize {
        (0..self.layers.len())
            .map(|k| self.wx_len(k) + self.wz_len(k) + self.bias_len(k))
            .sum::<usize>()
            + self.readout_len()
    }
}

/// One layer's tensors. `w_z` is empty for the first layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub w_x: Vec<f64>,
    pub w_z: Vec<f64>,
    pub bias: Vec<f64>,
}

/// A full set of parameter tensors (also used for gradients and Adam
/// moments, whose shapes mirror the parameters).
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub layers: Vec<LayerParams>,
    pub readout: Vec<f64>,
}

impl ParamSet {
    pub fn zeros_like(arch: &IcnnArch) -> Self {
        let layers = (0..arch.layers.len())
            .map(|k| LayerParams {
                w_x: vec![0.0; arch.wx_len(k)],
                w_z: vec![0.0; arch.wz_len(k)],
                bias: vec![0.0; arch.bias_len(k)],
            })
            .collect();
        ParamSet {
            layers,
            readout: vec![0.0; arch.readout_len()],
        }
    }

    pub fn len(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.w_x.len() + l.w_z.len() + l.bias.len())
            .sum::<usize>()
            + self.readout.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Named tensors in canonical order (the checkpoint/flatten order).
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        for (k, l) in self.layers.iter().enumerate() {
            out.push((format!("layer{k}.w_x"), l.w_x.as_slice()));
            if !l.w_z.is_empty() {
                out.push((format!("layer{k}.w_z"), l.w_z.as_slice()));
            }
            out.push((format!("layer{k}.bias"), l.bias.as_slice()));
        }
        out.push(("readout".to_string(), self.readout.as_slice()));
        out
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        for l in &self.layers {
            v.extend_from_slice(&l.w_x);
            v.extend_from_slice(&l.w_z);
            v.extend_from_slice(&l.bias);
        }
        v.extend_from_slice(&self.readout);
        v
    }

    pub fn assign_from_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.len() {
            return Err(Error::invalid(format!(
                "flat parameter vector has {} entries, expected {}",
                flat.len(),
                self.len()
            )));
        }
        let mut at = 0;
        for l in &mut self.layers {
            for dst in [&mut l.w_x, &mut l.w_z, &mut l.bias] {
                let n = dst.len();
                dst.copy_from_slice(&flat[at..at + n]);
                at += n;
            }
        }
        let n = self.readout.len();
        self.readout.copy_from_slice(&flat[at..at + n]);
        Ok(())
    }

    pub fn for_each_mut(&mut self, mut f: impl FnMut(&mut f64)) {
        for l in &mut self.layers {
            l.w_x.iter_mut().for_each(&mut f);
            l.w_z.iter_mut().for_each(&mut f);
            l.bias.iter_mut().for_each(&mut f);
        }
        self.readout.iter_mut().for_each(&mut f);
    }

    /// `self += s * other` (shape-identical sets).
    pub fn add_scaled(&mut self, s: f64, other: &ParamSet) {
        for (a, b) in self.layers.iter_mut().zip(other.layers.iter()) {
            for (x, y) in a.w_x.iter_mut().zip(b.w_x.iter()) {
                *x += s * y;
            }
            for (x, y) in a.w_z.iter_mut().zip(b.w_z.iter()) {
                *x += s * y;
            }
            for (x, y) in a.bias.iter_mut().zip(b.bias.iter()) {
                *x += s * y;
            }
        }
        for (x, y) in self.readout.iter_mut().zip(other.readout.iter()) {
            *x += s * y;
        }
    }

    /// Elementwise update walking three shape-identical sets (Adam).
    pub fn zip2_mut(&mut self, a: &ParamSet, b: &ParamSet, mut f: impl FnMut(&mut f64, f64, f64)) {
        for ((s, la), lb) in self.layers.iter_mut().zip(a.layers.iter()).zip(b.layers.iter()) {
            for ((x, &y), &z) in s.w_x.iter_mut().zip(la.w_x.iter()).zip(lb.w_x.iter()) {
                f(x, y, z);
            }
            for ((x, &y), &z) in s.w_z.iter_mut().zip(la.w_z.iter()).zip(lb.w_z.iter()) {
                f(x, y, z);
            }
            for ((x, &y), &z) in s.bias.iter_mut().zip(la.bias.iter()).zip(lb.bias.iter()) {
                f(x, y, z);
            }
        }
        for ((x, &y), &z) in self.readout.iter_mut().zip(a.readout.iter()).zip(b.readout.iter()) {
            f(x, y, z);
        }
    }

    pub fn norm_sq(&self) -> f64 {
        let mut acc = 0.0;
        for l in &self.layers {
            acc += l.w_x.iter().map(|v| v * v).sum::<f64>();
            acc += l.w_z.iter().map(|v| v * v).sum::<f64>();
            acc += l.bias.iter().map(|v| v * v).sum::<f64>();
        }
        acc + self.readout.iter().map(|v| v * v).sum::<f64>()
    }

    pub fn has_nan(&self) -> bool {
        let mut bad = false;
        for l in &self.layers {
            bad |= l.w_x.iter().any(|v| !v.is_finite())
                || l.w_z.iter().any(|v| !v.is_finite())
                || l.bias.iter().any(|v| !v.is_finite());
        }
        bad || self.readout.iter().any(|v| !v.is_finite())
    }
}

/// The full parameter state of the regularizer.
#[derive(Debug, Clone, PartialEq)]
pub struct IcnnParams {
    pub arch: IcnnArch,
    pub set: ParamSet,
}

impl IcnnParams {
    pub fn zeros(arch: IcnnArch) -> Result<Self> {
        arch.validate()?;
        let set = ParamSet::zeros_like(&arch);
        Ok(IcnnParams { arch, set })
    }

    /// Seeded initialization: `W_x` entries are N(0, 1/fan_in), `W_z`
    /// entries uniform in [1e-4, 2/fan_z] (strictly feasible so finite
    /// differencing never crosses the constraint), biases zero, readout
    /// uniform in [0.5, 1.5] scaled by 2/width.
    pub fn init_seeded(arch: IcnnArch, rng: &mut RngStream) -> Result<Self> {
        arch.validate()?;
        let mut set = ParamSet::zeros_like(&arch);
        for k in 0..arch.layers.len() {
            let fan_x = match arch.layers[k] {
                LayerKind::Dense { .. } => arch.input_len(),
                LayerKind::Conv { kernel, .. } => kernel * kernel,
            };
            let sx = 1.0 / (fan_x as f64).sqrt();
            for w in &mut set.layers[k].w_x {
                *w = sx * rng.gaussian();
            }
            if k > 0 {
                let fan_z = match (arch.layers[k - 1], arch.layers[k]) {
                    (LayerKind::Dense { width: prev }, _) => prev,
                    (LayerKind::Conv { channels: prev, .. }, LayerKind::Conv { kernel, .. }) => {
                        prev * kernel * kernel
                    }
                    _ => unreachable!(),
                };
                let hi = 2.0 / fan_z as f64;
                for w in &mut set.layers[k].w_z {
                    *w = 1e-4 + hi * rng.uniform();
                }
            }
        }
        let width = arch.readout_len() as f64;
        for r in &mut set.readout {
            *r = (0.5 + rng.uniform()) * 2.0 / width;
        }
        Ok(IcnnParams { arch, set })
    }

    /// Nonnegativity of all `W_z` tensors and the readout.
    pub fn is_feasible(&self) -> bool {
        self.set.layers.iter().all(|l| l.w_z.iter().all(|&v| v >= 0.0))
            && self.set.readout.iter().all(|&v| v >= 0.0)
    }

    pub fn validate(&self, context: &'static str) -> Result<()> {
        if self.set.has_nan() {
            return Err(Error::NonFinite(context));
        }
        if !self.is_feasible() {
            return Err(Error::InfeasibleParams(format!(
                "negative z-path or readout weight in {context}"
            )));
        }
        Ok(())
    }

    fn check_input(&self, x: &ImageTensor, context: &'static str) -> Result<()> {
        if x.shape() != self.arch.input_shape.as_slice() {
            return Err(Error::shape(context, &self.arch.input_shape, x.shape()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// linear layer primitives (accumulating convention: callers zero the output)
// ---------------------------------------------------------------------------

#[inline]
fn overlap(len: usize, d: isize) -> (usize, usize) {
    let lo = if d < 0 { (-d) as usize } else { 0 };
    let hi = if d > 0 { len.saturating_sub(d as usize) } else { len };
    (lo.min(len), hi.max(lo.min(len)))
}

/// `out[oc] += sum_ic kernel[oc][ic] * input[ic]` as a same-padded conv.
fn conv2d_acc(
    out: &mut [f64],
    input: &[f64],
    kernel: &[f64],
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    k: usize,
) {
    let p = (k / 2) as isize;
    for oc in 0..cout {
        let out_plane = &mut out[oc * h * w..(oc + 1) * h * w];
        for ic in 0..cin {
            let in_plane = &input[ic * h * w..(ic + 1) * h * w];
            let kbase = (oc * cin + ic) * k * k;
            for ky in 0..k {
                let dy = ky as isize - p;
                let (ylo, yhi) = overlap(h, dy);
                for kx in 0..k {
                    let weight = kernel[kbase + ky * k + kx];
                    if weight == 0.0 {
                        continue;
                    }
                    let dx = kx as isize - p;
                    let (xlo, xhi) = overlap(w, dx);
                    if xlo >= xhi {
                        continue;
                    }
                    let cstart = (xlo as isize + dx) as usize;
                    for y in ylo..yhi {
                        let sr = ((y as isize + dy) as usize) * w;
                        let src = &in_plane[sr + cstart..sr + cstart + (xhi - xlo)];
                        let dst = &mut out_plane[y * w + xlo..y * w + xhi];
                        for (o, s) in dst.iter_mut().zip(src.iter()) {
                            *o += weight * s;
                        }
                    }
                }
            }
        }
    }
}

/// Transpose of [`conv2d_acc`]: `gin[ic] += sum_oc kernel[oc][ic]^T up[oc]`.
fn conv2d_adjoint_acc(
    gin: &mut [f64],
    upstream: &[f64],
    kernel: &[f64],
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    k: usize,
) {
    let p = (k / 2) as isize;
    for oc in 0..cout {
        let up_plane = &upstream[oc * h * w..(oc + 1) * h * w];
        for ic in 0..cin {
            let gin_plane = &mut gin[ic * h * w..(ic + 1) * h * w];
            let kbase = (oc * cin + ic) * k * k;
            for ky in 0..k {
                let dy = ky as isize - p;
                let (ylo, yhi) = overlap(h, dy);
                for kx in 0..k {
                    let weight = kernel[kbase + ky * k + kx];
                    if weight == 0.0 {
                        continue;
                    }
                    let dx = kx as isize - p;
                    let (xlo, xhi) = overlap(w, dx);
                    if xlo >= xhi {
                        continue;
                    }
                    let cstart = (xlo as isize + dx) as usize;
                    for y in ylo..yhi {
                        let dr = ((y as isize + dy) as usize) * w;
                        let dst = &mut gin_plane[dr + cstart..dr + cstart + (xhi - xlo)];
                        let src = &up_plane[y * w + xlo..y * w + xhi];
                        for (o, s) in dst.iter_mut().zip(src.iter()) {
                            *o += weight * s;
                        }
                    }
                }
            }
        }
    }
}

/// Kernel gradient: `gk[oc][ic][ky][kx] += <upstream[oc], shift(input[ic])>`.
fn conv2d_wgrad_acc(
    gk: &mut [f64],
    input: &[f64],
    upstream: &[f64],
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    k: usize,
) {
    let p = (k / 2) as isize;
    for oc in 0..cout {
        let up_plane = &upstream[oc * h * w..(oc + 1) * h * w];
        for ic in 0..cin {
            let in_plane = &input[ic * h * w..(ic + 1) * h * w];
            let kbase = (oc * cin + ic) * k * k;
            for ky in 0..k {
                let dy = ky as isize - p;
                let (ylo, yhi) = overlap(h, dy);
                for kx in 0..k {
                    let dx = kx as isize - p;
                    let (xlo, xhi) = overlap(w, dx);
                    if xlo >= xhi {
                        continue;
                    }
                    let cstart = (xlo as isize + dx) as usize;
                    let mut acc = 0.0;
                    for y in ylo..yhi {
                        let sr = ((y as isize + dy) as usize) * w;
                        let src = &in_plane[sr + cstart..sr + cstart + (xhi - xlo)];
                        let up = &up_plane[y * w + xlo..y * w + xhi];
                        acc += up.iter().zip(src.iter()).map(|(a, b)| a * b).sum::<f64>();
                    }
                    gk[kbase + ky * k + kx] += acc;
                }
            }
        }
    }
}

fn dense_acc(out: &mut [f64], input: &[f64], weights: &[f64]) {
    let n = input.len();
    for (i, o) in out.iter_mut().enumerate() {
        let row = &weights[i * n..(i + 1) * n];
        *o += row.iter().zip(input.iter()).map(|(a, b)| a * b).sum::<f64>();
    }
}

fn dense_adjoint_acc(gin: &mut [f64], upstream: &[f64], weights: &[f64]) {
    let n = gin.len();
    for (i, &u) in upstream.iter().enumerate() {
        if u == 0.0 {
            continue;
        }
        let row = &weights[i * n..(i + 1) * n];
        for (g, a) in gin.iter_mut().zip(row.iter()) {
            *g += u * a;
        }
    }
}

fn dense_wgrad_acc(gw: &mut [f64], input: &[f64], upstream: &[f64]) {
    let n = input.len();
    for (i, &u) in upstream.iter().enumerate() {
        if u == 0.0 {
            continue;
        }
        let row = &mut gw[i * n..(i + 1) * n];
        for (g, x) in row.iter_mut().zip(input.iter()) {
            *g += u * x;
        }
    }
}

struct LayerCtx<'a> {
    arch: &'a IcnnArch,
    k: usize,
}

impl LayerCtx<'_> {
    fn apply_wx(&self, wx: &[f64], x: &[f64], out: &mut [f64]) {
        match self.arch.layers[self.k] {
            LayerKind::Dense { .. } => dense_acc(out, x, wx),
            LayerKind::Conv { channels, kernel } => {
                let (h, w) = self.arch.spatial();
                conv2d_acc(out, x, wx, 1, channels, h, w, kernel);
            }
        }
    }

    fn apply_wx_adjoint(&self, wx: &[f64], up: &[f64], gin: &mut [f64]) {
        match self.arch.layers[self.k] {
            LayerKind::Dense { .. } => dense_adjoint_acc(gin, up, wx),
            LayerKind::Conv { channels, kernel } => {
                let (h, w) = self.arch.spatial();
                conv2d_adjoint_acc(gin, up, wx, 1, channels, h, w, kernel);
            }
        }
    }

    fn wgrad_wx(&self, x: &[f64], up: &[f64], gwx: &mut [f64]) {
        match self.arch.layers[self.k] {
            LayerKind::Dense { .. } => dense_wgrad_acc(gwx, x, up),
            LayerKind::Conv { channels, kernel } => {
                let (h, w) = self.arch.spatial();
                conv2d_wgrad_acc(gwx, x, up, 1, channels, h, w, kernel);
            }
        }
    }

    fn apply_wz(&self, wz: &[f64], zprev: &[f64], out: &mut [f64]) {
        match (self.arch.layers[self.k - 1], self.arch.layers[self.k]) {
            (LayerKind::Dense { .. }, LayerKind::Dense { .. }) => dense_acc(out, zprev, wz),
            (LayerKind::Conv { channels: prev, .. }, LayerKind::Conv { channels, kernel }) => {
                let (h, w) = self.arch.spatial();
                conv2d_acc(out, zprev, wz, prev, channels, h, w, kernel);
            }
            _ => unreachable!(),
        }
    }

    fn apply_wz_adjoint(&self, wz: &[f64], up: &[f64], gin: &mut [f64]) {
        match (self.arch.layers[self.k - 1], self.arch.layers[self.k]) {
            (LayerKind::Dense { .. }, LayerKind::Dense { .. }) => dense_adjoint_acc(gin, up, wz),
            (LayerKind::Conv { channels: prev, .. }, LayerKind::Conv { channels, kernel }) => {
                let (h, w) = self.arch.spatial();
                conv2d_adjoint_acc(gin, up, wz, prev, channels, h, w, kernel);
            }
            _ => unreachable!(),
        }
    }

    fn wgrad_wz(&self, zprev: &[f64], up: &[f64], gwz: &mut [f64]) {
        match (self.arch.layers[self.k - 1], self.arch.layers[self.k]) {
            (LayerKind::Dense { .. }, LayerKind::Dense { .. }) => dense_wgrad_acc(gwz, zprev, up),
            (LayerKind::Conv { channels: prev, .. }, LayerKind::Conv { channels, kernel }) => {
                let (h, w) = self.arch.spatial();
                conv2d_wgrad_acc(gwz, zprev, up, prev, channels, h, w, kernel);
            }
            _ => unreachable!(),
        }
    }

    fn add_bias(&self, bias: &[f64], out: &mut [f64]) {
        match self.arch.layers[self.k] {
            LayerKind::Dense { .. } => {
                for (o, b) in out.iter_mut().zip(bias.iter()) {
                    *o += b;
                }
            }
            LayerKind::Conv { channels, .. } => {
                let plane = out.len() / channels;
                for (c, b) in bias.iter().enumerate() {
                    for o in &mut out[c * plane..(c + 1) * plane] {
                        *o += b;
                    }
                }
            }
        }
    }

    /// Bias gradient from an upstream state-shaped gradient.
    fn bias_grad_acc(&self, up: &[f64], gb: &mut [f64]) {
        match self.arch.layers[self.k] {
            LayerKind::Dense { .. } => {
                for (g, u) in gb.iter_mut().zip(up.iter()) {
                    *g += u;
                }
            }
            LayerKind::Conv { channels, .. } => {
                let plane = up.len() / channels;
                for (c, g) in gb.iter_mut().enumerate() {
                    *g += up[c * plane..(c + 1) * plane].iter().sum::<f64>();
                }
            }
        }
    }
}

/// Pool the last state into readout space (channel means for conv).
fn pool(arch: &IcnnArch, z_last: &[f64]) -> Vec<f64> {
    match *arch.layers.last().unwrap() {
        LayerKind::Dense { .. } => z_last.to_vec(),
        LayerKind::Conv { channels, .. } => {
            let plane = z_last.len() / channels;
            (0..channels)
                .map(|c| z_last[c * plane..(c + 1) * plane].iter().sum::<f64>() / plane as f64)
                .collect()
        }
    }
}

/// Adjoint of [`pool`]: spread readout weights back over the state.
fn pool_adjoint(arch: &IcnnArch, r: &[f64]) -> Vec<f64> {
    match *arch.layers.last().unwrap() {
        LayerKind::Dense { .. } => r.to_vec(),
        LayerKind::Conv { channels, .. } => {
            let (h, w) = arch.spatial();
            let plane = h * w;
            let mut out = vec![0.0; channels * plane];
            for (c, &rc) in r.iter().enumerate() {
                let v = rc / plane as f64;
                for o in &mut out[c * plane..(c + 1) * plane] {
                    *o = v;
                }
            }
            out
        }
    }
}

/// Forward caches: pre-activations and activations per layer.
struct ForwardPass {
    pre: Vec<Vec<f64>>,
    z: Vec<Vec<f64>>,
    value: f64,
}

fn forward_pass(params: &IcnnParams, x: &[f64]) -> ForwardPass {
    let arch = &params.arch;
    let act = arch.activation;
    let n_layers = arch.layers.len();
    let mut pre: Vec<Vec<f64>> = Vec::with_capacity(n_layers);
    let mut z: Vec<Vec<f64>> = Vec::with_capacity(n_layers);
    for k in 0..n_layers {
        let ctx = LayerCtx { arch, k };
        let mut a = vec![0.0; arch.state_len(k)];
        if k > 0 {
            ctx.apply_wz(&params.set.layers[k].w_z, &z[k - 1], &mut a);
        }
        ctx.apply_wx(&params.set.layers[k].w_x, x, &mut a);
        ctx.add_bias(&params.set.layers[k].bias, &mut a);
        let zk: Vec<f64> = a.iter().map(|&t| act.apply(t)).collect();
        pre.push(a);
        z.push(zk);
    }
    let pooled = pool(arch, z.last().unwrap());
    let value = pooled
        .iter()
        .zip(params.set.readout.iter())
        .map(|(p, r)| p * r)
        .sum();
    ForwardPass { pre, z, value }
}

/// Reverse pass. Fills `param_grad` (if given) and `input_grad` (if given).
fn backward_pass(
    params: &IcnnParams,
    x: &[f64],
    fwd: &ForwardPass,
    mut param_grad: Option<&mut ParamSet>,
    mut input_grad: Option<&mut [f64]>,
) {
    let arch = &params.arch;
    let act = arch.activation;
    let n_layers = arch.layers.len();

    if let Some(pg) = param_grad.as_deref_mut() {
        let pooled = pool(arch, fwd.z.last().unwrap());
        for (g, p) in pg.readout.iter_mut().zip(pooled.iter()) {
            *g += p;
        }
    }

    let mut z_bar = pool_adjoint(arch, &params.set.readout);
    for k in (0..n_layers).rev() {
        let ctx = LayerCtx { arch, k };
        let a_bar: Vec<f64> = fwd.pre[k]
            .iter()
            .zip(z_bar.iter())
            .map(|(&t, &zb)| act.d1(t) * zb)
            .collect();
        if let Some(pg) = param_grad.as_deref_mut() {
            ctx.bias_grad_acc(&a_bar, &mut pg.layers[k].bias);
            ctx.wgrad_wx(x, &a_bar, &mut pg.layers[k].w_x);
            if k > 0 {
                ctx.wgrad_wz(&fwd.z[k - 1], &a_bar, &mut pg.layers[k].w_z);
            }
        }
        if let Some(ig) = input_grad.as_deref_mut() {
            ctx.apply_wx_adjoint(&params.set.layers[k].w_x, &a_bar, ig);
        }
        if k > 0 {
            let mut prev = vec![0.0; arch.state_len(k - 1)];
            ctx.apply_wz_adjoint(&params.set.layers[k].w_z, &a_bar, &mut prev);
            z_bar = prev;
        }
    }
}

/// Tangent (directional) pass in input direction `v`, on top of a forward
/// cache. Returns per-layer tangent pre-activations and states; the scalar
/// `<grad psi(x), v>` is `readout . pool(tz_last)`.
struct TangentPass {
    ta: Vec<Vec<f64>>,
    tz: Vec<Vec<f64>>,
}

fn tangent_pass(params: &IcnnParams, fwd: &ForwardPass, v: &[f64]) -> TangentPass {
    let arch = &params.arch;
    let act = arch.activation;
    let n_layers = arch.layers.len();
    let mut ta = Vec::with_capacity(n_layers);
    let mut tz: Vec<Vec<f64>> = Vec::with_capacity(n_layers);
    for k in 0..n_layers {
        let ctx = LayerCtx { arch, k };
        let mut t = vec![0.0; arch.state_len(k)];
        if k > 0 {
            ctx.apply_wz(&params.set.layers[k].w_z, &tz[k - 1], &mut t);
        }
        ctx.apply_wx(&params.set.layers[k].w_x, v, &mut t);
        let tzk: Vec<f64> = fwd.pre[k]
            .iter()
            .zip(t.iter())
            .map(|(&p, &tv)| act.d1(p) * tv)
            .collect();
        ta.push(t);
        tz.push(tzk);
    }
    TangentPass { ta, tz }
}

/// Reverse over the primal+tangent program: the parameter gradient of
/// `g(theta) = <grad_x psi_theta(x), v>`.
fn vjp_backward(
    params: &IcnnParams,
    x: &[f64],
    v: &[f64],
    fwd: &ForwardPass,
    tan: &TangentPass,
    grad: &mut ParamSet,
) {
    let arch = &params.arch;
    let act = arch.activation;
    let n_layers = arch.layers.len();

    // dg/dreadout = pool(tz_last)
    let pooled_t = pool(arch, tan.tz.last().unwrap());
    for (g, p) in grad.readout.iter_mut().zip(pooled_t.iter()) {
        *g += p;
    }

    let mut tz_bar = pool_adjoint(arch, &params.set.readout);
    let mut z_bar = vec![0.0; arch.state_len(n_layers - 1)];
    for k in (0..n_layers).rev() {
        let ctx = LayerCtx { arch, k };
        // tz_k = d1(pre_k) * ta_k
        let ta_bar: Vec<f64> = fwd.pre[k]
            .iter()
            .zip(tz_bar.iter())
            .map(|(&p, &tb)| act.d1(p) * tb)
            .collect();
        // pre_k picks up the curvature path d2(pre)*ta*tz_bar plus the
        // primal chain d1(pre)*z_bar
        let a_bar: Vec<f64> = fwd.pre[k]
            .iter()
            .zip(tan.ta[k].iter())
            .zip(tz_bar.iter().zip(z_bar.iter()))
            .map(|((&p, &tav), (&tb, &zb))| act.d2(p) * tav * tb + act.d1(p) * zb)
            .collect();

        ctx.bias_grad_acc(&a_bar, &mut grad.layers[k].bias);
        ctx.wgrad_wx(v, &ta_bar, &mut grad.layers[k].w_x);
        ctx.wgrad_wx(x, &a_bar, &mut grad.layers[k].w_x);
        if k > 0 {
            ctx.wgrad_wz(&tan.tz[k - 1], &ta_bar, &mut grad.layers[k].w_z);
            ctx.wgrad_wz(&fwd.z[k - 1], &a_bar, &mut grad.layers[k].w_z);

            let mut tz_prev = vec![0.0; arch.state_len(k - 1)];
            ctx.apply_wz_adjoint(&params.set.layers[k].w_z, &ta_bar, &mut tz_prev);
            let mut z_prev = vec![0.0; arch.state_len(k - 1)];
            ctx.apply_wz_adjoint(&params.set.layers[k].w_z, &a_bar, &mut z_prev);
            tz_bar = tz_prev;
            z_bar = z_prev;
        }
    }
}

// ---------------------------------------------------------------------------
// public operations
// ---------------------------------------------------------------------------

/// Scalar `psi_theta(x)`, convex in `x` for feasible parameters.
pub fn psi_forward(params: &IcnnParams, x: &ImageTensor) -> Result<f64> {
    params.validate("psi_forward")?;
    params.check_input(x, "psi_forward")?;
    Ok(forward_pass(params, x.data()).value)
}

/// Exact gradient of [`psi_forward`] with respect to the input.
pub fn psi_input_grad(params: &IcnnParams, x: &ImageTensor) -> Result<ImageTensor> {
    params.validate("psi_input_grad")?;
    params.check_input(x, "psi_input_grad")?;
    let fwd = forward_pass(params, x.data());
    let mut g = vec![0.0; x.len()];
    backward_pass(params, x.data(), &fwd, None, Some(&mut g));
    Ok(ImageTensor::from_parts(x.shape().to_vec(), g))
}

/// Exact gradient of [`psi_forward`] with respect to every parameter tensor.
pub fn psi_param_grad(params: &IcnnParams, x: &ImageTensor) -> Result<ParamSet> {
    params.validate("psi_param_grad")?;
    params.check_input(x, "psi_param_grad")?;
    let fwd = forward_pass(params, x.data());
    let mut grad = ParamSet::zeros_like(&params.arch);
    backward_pass(params, x.data(), &fwd, Some(&mut grad), None);
    Ok(grad)
}

/// Fused evaluation: `psi(x)`, its parameter gradient, and its input
/// gradient from one forward and one reverse pass.
pub fn psi_value_and_grads(
    params: &IcnnParams,
    x: &ImageTensor,
) -> Result<(f64, ParamSet, ImageTensor)> {
    params.validate("psi_value_and_grads")?;
    params.check_input(x, "psi_value_and_grads")?;
    let fwd = forward_pass(params, x.data());
    let mut grad = ParamSet::zeros_like(&params.arch);
    let mut g = vec![0.0; x.len()];
    backward_pass(params, x.data(), &fwd, Some(&mut grad), Some(&mut g));
    Ok((
        fwd.value,
        grad,
        ImageTensor::from_parts(x.shape().to_vec(), g),
    ))
}

/// Parameter gradient of the directional input-derivative:
/// `d <grad_x psi_theta(x), v> / d theta`.
pub fn input_grad_vjp(params: &IcnnParams, x: &ImageTensor, v: &ImageTensor) -> Result<ParamSet> {
    params.validate("input_grad_vjp")?;
    params.check_input(x, "input_grad_vjp")?;
    params.check_input(v, "input_grad_vjp")?;
    let fwd = forward_pass(params, x.data());
    let tan = tangent_pass(params, &fwd, v.data());
    let mut grad = ParamSet::zeros_like(&params.arch);
    vjp_backward(params, x.data(), v.data(), &fwd, &tan, &mut grad);
    Ok(grad)
}

/// Clamp every `W_z` and readout entry at zero; other tensors untouched.
pub fn project_feasible(params: &IcnnParams) -> IcnnParams {
    let mut out = params.clone();
    project_feasible_in_place(&mut out);
    out
}

pub fn project_feasible_in_place(params: &mut IcnnParams) {
    for l in &mut params.set.layers {
        for w in &mut l.w_z {
            if *w < 0.0 {
                *w = 0.0;
            }
        }
    }
    for r in &mut params.set.readout {
        if *r < 0.0 {
            *r = 0.0;
        }
    }
}

/// A validated ICNN behind the [`Regularizer`] interface.
#[derive(Debug, Clone)]
pub struct IcnnRegularizer {
    params: IcnnParams,
}

impl IcnnRegularizer {
    pub fn new(params: IcnnParams) -> Result<Self> {
        params.arch.validate()?;
        params.validate("IcnnRegularizer::new")?;
        Ok(IcnnRegularizer { params })
    }

    pub fn params(&self) -> &IcnnParams {
        &self.params
    }

    /// Fused value + input gradient (one forward, one reverse).
    pub fn value_and_grad(&self, x: &ImageTensor) -> (f64, ImageTensor) {
        assert_eq!(
            x.shape(),
            self.params.arch.input_shape.as_slice(),
            "input shape mismatch"
        );
        let fwd = forward_pass(&self.params, x.data());
        let mut g = vec![0.0; x.len()];
        backward_pass(&self.params, x.data(), &fwd, None, Some(&mut g));
        (fwd.value, ImageTensor::from_parts(x.shape().to_vec(), g))
    }
}

impl Regularizer for IcnnRegularizer {
    fn value(&self, x: &ImageTensor) -> f64 {
        assert_eq!(
            x.shape(),
            self.params.arch.input_shape.as_slice(),
            "input shape mismatch"
        );
        forward_pass(&self.params, x.data()).value
    }

    fn input_grad(&self, x: &ImageTensor) -> ImageTensor {
        self.value_and_grad(x).1
    }

    fn kind(&self) -> &'static str {
        "icnn"
    }
}
