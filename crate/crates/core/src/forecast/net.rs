//! Parameter layouts and hand-written forward/backward passes.
//!
//! Parameters live in one flat `Vec<f64>`. Layouts:
//!
//! - linear: `[W (L_f x In)][b (L_f)]`, `In = lookback * input_dim`
//! - mlp:    `[W1 (h x In)][b1 (h)][W2 (L_f x h)][b2 (L_f)]`, tanh hidden
//! - lstm:   per layer `[W_ih (4h x in)][W_hh (4h x h)][b_ih (4h)][b_hh (4h)]`
//!           then a head `[W_o (L_f x h)][b_o (L_f)]`. Gate rows are stacked
//!           in the order input, forget, cell, output.
//!
//! Gradients are accumulated into a caller-owned buffer with the same
//! layout, so batch accumulation is a plain add.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{ModelKind, ModelSpec};
use crate::error::Result;

#[derive(Debug, Clone)]
struct LayerOffsets {
    w_ih: usize,
    w_hh: usize,
    b_ih: usize,
    b_hh: usize,
    in_dim: usize,
}

#[derive(Debug, Clone)]
enum Offsets {
    Persistence,
    Linear { w: usize, b: usize },
    Mlp { w1: usize, b1: usize, w2: usize, b2: usize },
    Lstm { layers: Vec<LayerOffsets>, head_w: usize, head_b: usize },
}

#[derive(Debug, Clone)]
pub(crate) struct Network {
    kind: ModelKind,
    input_dim: usize,
    lookback: usize,
    horizon: usize,
    hidden: usize,
    layers: usize,
    offsets: Offsets,
    n_params: usize,
}

/// Per-sample caches and scratch buffers, reused across calls.
#[derive(Debug, Clone)]
pub(crate) struct Workspace {
    /// `[layers][lookback + 1][h]`, slot 0 holds the initial zero state.
    hs: Vec<f64>,
    cs: Vec<f64>,
    /// `[layers][lookback][4h]`, post-activation gate values.
    gates: Vec<f64>,
    /// `[layers][lookback][h]`, `tanh(c_t)`.
    hcs: Vec<f64>,
    /// MLP hidden activations.
    z: Vec<f64>,
    // backward scratch
    da: Vec<f64>,
    dh_next: Vec<f64>,
    dc_next: Vec<f64>,
    dh_above: Vec<f64>,
}

impl Network {
    pub fn build(spec: &ModelSpec) -> Result<Self> {
        spec.validate()?;
        let flat = spec.lookback * spec.input_dim;
        let h = spec.hidden;
        let lf = spec.horizon;
        let offsets = match spec.kind {
            ModelKind::Persistence => Offsets::Persistence,
            ModelKind::Linear => Offsets::Linear { w: 0, b: flat * lf },
            ModelKind::Mlp => Offsets::Mlp {
                w1: 0,
                b1: flat * h,
                w2: flat * h + h,
                b2: flat * h + h + h * lf,
            },
            ModelKind::Lstm => {
                let mut layers = Vec::with_capacity(spec.layers);
                let mut off = 0;
                let mut in_dim = spec.input_dim;
                for _ in 0..spec.layers {
                    let w_ih = off;
                    let w_hh = w_ih + 4 * h * in_dim;
                    let b_ih = w_hh + 4 * h * h;
                    let b_hh = b_ih + 4 * h;
                    off = b_hh + 4 * h;
                    layers.push(LayerOffsets { w_ih, w_hh, b_ih, b_hh, in_dim });
                    in_dim = h;
                }
                Offsets::Lstm { layers, head_w: off, head_b: off + h * lf }
            }
        };
        Ok(Self {
            kind: spec.kind,
            input_dim: spec.input_dim,
            lookback: spec.lookback,
            horizon: spec.horizon,
            hidden: spec.hidden,
            layers: spec.layers,
            offsets,
            n_params: spec.param_count(),
        })
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn workspace(&self) -> Workspace {
        let h = self.hidden;
        let t = self.lookback;
        let l = self.layers;
        let (hs, cs, gates, hcs) = match self.kind {
            ModelKind::Lstm => (
                vec![0.0; l * (t + 1) * h],
                vec![0.0; l * (t + 1) * h],
                vec![0.0; l * t * 4 * h],
                vec![0.0; l * t * h],
            ),
            _ => (Vec::new(), Vec::new(), Vec::new(), Vec::new()),
        };
        Workspace {
            hs,
            cs,
            gates,
            hcs,
            z: vec![0.0; if self.kind == ModelKind::Mlp { h } else { 0 }],
            da: vec![0.0; 4 * h],
            dh_next: vec![0.0; l * h],
            dc_next: vec![0.0; l * h],
            dh_above: vec![0.0; h],
        }
    }

    /// Uniform init in `±1/sqrt(fan_in)`, tensor by tensor in layout order.
    pub fn init_params(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut params = vec![0.0; self.n_params];
        let mut fill = |slice: &mut [f64], fan_in: usize| {
            let k = 1.0 / (fan_in.max(1) as f64).sqrt();
            for v in slice {
                *v = (rng.random::<f64>() * 2.0 - 1.0) * k;
            }
        };
        let flat = self.lookback * self.input_dim;
        let h = self.hidden;
        match &self.offsets {
            Offsets::Persistence => {}
            Offsets::Linear { b, .. } => {
                let (w_s, b_s) = params.split_at_mut(*b);
                fill(w_s, flat);
                fill(b_s, flat);
            }
            Offsets::Mlp { b1, w2, b2, .. } => {
                fill(&mut params[..*b1], flat);
                let (lo, hi) = params.split_at_mut(*w2);
                fill(&mut lo[*b1..], flat);
                fill(&mut hi[..*b2 - *w2], h);
                fill(&mut params[*b2..], h);
            }
            Offsets::Lstm { layers, head_w, head_b } => {
                let layers = layers.clone();
                let (head_w, head_b) = (*head_w, *head_b);
                for layer in &layers {
                    fill(&mut params[layer.w_ih..layer.w_hh], layer.in_dim);
                    fill(&mut params[layer.w_hh..layer.b_ih], h);
                    fill(&mut params[layer.b_ih..layer.b_hh], h);
                    fill(&mut params[layer.b_hh..layer.b_hh + 4 * h], h);
                }
                fill(&mut params[head_w..head_b], h);
                fill(&mut params[head_b..], h);
            }
        }
        params
    }

    /// Raw forward pass; fills `out` (`horizon` entries) and the caches
    /// needed by [`Self::backward`].
    pub fn forward(
        &self,
        params: &[f64],
        lookback: &[f64],
        ref_permit: f64,
        ws: &mut Workspace,
        out: &mut [f64],
    ) {
        match &self.offsets {
            Offsets::Persistence => out.fill(ref_permit),
            Offsets::Linear { w, b } => {
                out.copy_from_slice(&params[*b..*b + self.horizon]);
                matvec_add(&params[*w..*b], self.horizon, lookback.len(), lookback, out);
            }
            Offsets::Mlp { w1, b1, w2, b2 } => {
                let h = self.hidden;
                let flat = lookback.len();
                ws.z.copy_from_slice(&params[*b1..*b1 + h]);
                matvec_add(&params[*w1..*b1], h, flat, lookback, &mut ws.z);
                for v in ws.z.iter_mut() {
                    *v = v.tanh();
                }
                out.copy_from_slice(&params[*b2..*b2 + self.horizon]);
                matvec_add(&params[*w2..*b2], self.horizon, h, &ws.z, out);
            }
            Offsets::Lstm { layers, head_w, head_b } => {
                let h = self.hidden;
                let t_max = self.lookback;
                for (l, layer) in layers.iter().enumerate() {
                    // zero initial state slots
                    ws.hs[self.state_at(l, 0)..self.state_at(l, 0) + h].fill(0.0);
                    ws.cs[self.state_at(l, 0)..self.state_at(l, 0) + h].fill(0.0);
                    let _ = layer;
                }
                for t in 0..t_max {
                    for (l, layer) in layers.iter().enumerate() {
                        let gate_off = self.gate_at(l, t);
                        // a = b_ih + b_hh + W_ih x + W_hh h_prev
                        {
                            let (b_ih, b_hh) = (
                                &params[layer.b_ih..layer.b_ih + 4 * h],
                                &params[layer.b_hh..layer.b_hh + 4 * h],
                            );
                            let a = &mut ws.gates[gate_off..gate_off + 4 * h];
                            for (av, (bi, bh)) in a.iter_mut().zip(b_ih.iter().zip(b_hh)) {
                                *av = bi + bh;
                            }
                        }
                        // borrow juggling: copy x and h_prev offsets first
                        let x_range = if l == 0 {
                            None
                        } else {
                            Some(self.state_at(l - 1, t + 1))
                        };
                        let h_prev_off = self.state_at(l, t);
                        {
                            let (hs, gates) = (&ws.hs, &mut ws.gates);
                            let a = &mut gates[gate_off..gate_off + 4 * h];
                            let x: &[f64] = match x_range {
                                None => &lookback[t * self.input_dim..(t + 1) * self.input_dim],
                                Some(off) => &hs[off..off + h],
                            };
                            matvec_add(
                                &params[layer.w_ih..layer.w_ih + 4 * h * layer.in_dim],
                                4 * h,
                                layer.in_dim,
                                x,
                                a,
                            );
                            matvec_add(
                                &params[layer.w_hh..layer.w_hh + 4 * h * h],
                                4 * h,
                                h,
                                &hs[h_prev_off..h_prev_off + h],
                                a,
                            );
                        }
                        // activations and state update
                        let c_prev_off = self.state_at(l, t);
                        let c_now_off = self.state_at(l, t + 1);
                        let hc_off = self.hc_at(l, t);
                        for j in 0..h {
                            let gi = sigmoid(ws.gates[gate_off + j]);
                            let gf = sigmoid(ws.gates[gate_off + h + j]);
                            let gg = ws.gates[gate_off + 2 * h + j].tanh();
                            let go = sigmoid(ws.gates[gate_off + 3 * h + j]);
                            ws.gates[gate_off + j] = gi;
                            ws.gates[gate_off + h + j] = gf;
                            ws.gates[gate_off + 2 * h + j] = gg;
                            ws.gates[gate_off + 3 * h + j] = go;
                            let c = gf * ws.cs[c_prev_off + j] + gi * gg;
                            ws.cs[c_now_off + j] = c;
                            let hc = c.tanh();
                            ws.hcs[hc_off + j] = hc;
                            ws.hs[c_now_off + j] = go * hc;
                        }
                    }
                }
                let top = self.state_at(layers.len() - 1, t_max);
                out.copy_from_slice(&params[*head_b..*head_b + self.horizon]);
                let hs_top: Vec<f64> = ws.hs[top..top + h].to_vec();
                matvec_add(&params[*head_w..*head_b], self.horizon, h, &hs_top, out);
            }
        }
    }

    #[inline]
    fn state_at(&self, layer: usize, slot: usize) -> usize {
        (layer * (self.lookback + 1) + slot) * self.hidden
    }

    #[inline]
    fn gate_at(&self, layer: usize, t: usize) -> usize {
        (layer * self.lookback + t) * 4 * self.hidden
    }

    #[inline]
    fn hc_at(&self, layer: usize, t: usize) -> usize {
        (layer * self.lookback + t) * self.hidden
    }

    /// Accumulates `d loss / d params` into `grads` for the sample that was
    /// just run through [`Self::forward`] on this workspace. `dout` is the
    /// loss gradient w.r.t. the raw outputs.
    pub fn backward(
        &self,
        params: &[f64],
        lookback: &[f64],
        ws: &mut Workspace,
        dout: &[f64],
        grads: &mut [f64],
    ) {
        match &self.offsets {
            Offsets::Persistence => {}
            Offsets::Linear { w, b } => {
                let flat = lookback.len();
                outer_add(&mut grads[*w..*b], dout, lookback);
                add_assign(&mut grads[*b..*b + self.horizon], dout);
                let _ = flat;
            }
            Offsets::Mlp { w1, b1, w2, b2 } => {
                let h = self.hidden;
                outer_add(&mut grads[*w2..*b2], dout, &ws.z);
                add_assign(&mut grads[*b2..*b2 + self.horizon], dout);
                // dz then через tanh
                let dz = &mut ws.da[..h];
                dz.fill(0.0);
                matvec_t_add(&params[*w2..*b2], self.horizon, h, dout, dz);
                for (dzj, zj) in dz.iter_mut().zip(&ws.z) {
                    *dzj *= 1.0 - zj * zj;
                }
                outer_add(&mut grads[*w1..*b1], dz, lookback);
                add_assign(&mut grads[*b1..*b1 + h], dz);
            }
            Offsets::Lstm { layers, head_w, head_b } => {
                let h = self.hidden;
                let t_max = self.lookback;
                let n_layers = layers.len();

                ws.dh_next.fill(0.0);
                ws.dc_next.fill(0.0);

                // head
                {
                    let top = self.state_at(n_layers - 1, t_max);
                    let hs_top: Vec<f64> = ws.hs[top..top + h].to_vec();
                    outer_add(&mut grads[*head_w..*head_b], dout, &hs_top);
                    add_assign(&mut grads[*head_b..*head_b + self.horizon], dout);
                    let dh_top = &mut ws.dh_next[(n_layers - 1) * h..n_layers * h];
                    matvec_t_add(&params[*head_w..*head_b], self.horizon, h, dout, dh_top);
                }

                for t in (0..t_max).rev() {
                    ws.dh_above.fill(0.0);
                    for l in (0..n_layers).rev() {
                        let layer = &layers[l];
                        let gate_off = self.gate_at(l, t);
                        let hc_off = self.hc_at(l, t);
                        let prev_off = self.state_at(l, t);

                        // total dh: recurrence from t+1 plus dx from the
                        // layer above at this t
                        for j in 0..h {
                            if l < n_layers - 1 {
                                ws.dh_next[l * h + j] += ws.dh_above[j];
                            }
                        }

                        // gate gradients into ws.da
                        for j in 0..h {
                            let gi = ws.gates[gate_off + j];
                            let gf = ws.gates[gate_off + h + j];
                            let gg = ws.gates[gate_off + 2 * h + j];
                            let go = ws.gates[gate_off + 3 * h + j];
                            let hc = ws.hcs[hc_off + j];
                            let dh = ws.dh_next[l * h + j];
                            let dc = ws.dc_next[l * h + j] + dh * go * (1.0 - hc * hc);
                            let c_prev = ws.cs[prev_off + j];
                            ws.da[j] = dc * gg * gi * (1.0 - gi);
                            ws.da[h + j] = dc * c_prev * gf * (1.0 - gf);
                            ws.da[2 * h + j] = dc * gi * (1.0 - gg * gg);
                            ws.da[3 * h + j] = dh * hc * go * (1.0 - go);
                            // dc_prev for t-1
                            ws.dc_next[l * h + j] = dc * gf;
                        }

                        // parameter gradients
                        {
                            let x: Vec<f64> = if l == 0 {
                                lookback[t * self.input_dim..(t + 1) * self.input_dim].to_vec()
                            } else {
                                let off = self.state_at(l - 1, t + 1);
                                ws.hs[off..off + h].to_vec()
                            };
                            outer_add(
                                &mut grads[layer.w_ih..layer.w_ih + 4 * h * layer.in_dim],
                                &ws.da,
                                &x,
                            );
                            let h_prev: Vec<f64> = ws.hs[prev_off..prev_off + h].to_vec();
                            outer_add(&mut grads[layer.w_hh..layer.w_hh + 4 * h * h], &ws.da, &h_prev);
                            add_assign(&mut grads[layer.b_ih..layer.b_ih + 4 * h], &ws.da);
                            add_assign(&mut grads[layer.b_hh..layer.b_hh + 4 * h], &ws.da);
                        }

                        // dx into the layer below (discarded for layer 0)
                        if l > 0 {
                            ws.dh_above.fill(0.0);
                            matvec_t_add(
                                &params[layer.w_ih..layer.w_ih + 4 * h * layer.in_dim],
                                4 * h,
                                layer.in_dim,
                                &ws.da,
                                &mut ws.dh_above,
                            );
                        }

                        // dh_prev for t-1 (overwrites the slot we consumed)
                        {
                            let dh_prev = &mut ws.dh_next[l * h..(l + 1) * h];
                            dh_prev.fill(0.0);
                            matvec_t_add(
                                &params[layer.w_hh..layer.w_hh + 4 * h * h],
                                4 * h,
                                h,
                                &ws.da,
                                dh_prev,
                            );
                        }
                    }
                }
            }
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `out += W x`, `W` row-major `rows x cols`.
fn matvec_add(w: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(w.len(), rows * cols);
    for (r, o) in out.iter_mut().enumerate().take(rows) {
        let row = &w[r * cols..(r + 1) * cols];
        let mut acc = 0.0;
        for (wv, xv) in row.iter().zip(x) {
            acc += wv * xv;
        }
        *o += acc;
    }
}

/// `out += W^T dy`.
fn matvec_t_add(w: &[f64], rows: usize, cols: usize, dy: &[f64], out: &mut [f64]) {
    debug_assert_eq!(w.len(), rows * cols);
    for (r, dyv) in dy.iter().enumerate().take(rows) {
        let row = &w[r * cols..(r + 1) * cols];
        for (o, wv) in out.iter_mut().zip(row) {
            *o += wv * dyv;
        }
    }
}

/// `gw += dy x^T`, `gw` row-major `len(dy) x len(x)`.
fn outer_add(gw: &mut [f64], dy: &[f64], x: &[f64]) {
    let cols = x.len();
    for (r, dyv) in dy.iter().enumerate() {
        let row = &mut gw[r * cols..(r + 1) * cols];
        for (g, xv) in row.iter_mut().zip(x) {
            *g += dyv * xv;
        }
    }
}

fn add_assign(acc: &mut [f64], delta: &[f64]) {
    for (a, d) in acc.iter_mut().zip(delta) {
        *a += d;
    }
}
