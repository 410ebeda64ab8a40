//! The two forecasting networks with hand-written backpropagation. Parameters
//! live in one flat vector so the optimiser and gradient checks can treat
//! both architectures alike.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    Mae,
}

impl LossKind {
    /// Per-sample loss, averaged over the output streams.
    pub fn eval(self, pred: &[f64], target: &[f64]) -> f64 {
        let n = pred.len() as f64;
        match self {
            LossKind::Mse => pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n,
            LossKind::Mae => pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum::<f64>() / n,
        }
    }

    fn derivative(self, pred: &[f64], target: &[f64]) -> Vec<f64> {
        let n = pred.len() as f64;
        pred.iter()
            .zip(target)
            .map(|(p, t)| match self {
                LossKind::Mse => 2.0 * (p - t) / n,
                LossKind::Mae => {
                    let d = p - t;
                    if d > 0.0 {
                        1.0 / n
                    } else if d < 0.0 {
                        -1.0 / n
                    } else {
                        0.0
                    }
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "layer", rename_all = "snake_case")]
pub enum Network {
    /// One LSTM layer (gate order input, forget, cell, output) reading the
    /// whole window, then a dense layer on the last hidden state.
    Lstm {
        inputs: usize,
        units: usize,
        outputs: usize,
    },
    /// One valid 1-D convolution with ReLU, flattened into a dense layer.
    Conv1d {
        inputs: usize,
        time_steps: usize,
        kernel: usize,
        filters: usize,
        outputs: usize,
    },
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn glorot(rng: &mut impl Rng, out: &mut [f64], fan_in: usize, fan_out: usize) {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for w in out {
        *w = rng.random_range(-limit..limit);
    }
}

/// `y += M x` for a row-major `rows x x.len()` matrix.
fn matvec_add(m: &[f64], x: &[f64], y: &mut [f64]) {
    let cols = x.len();
    for (r, yr) in y.iter_mut().enumerate() {
        let row = &m[r * cols..(r + 1) * cols];
        *yr += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `x += Mᵀ y`.
fn matvec_t_add(m: &[f64], y: &[f64], x: &mut [f64]) {
    let cols = x.len();
    for (r, &yr) in y.iter().enumerate() {
        if yr == 0.0 {
            continue;
        }
        let row = &m[r * cols..(r + 1) * cols];
        for (xc, a) in x.iter_mut().zip(row) {
            *xc += a * yr;
        }
    }
}

/// `M += y xᵀ`.
fn outer_add(m: &mut [f64], y: &[f64], x: &[f64]) {
    let cols = x.len();
    for (r, &yr) in y.iter().enumerate() {
        if yr == 0.0 {
            continue;
        }
        let row = &mut m[r * cols..(r + 1) * cols];
        for (mc, xc) in row.iter_mut().zip(x) {
            *mc += yr * xc;
        }
    }
}

impl Network {
    pub fn loss_kind(&self) -> LossKind {
        match self {
            Network::Lstm { .. } => LossKind::Mae,
            Network::Conv1d { .. } => LossKind::Mse,
        }
    }

    pub fn inputs(&self) -> usize {
        match *self {
            Network::Lstm { inputs, .. } | Network::Conv1d { inputs, .. } => inputs,
        }
    }

    pub fn outputs(&self) -> usize {
        match *self {
            Network::Lstm { outputs, .. } | Network::Conv1d { outputs, .. } => outputs,
        }
    }

    pub fn param_count(&self) -> usize {
        match *self {
            Network::Lstm {
                inputs,
                units,
                outputs,
            } => 4 * units * (inputs + units + 1) + outputs * (units + 1),
            Network::Conv1d {
                inputs,
                time_steps,
                kernel,
                filters,
                outputs,
            } => {
                let flat = (time_steps + 1 - kernel) * filters;
                filters * kernel * inputs + filters + outputs * flat + outputs
            }
        }
    }

    /// Glorot-uniform weights, zero biases, forget-gate bias one.
    pub fn init(&self, rng: &mut impl Rng) -> Vec<f64> {
        let mut p = vec![0.0; self.param_count()];
        match *self {
            Network::Lstm {
                inputs: d,
                units: h,
                outputs: o,
            } => {
                let (w, rest) = p.split_at_mut(4 * h * d);
                let (u, rest) = rest.split_at_mut(4 * h * h);
                let (b, rest) = rest.split_at_mut(4 * h);
                let (wd, _) = rest.split_at_mut(o * h);
                glorot(rng, w, d, 4 * h);
                glorot(rng, u, h, 4 * h);
                b[h..2 * h].fill(1.0);
                glorot(rng, wd, h, o);
            }
            Network::Conv1d {
                inputs: d,
                time_steps,
                kernel: k,
                filters: f,
                outputs: o,
            } => {
                let flat = (time_steps + 1 - k) * f;
                let (wc, rest) = p.split_at_mut(f * k * d);
                let (_, rest) = rest.split_at_mut(f);
                let (wd, _) = rest.split_at_mut(o * flat);
                glorot(rng, wc, k * d, k * f);
                glorot(rng, wd, flat, o);
            }
        }
        p
    }

    pub fn predict(&self, p: &[f64], window: &[f64]) -> Vec<f64> {
        match *self {
            Network::Lstm {
                inputs,
                units,
                outputs,
            } => {
                let t = window.len() / inputs;
                let cache = lstm_forward(p, window, inputs, units, t);
                let mut y = p[lstm_bd(inputs, units, outputs)..].to_vec();
                matvec_add(&p[lstm_wd(inputs, units)..lstm_bd(inputs, units, outputs)], &cache.h[(t - 1) * units..], &mut y);
                y
            }
            Network::Conv1d {
                inputs,
                time_steps,
                kernel,
                filters,
                outputs,
            } => {
                let l = time_steps + 1 - kernel;
                let act = conv_forward(p, window, inputs, kernel, filters, l);
                let off = filters * kernel * inputs + filters;
                let mut y = p[off + outputs * l * filters..].to_vec();
                matvec_add(&p[off..off + outputs * l * filters], &act, &mut y);
                y
            }
        }
    }

    pub fn loss(&self, p: &[f64], window: &[f64], target: &[f64]) -> f64 {
        self.loss_kind().eval(&self.predict(p, window), target)
    }

    /// Adds d(loss)/d(params) into `grad` and returns the loss.
    pub fn loss_grad(&self, p: &[f64], window: &[f64], target: &[f64], grad: &mut [f64]) -> f64 {
        match *self {
            Network::Lstm {
                inputs,
                units,
                outputs,
            } => lstm_backward(self.loss_kind(), p, window, target, inputs, units, outputs, grad),
            Network::Conv1d {
                inputs,
                time_steps,
                kernel,
                filters,
                outputs,
            } => conv_backward(
                self.loss_kind(),
                p,
                window,
                target,
                inputs,
                time_steps,
                kernel,
                filters,
                outputs,
                grad,
            ),
        }
    }
}

fn lstm_u(d: usize, h: usize) -> usize {
    4 * h * d
}

fn lstm_b(d: usize, h: usize) -> usize {
    4 * h * (d + h)
}

fn lstm_wd(d: usize, h: usize) -> usize {
    4 * h * (d + h + 1)
}

fn lstm_bd(d: usize, h: usize, o: usize) -> usize {
    lstm_wd(d, h) + o * h
}

struct LstmCache {
    /// Activated gates per step: `[i | f | g | o]`, `4h` each.
    gates: Vec<f64>,
    c: Vec<f64>,
    h: Vec<f64>,
}

fn lstm_forward(p: &[f64], window: &[f64], d: usize, h: usize, steps: usize) -> LstmCache {
    let w = &p[..lstm_u(d, h)];
    let u = &p[lstm_u(d, h)..lstm_b(d, h)];
    let b = &p[lstm_b(d, h)..lstm_wd(d, h)];
    let mut gates = vec![0.0; steps * 4 * h];
    let mut c = vec![0.0; steps * h];
    let mut hs = vec![0.0; steps * h];
    let zero = vec![0.0; h];
    for t in 0..steps {
        let x = &window[t * d..(t + 1) * d];
        let z = &mut gates[t * 4 * h..(t + 1) * 4 * h];
        z.copy_from_slice(b);
        matvec_add(w, x, z);
        let (h_prev, c_prev) = if t == 0 {
            (&zero[..], &zero[..])
        } else {
            (&hs[(t - 1) * h..t * h], &c[(t - 1) * h..t * h])
        };
        matvec_add(u, h_prev, z);
        for k in 0..h {
            z[k] = sigmoid(z[k]);
            z[h + k] = sigmoid(z[h + k]);
            z[2 * h + k] = z[2 * h + k].tanh();
            z[3 * h + k] = sigmoid(z[3 * h + k]);
        }
        let mut c_new = vec![0.0; h];
        let mut h_new = vec![0.0; h];
        for k in 0..h {
            c_new[k] = z[h + k] * c_prev[k] + z[k] * z[2 * h + k];
            h_new[k] = z[3 * h + k] * c_new[k].tanh();
        }
        c[t * h..(t + 1) * h].copy_from_slice(&c_new);
        hs[t * h..(t + 1) * h].copy_from_slice(&h_new);
    }
    LstmCache { gates, c, h: hs }
}

#[allow(clippy::too_many_arguments)]
fn lstm_backward(
    loss: LossKind,
    p: &[f64],
    window: &[f64],
    target: &[f64],
    d: usize,
    h: usize,
    o: usize,
    grad: &mut [f64],
) -> f64 {
    let steps = window.len() / d;
    let cache = lstm_forward(p, window, d, h, steps);
    let wd = &p[lstm_wd(d, h)..lstm_bd(d, h, o)];
    let h_last = &cache.h[(steps - 1) * h..];
    let mut y = p[lstm_bd(d, h, o)..].to_vec();
    matvec_add(wd, h_last, &mut y);
    let value = loss.eval(&y, target);
    let dy = loss.derivative(&y, target);

    let (g_head, g_tail) = grad.split_at_mut(lstm_wd(d, h));
    let (g_wd, g_bd) = g_tail.split_at_mut(o * h);
    outer_add(g_wd, &dy, h_last);
    for (g, v) in g_bd.iter_mut().zip(&dy) {
        *g += v;
    }
    let mut dh = vec![0.0; h];
    matvec_t_add(wd, &dy, &mut dh);

    let u = &p[lstm_u(d, h)..lstm_b(d, h)];
    let (g_w, g_rest) = g_head.split_at_mut(lstm_u(d, h));
    let (g_u, g_b) = g_rest.split_at_mut(4 * h * h);
    let mut dc = vec![0.0; h];
    let mut dz = vec![0.0; 4 * h];
    let zero = vec![0.0; h];
    for t in (0..steps).rev() {
        let a = &cache.gates[t * 4 * h..(t + 1) * 4 * h];
        let c_t = &cache.c[t * h..(t + 1) * h];
        let (h_prev, c_prev) = if t == 0 {
            (&zero[..], &zero[..])
        } else {
            (&cache.h[(t - 1) * h..t * h], &cache.c[(t - 1) * h..t * h])
        };
        for k in 0..h {
            let (i, f, g, og) = (a[k], a[h + k], a[2 * h + k], a[3 * h + k]);
            let tc = c_t[k].tanh();
            let d_o = dh[k] * tc;
            dc[k] += dh[k] * og * (1.0 - tc * tc);
            dz[k] = dc[k] * g * i * (1.0 - i);
            dz[h + k] = dc[k] * c_prev[k] * f * (1.0 - f);
            dz[2 * h + k] = dc[k] * i * (1.0 - g * g);
            dz[3 * h + k] = d_o * og * (1.0 - og);
            dc[k] *= f;
        }
        outer_add(g_w, &dz, &window[t * d..(t + 1) * d]);
        outer_add(g_u, &dz, h_prev);
        for (gb, v) in g_b.iter_mut().zip(&dz) {
            *gb += v;
        }
        dh.fill(0.0);
        matvec_t_add(u, &dz, &mut dh);
    }
    value
}

/// ReLU activations, `l x f` row-major.
fn conv_forward(p: &[f64], window: &[f64], d: usize, k: usize, f: usize, l: usize) -> Vec<f64> {
    let wc = &p[..f * k * d];
    let bc = &p[f * k * d..f * k * d + f];
    let mut out = vec![0.0; l * f];
    for pos in 0..l {
        // The receptive field is a contiguous k*d slice of the window.
        let field = &window[pos * d..(pos + k) * d];
        for fi in 0..f {
            let kern = &wc[fi * k * d..(fi + 1) * k * d];
            let z = bc[fi] + kern.iter().zip(field).map(|(a, b)| a * b).sum::<f64>();
            out[pos * f + fi] = z.max(0.0);
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    loss: LossKind,
    p: &[f64],
    window: &[f64],
    target: &[f64],
    d: usize,
    time_steps: usize,
    k: usize,
    f: usize,
    o: usize,
    grad: &mut [f64],
) -> f64 {
    let l = time_steps + 1 - k;
    let flat = l * f;
    let act = conv_forward(p, window, d, k, f, l);
    let off = f * k * d + f;
    let wd = &p[off..off + o * flat];
    let mut y = p[off + o * flat..].to_vec();
    matvec_add(wd, &act, &mut y);
    let value = loss.eval(&y, target);
    let dy = loss.derivative(&y, target);

    let (g_conv, g_dense) = grad.split_at_mut(off);
    let (g_wd, g_bd) = g_dense.split_at_mut(o * flat);
    outer_add(g_wd, &dy, &act);
    for (g, v) in g_bd.iter_mut().zip(&dy) {
        *g += v;
    }
    let mut dact = vec![0.0; flat];
    matvec_t_add(wd, &dy, &mut dact);

    let (g_wc, g_bc) = g_conv.split_at_mut(f * k * d);
    for pos in 0..l {
        let field = &window[pos * d..(pos + k) * d];
        for fi in 0..f {
            let idx = pos * f + fi;
            if act[idx] <= 0.0 {
                continue;
            }
            let dz = dact[idx];
            g_bc[fi] += dz;
            for (g, x) in g_wc[fi * k * d..(fi + 1) * k * d].iter_mut().zip(field) {
                *g += dz * x;
            }
        }
    }
    value
}
