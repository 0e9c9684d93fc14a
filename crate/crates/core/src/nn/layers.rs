use rand::Rng as _;

use super::{xavier_bound, Binding, ParamId, ParamStore};
use crate::tensor::{Graph, Tensor, TensorError, Var};
use crate::Rng;

fn uniform(rng: &mut Rng, shape: &[usize], bound: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::new(shape, data).expect("shape matches data")
}

/// Fully connected layer `y = x·Wᵀ + b` with `W: [out × in]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    /// Registers zero-valued parameters `{name}.weight` and `{name}.bias`.
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize) -> Self {
        let weight = store.add(format!("{name}.weight"), Tensor::zeros(&[out_dim, in_dim]));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_dim]));
        Self { weight, bias, in_dim, out_dim }
    }

    /// Xavier-uniform weights, zero bias.
    pub fn init(&self, store: &mut ParamStore, rng: &mut Rng) {
        let bound = xavier_bound(self.in_dim, self.out_dim);
        *store.get_mut(self.weight) = uniform(rng, &[self.out_dim, self.in_dim], bound);
        *store.get_mut(self.bias) = Tensor::zeros(&[self.out_dim]);
    }

    pub fn forward(&self, g: &mut Graph, p: &Binding, x: Var) -> Result<Var, TensorError> {
        let batch = g.shape(x)[0];
        let y = g.matmul_bt(x, p.var(self.weight))?;
        let b = g.reshape(p.var(self.bias), &[1, self.out_dim])?;
        let b = g.expand(b, 0, batch)?;
        g.add(y, b)
    }

    /// `2·in·out` multiply-adds plus `out` bias additions.
    pub fn flops(&self) -> u64 {
        (2 * self.in_dim * self.out_dim + self.out_dim) as u64
    }
}

/// 1-D convolution over `[batch × in_ch × len]` (cross-correlation, no
/// kernel flip).
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub kernels: ParamId,
    pub bias: ParamId,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv1d {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        let kernels = store.add(format!("{name}.kernels"), Tensor::zeros(&[out_ch, in_ch, kernel]));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_ch]));
        Self { kernels, bias, in_ch, out_ch, kernel, stride, padding }
    }

    /// Xavier-uniform with `fan_in = in_ch·k`, `fan_out = out_ch·k`; zero bias.
    pub fn init(&self, store: &mut ParamStore, rng: &mut Rng) {
        let bound = xavier_bound(self.in_ch * self.kernel, self.out_ch * self.kernel);
        *store.get_mut(self.kernels) = uniform(rng, &[self.out_ch, self.in_ch, self.kernel], bound);
        *store.get_mut(self.bias) = Tensor::zeros(&[self.out_ch]);
    }

    /// `floor((len + 2·padding − k) / stride) + 1`, or `None` when the padded
    /// input is shorter than the kernel.
    pub fn output_len(&self, len: usize) -> Option<usize> {
        (len + 2 * self.padding >= self.kernel).then(|| (len + 2 * self.padding - self.kernel) / self.stride + 1)
    }

    pub fn forward(&self, g: &mut Graph, p: &Binding, x: Var) -> Result<Var, TensorError> {
        g.conv1d(x, p.var(self.kernels), p.var(self.bias), self.stride, self.padding)
    }

    /// `2·out_ch·in_ch·k·len′ + out_ch·len′` for an input of length `len`.
    pub fn flops(&self, len: usize) -> u64 {
        let lout = self.output_len(len).unwrap_or(0);
        (2 * self.out_ch * self.in_ch * self.kernel * lout + self.out_ch * lout) as u64
    }
}

/// Hidden and cell state of one LSTM layer, each `[batch × H]`.
#[derive(Debug, Clone, Copy)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

/// LSTM cell. Gate rows are stacked in the order (i, f, g, o): rows
/// `[0, H)` input gate, `[H, 2H)` forget gate, `[2H, 3H)` candidate,
/// `[3H, 4H)` output gate.
#[derive(Debug, Clone)]
pub struct LstmCell {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize) -> Self {
        let w_ih = store.add(format!("{name}.w_ih"), Tensor::zeros(&[4 * hidden, input]));
        let w_hh = store.add(format!("{name}.w_hh"), Tensor::zeros(&[4 * hidden, hidden]));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[4 * hidden]));
        Self { w_ih, w_hh, bias, input, hidden }
    }

    /// Xavier-uniform input weights, uniform ±1/√H recurrent weights, zero
    /// bias except the forget gate at 1.
    pub fn init(&self, store: &mut ParamStore, rng: &mut Rng) {
        let h = self.hidden;
        *store.get_mut(self.w_ih) = uniform(rng, &[4 * h, self.input], xavier_bound(self.input, 4 * h));
        *store.get_mut(self.w_hh) = uniform(rng, &[4 * h, h], 1.0 / (h as f64).sqrt());
        let mut bias = vec![0.0; 4 * h];
        bias[h..2 * h].fill(1.0);
        *store.get_mut(self.bias) = Tensor::new(&[4 * h], bias).expect("bias length");
    }

    pub fn zero_state(&self, g: &mut Graph, batch: usize) -> LstmState {
        LstmState {
            h: g.constant(Tensor::zeros(&[batch, self.hidden])),
            c: g.constant(Tensor::zeros(&[batch, self.hidden])),
        }
    }

    pub fn step(&self, g: &mut Graph, p: &Binding, x: Var, state: LstmState) -> Result<LstmState, TensorError> {
        let h = self.hidden;
        let batch = g.shape(x)[0];
        for s in [state.h, state.c] {
            if g.shape(s) != [batch, h] {
                return Err(TensorError::ShapeMismatch {
                    op: "lstm_step",
                    lhs: g.shape(x).to_vec(),
                    rhs: g.shape(s).to_vec(),
                });
            }
        }
        let xi = g.matmul_bt(x, p.var(self.w_ih))?;
        let hh = g.matmul_bt(state.h, p.var(self.w_hh))?;
        let pre = g.add(xi, hh)?;
        let b = g.reshape(p.var(self.bias), &[1, 4 * h])?;
        let b = g.expand(b, 0, batch)?;
        let pre = g.add(pre, b)?;
        let i = g.slice(pre, 1, 0..h)?;
        let f = g.slice(pre, 1, h..2 * h)?;
        let c_hat = g.slice(pre, 1, 2 * h..3 * h)?;
        let o = g.slice(pre, 1, 3 * h..4 * h)?;
        let i = g.sigmoid(i)?;
        let f = g.sigmoid(f)?;
        let c_hat = g.tanh(c_hat)?;
        let o = g.sigmoid(o)?;
        let keep = g.mul(f, state.c)?;
        let write = g.mul(i, c_hat)?;
        let c = g.add(keep, write)?;
        let tc = g.tanh(c)?;
        let h = g.mul(o, tc)?;
        Ok(LstmState { h, c })
    }

    /// Matrix products `2·4H·(in + H)`, plus `4H` bias additions, `4H` gate
    /// activations and `5H` for the cell/hidden update
    /// (`f∘c`, `i∘g`, sum, `tanh c`, `o∘tanh c`).
    pub fn flops(&self) -> u64 {
        let h = self.hidden;
        (2 * 4 * h * (self.input + h) + 4 * h + 4 * h + 5 * h) as u64
    }
}

/// Stack of linear layers with ReLU between them (none after the last).
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `dims = [in, hidden…, out]`.
    pub fn new(store: &mut ParamStore, name: &str, dims: &[usize]) -> Self {
        assert!(dims.len() >= 2, "an MLP needs at least input and output widths");
        let layers = dims.windows(2).enumerate().map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1])).collect();
        Self { layers }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut Rng) {
        self.layers.iter().for_each(|l| l.init(store, rng));
    }

    pub fn forward(&self, g: &mut Graph, p: &Binding, mut x: Var) -> Result<Var, TensorError> {
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(g, p, x)?;
            if i < last {
                x = g.relu(x)?;
            }
        }
        Ok(x)
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    /// Sum of the linear layers' counts; ReLU is not counted.
    pub fn flops(&self) -> u64 {
        self.layers.iter().map(Linear::flops).sum()
    }
}
