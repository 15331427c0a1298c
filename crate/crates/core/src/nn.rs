//! Layers composed from graph primitives.

use rand::Rng;

use crate::error::Result;
use crate::tensor::{Bound, Graph, ParamId, ParamStore, Tensor, Var};

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = (in_channels * kernel.0 * kernel.1) as f64;
        let weight = store.add(
            format!("{name}.weight"),
            Tensor::randn(
                [out_channels, in_channels, kernel.0, kernel.1],
                (2.0 / fan_in).sqrt(),
                rng,
            ),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros([out_channels]));
        Conv2d {
            weight,
            bias,
            stride,
            padding,
        }
    }

    /// Same-size 3x3 convolution.
    pub fn same3(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Conv2d::new(
            store,
            name,
            in_channels,
            out_channels,
            (3, 3),
            (1, 1),
            (1, 1),
            rng,
        )
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        g.conv2d(
            x,
            p[self.weight],
            Some(p[self.bias]),
            self.stride,
            self.padding,
        )
    }
}

/// `y = x W + b` over rows of a `[m, in]` input.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = (6.0 / (input + output) as f64).sqrt();
        let weight = store.add(
            format!("{name}.weight"),
            Tensor::uniform([input, output], bound, rng),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros([1, output]));
        Linear { weight, bias }
    }

    /// Zero-initialized layer (uniform output distribution before training).
    pub fn zeros(store: &mut ParamStore, name: &str, input: usize, output: usize) -> Self {
        let weight = store.add(format!("{name}.weight"), Tensor::zeros([input, output]));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros([1, output]));
        Linear { weight, bias }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let y = g.matmul(x, p[self.weight])?;
        let rows = g.shape(y)[0];
        let b = if rows == 1 {
            p[self.bias]
        } else {
            g.repeat_rows(p[self.bias], rows)?
        };
        g.add(y, b)
    }
}

/// One LSTM layer in one direction; gate order is input, forget, cell, output.
#[derive(Clone, Debug)]
pub struct LstmCell {
    pub input_weight: ParamId,
    pub hidden_weight: ParamId,
    pub bias: ParamId,
    pub hidden: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

impl LstmCell {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = (1.0 / hidden as f64).sqrt();
        let input_weight = store.add(
            format!("{name}.wx"),
            Tensor::uniform([input, 4 * hidden], bound, rng),
        );
        let hidden_weight = store.add(
            format!("{name}.wh"),
            Tensor::uniform([hidden, 4 * hidden], bound, rng),
        );
        let mut b = Tensor::zeros([1, 4 * hidden]);
        b.data_mut()[hidden..2 * hidden].fill(1.0);
        let bias = store.add(format!("{name}.b"), b);
        LstmCell {
            input_weight,
            hidden_weight,
            bias,
            hidden,
        }
    }

    pub fn zero_state(&self, g: &mut Graph) -> LstmState {
        LstmState {
            h: g.constant(Tensor::zeros([1, self.hidden])),
            c: g.constant(Tensor::zeros([1, self.hidden])),
        }
    }

    /// Input projection `x W_x + b` for a whole `[T, in]` sequence.
    pub fn project(&self, g: &mut Graph, p: &Bound, xs: Var) -> Result<Var> {
        let y = g.matmul(xs, p[self.input_weight])?;
        let rows = g.shape(y)[0];
        let b = if rows == 1 {
            p[self.bias]
        } else {
            g.repeat_rows(p[self.bias], rows)?
        };
        g.add(y, b)
    }

    /// One step given the pre-projected input row `[1, 4h]`.
    pub fn step_projected(
        &self,
        g: &mut Graph,
        p: &Bound,
        xproj: Var,
        state: LstmState,
    ) -> Result<LstmState> {
        let h = self.hidden;
        let rec = g.matmul(state.h, p[self.hidden_weight])?;
        let z = g.add(xproj, rec)?;
        let ifo_in = g.slice(z, 1, 0, 2 * h)?;
        let ifo = g.sigmoid(ifo_in);
        let i = g.slice(ifo, 1, 0, h)?;
        let f = g.slice(ifo, 1, h, 2 * h)?;
        let cand_in = g.slice(z, 1, 2 * h, 3 * h)?;
        let cand = g.tanh(cand_in);
        let o_in = g.slice(z, 1, 3 * h, 4 * h)?;
        let o = g.sigmoid(o_in);
        let keep = g.mul(f, state.c)?;
        let write = g.mul(i, cand)?;
        let c = g.add(keep, write)?;
        let tc = g.tanh(c);
        let h = g.mul(o, tc)?;
        Ok(LstmState { h, c })
    }

    /// One step from a raw `[1, in]` input.
    pub fn step(&self, g: &mut Graph, p: &Bound, x: Var, state: LstmState) -> Result<LstmState> {
        let xp = self.project(g, p, x)?;
        self.step_projected(g, p, xp, state)
    }

    /// Run over a `[T, in]` sequence, returning `[T, h]` outputs.
    pub fn run(&self, g: &mut Graph, p: &Bound, xs: Var, reverse: bool) -> Result<Var> {
        let t = g.shape(xs)[0];
        let proj = self.project(g, p, xs)?;
        let mut state = self.zero_state(g);
        let mut outs = vec![None; t];
        let order: Vec<usize> = if reverse {
            (0..t).rev().collect()
        } else {
            (0..t).collect()
        };
        for step in order {
            let row = g.slice(proj, 0, step, step + 1)?;
            state = self.step_projected(g, p, row, state)?;
            outs[step] = Some(state.h);
        }
        let outs: Vec<Var> = outs.into_iter().map(|v| v.expect("every step ran")).collect();
        g.concat(&outs, 0)
    }
}

/// Stacked (optionally bidirectional) LSTM over a `[T, in]` sequence.
#[derive(Clone, Debug)]
pub struct Lstm {
    pub forward: Vec<LstmCell>,
    pub backward: Vec<LstmCell>,
}

impl Lstm {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        layers: usize,
        bidirectional: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let dirs = if bidirectional { 2 } else { 1 };
        let mut forward = Vec::new();
        let mut backward = Vec::new();
        for l in 0..layers {
            let inp = if l == 0 { input } else { hidden * dirs };
            forward.push(LstmCell::new(store, &format!("{name}.l{l}.fwd"), inp, hidden, rng));
            if bidirectional {
                backward.push(LstmCell::new(store, &format!("{name}.l{l}.bwd"), inp, hidden, rng));
            }
        }
        Lstm { forward, backward }
    }

    pub fn layers(&self) -> usize {
        self.forward.len()
    }

    pub fn is_bidirectional(&self) -> bool {
        !self.backward.is_empty()
    }

    pub fn output_size(&self) -> usize {
        self.forward[0].hidden * if self.is_bidirectional() { 2 } else { 1 }
    }

    pub fn run(&self, g: &mut Graph, p: &Bound, xs: Var) -> Result<Var> {
        let mut x = xs;
        for (l, cell) in self.forward.iter().enumerate() {
            let fwd = cell.run(g, p, x, false)?;
            x = match self.backward.get(l) {
                Some(bcell) => {
                    let bwd = bcell.run(g, p, x, true)?;
                    g.concat(&[fwd, bwd], 1)?
                }
                None => fwd,
            };
        }
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lstm_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let lstm = Lstm::new(&mut store, "enc", 5, 4, 2, true, &mut rng);
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let xs = g.constant(Tensor::full([7, 5], 0.1));
        let y = lstm.run(&mut g, &p, xs).unwrap();
        assert_eq!(g.shape(y), &[7, 8]);
        assert_eq!(lstm.output_size(), 8);
    }

    #[test]
    fn zero_linear_gives_zero_output() {
        let mut store = ParamStore::new();
        let lin = Linear::zeros(&mut store, "head", 3, 4);
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let x = g.constant(Tensor::full([2, 3], 1.5));
        let y = lin.forward(&mut g, &p, x).unwrap();
        assert_eq!(g.shape(y), &[2, 4]);
        assert!(g.value(y).iter().all(|v| *v == 0.0));
    }
}
