use super::{ParamStore, Tensor};

/// Plain gradient descent: `p <- p - lr * g`, then zero the gradients.
pub fn sgd_step(params: &mut ParamStore, learning_rate: f64) {
    for t in params.tensors_mut() {
        sgd_tensor(t, learning_rate);
    }
}

fn sgd_tensor(t: &mut Tensor, lr: f64) {
    let Some(g) = t.grad().map(<[f64]>::to_vec) else {
        return;
    };
    for (p, gv) in t.data_mut().iter_mut().zip(&g) {
        *p -= lr * gv;
    }
    t.zero_grad();
}

/// Rescale all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(params: &mut ParamStore, max_norm: f64) -> f64 {
    let sq: f64 = params
        .iter()
        .filter_map(|(_, t)| t.grad())
        .flat_map(|g| g.iter())
        .map(|x| x * x)
        .sum();
    let norm = sq.sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        for t in params.tensors_mut() {
            if let Some(g) = t.grad_mut() {
                g.iter_mut().for_each(|x| *x *= s);
            }
        }
    }
    norm
}

/// Adam with bias correction. State is kept per parameter in store order.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &ParamStore, lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn moments(&self) -> (&[Vec<f64>], &[Vec<f64>]) {
        (&self.m, &self.v)
    }

    pub fn restore(&mut self, step: u64, m: Vec<Vec<f64>>, v: Vec<Vec<f64>>) {
        assert_eq!(m.len(), self.m.len());
        assert_eq!(v.len(), self.v.len());
        self.step = step;
        self.m = m;
        self.v = v;
    }

    /// Apply one update and zero the gradients.
    pub fn step(&mut self, params: &mut ParamStore) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, t) in params.tensors_mut().iter_mut().enumerate() {
            let Some(g) = t.grad().map(<[f64]>::to_vec) else {
                continue;
            };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, p) in t.data_mut().iter_mut().enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                *p -= self.lr * mh / (vh.sqrt() + self.eps);
            }
            t.zero_grad();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(p: f64, g: f64) -> ParamStore {
        let mut s = ParamStore::new();
        let id = s.add("p", Tensor::scalar(p));
        s.get_mut(id).accumulate_grad(&[g]);
        s
    }

    #[test]
    fn sgd_basic_step() {
        let mut s = store(1.0, 2.0);
        sgd_step(&mut s, 0.1);
        assert!((s.by_name("p").unwrap().data()[0] - 0.8).abs() < 1e-15);
        assert_eq!(s.by_name("p").unwrap().grad(), Some(&[0.0][..]));
    }

    #[test]
    fn sgd_zero_lr_or_zero_grad_is_identity() {
        let mut s = store(1.0, 2.0);
        sgd_step(&mut s, 0.0);
        assert_eq!(s.by_name("p").unwrap().data()[0], 1.0);
        let mut s = store(1.0, 0.0);
        sgd_step(&mut s, 0.5);
        assert_eq!(s.by_name("p").unwrap().data()[0], 1.0);
    }

    #[test]
    fn adam_moves_against_gradient() {
        let mut s = store(1.0, 2.0);
        let mut opt = Adam::new(&s, 0.01);
        opt.step(&mut s);
        assert!((s.by_name("p").unwrap().data()[0] - 0.99).abs() < 1e-9);
    }

    #[test]
    fn clipping_bounds_the_norm() {
        let mut s = store(0.0, 10.0);
        let before = clip_grad_norm(&mut s, 1.0);
        assert_eq!(before, 10.0);
        assert!((s.by_name("p").unwrap().grad().unwrap()[0] - 1.0).abs() < 1e-12);
    }
}
