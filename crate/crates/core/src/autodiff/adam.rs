use super::params::ParamStore;
use super::tensor::Tensor;

/// Adam moment buffers with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        AdamState {
            first: zeros.clone(),
            second: zeros,
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One Adam update of every tensor in `params` given matching `grads`.
pub fn adam_step(params: &mut ParamStore, grads: &[Tensor], state: &mut AdamState, lr: f64) {
    assert_eq!(grads.len(), params.len(), "one gradient per parameter");
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    for (k, (p, g)) in params.tensors_mut().zip(grads).enumerate() {
        assert_eq!(p.shape(), g.shape(), "gradient shape mismatch");
        let (m, v) = (&mut state.first[k], &mut state.second[k]);
        for (i, (pv, &gv)) in p.values_mut().iter_mut().zip(g.values()).enumerate() {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * gv;
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * gv * gv;
            let mh = m[i] / c1;
            let vh = v[i] / c2;
            *pv -= lr * mh / (vh.sqrt() + state.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Graph;

    fn single(v: f64) -> ParamStore {
        let mut p = ParamStore::new();
        p.insert("x", Tensor::vector(vec![v, -v])).unwrap();
        p
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = single(1.5);
        let before = p.clone();
        let mut s = AdamState::new(&p);
        for _ in 0..5 {
            adam_step(&mut p, &[Tensor::zeros(&[2])], &mut s, 0.1);
        }
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = single(1.0);
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &[Tensor::vector(vec![3.0, -0.2])], &mut s, 0.01);
        let x = p.get("x").unwrap().values();
        assert!((x[0] - (1.0 - 0.01)).abs() < 1e-9);
        assert!((x[1] - (-1.0 + 0.01)).abs() < 1e-9);
    }

    #[test]
    fn converges_on_quadratic() {
        let mut p = ParamStore::new();
        p.insert("x", Tensor::scalar(1.0)).unwrap();
        let mut s = AdamState::new(&p);
        for _ in 0..100 {
            let mut g = Graph::new();
            let b = p.bind(&mut g);
            let sq = g.square(b.var("x"));
            g.backward(sq).unwrap();
            let grads = b.grads(&g);
            adam_step(&mut p, &grads, &mut s, 0.1);
        }
        let x = p.get("x").unwrap().item();
        assert!(x.abs() < 0.01, "x = {x}");
    }
}
