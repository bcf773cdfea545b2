use crate::error::{Error, Result};

use super::tensor::Tensor;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// Plain gradient step `p ← p − lr·g`.
pub fn sgd_step(param: &mut Tensor, grad: &Tensor, lr: f64) -> Result<()> {
    if param.shape() != grad.shape() {
        return Err(Error::dimension(format!(
            "sgd: parameter shape {:?} vs gradient shape {:?}",
            param.shape(),
            grad.shape()
        )));
    }
    for (p, &g) in param.data_mut().iter_mut().zip(grad.data()) {
        *p -= lr * g;
    }
    Ok(())
}

/// First/second-moment state for one parameter tensor.
#[derive(Clone, Debug)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// Standard Adam update with bias correction; increments the step counter.
pub fn adam_step(
    state: &mut AdamState,
    param: &mut Tensor,
    grad: &Tensor,
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
) -> Result<()> {
    if param.shape() != grad.shape() {
        return Err(Error::dimension(format!(
            "adam: parameter shape {:?} vs gradient shape {:?}",
            param.shape(),
            grad.shape()
        )));
    }
    if state.m.len() != param.len() {
        return Err(Error::dimension(format!(
            "adam: state length {} vs parameter length {}",
            state.m.len(),
            param.len()
        )));
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    for ((p, &g), (m, v)) in param
        .data_mut()
        .iter_mut()
        .zip(grad.data())
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + epsilon);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;

    #[test]
    fn sgd_basic_step() {
        let mut p = Tensor::scalar(1.0);
        sgd_step(&mut p, &Tensor::scalar(2.0), 0.1).unwrap();
        assert!((p.item() - 0.8).abs() < 1e-15);
    }

    #[test]
    fn sgd_zero_lr_is_identity() {
        let mut p = Tensor::new(vec![3], vec![1.0, -2.0, 3.0]).unwrap();
        let before = p.clone();
        sgd_step(&mut p, &Tensor::new(vec![3], vec![5.0, 5.0, 5.0]).unwrap(), 0.0).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn sgd_shape_mismatch_errors() {
        let mut p = Tensor::zeros(vec![2]);
        let g = Tensor::zeros(vec![3]);
        assert!(sgd_step(&mut p, &g, 0.1).is_err());
    }

    #[test]
    fn sgd_on_square_decays_geometrically() {
        // f(p) = p², gradient 2p, so p_t = (1 − 2·lr)^t · p_0.
        let lr = 0.1;
        let mut p = Tensor::scalar(1.0);
        let mut prev = 1.0;
        for t in 1..=20 {
            let mut tape = Tape::new();
            let pn = tape.leaf(p.clone(), true);
            let sq = tape.mul(pn, pn).unwrap();
            let loss = tape.sum(sq, None).unwrap();
            tape.backward(loss).unwrap();
            sgd_step(&mut p, &tape.grad(pn), lr).unwrap();
            assert!(p.item() < prev, "not monotone at step {t}");
            prev = p.item();
            let closed_form = (1.0 - 2.0 * lr).powi(t);
            assert!((p.item() - closed_form).abs() < 1e-12 * closed_form.max(1e-12));
        }
    }

    #[test]
    fn adam_first_step_with_unit_gradient() {
        // t = 1: m̂ = g, v̂ = g², so the step is lr·g/(|g| + ε).
        let mut p = Tensor::scalar(0.3);
        let mut state = AdamState::new(1);
        adam_step(
            &mut state,
            &mut p,
            &Tensor::scalar(1.0),
            0.001,
            ADAM_BETA1,
            ADAM_BETA2,
            ADAM_EPSILON,
        )
        .unwrap();
        let expected = 0.3 - 0.001 / (1.0 + ADAM_EPSILON);
        assert!((p.item() - expected).abs() < 1e-15);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut p = Tensor::new(vec![2], vec![0.5, -0.5]).unwrap();
        let before = p.clone();
        let mut state = AdamState::new(2);
        for _ in 0..10 {
            adam_step(
                &mut state,
                &mut p,
                &Tensor::zeros(vec![2]),
                0.01,
                ADAM_BETA1,
                ADAM_BETA2,
                ADAM_EPSILON,
            )
            .unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn adam_converges_on_shifted_square() {
        // Oracle: an independent scalar transcription of the update rule,
        // run in lockstep; trajectories must agree exactly.
        let lr = 0.01;
        let mut p = Tensor::scalar(0.0);
        let mut state = AdamState::new(1);
        let (mut om, mut ov, mut op) = (0.0f64, 0.0f64, 0.0f64);
        for t in 1..=2000 {
            let grad = 2.0 * (p.item() - 3.0);
            adam_step(
                &mut state,
                &mut p,
                &Tensor::scalar(grad),
                lr,
                ADAM_BETA1,
                ADAM_BETA2,
                ADAM_EPSILON,
            )
            .unwrap();

            let og = 2.0 * (op - 3.0);
            om = ADAM_BETA1 * om + (1.0 - ADAM_BETA1) * og;
            ov = ADAM_BETA2 * ov + (1.0 - ADAM_BETA2) * og * og;
            let m_hat = om / (1.0 - ADAM_BETA1.powi(t));
            let v_hat = ov / (1.0 - ADAM_BETA2.powi(t));
            op -= lr * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
            assert_eq!(p.item(), op, "trajectory diverged from oracle at t={t}");
        }
        assert!((p.item() - 3.0).abs() < 1e-2);
    }
}
