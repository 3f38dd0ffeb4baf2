use super::{NumError, Tensor};

/// First/second moment accumulators for a fixed list of parameters.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        Self::with_hyper(params, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyper<'a>(params: impl IntoIterator<Item = &'a Tensor>, beta1: f64, beta2: f64, eps: f64) -> Self {
        let m: Vec<Tensor> = params.into_iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect();
        let v = m.clone();
        Self {
            beta1,
            beta2,
            eps,
            step: 0,
            m,
            v,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update, applied in place.
pub fn adam_step<'a>(
    params: impl IntoIterator<Item = &'a mut Tensor>,
    grads: &[Tensor],
    state: &mut AdamState,
    lr: f64,
) -> Result<(), NumError> {
    if !(lr > 0.0) {
        return Err(NumError::Contract(format!("learning rate must be positive, got {lr}")));
    }
    let mut params: Vec<&mut Tensor> = params.into_iter().collect();
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(NumError::Shape(format!(
            "adam: {} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.m[i].shape() {
            return Err(NumError::Shape(format!(
                "adam slot {i}: param {:?}, grad {:?}, moment {:?}",
                p.shape(),
                g.shape(),
                state.m[i].shape()
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let bc1 = 1.0 - b1.powi(t);
    let bc2 = 1.0 - b2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        let g = grads[i].data();
        let m = state.m[i].data_mut();
        for (mj, &gj) in m.iter_mut().zip(g) {
            *mj = b1 * *mj + (1.0 - b1) * gj;
        }
        let v = state.v[i].data_mut();
        for (vj, &gj) in v.iter_mut().zip(g) {
            *vj = b2 * *vj + (1.0 - b2) * gj * gj;
        }
        let (m, v) = (state.m[i].data(), state.v[i].data());
        for ((pj, &mj), &vj) in p.data_mut().iter_mut().zip(m).zip(v) {
            let m_hat = mj / bc1;
            let v_hat = vj / bc2;
            *pj -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = Tensor::new(1, 3, vec![0.5, -1.0, 2.0]).unwrap();
        let before = p.clone();
        let mut st = AdamState::new([&p]);
        adam_step([&mut p], &[Tensor::zeros(1, 3)], &mut st, 1e-3).unwrap();
        assert!(p.bitwise_eq(&before));
        assert_eq!(st.step(), 1);
    }

    #[test]
    fn constant_gradient_update_tends_to_lr() {
        // Scalar recurrence simulated independently of the tensor path.
        let (b1, b2, eps, lr, g) = (0.9f64, 0.999f64, 1e-8, 1e-3, 0.37);
        let (mut m, mut v) = (0.0, 0.0);
        let mut last = 0.0;
        for t in 1..=1000 {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            last = lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
        }
        assert!((last - lr).abs() / lr < 0.01);

        let mut p = Tensor::scalar(0.0);
        let mut st = AdamState::new([&p]);
        let mut prev = 0.0;
        let mut step = 0.0;
        for _ in 0..1000 {
            adam_step([&mut p], &[Tensor::scalar(g)], &mut st, lr).unwrap();
            step = prev - p.item();
            prev = p.item();
        }
        assert!((step - lr).abs() / lr < 0.01, "update {step}");
        assert!((step - last).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = Tensor::zeros(2, 2);
        let mut st = AdamState::new([&p]);
        assert!(matches!(
            adam_step([&mut p], &[Tensor::zeros(1, 2)], &mut st, 1e-3),
            Err(NumError::Shape(_))
        ));
        assert_eq!(st.step(), 0);
    }

    #[test]
    fn identical_runs_are_bitwise_identical() {
        let run = || {
            let mut p = Tensor::new(1, 2, vec![0.1, 0.2]).unwrap();
            let mut st = AdamState::new([&p]);
            for k in 0..50 {
                let g = Tensor::new(1, 2, vec![(k as f64).sin(), (k as f64 * 0.3).cos()]).unwrap();
                adam_step([&mut p], &[g], &mut st, 1e-2).unwrap();
            }
            p
        };
        assert!(run().bitwise_eq(&run()));
    }
}
