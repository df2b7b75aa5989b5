//! Adam with bias correction.

use super::net::{ModelParams, Param};
use super::tensor::Scalar;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct OptimizerState<T> {
    pub step: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// First-moment accumulators, shaped like the parameters.
    pub m: ModelParams<T>,
    /// Second-moment accumulators.
    pub v: ModelParams<T>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(params: &ModelParams<T>, learning_rate: f64) -> Self {
        OptimizerState {
            step: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }
}

/// One bias-corrected Adam update, in place. Non-finite gradients are an
/// error naming the offending parameter.
pub fn adam_step<T: Scalar>(
    params: &mut ModelParams<T>,
    grads: &ModelParams<T>,
    state: &mut OptimizerState<T>,
) -> Result<()> {
    if params.params.len() != grads.params.len() {
        return Err(Error::ShapeMismatch("params vs grads".into()));
    }
    for (pi, (p, g)) in params.params.iter().zip(&grads.params).enumerate() {
        if p.w.len() != g.w.len() || p.b.len() != g.b.len() {
            return Err(Error::ShapeMismatch(format!("param {pi} vs grad {pi}")));
        }
        if g.w.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient { param: format!("param{pi}.weight") });
        }
        if g.b.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient { param: format!("param{pi}.bias") });
        }
    }

    state.step += 1;
    let t = state.step as f64;
    let corr1 = 1.0 - state.beta1.powf(t);
    let corr2 = 1.0 - state.beta2.powf(t);
    let b1 = T::from_f64(state.beta1);
    let b2 = T::from_f64(state.beta2);
    let one_minus_b1 = T::from_f64(1.0 - state.beta1);
    let one_minus_b2 = T::from_f64(1.0 - state.beta2);
    let lr = T::from_f64(state.learning_rate);
    let eps = T::from_f64(state.eps);
    let inv_corr1 = T::from_f64(1.0 / corr1);
    let inv_corr2 = T::from_f64(1.0 / corr2);

    let update = |p: &mut [T], g: &[T], m: &mut [T], v: &mut [T]| {
        for i in 0..p.len() {
            m[i] = b1 * m[i] + one_minus_b1 * g[i];
            v[i] = b2 * v[i] + one_minus_b2 * g[i] * g[i];
            let m_hat = m[i] * inv_corr1;
            let v_hat = v[i] * inv_corr2;
            p[i] = p[i] - lr * m_hat / (v_hat.sqrt() + eps);
        }
    };

    for pi in 0..params.params.len() {
        let Param { w: gw, b: gb } = &grads.params[pi];
        update(&mut params.params[pi].w, gw, &mut state.m.params[pi].w, &mut state.v.params[pi].w);
        update(&mut params.params[pi].b, gb, &mut state.m.params[pi].b, &mut state.v.params[pi].b);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_params(x: f64) -> ModelParams<f64> {
        ModelParams { params: vec![Param { w: vec![x], b: vec![] }] }
    }

    #[test]
    fn zero_gradient_is_identity() {
        let mut p = scalar_params(0.7);
        let g = scalar_params(0.0);
        let mut st = OptimizerState::new(&p, 0.1);
        adam_step(&mut p, &g, &mut st).unwrap();
        assert_eq!(p.params[0].w[0], 0.7);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_magnitude_is_about_lr() {
        let mut p = scalar_params(0.0);
        let g = scalar_params(3.5);
        let mut st = OptimizerState::new(&p, 0.1);
        adam_step(&mut p, &g, &mut st).unwrap();
        // bias-corrected first step is lr * g / (|g| + eps') which is about lr
        assert!((p.params[0].w[0] + 0.1).abs() < 1e-6, "{}", p.params[0].w[0]);
    }

    #[test]
    fn three_steps_match_hand_computed_reference() {
        // minimize f(x) = x^2 from x = 1 with lr = 0.1; gradients 2x.
        // reference trajectory computed independently with the scalar Adam
        // recurrence (beta1=0.9, beta2=0.999, eps=1e-8)
        let mut x = 1.0f64;
        let mut p = scalar_params(x);
        let mut st = OptimizerState::new(&p, 0.1);
        let mut reference = Vec::new();
        {
            let (mut m, mut v) = (0.0f64, 0.0f64);
            let mut xr = 1.0f64;
            for t in 1..=3 {
                let g = 2.0 * xr;
                m = 0.9 * m + 0.1 * g;
                v = 0.999 * v + 0.001 * g * g;
                let mh = m / (1.0 - 0.9f64.powi(t));
                let vh = v / (1.0 - 0.999f64.powi(t));
                xr -= 0.1 * mh / (vh.sqrt() + 1e-8);
                reference.push(xr);
            }
        }
        for &want in &reference {
            let g = scalar_params(2.0 * x);
            adam_step(&mut p, &g, &mut st).unwrap();
            x = p.params[0].w[0];
            assert!((x - want).abs() < 1e-12, "x={x} want={want}");
        }
    }

    #[test]
    fn non_finite_gradient_is_an_error() {
        let mut p = scalar_params(0.0);
        let g = scalar_params(f64::NAN);
        let mut st = OptimizerState::new(&p, 0.1);
        match adam_step(&mut p, &g, &mut st) {
            Err(Error::NonFiniteGradient { param }) => assert!(param.contains("param0")),
            other => panic!("expected NonFiniteGradient, got {other:?}"),
        }
    }
}
