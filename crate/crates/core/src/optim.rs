//! Adam with bias correction, and projections onto norm balls around an anchor.

use serde::{Deserialize, Serialize};

use crate::error::{config, invalid, Result};
use crate::model::ParameterVector;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        for (name, beta) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&beta) {
                return Err(config(format!("{name} must lie in [0, 1), got {beta}")));
            }
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step_count: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step_count: 0,
        }
    }

    /// One Adam update applied in place.
    pub fn update(
        &mut self,
        params: &mut ParameterVector,
        grad: &ParameterVector,
        config: &AdamConfig,
    ) -> Result<()> {
        if params.len() != grad.len() || params.len() != self.m.len() || self.m.len() != self.v.len()
        {
            return Err(invalid(format!(
                "Adam length mismatch: params {}, grad {}, state {}/{}",
                params.len(),
                grad.len(),
                self.m.len(),
                self.v.len()
            )));
        }
        self.step_count += 1;
        let t = self.step_count as f64;
        let c1 = 1.0 - config.beta1.powf(t);
        let c2 = 1.0 - config.beta2.powf(t);
        let (b1, b2) = (config.beta1, config.beta2);
        for (((p, &g), m), v) in params
            .values_mut()
            .iter_mut()
            .zip(grad.values())
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= config.learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
        }
        Ok(())
    }
}

pub fn adam_step(
    params: &ParameterVector,
    grad: &ParameterVector,
    state: &AdamState,
    config: &AdamConfig,
) -> Result<(ParameterVector, AdamState)> {
    let mut params = params.clone();
    let mut state = state.clone();
    state.update(&mut params, grad, config)?;
    Ok((params, state))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    Linf,
    L2,
}

/// Closed ball of radius `radius` around `anchor`.
#[derive(Debug, Clone, PartialEq)]
pub struct BallConstraint {
    pub norm: NormKind,
    pub radius: f64,
    pub anchor: ParameterVector,
}

impl BallConstraint {
    pub fn new(norm: NormKind, radius: f64, anchor: ParameterVector) -> Result<Self> {
        if !(radius >= 0.0 && radius.is_finite()) {
            return Err(config(format!("ball radius must be finite and >= 0, got {radius}")));
        }
        Ok(Self {
            norm,
            radius,
            anchor,
        })
    }

    pub fn distance(&self, params: &ParameterVector) -> f64 {
        match self.norm {
            NormKind::Linf => params.linf_distance(&self.anchor),
            NormKind::L2 => params.l2_distance(&self.anchor),
        }
    }

    pub fn contains(&self, params: &ParameterVector) -> bool {
        self.distance(params) <= self.radius
    }

    /// Project in place. Points already inside are left bit-for-bit unchanged.
    pub fn project_in_place(&self, params: &mut ParameterVector) -> Result<()> {
        if params.len() != self.anchor.len() {
            return Err(invalid(format!(
                "cannot project {} parameters onto a ball anchored at {}",
                params.len(),
                self.anchor.len()
            )));
        }
        let delta = self.radius;
        match self.norm {
            NormKind::Linf => {
                for (p, &a) in params.values_mut().iter_mut().zip(self.anchor.values()) {
                    let d = *p - a;
                    if d > delta {
                        *p = a + delta;
                    } else if d < -delta {
                        *p = a - delta;
                    }
                }
            }
            NormKind::L2 => {
                let dist = params.l2_distance(&self.anchor);
                if dist <= delta {
                    return Ok(());
                }
                let diff: Vec<f64> = params
                    .values()
                    .iter()
                    .zip(self.anchor.values())
                    .map(|(p, a)| p - a)
                    .collect();
                let mut scale = delta / dist;
                // rounding in anchor + scale * diff can land a hair outside
                loop {
                    for ((p, &a), &d) in params
                        .values_mut()
                        .iter_mut()
                        .zip(self.anchor.values())
                        .zip(&diff)
                    {
                        *p = a + d * scale;
                    }
                    if params.l2_distance(&self.anchor) <= delta || scale == 0.0 {
                        break;
                    }
                    scale *= 1.0 - 4.0 * f64::EPSILON;
                }
            }
        }
        Ok(())
    }
}

pub fn project(params: &ParameterVector, constraint: &BallConstraint) -> Result<ParameterVector> {
    let mut out = params.clone();
    constraint.project_in_place(&mut out)?;
    Ok(out)
}

pub fn projected_adam_step(
    params: &ParameterVector,
    grad: &ParameterVector,
    state: &AdamState,
    adam: &AdamConfig,
    constraint: &BallConstraint,
) -> Result<(ParameterVector, AdamState)> {
    let (mut next, state) = adam_step(params, grad, state, adam)?;
    constraint.project_in_place(&mut next)?;
    Ok((next, state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pv(v: &[f64]) -> ParameterVector {
        ParameterVector::new(v.to_vec())
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let cfg = AdamConfig::default();
        let params = pv(&[1.0, -2.0, 0.5]);
        let grad = pv(&[3.0, -0.25, 1e3]);
        let (next, state) = adam_step(&params, &grad, &AdamState::new(3), &cfg).unwrap();
        assert_eq!(state.step_count, 1);
        for i in 0..3 {
            let moved = next.values()[i] - params.values()[i];
            let expect = -cfg.learning_rate * grad.values()[i].signum();
            assert!((moved - expect).abs() < cfg.learning_rate * 1e-6, "{moved}");
        }
    }

    #[test]
    fn zero_gradient_fresh_state_is_identity() {
        let params = pv(&[0.3, -7.0]);
        let (next, state) =
            adam_step(&params, &pv(&[0.0, 0.0]), &AdamState::new(2), &AdamConfig::default())
                .unwrap();
        assert_eq!(next, params);
        assert_eq!(state.m, vec![0.0, 0.0]);
        assert_eq!(state.v, vec![0.0, 0.0]);
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let r = adam_step(&pv(&[0.0]), &pv(&[0.0, 1.0]), &AdamState::new(1), &AdamConfig::default());
        assert!(r.is_err());
        let ball = BallConstraint::new(NormKind::L2, 0.1, pv(&[0.0])).unwrap();
        assert!(project(&pv(&[1.0, 2.0]), &ball).is_err());
    }

    /// Textbook Adam recurrence, written out independently.
    fn scalar_adam(w0: f64, lr: f64, steps: usize) -> f64 {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let (mut w, mut m, mut v) = (w0, 0.0, 0.0);
        for t in 1..=steps {
            let g = 2.0 * (w - 3.0);
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t as i32));
            let vh = v / (1.0 - b2.powi(t as i32));
            w -= lr * mh / (vh.sqrt() + eps);
        }
        w
    }

    #[test]
    fn quadratic_converges_like_reference() {
        let cfg = AdamConfig {
            learning_rate: 0.05,
            ..AdamConfig::default()
        };
        let mut w = pv(&[0.0]);
        let mut state = AdamState::new(1);
        for _ in 0..500 {
            let g = pv(&[2.0 * (w.values()[0] - 3.0)]);
            state.update(&mut w, &g, &cfg).unwrap();
        }
        let reference = scalar_adam(0.0, 0.05, 500);
        assert!((w.values()[0] - 3.0).abs() < 1e-2, "{}", w.values()[0]);
        assert!((w.values()[0] - reference).abs() < 1e-12);
        assert_eq!(state.step_count, 500);
    }

    #[test]
    fn linf_projection_closed_form() {
        let ball = BallConstraint::new(NormKind::Linf, 0.1, pv(&[0.0, 0.0])).unwrap();
        assert_eq!(project(&pv(&[0.25, -0.05]), &ball).unwrap(), pv(&[0.1, -0.05]));
    }

    #[test]
    fn l2_projection_closed_form() {
        let ball = BallConstraint::new(NormKind::L2, 0.1, pv(&[0.0, 0.0])).unwrap();
        let out = project(&pv(&[0.3, 0.4]), &ball).unwrap();
        assert!((out.values()[0] - 0.06).abs() < 1e-15);
        assert!((out.values()[1] - 0.08).abs() < 1e-15);
    }

    #[test]
    fn huge_ball_is_inert_and_zero_ball_pins() {
        let params = pv(&[0.5, -0.25]);
        let grad = pv(&[1.0, -3.0]);
        let state = AdamState::new(2);
        let cfg = AdamConfig::default();
        let plain = adam_step(&params, &grad, &state, &cfg).unwrap();
        for norm in [NormKind::Linf, NormKind::L2] {
            let big = BallConstraint::new(norm, 1e9, params.clone()).unwrap();
            assert_eq!(projected_adam_step(&params, &grad, &state, &cfg, &big).unwrap(), plain);
            let zero = BallConstraint::new(norm, 0.0, params.clone()).unwrap();
            let (p, _) = projected_adam_step(&params, &grad, &state, &cfg, &zero).unwrap();
            assert_eq!(p, params);
        }
    }

    #[test]
    fn negative_radius_is_rejected() {
        assert!(BallConstraint::new(NormKind::L2, -0.1, pv(&[0.0])).is_err());
    }

    fn vec_strategy() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (1usize..12).prop_flat_map(|n| {
            (
                prop::collection::vec(-2.0f64..2.0, n),
                prop::collection::vec(-2.0f64..2.0, n),
            )
        })
    }

    proptest! {
        #[test]
        fn projection_properties((p, a) in vec_strategy(), radius in 0.0f64..1.5, l2 in any::<bool>()) {
            let norm = if l2 { NormKind::L2 } else { NormKind::Linf };
            let ball = BallConstraint::new(norm, radius, pv(&a)).unwrap();
            let params = pv(&p);
            let once = project(&params, &ball).unwrap();
            let twice = project(&once, &ball).unwrap();
            prop_assert_eq!(&once, &twice);
            prop_assert!(ball.distance(&once) <= radius + 1e-12);
            prop_assert!(ball.distance(&once) <= ball.distance(&params) + 1e-12);
            if ball.contains(&params) {
                prop_assert_eq!(&once, &params);
            }
        }

        #[test]
        fn projected_steps_stay_in_ball(seed in any::<u64>(), l2 in any::<bool>()) {
            use rand::Rng;
            let mut rng = crate::rng::stream(seed, "test");
            let anchor: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let norm = if l2 { NormKind::L2 } else { NormKind::Linf };
            let ball = BallConstraint::new(norm, 0.1, pv(&anchor)).unwrap();
            let cfg = AdamConfig { learning_rate: 0.05, ..AdamConfig::default() };
            let mut params = pv(&anchor);
            let mut state = AdamState::new(6);
            for _ in 0..100 {
                let g: Vec<f64> = (0..6).map(|_| rng.random_range(-5.0..5.0)).collect();
                let (p, s) = projected_adam_step(&params, &pv(&g), &state, &cfg, &ball).unwrap();
                params = p;
                state = s;
            }
            prop_assert!(ball.distance(&params) <= 0.1 + 1e-12);
        }
    }
}
