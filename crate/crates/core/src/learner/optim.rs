use serde::{Deserialize, Serialize};

use super::net::ActorCriticNet;
use crate::error::{Error, Result};

/// Learning rate annealed linearly from `initial` to `last` over `total_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub initial: f64,
    pub last: f64,
    pub total_steps: u64,
}

impl LrSchedule {
    pub fn at(&self, step: u64) -> f64 {
        let frac = if self.total_steps == 0 {
            1.0
        } else {
            (step as f64 / self.total_steps as f64).min(1.0)
        };
        self.initial + (self.last - self.initial) * frac
    }
}

/// RMSProp with one second-moment accumulator per parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmsProp {
    pub decay: f64,
    pub epsilon: f64,
    pub accum: Vec<f64>,
}

impl RmsProp {
    pub fn new(len: usize, decay: f64, epsilon: f64) -> Self {
        Self {
            decay,
            epsilon,
            accum: vec![0.0; len],
        }
    }
}

/// Rescales `grad` in place so its L2 norm is at most `max_norm`.
pub fn clip_norm(grad: &mut [f64], max_norm: f64) {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
}

/// One RMSProp descent step at the scheduled learning rate for `step`.
pub fn apply_update(
    net: &mut ActorCriticNet,
    opt: &mut RmsProp,
    grad: &[f64],
    schedule: &LrSchedule,
    step: u64,
) -> Result<()> {
    if grad.len() != net.len() || opt.accum.len() != net.len() {
        return Err(Error::DimensionMismatch {
            expected: net.len(),
            got: grad.len(),
        });
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            step: i,
            what: "gradient passed to the optimiser",
        });
    }
    let lr = schedule.at(step);
    let (decay, eps) = (opt.decay, opt.epsilon);
    for ((p, acc), &g) in net.params_mut().iter_mut().zip(opt.accum.iter_mut()).zip(grad) {
        *acc = decay * *acc + (1.0 - decay) * g * g;
        if g != 0.0 {
            *p -= lr * g / (acc.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learner::net::NetShape;
    use crate::rng::{stream, Stream};

    fn net() -> ActorCriticNet {
        let shape = NetShape {
            inputs: 2,
            hidden: vec![3],
            recurrent: false,
            outputs: 2,
            heads: 0,
        };
        ActorCriticNet::random(shape, &mut stream(1, Stream::LearnerInit))
    }

    #[test]
    fn schedule_endpoints() {
        let s = LrSchedule {
            initial: 1e-3,
            last: 1e-4,
            total_steps: 1000,
        };
        assert_eq!(s.at(0), 1e-3);
        assert!((s.at(1000) - 1e-4).abs() < 1e-18);
        assert!((s.at(5000) - 1e-4).abs() < 1e-18);
        assert!((s.at(500) - 5.5e-4).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut n = net();
        let before = n.clone();
        let mut opt = RmsProp::new(n.len(), 0.99, 1e-8);
        let s = LrSchedule {
            initial: 1e-3,
            last: 1e-4,
            total_steps: 10,
        };
        apply_update(&mut n, &mut opt, &vec![0.0; before.len()], &s, 3).unwrap();
        assert_eq!(n, before);
    }

    #[test]
    fn identical_updates_are_deterministic() {
        let s = LrSchedule {
            initial: 1e-2,
            last: 1e-3,
            total_steps: 10,
        };
        let g: Vec<f64> = (0..net().len()).map(|i| (i as f64 * 0.37).sin()).collect();
        let run = || {
            let mut n = net();
            let mut opt = RmsProp::new(n.len(), 0.99, 1e-8);
            apply_update(&mut n, &mut opt, &g, &s, 1).unwrap();
            apply_update(&mut n, &mut opt, &g, &s, 2).unwrap();
            (n, opt)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn rejects_non_finite() {
        let mut n = net();
        let mut opt = RmsProp::new(n.len(), 0.99, 1e-8);
        let mut g = vec![0.0; n.len()];
        g[1] = f64::INFINITY;
        let s = LrSchedule {
            initial: 1e-3,
            last: 1e-4,
            total_steps: 10,
        };
        assert!(apply_update(&mut n, &mut opt, &g, &s, 0).is_err());
    }

    #[test]
    fn clipping() {
        let mut g = vec![3.0, 4.0];
        clip_norm(&mut g, 1.0);
        assert!((g[0] - 0.6).abs() < 1e-15 && (g[1] - 0.8).abs() < 1e-15);
    }
}
