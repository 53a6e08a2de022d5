//! n-step advantage actor-critic loss and its gradient.
//!
//! For a batch s_0..s_{T-1} with bootstrap value B (0 after a terminal step),
//! the returns are R_t = r_t + γ R_{t+1}, R_T = B. The minimised loss is
//!
//! ```text
//! L = Σ_t  −log π(a_t|s_t)·A_t  −  β·H(π(·|s_t))  +  c_v·(R_t − V(s_t))²
//! ```
//!
//! with A_t = R_t − V(s_t) held constant in the policy term.

use super::net::{ActorCriticNet, Forward};
use crate::error::{Error, Result};
use crate::task::TaskId;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub observation: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    /// V(s) when the step was taken.
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionBatch {
    pub task: TaskId,
    pub steps: Vec<Transition>,
    /// V of the state after the last step; 0 when the episode terminated there.
    pub bootstrap: f64,
    /// Recurrent state entering the first step.
    pub initial_hidden: Option<Vec<f64>>,
}

impl TransitionBatch {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Discounted n-step returns, one per step.
    pub fn returns(&self, gamma: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.steps.len()];
        let mut acc = self.bootstrap;
        for (t, step) in self.steps.iter().enumerate().rev() {
            acc = step.reward + gamma * acc;
            out[t] = acc;
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub gamma: f64,
    pub entropy_beta: f64,
    pub value_coef: f64,
}

/// Gradient of the loss, split by term. `total` is the sum of the three.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub total: Vec<f64>,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Term {
    Policy,
    Value,
    Entropy,
}

fn forward_batch(net: &ActorCriticNet, batch: &TransitionBatch) -> Result<Vec<Forward>> {
    let mut out: Vec<Forward> = Vec::with_capacity(batch.len());
    for (t, step) in batch.steps.iter().enumerate() {
        let prev = match out.last() {
            Some(f) if net.shape().recurrent => Some(f.hidden().to_vec()),
            Some(_) => None,
            None => batch.initial_hidden.clone(),
        };
        let f = net.forward(&step.observation, prev.as_deref(), batch.task.0, None)?;
        if !f.value.is_finite() || f.log_probs.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step: t, what: "forward pass" });
        }
        if step.action >= f.probs.len() {
            return Err(Error::InvalidAction {
                action: step.action,
                count: f.probs.len(),
            });
        }
        out.push(f);
    }
    Ok(out)
}

fn seeds(
    forwards: &[Forward],
    batch: &TransitionBatch,
    returns: &[f64],
    w: LossWeights,
    terms: &[Term],
) -> Vec<(Vec<f64>, f64)> {
    forwards
        .iter()
        .zip(&batch.steps)
        .zip(returns)
        .map(|((f, step), &ret)| {
            let n = f.probs.len();
            let mut dz = vec![0.0; n];
            let mut dv = 0.0;
            let advantage = ret - f.value;
            let entropy = f.entropy();
            for term in terms {
                match term {
                    Term::Policy => {
                        for (i, d) in dz.iter_mut().enumerate() {
                            let onehot = if i == step.action { 1.0 } else { 0.0 };
                            *d -= advantage * (onehot - f.probs[i]);
                        }
                    }
                    Term::Entropy => {
                        for (i, d) in dz.iter_mut().enumerate() {
                            *d += w.entropy_beta * f.probs[i] * (f.log_probs[i] + entropy);
                        }
                    }
                    Term::Value => dv += -2.0 * w.value_coef * advantage,
                }
            }
            (dz, dv)
        })
        .collect()
}

/// Gradient of the full loss.
pub fn compute_gradients(net: &ActorCriticNet, batch: &TransitionBatch, weights: LossWeights) -> Result<Gradients> {
    compute_gradient_terms(net, batch, weights, &[Term::Policy, Term::Value, Term::Entropy])
}

/// Gradient of a subset of the loss terms.
pub fn compute_gradient_terms(
    net: &ActorCriticNet,
    batch: &TransitionBatch,
    weights: LossWeights,
    terms: &[Term],
) -> Result<Gradients> {
    if batch.is_empty() {
        return Err(Error::Domain("empty transition batch".into()));
    }
    if !(weights.gamma > 0.0 && weights.gamma <= 1.0) {
        return Err(Error::Domain(format!("discount must lie in (0, 1], got {}", weights.gamma)));
    }
    let forwards = forward_batch(net, batch)?;
    let returns = batch.returns(weights.gamma);
    if let Some(t) = returns.iter().position(|r| !r.is_finite()) {
        return Err(Error::NonFinite { step: t, what: "n-step return" });
    }
    let mut policy_loss = 0.0;
    let mut value_loss = 0.0;
    let mut entropy = 0.0;
    for ((f, step), &ret) in forwards.iter().zip(&batch.steps).zip(&returns) {
        let adv = ret - f.value;
        policy_loss -= f.log_probs[step.action] * adv;
        value_loss += weights.value_coef * adv * adv;
        entropy += f.entropy();
    }
    let seeds = seeds(&forwards, batch, &returns, weights, terms);
    let total = net.backward(batch.task.0, &forwards, &seeds);
    if let Some(i) = total.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            step: i,
            what: "gradient coordinate",
        });
    }
    Ok(Gradients {
        total,
        policy_loss,
        value_loss,
        entropy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learner::net::NetShape;
    use crate::rng::{stream, Stream};

    fn net() -> ActorCriticNet {
        let shape = NetShape {
            inputs: 3,
            hidden: vec![4],
            recurrent: false,
            outputs: 3,
            heads: 0,
        };
        let mut net = ActorCriticNet::random(shape, &mut stream(9, Stream::LearnerInit));
        for (i, p) in net.params_mut().iter_mut().enumerate() {
            *p += 0.05 * ((i * 7 % 11) as f64 - 5.0);
        }
        net
    }

    fn weights() -> LossWeights {
        LossWeights {
            gamma: 0.9,
            entropy_beta: 0.02,
            value_coef: 0.5,
        }
    }

    #[test]
    fn returns_are_discounted_with_bootstrap() {
        let step = |r| Transition {
            observation: vec![0.0; 3],
            action: 0,
            reward: r,
            value: 0.0,
        };
        let batch = TransitionBatch {
            task: TaskId(0),
            steps: vec![step(1.0), step(0.0), step(2.0)],
            bootstrap: 10.0,
            initial_hidden: None,
        };
        let r = batch.returns(0.5);
        assert_eq!(r, vec![1.0 + 0.5 * (0.0 + 0.5 * (2.0 + 5.0)), 0.5 * 7.0, 7.0]);
    }

    #[test]
    fn zero_advantage_gives_zero_policy_gradient() {
        let net = net();
        let obs = [vec![0.3, -0.2, 0.9], vec![0.1, 0.5, -0.4]];
        // Choose rewards so that every n-step return equals V(s).
        let v: Vec<f64> = obs.iter().map(|o| net.forward(o, None, 0, None).unwrap().value).collect();
        let gamma = 0.9;
        let bootstrap = 0.7;
        let r1 = v[1] - gamma * bootstrap;
        let r0 = v[0] - gamma * v[1];
        let batch = TransitionBatch {
            task: TaskId(0),
            steps: vec![
                Transition { observation: obs[0].clone(), action: 1, reward: r0, value: v[0] },
                Transition { observation: obs[1].clone(), action: 2, reward: r1, value: v[1] },
            ],
            bootstrap,
            initial_hidden: None,
        };
        let g = compute_gradient_terms(&net, &batch, weights(), &[Term::Policy]).unwrap();
        assert!(g.total.iter().all(|x| x.abs() < 1e-12), "{:?}", g.total);
    }

    #[test]
    fn entropy_term_vanishes_when_disabled() {
        let net = net();
        let batch = TransitionBatch {
            task: TaskId(0),
            steps: vec![Transition { observation: vec![1.0, 0.0, 0.0], action: 0, reward: 1.0, value: 0.0 }],
            bootstrap: 0.0,
            initial_hidden: None,
        };
        let w = LossWeights { entropy_beta: 0.0, ..weights() };
        let g = compute_gradient_terms(&net, &batch, w, &[Term::Entropy]).unwrap();
        assert!(g.total.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn terms_sum_to_total() {
        let net = net();
        let batch = TransitionBatch {
            task: TaskId(0),
            steps: vec![
                Transition { observation: vec![1.0, 0.2, 0.0], action: 0, reward: 1.0, value: 0.0 },
                Transition { observation: vec![0.0, 0.2, 1.0], action: 2, reward: -1.0, value: 0.0 },
            ],
            bootstrap: 0.3,
            initial_hidden: None,
        };
        let total = compute_gradients(&net, &batch, weights()).unwrap().total;
        let parts: Vec<Vec<f64>> = [Term::Policy, Term::Value, Term::Entropy]
            .iter()
            .map(|t| compute_gradient_terms(&net, &batch, weights(), &[*t]).unwrap().total)
            .collect();
        for i in 0..total.len() {
            let s = parts[0][i] + parts[1][i] + parts[2][i];
            assert!((s - total[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let net = net();
        let mut batch = TransitionBatch {
            task: TaskId(0),
            steps: vec![Transition { observation: vec![1.0, 0.0, 0.0], action: 0, reward: f64::NAN, value: 0.0 }],
            bootstrap: 0.0,
            initial_hidden: None,
        };
        assert!(matches!(
            compute_gradients(&net, &batch, weights()),
            Err(Error::NonFinite { step: 0, .. })
        ));
        batch.steps[0].reward = 0.0;
        batch.steps[0].observation.push(0.0);
        assert!(matches!(compute_gradients(&net, &batch, weights()), Err(Error::DimensionMismatch { .. })));
        batch.steps.clear();
        assert!(compute_gradients(&net, &batch, weights()).is_err());
    }
}
