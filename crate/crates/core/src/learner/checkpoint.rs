use std::path::Path;

use serde::{Deserialize, Serialize};

use super::net::{ActorCriticNet, NetShape};
use super::optim::RmsProp;
use super::train::Learner;
use super::LearnerConfig;
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Serialised learner: parameters, optimiser accumulators and step counters.
/// Floats are written in shortest round-trip form, so loading is bit-exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub shape: NetShape,
    pub config: LearnerConfig,
    pub steps: u64,
    pub updates: u64,
    pub total_steps: u64,
    pub params: Vec<f64>,
    pub accumulators: Vec<f64>,
}

impl Checkpoint {
    pub fn of(learner: &Learner) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            shape: learner.net.shape().clone(),
            config: learner.config().clone(),
            steps: learner.steps,
            updates: learner.updates,
            total_steps: learner.schedule.total_steps,
            params: learner.net.params().to_vec(),
            accumulators: learner.optimizer.accum.clone(),
        }
    }

    pub fn restore(self) -> Result<Learner> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        let net = ActorCriticNet::from_params(self.shape, self.params)?;
        if self.accumulators.len() != net.len() {
            return Err(Error::DimensionMismatch {
                expected: net.len(),
                got: self.accumulators.len(),
            });
        }
        let mut learner = Learner::from_net(self.config, net, self.total_steps);
        learner.optimizer = RmsProp {
            accum: self.accumulators,
            ..learner.optimizer
        };
        learner.steps = self.steps;
        learner.updates = self.updates;
        Ok(learner)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::preset;
    use crate::learner::TaskSlot;
    use crate::rng::{stream, Stream};
    use crate::task::TaskId;

    #[test]
    fn restore_continues_training_bit_exactly() {
        let inst = preset("syn6").unwrap();
        let mut a = Learner::new(LearnerConfig::default(), &inst, 5_000, &mut stream(3, Stream::LearnerInit));
        let mut slot = TaskSlot::new(&inst, TaskId(1), stream(3, Stream::Train(1))).unwrap();
        a.train_for_one_episode(&mut slot).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        Checkpoint::of(&a).save(&path).unwrap();
        let mut b = Checkpoint::load(&path).unwrap().restore().unwrap();
        assert_eq!(a, b);

        let mut sa = TaskSlot::new(&inst, TaskId(4), stream(9, Stream::Train(4))).unwrap();
        let mut sb = sa.clone();
        a.train_for_one_episode(&mut sa).unwrap();
        b.train_for_one_episode(&mut sb).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_other_versions() {
        let inst = preset("syn6").unwrap();
        let l = Learner::new(LearnerConfig::default(), &inst, 10, &mut stream(3, Stream::LearnerInit));
        let mut c = Checkpoint::of(&l);
        c.version = 99;
        assert!(c.restore().is_err());
    }
}
