//! Value iteration for the grid navigation family.

use super::TaskParams;
use crate::error::{Error, Result};

pub const GRID_ACTIONS: usize = 4;

const TOLERANCE: f64 = 1e-13;
const MAX_SWEEPS: usize = 1_000_000;

/// up, down, left, right; moves into a wall leave the agent in place.
pub(crate) fn apply_move(x: usize, y: usize, dir: usize, size: usize) -> (usize, usize) {
    match dir {
        0 => (x, y.saturating_sub(1)),
        1 => (x, (y + 1).min(size - 1)),
        2 => (x.saturating_sub(1), y),
        _ => ((x + 1).min(size - 1), y),
    }
}

/// Optimal state values and greedy actions of an undiscounted grid task.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSolution {
    size: usize,
    values: Vec<f64>,
    actions: Vec<usize>,
    pub sweeps: usize,
}

impl GridSolution {
    pub fn solve(params: &TaskParams) -> Result<Self> {
        let TaskParams::GridNav {
            size,
            goal,
            slip,
            step_cost,
            goal_reward,
        } = params
        else {
            return Err(Error::Domain("value iteration needs a grid task".into()));
        };
        let size = *size;
        let cell = |x: usize, y: usize| y * size + x;
        let goal_cell = cell(goal[0], goal[1]);
        let mut values = vec![0.0; size * size];

        let q = |values: &[f64], x: usize, y: usize, a: usize| -> f64 {
            let mut total = 0.0;
            for d in 0..GRID_ACTIONS {
                let p = slip / GRID_ACTIONS as f64 + if d == a { 1.0 - slip } else { 0.0 };
                if p == 0.0 {
                    continue;
                }
                let (nx, ny) = apply_move(x, y, d, size);
                let next = cell(nx, ny);
                let ret = if next == goal_cell {
                    goal_reward - step_cost
                } else {
                    -step_cost + values[next]
                };
                total += p * ret;
            }
            total
        };

        let mut sweeps = 0;
        loop {
            let mut delta: f64 = 0.0;
            for y in 0..size {
                for x in 0..size {
                    let c = cell(x, y);
                    if c == goal_cell {
                        continue;
                    }
                    let best = (0..GRID_ACTIONS)
                        .map(|a| q(&values, x, y, a))
                        .fold(f64::NEG_INFINITY, f64::max);
                    delta = delta.max((best - values[c]).abs());
                    values[c] = best;
                }
            }
            sweeps += 1;
            if delta < TOLERANCE {
                break;
            }
            if sweeps >= MAX_SWEEPS {
                return Err(Error::Domain("grid value iteration did not converge".into()));
            }
        }

        let mut actions = vec![0; size * size];
        for y in 0..size {
            for x in 0..size {
                let qs: Vec<f64> = (0..GRID_ACTIONS).map(|a| q(&values, x, y, a)).collect();
                let best = qs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                actions[cell(x, y)] = qs.iter().position(|&v| v >= best - 1e-12).unwrap_or(0);
            }
        }
        Ok(Self {
            size,
            values,
            actions,
            sweeps,
        })
    }

    pub fn value(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.size + x]
    }

    pub fn start_value(&self) -> f64 {
        self.value(0, 0)
    }

    pub fn best_action(&self, x: usize, y: usize) -> usize {
        self.actions[y * self.size + x]
    }
}
