use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::RngStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CartPoleSpec {
    pub gravity: f64,
    pub cart_mass: f64,
    pub pole_mass: f64,
    pub half_length: f64,
    pub force_mag: f64,
    pub tau: f64,
    pub x_limit: f64,
    pub theta_limit: f64,
    pub max_episode_steps: usize,
}

impl Default for CartPoleSpec {
    fn default() -> Self {
        Self {
            gravity: 9.8,
            cart_mass: 1.0,
            pole_mass: 0.1,
            half_length: 0.5,
            force_mag: 10.0,
            tau: 0.02,
            x_limit: 2.4,
            theta_limit: 12.0 * 2.0 * std::f64::consts::PI / 360.0,
            max_episode_steps: 500,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CartPoleState {
    pub x: f64,
    pub x_dot: f64,
    pub theta: f64,
    pub theta_dot: f64,
    pub steps: usize,
}

impl CartPoleState {
    pub fn as_array(&self) -> [f64; 4] {
        [self.x, self.x_dot, self.theta, self.theta_dot]
    }
}

impl CartPoleSpec {
    pub const OBS_DIM: usize = 4;

    pub fn reset(&self, rng: &mut RngStream) -> CartPoleState {
        let mut u = || rng.uniform_range(-0.05, 0.05);
        CartPoleState {
            x: u(),
            x_dot: u(),
            theta: u(),
            theta_dot: u(),
            steps: 0,
        }
    }

    /// One explicit Euler step. Action 1 pushes right, 0 pushes left.
    pub fn step(&self, s: &mut CartPoleState, action: usize) -> Result<(f64, bool)> {
        let force = match action {
            0 => -self.force_mag,
            1 => self.force_mag,
            _ => {
                return Err(Error::InvalidAction {
                    action,
                    n_actions: 2,
                })
            }
        };
        let total_mass = self.cart_mass + self.pole_mass;
        let pml = self.pole_mass * self.half_length;
        let (sin, cos) = s.theta.sin_cos();
        let temp = (force + pml * s.theta_dot * s.theta_dot * sin) / total_mass;
        let theta_acc = (self.gravity * sin - cos * temp)
            / (self.half_length * (4.0 / 3.0 - self.pole_mass * cos * cos / total_mass));
        let x_acc = temp - pml * theta_acc * cos / total_mass;
        s.x += self.tau * s.x_dot;
        s.x_dot += self.tau * x_acc;
        s.theta += self.tau * s.theta_dot;
        s.theta_dot += self.tau * theta_acc;
        s.steps += 1;
        let fell = s.x.abs() > self.x_limit || s.theta.abs() > self.theta_limit;
        Ok((1.0, fell || s.steps >= self.max_episode_steps))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reset_in_box() {
        let c = CartPoleSpec::default();
        let mut rng = RngStream::new(4, 0);
        for _ in 0..100 {
            let s = c.reset(&mut rng);
            assert!(s.as_array().iter().all(|v| v.abs() <= 0.05));
        }
    }

    #[test]
    fn constant_push_topples() {
        let c = CartPoleSpec::default();
        for action in 0..2 {
            let mut s = c.reset(&mut RngStream::new(1, action as u64));
            let mut n = 0;
            loop {
                n += 1;
                if c.step(&mut s, action).unwrap().1 {
                    break;
                }
            }
            assert!(n < 100, "took {n} steps");
        }
    }

    #[test]
    fn bad_action() {
        let c = CartPoleSpec::default();
        let mut s = c.reset(&mut RngStream::new(0, 0));
        assert!(c.step(&mut s, 2).is_err());
    }
}
