use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::RngStream;

/// Row/column cell coordinate.
pub type Pos = (usize, usize);

/// Number of object classes: (positive, negative) x (terminal, non-terminal).
pub const OBJECT_CLASSES: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridObject {
    pub pos: Pos,
    pub reward: f64,
    pub terminal: bool,
    /// A respawning object stays live after collection and pays again the
    /// next time the agent enters its cell.
    pub respawn: bool,
}

impl GridObject {
    pub fn class(&self) -> usize {
        match (self.reward >= 0.0, self.terminal) {
            (true, true) => 0,
            (true, false) => 1,
            (false, true) => 2,
            (false, false) => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentStart {
    Fixed(Pos),
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridworldSpec {
    pub grid_size: usize,
    pub objects: Vec<GridObject>,
    pub max_episode_steps: usize,
    pub agent_start: AgentStart,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridState {
    pub pos: Pos,
    pub live: Vec<bool>,
    pub steps: usize,
}

impl GridworldSpec {
    pub fn validate(&self) -> Result<()> {
        if self.grid_size == 0 {
            return Err(Error::Config("grid_size must be >= 1".into()));
        }
        if self.max_episode_steps == 0 {
            return Err(Error::Config("max_episode_steps must be >= 1".into()));
        }
        for (i, o) in self.objects.iter().enumerate() {
            if o.pos.0 >= self.grid_size || o.pos.1 >= self.grid_size {
                return Err(Error::Config(format!("object {i} at {:?} is outside the grid", o.pos)));
            }
            if self.objects[..i].iter().any(|p| p.pos == o.pos) {
                return Err(Error::Config(format!("object {i} shares cell {:?}", o.pos)));
            }
            if !o.reward.is_finite() {
                return Err(Error::Config(format!("object {i} has a non-finite reward")));
            }
        }
        if let AgentStart::Fixed(p) = self.agent_start {
            if p.0 >= self.grid_size || p.1 >= self.grid_size {
                return Err(Error::Config(format!("agent start {p:?} is outside the grid")));
            }
        }
        if self.objects.len() >= self.grid_size * self.grid_size {
            return Err(Error::Config("no free cell left for the agent".into()));
        }
        Ok(())
    }

    pub fn obs_dim(&self) -> usize {
        (1 + OBJECT_CLASSES) * self.grid_size * self.grid_size
    }

    pub fn write_obs(&self, state: &GridState, obs: &mut [f64]) {
        let n = self.grid_size;
        obs.fill(0.0);
        obs[state.pos.0 * n + state.pos.1] = 1.0;
        for (o, &live) in self.objects.iter().zip(&state.live) {
            if live {
                obs[(1 + o.class()) * n * n + o.pos.0 * n + o.pos.1] = 1.0;
            }
        }
    }

    pub fn reset(&self, rng: &mut RngStream) -> GridState {
        let pos = match self.agent_start {
            AgentStart::Fixed(p) => p,
            AgentStart::Random => {
                let free: Vec<Pos> = (0..self.grid_size)
                    .flat_map(|r| (0..self.grid_size).map(move |c| (r, c)))
                    .filter(|p| self.objects.iter().all(|o| o.pos != *p))
                    .collect();
                free[rng.index(free.len())]
            }
        };
        GridState {
            pos,
            live: vec![true; self.objects.len()],
            steps: 0,
        }
    }

    /// Actions 0..4 are north, east, south, west. Moving off the grid leaves
    /// the agent in place.
    pub fn step(&self, state: &mut GridState, action: usize) -> Result<(f64, bool)> {
        let (r, c) = state.pos;
        let n = self.grid_size;
        let next = match action {
            0 => (r.saturating_sub(1), c),
            1 => (r, (c + 1).min(n - 1)),
            2 => ((r + 1).min(n - 1), c),
            3 => (r, c.saturating_sub(1)),
            _ => {
                return Err(Error::InvalidAction {
                    action,
                    n_actions: 4,
                })
            }
        };
        state.steps += 1;
        let mut reward = 0.0;
        let mut done = false;
        if next != state.pos {
            state.pos = next;
            for (o, live) in self.objects.iter().zip(state.live.iter_mut()) {
                if *live && o.pos == next {
                    reward += o.reward;
                    if o.terminal {
                        done = true;
                    }
                    if !o.respawn {
                        *live = false;
                    }
                }
            }
        }
        if state.steps >= self.max_episode_steps {
            done = true;
        }
        Ok((reward, done))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridGenParams {
    pub size_min: usize,
    pub size_max: usize,
    pub objects_min: usize,
    pub objects_max: usize,
    pub rewards: Vec<f64>,
    pub episode_cap: usize,
    pub terminal_prob: f64,
    pub respawn_prob: f64,
    #[serde(default)]
    pub random_start: bool,
}

impl GridGenParams {
    /// Meta-training distribution.
    pub fn in_distribution() -> Self {
        Self {
            size_min: 5,
            size_max: 9,
            objects_min: 2,
            objects_max: 4,
            rewards: vec![-1.0, 1.0],
            episode_cap: 50,
            terminal_prob: 0.5,
            respawn_prob: 0.5,
            random_start: false,
        }
    }

    /// Held-out distribution: larger grids, fewer objects, longer episodes.
    pub fn out_of_distribution() -> Self {
        Self {
            size_min: 11,
            size_max: 13,
            objects_min: 1,
            objects_max: 2,
            rewards: vec![-1.0, 1.0],
            episode_cap: 100,
            terminal_prob: 0.5,
            respawn_prob: 0.5,
            random_start: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.size_min == 0 || self.size_min > self.size_max {
            return Err(Error::Config(format!(
                "invalid grid size range {}..={}",
                self.size_min, self.size_max
            )));
        }
        if self.objects_min == 0 || self.objects_min > self.objects_max {
            return Err(Error::Config(format!(
                "invalid object count range {}..={}",
                self.objects_min, self.objects_max
            )));
        }
        if self.objects_max >= self.size_min * self.size_min {
            return Err(Error::Config(format!(
                "{} objects do not fit in a {}x{} grid with room for the agent",
                self.objects_max, self.size_min, self.size_min
            )));
        }
        if self.rewards.is_empty() || self.rewards.iter().any(|r| !r.is_finite()) {
            return Err(Error::Config("reward set must be non-empty and finite".into()));
        }
        if !self.rewards.iter().any(|r| *r > 0.0) {
            return Err(Error::Config("reward set needs a positive reward".into()));
        }
        if self.episode_cap == 0 {
            return Err(Error::Config("episode_cap must be >= 1".into()));
        }
        for (name, p) in [("terminal_prob", self.terminal_prob), ("respawn_prob", self.respawn_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        Ok(())
    }

    /// Draw one gridworld. The first object always carries the largest
    /// reward so every instance has something worth reaching.
    pub fn sample(&self, rng: &mut RngStream) -> Result<GridworldSpec> {
        self.validate()?;
        let size = rng.int_inclusive(self.size_min, self.size_max);
        let n_obj = rng.int_inclusive(self.objects_min, self.objects_max);
        let mut cells: Vec<Pos> = (0..size).flat_map(|r| (0..size).map(move |c| (r, c))).collect();
        rng.shuffle(&mut cells);
        let best = self.rewards.iter().cloned().fold(f64::MIN, f64::max);
        let objects = (0..n_obj)
            .map(|i| {
                let reward = if i == 0 {
                    best
                } else {
                    self.rewards[rng.index(self.rewards.len())]
                };
                let terminal = rng.bernoulli(self.terminal_prob);
                let respawn = !terminal && rng.bernoulli(self.respawn_prob);
                GridObject {
                    pos: cells[i],
                    reward,
                    terminal,
                    respawn,
                }
            })
            .collect();
        let agent_start = if self.random_start {
            AgentStart::Random
        } else {
            AgentStart::Fixed(cells[n_obj])
        };
        let spec = GridworldSpec {
            grid_size: size,
            objects,
            max_episode_steps: self.episode_cap,
            agent_start,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn simple() -> GridworldSpec {
        GridworldSpec {
            grid_size: 3,
            objects: vec![
                GridObject {
                    pos: (0, 1),
                    reward: 1.0,
                    terminal: true,
                    respawn: false,
                },
                GridObject {
                    pos: (2, 2),
                    reward: -1.0,
                    terminal: false,
                    respawn: true,
                },
            ],
            max_episode_steps: 5,
            agent_start: AgentStart::Fixed((0, 0)),
        }
    }

    #[test]
    fn terminal_positive_object() {
        let g = simple();
        let mut s = g.reset(&mut RngStream::new(0, 0));
        let (r, done) = g.step(&mut s, 1).unwrap();
        assert_eq!(r, 1.0);
        assert!(done);
    }

    #[test]
    fn walls_absorb() {
        let g = simple();
        let mut s = g.reset(&mut RngStream::new(0, 0));
        let (r, done) = g.step(&mut s, 0).unwrap();
        assert_eq!((s.pos, r, done), ((0, 0), 0.0, false));
        g.step(&mut s, 3).unwrap();
        assert_eq!(s.pos, (0, 0));
    }

    #[test]
    fn step_cap_ends_episode() {
        let g = simple();
        let mut s = g.reset(&mut RngStream::new(0, 0));
        for i in 0..5 {
            let (_, done) = g.step(&mut s, 3).unwrap();
            assert_eq!(done, i == 4);
        }
    }

    #[test]
    fn respawning_object_pays_on_each_entry() {
        let mut g = simple();
        g.agent_start = AgentStart::Fixed((2, 1));
        g.max_episode_steps = 50;
        let mut s = g.reset(&mut RngStream::new(0, 0));
        assert_eq!(g.step(&mut s, 1).unwrap().0, -1.0);
        // bumping the wall while standing on it does not pay again
        assert_eq!(g.step(&mut s, 1).unwrap().0, 0.0);
        assert_eq!(g.step(&mut s, 3).unwrap().0, 0.0);
        assert_eq!(g.step(&mut s, 1).unwrap().0, -1.0);
        assert!(s.live[1]);
    }

    #[test]
    fn invalid_action() {
        let g = simple();
        let mut s = g.reset(&mut RngStream::new(0, 0));
        assert!(matches!(g.step(&mut s, 4), Err(Error::InvalidAction { .. })));
    }

    #[test]
    fn observation_planes() {
        let g = simple();
        let s = g.reset(&mut RngStream::new(0, 0));
        let mut obs = vec![0.0; g.obs_dim()];
        g.write_obs(&s, &mut obs);
        assert_eq!(obs.iter().sum::<f64>(), 3.0);
        assert_eq!(obs[0], 1.0);
        // class 0 plane (positive terminal) at (0, 1)
        assert_eq!(obs[9 + 1], 1.0);
        // class 3 plane (negative non-terminal) at (2, 2)
        assert_eq!(obs[4 * 9 + 8], 1.0);
    }

    #[test]
    fn too_many_objects_is_config_error() {
        let mut p = GridGenParams::in_distribution();
        p.size_min = 2;
        p.size_max = 2;
        p.objects_max = 5;
        assert!(matches!(p.sample(&mut RngStream::new(0, 0)), Err(Error::Config(_))));
    }

    #[test]
    fn spec_json_roundtrip() {
        let g = simple();
        let text = serde_json::to_string_pretty(&g).unwrap();
        let back: GridworldSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(g, back);
    }
}
