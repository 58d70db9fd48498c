//! Cart-Pole physics: Barto et al. dynamics, explicit Euler, 12° / 2.4 m
//! termination and a 200-step episode cap.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CartPoleConfig {
    pub gravity: f64,
    pub cart_mass: f64,
    pub pole_mass: f64,
    /// Half the pole length.
    pub half_pole_length: f64,
    pub force: f64,
    pub dt: f64,
    pub theta_threshold: f64,
    pub x_threshold: f64,
    pub max_steps: usize,
    /// Half-width of the uniform box initial states are drawn from.
    pub reset_bound: f64,
}

impl Default for CartPoleConfig {
    fn default() -> Self {
        Self {
            gravity: 9.8,
            cart_mass: 1.0,
            pole_mass: 0.1,
            half_pole_length: 0.5,
            force: 10.0,
            dt: 0.02,
            theta_threshold: 12.0 * std::f64::consts::PI / 180.0,
            x_threshold: 2.4,
            max_steps: 200,
            reset_bound: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CartState {
    pub x: f64,
    pub x_dot: f64,
    pub theta: f64,
    pub theta_dot: f64,
}

impl CartState {
    pub fn new(x: f64, x_dot: f64, theta: f64, theta_dot: f64) -> Self {
        Self {
            x,
            x_dot,
            theta,
            theta_dot,
        }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x, self.x_dot, self.theta, self.theta_dot]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Left,
    Right,
}

impl Action {
    pub fn index(self) -> usize {
        match self {
            Action::Left => 0,
            Action::Right => 1,
        }
    }

    pub fn from_index(i: usize) -> Self {
        if i == 0 {
            Action::Left
        } else {
            Action::Right
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub next: CartState,
    pub reward: f64,
    pub terminal: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrajectoryStep {
    pub t: usize,
    pub x: f64,
    pub x_dot: f64,
    pub theta: f64,
    pub theta_dot: f64,
    pub action: Action,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub steps_survived: usize,
    pub trajectory: Option<Vec<TrajectoryStep>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CartPole {
    pub config: CartPoleConfig,
}

impl CartPole {
    pub fn new(config: CartPoleConfig) -> Self {
        Self { config }
    }

    pub fn reset(&self, rng: &mut Rng) -> CartState {
        let b = self.config.reset_bound;
        let mut draw = || rng.uniform_range(-b, b);
        CartState::new(draw(), draw(), draw(), draw())
    }

    /// Terminal under the configured thresholds.
    pub fn is_terminal(&self, s: &CartState) -> bool {
        self.is_terminal_with(s, self.config.theta_threshold)
    }

    pub fn is_terminal_with(&self, s: &CartState, theta_threshold: f64) -> bool {
        s.x.abs() > self.config.x_threshold || s.theta.abs() > theta_threshold
    }

    /// One Euler step. Stepping from a terminal state is a contract violation.
    pub fn step(&self, s: &CartState, action: Action) -> Result<Transition> {
        if self.is_terminal(s) || !s.is_finite() {
            return Err(Error::contract(format!("cannot step from terminal state {s:?}")));
        }
        let next = self.integrate(s, action);
        Ok(Transition {
            next,
            reward: 1.0,
            terminal: self.is_terminal(&next),
        })
    }

    fn integrate(&self, s: &CartState, action: Action) -> CartState {
        let c = &self.config;
        let force = match action {
            Action::Right => c.force,
            Action::Left => -c.force,
        };
        let total_mass = c.cart_mass + c.pole_mass;
        let pole_mass_length = c.pole_mass * c.half_pole_length;
        let (sin, cos) = s.theta.sin_cos();
        let temp = (force + pole_mass_length * s.theta_dot * s.theta_dot * sin) / total_mass;
        let theta_acc = (c.gravity * sin - cos * temp)
            / (c.half_pole_length * (4.0 / 3.0 - c.pole_mass * cos * cos / total_mass));
        let x_acc = temp - pole_mass_length * theta_acc * cos / total_mass;
        CartState {
            x: s.x + c.dt * s.x_dot,
            x_dot: s.x_dot + c.dt * x_acc,
            theta: s.theta + c.dt * s.theta_dot,
            theta_dot: s.theta_dot + c.dt * theta_acc,
        }
    }

    /// Runs one episode from a fresh reset with the default step cap.
    pub fn run_episode<P>(&self, policy: P, rng: &mut Rng) -> EpisodeResult
    where
        P: FnMut(&CartState) -> Action,
    {
        self.rollout(policy, rng, self.config.max_steps, false)
    }

    /// Runs one episode, optionally recording every (state, action, reward).
    pub fn rollout<P>(&self, mut policy: P, rng: &mut Rng, max_steps: usize, record: bool) -> EpisodeResult
    where
        P: FnMut(&CartState) -> Action,
    {
        let mut state = self.reset(rng);
        let mut trajectory = record.then(Vec::new);
        let mut steps = 0;
        while steps < max_steps {
            let action = policy(&state);
            let next = self.integrate(&state, action);
            if let Some(tr) = trajectory.as_mut() {
                tr.push(TrajectoryStep {
                    t: steps,
                    x: state.x,
                    x_dot: state.x_dot,
                    theta: state.theta,
                    theta_dot: state.theta_dot,
                    action,
                    reward: 1.0,
                });
            }
            steps += 1;
            if self.is_terminal(&next) {
                break;
            }
            state = next;
        }
        EpisodeResult {
            steps_survived: steps,
            trajectory,
        }
    }
}

/// Writes one JSON object per step.
pub fn write_trajectory_jsonl<W: Write>(mut out: W, steps: &[TrajectoryStep]) -> Result<()> {
    for step in steps {
        serde_json::to_writer(&mut out, step)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
