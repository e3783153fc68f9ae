use std::sync::Arc;

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{integer_ratio, Policy, ScenarioModel};
use crate::error::{invalid, Result};
use crate::linalg::all_finite;
use crate::rng::{rng_from_seed, SimRng};

/// Tree-search constants for double progressive widening.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DPWParams {
    pub n_queries: usize,
    pub depth: usize,
    pub c_ucb: f64,
    pub k_action: f64,
    pub alpha_action: f64,
    pub k_state: f64,
    pub alpha_state: f64,
    pub discount: f64,
}

impl Default for DPWParams {
    fn default() -> Self {
        Self {
            n_queries: 25,
            depth: 10,
            c_ucb: 1.0,
            k_action: 10.0,
            alpha_action: 0.5,
            k_state: 4.0,
            alpha_state: 0.25,
            discount: 0.99,
        }
    }
}

impl DPWParams {
    pub fn validate(&self) -> Result<()> {
        let unit = |a: f64| a > 0.0 && a < 1.0;
        if !unit(self.alpha_action) || !unit(self.alpha_state) {
            return Err(invalid("widening exponents must lie in (0, 1)"));
        }
        if !(self.k_action > 0.0) || !(self.k_state > 0.0) || self.depth == 0 || self.n_queries == 0 {
            return Err(invalid("widening constants, depth and query count must be positive"));
        }
        if !(self.discount > 0.0 && self.discount <= 1.0) || !(self.c_ucb >= 0.0) {
            return Err(invalid("discount must lie in (0, 1] and c_ucb must be nonnegative"));
        }
        Ok(())
    }
}

/// A generative model of a continuous-action MDP.
pub trait GenerativeModel {
    type State: Clone;
    /// A fresh candidate action for progressive widening.
    fn sample_action(&self, s: &Self::State, rng: &mut SimRng) -> DVector<f64>;
    /// Action of the default rollout policy; also the first action tried at a new node.
    fn rollout_action(&self, s: &Self::State) -> DVector<f64>;
    /// Next state and reward.
    fn step(&self, s: &Self::State, a: &DVector<f64>, rng: &mut SimRng) -> Result<(Self::State, f64)>;
    /// Value credited at the depth limit.
    fn terminal_value(&self, s: &Self::State) -> f64;
}

/// Value assigned to a branch whose simulation failed.
const FAILURE_VALUE: f64 = -1e12;

struct StateNode<S> {
    state: S,
    visits: u32,
    actions: Vec<usize>,
}

struct ActionNode {
    action: DVector<f64>,
    visits: u32,
    q: f64,
    /// (state node, reward, times sampled)
    children: Vec<(usize, f64, u32)>,
}

fn widening_limit(k: f64, visits: u32, alpha: f64) -> usize {
    (k * (visits as f64).powf(alpha)).ceil() as usize
}

/// Search tree of one planning call.
pub struct DpwTree<'a, M: GenerativeModel> {
    model: &'a M,
    params: &'a DPWParams,
    states: Vec<StateNode<M::State>>,
    actions: Vec<ActionNode>,
}

impl<'a, M: GenerativeModel> DpwTree<'a, M> {
    pub fn new(model: &'a M, params: &'a DPWParams, root: M::State) -> Self {
        Self {
            model,
            params,
            states: vec![StateNode { state: root, visits: 0, actions: Vec::new() }],
            actions: Vec::new(),
        }
    }

    pub fn run(&mut self, rng: &mut SimRng) {
        for _ in 0..self.params.n_queries {
            self.simulate(0, self.params.depth, rng);
        }
    }

    /// Most visited root action; ties go to the higher mean value, then to the earlier child.
    pub fn best_action(&self) -> DVector<f64> {
        let root = &self.states[0];
        let mut best: Option<&ActionNode> = None;
        for &a in &root.actions {
            let node = &self.actions[a];
            if best.map_or(true, |b| node.visits > b.visits || (node.visits == b.visits && node.q > b.q)) {
                best = Some(node);
            }
        }
        match best {
            Some(node) => node.action.clone(),
            None => self.model.rollout_action(&root.state),
        }
    }

    /// Whether every node respects its widening limit.
    pub fn widening_respected(&self) -> bool {
        let p = self.params;
        self.states
            .iter()
            .all(|s| s.actions.len() <= widening_limit(p.k_action, s.visits, p.alpha_action).max(0))
            && self
                .actions
                .iter()
                .all(|a| a.children.len() <= widening_limit(p.k_state, a.visits, p.alpha_state))
    }

    pub fn root_visits(&self) -> u32 {
        self.states[0].visits
    }

    fn simulate(&mut self, s: usize, depth: usize, rng: &mut SimRng) -> f64 {
        if depth == 0 {
            return self.model.terminal_value(&self.states[s].state);
        }
        let p = self.params;
        self.states[s].visits += 1;
        let visits = self.states[s].visits;
        if self.states[s].actions.len() < widening_limit(p.k_action, visits, p.alpha_action) {
            let state = &self.states[s].state;
            let action = if self.states[s].actions.is_empty() {
                self.model.rollout_action(state)
            } else {
                self.model.sample_action(state, rng)
            };
            self.actions.push(ActionNode { action, visits: 0, q: 0.0, children: Vec::new() });
            let id = self.actions.len() - 1;
            self.states[s].actions.push(id);
        }
        let a = self.select(s);
        self.actions[a].visits += 1;
        let a_visits = self.actions[a].visits;
        let q = if self.actions[a].children.len() < widening_limit(p.k_state, a_visits, p.alpha_state) {
            let action = self.actions[a].action.clone();
            match self.model.step(&self.states[s].state, &action, rng) {
                Ok((next, reward)) => {
                    let value = reward + p.discount * self.rollout(&next, depth - 1, rng);
                    self.states.push(StateNode { state: next, visits: 0, actions: Vec::new() });
                    let id = self.states.len() - 1;
                    self.actions[a].children.push((id, reward, 1));
                    value
                }
                Err(_) => FAILURE_VALUE,
            }
        } else {
            let total: u32 = self.actions[a].children.iter().map(|c| c.2).sum();
            let mut pick = rng.random_range(0..total);
            let mut idx = 0;
            for (i, c) in self.actions[a].children.iter().enumerate() {
                if pick < c.2 {
                    idx = i;
                    break;
                }
                pick -= c.2;
            }
            self.actions[a].children[idx].2 += 1;
            let (child, reward, _) = self.actions[a].children[idx];
            reward + p.discount * self.simulate(child, depth - 1, rng)
        };
        let node = &mut self.actions[a];
        node.q += (q - node.q) / node.visits as f64;
        q
    }

    fn select(&self, s: usize) -> usize {
        let node = &self.states[s];
        let ln_n = (node.visits as f64).ln();
        let mut best = node.actions[0];
        let mut best_score = f64::NEG_INFINITY;
        for &a in &node.actions {
            let an = &self.actions[a];
            let score = if an.visits == 0 {
                f64::INFINITY
            } else {
                an.q + self.params.c_ucb * (ln_n / an.visits as f64).sqrt()
            };
            if score > best_score {
                best = a;
                best_score = score;
            }
        }
        best
    }

    fn rollout(&self, s: &M::State, depth: usize, rng: &mut SimRng) -> f64 {
        let mut state = s.clone();
        let mut total = 0.0;
        let mut weight = 1.0;
        for _ in 0..depth {
            let a = self.model.rollout_action(&state);
            match self.model.step(&state, &a, rng) {
                Ok((next, r)) => {
                    total += weight * r;
                    state = next;
                }
                Err(_) => return total + weight * FAILURE_VALUE,
            }
            weight *= self.params.discount;
        }
        total + weight * self.model.terminal_value(&state)
    }
}

/// The belief-space problem as a generative model stepping one observation interval at a time:
/// reward is minus the running cost over the interval, the terminal value is minus `h`.
pub struct BeliefMdp<'a> {
    pub model: &'a dyn ScenarioModel,
    pub dt_ctrl: f64,
    pub steps_per_obs: usize,
    /// Closed-loop rollout policy; zero control when `None`.
    pub rollout: Option<Arc<dyn Policy>>,
}

impl<'a> BeliefMdp<'a> {
    pub fn new(
        model: &'a dyn ScenarioModel,
        dt_ctrl: f64,
        dt_obs: f64,
        rollout: Option<Arc<dyn Policy>>,
    ) -> Result<Self> {
        let steps_per_obs = integer_ratio(dt_obs, dt_ctrl)
            .filter(|&s| s > 0)
            .ok_or_else(|| invalid("observation interval is not a multiple of the control step"))?;
        Ok(Self { model, dt_ctrl, steps_per_obs, rollout })
    }

    fn advance(
        &self,
        x: &DVector<f64>,
        mut control: impl FnMut(&DVector<f64>) -> DVector<f64>,
        rng: &mut SimRng,
    ) -> Result<(DVector<f64>, f64)> {
        let mut z = x.clone();
        let mut cost = 0.0;
        for _ in 0..self.steps_per_obs {
            let u = control(&z);
            cost += self.dt_ctrl * self.model.running_cost(&z, &u);
            z += self.model.flow(&z, &u) * self.dt_ctrl;
        }
        if !all_finite(&z) || !cost.is_finite() {
            return Err(crate::error::SacbpError::NonFinite("tree-search step"));
        }
        let y = self.model.sample_observation(&z, rng);
        Ok((self.model.jump(&z, &y)?, -cost))
    }
}

impl GenerativeModel for BeliefMdp<'_> {
    type State = DVector<f64>;

    fn sample_action(&self, _s: &DVector<f64>, rng: &mut SimRng) -> DVector<f64> {
        let b = self.model.control_box();
        DVector::from_fn(b.dim(), |i, _| {
            let (lo, hi) = (b.lo()[i], b.hi()[i]);
            if hi > lo {
                rng.random_range(lo..hi)
            } else {
                lo
            }
        })
    }

    fn rollout_action(&self, s: &DVector<f64>) -> DVector<f64> {
        match &self.rollout {
            Some(pi) => self.model.control_box().clamp(&pi.control(s)),
            None => DVector::zeros(self.model.control_dim()),
        }
    }

    fn step(&self, s: &DVector<f64>, a: &DVector<f64>, rng: &mut SimRng) -> Result<(DVector<f64>, f64)> {
        self.advance(s, |_| a.clone(), rng)
    }

    fn terminal_value(&self, s: &DVector<f64>) -> f64 {
        -self.model.terminal_cost(s)
    }
}

/// Runs the search from `root` and returns the most visited root action.
pub fn mcts_dpw_search<M: GenerativeModel>(model: &M, root: M::State, params: &DPWParams, seed: u64) -> DVector<f64> {
    let mut rng = rng_from_seed(seed);
    let mut tree = DpwTree::new(model, params, root);
    tree.run(&mut rng);
    tree.best_action()
}

/// MCTS-DPW in belief space for one observation interval.
pub fn mcts_dpw_plan(
    x: &DVector<f64>,
    model: &dyn ScenarioModel,
    dt_ctrl: f64,
    dt_obs: f64,
    rollout: Option<Arc<dyn Policy>>,
    params: &DPWParams,
    seed: u64,
) -> Result<DVector<f64>> {
    params.validate()?;
    let mdp = BeliefMdp::new(model, dt_ctrl, dt_obs, rollout)?;
    let u = mcts_dpw_search(&mdp, x.clone(), params, seed);
    Ok(model.control_box().clamp(&u))
}
