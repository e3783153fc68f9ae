//! Comparison planners and nominal policies: one-step greedy descent on the terminal cost,
//! tree search with double progressive widening, and a pose controller for manipulation.

mod greedy;
mod mcts;
mod position;

pub use greedy::{greedy_control, greedy_gradient, greedy_objective, GreedyParams};
pub use mcts::{
    mcts_dpw_plan, mcts_dpw_search, BeliefMdp, DPWParams, DpwTree, GenerativeModel,
};
pub use position::{position_controller, PositionController, PositionGains};
