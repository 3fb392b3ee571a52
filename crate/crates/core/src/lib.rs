//! Regularized optimism (ROFU) for contextual bandits.
//!
//! The optimistic estimate of an arm is obtained by maximizing
//! `f_theta(x, a) - eta * R(theta; D)` from the current fit and turning the
//! improvement over the fit into a bonus. This crate provides the models,
//! the gradient-ascent estimator and its closed forms (UCB1, LinUCB,
//! KernelUCB, linearized NTK), baseline agents, environments and a seeded
//! regret harness.

pub mod baselines;
pub mod config;
pub mod envs;
pub mod harness;
pub mod linalg;
pub mod models;
pub mod rofu;
pub mod seeding;
pub mod verify;
