//! Neural-field multi-robot rescue planning.
//!
//! A grid world is mirrored by a lattice of shunting neurons. Targets inject
//! excitation that spreads over the whole lattice and obstacles inject local
//! inhibition, so robots can climb the activity landscape to their targets.
//! While robots move, turning points of their trajectories are distilled into
//! a sparse set of feature neurons whose pairwise clear-line distances form a
//! feature matrix. Once the feature set represents every free cell, new
//! queries are answered by a shortest-path search over that matrix instead of
//! by re-propagating activity.

pub mod environment;
pub mod export;
pub mod feature_learning;
pub mod grid;
pub mod heuristic_planner;
pub mod navigation;
pub mod scenario;
pub mod sim;
pub mod neural_field;

pub use environment::{Environment, Obstacle, ObstacleKind, ObstacleShape, Pose, RobotState, Target, TargetStatus};
pub use grid::{Cell, GridSpec, Point};
pub use neural_field::{NeuralField, ShuntingParams};
