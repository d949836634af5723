//! Regression trees: structure, cutpoint grids, the depth-decaying structure
//! prior, and the grow/prune/change proposal kernel.

mod cutpoints;
mod prior;
mod proposal;
mod tree;

pub use cutpoints::{BinnedDesign, CutpointGrid, DEFAULT_CUTS};
pub use prior::{log_prior_with_layout, log_tree_structure_prior, tree_is_valid, MoveProbs, TreeLayout, TreePriorConfig};
pub use proposal::{move_type_probabilities, propose_move, Membership, MoveKind, MoveOutcome, Proposal};
pub use tree::{evaluate_tree, LeafPayload, RegressionTree, SplitRule, TreeRepr, ROOT};
