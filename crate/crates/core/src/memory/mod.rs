//! Episodic memory of past-task examples and their recorded logits.

mod budget;
mod select;
mod store;

pub use budget::{
    ewc_equivalent_budget, ewc_equivalent_budget_with, parse_param_spec, BudgetReport, MemoryBudget, StorageMode,
    CIFAR10_VGG, MNIST_MLP,
};
pub use select::{
    example_gradient_norms, select_gradient_based, select_herding, select_herding_stratified,
    select_stratified_random, GradientProbe, SelectionStrategy,
};
pub use store::{record_logits, EpisodicMemory, MemoryEntry};
