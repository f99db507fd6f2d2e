//! Stage layouts, auxiliary heads and trainable stages.

pub mod network;
pub mod spec;
pub mod stage;

pub use spec::{
    aux_ratios, balanced_cuts, build_aux, build_cifar6, build_classifier, build_head, build_mlp, split,
    validate_chain, AuxKind, AuxRatios, ClassifierKind, HeadSpec, StageSpec,
};
pub use network::Network;
pub use stage::{instantiate, GreedyStage, LocalGrad};
