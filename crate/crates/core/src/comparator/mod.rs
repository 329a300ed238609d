//! Pairwise comparator network: which of two designs is better on each spec.

mod layers;
mod net;
mod train;

pub use layers::{Dense, SymmetricLayer};
pub use net::{
    ComparatorNet, CompiledGrad, CompiledNet, Head, LayerDump, LayerKind, NetCheckpoint, NetShape, PairMasks,
    NET_FORMAT, NET_FORMAT_VERSION,
};
pub use train::{make_pairs, subsample, train, PairExample, TrainConfig};
