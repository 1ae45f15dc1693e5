//! Scenario generation with principal component flows.
//!
//! A [`FlowModel`] is an affine-coupling normalizing flow, optionally composed
//! with an isometric PCA embedding so that it only models the leading
//! principal directions of the data. The crate covers the whole pipeline:
//! slicing raw series into scenarios ([`dataio`]), fitting the PCA head
//! ([`pca`]), likelihood training ([`train`]), sampling, persistence
//! ([`modelfile`]) and statistical comparison ([`eval`]).

pub mod conditioner;
pub mod dataio;
pub mod error;
pub mod eval;
pub mod flow;
pub mod linalg;
pub mod modelfile;
pub mod pca;
pub mod toy;
pub mod train;

pub use dataio::{ScenarioSet, Scaling, ScalingMode};
pub use error::{Error, ErrorClass, Result};
pub use flow::{FlowArch, FlowModel};
pub use pca::{PcaDecomposition, PcaMap, Truncation};
pub use train::{fit_fsnf, fit_pcf, TrainConfig, TrainLog};
