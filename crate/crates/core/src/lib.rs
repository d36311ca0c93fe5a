pub mod bench;
pub mod chainfile;
pub mod data;
pub mod dgp;
pub mod error;
pub mod gauss;
pub mod gp;
pub mod kernel;
pub(crate) mod layer;
pub mod mh;
pub mod model;
pub mod moments;
pub mod settings;
pub mod vecchia;

pub use data::TrainingSet;
pub use error::{Error, Result};
pub use gp::{fit_gegp, fit_gp, predict_gegp, predict_gegp_all, predict_gp, predict_gp_all, GpChain};
pub use moments::{aggregate_moments, PosteriorMoments, PredictRequest};
pub use settings::{FitSettings, LatentMean, McmcSettings, ProposalWindow, ThetaPrior, WarpTransfer};
pub use dgp::{
    fit_dgp, fit_gedgp, init_latent, predict_dgp, predict_dgp_grad, predict_gedgp, predict_gedgp_grad, solve_chain,
    ChainDirection, DgpChain, DgpSample, LatentState,
};
pub use model::{fit_model, Chain, ModelKind};
