//! Compact optimization learning for AC optimal power flow.
//!
//! The crate covers the whole desk-scale pipeline: MATPOWER ingestion
//! ([`grid`]), AC-OPF evaluation ([`acopf`]), a primal-dual interior-point
//! solver with warm starts ([`ipm`]), dataset generation ([`datagen`]),
//! exact PCA spectra ([`spectra`]), the generalized Hebbian algorithm
//! ([`gha`]), a small MLP with Adam ([`net`]), compact and conventional
//! training ([`train`]), Newton power-flow restoration ([`restore`]) and the
//! warm-start benchmark ([`bench`]).

pub mod acopf;
pub mod bench;
pub mod datagen;
pub mod gha;
pub mod grid;
pub mod ipm;
pub mod linalg;
pub mod net;
pub mod restore;
pub mod scalar;
pub mod spectra;
pub mod train;

pub use scalar::Real;

pub type Mat64 = linalg::Mat<f64>;
pub type Mat32 = linalg::Mat<f32>;
pub type GhaState64 = gha::GhaState<f64>;
pub type GhaState32 = gha::GhaState<f32>;
pub type MlpModel64 = net::MlpModel<f64>;
pub type MlpModel32 = net::MlpModel<f32>;
pub type CompactModel64 = train::CompactModel<f64>;
pub type CompactModel32 = train::CompactModel<f32>;
pub type DirectModel64 = train::DirectModel<f64>;
pub type DirectModel32 = train::DirectModel<f32>;
