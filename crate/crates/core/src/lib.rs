//! Flow-based market coupling for zonal electricity markets.
//!
//! The crate clears a welfare-maximizing day-ahead auction over a zonal
//! division of a power grid, respecting inter-zonal line limits through a
//! PTDF/GSK flow model, and settles the result: zonal clearing prices,
//! social welfare with congestion rent, and a redispatch-cost bound that
//! corrects the welfare figure for intra-zonal overloads. Candidate
//! divisions are compared against a single-zone baseline.
//!
//! The numeric core is generic over the scalar type ([`scalar::Scalar`],
//! implemented for `f32` and `f64`); the aliases below fix `f64`, which is
//! what the CLI and the test suites use.

pub mod case_io;
pub mod dcflow;
pub mod market;
pub mod network;
pub mod pipeline;
pub mod qpsolve;
pub mod scalar;
pub mod settlement;
pub mod textfmt;

pub use scalar::Scalar;

/// Double-precision aliases for the main domain types.
pub type Network = network::Network<f64>;
pub type Bus = network::Bus<f64>;
pub type Branch = network::Branch<f64>;
pub type Generator = network::Generator<f64>;
pub type ZoneDivision = network::ZoneDivision;
pub type PtdfMatrix = dcflow::PtdfMatrix<f64>;
pub type GskMatrix = dcflow::GskMatrix<f64>;
pub type FlowVector = dcflow::FlowVector<f64>;
pub type Offer = market::Offer<f64>;
pub type OfferBook = market::OfferBook<f64>;
pub type CouplingSolution = market::CouplingSolution<f64>;
pub type QpProblem = qpsolve::QpProblem<f64>;
pub type QpSolution = qpsolve::QpSolution<f64>;
pub type SettlementReport = settlement::SettlementReport<f64>;
pub type EvalConfig = pipeline::EvalConfig<f64>;
pub type ComparisonTable = pipeline::ComparisonTable<f64>;
