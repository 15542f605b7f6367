pub mod codebook;
pub mod corpus;
pub mod rng;
pub mod scalar;
pub mod parsing;
pub mod prompting;
pub mod evaluation;
pub mod backends;
pub mod pipeline;

pub use scalar::Scalar;

/// Double-precision instantiations used by the pipeline.
pub type MetricSet = evaluation::MetricSet<f64>;
pub type IntervalEstimate = evaluation::IntervalEstimate<f64>;
pub type RunStats = evaluation::RunStats<f64>;
pub type ModelRanking = evaluation::ModelRanking<f64>;
pub type MetricRow = evaluation::MetricRow<f64>;
pub type ThemeDistribution = evaluation::ThemeDistribution<f64>;

pub type MetricSet32 = evaluation::MetricSet<f32>;
pub type IntervalEstimate32 = evaluation::IntervalEstimate<f32>;
pub type RunStats32 = evaluation::RunStats<f32>;
pub type ModelRanking32 = evaluation::ModelRanking<f32>;
pub type MetricRow32 = evaluation::MetricRow<f32>;
pub type ThemeDistribution32 = evaluation::ThemeDistribution<f32>;
