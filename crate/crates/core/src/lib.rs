pub mod cli;
pub mod corpus;
pub mod dataset;
pub mod eval;
pub mod lime;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod reference;
pub mod report;
pub mod text;
