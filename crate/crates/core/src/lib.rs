pub mod cli;
pub mod datamodel;
pub mod distill;
pub mod numcore;
pub mod reportprep;
pub mod survstats;
pub mod synthgen;
pub mod tff;
