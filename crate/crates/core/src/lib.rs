pub mod corpus;
pub mod evalkit;
pub mod explain;
pub mod imgproc;
pub mod lungseg;
pub mod model;
pub mod nn;
pub mod phantom;
pub mod pipeline;
pub mod seed;
