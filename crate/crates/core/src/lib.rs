pub mod backward;
pub mod costeval;
pub mod forward;
pub mod lq;
pub mod model;
pub mod randkit;
pub mod smp;
pub mod stats;
