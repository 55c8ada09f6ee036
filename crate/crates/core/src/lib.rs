pub mod bench;
pub mod codec;
pub mod model;
pub mod comm;
pub mod consistency;
pub mod object;
pub mod store;
pub mod strategies;
pub mod workload;
