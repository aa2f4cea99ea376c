pub mod direct_net;
pub mod gradcheck;
pub mod models;
