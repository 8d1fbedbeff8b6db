pub mod nn;
pub mod pomdp;
pub mod envs;
pub mod mappo;
pub mod lns;
pub mod bcd;
pub mod harness;
