pub mod numerics;
pub mod plant;
pub mod tracking;
pub mod lmi_ctrl;
pub mod smc;
pub mod bsc;
pub mod rls;
pub mod gpr;
pub mod bayes;
pub mod harness;
