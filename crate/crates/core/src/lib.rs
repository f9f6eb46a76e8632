pub mod crypto;
pub mod ledger;
pub mod poc;
pub mod txpool;
pub mod vcf;
pub mod committee;
pub mod node;
pub mod trace;
pub mod netsim;
pub mod harness;
