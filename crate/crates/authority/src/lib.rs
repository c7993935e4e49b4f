//! The authorities of a multi-domain vehicular PKI: LTCA, PCA, RA and the
//! directory, each usable as a library object, a wire service, or hosted
//! in process or over TCP.

mod authz;
pub mod config;
pub mod deploy;
pub mod directory;
pub mod ltca;
pub mod pca;
pub mod ra;
pub mod runtime;
pub mod tcp;

pub use deploy::{Deployment, DeploymentPlan, DeploymentSpec, DomainSpec, RuntimeConfig};
pub use directory::{Directory, Manifest};
pub use ltca::{Ltca, LtcaConfig};
pub use pca::{Pca, PcaConfig};
pub use ra::{Ra, RaConfig};
pub use runtime::{Balancer, EndpointConfig, LocalEndpoint};
