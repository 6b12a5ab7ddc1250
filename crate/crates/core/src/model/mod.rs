//! The DeepNTL network: a shared RCAN (F1) for the two DMSP tiles, a
//! ResNet (F3) for the VIIRS reference, a ResNet (H*) over the annual
//! difference features, and a ResNet (G*) fusing both into the target
//! VIIRS tile.

mod checkpoint;
mod config;
mod net;
mod params;

pub use checkpoint::{load_checkpoint, load_checkpoint_file, save_checkpoint, save_checkpoint_file, NTLC_MAGIC, NTLC_VERSION};
pub use config::{ModelConfig, RcanConfig, ResNetConfig, Variant};
pub use net::{channel_attention, deepntl_forward, forward, linear_prototype_forward, rcan_forward, resnet_forward};
pub use params::{init_params, param_specs, ParamKind, ParamSpec, Params};
