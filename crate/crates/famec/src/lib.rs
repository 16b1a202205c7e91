//! Fluid-antenna-assisted MEC offloading framework.
//!
//! The crate simulates an uplink where users offload computation tasks to an
//! edge server through a base station whose receivers are fluid antennas:
//! radiating elements that switch among candidate ports on a linear
//! aperture. Three subsystems cooperate to minimize the worst-case user
//! delay:
//!
//! * [`csnet`] — block compressed-sensing channel estimation whose sampling
//!   is steered by an information-bottleneck importance generator;
//! * [`game`] — a non-cooperative power-pricing game collapsing all transmit
//!   powers into one positive price factor;
//! * [`hitdma`] + [`agents`] — a two-layer multi-agent DRL scheme where
//!   discrete user agents pick antenna ports and continuous base-station
//!   agents handle beamforming, pricing, and MEC allocation.
//!
//! [`sysmodel`] holds the ground-truth physics, [`baselines`] the benchmark
//! schemes and brute-force oracles, and [`exp`] the experiment driver used
//! by the `famec` CLI.

pub mod agents;
pub mod baselines;
pub mod config;
pub mod csnet;
pub mod exp;
pub mod game;
pub mod hitdma;
pub mod io;
pub mod nn;
pub mod sysmodel;
pub(crate) mod util;

pub use config::{Config, CsiMode, ScenarioConfig, SinrConvention};
pub use sysmodel::{
    Apv, Beamformer, ChannelRealization, ControlDecision, DelayReport, PortGrid, PowerPolicy,
};
