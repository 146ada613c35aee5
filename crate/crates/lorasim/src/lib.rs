//! Discrete-event simulator for a single-gateway LoRaWAN cell.
//!
//! The crate models Class-A end devices with confirmed and unconfirmed
//! traffic, EU868 duty-cycle budgets, a gateway with a limited pool of
//! per-frequency reception paths, the spreading-factor capture effect, and
//! the downlink policy knobs that shape acknowledgment behavior (TX/RX
//! prioritization, sub-band swapping, ACK data rate, retransmission limit,
//! full-duplex operation).
//!
//! Runs are deterministic: the same configuration and master seed produce
//! bit-identical outputs. Start from [`config::SimConfig`] and
//! [`campaign::run_replications`], or see the `examples/` directory for one
//! runnable program per major capability.

pub mod campaign;
pub mod channel;
pub mod config;
pub mod device;
pub mod engine;
pub mod gateway;
pub mod medium;
pub mod metrics;
pub mod netserver;
pub mod output;
pub mod phy;
pub mod region;
pub mod rng;
pub mod scenario;
pub mod time;
pub mod world;
