//! Channel, traffic and queue dynamics.

pub mod channel;
pub mod config;
pub mod dynamics;

pub use channel::{sample_channel, ChannelMatrix, ChannelModel, UserBand};
pub use config::{
    AnchorMode, Exploration,
    ChannelSpec, DepartureModel, InitialMultipliers, QueueMode, SimConfig, TieBreak, UserParams, Utility,
};
pub use dynamics::{
    compute_rates, departure_probability, sample_arrivals, sample_packet_bits, slot_rng, spectral_efficiency,
    step_queues, AllocationDecision, QueueStep, SystemState,
};
