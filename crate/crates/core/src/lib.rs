pub mod connector;
pub mod election;
pub mod experiments;
pub mod hash;
pub mod hostchain;
pub mod pow;
pub mod pulse_state;
pub mod wire;
