pub mod agent;
pub mod detect;
pub mod experience;
pub mod experiments;
pub mod guard;
pub mod inject;
pub mod runner;
pub mod scenario;
pub mod score;
pub mod sim;
pub mod stats;
pub mod tools;
