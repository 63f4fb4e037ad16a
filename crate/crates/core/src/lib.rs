//! A small reinforcement-learning laboratory for interval timing under
//! dual-task interference.
//!
//! The crate contains a deterministic 5x3 cooking gridworld ([`env`]), a
//! recurrent actor-critic network with hand-written backpropagation through
//! time ([`net`]), a recurrent PPO trainer ([`train`]), and the two analysis
//! passes run on evaluation traces: behavioral timing metrics
//! ([`behavior`]) and hidden-state dynamics ([`neural`]). [`runner`] ties
//! them together into the `ovenlab` command line tool.
//!
//! The guide under `book/` walks through each piece; every code block in it
//! is compiled and run as a doctest of this crate.

pub mod behavior;
pub mod env;
mod error;
pub mod net;
pub mod neural;
pub mod runner;
pub mod seeding;
pub mod train;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    mod intro {}
    #[doc = include_str!("../../../book/src/environment.md")]
    mod environment {}
    #[doc = include_str!("../../../book/src/network.md")]
    mod network {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/behavior.md")]
    mod behavior {}
    #[doc = include_str!("../../../book/src/neural.md")]
    mod neural {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
