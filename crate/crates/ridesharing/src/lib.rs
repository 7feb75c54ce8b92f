//! Real-time ridesharing dispatch: schedulers that absorb trip requests
//! into moving vehicles' plans without breaking waiting-time or detour
//! promises, plus the road-network, dispatch, and simulation machinery to
//! replay whole traces deterministically.
//!
//! The exact schedulers — exhaustive search, branch-and-bound, and the
//! kinetic tree in its plain and slack-filtered modes — return identical
//! answers on every instance; they differ only in how much work they do.
//! Hotspot clustering trades bounded optimality for immunity to clustered
//! request bursts, and the MIP generator emits the same problem as
//! solver-ready LP text.
//!
//! The guide under `book/` walks through the concepts; its code snippets
//! are compiled as doc-tests via [`book`].

pub mod bnb;
pub mod book;
pub mod brute_force;
pub mod cost;
pub mod dispatch;
pub mod instance;
pub mod ktree;
pub mod lru;
pub mod mip;
pub mod roadnet;
pub mod sim;
pub mod trips;
