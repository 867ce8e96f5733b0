// SPDX-License-Identifier: Apache-2.0

//! Laboratory for a modular switch built from P4 line cards joined by a
//! PCI-e fabric.
//!
//! - [`p4ir`]: P4-subset program format and reference interpreter.
//! - [`xlate`]: per-card program translation and MAC-in-MAC encapsulation.
//! - [`sched`]: demand matrices and the priority-greedy max-weight matcher.
//! - [`switchcore`]: line cards, VOQs and the PCI-e fabric model.
//! - [`sim`]: slotted simulation engine, traffic and statistics.

pub mod bundled;
pub mod frame;
pub mod p4ir;
pub mod sched;
pub mod sim;
pub mod switchcore;
pub mod xlate;
