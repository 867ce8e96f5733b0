// SPDX-License-Identifier: Apache-2.0

//! Line cards, their queues, and the PCI-e fabric between them.

mod card;
mod packet;
mod pcie;

pub use card::*;
pub use packet::*;
pub use pcie::*;
