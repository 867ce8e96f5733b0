// SPDX-License-Identifier: Apache-2.0

//! Switch-program to line-card-program translation.

mod distributed;
mod encap;
mod topology;
mod translate;

pub use distributed::{DistributedOutcome, DistributedSwitch, Path, RoutingError};
pub use encap::*;
pub use topology::*;
pub use translate::*;
