//! Contour proposal network building blocks.
//!
//! Everything here is pure computation over in-memory values: Fourier
//! contour descriptors and their fitting, pixel geometry, local contour
//! refinement, non-maximum suppression, the training objectives, a tiny
//! reverse-mode autodiff engine, the toy network with its training loop,
//! a synthetic shape generator and the F1 evaluation. File formats, the
//! training driver and the command line live in the `cpn` crate.
//!
//! The crate is `no_std` and only needs `alloc`.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod autodiff;
pub mod data;
pub mod efd;
pub mod geometry;
pub mod loss;
pub mod math;
pub mod metrics;
pub mod model;
pub mod nms;
pub mod refine;

pub use efd::{FourierDescriptor, Point, Polyline};
pub use geometry::{BBox, Mask};
