//! ndforge: an extensible N-dimensional image processing framework.
//!
//! A [`Context`] bundles plugin registrations, lazily created services and
//! runtime state. Everything else hangs off it: typed images
//! ([`ndimage`]), the op matcher and built-in ops ([`ops`]), scripted and
//! registered modules ([`modules`]), pluggable file formats ([`io`]), the
//! update-site manager ([`updater`]) and the command-line front end
//! ([`cli`]).

pub mod cli;
pub mod container;
pub mod convert;
pub mod defaults;
pub mod error;
pub mod io;
pub mod modules;
pub mod ndimage;
pub mod ops;
pub mod updater;
pub mod value;

pub use container::{Context, Event, PluginKind, PluginMetadata, Settings};
pub use error::{Error, Result};
pub use ndimage::{Axis, AxisType, Backing, BackingSpec, Dataset, NDImage, PixelType, Region};
pub use value::{Value, ValueType};
