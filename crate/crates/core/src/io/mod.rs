//! Configuration loading and field serialization.

mod config;
mod field;

pub use config::{load_config, parse_config, OutputOptions, RunConfig};
pub use field::{field_checksum, read_density, read_field, write_density, write_field, MANIFEST};
