pub mod bikeshare;
pub mod synthetic;
