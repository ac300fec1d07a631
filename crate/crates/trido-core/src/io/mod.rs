//! Persistence: tensor files, dataset directories, grayscale previews.

pub mod dataset_io;
pub mod pgm;
pub mod tensorfile;
