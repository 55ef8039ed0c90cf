//! Hyperpartisan news-title detection with a human-in-the-loop labelling
//! cycle, plus the partisanship analyses built on its predictions.

pub mod active;
pub mod corpus;
pub mod error;
pub mod features;
pub mod fixture;
pub mod learners;
pub mod lexicon;
pub mod terms;
pub mod text_prep;
pub mod topics;
pub mod trends;

pub use error::{Error, Result};
