//! NeighborEdit: edit-based non-autoregressive sequence generation that starts
//! decoding from a retrieved nearest-neighbor example.
//!
//! The crate is organised as a pipeline:
//!
//! * [`corpus`] turns pre-tokenized text into integer ids.
//! * [`edit_env`] is the canvas environment: delete, insert placeholders, fill.
//! * [`oracle`] derives expert edit actions and supervised training instances.
//! * [`retrieval`] builds the datastore and finds the neighbor used as the initial canvas.
//! * [`model`] is the encoder-decoder with its three policy heads and reverse-mode gradients.
//! * [`training`] runs the imitation-learning loop.
//! * [`inference`] runs iterative delete/insert decoding.
//! * [`evaluation`] holds BLEU, ChrF, bootstrap significance and similarity analysis.

pub mod corpus;
pub mod edit_env;
pub mod error;
pub mod evaluation;
pub mod inference;
pub mod model;
pub mod oracle;
pub mod retrieval;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};
