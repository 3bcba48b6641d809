//! Weakly-supervised segmentation of angiography-like video.
//!
//! The pipeline bootstraps labels from low-level image processing and
//! optical flow, then trains progressively better networks on them:
//!
//! 1. [`morphology`]: black top-hat + threshold + connected-component filtering
//!    produce noisy binary vessel/catheter masks.
//! 2. [`optflow`]: pyramidal Horn–Schunck flow relates each frame to a
//!    pre-contrast reference frame.
//! 3. [`labelgen`]: the reference frame's mask is warped onto later frames;
//!    foreground that overlaps it is catheter, the rest is contrast-filled vessel.
//! 4. [`nnet`] / [`train`]: binary, multi-class and Siamese U-Nets are trained
//!    on those labels, each stage consuming the previous stage's output.
//! 5. [`eval`]: Dice scores against ground truth.
//!
//! [`synth`] generates sequences with exact ground truth so every stage can
//! be measured.

pub mod error;
pub mod eval;
pub mod image;
pub mod io;
pub mod labelgen;
pub mod morphology;
pub mod nnet;
pub mod optflow;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use image::{BinaryMask, FlowField, Frame, Label, LabelMask, ProbMask, Raster, Sequence};
