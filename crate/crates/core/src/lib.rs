//! Language-driven tabletop manipulation: an instruction parser that maps
//! free text to sub-action sequences, and an execution stack made of a
//! radial-basis trajectory learner, a pinhole-camera scene analyzer, a PD
//! servo loop and a sub-action state machine.

pub mod control;
pub mod corpus;
pub mod datrn;
pub mod dmp;
pub mod embed;
pub mod executor;
pub mod seqmodel;
pub mod vision;
