//! Architecture blocks shared by the three task models.

mod attention;
mod feedforward;
mod recurrent;

pub use attention::AttentionLayer;
pub use feedforward::{BatchNormLayer, Dense, FeedForwardHead, Mode};
pub use recurrent::{CellKind, CellState, Encoded, EncoderKind, FinalState, LstmCell, SequenceEncoder};
