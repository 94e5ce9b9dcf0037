//! Python source handling: lexing, parsing and structural queries.

pub mod lexer;
pub mod stdlib;
pub mod syntax;

pub use lexer::{count_tokens, LexError};
pub use syntax::{FunctionSite, PySource, SyntaxError};
