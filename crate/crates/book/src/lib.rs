//! The guide's chapters, compiled so that their code samples run as doc-tests.

#[doc = include_str!("../../../book/src/introduction.md")]
mod introduction {}

#[doc = include_str!("../../../book/src/connectivity.md")]
mod connectivity {}

#[doc = include_str!("../../../book/src/attacks.md")]
mod attacks {}

#[doc = include_str!("../../../book/src/operator-program.md")]
mod operator_program {}

#[doc = include_str!("../../../book/src/game.md")]
mod game {}

#[doc = include_str!("../../../book/src/scenarios.md")]
mod scenarios {}
