//! Runs the code blocks of the guide under `book/` as doc tests.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/operators.md")]
pub mod operators {}
#[doc = include_str!("../../../book/src/nonlinearities.md")]
pub mod nonlinearities {}
#[doc = include_str!("../../../book/src/profiles.md")]
pub mod profiles {}
#[doc = include_str!("../../../book/src/emden.md")]
pub mod emden {}
#[doc = include_str!("../../../book/src/analysis.md")]
pub mod analysis {}
#[doc = include_str!("../../../book/src/bifurcation.md")]
pub mod bifurcation {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
