//! Exact-arithmetic toolkit for 1-minimal models of augmented cdgas, the bar
//! construction on them, truncated nilpotent Lie algebras with BCH, and the
//! monodromy of semistable log curves described by dual graphs.

pub mod bar;
pub mod cdga;
pub mod curve_monodromy;
pub mod exactlin;
pub mod minimal;
pub mod nilpotent_lie;
