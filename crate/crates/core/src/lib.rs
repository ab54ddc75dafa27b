pub mod adversary;
pub mod ghz;
pub mod harness;
pub mod protocol;
pub mod statevec;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/state-vectors.md")]
    mod state_vectors {}
    #[doc = include_str!("../../../book/src/ghz-basis.md")]
    mod ghz_basis {}
    #[doc = include_str!("../../../book/src/protocol.md")]
    mod protocol {}
    #[doc = include_str!("../../../book/src/attacks.md")]
    mod attacks {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
