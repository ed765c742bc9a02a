pub mod field_kernel;
pub mod jet;
pub mod domain_model;
pub mod foliation;
pub mod moser_normalizer;
pub mod deformation;
pub mod spec_file;
pub mod characterization;

pub use num_complex::Complex64 as C64;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub struct Introduction;
    #[doc = include_str!("../../../book/src/conventions.md")]
    pub struct Conventions;
    #[doc = include_str!("../../../book/src/domains.md")]
    pub struct Domains;
    #[doc = include_str!("../../../book/src/foliation.md")]
    pub struct Foliation;
    #[doc = include_str!("../../../book/src/normalization.md")]
    pub struct Normalization;
    #[doc = include_str!("../../../book/src/deformation.md")]
    pub struct Deformation;
    #[doc = include_str!("../../../book/src/characterization.md")]
    pub struct Characterization;
    #[doc = include_str!("../../../book/src/cli.md")]
    pub struct Cli;
}
