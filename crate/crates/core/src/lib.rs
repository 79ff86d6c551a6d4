pub mod corpus;
pub mod encoder;
pub mod eval;
pub mod model;
pub mod schema;
pub mod tensor;
pub mod train;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/schemas.md")]
    struct Schemas;
    #[doc = include_str!("../../../book/src/models.md")]
    struct Models;
    #[doc = include_str!("../../../book/src/training.md")]
    struct Training;
}
