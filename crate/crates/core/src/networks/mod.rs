//! Encoders, fusion, decoder, the two-branch generator and the PatchGAN
//! discriminator.

pub mod discriminator;
pub mod generator;
pub mod layers;

pub use discriminator::{crop_around, Discriminator, DiscriminatorConfig, DiscriminatorOutput};
pub use generator::{
    BranchMode, CombineMode, Decoder, Encoder, FusionNet, Generator, GeneratorConfig,
    GeneratorInput, GeneratorOutput,
};
pub use layers::ParamStore;
