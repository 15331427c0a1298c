//! Synthetic handwritten-style forms: glyph rendering, form layout,
//! noise augmentation and the on-disk dataset format.

mod augment;
mod dataset;
mod form;
mod glyphs;
mod image;

pub use augment::{augment, flip_horizontal, flip_vertical, AugRanges, AugSpec, Flip, Morph};
pub use dataset::{read_dataset, write_dataset, MANIFEST};
pub use form::{
    compose_form, corpus_transcripts, Annotation, DistractorCounts, FormGenerator, FormSample,
    FormSpec, FORM_HEIGHT, FORM_WIDTH,
};
pub use glyphs::{render_label, render_word, WordStyle};
pub use image::GrayImage;
