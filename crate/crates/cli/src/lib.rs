//! Pipeline orchestration (bring-up placeholder).
