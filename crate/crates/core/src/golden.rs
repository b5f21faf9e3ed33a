//! Direct loop-nest reference execution.
