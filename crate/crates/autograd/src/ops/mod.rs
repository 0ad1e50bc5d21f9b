pub(crate) mod conv;
pub(crate) mod elementwise;
pub(crate) mod fft;
pub(crate) mod linalg;
pub(crate) mod shape;
pub(crate) mod softmax;
pub(crate) mod sparse;
