//! Fixtures shared by the criterion benches.

use endospec::dataset::SpectralStack;
use endospec::tensorcore::Tensor;

/// Deterministic values in `[-1, 1)` without pulling in an RNG.
pub fn tensor(shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|i| ((i * 37 + 11) % 101) as f32 / 50.5 - 1.0).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

pub fn rgb(width: usize, height: usize) -> SpectralStack {
    let data = (0..width * height * 3).map(|i| ((i * 53) % 251) as f32).collect();
    SpectralStack::new(width, height, vec![470.0, 540.0, 605.0], data).expect("valid stack")
}
