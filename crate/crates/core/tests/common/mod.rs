//! Shared fixtures for the integration tests.
#![allow(dead_code)]

use ndarray::Array2;
use specden::phantom::{add_poisson, build_phase_maps, synthesize, PhantomSpec, SpectrumModel};
use specden::SpectrumImage;

pub struct Twins {
    pub spec: PhantomSpec,
    pub model: SpectrumModel,
    pub noisy: SpectrumImage,
    pub truth: SpectrumImage,
}

/// Default desk-scale phantom and its Poisson realization.
pub fn desk_twins(seed: u64) -> Twins {
    let mut spec = PhantomSpec::desk();
    spec.seed = seed;
    let model = SpectrumModel::default();
    let truth = synthesize(&spec, &model).expect("phantom");
    let noisy = add_poisson(&truth, seed).expect("poisson");
    Twins { spec, model, noisy, truth }
}

/// Per-pixel atomic fraction of `symbol` in the phantom.
pub fn element_fraction_map(spec: &PhantomSpec, symbol: &str) -> Array2<f64> {
    let maps = build_phase_maps(spec).expect("maps");
    let mut out = Array2::zeros((spec.rows, spec.cols));
    for (map, layer) in maps.iter().zip(&spec.layers) {
        out.scaled_add(layer.phase.fraction_of(symbol), map);
    }
    out
}

/// 2×2 block sums (odd trailing row/column dropped).
pub fn bin_map(map: &Array2<f64>) -> Array2<f64> {
    let (r, c) = (map.nrows() / 2, map.ncols() / 2);
    Array2::from_shape_fn((r, c), |(i, j)| {
        map[[2 * i, 2 * j]] + map[[2 * i + 1, 2 * j]] + map[[2 * i, 2 * j + 1]] + map[[2 * i + 1, 2 * j + 1]]
    })
}
