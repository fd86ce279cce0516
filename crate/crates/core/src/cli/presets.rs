//! Built-in chains and fractals addressable by name.

use crate::fractal::{self, GdifsSpec};
use crate::groups;
use crate::linalg::Mat;
use crate::markov::ChainSpec;

#[derive(Debug, Clone)]
pub enum PresetSpec {
    Chain(ChainSpec),
    Gdifs(GdifsSpec),
}

pub struct PresetInfo {
    pub name: &'static str,
    pub description: &'static str,
}

pub const PRESETS: &[PresetInfo] = &[
    PresetInfo { name: "sl3-example", description: "uniform i.i.d. walk on diag(3,2,1/6) and its two unipotent twists in SL_3" },
    PresetInfo { name: "block-two-state", description: "two-state block-matrix chain in SL_2, a -> b, b -> a|b with 1/2 each" },
    PresetInfo { name: "diag-2-half", description: "Dirac mass at diag(2, 1/2)" },
    PresetInfo { name: "diag-mixture", description: "fair mixture of diag(2, 1/2) and diag(1/2, 2)" },
    PresetInfo { name: "identity-2", description: "Dirac mass at the identity of SL_2" },
    PresetInfo { name: "renewal-two-state", description: "two-state chain with t-values (1, -0.2), a -> b, b -> a|b" },
    PresetInfo { name: "cantor-middle-thirds", description: "x/3 and x/3 + 2/3 on one vertex" },
    PresetInfo { name: "two-vertex-golden", description: "edges u->v, v->u, v->v of ratio 1/2" },
];

fn diag(a: f64, b: f64) -> Mat {
    Mat::from_row_slice(2, 2, &[a, 0.0, 0.0, b])
}

fn lazy_chain(names: [&str; 2], ga: Mat, gb: Mat) -> ChainSpec {
    ChainSpec {
        states: names.iter().map(|s| s.to_string()).collect(),
        trans: vec![vec![0.0, 0.5], vec![1.0, 0.5]],
        coding: vec![ga, gb],
        start: vec![0.0, 1.0],
    }
}

pub fn block_two_state() -> ChainSpec {
    let one = Mat::identity(1, 1);
    let a = groups::make_block_element(2.0, &one, &[0.0]).expect("valid block");
    let b = groups::make_block_element(3.0, &one, &[1.0]).expect("valid block");
    lazy_chain(["a", "b"], a, b)
}

pub fn renewal_two_state() -> ChainSpec {
    let mut c = lazy_chain(["a", "b"], groups::a_t(1, 1, 1.0), groups::a_t(1, 1, -0.2));
    c.start = vec![1.0, 0.0];
    c
}

pub fn sl3_chain() -> ChainSpec {
    let (g1, g2, g3) = groups::sl3_example();
    let mut c = ChainSpec::iid_uniform(vec![g1, g2, g3]);
    c.states = vec!["g1".into(), "g2".into(), "g3".into()];
    c
}

pub fn preset(name: &str) -> Option<PresetSpec> {
    Some(match name {
        "sl3-example" | "sl3-paper-example" => PresetSpec::Chain(sl3_chain()),
        "block-two-state" => PresetSpec::Chain(block_two_state()),
        "diag-2-half" => PresetSpec::Chain(ChainSpec::iid_uniform(vec![diag(2.0, 0.5)])),
        "diag-mixture" => PresetSpec::Chain(ChainSpec::iid_uniform(vec![diag(2.0, 0.5), diag(0.5, 2.0)])),
        "identity-2" => PresetSpec::Chain(ChainSpec::iid_uniform(vec![Mat::identity(2, 2)])),
        "renewal-two-state" => PresetSpec::Chain(renewal_two_state()),
        "cantor-middle-thirds" => PresetSpec::Gdifs(fractal::cantor_middle_thirds().spec().clone()),
        "two-vertex-golden" => PresetSpec::Gdifs(fractal::two_vertex_golden().spec().clone()),
        _ => return None,
    })
}
