//! Finite-difference checks of every differentiable operation: 100 random
//! trials each, relative error at most 1e-4.

use autodiff::gradcheck::{op_suite, MAX_REL_ERR, TRIALS};

fn case(name: &str) {
    let suite = op_suite();
    let case = suite.iter().find(|c| c.name == name).unwrap_or_else(|| panic!("no case {name}"));
    let worst = case.run(TRIALS);
    assert!(worst <= MAX_REL_ERR, "{name}: worst relative error {worst:.3e}");
}

macro_rules! gradient_tests {
    ($($name:ident),* $(,)?) => {
        $(#[test] fn $name() { case(stringify!($name)); })*

        #[test]
        fn every_suite_case_has_a_test() {
            let listed = [$(stringify!($name)),*];
            for c in op_suite() {
                assert!(listed.contains(&c.name), "{} is not tested", c.name);
            }
        }
    };
}

gradient_tests!(
    matmul,
    transpose,
    add_bias,
    conv1d_same,
    conv1d_same_per_example,
    conv1d_valid,
    maxpool1d,
    relu,
    sigmoid,
    tanh,
    dropout,
    embedding,
    embedding_conv1d_same,
    embedding_conv1d_same_per_example,
    reshape_concat,
    sum,
    mean,
    binary_cross_entropy,
    gru_final,
    gru_reverse,
    gru_sequence,
    gru_recurrent_dropout,
    bigru_final_states,
);
