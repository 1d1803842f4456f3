//! Kept in its own binary: it mutates a process-wide environment variable.

#[test]
fn bad_thread_count_is_a_usage_error() {
    std::env::set_var(tree_opo::cli::THREADS_VAR, "zero");
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = tree_opo::cli::run(["tree-opo", "verify", "mc-baseline"], &mut out, &mut err);
    assert_eq!(code, 2);
    assert!(String::from_utf8(err).unwrap().contains(tree_opo::cli::THREADS_VAR));

    std::env::set_var(tree_opo::cli::THREADS_VAR, "2");
    let (mut out, mut err) = (Vec::new(), Vec::new());
    assert_eq!(tree_opo::cli::run(["tree-opo", "verify", "mc-baseline"], &mut out, &mut err), 0);
}
